//! Lowering of small CNNs (convolution, average pooling, square and
//! polynomial activations, flatten, dense layers) onto rotation and
//! slot-wise arithmetic over CKKS-style packed ciphertexts, without an
//! `im2col` rearrangement of the input.
//!
//! Ciphertexts are simulated exactly: a ciphertext is a vector of real slots
//! plus a remaining multiplicative level. The crate is `no_std` and needs
//! only `alloc`.

#![no_std]

extern crate alloc;

pub mod backend;
pub mod engine;
mod error;
pub mod layers;
pub mod model;
pub mod packing;

pub use backend::{CipherVector, Evaluator, HeParams, OpCounts, PlainVector};
pub use engine::{CostModel, Inference, OpMetrics, VerifyReport};
pub use error::{Error, Result};
pub use layers::{CipherState, LayoutState};
pub use model::{LayerSpec, ModelSpec, Shape, Tensor};
pub use packing::PackPlan;
