//! Homomorphic layer constructions over packed slot vectors.
//!
//! Every layer consumes a [`CipherState`] (one ciphertext per channel plus a
//! [`LayoutState`] describing where the valid values live) and produces the
//! next one. The layout transition is a pure function of the layer, so the
//! same code drives the runtime, the depth planner and the op-count model.

mod activation;
mod conv;
mod fc;
mod flatten;
mod pool;

pub use activation::{approx_relu, square};
pub use conv::conv;
pub use fc::{fc, fc_diagonals, FcGeometry};
pub use flatten::flatten;
pub use pool::avgpool;

use alloc::vec;
use alloc::vec::Vec;

use crate::backend::{CipherVector, Evaluator, OpCounts};
use crate::error::{Error, Result};
use crate::model::{LayerSpec, Shape};

/// Placement of the valid values of one packed sample.
///
/// Before flattening, element `(ch, r, c)` sits in ciphertext `ch` at
/// `offset + r * img_width * interval + c * interval`. After flattening
/// everything lives in a single ciphertext at
/// `offset + ch * width * height + r * width + c`.
#[derive(Debug, Clone, PartialEq)]
pub struct LayoutState {
    /// Slot distance between horizontally adjacent valid values (product of
    /// all conv strides and pool kernels so far).
    pub interval: usize,
    pub img_width: usize,
    pub img_height: usize,
    pub width: usize,
    pub height: usize,
    pub channels: usize,
    /// Multiplier owed by every valid value but not yet applied.
    pub pending: f64,
    /// True iff every non-valid slot is exactly zero.
    pub gaps_zero: bool,
    pub flattened: bool,
    pub offsets: Vec<usize>,
}

/// How the flatten layer extracts valid values before packing channels.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Extraction {
    /// Per-column masks that also apply the pending constant; needed when the
    /// gaps hold garbage or a constant is still owed.
    Masked,
    /// Rotate-and-accumulate then block masks; valid only for zero gaps.
    RowInterval,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct FlattenPlan {
    pub extraction: Option<Extraction>,
    pub remove_columns: bool,
}

impl FlattenPlan {
    pub fn mults(&self) -> u32 {
        u32::from(self.extraction.is_some()) + u32::from(self.remove_columns)
    }
}

impl LayoutState {
    /// Freshly encrypted input: row-major, interval 1, clean gaps.
    pub fn input(shape: Shape, offsets: Vec<usize>) -> Self {
        Self {
            interval: 1,
            img_width: shape.width,
            img_height: shape.height,
            width: shape.width,
            height: shape.height,
            channels: shape.channels,
            pending: 1.0,
            gaps_zero: true,
            flattened: false,
            offsets,
        }
    }

    pub fn shape(&self) -> Shape {
        Shape {
            channels: self.channels,
            height: self.height,
            width: self.width,
        }
    }

    /// Ciphertext index and slot of logical element `(ch, r, c)` of `sample`.
    pub fn slot(&self, sample: usize, ch: usize, r: usize, c: usize) -> (usize, usize) {
        let base = self.offsets[sample];
        if self.flattened {
            (
                0,
                base + ch * self.width * self.height + r * self.width + c,
            )
        } else {
            (
                ch,
                base + r * self.img_width * self.interval + c * self.interval,
            )
        }
    }

    /// Slots of every valid element of one channel across all samples,
    /// in sample-major then row-major order.
    pub fn valid_slots(&self) -> Vec<usize> {
        let mut out = Vec::with_capacity(self.offsets.len() * self.width * self.height);
        for s in 0..self.offsets.len() {
            for r in 0..self.height {
                for c in 0..self.width {
                    out.push(self.slot(s, 0, r, c).1);
                }
            }
        }
        out
    }

    /// Logical values of one sample read out of decrypted slot vectors,
    /// with the pending constant applied; `ch`-major, row-major.
    pub fn read_sample(&self, decrypted: &[Vec<f64>], sample: usize) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.channels * self.width * self.height);
        for ch in 0..self.channels {
            for r in 0..self.height {
                for c in 0..self.width {
                    let (ct, slot) = self.slot(sample, ch, r, c);
                    out.push(decrypted[ct][slot] * self.pending);
                }
            }
        }
        out
    }

    /// Highest slot (exclusive, relative to the sample offset) that holds a
    /// valid value.
    pub fn extent(&self) -> usize {
        if self.width == 0 || self.height == 0 || self.channels == 0 {
            return 0;
        }
        if self.flattened {
            self.channels * self.width * self.height
        } else {
            (self.height - 1) * self.img_width * self.interval
                + (self.width - 1) * self.interval
                + 1
        }
    }

    pub fn flatten_plan(&self) -> FlattenPlan {
        let extraction = if !self.gaps_zero || self.pending != 1.0 {
            Some(Extraction::Masked)
        } else if self.interval > 1 && self.width > 1 {
            Some(Extraction::RowInterval)
        } else {
            None
        };
        FlattenPlan {
            extraction,
            remove_columns: self.height > 1,
        }
    }

    /// Layout after `layer`, without touching any ciphertext.
    pub fn advance(&self, layer: &LayerSpec) -> Result<LayoutState> {
        let mut next = self.clone();
        match layer {
            LayerSpec::Conv(conv) => {
                if self.flattened {
                    return Err(Error::InvalidModel("convolution after flatten".into()));
                }
                if conv.padding != 0 {
                    return Err(Error::PaddingUnsupported);
                }
                let out = conv.output_shape(self.shape())?;
                next.width = out.width;
                next.height = out.height;
                next.channels = out.channels;
                next.interval = self.interval * conv.stride;
                next.pending = 1.0;
                next.gaps_zero = true;
            }
            LayerSpec::AvgPool2d { kernel } => {
                if self.flattened {
                    return Err(Error::InvalidModel("pooling after flatten".into()));
                }
                let c = *kernel;
                if c == 0 || !self.width.is_multiple_of(c) || !self.height.is_multiple_of(c) {
                    return Err(Error::NonDivisibleDims {
                        kernel: c,
                        width: self.width,
                        height: self.height,
                    });
                }
                next.width = self.width / c;
                next.height = self.height / c;
                next.interval = self.interval * c;
                next.pending = self.pending / (c * c) as f64;
                next.gaps_zero = false;
            }
            LayerSpec::Square => {
                next.pending = self.pending * self.pending;
            }
            LayerSpec::ApproxRelu(_) => {
                next.pending = 1.0;
                next.gaps_zero = false;
            }
            LayerSpec::Flatten => {
                if self.flattened {
                    return Err(Error::InvalidModel("second flatten".into()));
                }
                next.width = self.channels * self.width * self.height;
                next.height = 1;
                next.channels = 1;
                next.interval = 1;
                next.pending = 1.0;
                next.gaps_zero = true;
                next.flattened = true;
            }
            LayerSpec::Fc(fc) => {
                if !self.flattened {
                    return Err(Error::NotFlattened);
                }
                if fc.dat_in != self.width {
                    return Err(Error::ShapeMismatch {
                        expected: alloc::format!("{} inputs", fc.dat_in),
                        found: alloc::format!("{} values", self.width),
                    });
                }
                next.width = fc.dat_out;
                next.pending = 1.0;
                next.gaps_zero = false;
            }
        }
        Ok(next)
    }

    /// Levels consumed by `layer` when applied to this layout.
    pub fn level_cost(&self, layer: &LayerSpec) -> u32 {
        match layer {
            LayerSpec::Conv(_) | LayerSpec::Square | LayerSpec::Fc(_) => 1,
            LayerSpec::ApproxRelu(_) => 2,
            LayerSpec::AvgPool2d { .. } => 0,
            LayerSpec::Flatten => self.flatten_plan().mults(),
        }
    }

    /// Primitive counts the construction of `layer` issues on this layout.
    pub fn expected_counts(&self, layer: &LayerSpec) -> OpCounts {
        let ch = self.channels as u64;
        match layer {
            LayerSpec::Conv(conv) => {
                let taps = (conv.kernel_rows() * conv.kernel) as u64;
                let ch_in = conv.ch_in as u64;
                let ch_out = conv.ch_out as u64;
                OpCounts {
                    rotations: ch_in * taps,
                    pt_mults: ch_in * ch_out * taps,
                    ct_mults: 0,
                    adds: ch_out * ch_in * taps,
                }
            }
            LayerSpec::AvgPool2d { kernel } => {
                let taps = (kernel * kernel) as u64;
                OpCounts {
                    rotations: ch * taps,
                    adds: ch * (taps - 1),
                    ..OpCounts::default()
                }
            }
            LayerSpec::Square => OpCounts {
                ct_mults: ch,
                ..OpCounts::default()
            },
            LayerSpec::ApproxRelu(_) => OpCounts {
                ct_mults: ch,
                pt_mults: 2 * ch,
                adds: 2 * ch,
                ..OpCounts::default()
            },
            LayerSpec::Flatten => flatten::expected_counts(self),
            LayerSpec::Fc(layer) => {
                let g = FcGeometry::new(layer.dat_in, layer.dat_out);
                let m = g.dat_out as u64;
                let q = g.folds as u64;
                OpCounts {
                    rotations: 2 * m + q,
                    pt_mults: 2 * m,
                    ct_mults: 0,
                    adds: 2 * m + q + 1,
                }
            }
        }
    }
}

/// The ciphertexts of one (possibly batched) inference and their layout.
#[derive(Debug, Clone)]
pub struct CipherState {
    pub cts: Vec<CipherVector>,
    pub layout: LayoutState,
}

impl CipherState {
    pub fn new(cts: Vec<CipherVector>, layout: LayoutState) -> Result<Self> {
        let expected = if layout.flattened { 1 } else { layout.channels };
        if cts.len() != expected {
            return Err(Error::ShapeMismatch {
                expected: alloc::format!("{expected} ciphertexts"),
                found: alloc::format!("{}", cts.len()),
            });
        }
        if let Some(first) = cts.first() {
            if cts.iter().any(|c| c.level() != first.level()) {
                return Err(Error::InvalidModel(
                    "ciphertexts of one state must share a level".into(),
                ));
            }
        }
        Ok(Self { cts, layout })
    }

    pub fn level(&self) -> u32 {
        self.cts.first().map_or(0, CipherVector::level)
    }

    pub fn decrypt(&self, ev: &Evaluator) -> Vec<Vec<f64>> {
        self.cts.iter().map(|c| ev.decrypt(c)).collect()
    }
}

/// Multiply every ciphertext by an all-ones plaintext until it reaches `target`.
pub fn drop_level(ev: &mut Evaluator, state: &CipherState, target: u32) -> Result<CipherState> {
    let current = state.level();
    if target > current {
        return Err(Error::TargetAboveCurrent { current, target });
    }
    let ones = ev.encode_constant(1.0);
    let mut cts = state.cts.clone();
    for _ in target..current {
        for ct in cts.iter_mut() {
            *ct = ev.mul_plain(ct, &ones)?;
        }
    }
    Ok(CipherState {
        cts,
        layout: state.layout.clone(),
    })
}

/// Apply one layer.
pub fn apply(ev: &mut Evaluator, state: &CipherState, layer: &LayerSpec) -> Result<CipherState> {
    match layer {
        LayerSpec::Conv(c) => conv(ev, state, c),
        LayerSpec::AvgPool2d { kernel } => avgpool(ev, state, *kernel),
        LayerSpec::Square => square(ev, state),
        LayerSpec::ApproxRelu(coeffs) => approx_relu(ev, state, coeffs),
        LayerSpec::Flatten => flatten(ev, state),
        LayerSpec::Fc(f) => fc(ev, state, f),
    }
}

/// Zero vector with `value` written at each of `slots`.
pub(crate) fn scatter(len: usize, slots: &[usize], value: f64) -> Vec<f64> {
    let mut v = vec![0.0; len];
    for &s in slots {
        v[s] = value;
    }
    v
}

#[cfg(test)]
mod tests;
