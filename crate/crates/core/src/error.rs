use alloc::string::String;

/// Errors raised by the simulator, the layer constructions and the planner.
#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    #[error("invalid parameters: {0}")]
    InvalidParams(String),
    #[error("input of length {len} does not fit in {slots} slots")]
    OversizedInput { len: usize, slots: usize },
    #[error("slot count mismatch: {left} vs {right}")]
    SlotMismatch { left: usize, right: usize },
    #[error("ciphertext level exhausted")]
    LevelExhausted,
    #[error("cannot drop to level {target}: ciphertext is at level {current}")]
    TargetAboveCurrent { current: u32, target: u32 },
    #[error("shape mismatch: expected {expected}, found {found}")]
    ShapeMismatch { expected: String, found: String },
    #[error("unknown builtin model `{0}`")]
    UnknownModel(String),
    #[error("invalid model: {0}")]
    InvalidModel(String),
    #[error("padded convolution is not executable")]
    PaddingUnsupported,
    #[error("pooling kernel {kernel} does not divide {width}x{height}")]
    NonDivisibleDims { kernel: usize, width: usize, height: usize },
    #[error("fully connected layer requires a flattened input")]
    NotFlattened,
    #[error("per-sample footprint {footprint} exceeds {slots} slots")]
    FootprintOverflow { footprint: usize, slots: usize },
    #[error("{samples} samples exceed batch capacity {capacity}")]
    CapacityExceeded { samples: usize, capacity: usize },
}

pub type Result<T> = core::result::Result<T, Error>;
