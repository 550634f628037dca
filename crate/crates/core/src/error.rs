use thiserror::Error;

/// Errors produced by the codec library.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("non-finite value in {0}")]
    NonFinite(&'static str),

    #[error("mask column {column} is not monotone non-increasing")]
    NonMonotoneMask { column: usize },

    #[error("bad magic: expected {expected:?}")]
    BadMagic { expected: &'static str },

    #[error("truncated input: needed {needed} bytes, found {found}")]
    Truncated { needed: usize, found: usize },

    #[error("malformed data: {0}")]
    Malformed(String),

    #[error("index {index} does not fit in {bits} bits")]
    IndexOverflow { index: u32, bits: u32 },

    #[error("codebook count {count} outside 1..={max}")]
    CountOutOfRange { count: usize, max: usize },

    #[error("reserved count field value {0}")]
    ReservedCount(u32),

    #[error("training diverged at step {step}: loss = {loss}")]
    Divergence { step: usize, loss: f64 },

    #[error("config error: {0}")]
    Config(String),

    #[error("wav error: {0}")]
    Wav(#[from] hound::Error),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
