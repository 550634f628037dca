//! Variable-bitrate residual vector quantization.

pub mod bitstream;
pub mod cli;
mod container;
pub mod error;
pub mod importance;
pub mod metrics;
pub mod model;
pub mod quantizer;
pub mod train;

pub use error::{Error, Result};
