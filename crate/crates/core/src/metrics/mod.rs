//! Objective quality metrics used for rate-distortion evaluation.

mod rd;
mod spectral;

pub use rd::{rd_point, RdPoint};
pub use spectral::MultiScaleStft;

use crate::error::{Error, Result};

/// Scale-invariant SDR in dB, or `Perfect` when the residual vanishes.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum SiSdr {
    Db(f64),
    Perfect,
}

impl SiSdr {
    pub fn db(&self) -> Option<f64> {
        match self {
            Self::Db(v) => Some(*v),
            Self::Perfect => None,
        }
    }
}

impl std::fmt::Display for SiSdr {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Self::Db(v) => write!(f, "{v:.4}"),
            Self::Perfect => f.write_str("perfect"),
        }
    }
}

// Residual energy below this fraction of the target energy counts as zero.
const PERFECT_RATIO: f64 = 1e-24;

/// `10 log10(|a x|^2 / |a x - y|^2)` with `a = <y, x> / |x|^2`.
pub fn si_sdr(reference: &[f64], estimate: &[f64]) -> Result<SiSdr> {
    if reference.len() != estimate.len() {
        return Err(Error::ShapeMismatch(format!(
            "reference has {} samples, estimate {}",
            reference.len(),
            estimate.len()
        )));
    }
    let ref_energy: f64 = reference.iter().map(|x| x * x).sum();
    if ref_energy == 0.0 {
        return Err(Error::InvalidArgument("SI-SDR of a silent reference".into()));
    }
    let alpha = reference.iter().zip(estimate).map(|(x, y)| x * y).sum::<f64>() / ref_energy;
    let target = alpha * alpha * ref_energy;
    let residual: f64 = reference
        .iter()
        .zip(estimate)
        .map(|(x, y)| (alpha * x - y).powi(2))
        .sum();
    if residual <= PERFECT_RATIO * target {
        return Ok(SiSdr::Perfect);
    }
    Ok(SiSdr::Db(10.0 * (target / residual).log10()))
}

/// Mean absolute sample error.
pub fn waveform_l1(reference: &[f64], estimate: &[f64]) -> Result<f64> {
    if reference.len() != estimate.len() || reference.is_empty() {
        return Err(Error::ShapeMismatch("waveform L1 needs equal, non-empty signals".into()));
    }
    Ok(reference.iter().zip(estimate).map(|(a, b)| (a - b).abs()).sum::<f64>() / reference.len() as f64)
}

/// Multiscale magnitude-spectrum L1 with hop = window / 4.
pub fn spectral_l1(reference: &[f64], estimate: &[f64], windows: &[usize]) -> Result<f64> {
    MultiScaleStft::new(windows)?.loss(reference, estimate)
}

/// Per-item metrics of a reconstruction.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MetricReport {
    pub si_sdr: SiSdr,
    pub waveform_l1: f64,
    pub spectral_l1: f64,
    pub bitrate: f64,
}
