//! Importance map to codebook mask conversion.
//!
//! A per-frame importance value `p` in (0, 1) is scaled to `s = S(p)` and
//! compared against the stage thresholds `k = 0 .. n_q - 1`. Stage `k` is
//! active when `k <= s`, so stage 0 is always active and the mask of each
//! frame is a prefix of ones.
//!
//! The hard comparison has no useful derivative, so training uses a
//! straight-through estimator: the forward pass keeps the binary mask while
//! the backward pass uses the Jacobian of a surrogate (saturated identity or
//! the log-cosh relaxation).

use rand::Rng;

use crate::error::{Error, Result};

/// A scalar value together with its derivative.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ValueGrad {
    pub value: f64,
    pub grad: f64,
}

/// Per-frame importance values, each strictly inside (0, 1).
#[derive(Debug, Clone, PartialEq)]
pub struct ImportanceMap {
    values: Vec<f64>,
}

impl ImportanceMap {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if let Some((t, v)) = values
            .iter()
            .enumerate()
            .find(|(_, v)| !(v.is_finite() && **v > 0.0 && **v < 1.0))
        {
            return Err(Error::InvalidArgument(format!(
                "importance value {v} at frame {t} is outside (0, 1)"
            )));
        }
        Ok(Self { values })
    }

    /// Constant map, mostly useful in tests.
    pub fn constant(value: f64, frames: usize) -> Result<Self> {
        Self::new(vec![value; frames])
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }
}

/// Binary `n_q x T` mask. Column `t` lists which stages frame `t` uses.
///
/// Every column is a prefix of ones of length at least one.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct CodeMask {
    n_q: usize,
    frames: usize,
    // column-major: bits[t * n_q + i]
    bits: Vec<bool>,
}

impl CodeMask {
    /// Builds a mask from per-frame columns, validating monotonicity.
    pub fn from_columns(n_q: usize, columns: &[Vec<bool>]) -> Result<Self> {
        let mut bits = Vec::with_capacity(n_q * columns.len());
        for (t, col) in columns.iter().enumerate() {
            if col.len() != n_q {
                return Err(Error::ShapeMismatch(format!(
                    "mask column {t} has {} rows, expected {n_q}",
                    col.len()
                )));
            }
            bits.extend_from_slice(col);
        }
        let mask = Self {
            n_q,
            frames: columns.len(),
            bits,
        };
        mask.validate()?;
        Ok(mask)
    }

    /// Mask using the first `counts[t]` stages in frame `t`.
    pub fn from_counts(n_q: usize, counts: &[usize]) -> Result<Self> {
        let mut bits = Vec::with_capacity(n_q * counts.len());
        for &c in counts {
            if c == 0 || c > n_q {
                return Err(Error::CountOutOfRange { count: c, max: n_q });
            }
            bits.extend((0..n_q).map(|i| i < c));
        }
        Ok(Self {
            n_q,
            frames: counts.len(),
            bits,
        })
    }

    /// Every stage active in every frame.
    pub fn all_ones(n_q: usize, frames: usize) -> Self {
        Self {
            n_q,
            frames,
            bits: vec![true; n_q * frames],
        }
    }

    /// Constant-bitrate mask: first `n_active` stages everywhere.
    pub fn first_n(n_q: usize, frames: usize, n_active: usize) -> Result<Self> {
        Self::from_counts(n_q, &vec![n_active; frames])
    }

    fn validate(&self) -> Result<()> {
        for t in 0..self.frames {
            let col = self.column(t);
            if !col.first().copied().unwrap_or(true) || col.windows(2).any(|w| !w[0] && w[1]) {
                return Err(Error::NonMonotoneMask { column: t });
            }
        }
        Ok(())
    }

    pub fn n_q(&self) -> usize {
        self.n_q
    }

    pub fn frames(&self) -> usize {
        self.frames
    }

    pub fn get(&self, stage: usize, frame: usize) -> bool {
        self.bits[frame * self.n_q + stage]
    }

    pub fn column(&self, frame: usize) -> &[bool] {
        &self.bits[frame * self.n_q..(frame + 1) * self.n_q]
    }

    /// Number of active stages per frame.
    pub fn counts(&self) -> Vec<usize> {
        (0..self.frames)
            .map(|t| self.column(t).iter().filter(|b| **b).count())
            .collect()
    }

    pub fn mean_count(&self) -> f64 {
        if self.frames == 0 {
            return 0.0;
        }
        self.counts().iter().sum::<usize>() as f64 / self.frames as f64
    }
}

/// Which surrogate replaces the step function in the backward pass.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum SurrogateSpec {
    /// Saturated identity `clamp(s - k, 0, 1)`.
    Identity,
    /// Log-cosh relaxation with sharpness `alpha`.
    Smooth { alpha: f64 },
}

impl SurrogateSpec {
    pub fn smooth(alpha: f64) -> Result<Self> {
        if !(alpha.is_finite() && alpha > 0.0) {
            return Err(Error::InvalidArgument(format!(
                "surrogate alpha must be positive, got {alpha}"
            )));
        }
        Ok(Self::Smooth { alpha })
    }

    pub fn eval(&self, s: f64, k: usize) -> ValueGrad {
        match *self {
            Self::Identity => surrogate_identity(s, k),
            Self::Smooth { alpha } => smooth_unchecked(s, k, alpha),
        }
    }
}

/// How an importance value is mapped to the threshold axis.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ScalingSpec {
    /// `l * p`
    Linear { l: f64 },
    /// `n_q * p^gamma`
    Exponential { gamma: f64 },
    /// Piecewise linear with a breakpoint at `1 / (gamma + 1)`.
    Transformed { gamma: f64 },
}

impl ScalingSpec {
    pub fn linear(l: f64) -> Result<Self> {
        check_positive("scale factor l", l)?;
        Ok(Self::Linear { l })
    }

    pub fn exponential(gamma: f64) -> Result<Self> {
        check_positive("gamma", gamma)?;
        Ok(Self::Exponential { gamma })
    }

    pub fn transformed(gamma: f64) -> Result<Self> {
        check_positive("gamma", gamma)?;
        Ok(Self::Transformed { gamma })
    }

    /// Scaled value and its derivative with respect to `p`.
    pub fn apply(&self, p: f64, n_q: usize) -> Result<ValueGrad> {
        if !(p > 0.0 && p < 1.0) {
            return Err(Error::InvalidArgument(format!(
                "importance value {p} is outside (0, 1)"
            )));
        }
        let nq = n_q as f64;
        let out = match *self {
            Self::Linear { l } => ValueGrad {
                value: l * p,
                grad: l,
            },
            Self::Exponential { gamma } => ValueGrad {
                value: nq * p.powf(gamma),
                grad: nq * gamma * p.powf(gamma - 1.0),
            },
            Self::Transformed { gamma } => {
                if p <= 1.0 / (gamma + 1.0) {
                    ValueGrad {
                        value: nq * gamma * p,
                        grad: nq * gamma,
                    }
                } else {
                    ValueGrad {
                        value: nq / gamma * (p + gamma - 1.0),
                        grad: nq / gamma,
                    }
                }
            }
        };
        Ok(out)
    }
}

fn check_positive(name: &str, v: f64) -> Result<()> {
    if v.is_finite() && v > 0.0 {
        Ok(())
    } else {
        Err(Error::InvalidArgument(format!("{name} must be positive, got {v}")))
    }
}

/// Stage activity for a scaled importance `s`: entry `k` is set iff `k <= s`.
pub fn heaviside_mask(s: f64, n_q: usize) -> Vec<bool> {
    (0..n_q).map(|k| k as f64 <= s).collect()
}

/// Saturated identity `clamp(s - k, 0, 1)`. The derivative is 1 on the open
/// interval `(k, k + 1)` and 0 elsewhere, including both kinks.
pub fn surrogate_identity(s: f64, k: usize) -> ValueGrad {
    let x = s - k as f64;
    ValueGrad {
        value: x.clamp(0.0, 1.0),
        grad: if x > 0.0 && x < 1.0 { 1.0 } else { 0.0 },
    }
}

/// `log(cosh(x))` without overflow for large `|x|`.
pub fn log_cosh(x: f64) -> f64 {
    let a = x.abs();
    a + (-2.0 * a).exp().ln_1p() - std::f64::consts::LN_2
}

/// Log-cosh relaxation of the saturated identity:
/// `(1 / 2a) * log(cosh(a(s - k)) / cosh(a(k + 1 - s))) + 1/2`.
pub fn surrogate_smooth(s: f64, k: usize, alpha: f64) -> Result<ValueGrad> {
    check_positive("surrogate alpha", alpha)?;
    Ok(smooth_unchecked(s, k, alpha))
}

fn smooth_unchecked(s: f64, k: usize, alpha: f64) -> ValueGrad {
    let x = s - k as f64;
    let lo = alpha * x;
    let hi = alpha * (1.0 - x);
    let tail = |v: f64| (-2.0 * v.abs()).exp().ln_1p();
    ValueGrad {
        // log_cosh(lo) - log_cosh(hi) with the |lo| - |hi| part taken exactly
        value: x.clamp(0.0, 1.0) + (tail(lo) - tail(hi)) / (2.0 * alpha),
        // tanh(lo) + tanh(hi) = sinh(alpha) / (cosh(lo) cosh(hi))
        grad: 0.5 * (ln_sinh(alpha) - log_cosh(lo) - log_cosh(hi)).exp(),
    }
}

fn ln_sinh(x: f64) -> f64 {
    x + (-(-2.0 * x).exp()).ln_1p() - std::f64::consts::LN_2
}

/// Converts an importance map to a binary stage mask.
pub fn i2m(p: &ImportanceMap, spec: &ScalingSpec, n_q: usize) -> Result<CodeMask> {
    let mut bits = Vec::with_capacity(n_q * p.len());
    for &v in p.values() {
        let s = spec.apply(v, n_q)?.value;
        bits.extend(heaviside_mask(s, n_q));
    }
    Ok(CodeMask {
        n_q,
        frames: p.len(),
        bits,
    })
}

/// Relaxed mask values with their derivatives with respect to `p[t]`.
///
/// Both matrices are column-major with `n_q` rows per frame.
#[derive(Debug, Clone, PartialEq)]
pub struct SoftMask {
    pub n_q: usize,
    pub values: Vec<f64>,
    pub jacobian: Vec<f64>,
}

impl SoftMask {
    pub fn value(&self, stage: usize, frame: usize) -> f64 {
        self.values[frame * self.n_q + stage]
    }

    pub fn derivative(&self, stage: usize, frame: usize) -> f64 {
        self.jacobian[frame * self.n_q + stage]
    }

    pub fn frames(&self) -> usize {
        self.values.len() / self.n_q.max(1)
    }
}

pub fn i2m_soft(
    p: &ImportanceMap,
    spec: &ScalingSpec,
    surrogate: &SurrogateSpec,
    n_q: usize,
) -> Result<SoftMask> {
    let mut values = Vec::with_capacity(n_q * p.len());
    let mut jacobian = Vec::with_capacity(n_q * p.len());
    for &v in p.values() {
        let s = spec.apply(v, n_q)?;
        for k in 0..n_q {
            let f = surrogate.eval(s.value, k);
            values.push(f.value);
            jacobian.push(f.grad * s.grad);
        }
    }
    Ok(SoftMask {
        n_q,
        values,
        jacobian,
    })
}

/// Straight-through mask: binary forward, surrogate Jacobian backward.
#[derive(Debug, Clone, PartialEq)]
pub struct SteMask {
    pub forward: CodeMask,
    pub soft: SoftMask,
}

impl SteMask {
    /// Gradient of a loss with respect to `p`, given the loss gradient with
    /// respect to each mask entry (column-major, `n_q` rows per frame).
    pub fn backward(&self, mask_grad: &[f64]) -> Vec<f64> {
        let n_q = self.soft.n_q;
        mask_grad
            .chunks(n_q)
            .zip(self.soft.jacobian.chunks(n_q))
            .map(|(g, j)| g.iter().zip(j).map(|(a, b)| a * b).sum())
            .collect()
    }
}

pub fn i2m_ste(
    p: &ImportanceMap,
    spec: &ScalingSpec,
    surrogate: &SurrogateSpec,
    n_q: usize,
) -> Result<SteMask> {
    Ok(SteMask {
        forward: i2m(p, spec, n_q)?,
        soft: i2m_soft(p, spec, surrogate, n_q)?,
    })
}

/// Mean importance, the differentiable proxy for bitrate. Its derivative
/// with respect to each `p[t]` is `1 / T`.
pub fn rate_loss(p: &ImportanceMap) -> Result<f64> {
    if p.is_empty() {
        return Err(Error::InvalidArgument("rate loss of an empty map".into()));
    }
    Ok(p.values().iter().sum::<f64>() / p.len() as f64)
}

/// Draws `l ~ U([l_min, l_max])` and returns the linear scaling it defines.
pub fn sample_scale<R: Rng + ?Sized>(rng: &mut R, l_min: f64, l_max: f64) -> Result<ScalingSpec> {
    if !(l_min > 0.0 && l_max > l_min && l_max.is_finite()) {
        return Err(Error::InvalidArgument(format!(
            "scale bounds must satisfy 0 < l_min < l_max, got [{l_min}, {l_max}]"
        )));
    }
    Ok(ScalingSpec::Linear {
        l: rng.random_range(l_min..=l_max),
    })
}

/// Draws `gamma` with `log(gamma)` uniform on `[log lo, log hi]`.
pub fn sample_gamma<R: Rng + ?Sized>(rng: &mut R, lo: f64, hi: f64) -> Result<f64> {
    if !(lo > 0.0 && hi > lo && hi.is_finite()) {
        return Err(Error::InvalidArgument(format!(
            "gamma bounds must satisfy 0 < lo < hi, got [{lo}, {hi}]"
        )));
    }
    Ok(rng.random_range(lo.ln()..=hi.ln()).exp())
}
