//! Multiscale STFT magnitude L1 and its gradient.

use std::f64::consts::PI;
use std::sync::Arc;

use rustfft::num_complex::Complex;
use rustfft::{Fft, FftPlanner};

use crate::error::{Error, Result};

struct Scale {
    size: usize,
    hop: usize,
    window: Vec<f64>,
    forward: Arc<dyn Fft<f64>>,
    inverse: Arc<dyn Fft<f64>>,
}

/// Sum over window sizes of the mean absolute difference between Hann-windowed
/// STFT magnitudes (bins `0..=N/2`, hop `N/4`, no padding).
pub struct MultiScaleStft {
    scales: Vec<Scale>,
}

impl std::fmt::Debug for MultiScaleStft {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("MultiScaleStft")
            .field("windows", &self.windows())
            .finish()
    }
}

impl MultiScaleStft {
    pub fn new(windows: &[usize]) -> Result<Self> {
        if windows.is_empty() {
            return Err(Error::InvalidArgument("no STFT windows given".into()));
        }
        let mut planner = FftPlanner::new();
        let scales = windows
            .iter()
            .map(|&n| {
                if !n.is_power_of_two() || n < 4 {
                    return Err(Error::InvalidArgument(format!(
                        "STFT window {n} is not a power of two >= 4"
                    )));
                }
                Ok(Scale {
                    size: n,
                    hop: n / 4,
                    // periodic Hann
                    window: (0..n).map(|i| 0.5 - 0.5 * (2.0 * PI * i as f64 / n as f64).cos()).collect(),
                    forward: planner.plan_fft_forward(n),
                    inverse: planner.plan_fft_inverse(n),
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self { scales })
    }

    pub fn windows(&self) -> Vec<usize> {
        self.scales.iter().map(|s| s.size).collect()
    }

    pub fn max_window(&self) -> usize {
        self.scales.iter().map(|s| s.size).max().unwrap_or(0)
    }

    fn check(&self, reference: &[f64], estimate: &[f64]) -> Result<()> {
        if reference.len() != estimate.len() {
            return Err(Error::ShapeMismatch(format!(
                "reference has {} samples, estimate {}",
                reference.len(),
                estimate.len()
            )));
        }
        if reference.len() < self.max_window() {
            return Err(Error::InvalidArgument(format!(
                "signal of {} samples is shorter than the {}-sample window",
                reference.len(),
                self.max_window()
            )));
        }
        Ok(())
    }

    fn spectrum(scale: &Scale, x: &[f64], start: usize) -> Vec<Complex<f64>> {
        let mut buf: Vec<Complex<f64>> = x[start..start + scale.size]
            .iter()
            .zip(&scale.window)
            .map(|(v, w)| Complex::new(v * w, 0.0))
            .collect();
        scale.forward.process(&mut buf);
        buf
    }

    fn frame_starts(scale: &Scale, len: usize) -> impl Iterator<Item = usize> {
        let hop = scale.hop;
        (0..=(len - scale.size) / hop).map(move |f| f * hop)
    }

    pub fn loss(&self, reference: &[f64], estimate: &[f64]) -> Result<f64> {
        self.check(reference, estimate)?;
        let mut total = 0.0;
        for scale in &self.scales {
            let bins = scale.size / 2 + 1;
            let mut sum = 0.0;
            let mut count = 0usize;
            for start in Self::frame_starts(scale, reference.len()) {
                let r = Self::spectrum(scale, reference, start);
                let e = Self::spectrum(scale, estimate, start);
                sum += r[..bins].iter().zip(&e[..bins]).map(|(a, b)| (a.norm() - b.norm()).abs()).sum::<f64>();
                count += bins;
            }
            total += sum / count as f64;
        }
        Ok(total)
    }

    /// Loss and its gradient with respect to `estimate`.
    pub fn loss_and_grad(&self, reference: &[f64], estimate: &[f64]) -> Result<(f64, Vec<f64>)> {
        self.check(reference, estimate)?;
        let mut total = 0.0;
        let mut grad = vec![0.0; estimate.len()];
        for scale in &self.scales {
            let bins = scale.size / 2 + 1;
            let starts: Vec<usize> = Self::frame_starts(scale, reference.len()).collect();
            let count = (starts.len() * bins) as f64;
            let mut sum = 0.0;
            for start in starts {
                let r = Self::spectrum(scale, reference, start);
                let e = Self::spectrum(scale, estimate, start);
                let mut coef = vec![Complex::new(0.0, 0.0); scale.size];
                for k in 0..bins {
                    let (mr, me) = (r[k].norm(), e[k].norm());
                    sum += (mr - me).abs();
                    let sign = if me > mr {
                        1.0
                    } else if me < mr {
                        -1.0
                    } else {
                        0.0
                    };
                    if me > 0.0 {
                        coef[k] = e[k] * (sign / (me * count));
                    }
                }
                // d|E_k|/dy_n = Re(u_k exp(+i 2 pi k n / N)), an unnormalized inverse DFT
                scale.inverse.process(&mut coef);
                for (n, c) in coef.iter().enumerate() {
                    grad[start + n] += c.re * scale.window[n];
                }
            }
            total += sum / count;
        }
        Ok((total, grad))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    // O(N^2) DFT magnitudes of a Hann-windowed frame.
    fn dft_mags(x: &[f64]) -> Vec<f64> {
        let n = x.len();
        (0..=n / 2)
            .map(|k| {
                let (mut re, mut im) = (0.0, 0.0);
                for (i, v) in x.iter().enumerate() {
                    let w = 0.5 - 0.5 * (2.0 * PI * i as f64 / n as f64).cos();
                    let th = -2.0 * PI * (k * i) as f64 / n as f64;
                    re += v * w * th.cos();
                    im += v * w * th.sin();
                }
                (re * re + im * im).sqrt()
            })
            .collect()
    }

    #[test]
    fn identical_and_negated_signals_have_zero_loss() {
        let stft = MultiScaleStft::new(&[64, 256]).unwrap();
        let x: Vec<f64> = (0..1000).map(|i| (i as f64 * 0.07).sin()).collect();
        assert_eq!(stft.loss(&x, &x).unwrap(), 0.0);
        let neg: Vec<f64> = x.iter().map(|v| -v).collect();
        assert!(stft.loss(&x, &neg).unwrap() < 1e-12);
    }

    #[test]
    fn sine_against_silence_matches_direct_dft() {
        let n = 64;
        let len = 160;
        let x: Vec<f64> = (0..len).map(|i| 0.7 * (2.0 * PI * 5.3 * i as f64 / n as f64).sin()).collect();
        let silence = vec![0.0; len];
        let stft = MultiScaleStft::new(&[n]).unwrap();
        let got = stft.loss(&x, &silence).unwrap();
        let hop = n / 4;
        let mut sum = 0.0;
        let mut count = 0;
        let mut start = 0;
        while start + n <= len {
            let m = dft_mags(&x[start..start + n]);
            sum += m.iter().sum::<f64>();
            count += m.len();
            start += hop;
        }
        assert!((got - sum / count as f64).abs() < 1e-9, "{got} vs {}", sum / count as f64);
    }

    #[test]
    fn phase_of_an_on_bin_tone_is_irrelevant() {
        // periodic Hann has no leakage beyond adjacent bins, so the
        // magnitudes of an on-bin tone do not depend on its phase
        let stft = MultiScaleStft::new(&[64]).unwrap();
        let f = 8.0 / 64.0;
        let a: Vec<f64> = (0..256).map(|i| (2.0 * PI * f * i as f64 + 0.4).cos()).collect();
        for phase in [1.3, 2.9, -0.7] {
            let b: Vec<f64> = (0..256).map(|i| (2.0 * PI * f * i as f64 + phase).cos()).collect();
            assert!(stft.loss(&a, &b).unwrap() < 1e-9);
        }
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let stft = MultiScaleStft::new(&[16, 32]).unwrap();
        let r: Vec<f64> = (0..96).map(|_| rng.random_range(-1.0..1.0)).collect();
        let e: Vec<f64> = (0..96).map(|_| rng.random_range(-1.0..1.0)).collect();
        let (l, g) = stft.loss_and_grad(&r, &e).unwrap();
        assert!((l - stft.loss(&r, &e).unwrap()).abs() < 1e-12);
        let h = 1e-6;
        for i in 0..96 {
            let mut p = e.clone();
            p[i] += h;
            let mut m = e.clone();
            m[i] -= h;
            let fd = (stft.loss(&r, &p).unwrap() - stft.loss(&r, &m).unwrap()) / (2.0 * h);
            assert!((fd - g[i]).abs() < 1e-6 * g[i].abs().max(1.0), "{i}: {fd} vs {}", g[i]);
        }
    }

    #[test]
    fn rejects_bad_input() {
        assert!(MultiScaleStft::new(&[]).is_err());
        assert!(MultiScaleStft::new(&[100]).is_err());
        let stft = MultiScaleStft::new(&[64]).unwrap();
        assert!(stft.loss(&[0.0; 32], &[0.0; 32]).is_err());
        assert!(stft.loss(&[0.0; 64], &[0.0; 65]).is_err());
    }
}
