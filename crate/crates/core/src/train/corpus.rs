//! Synthetic training audio: frame-aligned spans of sinusoid mixtures,
//! low-passed noise and exact digital silence.

use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

const MIN_SPAN: usize = 2;
const MAX_SPAN: usize = 6;
// Frame-rate harmonics available to tonal spans.
const HARMONICS: [usize; 4] = [3, 5, 8, 12];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum FrameLabel {
    Silence,
    Tonal,
    Noise,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Segment {
    pub samples: Vec<f64>,
    /// One label per frame.
    pub labels: Vec<FrameLabel>,
}

/// Deterministic segment generator; segment `i` depends only on `(seed, i)`.
#[derive(Debug, Clone, PartialEq)]
pub struct SynthCorpus {
    seed: u64,
    frames: usize,
    window: usize,
    sample_rate: u32,
    silence_fraction: f64,
}

impl SynthCorpus {
    /// `frames` frames of `window` samples per segment.
    pub fn new(seed: u64, frames: usize, window: usize, sample_rate: u32, silence_fraction: f64) -> Result<Self> {
        if !(0.0..1.0).contains(&silence_fraction) {
            return Err(Error::InvalidArgument(format!(
                "silence fraction {silence_fraction} is outside [0, 1)"
            )));
        }
        if frames == 0 || window == 0 || sample_rate == 0 {
            return Err(Error::InvalidArgument("empty synthetic segments".into()));
        }
        Ok(Self {
            seed,
            frames,
            window,
            sample_rate,
            silence_fraction,
        })
    }

    pub fn segment_len(&self) -> usize {
        self.frames * self.window
    }

    pub fn segment(&self, index: u64) -> Segment {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(index);
        let mut samples = Vec::with_capacity(self.segment_len());
        let mut labels = Vec::with_capacity(self.frames);
        while labels.len() < self.frames {
            let span = rng.random_range(MIN_SPAN..=MAX_SPAN).min(self.frames - labels.len());
            let n = span * self.window;
            let label = if rng.random_bool(self.silence_fraction) {
                samples.extend(std::iter::repeat_n(0.0, n));
                FrameLabel::Silence
            } else if rng.random_bool(0.6) {
                samples.extend(self.tonal(&mut rng, n));
                FrameLabel::Tonal
            } else {
                samples.extend(noise(&mut rng, n));
                FrameLabel::Noise
            };
            labels.extend(std::iter::repeat_n(label, span));
        }
        Segment { samples, labels }
    }

    pub fn segments(&self, start: u64, count: usize) -> Vec<Segment> {
        (start..start + count as u64).map(|i| self.segment(i)).collect()
    }

    // Partials sit on harmonics of the frame rate, so every frame of a span
    // holds whole periods and the span repeats frame by frame.
    fn tonal(&self, rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
        let partials = rng.random_range(1..=3);
        let peak = rng.random_range(0.2..0.9);
        let usable: Vec<usize> = HARMONICS.iter().copied().filter(|k| 2 * k < self.window).collect();
        let tones: Vec<(f64, f64, f64)> = (0..partials)
            .map(|_| {
                let k = if usable.is_empty() { 1.0 } else { usable[rng.random_range(0..usable.len())] as f64 };
                (k / self.window as f64, rng.random_range(0.3..1.0), rng.random_range(0.0..2.0 * PI))
            })
            .collect();
        let norm: f64 = tones.iter().map(|t| t.1).sum();
        (0..n)
            .map(|i| {
                peak / norm
                    * tones
                        .iter()
                        .map(|(f, a, ph)| a * (2.0 * PI * f * i as f64 + ph).sin())
                        .sum::<f64>()
            })
            .collect()
    }
}

fn noise(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    let gain = rng.random_range(0.05..0.5);
    let pole: f64 = rng.random_range(0.0..0.95);
    // undo the variance loss of the one-pole filter
    let makeup = ((1.0 + pole) / (1.0 - pole)).sqrt();
    let mut y = 0.0;
    (0..n)
        .map(|_| {
            y = pole * y + (1.0 - pole) * rng.random_range(-1.0..1.0);
            (gain * makeup * y).clamp(-1.0, 1.0)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn silence_fraction_is_respected() {
        let c = SynthCorpus::new(3, 16, 64, 8000, 0.5).unwrap();
        let (mut zeros, mut total) = (0usize, 0usize);
        for s in c.segments(0, 100) {
            zeros += s.samples.iter().filter(|v| **v == 0.0).count();
            total += s.samples.len();
        }
        let f = zeros as f64 / total as f64;
        assert!((f - 0.5).abs() <= 0.05, "{f}");
    }

    #[test]
    fn no_silent_frames_without_silence() {
        let c = SynthCorpus::new(5, 16, 64, 8000, 0.0).unwrap();
        for s in c.segments(0, 50) {
            assert!(s.labels.iter().all(|l| *l != FrameLabel::Silence));
            assert!(s.samples.chunks(64).all(|f| f.iter().any(|v| *v != 0.0)));
        }
    }

    #[test]
    fn labels_match_samples() {
        let c = SynthCorpus::new(9, 16, 32, 8000, 0.4).unwrap();
        for s in c.segments(0, 20) {
            assert_eq!(s.labels.len(), 16);
            assert_eq!(s.samples.len(), 16 * 32);
            assert!(s.samples.iter().all(|v| (-1.0..=1.0).contains(v)));
            for (f, l) in s.samples.chunks(32).zip(&s.labels) {
                assert_eq!(f.iter().all(|v| *v == 0.0), *l == FrameLabel::Silence);
            }
        }
    }

    #[test]
    fn deterministic_per_index() {
        let a = SynthCorpus::new(1, 8, 16, 8000, 0.3).unwrap();
        let b = SynthCorpus::new(1, 8, 16, 8000, 0.3).unwrap();
        assert_eq!(a.segment(17), b.segment(17));
        assert_ne!(a.segment(17), a.segment(18));
        assert!(SynthCorpus::new(1, 8, 16, 8000, 1.0).is_err());
        assert!(SynthCorpus::new(1, 8, 16, 8000, -0.1).is_err());
    }
}
