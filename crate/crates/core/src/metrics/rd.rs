use super::{si_sdr, waveform_l1, MultiScaleStft, SiSdr};
use crate::bitstream::bitrate;
use crate::error::{Error, Result};
use crate::model::{RateControl, ToyCodec};
use crate::quantizer::CodebookStack;

/// Corpus-level rate and distortion at one operating point.
#[derive(Debug, Clone, PartialEq)]
pub struct RdPoint {
    pub rate: RateControl,
    /// Payload bits per second, including the count field in VBR.
    pub bitrate: f64,
    pub mean_count: f64,
    /// Mean SI-SDR over items with a non-silent reference and a finite score.
    pub si_sdr_db: f64,
    /// Items that reconstructed perfectly; excluded from `si_sdr_db`.
    pub perfect: usize,
    /// Silent references; excluded from `si_sdr_db`.
    pub silent: usize,
    pub waveform_l1: f64,
    pub spectral_l1: f64,
}

impl RdPoint {
    pub fn kbps(&self) -> f64 {
        self.bitrate / 1000.0
    }
}

/// Encodes and decodes every corpus item at `rate` and averages the metrics.
/// Bitrate is frame-weighted, i.e. total payload bits over total duration.
pub fn rd_point(
    model: &ToyCodec,
    stack: &CodebookStack,
    corpus: &[Vec<f64>],
    rate: RateControl,
    stft: &MultiScaleStft,
) -> Result<RdPoint> {
    if corpus.is_empty() {
        return Err(Error::InvalidArgument("empty evaluation corpus".into()));
    }
    let frame_rate = model.config().frame_rate();
    let bits = stack.codebook_bits();
    let mut frames = 0usize;
    let mut rate_sum = 0.0;
    let mut count_sum = 0.0;
    let (mut sdr_sum, mut sdr_n, mut perfect, mut silent) = (0.0, 0usize, 0usize, 0usize);
    let (mut wl1, mut sl1) = (0.0, 0.0);
    for x in corpus {
        let (codes, _) = model.encode(x, stack, &rate)?;
        let y = model.decode(&codes, stack, Some(x.len()))?;
        let t = codes.len();
        frames += t;
        rate_sum += bitrate(&codes, bits, frame_rate, rate.stream_mode()) * t as f64;
        count_sum += codes.mean_count() * t as f64;
        if x.iter().all(|v| *v == 0.0) {
            silent += 1;
        } else {
            match si_sdr(x, &y)? {
                SiSdr::Db(v) => {
                    sdr_sum += v;
                    sdr_n += 1;
                }
                SiSdr::Perfect => perfect += 1,
            }
        }
        wl1 += waveform_l1(x, &y)?;
        sl1 += stft.loss(x, &y)?;
    }
    let n = corpus.len() as f64;
    Ok(RdPoint {
        rate,
        bitrate: rate_sum / frames as f64,
        mean_count: count_sum / frames as f64,
        si_sdr_db: if sdr_n > 0 { sdr_sum / sdr_n as f64 } else { f64::NAN },
        perfect,
        silent,
        waveform_l1: wl1 / n,
        spectral_l1: sl1 / n,
    })
}
