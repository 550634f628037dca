//! Network checkpoint file.
//!
//! ```text
//! offset  size  field
//! 0       8     magic "VRVQNET1"
//! 8       4     window       u32 LE
//! 12      4     hidden       u32 LE
//! 16      4     latent_dim   u32 LE
//! 20      4     sample_rate  u32 LE
//! 24      4     conv layers  u32 LE (L)
//! 28      4L    kernel size per conv, u32 LE
//! ...     4(L-1) output channels of every conv but the last, u32 LE
//! ...     ...   parameters as f32 LE in layout order:
//!               e1_w e1_b e2_w e2_b d1_w d1_b d2_w d2_b, then (w, b) per conv
//! ```

use super::{ModelConfig, ToyCodec};
use crate::container::{Reader, Writer};
use crate::error::{Error, Result};

pub const NETWORK_MAGIC: &[u8; 8] = b"VRVQNET1";

const MAX_DIM: u32 = 1 << 16;
const MAX_LAYERS: u32 = 64;

impl ToyCodec {
    pub fn to_bytes(&self) -> Vec<u8> {
        let c = &self.config;
        let mut w = Writer::new(NETWORK_MAGIC);
        w.u32(c.window as u32);
        w.u32(c.hidden as u32);
        w.u32(c.latent_dim as u32);
        w.u32(c.sample_rate);
        w.u32(c.ep_kernels.len() as u32);
        for k in &c.ep_kernels {
            w.u32(*k as u32);
        }
        for ch in &c.ep_channels {
            w.u32(*ch as u32);
        }
        w.f32s(&self.params);
        w.finish()
    }

    pub fn from_bytes(data: &[u8]) -> Result<Self> {
        let mut r = Reader::new(data, NETWORK_MAGIC, "VRVQNET1")?;
        let dim = |r: &mut Reader, what: &str| -> Result<usize> {
            let v = r.u32()?;
            if v == 0 || v > MAX_DIM {
                return Err(Error::Malformed(format!("{what} {v} out of range")));
            }
            Ok(v as usize)
        };
        let window = dim(&mut r, "window")?;
        let hidden = dim(&mut r, "hidden width")?;
        let latent_dim = dim(&mut r, "latent dimension")?;
        let sample_rate = r.u32()?;
        let layers = r.u32()?;
        if layers == 0 || layers > MAX_LAYERS {
            return Err(Error::Malformed(format!("{layers} importance layers")));
        }
        let ep_kernels = (0..layers).map(|_| dim(&mut r, "kernel")).collect::<Result<Vec<_>>>()?;
        let ep_channels = (1..layers).map(|_| dim(&mut r, "channel count")).collect::<Result<Vec<_>>>()?;
        let config = ModelConfig {
            window,
            hidden,
            latent_dim,
            sample_rate,
            ep_channels,
            ep_kernels,
        };
        config.validate().map_err(|e| Error::Malformed(e.to_string()))?;
        // dims are bounded by MAX_DIM, so the layout size fits in usize
        let total = super::Layout::new(&config).total;
        r.expect_f32_tail(total)?;
        let params = r.f32s(total)?;
        ToyCodec::from_params(config, params)
    }
}
