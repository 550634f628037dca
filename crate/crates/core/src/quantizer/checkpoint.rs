//! Codebook checkpoint file.
//!
//! ```text
//! offset  size  field
//! 0       8     magic "VRVQCBK1"
//! 8       4     n_q_max        u32 LE
//! 12      4     codebook_size  u32 LE
//! 16      4     code_dim       u32 LE
//! 20      4     latent_dim     u32 LE
//! 24      ...   in_proj   n_q_max x latent_dim x code_dim   f32 LE, row-major
//!               out_proj  n_q_max x latent_dim x code_dim   f32 LE, row-major
//!               codes     n_q_max x codebook_size x code_dim f32 LE, row-major
//! ```

use super::CodebookStack;
use crate::container::{Reader, Writer};
use crate::error::{Error, Result};

pub const CODEBOOK_MAGIC: &[u8; 8] = b"VRVQCBK1";

const MAX_STAGES: usize = 64;
const MAX_DIM: usize = 4096;
const MAX_CODEBOOK_BITS: u32 = 20;

impl CodebookStack {
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut w = Writer::new(CODEBOOK_MAGIC);
        w.u32(self.n_q as u32);
        w.u32(self.codebook_size as u32);
        w.u32(self.code_dim as u32);
        w.u32(self.latent_dim as u32);
        w.f32s(self.in_proj_raw());
        w.f32s(self.out_proj_raw());
        w.f32s(self.codes_raw());
        w.finish()
    }

    /// Parses a codebook checkpoint. Lookup normalization is not stored in
    /// the file and starts disabled.
    pub fn from_bytes(data: &[u8]) -> Result<Self> {
        let mut r = Reader::new(data, CODEBOOK_MAGIC, "VRVQCBK1")?;
        let n_q = r.u32()? as usize;
        let k = r.u32()? as usize;
        let code_dim = r.u32()? as usize;
        let latent_dim = r.u32()? as usize;
        if !(1..=MAX_STAGES).contains(&n_q)
            || !(1..=MAX_DIM).contains(&code_dim)
            || !(1..=MAX_DIM).contains(&latent_dim)
            || !k.is_power_of_two()
            || k < 2
            || k.trailing_zeros() > MAX_CODEBOOK_BITS
        {
            return Err(Error::Malformed(format!(
                "unsupported codebook shape n_q={n_q} K={k} code_dim={code_dim} latent_dim={latent_dim}"
            )));
        }
        let proj = n_q * latent_dim * code_dim;
        let codes = n_q * k * code_dim;
        r.expect_f32_tail(2 * proj + codes)?;
        let mut stack = CodebookStack::new(n_q, k, code_dim, latent_dim)?;
        stack.in_proj = r.f32s(proj)?;
        stack.out_proj = r.f32s(proj)?;
        stack.codes = r.f32s(codes)?;
        Ok(stack)
    }
}
