//! Little-endian helpers shared by the checkpoint formats.

use crate::error::{Error, Result};

pub(crate) struct Writer {
    buf: Vec<u8>,
}

impl Writer {
    pub fn new(magic: &[u8; 8]) -> Self {
        Self { buf: magic.to_vec() }
    }

    pub fn u32(&mut self, v: u32) {
        self.buf.extend_from_slice(&v.to_le_bytes());
    }

    pub fn f32s(&mut self, values: &[f64]) {
        for v in values {
            self.buf.extend_from_slice(&(*v as f32).to_le_bytes());
        }
    }

    pub fn finish(self) -> Vec<u8> {
        self.buf
    }
}

pub(crate) struct Reader<'a> {
    data: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    pub fn new(data: &'a [u8], magic: &'static [u8; 8], name: &'static str) -> Result<Self> {
        if data.len() < 8 {
            return Err(Error::Truncated {
                needed: 8,
                found: data.len(),
            });
        }
        if &data[..8] != magic {
            return Err(Error::BadMagic { expected: name });
        }
        Ok(Self { data, pos: 8 })
    }

    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).ok_or_else(|| Error::Malformed("length overflow".into()))?;
        if end > self.data.len() {
            return Err(Error::Truncated {
                needed: end,
                found: self.data.len(),
            });
        }
        let s = &self.data[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    pub fn u32(&mut self) -> Result<u32> {
        let b = self.take(4)?;
        Ok(u32::from_le_bytes([b[0], b[1], b[2], b[3]]))
    }

    /// Checks that exactly `count` f32 values remain before reading any of them.
    pub fn expect_f32_tail(&self, count: usize) -> Result<()> {
        let needed = count
            .checked_mul(4)
            .and_then(|n| n.checked_add(self.pos))
            .ok_or_else(|| Error::Malformed("length overflow".into()))?;
        match needed.cmp(&self.data.len()) {
            std::cmp::Ordering::Greater => Err(Error::Truncated {
                needed,
                found: self.data.len(),
            }),
            std::cmp::Ordering::Less => Err(Error::Malformed(format!(
                "{} trailing bytes",
                self.data.len() - needed
            ))),
            std::cmp::Ordering::Equal => Ok(()),
        }
    }

    pub fn f32s(&mut self, count: usize) -> Result<Vec<f64>> {
        let bytes = self.take(count * 4)?;
        let out: Vec<f64> = bytes
            .chunks_exact(4)
            .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]) as f64)
            .collect();
        if out.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("checkpoint parameters"));
        }
        Ok(out)
    }
}
