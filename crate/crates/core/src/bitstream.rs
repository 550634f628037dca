//! Variable-bitrate stream format.
//!
//! A stream is a fixed little-endian header followed by a bit-packed payload.
//! Payload fields are written most-significant bit first. In VBR mode each
//! frame starts with a `ceil(log2(n_q_max))`-bit field holding `n_q - 1`,
//! followed by `n_q` index fields of `codebook_bits` bits each. CBR frames
//! carry only the index fields. The payload is zero-padded to a byte
//! boundary once, at the end of the stream. See `docs/format.md`.

use crate::error::{Error, Result};
use crate::quantizer::FrameCodes;

pub const STREAM_MAGIC: &[u8; 8] = b"VRVQ0001";
/// Bytes before the extension block.
pub const FIXED_HEADER_LEN: usize = 26;

pub const EXT_CHECKPOINT_HASH: u8 = 1;
pub const EXT_CONFIG_HASH: u8 = 2;
pub const EXT_SAMPLE_COUNT: u8 = 3;

const MAX_STAGES: usize = 64;
const MAX_CODEBOOK_BITS: u32 = 24;

/// Rate mode of a stream.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Mode {
    Vbr,
    /// Every frame uses the first `n` stages; no count field is sent.
    Cbr(usize),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct StreamHeader {
    pub sample_rate: u32,
    pub hop: u32,
    pub n_q_max: usize,
    pub codebook_bits: u32,
    pub mode: Mode,
    pub frame_count: usize,
    /// Tagged extension records, kept in order.
    pub extensions: Vec<(u8, Vec<u8>)>,
}

impl StreamHeader {
    pub fn new(sample_rate: u32, hop: u32, n_q_max: usize, codebook_bits: u32, mode: Mode) -> Self {
        Self {
            sample_rate,
            hop,
            n_q_max,
            codebook_bits,
            mode,
            frame_count: 0,
            extensions: Vec::new(),
        }
    }

    pub fn frame_rate(&self) -> f64 {
        self.sample_rate as f64 / self.hop as f64
    }

    pub fn extension(&self, tag: u8) -> Option<&[u8]> {
        self.extensions.iter().find(|(t, _)| *t == tag).map(|(_, v)| v.as_slice())
    }

    pub fn set_extension(&mut self, tag: u8, value: Vec<u8>) {
        match self.extensions.iter_mut().find(|(t, _)| *t == tag) {
            Some(slot) => slot.1 = value,
            None => self.extensions.push((tag, value)),
        }
    }

    pub fn sample_count(&self) -> Option<u64> {
        let v = self.extension(EXT_SAMPLE_COUNT)?;
        Some(u64::from_le_bytes(v.try_into().ok()?))
    }

    fn validate(&self) -> Result<()> {
        if self.sample_rate == 0 || self.hop == 0 {
            return Err(Error::Malformed("sample rate and hop must be non-zero".into()));
        }
        if !(1..=MAX_STAGES).contains(&self.n_q_max) {
            return Err(Error::Malformed(format!("n_q_max {} unsupported", self.n_q_max)));
        }
        if !(1..=MAX_CODEBOOK_BITS).contains(&self.codebook_bits) {
            return Err(Error::Malformed(format!(
                "codebook_bits {} unsupported",
                self.codebook_bits
            )));
        }
        if let Mode::Cbr(n) = self.mode {
            if n == 0 || n > self.n_q_max {
                return Err(Error::CountOutOfRange {
                    count: n,
                    max: self.n_q_max,
                });
            }
        }
        if u32::try_from(self.frame_count).is_err() {
            return Err(Error::Malformed("frame count exceeds 32 bits".into()));
        }
        Ok(())
    }
}

/// Width of the per-frame count field.
pub fn count_bits(n_q_max: usize) -> u32 {
    if n_q_max <= 1 {
        0
    } else {
        usize::BITS - (n_q_max - 1).leading_zeros()
    }
}

/// MSB-first bit writer.
#[derive(Debug, Default)]
pub struct BitWriter {
    buf: Vec<u8>,
    bits: u64,
}

impl BitWriter {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn write(&mut self, value: u32, width: u32) {
        for i in (0..width).rev() {
            if self.bits % 8 == 0 {
                self.buf.push(0);
            }
            if (value >> i) & 1 == 1 {
                let last = self.buf.len() - 1;
                self.buf[last] |= 0x80 >> (self.bits % 8);
            }
            self.bits += 1;
        }
    }

    pub fn bit_len(&self) -> u64 {
        self.bits
    }

    pub fn into_bytes(self) -> Vec<u8> {
        self.buf
    }
}

/// MSB-first bit reader that reports truncation instead of padding.
#[derive(Debug)]
pub struct BitReader<'a> {
    data: &'a [u8],
    pos: u64,
}

impl<'a> BitReader<'a> {
    pub fn new(data: &'a [u8]) -> Self {
        Self { data, pos: 0 }
    }

    pub fn remaining(&self) -> u64 {
        self.data.len() as u64 * 8 - self.pos
    }

    pub fn read(&mut self, width: u32) -> Result<u32> {
        if self.remaining() < width as u64 {
            return Err(Error::Truncated {
                needed: (self.pos + width as u64).div_ceil(8) as usize,
                found: self.data.len(),
            });
        }
        let mut v = 0u32;
        for _ in 0..width {
            let byte = self.data[(self.pos / 8) as usize];
            let bit = (byte >> (7 - self.pos % 8)) & 1;
            v = (v << 1) | bit as u32;
            self.pos += 1;
        }
        Ok(v)
    }

    pub fn position(&self) -> u64 {
        self.pos
    }
}

/// Payload size in bits, before end padding.
pub fn payload_bits(codes: &FrameCodes, codebook_bits: u32, mode: Mode) -> u64 {
    let side = match mode {
        Mode::Vbr => count_bits(codes.n_q_max()) as u64,
        Mode::Cbr(_) => 0,
    };
    codes
        .frames()
        .iter()
        .map(|f| side + f.len() as u64 * codebook_bits as u64)
        .sum()
}

/// Serializes frames. `header.frame_count` is taken from `frames`.
pub fn pack(frames: &FrameCodes, header: &StreamHeader) -> Result<Vec<u8>> {
    let mut header = header.clone();
    header.frame_count = frames.len();
    header.validate()?;
    if frames.n_q_max() != header.n_q_max {
        return Err(Error::ShapeMismatch(format!(
            "frames use n_q_max {}, header says {}",
            frames.n_q_max(),
            header.n_q_max
        )));
    }

    let mut out = Vec::new();
    out.extend_from_slice(STREAM_MAGIC);
    out.extend_from_slice(&header.sample_rate.to_le_bytes());
    out.extend_from_slice(&header.hop.to_le_bytes());
    out.push(header.n_q_max as u8);
    out.push(header.codebook_bits as u8);
    let (mode_byte, n_byte) = match header.mode {
        Mode::Vbr => (0u8, 0u8),
        Mode::Cbr(n) => (1, n as u8),
    };
    out.push(mode_byte);
    out.push(n_byte);
    out.extend_from_slice(&(header.frame_count as u32).to_le_bytes());
    let mut ext = Vec::new();
    for (tag, value) in &header.extensions {
        let len = u8::try_from(value.len())
            .map_err(|_| Error::InvalidArgument(format!("extension {tag} longer than 255 bytes")))?;
        ext.push(*tag);
        ext.push(len);
        ext.extend_from_slice(value);
    }
    let ext_len = u16::try_from(ext.len())
        .map_err(|_| Error::InvalidArgument("extension block too long".into()))?;
    out.extend_from_slice(&ext_len.to_le_bytes());
    out.extend(ext);

    let cb = count_bits(header.n_q_max);
    let limit = 1u64 << header.codebook_bits;
    let mut w = BitWriter::new();
    for f in frames.frames() {
        match header.mode {
            Mode::Vbr => w.write(f.len() as u32 - 1, cb),
            Mode::Cbr(n) => {
                if f.len() != n {
                    return Err(Error::CountOutOfRange {
                        count: f.len(),
                        max: n,
                    });
                }
            }
        }
        for &idx in f {
            if idx as u64 >= limit {
                return Err(Error::IndexOverflow {
                    index: idx,
                    bits: header.codebook_bits,
                });
            }
            w.write(idx, header.codebook_bits);
        }
    }
    out.extend(w.into_bytes());
    Ok(out)
}

fn le_u32(b: &[u8]) -> u32 {
    u32::from_le_bytes([b[0], b[1], b[2], b[3]])
}

/// Parses the header, returning it and the offset of the payload.
pub fn parse_header(bytes: &[u8]) -> Result<(StreamHeader, usize)> {
    if bytes.len() < 8 {
        return Err(Error::Truncated {
            needed: FIXED_HEADER_LEN,
            found: bytes.len(),
        });
    }
    if &bytes[..8] != STREAM_MAGIC {
        return Err(Error::BadMagic { expected: "VRVQ0001" });
    }
    if bytes.len() < FIXED_HEADER_LEN {
        return Err(Error::Truncated {
            needed: FIXED_HEADER_LEN,
            found: bytes.len(),
        });
    }
    let n_q_max = bytes[16] as usize;
    let mode = match (bytes[18], bytes[19]) {
        (0, 0) => Mode::Vbr,
        (1, n) => Mode::Cbr(n as usize),
        (m, n) => return Err(Error::Malformed(format!("unknown mode bytes {m}, {n}"))),
    };
    let ext_len = u16::from_le_bytes([bytes[24], bytes[25]]) as usize;
    let ext_end = FIXED_HEADER_LEN + ext_len;
    if bytes.len() < ext_end {
        return Err(Error::Truncated {
            needed: ext_end,
            found: bytes.len(),
        });
    }
    let mut extensions = Vec::new();
    let mut ext = &bytes[FIXED_HEADER_LEN..ext_end];
    while !ext.is_empty() {
        if ext.len() < 2 || ext.len() < 2 + ext[1] as usize {
            return Err(Error::Malformed("truncated extension record".into()));
        }
        let len = ext[1] as usize;
        extensions.push((ext[0], ext[2..2 + len].to_vec()));
        ext = &ext[2 + len..];
    }
    let header = StreamHeader {
        sample_rate: le_u32(&bytes[8..12]),
        hop: le_u32(&bytes[12..16]),
        n_q_max,
        codebook_bits: bytes[17] as u32,
        mode,
        frame_count: le_u32(&bytes[20..24]) as usize,
        extensions,
    };
    header.validate()?;
    Ok((header, ext_end))
}

/// Exact inverse of [`pack`]. Rejects truncated payloads, trailing bytes,
/// non-zero padding and reserved count values.
pub fn unpack(bytes: &[u8]) -> Result<(StreamHeader, FrameCodes)> {
    let (header, offset) = parse_header(bytes)?;
    let payload = &bytes[offset..];
    let cb = count_bits(header.n_q_max);
    let (side, min_stages) = match header.mode {
        Mode::Vbr => (cb, 1),
        Mode::Cbr(n) => (0, n),
    };
    let min_frame_bits = side as u64 + header.codebook_bits as u64 * min_stages as u64;
    let min_bits = min_frame_bits * header.frame_count as u64;
    if min_bits > payload.len() as u64 * 8 {
        return Err(Error::Truncated {
            needed: offset + min_bits.div_ceil(8) as usize,
            found: bytes.len(),
        });
    }

    let mut r = BitReader::new(payload);
    let mut frames = Vec::with_capacity(header.frame_count);
    for _ in 0..header.frame_count {
        let n = match header.mode {
            Mode::Vbr => {
                let c = r.read(cb)?;
                if c as usize >= header.n_q_max {
                    return Err(Error::ReservedCount(c));
                }
                c as usize + 1
            }
            Mode::Cbr(n) => n,
        };
        let mut f = Vec::with_capacity(n);
        for _ in 0..n {
            f.push(r.read(header.codebook_bits)?);
        }
        frames.push(f);
    }
    let used = r.position();
    let expected_len = used.div_ceil(8) as usize;
    if payload.len() != expected_len {
        return Err(Error::Malformed(format!(
            "{} trailing payload bytes",
            payload.len() - expected_len
        )));
    }
    if used % 8 != 0 && r.read((8 - used % 8) as u32)? != 0 {
        return Err(Error::Malformed("non-zero padding bits".into()));
    }
    Ok((header.clone(), FrameCodes::new(header.n_q_max, frames)?))
}

/// Bits per second of an encoding, excluding the header.
///
/// VBR charges the count field on every frame; CBR charges only the indices
/// of its `n` stages.
pub fn bitrate(codes: &FrameCodes, codebook_bits: u32, frame_rate: f64, mode: Mode) -> f64 {
    match mode {
        Mode::Vbr => {
            frame_rate * (count_bits(codes.n_q_max()) as f64 + codebook_bits as f64 * codes.mean_count())
        }
        Mode::Cbr(n) => frame_rate * codebook_bits as f64 * n as f64,
    }
}

/// Cost of the VBR count field alone.
pub fn side_channel_bitrate(n_q_max: usize, frame_rate: f64) -> f64 {
    frame_rate * count_bits(n_q_max) as f64
}

#[cfg(test)]
mod tests {
    use super::*;

    fn header(mode: Mode) -> StreamHeader {
        StreamHeader::new(44100, 512, 8, 10, mode)
    }

    #[test]
    fn count_field_widths() {
        assert_eq!(count_bits(1), 0);
        assert_eq!(count_bits(2), 1);
        assert_eq!(count_bits(5), 3);
        assert_eq!(count_bits(8), 3);
        assert_eq!(count_bits(9), 4);
        assert_eq!(count_bits(16), 4);
    }

    #[test]
    fn single_frame_vbr_layout() {
        let codes = FrameCodes::new(8, vec![vec![0]]).unwrap();
        let bytes = pack(&codes, &header(Mode::Vbr)).unwrap();
        // 3-bit count "000" then 10-bit index, padded with 3 zero bits
        assert_eq!(&bytes[FIXED_HEADER_LEN..], &[0, 0]);
        assert_eq!(payload_bits(&codes, 10, Mode::Vbr), 13);

        let codes = FrameCodes::new(8, vec![vec![0x3FF, 1]]).unwrap();
        let bytes = pack(&codes, &header(Mode::Vbr)).unwrap();
        // 001 1111111111 0000000001 + 1 zero pad bit
        assert_eq!(&bytes[FIXED_HEADER_LEN..], &[0b0011_1111, 0b1111_1000, 0b0000_0010]);
    }

    #[test]
    fn cbr_frame_has_no_count_field() {
        let codes = FrameCodes::new(8, vec![vec![5; 8]]).unwrap();
        let bytes = pack(&codes, &header(Mode::Cbr(8))).unwrap();
        assert_eq!(bytes.len() - FIXED_HEADER_LEN, 10);
        assert_eq!(payload_bits(&codes, 10, Mode::Cbr(8)), 80);
    }

    #[test]
    fn empty_stream_is_header_only() {
        let codes = FrameCodes::new(8, vec![]).unwrap();
        let bytes = pack(&codes, &header(Mode::Vbr)).unwrap();
        assert_eq!(bytes.len(), FIXED_HEADER_LEN);
        let (h, back) = unpack(&bytes).unwrap();
        assert_eq!(h.frame_count, 0);
        assert!(back.is_empty());
    }

    #[test]
    fn header_fields_round_trip() {
        let mut h = header(Mode::Cbr(3));
        h.set_extension(EXT_SAMPLE_COUNT, 12345u64.to_le_bytes().to_vec());
        h.set_extension(EXT_CHECKPOINT_HASH, vec![7; 32]);
        let codes = FrameCodes::new(8, vec![vec![1, 2, 3], vec![4, 5, 6]]).unwrap();
        let bytes = pack(&codes, &h).unwrap();
        let (back, c) = unpack(&bytes).unwrap();
        assert_eq!(back.frame_count, 2);
        assert_eq!(back.sample_count(), Some(12345));
        assert_eq!(back.extension(EXT_CHECKPOINT_HASH), Some(&[7u8; 32][..]));
        assert_eq!(back.mode, Mode::Cbr(3));
        assert_eq!(c, codes);
    }

    #[test]
    fn pack_errors() {
        let h = header(Mode::Vbr);
        let over = FrameCodes::new(8, vec![vec![1024]]).unwrap();
        assert!(matches!(pack(&over, &h), Err(Error::IndexOverflow { .. })));
        let wrong_cbr = FrameCodes::new(8, vec![vec![1, 2]]).unwrap();
        assert!(pack(&wrong_cbr, &header(Mode::Cbr(3))).is_err());
        let wrong_nq = FrameCodes::new(4, vec![vec![1]]).unwrap();
        assert!(pack(&wrong_nq, &h).is_err());
        assert!(pack(&FrameCodes::new(8, vec![]).unwrap(), &header(Mode::Cbr(9))).is_err());
    }

    #[test]
    fn unpack_errors() {
        let codes = FrameCodes::new(8, vec![vec![3, 4, 5], vec![6]]).unwrap();
        let bytes = pack(&codes, &header(Mode::Vbr)).unwrap();
        for cut in 0..bytes.len() {
            assert!(unpack(&bytes[..cut]).is_err(), "prefix {cut} accepted");
        }
        let mut bad = bytes.clone();
        bad[3] = b'X';
        assert!(matches!(unpack(&bad), Err(Error::BadMagic { .. })));
        let mut trailing = bytes.clone();
        trailing.push(0);
        assert!(unpack(&trailing).is_err());
        let mut pad = bytes.clone();
        *pad.last_mut().unwrap() |= 1;
        assert!(unpack(&pad).is_err());
    }

    #[test]
    fn reserved_count_is_rejected() {
        // n_q_max = 5 leaves count values 5..7 unused in a 3-bit field
        let h = StreamHeader::new(44100, 512, 5, 4, Mode::Vbr);
        let codes = FrameCodes::new(5, vec![vec![1]]).unwrap();
        let mut bytes = pack(&codes, &h).unwrap();
        bytes[FIXED_HEADER_LEN] |= 0b1110_0000;
        assert!(matches!(unpack(&bytes), Err(Error::ReservedCount(7))));
    }

    #[test]
    fn huge_frame_count_fails_fast() {
        let codes = FrameCodes::new(8, vec![vec![1]]).unwrap();
        let mut bytes = pack(&codes, &header(Mode::Vbr)).unwrap();
        bytes[20..24].copy_from_slice(&u32::MAX.to_le_bytes());
        assert!(matches!(unpack(&bytes), Err(Error::Truncated { .. })));
    }

    #[test]
    fn bitrate_examples() {
        let fr = 44100.0 / 512.0;
        let side = side_channel_bitrate(8, fr);
        assert!((side - 258.398_437_5).abs() < 1e-9);
        assert!((side / 1000.0 - 0.258).abs() < 0.001);
        let all8 = FrameCodes::new(8, vec![vec![0; 8]; 10]).unwrap();
        let cbr = bitrate(&all8, 10, fr, Mode::Cbr(8));
        assert!((cbr - fr * 80.0).abs() < 1e-9);
        assert!((cbr - 6890.6).abs() < 1.0);
        let vbr = bitrate(&all8, 10, fr, Mode::Vbr);
        assert!((vbr - cbr - side).abs() < 1e-9);
        let silence = FrameCodes::new(8, vec![vec![0]; 10]).unwrap();
        let v = bitrate(&silence, 10, fr, Mode::Vbr);
        assert!((v - fr * 13.0).abs() < 1e-9);
        assert!((v - 1120.0).abs() < 1.0);
    }

    #[test]
    fn bitrate_times_duration_is_payload_bits() {
        let codes = FrameCodes::new(8, vec![vec![0; 3], vec![1], vec![2; 8], vec![3; 5]]).unwrap();
        let fr = 44100.0 / 512.0;
        let duration = codes.len() as f64 / fr;
        let bits = payload_bits(&codes, 10, Mode::Vbr) as f64;
        assert!((bitrate(&codes, 10, fr, Mode::Vbr) * duration - bits).abs() < 1e-9);
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        fn stream() -> impl Strategy<Value = (StreamHeader, FrameCodes)> {
            (1usize..=16, 1u32..=12, any::<bool>(), 0usize..40).prop_flat_map(|(n_q, bits, vbr, t)| {
                let idx = prop::collection::vec(0u32..(1 << bits), 1..=n_q);
                let frames = if vbr {
                    prop::collection::vec(idx, t).boxed()
                } else {
                    (1..=n_q)
                        .prop_flat_map(move |n| prop::collection::vec(prop::collection::vec(0u32..(1 << bits), n), t))
                        .boxed()
                };
                frames.prop_map(move |frames| {
                    let mode = if vbr {
                        Mode::Vbr
                    } else {
                        Mode::Cbr(frames.first().map(Vec::len).unwrap_or(1))
                    };
                    let h = StreamHeader::new(16000, 320, n_q, bits, mode);
                    (h, FrameCodes::new(n_q, frames).unwrap())
                })
            })
        }

        proptest! {
            #[test]
            fn pack_unpack_round_trip((h, codes) in stream()) {
                let bytes = pack(&codes, &h).unwrap();
                let (back_h, back) = unpack(&bytes).unwrap();
                prop_assert_eq!(&back, &codes);
                prop_assert_eq!(back_h.mode, h.mode);
                prop_assert_eq!(pack(&back, &back_h).unwrap(), bytes.clone());
                let payload = (bytes.len() - FIXED_HEADER_LEN) as u64;
                prop_assert_eq!(payload, payload_bits(&codes, h.codebook_bits, h.mode).div_ceil(8));
            }

            #[test]
            fn accepted_bytes_repack_identically(data in prop::collection::vec(any::<u8>(), 0..64)) {
                let mut bytes = STREAM_MAGIC.to_vec();
                bytes.extend(data);
                if let Ok((h, codes)) = unpack(&bytes) {
                    prop_assert_eq!(pack(&codes, &h).unwrap(), bytes);
                }
            }
        }
    }
}
