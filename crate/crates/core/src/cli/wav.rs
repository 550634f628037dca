//! Mono PCM-16 / float-32 WAV I/O.

use std::io::Cursor;

use hound::{SampleFormat, WavReader, WavSpec, WavWriter};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum WavFormat {
    Pcm16,
    Float32,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Audio {
    pub sample_rate: u32,
    pub samples: Vec<f64>,
    pub format: WavFormat,
}

pub fn read_wav(bytes: &[u8]) -> Result<Audio> {
    let reader = WavReader::new(Cursor::new(bytes))?;
    let spec = reader.spec();
    if spec.channels != 1 {
        return Err(Error::Malformed(format!("{} channels; only mono is supported", spec.channels)));
    }
    let (format, samples) = match (spec.sample_format, spec.bits_per_sample) {
        (SampleFormat::Int, 16) => (
            WavFormat::Pcm16,
            reader
                .into_samples::<i16>()
                .map(|s| s.map(|v| v as f64 / 32768.0))
                .collect::<std::result::Result<Vec<_>, _>>()?,
        ),
        (SampleFormat::Float, 32) => {
            let s = reader
                .into_samples::<f32>()
                .map(|s| s.map(f64::from))
                .collect::<std::result::Result<Vec<_>, _>>()?;
            if s.iter().any(|v| !v.is_finite()) {
                return Err(Error::NonFinite("float WAV samples"));
            }
            (WavFormat::Float32, s)
        }
        (f, b) => {
            return Err(Error::Malformed(format!(
                "unsupported WAV sample format {f:?} with {b} bits"
            )))
        }
    };
    Ok(Audio {
        sample_rate: spec.sample_rate,
        samples,
        format,
    })
}

/// Encodes `audio` as WAV. A non-empty `comment` is stored in a trailing
/// `LIST/INFO/ICMT` chunk.
pub fn write_wav(audio: &Audio, comment: &str) -> Result<Vec<u8>> {
    let spec = WavSpec {
        channels: 1,
        sample_rate: audio.sample_rate,
        bits_per_sample: match audio.format {
            WavFormat::Pcm16 => 16,
            WavFormat::Float32 => 32,
        },
        sample_format: match audio.format {
            WavFormat::Pcm16 => SampleFormat::Int,
            WavFormat::Float32 => SampleFormat::Float,
        },
    };
    let mut buf = Cursor::new(Vec::new());
    {
        let mut w = WavWriter::new(&mut buf, spec)?;
        for &v in &audio.samples {
            match audio.format {
                WavFormat::Pcm16 => w.write_sample((v * 32768.0).round().clamp(-32768.0, 32767.0) as i16)?,
                WavFormat::Float32 => w.write_sample(v as f32)?,
            }
        }
        w.finalize()?;
    }
    let mut bytes = buf.into_inner();
    if !comment.is_empty() {
        let mut text = comment.as_bytes().to_vec();
        text.push(0);
        if text.len() % 2 == 1 {
            text.push(0);
        }
        let mut list = b"INFO".to_vec();
        list.extend_from_slice(b"ICMT");
        list.extend_from_slice(&(comment.len() as u32 + 1).to_le_bytes());
        list.extend_from_slice(&text);
        if bytes.len() % 2 == 1 {
            bytes.push(0);
        }
        bytes.extend_from_slice(b"LIST");
        bytes.extend_from_slice(&(list.len() as u32).to_le_bytes());
        bytes.extend_from_slice(&list);
        let riff = (bytes.len() - 8) as u32;
        bytes[4..8].copy_from_slice(&riff.to_le_bytes());
    }
    Ok(bytes)
}

/// Text of the trailing `ICMT` chunk written by [`write_wav`], if any.
pub fn wav_comment(bytes: &[u8]) -> Option<String> {
    let mut at = 12;
    while at + 8 <= bytes.len() {
        let id = &bytes[at..at + 4];
        let len = u32::from_le_bytes(bytes[at + 4..at + 8].try_into().ok()?) as usize;
        let body = bytes.get(at + 8..at + 8 + len)?;
        if id == b"LIST" && body.starts_with(b"INFO") && body.len() >= 12 && &body[4..8] == b"ICMT" {
            let n = u32::from_le_bytes(body[8..12].try_into().ok()?) as usize;
            let text = body.get(12..12 + n)?;
            return Some(String::from_utf8_lossy(text).trim_end_matches('\0').to_string());
        }
        at += 8 + len + len % 2;
    }
    None
}
