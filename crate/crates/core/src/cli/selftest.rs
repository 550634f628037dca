//! Seeded randomized checks of the core laws, run by `vrvq selftest`.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::bitstream::{self, Mode, StreamHeader};
use crate::importance::{i2m, surrogate_smooth, CodeMask, ImportanceMap, ScalingSpec};
use crate::quantizer::{dequantize, masked_rvq, rvq_encode, CodebookStack, FrameCodes, LatentSequence};

#[derive(Debug, Clone)]
pub struct SelftestResult {
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
}

fn random_scaling(rng: &mut ChaCha8Rng) -> ScalingSpec {
    match rng.random_range(0..3) {
        0 => ScalingSpec::Linear { l: rng.random_range(0.5..64.0) },
        1 => ScalingSpec::Exponential { gamma: rng.random_range(0.05..8.0) },
        _ => ScalingSpec::Transformed { gamma: rng.random_range(0.05..8.0) },
    }
}

fn mask_laws(rng: &mut ChaCha8Rng, cases: usize) -> Result<(), String> {
    for case in 0..cases {
        let n_q = rng.random_range(1..=16);
        let frames = rng.random_range(1..=12);
        let p: Vec<f64> = (0..frames).map(|_| rng.random_range(1e-9..1.0 - 1e-9)).collect();
        let spec = random_scaling(rng);
        let mask = i2m(&ImportanceMap::new(p.clone()).map_err(|e| e.to_string())?, &spec, n_q)
            .map_err(|e| format!("case {case}: {e}"))?;
        for t in 0..frames {
            let col = mask.column(t);
            if !col[0] {
                return Err(format!("case {case}: first stage inactive at frame {t}"));
            }
            if col.windows(2).any(|w| !w[0] && w[1]) {
                return Err(format!("case {case}: column {t} is not monotone"));
            }
        }
        // raising importance never removes a stage
        let q: Vec<f64> = p.iter().map(|v| (v + rng.random_range(0.0..0.5)).min(1.0 - 1e-9)).collect();
        let higher = i2m(&ImportanceMap::new(q).map_err(|e| e.to_string())?, &spec, n_q).map_err(|e| e.to_string())?;
        if (0..frames).any(|t| higher.counts()[t] < mask.counts()[t]) {
            return Err(format!("case {case}: count decreased with importance under {spec:?}"));
        }
    }
    Ok(())
}

fn surrogate_derivative(rng: &mut ChaCha8Rng, cases: usize) -> Result<(), String> {
    let h = 1e-5;
    for case in 0..cases {
        let alpha = rng.random_range(0.1..8.0);
        let k = rng.random_range(0..16);
        let s = rng.random_range(-2.0..20.0);
        let v = surrogate_smooth(s, k, alpha).map_err(|e| e.to_string())?;
        let fd = (surrogate_smooth(s + h, k, alpha).unwrap().value - surrogate_smooth(s - h, k, alpha).unwrap().value)
            / (2.0 * h);
        if (v.grad - fd).abs() > 1e-6 * fd.abs().max(1.0) {
            return Err(format!("case {case}: s={s} k={k} alpha={alpha}: {} vs {fd}", v.grad));
        }
        if !(-1e-12..=1.0 + 1e-12).contains(&v.value) {
            return Err(format!("case {case}: value {} outside [0, 1]", v.value));
        }
    }
    Ok(())
}

fn random_stack(rng: &mut ChaCha8Rng, n_q: usize, size: usize, dim: usize) -> CodebookStack {
    let codes: Vec<Vec<Vec<f64>>> = (0..n_q)
        .map(|_| (0..size).map(|_| (0..dim).map(|_| rng.random_range(-1.0..1.0)).collect()).collect())
        .collect();
    CodebookStack::from_codes(&codes).expect("valid random codebooks")
}

fn stream_round_trip(rng: &mut ChaCha8Rng, cases: usize) -> Result<(), String> {
    for case in 0..cases {
        let n_q = rng.random_range(1..=12);
        let bits = rng.random_range(1..=10u32);
        let frames = rng.random_range(0..=20);
        let vbr = rng.random_bool(0.5);
        let cbr_n = rng.random_range(1..=n_q);
        let rows: Vec<Vec<u32>> = (0..frames)
            .map(|_| {
                let n = if vbr { rng.random_range(1..=n_q) } else { cbr_n };
                (0..n).map(|_| rng.random_range(0..1u32 << bits)).collect()
            })
            .collect();
        let codes = FrameCodes::new(n_q, rows).map_err(|e| e.to_string())?;
        let mode = if vbr { Mode::Vbr } else { Mode::Cbr(cbr_n) };
        let mut header = StreamHeader::new(44100, 512, n_q, bits, mode);
        header.frame_count = frames;
        if rng.random_bool(0.5) {
            header.set_extension(bitstream::EXT_SAMPLE_COUNT, (frames as u64 * 512).to_le_bytes().to_vec());
        }
        let bytes = bitstream::pack(&codes, &header).map_err(|e| format!("case {case}: {e}"))?;
        let (h2, c2) = bitstream::unpack(&bytes).map_err(|e| format!("case {case}: {e}"))?;
        if h2 != header || c2 != codes {
            return Err(format!("case {case}: round trip changed the stream"));
        }
    }
    Ok(())
}

fn full_mask_matches_constant_rate(rng: &mut ChaCha8Rng, cases: usize) -> Result<(), String> {
    for case in 0..cases.div_ceil(10) {
        let n_q = rng.random_range(1..=6);
        let dim = rng.random_range(1..=5);
        let size = 1 << rng.random_range(1..=4);
        let stack = random_stack(rng, n_q, size, dim);
        let frames = rng.random_range(1..=8);
        let data: Vec<f64> = (0..frames * dim).map(|_| rng.random_range(-2.0..2.0)).collect();
        let z = LatentSequence::new(dim, data, 86.0).map_err(|e| e.to_string())?;
        let (a, za) = masked_rvq(&z, &CodeMask::all_ones(n_q, frames), &stack).map_err(|e| e.to_string())?;
        let (b, zb) = rvq_encode(&z, n_q, &stack).map_err(|e| e.to_string())?;
        if a != b || za != zb {
            return Err(format!("case {case}: masked and constant-rate paths differ"));
        }
        let back = dequantize(&a, &stack, 86.0).map_err(|e| e.to_string())?;
        if back.as_slice().iter().zip(za.as_slice()).any(|(x, y)| (x - y).abs() > 1e-12) {
            return Err(format!("case {case}: dequantize disagrees with the encoder"));
        }
    }
    Ok(())
}

/// Runs each property suite for `cases` random cases drawn from `seed`.
pub fn run_selftest(seed: u64, cases: usize) -> Vec<SelftestResult> {
    type Suite = fn(&mut ChaCha8Rng, usize) -> Result<(), String>;
    let suites: [(&'static str, Suite); 4] = [
        ("mask_laws", mask_laws),
        ("surrogate_derivative", surrogate_derivative),
        ("stream_round_trip", stream_round_trip),
        ("full_mask_matches_constant_rate", full_mask_matches_constant_rate),
    ];
    suites
        .iter()
        .enumerate()
        .map(|(i, (name, f))| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(i as u64);
            match f(&mut rng, cases) {
                Ok(()) => SelftestResult {
                    name,
                    passed: true,
                    detail: format!("{cases} cases"),
                },
                Err(detail) => SelftestResult {
                    name,
                    passed: false,
                    detail,
                },
            }
        })
        .collect()
}
