#![allow(dead_code)]

use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use vrvq::importance::{surrogate_smooth, ScalingSpec, SurrogateSpec};
use vrvq::metrics::MultiScaleStft;
use vrvq::model::{ForwardTrace, MaskSource, ModelConfig, ToyCodec};
use vrvq::quantizer::CodebookStack;
use vrvq::train::{initialize, total_loss, TrainConfig};

pub fn tiny_train_config() -> TrainConfig {
    TrainConfig {
        stft_windows: vec![16, 32],
        model: ModelConfig {
            window: 8,
            hidden: 4,
            latent_dim: 4,
            sample_rate: 800,
            ep_channels: vec![3, 2],
            ep_kernels: vec![3, 3, 1],
        },
        n_q: 4,
        codebook_size: 8,
        code_dim: 4,
        init_segments: 8,
        segment_frames: 6,
        surrogate: SurrogateSpec::Smooth { alpha: 2.0 },
        ..TrainConfig::default()
    }
}

/// Everything held fixed at the base point: quantizer choices, stage
/// outputs and the stop-gradient operands.
struct Frozen {
    z_e: Vec<f64>,
    z_q: Vec<f64>,
    stage_outputs: Vec<Vec<Vec<f64>>>,
    stage_inputs: Vec<Vec<Vec<f64>>>,
    indices: Vec<Vec<u32>>,
    mask: Vec<Vec<bool>>,
    soft: Vec<Vec<f64>>,
}

fn tanh_affine(w: &[f64], b: &[f64], x: &[f64], act: bool) -> Vec<f64> {
    (0..b.len())
        .map(|o| {
            let v = b[o] + (0..x.len()).map(|i| w[o * x.len() + i] * x[i]).sum::<f64>();
            if act {
                v.tanh()
            } else {
                v
            }
        })
        .collect()
}

// Hann-windowed magnitude spectra by direct summation.
fn dft_mag_l1(x: &[f64], y: &[f64], n: usize) -> f64 {
    let hop = n / 4;
    let (mut sum, mut count) = (0.0, 0usize);
    let mut start = 0;
    while start + n <= x.len() {
        for k in 0..=n / 2 {
            let (mut xr, mut xi, mut yr, mut yi) = (0.0, 0.0, 0.0, 0.0);
            for i in 0..n {
                let w = 0.5 - 0.5 * (2.0 * PI * i as f64 / n as f64).cos();
                let th = -2.0 * PI * (k * i) as f64 / n as f64;
                xr += w * x[start + i] * th.cos();
                xi += w * x[start + i] * th.sin();
                yr += w * y[start + i] * th.cos();
                yi += w * y[start + i] * th.sin();
            }
            sum += ((xr * xr + xi * xi).sqrt() - (yr * yr + yi * yi).sqrt()).abs();
            count += 1;
        }
        start += hop;
    }
    sum / count as f64
}

/// Independent scalar evaluation of the training loss as a function of the
/// network parameters and codes, with straight-through terms frozen.
fn oracle_loss(
    config: &TrainConfig,
    params: &[f64],
    model: &ToyCodec,
    stack: &CodebookStack,
    x: &[f64],
    scale: &ScalingSpec,
    alpha: f64,
    frozen: &Frozen,
) -> f64 {
    let c = &config.model;
    let l = model.layout();
    let (w, h, d) = (c.window, c.hidden, c.latent_dim);
    let frames = x.len() / w;
    let n_q = stack.n_q();
    let p_of = |r: &std::ops::Range<usize>| &params[r.clone()];

    let mut e1 = Vec::new();
    let mut z_e = Vec::new();
    for t in 0..frames {
        let hv = tanh_affine(p_of(&l.e1_w), p_of(&l.e1_b), &x[t * w..(t + 1) * w], true);
        z_e.push(tanh_affine(p_of(&l.e2_w), p_of(&l.e2_b), &hv, false));
        e1.push(hv);
    }

    // importance convs, [channel][t]
    let mut act: Vec<Vec<f64>> = (0..h).map(|ch| (0..frames).map(|t| e1[t][ch]).collect()).collect();
    let shapes = c.conv_shapes();
    for (n, (ci, co, k)) in shapes.iter().copied().enumerate() {
        let (wr, br) = &l.conv[n];
        let (cw, cb) = (p_of(wr), p_of(br));
        let pad = (k - 1) / 2;
        let mut out = vec![vec![0.0; frames]; co];
        for o in 0..co {
            for t in 0..frames {
                let mut v = cb[o];
                for i in 0..ci {
                    for j in 0..k {
                        let src = t as isize + j as isize - pad as isize;
                        if src >= 0 && (src as usize) < frames {
                            v += cw[(o * ci + i) * k + j] * act[i][src as usize];
                        }
                    }
                }
                out[o][t] = if n + 1 == shapes.len() { v } else { v + v.sin().powi(2) };
            }
        }
        act = out;
    }
    let p: Vec<f64> = act[0].iter().map(|v| 1.0 / (1.0 + (-v).exp())).collect();

    let mut x_hat = Vec::new();
    let mut commit = 0.0;
    for t in 0..frames {
        let s = scale.apply(p[t], n_q).unwrap().value;
        let mut zq = frozen.z_q[t * d..(t + 1) * d].to_vec();
        for dd in 0..d {
            zq[dd] += z_e[t][dd] - frozen.z_e[t * d + dd];
        }
        for i in 0..n_q {
            let m = surrogate_smooth(s, i, alpha).unwrap().value - frozen.soft[t][i];
            for dd in 0..d {
                zq[dd] += m * frozen.stage_outputs[t][i][dd];
            }
        }
        for dd in 0..d {
            commit += (z_e[t][dd] - frozen.z_q[t * d + dd]).powi(2);
        }
        let g = tanh_affine(p_of(&l.d1_w), p_of(&l.d1_b), &zq, true);
        x_hat.extend(tanh_affine(p_of(&l.d2_w), p_of(&l.d2_b), &g, false));
    }
    commit /= (frames * d) as f64;

    let wave = x.iter().zip(&x_hat).map(|(a, b)| (a - b).powi(2)).sum::<f64>() / x.len() as f64;
    let spec: f64 = config.stft_windows.iter().map(|n| dft_mag_l1(x, &x_hat, *n)).sum();
    let mut cb = 0.0;
    for t in 0..frames {
        for i in 0..n_q {
            if frozen.mask[t][i] {
                let code = stack.code(i, frozen.indices[t][i] as usize);
                let target = stack.project_in(i, &frozen.stage_inputs[t][i]);
                cb += code.iter().zip(&target).map(|(a, b)| (a - b).powi(2)).sum::<f64>();
            }
        }
    }
    cb /= (frames * stack.code_dim()) as f64;
    let rate = p.iter().sum::<f64>() / frames as f64;
    let wt = &config.weights;
    wt.waveform * wave + wt.spectral * spec + wt.commitment * commit + wt.codebook * cb + config.beta * rate
}

#[derive(Debug)]
pub struct GradCheck {
    pub checked: usize,
    pub max_rel: f64,
    pub worst: String,
    /// Base-point loss from the library and from the oracle.
    pub loss: (f64, f64),
}

pub fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-6)
}

/// Central differences (step `h`) of the oracle loss against the analytic
/// gradient, over every network parameter and every code entry.
pub fn gradient_check(seed: u64, h: f64) -> GradCheck {
    let config = TrainConfig { seed, ..tiny_train_config() };
    let alpha = match config.surrogate {
        SurrogateSpec::Smooth { alpha } => alpha,
        SurrogateSpec::Identity => unreachable!(),
    };
    let corpus = config.corpus().unwrap();
    let (model, stack, _) = initialize(&config, &corpus).unwrap();
    // no silent frames, and noise so that no two frames decode alike
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let x: Vec<f64> = (0..)
        .map(|i| corpus.segment(i).samples)
        .find(|s| s.chunks(8).all(|f| f.iter().any(|v| *v != 0.0)))
        .unwrap()
        .into_iter()
        .map(|v| v + rng.random_range(-0.05..0.05))
        .collect();
    let scale = ScalingSpec::Linear { l: 5.0 };
    let trace: ForwardTrace = model
        .forward(&x, &stack, &MaskSource::Importance(scale), &config.surrogate)
        .unwrap();
    let stft = MultiScaleStft::new(&config.stft_windows).unwrap();
    let (terms, grads) = total_loss(&trace, &stack, &config, &stft).unwrap();
    let analytic = model.backward(&trace, &grads.seeds).unwrap();

    let ste = trace.ste.as_ref().unwrap();
    let n_q = stack.n_q();
    let frozen = Frozen {
        z_e: trace.z_e.as_slice().to_vec(),
        z_q: trace.z_q.as_slice().to_vec(),
        stage_outputs: trace.stage_outputs.clone(),
        stage_inputs: trace.stage_inputs.clone(),
        indices: trace.stage_indices.clone(),
        mask: (0..trace.frames).map(|t| trace.mask.column(t).to_vec()).collect(),
        soft: (0..trace.frames).map(|t| (0..n_q).map(|i| ste.soft.value(i, t)).collect()).collect(),
    };
    let base = model.params().to_vec();
    let loss = |p: &[f64], s: &CodebookStack| oracle_loss(&config, p, &model, s, &x, &scale, alpha, &frozen);
    let oracle_base = loss(&base, &stack);

    let mut out = GradCheck {
        checked: 0,
        max_rel: 0.0,
        worst: String::new(),
        loss: (terms.total, oracle_base),
    };
    let record = |name: String, a: f64, n: f64, out: &mut GradCheck| {
        let r = rel_err(a, n);
        out.checked += 1;
        if r > out.max_rel {
            out.max_rel = r;
            out.worst = format!("{name}: analytic {a:e}, numeric {n:e}");
        }
    };
    for i in 0..base.len() {
        let mut plus = base.clone();
        plus[i] += h;
        let mut minus = base.clone();
        minus[i] -= h;
        let n = (loss(&plus, &stack) - loss(&minus, &stack)) / (2.0 * h);
        record(format!("param {i}"), analytic[i], n, &mut out);
    }
    let dim = stack.code_dim();
    for s in 0..n_q {
        for j in 0..stack.codebook_size() {
            for dd in 0..dim {
                let shifted = |delta: f64| {
                    let mut st = stack.clone();
                    let mut c = st.code(s, j).to_vec();
                    c[dd] += delta;
                    st.set_code(s, j, &c).unwrap();
                    st
                };
                let n = (loss(&base, &shifted(h)) - loss(&base, &shifted(-h))) / (2.0 * h);
                let a = grads.codes[(s * stack.codebook_size() + j) * dim + dd];
                record(format!("code ({s}, {j}, {dd})"), a, n, &mut out);
            }
        }
    }
    out
}
