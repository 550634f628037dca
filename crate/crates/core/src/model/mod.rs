//! Desk-scale codec: framewise encoder `E = E_2 . E_1`, an importance subnet
//! over `E_1` features, a residual quantizer and a mirrored decoder.
//!
//! All parameters live in one flat vector; [`Layout`] names the slices. The
//! backward pass is hand-written reverse-mode accumulation. Quantization is
//! straight-through (identity Jacobian) and the stage mask is
//! straight-through with the Jacobian of the chosen surrogate.

mod checkpoint;

pub use checkpoint::NETWORK_MAGIC;

use std::ops::Range;
use std::sync::atomic::{AtomicU64, Ordering};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::importance::{i2m_ste, CodeMask, ImportanceMap, ScalingSpec, SteMask, SurrogateSpec};
use crate::bitstream::Mode;
use crate::importance::i2m;
use crate::quantizer::{dequantize, masked_rvq, quantize_frame, rvq_encode, CodebookStack, FrameCodes, LatentSequence};

// Keeps importance values strictly inside (0, 1) when the sigmoid saturates.
const P_EPS: f64 = 1e-12;

static NEXT_GENERATION: AtomicU64 = AtomicU64::new(1);

fn next_generation() -> u64 {
    NEXT_GENERATION.fetch_add(1, Ordering::Relaxed)
}

/// Network shape.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ModelConfig {
    /// Samples per frame; also the hop.
    pub window: usize,
    pub hidden: usize,
    pub latent_dim: usize,
    pub sample_rate: u32,
    /// Output channels of every importance conv except the last (which has 1).
    pub ep_channels: Vec<usize>,
    /// One odd kernel size per importance conv.
    pub ep_kernels: Vec<usize>,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            window: 512,
            hidden: 32,
            latent_dim: 8,
            sample_rate: 44100,
            ep_channels: vec![16, 8, 4, 2],
            ep_kernels: vec![5, 3, 3, 3, 1],
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        if self.window == 0 || self.hidden == 0 || self.latent_dim == 0 || self.sample_rate == 0 {
            return Err(Error::InvalidArgument("model dimensions must be non-zero".into()));
        }
        if self.ep_kernels.len() != self.ep_channels.len() + 1 {
            return Err(Error::InvalidArgument(format!(
                "{} importance kernels for {} conv layers",
                self.ep_kernels.len(),
                self.ep_channels.len() + 1
            )));
        }
        if self.ep_kernels.iter().any(|k| k % 2 == 0) || self.ep_channels.contains(&0) {
            return Err(Error::InvalidArgument(
                "importance kernels must be odd and channels non-zero".into(),
            ));
        }
        Ok(())
    }

    pub fn frame_rate(&self) -> f64 {
        self.sample_rate as f64 / self.window as f64
    }

    /// `(in, out, kernel)` per importance conv.
    pub fn conv_shapes(&self) -> Vec<(usize, usize, usize)> {
        let mut ins = vec![self.hidden];
        ins.extend(&self.ep_channels);
        let mut outs = self.ep_channels.clone();
        outs.push(1);
        ins.into_iter()
            .zip(outs)
            .zip(&self.ep_kernels)
            .map(|((i, o), k)| (i, o, *k))
            .collect()
    }
}

/// Where each tensor lives in the flat parameter vector.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Layout {
    pub e1_w: Range<usize>,
    pub e1_b: Range<usize>,
    pub e2_w: Range<usize>,
    pub e2_b: Range<usize>,
    pub d1_w: Range<usize>,
    pub d1_b: Range<usize>,
    pub d2_w: Range<usize>,
    pub d2_b: Range<usize>,
    /// `(weight [out][in][k], bias [out])` per importance conv.
    pub conv: Vec<(Range<usize>, Range<usize>)>,
    pub total: usize,
}

impl Layout {
    fn new(c: &ModelConfig) -> Self {
        let mut at = 0;
        let mut take = |n: usize| {
            let r = at..at + n;
            at += n;
            r
        };
        let e1_w = take(c.hidden * c.window);
        let e1_b = take(c.hidden);
        let e2_w = take(c.latent_dim * c.hidden);
        let e2_b = take(c.latent_dim);
        let d1_w = take(c.hidden * c.latent_dim);
        let d1_b = take(c.hidden);
        let d2_w = take(c.window * c.hidden);
        let d2_b = take(c.window);
        let conv = c
            .conv_shapes()
            .into_iter()
            .map(|(i, o, k)| (take(o * i * k), take(o)))
            .collect();
        Self {
            e1_w,
            e1_b,
            e2_w,
            e2_b,
            d1_w,
            d1_b,
            d2_w,
            d2_b,
            conv,
            total: at,
        }
    }

    /// Importance subnet parameters (all conv weights and biases).
    pub fn importance_ranges(&self) -> Vec<Range<usize>> {
        self.conv.iter().flat_map(|(w, b)| [w.clone(), b.clone()]).collect()
    }
}

/// Toy codec parameters.
#[derive(Debug)]
pub struct ToyCodec {
    config: ModelConfig,
    layout: Layout,
    params: Vec<f64>,
    generation: u64,
}

impl Clone for ToyCodec {
    fn clone(&self) -> Self {
        Self {
            config: self.config.clone(),
            layout: self.layout.clone(),
            params: self.params.clone(),
            generation: self.generation,
        }
    }
}

impl PartialEq for ToyCodec {
    fn eq(&self, other: &Self) -> bool {
        self.config == other.config && self.params == other.params
    }
}

/// `y = W x + b` with `W` row-major `[out][in]`.
fn affine(w: &[f64], b: &[f64], x: &[f64]) -> Vec<f64> {
    w.chunks_exact(x.len())
        .zip(b)
        .map(|(row, bias)| bias + row.iter().zip(x).map(|(a, v)| a * v).sum::<f64>())
        .collect()
}

/// Accumulates `dW += dy x^T`, `db += dy` and returns `W^T dy`.
fn affine_backward(w: &[f64], x: &[f64], dy: &[f64], dw: &mut [f64], db: &mut [f64]) -> Vec<f64> {
    let mut dx = vec![0.0; x.len()];
    for (o, &g) in dy.iter().enumerate() {
        db[o] += g;
        if g == 0.0 {
            continue;
        }
        let row = &w[o * x.len()..(o + 1) * x.len()];
        let drow = &mut dw[o * x.len()..(o + 1) * x.len()];
        for i in 0..x.len() {
            drow[i] += g * x[i];
            dx[i] += g * row[i];
        }
    }
    dx
}

/// Periodic activation `x + sin^2(x)`.
fn snake(x: f64) -> f64 {
    let s = x.sin();
    x + s * s
}

fn snake_grad(x: f64) -> f64 {
    1.0 + (2.0 * x).sin()
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Same-padded 1-D convolution over `frames` steps; maps are `[channel][t]`.
fn conv1d(input: &[f64], in_ch: usize, out_ch: usize, k: usize, w: &[f64], b: &[f64], frames: usize) -> Vec<f64> {
    let pad = (k - 1) / 2;
    let mut out = vec![0.0; out_ch * frames];
    for o in 0..out_ch {
        let row = &mut out[o * frames..(o + 1) * frames];
        row.iter_mut().for_each(|v| *v = b[o]);
        for i in 0..in_ch {
            let x = &input[i * frames..(i + 1) * frames];
            for j in 0..k {
                let wv = w[(o * in_ch + i) * k + j];
                for (t, r) in row.iter_mut().enumerate() {
                    let src = t + j;
                    if src >= pad && src - pad < frames {
                        *r += wv * x[src - pad];
                    }
                }
            }
        }
    }
    out
}

#[allow(clippy::too_many_arguments)]
fn conv1d_backward(
    input: &[f64],
    in_ch: usize,
    out_ch: usize,
    k: usize,
    w: &[f64],
    dout: &[f64],
    frames: usize,
    dw: &mut [f64],
    db: &mut [f64],
) -> Vec<f64> {
    let pad = (k - 1) / 2;
    let mut din = vec![0.0; in_ch * frames];
    for o in 0..out_ch {
        let g = &dout[o * frames..(o + 1) * frames];
        db[o] += g.iter().sum::<f64>();
        for i in 0..in_ch {
            let x = &input[i * frames..(i + 1) * frames];
            for j in 0..k {
                let wi = (o * in_ch + i) * k + j;
                let wv = w[wi];
                let mut acc = 0.0;
                for t in 0..frames {
                    let src = t + j;
                    if src >= pad && src - pad < frames {
                        acc += g[t] * x[src - pad];
                        din[i * frames + src - pad] += wv * g[t];
                    }
                }
                dw[wi] += acc;
            }
        }
    }
    din
}

/// Inference-time rate control.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum RateControl {
    /// Per-frame stage counts from the importance map.
    Vbr(ScalingSpec),
    /// Every frame uses the first `n` stages.
    Cbr(usize),
}

impl RateControl {
    pub fn stream_mode(&self) -> Mode {
        match self {
            Self::Vbr(_) => Mode::Vbr,
            Self::Cbr(n) => Mode::Cbr(*n),
        }
    }
}

/// Which mask feeds the quantizer.
#[derive(Debug, Clone, PartialEq)]
pub enum MaskSource {
    /// Mask from the importance map with the given scaling (VBR).
    Importance(ScalingSpec),
    /// Caller-supplied mask; no gradient reaches the importance map through it.
    Fixed(CodeMask),
}

/// Everything the backward pass needs from a forward evaluation.
#[derive(Debug, Clone, PartialEq)]
pub struct ForwardTrace {
    generation: u64,
    pub frames: usize,
    /// Zero-padded input, `frames x window`.
    pub x: Vec<f64>,
    /// `E_1(x)` per frame, `frames x hidden`.
    pub e1: Vec<f64>,
    /// Pre-activation of each importance conv, `[channel][t]`.
    pub conv_pre: Vec<Vec<f64>>,
    /// Sigmoid input per frame.
    pub logits: Vec<f64>,
    pub p: ImportanceMap,
    pub mask: CodeMask,
    /// Straight-through mask when the mask came from the importance map.
    pub ste: Option<SteMask>,
    pub z_e: LatentSequence,
    /// `Q_i(r_i[t])` for every stage, `[t][i]`.
    pub stage_outputs: Vec<Vec<Vec<f64>>>,
    /// Selected code index for every stage, `[t][i]`.
    pub stage_indices: Vec<Vec<u32>>,
    /// Residual entering every stage, `[t][i]`.
    pub stage_inputs: Vec<Vec<Vec<f64>>>,
    pub z_q: LatentSequence,
    /// Decoder hidden activations, `frames x hidden`.
    pub dec_hidden: Vec<f64>,
    /// Reconstruction, `frames x window`.
    pub x_hat: Vec<f64>,
}

/// Loss gradients fed into [`ToyCodec::backward`].
#[derive(Debug, Clone, PartialEq)]
pub struct GradientSeeds {
    /// `dL/dx_hat`, `frames x window`.
    pub x_hat: Vec<f64>,
    /// `dL/dp` applied directly to the importance map (the rate term).
    pub p: Vec<f64>,
    /// Extra `dL/dz_e` that bypasses the quantizer (commitment term).
    pub z_e: Vec<f64>,
}

impl GradientSeeds {
    pub fn zeros(trace: &ForwardTrace) -> Self {
        Self {
            x_hat: vec![0.0; trace.x_hat.len()],
            p: vec![0.0; trace.frames],
            z_e: vec![0.0; trace.z_e.as_slice().len()],
        }
    }
}

impl ToyCodec {
    /// Randomly initialized codec.
    pub fn new(config: ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let layout = Layout::new(&config);
        let mut params = vec![0.0; layout.total];
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut fill = |r: &Range<usize>, fan_in: usize, fan_out: usize, p: &mut Vec<f64>| {
            let a = (6.0 / (fan_in + fan_out) as f64).sqrt();
            for v in &mut p[r.clone()] {
                *v = rng.random_range(-a..a);
            }
        };
        let c = &config;
        fill(&layout.e1_w, c.window, c.hidden, &mut params);
        fill(&layout.e2_w, c.hidden, c.latent_dim, &mut params);
        fill(&layout.d1_w, c.latent_dim, c.hidden, &mut params);
        fill(&layout.d2_w, c.hidden, c.window, &mut params);
        for ((i, o, k), (w, _)) in c.conv_shapes().into_iter().zip(&layout.conv) {
            fill(w, i * k, o * k, &mut params);
        }
        Ok(Self {
            config,
            layout,
            params,
            generation: next_generation(),
        })
    }

    pub fn from_params(config: ModelConfig, params: Vec<f64>) -> Result<Self> {
        config.validate()?;
        let layout = Layout::new(&config);
        if params.len() != layout.total {
            return Err(Error::ShapeMismatch(format!(
                "{} parameters given, layout needs {}",
                params.len(),
                layout.total
            )));
        }
        if params.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("model parameters"));
        }
        Ok(Self {
            config,
            layout,
            params,
            generation: next_generation(),
        })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn layout(&self) -> &Layout {
        &self.layout
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    /// Mutable parameter access; invalidates outstanding traces.
    pub fn params_mut(&mut self) -> &mut [f64] {
        self.generation = next_generation();
        &mut self.params
    }

    fn p(&self, r: &Range<usize>) -> &[f64] {
        &self.params[r.clone()]
    }

    pub fn frames_for(&self, samples: usize) -> usize {
        samples.div_ceil(self.config.window)
    }

    fn frame_input(&self, x: &[f64]) -> Result<Vec<f64>> {
        let w = self.config.window;
        if x.len() < w {
            return Err(Error::InvalidArgument(format!(
                "input of {} samples is shorter than one {w}-sample frame",
                x.len()
            )));
        }
        if x.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("audio input"));
        }
        let mut framed = x.to_vec();
        framed.resize(self.frames_for(x.len()) * w, 0.0);
        Ok(framed)
    }

    /// `E_1` and `E_2` per frame.
    fn encode_frames(&self, framed: &[f64]) -> (Vec<f64>, Vec<f64>) {
        let c = &self.config;
        let l = &self.layout;
        let mut e1 = Vec::with_capacity(framed.len() / c.window * c.hidden);
        let mut z = Vec::with_capacity(framed.len() / c.window * c.latent_dim);
        for frame in framed.chunks_exact(c.window) {
            let h: Vec<f64> = affine(self.p(&l.e1_w), self.p(&l.e1_b), frame)
                .into_iter()
                .map(f64::tanh)
                .collect();
            z.extend(affine(self.p(&l.e2_w), self.p(&l.e2_b), &h));
            e1.extend(h);
        }
        (e1, z)
    }

    /// Importance subnet over `E_1` features. Returns conv pre-activations and logits.
    fn importance(&self, e1: &[f64], frames: usize) -> (Vec<Vec<f64>>, Vec<f64>) {
        let hidden = self.config.hidden;
        // [t][ch] -> [ch][t]
        let mut act = vec![0.0; hidden * frames];
        for t in 0..frames {
            for ch in 0..hidden {
                act[ch * frames + t] = e1[t * hidden + ch];
            }
        }
        let shapes = self.config.conv_shapes();
        let last = shapes.len() - 1;
        let mut pre_all = Vec::with_capacity(shapes.len());
        for (n, ((i, o, k), (w, b))) in shapes.into_iter().zip(&self.layout.conv).enumerate() {
            let pre = conv1d(&act, i, o, k, self.p(w), self.p(b), frames);
            act = if n == last {
                pre.clone()
            } else {
                pre.iter().map(|v| snake(*v)).collect()
            };
            pre_all.push(pre);
        }
        (pre_all, act)
    }

    fn importance_map(logits: &[f64]) -> Result<ImportanceMap> {
        if logits.iter().any(|v| v.is_nan()) {
            return Err(Error::NonFinite("importance logits"));
        }
        ImportanceMap::new(logits.iter().map(|v| sigmoid(*v).clamp(P_EPS, 1.0 - P_EPS)).collect())
    }

    /// Importance map and latents without quantization.
    pub fn analyze(&self, x: &[f64]) -> Result<(ImportanceMap, LatentSequence)> {
        let framed = self.frame_input(x)?;
        let frames = framed.len() / self.config.window;
        let (e1, z) = self.encode_frames(&framed);
        let (_, logits) = self.importance(&e1, frames);
        Ok((
            Self::importance_map(&logits)?,
            LatentSequence::new(self.config.latent_dim, z, self.config.frame_rate())?,
        ))
    }

    /// Decoder applied to quantized latents.
    pub fn synthesize(&self, z_q: &LatentSequence) -> Result<Vec<f64>> {
        if z_q.dim() != self.config.latent_dim {
            return Err(Error::ShapeMismatch(format!(
                "latent dimension {} does not match model {}",
                z_q.dim(),
                self.config.latent_dim
            )));
        }
        let l = &self.layout;
        let mut out = Vec::with_capacity(z_q.frames() * self.config.window);
        for z in z_q.iter_frames() {
            let g: Vec<f64> = affine(self.p(&l.d1_w), self.p(&l.d1_b), z)
                .into_iter()
                .map(f64::tanh)
                .collect();
            out.extend(affine(self.p(&l.d2_w), self.p(&l.d2_b), &g));
        }
        Ok(out)
    }

    /// Transmitted indices for `x`. The recurrence stops after each frame's
    /// last active stage.
    pub fn encode(&self, x: &[f64], stack: &CodebookStack, rate: &RateControl) -> Result<(FrameCodes, ImportanceMap)> {
        let (p, z_e) = self.analyze(x)?;
        let (codes, _) = match rate {
            RateControl::Vbr(scale) => masked_rvq(&z_e, &i2m(&p, scale, stack.n_q())?, stack)?,
            RateControl::Cbr(n) => rvq_encode(&z_e, *n, stack)?,
        };
        Ok((codes, p))
    }

    /// Reconstruction from indices, trimmed to `samples` when given.
    pub fn decode(&self, codes: &FrameCodes, stack: &CodebookStack, samples: Option<usize>) -> Result<Vec<f64>> {
        let z_q = dequantize(codes, stack, self.config.frame_rate())?;
        let mut y = self.synthesize(&z_q)?;
        if let Some(n) = samples {
            if n > y.len() || n + self.config.window <= y.len() {
                return Err(Error::InvalidArgument(format!(
                    "{n} samples do not fit {} frames of {}",
                    codes.len(),
                    self.config.window
                )));
            }
            y.truncate(n);
        }
        Ok(y)
    }

    /// Full training-time forward pass. Every stage is quantized so that the
    /// mask gradient of inactive stages is available; the reconstruction only
    /// sums the active ones.
    pub fn forward(
        &self,
        x: &[f64],
        stack: &CodebookStack,
        mask_source: &MaskSource,
        surrogate: &SurrogateSpec,
    ) -> Result<ForwardTrace> {
        let c = &self.config;
        if stack.latent_dim() != c.latent_dim {
            return Err(Error::ShapeMismatch(format!(
                "codebook latent dimension {} does not match model {}",
                stack.latent_dim(),
                c.latent_dim
            )));
        }
        let framed = self.frame_input(x)?;
        let frames = framed.len() / c.window;
        let (e1, z) = self.encode_frames(&framed);
        let (conv_pre, logits) = self.importance(&e1, frames);
        let p = Self::importance_map(&logits)?;
        let n_q = stack.n_q();
        let (mask, ste) = match mask_source {
            MaskSource::Importance(scale) => {
                let ste = i2m_ste(&p, scale, surrogate, n_q)?;
                (ste.forward.clone(), Some(ste))
            }
            MaskSource::Fixed(m) => {
                if m.n_q() != n_q || m.frames() != frames {
                    return Err(Error::ShapeMismatch(format!(
                        "fixed mask is {} x {}, expected {n_q} x {frames}",
                        m.n_q(),
                        m.frames()
                    )));
                }
                (m.clone(), None)
            }
        };
        let z_e = LatentSequence::new(c.latent_dim, z, c.frame_rate())?;

        let mut stage_outputs = Vec::with_capacity(frames);
        let mut stage_indices = Vec::with_capacity(frames);
        let mut stage_inputs = Vec::with_capacity(frames);
        let mut zq = Vec::with_capacity(frames * c.latent_dim);
        for t in 0..frames {
            let mut fq = quantize_frame(z_e.frame(t), n_q, stack);
            let mut sum = vec![0.0; c.latent_dim];
            for (i, q) in fq.stage_outputs.iter().enumerate() {
                if mask.get(i, t) {
                    for (a, b) in sum.iter_mut().zip(q) {
                        *a += b;
                    }
                }
            }
            zq.extend(sum);
            fq.residuals.truncate(n_q);
            stage_outputs.push(fq.stage_outputs);
            stage_indices.push(fq.indices);
            stage_inputs.push(fq.residuals);
        }
        let z_q = LatentSequence::new(c.latent_dim, zq, c.frame_rate())?;

        let l = &self.layout;
        let mut dec_hidden = Vec::with_capacity(frames * c.hidden);
        let mut x_hat = Vec::with_capacity(frames * c.window);
        for zf in z_q.iter_frames() {
            let g: Vec<f64> = affine(self.p(&l.d1_w), self.p(&l.d1_b), zf)
                .into_iter()
                .map(f64::tanh)
                .collect();
            x_hat.extend(affine(self.p(&l.d2_w), self.p(&l.d2_b), &g));
            dec_hidden.extend(g);
        }

        Ok(ForwardTrace {
            generation: self.generation,
            frames,
            x: framed,
            e1,
            conv_pre,
            logits,
            p,
            mask,
            ste,
            z_e,
            stage_outputs,
            stage_indices,
            stage_inputs,
            z_q,
            dec_hidden,
            x_hat,
        })
    }

    /// Reverse-mode gradient of a scalar loss with respect to every parameter.
    pub fn backward(&self, trace: &ForwardTrace, seeds: &GradientSeeds) -> Result<Vec<f64>> {
        if trace.generation != self.generation {
            return Err(Error::InvalidArgument(
                "stale trace: parameters changed since the forward pass".into(),
            ));
        }
        let c = &self.config;
        let l = &self.layout;
        let frames = trace.frames;
        if seeds.x_hat.len() != trace.x_hat.len()
            || seeds.p.len() != frames
            || seeds.z_e.len() != frames * c.latent_dim
        {
            return Err(Error::ShapeMismatch("gradient seeds do not match the trace".into()));
        }
        let mut grad = vec![0.0; l.total];
        let n_q = trace.mask.n_q();

        // decoder, then quantizer (straight-through) and mask
        let mut dz_e = seeds.z_e.clone();
        let mut dmask = vec![0.0; n_q * frames];
        for t in 0..frames {
            let dy = &seeds.x_hat[t * c.window..(t + 1) * c.window];
            let g = &trace.dec_hidden[t * c.hidden..(t + 1) * c.hidden];
            let (dw2, rest) = grad.split_at_mut(l.d2_b.start);
            let dg = affine_backward(
                self.p(&l.d2_w),
                g,
                dy,
                &mut dw2[l.d2_w.clone()],
                &mut rest[..c.window],
            );
            let da: Vec<f64> = dg.iter().zip(g).map(|(d, v)| d * (1.0 - v * v)).collect();
            let (dw1, rest) = grad.split_at_mut(l.d1_b.start);
            let dzq = affine_backward(
                self.p(&l.d1_w),
                trace.z_q.frame(t),
                &da,
                &mut dw1[l.d1_w.clone()],
                &mut rest[..c.hidden],
            );
            for (i, q) in trace.stage_outputs[t].iter().enumerate() {
                dmask[t * n_q + i] = dzq.iter().zip(q).map(|(a, b)| a * b).sum();
            }
            for (a, b) in dz_e[t * c.latent_dim..(t + 1) * c.latent_dim].iter_mut().zip(&dzq) {
                *a += b;
            }
        }

        let mut dp = seeds.p.clone();
        if let Some(ste) = &trace.ste {
            for (a, b) in dp.iter_mut().zip(ste.backward(&dmask)) {
                *a += b;
            }
        }

        // E_2
        let mut dh = vec![0.0; frames * c.hidden];
        for t in 0..frames {
            let h = &trace.e1[t * c.hidden..(t + 1) * c.hidden];
            let (dw, rest) = grad.split_at_mut(l.e2_b.start);
            let d = affine_backward(
                self.p(&l.e2_w),
                h,
                &dz_e[t * c.latent_dim..(t + 1) * c.latent_dim],
                &mut dw[l.e2_w.clone()],
                &mut rest[..c.latent_dim],
            );
            dh[t * c.hidden..(t + 1) * c.hidden].copy_from_slice(&d);
        }

        // importance subnet
        let mut dact: Vec<f64> = trace
            .logits
            .iter()
            .zip(&dp)
            .map(|(z, g)| {
                let s = sigmoid(*z);
                g * s * (1.0 - s)
            })
            .collect();
        let shapes = c.conv_shapes();
        let last = shapes.len() - 1;
        for n in (0..shapes.len()).rev() {
            let (i, o, k) = shapes[n];
            let dpre: Vec<f64> = if n == last {
                dact
            } else {
                dact.iter().zip(&trace.conv_pre[n]).map(|(g, x)| g * snake_grad(*x)).collect()
            };
            let input: Vec<f64> = if n == 0 {
                let mut m = vec![0.0; c.hidden * frames];
                for t in 0..frames {
                    for ch in 0..c.hidden {
                        m[ch * frames + t] = trace.e1[t * c.hidden + ch];
                    }
                }
                m
            } else {
                trace.conv_pre[n - 1].iter().map(|v| snake(*v)).collect()
            };
            let (wr, br) = &l.conv[n];
            let (head, tail) = grad.split_at_mut(br.start);
            dact = conv1d_backward(
                &input,
                i,
                o,
                k,
                self.p(wr),
                &dpre,
                frames,
                &mut head[wr.clone()],
                &mut tail[..o],
            );
        }
        for t in 0..frames {
            for ch in 0..c.hidden {
                dh[t * c.hidden + ch] += dact[ch * frames + t];
            }
        }

        // E_1
        for t in 0..frames {
            let h = &trace.e1[t * c.hidden..(t + 1) * c.hidden];
            let da: Vec<f64> = dh[t * c.hidden..(t + 1) * c.hidden]
                .iter()
                .zip(h)
                .map(|(d, v)| d * (1.0 - v * v))
                .collect();
            let (dw, rest) = grad.split_at_mut(l.e1_b.start);
            affine_backward(
                self.p(&l.e1_w),
                &trace.x[t * c.window..(t + 1) * c.window],
                &da,
                &mut dw[l.e1_w.clone()],
                &mut rest[..c.hidden],
            );
        }
        Ok(grad)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::quantizer::{fit_codebooks, masked_rvq};

    fn tiny() -> ModelConfig {
        ModelConfig {
            window: 8,
            hidden: 4,
            latent_dim: 4,
            sample_rate: 64,
            ep_channels: vec![3, 2],
            ep_kernels: vec![3, 3, 1],
        }
    }

    fn signal(n: usize, seed: u64) -> Vec<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()
    }

    fn stack_for(model: &ToyCodec, x: &[f64], n_q: usize, k: usize) -> CodebookStack {
        let (_, z) = model.analyze(x).unwrap();
        let c = model.config();
        let base = CodebookStack::new(n_q, k, c.latent_dim, c.latent_dim).unwrap();
        fit_codebooks(&[z], &base, 10, 0).unwrap().0
    }

    #[test]
    fn config_validation() {
        let mut c = tiny();
        c.ep_kernels = vec![3, 2, 1];
        assert!(c.validate().is_err());
        let mut c = tiny();
        c.ep_kernels.pop();
        assert!(c.validate().is_err());
        assert!(ModelConfig::default().validate().is_ok());
        assert_eq!(ModelConfig::default().conv_shapes(), vec![(32, 16, 5), (16, 8, 3), (8, 4, 3), (4, 2, 3), (2, 1, 1)]);
    }

    #[test]
    fn shapes_follow_the_frame_count() {
        let model = ToyCodec::new(tiny(), 1).unwrap();
        let x = signal(44, 2);
        let stack = stack_for(&model, &x, 3, 4);
        let trace = model
            .forward(&x, &stack, &MaskSource::Importance(ScalingSpec::Linear { l: 3.0 }), &SurrogateSpec::Identity)
            .unwrap();
        assert_eq!(trace.frames, 6);
        assert_eq!(trace.p.len(), 6);
        assert_eq!((trace.mask.n_q(), trace.mask.frames()), (3, 6));
        assert_eq!(trace.z_q.frames(), trace.z_e.frames());
        assert_eq!(trace.x_hat.len(), 48);
        assert!(model.forward(&x[..7], &stack, &MaskSource::Fixed(CodeMask::all_ones(3, 1)), &SurrogateSpec::Identity).is_err());
    }

    #[test]
    fn forced_full_mask_matches_cbr_path() {
        let model = ToyCodec::new(tiny(), 3).unwrap();
        let x = signal(48, 4);
        let stack = stack_for(&model, &x, 3, 4);
        let trace = model
            .forward(&x, &stack, &MaskSource::Fixed(CodeMask::all_ones(3, 6)), &SurrogateSpec::Identity)
            .unwrap();
        let (_, z_e) = model.analyze(&x).unwrap();
        let (_, z_q) = crate::quantizer::rvq_encode(&z_e, 3, &stack).unwrap();
        assert_eq!(trace.z_q, z_q);
        assert_eq!(trace.x_hat, model.synthesize(&z_q).unwrap());
    }

    #[test]
    fn vbr_forward_matches_inference_quantization() {
        let model = ToyCodec::new(tiny(), 5).unwrap();
        let x = signal(48, 6);
        let stack = stack_for(&model, &x, 4, 4);
        let scale = ScalingSpec::Linear { l: 4.0 };
        let trace = model
            .forward(&x, &stack, &MaskSource::Importance(scale), &SurrogateSpec::smooth(2.0).unwrap())
            .unwrap();
        let (codes, z_q) = masked_rvq(&trace.z_e, &trace.mask, &stack).unwrap();
        assert_eq!(trace.z_q, z_q);
        assert_eq!(codes.counts(), trace.mask.counts());
        for t in 0..trace.frames {
            assert_eq!(codes.frame(t), &trace.stage_indices[t][..codes.frame(t).len()]);
        }
    }

    #[test]
    fn silence_gives_constant_interior_importance() {
        let model = ToyCodec::new(ModelConfig::default(), 7).unwrap();
        let (p, _) = model.analyze(&vec![0.0; 512 * 16]).unwrap();
        // receptive field is 1 + 4 + 2 + 2 + 2 = 11 frames, so 5 edge frames per side
        let interior = &p.values()[5..11];
        assert!(interior.iter().all(|v| *v == interior[0]));
    }

    #[test]
    fn forward_is_deterministic() {
        let a = ToyCodec::new(tiny(), 9).unwrap();
        let b = ToyCodec::new(tiny(), 9).unwrap();
        assert_eq!(a, b);
        let x = signal(48, 1);
        let stack = stack_for(&a, &x, 3, 4);
        let src = MaskSource::Importance(ScalingSpec::Linear { l: 2.5 });
        let s = SurrogateSpec::smooth(1.0).unwrap();
        let mut ta = a.forward(&x, &stack, &src, &s).unwrap();
        let mut tb = b.forward(&x, &stack, &src, &s).unwrap();
        ta.generation = 0;
        tb.generation = 0;
        assert_eq!(ta, tb);
    }

    #[test]
    fn stale_trace_is_rejected() {
        let mut model = ToyCodec::new(tiny(), 2).unwrap();
        let x = signal(48, 8);
        let stack = stack_for(&model, &x, 3, 4);
        let trace = model
            .forward(&x, &stack, &MaskSource::Importance(ScalingSpec::Linear { l: 2.0 }), &SurrogateSpec::Identity)
            .unwrap();
        let seeds = GradientSeeds::zeros(&trace);
        assert!(model.backward(&trace, &seeds).is_ok());
        model.params_mut()[0] += 0.1;
        assert!(model.backward(&trace, &seeds).is_err());
    }

    #[test]
    fn saturated_identity_surrogate_blocks_mask_gradient() {
        let model = ToyCodec::new(tiny(), 11).unwrap();
        let x = signal(48, 12);
        let stack = stack_for(&model, &x, 3, 4);
        // s = l * p >= n_q for every frame, outside all identity ramps
        let p_min = model.analyze(&x).unwrap().0.values().iter().cloned().fold(1.0, f64::min);
        let scale = ScalingSpec::Linear { l: 3.0 / p_min + 1.0 };
        let trace = model.forward(&x, &stack, &MaskSource::Importance(scale), &SurrogateSpec::Identity).unwrap();
        let mut seeds = GradientSeeds::zeros(&trace);
        for (i, v) in seeds.x_hat.iter_mut().enumerate() {
            *v = (i as f64 * 0.37).sin();
        }
        let g = model.backward(&trace, &seeds).unwrap();
        for r in model.layout().importance_ranges() {
            assert!(g[r].iter().all(|v| *v == 0.0));
        }
    }

    #[test]
    fn smooth_surrogate_gradient_reaches_importance_net() {
        let surrogate = SurrogateSpec::smooth(2.0).unwrap();
        for case in 0..100u64 {
            let model = ToyCodec::new(tiny(), case).unwrap();
            let x = signal(48, 1000 + case);
            let stack = stack_for(&model, &x, 3, 4);
            let l = 1.0 + (case % 12) as f64;
            let trace = model.forward(&x, &stack, &MaskSource::Importance(ScalingSpec::Linear { l }), &surrogate).unwrap();
            let mut seeds = GradientSeeds::zeros(&trace);
            seeds.x_hat = signal(trace.x_hat.len(), 2000 + case);
            let g = model.backward(&trace, &seeds).unwrap();
            let norm: f64 = model.layout().importance_ranges().into_iter().flat_map(|r| g[r].to_vec()).map(|v| v * v).sum();
            assert!(norm > 0.0, "case {case}: zero gradient at the importance net");
        }
    }
}
