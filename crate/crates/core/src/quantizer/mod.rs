//! Residual vector quantization.
//!
//! Stage `i` quantizes the residual left by stages `0..i`:
//! `r_0 = z`, `r_{i+1} = r_i - Q_i(r_i)`, and the reconstruction is the
//! (optionally masked) sum of the stage outputs.
//!
//! Lookups are factorized: a residual is projected into a small lookup space,
//! optionally L2-normalized together with the codes, matched against the
//! codebook, and the selected code is projected back to the latent space.

mod checkpoint;
mod kmeans;

pub use checkpoint::CODEBOOK_MAGIC;
pub use kmeans::{fit_codebooks, FitReport};

use crate::error::{Error, Result};
use crate::importance::CodeMask;

/// `n_q` codebooks of `codebook_size` codes with per-stage projections.
#[derive(Debug, Clone, PartialEq)]
pub struct CodebookStack {
    n_q: usize,
    codebook_size: usize,
    code_dim: usize,
    latent_dim: usize,
    l2_normalize: bool,
    // [stage][latent][code], row-major
    in_proj: Vec<f64>,
    out_proj: Vec<f64>,
    // [stage][index][code_dim]
    codes: Vec<f64>,
}

impl CodebookStack {
    /// Zero codes with identity projections.
    pub fn new(n_q: usize, codebook_size: usize, code_dim: usize, latent_dim: usize) -> Result<Self> {
        if n_q == 0 || code_dim == 0 || latent_dim == 0 {
            return Err(Error::InvalidArgument(
                "codebook dimensions must be non-zero".into(),
            ));
        }
        if !codebook_size.is_power_of_two() || codebook_size < 2 {
            return Err(Error::InvalidArgument(format!(
                "codebook size {codebook_size} is not a power of two >= 2"
            )));
        }
        let mut eye = vec![0.0; latent_dim * code_dim];
        for d in 0..latent_dim.min(code_dim) {
            eye[d * code_dim + d] = 1.0;
        }
        Ok(Self {
            n_q,
            codebook_size,
            code_dim,
            latent_dim,
            l2_normalize: false,
            in_proj: eye.repeat(n_q),
            out_proj: eye.repeat(n_q),
            codes: vec![0.0; n_q * codebook_size * code_dim],
        })
    }

    /// Stack with explicit codes, `codes[stage][index]`, and identity projections.
    pub fn from_codes(codes: &[Vec<Vec<f64>>]) -> Result<Self> {
        let k = codes.first().map(Vec::len).unwrap_or(0);
        let dim = codes.first().and_then(|c| c.first()).map(Vec::len).unwrap_or(0);
        let mut stack = Self::new(codes.len(), k, dim, dim)?;
        for (i, book) in codes.iter().enumerate() {
            if book.len() != k {
                return Err(Error::ShapeMismatch(format!("stage {i} has {} codes", book.len())));
            }
            for (j, c) in book.iter().enumerate() {
                stack.set_code(i, j, c)?;
            }
        }
        Ok(stack)
    }

    pub fn with_l2_normalize(mut self, on: bool) -> Self {
        self.l2_normalize = on;
        self
    }

    pub fn set_projections(&mut self, stage: usize, in_proj: &[f64], out_proj: &[f64]) -> Result<()> {
        let n = self.latent_dim * self.code_dim;
        self.check_stage(stage)?;
        if in_proj.len() != n || out_proj.len() != n {
            return Err(Error::ShapeMismatch(format!(
                "projection needs {n} entries ({} x {})",
                self.latent_dim, self.code_dim
            )));
        }
        if in_proj.iter().chain(out_proj).any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("projection"));
        }
        self.in_proj[stage * n..(stage + 1) * n].copy_from_slice(in_proj);
        self.out_proj[stage * n..(stage + 1) * n].copy_from_slice(out_proj);
        Ok(())
    }

    pub fn n_q(&self) -> usize {
        self.n_q
    }

    pub fn codebook_size(&self) -> usize {
        self.codebook_size
    }

    pub fn codebook_bits(&self) -> u32 {
        self.codebook_size.trailing_zeros()
    }

    pub fn code_dim(&self) -> usize {
        self.code_dim
    }

    pub fn latent_dim(&self) -> usize {
        self.latent_dim
    }

    pub fn l2_normalize(&self) -> bool {
        self.l2_normalize
    }

    pub fn code(&self, stage: usize, index: usize) -> &[f64] {
        let o = (stage * self.codebook_size + index) * self.code_dim;
        &self.codes[o..o + self.code_dim]
    }

    pub fn set_code(&mut self, stage: usize, index: usize, value: &[f64]) -> Result<()> {
        self.check_stage(stage)?;
        if index >= self.codebook_size || value.len() != self.code_dim {
            return Err(Error::ShapeMismatch(format!(
                "code ({stage}, {index}) with {} entries",
                value.len()
            )));
        }
        if value.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("code vector"));
        }
        let o = (stage * self.codebook_size + index) * self.code_dim;
        self.codes[o..o + self.code_dim].copy_from_slice(value);
        Ok(())
    }

    pub(crate) fn codes_mut(&mut self, stage: usize) -> &mut [f64] {
        let n = self.codebook_size * self.code_dim;
        &mut self.codes[stage * n..(stage + 1) * n]
    }

    /// All codes, `[stage][index][dim]`.
    pub fn codes_flat(&self) -> Vec<f64> {
        self.codes.clone()
    }

    pub fn set_codes_flat(&mut self, codes: &[f64]) -> Result<()> {
        if codes.len() != self.codes.len() {
            return Err(Error::ShapeMismatch(format!(
                "{} code entries given, stack holds {}",
                codes.len(),
                self.codes.len()
            )));
        }
        if codes.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("code vector"));
        }
        self.codes.copy_from_slice(codes);
        Ok(())
    }

    fn check_stage(&self, stage: usize) -> Result<()> {
        if stage >= self.n_q {
            return Err(Error::InvalidArgument(format!(
                "stage {stage} out of range for {} stages",
                self.n_q
            )));
        }
        Ok(())
    }

    /// Latent vector to lookup space.
    pub fn project_in(&self, stage: usize, v: &[f64]) -> Vec<f64> {
        let n = self.latent_dim * self.code_dim;
        let p = &self.in_proj[stage * n..(stage + 1) * n];
        let mut out = vec![0.0; self.code_dim];
        for (d, x) in v.iter().enumerate() {
            let row = &p[d * self.code_dim..(d + 1) * self.code_dim];
            for (o, w) in out.iter_mut().zip(row) {
                *o += w * x;
            }
        }
        out
    }

    /// Lookup-space vector back to the latent space.
    pub fn project_out(&self, stage: usize, c: &[f64]) -> Vec<f64> {
        let n = self.latent_dim * self.code_dim;
        let p = &self.out_proj[stage * n..(stage + 1) * n];
        p.chunks_exact(self.code_dim)
            .map(|row| row.iter().zip(c).map(|(w, x)| w * x).sum())
            .collect()
    }

    /// Nearest code to an already projected query. Ties go to the lowest index.
    pub(crate) fn nearest(&self, stage: usize, low: &[f64]) -> usize {
        let query = if self.l2_normalize {
            normalized(low)
        } else {
            low.to_vec()
        };
        let mut best = 0;
        let mut best_d = f64::INFINITY;
        for j in 0..self.codebook_size {
            let code = self.code(stage, j);
            let d = if self.l2_normalize {
                let c = normalized(code);
                sq_dist(&query, &c)
            } else {
                sq_dist(&query, code)
            };
            if d < best_d {
                best_d = d;
                best = j;
            }
        }
        best
    }

    pub(crate) fn dequantize_index(&self, stage: usize, index: usize) -> Vec<f64> {
        self.project_out(stage, self.code(stage, index))
    }

    pub(crate) fn in_proj_raw(&self) -> &[f64] {
        &self.in_proj
    }

    pub(crate) fn out_proj_raw(&self) -> &[f64] {
        &self.out_proj
    }

    pub(crate) fn codes_raw(&self) -> &[f64] {
        &self.codes
    }
}

fn normalized(v: &[f64]) -> Vec<f64> {
    let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if n > 0.0 {
        v.iter().map(|x| x / n).collect()
    } else {
        v.to_vec()
    }
}

pub(crate) fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// `latent_dim x T` latent frames, stored frame by frame.
#[derive(Debug, Clone, PartialEq)]
pub struct LatentSequence {
    dim: usize,
    data: Vec<f64>,
    pub frame_rate: f64,
}

impl LatentSequence {
    /// `data` holds `T` frames of `dim` values each, frame-contiguous.
    pub fn new(dim: usize, data: Vec<f64>, frame_rate: f64) -> Result<Self> {
        if dim == 0 || data.is_empty() || data.len() % dim != 0 {
            return Err(Error::ShapeMismatch(format!(
                "{} values do not form frames of dimension {dim}",
                data.len()
            )));
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("latent sequence"));
        }
        Ok(Self {
            dim,
            data,
            frame_rate,
        })
    }

    pub fn from_frames(frames: &[Vec<f64>], frame_rate: f64) -> Result<Self> {
        let dim = frames.first().map(Vec::len).unwrap_or(0);
        if frames.iter().any(|f| f.len() != dim) {
            return Err(Error::ShapeMismatch("ragged latent frames".into()));
        }
        Self::new(dim, frames.concat(), frame_rate)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn frames(&self) -> usize {
        self.data.len() / self.dim
    }

    pub fn frame(&self, t: usize) -> &[f64] {
        &self.data[t * self.dim..(t + 1) * self.dim]
    }

    pub fn iter_frames(&self) -> impl Iterator<Item = &[f64]> {
        self.data.chunks_exact(self.dim)
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }
}

/// Per-frame codebook indices; frame `t` lists the indices of its first `n_q[t]` stages.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct FrameCodes {
    n_q_max: usize,
    frames: Vec<Vec<u32>>,
}

impl FrameCodes {
    pub fn new(n_q_max: usize, frames: Vec<Vec<u32>>) -> Result<Self> {
        for f in &frames {
            if f.is_empty() || f.len() > n_q_max {
                return Err(Error::CountOutOfRange {
                    count: f.len(),
                    max: n_q_max,
                });
            }
        }
        Ok(Self { n_q_max, frames })
    }

    pub fn n_q_max(&self) -> usize {
        self.n_q_max
    }

    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }

    pub fn frame(&self, t: usize) -> &[u32] {
        &self.frames[t]
    }

    pub fn frames(&self) -> &[Vec<u32>] {
        &self.frames
    }

    pub fn counts(&self) -> Vec<usize> {
        self.frames.iter().map(Vec::len).collect()
    }

    pub fn mean_count(&self) -> f64 {
        if self.frames.is_empty() {
            return 0.0;
        }
        self.frames.iter().map(Vec::len).sum::<usize>() as f64 / self.frames.len() as f64
    }
}

/// Quantizes one query with a single stage, returning the index and the
/// de-projected code.
pub fn vq_lookup(query: &[f64], stage: usize, stack: &CodebookStack) -> Result<(usize, Vec<f64>)> {
    stack.check_stage(stage)?;
    if query.len() != stack.latent_dim {
        return Err(Error::ShapeMismatch(format!(
            "query has {} entries, expected {}",
            query.len(),
            stack.latent_dim
        )));
    }
    if query.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("query"));
    }
    let idx = stack.nearest(stage, &stack.project_in(stage, query));
    Ok((idx, stack.dequantize_index(stage, idx)))
}

/// Stage outputs for a single frame.
#[derive(Debug, Clone, PartialEq)]
pub struct FrameQuantization {
    pub indices: Vec<u32>,
    /// `Q_i(r_i)` per stage, in latent space.
    pub stage_outputs: Vec<Vec<f64>>,
    /// `r_i` per stage, plus the final residual after the last computed stage.
    pub residuals: Vec<Vec<f64>>,
}

/// Runs the residual recurrence over the first `stages` quantizers.
pub fn quantize_frame(frame: &[f64], stages: usize, stack: &CodebookStack) -> FrameQuantization {
    let mut residual = frame.to_vec();
    let mut indices = Vec::with_capacity(stages);
    let mut stage_outputs = Vec::with_capacity(stages);
    let mut residuals = Vec::with_capacity(stages + 1);
    for i in 0..stages {
        let idx = stack.nearest(i, &stack.project_in(i, &residual));
        let q = stack.dequantize_index(i, idx);
        residuals.push(residual.clone());
        for (r, v) in residual.iter_mut().zip(&q) {
            *r -= v;
        }
        indices.push(idx as u32);
        stage_outputs.push(q);
    }
    residuals.push(residual);
    FrameQuantization {
        indices,
        stage_outputs,
        residuals,
    }
}

fn check_latent(z_e: &LatentSequence, stack: &CodebookStack) -> Result<()> {
    if z_e.dim() != stack.latent_dim {
        return Err(Error::ShapeMismatch(format!(
            "latent dimension {} does not match codebook latent dimension {}",
            z_e.dim(),
            stack.latent_dim
        )));
    }
    Ok(())
}

fn encode_with_counts(
    z_e: &LatentSequence,
    counts: impl Iterator<Item = usize>,
    stack: &CodebookStack,
) -> Result<(FrameCodes, LatentSequence)> {
    let mut frames = Vec::with_capacity(z_e.frames());
    let mut recon = Vec::with_capacity(z_e.as_slice().len());
    for (frame, n) in z_e.iter_frames().zip(counts) {
        let fq = quantize_frame(frame, n, stack);
        let mut z_q = vec![0.0; z_e.dim()];
        for q in &fq.stage_outputs {
            for (a, b) in z_q.iter_mut().zip(q) {
                *a += b;
            }
        }
        recon.extend(z_q);
        frames.push(fq.indices);
    }
    Ok((
        FrameCodes::new(stack.n_q, frames)?,
        LatentSequence::new(z_e.dim(), recon, z_e.frame_rate)?,
    ))
}

/// Constant-rate encoding with the first `n_active` stages.
pub fn rvq_encode(
    z_e: &LatentSequence,
    n_active: usize,
    stack: &CodebookStack,
) -> Result<(FrameCodes, LatentSequence)> {
    if n_active == 0 || n_active > stack.n_q {
        return Err(Error::CountOutOfRange {
            count: n_active,
            max: stack.n_q,
        });
    }
    check_latent(z_e, stack)?;
    encode_with_counts(z_e, std::iter::repeat(n_active), stack)
}

/// Masked encoding: frame `t` sums the outputs of its active stages. The
/// recurrence stops after the last active stage, so only active indices are
/// produced.
pub fn masked_rvq(
    z_e: &LatentSequence,
    mask: &CodeMask,
    stack: &CodebookStack,
) -> Result<(FrameCodes, LatentSequence)> {
    check_latent(z_e, stack)?;
    if mask.n_q() != stack.n_q || mask.frames() != z_e.frames() {
        return Err(Error::ShapeMismatch(format!(
            "mask is {} x {}, expected {} x {}",
            mask.n_q(),
            mask.frames(),
            stack.n_q,
            z_e.frames()
        )));
    }
    encode_with_counts(z_e, mask.counts().into_iter(), stack)
}

/// Reconstructs latents from transmitted indices.
pub fn dequantize(codes: &FrameCodes, stack: &CodebookStack, frame_rate: f64) -> Result<LatentSequence> {
    if codes.n_q_max() != stack.n_q {
        return Err(Error::ShapeMismatch(format!(
            "codes use {} stages, codebook stack has {}",
            codes.n_q_max(),
            stack.n_q
        )));
    }
    let mut data = Vec::with_capacity(codes.len() * stack.latent_dim);
    for frame in codes.frames() {
        let mut z = vec![0.0; stack.latent_dim];
        for (i, &idx) in frame.iter().enumerate() {
            if idx as usize >= stack.codebook_size {
                return Err(Error::IndexOverflow {
                    index: idx,
                    bits: stack.codebook_bits(),
                });
            }
            for (a, b) in z.iter_mut().zip(stack.dequantize_index(i, idx as usize)) {
                *a += b;
            }
        }
        data.extend(z);
    }
    if data.is_empty() {
        return Err(Error::ShapeMismatch("no frames to dequantize".into()));
    }
    LatentSequence::new(stack.latent_dim, data, frame_rate)
}
