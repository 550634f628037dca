//! Joint rate-distortion training.

mod corpus;

pub use corpus::{FrameLabel, Segment, SynthCorpus};

use log::{debug, info};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::importance::{rate_loss, sample_gamma, sample_scale, ScalingSpec, SurrogateSpec};
use crate::metrics::MultiScaleStft;
use crate::model::{ForwardTrace, GradientSeeds, MaskSource, ModelConfig, ToyCodec};
use crate::quantizer::{fit_codebooks, CodebookStack, FitReport, LatentSequence};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Optimizer {
    /// Heavy-ball momentum SGD.
    Sgd,
    /// Adam with `beta1 = momentum`, `beta2 = 0.999`, `eps = 1e-8`.
    Adam,
}

struct OptState {
    kind: Optimizer,
    m: Vec<f64>,
    v: Vec<f64>,
    t: i32,
}

impl OptState {
    fn new(kind: Optimizer, n: usize) -> Self {
        Self {
            kind,
            m: vec![0.0; n],
            v: if kind == Optimizer::Adam { vec![0.0; n] } else { Vec::new() },
            t: 0,
        }
    }

    fn step(&mut self, params: &mut [f64], grad: &[f64], lr: f64, momentum: f64) {
        self.t += 1;
        match self.kind {
            Optimizer::Sgd => {
                for ((p, m), g) in params.iter_mut().zip(&mut self.m).zip(grad) {
                    *m = momentum * *m + g;
                    *p -= lr * *m;
                }
            }
            Optimizer::Adam => {
                const B2: f64 = 0.999;
                let c1 = 1.0 - momentum.powi(self.t);
                let c2 = 1.0 - B2.powi(self.t);
                for (((p, m), v), g) in params.iter_mut().zip(&mut self.m).zip(&mut self.v).zip(grad) {
                    *m = momentum * *m + (1.0 - momentum) * g;
                    *v = B2 * *v + (1.0 - B2) * g * g;
                    *p -= lr * (*m / c1) / ((*v / c2).sqrt() + 1e-8);
                }
            }
        }
    }
}

/// Scaling operator family used when sampling per-item scales.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ScalingKind {
    Linear,
    Exponential,
    Transformed,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LossWeights {
    /// Mean squared sample error.
    pub waveform: f64,
    /// Multiscale STFT magnitude L1.
    pub spectral: f64,
    /// `|z_e - sg(z_q)|^2` per latent entry.
    pub commitment: f64,
    /// `|sg(r_i) - c|^2` in lookup space, updating the selected codes only.
    pub codebook: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self {
            waveform: 1000.0,
            spectral: 10.0,
            commitment: 0.25,
            codebook: 1.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub beta: f64,
    pub l_min: f64,
    pub l_max: f64,
    pub gamma_min: f64,
    pub gamma_max: f64,
    pub scaling: ScalingKind,
    pub steps: usize,
    pub batch: usize,
    pub optimizer: Optimizer,
    pub learn_rate: f64,
    pub momentum: f64,
    pub seed: u64,
    pub surrogate: SurrogateSpec,
    pub weights: LossWeights,
    pub stft_windows: Vec<usize>,
    pub model: ModelConfig,
    pub n_q: usize,
    pub codebook_size: usize,
    pub code_dim: usize,
    pub l2_normalize: bool,
    pub kmeans_iters: usize,
    /// Segments whose latents seed the codebooks.
    pub init_segments: usize,
    pub segment_frames: usize,
    pub silence_fraction: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            beta: 2.0,
            l_min: 1.0,
            l_max: 48.0,
            gamma_min: 0.1,
            gamma_max: 6.0,
            scaling: ScalingKind::Linear,
            steps: 2000,
            batch: 8,
            optimizer: Optimizer::Adam,
            learn_rate: 1e-3,
            momentum: 0.9,
            seed: 0,
            surrogate: SurrogateSpec::Smooth { alpha: 2.0 },
            weights: LossWeights::default(),
            stft_windows: vec![512, 2048],
            model: ModelConfig::default(),
            n_q: 8,
            codebook_size: 1024,
            code_dim: 8,
            l2_normalize: false,
            kmeans_iters: 10,
            init_segments: 64,
            segment_frames: 16,
            silence_fraction: 0.4,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let w = &self.weights;
        let finite = [
            self.beta,
            self.l_min,
            self.l_max,
            self.gamma_min,
            self.gamma_max,
            self.learn_rate,
            self.momentum,
            w.waveform,
            w.spectral,
            w.commitment,
            w.codebook,
        ];
        if finite.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidArgument("non-finite training setting".into()));
        }
        if self.beta < 0.0 {
            return Err(Error::InvalidArgument(format!("beta {} is negative", self.beta)));
        }
        if !(self.l_min > 0.0 && self.l_min <= self.l_max) {
            return Err(Error::InvalidArgument(format!(
                "scale bounds [{}, {}] are invalid",
                self.l_min, self.l_max
            )));
        }
        if !(self.gamma_min > 0.0 && self.gamma_min <= self.gamma_max) {
            return Err(Error::InvalidArgument(format!(
                "gamma bounds [{}, {}] are invalid",
                self.gamma_min, self.gamma_max
            )));
        }
        if self.steps == 0 || self.batch == 0 {
            return Err(Error::InvalidArgument("steps and batch must be at least 1".into()));
        }
        if self.learn_rate < 0.0 || !(0.0..1.0).contains(&self.momentum) {
            return Err(Error::InvalidArgument("learn_rate must be >= 0 and momentum in [0, 1)".into()));
        }
        if [w.waveform, w.spectral, w.commitment, w.codebook].iter().any(|v| *v < 0.0) {
            return Err(Error::InvalidArgument("loss weights must be non-negative".into()));
        }
        if self.n_q == 0 || self.n_q > 64 || self.segment_frames == 0 || self.init_segments == 0 || self.kmeans_iters == 0 {
            return Err(Error::InvalidArgument("n_q, segment_frames, init_segments and kmeans_iters must be positive".into()));
        }
        self.model.validate()?;
        let samples = self.segment_frames * self.model.window;
        if let Some(big) = self.stft_windows.iter().find(|n| **n > samples) {
            return Err(Error::InvalidArgument(format!(
                "STFT window {big} is longer than a {samples}-sample segment"
            )));
        }
        MultiScaleStft::new(&self.stft_windows)?;
        CodebookStack::new(self.n_q, self.codebook_size, self.code_dim, self.model.latent_dim)?;
        if !(0.0..1.0).contains(&self.silence_fraction) {
            return Err(Error::InvalidArgument("silence_fraction must be in [0, 1)".into()));
        }
        Ok(())
    }

    pub fn corpus(&self) -> Result<SynthCorpus> {
        SynthCorpus::new(
            self.seed,
            self.segment_frames,
            self.model.window,
            self.model.sample_rate,
            self.silence_fraction,
        )
    }

    fn sample_scaling(&self, rng: &mut ChaCha8Rng) -> Result<(ScalingSpec, f64)> {
        let l = match sample_scale(rng, self.l_min, self.l_max)? {
            ScalingSpec::Linear { l } => l,
            _ => unreachable!("sample_scale returns a linear operator"),
        };
        Ok(match self.scaling {
            ScalingKind::Linear => (ScalingSpec::Linear { l }, l),
            ScalingKind::Exponential => {
                let g = sample_gamma(rng, self.gamma_min, self.gamma_max)?;
                (ScalingSpec::Exponential { gamma: g }, g)
            }
            ScalingKind::Transformed => {
                let g = sample_gamma(rng, self.gamma_min, self.gamma_max)?;
                (ScalingSpec::Transformed { gamma: g }, g)
            }
        })
    }
}

/// Scalar loss terms of one item.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct LossTerms {
    pub total: f64,
    /// Weighted sum of the four distortion terms.
    pub distortion: f64,
    pub waveform: f64,
    pub spectral: f64,
    pub commitment: f64,
    pub codebook: f64,
    pub rate: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LossGradients {
    pub seeds: GradientSeeds,
    /// `dL/dcode`, laid out `[stage][index][dim]`.
    pub codes: Vec<f64>,
}

/// `L_D + beta * L_R` for one trace and the gradient seeds for the backward pass.
pub fn total_loss(
    trace: &ForwardTrace,
    stack: &CodebookStack,
    config: &TrainConfig,
    stft: &MultiScaleStft,
) -> Result<(LossTerms, LossGradients)> {
    let w = &config.weights;
    let mut seeds = GradientSeeds::zeros(trace);
    let n = trace.x.len() as f64;

    let mut waveform = 0.0;
    for ((g, y), x) in seeds.x_hat.iter_mut().zip(&trace.x_hat).zip(&trace.x) {
        let d = y - x;
        waveform += d * d / n;
        *g = w.waveform * 2.0 * d / n;
    }

    let mut spectral = 0.0;
    if w.spectral != 0.0 {
        let (l, g) = stft.loss_and_grad(&trace.x, &trace.x_hat)?;
        spectral = l;
        for (a, b) in seeds.x_hat.iter_mut().zip(g) {
            *a += w.spectral * b;
        }
    }

    let m = trace.z_e.as_slice().len() as f64;
    let mut commitment = 0.0;
    for ((g, e), q) in seeds.z_e.iter_mut().zip(trace.z_e.as_slice()).zip(trace.z_q.as_slice()) {
        let d = e - q;
        commitment += d * d / m;
        *g = w.commitment * 2.0 * d / m;
    }

    let frames = trace.frames as f64;
    let code_dim = stack.code_dim();
    let mut codes = vec![0.0; stack.n_q() * stack.codebook_size() * code_dim];
    let mut codebook = 0.0;
    for t in 0..trace.frames {
        for i in 0..stack.n_q() {
            if !trace.mask.get(i, t) {
                continue;
            }
            let idx = trace.stage_indices[t][i] as usize;
            let target = stack.project_in(i, &trace.stage_inputs[t][i]);
            let off = (i * stack.codebook_size() + idx) * code_dim;
            for (d, (c, r)) in stack.code(i, idx).iter().zip(&target).enumerate() {
                let diff = c - r;
                codebook += diff * diff / (frames * code_dim as f64);
                codes[off + d] += w.codebook * 2.0 * diff / (frames * code_dim as f64);
            }
        }
    }

    let rate = rate_loss(&trace.p)?;
    for g in &mut seeds.p {
        *g = config.beta / frames;
    }

    let distortion =
        w.waveform * waveform + w.spectral * spectral + w.commitment * commitment + w.codebook * codebook;
    Ok((
        LossTerms {
            total: distortion + config.beta * rate,
            distortion,
            waveform,
            spectral,
            commitment,
            codebook,
            rate,
        },
        LossGradients { seeds, codes },
    ))
}

/// One row of the training log.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LogRow {
    pub step: usize,
    pub loss: f64,
    pub distortion: f64,
    pub rate_loss: f64,
    pub mean_nq: f64,
    /// Mean sampled scale (or exponent, for the non-linear operators).
    pub l_mean: f64,
}

pub const LOG_HEADER: &str = "step,loss,distortion,rate_loss,mean_nq,l_mean";

impl LogRow {
    pub fn csv(&self) -> String {
        format!(
            "{},{},{},{},{},{}",
            self.step, self.loss, self.distortion, self.rate_loss, self.mean_nq, self.l_mean
        )
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Trained {
    pub model: ToyCodec,
    pub stack: CodebookStack,
    pub log: Vec<LogRow>,
    pub init_report: FitReport,
}

impl Trained {
    pub fn log_csv(&self) -> String {
        let mut s = String::from(LOG_HEADER);
        s.push('\n');
        for row in &self.log {
            s.push_str(&row.csv());
            s.push('\n');
        }
        s
    }
}

/// Fresh model plus codebooks fitted by k-means to its initial latents.
pub fn initialize(config: &TrainConfig, corpus: &SynthCorpus) -> Result<(ToyCodec, CodebookStack, FitReport)> {
    config.validate()?;
    let model = ToyCodec::new(config.model.clone(), config.seed)?;
    // init segments are drawn from the tail of the index space, away from training batches
    let latents: Vec<LatentSequence> = corpus
        .segments(u64::MAX - config.init_segments as u64, config.init_segments)
        .iter()
        .map(|s| model.analyze(&s.samples).map(|(_, z)| z))
        .collect::<Result<_>>()?;
    let base = CodebookStack::new(config.n_q, config.codebook_size, config.code_dim, config.model.latent_dim)?
        .with_l2_normalize(config.l2_normalize);
    let (stack, report) = fit_codebooks(&latents, &base, config.kmeans_iters, config.seed)?;
    Ok((model, stack, report))
}

struct ItemResult {
    terms: LossTerms,
    grad: Vec<f64>,
    code_grad: Vec<f64>,
    mean_nq: f64,
    scale: f64,
}

/// Runs `config.steps` optimizer updates. Deterministic under
/// `config.seed` regardless of thread count.
pub fn train_loop(corpus: &SynthCorpus, config: &TrainConfig) -> Result<Trained> {
    let (model, stack, report) = initialize(config, corpus)?;
    train_from(model, stack, report, corpus, config)
}

/// Continues training from given parameters.
pub fn train_from(
    mut model: ToyCodec,
    mut stack: CodebookStack,
    init_report: FitReport,
    corpus: &SynthCorpus,
    config: &TrainConfig,
) -> Result<Trained> {
    config.validate()?;
    let stft = MultiScaleStft::new(&config.stft_windows)?;
    let n_params = model.layout().total;
    let n_codes = stack.n_q() * stack.codebook_size() * stack.code_dim();
    let mut opt = OptState::new(config.optimizer, n_params);
    let mut code_opt = OptState::new(config.optimizer, n_codes);
    let mut log = Vec::with_capacity(config.steps);
    info!(
        "training {} steps, batch {}, {} parameters",
        config.steps,
        config.batch,
        model.layout().total
    );

    for step in 0..config.steps {
        let items: Vec<ItemResult> = (0..config.batch)
            .into_par_iter()
            .map(|b| {
                let index = (step * config.batch + b) as u64;
                let mut rng = ChaCha8Rng::seed_from_u64(config.seed ^ 0x5eed_5ca1e);
                rng.set_stream(index);
                let (spec, scale) = config.sample_scaling(&mut rng)?;
                let seg = corpus.segment(index);
                let trace = model.forward(&seg.samples, &stack, &MaskSource::Importance(spec), &config.surrogate)?;
                let (terms, grads) = total_loss(&trace, &stack, config, &stft)?;
                let grad = model.backward(&trace, &grads.seeds)?;
                Ok(ItemResult {
                    terms,
                    grad,
                    code_grad: grads.codes,
                    mean_nq: trace.mask.mean_count(),
                    scale,
                })
            })
            .collect::<Result<_>>()
            .map_err(|e| match e {
                Error::NonFinite(_) => Error::Divergence { step, loss: f64::NAN },
                e => e,
            })?;

        let inv = 1.0 / config.batch as f64;
        let mut row = LogRow {
            step,
            loss: 0.0,
            distortion: 0.0,
            rate_loss: 0.0,
            mean_nq: 0.0,
            l_mean: 0.0,
        };
        let mut grad = vec![0.0; n_params];
        let mut code_grad = vec![0.0; n_codes];
        for it in &items {
            row.loss += it.terms.total * inv;
            row.distortion += it.terms.distortion * inv;
            row.rate_loss += it.terms.rate * inv;
            row.mean_nq += it.mean_nq * inv;
            row.l_mean += it.scale * inv;
            for (a, b) in grad.iter_mut().zip(&it.grad) {
                *a += b * inv;
            }
            for (a, b) in code_grad.iter_mut().zip(&it.code_grad) {
                *a += b * inv;
            }
        }
        if !row.loss.is_finite() || grad.iter().any(|g| !g.is_finite()) {
            return Err(Error::Divergence { step, loss: row.loss });
        }

        if config.learn_rate != 0.0 {
            opt.step(model.params_mut(), &grad, config.learn_rate, config.momentum);
            let mut codes = stack.codes_flat();
            code_opt.step(&mut codes, &code_grad, config.learn_rate, config.momentum);
            stack
                .set_codes_flat(&codes)
                .map_err(|_| Error::Divergence { step, loss: row.loss })?;
            if model.params().iter().any(|v| !v.is_finite()) {
                return Err(Error::Divergence { step, loss: row.loss });
            }
        }
        if step % 100 == 0 || step + 1 == config.steps {
            debug!(
                "step {step}: loss {:.5} distortion {:.5} rate {:.4} mean n_q {:.3}",
                row.loss, row.distortion, row.rate_loss, row.mean_nq
            );
        }
        log.push(row);
    }
    Ok(Trained {
        model,
        stack,
        log,
        init_report,
    })
}

/// Mean active-stage count per frame label at inference.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct Allocation {
    pub silence: f64,
    pub tonal: f64,
    pub noise: f64,
}

impl Allocation {
    /// Tonal minus silence allocation.
    pub fn margin(&self) -> f64 {
        self.tonal - self.silence
    }
}

pub fn allocation_by_label(
    model: &ToyCodec,
    stack: &CodebookStack,
    segments: &[Segment],
    scale: &ScalingSpec,
) -> Result<Allocation> {
    let mut sums = [0.0; 3];
    let mut counts = [0usize; 3];
    for seg in segments {
        let (p, _) = model.analyze(&seg.samples)?;
        let mask = crate::importance::i2m(&p, scale, stack.n_q())?;
        for (label, n) in seg.labels.iter().zip(mask.counts()) {
            let k = match label {
                FrameLabel::Silence => 0,
                FrameLabel::Tonal => 1,
                FrameLabel::Noise => 2,
            };
            sums[k] += n as f64;
            counts[k] += 1;
        }
    }
    let mean = |k: usize| if counts[k] > 0 { sums[k] / counts[k] as f64 } else { f64::NAN };
    Ok(Allocation {
        silence: mean(0),
        tonal: mean(1),
        noise: mean(2),
    })
}

/// Moving average over `window` entries; shorter than the input by `window - 1`.
pub fn smoothed(values: &[f64], window: usize) -> Vec<f64> {
    if window == 0 || values.len() < window {
        return Vec::new();
    }
    values.windows(window).map(|w| w.iter().sum::<f64>() / window as f64).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::importance::ImportanceMap;

    pub(crate) fn tiny_config() -> TrainConfig {
        TrainConfig {
            steps: 5,
            batch: 2,
            learn_rate: 0.01,
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
            ..TrainConfig::default()
        }
    }

    fn tiny_trace(config: &TrainConfig) -> (ToyCodec, CodebookStack, ForwardTrace) {
        let corpus = config.corpus().unwrap();
        let (model, stack, _) = initialize(config, &corpus).unwrap();
        let trace = model
            .forward(
                &corpus.segment(3).samples,
                &stack,
                &MaskSource::Importance(ScalingSpec::Linear { l: 5.0 }),
                &config.surrogate,
            )
            .unwrap();
        (model, stack, trace)
    }

    #[test]
    fn validation() {
        assert!(TrainConfig::default().validate().is_ok());
        assert!(tiny_config().validate().is_ok());
        let bad = [
            TrainConfig { beta: -1.0, ..tiny_config() },
            TrainConfig { l_min: 5.0, l_max: 2.0, ..tiny_config() },
            TrainConfig { steps: 0, ..tiny_config() },
            TrainConfig { stft_windows: vec![64], ..tiny_config() },
            TrainConfig { silence_fraction: 1.0, ..tiny_config() },
            TrainConfig { codebook_size: 6, ..tiny_config() },
        ];
        for c in bad {
            assert!(c.validate().is_err(), "{c:?}");
        }
    }

    #[test]
    fn beta_zero_is_distortion_only() {
        let config = TrainConfig { beta: 0.0, ..tiny_config() };
        let (_, stack, trace) = tiny_trace(&config);
        let stft = MultiScaleStft::new(&config.stft_windows).unwrap();
        let (terms, grads) = total_loss(&trace, &stack, &config, &stft).unwrap();
        assert_eq!(terms.total, terms.distortion);
        assert!(grads.seeds.p.iter().all(|g| *g == 0.0));
    }

    #[test]
    fn constant_map_without_distortion_costs_beta_c() {
        let config = TrainConfig {
            weights: LossWeights {
                waveform: 0.0,
                spectral: 0.0,
                commitment: 0.0,
                codebook: 0.0,
            },
            ..tiny_config()
        };
        let (_, stack, mut trace) = tiny_trace(&config);
        trace.p = ImportanceMap::constant(0.35, trace.frames).unwrap();
        let stft = MultiScaleStft::new(&config.stft_windows).unwrap();
        let (terms, _) = total_loss(&trace, &stack, &config, &stft).unwrap();
        assert!((terms.total - 2.0 * 0.35).abs() < 1e-15);
    }

    #[test]
    fn terms_match_independent_recomputation() {
        let config = tiny_config();
        let (_, stack, trace) = tiny_trace(&config);
        let stft = MultiScaleStft::new(&config.stft_windows).unwrap();
        let (terms, _) = total_loss(&trace, &stack, &config, &stft).unwrap();

        let n = trace.x.len() as f64;
        let wave: f64 = trace.x.iter().zip(&trace.x_hat).map(|(a, b)| (a - b).powi(2)).sum::<f64>() / n;
        let spec = crate::metrics::spectral_l1(&trace.x, &trace.x_hat, &[16, 32]).unwrap();
        let ze = trace.z_e.as_slice();
        let commit: f64 =
            ze.iter().zip(trace.z_q.as_slice()).map(|(a, b)| (a - b).powi(2)).sum::<f64>() / ze.len() as f64;
        let mut cb = 0.0;
        for t in 0..trace.frames {
            for i in 0..trace.mask.counts()[t] {
                let c = stack.code(i, trace.stage_indices[t][i] as usize);
                let r = &trace.stage_inputs[t][i];
                cb += c.iter().zip(r).map(|(a, b)| (a - b).powi(2)).sum::<f64>();
            }
        }
        cb /= (trace.frames * 4) as f64;
        let rate = trace.p.values().iter().sum::<f64>() / trace.frames as f64;
        let w = &config.weights;
        let want = w.waveform * wave + w.spectral * spec + w.commitment * commit + w.codebook * cb + 2.0 * rate;
        assert!((terms.total - want).abs() < 1e-12, "{} vs {want}", terms.total);
    }

    #[test]
    fn zero_learning_rate_freezes_everything() {
        let config = TrainConfig { learn_rate: 0.0, ..tiny_config() };
        let corpus = config.corpus().unwrap();
        let (model, stack, _) = initialize(&config, &corpus).unwrap();
        let out = train_loop(&corpus, &config).unwrap();
        assert_eq!(out.model, model);
        assert_eq!(out.stack, stack);
        assert_eq!(out.log.len(), 5);
    }

    #[test]
    fn training_is_deterministic() {
        let config = tiny_config();
        let corpus = config.corpus().unwrap();
        let a = train_loop(&corpus, &config).unwrap();
        let b = train_loop(&corpus, &config).unwrap();
        assert_eq!(a.model.to_bytes(), b.model.to_bytes());
        assert_eq!(a.stack.to_bytes(), b.stack.to_bytes());
        assert_eq!(a.log_csv(), b.log_csv());
    }

    #[test]
    fn divergence_is_reported() {
        let config = TrainConfig { learn_rate: 1e200, steps: 3, ..tiny_config() };
        let corpus = config.corpus().unwrap();
        let r = train_loop(&corpus, &config);
        assert!(matches!(r, Err(Error::Divergence { .. })), "{r:?}");
    }

    #[test]
    fn smoothing() {
        assert_eq!(smoothed(&[1.0, 2.0, 3.0, 4.0], 2), vec![1.5, 2.5, 3.5]);
        assert!(smoothed(&[1.0], 2).is_empty());
    }
}
