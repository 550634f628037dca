//! `key = value` run configuration.
//!
//! Lines are `key = value`; `#` starts a comment. Unknown or repeated keys
//! are errors. Lists are comma separated. [`render`] writes every key in a
//! fixed order, and the SHA-256 of that text identifies the configuration.

use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::importance::SurrogateSpec;
use crate::train::{Optimizer, ScalingKind, TrainConfig};

const KEYS: &[&str] = &[
    "beta",
    "l_min",
    "l_max",
    "gamma_min",
    "gamma_max",
    "scaling",
    "steps",
    "batch",
    "optimizer",
    "learn_rate",
    "momentum",
    "seed",
    "surrogate",
    "alpha",
    "w_waveform",
    "w_spectral",
    "w_commitment",
    "w_codebook",
    "stft_windows",
    "window",
    "hidden",
    "latent_dim",
    "sample_rate",
    "ep_channels",
    "ep_kernels",
    "n_q",
    "codebook_size",
    "code_dim",
    "l2_normalize",
    "kmeans_iters",
    "init_segments",
    "segment_frames",
    "silence_fraction",
];

fn list(v: &[usize]) -> String {
    v.iter().map(usize::to_string).collect::<Vec<_>>().join(",")
}

fn value_of(c: &TrainConfig, key: &str) -> String {
    let w = &c.weights;
    let m = &c.model;
    match key {
        "beta" => c.beta.to_string(),
        "l_min" => c.l_min.to_string(),
        "l_max" => c.l_max.to_string(),
        "gamma_min" => c.gamma_min.to_string(),
        "gamma_max" => c.gamma_max.to_string(),
        "scaling" => match c.scaling {
            ScalingKind::Linear => "linear",
            ScalingKind::Exponential => "exponential",
            ScalingKind::Transformed => "transformed",
        }
        .into(),
        "steps" => c.steps.to_string(),
        "batch" => c.batch.to_string(),
        "optimizer" => match c.optimizer {
            Optimizer::Sgd => "sgd",
            Optimizer::Adam => "adam",
        }
        .into(),
        "learn_rate" => c.learn_rate.to_string(),
        "momentum" => c.momentum.to_string(),
        "seed" => c.seed.to_string(),
        "surrogate" => match c.surrogate {
            SurrogateSpec::Identity => "identity",
            SurrogateSpec::Smooth { .. } => "smooth",
        }
        .into(),
        "alpha" => match c.surrogate {
            SurrogateSpec::Smooth { alpha } => alpha.to_string(),
            SurrogateSpec::Identity => "0".into(),
        },
        "w_waveform" => w.waveform.to_string(),
        "w_spectral" => w.spectral.to_string(),
        "w_commitment" => w.commitment.to_string(),
        "w_codebook" => w.codebook.to_string(),
        "stft_windows" => list(&c.stft_windows),
        "window" => m.window.to_string(),
        "hidden" => m.hidden.to_string(),
        "latent_dim" => m.latent_dim.to_string(),
        "sample_rate" => m.sample_rate.to_string(),
        "ep_channels" => list(&m.ep_channels),
        "ep_kernels" => list(&m.ep_kernels),
        "n_q" => c.n_q.to_string(),
        "codebook_size" => c.codebook_size.to_string(),
        "code_dim" => c.code_dim.to_string(),
        "l2_normalize" => c.l2_normalize.to_string(),
        "kmeans_iters" => c.kmeans_iters.to_string(),
        "init_segments" => c.init_segments.to_string(),
        "segment_frames" => c.segment_frames.to_string(),
        "silence_fraction" => c.silence_fraction.to_string(),
        _ => unreachable!("unlisted key {key}"),
    }
}

/// Canonical text of a configuration: every key, one per line, fixed order.
pub fn render(c: &TrainConfig) -> String {
    KEYS.iter().map(|k| format!("{k} = {}\n", value_of(c, k))).collect()
}

pub fn config_hash(c: &TrainConfig) -> [u8; 32] {
    Sha256::digest(render(c).as_bytes()).into()
}

pub fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

fn bad(line: usize, key: &str, value: &str) -> Error {
    Error::Config(format!("line {line}: invalid value `{value}` for `{key}`"))
}

fn num<T: std::str::FromStr>(line: usize, key: &str, value: &str) -> Result<T> {
    value.parse().map_err(|_| bad(line, key, value))
}

fn real(line: usize, key: &str, value: &str) -> Result<f64> {
    let v: f64 = num(line, key, value)?;
    if !v.is_finite() {
        return Err(bad(line, key, value));
    }
    Ok(v)
}

fn usizes(line: usize, key: &str, value: &str) -> Result<Vec<usize>> {
    if value.is_empty() {
        return Ok(Vec::new());
    }
    value.split(',').map(|v| num(line, key, v.trim())).collect()
}

/// Applies one setting to `c`.
pub fn set(c: &mut TrainConfig, key: &str, value: &str, line: usize) -> Result<()> {
    match key {
        "beta" => c.beta = real(line, key, value)?,
        "l_min" => c.l_min = real(line, key, value)?,
        "l_max" => c.l_max = real(line, key, value)?,
        "gamma_min" => c.gamma_min = real(line, key, value)?,
        "gamma_max" => c.gamma_max = real(line, key, value)?,
        "scaling" => {
            c.scaling = match value {
                "linear" => ScalingKind::Linear,
                "exponential" => ScalingKind::Exponential,
                "transformed" => ScalingKind::Transformed,
                _ => return Err(bad(line, key, value)),
            }
        }
        "steps" => c.steps = num(line, key, value)?,
        "batch" => c.batch = num(line, key, value)?,
        "optimizer" => {
            c.optimizer = match value {
                "sgd" => Optimizer::Sgd,
                "adam" => Optimizer::Adam,
                _ => return Err(bad(line, key, value)),
            }
        }
        "learn_rate" => c.learn_rate = real(line, key, value)?,
        "momentum" => c.momentum = real(line, key, value)?,
        "seed" => c.seed = num(line, key, value)?,
        "surrogate" => {
            c.surrogate = match (value, c.surrogate) {
                ("identity", _) => SurrogateSpec::Identity,
                ("smooth", SurrogateSpec::Smooth { alpha }) => SurrogateSpec::Smooth { alpha },
                ("smooth", SurrogateSpec::Identity) => SurrogateSpec::Smooth { alpha: 2.0 },
                _ => return Err(bad(line, key, value)),
            }
        }
        "alpha" => {
            let alpha = real(line, key, value)?;
            // alpha is ignored by the identity surrogate
            if let SurrogateSpec::Smooth { .. } = c.surrogate {
                c.surrogate = SurrogateSpec::smooth(alpha).map_err(|_| bad(line, key, value))?;
            } else if alpha < 0.0 {
                return Err(bad(line, key, value));
            }
        }
        "w_waveform" => c.weights.waveform = real(line, key, value)?,
        "w_spectral" => c.weights.spectral = real(line, key, value)?,
        "w_commitment" => c.weights.commitment = real(line, key, value)?,
        "w_codebook" => c.weights.codebook = real(line, key, value)?,
        "stft_windows" => c.stft_windows = usizes(line, key, value)?,
        "window" => c.model.window = num(line, key, value)?,
        "hidden" => c.model.hidden = num(line, key, value)?,
        "latent_dim" => c.model.latent_dim = num(line, key, value)?,
        "sample_rate" => c.model.sample_rate = num(line, key, value)?,
        "ep_channels" => c.model.ep_channels = usizes(line, key, value)?,
        "ep_kernels" => c.model.ep_kernels = usizes(line, key, value)?,
        "n_q" => c.n_q = num(line, key, value)?,
        "codebook_size" => c.codebook_size = num(line, key, value)?,
        "code_dim" => c.code_dim = num(line, key, value)?,
        "l2_normalize" => c.l2_normalize = num(line, key, value)?,
        "kmeans_iters" => c.kmeans_iters = num(line, key, value)?,
        "init_segments" => c.init_segments = num(line, key, value)?,
        "segment_frames" => c.segment_frames = num(line, key, value)?,
        "silence_fraction" => c.silence_fraction = real(line, key, value)?,
        _ => return Err(Error::Config(format!("line {line}: unknown key `{key}`"))),
    }
    Ok(())
}

/// Parses settings over `base` without validating the result.
pub fn parse_onto(base: TrainConfig, text: &str) -> Result<TrainConfig> {
    let mut c = base;
    let mut seen = Vec::new();
    // `surrogate` decides how `alpha` is read, so it is applied first
    let mut deferred = Vec::new();
    for (n, raw) in text.lines().enumerate() {
        let line = n + 1;
        let body = raw.split('#').next().unwrap_or("").trim();
        if body.is_empty() {
            continue;
        }
        let (key, value) = body
            .split_once('=')
            .ok_or_else(|| Error::Config(format!("line {line}: expected `key = value`")))?;
        let (key, value) = (key.trim(), value.trim());
        if !KEYS.contains(&key) {
            return Err(Error::Config(format!("line {line}: unknown key `{key}`")));
        }
        if seen.contains(&key) {
            return Err(Error::Config(format!("line {line}: `{key}` given twice")));
        }
        seen.push(key);
        if key == "surrogate" {
            set(&mut c, key, value, line)?;
        } else {
            deferred.push((key, value, line));
        }
    }
    for (key, value, line) in deferred {
        set(&mut c, key, value, line)?;
    }
    Ok(c)
}

/// Parses and validates a configuration over the defaults.
pub fn parse_config(text: &str) -> Result<TrainConfig> {
    let c = parse_onto(TrainConfig::default(), text)?;
    c.validate().map_err(|e| Error::Config(e.to_string()))?;
    Ok(c)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn render_round_trips() {
        let mut c = TrainConfig::default();
        c.beta = 0.125;
        c.surrogate = SurrogateSpec::Smooth { alpha: 0.3 };
        c.stft_windows = vec![256, 1024];
        let text = render(&c);
        assert_eq!(text.lines().count(), KEYS.len());
        assert_eq!(parse_config(&text).unwrap(), c);
        let ident = TrainConfig {
            surrogate: SurrogateSpec::Identity,
            ..TrainConfig::default()
        };
        assert_eq!(parse_config(&render(&ident)).unwrap(), ident);
    }

    #[test]
    fn comments_and_partial_files() {
        let c = parse_config("# toy run\nbeta = 8   # heavier rate\n\nsurrogate=identity\n").unwrap();
        assert_eq!(c.beta, 8.0);
        assert_eq!(c.surrogate, SurrogateSpec::Identity);
        assert_eq!(c.l_max, 48.0);
        let c = parse_config("alpha = 4\nsurrogate = smooth").unwrap();
        assert_eq!(c.surrogate, SurrogateSpec::Smooth { alpha: 4.0 });
    }

    #[test]
    fn rejects_bad_files() {
        for text in [
            "colour = blue",
            "beta = 1\nbeta = 2",
            "beta",
            "beta = two",
            "beta = -1",
            "beta = inf",
            "scaling = cubic",
            "alpha = -2",
            "stft_windows = 512,x",
            "codebook_size = 1000",
        ] {
            assert!(matches!(parse_config(text), Err(Error::Config(_))), "{text}");
        }
    }

    #[test]
    fn hash_tracks_content() {
        let a = TrainConfig::default();
        let b = TrainConfig { seed: 1, ..TrainConfig::default() };
        assert_eq!(config_hash(&a), config_hash(&a.clone()));
        assert_ne!(config_hash(&a), config_hash(&b));
        assert_eq!(hex(&[0, 171]), "00ab");
    }
}
