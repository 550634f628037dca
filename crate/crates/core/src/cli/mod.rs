//! Command-line front end: `train`, `encode`, `decode`, `sweep`, `selftest`.

pub mod config;
mod selftest;
pub mod wav;

use std::ffi::OsString;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand, ValueEnum};
use log::{info, warn};
use rayon::prelude::*;
use sha2::{Digest, Sha256};

use crate::bitstream::{self, StreamHeader, EXT_CHECKPOINT_HASH, EXT_CONFIG_HASH, EXT_SAMPLE_COUNT};
use crate::error::{Error, Result};
use crate::importance::{ScalingSpec, SurrogateSpec};
use crate::metrics::{rd_point, MultiScaleStft, RdPoint};
use crate::model::{RateControl, ToyCodec};
use crate::quantizer::CodebookStack;
use crate::train::{train_loop, TrainConfig};

pub use selftest::{run_selftest, SelftestResult};

pub const MODEL_FILE: &str = "model.vrvqnet";
pub const CODEBOOK_FILE: &str = "codebooks.vrvqcbk";
pub const CONFIG_FILE: &str = "config.txt";
pub const LOG_FILE: &str = "train_log.csv";

/// Operating points of the default VBR sweep.
pub const DEFAULT_L_LIST: [f64; 11] = [4.0, 6.0, 8.0, 10.0, 12.0, 14.0, 16.0, 18.0, 20.0, 24.0, 32.0];

pub const SWEEP_HEADER: &str = "mode,l_or_n,kbps,si_sdr,waveform_l1,spectral_l1";

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 1;
pub const EXIT_DATA: i32 = 2;
pub const EXIT_DIVERGENCE: i32 = 3;

#[derive(Debug, Parser)]
#[command(name = "vrvq", version, about = "Variable-bitrate residual vector quantization codec")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ModeArg {
    Vbr,
    Cbr,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum SurrogateArg {
    Identity,
    Smooth,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Train a model on the synthetic corpus and write a checkpoint directory.
    Train {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        alpha: Option<f64>,
        #[arg(long)]
        beta: Option<f64>,
        #[arg(long)]
        steps: Option<usize>,
        #[arg(long, value_enum)]
        surrogate: Option<SurrogateArg>,
        #[arg(long, default_value = "checkpoint")]
        out: PathBuf,
    },
    /// Encode a mono WAV file into a stream.
    Encode {
        input: PathBuf,
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long, default_value_t = 8.0)]
        l: f64,
        #[arg(long, value_enum, default_value_t = ModeArg::Vbr)]
        mode: ModeArg,
        /// Active stages in CBR mode (defaults to all).
        #[arg(long)]
        nq: Option<usize>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Decode a stream into a WAV file.
    Decode {
        input: PathBuf,
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Write 32-bit float samples instead of PCM-16.
        #[arg(long)]
        float: bool,
    },
    /// Rate-distortion sweep over VBR scales and CBR stage counts.
    Sweep {
        #[arg(long)]
        checkpoint: PathBuf,
        /// Directory of mono WAV files; a synthetic corpus is used when absent.
        #[arg(long)]
        corpus: Option<PathBuf>,
        #[arg(long, default_value_t = 32)]
        segments: usize,
        #[arg(long)]
        seed: Option<u64>,
        /// Comma-separated VBR scales.
        #[arg(long, value_delimiter = ',')]
        l: Option<Vec<f64>>,
        /// Comma-separated CBR stage counts.
        #[arg(long, value_delimiter = ',')]
        nq: Option<Vec<usize>>,
        #[arg(long)]
        out: PathBuf,
        /// Also write whitespace-separated blocks for gnuplot.
        #[arg(long)]
        gnuplot: Option<PathBuf>,
    },
    /// Run the randomized property suites.
    Selftest {
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 2000)]
        cases: usize,
    },
}

/// Loaded checkpoint directory.
#[derive(Debug, Clone)]
pub struct Checkpoint {
    pub model: ToyCodec,
    pub stack: CodebookStack,
    pub config: TrainConfig,
}

impl Checkpoint {
    /// SHA-256 over the network file followed by the codebook file.
    pub fn hash(&self) -> [u8; 32] {
        let mut h = Sha256::new();
        h.update(self.model.to_bytes());
        h.update(self.stack.to_bytes());
        h.finalize().into()
    }

    pub fn save(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir)?;
        fs::write(dir.join(MODEL_FILE), self.model.to_bytes())?;
        fs::write(dir.join(CODEBOOK_FILE), self.stack.to_bytes())?;
        fs::write(dir.join(CONFIG_FILE), config::render(&self.config))?;
        Ok(())
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let read = |name: &str| {
            let p = dir.join(name);
            fs::read(&p).map_err(|e| Error::Io(std::io::Error::new(e.kind(), format!("{}: {e}", p.display()))))
        };
        let text = String::from_utf8(read(CONFIG_FILE)?)
            .map_err(|_| Error::Malformed(format!("{CONFIG_FILE} is not UTF-8")))?;
        let config = config::parse_config(&text)?;
        let model = ToyCodec::from_bytes(&read(MODEL_FILE)?)?;
        let stack = CodebookStack::from_bytes(&read(CODEBOOK_FILE)?)?.with_l2_normalize(config.l2_normalize);
        if model.config() != &config.model {
            return Err(Error::Malformed(format!("{MODEL_FILE} does not match {CONFIG_FILE}")));
        }
        if stack.latent_dim() != config.model.latent_dim || stack.n_q() != config.n_q {
            return Err(Error::Malformed(format!("{CODEBOOK_FILE} does not match {CONFIG_FILE}")));
        }
        Ok(Self { model, stack, config })
    }
}

fn echo_config(c: &TrainConfig, extra: &[(&str, String)]) {
    let mut s = String::from("# resolved config\n");
    s.push_str(&config::render(c));
    for (k, v) in extra {
        let _ = writeln!(s, "{k} = {v}");
    }
    eprint!("{s}");
}

fn read_file(path: &Path) -> Result<Vec<u8>> {
    fs::read(path).map_err(|e| Error::Io(std::io::Error::new(e.kind(), format!("{}: {e}", path.display()))))
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir)?;
    }
    fs::write(path, bytes).map_err(|e| Error::Io(std::io::Error::new(e.kind(), format!("{}: {e}", path.display()))))
}

fn rate_control(cp: &Checkpoint, l: f64, mode: ModeArg, nq: Option<usize>) -> Result<RateControl> {
    match mode {
        ModeArg::Vbr => {
            if nq.is_some() {
                return Err(Error::Config("--nq only applies to --mode cbr".into()));
            }
            Ok(RateControl::Vbr(ScalingSpec::linear(l).map_err(|e| Error::Config(e.to_string()))?))
        }
        ModeArg::Cbr => {
            let n = nq.unwrap_or(cp.stack.n_q());
            if n == 0 || n > cp.stack.n_q() {
                return Err(Error::Config(format!("--nq {n} is outside 1..={}", cp.stack.n_q())));
            }
            Ok(RateControl::Cbr(n))
        }
    }
}

pub fn cmd_train(
    config_path: Option<&Path>,
    overrides: &[(&str, String)],
    out: &Path,
) -> Result<(Checkpoint, String)> {
    let mut c = match config_path {
        Some(p) => {
            let bytes = fs::read(p).map_err(|e| Error::Config(format!("cannot read {}: {e}", p.display())))?;
            let text = String::from_utf8(bytes).map_err(|_| Error::Config(format!("{} is not UTF-8", p.display())))?;
            config::parse_onto(TrainConfig::default(), &text)?
        }
        None => TrainConfig::default(),
    };
    for (k, v) in overrides {
        config::set(&mut c, k, v, 0).map_err(|e| Error::Config(format!("--{k}: {e}")))?;
    }
    c.validate().map_err(|e| Error::Config(e.to_string()))?;
    echo_config(&c, &[]);
    let corpus = c.corpus()?;
    let trained = train_loop(&corpus, &c)?;
    let hash = config::hex(&config::config_hash(&c));
    let log = format!("# config_sha256 {hash}\n{}", trained.log_csv());
    let cp = Checkpoint {
        model: trained.model,
        stack: trained.stack,
        config: c,
    };
    cp.save(out)?;
    write_file(&out.join(LOG_FILE), log.as_bytes())?;
    info!("wrote checkpoint {} ({})", out.display(), config::hex(&cp.hash()));
    Ok((cp, log))
}

pub fn cmd_encode(input: &Path, cp: &Checkpoint, rate: RateControl) -> Result<Vec<u8>> {
    let audio = wav::read_wav(&read_file(input)?)?;
    encode_samples(&audio.samples, audio.sample_rate, cp, rate)
}

pub fn encode_samples(samples: &[f64], sample_rate: u32, cp: &Checkpoint, rate: RateControl) -> Result<Vec<u8>> {
    let mc = cp.model.config();
    if sample_rate != mc.sample_rate {
        return Err(Error::Malformed(format!(
            "sample rate {sample_rate} Hz does not match the model's {} Hz",
            mc.sample_rate
        )));
    }
    let (codes, _) = cp.model.encode(samples, &cp.stack, &rate)?;
    let mut header = StreamHeader::new(
        mc.sample_rate,
        mc.window as u32,
        cp.stack.n_q(),
        cp.stack.codebook_bits(),
        rate.stream_mode(),
    );
    header.set_extension(EXT_CHECKPOINT_HASH, cp.hash().to_vec());
    header.set_extension(EXT_CONFIG_HASH, config::config_hash(&cp.config).to_vec());
    header.set_extension(EXT_SAMPLE_COUNT, (samples.len() as u64).to_le_bytes().to_vec());
    bitstream::pack(&codes, &header)
}

pub fn decode_stream(stream: &[u8], cp: &Checkpoint) -> Result<Vec<f64>> {
    let (header, codes) = bitstream::unpack(stream)?;
    let mc = cp.model.config();
    if header.sample_rate != mc.sample_rate
        || header.hop as usize != mc.window
        || header.n_q_max as usize != cp.stack.n_q()
        || header.codebook_bits != cp.stack.codebook_bits()
    {
        return Err(Error::Malformed("stream parameters do not match the checkpoint".into()));
    }
    match header.extension(EXT_CHECKPOINT_HASH) {
        Some(h) if h == cp.hash() => {}
        Some(h) => warn!(
            "stream was encoded with checkpoint {}, decoding with {}",
            config::hex(h),
            config::hex(&cp.hash())
        ),
        None => warn!("stream records no checkpoint hash"),
    }
    let samples = header.sample_count().map(|n| n as usize);
    cp.model.decode(&codes, &cp.stack, samples)
}

pub fn cmd_decode(input: &Path, cp: &Checkpoint, float: bool) -> Result<Vec<u8>> {
    let samples = decode_stream(&read_file(input)?, cp)?;
    wav::write_wav(
        &wav::Audio {
            sample_rate: cp.model.config().sample_rate,
            samples,
            format: if float { wav::WavFormat::Float32 } else { wav::WavFormat::Pcm16 },
        },
        &format!("config_sha256 {}", config::hex(&config::config_hash(&cp.config))),
    )
}

/// Sweep rows in operating-point order: VBR scales, then CBR counts.
pub fn sweep(cp: &Checkpoint, corpus: &[Vec<f64>], l_list: &[f64], n_list: &[usize]) -> Result<Vec<RdPoint>> {
    let windows: Vec<usize> = cp.config.stft_windows.clone();
    let mut rates = Vec::new();
    for &l in l_list {
        rates.push(RateControl::Vbr(ScalingSpec::linear(l).map_err(|e| Error::Config(e.to_string()))?));
    }
    for &n in n_list {
        if n == 0 || n > cp.stack.n_q() {
            return Err(Error::Config(format!("CBR stage count {n} is outside 1..={}", cp.stack.n_q())));
        }
        rates.push(RateControl::Cbr(n));
    }
    rates
        .into_par_iter()
        .map(|r| {
            let stft = MultiScaleStft::new(&windows)?;
            rd_point(&cp.model, &cp.stack, corpus, r, &stft)
        })
        .collect()
}

fn fmt_sdr(p: &RdPoint) -> String {
    if p.si_sdr_db.is_finite() {
        format!("{:.6}", p.si_sdr_db)
    } else if p.perfect > 0 {
        "perfect".into()
    } else {
        "nan".into()
    }
}

pub fn sweep_csv(points: &[RdPoint], config_hash: &str) -> String {
    let mut s = format!("# config_sha256 {config_hash}\n{SWEEP_HEADER}\n");
    for p in points {
        let (mode, x) = match p.rate {
            RateControl::Vbr(ScalingSpec::Linear { l }) => ("vbr", l.to_string()),
            RateControl::Vbr(spec) => ("vbr", format!("{spec:?}")),
            RateControl::Cbr(n) => ("cbr", n.to_string()),
        };
        let _ = writeln!(
            s,
            "{mode},{x},{:.6},{},{:.6},{:.6}",
            p.kbps(),
            fmt_sdr(p),
            p.waveform_l1,
            p.spectral_l1
        );
    }
    s
}

fn gnuplot_blocks(points: &[RdPoint], config_hash: &str) -> String {
    let mut s = format!("# config_sha256 {config_hash}\n# kbps spectral_l1 si_sdr\n");
    for mode in ["vbr", "cbr"] {
        let _ = writeln!(s, "# {mode}");
        for p in points {
            if matches!((mode, p.rate), ("vbr", RateControl::Vbr(_)) | ("cbr", RateControl::Cbr(_))) {
                let _ = writeln!(s, "{:.6} {:.6} {}", p.kbps(), p.spectral_l1, fmt_sdr(p));
            }
        }
        s.push_str("\n\n");
    }
    s
}

fn load_corpus_dir(dir: &Path, sample_rate: u32) -> Result<Vec<Vec<f64>>> {
    let mut paths: Vec<PathBuf> = fs::read_dir(dir)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|e| e.eq_ignore_ascii_case("wav")))
        .collect();
    paths.sort();
    if paths.is_empty() {
        return Err(Error::Malformed(format!("no .wav files in {}", dir.display())));
    }
    paths
        .iter()
        .map(|p| {
            let a = wav::read_wav(&read_file(p)?)?;
            if a.sample_rate != sample_rate {
                return Err(Error::Malformed(format!(
                    "{}: {} Hz does not match the model's {sample_rate} Hz",
                    p.display(),
                    a.sample_rate
                )));
            }
            Ok(a.samples)
        })
        .collect()
}

/// First segment index of the synthetic evaluation corpus, far from the
/// indices used for training batches.
pub const EVAL_OFFSET: u64 = 1 << 40;

fn exit_code(e: &Error) -> i32 {
    match e {
        Error::Divergence { .. } => EXIT_DIVERGENCE,
        Error::Config(_) => EXIT_USAGE,
        _ => EXIT_DATA,
    }
}

fn dispatch(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Train {
            config: cfg,
            seed,
            alpha,
            beta,
            steps,
            surrogate,
            out,
        } => {
            let mut o: Vec<(&str, String)> = Vec::new();
            if let Some(s) = surrogate {
                o.push(("surrogate", if s == SurrogateArg::Identity { "identity" } else { "smooth" }.into()));
            }
            if let Some(v) = seed {
                o.push(("seed", v.to_string()));
            }
            if let Some(v) = alpha {
                if surrogate == Some(SurrogateArg::Identity) {
                    return Err(Error::Config("--alpha has no effect with --surrogate identity".into()));
                }
                o.push(("surrogate", "smooth".into()));
                o.push(("alpha", v.to_string()));
            }
            if let Some(v) = beta {
                o.push(("beta", v.to_string()));
            }
            if let Some(v) = steps {
                o.push(("steps", v.to_string()));
            }
            cmd_train(cfg.as_deref(), &o, &out)?;
        }
        Command::Encode {
            input,
            checkpoint,
            l,
            mode,
            nq,
            out,
        } => {
            let cp = Checkpoint::load(&checkpoint)?;
            let rate = rate_control(&cp, l, mode, nq)?;
            echo_config(&cp.config, &[("rate", format!("{rate:?}"))]);
            let bytes = cmd_encode(&input, &cp, rate)?;
            write_file(&out, &bytes)?;
        }
        Command::Decode {
            input,
            checkpoint,
            out,
            float,
        } => {
            let cp = Checkpoint::load(&checkpoint)?;
            echo_config(&cp.config, &[("float", float.to_string())]);
            let bytes = cmd_decode(&input, &cp, float)?;
            write_file(&out, &bytes)?;
        }
        Command::Sweep {
            checkpoint,
            corpus,
            segments,
            seed,
            l,
            nq,
            out,
            gnuplot,
        } => {
            let cp = Checkpoint::load(&checkpoint)?;
            let l_list = l.unwrap_or_else(|| DEFAULT_L_LIST.to_vec());
            let n_list = nq.unwrap_or_else(|| (1..=cp.stack.n_q()).collect());
            let seed = seed.unwrap_or(cp.config.seed);
            echo_config(
                &cp.config,
                &[
                    ("l_list", format!("{l_list:?}")),
                    ("n_list", format!("{n_list:?}")),
                    ("eval_seed", seed.to_string()),
                ],
            );
            let audio = match corpus {
                Some(dir) => load_corpus_dir(&dir, cp.model.config().sample_rate)?,
                None => {
                    if segments == 0 {
                        return Err(Error::Config("--segments must be positive".into()));
                    }
                    TrainConfig { seed, ..cp.config.clone() }
                        .corpus()?
                        .segments(EVAL_OFFSET, segments)
                        .into_iter()
                        .map(|s| s.samples)
                        .collect()
                }
            };
            let points = sweep(&cp, &audio, &l_list, &n_list)?;
            let hash = config::hex(&config::config_hash(&cp.config));
            write_file(&out, sweep_csv(&points, &hash).as_bytes())?;
            if let Some(g) = gnuplot {
                write_file(&g, gnuplot_blocks(&points, &hash).as_bytes())?;
            }
        }
        Command::Selftest { seed, cases } => {
            eprintln!("# resolved config\nseed = {seed}\ncases = {cases}");
            let results = run_selftest(seed, cases);
            let mut failed = 0;
            for r in &results {
                println!("{} {} ({})", if r.passed { "PASS" } else { "FAIL" }, r.name, r.detail);
                failed += usize::from(!r.passed);
            }
            if failed > 0 {
                return Err(Error::Malformed(format!("{failed} property suites failed")));
            }
        }
    }
    Ok(())
}

/// Parses `args` (including the program name) and runs the command.
/// Returns the process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
            let _ = e.print();
            return code;
        }
    };
    match dispatch(cli) {
        Ok(()) => EXIT_OK,
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}

/// Surrogate named on the command line.
pub fn surrogate_from(arg: SurrogateArg, alpha: f64) -> Result<SurrogateSpec> {
    match arg {
        SurrogateArg::Identity => Ok(SurrogateSpec::Identity),
        SurrogateArg::Smooth => SurrogateSpec::smooth(alpha),
    }
}
