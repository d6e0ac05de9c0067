//! `rcdm`: synthesize, degrade, train, infer, evaluate, analyze, self-test.
//!
//! Exit codes: 0 success, 1 verification or numeric failure, 2 usage,
//! config or input error.

mod commands;
mod meta;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use rcdm_core::config::RunConfig;
use rcdm_core::data::{DegradationParams, SynthKind, WindowMode};
use rcdm_core::selftest::{Fault, Level};

use commands::*;
use meta::RunMeta;

#[derive(Debug)]
pub enum CliError {
    Usage(String),
    Io(String),
    /// A verification or numeric failure.
    Failed(String),
}

impl CliError {
    fn code(&self) -> u8 {
        match self {
            CliError::Failed(_) => 1,
            CliError::Usage(_) | CliError::Io(_) => 2,
        }
    }
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Usage(m) | CliError::Io(m) | CliError::Failed(m) => f.write_str(m),
        }
    }
}

impl From<rcdm_core::Error> for CliError {
    fn from(e: rcdm_core::Error) -> Self {
        match e {
            rcdm_core::Error::Numeric(_) => CliError::Failed(e.to_string()),
            rcdm_core::Error::Io(_) => CliError::Io(e.to_string()),
            _ => CliError::Usage(e.to_string()),
        }
    }
}

#[derive(Parser)]
#[command(
    name = "rcdm",
    version,
    about = "Lightweight recurrent video super-resolution toolkit"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write a synthetic HR clip.
    Synth(SynthArgs),
    /// Blur, downsample and add noise to a clip.
    Degrade(DegradeArgs),
    /// Train from HR clips and write a checkpoint with loss.csv.
    Train(TrainArgs),
    /// Super-resolve an LR clip with a checkpoint.
    Infer(InferArgs),
    /// Score a clip against a reference.
    Eval(EvalArgs),
    /// Per-layer parameter and FLOP counts.
    Analyze(AnalyzeArgs),
    /// Run the invariant suites.
    Selftest(SelftestArgs),
    /// Rerun a command from its run.meta.
    Replay(ReplayArgs),
}

#[derive(Args)]
struct SynthArgs {
    /// panning_texture, moving_shapes or static
    #[arg(long, default_value = "panning_texture")]
    kind: SynthKind,
    #[arg(long, default_value_t = 7)]
    frames: usize,
    /// Frame size as HxW.
    #[arg(long, default_value = "64x64", value_parser = parse_size)]
    size: (usize, usize),
    /// Pixels per frame.
    #[arg(long, default_value_t = 1.0)]
    motion: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct DegradeArgs {
    #[arg(long = "in")]
    input: PathBuf,
    /// Base preset, bi or bd; explicit flags override its fields.
    #[arg(long, default_value = "bi")]
    track: String,
    #[arg(long)]
    scale: Option<usize>,
    #[arg(long)]
    blur_sigma: Option<f64>,
    #[arg(long)]
    noise_sigma: Option<f64>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct ConfigSource {
    /// Run config file.
    #[arg(long, conflicts_with = "preset")]
    config: Option<PathBuf>,
    /// Built-in preset name (see configs/).
    #[arg(long)]
    preset: Option<String>,
}

impl ConfigSource {
    fn load(&self, fallback: &str) -> Result<RunConfig, CliError> {
        Ok(match (&self.config, &self.preset) {
            (Some(p), _) => RunConfig::load(p).map_err(|e| match e {
                rcdm_core::Error::Io(m) => CliError::Usage(m),
                e => e.into(),
            })?,
            (None, Some(name)) => RunConfig::preset(name)?,
            (None, None) => RunConfig::preset(fallback)?,
        })
    }
}

#[derive(Args)]
struct TrainArgs {
    #[command(flatten)]
    source: ConfigSource,
    /// HR clip directories; LR inputs come from the config's degradation.
    #[arg(long, value_delimiter = ',', required = true)]
    data: Vec<PathBuf>,
    #[arg(long)]
    steps: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    out: PathBuf,
    /// Continue from the checkpoint already in --out.
    #[arg(long)]
    resume: bool,
}

#[derive(Args)]
struct InferArgs {
    #[arg(long)]
    ckpt: PathBuf,
    #[arg(long = "in")]
    input: PathBuf,
    #[arg(long, default_value = "center")]
    mode: WindowMode,
    #[arg(long)]
    out: PathBuf,
    /// Also write unquantized frames as .rct.
    #[arg(long)]
    save_rct: bool,
}

#[derive(Args)]
struct EvalArgs {
    #[arg(long = "ref")]
    reference: PathBuf,
    #[arg(long)]
    test: PathBuf,
    /// Comma-separated subset of ssim,psnr.
    #[arg(long, default_value = "ssim,psnr")]
    metrics: String,
    #[arg(long, default_value_t = 0)]
    crop_border: usize,
    #[arg(long)]
    out: PathBuf,
    /// Output of the ablated model; writes per-frame SSIM ratios instead.
    #[arg(long)]
    ablation: Option<PathBuf>,
}

#[derive(Args)]
struct AnalyzeArgs {
    #[command(flatten)]
    source: ConfigSource,
    #[arg(long, default_value = "180x320", value_parser = parse_size)]
    input_size: (usize, usize),
    #[arg(long)]
    out: Option<PathBuf>,
    /// Also print the five-variant comparison.
    #[arg(long)]
    family: bool,
}

#[derive(Args)]
struct SelftestArgs {
    #[arg(long, default_value = "quick")]
    level: String,
}

#[derive(Args)]
struct ReplayArgs {
    #[arg(long)]
    meta: PathBuf,
    /// Write to this path instead of the recorded output.
    #[arg(long)]
    out: Option<PathBuf>,
}

fn abs(p: &std::path::Path) -> Result<PathBuf, CliError> {
    absolute(p)
}

fn configure_threads() -> Result<(), CliError> {
    let Ok(v) = std::env::var("RCDM_THREADS") else {
        return Ok(());
    };
    let n: usize = v.parse().ok().filter(|&n| n > 0).ok_or_else(|| {
        CliError::Usage(format!(
            "RCDM_THREADS must be a positive integer, got '{v}'"
        ))
    })?;
    #[cfg(feature = "parallel")]
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .map_err(|e| CliError::Usage(format!("cannot size thread pool: {e}")))?;
    #[cfg(not(feature = "parallel"))]
    let _ = n;
    Ok(())
}

fn replay(args: ReplayArgs) -> Result<(), CliError> {
    let mut m = RunMeta::read(&args.meta)?;
    if let Some(out) = args.out {
        let out = abs(&out)?;
        match m.args.iter_mut().find(|(k, _)| k == "out") {
            Some(slot) => slot.1 = out.display().to_string(),
            None => m.args.push(("out".into(), out.display().to_string())),
        }
    }
    match m.command.as_str() {
        "synth" => SynthPlan::from_meta(&m)?.run(),
        "degrade" => DegradePlan::from_meta(&m)?.run(),
        "train" => TrainPlan::from_meta(&m)?.run(),
        "infer" => InferPlan::from_meta(&m)?.run(),
        "eval" => EvalPlan::from_meta(&m)?.run(),
        "analyze" => AnalyzePlan::from_meta(&m)?.run(),
        other => Err(CliError::Usage(format!("cannot replay command '{other}'"))),
    }
}

fn run(cli: Cli) -> Result<(), CliError> {
    configure_threads()?;
    match cli.command {
        Command::Synth(a) => SynthPlan {
            kind: a.kind,
            frames: a.frames,
            size: a.size,
            motion: a.motion,
            seed: a.seed,
            out: abs(&a.out)?,
        }
        .run(),
        Command::Degrade(a) => {
            let base = DegradationParams::track(&a.track)?;
            let params = DegradationParams {
                scale: a.scale.unwrap_or(base.scale),
                blur_sigma: a.blur_sigma.unwrap_or(base.blur_sigma),
                noise_sigma: a.noise_sigma.unwrap_or(base.noise_sigma),
                seed: a.seed,
            };
            DegradePlan {
                input: abs(&a.input)?,
                params,
                out: abs(&a.out)?,
            }
            .run()
        }
        Command::Train(a) => {
            let mut config = a.source.load("rcdm")?;
            if let Some(s) = a.steps {
                config.train.steps = s;
            }
            if let Some(s) = a.seed {
                config.train.seed = s;
            }
            let data = a.data.iter().map(|p| abs(p)).collect::<Result<_, _>>()?;
            TrainPlan {
                config,
                data,
                out: abs(&a.out)?,
                resume: a.resume,
            }
            .run()
        }
        Command::Infer(a) => InferPlan {
            ckpt: abs(&a.ckpt)?,
            input: abs(&a.input)?,
            mode: a.mode,
            out: abs(&a.out)?,
            save_rct: a.save_rct,
        }
        .run(),
        Command::Eval(a) => EvalPlan {
            reference: abs(&a.reference)?,
            test: abs(&a.test)?,
            metrics: Metric::parse_list(&a.metrics).map_err(CliError::Usage)?,
            crop_border: a.crop_border,
            out: abs(&a.out)?,
            ablation: a.ablation.as_deref().map(abs).transpose()?,
        }
        .run(),
        Command::Analyze(a) => AnalyzePlan {
            config: a.source.load("rcdm")?,
            input_size: a.input_size,
            out: a.out.as_deref().map(abs).transpose()?,
            family: a.family,
        }
        .run(),
        Command::Selftest(a) => {
            let level: Level = a.level.parse()?;
            let fault = match std::env::var("RCDM_SELFTEST_FAULT") {
                Ok(f) if !f.is_empty() => Some(f.parse::<Fault>()?),
                _ => None,
            };
            run_selftest(level, fault)
        }
        Command::Replay(a) => replay(a),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.code())
        }
    }
}
