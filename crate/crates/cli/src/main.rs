//! `spoofsmith`: toy data, GAN training, synthesis, PAD training, evaluation
//! and self checks.

mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use config::{resolve, Overrides, RunConfig, UsageError};

/// Environment variable capping the worker thread count.
const THREADS_ENV: &str = "SPOOFSMITH_THREADS";

#[derive(Parser)]
#[command(
    name = "spoofsmith",
    version,
    about = "Synthetic presentation attacks and their detection"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a procedural bona fide periocular corpus.
    GenToy(GenToyArgs),
    /// Train a DCGAN generator/discriminator pair on real images.
    TrainGan(TrainGanArgs),
    /// Sample synthetic attack images from a trained generator.
    Synth(SynthArgs),
    /// Train and evaluate the PAD classifier on real plus attack images.
    TrainPad(TrainPadArgs),
    /// Score a manifest with a trained classifier.
    Eval(EvalArgs),
    /// Run the gradient, reference and persistence self checks.
    Verify(VerifyArgs),
}

#[derive(Args)]
struct Common {
    /// TOML file with run settings; flags take precedence.
    #[arg(long, value_name = "FILE")]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long, value_name = "DIR")]
    out: Option<PathBuf>,
}

impl Common {
    fn overrides(&self) -> Overrides {
        let mut o = Overrides::default();
        o.set("", "seed", self.seed)
            .set("paths", "out", self.out.clone());
        o
    }
}

#[derive(Args)]
struct GenToyArgs {
    #[command(flatten)]
    common: Common,
    /// Number of images [default: 500]
    #[arg(long)]
    count: Option<usize>,
    /// Image side in pixels [default: 64]
    #[arg(long)]
    res: Option<usize>,
}

#[derive(Args)]
struct TrainGanArgs {
    #[command(flatten)]
    common: Common,
    /// Manifest of real images.
    #[arg(long, value_name = "FILE")]
    manifest: Option<PathBuf>,
    /// [default: 10]
    #[arg(long)]
    epochs: Option<usize>,
    /// Image side in pixels [default: 64]
    #[arg(long)]
    res: Option<usize>,
    /// Real images drawn per iteration [default: 200]
    #[arg(long)]
    real_per_iter: Option<usize>,
    /// Smallest set of real images accepted [default: 16]
    #[arg(long)]
    batch_size: Option<usize>,
    /// Layer width multiplier [default: 0.25]
    #[arg(long)]
    width_scale: Option<f64>,
    /// Directory holding g.ckpt and d.ckpt to continue from.
    #[arg(long, value_name = "DIR")]
    resume: Option<PathBuf>,
}

#[derive(Args)]
struct SynthArgs {
    #[command(flatten)]
    common: Common,
    /// Generator checkpoint.
    #[arg(long, value_name = "FILE")]
    ckpt: Option<PathBuf>,
    /// Number of images [default: 10000]
    #[arg(long)]
    count: Option<usize>,
}

#[derive(Args)]
struct TrainPadArgs {
    #[command(flatten)]
    common: Common,
    #[arg(long, value_name = "FILE")]
    real_manifest: Option<PathBuf>,
    #[arg(long, value_name = "FILE")]
    attack_manifest: Option<PathBuf>,
    /// [default: 10]
    #[arg(long)]
    epochs: Option<usize>,
    /// Layer width multiplier [default: 0.25]
    #[arg(long)]
    width_scale: Option<f64>,
    /// Image side in pixels, divisible by 32 [default: 64]
    #[arg(long)]
    res: Option<usize>,
    /// [default: 16]
    #[arg(long)]
    batch_size: Option<usize>,
    /// Decision threshold for the final report [default: 0.5]
    #[arg(long)]
    threshold: Option<f64>,
    /// Classifier checkpoint to continue from.
    #[arg(long, value_name = "FILE")]
    resume: Option<PathBuf>,
}

#[derive(Args)]
struct EvalArgs {
    #[command(flatten)]
    common: Common,
    /// Classifier checkpoint.
    #[arg(long, value_name = "FILE")]
    ckpt: Option<PathBuf>,
    #[arg(long, value_name = "FILE")]
    manifest: Option<PathBuf>,
    /// [default: 0.5]
    #[arg(long)]
    threshold: Option<f64>,
}

#[derive(Args)]
struct VerifyArgs {
    /// Seed for the random test cases [default: 0]
    #[arg(long)]
    seed: Option<u64>,
    /// Also write verify.json and the resolved config here.
    #[arg(long, value_name = "DIR")]
    out: Option<PathBuf>,
    /// Checkpoint files to check for corruption.
    #[arg(long = "checkpoint", value_name = "FILE")]
    checkpoints: Vec<PathBuf>,
}

fn configure(cmd: &Command) -> Result<RunConfig, UsageError> {
    match cmd {
        Command::GenToy(a) => {
            let mut o = a.common.overrides();
            o.set("", "count", a.count).set("model", "res", a.res);
            resolve("gen-toy", a.common.config.as_deref(), o)
        }
        Command::TrainGan(a) => {
            let mut o = a.common.overrides();
            o.set("paths", "manifest", a.manifest.clone())
                .set("paths", "resume", a.resume.clone())
                .set("train", "epochs", a.epochs)
                .set("train", "real_per_iter", a.real_per_iter)
                .set("train", "batch_size", a.batch_size)
                .set("model", "res", a.res)
                .set("model", "width_scale", a.width_scale);
            resolve("train-gan", a.common.config.as_deref(), o)
        }
        Command::Synth(a) => {
            let mut o = a.common.overrides();
            o.set("paths", "ckpt", a.ckpt.clone())
                .set("", "count", a.count);
            resolve("synth", a.common.config.as_deref(), o)
        }
        Command::TrainPad(a) => {
            let mut o = a.common.overrides();
            o.set("paths", "real_manifest", a.real_manifest.clone())
                .set("paths", "attack_manifest", a.attack_manifest.clone())
                .set("paths", "resume", a.resume.clone())
                .set("train", "epochs", a.epochs)
                .set("train", "batch_size", a.batch_size)
                .set("model", "res", a.res)
                .set("model", "width_scale", a.width_scale)
                .set("", "threshold", a.threshold);
            resolve("train-pad", a.common.config.as_deref(), o)
        }
        Command::Eval(a) => {
            let mut o = a.common.overrides();
            o.set("paths", "ckpt", a.ckpt.clone())
                .set("paths", "manifest", a.manifest.clone())
                .set("", "threshold", a.threshold);
            resolve("eval", a.common.config.as_deref(), o)
        }
        Command::Verify(a) => {
            let mut o = Overrides::default();
            o.set("", "seed", a.seed).set("paths", "out", a.out.clone());
            resolve("verify", None, o)
        }
    }
}

fn init_threads() -> Result<(), UsageError> {
    let Ok(v) = std::env::var(THREADS_ENV) else {
        return Ok(());
    };
    let n: usize = v.parse().ok().filter(|&n| n > 0).ok_or_else(|| {
        UsageError(format!(
            "{THREADS_ENV} must be a positive integer, got {v:?}"
        ))
    })?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .map_err(|e| UsageError(e.to_string()))
}

fn run(cli: Cli) -> anyhow::Result<bool> {
    let cfg = configure(&cli.command)?;
    match &cli.command {
        Command::GenToy(_) => commands::gen_toy(&cfg)?,
        Command::TrainGan(_) => commands::train_gan(&cfg)?,
        Command::Synth(_) => commands::synth(&cfg)?,
        Command::TrainPad(_) => commands::train_pad(&cfg)?,
        Command::Eval(_) => commands::eval(&cfg)?,
        Command::Verify(a) => return commands::verify(&cfg, &a.checkpoints),
    }
    Ok(true)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    if let Err(e) = init_threads() {
        eprintln!("error: {e}");
        return ExitCode::from(2);
    }
    match run(cli) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) if e.is::<UsageError>() => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}
