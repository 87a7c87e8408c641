//! `mfcm`: feature extraction, training, evaluation, inference, gradient
//! checks and kernel timings for the MFCMNet deepfake detector.
//!
//! Machine-readable results go to stdout (JSON or CSV); progress and
//! diagnostics go to stderr. Exit codes: 0 ok, 1 usage, 2 input parse,
//! 3 numeric fault, 4 invalid configuration.

mod bench;
mod commands;
mod exit;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use exit::{ExitClass, Failure};
use mfcm_core::train::Split;
use mfcm_core::RunConfig;

#[derive(Debug, Parser)]
#[command(name = "mfcm", version, about = "Audio deepfake detection with MFCMNet")]
struct Cli {
    /// Run configuration (JSON with optional `dsp`, `model`, `train` sections).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Random seed; overrides `train.seed` (whose default is 1337).
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads for parallel kernels (default: all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// Output directory.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Write mel CSV, mel PGM, MFCC CSV and the model input tensor for a clip.
    Extract {
        wav: PathBuf,
        /// Output file prefix [default: <out>/<wav stem>].
        #[arg(long)]
        prefix: Option<PathBuf>,
    },
    /// Train on a manifest directory or CSV; writes checkpoints and logs to --out.
    Train { manifest: PathBuf },
    /// Evaluate a checkpoint on one split; prints metrics as JSON.
    Eval {
        checkpoint: PathBuf,
        manifest: PathBuf,
        #[arg(long, default_value = "testing", value_parser = parse_split)]
        split: Split,
    },
    /// Score a single clip; prints `{"score", "prediction"}`.
    Infer { checkpoint: PathBuf, wav: PathBuf },
    /// Central-difference checks of every differentiable op and the micro network.
    Gradcheck,
    /// Time one kernel: fft, conv2d, depthwise, mel or forward.
    Bench {
        op: bench::BenchOp,
        /// Comma-separated shape, e.g. 1,16,56,56.
        #[arg(long)]
        shape: Option<String>,
        #[arg(long, default_value_t = 20)]
        iters: usize,
    },
}

fn parse_split(s: &str) -> Result<Split, String> {
    s.parse()
}

fn load_config(cli: &Cli) -> Result<RunConfig, Failure> {
    let mut cfg = match &cli.config {
        Some(path) => RunConfig::load(path)?,
        None => RunConfig::default(),
    };
    if let Some(seed) = cli.seed {
        cfg.train.seed = seed;
    }
    Ok(cfg)
}

fn run(cli: Cli) -> Result<(), Failure> {
    if let Some(n) = cli.threads {
        if n == 0 {
            return Err(Failure::new(ExitClass::Usage, "--threads must be at least 1"));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| Failure::new(ExitClass::Usage, e))?;
    }
    let cfg = load_config(&cli)?;
    let out = cli.out.clone();
    match cli.command {
        Command::Extract { wav, prefix } => commands::extract(&cfg, &wav, prefix, out.as_deref()),
        Command::Train { manifest } => commands::train(&cfg, &manifest, out.as_deref()),
        Command::Eval {
            checkpoint,
            manifest,
            split,
        } => commands::eval(&cfg, &checkpoint, &manifest, split, out.as_deref()),
        Command::Infer { checkpoint, wav } => commands::infer(&cfg, &checkpoint, &wav),
        Command::Gradcheck => commands::gradcheck(cfg.train.seed),
        Command::Bench { op, shape, iters } => bench::run(&cfg, op, shape.as_deref(), iters),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {}", f.message);
            ExitCode::from(f.code())
        }
    }
}
