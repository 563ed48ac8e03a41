//! `nsexit`: synthesize data, train, enhance, profile and evaluate early-exit
//! noise suppression models.

mod commands;

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Parser, Subcommand};
use nsexit_core::config::RunConfig;
use nsexit_core::Error;

#[derive(Debug, Parser)]
#[command(name = "nsexit", version, about = "Early-exit noise suppression toolkit")]
struct Cli {
    #[command(subcommand)]
    command: Command,

    /// Run configuration file (`key = value` lines).
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Model variant, overriding the config.
    #[arg(long, global = true)]
    variant: Option<String>,

    /// Training strategy: joint or layerwise.
    #[arg(long, global = true)]
    strategy: Option<String>,

    /// Exit stage used for enhancement.
    #[arg(long, global = true)]
    exit: Option<usize>,

    /// Seed for everything random in the command.
    #[arg(long, global = true)]
    seed: Option<u64>,

    /// Output file or directory, depending on the command.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate a synthetic dataset: WAV files plus a manifest.
    SynthData {
        /// Number of clips.
        #[arg(long)]
        count: Option<usize>,
        /// SNR range in dB, as lo:hi.
        #[arg(long)]
        snr_range: Option<String>,
        /// Share of clips assigned to validation.
        #[arg(long)]
        val_fraction: Option<f64>,
        /// Clip length in seconds.
        #[arg(long)]
        clip_seconds: Option<f64>,
    },
    /// Train a model from a dataset manifest.
    Train {
        #[arg(long)]
        manifest: Option<PathBuf>,
        /// Baseline checkpoint that pretrain variants start from.
        #[arg(long)]
        baseline: Option<PathBuf>,
        /// Checkpoint to continue from (parameters only).
        #[arg(long)]
        resume: Option<PathBuf>,
        /// Layer widths: full or tiny.
        #[arg(long)]
        profile: Option<String>,
        /// Epoch cap for joint training.
        #[arg(long)]
        max_epochs: Option<usize>,
        /// Base epoch cap per layer-wise stage.
        #[arg(long)]
        stage_epochs: Option<usize>,
    },
    /// Enhance a WAV file.
    Enhance {
        #[arg(long)]
        checkpoint: PathBuf,
        /// Noisy 16 kHz mono PCM16 WAV.
        input: PathBuf,
    },
    /// Parameter, MAC and FLOP counts per exit, optionally with timings.
    Profile {
        /// Profile a trained checkpoint instead of a freshly built variant.
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        /// Layer widths when no checkpoint is given: full or tiny.
        #[arg(long)]
        profile: Option<String>,
        /// Frames per timing run; 0 skips timing.
        #[arg(long, default_value_t = 0)]
        frames: usize,
        /// Timing runs per exit; the fastest is reported.
        #[arg(long, default_value_t = 5)]
        repeats: usize,
    },
    /// Per-exit SI-SDR and log-spectral distance on a dataset.
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        manifest: PathBuf,
        /// Clips to score: train, val, test or all. Defaults to test clips
        /// if the manifest has any, else all.
        #[arg(long)]
        split: Option<String>,
    },
}

impl Cli {
    /// Config file settings with command-line overrides applied.
    fn run_config(&self) -> Result<RunConfig> {
        let mut cfg = match &self.config {
            Some(p) => RunConfig::load(p)?,
            None => RunConfig::default(),
        };
        let overrides = [
            ("variant", self.variant.clone()),
            ("strategy", self.strategy.clone()),
            ("seed", self.seed.map(|s| s.to_string())),
        ];
        for (key, value) in overrides {
            if let Some(v) = value {
                cfg.set(key, &v, Path::new("."))
                    .with_context(|| format!("--{key} {v}"))?;
            }
        }
        Ok(cfg)
    }
}

fn run(cli: Cli) -> Result<()> {
    let mut cfg = cli.run_config()?;
    let out = cli.out.clone();
    match cli.command {
        Command::SynthData {
            count,
            snr_range,
            val_fraction,
            clip_seconds,
        } => {
            set_opt(&mut cfg, "count", count)?;
            set_opt(&mut cfg, "snr_range", snr_range)?;
            set_opt(&mut cfg, "val_fraction", val_fraction)?;
            set_opt(&mut cfg, "clip_seconds", clip_seconds)?;
            commands::synth_data(&cfg, out)
        }
        Command::Train {
            manifest,
            baseline,
            resume,
            profile,
            max_epochs,
            stage_epochs,
        } => {
            set_opt(&mut cfg, "profile", profile)?;
            set_opt(&mut cfg, "max_epochs", max_epochs)?;
            set_opt(&mut cfg, "stage_epochs", stage_epochs)?;
            if manifest.is_some() {
                cfg.manifest = manifest;
            }
            if baseline.is_some() {
                cfg.baseline_checkpoint = baseline;
            }
            cfg.train.validate()?;
            commands::train(&cfg, resume.as_deref(), out)
        }
        Command::Enhance { checkpoint, input } => {
            let out = out.context("enhance needs --out <output.wav>")?;
            commands::enhance(&checkpoint, &input, &out, cli.exit)
        }
        Command::Profile {
            checkpoint,
            profile,
            frames,
            repeats,
        } => {
            set_opt(&mut cfg, "profile", profile)?;
            commands::profile(&cfg, checkpoint.as_deref(), frames, repeats, out)
        }
        Command::Eval {
            checkpoint,
            manifest,
            split,
        } => commands::eval(&checkpoint, &manifest, split.as_deref(), out),
    }
}

fn set_opt<T: ToString>(cfg: &mut RunConfig, key: &str, value: Option<T>) -> Result<()> {
    if let Some(v) = value {
        let v = v.to_string();
        cfg.set(key, &v, Path::new("."))
            .with_context(|| format!("--{} {v}", key.replace('_', "-")))?;
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            match e.downcast_ref::<Error>() {
                Some(Error::Divergence { .. }) => ExitCode::from(3),
                _ => ExitCode::FAILURE,
            }
        }
    }
}
