//! Command-line driver: train, eval, and analyze subcommands over the
//! experiment library. Exit codes by failure category: 2 config,
//! 3 data/io, 4 numeric, 5 format, 1 otherwise.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use spiking_ae::checkpoint;
use spiking_ae::config::ExperimentConfig;
use spiking_ae::experiment::{check_architecture, cmd_analyze, cmd_eval, cmd_train};
use spiking_ae::Result;

#[derive(Parser)]
#[command(
    name = "sae",
    version,
    about = "Spiking convolutional autoencoder training, evaluation, and latent analysis"
)]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Args)]
struct Common {
    /// Override config values, e.g. --set n_z=50 --set lr=0.001
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
    /// Output directory
    #[arg(long)]
    out: PathBuf,
    /// Base random seed
    #[arg(long, default_value_t = 1)]
    seed: u64,
}

#[derive(Subcommand)]
enum Cmd {
    /// Train one repetition per seed, writing metrics and checkpoints
    Train {
        /// Experiment config (TOML)
        #[arg(long)]
        config: PathBuf,
        #[command(flatten)]
        common: Common,
    },
    /// Evaluate a checkpoint on the validation split
    Eval {
        /// Checkpoint to load
        #[arg(long)]
        checkpoint: PathBuf,
        /// Config for runtime knobs; defaults to the checkpoint's own
        #[arg(long)]
        config: Option<PathBuf>,
        #[command(flatten)]
        common: Common,
    },
    /// Latent-representation battery on a class-balanced batch
    Analyze {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        config: Option<PathBuf>,
        /// Examples drawn per class
        #[arg(long, default_value_t = 10)]
        per_class: usize,
        #[command(flatten)]
        common: Common,
    },
}

/// Eval/analyze runtime config: the checkpoint's embedded config, an
/// optional replacement file, plus --set overrides. The architecture
/// must stay the one the weights were trained with.
fn runtime_config(
    ckpt_cfg: &ExperimentConfig,
    config: Option<&PathBuf>,
    set: &[String],
) -> Result<ExperimentConfig> {
    let cfg = match config {
        Some(path) => ExperimentConfig::load(path, set)?,
        None => ckpt_cfg.with_overrides(set)?,
    };
    check_architecture(ckpt_cfg, &cfg)?;
    Ok(cfg)
}

fn run() -> Result<()> {
    match Cli::parse().cmd {
        Cmd::Train { config, common } => {
            let cfg = ExperimentConfig::load(&config, &common.set)?;
            let summaries = cmd_train(&cfg, &common.out, common.seed)?;
            for s in &summaries {
                println!(
                    "seed {}: best val mse {:.4} at epoch {} -> {}",
                    s.seed,
                    s.best_val_mse,
                    s.best_epoch,
                    s.run_dir.display()
                );
            }
        }
        Cmd::Eval {
            checkpoint,
            config,
            common,
        } => {
            let (model, ckpt_cfg) = checkpoint::load(&checkpoint)?;
            let cfg = runtime_config(&ckpt_cfg, config.as_ref(), &common.set)?;
            let r = cmd_eval(&model, &cfg, &common.out, common.seed)?;
            println!(
                "val mse {:.4} over {} examples -> {}",
                r.mse,
                r.examples,
                common.out.display()
            );
            if let Some(l3) = &r.l3 {
                println!(
                    "layer-3 activity: anr {:.3} afr {:.3} rae {:.3} inp {:.3}",
                    l3.anr, l3.afr, l3.rae, l3.inp
                );
            }
        }
        Cmd::Analyze {
            checkpoint,
            config,
            per_class,
            common,
        } => {
            let (model, ckpt_cfg) = checkpoint::load(&checkpoint)?;
            let cfg = runtime_config(&ckpt_cfg, config.as_ref(), &common.set)?;
            let summary = cmd_analyze(&model, &cfg, &common.out, common.seed, per_class)?;
            for (metric, ratio) in &summary.ratios {
                println!("intra/inter ({}): {ratio:.4}", metric.name());
            }
            println!("battery written to {}", common.out.display());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    match run() {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
