mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use config::ConfigParseError;

/// Coarse-to-fine CT reconstruction from two orthogonal projections.
#[derive(Parser, Debug)]
#[command(name = "orthoct", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

/// Configuration sources shared by commands that use the run config.
#[derive(Args, Debug, Clone, Default)]
pub struct ConfigArgs {
    /// TOML file overriding the built-in defaults
    #[arg(long)]
    config: Option<PathBuf>,
    /// Override one setting, e.g. `--set stage1.epochs=5`; repeatable
    #[arg(long = "set", value_name = "KEY=VALUE")]
    sets: Vec<String>,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate synthetic chest phantoms and a train/test manifest
    Phantom {
        #[arg(long)]
        count: Option<usize>,
        #[arg(long)]
        seed: Option<u64>,
        /// Output directory
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        cfg: ConfigArgs,
    },
    /// Write the AP and LAT projections of a volume
    Project {
        volume: PathBuf,
        /// Output directory
        #[arg(long)]
        out: PathBuf,
    },
    /// Two-view back-projection only (the baseline)
    ReconstructInit {
        #[arg(long)]
        ap: PathBuf,
        #[arg(long)]
        lat: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Also write windowed axial PNG slices into this directory
        #[arg(long)]
        export_slices: Option<PathBuf>,
    },
    /// Train stage 1 (coarse net) or stage 2 (refiner)
    Train {
        #[arg(long, value_parser = clap::value_parser!(u8).range(1..=2))]
        stage: u8,
        /// Directory written by `phantom`
        #[arg(long)]
        data_dir: PathBuf,
        /// Where checkpoints, logs and the effective config go
        #[arg(long, env = "ORTHOCT_RUN_DIR")]
        run_dir: PathBuf,
        /// Shorthand for `--set stageN.epochs=...`
        #[arg(long)]
        epochs: Option<usize>,
        /// Continue from the stage's checkpoint in the run directory
        #[arg(long)]
        resume: bool,
        #[command(flatten)]
        cfg: ConfigArgs,
    },
    /// Full inference: back-projection, coarse net, refiner
    Reconstruct {
        #[arg(long)]
        ap: PathBuf,
        #[arg(long)]
        lat: PathBuf,
        /// Stage-1 checkpoint (default: stage1.ckpt in the run directory)
        #[arg(long)]
        coarse: Option<PathBuf>,
        /// Stage-2 checkpoint (default: stage2.ckpt in the run directory)
        #[arg(long)]
        refine: Option<PathBuf>,
        /// Skip the refiner and return the coarse volume
        #[arg(long, conflicts_with = "refine")]
        coarse_only: bool,
        #[arg(long, env = "ORTHOCT_RUN_DIR")]
        run_dir: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        export_slices: Option<PathBuf>,
    },
    /// Compare predicted volumes with ground truth and write a CSV report
    Evaluate {
        #[arg(long)]
        pred_dir: PathBuf,
        #[arg(long)]
        gt_dir: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
}

fn run(cli: Cli) -> anyhow::Result<()> {
    use commands::*;
    match cli.command {
        Command::Phantom {
            count,
            seed,
            out,
            cfg,
        } => cmd_phantom(count, seed, &out, &cfg),
        Command::Project { volume, out } => cmd_project(&volume, &out),
        Command::ReconstructInit {
            ap,
            lat,
            out,
            export_slices,
        } => cmd_reconstruct_init(&ap, &lat, &out, export_slices.as_deref()),
        Command::Train {
            stage,
            data_dir,
            run_dir,
            epochs,
            resume,
            cfg,
        } => cmd_train(stage, &data_dir, &run_dir, epochs, resume, &cfg),
        Command::Reconstruct {
            ap,
            lat,
            coarse,
            refine,
            coarse_only,
            run_dir,
            out,
            export_slices,
        } => {
            let ckpts = Checkpoints::resolve(coarse, refine, coarse_only, run_dir.as_deref())?;
            cmd_reconstruct(&ap, &lat, &ckpts, &out, export_slices.as_deref())
        }
        Command::Evaluate {
            pred_dir,
            gt_dir,
            out,
        } => cmd_evaluate(&pred_dir, &gt_dir, &out),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 2 } else { 0 });
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            if e.downcast_ref::<ConfigParseError>().is_some() {
                ExitCode::from(2)
            } else {
                ExitCode::from(1)
            }
        }
    }
}
