//! `rtvar`: offline-stage simulation and training, online-stage prediction,
//! and the experiment runner.
//!
//! The offline commands (`simulate`, `train`) do the heavy Monte Carlo and
//! fitting work; `predict` loads a trained model and answers queries without
//! ever touching the simulator, which is the whole point of the split.

mod experiment;
mod manifest;
mod io_util;
mod predict;
mod simulate;
mod train;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};

#[derive(Parser)]
#[command(
    name = "rtvar",
    version,
    about = "Real-time VaR estimation: quantile regression forests with conformal calibration"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
pub enum LossModeArg {
    Nested,
    ClosedForm,
}

impl From<LossModeArg> for rtvar_core::market::LossMode {
    fn from(arg: LossModeArg) -> Self {
        match arg {
            LossModeArg::Nested => rtvar_core::market::LossMode::Nested,
            LossModeArg::ClosedForm => rtvar_core::market::LossMode::ClosedForm,
        }
    }
}

#[derive(Clone, Copy, Debug, ValueEnum)]
pub enum CorrectionModeArg {
    Plain,
    FiniteSample,
}

impl From<CorrectionModeArg> for rtvar_core::conformal::CorrectionMode {
    fn from(arg: CorrectionModeArg) -> Self {
        match arg {
            CorrectionModeArg::Plain => rtvar_core::conformal::CorrectionMode::Plain,
            CorrectionModeArg::FiniteSample => rtvar_core::conformal::CorrectionMode::FiniteSample,
        }
    }
}

#[derive(Clone, Copy, Debug, ValueEnum)]
pub enum Profile {
    Paper,
    Desk,
}

#[derive(Subcommand)]
enum Command {
    /// Generate an offline dataset of (risk factor, loss) pairs.
    Simulate {
        /// Market config JSON.
        #[arg(long)]
        config: PathBuf,
        /// Number of outer sample paths.
        #[arg(long)]
        n: usize,
        /// Inner paths per outer path (nested mode).
        #[arg(long, default_value_t = rtvar_core::market::DEFAULT_M_INNER)]
        m_inner: usize,
        /// How losses are computed.
        #[arg(long, value_enum, default_value_t = LossModeArg::Nested)]
        loss_mode: LossModeArg,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Output CSV path; a .meta.json sidecar and a manifest are written
        /// next to it.
        #[arg(long)]
        out: PathBuf,
        /// Worker threads (default: all cores).
        #[arg(long)]
        threads: Option<usize>,
    },
    /// Fit a quantile regression forest, optionally conformally calibrated.
    Train {
        /// Dataset CSV produced by `simulate`.
        #[arg(long)]
        dataset: PathBuf,
        /// Forest config JSON; defaults apply when omitted.
        #[arg(long)]
        forest_config: Option<PathBuf>,
        /// Confidence level stored with the model (and calibrated, with
        /// --conformal).
        #[arg(long)]
        alpha: f64,
        /// Split the data and calibrate a conformal offset.
        #[arg(long)]
        conformal: bool,
        #[arg(long, default_value_t = 0.7)]
        train_fraction: f64,
        #[arg(long, value_enum, default_value_t = CorrectionModeArg::FiniteSample)]
        correction_mode: CorrectionModeArg,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        threads: Option<usize>,
    },
    /// Estimate VaR at observed risk factors with a trained model.
    Predict {
        /// Model file from `train`.
        #[arg(long)]
        model: PathBuf,
        /// One query as comma-separated prices.
        #[arg(long, conflicts_with = "batch")]
        x: Option<String>,
        /// CSV of queries, one row per query (optional x1,...,xd header).
        #[arg(long)]
        batch: Option<PathBuf>,
        /// Level for the base estimate; defaults to the level stored in the
        /// model. The calibrated estimate is defined only at the stored
        /// level.
        #[arg(long)]
        alpha: Option<f64>,
    },
    /// Run the full evaluation experiment and emit result CSVs.
    Experiment {
        /// Experiment config JSON (market + forest + grid + seeds).
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out_dir: PathBuf,
        /// Replace the config grid with a built-in profile.
        #[arg(long, value_enum)]
        profile: Option<Profile>,
        /// Resume a partially-completed run in the same out-dir.
        #[arg(long)]
        resume: bool,
        #[arg(long)]
        threads: Option<usize>,
    },
}

fn configure_threads(threads: Option<usize>) -> anyhow::Result<()> {
    if let Some(count) = threads {
        if count == 0 {
            anyhow::bail!("--threads must be >= 1");
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(count)
            .build_global()?;
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Simulate {
            config,
            n,
            m_inner,
            loss_mode,
            seed,
            out,
            threads,
        } => configure_threads(threads)
            .and_then(|()| simulate::run(&config, n, m_inner, loss_mode.into(), seed, &out)),
        Command::Train {
            dataset,
            forest_config,
            alpha,
            conformal,
            train_fraction,
            correction_mode,
            seed,
            out,
            threads,
        } => configure_threads(threads).and_then(|()| {
            train::run(&train::TrainArgs {
                dataset,
                forest_config,
                alpha,
                conformal,
                train_fraction,
                correction_mode: correction_mode.into(),
                seed,
                out,
            })
        }),
        Command::Predict {
            model,
            x,
            batch,
            alpha,
        } => predict::run(&model, x.as_deref(), batch.as_deref(), alpha),
        Command::Experiment {
            config,
            out_dir,
            profile,
            resume,
            threads,
        } => configure_threads(threads)
            .and_then(|()| experiment::run(&config, &out_dir, profile, resume)),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err:#}");
            ExitCode::FAILURE
        }
    }
}
