//! The experiment runner: fits both estimators over a grid of offline
//! sample sizes and levels, replicated end to end, and scores them against
//! the ground-truth VaR oracle.

use std::path::Path;
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::conformal::{calibrated_offset, conformity_scores, split_dataset, CorrectionMode};
use crate::error::{Error, Result};
use crate::eval::metrics::{replication_mpl, replication_rmse};
use crate::market::{
    generate_offline_dataset, LossMode, Market, MarketConfig, DEFAULT_M_INNER, DEFAULT_N_ORACLE,
};
use crate::qrf::{Forest, ForestConfig};
use crate::rng::StreamId;
use crate::stats::{kahan_sum, quantile_rank};

/// Evaluation-grid parameters: how many covariate points per replication,
/// how many replications, how many conditional losses per point for
/// coverage, which levels, and which offline sample sizes.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct EvalGrid {
    pub n_points: usize,
    pub n_reps: usize,
    pub n_cov_samples: usize,
    pub alphas: Vec<f64>,
    pub offline_sizes: Vec<usize>,
}

impl EvalGrid {
    /// Full-scale grid: 1000 evaluation points, 40 replications, 25000
    /// coverage losses per point. Takes hours at the full market config.
    pub fn paper() -> Self {
        EvalGrid {
            n_points: 1000,
            n_reps: 40,
            n_cov_samples: 25_000,
            alphas: vec![0.90, 0.95, 0.99, 0.995],
            offline_sizes: vec![1000, 2000, 4000, 8000, 16000],
        }
    }

    /// Desk-scale grid for CI and quick runs: minutes, not hours.
    pub fn desk() -> Self {
        EvalGrid {
            n_points: 100,
            n_reps: 5,
            n_cov_samples: 2000,
            alphas: vec![0.90, 0.95, 0.99, 0.995],
            offline_sizes: vec![1000, 4000, 16000],
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_points < 1 || self.n_reps < 1 || self.n_cov_samples < 1 {
            return Err(Error::invalid_config(
                "grid",
                "n_points, n_reps, and n_cov_samples must be >= 1",
            ));
        }
        if self.alphas.is_empty() || self.offline_sizes.is_empty() {
            return Err(Error::invalid_config(
                "grid",
                "alphas and offline_sizes must be nonempty",
            ));
        }
        if self.alphas.iter().any(|&a| !(a > 0.0 && a < 1.0)) {
            return Err(Error::invalid_config("alphas", "levels must be in (0, 1)"));
        }
        if self.offline_sizes.iter().any(|&n| n < 2) {
            return Err(Error::invalid_config("offline_sizes", "sizes must be >= 2"));
        }
        Ok(())
    }
}

impl Default for EvalGrid {
    fn default() -> Self {
        EvalGrid::paper()
    }
}

fn default_train_fraction() -> f64 {
    0.7
}

fn default_m_inner() -> usize {
    DEFAULT_M_INNER
}

fn default_n_oracle() -> usize {
    DEFAULT_N_ORACLE
}

/// Everything a full experiment run needs. The forest config's own seed is
/// ignored: the runner derives per-(size, replication, arm) seeds from
/// `seed` so arms and replications stay independent.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub market: MarketConfig,
    #[serde(default)]
    pub forest: ForestConfig,
    /// Grid; `None` falls back to the full-scale grid (or whatever profile
    /// the caller selects).
    #[serde(default)]
    pub grid: Option<EvalGrid>,
    #[serde(default = "default_train_fraction")]
    pub train_fraction: f64,
    #[serde(default)]
    pub correction_mode: CorrectionMode,
    #[serde(default)]
    pub loss_mode: LossMode,
    #[serde(default = "default_m_inner")]
    pub m_inner: usize,
    #[serde(default = "default_n_oracle")]
    pub n_oracle: usize,
    #[serde(default)]
    pub seed: u64,
}

impl ExperimentConfig {
    pub fn from_json_file(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path)?;
        let config: ExperimentConfig = serde_json::from_str(&text).map_err(|e| Error::Parse {
            path: path.display().to_string(),
            message: e.to_string(),
        })?;
        config.validate()?;
        Ok(config)
    }

    pub fn validate(&self) -> Result<()> {
        self.market.validate()?;
        if let Some(grid) = &self.grid {
            grid.validate()?;
        }
        if !(self.train_fraction > 0.0 && self.train_fraction < 1.0) {
            return Err(Error::invalid_config("train_fraction", "must be in (0, 1)"));
        }
        if self.m_inner < 1 && self.loss_mode == LossMode::Nested {
            return Err(Error::invalid_config("m_inner", "must be >= 1 for nested losses"));
        }
        if self.n_oracle < 1 {
            return Err(Error::invalid_config("n_oracle", "must be >= 1"));
        }
        Ok(())
    }

    pub fn effective_grid(&self) -> EvalGrid {
        self.grid.clone().unwrap_or_default()
    }
}

/// Estimator arm.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    Qrf,
    ConformalQrf,
}

impl std::fmt::Display for Method {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Method::Qrf => write!(f, "qrf"),
            Method::ConformalQrf => write!(f, "conformal_qrf"),
        }
    }
}

/// One (method, level, size, replication) result row.
#[derive(Debug, Clone)]
pub struct RepRecord {
    pub method: Method,
    pub alpha: f64,
    pub n_offline: usize,
    pub rep: usize,
    /// Within-replication RMSE against the oracle (averages to MRISE).
    pub rmse: f64,
    /// Within-replication mean pinball loss.
    pub mpl: f64,
    /// Within-replication coverage rate.
    pub cr: f64,
    pub fit_seconds: f64,
    pub predict_micros_per_point: f64,
    pub seed: u64,
}

/// Across-replication aggregate for one (method, level, size) cell.
#[derive(Debug, Clone)]
pub struct MetricRecord {
    pub method: Method,
    pub alpha: f64,
    pub n_offline: usize,
    pub reps: usize,
    pub mrise: f64,
    pub mpl: f64,
    pub mcr: f64,
    /// Mean offline fit time across replications.
    pub runtime_seconds: f64,
    pub seed: u64,
}

/// Run the full experiment, pushing each record to `sink` as soon as its
/// replication finishes. `skip` suppresses already-completed
/// (n_offline, rep) pairs on resumed runs without disturbing the randomness
/// of the rest.
pub fn run_experiment_with(
    config: &ExperimentConfig,
    skip: &dyn Fn(usize, usize) -> bool,
    sink: &mut dyn FnMut(&RepRecord),
) -> Result<()> {
    config.validate()?;
    let grid = config.effective_grid();
    grid.validate()?;
    let market = Market::new(config.market.clone())?;
    let root = StreamId::root(config.seed);

    for rep in 0..grid.n_reps {
        if grid.offline_sizes.iter().all(|&n| skip(n, rep)) {
            continue;
        }

        // fresh evaluation covariates for this replication, from the
        // marginal law of the monitoring-time risk factors
        let eval_stream = root.label("eval-x").index(rep as u64);
        let eval_points: Vec<Vec<f64>> = (0..grid.n_points)
            .map(|j| {
                let mut rng = eval_stream.index(j as u64).rng();
                market.simulate_at_monitoring(&mut rng)
            })
            .collect();

        // ground truth per point, all levels from one sorted oracle sample;
        // shared by both arms and by every offline size in this replication
        let oracle_stream = root.label("oracle").index(rep as u64);
        let truths: Vec<Vec<f64>> = (0..grid.n_points)
            .into_par_iter()
            .map(|j| {
                let mut losses = market.conditional_losses_seq(
                    &eval_points[j],
                    config.n_oracle,
                    LossMode::ClosedForm,
                    0,
                    oracle_stream.index(j as u64),
                );
                losses.sort_unstable_by(f64::total_cmp);
                grid.alphas
                    .iter()
                    .map(|&alpha| losses[quantile_rank(losses.len(), alpha) - 1])
                    .collect()
            })
            .collect();

        // conditional losses for coverage, sorted for binary-search counting
        let coverage_stream = root.label("coverage").index(rep as u64);
        let coverage_losses: Vec<Vec<f64>> = (0..grid.n_points)
            .into_par_iter()
            .map(|j| {
                let mut losses = market.conditional_losses_seq(
                    &eval_points[j],
                    grid.n_cov_samples,
                    LossMode::ClosedForm,
                    0,
                    coverage_stream.index(j as u64),
                );
                losses.sort_unstable_by(f64::total_cmp);
                losses
            })
            .collect();

        for &n_offline in &grid.offline_sizes {
            if skip(n_offline, rep) {
                continue;
            }
            let pair = root.index(n_offline as u64).index(rep as u64);

            let dataset = generate_offline_dataset(
                &market,
                n_offline,
                config.m_inner,
                config.loss_mode,
                pair.label("offline").state_seed(),
            )?;

            // QRF arm: fit on the full offline sample
            let mut qrf_config = config.forest.clone();
            qrf_config.seed = pair.label("fit-qrf").state_seed();
            let fit_start = Instant::now();
            let forest_full = Forest::fit(&dataset, &qrf_config)?;
            let qrf_fit_seconds = fit_start.elapsed().as_secs_f64();

            let predict_start = Instant::now();
            let qrf_estimates: Vec<Vec<f64>> = eval_points
                .par_iter()
                .map(|x| forest_full.predict_quantiles(x, &grid.alphas))
                .collect();
            let qrf_predict_micros =
                predict_start.elapsed().as_secs_f64() * 1e6 / grid.n_points as f64;

            // conformal arm: fit on the training part, one offset per level
            let fit_start = Instant::now();
            let plan = split_dataset(
                dataset.n(),
                config.train_fraction,
                pair.label("split").state_seed(),
            )?;
            let train = dataset.subset(&plan.train_indices)?;
            let calib = dataset.subset(&plan.calib_indices)?;
            let mut conf_config = config.forest.clone();
            conf_config.seed = pair.label("fit-conformal").state_seed();
            let forest_train = Forest::fit(&train, &conf_config)?;
            let offsets: Vec<f64> = grid
                .alphas
                .iter()
                .map(|&alpha| {
                    let scores = conformity_scores(
                        &forest_train,
                        calib.features(),
                        calib.dim(),
                        calib.losses(),
                        alpha,
                    );
                    calibrated_offset(&scores, alpha, config.correction_mode)
                })
                .collect::<Result<_>>()?;
            let conf_fit_seconds = fit_start.elapsed().as_secs_f64();

            let predict_start = Instant::now();
            let conf_estimates: Vec<Vec<f64>> = eval_points
                .par_iter()
                .map(|x| {
                    let mut estimates = forest_train.predict_quantiles(x, &grid.alphas);
                    for (estimate, &offset) in estimates.iter_mut().zip(&offsets) {
                        *estimate += offset;
                    }
                    estimates
                })
                .collect();
            let conf_predict_micros =
                predict_start.elapsed().as_secs_f64() * 1e6 / grid.n_points as f64;

            for (method, estimates, fit_seconds, predict_micros) in [
                (Method::Qrf, &qrf_estimates, qrf_fit_seconds, qrf_predict_micros),
                (
                    Method::ConformalQrf,
                    &conf_estimates,
                    conf_fit_seconds,
                    conf_predict_micros,
                ),
            ] {
                for (a_idx, &alpha) in grid.alphas.iter().enumerate() {
                    let truth_level: Vec<f64> = truths.iter().map(|t| t[a_idx]).collect();
                    let est_level: Vec<f64> = estimates.iter().map(|e| e[a_idx]).collect();
                    let rmse = replication_rmse(&truth_level, &est_level);
                    let mpl = replication_mpl(&truth_level, &est_level, alpha);
                    let cr = kahan_sum(est_level.iter().zip(&coverage_losses).map(
                        |(&estimate, losses)| {
                            let covered = losses.partition_point(|&y| y <= estimate);
                            covered as f64 / losses.len() as f64
                        },
                    )) / grid.n_points as f64;
                    sink(&RepRecord {
                        method,
                        alpha,
                        n_offline,
                        rep,
                        rmse,
                        mpl,
                        cr,
                        fit_seconds,
                        predict_micros_per_point: predict_micros,
                        seed: config.seed,
                    });
                }
            }
        }
    }
    Ok(())
}

/// Convenience wrapper collecting all records.
pub fn run_experiment(config: &ExperimentConfig) -> Result<Vec<RepRecord>> {
    let mut records = Vec::new();
    run_experiment_with(config, &|_, _| false, &mut |r| records.push(r.clone()))?;
    Ok(records)
}

/// Average the per-replication records into one row per
/// (method, level, size), in first-appearance order.
pub fn aggregate(records: &[RepRecord]) -> Vec<MetricRecord> {
    let mut order: Vec<(Method, f64, usize)> = Vec::new();
    for r in records {
        let key = (r.method, r.alpha, r.n_offline);
        if !order.contains(&key) {
            order.push(key);
        }
    }
    order
        .into_iter()
        .map(|(method, alpha, n_offline)| {
            let group: Vec<&RepRecord> = records
                .iter()
                .filter(|r| r.method == method && r.alpha == alpha && r.n_offline == n_offline)
                .collect();
            let m = group.len() as f64;
            MetricRecord {
                method,
                alpha,
                n_offline,
                reps: group.len(),
                mrise: kahan_sum(group.iter().map(|r| r.rmse)) / m,
                mpl: kahan_sum(group.iter().map(|r| r.mpl)) / m,
                mcr: kahan_sum(group.iter().map(|r| r.cr)) / m,
                runtime_seconds: kahan_sum(group.iter().map(|r| r.fit_seconds)) / m,
                seed: group.first().map_or(0, |r| r.seed),
            }
        })
        .collect()
}

/// CSV header for per-replication records.
pub const REP_RECORD_HEADER: &str =
    "method,alpha,n_offline,rep,mrise,mpl,mcr,fit_seconds,predict_micros_per_point,seed";

/// CSV header for aggregated records.
pub const METRIC_RECORD_HEADER: &str =
    "method,alpha,n_offline,reps,mrise,mpl,mcr,runtime_seconds,seed";

impl RepRecord {
    pub fn to_csv_row(&self) -> String {
        format!(
            "{},{},{},{},{},{},{},{},{},{}",
            self.method,
            self.alpha,
            self.n_offline,
            self.rep,
            self.rmse,
            self.mpl,
            self.cr,
            self.fit_seconds,
            self.predict_micros_per_point,
            self.seed
        )
    }

    /// Parse a CSV row written by `to_csv_row`.
    pub fn from_csv_row(row: &str) -> Result<RepRecord> {
        let fields: Vec<&str> = row.split(',').collect();
        if fields.len() != 10 {
            return Err(Error::Parse {
                path: "records csv".into(),
                message: format!("expected 10 fields, got {}", fields.len()),
            });
        }
        let bad = |what: &str| Error::Parse {
            path: "records csv".into(),
            message: format!("bad {what} in `{row}`"),
        };
        let method = match fields[0] {
            "qrf" => Method::Qrf,
            "conformal_qrf" => Method::ConformalQrf,
            _ => return Err(bad("method")),
        };
        Ok(RepRecord {
            method,
            alpha: fields[1].parse().map_err(|_| bad("alpha"))?,
            n_offline: fields[2].parse().map_err(|_| bad("n_offline"))?,
            rep: fields[3].parse().map_err(|_| bad("rep"))?,
            rmse: fields[4].parse().map_err(|_| bad("mrise"))?,
            mpl: fields[5].parse().map_err(|_| bad("mpl"))?,
            cr: fields[6].parse().map_err(|_| bad("mcr"))?,
            fit_seconds: fields[7].parse().map_err(|_| bad("fit_seconds"))?,
            predict_micros_per_point: fields[8].parse().map_err(|_| bad("predict_micros"))?,
            seed: fields[9].parse().map_err(|_| bad("seed"))?,
        })
    }
}

impl MetricRecord {
    pub fn to_csv_row(&self) -> String {
        format!(
            "{},{},{},{},{},{},{},{},{}",
            self.method,
            self.alpha,
            self.n_offline,
            self.reps,
            self.mrise,
            self.mpl,
            self.mcr,
            self.runtime_seconds,
            self.seed
        )
    }
}
