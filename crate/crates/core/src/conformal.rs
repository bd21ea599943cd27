//! Split-conformal calibration of conditional-quantile models.
//!
//! Scores on a held-out calibration set are the signed residuals
//! `loss - predicted quantile`; shifting every prediction by their empirical
//! alpha-quantile restores marginal coverage. In finite-sample mode the
//! quantile rank is taken over n2 + 1 rather than n2, which is what turns
//! the exchangeability argument into a `>= alpha` coverage guarantee for any
//! base model and any calibration size that admits the rank.

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::market::OfflineDataset;
use crate::qrf::{Forest, ForestConfig};
use crate::rng::StreamId;
use crate::stats::quantile_rank;

/// Anything that can produce a conditional alpha-quantile estimate.
pub trait QuantileModel: Sync {
    fn predict_quantile(&self, query: &[f64], alpha: f64) -> f64;
}

impl QuantileModel for Forest {
    fn predict_quantile(&self, query: &[f64], alpha: f64) -> f64 {
        Forest::predict_quantile(self, query, alpha)
    }
}

/// Quantile convention for the calibrated offset.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum CorrectionMode {
    /// ceil(alpha * n2)-th smallest score: the literal empirical quantile.
    Plain,
    /// ceil(alpha * (n2 + 1))-th smallest score: the rank under which
    /// exchangeability yields coverage >= alpha.
    #[default]
    FiniteSample,
}

impl std::fmt::Display for CorrectionMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CorrectionMode::Plain => write!(f, "plain"),
            CorrectionMode::FiniteSample => write!(f, "finite_sample"),
        }
    }
}

/// Disjoint train/calibration index partition.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SplitPlan {
    pub train_indices: Vec<usize>,
    pub calib_indices: Vec<usize>,
}

/// Uniformly random partition with |train| = round(train_fraction * n),
/// both parts nonempty.
pub fn split_dataset(n: usize, train_fraction: f64, seed: u64) -> Result<SplitPlan> {
    if !(train_fraction > 0.0 && train_fraction < 1.0) {
        return Err(Error::invalid_config(
            "train_fraction",
            format!("must be in (0, 1), got {train_fraction}"),
        ));
    }
    let n_train = (train_fraction * n as f64).round() as usize;
    if n < 2 || n_train == 0 || n_train == n {
        return Err(Error::SplitTooSmall {
            n,
            fraction: train_fraction,
        });
    }
    let mut order: Vec<usize> = (0..n).collect();
    let mut rng = StreamId::root(seed).label("split").rng();
    for i in (1..n).rev() {
        let j = rng.gen_range(0..=i);
        order.swap(i, j);
    }
    let mut train_indices = order[..n_train].to_vec();
    let mut calib_indices = order[n_train..].to_vec();
    train_indices.sort_unstable();
    calib_indices.sort_unstable();
    Ok(SplitPlan {
        train_indices,
        calib_indices,
    })
}

/// Signed residuals of the base model on the calibration set. A positive
/// score means the base model underestimated that loss.
pub fn conformity_scores<M: QuantileModel>(
    base: &M,
    calib_x: &[f64],
    d: usize,
    calib_loss: &[f64],
    alpha: f64,
) -> Vec<f64> {
    assert_eq!(calib_x.len(), calib_loss.len() * d, "calibration shape mismatch");
    calib_loss
        .par_iter()
        .enumerate()
        .map(|(i, &loss)| loss - base.predict_quantile(&calib_x[i * d..(i + 1) * d], alpha))
        .collect()
}

/// Smallest calibration size that supports finite-sample calibration at the
/// given level, i.e. the least n2 with ceil(alpha * (n2 + 1)) <= n2.
pub fn min_calibration_size(alpha: f64) -> usize {
    let mut n2 = (alpha / (1.0 - alpha)).ceil().max(1.0) as usize;
    // guard against float edge cases around exact ratios
    while (alpha * (n2 as f64 + 1.0)).ceil() as usize > n2 {
        n2 += 1;
    }
    while n2 > 1 && (alpha * (n2 as f64)).ceil() as usize <= n2 - 1 {
        n2 -= 1;
    }
    n2
}

/// Empirical alpha-quantile of the conformity scores under the requested
/// convention.
pub fn calibrated_offset(scores: &[f64], alpha: f64, mode: CorrectionMode) -> Result<f64> {
    if scores.is_empty() {
        return Err(Error::ShapeMismatch("empty score vector".into()));
    }
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(Error::invalid_config("alpha", "must be in (0, 1)"));
    }
    let n2 = scores.len();
    let rank = match mode {
        CorrectionMode::Plain => quantile_rank(n2, alpha),
        CorrectionMode::FiniteSample => {
            let raw = (alpha * (n2 as f64 + 1.0)).ceil() as usize;
            if raw > n2 {
                return Err(Error::CalibrationTooSmall {
                    needed: min_calibration_size(alpha),
                    actual: n2,
                    alpha,
                });
            }
            raw.max(1)
        }
    };
    let mut sorted = scores.to_vec();
    sorted.sort_unstable_by(f64::total_cmp);
    Ok(sorted[rank - 1])
}

/// A calibrated quantile model: base predictions plus a constant offset.
#[derive(Debug, Clone)]
pub struct ConformalModel<M: QuantileModel> {
    base: M,
    alpha: f64,
    offset: f64,
    mode: CorrectionMode,
    scores: Vec<f64>,
}

impl<M: QuantileModel> ConformalModel<M> {
    /// Score the base model on a calibration set and fix the offset.
    /// The base model must have been fitted without the calibration rows.
    pub fn calibrate(
        base: M,
        calib_x: &[f64],
        d: usize,
        calib_loss: &[f64],
        alpha: f64,
        mode: CorrectionMode,
    ) -> Result<Self> {
        let scores = conformity_scores(&base, calib_x, d, calib_loss, alpha);
        let offset = calibrated_offset(&scores, alpha, mode)?;
        Ok(ConformalModel {
            base,
            alpha,
            offset,
            mode,
            scores,
        })
    }

    pub fn from_offset(base: M, alpha: f64, offset: f64, mode: CorrectionMode, scores: Vec<f64>) -> Self {
        ConformalModel {
            base,
            alpha,
            offset,
            mode,
            scores,
        }
    }

    /// Calibrated prediction: base quantile at the calibrated level plus the
    /// offset, exactly.
    pub fn predict(&self, query: &[f64]) -> f64 {
        self.base.predict_quantile(query, self.alpha) + self.offset
    }

    pub fn base(&self) -> &M {
        &self.base
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    pub fn offset(&self) -> f64 {
        self.offset
    }

    pub fn mode(&self) -> CorrectionMode {
        self.mode
    }

    pub fn scores(&self) -> &[f64] {
        &self.scores
    }
}

/// Offline convenience path: split the dataset, fit a forest on the training
/// part, and calibrate on the rest. Returns the model and the split plan.
pub fn fit_conformal_forest(
    dataset: &OfflineDataset,
    forest_config: &ForestConfig,
    alpha: f64,
    train_fraction: f64,
    mode: CorrectionMode,
    split_seed: u64,
) -> Result<(ConformalModel<Forest>, SplitPlan)> {
    let plan = split_dataset(dataset.n(), train_fraction, split_seed)?;
    let train = dataset.subset(&plan.train_indices)?;
    let forest = Forest::fit(&train, forest_config)?;
    let calib = dataset.subset(&plan.calib_indices)?;
    let model = ConformalModel::calibrate(
        forest,
        calib.features(),
        calib.dim(),
        calib.losses(),
        alpha,
        mode,
    )?;
    Ok((model, plan))
}

#[cfg(test)]
mod tests {
    use super::*;

    struct ConstantModel(f64);

    impl QuantileModel for ConstantModel {
        fn predict_quantile(&self, _query: &[f64], _alpha: f64) -> f64 {
            self.0
        }
    }

    #[test]
    fn split_sizes_follow_fraction() {
        let plan = split_dataset(10, 0.7, 1).unwrap();
        assert_eq!(plan.train_indices.len(), 7);
        assert_eq!(plan.calib_indices.len(), 3);
    }

    #[test]
    fn split_is_deterministic_per_seed() {
        assert_eq!(split_dataset(50, 0.7, 9).unwrap(), split_dataset(50, 0.7, 9).unwrap());
        assert_ne!(split_dataset(50, 0.7, 9).unwrap(), split_dataset(50, 0.7, 10).unwrap());
    }

    #[test]
    fn degenerate_splits_rejected() {
        assert!(split_dataset(1, 0.7, 0).is_err());
        assert!(split_dataset(10, 0.999, 0).is_err(), "round leaves empty calib");
        assert!(split_dataset(10, 1.0, 0).is_err());
        assert!(split_dataset(10, 0.0, 0).is_err());
    }

    #[test]
    fn scores_are_signed_residuals() {
        let calib_x = vec![0.0, 1.0, 2.0];
        let losses = vec![10.0, 10.0, 10.0];
        // exact predictor: all scores zero
        let zero = conformity_scores(&ConstantModel(10.0), &calib_x, 1, &losses, 0.9);
        assert_eq!(zero, vec![0.0, 0.0, 0.0]);
        // constant under-prediction by 5: all scores 5
        let five = conformity_scores(&ConstantModel(5.0), &calib_x, 1, &losses, 0.9);
        assert_eq!(five, vec![5.0, 5.0, 5.0]);
    }

    #[test]
    fn offsets_match_order_statistics() {
        let scores = [1.0, 2.0, 3.0, 4.0, 5.0];
        assert_eq!(calibrated_offset(&scores, 0.5, CorrectionMode::Plain).unwrap(), 3.0);
        // finite-sample at 0.5: rank ceil(0.5 * 6) = 3
        assert_eq!(
            calibrated_offset(&scores, 0.5, CorrectionMode::FiniteSample).unwrap(),
            3.0
        );
        let zeros = [0.0; 5];
        assert_eq!(calibrated_offset(&zeros, 0.5, CorrectionMode::Plain).unwrap(), 0.0);
        assert_eq!(
            calibrated_offset(&zeros, 0.5, CorrectionMode::FiniteSample).unwrap(),
            0.0
        );
    }

    #[test]
    fn finite_sample_rank_overflow_is_an_error() {
        let scores = [1.0, 2.0, 3.0, 4.0, 5.0];
        match calibrated_offset(&scores, 0.9, CorrectionMode::FiniteSample) {
            Err(Error::CalibrationTooSmall { needed, actual, .. }) => {
                assert_eq!(actual, 5);
                assert_eq!(needed, min_calibration_size(0.9));
            }
            other => panic!("expected calibration error, got {other:?}"),
        }
        // plain mode still works: rank ceil(0.9 * 5) = 5
        assert_eq!(calibrated_offset(&scores, 0.9, CorrectionMode::Plain).unwrap(), 5.0);
    }

    #[test]
    fn min_calibration_sizes() {
        // smallest n2 with ceil(alpha (n2+1)) <= n2, under the same float
        // arithmetic the offset rank uses
        assert_eq!(min_calibration_size(0.9), 9);
        assert_eq!(min_calibration_size(0.99), 99);
        assert_eq!(min_calibration_size(0.995), 199);
        assert_eq!(min_calibration_size(0.5), 1);
        for alpha in [0.6, 0.75, 0.9, 0.95, 0.99, 0.995] {
            let n2 = min_calibration_size(alpha);
            assert!((alpha * (n2 as f64 + 1.0)).ceil() as usize <= n2);
            if n2 > 1 {
                let smaller = n2 - 1;
                assert!((alpha * (smaller as f64 + 1.0)).ceil() as usize > smaller);
            }
        }
    }

    #[test]
    fn offset_monotone_in_alpha() {
        let scores = [0.4, -1.2, 3.3, 0.0, 2.2, -0.7, 1.1];
        let mut prev = f64::NEG_INFINITY;
        for i in 1..10 {
            let alpha = i as f64 / 10.0;
            let offset = calibrated_offset(&scores, alpha, CorrectionMode::Plain).unwrap();
            assert!(offset >= prev);
            prev = offset;
        }
    }

    #[test]
    fn offset_is_permutation_invariant() {
        let scores = [0.4, -1.2, 3.3, 0.0, 2.2];
        let mut shuffled = scores;
        shuffled.reverse();
        shuffled.swap(0, 2);
        for mode in [CorrectionMode::Plain, CorrectionMode::FiniteSample] {
            assert_eq!(
                calibrated_offset(&scores, 0.6, mode).unwrap(),
                calibrated_offset(&shuffled, 0.6, mode).unwrap()
            );
        }
    }

    #[test]
    fn prediction_is_base_plus_offset() {
        let model = ConformalModel::from_offset(
            ConstantModel(10.0),
            0.9,
            2.5,
            CorrectionMode::FiniteSample,
            vec![],
        );
        assert_eq!(model.predict(&[0.0]), 12.5);
        let zero_offset =
            ConformalModel::from_offset(ConstantModel(10.0), 0.9, 0.0, CorrectionMode::Plain, vec![]);
        assert_eq!(zero_offset.predict(&[123.0]), 10.0);
    }
}
