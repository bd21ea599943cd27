//! Estimation-error and coverage metrics.

use crate::error::{Error, Result};
use crate::stats::kahan_sum;

/// Pinball (quantile) loss of a signed error `a = true - estimate`:
/// `alpha * a` when positive, `(alpha - 1) * a` otherwise. Underestimation
/// costs alpha per unit, overestimation 1 - alpha.
#[inline]
pub fn pinball(a: f64, alpha: f64) -> f64 {
    if a > 0.0 {
        alpha * a
    } else {
        (alpha - 1.0) * a
    }
}

fn check_shapes(true_vals: &[Vec<f64>], est_vals: &[Vec<f64>]) -> Result<()> {
    if true_vals.len() != est_vals.len() {
        return Err(Error::ShapeMismatch(format!(
            "{} replications of truth vs {} of estimates",
            true_vals.len(),
            est_vals.len()
        )));
    }
    if true_vals.is_empty() {
        return Err(Error::ShapeMismatch("no replications".into()));
    }
    for (rep, (t, e)) in true_vals.iter().zip(est_vals).enumerate() {
        if t.len() != e.len() || t.is_empty() {
            return Err(Error::ShapeMismatch(format!(
                "replication {rep}: {} truth points vs {} estimates",
                t.len(),
                e.len()
            )));
        }
    }
    Ok(())
}

/// Within-replication root mean squared error over the evaluation points.
pub fn replication_rmse(true_vals: &[f64], est_vals: &[f64]) -> f64 {
    debug_assert_eq!(true_vals.len(), est_vals.len());
    let n = true_vals.len() as f64;
    let sq = kahan_sum(
        true_vals
            .iter()
            .zip(est_vals)
            .map(|(&t, &e)| (t - e) * (t - e)),
    );
    (sq / n).sqrt()
}

/// Mean root integrated squared error: the across-replication mean of the
/// within-replication RMSEs (root inside the replication average, mean
/// across replications).
pub fn mrise(true_vals: &[Vec<f64>], est_vals: &[Vec<f64>]) -> Result<f64> {
    check_shapes(true_vals, est_vals)?;
    let m = true_vals.len() as f64;
    Ok(kahan_sum(
        true_vals
            .iter()
            .zip(est_vals)
            .map(|(t, e)| replication_rmse(t, e)),
    ) / m)
}

/// Within-replication mean pinball loss of `true - estimate`.
pub fn replication_mpl(true_vals: &[f64], est_vals: &[f64], alpha: f64) -> f64 {
    debug_assert_eq!(true_vals.len(), est_vals.len());
    kahan_sum(
        true_vals
            .iter()
            .zip(est_vals)
            .map(|(&t, &e)| pinball(t - e, alpha)),
    ) / true_vals.len() as f64
}

/// Mean pinball loss of `true - estimate` over all replications and points.
pub fn mpl(true_vals: &[Vec<f64>], est_vals: &[Vec<f64>], alpha: f64) -> Result<f64> {
    check_shapes(true_vals, est_vals)?;
    let m = true_vals.len() as f64;
    Ok(kahan_sum(
        true_vals
            .iter()
            .zip(est_vals)
            .map(|(t, e)| replication_mpl(t, e, alpha)),
    ) / m)
}

/// Coverage rate: for each evaluation point, the fraction of its loss
/// realizations at or below the estimate, averaged over points.
pub fn coverage_rate(estimates: &[f64], loss_samples: &[Vec<f64>]) -> Result<f64> {
    if estimates.len() != loss_samples.len() || estimates.is_empty() {
        return Err(Error::ShapeMismatch(format!(
            "{} estimates vs {} loss sample rows",
            estimates.len(),
            loss_samples.len()
        )));
    }
    let per_point = estimates.iter().zip(loss_samples).map(|(&v, losses)| {
        assert!(!losses.is_empty(), "empty loss sample row");
        let covered = losses.iter().filter(|&&y| y <= v).count();
        covered as f64 / losses.len() as f64
    });
    Ok(kahan_sum(per_point) / estimates.len() as f64)
}
