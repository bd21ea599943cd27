//! Cholesky factor of the instantaneous covariance matrix.

use crate::error::{Error, Result};
use crate::market::MarketConfig;

/// Lower-triangular A with A * A^T = Sigma, Sigma_ij = sigma_i sigma_j rho_ij.
///
/// Stored row-major over the full d x d square (upper triangle zero) so the
/// hot matrix-vector product stays branch-free.
#[derive(Debug, Clone, PartialEq)]
pub struct CovarianceFactor {
    dim: usize,
    lower: Vec<f64>,
}

impl CovarianceFactor {
    pub fn dim(&self) -> usize {
        self.dim
    }

    #[inline]
    pub fn at(&self, row: usize, col: usize) -> f64 {
        self.lower[row * self.dim + col]
    }

    /// out = A * z.
    #[inline]
    pub fn mul_vec(&self, z: &[f64], out: &mut [f64]) {
        debug_assert_eq!(z.len(), self.dim);
        debug_assert_eq!(out.len(), self.dim);
        for i in 0..self.dim {
            let row = &self.lower[i * self.dim..i * self.dim + i + 1];
            let mut acc = 0.0;
            for (a, zj) in row.iter().zip(z.iter()) {
                acc += a * zj;
            }
            out[i] = acc;
        }
    }

    /// Max-norm of A * A^T - Sigma, the reconstruction error.
    pub fn reconstruction_error(&self, config: &MarketConfig) -> f64 {
        let sigma = covariance_matrix(config);
        let d = self.dim;
        let mut worst = 0.0_f64;
        for i in 0..d {
            for j in 0..d {
                let mut acc = 0.0;
                for k in 0..=i.min(j) {
                    acc += self.at(i, k) * self.at(j, k);
                }
                worst = worst.max((acc - sigma[i * d + j]).abs());
            }
        }
        worst
    }
}

/// Sigma_ij = sigma_i sigma_j rho_ij, row-major.
pub fn covariance_matrix(config: &MarketConfig) -> Vec<f64> {
    let d = config.d;
    let mut sigma = vec![0.0; d * d];
    for i in 0..d {
        for j in 0..d {
            sigma[i * d + j] = config.sigma[i] * config.sigma[j] * config.rho[i][j];
        }
    }
    sigma
}

/// Factor Sigma = A A^T with A lower triangular.
///
/// Positive-semidefinite inputs are accepted: a vanishing pivot (e.g. a
/// zero-volatility asset) zeroes its column. A negative leading minor beyond
/// tolerance is a factorization error naming the offending minor (1-based).
pub fn build_covariance_factor(config: &MarketConfig) -> Result<CovarianceFactor> {
    let d = config.d;
    let sigma = covariance_matrix(config);
    let scale = sigma
        .iter()
        .step_by(d + 1)
        .fold(1.0_f64, |acc, &v| acc.max(v.abs()));
    let tol = 1e-12 * scale;

    let mut lower = vec![0.0; d * d];
    for j in 0..d {
        let mut diag = sigma[j * d + j];
        for k in 0..j {
            let l = lower[j * d + k];
            diag -= l * l;
        }
        if diag < -tol {
            return Err(Error::Factorization { minor: j + 1 });
        }
        let pivot = if diag > tol { diag.sqrt() } else { 0.0 };
        lower[j * d + j] = pivot;
        for i in (j + 1)..d {
            let mut off = sigma[i * d + j];
            for k in 0..j {
                off -= lower[i * d + k] * lower[j * d + k];
            }
            if pivot > 0.0 {
                lower[i * d + j] = off / pivot;
            } else if off.abs() > tol {
                // zero pivot with nonzero residual: not PSD
                return Err(Error::Factorization { minor: j + 1 });
            }
        }
    }
    Ok(CovarianceFactor { dim: d, lower })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn config_with(sigma: Vec<f64>, rho: Vec<Vec<f64>>) -> MarketConfig {
        let d = sigma.len();
        MarketConfig {
            d,
            s0: vec![100.0; d],
            mu: vec![0.08; d],
            r: 0.05,
            sigma,
            rho,
            strikes: vec![100.0],
            u: 1.0 / 252.0,
            tau: 1.0 / 52.0,
            maturity: 1.0 / 12.0,
        }
    }

    #[test]
    fn identity_case() {
        let cfg = config_with(vec![1.0, 1.0], vec![vec![1.0, 0.0], vec![0.0, 1.0]]);
        let a = build_covariance_factor(&cfg).unwrap();
        assert_eq!(a.at(0, 0), 1.0);
        assert_eq!(a.at(1, 1), 1.0);
        assert_eq!(a.at(1, 0), 0.0);
    }

    #[test]
    fn two_by_two_closed_form() {
        // sigma = (0.15, 0.15), rho12 = 0.3:
        // A = [[0.15, 0], [0.045, 0.15 * sqrt(1 - 0.09)]]
        let cfg = config_with(vec![0.15, 0.15], vec![vec![1.0, 0.3], vec![0.3, 1.0]]);
        let a = build_covariance_factor(&cfg).unwrap();
        assert!((a.at(0, 0) - 0.15).abs() < 1e-15);
        assert!((a.at(1, 0) - 0.045).abs() < 1e-15);
        assert!((a.at(1, 1) - 0.14309088021254185).abs() < 1e-15);
        assert!(a.reconstruction_error(&cfg) < 1e-10);
    }

    #[test]
    fn super_unit_correlation_fails_on_second_minor() {
        let cfg = config_with(
            vec![0.15, 0.15],
            vec![vec![1.0, 1.0001], vec![1.0001, 1.0]],
        );
        match build_covariance_factor(&cfg) {
            Err(Error::Factorization { minor }) => assert_eq!(minor, 2),
            other => panic!("expected factorization error, got {other:?}"),
        }
    }

    #[test]
    fn zero_volatility_asset_is_psd() {
        let cfg = config_with(
            vec![0.15, 0.0, 0.2],
            vec![
                vec![1.0, 0.5, 0.3],
                vec![0.5, 1.0, 0.2],
                vec![0.3, 0.2, 1.0],
            ],
        );
        let a = build_covariance_factor(&cfg).unwrap();
        assert_eq!(a.at(1, 1), 0.0);
        assert!(a.reconstruction_error(&cfg) < 1e-10);
    }

    #[test]
    fn mul_vec_matches_manual_product() {
        let cfg = config_with(vec![0.15, 0.15], vec![vec![1.0, 0.3], vec![0.3, 1.0]]);
        let a = build_covariance_factor(&cfg).unwrap();
        let z = [1.5, -0.5];
        let mut out = [0.0; 2];
        a.mul_vec(&z, &mut out);
        assert!((out[0] - a.at(0, 0) * z[0]).abs() < 1e-15);
        assert!((out[1] - (a.at(1, 0) * z[0] + a.at(1, 1) * z[1])).abs() < 1e-15);
    }
}
