//! Market and portfolio parameters.

use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

/// All market-model and portfolio parameters.
///
/// The portfolio holds one European call per (asset, strike) pair: every
/// asset carries the full strike list. Time points: risk estimates are
/// demanded at the monitoring time `u`, the loss is measured at the risk
/// horizon `tau`, and all options mature at `maturity`, with
/// `0 < u < tau < maturity` (in years).
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MarketConfig {
    /// Number of underlying assets.
    pub d: usize,
    /// Initial price per asset.
    pub s0: Vec<f64>,
    /// Real-world drift per asset (applies on [0, tau]).
    pub mu: Vec<f64>,
    /// Risk-free rate (drift on (tau, maturity] and discount rate).
    pub r: f64,
    /// Volatility per asset.
    pub sigma: Vec<f64>,
    /// Pairwise correlation matrix, d x d.
    pub rho: Vec<Vec<f64>>,
    /// Strike list; each asset carries one call per strike.
    pub strikes: Vec<f64>,
    /// Monitoring time (years).
    pub u: f64,
    /// Risk horizon (years).
    pub tau: f64,
    /// Option maturity (years).
    #[serde(alias = "T")]
    pub maturity: f64,
}

const SYMMETRY_TOL: f64 = 1e-12;

impl MarketConfig {
    /// Config with identical per-asset parameters and a single off-diagonal
    /// correlation, the shape used throughout the experiments.
    pub fn symmetric(
        d: usize,
        s0: f64,
        mu: f64,
        r: f64,
        sigma: f64,
        rho: f64,
        strikes: Vec<f64>,
        u: f64,
        tau: f64,
        maturity: f64,
    ) -> Self {
        let mut corr = vec![vec![rho; d]; d];
        for (i, row) in corr.iter_mut().enumerate() {
            row[i] = 1.0;
        }
        MarketConfig {
            d,
            s0: vec![s0; d],
            mu: vec![mu; d],
            r,
            sigma: vec![sigma; d],
            rho: corr,
            strikes,
            u,
            tau,
            maturity,
        }
    }

    pub fn from_json_file(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path)?;
        let config: MarketConfig = serde_json::from_str(&text).map_err(|e| Error::Parse {
            path: path.display().to_string(),
            message: e.to_string(),
        })?;
        config.validate()?;
        Ok(config)
    }

    /// Validate all structural invariants. Volatilities may be zero (the
    /// degenerate deterministic diffusion) but never negative.
    pub fn validate(&self) -> Result<()> {
        if self.d < 1 {
            return Err(Error::invalid_config("d", "asset count must be >= 1"));
        }
        for (name, v) in [("s0", &self.s0), ("mu", &self.mu), ("sigma", &self.sigma)] {
            if v.len() != self.d {
                return Err(Error::invalid_config(
                    name,
                    format!("expected {} entries, got {}", self.d, v.len()),
                ));
            }
        }
        if self.s0.iter().any(|&s| !(s > 0.0)) {
            return Err(Error::invalid_config("s0", "initial prices must be > 0"));
        }
        if self.sigma.iter().any(|&s| !(s >= 0.0)) {
            return Err(Error::invalid_config("sigma", "volatilities must be >= 0"));
        }
        if !self.mu.iter().all(|m| m.is_finite()) || !self.r.is_finite() {
            return Err(Error::invalid_config("mu", "drifts and rate must be finite"));
        }
        if self.rho.len() != self.d || self.rho.iter().any(|row| row.len() != self.d) {
            return Err(Error::invalid_config(
                "rho",
                format!("correlation matrix must be {0} x {0}", self.d),
            ));
        }
        for i in 0..self.d {
            if (self.rho[i][i] - 1.0).abs() > SYMMETRY_TOL {
                return Err(Error::invalid_config(
                    "rho",
                    format!("diagonal entry ({i},{i}) must be 1, got {}", self.rho[i][i]),
                ));
            }
            for j in 0..i {
                if (self.rho[i][j] - self.rho[j][i]).abs() > SYMMETRY_TOL {
                    return Err(Error::invalid_config(
                        "rho",
                        format!("matrix is not symmetric at ({i},{j})"),
                    ));
                }
            }
        }
        if self.strikes.is_empty() {
            return Err(Error::invalid_config("strikes", "at least one strike required"));
        }
        if self.strikes.iter().any(|&k| !(k > 0.0)) {
            return Err(Error::invalid_config("strikes", "strikes must be > 0"));
        }
        if !(self.u > 0.0 && self.u < self.tau && self.tau < self.maturity) {
            return Err(Error::invalid_config(
                "u",
                format!(
                    "time points must satisfy 0 < u < tau < maturity, got u={}, tau={}, maturity={}",
                    self.u, self.tau, self.maturity
                ),
            ));
        }
        Ok(())
    }

    /// SHA-256 of the canonical JSON encoding; recorded in dataset metadata
    /// sidecars so artifacts can be traced to the exact config.
    pub fn content_hash(&self) -> String {
        let canonical = serde_json::to_string(self).expect("config serializes");
        let digest = Sha256::digest(canonical.as_bytes());
        let mut hex = String::with_capacity(64);
        for byte in digest {
            hex.push_str(&format!("{byte:02x}"));
        }
        hex
    }
}
