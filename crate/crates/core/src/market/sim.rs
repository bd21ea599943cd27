//! Correlated GBM simulation, portfolio losses, and the VaR oracle.
//!
//! Prices are sampled with the exact log-normal solution, never an Euler
//! scheme: one step carries S(t) to S(t + dt) with drift mu (real-world, up
//! to the risk horizon) or r (risk-neutral, beyond it).

use rand_chacha::ChaCha12Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::market::blackscholes::{bs_call_unchecked, portfolio_value_0};
use crate::market::cholesky::{build_covariance_factor, CovarianceFactor};
use crate::market::MarketConfig;
use crate::rng::{fill_standard_normal, StreamId};
use crate::stats::empirical_quantile_sorted;

/// How the time-tau portfolio loss is computed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum LossMode {
    /// Inner Monte Carlo over the remaining life of the options.
    #[default]
    Nested,
    /// Exact time-tau call prices; no inner noise.
    ClosedForm,
}

impl std::fmt::Display for LossMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            LossMode::Nested => write!(f, "nested"),
            LossMode::ClosedForm => write!(f, "closed_form"),
        }
    }
}

/// Default inner-path count for nested losses.
pub const DEFAULT_M_INNER: usize = 500;
/// Default outer draws for the ground-truth VaR oracle.
pub const DEFAULT_N_ORACLE: usize = 200_000;

/// A validated market: config, covariance factor, and the time-0 portfolio
/// value. Immutable and shareable across threads.
#[derive(Debug, Clone)]
pub struct Market {
    config: MarketConfig,
    factor: CovarianceFactor,
    v0: f64,
}

impl Market {
    pub fn new(config: MarketConfig) -> Result<Self> {
        config.validate()?;
        let factor = build_covariance_factor(&config)?;
        let v0 = portfolio_value_0(&config);
        Ok(Market { config, factor, v0 })
    }

    pub fn config(&self) -> &MarketConfig {
        &self.config
    }

    pub fn factor(&self) -> &CovarianceFactor {
        &self.factor
    }

    /// Portfolio value at time 0.
    pub fn value_at_origin(&self) -> f64 {
        self.v0
    }

    /// Exact one-step evolution: out_i = from_i * exp((drift_i - sigma_i^2/2) dt
    /// + sqrt(dt) (A z)_i) with z standard normal.
    fn step(&self, from: &[f64], drift: Drift, dt: f64, z: &[f64], out: &mut [f64]) {
        let d = self.config.d;
        debug_assert_eq!(from.len(), d);
        let mut correlated = vec![0.0; d];
        self.factor.mul_vec(z, &mut correlated);
        let sqrt_dt = dt.sqrt();
        for i in 0..d {
            let mu_i = match drift {
                Drift::RealWorld => self.config.mu[i],
                Drift::RiskNeutral => self.config.r,
            };
            let sigma_i = self.config.sigma[i];
            out[i] = from[i] * ((mu_i - 0.5 * sigma_i * sigma_i) * dt + sqrt_dt * correlated[i]).exp();
        }
    }

    /// Sample (S(u), S(tau)) jointly on one real-world path.
    ///
    /// The increment over (u, tau] is drawn conditionally on S(u) via the
    /// Markov property, so the pair has the exact joint law.
    pub fn simulate_to_horizon(&self, rng: &mut ChaCha12Rng) -> (Vec<f64>, Vec<f64>) {
        let d = self.config.d;
        let mut z = vec![0.0; d];
        let mut s_u = vec![0.0; d];
        let mut s_tau = vec![0.0; d];
        fill_standard_normal(rng, &mut z);
        self.step(&self.config.s0, Drift::RealWorld, self.config.u, &z, &mut s_u);
        fill_standard_normal(rng, &mut z);
        self.step(&s_u, Drift::RealWorld, self.config.tau - self.config.u, &z, &mut s_tau);
        (s_u, s_tau)
    }

    /// Sample S(u) alone, the marginal law of the risk factors observed at
    /// the monitoring time.
    pub fn simulate_at_monitoring(&self, rng: &mut ChaCha12Rng) -> Vec<f64> {
        let d = self.config.d;
        let mut z = vec![0.0; d];
        let mut s_u = vec![0.0; d];
        fill_standard_normal(rng, &mut z);
        self.step(&self.config.s0, Drift::RealWorld, self.config.u, &z, &mut s_u);
        s_u
    }

    /// Continue a path from S(u) = x_u to the risk horizon (real-world drift).
    pub fn bridge_to_horizon(&self, x_u: &[f64], rng: &mut ChaCha12Rng) -> Vec<f64> {
        let d = self.config.d;
        let mut z = vec![0.0; d];
        let mut s_tau = vec![0.0; d];
        fill_standard_normal(rng, &mut z);
        self.step(x_u, Drift::RealWorld, self.config.tau - self.config.u, &z, &mut s_tau);
        s_tau
    }

    /// Undiscounted terminal payoff of the whole portfolio at maturity.
    #[inline]
    fn terminal_payoff(&self, s_maturity: &[f64]) -> f64 {
        let mut payoff = 0.0;
        for &s in s_maturity {
            for &k in &self.config.strikes {
                payoff += (s - k).max(0.0);
            }
        }
        payoff
    }

    /// Nested-simulation loss at the risk horizon: average the discounted
    /// terminal payoff over `m_inner` fresh risk-neutral inner paths started
    /// at S(tau) = s_tau, then subtract from V(0).
    pub fn loss_nested(&self, s_tau: &[f64], m_inner: usize, rng: &mut ChaCha12Rng) -> f64 {
        assert!(m_inner >= 1, "m_inner must be >= 1");
        let d = self.config.d;
        let dt = self.config.maturity - self.config.tau;
        let discount = (-self.config.r * dt).exp();
        let mut z = vec![0.0; d];
        let mut s_t = vec![0.0; d];
        let mut acc = 0.0;
        for _ in 0..m_inner {
            fill_standard_normal(rng, &mut z);
            self.step(s_tau, Drift::RiskNeutral, dt, &z, &mut s_t);
            acc += self.terminal_payoff(&s_t);
        }
        let v_tau = discount * acc / m_inner as f64;
        self.v0 - v_tau
    }

    /// Exact loss at the risk horizon: European calls reprice in closed form
    /// at time tau, which removes the inner-simulation noise entirely.
    pub fn loss_closed_form(&self, s_tau: &[f64]) -> f64 {
        let remaining = self.config.maturity - self.config.tau;
        let mut v_tau = 0.0;
        for (asset, &s) in s_tau.iter().enumerate() {
            for &k in &self.config.strikes {
                v_tau += bs_call_unchecked(s, k, self.config.r, self.config.sigma[asset], remaining);
            }
        }
        self.v0 - v_tau
    }

    fn loss_at_horizon(
        &self,
        s_tau: &[f64],
        mode: LossMode,
        m_inner: usize,
        inner_rng: &mut ChaCha12Rng,
    ) -> f64 {
        match mode {
            LossMode::Nested => self.loss_nested(s_tau, m_inner, inner_rng),
            LossMode::ClosedForm => self.loss_closed_form(s_tau),
        }
    }

    /// Sample `count` independent conditional losses given S(u) = x_u.
    ///
    /// Each realization bridges u -> tau under the real-world drift and then
    /// evaluates the loss. Parallel over realizations; realization `m` owns
    /// the sub-streams `("cond", m)` and `("cond-inner", m)` of `seed`, so
    /// results are independent of thread count.
    pub fn conditional_losses(
        &self,
        x_u: &[f64],
        count: usize,
        mode: LossMode,
        m_inner: usize,
        seed: StreamId,
    ) -> Vec<f64> {
        assert!(count >= 1, "need at least one realization");
        assert_eq!(x_u.len(), self.config.d, "x_u dimension mismatch");
        let bridge_stream = seed.label("cond");
        let inner_stream = seed.label("cond-inner");
        (0..count)
            .into_par_iter()
            .map(|m| self.one_conditional_loss(x_u, mode, m_inner, &bridge_stream, &inner_stream, m))
            .collect()
    }

    /// Same values as [`Market::conditional_losses`] computed on the calling
    /// thread, for callers that already parallelize at a coarser grain.
    pub fn conditional_losses_seq(
        &self,
        x_u: &[f64],
        count: usize,
        mode: LossMode,
        m_inner: usize,
        seed: StreamId,
    ) -> Vec<f64> {
        assert!(count >= 1, "need at least one realization");
        assert_eq!(x_u.len(), self.config.d, "x_u dimension mismatch");
        let bridge_stream = seed.label("cond");
        let inner_stream = seed.label("cond-inner");
        (0..count)
            .map(|m| self.one_conditional_loss(x_u, mode, m_inner, &bridge_stream, &inner_stream, m))
            .collect()
    }

    #[inline]
    fn one_conditional_loss(
        &self,
        x_u: &[f64],
        mode: LossMode,
        m_inner: usize,
        bridge_stream: &StreamId,
        inner_stream: &StreamId,
        m: usize,
    ) -> f64 {
        let mut rng = bridge_stream.index(m as u64).rng();
        let s_tau = self.bridge_to_horizon(x_u, &mut rng);
        let mut inner_rng = inner_stream.index(m as u64).rng();
        self.loss_at_horizon(&s_tau, mode, m_inner, &mut inner_rng)
    }

    /// Ground-truth conditional VaR oracle: the empirical alpha-quantile of
    /// `n_oracle` closed-form conditional losses.
    pub fn ground_truth_var(&self, x_u: &[f64], alpha: f64, n_oracle: usize, seed: StreamId) -> f64 {
        assert!(alpha > 0.0 && alpha < 1.0, "alpha must be in (0,1)");
        let mut losses = self.conditional_losses(x_u, n_oracle, LossMode::ClosedForm, 0, seed);
        losses.sort_unstable_by(f64::total_cmp);
        empirical_quantile_sorted(&losses, alpha)
    }
}

#[derive(Clone, Copy)]
enum Drift {
    RealWorld,
    RiskNeutral,
}
