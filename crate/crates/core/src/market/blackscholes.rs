//! Black-Scholes call pricing on a high-accuracy normal CDF.

use crate::error::{Error, Result};
use crate::market::MarketConfig;

// Rational Chebyshev coefficients for erf/erfc (W. J. Cody, Math. Comp. 23,
// 1969; the netlib CALERF constants). Absolute error below 1e-16 on each
// branch, which keeps norm_cdf well inside the 1e-12 budget.
const ERF_A: [f64; 5] = [
    3.16112374387056560e0,
    1.13864154151050156e2,
    3.77485237685302021e2,
    3.20937758913846947e3,
    1.85777706184603153e-1,
];
const ERF_B: [f64; 4] = [
    2.36012909523441209e1,
    2.44024637934444173e2,
    1.28261652607737228e3,
    2.84423683343917062e3,
];
const ERFC_C: [f64; 9] = [
    5.64188496988670089e-1,
    8.88314979438837594e0,
    6.61191906371416295e1,
    2.98635138197400131e2,
    8.81952221241769090e2,
    1.71204761263407058e3,
    2.05107837782607147e3,
    1.23033935479799725e3,
    2.15311535474403846e-8,
];
const ERFC_D: [f64; 8] = [
    1.57449261107098347e1,
    1.17693950891312499e2,
    5.37181101862009858e2,
    1.62138957456669019e3,
    3.29079923573345963e3,
    4.36261909014324716e3,
    3.43936767414372164e3,
    1.23033935480374942e3,
];
const ERFC_P: [f64; 6] = [
    3.05326634961232344e-1,
    3.60344899949804439e-1,
    1.25781726111229246e-1,
    1.60837851487422766e-2,
    6.58749161529837803e-4,
    1.63153871373020978e-2,
];
const ERFC_Q: [f64; 5] = [
    2.56852019228982242e0,
    1.87295284992346047e0,
    5.27905102951428412e-1,
    6.05183413124413191e-2,
    2.33520497626869185e-3,
];

const ONE_OVER_SQRT_PI: f64 = 5.641_895_835_477_562_9e-1;
const FRAC_1_SQRT_2: f64 = std::f64::consts::FRAC_1_SQRT_2;

/// Complementary error function.
fn erfc(x: f64) -> f64 {
    let y = x.abs();
    if y <= 0.46875 {
        // erf branch
        let z = if y > 1.11e-16 { y * y } else { 0.0 };
        let mut num = ERF_A[4] * z;
        let mut den = z;
        for i in 0..3 {
            num = (num + ERF_A[i]) * z;
            den = (den + ERF_B[i]) * z;
        }
        let erf = x * (num + ERF_A[3]) / (den + ERF_B[3]);
        return 1.0 - erf;
    }

    let result = if y <= 4.0 {
        let mut num = ERFC_C[8] * y;
        let mut den = y;
        for i in 0..7 {
            num = (num + ERFC_C[i]) * y;
            den = (den + ERFC_D[i]) * y;
        }
        (num + ERFC_C[7]) / (den + ERFC_D[7])
    } else {
        let z = 1.0 / (y * y);
        let mut num = ERFC_P[5] * z;
        let mut den = z;
        for i in 0..4 {
            num = (num + ERFC_P[i]) * z;
            den = (den + ERFC_Q[i]) * z;
        }
        let tail = z * (num + ERFC_P[4]) / (den + ERFC_Q[4]);
        (ONE_OVER_SQRT_PI - tail) / y
    };

    // exp(-y^2) split into an exact-square part and a small remainder to
    // avoid the cancellation in y*y for large y
    let ysq = (y * 16.0).trunc() / 16.0;
    let del = (y - ysq) * (y + ysq);
    let scaled = (-ysq * ysq).exp() * (-del).exp() * result;

    if x < 0.0 {
        2.0 - scaled
    } else {
        scaled
    }
}

/// Standard normal CDF, |error| < 1e-12 over the real line.
#[inline]
pub fn norm_cdf(x: f64) -> f64 {
    0.5 * erfc(-x * FRAC_1_SQRT_2)
}

/// European call price.
///
/// `t = 0` and `sigma = 0` degenerate to the discounted forward intrinsic
/// value; negative inputs are domain errors.
pub fn bs_call(s: f64, k: f64, r: f64, sigma: f64, t: f64) -> Result<f64> {
    if s < 0.0 || k < 0.0 || sigma < 0.0 || t < 0.0 {
        return Err(Error::Domain(format!(
            "bs_call requires s, k, sigma, t >= 0, got s={s}, k={k}, sigma={sigma}, t={t}"
        )));
    }
    Ok(bs_call_unchecked(s, k, r, sigma, t))
}

/// Hot-path call price; inputs validated by the caller.
#[inline]
pub(crate) fn bs_call_unchecked(s: f64, k: f64, r: f64, sigma: f64, t: f64) -> f64 {
    if t == 0.0 {
        return (s - k).max(0.0);
    }
    if sigma == 0.0 || s == 0.0 || k == 0.0 {
        return (s - k * (-r * t).exp()).max(0.0);
    }
    let vol = sigma * t.sqrt();
    let d1 = ((s / k).ln() + (r + 0.5 * sigma * sigma) * t) / vol;
    let d2 = d1 - vol;
    s * norm_cdf(d1) - k * (-r * t).exp() * norm_cdf(d2)
}

/// Portfolio value at time 0: the sum of calls over every (asset, strike)
/// pair, priced at maturity.
pub fn portfolio_value_0(config: &MarketConfig) -> f64 {
    let mut total = 0.0;
    for asset in 0..config.d {
        for &strike in &config.strikes {
            total += bs_call_unchecked(
                config.s0[asset],
                strike,
                config.r,
                config.sigma[asset],
                config.maturity,
            );
        }
    }
    total
}
