//! Correction terms and upper confidence bounds built from concentration
//! inequalities, plus the beta-quantile kernel behind Clopper-Pearson.
//!
//! `k` is the number of simultaneous tests the failure probability is split
//! across: the grid size `K` under a Bonferroni union bound, `1` under
//! fixed-sequence testing.

use serde::{Deserialize, Serialize};

use crate::data::{check_open_unit, LossVector};
use crate::special;
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum CorrectionMethod {
    HoeffdingUnion,
    Hoeffding,
    BernsteinUnion,
    Bernstein,
    #[serde(rename = "CP")]
    ClopperPearson,
    #[serde(rename = "DRO")]
    Dro,
    #[serde(rename = "CVaR")]
    Cvar,
}

/// Slack added to an empirical risk to make it an upper confidence bound.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Correction {
    pub value: f64,
    pub method: CorrectionMethod,
}

impl Correction {
    pub fn new(value: f64, method: CorrectionMethod) -> Result<Self> {
        if !(value.is_finite() && value >= 0.0) {
            return Err(Error::param("correction", format!("{value} is not a finite non-negative value")));
        }
        Ok(Correction { value, method })
    }
}

fn check_counts(n: usize, k: usize, delta: f64) -> Result<()> {
    if n == 0 {
        return Err(Error::param("n", "must be at least 1"));
    }
    if k == 0 {
        return Err(Error::param("k", "must be at least 1"));
    }
    check_open_unit("delta", delta)
}

/// `sqrt(ln(k / delta) / (2n))`.
pub fn hoeffding_correction(n: usize, k: usize, delta: f64) -> Result<f64> {
    check_counts(n, k, delta)?;
    Ok(((k as f64 / delta).ln() / (2.0 * n as f64)).sqrt())
}

/// `sqrt(2 V ln(3k/delta) / n) + 3 ln(3k/delta) / n` for a binary-loss
/// variance `var_hat` in `[0, 0.25]`.
pub fn bernstein_correction(n: usize, k: usize, delta: f64, var_hat: f64) -> Result<f64> {
    if !(0.0..=0.25).contains(&var_hat) {
        return Err(Error::param(
            "var_hat",
            format!("{var_hat} outside [0, 0.25], the range of a binary-loss variance"),
        ));
    }
    bernstein_correction_raw(n, k, delta, var_hat)
}

/// The empirical Bernstein formula without the binary-variance range check,
/// for plotting the correction against hypothetical variances.
pub fn bernstein_correction_raw(n: usize, k: usize, delta: f64, var_hat: f64) -> Result<f64> {
    check_counts(n, k, delta)?;
    if !(var_hat >= 0.0 && var_hat.is_finite()) {
        return Err(Error::param("var_hat", format!("{var_hat} must be non-negative")));
    }
    let n = n as f64;
    let log_term = (3.0 * k as f64 / delta).ln();
    Ok((2.0 * var_hat * log_term / n).sqrt() + 3.0 * log_term / n)
}

/// Regularized incomplete beta function `I_x(a, b)`.
pub fn regularized_incomplete_beta(a: f64, b: f64, x: f64) -> f64 {
    special::inc_beta(a, b, x)
}

/// Quantile of `Beta(a, b)` at `p`, accurate to `|I_x(a,b) - p| <= 1e-10`.
pub fn beta_quantile(a: f64, b: f64, p: f64) -> Result<f64> {
    special::inv_inc_beta(a, b, p)
}

/// Exact binomial upper bound: the `1 - delta` quantile of
/// `Beta(S + 1, n - S)`, or 1 when every loss is 1.
pub fn clopper_pearson_ucb(successes: usize, n: usize, delta: f64) -> Result<f64> {
    check_counts(n, 1, delta)?;
    if successes > n {
        return Err(Error::param("successes", format!("{successes} exceeds n = {n}")));
    }
    if successes == n {
        return Ok(1.0);
    }
    beta_quantile((successes + 1) as f64, (n - successes) as f64, 1.0 - delta)
}

/// Wasserstein-DRO bound for binary losses:
/// `min(risk_hat + epsilon + hoeffding_correction(n, k, delta), 1)`.
pub fn dro_ucb(risk_hat: f64, n: usize, k: usize, delta: f64, epsilon: f64) -> Result<f64> {
    if !(epsilon >= 0.0 && epsilon.is_finite()) {
        return Err(Error::param("epsilon", format!("{epsilon} must be non-negative")));
    }
    Ok((risk_hat + epsilon + hoeffding_correction(n, k, delta)?).min(1.0))
}

/// Mean of the `ceil(n * beta)` largest losses.
pub fn empirical_cvar(losses: &LossVector, beta: f64) -> Result<f64> {
    check_beta(beta)?;
    if losses.is_empty() {
        return Err(Error::EmptyLosses);
    }
    let tail = tail_count(losses.len(), beta);
    Ok(losses.successes().min(tail) as f64 / tail as f64)
}

fn check_beta(beta: f64) -> Result<()> {
    if beta > 0.0 && beta <= 1.0 {
        Ok(())
    } else {
        Err(Error::param("beta", format!("{beta} is not in (0, 1]")))
    }
}

fn tail_count(n: usize, beta: f64) -> usize {
    // Guard the ceiling against products like 10 * 0.2 landing a hair above 2.
    ((n as f64 * beta - 1e-9).ceil() as usize).clamp(1, n)
}

/// `CVaR_beta + sqrt(ln(k/delta) / (2 n beta^2))`.
pub fn cvar_ucb(losses: &LossVector, beta: f64, n: usize, k: usize, delta: f64) -> Result<f64> {
    check_counts(n, k, delta)?;
    if losses.len() != n {
        return Err(Error::param(
            "n",
            format!("{n} does not match loss vector length {}", losses.len()),
        ));
    }
    let cvar = empirical_cvar(losses, beta)?;
    Ok(cvar + ((k as f64 / delta).ln() / (2.0 * n as f64 * beta * beta)).sqrt())
}
