//! PAC-Bayes-λ bound for a Bernoulli risk, with a Bernoulli-vs-Bernoulli KL
//! between the target's empirical risk and a source prior at the same
//! threshold.

use serde::{Deserialize, Serialize};

use crate::data::check_open_unit;
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PacBayesConfig {
    pub lambda_grid: Vec<f64>,
    pub clip_eps: f64,
    /// Grid size `K` behind the uninformative prior, whose KL is `ln K`.
    pub k_fallback: usize,
}

impl Default for PacBayesConfig {
    /// 200 log-spaced λ in `[0.01, 100]`, `clip_eps = 1e-10`, `K = 100`.
    fn default() -> Self {
        PacBayesConfig {
            lambda_grid: log_spaced(0.01, 100.0, 200),
            clip_eps: 1e-10,
            k_fallback: 100,
        }
    }
}

impl PacBayesConfig {
    pub fn validate(&self) -> Result<()> {
        if self.lambda_grid.is_empty() {
            return Err(Error::param("lambda_grid", "must not be empty"));
        }
        if self.lambda_grid[0] <= 0.0 || self.lambda_grid.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::param("lambda_grid", "must be positive and strictly increasing"));
        }
        check_clip(self.clip_eps)?;
        if self.k_fallback == 0 {
            return Err(Error::param("k_fallback", "must be positive"));
        }
        Ok(())
    }
}

pub fn log_spaced(lo: f64, hi: f64, count: usize) -> Vec<f64> {
    if count == 1 {
        return vec![lo];
    }
    let (a, b) = (lo.ln(), hi.ln());
    (0..count)
        .map(|i| (a + (b - a) * i as f64 / (count - 1) as f64).exp())
        .collect()
}

fn check_clip(clip_eps: f64) -> Result<()> {
    if clip_eps > 0.0 && clip_eps <= 1e-3 {
        Ok(())
    } else {
        Err(Error::param("clip_eps", format!("{clip_eps} not in (0, 1e-3]")))
    }
}

/// `KL(Ber(p) || Ber(q))` with both arguments clipped into
/// `[clip_eps, 1 - clip_eps]`.
pub fn bernoulli_kl(p: f64, q: f64, clip_eps: f64) -> Result<f64> {
    check_clip(clip_eps)?;
    let p = p.clamp(clip_eps, 1.0 - clip_eps);
    let q = q.clamp(clip_eps, 1.0 - clip_eps);
    let kl = p * (p / q).ln() + (1.0 - p) * ((1.0 - p) / (1.0 - q)).ln();
    // Rounding can leave a tiny negative value when p == q.
    Ok(kl.max(0.0))
}

/// `(1 - e^{-λ R̂}) / (1 - e^{-λ}) + (KL + ln(2 sqrt(n) / delta)) / (λ n)`.
pub fn pacbayes_lambda_bound(risk_hat: f64, kl: f64, n: usize, delta: f64, lambda: f64) -> Result<f64> {
    if !(lambda > 0.0 && lambda.is_finite()) {
        return Err(Error::param("lambda", format!("{lambda} must be positive")));
    }
    if n == 0 {
        return Err(Error::param("n", "must be at least 1"));
    }
    check_open_unit("delta", delta)?;
    if !(kl >= 0.0) {
        return Err(Error::param("kl", format!("{kl} must be non-negative")));
    }
    let n = n as f64;
    let first = -(-lambda * risk_hat).exp_m1() / -(-lambda).exp_m1();
    Ok(first + (kl + (2.0 * n.sqrt() / delta).ln()) / (lambda * n))
}

/// Minimum of [`pacbayes_lambda_bound`] over the λ grid, clipped to `[0, 1]`.
///
/// With `prior_risk` the complexity term is `KL(R̂ || prior_risk)`; without
/// one it falls back to `ln(k_fallback)`.
pub fn pacbayes_ucb(
    risk_hat: f64,
    n: usize,
    prior_risk: Option<f64>,
    cfg: &PacBayesConfig,
    delta: f64,
) -> Result<f64> {
    cfg.validate()?;
    if !(0.0..=1.0).contains(&risk_hat) {
        return Err(Error::param("risk_hat", format!("{risk_hat} not in [0, 1]")));
    }
    let kl = match prior_risk {
        Some(q) => bernoulli_kl(risk_hat, q, cfg.clip_eps)?,
        None => (cfg.k_fallback as f64).ln(),
    };
    let mut best = f64::INFINITY;
    for &lambda in &cfg.lambda_grid {
        best = best.min(pacbayes_lambda_bound(risk_hat, kl, n, delta, lambda)?);
    }
    Ok(best.clamp(0.0, 1.0))
}
