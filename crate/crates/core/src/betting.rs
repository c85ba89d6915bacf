//! Betting wealth processes with the GROW betting fraction, their inversion
//! into an upper confidence bound, and the transfer-informed warm start.
//!
//! For a candidate mean `m` the wealth is `K_t = prod_{i<=t} (1 + lambda_i (X_i - m))`
//! with `lambda_i >= 0` chosen from observations before `i` only. With
//! non-negative bets this is a supermartingale whenever `E[X] <= m`, so a large
//! running maximum is evidence that the mean exceeds `m`.
//!
//! An upper bound needs the opposite evidence. [`wsr_ucb`] therefore runs the
//! same process on the reflected losses `1 - X` against `1 - m`, which is
//! `prod (1 + lambda_i (m - X_i))` with the fraction computed from `m - mu_hat`.
//! That process is a supermartingale whenever `E[X] >= m`, and Ville's
//! inequality bounds the chance of ever rejecting the true mean by `delta`.

use serde::{Deserialize, Serialize};

use crate::data::{check_open_unit, LossVector};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BettingConfig {
    pub delta: f64,
    pub lambda_max: f64,
    pub m_grid_step: f64,
    /// Cold-start mean, used as a pseudo-observation.
    pub mu0: f64,
    /// Cold-start variance, used as a pseudo-observation.
    pub sigma2_0: f64,
    #[serde(skip)]
    signed_bets: bool,
}

impl BettingConfig {
    pub fn new(delta: f64) -> Result<Self> {
        let cfg = BettingConfig {
            delta,
            lambda_max: 0.5,
            m_grid_step: 1e-3,
            mu0: 0.5,
            sigma2_0: 0.25,
            signed_bets: false,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        check_open_unit("delta", self.delta)?;
        if !(self.lambda_max > 0.0 && self.lambda_max <= 0.5) {
            return Err(Error::param("lambda_max", format!("{} not in (0, 0.5]", self.lambda_max)));
        }
        if !(self.m_grid_step > 0.0 && self.m_grid_step <= 0.1) {
            return Err(Error::param("m_grid_step", format!("{} not in (0, 0.1]", self.m_grid_step)));
        }
        if !(0.0..=1.0).contains(&self.mu0) {
            return Err(Error::param("mu0", format!("{} not in [0, 1]", self.mu0)));
        }
        if !(self.sigma2_0 >= 0.0 && self.sigma2_0.is_finite()) {
            return Err(Error::param("sigma2_0", "must be non-negative"));
        }
        Ok(())
    }

    /// Lets the betting fraction go negative (clip to `[-lambda_max, lambda_max]`).
    /// This breaks the supermartingale property and exists only so validity
    /// checks can demonstrate that they catch it.
    #[doc(hidden)]
    pub fn with_signed_bets_unchecked(mut self) -> Self {
        self.signed_bets = true;
        self
    }

    /// Number of intervals in the candidate-mean grid over `[0, 1]`.
    fn grid_intervals(&self) -> usize {
        ((1.0 / self.m_grid_step).round() as usize).max(1)
    }
}

/// Source-domain statistics at one threshold and the prior strength `n_eff`
/// in pseudo-observations.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TransferPrior {
    pub source_risk: f64,
    pub source_var: f64,
    pub n_eff: f64,
}

impl TransferPrior {
    pub fn new(source_risk: f64, source_var: f64, n_eff: f64) -> Result<Self> {
        if !(0.0..=1.0).contains(&source_risk) {
            return Err(Error::param("source_risk", format!("{source_risk} not in [0, 1]")));
        }
        if !(0.0..=0.25).contains(&source_var) {
            return Err(Error::param("source_var", format!("{source_var} not in [0, 0.25]")));
        }
        if !(n_eff >= 0.0 && n_eff.is_finite()) {
            return Err(Error::param("n_eff", format!("{n_eff} must be non-negative")));
        }
        Ok(TransferPrior {
            source_risk,
            source_var,
            n_eff,
        })
    }

    fn reflected(self) -> Self {
        TransferPrior {
            source_risk: 1.0 - self.source_risk,
            ..self
        }
    }
}

/// GROW betting fraction `(mu_hat - m) / (sigma2_hat + (mu_hat - m)^2)`,
/// clipped to `[0, lambda_max]`. A zero denominator gives 0.
pub fn grow_lambda(mu_hat: f64, sigma2_hat: f64, m: f64, lambda_max: f64) -> f64 {
    raw_grow(mu_hat, sigma2_hat, m).clamp(0.0, lambda_max)
}

fn raw_grow(mu_hat: f64, sigma2_hat: f64, m: f64) -> f64 {
    let d = mu_hat - m;
    let denom = sigma2_hat + d * d;
    if denom <= 0.0 {
        0.0
    } else {
        d / denom
    }
}

/// Blends running estimates with the source statistics at weight
/// `w = n_eff / (n_eff + t)`; `n_eff = 0` always gives `w = 0`.
pub fn tib_blend(running_mu: f64, running_var: f64, t: usize, prior: &TransferPrior) -> (f64, f64) {
    let w = blend_weight(t, prior.n_eff);
    (
        w * prior.source_risk + (1.0 - w) * running_mu,
        w * prior.source_var + (1.0 - w) * running_var,
    )
}

pub fn blend_weight(t: usize, n_eff: f64) -> f64 {
    if n_eff == 0.0 {
        0.0
    } else {
        n_eff / (n_eff + t as f64)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Wealth {
    pub final_wealth: f64,
    pub max_wealth: f64,
}

/// The predictable `(mu_hat_{t-1}, sigma2_hat_{t-1})` used at each step `t`.
///
/// Running estimates carry the cold-start values as one pseudo-observation:
/// `mu_hat_{t-1} = (mu0 + sum_{i<t} X_i) / t` and
/// `sigma2_hat_{t-1} = (sigma2_0 + sum_{i<t} (X_i - mu_hat_i)^2) / t`. With a
/// prior, step `t` blends them using `t - 1` observed points.
pub fn predictable_estimates(
    xs: &[f64],
    mu0: f64,
    sigma2_0: f64,
    prior: Option<&TransferPrior>,
) -> Vec<(f64, f64)> {
    let mut out = Vec::with_capacity(xs.len());
    let mut sum = 0.0;
    let mut sq = 0.0;
    for (i, &x) in xs.iter().enumerate() {
        let t = (i + 1) as f64;
        let running = ((mu0 + sum) / t, (sigma2_0 + sq) / t);
        out.push(match prior {
            Some(p) => tib_blend(running.0, running.1, i, p),
            None => running,
        });
        sum += x;
        let mu_now = (mu0 + sum) / (t + 1.0);
        sq += (x - mu_now).powi(2);
    }
    out
}

#[derive(Clone, Copy)]
enum Side {
    /// Factor `1 + lambda (X - m)`: evidence that the mean exceeds `m`.
    Above,
    /// Factor `1 + lambda (m - X)`: evidence that the mean is below `m`.
    Below,
}

struct Bettor {
    lambda_max: f64,
    signed: bool,
}

impl Bettor {
    fn new(cfg: &BettingConfig) -> Self {
        Bettor {
            lambda_max: cfg.lambda_max,
            signed: cfg.signed_bets,
        }
    }

    #[inline]
    fn lambda(&self, mu: f64, var: f64, m: f64, side: Side) -> f64 {
        let raw = match side {
            Side::Above => raw_grow(mu, var, m),
            Side::Below => raw_grow(m, var, mu),
        };
        if self.signed {
            raw.clamp(-self.lambda_max, self.lambda_max)
        } else {
            raw.clamp(0.0, self.lambda_max)
        }
    }

    /// Runs the process, stopping early once the running max reaches `stop_at`.
    fn run(&self, xs: &[f64], est: &[(f64, f64)], m: f64, side: Side, stop_at: f64) -> Wealth {
        let mut k = 1.0f64;
        let mut max = 1.0f64;
        for (&x, &(mu, var)) in xs.iter().zip(est) {
            let lambda = self.lambda(mu, var, m, side);
            let step = match side {
                Side::Above => x - m,
                Side::Below => m - x,
            };
            let factor = 1.0 + lambda * step;
            debug_assert!(factor > 0.0, "wealth factor {factor} must stay positive");
            k *= factor;
            if k > max {
                max = k;
                if max >= stop_at {
                    break;
                }
            }
        }
        Wealth {
            final_wealth: k,
            max_wealth: max,
        }
    }
}

fn as_f64(losses: &LossVector) -> Vec<f64> {
    losses.losses().iter().map(|&l| l as f64).collect()
}

fn check_m(m: f64) -> Result<()> {
    if (0.0..=1.0).contains(&m) {
        Ok(())
    } else {
        Err(Error::param("m", format!("{m} not in [0, 1]")))
    }
}

/// Wealth against candidate mean `m`, betting that the mean exceeds `m`.
pub fn wsr_wealth(
    losses: &LossVector,
    m: f64,
    cfg: &BettingConfig,
    prior: Option<&TransferPrior>,
) -> Result<Wealth> {
    cfg.validate()?;
    check_m(m)?;
    let xs = as_f64(losses);
    let est = predictable_estimates(&xs, cfg.mu0, cfg.sigma2_0, prior);
    Ok(Bettor::new(cfg).run(&xs, &est, m, Side::Above, f64::INFINITY))
}

/// The process [`wsr_ucb`] inverts: [`wsr_wealth`] on reflected losses
/// `1 - X` against `1 - m`, with the cold start and prior mean reflected too.
pub fn wsr_wealth_upper(
    losses: &LossVector,
    m: f64,
    cfg: &BettingConfig,
    prior: Option<&TransferPrior>,
) -> Result<Wealth> {
    cfg.validate()?;
    check_m(m)?;
    let xs = as_f64(losses);
    let est = predictable_estimates(&xs, cfg.mu0, cfg.sigma2_0, prior);
    Ok(Bettor::new(cfg).run(&xs, &est, m, Side::Below, f64::INFINITY))
}

/// `K_0, K_1, ..., K_n` of [`wsr_wealth`] (`upper = false`) or
/// [`wsr_wealth_upper`] (`upper = true`).
pub fn wealth_path(
    losses: &[f64],
    m: f64,
    cfg: &BettingConfig,
    prior: Option<&TransferPrior>,
    upper: bool,
) -> Vec<f64> {
    let est = predictable_estimates(losses, cfg.mu0, cfg.sigma2_0, prior);
    let bettor = Bettor::new(cfg);
    let side = if upper { Side::Below } else { Side::Above };
    let mut path = Vec::with_capacity(losses.len() + 1);
    let mut k = 1.0;
    path.push(k);
    for (&x, &(mu, var)) in losses.iter().zip(&est) {
        let lambda = bettor.lambda(mu, var, m, side);
        k *= 1.0 + lambda * if upper { m - x } else { x - m };
        path.push(k);
    }
    path
}

/// Betting upper confidence bound on the mean loss.
///
/// Scans the candidate grid `m = 1, 1 - step, ..., 0` from the top. A
/// candidate is rejected once the running maximum of its wealth reaches
/// `1/delta`. Returns the largest unrejected candidate plus one grid step
/// (capped at 1), a conservative rounding of `sup{m : K(m) < 1/delta}` that
/// does not assume the wealth is monotone in `m`.
pub fn wsr_ucb(losses: &LossVector, cfg: &BettingConfig, prior: Option<&TransferPrior>) -> Result<f64> {
    cfg.validate()?;
    if losses.is_empty() {
        return Err(Error::EmptyLosses);
    }
    let xs = as_f64(losses);
    Ok(ucb_from_f64(&xs, cfg, prior))
}

pub(crate) fn ucb_from_f64(xs: &[f64], cfg: &BettingConfig, prior: Option<&TransferPrior>) -> f64 {
    let est = predictable_estimates(xs, cfg.mu0, cfg.sigma2_0, prior);
    let bettor = Bettor::new(cfg);
    let threshold = 1.0 / cfg.delta;
    let g = cfg.grid_intervals();
    for j in (0..=g).rev() {
        let m = j as f64 / g as f64;
        if bettor.run(xs, &est, m, Side::Below, threshold).max_wealth < threshold {
            return if j == g { 1.0 } else { (j + 1) as f64 / g as f64 };
        }
    }
    // m = 0 never gets a positive bet, so its wealth stays at 1.
    1.0 / g as f64
}

/// Reflection used by the upper-side process, exposed for callers that want
/// to run [`wsr_wealth`] directly on mirrored data.
pub fn reflect_prior(prior: &TransferPrior) -> TransferPrior {
    prior.reflected()
}
