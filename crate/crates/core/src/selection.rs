//! Threshold selection over a grid: Bonferroni union-bound sweeps,
//! fixed-sequence (Learn Then Test) sweeps, certificates, test-set evaluation
//! and per-class runs.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::betting::{self, BettingConfig, TransferPrior};
use crate::concentration::{
    bernstein_correction, clopper_pearson_ucb, cvar_ucb, dro_ucb, hoeffding_correction,
};
use crate::data::{coverage, losses_at, Dataset, LossVector, RiskBudget, RiskProfile, ThresholdGrid};
use crate::pacbayes::{pacbayes_ucb, PacBayesConfig};
use crate::{Error, Result};

/// Bound family tags, in table order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Family {
    HoeffdingUnion,
    BernsteinUnion,
    LttHoeffding,
    LttBernstein,
    CpLtt,
    WsrLtt,
    TransferBetting,
    PacBayes,
    PacBayesTransfer,
    DroUnion,
    CvarUnion,
}

impl Family {
    pub const ALL: [Family; 11] = [
        Family::HoeffdingUnion,
        Family::BernsteinUnion,
        Family::LttHoeffding,
        Family::LttBernstein,
        Family::CpLtt,
        Family::WsrLtt,
        Family::TransferBetting,
        Family::PacBayes,
        Family::PacBayesTransfer,
        Family::DroUnion,
        Family::CvarUnion,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Family::HoeffdingUnion => "hoeffding_union",
            Family::BernsteinUnion => "bernstein_union",
            Family::LttHoeffding => "ltt_hoeffding",
            Family::LttBernstein => "ltt_bernstein",
            Family::CpLtt => "cp_ltt",
            Family::WsrLtt => "wsr_ltt",
            Family::TransferBetting => "transfer_betting",
            Family::PacBayes => "pac_bayes",
            Family::PacBayesTransfer => "pac_bayes_transfer",
            Family::DroUnion => "dro_union",
            Family::CvarUnion => "cvar_union",
        }
    }

    /// Union families split `delta` across the whole grid and may pick any
    /// passing threshold. The uninformative PAC-Bayes prior belongs here: its
    /// `ln K` complexity term is exactly the Bonferroni price.
    pub fn is_union(self) -> bool {
        matches!(
            self,
            Family::HoeffdingUnion
                | Family::BernsteinUnion
                | Family::PacBayes
                | Family::DroUnion
                | Family::CvarUnion
        )
    }

    pub fn needs_source(self) -> bool {
        matches!(self, Family::TransferBetting | Family::PacBayesTransfer)
    }
}

impl fmt::Display for Family {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Family {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        Family::ALL
            .into_iter()
            .find(|f| f.name() == s)
            .ok_or_else(|| Error::param("family", format!("unknown bound family `{s}`")))
    }
}

/// A fully parameterized bound family.
#[derive(Debug, Clone, PartialEq)]
pub enum BoundSpec {
    HoeffdingUnion,
    BernsteinUnion,
    LttHoeffding,
    LttBernstein,
    CpLtt,
    /// The betting config's `delta` is replaced by the budget's at evaluation.
    WsrLtt {
        betting: BettingConfig,
    },
    TransferBetting {
        betting: BettingConfig,
        n_eff: f64,
        source: Arc<RiskProfile>,
    },
    /// `k_fallback` is replaced by the grid size during sweeps.
    PacBayes {
        config: PacBayesConfig,
    },
    PacBayesTransfer {
        config: PacBayesConfig,
        source: Arc<RiskProfile>,
    },
    DroUnion {
        epsilon: f64,
    },
    CvarUnion {
        beta: f64,
    },
}

pub const DEFAULT_N_EFF: f64 = 50.0;

impl BoundSpec {
    /// Default parameters for `family`: ε = 0.01, β = 0.2, `n_eff` = 50,
    /// default betting and PAC-Bayes configs. Transfer families need `source`.
    pub fn with_defaults(family: Family, source: Option<Arc<RiskProfile>>) -> Result<Self> {
        let betting = BettingConfig::new(0.1)?;
        let need = |source: Option<Arc<RiskProfile>>| {
            source.ok_or(Error::MissingSourceProfile(family.name()))
        };
        Ok(match family {
            Family::HoeffdingUnion => BoundSpec::HoeffdingUnion,
            Family::BernsteinUnion => BoundSpec::BernsteinUnion,
            Family::LttHoeffding => BoundSpec::LttHoeffding,
            Family::LttBernstein => BoundSpec::LttBernstein,
            Family::CpLtt => BoundSpec::CpLtt,
            Family::WsrLtt => BoundSpec::WsrLtt { betting },
            Family::TransferBetting => BoundSpec::TransferBetting {
                betting,
                n_eff: DEFAULT_N_EFF,
                source: need(source)?,
            },
            Family::PacBayes => BoundSpec::PacBayes {
                config: PacBayesConfig::default(),
            },
            Family::PacBayesTransfer => BoundSpec::PacBayesTransfer {
                config: PacBayesConfig::default(),
                source: need(source)?,
            },
            Family::DroUnion => BoundSpec::DroUnion { epsilon: 0.01 },
            Family::CvarUnion => BoundSpec::CvarUnion { beta: 0.2 },
        })
    }

    pub fn family(&self) -> Family {
        match self {
            BoundSpec::HoeffdingUnion => Family::HoeffdingUnion,
            BoundSpec::BernsteinUnion => Family::BernsteinUnion,
            BoundSpec::LttHoeffding => Family::LttHoeffding,
            BoundSpec::LttBernstein => Family::LttBernstein,
            BoundSpec::CpLtt => Family::CpLtt,
            BoundSpec::WsrLtt { .. } => Family::WsrLtt,
            BoundSpec::TransferBetting { .. } => Family::TransferBetting,
            BoundSpec::PacBayes { .. } => Family::PacBayes,
            BoundSpec::PacBayesTransfer { .. } => Family::PacBayesTransfer,
            BoundSpec::DroUnion { .. } => Family::DroUnion,
            BoundSpec::CvarUnion { .. } => Family::CvarUnion,
        }
    }

    /// Family name plus the parameters that distinguish table rows.
    pub fn label(&self) -> String {
        match self {
            BoundSpec::DroUnion { epsilon } => format!("dro_union(eps={epsilon})"),
            BoundSpec::CvarUnion { beta } => format!("cvar_union(beta={beta})"),
            BoundSpec::TransferBetting { n_eff, .. } => format!("transfer_betting(n_eff={n_eff})"),
            other => other.family().name().to_string(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            BoundSpec::WsrLtt { betting } => betting.validate(),
            BoundSpec::TransferBetting { betting, n_eff, source } => {
                betting.validate()?;
                TransferPrior::new(0.0, 0.0, *n_eff)?;
                if source.entries.is_empty() {
                    return Err(Error::MissingSourceProfile("transfer_betting"));
                }
                Ok(())
            }
            BoundSpec::PacBayes { config } => config.validate(),
            BoundSpec::PacBayesTransfer { config, source } => {
                config.validate()?;
                if source.entries.is_empty() {
                    return Err(Error::MissingSourceProfile("pac_bayes_transfer"));
                }
                Ok(())
            }
            BoundSpec::DroUnion { epsilon } if !(*epsilon >= 0.0 && epsilon.is_finite()) => {
                Err(Error::param("epsilon", format!("{epsilon} must be non-negative")))
            }
            BoundSpec::CvarUnion { beta } if !(*beta > 0.0 && *beta <= 1.0) => {
                Err(Error::param("beta", format!("{beta} not in (0, 1]")))
            }
            _ => Ok(()),
        }
    }

    /// Upper confidence bound on the risk at the threshold the losses were
    /// taken at. `k` splits `delta` for the union families and is ignored by
    /// the fixed-sequence ones (which always spend the full `delta`).
    pub fn ucb(&self, losses: &LossVector, delta: f64, k: usize) -> Result<f64> {
        let n = losses.len();
        if n == 0 {
            return Err(Error::EmptyLosses);
        }
        let risk = losses.mean();
        let tau = losses.tau();
        match self {
            BoundSpec::HoeffdingUnion => Ok(risk + hoeffding_correction(n, k, delta)?),
            BoundSpec::LttHoeffding => Ok(risk + hoeffding_correction(n, 1, delta)?),
            BoundSpec::BernsteinUnion => Ok(risk + bernstein_correction(n, k, delta, binary_var(losses))?),
            BoundSpec::LttBernstein => Ok(risk + bernstein_correction(n, 1, delta, binary_var(losses))?),
            BoundSpec::CpLtt => clopper_pearson_ucb(losses.successes(), n, delta),
            BoundSpec::WsrLtt { betting } => {
                let mut cfg = *betting;
                cfg.delta = delta;
                betting::wsr_ucb(losses, &cfg, None)
            }
            BoundSpec::TransferBetting {
                betting,
                n_eff,
                source,
            } => {
                let mut cfg = *betting;
                cfg.delta = delta;
                let entry = source
                    .at(tau)
                    .ok_or(Error::MissingSourceProfile("transfer_betting"))?;
                let prior = TransferPrior::new(entry.risk_hat, entry.var_hat.min(0.25), *n_eff)?;
                betting::wsr_ucb(losses, &cfg, Some(&prior))
            }
            BoundSpec::PacBayes { config } => {
                let cfg = PacBayesConfig {
                    k_fallback: k,
                    ..config.clone()
                };
                pacbayes_ucb(risk, n, None, &cfg, delta)
            }
            BoundSpec::PacBayesTransfer { config, source } => {
                let entry = source
                    .at(tau)
                    .ok_or(Error::MissingSourceProfile("pac_bayes_transfer"))?;
                pacbayes_ucb(risk, n, Some(entry.risk_hat), config, delta)
            }
            BoundSpec::DroUnion { epsilon } => dro_ucb(risk, n, k, delta, *epsilon),
            BoundSpec::CvarUnion { beta } => cvar_ucb(losses, *beta, n, k, delta),
        }
    }
}

/// Population variance of binary losses, clamped against rounding above 0.25.
fn binary_var(losses: &LossVector) -> f64 {
    losses.variance().min(0.25)
}

/// Per-threshold UCB of `spec` on `cal` at `tau`. Union families split
/// `delta` over `k_for_union` tests; fixed-sequence families use `k = 1`.
pub fn ucb_at(
    spec: &BoundSpec,
    cal: &Dataset,
    tau: f64,
    budget: RiskBudget,
    k_for_union: usize,
) -> Result<f64> {
    spec.validate()?;
    spec.ucb(&losses_at(cal, tau)?, budget.delta, k_for_union)
}

/// Outcome of a threshold sweep.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Certificate {
    pub method: String,
    pub family: Family,
    pub alpha: f64,
    pub delta: f64,
    pub tau_star: Option<f64>,
    pub feasible: bool,
    /// Threshold the statistics below refer to: `tau_star` when feasible,
    /// otherwise the tested threshold with the smallest UCB.
    pub diagnostic_tau: f64,
    pub ucb_at_tau: f64,
    pub cal_risk_at_tau: f64,
    pub cal_coverage_at_tau: f64,
    /// `ucb_at_tau - cal_risk_at_tau`.
    pub correction_at_tau: f64,
}

#[derive(Debug, Clone, Copy)]
struct Tested {
    tau: f64,
    ucb: f64,
    risk: f64,
}

fn certificate(
    spec: &BoundSpec,
    cal: &Dataset,
    budget: RiskBudget,
    chosen: Option<Tested>,
    best: Tested,
) -> Result<Certificate> {
    let at = chosen.unwrap_or(best);
    Ok(Certificate {
        method: spec.label(),
        family: spec.family(),
        alpha: budget.alpha,
        delta: budget.delta,
        tau_star: chosen.map(|c| c.tau),
        feasible: chosen.is_some(),
        diagnostic_tau: at.tau,
        ucb_at_tau: at.ucb,
        cal_risk_at_tau: at.risk,
        cal_coverage_at_tau: coverage(cal, at.tau)?,
        correction_at_tau: at.ucb - at.risk,
    })
}

fn test_threshold(spec: &BoundSpec, cal: &Dataset, tau: f64, budget: RiskBudget, k: usize) -> Result<Tested> {
    let losses = losses_at(cal, tau)?;
    Ok(Tested {
        tau,
        ucb: spec.ucb(&losses, budget.delta, k)?,
        risk: losses.mean(),
    })
}

fn better(best: Option<Tested>, t: Tested) -> Option<Tested> {
    match best {
        Some(b) if b.ucb <= t.ucb => Some(b),
        _ => Some(t),
    }
}

/// Bonferroni sweep: every threshold is tested at `delta / K` and `tau*` is
/// the smallest threshold whose UCB is at most `alpha`.
pub fn sweep_union(spec: &BoundSpec, cal: &Dataset, grid: &ThresholdGrid, budget: RiskBudget) -> Result<Certificate> {
    spec.validate()?;
    if !spec.family().is_union() {
        return Err(Error::param(
            "spec",
            format!("{} is a fixed-sequence family", spec.family()),
        ));
    }
    let k = grid.len();
    let mut chosen = None;
    let mut best = None;
    for &tau in grid.thresholds() {
        let t = test_threshold(spec, cal, tau, budget, k)?;
        best = better(best, t);
        if chosen.is_none() && t.ucb <= budget.alpha {
            chosen = Some(t);
        }
    }
    certificate(spec, cal, budget, chosen, best.expect("grid is non-empty"))
}

/// Fixed-sequence sweep: thresholds are tested from the largest down, each at
/// the full `delta`, stopping at the first failure. `tau*` is the last
/// threshold that passed.
pub fn sweep_ltt(spec: &BoundSpec, cal: &Dataset, grid: &ThresholdGrid, budget: RiskBudget) -> Result<Certificate> {
    spec.validate()?;
    if spec.family().is_union() {
        return Err(Error::param(
            "spec",
            format!("{} is a union-bound family", spec.family()),
        ));
    }
    let mut chosen = None;
    let mut best = None;
    for &tau in grid.thresholds().iter().rev() {
        let t = test_threshold(spec, cal, tau, budget, 1)?;
        best = better(best, t);
        if t.ucb > budget.alpha {
            break;
        }
        chosen = Some(t);
    }
    certificate(spec, cal, budget, chosen, best.expect("grid is non-empty"))
}

/// Runs whichever sweep the spec's family calls for.
pub fn sweep(spec: &BoundSpec, cal: &Dataset, grid: &ThresholdGrid, budget: RiskBudget) -> Result<Certificate> {
    if spec.family().is_union() {
        sweep_union(spec, cal, grid, budget)
    } else {
        sweep_ltt(spec, cal, grid, budget)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Evaluation {
    pub test_risk: f64,
    pub test_coverage: f64,
    pub violated: bool,
}

/// Test-set risk and coverage at `tau*`. Infeasible certificates serve
/// nothing: zero risk, zero coverage, no violation.
pub fn evaluate(cert: &Certificate, test: &Dataset) -> Result<Evaluation> {
    if test.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let Some(tau) = cert.tau_star else {
        return Ok(Evaluation {
            test_risk: 0.0,
            test_coverage: 0.0,
            violated: false,
        });
    };
    let test_risk = crate::data::empirical_risk(test, tau)?;
    Ok(Evaluation {
        test_risk,
        test_coverage: coverage(test, tau)?,
        violated: test_risk > cert.alpha,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct IntentResult {
    pub label: usize,
    pub n_cal: usize,
    pub n_test: usize,
    pub below_min_size: bool,
    pub certificate: Certificate,
    /// `None` when the class has no test records.
    pub evaluation: Option<Evaluation>,
}

/// Sweeps each gold class independently. Classes smaller than `min_size`
/// still run and are flagged.
pub fn per_intent_sweep(
    spec: &BoundSpec,
    cal: &Dataset,
    test: &Dataset,
    grid: &ThresholdGrid,
    budget: RiskBudget,
    min_size: usize,
) -> Result<BTreeMap<usize, IntentResult>> {
    let group = |ds: &Dataset| {
        let mut by: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
        for (i, r) in ds.records().iter().enumerate() {
            by.entry(r.gold).or_default().push(i);
        }
        by
    };
    let cal_groups = group(cal);
    let test_groups = group(test);
    let mut out = BTreeMap::new();
    for (label, idx) in cal_groups {
        let class_cal = cal.subset(&idx)?;
        let certificate = sweep(spec, &class_cal, grid, budget)?;
        let (evaluation, n_test) = match test_groups.get(&label) {
            Some(t) => (Some(evaluate(&certificate, &test.subset(t)?)?), t.len()),
            None => (None, 0),
        };
        out.insert(
            label,
            IntentResult {
                label,
                n_cal: idx.len(),
                n_test,
                below_min_size: idx.len() < min_size,
                certificate,
                evaluation,
            },
        );
    }
    Ok(out)
}
