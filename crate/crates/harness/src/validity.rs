//! Monte Carlo validity suite.
//!
//! Every check reports the observed frequency or mean, the bound it is held
//! to, the Monte Carlo standard error behind that bound, and the seed. Trial
//! `t` of cell `c` in check family `f` draws from
//! `ChaCha8Rng::seed_from_u64(derive_seed(seed, [f, c, t]))`, so reports are
//! reproducible and independent of thread scheduling.

use std::fmt::Write as _;
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use selcert::betting::{wealth_path, wsr_ucb, BettingConfig, TransferPrior};
use selcert::concentration::clopper_pearson_ucb;
use selcert::conformal::{conformal_evaluate, conformal_fit};
use selcert::data::ProfileEntry;
use selcert::datagen::{generate, SyntheticSpec};
use selcert::selection::{sweep, BoundSpec, Family};
use selcert::{Dataset, LossVector, PredictionRecord, RiskBudget, RiskProfile, ThresholdGrid};

use crate::seeds::derive_seed;
use crate::Result;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Check {
    pub name: String,
    pub observed: f64,
    pub bound: f64,
    pub stderr: f64,
    pub trials: usize,
    pub seed: u64,
    pub passed: bool,
}

impl Check {
    pub fn line(&self) -> String {
        format!(
            "{} {}: observed={:.6} bound={:.6} stderr={:.6} trials={} seed={}",
            if self.passed { "PASS" } else { "FAIL" },
            self.name,
            self.observed,
            self.bound,
            self.stderr,
            self.trials,
            self.seed
        )
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ValidityReport {
    pub trials: usize,
    pub seed: u64,
    pub checks: Vec<Check>,
}

impl ValidityReport {
    pub fn passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }

    pub fn to_text(&self) -> String {
        let mut s = String::new();
        for c in &self.checks {
            let _ = writeln!(s, "{}", c.line());
        }
        let failed = self.checks.iter().filter(|c| !c.passed).count();
        let _ = writeln!(s, "{} checks, {} failed", self.checks.len(), failed);
        s
    }
}

/// Standard error of a frequency with success probability `q`.
pub fn freq_stderr(q: f64, trials: usize) -> f64 {
    (q * (1.0 - q) / trials as f64).sqrt()
}

fn mean_and_stderr(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0).max(1.0);
    (mean, (var / n).sqrt())
}

fn rng_for(seed: u64, tags: &[u64]) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(derive_seed(seed, tags))
}

fn bernoulli(rng: &mut ChaCha8Rng, p: f64, n: usize) -> Vec<u8> {
    (0..n).map(|_| u8::from(rng.random::<f64>() < p)).collect()
}

/// A one-entry profile with risk `r`, for transfer families on raw losses.
pub fn flat_profile(r: f64) -> Arc<RiskProfile> {
    Arc::new(RiskProfile {
        entries: vec![ProfileEntry {
            tau: 0.0,
            risk_hat: r,
            var_hat: r * (1.0 - r),
            n: 0,
        }],
    })
}

/// Every bound family with default parameters; transfer families use
/// `source`.
pub fn all_specs(source: &Arc<RiskProfile>) -> Vec<BoundSpec> {
    Family::ALL
        .into_iter()
        .map(|f| BoundSpec::with_defaults(f, Some(source.clone())).expect("defaults are valid"))
        .collect()
}

/// Union families split delta over `k_union` thresholds, as in a sweep over
/// a grid of that size; fixed-sequence families spend it whole.
fn k_for(spec: &BoundSpec, k_union: usize) -> usize {
    if spec.family().is_union() {
        k_union
    } else {
        1
    }
}

/// Exact `P[CP(S) >= p]` for `S ~ Binomial(n, p)`.
pub fn cp_exact_coverage(p: f64, n: usize, delta: f64) -> Result<f64> {
    let mut pmf = (1.0 - p).powi(n as i32);
    let mut total = 0.0;
    for s in 0..=n {
        if clopper_pearson_ucb(s, n, delta)? >= p {
            total += pmf;
        }
        pmf *= (n - s) as f64 / (s + 1) as f64 * p / (1.0 - p);
    }
    Ok(total.min(1.0))
}

/// UCB coverage `P[UCB >= p]` of every family on i.i.d. Bernoulli(p) losses.
/// Transfer families get a matched prior at `p`. Clopper-Pearson is also
/// compared with its exact binomial coverage.
pub fn ucb_coverage_checks(trials: usize, seed: u64, delta: f64, ps: &[f64], ns: &[usize], k_union: usize) -> Result<Vec<Check>> {
    let mut checks = Vec::new();
    let mut cell = 0u64;
    for &p in ps {
        let specs = all_specs(&flat_profile(p));
        for &n in ns {
            cell += 1;
            let hits = (0..trials)
                .into_par_iter()
                .map(|t| {
                    let mut rng = rng_for(seed, &[1, cell, t as u64]);
                    let losses = LossVector::new(bernoulli(&mut rng, p, n), 0.0)?;
                    specs
                        .iter()
                        .map(|s| Ok(s.ucb(&losses, delta, k_for(s, k_union))? >= p))
                        .collect::<Result<Vec<bool>>>()
                })
                .collect::<Result<Vec<_>>>()?;
            let se = freq_stderr(delta, trials);
            for (i, spec) in specs.iter().enumerate() {
                let freq = hits.iter().filter(|h| h[i]).count() as f64 / trials as f64;
                let bound = 1.0 - delta - 3.0 * se;
                checks.push(Check {
                    name: format!("ucb coverage {} p={p} n={n}", spec.family()),
                    observed: freq,
                    bound,
                    stderr: se,
                    trials,
                    seed,
                    passed: freq >= bound,
                });
                if spec.family() == Family::CpLtt {
                    let exact = cp_exact_coverage(p, n, delta)?;
                    let se_exact = freq_stderr(exact, trials);
                    checks.push(Check {
                        name: format!("cp matches exact coverage {exact:.6} p={p} n={n}"),
                        observed: freq,
                        bound: exact,
                        stderr: se_exact,
                        trials,
                        seed,
                        passed: (freq - exact).abs() <= 3.0 * se_exact + 1e-12,
                    });
                }
            }
        }
    }
    Ok(checks)
}

/// Which wealth process a martingale check runs.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WealthSetup {
    pub label: &'static str,
    pub prior: Option<TransferPrior>,
    pub signed: bool,
}

impl WealthSetup {
    pub fn cold() -> Self {
        WealthSetup {
            label: "cold",
            prior: None,
            signed: false,
        }
    }

    pub fn warm(label: &'static str, source_risk: f64, n_eff: f64) -> Self {
        WealthSetup {
            label,
            prior: Some(TransferPrior::new(source_risk, source_risk * (1.0 - source_risk), n_eff).expect("valid prior")),
            signed: false,
        }
    }

    pub fn signed_control() -> Self {
        WealthSetup {
            label: "signed-bets control",
            prior: None,
            signed: true,
        }
    }
}

/// Mean-wealth and Ville checks for the specified wealth process at
/// candidate mean `m >= p`. Returns (mean check, Ville check).
#[allow(clippy::too_many_arguments)]
pub fn wealth_checks(setup: WealthSetup, p: f64, m: f64, n: usize, delta: f64, trials: usize, seed: u64, cell: u64) -> Result<(Check, Check)> {
    let mut cfg = BettingConfig::new(delta)?;
    if setup.signed {
        cfg = cfg.with_signed_bets_unchecked();
    }
    let paths: Vec<Vec<f64>> = (0..trials)
        .into_par_iter()
        .map(|t| {
            let mut rng = rng_for(seed, &[2, cell, t as u64]);
            let xs: Vec<f64> = bernoulli(&mut rng, p, n).into_iter().map(f64::from).collect();
            wealth_path(&xs, m, &cfg, setup.prior.as_ref(), false)
        })
        .collect();
    // Worst step: largest excess of the mean over 1 + 3 stderr.
    let mut worst = (f64::NEG_INFINITY, 0.0, 0.0);
    for step in 0..=n {
        let col: Vec<f64> = paths.iter().map(|p| p[step]).collect();
        let (mean, se) = mean_and_stderr(&col);
        let excess = mean - (1.0 + 3.0 * se);
        if excess > worst.0 {
            worst = (excess, mean, se);
        }
    }
    let name = format!("{} wealth p={p} m={m} n={n}", setup.label);
    let mean_check = Check {
        name: format!("mean {name}"),
        observed: worst.1,
        bound: 1.0 + 3.0 * worst.2,
        stderr: worst.2,
        trials,
        seed,
        passed: worst.0 <= 0.0,
    };
    let crossed = paths
        .iter()
        .filter(|p| p.iter().any(|&k| k >= 1.0 / delta))
        .count() as f64
        / trials as f64;
    let se = freq_stderr(delta, trials);
    let ville = Check {
        name: format!("ville {name}"),
        observed: crossed,
        bound: delta + 3.0 * se,
        stderr: se,
        trials,
        seed,
        passed: crossed <= delta + 3.0 * se,
    };
    Ok((mean_check, ville))
}

/// Supermartingale and Ville checks for cold and warm-started processes at
/// `m >= p`, plus the signed-bet negative control, which is reported as
/// passing when its Ville check fails.
pub fn supermartingale_checks(trials: usize, seed: u64, p: f64, n: usize, delta: f64) -> Result<Vec<Check>> {
    let setups = [
        WealthSetup::cold(),
        WealthSetup::warm("warm matched", p, 50.0),
        WealthSetup::warm("warm optimistic", p / 4.0, 50.0),
        WealthSetup::warm("warm pessimistic", (p * 4.0).min(0.9), 50.0),
    ];
    let mut checks = Vec::new();
    let mut cell = 0;
    for setup in setups {
        for m in [p, p + 0.05, p + 0.1] {
            cell += 1;
            let (a, b) = wealth_checks(setup, p, m, n, delta, trials, seed, cell)?;
            checks.push(a);
            checks.push(b);
        }
    }
    let (_, ville) = wealth_checks(WealthSetup::signed_control(), p, p + 0.1, n, delta, trials, seed, 1000)?;
    checks.push(negative_control(ville));
    Ok(checks)
}

/// Turns a Ville check that must fail into a passing control check.
pub fn negative_control(ville: Check) -> Check {
    Check {
        name: format!("negative control fails as expected: {}", ville.name),
        passed: !ville.passed,
        ..ville
    }
}

fn ucb_pair(xs: &[u8], delta: f64, prior: &TransferPrior) -> Result<(f64, f64)> {
    let losses = LossVector::new(xs.to_vec(), 0.0)?;
    let cfg = BettingConfig::new(delta)?;
    Ok((wsr_ucb(&losses, &cfg, Some(prior))?, wsr_ucb(&losses, &cfg, None)?))
}

/// Transfer-informed betting against cold betting: dominance under a matched
/// prior, vanishing advantage as n grows, and coverage under mismatch.
pub fn tib_checks(trials: usize, coverage_trials: usize, seed: u64) -> Result<Vec<Check>> {
    let delta = 0.1;
    let p = 0.03;
    let matched = TransferPrior::new(p, p * (1.0 - p), 50.0)?;
    let mut checks = Vec::new();

    let pairs = (0..trials)
        .into_par_iter()
        .map(|t| {
            let mut rng = rng_for(seed, &[3, 1, t as u64]);
            ucb_pair(&bernoulli(&mut rng, p, 134), delta, &matched)
        })
        .collect::<Result<Vec<_>>>()?;
    let rate = pairs.iter().filter(|(tib, wsr)| tib <= wsr).count() as f64 / trials as f64;
    checks.push(Check {
        name: format!("tib <= wsr rate, matched prior p={p} n=134 n_eff=50"),
        observed: rate,
        bound: 0.95,
        stderr: freq_stderr(rate, trials),
        trials,
        seed,
        passed: rate >= 0.95,
    });

    let mut gaps = Vec::new();
    for (i, n) in [100usize, 500, 5000].into_iter().enumerate() {
        let diffs = (0..trials)
            .into_par_iter()
            .map(|t| {
                let mut rng = rng_for(seed, &[3, 2 + i as u64, t as u64]);
                let (a, b) = ucb_pair(&bernoulli(&mut rng, p, n), delta, &matched)?;
                Ok((a - b).abs())
            })
            .collect::<Result<Vec<f64>>>()?;
        let (mean, se) = mean_and_stderr(&diffs);
        gaps.push((n, mean, se));
    }
    for w in gaps.windows(2) {
        let ((n0, g0, _), (n1, g1, se1)) = (w[0], w[1]);
        checks.push(Check {
            name: format!("mean |tib - wsr| non-increasing n={n0}->{n1}"),
            observed: g1,
            bound: g0,
            stderr: se1,
            trials,
            seed,
            passed: g1 <= g0,
        });
    }
    let (n_last, g_last, se_last) = gaps[gaps.len() - 1];
    checks.push(Check {
        name: format!("mean |tib - wsr| at n={n_last}"),
        observed: g_last,
        bound: 0.01,
        stderr: se_last,
        trials,
        seed,
        passed: g_last < 0.01,
    });

    for (i, source) in [0.01, 0.3].into_iter().enumerate() {
        let prior = TransferPrior::new(source, source * (1.0 - source), 50.0)?;
        let covered = (0..coverage_trials)
            .into_par_iter()
            .map(|t| {
                let mut rng = rng_for(seed, &[3, 10 + i as u64, t as u64]);
                let losses = LossVector::new(bernoulli(&mut rng, p, 134), 0.0)?;
                Ok(wsr_ucb(&losses, &BettingConfig::new(delta)?, Some(&prior))? >= p)
            })
            .collect::<Result<Vec<bool>>>()?;
        let freq = covered.iter().filter(|c| **c).count() as f64 / coverage_trials as f64;
        let se = freq_stderr(delta, coverage_trials);
        checks.push(Check {
            name: format!("tib coverage under mismatched prior {source} (truth {p})"),
            observed: freq,
            bound: 1.0 - delta - 3.0 * se,
            stderr: se,
            trials: coverage_trials,
            seed,
            passed: freq >= 1.0 - delta - 3.0 * se,
        });
    }
    Ok(checks)
}

/// Mean UCB ordering oracle prior <= source-estimated prior <= uninformative
/// prior (mean 0.5), on Bernoulli(0.03) with n = 134 and n_eff = 50. Each
/// step holds when the paired mean difference is at most 3 paired stderr.
pub fn warm_start_checks(trials: usize, seed: u64) -> Result<Vec<Check>> {
    let (p, n, n_source, delta, n_eff) = (0.03, 134, 549, 0.1, 50.0);
    let rows = (0..trials)
        .into_par_iter()
        .map(|t| {
            let mut rng = rng_for(seed, &[4, 0, t as u64]);
            let source = bernoulli(&mut rng, p, n_source);
            let r_src = source.iter().map(|&x| f64::from(x)).sum::<f64>() / n_source as f64;
            let target = LossVector::new(bernoulli(&mut rng, p, n), 0.0)?;
            let cfg = BettingConfig::new(delta)?;
            let ucb = |r: f64| -> Result<f64> {
                Ok(wsr_ucb(&target, &cfg, Some(&TransferPrior::new(r, r * (1.0 - r), n_eff)?))?)
            };
            Ok([ucb(p)?, ucb(r_src)?, ucb(0.5)?])
        })
        .collect::<Result<Vec<[f64; 3]>>>()?;
    let names = ["oracle", "matched-source", "uninformative"];
    let mut checks = Vec::new();
    for i in 0..2 {
        let d: Vec<f64> = rows.iter().map(|r| r[i] - r[i + 1]).collect();
        let (mean, se) = mean_and_stderr(&d);
        checks.push(Check {
            name: format!("mean ucb {} <= {} (paired difference)", names[i], names[i + 1]),
            observed: mean,
            bound: 3.0 * se,
            stderr: se,
            trials,
            seed,
            passed: mean <= 3.0 * se,
        });
    }
    Ok(checks)
}

/// Split-conformal marginal coverage on exchangeable synthetic data, within
/// `[1 - alpha, 1 - alpha + 1/(n_cal + 1)]` widened by 3 stderr.
pub fn conformal_checks(trials: usize, seed: u64, alpha: f64, n_cal: usize, n_test: usize) -> Result<Check> {
    let covs = (0..trials)
        .into_par_iter()
        .map(|t| {
            let spec = SyntheticSpec {
                n: n_cal + n_test,
                seed: derive_seed(seed, &[5, 0, t as u64]),
                ..SyntheticSpec::massive_like(0)
            };
            let recs = generate(&spec)?.into_records();
            let cal = Dataset::new(recs[..n_cal].to_vec(), spec.num_classes)?;
            let test = Dataset::new(recs[n_cal..].to_vec(), spec.num_classes)?;
            Ok(conformal_evaluate(&conformal_fit(&cal, alpha)?, &test)?.coverage)
        })
        .collect::<Result<Vec<f64>>>()?;
    let (mean, se) = mean_and_stderr(&covs);
    let lo = 1.0 - alpha - 3.0 * se;
    let hi = 1.0 - alpha + 1.0 / (n_cal as f64 + 1.0) + 3.0 * se;
    Ok(Check {
        name: format!("conformal marginal coverage alpha={alpha} n_cal={n_cal} (upper {hi:.6})"),
        observed: mean,
        bound: lo,
        stderr: se,
        trials,
        seed,
        passed: mean >= lo && mean <= hi,
    })
}

/// True served-and-wrong risk of the selection model below at threshold `tau`.
pub fn synthetic_true_risk(tau: f64) -> f64 {
    0.2 * (1.0 - tau).powi(2)
}

/// Confidence uniform on [0, 1]; wrong with probability 0.4 (1 - conf).
fn synthetic_selection_data(rng: &mut ChaCha8Rng, n: usize) -> Result<Dataset> {
    let recs = (0..n)
        .map(|i| {
            let conf: f64 = rng.random();
            let wrong = rng.random::<f64>() < 0.4 * (1.0 - conf);
            PredictionRecord::new(i.to_string(), conf, usize::from(wrong), 0)
        })
        .collect();
    Ok(Dataset::new(recs, 2)?)
}

/// End-to-end guarantee: frequency of `R(tau*) > alpha` over resampled
/// calibration sets, for every family (transfer families use the exact
/// source profile of the generating model).
pub fn selection_guarantee_checks(trials: usize, seed: u64, n: usize, alpha: f64, delta: f64) -> Result<Vec<Check>> {
    let grid = ThresholdGrid::default();
    let profile = Arc::new(RiskProfile {
        entries: grid
            .thresholds()
            .iter()
            .map(|&tau| {
                let r = synthetic_true_risk(tau);
                ProfileEntry {
                    tau,
                    risk_hat: r,
                    var_hat: r * (1.0 - r),
                    n: 0,
                }
            })
            .collect(),
    });
    let specs = all_specs(&profile);
    let budget = RiskBudget::new(alpha, delta)?;
    let violations = (0..trials)
        .into_par_iter()
        .map(|t| {
            let mut rng = rng_for(seed, &[6, 0, t as u64]);
            let cal = synthetic_selection_data(&mut rng, n)?;
            specs
                .iter()
                .map(|s| {
                    let cert = sweep(s, &cal, &grid, budget)?;
                    Ok(cert.tau_star.is_some_and(|tau| synthetic_true_risk(tau) > alpha))
                })
                .collect::<Result<Vec<bool>>>()
        })
        .collect::<Result<Vec<_>>>()?;
    let se = freq_stderr(delta, trials);
    Ok(specs
        .iter()
        .enumerate()
        .map(|(i, s)| {
            let freq = violations.iter().filter(|v| v[i]).count() as f64 / trials as f64;
            Check {
                name: format!("selection guarantee {} n={n} alpha={alpha}", s.family()),
                observed: freq,
                bound: delta + 3.0 * se,
                stderr: se,
                trials,
                seed,
                passed: freq <= delta + 3.0 * se,
            }
        })
        .collect())
}

/// Runs every Monte Carlo property. `trials` drives the UCB coverage grid;
/// the other checks use `min(trials, nominal)` with nominal counts 2000
/// (martingale, conformal, selection) and 500 (paired betting comparisons).
pub fn run_validity_suite(trials: usize, seed: u64) -> Result<ValidityReport> {
    let small = trials.min(500);
    let mid = trials.min(2000);
    let mut checks = ucb_coverage_checks(trials, seed, 0.1, &[0.02, 0.05, 0.2], &[100, 549, 1000], 100)?;
    checks.extend(supermartingale_checks(mid, seed, 0.1, 200, 0.1)?);
    checks.extend(tib_checks(small, mid, seed)?);
    checks.extend(warm_start_checks(small, seed)?);
    checks.push(conformal_checks(mid, seed, 0.1, 100, 200)?);
    checks.extend(selection_guarantee_checks(mid, seed, 500, 0.1, 0.1)?);
    Ok(ValidityReport { trials, seed, checks })
}
