//! Ablation grid, progressive trust, size curves, the conformal comparison and
//! per-intent reports.

use std::path::Path;
use std::sync::Arc;

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use selcert::concentration::{bernstein_correction_raw, hoeffding_correction};
use selcert::conformal::{conformal_evaluate, conformal_fit};
use selcert::selection::{evaluate, per_intent_sweep, sweep, BoundSpec, Certificate};
use selcert::{Dataset, RiskBudget, RiskProfile, ThresholdGrid};

use crate::config::{ExperimentConfig, MethodSpec};
use crate::seeds::derive_seed;
use crate::{HarnessError, Result};

/// Rendered in place of values that do not exist for infeasible cells.
pub const INFEASIBLE: &str = "---";

/// One (method, alpha, delta) cell.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResultRow {
    pub method: String,
    pub alpha: f64,
    pub delta: f64,
    pub tau_star: Option<f64>,
    /// Calibration risk and correction at `tau_star`, or at the threshold
    /// with the smallest UCB when infeasible.
    pub cal_risk: Option<f64>,
    pub correction: Option<f64>,
    pub cal_coverage: Option<f64>,
    pub test_coverage: Option<f64>,
    pub test_risk: Option<f64>,
    pub violated: bool,
    pub error: Option<String>,
}

impl ResultRow {
    fn from_certificate(method: String, cert: &Certificate, test: &Dataset) -> Result<Self> {
        let ev = evaluate(cert, test)?;
        let feasible = cert.feasible;
        Ok(ResultRow {
            method,
            alpha: cert.alpha,
            delta: cert.delta,
            tau_star: cert.tau_star,
            cal_risk: Some(cert.cal_risk_at_tau),
            correction: Some(cert.correction_at_tau),
            cal_coverage: feasible.then_some(cert.cal_coverage_at_tau),
            test_coverage: feasible.then_some(ev.test_coverage),
            test_risk: feasible.then_some(ev.test_risk),
            violated: ev.violated,
            error: None,
        })
    }

    fn failed(method: String, alpha: f64, delta: f64, err: String) -> Self {
        ResultRow {
            method,
            alpha,
            delta,
            tau_star: None,
            cal_risk: None,
            correction: None,
            cal_coverage: None,
            test_coverage: None,
            test_risk: None,
            violated: false,
            error: Some(err),
        }
    }

    pub fn feasible(&self) -> bool {
        self.tau_star.is_some()
    }
}

fn resolve_all(methods: &[MethodSpec], source: Option<&Arc<RiskProfile>>) -> Vec<(String, Result<BoundSpec>)> {
    methods
        .iter()
        .map(|m| match m.resolve(source) {
            Ok(spec) => (spec.label(), Ok(spec)),
            Err(e) => (m.to_string(), Err(e)),
        })
        .collect()
}

/// Every (method, alpha, delta) cell on one calibration/test split, in
/// method, alpha, delta order.
pub fn run_ablation_on(
    cal: &Dataset,
    test: &Dataset,
    grid: &ThresholdGrid,
    methods: &[MethodSpec],
    alphas: &[f64],
    deltas: &[f64],
    source: Option<&Arc<RiskProfile>>,
) -> Result<Vec<ResultRow>> {
    let specs = resolve_all(methods, source);
    let mut cells = Vec::new();
    for (mi, _) in specs.iter().enumerate() {
        for &a in alphas {
            for &d in deltas {
                cells.push((mi, a, d));
            }
        }
    }
    cells
        .into_par_iter()
        .map(|(mi, alpha, delta)| {
            let (label, spec) = &specs[mi];
            let spec = match spec {
                Ok(s) => s,
                Err(e) => return Ok(ResultRow::failed(label.clone(), alpha, delta, e.to_string())),
            };
            let budget = RiskBudget::new(alpha, delta)?;
            match sweep(spec, cal, grid, budget) {
                Ok(cert) => ResultRow::from_certificate(label.clone(), &cert, test),
                Err(e) => Ok(ResultRow::failed(label.clone(), alpha, delta, e.to_string())),
            }
        })
        .collect()
}

pub fn run_ablation(cfg: &ExperimentConfig) -> Result<Vec<ResultRow>> {
    cfg.validate()?;
    let (cal, test) = cfg.split()?;
    let source = cfg.source()?;
    run_ablation_on(&cal, &test, &cfg.grid, &cfg.methods, &cfg.alphas, &cfg.deltas, source.as_ref())
}

fn opt(v: Option<f64>) -> String {
    v.map_or_else(|| INFEASIBLE.to_string(), |x| format!("{x:.6}"))
}

pub fn write_results_csv(rows: &[ResultRow], path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record([
        "method",
        "alpha",
        "delta",
        "tau_star",
        "cal_risk",
        "correction",
        "cal_coverage",
        "test_coverage",
        "test_risk",
        "violated",
        "error",
    ])?;
    for r in rows {
        w.write_record([
            r.method.clone(),
            r.alpha.to_string(),
            r.delta.to_string(),
            opt(r.tau_star),
            opt(r.cal_risk),
            opt(r.correction),
            opt(r.cal_coverage),
            opt(r.test_coverage),
            opt(r.test_risk),
            r.violated.to_string(),
            r.error.clone().unwrap_or_default(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProgressiveRow {
    pub size: usize,
    pub method: String,
    pub alpha: f64,
    pub delta: f64,
    pub mean_coverage: f64,
    pub std_coverage: f64,
    pub feasible_trials: usize,
    pub violation_count: usize,
    pub trials: usize,
}

/// Sample standard deviation (zero for fewer than two values).
fn mean_std(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    if xs.len() < 2 {
        return (mean, 0.0);
    }
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

/// For each size, `cfg.trials` calibration subsets drawn without replacement
/// (trial seeds derived from `(seed, size, trial)`), each swept and evaluated
/// on the full test half. Infeasible trials count as zero coverage.
pub fn run_progressive_trust(cfg: &ExperimentConfig, sizes: &[usize]) -> Result<Vec<ProgressiveRow>> {
    cfg.validate()?;
    let (cal, test) = cfg.split()?;
    let source = cfg.source()?;
    run_progressive_on(&cal, &test, cfg, sizes, source.as_ref())
}

pub fn run_progressive_on(
    cal: &Dataset,
    test: &Dataset,
    cfg: &ExperimentConfig,
    sizes: &[usize],
    source: Option<&Arc<RiskProfile>>,
) -> Result<Vec<ProgressiveRow>> {
    if let Some(&s) = sizes.iter().find(|&&s| s == 0 || s > cal.len()) {
        return Err(HarnessError::Config(format!(
            "subsample size {s} not in [1, {}] (calibration size)",
            cal.len()
        )));
    }
    let specs = resolve_all(&cfg.methods, source);
    let mut rows = Vec::new();
    for &size in sizes {
        let subsets: Vec<Dataset> = (0..cfg.trials)
            .map(|t| {
                let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, &[size as u64, t as u64]));
                let mut idx = sample(&mut rng, cal.len(), size).into_vec();
                idx.sort_unstable();
                Ok(cal.subset(&idx)?)
            })
            .collect::<Result<_>>()?;
        for (label, spec) in &specs {
            let spec = spec.as_ref().map_err(|e| HarnessError::Config(format!("{label}: {e}")))?;
            for &alpha in &cfg.alphas {
                for &delta in &cfg.deltas {
                    let budget = RiskBudget::new(alpha, delta)?;
                    let evals = subsets
                        .par_iter()
                        .map(|sub| {
                            let cert = sweep(spec, sub, &cfg.grid, budget)?;
                            Ok((cert.feasible, evaluate(&cert, test)?))
                        })
                        .collect::<Result<Vec<_>>>()?;
                    let cov: Vec<f64> = evals.iter().map(|(_, e)| e.test_coverage).collect();
                    let (mean, std) = mean_std(&cov);
                    rows.push(ProgressiveRow {
                        size,
                        method: label.clone(),
                        alpha,
                        delta,
                        mean_coverage: mean,
                        std_coverage: std,
                        feasible_trials: evals.iter().filter(|(f, _)| *f).count(),
                        violation_count: evals.iter().filter(|(_, e)| e.violated).count(),
                        trials: cfg.trials,
                    });
                }
            }
        }
    }
    Ok(rows)
}

/// Correction curves as a function of calibration size alone.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum SizeVariant {
    HoeffdingUnion { k: usize },
    LttHoeffding,
    /// Empirical Bernstein at a fixed variance, evaluated without the
    /// binary-variance range check so figure values like 0.44 can be drawn.
    LttBernstein { var_hat: f64 },
}

impl SizeVariant {
    pub fn defaults() -> Vec<SizeVariant> {
        vec![
            SizeVariant::HoeffdingUnion { k: 100 },
            SizeVariant::LttHoeffding,
            SizeVariant::LttBernstein { var_hat: 0.03 },
            SizeVariant::LttBernstein { var_hat: 0.44 },
        ]
    }

    pub fn label(&self) -> String {
        match self {
            SizeVariant::HoeffdingUnion { k } => format!("hoeffding_union(K={k})"),
            SizeVariant::LttHoeffding => "ltt_hoeffding".into(),
            SizeVariant::LttBernstein { var_hat } => format!("ltt_bernstein(V={var_hat})"),
        }
    }

    pub fn correction(&self, n: usize, delta: f64) -> Result<f64> {
        Ok(match *self {
            SizeVariant::HoeffdingUnion { k } => hoeffding_correction(n, k, delta)?,
            SizeVariant::LttHoeffding => hoeffding_correction(n, 1, delta)?,
            SizeVariant::LttBernstein { var_hat } => bernstein_correction_raw(n, 1, delta, var_hat)?,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SizeCurvePoint {
    pub n: usize,
    pub variant: String,
    pub delta: f64,
    pub correction: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Crossing {
    pub variant: String,
    pub delta: f64,
    pub alpha: f64,
    /// First n in range whose correction is at most `alpha`.
    pub first_n: Option<usize>,
}

pub fn run_size_curve(
    deltas: &[f64],
    variants: &[SizeVariant],
    n_range: (usize, usize),
    alpha: f64,
) -> Result<(Vec<SizeCurvePoint>, Vec<Crossing>)> {
    let (lo, hi) = n_range;
    if lo == 0 || lo > hi {
        return Err(HarnessError::Config(format!("bad n range ({lo}, {hi})")));
    }
    let mut points = Vec::new();
    let mut crossings = Vec::new();
    for v in variants {
        for &delta in deltas {
            let mut first_n = None;
            for n in lo..=hi {
                let c = v.correction(n, delta)?;
                if first_n.is_none() && c <= alpha {
                    first_n = Some(n);
                }
                points.push(SizeCurvePoint {
                    n,
                    variant: v.label(),
                    delta,
                    correction: c,
                });
            }
            crossings.push(Crossing {
                variant: v.label(),
                delta,
                alpha,
                first_n,
            });
        }
    }
    Ok((points, crossings))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConformalRow {
    pub alpha: f64,
    pub delta: f64,
    pub conf_coverage: f64,
    pub avg_set_size: f64,
    pub empty_fraction: f64,
    /// Selective columns are `None` where LTT+Hoeffding is infeasible.
    pub sel_tau: Option<f64>,
    pub sel_coverage: Option<f64>,
    pub sel_risk: Option<f64>,
}

/// Split conformal against the LTT+Hoeffding selective sweep at each
/// (alpha, delta).
pub fn run_conformal_comparison(cfg: &ExperimentConfig) -> Result<Vec<ConformalRow>> {
    cfg.validate()?;
    let (cal, test) = cfg.split()?;
    conformal_comparison_on(&cal, &test, &cfg.grid, &cfg.alphas, &cfg.deltas)
}

pub fn conformal_comparison_on(
    cal: &Dataset,
    test: &Dataset,
    grid: &ThresholdGrid,
    alphas: &[f64],
    deltas: &[f64],
) -> Result<Vec<ConformalRow>> {
    let mut rows = Vec::new();
    for &alpha in alphas {
        let model = conformal_fit(cal, alpha)?;
        let ce = conformal_evaluate(&model, test)?;
        for &delta in deltas {
            let cert = sweep(&BoundSpec::LttHoeffding, cal, grid, RiskBudget::new(alpha, delta)?)?;
            let ev = evaluate(&cert, test)?;
            rows.push(ConformalRow {
                alpha,
                delta,
                conf_coverage: ce.coverage,
                avg_set_size: ce.avg_set_size,
                empty_fraction: ce.empty_fraction,
                sel_tau: cert.tau_star,
                sel_coverage: cert.feasible.then_some(ev.test_coverage),
                sel_risk: cert.feasible.then_some(ev.test_risk),
            });
        }
    }
    Ok(rows)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IntentRow {
    pub method: String,
    pub alpha: f64,
    pub delta: f64,
    pub label: usize,
    pub label_name: String,
    pub n_cal: usize,
    pub n_test: usize,
    pub below_min_size: bool,
    pub tau_star: Option<f64>,
    pub ucb: f64,
    pub test_coverage: Option<f64>,
    pub test_risk: Option<f64>,
}

pub fn run_per_intent(cfg: &ExperimentConfig) -> Result<Vec<IntentRow>> {
    cfg.validate()?;
    let (cal, test) = cfg.split()?;
    let source = cfg.source()?;
    let mut rows = Vec::new();
    for (label, spec) in resolve_all(&cfg.methods, source.as_ref()) {
        let spec = spec.map_err(|e| HarnessError::Config(format!("{label}: {e}")))?;
        for &alpha in &cfg.alphas {
            for &delta in &cfg.deltas {
                let res = per_intent_sweep(&spec, &cal, &test, &cfg.grid, RiskBudget::new(alpha, delta)?, cfg.min_class_size)?;
                for (id, r) in res {
                    let feasible = r.certificate.feasible;
                    rows.push(IntentRow {
                        method: label.clone(),
                        alpha,
                        delta,
                        label: id,
                        label_name: cal.label_name(id),
                        n_cal: r.n_cal,
                        n_test: r.n_test,
                        below_min_size: r.below_min_size,
                        tau_star: r.certificate.tau_star,
                        ucb: r.certificate.ucb_at_tau,
                        test_coverage: r.evaluation.filter(|_| feasible).map(|e| e.test_coverage),
                        test_risk: r.evaluation.filter(|_| feasible).map(|e| e.test_risk),
                    });
                }
            }
        }
    }
    Ok(rows)
}

/// Writes any serializable rows as CSV, rendering `None` as the infeasible
/// marker.
pub fn write_table<T: Serialize>(rows: &[T], path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    let mut header_done = false;
    for row in rows {
        let value = serde_json::to_value(row)?;
        let obj = value
            .as_object()
            .ok_or_else(|| HarnessError::Config("table rows must be structs".into()))?;
        if !header_done {
            w.write_record(obj.keys())?;
            header_done = true;
        }
        w.write_record(obj.values().map(|v| match v {
            serde_json::Value::Null => INFEASIBLE.to_string(),
            serde_json::Value::String(s) => s.clone(),
            other => other.to_string(),
        }))?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::DataSource;
    use selcert::datagen::SyntheticSpec;
    use selcert::selection::{ucb_at, Family};

    fn small_cfg() -> ExperimentConfig {
        ExperimentConfig {
            data: DataSource::synthetic(SyntheticSpec {
                n: 600,
                ..SyntheticSpec::massive_like(1)
            }),
            ..Default::default()
        }
    }

    #[test]
    fn ablation_has_one_row_per_cell_and_consistent_corrections() {
        let cfg = small_cfg();
        let rows = run_ablation(&cfg).unwrap();
        assert_eq!(rows.len(), 9 * 18);
        let (cal, _) = cfg.split().unwrap();
        for (r, m) in rows.iter().zip(cfg.methods.iter().flat_map(|m| std::iter::repeat_n(m, 18))) {
            assert!(r.error.is_none());
            if let Some(t) = r.tau_star {
                let spec = m.resolve(None).unwrap();
                let k = if spec.family().is_union() { cfg.grid.len() } else { 1 };
                let b = RiskBudget::new(r.alpha, r.delta).unwrap();
                assert!(ucb_at(&spec, &cal, t, b, k).unwrap() <= r.alpha);
            }
        }
        // CVaR at beta = 0.2 never fits any alpha at this size.
        assert!(rows.iter().filter(|r| r.method.starts_with("cvar")).all(|r| !r.feasible()));
    }

    #[test]
    fn transfer_without_profile_is_a_row_error() {
        let cfg = ExperimentConfig {
            methods: vec![MethodSpec::new(Family::TransferBetting), MethodSpec::new(Family::LttHoeffding)],
            alphas: vec![0.1],
            deltas: vec![0.1],
            ..small_cfg()
        };
        let rows = run_ablation(&cfg).unwrap();
        assert!(rows[0].error.as_deref().unwrap().contains("source risk profile"));
        assert!(rows[1].error.is_none());
    }

    #[test]
    fn full_size_subsets_have_zero_spread() {
        let cfg = ExperimentConfig {
            methods: vec![MethodSpec::new(Family::LttHoeffding)],
            alphas: vec![0.1],
            deltas: vec![0.1],
            trials: 4,
            ..small_cfg()
        };
        let (cal, _) = cfg.split().unwrap();
        let rows = run_progressive_trust(&cfg, &[cal.len()]).unwrap();
        assert_eq!(rows[0].std_coverage, 0.0);
        assert!(run_progressive_trust(&cfg, &[cal.len() + 1]).is_err());
    }

    #[test]
    fn size_curve_crossings() {
        let (points, crossings) = run_size_curve(&[0.1], &SizeVariant::defaults(), (1, 2000), 0.1).unwrap();
        let first = |label: &str| crossings.iter().find(|c| c.variant == label).unwrap().first_n;
        assert_eq!(first("ltt_hoeffding"), Some(116));
        assert_eq!(first("hoeffding_union(K=100)"), Some(346));
        for v in SizeVariant::defaults() {
            let c: Vec<f64> = points.iter().filter(|p| p.variant == v.label()).map(|p| p.correction).collect();
            assert!(c.windows(2).all(|w| w[1] < w[0]));
        }
    }

    #[test]
    fn conformal_sets_grow_as_alpha_shrinks() {
        let cfg = small_cfg();
        let (cal, test) = cfg.split().unwrap();
        let rows = conformal_comparison_on(&cal, &test, &cfg.grid, &cfg.alphas, &[0.1]).unwrap();
        assert!(rows.windows(2).all(|w| w[0].avg_set_size >= w[1].avg_set_size));
    }

    #[test]
    fn csv_output_is_deterministic() {
        let cfg = ExperimentConfig {
            alphas: vec![0.05, 0.1],
            ..small_cfg()
        };
        let dir = tempfile::tempdir().unwrap();
        let (a, b) = (dir.path().join("a.csv"), dir.path().join("b.csv"));
        write_results_csv(&run_ablation(&cfg).unwrap(), &a).unwrap();
        write_results_csv(&run_ablation(&cfg).unwrap(), &b).unwrap();
        let text = std::fs::read_to_string(&a).unwrap();
        assert_eq!(text, std::fs::read_to_string(&b).unwrap());
        assert!(text.contains(INFEASIBLE));
    }
}
