//! Acceptance criteria 1-10, one PASS/FAIL line each. Every criterion runs
//! even when an earlier one fails; the process exits nonzero if any failed.

use std::process::ExitCode;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use selcert::calibration::{ece, fit_temperature, softmax, temperature_nll, DEFAULT_T_RANGE, DEFAULT_T_TOL};
use selcert::concentration::hoeffding_correction;
use selcert::datagen::{generate, SyntheticSpec};
use selcert::selection::{sweep_ltt, sweep_union, ucb_at, BoundSpec};
use selcert::{stratified_split, Dataset, PredictionRecord, RiskBudget, ThresholdGrid};
use selcert_harness::config::MethodSpec;
use selcert_harness::experiments::{conformal_comparison_on, run_ablation_on, run_size_curve, ResultRow, SizeVariant};
use selcert_harness::validity::{
    conformal_checks, supermartingale_checks, tib_checks, ucb_coverage_checks, warm_start_checks, Check,
};

const SEED: u64 = 42;

type Outcome = Result<String, String>;
type Criterion = (&'static str, fn() -> Outcome);

fn ensure(ok: bool, detail: String) -> Outcome {
    if ok {
        Ok(detail)
    } else {
        Err(detail)
    }
}

/// Folds Monte Carlo checks into one outcome, naming every failed check.
fn checks_outcome(checks: &[Check]) -> Outcome {
    let failed: Vec<String> = checks.iter().filter(|c| !c.passed).map(Check::line).collect();
    let summary = format!("{} checks, {} failed", checks.len(), failed.len());
    if failed.is_empty() {
        Ok(summary)
    } else {
        Err(format!("{summary}\n    {}", failed.join("\n    ")))
    }
}

fn c1_corrections() -> Outcome {
    let union = hoeffding_correction(549, 100, 0.10).map_err(|e| e.to_string())?;
    let ltt = hoeffding_correction(549, 1, 0.10).map_err(|e| e.to_string())?;
    ensure(
        (union - 0.079).abs() <= 0.001 && (ltt - 0.046).abs() <= 0.001,
        format!("C(549, K=100) = {union:.5}, C(549, K=1) = {ltt:.5}"),
    )
}

fn c2_size_crossings() -> Outcome {
    let variants = [SizeVariant::LttHoeffding, SizeVariant::HoeffdingUnion { k: 100 }];
    let (_, crossings) = run_size_curve(&[0.10], &variants, (1, 2000), 0.10).map_err(|e| e.to_string())?;
    let (ltt, union) = (crossings[0].first_n, crossings[1].first_n);
    ensure(
        ltt == Some(116) && union == Some(346),
        format!("ltt_hoeffding first n = {ltt:?}, hoeffding_union(K=100) first n = {union:?}"),
    )
}

fn c3_ucb_coverage() -> Outcome {
    let checks = ucb_coverage_checks(5000, SEED, 0.10, &[0.02, 0.05, 0.20], &[100, 549, 1000], 100)
        .map_err(|e| e.to_string())?;
    checks_outcome(&checks)
}

fn c4_supermartingale() -> Outcome {
    let checks = supermartingale_checks(2000, SEED, 0.1, 200, 0.1).map_err(|e| e.to_string())?;
    checks_outcome(&checks)
}

fn c5_tib() -> Outcome {
    checks_outcome(&tib_checks(500, 2000, SEED).map_err(|e| e.to_string())?)
}

fn c6_warm_start() -> Outcome {
    checks_outcome(&warm_start_checks(500, SEED).map_err(|e| e.to_string())?)
}

fn hoeffding_ucb(cal: &Dataset, tau: f64, k: usize, delta: f64) -> f64 {
    let n = cal.len() as f64;
    let bad = cal
        .records()
        .iter()
        .filter(|r| r.confidence >= tau && r.predicted != r.gold)
        .count();
    bad as f64 / n + ((k as f64 / delta).ln() / (2.0 * n)).sqrt()
}

fn c7_sweep_oracle() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(SEED);
    let mut compared = 0;
    for case in 0..100 {
        let n = rng.random_range(5..=200);
        let err = rng.random_range(0.0..0.5);
        let monotone = case % 2 == 0;
        let recs = (0..n)
            .map(|i| {
                let conf = (rng.random::<f64>() * 100.0).round() / 100.0;
                let p_wrong = if monotone { err * (1.0 - conf) } else { err };
                let wrong = rng.random::<f64>() < p_wrong;
                PredictionRecord::new(i.to_string(), conf, usize::from(wrong), 0)
            })
            .collect();
        let cal = Dataset::new(recs, 2).unwrap();
        let k = rng.random_range(1..=30);
        let mut t: Vec<f64> = (0..k).map(|_| (rng.random::<f64>() * 1000.0).round() / 1000.0).collect();
        t.sort_by(f64::total_cmp);
        t.dedup();
        let grid = ThresholdGrid::new(t).unwrap();
        let alpha = [0.05, 0.1, 0.15, 0.2, 0.3][rng.random_range(0..5)];
        let delta = [0.05, 0.1, 0.2][rng.random_range(0..3)];
        let b = RiskBudget::new(alpha, delta).unwrap();
        let ts = grid.thresholds();

        // Union: smallest threshold passing at delta / K.
        let union_want = ts
            .iter()
            .copied()
            .filter(|&t| hoeffding_ucb(&cal, t, ts.len(), delta) <= alpha)
            .reduce(f64::min);
        let got = sweep_union(&BoundSpec::HoeffdingUnion, &cal, &grid, b).map_err(|e| e.to_string())?;
        if got.tau_star != union_want {
            return Err(format!("case {case}: union {:?} != oracle {union_want:?}", got.tau_star));
        }
        // LTT: start of the longest passing suffix at full delta.
        for spec in [BoundSpec::LttHoeffding, BoundSpec::LttBernstein, BoundSpec::CpLtt] {
            let pass: Vec<bool> = ts
                .iter()
                .map(|&t| ucb_at(&spec, &cal, t, b, 1).unwrap() <= alpha)
                .collect();
            let want = (0..ts.len()).find(|&i| pass[i..].iter().all(|&p| p)).map(|i| ts[i]);
            let got = sweep_ltt(&spec, &cal, &grid, b).map_err(|e| e.to_string())?;
            if got.tau_star != want {
                return Err(format!("case {case}: {} {:?} != oracle {want:?}", spec.label(), got.tau_star));
            }
            compared += 1;
        }
        compared += 1;
    }
    Ok(format!("{compared} sweeps equal the brute-force oracle on 100 datasets"))
}

fn find<'a>(rows: &'a [ResultRow], prefix: &str, alpha: f64, delta: f64) -> &'a ResultRow {
    rows.iter()
        .find(|r| r.method.starts_with(prefix) && r.alpha == alpha && r.delta == delta)
        .expect("cell present")
}

fn c8_presets() -> Outcome {
    let mut notes = Vec::new();
    let mut failures = Vec::new();
    for (spec, lo, hi) in [
        (SyntheticSpec::clinc_like(SEED), 0.90, 0.96),
        (SyntheticSpec::banking77_like(SEED), 0.76, 0.84),
    ] {
        let ds = generate(&spec).map_err(|e| e.to_string())?;
        let (cal, test) = stratified_split(&ds, 0.5, SEED).map_err(|e| e.to_string())?;
        let alphas = [0.01, 0.02, 0.05, 0.10, 0.15, 0.20];
        let deltas = [0.05, 0.10, 0.20];
        let rows = run_ablation_on(&cal, &test, &ThresholdGrid::default(), &MethodSpec::defaults(), &alphas, &deltas, None)
            .map_err(|e| e.to_string())?;
        let name = format!("{}-class", spec.num_classes);
        let cov = find(&rows, "ltt_hoeffding", 0.10, 0.10).test_coverage;
        notes.push(format!("{name} ltt_hoeffding@0.10 = {cov:?}"));
        if !cov.is_some_and(|c| (lo..=hi).contains(&c)) {
            failures.push(format!("{name}: coverage {cov:?} outside [{lo}, {hi}]"));
        }
        for &a in &alphas {
            for &d in &deltas {
                for (ltt, union) in [("ltt_hoeffding", "hoeffding_union"), ("ltt_bernstein", "bernstein_union")] {
                    let (l, u) = (find(&rows, ltt, a, d), find(&rows, union, a, d));
                    if let Some(uc) = u.test_coverage {
                        if !l.test_coverage.is_some_and(|lc| lc >= uc) {
                            failures.push(format!("{name} ({a}, {d}): {ltt} {:?} < {union} {uc}", l.test_coverage));
                        }
                    }
                }
                let (dro, h) = (find(&rows, "dro_union", a, d), find(&rows, "hoeffding_union", a, d));
                if let Some(dc) = dro.test_coverage {
                    if !h.test_coverage.is_some_and(|hc| dc <= hc) {
                        failures.push(format!("{name} ({a}, {d}): dro {dc} > hoeffding {:?}", h.test_coverage));
                    }
                }
            }
        }
    }
    if failures.is_empty() {
        Ok(notes.join("; "))
    } else {
        Err(failures.join("; "))
    }
}

fn c9_conformal() -> Outcome {
    let mc = conformal_checks(2000, SEED, 0.10, 100, 200).map_err(|e| e.to_string())?;
    let ds = generate(&SyntheticSpec::nyaya_like(SEED)).map_err(|e| e.to_string())?;
    let (cal, test) = stratified_split(&ds, 0.5, SEED).map_err(|e| e.to_string())?;
    let alphas = [0.20, 0.15, 0.10, 0.05, 0.02, 0.01];
    let rows = conformal_comparison_on(&cal, &test, &ThresholdGrid::default(), &alphas, &[0.10])
        .map_err(|e| e.to_string())?;
    let sizes: Vec<f64> = rows.iter().map(|r| r.avg_set_size).collect();
    let monotone = sizes.windows(2).all(|w| w[0] <= w[1]);
    let small = &rows[rows.len() - 1];
    let contrast = small.sel_tau.is_none() && small.conf_coverage >= 1.0 - small.alpha;
    ensure(
        mc.passed && monotone && contrast,
        format!(
            "{}; set sizes by decreasing alpha {sizes:.3?}; alpha=0.01: selective {:?}, conformal coverage {:.3}",
            mc.line(),
            small.sel_tau,
            small.conf_coverage
        ),
    )
}

fn c10_calibration() -> Outcome {
    let recs: Vec<PredictionRecord> = (0..10)
        .map(|i| PredictionRecord::new(i.to_string(), 0.95, 0, usize::from(i >= 6)))
        .collect();
    let hand = Dataset::new(recs, 2).unwrap();
    let e = ece(&hand, 15).map_err(|e| e.to_string())?.ece;
    if (e - 0.35).abs() > 1e-12 {
        return Err(format!("hand ECE {e}"));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(SEED);
    for pair in 0..1000 {
        let c = rng.random_range(2..=20);
        let z: Vec<f64> = (0..c).map(|_| rng.random_range(-10.0..10.0)).collect();
        let t = rng.random_range(0.05..50.0);
        let argmax = |v: &[f64]| v.iter().enumerate().max_by(|a, b| a.1.total_cmp(b.1)).map(|x| x.0);
        if argmax(&z) != argmax(&softmax(&z, t)) {
            return Err(format!("pair {pair}: argmax changed at T = {t}"));
        }
    }

    let ds = generate(&SyntheticSpec::massive_like(SEED)).map_err(|e| e.to_string())?;
    let (cal, _) = stratified_split(&ds, 0.5, SEED).map_err(|e| e.to_string())?;
    let t_fit = fit_temperature(&cal, DEFAULT_T_RANGE, DEFAULT_T_TOL).map_err(|e| e.to_string())?;
    let (lo, hi) = DEFAULT_T_RANGE;
    let step = (hi / lo).ln() / 499.0;
    let (t_grid, nll_grid) = (0..500)
        .map(|i| {
            let t = lo * (step * i as f64).exp();
            (t, temperature_nll(&cal, t).unwrap())
        })
        .min_by(|a, b| a.1.total_cmp(&b.1))
        .unwrap();
    let nll_fit = temperature_nll(&cal, t_fit).map_err(|e| e.to_string())?;
    ensure(
        (t_fit.ln() - t_grid.ln()).abs() <= step && nll_fit <= nll_grid + 1e-9,
        format!(
            "ECE 0.35; argmax kept over 1000 pairs; T fit {t_fit:.4} vs grid {t_grid:.4}, NLL {nll_fit:.6} <= {nll_grid:.6}"
        ),
    )
}

fn main() -> ExitCode {
    let criteria: [Criterion; 10] = [
        ("1 analytic corrections", c1_corrections),
        ("2 size-curve crossings", c2_size_crossings),
        ("3 ucb coverage", c3_ucb_coverage),
        ("4 supermartingale and ville", c4_supermartingale),
        ("5 tib dominance and degradation", c5_tib),
        ("6 warm-start ordering", c6_warm_start),
        ("7 sweep oracle", c7_sweep_oracle),
        ("8 preset patterns", c8_presets),
        ("9 conformal baseline", c9_conformal),
        ("10 calibration", c10_calibration),
    ];
    let mut failed = 0;
    for (name, run) in criteria {
        let start = Instant::now();
        let outcome = run();
        let secs = start.elapsed().as_secs_f64();
        let (tag, detail) = match &outcome {
            Ok(d) => ("PASS", d),
            Err(d) => ("FAIL", d),
        };
        println!("{tag} criterion {name} [{secs:.1}s]: {detail}");
        failed += usize::from(outcome.is_err());
    }
    println!("acceptance: {} passed, {failed} failed", 10 - failed);
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
