use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use selcert::selection::{sweep_ltt, sweep_union, ucb_at, BoundSpec};
use selcert::{Dataset, PredictionRecord, RiskBudget, ThresholdGrid};

fn random_dataset(rng: &mut ChaCha8Rng, monotone: bool) -> Dataset {
    let n = rng.random_range(5..=200);
    let err = rng.random_range(0.0..0.5);
    let recs = (0..n)
        .map(|i| {
            let conf: f64 = (rng.random::<f64>() * 100.0).round() / 100.0;
            let p_wrong = if monotone { err * (1.0 - conf) } else { err };
            let wrong = rng.random::<f64>() < p_wrong;
            PredictionRecord::new(i.to_string(), conf, usize::from(wrong), 0)
        })
        .collect();
    Dataset::new(recs, 2).unwrap()
}

fn random_grid(rng: &mut ChaCha8Rng) -> ThresholdGrid {
    let k = rng.random_range(1..=30);
    let mut t: Vec<f64> = (0..k).map(|_| (rng.random::<f64>() * 1000.0).round() / 1000.0).collect();
    t.sort_by(f64::total_cmp);
    t.dedup();
    ThresholdGrid::new(t).unwrap()
}

fn hoeffding_ucb(cal: &Dataset, tau: f64, k: usize, delta: f64) -> f64 {
    let n = cal.len();
    let bad = cal
        .records()
        .iter()
        .filter(|r| r.confidence >= tau && r.predicted != r.gold)
        .count();
    bad as f64 / n as f64 + ((k as f64 / delta).ln() / (2.0 * n as f64)).sqrt()
}

/// Smallest grid threshold passing at delta / K, by exhaustive evaluation.
fn union_oracle(ucb: impl Fn(f64) -> f64, grid: &ThresholdGrid, alpha: f64) -> Option<f64> {
    grid.thresholds().iter().copied().filter(|&t| ucb(t) <= alpha).reduce(f64::min)
}

/// Longest passing suffix of the grid, each test at the full delta.
fn ltt_oracle(ucb: impl Fn(f64) -> f64, grid: &ThresholdGrid, alpha: f64) -> Option<f64> {
    let passes: Vec<bool> = grid.thresholds().iter().map(|&t| ucb(t) <= alpha).collect();
    let mut best = None;
    for i in (0..passes.len()).rev() {
        if passes[i..].iter().all(|&p| p) {
            best = Some(grid.thresholds()[i]);
        }
    }
    best
}

fn budgets(rng: &mut ChaCha8Rng) -> RiskBudget {
    let alpha = [0.05, 0.1, 0.15, 0.2, 0.3][rng.random_range(0..5)];
    let delta = [0.05, 0.1, 0.2][rng.random_range(0..3)];
    RiskBudget::new(alpha, delta).unwrap()
}

#[test]
fn union_sweep_matches_brute_force() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    for _ in 0..100 {
        let cal = random_dataset(&mut rng, false);
        let grid = random_grid(&mut rng);
        let b = budgets(&mut rng);
        let got = sweep_union(&BoundSpec::HoeffdingUnion, &cal, &grid, b).unwrap();
        let want = union_oracle(|t| hoeffding_ucb(&cal, t, grid.len(), b.delta), &grid, b.alpha);
        assert_eq!(got.tau_star, want);
        assert_eq!(got.feasible, want.is_some());

        let dro = BoundSpec::DroUnion { epsilon: 0.01 };
        let got = sweep_union(&dro, &cal, &grid, b).unwrap();
        let want = union_oracle(|t| ucb_at(&dro, &cal, t, b, grid.len()).unwrap(), &grid, b.alpha);
        assert_eq!(got.tau_star, want);
    }
}

#[test]
fn ltt_sweep_matches_brute_force() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for i in 0..100 {
        let cal = random_dataset(&mut rng, i % 2 == 0);
        let grid = random_grid(&mut rng);
        let b = budgets(&mut rng);
        let got = sweep_ltt(&BoundSpec::LttHoeffding, &cal, &grid, b).unwrap();
        let want = ltt_oracle(|t| hoeffding_ucb(&cal, t, 1, b.delta), &grid, b.alpha);
        assert_eq!(got.tau_star, want);

        for spec in [BoundSpec::CpLtt, BoundSpec::LttBernstein] {
            let got = sweep_ltt(&spec, &cal, &grid, b).unwrap();
            let want = ltt_oracle(|t| ucb_at(&spec, &cal, t, b, 1).unwrap(), &grid, b.alpha);
            assert_eq!(got.tau_star, want, "{}", spec.label());
        }
    }
}

#[test]
fn monotone_risk_ltt_equals_passing_prefix_minimum() {
    let mut rng = ChaCha8Rng::seed_from_u64(13);
    for _ in 0..100 {
        let cal = random_dataset(&mut rng, true);
        let grid = random_grid(&mut rng);
        let b = budgets(&mut rng);
        let ucb = |t| hoeffding_ucb(&cal, t, 1, b.delta);
        // Empirical risk is non-increasing in tau, so the passing set is a suffix.
        let got = sweep_ltt(&BoundSpec::LttHoeffding, &cal, &grid, b).unwrap();
        assert_eq!(got.tau_star, union_oracle(ucb, &grid, b.alpha));
    }
}
