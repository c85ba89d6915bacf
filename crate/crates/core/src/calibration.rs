//! Expected Calibration Error with reliability bins, and temperature scaling.

use serde::{Deserialize, Serialize};

use crate::data::{Dataset, PredictionRecord};
use crate::{Error, Result};

pub const DEFAULT_BINS: usize = 15;
pub const DEFAULT_T_RANGE: (f64, f64) = (0.05, 50.0);
pub const DEFAULT_T_TOL: f64 = 1e-4;
const SCAN_POINTS: usize = 500;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ReliabilityBin {
    pub lo: f64,
    pub hi: f64,
    pub count: usize,
    /// Zero for empty bins.
    pub mean_confidence: f64,
    pub empirical_accuracy: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReliabilityReport {
    pub bins: Vec<ReliabilityBin>,
    pub ece: f64,
    pub num_bins: usize,
}

/// Bin of `conf` among `[j/B, (j+1)/B)`, with the last bin closed at 1.
fn bin_index(conf: f64, bins: usize) -> usize {
    let b = bins as f64;
    let mut j = ((conf * b).floor() as usize).min(bins - 1);
    // Undo rounding in conf * B so values on a boundary land in the higher bin.
    if j + 1 < bins && conf >= (j + 1) as f64 / b {
        j += 1;
    } else if j > 0 && conf < j as f64 / b {
        j -= 1;
    }
    j
}

pub fn ece(ds: &Dataset, num_bins: usize) -> Result<ReliabilityReport> {
    if num_bins == 0 {
        return Err(Error::param("num_bins", "must be positive"));
    }
    if ds.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let mut count = vec![0usize; num_bins];
    let mut conf_sum = vec![0.0; num_bins];
    let mut correct = vec![0usize; num_bins];
    for r in ds.records() {
        let j = bin_index(r.confidence, num_bins);
        count[j] += 1;
        conf_sum[j] += r.confidence;
        correct[j] += usize::from(r.is_correct());
    }
    let n = ds.len() as f64;
    let b = num_bins as f64;
    let mut ece = 0.0;
    let bins = (0..num_bins)
        .map(|j| {
            let (mean_confidence, empirical_accuracy) = if count[j] == 0 {
                (0.0, 0.0)
            } else {
                let c = count[j] as f64;
                (conf_sum[j] / c, correct[j] as f64 / c)
            };
            ece += count[j] as f64 / n * (mean_confidence - empirical_accuracy).abs();
            ReliabilityBin {
                lo: j as f64 / b,
                hi: (j + 1) as f64 / b,
                count: count[j],
                mean_confidence,
                empirical_accuracy,
            }
        })
        .collect();
    Ok(ReliabilityReport {
        bins,
        ece: ece.clamp(0.0, 1.0),
        num_bins,
    })
}

/// Numerically stable `softmax(z / t)`.
pub fn softmax(z: &[f64], t: f64) -> Vec<f64> {
    let max = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut out: Vec<f64> = z.iter().map(|v| ((v - max) / t).exp()).collect();
    let sum: f64 = out.iter().sum();
    out.iter_mut().for_each(|v| *v /= sum);
    out
}

fn logits(r: &PredictionRecord) -> Result<&[f64]> {
    r.logits.as_deref().ok_or_else(|| Error::MissingLogits { id: r.id.clone() })
}

/// Mean `-ln softmax(logits / t)[gold]`.
pub fn temperature_nll(ds: &Dataset, t: f64) -> Result<f64> {
    if ds.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let mut total = 0.0;
    for r in ds.records() {
        let z = logits(r)?;
        let max = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let lse = z.iter().map(|v| ((v - max) / t).exp()).sum::<f64>().ln();
        total += lse - (z[r.gold] - max) / t;
    }
    Ok(total / ds.len() as f64)
}

fn golden_section(f: &impl Fn(f64) -> f64, mut a: f64, mut b: f64, tol: f64) -> f64 {
    let inv_phi = (5f64.sqrt() - 1.0) / 2.0;
    let mut c = b - inv_phi * (b - a);
    let mut d = a + inv_phi * (b - a);
    let (mut fc, mut fd) = (f(c), f(d));
    while b - a >= tol {
        if fc <= fd {
            b = d;
            d = c;
            fd = fc;
            c = b - inv_phi * (b - a);
            fc = f(c);
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + inv_phi * (b - a);
            fd = f(d);
        }
    }
    0.5 * (a + b)
}

/// Temperature minimizing [`temperature_nll`] on `cal`, by golden-section
/// search over `t_range` down to an interval shorter than `tolerance`.
///
/// A 500-point scan of the range guards against non-unimodal objectives: if
/// the scan finds a lower NLL than the global search, the search is repeated
/// inside the scan cell around that point.
pub fn fit_temperature(cal: &Dataset, t_range: (f64, f64), tolerance: f64) -> Result<f64> {
    let (lo, hi) = t_range;
    if !(lo > 0.0 && lo < hi && hi.is_finite()) {
        return Err(Error::param("t_range", format!("({lo}, {hi}) must satisfy 0 < lo < hi")));
    }
    if !(tolerance > 0.0) {
        return Err(Error::param("tolerance", "must be positive"));
    }
    // Surface missing logits before searching.
    let base = temperature_nll(cal, 1.0)?;
    debug_assert!(base.is_finite());
    let nll = |t: f64| temperature_nll(cal, t).unwrap_or(f64::INFINITY);

    let global = golden_section(&nll, lo, hi, tolerance);
    let step = (hi - lo) / (SCAN_POINTS - 1) as f64;
    let (best_i, best_v) = (0..SCAN_POINTS)
        .map(|i| (i, nll(lo + step * i as f64)))
        .fold((0, f64::INFINITY), |acc, x| if x.1 < acc.1 { x } else { acc });
    if best_v < nll(global) {
        let a = lo + step * best_i.saturating_sub(1) as f64;
        let b = (lo + step * (best_i + 1) as f64).min(hi);
        let local = golden_section(&nll, a, b, tolerance);
        if nll(local) < nll(global) {
            return Ok(local);
        }
    }
    Ok(global)
}

/// Replaces probs with `softmax(logits / t)` and confidence with the new
/// maximum probability. Predicted labels are kept.
pub fn apply_temperature(ds: &Dataset, t: f64) -> Result<Dataset> {
    if !(t > 0.0 && t.is_finite()) {
        return Err(Error::param("t", format!("{t} must be positive")));
    }
    let records = ds
        .records()
        .iter()
        .map(|r| {
            let probs = softmax(logits(r)?, t);
            let confidence = probs.iter().copied().fold(0.0, f64::max);
            Ok(PredictionRecord {
                confidence,
                probs: Some(probs),
                ..r.clone()
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Dataset::new(records, ds.num_classes())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn conf_ds(spec: &[(f64, bool)]) -> Dataset {
        let recs = spec
            .iter()
            .enumerate()
            .map(|(i, &(c, ok))| PredictionRecord::new(i.to_string(), c, usize::from(!ok), 0))
            .collect();
        Dataset::new(recs, 2).unwrap()
    }

    fn logit_rec(id: usize, z: Vec<f64>, gold: usize) -> PredictionRecord {
        let p = softmax(&z, 1.0);
        let (pred, conf) = p
            .iter()
            .copied()
            .enumerate()
            .fold((0, f64::MIN), |a, (i, v)| if v > a.1 { (i, v) } else { a });
        let mut r = PredictionRecord::new(id.to_string(), conf, pred, gold);
        r.probs = Some(p);
        r.logits = Some(z);
        r
    }

    #[test]
    fn ece_examples() {
        let mut v = vec![(0.8, true); 8];
        v.extend([(0.8, false); 2]);
        assert!(ece(&conf_ds(&v), 15).unwrap().ece < 1e-12);

        let mut v = vec![(0.95, true); 6];
        v.extend([(0.95, false); 4]);
        assert!((ece(&conf_ds(&v), 15).unwrap().ece - 0.35).abs() < 1e-12);

        let v = vec![(0.5, false); 7];
        assert!((ece(&conf_ds(&v), 15).unwrap().ece - 0.5).abs() < 1e-12);
    }

    #[test]
    fn bins_partition_and_boundaries() {
        assert_eq!(bin_index(0.0, 15), 0);
        assert_eq!(bin_index(1.0, 15), 14);
        for j in 1..15 {
            assert_eq!(bin_index(j as f64 / 15.0, 15), j);
        }
        assert_eq!(bin_index(0.29, 100), 29);
        let v: Vec<_> = (0..=100).map(|i| (i as f64 / 100.0, i % 3 == 0)).collect();
        let rep = ece(&conf_ds(&v), 15).unwrap();
        assert_eq!(rep.bins.iter().map(|b| b.count).sum::<usize>(), 101);
        assert_eq!(rep.bins[0].lo, 0.0);
        assert_eq!(rep.bins[14].hi, 1.0);
    }

    #[test]
    fn symmetric_toy_fits_unit_temperature() {
        // Logits ±ln(4) give p = 0.8 on the predicted class; 80% correct.
        let z = 4f64.ln();
        let recs = (0..100)
            .map(|i| logit_rec(i, vec![z / 2.0, -z / 2.0], usize::from(i % 5 == 0)))
            .collect();
        let ds = Dataset::new(recs, 2).unwrap();
        let t = fit_temperature(&ds, DEFAULT_T_RANGE, DEFAULT_T_TOL).unwrap();
        assert!((t - 1.0).abs() < 1e-3, "{t}");
    }

    #[test]
    fn temperature_scales_with_logits() {
        let recs: Vec<_> = (0..60)
            .map(|i| {
                let a = (i % 7) as f64 * 0.4;
                logit_rec(i, vec![a, 0.3, -a / 2.0], if i % 4 == 0 { 1 } else { 0 })
            })
            .collect();
        let ds = Dataset::new(recs.clone(), 3).unwrap();
        let scaled: Vec<_> = recs
            .iter()
            .map(|r| logit_rec(0, r.logits.as_ref().unwrap().iter().map(|v| 3.0 * v).collect(), r.gold))
            .collect();
        let scaled = Dataset::new(scaled, 3).unwrap();
        let t1 = fit_temperature(&ds, DEFAULT_T_RANGE, 1e-6).unwrap();
        let t3 = fit_temperature(&scaled, DEFAULT_T_RANGE, 1e-6).unwrap();
        assert!((t3 / t1 - 3.0).abs() < 1e-3, "{t1} {t3}");
    }

    #[test]
    fn huge_temperature_is_uniform() {
        let ds = Dataset::new(vec![logit_rec(0, vec![2.0, 0.0, -1.0, 0.5], 2)], 4).unwrap();
        assert!((temperature_nll(&ds, 1e9).unwrap() - 4f64.ln()).abs() < 1e-8);
        let hot = apply_temperature(&ds, 1e9).unwrap();
        assert!((hot.records()[0].confidence - 0.25).abs() < 1e-8);
    }

    #[test]
    fn unit_temperature_is_identity() {
        let ds = Dataset::new(vec![logit_rec(0, vec![2.0, 0.0, -1.0], 0)], 3).unwrap();
        let same = apply_temperature(&ds, 1.0).unwrap();
        assert_eq!(same, ds);
    }

    #[test]
    fn missing_logits() {
        let ds = conf_ds(&[(0.7, true)]);
        assert!(matches!(fit_temperature(&ds, DEFAULT_T_RANGE, 1e-4), Err(Error::MissingLogits { .. })));
        assert!(matches!(apply_temperature(&ds, 2.0), Err(Error::MissingLogits { .. })));
    }

    proptest! {
        #[test]
        fn argmax_invariant(z in proptest::collection::vec(-20.0f64..20.0, 2..8), t in 0.05f64..50.0) {
            let r = logit_rec(0, z.clone(), 0);
            let c = z.len();
            let ds = Dataset::new(vec![r], c).unwrap();
            let out = apply_temperature(&ds, t).unwrap();
            let before = ds.records()[0].probs.as_ref().unwrap();
            let after = out.records()[0].probs.as_ref().unwrap();
            let arg = |p: &[f64]| p.iter().copied().enumerate().fold((0, f64::MIN), |a, (i, v)| if v > a.1 { (i, v) } else { a }).0;
            prop_assert_eq!(arg(before), arg(after));
            prop_assert_eq!(out.records()[0].predicted, ds.records()[0].predicted);
        }

        #[test]
        fn ece_in_unit_interval(v in proptest::collection::vec((0.0f64..=1.0, any::<bool>()), 1..200)) {
            let e = ece(&conf_ds(&v), 15).unwrap().ece;
            prop_assert!((0.0..=1.0).contains(&e));
        }
    }
}
