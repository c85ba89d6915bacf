//! Domain types, the threshold grid, empirical risk and coverage, and the
//! stratified calibration/test split.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::{Error, Result};

const PROB_TOL: f64 = 1e-6;

/// One classifier output: confidence, predicted and gold label, and
/// optionally the full probability and logit vectors.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictionRecord {
    pub id: String,
    pub confidence: f64,
    pub predicted: usize,
    pub gold: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub probs: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub logits: Option<Vec<f64>>,
}

impl PredictionRecord {
    pub fn new(id: impl Into<String>, confidence: f64, predicted: usize, gold: usize) -> Self {
        PredictionRecord {
            id: id.into(),
            confidence,
            predicted,
            gold,
            probs: None,
            logits: None,
        }
    }

    pub fn is_correct(&self) -> bool {
        self.predicted == self.gold
    }

    /// The selection rule is closed: a record is served when `confidence >= tau`.
    pub fn is_selected(&self, tau: f64) -> bool {
        self.confidence >= tau
    }

    fn is_unsafe(&self, tau: f64) -> bool {
        !self.is_correct() && self.is_selected(tau)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |reason: String| Error::InvalidRecord {
            id: self.id.clone(),
            reason,
        };
        if !(0.0..=1.0).contains(&self.confidence) {
            return Err(bad(format!("confidence {} outside [0, 1]", self.confidence)));
        }
        if let Some(probs) = &self.probs {
            if let Some(p) = probs.iter().find(|p| !(0.0..=1.0).contains(*p)) {
                return Err(bad(format!("probability {p} outside [0, 1]")));
            }
            let sum: f64 = probs.iter().sum();
            if (sum - 1.0).abs() > PROB_TOL {
                return Err(bad(format!("probabilities sum to {sum}, expected 1")));
            }
            let max = probs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            if (max - self.confidence).abs() > PROB_TOL {
                return Err(bad(format!(
                    "confidence {} differs from max probability {max}",
                    self.confidence
                )));
            }
        }
        if let (Some(p), Some(l)) = (&self.probs, &self.logits) {
            if p.len() != l.len() {
                return Err(bad(format!(
                    "probs has {} entries but logits has {}",
                    p.len(),
                    l.len()
                )));
            }
        }
        Ok(())
    }
}

/// A non-empty, validated collection of prediction records.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    records: Vec<PredictionRecord>,
    num_classes: usize,
    labels: Option<Vec<String>>,
}

impl Dataset {
    pub fn new(records: Vec<PredictionRecord>, num_classes: usize) -> Result<Self> {
        if records.is_empty() {
            return Err(Error::EmptyDataset);
        }
        if num_classes == 0 {
            return Err(Error::param("num_classes", "must be positive"));
        }
        for r in &records {
            r.validate()?;
            if r.predicted >= num_classes || r.gold >= num_classes {
                return Err(Error::InvalidRecord {
                    id: r.id.clone(),
                    reason: format!(
                        "label (predicted {}, gold {}) outside [0, {num_classes})",
                        r.predicted, r.gold
                    ),
                });
            }
            for (name, v) in [("probs", &r.probs), ("logits", &r.logits)] {
                if let Some(v) = v {
                    if v.len() != num_classes {
                        return Err(Error::InvalidRecord {
                            id: r.id.clone(),
                            reason: format!("{name} has {} entries, expected {num_classes}", v.len()),
                        });
                    }
                }
            }
        }
        Ok(Dataset {
            records,
            num_classes,
            labels: None,
        })
    }

    /// Attaches a label vocabulary: `labels[id]` is the original name of label `id`.
    pub fn with_labels(mut self, labels: Vec<String>) -> Result<Self> {
        if labels.len() != self.num_classes {
            return Err(Error::param(
                "labels",
                format!("vocabulary has {} names for {} classes", labels.len(), self.num_classes),
            ));
        }
        self.labels = Some(labels);
        Ok(self)
    }

    pub fn records(&self) -> &[PredictionRecord] {
        &self.records
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn labels(&self) -> Option<&[String]> {
        self.labels.as_deref()
    }

    pub fn label_name(&self, id: usize) -> String {
        match &self.labels {
            Some(l) => l[id].clone(),
            None => id.to_string(),
        }
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn into_records(self) -> Vec<PredictionRecord> {
        self.records
    }

    /// Records at `indices`, in the given order. Fails if `indices` is empty.
    pub fn subset(&self, indices: &[usize]) -> Result<Dataset> {
        let records = indices.iter().map(|&i| self.records[i].clone()).collect();
        self.rebuild(records)
    }

    /// Same classes and vocabulary, different records.
    pub(crate) fn rebuild(&self, records: Vec<PredictionRecord>) -> Result<Dataset> {
        if records.is_empty() {
            return Err(Error::EmptyDataset);
        }
        Ok(Dataset {
            records,
            num_classes: self.num_classes,
            labels: self.labels.clone(),
        })
    }
}

/// Strictly increasing candidate thresholds in `[0, 1]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<f64>", into = "Vec<f64>")]
pub struct ThresholdGrid(Vec<f64>);

impl ThresholdGrid {
    pub fn new(thresholds: Vec<f64>) -> Result<Self> {
        if thresholds.is_empty() {
            return Err(Error::param("grid", "must contain at least one threshold"));
        }
        if thresholds.iter().any(|t| !(0.0..=1.0).contains(t)) {
            return Err(Error::param("grid", "thresholds must lie in [0, 1]"));
        }
        if thresholds.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::param("grid", "thresholds must be strictly increasing"));
        }
        Ok(ThresholdGrid(thresholds))
    }

    /// `steps` evenly spaced thresholds `0, 1/steps, ...` strictly below 1.
    pub fn uniform(steps: usize) -> Result<Self> {
        if steps == 0 {
            return Err(Error::param("steps", "must be positive"));
        }
        Self::new((0..steps).map(|k| k as f64 / steps as f64).collect())
    }

    pub fn thresholds(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

/// 0.00, 0.01, ..., 0.99 (K = 100).
impl Default for ThresholdGrid {
    fn default() -> Self {
        ThresholdGrid((0..100).map(|k| k as f64 / 100.0).collect())
    }
}

impl TryFrom<Vec<f64>> for ThresholdGrid {
    type Error = Error;
    fn try_from(v: Vec<f64>) -> Result<Self> {
        ThresholdGrid::new(v)
    }
}

impl From<ThresholdGrid> for Vec<f64> {
    fn from(g: ThresholdGrid) -> Self {
        g.0
    }
}

/// Target risk level `alpha` and failure probability `delta`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RiskBudget {
    pub alpha: f64,
    pub delta: f64,
}

impl RiskBudget {
    pub fn new(alpha: f64, delta: f64) -> Result<Self> {
        check_open_unit("alpha", alpha)?;
        check_open_unit("delta", delta)?;
        Ok(RiskBudget { alpha, delta })
    }
}

pub(crate) fn check_open_unit(name: &'static str, v: f64) -> Result<()> {
    if v > 0.0 && v < 1.0 {
        Ok(())
    } else {
        Err(Error::param(name, format!("{v} is not in (0, 1)")))
    }
}

/// Binary per-example losses `1[wrong and selected]` at a fixed threshold.
#[derive(Debug, Clone, PartialEq)]
pub struct LossVector {
    losses: Vec<u8>,
    tau: f64,
}

impl LossVector {
    pub fn new(losses: Vec<u8>, tau: f64) -> Result<Self> {
        if losses.iter().any(|&l| l > 1) {
            return Err(Error::param("losses", "entries must be 0 or 1"));
        }
        Ok(LossVector { losses, tau })
    }

    pub fn from_bools(losses: impl IntoIterator<Item = bool>, tau: f64) -> Self {
        LossVector {
            losses: losses.into_iter().map(u8::from).collect(),
            tau,
        }
    }

    pub fn losses(&self) -> &[u8] {
        &self.losses
    }

    pub fn tau(&self) -> f64 {
        self.tau
    }

    pub fn len(&self) -> usize {
        self.losses.len()
    }

    pub fn is_empty(&self) -> bool {
        self.losses.is_empty()
    }

    /// Number of ones.
    pub fn successes(&self) -> usize {
        self.losses.iter().filter(|&&l| l == 1).count()
    }

    pub fn mean(&self) -> f64 {
        if self.losses.is_empty() {
            return 0.0;
        }
        self.successes() as f64 / self.losses.len() as f64
    }

    /// Population variance `(1/n) Σ (L_i - mean)^2`.
    pub fn variance(&self) -> f64 {
        if self.losses.is_empty() {
            return 0.0;
        }
        let m = self.mean();
        self.losses
            .iter()
            .map(|&l| (l as f64 - m).powi(2))
            .sum::<f64>()
            / self.losses.len() as f64
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ProfileEntry {
    pub tau: f64,
    pub risk_hat: f64,
    pub var_hat: f64,
    pub n: usize,
}

/// Per-threshold empirical risk and variance of one domain.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct RiskProfile {
    pub entries: Vec<ProfileEntry>,
}

impl RiskProfile {
    /// Entry at the largest profiled threshold `<= tau`, falling back to the
    /// first entry when `tau` lies below the whole profile.
    pub fn at(&self, tau: f64) -> Option<&ProfileEntry> {
        self.entries
            .iter()
            .rev()
            .find(|e| e.tau <= tau + 1e-12)
            .or_else(|| self.entries.first())
    }
}

fn ensure_non_empty(ds: &Dataset) -> Result<()> {
    if ds.is_empty() {
        Err(Error::EmptyDataset)
    } else {
        Ok(())
    }
}

/// Fraction of records that are both selected at `tau` and wrong.
pub fn empirical_risk(ds: &Dataset, tau: f64) -> Result<f64> {
    ensure_non_empty(ds)?;
    let bad = ds.records().iter().filter(|r| r.is_unsafe(tau)).count();
    Ok(bad as f64 / ds.len() as f64)
}

/// Fraction of records with `confidence >= tau`.
pub fn coverage(ds: &Dataset, tau: f64) -> Result<f64> {
    ensure_non_empty(ds)?;
    let served = ds.records().iter().filter(|r| r.is_selected(tau)).count();
    Ok(served as f64 / ds.len() as f64)
}

pub fn losses_at(ds: &Dataset, tau: f64) -> Result<LossVector> {
    ensure_non_empty(ds)?;
    Ok(LossVector::from_bools(
        ds.records().iter().map(|r| r.is_unsafe(tau)),
        tau,
    ))
}

/// Splits per gold class, sending `round(frac_cal * class_count)` records of
/// each class (ties rounded up) to calibration. Both halves keep the original
/// record order.
pub fn stratified_split(ds: &Dataset, frac_cal: f64, seed: u64) -> Result<(Dataset, Dataset)> {
    check_open_unit("frac_cal", frac_cal)?;
    let mut by_class: Vec<Vec<usize>> = vec![Vec::new(); ds.num_classes()];
    for (i, r) in ds.records().iter().enumerate() {
        by_class[r.gold].push(i);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut cal = Vec::new();
    let mut test = Vec::new();
    for mut members in by_class {
        if members.is_empty() {
            continue;
        }
        members.shuffle(&mut rng);
        let take = (frac_cal * members.len() as f64 + 0.5).floor() as usize;
        let take = take.min(members.len());
        cal.extend_from_slice(&members[..take]);
        test.extend_from_slice(&members[take..]);
    }
    cal.sort_unstable();
    test.sort_unstable();
    Ok((ds.subset(&cal)?, ds.subset(&test)?))
}

pub fn risk_profile(ds: &Dataset, grid: &ThresholdGrid) -> Result<RiskProfile> {
    ensure_non_empty(ds)?;
    let entries = grid
        .thresholds()
        .iter()
        .map(|&tau| {
            let losses = losses_at(ds, tau)?;
            Ok(ProfileEntry {
                tau,
                risk_hat: losses.mean(),
                var_hat: losses.variance(),
                n: losses.len(),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(RiskProfile { entries })
}

#[cfg(test)]
pub(crate) mod fixtures {
    use super::*;

    /// (conf .9, wrong), (conf .9, right), (conf .1, wrong), (conf .5, right)
    pub fn four_records() -> Dataset {
        let recs = vec![
            PredictionRecord::new("a", 0.9, 1, 0),
            PredictionRecord::new("b", 0.9, 0, 0),
            PredictionRecord::new("c", 0.1, 0, 1),
            PredictionRecord::new("d", 0.5, 1, 1),
        ];
        Dataset::new(recs, 2).unwrap()
    }
}
