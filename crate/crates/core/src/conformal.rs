//! Split-conformal prediction sets with the `1 - p(y | x)` score.

use serde::{Deserialize, Serialize};

use crate::data::{check_open_unit, Dataset, PredictionRecord};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ConformalModel {
    /// `None` when the quantile rank exceeds `n_cal`: every class is returned.
    pub q_hat: Option<f64>,
    pub n_cal: usize,
    pub alpha: f64,
}

impl ConformalModel {
    pub fn is_full_set(&self) -> bool {
        self.q_hat.is_none()
    }
}

/// Order-statistic rank `ceil((n + 1)(1 - alpha))`.
pub fn conformal_rank(n: usize, alpha: f64) -> usize {
    // The small offset keeps exact products like 550 * 0.9 from rounding up.
    ((n as f64 + 1.0) * (1.0 - alpha) - 1e-9).ceil() as usize
}

fn probs(r: &PredictionRecord) -> Result<&[f64]> {
    r.probs.as_deref().ok_or_else(|| Error::MissingProbs { id: r.id.clone() })
}

pub fn conformal_fit(cal: &Dataset, alpha: f64) -> Result<ConformalModel> {
    check_open_unit("alpha", alpha)?;
    if cal.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let mut scores = cal
        .records()
        .iter()
        .map(|r| Ok(1.0 - probs(r)?[r.gold]))
        .collect::<Result<Vec<f64>>>()?;
    let n = scores.len();
    let rank = conformal_rank(n, alpha);
    let q_hat = if rank > n {
        None
    } else {
        scores.sort_by(f64::total_cmp);
        Some(scores[rank.max(1) - 1])
    };
    Ok(ConformalModel { q_hat, n_cal: n, alpha })
}

/// Label ids in the prediction set, ascending.
pub fn conformal_predict(model: &ConformalModel, record: &PredictionRecord) -> Result<Vec<usize>> {
    let p = probs(record)?;
    Ok(match model.q_hat {
        None => (0..p.len()).collect(),
        Some(q) => (0..p.len()).filter(|&y| 1.0 - p[y] <= q).collect(),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ConformalEvaluation {
    pub coverage: f64,
    pub avg_set_size: f64,
    pub empty_fraction: f64,
}

pub fn conformal_evaluate(model: &ConformalModel, test: &Dataset) -> Result<ConformalEvaluation> {
    if test.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let (mut hits, mut size, mut empty) = (0usize, 0usize, 0usize);
    for r in test.records() {
        let set = conformal_predict(model, r)?;
        hits += usize::from(set.contains(&r.gold));
        size += set.len();
        empty += usize::from(set.is_empty());
    }
    let n = test.len() as f64;
    Ok(ConformalEvaluation {
        coverage: hits as f64 / n,
        avg_set_size: size as f64 / n,
        empty_fraction: empty as f64 / n,
    })
}
