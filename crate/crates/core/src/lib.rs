//! Finite-sample risk control for selective prediction.
//!
//! A selective classifier serves its prediction when `confidence >= tau` and
//! defers otherwise. This crate picks the smallest threshold `tau*` on a grid
//! such that the probability of a served-and-wrong prediction is at most
//! `alpha` with probability at least `1 - delta` over the calibration draw.
//!
//! Upper confidence bounds come from several families: Hoeffding and empirical
//! Bernstein corrections, exact Clopper-Pearson inversion, betting wealth
//! processes (optionally warm-started from a source domain), PAC-Bayes-λ,
//! Wasserstein DRO and CVaR. Thresholds are chosen either with a Bonferroni
//! union bound or a fixed-sequence (Learn Then Test) sweep.

pub mod betting;
pub mod calibration;
pub mod concentration;
pub mod conformal;
pub mod data;
pub mod datagen;
mod error;
pub mod pacbayes;
pub mod selection;
mod special;

pub use error::{Error, Result};

pub use betting::{BettingConfig, TransferPrior};
pub use data::{
    coverage, empirical_risk, losses_at, risk_profile, stratified_split, Dataset, LossVector,
    PredictionRecord, RiskBudget, RiskProfile, ThresholdGrid,
};
pub use pacbayes::PacBayesConfig;
pub use selection::{BoundSpec, Certificate, Evaluation, Family};
