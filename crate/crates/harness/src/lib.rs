//! Experiment harness for `selcert`: configuration, ablation tables,
//! progressive-trust and size-curve studies, the conformal comparison and a
//! Monte Carlo validity suite.

use std::fs;
use std::path::Path;

use serde::Serialize;

pub mod config;
pub mod experiments;
pub mod seeds;
pub mod validity;

#[derive(Debug, thiserror::Error)]
pub enum HarnessError {
    #[error("config: {0}")]
    Config(String),
    #[error(transparent)]
    Core(#[from] selcert::Error),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
}

pub type Result<T, E = HarnessError> = std::result::Result<T, E>;

/// Provenance written next to every output table.
#[derive(Debug, Serialize)]
pub struct Manifest<'a, C: Serialize> {
    pub command: &'a str,
    pub harness_version: &'static str,
    pub seed: u64,
    pub config: &'a C,
    pub outputs: Vec<String>,
}

impl<'a, C: Serialize> Manifest<'a, C> {
    pub fn new(command: &'a str, seed: u64, config: &'a C) -> Self {
        Manifest {
            command,
            harness_version: env!("CARGO_PKG_VERSION"),
            seed,
            config,
            outputs: Vec::new(),
        }
    }

    pub fn write(&self, dir: &Path) -> Result<()> {
        fs::write(dir.join("manifest.json"), serde_json::to_string_pretty(self)?)?;
        Ok(())
    }
}
