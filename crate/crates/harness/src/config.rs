//! Experiment configuration, loadable from TOML or JSON.

use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use selcert::calibration::{apply_temperature, fit_temperature, DEFAULT_T_RANGE, DEFAULT_T_TOL};
use selcert::datagen::{generate, load, DataFormat, SyntheticSpec};
use selcert::selection::{BoundSpec, Family};
use selcert::{stratified_split, Dataset, RiskProfile, ThresholdGrid};

use crate::{HarnessError, Result};

/// Where records come from. Exactly one of `path`, `preset` and `synthetic`
/// must be set.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataSource {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub path: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub format: Option<DataFormat>,
    /// Preset name; generated with the experiment seed.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub preset: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub synthetic: Option<SyntheticSpec>,
}

impl DataSource {
    pub fn file(path: impl Into<PathBuf>) -> Self {
        DataSource {
            path: Some(path.into()),
            ..Default::default()
        }
    }

    pub fn preset(name: impl Into<String>) -> Self {
        DataSource {
            preset: Some(name.into()),
            ..Default::default()
        }
    }

    pub fn synthetic(spec: SyntheticSpec) -> Self {
        DataSource {
            synthetic: Some(spec),
            ..Default::default()
        }
    }

    pub fn load(&self, seed: u64) -> Result<Dataset> {
        match (&self.path, &self.preset, &self.synthetic) {
            (Some(path), None, None) => {
                let fmt = self.format.unwrap_or_else(|| DataFormat::from_path(path));
                Ok(load(path, fmt)?)
            }
            (None, Some(name), None) => Ok(generate(&SyntheticSpec::preset(name, seed)?)?),
            (None, None, Some(spec)) => Ok(generate(spec)?),
            (None, None, None) => Err(HarnessError::Config("no dataset: set a path, preset or synthetic spec".into())),
            _ => Err(HarnessError::Config("set only one of path, preset and synthetic".into())),
        }
    }
}

/// A bound family plus its optional parameter, written `family[:value]` on
/// the command line (`dro_union:0.05`, `cvar_union:0.3`,
/// `transfer_betting:20`).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MethodSpec {
    pub family: Family,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub epsilon: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub beta: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub n_eff: Option<f64>,
}

impl MethodSpec {
    pub fn new(family: Family) -> Self {
        MethodSpec {
            family,
            epsilon: None,
            beta: None,
            n_eff: None,
        }
    }

    /// Table rows without a transfer source.
    pub fn defaults() -> Vec<MethodSpec> {
        [
            Family::HoeffdingUnion,
            Family::BernsteinUnion,
            Family::LttHoeffding,
            Family::LttBernstein,
            Family::CpLtt,
            Family::WsrLtt,
            Family::DroUnion,
            Family::CvarUnion,
            Family::PacBayes,
        ]
        .into_iter()
        .map(MethodSpec::new)
        .collect()
    }

    pub fn resolve(&self, source: Option<&Arc<RiskProfile>>) -> Result<BoundSpec> {
        let mut spec = BoundSpec::with_defaults(self.family, source.cloned())?;
        match &mut spec {
            BoundSpec::DroUnion { epsilon } => {
                if let Some(e) = self.epsilon {
                    *epsilon = e;
                }
            }
            BoundSpec::CvarUnion { beta } => {
                if let Some(b) = self.beta {
                    *beta = b;
                }
            }
            BoundSpec::TransferBetting { n_eff, .. } => {
                if let Some(v) = self.n_eff {
                    *n_eff = v;
                }
            }
            _ => {}
        }
        spec.validate()?;
        Ok(spec)
    }
}

impl fmt::Display for MethodSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.family)?;
        if let Some(v) = self.epsilon.or(self.beta).or(self.n_eff) {
            write!(f, ":{v}")?;
        }
        Ok(())
    }
}

impl FromStr for MethodSpec {
    type Err = HarnessError;
    fn from_str(s: &str) -> Result<Self> {
        let (name, value) = match s.split_once(':') {
            Some((n, v)) => {
                let v: f64 = v
                    .parse()
                    .map_err(|_| HarnessError::Config(format!("bad parameter in method `{s}`")))?;
                (n, Some(v))
            }
            None => (s, None),
        };
        let mut m = MethodSpec::new(name.trim().parse::<Family>()?);
        if let Some(v) = value {
            match m.family {
                Family::DroUnion => m.epsilon = Some(v),
                Family::CvarUnion => m.beta = Some(v),
                Family::TransferBetting => m.n_eff = Some(v),
                f => return Err(HarnessError::Config(format!("method `{f}` takes no parameter"))),
            }
        }
        Ok(m)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub data: DataSource,
    pub grid: ThresholdGrid,
    pub alphas: Vec<f64>,
    pub deltas: Vec<f64>,
    pub methods: Vec<MethodSpec>,
    pub split_frac: f64,
    pub seed: u64,
    pub trials: usize,
    /// RiskProfile JSON for the transfer families.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub source_profile: Option<PathBuf>,
    /// Sweep temperature-scaled scores (T fitted on the calibration half)
    /// instead of the raw ones.
    pub calibrated_scores: bool,
    /// Per-intent runs flag classes with fewer calibration records.
    pub min_class_size: usize,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            data: DataSource::default(),
            grid: ThresholdGrid::default(),
            alphas: vec![0.01, 0.02, 0.05, 0.10, 0.15, 0.20],
            deltas: vec![0.05, 0.10, 0.20],
            methods: MethodSpec::defaults(),
            split_frac: 0.5,
            seed: 42,
            trials: 20,
            source_profile: None,
            calibrated_scores: false,
            min_class_size: 120,
        }
    }
}

impl ExperimentConfig {
    /// Reads TOML, or JSON when the extension is `.json`.
    pub fn from_file(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path)?;
        let cfg: ExperimentConfig = if path.extension().is_some_and(|e| e == "json") {
            serde_json::from_str(&text).map_err(|e| HarnessError::Config(format!("{}: {e}", path.display())))?
        } else {
            toml::from_str(&text).map_err(|e| HarnessError::Config(format!("{}: {e}", path.display())))?
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        for (name, list) in [("alphas", &self.alphas), ("deltas", &self.deltas)] {
            if list.is_empty() {
                return Err(HarnessError::Config(format!("{name} must not be empty")));
            }
            if let Some(v) = list.iter().find(|v| !(**v > 0.0 && **v < 1.0)) {
                return Err(HarnessError::Config(format!("{name} value {v} not in (0, 1)")));
            }
        }
        if self.methods.is_empty() {
            return Err(HarnessError::Config("methods must not be empty".into()));
        }
        if !(self.split_frac > 0.0 && self.split_frac < 1.0) {
            return Err(HarnessError::Config(format!("split_frac {} not in (0, 1)", self.split_frac)));
        }
        if self.trials == 0 {
            return Err(HarnessError::Config("trials must be positive".into()));
        }
        Ok(())
    }

    pub fn source(&self) -> Result<Option<Arc<RiskProfile>>> {
        match &self.source_profile {
            None => Ok(None),
            Some(p) => {
                let text = fs::read_to_string(p)?;
                let profile: RiskProfile = serde_json::from_str(&text)?;
                Ok(Some(Arc::new(profile)))
            }
        }
    }

    /// Loads the data and returns the (calibration, test) halves, temperature
    /// scaled when `calibrated_scores` is set.
    pub fn split(&self) -> Result<(Dataset, Dataset)> {
        let ds = self.data.load(self.seed)?;
        let (cal, test) = stratified_split(&ds, self.split_frac, self.seed)?;
        if !self.calibrated_scores {
            return Ok((cal, test));
        }
        let t = fit_temperature(&cal, DEFAULT_T_RANGE, DEFAULT_T_TOL)?;
        Ok((apply_temperature(&cal, t)?, apply_temperature(&test, t)?))
    }
}
