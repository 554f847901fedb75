//! Run configuration: a strict JSON document, overridden field by field by
//! command-line flags.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::CliError;

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FileConfig {
    pub model: Option<ModelSection>,
    pub seed: Option<u64>,
    pub grid_points: Option<usize>,
    pub out: Option<PathBuf>,
    pub simulate: Option<SimulateSection>,
    pub optimal_path: Option<OptimalPathSection>,
    pub ldcheck: Option<LdcheckSection>,
    pub balance_scan: Option<BalanceScanSection>,
    pub rate: Option<RateSection>,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSection {
    pub lambda: Option<f64>,
    pub mu: Option<f64>,
    pub nu: Option<f64>,
    pub horizon: Option<f64>,
    pub n: Option<u64>,
    pub x1_0: Option<f64>,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimulateSection {
    pub n_runs: Option<usize>,
    pub trajectories: Option<usize>,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OptimalPathSection {
    pub b: Option<f64>,
    pub alpha: Option<f64>,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LdcheckSection {
    pub b: Option<f64>,
    pub n_list: Option<Vec<u64>>,
    pub budget: Option<usize>,
    pub binomial: Option<bool>,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BalanceScanSection {
    pub b_list: Option<Vec<f64>>,
    pub alpha: Option<f64>,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RateSection {
    pub path: Option<PathBuf>,
}

impl FileConfig {
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Config(format!("cannot read {}: {e}", path.display())))?;
        serde_json::from_str(&text)
            .map_err(|e| CliError::Config(format!("{}: {e}", path.display())))
    }
}

/// Fully resolved model block.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Model {
    pub lambda: f64,
    pub mu: f64,
    pub nu: f64,
    pub horizon: f64,
    pub n: u64,
    pub x1_0: f64,
}

impl Model {
    pub fn validate(&self) -> Result<(), CliError> {
        for (name, v) in [("lambda", self.lambda), ("mu", self.mu), ("nu", self.nu)] {
            if !(v.is_finite() && v >= 0.0) {
                return Err(CliError::Config(format!("{name} must be finite and >= 0, got {v}")));
            }
        }
        if !(self.horizon.is_finite() && self.horizon > 0.0) {
            return Err(CliError::Config(format!("horizon must be > 0, got {}", self.horizon)));
        }
        if self.n < 1 {
            return Err(CliError::Config("n must be >= 1".into()));
        }
        if !(0.0..=1.0).contains(&self.x1_0) {
            return Err(CliError::Config(format!("x1_0 must lie in [0, 1], got {}", self.x1_0)));
        }
        Ok(())
    }

    pub fn params(&self) -> emission_core::RateParams {
        emission_core::RateParams {
            lambda: self.lambda,
            mu: self.mu,
            nu: self.nu,
            horizon: self.horizon,
        }
    }
}

/// First present value wins.
pub fn pick<T: Clone>(flag: Option<T>, file: Option<T>, default: T) -> T {
    flag.or(file).unwrap_or(default)
}
