//! Experiment configuration (JSON) and its manifest form.

use std::path::{Path, PathBuf};

use emmf::data::{DataSource, DatasetSpec};
use emmf::solvers::SolverConfig;
use serde::{Deserialize, Serialize};

use crate::error::{CliError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SweepParameter {
    /// Number of appended random outlier vectors.
    OutlierCount,
    /// Graph weight.
    Lambda,
    /// Noise added to one entry for influence curves.
    Sigma,
    /// Side `k` of a `k × k` noise block, i.e. a run of `k²` features.
    BlockSize,
}

impl SweepParameter {
    pub fn as_str(self) -> &'static str {
        match self {
            SweepParameter::OutlierCount => "outlier_count",
            SweepParameter::Lambda => "lambda",
            SweepParameter::Sigma => "sigma",
            SweepParameter::BlockSize => "block_size",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Sweep {
    pub parameter: SweepParameter,
    pub values: Vec<f64>,
}

/// Which entry of `X` the influence analysis perturbs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InfluenceTarget {
    #[serde(default)]
    pub feature: usize,
    #[serde(default)]
    pub sample: usize,
}

impl Default for InfluenceTarget {
    fn default() -> Self {
        Self { feature: 0, sample: 0 }
    }
}

fn default_repetitions() -> usize {
    20
}

fn default_graph_k() -> usize {
    5
}

fn default_block_samples() -> usize {
    3
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub dataset: DatasetSpec,
    pub solver: SolverConfig,
    #[serde(default = "default_repetitions")]
    pub repetitions: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sweep: Option<Sweep>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output_dir: Option<PathBuf>,
    #[serde(default = "default_graph_k")]
    pub graph_k: usize,
    /// Corrupted samples per class for `block_size` sweeps.
    #[serde(default = "default_block_samples")]
    pub block_samples_per_class: usize,
    #[serde(default)]
    pub influence: InfluenceTarget,
    /// Per-repetition seeds; written to manifests, checked when read back.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seeds: Option<Vec<u64>>,
}

impl ExperimentConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: ExperimentConfig = serde_json::from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Reads a config file; relative CSV paths are resolved against its directory.
    pub fn from_path(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Input(format!("cannot read config {}: {e}", path.display())))?;
        let mut cfg = Self::from_json(&text)?;
        if let DataSource::CsvFile { path: csv, .. } = &mut cfg.dataset.source {
            if csv.is_relative() {
                let base = path.parent().unwrap_or(Path::new("."));
                *csv = base.join(&*csv);
            }
        }
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if self.repetitions == 0 {
            return Err(CliError::Input("repetitions must be at least 1".into()));
        }
        if let Some(s) = &self.sweep {
            if s.values.is_empty() {
                return Err(CliError::Input("sweep values must not be empty".into()));
            }
            if let Some(v) = s.values.iter().find(|v| !v.is_finite() || **v < 0.0) {
                return Err(CliError::Input(format!("sweep value {v} must be finite and nonnegative")));
            }
            if matches!(s.parameter, SweepParameter::OutlierCount | SweepParameter::BlockSize) {
                if let Some(v) = s.values.iter().find(|v| v.fract() != 0.0) {
                    return Err(CliError::Input(format!("{} values must be integers, got {v}", s.parameter.as_str())));
                }
            }
        }
        if self.graph_k == 0 {
            return Err(CliError::Input("graph_k must be at least 1".into()));
        }
        self.solver.validate()?;
        if let Some(seeds) = &self.seeds {
            if seeds != &self.derived_seeds() {
                return Err(CliError::Input(
                    "seeds do not match solver.seed + repetition index".into(),
                ));
            }
        }
        Ok(())
    }

    /// `solver.seed + r` for every repetition `r`.
    pub fn derived_seeds(&self) -> Vec<u64> {
        (0..self.repetitions as u64).map(|r| self.solver.seed.wrapping_add(r)).collect()
    }

    /// The fully resolved config, suitable as input for an identical rerun.
    pub fn manifest(&self) -> Result<String> {
        let mut m = self.clone();
        if let DataSource::CsvFile { path, .. } = &mut m.dataset.source {
            if let Ok(abs) = std::fs::canonicalize(&*path) {
                *path = abs;
            }
        }
        m.seeds = Some(m.derived_seeds());
        Ok(serde_json::to_string_pretty(&m).map_err(|e| CliError::Input(e.to_string()))? + "\n")
    }
}
