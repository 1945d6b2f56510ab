//! Resolved run configurations. Each subcommand writes its configuration,
//! with every default filled in, to `resolved_config.json` in the output
//! directory before doing any work, and accepts that file back via
//! `--config`.

use std::path::{Path, PathBuf};

use deephetero::{ModelConfig, TrainConfig, Variant};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::Failure;

pub const RESOLVED_CONFIG: &str = "resolved_config.json";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", tag = "kind", deny_unknown_fields)]
pub enum Source {
    Synth {
        classes: usize,
        per_class: usize,
        len: usize,
        seed: u64,
    },
    Iowa {
        raw: PathBuf,
        /// Window length in hours.
        window: usize,
        max_missing: f64,
    },
    Csv {
        path: PathBuf,
        /// Cut ragged rows to the shortest length instead of rejecting them.
        truncate: bool,
    },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct IngestRun {
    pub source: Source,
    pub output: PathBuf,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainRun {
    pub dataset: PathBuf,
    pub output: PathBuf,
    pub model: ModelConfig,
    pub train: TrainConfig,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvaluateRun {
    /// Directory of a finished `train` run.
    pub run: PathBuf,
    /// Evaluate every sample of this dataset instead of the run's test split.
    pub dataset: Option<PathBuf>,
    pub output: PathBuf,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AblateRun {
    pub dataset: PathBuf,
    /// Dataset label used in the table header.
    pub name: String,
    pub output: PathBuf,
    pub variants: Vec<Variant>,
    /// Shared architecture; the variant field is overridden per row.
    pub model: ModelConfig,
    pub train: TrainConfig,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GradcheckRun {
    pub layers: Vec<String>,
    /// Overrides the per-layer default tolerance.
    pub tol: Option<f64>,
    pub instances: usize,
    pub seed: u64,
    pub output: PathBuf,
}

pub fn load<T: DeserializeOwned>(path: &Path) -> Result<T, Failure> {
    let text = std::fs::read_to_string(path).map_err(|e| Failure::config(format!("{}: {e}", path.display())))?;
    serde_json::from_str(&text).map_err(|e| Failure::config(format!("{}: {e}", path.display())))
}

/// Creates `dir` and writes `config` as `resolved_config.json` inside it.
pub fn echo<T: Serialize>(config: &T, dir: &Path) -> Result<(), Failure> {
    std::fs::create_dir_all(dir).map_err(|e| Failure::config(format!("{}: {e}", dir.display())))?;
    let text = serde_json::to_string_pretty(config).map_err(|e| Failure::config(e.to_string()))?;
    let path = dir.join(RESOLVED_CONFIG);
    std::fs::write(&path, text + "\n").map_err(|e| Failure::config(format!("{}: {e}", path.display())))
}
