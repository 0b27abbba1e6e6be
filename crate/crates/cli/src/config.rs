//! The JSON run configuration and dataset resolution.
//!
//! ```json
//! {
//!   "schema_version": 1,
//!   "datasets": [{ "name": "ml-100k", "format": "ml-100k" }],
//!   "plan": { "models": ["PMF", "BNMF"], "grid": { "iterations": [100] }, "folds": 4 },
//!   "output": { "directory": "results" }
//! }
//! ```
//!
//! Relative paths are resolved against the directory holding the config
//! file. A dataset without a `path` is looked up under the data directory
//! (`$CFMF_DATA_DIR`, else `./data`) by its preset's usual file name.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use cfmf::data::{load_ratings, DatasetFormat, RatingDataset, ScoreScale};
use cfmf::harness::{ExperimentPlan, Grid, Sampling};
use cfmf::models::ModelKind;
use serde::{Deserialize, Serialize};

use crate::error::CliError;

pub const SCHEMA_VERSION: u32 = 1;

/// Where each preset's file lives under the data directory.
const PRESET_FILES: &[(&str, &[&str], &str)] = &[
    ("ml-100k", &["ml-100k", "movielens100k", "movielens-100k"], "ml-100k/u.data"),
    ("ml-1m", &["ml-1m", "movielens1m", "movielens-1m"], "ml-1m/ratings.csv"),
    ("filmtrust", &["filmtrust"], "filmtrust/ratings.txt"),
    ("myanimelist", &["myanimelist"], "myanimelist/rating.csv"),
];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub schema_version: u32,
    pub datasets: Vec<DatasetEntry>,
    #[serde(default)]
    pub plan: PlanSection,
    #[serde(default)]
    pub output: OutputSection,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum FormatSpec {
    Preset(String),
    Explicit(DatasetFormat),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetEntry {
    pub name: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub path: Option<PathBuf>,
    pub format: FormatSpec,
    /// Replaces the format's score scale.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub scale: Option<ScoreScale>,
    /// Replaces the relevance threshold only.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub threshold: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PlanSection {
    pub models: Vec<ModelKind>,
    pub grid: Grid,
    /// Per-model grids that replace `grid`.
    pub grids: BTreeMap<ModelKind, Grid>,
    pub folds: usize,
    pub master_seed: u64,
    pub n_max: usize,
    pub sampling: Sampling,
}

impl Default for PlanSection {
    fn default() -> Self {
        Self {
            models: ModelKind::ALL.to_vec(),
            grid: Grid::paper(),
            grids: BTreeMap::new(),
            folds: 4,
            master_seed: 0,
            n_max: 10,
            sampling: Sampling::Full,
        }
    }
}

impl PlanSection {
    pub fn experiment(&self, dataset: &str, model: ModelKind) -> ExperimentPlan {
        ExperimentPlan {
            dataset: dataset.to_string(),
            model,
            grid: self.grids.get(&model).unwrap_or(&self.grid).clone(),
            folds: self.folds,
            master_seed: self.master_seed,
            n_max: self.n_max,
            sampling: self.sampling.clone(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OutputSection {
    pub directory: PathBuf,
}

impl Default for OutputSection {
    fn default() -> Self {
        Self {
            directory: PathBuf::from("results"),
        }
    }
}

impl RunConfig {
    /// Reads a config file and makes its relative paths absolute.
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
        let mut config: RunConfig = serde_json::from_str(&text)
            .map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
        if config.schema_version != SCHEMA_VERSION {
            return Err(CliError::Config(format!(
                "{}: schema_version {} is not supported (expected {SCHEMA_VERSION})",
                path.display(),
                config.schema_version
            )));
        }
        let base = path.parent().unwrap_or(Path::new(""));
        for d in &mut config.datasets {
            if let Some(p) = &d.path {
                d.path = Some(base.join(p));
            }
        }
        config.output.directory = base.join(&config.output.directory);
        config.validate()?;
        Ok(config)
    }

    pub fn validate(&self) -> Result<(), CliError> {
        if self.datasets.is_empty() {
            return Err(CliError::Config("no datasets configured".into()));
        }
        for (i, d) in self.datasets.iter().enumerate() {
            if self.datasets[..i].iter().any(|o| o.name == d.name) {
                return Err(CliError::Config(format!("dataset name {:?} appears twice", d.name)));
            }
            d.format()?;
        }
        if self.plan.models.is_empty() {
            return Err(CliError::Config("no models configured".into()));
        }
        for &m in &self.plan.models {
            self.plan
                .experiment("check", m)
                .validate()
                .map_err(|e| CliError::Config(e.to_string()))?;
        }
        Ok(())
    }
}

fn normalize(name: &str) -> String {
    name.to_ascii_lowercase().replace('_', "-")
}

fn preset_entry(name: &str) -> Option<&'static (&'static str, &'static [&'static str], &'static str)> {
    let name = normalize(name);
    PRESET_FILES.iter().find(|(_, aliases, _)| aliases.contains(&name.as_str()))
}

pub fn data_dir() -> PathBuf {
    std::env::var_os("CFMF_DATA_DIR")
        .map(PathBuf::from)
        .unwrap_or_else(|| PathBuf::from("data"))
}

impl DatasetEntry {
    /// Builds an entry from a `--dataset` argument: a preset name, or a
    /// path read with `--format` (a preset name or a JSON descriptor).
    pub fn from_arg(arg: &str, format: Option<&str>) -> Result<Self, CliError> {
        let format = match format {
            Some(f) if f.trim_start().starts_with('{') => FormatSpec::Explicit(
                serde_json::from_str(f).map_err(|e| CliError::Config(format!("--format: {e}")))?,
            ),
            Some(f) => FormatSpec::Preset(f.to_string()),
            None => match preset_entry(arg) {
                Some((canonical, _, _)) => FormatSpec::Preset(canonical.to_string()),
                None => {
                    return Err(CliError::Usage(format!(
                        "{arg:?} is not a dataset preset; pass --format for a file path"
                    )))
                }
            },
        };
        let (name, path) = match preset_entry(arg) {
            Some((canonical, _, _)) => (canonical.to_string(), None),
            None => {
                let path = PathBuf::from(arg);
                let name = path
                    .file_stem()
                    .map(|s| s.to_string_lossy().into_owned())
                    .unwrap_or_else(|| arg.to_string());
                (name, Some(path))
            }
        };
        let entry = Self {
            name,
            path,
            format,
            scale: None,
            threshold: None,
        };
        entry.format()?;
        Ok(entry)
    }

    pub fn format(&self) -> Result<DatasetFormat, CliError> {
        let mut format = match &self.format {
            FormatSpec::Preset(p) => DatasetFormat::preset(p).ok_or_else(|| {
                CliError::Config(format!(
                    "dataset {}: unknown format preset {p:?} (known: {})",
                    self.name,
                    DatasetFormat::PRESETS.join(", ")
                ))
            })?,
            FormatSpec::Explicit(f) => f.clone(),
        };
        if let Some(scale) = self.scale {
            format.scale = scale;
        }
        if let Some(t) = self.threshold {
            format.scale.threshold = t;
        }
        format
            .scale
            .validate()
            .map_err(|e| CliError::Config(format!("dataset {}: {e}", self.name)))?;
        Ok(format)
    }

    pub fn resolved_path(&self) -> Result<PathBuf, CliError> {
        if let Some(p) = &self.path {
            return Ok(p.clone());
        }
        let preset = match &self.format {
            FormatSpec::Preset(p) => preset_entry(p),
            FormatSpec::Explicit(_) => None,
        }
        .or_else(|| preset_entry(&self.name));
        match preset {
            Some((_, _, file)) => Ok(data_dir().join(file)),
            None => Err(CliError::Config(format!("dataset {} has no path", self.name))),
        }
    }

    pub fn load(&self) -> Result<RatingDataset, CliError> {
        let format = self.format()?;
        let path = self.resolved_path()?;
        load_ratings(&path, &format).map_err(CliError::from)
    }
}
