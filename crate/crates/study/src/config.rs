//! Study configuration, read from TOML.

use std::path::{Path, PathBuf};

use chrono::NaiveDate;
use mvdr::exec::ExecMode;
use mvdr::scoring::{DmVariance, DEFAULT_ENSEMBLE};
use serde::{Deserialize, Serialize};

use crate::error::{Result, StudyError};
use crate::features::FIRST_DAY;
use crate::frame::{self, MarketFrame};
use crate::synth::{synth_generate, Dependence, SynthSpec};
use crate::zoo::{ModelKind, ModelSettings};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SynthConfig {
    pub dim: usize,
    pub days: usize,
    pub dependence: Dependence,
    /// Defaults to the study seed.
    pub seed: Option<u64>,
}

/// Where the prices come from: an hourly CSV or the generator.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataConfig {
    pub path: Option<PathBuf>,
    /// Delivery periods per day in the CSV, 24 when unset.
    pub dim: Option<usize>,
    pub synthetic: Option<SynthConfig>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelEntry {
    pub name: String,
    #[serde(flatten)]
    pub settings: ModelSettings,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StudyConfig {
    #[serde(default = "default_seed")]
    pub seed: u64,
    #[serde(default = "default_out")]
    pub out: PathBuf,
    /// Last day of the initial training window.
    pub train_end: Option<NaiveDate>,
    /// Alternative to `train_end`: training days after the lag burn-in.
    pub train_days: Option<usize>,
    /// Number of test days; all remaining days when unset.
    pub test_days: Option<usize>,
    #[serde(default = "default_ensemble")]
    pub ensemble: usize,
    #[serde(default)]
    pub data: DataConfig,
    /// Settings shared by all models.
    #[serde(default)]
    pub defaults: ModelSettings,
    /// Empty means the full zoo.
    #[serde(default)]
    pub models: Vec<ModelEntry>,
    /// Run models concurrently.
    #[serde(default)]
    pub exec: ExecMode,
    #[serde(default)]
    pub dm_variance: DmVariance,
    /// Write one snapshot per model after the last test day.
    #[serde(default = "default_true")]
    pub snapshots: bool,
    /// Render SVG plots.
    #[serde(default = "default_true")]
    pub plots: bool,
}

fn default_seed() -> u64 {
    1
}

fn default_out() -> PathBuf {
    PathBuf::from("mvdr-out")
}

fn default_ensemble() -> usize {
    DEFAULT_ENSEMBLE
}

fn default_true() -> bool {
    true
}

impl Default for StudyConfig {
    fn default() -> Self {
        Self {
            seed: default_seed(),
            out: default_out(),
            train_end: None,
            train_days: None,
            test_days: None,
            ensemble: default_ensemble(),
            data: DataConfig::default(),
            defaults: ModelSettings::default(),
            models: Vec::new(),
            exec: ExecMode::default(),
            dm_variance: DmVariance::default(),
            snapshots: true,
            plots: true,
        }
    }
}

impl StudyConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| StudyError::Config(e.to_string()))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let text = std::fs::read_to_string(path.as_ref()).map_err(|e| StudyError::io(path.as_ref(), e))?;
        let mut cfg = Self::from_toml(&text)?;
        // relative data paths are taken from the config file's directory
        if let (Some(p), Some(dir)) = (cfg.data.path.as_mut(), path.as_ref().parent()) {
            if p.is_relative() {
                *p = dir.join(&*p);
            }
        }
        Ok(cfg)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| StudyError::Config(e.to_string()))
    }

    /// Synthetic configuration with the given split.
    pub fn synthetic(dim: usize, dependence: Dependence, train_days: usize, test_days: usize, seed: u64) -> Self {
        Self {
            seed,
            train_days: Some(train_days),
            test_days: Some(test_days),
            data: DataConfig {
                path: None,
                dim: None,
                synthetic: Some(SynthConfig { dim, days: FIRST_DAY + train_days + test_days, dependence, seed: Some(seed) }),
            },
            ..Self::default()
        }
    }

    /// Model kinds with their resolved settings, in configuration order.
    pub fn model_list(&self) -> Result<Vec<(ModelKind, ModelSettings)>> {
        if self.models.is_empty() {
            return Ok(ModelKind::study_zoo().into_iter().map(|k| (k, self.defaults.clone())).collect());
        }
        let mut out: Vec<(ModelKind, ModelSettings)> = Vec::with_capacity(self.models.len());
        for e in &self.models {
            let kind: ModelKind = e.name.parse()?;
            if out.iter().any(|(k, _)| *k == kind) {
                return Err(StudyError::Config(format!("model '{}' listed twice", e.name)));
            }
            out.push((kind, e.settings.or(&self.defaults)));
        }
        Ok(out)
    }

    /// Replaces the model list by names, keeping per-model settings of listed entries.
    pub fn select_models(&mut self, names: &[String]) -> Result<()> {
        let mut entries = Vec::with_capacity(names.len());
        for n in names {
            let kind: ModelKind = n.parse()?;
            let existing = self.models.iter().find(|e| e.name.parse::<ModelKind>().ok() == Some(kind));
            entries.push(ModelEntry {
                name: kind.name(),
                settings: existing.map(|e| e.settings.clone()).unwrap_or_default(),
            });
        }
        self.models = entries;
        Ok(())
    }

    pub fn synth_spec(&self) -> Option<SynthSpec> {
        self.data.synthetic.as_ref().map(|s| SynthSpec {
            dim: s.dim,
            days: s.days,
            dependence: s.dependence,
            seed: s.seed.unwrap_or(self.seed),
        })
    }

    pub fn load_frame(&self) -> Result<MarketFrame> {
        match (&self.data.path, self.synth_spec()) {
            (Some(p), None) => frame::ingest_dim(p, self.data.dim.unwrap_or(frame::MARKET_DIM)),
            (None, Some(spec)) => Ok(synth_generate(&spec)?.frame),
            _ => Err(StudyError::Config("set exactly one of data.path and data.synthetic".into())),
        }
    }

    /// Index of the first test day and the number of test days.
    pub fn split(&self, frame: &MarketFrame) -> Result<(usize, usize)> {
        let first_test = match (self.train_end, self.train_days) {
            (Some(date), None) => {
                frame.index_of(date).ok_or_else(|| StudyError::Config(format!("train_end {date} outside the data")))? + 1
            }
            (None, Some(n)) => FIRST_DAY + n,
            (None, None) => return Err(StudyError::Config("set train_end or train_days".into())),
            (Some(_), Some(_)) => return Err(StudyError::Config("set only one of train_end and train_days".into())),
        };
        if first_test <= FIRST_DAY + 1 {
            return Err(StudyError::History(format!("training window ends at day {first_test}, too short")));
        }
        let available = frame.n_days().saturating_sub(first_test);
        let test = self.test_days.unwrap_or(available);
        if test == 0 || test > available {
            return Err(StudyError::Config(format!("{test} test days requested, {available} available")));
        }
        Ok((first_test, test))
    }
}
