//! Experiment configuration: an optional JSON file, then flag overrides, then
//! `VINET_SEED` for any seed neither of them set.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::Value;

use vinet::data::{ActionConfig, DiskDataset, SampleSource};
use vinet::synth::{DatasetSpec, SyntheticCorpus};
use vinet::train::{SplitKind, TrainConfig};

pub const CONFIG_ECHO: &str = "resolved_config.json";
pub const SEED_VAR: &str = "VINET_SEED";
pub const DEFAULT_FOLDS: usize = 5;

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExperimentConfig {
    pub dataset: DatasetSpec,
    /// Directory written by `generate`. When unset the corpus described by
    /// `dataset` is rendered on demand instead.
    pub data_dir: Option<PathBuf>,
    pub train: TrainConfig,
    /// Side of this split to train on (`train`) or score (`score`,
    /// `evaluate`); every sample when unset.
    pub split: Option<SplitKind>,
    pub fold: usize,
    /// Splits run by `grid`.
    pub grid: Vec<SplitKind>,
    pub checkpoint: Option<PathBuf>,
    /// Grid plans trained at the same time; 0 means one per core.
    pub jobs: usize,
}

/// A problem with flags or configuration, reported with exit status 2.
#[derive(Debug)]
pub struct UsageError(pub String);

impl std::fmt::Display for UsageError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for UsageError {}

pub fn usage(msg: impl Into<String>) -> anyhow::Error {
    UsageError(msg.into()).into()
}

/// The parsed file plus which keys it set, so that defaults and the seed
/// fallback only fill what the file left open.
pub struct Loaded {
    pub config: ExperimentConfig,
    raw: Value,
}

impl Loaded {
    pub fn read(path: Option<&Path>) -> anyhow::Result<Self> {
        let Some(path) = path else {
            return Ok(Loaded { config: ExperimentConfig::default(), raw: Value::Object(Default::default()) });
        };
        let text =
            std::fs::read_to_string(path).map_err(|e| usage(format!("cannot read config {}: {e}", path.display())))?;
        let raw: Value = serde_json::from_str(&text).map_err(|e| usage(format!("{}: {e}", path.display())))?;
        let config = serde_json::from_value(raw.clone()).map_err(|e| usage(format!("{}: {e}", path.display())))?;
        Ok(Loaded { config, raw })
    }

    pub fn sets(&self, pointer: &str) -> bool {
        self.raw.pointer(pointer).is_some()
    }
}

pub fn env_seed() -> anyhow::Result<Option<u64>> {
    match std::env::var(SEED_VAR) {
        Ok(v) => v.trim().parse().map(Some).map_err(|_| usage(format!("{SEED_VAR}={v:?} is not an unsigned integer"))),
        Err(_) => Ok(None),
    }
}

/// Heatmap videos from disk or from the generator.
pub enum Source {
    Disk(DiskDataset),
    Synthetic(SyntheticCorpus),
}

impl Source {
    pub fn open(config: &ExperimentConfig) -> anyhow::Result<Self> {
        Ok(match &config.data_dir {
            Some(dir) => Source::Disk(DiskDataset::open(dir)?),
            None => Source::Synthetic(SyntheticCorpus::new(config.dataset.clone()).map_err(|e| usage(e.to_string()))?),
        })
    }

    pub fn get(&self) -> &dyn SampleSource {
        match self {
            Source::Disk(d) => d,
            Source::Synthetic(s) => s,
        }
    }

    pub fn action(&self) -> ActionConfig {
        match self {
            Source::Disk(d) => d.manifest().action.clone(),
            Source::Synthetic(s) => s.spec().action(),
        }
    }
}

/// Takes the action from the data unless the file names one, in which case
/// the two must agree.
pub fn settle_action(loaded: &Loaded, config: &mut ExperimentConfig, source: &Source) -> anyhow::Result<()> {
    let action = source.action();
    if loaded.sets("/train/action") && config.train.action != action {
        return Err(usage(format!("train.action {:?} does not match the dataset's {:?}", config.train.action, action)));
    }
    config.train.action = action;
    Ok(())
}

pub fn write_echo(out: &Path, config: &ExperimentConfig) -> anyhow::Result<()> {
    let path = out.join(CONFIG_ECHO);
    let text = serde_json::to_string_pretty(config)?;
    std::fs::write(&path, text + "\n").map_err(|e| anyhow::anyhow!("writing {}: {e}", path.display()))
}
