//! Experiment configuration, presets and the config hash.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::data::{CsvSchema, DownsampleMethod, Periodicity, SplitRatios};
use crate::error::{Error, Result};
use crate::lstm::DecodeMode;
use crate::synthetic::SyntheticConfig;
use crate::training::TrainConfig;

/// Environment variable naming the dataset root.
pub const DATA_DIR_ENV: &str = "ENCDEC_AD_DATA_DIR";

/// Prefix for interval sources compiled into the library.
pub const BUILTIN_PREFIX: &str = "builtin:";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ThresholdMode {
    /// F_β maximization on v_N2 ∪ v_A.
    Supervised,
    /// Mean plus standard deviation of v_N1 scores.
    Unsupervised,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SeriesSource {
    pub id: String,
    /// Relative paths resolve against the data root.
    pub path: PathBuf,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetConfig {
    pub name: String,
    #[serde(default = "yes")]
    pub predictable: bool,
    #[serde(default = "periodic")]
    pub periodicity: Periodicity,
    /// Empty for the synthetic generator.
    #[serde(default)]
    pub series: Vec<SeriesSource>,
    #[serde(default)]
    pub schema: CsvSchema,
    /// Interval file path, or `builtin:<name>`.
    #[serde(default)]
    pub intervals: Option<String>,
    #[serde(default)]
    pub synthetic: Option<SyntheticConfig>,
    #[serde(default = "one")]
    pub downsample: usize,
    #[serde(default)]
    pub downsample_method: DownsampleMethod,
    pub window_length: usize,
    pub window_step: usize,
    #[serde(default = "yes")]
    pub normalize: bool,
    /// Reduce to the first principal component (fit on s_N).
    #[serde(default)]
    pub pca: bool,
}

fn yes() -> bool {
    true
}

fn one() -> usize {
    1
}

fn periodic() -> Periodicity {
    Periodicity::Periodic
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    /// Hidden sizes to sweep; the best by the selection rule is kept.
    pub hidden_sizes: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DetectionConfig {
    #[serde(default = "default_beta")]
    pub beta: f64,
    pub threshold: ThresholdMode,
    #[serde(default)]
    pub decode_mode: DecodeMode,
}

fn default_beta() -> f64 {
    0.1
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    #[serde(default)]
    pub seed: u64,
    pub dataset: DatasetConfig,
    #[serde(default)]
    pub split: SplitRatios,
    pub model: ModelConfig,
    #[serde(default)]
    pub train: TrainConfig,
    pub detection: DetectionConfig,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Preset {
    Power,
    SpaceShuttle,
    Ecg,
    Synthetic,
}

impl Preset {
    pub const ALL: [Preset; 4] = [Preset::Power, Preset::SpaceShuttle, Preset::Ecg, Preset::Synthetic];

    pub fn name(self) -> &'static str {
        match self {
            Preset::Power => "power",
            Preset::SpaceShuttle => "space_shuttle",
            Preset::Ecg => "ecg",
            Preset::Synthetic => "synthetic",
        }
    }

    pub fn parse(name: &str) -> Result<Self> {
        Preset::ALL
            .into_iter()
            .find(|p| p.name() == name)
            .ok_or_else(|| Error::InvalidConfig(format!("unknown preset `{name}`")))
    }

    fn source(self) -> &'static str {
        match self {
            Preset::Power => include_str!("../presets/power.toml"),
            Preset::SpaceShuttle => include_str!("../presets/space_shuttle.toml"),
            Preset::Ecg => include_str!("../presets/ecg.toml"),
            Preset::Synthetic => include_str!("../presets/synthetic.toml"),
        }
    }

    pub fn config(self) -> ExperimentConfig {
        ExperimentConfig::from_toml(self.source()).expect("bundled presets parse")
    }
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let mut cfg: ExperimentConfig =
            toml::from_str(text).map_err(|e| Error::InvalidConfig(e.to_string()))?;
        cfg.set_seed(cfg.seed);
        cfg.validate()?;
        Ok(cfg)
    }

    /// Reads TOML, or JSON when the extension is `.json`.
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        if path.extension().is_some_and(|e| e == "json") {
            let mut cfg: ExperimentConfig = serde_json::from_str(&text)?;
            cfg.set_seed(cfg.seed);
            cfg.validate()?;
            Ok(cfg)
        } else {
            Self::from_toml(&text)
        }
    }

    /// The experiment seed drives the split, the synthetic generator and
    /// the training run; `train.seed` always mirrors it.
    pub fn set_seed(&mut self, seed: u64) {
        self.seed = seed;
        self.train.seed = seed;
    }

    pub fn validate(&self) -> Result<()> {
        let d = &self.dataset;
        let bad = |msg: String| Err(Error::InvalidConfig(msg));
        if d.window_length == 0 || d.window_step == 0 {
            return bad("window_length and window_step must be >= 1".into());
        }
        if d.downsample == 0 {
            return bad("downsample must be >= 1".into());
        }
        match (&d.synthetic, d.series.is_empty()) {
            (Some(s), true) => {
                s.validate()?;
                if d.intervals.is_some() {
                    return bad("synthetic datasets carry their own labels; drop `intervals`".into());
                }
            }
            (None, false) => {}
            (Some(_), false) => return bad("dataset has both `series` and `synthetic`".into()),
            (None, true) => return bad("dataset needs `series` files or a `synthetic` table".into()),
        }
        if self.model.hidden_sizes.is_empty() {
            return bad("model.hidden_sizes is empty".into());
        }
        if self.model.hidden_sizes.contains(&0) {
            return bad("hidden size c must be >= 1".into());
        }
        let beta = self.detection.beta;
        if !(beta > 0.0) || !beta.is_finite() {
            return bad(format!("beta must be positive, got {beta}"));
        }
        if self.detection.threshold == ThresholdMode::Supervised && d.intervals.is_none() && d.synthetic.is_none() {
            return bad("supervised thresholding needs an anomaly interval file (dataset.intervals)".into());
        }
        if beta >= 1.0 {
            log::warn!("beta = {beta} >= 1 weights recall over precision");
        }
        self.split.validate()?;
        self.train.validate()
    }

    /// Lowercase hex SHA-256 of the canonical JSON form.
    pub fn hash(&self) -> String {
        let json = serde_json::to_string(self).expect("config serializes");
        let digest = Sha256::digest(json.as_bytes());
        digest.iter().map(|b| format!("{b:02x}")).collect()
    }
}

/// Dataset root from the environment, if set.
pub fn data_root_from_env() -> Option<PathBuf> {
    std::env::var_os(DATA_DIR_ENV).map(PathBuf::from)
}
