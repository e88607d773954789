//! Per-command run configurations. Each is read from an optional TOML file,
//! then overridden by flags, validated, and echoed to `config.resolved`.

use std::fs;
use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use spadseg::datakit::DEFAULT_VAL_FRACTION;
use spadseg::evalkit::{DEFAULT_IOU_THRESHOLD, DEFAULT_MIN_AREA};
use spadseg::histproc::{ComConfig, InputKind};
use spadseg::neuralseg::{TrainConfig, UnetSpec};
use spadseg::simkit::GeneratorConfig;

use crate::error::{CliError, CliResult, IoContext};

pub const RESOLVED_FILE: &str = "config.resolved";

pub fn load<T: DeserializeOwned + Default>(path: Option<&Path>) -> CliResult<T> {
    match path {
        None => Ok(T::default()),
        Some(p) => {
            let text = fs::read_to_string(p).at(p)?;
            toml::from_str(&text).map_err(|e| CliError::Usage(format!("{}: {e}", p.display())))
        }
    }
}

pub fn write_resolved<T: Serialize>(dir: &Path, cfg: &T) -> CliResult<()> {
    let text = toml::to_string(cfg).map_err(|e| CliError::Usage(format!("cannot serialize config: {e}")))?;
    fs::create_dir_all(dir).at(dir)?;
    let path = dir.join(RESOLVED_FILE);
    fs::write(&path, text).at(&path)
}

pub fn require<'a>(p: &'a Option<PathBuf>, flag: &str) -> CliResult<&'a Path> {
    p.as_deref()
        .ok_or_else(|| CliError::Usage(format!("missing {flag} (flag or config key)")))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimulateConfig {
    pub out: Option<PathBuf>,
    pub frames: usize,
    pub seed: u64,
    pub val_fraction: f64,
    pub generator: GeneratorConfig,
}

impl Default for SimulateConfig {
    fn default() -> Self {
        Self {
            out: None,
            frames: 64,
            seed: 1,
            val_fraction: DEFAULT_VAL_FRACTION,
            generator: GeneratorConfig::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainRunConfig {
    pub data: Option<PathBuf>,
    pub out: Option<PathBuf>,
    pub kind: InputKind,
    /// Weight initialization seed.
    pub model_seed: u64,
    /// Adds mirrored copies of the training and validation frames.
    pub augment: bool,
    pub com: ComConfig,
    pub model: UnetSpec,
    pub train: TrainConfig,
}

impl Default for TrainRunConfig {
    fn default() -> Self {
        Self {
            data: None,
            out: None,
            kind: InputKind::Histogram,
            model_seed: 1,
            augment: false,
            com: ComConfig::default(),
            model: UnetSpec::default(),
            train: TrainConfig::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PredictConfig {
    pub checkpoint: Option<PathBuf>,
    pub data: Option<PathBuf>,
    pub out: Option<PathBuf>,
    /// Dataset record indices; empty means every frame.
    pub frames: Vec<usize>,
    pub com: ComConfig,
}

impl Default for PredictConfig {
    fn default() -> Self {
        Self {
            checkpoint: None,
            data: None,
            out: None,
            frames: Vec::new(),
            com: ComConfig::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvaluateConfig {
    /// Test dataset.
    pub data: Option<PathBuf>,
    pub out: Option<PathBuf>,
    /// Evaluate this trained model.
    pub checkpoint: Option<PathBuf>,
    /// Or train `runs` models on this dataset first.
    pub train_data: Option<PathBuf>,
    /// Or score the ground truth against itself.
    pub oracle: bool,
    pub kind: InputKind,
    pub runs: usize,
    /// Run `r` uses seed `seed + r` for initialization and shuffling.
    pub seed: u64,
    pub iou_threshold: f64,
    pub min_area: usize,
    pub augment: bool,
    pub com: ComConfig,
    pub model: UnetSpec,
    pub train: TrainConfig,
}

impl Default for EvaluateConfig {
    fn default() -> Self {
        Self {
            data: None,
            out: None,
            checkpoint: None,
            train_data: None,
            oracle: false,
            kind: InputKind::Histogram,
            runs: 1,
            seed: 1,
            iou_threshold: DEFAULT_IOU_THRESHOLD,
            min_area: DEFAULT_MIN_AREA,
            augment: false,
            com: ComConfig::default(),
            model: UnetSpec::default(),
            train: TrainConfig::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CompareConfig {
    /// Output directories of `evaluate` runs, one per data type.
    pub evals: Vec<PathBuf>,
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BenchConfig {
    pub data: Option<PathBuf>,
    pub out: Option<PathBuf>,
    /// Timed frames per measurement, cycling through the dataset.
    pub frames: usize,
    pub warmup: usize,
    /// Timed frames per network measurement.
    pub net_frames: usize,
    /// Repeats of every measurement, to report run-to-run spread.
    pub repeats: usize,
    pub kinds: Vec<InputKind>,
    pub checkpoint: Option<PathBuf>,
    pub com: ComConfig,
}

impl Default for BenchConfig {
    fn default() -> Self {
        Self {
            data: None,
            out: None,
            frames: 1000,
            warmup: 100,
            net_frames: 1000,
            repeats: 3,
            kinds: InputKind::ALL.to_vec(),
            checkpoint: None,
            com: ComConfig::default(),
        }
    }
}

/// TOML float literal; `Display` would print `0` for `0.0`.
pub fn num(v: f64) -> String {
    if v.is_nan() {
        "nan".into()
    } else {
        format!("{v:?}")
    }
}
