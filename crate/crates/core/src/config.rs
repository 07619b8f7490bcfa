//! TOML dataset manifests and experiment configs.
//!
//! Both formats are flat key/value tables. Unknown keys are rejected and
//! relative paths are resolved against the directory of the file that names
//! them.

use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::dataset::{
    Dataset, FeatureFormat, FeatureMatrix, LabelKind, Labels, OracleMode, Splits,
};
use crate::error::{Error, Result};
use crate::retrieval::MapOptions;
use crate::trainer::TrainConfig;

fn parse_toml<T: DeserializeOwned>(text: &str, path: &Path) -> Result<T> {
    toml::from_str(text).map_err(|e| {
        let location = match e.span() {
            Some(span) => format!("line {}", text[..span.start].matches('\n').count() + 1),
            None => "unknown position".into(),
        };
        Error::Parse {
            path: path.to_path_buf(),
            location,
            message: e.message().to_string(),
        }
    })
}

fn base_dir(path: &Path) -> PathBuf {
    path.parent().map(Path::to_path_buf).unwrap_or_default()
}

fn resolve(base: &Path, p: &Path) -> PathBuf {
    if p.is_absolute() {
        p.to_path_buf()
    } else {
        base.join(p)
    }
}

/// Describes the files that make up a dataset.
///
/// ```toml
/// features = "features.mif"   # .csv or MIF1
/// labels = "labels.csv"       # optional
/// label_kind = "single"       # or "multi"
/// splits = "splits.csv"       # optional; default is all train/retrieval
/// ```
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetManifest {
    pub features: PathBuf,
    #[serde(default)]
    pub labels: Option<PathBuf>,
    #[serde(default)]
    pub label_kind: LabelKind,
    #[serde(default)]
    pub splits: Option<PathBuf>,
}

impl DatasetManifest {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        let mut m: Self = parse_toml(&text, path)?;
        let base = base_dir(path);
        m.features = resolve(&base, &m.features);
        m.labels = m.labels.map(|p| resolve(&base, &p));
        m.splits = m.splits.map(|p| resolve(&base, &p));
        Ok(m)
    }

    pub fn load_dataset(&self) -> Result<Dataset> {
        let features =
            FeatureMatrix::load(&self.features, FeatureFormat::from_path(&self.features))?;
        let labels = match &self.labels {
            Some(p) => Labels::read(p, self.label_kind)?,
            None => Labels::None,
        };
        let splits = match &self.splits {
            Some(p) => Splits::read(p)?,
            None => Splits::all_train(features.rows()),
        };
        Dataset::new(features, labels, splits)
    }
}

/// Training experiment. Every key except `dataset` has a default.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    /// Path of a dataset manifest.
    pub dataset: PathBuf,
    pub oracle: OracleMode,
    /// Metric-threshold oracle percentile.
    pub percentile: f64,
    /// Seed of the pair subsample behind the metric threshold.
    pub oracle_seed: u64,
    /// Standardize features with training-split statistics. The statistics
    /// are saved next to the model as `<model>.norm.csv`.
    pub standardize: bool,
    pub output_model: PathBuf,
    pub output_log: PathBuf,
    /// Report mAP of test queries against the retrieval split after every
    /// epoch.
    pub validation: bool,
    /// mAP cutoff for validation; absent means full ranking.
    pub val_k: Option<usize>,

    pub bits: usize,
    pub batch_size: usize,
    pub epochs: usize,
    pub lr: f64,
    pub momentum: f64,
    pub weight_decay: f64,
    pub lr_decay_factor: f64,
    pub lr_decay_period: usize,
    pub gamma: f64,
    pub seed: u64,
    pub balanced_sampling: bool,
    pub deterministic: bool,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        let t = TrainConfig::default();
        Self {
            dataset: PathBuf::new(),
            oracle: OracleMode::default(),
            percentile: 5.0,
            oracle_seed: 0,
            standardize: false,
            output_model: "model.mih".into(),
            output_log: "train_log.csv".into(),
            validation: false,
            val_k: None,
            bits: t.bits,
            batch_size: t.batch_size,
            epochs: t.epochs,
            lr: t.lr,
            momentum: t.momentum,
            weight_decay: t.weight_decay,
            lr_decay_factor: t.lr_decay_factor,
            lr_decay_period: t.lr_decay_period,
            gamma: t.gamma,
            seed: t.seed,
            balanced_sampling: t.balanced_sampling,
            deterministic: t.deterministic,
        }
    }
}

impl ExperimentConfig {
    pub fn from_toml(text: &str, path: &Path) -> Result<Self> {
        let cfg: Self = parse_toml(text, path)?;
        if cfg.dataset.as_os_str().is_empty() {
            return Err(Error::InvalidConfig(format!(
                "{}: missing key `dataset`",
                path.display()
            )));
        }
        cfg.train_config().validate()?;
        Ok(cfg)
    }

    /// Reads and validates a config file, resolving its paths.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        let mut cfg = Self::from_toml(&text, path)?;
        let base = base_dir(path);
        cfg.dataset = resolve(&base, &cfg.dataset);
        cfg.output_model = resolve(&base, &cfg.output_model);
        cfg.output_log = resolve(&base, &cfg.output_log);
        Ok(cfg)
    }

    pub fn train_config(&self) -> TrainConfig {
        TrainConfig {
            bits: self.bits,
            batch_size: self.batch_size,
            epochs: self.epochs,
            lr: self.lr,
            momentum: self.momentum,
            weight_decay: self.weight_decay,
            lr_decay_factor: self.lr_decay_factor,
            lr_decay_period: self.lr_decay_period,
            gamma: self.gamma,
            seed: self.seed,
            balanced_sampling: self.balanced_sampling,
            deterministic: self.deterministic,
        }
    }

    pub fn map_options(&self) -> MapOptions {
        MapOptions {
            cutoff: self.val_k,
            ..MapOptions::default()
        }
    }

    pub fn percentile_for_oracle(&self) -> Option<f64> {
        (self.oracle == OracleMode::MetricThreshold).then_some(self.percentile)
    }
}

/// Path of the standardization sidecar that accompanies a model file.
pub fn norm_sidecar(model_path: &Path) -> PathBuf {
    let mut name = model_path.file_name().unwrap_or_default().to_os_string();
    name.push(".norm.csv");
    model_path.with_file_name(name)
}
