use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::eval::MetricConfig;
use crate::inference::FusionConfig;
use crate::labels::LabelConfig;
use crate::loss::LossConfig;
use crate::model::ModelConfig;
use crate::optim::OptimizerConfig;

/// How raw feature sequences become fixed-length network inputs.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DatasetMode {
    /// Every video is rescaled to `T` steps.
    ActivitynetLike,
    /// Videos are cut into overlapping windows of `T` steps.
    ThumosLike,
    /// Generated corpora, handled like `activitynet_like`.
    Synthetic,
}

impl DatasetMode {
    pub fn windowed(self) -> bool {
        self == DatasetMode::ThumosLike
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub model: ModelConfig,
    pub loss: LossConfig,
    pub fusion: FusionConfig,
    pub metric: MetricConfig,
    pub optimizer: OptimizerConfig,
    pub labels: LabelConfig,
    pub seed: u64,
    pub dataset: DatasetMode,
    /// Window stride for windowed inputs; half of `T` when unset.
    pub window_stride: Option<usize>,
    /// Manifest subset used for training. Entries without a subset are
    /// always included.
    pub train_subset: String,
    /// Manifest subset used for inference and evaluation.
    pub eval_subset: String,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            model: ModelConfig::default(),
            loss: LossConfig::default(),
            fusion: FusionConfig::default(),
            metric: MetricConfig::default(),
            optimizer: OptimizerConfig::default(),
            labels: LabelConfig::default(),
            seed: 0,
            dataset: DatasetMode::ActivitynetLike,
            window_stride: None,
            train_subset: "train".into(),
            eval_subset: "test".into(),
        }
    }
}

impl RunConfig {
    /// Parses TOML when the file ends in `.toml`, JSON otherwise.
    pub fn from_str_for(path: &Path, text: &str) -> Result<Self> {
        let cfg: Self = if path.extension().is_some_and(|e| e == "toml") {
            toml::from_str(text).map_err(|e| Error::config(format!("{}: {e}", path.display())))?
        } else {
            serde_json::from_str(text)
                .map_err(|e| Error::config(format!("{}: {e}", path.display())))?
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_str_for(path, &fs::read_to_string(path)?)
    }

    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        self.loss.validate()?;
        self.fusion.validate()?;
        self.metric.validate()?;
        self.optimizer.validate()?;
        if self.window_stride == Some(0) {
            return Err(Error::config("window_stride must be positive"));
        }
        Ok(())
    }

    pub fn stride(&self) -> usize {
        self.window_stride
            .unwrap_or((self.model.temporal_len / 2).max(1))
    }
}
