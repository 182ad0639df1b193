//! Run configuration: one JSON file, with the seed mandatory.
//!
//! ```json
//! {
//!   "seed": 7,
//!   "model": {"variant": "micro"},
//!   "clip": {"frames": 8, "stride": 2, "size": 16},
//!   "train": {"peak_lr": 0.05},
//!   "analysis": {"merge_groups": [["a", "b"]]}
//! }
//! ```
//!
//! `model` takes either a `variant` name or an explicit `config`.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::backbone::{ModelConfig, Variant};
use crate::clip::ClipSpec;
use crate::probe::TrainConfig;
use crate::report::ReportOptions;

pub const DEFAULT_NUM_CLASSES: usize = 400;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSection {
    #[serde(default)]
    pub variant: Option<String>,
    #[serde(default)]
    pub config: Option<ModelConfig>,
    /// Head size for a named variant; ignored with an explicit `config`.
    #[serde(default)]
    pub num_classes: Option<usize>,
}

impl Default for ModelSection {
    fn default() -> Self {
        Self {
            variant: Some(Variant::SwinT.name().into()),
            config: None,
            num_classes: None,
        }
    }
}

impl ModelSection {
    pub fn resolve(&self) -> Result<ModelConfig, String> {
        let cfg = match (&self.config, &self.variant) {
            (Some(_), Some(_)) => return Err("model: give either `variant` or `config`, not both".into()),
            (Some(c), None) => c.clone(),
            (None, Some(v)) => v
                .parse::<Variant>()
                .map_err(|e| e.to_string())?
                .config(self.num_classes.unwrap_or(DEFAULT_NUM_CLASSES)),
            (None, None) => return Err("model: `variant` or `config` required".into()),
        };
        cfg.validate().map_err(|e| e.to_string())?;
        Ok(cfg)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    #[serde(default)]
    pub model: ModelSection,
    #[serde(default)]
    pub clip: ClipSpec,
    #[serde(default)]
    pub train: TrainConfig,
    #[serde(default)]
    pub analysis: ReportOptions,
    /// Extraction threads; defaults to the number of cores.
    #[serde(default)]
    pub workers: Option<usize>,
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self, String> {
        let text = fs::read_to_string(path).map_err(|e| format!("{}: {e}", path.display()))?;
        Self::from_json(&text).map_err(|e| format!("{}: {e}", path.display()))
    }

    /// Parses and validates; the train seed is taken from the top-level seed.
    pub fn from_json(text: &str) -> Result<Self, String> {
        let mut cfg: RunConfig = serde_json::from_str(text).map_err(|e| e.to_string())?;
        cfg.set_seed(cfg.seed);
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn set_seed(&mut self, seed: u64) {
        self.seed = seed;
        self.train.seed = seed;
    }

    pub fn validate(&self) -> Result<(), String> {
        self.model.resolve()?;
        self.train.validate().map_err(|e| e.to_string())?;
        if self.clip.frames == 0 || self.clip.stride == 0 || self.clip.size == 0 {
            return Err(format!("clip: frames, stride and size must be >= 1, got {:?}", self.clip));
        }
        if self.workers == Some(0) {
            return Err("workers must be >= 1".into());
        }
        Ok(())
    }

    /// Configuration of the bundled synthetic desk run.
    pub fn desk(seed: u64) -> Self {
        let mut cfg = Self {
            seed,
            model: ModelSection {
                variant: Some(Variant::Micro.name().into()),
                config: None,
                num_classes: Some(4),
            },
            clip: ClipSpec {
                frames: 8,
                stride: 2,
                size: 16,
            },
            train: TrainConfig {
                peak_lr: 0.05,
                ..TrainConfig::default()
            },
            analysis: ReportOptions::default(),
            workers: None,
        };
        cfg.set_seed(seed);
        cfg
    }

    pub fn workers(&self) -> usize {
        self.workers
            .unwrap_or_else(|| std::thread::available_parallelism().map(|n| n.get()).unwrap_or(1))
    }
}
