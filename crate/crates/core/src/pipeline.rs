//! The four pipeline stages over a run directory:
//!
//! ```text
//! <out>/features.swpt      extract   cached backbone features ("feat/<id>")
//! <out>/features.jsonl     extract   {"id","labels"} sidecar
//! <out>/head.swpt          train     head.weight / head.bias
//! <out>/classes.json       train     class names in head order
//! <out>/train_log.csv      train     epoch,loss,train_acc,lr
//! <out>/predictions.jsonl  evaluate  one prediction record per video
//! <out>/reports/           analyze   CSV + SVG reports, summary.json
//! ```

use std::collections::HashSet;
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};

use log::info;
use serde::Serialize;
use thiserror::Error;

use crate::analysis::{self, AnalysisError, PredictionRecord};
use crate::clip::{ClipError, Manifest};
use crate::config::RunConfig;
use crate::error::ModelError;
use crate::probe::{self, FeatureStore, HeadParams, ProbeError};
use crate::report::{write_reports, ReportOptions, ReportSummary};
use crate::weights_io::{self, SwptError};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stage {
    Extract,
    Train,
    Evaluate,
    Analyze,
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Stage::Extract => "extract-features",
            Stage::Train => "train-probe",
            Stage::Evaluate => "evaluate",
            Stage::Analyze => "analyze",
        })
    }
}

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("missing {path}: run the {producer} stage first")]
    MissingArtifact { path: PathBuf, producer: Stage },
    #[error("missing input {path}")]
    MissingInput { path: PathBuf },
    #[error("config error: {0}")]
    Config(String),
    #[error("head has {head} classes but {listed} class names are recorded")]
    HeadClasses { head: usize, listed: usize },
    #[error("manifest has {manifest} labels ({unknown} unknown to the head, e.g. {example:?}) but the head has {head} classes")]
    LabelMismatch {
        manifest: usize,
        head: usize,
        unknown: usize,
        example: String,
    },
    #[error("no cached features for video {0:?}; rerun extract-features with this manifest")]
    MissingFeatures(String),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error(transparent)]
    Probe(#[from] ProbeError),
    #[error(transparent)]
    Clip(#[from] ClipError),
    #[error(transparent)]
    Analysis(#[from] AnalysisError),
    #[error(transparent)]
    Swpt(#[from] SwptError),
    #[error(transparent)]
    Model(#[from] ModelError),
}

pub type PipelineResult<T> = Result<T, PipelineError>;

/// Artifact locations inside a run directory.
#[derive(Debug, Clone)]
pub struct RunDir {
    root: PathBuf,
}

impl RunDir {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        Self { root: root.into() }
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn features(&self) -> PathBuf {
        self.root.join("features.swpt")
    }
    pub fn feature_sidecar(&self) -> PathBuf {
        self.root.join("features.jsonl")
    }
    pub fn head(&self) -> PathBuf {
        self.root.join("head.swpt")
    }
    pub fn classes(&self) -> PathBuf {
        self.root.join("classes.json")
    }
    pub fn train_log(&self) -> PathBuf {
        self.root.join("train_log.csv")
    }
    pub fn predictions(&self) -> PathBuf {
        self.root.join("predictions.jsonl")
    }
    pub fn reports(&self) -> PathBuf {
        self.root.join("reports")
    }

    fn require(&self, path: PathBuf, producer: Stage) -> PipelineResult<PathBuf> {
        if path.is_file() {
            Ok(path)
        } else {
            Err(PipelineError::MissingArtifact { path, producer })
        }
    }

    fn create(&self) -> PipelineResult<()> {
        fs::create_dir_all(&self.root).map_err(|source| PipelineError::Io {
            path: self.root.clone(),
            source,
        })
    }
}

pub fn require_input(path: &Path) -> PipelineResult<()> {
    if path.is_file() {
        Ok(())
    } else {
        Err(PipelineError::MissingInput { path: path.to_path_buf() })
    }
}

fn write(path: PathBuf, body: &str) -> PipelineResult<()> {
    fs::write(&path, body).map_err(|source| PipelineError::Io { path, source })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ExtractSummary {
    pub videos: usize,
    pub extracted: usize,
    pub skipped: Vec<String>,
    pub feature_dim: usize,
}

pub fn run_extract(cfg: &RunConfig, manifest: &Path, weights: &Path, run: &RunDir) -> PipelineResult<ExtractSummary> {
    require_input(manifest)?;
    require_input(weights)?;
    let model = cfg.model.resolve().map_err(PipelineError::Config)?;
    let manifest = Manifest::load(manifest)?;
    let weights = weights_io::load_file(weights)?;
    run.create()?;
    let ex = probe::extract_and_cache(
        &manifest,
        &weights,
        &model,
        cfg.clip,
        cfg.workers(),
        &run.features(),
        &run.feature_sidecar(),
    )?;
    Ok(ExtractSummary {
        videos: manifest.len(),
        extracted: ex.store.len(),
        skipped: ex.skipped.into_iter().map(|(id, _)| id).collect(),
        feature_dim: model.feature_dim(),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TrainSummary {
    pub samples: usize,
    pub classes: usize,
    pub epochs: usize,
    pub final_loss: f64,
    pub final_train_acc: f64,
}

pub fn run_train(cfg: &RunConfig, run: &RunDir) -> PipelineResult<TrainSummary> {
    let store = FeatureStore::load(
        &run.require(run.features(), Stage::Extract)?,
        &run.require(run.feature_sidecar(), Stage::Extract)?,
    )?;
    let classes = store.label_vocabulary();
    let outcome = probe::train_probe(&store, &classes, &cfg.train)?;
    weights_io::save_file(&outcome.head.to_weights(), run.head())?;
    write(run.classes(), &serde_json::to_string_pretty(&classes).expect("serializable"))?;
    write(run.train_log(), &probe::train_log_csv(&outcome.log))?;
    let last = outcome.log.last().expect("epochs >= 1");
    Ok(TrainSummary {
        samples: store.len(),
        classes: classes.len(),
        epochs: outcome.log.len(),
        final_loss: last.loss,
        final_train_acc: last.train_acc,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EvalSummary {
    pub records: usize,
    pub accuracy: Option<f64>,
}

/// Predicts every manifest video from the cached features and logs the results.
pub fn run_evaluate(manifest: &Path, run: &RunDir) -> PipelineResult<EvalSummary> {
    require_input(manifest)?;
    let head_path = run.require(run.head(), Stage::Train)?;
    let classes_path = run.require(run.classes(), Stage::Train)?;
    let store = FeatureStore::load(
        &run.require(run.features(), Stage::Extract)?,
        &run.require(run.feature_sidecar(), Stage::Extract)?,
    )?;
    let head = HeadParams::from_weights(&weights_io::load_file(&head_path)?)?;
    let text = fs::read_to_string(&classes_path).map_err(|source| PipelineError::Io {
        path: classes_path.clone(),
        source,
    })?;
    let classes: Vec<String> =
        serde_json::from_str(&text).map_err(|e| PipelineError::Config(format!("{}: {e}", classes_path.display())))?;
    if head.classes() != classes.len() {
        return Err(PipelineError::HeadClasses {
            head: head.classes(),
            listed: classes.len(),
        });
    }
    let manifest = Manifest::load(manifest)?;
    let vocabulary = manifest.label_vocabulary();
    let known: HashSet<&String> = classes.iter().collect();
    let unknown: Vec<&String> = vocabulary.iter().filter(|l| !known.contains(l)).collect();
    if !unknown.is_empty() {
        return Err(PipelineError::LabelMismatch {
            manifest: vocabulary.len(),
            head: head.classes(),
            unknown: unknown.len(),
            example: unknown[0].clone(),
        });
    }
    let mut records = Vec::with_capacity(manifest.len());
    for asset in &manifest.assets {
        let feats = store
            .get(&asset.id)
            .ok_or_else(|| PipelineError::MissingFeatures(asset.id.clone()))?;
        let predicted = classes[head.predict(&feats.features)?].clone();
        records.push(PredictionRecord {
            video_id: asset.id.clone(),
            true_labels: asset.labels.clone(),
            predicted,
            duration_s: asset.duration_s(),
            width: asset.width,
            height: asset.height,
        });
    }
    analysis::save_predictions(&run.predictions(), &records)?;
    let accuracy = analysis::overall_accuracy(&records);
    info!("evaluated {} videos, accuracy {:?}", records.len(), accuracy);
    Ok(EvalSummary {
        records: records.len(),
        accuracy,
    })
}

pub fn run_analyze(opts: &ReportOptions, run: &RunDir) -> PipelineResult<ReportSummary> {
    let records = analysis::load_predictions(&run.require(run.predictions(), Stage::Evaluate)?)?;
    Ok(write_reports(&records, &run.reports(), opts)?)
}
