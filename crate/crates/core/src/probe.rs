//! Linear probing on a frozen backbone: feature caching, softmax
//! cross-entropy, AdamW with decoupled weight decay, and a cosine schedule
//! with linear warmup.

use std::collections::{HashMap, HashSet};
use std::fs;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use log::{info, warn};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::backbone::{argmax, classify, FeatureVector, ModelConfig, VideoSwin, HEAD_BIAS, HEAD_WEIGHT};
use crate::clip::{sample_clip, ClipError, ClipSpec, Manifest};
use crate::error::ModelError;
use crate::tensor::Tensor;
use crate::weights_io::{self, NamedWeights, SwptError};

pub const FEATURE_PREFIX: &str = "feat/";

#[derive(Debug, Error)]
pub enum ProbeError {
    #[error("duplicate video id {0:?}")]
    DuplicateId(String),
    #[error("video {id:?}: feature length {found}, store holds length {expected}")]
    FeatureDim { id: String, expected: usize, found: usize },
    #[error("{skipped} of {total} videos failed during extraction (more than 1%); first failure: {first}")]
    TooManySkipped { skipped: usize, total: usize, first: String },
    #[error("feature store is empty")]
    EmptyStore,
    #[error("video {id:?}: label {label:?} is not among the {classes} head classes")]
    UnknownLabel { id: String, label: String, classes: usize },
    #[error("label index {label} out of range for {classes} classes")]
    LabelOutOfRange { label: usize, classes: usize },
    #[error("non-finite gradient at optimizer step {step}")]
    NonFiniteGradient { step: u64 },
    #[error("invalid training config: {0}")]
    InvalidConfig(String),
    #[error("{path}:{line}: {message}")]
    Sidecar { path: PathBuf, line: usize, message: String },
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error(transparent)]
    Swpt(#[from] SwptError),
    #[error(transparent)]
    Clip(#[from] ClipError),
    #[error(transparent)]
    Model(#[from] ModelError),
}

pub type ProbeResult<T> = Result<T, ProbeError>;

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> ProbeError + '_ {
    move |source| ProbeError::Io {
        path: path.to_path_buf(),
        source,
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FeatureRecord {
    pub id: String,
    pub features: FeatureVector,
    pub labels: Vec<String>,
}

#[derive(Debug, Serialize, Deserialize)]
struct SidecarLine {
    id: String,
    labels: Vec<String>,
}

/// Cached backbone features, one per video, in insertion order.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct FeatureStore {
    records: Vec<FeatureRecord>,
    ids: HashSet<String>,
    feature_dim: usize,
}

impl FeatureStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, record: FeatureRecord) -> ProbeResult<()> {
        if self.ids.contains(&record.id) {
            return Err(ProbeError::DuplicateId(record.id));
        }
        if self.records.is_empty() {
            self.feature_dim = record.features.len();
        } else if record.features.len() != self.feature_dim {
            return Err(ProbeError::FeatureDim {
                id: record.id,
                expected: self.feature_dim,
                found: record.features.len(),
            });
        }
        self.ids.insert(record.id.clone());
        self.records.push(record);
        Ok(())
    }

    pub fn records(&self) -> &[FeatureRecord] {
        &self.records
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    /// Zero for an empty store.
    pub fn feature_dim(&self) -> usize {
        self.feature_dim
    }

    pub fn get(&self, id: &str) -> Option<&FeatureRecord> {
        self.records.iter().find(|r| r.id == id)
    }

    /// Sorted set of every label in the store.
    pub fn label_vocabulary(&self) -> Vec<String> {
        let mut v: Vec<String> = self.records.iter().flat_map(|r| r.labels.iter().cloned()).collect();
        v.sort();
        v.dedup();
        v
    }

    pub fn to_weights(&self) -> NamedWeights {
        let mut w = NamedWeights::new();
        for r in &self.records {
            w.insert(format!("{FEATURE_PREFIX}{}", r.id), r.features.tensor().clone())
                .expect("ids are unique");
        }
        w
    }

    /// Writes the SWPT cache and its JSON-lines `{"id","labels"}` sidecar.
    pub fn save(&self, features: &Path, sidecar: &Path) -> ProbeResult<()> {
        weights_io::save_file(&self.to_weights(), features)?;
        let file = fs::File::create(sidecar).map_err(io_err(sidecar))?;
        let mut out = BufWriter::new(file);
        for r in &self.records {
            let line = serde_json::to_string(&SidecarLine {
                id: r.id.clone(),
                labels: r.labels.clone(),
            })
            .expect("serializable");
            writeln!(out, "{line}").map_err(io_err(sidecar))?;
        }
        out.flush().map_err(io_err(sidecar))
    }

    pub fn load(features: &Path, sidecar: &Path) -> ProbeResult<Self> {
        let weights = weights_io::load_file(features)?;
        let text = fs::read_to_string(sidecar).map_err(io_err(sidecar))?;
        let mut store = Self::new();
        let mut lines = 0;
        for (i, line) in text.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let err = |message: String| ProbeError::Sidecar {
                path: sidecar.to_path_buf(),
                line: i + 1,
                message,
            };
            let entry: SidecarLine = serde_json::from_str(line).map_err(|e| err(e.to_string()))?;
            let tensor = weights
                .get(&format!("{FEATURE_PREFIX}{}", entry.id))
                .ok_or_else(|| err(format!("no cached features for {:?}", entry.id)))?;
            store.push(FeatureRecord {
                id: entry.id,
                features: FeatureVector::new(tensor.clone())?,
                labels: entry.labels,
            })?;
            lines += 1;
        }
        if lines != weights.len() {
            return Err(ProbeError::Sidecar {
                path: sidecar.to_path_buf(),
                line: 0,
                message: format!("{} cached tensors but {lines} sidecar entries", weights.len()),
            });
        }
        Ok(store)
    }
}

/// Extraction result; `skipped` lists `(id, reason)` for videos that failed.
#[derive(Debug)]
pub struct Extraction {
    pub store: FeatureStore,
    pub skipped: Vec<(String, String)>,
}

/// Runs the frozen backbone over every manifest video on `workers` threads.
/// Per-video failures are logged and skipped; more than 1% skipped is an error.
pub fn extract_features(
    manifest: &Manifest,
    weights: &NamedWeights,
    cfg: &ModelConfig,
    clip: ClipSpec,
    workers: usize,
) -> ProbeResult<Extraction> {
    let mut seen = HashSet::new();
    for a in &manifest.assets {
        if !seen.insert(a.id.as_str()) {
            return Err(ProbeError::DuplicateId(a.id.clone()));
        }
    }
    let model = VideoSwin::new(weights, cfg)?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers)
        .build()
        .map_err(|e| ProbeError::InvalidConfig(format!("thread pool: {e}")))?;
    let results: Vec<_> = pool.install(|| {
        manifest
            .assets
            .par_iter()
            .map(|asset| -> Result<FeatureVector, String> {
                let clip = sample_clip(asset, clip).map_err(|e| e.to_string())?;
                model.forward_features(&clip).map_err(|e| e.to_string())
            })
            .collect()
    });
    let mut store = FeatureStore::new();
    let mut skipped = Vec::new();
    for (asset, result) in manifest.assets.iter().zip(results) {
        match result {
            Ok(features) => store.push(FeatureRecord {
                id: asset.id.clone(),
                features,
                labels: asset.labels.clone(),
            })?,
            Err(reason) => {
                warn!("skipping video {:?}: {reason}", asset.id);
                skipped.push((asset.id.clone(), reason));
            }
        }
    }
    let total = manifest.len();
    if skipped.len() * 100 > total {
        return Err(ProbeError::TooManySkipped {
            skipped: skipped.len(),
            total,
            first: format!("{}: {}", skipped[0].0, skipped[0].1),
        });
    }
    info!("extracted {} feature vectors ({} skipped)", store.len(), skipped.len());
    Ok(Extraction { store, skipped })
}

/// Extracts features and persists them (`features` SWPT + `sidecar` JSONL).
pub fn extract_and_cache(
    manifest: &Manifest,
    weights: &NamedWeights,
    cfg: &ModelConfig,
    clip: ClipSpec,
    workers: usize,
    features: &Path,
    sidecar: &Path,
) -> ProbeResult<Extraction> {
    let extraction = extract_features(manifest, weights, cfg, clip, workers)?;
    extraction.store.save(features, sidecar)?;
    Ok(extraction)
}

fn default_epochs() -> usize {
    30
}
fn default_batch_size() -> usize {
    64
}
fn default_warmup_epochs() -> f64 {
    2.5
}
fn default_peak_lr() -> f64 {
    1e-3
}
fn default_weight_decay() -> f64 {
    0.05
}
fn default_betas() -> (f64, f64) {
    (0.9, 0.999)
}
fn default_eps() -> f64 {
    1e-8
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    #[serde(default = "default_epochs")]
    pub epochs: usize,
    #[serde(default = "default_batch_size")]
    pub batch_size: usize,
    #[serde(default = "default_warmup_epochs")]
    pub warmup_epochs: f64,
    #[serde(default = "default_peak_lr")]
    pub peak_lr: f64,
    #[serde(default = "default_weight_decay")]
    pub weight_decay: f64,
    #[serde(default = "default_betas")]
    pub betas: (f64, f64),
    #[serde(default = "default_eps")]
    pub eps: f64,
    #[serde(default)]
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: default_epochs(),
            batch_size: default_batch_size(),
            warmup_epochs: default_warmup_epochs(),
            peak_lr: default_peak_lr(),
            weight_decay: default_weight_decay(),
            betas: default_betas(),
            eps: default_eps(),
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> ProbeResult<()> {
        let bad = |m: String| Err(ProbeError::InvalidConfig(m));
        if self.epochs == 0 || self.batch_size == 0 {
            return bad("epochs and batch_size must be >= 1".into());
        }
        if !(self.warmup_epochs >= 0.0 && self.warmup_epochs < self.epochs as f64) {
            return bad(format!("warmup_epochs {} must lie in [0, epochs)", self.warmup_epochs));
        }
        if !(self.peak_lr > 0.0 && self.peak_lr.is_finite()) {
            return bad(format!("peak_lr {} must be positive", self.peak_lr));
        }
        if !(self.weight_decay >= 0.0 && self.weight_decay.is_finite()) {
            return bad(format!("weight_decay {} must be non-negative", self.weight_decay));
        }
        let (b1, b2) = self.betas;
        if !((0.0..1.0).contains(&b1) && (0.0..1.0).contains(&b2)) {
            return bad(format!("betas {:?} must lie in [0, 1)", self.betas));
        }
        if !(self.eps > 0.0) {
            return bad("eps must be positive".into());
        }
        Ok(())
    }

    pub fn steps_per_epoch(&self, samples: usize) -> usize {
        samples.div_ceil(self.batch_size)
    }
}

/// Learning rate for optimizer update `step` (0-based): linear from 0 to the
/// peak over `warmup_epochs * steps_per_epoch` steps, then half-cosine down to
/// 0 at `epochs * steps_per_epoch`.
pub fn lr_at(step: usize, steps_per_epoch: usize, cfg: &TrainConfig) -> f64 {
    let step = step as f64;
    let warmup = cfg.warmup_epochs * steps_per_epoch as f64;
    let total = (cfg.epochs * steps_per_epoch) as f64;
    if step < warmup {
        return cfg.peak_lr * step / warmup;
    }
    let progress = ((step - warmup) / (total - warmup)).min(1.0);
    cfg.peak_lr * 0.5 * (1.0 + (std::f64::consts::PI * progress).cos())
}

/// Replaceable final dense layer plus its AdamW state.
#[derive(Debug, Clone, PartialEq)]
pub struct HeadParams {
    pub weight: Tensor,
    pub bias: Tensor,
    pub m_weight: Tensor,
    pub v_weight: Tensor,
    pub m_bias: Tensor,
    pub v_bias: Tensor,
    /// Completed optimizer steps.
    pub step: u64,
}

impl HeadParams {
    pub fn zeros(dim: usize, classes: usize) -> Self {
        let z = |s: Vec<usize>| Tensor::zeros(s).expect("dim, classes >= 1");
        Self {
            weight: z(vec![dim, classes]),
            bias: z(vec![classes]),
            m_weight: z(vec![dim, classes]),
            v_weight: z(vec![dim, classes]),
            m_bias: z(vec![classes]),
            v_bias: z(vec![classes]),
            step: 0,
        }
    }

    /// Weights ~ N(0, 0.01^2), zero bias.
    pub fn init(dim: usize, classes: usize, rng: &mut ChaCha8Rng) -> Self {
        let normal = Normal::new(0.0f32, 0.01).expect("valid std");
        let mut head = Self::zeros(dim, classes);
        head.weight = Tensor::from_fn(vec![dim, classes], |_| normal.sample(rng)).expect("dim, classes >= 1");
        head
    }

    pub fn from_parts(weight: Tensor, bias: Tensor) -> ProbeResult<Self> {
        let (d, k) = match weight.shape() {
            &[d, k] if bias.shape() == [k] => (d, k),
            _ => {
                return Err(ModelError::Shape {
                    what: "classification head",
                    expected: vec![weight.shape().first().copied().unwrap_or(0), bias.len()],
                    found: weight.shape().to_vec(),
                }
                .into())
            }
        };
        Ok(Self {
            weight,
            bias,
            ..Self::zeros(d, k)
        })
    }

    pub fn dim(&self) -> usize {
        self.weight.shape()[0]
    }

    pub fn classes(&self) -> usize {
        self.bias.len()
    }

    pub fn to_weights(&self) -> NamedWeights {
        let mut w = NamedWeights::new();
        w.insert(HEAD_WEIGHT, self.weight.clone()).expect("unique");
        w.insert(HEAD_BIAS, self.bias.clone()).expect("unique");
        w
    }

    pub fn from_weights(w: &NamedWeights) -> ProbeResult<Self> {
        let get = |p: &str| {
            w.get(p)
                .cloned()
                .ok_or_else(|| ModelError::MissingParameter { path: p.to_string() })
        };
        Self::from_parts(get(HEAD_WEIGHT)?, get(HEAD_BIAS)?)
    }

    pub fn predict(&self, features: &FeatureVector) -> ProbeResult<usize> {
        Ok(argmax(classify(features, &self.weight, &self.bias)?.data()))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub weight: Tensor,
    pub bias: Tensor,
}

/// Mean softmax cross-entropy of `x` (`n x D`) against class indices `y`, with
/// gradients `dW = X^T (P - Y) / n` and `db = mean(P - Y)`. Accumulates in f64.
pub fn ce_loss_and_grad(head: &HeadParams, x: &Tensor, y: &[usize]) -> ProbeResult<(f64, Gradients)> {
    let (d, k) = (head.dim(), head.classes());
    let n = y.len();
    if n == 0 || x.shape() != [n, d] {
        return Err(ModelError::Shape {
            what: "probe batch",
            expected: vec![n.max(1), d],
            found: x.shape().to_vec(),
        }
        .into());
    }
    if let Some(&label) = y.iter().find(|&&l| l >= k) {
        return Err(ProbeError::LabelOutOfRange { label, classes: k });
    }
    let w = head.weight.data();
    let b = head.bias.data();
    let mut loss = 0f64;
    let mut dw = vec![0f64; d * k];
    let mut db = vec![0f64; k];
    let mut z = vec![0f64; k];
    for (row, &label) in x.data().chunks(d).zip(y) {
        for (j, zj) in z.iter_mut().enumerate() {
            *zj = b[j] as f64 + row.iter().enumerate().map(|(i, &xi)| xi as f64 * w[i * k + j] as f64).sum::<f64>();
        }
        let max = z.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let sum: f64 = z.iter().map(|&v| (v - max).exp()).sum();
        let log_norm = max + sum.ln();
        loss += log_norm - z[label];
        for j in 0..k {
            let delta = (z[j] - log_norm).exp() - if j == label { 1.0 } else { 0.0 };
            db[j] += delta;
            for (i, &xi) in row.iter().enumerate() {
                dw[i * k + j] += xi as f64 * delta;
            }
        }
    }
    let inv = 1.0 / n as f64;
    let to_tensor = |v: Vec<f64>, shape: Vec<usize>| {
        Tensor::new(shape, v.into_iter().map(|g| (g * inv) as f32).collect()).expect("shape matches")
    };
    Ok((
        loss * inv,
        Gradients {
            weight: to_tensor(dw, vec![d, k]),
            bias: to_tensor(db, vec![k]),
        },
    ))
}

/// One AdamW update with decoupled weight decay on the weight matrix only.
pub fn adamw_step(head: &mut HeadParams, grads: &Gradients, lr: f64, cfg: &TrainConfig) -> ProbeResult<()> {
    if grads.weight.shape() != head.weight.shape() || grads.bias.shape() != head.bias.shape() {
        return Err(ModelError::Shape {
            what: "head gradient",
            expected: head.weight.shape().to_vec(),
            found: grads.weight.shape().to_vec(),
        }
        .into());
    }
    let t = head.step + 1;
    if !(grads.weight.is_finite() && grads.bias.is_finite()) {
        return Err(ProbeError::NonFiniteGradient { step: t });
    }
    let (b1, b2) = cfg.betas;
    let bc1 = 1.0 - b1.powi(t as i32);
    let bc2 = 1.0 - b2.powi(t as i32);
    let update = |theta: &mut [f32], m: &mut [f32], v: &mut [f32], g: &[f32], decay: f64| {
        for i in 0..theta.len() {
            let gi = g[i] as f64;
            let mi = b1 * m[i] as f64 + (1.0 - b1) * gi;
            let vi = b2 * v[i] as f64 + (1.0 - b2) * gi * gi;
            m[i] = mi as f32;
            v[i] = vi as f32;
            let th = theta[i] as f64;
            let step = (mi / bc1) / ((vi / bc2).sqrt() + cfg.eps) + decay * th;
            theta[i] = (th - lr * step) as f32;
        }
    };
    update(
        head.weight.data_mut(),
        head.m_weight.data_mut(),
        head.v_weight.data_mut(),
        grads.weight.data(),
        cfg.weight_decay,
    );
    update(
        head.bias.data_mut(),
        head.m_bias.data_mut(),
        head.v_bias.data_mut(),
        grads.bias.data(),
        0.0,
    );
    head.step = t;
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EpochMetrics {
    /// 1-based.
    pub epoch: usize,
    /// Sample-weighted mean batch loss over the epoch.
    pub loss: f64,
    /// Fraction of training videos whose prediction is among their labels, after the epoch.
    pub train_acc: f64,
    /// Learning rate of the epoch's last update.
    pub lr: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainOutcome {
    pub head: HeadParams,
    pub log: Vec<EpochMetrics>,
}

/// Trains a fresh head on cached features. Each video's first label is its
/// training target; every label must appear in `classes`. Deterministic in
/// `cfg.seed`.
pub fn train_probe(store: &FeatureStore, classes: &[String], cfg: &TrainConfig) -> ProbeResult<TrainOutcome> {
    cfg.validate()?;
    if store.is_empty() {
        return Err(ProbeError::EmptyStore);
    }
    if classes.is_empty() {
        return Err(ProbeError::InvalidConfig("class list is empty".into()));
    }
    let index: HashMap<&str, usize> = classes.iter().enumerate().map(|(i, c)| (c.as_str(), i)).collect();
    if index.len() != classes.len() {
        return Err(ProbeError::InvalidConfig("class list has duplicates".into()));
    }
    let mut targets = Vec::with_capacity(store.len());
    let mut label_sets = Vec::with_capacity(store.len());
    for r in store.records() {
        let ids = r
            .labels
            .iter()
            .map(|l| {
                index.get(l.as_str()).copied().ok_or_else(|| ProbeError::UnknownLabel {
                    id: r.id.clone(),
                    label: l.clone(),
                    classes: classes.len(),
                })
            })
            .collect::<ProbeResult<Vec<_>>>()?;
        targets.push(*ids.first().ok_or_else(|| ProbeError::InvalidConfig(format!("video {:?} has no labels", r.id)))?);
        label_sets.push(ids);
    }

    let n = store.len();
    let d = store.feature_dim();
    let spe = cfg.steps_per_epoch(n);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut head = HeadParams::init(d, classes.len(), &mut rng);
    let mut order: Vec<usize> = (0..n).collect();
    let mut log = Vec::with_capacity(cfg.epochs);
    let mut step = 0;
    let mut batch = Vec::with_capacity(cfg.batch_size * d);
    for epoch in 1..=cfg.epochs {
        order.shuffle(&mut rng);
        let mut loss_sum = 0.0;
        let mut lr = 0.0;
        for chunk in order.chunks(cfg.batch_size) {
            batch.clear();
            for &i in chunk {
                batch.extend_from_slice(store.records()[i].features.values());
            }
            let x = Tensor::new(vec![chunk.len(), d], batch.clone()).map_err(ModelError::from)?;
            let y: Vec<usize> = chunk.iter().map(|&i| targets[i]).collect();
            let (loss, grads) = ce_loss_and_grad(&head, &x, &y)?;
            lr = lr_at(step, spe, cfg);
            adamw_step(&mut head, &grads, lr, cfg)?;
            loss_sum += loss * chunk.len() as f64;
            step += 1;
        }
        let mut correct = 0;
        for (r, labels) in store.records().iter().zip(&label_sets) {
            if labels.contains(&head.predict(&r.features)?) {
                correct += 1;
            }
        }
        let metrics = EpochMetrics {
            epoch,
            loss: loss_sum / n as f64,
            train_acc: correct as f64 / n as f64,
            lr,
        };
        info!(
            "epoch {epoch}: loss {:.4} train_acc {:.3} lr {:.3e}",
            metrics.loss, metrics.train_acc, metrics.lr
        );
        log.push(metrics);
    }
    Ok(TrainOutcome { head, log })
}

/// CSV with header `epoch,loss,train_acc,lr`.
pub fn train_log_csv(log: &[EpochMetrics]) -> String {
    let mut s = String::from("epoch,loss,train_acc,lr\n");
    for m in log {
        s.push_str(&format!("{},{},{},{}\n", m.epoch, m.loss, m.train_acc, m.lr));
    }
    s
}
