//! Post-hoc error analysis over prediction logs: per-class accuracy, decay
//! curves, duration/resolution binning, rank correlation, confusion
//! submatrices and class-merge what-ifs.
//!
//! A record counts as correct when its prediction is any of its true labels.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fs;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const OTHER_COLUMN: &str = "other";
pub const DURATION_BIN_S: f64 = 15.0;
pub const RESOLUTION_BIN_PX: f64 = 10_000.0;

#[derive(Debug, Error)]
pub enum AnalysisError {
    #[error("series lengths differ: {0} vs {1}")]
    LengthMismatch(usize, usize),
    #[error("bin width must be positive, got {0}")]
    BinWidth(f64),
    #[error("unknown class {0:?}")]
    UnknownClass(String),
    #[error("class {0:?} appears in more than one merge group")]
    OverlappingGroups(String),
    #[error("class list is empty")]
    EmptyClassList,
    #[error("{path}:{line}: {message}")]
    Parse { path: PathBuf, line: usize, message: String },
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

pub type AnalysisResult<T> = Result<T, AnalysisError>;

/// One evaluated video, as logged by the evaluate stage.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictionRecord {
    #[serde(rename = "id")]
    pub video_id: String,
    pub true_labels: Vec<String>,
    pub predicted: String,
    pub duration_s: f64,
    pub width: u32,
    pub height: u32,
}

impl PredictionRecord {
    pub fn is_correct(&self) -> bool {
        self.true_labels.contains(&self.predicted)
    }

    pub fn pixels(&self) -> u64 {
        self.width as u64 * self.height as u64
    }

    fn validate(&self) -> Result<(), String> {
        if self.true_labels.is_empty() {
            return Err("true_labels is empty".into());
        }
        if !(self.duration_s > 0.0 && self.duration_s.is_finite()) {
            return Err(format!("duration_s {} must be positive", self.duration_s));
        }
        if self.width == 0 || self.height == 0 {
            return Err("width and height must be >= 1".into());
        }
        Ok(())
    }
}

pub fn load_predictions(path: &Path) -> AnalysisResult<Vec<PredictionRecord>> {
    let text = fs::read_to_string(path).map_err(|source| AnalysisError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let err = |message: String| AnalysisError::Parse {
            path: path.to_path_buf(),
            line: i + 1,
            message,
        };
        let r: PredictionRecord = serde_json::from_str(line).map_err(|e| err(e.to_string()))?;
        r.validate().map_err(err)?;
        out.push(r);
    }
    Ok(out)
}

pub fn save_predictions(path: &Path, records: &[PredictionRecord]) -> AnalysisResult<()> {
    let io = |source| AnalysisError::Io {
        path: path.to_path_buf(),
        source,
    };
    let mut w = BufWriter::new(fs::File::create(path).map_err(io)?);
    for r in records {
        writeln!(w, "{}", serde_json::to_string(r).expect("serializable")).map_err(io)?;
    }
    w.flush().map_err(io)
}

/// Fraction of correct records; `None` when there are none.
pub fn overall_accuracy(records: &[PredictionRecord]) -> Option<f64> {
    (!records.is_empty()).then(|| records.iter().filter(|r| r.is_correct()).count() as f64 / records.len() as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ClassAccuracy {
    /// Records listing the class among their true labels.
    pub support: usize,
    pub correct: usize,
    pub accuracy: f64,
}

/// Accuracy per class; a multi-label record counts toward every one of its labels.
pub fn per_class_accuracy(records: &[PredictionRecord]) -> BTreeMap<String, ClassAccuracy> {
    let mut counts: BTreeMap<String, (usize, usize)> = BTreeMap::new();
    for r in records {
        let ok = r.is_correct() as usize;
        let unique: HashSet<&String> = r.true_labels.iter().collect();
        for label in unique {
            let e = counts.entry(label.clone()).or_default();
            e.0 += 1;
            e.1 += ok;
        }
    }
    counts
        .into_iter()
        .map(|(c, (support, correct))| {
            (
                c,
                ClassAccuracy {
                    support,
                    correct,
                    accuracy: correct as f64 / support as f64,
                },
            )
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DecayPoint {
    /// 1-based.
    pub rank: usize,
    pub class: String,
    pub accuracy: f64,
}

/// Classes from best to worst accuracy; ties by class name ascending.
pub fn accuracy_decay_curve(per_class: &BTreeMap<String, ClassAccuracy>) -> Vec<DecayPoint> {
    let mut v: Vec<(&String, f64)> = per_class.iter().map(|(c, a)| (c, a.accuracy)).collect();
    v.sort_by(|a, b| b.1.total_cmp(&a.1).then_with(|| a.0.cmp(b.0)));
    v.into_iter()
        .enumerate()
        .map(|(i, (c, accuracy))| DecayPoint {
            rank: i + 1,
            class: c.clone(),
            accuracy,
        })
        .collect()
}

/// 1-based ranks; tied values share the mean of the ranks they span.
pub fn average_ranks(xs: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..xs.len()).collect();
    order.sort_by(|&a, &b| xs[a].total_cmp(&xs[b]));
    let mut ranks = vec![0.0; xs.len()];
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && xs[order[j + 1]] == xs[order[i]] {
            j += 1;
        }
        let mean = (i + j) as f64 / 2.0 + 1.0;
        for &k in &order[i..=j] {
            ranks[k] = mean;
        }
        i = j + 1;
    }
    ranks
}

fn pearson(xs: &[f64], ys: &[f64]) -> Option<f64> {
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (x, y) in xs.iter().zip(ys) {
        sxy += (x - mx) * (y - my);
        sxx += (x - mx) * (x - mx);
        syy += (y - my) * (y - my);
    }
    (sxx > 0.0 && syy > 0.0).then(|| (sxy / (sxx * syy).sqrt()).clamp(-1.0, 1.0))
}

/// Spearman rank correlation with average ranks for ties. `Ok(None)` means
/// not computable: fewer than two points or a constant series.
pub fn spearman(xs: &[f64], ys: &[f64]) -> AnalysisResult<Option<f64>> {
    if xs.len() != ys.len() {
        return Err(AnalysisError::LengthMismatch(xs.len(), ys.len()));
    }
    if xs.len() < 2 {
        return Ok(None);
    }
    Ok(pearson(&average_ranks(xs), &average_ranks(ys)))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Bin {
    pub index: u64,
    /// Half-open `[lower, upper)`.
    pub lower: f64,
    pub upper: f64,
    pub count: usize,
    pub correct: usize,
    /// `None` for empty bins.
    pub accuracy: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BinReport {
    pub width: f64,
    /// Every bin from the lowest to the highest occupied one, empty ones included.
    pub bins: Vec<Bin>,
    /// Between bin index and accuracy over non-empty bins.
    pub spearman: Option<f64>,
}

impl BinReport {
    pub fn total(&self) -> usize {
        self.bins.iter().map(|b| b.count).sum()
    }
}

/// Bins records by `key(r) / width` floored (half-open intervals).
pub fn bin_by(records: &[PredictionRecord], width: f64, key: impl Fn(&PredictionRecord) -> f64) -> AnalysisResult<BinReport> {
    if !(width > 0.0 && width.is_finite()) {
        return Err(AnalysisError::BinWidth(width));
    }
    let mut tally: BTreeMap<u64, (usize, usize)> = BTreeMap::new();
    for r in records {
        let idx = (key(r) / width).floor().max(0.0) as u64;
        let e = tally.entry(idx).or_default();
        e.0 += 1;
        e.1 += r.is_correct() as usize;
    }
    let bins: Vec<Bin> = match (tally.keys().next(), tally.keys().next_back()) {
        (Some(&lo), Some(&hi)) => (lo..=hi)
            .map(|index| {
                let (count, correct) = tally.get(&index).copied().unwrap_or_default();
                Bin {
                    index,
                    lower: index as f64 * width,
                    upper: (index + 1) as f64 * width,
                    count,
                    correct,
                    accuracy: (count > 0).then(|| correct as f64 / count as f64),
                }
            })
            .collect(),
        _ => Vec::new(),
    };
    let (xs, ys): (Vec<f64>, Vec<f64>) = bins.iter().filter_map(|b| b.accuracy.map(|a| (b.index as f64, a))).unzip();
    let spearman = spearman(&xs, &ys)?;
    Ok(BinReport { width, bins, spearman })
}

pub fn bin_by_duration(records: &[PredictionRecord], width_s: f64) -> AnalysisResult<BinReport> {
    bin_by(records, width_s, |r| r.duration_s)
}

pub fn bin_by_resolution(records: &[PredictionRecord], width_px: f64) -> AnalysisResult<BinReport> {
    bin_by(records, width_px, |r| r.pixels() as f64)
}

/// Spearman between class support and class accuracy.
pub fn class_frequency_correlation(per_class: &BTreeMap<String, ClassAccuracy>) -> AnalysisResult<Option<f64>> {
    let (xs, ys): (Vec<f64>, Vec<f64>) = per_class.values().map(|a| (a.support as f64, a.accuracy)).unzip();
    spearman(&xs, &ys)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ConfusionMatrix {
    /// Row labels (true class).
    pub classes: Vec<String>,
    /// Row `i`, column `j < classes.len()`: true `classes[i]` predicted as
    /// `classes[j]`; the last column counts predictions outside the list.
    pub counts: Vec<Vec<usize>>,
}

impl ConfusionMatrix {
    pub fn columns(&self) -> impl Iterator<Item = &str> {
        self.classes.iter().map(String::as_str).chain([OTHER_COLUMN])
    }

    pub fn total(&self) -> usize {
        self.counts.iter().flatten().sum()
    }
}

/// Confusion counts restricted to `classes`. A record's row is the first of its
/// true labels that appears in `classes`; records with none are ignored.
pub fn confusion_submatrix(records: &[PredictionRecord], classes: &[String]) -> AnalysisResult<ConfusionMatrix> {
    if classes.is_empty() {
        return Err(AnalysisError::EmptyClassList);
    }
    let known: HashSet<&str> = records
        .iter()
        .flat_map(|r| r.true_labels.iter().chain([&r.predicted]))
        .map(String::as_str)
        .collect();
    if let Some(c) = classes.iter().find(|c| !known.contains(c.as_str())) {
        return Err(AnalysisError::UnknownClass(c.clone()));
    }
    let pos: HashMap<&str, usize> = classes.iter().enumerate().map(|(i, c)| (c.as_str(), i)).collect();
    let mut counts = vec![vec![0; classes.len() + 1]; classes.len()];
    for r in records {
        if let Some(row) = r.true_labels.iter().find_map(|l| pos.get(l.as_str())) {
            let col = pos.get(r.predicted.as_str()).copied().unwrap_or(classes.len());
            counts[*row][col] += 1;
        }
    }
    Ok(ConfusionMatrix {
        classes: classes.to_vec(),
        counts,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct MergeOutcome {
    pub before: f64,
    pub after: f64,
    /// `after - before`, as a fraction (0.01 is one percentage point).
    pub delta: f64,
}

/// Accuracy before and after collapsing each group into one class in both
/// ground truth and predictions. Groups must be disjoint.
pub fn merge_whatif(records: &[PredictionRecord], groups: &[Vec<String>]) -> AnalysisResult<MergeOutcome> {
    let mut canon: HashMap<&str, usize> = HashMap::new();
    for (g, group) in groups.iter().enumerate() {
        for c in group {
            if canon.insert(c.as_str(), g).is_some_and(|prev| prev != g) {
                return Err(AnalysisError::OverlappingGroups(c.clone()));
            }
        }
    }
    let before = overall_accuracy(records).unwrap_or(0.0);
    let merged_correct = records
        .iter()
        .filter(|r| {
            r.is_correct()
                || canon
                    .get(r.predicted.as_str())
                    .is_some_and(|g| r.true_labels.iter().any(|l| canon.get(l.as_str()) == Some(g)))
        })
        .count();
    let after = if records.is_empty() {
        0.0
    } else {
        merged_correct as f64 / records.len() as f64
    };
    Ok(MergeOutcome {
        before,
        after,
        delta: after - before,
    })
}

/// Records with at least one true label satisfying `keep`, in original order.
pub fn class_filtered_view(records: &[PredictionRecord], keep: impl Fn(&str) -> bool) -> Vec<PredictionRecord> {
    records
        .iter()
        .filter(|r| r.true_labels.iter().any(|l| keep(l)))
        .cloned()
        .collect()
}
