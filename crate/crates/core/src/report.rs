//! CSV tables and SVG charts for the analysis stage.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::analysis::{
    accuracy_decay_curve, bin_by_duration, bin_by_resolution, class_filtered_view, class_frequency_correlation,
    confusion_submatrix, merge_whatif, overall_accuracy, per_class_accuracy, AnalysisError, AnalysisResult, BinReport,
    MergeOutcome, PredictionRecord, DURATION_BIN_S, RESOLUTION_BIN_PX,
};

/// Classes shown in the default confusion submatrix (highest support first).
pub const DEFAULT_CONFUSION_CLASSES: usize = 10;

fn default_duration_bin() -> f64 {
    DURATION_BIN_S
}
fn default_resolution_bin() -> f64 {
    RESOLUTION_BIN_PX
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportOptions {
    #[serde(default = "default_duration_bin")]
    pub duration_bin_s: f64,
    #[serde(default = "default_resolution_bin")]
    pub resolution_bin_px: f64,
    /// Rows of the confusion submatrix; defaults to the best-supported classes.
    #[serde(default)]
    pub confusion_classes: Option<Vec<String>>,
    #[serde(default)]
    pub merge_groups: Vec<Vec<String>>,
    /// Keep only records with a true label starting with this prefix.
    #[serde(default)]
    pub class_filter: Option<String>,
}

impl Default for ReportOptions {
    fn default() -> Self {
        Self {
            duration_bin_s: DURATION_BIN_S,
            resolution_bin_px: RESOLUTION_BIN_PX,
            confusion_classes: None,
            merge_groups: Vec::new(),
            class_filter: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ReportSummary {
    pub records: usize,
    pub class_filter: Option<String>,
    pub accuracy: Option<f64>,
    pub classes: usize,
    pub duration_spearman: Option<f64>,
    pub resolution_spearman: Option<f64>,
    pub class_frequency_spearman: Option<f64>,
    pub merge: Option<MergeOutcome>,
    pub files: Vec<String>,
}

struct Writer<'a> {
    dir: &'a Path,
    files: Vec<String>,
}

impl Writer<'_> {
    fn write(&mut self, name: &str, body: &str) -> AnalysisResult<()> {
        let path = self.dir.join(name);
        fs::write(&path, body).map_err(|source| AnalysisError::Io { path, source })?;
        self.files.push(name.to_string());
        Ok(())
    }
}

fn csv_field(s: &str) -> String {
    if s.contains([',', '"', '\n']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}

fn opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

/// Runs every analysis on `records` and writes CSV/SVG reports plus
/// `summary.json` into `dir` (created if missing).
pub fn write_reports(records: &[PredictionRecord], dir: &Path, opts: &ReportOptions) -> AnalysisResult<ReportSummary> {
    fs::create_dir_all(dir).map_err(|source| AnalysisError::Io {
        path: dir.to_path_buf(),
        source,
    })?;
    let filtered;
    let records = match &opts.class_filter {
        Some(prefix) => {
            filtered = class_filtered_view(records, |c| c.starts_with(prefix.as_str()));
            &filtered[..]
        }
        None => records,
    };
    let mut out = Writer { dir, files: Vec::new() };

    let per_class = per_class_accuracy(records);
    let mut csv = String::from("class,support,correct,accuracy\n");
    for (c, a) in &per_class {
        writeln!(csv, "{},{},{},{}", csv_field(c), a.support, a.correct, a.accuracy).unwrap();
    }
    out.write("per_class_accuracy.csv", &csv)?;

    let curve = accuracy_decay_curve(&per_class);
    let mut csv = String::from("rank,class,accuracy\n");
    for p in &curve {
        writeln!(csv, "{},{},{}", p.rank, csv_field(&p.class), p.accuracy).unwrap();
    }
    out.write("accuracy_decay.csv", &csv)?;
    let points: Vec<(f64, f64)> = curve.iter().map(|p| (p.rank as f64, p.accuracy)).collect();
    out.write(
        "accuracy_decay.svg",
        &line_chart("Per-class accuracy, best to worst", "class rank", "accuracy", &points),
    )?;

    let duration = bin_by_duration(records, opts.duration_bin_s)?;
    out.write("duration_bins.csv", &bins_csv(&duration))?;
    out.write("duration_bins.svg", &bins_chart(&duration, "Accuracy by duration", "duration (s)"))?;
    let resolution = bin_by_resolution(records, opts.resolution_bin_px)?;
    out.write("resolution_bins.csv", &bins_csv(&resolution))?;
    out.write("resolution_bins.svg", &bins_chart(&resolution, "Accuracy by resolution", "pixels per frame"))?;

    let freq = class_frequency_correlation(&per_class)?;
    let points: Vec<(f64, f64)> = per_class.values().map(|a| (a.support as f64, a.accuracy)).collect();
    out.write(
        "class_frequency.svg",
        &scatter_chart("Class accuracy vs. samples", "samples", "accuracy", &points),
    )?;

    let confusion_classes = match &opts.confusion_classes {
        Some(c) => c.clone(),
        None => {
            let mut by_support: Vec<_> = per_class.iter().collect();
            by_support.sort_by(|a, b| b.1.support.cmp(&a.1.support).then_with(|| a.0.cmp(b.0)));
            by_support
                .into_iter()
                .take(DEFAULT_CONFUSION_CLASSES)
                .map(|(c, _)| c.clone())
                .collect()
        }
    };
    if !confusion_classes.is_empty() {
        let m = confusion_submatrix(records, &confusion_classes)?;
        let mut csv = format!(
            "true\\predicted,{}\n",
            m.columns().map(csv_field).collect::<Vec<_>>().join(",")
        );
        for (c, row) in m.classes.iter().zip(&m.counts) {
            let cells: Vec<String> = row.iter().map(|n| n.to_string()).collect();
            writeln!(csv, "{},{}", csv_field(c), cells.join(",")).unwrap();
        }
        out.write("confusion.csv", &csv)?;
        let cols: Vec<&str> = m.columns().collect();
        out.write("confusion.svg", &heatmap("Confusion submatrix", &m.classes, &cols, &m.counts))?;
    }

    let merge = if opts.merge_groups.is_empty() {
        None
    } else {
        let m = merge_whatif(records, &opts.merge_groups)?;
        out.write("merge_whatif.json", &serde_json::to_string_pretty(&m).expect("serializable"))?;
        Some(m)
    };

    out.files.push("summary.json".into());
    let summary = ReportSummary {
        records: records.len(),
        class_filter: opts.class_filter.clone(),
        accuracy: overall_accuracy(records),
        classes: per_class.len(),
        duration_spearman: duration.spearman,
        resolution_spearman: resolution.spearman,
        class_frequency_spearman: freq,
        merge,
        files: out.files.clone(),
    };
    let path: PathBuf = dir.join("summary.json");
    fs::write(&path, serde_json::to_string_pretty(&summary).expect("serializable"))
        .map_err(|source| AnalysisError::Io { path, source })?;
    Ok(summary)
}

fn bins_csv(r: &BinReport) -> String {
    let mut csv = String::from("index,lower,upper,count,correct,accuracy\n");
    for b in &r.bins {
        writeln!(csv, "{},{},{},{},{},{}", b.index, b.lower, b.upper, b.count, b.correct, opt(b.accuracy)).unwrap();
    }
    csv
}

const W: f64 = 640.0;
const H: f64 = 400.0;
const PAD: f64 = 56.0;

fn esc(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;").replace('"', "&quot;")
}

fn frame(title: &str, xlabel: &str, ylabel: &str) -> String {
    let mut s = format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{W}\" height=\"{H}\" viewBox=\"0 0 {W} {H}\" font-family=\"sans-serif\" font-size=\"12\">\n\
         <rect width=\"{W}\" height=\"{H}\" fill=\"white\"/>\n\
         <text x=\"{}\" y=\"24\" text-anchor=\"middle\" font-size=\"15\">{}</text>\n\
         <text x=\"{}\" y=\"{}\" text-anchor=\"middle\">{}</text>\n\
         <text x=\"16\" y=\"{}\" text-anchor=\"middle\" transform=\"rotate(-90 16 {})\">{}</text>\n",
        W / 2.0,
        esc(title),
        W / 2.0,
        H - 12.0,
        esc(xlabel),
        H / 2.0,
        H / 2.0,
        esc(ylabel)
    );
    let (x0, y0, x1, y1) = (PAD, H - PAD, W - PAD / 2.0, PAD);
    writeln!(s, "<line x1=\"{x0}\" y1=\"{y0}\" x2=\"{x1}\" y2=\"{y0}\" stroke=\"black\"/>").unwrap();
    writeln!(s, "<line x1=\"{x0}\" y1=\"{y0}\" x2=\"{x0}\" y2=\"{y1}\" stroke=\"black\"/>").unwrap();
    s
}

/// Maps data to plot coordinates; y is a fraction in [0, 1].
fn plot_x(x: f64, lo: f64, hi: f64) -> f64 {
    let span = if hi > lo { hi - lo } else { 1.0 };
    PAD + (x - lo) / span * (W - 1.5 * PAD)
}

fn plot_y(y: f64) -> f64 {
    H - PAD - y.clamp(0.0, 1.0) * (H - 2.0 * PAD)
}

fn y_ticks(s: &mut String) {
    for i in 0..=4 {
        let v = i as f64 / 4.0;
        let y = plot_y(v);
        writeln!(s, "<text x=\"{}\" y=\"{}\" text-anchor=\"end\">{v:.2}</text>", PAD - 6.0, y + 4.0).unwrap();
        writeln!(s, "<line x1=\"{PAD}\" y1=\"{y}\" x2=\"{}\" y2=\"{y}\" stroke=\"#ddd\"/>", W - PAD / 2.0).unwrap();
    }
}

fn x_range(points: &[(f64, f64)]) -> (f64, f64) {
    let lo = points.iter().map(|p| p.0).fold(f64::INFINITY, f64::min);
    let hi = points.iter().map(|p| p.0).fold(f64::NEG_INFINITY, f64::max);
    if lo.is_finite() { (lo, hi) } else { (0.0, 1.0) }
}

fn line_chart(title: &str, xlabel: &str, ylabel: &str, points: &[(f64, f64)]) -> String {
    let mut s = frame(title, xlabel, ylabel);
    y_ticks(&mut s);
    let (lo, hi) = x_range(points);
    let path: Vec<String> = points
        .iter()
        .map(|&(x, y)| format!("{:.2},{:.2}", plot_x(x, lo, hi), plot_y(y)))
        .collect();
    if !path.is_empty() {
        writeln!(s, "<polyline fill=\"none\" stroke=\"steelblue\" stroke-width=\"2\" points=\"{}\"/>", path.join(" ")).unwrap();
    }
    s.push_str("</svg>\n");
    s
}

fn scatter_chart(title: &str, xlabel: &str, ylabel: &str, points: &[(f64, f64)]) -> String {
    let mut s = frame(title, xlabel, ylabel);
    y_ticks(&mut s);
    let (lo, hi) = x_range(points);
    for &(x, y) in points {
        writeln!(s, "<circle cx=\"{:.2}\" cy=\"{:.2}\" r=\"3\" fill=\"steelblue\"/>", plot_x(x, lo, hi), plot_y(y)).unwrap();
    }
    writeln!(s, "<text x=\"{PAD}\" y=\"{}\">{lo}</text>", H - PAD + 16.0).unwrap();
    writeln!(s, "<text x=\"{}\" y=\"{}\" text-anchor=\"end\">{hi}</text>", W - PAD / 2.0, H - PAD + 16.0).unwrap();
    s.push_str("</svg>\n");
    s
}

fn bins_chart(r: &BinReport, title: &str, xlabel: &str) -> String {
    let title = match r.spearman {
        Some(rho) => format!("{title} (Spearman {rho:.3})"),
        None => format!("{title} (Spearman not computable)"),
    };
    let mut s = frame(&title, xlabel, "accuracy");
    y_ticks(&mut s);
    let n = r.bins.len().max(1) as f64;
    let slot = (W - 1.5 * PAD) / n;
    for (i, b) in r.bins.iter().enumerate() {
        let x = PAD + i as f64 * slot;
        if let Some(a) = b.accuracy {
            let y = plot_y(a);
            writeln!(
                s,
                "<rect x=\"{:.2}\" y=\"{y:.2}\" width=\"{:.2}\" height=\"{:.2}\" fill=\"steelblue\"/>",
                x + slot * 0.1,
                slot * 0.8,
                H - PAD - y
            )
            .unwrap();
        }
        writeln!(
            s,
            "<text x=\"{:.2}\" y=\"{}\" text-anchor=\"middle\" font-size=\"10\">{} (n={})</text>",
            x + slot / 2.0,
            H - PAD + 14.0,
            b.lower,
            b.count
        )
        .unwrap();
    }
    s.push_str("</svg>\n");
    s
}

fn heatmap(title: &str, rows: &[String], cols: &[&str], counts: &[Vec<usize>]) -> String {
    let mut s = frame(title, "predicted", "true");
    let max = counts.iter().flatten().copied().max().unwrap_or(0).max(1) as f64;
    let cw = (W - 1.5 * PAD) / cols.len() as f64;
    let ch = (H - 2.0 * PAD) / rows.len().max(1) as f64;
    for (i, row) in counts.iter().enumerate() {
        for (j, &n) in row.iter().enumerate() {
            let shade = 255.0 - 200.0 * n as f64 / max;
            let (x, y) = (PAD + j as f64 * cw, PAD + i as f64 * ch);
            writeln!(
                s,
                "<rect x=\"{x:.2}\" y=\"{y:.2}\" width=\"{cw:.2}\" height=\"{ch:.2}\" fill=\"rgb({0:.0},{0:.0},255)\" stroke=\"white\"/>",
                shade
            )
            .unwrap();
            writeln!(s, "<text x=\"{:.2}\" y=\"{:.2}\" text-anchor=\"middle\">{n}</text>", x + cw / 2.0, y + ch / 2.0 + 4.0).unwrap();
        }
    }
    for (i, r) in rows.iter().enumerate() {
        writeln!(s, "<text x=\"{}\" y=\"{:.2}\" text-anchor=\"end\" font-size=\"9\">{}</text>", PAD - 4.0, PAD + (i as f64 + 0.5) * ch, esc(r)).unwrap();
    }
    for (j, c) in cols.iter().enumerate() {
        writeln!(s, "<text x=\"{:.2}\" y=\"{}\" text-anchor=\"middle\" font-size=\"9\">{}</text>", PAD + (j as f64 + 0.5) * cw, H - PAD + 14.0, esc(c)).unwrap();
    }
    s.push_str("</svg>\n");
    s
}
