//! Versioned JSON report, flat CSV and plain-text tables.

use std::fmt::Write as _;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::metrics::{BinaryMetrics, RocCurve, WithinSampleMetrics};
use super::svg;
use crate::detect::Thresholds;
use crate::error::{Error, Result};
use crate::vae::TrainingMeta;

pub const REPORT_SCHEMA: &str = "deepclean-report";
pub const REPORT_SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    Pca,
    Vae,
}

impl Method {
    pub fn name(self) -> &'static str {
        match self {
            Method::Pca => "pca",
            Method::Vae => "vae",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetSummary {
    pub sampling_rate: f64,
    pub window_len: usize,
    pub train: usize,
    pub validation: usize,
    pub test: usize,
    pub test_positives: usize,
    /// Fraction of the record marked by the preprocessing heuristics.
    pub marked_fraction: Option<f64>,
    /// Fraction covered by the reference annotation, when known.
    pub truth_fraction: Option<f64>,
}

/// Everything measured for one reconstructor at one latent dimension.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MethodResult {
    pub method: Method,
    pub latent_dim: usize,
    pub thresholds: Thresholds,
    pub metrics: BinaryMetrics,
    pub within: WithinSampleMetrics,
    pub roc: RocCurve,
    /// Per-window MSE over the training set.
    pub train_mse: Vec<f64>,
    /// Per-window MSE over the test set, in test-set order.
    pub test_mse: Vec<f64>,
    pub training: Option<TrainingMeta>,
}

/// A test window with one reconstruction, for overlay plots.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReconstructionExample {
    pub method: Method,
    pub latent_dim: usize,
    pub source_start: usize,
    pub label: bool,
    pub values: Vec<f64>,
    pub reconstruction: Vec<f64>,
    pub timepoint_mask: Vec<bool>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Report {
    pub schema: String,
    pub schema_version: u32,
    pub seed: u64,
    pub config_hash: String,
    pub dataset: DatasetSummary,
    pub test_labels: Vec<bool>,
    pub results: Vec<MethodResult>,
    pub examples: Vec<ReconstructionExample>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ReportFormat {
    Json,
    Csv,
    Svg,
}

impl std::str::FromStr for ReportFormat {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "json" => Ok(ReportFormat::Json),
            "csv" => Ok(ReportFormat::Csv),
            "svg" => Ok(ReportFormat::Svg),
            other => Err(Error::Config(format!("unknown report format {other:?}"))),
        }
    }
}

/// Column order of [`write_csv`].
pub const CSV_COLUMNS: [&str; 16] = [
    "method",
    "latent_dim",
    "accuracy",
    "sensitivity",
    "specificity",
    "auc",
    "tp",
    "fp",
    "tn",
    "fn",
    "sample_threshold",
    "window_threshold",
    "mean_prop_correct",
    "mean_prop_artefact_correct",
    "mean_prop_nonartefact_correct",
    "prop_fully_correct",
];

impl Report {
    pub fn new(seed: u64, config_hash: String, dataset: DatasetSummary, test_labels: Vec<bool>) -> Self {
        Report {
            schema: REPORT_SCHEMA.into(),
            schema_version: REPORT_SCHEMA_VERSION,
            seed,
            config_hash,
            dataset,
            test_labels,
            results: Vec::new(),
            examples: Vec::new(),
        }
    }

    /// Sorted distinct latent dimensions.
    pub fn latent_dims(&self) -> Vec<usize> {
        let mut dims: Vec<usize> = self.results.iter().map(|r| r.latent_dim).collect();
        dims.sort_unstable();
        dims.dedup();
        dims
    }

    pub fn result(&self, method: Method, latent_dim: usize) -> Option<&MethodResult> {
        self.results
            .iter()
            .find(|r| r.method == method && r.latent_dim == latent_dim)
    }

    pub fn to_json(&self) -> Result<String> {
        let mut s = serde_json::to_string_pretty(self)?;
        s.push('\n');
        Ok(s)
    }

    /// Parses and validates a report.
    pub fn from_json(text: &str) -> Result<Self> {
        let value: serde_json::Value = serde_json::from_str(text)?;
        validate_report(&value)
    }
}

fn invalid(msg: impl Into<String>) -> Error {
    Error::Format(format!("report: {}", msg.into()))
}

fn unit_interval(name: &str, v: Option<f64>) -> Result<()> {
    match v {
        Some(x) if !(0.0..=1.0).contains(&x) => Err(invalid(format!("{name} = {x} outside [0, 1]"))),
        _ => Ok(()),
    }
}

/// Structural and semantic checks on a report document.
pub fn validate_report(value: &serde_json::Value) -> Result<Report> {
    if value.get("schema").and_then(|v| v.as_str()) != Some(REPORT_SCHEMA) {
        return Err(invalid("missing or wrong schema tag"));
    }
    let version = value
        .get("schema_version")
        .and_then(|v| v.as_u64())
        .ok_or_else(|| invalid("missing schema_version"))?;
    if version != REPORT_SCHEMA_VERSION as u64 {
        return Err(Error::VersionMismatch {
            found: version as u32,
            expected: REPORT_SCHEMA_VERSION,
        });
    }
    let report: Report = serde_json::from_value(value.clone())?;
    let n = report.test_labels.len();
    if n != report.dataset.test {
        return Err(invalid("test label count differs from dataset.test"));
    }
    let positives = report.test_labels.iter().filter(|&&l| l).count();
    if positives != report.dataset.test_positives {
        return Err(invalid("test_positives disagrees with test_labels"));
    }
    let mut seen = std::collections::BTreeSet::new();
    for r in &report.results {
        let tag = format!("{} Ld {}", r.method.name(), r.latent_dim);
        if !seen.insert((r.method, r.latent_dim)) {
            return Err(invalid(format!("duplicate result {tag}")));
        }
        if r.test_mse.len() != n {
            return Err(invalid(format!("{tag}: {} test scores for {n} labels", r.test_mse.len())));
        }
        let c = r.metrics.counts;
        if (c.tp + c.fp + c.tn + c.fn_) as usize != n || (c.tp + c.fn_) as usize != positives {
            return Err(invalid(format!("{tag}: confusion counts do not match the test set")));
        }
        let m = &r.metrics;
        for (name, v) in [
            ("accuracy", Some(m.accuracy)),
            ("sensitivity", m.sensitivity),
            ("specificity", m.specificity),
            ("auc", m.auc),
            ("mean_prop_correct", Some(r.within.mean_prop_correct)),
            ("mean_prop_artefact_correct", r.within.mean_prop_artefact_correct),
            ("mean_prop_nonartefact_correct", r.within.mean_prop_nonartefact_correct),
            ("prop_fully_correct", Some(r.within.prop_fully_correct)),
        ] {
            unit_interval(&format!("{tag}: {name}"), v)?;
        }
        let pts = &r.roc.points;
        if pts.first() != Some(&(0.0, 0.0)) || pts.last() != Some(&(1.0, 1.0)) {
            return Err(invalid(format!("{tag}: ROC must run from (0,0) to (1,1)")));
        }
        if pts.windows(2).any(|w| w[1].0 < w[0].0 || w[1].1 < w[0].1) {
            return Err(invalid(format!("{tag}: ROC points are not monotone")));
        }
        if r.roc.thresholds.len() + 1 != pts.len() {
            return Err(invalid(format!("{tag}: ROC thresholds do not match points")));
        }
        let area: f64 = pts.windows(2).map(|w| (w[1].0 - w[0].0) * (w[1].1 + w[0].1) / 2.0).sum();
        if (area - r.roc.auc).abs() > 1e-9 || m.auc.is_some_and(|a| a != r.roc.auc) {
            return Err(invalid(format!("{tag}: AUC does not match the curve")));
        }
        if !(r.thresholds.sample_threshold > 0.0 && r.thresholds.window_threshold > 0.0) {
            return Err(invalid(format!("{tag}: thresholds must be positive")));
        }
    }
    for e in &report.examples {
        if e.values.len() != report.dataset.window_len
            || e.reconstruction.len() != e.values.len()
            || e.timepoint_mask.len() != e.values.len()
        {
            return Err(invalid("reconstruction example has inconsistent lengths"));
        }
    }
    Ok(report)
}

fn opt(v: Option<f64>) -> String {
    v.map_or_else(|| "NA".to_string(), |x| format!("{x}"))
}

/// One row per (method, latent dim); undefined rates are written as `NA`.
pub fn write_csv(report: &Report, mut out: impl Write) -> std::io::Result<()> {
    writeln!(out, "{}", CSV_COLUMNS.join(","))?;
    let mut rows: Vec<&MethodResult> = report.results.iter().collect();
    rows.sort_by_key(|r| (r.latent_dim, r.method));
    for r in rows {
        let (m, c, w) = (&r.metrics, r.metrics.counts, &r.within);
        writeln!(
            out,
            "{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{}",
            r.method.name(),
            r.latent_dim,
            m.accuracy,
            opt(m.sensitivity),
            opt(m.specificity),
            opt(m.auc),
            c.tp,
            c.fp,
            c.tn,
            c.fn_,
            r.thresholds.sample_threshold,
            r.thresholds.window_threshold,
            w.mean_prop_correct,
            opt(w.mean_prop_artefact_correct),
            opt(w.mean_prop_nonartefact_correct),
            w.prop_fully_correct,
        )?;
    }
    Ok(())
}

fn cell(v: Option<f64>) -> String {
    v.map_or_else(|| "   NA".to_string(), |x| format!("{x:.3}"))
}

fn mean_of(values: &[Option<f64>]) -> Option<f64> {
    let present: Vec<f64> = values.iter().flatten().copied().collect();
    (!present.is_empty()).then(|| present.iter().sum::<f64>() / present.len() as f64)
}

fn paired_table(report: &Report, groups: &[&str], pick: impl Fn(&MethodResult) -> Vec<Option<f64>>) -> String {
    let mut s = String::new();
    let _ = write!(s, "{:>10}", "");
    for g in groups {
        let _ = write!(s, " | {g:^13}");
    }
    s.push('\n');
    let _ = write!(s, "{:>10}", "Latent dim");
    for _ in groups {
        let _ = write!(s, " | {:>5}   {:>5}", "PCA", "VAE");
    }
    s.push('\n');
    let mut columns: Vec<Vec<Option<f64>>> = vec![Vec::new(); 2 * groups.len()];
    for ld in report.latent_dims() {
        let values: Vec<[Option<f64>; 2]> = (0..groups.len())
            .map(|g| {
                [Method::Pca, Method::Vae]
                    .map(|m| report.result(m, ld).and_then(|r| pick(r)[g]))
            })
            .collect();
        let _ = write!(s, "{ld:>10}");
        for (g, pair) in values.iter().enumerate() {
            let _ = write!(s, " | {}   {}", cell(pair[0]), cell(pair[1]));
            columns[2 * g].push(pair[0]);
            columns[2 * g + 1].push(pair[1]);
        }
        s.push('\n');
    }
    let _ = write!(s, "{:>10}", "Mean");
    for pair in columns.chunks(2) {
        let _ = write!(s, " | {}   {}", cell(mean_of(&pair[0])), cell(mean_of(&pair[1])));
    }
    s.push('\n');
    s
}

/// Sample-wide classification table: accuracy, sensitivity, specificity and
/// ROC AUC for PCA and VAE per latent dimension, with a mean row.
pub fn table1(report: &Report) -> String {
    paired_table(
        report,
        &["Accuracy", "Sensitivity", "Specificity", "ROC AUC"],
        |r| {
            vec![
                Some(r.metrics.accuracy),
                r.metrics.sensitivity,
                r.metrics.specificity,
                r.metrics.auc,
            ]
        },
    )
}

/// Within-sample localization table.
pub fn table2(report: &Report) -> String {
    paired_table(
        report,
        &["Entire sample", "Artefact w.s.", "Non-art. w.s.", "100% correct"],
        |r| {
            vec![
                Some(r.within.mean_prop_correct),
                r.within.mean_prop_artefact_correct,
                r.within.mean_prop_nonartefact_correct,
                Some(r.within.prop_fully_correct),
            ]
        },
    )
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        std::fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    std::fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

/// Writes the report in `format`. JSON and CSV go to `path`; SVG treats
/// `path` as a directory and writes `roc.svg`, `log_mse.svg` and
/// `reconstructions.svg`. Returns the files written.
pub fn emit_report(report: &Report, format: ReportFormat, path: &Path) -> Result<Vec<PathBuf>> {
    if report.results.is_empty() {
        return Err(Error::InvalidInput("report holds no results".into()));
    }
    match format {
        ReportFormat::Json => {
            write_file(path, report.to_json()?.as_bytes())?;
            Ok(vec![path.to_path_buf()])
        }
        ReportFormat::Csv => {
            let mut buf = Vec::new();
            write_csv(report, &mut buf).map_err(|e| Error::io(path, e))?;
            write_file(path, &buf)?;
            Ok(vec![path.to_path_buf()])
        }
        ReportFormat::Svg => {
            let files = [
                ("roc.svg", svg::roc_plot(report)),
                ("log_mse.svg", svg::log_mse_plot(report)),
                ("reconstructions.svg", svg::reconstruction_plot(report)),
            ];
            let mut written = Vec::new();
            for (name, body) in files {
                let p = path.join(name);
                write_file(&p, body.as_bytes())?;
                written.push(p);
            }
            Ok(written)
        }
    }
}
