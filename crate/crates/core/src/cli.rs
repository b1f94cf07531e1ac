//! The `deepclean` command line.
//!
//! Exit codes: 0 success, 1 usage error, 2 data error, 3 numerical error.

use std::collections::BTreeMap;
use std::ffi::OsString;
use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::detect::{calibrate_thresholds, scan_record, write_detection_csv, Reconstructor};
use crate::error::Error;
use crate::eval::{emit_report, table1, table2, DatasetSummary, Method, Report, ReportFormat};
use crate::kv::KeyValues;
use crate::model_io;
use crate::pca::{fit_pca, PcaModel};
use crate::pipeline::{evaluate_method, restart_seeds, run_experiment, ExperimentConfig, Progress};
use crate::preprocess::{build_datasets, mark_abnormal, sample_test_windows, DatasetBundle, Standardizer};
use crate::signal_io::{read_mask, read_waveform, write_mask, write_waveform, DEFAULT_RATE};
use crate::synth::build_corpus;
use crate::vae::{train_with_progress, VaeModel};

/// Environment variable naming a directory for cached trained models.
pub const CACHE_ENV: &str = "DEEPCLEAN_CACHE";

const GAP_FACTOR: f64 = 1.5;

#[derive(Parser, Debug)]
#[command(name = "deepclean", version, about = "Artefact detection for physiological waveforms with a convolutional VAE")]
struct Cli {
    /// Cap on worker threads; results do not depend on it.
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug, Clone, Default)]
struct Common {
    #[arg(long)]
    seed: Option<u64>,
    /// key = value settings; `corpus.*` and `preprocess.*` keys configure
    /// those stages.
    #[arg(long)]
    config: Option<PathBuf>,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Build a synthetic corpus with labelled artefacts.
    Synth {
        #[command(flatten)]
        common: Common,
        /// Record length in seconds.
        #[arg(long)]
        duration: Option<f64>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Mark abnormal regions and build train/validation/test datasets.
    Preprocess {
        #[command(flatten)]
        common: Common,
        #[arg(long = "in")]
        input: PathBuf,
        /// Reference annotation used to label the test set.
        #[arg(long)]
        truth: Option<PathBuf>,
        /// External signal-quality annotations, unioned into the marks.
        #[arg(long)]
        annotations: Option<PathBuf>,
        #[arg(long, default_value_t = DEFAULT_RATE)]
        rate: f64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train one VAE per latent dimension.
    Train {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        data: PathBuf,
        #[arg(long, value_delimiter = ',', required = true)]
        latent: Vec<usize>,
        /// A `.dc` file for a single latent dimension, otherwise a directory.
        #[arg(long)]
        out: PathBuf,
    },
    /// Fit the PCA baseline for each number of components.
    FitPca {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        data: PathBuf,
        #[arg(long, value_delimiter = ',', required = true)]
        latent: Vec<usize>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Classify, localize and impute artefacts in a recording.
    Detect {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        model: PathBuf,
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long, default_value_t = DEFAULT_RATE)]
        rate: f64,
        /// Output directory; defaults to `<input stem>.detect/`.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Score saved models on a labelled dataset bundle.
    Evaluate {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        data: PathBuf,
        #[arg(long = "model", required = true)]
        models: Vec<PathBuf>,
        #[arg(long, value_delimiter = ',')]
        format: Vec<String>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Full corpus experiment over a latent-dimension sweep.
    Sweep {
        #[command(flatten)]
        common: Common,
        #[arg(long, value_delimiter = ',')]
        latent: Vec<usize>,
        #[arg(long, value_delimiter = ',')]
        format: Vec<String>,
        /// Also write the fitted models.
        #[arg(long)]
        save_models: bool,
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FileDigest {
    pub path: String,
    pub sha256: String,
}

/// Record of one CLI run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub tool_version: String,
    pub command: String,
    pub config_hash: String,
    pub seeds: Vec<u64>,
    pub inputs: Vec<FileDigest>,
    pub outputs: Vec<FileDigest>,
    pub stage_seconds: BTreeMap<String, f64>,
}

enum Failure {
    Usage(String),
    Lib(Error),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure::Lib(e)
    }
}

type CliResult<T> = std::result::Result<T, Failure>;

/// Parses `args` (program name first), runs the command and returns the
/// process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    if let Some(n) = cli.threads {
        if n == 0 {
            eprintln!("error: --threads must be positive");
            return 1;
        }
        let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    }
    match dispatch(cli.command) {
        Ok(()) => 0,
        Err(Failure::Usage(msg)) => {
            eprintln!("error: {msg}");
            1
        }
        Err(Failure::Lib(e)) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

fn dispatch(command: Command) -> CliResult<()> {
    match command {
        Command::Synth { common, duration, out } => synth(&common, duration, &out),
        Command::Preprocess {
            common,
            input,
            truth,
            annotations,
            rate,
            out,
        } => preprocess(&common, &input, truth.as_deref(), annotations.as_deref(), rate, &out),
        Command::Train { common, data, latent, out } => train(&common, &data, &latent, &out),
        Command::FitPca { common, data, latent, out } => fit(&common, &data, &latent, &out),
        Command::Detect {
            common,
            model,
            input,
            rate,
            out,
        } => detect(&common, &model, &input, rate, out),
        Command::Evaluate {
            common,
            data,
            models,
            format,
            out,
        } => evaluate(&common, &data, &models, &format, &out),
        Command::Sweep {
            common,
            latent,
            format,
            save_models,
            out,
        } => sweep(&common, &latent, &format, save_models, &out),
    }
}

fn experiment_config(common: &Common, base: ExperimentConfig) -> CliResult<ExperimentConfig> {
    let mut cfg = match &common.config {
        Some(path) => ExperimentConfig::from_kv_over(&KeyValues::read(path)?, &base)?,
        None => base,
    };
    if let Some(seed) = common.seed {
        cfg.seed = seed;
    }
    Ok(cfg)
}

fn parse_formats(list: &[String], default: &[ReportFormat]) -> CliResult<Vec<ReportFormat>> {
    if list.is_empty() {
        return Ok(default.to_vec());
    }
    list.iter()
        .map(|f| f.parse().map_err(|_| Failure::Usage(format!("unknown --format {f:?} (json, csv, svg)"))))
        .collect()
}

fn sha256_file(path: &Path) -> Result<String, Error> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    Ok(hex::encode(Sha256::digest(&bytes)))
}

fn digests(paths: &[PathBuf]) -> Result<Vec<FileDigest>, Error> {
    paths
        .iter()
        .map(|p| {
            Ok(FileDigest {
                path: p.display().to_string(),
                sha256: sha256_file(p)?,
            })
        })
        .collect()
}

struct Recorder {
    command: &'static str,
    stages: BTreeMap<String, f64>,
    current: Option<(String, Instant)>,
}

impl Recorder {
    fn new(command: &'static str) -> Self {
        Recorder {
            command,
            stages: BTreeMap::new(),
            current: None,
        }
    }

    fn stage(&mut self, name: &str) {
        self.finish_stage();
        self.current = Some((name.to_string(), Instant::now()));
    }

    fn finish_stage(&mut self) {
        if let Some((name, t)) = self.current.take() {
            *self.stages.entry(name).or_default() += t.elapsed().as_secs_f64();
        }
    }

    fn write(
        mut self,
        path: &Path,
        config_hash: String,
        seeds: Vec<u64>,
        inputs: &[PathBuf],
        outputs: &[PathBuf],
    ) -> Result<(), Error> {
        self.finish_stage();
        let manifest = RunManifest {
            tool_version: env!("CARGO_PKG_VERSION").to_string(),
            command: self.command.to_string(),
            config_hash,
            seeds,
            inputs: digests(inputs)?,
            outputs: digests(outputs)?,
            stage_seconds: self.stages,
        };
        let text = serde_json::to_string_pretty(&manifest)?;
        std::fs::write(path, text + "\n").map_err(|e| Error::io(path, e))
    }
}

fn ensure_dir(dir: &Path) -> Result<(), Error> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

fn write_text(path: &Path, text: &str) -> Result<(), Error> {
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn synth(common: &Common, duration: Option<f64>, out: &Path) -> CliResult<()> {
    let mut cfg = experiment_config(common, ExperimentConfig::default())?;
    if let Some(d) = duration {
        cfg.corpus.duration_s = d;
    }
    let mut rec = Recorder::new("synth");
    rec.stage("generate");
    let corpus = build_corpus(&cfg.corpus, cfg.seed)?;
    rec.stage("write");
    ensure_dir(out)?;
    let files = [
        out.join("record.csv"),
        out.join("clean.csv"),
        out.join("truth_mask.txt"),
        out.join("artefacts.json"),
        out.join("corpus.conf"),
    ];
    write_waveform(&corpus.record, &files[0])?;
    write_waveform(&corpus.clean, &files[1])?;
    write_mask(&corpus.truth, &files[2])?;
    write_text(&files[3], &(serde_json::to_string_pretty(&corpus.artefacts).map_err(Error::from)? + "\n"))?;
    write_text(&files[4], &cfg.corpus.to_kv().render())?;
    eprintln!(
        "{} samples, {} artefacts, {:.2}% artefact time",
        corpus.record.len(),
        corpus.artefacts.len(),
        100.0 * corpus.truth.marked_fraction()
    );
    rec.write(
        &out.join("run_manifest.json"),
        cfg.corpus.to_kv().digest(),
        vec![cfg.seed],
        &[],
        &files,
    )?;
    Ok(())
}

fn preprocess(
    common: &Common,
    input: &Path,
    truth: Option<&Path>,
    annotations: Option<&Path>,
    rate: f64,
    out: &Path,
) -> CliResult<()> {
    let cfg = experiment_config(common, ExperimentConfig::default())?;
    let pre = cfg.preprocess_config();
    let mut rec = Recorder::new("preprocess");
    rec.stage("read");
    let record = read_waveform(input, rate, GAP_FACTOR)?;
    let annotation = annotations.map(read_mask).transpose()?;
    let truth_mask = truth.map(read_mask).transpose()?;
    rec.stage("mark");
    let marked = mark_abnormal(&record, &pre, annotation.as_ref())?;
    rec.stage("datasets");
    let starts = sample_test_windows(&record, &marked, &pre)?;
    let mut bundle = build_datasets(&record, &marked, &starts, &pre)?;
    if let Some(t) = &truth_mask {
        bundle.annotate_test(t)?;
    }
    rec.stage("write");
    bundle.save(out)?;
    write_mask(&marked, &out.join("marked_mask.txt"))?;
    eprintln!(
        "marked {:.2}%; {} train, {} validation, {} test windows",
        100.0 * marked.marked_fraction(),
        bundle.train.len(),
        bundle.validation.len(),
        bundle.test.len()
    );
    let mut inputs = vec![input.to_path_buf()];
    inputs.extend(truth.map(Path::to_path_buf));
    inputs.extend(annotations.map(Path::to_path_buf));
    let outputs: Vec<PathBuf> = ["manifest.json", "train.bin", "validation.bin", "test.bin", "marked_mask.txt"]
        .iter()
        .map(|f| out.join(f))
        .chain(Some(out.join("test_timepoint_labels.bin")).filter(|p| p.exists()))
        .collect();
    rec.write(&out.join("run_manifest.json"), pre.to_kv().digest(), vec![pre.seed], &inputs, &outputs)?;
    Ok(())
}

/// Output path per latent dimension: `out` itself when it names a single
/// `.dc` file, otherwise `out/<prefix>_ld<d>.dc`.
fn model_paths(out: &Path, latent: &[usize], prefix: &str) -> CliResult<(Vec<PathBuf>, PathBuf)> {
    if out.extension().is_some_and(|e| e == "dc") {
        if latent.len() != 1 {
            return Err(Failure::Usage("a .dc output file takes exactly one --latent value".into()));
        }
        let manifest = PathBuf::from(format!("{}.manifest.json", out.display()));
        return Ok((vec![out.to_path_buf()], manifest));
    }
    ensure_dir(out)?;
    Ok((
        latent.iter().map(|d| out.join(format!("{prefix}_ld{d}.dc"))).collect(),
        out.join("run_manifest.json"),
    ))
}

fn bundle_inputs(data: &Path) -> Vec<PathBuf> {
    ["manifest.json", "train.bin", "validation.bin"]
        .iter()
        .map(|f| data.join(f))
        .collect()
}

fn train(common: &Common, data: &Path, latent: &[usize], out: &Path) -> CliResult<()> {
    if latent.contains(&0) {
        return Err(Failure::Usage("--latent values must be positive".into()));
    }
    let cfg = experiment_config(common, ExperimentConfig::default())?;
    let (paths, manifest) = model_paths(out, latent, "vae")?;
    let mut rec = Recorder::new("train");
    rec.stage("load");
    let bundle = DatasetBundle::load(data)?;
    let train_windows: Vec<&[f64]> = bundle.train.iter().map(|w| w.values.as_slice()).collect();
    let mut seeds = Vec::new();
    for (&ld, path) in latent.iter().zip(&paths) {
        rec.stage(&format!("train_ld{ld}"));
        let restart_seeds = restart_seeds(cfg.seed, ld, cfg.restarts);
        seeds.extend(&restart_seeds);
        let mut model = train_with_progress(&bundle, ld, &cfg.hyper, &restart_seeds, |p| {
            report_epoch(ld, &p, cfg.hyper.epochs)
        })?;
        model.thresholds = Some(calibrate_thresholds(&model, &train_windows, &cfg.detect)?);
        model.save(path)?;
        if let Some(m) = &model.training_meta {
            eprintln!(
                "Ld {ld}: restart {} selected, validation loss {:.4}",
                m.restart_index, m.final_validation_loss
            );
        }
    }
    rec.write(&manifest, cfg.digest(), seeds, &bundle_inputs(data), &paths)?;
    Ok(())
}

fn report_epoch(ld: usize, p: &crate::vae::EpochProgress, epochs: usize) {
    if p.epoch % 10 == 0 || p.epoch == epochs {
        eprintln!(
            "Ld {ld} restart {} epoch {:>3}: train {:.4} validation {:.4}",
            p.restart, p.epoch, p.train_loss, p.validation_loss
        );
    }
}

fn fit(common: &Common, data: &Path, latent: &[usize], out: &Path) -> CliResult<()> {
    if latent.contains(&0) {
        return Err(Failure::Usage("--latent values must be positive".into()));
    }
    let cfg = experiment_config(common, ExperimentConfig::default())?;
    let (paths, manifest) = model_paths(out, latent, "pca")?;
    let mut rec = Recorder::new("fit-pca");
    rec.stage("load");
    let bundle = DatasetBundle::load(data)?;
    let train_windows: Vec<&[f64]> = bundle.train.iter().map(|w| w.values.as_slice()).collect();
    for (&k, path) in latent.iter().zip(&paths) {
        rec.stage(&format!("fit_k{k}"));
        let mut model = fit_pca(&train_windows, k)?;
        model.standardizer = Some(bundle.standardizer);
        model.thresholds = Some(calibrate_thresholds(&model, &train_windows, &cfg.detect)?);
        model.save(path)?;
    }
    rec.write(&manifest, cfg.digest(), vec![cfg.seed], &bundle_inputs(data), &paths)?;
    Ok(())
}

/// A model file of either kind.
pub enum SavedModel {
    Vae(VaeModel),
    Pca(PcaModel),
}

impl SavedModel {
    pub fn load(path: &Path) -> Result<Self, Error> {
        let (header, _) = model_io::read_container(path)?;
        match header.kind.as_str() {
            "vae" => Ok(SavedModel::Vae(VaeModel::load(path)?)),
            "pca" => Ok(SavedModel::Pca(PcaModel::load(path)?)),
            other => Err(Error::Format(format!("unknown model kind {other:?}"))),
        }
    }

    pub fn reconstructor(&self) -> &dyn Reconstructor {
        match self {
            SavedModel::Vae(m) => m,
            SavedModel::Pca(m) => m,
        }
    }

    pub fn method(&self) -> Method {
        match self {
            SavedModel::Vae(_) => Method::Vae,
            SavedModel::Pca(_) => Method::Pca,
        }
    }

    pub fn latent_dim(&self) -> usize {
        match self {
            SavedModel::Vae(m) => m.latent_dim(),
            SavedModel::Pca(m) => m.k(),
        }
    }

    pub fn standardizer(&self) -> Option<Standardizer> {
        match self {
            SavedModel::Vae(m) => m.standardizer,
            SavedModel::Pca(m) => m.standardizer,
        }
    }

    pub fn thresholds(&self) -> Option<crate::detect::Thresholds> {
        match self {
            SavedModel::Vae(m) => m.thresholds,
            SavedModel::Pca(m) => m.thresholds,
        }
    }
}

fn detect(common: &Common, model_path: &Path, input: &Path, rate: f64, out: Option<PathBuf>) -> CliResult<()> {
    let out = out.unwrap_or_else(|| input.with_extension("detect"));
    let mut rec = Recorder::new("detect");
    rec.stage("load");
    let model = SavedModel::load(model_path)?;
    let thresholds = model
        .thresholds()
        .ok_or_else(|| Error::InvalidInput("model file carries no calibrated thresholds".into()))?;
    let standardizer = model
        .standardizer()
        .ok_or_else(|| Error::InvalidInput("model file carries no standardizer".into()))?;
    let record = read_waveform(input, rate, GAP_FACTOR)?;
    rec.stage("detect");
    let found = scan_record(model.reconstructor(), &standardizer, &thresholds, &record)?;
    rec.stage("write");
    ensure_dir(&out)?;
    let files = [out.join("detections.csv"), out.join("mask.txt"), out.join("imputed.csv")];
    let mut csv = Vec::new();
    write_detection_csv(&found.windows, &mut csv).map_err(|e| Error::io(&files[0], e))?;
    std::fs::write(&files[0], csv).map_err(|e| Error::io(&files[0], e))?;
    write_mask(&found.mask, &files[1])?;
    write_waveform(&found.imputed, &files[2])?;
    let flagged = found.windows.iter().filter(|(_, r)| r.is_artefact).count();
    eprintln!(
        "{flagged} of {} windows flagged; {:.2}% of points masked",
        found.windows.len(),
        100.0 * found.mask.marked_fraction()
    );
    let hash = serde_json::to_string(&thresholds).map_err(Error::from)?;
    rec.write(
        &out.join("run_manifest.json"),
        hex::encode(Sha256::digest(hash.as_bytes())),
        common.seed.into_iter().collect(),
        &[model_path.to_path_buf(), input.to_path_buf()],
        &files,
    )?;
    Ok(())
}

fn write_report(report: &Report, formats: &[ReportFormat], out: &Path) -> Result<Vec<PathBuf>, Error> {
    ensure_dir(out)?;
    let mut written = Vec::new();
    for f in formats {
        let path = match f {
            ReportFormat::Json => out.join("report.json"),
            ReportFormat::Csv => out.join("report.csv"),
            ReportFormat::Svg => out.join("plots"),
        };
        written.extend(emit_report(report, *f, &path)?);
    }
    let tables = format!(
        "Sample-wide classification\n{}\nWithin-sample localization\n{}",
        table1(report),
        table2(report)
    );
    let p = out.join("tables.txt");
    write_text(&p, &tables)?;
    print!("{tables}");
    written.push(p);
    Ok(written)
}

fn evaluate(common: &Common, data: &Path, models: &[PathBuf], format: &[String], out: &Path) -> CliResult<()> {
    let formats = parse_formats(format, &[ReportFormat::Json, ReportFormat::Csv])?;
    let cfg = experiment_config(common, ExperimentConfig::default())?;
    let mut rec = Recorder::new("evaluate");
    rec.stage("load");
    let bundle = DatasetBundle::load(data)?;
    let labels: Vec<bool> = bundle
        .test
        .iter()
        .map(|t| t.label)
        .collect::<Option<_>>()
        .ok_or_else(|| Error::InvalidInput("dataset bundle has no test labels".into()))?;
    let summary = DatasetSummary {
        sampling_rate: bundle.sampling_rate,
        window_len: bundle.window_len,
        train: bundle.train.len(),
        validation: bundle.validation.len(),
        test: bundle.test.len(),
        test_positives: labels.iter().filter(|&&l| l).count(),
        marked_fraction: None,
        truth_fraction: None,
    };
    let mut report = Report::new(bundle.seed, bundle.config_hash.clone(), summary, labels);
    rec.stage("evaluate");
    for path in models {
        let model = SavedModel::load(path)?;
        let detect_cfg = model.thresholds().map_or(cfg.detect, |t| t.config());
        let (mut result, _) = evaluate_method(
            model.reconstructor(),
            model.method(),
            model.latent_dim(),
            &bundle,
            &detect_cfg,
        )?;
        if let SavedModel::Vae(m) = &model {
            result.training = m.training_meta.clone();
        }
        report.results.push(result);
    }
    rec.stage("report");
    let outputs = write_report(&report, &formats, out)?;
    let mut inputs = bundle_inputs(data);
    inputs.push(data.join("test.bin"));
    inputs.extend(models.iter().cloned());
    rec.write(
        &out.join("run_manifest.json"),
        bundle.config_hash.clone(),
        vec![bundle.seed],
        &inputs,
        &outputs,
    )?;
    Ok(())
}

fn sweep(common: &Common, latent: &[usize], format: &[String], save_models: bool, out: &Path) -> CliResult<()> {
    let formats = parse_formats(format, &[ReportFormat::Json, ReportFormat::Csv, ReportFormat::Svg])?;
    let mut cfg = experiment_config(common, ExperimentConfig::sweep())?;
    if !latent.is_empty() {
        cfg.latent_dims = latent.to_vec();
    }
    cfg.validate()?;
    let cache = std::env::var_os(CACHE_ENV).map(PathBuf::from);
    let mut rec = Recorder::new("sweep");
    rec.stage("experiment");
    let epochs = cfg.hyper.epochs;
    let output = run_experiment(&cfg, cache.as_deref(), |p| match p {
        Progress::Prepared {
            train,
            validation,
            test,
            positives,
        } => eprintln!("{train} train, {validation} validation, {test} test windows ({positives} with artefacts)"),
        Progress::Epoch { latent_dim, progress } => report_epoch(latent_dim, &progress, epochs),
        Progress::CacheHit { latent_dim, path } => {
            eprintln!("Ld {latent_dim}: cached model {}", path.display())
        }
        Progress::Evaluated { method, latent_dim, auc } => {
            eprintln!("{} Ld {latent_dim}: AUC {auc:.4}", method.name())
        }
    })?;
    rec.stage("report");
    let mut outputs = write_report(&output.report, &formats, out)?;
    if save_models {
        let dir = out.join("models");
        ensure_dir(&dir)?;
        for m in &output.models {
            let v = dir.join(format!("vae_ld{}.dc", m.latent_dim));
            let p = dir.join(format!("pca_ld{}.dc", m.latent_dim));
            m.vae.save(&v)?;
            m.pca.save(&p)?;
            outputs.extend([v, p]);
        }
    }
    let seeds = std::iter::once(cfg.seed)
        .chain(cfg.latent_dims.iter().flat_map(|&d| restart_seeds(cfg.seed, d, cfg.restarts)))
        .collect();
    let inputs: Vec<PathBuf> = common.config.iter().cloned().collect();
    rec.write(&out.join("run_manifest.json"), cfg.digest(), seeds, &inputs, &outputs)?;
    Ok(())
}
