//! End-to-end corpus experiment: synthesize, preprocess, train a VAE and fit
//! PCA per latent dimension, then score both on the labelled test set.

use std::path::{Path, PathBuf};
use std::time::Instant;

use rayon::prelude::*;

use crate::detect::{localize_artefacts, thresholds_from_scores, training_scores, DetectConfig, DetectionResult, Reconstructor};
use crate::error::{Error, Result};
use crate::eval::{
    binary_metrics, roc_auc, within_sample_metrics, DatasetSummary, Method, MethodResult,
    ReconstructionExample, Report,
};
use crate::kv::KeyValues;
use crate::pca::{fit_pca, PcaModel};
use crate::preprocess::{build_datasets, mark_abnormal, sample_test_windows, DatasetBundle, PreprocessConfig};
use crate::signal_io::MarkMask;
use crate::synth::{build_corpus, Corpus, CorpusConfig};
use crate::vae::{train_with_progress, EpochProgress, TrainingHyper, VaeModel};

pub const SWEEP_LATENT_DIMS: [usize; 8] = [2, 3, 4, 5, 10, 20, 50, 100];

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub corpus: CorpusConfig,
    /// Its `seed` is replaced by the experiment seed.
    pub preprocess: PreprocessConfig,
    pub detect: DetectConfig,
    pub hyper: TrainingHyper,
    pub latent_dims: Vec<usize>,
    pub restarts: usize,
    pub seed: u64,
    /// Clean and artefact test windows kept for overlay plots, per class.
    pub examples_per_class: usize,
}

impl Default for ExperimentConfig {
    /// The desk-scale experiment: a 2-hour corpus, latent dims {2, 5, 20},
    /// five restarts, batch 16.
    fn default() -> Self {
        ExperimentConfig {
            corpus: CorpusConfig::default(),
            preprocess: PreprocessConfig::default(),
            detect: DetectConfig::default(),
            hyper: TrainingHyper {
                batch_size: 16,
                ..TrainingHyper::default()
            },
            latent_dims: vec![2, 5, 20],
            restarts: 5,
            seed: 7,
            examples_per_class: 1,
        }
    }
}

const TOP_KEYS: &[&str] = &[
    "seed",
    "latent_dims",
    "restarts",
    "batch_size",
    "epochs",
    "learning_rate",
    "examples_per_class",
    "sample_percentile",
    "window_percentile",
    "window_len",
    "window_stride",
];

impl ExperimentConfig {
    /// Default settings with the full latent sweep.
    pub fn sweep() -> Self {
        ExperimentConfig {
            latent_dims: SWEEP_LATENT_DIMS.to_vec(),
            ..Self::default()
        }
    }

    /// Top-level keys plus `corpus.*` and `preprocess.*` sections, each
    /// applied over `base`.
    pub fn from_kv_over(kv: &KeyValues, base: &ExperimentConfig) -> Result<Self> {
        let top = kv.top_level();
        top.reject_unknown(TOP_KEYS)?;
        let known_sections = ["corpus.", "preprocess."];
        if let Some(bad) = kv
            .keys()
            .find(|k| k.contains('.') && !known_sections.iter().any(|p| k.starts_with(p)))
        {
            return Err(Error::Config(format!("unknown section in key {bad:?}")));
        }
        let mut c = base.clone();
        let mut corpus_kv = c.corpus.to_kv();
        corpus_kv.merge_prefixed("", &kv.section("corpus."));
        c.corpus = CorpusConfig::from_kv(&corpus_kv)?;
        let mut pre_kv = c.preprocess.to_kv();
        pre_kv.merge_prefixed("", &kv.section("preprocess."));
        c.preprocess = PreprocessConfig::from_kv(&pre_kv)?;
        top.update("seed", &mut c.seed)?;
        top.update("restarts", &mut c.restarts)?;
        top.update("batch_size", &mut c.hyper.batch_size)?;
        top.update("epochs", &mut c.hyper.epochs)?;
        top.update("learning_rate", &mut c.hyper.learning_rate)?;
        top.update("examples_per_class", &mut c.examples_per_class)?;
        top.update("sample_percentile", &mut c.detect.sample_percentile)?;
        top.update("window_percentile", &mut c.detect.window_percentile)?;
        top.update("window_len", &mut c.detect.window_len)?;
        top.update("window_stride", &mut c.detect.window_stride)?;
        if let Some(list) = top.get::<String>("latent_dims")? {
            c.latent_dims = parse_dims(&list)?;
        }
        c.validate()?;
        Ok(c)
    }

    pub fn to_kv(&self) -> KeyValues {
        let mut kv = KeyValues::new();
        kv.set("seed", self.seed);
        kv.set(
            "latent_dims",
            self.latent_dims.iter().map(|d| d.to_string()).collect::<Vec<_>>().join(","),
        );
        kv.set("restarts", self.restarts);
        kv.set("batch_size", self.hyper.batch_size);
        kv.set("epochs", self.hyper.epochs);
        kv.set("learning_rate", self.hyper.learning_rate);
        kv.set("examples_per_class", self.examples_per_class);
        kv.set("sample_percentile", self.detect.sample_percentile);
        kv.set("window_percentile", self.detect.window_percentile);
        kv.set("window_len", self.detect.window_len);
        kv.set("window_stride", self.detect.window_stride);
        kv.merge_prefixed("corpus.", &self.corpus.to_kv());
        let mut pre = self.preprocess.clone();
        pre.seed = self.seed;
        kv.merge_prefixed("preprocess.", &pre.to_kv());
        kv
    }

    pub fn validate(&self) -> Result<()> {
        if self.latent_dims.is_empty() || self.latent_dims.contains(&0) {
            return Err(Error::Config("latent_dims must list positive sizes".into()));
        }
        if self.restarts == 0 || self.hyper.batch_size == 0 || self.hyper.epochs == 0 {
            return Err(Error::Config("restarts, batch_size and epochs must be positive".into()));
        }
        if !(self.hyper.learning_rate > 0.0) {
            return Err(Error::Config("learning_rate must be positive".into()));
        }
        self.corpus.validate()?;
        self.preprocess.validate()
    }

    /// Hash of every setting that influences the results.
    pub fn digest(&self) -> String {
        self.to_kv().digest()
    }

    pub fn preprocess_config(&self) -> PreprocessConfig {
        PreprocessConfig {
            seed: self.seed,
            ..self.preprocess.clone()
        }
    }
}

pub fn parse_dims(list: &str) -> Result<Vec<usize>> {
    list.split(',')
        .map(|d| {
            d.trim()
                .parse::<usize>()
                .map_err(|_| Error::Config(format!("bad latent dimension {d:?}")))
        })
        .collect()
}

/// Training seeds for one latent dimension, one per restart.
pub fn restart_seeds(seed: u64, latent_dim: usize, restarts: usize) -> Vec<u64> {
    (0..restarts as u64)
        .map(|r| splitmix(seed ^ ((latent_dim as u64) << 32) ^ (r << 16)))
        .collect()
}

fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// The corpus and its datasets, with the test set annotated from ground
/// truth.
pub struct Prepared {
    pub corpus: Corpus,
    pub marked: MarkMask,
    pub bundle: DatasetBundle,
}

pub fn prepare(cfg: &ExperimentConfig) -> Result<Prepared> {
    cfg.validate()?;
    let pre = cfg.preprocess_config();
    let corpus = build_corpus(&cfg.corpus, cfg.seed)?;
    let marked = mark_abnormal(&corpus.record, &pre, None)?;
    let starts = sample_test_windows(&corpus.record, &marked, &pre)?;
    let mut bundle = build_datasets(&corpus.record, &marked, &starts, &pre)?;
    bundle.annotate_test(&corpus.truth)?;
    Ok(Prepared {
        corpus,
        marked,
        bundle,
    })
}

/// Calibrates on the training set and scores every test window.
pub fn evaluate_method(
    rec: &dyn Reconstructor,
    method: Method,
    latent_dim: usize,
    bundle: &DatasetBundle,
    cfg: &DetectConfig,
) -> Result<(MethodResult, Vec<DetectionResult>)> {
    let train: Vec<&[f64]> = bundle.train.iter().map(|w| w.values.as_slice()).collect();
    cfg.validate(rec.input_length())?;
    let (train_mse, window_mse) = training_scores(rec, &train, cfg)?;
    let thresholds = thresholds_from_scores(&train_mse, &window_mse, cfg)?;
    let labels = test_labels(bundle)?;
    let truth: Vec<Vec<bool>> = bundle
        .test
        .iter()
        .map(|t| t.timepoint_label.clone().unwrap_or_default())
        .collect();
    let results: Vec<DetectionResult> = bundle
        .test
        .par_iter()
        .map(|t| localize_artefacts(rec, &thresholds, &t.values))
        .collect::<Result<_>>()?;
    let test_mse: Vec<f64> = results.iter().map(|r| r.sample_mse).collect();
    if test_mse.iter().any(|v| !v.is_finite()) {
        return Err(Error::Numerical(format!("{} Ld {latent_dim}: non-finite test MSE", method.name())));
    }
    let predictions: Vec<bool> = results.iter().map(|r| r.is_artefact).collect();
    let roc = roc_auc(&test_mse, &labels)?;
    let mut metrics = binary_metrics(&predictions, &labels)?;
    metrics.auc = Some(roc.auc);
    let masks: Vec<Vec<bool>> = results.iter().map(|r| r.timepoint_mask.clone()).collect();
    let within = within_sample_metrics(&masks, &truth)?;
    Ok((
        MethodResult {
            method,
            latent_dim,
            thresholds,
            metrics,
            within,
            roc,
            train_mse,
            test_mse,
            training: None,
        },
        results,
    ))
}

fn test_labels(bundle: &DatasetBundle) -> Result<Vec<bool>> {
    bundle
        .test
        .iter()
        .map(|t| {
            t.label
                .ok_or_else(|| Error::InvalidInput("test windows carry no labels".into()))
        })
        .collect()
}

/// Progress notifications from [`run_experiment`].
#[derive(Debug, Clone)]
pub enum Progress {
    Prepared { train: usize, validation: usize, test: usize, positives: usize },
    Epoch { latent_dim: usize, progress: EpochProgress },
    CacheHit { latent_dim: usize, path: PathBuf },
    Evaluated { method: Method, latent_dim: usize, auc: f64 },
}

/// One latent dimension's fitted models.
pub struct FittedModels {
    pub latent_dim: usize,
    pub vae: VaeModel,
    pub pca: PcaModel,
    /// Wall-clock seconds spent training the VAE (zero on a cache hit).
    pub train_seconds: f64,
}

pub struct ExperimentOutput {
    pub report: Report,
    pub prepared: Prepared,
    pub models: Vec<FittedModels>,
}

/// Runs the whole experiment. When `cache` is set, trained VAEs are stored
/// there keyed by the configuration hash and reused on later runs.
pub fn run_experiment(
    cfg: &ExperimentConfig,
    cache: Option<&Path>,
    mut progress: impl FnMut(Progress),
) -> Result<ExperimentOutput> {
    let prepared = prepare(cfg)?;
    let bundle = &prepared.bundle;
    let labels = test_labels(bundle)?;
    let positives = labels.iter().filter(|&&l| l).count();
    progress(Progress::Prepared {
        train: bundle.train.len(),
        validation: bundle.validation.len(),
        test: bundle.test.len(),
        positives,
    });
    let summary = DatasetSummary {
        sampling_rate: bundle.sampling_rate,
        window_len: bundle.window_len,
        train: bundle.train.len(),
        validation: bundle.validation.len(),
        test: bundle.test.len(),
        test_positives: positives,
        marked_fraction: Some(prepared.marked.marked_fraction()),
        truth_fraction: Some(prepared.corpus.truth.marked_fraction()),
    };
    let mut report = Report::new(cfg.seed, cfg.digest(), summary, labels.clone());
    let example_ids = pick_examples(&labels, cfg.examples_per_class);
    let train: Vec<&[f64]> = bundle.train.iter().map(|w| w.values.as_slice()).collect();

    let mut models = Vec::with_capacity(cfg.latent_dims.len());
    for &ld in &cfg.latent_dims {
        let (mut vae, train_seconds) = obtain_vae(cfg, bundle, ld, cache, &mut progress)?;
        let mut pca = fit_pca(&train, ld.min(train.len()).min(bundle.window_len))?;
        pca.standardizer = Some(bundle.standardizer);
        for method in [Method::Pca, Method::Vae] {
            let rec: &dyn Reconstructor = match method {
                Method::Pca => &pca,
                Method::Vae => &vae,
            };
            let (mut result, detections) = evaluate_method(rec, method, ld, bundle, &cfg.detect)?;
            progress(Progress::Evaluated {
                method,
                latent_dim: ld,
                auc: result.roc.auc,
            });
            for &i in &example_ids {
                report.examples.push(ReconstructionExample {
                    method,
                    latent_dim: ld,
                    source_start: bundle.test[i].source_start,
                    label: labels[i],
                    values: bundle.test[i].values.clone(),
                    reconstruction: detections[i].reconstruction.clone(),
                    timepoint_mask: detections[i].timepoint_mask.clone(),
                });
            }
            match method {
                Method::Pca => pca.thresholds = Some(result.thresholds),
                Method::Vae => {
                    vae.thresholds = Some(result.thresholds);
                    result.training = vae.training_meta.clone();
                }
            }
            report.results.push(result);
        }
        models.push(FittedModels {
            latent_dim: ld,
            vae,
            pca,
            train_seconds,
        });
    }
    Ok(ExperimentOutput {
        report,
        prepared,
        models,
    })
}

fn pick_examples(labels: &[bool], per_class: usize) -> Vec<usize> {
    let mut ids: Vec<usize> = Vec::new();
    for class in [false, true] {
        ids.extend(
            labels
                .iter()
                .enumerate()
                .filter(|(_, &l)| l == class)
                .map(|(i, _)| i)
                .take(per_class),
        );
    }
    ids
}

fn obtain_vae(
    cfg: &ExperimentConfig,
    bundle: &DatasetBundle,
    ld: usize,
    cache: Option<&Path>,
    progress: &mut impl FnMut(Progress),
) -> Result<(VaeModel, f64)> {
    let cached = cache.map(|dir| dir.join(format!("vae-{}-ld{ld}.dc", &cfg.digest()[..16])));
    if let Some(path) = cached.as_ref().filter(|p| p.exists()) {
        if let Ok(model) = VaeModel::load(path) {
            progress(Progress::CacheHit {
                latent_dim: ld,
                path: path.clone(),
            });
            return Ok((model, 0.0));
        }
    }
    let start = Instant::now();
    let seeds = restart_seeds(cfg.seed, ld, cfg.restarts);
    let model = train_with_progress(bundle, ld, &cfg.hyper, &seeds, |p| {
        progress(Progress::Epoch {
            latent_dim: ld,
            progress: p,
        })
    })?;
    let secs = start.elapsed().as_secs_f64();
    if let Some(path) = cached {
        std::fs::create_dir_all(path.parent().expect("cache file has a parent"))
            .map_err(|e| Error::io(&path, e))?;
        model.save(&path)?;
    }
    Ok((model, secs))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn config_round_trips_through_kv() {
        let mut c = ExperimentConfig::sweep();
        c.corpus.duration_s = 600.0;
        c.hyper.epochs = 3;
        let back = ExperimentConfig::from_kv_over(&c.to_kv(), &ExperimentConfig::default()).unwrap();
        let mut expected = c.clone();
        expected.preprocess.seed = c.seed;
        assert_eq!(back, expected);
        assert_eq!(back.digest(), c.digest());
    }

    #[test]
    fn unknown_keys_are_rejected() {
        let base = ExperimentConfig::default();
        for text in ["bogus = 1", "corpus.bogus = 1", "other.rate = 1", "latent_dims = 2,x"] {
            let kv = KeyValues::parse(text).unwrap();
            assert!(ExperimentConfig::from_kv_over(&kv, &base).is_err(), "{text}");
        }
        let kv = KeyValues::parse("latent_dims = 3, 4\ncorpus.duration_s = 900\nepochs = 2").unwrap();
        let c = ExperimentConfig::from_kv_over(&kv, &base).unwrap();
        assert_eq!(c.latent_dims, vec![3, 4]);
        assert_eq!(c.corpus.duration_s, 900.0);
        assert_eq!(c.hyper.epochs, 2);
    }

    #[test]
    fn restart_seeds_are_distinct() {
        let a = restart_seeds(7, 5, 5);
        let b = restart_seeds(7, 20, 5);
        let mut all: Vec<u64> = a.iter().chain(&b).copied().collect();
        all.sort_unstable();
        all.dedup();
        assert_eq!(all.len(), 10);
        assert_eq!(a, restart_seeds(7, 5, 5));
    }

    #[test]
    fn examples_pick_each_class() {
        assert_eq!(pick_examples(&[false, true, false, true], 1), vec![0, 1]);
        assert_eq!(pick_examples(&[false, false], 2), vec![0, 1]);
        assert!(pick_examples(&[true], 0).is_empty());
    }
}
