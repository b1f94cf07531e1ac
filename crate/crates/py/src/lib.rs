//! Python bindings: records, corpus generation, the VAE and PCA
//! reconstructors, detection and metrics.

use std::path::PathBuf;

use deepclean::detect::{calibrate_thresholds, detect_window, scan_record, DetectConfig, Reconstructor, Thresholds};
use deepclean::eval::roc_auc as roc;
use deepclean::pca::{fit_pca, PcaModel};
use deepclean::preprocess::Standardizer;
use deepclean::signal_io::{read_waveform, write_waveform, WaveformRecord};
use deepclean::synth::{build_corpus, CorpusConfig};
use deepclean::vae::{train, LatentGaussian, TrainingHyper, VaeModel};
use deepclean::{preprocess::DatasetBundle, Error};
use pyo3::exceptions::{PyArithmeticError, PyOSError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::PyDict;

fn err(e: Error) -> PyErr {
    match e {
        Error::Io { .. } => PyOSError::new_err(e.to_string()),
        Error::Numerical(_) | Error::Training(_) => PyArithmeticError::new_err(e.to_string()),
        _ => PyValueError::new_err(e.to_string()),
    }
}

/// A sampled waveform; missing points are `None` in `values`.
#[pyclass(name = "WaveformRecord", module = "deepclean", skip_from_py_object)]
#[derive(Clone)]
struct PyRecord {
    inner: WaveformRecord,
}

#[pymethods]
impl PyRecord {
    #[new]
    #[pyo3(signature = (values, sampling_rate = 125.0))]
    fn new(values: Vec<Option<f64>>, sampling_rate: f64) -> PyResult<Self> {
        let mut inner = WaveformRecord::new(values.iter().map(|v| v.unwrap_or(0.0)).collect(), sampling_rate);
        inner.missing = values.iter().map(Option::is_none).collect();
        inner.validate().map_err(err)?;
        Ok(PyRecord { inner })
    }

    #[staticmethod]
    #[pyo3(signature = (path, sampling_rate = 125.0, gap_factor = 1.5))]
    fn read_csv(path: PathBuf, sampling_rate: f64, gap_factor: f64) -> PyResult<Self> {
        Ok(PyRecord {
            inner: read_waveform(&path, sampling_rate, gap_factor).map_err(err)?,
        })
    }

    fn write_csv(&self, path: PathBuf) -> PyResult<()> {
        write_waveform(&self.inner, &path).map_err(err)
    }

    #[getter]
    fn values(&self) -> Vec<Option<f64>> {
        self.inner
            .values
            .iter()
            .zip(&self.inner.missing)
            .map(|(&v, &m)| (!m).then_some(v))
            .collect()
    }

    #[getter]
    fn sampling_rate(&self) -> f64 {
        self.inner.sampling_rate
    }

    #[getter]
    fn segment_starts(&self) -> Vec<usize> {
        self.inner.segment_starts.clone()
    }

    fn __len__(&self) -> usize {
        self.inner.len()
    }

    fn __repr__(&self) -> String {
        format!(
            "WaveformRecord({} samples at {} Hz, {} missing)",
            self.inner.len(),
            self.inner.sampling_rate,
            self.inner.missing_count()
        )
    }
}

/// Builds a synthetic corpus. Returns a dict with `record`, `clean`,
/// `truth` (per-sample flags) and `artefacts`.
#[pyfunction]
#[pyo3(signature = (seed, duration_s = None, artefacts_per_hour = None))]
fn synth_corpus<'py>(
    py: Python<'py>,
    seed: u64,
    duration_s: Option<f64>,
    artefacts_per_hour: Option<f64>,
) -> PyResult<Bound<'py, PyDict>> {
    let mut cfg = CorpusConfig::default();
    if let Some(d) = duration_s {
        cfg.duration_s = d;
    }
    if let Some(r) = artefacts_per_hour {
        cfg.artefacts_per_hour = r;
    }
    let corpus = py.detach(|| build_corpus(&cfg, seed)).map_err(err)?;
    let out = PyDict::new(py);
    out.set_item("record", PyRecord { inner: corpus.record })?;
    out.set_item("clean", PyRecord { inner: corpus.clean })?;
    out.set_item("truth", corpus.truth.flags().to_vec())?;
    let artefacts: Vec<(String, usize, usize, f64)> = corpus
        .artefacts
        .iter()
        .map(|a| (a.kind.name().to_string(), a.start, a.duration, a.severity))
        .collect();
    out.set_item("artefacts", artefacts)?;
    Ok(out)
}

fn as_slices(windows: &[Vec<f64>]) -> Vec<&[f64]> {
    windows.iter().map(Vec::as_slice).collect()
}

#[pyclass(name = "PcaModel", module = "deepclean")]
struct PyPca {
    inner: PcaModel,
}

#[pymethods]
impl PyPca {
    /// Fits `k` components to equal-length windows.
    #[staticmethod]
    fn fit(windows: Vec<Vec<f64>>, k: usize) -> PyResult<Self> {
        Ok(PyPca {
            inner: fit_pca(&as_slices(&windows), k).map_err(err)?,
        })
    }

    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<Self> {
        Ok(PyPca {
            inner: PcaModel::load(&path).map_err(err)?,
        })
    }

    fn save(&self, path: PathBuf) -> PyResult<()> {
        self.inner.save(&path).map_err(err)
    }

    fn reconstruct(&self, x: Vec<f64>) -> PyResult<Vec<f64>> {
        self.inner.reconstruct(&x).map_err(err)
    }

    #[getter]
    fn k(&self) -> usize {
        self.inner.k()
    }

    #[getter]
    fn components(&self) -> Vec<Vec<f64>> {
        (0..self.inner.k()).map(|i| self.inner.component(i).to_vec()).collect()
    }

    #[getter]
    fn eigenvalues(&self) -> Vec<f64> {
        self.inner.eigenvalues.clone()
    }

    /// Sets the detection thresholds from training windows.
    #[pyo3(signature = (windows, sample_percentile = 90.0, window_percentile = 99.0))]
    fn calibrate(&mut self, windows: Vec<Vec<f64>>, sample_percentile: f64, window_percentile: f64) -> PyResult<(f64, f64)> {
        let t = calibrate(&self.inner, &windows, sample_percentile, window_percentile)?;
        self.inner.thresholds = Some(t);
        Ok((t.sample_threshold, t.window_threshold))
    }

    fn detect<'py>(&self, py: Python<'py>, x: Vec<f64>) -> PyResult<Bound<'py, PyDict>> {
        detect(py, &self.inner, self.inner.thresholds, &x)
    }
}

#[pyclass(name = "VaeModel", module = "deepclean")]
struct PyVae {
    inner: VaeModel,
}

#[pymethods]
impl PyVae {
    /// A freshly initialized model.
    #[new]
    #[pyo3(signature = (latent_dim, input_length = 1250, seed = 0))]
    fn new(latent_dim: usize, input_length: usize, seed: u64) -> PyResult<Self> {
        Ok(PyVae {
            inner: VaeModel::build(latent_dim, input_length, seed).map_err(err)?,
        })
    }

    /// Trains on a dataset directory written by `deepclean preprocess`, one
    /// restart per seed, keeping the best by validation loss.
    #[staticmethod]
    #[pyo3(signature = (data_dir, latent_dim, seeds, epochs = 50, batch_size = 16, learning_rate = 1e-3))]
    fn train(
        py: Python<'_>,
        data_dir: PathBuf,
        latent_dim: usize,
        seeds: Vec<u64>,
        epochs: usize,
        batch_size: usize,
        learning_rate: f64,
    ) -> PyResult<Self> {
        let hyper = TrainingHyper {
            batch_size,
            epochs,
            learning_rate,
        };
        let inner = py
            .detach(|| {
                let bundle = DatasetBundle::load(&data_dir)?;
                train(&bundle, latent_dim, &hyper, &seeds)
            })
            .map_err(err)?;
        Ok(PyVae { inner })
    }

    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<Self> {
        Ok(PyVae {
            inner: VaeModel::load(&path).map_err(err)?,
        })
    }

    fn save(&self, path: PathBuf) -> PyResult<()> {
        self.inner.save(&path).map_err(err)
    }

    #[getter]
    fn latent_dim(&self) -> usize {
        self.inner.latent_dim()
    }

    #[getter]
    fn input_length(&self) -> usize {
        self.inner.input_length()
    }

    #[getter]
    fn param_count(&self) -> usize {
        self.inner.params.len()
    }

    /// `(mu, log_var)` of the approximate posterior.
    fn encode(&self, x: Vec<f64>) -> PyResult<(Vec<f64>, Vec<f64>)> {
        let g = self.inner.encode(&x).map_err(err)?;
        Ok((g.mu, g.log_var))
    }

    fn decode(&self, z: Vec<f64>) -> PyResult<Vec<f64>> {
        self.inner.decode(&z).map_err(err)
    }

    fn reconstruct(&self, x: Vec<f64>) -> PyResult<Vec<f64>> {
        self.inner.reconstruct(&x).map_err(err)
    }

    /// `count` windows decoded from prior draws.
    #[pyo3(signature = (count, seed = 0))]
    fn generate(&self, count: usize, seed: u64) -> PyResult<Vec<Vec<f64>>> {
        self.inner.generate(count, seed).map_err(err)
    }

    #[pyo3(signature = (windows, sample_percentile = 90.0, window_percentile = 99.0))]
    fn calibrate(&mut self, windows: Vec<Vec<f64>>, sample_percentile: f64, window_percentile: f64) -> PyResult<(f64, f64)> {
        let t = calibrate(&self.inner, &windows, sample_percentile, window_percentile)?;
        self.inner.thresholds = Some(t);
        Ok((t.sample_threshold, t.window_threshold))
    }

    fn detect<'py>(&self, py: Python<'py>, x: Vec<f64>) -> PyResult<Bound<'py, PyDict>> {
        detect(py, &self.inner, self.inner.thresholds, &x)
    }

    /// Detects and imputes artefacts across a whole record. Needs a model
    /// trained or loaded with its standardizer and thresholds.
    fn scan<'py>(&self, py: Python<'py>, record: &PyRecord) -> PyResult<Bound<'py, PyDict>> {
        let thr = self.inner.thresholds.ok_or_else(|| PyValueError::new_err("model is not calibrated"))?;
        let std: Standardizer = self
            .inner
            .standardizer
            .ok_or_else(|| PyValueError::new_err("model has no standardizer"))?;
        let found = py.detach(|| scan_record(&self.inner, &std, &thr, &record.inner)).map_err(err)?;
        let out = PyDict::new(py);
        out.set_item("mask", found.mask.flags().to_vec())?;
        out.set_item("imputed", PyRecord { inner: found.imputed })?;
        let flagged: Vec<usize> = found.windows.iter().filter(|(_, r)| r.is_artefact).map(|(s, _)| *s).collect();
        out.set_item("flagged_windows", flagged)?;
        Ok(out)
    }
}

fn calibrate(rec: &dyn Reconstructor, windows: &[Vec<f64>], sample: f64, window: f64) -> PyResult<Thresholds> {
    let cfg = DetectConfig {
        sample_percentile: sample,
        window_percentile: window,
        ..DetectConfig::default()
    };
    calibrate_thresholds(rec, &as_slices(windows), &cfg).map_err(err)
}

fn detect<'py>(py: Python<'py>, rec: &dyn Reconstructor, thr: Option<Thresholds>, x: &[f64]) -> PyResult<Bound<'py, PyDict>> {
    let thr = thr.ok_or_else(|| PyValueError::new_err("model is not calibrated"))?;
    let r = detect_window(rec, &thr, x).map_err(err)?;
    let out = PyDict::new(py);
    out.set_item("sample_mse", r.sample_mse)?;
    out.set_item("is_artefact", r.is_artefact)?;
    out.set_item("timepoint_mask", r.timepoint_mask)?;
    out.set_item("reconstruction", r.reconstruction)?;
    out.set_item("imputed", r.imputed)?;
    Ok(out)
}

/// Closed-form KL divergence of a diagonal Gaussian from the standard normal.
#[pyfunction]
fn kl_to_standard_normal(mu: Vec<f64>, log_var: Vec<f64>) -> PyResult<f64> {
    if mu.len() != log_var.len() {
        return Err(PyValueError::new_err("mu and log_var differ in length"));
    }
    Ok(LatentGaussian { mu, log_var }.kl_to_standard_normal())
}

/// `(auc, [(fpr, tpr), ...])` with higher scores meaning positive.
#[pyfunction]
fn roc_auc(scores: Vec<f64>, labels: Vec<bool>) -> PyResult<(f64, Vec<(f64, f64)>)> {
    let c = roc(&scores, &labels).map_err(err)?;
    Ok((c.auc, c.points))
}

/// Runs the command line with `args` (without the program name) and
/// returns its exit code.
#[pyfunction]
fn run_cli(py: Python<'_>, args: Vec<String>) -> i32 {
    py.detach(|| deepclean::cli::run(std::iter::once("deepclean".to_string()).chain(args)))
}

#[pymodule]
#[pyo3(name = "deepclean")]
fn deepclean_module(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add("__version__", env!("CARGO_PKG_VERSION"))?;
    m.add_class::<PyRecord>()?;
    m.add_class::<PyPca>()?;
    m.add_class::<PyVae>()?;
    m.add_function(wrap_pyfunction!(synth_corpus, m)?)?;
    m.add_function(wrap_pyfunction!(kl_to_standard_normal, m)?)?;
    m.add_function(wrap_pyfunction!(roc_auc, m)?)?;
    m.add_function(wrap_pyfunction!(run_cli, m)?)?;
    Ok(())
}
