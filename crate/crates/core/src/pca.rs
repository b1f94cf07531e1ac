//! Principal-component reconstruction baseline.

use std::path::Path;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::detect::Thresholds;
use crate::error::{Error, Result};
use crate::model_io;
use crate::preprocess::Standardizer;
use crate::nn::ParamEntry;

#[derive(Debug, Clone, PartialEq)]
pub struct PcaModel {
    pub mean_vector: Vec<f64>,
    /// Row-major `[k, dim]`, orthonormal rows in descending eigenvalue order.
    pub components: Vec<f64>,
    pub eigenvalues: Vec<f64>,
    pub standardizer: Option<Standardizer>,
    pub thresholds: Option<Thresholds>,
}

#[derive(Debug, Serialize, Deserialize)]
struct PcaMeta {
    k: usize,
    input_length: usize,
    #[serde(default)]
    standardizer: Option<Standardizer>,
    #[serde(default)]
    thresholds: Option<Thresholds>,
}

impl PcaModel {
    pub fn k(&self) -> usize {
        self.eigenvalues.len()
    }

    pub fn dim(&self) -> usize {
        self.mean_vector.len()
    }

    pub fn component(&self, i: usize) -> &[f64] {
        let d = self.dim();
        &self.components[i * d..(i + 1) * d]
    }

    /// `mean + sum_i <x - mean, c_i> c_i`.
    pub fn reconstruct(&self, x: &[f64]) -> Result<Vec<f64>> {
        if x.len() != self.dim() {
            return Err(Error::Shape(format!(
                "window has {} samples, model expects {}",
                x.len(),
                self.dim()
            )));
        }
        let centred: Vec<f64> = x.iter().zip(&self.mean_vector).map(|(a, m)| a - m).collect();
        let mut out = self.mean_vector.clone();
        for i in 0..self.k() {
            let c = self.component(i);
            let coef: f64 = centred.iter().zip(c).map(|(a, b)| a * b).sum();
            out.iter_mut().zip(c).for_each(|(o, cv)| *o += coef * cv);
        }
        Ok(out)
    }

    fn tensors(&self) -> Vec<ParamEntry> {
        let (k, d) = (self.k(), self.dim());
        vec![
            ParamEntry { name: "mean_vector".into(), shape: vec![d], offset: 0 },
            ParamEntry { name: "components".into(), shape: vec![k, d], offset: d },
            ParamEntry { name: "eigenvalues".into(), shape: vec![k], offset: d + k * d },
        ]
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let meta = serde_json::to_value(PcaMeta {
            k: self.k(),
            input_length: self.dim(),
            standardizer: self.standardizer,
            thresholds: self.thresholds,
        })?;
        let mut blob = self.mean_vector.clone();
        blob.extend_from_slice(&self.components);
        blob.extend_from_slice(&self.eigenvalues);
        model_io::write_container(path, "pca", meta, &self.tensors(), &blob)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let (header, blob) = model_io::read_container(path)?;
        if header.kind != "pca" {
            return Err(Error::Format(format!("expected a pca model, found {:?}", header.kind)));
        }
        let meta: PcaMeta = serde_json::from_value(header.meta)?;
        let (k, d) = (meta.k, meta.input_length);
        let model = PcaModel {
            mean_vector: vec![0.0; d],
            components: Vec::new(),
            eigenvalues: vec![0.0; k],
            standardizer: None,
            thresholds: None,
        };
        if model.tensors() != header.tensors || blob.len() != d + k * d + k {
            return Err(Error::ShapeConsistency(
                "tensor table does not match the pca layout".into(),
            ));
        }
        Ok(PcaModel {
            mean_vector: blob[..d].to_vec(),
            components: blob[d..d + k * d].to_vec(),
            eigenvalues: blob[d + k * d..].to_vec(),
            standardizer: meta.standardizer,
            thresholds: meta.thresholds,
        })
    }
}

/// Top-`k` principal components of the windows (per-time-point centring),
/// from a thin SVD of the centred data matrix. Each component's largest
/// magnitude entry is made positive.
pub fn fit_pca(windows: &[&[f64]], k: usize) -> Result<PcaModel> {
    let n = windows.len();
    let d = windows.first().map_or(0, |w| w.len());
    if n == 0 || d == 0 {
        return Err(Error::InvalidInput("no training windows".into()));
    }
    if windows.iter().any(|w| w.len() != d) {
        return Err(Error::Shape("training windows differ in length".into()));
    }
    if k == 0 || k > n.min(d) {
        return Err(Error::Config(format!(
            "k = {k} outside [1, {}] for {n} windows of length {d}",
            n.min(d)
        )));
    }
    let mut mean = vec![0.0; d];
    for w in windows {
        mean.iter_mut().zip(*w).for_each(|(m, v)| *m += v);
    }
    mean.iter_mut().for_each(|m| *m /= n as f64);
    let data = DMatrix::from_fn(n, d, |i, j| windows[i][j] - mean[j]);
    let svd = data.svd(false, true);
    let v_t = svd
        .v_t
        .ok_or_else(|| Error::Numerical("SVD did not converge".into()))?;
    let mut order: Vec<usize> = (0..svd.singular_values.len()).collect();
    order.sort_by(|&a, &b| svd.singular_values[b].total_cmp(&svd.singular_values[a]));
    let denom = (n.max(2) - 1) as f64;
    let mut components = Vec::with_capacity(k * d);
    let mut eigenvalues = Vec::with_capacity(k);
    for &idx in order.iter().take(k) {
        let mut row: Vec<f64> = v_t.row(idx).iter().copied().collect();
        let norm = row.iter().map(|v| v * v).sum::<f64>().sqrt();
        row.iter_mut().for_each(|v| *v /= norm);
        let pivot = row
            .iter()
            .enumerate()
            .fold((0, 0.0f64), |best, (i, v)| if v.abs() > best.1.abs() { (i, *v) } else { best });
        if pivot.1 < 0.0 {
            row.iter_mut().for_each(|v| *v = -*v);
        }
        components.extend(row);
        let s = svd.singular_values[idx];
        eigenvalues.push(s * s / denom);
    }
    Ok(PcaModel {
        mean_vector: mean,
        components,
        eigenvalues,
        standardizer: None,
        thresholds: None,
    })
}
