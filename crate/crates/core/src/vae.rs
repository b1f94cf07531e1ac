//! Convolutional variational autoencoder for fixed-length signal windows.
//!
//! Encoder: three convolutions alternated with two 5× max-pools, dropout,
//! then two parallel dense heads producing the mean and log-variance of a
//! diagonal Gaussian posterior. Decoder: dense, then the convolutions in
//! reverse with 5× upsampling (cropped back to the encoder lengths) and a
//! linear single-channel output. The likelihood is Gaussian with identity
//! covariance, so the decoder output is the reconstruction mean.

use std::ops::Range;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::detect::Thresholds;
use crate::error::{Error, Result};
use crate::model_io::{self, ContainerHeader};
use crate::nn::gradcheck::{Evaluation, Objective};
use crate::nn::layers::{derived_rng, LayerSpec, ParamStore, Sequential};
use crate::nn::reduce::tree_sum;
use crate::nn::{adam_step, AdamState, Mode};
use crate::preprocess::{DatasetBundle, Standardizer};

const POOL: usize = 5;
/// Samples per gradient work unit. Fixed so that the reduction tree, and
/// therefore the summed gradient, does not depend on the thread count.
const GRAD_CHUNK: usize = 4;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VaeArchitecture {
    pub input_length: usize,
    pub latent_dim: usize,
    /// Shared encoder trunk; it feeds two parallel `Dense { latent_dim }`
    /// heads (mean and log-variance).
    pub encoder_layers: Vec<LayerSpec>,
    pub decoder_layers: Vec<LayerSpec>,
    pub encoder_parameter_count: usize,
    pub decoder_parameter_count: usize,
    pub parameter_count: usize,
}

impl VaeArchitecture {
    fn layer_tables(latent_dim: usize, input_length: usize) -> Result<(Vec<LayerSpec>, Vec<LayerSpec>)> {
        if latent_dim == 0 {
            return Err(Error::Config("latent dimension must be at least 1".into()));
        }
        if input_length < POOL * POOL {
            return Err(Error::Shape(format!(
                "input length {input_length} is too short for two {POOL}x pooling stages"
            )));
        }
        let pooled1 = input_length.div_ceil(POOL);
        let pooled2 = pooled1.div_ceil(POOL);
        let flat = pooled2 * 32;
        let encoder = vec![
            LayerSpec::Conv1d { filters: 16, kernel_size: 5 },
            LayerSpec::Relu,
            LayerSpec::Maxpool1d { pool_size: POOL },
            LayerSpec::Conv1d { filters: 32, kernel_size: 5 },
            LayerSpec::Relu,
            LayerSpec::Maxpool1d { pool_size: POOL },
            LayerSpec::Conv1d { filters: 32, kernel_size: 3 },
            LayerSpec::Relu,
            LayerSpec::Dropout { rate: 0.1 },
            LayerSpec::Reshape { target_shape: vec![flat] },
        ];
        let decoder = vec![
            LayerSpec::Dense { units: flat },
            LayerSpec::Relu,
            LayerSpec::Reshape { target_shape: vec![pooled2, 32] },
            LayerSpec::Conv1d { filters: 32, kernel_size: 3 },
            LayerSpec::Relu,
            LayerSpec::Upsample1dCrop { factor: POOL, target_length: pooled1 },
            LayerSpec::Conv1d { filters: 16, kernel_size: 5 },
            LayerSpec::Relu,
            LayerSpec::Upsample1dCrop { factor: POOL, target_length: input_length },
            LayerSpec::Conv1d { filters: 1, kernel_size: 5 },
            LayerSpec::Reshape { target_shape: vec![input_length] },
        ];
        Ok((encoder, decoder))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LatentGaussian {
    pub mu: Vec<f64>,
    pub log_var: Vec<f64>,
}

impl LatentGaussian {
    /// Closed-form `KL(N(mu, diag(exp(log_var))) || N(0, I))`.
    pub fn kl_to_standard_normal(&self) -> f64 {
        0.5 * self
            .mu
            .iter()
            .zip(&self.log_var)
            .map(|(m, lv)| m * m + lv.exp() - 1.0 - lv)
            .sum::<f64>()
    }
}

/// `z = mu + exp(log_var / 2) * eps` with `eps ~ N(0, I)` drawn from `seed`.
pub fn reparameterize(g: &LatentGaussian, seed: u64) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let eps: Vec<f64> = (0..g.mu.len()).map(|_| StandardNormal.sample(&mut rng)).collect();
    reparameterize_with(g, &eps)
}

pub fn reparameterize_with(g: &LatentGaussian, eps: &[f64]) -> Vec<f64> {
    g.mu.iter()
        .zip(&g.log_var)
        .zip(eps)
        .map(|((m, lv), e)| m + (0.5 * lv).exp() * e)
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ElboTerms {
    pub loss: f64,
    pub recon: f64,
    pub kl: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingHyper {
    pub batch_size: usize,
    pub epochs: usize,
    pub learning_rate: f64,
}

impl Default for TrainingHyper {
    fn default() -> Self {
        TrainingHyper {
            batch_size: 64,
            epochs: 50,
            learning_rate: 1e-3,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RestartRecord {
    pub seed: u64,
    pub initial_validation_loss: f64,
    pub best_validation_loss: Option<f64>,
    pub best_epoch: usize,
    pub final_train_loss: Option<f64>,
    pub diverged: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingMeta {
    pub seed: u64,
    pub epochs: usize,
    pub final_train_loss: f64,
    pub final_validation_loss: f64,
    pub restart_index: usize,
    pub hyper: TrainingHyper,
    pub restarts: Vec<RestartRecord>,
}

#[derive(Debug, Clone)]
pub struct VaeModel {
    pub arch: VaeArchitecture,
    pub params: ParamStore,
    pub standardizer: Option<Standardizer>,
    pub training_meta: Option<TrainingMeta>,
    pub thresholds: Option<Thresholds>,
    trunk: Sequential,
    mu_head: Sequential,
    log_var_head: Sequential,
    decoder: Sequential,
}

/// Everything a reverse pass needs from one forward pass.
struct ForwardPass {
    trunk: crate::nn::layers::Activations,
    mu: crate::nn::layers::Activations,
    log_var: crate::nn::layers::Activations,
    decoder: crate::nn::layers::Activations,
    eps: Vec<f64>,
}

struct SampleGrad {
    terms: ElboTerms,
    grad: Vec<f64>,
}

impl VaeModel {
    /// Builds the fixed architecture with Glorot-uniform weights and zero
    /// biases drawn from `seed`.
    pub fn build(latent_dim: usize, input_length: usize, seed: u64) -> Result<Self> {
        let mut model = Self::skeleton(latent_dim, input_length)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for net in [&model.trunk, &model.mu_head, &model.log_var_head, &model.decoder] {
            net.init_glorot(&mut model.params.data, &mut rng);
        }
        Ok(model)
    }

    fn skeleton(latent_dim: usize, input_length: usize) -> Result<Self> {
        let (enc, dec) = VaeArchitecture::layer_tables(latent_dim, input_length)?;
        let mut store = ParamStore::new();
        let trunk = Sequential::build("encoder", &enc, vec![input_length, 1], &mut store)?;
        let flat = trunk.output_shape().to_vec();
        let head = [LayerSpec::Dense { units: latent_dim }];
        let mu_head = Sequential::build("encoder_mu", &head, flat.clone(), &mut store)?;
        let log_var_head = Sequential::build("encoder_log_var", &head, flat, &mut store)?;
        let decoder = Sequential::build("decoder", &dec, vec![latent_dim], &mut store)?;
        let encoder_parameter_count = store.count_with_prefix("encoder");
        let decoder_parameter_count = store.count_with_prefix("decoder");
        let arch = VaeArchitecture {
            input_length,
            latent_dim,
            encoder_layers: enc,
            decoder_layers: dec,
            encoder_parameter_count,
            decoder_parameter_count,
            parameter_count: store.len(),
        };
        Ok(VaeModel {
            arch,
            params: store,
            standardizer: None,
            training_meta: None,
            thresholds: None,
            trunk,
            mu_head,
            log_var_head,
            decoder,
        })
    }

    pub fn latent_dim(&self) -> usize {
        self.arch.latent_dim
    }

    pub fn input_length(&self) -> usize {
        self.arch.input_length
    }

    fn check_input(&self, x: &[f64]) -> Result<()> {
        if x.len() != self.arch.input_length {
            return Err(Error::Shape(format!(
                "window has {} samples, model expects {}",
                x.len(),
                self.arch.input_length
            )));
        }
        Ok(())
    }

    fn encode_with(&self, params: &[f64], x: &[f64], mode: Mode) -> Result<(crate::nn::layers::Activations, crate::nn::layers::Activations, crate::nn::layers::Activations)> {
        self.check_input(x)?;
        let trunk = self.trunk.forward(params, x, mode)?;
        let mu = self.mu_head.forward(params, trunk.output(), Mode::Inference)?;
        let log_var = self.log_var_head.forward(params, trunk.output(), Mode::Inference)?;
        Ok((trunk, mu, log_var))
    }

    /// Posterior parameters for `x`, dropout off.
    pub fn encode(&self, x: &[f64]) -> Result<LatentGaussian> {
        let (_, mu, log_var) = self.encode_with(&self.params.data, x, Mode::Inference)?;
        Ok(LatentGaussian {
            mu: mu.output().to_vec(),
            log_var: log_var.output().to_vec(),
        })
    }

    /// Reconstruction mean for latent code `z`.
    pub fn decode(&self, z: &[f64]) -> Result<Vec<f64>> {
        if z.len() != self.arch.latent_dim {
            return Err(Error::Shape(format!(
                "latent code has {} values, model expects {}",
                z.len(),
                self.arch.latent_dim
            )));
        }
        let acts = self.decoder.forward(&self.params.data, z, Mode::Inference)?;
        Ok(acts.output().to_vec())
    }

    /// `decode(encode(x).mu)`.
    pub fn reconstruct(&self, x: &[f64]) -> Result<Vec<f64>> {
        let g = self.encode(x)?;
        self.decode(&g.mu)
    }

    fn forward_pass(&self, params: &[f64], x: &[f64], eps: Vec<f64>, mode: Mode) -> Result<ForwardPass> {
        let (trunk, mu, log_var) = self.encode_with(params, x, mode)?;
        let g = LatentGaussian {
            mu: mu.output().to_vec(),
            log_var: log_var.output().to_vec(),
        };
        let z = reparameterize_with(&g, &eps);
        let decoder = self.decoder.forward(params, &z, Mode::Inference)?;
        Ok(ForwardPass {
            trunk,
            mu,
            log_var,
            decoder,
            eps,
        })
    }

    fn terms(pass: &ForwardPass, x: &[f64]) -> ElboTerms {
        let recon = 0.5
            * pass
                .decoder
                .output()
                .iter()
                .zip(x)
                .map(|(r, v)| (r - v) * (r - v))
                .sum::<f64>();
        let kl = LatentGaussian {
            mu: pass.mu.output().to_vec(),
            log_var: pass.log_var.output().to_vec(),
        }
        .kl_to_standard_normal();
        ElboTerms {
            loss: recon + kl,
            recon,
            kl,
        }
    }

    /// Negative ELBO for one window and its gradient with respect to every
    /// parameter, for a given noise vector `eps`.
    fn elbo_gradient(&self, params: &[f64], x: &[f64], eps: Vec<f64>, mode: Mode) -> Result<SampleGrad> {
        let pass = self.forward_pass(params, x, eps, mode)?;
        let terms = Self::terms(&pass, x);
        let mut grad = vec![0.0; params.len()];
        let d_recon: Vec<f64> = pass
            .decoder
            .output()
            .iter()
            .zip(x)
            .map(|(r, v)| r - v)
            .collect();
        let d_z = self.decoder.backward(params, &pass.decoder, d_recon, &mut grad);
        let mu = pass.mu.output();
        let lv = pass.log_var.output();
        let d_mu: Vec<f64> = d_z.iter().zip(mu).map(|(g, m)| g + m).collect();
        let d_lv: Vec<f64> = d_z
            .iter()
            .zip(lv)
            .zip(&pass.eps)
            .map(|((g, l), e)| g * e * 0.5 * (0.5 * l).exp() + 0.5 * (l.exp() - 1.0))
            .collect();
        let mut d_flat = self.mu_head.backward(params, &pass.mu, d_mu, &mut grad);
        let d_flat_lv = self.log_var_head.backward(params, &pass.log_var, d_lv, &mut grad);
        d_flat.iter_mut().zip(&d_flat_lv).for_each(|(a, b)| *a += b);
        self.trunk.backward(params, &pass.trunk, d_flat, &mut grad);
        Ok(SampleGrad { terms, grad })
    }

    /// Single-sample Monte Carlo estimate of the negative ELBO, with the
    /// noise and dropout masks drawn from `seed`.
    pub fn elbo_loss(&self, x: &[f64], seed: u64) -> Result<ElboTerms> {
        let eps = standard_normal_vec(self.arch.latent_dim, &mut derived_rng(seed, 1, 0));
        let pass = self.forward_pass(&self.params.data, x, eps, Mode::Train { seed })?;
        let terms = Self::terms(&pass, x);
        if !terms.loss.is_finite() {
            return Err(Error::Numerical(format!(
                "non-finite ELBO (recon {}, kl {})",
                terms.recon, terms.kl
            )));
        }
        Ok(terms)
    }

    /// Deterministic loss: `eps = 0` and dropout off.
    pub fn noise_free_loss(&self, x: &[f64]) -> Result<ElboTerms> {
        let eps = vec![0.0; self.arch.latent_dim];
        let pass = self.forward_pass(&self.params.data, x, eps, Mode::Inference)?;
        Ok(Self::terms(&pass, x))
    }

    pub fn mean_noise_free_loss(&self, windows: &[&[f64]]) -> Result<f64> {
        let losses: Vec<f64> = windows
            .par_iter()
            .map(|x| self.noise_free_loss(x).map(|t| t.loss))
            .collect::<Result<_>>()?;
        Ok(losses.iter().sum::<f64>() / losses.len().max(1) as f64)
    }

    /// Decodes `count` draws from the standard normal prior.
    pub fn generate(&self, count: usize, seed: u64) -> Result<Vec<Vec<f64>>> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..count)
            .map(|_| {
                let z = standard_normal_vec(self.arch.latent_dim, &mut rng);
                self.decode(&z)
            })
            .collect()
    }

    /// Gradient-check objective: negative ELBO of `x` with fixed noise and
    /// dropout off.
    pub fn elbo_objective<'a>(&'a self, x: &'a [f64], eps: Vec<f64>) -> ElboObjective<'a> {
        ElboObjective { model: self, x, eps }
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let meta = serde_json::to_value(VaeMeta {
            architecture: self.arch.clone(),
            standardizer: self.standardizer,
            training_meta: self.training_meta.clone(),
            thresholds: self.thresholds,
        })?;
        model_io::write_container(path, "vae", meta, &self.params.entries, &self.params.data)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let (header, blob) = model_io::read_container(path)?;
        Self::from_container(header, blob)
    }

    fn from_container(header: ContainerHeader, blob: Vec<f64>) -> Result<Self> {
        if header.kind != "vae" {
            return Err(Error::Format(format!("expected a vae model, found {:?}", header.kind)));
        }
        let meta: VaeMeta = serde_json::from_value(header.meta)?;
        let mut model = Self::skeleton(meta.architecture.latent_dim, meta.architecture.input_length)?;
        if model.params.entries != header.tensors {
            return Err(Error::ShapeConsistency(
                "tensor table does not match the architecture".into(),
            ));
        }
        if meta.architecture != model.arch {
            return Err(Error::ShapeConsistency(
                "stored architecture differs from the fixed layer table".into(),
            ));
        }
        model.params.data = blob;
        if model.params.data.iter().any(|v| !v.is_finite()) {
            return Err(Error::Numerical("model holds non-finite parameters".into()));
        }
        model.standardizer = meta.standardizer;
        model.training_meta = meta.training_meta;
        model.thresholds = meta.thresholds;
        Ok(model)
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct VaeMeta {
    architecture: VaeArchitecture,
    standardizer: Option<Standardizer>,
    training_meta: Option<TrainingMeta>,
    #[serde(default)]
    thresholds: Option<Thresholds>,
}

fn standard_normal_vec(n: usize, rng: &mut ChaCha8Rng) -> Vec<f64> {
    (0..n).map(|_| StandardNormal.sample(rng)).collect()
}

pub fn build_model(latent_dim: usize, input_length: usize, seed: u64) -> Result<VaeModel> {
    VaeModel::build(latent_dim, input_length, seed)
}

pub struct ElboObjective<'a> {
    model: &'a VaeModel,
    x: &'a [f64],
    eps: Vec<f64>,
}

impl Objective for ElboObjective<'_> {
    fn groups(&self) -> Vec<(String, Range<usize>)> {
        self.model
            .params
            .entries
            .iter()
            .map(|e| (e.name.clone(), e.range()))
            .collect()
    }

    fn evaluate(&self, params: &[f64], with_gradient: bool) -> Result<Evaluation> {
        let m = self.model;
        let (loss, gradient, pass) = if with_gradient {
            let sg = m.elbo_gradient(params, self.x, self.eps.clone(), Mode::Inference)?;
            let pass = m.forward_pass(params, self.x, self.eps.clone(), Mode::Inference)?;
            (sg.terms.loss, Some(sg.grad), pass)
        } else {
            let pass = m.forward_pass(params, self.x, self.eps.clone(), Mode::Inference)?;
            (VaeModel::terms(&pass, self.x).loss, None, pass)
        };
        let mut pattern = Vec::new();
        m.trunk.activation_pattern(&pass.trunk, &mut pattern);
        m.decoder.activation_pattern(&pass.decoder, &mut pattern);
        Ok(Evaluation {
            loss,
            gradient,
            pattern,
        })
    }
}

/// Trains one model per seed and returns the one with the lowest
/// validation loss.
///
/// Each restart runs mini-batch Adam on the mean single-sample negative
/// ELBO, evaluates the noise-free validation loss after every epoch and
/// keeps its best epoch. A restart whose loss turns non-finite is recorded
/// as diverged and skipped.
pub fn train(
    bundle: &DatasetBundle,
    latent_dim: usize,
    hyper: &TrainingHyper,
    seeds: &[u64],
) -> Result<VaeModel> {
    train_with_progress(bundle, latent_dim, hyper, seeds, |_| {})
}

/// Progress notification emitted after every epoch.
#[derive(Debug, Clone, Copy)]
pub struct EpochProgress {
    pub restart: usize,
    pub epoch: usize,
    pub train_loss: f64,
    pub validation_loss: f64,
}

pub fn train_with_progress(
    bundle: &DatasetBundle,
    latent_dim: usize,
    hyper: &TrainingHyper,
    seeds: &[u64],
    mut progress: impl FnMut(EpochProgress),
) -> Result<VaeModel> {
    if bundle.train.is_empty() {
        return Err(Error::Training("training set is empty".into()));
    }
    if seeds.is_empty() || hyper.batch_size == 0 {
        return Err(Error::Config("need at least one seed and a positive batch size".into()));
    }
    let train: Vec<&[f64]> = bundle.train.iter().map(|w| w.values.as_slice()).collect();
    let validation: Vec<&[f64]> = if bundle.validation.is_empty() {
        train.clone()
    } else {
        bundle.validation.iter().map(|w| w.values.as_slice()).collect()
    };

    let mut records = Vec::with_capacity(seeds.len());
    let mut best: Option<(usize, f64, VaeModel, Option<f64>)> = None;
    for (restart, &seed) in seeds.iter().enumerate() {
        let mut model = VaeModel::build(latent_dim, bundle.window_len, seed)?;
        model.standardizer = Some(bundle.standardizer);
        let initial = model.mean_noise_free_loss(&validation)?;
        let mut record = RestartRecord {
            seed,
            initial_validation_loss: initial,
            best_validation_loss: None,
            best_epoch: 0,
            final_train_loss: None,
            diverged: false,
        };
        let mut best_params = model.params.data.clone();
        let mut best_val = if initial.is_finite() { initial } else { f64::INFINITY };
        let mut best_train: Option<f64> = None;
        let mut adam = AdamState::new(model.params.len(), hyper.learning_rate);
        let mut order: Vec<usize> = (0..train.len()).collect();

        'epochs: for epoch in 1..=hyper.epochs {
            let mut shuffle_rng = derived_rng(seed, 2, epoch as u64);
            order.shuffle(&mut shuffle_rng);
            let mut epoch_loss = 0.0;
            for (b, batch) in order.chunks(hyper.batch_size).enumerate() {
                let step_id = ((epoch as u64) << 32) | b as u64;
                let (loss, grad) = batch_gradient(&model, &train, batch, seed, step_id)?;
                if !loss.is_finite() || grad.iter().any(|g| !g.is_finite()) {
                    record.diverged = true;
                    break 'epochs;
                }
                epoch_loss += loss * batch.len() as f64;
                adam_step(&mut model.params.data, &grad, &mut adam)?;
            }
            let train_loss = epoch_loss / train.len() as f64;
            let val = model.mean_noise_free_loss(&validation)?;
            if !val.is_finite() {
                record.diverged = true;
                break;
            }
            record.final_train_loss = Some(train_loss);
            progress(EpochProgress {
                restart,
                epoch,
                train_loss,
                validation_loss: val,
            });
            if val < best_val {
                best_val = val;
                best_params.copy_from_slice(&model.params.data);
                record.best_epoch = epoch;
                best_train = Some(train_loss);
            }
        }
        if record.diverged {
            records.push(record);
            continue;
        }
        record.best_validation_loss = Some(best_val);
        model.params.data = best_params;
        if best.as_ref().is_none_or(|(_, v, _, _)| best_val < *v) {
            best = Some((restart, best_val, model, best_train));
        }
        records.push(record);
    }

    let Some((restart_index, val, mut model, train_loss)) = best else {
        return Err(Error::Training(format!(
            "all {} restarts diverged",
            seeds.len()
        )));
    };
    model.training_meta = Some(TrainingMeta {
        seed: seeds[restart_index],
        epochs: hyper.epochs,
        final_train_loss: train_loss.unwrap_or(f64::NAN),
        final_validation_loss: val,
        restart_index,
        hyper: hyper.clone(),
        restarts: records,
    });
    Ok(model)
}

/// Mean loss and mean gradient over one mini-batch. Work is split into
/// fixed-size chunks that run in parallel and are combined by a fixed
/// pairwise tree, so the result is bit-identical for any thread count.
fn batch_gradient(
    model: &VaeModel,
    train: &[&[f64]],
    batch: &[usize],
    seed: u64,
    step_id: u64,
) -> Result<(f64, Vec<f64>)> {
    let n_params = model.params.len();
    let latent = model.arch.latent_dim;
    let chunks: Vec<(usize, &[usize])> = batch.chunks(GRAD_CHUNK).enumerate().collect();
    let partials: Vec<(f64, Vec<f64>)> = chunks
        .par_iter()
        .map(|(c, idx)| {
            let mut grad = vec![0.0; n_params];
            let mut loss = 0.0;
            for (k, &i) in idx.iter().enumerate() {
                let slot = (c * GRAD_CHUNK + k) as u64;
                let mut rng = derived_rng(seed, 3, (step_id << 8) | slot);
                let eps = standard_normal_vec(latent, &mut rng);
                let dropout_seed = rand::Rng::random::<u64>(&mut rng);
                let sg = model.elbo_gradient(
                    &model.params.data,
                    train[i],
                    eps,
                    Mode::Train { seed: dropout_seed },
                )?;
                loss += sg.terms.loss;
                grad.iter_mut().zip(&sg.grad).for_each(|(a, b)| *a += b);
            }
            Ok((loss, grad))
        })
        .collect::<Result<_>>()?;
    let loss: f64 = partials.iter().map(|(l, _)| l).sum();
    let mut grad = tree_sum(partials.into_iter().map(|(_, g)| g).collect()).unwrap_or_default();
    let scale = 1.0 / batch.len() as f64;
    grad.iter_mut().for_each(|g| *g *= scale);
    Ok((loss * scale, grad))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parameter_counts_at_latent_five() {
        let m = VaeModel::build(5, 1250, 0).unwrap();
        assert_eq!(m.arch.encoder_parameter_count, 21_802);
        assert_eq!(m.arch.decoder_parameter_count, 15_361);
        assert_eq!(m.arch.parameter_count, 21_802 + 15_361);
    }

    #[test]
    fn build_is_deterministic_and_validates_latent() {
        let a = VaeModel::build(3, 1250, 42).unwrap();
        let b = VaeModel::build(3, 1250, 42).unwrap();
        let c = VaeModel::build(3, 1250, 43).unwrap();
        assert_eq!(a.params, b.params);
        assert_ne!(a.params, c.params);
        assert!(matches!(VaeModel::build(0, 1250, 0), Err(Error::Config(_))));
        assert!(matches!(VaeModel::build(2, 20, 0), Err(Error::Shape(_))));
    }

    #[test]
    fn encode_decode_shapes() {
        let m = VaeModel::build(4, 1250, 1).unwrap();
        let x: Vec<f64> = (0..1250).map(|i| (i as f64 * 0.05).sin()).collect();
        let g = m.encode(&x).unwrap();
        assert_eq!((g.mu.len(), g.log_var.len()), (4, 4));
        assert_eq!(m.encode(&x).unwrap(), g);
        assert_eq!(m.decode(&g.mu).unwrap().len(), 1250);
        assert!(m.encode(&x[..1000]).is_err());
        assert!(m.decode(&[0.0; 3]).is_err());
    }

    #[test]
    fn encoder_is_locally_continuous() {
        let m = VaeModel::build(5, 1250, 2).unwrap();
        let x: Vec<f64> = (0..1250).map(|i| (i as f64 * 0.05).sin()).collect();
        let mut y = x.clone();
        y[600] += 1e-6;
        let a = m.encode(&x).unwrap();
        let b = m.encode(&y).unwrap();
        for (p, q) in a.mu.iter().zip(&b.mu) {
            assert!((p - q).abs() < 1e-3);
        }
    }

    #[test]
    fn reparameterization_limits() {
        let g = LatentGaussian {
            mu: vec![0.5, -1.0],
            log_var: vec![0.3, -0.2],
        };
        assert_eq!(reparameterize_with(&g, &[0.0, 0.0]), g.mu);
        let tight = LatentGaussian {
            mu: g.mu.clone(),
            log_var: vec![-50.0; 2],
        };
        for (z, m) in reparameterize(&tight, 9).iter().zip(&g.mu) {
            assert!((z - m).abs() < 1e-10);
        }
    }

    #[test]
    fn reparameterized_moments() {
        let g = LatentGaussian {
            mu: vec![0.7],
            log_var: vec![-0.4],
        };
        let n = 100_000;
        let draws: Vec<f64> = (0..n).map(|s| reparameterize(&g, s)[0]).collect();
        let mean = draws.iter().sum::<f64>() / n as f64;
        let var = draws.iter().map(|z| (z - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
        assert!((mean - 0.7).abs() < 0.02 * 0.7);
        assert!((var - (-0.4f64).exp()).abs() < 0.02 * (-0.4f64).exp());
    }

    #[test]
    fn kl_closed_form_values() {
        let prior = LatentGaussian {
            mu: vec![0.0; 3],
            log_var: vec![0.0; 3],
        };
        assert_eq!(prior.kl_to_standard_normal(), 0.0);
        let shifted = LatentGaussian {
            mu: vec![1.0],
            log_var: vec![0.0],
        };
        assert_eq!(shifted.kl_to_standard_normal(), 0.5);
    }

    #[test]
    fn elbo_terms_add_up() {
        let m = VaeModel::build(2, 250, 3).unwrap();
        let x: Vec<f64> = (0..250).map(|i| (i as f64 * 0.2).cos()).collect();
        let t = m.elbo_loss(&x, 4).unwrap();
        assert!((t.loss - (t.recon + t.kl)).abs() < 1e-12);
        assert!(t.kl >= 0.0 && t.recon >= 0.0);
        assert_eq!(m.elbo_loss(&x, 4).unwrap(), t);
    }

    #[test]
    fn generate_shapes_and_determinism() {
        let m = VaeModel::build(3, 250, 5).unwrap();
        let a = m.generate(4, 1).unwrap();
        assert_eq!(a.len(), 4);
        assert!(a.iter().all(|s| s.len() == 250));
        assert_eq!(a, m.generate(4, 1).unwrap());
    }
}
