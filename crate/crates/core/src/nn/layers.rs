//! Layer specifications and sequential stacks over a flat parameter store.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::ops::{self, Mode};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum LayerSpec {
    Conv1d { filters: usize, kernel_size: usize },
    Maxpool1d { pool_size: usize },
    Upsample1dCrop { factor: usize, target_length: usize },
    Dense { units: usize },
    Dropout { rate: f64 },
    Relu,
    Reshape { target_shape: Vec<usize> },
}

impl LayerSpec {
    pub fn validate(&self) -> Result<()> {
        let ok = match self {
            LayerSpec::Conv1d {
                filters,
                kernel_size,
            } => *filters > 0 && *kernel_size > 0,
            LayerSpec::Maxpool1d { pool_size } => *pool_size > 0,
            LayerSpec::Upsample1dCrop {
                factor,
                target_length,
            } => *factor > 0 && *target_length > 0,
            LayerSpec::Dense { units } => *units > 0,
            LayerSpec::Dropout { rate } => (0.0..1.0).contains(rate),
            LayerSpec::Relu => true,
            LayerSpec::Reshape { target_shape } => target_shape.iter().all(|&d| d > 0),
        };
        if ok {
            Ok(())
        } else {
            Err(Error::Config(format!("invalid layer parameters {self:?}")))
        }
    }
}

/// Named parameter tensor inside a [`ParamStore`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParamEntry {
    pub name: String,
    pub shape: Vec<usize>,
    pub offset: usize,
}

impl ParamEntry {
    pub fn len(&self) -> usize {
        self.shape.iter().product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn range(&self) -> std::ops::Range<usize> {
        self.offset..self.offset + self.len()
    }
}

/// All trainable parameters of a model in one contiguous buffer, so that
/// gradients, optimizer moments and serialization share one layout.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ParamStore {
    pub entries: Vec<ParamEntry>,
    pub data: Vec<f64>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    fn register(&mut self, name: String, shape: Vec<usize>) -> usize {
        let offset = self.data.len();
        let entry = ParamEntry {
            name,
            shape,
            offset,
        };
        self.data.resize(offset + entry.len(), 0.0);
        self.entries.push(entry);
        offset
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn get(&self, name: &str) -> Option<&[f64]> {
        self.entries
            .iter()
            .find(|e| e.name == name)
            .map(|e| &self.data[e.range()])
    }

    pub fn count_with_prefix(&self, prefix: &str) -> usize {
        self.entries
            .iter()
            .filter(|e| e.name.starts_with(prefix))
            .map(ParamEntry::len)
            .sum()
    }
}

#[derive(Debug, Clone, PartialEq)]
struct Layer {
    spec: LayerSpec,
    in_shape: Vec<usize>,
    out_shape: Vec<usize>,
    /// Offset of the weight tensor; the bias follows it directly.
    weight: Option<(usize, usize)>,
    bias: Option<(usize, usize)>,
}

/// Ordered stack of layers with statically checked shapes.
#[derive(Debug, Clone, PartialEq)]
pub struct Sequential {
    layers: Vec<Layer>,
    in_shape: Vec<usize>,
}

/// Intermediate values of one forward pass, kept for the reverse pass.
#[derive(Debug, Clone)]
pub struct Activations {
    /// `values[0]` is the input, `values[i + 1]` the output of layer `i`.
    pub values: Vec<Vec<f64>>,
    aux: Vec<Aux>,
}

#[derive(Debug, Clone)]
enum Aux {
    None,
    Argmax(Vec<usize>),
    Scales(Vec<f64>),
}

impl Activations {
    pub fn output(&self) -> &[f64] {
        self.values.last().expect("activations hold the input")
    }
}

fn signal(shape: &[usize], what: &LayerSpec) -> Result<(usize, usize)> {
    match shape {
        &[l, c] => Ok((l, c)),
        s => Err(Error::Shape(format!("{what:?} needs a [length, channels] input, got {s:?}"))),
    }
}

impl Sequential {
    /// Registers the parameters of every layer under `prefix` in `store`.
    pub fn build(
        prefix: &str,
        specs: &[LayerSpec],
        in_shape: Vec<usize>,
        store: &mut ParamStore,
    ) -> Result<Self> {
        let mut shape = in_shape.clone();
        let mut layers = Vec::with_capacity(specs.len());
        for (i, spec) in specs.iter().enumerate() {
            spec.validate()?;
            let (out_shape, weight_shape, bias_len) = match spec {
                LayerSpec::Conv1d {
                    filters,
                    kernel_size,
                } => {
                    let (l, c) = signal(&shape, spec)?;
                    (vec![l, *filters], Some(vec![*kernel_size, c, *filters]), *filters)
                }
                LayerSpec::Maxpool1d { pool_size } => {
                    let (l, c) = signal(&shape, spec)?;
                    (vec![l.div_ceil(*pool_size), c], None, 0)
                }
                LayerSpec::Upsample1dCrop {
                    factor,
                    target_length,
                } => {
                    let (l, c) = signal(&shape, spec)?;
                    if *target_length > factor * l {
                        return Err(Error::Shape(format!(
                            "upsampling {l} steps by {factor} cannot reach {target_length}"
                        )));
                    }
                    (vec![*target_length, c], None, 0)
                }
                LayerSpec::Dense { units } => {
                    if shape.len() != 1 {
                        return Err(Error::Shape(format!(
                            "dense layer needs a flat input, got {shape:?}"
                        )));
                    }
                    (vec![*units], Some(vec![shape[0], *units]), *units)
                }
                LayerSpec::Dropout { .. } | LayerSpec::Relu => (shape.clone(), None, 0),
                LayerSpec::Reshape { target_shape } => {
                    let from: usize = shape.iter().product();
                    let to: usize = target_shape.iter().product();
                    if from != to {
                        return Err(Error::Shape(format!(
                            "cannot reshape {shape:?} into {target_shape:?}"
                        )));
                    }
                    (target_shape.clone(), None, 0)
                }
            };
            let (weight, bias) = match weight_shape {
                Some(ws) => {
                    let wlen = ws.iter().product();
                    let kind = match spec {
                        LayerSpec::Conv1d { .. } => "conv",
                        _ => "dense",
                    };
                    let w = store.register(format!("{prefix}.{i}_{kind}.weight"), ws);
                    let b = store.register(format!("{prefix}.{i}_{kind}.bias"), vec![bias_len]);
                    (Some((w, wlen)), Some((b, bias_len)))
                }
                None => (None, None),
            };
            layers.push(Layer {
                spec: spec.clone(),
                in_shape: shape,
                out_shape: out_shape.clone(),
                weight,
                bias,
            });
            shape = out_shape;
        }
        Ok(Sequential { layers, in_shape })
    }

    pub fn input_shape(&self) -> &[usize] {
        &self.in_shape
    }

    pub fn output_shape(&self) -> &[usize] {
        self.layers
            .last()
            .map_or(&self.in_shape, |l| &l.out_shape)
    }

    pub fn specs(&self) -> Vec<LayerSpec> {
        self.layers.iter().map(|l| l.spec.clone()).collect()
    }

    /// Glorot-uniform weights and zero biases.
    pub fn init_glorot(&self, params: &mut [f64], rng: &mut ChaCha8Rng) {
        for layer in &self.layers {
            let Some((w, wlen)) = layer.weight else {
                continue;
            };
            let (fan_in, fan_out) = match &layer.spec {
                LayerSpec::Conv1d {
                    filters,
                    kernel_size,
                } => (kernel_size * layer.in_shape[1], kernel_size * filters),
                LayerSpec::Dense { units } => (layer.in_shape[0], *units),
                _ => unreachable!("only conv and dense layers own weights"),
            };
            let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
            for p in &mut params[w..w + wlen] {
                *p = rng.random_range(-limit..limit);
            }
            if let Some((b, blen)) = layer.bias {
                params[b..b + blen].iter_mut().for_each(|p| *p = 0.0);
            }
        }
    }

    pub fn forward(&self, params: &[f64], input: &[f64], mode: Mode) -> Result<Activations> {
        let expected: usize = self.in_shape.iter().product();
        if input.len() != expected {
            return Err(Error::Shape(format!(
                "input has {} values, network expects {:?}",
                input.len(),
                self.in_shape
            )));
        }
        let mut values = Vec::with_capacity(self.layers.len() + 1);
        let mut aux = Vec::with_capacity(self.layers.len());
        values.push(input.to_vec());
        for (i, layer) in self.layers.iter().enumerate() {
            let x = values.last().unwrap();
            let (y, a) = self.layer_forward(i, layer, params, x, mode);
            values.push(y);
            aux.push(a);
        }
        Ok(Activations { values, aux })
    }

    fn layer_forward(
        &self,
        index: usize,
        layer: &Layer,
        params: &[f64],
        x: &[f64],
        mode: Mode,
    ) -> (Vec<f64>, Aux) {
        match &layer.spec {
            LayerSpec::Conv1d {
                filters,
                kernel_size,
            } => {
                let (len, cin) = (layer.in_shape[0], layer.in_shape[1]);
                let (w, wl) = layer.weight.unwrap();
                let (b, bl) = layer.bias.unwrap();
                let mut out = vec![0.0; len * filters];
                ops::conv1d_raw(
                    x,
                    len,
                    cin,
                    &params[w..w + wl],
                    *kernel_size,
                    *filters,
                    &params[b..b + bl],
                    &mut out,
                );
                (out, Aux::None)
            }
            LayerSpec::Maxpool1d { pool_size } => {
                let (out, arg) = ops::maxpool_raw(x, layer.in_shape[0], layer.in_shape[1], *pool_size);
                (out, Aux::Argmax(arg))
            }
            LayerSpec::Upsample1dCrop {
                factor,
                target_length,
            } => (
                ops::upsample_raw(x, layer.in_shape[0], layer.in_shape[1], *factor, *target_length),
                Aux::None,
            ),
            LayerSpec::Dense { units } => {
                let (w, wl) = layer.weight.unwrap();
                let (b, bl) = layer.bias.unwrap();
                let mut out = vec![0.0; *units];
                ops::dense_raw(x, &params[w..w + wl], &params[b..b + bl], &mut out);
                (out, Aux::None)
            }
            LayerSpec::Dropout { rate } => match mode {
                Mode::Train { seed } if *rate > 0.0 => {
                    let layer_seed = seed ^ (index as u64).wrapping_mul(0x9e37_79b9_7f4a_7c15);
                    let scales = ops::dropout_scales(x.len(), *rate, layer_seed);
                    let y = x.iter().zip(&scales).map(|(a, s)| a * s).collect();
                    (y, Aux::Scales(scales))
                }
                _ => (x.to_vec(), Aux::None),
            },
            LayerSpec::Relu => (x.iter().map(|&v| v.max(0.0)).collect(), Aux::None),
            LayerSpec::Reshape { .. } => (x.to_vec(), Aux::None),
        }
    }

    /// Reverse pass. Parameter gradients are added into `grads` (same layout
    /// as the parameter store); the input gradient is returned.
    pub fn backward(
        &self,
        params: &[f64],
        acts: &Activations,
        grad_output: Vec<f64>,
        grads: &mut [f64],
    ) -> Vec<f64> {
        let mut g = grad_output;
        for (i, layer) in self.layers.iter().enumerate().rev() {
            let x = &acts.values[i];
            g = match &layer.spec {
                LayerSpec::Conv1d {
                    filters,
                    kernel_size,
                } => {
                    let (w, wl) = layer.weight.unwrap();
                    let (b, bl) = layer.bias.unwrap();
                    let (gw, gb) = grads.split_at_mut(b);
                    ops::conv1d_backward_raw(
                        x,
                        layer.in_shape[0],
                        layer.in_shape[1],
                        &params[w..w + wl],
                        *kernel_size,
                        *filters,
                        &g,
                        &mut gw[w..w + wl],
                        &mut gb[..bl],
                    )
                }
                LayerSpec::Maxpool1d { .. } => {
                    let Aux::Argmax(arg) = &acts.aux[i] else {
                        unreachable!("pooling records its argmax")
                    };
                    let mut gi = vec![0.0; x.len()];
                    for (gv, &a) in g.iter().zip(arg) {
                        gi[a] += gv;
                    }
                    gi
                }
                LayerSpec::Upsample1dCrop {
                    factor,
                    target_length,
                } => ops::upsample_backward_raw(
                    &g,
                    layer.in_shape[0],
                    layer.in_shape[1],
                    *factor,
                    *target_length,
                ),
                LayerSpec::Dense { .. } => {
                    let (w, wl) = layer.weight.unwrap();
                    let (b, bl) = layer.bias.unwrap();
                    let (gw, gb) = grads.split_at_mut(b);
                    ops::dense_backward_raw(x, &params[w..w + wl], &g, &mut gw[w..w + wl], &mut gb[..bl])
                }
                LayerSpec::Dropout { .. } => match &acts.aux[i] {
                    Aux::Scales(s) => g.iter().zip(s).map(|(a, b)| a * b).collect(),
                    _ => g,
                },
                LayerSpec::Relu => g
                    .iter()
                    .zip(x)
                    .map(|(&gv, &xv)| if xv > 0.0 { gv } else { 0.0 })
                    .collect(),
                LayerSpec::Reshape { .. } => g,
            };
        }
        g
    }

    /// Appends the branch decisions of a forward pass (ReLU signs and pool
    /// argmax positions) to `out`. Two parameter settings with the same
    /// pattern lie in the same smooth piece of the network function.
    pub fn activation_pattern(&self, acts: &Activations, out: &mut Vec<u64>) {
        for (i, layer) in self.layers.iter().enumerate() {
            match (&layer.spec, &acts.aux[i]) {
                (LayerSpec::Relu, _) => {
                    for chunk in acts.values[i].chunks(64) {
                        let bits = chunk
                            .iter()
                            .enumerate()
                            .fold(0u64, |acc, (k, &v)| acc | (u64::from(v > 0.0) << k));
                        out.push(bits);
                    }
                }
                (_, Aux::Argmax(arg)) => out.extend(arg.iter().map(|&a| a as u64)),
                _ => {}
            }
        }
    }
}

/// Seeds a generator for one (stream, index) pair so that parallel workers
/// draw identical numbers regardless of scheduling.
pub fn derived_rng(seed: u64, stream: u64, index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng.set_word_pos(u128::from(index) << 20);
    rng
}
