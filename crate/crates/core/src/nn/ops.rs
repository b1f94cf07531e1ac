//! Forward and reverse kernels for the layer types.
//!
//! Signals are `[length, channels]` row-major buffers. Convolutions are
//! cross-correlations with "same" zero padding: for kernel size `k` the
//! left pad is `(k - 1) / 2`.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::tensor::Tensor;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    /// Dropout active, masks drawn from the seed.
    Train { seed: u64 },
    Inference,
}

pub(crate) fn conv1d_raw(
    input: &[f64],
    len: usize,
    cin: usize,
    weight: &[f64],
    kernel: usize,
    cout: usize,
    bias: &[f64],
    out: &mut [f64],
) {
    let pad = (kernel - 1) / 2;
    for t in 0..len {
        let row = &mut out[t * cout..(t + 1) * cout];
        row.copy_from_slice(bias);
        for k in 0..kernel {
            let Some(src) = (t + k).checked_sub(pad).filter(|&s| s < len) else {
                continue;
            };
            let x = &input[src * cin..(src + 1) * cin];
            let wk = &weight[k * cin * cout..(k + 1) * cin * cout];
            for (i, &a) in x.iter().enumerate() {
                if a == 0.0 {
                    continue;
                }
                let w = &wk[i * cout..(i + 1) * cout];
                for (r, &wv) in row.iter_mut().zip(w) {
                    *r += a * wv;
                }
            }
        }
    }
}

/// Accumulates parameter gradients into `grad_w`/`grad_b` and returns the
/// gradient with respect to the input.
pub(crate) fn conv1d_backward_raw(
    input: &[f64],
    len: usize,
    cin: usize,
    weight: &[f64],
    kernel: usize,
    cout: usize,
    grad_out: &[f64],
    grad_w: &mut [f64],
    grad_b: &mut [f64],
) -> Vec<f64> {
    let pad = (kernel - 1) / 2;
    let mut grad_in = vec![0.0; len * cin];
    for t in 0..len {
        let g = &grad_out[t * cout..(t + 1) * cout];
        for (gb, &gv) in grad_b.iter_mut().zip(g) {
            *gb += gv;
        }
        for k in 0..kernel {
            let Some(src) = (t + k).checked_sub(pad).filter(|&s| s < len) else {
                continue;
            };
            let x = &input[src * cin..(src + 1) * cin];
            let base = k * cin * cout;
            for (i, &a) in x.iter().enumerate() {
                let off = base + i * cout;
                let w = &weight[off..off + cout];
                let mut acc = 0.0;
                for (&wv, &gv) in w.iter().zip(g) {
                    acc += wv * gv;
                }
                grad_in[src * cin + i] += acc;
                if a != 0.0 {
                    let gw = &mut grad_w[off..off + cout];
                    for (gwv, &gv) in gw.iter_mut().zip(g) {
                        *gwv += a * gv;
                    }
                }
            }
        }
    }
    grad_in
}

/// Per-channel max over non-overlapping pools. Returns the pooled signal
/// and, for every output element, the input index of its maximum (first
/// index on ties).
pub(crate) fn maxpool_raw(input: &[f64], len: usize, ch: usize, pool: usize) -> (Vec<f64>, Vec<usize>) {
    let out_len = len.div_ceil(pool);
    let mut out = vec![0.0; out_len * ch];
    let mut arg = vec![0usize; out_len * ch];
    for p in 0..out_len {
        let lo = p * pool;
        let hi = (lo + pool).min(len);
        for c in 0..ch {
            let mut best = lo * ch + c;
            for t in lo + 1..hi {
                let idx = t * ch + c;
                if input[idx] > input[best] {
                    best = idx;
                }
            }
            out[p * ch + c] = input[best];
            arg[p * ch + c] = best;
        }
    }
    (out, arg)
}

pub(crate) fn upsample_raw(input: &[f64], len: usize, ch: usize, factor: usize, target: usize) -> Vec<f64> {
    let mut out = Vec::with_capacity(target * ch);
    for t in 0..target {
        let src = t / factor;
        debug_assert!(src < len);
        out.extend_from_slice(&input[src * ch..(src + 1) * ch]);
    }
    out
}

pub(crate) fn upsample_backward_raw(grad_out: &[f64], len: usize, ch: usize, factor: usize, target: usize) -> Vec<f64> {
    let mut g = vec![0.0; len * ch];
    for t in 0..target {
        let src = t / factor;
        for c in 0..ch {
            g[src * ch + c] += grad_out[t * ch + c];
        }
    }
    g
}

pub(crate) fn dense_raw(input: &[f64], weight: &[f64], bias: &[f64], out: &mut [f64]) {
    let m = bias.len();
    out.copy_from_slice(bias);
    for (i, &a) in input.iter().enumerate() {
        if a == 0.0 {
            continue;
        }
        let w = &weight[i * m..(i + 1) * m];
        for (o, &wv) in out.iter_mut().zip(w) {
            *o += a * wv;
        }
    }
}

pub(crate) fn dense_backward_raw(
    input: &[f64],
    weight: &[f64],
    grad_out: &[f64],
    grad_w: &mut [f64],
    grad_b: &mut [f64],
) -> Vec<f64> {
    let m = grad_out.len();
    for (gb, &g) in grad_b.iter_mut().zip(grad_out) {
        *gb += g;
    }
    input
        .iter()
        .enumerate()
        .map(|(i, &a)| {
            let w = &weight[i * m..(i + 1) * m];
            if a != 0.0 {
                let gw = &mut grad_w[i * m..(i + 1) * m];
                for (gwv, &g) in gw.iter_mut().zip(grad_out) {
                    *gwv += a * g;
                }
            }
            w.iter().zip(grad_out).map(|(w, g)| w * g).sum()
        })
        .collect()
}

/// Inverted-dropout scale factors: `0` for dropped units, `1 / (1 - rate)`
/// for kept ones.
pub(crate) fn dropout_scales(n: usize, rate: f64, seed: u64) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let keep = 1.0 / (1.0 - rate);
    (0..n)
        .map(|_| if rng.random::<f64>() < rate { 0.0 } else { keep })
        .collect()
}

/// Cross-correlation with "same" zero padding.
///
/// `input` is `[length, in_ch]`, `weights` `[kernel, in_ch, out_ch]` and
/// `bias` `[out_ch]`; the result is `[length, out_ch]`.
pub fn conv1d_forward(input: &Tensor, weights: &Tensor, bias: &Tensor) -> Result<Tensor> {
    let (len, cin) = input.signal_dims()?;
    let (kernel, wcin, cout) = match weights.shape() {
        &[k, i, o] => (k, i, o),
        s => return Err(Error::Shape(format!("conv weights must be rank 3, got {s:?}"))),
    };
    if wcin != cin || bias.shape() != [cout] || kernel == 0 {
        return Err(Error::Shape(format!(
            "input {:?}, weights {:?}, bias {:?}",
            input.shape(),
            weights.shape(),
            bias.shape()
        )));
    }
    let mut out = vec![0.0; len * cout];
    conv1d_raw(input.data(), len, cin, weights.data(), kernel, cout, bias.data(), &mut out);
    Tensor::new(vec![len, cout], out)
}

/// Non-overlapping max pooling; output length `ceil(length / pool_size)`.
pub fn maxpool1d(input: &Tensor, pool_size: usize) -> Result<Tensor> {
    if pool_size == 0 {
        return Err(Error::Shape("pool size must be at least 1".into()));
    }
    let (len, ch) = input.signal_dims()?;
    let (out, _) = maxpool_raw(input.data(), len, ch, pool_size);
    Tensor::new(vec![len.div_ceil(pool_size), ch], out)
}

/// Repeats every step `factor` times and keeps the first `target_length`.
pub fn upsample1d_crop(input: &Tensor, factor: usize, target_length: usize) -> Result<Tensor> {
    let (len, ch) = input.signal_dims()?;
    if factor == 0 || target_length > factor * len {
        return Err(Error::Shape(format!(
            "cannot upsample {len} steps by {factor} to {target_length}"
        )));
    }
    Tensor::new(
        vec![target_length, ch],
        upsample_raw(input.data(), len, ch, factor, target_length),
    )
}

/// Affine map `input · weights + bias` with `weights` shaped `[n, m]`.
pub fn dense_forward(input: &Tensor, weights: &Tensor, bias: &Tensor) -> Result<Tensor> {
    let (n, m) = match weights.shape() {
        &[n, m] => (n, m),
        s => return Err(Error::Shape(format!("dense weights must be rank 2, got {s:?}"))),
    };
    if input.len() != n || bias.shape() != [m] {
        return Err(Error::Shape(format!(
            "input of {} values, weights {:?}, bias {:?}",
            input.len(),
            weights.shape(),
            bias.shape()
        )));
    }
    let mut out = vec![0.0; m];
    dense_raw(input.data(), weights.data(), bias.data(), &mut out);
    Ok(Tensor::vector(out))
}

/// Inverted dropout in training mode, identity at inference.
pub fn dropout(input: &Tensor, rate: f64, mode: Mode) -> Result<Tensor> {
    if !(0.0..1.0).contains(&rate) {
        return Err(Error::Config(format!("dropout rate {rate} outside [0, 1)")));
    }
    match mode {
        Mode::Train { seed } if rate > 0.0 => {
            let scales = dropout_scales(input.len(), rate, seed);
            let data = input.data().iter().zip(&scales).map(|(x, s)| x * s).collect();
            Tensor::new(input.shape().to_vec(), data)
        }
        _ => Ok(input.clone()),
    }
}

pub fn relu(input: &Tensor) -> Tensor {
    let data = input.data().iter().map(|&x| x.max(0.0)).collect();
    Tensor::new(input.shape().to_vec(), data).expect("shape unchanged")
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    fn random(shape: Vec<usize>, seed: u64) -> Tensor {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n = shape.iter().product();
        Tensor::new(shape, (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap()
    }

    #[test]
    fn conv_identity_kernels() {
        let x = random(vec![9, 1], 1);
        let one = Tensor::new(vec![1, 1, 1], vec![1.0]).unwrap();
        let zero = Tensor::vector(vec![0.0]);
        assert_eq!(conv1d_forward(&x, &one, &zero).unwrap(), x);
        let centred = Tensor::new(vec![3, 1, 1], vec![0.0, 1.0, 0.0]).unwrap();
        assert_eq!(conv1d_forward(&x, &centred, &zero).unwrap(), x);
    }

    #[test]
    fn conv_matches_direct_loop() {
        let (len, cin, k, cout) = (12, 2, 3, 4);
        let x = random(vec![len, cin], 2);
        let w = random(vec![k, cin, cout], 3);
        let b = random(vec![cout], 4);
        let y = conv1d_forward(&x, &w, &b).unwrap();
        for t in 0..len {
            for o in 0..cout {
                let mut acc = b.data()[o];
                for j in 0..k {
                    let src = t as isize + j as isize - 1;
                    if src < 0 || src >= len as isize {
                        continue;
                    }
                    for i in 0..cin {
                        acc += x.data()[src as usize * cin + i] * w.data()[(j * cin + i) * cout + o];
                    }
                }
                assert!((y.data()[t * cout + o] - acc).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn conv_rejects_channel_mismatch() {
        let x = random(vec![5, 2], 1);
        let w = random(vec![3, 1, 1], 1);
        assert!(conv1d_forward(&x, &w, &Tensor::vector(vec![0.0])).is_err());
    }

    #[test]
    fn conv_is_translation_equivariant_in_the_interior() {
        let x = random(vec![40, 2], 5);
        let w = random(vec![5, 2, 3], 6);
        let b = random(vec![3], 7);
        let mut shifted = vec![0.0; 80];
        shifted[6..].copy_from_slice(&x.data()[..74]);
        let y = conv1d_forward(&x, &w, &b).unwrap();
        let ys = conv1d_forward(&Tensor::new(vec![40, 2], shifted).unwrap(), &w, &b).unwrap();
        for t in 5..30 {
            for o in 0..3 {
                assert!((ys.data()[(t + 3) * 3 + o] - y.data()[t * 3 + o]).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn maxpool_examples() {
        let x = Tensor::column(vec![1.0, 3.0, 2.0, 2.0]);
        assert_eq!(maxpool1d(&x, 1).unwrap(), x);
        assert_eq!(maxpool1d(&x, 2).unwrap().data(), &[3.0, 2.0]);
        let odd = Tensor::column(vec![1.0, 3.0, 2.0, 2.0, 7.0]);
        assert_eq!(maxpool1d(&odd, 2).unwrap().data(), &[3.0, 2.0, 7.0]);
        let (_, arg) = maxpool_raw(&[2.0, 2.0, 1.0], 3, 1, 3);
        assert_eq!(arg, vec![0]);
    }

    #[test]
    fn upsample_examples() {
        let x = Tensor::column(vec![1.0, 2.0]);
        assert_eq!(upsample1d_crop(&x, 1, 2).unwrap(), x);
        assert_eq!(
            upsample1d_crop(&x, 5, 8).unwrap().data(),
            &[1.0, 1.0, 1.0, 1.0, 1.0, 2.0, 2.0, 2.0]
        );
        assert!(upsample1d_crop(&x, 5, 11).is_err());
        let c = Tensor::column(vec![4.5; 23]);
        let back = upsample1d_crop(&maxpool1d(&c, 5).unwrap(), 5, 23).unwrap();
        assert_eq!(back, c);
    }

    #[test]
    fn dense_examples() {
        let x = random(vec![3], 8);
        let eye = Tensor::new(vec![3, 3], vec![1.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 1.0]).unwrap();
        assert_eq!(dense_forward(&x, &eye, &Tensor::vector(vec![0.0; 3])).unwrap(), x);
        let b = Tensor::vector(vec![0.5, -1.0]);
        assert_eq!(dense_forward(&x, &Tensor::zeros(vec![3, 2]), &b).unwrap(), b);
        let w = random(vec![3, 2], 9);
        let y = dense_forward(&x, &w, &b).unwrap();
        for j in 0..2 {
            let direct: f64 = b.data()[j] + (0..3).map(|i| x.data()[i] * w.data()[i * 2 + j]).sum::<f64>();
            assert!((y.data()[j] - direct).abs() < 1e-14);
        }
    }

    #[test]
    fn dropout_modes() {
        let x = random(vec![50], 10);
        assert_eq!(dropout(&x, 0.0, Mode::Train { seed: 1 }).unwrap(), x);
        assert_eq!(dropout(&x, 0.5, Mode::Inference).unwrap(), x);
        assert!(dropout(&x, 1.0, Mode::Inference).is_err());
    }

    #[test]
    fn dropout_preserves_expectation() {
        let x = Tensor::vector(vec![1.0, -2.0, 0.5]);
        let draws = 100_000;
        let mut sum = [0.0; 3];
        for seed in 0..draws {
            let y = dropout(&x, 0.3, Mode::Train { seed }).unwrap();
            for (s, v) in sum.iter_mut().zip(y.data()) {
                *s += v;
            }
        }
        for (s, v) in sum.iter().zip(x.data()) {
            let mean = s / draws as f64;
            assert!((mean - v).abs() <= 0.01 * v.abs(), "{mean} vs {v}");
        }
    }
}
