//! Reference implementations used as test oracles. Each is written
//! independently of the library code it checks.
#![allow(dead_code)]

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

/// Eigen-decomposition of a symmetric matrix by cyclic Jacobi rotations.
/// Returns eigenvalues in descending order with matching unit eigenvectors.
pub fn jacobi_eigen(a: &[Vec<f64>]) -> (Vec<f64>, Vec<Vec<f64>>) {
    let n = a.len();
    let mut m: Vec<Vec<f64>> = a.to_vec();
    let mut v: Vec<Vec<f64>> = (0..n).map(|i| (0..n).map(|j| f64::from(u8::from(i == j))).collect()).collect();
    for _sweep in 0..100 {
        let off: f64 = (0..n)
            .flat_map(|i| (0..n).filter(move |&j| j != i).map(move |j| (i, j)))
            .map(|(i, j)| m[i][j] * m[i][j])
            .sum();
        if off < 1e-30 {
            break;
        }
        for p in 0..n {
            for q in p + 1..n {
                if m[p][q].abs() < 1e-300 {
                    continue;
                }
                let theta = (m[q][q] - m[p][p]) / (2.0 * m[p][q]);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                for k in 0..n {
                    let (mkp, mkq) = (m[k][p], m[k][q]);
                    m[k][p] = c * mkp - s * mkq;
                    m[k][q] = s * mkp + c * mkq;
                }
                for k in 0..n {
                    let (mpk, mqk) = (m[p][k], m[q][k]);
                    m[p][k] = c * mpk - s * mqk;
                    m[q][k] = s * mpk + c * mqk;
                }
                for row in v.iter_mut() {
                    let (vp, vq) = (row[p], row[q]);
                    row[p] = c * vp - s * vq;
                    row[q] = s * vp + c * vq;
                }
            }
        }
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| m[j][j].total_cmp(&m[i][i]));
    let values = order.iter().map(|&i| m[i][i]).collect();
    let vectors = order.iter().map(|&i| v.iter().map(|row| row[i]).collect()).collect();
    (values, vectors)
}

/// Sample covariance (divided by n) of the rows of `x`.
pub fn covariance(x: &[Vec<f64>]) -> Vec<Vec<f64>> {
    let n = x.len() as f64;
    let d = x[0].len();
    let mean: Vec<f64> = (0..d).map(|j| x.iter().map(|r| r[j]).sum::<f64>() / n).collect();
    (0..d)
        .map(|i| {
            (0..d)
                .map(|j| x.iter().map(|r| (r[i] - mean[i]) * (r[j] - mean[j])).sum::<f64>() / n)
                .collect()
        })
        .collect()
}

/// Largest principal angle between the spans of two orthonormal bases of
/// equal size, bounded above through the Frobenius norm of the residual of
/// projecting `b` onto `a`.
pub fn max_subspace_angle(a: &[Vec<f64>], b: &[Vec<f64>]) -> f64 {
    let mut sq = 0.0;
    for v in b {
        let mut r = v.clone();
        for u in a {
            let dot: f64 = u.iter().zip(v).map(|(x, y)| x * y).sum();
            r.iter_mut().zip(u).for_each(|(ri, ui)| *ri -= dot * ui);
        }
        sq += r.iter().map(|x| x * x).sum::<f64>();
    }
    sq.sqrt().min(1.0).asin()
}

/// AUC as the probability that a random positive outscores a random
/// negative, ties counting one half: `(2 * wins + ties) / (2 * P * N)`.
pub fn concordance_auc(scores: &[f64], labels: &[bool]) -> f64 {
    let (mut twice, mut pairs) = (0u64, 0u64);
    for (i, &li) in labels.iter().enumerate() {
        if !li {
            continue;
        }
        for (j, &lj) in labels.iter().enumerate() {
            if lj {
                continue;
            }
            pairs += 1;
            if scores[i] > scores[j] {
                twice += 2;
            } else if scores[i] == scores[j] {
                twice += 1;
            }
        }
    }
    twice as f64 / (2 * pairs) as f64
}

/// Monte Carlo `KL(N(mu, diag(exp(log_var))) || N(0, I))` as the mean of
/// `log q(z) - log p(z)` over `draws` samples from q.
pub fn monte_carlo_kl(mu: &[f64], log_var: &[f64], draws: usize, seed: u64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut total = 0.0;
    for _ in 0..draws {
        let mut log_ratio = 0.0;
        for (&m, &lv) in mu.iter().zip(log_var) {
            let e: f64 = StandardNormal.sample(&mut rng);
            let sd = (0.5 * lv).exp();
            let z = m + sd * e;
            let log_q = -0.5 * lv - 0.5 * e * e;
            let log_p = -0.5 * z * z;
            log_ratio += log_q - log_p;
        }
        total += log_ratio;
    }
    total / draws as f64
}

/// Frequency (Hz) of the largest periodogram bin of `x` in
/// `[lo_hz, hi_hz]`, by direct DFT on a grid of `step_hz`.
pub fn dominant_frequency(x: &[f64], rate: f64, lo_hz: f64, hi_hz: f64, step_hz: f64) -> f64 {
    let mean = x.iter().sum::<f64>() / x.len() as f64;
    let mut best = (lo_hz, f64::NEG_INFINITY);
    let mut f = lo_hz;
    while f <= hi_hz {
        let w = 2.0 * std::f64::consts::PI * f / rate;
        let (mut re, mut im) = (0.0, 0.0);
        for (i, &v) in x.iter().enumerate() {
            let a = w * i as f64;
            re += (v - mean) * a.cos();
            im -= (v - mean) * a.sin();
        }
        let p = re * re + im * im;
        if p > best.1 {
            best = (f, p);
        }
        f += step_hz;
    }
    best.0
}

pub fn rmse(a: &[f64], b: &[f64]) -> f64 {
    let s: f64 = a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum();
    (s / a.len() as f64).sqrt()
}
