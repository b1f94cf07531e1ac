//! Central finite-difference verification of reverse-mode gradients.

use std::ops::Range;

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::layers::{ParamStore, Sequential};
use super::ops::Mode;
use crate::error::Result;

/// Loss value, optional gradient, and the activation pattern of the pass.
#[derive(Debug, Clone)]
pub struct Evaluation {
    pub loss: f64,
    pub gradient: Option<Vec<f64>>,
    pub pattern: Vec<u64>,
}

/// A scalar function of a flat parameter vector with a reverse-mode
/// gradient.
pub trait Objective: Sync {
    /// Named parameter ranges, used to label and sample coordinates.
    fn groups(&self) -> Vec<(String, Range<usize>)>;
    fn evaluate(&self, params: &[f64], with_gradient: bool) -> Result<Evaluation>;
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GradCheckConfig {
    pub step: f64,
    pub tolerance: f64,
    /// Check at most this many seeded-random coordinates per group.
    pub max_per_group: Option<usize>,
    pub seed: u64,
}

impl Default for GradCheckConfig {
    fn default() -> Self {
        GradCheckConfig {
            step: 1e-4,
            tolerance: 1e-4,
            max_per_group: None,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoordinateError {
    pub group: String,
    pub index: usize,
    pub analytic: f64,
    pub numeric: f64,
    pub rel_error: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    pub worst: Option<CoordinateError>,
    pub checked: usize,
    /// Coordinates whose perturbation changed a ReLU sign or pool argmax.
    pub excluded: usize,
    pub failures: Vec<CoordinateError>,
    pub tolerance: f64,
}

impl GradCheckReport {
    pub fn passed(&self) -> bool {
        self.checked > 0 && self.failures.is_empty()
    }
}

/// Compares the analytic gradient of `objective` at `params` with central
/// differences.
///
/// The relative error of a coordinate is `|a - n| / max(|a|, |n|, floor)`
/// with `floor = 1e-6 * max(1, |loss|)`: below that magnitude central
/// differences at `step = 1e-4` cannot resolve the derivative in double
/// precision. Coordinates whose perturbation crosses a non-differentiable
/// point (a ReLU sign flip or a change of pooling argmax, which covers
/// pooling ties) are excluded and counted.
pub fn grad_check(
    objective: &dyn Objective,
    params: &[f64],
    cfg: &GradCheckConfig,
) -> Result<GradCheckReport> {
    let base = objective.evaluate(params, true)?;
    let analytic = base.gradient.expect("gradient requested");
    let floor = 1e-6 * base.loss.abs().max(1.0);

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut coords: Vec<(String, usize)> = Vec::new();
    for (name, range) in objective.groups() {
        let len = range.len();
        match cfg.max_per_group {
            Some(k) if k < len => {
                let mut picked: Vec<usize> = sample(&mut rng, len, k).into_vec();
                picked.sort_unstable();
                coords.extend(picked.into_iter().map(|i| (name.clone(), range.start + i)));
            }
            _ => coords.extend(range.map(|i| (name.clone(), i))),
        }
    }

    let results: Vec<Result<Option<CoordinateError>>> = coords
        .par_iter()
        .map(|(group, i)| {
            let mut p = params.to_vec();
            p[*i] = params[*i] + cfg.step;
            let plus = objective.evaluate(&p, false)?;
            p[*i] = params[*i] - cfg.step;
            let minus = objective.evaluate(&p, false)?;
            if plus.pattern != base.pattern || minus.pattern != base.pattern {
                return Ok(None);
            }
            let numeric = (plus.loss - minus.loss) / (2.0 * cfg.step);
            let a = analytic[*i];
            let rel_error = (a - numeric).abs() / a.abs().max(numeric.abs()).max(floor);
            Ok(Some(CoordinateError {
                group: group.clone(),
                index: *i,
                analytic: a,
                numeric,
                rel_error,
            }))
        })
        .collect();

    let mut report = GradCheckReport {
        max_rel_error: 0.0,
        worst: None,
        checked: 0,
        excluded: 0,
        failures: Vec::new(),
        tolerance: cfg.tolerance,
    };
    for r in results {
        match r? {
            None => report.excluded += 1,
            Some(c) => {
                report.checked += 1;
                if !(c.rel_error <= cfg.tolerance) {
                    report.failures.push(c.clone());
                }
                if !(c.rel_error <= report.max_rel_error) {
                    report.max_rel_error = c.rel_error;
                    report.worst = Some(c);
                }
            }
        }
    }
    Ok(report)
}

/// `½‖net(input)‖²` for a sequential network, with dropout off.
pub struct SequentialObjective<'a> {
    pub net: &'a Sequential,
    pub store: &'a ParamStore,
    pub input: &'a [f64],
}

impl Objective for SequentialObjective<'_> {
    fn groups(&self) -> Vec<(String, Range<usize>)> {
        self.store
            .entries
            .iter()
            .map(|e| (e.name.clone(), e.range()))
            .collect()
    }

    fn evaluate(&self, params: &[f64], with_gradient: bool) -> Result<Evaluation> {
        let acts = self.net.forward(params, self.input, Mode::Inference)?;
        let out = acts.output();
        let loss = 0.5 * out.iter().map(|v| v * v).sum::<f64>();
        let mut pattern = Vec::new();
        self.net.activation_pattern(&acts, &mut pattern);
        let gradient = with_gradient.then(|| {
            let mut g = vec![0.0; params.len()];
            self.net.backward(params, &acts, out.to_vec(), &mut g);
            g
        });
        Ok(Evaluation {
            loss,
            gradient,
            pattern,
        })
    }
}
