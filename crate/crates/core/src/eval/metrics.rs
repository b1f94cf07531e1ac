use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Counts {
    pub tp: u64,
    pub fp: u64,
    pub tn: u64,
    #[serde(rename = "fn")]
    pub fn_: u64,
}

/// Rates whose denominator is zero are `None`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BinaryMetrics {
    pub accuracy: f64,
    pub sensitivity: Option<f64>,
    pub specificity: Option<f64>,
    pub auc: Option<f64>,
    pub counts: Counts,
}

fn ratio(num: u64, den: u64) -> Option<f64> {
    (den > 0).then(|| num as f64 / den as f64)
}

pub fn binary_metrics(predictions: &[bool], labels: &[bool]) -> Result<BinaryMetrics> {
    if predictions.len() != labels.len() {
        return Err(Error::Shape(format!(
            "{} predictions for {} labels",
            predictions.len(),
            labels.len()
        )));
    }
    if labels.is_empty() {
        return Err(Error::InvalidInput("no samples to score".into()));
    }
    let mut c = Counts { tp: 0, fp: 0, tn: 0, fn_: 0 };
    for (&p, &l) in predictions.iter().zip(labels) {
        match (p, l) {
            (true, true) => c.tp += 1,
            (true, false) => c.fp += 1,
            (false, false) => c.tn += 1,
            (false, true) => c.fn_ += 1,
        }
    }
    Ok(BinaryMetrics {
        accuracy: (c.tp + c.tn) as f64 / labels.len() as f64,
        sensitivity: ratio(c.tp, c.tp + c.fn_),
        specificity: ratio(c.tn, c.tn + c.fp),
        auc: None,
        counts: c,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RocCurve {
    /// `(false positive rate, true positive rate)` from `(0, 0)` to `(1, 1)`.
    pub points: Vec<(f64, f64)>,
    /// Score at which each point after the first is reached (flag `>=`).
    pub thresholds: Vec<f64>,
    pub auc: f64,
}

/// ROC curve over all distinct scores, higher score meaning positive.
/// Tied scores move along the diagonal, so the trapezoidal area equals the
/// probability that a random positive outscores a random negative, ties
/// counted as one half.
pub fn roc_auc(scores: &[f64], labels: &[bool]) -> Result<RocCurve> {
    if scores.len() != labels.len() {
        return Err(Error::Shape(format!(
            "{} scores for {} labels",
            scores.len(),
            labels.len()
        )));
    }
    if scores.iter().any(|s| s.is_nan()) {
        return Err(Error::InvalidInput("NaN score".into()));
    }
    let pos = labels.iter().filter(|&&l| l).count() as u128;
    let neg = labels.len() as u128 - pos;
    if pos == 0 || neg == 0 {
        return Err(Error::UndefinedAuc);
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]));
    let mut points = vec![(0.0, 0.0)];
    let mut thresholds = Vec::new();
    let (mut tp, mut fp) = (0u128, 0u128);
    let mut twice_area = 0u128;
    let mut i = 0;
    while i < order.len() {
        let s = scores[order[i]];
        let (mut dtp, mut dfp) = (0u128, 0u128);
        while i < order.len() && scores[order[i]] == s {
            if labels[order[i]] {
                dtp += 1;
            } else {
                dfp += 1;
            }
            i += 1;
        }
        twice_area += dfp * (2 * tp + dtp);
        tp += dtp;
        fp += dfp;
        points.push((fp as f64 / neg as f64, tp as f64 / pos as f64));
        thresholds.push(s);
    }
    Ok(RocCurve {
        points,
        thresholds,
        auc: twice_area as f64 / (2 * pos * neg) as f64,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WithinSampleMetrics {
    pub mean_prop_correct: f64,
    /// Over samples holding at least one artefact point.
    pub mean_prop_artefact_correct: Option<f64>,
    /// Over samples holding at least one clean point.
    pub mean_prop_nonartefact_correct: Option<f64>,
    pub prop_fully_correct: f64,
}

pub fn within_sample_metrics(predicted: &[Vec<bool>], truth: &[Vec<bool>]) -> Result<WithinSampleMetrics> {
    if predicted.len() != truth.len() || predicted.is_empty() {
        return Err(Error::Shape(format!(
            "{} predicted masks for {} truth masks",
            predicted.len(),
            truth.len()
        )));
    }
    let mut correct = 0.0;
    let mut fully = 0usize;
    let (mut art_sum, mut art_n) = (0.0, 0usize);
    let (mut clean_sum, mut clean_n) = (0.0, 0usize);
    for (p, t) in predicted.iter().zip(truth) {
        if p.len() != t.len() || p.is_empty() {
            return Err(Error::Shape("mask lengths differ".into()));
        }
        let hits = p.iter().zip(t).filter(|(a, b)| a == b).count();
        correct += hits as f64 / t.len() as f64;
        fully += usize::from(hits == t.len());
        let art = t.iter().filter(|&&b| b).count();
        if art > 0 {
            let found = p.iter().zip(t).filter(|&(&a, &b)| a && b).count();
            art_sum += found as f64 / art as f64;
            art_n += 1;
        }
        let clean = t.len() - art;
        if clean > 0 {
            let passed = p.iter().zip(t).filter(|&(&a, &b)| !a && !b).count();
            clean_sum += passed as f64 / clean as f64;
            clean_n += 1;
        }
    }
    let n = truth.len() as f64;
    Ok(WithinSampleMetrics {
        mean_prop_correct: correct / n,
        mean_prop_artefact_correct: (art_n > 0).then(|| art_sum / art_n as f64),
        mean_prop_nonartefact_correct: (clean_n > 0).then(|| clean_sum / clean_n as f64),
        prop_fully_correct: fully as f64 / n,
    })
}
