//! Reconstruction-error thresholds, sample-wide classification, sliding
//! window localization and imputation.

use std::io::Write;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::pca::PcaModel;
use crate::preprocess::{Standardizer, SENTINEL};
use crate::signal_io::{MarkMask, WaveformRecord};
use crate::vae::VaeModel;

/// Anything that maps a standardized window to its reconstruction.
pub trait Reconstructor: Sync {
    fn input_length(&self) -> usize;
    fn reconstruct(&self, x: &[f64]) -> Result<Vec<f64>>;
}

impl Reconstructor for VaeModel {
    fn input_length(&self) -> usize {
        VaeModel::input_length(self)
    }

    fn reconstruct(&self, x: &[f64]) -> Result<Vec<f64>> {
        VaeModel::reconstruct(self, x)
    }
}

impl Reconstructor for PcaModel {
    fn input_length(&self) -> usize {
        self.dim()
    }

    fn reconstruct(&self, x: &[f64]) -> Result<Vec<f64>> {
        PcaModel::reconstruct(self, x)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DetectConfig {
    pub sample_percentile: f64,
    pub window_percentile: f64,
    pub window_len: usize,
    pub window_stride: usize,
}

impl Default for DetectConfig {
    fn default() -> Self {
        DetectConfig {
            sample_percentile: 90.0,
            window_percentile: 99.0,
            window_len: 125,
            window_stride: 25,
        }
    }
}

impl DetectConfig {
    pub fn validate(&self, input_length: usize) -> Result<()> {
        for p in [self.sample_percentile, self.window_percentile] {
            if !(p > 0.0 && p <= 100.0) {
                return Err(Error::Config(format!("percentile {p} outside (0, 100]")));
            }
        }
        if self.window_len == 0 || self.window_len > input_length || self.window_stride == 0 {
            return Err(Error::Config(format!(
                "window length {} / stride {} invalid for input length {input_length}",
                self.window_len, self.window_stride
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Thresholds {
    pub sample_threshold: f64,
    pub window_threshold: f64,
    pub sample_percentile: f64,
    pub window_percentile: f64,
    pub window_len: usize,
    pub window_stride: usize,
}

impl Thresholds {
    pub fn config(&self) -> DetectConfig {
        DetectConfig {
            sample_percentile: self.sample_percentile,
            window_percentile: self.window_percentile,
            window_len: self.window_len,
            window_stride: self.window_stride,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DetectionResult {
    pub sample_mse: f64,
    pub is_artefact: bool,
    /// Empty until the window has been localized.
    pub timepoint_mask: Vec<bool>,
    pub window_scores: Vec<f64>,
    pub reconstruction: Vec<f64>,
    pub imputed: Option<Vec<f64>>,
}

/// The `ceil(p/100 * n)`-th smallest value.
pub fn nearest_rank(values: &[f64], percentile: f64) -> Option<f64> {
    if values.is_empty() {
        return None;
    }
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    let n = sorted.len();
    let exact = percentile * n as f64 / 100.0;
    let rank = ((exact - 1e-9 * exact.max(1.0)).ceil() as usize).clamp(1, n);
    Some(sorted[rank - 1])
}

/// `(offset, length)` of every sliding window over a series of length
/// `len`, including a shorter trailing window when the stride does not
/// land exactly on the end.
pub fn window_offsets(len: usize, window_len: usize, stride: usize) -> Vec<(usize, usize)> {
    let mut out = Vec::new();
    if len == 0 {
        return out;
    }
    if window_len >= len {
        out.push((0, len));
        return out;
    }
    let mut start = 0;
    while start + window_len <= len {
        out.push((start, window_len));
        start += stride;
    }
    let covered = out.last().map_or(0, |&(s, l)| s + l);
    if covered < len {
        out.push((start, len - start));
    }
    out
}

fn squared_errors(x: &[f64], r: &[f64]) -> Vec<f64> {
    x.iter().zip(r).map(|(a, b)| (a - b) * (a - b)).collect()
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

fn window_scores(sq: &[f64], offsets: &[(usize, usize)]) -> Vec<f64> {
    offsets.iter().map(|&(s, l)| mean(&sq[s..s + l])).collect()
}

fn is_sentinel(v: f64) -> bool {
    v == SENTINEL
}

fn check_len(rec: &dyn Reconstructor, x: &[f64]) -> Result<()> {
    if x.len() != rec.input_length() {
        return Err(Error::Shape(format!(
            "window has {} samples, reconstructor expects {}",
            x.len(),
            rec.input_length()
        )));
    }
    Ok(())
}

/// Per-window MSEs and all sliding-window MSEs over the training windows.
/// Sentinel points are dropped from both.
pub fn training_scores(
    rec: &dyn Reconstructor,
    windows: &[&[f64]],
    cfg: &DetectConfig,
) -> Result<(Vec<f64>, Vec<f64>)> {
    let per_window: Vec<(Option<f64>, Vec<f64>)> = windows
        .par_iter()
        .map(|x| {
            check_len(rec, x)?;
            let r = rec.reconstruct(x)?;
            if r.iter().any(|v| !v.is_finite()) {
                return Err(Error::Numerical("non-finite reconstruction of a training window".into()));
            }
            let (xs, rs): (Vec<f64>, Vec<f64>) = x
                .iter()
                .zip(&r)
                .filter(|(v, _)| !is_sentinel(**v))
                .map(|(a, b)| (*a, *b))
                .unzip();
            if xs.is_empty() {
                return Ok((None, Vec::new()));
            }
            let sq = squared_errors(&xs, &rs);
            let offsets = window_offsets(sq.len(), cfg.window_len, cfg.window_stride);
            Ok((Some(mean(&sq)), window_scores(&sq, &offsets)))
        })
        .collect::<Result<_>>()?;
    let sample: Vec<f64> = per_window.iter().filter_map(|p| p.0).collect();
    let windows: Vec<f64> = per_window.into_iter().flat_map(|p| p.1).collect();
    Ok((sample, windows))
}

pub fn calibrate_thresholds(
    rec: &dyn Reconstructor,
    train_windows: &[&[f64]],
    cfg: &DetectConfig,
) -> Result<Thresholds> {
    cfg.validate(rec.input_length())?;
    if train_windows.is_empty() {
        return Err(Error::InvalidInput("no training windows to calibrate on".into()));
    }
    let (sample, windows) = training_scores(rec, train_windows, cfg)?;
    thresholds_from_scores(&sample, &windows, cfg)
}

/// Nearest-rank percentiles of precomputed training scores.
pub fn thresholds_from_scores(sample: &[f64], windows: &[f64], cfg: &DetectConfig) -> Result<Thresholds> {
    let too_few = || Error::InvalidInput("training windows hold only sentinel values".into());
    let sample_threshold = nearest_rank(sample, cfg.sample_percentile).ok_or_else(too_few)?;
    let window_threshold = nearest_rank(windows, cfg.window_percentile).ok_or_else(too_few)?;
    if !sample_threshold.is_finite() || !window_threshold.is_finite() {
        return Err(Error::Numerical("non-finite calibration threshold".into()));
    }
    Ok(Thresholds {
        sample_threshold,
        window_threshold,
        sample_percentile: cfg.sample_percentile,
        window_percentile: cfg.window_percentile,
        window_len: cfg.window_len,
        window_stride: cfg.window_stride,
    })
}

/// Whole-window MSE against the sample threshold (strict `>`).
pub fn classify_sample(rec: &dyn Reconstructor, thr: &Thresholds, x: &[f64]) -> Result<DetectionResult> {
    check_len(rec, x)?;
    let reconstruction = rec.reconstruct(x)?;
    let sample_mse = mean(&squared_errors(x, &reconstruction));
    Ok(DetectionResult {
        sample_mse,
        is_artefact: sample_mse > thr.sample_threshold,
        timepoint_mask: Vec::new(),
        window_scores: Vec::new(),
        reconstruction,
        imputed: None,
    })
}

/// Classification plus localization: every sliding window whose MSE
/// exceeds the window threshold marks all of its points. Sentinel points
/// are always marked.
pub fn localize_artefacts(rec: &dyn Reconstructor, thr: &Thresholds, x: &[f64]) -> Result<DetectionResult> {
    let mut result = classify_sample(rec, thr, x)?;
    let sq = squared_errors(x, &result.reconstruction);
    let offsets = window_offsets(x.len(), thr.window_len, thr.window_stride);
    let scores = window_scores(&sq, &offsets);
    result.timepoint_mask = mask_from_scores(&scores, &offsets, thr.window_threshold, x.len());
    for (m, v) in result.timepoint_mask.iter_mut().zip(x) {
        *m |= is_sentinel(*v);
    }
    result.window_scores = scores;
    Ok(result)
}

pub fn mask_from_scores(scores: &[f64], offsets: &[(usize, usize)], threshold: f64, len: usize) -> Vec<bool> {
    let mut mask = vec![false; len];
    for (&score, &(s, l)) in scores.iter().zip(offsets) {
        if score > threshold {
            mask[s..s + l].iter_mut().for_each(|m| *m = true);
        }
    }
    mask
}

/// `x` outside the mask, the stored reconstruction inside it.
pub fn impute(result: &DetectionResult, x: &[f64]) -> Result<Vec<f64>> {
    if result.timepoint_mask.len() != x.len() || result.reconstruction.len() != x.len() {
        return Err(Error::InvalidInput(
            "result has no timepoint mask for this window; localize first".into(),
        ));
    }
    Ok(x.iter()
        .zip(&result.reconstruction)
        .zip(&result.timepoint_mask)
        .map(|((&v, &r), &m)| if m || is_sentinel(v) { r } else { v })
        .collect())
}

/// Localizes and imputes one window.
pub fn detect_window(rec: &dyn Reconstructor, thr: &Thresholds, x: &[f64]) -> Result<DetectionResult> {
    let mut result = localize_artefacts(rec, thr, x)?;
    result.imputed = Some(impute(&result, x)?);
    Ok(result)
}

#[derive(Debug, Clone)]
pub struct RecordDetection {
    /// Source offset of every analysed window with its result.
    pub windows: Vec<(usize, DetectionResult)>,
    pub mask: MarkMask,
    /// Record with flagged points replaced by de-standardized
    /// reconstructions; missing points stay missing unless flagged.
    pub imputed: WaveformRecord,
}

/// Tiles the record into consecutive model-length windows (the last one
/// aligned to the end of the record) and runs detection on each.
pub fn scan_record(
    rec: &dyn Reconstructor,
    standardizer: &Standardizer,
    thr: &Thresholds,
    record: &WaveformRecord,
) -> Result<RecordDetection> {
    let len = rec.input_length();
    let n = record.len();
    if n < len {
        return Err(Error::InvalidInput(format!(
            "record has {n} samples, fewer than one {len}-sample window"
        )));
    }
    let mut starts: Vec<usize> = (0..=n - len).step_by(len).collect();
    if starts.last().map_or(true, |&s| s + len < n) {
        starts.push(n - len);
    }
    let windows: Vec<(usize, DetectionResult)> = starts
        .par_iter()
        .map(|&s| {
            let x = standardizer.window(&record.values[s..s + len], &record.missing[s..s + len]);
            detect_window(rec, thr, &x).map(|r| (s, r))
        })
        .collect::<Result<_>>()?;
    let mut flags = vec![false; n];
    let mut imputed = record.clone();
    for (s, r) in &windows {
        for (i, &m) in r.timepoint_mask.iter().enumerate() {
            if m && !flags[s + i] {
                flags[s + i] = true;
                imputed.values[s + i] = standardizer.invert(r.reconstruction[i]);
                imputed.missing[s + i] = false;
            }
        }
    }
    Ok(RecordDetection {
        windows,
        mask: MarkMask::from_flags(flags),
        imputed,
    })
}

/// CSV rows `window_start,sample_mse,is_artefact`.
pub fn write_detection_csv(rows: &[(usize, DetectionResult)], mut out: impl Write) -> std::io::Result<()> {
    writeln!(out, "window_start,sample_mse,is_artefact")?;
    for (s, r) in rows {
        writeln!(out, "{},{:e},{}", s, r.sample_mse, u8::from(r.is_artefact))?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    /// Reconstructs every point as a constant.
    struct Constant {
        len: usize,
        value: f64,
    }

    impl Reconstructor for Constant {
        fn input_length(&self) -> usize {
            self.len
        }
        fn reconstruct(&self, _: &[f64]) -> Result<Vec<f64>> {
            Ok(vec![self.value; self.len])
        }
    }

    struct Identity(usize);

    impl Reconstructor for Identity {
        fn input_length(&self) -> usize {
            self.0
        }
        fn reconstruct(&self, x: &[f64]) -> Result<Vec<f64>> {
            Ok(x.to_vec())
        }
    }

    fn thresholds(sample: f64, window: f64) -> Thresholds {
        Thresholds {
            sample_threshold: sample,
            window_threshold: window,
            sample_percentile: 90.0,
            window_percentile: 99.0,
            window_len: 125,
            window_stride: 25,
        }
    }

    #[test]
    fn nearest_rank_examples() {
        let v: Vec<f64> = (1..=100).map(f64::from).collect();
        assert_eq!(nearest_rank(&v, 90.0), Some(90.0));
        assert_eq!(nearest_rank(&v, 99.0), Some(99.0));
        assert_eq!(nearest_rank(&[3.0; 7], 90.0), Some(3.0));
        assert_eq!(nearest_rank(&[5.0], 1.0), Some(5.0));
        assert_eq!(nearest_rank(&[4.0, 1.0, 3.0, 2.0], 50.0), Some(2.0));
        assert_eq!(nearest_rank(&[], 90.0), None);
    }

    #[test]
    fn constant_training_errors_give_equal_thresholds() {
        let rec = Constant { len: 250, value: 0.0 };
        let rows: Vec<Vec<f64>> = (0..10).map(|_| vec![2.0; 250]).collect();
        let refs: Vec<&[f64]> = rows.iter().map(|r| r.as_slice()).collect();
        let t = calibrate_thresholds(&rec, &refs, &DetectConfig::default()).unwrap();
        assert_eq!((t.sample_threshold, t.window_threshold), (4.0, 4.0));
    }

    #[test]
    fn perfect_reconstruction_is_not_artefact() {
        let x: Vec<f64> = (0..250).map(|i| (i as f64).sin()).collect();
        let r = localize_artefacts(&Identity(250), &thresholds(0.0, 0.0), &x).unwrap();
        assert_eq!(r.sample_mse, 0.0);
        assert!(!r.is_artefact);
        assert!(r.timepoint_mask.iter().all(|m| !m));
    }

    #[test]
    fn tie_at_threshold_is_not_artefact() {
        let x = vec![1.0; 250];
        let rec = Constant { len: 250, value: 0.0 };
        assert!(!classify_sample(&rec, &thresholds(1.0, 1.0), &x).unwrap().is_artefact);
        assert!(classify_sample(&rec, &thresholds(0.999, 1.0), &x).unwrap().is_artefact);
    }

    #[test]
    fn single_flagged_window_marks_its_span() {
        let offsets = window_offsets(1250, 125, 25);
        let mut scores = vec![0.0; offsets.len()];
        let idx = offsets.iter().position(|&(s, _)| s == 500).unwrap();
        scores[idx] = 5.0;
        let mask = mask_from_scores(&scores, &offsets, 1.0, 1250);
        let flagged: Vec<usize> = (0..1250).filter(|&i| mask[i]).collect();
        assert_eq!(flagged, (500..625).collect::<Vec<_>>());
    }

    #[test]
    fn offsets_include_trailing_partial_window() {
        assert_eq!(window_offsets(10, 4, 3), vec![(0, 4), (3, 4), (6, 4)]);
        assert_eq!(window_offsets(11, 4, 3), vec![(0, 4), (3, 4), (6, 4), (9, 2)]);
        assert_eq!(window_offsets(10, 4, 2).last(), Some(&(6, 4)));
        assert_eq!(window_offsets(3, 5, 1), vec![(0, 3)]);
        assert_eq!(window_offsets(1250, 125, 25).len(), 46);
    }

    #[test]
    fn impute_extremes_and_idempotence() {
        let x: Vec<f64> = (0..250).map(|i| i as f64).collect();
        let rec = Constant { len: 250, value: -1.0 };
        let none = localize_artefacts(&rec, &thresholds(1e12, 1e12), &x).unwrap();
        assert_eq!(impute(&none, &x).unwrap(), x);
        let all = localize_artefacts(&rec, &thresholds(-1.0, -1.0), &x).unwrap();
        assert_eq!(impute(&all, &x).unwrap(), vec![-1.0; 250]);
        let part = localize_artefacts(&rec, &thresholds(0.0, 30_000.0), &x).unwrap();
        let once = impute(&part, &x).unwrap();
        assert_eq!(impute(&part, &once).unwrap(), once);
        let classified = classify_sample(&rec, &thresholds(0.0, 0.0), &x).unwrap();
        assert!(impute(&classified, &x).is_err());
    }

    #[test]
    fn sentinel_points_are_always_masked() {
        let mut x = vec![0.0; 250];
        x[17] = SENTINEL;
        let r = localize_artefacts(&Identity(250), &thresholds(1e9, 1e9), &x).unwrap();
        let flagged: Vec<usize> = (0..250).filter(|&i| r.timepoint_mask[i]).collect();
        assert_eq!(flagged, vec![17]);
    }

    #[test]
    fn sentinels_excluded_from_calibration() {
        let rec = Constant { len: 250, value: 0.0 };
        let mut row = vec![1.0; 250];
        row[0] = SENTINEL;
        let refs = vec![row.as_slice()];
        let t = calibrate_thresholds(&rec, &refs, &DetectConfig::default()).unwrap();
        assert_eq!((t.sample_threshold, t.window_threshold), (1.0, 1.0));
    }

    #[test]
    fn full_overlap_windows_reproduce_sample_mse() {
        let x: Vec<f64> = (0..1250).map(|i| ((i * 37 % 101) as f64) / 50.0).collect();
        let rec = Constant { len: 1250, value: 0.3 };
        let thr = Thresholds {
            window_len: 1250,
            window_stride: 1,
            ..thresholds(0.0, 0.0)
        };
        let r = localize_artefacts(&rec, &thr, &x).unwrap();
        assert_eq!(r.window_scores.len(), 1);
        assert!((r.window_scores[0] - r.sample_mse).abs() < 1e-10);
    }

    #[test]
    fn lowering_threshold_never_unflags() {
        let x = vec![0.5; 250];
        let rec = Constant { len: 250, value: 0.0 };
        let mut flagged_before = false;
        for t in [1.0, 0.5, 0.25, 0.2, 0.1] {
            let f = classify_sample(&rec, &thresholds(t, t), &x).unwrap().is_artefact;
            assert!(f || !flagged_before);
            flagged_before |= f;
        }
        assert!(flagged_before);
    }

    proptest! {
        #[test]
        fn mask_is_union_of_flagged_windows(
            scores in proptest::collection::vec(0.0f64..2.0, 46),
            threshold in 0.0f64..2.0,
        ) {
            let offsets = window_offsets(1250, 125, 25);
            let mask = mask_from_scores(&scores, &offsets, threshold, 1250);
            for t in 0..1250 {
                let expected = offsets
                    .iter()
                    .zip(&scores)
                    .any(|(&(s, l), &sc)| sc > threshold && s <= t && t < s + l);
                prop_assert_eq!(mask[t], expected);
            }
        }
    }
}
