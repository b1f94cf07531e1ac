//! Abnormality marking heuristics, biased test-set sampling and dataset
//! construction.

use std::collections::VecDeque;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kv::KeyValues;
use crate::signal_io::{MarkMask, WaveformRecord};

/// Standardized value substituted for missing samples. It lies far outside
/// anything a standardized physiological window produces, so the models
/// treat it as artefact.
pub const SENTINEL: f64 = -10.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PreprocessConfig {
    pub global_min: f64,
    pub global_max: f64,
    pub static_window: f64,
    pub static_range_max: f64,
    pub jump_window: f64,
    pub jump_threshold: f64,
    pub merge_ratio: f64,
    pub window_s: f64,
    pub meta_window_s: f64,
    pub test_count: usize,
    pub split_ratio: f64,
    pub smoothing_alpha: f64,
    pub seed: u64,
}

impl Default for PreprocessConfig {
    fn default() -> Self {
        PreprocessConfig {
            global_min: 20.0,
            global_max: 250.0,
            static_window: 0.4,
            static_range_max: 0.5,
            jump_window: 0.4,
            jump_threshold: 80.0,
            merge_ratio: 4.0,
            window_s: 10.0,
            meta_window_s: 100.0,
            test_count: 200,
            split_ratio: 0.9,
            smoothing_alpha: 0.02,
            seed: 0,
        }
    }
}

const PREPROCESS_KEYS: &[&str] = &[
    "global_min",
    "global_max",
    "static_window",
    "static_range_max",
    "jump_window",
    "jump_threshold",
    "merge_ratio",
    "window_s",
    "meta_window_s",
    "test_count",
    "split_ratio",
    "smoothing_alpha",
    "seed",
];

impl PreprocessConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.global_min < self.global_max) {
            return Err(Error::Config("global_min must be below global_max".into()));
        }
        let windows = [
            self.static_window,
            self.jump_window,
            self.window_s,
            self.meta_window_s,
        ];
        if windows.iter().any(|&w| !(w > 0.0)) {
            return Err(Error::Config("all window lengths must be positive".into()));
        }
        if !(self.split_ratio > 0.0 && self.split_ratio < 1.0) {
            return Err(Error::Config("split_ratio must lie in (0, 1)".into()));
        }
        if !(self.merge_ratio > 0.0) || self.smoothing_alpha < 0.0 {
            return Err(Error::Config(
                "merge_ratio must be positive and smoothing_alpha non-negative".into(),
            ));
        }
        Ok(())
    }

    pub fn window_len(&self, rate: f64) -> usize {
        (self.window_s * rate).round() as usize
    }

    pub fn from_kv(kv: &KeyValues) -> Result<Self> {
        kv.reject_unknown(PREPROCESS_KEYS)?;
        let mut c = PreprocessConfig::default();
        kv.update("global_min", &mut c.global_min)?;
        kv.update("global_max", &mut c.global_max)?;
        kv.update("static_window", &mut c.static_window)?;
        kv.update("static_range_max", &mut c.static_range_max)?;
        kv.update("jump_window", &mut c.jump_window)?;
        kv.update("jump_threshold", &mut c.jump_threshold)?;
        kv.update("merge_ratio", &mut c.merge_ratio)?;
        kv.update("window_s", &mut c.window_s)?;
        kv.update("meta_window_s", &mut c.meta_window_s)?;
        kv.update("test_count", &mut c.test_count)?;
        kv.update("split_ratio", &mut c.split_ratio)?;
        kv.update("smoothing_alpha", &mut c.smoothing_alpha)?;
        kv.update("seed", &mut c.seed)?;
        c.validate()?;
        Ok(c)
    }

    pub fn to_kv(&self) -> KeyValues {
        let mut kv = KeyValues::new();
        kv.set("global_min", self.global_min);
        kv.set("global_max", self.global_max);
        kv.set("static_window", self.static_window);
        kv.set("static_range_max", self.static_range_max);
        kv.set("jump_window", self.jump_window);
        kv.set("jump_threshold", self.jump_threshold);
        kv.set("merge_ratio", self.merge_ratio);
        kv.set("window_s", self.window_s);
        kv.set("meta_window_s", self.meta_window_s);
        kv.set("test_count", self.test_count);
        kv.set("split_ratio", self.split_ratio);
        kv.set("smoothing_alpha", self.smoothing_alpha);
        kv.set("seed", self.seed);
        kv
    }
}

/// Marks `[start, end)` in a difference array.
fn mark_range(diff: &mut [i32], start: usize, end: usize) {
    if start < end {
        diff[start] += 1;
        diff[end] -= 1;
    }
}

/// Sliding-window range (max - min) over the present samples of `x`, for
/// every full window of `w` samples. `None` when a window has no present
/// sample.
fn sliding_ranges(x: &[f64], present: &[bool], w: usize) -> Vec<Option<f64>> {
    let n = x.len();
    if w == 0 || n < w {
        return Vec::new();
    }
    let mut maxq: VecDeque<usize> = VecDeque::new();
    let mut minq: VecDeque<usize> = VecDeque::new();
    let mut out = Vec::with_capacity(n - w + 1);
    for i in 0..n {
        if present[i] {
            while maxq.back().is_some_and(|&j| x[j] <= x[i]) {
                maxq.pop_back();
            }
            maxq.push_back(i);
            while minq.back().is_some_and(|&j| x[j] >= x[i]) {
                minq.pop_back();
            }
            minq.push_back(i);
        }
        if i + 1 >= w {
            let lo = i + 1 - w;
            while maxq.front().is_some_and(|&j| j < lo) {
                maxq.pop_front();
            }
            while minq.front().is_some_and(|&j| j < lo) {
                minq.pop_front();
            }
            out.push(match (maxq.front(), minq.front()) {
                (Some(&a), Some(&b)) => Some(x[a] - x[b]),
                _ => None,
            });
        }
    }
    out
}

/// Applies the four marking rules:
///
/// 1. values outside `[global_min, global_max]`;
/// 2. any `static_window` whose range stays below `static_range_max`;
/// 3. any `jump_window` containing an absolute first difference above
///    `jump_threshold`;
/// 4. externally supplied annotations.
///
/// Missing samples are always marked. Windows never span a segment start.
pub fn mark_abnormal(
    record: &WaveformRecord,
    cfg: &PreprocessConfig,
    annotations: Option<&MarkMask>,
) -> Result<MarkMask> {
    record.validate()?;
    let n = record.len();
    let rate = record.sampling_rate;
    let mut diff = vec![0i32; n + 1];
    let x = &record.values;

    for i in 0..n {
        if record.missing[i] || x[i] < cfg.global_min || x[i] > cfg.global_max {
            mark_range(&mut diff, i, i + 1);
        }
    }

    let static_w = ((cfg.static_window * rate).round() as usize).max(2);
    let jump_w = ((cfg.jump_window * rate).round() as usize).max(2);
    for (seg_start, seg_end) in record.segments() {
        let xs = &x[seg_start..seg_end];
        let present: Vec<bool> = record.missing[seg_start..seg_end]
            .iter()
            .map(|m| !m)
            .collect();
        let len = xs.len();

        for (k, range) in sliding_ranges(xs, &present, static_w).into_iter().enumerate() {
            if range.is_some_and(|r| r < cfg.static_range_max) {
                mark_range(&mut diff, seg_start + k, seg_start + k + static_w);
            }
        }

        if len >= 2 {
            for i in 0..len - 1 {
                if !(present[i] && present[i + 1]) {
                    continue;
                }
                if (xs[i + 1] - xs[i]).abs() > cfg.jump_threshold {
                    // union of every full window that contains samples i and i+1
                    if len < jump_w {
                        mark_range(&mut diff, seg_start, seg_end);
                    } else {
                        let first = (i + 2).saturating_sub(jump_w);
                        let last = i.min(len - jump_w);
                        mark_range(&mut diff, seg_start + first, seg_start + last + jump_w);
                    }
                }
            }
        }
    }

    let mut flags = Vec::with_capacity(n);
    let mut depth = 0i32;
    for d in &diff[..n] {
        depth += d;
        flags.push(depth > 0);
    }
    if let Some(ann) = annotations {
        if ann.len() != n {
            return Err(Error::Shape(format!(
                "annotation mask has length {} for a record of {n}",
                ann.len()
            )));
        }
        flags.iter_mut().zip(ann.flags()).for_each(|(f, a)| *f |= *a);
    }
    Ok(MarkMask::from_flags(flags))
}

/// Merges neighbouring marked regions whose combined length is at least
/// `merge_ratio` times the clean gap between them. Passes left to right
/// until no pair qualifies.
pub fn merge_marked_regions(mask: &MarkMask, merge_ratio: f64) -> Result<MarkMask> {
    if !(merge_ratio > 0.0) {
        return Err(Error::Config("merge_ratio must be positive".into()));
    }
    let mut regions: Vec<(usize, usize)> = mask.regions().to_vec();
    loop {
        let mut changed = false;
        let mut merged: Vec<(usize, usize)> = Vec::with_capacity(regions.len());
        for r in regions {
            if let Some(last) = merged.last_mut() {
                let gap = (r.0 - last.1) as f64;
                let marked = ((last.1 - last.0) + (r.1 - r.0)) as f64;
                if marked >= merge_ratio * gap {
                    last.1 = r.1;
                    changed = true;
                    continue;
                }
            }
            merged.push(r);
        }
        regions = merged;
        if !changed {
            break;
        }
    }
    crate::signal_io::mask_from_regions(&regions, mask.len())
}

/// Marked proportion of each consecutive meta-window; the final partial
/// window is normalized by its own length.
pub fn window_mark_proportion(mask: &MarkMask, meta_window_s: f64, rate: f64) -> Vec<f64> {
    let w = ((meta_window_s * rate).round() as usize).max(1);
    mask.flags()
        .chunks(w)
        .map(|c| c.iter().filter(|&&f| f).count() as f64 / c.len() as f64)
        .collect()
}

/// Probability of drawing each meta-window: proportional to its marked
/// proportion plus `smoothing_alpha`.
pub fn meta_window_probabilities(proportions: &[f64], smoothing_alpha: f64) -> Result<Vec<f64>> {
    let weights: Vec<f64> = proportions.iter().map(|p| p + smoothing_alpha).collect();
    let total: f64 = weights.iter().sum();
    if !(total > 0.0) {
        return Err(Error::Degenerate(
            "no meta-window has positive sampling weight".into(),
        ));
    }
    Ok(weights.into_iter().map(|w| w / total).collect())
}

fn draw_index(probs: &[f64], rng: &mut impl Rng) -> usize {
    let u: f64 = rng.random();
    let mut acc = 0.0;
    for (i, p) in probs.iter().enumerate() {
        acc += p;
        if u < acc {
            return i;
        }
    }
    // rounding left u above the last cumulative sum
    probs.iter().rposition(|&p| p > 0.0).unwrap_or(0)
}

/// Draws non-overlapping test window starts, biased towards meta-windows
/// with a high marked proportion. Returned starts are sorted.
pub fn sample_test_windows(
    record: &WaveformRecord,
    mask: &MarkMask,
    cfg: &PreprocessConfig,
) -> Result<Vec<usize>> {
    cfg.validate()?;
    let n = record.len();
    let rate = record.sampling_rate;
    let w = cfg.window_len(rate);
    let meta = ((cfg.meta_window_s * rate).round() as usize).max(1);
    if w == 0 || cfg.test_count * w > n {
        return Err(Error::Capacity(format!(
            "{} windows of {w} samples do not fit in {n} samples",
            cfg.test_count
        )));
    }
    let proportions = window_mark_proportion(mask, cfg.meta_window_s, rate);
    let probs = meta_window_probabilities(&proportions, cfg.smoothing_alpha)?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut taken: Vec<usize> = Vec::with_capacity(cfg.test_count);
    let max_attempts = cfg.test_count.max(1) * 1000;
    let mut attempts = 0;
    while taken.len() < cfg.test_count {
        attempts += 1;
        if attempts > max_attempts {
            return Err(Error::Capacity(format!(
                "placed only {} of {} non-overlapping test windows",
                taken.len(),
                cfg.test_count
            )));
        }
        let j = draw_index(&probs, &mut rng);
        let lo = j * meta;
        let hi = ((j + 1) * meta).min(n);
        // the window must lie inside the meta-window when it fits there
        let (first, last) = if hi - lo >= w {
            (lo, hi - w)
        } else {
            let s = n - w;
            (s.min(lo), s)
        };
        let start = rng.random_range(first..=last);
        if taken.iter().any(|&t| start < t + w && t < start + w) {
            continue;
        }
        taken.push(start);
    }
    taken.sort_unstable();
    Ok(taken)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Standardizer {
    pub mean: f64,
    pub sd: f64,
}

impl Standardizer {
    /// Population mean and standard deviation over every value of every
    /// window.
    pub fn fit<'a>(windows: impl IntoIterator<Item = &'a [f64]> + Clone) -> Result<Self> {
        let mut count = 0usize;
        let mut sum = 0.0;
        for w in windows.clone() {
            count += w.len();
            sum += w.iter().sum::<f64>();
        }
        if count == 0 {
            return Err(Error::Degenerate("no training values".into()));
        }
        let mean = sum / count as f64;
        let ss: f64 = windows
            .into_iter()
            .flat_map(|w| w.iter())
            .map(|v| (v - mean) * (v - mean))
            .sum();
        let sd = (ss / count as f64).sqrt();
        if !(sd > 0.0) {
            return Err(Error::Degenerate(
                "training values have zero standard deviation".into(),
            ));
        }
        Ok(Standardizer { mean, sd })
    }

    pub fn apply(&self, v: f64) -> f64 {
        (v - self.mean) / self.sd
    }

    pub fn invert(&self, z: f64) -> f64 {
        z * self.sd + self.mean
    }

    /// Standardizes a raw window, substituting [`SENTINEL`] at missing
    /// samples.
    pub fn window(&self, raw: &[f64], missing: &[bool]) -> Vec<f64> {
        raw.iter()
            .zip(missing)
            .map(|(&v, &m)| if m { SENTINEL } else { self.apply(v) })
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WindowSample {
    pub values: Vec<f64>,
    pub source_start: usize,
    pub label: Option<bool>,
    pub timepoint_label: Option<Vec<bool>>,
}

impl WindowSample {
    pub fn unlabelled(values: Vec<f64>, source_start: usize) -> Self {
        WindowSample {
            values,
            source_start,
            label: None,
            timepoint_label: None,
        }
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DatasetBundle {
    pub train: Vec<WindowSample>,
    pub validation: Vec<WindowSample>,
    pub test: Vec<WindowSample>,
    pub standardizer: Standardizer,
    pub window_len: usize,
    pub sampling_rate: f64,
    pub seed: u64,
    pub config_hash: String,
}

/// Tiles the clean, non-test part of the record into consecutive windows,
/// shuffles and splits them, and standardizes all three sets with the
/// training statistics.
pub fn build_datasets(
    record: &WaveformRecord,
    mask: &MarkMask,
    test_starts: &[usize],
    cfg: &PreprocessConfig,
) -> Result<DatasetBundle> {
    cfg.validate()?;
    record.validate()?;
    let n = record.len();
    if mask.len() != n {
        return Err(Error::Shape("mask and record lengths differ".into()));
    }
    let w = cfg.window_len(record.sampling_rate);
    let mut sorted = test_starts.to_vec();
    sorted.sort_unstable();
    if sorted.windows(2).any(|p| p[1] < p[0] + w) || sorted.last().is_some_and(|&s| s + w > n) {
        return Err(Error::InvalidInput(
            "test windows overlap or run past the record".into(),
        ));
    }

    // blocked[i] when sample i cannot enter the training pool
    let mut blocked: Vec<bool> = (0..n)
        .map(|i| mask.flags()[i] || record.missing[i])
        .collect();
    for &s in &sorted {
        blocked[s..s + w].iter_mut().for_each(|b| *b = true);
    }
    let mut pool: Vec<usize> = Vec::new();
    for (seg_start, seg_end) in record.segments() {
        let mut i = seg_start;
        while i + w <= seg_end {
            match blocked[i..i + w].iter().rposition(|&b| b) {
                Some(k) => i += k + 1,
                None => {
                    pool.push(i);
                    i += w;
                }
            }
        }
    }

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed.wrapping_add(0x7261_696e));
    pool.shuffle(&mut rng);
    let n_train = (cfg.split_ratio * pool.len() as f64).round() as usize;
    let (train_starts, val_starts) = pool.split_at(n_train);
    if train_starts.is_empty() {
        return Err(Error::Degenerate("no clean training windows".into()));
    }

    let raw = |s: usize| &record.values[s..s + w];
    let standardizer = Standardizer::fit(train_starts.iter().map(|&s| raw(s)))?;
    let make = |s: usize| {
        WindowSample::unlabelled(
            standardizer.window(raw(s), &record.missing[s..s + w]),
            s,
        )
    };
    Ok(DatasetBundle {
        train: train_starts.iter().map(|&s| make(s)).collect(),
        validation: val_starts.iter().map(|&s| make(s)).collect(),
        test: sorted.iter().map(|&s| make(s)).collect(),
        standardizer,
        window_len: w,
        sampling_rate: record.sampling_rate,
        seed: cfg.seed,
        config_hash: cfg.to_kv().digest(),
    })
}

#[derive(Debug, Serialize, Deserialize)]
struct BundleManifest {
    format_version: u32,
    window_len: usize,
    sampling_rate: f64,
    seed: u64,
    config_hash: String,
    standardizer: Standardizer,
    counts: BundleCounts,
    train_starts: Vec<usize>,
    validation_starts: Vec<usize>,
    test_starts: Vec<usize>,
    test_labels: Option<Vec<bool>>,
}

#[derive(Debug, Serialize, Deserialize)]
struct BundleCounts {
    train: usize,
    validation: usize,
    test: usize,
}

const BUNDLE_VERSION: u32 = 1;

fn write_f64s(path: &Path, windows: &[WindowSample]) -> Result<()> {
    let mut buf = Vec::with_capacity(windows.iter().map(|w| 8 * w.len()).sum());
    for w in windows {
        for v in &w.values {
            buf.extend_from_slice(&v.to_le_bytes());
        }
    }
    std::fs::write(path, buf).map_err(|e| Error::io(path, e))
}

fn read_f64s(path: &Path, count: usize, len: usize) -> Result<Vec<Vec<f64>>> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    if bytes.len() != 8 * count * len {
        return Err(Error::Format(format!(
            "{} holds {} bytes, expected {}",
            path.display(),
            bytes.len(),
            8 * count * len
        )));
    }
    Ok(bytes
        .chunks_exact(8 * len.max(1))
        .take(count)
        .map(|c| {
            c.chunks_exact(8)
                .map(|b| f64::from_le_bytes(b.try_into().unwrap()))
                .collect()
        })
        .collect())
}

impl DatasetBundle {
    /// Fills the test windows' labels from a reference annotation of the
    /// source record.
    pub fn annotate_test(&mut self, truth: &MarkMask) -> Result<()> {
        for t in &mut self.test {
            let end = t.source_start + t.values.len();
            if end > truth.len() {
                return Err(Error::Shape("annotation shorter than the test windows".into()));
            }
            let labels = truth.flags()[t.source_start..end].to_vec();
            t.label = Some(labels.iter().any(|&f| f));
            t.timepoint_label = Some(labels);
        }
        Ok(())
    }

    pub fn save(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        write_f64s(&dir.join("train.bin"), &self.train)?;
        write_f64s(&dir.join("validation.bin"), &self.validation)?;
        write_f64s(&dir.join("test.bin"), &self.test)?;
        let annotated = self.test.iter().all(|t| t.timepoint_label.is_some());
        if annotated && !self.test.is_empty() {
            let bytes: Vec<u8> = self
                .test
                .iter()
                .flat_map(|t| t.timepoint_label.as_ref().unwrap().iter().map(|&b| b as u8))
                .collect();
            let p = dir.join("test_timepoint_labels.bin");
            std::fs::write(&p, bytes).map_err(|e| Error::io(&p, e))?;
        }
        let manifest = BundleManifest {
            format_version: BUNDLE_VERSION,
            window_len: self.window_len,
            sampling_rate: self.sampling_rate,
            seed: self.seed,
            config_hash: self.config_hash.clone(),
            standardizer: self.standardizer,
            counts: BundleCounts {
                train: self.train.len(),
                validation: self.validation.len(),
                test: self.test.len(),
            },
            train_starts: self.train.iter().map(|w| w.source_start).collect(),
            validation_starts: self.validation.iter().map(|w| w.source_start).collect(),
            test_starts: self.test.iter().map(|w| w.source_start).collect(),
            test_labels: if annotated {
                Some(self.test.iter().map(|t| t.label.unwrap_or(false)).collect())
            } else {
                None
            },
        };
        let p = dir.join("manifest.json");
        std::fs::write(&p, serde_json::to_string_pretty(&manifest)?).map_err(|e| Error::io(&p, e))
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let p = dir.join("manifest.json");
        let text = std::fs::read_to_string(&p).map_err(|e| Error::io(&p, e))?;
        let m: BundleManifest = serde_json::from_str(&text)?;
        if m.format_version != BUNDLE_VERSION {
            return Err(Error::VersionMismatch {
                found: m.format_version,
                expected: BUNDLE_VERSION,
            });
        }
        let len = m.window_len;
        let load = |name: &str, starts: &[usize]| -> Result<Vec<WindowSample>> {
            Ok(read_f64s(&dir.join(name), starts.len(), len)?
                .into_iter()
                .zip(starts)
                .map(|(v, &s)| WindowSample::unlabelled(v, s))
                .collect())
        };
        let train = load("train.bin", &m.train_starts)?;
        let validation = load("validation.bin", &m.validation_starts)?;
        let mut test = load("test.bin", &m.test_starts)?;
        let label_path = dir.join("test_timepoint_labels.bin");
        if label_path.exists() {
            let bytes = std::fs::read(&label_path).map_err(|e| Error::io(&label_path, e))?;
            if bytes.len() != test.len() * len {
                return Err(Error::Format("test label file has the wrong size".into()));
            }
            for (t, chunk) in test.iter_mut().zip(bytes.chunks_exact(len.max(1))) {
                let labels: Vec<bool> = chunk.iter().map(|&b| b != 0).collect();
                t.label = Some(labels.iter().any(|&b| b));
                t.timepoint_label = Some(labels);
            }
        }
        Ok(DatasetBundle {
            train,
            validation,
            test,
            standardizer: m.standardizer,
            window_len: len,
            sampling_rate: m.sampling_rate,
            seed: m.seed,
            config_hash: m.config_hash,
        })
    }
}
