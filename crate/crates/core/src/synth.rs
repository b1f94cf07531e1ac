//! Deterministic synthetic arterial-pressure-like waveforms with injected,
//! labelled artefacts.
//!
//! Each beat is the sum of three log-normal shaped bumps (systolic wave,
//! dicrotic rebound, slow diastolic decay) stretched to the beat period.
//! Respiratory modulation, slow heart-rate and amplitude wander, a
//! mean-reverting baseline drift and white noise are layered on top.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kv::KeyValues;
use crate::signal_io::{mask_from_regions, MarkMask, WaveformRecord, DEFAULT_RATE};

/// Per-beat autoregressive coefficient of the baseline drift.
const DRIFT_REVERSION: f64 = 0.995;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PulseTemplateParams {
    pub period: f64,
    pub systolic_amp: f64,
    pub diastolic_base: f64,
    pub notch_depth: f64,
    pub notch_phase: f64,
    pub respiratory_mod_amp: f64,
    pub respiratory_period: f64,
    pub noise_sd: f64,
    pub drift_sd: f64,
    /// Relative beat-to-beat period jitter; each period is drawn uniformly
    /// from `period * (1 ± jitter)`.
    pub jitter: f64,
    /// Standard deviation of the slow relative heart-rate wander.
    #[serde(default)]
    pub rate_variation: f64,
    /// Standard deviation of the slow relative pulse-amplitude wander.
    #[serde(default)]
    pub amplitude_variation: f64,
    /// Correlation time of both slow wanders, seconds.
    #[serde(default = "default_variation_timescale")]
    pub variation_timescale_s: f64,
}

fn default_variation_timescale() -> f64 {
    120.0
}

impl Default for PulseTemplateParams {
    fn default() -> Self {
        PulseTemplateParams {
            period: 0.8,
            systolic_amp: 40.0,
            diastolic_base: 75.0,
            notch_depth: 6.0,
            notch_phase: 0.38,
            respiratory_mod_amp: 4.0,
            respiratory_period: 4.0,
            noise_sd: 1.5,
            drift_sd: 0.3,
            jitter: 0.02,
            rate_variation: 0.0,
            amplitude_variation: 0.0,
            variation_timescale_s: 120.0,
        }
    }
}

impl PulseTemplateParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.period > 0.0) {
            return Err(Error::Config("period must be positive".into()));
        }
        if !(self.systolic_amp > 0.0) {
            return Err(Error::Config("systolic_amp must be positive".into()));
        }
        if !(self.notch_phase > 0.0 && self.notch_phase < 1.0) {
            return Err(Error::Config("notch_phase must lie in (0, 1)".into()));
        }
        if !(self.respiratory_period > 0.0) {
            return Err(Error::Config("respiratory_period must be positive".into()));
        }
        if self.noise_sd < 0.0 || self.drift_sd < 0.0 || !(0.0..1.0).contains(&self.jitter) {
            return Err(Error::Config(
                "noise_sd and drift_sd must be non-negative and jitter in [0, 1)".into(),
            ));
        }
        if !(0.0..0.3).contains(&self.rate_variation)
            || !(0.0..0.3).contains(&self.amplitude_variation)
            || !(self.variation_timescale_s > 0.0)
        {
            return Err(Error::Config(
                "rate and amplitude variation must lie in [0, 0.3) with a positive timescale"
                    .into(),
            ));
        }
        Ok(())
    }

    /// Pulse shape above the diastolic base at beat phase `phase` in [0, 1].
    /// The shape is pinned to zero at both ends so consecutive beats join.
    pub fn beat_shape(&self, phase: f64) -> f64 {
        let raw = |p: f64| {
            self.systolic_amp * lognormal_bump(p, 0.15, 0.38)
                + 0.32 * self.systolic_amp * lognormal_bump(p, 0.5, 0.55)
                + self.notch_depth * lognormal_bump(p, self.notch_phase + 0.07, 0.09)
        };
        raw(phase) - phase * raw(1.0)
    }
}

fn lognormal_bump(phase: f64, centre: f64, width: f64) -> f64 {
    if phase <= 0.0 {
        return 0.0;
    }
    let l = (phase / centre).ln();
    (-l * l / (2.0 * width * width)).exp()
}

/// Generates `duration_s` seconds of clean quasi-periodic signal.
pub fn generate_clean(
    params: &PulseTemplateParams,
    duration_s: f64,
    rate: f64,
    seed: u64,
) -> Result<WaveformRecord> {
    params.validate()?;
    if !(duration_s > 0.0) || !(rate > 0.0) {
        return Err(Error::Config("duration and rate must be positive".into()));
    }
    let n = (duration_s * rate).round() as usize;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let noise = Normal::new(0.0, params.noise_sd.max(f64::MIN_POSITIVE)).unwrap();
    let drift_step = Normal::new(0.0, params.drift_sd.max(f64::MIN_POSITIVE)).unwrap();
    let resp_phase = rng.random::<f64>() * std::f64::consts::TAU;

    let mut values = Vec::with_capacity(n);
    let mut wander = Wander::new(params, &mut rng);
    let mut beat_start = 0.0;
    let mut beat_period = next_period(params, wander.rate, &mut rng);
    let mut drift_now = 0.0;
    let mut drift_next = next_drift(params, drift_now, &drift_step, &mut rng);
    for i in 0..n {
        let t = i as f64 / rate;
        while t >= beat_start + beat_period {
            beat_start += beat_period;
            wander.step(params, beat_period, &mut rng);
            beat_period = next_period(params, wander.rate, &mut rng);
            drift_now = drift_next;
            drift_next = next_drift(params, drift_now, &drift_step, &mut rng);
        }
        let phase = (t - beat_start) / beat_period;
        let drift = drift_now + (drift_next - drift_now) * phase;
        let resp = params.respiratory_mod_amp
            * (std::f64::consts::TAU * t / params.respiratory_period + resp_phase).sin();
        let eps = if params.noise_sd > 0.0 {
            noise.sample(&mut rng)
        } else {
            0.0
        };
        let pulse = params.beat_shape(phase) * (1.0 + params.amplitude_variation * wander.amp);
        values.push(params.diastolic_base + pulse + drift + resp + eps);
    }
    Ok(WaveformRecord::new(values, rate))
}

/// Unit-variance AR(1) states, clipped to ±2.5, driving slow changes in
/// heart rate and pulse amplitude.
struct Wander {
    rate: f64,
    amp: f64,
}

impl Wander {
    fn new(params: &PulseTemplateParams, rng: &mut ChaCha8Rng) -> Self {
        let mut w = Wander { rate: 0.0, amp: 0.0 };
        if params.rate_variation > 0.0 || params.amplitude_variation > 0.0 {
            w.rate = clip_wander(StandardNormal.sample(rng));
            w.amp = clip_wander(StandardNormal.sample(rng));
        }
        w
    }

    fn step(&mut self, params: &PulseTemplateParams, dt: f64, rng: &mut ChaCha8Rng) {
        if params.rate_variation == 0.0 && params.amplitude_variation == 0.0 {
            return;
        }
        let rho = (-dt / params.variation_timescale_s).exp();
        let innov = (1.0 - rho * rho).sqrt();
        let a: f64 = StandardNormal.sample(rng);
        let b: f64 = StandardNormal.sample(rng);
        self.rate = clip_wander(rho * self.rate + innov * a);
        self.amp = clip_wander(rho * self.amp + innov * b);
    }
}

fn clip_wander(v: f64) -> f64 {
    v.clamp(-2.5, 2.5)
}

fn next_period(params: &PulseTemplateParams, wander: f64, rng: &mut ChaCha8Rng) -> f64 {
    let base = params.period / (1.0 + params.rate_variation * wander);
    if params.jitter > 0.0 {
        base * (1.0 + params.jitter * rng.random_range(-1.0..=1.0))
    } else {
        base
    }
}

fn next_drift(
    params: &PulseTemplateParams,
    current: f64,
    step: &Normal<f64>,
    rng: &mut ChaCha8Rng,
) -> f64 {
    if params.drift_sd > 0.0 {
        DRIFT_REVERSION * current + step.sample(rng)
    } else {
        0.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ArtefactKind {
    Flush,
    Attenuation,
    Overdamping,
    NoiseBurst,
    StaticLine,
    SpikeTrain,
}

impl ArtefactKind {
    pub const ALL: [ArtefactKind; 6] = [
        ArtefactKind::Flush,
        ArtefactKind::Attenuation,
        ArtefactKind::Overdamping,
        ArtefactKind::NoiseBurst,
        ArtefactKind::StaticLine,
        ArtefactKind::SpikeTrain,
    ];

    pub fn name(self) -> &'static str {
        match self {
            ArtefactKind::Flush => "flush",
            ArtefactKind::Attenuation => "attenuation",
            ArtefactKind::Overdamping => "overdamping",
            ArtefactKind::NoiseBurst => "noise_burst",
            ArtefactKind::StaticLine => "static_line",
            ArtefactKind::SpikeTrain => "spike_train",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArtefactSpec {
    pub kind: ArtefactKind,
    pub start: usize,
    pub duration: usize,
    pub severity: f64,
}

impl ArtefactSpec {
    pub fn end(&self) -> usize {
        self.start + self.duration
    }
}

/// Centred moving average with a window of `width` samples, clipped at the
/// edges of `x`.
fn moving_average(x: &[f64], width: usize) -> Vec<f64> {
    let half = width / 2;
    let mut prefix = Vec::with_capacity(x.len() + 1);
    prefix.push(0.0);
    for &v in x {
        prefix.push(prefix.last().unwrap() + v);
    }
    (0..x.len())
        .map(|i| {
            let lo = i.saturating_sub(half);
            let hi = (i + half + 1).min(x.len());
            (prefix[hi] - prefix[lo]) / (hi - lo) as f64
        })
        .collect()
}

/// Applies one artefact to a copy of `record`.
///
/// Returns the modified record and a mask covering exactly the injected
/// interval. When `already_marked` is given, injecting on top of a marked
/// sample is rejected so that labels stay unambiguous.
pub fn inject_artefact(
    record: &WaveformRecord,
    spec: &ArtefactSpec,
    seed: u64,
    already_marked: Option<&MarkMask>,
) -> Result<(WaveformRecord, MarkMask)> {
    let n = record.len();
    if spec.duration == 0 || spec.end() > n {
        return Err(Error::Bounds(format!(
            "artefact [{}, {}) outside record of length {n}",
            spec.start,
            spec.end()
        )));
    }
    if !(spec.severity > 0.0 && spec.severity <= 1.0) {
        return Err(Error::Config(format!(
            "severity {} outside (0, 1]",
            spec.severity
        )));
    }
    if let Some(marked) = already_marked {
        if marked.len() != n {
            return Err(Error::Shape("existing mask length differs from record".into()));
        }
        if marked.any_in(spec.start, spec.end()) {
            return Err(Error::Overlap {
                start: spec.start,
                end: spec.end(),
            });
        }
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let rate = record.sampling_rate;
    let (s, e) = (spec.start, spec.end());
    let sev = spec.severity;
    let mut out = record.clone();
    let region = &mut out.values[s..e];
    let clean = &record.values[s..e];
    let len = region.len();

    match spec.kind {
        ArtefactKind::Flush => {
            // fast rise, flat plateau, exponential return to the signal
            let plateau = 300.0 * sev;
            let rise = ((0.15 * len as f64).round() as usize).clamp(1, len);
            let hold_end = ((0.6 * len as f64).round() as usize).clamp(rise, len);
            let tau = (0.1 * len as f64).max(1.0);
            let from = clean[0];
            for (i, v) in region.iter_mut().enumerate() {
                *v = if i < rise {
                    from + (plateau - from) * (i + 1) as f64 / rise as f64
                } else if i < hold_end {
                    plateau
                } else {
                    let decay = (-((i - hold_end) as f64) / tau).exp();
                    clean[i] + (plateau - clean[i]) * decay
                };
            }
        }
        ArtefactKind::Attenuation => {
            let width = (record_period_samples(rate)).max(1);
            let mean = local_mean(&record.values, s, e, width);
            let shift = -20.0 * sev;
            for (i, v) in region.iter_mut().enumerate() {
                *v = mean[i] + shift + (1.0 - sev) * (clean[i] - mean[i]);
            }
        }
        ArtefactKind::Overdamping => {
            let width = (record_period_samples(rate)).max(1);
            let mean = local_mean(&record.values, s, e, width);
            let smooth_width = ((0.12 * rate).round() as usize).max(1);
            let lo = s.saturating_sub(smooth_width);
            let hi = (e + smooth_width).min(n);
            let smooth = moving_average(&record.values[lo..hi], smooth_width);
            for (i, v) in region.iter_mut().enumerate() {
                let lp = smooth[s - lo + i];
                *v = mean[i] + (1.0 - sev) * (lp - mean[i]);
            }
        }
        ArtefactKind::NoiseBurst => {
            let noise = Normal::new(0.0, 20.0 * sev).unwrap();
            for v in region.iter_mut() {
                *v += noise.sample(&mut rng);
            }
        }
        ArtefactKind::StaticLine => {
            let hold = clean[0];
            region.iter_mut().for_each(|v| *v = hold);
        }
        ArtefactKind::SpikeTrain => {
            let spacing = ((0.25 * rate).round() as usize).max(2);
            let jitter = spacing / 8;
            let mut pos = rng.random_range(0..spacing.min(len));
            while pos < len {
                let sign = if rng.random::<bool>() { 1.0 } else { -1.0 };
                region[pos] += sign * 100.0 * sev;
                let step = spacing as i64 + rng.random_range(-(jitter as i64)..=jitter as i64);
                pos += step.max(1) as usize;
            }
        }
    }
    let mask = mask_from_regions(&[(s, e)], n)?;
    Ok((out, mask))
}

fn record_period_samples(rate: f64) -> usize {
    (PulseTemplateParams::default().period * rate).round() as usize
}

/// One-period moving average of `values` evaluated on `[s, e)`, with the
/// averaging window taken from the surrounding clean signal.
fn local_mean(values: &[f64], s: usize, e: usize, width: usize) -> Vec<f64> {
    let lo = s.saturating_sub(width);
    let hi = (e + width).min(values.len());
    let avg = moving_average(&values[lo..hi], width);
    avg[s - lo..e - lo].to_vec()
}

/// Corpus generation settings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorpusConfig {
    pub duration_s: f64,
    pub rate: f64,
    pub template: PulseTemplateParams,
    /// Expected artefacts per hour; the count is `round(rate * hours)`.
    pub artefacts_per_hour: f64,
    pub min_artefact_s: f64,
    pub max_artefact_s: f64,
    pub min_severity: f64,
    pub max_severity: f64,
    /// Minimum clean separation between neighbouring artefacts.
    pub min_separation_s: f64,
    /// Relative weights of [`ArtefactKind::ALL`].
    pub kind_weights: [f64; 6],
    pub max_placement_attempts: usize,
}

impl Default for CorpusConfig {
    fn default() -> Self {
        CorpusConfig {
            duration_s: 7200.0,
            rate: DEFAULT_RATE,
            template: PulseTemplateParams::default(),
            artefacts_per_hour: 12.0,
            min_artefact_s: 4.0,
            max_artefact_s: 10.0,
            min_severity: 0.6,
            max_severity: 1.0,
            min_separation_s: 2.0,
            kind_weights: [1.0; 6],
            max_placement_attempts: 10_000,
        }
    }
}

const CORPUS_KEYS: &[&str] = &[
    "duration_s",
    "rate",
    "artefacts_per_hour",
    "min_artefact_s",
    "max_artefact_s",
    "min_severity",
    "max_severity",
    "min_separation_s",
    "max_placement_attempts",
    "period",
    "systolic_amp",
    "diastolic_base",
    "notch_depth",
    "notch_phase",
    "respiratory_mod_amp",
    "respiratory_period",
    "noise_sd",
    "drift_sd",
    "jitter",
    "rate_variation",
    "amplitude_variation",
    "variation_timescale_s",
    "weight_flush",
    "weight_attenuation",
    "weight_overdamping",
    "weight_noise_burst",
    "weight_static_line",
    "weight_spike_train",
];

impl CorpusConfig {
    pub fn from_kv(kv: &KeyValues) -> Result<Self> {
        kv.reject_unknown(CORPUS_KEYS)?;
        let mut c = CorpusConfig::default();
        kv.update("duration_s", &mut c.duration_s)?;
        kv.update("rate", &mut c.rate)?;
        kv.update("artefacts_per_hour", &mut c.artefacts_per_hour)?;
        kv.update("min_artefact_s", &mut c.min_artefact_s)?;
        kv.update("max_artefact_s", &mut c.max_artefact_s)?;
        kv.update("min_severity", &mut c.min_severity)?;
        kv.update("max_severity", &mut c.max_severity)?;
        kv.update("min_separation_s", &mut c.min_separation_s)?;
        kv.update("max_placement_attempts", &mut c.max_placement_attempts)?;
        let t = &mut c.template;
        kv.update("period", &mut t.period)?;
        kv.update("systolic_amp", &mut t.systolic_amp)?;
        kv.update("diastolic_base", &mut t.diastolic_base)?;
        kv.update("notch_depth", &mut t.notch_depth)?;
        kv.update("notch_phase", &mut t.notch_phase)?;
        kv.update("respiratory_mod_amp", &mut t.respiratory_mod_amp)?;
        kv.update("respiratory_period", &mut t.respiratory_period)?;
        kv.update("noise_sd", &mut t.noise_sd)?;
        kv.update("drift_sd", &mut t.drift_sd)?;
        kv.update("jitter", &mut t.jitter)?;
        kv.update("rate_variation", &mut t.rate_variation)?;
        kv.update("amplitude_variation", &mut t.amplitude_variation)?;
        kv.update("variation_timescale_s", &mut t.variation_timescale_s)?;
        for (kind, w) in ArtefactKind::ALL.iter().zip(c.kind_weights.iter_mut()) {
            kv.update(&format!("weight_{}", kind.name()), w)?;
        }
        c.validate()?;
        Ok(c)
    }

    pub fn to_kv(&self) -> KeyValues {
        let mut kv = KeyValues::new();
        kv.set("duration_s", self.duration_s);
        kv.set("rate", self.rate);
        kv.set("artefacts_per_hour", self.artefacts_per_hour);
        kv.set("min_artefact_s", self.min_artefact_s);
        kv.set("max_artefact_s", self.max_artefact_s);
        kv.set("min_severity", self.min_severity);
        kv.set("max_severity", self.max_severity);
        kv.set("min_separation_s", self.min_separation_s);
        kv.set("max_placement_attempts", self.max_placement_attempts);
        let t = &self.template;
        kv.set("period", t.period);
        kv.set("systolic_amp", t.systolic_amp);
        kv.set("diastolic_base", t.diastolic_base);
        kv.set("notch_depth", t.notch_depth);
        kv.set("notch_phase", t.notch_phase);
        kv.set("respiratory_mod_amp", t.respiratory_mod_amp);
        kv.set("respiratory_period", t.respiratory_period);
        kv.set("noise_sd", t.noise_sd);
        kv.set("drift_sd", t.drift_sd);
        kv.set("jitter", t.jitter);
        kv.set("rate_variation", t.rate_variation);
        kv.set("amplitude_variation", t.amplitude_variation);
        kv.set("variation_timescale_s", t.variation_timescale_s);
        for (kind, w) in ArtefactKind::ALL.iter().zip(&self.kind_weights) {
            kv.set(&format!("weight_{}", kind.name()), w);
        }
        kv
    }

    pub fn validate(&self) -> Result<()> {
        self.template.validate()?;
        if !(self.duration_s > 0.0 && self.rate > 0.0) {
            return Err(Error::Config("duration_s and rate must be positive".into()));
        }
        if self.artefacts_per_hour < 0.0 {
            return Err(Error::Config("artefacts_per_hour must be non-negative".into()));
        }
        if !(self.min_artefact_s > 0.0 && self.min_artefact_s <= self.max_artefact_s) {
            return Err(Error::Config("artefact duration range is empty".into()));
        }
        if !(self.min_severity > 0.0
            && self.min_severity <= self.max_severity
            && self.max_severity <= 1.0)
        {
            return Err(Error::Config("severity range must lie in (0, 1]".into()));
        }
        if self.kind_weights.iter().any(|&w| w < 0.0) || self.kind_weights.iter().sum::<f64>() <= 0.0
        {
            return Err(Error::Config("kind weights must be non-negative, not all zero".into()));
        }
        Ok(())
    }

    pub fn artefact_count(&self) -> usize {
        (self.artefacts_per_hour * self.duration_s / 3600.0).round() as usize
    }
}

/// A generated corpus: the artefactual recording, the clean signal it was
/// built from, the ground-truth mask and the injected artefact list.
#[derive(Debug, Clone)]
pub struct Corpus {
    pub record: WaveformRecord,
    pub clean: WaveformRecord,
    pub truth: MarkMask,
    pub artefacts: Vec<ArtefactSpec>,
}

/// Builds a long record with uniformly (Poisson-process) placed,
/// non-overlapping artefacts. The ground-truth mask is kept separate from
/// the record so that it never reaches the detection pipeline.
/// Exactly `count` kinds in proportion to `weights` (largest remainder),
/// in shuffled order.
fn apportion_kinds(count: usize, weights: &[f64; 6], rng: &mut ChaCha8Rng) -> Vec<ArtefactKind> {
    let total: f64 = weights.iter().sum();
    let quotas: Vec<f64> = weights.iter().map(|w| w / total * count as f64).collect();
    let mut counts: Vec<usize> = quotas.iter().map(|q| q.floor() as usize).collect();
    let mut by_remainder: Vec<usize> = (0..6).collect();
    by_remainder.sort_by(|&a, &b| (quotas[b] - quotas[b].floor()).total_cmp(&(quotas[a] - quotas[a].floor())));
    let short = count - counts.iter().sum::<usize>();
    for &i in by_remainder.iter().take(short) {
        counts[i] += 1;
    }
    let mut kinds: Vec<ArtefactKind> = ArtefactKind::ALL
        .iter()
        .zip(&counts)
        .flat_map(|(k, &c)| std::iter::repeat_n(*k, c))
        .collect();
    kinds.shuffle(rng);
    kinds
}

pub fn build_corpus(config: &CorpusConfig, seed: u64) -> Result<Corpus> {
    config.validate()?;
    let clean = generate_clean(&config.template, config.duration_s, config.rate, seed)?;
    let n = clean.len();
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed_a47e_fac7_0001);
    let count = config.artefact_count();
    let separation = (config.min_separation_s * config.rate).round() as usize;
    let min_len = ((config.min_artefact_s * config.rate).round() as usize).max(1);
    let max_len = ((config.max_artefact_s * config.rate).round() as usize).max(min_len);
    if count > 0 && max_len > n {
        return Err(Error::Config("artefacts are longer than the record".into()));
    }
    let kinds = apportion_kinds(count, &config.kind_weights, &mut rng);

    let mut specs: Vec<ArtefactSpec> = Vec::with_capacity(count);
    let mut attempts = 0;
    while specs.len() < count {
        attempts += 1;
        if attempts > config.max_placement_attempts {
            return Err(Error::Config(format!(
                "could only place {} of {count} artefacts without overlap",
                specs.len()
            )));
        }
        let duration = rng.random_range(min_len..=max_len);
        let start = rng.random_range(0..=n - duration);
        let clash = specs.iter().any(|o| {
            start < o.end() + separation && o.start < start + duration + separation
        });
        if clash {
            continue;
        }
        let kind = kinds[specs.len()];
        let severity = if config.max_severity > config.min_severity {
            rng.random_range(config.min_severity..=config.max_severity)
        } else {
            config.max_severity
        };
        specs.push(ArtefactSpec {
            kind,
            start,
            duration,
            severity,
        });
    }
    specs.sort_by_key(|s| s.start);

    let mut record = clean.clone();
    let mut truth = MarkMask::empty(n);
    for (i, spec) in specs.iter().enumerate() {
        let (next, region) = inject_artefact(&record, spec, seed.wrapping_add(i as u64 + 1), Some(&truth))?;
        record = next;
        truth = truth.union(&region)?;
    }
    Ok(Corpus {
        record,
        clean,
        truth,
        artefacts: specs,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn quiet() -> PulseTemplateParams {
        PulseTemplateParams {
            noise_sd: 0.0,
            drift_sd: 0.0,
            jitter: 0.0,
            rate_variation: 0.0,
            amplitude_variation: 0.0,
            ..PulseTemplateParams::default()
        }
    }

    fn autocorrelation_peak(x: &[f64], min_lag: usize, max_lag: usize) -> usize {
        let mean = x.iter().sum::<f64>() / x.len() as f64;
        (min_lag..=max_lag)
            .max_by(|&a, &b| {
                let ac = |lag: usize| {
                    (0..x.len() - lag)
                        .map(|i| (x[i] - mean) * (x[i + lag] - mean))
                        .sum::<f64>()
                };
                ac(a).partial_cmp(&ac(b)).unwrap()
            })
            .unwrap()
    }

    #[test]
    fn beat_shape_has_notch_and_rebound() {
        let p = PulseTemplateParams::default();
        let shape: Vec<f64> = (0..=200).map(|i| p.beat_shape(i as f64 / 200.0)).collect();
        let peak = (0..=200)
            .max_by(|&a, &b| shape[a].partial_cmp(&shape[b]).unwrap())
            .unwrap();
        // a local minimum followed by a local maximum after the systolic peak
        let minima: Vec<usize> = (peak + 1..200)
            .filter(|&i| shape[i] < shape[i - 1] && shape[i] < shape[i + 1])
            .collect();
        assert_eq!(minima.len(), 1);
        let notch = minima[0];
        assert!((notch as f64 / 200.0 - p.notch_phase).abs() < 0.05);
        assert!((notch..200).any(|i| shape[i] > shape[i - 1] && shape[i] > shape[i + 1]));
        assert!(shape[0].abs() < 1e-12 && shape[200].abs() < 1e-12);
    }

    #[test]
    fn beat_period_shows_in_autocorrelation() {
        let r = generate_clean(&PulseTemplateParams::default(), 10.0, 125.0, 3).unwrap();
        assert_eq!(r.len(), 1250);
        let lag = autocorrelation_peak(&r.values, 60, 140);
        assert!((95..=105).contains(&lag), "lag {lag}");
    }

    #[test]
    fn heart_rate_wanders_slowly() {
        let p = PulseTemplateParams {
            rate_variation: 0.1,
            amplitude_variation: 0.15,
            ..PulseTemplateParams::default()
        };
        let r = generate_clean(&p, 3600.0, 125.0, 4).unwrap();
        let lags: Vec<usize> = r
            .values
            .chunks_exact(1250)
            .map(|c| autocorrelation_peak(c, 60, 140))
            .collect();
        let lo = *lags.iter().min().unwrap();
        let hi = *lags.iter().max().unwrap();
        assert!(hi - lo >= 15, "{lo}..{hi}");
        let mean = lags.iter().sum::<usize>() as f64 / lags.len() as f64;
        assert!((90.0..=110.0).contains(&mean), "{mean}");
        let big_jumps = lags.windows(2).filter(|w| w[0].abs_diff(w[1]) > 6).count();
        assert!(big_jumps * 10 < lags.len(), "{big_jumps}");
    }

    #[test]
    fn quiet_generator_is_exactly_periodic() {
        let p = PulseTemplateParams {
            respiratory_mod_amp: 0.0,
            ..quiet()
        };
        let r = generate_clean(&p, 8.0, 125.0, 1).unwrap();
        for i in 0..r.len() - 100 {
            assert!((r.values[i] - r.values[i + 100]).abs() < 1e-9);
        }
    }

    #[test]
    fn same_seed_same_signal() {
        let p = PulseTemplateParams::default();
        let a = generate_clean(&p, 30.0, 125.0, 11).unwrap();
        let b = generate_clean(&p, 30.0, 125.0, 11).unwrap();
        let c = generate_clean(&p, 30.0, 125.0, 12).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, c);
    }

    #[test]
    fn default_signal_stays_physiological() {
        let r = generate_clean(&PulseTemplateParams::default(), 3600.0, 125.0, 5).unwrap();
        let (lo, hi) = r
            .values
            .iter()
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(l, h), &v| (l.min(v), h.max(v)));
        assert!(lo > 40.0 && hi < 200.0, "range {lo}..{hi}");
    }

    fn base() -> WaveformRecord {
        generate_clean(&PulseTemplateParams::default(), 20.0, 125.0, 9).unwrap()
    }

    fn spec(kind: ArtefactKind, severity: f64) -> ArtefactSpec {
        ArtefactSpec {
            kind,
            start: 500,
            duration: 1000,
            severity,
        }
    }

    #[test]
    fn static_line_is_flat() {
        let (r, m) = inject_artefact(&base(), &spec(ArtefactKind::StaticLine, 0.3), 1, None).unwrap();
        let region = &r.values[500..1500];
        assert!(region.iter().all(|&v| v == region[0]));
        assert_eq!(m.regions(), &[(500, 1500)]);
    }

    #[test]
    fn flush_reaches_plateau() {
        let (r, _) = inject_artefact(&base(), &spec(ArtefactKind::Flush, 1.0), 1, None).unwrap();
        let max = r.values[500..1500].iter().cloned().fold(f64::MIN, f64::max);
        assert!(max >= 250.0);
        assert_eq!(&r.values[..500], &base().values[..500]);
    }

    #[test]
    fn overdamping_preserves_beat_means() {
        let clean = generate_clean(&quiet(), 20.0, 125.0, 2).unwrap();
        let (r, _) =
            inject_artefact(&clean, &spec(ArtefactKind::Overdamping, 0.5), 1, None).unwrap();
        // whole beats (100 samples each) inside the region, away from its edges
        for beat in 6..14 {
            let (s, e) = (beat * 100, beat * 100 + 100);
            let mean = |v: &[f64]| v[s..e].iter().sum::<f64>() / 100.0;
            let d = (mean(&r.values) - mean(&clean.values)).abs();
            assert!(d < 2.0, "beat {beat} mean moved by {d}");
        }
        let range = |v: &[f64]| {
            v[700..1300].iter().cloned().fold(f64::MIN, f64::max)
                - v[700..1300].iter().cloned().fold(f64::MAX, f64::min)
        };
        assert!(range(&r.values) < 0.6 * range(&clean.values));
    }

    #[test]
    fn spike_train_and_noise_change_region_only() {
        for kind in [ArtefactKind::SpikeTrain, ArtefactKind::NoiseBurst, ArtefactKind::Attenuation] {
            let (r, _) = inject_artefact(&base(), &spec(kind, 0.8), 4, None).unwrap();
            let b = base();
            assert_eq!(&r.values[..500], &b.values[..500]);
            assert_eq!(&r.values[1500..], &b.values[1500..]);
            assert!(r.values[500..1500] != b.values[500..1500], "{kind:?}");
        }
        let (r, _) = inject_artefact(&base(), &spec(ArtefactKind::SpikeTrain, 1.0), 4, None).unwrap();
        let spikes = (500..1500)
            .filter(|&i| (r.values[i] - base().values[i]).abs() > 99.0)
            .count();
        assert!((30..=34).contains(&spikes), "{spikes} spikes in 8 s");
    }

    #[test]
    fn overlapping_injection_is_rejected() {
        let r = base();
        let marked = mask_from_regions(&[(1400, 1600)], r.len()).unwrap();
        let err = inject_artefact(&r, &spec(ArtefactKind::Flush, 1.0), 1, Some(&marked)).unwrap_err();
        assert!(matches!(err, Error::Overlap { .. }));
    }

    #[test]
    fn corpus_without_artefacts() {
        let cfg = CorpusConfig {
            duration_s: 600.0,
            artefacts_per_hour: 0.0,
            ..CorpusConfig::default()
        };
        let c = build_corpus(&cfg, 1).unwrap();
        assert_eq!(c.truth.marked_count(), 0);
        assert_eq!(c.record, c.clean);
    }

    #[test]
    fn one_hour_thirty_artefacts() {
        let cfg = CorpusConfig {
            duration_s: 3600.0,
            artefacts_per_hour: 30.0,
            ..CorpusConfig::default()
        };
        let c = build_corpus(&cfg, 2).unwrap();
        assert_eq!(c.truth.regions().len(), 30);
        let expected: Vec<(usize, usize)> = c.artefacts.iter().map(|a| (a.start, a.end())).collect();
        assert_eq!(c.truth.regions(), expected.as_slice());
    }

    #[test]
    fn default_prevalence_near_two_percent() {
        for seed in [1, 2, 3] {
            let c = build_corpus(&CorpusConfig::default(), seed).unwrap();
            let f = c.truth.marked_fraction();
            assert!((0.013..=0.033).contains(&f), "seed {seed}: {f}");
        }
    }

    #[test]
    fn infeasible_density_is_a_config_error() {
        let cfg = CorpusConfig {
            duration_s: 60.0,
            artefacts_per_hour: 3600.0,
            max_placement_attempts: 500,
            ..CorpusConfig::default()
        };
        assert!(matches!(build_corpus(&cfg, 1), Err(Error::Config(_))));
    }

    #[test]
    fn corpus_is_deterministic_and_config_round_trips() {
        let cfg = CorpusConfig {
            duration_s: 900.0,
            ..CorpusConfig::default()
        };
        let a = build_corpus(&cfg, 8).unwrap();
        let b = build_corpus(&cfg, 8).unwrap();
        assert_eq!(a.record, b.record);
        assert_eq!(a.truth, b.truth);
        let back = CorpusConfig::from_kv(&KeyValues::parse(&cfg.to_kv().render()).unwrap()).unwrap();
        assert_eq!(back, cfg);
    }
}
