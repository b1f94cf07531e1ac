mod common;

use deepclean::detect::{calibrate_thresholds, scan_record, DetectConfig};
use deepclean::pca::fit_pca;
use deepclean::preprocess::{build_datasets, mark_abnormal, sample_test_windows, PreprocessConfig};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use deepclean::synth::{build_corpus, generate_clean, CorpusConfig, PulseTemplateParams};

#[test]
fn clean_signal_peaks_at_the_beat_rate() {
    let params = PulseTemplateParams::default();
    let rec = generate_clean(&params, 60.0, 125.0, 3).unwrap();
    let f = common::dominant_frequency(&rec.values, 125.0, 0.5, 3.0, 0.005);
    assert!((f - 1.0 / params.period).abs() < 0.03, "peak {f} Hz for period {}", params.period);
}

#[test]
fn test_windows_overlap_marked_regions_more_than_uniform_draws() {
    let corpus = build_corpus(&CorpusConfig::default(), 7).unwrap();
    let pre = PreprocessConfig {
        seed: 7,
        ..PreprocessConfig::default()
    };
    let marked = mark_abnormal(&corpus.record, &pre, None).unwrap();
    let w = pre.window_len(corpus.record.sampling_rate);
    let starts = sample_test_windows(&corpus.record, &marked, &pre).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let uniform: Vec<usize> = (0..20_000).map(|_| rng.random_range(0..=corpus.record.len() - w)).collect();
    let rate = |s: &[usize]| s.iter().filter(|&&x| marked.any_in(x, x + w)).count() as f64 / s.len() as f64;
    let (sampled, baseline) = (rate(&starts), rate(&uniform));
    assert!(sampled >= 1.25 * baseline, "sampled {sampled:.3} vs uniform {baseline:.3}");
}

#[test]
fn pca_imputation_repairs_static_lines() {
    let cfg = CorpusConfig {
        duration_s: 1800.0,
        artefacts_per_hour: 30.0,
        kind_weights: [0.0, 0.0, 0.0, 0.0, 1.0, 0.0],
        ..CorpusConfig::default()
    };
    let corpus = build_corpus(&cfg, 8).unwrap();
    let pre = PreprocessConfig {
        test_count: 20,
        ..PreprocessConfig::default()
    };
    let marked = mark_abnormal(&corpus.record, &pre, None).unwrap();
    let starts = sample_test_windows(&corpus.record, &marked, &pre).unwrap();
    let bundle = build_datasets(&corpus.record, &marked, &starts, &pre).unwrap();
    let train: Vec<&[f64]> = bundle.train.iter().map(|t| t.values.as_slice()).collect();
    let pca = fit_pca(&train, 8).unwrap();
    let thr = calibrate_thresholds(&pca, &train, &DetectConfig::default()).unwrap();
    let found = scan_record(&pca, &bundle.standardizer, &thr, &corpus.record).unwrap();
    let (mut clean, mut art, mut imp) = (Vec::new(), Vec::new(), Vec::new());
    for a in &corpus.artefacts {
        clean.extend_from_slice(&corpus.clean.values[a.start..a.end()]);
        art.extend_from_slice(&corpus.record.values[a.start..a.end()]);
        imp.extend_from_slice(&found.imputed.values[a.start..a.end()]);
    }
    let (before, after) = (common::rmse(&art, &clean), common::rmse(&imp, &clean));
    assert!(after < before, "imputed RMSE {after:.2} not below artefact RMSE {before:.2}");
}
