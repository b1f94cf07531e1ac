use std::path::Path;
use std::process::{Command, Output};

use deepclean::cli::RunManifest;
use deepclean::pca::PcaModel;
use sha2::{Digest, Sha256};

fn deepclean(args: &[&str], cwd: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_deepclean"))
        .args(args)
        .current_dir(cwd)
        .env_remove("DEEPCLEAN_CACHE")
        .output()
        .unwrap()
}

fn code(out: &Output) -> i32 {
    out.status.code().unwrap()
}

fn manifest(path: &Path) -> RunManifest {
    serde_json::from_str(&std::fs::read_to_string(path).unwrap()).unwrap()
}

fn check_outputs(m: &RunManifest, cwd: &Path) {
    assert!(!m.outputs.is_empty());
    for f in m.outputs.iter().chain(&m.inputs) {
        let bytes = std::fs::read(cwd.join(&f.path)).unwrap();
        assert_eq!(hex::encode(Sha256::digest(&bytes)), f.sha256, "{}", f.path);
    }
}

#[test]
fn usage_errors_exit_one_and_help_exits_zero() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(code(&deepclean(&["--help"], dir.path())), 0);
    assert_eq!(code(&deepclean(&["--version"], dir.path())), 0);
    assert_eq!(code(&deepclean(&[], dir.path())), 1);
    assert_eq!(code(&deepclean(&["frobnicate"], dir.path())), 1);
    assert_eq!(code(&deepclean(&["train", "--data", "d"], dir.path())), 1);
    assert_eq!(code(&deepclean(&["sweep", "--out", "o", "--format", "pdf"], dir.path())), 1);
    assert_eq!(code(&deepclean(&["fit-pca", "--data", "d", "--latent", "2,3", "--out", "m.dc"], dir.path())), 1);
}

#[test]
fn missing_or_malformed_inputs_exit_two() {
    let dir = tempfile::tempdir().unwrap();
    let out = deepclean(&["preprocess", "--in", "absent.csv", "--out", "data"], dir.path());
    assert_eq!(code(&out), 2);
    assert!(String::from_utf8_lossy(&out.stderr).contains("absent.csv"));
    std::fs::write(dir.path().join("bad.csv"), "t,v\n0,1\nzero,2\n").unwrap();
    assert_eq!(code(&deepclean(&["preprocess", "--in", "bad.csv", "--out", "data"], dir.path())), 2);
    std::fs::write(dir.path().join("x.conf"), "no_such_key = 1\n").unwrap();
    assert_eq!(code(&deepclean(&["synth", "--config", "x.conf", "--out", "c"], dir.path())), 2);
}

#[test]
fn pipeline_runs_end_to_end_and_records_manifests() {
    let dir = tempfile::tempdir().unwrap();
    let cwd = dir.path();
    std::fs::write(cwd.join("small.conf"), "preprocess.test_count = 40\n").unwrap();

    let out = deepclean(&["synth", "--seed", "3", "--duration", "1800", "--out", "corpus"], cwd);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let m = manifest(&cwd.join("corpus/run_manifest.json"));
    assert_eq!(m.command, "synth");
    assert_eq!(m.seeds, vec![3]);
    check_outputs(&m, cwd);

    let out = deepclean(
        &[
            "preprocess", "--config", "small.conf", "--in", "corpus/record.csv", "--truth",
            "corpus/truth_mask.txt", "--out", "data",
        ],
        cwd,
    );
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    check_outputs(&manifest(&cwd.join("data/run_manifest.json")), cwd);

    let out = deepclean(&["fit-pca", "--data", "data", "--latent", "3,6", "--out", "models"], cwd);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let pca = PcaModel::load(&cwd.join("models/pca_ld3.dc")).unwrap();
    assert!(pca.thresholds.is_some() && pca.standardizer.is_some());

    let out = deepclean(
        &["detect", "--model", "models/pca_ld6.dc", "--in", "corpus/record.csv", "--out", "det"],
        cwd,
    );
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let m = manifest(&cwd.join("det/run_manifest.json"));
    check_outputs(&m, cwd);
    assert!(m.stage_seconds.contains_key("detect"));
    let csv = std::fs::read_to_string(cwd.join("det/detections.csv")).unwrap();
    assert_eq!(csv.lines().next(), Some("window_start,sample_mse,is_artefact"));

    let out = deepclean(
        &[
            "evaluate", "--data", "data", "--model", "models/pca_ld3.dc", "--model", "models/pca_ld6.dc",
            "--format", "json,csv,svg", "--out", "eval",
        ],
        cwd,
    );
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let stdout = String::from_utf8_lossy(&out.stdout);
    assert!(stdout.contains("Mean"));
    let report = deepclean::eval::Report::from_json(&std::fs::read_to_string(cwd.join("eval/report.json")).unwrap()).unwrap();
    assert_eq!(report.latent_dims(), vec![3, 6]);
    for svg in ["roc.svg", "log_mse.svg", "reconstructions.svg"] {
        assert!(std::fs::read_to_string(cwd.join("eval/plots").join(svg)).unwrap().contains("<svg"));
    }
    check_outputs(&manifest(&cwd.join("eval/run_manifest.json")), cwd);
}

#[test]
fn non_finite_model_exits_three() {
    let dir = tempfile::tempdir().unwrap();
    let cwd = dir.path();
    std::fs::write(cwd.join("small.conf"), "preprocess.test_count = 20\n").unwrap();
    assert_eq!(code(&deepclean(&["synth", "--seed", "2", "--duration", "900", "--out", "c"], cwd)), 0);
    let pre = ["preprocess", "--config", "small.conf", "--in", "c/record.csv", "--truth", "c/truth_mask.txt", "--out", "d"];
    assert_eq!(code(&deepclean(&pre, cwd)), 0);
    assert_eq!(code(&deepclean(&["fit-pca", "--data", "d", "--latent", "2", "--out", "p.dc"], cwd)), 0);
    let mut model = PcaModel::load(&cwd.join("p.dc")).unwrap();
    model.mean_vector[7] = f64::NAN;
    model.save(&cwd.join("p.dc")).unwrap();
    let out = deepclean(&["evaluate", "--data", "d", "--model", "p.dc", "--out", "e"], cwd);
    assert_eq!(code(&out), 3, "{}", String::from_utf8_lossy(&out.stderr));
}
