use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use spikeconv::{load_dataset, save_dataset};

fn fixture(part: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR"))
        .join("../core/tests/fixtures/digits")
        .join(part)
}

fn spikeconv(out: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_spikeconv"))
        .arg("--out")
        .arg(out)
        .args(args)
        .env_remove("SPIKECONV_OUT")
        .output()
        .unwrap()
}

fn stderr(output: &Output) -> String {
    String::from_utf8_lossy(&output.stderr).into_owned()
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

/// A small test subset so the debug binary stays quick.
fn subset(dir: &Path, n: usize) -> PathBuf {
    let path = dir.join("subset");
    save_dataset(&load_dataset(fixture("test")).unwrap().take(n), &path).unwrap();
    path
}

fn calibrated(dir: &Path) -> PathBuf {
    let out = spikeconv(
        dir,
        &[
            "calibrate",
            "--model",
            p(&fixture("model")),
            "--calib",
            p(&fixture("calib")),
        ],
    );
    assert!(out.status.success(), "{}", stderr(&out));
    dir.join("calibration.json")
}

#[test]
fn full_pipeline_writes_every_artifact() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    let data = subset(dir, 16);
    let stats = calibrated(dir);
    let model = fixture("model");

    let convert = spikeconv(
        dir,
        &[
            "convert",
            "--model",
            p(&model),
            "--stats",
            p(&stats),
            "--mode",
            "ecc",
            "--eta",
            "0.5",
            "--kappa",
            "100",
            "--epsilon",
            "0.001",
            "--timesteps",
            "256",
        ],
    );
    assert!(convert.status.success(), "{}", stderr(&convert));
    assert!(dir.join("snn/manifest.json").is_file());

    let snn = dir.join("snn");
    let run = spikeconv(
        dir,
        &[
            "run",
            "--snn",
            p(&snn),
            "--data",
            p(&data),
            "--timesteps",
            "32",
            "--cnn",
            p(&model),
        ],
    );
    assert!(run.status.success(), "{}", stderr(&run));
    let summary: serde_json::Value = serde_json::from_str(&fs::read_to_string(dir.join("run.json")).unwrap()).unwrap();
    assert_eq!(summary["images"], 16);
    assert_eq!(summary["timesteps"], 32);
    let accuracy = summary["accuracy"].as_f64().unwrap();
    assert!((0.0..=1.0).contains(&accuracy));
    let predictions = fs::read_to_string(dir.join("predictions.csv")).unwrap();
    assert_eq!(predictions.lines().count(), 17);
    assert_eq!(fs::read_to_string(dir.join("steps.csv")).unwrap().lines().count(), 33);
    let layers = fs::read_to_string(dir.join("layers.csv")).unwrap();
    assert!(layers.starts_with("layer,name,neurons,"));

    let sweep = spikeconv(
        dir,
        &[
            "sweep",
            "--model",
            p(&model),
            "--stats",
            p(&stats),
            "--data",
            p(&data),
            "--timesteps-list",
            "8,16,32,64,128",
            "--bits-list",
            "7,10",
            "--timesteps",
            "32",
        ],
    );
    assert!(sweep.status.success(), "{}", stderr(&sweep));
    let table = fs::read_to_string(dir.join("sweep_timesteps.csv")).unwrap();
    let mut lines = table.lines();
    assert_eq!(lines.next(), Some("T,cnn_acc,snn_acc,loss_pp,synops,macs"));
    let ts: Vec<&str> = lines.map(|l| l.split(',').next().unwrap()).collect();
    assert_eq!(ts, ["8", "16", "32", "64", "128"]);
    assert_eq!(
        fs::read_to_string(dir.join("sweep_bits.csv")).unwrap().lines().count(),
        3
    );

    let report = spikeconv(dir, &["report"]);
    assert!(report.status.success(), "{}", stderr(&report));
    let report: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(dir.join("report.json")).unwrap()).unwrap();
    for key in ["calibration", "snn", "run", "sweep"] {
        assert!(!report[key].is_null(), "{key}");
    }
    assert_eq!(report["snn"]["mode"], "ecc");
    assert_eq!(report["run"]["accuracy"].as_f64(), Some(accuracy));
}

#[test]
fn runs_are_deterministic() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    let data = subset(dir, 8);
    let convert = spikeconv(
        dir,
        &[
            "convert",
            "--model",
            p(&fixture("model")),
            "--calib",
            p(&fixture("calib")),
        ],
    );
    assert!(convert.status.success(), "{}", stderr(&convert));
    let snn = dir.join("snn");
    let (a, b) = (dir.join("a"), dir.join("b"));
    for (out, jobs) in [(&a, "1"), (&b, "3")] {
        let run = spikeconv(
            out,
            &[
                "--jobs",
                jobs,
                "run",
                "--snn",
                p(&snn),
                "--data",
                p(&data),
                "--timesteps",
                "24",
            ],
        );
        assert!(run.status.success(), "{}", stderr(&run));
    }
    for file in ["run.json", "layers.csv", "steps.csv", "predictions.csv"] {
        assert_eq!(
            fs::read(a.join(file)).unwrap(),
            fs::read(b.join(file)).unwrap(),
            "{file}"
        );
    }
}

#[test]
fn output_directory_comes_from_the_environment() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("from-env");
    let run = Command::new(env!("CARGO_BIN_EXE_spikeconv"))
        .args([
            "calibrate",
            "--model",
            p(&fixture("model")),
            "--calib",
            p(&fixture("calib")),
        ])
        .env("SPIKECONV_OUT", &out)
        .output()
        .unwrap();
    assert!(run.status.success(), "{}", stderr(&run));
    assert!(out.join("calibration.json").is_file());
}

#[test]
fn missing_model_names_the_path() {
    let tmp = tempfile::tempdir().unwrap();
    let out = spikeconv(
        tmp.path(),
        &["run", "--snn", "/no/such/snn", "--data", p(&fixture("test"))],
    );
    assert_eq!(out.status.code(), Some(2));
    let err = stderr(&out);
    assert!(err.contains("/no/such/snn"), "{err}");
    assert_eq!(err.trim_end().lines().count(), 1);
}

#[test]
fn eta_is_rejected_outside_ecc() {
    let tmp = tempfile::tempdir().unwrap();
    for mode in ["wn", "tb"] {
        let out = spikeconv(
            tmp.path(),
            &[
                "convert",
                "--model",
                p(&fixture("model")),
                "--calib",
                p(&fixture("calib")),
                "--mode",
                mode,
                "--eta",
                "0.5",
            ],
        );
        assert_eq!(out.status.code(), Some(2));
        assert!(stderr(&out).contains("--eta"));
    }
    let ok = spikeconv(
        tmp.path(),
        &[
            "convert",
            "--model",
            p(&fixture("model")),
            "--calib",
            p(&fixture("calib")),
            "--mode",
            "tb",
        ],
    );
    assert!(ok.status.success(), "{}", stderr(&ok));
}

#[test]
fn stats_from_another_epsilon_are_rejected() {
    let tmp = tempfile::tempdir().unwrap();
    let stats = calibrated(tmp.path());
    let out = spikeconv(
        tmp.path(),
        &[
            "convert",
            "--model",
            p(&fixture("model")),
            "--stats",
            p(&stats),
            "--epsilon",
            "0",
        ],
    );
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn usage_errors_exit_with_one() {
    let tmp = tempfile::tempdir().unwrap();
    for args in [
        vec!["bogus"],
        vec!["convert", "--model", "m"],
        vec!["run", "--snn", "a", "--data", "b", "--timesteps", "x"],
    ] {
        let out = spikeconv(tmp.path(), &args);
        assert_eq!(out.status.code(), Some(1), "{args:?}");
        assert_eq!(stderr(&out).trim_end().lines().count(), 1, "{args:?}");
    }
    for flag in ["--help", "--version"] {
        assert!(spikeconv(tmp.path(), &[flag]).status.success());
    }
}

#[test]
fn broken_model_invariant_exits_with_three() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    let convert = spikeconv(
        dir,
        &[
            "convert",
            "--model",
            p(&fixture("model")),
            "--calib",
            p(&fixture("calib")),
        ],
    );
    assert!(convert.status.success(), "{}", stderr(&convert));
    let manifest = dir.join("snn/manifest.json");
    let mut value: serde_json::Value = serde_json::from_str(&fs::read_to_string(&manifest).unwrap()).unwrap();
    value["layers"][0]["threshold"] = serde_json::json!(-1.0);
    fs::write(&manifest, value.to_string()).unwrap();
    let out = spikeconv(
        dir,
        &["run", "--snn", p(&dir.join("snn")), "--data", p(&fixture("test"))],
    );
    assert_eq!(out.status.code(), Some(3), "{}", stderr(&out));
    assert!(stderr(&out).contains("invariant"));
}

#[test]
fn report_needs_results() {
    let tmp = tempfile::tempdir().unwrap();
    let out = spikeconv(tmp.path(), &["report"]);
    assert_eq!(out.status.code(), Some(2));
}
