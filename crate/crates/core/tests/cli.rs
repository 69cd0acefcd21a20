use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;

fn config(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR"))
        .join("examples/configs")
        .join(name)
}

fn geoctrl(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_geoctrl"))
        .args(args)
        .output()
        .unwrap()
}

fn run(cfg: &Path, out: &Path) -> Output {
    geoctrl(&["run", cfg.to_str().unwrap(), "--out", out.to_str().unwrap()])
}

/// Asserts the process failed with `code` and a JSON error object on stderr.
fn expect_error(out: &Output, code: i32) -> Value {
    let stderr = String::from_utf8_lossy(&out.stderr);
    assert_eq!(out.status.code(), Some(code), "{stderr}");
    assert!(
        !stderr.contains("panicked") && !stderr.contains("backtrace"),
        "{stderr}"
    );
    let report: Value = serde_json::from_str(stderr.trim()).expect("stderr is one JSON object");
    assert_eq!(report["error"]["exit_code"], code);
    report
}

fn write(dir: &Path, name: &str, text: &str) -> PathBuf {
    let path = dir.join(name);
    fs::write(&path, text).unwrap();
    path
}

#[test]
fn identical_runs_write_identical_data() {
    let tmp = tempfile::tempdir().unwrap();
    for name in ["flat_rest.toml", "three_link_decoupling.toml"] {
        let (a, b) = (
            tmp.path().join(format!("{name}-a")),
            tmp.path().join(format!("{name}-b")),
        );
        assert!(run(&config(name), &a).status.success());
        assert!(run(&config(name), &b).status.success());
        let manifest: Value =
            serde_json::from_str(&fs::read_to_string(a.join("manifest.json")).unwrap()).unwrap();
        for artifact in manifest["artifacts"].as_array().unwrap() {
            let file = artifact.as_str().unwrap();
            assert_eq!(
                fs::read(a.join(file)).unwrap(),
                fs::read(b.join(file)).unwrap(),
                "{file}"
            );
        }
    }
}

#[test]
fn flat_zero_input_is_stationary() {
    let tmp = tempfile::tempdir().unwrap();
    let out = run(&config("flat_rest.toml"), tmp.path());
    assert!(out.status.success());
    let csv = fs::read_to_string(tmp.path().join("trajectory.csv")).unwrap();
    let mut lines = csv.lines();
    assert_eq!(lines.next(), Some("t,q1,q2,qd1,qd2,u1"));
    for line in lines {
        let cols: Vec<f64> = line.split(',').map(|c| c.parse().unwrap()).collect();
        assert_eq!(&cols[1..], &[0.5, -1.0, 0.0, 0.0, 0.0]);
    }
}

#[test]
fn manifest_echoes_config_and_versions() {
    let tmp = tempfile::tempdir().unwrap();
    let out = run(&config("three_link_decoupling.toml"), tmp.path());
    assert!(out.status.success());
    let manifest: Value =
        serde_json::from_str(&fs::read_to_string(tmp.path().join("manifest.json")).unwrap())
            .unwrap();
    assert_eq!(manifest["version"], env!("CARGO_PKG_VERSION"));
    assert_eq!(manifest["config"]["model"]["name"], "three-link");
    assert_eq!(manifest["config"]["decoupling"]["plan"]["profile"], "cubic");
    assert!(manifest["wall_time_s"].as_f64().unwrap() >= 0.0);
    let report: Value =
        serde_json::from_str(&fs::read_to_string(tmp.path().join("decoupling.json")).unwrap())
            .unwrap();
    assert_eq!(report["verdict"], true);
    assert_eq!(report["fields"].as_array().unwrap().len(), 2);
}

#[test]
fn convergence_config_reports_first_order_rate() {
    let tmp = tempfile::tempdir().unwrap();
    let out = Command::new(env!("CARGO_BIN_EXE_geoctrl"))
        .args([
            "run",
            config("pvtol_convergence.toml").to_str().unwrap(),
            "--out",
            tmp.path().to_str().unwrap(),
        ])
        .env("GEOCTRL_THREADS", "2")
        .output()
        .unwrap();
    assert!(
        out.status.success(),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    let manifest: Value =
        serde_json::from_str(&fs::read_to_string(tmp.path().join("manifest.json")).unwrap())
            .unwrap();
    assert_eq!(manifest["threads"], 2);
    let slope = manifest["summary"]["slope"].as_f64().unwrap();
    assert!((0.7..=1.3).contains(&slope), "slope {slope}");
    let csv = fs::read_to_string(tmp.path().join("convergence.csv")).unwrap();
    let eps: Vec<f64> = csv
        .lines()
        .skip(1)
        .map(|l| l.split(',').next().unwrap().parse().unwrap())
        .collect();
    assert_eq!(eps, vec![0.1, 0.05, 0.025, 0.0125]);
}

#[test]
fn config_errors_exit_with_two() {
    let tmp = tempfile::tempdir().unwrap();
    let missing = tmp.path().join("missing.toml");
    expect_error(&geoctrl(&["run", missing.to_str().unwrap()]), 2);

    let broken = write(
        tmp.path(),
        "broken.toml",
        "experiment = \"simulate\"\n[model\n",
    );
    expect_error(&geoctrl(&["run", broken.to_str().unwrap()]), 2);
    expect_error(&geoctrl(&["validate", broken.to_str().unwrap()]), 2);

    let unknown = write(
        tmp.path(),
        "unknown.toml",
        "experiment = \"simulate\"\n[model]\nname = \"snakeboard\"\n[integrator]\ndt = 0.1\n[simulate]\nhorizon = 1.0\n",
    );
    let report = expect_error(&geoctrl(&["validate", unknown.to_str().unwrap()]), 2);
    assert_eq!(report["error"]["kind"], "unknown-model");

    let bad_gain = write(
        tmp.path(),
        "gain.toml",
        "experiment = \"simulate\"\n[model]\nname = \"flat\"\n[integrator]\ndt = 0.1\n[simulate]\nhorizon = 1.0\ninputs = [\"exp(2)\"]\n",
    );
    expect_error(
        &geoctrl(&[
            "run",
            bad_gain.to_str().unwrap(),
            "--out",
            tmp.path().to_str().unwrap(),
        ]),
        2,
    );

    let out = Command::new(env!("CARGO_BIN_EXE_geoctrl"))
        .args([
            "run",
            config("flat_rest.toml").to_str().unwrap(),
            "--out",
            tmp.path().to_str().unwrap(),
        ])
        .env("GEOCTRL_THREADS", "zero")
        .output()
        .unwrap();
    expect_error(&out, 2);

    expect_error(&geoctrl(&["frobnicate"]), 2);
}

#[test]
fn numerical_failures_exit_with_three() {
    let tmp = tempfile::tempdir().unwrap();
    let diverging = write(
        tmp.path(),
        "diverge.toml",
        "experiment = \"simulate\"\n[model]\nname = \"flat\"\n[integrator]\ndt = 0.5\n\
         [simulate]\nhorizon = 20.0\ninputs = [\"const(1e307)\"]\n",
    );
    let report = expect_error(&run(&diverging, &tmp.path().join("out")), 3);
    assert_eq!(report["error"]["kind"], "non-finite-state");
}

#[test]
fn validate_and_list_models_succeed() {
    let out = geoctrl(&["validate", config("pvtol_track.toml").to_str().unwrap()]);
    assert!(out.status.success());
    let report: Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(report["valid"], true);
    assert_eq!(report["inputs"], 2);

    let out = geoctrl(&["list-models"]);
    assert!(out.status.success());
    let listing = String::from_utf8(out.stdout).unwrap();
    for name in ["flat", "pvtol", "planar-body", "blimp", "three-link"] {
        assert!(listing.lines().any(|l| l.starts_with(name)), "{name}");
    }
}

#[test]
fn every_sample_config_validates() {
    for entry in
        fs::read_dir(Path::new(env!("CARGO_MANIFEST_DIR")).join("examples/configs")).unwrap()
    {
        let path = entry.unwrap().path();
        let out = geoctrl(&["validate", path.to_str().unwrap()]);
        assert!(
            out.status.success(),
            "{}: {}",
            path.display(),
            String::from_utf8_lossy(&out.stderr)
        );
    }
}
