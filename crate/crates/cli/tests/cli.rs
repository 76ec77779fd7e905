use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn qcurve(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_qcurve")).args(args).output().expect("spawn qcurve")
}

fn config(name: &str) -> String {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("configs").join(name).display().to_string()
}

fn write_config(dir: &Path, name: &str, json: &str) -> String {
    let p = dir.join(name);
    fs::write(&p, json).unwrap();
    p.display().to_string()
}

fn only_run_dir(out: &Path) -> PathBuf {
    let dirs: Vec<_> = fs::read_dir(out).unwrap().map(|e| e.unwrap().path()).collect();
    assert_eq!(dirs.len(), 1, "{dirs:?}");
    dirs[0].clone()
}

#[test]
fn passing_run_exits_zero_and_writes_manifest() {
    let out = tempfile::tempdir().unwrap();
    let o = out.path().display().to_string();
    let res = qcurve(&["analyze", "--config", &config("identity.json"), "--out", &o]);
    assert_eq!(res.status.code(), Some(0), "{}", String::from_utf8_lossy(&res.stderr));
    let run = only_run_dir(out.path()).join("analyze");
    for f in [
        "config.json",
        "run-manifest.json",
        "analytic-definition.check.json",
        "upper-gradient.check.json",
        "distortion.csv",
    ] {
        assert!(run.join(f).is_file(), "missing {f}");
    }
    let manifest: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(run.join("run-manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["command"], "analyze");
    assert_eq!(manifest["exit_code"], 0);
    assert_eq!(manifest["checks"].as_array().unwrap().len(), 2);
    assert!(run
        .parent()
        .unwrap()
        .file_name()
        .unwrap()
        .to_str()
        .unwrap()
        .contains(&manifest["config_hash"].as_str().unwrap()[..16]));
}

#[test]
fn existing_run_directory_needs_force() {
    let out = tempfile::tempdir().unwrap();
    let o = out.path().display().to_string();
    let args = ["intrinsic", "--config", &config("identity.json"), "--out", &o];
    assert_eq!(qcurve(&args).status.code(), Some(0));
    let again = qcurve(&args);
    assert_eq!(again.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&again.stderr).contains("--force"));
    let mut forced = args.to_vec();
    forced.push("--force");
    assert_eq!(qcurve(&forced).status.code(), Some(0));
}

#[test]
fn form_degree_above_target_dimension_is_a_config_error() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(
        dir.path(),
        "bad.json",
        r#"{
          "map": { "kind": "identity", "n": 2, "domain": { "lo": [0, 0], "hi": [1, 1] } },
          "form": { "n": 3, "m": 2, "coeffs": [{ "I": [1, 2, 3], "c": 1.0 }] },
          "grid": { "box": { "lo": [0, 0], "hi": [1, 1] }, "resolution": [8, 8] }
        }"#,
    );
    let res = qcurve(&["analyze", "--config", &cfg, "--out", &dir.path().join("runs").display().to_string()]);
    assert_eq!(res.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&res.stderr).contains("form"), "{}", String::from_utf8_lossy(&res.stderr));
    assert!(!dir.path().join("runs").exists());
}

#[test]
fn config_errors_name_the_field() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(
        dir.path(),
        "bad.json",
        r#"{
          "map": { "kind": "identity", "n": 2, "domain": { "lo": [0, 0], "hi": [1, 1] } },
          "form": { "n": 2, "m": 2, "coeffs": [{ "I": [1, 2], "c": 1.0 }] },
          "grid": { "box": { "lo": [0, 0], "hi": [1, 1] }, "resolution": [8, 8] },
          "surface": { "mesh-resolution": "fine" }
        }"#,
    );
    let res = qcurve(&["intrinsic", "--config", &cfg, "--out", &dir.path().display().to_string()]);
    assert_eq!(res.status.code(), Some(2));
    assert!(
        String::from_utf8_lossy(&res.stderr).contains("surface.mesh-resolution"),
        "{}",
        String::from_utf8_lossy(&res.stderr)
    );
}

#[test]
fn usage_errors_exit_two() {
    assert_eq!(qcurve(&["analyze"]).status.code(), Some(2));
    assert_eq!(qcurve(&["frobnicate", "--config", "x"]).status.code(), Some(2));
    assert_eq!(qcurve(&["analyze", "--config", "/nonexistent/config.json"]).status.code(), Some(2));
}

#[test]
fn modulus_command_requires_its_section() {
    let out = tempfile::tempdir().unwrap();
    let res = qcurve(&["modulus", "--config", &config("identity.json"), "--out", &out.path().display().to_string()]);
    assert_eq!(res.status.code(), Some(2));
}

#[test]
fn failing_check_exits_one() {
    let dir = tempfile::tempdir().unwrap();
    // The left-to-right modulus of [0,2]x[0,1] is 1/2, not 1.
    let cfg = write_config(
        dir.path(),
        "wrong.json",
        r#"{
          "map": { "kind": "identity", "n": 2, "domain": { "lo": [0, 0], "hi": [2, 1] } },
          "form": { "n": 2, "m": 2, "coeffs": [{ "I": [1, 2], "c": 1.0 }] },
          "grid": { "box": { "lo": [0, 0], "hi": [2, 1] }, "resolution": [32, 16] },
          "modulus": { "source": "left-edge", "target": "right-edge", "expected": 1.0 }
        }"#,
    );
    let out = dir.path().join("runs");
    let res = qcurve(&["modulus", "--config", &cfg, "--out", &out.display().to_string()]);
    assert_eq!(res.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&res.stdout).contains("FAIL"));
    let manifest = only_run_dir(&out).join("modulus").join("run-manifest.json");
    let manifest: serde_json::Value = serde_json::from_str(&fs::read_to_string(manifest).unwrap()).unwrap();
    assert_eq!(manifest["exit_code"], 1);
}

#[test]
fn overrides_change_the_run_directory() {
    let out = tempfile::tempdir().unwrap();
    let o = out.path().display().to_string();
    let cfg = config("identity.json");
    assert_eq!(qcurve(&["intrinsic", "--config", &cfg, "--out", &o]).status.code(), Some(0));
    assert_eq!(qcurve(&["intrinsic", "--config", &cfg, "--out", &o, "--resolution", "16"]).status.code(), Some(0));
    assert_eq!(qcurve(&["intrinsic", "--config", &cfg, "--out", &o, "--seed", "99"]).status.code(), Some(0));
    assert_eq!(fs::read_dir(out.path()).unwrap().count(), 3);
}

fn csv_files(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut files: Vec<_> = fs::read_dir(dir)
        .unwrap()
        .map(|e| e.unwrap().path())
        .filter(|p| p.extension().is_some_and(|e| e == "csv"))
        .map(|p| (p.file_name().unwrap().to_string_lossy().into_owned(), fs::read(&p).unwrap()))
        .collect();
    files.sort();
    files
}

#[test]
fn repeated_runs_write_identical_tables() {
    let dir = tempfile::tempdir().unwrap();
    // A small counterexample configuration that exercises the seeded path sampler.
    let cfg = write_config(
        dir.path(),
        "cx.json",
        r#"{
          "map": { "kind": "counterexample", "domain": { "lo": [-1, -1], "hi": [1, 1] } },
          "form": { "n": 2, "m": 3, "coeffs": [{ "I": [1, 2], "c": 1.0 }] },
          "grid": { "box": { "lo": [-1, -1], "hi": [1, 1] }, "resolution": [32, 32] },
          "surface": { "mesh-resolution": 16 },
          "analyze": { "paths": 20 },
          "seed": 11
        }"#,
    );
    let mut tables = Vec::new();
    for run in ["a", "b"] {
        let out = dir.path().join(run);
        let res = qcurve(&["analyze", "--config", &cfg, "--out", &out.display().to_string()]);
        assert_ne!(res.status.code(), Some(2), "{}", String::from_utf8_lossy(&res.stderr));
        tables.push(csv_files(&only_run_dir(&out).join("analyze")));
    }
    assert!(!tables[0].is_empty());
    assert_eq!(tables[0], tables[1]);
}
