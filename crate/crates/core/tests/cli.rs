use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use mna::config::RunConfig;

fn mna(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_mna"))
        .args(args)
        .env("RUST_LOG", "warn")
        .output()
        .unwrap()
}

fn summary_value(dir: &Path, key: &str) -> f64 {
    let text = fs::read_to_string(dir.join("summary.txt")).unwrap();
    text.lines()
        .find_map(|l| l.strip_prefix(&format!("{key} = ")))
        .unwrap_or_else(|| panic!("{key} missing"))
        .parse()
        .unwrap()
}

/// A preset shortened to `iter_max` iterations, written to `dir`.
fn short_config(dir: &Path, preset: &str, iter_max: usize) -> String {
    let mut cfg = RunConfig::preset(preset).unwrap();
    cfg.optimizer.iter_max = iter_max;
    let path = dir.join(format!("{preset}.toml"));
    fs::write(&path, cfg.to_toml().unwrap()).unwrap();
    path.to_str().unwrap().to_owned()
}

#[test]
fn run_writes_all_outputs() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = short_config(tmp.path(), "cantilever", 120);
    let out = tmp.path().join("out");
    let res = mna(&[
        "run",
        "--config",
        &cfg,
        "--out",
        out.to_str().unwrap(),
        "--seed",
        "5",
    ]);
    assert!(
        res.status.success(),
        "{}",
        String::from_utf8_lossy(&res.stderr)
    );
    for f in [
        "manifest.toml",
        "history.csv",
        "layout.txt",
        "layout_initial.txt",
        "density.csv",
        "summary.txt",
        "timing.log",
    ] {
        assert!(out.join(f).is_file(), "{f}");
    }
    assert!(out.join("snapshots/layout_000100.txt").is_file());
    let history = fs::read_to_string(out.join("history.csv")).unwrap();
    assert!(history.starts_with("iteration,compliance"));
    assert_eq!(history.lines().count(), 121);
    assert!(summary_value(&out, "compliance") < summary_value(&out, "compliance_initial"));
    let manifest = RunConfig::load(&out.join("manifest.toml")).unwrap();
    assert_eq!(manifest.seed, 5);
}

#[test]
fn lshape_recognition_exports_fewer_beams() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("l");
    let res = mna(&["run", "--config", "lshape", "--out", out.to_str().unwrap()]);
    assert!(
        res.status.success(),
        "{}",
        String::from_utf8_lossy(&res.stderr)
    );
    let beams = fs::read_to_string(out.join("beams.txt")).unwrap();
    let members = beams.lines().filter(|l| !l.starts_with('#')).count();
    assert!(members > 0 && members < 40, "{members}");
    let json: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(out.join("beams.json")).unwrap()).unwrap();
    assert_eq!(json["members"].as_array().unwrap().len(), members);

    // recognition alone on the converged layout
    let rec = tmp.path().join("r");
    let res = mna(&[
        "recognize",
        "--config",
        "lshape",
        "--layout",
        out.join("layout_converged.txt").to_str().unwrap(),
        "--out",
        rec.to_str().unwrap(),
    ]);
    assert!(
        res.status.success(),
        "{}",
        String::from_utf8_lossy(&res.stderr)
    );
    assert!(summary_value(&rec, "nodes") < 40.0);
}

#[test]
fn malformed_config_leaves_nothing_behind() {
    let tmp = tempfile::tempdir().unwrap();
    let bad = tmp.path().join("bad.toml");
    let mut cfg = RunConfig::preset("cantilever").unwrap();
    cfg.case.elems_per_unit = 0;
    cfg.case.v_frac = 2.0;
    fs::write(&bad, cfg.to_toml().unwrap()).unwrap();
    let out = tmp.path().join("out");
    let res = mna(&[
        "run",
        "--config",
        bad.to_str().unwrap(),
        "--out",
        out.to_str().unwrap(),
    ]);
    assert!(!res.status.success());
    let err = String::from_utf8_lossy(&res.stderr);
    assert!(
        err.contains("elems_per_unit") && err.contains("v_frac"),
        "{err}"
    );
    let entries: Vec<_> = fs::read_dir(tmp.path())
        .unwrap()
        .map(|e| e.unwrap().file_name())
        .collect();
    assert_eq!(entries, vec![std::ffi::OsString::from("bad.toml")]);
}

#[test]
fn missing_config_file_fails() {
    let res = mna(&["run", "--config", "/nonexistent/run.toml"]);
    assert!(!res.status.success());
}

#[test]
fn compare_tabulates_each_config() {
    let tmp = tempfile::tempdir().unwrap();
    let mna_cfg = short_config(tmp.path(), "cantilever", 150);
    let simp_cfg = short_config(tmp.path(), "simp_cantilever", 150);
    let out = tmp.path().join("cmp");
    let res = mna(&[
        "compare",
        "--config",
        &mna_cfg,
        "--config",
        &simp_cfg,
        "--out",
        out.to_str().unwrap(),
    ]);
    assert!(
        res.status.success(),
        "{}",
        String::from_utf8_lossy(&res.stderr)
    );
    let table = fs::read_to_string(out.join("comparison.csv")).unwrap();
    let rows: Vec<Vec<&str>> = table
        .lines()
        .skip(1)
        .map(|l| l.split(',').collect())
        .collect();
    assert_eq!(rows.len(), 2);
    assert_eq!((rows[0][1], rows[1][1]), ("mna", "simp"));
    let c: Vec<f64> = rows.iter().map(|r| r[3].parse().unwrap()).collect();
    assert!(c[1] < c[0]);
}

#[test]
fn compare_rejects_different_meshes() {
    let tmp = tempfile::tempdir().unwrap();
    let a = short_config(tmp.path(), "cantilever", 5);
    let mut other = RunConfig::preset("cantilever").unwrap();
    other.case.elems_per_unit = 6;
    let b = tmp.path().join("b.toml");
    fs::write(&b, other.to_toml().unwrap()).unwrap();
    let res = mna(&["compare", "--config", &a, "--config", b.to_str().unwrap()]);
    assert!(!res.status.success());
}

#[test]
fn thread_count_does_not_change_results() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = short_config(tmp.path(), "lshape", 200);
    let (a, b) = (tmp.path().join("a"), tmp.path().join("b"));
    assert!(mna(&[
        "--threads",
        "1",
        "run",
        "--config",
        &cfg,
        "--out",
        a.to_str().unwrap()
    ])
    .status
    .success());
    assert!(mna(&[
        "--threads",
        "3",
        "run",
        "--config",
        &cfg,
        "--out",
        b.to_str().unwrap()
    ])
    .status
    .success());
    for f in ["history.csv", "layout.txt", "beams.txt", "density.csv"] {
        assert_eq!(
            fs::read(a.join(f)).unwrap(),
            fs::read(b.join(f)).unwrap(),
            "{f}"
        );
    }
}
