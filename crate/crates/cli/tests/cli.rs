use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_gfspec"))
}

fn config(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs").join(name)
}

fn run(args: &[&str], cfg: &Path, out: Option<&Path>) -> Output {
    let mut c = bin();
    c.args(args).arg("--config").arg(cfg);
    if let Some(o) = out {
        c.arg("--out").arg(o);
    }
    c.output().expect("binary runs")
}

fn json(bytes: &[u8]) -> Value {
    serde_json::from_slice(bytes).expect("valid JSON")
}

const SMALL: &str = r#"
[model]
kernel = "uniform"
rate_exponent = 1.0

[numerics]
grid = "uniform"
cells = 256
x_min = 1e-3
x_max = 16.0

[run]
seed = 5
n_paths = 2000
x0 = 2.0
t_end = 1.0
checkpoints = [0.5, 1.0]
functions = ["one", "indicator:0.5:2"]
"#;

fn write(dir: &Path, name: &str, text: &str) -> PathBuf {
    let p = dir.join(name);
    std::fs::write(&p, text).unwrap();
    p
}

#[test]
fn canonical_check_passes_with_kernel_threshold() {
    let o = run(&["check"], &config("canonical.toml"), None);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let v = json(&o.stdout);
    let thr = v["report"]["extras"]["kernel_threshold"].as_f64().unwrap();
    assert!((thr - 5.828427).abs() < 1e-6);
    assert_eq!(v["config_hash"].as_str().unwrap().len(), 64);
}

#[test]
fn critical_check_fails_with_exit_1() {
    let o = run(&["check"], &config("critical.toml"), None);
    assert_eq!(o.status.code(), Some(1));
    let v = json(&o.stdout);
    assert_eq!(v["report"]["pass"], Value::Bool(false));
}

#[test]
fn unknown_key_exits_2_and_names_it() {
    let d = tempfile::tempdir().unwrap();
    let p = write(d.path(), "bad.toml", &SMALL.replace("cells = 256", "cells = 256\ncell_count = 3"));
    let o = run(&["check"], &p, None);
    assert_eq!(o.status.code(), Some(2));
    let e = json(&o.stderr);
    assert_eq!(e["error"], "ConfigError");
    assert!(e["message"].as_str().unwrap().contains("cell_count"));
}

#[test]
fn zero_paths_exits_2() {
    let d = tempfile::tempdir().unwrap();
    let p = write(d.path(), "bad.toml", &SMALL.replace("n_paths = 2000", "n_paths = 0"));
    let o = run(&["simulate"], &p, None);
    assert_eq!(o.status.code(), Some(2));
    assert!(json(&o.stderr)["message"].as_str().unwrap().contains("n_paths"));
}

#[test]
fn spectral_reports_negative_lambda0() {
    let d = tempfile::tempdir().unwrap();
    let p = write(d.path(), "small.toml", SMALL);
    let o = run(&["spectral"], &p, Some(d.path()));
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let v = json(&o.stdout);
    assert!(v["lambda0"].as_f64().unwrap() < 0.0);
    assert!(d.path().join("triple.csv").exists());
    assert_eq!(json(&std::fs::read(d.path().join("spectral.json")).unwrap()), v);
}

#[test]
fn reruns_are_byte_identical() {
    let d = tempfile::tempdir().unwrap();
    let p = write(d.path(), "small.toml", SMALL);
    let (a, b) = (d.path().join("a"), d.path().join("b"));
    for dir in [&a, &b] {
        let o = run(&["simulate"], &p, Some(dir));
        assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    }
    for f in ["simulate.json", "path.csv"] {
        assert_eq!(std::fs::read(a.join(f)).unwrap(), std::fs::read(b.join(f)).unwrap(), "{f}");
    }
    let mut c = bin();
    c.args(["simulate", "--seed", "6", "--config"]).arg(&p);
    let other = json(&c.output().unwrap().stdout);
    assert_eq!(other["seed"], 6);
    assert_ne!(other["results"], json(&std::fs::read(a.join("simulate.json")).unwrap())["results"]);
}

#[test]
fn converge_refuses_foreign_spectral_output() {
    let d = tempfile::tempdir().unwrap();
    let p = write(d.path(), "small.toml", SMALL);
    assert_eq!(run(&["spectral"], &p, Some(d.path())).status.code(), Some(0));
    let q = write(d.path(), "other.toml", &SMALL.replace("seed = 5", "seed = 9"));
    let o = run(&["converge"], &q, Some(d.path()));
    assert_eq!(o.status.code(), Some(1));
    assert!(json(&o.stderr)["message"].as_str().unwrap().contains("different configuration"));

    let o = run(&["converge"], &p, Some(d.path()));
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let v = json(&o.stdout);
    assert_eq!(v["triple_source"], "spectral.json");
    assert_eq!(v["rate_positive"], false);
    assert!(v["gamma"].as_f64().unwrap() > 0.0);
}

#[test]
fn critical_converge_reports_positive_rate() {
    let o = run(&["converge"], &config("critical.toml"), None);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    assert_eq!(json(&o.stdout)["rate_positive"], true);
}

#[test]
fn pde_and_qsd_write_outputs() {
    let d = tempfile::tempdir().unwrap();
    let p = write(d.path(), "small.toml", &SMALL.replace("n_paths = 2000", "n_paths = 2000\nparticles = 500"));
    let o = run(&["pde"], &p, Some(d.path()));
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    assert_eq!(json(&o.stdout)["results"].as_array().unwrap().len(), 4);
    let o = run(&["qsd"], &p, Some(d.path()));
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let v = json(&o.stdout);
    assert!(v["lambda0X"].as_f64().unwrap() > 0.0);
    assert!(d.path().join("ensemble.csv").exists() && d.path().join("pde.csv").exists());
}
