//! End-to-end tests of the `rydsim` binary.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use rydsim::cli::config::{ExperimentConfig, ExperimentKind, ScanConfig};
use tempfile::TempDir;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_rydsim"))
}

fn config_path(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("configs").join(name)
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().expect("binary runs")
}

fn run_ok(args: &[&str]) -> String {
    let out = run(args);
    assert!(
        out.status.success(),
        "rydsim {args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

/// Value of `key = value` in a fit or report listing.
fn value(report: &str, key: &str) -> f64 {
    report
        .lines()
        .find_map(|l| l.strip_prefix(&format!("{key} = ")))
        .unwrap_or_else(|| panic!("no `{key}` in:\n{report}"))
        .parse()
        .unwrap()
}

fn write_config(dir: &Path, name: &str, cfg: &ExperimentConfig) -> PathBuf {
    let path = dir.join(name);
    fs::write(&path, cfg.to_toml_string().unwrap()).unwrap();
    path
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn raman_run_and_fit_recovers_rabi_frequency() {
    let dir = TempDir::new().unwrap();
    let csv = dir.path().join("raman.csv");
    run_ok(&["run", "--config", s(&config_path("raman_rabi.toml")), "--out", s(&csv)]);
    let text = fs::read_to_string(&csv).unwrap();
    assert!(text.starts_with("scan_value,p11,p10,p01,p00,n_shots,seed\n"));
    assert_eq!(text.lines().count(), 61);
    let report = run_ok(&["fit", "--config", s(&config_path("raman_rabi.toml")), "--input", s(&csv)]);
    let f = value(&report, "frequency_hz");
    assert!((f / 250e3 - 1.0).abs() < 5e-3, "{f}");
}

#[test]
fn noiseless_parity_pipeline_reports_unit_fidelity() {
    let dir = TempDir::new().unwrap();
    let mut cfg = ExperimentConfig::load(&config_path("entangle_parity.toml")).unwrap();
    cfg.physics.blockade_shift_hz = 700e6;
    cfg.output = Some(dir.path().join("parity.csv"));
    let path = write_config(dir.path(), "parity.toml", &cfg);
    run_ok(&["run", "--config", s(&path)]);
    let report = run_ok(&["fit", "--config", s(&path)]);
    let f = value(&report, "fidelity");
    assert!((f - 1.0).abs() <= 5e-3, "{report}");
    assert_eq!(value(&report, "fidelity_renormalized"), f);
}

#[test]
fn report_reproduces_loss_arithmetic() {
    let out = run_ok(&["report", "--config", s(&config_path("report.toml"))]);
    assert_eq!(value(&out, "pair_loss_prob"), 0.3916);
    assert_eq!(value(&out, "pair_survival"), 0.6084);
    assert_eq!(value(&out, "fidelity_renormalized"), 0.756);
    let out = run_ok(&["report", "--loss-prob", "0", "--fidelity", "0.5"]);
    assert_eq!(value(&out, "fidelity_renormalized"), 0.5);
}

#[test]
fn malformed_config_exits_with_input_status() {
    let dir = TempDir::new().unwrap();
    let path = dir.path().join("bad.toml");
    let text = fs::read_to_string(config_path("raman_rabi.toml")).unwrap().replace("raman_rabi_hz", "raman_rabbi_hz");
    fs::write(&path, text).unwrap();
    let out = run(&["run", "--config", s(&path)]);
    assert_eq!(out.status.code(), Some(2));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("raman_rabbi_hz") && err.contains("bad.toml"), "{err}");

    let out = run(&["run", "--config", s(&dir.path().join("missing.toml"))]);
    assert_eq!(out.status.code(), Some(2));

    let out = run(&["report", "--loss-prob", "1.5"]);
    assert_eq!(out.status.code(), Some(2));

    let out = run(&["frobnicate"]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn malformed_table_exits_with_input_status() {
    let dir = TempDir::new().unwrap();
    let csv = dir.path().join("bad.csv");
    fs::write(&csv, "scan_value,p11,p10,p01,p00,n_shots,seed\n0,0.9,0.9,0,0,1,1\n").unwrap();
    let out = run(&["fit", "--config", s(&config_path("raman_rabi.toml")), "--input", s(&csv)]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("line 2"));
}

#[test]
fn estimator_model_violation_exits_with_numerical_status() {
    // P11(θ) = (1 − cos2θ)/2 with all remaining weight on single survivors implies F = 2.
    let dir = TempDir::new().unwrap();
    let csv = dir.path().join("parity.csv");
    let mut text = String::from("scan_value,p11,p10,p01,p00,n_shots,seed\n");
    for k in 0..12 {
        let th = std::f64::consts::TAU * k as f64 / 12.0;
        let p11 = 0.5 - 0.5 * (2.0 * th).cos();
        text.push_str(&format!("{th},{p11},{},0,0,1,1\n", 1.0 - p11));
    }
    fs::write(&csv, text).unwrap();
    let out = run(&["fit", "--config", s(&config_path("entangle_parity.toml")), "--input", s(&csv)]);
    assert_eq!(out.status.code(), Some(3), "{}", String::from_utf8_lossy(&out.stderr));
}

#[test]
fn tables_are_byte_identical_across_runs_and_threads() {
    let dir = TempDir::new().unwrap();
    let mut cfg = ExperimentConfig::load(&config_path("calibrated.toml")).unwrap();
    cfg.experiment = ExperimentKind::RydbergPair;
    cfg.noise.intensity_sigma = 0.05;
    cfg.shots = 70;
    cfg.sample_counts = true;
    cfg.scan = Some(ScanConfig { start: 0.0, stop: 40e-9, points: 5, include_stop: true });
    let path = write_config(dir.path(), "jitter.toml", &cfg);
    let mut tables = Vec::new();
    for threads in ["1", "1", "3"] {
        let out = bin().env("RYDSIM_THREADS", threads).args(["run", "--config", s(&path)]).output().unwrap();
        assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
        tables.push(out.stdout);
    }
    assert_eq!(tables[0], tables[1]);
    assert_eq!(tables[0], tables[2]);
    let other_seed = run_ok(&["run", "--config", s(&path), "--seed", "99"]);
    assert_ne!(other_seed.as_bytes(), tables[0].as_slice());
}

#[test]
fn calibrated_noise_keeps_measured_frequency_ratio() {
    let dir = TempDir::new().unwrap();
    let base = ExperimentConfig::load(&config_path("calibrated.toml")).unwrap();
    let mut csvs = Vec::new();
    for kind in [ExperimentKind::RydbergSingle, ExperimentKind::RydbergPair] {
        let mut cfg = base.clone();
        cfg.experiment = kind;
        cfg.shots = 2000;
        cfg.scan = Some(ScanConfig { start: 0.0, stop: 500e-9, points: 101, include_stop: true });
        let csv = dir.path().join(format!("{}.csv", kind.name()));
        cfg.output = Some(csv.clone());
        let path = write_config(dir.path(), &format!("{}.toml", kind.name()), &cfg);
        run_ok(&["run", "--config", s(&path)]);
        csvs.push((path, csv));
    }
    let report = run_ok(&["fit", "--config", s(&csvs[1].0), "--reference", s(&csvs[0].1)]);
    let ratio = value(&report, "frequency_ratio");
    assert!((1.30..=1.45).contains(&ratio), "{report}");
}

#[test]
fn calibrate_writes_loadable_config() {
    let dir = TempDir::new().unwrap();
    let mut cfg = ExperimentConfig::load(&config_path("calibrate.toml")).unwrap();
    let cal = cfg.calibrate.as_mut().unwrap();
    cal.sweeps = 1;
    cal.shots = 200;
    cal.grid.retain(|k, _| k == "extra_loss_prob");
    cal.grid.get_mut("extra_loss_prob").unwrap().points = 3;
    let path = write_config(dir.path(), "cal.toml", &cfg);
    let out = dir.path().join("found.toml");
    run_ok(&["calibrate", "--config", s(&path), "--out", s(&out)]);
    let text = fs::read_to_string(&out).unwrap();
    assert!(text.starts_with("# Noise model found by `rydsim calibrate`."));
    assert!(text.contains("# residuals = "));
    let found = ExperimentConfig::load(&out).unwrap();
    assert_eq!(found.experiment, ExperimentKind::EntangleParity);
    assert!([0.1, 0.2, 0.3, 0.22].iter().any(|v| (found.noise.extra_loss_prob - v).abs() < 1e-12));
}
