use std::f64::consts::TAU;
use std::path::{Path, PathBuf};
use std::process::Command;

use geolab_cli::{run, suites, CliError, RunOptions, Scenario};

fn scenarios() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../scenarios")
}

fn opts(dir: &Path) -> RunOptions {
    RunOptions { out: Some(dir.to_path_buf()), ..RunOptions::default() }
}

fn geolab(args: &[&str]) -> std::process::Output {
    Command::new(env!("CARGO_BIN_EXE_geolab")).args(args).output().expect("binary runs")
}

#[test]
fn every_shipped_scenario_round_trips() {
    let mut n = 0;
    for entry in std::fs::read_dir(scenarios()).unwrap() {
        let p = entry.unwrap().path();
        if p.extension().is_none_or(|e| e != "cfg") || p.file_stem().unwrap() == "malformed" {
            continue;
        }
        let sc = Scenario::load(&p).unwrap_or_else(|e| panic!("{}: {e}", p.display()));
        let back = Scenario::from_toml(&sc.to_toml()).unwrap();
        assert_eq!(sc, back, "{}", p.display());
        assert_eq!(sc.config_hash(), back.config_hash());
        n += 1;
    }
    assert!(n >= 8);
}

#[test]
fn sphere_closed_registers_a_great_circle() {
    let dir = tempfile::tempdir().unwrap();
    let sc = Scenario::load(&scenarios().join("sphere_closed.cfg")).unwrap();
    let s = run(&sc, &opts(dir.path())).unwrap();
    let reg: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(dir.path().join("registry.json")).unwrap()).unwrap();
    let len = reg["geodesics"][0]["length"].as_f64().unwrap();
    assert!((len - TAU).abs() < 1e-6, "{len}");
    assert_eq!(s.manifest["status"], "ok");
    let names: Vec<&str> = s.manifest["artifacts"].as_array().unwrap().iter().map(|a| a["path"].as_str().unwrap()).collect();
    assert_eq!(names, ["scenario.toml", "registry.json"]);
    assert!(dir.path().join("manifest.json").exists());
}

#[test]
fn ellipsoid_classify_labels_the_principal_ellipses() {
    let dir = tempfile::tempdir().unwrap();
    let sc = Scenario::load(&scenarios().join("ellipsoid_classify.cfg")).unwrap();
    let s = run(&sc, &opts(dir.path())).unwrap();
    let labels: Vec<&str> = s.result["labels"].as_array().unwrap().iter().map(|v| v.as_str().unwrap()).collect();
    assert!(labels[0].ends_with("elliptic") && labels[1] == "hyperbolic" && labels[2].ends_with("elliptic"), "{labels:?}");
}

#[test]
fn reruns_are_deterministic() {
    let sc = Scenario::load(&scenarios().join("jets_generic.cfg")).unwrap();
    let (a, b, c) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    let ra = run(&sc, &opts(a.path())).unwrap();
    let rb = run(&sc, &opts(b.path())).unwrap();
    let read = |d: &Path| std::fs::read(d.join("jets.json")).unwrap();
    assert_eq!(read(a.path()), read(b.path()));
    assert_eq!(ra.manifest["artifacts"], rb.manifest["artifacts"]);
    assert_eq!(ra.manifest["config_sha256"], rb.manifest["config_sha256"]);
    let rc = run(&sc, &RunOptions { seed: Some(7), ..opts(c.path()) }).unwrap();
    assert_ne!(ra.manifest["config_sha256"], rc.manifest["config_sha256"]);
    assert_eq!(rc.manifest["seed"], 7);
}

#[test]
fn tolerance_scaling_is_recorded() {
    let dir = tempfile::tempdir().unwrap();
    let sc = Scenario::load(&scenarios().join("sphere_closed.cfg")).unwrap();
    let s = run(&sc, &RunOptions { tol_scale: 100.0, ..opts(dir.path()) }).unwrap();
    let saved = Scenario::load(&dir.path().join("scenario.toml")).unwrap();
    assert!((saved.tolerances.rtol - 1e-10).abs() < 1e-22);
    assert_eq!(s.manifest["tol_scale"], 100.0);
}

#[test]
fn config_errors() {
    let bad = |text: &str| matches!(Scenario::from_toml(text), Err(CliError::Config(_)));
    assert!(bad("name = \"x\"\nkind = \"teleport\"\n"));
    assert!(bad("name = \"x\"\nkind = \"integrate\"\n"));
    assert!(bad("name = \"x\"\nkind = \"integrate\"\nwat = 1\n[surface]\nexpr = \"x1\"\ndim = 1\n"));
    assert!(bad("name = \"x\"\nkind = \"integrate\"\n[surface]\nexpr = \"x1^2 + y\"\ndim = 2\n[[states]]\nx = [1.0, 0.0]\nu = [0.0, 1.0]\n"));
    assert!(bad("name = \"x\"\nkind = \"integrate\"\n[surface]\nexpr = \"x1^2 + x2^2 - 1\"\ndim = 2\n[[states]]\nx = [1.0, 0.0, 0.0]\nu = [0.0, 1.0, 0.0]\n"));
    assert!(bad("name = \"x\"\nkind = \"verify\"\n"));
    let ok = "name = \"x\"\nkind = \"integrate\"\n[surface]\nexpr = \"r*(x1^2 + x2^2 - 1)\"\ndim = 2\n[surface.params]\nr = 0.5\n[[states]]\nx = [1.0, 0.0]\nu = [0.0, 1.0]\n";
    assert!(Scenario::from_toml(ok).is_ok());
}

#[test]
fn off_surface_state_is_a_config_error() {
    let dir = tempfile::tempdir().unwrap();
    let sc = Scenario::from_toml("name = \"off\"\nkind = \"integrate\"\n[surface]\nexpr = \"0.5*(x1^2 + x2^2 + x3^2 - 1)\"\ndim = 3\n[[states]]\nx = [2.0, 0.0, 0.0]\nu = [0.0, 1.0, 0.0]\n").unwrap();
    let e = run(&sc, &opts(dir.path())).unwrap_err();
    assert_eq!(e.exit_code(), 2, "{e}");
}

#[test]
fn unknown_suite() {
    let e = suites::run_suite("unknown", 1.0).unwrap_err();
    assert!(matches!(e, CliError::UnknownSuite(_)));
    let out = geolab(&["verify", "unknown"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("UnknownSuite"));
}

#[test]
fn verify_suites_pass() {
    for name in ["conservation", "sphere", "jets"] {
        let out = geolab(&["verify", name]);
        let text = String::from_utf8_lossy(&out.stdout);
        assert_eq!(out.status.code(), Some(0), "{text}");
        assert!(text.contains("0 failed"));
    }
    let rep = suites::run_suite("classification", 1.0).unwrap();
    assert!(rep.passed(), "{}", rep.table());
    let tight = suites::run_suite("sphere", 1e-12).unwrap();
    assert!(!tight.passed());
}

#[test]
fn malformed_expression_exits_with_status_two() {
    let out = geolab(&["run", scenarios().join("malformed.cfg").to_str().unwrap(), "--out", tempfile::tempdir().unwrap().path().to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("ConfigError") && err.contains("column"), "{err}");
    let out = geolab(&["verify", "jets", "--tol-scale", "0"]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn numerical_failure_exits_with_status_three_and_writes_diagnostics() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("far.cfg");
    std::fs::write(
        &cfg,
        "name = \"far\"\nkind = \"closed\"\n[surface]\nexpr = \"0.5*(x1^2/4 + x2^2/2 + x3^2 - 1)\"\ndim = 3\n[[states]]\nx = [2.0, 0.0, 0.0]\nu = [0.0, 1.0, 1.0]\n",
    )
    .unwrap();
    let out_dir = dir.path().join("out");
    let out = geolab(&["run", cfg.to_str().unwrap(), "--out", out_dir.to_str().unwrap(), "--threads", "1"]);
    assert_eq!(out.status.code(), Some(3), "{}", String::from_utf8_lossy(&out.stderr));
    let diag: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(out_dir.join("failure.json")).unwrap()).unwrap();
    assert_eq!(diag["error"], "NumericalFailure");
    assert_eq!(diag["kind"], "NewtonDiverged");
    let manifest: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(out_dir.join("manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["status"], "failed");
}

#[test]
fn annulus_and_section_scenarios_write_their_schemas() {
    let dir = tempfile::tempdir().unwrap();
    let sc = Scenario::load(&scenarios().join("ellipsoid_section.cfg")).unwrap();
    run(&sc, &opts(&dir.path().join("s"))).unwrap();
    let text = std::fs::read_to_string(dir.path().join("s/section.csv")).unwrap();
    assert!(text.starts_with("orbit,n,t,z1,z2\n"));
    assert_eq!(text.lines().count(), 1 + 3 * 41);
    let mut sc = Scenario::load(&scenarios().join("ellipsoid_annulus.cfg")).unwrap();
    sc.annulus.as_mut().unwrap().iterates = 60;
    let s = run(&sc, &opts(&dir.path().join("a"))).unwrap();
    assert!(s.result["half_turn_defect"].as_f64().unwrap() < 1e-6);
    let text = std::fs::read_to_string(dir.path().join("a/orbits.csv")).unwrap();
    assert!(text.starts_with("orbit,n,phi,y\n"));
    let labels: Vec<String> = s.result["periodic_points"].as_array().unwrap().iter().map(|p| p["label"].as_str().unwrap().to_string()).collect();
    assert!(labels.iter().any(|l| l == "hyperbolic") && labels.iter().any(|l| l.ends_with("elliptic")), "{labels:?}");
}
