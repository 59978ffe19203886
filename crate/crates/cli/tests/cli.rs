use std::path::{Path, PathBuf};

use serde_json::{json, Value};
use smoothlab::grid::{Field, SnapshotHeader};
use smoothlab_cli::config::hash_value;
use smoothlab_cli::manifest::RunManifest;

fn write_config(dir: &Path, v: &Value) -> PathBuf {
    let p = dir.join("config.json");
    std::fs::write(&p, serde_json::to_string_pretty(v).unwrap()).unwrap();
    p
}

fn run(cmd: &str, config: Option<&Path>, out: &Path, extra: &[&str]) -> i32 {
    let mut args = vec!["smoothlab".to_string(), cmd.into(), "--quiet".into(), "--out".into(), out.display().to_string()];
    if let Some(c) = config {
        args.extend(["--config".into(), c.display().to_string()]);
    }
    args.extend(extra.iter().map(|s| s.to_string()));
    smoothlab_cli::run(args)
}

fn manifest(out: &Path) -> RunManifest {
    RunManifest::load(&out.join("manifest.json")).unwrap()
}

fn minimal() -> Value {
    json!({
        "surface": {"m": 2, "s": 0.0},
        "grid": {"L": 8.0, "N_x": 64, "N_theta": 8},
        "evolve": {"T": 0.2, "dt": 0.01, "dt_out": 0.05},
        "experiment": {"snapshot_every": 2}
    })
}

#[test]
fn minimal_simulate_writes_manifest_and_outputs() {
    let d = tempfile::tempdir().unwrap();
    let out = d.path().join("out");
    let code = run("simulate", Some(&write_config(d.path(), &minimal())), &out, &[]);
    assert_eq!(code, 0);
    let m = manifest(&out);
    assert_eq!(m.command, "simulate");
    assert_eq!(m.exit_code, 0);
    assert!(m.passed() && !m.checks.is_empty());
    assert_eq!(m.config_hash, hash_value(&m.config));
    assert_eq!(m.config["experiment"]["identity_tol"], json!(1e-5));
    let csv = std::fs::read_to_string(out.join("results.csv")).unwrap();
    assert!(csv.starts_with("t,norm_drift,boundary_mass,main_integrand,poscom_integrand\n"));
    assert_eq!(csv.lines().count(), 1 + 5);
    let paths: Vec<&str> = m.outputs.iter().map(|o| o.path.as_str()).collect();
    assert_eq!(paths, ["results.csv", "trajectory/index.json", "trajectory/u_00000.bin", "trajectory/u_00002.bin", "trajectory/u_00004.bin"]);
}

#[test]
fn snapshots_round_trip_through_the_header() {
    let d = tempfile::tempdir().unwrap();
    let out = d.path().join("out");
    assert_eq!(run("simulate", Some(&write_config(d.path(), &minimal())), &out, &[]), 0);
    let index: Value = serde_json::from_str(&std::fs::read_to_string(out.join("trajectory/index.json")).unwrap()).unwrap();
    let header = SnapshotHeader { l: 8.0, nx: 64, ntheta: 8, eta_carrier: 0, frame: "conjugated".into() };
    let parsed: SnapshotHeader = serde_json::from_value(json!({
        "L": index["L"], "N_x": index["N_x"], "N_theta": index["N_theta"],
        "eta_carrier": index["eta_carrier"], "frame": index["frame"]
    }))
    .unwrap();
    assert_eq!(parsed, header);
    let grid = parsed.grid().unwrap();
    let bytes = std::fs::read(out.join("trajectory/u_00000.bin")).unwrap();
    let u = Field::read_le(&grid, &mut bytes.as_slice()).unwrap();
    assert!(u.norm() > 0.0 && u.is_finite());
    assert_eq!(index["samples"][1]["file"], "u_00002.bin");
}

#[test]
fn m_below_two_is_a_config_error() {
    let d = tempfile::tempdir().unwrap();
    let mut c = minimal();
    c["surface"]["m"] = json!(1);
    let out = d.path().join("out");
    assert_eq!(run("simulate", Some(&write_config(d.path(), &c)), &out, &[]), 2);
    assert!(!out.join("manifest.json").exists());
}

#[test]
fn unknown_keys_are_rejected() {
    let d = tempfile::tempdir().unwrap();
    let mut c = minimal();
    c["grid"]["Nx"] = json!(64);
    assert_eq!(run("simulate", Some(&write_config(d.path(), &c)), &d.path().join("out"), &[]), 2);
    let mut c = minimal();
    c["experiment"]["snapshots"] = json!(1);
    assert_eq!(run("simulate", Some(&write_config(d.path(), &c)), &d.path().join("out"), &[]), 2);
}

#[test]
fn missing_config_and_bad_flags_are_config_errors() {
    let d = tempfile::tempdir().unwrap();
    let out = d.path().join("out");
    assert_eq!(run("sweep", None, &out, &[]), 2);
    assert_eq!(run("simulate", Some(&d.path().join("absent.json")), &out, &[]), 1);
    assert_eq!(smoothlab_cli::run(["smoothlab", "oscillator", "--m", "2"]), 2);
    assert_eq!(smoothlab_cli::run(["smoothlab", "--help"]), 0);
}

#[test]
fn audit_failure_exits_three_with_witness() {
    let d = tempfile::tempdir().unwrap();
    let mut c = minimal();
    c["surface"]["s"] = json!(0.05);
    c["surface"]["f"] = json!({"family": "radial", "c_f": 1.0, "w_f": 1.0, "power": 1});
    let out = d.path().join("out");
    assert_eq!(run("simulate", Some(&write_config(d.path(), &c)), &out, &[]), 3);
    let m = manifest(&out);
    assert_eq!(m.exit_code, 3);
    let err = m.summary["error"].as_str().unwrap();
    assert!(err.contains("j=") && err.contains("x="), "{err}");
}

#[test]
fn failed_tolerance_exits_four_and_names_the_check() {
    let d = tempfile::tempdir().unwrap();
    let mut c = minimal();
    c["experiment"]["identity_tol"] = json!(1e-30);
    let out = d.path().join("out");
    assert_eq!(run("simulate", Some(&write_config(d.path(), &c)), &out, &[]), 4);
    let m = manifest(&out);
    assert_eq!(m.failed_checks(), ["commutator_identity_residual"]);
    assert!(m.checks.iter().all(|c| c.tol.is_finite()));
}

#[test]
fn seed_flag_overrides_the_config() {
    let d = tempfile::tempdir().unwrap();
    let cfg = write_config(d.path(), &minimal());
    let (a, b) = (d.path().join("a"), d.path().join("b"));
    assert_eq!(run("simulate", Some(&cfg), &a, &[]), 0);
    assert_eq!(run("simulate", Some(&cfg), &b, &["--seed", "5", "--threads", "1"]), 0);
    let (ma, mb) = (manifest(&a), manifest(&b));
    assert_eq!((ma.seed, mb.seed), (0, 5));
    assert_ne!(ma.config_hash, mb.config_hash);
    assert_ne!(std::fs::read(a.join("results.csv")).unwrap(), std::fs::read(b.join("results.csv")).unwrap());
}

#[test]
fn oscillator_flags_give_the_harmonic_spectrum() {
    let d = tempfile::tempdir().unwrap();
    let out = d.path().join("out");
    assert_eq!(run("oscillator", None, &out, &["--m", "1", "--eta", "1", "--k", "3"]), 0);
    let mut r = csv::Reader::from_path(out.join("results.csv")).unwrap();
    let lambdas: Vec<f64> = r.records().map(|x| x.unwrap()[3].parse().unwrap()).collect();
    assert_eq!(lambdas.len(), 3);
    for (j, l) in lambdas.iter().enumerate() {
        assert!((l - (2 * j + 1) as f64).abs() < 1e-8, "{lambdas:?}");
    }
    assert_eq!(manifest(&out).config, json!({"m": 1, "eta": [1.0], "k": 3}));
}

#[test]
fn sweep_writes_one_row_per_frequency_with_slope() {
    let d = tempfile::tempdir().unwrap();
    let c = json!({
        "surface": {"m": 2},
        "grid": {"L": 8.0, "N_x": 256, "N_theta": 1},
        "evolve": {"T": 0.1, "dt": 0.01, "dt_out": 0.01, "absorber": {"start": 4.0, "strength": 2000.0}},
        "experiment": {"eta0s": [4, 8, 16], "r": 0.7, "r_alt": 0.5, "fit_skip": 0,
                       "refine": {"L": 8.0, "N_x": 512, "N_theta": 1}}
    });
    let out = d.path().join("out");
    let code = run("sweep", Some(&write_config(d.path(), &c)), &out, &[]);
    let m = manifest(&out);
    assert_eq!(code, if m.passed() { 0 } else { 4 });
    let names: Vec<&str> = m.checks.iter().map(|c| c.name.as_str()).collect();
    assert_eq!(names, ["invalid_points", "ratio_spread", "poscom_spread", "ratio_alt_growth", "poscom_refinement_change"]);
    let mut r = csv::Reader::from_path(out.join("results.csv")).unwrap();
    let h = r.headers().unwrap().clone();
    assert_eq!(&h[0], "eta0");
    assert_eq!(h.iter().next_back(), Some("slope"));
    let rows: Vec<csv::StringRecord> = r.records().map(|x| x.unwrap()).collect();
    assert_eq!(rows.len(), 3);
    let slope = &rows[0][h.len() - 1];
    assert!(slope.parse::<f64>().is_ok(), "{slope}");
    assert!(rows.iter().all(|row| &row[h.len() - 1] == slope));
}

#[test]
fn resolvent_needs_a_scan_or_blocks() {
    let d = tempfile::tempdir().unwrap();
    let c = json!({"surface": {"m": 2}, "cutoffs": {"delta": 0.25, "M": 8.0, "eps": 0.1}});
    assert_eq!(run("resolvent", Some(&write_config(d.path(), &c)), &d.path().join("out"), &[]), 2);
}

#[test]
fn resolvent_scan_takes_the_run_seed() {
    let d = tempfile::tempdir().unwrap();
    let c = json!({
        "surface": {"m": 2},
        "cutoffs": {"delta": 0.25, "M": 8.0, "eps": 0.1},
        "experiment": {"scan": {"samples": 1024, "seed": 99}},
        "seed": 4
    });
    let out = d.path().join("out");
    assert_eq!(run("resolvent", Some(&write_config(d.path(), &c)), &out, &[]), 0);
    let m = manifest(&out);
    assert_eq!(m.config["experiment"]["scan"]["seed"], json!(4));
    let scan: Value = serde_json::from_str(&std::fs::read_to_string(out.join("symbol_scan.json")).unwrap()).unwrap();
    assert_eq!(scan.as_array().unwrap().len(), 2);
    assert!(!out.join("results.csv").exists());
}

fn symcheck_config(blocks: &[i64]) -> Value {
    json!({
        "surface": {"m": 2},
        "grid": {"L": 4.0, "N_x": 32, "N_theta": 8},
        "cutoffs": {"delta": 0.25, "M": 4.0, "eps": 0.1},
        "experiment": {"blocks": blocks}
    })
}

#[test]
fn blocks_below_the_frequency_floor_are_rejected() {
    let d = tempfile::tempdir().unwrap();
    let out = d.path().join("out");
    assert_eq!(run("symcheck", Some(&write_config(d.path(), &symcheck_config(&[2, 4]))), &out, &[]), 2);
    assert!(!out.join("manifest.json").exists());
}

#[test]
fn exit_code_tracks_check_outcomes() {
    // a coarse grid, so the larger block may be under-resolved
    let d = tempfile::tempdir().unwrap();
    let c = symcheck_config(&[4, 8]);
    let out = d.path().join("out");
    let code = run("symcheck", Some(&write_config(d.path(), &c)), &out, &[]);
    let m = manifest(&out);
    assert_eq!(code, if m.passed() { 0 } else { 4 });
    assert_eq!(m.exit_code, code);
    assert!(m.checks.iter().any(|c| c.name == "hermiticity_defect" && c.pass));
    assert!(m.checks.iter().any(|c| c.name == "symbol_class_audit" && c.pass));
}
