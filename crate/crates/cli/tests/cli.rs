use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;

fn lab(args: &[&str], envs: &[(&str, &str)]) -> Output {
    let mut c = Command::new(env!("CARGO_BIN_EXE_minsurf-lab"));
    c.args(args).env_remove("MINSURF_LAB_THREADS");
    for (k, v) in envs {
        c.env(k, v);
    }
    c.output().expect("binary runs")
}

fn report(dir: &Path) -> Value {
    serde_json::from_str(&std::fs::read_to_string(dir.join("report.json")).unwrap()).unwrap()
}

fn schema() -> Value {
    let p = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../docs/report.schema.json");
    serde_json::from_str(&std::fs::read_to_string(p).unwrap()).unwrap()
}

fn assert_required(schema_obj: &Value, value: &Value, at: &str) {
    for key in schema_obj["required"].as_array().unwrap() {
        let k = key.as_str().unwrap();
        assert!(value.get(k).is_some(), "{at}.{k} missing");
    }
}

fn assert_matches_schema(r: &Value) {
    let s = schema();
    assert_required(&s, r, "report");
    let body = &s["properties"]["body"];
    assert_required(body, &r["body"], "body");
    assert_required(&s["$defs"]["config"], &r["body"]["config"], "config");
    for c in r["body"]["checks"].as_array().unwrap() {
        assert_required(&s["$defs"]["check"], c, "check");
        assert!(!c["anchor"].as_str().unwrap().is_empty());
    }
    let hash = r["body"]["config_hash"].as_str().unwrap();
    assert_eq!(hash.len(), 64);
}

#[test]
fn catalog_lists_every_surface() {
    let out = lab(&["catalog"], &[]);
    assert!(out.status.success());
    let r: Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_matches_schema(&r);
    let names: Vec<&str> = r["body"]["data"]["surfaces"]
        .as_array()
        .unwrap()
        .iter()
        .map(|s| s["name"].as_str().unwrap())
        .collect();
    for n in [
        "plane_k",
        "holo_graph",
        "catenoid_r6",
        "enneper_r6",
        "scaled_graph",
        "perturbed_graph",
    ] {
        assert!(names.contains(&n), "{n} missing from catalog");
    }
}

#[test]
fn analyze_writes_schema_conforming_report_and_csv() {
    let dir = tempfile::tempdir().unwrap();
    let out = lab(
        &[
            "analyze",
            "--surface",
            "plane_k",
            "--k",
            "2",
            "--res",
            "17",
            "--out",
            dir.path().to_str().unwrap(),
            "--format",
            "both",
        ],
        &[],
    );
    assert!(
        out.status.success(),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    let r = report(dir.path());
    assert_matches_schema(&r);
    assert_eq!(r["body"]["summary"]["all_passed"], Value::Bool(true));
    let csv = std::fs::read_to_string(dir.path().join("fields_n17.csv")).unwrap();
    assert!(csv.starts_with("u,v,"));
    let leftovers: Vec<_> = std::fs::read_dir(dir.path())
        .unwrap()
        .filter_map(|e| e.ok())
        .filter(|e| e.file_name().to_string_lossy().contains(".tmp"))
        .collect();
    assert!(leftovers.is_empty());
}

#[test]
fn flags_override_config_file() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("run.cfg");
    std::fs::write(
        &cfg,
        "# catenoid study\nsurface = catenoid_r6\nres = 17\nseed = 4\n",
    )
    .unwrap();
    let out = lab(
        &[
            "holonomy",
            "--config",
            cfg.to_str().unwrap(),
            "--surface",
            "holo_graph",
            "--param",
            "p=z^3",
        ],
        &[],
    );
    assert!(
        out.status.success(),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    let r: Value = serde_json::from_slice(&out.stdout).unwrap();
    let c = &r["body"]["config"];
    assert_eq!(c["surface"], "holo_graph");
    assert_eq!(c["seed"], 4);
    assert_eq!(c["resolutions"], serde_json::json!([17]));
    assert_eq!(r["body"]["data"]["samples"][0]["found"], Value::Bool(true));
}

#[test]
fn synthetic_connection_reports_none_found_with_certificate() {
    let out = lab(&["holonomy", "--synthetic", "so4"], &[]);
    assert!(out.status.success());
    let r: Value = serde_json::from_slice(&out.stdout).unwrap();
    let s = &r["body"]["data"]["samples"][0];
    assert_eq!(s["found"], Value::Bool(false));
    assert!(!s["certificate"]["full_singular_values"]
        .as_array()
        .unwrap()
        .is_empty());
    assert_eq!(s["certificate"]["skew_dimension"], 0);
}

#[test]
fn failing_check_gives_exit_code_one() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("strict.cfg");
    std::fs::write(
        &cfg,
        "surface = catenoid_r6\nres = 33, 65\nmin_order = 2.5\n",
    )
    .unwrap();
    let out = lab(&["convergence", "--config", cfg.to_str().unwrap()], &[]);
    assert_eq!(out.status.code(), Some(1));
    let r: Value = serde_json::from_slice(&out.stdout).unwrap();
    assert!(!r["body"]["summary"]["failed"]
        .as_array()
        .unwrap()
        .is_empty());
}

#[test]
fn invalid_configuration_is_rejected() {
    assert_eq!(
        lab(&["analyze", "--surface", "plane_k", "--res", "65,33"], &[])
            .status
            .code(),
        Some(3)
    );
    assert_eq!(
        lab(&["analyze", "--surface", "torus"], &[]).status.code(),
        Some(3)
    );
    assert_eq!(
        lab(&["spectrum", "--synthetic", "so4"], &[]).status.code(),
        Some(3)
    );
    let out = lab(
        &["analyze", "--surface", "plane_k", "--res", "17"],
        &[("MINSURF_LAB_THREADS", "many")],
    );
    assert_eq!(out.status.code(), Some(3));
    assert!(String::from_utf8_lossy(&out.stderr).contains("MINSURF_LAB_THREADS"));
}

#[test]
fn spectrum_flags_stability_and_runs_with_a_thread_cap() {
    let out = lab(
        &[
            "spectrum",
            "--surface",
            "holo_graph",
            "--param",
            "p=z^2",
            "--res",
            "17,33",
        ],
        &[("MINSURF_LAB_THREADS", "1")],
    );
    assert!(
        out.status.success(),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    let r: Value = serde_json::from_slice(&out.stdout).unwrap();
    for s in r["body"]["data"]["samples"].as_array().unwrap() {
        assert_eq!(s["classification"], "patch-stable");
    }
    let out = lab(
        &[
            "spectrum",
            "--surface",
            "catenoid_r6",
            "--tmax",
            "2",
            "--res",
            "17",
        ],
        &[],
    );
    let r: Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(
        r["body"]["data"]["samples"][0]["classification"],
        "patch-unstable"
    );
}

#[test]
fn repeated_runs_give_identical_bodies() {
    let args = [
        "analyze",
        "--surface",
        "holo_graph",
        "--param",
        "p=z^3",
        "--res",
        "17,33",
    ];
    let a: Value = serde_json::from_slice(&lab(&args, &[]).stdout).unwrap();
    let b: Value = serde_json::from_slice(&lab(&args, &[]).stdout).unwrap();
    assert_eq!(
        serde_json::to_string(&a["body"]).unwrap(),
        serde_json::to_string(&b["body"]).unwrap()
    );
}

#[test]
fn convergence_emits_order_table() {
    let dir = tempfile::tempdir().unwrap();
    let out = lab(
        &[
            "convergence",
            "--surface",
            "catenoid_r6",
            "--res",
            "33,65",
            "--format",
            "csv",
            "--out",
            dir.path().to_str().unwrap(),
        ],
        &[],
    );
    assert!(
        out.status.success(),
        "{}",
        String::from_utf8_lossy(&out.stdout)
    );
    let csv = std::fs::read_to_string(dir.path().join("convergence.csv")).unwrap();
    assert!(csv.starts_with("check,n,h,value\n"));
    assert!(csv.contains("weitzenbock_sum_a_plus,65,"));
    assert!(!dir.path().join("report.json").exists());
}
