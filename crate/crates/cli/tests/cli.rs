use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::{json, Value};
use tempfile::TempDir;

fn timelike(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_timelike"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("exit code")
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

fn emit(dir: &TempDir, name: &str, stem: &str, extra: &[&str]) -> PathBuf {
    let path = dir.path().join(format!("{stem}.json"));
    let mut args = vec!["catalog", "emit", name, "-o", p(&path)];
    args.extend_from_slice(extra);
    let out = timelike(&args);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    path
}

/// Surface file with samples `z(u, v)` on an `n x n` grid of step `h` at the origin.
fn write_surface(dir: &TempDir, name: &str, n: usize, h: f64, z: impl Fn(f64, f64) -> [f64; 4]) -> PathBuf {
    let mut cols = vec![Vec::new(); 4];
    for i in 0..n {
        for j in 0..n {
            let x = z(i as f64 * h, j as f64 * h);
            for k in 0..4 {
                cols[k].push(x[k]);
            }
        }
    }
    let doc = json!({
        "grid": {"u0": 0.0, "v0": 0.0, "hu": h, "hv": h, "nu": n, "nv": n, "order": 2},
        "z": {"x1": cols[0], "x2": cols[1], "x3": cols[2], "x4": cols[3]},
    });
    let path = dir.path().join(format!("{name}.json"));
    std::fs::write(&path, doc.to_string()).unwrap();
    path
}

#[test]
fn extract_product_surface_is_first_type() {
    let dir = TempDir::new().unwrap();
    let surf = emit(&dir, "product", "product", &[]);
    let inv = dir.path().join("inv.json");
    let out = timelike(&["extract", p(&surf), "--format", "json", "-o", p(&inv)]);
    assert_eq!(code(&out), 0);
    let doc: Value = serde_json::from_str(&std::fs::read_to_string(&inv).unwrap()).unwrap();
    assert_eq!(doc["surface_type"], "first");
    // a = 1, b = 2: f = 1/sqrt 2 and nu = sqrt 5 / 4
    let nu = doc["fields"]["nu"][0].as_f64().unwrap();
    assert!((nu - 5f64.sqrt() / 4.0).abs() < 1e-4, "{nu}");
}

#[test]
fn non_isotropic_input_exits_2() {
    let dir = TempDir::new().unwrap();
    let s = write_surface(&dir, "euclid", 9, 0.1, |u, v| [u, v, 0.0, 0.0]);
    let out = timelike(&["extract", p(&s)]);
    assert_eq!(code(&out), 2, "{}", String::from_utf8_lossy(&out.stderr));
}

#[test]
fn plane_exits_3_at_its_minimal_points() {
    let dir = TempDir::new().unwrap();
    let s = write_surface(&dir, "plane", 9, 0.1, |u, v| [0.0, 0.0, 0.5 * (u - v), 0.5 * (u + v)]);
    let out = timelike(&["extract", p(&s)]);
    assert_eq!(code(&out), 3, "{}", String::from_utf8_lossy(&out.stderr));
}

#[test]
fn unreadable_input_exits_4() {
    let dir = TempDir::new().unwrap();
    let bad = dir.path().join("bad.json");
    std::fs::write(&bad, r#"{"grid": 1}"#).unwrap();
    assert_eq!(code(&timelike(&["extract", p(&bad)])), 4);
    assert_eq!(code(&timelike(&["check", p(&dir.path().join("missing.json"))])), 4);
    let garbage = dir.path().join("garbage.json");
    std::fs::write(&garbage, "not json").unwrap();
    assert_eq!(code(&timelike(&["reconstruct", p(&garbage)])), 4);
}

#[test]
fn incompatible_data_exits_5_and_compatible_data_reconstructs() {
    let dir = TempDir::new().unwrap();
    let good = emit(&dir, "third-type", "third-type", &[]);
    let bad = emit(&dir, "third-type", "perturbed", &["--params", "mu1_shift=0.1"]);
    let surf = dir.path().join("surf.json");
    let out = timelike(&["reconstruct", p(&good), "--strict", "--compare-paths", "-o", p(&surf)]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    assert!(surf.exists());
    assert_eq!(code(&timelike(&["reconstruct", p(&bad), "--strict"])), 5);
}

#[test]
fn strict_check_rejects_non_converging_residuals() {
    let dir = TempDir::new().unwrap();
    let good = emit(&dir, "third-type", "third-type", &[]);
    let bad = emit(&dir, "third-type", "perturbed", &["--params", "mu1_shift=0.1"]);
    assert_eq!(code(&timelike(&["check", p(&good), "--refine", "--strict"])), 0);
    assert_eq!(code(&timelike(&["check", p(&bad), "--refine", "--strict"])), 1);
    // without --strict the report is informational
    assert_eq!(code(&timelike(&["check", p(&bad)])), 0);
}

#[test]
fn roundtrip_of_a_surface_converges() {
    let dir = TempDir::new().unwrap();
    let surf = emit(&dir, "product", "product", &[]);
    let out = timelike(&["roundtrip", p(&surf), "--refine", "--format", "json"]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let doc: Value = serde_json::from_slice(&out.stdout).unwrap();
    assert!(doc["congruence_distance"].as_f64().unwrap() < 1e-5);
    let q = doc["order"].as_f64().unwrap();
    assert!(q > 1.7, "order {q}");
}

#[test]
fn roundtrip_of_a_cylinder_is_refused() {
    let dir = TempDir::new().unwrap();
    let surf = emit(&dir, "cylinder", "cylinder", &[]);
    assert_eq!(code(&timelike(&["roundtrip", p(&surf)])), 1);
}

#[test]
fn machine_output_is_byte_stable() {
    let dir = TempDir::new().unwrap();
    let inv = emit(&dir, "constant-first", "constant-first", &[]);
    let run = || {
        let out = timelike(&["reconstruct", p(&inv), "--format", "json"]);
        assert_eq!(code(&out), 0);
        out.stdout
    };
    let first = run();
    assert!(!first.is_empty());
    assert_eq!(first, run());

    let a = emit(&dir, "product", "product", &[]);
    let b = dir.path().join("again.json");
    timelike(&["catalog", "emit", "product", "-o", p(&b)]);
    assert_eq!(std::fs::read(&a).unwrap(), std::fs::read(&b).unwrap());
}

#[test]
fn catalog_lists_every_entry_and_rejects_unknown_names() {
    let out = timelike(&["catalog", "list", "--format", "json"]);
    assert_eq!(code(&out), 0);
    let doc: Value = serde_json::from_slice(&out.stdout).unwrap();
    let names: Vec<&str> = doc.as_array().unwrap().iter().filter_map(|e| e["name"].as_str()).collect();
    for n in ["product", "cylinder", "constant-first", "third-type", "second-probe"] {
        assert!(names.contains(&n), "{n} missing from {names:?}");
    }
    assert_ne!(code(&timelike(&["catalog", "emit", "no-such-entry"])), 0);
    assert_ne!(code(&timelike(&["catalog", "emit", "product", "--params", "zz=1"])), 0);
}

#[test]
fn csv_emit_roundtrips_through_extract() {
    let dir = TempDir::new().unwrap();
    let csv = dir.path().join("product.csv");
    let out = timelike(&["catalog", "emit", "product", "--format", "csv", "-o", p(&csv)]);
    assert_eq!(code(&out), 0);
    let out = timelike(&["extract", p(&csv), "--format", "json"]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let doc: Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(doc["surface_type"], "first");
}
