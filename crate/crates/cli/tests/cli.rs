use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;
use tempfile::TempDir;

fn dentreg(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_dentreg")).args(args).output().expect("binary runs")
}

fn ok(args: &[&str]) -> String {
    let out = dentreg(args);
    assert!(out.status.success(), "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
    String::from_utf8(out.stdout).unwrap()
}

fn code(args: &[&str]) -> i32 {
    dentreg(args).status.code().expect("exited normally")
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn json(p: &Path) -> Value {
    serde_json::from_str(&std::fs::read_to_string(p).unwrap()).unwrap()
}

/// A lower-jaw phantom with artifacts and noisy cues in `dir/p`.
fn phantom(dir: &Path) -> std::path::PathBuf {
    let p = dir.join("p");
    ok(&["phantom", "--seed", "4", "--random-pose", "15,10", "--artifact-fraction", "0.3", "--cue-noise", "2,2.5", "--out-dir", s(&p)]);
    p
}

#[test]
fn phantom_register_evaluate() {
    let dir = TempDir::new().unwrap();
    let p = phantom(dir.path());
    for f in ["ct.hdr", "ct.raw", "mesh.obj", "truth.json", "config.json", "cues.json", "cues_noisy.json", "depth.pgm", "mip.pgm"] {
        assert!(p.join(f).exists(), "missing {f}");
    }
    let (report, evaluated) = (dir.path().join("r.json"), dir.path().join("e.json"));
    ok(&["register", "--ct", s(&p.join("ct.hdr")), "--mesh", s(&p.join("mesh.obj")), "--jaw", "lower",
        "--cues", s(&p.join("cues_noisy.json")), "--out", s(&report)]);
    let text = ok(&["evaluate", "--report", s(&report), "--truth", s(&p.join("truth.json")), "--out", s(&evaluated)]);
    assert!(text.starts_with("mean landmark error"));
    let mean = json(&evaluated)["evaluation"]["mean_mm"].as_f64().unwrap();
    assert!(mean <= 0.5, "{mean} mm");
}

#[test]
fn estimated_cues_feed_registration() {
    let dir = TempDir::new().unwrap();
    let p = phantom(dir.path());
    let q = dir.path().join("q");
    ok(&["project", "--ct", s(&p.join("ct.hdr")), "--mesh", s(&p.join("mesh.obj")), "--out-dir", s(&q)]);
    ok(&["pose", "--image", s(&q.join("depth.pgm")), "--kind", "depth", "--out", s(&q.join("model.json"))]);
    ok(&["pose", "--image", s(&q.join("mip.pgm")), "--kind", "mip", "--out", s(&q.join("ct.json"))]);
    assert_eq!(json(&q.join("ct.json"))["cues"].as_array().unwrap().len(), 2);
    let report = dir.path().join("r.json");
    ok(&["register", "--ct", s(&p.join("ct.hdr")), "--mesh", s(&p.join("mesh.obj")), "--jaw", "lower",
        "--cues", s(&q.join("model.json")), "--cues", s(&q.join("ct.json")), "--out", s(&report)]);
    ok(&["evaluate", "--report", s(&report), "--truth", s(&p.join("truth.json")), "--out", s(&report)]);
    let mean = json(&report)["evaluation"]["mean_mm"].as_f64().unwrap();
    assert!(mean <= 0.5, "{mean} mm");
}

#[test]
fn same_seed_gives_same_report() {
    let dir = TempDir::new().unwrap();
    let p = phantom(dir.path());
    let run = |name: &str| {
        let out = dir.path().join(name);
        ok(&["register", "--ct", s(&p.join("ct.hdr")), "--mesh", s(&p.join("mesh.obj")), "--jaw", "lower",
            "--cues", s(&p.join("cues.json")), "--seed", "7", "--out", s(&out)]);
        let mut v = json(&out);
        v["runtime_s"] = Value::Null;
        v
    };
    let a = run("a.json");
    assert_eq!(a["seed"], 7);
    assert_eq!(a, run("b.json"));
}

#[test]
fn input_errors_exit_with_2() {
    let dir = TempDir::new().unwrap();
    let p = phantom(dir.path());
    let (ct, mesh) = (p.join("ct.hdr"), p.join("mesh.obj"));
    let base = ["register", "--ct", s(&ct), "--mesh", s(&mesh), "--jaw", "lower"];
    let out = dir.path().join("r.json");

    assert_eq!(code(&[&base[..], &["--radius", "0", "--out", s(&out)]].concat()), 2);
    assert_eq!(code(&["register", "--ct", s(&dir.path().join("none.hdr")), "--mesh", s(&mesh), "--jaw", "lower", "--out", s(&out)]), 2);
    assert_eq!(code(&["register", "--ct", s(&ct), "--mesh", s(&mesh), "--jaw", "middle", "--out", s(&out)]), 2);

    let bad = dir.path().join("bad.json");
    std::fs::write(&bad, r#"{"cues": [{"source": "model_depth", "point_px": [1.0], "angle_rad": 0.0}]}"#).unwrap();
    assert_eq!(code(&[&base[..], &["--cues", s(&bad), "--out", s(&out)]].concat()), 2);
    assert_eq!(code(&["phantom", "--random-pose", "15", "--out-dir", s(&dir.path().join("z"))]), 2);
    assert!(!out.exists());
}

#[test]
fn sweep_writes_csv() {
    let dir = TempDir::new().unwrap();
    let csv = dir.path().join("s.csv");
    let text = ok(&["sweep", "--radii", "10", "--seeds", "1", "--out", s(&csv)]);
    assert!(text.contains("r = 10 mm"));
    let body = std::fs::read_to_string(&csv).unwrap();
    let lines: Vec<&str> = body.lines().collect();
    assert_eq!(lines[0], "radius_mm,mean_error_mm,runtime_s,seed");
    assert_eq!(lines.len(), 2);
    let fields: Vec<f64> = lines[1].split(',').map(|f| f.parse().unwrap()).collect();
    assert_eq!(fields[0], 10.0);
    assert!(fields[1] <= 0.5 && fields[2] > 0.0);
}

#[test]
fn benchmark_prints_table() {
    let dir = TempDir::new().unwrap();
    let out = dir.path().join("b.json");
    let text = ok(&["benchmark", "--seeds", "1", "--artifact-fraction", "0.3", "--out", s(&out)]);
    for row in ["| ICP |", "| clusters, no stochastic |", "| clusters |"] {
        assert!(text.contains(row), "{text}");
    }
    assert!(json(&out).is_object() || json(&out).is_array());
}
