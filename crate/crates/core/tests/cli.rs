use std::fs;
use std::path::Path;
use std::process::Command;

fn kinwass() -> Command {
    Command::new(env!("CARGO_BIN_EXE_kinwass"))
}

fn write_measure(path: &Path, rows: &[[f64; 3]]) {
    let mut text = String::from("x1,v1,w\n");
    for r in rows {
        text.push_str(&format!("{},{},{}\n", r[0], r[1], r[2]));
    }
    fs::write(path, text).unwrap();
}

#[test]
fn distance_agrees_with_oracle() {
    let dir = tempfile::tempdir().unwrap();
    let (a, b) = (dir.path().join("a.csv"), dir.path().join("b.csv"));
    write_measure(&a, &[[0.1, 0.0, 0.25], [0.3, 0.2, 0.25], [0.55, -0.1, 0.25], [0.8, 0.05, 0.25]]);
    write_measure(&b, &[[0.15, 0.1, 0.25], [0.4, -0.2, 0.25], [0.6, 0.0, 0.25], [0.95, 0.3, 0.25]]);
    let out = dir.path().join("out");
    let status = kinwass()
        .args(["distance", a.to_str().unwrap(), b.to_str().unwrap(), "--oracle", "--out", out.to_str().unwrap()])
        .output()
        .unwrap();
    assert!(status.status.success(), "{}", String::from_utf8_lossy(&status.stderr));

    let mut rdr = csv::Reader::from_path(out.join("distance.csv")).unwrap();
    let headers = rdr.headers().unwrap().clone();
    let row = rdr.records().next().unwrap().unwrap();
    let get = |name: &str| -> f64 { row[headers.iter().position(|h| h == name).unwrap()].parse().unwrap() };
    assert!((get("Wp") - get("Wp_oracle")).abs() < 1e-9);
    assert!((get("Wkin") - get("Wkin_oracle")).abs() < 1e-9);
}

#[test]
fn bad_input_exits_with_usage_code() {
    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("bad.csv");
    fs::write(&bad, "x,v\n0.1,0.2\n").unwrap();
    let code = kinwass().args(["distance", bad.to_str().unwrap(), bad.to_str().unwrap()]).status().unwrap();
    assert_eq!(code.code(), Some(2));
    let code = kinwass().args(["simulate", "--set", "sim.nope=1"]).status().unwrap();
    assert_eq!(code.code(), Some(2));
    let code = kinwass().arg("frobnicate").status().unwrap();
    assert_eq!(code.code(), Some(2));
}

#[test]
fn simulate_writes_outputs() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("run");
    let status = kinwass()
        .args(["simulate", "--seed", "3", "--out", out.to_str().unwrap()])
        .args(["--set", "sim.particles=2048", "--set", "sim.cells=32", "--set", "sim.dt=0.01"])
        .args(["--set", "sim.t_end=0.05", "--set", "sim.snapshots=5", "--set", "sim.subsample=64"])
        .output()
        .unwrap();
    assert!(status.status.success(), "{}", String::from_utf8_lossy(&status.stderr));
    for f in ["diagnostics.csv", "bounds.csv", "a_trace.csv", "manifest.toml"] {
        assert!(out.join(f).exists(), "{f} missing");
    }
    let diag = fs::read_to_string(out.join("diagnostics.csv")).unwrap();
    assert_eq!(diag.lines().count(), 7);
    let manifest: toml::Table = fs::read_to_string(out.join("manifest.toml")).unwrap().parse().unwrap();
    assert!(manifest.contains_key("config"));
}
