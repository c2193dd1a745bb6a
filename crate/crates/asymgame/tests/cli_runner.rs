mod common;

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::Command as Process;
use std::sync::Arc;

use approx::assert_abs_diff_eq;
use asymgame::cli_runner::*;
use asymgame::simplex_field::{build_grid, ConcaveField};
use asymgame::Error;

fn spec_file(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../specs").join(name)
}

fn small(paths: Option<usize>) -> Overrides {
    Overrides { n: Some(6), tau: Some(0.05), paths, ..Overrides::default() }
}

fn run(cmd: Command, spec: &str, out: &Path, o: Overrides) -> asymgame::Result<RunManifest> {
    run_command(RunManifest::new(cmd, spec_file(spec), out.to_path_buf(), DEFAULT_SEED, o))
}

fn csv_column(path: &Path, col: &str) -> Vec<f64> {
    let mut r = csv::Reader::from_path(path).unwrap();
    let idx = r.headers().unwrap().iter().position(|h| h == col).unwrap();
    r.records().map(|rec| rec.unwrap()[idx].parse().unwrap()).collect()
}

fn json(path: &Path) -> serde_json::Value {
    serde_json::from_str(&fs::read_to_string(path).unwrap()).unwrap()
}

#[test]
fn loads_every_shipped_spec() {
    for name in ["trivial.json", "static.json", "pennies.json", "reveal.json", "asymmetric.json"] {
        let g = load_spec(&spec_file(name)).unwrap();
        assert_eq!(g.n_states(), 2, "{name}");
    }
}

#[test]
fn missing_discount_is_named() {
    let text = fs::read_to_string(spec_file("pennies.json")).unwrap().replace("\"discount\": 1.0", "\"unused\": 1.0");
    let err = parse_spec(&text).unwrap_err().to_string();
    assert!(err.contains("discount"), "{err}");
    let text = fs::read_to_string(spec_file("pennies.json")).unwrap();
    let trimmed = text.replace(",\n  \"discount\": 1.0", "");
    let err = parse_spec(&trimmed).unwrap_err().to_string();
    assert!(err.contains("missing field `discount`") && err.contains("line"), "{err}");
}

#[test]
fn row_sum_violation_is_located() {
    let text = fs::read_to_string(spec_file("pennies.json")).unwrap().replacen("[-0.5, 0.5], [0.5, -0.5]", "[-0.5, 0.5], [0.5, -0.4]", 1);
    match parse_spec(&text) {
        Err(Error::InvalidSpec(v)) => assert_eq!(v[0].location, "rates[u=0][v=0] row 1"),
        other => panic!("{other:?}"),
    }
}

#[test]
fn plot_tables() {
    let flat = ConcaveField::constant(Arc::new(build_grid(2, 5).unwrap()), 0.5);
    let mut buf = Vec::new();
    export_plot_data(&flat, &mut buf).unwrap();
    let text = String::from_utf8(buf).unwrap();
    assert!(text.starts_with("p2,W\n"));
    assert!(text.lines().skip(1).all(|l| l.ends_with(",0.5")));
    let lin = ConcaveField::linear(Arc::new(build_grid(2, 4).unwrap()), &[0.2, 0.9]);
    let mut buf = Vec::new();
    export_plot_data(&lin, &mut buf).unwrap();
    let mut r = csv::Reader::from_reader(buf.as_slice());
    for rec in r.records() {
        let rec = rec.unwrap();
        let (p2, w): (f64, f64) = (rec[0].parse().unwrap(), rec[1].parse().unwrap());
        assert_abs_diff_eq!(w, 0.2 + 0.7 * p2, epsilon = 1e-12);
    }
    let tri = ConcaveField::constant(Arc::new(build_grid(3, 4).unwrap()), 0.1);
    let mut buf = Vec::new();
    export_plot_data(&tri, &mut buf).unwrap();
    let text = String::from_utf8(buf).unwrap();
    assert!(text.starts_with("p1,p2,p3,W\n"));
    assert_eq!(text.lines().count(), 16);
}

#[test]
fn solve_then_check_then_evaluate() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("solve");
    let m = run(Command::Solve, "trivial.json", &out, small(None)).unwrap();
    for w in csv_column(&out.join("plot.csv"), "W") {
        assert_abs_diff_eq!(w, 0.5, epsilon = 1e-4);
    }
    // hashes match the files on disk
    for (name, hash) in &m.outputs {
        assert_eq!(&sha256_hex(&fs::read(out.join(name)).unwrap()), hash);
    }
    assert!(out.join("manifest.json").exists());
    assert_eq!(json(&out.join("manifest.json"))["subcommand"], "solve");

    let field = out.join("primal_field.csv");
    let chk = dir.path().join("check");
    run(Command::Check, "trivial.json", &chk, Overrides { field: Some(field.clone()), ..small(None) }).unwrap();
    let c = json(&chk.join("check.json"));
    assert!(c["min_supvar"].as_f64().unwrap() >= -c["tol_cert"].as_f64().unwrap());
    assert!(!chk.join("primal_field.csv").exists());

    let ev = dir.path().join("evaluate");
    run(Command::Evaluate, "trivial.json", &ev, Overrides { field: Some(field), eps: Some(1e-3), ..small(Some(20)) }).unwrap();
    let p = json(&ev.join("probe.json"));
    assert_abs_diff_eq!(p["worst_payoff"].as_f64().unwrap(), 0.5 * (1.0 - 1e-3), epsilon = 1e-12);
    assert_eq!(json(&ev.join("strategy.json"))["side"], "player1");
}

#[test]
fn solve_dual_reports_a_gap() {
    let dir = tempfile::tempdir().unwrap();
    run(Command::SolveDual, "static.json", dir.path(), small(None)).unwrap();
    let d = json(&dir.path().join("duality.json"));
    assert!(d["duality_gap"].as_f64().unwrap() <= 5e-2);
    assert!(dir.path().join("dual_field.csv").exists());
}

#[test]
fn frozen_chain_simulates_without_jumps() {
    let dir = tempfile::tempdir().unwrap();
    run(Command::Simulate, "static.json", dir.path(), small(Some(200))).unwrap();
    for i in 0..DUMPED_TRAJECTORIES {
        let text = fs::read_to_string(dir.path().join(format!("trajectory_{i}.csv"))).unwrap();
        assert_eq!(text.lines().count(), 2, "{text}");
    }
    let probes = json(&dir.path().join("martingale.json"));
    assert_eq!(probes.as_array().unwrap().len(), 3);
    assert!(probes.as_array().unwrap().iter().all(|p| p["pass"] == true));
    let sim = json(&dir.path().join("simulation.json"));
    assert_eq!(sim["n_paths"], 200);
    assert_eq!(sim["seed"], DEFAULT_SEED);
}

#[test]
fn reruns_are_byte_identical() {
    let dir = tempfile::tempdir().unwrap();
    let a = run(Command::Simulate, "asymmetric.json", &dir.path().join("a"), small(Some(300))).unwrap();
    let b = run(Command::Simulate, "asymmetric.json", &dir.path().join("b"), small(Some(300))).unwrap();
    assert_eq!(a.outputs, b.outputs);
}

#[test]
fn failures_leave_nothing_behind() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("bad");
    let err = run(Command::Solve, "pennies.json", &out, Overrides { tau: Some(0.9), ..Overrides::default() }).unwrap_err();
    assert!(matches!(err, Error::Config(_)));
    assert!(!out.exists());
    let kept = dir.path().join("kept");
    fs::create_dir(&kept).unwrap();
    fs::write(kept.join("note.txt"), "x").unwrap();
    let bad_belief = Overrides { belief: Some(vec![0.9, 0.2]), ..small(Some(100)) };
    assert!(run(Command::Simulate, "static.json", &kept, bad_belief).is_err());
    let left: Vec<_> = fs::read_dir(&kept).unwrap().map(|e| e.unwrap().file_name()).collect();
    assert_eq!(left, vec![std::ffi::OsString::from("note.txt")]);
}

fn binary() -> Process {
    Process::new(env!("CARGO_BIN_EXE_asymgame"))
}

fn outputs_of(manifest: &Path) -> BTreeMap<String, String> {
    serde_json::from_value(json(manifest)["outputs"].clone()).unwrap()
}

#[test]
fn binary_runs_and_ignores_the_worker_count() {
    let dir = tempfile::tempdir().unwrap();
    let mut hashes = Vec::new();
    for threads in ["1", "2"] {
        let out = dir.path().join(threads);
        let status = binary()
            .env("ASYMGAME_THREADS", threads)
            .args(["simulate", "--spec"])
            .arg(spec_file("asymmetric.json"))
            .arg("--out")
            .arg(&out)
            .args(["--paths", "500", "--seed", "7", "--eps", "0.01"])
            .output()
            .unwrap();
        assert!(status.status.success(), "{}", String::from_utf8_lossy(&status.stderr));
        hashes.push(outputs_of(&out.join("manifest.json")));
    }
    assert_eq!(hashes[0], hashes[1]);
}

#[test]
fn binary_reports_errors() {
    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("bad.json");
    let text = fs::read_to_string(spec_file("pennies.json")).unwrap().replace(",\n  \"discount\": 1.0", "");
    fs::write(&bad, text).unwrap();
    let out = binary().args(["solve", "--spec"]).arg(&bad).arg("--out").arg(dir.path().join("o")).output().unwrap();
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("discount"));
    let out = binary()
        .env("ASYMGAME_THREADS", "zero")
        .args(["solve", "--spec"])
        .arg(spec_file("static.json"))
        .arg("--out")
        .arg(dir.path().join("o"))
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(2));
}
