//! The binary end to end: bundles, runs, reports and exit codes.

use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn snapmatch(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_snapmatch")).args(args).output().unwrap()
}

fn ok(args: &[&str]) -> String {
    let out = snapmatch(args);
    assert!(out.status.success(), "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
    String::from_utf8(out.stdout).unwrap()
}

fn code(args: &[&str]) -> (i32, String) {
    let out = snapmatch(args);
    (out.status.code().unwrap(), String::from_utf8_lossy(&out.stderr).into_owned())
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn synth_writes_a_loadable_bundle() {
    let dir = tempfile::tempdir().unwrap();
    let bundle = dir.path().join("b");
    ok(&["synth", "--n", "20", "--m", "18", "--snapshots", "2", "--out", s(&bundle)]);
    for f in ["x0.csv", "y1.csv", "y2.csv", "truth_0.csv", "truth_2.csv", "config.toml"] {
        assert!(bundle.join(f).exists(), "{f} missing");
    }
    let y1 = fs::read_to_string(bundle.join("y1.csv")).unwrap();
    assert_eq!(y1.lines().count(), 19);
    let config = fs::read_to_string(bundle.join("config.toml")).unwrap();
    assert!(config.contains("n_points = 20") && config.contains("m_points = 18"), "{config}");
}

#[test]
fn match_then_strain_on_an_open_sheet() {
    let dir = tempfile::tempdir().unwrap();
    let bundle = dir.path().join("b");
    ok(&[
        "synth", "--shape", "open-sheet", "--n", "30", "--m", "30", "--snapshots", "1",
        "--magnitude", "0.2", "--out", s(&bundle),
    ]);
    let run = dir.path().join("run");
    let stdout = ok(&["match", "--config", s(&bundle.join("config.toml")), "--out", s(&run), "--max-iters", "15"]);
    assert!(stdout.contains("termination"), "{stdout}");
    for f in ["trajectory_0.csv", "trajectory_1.csv", "controls_0.csv", "history.csv"] {
        assert!(run.join(f).exists(), "{f} missing");
    }
    let history = fs::read_to_string(run.join("history.csv")).unwrap();
    assert!(history.starts_with("iteration,cost,kin,disp,hausdorff_1,consensus_gap,seconds\n"));

    let strain = dir.path().join("strain");
    ok(&["strain", "--reference", s(&bundle.join("x0.mesh")), "--run", s(&run), "--out", s(&strain)]);
    let table = fs::read_to_string(strain.join("strain.csv")).unwrap();
    assert_eq!(table.lines().next().unwrap(), "vertex_index,x,y,z,SI");
    assert_eq!(table.lines().count(), 31);
    let quantiles = fs::read_to_string(strain.join("strain_quantiles.csv")).unwrap();
    assert!(quantiles.starts_with("quantile,value\n"));
}

#[test]
fn compare_reports_both_methods() {
    let dir = tempfile::tempdir().unwrap();
    let bundle = dir.path().join("b");
    ok(&["synth", "--n", "24", "--m", "24", "--snapshots", "1", "--out", s(&bundle)]);
    let out = dir.path().join("cmp");
    ok(&[
        "compare", "--config", s(&bundle.join("config.toml")), "--out", s(&out), "--max-iters", "10", "--no-timing",
    ]);
    let table = fs::read_to_string(out.join("compare.csv")).unwrap();
    let rows: Vec<&str> = table.lines().collect();
    assert_eq!(rows.len(), 3);
    assert!(rows[1].starts_with("OSA,") && rows[2].starts_with("GD-Armijo baseline,"), "{table}");
    // Timing disabled: the cpu_seconds column is zero for both.
    for r in &rows[1..] {
        assert_eq!(r.split(',').nth(3).unwrap(), "0");
    }
}

#[test]
fn exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let missing = dir.path().join("nope.toml");
    assert_eq!(code(&["match", "--config", s(&missing)]).0, 4);

    let bad = dir.path().join("bad.toml");
    fs::write(&bad, "[problem]\ninitial = \"x0.csv\"\ntargets = [\"y1.csv\"]\n[solver]\nmax_iter = 3\n").unwrap();
    let (c, err) = code(&["match", "--config", s(&bad)]);
    assert_eq!(c, 2, "{err}");

    fs::write(dir.path().join("x0.csv"), "x,y,z\n0,0,0\n1,0,0\n0,1,0\n").unwrap();
    fs::write(dir.path().join("y1.csv"), "x,y,z\n0,0,0\n1,zz,0\n").unwrap();
    let cfg = dir.path().join("c.toml");
    fs::write(&cfg, "[problem]\ninitial = \"x0.csv\"\ntargets = [\"y1.csv\"]\n").unwrap();
    let (c, err) = code(&["match", "--config", s(&cfg)]);
    assert_eq!(c, 2);
    assert!(err.contains("y1.csv") && err.contains("row 1"), "{err}");

    assert_eq!(code(&["synth", "--n", "2", "--out", s(&dir.path().join("tiny"))]).0, 2);
    assert_eq!(code(&["frobnicate"]).0, 2);
}

#[test]
fn strain_needs_a_mesh_reference() {
    let dir = tempfile::tempdir().unwrap();
    let bundle = dir.path().join("b");
    ok(&["synth", "--n", "12", "--m", "12", "--snapshots", "1", "--out", s(&bundle)]);
    let (c, err) = code(&[
        "strain", "--reference", s(&bundle.join("x0.csv")), "--deformed", s(&bundle.join("y1.csv")),
        "--out", s(&dir.path().join("o")),
    ]);
    assert_eq!(c, 2);
    assert!(err.contains("triangle mesh"), "{err}");
}
