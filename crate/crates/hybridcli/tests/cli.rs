//! End-to-end checks of the command-line binary: commands, exit codes, and
//! byte determinism.

use std::process::{Command, Output};

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_hybridcli"))
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().expect("binary runs")
}

#[test]
fn gen_writes_graph_text() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("g.txt");
    let o = run(&["gen", "--graph", "path:16", "--out", out.to_str().unwrap()]);
    assert!(o.status.success(), "{o:?}");
    let text = std::fs::read_to_string(&out).unwrap();
    assert!(text.lines().count() >= 16);
}

#[test]
fn nq_reports_graph_value() {
    let o = run(&["nq", "--graph", "path:64", "--k", "20"]);
    assert!(o.status.success());
    let err = String::from_utf8_lossy(&o.stderr);
    assert!(err.contains("nq_graph(20) = 4"), "{err}");
    assert!(String::from_utf8_lossy(&o.stdout).starts_with("node,nq"));
}

#[test]
fn unknown_algorithm_exits_validation() {
    let o = run(&["run", "--graph", "path:64", "--algo", "warp_route", "--seeds", "1"]);
    assert_eq!(o.status.code(), Some(1), "{o:?}");
}

#[test]
fn bad_flag_exits_validation() {
    let o = run(&["run", "--no-such-flag"]);
    assert_eq!(o.status.code(), Some(1));
}

#[test]
fn run_is_byte_deterministic() {
    let args =
        ["run", "--graph", "path:64", "--algo", "k_disseminate", "--k", "16", "--seeds", "1,2"];
    let a = run(&args);
    let b = run(&args);
    assert!(a.status.success(), "{a:?}");
    assert_eq!(a.stdout, b.stdout);
    let text = String::from_utf8_lossy(&a.stdout);
    assert_eq!(text.lines().count(), 3); // header + two seeds
    assert!(text.lines().skip(1).all(|l| l.contains(",true,")));
}

#[test]
fn spec_file_with_overrides() {
    let dir = tempfile::tempdir().unwrap();
    let spec = dir.path().join("spec.json");
    std::fs::write(
        &spec,
        r#"{"graphs":["path:64","path:128"],"algo":"k_disseminate","seeds":[7]}"#,
    )
    .unwrap();
    let out = dir.path().join("rows.csv");
    let o = run(&[
        "run",
        "--spec",
        spec.to_str().unwrap(),
        "--k",
        "8",
        "--out",
        out.to_str().unwrap(),
    ]);
    assert!(o.status.success(), "{o:?}");
    let text = std::fs::read_to_string(&out).unwrap();
    assert_eq!(text.lines().count(), 3);
    assert!(text.lines().skip(1).all(|l| l.contains(",8,")));
}

#[test]
fn fit_round_trip_and_single_point_error() {
    let dir = tempfile::tempdir().unwrap();
    let csv = dir.path().join("synth.csv");
    // rounds = 7·nq·log² n fixture.
    let mut text = String::from("n,k,nq,rounds\n");
    for (n, log) in [(64u64, 6u64), (128, 7), (256, 8), (512, 9), (1024, 10)] {
        let nq = ((n / 4) as f64).sqrt().round() as u64;
        text.push_str(&format!("{n},{},{nq},{}\n", n / 4, 7 * nq * log * log));
    }
    std::fs::write(&csv, &text).unwrap();
    let o = run(&["fit", "--csv", csv.to_str().unwrap(), "--predictor", "nq"]);
    assert!(o.status.success(), "{o:?}");
    let report: serde_json::Value =
        serde_json::from_slice(&o.stdout).expect("fit prints JSON");
    let constant = report["constant"].as_f64().unwrap();
    let exponent = report["exponent"].as_f64().unwrap();
    assert!((constant - 7.0).abs() < 0.5, "constant {constant}");
    assert!((exponent - 2.0).abs() < 0.1, "exponent {exponent}");

    let single = dir.path().join("one.csv");
    std::fs::write(&single, "n,k,nq,rounds\n64,16,4,100\n").unwrap();
    let o = run(&["fit", "--csv", single.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(1));
}
