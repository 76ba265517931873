//! End-to-end tests of the command-line interface.

mod common;

use std::fs;
use std::path::Path;
use std::process::Command;

use common::random_rows;

fn scs_bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_scs"))
}

fn write_panel(path: &Path, seed: u64, t: usize, n: usize) {
    let rows = random_rows(seed, t, n);
    let labels: Vec<String> = (0..n).map(|j| format!("A{j}")).collect();
    let mut csv = labels.join(",");
    csv.push('\n');
    for row in rows {
        let cells: Vec<String> = row.iter().map(|x| format!("{x:?}")).collect();
        csv.push_str(&cells.join(","));
        csv.push('\n');
    }
    fs::write(path, csv).unwrap();
}

#[test]
fn missing_input_is_an_input_error() {
    let out = scs_bin()
        .args([
            "scs",
            "--input",
            "/nonexistent/panel.csv",
            "--loss",
            "sharpe",
            "--out",
            "/tmp/scs-cli-missing",
        ])
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).starts_with("error:"));
}

#[test]
fn bad_loss_spec_is_rejected() {
    let out = scs_bin()
        .args([
            "scs",
            "--input",
            "x.csv",
            "--loss",
            "mv:gamma=-1",
            "--out",
            "/tmp/scs-cli-badloss",
        ])
        .output()
        .unwrap();
    assert!(!out.status.success());
}

#[test]
fn scs_near_zero_alpha_retains_all_nondegenerate() {
    let dir = tempfile::tempdir().unwrap();
    let input = dir.path().join("panel.csv");
    write_panel(&input, 5, 40, 5);
    let out_dir = dir.path().join("out");
    let status = scs_bin()
        .args([
            "scs",
            "--input",
            input.to_str().unwrap(),
            "--loss",
            "mv:gamma=0.5",
            "--alpha",
            "0.000000001",
            "--out",
            out_dir.to_str().unwrap(),
        ])
        .status()
        .unwrap();
    assert!(status.success());
    let records = fs::read_to_string(out_dir.join("records.csv")).unwrap();
    let mut rows = 0;
    for line in records.lines().skip(1) {
        rows += 1;
        let cells: Vec<&str> = line.split(',').collect();
        let included = cells[5] == "true";
        let degenerate = cells[6] == "true";
        assert!(included || degenerate, "excluded non-degenerate row: {line}");
    }
    assert_eq!(rows, 31);
    assert!(out_dir.join("scs.json").exists());
    assert!(out_dir.join("manifest.json").exists());
}

#[test]
fn metrics_outputs_complete_file_set() {
    let dir = tempfile::tempdir().unwrap();
    let input = dir.path().join("panel.csv");
    write_panel(&input, 11, 60, 6);
    let scs_dir = dir.path().join("scs");
    assert!(scs_bin()
        .args([
            "scs",
            "--input",
            input.to_str().unwrap(),
            "--loss",
            "sharpe",
            "--alpha",
            "0.05",
            "--out",
            scs_dir.to_str().unwrap(),
        ])
        .status()
        .unwrap()
        .success());
    let m_dir = dir.path().join("metrics");
    assert!(scs_bin()
        .args([
            "metrics",
            "--scs",
            scs_dir.join("scs.json").to_str().unwrap(),
            "--alphas",
            "0.01,0.05,0.10",
            "--out",
            m_dir.to_str().unwrap(),
        ])
        .status()
        .unwrap()
        .success());
    for file in [
        "metrics.csv",
        "inclusion.csv",
        "cii.csv",
        "cii.dot",
        "ii_profile.csv",
        "manifest.json",
    ] {
        assert!(m_dir.join(file).exists(), "{file} missing");
    }
    let metrics = fs::read_to_string(m_dir.join("metrics.csv")).unwrap();
    assert_eq!(metrics.lines().count(), 4); // header + three levels
    let dot = fs::read_to_string(m_dir.join("cii.dot")).unwrap();
    assert!(dot.contains("graph cii {"));
    assert!(dot.contains("penwidth"));
}

#[test]
fn simulate_is_deterministic_per_seed() {
    let dir = tempfile::tempdir().unwrap();
    let args = |out: &Path| {
        vec![
            "simulate".to_string(),
            "--model".into(),
            "model2".into(),
            "--rho".into(),
            "0.25".into(),
            "--n".into(),
            "4".into(),
            "--T".into(),
            "30,60".into(),
            "--losses".into(),
            "sharpe".into(),
            "--alphas".into(),
            "0.05".into(),
            "--runs".into(),
            "4".into(),
            "--seed".into(),
            "9".into(),
            "--out".into(),
            out.to_str().unwrap().into(),
        ]
    };
    let out1 = dir.path().join("run1");
    let out2 = dir.path().join("run2");
    for out in [&out1, &out2] {
        assert!(scs_bin().args(args(out)).status().unwrap().success());
    }
    let t1 = fs::read_to_string(out1.join("table.csv")).unwrap();
    let t2 = fs::read_to_string(out2.join("table.csv")).unwrap();
    assert_eq!(t1, t2);
    assert!(out1.join("runs.json").exists());
}

#[test]
fn theory_emits_ordered_bounds() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("theory");
    assert!(scs_bin()
        .args([
            "theory",
            "--model",
            "model2",
            "--rho",
            "0.25",
            "--n",
            "4",
            "--loss",
            "mv:gamma=0.5",
            "--alphas",
            "0.05,0.10",
            "--T",
            "100,250",
            "--seed",
            "3",
            "--out",
            out.to_str().unwrap(),
        ])
        .status()
        .unwrap()
        .success());
    let csv = fs::read_to_string(out.join("theory.csv")).unwrap();
    let mut rows = 0;
    for line in csv.lines().skip(1) {
        rows += 1;
        let cells: Vec<f64> = line
            .split(',')
            .take(6)
            .map(|c| c.parse().unwrap())
            .collect();
        let (expected, lower, upper) = (cells[2], cells[3], cells[4]);
        assert!(lower <= expected + 1e-12 && expected <= upper + 1e-12, "{line}");
    }
    assert_eq!(rows, 4);
}

#[test]
fn check_verdict_for_optimal_and_dominated() {
    let dir = tempfile::tempdir().unwrap();
    let input = dir.path().join("panel.csv");
    // asset A1 far worse than A0: shared mean shock, shifted level
    let rows: Vec<Vec<f64>> = random_rows(3, 1500, 1)
        .into_iter()
        .map(|r| vec![0.02 + r[0] * 0.3, -0.08 + r[0] * 0.3])
        .collect();
    let mut csv = String::from("A0,A1\n");
    for row in rows {
        csv.push_str(&format!("{:?},{:?}\n", row[0], row[1]));
    }
    fs::write(&input, csv).unwrap();

    let run = |candidate: &str| {
        let out = scs_bin()
            .args([
                "check",
                "--input",
                input.to_str().unwrap(),
                "--loss",
                "mv:gamma=1",
                "--alpha",
                "0.05",
                "--candidate",
                candidate,
            ])
            .output()
            .unwrap();
        assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
        String::from_utf8(out.stdout).unwrap()
    };
    assert!(run("A0").contains("verdict: included"));
    assert!(run("A1").contains("verdict: excluded"));
    assert!(run("0x1/2").contains("verdict: included"));

    let out = scs_bin()
        .args([
            "check",
            "--input",
            input.to_str().unwrap(),
            "--loss",
            "sharpe",
            "--candidate",
            "NOPE",
        ])
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(2));
}
