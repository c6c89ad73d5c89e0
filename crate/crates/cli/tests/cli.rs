//! End-to-end tests of the command-line interface: exit-code contract,
//! output files, and byte-level reproducibility.

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn data(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR"))
        .join("../../data")
        .join(name)
}

fn run(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_calmech"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn tmp(name: &str) -> PathBuf {
    let dir = std::env::temp_dir().join(format!("calmech-cli-{name}-{}", std::process::id()));
    let _ = std::fs::remove_dir_all(&dir);
    dir
}

#[test]
fn validate_accepts_good_and_rejects_bad_documents() {
    let ok = run(&["validate", data("demand_sale.json").to_str().unwrap()]);
    assert!(ok.status.success());
    assert!(String::from_utf8_lossy(&ok.stdout).contains("validation: ok"));

    let dir = tmp("baddoc");
    std::fs::create_dir_all(&dir).unwrap();
    let bad = dir.join("bad.json");
    std::fs::write(
        &bad,
        r#"{"states": ["a"], "prior": [0.6, 0.6], "types": ["t"],
           "type_pmf": [[1.0]], "allocations": ["x"], "outside_option": 0,
           "agent_utility": [[[0.0]]], "designer_utility": [[[0.0]]]}"#,
    )
    .unwrap();
    let err = run(&["validate", bad.to_str().unwrap()]);
    assert_eq!(err.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&err.stderr).contains("prior"));
}

#[test]
fn solve_writes_all_outputs_and_is_reproducible() {
    let out1 = tmp("solve1");
    let status = run(&[
        "solve",
        data("demand_sale.json").to_str().unwrap(),
        "--grid",
        "25",
        "--out",
        out1.to_str().unwrap(),
    ]);
    assert!(status.status.success());
    for f in [
        "value_curve.csv",
        "envelope.csv",
        "split.json",
        "split.csv",
        "mechanisms.json",
        "summary.txt",
        "manifest.json",
    ] {
        assert!(out1.join(f).exists(), "missing {f}");
    }
    let summary = std::fs::read_to_string(out1.join("summary.txt")).unwrap();
    assert!(summary.contains("5.83333333333e-1"), "{summary}");

    let out2 = tmp("solve2");
    let status = run(&[
        "solve",
        data("demand_sale.json").to_str().unwrap(),
        "--grid",
        "25",
        "--out",
        out2.to_str().unwrap(),
    ]);
    assert!(status.status.success());
    let a = std::fs::read(out1.join("value_curve.csv")).unwrap();
    let b = std::fs::read(out2.join("value_curve.csv")).unwrap();
    assert_eq!(a, b, "value_curve.csv is not byte-reproducible");
    let a = std::fs::read(out1.join("envelope.csv")).unwrap();
    let b = std::fs::read(out2.join("envelope.csv")).unwrap();
    assert_eq!(a, b);
}

#[test]
fn audit_exit_codes_follow_the_contract() {
    let cases = [
        ("demand_sale_generic.json", "surplus_extraction_mechanism.json", 1),
        ("demand_sale_generic.json", "optimal_calibrated_mechanism.json", 0),
        ("horizontal_generic.json", "horizontal_myerson_mechanism.json", 1),
    ];
    for (problem, mech, expect) in cases {
        let out = tmp(&format!("audit-{mech}"));
        let result = run(&[
            "audit",
            data(problem).to_str().unwrap(),
            data(mech).to_str().unwrap(),
            "--out",
            out.to_str().unwrap(),
        ]);
        assert_eq!(result.status.code(), Some(expect), "case {mech}");
        assert!(out.join("structure.json").exists());
        assert!(out.join("audit.txt").exists());
    }
}

#[test]
fn audit_rejects_schema_mismatch_with_exit_2() {
    let out = tmp("audit-bad");
    // The table-2 file indexes 5 allocations; horizontal_generic has other
    // labels but the same width, so use a truncated file instead.
    let dir = tmp("badmech");
    std::fs::create_dir_all(&dir).unwrap();
    let bad = dir.join("bad.json");
    std::fs::write(&bad, r#"{"device": [], "table": []}"#).unwrap();
    let result = run(&[
        "audit",
        data("demand_sale_generic.json").to_str().unwrap(),
        bad.to_str().unwrap(),
        "--out",
        out.to_str().unwrap(),
    ]);
    assert_eq!(result.status.code(), Some(2));
}

#[test]
fn simulate_rejects_zero_horizon() {
    let out = tmp("simzero");
    let result = run(&[
        "simulate",
        data("demand_sale.json").to_str().unwrap(),
        data("surplus_extraction_mechanism.json").to_str().unwrap(),
        "--mode",
        "repeated",
        "--horizon",
        "0",
        "--out",
        out.to_str().unwrap(),
    ]);
    assert_eq!(result.status.code(), Some(2));
}

#[test]
fn simulate_repeated_runs_from_solve_output() {
    let solve_out = tmp("sim-solve");
    assert!(run(&[
        "solve",
        data("demand_sale.json").to_str().unwrap(),
        "--grid",
        "13",
        "--out",
        solve_out.to_str().unwrap(),
    ])
    .status
    .success());
    let sim_out = tmp("sim-run");
    let result = run(&[
        "simulate",
        data("demand_sale.json").to_str().unwrap(),
        solve_out.join("mechanisms.json").to_str().unwrap(),
        "--mode",
        "repeated",
        "--horizon",
        "20000",
        "--seed",
        "7",
        "--policy",
        "learning:50",
        "--out",
        sim_out.to_str().unwrap(),
    ]);
    assert!(result.status.success());
    for f in ["trace.log", "occupation.csv", "diagnostics.txt", "manifest.json"] {
        assert!(sim_out.join(f).exists(), "missing {f}");
    }
    let diag = std::fs::read_to_string(sim_out.join("diagnostics.txt")).unwrap();
    assert!(diag.contains("tv distance"));
}

#[test]
fn simulate_dynamic_truthful_and_deviator() {
    let solve_out = tmp("dyn-solve");
    assert!(run(&[
        "solve",
        data("demand_sale.json").to_str().unwrap(),
        "--grid",
        "13",
        "--out",
        solve_out.to_str().unwrap(),
    ])
    .status
    .success());
    for policy in ["truthful", "deviator"] {
        let sim_out = tmp(&format!("dyn-{policy}"));
        let result = run(&[
            "simulate",
            data("demand_sale.json").to_str().unwrap(),
            solve_out.join("mechanisms.json").to_str().unwrap(),
            "--mode",
            "dynamic",
            "--horizon",
            "20000",
            "--seed",
            "4",
            "--policy",
            policy,
            "--out",
            sim_out.to_str().unwrap(),
        ]);
        assert!(result.status.success(), "{policy}");
        assert!(sim_out.join("blocks.csv").exists());
        let diag = std::fs::read_to_string(sim_out.join("diagnostics.txt")).unwrap();
        assert!(diag.contains("report-frequency deviation"));
    }
}

#[test]
fn manifest_appends_across_runs() {
    let out = tmp("manifest");
    for _ in 0..2 {
        assert!(run(&[
            "solve",
            data("demand_sale.json").to_str().unwrap(),
            "--grid",
            "13",
            "--out",
            out.to_str().unwrap(),
        ])
        .status
        .success());
    }
    let manifest = std::fs::read_to_string(out.join("manifest.json")).unwrap();
    assert_eq!(manifest.lines().count(), 2);
    for line in manifest.lines() {
        let v: serde_json::Value = serde_json::from_str(line).unwrap();
        assert_eq!(v["command"], "solve");
        assert!(v["duration_secs"].as_f64().unwrap() >= 0.0);
    }
}
