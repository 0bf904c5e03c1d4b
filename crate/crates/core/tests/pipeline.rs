use hypns::io::{self, RunOptions, RunStatus};

const RUN: &str = r#"{
    "model": {"tau1": 0.5, "tau3": 0.5, "kappa": 1, "lambda": 1, "mu": 0.2, "cv": 1, "r_gas": 1, "dim": 2},
    "grid": {"cells": [24, 24], "lower": [0, 0], "upper": [1, 1]},
    "solver": {"end_time": 0.05, "output_every": 2},
    "scenario": {"small_data": {"amplitude": 0.02}},
    "diagnostics": {"snapshot_every": 4, "entropy": true}
}"#;

#[test]
fn config_run_checkpoint_and_audit_agree() {
    let parsed = io::parse_config(RUN).unwrap();
    assert!(parsed.warnings.is_empty(), "{:?}", parsed.warnings);
    let dir = tempfile::tempdir().unwrap();
    let opts = RunOptions {
        out: dir.path().into(),
        ..Default::default()
    };
    let s = io::run(&parsed.config, &opts).unwrap();
    assert_eq!(s.status, RunStatus::Completed);
    assert!(s.drifts.max_relative < 1e-12, "{:?}", s.drifts);

    let (header, f) = io::read_field(&dir.path().join("checkpoint.bin")).unwrap();
    assert_eq!(header.kind, "checkpoint");
    assert_eq!(f.t, s.t_final);

    let rep = io::run_audit(dir.path(), &dir.path().join("audit")).unwrap();
    assert!(rep.snapshots >= 2);
    assert!(rep.audit.expect("entropy enabled").nonincreasing_up_to_residual);
    assert!(rep.drifts.max_relative < 1e-12);
}

#[test]
fn hypercheck_passes_for_a_viscous_model() {
    let model = io::parse_model(
        r#"{"tau1": 2, "tau3": 0.3, "kappa": 0.5, "lambda": 3, "mu": 0.7, "cv": 1.5, "r_gas": 0.4, "dim": 3}"#,
    )
    .unwrap();
    let survey = hypns::eigen::SurveyOptions {
        samples: 500,
        ..Default::default()
    };
    let dir = tempfile::tempdir().unwrap();
    let rep = io::run_hypercheck(&model, &survey, &Default::default(), dir.path()).unwrap();
    assert!(rep.passed);
    assert_eq!(std::fs::read_to_string(dir.path().join("hypercheck.jsonl")).unwrap().lines().count(), 2);
}
