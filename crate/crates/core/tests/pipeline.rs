//! End-to-end runs of the sweep harness on a low-noise benchmark, where both
//! set constructions admit a robust estimator.

use qmiset::experiment::{emit_results, run_experiment, ExperimentConfig, ExperimentRecord, Method, OutputFormat};

fn low_noise(tau0_grid: Vec<f64>, trials: usize) -> ExperimentConfig {
    ExperimentConfig {
        tau0_grid,
        trials,
        noise_bound: 0.05,
        record_wall_time: false,
        ..Default::default()
    }
}

fn find(records: &[ExperimentRecord], tau0: f64, method: Method, trial: u32) -> &ExperimentRecord {
    records
        .iter()
        .find(|r| r.tau0 == tau0 && r.method == method && r.trial == trial)
        .expect("cell present")
}

#[test]
fn consistent_set_is_never_more_conservative() {
    let cfg = ExperimentConfig {
        validation_samples: 10,
        ..low_noise(vec![0.0, 0.9], 2)
    };
    let out = run_experiment(&cfg, None).unwrap();
    assert!(out.all_ok(), "{:#?}", out.records);
    for &tau0 in &cfg.tau0_grid {
        for trial in 0..2 {
            let c = find(&out.records, tau0, Method::Consistent, trial);
            let s = find(&out.records, tau0, Method::Superset, trial);
            let (ec, es) = (c.epsilon.unwrap(), s.epsilon.unwrap());
            assert!(ec >= -1e-6, "robust bound below the true-plant bound: {ec}");
            assert!(ec <= es + 1e-6, "tau0 {tau0} trial {trial}: {ec} > {es}");
            if tau0 == 0.0 {
                // row-space noise: both sets coincide
                assert!((c.gamma.unwrap() - s.gamma.unwrap()).abs() < 1e-6);
            }
        }
    }
    let gain = find(&out.records, 0.9, Method::Superset, 0).epsilon.unwrap()
        - find(&out.records, 0.9, Method::Consistent, 0).epsilon.unwrap();
    assert!(gain > 1e-3, "kernel noise should tighten the consistent set, gain {gain}");
}

#[test]
fn output_does_not_depend_on_thread_count() {
    let cfg = low_noise(vec![0.9], 2);
    let csv = |threads| {
        let out = run_experiment(&cfg, Some(threads)).unwrap();
        let mut buf = Vec::new();
        emit_results(&out.records, OutputFormat::Csv, &mut buf).unwrap();
        buf
    };
    let one = csv(1);
    assert_eq!(one, csv(3));
    let text = String::from_utf8(one).unwrap();
    assert_eq!(text.lines().count(), 1 + 2 * 2);
    assert!(text.lines().skip(1).all(|l| l.ends_with(",ok,0.000")));
}

#[test]
fn json_records_round_trip() {
    let cfg = low_noise(vec![0.5], 1);
    let out = run_experiment(&cfg, Some(2)).unwrap();
    let mut buf = Vec::new();
    emit_results(&out.records, OutputFormat::Json, &mut buf).unwrap();
    let back: Vec<ExperimentRecord> = serde_json::from_slice(&buf).unwrap();
    assert_eq!(back, out.records);
    let v: serde_json::Value = serde_json::from_slice(&buf).unwrap();
    assert!(v[0].get("lambda_max_M_AB").is_some());
    assert_eq!(out.summary.len(), 2);
    assert!(out.summary.iter().all(|s| s.ok == 1 && s.failed == 0 && s.std_epsilon == Some(0.0)));
}

#[test]
fn infeasible_cells_are_reported_not_fatal() {
    // the unit-bound benchmark at tau0 = 0 admits no robust estimator
    let cfg = ExperimentConfig {
        tau0_grid: vec![0.0],
        trials: 1,
        methods: vec![Method::Superset],
        record_wall_time: false,
        ..Default::default()
    };
    let out = run_experiment(&cfg, None).unwrap();
    assert!(!out.all_ok());
    let r = &out.records[0];
    assert_eq!(r.status, "infeasible");
    assert!(r.gamma.is_none() && r.epsilon.is_none());
    assert!(r.diam_ab.unwrap() > 0.0);
    assert_eq!(out.summary[0].mean_epsilon, None);
}
