//! Benchmark metrics, configuration handling, and a small end-to-end sweep.

mod common;

use nalgebra::DMatrix;
use polyrom::bench::{
    builtin_configs, measure_speedup, projection_error, rom_evaluation_error, run_experiment,
    state_prediction_error, summarize, ExperimentConfig, MetricsReport, RunStatus, KNOWN_METHODS,
};
use tempfile::tempdir;

fn small_config() -> ExperimentConfig {
    let mut config = builtin_configs("burgers-study").unwrap().remove(0);
    config.grid_points = 32;
    config.n_steps = 25;
    config.training_mu = vec![
        vec![1.0, 0.02],
        vec![1.0, 0.08],
        vec![3.0, 0.02],
        vec![3.0, 0.08],
    ];
    config.test_mu = vec![vec![2.0, 0.05]];
    config.eps_pod = vec![1e-2, 1e-4];
    config.eps_ecsw = vec![1e-4, 1e-8];
    config.ecsw_snapshots = 60;
    config.repeats = 1;
    config
}

#[test]
fn state_error_is_the_relative_squared_mismatch() {
    let reference = DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, 1.0]);
    let predicted = DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, 0.0]);
    let err = state_prediction_error(&reference, &predicted);
    assert!((err - 0.5).abs() < 1e-15, "hand value: 1/2, got {err}");
    assert_eq!(state_prediction_error(&reference, &reference), 0.0, "identical states");
}

#[test]
fn projection_error_bounds_hold_at_the_extremes() {
    let full = common::random_orthonormal(8, 8, 501);
    let phi = full.columns(0, 3).into_owned();

    // States inside the span project losslessly.
    let coeff = DMatrix::from_fn(3, 5, |r, c| ((r + c) as f64 * 0.31).sin());
    let inside = &phi * &coeff;
    let err_in = projection_error(&inside, &phi);
    assert!(err_in < 1e-12, "in-span projection error should vanish, got {err_in:.3e}");

    // States orthogonal to the span lose everything.
    let ortho = full.columns(3, 5).into_owned();
    let err_out = projection_error(&ortho, &phi);
    assert!(
        (err_out - 1.0).abs() < 1e-12,
        "orthogonal states lose all energy, got {err_out:.6}"
    );
}

#[test]
fn rom_eval_error_compares_against_the_reference_rom() {
    let a = DMatrix::from_element(3, 3, 1.0);
    let b = DMatrix::from_element(3, 3, 1.0);
    assert_eq!(rom_evaluation_error(&a, &b), 0.0, "identical reconstructions");
}

#[test]
fn speedup_measurement_reports_consistent_ratios() {
    let slow = || -> polyrom::Result<()> {
        std::thread::sleep(std::time::Duration::from_millis(8));
        Ok(())
    };
    let fast = || -> polyrom::Result<()> {
        std::thread::sleep(std::time::Duration::from_millis(1));
        Ok(())
    };
    let m = measure_speedup(slow, fast, 3).unwrap();
    assert_eq!(m.fom_seconds.len(), 3, "one FOM sample per repeat");
    assert_eq!(m.rom_seconds.len(), 3, "one ROM sample per repeat");
    assert!(m.speedup > 1.0, "slow/fast ratio must exceed 1, got {:.2}", m.speedup);
    let want = m.fom_mean / m.rom_mean;
    assert!((m.speedup - want).abs() < 1e-12, "speedup is the ratio of means");
}

#[test]
fn config_files_round_trip() {
    let dir = tempdir().unwrap();
    let path = dir.path().join("exp.toml");
    let config = small_config();
    config.save(&path).unwrap();
    let back = ExperimentConfig::load(&path).unwrap();
    assert_eq!(back.model, config.model, "model survives");
    assert_eq!(back.grid_points, config.grid_points, "grid survives");
    assert_eq!(back.training_mu, config.training_mu, "training set survives");
    assert_eq!(back.eps_pod, config.eps_pod, "tolerances survive");
    assert_eq!(back.methods, config.methods, "methods survive");
    assert_eq!(back.seed, config.seed, "seed survives");
}

#[test]
fn config_validation_rejects_bad_inputs() {
    let mut config = small_config();
    config.methods = vec!["warp-drive".into()];
    assert!(config.validate().is_err(), "unknown methods must be rejected");

    let mut config = small_config();
    config.training_mu.clear();
    assert!(config.validate().is_err(), "empty training sets must be rejected");

    let mut config = small_config();
    config.eps_pod.clear();
    assert!(config.validate().is_err(), "empty basis tolerance lists must be rejected");

    assert!(small_config().validate().is_ok(), "the template itself is valid");
}

#[test]
fn builtin_configs_cover_the_studies() {
    let burgers = builtin_configs("burgers-study").unwrap();
    assert_eq!(burgers.len(), 1, "one burgers sweep");
    assert_eq!(burgers[0].model, "burgers", "burgers model tag");
    assert_eq!(burgers[0].training_mu.len(), 100, "10x10 training grid");
    assert_eq!(burgers[0].test_mu.len(), 2, "two test parameters");
    for m in &burgers[0].methods {
        assert!(KNOWN_METHODS.contains(&m.as_str()), "unknown method {m} in builtin");
    }

    let heat = builtin_configs("heat-study").unwrap();
    assert_eq!(heat.len(), 2, "heat sweeps cover both model variants");
    assert_eq!(heat[0].model, "heat-cubic", "plain variant first");
    assert_eq!(heat[1].model, "heat-lifted", "lifted variant second");
    assert_eq!(heat[0].n_steps, 10_000, "full test horizon");
    assert_eq!(heat[0].n_steps_train, Some(2_000), "shorter training horizon");

    assert!(builtin_configs("nonexistent").is_none(), "unknown names yield nothing");
}

#[test]
fn csv_report_round_trips_including_failures() {
    let config = small_config();
    let mut report = run_experiment(&config).unwrap();
    // Inject a failure row so the error paths round-trip too.
    let mut failed = report.rows[0].clone();
    failed.method = "hrf-g".into();
    failed.status = RunStatus::Error("boom, with a comma".into());
    failed.state_error = None;
    report.rows.push(failed);

    let text = report.to_csv();
    let back = MetricsReport::from_csv(&text).unwrap();
    assert_eq!(back.rows.len(), report.rows.len(), "row count survives");
    for (a, b) in report.rows.iter().zip(&back.rows) {
        assert_eq!(a.model, b.model, "model field");
        assert_eq!(a.method, b.method, "method field");
        assert_eq!(a.mu, b.mu, "mu field");
        assert_eq!(a.eps_pod, b.eps_pod, "eps_pod field");
        assert_eq!(a.n_modes, b.n_modes, "mode count field");
        match (&a.state_error, &b.state_error) {
            (None, None) => {}
            (Some(x), Some(y)) => assert!(
                (x - y).abs() <= 1e-15 * x.abs().max(1.0),
                "state error drifted in CSV"
            ),
            _ => panic!("state error presence changed in CSV"),
        }
    }
    assert!(back.any_errors(), "the injected error row must be detected");
}

#[test]
fn small_sweep_satisfies_the_metric_invariants() {
    let config = small_config();
    let report = run_experiment(&config).unwrap();

    let expected_rows = config.test_mu.len()
        * (1 + config.eps_pod.len()
            * (4 + 2 * config.eps_ecsw.len()));
    assert_eq!(
        report.rows.len(),
        expected_rows,
        "row count: fom + per-eps methods for every test parameter"
    );
    assert!(!report.any_errors(), "small sweep must run clean");

    for row in &report.rows {
        if row.method == "fom" {
            assert!(row.speedup.is_none(), "the FOM has no speedup against itself");
            continue;
        }
        assert_eq!(row.status, RunStatus::Converged, "cell {} converged", row.method);
        let state = row.state_error.expect("state error present");
        let proj = row.projection_error.expect("projection error present");
        assert!(
            state >= proj - 1e-12,
            "optimality bound violated for {}: state {state:.3e} < projection {proj:.3e}",
            row.method
        );
        let online = row.online_seconds.expect("online time present");
        assert!(online > 0.0, "online time must be positive");
        if row.method.starts_with("hrf") || row.method.starts_with("ecsw") {
            let eval = row.rom_eval_error.expect("rom eval error present");
            assert!(eval >= 0.0, "rom eval error is nonnegative");
        }
    }

    // HRF rows must agree with their reference ROMs to near machine precision.
    for row in &report.rows {
        if row.method.starts_with("hrf") {
            let eval = row.rom_eval_error.unwrap();
            assert!(
                eval < 1e-20,
                "{} deviates from its reference: {eval:.3e}",
                row.method
            );
        }
    }
}

#[test]
fn emit_results_writes_the_report_bundle() {
    let config = small_config();
    let report = run_experiment(&config).unwrap();
    let dir = tempdir().unwrap();
    polyrom::bench::emit_results(&report, dir.path()).unwrap();
    for name in [
        "report.csv",
        "error_vs_eps_pod.csv",
        "speedup.csv",
        "samples_vs_eps_ecsw.csv",
        "error_vs_speedup.csv",
        "summary.txt",
    ] {
        assert!(dir.path().join(name).exists(), "missing output file {name}");
    }
    let summary = summarize(&report);
    assert!(summary.contains("burgers"), "summary names the model");
    assert!(summary.contains("hrf-g"), "summary lists the methods");
}
