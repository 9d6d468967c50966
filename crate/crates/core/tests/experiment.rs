use iclasso::datagen::{read_csv, write_csv, DataGenerator, DgpConfig};
use iclasso::diagnostics::{estimate_exception_probability, DiagnosticsSettings};
use iclasso::experiment::{emit_table, run_experiment, ExperimentConfig, OutputFormat};
use iclasso::tuning::Estimator;

fn small() -> ExperimentConfig {
    ExperimentConfig {
        p_values: vec![40, 80],
        n_values: vec![50],
        lies: vec![2.0, 0.2, 0.0],
        iterations: 15,
        master_seed: 21,
        ..ExperimentConfig::default()
    }
}

#[test]
fn cell_identity_holds() {
    let out = run_experiment(&small()).unwrap();
    assert_eq!(out.cells.len(), 2 * 2 * 3);
    for c in &out.cells {
        let gap = c.report_mse - c.truth_mse - (c.quad + c.cross1 + c.cross2);
        assert!(gap.abs() <= 1e-8, "{c:?}");
        assert!(c.truth_mse >= 0.0 && c.report_mse >= 0.0 && c.lambda_used > 0.0);
    }
}

#[test]
fn quad_term_scales_by_hundred() {
    let out = run_experiment(&small()).unwrap();
    for big in out.cells.iter().filter(|c| c.lie == 2.0) {
        let tiny = out
            .cells
            .iter()
            .find(|c| c.lie == 0.2 && c.estimator == big.estimator && c.p == big.p && c.n == big.n)
            .unwrap();
        assert!((big.quad / tiny.quad - 100.0).abs() < 1e-9);
        assert_eq!(big.truth_mse, tiny.truth_mse);
        assert_eq!(big.lambda_used, tiny.lambda_used);
    }
}

#[test]
fn estimators_share_data_and_user() {
    // Unit weights make the conservative fit a Lasso fit on the same data, so
    // identical cells show both estimators consumed identical draws.
    let cfg = ExperimentConfig {
        lambda_prec_multiplier: 1e12,
        exponent: Some(1.0 / 8.0),
        ..small()
    };
    let out = run_experiment(&cfg).unwrap();
    for l in out.cells.iter().filter(|c| c.estimator == Estimator::Lasso) {
        let c = out
            .cells
            .iter()
            .find(|c| {
                c.estimator == Estimator::Conservative && c.p == l.p && c.n == l.n && c.lie == l.lie
            })
            .unwrap();
        assert!((l.truth_mse - c.truth_mse).abs() < 1e-9);
        assert!((l.report_mse - c.report_mse).abs() < 1e-9);
        assert_eq!(l.lambda_used, c.lambda_used);
    }
}

#[test]
fn output_independent_of_thread_count() {
    let run = |threads| {
        rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build()
            .unwrap()
            .install(|| {
                emit_table(&run_experiment(&small()).unwrap().cells, OutputFormat::Csv).unwrap()
            })
    };
    assert_eq!(run(1), run(3));
}

#[test]
fn seeds_change_results() {
    let a = run_experiment(&small()).unwrap();
    let b = run_experiment(&ExperimentConfig {
        master_seed: 22,
        ..small()
    })
    .unwrap();
    assert_ne!(a.cells[0].truth_mse, b.cells[0].truth_mse);
}

#[test]
fn exception_probability_falls_with_lambda() {
    let dgp = DgpConfig::new(60, 40, 3);
    let settings = DiagnosticsSettings {
        cone_samples: 200,
        ..DiagnosticsSettings::default()
    };
    let probs: Vec<f64> = [0.3, 0.4, 0.5, 0.7, 1.0]
        .iter()
        .map(|&l| estimate_exception_probability(&dgp, l, 150, 3, &settings).unwrap())
        .collect();
    assert!(probs.windows(2).all(|w| w[1] <= w[0]), "{probs:?}");
    assert!(probs[0] > probs[4], "{probs:?}");
}

#[test]
fn csv_round_trip_through_file() {
    let d = DataGenerator::new(DgpConfig::new(7, 9, 2))
        .unwrap()
        .sample(0);
    let mut file = tempfile::NamedTempFile::new().unwrap();
    write_csv(&d.x, &d.y, &mut file).unwrap();
    let back = read_csv(std::fs::File::open(file.path()).unwrap()).unwrap();
    assert_eq!(back.x, d.x);
    assert_eq!(back.y, d.y);
}
