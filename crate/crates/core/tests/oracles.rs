mod common;

use common::*;
use iclasso::datagen::{sample_dataset, sample_new_user, toeplitz_sigma, DataGenerator, DgpConfig};
use iclasso::linalg::cholesky_lower;
use iclasso::solver::{fit_lasso, LassoProblem, SolverSettings};
use iclasso::tuning::{build_grid, gic_select, Estimator, GicSettings};
use iclasso::weighted::fit_conservative;
use nalgebra::{DMatrix, SymmetricEigen};

#[test]
fn zero_lambda_matches_normal_equations() {
    let mut r = rng(11);
    for &(n, p) in &[(30, 3), (50, 8), (80, 20)] {
        let (x, y) = random_instance(&mut r, n, p);
        let fit = fit_lasso(
            &LassoProblem::new(&x, &y, 0.0).unwrap(),
            None,
            &SolverSettings::default(),
        )
        .unwrap();
        let ols = normal_equations(&x, &y);
        assert!(max_abs_diff(&fit.beta_hat, &ols) < 1e-6, "n={n} p={p}");
    }
}

#[test]
fn small_problems_match_grid_search() {
    let mut r = rng(12);
    for p in 1..=3 {
        let (x, y) = random_instance(&mut r, 25, p);
        for &lambda in &[0.05, 0.3, 1.0] {
            let fit = fit_lasso(
                &LassoProblem::new(&x, &y, lambda).unwrap(),
                None,
                &SolverSettings::default(),
            )
            .unwrap();
            let (_, oracle) = grid_search(&x, &y, lambda, &vec![1.0; p]);
            let ours = reference_objective(&x, &y, lambda, &vec![1.0; p], &fit.beta_hat);
            assert!(
                (ours - oracle).abs() < 1e-8,
                "p={p} λ={lambda}: {ours} vs {oracle}"
            );
        }
    }
}

#[test]
fn weighted_problem_matches_grid_search() {
    let mut r = rng(13);
    let (x, y) = random_instance(&mut r, 40, 3);
    let w = vec![0.2, 1.0, 0.6];
    let problem = LassoProblem::new(&x, &y, 0.4)
        .unwrap()
        .with_weights(w.clone())
        .unwrap();
    let fit = fit_lasso(&problem, None, &SolverSettings::default()).unwrap();
    let (_, oracle) = grid_search(&x, &y, 0.4, &w);
    assert!((reference_objective(&x, &y, 0.4, &w, &fit.beta_hat) - oracle).abs() < 1e-8);
}

#[test]
fn toeplitz_is_positive_definite() {
    let sigma = toeplitz_sigma(4, 0.5).unwrap();
    let m = DMatrix::from_fn(4, 4, |i, j| sigma[[i, j]]);
    let eig = SymmetricEigen::new(m);
    assert!(eig.eigenvalues.iter().all(|&v| v > 0.0));
    // Eigenvalues of an AR(1) Toeplitz matrix lie in ((1-ρ)/(1+ρ), (1+ρ)/(1-ρ)).
    assert!(eig.eigenvalues.iter().all(|&v| v > 1.0 / 3.0 && v < 3.0));
}

#[test]
fn cholesky_reconstructs_large_toeplitz() {
    let sigma = toeplitz_sigma(300, 0.5).unwrap();
    let l = cholesky_lower(&sigma).unwrap();
    let err = (&l.dot(&l.t()) - &sigma)
        .iter()
        .fold(0.0f64, |a, b| a.max(b.abs()));
    assert!(err <= 1e-10, "{err}");
}

#[test]
fn large_sample_correlation() {
    for &rho in &[0.0, 0.5] {
        let cfg = DgpConfig {
            rho,
            s0: 1,
            ..DgpConfig::new(2, 100_000, 5)
        };
        let d = sample_dataset(&cfg).unwrap();
        let (a, b) = (d.x.column(0), d.x.column(1));
        let n = a.len() as f64;
        let (ma, mb) = (a.sum() / n, b.sum() / n);
        let cov: f64 = a
            .iter()
            .zip(b.iter())
            .map(|(x, y)| (x - ma) * (y - mb))
            .sum::<f64>()
            / n;
        let va: f64 = a.iter().map(|x| (x - ma).powi(2)).sum::<f64>() / n;
        let vb: f64 = b.iter().map(|x| (x - mb).powi(2)).sum::<f64>() / n;
        let corr = cov / (va * vb).sqrt();
        assert!((corr - rho).abs() <= 0.02, "ρ={rho}: {corr}");
        assert!((va - 1.0).abs() < 0.02 && (vb - 1.0).abs() < 0.02);
    }
}

#[test]
fn response_reconstructs_from_parts() {
    let d = DataGenerator::new(DgpConfig::new(50, 40, 3))
        .unwrap()
        .sample(7);
    let fitted = d.x.dot(&d.beta0) + &d.u;
    let err = (&fitted - &d.y).iter().fold(0.0f64, |a, b| a.max(b.abs()));
    assert!(err <= 1e-12);
}

#[test]
fn new_user_has_t3_tails() {
    // Two-sided 5% critical value of t with 3 degrees of freedom.
    let user = sample_new_user(40_000, 3, 0.0, 8).unwrap();
    let frac = user
        .x_new
        .iter()
        .filter(|v| v.abs() > 3.182446305284263)
        .count() as f64
        / 40_000.0;
    assert!((frac - 0.05).abs() < 0.006, "{frac}");
    let median_abs = {
        let mut a: Vec<f64> = user.x_new.iter().map(|v| v.abs()).collect();
        a.sort_by(|x, y| x.partial_cmp(y).unwrap());
        a[a.len() / 2]
    };
    // Upper quartile of t3.
    assert!((median_abs - 0.7648923284).abs() < 0.03, "{median_abs}");
}

#[test]
fn gic_scores_recompute_from_fits() {
    let d = DataGenerator::new(DgpConfig::new(40, 60, 4))
        .unwrap()
        .sample(0);
    let grid = build_grid(40, 1.0 / 8.0, &[0.01, 1.0, 100.0]).unwrap();
    let settings = GicSettings::default();
    let sel = gic_select(&d.x, &d.y, &grid, Estimator::Lasso, &settings).unwrap();
    for s in &sel.scores {
        let fit = fit_lasso(
            &LassoProblem::new(&d.x, &d.y, s.lambda).unwrap(),
            None,
            &settings.solver,
        )
        .unwrap();
        let resid = &d.y - &d.x.dot(&ndarray::Array1::from(fit.beta_hat.clone()));
        let s2 = resid.mapv(|r| r * r).sum() / 60.0;
        let s_hat = fit.beta_hat.iter().filter(|b| b.abs() > 1e-10).count();
        let score = s2.ln() + s_hat as f64 / 60.0 * 60f64.ln() * 40f64.ln().ln();
        assert_eq!(s.s_hat, s_hat);
        assert!((s.score - score).abs() < 1e-7);
    }
    let best = sel
        .scores
        .iter()
        .map(|s| s.score)
        .fold(f64::INFINITY, f64::min);
    assert_eq!(sel.scores[sel.selected].score, best);
}

#[test]
fn conservative_second_step_matches_weighted_grid_search() {
    let mut r = rng(14);
    let (x, y) = random_instance(&mut r, 40, 3);
    let fit = fit_conservative(&x, &y, 0.3, 0.3, &SolverSettings::default()).unwrap();
    let (_, oracle) = grid_search(&x, &y, 0.3, &fit.weights.w);
    let ours = reference_objective(&x, &y, 0.3, &fit.weights.w, &fit.second_step.beta_hat);
    assert!((ours - oracle).abs() < 1e-8);
}
