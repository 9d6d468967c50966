//! Cyclic coordinate descent for the (optionally weighted) Lasso
//!
//! ```text
//! minimize (1/n)‖y − Xβ‖² + 2λ Σ_j w_j |β_j|
//! ```
//!
//! together with a KKT certificate for any candidate β.

use std::borrow::Cow;

use ndarray::{Array1, Array2, ShapeBuilder};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::dot;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SolverSettings {
    /// Stop once a full sweep moves no coordinate by more than this.
    pub tol: f64,
    pub max_sweeps: usize,
    pub kkt_tol: f64,
    /// Coefficients with magnitude at or below this are outside the support.
    pub support_tol: f64,
    /// Penalize each coefficient in proportion to its column's root mean
    /// square, which is the same as fitting on unit-scale columns.
    pub standardize: bool,
    /// Keep the objective value after every sweep in [`Fit::trace`].
    pub record_trace: bool,
}

impl Default for SolverSettings {
    fn default() -> Self {
        SolverSettings {
            tol: 1e-8,
            max_sweeps: 10_000,
            kkt_tol: 1e-6,
            support_tol: 1e-10,
            standardize: false,
            record_trace: false,
        }
    }
}

impl SolverSettings {
    fn validate(&self) -> Result<()> {
        if !(self.tol > 0.0) {
            return Err(Error::config("solver tol must be positive"));
        }
        if self.max_sweeps == 0 {
            return Err(Error::config("max_sweeps must be positive"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct LassoProblem<'a> {
    pub x: &'a Array2<f64>,
    pub y: &'a Array1<f64>,
    pub lambda: f64,
    /// Per-coordinate penalty weights in (0, 1]; `None` means all ones.
    pub weights: Option<Vec<f64>>,
}

impl<'a> LassoProblem<'a> {
    pub fn new(x: &'a Array2<f64>, y: &'a Array1<f64>, lambda: f64) -> Result<Self> {
        let problem = LassoProblem {
            x,
            y,
            lambda,
            weights: None,
        };
        problem.validate()?;
        Ok(problem)
    }

    pub fn with_weights(mut self, weights: Vec<f64>) -> Result<Self> {
        self.weights = Some(weights);
        self.validate()?;
        Ok(self)
    }

    pub fn n(&self) -> usize {
        self.x.nrows()
    }

    pub fn p(&self) -> usize {
        self.x.ncols()
    }

    pub fn validate(&self) -> Result<()> {
        if self.x.nrows() != self.y.len() {
            return Err(Error::DimensionMismatch(format!(
                "x has {} rows but y has {} entries",
                self.x.nrows(),
                self.y.len()
            )));
        }
        if self.x.nrows() == 0 || self.x.ncols() == 0 {
            return Err(Error::config("empty design matrix"));
        }
        if !(self.lambda >= 0.0) || !self.lambda.is_finite() {
            return Err(Error::config(format!(
                "lambda={} must be finite and nonnegative",
                self.lambda
            )));
        }
        if let Some(w) = &self.weights {
            if w.len() != self.p() {
                return Err(Error::DimensionMismatch(format!(
                    "{} weights for {} columns",
                    w.len(),
                    self.p()
                )));
            }
            if let Some(bad) = w.iter().find(|v| !(**v > 0.0 && **v <= 1.0)) {
                return Err(Error::config(format!(
                    "penalty weight {bad} outside (0, 1]"
                )));
            }
        }
        if self.x.iter().chain(self.y.iter()).any(|v| !v.is_finite()) {
            return Err(Error::Numeric("non-finite entry in x or y".into()));
        }
        Ok(())
    }

    fn unit_or_weights(&self) -> Vec<f64> {
        self.weights.clone().unwrap_or_else(|| vec![1.0; self.p()])
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Fit {
    pub beta_hat: Vec<f64>,
    pub lambda: f64,
    pub support: Vec<usize>,
    pub objective: f64,
    pub sweeps: usize,
    pub converged: bool,
    pub kkt_violation: f64,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub trace: Vec<f64>,
}

impl Fit {
    pub fn nonzero_count(&self) -> usize {
        self.support.len()
    }
}

/// `sign(z) · max(|z| − gamma, 0)`.
#[inline]
pub fn soft_threshold(z: f64, gamma: f64) -> f64 {
    debug_assert!(gamma >= 0.0);
    if z > gamma {
        z - gamma
    } else if z < -gamma {
        z + gamma
    } else {
        0.0
    }
}

pub fn predict(beta: &[f64], x: &[f64]) -> Result<f64> {
    if beta.len() != x.len() {
        return Err(Error::DimensionMismatch(format!(
            "beta has {} entries, x has {}",
            beta.len(),
            x.len()
        )));
    }
    Ok(dot(beta, x))
}

fn column_major(x: &Array2<f64>) -> Cow<'_, Array2<f64>> {
    if x.t().is_standard_layout() {
        Cow::Borrowed(x)
    } else {
        let mut copy = Array2::zeros(x.dim().f());
        copy.assign(x);
        Cow::Owned(copy)
    }
}

fn col(x: &Array2<f64>, j: usize) -> &[f64] {
    x.column(j)
        .to_slice()
        .expect("column-major layout gives contiguous columns")
}

fn residual(x: &Array2<f64>, y: &Array1<f64>, beta: &[f64]) -> Vec<f64> {
    let mut r = y.to_vec();
    for (j, &b) in beta.iter().enumerate() {
        if b != 0.0 {
            for (ri, xij) in r.iter_mut().zip(col(x, j)) {
                *ri -= b * xij;
            }
        }
    }
    r
}

fn objective_from_residual(r: &[f64], lambda: f64, penalty: &[f64], beta: &[f64]) -> f64 {
    let n = r.len() as f64;
    let loss = dot(r, r) / n;
    let pen: f64 = penalty.iter().zip(beta).map(|(w, b)| w * b.abs()).sum();
    loss + 2.0 * lambda * pen
}

fn kkt_from_residual(
    x: &Array2<f64>,
    r: &[f64],
    lambda: f64,
    penalty: &[f64],
    beta: &[f64],
) -> f64 {
    let n = r.len() as f64;
    let mut worst: f64 = 0.0;
    for (j, &b) in beta.iter().enumerate() {
        let g = dot(col(x, j), r) / n;
        let bound = lambda * penalty[j];
        let v = if b != 0.0 {
            (g - bound * b.signum()).abs()
        } else {
            (g.abs() - bound).max(0.0)
        };
        worst = worst.max(v);
    }
    worst
}

/// `(1/n)‖y − Xβ‖² + 2λ Σ w_j|β_j|` for the problem's own weights.
pub fn objective(problem: &LassoProblem<'_>, beta: &[f64]) -> Result<f64> {
    if beta.len() != problem.p() {
        return Err(Error::DimensionMismatch("beta length".into()));
    }
    let x = column_major(problem.x);
    let r = residual(&x, problem.y, beta);
    Ok(objective_from_residual(
        &r,
        problem.lambda,
        &problem.unit_or_weights(),
        beta,
    ))
}

/// Largest violation of the Lasso optimality conditions at `beta`.
///
/// With `g_j = X_jᵀ(y − Xβ)/n`, active coordinates must have
/// `g_j = λ w_j sign(β_j)` and inactive ones `|g_j| ≤ λ w_j`.
pub fn check_kkt(problem: &LassoProblem<'_>, beta: &[f64]) -> Result<f64> {
    if beta.len() != problem.p() {
        return Err(Error::DimensionMismatch(format!(
            "beta has {} entries for {} columns",
            beta.len(),
            problem.p()
        )));
    }
    let x = column_major(problem.x);
    let r = residual(&x, problem.y, beta);
    Ok(kkt_from_residual(
        &x,
        &r,
        problem.lambda,
        &problem.unit_or_weights(),
        beta,
    ))
}

/// Effective per-coordinate penalty factors, including standardization.
fn penalty_factors(
    problem: &LassoProblem<'_>,
    col_sq: &[f64],
    settings: &SolverSettings,
) -> Vec<f64> {
    let mut pf = problem.unit_or_weights();
    if settings.standardize {
        for (w, a) in pf.iter_mut().zip(col_sq) {
            *w *= a.sqrt();
        }
    }
    pf
}

pub fn fit_lasso(
    problem: &LassoProblem<'_>,
    init: Option<&[f64]>,
    settings: &SolverSettings,
) -> Result<Fit> {
    problem.validate()?;
    settings.validate()?;
    let n = problem.n();
    let p = problem.p();
    let nf = n as f64;
    let lambda = problem.lambda;
    let x = column_major(problem.x);

    let col_sq: Vec<f64> = (0..p).map(|j| dot(col(&x, j), col(&x, j)) / nf).collect();
    if lambda == 0.0 {
        if let Some(j) = col_sq.iter().position(|a| *a == 0.0) {
            return Err(Error::DegenerateColumn { column: j });
        }
    }
    let penalty = penalty_factors(problem, &col_sq, settings);
    let thresholds: Vec<f64> = penalty.iter().map(|w| lambda * w).collect();

    let mut beta = match init {
        Some(b) if b.len() != p => {
            return Err(Error::DimensionMismatch(format!(
                "warm start has {} entries for {} columns",
                b.len(),
                p
            )))
        }
        Some(b) => b.to_vec(),
        None => vec![0.0; p],
    };
    for (j, b) in beta.iter_mut().enumerate() {
        if col_sq[j] == 0.0 {
            *b = 0.0;
        }
    }
    let mut r = residual(&x, problem.y, &beta);
    let mut trace = Vec::new();

    let update = |j: usize, beta: &mut [f64], r: &mut [f64]| -> Result<f64> {
        let a = col_sq[j];
        if a == 0.0 {
            return Ok(0.0);
        }
        let xj = col(&x, j);
        let old = beta[j];
        let c = dot(xj, r) / nf + a * old;
        let new = soft_threshold(c, thresholds[j]) / a;
        if !new.is_finite() {
            return Err(Error::Numeric(format!("coordinate {j} became non-finite")));
        }
        let delta = new - old;
        if delta != 0.0 {
            for (ri, xij) in r.iter_mut().zip(xj) {
                *ri -= delta * xij;
            }
            beta[j] = new;
        }
        Ok(delta.abs())
    };

    let mut sweeps = 0usize;
    let mut converged = false;
    let mut active: Vec<usize> = Vec::with_capacity(p);
    while sweeps < settings.max_sweeps {
        let mut max_change: f64 = 0.0;
        for j in 0..p {
            max_change = max_change.max(update(j, &mut beta, &mut r)?);
        }
        sweeps += 1;
        if settings.record_trace {
            trace.push(objective_from_residual(&r, lambda, &penalty, &beta));
        }
        if max_change <= settings.tol {
            converged = true;
            break;
        }

        // Cycle on the current support until it settles, then re-check all.
        active.clear();
        active.extend((0..p).filter(|&j| beta[j] != 0.0));
        while sweeps < settings.max_sweeps {
            let mut inner_change: f64 = 0.0;
            for &j in &active {
                inner_change = inner_change.max(update(j, &mut beta, &mut r)?);
            }
            sweeps += 1;
            if settings.record_trace {
                trace.push(objective_from_residual(&r, lambda, &penalty, &beta));
            }
            if inner_change <= settings.tol {
                break;
            }
        }
    }

    let r = residual(&x, problem.y, &beta);
    let objective = objective_from_residual(&r, lambda, &penalty, &beta);
    if !objective.is_finite() {
        return Err(Error::Numeric("objective is not finite".into()));
    }
    let kkt_violation = kkt_from_residual(&x, &r, lambda, &penalty, &beta);
    let support = (0..p)
        .filter(|&j| beta[j].abs() > settings.support_tol)
        .collect();
    if converged && kkt_violation > settings.kkt_tol {
        log::debug!(
            "coordinate descent met tol={} but KKT violation is {kkt_violation:e}",
            settings.tol
        );
        converged = false;
    }
    Ok(Fit {
        beta_hat: beta,
        lambda,
        support,
        objective,
        sweeps,
        converged,
        kkt_violation,
        trace,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn soft_threshold_cases() {
        assert_eq!(soft_threshold(0.5, 1.0), 0.0);
        assert_eq!(soft_threshold(2.0, 1.0), 1.0);
        assert_eq!(soft_threshold(-2.0, 1.0), -1.0);
        assert_eq!(soft_threshold(1.0, 1.0), 0.0);
        assert_eq!(soft_threshold(3.0, 0.0), 3.0);
    }

    #[test]
    fn predict_cases() {
        assert_eq!(predict(&[0.0; 4], &[1.0, 2.0, 3.0, 4.0]).unwrap(), 0.0);
        assert_eq!(predict(&[1.0, 0.0, 0.0], &[3.0, 7.0, -1.0]).unwrap(), 3.0);
        let beta = crate::datagen::build_beta0(10, 5).unwrap();
        assert_eq!(predict(beta.as_slice().unwrap(), &[1.0; 10]).unwrap(), 5.0);
        assert!(predict(&[1.0], &[1.0, 2.0]).is_err());
    }

    fn small() -> (Array2<f64>, Array1<f64>) {
        let x = array![
            [1.0, 0.2, -0.5],
            [0.3, 1.1, 0.4],
            [-0.7, 0.5, 1.3],
            [0.9, -1.2, 0.1],
            [0.0, 0.4, -0.8]
        ];
        let y = array![1.2, 0.7, -0.4, 2.0, -0.3];
        (x, y)
    }

    #[test]
    fn zero_above_lambda_max() {
        let (x, y) = small();
        let n = x.nrows() as f64;
        let lmax = x
            .t()
            .dot(&y)
            .mapv(|v| (v / n).abs())
            .fold(0.0f64, |a, b| a.max(*b));
        let prob = LassoProblem::new(&x, &y, lmax).unwrap();
        let fit = fit_lasso(&prob, None, &SolverSettings::default()).unwrap();
        assert!(fit.beta_hat.iter().all(|b| *b == 0.0));
        assert!(fit.support.is_empty());
        assert_eq!(check_kkt(&prob, &[0.0; 3]).unwrap(), 0.0);

        let doubled = LassoProblem::new(&x, &y, 2.0 * lmax).unwrap();
        let fit = fit_lasso(&doubled, None, &SolverSettings::default()).unwrap();
        assert!(fit.beta_hat.iter().all(|b| *b == 0.0));
    }

    #[test]
    fn perturbed_optimum_violates_kkt() {
        let (x, y) = small();
        let prob = LassoProblem::new(&x, &y, 0.05).unwrap();
        let settings = SolverSettings {
            tol: 1e-12,
            ..Default::default()
        };
        let fit = fit_lasso(&prob, None, &settings).unwrap();
        assert!(fit.converged);
        assert!(fit.kkt_violation <= 1e-9);
        let j = fit.support[0];
        let mut moved = fit.beta_hat.clone();
        moved[j] += 0.1;
        assert!(check_kkt(&prob, &moved).unwrap() > 0.0);
    }

    #[test]
    fn objective_matches_recomputation() {
        let (x, y) = small();
        let prob = LassoProblem::new(&x, &y, 0.1)
            .unwrap()
            .with_weights(vec![1.0, 0.5, 0.25])
            .unwrap();
        let fit = fit_lasso(&prob, None, &SolverSettings::default()).unwrap();
        let again = objective(&prob, &fit.beta_hat).unwrap();
        assert!((fit.objective - again).abs() <= 1e-10);
    }

    #[test]
    fn degenerate_column_at_zero_lambda() {
        let x = array![[1.0, 0.0], [2.0, 0.0], [0.5, 0.0]];
        let y = array![1.0, 2.0, 3.0];
        let prob = LassoProblem::new(&x, &y, 0.0).unwrap();
        assert!(matches!(
            fit_lasso(&prob, None, &SolverSettings::default()),
            Err(Error::DegenerateColumn { column: 1 })
        ));
        let prob = LassoProblem::new(&x, &y, 0.1).unwrap();
        let fit = fit_lasso(&prob, None, &SolverSettings::default()).unwrap();
        assert_eq!(fit.beta_hat[1], 0.0);
    }

    #[test]
    fn rejects_bad_inputs() {
        let (x, y) = small();
        assert!(LassoProblem::new(&x, &y, -1.0).is_err());
        assert!(LassoProblem::new(&x, &y, 0.1)
            .unwrap()
            .with_weights(vec![1.0, 0.0, 1.0])
            .is_err());
        assert!(LassoProblem::new(&x, &y, 0.1)
            .unwrap()
            .with_weights(vec![1.0, 1.5, 1.0])
            .is_err());
        let y_short = array![1.0, 2.0];
        assert!(LassoProblem::new(&x, &y_short, 0.1).is_err());
        let mut y_nan = y.clone();
        y_nan[0] = f64::NAN;
        assert!(LassoProblem::new(&x, &y_nan, 0.1).is_err());
        let prob = LassoProblem::new(&x, &y, 0.1).unwrap();
        let bad = SolverSettings {
            tol: 0.0,
            ..Default::default()
        };
        assert!(fit_lasso(&prob, None, &bad).is_err());
    }

    #[test]
    fn row_major_input_gives_same_fit() {
        let (x, y) = small();
        assert!(x.is_standard_layout());
        let mut xf = Array2::zeros(x.dim().f());
        xf.assign(&x);
        let s = SolverSettings::default();
        let a = fit_lasso(&LassoProblem::new(&x, &y, 0.05).unwrap(), None, &s).unwrap();
        let b = fit_lasso(&LassoProblem::new(&xf, &y, 0.05).unwrap(), None, &s).unwrap();
        assert_eq!(a.beta_hat, b.beta_hat);
    }

    #[test]
    fn standardize_equals_rescaled_columns() {
        let (x, y) = small();
        let n = x.nrows() as f64;
        let scales: Vec<f64> = x
            .columns()
            .into_iter()
            .map(|c| (c.dot(&c) / n).sqrt())
            .collect();
        let mut xs = x.clone();
        for (j, mut c) in xs.columns_mut().into_iter().enumerate() {
            c.mapv_inplace(|v| v / scales[j]);
        }
        let tight = SolverSettings {
            tol: 1e-13,
            ..Default::default()
        };
        let std_settings = SolverSettings {
            standardize: true,
            ..tight
        };
        let a = fit_lasso(
            &LassoProblem::new(&x, &y, 0.08).unwrap(),
            None,
            &std_settings,
        )
        .unwrap();
        let b = fit_lasso(&LassoProblem::new(&xs, &y, 0.08).unwrap(), None, &tight).unwrap();
        for j in 0..3 {
            assert!((a.beta_hat[j] * scales[j] - b.beta_hat[j]).abs() < 1e-9);
        }
    }
}
