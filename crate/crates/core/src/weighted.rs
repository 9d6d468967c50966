//! Conservative Lasso: a first-step Lasso fit sets data-dependent penalty
//! weights `w_j = λ_prec / max(|β̂_j|, λ_prec)` for a second weighted fit.
//!
//! Coordinates the first step finds large get a lighter penalty; coordinates
//! it zeroes keep weight one rather than being dropped.

use ndarray::{Array1, Array2};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::solver::{fit_lasso, Fit, LassoProblem, SolverSettings};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WeightVector {
    pub w: Vec<f64>,
    pub lambda_prec: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConservativeFit {
    pub first_step: Fit,
    pub weights: WeightVector,
    pub second_step: Fit,
}

pub fn compute_weights(first_step_beta: &[f64], lambda_prec: f64) -> Result<WeightVector> {
    if !(lambda_prec > 0.0) || lambda_prec.is_nan() {
        return Err(Error::config(format!(
            "lambda_prec={lambda_prec} must be positive"
        )));
    }
    let w = first_step_beta
        .iter()
        .map(|b| {
            let w = lambda_prec / b.abs().max(lambda_prec);
            // Guard against underflow to zero for enormous first-step values.
            w.max(f64::MIN_POSITIVE)
        })
        .collect();
    Ok(WeightVector { w, lambda_prec })
}

/// Operational precision threshold: `multiplier · λ_n`.
pub fn lambda_prec_default(lambda_n: f64, multiplier: f64) -> Result<f64> {
    if !(lambda_n > 0.0) || !(multiplier > 0.0) {
        return Err(Error::config(format!(
            "lambda_n={lambda_n} and multiplier={multiplier} must be positive"
        )));
    }
    Ok(multiplier * lambda_n)
}

/// Theoretical threshold `‖Θ‖_∞ · λ_n · (3/2 + 24 t₁ s₀ / φ²)`, where `Θ` is
/// the precision matrix, `t₁` the sup-norm deviation rate of the sample Gram
/// matrix and `φ²` the population restricted eigenvalue.
///
/// Its inputs are unobservable in practice, so fits use
/// [`lambda_prec_default`]; this form is kept to calibrate the multiplier.
pub fn lambda_prec_theoretical(
    lambda_n: f64,
    precision_row_sum: f64,
    t1: f64,
    s0: usize,
    phi_sq: f64,
) -> f64 {
    precision_row_sum * (lambda_n / 2.0 + t1 * 24.0 * lambda_n * s0 as f64 / phi_sq + lambda_n)
}

/// Warm starts for the two steps of a conservative fit.
#[derive(Debug, Clone, Copy, Default)]
pub struct ConservativeInit<'a> {
    pub first_step: Option<&'a [f64]>,
    pub second_step: Option<&'a [f64]>,
}

pub fn fit_conservative(
    x: &Array2<f64>,
    y: &Array1<f64>,
    lambda_n: f64,
    lambda_prec: f64,
    settings: &SolverSettings,
) -> Result<ConservativeFit> {
    fit_conservative_warm(
        x,
        y,
        lambda_n,
        lambda_prec,
        ConservativeInit::default(),
        settings,
    )
}

pub fn fit_conservative_warm(
    x: &Array2<f64>,
    y: &Array1<f64>,
    lambda_n: f64,
    lambda_prec: f64,
    init: ConservativeInit<'_>,
    settings: &SolverSettings,
) -> Result<ConservativeFit> {
    if !(lambda_n > 0.0) {
        return Err(Error::config(format!(
            "lambda_n={lambda_n} must be positive"
        )));
    }
    let first_problem = LassoProblem::new(x, y, lambda_n)?;
    let first_step = fit_lasso(&first_problem, init.first_step, settings)?;
    let weights = compute_weights(&first_step.beta_hat, lambda_prec)?;
    let second_problem = LassoProblem::new(x, y, lambda_n)?.with_weights(weights.w.clone())?;
    let second_init = init.second_step.unwrap_or(&first_step.beta_hat);
    let second_step = fit_lasso(&second_problem, Some(second_init), settings)?;
    Ok(ConservativeFit {
        first_step,
        weights,
        second_step,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn weight_formula() {
        let w = compute_weights(&[0.0, 1.0, 0.2, -1.0, -3.0], 0.5).unwrap();
        assert_eq!(w.w, vec![1.0, 0.5, 1.0, 0.5, 0.5 / 3.0]);
        assert!(compute_weights(&[1.0], 0.0).is_err());
        assert!(compute_weights(&[1.0], -1.0).is_err());
    }

    #[test]
    fn weights_stay_in_unit_interval() {
        let w = compute_weights(&[1e300, -1e308, 0.0, 1e-300], 1e-300).unwrap();
        assert!(w.w.iter().all(|v| *v > 0.0 && *v <= 1.0));
    }

    #[test]
    fn default_lambda_prec() {
        assert_eq!(lambda_prec_default(1.09, 1.0).unwrap(), 1.09);
        assert!((lambda_prec_default(1.09, 2.0).unwrap() - 2.18).abs() < 1e-15);
        assert!(lambda_prec_default(0.0, 1.0).is_err());
    }

    #[test]
    fn theoretical_lambda_prec() {
        // Vanishing t1 leaves 1.5 λ_n.
        let ln = 1.0905398672436404;
        assert!((lambda_prec_theoretical(ln, 1.0, 0.0, 5, 1.0) - 1.5 * ln).abs() < 1e-15);
        // p = 100, n = 200: t1 = sqrt(ln p / n) ≈ 0.1517 gives ≈ 19.71 λ_n.
        let t1 = (100f64.ln() / 200.0).sqrt();
        let ratio = lambda_prec_theoretical(ln, 1.0, t1, 5, 1.0) / ln;
        assert!((ratio - 19.709125552621757).abs() < 1e-9);
    }
}
