//! Tuning-parameter grid and GIC selection.
//!
//! Candidates take the form `λ = (2 + C₂ / (ln p)²)^e`, which keeps every
//! candidate above `2^e > 1`, with `e = 1/8` for the Lasso and `e = 1/12`
//! for the Conservative Lasso. Only `C₂` is chosen from data, by minimizing
//!
//! ```text
//! GIC(λ) = ln σ̂²(λ) + ŝ(λ)/n · ln(n) · ln(ln p)
//! ```

use std::fmt;
use std::io::Write;
use std::str::FromStr;

use ndarray::{Array1, Array2};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::solver::{fit_lasso, LassoProblem, SolverSettings};
use crate::weighted::{fit_conservative_warm, lambda_prec_default, ConservativeInit};

pub const DEFAULT_C2_VALUES: [f64; 7] = [0.01, 0.1, 0.5, 1.0, 2.0, 10.0, 100.0];
pub const LASSO_EXPONENT: f64 = 1.0 / 8.0;
pub const CONSERVATIVE_EXPONENT: f64 = 1.0 / 12.0;
pub const SIGMA_SQ_FLOOR: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Estimator {
    Lasso,
    Conservative,
}

impl Estimator {
    /// Grid exponent tied to this estimator's incentive-compatibility bound.
    pub fn default_exponent(self) -> f64 {
        match self {
            Estimator::Lasso => LASSO_EXPONENT,
            Estimator::Conservative => CONSERVATIVE_EXPONENT,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Estimator::Lasso => "lasso",
            Estimator::Conservative => "conservative",
        }
    }
}

impl fmt::Display for Estimator {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Estimator {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "lasso" => Ok(Estimator::Lasso),
            "conservative" | "conservative_lasso" | "conservative-lasso" => {
                Ok(Estimator::Conservative)
            }
            other => Err(Error::config(format!("unknown estimator `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TuningGrid {
    pub c2_values: Vec<f64>,
    pub exponent: f64,
    pub p: usize,
    pub lambdas: Vec<f64>,
}

impl TuningGrid {
    pub fn len(&self) -> usize {
        self.lambdas.len()
    }

    pub fn is_empty(&self) -> bool {
        self.lambdas.is_empty()
    }
}

pub fn grid_lambda(p: usize, exponent: f64, c2: f64) -> f64 {
    let lp = (p as f64).ln();
    (2.0 + c2 / (lp * lp)).powf(exponent)
}

pub fn build_grid(p: usize, exponent: f64, c2_values: &[f64]) -> Result<TuningGrid> {
    if p < 3 {
        return Err(Error::config(format!(
            "p={p} is too small for the grid; ln(ln p) needs p >= 3"
        )));
    }
    if !(exponent > 0.0) || !exponent.is_finite() {
        return Err(Error::config(format!(
            "exponent={exponent} must be positive"
        )));
    }
    if c2_values.is_empty() {
        return Err(Error::config("C2 grid is empty"));
    }
    if let Some(bad) = c2_values.iter().find(|c| !(**c > 0.0) || !c.is_finite()) {
        return Err(Error::config(format!("C2 value {bad} must be positive")));
    }
    Ok(TuningGrid {
        c2_values: c2_values.to_vec(),
        exponent,
        p,
        lambdas: c2_values
            .iter()
            .map(|&c| grid_lambda(p, exponent, c))
            .collect(),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GicScore {
    pub c2: f64,
    pub lambda: f64,
    pub sigma_hat_sq: f64,
    pub s_hat: usize,
    pub score: f64,
    /// Residuals vanished and the floor was used in the logarithm.
    pub degenerate: bool,
}

/// GIC value; returns the score and whether the residual floor applied.
pub fn gic_value(sigma_hat_sq: f64, s_hat: usize, n: usize, p: usize) -> (f64, bool) {
    let degenerate = sigma_hat_sq < SIGMA_SQ_FLOOR;
    let s2 = sigma_hat_sq.max(SIGMA_SQ_FLOOR);
    let nf = n as f64;
    let score = s2.ln() + (s_hat as f64 / nf) * nf.ln() * (p as f64).ln().ln();
    (score, degenerate)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GicSettings {
    pub solver: SolverSettings,
    /// `λ_prec = multiplier · λ` for conservative fits.
    pub lambda_prec_multiplier: f64,
    /// Warm-start each fit from the previous (larger) λ on the path.
    pub warm_start: bool,
}

impl Default for GicSettings {
    fn default() -> Self {
        GicSettings {
            solver: SolverSettings::default(),
            lambda_prec_multiplier: 1.0,
            warm_start: true,
        }
    }
}

/// Coefficients of one estimator fit, with the first step kept for warm starts.
#[derive(Debug, Clone, PartialEq)]
pub struct EstimatorFit {
    pub beta_hat: Vec<f64>,
    pub first_step: Option<Vec<f64>>,
    pub objective: f64,
    pub kkt_violation: f64,
    pub converged: bool,
}

pub fn fit_estimator(
    x: &Array2<f64>,
    y: &Array1<f64>,
    estimator: Estimator,
    lambda: f64,
    settings: &GicSettings,
    warm: Option<&EstimatorFit>,
) -> Result<EstimatorFit> {
    match estimator {
        Estimator::Lasso => {
            let problem = LassoProblem::new(x, y, lambda)?;
            let fit = fit_lasso(
                &problem,
                warm.map(|w| w.beta_hat.as_slice()),
                &settings.solver,
            )?;
            Ok(EstimatorFit {
                beta_hat: fit.beta_hat,
                first_step: None,
                objective: fit.objective,
                kkt_violation: fit.kkt_violation,
                converged: fit.converged,
            })
        }
        Estimator::Conservative => {
            let lambda_prec = lambda_prec_default(lambda, settings.lambda_prec_multiplier)?;
            let init = ConservativeInit {
                first_step: warm.and_then(|w| w.first_step.as_deref()),
                second_step: warm.map(|w| w.beta_hat.as_slice()),
            };
            let fit = fit_conservative_warm(x, y, lambda, lambda_prec, init, &settings.solver)?;
            Ok(EstimatorFit {
                objective: fit.second_step.objective,
                kkt_violation: fit.second_step.kkt_violation,
                converged: fit.first_step.converged && fit.second_step.converged,
                beta_hat: fit.second_step.beta_hat,
                first_step: Some(fit.first_step.beta_hat),
            })
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GicSelection {
    pub lambda_star: f64,
    /// Index of the selected candidate in grid order.
    pub selected: usize,
    /// One score per grid entry, in grid order.
    pub scores: Vec<GicScore>,
    pub fit: EstimatorFit,
}

pub fn gic_select(
    x: &Array2<f64>,
    y: &Array1<f64>,
    grid: &TuningGrid,
    estimator: Estimator,
    settings: &GicSettings,
) -> Result<GicSelection> {
    if grid.is_empty() {
        return Err(Error::config("tuning grid is empty"));
    }
    let n = x.nrows();
    if n != y.len() {
        return Err(Error::DimensionMismatch(format!(
            "x has {} rows but y has {} entries",
            n,
            y.len()
        )));
    }
    let p = x.ncols();
    if p < 3 {
        return Err(Error::config("GIC needs p >= 3"));
    }
    let support_tol = settings.solver.support_tol;

    // Largest λ first; stable sort keeps grid order among equal λ.
    let mut order: Vec<usize> = (0..grid.len()).collect();
    order.sort_by(|&a, &b| grid.lambdas[b].total_cmp(&grid.lambdas[a]));

    let mut scores: Vec<Option<GicScore>> = vec![None; grid.len()];
    let mut best: Option<(usize, f64, EstimatorFit)> = None;
    let mut previous: Option<EstimatorFit> = None;
    for &k in &order {
        let lambda = grid.lambdas[k];
        let warm = if settings.warm_start {
            previous.as_ref()
        } else {
            None
        };
        let fit = fit_estimator(x, y, estimator, lambda, settings, warm)?;
        let fitted = x.dot(&Array1::from(fit.beta_hat.clone()));
        let sigma_hat_sq = (y - &fitted).mapv(|r| r * r).sum() / n as f64;
        let s_hat = fit
            .beta_hat
            .iter()
            .filter(|b| b.abs() > support_tol)
            .count();
        let (score, degenerate) = gic_value(sigma_hat_sq, s_hat, n, p);
        if degenerate {
            log::warn!("GIC: perfect fit at lambda={lambda}; residual variance floored");
        }
        scores[k] = Some(GicScore {
            c2: grid.c2_values[k],
            lambda,
            sigma_hat_sq,
            s_hat,
            score,
            degenerate,
        });
        let better = match &best {
            None => true,
            Some((_, s, _)) => score < *s,
        };
        if better {
            best = Some((k, score, fit.clone()));
        }
        previous = Some(fit);
    }
    let (selected, _, fit) = best.expect("grid is nonempty");
    Ok(GicSelection {
        lambda_star: grid.lambdas[selected],
        selected,
        scores: scores
            .into_iter()
            .map(|s| s.expect("every λ scored"))
            .collect(),
        fit,
    })
}

/// Writes `c2,lambda,sigma_hat_sq,s_hat,gic_score,selected`.
pub fn write_scores_csv<W: Write>(selection: &GicSelection, writer: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record([
        "c2",
        "lambda",
        "sigma_hat_sq",
        "s_hat",
        "gic_score",
        "selected",
    ])?;
    for (k, s) in selection.scores.iter().enumerate() {
        w.write_record([
            format!("{:?}", s.c2),
            format!("{:?}", s.lambda),
            format!("{:?}", s.sigma_hat_sq),
            s.s_hat.to_string(),
            format!("{:?}", s.score),
            (k == selection.selected).to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum IcRule {
    /// `λ ≥ P(Fᶜ)^{1/8} / s₀^{1/2}`
    Lasso,
    /// `λ ≥ max(P(Fᶜ)^{1/8} / (s₀^{1/4} s₁^{1/2}), P(Fᶜ)^{1/12} / (s₀^{1/3} s₁^{1/3}))`
    Conservative,
}

/// Smallest λ allowed by the incentive-compatibility rule, given an estimate
/// of the probability that the noise or restricted-eigenvalue event fails.
pub fn ic_lower_bound(p_fc_estimate: f64, s0: usize, s1: f64, rule: IcRule) -> f64 {
    let s0 = s0 as f64;
    match rule {
        IcRule::Lasso => p_fc_estimate.powf(1.0 / 8.0) / s0.sqrt(),
        IcRule::Conservative => {
            let a = p_fc_estimate.powf(1.0 / 8.0) / (s0.powf(0.25) * s1.sqrt());
            let b = p_fc_estimate.powf(1.0 / 12.0) / (s0.powf(1.0 / 3.0) * s1.powf(1.0 / 3.0));
            a.max(b)
        }
    }
}

pub fn ic_lower_bound_ok(
    lambda: f64,
    p_fc_estimate: f64,
    s0: usize,
    s1: f64,
    rule: IcRule,
) -> bool {
    lambda >= ic_lower_bound(p_fc_estimate, s0, s1, rule)
}
