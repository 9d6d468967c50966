//! Monte Carlo misreporting experiment.
//!
//! For every `(p, n)` a new user's attributes are drawn once from a dedicated
//! substream and held fixed. Each iteration draws a fresh sample, tunes λ by
//! GIC, fits each estimator and records the squared prediction error under the
//! truthful report and under each misreport. Lasso and Conservative Lasso see
//! identical samples and the identical new user.

use std::fmt::Write as _;
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::datagen::{sample_new_user, DataGenerator, Dataset, DgpConfig, NewUser};
use crate::diagnostics::{ic_decomposition, IcTerms};
use crate::error::{Error, Result};
use crate::linalg::{compensated_mean, dot};
use crate::solver::SolverSettings;
use crate::tuning::{
    build_grid, fit_estimator, gic_select, Estimator, GicSettings, TuningGrid, DEFAULT_C2_VALUES,
};

pub const DEFAULT_ITERATIONS: usize = 200;
pub const FULL_ITERATIONS: usize = 1_000;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub p_values: Vec<usize>,
    pub n_values: Vec<usize>,
    pub lies: Vec<f64>,
    pub estimators: Vec<Estimator>,
    pub iterations: usize,
    pub master_seed: u64,
    pub s0: usize,
    pub rho: f64,
    pub noise_sd: f64,
    /// Degrees of freedom of the new user's t-distributed attributes.
    pub new_user_df: u32,
    pub c2_values: Vec<f64>,
    /// Grid exponent for every estimator; `None` uses 1/8 for the Lasso and
    /// 1/12 for the Conservative Lasso.
    pub exponent: Option<f64>,
    pub lambda_prec_multiplier: f64,
    /// Select λ on the first iteration only and reuse it afterwards.
    pub freeze_lambda: bool,
    pub solver: SolverSettings,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            p_values: vec![100, 200, 300],
            n_values: vec![100, 200, 300],
            lies: vec![2.0, 0.2],
            estimators: vec![Estimator::Lasso, Estimator::Conservative],
            iterations: DEFAULT_ITERATIONS,
            master_seed: 1,
            s0: 5,
            rho: 0.5,
            noise_sd: 1.0,
            new_user_df: 3,
            c2_values: DEFAULT_C2_VALUES.to_vec(),
            exponent: None,
            lambda_prec_multiplier: 1.0,
            freeze_lambda: false,
            solver: SolverSettings::default(),
        }
    }
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<()> {
        if self.estimators.is_empty() {
            return Err(Error::config("no estimators selected"));
        }
        if self.p_values.is_empty() || self.n_values.is_empty() || self.lies.is_empty() {
            return Err(Error::config("p, n and lie lists must be nonempty"));
        }
        if self.iterations == 0 {
            return Err(Error::config("iterations must be at least 1"));
        }
        if let Some(bad) = self.lies.iter().find(|l| !l.is_finite()) {
            return Err(Error::config(format!("lie {bad} is not finite")));
        }
        if !(self.lambda_prec_multiplier > 0.0) {
            return Err(Error::config("lambda_prec multiplier must be positive"));
        }
        if self.new_user_df == 0 {
            return Err(Error::config(
                "new-user degrees of freedom must be positive",
            ));
        }
        for &p in &self.p_values {
            for &n in &self.n_values {
                self.dgp(p, n).validate()?;
            }
            for &est in &self.estimators {
                build_grid(p, self.exponent_for(est), &self.c2_values)?;
            }
        }
        Ok(())
    }

    pub fn exponent_for(&self, estimator: Estimator) -> f64 {
        self.exponent
            .unwrap_or_else(|| estimator.default_exponent())
    }

    pub fn dgp(&self, p: usize, n: usize) -> DgpConfig {
        DgpConfig {
            p,
            n,
            s0: self.s0,
            rho: self.rho,
            noise_sd: self.noise_sd,
            seed: self.master_seed,
        }
    }

    pub fn gic_settings(&self) -> GicSettings {
        GicSettings {
            solver: self.solver,
            lambda_prec_multiplier: self.lambda_prec_multiplier,
            warm_start: true,
        }
    }

    pub fn cell_count(&self) -> usize {
        self.estimators.len() * self.p_values.len() * self.n_values.len() * self.lies.len()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ICCell {
    pub estimator: Estimator,
    pub p: usize,
    pub n: usize,
    pub lie: f64,
    /// Mean of `(x_newᵀβ̂ − x_newᵀβ₀)²`.
    pub truth_mse: f64,
    /// Mean of `(reportᵀβ̂ − x_newᵀβ₀)²`.
    pub report_mse: f64,
    /// Mean selected λ over iterations.
    pub lambda_used: f64,
    pub quad: f64,
    pub cross1: f64,
    pub cross2: f64,
    pub iterations: usize,
    pub seed: u64,
}

impl ICCell {
    pub fn decomposition_means(&self) -> (f64, f64, f64) {
        (self.quad, self.cross1, self.cross2)
    }

    /// Whether misreporting raised the user's loss.
    pub fn truth_preferred(&self) -> bool {
        self.report_mse > self.truth_mse
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellFailure {
    pub estimator: Estimator,
    pub p: usize,
    pub n: usize,
    pub lie: f64,
    pub message: String,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct ExperimentOutcome {
    pub cells: Vec<ICCell>,
    pub failures: Vec<CellFailure>,
}

impl ExperimentOutcome {
    pub fn is_success(&self) -> bool {
        self.failures.is_empty()
    }
}

/// Squared errors and decomposition of one fit for one lie.
#[derive(Debug, Clone, Copy)]
struct Draw {
    truth_sq: f64,
    report_sq: f64,
    terms: IcTerms,
}

fn score_fit(beta_hat: &[f64], data: &Dataset, user: &NewUser) -> Result<Draw> {
    let beta0 = data.beta0.as_slice().expect("contiguous beta0");
    let target = dot(&user.x_new, beta0);
    let truth_sq = (dot(&user.x_new, beta_hat) - target).powi(2);
    let report_sq = (dot(&user.report, beta_hat) - target).powi(2);
    let terms = ic_decomposition(beta_hat, beta0, user)?;
    Ok(Draw {
        truth_sq,
        report_sq,
        terms,
    })
}

/// Per-iteration outcome for one estimator: selected λ and one draw per lie.
type IterationResult = Result<(f64, Vec<Draw>)>;

struct Plan<'a> {
    estimator: Estimator,
    grid: TuningGrid,
    frozen: Option<f64>,
    users: &'a [NewUser],
}

fn run_iteration(plan: &Plan<'_>, data: &Dataset, settings: &GicSettings) -> IterationResult {
    let (lambda, beta_hat) = match plan.frozen {
        Some(lambda) => {
            let fit = fit_estimator(&data.x, &data.y, plan.estimator, lambda, settings, None)?;
            (lambda, fit.beta_hat)
        }
        None => {
            let sel = gic_select(&data.x, &data.y, &plan.grid, plan.estimator, settings)?;
            (sel.lambda_star, sel.fit.beta_hat)
        }
    };
    let draws = plan
        .users
        .iter()
        .map(|u| score_fit(&beta_hat, data, u))
        .collect::<Result<Vec<_>>>()?;
    Ok((lambda, draws))
}

/// All estimators and lies for one `(p, n)`, sharing samples and the new user.
fn run_group(
    config: &ExperimentConfig,
    estimators: &[Estimator],
    lies: &[f64],
    p: usize,
    n: usize,
) -> Result<Vec<std::result::Result<ICCell, CellFailure>>> {
    let generator = DataGenerator::new(config.dgp(p, n))?;
    let base_user = sample_new_user(p, config.new_user_df, 0.0, config.master_seed)?;
    let users: Vec<NewUser> = lies.iter().map(|&l| base_user.with_lie(l)).collect();
    let settings = config.gic_settings();

    let mut plans = Vec::with_capacity(estimators.len());
    let mut early_failures: Vec<Option<Error>> = Vec::with_capacity(estimators.len());
    for &estimator in estimators {
        let grid = build_grid(p, config.exponent_for(estimator), &config.c2_values)?;
        let mut plan = Plan {
            estimator,
            grid,
            frozen: None,
            users: &users,
        };
        let mut failure = None;
        if config.freeze_lambda {
            let first = generator.sample(0);
            match gic_select(&first.x, &first.y, &plan.grid, estimator, &settings) {
                Ok(sel) => plan.frozen = Some(sel.lambda_star),
                Err(e) => {
                    failure = Some(Error::CellFailed {
                        iteration: 0,
                        source: Box::new(e),
                    })
                }
            }
        }
        plans.push(plan);
        early_failures.push(failure);
    }

    // Collected in iteration order, so aggregation does not depend on scheduling.
    let per_iteration: Vec<Vec<IterationResult>> = (0..config.iterations)
        .into_par_iter()
        .map(|k| {
            let data = generator.sample(k as u64);
            plans
                .iter()
                .zip(&early_failures)
                .map(|(plan, early)| match early {
                    Some(_) => Err(Error::Numeric("skipped".into())),
                    None => run_iteration(plan, &data, &settings),
                })
                .collect()
        })
        .collect();

    let mut out = Vec::with_capacity(estimators.len() * lies.len());
    for (e, &estimator) in estimators.iter().enumerate() {
        let failure = |lie: f64, message: String| CellFailure {
            estimator,
            p,
            n,
            lie,
            message,
        };
        if let Some(err) = &early_failures[e] {
            out.extend(lies.iter().map(|&lie| Err(failure(lie, err.to_string()))));
            continue;
        }
        let mut results = Vec::with_capacity(config.iterations);
        let mut first_error = None;
        for (k, iteration) in per_iteration.iter().enumerate() {
            match &iteration[e] {
                Ok(r) => results.push(r),
                Err(err) => {
                    first_error = Some(
                        Error::CellFailed {
                            iteration: k,
                            source: Box::new(Error::Numeric(err.to_string())),
                        }
                        .to_string(),
                    );
                    break;
                }
            }
        }
        if let Some(message) = first_error {
            out.extend(lies.iter().map(|&lie| Err(failure(lie, message.clone()))));
            continue;
        }
        let lambda_used = compensated_mean(results.iter().map(|(l, _)| *l));
        for (li, &lie) in lies.iter().enumerate() {
            let draw =
                |f: fn(&Draw) -> f64| compensated_mean(results.iter().map(|(_, d)| f(&d[li])));
            out.push(Ok(ICCell {
                estimator,
                p,
                n,
                lie,
                truth_mse: draw(|d| d.truth_sq),
                report_mse: draw(|d| d.report_sq),
                lambda_used,
                quad: draw(|d| d.terms.quad),
                cross1: draw(|d| d.terms.cross1),
                cross2: draw(|d| d.terms.cross2),
                iterations: config.iterations,
                seed: config.master_seed,
            }));
        }
    }
    Ok(out)
}

pub fn run_cell(
    estimator: Estimator,
    p: usize,
    n: usize,
    lie: f64,
    config: &ExperimentConfig,
) -> Result<ICCell> {
    let single = ExperimentConfig {
        p_values: vec![p],
        n_values: vec![n],
        lies: vec![lie],
        estimators: vec![estimator],
        ..config.clone()
    };
    single.validate()?;
    let mut cells = run_group(&single, &[estimator], &[lie], p, n)?;
    cells
        .pop()
        .expect("one cell requested")
        .map_err(|f| Error::Numeric(f.message))
}

/// Every `(estimator, p, n, lie)` cell, in that nesting order. Configuration
/// problems are returned as errors before any work; failures inside a cell are
/// collected and the remaining cells still run.
pub fn run_experiment(config: &ExperimentConfig) -> Result<ExperimentOutcome> {
    config.validate()?;
    let groups: Vec<(usize, usize)> = config
        .p_values
        .iter()
        .flat_map(|&p| config.n_values.iter().map(move |&n| (p, n)))
        .collect();
    let mut by_group = Vec::with_capacity(groups.len());
    for &(p, n) in &groups {
        log::info!("running p={p} n={n}");
        by_group.push(run_group(config, &config.estimators, &config.lies, p, n)?);
    }

    let mut outcome = ExperimentOutcome::default();
    let lies = config.lies.len();
    for e in 0..config.estimators.len() {
        for cells in &by_group {
            for cell in &cells[e * lies..(e + 1) * lies] {
                match cell {
                    Ok(c) => outcome.cells.push(c.clone()),
                    Err(f) => outcome.failures.push(f.clone()),
                }
            }
        }
    }
    Ok(outcome)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OutputFormat {
    Csv,
    Json,
    Text,
}

impl FromStr for OutputFormat {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "csv" => Ok(OutputFormat::Csv),
            "json" => Ok(OutputFormat::Json),
            "text" | "txt" => Ok(OutputFormat::Text),
            other => Err(Error::config(format!("unknown output format `{other}`"))),
        }
    }
}

pub const CSV_HEADER: &str =
    "estimator,p,n,lie,truth_mse,report_mse,lambda_used,quad,cross1,cross2,iterations,seed";

pub fn emit_table(cells: &[ICCell], format: OutputFormat) -> Result<String> {
    if cells.is_empty() {
        return Err(Error::config("no cells to emit"));
    }
    match format {
        OutputFormat::Csv => Ok(emit_csv(cells)),
        OutputFormat::Json => {
            let mut s = serde_json::to_string_pretty(cells)?;
            s.push('\n');
            Ok(s)
        }
        OutputFormat::Text => Ok(emit_text(cells)),
    }
}

fn emit_csv(cells: &[ICCell]) -> String {
    let mut s = String::from(CSV_HEADER);
    s.push('\n');
    for c in cells {
        let _ = writeln!(
            s,
            "{},{},{},{:?},{:?},{:?},{:?},{:?},{:?},{:?},{},{}",
            c.estimator,
            c.p,
            c.n,
            c.lie,
            c.truth_mse,
            c.report_mse,
            c.lambda_used,
            c.quad,
            c.cross1,
            c.cross2,
            c.iterations,
            c.seed
        );
    }
    s
}

fn unique_sorted<T: PartialOrd + Copy>(values: impl Iterator<Item = T>) -> Vec<T> {
    let mut out: Vec<T> = Vec::new();
    for v in values {
        if !out.contains(&v) {
            out.push(v);
        }
    }
    out.sort_by(|a, b| a.partial_cmp(b).expect("comparable"));
    out
}

/// One block per `(estimator, lie)`: rows are `p`, column pairs are
/// Truth/Report for each `n`.
fn emit_text(cells: &[ICCell]) -> String {
    let mut s = String::new();
    let mut blocks: Vec<(Estimator, f64)> = Vec::new();
    for c in cells {
        if !blocks.iter().any(|(e, l)| *e == c.estimator && *l == c.lie) {
            blocks.push((c.estimator, c.lie));
        }
    }
    for (estimator, lie) in blocks {
        let block: Vec<&ICCell> = cells
            .iter()
            .filter(|c| c.estimator == estimator && c.lie == lie)
            .collect();
        let ps = unique_sorted(block.iter().map(|c| c.p));
        let ns = unique_sorted(block.iter().map(|c| c.n));
        let _ = writeln!(s, "{estimator}: difference {lie}");
        let _ = write!(s, "{:<10}", "");
        for n in &ns {
            let _ = write!(s, " | {:^19}", format!("n={n}"));
        }
        s.push('\n');
        let _ = write!(s, "{:<10}", "Dimension");
        for _ in &ns {
            let _ = write!(s, " | {:>9} {:>9}", "Truth", "Report");
        }
        s.push('\n');
        for p in &ps {
            let _ = write!(s, "{:<10}", format!("p={p}"));
            for n in &ns {
                match block.iter().find(|c| c.p == *p && c.n == *n) {
                    Some(c) => {
                        let _ = write!(s, " | {:>9.2} {:>9.2}", c.truth_mse, c.report_mse);
                    }
                    None => {
                        let _ = write!(s, " | {:>9} {:>9}", "-", "-");
                    }
                }
            }
            s.push('\n');
        }
        s.push('\n');
    }
    s
}
