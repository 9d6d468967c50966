//! Monte Carlo measurements of the quantities the incentive-compatibility
//! argument rests on: the noise event `2‖uᵀX/n‖_∞ ≤ λ`, the sampled
//! restricted eigenvalue event, the probability that either fails, moment
//! bounds for the ℓ₁ error, the maximal cross-product statistics, and the
//! per-draw decomposition of the misreporting gain.

use std::io::Write;

use ndarray::Array2;
use rand::seq::index;
use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::datagen::{toeplitz_sigma, DataGenerator, Dataset, DgpConfig, NewUser};
use crate::error::{Error, Result};
use crate::linalg::{compensated_mean, dot};
use crate::rng::{substream, Domain};
use crate::solver::{fit_lasso, LassoProblem};
use crate::tuning::{fit_estimator, Estimator, GicSettings};

pub const DEFAULT_CONE_SAMPLES: usize = 1_000;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DiagnosticsSettings {
    pub cone_samples: usize,
    pub fit: GicSettings,
}

impl Default for DiagnosticsSettings {
    fn default() -> Self {
        DiagnosticsSettings {
            cone_samples: DEFAULT_CONE_SAMPLES,
            fit: GicSettings::default(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MaxStats {
    pub m1: f64,
    pub m2: f64,
    pub m3: f64,
    pub m4: f64,
}

/// `m1 = max|X_ij u_i|`, `m2 = max|X_il X_ij − Σ_lj|` against the population
/// Toeplitz covariance, `m3 = ‖x_new‖_∞`, `m4 = ‖report − x_new‖_∞`.
pub fn compute_max_stats(dataset: &Dataset, new_user: &NewUser) -> Result<MaxStats> {
    let sigma = dataset.population_covariance()?;
    max_stats_with_covariance(dataset, &sigma, new_user)
}

pub fn max_stats_with_covariance(
    dataset: &Dataset,
    sigma: &Array2<f64>,
    new_user: &NewUser,
) -> Result<MaxStats> {
    let (n, p) = dataset.x.dim();
    if sigma.dim() != (p, p) || dataset.u.len() != n {
        return Err(Error::DimensionMismatch(
            "covariance or noise does not match the design".into(),
        ));
    }
    if new_user.x_new.len() != p || new_user.report.len() != p {
        return Err(Error::DimensionMismatch(format!(
            "new user has {} attributes, design has {p}",
            new_user.x_new.len()
        )));
    }
    let x = &dataset.x;
    let mut m1: f64 = 0.0;
    let mut m2: f64 = 0.0;
    for i in 0..n {
        let row = x.row(i);
        let ui = dataset.u[i];
        for j in 0..p {
            let xij = row[j];
            m1 = m1.max((xij * ui).abs());
            for l in 0..=j {
                m2 = m2.max((row[l] * xij - sigma[[l, j]]).abs());
            }
        }
    }
    let m3 = new_user.x_new.iter().fold(0.0f64, |a, v| a.max(v.abs()));
    let m4 = new_user
        .misreport()
        .iter()
        .fold(0.0f64, |a, v| a.max(v.abs()));
    Ok(MaxStats { m1, m2, m3, m4 })
}

/// A sparse direction `δ` stored as `(index, value)` pairs.
#[derive(Debug, Clone, PartialEq)]
struct Direction {
    entries: Vec<(usize, f64)>,
    support_sq: f64,
}

impl Direction {
    fn population_quad(&self, sigma: &Array2<f64>) -> f64 {
        let mut q = 0.0;
        for &(a, va) in &self.entries {
            for &(b, vb) in &self.entries {
                q += va * vb * sigma[[a, b]];
            }
        }
        q
    }

    fn sample_quad(&self, x: &Array2<f64>, buf: &mut [f64]) -> f64 {
        buf.iter_mut().for_each(|v| *v = 0.0);
        for &(j, v) in &self.entries {
            let column = x.column(j);
            for (b, xij) in buf.iter_mut().zip(column.iter()) {
                *b += v * xij;
            }
        }
        dot(buf, buf) / x.nrows() as f64
    }
}

/// Random directions inside the cone `‖δ_Sᶜ‖₁ ≤ 3√s ‖δ_S‖₂` for a fixed
/// support `S`, used to approximate the restricted eigenvalue
/// `min δᵀΣδ / ‖δ_S‖₂²` from above.
#[derive(Debug, Clone)]
pub struct ConeSampler {
    p: usize,
    support: Vec<usize>,
    directions: Vec<Direction>,
}

impl ConeSampler {
    pub fn new(p: usize, support: &[usize], samples: usize, seed: u64) -> Result<Self> {
        if support.is_empty() || support.iter().any(|&j| j >= p) {
            return Err(Error::config(
                "cone support must be nonempty and inside 0..p",
            ));
        }
        if samples == 0 {
            return Err(Error::config("cone_samples must be positive"));
        }
        let s = support.len();
        let radius = 3.0 * (s as f64).sqrt();
        let in_support = {
            let mut mask = vec![false; p];
            support.iter().for_each(|&j| mask[j] = true);
            mask
        };
        let off: Vec<usize> = (0..p).filter(|&j| !in_support[j]).collect();
        // Off-support coordinates ordered by distance to the support.
        let mut near = off.clone();
        near.sort_by_key(|&j| (support.iter().map(|&k| j.abs_diff(k)).min().unwrap_or(0), j));

        let mut ladder = vec![0usize];
        let mut m = 1;
        while m < off.len() {
            ladder.push(m);
            m *= 2;
        }
        if !off.is_empty() {
            ladder.push(off.len());
        }

        let mut rng = substream(seed, Domain::ConeDirections, &[p as u64, s as u64], 0);
        let mut directions = Vec::with_capacity(samples);
        while directions.len() < samples {
            let mut entries: Vec<(usize, f64)> = support
                .iter()
                .map(|&j| (j, rng.sample::<f64, _>(StandardNormal)))
                .collect();
            let support_sq: f64 = entries.iter().map(|(_, v)| v * v).sum();
            if support_sq == 0.0 {
                continue;
            }
            let m = ladder[rng.random_range(0..ladder.len())];
            if m > 0 {
                let picks: Vec<usize> = if rng.random_bool(0.5) {
                    near[..m].to_vec()
                } else {
                    index::sample(&mut rng, off.len(), m)
                        .into_iter()
                        .map(|i| off[i])
                        .collect()
                };
                let raw: Vec<f64> = picks
                    .iter()
                    .map(|_| rng.sample::<f64, _>(StandardNormal))
                    .collect();
                let l1: f64 = raw.iter().map(|v| v.abs()).sum();
                if l1 > 0.0 {
                    let fill = if rng.random_bool(0.5) {
                        1.0
                    } else {
                        rng.random::<f64>()
                    };
                    let scale = fill * radius * support_sq.sqrt() / l1;
                    entries.extend(picks.into_iter().zip(raw).map(|(j, v)| (j, v * scale)));
                }
            }
            directions.push(Direction {
                entries,
                support_sq,
            });
        }
        Ok(ConeSampler {
            p,
            support: support.to_vec(),
            directions,
        })
    }

    pub fn len(&self) -> usize {
        self.directions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.directions.is_empty()
    }

    pub fn support(&self) -> &[usize] {
        &self.support
    }

    /// Sampled minimum of `δᵀΣδ / ‖δ_S‖₂²`.
    pub fn min_population_ratio(&self, sigma: &Array2<f64>) -> f64 {
        self.directions
            .iter()
            .map(|d| d.population_quad(sigma) / d.support_sq)
            .fold(f64::INFINITY, f64::min)
    }

    /// Sampled minimum of `‖Xδ‖²/n / ‖δ_S‖₂²`, optionally including one extra
    /// direction (pulled back into the cone if it lies outside).
    pub fn min_sample_ratio(&self, x: &Array2<f64>, extra: Option<&[f64]>) -> f64 {
        let mut buf = vec![0.0; x.nrows()];
        let mut best = self
            .directions
            .iter()
            .map(|d| d.sample_quad(x, &mut buf) / d.support_sq)
            .fold(f64::INFINITY, f64::min);
        if let Some(d) = extra.and_then(|e| self.project(e)) {
            best = best.min(d.sample_quad(x, &mut buf) / d.support_sq);
        }
        best
    }

    fn project(&self, delta: &[f64]) -> Option<Direction> {
        if delta.len() != self.p {
            return None;
        }
        let mut in_support = vec![false; self.p];
        self.support.iter().for_each(|&j| in_support[j] = true);
        let support_sq: f64 = self.support.iter().map(|&j| delta[j] * delta[j]).sum();
        if support_sq == 0.0 {
            return None;
        }
        let off_l1: f64 = (0..self.p)
            .filter(|&j| !in_support[j])
            .map(|j| delta[j].abs())
            .sum();
        let limit = 3.0 * (self.support.len() as f64).sqrt() * support_sq.sqrt();
        let shrink = if off_l1 > limit { limit / off_l1 } else { 1.0 };
        let entries = (0..self.p)
            .filter(|&j| delta[j] != 0.0)
            .map(|j| {
                (
                    j,
                    if in_support[j] {
                        delta[j]
                    } else {
                        delta[j] * shrink
                    },
                )
            })
            .collect();
        Some(Direction {
            entries,
            support_sq,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EventReport {
    pub a1_holds: bool,
    pub a2_holds: bool,
    /// `2‖uᵀX/n‖_∞`
    pub noise_stat: f64,
    pub re_estimate: f64,
    pub re_population: f64,
}

/// `2‖uᵀX/n‖_∞`.
pub fn noise_statistic(dataset: &Dataset) -> f64 {
    let n = dataset.n() as f64;
    let u = dataset.u.as_slice().expect("contiguous noise");
    dataset
        .x
        .columns()
        .into_iter()
        .map(|c| {
            let g: f64 = c.iter().zip(u).map(|(a, b)| a * b).sum();
            2.0 * (g / n).abs()
        })
        .fold(0.0, f64::max)
}

/// Reusable event checker: one direction set and one population value
/// serve every replicate that shares `(p, support, rho, seed)`.
#[derive(Debug, Clone)]
pub struct EventChecker {
    sampler: ConeSampler,
    re_population: f64,
}

impl EventChecker {
    pub fn new(
        p: usize,
        support: &[usize],
        rho: f64,
        cone_samples: usize,
        seed: u64,
    ) -> Result<Self> {
        let sampler = ConeSampler::new(p, support, cone_samples, seed)?;
        let sigma = toeplitz_sigma(p, rho)?;
        let re_population = sampler.min_population_ratio(&sigma);
        Ok(EventChecker {
            sampler,
            re_population,
        })
    }

    pub fn re_population(&self) -> f64 {
        self.re_population
    }

    pub fn sampler(&self) -> &ConeSampler {
        &self.sampler
    }

    pub fn check(
        &self,
        dataset: &Dataset,
        lambda: f64,
        settings: &DiagnosticsSettings,
    ) -> Result<EventReport> {
        let noise_stat = noise_statistic(dataset);
        let problem = LassoProblem::new(&dataset.x, &dataset.y, lambda)?;
        let fit = fit_lasso(&problem, None, &settings.fit.solver)?;
        let error: Vec<f64> = fit
            .beta_hat
            .iter()
            .zip(dataset.beta0.iter())
            .map(|(b, b0)| b - b0)
            .collect();
        let re_estimate = self.sampler.min_sample_ratio(&dataset.x, Some(&error));
        Ok(EventReport {
            a1_holds: noise_stat <= lambda,
            a2_holds: re_estimate >= self.re_population / 2.0,
            noise_stat,
            re_estimate,
            re_population: self.re_population,
        })
    }

    /// Whether the noise event or the eigenvalue event fails. Skips the
    /// eigenvalue work when the noise event already fails.
    fn exception(
        &self,
        dataset: &Dataset,
        lambda: f64,
        settings: &DiagnosticsSettings,
    ) -> Result<bool> {
        if noise_statistic(dataset) > lambda {
            return Ok(true);
        }
        let report = self.check(dataset, lambda, settings)?;
        Ok(!(report.a1_holds && report.a2_holds))
    }
}

pub fn check_events(
    dataset: &Dataset,
    lambda: f64,
    cone_samples: usize,
    seed: u64,
    settings: &DiagnosticsSettings,
) -> Result<EventReport> {
    let support = dataset.support();
    EventChecker::new(dataset.p(), &support, dataset.rho, cone_samples, seed)?
        .check(dataset, lambda, settings)
}

/// Fraction of `reps` synthetic samples in which the noise event or the
/// restricted-eigenvalue event fails. Replicate `k` uses dataset substream `k`
/// of `seed`, so calls with different λ see the same samples.
pub fn estimate_exception_probability(
    config: &DgpConfig,
    lambda: f64,
    reps: usize,
    seed: u64,
    settings: &DiagnosticsSettings,
) -> Result<f64> {
    if reps == 0 {
        return Err(Error::config("reps must be at least 1"));
    }
    let generator = DataGenerator::new(DgpConfig { seed, ..*config })?;
    let support: Vec<usize> = crate::datagen::build_beta0(config.p, config.s0)?
        .iter()
        .enumerate()
        .filter(|(_, b)| **b != 0.0)
        .map(|(j, _)| j)
        .collect();
    let checker = EventChecker::new(config.p, &support, config.rho, settings.cone_samples, seed)?;
    let failures: Vec<bool> = (0..reps)
        .into_par_iter()
        .map(|k| checker.exception(&generator.sample(k as u64), lambda, settings))
        .collect::<Result<_>>()?;
    Ok(failures.iter().filter(|f| **f).count() as f64 / reps as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MomentReport {
    pub k: u32,
    /// Mean of `‖β̂ − β₀‖₁ᵏ`.
    pub mean_l1_error_k: f64,
    /// Mean of `‖β̂‖₁ᵏ`.
    pub mean_l1_norm_k: f64,
    /// `mean_l1_error_k^{1/k} / (s₀ λ)`
    pub ratio_error: f64,
    /// `mean_l1_norm_k^{1/k} / √s₀`
    pub ratio_norm: f64,
    pub reps: usize,
}

pub fn estimate_moment_bounds(
    config: &DgpConfig,
    estimator: Estimator,
    lambda: f64,
    k: u32,
    reps: usize,
    seed: u64,
    settings: &DiagnosticsSettings,
) -> Result<MomentReport> {
    Ok(estimate_moment_bounds_multi(config, estimator, lambda, &[k], reps, seed, settings)?[0])
}

/// Moment reports for several `k` from one set of fits.
pub fn estimate_moment_bounds_multi(
    config: &DgpConfig,
    estimator: Estimator,
    lambda: f64,
    ks: &[u32],
    reps: usize,
    seed: u64,
    settings: &DiagnosticsSettings,
) -> Result<Vec<MomentReport>> {
    if ks.is_empty() || ks.contains(&0) {
        return Err(Error::config("moment orders must be at least 1"));
    }
    if reps < 30 {
        return Err(Error::config(format!(
            "reps={reps} is below the minimum of 30"
        )));
    }
    if !(lambda > 0.0) {
        return Err(Error::config("lambda must be positive"));
    }
    let generator = DataGenerator::new(DgpConfig { seed, ..*config })?;
    let norms: Vec<(f64, f64)> = (0..reps)
        .into_par_iter()
        .map(|r| {
            let data = generator.sample(r as u64);
            let fit = fit_estimator(&data.x, &data.y, estimator, lambda, &settings.fit, None)?;
            let err: f64 = fit
                .beta_hat
                .iter()
                .zip(data.beta0.iter())
                .map(|(b, b0)| (b - b0).abs())
                .sum();
            let norm: f64 = fit.beta_hat.iter().map(|b| b.abs()).sum();
            Ok((err, norm))
        })
        .collect::<Result<_>>()?;
    let s0 = config.s0 as f64;
    Ok(ks
        .iter()
        .map(|&k| {
            let mean_err = compensated_mean(norms.iter().map(|(e, _)| e.powi(k as i32)));
            let mean_norm = compensated_mean(norms.iter().map(|(_, b)| b.powi(k as i32)));
            let root = 1.0 / k as f64;
            MomentReport {
                k,
                mean_l1_error_k: mean_err,
                mean_l1_norm_k: mean_norm,
                ratio_error: mean_err.powf(root) / (s0 * lambda),
                ratio_norm: mean_norm.powf(root) / s0.sqrt(),
                reps,
            }
        })
        .collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IcTerms {
    /// `(Dᵀβ̂)²`
    pub quad: f64,
    /// `(β̂ᵀD)(x_newᵀ(β̂ − β₀))`
    pub cross1: f64,
    /// `((β̂ − β₀)ᵀx_new)(Dᵀβ̂)`
    pub cross2: f64,
}

impl IcTerms {
    pub fn total(&self) -> f64 {
        self.quad + self.cross1 + self.cross2
    }
}

/// Splits the misreporting loss difference for one fit, with `D = report − x_new`:
/// `(reportᵀβ̂ − x_newᵀβ₀)² − (x_newᵀβ̂ − x_newᵀβ₀)² = quad + cross1 + cross2`.
pub fn ic_decomposition(beta_hat: &[f64], beta0: &[f64], new_user: &NewUser) -> Result<IcTerms> {
    let p = beta_hat.len();
    if beta0.len() != p || new_user.x_new.len() != p || new_user.report.len() != p {
        return Err(Error::DimensionMismatch(
            "beta_hat, beta0 and the new user must share one dimension".into(),
        ));
    }
    let d_beta: f64 = new_user
        .report
        .iter()
        .zip(&new_user.x_new)
        .zip(beta_hat)
        .map(|((r, x), b)| (r - x) * b)
        .sum();
    let err_x: f64 = beta_hat
        .iter()
        .zip(beta0)
        .zip(&new_user.x_new)
        .map(|((b, b0), x)| (b - b0) * x)
        .sum();
    Ok(IcTerms {
        quad: d_beta * d_beta,
        cross1: d_beta * err_x,
        cross2: err_x * d_beta,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SparsityExponent {
    /// `s₀^{3/2}`, for bounded ‖β₀‖₂.
    ThreeHalves,
    /// `s₀²`, for ‖β₀‖₂ growing like √s₀.
    Two,
}

/// `s₀^a · √(ln p / n) · m3 · m4`; incentive compatibility in large samples
/// needs this to vanish.
pub fn check_ic_condition(
    s0: usize,
    n: usize,
    p: usize,
    m3: f64,
    m4: f64,
    variant: SparsityExponent,
) -> Result<f64> {
    if n < 3 {
        return Err(Error::config(format!("n={n} must be at least 3")));
    }
    if p < 1 {
        return Err(Error::config("p must be positive"));
    }
    let a = match variant {
        SparsityExponent::ThreeHalves => 1.5,
        SparsityExponent::Two => 2.0,
    };
    Ok((s0 as f64).powf(a) * ((p as f64).ln() / n as f64).sqrt() * m3 * m4)
}

/// One exported diagnostics record.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiagnosticRecord {
    pub module: String,
    pub op: String,
    pub config_hash: String,
    pub seed: u64,
    pub report: serde_json::Value,
}

/// First 16 hex digits of the SHA-256 of the JSON encoding of `config`.
pub fn config_hash<T: Serialize>(config: &T) -> Result<String> {
    let bytes = serde_json::to_vec(config)?;
    let digest = Sha256::digest(&bytes);
    Ok(digest[..8].iter().map(|b| format!("{b:02x}")).collect())
}

impl DiagnosticRecord {
    pub fn new<C: Serialize, R: Serialize>(
        op: &str,
        config: &C,
        seed: u64,
        report: &R,
    ) -> Result<Self> {
        Ok(DiagnosticRecord {
            module: "diagnostics".into(),
            op: op.into(),
            config_hash: config_hash(config)?,
            seed,
            report: serde_json::to_value(report)?,
        })
    }
}

pub fn write_records_json<W: Write>(records: &[DiagnosticRecord], mut writer: W) -> Result<()> {
    serde_json::to_writer_pretty(&mut writer, records)?;
    writeln!(writer)?;
    Ok(())
}
