//! Synthetic data: sparse linear model with Toeplitz-correlated Gaussian
//! covariates, and the fixed heavy-tailed covariate vector of a new user.

use std::io::{Read, Write};

use ndarray::{Array1, Array2, ShapeBuilder};
use rand::Rng;
use rand_distr::{ChiSquared, Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::cholesky_lower;
use crate::rng::{substream, Domain};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DgpConfig {
    pub p: usize,
    pub n: usize,
    pub s0: usize,
    pub rho: f64,
    pub noise_sd: f64,
    pub seed: u64,
}

impl DgpConfig {
    pub fn new(p: usize, n: usize, seed: u64) -> Self {
        DgpConfig {
            p,
            n,
            s0: 5,
            rho: 0.5,
            noise_sd: 1.0,
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.p == 0 {
            return Err(Error::config("p must be positive"));
        }
        if self.s0 < 1 || self.s0 > self.p {
            return Err(Error::config(format!(
                "sparsity s0={} must lie in [1, p={}]",
                self.s0, self.p
            )));
        }
        if self.n < 2 {
            return Err(Error::config(format!("n={} must be at least 2", self.n)));
        }
        if !(self.rho >= 0.0 && self.rho < 1.0) {
            return Err(Error::config(format!(
                "rho={} must lie in [0, 1)",
                self.rho
            )));
        }
        if !(self.noise_sd > 0.0 && self.noise_sd.is_finite()) {
            return Err(Error::config(format!(
                "noise_sd={} must be positive",
                self.noise_sd
            )));
        }
        Ok(())
    }
}

/// A synthetic sample. `x` is stored column-major so each column is a
/// contiguous slice.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub x: Array2<f64>,
    pub y: Array1<f64>,
    pub beta0: Array1<f64>,
    pub u: Array1<f64>,
    /// Toeplitz base of the population covariance the rows were drawn from.
    pub rho: f64,
}

impl Dataset {
    pub fn n(&self) -> usize {
        self.x.nrows()
    }

    pub fn p(&self) -> usize {
        self.x.ncols()
    }

    pub fn population_covariance(&self) -> Result<Array2<f64>> {
        toeplitz_sigma(self.p(), self.rho)
    }

    /// Indices of the nonzero true coefficients.
    pub fn support(&self) -> Vec<usize> {
        self.beta0
            .iter()
            .enumerate()
            .filter(|(_, b)| **b != 0.0)
            .map(|(j, _)| j)
            .collect()
    }
}

/// Design matrix and response without any ground truth (e.g. read from CSV).
#[derive(Debug, Clone, PartialEq)]
pub struct ObservedData {
    pub x: Array2<f64>,
    pub y: Array1<f64>,
}

impl From<&Dataset> for ObservedData {
    fn from(d: &Dataset) -> Self {
        ObservedData {
            x: d.x.clone(),
            y: d.y.clone(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NewUser {
    pub x_new: Vec<f64>,
    pub report: Vec<f64>,
}

impl NewUser {
    /// Report shifted by a constant `lie` in every coordinate, same true attributes.
    pub fn with_lie(&self, lie: f64) -> NewUser {
        NewUser {
            x_new: self.x_new.clone(),
            report: self.x_new.iter().map(|x| x + lie).collect(),
        }
    }

    pub fn misreport(&self) -> Vec<f64> {
        self.report
            .iter()
            .zip(&self.x_new)
            .map(|(r, x)| r - x)
            .collect()
    }
}

/// `(1, 0_{p-s0}, 1_{s0-1})`.
pub fn build_beta0(p: usize, s0: usize) -> Result<Array1<f64>> {
    if s0 < 1 || s0 > p {
        return Err(Error::config(format!(
            "sparsity s0={s0} must lie in [1, p={p}]"
        )));
    }
    let mut beta = Array1::zeros(p);
    beta[0] = 1.0;
    for j in (p - s0 + 1)..p {
        beta[j] = 1.0;
    }
    Ok(beta)
}

/// `Σ[j, m] = rho^|j-m|`.
pub fn toeplitz_sigma(p: usize, rho: f64) -> Result<Array2<f64>> {
    if !(rho.abs() < 1.0) {
        return Err(Error::config(format!(
            "|rho|={} must be below 1",
            rho.abs()
        )));
    }
    Ok(Array2::from_shape_fn((p, p), |(j, m)| {
        rho.powi(j.abs_diff(m) as i32)
    }))
}

/// Draws replicates of a [`DgpConfig`]. The Cholesky factor is computed once
/// and reused, so one generator can feed a whole Monte Carlo loop.
#[derive(Debug, Clone)]
pub struct DataGenerator {
    config: DgpConfig,
    chol: Array2<f64>,
    beta0: Array1<f64>,
}

impl DataGenerator {
    pub fn new(config: DgpConfig) -> Result<Self> {
        config.validate()?;
        let sigma = toeplitz_sigma(config.p, config.rho)?;
        let chol = cholesky_lower(&sigma)?;
        let beta0 = build_beta0(config.p, config.s0)?;
        Ok(DataGenerator {
            config,
            chol,
            beta0,
        })
    }

    pub fn config(&self) -> &DgpConfig {
        &self.config
    }

    pub fn cholesky(&self) -> &Array2<f64> {
        &self.chol
    }

    /// Replicate `index`: a pure function of `(config, index)`.
    pub fn sample(&self, index: u64) -> Dataset {
        let DgpConfig {
            p,
            n,
            noise_sd,
            seed,
            ..
        } = self.config;
        let mut rng = substream(seed, Domain::Dataset, &[p as u64, n as u64], index);

        let mut data = vec![0.0; n * p];
        let mut z = vec![0.0; p];
        for i in 0..n {
            for zj in z.iter_mut() {
                *zj = rng.sample(StandardNormal);
            }
            for j in 0..p {
                let row = &self.chol.row(j);
                let row = row.as_slice().expect("row-major cholesky factor");
                let v: f64 = row[..=j].iter().zip(&z[..=j]).map(|(l, z)| l * z).sum();
                data[j * n + i] = v;
            }
        }
        let x = Array2::from_shape_vec((n, p).f(), data).expect("shape matches buffer");
        let u: Array1<f64> = (0..n)
            .map(|_| noise_sd * rng.sample::<f64, _>(StandardNormal))
            .collect();
        let y = x.dot(&self.beta0) + &u;
        Dataset {
            x,
            y,
            beta0: self.beta0.clone(),
            u,
            rho: self.config.rho,
        }
    }
}

/// First replicate of `config`.
pub fn sample_dataset(config: &DgpConfig) -> Result<Dataset> {
    Ok(DataGenerator::new(*config)?.sample(0))
}

/// One Student-t draw built as `Z / sqrt(chi2_df / df)` from the same stream.
fn student_t<R: Rng + ?Sized>(rng: &mut R, chi: &ChiSquared<f64>, df: f64) -> f64 {
    let z: f64 = rng.sample(StandardNormal);
    let c = chi.sample(rng);
    z / (c / df).sqrt()
}

/// New user with `p` i.i.d. t(df) attributes and a report shifted by `lie`.
///
/// The draw depends only on `(seed, df)`: coordinates are generated in order, so
/// the vector for a smaller `p` is a prefix of the one for a larger `p`.
pub fn sample_new_user(p: usize, df: u32, lie: f64, seed: u64) -> Result<NewUser> {
    if p == 0 {
        return Err(Error::config("p must be positive"));
    }
    if df == 0 {
        return Err(Error::config("degrees of freedom must be at least 1"));
    }
    if !lie.is_finite() {
        return Err(Error::config("lie must be finite"));
    }
    let chi = ChiSquared::new(df as f64).map_err(|e| Error::config(e.to_string()))?;
    let mut rng = substream(seed, Domain::NewUser, &[df as u64], 0);
    let x_new: Vec<f64> = (0..p)
        .map(|_| student_t(&mut rng, &chi, df as f64))
        .collect();
    if x_new.iter().any(|v| !v.is_finite()) {
        return Err(Error::Numeric("non-finite t draw".into()));
    }
    let report = x_new.iter().map(|x| x + lie).collect();
    Ok(NewUser { x_new, report })
}

/// CSV with header `y,x1,...,xp`, shortest round-trip float formatting.
pub fn write_csv<W: Write>(x: &Array2<f64>, y: &Array1<f64>, writer: W) -> Result<()> {
    if x.nrows() != y.len() {
        return Err(Error::DimensionMismatch(format!(
            "x has {} rows, y has {} entries",
            x.nrows(),
            y.len()
        )));
    }
    let mut w = csv::Writer::from_writer(writer);
    let mut header = vec!["y".to_string()];
    header.extend((1..=x.ncols()).map(|j| format!("x{j}")));
    w.write_record(&header)?;
    let mut record = Vec::with_capacity(x.ncols() + 1);
    for (i, row) in x.rows().into_iter().enumerate() {
        record.clear();
        record.push(format!("{:?}", y[i]));
        record.extend(row.iter().map(|v| format!("{v:?}")));
        w.write_record(&record)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_csv<R: Read>(reader: R) -> Result<ObservedData> {
    let mut r = csv::Reader::from_reader(reader);
    let headers = r.headers()?.clone();
    if headers.is_empty() || headers.get(0).map(str::trim) != Some("y") {
        return Err(Error::Parse("first column must be named `y`".into()));
    }
    let p = headers.len() - 1;
    if p == 0 {
        return Err(Error::Parse("no covariate columns".into()));
    }
    let mut ys = Vec::new();
    let mut rows: Vec<f64> = Vec::new();
    for (line, rec) in r.records().enumerate() {
        let rec = rec?;
        if rec.len() != p + 1 {
            return Err(Error::Parse(format!(
                "row {} has {} fields, expected {}",
                line + 2,
                rec.len(),
                p + 1
            )));
        }
        for (k, field) in rec.iter().enumerate() {
            let v: f64 = field
                .trim()
                .parse()
                .map_err(|_| Error::Parse(format!("row {}: cannot parse `{field}`", line + 2)))?;
            if k == 0 {
                ys.push(v);
            } else {
                rows.push(v);
            }
        }
    }
    let n = ys.len();
    if n == 0 {
        return Err(Error::Parse("no observations".into()));
    }
    let row_major = Array2::from_shape_vec((n, p), rows).expect("row count checked");
    let mut x = Array2::zeros((n, p).f());
    x.assign(&row_major);
    Ok(ObservedData {
        x,
        y: Array1::from(ys),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn beta0_layout() {
        assert_eq!(
            build_beta0(10, 5).unwrap().to_vec(),
            vec![1., 0., 0., 0., 0., 0., 1., 1., 1., 1.]
        );
        assert_eq!(build_beta0(3, 3).unwrap().to_vec(), vec![1., 1., 1.]);
        assert_eq!(
            build_beta0(5, 1).unwrap().to_vec(),
            vec![1., 0., 0., 0., 0.]
        );
        assert!(matches!(build_beta0(3, 4), Err(Error::InvalidConfig(_))));
        assert!(matches!(build_beta0(3, 0), Err(Error::InvalidConfig(_))));
    }

    #[test]
    fn beta0_norm() {
        let b = build_beta0(100, 5).unwrap();
        assert_eq!(b.iter().filter(|v| **v != 0.0).count(), 5);
        assert!((b.dot(&b).sqrt() - 5f64.sqrt()).abs() < 1e-15);
    }

    #[test]
    fn toeplitz_values() {
        let s = toeplitz_sigma(3, 0.5).unwrap();
        assert_eq!(
            s,
            array![[1.0, 0.5, 0.25], [0.5, 1.0, 0.5], [0.25, 0.5, 1.0]]
        );
        assert_eq!(toeplitz_sigma(2, 0.0).unwrap(), Array2::<f64>::eye(2));
        assert!(toeplitz_sigma(3, 1.0).is_err());
        assert!(toeplitz_sigma(3, -1.5).is_err());
    }

    #[test]
    fn config_validation() {
        let mut c = DgpConfig::new(10, 20, 1);
        assert!(c.validate().is_ok());
        c.n = 1;
        assert!(c.validate().is_err());
        c = DgpConfig::new(10, 20, 1);
        c.rho = 1.0;
        assert!(c.validate().is_err());
        c = DgpConfig::new(4, 20, 1);
        assert!(c.validate().is_err());
    }

    #[test]
    fn new_user_lie_shift() {
        let truthful = sample_new_user(3, 3, 0.0, 11).unwrap();
        assert_eq!(truthful.report, truthful.x_new);
        let liar = sample_new_user(3, 3, 2.0, 11).unwrap();
        assert_eq!(liar.x_new, truthful.x_new);
        for (r, x) in liar.report.iter().zip(&liar.x_new) {
            assert_eq!(*r, x + 2.0);
        }
        let small = sample_new_user(3, 3, 0.2, 11).unwrap();
        assert_eq!(small.x_new, liar.x_new);
        assert_ne!(small.report, liar.report);
        assert!(sample_new_user(3, 0, 0.0, 11).is_err());
    }

    #[test]
    fn new_user_prefix_stable_across_p() {
        let short = sample_new_user(100, 3, 0.0, 5).unwrap();
        let long = sample_new_user(300, 3, 0.0, 5).unwrap();
        assert_eq!(short.x_new[..], long.x_new[..100]);
    }
}
