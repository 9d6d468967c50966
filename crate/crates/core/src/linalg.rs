//! Small dense helpers: Cholesky factorization, dot products, compensated sums.

use ndarray::Array2;

use crate::error::{Error, Result};

/// Lower-triangular `L` with `L Lᵀ = a`.
pub fn cholesky_lower(a: &Array2<f64>) -> Result<Array2<f64>> {
    let (rows, cols) = a.dim();
    if rows != cols {
        return Err(Error::DimensionMismatch(format!(
            "cholesky needs a square matrix, got {rows}x{cols}"
        )));
    }
    let n = rows;
    let diag: Vec<f64> = (0..n).map(|i| a[[i, i]]).collect();
    let min_diag = diag.iter().cloned().fold(f64::INFINITY, f64::min);
    let max_diag = diag.iter().cloned().fold(f64::NEG_INFINITY, f64::max);

    let mut l = Array2::<f64>::zeros((n, n));
    for j in 0..n {
        let mut d = a[[j, j]];
        for k in 0..j {
            d -= l[[j, k]] * l[[j, k]];
        }
        if !(d > 0.0) || !d.is_finite() {
            return Err(Error::NotPositiveDefinite {
                pivot: j,
                value: d,
                min_diag,
                max_diag,
            });
        }
        let ljj = d.sqrt();
        l[[j, j]] = ljj;
        for i in (j + 1)..n {
            let mut s = a[[i, j]];
            for k in 0..j {
                s -= l[[i, k]] * l[[j, k]];
            }
            l[[i, j]] = s / ljj;
        }
    }
    Ok(l)
}

#[inline]
pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Neumaier-compensated accumulator.
#[derive(Debug, Clone, Copy, Default)]
pub struct CompensatedSum {
    sum: f64,
    comp: f64,
}

impl CompensatedSum {
    pub fn add(&mut self, x: f64) {
        let t = self.sum + x;
        if self.sum.abs() >= x.abs() {
            self.comp += (self.sum - t) + x;
        } else {
            self.comp += (x - t) + self.sum;
        }
        self.sum = t;
    }

    pub fn value(&self) -> f64 {
        self.sum + self.comp
    }
}

/// Compensated mean of an ordered sequence.
pub fn compensated_mean<I: IntoIterator<Item = f64>>(values: I) -> f64 {
    let mut acc = CompensatedSum::default();
    let mut count = 0usize;
    for v in values {
        acc.add(v);
        count += 1;
    }
    if count == 0 {
        f64::NAN
    } else {
        acc.value() / count as f64
    }
}
