#![allow(dead_code)]

use ndarray::{Array1, Array2, ShapeBuilder};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Gaussian design with a sparse signal plus unit noise.
pub fn random_instance(rng: &mut ChaCha8Rng, n: usize, p: usize) -> (Array2<f64>, Array1<f64>) {
    let mut x = Array2::<f64>::zeros((n, p).f());
    x.iter_mut().for_each(|v| *v = rng.sample(StandardNormal));
    let beta: Vec<f64> = (0..p)
        .map(|j| {
            if j < 3.min(p) {
                rng.random_range(-2.0..2.0)
            } else {
                0.0
            }
        })
        .collect();
    let y = Array1::from_shape_fn(n, |i| {
        let signal: f64 = (0..p).map(|j| x[[i, j]] * beta[j]).sum();
        signal + rng.sample::<f64, _>(StandardNormal)
    });
    (x, y)
}

/// `(1/n)‖y − Xβ‖² + 2λ Σ w_j |β_j|`, written out directly.
pub fn reference_objective(
    x: &Array2<f64>,
    y: &Array1<f64>,
    lambda: f64,
    w: &[f64],
    beta: &[f64],
) -> f64 {
    let (n, p) = x.dim();
    let mut rss = 0.0;
    for i in 0..n {
        let mut fit = 0.0;
        for j in 0..p {
            fit += x[[i, j]] * beta[j];
        }
        rss += (y[i] - fit).powi(2);
    }
    let pen: f64 = (0..p).map(|j| w[j] * beta[j].abs()).sum();
    rss / n as f64 + 2.0 * lambda * pen
}

/// Solves `XᵀX β = Xᵀy` by Gaussian elimination with partial pivoting.
pub fn normal_equations(x: &Array2<f64>, y: &Array1<f64>) -> Vec<f64> {
    let (n, p) = x.dim();
    let mut a = vec![vec![0.0; p + 1]; p];
    for r in 0..p {
        for c in 0..p {
            a[r][c] = (0..n).map(|i| x[[i, r]] * x[[i, c]]).sum();
        }
        a[r][p] = (0..n).map(|i| x[[i, r]] * y[i]).sum();
    }
    for col in 0..p {
        let pivot = (col..p)
            .max_by(|&i, &j| a[i][col].abs().partial_cmp(&a[j][col].abs()).unwrap())
            .unwrap();
        a.swap(col, pivot);
        for r in col + 1..p {
            let f = a[r][col] / a[col][col];
            for c in col..=p {
                a[r][c] -= f * a[col][c];
            }
        }
    }
    let mut b = vec![0.0; p];
    for r in (0..p).rev() {
        let s: f64 = (r + 1..p).map(|c| a[r][c] * b[c]).sum();
        b[r] = (a[r][p] - s) / a[r][r];
    }
    b
}

/// Pattern search over shrinking lattices, with every coordinate also tried
/// at exactly zero. Good to far below 1e-8 in objective for p ≤ 3.
pub fn grid_search(x: &Array2<f64>, y: &Array1<f64>, lambda: f64, w: &[f64]) -> (Vec<f64>, f64) {
    let p = x.ncols();
    assert!(p <= 3);
    let f = |b: &[f64]| reference_objective(x, y, lambda, w, b);
    let mut best = vec![0.0; p];
    let mut best_val = f(&best);
    let mut h = 4.0;
    let half = 3i64;
    let side = (2 * half + 1) as usize;
    let total = side.pow(p as u32);
    let mut rounds = 0;
    while h > 1e-11 && rounds < 20_000 {
        rounds += 1;
        let center = best.clone();
        let mut moved = false;
        let mut cand = vec![0.0; p];
        for code in 0..total {
            let mut c = code;
            for j in 0..p {
                let k = (c % side) as i64 - half;
                c /= side;
                cand[j] = center[j] + k as f64 * h;
            }
            for mask in 0..(1usize << p) {
                let mut trial = cand.clone();
                for (j, t) in trial.iter_mut().enumerate() {
                    if mask & (1 << j) != 0 {
                        *t = 0.0;
                    }
                }
                let v = f(&trial);
                if v < best_val - 1e-16 {
                    best_val = v;
                    best = trial;
                    moved = true;
                }
            }
        }
        if !moved {
            h /= 2.0;
        }
    }
    (best, best_val)
}

pub fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y).abs())
        .fold(0.0, f64::max)
}
