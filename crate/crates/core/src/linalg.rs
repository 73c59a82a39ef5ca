//! Dense helpers shared by the posterior, predictive and FSP modules.

use nalgebra::{DMatrix, DVector, SymmetricEigen};

use crate::error::{Error, Result};

/// Jitter schedule for Cholesky retries, relative to `mean(diag)`.
pub const JITTER_START: f64 = 1e-10;
pub const JITTER_MAX: f64 = 1e-6;

/// Lower Cholesky factor together with the jitter that was added.
#[derive(Debug, Clone)]
pub struct Cholesky {
    pub l: DMatrix<f64>,
    pub jitter: f64,
}

/// Plain Cholesky; on failure returns the index and value of the bad pivot.
fn cholesky_raw(a: &DMatrix<f64>, shift: f64) -> std::result::Result<DMatrix<f64>, (usize, f64)> {
    let n = a.nrows();
    let mut l = a.clone();
    for j in 0..n {
        l[(j, j)] += shift;
    }
    for j in 0..n {
        for k in 0..j {
            let ljk = l[(j, k)];
            if ljk != 0.0 {
                let (left, mut right) = l.columns_range_pair_mut(k, j);
                let src = left.rows_range(j..n);
                let mut dst = right.rows_range_mut(j..n);
                dst.axpy(-ljk, &src, 1.0);
            }
        }
        let d = l[(j, j)];
        if !(d > 0.0) || !d.is_finite() {
            return Err((j, d));
        }
        let s = d.sqrt();
        l[(j, j)] = s;
        for i in j + 1..n {
            l[(i, j)] /= s;
        }
    }
    for j in 0..n {
        for i in 0..j {
            l[(i, j)] = 0.0;
        }
    }
    Ok(l)
}

/// Cholesky with escalating diagonal jitter: no jitter first, then
/// `1e-10·mean(diag)` growing ×10 up to `1e-6·mean(diag)`.
pub fn cholesky_jittered(a: &DMatrix<f64>) -> Result<Cholesky> {
    let n = a.nrows();
    if n == 0 {
        return Ok(Cholesky { l: DMatrix::zeros(0, 0), jitter: 0.0 });
    }
    let mean_diag = a.diagonal().iter().map(|v| v.abs()).sum::<f64>() / n as f64;
    let scale = if mean_diag > 0.0 { mean_diag } else { 1.0 };
    let mut last = match cholesky_raw(a, 0.0) {
        Ok(l) => return Ok(Cholesky { l, jitter: 0.0 }),
        Err(p) => p,
    };
    let mut rel = JITTER_START;
    while rel <= JITTER_MAX * (1.0 + 1e-9) {
        let jitter = rel * scale;
        match cholesky_raw(a, jitter) {
            Ok(l) => return Ok(Cholesky { l, jitter }),
            Err(p) => last = p,
        }
        rel *= 10.0;
    }
    Err(Error::numerical(format!(
        "Cholesky failed after jitter {:.1e}·mean(diag): pivot {} = {:.3e}",
        JITTER_MAX, last.0, last.1
    )))
}

impl Cholesky {
    /// Solves `L Lᵀ x = b`.
    pub fn solve(&self, b: &[f64]) -> Vec<f64> {
        let y = self.solve_lower(b);
        self.solve_upper(&y)
    }

    /// Solves `L y = b`.
    pub fn solve_lower(&self, b: &[f64]) -> Vec<f64> {
        let n = b.len();
        let mut y = b.to_vec();
        for j in 0..n {
            y[j] /= self.l[(j, j)];
            let yj = y[j];
            if yj != 0.0 {
                let col = self.l.column(j);
                for i in j + 1..n {
                    y[i] -= col[i] * yj;
                }
            }
        }
        y
    }

    /// Solves `Lᵀ x = b`.
    pub fn solve_upper(&self, b: &[f64]) -> Vec<f64> {
        let n = b.len();
        let mut x = b.to_vec();
        for j in (0..n).rev() {
            let col = self.l.column(j);
            let mut s = x[j];
            for i in j + 1..n {
                s -= col[i] * x[i];
            }
            x[j] = s / col[j];
        }
        x
    }

    /// `L v`.
    pub fn mul_lower(&self, v: &[f64]) -> Vec<f64> {
        let n = v.len();
        let mut out = vec![0.0; n];
        for j in 0..n {
            let col = self.l.column(j);
            for i in j..n {
                out[i] += col[i] * v[j];
            }
        }
        out
    }

    pub fn log_det(&self) -> f64 {
        2.0 * self.l.diagonal().iter().map(|d| d.ln()).sum::<f64>()
    }
}

/// Symmetric eigendecomposition with eigenvalues sorted descending.
pub fn sym_eig_desc(a: &DMatrix<f64>) -> (Vec<f64>, DMatrix<f64>) {
    let n = a.nrows();
    if n == 0 {
        return (vec![], DMatrix::zeros(0, 0));
    }
    let sym = (a + a.transpose()) * 0.5;
    let eig = SymmetricEigen::new(sym);
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| eig.eigenvalues[j].total_cmp(&eig.eigenvalues[i]));
    let values = order.iter().map(|&i| eig.eigenvalues[i]).collect();
    let vectors = DMatrix::from_fn(n, n, |r, c| eig.eigenvectors[(r, order[c])]);
    (values, vectors)
}

/// Flips each column so that its first entry with magnitude above `1e-12`
/// is positive.
pub fn fix_signs(u: &mut DMatrix<f64>) {
    for mut col in u.column_iter_mut() {
        if let Some(first) = col.iter().copied().find(|v| v.abs() > 1e-12) {
            if first < 0.0 {
                col.neg_mut();
            }
        }
    }
}

/// Orthonormalizes the columns of `basis` against `against` (already
/// orthonormal) and each other with two passes of modified Gram–Schmidt.
/// Columns whose norm collapses below `drop_tol` times their original norm are dropped.
pub fn orthonormalize(against: &[DVector<f64>], basis: Vec<DVector<f64>>, drop_tol: f64) -> Vec<DVector<f64>> {
    let mut accepted: Vec<DVector<f64>> = Vec::new();
    for mut v in basis {
        let norm0 = v.norm();
        if norm0 == 0.0 {
            continue;
        }
        for _ in 0..2 {
            for q in against.iter().chain(accepted.iter()) {
                let c = q.dot(&v);
                v.axpy(-c, q, 1.0);
            }
        }
        let norm = v.norm();
        if norm > drop_tol * norm0 {
            accepted.push(v / norm);
        }
    }
    accepted
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}
