//! Lanczos with full reorthogonalization.

use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use super::{finish_low_rank, CurvEstimate, CurvatureOperator};
use crate::error::{Error, Result};
use crate::linalg::sym_eig_desc;

/// Draws a unit vector orthogonal to `basis`, or `None` if the basis spans the space.
pub(crate) fn random_orthogonal(rng: &mut ChaCha8Rng, dim: usize, basis: &[DVector<f64>]) -> Option<DVector<f64>> {
    if basis.len() >= dim {
        return None;
    }
    for _ in 0..8 {
        let mut v = DVector::from_fn(dim, |_, _| StandardNormal.sample(rng));
        let n0 = v.norm();
        for _ in 0..2 {
            for q in basis {
                let c = q.dot(&v);
                v.axpy(-c, q, 1.0);
            }
        }
        let n = v.norm();
        if n > 1e-8 * n0 {
            return Some(v / n);
        }
    }
    None
}

fn tridiagonal(alpha: &[f64], beta: &[f64]) -> DMatrix<f64> {
    let m = alpha.len();
    let mut t = DMatrix::zeros(m, m);
    for i in 0..m {
        t[(i, i)] = alpha[i];
        if i + 1 < m {
            t[(i, i + 1)] = beta[i];
            t[(i + 1, i)] = beta[i];
        }
    }
    t
}

/// Top-`rank` Ritz pairs of `op` from a seeded uniform-sphere start vector.
///
/// Stops when every wanted Ritz residual `|β yₘ|` is at most `tol·max|θ|`, when
/// the Krylov space fills the whole space, or after `max_iters` steps (at least
/// `rank`). An invariant subspace restarts the recurrence with a fresh random
/// vector orthogonal to the basis.
pub fn estimate_lanczos(op: &CurvatureOperator, rank: usize, seed: u64, tol: f64, max_iters: usize) -> Result<CurvEstimate> {
    lanczos(op, None, rank, seed, tol, max_iters)
}

/// [`estimate_lanczos`] started from the direction of `start`. A zero start
/// vector falls back to the seeded random one; `seed` also drives restarts.
pub fn estimate_lanczos_from(
    op: &CurvatureOperator,
    start: &[f64],
    rank: usize,
    seed: u64,
    tol: f64,
    max_iters: usize,
) -> Result<CurvEstimate> {
    if start.len() != op.dim() {
        return Err(Error::dim(format!("start vector has length {}, operator has {}", start.len(), op.dim())));
    }
    lanczos(op, Some(start), rank, seed, tol, max_iters)
}

fn lanczos(
    op: &CurvatureOperator,
    init: Option<&[f64]>,
    rank: usize,
    seed: u64,
    tol: f64,
    max_iters: usize,
) -> Result<CurvEstimate> {
    let p = op.dim();
    if rank == 0 || rank > p {
        return Err(Error::domain(format!("Lanczos rank {rank} outside [1, {p}]")));
    }
    let start = op.matvecs();
    let steps = max_iters.max(rank).min(p);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut q: Vec<DVector<f64>> = Vec::with_capacity(steps);
    let mut alpha = Vec::with_capacity(steps);
    let mut beta: Vec<f64> = Vec::with_capacity(steps);
    let given = init.map(DVector::from_column_slice).filter(|v| v.norm() > 0.0 && v.norm().is_finite());
    let mut v = match given {
        Some(v) => {
            let n = v.norm();
            v / n
        }
        None => random_orthogonal(&mut rng, p, &[]).expect("dimension is positive"),
    };
    let mut converged = false;
    let mut ritz: Option<(Vec<f64>, DMatrix<f64>)> = None;

    for j in 0..steps {
        let mut w = DVector::from_vec(op.apply(v.as_slice()));
        let a = v.dot(&w);
        w.axpy(-a, &v, 1.0);
        if j > 0 {
            w.axpy(-beta[j - 1], &q[j - 1], 1.0);
        }
        q.push(v.clone());
        for _ in 0..2 {
            for qi in &q {
                let c = qi.dot(&w);
                w.axpy(-c, qi, 1.0);
            }
        }
        alpha.push(a);
        let b = w.norm();
        let m = j + 1;

        let scale = alpha.iter().chain(&beta).fold(b, |acc, x| acc.max(x.abs()));
        let breakdown = b <= 1e-12 * scale || b == 0.0;

        if m >= rank {
            let (vals, vecs) = sym_eig_desc(&tridiagonal(&alpha, &beta));
            let top = vals.iter().take(rank).fold(0.0f64, |acc, x| acc.max(x.abs()));
            let ok = (0..rank).all(|i| (b * vecs[(m - 1, i)]).abs() <= tol * top);
            ritz = Some((vals, vecs));
            if ok || m == p {
                converged = true;
                break;
            }
        }
        if breakdown {
            beta.push(0.0);
            match random_orthogonal(&mut rng, p, &q) {
                Some(next) => v = next,
                None => break,
            }
        } else {
            beta.push(b);
            v = w / b;
        }
    }

    let (vals, vecs) = ritz.unwrap_or_else(|| sym_eig_desc(&tridiagonal(&alpha, &beta[..alpha.len() - 1])));
    let m = alpha.len();
    let qm = DMatrix::from_fn(p, m, |r, c| q[c][r]);
    let u = qm * vecs;
    Ok(CurvEstimate::LowRank(finish_low_rank(&vals, u, rank, converged, op.matvecs() - start)))
}
