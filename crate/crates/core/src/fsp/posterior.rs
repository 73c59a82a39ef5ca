//! Low-rank linearised posterior under a function-space prior.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::{ContextSet, GpPrior};
use crate::curvature::{estimate_lanczos_from, CurvEstimate, CurvatureOperator, EPS_CLIP};
use crate::error::{Error, Result};
use crate::net::{check_lengths, loss_hessian_output_vp, prepare_target, Batch, Linearization, LossKind, ModelSpec};
use crate::pushforward::OutputGaussian;
use crate::tensor::FlatVector;

/// Relative slack on the variance bound so it survives any summation order.
const BOUND_MARGIN: f64 = 1e-10;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FspPosteriorConfig {
    /// Largest Lanczos rank on the context gram matrix.
    pub max_rank: usize,
    pub tol: f64,
    pub seed: u64,
    /// Gaussian noise variance for mse data terms.
    pub obs_noise: f64,
}

impl Default for FspPosteriorConfig {
    fn default() -> Self {
        Self { max_rank: 500, tol: 1e-10, seed: 0, obs_noise: 1.0 }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FspDiagnostics {
    /// Retained Lanczos pairs of `K(C, C)`.
    pub lanczos_rank: usize,
    pub lanczos_converged: bool,
    /// Retained singular directions of `M`.
    pub svd_rank: usize,
    /// Retained eigenvalues of `A`, ascending.
    pub eigenvalues: Vec<f64>,
    /// Only the empty covariance met the variance bound.
    pub bound_unsatisfied: bool,
}

/// `N(θ*, S Sᵀ)` with `S` the truncated factor.
#[derive(Debug, Clone)]
pub struct FspPosterior {
    pub theta: FlatVector,
    /// `P × (r − k)` factor.
    pub s: DMatrix<f64>,
    /// Number of leading (largest-variance) directions dropped.
    pub k: usize,
    /// Rank before truncation.
    pub rank: usize,
    pub diagnostics: FspDiagnostics,
}

impl FspPosterior {
    /// `S Sᵀ v`.
    pub fn cov_vp(&self, v: &[f64]) -> FlatVector {
        let c = self.s.tr_mul(&DVector::from_column_slice(v));
        (&self.s * c).data.into()
    }

    /// `N(f(x, θ*), J S Sᵀ Jᵀ)`.
    pub fn output_gaussian(&self, model: &ModelSpec, x: &[f64]) -> Result<OutputGaussian> {
        check_lengths(model, &self.theta, x)?;
        let (jac, out) = jacobian_rows(model, &self.theta, std::slice::from_ref(&x.to_vec()));
        let g = jac * &self.s;
        Ok(OutputGaussian { mean: out.into_iter().next().expect("one point"), cov: &g * g.transpose() })
    }

    /// Marginal output variances at each point (`n × C`).
    pub fn output_variances(&self, model: &ModelSpec, xs: &[Vec<f64>]) -> Result<Vec<Vec<f64>>> {
        for x in xs {
            check_lengths(model, &self.theta, x)?;
        }
        let c = model.output_dim;
        let (jac, _) = jacobian_rows(model, &self.theta, xs);
        let g = jac * &self.s;
        Ok((0..xs.len())
            .map(|i| (0..c).map(|k| g.row(i * c + k).iter().map(|v| v * v).sum()).collect())
            .collect())
    }

    /// `n` draws `θ* + S ε`.
    pub fn sample(&self, seed: u64, n: usize) -> Result<Vec<FlatVector>> {
        if n == 0 {
            return Err(Error::domain("sample count must be at least 1"));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Ok((0..n)
            .map(|_| {
                let eps = DVector::from_fn(self.s.ncols(), |_, _| StandardNormal.sample(&mut rng));
                let d = &self.s * eps;
                self.theta.iter().zip(d.iter()).map(|(t, x)| t + x).collect()
            })
            .collect())
    }
}

/// Jacobian rows at every point (row `i·C + k` is output `k` at point `i`) and
/// the outputs.
fn jacobian_rows(model: &ModelSpec, params: &[f64], xs: &[Vec<f64>]) -> (DMatrix<f64>, Vec<Vec<f64>>) {
    let ops = model.ops();
    let c = model.output_dim;
    let p = params.len();
    let mut jac = DMatrix::zeros(xs.len() * c, p);
    let mut outs = Vec::with_capacity(xs.len());
    let mut row = vec![0.0; p];
    let mut e = vec![0.0; c];
    for (i, x) in xs.iter().enumerate() {
        let lin = Linearization::new(&ops, params, x);
        for k in 0..c {
            e.iter_mut().for_each(|v| *v = 0.0);
            e[k] = 1.0;
            row.iter_mut().for_each(|v| *v = 0.0);
            lin.vjp_into(&ops, params, &e, &mut row);
            for (j, v) in row.iter().enumerate() {
                jac[(i * c + k, j)] = *v;
            }
        }
        outs.push(lin.output().to_vec());
    }
    (jac, outs)
}

/// Builds the posterior in eight steps:
///
/// 1. `v = J(C)1 / ‖J(C)1‖`;
/// 2. Lanczos on `K(C, C)` from `v`, giving `L` with `L Lᵀ ≈ K⁻¹`;
/// 3. `M = J(C)ᵀ L`;
/// 4. `U_M, D_M = svd(M)`;
/// 5. `A = D_M² + Σᵢ U_Mᵀ Jᵢᵀ Λᵢ Jᵢ U_M`;
/// 6. `U_A, D_A = eig(A)`, ascending;
/// 7. `S = U_M U_A D_A^{−1/2}`;
/// 8. drop the first `k` columns, with `k` the smallest index whose remaining
///    covariance has marginal variance at most the prior variance at every
///    context point.
///
/// Eigen- and singular values below `1e−10` of the largest are discarded.
pub fn fsp_posterior(
    model: &ModelSpec,
    prior: &GpPrior,
    context: &ContextSet,
    data: &[Batch],
    loss: LossKind,
    params: &[f64],
    cfg: &FspPosteriorConfig,
) -> Result<FspPosterior> {
    prior.validate()?;
    if context.is_empty() {
        return Err(Error::domain("context set needs at least one point"));
    }
    if !(cfg.obs_noise > 0.0) {
        return Err(Error::domain(format!("observation noise must be positive, got {}", cfg.obs_noise)));
    }
    for x in &context.points {
        check_lengths(model, params, x)?;
    }
    let c = model.output_dim;
    let nc = context.len();
    let p = params.len();

    let (jc, _) = jacobian_rows(model, params, &context.points);
    let kcc = prior.covariance(&context.points);

    // Steps 1–2.
    let start: Vec<f64> = (0..nc).map(|i| (0..c).map(|k| jc.row(i * c + k).sum()).sum()).collect();
    let rank = nc.min(cfg.max_rank.max(1));
    let op = CurvatureOperator::from_matrix(kcc.clone())?;
    let CurvEstimate::LowRank(lr) = estimate_lanczos_from(&op, &start, rank, cfg.seed, cfg.tol, rank)? else {
        unreachable!("Lanczos returns a low-rank estimate")
    };
    if lr.s.is_empty() {
        return Err(Error::Degenerate("context gram matrix has no positive eigenvalues".into()));
    }
    let l = &lr.u * DMatrix::from_diagonal(&DVector::from_iterator(lr.s.len(), lr.s.iter().map(|s| s.powf(-0.5))));
    let r_l = l.ncols();

    // Steps 3–4.
    let mut m = DMatrix::zeros(p, c * r_l);
    for k in 0..c {
        let rows: Vec<usize> = (0..nc).map(|i| i * c + k).collect();
        let jk = jc.select_rows(&rows);
        m.columns_mut(k * r_l, r_l).copy_from(&jk.tr_mul(&l));
    }
    let svd = m.svd(true, false);
    let u_full = svd.u.expect("requested U");
    let top_sv2 = svd.singular_values.iter().fold(0.0f64, |a, s| a.max(s * s));
    let keep: Vec<usize> = (0..svd.singular_values.len())
        .filter(|&i| {
            let s2 = svd.singular_values[i] * svd.singular_values[i];
            top_sv2 > 0.0 && s2 > EPS_CLIP * top_sv2
        })
        .collect();
    if keep.is_empty() {
        return Err(Error::Degenerate("J(C)ᵀL vanishes; the prior constrains no parameter direction".into()));
    }
    let u_m = u_full.select_columns(&keep);
    let q = keep.len();

    // Step 5.
    let mut a = DMatrix::from_diagonal(&DVector::from_iterator(
        q,
        keep.iter().map(|&i| svd.singular_values[i] * svd.singular_values[i]),
    ));
    let inv_s2 = match loss {
        LossKind::Mse => 1.0 / cfg.obs_noise,
        LossKind::CrossEntropy => 1.0,
    };
    for batch in data {
        let xs: Vec<Vec<f64>> = (0..batch.len()).map(|i| batch.input(i).to_vec()).collect();
        for x in &xs {
            check_lengths(model, params, x)?;
        }
        let (jx, outs) = jacobian_rows(model, params, &xs);
        let g = jx * &u_m;
        for (i, out) in outs.iter().enumerate() {
            let target = prepare_target(loss, batch.target(i), c)?;
            let gi = g.rows(i * c, c);
            let mut lam = DMatrix::zeros(c, c);
            let mut e = vec![0.0; c];
            for k in 0..c {
                e.iter_mut().for_each(|v| *v = 0.0);
                e[k] = 1.0;
                let col = loss_hessian_output_vp(loss, out, &target, &e);
                for (j, v) in col.into_iter().enumerate() {
                    lam[(j, k)] = v * inv_s2;
                }
            }
            a += gi.transpose() * lam * gi;
        }
    }
    let a = (&a + a.transpose()) * 0.5;

    // Steps 6–7.
    let eig = SymmetricEigen::new(a);
    let mut order: Vec<usize> = (0..q).collect();
    order.sort_by(|&i, &j| eig.eigenvalues[i].total_cmp(&eig.eigenvalues[j]));
    let top = eig.eigenvalues.iter().fold(0.0f64, |acc, v| acc.max(v.abs()));
    let kept: Vec<usize> = order.into_iter().filter(|&i| eig.eigenvalues[i] > EPS_CLIP * top).collect();
    if kept.is_empty() {
        return Err(Error::Degenerate("A has no positive eigenvalues".into()));
    }
    let d_a: Vec<f64> = kept.iter().map(|&i| eig.eigenvalues[i]).collect();
    let u_a = eig.eigenvectors.select_columns(&kept);
    let scale = DMatrix::from_diagonal(&DVector::from_iterator(d_a.len(), d_a.iter().map(|d| d.powf(-0.5))));
    let s = &u_m * u_a * scale;
    let r = s.ncols();

    // Step 8.
    let b = &jc * &s;
    let mut k_trunc = 0;
    for i in 0..nc {
        let bound = kcc[(i, i)];
        for kk in 0..c {
            let row = b.row(i * c + kk);
            let mut tail = 0.0;
            let mut need = 0;
            for j in (0..r).rev() {
                tail += row[j] * row[j];
                if tail * (1.0 + BOUND_MARGIN) > bound {
                    need = j + 1;
                    break;
                }
            }
            k_trunc = k_trunc.max(need);
        }
    }
    let s_trunc = s.columns(k_trunc, r - k_trunc).into_owned();
    Ok(FspPosterior {
        theta: params.to_vec(),
        s: s_trunc,
        k: k_trunc,
        rank: r,
        diagnostics: FspDiagnostics {
            lanczos_rank: r_l,
            lanczos_converged: lr.converged,
            svd_rank: q,
            eigenvalues: d_a,
            bound_unsatisfied: k_trunc == r,
        },
    })
}
