//! Locally optimal block preconditioned conjugate gradient (no preconditioner).

use nalgebra::DMatrix;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use super::{finish_low_rank, CurvEstimate, CurvatureOperator};
use crate::error::{Error, Result};
use crate::linalg::sym_eig_desc;

fn apply_block(op: &CurvatureOperator, x: &DMatrix<f64>) -> DMatrix<f64> {
    let mut out = DMatrix::zeros(x.nrows(), x.ncols());
    for (j, col) in x.column_iter().enumerate() {
        let y = op.apply(col.clone_owned().as_slice());
        out.column_mut(j).copy_from_slice(&y);
    }
    out
}

/// Orthonormalizes the columns of `v` through the eigendecomposition of its
/// scaled Gram matrix, applying the same transform to `av`. Near-dependent
/// directions are dropped.
fn svqb(v: &DMatrix<f64>, av: Option<&DMatrix<f64>>) -> (DMatrix<f64>, Option<DMatrix<f64>>) {
    let mut v = v.clone();
    let mut av = av.cloned();
    for _ in 0..2 {
        if v.ncols() == 0 {
            break;
        }
        let g = v.tr_mul(&v);
        let d: Vec<f64> = g.diagonal().iter().map(|x| if *x > 0.0 { x.sqrt().recip() } else { 0.0 }).collect();
        let scaled = DMatrix::from_fn(g.nrows(), g.ncols(), |i, j| d[i] * g[(i, j)] * d[j]);
        let (vals, vecs) = sym_eig_desc(&scaled);
        let top = vals.first().copied().unwrap_or(0.0);
        let keep: Vec<usize> = (0..vals.len()).filter(|&i| top > 0.0 && vals[i] > 1e-12 * top).collect();
        let c = DMatrix::from_fn(g.nrows(), keep.len(), |i, k| d[i] * vecs[(i, keep[k])] / vals[keep[k]].sqrt());
        v = &v * &c;
        av = av.map(|a| a * &c);
    }
    (v, av)
}

/// Removes the span of orthonormal `x` from `v` (twice) and mirrors it on `av`.
fn project_out(x: &DMatrix<f64>, ax: &DMatrix<f64>, v: &mut DMatrix<f64>, av: Option<&mut DMatrix<f64>>) {
    let c1 = x.tr_mul(v);
    *v -= x * &c1;
    let c2 = x.tr_mul(v);
    *v -= x * &c2;
    if let Some(av) = av {
        *av -= ax * (c1 + c2);
    }
}

fn hcat(blocks: &[&DMatrix<f64>]) -> DMatrix<f64> {
    let rows = blocks[0].nrows();
    let cols: usize = blocks.iter().map(|b| b.ncols()).sum();
    let mut out = DMatrix::zeros(rows, cols);
    let mut at = 0;
    for b in blocks {
        out.columns_mut(at, b.ncols()).copy_from(*b);
        at += b.ncols();
    }
    out
}

/// Top-`rank` eigenpairs by LOBPCG with block size `max(rank, block_size)`.
///
/// Converged when the residuals `‖C xᵢ − λᵢ xᵢ‖` of the wanted pairs are all at
/// most `tol·max|λ|`.
pub fn estimate_lobpcg(
    op: &CurvatureOperator,
    rank: usize,
    block_size: usize,
    seed: u64,
    tol: f64,
    max_iters: usize,
) -> Result<CurvEstimate> {
    let p = op.dim();
    if rank == 0 || rank > p {
        return Err(Error::domain(format!("LOBPCG rank {rank} outside [1, {p}]")));
    }
    let start = op.matvecs();
    let bs = block_size.max(rank).min(p);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let x0 = DMatrix::from_fn(p, bs, |_, _| StandardNormal.sample(&mut rng));
    let (mut x, _) = svqb(&x0, None);
    while x.ncols() < bs {
        let extra = DMatrix::from_fn(p, bs - x.ncols(), |_, _| StandardNormal.sample(&mut rng));
        let (x_ax, _) = svqb(&hcat(&[&x, &extra]), None);
        x = x_ax;
    }
    let mut ax = apply_block(op, &x);

    let (mut lam, c) = sym_eig_desc(&x.tr_mul(&ax));
    x = &x * &c;
    ax = &ax * &c;
    let mut dirs: Option<(DMatrix<f64>, DMatrix<f64>)> = None;
    let mut converged = false;

    for it in 0..=max_iters {
        let mut resid = ax.clone();
        for j in 0..bs {
            let xj = x.column(j).clone_owned();
            resid.column_mut(j).axpy(-lam[j], &xj, 1.0);
        }
        let norms: Vec<f64> = resid.column_iter().map(|c| c.norm()).collect();
        let scale = lam.iter().fold(0.0f64, |acc, l| acc.max(l.abs()));
        let thresh = tol * scale;
        if norms[..rank].iter().all(|&n| n <= thresh) {
            converged = true;
            break;
        }
        if it == max_iters {
            break;
        }
        let active: Vec<usize> = (0..bs).filter(|&j| norms[j] > thresh).collect();
        let mut w = DMatrix::from_fn(p, active.len(), |r, k| resid[(r, active[k])]);
        project_out(&x, &ax, &mut w, None);
        let (w, _) = svqb(&w, None);
        if w.ncols() == 0 {
            break;
        }
        let aw = apply_block(op, &w);

        let mut blocks = vec![x.clone(), w.clone()];
        let mut ablocks = vec![ax.clone(), aw.clone()];
        if let Some((mut pd, mut apd)) = dirs.take() {
            project_out(&x, &ax, &mut pd, Some(&mut apd));
            let cw1 = w.tr_mul(&pd);
            pd -= &w * &cw1;
            let cw2 = w.tr_mul(&pd);
            pd -= &w * &cw2;
            apd -= &aw * (cw1 + cw2);
            let (pd, apd) = svqb(&pd, Some(&apd));
            if pd.ncols() > 0 {
                blocks.push(pd);
                ablocks.push(apd.expect("transformed alongside"));
            }
        }
        let basis = hcat(&blocks.iter().collect::<Vec<_>>());
        let abasis = hcat(&ablocks.iter().collect::<Vec<_>>());
        let (vals, vecs) = sym_eig_desc(&basis.tr_mul(&abasis));
        let c = vecs.columns(0, bs).clone_owned();
        let new_x = &basis * &c;
        let new_ax = &abasis * &c;
        let tail = basis.ncols() - bs;
        let c_tail = c.rows(bs, tail).clone_owned();
        let pd = basis.columns(bs, tail) * &c_tail;
        let apd = abasis.columns(bs, tail) * &c_tail;
        dirs = Some((pd, apd));
        x = new_x;
        ax = new_ax;
        lam = vals[..bs].to_vec();
    }

    // Final Rayleigh–Ritz on the converged block for accurate pairs.
    let (xo, axo) = svqb(&x, Some(&ax));
    let axo = axo.expect("transformed alongside");
    let (vals, vecs) = sym_eig_desc(&xo.tr_mul(&axo));
    let u = xo * vecs;
    Ok(CurvEstimate::LowRank(finish_low_rank(&vals, u, rank, converged, op.matvecs() - start)))
}
