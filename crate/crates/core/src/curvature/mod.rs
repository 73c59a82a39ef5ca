//! Matrix-free curvature-vector products over a dataset and the structural
//! estimators (full, diagonal, low-rank) that compress them.

mod lanczos;
mod lobpcg;

pub use lanczos::{estimate_lanczos, estimate_lanczos_from};
pub use lobpcg::estimate_lobpcg;

use std::fmt;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::error::{Error, Result};
use crate::linalg::sym_eig_desc;
use crate::net::{
    backward, forward_trace, loss_grad_output, loss_hessian_output_vp, prepare_target, Batch, Dual, Linearization,
    LossKind, ModelSpec,
};
use crate::tensor::ParamMask;

/// Largest parameter count [`estimate_full`] materializes by default.
pub const DEFAULT_FULL_CAP: usize = 20_000;

/// Relative threshold below which low-rank eigenvalues are discarded.
pub const EPS_CLIP: f64 = 1e-10;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CurvatureKind {
    Hessian,
    Ggn,
    /// Wrapped dense matrix or user closure.
    Custom,
}

type ApplyFn = dyn Fn(&[f64]) -> Vec<f64> + Send + Sync;

/// A symmetric linear map `v ↦ C v` on parameter space.
///
/// Cloning is cheap and clones share the matvec counter.
#[derive(Clone)]
pub struct CurvatureOperator {
    dim: usize,
    kind: CurvatureKind,
    apply: Arc<ApplyFn>,
    matvecs: Arc<AtomicUsize>,
}

impl fmt::Debug for CurvatureOperator {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("CurvatureOperator")
            .field("dim", &self.dim)
            .field("kind", &self.kind)
            .field("matvecs", &self.matvecs())
            .finish()
    }
}

impl CurvatureOperator {
    pub fn from_fn(dim: usize, kind: CurvatureKind, f: impl Fn(&[f64]) -> Vec<f64> + Send + Sync + 'static) -> Self {
        Self { dim, kind, apply: Arc::new(f), matvecs: Arc::new(AtomicUsize::new(0)) }
    }

    /// Wraps a dense symmetric matrix.
    pub fn from_matrix(m: DMatrix<f64>) -> Result<Self> {
        if m.nrows() != m.ncols() {
            return Err(Error::dim(format!("operator matrix is {}×{}", m.nrows(), m.ncols())));
        }
        let dim = m.nrows();
        Ok(Self::from_fn(dim, CurvatureKind::Custom, move |v| {
            (&m * DVector::from_column_slice(v)).data.into()
        }))
    }

    pub fn identity(dim: usize) -> Self {
        Self::from_fn(dim, CurvatureKind::Custom, |v| v.to_vec())
    }

    pub fn zero(dim: usize) -> Self {
        Self::from_fn(dim, CurvatureKind::Custom, |v| vec![0.0; v.len()])
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn kind(&self) -> CurvatureKind {
        self.kind
    }

    /// `C v`. Panics if `v` has the wrong length.
    pub fn apply(&self, v: &[f64]) -> Vec<f64> {
        assert_eq!(v.len(), self.dim, "curvature operator applied to vector of wrong length");
        self.matvecs.fetch_add(1, Ordering::Relaxed);
        (self.apply)(v)
    }

    /// Number of [`apply`](Self::apply) calls so far.
    pub fn matvecs(&self) -> usize {
        self.matvecs.load(Ordering::Relaxed)
    }

    pub fn reset_matvecs(&self) {
        self.matvecs.store(0, Ordering::Relaxed);
    }

    /// The operator seen on the active coordinates of `mask`: `Pᵀ C P`.
    pub fn restrict(&self, mask: &ParamMask) -> Result<Self> {
        if mask.total() != self.dim {
            return Err(Error::dim(format!(
                "mask covers {} parameters, operator has {}",
                mask.total(),
                self.dim
            )));
        }
        if mask.is_all() {
            return Ok(Self::from_fn(self.dim, self.kind, {
                let inner = self.apply.clone();
                move |v| inner(v)
            }));
        }
        let inner = self.apply.clone();
        let mask = mask.clone();
        Ok(Self::from_fn(mask.dim(), self.kind, move |v| mask.restrict(&inner(&mask.embed(v)))))
    }
}

fn check_inputs(model: &ModelSpec, data: &[Batch], params: &[f64]) -> Result<()> {
    if params.len() != model.num_params() {
        return Err(Error::dim(format!(
            "parameter vector has length {}, model has {}",
            params.len(),
            model.num_params()
        )));
    }
    if data.is_empty() || data.iter().all(|b| b.is_empty()) {
        return Err(Error::domain("curvature needs at least one datum"));
    }
    for b in data {
        if b.inputs.shape()[1] != model.input_dim {
            return Err(Error::dim(format!(
                "batch inputs have width {}, model expects {}",
                b.inputs.shape()[1],
                model.input_dim
            )));
        }
    }
    Ok(())
}

struct Datum {
    lin: Linearization,
    target: Vec<f64>,
}

/// Generalized Gauss–Newton `Σₙ Jₙᵀ Λₙ Jₙ` at `params`, with `Λₙ` the loss
/// Hessian in function space. Forward traces are cached once.
pub fn ggn_vp(model: &ModelSpec, loss: LossKind, data: &[Batch], params: &[f64]) -> Result<CurvatureOperator> {
    check_inputs(model, data, params)?;
    let ops = model.ops();
    let mut batches: Vec<Vec<Datum>> = Vec::with_capacity(data.len());
    for b in data {
        let mut items = Vec::with_capacity(b.len());
        for i in 0..b.len() {
            let target = prepare_target(loss, b.target(i), model.output_dim)?;
            items.push(Datum { lin: Linearization::new(&ops, params, b.input(i)), target });
        }
        batches.push(items);
    }
    let model = model.clone();
    let params = params.to_vec();
    let p = params.len();
    Ok(CurvatureOperator::from_fn(p, CurvatureKind::Ggn, move |v| {
        let ops = model.ops();
        let mut total = vec![0.0; p];
        let mut partial = vec![0.0; p];
        for batch in &batches {
            partial.iter_mut().for_each(|x| *x = 0.0);
            for d in batch {
                let jv = d.lin.jvp(&ops, &params, v);
                let lam_jv = loss_hessian_output_vp(loss, d.lin.output(), &d.target, &jv);
                d.lin.vjp_into(&ops, &params, &lam_jv, &mut partial);
            }
            total.iter_mut().zip(&partial).for_each(|(t, x)| *t += x);
        }
        total
    }))
}

/// Exact Hessian of the summed loss, applied as the directional derivative of
/// the gradient (forward-over-reverse with dual numbers).
pub fn hessian_vp(model: &ModelSpec, loss: LossKind, data: &[Batch], params: &[f64]) -> Result<CurvatureOperator> {
    check_inputs(model, data, params)?;
    let mut batches: Vec<Vec<(Vec<f64>, Vec<f64>)>> = Vec::with_capacity(data.len());
    for b in data {
        let mut items = Vec::with_capacity(b.len());
        for i in 0..b.len() {
            let target = prepare_target(loss, b.target(i), model.output_dim)?;
            items.push((b.input(i).to_vec(), target));
        }
        batches.push(items);
    }
    let model = model.clone();
    let params = params.to_vec();
    let p = params.len();
    Ok(CurvatureOperator::from_fn(p, CurvatureKind::Hessian, move |v| {
        let ops = model.ops();
        let theta: Vec<Dual> = params.iter().zip(v).map(|(&t, &d)| Dual::new(t, d)).collect();
        let mut total = vec![0.0; p];
        let mut partial = vec![Dual::new(0.0, 0.0); p];
        for batch in &batches {
            partial.iter_mut().for_each(|x| *x = Dual::new(0.0, 0.0));
            for (x, target) in batch {
                let xs = x.iter().map(|&xi| Dual::new(xi, 0.0)).collect();
                let trace = forward_trace(&ops, &theta, xs);
                let g = loss_grad_output(loss, trace.last().expect("non-empty"), target);
                backward(&ops, &theta, &trace, g, &mut partial);
            }
            total.iter_mut().zip(&partial).for_each(|(t, x)| *t += x.d);
        }
        total
    }))
}

/// Low-rank eigendecomposition `U diag(S) Uᵀ`.
#[derive(Debug, Clone, PartialEq)]
pub struct LowRank {
    /// `P × R`, orthonormal columns.
    pub u: DMatrix<f64>,
    /// Descending, strictly positive.
    pub s: Vec<f64>,
    pub converged: bool,
    pub matvecs: usize,
}

impl LowRank {
    pub fn rank(&self) -> usize {
        self.s.len()
    }

    /// `U diag(S) Uᵀ v`.
    pub fn apply(&self, v: &[f64]) -> Vec<f64> {
        let mut c = self.u.tr_mul(&DVector::from_column_slice(v));
        c.iter_mut().zip(&self.s).for_each(|(ci, si)| *ci *= si);
        (&self.u * c).data.into()
    }
}

/// Compressed curvature.
#[derive(Debug, Clone, PartialEq)]
pub enum CurvEstimate {
    Full { matrix: DMatrix<f64>, matvecs: usize },
    Diagonal { diag: Vec<f64>, matvecs: usize },
    LowRank(LowRank),
}

impl CurvEstimate {
    pub fn dim(&self) -> usize {
        match self {
            CurvEstimate::Full { matrix, .. } => matrix.nrows(),
            CurvEstimate::Diagonal { diag, .. } => diag.len(),
            CurvEstimate::LowRank(lr) => lr.u.nrows(),
        }
    }

    pub fn rank(&self) -> usize {
        match self {
            CurvEstimate::LowRank(lr) => lr.rank(),
            _ => self.dim(),
        }
    }

    pub fn kind_name(&self) -> &'static str {
        match self {
            CurvEstimate::Full { .. } => "full",
            CurvEstimate::Diagonal { .. } => "diagonal",
            CurvEstimate::LowRank(_) => "low_rank",
        }
    }

    pub fn converged(&self) -> bool {
        match self {
            CurvEstimate::LowRank(lr) => lr.converged,
            _ => true,
        }
    }

    pub fn matvecs(&self) -> usize {
        match self {
            CurvEstimate::Full { matvecs, .. } | CurvEstimate::Diagonal { matvecs, .. } => *matvecs,
            CurvEstimate::LowRank(lr) => lr.matvecs,
        }
    }

    /// `C̃ v` for the compressed curvature.
    pub fn apply(&self, v: &[f64]) -> Vec<f64> {
        match self {
            CurvEstimate::Full { matrix, .. } => (matrix * DVector::from_column_slice(v)).data.into(),
            CurvEstimate::Diagonal { diag, .. } => diag.iter().zip(v).map(|(d, x)| d * x).collect(),
            CurvEstimate::LowRank(lr) => lr.apply(v),
        }
    }

    /// JSON `{"kind", "dim", "data", "rank", "converged", "matvecs"}`.
    pub fn to_json_value(&self) -> Value {
        let data = match self {
            CurvEstimate::Full { matrix, .. } => rows_json(matrix),
            CurvEstimate::Diagonal { diag, .. } => json!(diag),
            CurvEstimate::LowRank(lr) => json!({ "u": rows_json(&lr.u), "s": lr.s }),
        };
        json!({
            "kind": self.kind_name(),
            "dim": self.dim(),
            "data": data,
            "rank": self.rank(),
            "converged": self.converged(),
            "matvecs": self.matvecs(),
        })
    }

    pub fn to_json(&self) -> Result<String> {
        crate::net::to_json_17(&self.to_json_value())
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let v: Value = serde_json::from_str(s)?;
        Self::from_json_value(&v)
    }

    pub fn from_json_value(v: &Value) -> Result<Self> {
        let bad = |what: &str| Error::domain(format!("curvature estimate JSON: {what}"));
        let kind = v["kind"].as_str().ok_or_else(|| bad("missing kind"))?;
        let dim = v["dim"].as_u64().ok_or_else(|| bad("missing dim"))? as usize;
        let matvecs = v["matvecs"].as_u64().unwrap_or(0) as usize;
        let data = &v["data"];
        match kind {
            "full" => {
                let matrix = matrix_from_rows(data, dim).ok_or_else(|| bad("malformed full data"))?;
                if matrix.ncols() != dim {
                    return Err(bad("full matrix is not square"));
                }
                Ok(CurvEstimate::Full { matrix, matvecs })
            }
            "diagonal" => {
                let diag = f64_vec(data).ok_or_else(|| bad("malformed diagonal data"))?;
                if diag.len() != dim {
                    return Err(bad("diagonal length differs from dim"));
                }
                Ok(CurvEstimate::Diagonal { diag, matvecs })
            }
            "low_rank" => {
                let s = f64_vec(&data["s"]).ok_or_else(|| bad("malformed eigenvalues"))?;
                let u = matrix_from_rows(&data["u"], dim).ok_or_else(|| bad("malformed eigenvectors"))?;
                let u = if dim > 0 && u.ncols() == 0 { DMatrix::zeros(dim, s.len()) } else { u };
                if u.ncols() != s.len() {
                    return Err(bad("eigenvector count differs from eigenvalue count"));
                }
                let converged = v["converged"].as_bool().unwrap_or(false);
                Ok(CurvEstimate::LowRank(LowRank { u, s, converged, matvecs }))
            }
            other => Err(bad(&format!("unknown kind `{other}`"))),
        }
    }
}

fn rows_json(m: &DMatrix<f64>) -> Value {
    Value::Array((0..m.nrows()).map(|i| json!(m.row(i).iter().copied().collect::<Vec<f64>>())).collect())
}

fn f64_vec(v: &Value) -> Option<Vec<f64>> {
    v.as_array()?.iter().map(Value::as_f64).collect()
}

fn matrix_from_rows(v: &Value, rows: usize) -> Option<DMatrix<f64>> {
    let arr = v.as_array()?;
    if arr.len() != rows {
        return None;
    }
    let parsed: Vec<Vec<f64>> = arr.iter().map(f64_vec).collect::<Option<_>>()?;
    let cols = parsed.first().map_or(0, Vec::len);
    if parsed.iter().any(|r| r.len() != cols) {
        return None;
    }
    Some(DMatrix::from_fn(rows, cols, |i, j| parsed[i][j]))
}

/// Materializes the operator column by column and symmetrizes it.
pub fn estimate_full(op: &CurvatureOperator) -> Result<CurvEstimate> {
    estimate_full_capped(op, DEFAULT_FULL_CAP)
}

pub fn estimate_full_capped(op: &CurvatureOperator, cap: usize) -> Result<CurvEstimate> {
    let p = op.dim();
    if p > cap {
        return Err(Error::Resource(format!(
            "full curvature of dimension {p} exceeds the cap of {cap}; use a low-rank estimate"
        )));
    }
    let mut m = DMatrix::zeros(p, p);
    let mut e = vec![0.0; p];
    for i in 0..p {
        e[i] = 1.0;
        let col = op.apply(&e);
        m.column_mut(i).copy_from_slice(&col);
        e[i] = 0.0;
    }
    let matrix = (&m + m.transpose()) * 0.5;
    Ok(CurvEstimate::Full { matrix, matvecs: p })
}

/// Exact diagonal from basis-vector products.
pub fn estimate_diagonal(op: &CurvatureOperator) -> CurvEstimate {
    let p = op.dim();
    let mut diag = vec![0.0; p];
    let mut e = vec![0.0; p];
    for i in 0..p {
        e[i] = 1.0;
        diag[i] = op.apply(&e)[i];
        e[i] = 0.0;
    }
    CurvEstimate::Diagonal { diag, matvecs: p }
}

/// Keeps the top `rank` pairs, drops eigenvalues below `EPS_CLIP·max` and
/// applies the sign convention.
pub(crate) fn finish_low_rank(values: &[f64], vectors: DMatrix<f64>, rank: usize, converged: bool, matvecs: usize) -> LowRank {
    let top = values.iter().take(rank).copied().fold(f64::NEG_INFINITY, f64::max);
    let keep: Vec<usize> = (0..rank.min(values.len()))
        .filter(|&i| top > 0.0 && values[i] > EPS_CLIP * top)
        .collect();
    let mut u = DMatrix::from_fn(vectors.nrows(), keep.len(), |r, c| vectors[(r, keep[c])]);
    crate::linalg::fix_signs(&mut u);
    LowRank { u, s: keep.iter().map(|&i| values[i]).collect(), converged, matvecs }
}

/// Dense eigendecomposition of a full estimate, truncated like the iterative solvers.
pub fn low_rank_from_full(full: &DMatrix<f64>, rank: usize) -> LowRank {
    let (vals, vecs) = sym_eig_desc(full);
    finish_low_rank(&vals, vecs, rank, true, 0)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_operator_materializes_to_zero() {
        let op = CurvatureOperator::zero(3);
        let CurvEstimate::Full { matrix, .. } = estimate_full(&op).unwrap() else { panic!() };
        assert_eq!(matrix, DMatrix::zeros(3, 3));
    }

    #[test]
    fn full_cap_is_enforced() {
        let op = CurvatureOperator::identity(5);
        assert!(matches!(estimate_full_capped(&op, 4), Err(Error::Resource(_))));
    }

    #[test]
    fn json_round_trip() {
        let lr = LowRank {
            u: DMatrix::from_row_slice(2, 1, &[0.6, 0.8]),
            s: vec![2.5],
            converged: true,
            matvecs: 7,
        };
        let est = CurvEstimate::LowRank(lr);
        let back = CurvEstimate::from_json(&est.to_json().unwrap()).unwrap();
        assert_eq!(back, est);
        let d = CurvEstimate::Diagonal { diag: vec![1.0, 0.1], matvecs: 2 };
        assert_eq!(CurvEstimate::from_json(&d.to_json().unwrap()).unwrap(), d);
    }

    #[test]
    fn restrict_picks_submatrix() {
        let m = DMatrix::from_row_slice(3, 3, &[1.0, 2.0, 3.0, 2.0, 4.0, 5.0, 3.0, 5.0, 6.0]);
        let op = CurvatureOperator::from_matrix(m).unwrap();
        let mask = ParamMask::from_indices(3, vec![0, 2]).unwrap();
        let r = op.restrict(&mask).unwrap();
        assert_eq!(r.apply(&[1.0, 0.0]), vec![1.0, 3.0]);
        assert_eq!(r.apply(&[0.0, 1.0]), vec![3.0, 6.0]);
    }
}
