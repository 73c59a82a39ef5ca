//! Plot-ready CSV artifacts. No plotting happens here.
//!
//! Schemas:
//!
//! * grid: `x, mean, std`
//! * ellipse: `level, center_0, center_1, semi_axis_0, semi_axis_1, angle,
//!   eigval_0, eigval_1, eigvec_0_x, eigvec_0_y, eigvec_1_x, eigvec_1_y`,
//!   one row per contour level, axes along the covariance eigenvectors
//!   (largest first) and `angle` the direction of the first axis in radians.

use std::path::{Path, PathBuf};

use laplace_core::linalg::sym_eig_desc;
use nalgebra::DMatrix;

use crate::error::{CliError, Result};
use crate::output::write_csv;

pub const GRID_HEADER: [&str; 3] = ["x", "mean", "std"];

pub const ELLIPSE_HEADER: [&str; 12] = [
    "level",
    "center_0",
    "center_1",
    "semi_axis_0",
    "semi_axis_1",
    "angle",
    "eigval_0",
    "eigval_1",
    "eigvec_0_x",
    "eigvec_0_y",
    "eigvec_1_x",
    "eigvec_1_y",
];

#[derive(Debug, Clone, PartialEq)]
pub enum Artifact {
    /// Predictive mean and standard deviation over a 1-D grid.
    Grid { name: String, x: Vec<f64>, mean: Vec<f64>, std: Vec<f64> },
    /// `k·σ` contours of a 2-D Gaussian for each `k` in `levels`.
    Ellipse { name: String, center: [f64; 2], cov: DMatrix<f64>, levels: Vec<f64> },
}

/// Rows of the ellipse table.
pub fn ellipse_rows(center: [f64; 2], cov: &DMatrix<f64>, levels: &[f64]) -> Result<Vec<Vec<f64>>> {
    if cov.shape() != (2, 2) {
        return Err(CliError::config(format!("ellipse covariance must be 2×2, got {:?}", cov.shape())));
    }
    let (vals, vecs) = sym_eig_desc(cov);
    if vals.iter().any(|v| !(*v >= 0.0)) {
        return Err(laplace_core::Error::Numerical("ellipse covariance is not positive semi-definite".into()).into());
    }
    let angle = vecs[(1, 0)].atan2(vecs[(0, 0)]);
    Ok(levels
        .iter()
        .map(|&k| {
            vec![
                k,
                center[0],
                center[1],
                k * vals[0].sqrt(),
                k * vals[1].sqrt(),
                angle,
                vals[0],
                vals[1],
                vecs[(0, 0)],
                vecs[(1, 0)],
                vecs[(0, 1)],
                vecs[(1, 1)],
            ]
        })
        .collect())
}

/// Writes one `<name>.csv` per artifact into `dir` and returns the paths.
pub fn emit_plot_data(artifacts: &[Artifact], dir: &Path) -> Result<Vec<PathBuf>> {
    let mut paths = Vec::with_capacity(artifacts.len());
    for a in artifacts {
        match a {
            Artifact::Grid { name, x, mean, std } => {
                if x.len() != mean.len() || x.len() != std.len() {
                    return Err(CliError::config(format!("grid `{name}` has ragged columns")));
                }
                let rows: Vec<Vec<f64>> = (0..x.len()).map(|i| vec![x[i], mean[i], std[i]]).collect();
                let path = dir.join(format!("{name}.csv"));
                write_csv(&path, &GRID_HEADER, &rows)?;
                paths.push(path);
            }
            Artifact::Ellipse { name, center, cov, levels } => {
                let path = dir.join(format!("{name}.csv"));
                write_csv(&path, &ELLIPSE_HEADER, &ellipse_rows(*center, cov, levels)?)?;
                paths.push(path);
            }
        }
    }
    Ok(paths)
}
