//! Curvature, calibration and evaluation of a Laplace posterior around a
//! trained checkpoint.

use std::path::Path;

use laplace_core::calibration::{grid_search, gradient_calibrate, CalibResult, Direction, GdConfig};
use laplace_core::curvature::{
    estimate_diagonal, estimate_full, estimate_lanczos, estimate_lobpcg, ggn_vp, hessian_vp, CurvEstimate, CurvatureKind,
};
use laplace_core::evidence::lml_objective_masked;
use laplace_core::metrics::{categorical_nll, ece, mean_crps, mean_gaussian_nll, ECE_BINS};
use laplace_core::net::{softmax, Batch, LossKind, ModelSpec};
use laplace_core::posterior::{posterior_fn, Hyperparams, PosteriorState};
use laplace_core::predictive::{LogitGaussian, PredictiveKind};
use laplace_core::pushforward::{linear_pushforward, nonlinear_pushforward_batch};
use laplace_core::tensor::ParamMask;

use crate::config::{CalibSpec, CurvStructure, ExperimentConfig, LaplaceConfig, MaskKind, Objective, Pushforward, SearchMethod};
use crate::data::Dataset;
use crate::error::{CliError, Result};
use crate::output::{write_table, Cell};

/// Model, MAP weights and loss of a trained network.
#[derive(Debug, Clone)]
pub struct Map {
    pub model: ModelSpec,
    pub theta: Vec<f64>,
    pub loss: LossKind,
}

/// A curvature estimate over the masked coordinates.
#[derive(Debug, Clone)]
pub struct Fit {
    pub structure: CurvStructure,
    pub estimate: CurvEstimate,
    pub mask: Option<ParamMask>,
}

impl Fit {
    pub fn posterior(&self, hp: Hyperparams) -> Result<PosteriorState> {
        let post = posterior_fn(&self.estimate, hp)?;
        Ok(match &self.mask {
            Some(m) => post.with_mask(m.clone())?,
            None => post,
        })
    }
}

/// Builds the curvature operator on the training data and compresses it.
pub fn fit_curvature(
    map: &Map,
    train: &Batch,
    structure: CurvStructure,
    kind: CurvatureKind,
    mask: MaskKind,
    lc: &LaplaceConfig,
    seed: u64,
) -> Result<Fit> {
    let data = std::slice::from_ref(train);
    let op = match kind {
        CurvatureKind::Ggn => ggn_vp(&map.model, map.loss, data, &map.theta)?,
        CurvatureKind::Hessian => hessian_vp(&map.model, map.loss, data, &map.theta)?,
        CurvatureKind::Custom => return Err(CliError::config("laplace.curvature must be `ggn` or `hessian`")),
    };
    let (op, mask) = match mask {
        MaskKind::All => (op, None),
        MaskKind::LastLayer => {
            let m = ParamMask::subtree(&map.model.template(), &map.model.last_layer_path())?;
            (op.restrict(&m)?, Some(m))
        }
    };
    let p = op.dim();
    let rank = lc.rank.min(p);
    let estimate = match structure {
        CurvStructure::Full => estimate_full(&op)?,
        CurvStructure::Diagonal => estimate_diagonal(&op),
        CurvStructure::Lanczos => estimate_lanczos(&op, rank, seed, lc.tol, lc.max_iters)?,
        CurvStructure::Lobpcg => estimate_lobpcg(&op, rank, lc.block_size, seed, lc.tol, lc.max_iters)?,
    };
    Ok(Fit { structure, estimate, mask })
}

/// Predictive moments or class probabilities on a set of inputs.
#[derive(Debug, Clone, PartialEq)]
pub enum Predictions {
    /// Mean and total variance (function variance plus `σ²`).
    Regression { mean: Vec<f64>, var: Vec<f64> },
    Classification { probs: Vec<Vec<f64>> },
}

/// How to carry the posterior to outputs.
#[derive(Debug, Clone, Copy)]
pub struct PredictSettings {
    pub pushforward: Pushforward,
    pub predictive: PredictiveKind,
    pub samples: usize,
    pub seed: u64,
}

/// Function mean and variance of a single-output model at each input.
pub fn function_moments(map: &Map, post: &PosteriorState, xs: &[Vec<f64>], ps: &PredictSettings) -> Result<(Vec<f64>, Vec<f64>)> {
    match ps.pushforward {
        Pushforward::Linear => {
            let mut mean = Vec::with_capacity(xs.len());
            let mut var = Vec::with_capacity(xs.len());
            for x in xs {
                let g = linear_pushforward(&map.model, &map.theta, post, x)?;
                mean.push(g.mean[0]);
                var.push(g.cov[(0, 0)].max(0.0));
            }
            Ok((mean, var))
        }
        Pushforward::Nonlinear => {
            let ens = nonlinear_pushforward_batch(&map.model, &map.theta, post, xs, ps.samples, ps.seed)?;
            Ok(ens
                .iter()
                .map(|e| {
                    let col = e.samples.column(0);
                    let s = col.len() as f64;
                    let m = col.sum() / s;
                    let v = if col.len() > 1 { col.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / (s - 1.0) } else { 0.0 };
                    (m, v)
                })
                .unzip())
        }
    }
}

pub fn predict(map: &Map, post: &PosteriorState, xs: &[Vec<f64>], ps: &PredictSettings) -> Result<Predictions> {
    match map.loss {
        LossKind::Mse => {
            let (mean, fvar) = function_moments(map, post, xs, ps)?;
            let s2 = post.hyperparams().obs_noise;
            Ok(Predictions::Regression { mean, var: fvar.into_iter().map(|v| v + s2).collect() })
        }
        LossKind::CrossEntropy => {
            let probs = match ps.pushforward {
                Pushforward::Linear => xs
                    .iter()
                    .map(|x| {
                        let g = linear_pushforward(&map.model, &map.theta, post, x)?;
                        let lg = LogitGaussian::new(g.mean, g.cov)?;
                        ps.predictive.apply(&lg, ps.samples, ps.seed).map_err(CliError::from)
                    })
                    .collect::<Result<Vec<_>>>()?,
                Pushforward::Nonlinear => {
                    let ens = nonlinear_pushforward_batch(&map.model, &map.theta, post, xs, ps.samples, ps.seed)?;
                    ens.iter()
                        .map(|e| {
                            let mut p = vec![0.0; e.samples.ncols()];
                            for row in e.samples.row_iter() {
                                let z: Vec<f64> = row.iter().copied().collect();
                                for (a, b) in p.iter_mut().zip(softmax(&z)) {
                                    *a += b;
                                }
                            }
                            let s = e.samples.nrows() as f64;
                            p.into_iter().map(|v| v / s).collect()
                        })
                        .collect()
                }
            };
            Ok(Predictions::Classification { probs })
        }
    }
}

/// Test metrics; ones that do not apply to the task are `NaN`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Metrics {
    pub nll: f64,
    pub ece: f64,
    pub crps: f64,
}

pub fn metrics(pred: &Predictions, data: &Dataset) -> Result<Metrics> {
    match pred {
        Predictions::Regression { mean, var } => {
            let y = data.y();
            let sigma: Vec<f64> = var.iter().map(|v| v.sqrt()).collect();
            Ok(Metrics { nll: mean_gaussian_nll(mean, var, &y)?, ece: f64::NAN, crps: mean_crps(mean, &sigma, &y)? })
        }
        Predictions::Classification { probs } => {
            let labels: Vec<usize> = data.y().iter().map(|&v| v as usize).collect();
            Ok(Metrics { nll: categorical_nll(probs, &labels)?, ece: ece(probs, &labels, ECE_BINS)?, crps: f64::NAN })
        }
    }
}

/// Objective of a downstream calibration; `NaN` on any failure so searches skip it.
fn downstream(map: &Map, fit: &Fit, val: &Dataset, ps: &PredictSettings, objective: Objective, hp: Hyperparams) -> f64 {
    let run = || -> Result<f64> {
        let post = fit.posterior(hp)?;
        let m = metrics(&predict(map, &post, &val.inputs, ps)?, val)?;
        Ok(match objective {
            Objective::Ece => m.ece,
            _ => m.nll,
        })
    };
    run().unwrap_or(f64::NAN)
}

/// Starting and uncalibrated hyperparameters.
pub fn initial_hyperparams(cfg: &ExperimentConfig, loss: LossKind) -> Result<Hyperparams> {
    let s2 = match loss {
        LossKind::Mse => cfg.obs_noise(),
        LossKind::CrossEntropy => 1.0,
    };
    Ok(Hyperparams::new(cfg.laplace.prior_prec, s2)?)
}

/// Selects `(τ, σ²)` by the evidence on `train` or a downstream metric on `val`.
#[allow(clippy::too_many_arguments)]
pub fn calibrate(
    map: &Map,
    fit: &Fit,
    train: &Batch,
    val: &Dataset,
    spec: CalibSpec,
    init: Hyperparams,
    lc: &LaplaceConfig,
    ps: &PredictSettings,
) -> Result<CalibResult> {
    let fix_s2 = map.loss == LossKind::CrossEntropy;
    let gd = |g: &GdConfig| GdConfig { fix_sigma2: g.fix_sigma2 || fix_s2, ..*g };
    let start = (init.prior_prec.ln(), init.obs_noise.ln());
    let s2 = init.obs_noise;
    let res = match spec.objective {
        Objective::Lml => {
            let obj = lml_objective_masked(&fit.estimate, &map.model, &map.theta, std::slice::from_ref(train), map.loss, fit.mask.as_ref())?;
            match spec.method {
                SearchMethod::Gs => grid_search(|tau| obj.value(tau.ln(), s2.ln()), &lc.grid, Direction::Maximize, s2, "lml")?,
                SearchMethod::Gd => {
                    let grad = |a: f64, b: f64| obj.gradient(a, b);
                    gradient_calibrate(|a, b| obj.value(a, b), start, &gd(&lc.lml_gd), Direction::Maximize, Some(&grad), "lml")?
                }
            }
        }
        Objective::Nll | Objective::Ece => {
            let name = if spec.objective == Objective::Nll { "nll" } else { "ece" };
            let f = |tau: f64, s2: f64| match Hyperparams::new(tau, s2) {
                Ok(hp) => downstream(map, fit, val, ps, spec.objective, hp),
                Err(_) => f64::NAN,
            };
            match spec.method {
                SearchMethod::Gs => grid_search(|tau| f(tau, s2), &lc.grid, Direction::Minimize, s2, name)?,
                SearchMethod::Gd => {
                    gradient_calibrate(|a, b| f(a.exp(), b.exp()), start, &gd(&lc.nll_gd), Direction::Minimize, None, name)?
                }
            }
        }
    };
    Ok(res)
}

/// Everything `laplace` produces for one configuration.
#[derive(Debug, Clone)]
pub struct LaplaceArtifacts {
    pub fit: Fit,
    pub calib: Option<CalibResult>,
    pub hyperparams: Hyperparams,
    pub posterior: PosteriorState,
    /// Test metrics at the chosen hyperparameters.
    pub metrics: Metrics,
}

/// Curvature → estimate → calibration → posterior → test metrics.
pub fn run_laplace(cfg: &ExperimentConfig, map: &Map, train: &Dataset, val: &Dataset, test: &Dataset) -> Result<LaplaceArtifacts> {
    let lc = &cfg.laplace;
    let batch = train.batch()?;
    let fit = fit_curvature(map, &batch, lc.curv, lc.curvature, lc.mask, lc, cfg.seed)?;
    let init = initial_hyperparams(cfg, map.loss)?;
    let ps = predict_settings(cfg, lc.pushforward, 0);
    let calib = if lc.calibrate {
        Some(calibrate(map, &fit, &batch, val, lc.calibration, init, lc, &ps)?)
    } else {
        None
    };
    let hyperparams = calib.as_ref().map_or(init, |c| c.best);
    let posterior = fit.posterior(hyperparams)?;
    let metrics = metrics(&predict(map, &posterior, &test.inputs, &predict_settings(cfg, lc.pushforward, 1))?, test)?;
    Ok(LaplaceArtifacts { fit, calib, hyperparams, posterior, metrics })
}

/// Prediction settings per use: stream 0 is calibration on the validation
/// set, any other stream is test evaluation.
pub fn predict_settings(cfg: &ExperimentConfig, pushforward: Pushforward, stream: u64) -> PredictSettings {
    PredictSettings {
        pushforward,
        predictive: cfg.laplace.predictive,
        samples: if stream == 0 { cfg.laplace.samples } else { cfg.laplace.test_samples },
        seed: cfg.seed.wrapping_mul(1000).wrapping_add(17 + stream),
    }
}

/// Writes `estimate.json`, `calib.csv` and `hyperparams.csv` into `dir`.
pub fn save_laplace(art: &LaplaceArtifacts, dir: &Path) -> Result<()> {
    std::fs::write(dir.join("estimate.json"), art.fit.estimate.to_json()?)?;
    let header = ["step", "tau", "sigma2", "objective"];
    let rows: Vec<Vec<Cell>> = art
        .calib
        .iter()
        .flat_map(|c| &c.trace)
        .map(|t| vec![Cell::Num(t.step as f64), t.tau.into(), t.sigma2.into(), t.objective.into()])
        .collect();
    write_table(&dir.join("calib.csv"), &header, &rows)?;
    let (objective, method, halted) = match &art.calib {
        Some(c) => (c.objective.clone(), c.method.tag().to_string(), c.halted.to_string()),
        None => ("none".into(), "none".into(), "false".into()),
    };
    let summary = vec![vec![
        Cell::Text(art.fit.structure.name().into()),
        Cell::Text(objective),
        Cell::Text(method),
        art.hyperparams.prior_prec.into(),
        art.hyperparams.obs_noise.into(),
        Cell::Text(halted),
        Cell::Num(art.fit.estimate.dim() as f64),
        art.metrics.nll.into(),
        art.metrics.ece.into(),
        art.metrics.crps.into(),
    ]];
    write_table(
        &dir.join("hyperparams.csv"),
        &["curv", "objective", "method", "tau", "sigma2", "halted", "posterior_dim", "nll", "ece", "crps"],
        &summary,
    )
}
