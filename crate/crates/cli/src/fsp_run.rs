//! Function-space Laplace demo on a sine with a periodic (or any) GP prior.

use std::f64::consts::PI;
use std::path::Path;

use laplace_core::fsp::{
    fsp_posterior, fsp_train, sample_context, ContextSampler, ContextSet, DomainBox, FspDiagnostics,
    FspPosteriorConfig, FspTrainConfig, GpPrior,
};
use laplace_core::net::{predict, Batch, LossKind, ModelSpec};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::config::FspConfig;
use crate::error::{CliError, Result};
use crate::output::{write_csv, write_table, Cell};
use crate::plot::{emit_plot_data, Artifact};

#[derive(Debug, Clone)]
pub struct FspArtifacts {
    pub data: Batch,
    pub params: Vec<f64>,
    pub objective: Vec<f64>,
    pub context: ContextSet,
    /// Posterior marginal variance and prior variance at each context point.
    pub context_var: Vec<(f64, f64)>,
    pub grid_x: Vec<f64>,
    pub grid_mean: Vec<f64>,
    pub grid_std: Vec<f64>,
    pub truncated: usize,
    pub rank: usize,
    pub diagnostics: FspDiagnostics,
}

impl FspArtifacts {
    /// Context points whose posterior variance exceeds the prior variance.
    pub fn bound_violations(&self) -> usize {
        self.context_var.iter().filter(|(post, prior)| post > prior).count()
    }
}

/// `y = sin(2πx/period) + N(0, noise²)` on `n` uniform inputs.
pub fn fsp_data(cfg: &FspConfig, seed: u64) -> Result<Batch> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let eps = Normal::new(0.0, cfg.noise).map_err(|e| CliError::config(e.to_string()))?;
    let [lo, hi] = cfg.data_domain;
    let xs: Vec<Vec<f64>> = (0..cfg.n).map(|_| vec![rng.random_range(lo..hi)]).collect();
    let ys: Vec<Vec<f64>> = xs.iter().map(|x| vec![(2.0 * PI * x[0] / cfg.data_period).sin() + eps.sample(&mut rng)]).collect();
    Ok(Batch::from_rows(&xs, &ys)?)
}

/// Training then posterior, with mean ± std on a grid over the context box.
pub fn run_fsp(cfg: &FspConfig, seed: u64) -> Result<FspArtifacts> {
    let model = ModelSpec::mlp(1, &cfg.hidden, 1, cfg.activation).map_err(|e| CliError::config(e.to_string()))?;
    let prior = GpPrior { kernel: cfg.kernel, mean: cfg.prior_mean, nugget: cfg.nugget };
    prior.validate().map_err(|e| CliError::config(e.to_string()))?;
    let data = fsp_data(cfg, seed)?;
    let domain = DomainBox::new(vec![cfg.context_domain[0]], vec![cfg.context_domain[1]])?;
    let s2 = cfg.noise * cfg.noise;
    let tc = FspTrainConfig {
        steps: cfg.steps,
        batch_size: cfg.batch_size,
        adam: cfg.adam,
        obs_noise: s2,
        n_context: cfg.n_context,
        sampler: cfg.sampler,
        domain: domain.clone(),
    };
    let trained = fsp_train(&model, &model.init_params(seed), &prior, &data, LossKind::Mse, &tc, seed)?;

    let context = match cfg.sampler {
        ContextSampler::TrainBatch => {
            let pts: Vec<Vec<f64>> = (0..data.len()).map(|i| data.input(i).to_vec()).collect();
            sample_context(ContextSampler::TrainBatch, &domain, pts.len(), seed, Some(&pts))?
        }
        s => sample_context(s, &domain, cfg.n_posterior_context, seed.wrapping_add(1), None)?,
    };
    let pc = FspPosteriorConfig { max_rank: cfg.max_rank, tol: 1e-10, seed, obs_noise: s2 };
    let post = fsp_posterior(&model, &prior, &context, std::slice::from_ref(&data), LossKind::Mse, &trained.params, &pc)?;

    let prior_var: Vec<f64> = context.points.iter().map(|c| prior.variance(c)).collect();
    let post_var = post.output_variances(&model, &context.points)?;
    let context_var = post_var.iter().zip(prior_var.iter()).map(|(p, k)| (p[0], *k)).collect();

    let [lo, hi] = cfg.context_domain;
    let step = (hi - lo) / (cfg.grid_points - 1) as f64;
    let grid_x: Vec<f64> = (0..cfg.grid_points).map(|i| lo + i as f64 * step).collect();
    let pts: Vec<Vec<f64>> = grid_x.iter().map(|&x| vec![x]).collect();
    let grid_mean = pts.iter().map(|x| predict(&model, &trained.params, x)[0]).collect();
    let grid_std = post.output_variances(&model, &pts)?.into_iter().map(|v| v[0].max(0.0).sqrt()).collect();

    Ok(FspArtifacts {
        data,
        params: trained.params,
        objective: trained.objective,
        context,
        context_var,
        grid_x,
        grid_mean,
        grid_std,
        truncated: post.k,
        rank: post.rank,
        diagnostics: post.diagnostics,
    })
}

/// Lag in `[lag_lo, lag_hi]` maximizing the normalized autocorrelation of
/// `values` sampled with spacing `dx`.
pub fn autocorrelation_peak(values: &[f64], dx: f64, lag_lo: f64, lag_hi: f64) -> Option<(f64, f64)> {
    let n = values.len();
    let mean = values.iter().sum::<f64>() / n as f64;
    let c: Vec<f64> = values.iter().map(|v| v - mean).collect();
    let first = (lag_lo / dx).ceil().max(1.0) as usize;
    let last = ((lag_hi / dx).floor() as usize).min(n.saturating_sub(2));
    (first..=last)
        .filter_map(|k| {
            let num: f64 = (0..n - k).map(|i| c[i] * c[i + k]).sum();
            let da: f64 = (0..n - k).map(|i| c[i] * c[i]).sum();
            let db: f64 = (k..n).map(|i| c[i] * c[i]).sum();
            let r = num / (da * db).sqrt();
            r.is_finite().then_some((k as f64 * dx, r))
        })
        .max_by(|a, b| a.1.total_cmp(&b.1))
}

/// Writes `fsp_grid.csv`, `fsp_context.csv`, `fsp_objective.csv` and
/// `fsp_summary.csv` into `dir`.
pub fn save_fsp(art: &FspArtifacts, dir: &Path) -> Result<()> {
    emit_plot_data(
        &[Artifact::Grid { name: "fsp_grid".into(), x: art.grid_x.clone(), mean: art.grid_mean.clone(), std: art.grid_std.clone() }],
        dir,
    )?;
    let rows: Vec<Vec<f64>> = art.context.points.iter().zip(&art.context_var).map(|(p, (v, k))| vec![p[0], *v, *k]).collect();
    write_csv(&dir.join("fsp_context.csv"), &["x", "posterior_var", "prior_var"], &rows)?;
    let rows: Vec<Vec<f64>> = art.objective.iter().enumerate().map(|(i, v)| vec![i as f64, *v]).collect();
    write_csv(&dir.join("fsp_objective.csv"), &["step", "objective"], &rows)?;
    let summary = vec![vec![
        Cell::Num(art.rank as f64),
        Cell::Num(art.truncated as f64),
        Cell::Num(art.diagnostics.lanczos_rank as f64),
        Cell::Num(art.diagnostics.svd_rank as f64),
        Cell::Text(art.diagnostics.bound_unsatisfied.to_string()),
        Cell::Num(art.bound_violations() as f64),
    ]];
    write_table(
        &dir.join("fsp_summary.csv"),
        &["rank", "truncated", "lanczos_rank", "svd_rank", "bound_unsatisfied", "bound_violations"],
        &summary,
    )
}
