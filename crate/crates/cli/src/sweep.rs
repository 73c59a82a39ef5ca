//! Cartesian sweep over curvature structures, calibration schemes and
//! pushforwards.

use std::path::Path;
use std::time::Instant;

use laplace_core::net::LossKind;
use rayon::prelude::*;

use crate::config::{CalibSpec, CurvStructure, ExperimentConfig, MaskKind, Pushforward};
use crate::data::Splits;
use crate::error::{CliError, Result};
use crate::laplace::{calibrate, fit_curvature, function_moments, initial_hyperparams, metrics, predict, predict_settings, Fit, Map};
use crate::output::{write_table, Cell};

pub const REPORT_HEADER: [&str; 15] = [
    "curv",
    "calib",
    "pushforward",
    "nll",
    "ece",
    "crps",
    "nll_uncalibrated",
    "tau",
    "sigma2",
    "std_inside",
    "std_outside",
    "posterior_dim",
    "halted",
    "status",
    "reason",
];

#[derive(Debug, Clone, PartialEq)]
pub struct SweepRow {
    pub curv: CurvStructure,
    pub calib: CalibSpec,
    pub pushforward: Pushforward,
    pub nll: f64,
    pub ece: f64,
    pub crps: f64,
    /// Test NLL at the starting hyperparameters.
    pub nll_uncalibrated: f64,
    pub tau: f64,
    pub sigma2: f64,
    /// Largest predictive std over the inside probes.
    pub std_inside: f64,
    /// Smallest predictive std over the outside probes.
    pub std_outside: f64,
    pub posterior_dim: usize,
    pub halted: bool,
    /// `None` when the cell succeeded.
    pub failure: Option<String>,
    pub seconds: f64,
}

impl SweepRow {
    fn failed(curv: CurvStructure, calib: CalibSpec, pushforward: Pushforward, reason: String, seconds: f64) -> Self {
        Self {
            curv,
            calib,
            pushforward,
            nll: f64::NAN,
            ece: f64::NAN,
            crps: f64::NAN,
            nll_uncalibrated: f64::NAN,
            tau: f64::NAN,
            sigma2: f64::NAN,
            std_inside: f64::NAN,
            std_outside: f64::NAN,
            posterior_dim: 0,
            halted: false,
            failure: Some(reason),
            seconds,
        }
    }

    fn key(&self) -> (CurvStructure, CalibSpec, Pushforward) {
        (self.curv, self.calib, self.pushforward)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepReport {
    pub rows: Vec<SweepRow>,
    /// Seconds spent on each curvature estimate.
    pub fit_seconds: Vec<(CurvStructure, f64)>,
}

impl SweepReport {
    /// The deterministic report (no timings).
    pub fn save(&self, path: &Path) -> Result<()> {
        let rows: Vec<Vec<Cell>> = self
            .rows
            .iter()
            .map(|r| {
                vec![
                    Cell::Text(r.curv.name().into()),
                    Cell::Text(r.calib.tag()),
                    Cell::Text(r.pushforward.tag().into()),
                    r.nll.into(),
                    r.ece.into(),
                    r.crps.into(),
                    r.nll_uncalibrated.into(),
                    r.tau.into(),
                    r.sigma2.into(),
                    r.std_inside.into(),
                    r.std_outside.into(),
                    Cell::Num(r.posterior_dim as f64),
                    Cell::Text(r.halted.to_string()),
                    Cell::Text(if r.failure.is_some() { "failed" } else { "ok" }.into()),
                    Cell::Text(r.failure.clone().unwrap_or_default()),
                ]
            })
            .collect();
        write_table(path, &REPORT_HEADER, &rows)
    }

    /// Wall times, kept apart from the report so reruns compare byte for byte.
    pub fn save_timing(&self, path: &Path) -> Result<()> {
        let mut rows: Vec<Vec<Cell>> = self
            .fit_seconds
            .iter()
            .map(|(c, s)| vec![Cell::Text(c.name().into()), Cell::Text("fit".into()), Cell::Text(String::new()), (*s).into()])
            .collect();
        rows.extend(self.rows.iter().map(|r| {
            vec![Cell::Text(r.curv.name().into()), Cell::Text(r.calib.tag()), Cell::Text(r.pushforward.tag().into()), r.seconds.into()]
        }));
        write_table(path, &["curv", "calib", "pushforward", "seconds"], &rows)
    }
}

fn mask_for(cfg: &ExperimentConfig, curv: CurvStructure) -> MaskKind {
    match curv {
        CurvStructure::Full => cfg.sweep.full_mask,
        _ => cfg.laplace.mask,
    }
}

fn run_cell(
    cfg: &ExperimentConfig,
    map: &Map,
    splits: &Splits,
    fit: &Fit,
    calib: CalibSpec,
    pushforward: Pushforward,
) -> Result<SweepRow> {
    let lc = &cfg.laplace;
    let train = splits.train.batch()?;
    let init = initial_hyperparams(cfg, map.loss)?;
    let val_ps = predict_settings(cfg, pushforward, 0);
    let test_ps = predict_settings(cfg, pushforward, 1);
    let res = calibrate(map, fit, &train, &splits.val, calib, init, lc, &val_ps)?;
    let post = fit.posterior(res.best)?;
    let m = metrics(&predict(map, &post, &splits.test.inputs, &test_ps)?, &splits.test)?;
    let base = metrics(&predict(map, &fit.posterior(init)?, &splits.test.inputs, &test_ps)?, &splits.test)?;
    let (std_inside, std_outside) = if map.loss == LossKind::Mse {
        let probe = |xs: &[f64]| -> Result<Vec<f64>> {
            let pts: Vec<Vec<f64>> = xs.iter().map(|&x| vec![x]).collect();
            let (_, fvar) = function_moments(map, &post, &pts, &test_ps)?;
            Ok(fvar.into_iter().map(|v| (v + res.best.obs_noise).sqrt()).collect())
        };
        let inside = probe(&cfg.sweep.probe_inside)?;
        let outside = probe(&cfg.sweep.probe_outside)?;
        (inside.into_iter().fold(f64::NAN, f64::max), outside.into_iter().fold(f64::NAN, f64::min))
    } else {
        (f64::NAN, f64::NAN)
    };
    Ok(SweepRow {
        curv: fit.structure,
        calib,
        pushforward,
        nll: m.nll,
        ece: m.ece,
        crps: m.crps,
        nll_uncalibrated: base.nll,
        tau: res.best.prior_prec,
        sigma2: res.best.obs_noise,
        std_inside,
        std_outside,
        posterior_dim: fit.estimate.dim(),
        halted: res.halted,
        failure: None,
        seconds: 0.0,
    })
}

/// Runs every (curvature, calibration, pushforward) cell on a pool of
/// `threads` workers. Failed cells become `NaN` rows with a reason; rows are
/// sorted by the cell key.
pub fn run_sweep(cfg: &ExperimentConfig, map: &Map, splits: &Splits, threads: usize) -> Result<SweepReport> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(threads.max(1))
        .build()
        .map_err(|e| CliError::config(e.to_string()))?;
    pool.install(|| {
        let train = splits.train.batch()?;
        let fits: Vec<(CurvStructure, std::result::Result<Fit, String>, f64)> = cfg
            .sweep
            .curv
            .par_iter()
            .map(|&curv| {
                let t = Instant::now();
                let fit = fit_curvature(map, &train, curv, cfg.laplace.curvature, mask_for(cfg, curv), &cfg.laplace, cfg.seed)
                    .map_err(|e| e.to_string());
                (curv, fit, t.elapsed().as_secs_f64())
            })
            .collect();
        let mut cells = Vec::new();
        for (curv, fit, _) in &fits {
            for &calib in &cfg.sweep.calib {
                for &pf in &cfg.sweep.pushforward {
                    cells.push((*curv, fit, calib, pf));
                }
            }
        }
        let mut rows: Vec<SweepRow> = cells
            .par_iter()
            .map(|&(curv, fit, calib, pf)| {
                let t = Instant::now();
                let out = match fit {
                    Ok(fit) => run_cell(cfg, map, splits, fit, calib, pf).map_err(|e| e.to_string()),
                    Err(e) => Err(format!("curvature: {e}")),
                };
                let secs = t.elapsed().as_secs_f64();
                match out {
                    Ok(mut row) => {
                        row.seconds = secs;
                        row
                    }
                    Err(reason) => SweepRow::failed(curv, calib, pf, reason, secs),
                }
            })
            .collect();
        rows.sort_by_key(SweepRow::key);
        Ok(SweepReport { rows, fit_seconds: fits.iter().map(|(c, _, s)| (*c, *s)).collect() })
    })
}
