//! Subcommands of the `laplace` binary.

use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand};
use laplace_core::curvature::CurvEstimate;
use laplace_core::net::Checkpoint;
use laplace_core::posterior::Hyperparams;
use laplace_core::tensor::ParamMask;

use crate::config::{ExperimentConfig, MaskKind, Task};
use crate::data::make_splits;
use crate::error::{CliError, Result};
use crate::fsp_run::{run_fsp, save_fsp};
use crate::laplace::{function_moments, predict_settings, run_laplace, save_laplace, Fit, Map};
use crate::plot::{emit_plot_data, Artifact};
use crate::sweep::run_sweep;
use crate::train::{save_training, train_map};

#[derive(Debug, Parser)]
#[command(name = "laplace", version, about = "Laplace approximations for small networks: batch experiments")]
pub struct Cli {
    /// TOML or JSON experiment file; defaults apply when omitted.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Overrides the config seed.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    #[arg(long, global = true, default_value = "out")]
    pub out_dir: PathBuf,
    /// Worker threads for the sweep.
    #[arg(long, global = true, default_value_t = 1)]
    pub threads: usize,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Writes train.csv, val.csv and test.csv.
    GenData,
    /// Trains the MAP network and writes checkpoint.json.
    Train,
    /// Fits and calibrates the posterior configured under `[laplace]`.
    Laplace {
        /// Defaults to `<out-dir>/checkpoint.json`.
        #[arg(long)]
        checkpoint: Option<PathBuf>,
    },
    /// Runs the curvature × calibration × pushforward sweep.
    Sweep {
        #[arg(long)]
        checkpoint: Option<PathBuf>,
    },
    /// Trains and fits the function-space posterior.
    Fsp,
    /// Writes plot CSVs from the artifacts of `laplace`.
    PlotData {
        #[arg(long)]
        checkpoint: Option<PathBuf>,
    },
}

pub fn load_config(cli: &Cli) -> Result<ExperimentConfig> {
    let mut cfg = match &cli.config {
        Some(path) => {
            if !path.exists() {
                return Err(CliError::config(format!("config file {} does not exist", path.display())));
            }
            ExperimentConfig::load(path)?
        }
        None => ExperimentConfig::default(),
    };
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
    }
    Ok(cfg)
}

fn load_map(path: &Path) -> Result<Map> {
    if !path.exists() {
        return Err(CliError::config(format!("checkpoint {} does not exist; run `train` first", path.display())));
    }
    let ck = Checkpoint::load(path)?;
    Ok(Map { theta: ck.flat_params(), loss: ck.meta.loss, model: ck.model })
}

pub fn run(cli: &Cli) -> Result<()> {
    let cfg = load_config(cli)?;
    let dir = &cli.out_dir;
    std::fs::create_dir_all(dir)?;
    let checkpoint_path = |c: &Option<PathBuf>| c.clone().unwrap_or_else(|| dir.join("checkpoint.json"));
    match &cli.command {
        Command::GenData => {
            let s = make_splits(&cfg.data, cfg.seed)?;
            s.train.save_csv(&dir.join("train.csv"))?;
            s.val.save_csv(&dir.join("val.csv"))?;
            s.test.save_csv(&dir.join("test.csv"))?;
        }
        Command::Train => {
            let s = make_splits(&cfg.data, cfg.seed)?;
            save_training(&train_map(&cfg, &s.train)?, dir)?;
        }
        Command::Laplace { checkpoint } => {
            let map = load_map(&checkpoint_path(checkpoint))?;
            let s = make_splits(&cfg.data, cfg.seed)?;
            let art = run_laplace(&cfg, &map, &s.train, &s.val, &s.test)?;
            save_laplace(&art, dir)?;
        }
        Command::Sweep { checkpoint } => {
            let map = load_map(&checkpoint_path(checkpoint))?;
            let s = make_splits(&cfg.data, cfg.seed)?;
            let report = run_sweep(&cfg, &map, &s, cli.threads)?;
            report.save(&dir.join("sweep_report.csv"))?;
            report.save_timing(&dir.join("sweep_timing.csv"))?;
        }
        Command::Fsp => {
            let fc = cfg.fsp.clone().unwrap_or_default();
            save_fsp(&run_fsp(&fc, cfg.seed)?, dir)?;
        }
        Command::PlotData { checkpoint } => {
            let map = load_map(&checkpoint_path(checkpoint))?;
            let artifacts = plot_artifacts(&cfg, &map, dir)?;
            emit_plot_data(&artifacts, dir)?;
        }
    }
    Ok(())
}

/// Rebuilds the posterior from `estimate.json` and `hyperparams.csv` and
/// returns the plots the task supports.
pub fn plot_artifacts(cfg: &ExperimentConfig, map: &Map, dir: &Path) -> Result<Vec<Artifact>> {
    let estimate_path = dir.join("estimate.json");
    if !estimate_path.exists() {
        return Ok(Vec::new());
    }
    let estimate = CurvEstimate::from_json(&std::fs::read_to_string(&estimate_path)?)?;
    let (header, rows) = read_hyperparams(&dir.join("hyperparams.csv"))?;
    let col = |name: &str| header.iter().position(|h| h == name).ok_or_else(|| CliError::config(format!("hyperparams.csv lacks `{name}`")));
    let hp = Hyperparams::new(rows[col("tau")?], rows[col("sigma2")?])?;
    let mask = match cfg.laplace.mask {
        MaskKind::All => None,
        MaskKind::LastLayer => Some(ParamMask::subtree(&map.model.template(), &map.model.last_layer_path())?),
    };
    let fit = Fit { structure: cfg.laplace.curv, estimate, mask };
    let post = fit.posterior(hp)?;
    Ok(match cfg.data.task {
        Task::ToyRelu => vec![Artifact::Ellipse {
            name: "toy_ellipse".into(),
            center: [map.theta[0], map.theta[1]],
            cov: post.dense_covariance(),
            levels: vec![1.0, 2.0],
        }],
        Task::SineRegression => {
            let [lo, hi] = cfg.data.domain;
            let pad = 0.5 * (hi - lo);
            let n = 201;
            let x: Vec<f64> = (0..n).map(|i| lo - pad + (hi - lo + 2.0 * pad) * i as f64 / (n - 1) as f64).collect();
            let pts: Vec<Vec<f64>> = x.iter().map(|&v| vec![v]).collect();
            let (mean, fvar) = function_moments(map, &post, &pts, &predict_settings(cfg, cfg.laplace.pushforward, 1))?;
            let std = fvar.iter().map(|v| (v + hp.obs_noise).sqrt()).collect();
            vec![Artifact::Grid { name: format!("predictive_{}", fit.structure.name()), x, mean, std }]
        }
        Task::MoonsClassification => Vec::new(),
    })
}

/// The numeric columns of the single `hyperparams.csv` row.
fn read_hyperparams(path: &Path) -> Result<(Vec<String>, Vec<f64>)> {
    let mut r = csv::Reader::from_path(path)?;
    let header: Vec<String> = r.headers()?.iter().map(str::to_string).collect();
    let rec = r.records().next().ok_or_else(|| CliError::config(format!("{} is empty", path.display())))??;
    let values = rec.iter().map(|s| s.parse::<f64>().unwrap_or(f64::NAN)).collect();
    Ok((header, values))
}
