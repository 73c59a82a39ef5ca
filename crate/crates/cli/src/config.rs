//! Experiment configuration, read from a single TOML or JSON file.
//!
//! Every section has defaults, so an empty file describes the sine-regression
//! experiment with a 1→50→50→1 tanh network.

use std::fmt;
use std::path::Path;

use laplace_core::calibration::{GdConfig, GridSpec};
use laplace_core::curvature::CurvatureKind;
use laplace_core::fsp::{ContextSampler, GpPrior, KernelKind, KernelSpec};
use laplace_core::net::{Activation, LossKind};
use laplace_core::optim::AdamConfig;
use laplace_core::predictive::PredictiveKind;
use serde::{Deserialize, Serialize};

use crate::error::{CliError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Task {
    SineRegression,
    MoonsClassification,
    /// Two-parameter toy network `w₂·relu(w₁x − 1)` at fixed weights.
    ToyRelu,
}

impl Task {
    pub fn loss(self) -> LossKind {
        match self {
            Task::MoonsClassification => LossKind::CrossEntropy,
            Task::SineRegression | Task::ToyRelu => LossKind::Mse,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CurvStructure {
    Full,
    Diagonal,
    Lanczos,
    Lobpcg,
}

impl CurvStructure {
    pub const ALL: [CurvStructure; 4] = [CurvStructure::Full, CurvStructure::Diagonal, CurvStructure::Lanczos, CurvStructure::Lobpcg];

    pub fn name(self) -> &'static str {
        match self {
            CurvStructure::Full => "full",
            CurvStructure::Diagonal => "diagonal",
            CurvStructure::Lanczos => "lanczos",
            CurvStructure::Lobpcg => "lobpcg",
        }
    }
}

impl fmt::Display for CurvStructure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MaskKind {
    All,
    LastLayer,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Pushforward {
    Linear,
    Nonlinear,
}

impl Pushforward {
    pub fn tag(self) -> &'static str {
        match self {
            Pushforward::Linear => "L",
            Pushforward::Nonlinear => "NL",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Objective {
    Lml,
    Nll,
    Ece,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SearchMethod {
    Gs,
    Gd,
}

/// Objective and search method, e.g. `{ objective = "nll", method = "gs" }`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub struct CalibSpec {
    pub objective: Objective,
    pub method: SearchMethod,
}

impl CalibSpec {
    pub const fn new(objective: Objective, method: SearchMethod) -> Self {
        Self { objective, method }
    }

    /// `LML-GS`, `NLL-GD`, ...
    pub fn tag(self) -> String {
        let o = match self.objective {
            Objective::Lml => "LML",
            Objective::Nll => "NLL",
            Objective::Ece => "ECE",
        };
        let m = match self.method {
            SearchMethod::Gs => "GS",
            SearchMethod::Gd => "GD",
        };
        format!("{o}-{m}")
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataConfig {
    pub task: Task,
    /// Size of the training pool, split into train and validation.
    pub n: usize,
    pub noise: f64,
    /// Sine inputs are drawn from `[lower, upper]` minus the `gap` interval.
    pub domain: [f64; 2],
    pub gap: Option<[f64; 2]>,
    pub n_test: usize,
    pub val_fraction: f64,
}

impl Default for DataConfig {
    fn default() -> Self {
        Self {
            task: Task::SineRegression,
            n: 128,
            noise: 0.1,
            domain: [-1.0, 1.0],
            gap: Some([-0.25, 0.25]),
            n_test: 256,
            val_fraction: 0.2,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    pub hidden: Vec<usize>,
    pub activation: Activation,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self { hidden: vec![50, 50], activation: Activation::Tanh }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub steps: usize,
    /// Minibatch size; `None` trains full-batch.
    pub batch_size: Option<usize>,
    pub adam: AdamConfig,
    /// Weight-decay precision `τ_train` in `loss + (τ_train/2)‖θ‖²`.
    pub prior_prec: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self { steps: 4000, batch_size: None, adam: AdamConfig { lr: 1e-2, ..AdamConfig::default() }, prior_prec: 1e-3 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LaplaceConfig {
    pub curv: CurvStructure,
    pub curvature: CurvatureKind,
    pub mask: MaskKind,
    pub pushforward: Pushforward,
    pub predictive: PredictiveKind,
    pub calibration: CalibSpec,
    /// `false` keeps the starting hyperparameters.
    pub calibrate: bool,
    /// Rank for `lanczos` and `lobpcg`.
    pub rank: usize,
    pub block_size: usize,
    pub tol: f64,
    pub max_iters: usize,
    /// Weight samples for the nonlinear pushforward and `mc_bridge` during
    /// calibration.
    pub samples: usize,
    /// Weight samples when evaluating on the test set and probes.
    pub test_samples: usize,
    /// Starting (and uncalibrated) prior precision.
    pub prior_prec: f64,
    /// Starting observation-noise variance; `None` uses `noise²` of the data.
    pub obs_noise: Option<f64>,
    pub grid: GridSpec,
    pub lml_gd: GdConfig,
    pub nll_gd: GdConfig,
}

impl Default for LaplaceConfig {
    fn default() -> Self {
        Self {
            curv: CurvStructure::Lanczos,
            curvature: CurvatureKind::Ggn,
            mask: MaskKind::All,
            pushforward: Pushforward::Linear,
            predictive: PredictiveKind::MeanField1,
            calibration: CalibSpec::new(Objective::Lml, SearchMethod::Gs),
            calibrate: true,
            rank: 40,
            block_size: 48,
            tol: 1e-8,
            max_iters: 200,
            samples: 200,
            test_samples: 1000,
            prior_prec: 1.0,
            obs_noise: None,
            grid: GridSpec { log10_lower: -4.0, log10_upper: 4.0, n: 33 },
            lml_gd: GdConfig { steps: 150, lr: 0.05, max_step: Some(0.25), fix_sigma2: false },
            nll_gd: GdConfig { steps: 60, lr: 0.5, max_step: Some(0.25), fix_sigma2: false },
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SweepConfig {
    pub curv: Vec<CurvStructure>,
    pub calib: Vec<CalibSpec>,
    pub pushforward: Vec<Pushforward>,
    /// Mask used by the `full` structure; the others use `laplace.mask`.
    pub full_mask: MaskKind,
    /// Inputs inside the training clusters and outside the data support at
    /// which predictive standard deviations are reported.
    pub probe_inside: Vec<f64>,
    pub probe_outside: Vec<f64>,
}

impl Default for SweepConfig {
    fn default() -> Self {
        Self {
            curv: CurvStructure::ALL.to_vec(),
            calib: vec![
                CalibSpec::new(Objective::Lml, SearchMethod::Gs),
                CalibSpec::new(Objective::Lml, SearchMethod::Gd),
                CalibSpec::new(Objective::Nll, SearchMethod::Gs),
                CalibSpec::new(Objective::Nll, SearchMethod::Gd),
            ],
            pushforward: vec![Pushforward::Linear, Pushforward::Nonlinear],
            full_mask: MaskKind::LastLayer,
            probe_inside: vec![-0.625, 0.625],
            probe_outside: vec![0.0, -1.5, 1.5],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FspConfig {
    pub kernel: KernelSpec,
    pub prior_mean: f64,
    /// White-noise variance added to the prior covariance.
    pub nugget: f64,
    /// Period of the generating sine; the data are `sin(2πx/period)`.
    pub data_period: f64,
    pub n: usize,
    pub noise: f64,
    /// Training inputs are drawn uniformly from this interval.
    pub data_domain: [f64; 2],
    /// Context box, also the prediction grid range.
    pub context_domain: [f64; 2],
    pub sampler: ContextSampler,
    pub n_context: usize,
    pub steps: usize,
    pub batch_size: usize,
    pub adam: AdamConfig,
    pub hidden: Vec<usize>,
    pub activation: Activation,
    /// Context points for the posterior.
    pub n_posterior_context: usize,
    pub max_rank: usize,
    pub grid_points: usize,
}

impl Default for FspConfig {
    fn default() -> Self {
        Self {
            kernel: KernelSpec { kind: KernelKind::Periodic, variance: 1.0, lengthscale: 1.0, period: Some(1.0) },
            prior_mean: 0.0,
            nugget: 1e-2,
            data_period: 1.0,
            n: 64,
            noise: 0.1,
            data_domain: [-1.0, 1.0],
            context_domain: [-3.0, 3.0],
            sampler: ContextSampler::Halton,
            n_context: 80,
            steps: 8000,
            batch_size: 32,
            adam: AdamConfig { lr: 5e-3, ..AdamConfig::default() },
            hidden: vec![50, 50],
            activation: Activation::Tanh,
            n_posterior_context: 512,
            max_rank: 120,
            grid_points: 241,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub seed: u64,
    pub data: DataConfig,
    pub model: ModelConfig,
    /// Overrides the task's default loss.
    pub loss: Option<LossKind>,
    pub train: TrainConfig,
    pub laplace: LaplaceConfig,
    pub sweep: SweepConfig,
    pub fsp: Option<FspConfig>,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            data: DataConfig::default(),
            model: ModelConfig::default(),
            loss: None,
            train: TrainConfig::default(),
            laplace: LaplaceConfig::default(),
            sweep: SweepConfig::default(),
            fsp: None,
        }
    }
}

impl ExperimentConfig {
    /// Parses `.json` files as JSON and everything else as TOML.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        let cfg = if path.extension().is_some_and(|e| e == "json") {
            Self::from_json(&text)?
        } else {
            Self::from_toml(&text)?
        };
        Ok(cfg)
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| CliError::config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: Self = serde_json::from_str(text).map_err(|e| CliError::config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn loss(&self) -> LossKind {
        self.loss.unwrap_or(self.data.task.loss())
    }

    /// Observation-noise variance used before calibration.
    pub fn obs_noise(&self) -> f64 {
        self.laplace.obs_noise.unwrap_or(self.data.noise * self.data.noise)
    }

    pub fn validate(&self) -> Result<()> {
        let d = &self.data;
        if d.n < 2 {
            return Err(CliError::config(format!("data.n must be at least 2, got {}", d.n)));
        }
        if !(d.noise >= 0.0) || !d.noise.is_finite() {
            return Err(CliError::config(format!("data.noise must be finite and ≥ 0, got {}", d.noise)));
        }
        if !(d.domain[0] < d.domain[1]) {
            return Err(CliError::config("data.domain needs lower < upper"));
        }
        if let Some([a, b]) = d.gap {
            if !(a < b) || a <= d.domain[0] && b >= d.domain[1] {
                return Err(CliError::config("data.gap must be a proper interval that leaves part of the domain"));
            }
        }
        if !(d.val_fraction > 0.0 && d.val_fraction < 1.0) {
            return Err(CliError::config(format!("data.val_fraction must lie in (0, 1), got {}", d.val_fraction)));
        }
        if d.n_test == 0 {
            return Err(CliError::config("data.n_test must be at least 1"));
        }
        if self.model.hidden.iter().any(|&h| h == 0) {
            return Err(CliError::config("hidden layer widths must be positive"));
        }
        if self.loss() != d.task.loss() {
            return Err(CliError::config(format!("loss {:?} does not fit task {:?}", self.loss(), d.task)));
        }
        if !(self.train.prior_prec >= 0.0) {
            return Err(CliError::config("train.prior_prec must be ≥ 0"));
        }
        self.train.adam.validate().map_err(invalid)?;
        let l = &self.laplace;
        if !(l.prior_prec > 0.0) || !(self.obs_noise() > 0.0) {
            return Err(CliError::config("laplace.prior_prec and the observation noise must be positive"));
        }
        if l.rank == 0 || l.samples == 0 || l.test_samples == 0 || l.max_iters == 0 {
            return Err(CliError::config("laplace.rank, samples, test_samples and max_iters must be positive"));
        }
        l.grid.validate().map_err(invalid)?;
        for spec in std::iter::once(&l.calibration).chain(&self.sweep.calib) {
            if spec.objective == Objective::Ece && self.loss() != LossKind::CrossEntropy {
                return Err(CliError::config("the ece objective needs a classification task"));
            }
        }
        if self.sweep.curv.is_empty() || self.sweep.calib.is_empty() || self.sweep.pushforward.is_empty() {
            return Err(CliError::config("sweep axes must be non-empty"));
        }
        if let Some(f) = &self.fsp {
            GpPrior { kernel: f.kernel, mean: f.prior_mean, nugget: f.nugget }.validate().map_err(invalid)?;
            if !(f.data_domain[0] < f.data_domain[1]) || !(f.context_domain[0] < f.context_domain[1]) {
                return Err(CliError::config("fsp domains need lower < upper"));
            }
            if f.n == 0 || f.batch_size == 0 || f.batch_size > f.n || f.n_context == 0 || f.grid_points < 2 {
                return Err(CliError::config("fsp sizes must be positive with batch_size ≤ n"));
            }
            if !(f.noise > 0.0) || !(f.data_period > 0.0) {
                return Err(CliError::config("fsp noise and data_period must be positive"));
            }
            f.adam.validate().map_err(invalid)?;
        }
        Ok(())
    }
}

fn invalid(e: laplace_core::Error) -> CliError {
    CliError::config(e.to_string())
}
