//! Hyperparameter calibration by grid search over `τ` or by gradient steps in
//! `(log τ, log σ²)`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::posterior::Hyperparams;

/// Log-spaced grid `10^{lower} … 10^{upper}` with `n` points.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GridSpec {
    pub log10_lower: f64,
    pub log10_upper: f64,
    pub n: usize,
}

impl Default for GridSpec {
    fn default() -> Self {
        Self { log10_lower: -5.0, log10_upper: 5.0, n: 41 }
    }
}

impl GridSpec {
    pub fn validate(&self) -> Result<()> {
        if !(self.log10_lower < self.log10_upper) || self.n < 2 {
            return Err(Error::domain(format!(
                "grid needs lower < upper and n ≥ 2, got [{}, {}] with n = {}",
                self.log10_lower, self.log10_upper, self.n
            )));
        }
        Ok(())
    }

    /// Grid values of `τ`, ascending.
    pub fn points(&self) -> Vec<f64> {
        let step = (self.log10_upper - self.log10_lower) / (self.n - 1) as f64;
        (0..self.n).map(|i| 10f64.powf(self.log10_lower + i as f64 * step)).collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Direction {
    Maximize,
    Minimize,
}

impl Direction {
    /// Whether `a` is strictly better than `b`.
    fn better(self, a: f64, b: f64) -> bool {
        match self {
            Direction::Maximize => a > b,
            Direction::Minimize => a < b,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Method {
    #[serde(rename = "GS")]
    GridSearch,
    #[serde(rename = "GD")]
    GradientDescent,
}

impl Method {
    pub fn tag(self) -> &'static str {
        match self {
            Method::GridSearch => "GS",
            Method::GradientDescent => "GD",
        }
    }
}

/// One objective evaluation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TracePoint {
    pub step: usize,
    pub tau: f64,
    pub sigma2: f64,
    pub objective: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CalibResult {
    pub best: Hyperparams,
    pub best_value: f64,
    pub trace: Vec<TracePoint>,
    pub objective: String,
    pub method: Method,
    /// Set when a gradient run stopped early on a non-finite objective.
    pub halted: bool,
}

/// Evaluates `objective(τ)` on the grid with `σ²` held fixed and returns the
/// best point; ties go to the smaller `τ`. Non-finite values are skipped.
pub fn grid_search(
    objective: impl Fn(f64) -> f64,
    grid: &GridSpec,
    direction: Direction,
    sigma2: f64,
    name: &str,
) -> Result<CalibResult> {
    grid.validate()?;
    grid_search_points(objective, &grid.points(), direction, sigma2, name)
}

/// [`grid_search`] over explicit `τ` values in any order.
pub fn grid_search_points(
    objective: impl Fn(f64) -> f64,
    taus: &[f64],
    direction: Direction,
    sigma2: f64,
    name: &str,
) -> Result<CalibResult> {
    let mut trace = Vec::with_capacity(taus.len());
    let mut best: Option<(f64, f64)> = None;
    for (i, &tau) in taus.iter().enumerate() {
        let value = objective(tau);
        trace.push(TracePoint { step: i, tau, sigma2, objective: value });
        if !value.is_finite() {
            log::warn!("{name}: non-finite objective at tau = {tau:e}, skipped");
            continue;
        }
        let take = match best {
            None => true,
            Some((bt, bv)) => direction.better(value, bv) || (value == bv && tau < bt),
        };
        if take {
            best = Some((tau, value));
        }
    }
    let (tau, value) = best.ok_or_else(|| Error::Calibration(format!("{name}: objective non-finite on the whole grid")))?;
    Ok(CalibResult {
        best: Hyperparams::new(tau, sigma2)?,
        best_value: value,
        trace,
        objective: name.to_string(),
        method: Method::GridSearch,
        halted: false,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GdConfig {
    pub steps: usize,
    pub lr: f64,
    /// Largest change of any log-hyperparameter per step.
    pub max_step: Option<f64>,
    /// Keep `log σ²` at its initial value.
    pub fix_sigma2: bool,
}

impl Default for GdConfig {
    fn default() -> Self {
        Self { steps: 100, lr: 0.1, max_step: None, fix_sigma2: false }
    }
}

/// Central differences with `h = 1e−4·(1 + |x|)` per coordinate.
pub fn fd_gradient(objective: &impl Fn(f64, f64) -> f64, a: f64, b: f64) -> (f64, f64) {
    let ha = 1e-4 * (1.0 + a.abs());
    let hb = 1e-4 * (1.0 + b.abs());
    let ga = (objective(a + ha, b) - objective(a - ha, b)) / (2.0 * ha);
    let gb = (objective(a, b + hb) - objective(a, b - hb)) / (2.0 * hb);
    (ga, gb)
}

/// Analytic gradient `(∂/∂ log τ, ∂/∂ log σ²)`.
pub type GradientFn<'a> = &'a dyn Fn(f64, f64) -> (f64, f64);

/// Fixed-step gradient ascent (maximize) or descent (minimize) on
/// `objective(log τ, log σ²)`, returning the best iterate seen.
pub fn gradient_calibrate(
    objective: impl Fn(f64, f64) -> f64,
    init: (f64, f64),
    cfg: &GdConfig,
    direction: Direction,
    gradient: Option<GradientFn<'_>>,
    name: &str,
) -> Result<CalibResult> {
    let sign = match direction {
        Direction::Maximize => 1.0,
        Direction::Minimize => -1.0,
    };
    let (mut a, mut b) = init;
    let first = objective(a, b);
    if !first.is_finite() {
        return Err(Error::Calibration(format!("{name}: objective is {first} at the initial point")));
    }
    let mut trace = vec![TracePoint { step: 0, tau: a.exp(), sigma2: b.exp(), objective: first }];
    let mut best = (a, b, first);
    let mut halted = false;
    let clip = |d: f64| match cfg.max_step {
        Some(m) => d.clamp(-m, m),
        None => d,
    };
    for step in 1..=cfg.steps {
        let (ga, gb) = match gradient {
            Some(g) => g(a, b),
            None => fd_gradient(&objective, a, b),
        };
        if !ga.is_finite() || !gb.is_finite() {
            halted = true;
            break;
        }
        a += clip(sign * cfg.lr * ga);
        if !cfg.fix_sigma2 {
            b += clip(sign * cfg.lr * gb);
        }
        let representable = |x: f64| x.exp().is_finite() && x.exp() > 0.0;
        if !representable(a) || !representable(b) {
            halted = true;
            break;
        }
        let value = objective(a, b);
        trace.push(TracePoint { step, tau: a.exp(), sigma2: b.exp(), objective: value });
        if !value.is_finite() {
            halted = true;
            break;
        }
        if direction.better(value, best.2) {
            best = (a, b, value);
        }
    }
    Ok(CalibResult {
        best: Hyperparams::new(best.0.exp(), best.1.exp())?,
        best_value: best.2,
        trace,
        objective: name.to_string(),
        method: Method::GradientDescent,
        halted,
    })
}
