//! Synthetic datasets and the train/validation/test split.

use std::f64::consts::PI;
use std::path::Path;

use laplace_core::net::Batch;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::config::{DataConfig, Task};
use crate::error::{CliError, Result};
use crate::output::{read_csv, write_csv};

/// Offset mixed into the seed for the held-out test set.
const TEST_STREAM: u64 = 0x7e57_0000_0000_0001;

/// Row-wise inputs and targets.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub inputs: Vec<Vec<f64>>,
    pub targets: Vec<Vec<f64>>,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.inputs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.inputs.is_empty()
    }

    pub fn batch(&self) -> Result<Batch> {
        Ok(Batch::from_rows(&self.inputs, &self.targets)?)
    }

    /// Scalar targets (first column).
    pub fn y(&self) -> Vec<f64> {
        self.targets.iter().map(|t| t[0]).collect()
    }

    fn subset(&self, idx: &[usize]) -> Self {
        Self {
            inputs: idx.iter().map(|&i| self.inputs[i].clone()).collect(),
            targets: idx.iter().map(|&i| self.targets[i].clone()).collect(),
        }
    }

    /// Writes `x0, …, y0, …` columns.
    pub fn save_csv(&self, path: &Path) -> Result<()> {
        let d = self.inputs.first().map_or(0, Vec::len);
        let t = self.targets.first().map_or(0, Vec::len);
        let header: Vec<String> = (0..d).map(|i| format!("x{i}")).chain((0..t).map(|i| format!("y{i}"))).collect();
        let rows: Vec<Vec<f64>> = self.inputs.iter().zip(&self.targets).map(|(x, y)| [x.as_slice(), y].concat()).collect();
        write_csv(path, &header, &rows)
    }

    pub fn load_csv(path: &Path) -> Result<Self> {
        let (header, rows) = read_csv(path)?;
        let d = header.iter().filter(|h| h.starts_with('x')).count();
        if d == 0 || d == header.len() {
            return Err(CliError::config(format!("{} needs x and y columns", path.display())));
        }
        Ok(Self {
            inputs: rows.iter().map(|r| r[..d].to_vec()).collect(),
            targets: rows.iter().map(|r| r[d..].to_vec()).collect(),
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Splits {
    pub train: Dataset,
    pub val: Dataset,
    pub test: Dataset,
}

/// Draws `n` points for the configured task.
pub fn gen_data(cfg: &DataConfig, n: usize, noise: f64, seed: u64) -> Result<Dataset> {
    if n == 0 {
        return Err(CliError::config("dataset size must be at least 1"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let eps = Normal::new(0.0, noise).map_err(|e| CliError::config(e.to_string()))?;
    Ok(match cfg.task {
        Task::SineRegression => {
            let [lo, hi] = cfg.domain;
            let mut inputs = Vec::with_capacity(n);
            let mut targets = Vec::with_capacity(n);
            while inputs.len() < n {
                let x: f64 = rng.random_range(lo..hi);
                if cfg.gap.is_some_and(|[a, b]| x > a && x < b) {
                    continue;
                }
                inputs.push(vec![x]);
                targets.push(vec![(2.0 * PI * x).sin() + eps.sample(&mut rng)]);
            }
            Dataset { inputs, targets }
        }
        Task::MoonsClassification => moons(n, &eps, &mut rng),
        Task::ToyRelu => Dataset { inputs: vec![vec![1.0], vec![-1.0]], targets: vec![vec![1.0], vec![-1.0]] },
    })
}

/// Two interleaving half circles, shuffled; label 0 is the upper moon.
fn moons(n: usize, eps: &Normal<f64>, rng: &mut ChaCha8Rng) -> Dataset {
    let n_out = n.div_ceil(2);
    let n_in = n - n_out;
    let arc = |k: usize, i: usize| if k > 1 { PI * i as f64 / (k - 1) as f64 } else { 0.0 };
    let mut rows: Vec<(Vec<f64>, f64)> = Vec::with_capacity(n);
    for i in 0..n_out {
        let t = arc(n_out, i);
        rows.push((vec![t.cos(), t.sin()], 0.0));
    }
    for i in 0..n_in {
        let t = arc(n_in, i);
        rows.push((vec![1.0 - t.cos(), 0.5 - t.sin()], 1.0));
    }
    rows.shuffle(rng);
    let inputs = rows
        .iter()
        .map(|(x, _)| x.iter().map(|v| v + eps.sample(rng)).collect())
        .collect();
    Dataset { inputs, targets: rows.into_iter().map(|(_, y)| vec![y]).collect() }
}

/// Training pool split by seeded shuffle, plus an independent test set.
pub fn make_splits(cfg: &DataConfig, seed: u64) -> Result<Splits> {
    let pool = gen_data(cfg, cfg.n, cfg.noise, seed)?;
    let test = gen_data(cfg, cfg.n_test, cfg.noise, seed ^ TEST_STREAM)?;
    if cfg.task == Task::ToyRelu {
        return Ok(Splits { train: pool.clone(), val: pool, test });
    }
    let mut idx: Vec<usize> = (0..pool.len()).collect();
    idx.shuffle(&mut ChaCha8Rng::seed_from_u64(seed.wrapping_add(1)));
    let n_val = ((pool.len() as f64 * cfg.val_fraction).round() as usize).clamp(1, pool.len() - 1);
    let (val_idx, train_idx) = idx.split_at(n_val);
    let mut train_idx = train_idx.to_vec();
    let mut val_idx = val_idx.to_vec();
    train_idx.sort_unstable();
    val_idx.sort_unstable();
    Ok(Splits { train: pool.subset(&train_idx), val: pool.subset(&val_idx), test })
}
