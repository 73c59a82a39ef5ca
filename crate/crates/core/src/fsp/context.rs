//! Context point samplers.

use std::fmt;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ContextSampler {
    UniformBox,
    Halton,
    TrainBatch,
}

impl ContextSampler {
    pub fn name(self) -> &'static str {
        match self {
            ContextSampler::UniformBox => "uniform_box",
            ContextSampler::Halton => "halton",
            ContextSampler::TrainBatch => "train_batch",
        }
    }
}

impl fmt::Display for ContextSampler {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for ContextSampler {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        [ContextSampler::UniformBox, ContextSampler::Halton, ContextSampler::TrainBatch]
            .into_iter()
            .find(|c| c.name() == s)
            .ok_or_else(|| Error::domain(format!("unknown context sampler `{s}`")))
    }
}

/// Axis-aligned box `[lower, upper]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DomainBox {
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
}

impl DomainBox {
    pub fn new(lower: Vec<f64>, upper: Vec<f64>) -> Result<Self> {
        let b = Self { lower, upper };
        b.validate()?;
        Ok(b)
    }

    pub fn validate(&self) -> Result<()> {
        if self.lower.is_empty() || self.lower.len() != self.upper.len() {
            return Err(Error::dim(format!(
                "domain bounds have lengths {} and {}",
                self.lower.len(),
                self.upper.len()
            )));
        }
        if self.lower.iter().zip(&self.upper).any(|(l, u)| !(l < u) || !l.is_finite() || !u.is_finite()) {
            return Err(Error::domain("domain needs finite lower < upper in every dimension"));
        }
        Ok(())
    }

    pub fn dim(&self) -> usize {
        self.lower.len()
    }

    pub fn contains(&self, x: &[f64]) -> bool {
        x.len() == self.dim() && x.iter().zip(&self.lower).zip(&self.upper).all(|((v, l), u)| l <= v && v <= u)
    }

    fn scale(&self, unit: &[f64]) -> Vec<f64> {
        unit.iter()
            .zip(&self.lower)
            .zip(&self.upper)
            .map(|((t, l), u)| (l + t * (u - l)).clamp(*l, *u))
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ContextSet {
    pub points: Vec<Vec<f64>>,
    pub sampler: ContextSampler,
}

impl ContextSet {
    pub fn new(points: Vec<Vec<f64>>, sampler: ContextSampler) -> Result<Self> {
        if points.is_empty() {
            return Err(Error::domain("context set needs at least one point"));
        }
        Ok(Self { points, sampler })
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }
}

fn first_primes(n: usize) -> Vec<u64> {
    let mut primes = Vec::with_capacity(n);
    let mut c = 2u64;
    while primes.len() < n {
        if primes.iter().take_while(|&&p| p * p <= c).all(|&p| c % p != 0) {
            primes.push(c);
        }
        c += 1;
    }
    primes
}

/// Van der Corput radical inverse of `i` in `base`.
pub fn radical_inverse(mut i: u64, base: u64) -> f64 {
    let inv = 1.0 / base as f64;
    let mut f = inv;
    let mut r = 0.0;
    while i > 0 {
        r += (i % base) as f64 * f;
        i /= base;
        f *= inv;
    }
    r
}

/// Draws `n` context points. `halton` skips the first `seed·n` indices and
/// starts at index 1; `train_batch` returns `batch` as given.
pub fn sample_context(
    sampler: ContextSampler,
    domain: &DomainBox,
    n: usize,
    seed: u64,
    batch: Option<&[Vec<f64>]>,
) -> Result<ContextSet> {
    domain.validate()?;
    let points = match sampler {
        ContextSampler::UniformBox => {
            if n == 0 {
                return Err(Error::domain("context size must be at least 1"));
            }
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            (0..n)
                .map(|_| {
                    let u: Vec<f64> = (0..domain.dim()).map(|_| rng.random::<f64>()).collect();
                    domain.scale(&u)
                })
                .collect()
        }
        ContextSampler::Halton => {
            if n == 0 {
                return Err(Error::domain("context size must be at least 1"));
            }
            let bases = first_primes(domain.dim());
            let skip = seed.wrapping_mul(n as u64);
            (0..n as u64)
                .map(|j| {
                    let idx = skip.wrapping_add(j + 1);
                    let u: Vec<f64> = bases.iter().map(|&b| radical_inverse(idx, b)).collect();
                    domain.scale(&u)
                })
                .collect()
        }
        ContextSampler::TrainBatch => {
            let b = batch.ok_or_else(|| Error::domain("train_batch context needs the current minibatch"))?;
            b.to_vec()
        }
    };
    if let Some(bad) = points.iter().find(|p| p.len() != domain.dim()) {
        return Err(Error::dim(format!("context point has width {}, domain has {}", bad.len(), domain.dim())));
    }
    ContextSet::new(points, sampler)
}
