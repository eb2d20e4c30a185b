use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{PathSet, TimeGrid};
use crate::error::{Error, Result};
use crate::rng::substream;

/// One-dimensional Ornstein-Uhlenbeck process
/// `dX = rate * (level - X) dt + vol * dW`, `X(0) = x0`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OuSpec {
    pub rate: f64,
    pub level: f64,
    pub vol: f64,
    pub x0: f64,
}

impl OuSpec {
    pub fn validate(&self) -> Result<()> {
        if !(self.rate > 0.0 && self.rate.is_finite()) {
            return Err(Error::invalid(format!("OU rate must be positive, got {}", self.rate)));
        }
        if !(self.vol > 0.0 && self.vol.is_finite()) {
            return Err(Error::invalid(format!("OU volatility must be positive, got {}", self.vol)));
        }
        if !self.level.is_finite() || !self.x0.is_finite() {
            return Err(Error::invalid("OU level and initial state must be finite"));
        }
        Ok(())
    }

    /// Mean and standard deviation of `X(t + h)` given `X(t) = x`.
    pub fn transition(&self, x: f64, h: f64) -> (f64, f64) {
        let decay = (-self.rate * h).exp();
        let var = self.vol * self.vol * (1.0 - (-2.0 * self.rate * h).exp()) / (2.0 * self.rate);
        (self.level + (x - self.level) * decay, var.sqrt())
    }

    /// Marginal mean and standard deviation of `X(t)` started from `x0` at time 0.
    pub fn marginal(&self, t: f64) -> (f64, f64) {
        self.transition(self.x0, t)
    }
}

/// Exact-transition sampling on `grid`; path `i` uses RNG substream `i`.
pub fn simulate_ou(spec: &OuSpec, grid: &TimeGrid, n_paths: usize, seed: u64) -> Result<PathSet> {
    spec.validate()?;
    grid.validate()?;
    let (_, sd) = spec.transition(0.0, grid.dt);
    let decay = (-spec.rate * grid.dt).exp();
    let stride = grid.n_points();
    let mut data = vec![0.0; n_paths * stride];
    data.par_chunks_mut(stride).enumerate().for_each(|(i, path)| {
        let mut rng = substream(seed, i as u64);
        path[0] = spec.x0;
        for n in 1..stride {
            let z: f64 = rng.sample(StandardNormal);
            path[n] = spec.level + (path[n - 1] - spec.level) * decay + sd * z;
        }
    });
    PathSet::new(*grid, 1, vec![spec.x0], data)
}
