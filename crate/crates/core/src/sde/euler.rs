use std::fmt;
use std::sync::Arc;

use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;

use super::{PathSet, TimeGrid};
use crate::error::{Error, Result};
use crate::rng::substream;

/// Drift `mu(t, x)` written into a `d`-vector.
pub type DriftFn = dyn Fn(f64, &[f64], &mut [f64]) + Send + Sync;
/// Diffusion `sigma(t, x)` written into a row-major `d x m` matrix.
pub type DiffusionFn = dyn Fn(f64, &[f64], &mut [f64]) + Send + Sync;

/// `dX = mu(t, X) dt + sigma(t, X) dW` with an `m`-dimensional Brownian motion.
#[derive(Clone)]
pub struct GenericSdeSpec {
    pub drift: Arc<DriftFn>,
    pub diffusion: Arc<DiffusionFn>,
    pub x0: Vec<f64>,
    pub brownian_dim: usize,
}

impl fmt::Debug for GenericSdeSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("GenericSdeSpec")
            .field("x0", &self.x0)
            .field("brownian_dim", &self.brownian_dim)
            .finish_non_exhaustive()
    }
}

impl GenericSdeSpec {
    pub fn new(
        x0: Vec<f64>,
        brownian_dim: usize,
        drift: impl Fn(f64, &[f64], &mut [f64]) + Send + Sync + 'static,
        diffusion: impl Fn(f64, &[f64], &mut [f64]) + Send + Sync + 'static,
    ) -> Self {
        GenericSdeSpec { drift: Arc::new(drift), diffusion: Arc::new(diffusion), x0, brownian_dim }
    }

    pub fn dim(&self) -> usize {
        self.x0.len()
    }
}

/// Euler-Maruyama with `substeps` internal steps per grid interval; only
/// grid points are recorded.
pub fn euler_maruyama(
    spec: &GenericSdeSpec,
    grid: &TimeGrid,
    n_paths: usize,
    substeps: usize,
    seed: u64,
) -> Result<PathSet> {
    grid.validate()?;
    if substeps == 0 {
        return Err(Error::invalid("substeps must be at least 1"));
    }
    let d = spec.dim();
    let m = spec.brownian_dim;
    if d == 0 || m == 0 {
        return Err(Error::invalid("state and Brownian dimensions must be positive"));
    }
    if spec.x0.iter().any(|v| !v.is_finite()) {
        return Err(Error::invalid("initial state must be finite"));
    }
    let h = grid.dt / substeps as f64;
    let sqrt_h = h.sqrt();
    let stride = grid.n_points() * d;
    let mut data = vec![0.0; n_paths * stride];
    data.par_chunks_mut(stride).enumerate().try_for_each(|(i, path)| {
        let mut rng = substream(seed, i as u64);
        let mut x = spec.x0.clone();
        let mut mu = vec![0.0; d];
        let mut sigma = vec![0.0; d * m];
        let mut dw = vec![0.0; m];
        path[..d].copy_from_slice(&x);
        for n in 0..grid.n_steps {
            for s in 0..substeps {
                let t = grid.time(n) + s as f64 * h;
                (spec.drift)(t, &x, &mut mu);
                (spec.diffusion)(t, &x, &mut sigma);
                if mu.iter().chain(&sigma).any(|v| !v.is_finite()) {
                    return Err(Error::numeric(format!(
                        "non-finite drift or diffusion at t = {t}, path {i}"
                    )));
                }
                dw.iter_mut().for_each(|w| *w = sqrt_h * rng.sample::<f64, _>(StandardNormal));
                for j in 0..d {
                    let noise: f64 = sigma[j * m..(j + 1) * m].iter().zip(&dw).map(|(a, b)| a * b).sum();
                    x[j] += mu[j] * h + noise;
                }
            }
            if x.iter().any(|v| !v.is_finite()) {
                return Err(Error::numeric(format!("state diverged at t = {}, path {i}", grid.time(n + 1))));
            }
            path[(n + 1) * d..(n + 2) * d].copy_from_slice(&x);
        }
        Ok(())
    })?;
    PathSet::new(*grid, d, spec.x0.clone(), data)
}
