use rand::Rng;
use rand_distr::StandardNormal;

use super::IncrementSampler;
use crate::error::{Error, Result};
use crate::rng::StreamRng;
use crate::sde::{slot_increments, OuSpec, PathSet, TimeGrid};

/// Per-slot Gaussian fitted to the increments, ignoring the current state.
/// Coordinates are drawn independently.
#[derive(Debug, Clone, PartialEq)]
pub struct GaussianIncrementBaseline {
    grid: TimeGrid,
    dim: usize,
    initial_state: Vec<f64>,
    /// `means[n * d + j]`, likewise `stds`.
    means: Vec<f64>,
    stds: Vec<f64>,
}

impl GaussianIncrementBaseline {
    pub fn fit(dataset: &PathSet) -> Result<Self> {
        let h = dataset.n_paths();
        if h < 2 {
            return Err(Error::invalid("the Gaussian baseline needs at least 2 paths"));
        }
        let d = dataset.dim();
        let mut means = Vec::with_capacity(dataset.grid().n_steps * d);
        let mut stds = Vec::with_capacity(means.capacity());
        for n in 0..dataset.grid().n_steps {
            let pairs = slot_increments(dataset, n)?;
            for j in 0..d {
                let col: Vec<f64> = (0..h).map(|i| pairs.increment(i)[j]).collect();
                let m = col.iter().sum::<f64>() / h as f64;
                let v = col.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / (h - 1) as f64;
                means.push(m);
                stds.push(v.sqrt());
            }
        }
        Ok(GaussianIncrementBaseline {
            grid: *dataset.grid(),
            dim: d,
            initial_state: dataset.initial_state().to_vec(),
            means,
            stds,
        })
    }
}

impl IncrementSampler for GaussianIncrementBaseline {
    fn grid(&self) -> &TimeGrid {
        &self.grid
    }

    fn dim(&self) -> usize {
        self.dim
    }

    fn initial_state(&self) -> &[f64] {
        &self.initial_state
    }

    fn sample_increments(&self, slot: usize, _states: &[f64], rngs: &mut [StreamRng]) -> Result<Vec<f64>> {
        let d = self.dim;
        let (m, s) = (&self.means[slot * d..(slot + 1) * d], &self.stds[slot * d..(slot + 1) * d]);
        let mut out = Vec::with_capacity(rngs.len() * d);
        for rng in rngs.iter_mut() {
            for j in 0..d {
                out.push(m[j] + s[j] * rng.sample::<f64, _>(StandardNormal));
            }
        }
        Ok(out)
    }
}

/// Exact OU transition sampler. Stands in for a perfectly trained generator.
#[derive(Debug, Clone, PartialEq)]
pub struct OuTransitionOracle {
    spec: OuSpec,
    grid: TimeGrid,
    x0: [f64; 1],
}

impl OuTransitionOracle {
    pub fn new(spec: OuSpec, grid: TimeGrid) -> Result<Self> {
        spec.validate()?;
        grid.validate()?;
        Ok(OuTransitionOracle { x0: [spec.x0], spec, grid })
    }
}

impl IncrementSampler for OuTransitionOracle {
    fn grid(&self) -> &TimeGrid {
        &self.grid
    }

    fn dim(&self) -> usize {
        1
    }

    fn initial_state(&self) -> &[f64] {
        &self.x0
    }

    fn sample_increments(&self, _slot: usize, states: &[f64], rngs: &mut [StreamRng]) -> Result<Vec<f64>> {
        Ok(states
            .iter()
            .zip(rngs.iter_mut())
            .map(|(&x, rng)| {
                let (mean, sd) = self.spec.transition(x, self.grid.dt);
                mean + sd * rng.sample::<f64, _>(StandardNormal) - x
            })
            .collect())
    }
}
