//! Per-slot training over a dataset and autoregressive path generation,
//! plus the baseline samplers the diffusion generator is compared against.

mod baseline;
mod bundle;
mod sdm_mc;

pub use baseline::{GaussianIncrementBaseline, OuTransitionOracle};
pub use bundle::{train_generator, GeneratorBundle, GeneratorConfig, TrainingReport, BUNDLE_MANIFEST};
pub use sdm_mc::{kernel_weights, sdm_mc_sample, silverman_bandwidth, SdmMcConfig, SdmMcGenerator};

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::rng::{derive_seed, label, substream, StreamRng};
use crate::sde::{PathSet, TimeGrid};

/// Paths generated per batch; fixed so results do not depend on thread count.
const CHUNK: usize = 256;

/// Anything that can draw the increment over slot `n` given the current states.
pub trait IncrementSampler: Sync {
    fn grid(&self) -> &TimeGrid;
    fn dim(&self) -> usize;
    fn initial_state(&self) -> &[f64];

    /// One increment per row of `states` (`rngs.len() x dim`). Rows may come
    /// back non-finite; the caller drops those paths.
    fn sample_increments(&self, slot: usize, states: &[f64], rngs: &mut [StreamRng]) -> Result<Vec<f64>>;
}

/// Source of fresh sample paths, real or synthetic.
pub trait PathSource: Sync {
    fn sample_paths(&self, n_paths: usize, seed: u64) -> Result<PathSet>;
}

impl<T: IncrementSampler> PathSource for T {
    fn sample_paths(&self, n_paths: usize, seed: u64) -> Result<PathSet> {
        let out = generate_with(self, n_paths, seed)?;
        if let Some(&(path, slot)) = out.failures.first() {
            return Err(Error::numeric(format!(
                "{} of {n_paths} generated paths diverged (first: path {path} at slot {slot})",
                out.failures.len()
            )));
        }
        Ok(out.paths)
    }
}

/// Result of autoregressive generation.
#[derive(Debug, Clone)]
pub struct Generated {
    /// Paths that stayed finite, in order of their original index.
    pub paths: PathSet,
    /// `(path index, slot)` of every dropped path and the slot where it left finite values.
    pub failures: Vec<(usize, usize)>,
}

/// Generate `n_paths` from `bundle` starting at its initial state.
pub fn generate_paths(bundle: &GeneratorBundle, n_paths: usize, seed: u64) -> Result<Generated> {
    generate_with(bundle, n_paths, seed)
}

/// Autoregressive recursion `x(t_{n+1}) = x(t_n) + Y_n` for any sampler.
/// Path `i` draws all its randomness from substream `i`.
pub fn generate_with<S: IncrementSampler + ?Sized>(sampler: &S, n_paths: usize, seed: u64) -> Result<Generated> {
    let grid = *sampler.grid();
    let d = sampler.dim();
    let x0 = sampler.initial_state().to_vec();
    let n_points = grid.n_points();
    let stride = n_points * d;
    let gen_seed = derive_seed(seed, label::GENERATE);
    let mut data = vec![0.0; n_paths * stride];
    let chunk_failures = data
        .par_chunks_mut(CHUNK * stride)
        .enumerate()
        .map(|(c, block)| -> Result<Vec<(usize, usize)>> {
            let rows = block.len() / stride;
            let first = c * CHUNK;
            let mut rngs: Vec<StreamRng> = (0..rows).map(|r| substream(gen_seed, (first + r) as u64)).collect();
            let mut states = x0.repeat(rows);
            let mut failed_at: Vec<Option<usize>> = vec![None; rows];
            for r in 0..rows {
                block[r * stride..r * stride + d].copy_from_slice(&x0);
            }
            for n in 0..grid.n_steps {
                let inc = sampler.sample_increments(n, &states, &mut rngs)?;
                if inc.len() != states.len() {
                    return Err(Error::invalid("sampler returned the wrong number of increments"));
                }
                for r in 0..rows {
                    let row = &mut states[r * d..(r + 1) * d];
                    for j in 0..d {
                        row[j] += inc[r * d + j];
                    }
                    if failed_at[r].is_none() && row.iter().any(|v| !v.is_finite()) {
                        failed_at[r] = Some(n);
                        // Park the failed path on a finite state so it cannot poison the batch.
                        row.copy_from_slice(&x0);
                    }
                    let off = r * stride + (n + 1) * d;
                    block[off..off + d].copy_from_slice(row);
                }
            }
            Ok(failed_at.iter().enumerate().filter_map(|(r, f)| f.map(|n| (first + r, n))).collect())
        })
        .collect::<Result<Vec<_>>>()?;
    let failures: Vec<(usize, usize)> = chunk_failures.into_iter().flatten().collect();
    if !failures.is_empty() {
        let mut keep = Vec::with_capacity((n_paths - failures.len()) * stride);
        let mut bad = failures.iter().map(|f| f.0).peekable();
        for (i, path) in data.chunks_exact(stride).enumerate() {
            if bad.peek() == Some(&i) {
                bad.next();
                continue;
            }
            keep.extend_from_slice(path);
        }
        data = keep;
    }
    Ok(Generated { paths: PathSet::new(grid, d, x0, data)?, failures })
}
