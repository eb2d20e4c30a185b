//! Fixtures shared by the criterion benchmarks.

use std::sync::Arc;

use ndarray::Array2;
use rand::Rng;
use rand_distr::StandardNormal;

use diffsde_core::ddpm::{train_slot_model, NetConfig, NoiseSchedule, SlotModel, TrainConfig, EMBED_DIM};
use diffsde_core::nn::{Activation, Mlp};
use diffsde_core::rng::substream;
use diffsde_core::sde::{simulate_ou, slot_increments, IncrementPairs, OuSpec, PathSet, TimeGrid};

pub const OU: OuSpec = OuSpec { rate: 1.0, level: 1.2, vol: 0.3, x0: 1.5 };

pub fn ou_grid() -> TimeGrid {
    TimeGrid::new(0.0, 0.05, 20).expect("valid grid")
}

pub fn ou_paths(n: usize, seed: u64) -> PathSet {
    simulate_ou(&OU, &ou_grid(), n, seed).expect("valid OU spec")
}

pub fn ou_slot_pairs(n: usize) -> IncrementPairs {
    slot_increments(&ou_paths(n, 1), 0).expect("slot 0 exists")
}

/// Standard normal cloud shifted by `shift` in every coordinate.
pub fn normal_cloud(n: usize, d: usize, shift: f64, seed: u64) -> Array2<f64> {
    let mut rng = substream(seed, 0);
    Array2::from_shape_fn((n, d), |_| shift + rng.sample::<f64, _>(StandardNormal))
}

/// Denoiser-sized network for a `d`-dimensional state, with its input batch
/// and targets.
pub fn denoiser_net(d: usize, batch: usize) -> (Mlp, Array2<f64>, Array2<f64>) {
    let dims = [2 * d + EMBED_DIM, 128, 128, 128, d];
    let net = Mlp::init(&dims, Activation::Silu, 7).expect("valid dims");
    (net, normal_cloud(batch, dims[0], 0.0, 8), normal_cloud(batch, d, 0.0, 9))
}

/// Briefly trained slot model; only its cost matters here.
pub fn slot_model(steps: usize) -> SlotModel {
    let sched = Arc::new(NoiseSchedule::new(100).expect("valid schedule"));
    let train = TrainConfig { steps, ..TrainConfig::default() };
    train_slot_model(0, &ou_slot_pairs(200), sched, &NetConfig::default(), &train, 3).expect("trainable")
}
