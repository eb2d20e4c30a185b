//! Conditional denoising diffusion for one time slot: noise schedule, forward
//! noising, epsilon-prediction training and ancestral reverse sampling.

mod embed;
mod schedule;
pub(crate) mod slot;

pub use embed::{sinusoidal_features, EMBED_DIM};
pub use schedule::{forward_noise, NoiseSchedule};
pub use slot::{
    reverse_sample, train_slot_model, Condition, NetConfig, Normalization, SlotModel, SlotSidecar, TrainConfig,
};
