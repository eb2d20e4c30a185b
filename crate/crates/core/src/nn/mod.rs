//! A small feed-forward network with hand-written backpropagation and Adam.
//! Enough to train the noise predictor of a per-slot diffusion model.

mod adam;
mod checkpoint;
mod mlp;

pub use adam::AdamState;
pub use checkpoint::MlpCheckpoint;
pub use mlp::{Activation, Mlp};
