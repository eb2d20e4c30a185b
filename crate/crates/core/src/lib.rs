//! Learn to simulate an unknown SDE from a finite set of its sample paths.
//!
//! A conditional denoising diffusion model is trained for every observation
//! slot on `(state, increment)` pairs; new paths are generated by chaining
//! those models forward from the known initial state. The crate also holds
//! ground-truth simulators for building datasets, distributional metrics for
//! judging synthetic paths, and a mean-variance portfolio pipeline that uses
//! synthetic index paths to enrich a reinforcement-learning market simulator.

pub mod ddpm;
pub mod error;
pub mod eval;
pub mod nn;
pub mod pathgen;
pub mod portfolio;
pub mod rng;
pub mod sde;

pub use error::{Error, Result};

pub const VERSION: &str = env!("CARGO_PKG_VERSION");
