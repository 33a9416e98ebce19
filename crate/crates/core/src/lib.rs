//! Refinement of noisy hand pose sequences with a residual-shifting
//! conditional diffusion model and intuitive-physics motion constraints.

pub mod bundle;
pub mod config;
pub mod datagen;
pub mod denoiser;
pub mod diffusion;
pub mod error;
pub mod hand;
pub mod metrics;
pub mod motion;
pub mod physics;
pub mod pipeline;
pub mod trainer;

pub use error::{CoreError, Result};
