//! Sparse-view CT reconstruction toolkit.
//!
//! The crate is organised bottom-up:
//!
//! - [`grid`]: dense volumes, sinograms, deterministic noise and raw volume I/O.
//! - [`operators`]: matched parallel-beam projector and finite-difference operators.
//! - [`solvers`]: soft thresholding, conjugate gradients and the ADMM family.
//! - [`diffusion`]: noise schedule, forward noising and DDIM/DDPM steps.
//! - [`denoiser`]: the conditional noise-prediction network and its training loops.
//! - [`pipeline`]: the cascaded reconstruction loop with data consistency and
//!   discrepancy mitigation.

pub mod denoiser;
pub mod diffusion;
pub mod error;
pub mod grid;
pub mod operators;
pub mod pipeline;
pub mod solvers;

pub use error::{Error, Result};
pub use grid::{Rng, Sinogram, Volume};
