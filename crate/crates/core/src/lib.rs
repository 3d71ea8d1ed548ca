//! Patch-based diffusion priors for inverse problems.
//!
//! The crate trains small patch denoisers on synthetic phantoms and uses them
//! to reconstruct images from sparse-view CT, blurred, or downsampled
//! measurements. Reconstruction runs annealed Langevin dynamics with a
//! conjugate-gradient data-fidelity step; an optional self-supervised mode
//! refines the denoiser weights against the measurement during sampling so a
//! prior trained on a mismatched distribution can adapt to a single
//! measurement. Classical baselines (FBP, ADMM-TV, PnP-ADMM, PnP-RED) and a
//! metrics harness round out the experiment suite.

pub mod baselines;
pub mod error;
pub mod harness;
pub mod metrics;
pub mod model;
pub mod operators;
pub mod patch;
pub mod phantoms;
pub mod solvers;
pub mod tensor;
pub mod training;

pub use error::{Error, Result};
pub use tensor::Tensor;
