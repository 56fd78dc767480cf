//! Multiclass multi-pool parallel-server networks in the Halfin-Whitt
//! regime: fluid solution, scheduling policies, CTMC and diffusion
//! simulation, and sampling-based verification.

pub mod ctmc;
pub mod diffusion;
pub mod fluid;
pub mod lyapunov;
pub mod measure;
pub mod observables;
pub mod policies;
pub mod rng;
pub mod stats;
pub mod topology;
pub mod verify;

use thiserror::Error;

/// Any error raised by this crate.
#[derive(Debug, Error)]
pub enum Error {
    #[error(transparent)]
    Model(#[from] topology::ModelError),
    #[error(transparent)]
    Fluid(#[from] fluid::FluidError),
    #[error(transparent)]
    Policy(#[from] policies::PolicyError),
    #[error(transparent)]
    Sim(#[from] ctmc::SimError),
    #[error(transparent)]
    Diffusion(#[from] diffusion::DiffusionError),
    #[error(transparent)]
    Verify(#[from] verify::VerifyError),
}
