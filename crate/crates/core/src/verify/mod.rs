//! Sampling-based checks: Lyapunov certificates, moment audits and the
//! CTMC-to-diffusion convergence experiment.
//!
//! Every report states where it sampled and how many points it used.

mod convergence;
mod lyapunov;
mod moments;

pub use convergence::{
    convergence_experiment, fairness_report, ConvergenceConfig, ConvergenceEntry, ConvergenceReport,
    DiffusionEntry, FairnessReport, TREND_THRESHOLD,
};
pub use lyapunov::{
    beta_family, check_diffusion_lyapunov, check_discrete_lyapunov, check_jwc_stability_preservation,
    check_structural, CertSample, Cone, DiffusionLyapunovFit, LyapunovCertificate, SampleConfig,
    StructuralReport,
};
pub use moments::{check_moment_bounds, MomentAudit, MomentFit, MomentTrace, MomentVariant};

use serde::Serialize;
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::ctmc::SimError;
use crate::diffusion::DiffusionError;
use crate::fluid::FluidError;
use crate::policies::PolicyError;
use crate::topology::ModelError;

#[derive(Debug, Error)]
pub enum VerifyError {
    #[error("fit failed: {0}")]
    FitFailed(String),
    #[error("invalid input: {0}")]
    Invalid(String),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Fluid(#[from] FluidError),
    #[error(transparent)]
    Policy(#[from] PolicyError),
    #[error(transparent)]
    Sim(#[from] SimError),
    #[error(transparent)]
    Diffusion(#[from] DiffusionError),
}

/// Hex SHA-256 of the compact JSON encoding of `value`.
pub fn content_hash<T: Serialize + ?Sized>(value: &T) -> String {
    let bytes = serde_json::to_vec(value).expect("serializable value");
    Sha256::digest(&bytes).iter().map(|b| format!("{b:02x}")).collect()
}
