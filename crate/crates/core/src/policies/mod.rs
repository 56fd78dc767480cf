//! Scheduling policies: balanced saturation, canonical joint work
//! conservation, and their concatenation.

mod control;
mod jwc;
mod shift;

pub use control::{Control, MarkovControl};
pub use jwc::{
    canonical_jwc_decide, rounding_map, CanonicalJwc, Concatenated, JwcRegion, JwcRegionCache,
    REGION_SAMPLES,
};
pub use shift::{bsp_decide, build_capacity_shift, default_margin, nominal_split, Bsp, CapacityShift};

use serde::Serialize;
use thiserror::Error;

use crate::fluid::FluidError;
use crate::topology::{ModelError, NetworkTopology};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum PolicyError {
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Fluid(#[from] FluidError),
    #[error("invalid control: {0}")]
    InvalidControl(String),
    #[error("capacity shift needs a class with positive abandonment")]
    NoAnchorClass,
    #[error("capacity shift infeasible at n = {n}: {reason}")]
    InfeasibleShift { n: u64, reason: String },
    #[error("rounding map domain: total {0} is not integral")]
    NonIntegralTotal(f64),
    #[error("state {x:?} lies outside the joint work conservation region")]
    OutsideJwc { x: Vec<i64> },
    #[error("allocation violates {0}")]
    BadAllocation(String),
}

/// Which rule produced an allocation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize)]
pub enum Branch {
    Bsp,
    Canonical,
    /// Inside the region but the canonical rule produced a negative entry.
    Fallback,
}

/// A stationary Markov scheduling policy on integer headcounts.
pub trait Policy: Send + Sync {
    /// Writes the edge allocation for headcounts `x` into `z`.
    fn decide_into(&self, x: &[i64], z: &mut [i64]) -> Result<Branch, PolicyError>;

    fn name(&self) -> &'static str;

    fn decide(&self, x: &[i64]) -> Result<Vec<i64>, PolicyError> {
        let mut z = vec![0; self.num_edges()];
        self.decide_into(x, &mut z)?;
        Ok(z)
    }

    fn num_edges(&self) -> usize;
}

/// Headcounts with an edge allocation.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct SystemState {
    pub x: Vec<i64>,
    pub z: Vec<i64>,
}

impl SystemState {
    pub fn queues(&self, topo: &NetworkTopology) -> Vec<i64> {
        queues(topo, &self.x, &self.z)
    }

    pub fn idle(&self, topo: &NetworkTopology, pool_sizes: &[i64]) -> Vec<i64> {
        idle(topo, pool_sizes, &self.z)
    }
}

pub fn queues(topo: &NetworkTopology, x: &[i64], z: &[i64]) -> Vec<i64> {
    let mut q = x.to_vec();
    for (k, &(i, _)) in topo.edges.iter().enumerate() {
        q[i] -= z[k];
    }
    q
}

pub fn idle(topo: &NetworkTopology, pool_sizes: &[i64], z: &[i64]) -> Vec<i64> {
    let mut y = pool_sizes.to_vec();
    for (k, &(_, j)) in topo.edges.iter().enumerate() {
        y[j] -= z[k];
    }
    y
}

/// Checks nonnegativity, the balance equations and edgewise work
/// conservation.
pub fn check_allocation(
    topo: &NetworkTopology,
    pool_sizes: &[i64],
    x: &[i64],
    z: &[i64],
) -> Result<(), PolicyError> {
    if let Some(k) = z.iter().position(|&v| v < 0) {
        return Err(PolicyError::BadAllocation(format!("z on edge {k} is {}", z[k])));
    }
    let q = queues(topo, x, z);
    let y = idle(topo, pool_sizes, z);
    if let Some(i) = q.iter().position(|&v| v < 0) {
        return Err(PolicyError::BadAllocation(format!("queue {i} is {}", q[i])));
    }
    if let Some(j) = y.iter().position(|&v| v < 0) {
        return Err(PolicyError::BadAllocation(format!("idle pool {j} is {}", y[j])));
    }
    for &(i, j) in &topo.edges {
        if q[i] > 0 && y[j] > 0 {
            return Err(PolicyError::BadAllocation(format!(
                "work conservation on edge ({i},{j}): q = {}, y = {}",
                q[i], y[j]
            )));
        }
    }
    Ok(())
}
