//! Running costs and moment observables shared by the CTMC and the
//! diffusion so their estimates line up metric by metric.

use serde::{Deserialize, Serialize};

use crate::topology::ModelError;

pub const MOMENT_ORDERS: [i32; 3] = [1, 2, 4];

/// Weights and exponents of the running cost.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CostSpec {
    /// Per-class queue weights, positive.
    pub xi: Vec<f64>,
    /// Per-pool idleness weights, nonnegative.
    pub zeta: Vec<f64>,
    pub m: f64,
    pub m_tilde: f64,
}

impl CostSpec {
    pub fn unit(num_classes: usize, num_pools: usize) -> Self {
        Self {
            xi: vec![1.0; num_classes],
            zeta: vec![1.0; num_pools],
            m: 1.0,
            m_tilde: 1.0,
        }
    }

    pub fn validate(&self, num_classes: usize, num_pools: usize) -> Result<(), ModelError> {
        let bad = |field: &str, reason: String| ModelError::Invalid {
            field: format!("cost.{field}"),
            reason,
        };
        if self.xi.len() != num_classes {
            return Err(bad("xi", format!("expected {num_classes} entries")));
        }
        if self.zeta.len() != num_pools {
            return Err(bad("zeta", format!("expected {num_pools} entries")));
        }
        if self.xi.iter().any(|&v| !(v > 0.0)) {
            return Err(bad("xi", "entries must be positive".into()));
        }
        if self.zeta.iter().any(|&v| !(v >= 0.0)) {
            return Err(bad("zeta", "entries must be nonnegative".into()));
        }
        if !(self.m >= 1.0) {
            return Err(bad("m", format!("must be >= 1, got {}", self.m)));
        }
        if !(self.m_tilde >= 1.0) {
            return Err(bad("m_tilde", format!("must be >= 1, got {}", self.m_tilde)));
        }
        Ok(())
    }
}

fn pow(v: f64, e: f64) -> f64 {
    if e == 1.0 {
        v
    } else if e == 2.0 {
        v * v
    } else {
        v.powf(e)
    }
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|a| a * a).sum::<f64>().sqrt()
}

/// Fixed metric layout for one network.
#[derive(Debug, Clone)]
pub struct Observables {
    pub costs: CostSpec,
    names: Vec<String>,
}

impl Observables {
    pub fn new(costs: CostSpec) -> Self {
        let mut names = vec!["cost".to_string(), "queue_cost".to_string()];
        for j in 0..costs.zeta.len() {
            names.push(format!("idle_cost.{}", j + 1));
        }
        names.push("queue_total_pos".into());
        for k in MOMENT_ORDERS {
            names.push(format!("state_norm^{k}"));
            names.push(format!("qy_moment^{k}"));
            names.push(format!("q_moment^{k}"));
            names.push(format!("y_norm^{k}"));
        }
        Self { costs, names }
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn len(&self) -> usize {
        self.names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.names.is_empty()
    }

    pub fn index(&self, name: &str) -> Option<usize> {
        self.names.iter().position(|n| n == name)
    }

    /// Evaluates every metric at a diffusion-scaled state.
    pub fn evaluate(&self, x_hat: &[f64], q_hat: &[f64], y_hat: &[f64], out: &mut [f64]) {
        let c = &self.costs;
        let queue_cost: f64 = q_hat.iter().zip(&c.xi).map(|(&q, &w)| w * pow(q, c.m)).sum();
        let idle_cost: f64 = y_hat.iter().zip(&c.zeta).map(|(&y, &w)| w * pow(y, c.m)).sum();
        out[0] = queue_cost + idle_cost;
        out[1] = queue_cost;
        let nj = y_hat.len();
        for j in 0..nj {
            out[2 + j] = pow(y_hat[j], c.m_tilde);
        }
        let mut k = 2 + nj;
        out[k] = x_hat.iter().sum::<f64>().max(0.0);
        k += 1;
        let xn = norm(x_hat);
        let qn = norm(q_hat);
        let yn = norm(y_hat);
        for p in MOMENT_ORDERS {
            out[k] = xn.powi(p);
            out[k + 1] = (1.0 + qn + yn).powi(p);
            out[k + 2] = (1.0 + qn).powi(p);
            out[k + 3] = yn.powi(p);
            k += 4;
        }
    }
}
