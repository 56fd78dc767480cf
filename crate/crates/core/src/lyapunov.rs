//! Polynomial and exponential Lyapunov test functions in a weighted norm.
//!
//! Both are written as functions of `w = ||x||_beta^2` so derivatives follow
//! from the chain rule: `d_i f = F'(w) 2 beta_i x_i` and
//! `d_ii f = F''(w) (2 beta_i x_i)^2 + F'(w) 2 beta_i`.

use serde::{Deserialize, Serialize};

use crate::topology::ModelError;

/// A twice-differentiable function with gradient and Hessian diagonal.
pub trait TestFunction {
    fn value(&self, x: &[f64]) -> f64;
    fn gradient(&self, x: &[f64]) -> Vec<f64>;
    fn hessian_diag(&self, x: &[f64]) -> Vec<f64>;
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum LyapunovKind {
    /// `||x||_beta^kappa` outside the unit ball, an even quartic in
    /// `||x||_beta` inside matched to second order.
    Polynomial { kappa: f64 },
    /// `exp(eps w / sqrt(1 + w))`.
    Exponential { epsilon: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LyapunovSpec {
    #[serde(flatten)]
    pub kind: LyapunovKind,
    /// Positive weights, scaled so the smallest is 1.
    pub beta: Vec<f64>,
    /// Cone half-width used by the structural checks.
    pub delta: f64,
}

pub const DEFAULT_DELTA: f64 = 0.1;

impl LyapunovSpec {
    pub fn new(kind: LyapunovKind, beta: Vec<f64>, delta: f64) -> Result<Self, ModelError> {
        let bad = |field: &str, reason: String| ModelError::Invalid {
            field: field.to_string(),
            reason,
        };
        if beta.is_empty() || beta.iter().any(|&b| !(b > 0.0 && b.is_finite())) {
            return Err(bad("lyapunov.beta", "weights must be positive".into()));
        }
        match kind {
            LyapunovKind::Polynomial { kappa } if !(kappa >= 1.0) => {
                return Err(bad("lyapunov.kappa", format!("must be >= 1, got {kappa}")))
            }
            LyapunovKind::Exponential { epsilon } if !(epsilon > 0.0) => {
                return Err(bad("lyapunov.epsilon", format!("must be > 0, got {epsilon}")))
            }
            _ => {}
        }
        if !(delta > 0.0) {
            return Err(bad("lyapunov.delta", format!("must be > 0, got {delta}")));
        }
        let min = beta.iter().cloned().fold(f64::INFINITY, f64::min);
        Ok(Self {
            kind,
            beta: beta.iter().map(|b| b / min).collect(),
            delta,
        })
    }

    pub fn polynomial(kappa: f64, beta: Vec<f64>) -> Result<Self, ModelError> {
        Self::new(LyapunovKind::Polynomial { kappa }, beta, DEFAULT_DELTA)
    }

    pub fn exponential(epsilon: f64, beta: Vec<f64>) -> Result<Self, ModelError> {
        Self::new(LyapunovKind::Exponential { epsilon }, beta, DEFAULT_DELTA)
    }

    pub fn weighted_sq(&self, x: &[f64]) -> f64 {
        x.iter().zip(&self.beta).map(|(v, b)| b * v * v).sum()
    }

    /// `F(w)`, `F'(w)`, `F''(w)`.
    fn radial(&self, w: f64) -> (f64, f64, f64) {
        match self.kind {
            LyapunovKind::Polynomial { kappa } => {
                if w >= 1.0 {
                    let h = kappa / 2.0;
                    (w.powf(h), h * w.powf(h - 1.0), h * (h - 1.0) * w.powf(h - 2.0))
                } else {
                    let c = kappa * (kappa - 2.0) / 8.0;
                    let b = (kappa - 4.0 * c) / 2.0;
                    let a = 1.0 - b - c;
                    (a + b * w + c * w * w, b + 2.0 * c * w, 2.0 * c)
                }
            }
            LyapunovKind::Exponential { epsilon } => {
                let s = 1.0 + w;
                let g = w / s.sqrt();
                let g1 = (2.0 + w) / (2.0 * s.powf(1.5));
                let g2 = -(w + 4.0) / (4.0 * s.powf(2.5));
                let f = (epsilon * g).exp();
                (f, epsilon * g1 * f, (epsilon * g2 + epsilon * epsilon * g1 * g1) * f)
            }
        }
    }

    /// `log f(x)` for the exponential kind: `eps g(w)`.
    pub fn exponent(&self, x: &[f64]) -> f64 {
        match self.kind {
            LyapunovKind::Exponential { epsilon } => {
                let w = self.weighted_sq(x);
                epsilon * w / (1.0 + w).sqrt()
            }
            LyapunovKind::Polynomial { .. } => self.value(x).ln(),
        }
    }

    /// `|e.x| > delta |x|`.
    pub fn in_cone(&self, x: &[f64]) -> bool {
        x.iter().sum::<f64>().abs() > self.delta * euclid(x)
    }

    /// `e.x > delta |x|`.
    pub fn in_positive_cone(&self, x: &[f64]) -> bool {
        x.iter().sum::<f64>() > self.delta * euclid(x)
    }
}

pub fn euclid(x: &[f64]) -> f64 {
    x.iter().map(|v| v * v).sum::<f64>().sqrt()
}

impl TestFunction for LyapunovSpec {
    fn value(&self, x: &[f64]) -> f64 {
        self.radial(self.weighted_sq(x)).0
    }

    fn gradient(&self, x: &[f64]) -> Vec<f64> {
        let (_, d1, _) = self.radial(self.weighted_sq(x));
        x.iter().zip(&self.beta).map(|(v, b)| d1 * 2.0 * b * v).collect()
    }

    fn hessian_diag(&self, x: &[f64]) -> Vec<f64> {
        let (_, d1, d2) = self.radial(self.weighted_sq(x));
        x.iter()
            .zip(&self.beta)
            .map(|(v, b)| {
                let dw = 2.0 * b * v;
                d2 * dw * dw + d1 * 2.0 * b
            })
            .collect()
    }
}
