use std::borrow::Cow;
use std::fmt;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use super::PolicyError;

const SIMPLEX_TOL: f64 = 1e-9;

/// A pair of simplex vectors: `uc` splits the total queue over classes,
/// `us` splits total idleness over pools.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Control {
    pub uc: Vec<f64>,
    pub us: Vec<f64>,
}

impl Control {
    pub fn new(uc: Vec<f64>, us: Vec<f64>) -> Result<Self, PolicyError> {
        let c = Self { uc, us };
        c.validate()?;
        Ok(c)
    }

    pub fn uniform(num_classes: usize, num_pools: usize) -> Self {
        Self {
            uc: vec![1.0 / num_classes as f64; num_classes],
            us: vec![1.0 / num_pools as f64; num_pools],
        }
    }

    /// All queue on `class`, all idleness on `pool`.
    pub fn corner(num_classes: usize, num_pools: usize, class: usize, pool: usize) -> Self {
        let mut uc = vec![0.0; num_classes];
        let mut us = vec![0.0; num_pools];
        uc[class] = 1.0;
        us[pool] = 1.0;
        Self { uc, us }
    }

    pub fn validate(&self) -> Result<(), PolicyError> {
        for (name, v) in [("uc", &self.uc), ("us", &self.us)] {
            let total: f64 = v.iter().sum();
            if v.iter().any(|&p| !(p >= -SIMPLEX_TOL)) || (total - 1.0).abs() > SIMPLEX_TOL {
                return Err(PolicyError::InvalidControl(format!(
                    "{name} = {v:?} is not on the simplex"
                )));
            }
        }
        Ok(())
    }
}

/// A stationary Markov control `x_hat -> (uc, us)`.
#[derive(Clone)]
pub enum MarkovControl {
    Constant(Control),
    /// Nearest-neighbour lookup over grid points in diffusion scale.
    Table {
        points: Vec<Vec<f64>>,
        controls: Vec<Control>,
    },
    ClosedForm(Arc<dyn Fn(&[f64]) -> Control + Send + Sync>),
}

impl fmt::Debug for MarkovControl {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::Constant(c) => f.debug_tuple("Constant").field(c).finish(),
            Self::Table { points, .. } => write!(f, "Table({} points)", points.len()),
            Self::ClosedForm(_) => f.write_str("ClosedForm"),
        }
    }
}

impl MarkovControl {
    pub fn table(points: Vec<Vec<f64>>, controls: Vec<Control>) -> Result<Self, PolicyError> {
        if points.is_empty() || points.len() != controls.len() {
            return Err(PolicyError::InvalidControl(format!(
                "table needs matching non-empty points and controls ({} vs {})",
                points.len(),
                controls.len()
            )));
        }
        for c in &controls {
            c.validate()?;
        }
        Ok(Self::Table { points, controls })
    }

    /// Like [`MarkovControl::eval`] but borrows constant and table controls.
    pub fn eval_cow(&self, x_hat: &[f64]) -> Cow<'_, Control> {
        match self {
            Self::Constant(c) => Cow::Borrowed(c),
            Self::Table { .. } | Self::ClosedForm(_) => Cow::Owned(self.eval(x_hat)),
        }
    }

    pub fn eval(&self, x_hat: &[f64]) -> Control {
        match self {
            Self::Constant(c) => c.clone(),
            Self::Table { points, controls } => {
                let dist = |p: &[f64]| -> f64 {
                    p.iter().zip(x_hat).map(|(a, b)| (a - b) * (a - b)).sum()
                };
                let mut best = 0;
                let mut best_d = f64::INFINITY;
                for (k, p) in points.iter().enumerate() {
                    let d = dist(p);
                    if d < best_d {
                        best = k;
                        best_d = d;
                    }
                }
                controls[best].clone()
            }
            Self::ClosedForm(f) => f(x_hat),
        }
    }

    pub fn kind(&self) -> &'static str {
        match self {
            Self::Constant(_) => "constant",
            Self::Table { .. } => "table",
            Self::ClosedForm(_) => "closed-form",
        }
    }
}
