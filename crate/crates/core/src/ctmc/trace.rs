use serde::Serialize;

use super::SimError;
use crate::fluid::FluidSolution;
use crate::measure::{DetMap, EmpiricalMeasure, Histogram, MeasureBuilder};
use crate::policies::{idle, queues, Policy};
use crate::stats::{fit_line, LineFit};
use crate::topology::{NetworkTopology, ScaledParams};

/// Number of exceedance levels used by [`tail_decay_fit`].
pub const TAIL_LEVELS: usize = 20;
const MIN_DISTINCT_LEVELS: usize = 10;

/// Post-burn-in time spent in each visited state.
#[derive(Debug, Clone, Default)]
pub struct Occupancy {
    time: DetMap<Vec<i64>, f64>,
    total: f64,
}

impl Occupancy {
    pub fn add(&mut self, x: &[i64], weight: f64) {
        if weight <= 0.0 {
            return;
        }
        self.total += weight;
        if let Some(w) = self.time.get_mut(x) {
            *w += weight;
        } else {
            self.time.insert(x.to_vec(), weight);
        }
    }

    pub fn total_time(&self) -> f64 {
        self.total
    }

    pub fn num_states(&self) -> usize {
        self.time.len()
    }

    /// `(state, time)` pairs in lexicographic state order.
    pub fn sorted(&self) -> Vec<(&Vec<i64>, f64)> {
        let mut v: Vec<_> = self.time.iter().map(|(k, &w)| (k, w)).collect();
        v.sort_by(|a, b| a.0.cmp(b.0));
        v
    }

    /// Time-weighted histogram of `x_hat` on cells of side `cell`.
    pub fn histogram(&self, scaled: &ScaledParams, fluid: &FluidSolution, cell: f64) -> Histogram {
        let rn = scaled.sqrt_n();
        let n = scaled.n as f64;
        let mut h = Histogram::new(cell);
        let mut x_hat = vec![0.0; fluid.x_star.len()];
        for (x, w) in self.sorted() {
            for (i, v) in x.iter().enumerate() {
                x_hat[i] = (*v as f64 - n * fluid.x_star[i]) / rn;
            }
            h.add(&x_hat, w);
        }
        h
    }

    /// As [`Occupancy::histogram`], but each state's time is spread
    /// uniformly over its lattice cell `x_hat +- 1/(2 sqrt(n))` so a grid
    /// that is not a multiple of the lattice spacing does not alias.
    pub fn lattice_histogram(&self, scaled: &ScaledParams, fluid: &FluidSolution, cell: f64) -> Histogram {
        let rn = scaled.sqrt_n();
        let n = scaled.n as f64;
        let side = 1.0 / rn;
        let mut h = Histogram::new(cell);
        let mut lo = vec![0.0; fluid.x_star.len()];
        for (x, w) in self.sorted() {
            for (i, v) in x.iter().enumerate() {
                lo[i] = (*v as f64 - n * fluid.x_star[i]) / rn - 0.5 * side;
            }
            h.add_box(&lo, side, w);
        }
        h
    }

    /// `(|x_hat|, probability)` in increasing norm.
    pub fn norm_distribution(&self, scaled: &ScaledParams, fluid: &FluidSolution) -> Vec<(f64, f64)> {
        let rn = scaled.sqrt_n();
        let n = scaled.n as f64;
        let mut v: Vec<(f64, f64)> = self
            .sorted()
            .into_iter()
            .map(|(x, w)| {
                let r = x
                    .iter()
                    .zip(&fluid.x_star)
                    .map(|(&xi, &c)| ((xi as f64 - n * c) / rn).powi(2))
                    .sum::<f64>()
                    .sqrt();
                (r, w / self.total)
            })
            .collect();
        v.sort_by(|a, b| a.0.total_cmp(&b.0));
        v
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TailFit {
    pub slope: f64,
    pub intercept: f64,
    pub r_squared: f64,
    /// `(r, P(|x_hat| > r))` used in the fit.
    pub levels: Vec<(f64, f64)>,
}

/// Least-squares fit of `log P(|x_hat| > r)` against `r` over levels
/// between the median and the `1e-3` exceedance point.
pub fn tail_decay_fit(occ: &Occupancy, scaled: &ScaledParams, fluid: &FluidSolution) -> Result<TailFit, SimError> {
    let dist = occ.norm_distribution(scaled, fluid);
    if dist.is_empty() {
        return Err(SimError::InsufficientTail { levels: 0 });
    }
    let exceed = |r: f64| -> f64 { dist.iter().filter(|(v, _)| *v > r).map(|(_, p)| p).sum() };
    let quantile = |level: f64| -> f64 {
        // smallest r with P(|x_hat| > r) <= level
        let mut tail: f64 = dist.iter().map(|(_, p)| p).sum();
        for &(r, p) in &dist {
            tail -= p;
            if tail <= level {
                return r;
            }
        }
        dist.last().map(|d| d.0).unwrap_or(0.0)
    };
    let (lo, hi) = (quantile(0.5), quantile(1e-3));
    let mut levels = Vec::with_capacity(TAIL_LEVELS);
    if hi > lo {
        for k in 0..TAIL_LEVELS {
            let r = lo + (hi - lo) * k as f64 / (TAIL_LEVELS - 1) as f64;
            let p = exceed(r);
            if p > 0.0 {
                levels.push((r, p));
            }
        }
    }
    let mut distinct: Vec<f64> = levels.iter().map(|l| l.1).collect();
    distinct.dedup();
    if distinct.len() < MIN_DISTINCT_LEVELS {
        return Err(SimError::InsufficientTail { levels: distinct.len() });
    }
    let xs: Vec<f64> = levels.iter().map(|l| l.0).collect();
    let ys: Vec<f64> = levels.iter().map(|l| l.1.ln()).collect();
    let LineFit {
        slope,
        intercept,
        r_squared,
    } = fit_line(&xs, &ys);
    Ok(TailFit {
        slope,
        intercept,
        r_squared,
        levels,
    })
}

/// Time-weighted histogram of `(x_hat, u)` where `u` is the share of
/// the total queue per class and of total idleness per pool, defaulting to
/// the last class or pool when the total is zero.
#[allow(clippy::too_many_arguments)]
pub fn empirical_measure(
    occ: &Occupancy,
    topo: &NetworkTopology,
    scaled: &ScaledParams,
    fluid: &FluidSolution,
    policy: &dyn Policy,
    cell: f64,
    box_radius: f64,
    u_bins: usize,
) -> Result<EmpiricalMeasure, SimError> {
    let (ni, nj) = (topo.num_classes, topo.num_pools);
    let rn = scaled.sqrt_n();
    let n = scaled.n as f64;
    let mut builder = MeasureBuilder::new(cell, box_radius, u_bins);
    let mut z = vec![0; topo.num_edges()];
    let share = |v: &[i64], len: usize| -> Vec<f64> {
        let total: i64 = v.iter().sum();
        if total > 0 {
            v.iter().map(|&a| a as f64 / total as f64).collect()
        } else {
            let mut e = vec![0.0; len];
            e[len - 1] = 1.0;
            e
        }
    };
    for (x, w) in occ.sorted() {
        policy.decide_into(x, &mut z)?;
        let q = queues(topo, x, &z);
        let y = idle(topo, &scaled.pool_sizes, &z);
        let x_hat: Vec<f64> = x
            .iter()
            .zip(&fluid.x_star)
            .map(|(&v, &c)| (v as f64 - n * c) / rn)
            .collect();
        builder.add(&x_hat, &share(&q, ni), &share(&y, nj), w);
    }
    Ok(builder.finish())
}
