use serde::Serialize;

use super::{Branch, Policy, PolicyError};
use crate::fluid::FluidSolution;
use crate::topology::{ModelError, NetworkTopology, ScaledParams};

/// Floor used when no margin constant is configured.
pub const MIN_MARGIN: f64 = 0.5;

/// Nominal and shifted per-edge server splits for one scale `n`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CapacityShift {
    pub n: u64,
    /// Largest-remainder split of `xi*_ij N_j`, per edge.
    pub nominal: Vec<i64>,
    /// Shifted split, per edge; column sums equal the pool sizes.
    pub shifted: Vec<i64>,
    /// Row sums of `shifted`.
    pub shifted_class_totals: Vec<i64>,
    /// Mass-transfer direction, per edge; zero column sums.
    pub psi: Vec<f64>,
    pub margin: f64,
    /// `max |shifted - nominal| / sqrt(n)`.
    pub fitted_bound: f64,
}

/// Largest-remainder split of each pool's servers along `xi*`, ties to the
/// lowest class index.
pub fn nominal_split(topo: &NetworkTopology, scaled: &ScaledParams, fluid: &FluidSolution) -> Vec<i64> {
    let mut out = vec![0i64; topo.num_edges()];
    for j in 0..topo.num_pools {
        let edges = topo.pool_edges(j);
        let size = scaled.pool_sizes[j];
        let targets: Vec<f64> = edges
            .iter()
            .map(|&k| fluid.xi_star[(topo.edges[k].0, j)] * size as f64)
            .collect();
        let mut assigned = 0;
        for (slot, &k) in edges.iter().enumerate() {
            out[k] = (targets[slot] + 1e-9).floor() as i64;
            assigned += out[k];
        }
        let mut by_remainder: Vec<usize> = (0..edges.len()).collect();
        by_remainder.sort_by(|&a, &b| {
            let ra = targets[a] - out[edges[a]] as f64;
            let rb = targets[b] - out[edges[b]] as f64;
            rb.total_cmp(&ra).then(a.cmp(&b))
        });
        for &slot in by_remainder.iter().cycle().take((size - assigned).max(0) as usize) {
            out[edges[slot]] += 1;
        }
    }
    out
}

/// The margin constant bounding `|lambda_n - mu_n N|` and `|n x* - N_bar|`
/// on the diffusion scale, floored at [`MIN_MARGIN`].
pub fn default_margin(topo: &NetworkTopology, scaled: &ScaledParams, fluid: &FluidSolution) -> f64 {
    let nominal = nominal_split(topo, scaled, fluid);
    let rn = scaled.sqrt_n();
    let mut bound: f64 = MIN_MARGIN;
    for i in 0..topo.num_classes {
        let mut served = 0.0;
        let mut servers = 0i64;
        for k in topo.class_edges(i) {
            let j = topo.edges[k].1;
            served += scaled.mu[(i, j)] * nominal[k] as f64;
            servers += nominal[k];
        }
        bound = bound
            .max((scaled.lambda[i] - served).abs() / rn)
            .max((scaled.n as f64 * fluid.x_star[i] - servers as f64).abs() / rn);
    }
    bound
}

fn class_totals(topo: &NetworkTopology, edge_vals: &[i64]) -> Vec<i64> {
    let mut totals = vec![0; topo.num_classes];
    for (k, &(i, _)) in topo.edges.iter().enumerate() {
        totals[i] += edge_vals[k];
    }
    totals
}

impl CapacityShift {
    /// Unshifted splits. Used when every class abandons, and for forced
    /// runs without any abandonment.
    pub fn nominal(topo: &NetworkTopology, scaled: &ScaledParams, fluid: &FluidSolution) -> Self {
        let nominal = nominal_split(topo, scaled, fluid);
        Self {
            n: scaled.n,
            shifted_class_totals: class_totals(topo, &nominal),
            shifted: nominal.clone(),
            nominal,
            psi: vec![0.0; topo.num_edges()],
            margin: 0.0,
            fitted_bound: 0.0,
        }
    }

    /// Margin actually achieved by class `i`: `sum_j mu_n (shifted - nominal)`.
    pub fn achieved_margin(&self, topo: &NetworkTopology, scaled: &ScaledParams, class: usize) -> f64 {
        topo.class_edges(class)
            .into_iter()
            .map(|k| {
                let j = topo.edges[k].1;
                scaled.mu[(class, j)] * (self.shifted[k] - self.nominal[k]) as f64
            })
            .sum()
    }
}

/// Routes mass from each non-abandoning class to the nearest abandoning
/// class along the tree so that every non-abandoning class gains service
/// capacity `3 * margin` while intermediate classes net zero.
fn transfer_direction(topo: &NetworkTopology, scaled: &ScaledParams, margin: f64) -> Result<Vec<f64>, PolicyError> {
    let anchors: Vec<usize> = (0..topo.num_classes).filter(|&i| scaled.gamma[i] > 0.0).collect();
    if anchors.is_empty() {
        return Err(PolicyError::NoAnchorClass);
    }
    let mut psi = vec![0.0; topo.num_edges()];
    for start in (0..topo.num_classes).filter(|&i| scaled.gamma[i] == 0.0) {
        let path = anchors
            .iter()
            .filter_map(|&a| topo.class_path(start, a))
            .min_by_key(|p| p.len())
            .ok_or(PolicyError::NoAnchorClass)?;
        let mut amount = 3.0 * margin / scaled.mu[(start, path[0].1)];
        for (h, &(from, pool, to)) in path.iter().enumerate() {
            let up = topo.edge_index(from, pool).expect("path edge");
            let down = topo.edge_index(to, pool).expect("path edge");
            psi[up] += amount;
            psi[down] -= amount;
            if let Some(&(_, next_pool, _)) = path.get(h + 1) {
                amount *= scaled.mu[(to, pool)] / scaled.mu[(to, next_pool)];
            }
        }
    }
    Ok(psi)
}

pub fn build_capacity_shift(
    topo: &NetworkTopology,
    scaled: &ScaledParams,
    fluid: &FluidSolution,
    margin: f64,
) -> Result<CapacityShift, PolicyError> {
    if !(margin > 0.0 && margin.is_finite()) {
        return Err(ModelError::Invalid {
            field: "policy.c_tilde".into(),
            reason: format!("must be positive, got {margin}"),
        }
        .into());
    }
    if scaled.gamma.iter().all(|&g| g == 0.0) {
        return Err(PolicyError::NoAnchorClass);
    }
    let mut shift = CapacityShift::nominal(topo, scaled, fluid);
    shift.margin = margin;
    if scaled.gamma.iter().all(|&g| g > 0.0) {
        return Ok(shift);
    }
    let psi = transfer_direction(topo, scaled, margin)?;
    let rn = scaled.sqrt_n();
    let mut shifted = shift.nominal.clone();
    for j in 0..topo.num_pools {
        let edges = topo.pool_edges(j);
        if edges.len() < 2 {
            continue;
        }
        let (last, rest) = edges.split_last().expect("non-empty");
        let mut used = 0;
        for &k in rest {
            shifted[k] = shift.nominal[k] + (psi[k] * rn).floor() as i64;
            used += shifted[k];
        }
        shifted[*last] = scaled.pool_sizes[j] - used;
    }
    if let Some(k) = shifted.iter().position(|&v| v < 0) {
        return Err(PolicyError::InfeasibleShift {
            n: scaled.n,
            reason: format!("shifted split on edge {:?} is {}", topo.edges[k], shifted[k]),
        });
    }
    shift.fitted_bound = shifted
        .iter()
        .zip(&shift.nominal)
        .map(|(a, b)| (a - b).abs() as f64 / rn)
        .fold(0.0, f64::max);
    shift.shifted_class_totals = class_totals(topo, &shifted);
    shift.shifted = shifted;
    shift.psi = psi;
    for i in (0..topo.num_classes).filter(|&i| scaled.gamma[i] == 0.0) {
        let got = shift.achieved_margin(topo, scaled, i);
        if got < 2.0 * margin * rn {
            return Err(PolicyError::InfeasibleShift {
                n: scaled.n,
                reason: format!(
                    "class {i} gains {got:.3} < {:.3}; increase n or lower the margin",
                    2.0 * margin * rn
                ),
            });
        }
    }
    Ok(shift)
}

/// A balanced saturation policy.
///
/// Unsaturated classes fill their dedicated pools first, then shared pools
/// in index order, each up to the shifted split. Saturated classes take
/// their full split and then absorb leftover idle servers in `order`.
#[derive(Debug, Clone)]
pub struct Bsp {
    topo: NetworkTopology,
    shift: CapacityShift,
    pool_sizes: Vec<i64>,
    order: Vec<usize>,
    fill_order: Vec<Vec<usize>>,
    by_pool: Vec<Vec<usize>>,
}

impl Bsp {
    pub fn new(topo: &NetworkTopology, shift: CapacityShift, pool_sizes: Vec<i64>, order: Vec<usize>) -> Self {
        let fill_order = (0..topo.num_classes)
            .map(|i| {
                let mut edges = topo.class_edges(i);
                edges.sort_by_key(|&k| {
                    let j = topo.edges[k].1;
                    (topo.pool_edges(j).len() > 1, j)
                });
                edges
            })
            .collect();
        let by_pool = (0..topo.num_classes).map(|i| topo.class_edges(i)).collect();
        Self {
            topo: topo.clone(),
            shift,
            pool_sizes,
            order,
            fill_order,
            by_pool,
        }
    }

    pub fn shift(&self) -> &CapacityShift {
        &self.shift
    }
}

impl Policy for Bsp {
    fn decide_into(&self, x: &[i64], z: &mut [i64]) -> Result<Branch, PolicyError> {
        let shifted = &self.shift.shifted;
        let totals = &self.shift.shifted_class_totals;
        let mut y = self.pool_sizes.clone();
        let mut q = x.to_vec();
        for i in 0..self.topo.num_classes {
            if x[i] <= totals[i] {
                let mut rest = x[i];
                for &k in &self.fill_order[i] {
                    let take = rest.min(shifted[k]);
                    z[k] = take;
                    rest -= take;
                }
            } else {
                for &k in &self.fill_order[i] {
                    z[k] = shifted[k];
                }
            }
            for &k in &self.fill_order[i] {
                q[i] -= z[k];
                y[self.topo.edges[k].1] -= z[k];
            }
        }
        for &i in &self.order {
            if x[i] <= totals[i] {
                continue;
            }
            for &k in &self.by_pool[i] {
                let j = self.topo.edges[k].1;
                let extra = q[i].min(y[j]);
                z[k] += extra;
                q[i] -= extra;
                y[j] -= extra;
            }
        }
        Ok(Branch::Bsp)
    }

    fn name(&self) -> &'static str {
        "bsp"
    }

    fn num_edges(&self) -> usize {
        self.topo.num_edges()
    }
}

/// One-shot BSP decision with saturation in class-index order.
pub fn bsp_decide(topo: &NetworkTopology, x: &[i64], shift: &CapacityShift, scaled: &ScaledParams) -> Vec<i64> {
    let order = (0..topo.num_classes).collect();
    let bsp = Bsp::new(topo, shift.clone(), scaled.pool_sizes.clone(), order);
    let mut z = vec![0; topo.num_edges()];
    bsp.decide_into(x, &mut z).expect("BSP is total");
    z
}
