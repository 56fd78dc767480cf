//! Fluid equilibrium, the tree allocation map `Psi`, and the structured
//! drift matrices `B1`, `B2` recovered numerically from the `Psi` drift.

use std::ops::{Add, Sub};

use nalgebra::{DMatrix, DVector};
use serde::Serialize;
use thiserror::Error;

use crate::diffusion::DiffusionModel;
use crate::policies::Control;
use crate::topology::{LimitParams, ModelError, NetworkTopology};

pub const FLUID_TOL: f64 = 1e-9;
pub const DOMAIN_TOL: f64 = 1e-9;
const SNAP_TOL: f64 = 1e-10;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum FluidError {
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error("network is not critically loaded (residual {residual:.3e})")]
    NotCriticallyLoaded { residual: f64 },
    #[error("complete resource pooling fails: xi[{class},{pool}] = {value:.3e}")]
    ResourcePoolingViolated { class: usize, pool: usize, value: f64 },
    #[error("Psi domain violation: class total {class_total} != pool total {pool_total}")]
    DomainViolation { class_total: f64, pool_total: f64 },
    #[error("drift structure violation: {0}")]
    StructureViolation(String),
}

fn require_tree(topo: &NetworkTopology) -> Result<(), ModelError> {
    let report = topo.validate();
    if report.is_valid() {
        Ok(())
    } else {
        Err(ModelError::InvalidTopology(format!("{:?}", report.violations)))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FluidSolution {
    pub xi_star: DMatrix<f64>,
    pub x_star: Vec<f64>,
    pub z_star: DMatrix<f64>,
}

impl FluidSolution {
    /// `z*` restricted to the edge list.
    pub fn edge_z_star(&self, topo: &NetworkTopology) -> Vec<f64> {
        topo.edges.iter().map(|&(i, j)| self.z_star[(i, j)]).collect()
    }

    pub fn edge_xi_star(&self, topo: &NetworkTopology) -> Vec<f64> {
        topo.edges.iter().map(|&(i, j)| self.xi_star[(i, j)]).collect()
    }
}

/// Solves the critical-load fluid system on the tree's edges.
///
/// With `I + J - 1` unknowns and `I + J` equations (one redundant under
/// critical load) the least-norm solution is the unique fluid point when the
/// residual vanishes.
pub fn solve_fluid(topo: &NetworkTopology, limit: &LimitParams) -> Result<FluidSolution, FluidError> {
    require_tree(topo)?;
    limit.validate(topo, true)?;
    let (ni, nj, ne) = (topo.num_classes, topo.num_pools, topo.num_edges());
    let mut a = DMatrix::<f64>::zeros(ni + nj, ne);
    let mut rhs = DVector::<f64>::zeros(ni + nj);
    for (k, &(i, j)) in topo.edges.iter().enumerate() {
        a[(i, k)] = limit.mu[(i, j)] * limit.nu[j];
        a[(ni + j, k)] = 1.0;
    }
    for i in 0..ni {
        rhs[i] = limit.lambda[i];
    }
    for j in 0..nj {
        rhs[ni + j] = 1.0;
    }
    let svd = a.clone().svd(true, true);
    let xi = svd
        .solve(&rhs, 1e-12)
        .map_err(|e| FluidError::StructureViolation(e.to_string()))?;
    let residual = (&a * &xi - &rhs).amax();
    if !(residual <= FLUID_TOL) {
        return Err(FluidError::NotCriticallyLoaded { residual });
    }
    let mut xi_star = DMatrix::zeros(ni, nj);
    let mut z_star = DMatrix::zeros(ni, nj);
    let mut x_star = vec![0.0; ni];
    for (k, &(i, j)) in topo.edges.iter().enumerate() {
        if xi[k] < FLUID_TOL {
            return Err(FluidError::ResourcePoolingViolated {
                class: i,
                pool: j,
                value: xi[k],
            });
        }
        xi_star[(i, j)] = xi[k];
        z_star[(i, j)] = xi[k] * limit.nu[j];
        x_star[i] += xi[k] * limit.nu[j];
    }
    Ok(FluidSolution {
        xi_star,
        x_star,
        z_star,
    })
}

/// Scalar types the peeling plan can run on. `i64` gives exact results.
pub trait PsiScalar: Copy + Default + PartialEq + Add<Output = Self> + Sub<Output = Self> {}
impl PsiScalar for f64 {}
impl PsiScalar for i64 {}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Leaf {
    Class(usize),
    Pool(usize),
}

#[derive(Debug, Clone, Copy)]
struct PeelStep {
    edge: usize,
    leaf: Leaf,
}

/// Leaf-elimination order for a tree, computed once and replayed for every
/// evaluation of `Psi`.
#[derive(Debug, Clone)]
pub struct PsiPlan {
    num_classes: usize,
    num_pools: usize,
    edges: Vec<(usize, usize)>,
    steps: Vec<PeelStep>,
}

impl PsiPlan {
    pub fn new(topo: &NetworkTopology) -> Result<Self, ModelError> {
        require_tree(topo)?;
        let (ni, nj) = (topo.num_classes, topo.num_pools);
        let mut class_deg = vec![0usize; ni];
        let mut pool_deg = vec![0usize; nj];
        for &(i, j) in &topo.edges {
            class_deg[i] += 1;
            pool_deg[j] += 1;
        }
        let mut alive = vec![true; topo.num_edges()];
        let mut steps = Vec::with_capacity(topo.num_edges());
        while steps.len() < topo.num_edges() {
            let leaf = (0..ni)
                .find(|&i| class_deg[i] == 1)
                .map(Leaf::Class)
                .or_else(|| (0..nj).find(|&j| pool_deg[j] == 1).map(Leaf::Pool))
                .expect("a tree always has a leaf");
            let edge = (0..topo.num_edges())
                .find(|&k| {
                    alive[k]
                        && match leaf {
                            Leaf::Class(i) => topo.edges[k].0 == i,
                            Leaf::Pool(j) => topo.edges[k].1 == j,
                        }
                })
                .expect("leaf has one live edge");
            alive[edge] = false;
            let (i, j) = topo.edges[edge];
            class_deg[i] -= 1;
            pool_deg[j] -= 1;
            steps.push(PeelStep { edge, leaf });
        }
        Ok(Self {
            num_classes: ni,
            num_pools: nj,
            edges: topo.edges.clone(),
            steps,
        })
    }

    pub fn num_edges(&self) -> usize {
        self.edges.len()
    }

    /// Writes edge values of `Psi(alpha, beta)` into `out` without checking
    /// the domain. Off the domain the mismatch lands on the last peeled edge.
    pub fn apply_edges<T: PsiScalar>(&self, alpha: &[T], beta: &[T], out: &mut [T]) {
        let mut row = Vec::new();
        let mut col = Vec::new();
        self.apply_edges_with(alpha, beta, out, &mut row, &mut col);
    }

    /// As [`PsiPlan::apply_edges`], reusing `row` and `col` as scratch.
    pub fn apply_edges_with<T: PsiScalar>(
        &self,
        alpha: &[T],
        beta: &[T],
        out: &mut [T],
        row: &mut Vec<T>,
        col: &mut Vec<T>,
    ) {
        debug_assert_eq!(alpha.len(), self.num_classes);
        debug_assert_eq!(beta.len(), self.num_pools);
        row.clear();
        row.extend_from_slice(alpha);
        col.clear();
        col.extend_from_slice(beta);
        for step in &self.steps {
            let (i, j) = self.edges[step.edge];
            let v = match step.leaf {
                Leaf::Class(_) => {
                    let v = row[i];
                    col[j] = col[j] - v;
                    v
                }
                Leaf::Pool(_) => {
                    let v = col[j];
                    row[i] = row[i] - v;
                    v
                }
            };
            out[step.edge] = v;
        }
    }

    pub fn apply_f64(&self, alpha: &[f64], beta: &[f64]) -> Result<Vec<f64>, FluidError> {
        let class_total: f64 = alpha.iter().sum();
        let pool_total: f64 = beta.iter().sum();
        let scale = 1f64.max(class_total.abs()).max(pool_total.abs());
        if !((class_total - pool_total).abs() <= DOMAIN_TOL * scale) {
            return Err(FluidError::DomainViolation {
                class_total,
                pool_total,
            });
        }
        let mut out = vec![0.0; self.edges.len()];
        self.apply_edges(alpha, beta, &mut out);
        Ok(out)
    }

    pub fn apply_i64(&self, alpha: &[i64], beta: &[i64]) -> Result<Vec<i64>, FluidError> {
        let class_total: i64 = alpha.iter().sum();
        let pool_total: i64 = beta.iter().sum();
        if class_total != pool_total {
            return Err(FluidError::DomainViolation {
                class_total: class_total as f64,
                pool_total: pool_total as f64,
            });
        }
        let mut out = vec![0; self.edges.len()];
        self.apply_edges(alpha, beta, &mut out);
        Ok(out)
    }

    pub fn to_matrix(&self, edge_values: &[f64]) -> DMatrix<f64> {
        let mut m = DMatrix::zeros(self.num_classes, self.num_pools);
        for (k, &(i, j)) in self.edges.iter().enumerate() {
            m[(i, j)] = edge_values[k];
        }
        m
    }
}

/// `Psi(alpha, beta)` as an `I x J` matrix.
pub fn psi_map(topo: &NetworkTopology, alpha: &[f64], beta: &[f64]) -> Result<DMatrix<f64>, FluidError> {
    if alpha.len() != topo.num_classes || beta.len() != topo.num_pools {
        return Err(FluidError::Model(ModelError::Invalid {
            field: "psi arguments".into(),
            reason: format!(
                "expected lengths ({}, {}), got ({}, {})",
                topo.num_classes,
                topo.num_pools,
                alpha.len(),
                beta.len()
            ),
        }));
    }
    let plan = PsiPlan::new(topo)?;
    let edges = plan.apply_f64(alpha, beta)?;
    Ok(plan.to_matrix(&edges))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DriftMatrices {
    pub ell: Vec<f64>,
    pub b1: DMatrix<f64>,
    pub b2: DMatrix<f64>,
    pub gamma: Vec<f64>,
    pub elimination_order: Vec<usize>,
}

impl DriftMatrices {
    /// `b(x, u) = ell - B1 (x - s+ u^c) + s- B2 u^s - s+ Gamma u^c` with
    /// `s = e.x`.
    pub fn reconstruct(&self, x: &[f64], u: &Control) -> Vec<f64> {
        let s: f64 = x.iter().sum();
        let (sp, sm) = (s.max(0.0), (-s).max(0.0));
        let ni = self.ell.len();
        let shifted: Vec<f64> = (0..ni).map(|i| x[i] - sp * u.uc[i]).collect();
        (0..ni)
            .map(|i| {
                let b1x: f64 = (0..ni).map(|k| self.b1[(i, k)] * shifted[k]).sum();
                let b2u: f64 = (0..self.b2.ncols()).map(|j| self.b2[(i, j)] * u.us[j]).sum();
                self.ell[i] - b1x + sm * b2u - sp * self.gamma[i] * u.uc[i]
            })
            .collect()
    }

    /// `B1` with rows and columns permuted into elimination order.
    pub fn permuted_b1(&self) -> DMatrix<f64> {
        let ni = self.elimination_order.len();
        DMatrix::from_fn(ni, ni, |a, b| {
            self.b1[(self.elimination_order[a], self.elimination_order[b])]
        })
    }
}

fn snap(v: f64) -> f64 {
    if v.abs() <= SNAP_TOL {
        0.0
    } else {
        v
    }
}

fn all_equal(vals: &[f64]) -> bool {
    vals.windows(2)
        .all(|w| (w[0] - w[1]).abs() <= SNAP_TOL * 1f64.max(w[0].abs()).max(w[1].abs()))
}

/// Recovers `(ell, B1, B2)` by probing the `Psi`-based drift.
///
/// On `{e.x = 0}` only differences of `B1` columns are identified; the
/// remaining per-row offset `w` is chosen so that `B1` becomes
/// lower-triangular in a greedy elimination order. The reconstruction
/// identity does not depend on that choice.
pub fn extract_drift_matrices(
    topo: &NetworkTopology,
    limit: &LimitParams,
    fluid: &FluidSolution,
) -> Result<DriftMatrices, FluidError> {
    let model = DiffusionModel::new(topo, limit, fluid)?;
    let (ni, nj) = (topo.num_classes, topo.num_pools);
    let ell = model.ell().to_vec();
    let last = ni - 1;
    let idle = Control::uniform(ni, nj);

    // R[:, k] = B1[:, k] - B1[:, last]
    let mut r = DMatrix::<f64>::zeros(ni, ni);
    for k in 0..last {
        let mut x = vec![0.0; ni];
        x[k] = 1.0;
        x[last] = -1.0;
        let b = model.drift(&x, &idle);
        for i in 0..ni {
            r[(i, k)] = snap(ell[i] - b[i]);
        }
    }
    // g_j = B1[:, last] + B2[:, j]
    let mut g = DMatrix::<f64>::zeros(ni, nj);
    for j in 0..nj {
        let mut x = vec![0.0; ni];
        x[last] = -1.0;
        let u = Control::corner(ni, nj, 0, j);
        let b = model.drift(&x, &u);
        for i in 0..ni {
            g[(i, j)] = snap(b[i] - ell[i]);
        }
    }

    let mut order = Vec::with_capacity(ni);
    let mut placed = vec![false; ni];
    let mut w = vec![0.0; ni];
    while order.len() + 1 < ni {
        let pick = (0..ni).filter(|&c| !placed[c]).find(|&c| {
            let later: Vec<f64> = (0..ni)
                .filter(|&k| !placed[k] && k != c)
                .map(|k| r[(c, k)])
                .collect();
            all_equal(&later)
        });
        let Some(c) = pick else {
            return Err(FluidError::StructureViolation(format!(
                "no class can be eliminated after {order:?}"
            )));
        };
        let later = (0..ni).find(|&k| !placed[k] && k != c).expect("at least two remain");
        w[c] = -r[(c, later)];
        placed[c] = true;
        order.push(c);
    }
    let c = (0..ni).find(|&k| !placed[k]).expect("one class remains");
    // Pin the free offset by zeroing B2 on the first pool not yet used by
    // earlier rows.
    let j_star = (0..nj)
        .find(|&j| order.iter().all(|&p| snap(g[(p, j)] - w[p]) == 0.0))
        .unwrap_or(0);
    w[c] = g[(c, j_star)];
    order.push(c);

    let b1 = DMatrix::from_fn(ni, ni, |i, k| snap(r[(i, k)] + w[i]));
    let b2 = DMatrix::from_fn(ni, nj, |i, j| snap(g[(i, j)] - w[i]));
    for (pos, &ci) in order.iter().enumerate() {
        if !(b1[(ci, ci)] > 0.0) {
            return Err(FluidError::StructureViolation(format!(
                "diagonal entry for class {ci} is {}",
                b1[(ci, ci)]
            )));
        }
        for &later in &order[pos + 1..] {
            if b1[(ci, later)] != 0.0 {
                return Err(FluidError::StructureViolation(format!(
                    "B1[{ci},{later}] = {} above the diagonal",
                    b1[(ci, later)]
                )));
            }
        }
    }
    Ok(DriftMatrices {
        ell,
        b1,
        b2,
        gamma: limit.gamma.clone(),
        elimination_order: order,
    })
}
