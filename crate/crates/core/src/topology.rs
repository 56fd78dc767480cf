//! Network graph, fluid-limit parameters and their Halfin-Whitt scaling.
//!
//! Classes and pools are 0-indexed throughout the library. Edge-valued
//! quantities (allocations, shifts) are stored as vectors indexed by the
//! position of the edge in [`NetworkTopology::edges`].

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ModelError {
    #[error("invalid topology: {0}")]
    InvalidTopology(String),
    #[error("parameter `{field}` has length {got}, expected {expected}")]
    Length {
        field: &'static str,
        got: usize,
        expected: usize,
    },
    #[error("invalid parameter `{field}`: {reason}")]
    Invalid { field: String, reason: String },
    #[error("all abandonment rates are zero; stability results need some gamma_i > 0")]
    NoAbandonment,
    #[error("rate `{field}` is non-positive ({value}) at n = {n}")]
    NegativeRate { field: String, value: f64, n: u64 },
    #[error("scale parameter n must be at least 1")]
    BadScale,
}

/// The bipartite class/pool compatibility graph.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct NetworkTopology {
    pub num_classes: usize,
    pub num_pools: usize,
    pub edges: Vec<(usize, usize)>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub enum Violation {
    EmptyNetwork,
    EdgeOutOfRange { class: usize, pool: usize },
    DuplicateEdge { class: usize, pool: usize },
    IsolatedClass(usize),
    IsolatedPool(usize),
    EdgeCount { edges: usize, expected: usize },
    Disconnected,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize)]
pub struct ValidationReport {
    pub violations: Vec<Violation>,
}

impl ValidationReport {
    pub fn is_valid(&self) -> bool {
        self.violations.is_empty()
    }
}

impl NetworkTopology {
    pub fn new(num_classes: usize, num_pools: usize, edges: Vec<(usize, usize)>) -> Self {
        Self {
            num_classes,
            num_pools,
            edges,
        }
    }

    /// The `N` network: class 0 served by pools 0 and 1, class 1 by pool 1.
    pub fn n_network() -> Self {
        Self::new(2, 2, vec![(0, 0), (0, 1), (1, 1)])
    }

    /// The `M` network: two classes, three pools, pool 1 shared.
    pub fn m_network() -> Self {
        Self::new(2, 3, vec![(0, 0), (0, 1), (1, 1), (1, 2)])
    }

    pub fn single() -> Self {
        Self::new(1, 1, vec![(0, 0)])
    }

    pub fn num_edges(&self) -> usize {
        self.edges.len()
    }

    pub fn edge_index(&self, class: usize, pool: usize) -> Option<usize> {
        self.edges.iter().position(|&e| e == (class, pool))
    }

    pub fn has_edge(&self, class: usize, pool: usize) -> bool {
        self.edge_index(class, pool).is_some()
    }

    /// Edge indices incident to `class`, in pool order.
    pub fn class_edges(&self, class: usize) -> Vec<usize> {
        let mut out: Vec<usize> = (0..self.edges.len())
            .filter(|&k| self.edges[k].0 == class)
            .collect();
        out.sort_by_key(|&k| self.edges[k].1);
        out
    }

    /// Edge indices incident to `pool`, in class order.
    pub fn pool_edges(&self, pool: usize) -> Vec<usize> {
        let mut out: Vec<usize> = (0..self.edges.len())
            .filter(|&k| self.edges[k].1 == pool)
            .collect();
        out.sort_by_key(|&k| self.edges[k].0);
        out
    }

    /// Node ids: classes are `0..I`, pools are `I..I+J`.
    fn adjacency(&self) -> Vec<Vec<usize>> {
        let nodes = self.num_classes + self.num_pools;
        let mut adj = vec![Vec::new(); nodes];
        for &(i, j) in &self.edges {
            if i < self.num_classes && j < self.num_pools {
                adj[i].push(self.num_classes + j);
                adj[self.num_classes + j].push(i);
            }
        }
        adj
    }

    pub fn is_connected(&self) -> bool {
        let adj = self.adjacency();
        if adj.is_empty() {
            return false;
        }
        let mut seen = vec![false; adj.len()];
        let mut stack = vec![0];
        seen[0] = true;
        while let Some(v) = stack.pop() {
            for &w in &adj[v] {
                if !seen[w] {
                    seen[w] = true;
                    stack.push(w);
                }
            }
        }
        seen.into_iter().all(|s| s)
    }

    /// Union-find cycle detection; independent of the edge-count argument.
    pub fn is_acyclic(&self) -> bool {
        let nodes = self.num_classes + self.num_pools;
        let mut parent: Vec<usize> = (0..nodes).collect();
        fn find(parent: &mut [usize], mut v: usize) -> usize {
            while parent[v] != v {
                parent[v] = parent[parent[v]];
                v = parent[v];
            }
            v
        }
        for &(i, j) in &self.edges {
            if i >= self.num_classes || j >= self.num_pools {
                continue;
            }
            let a = find(&mut parent, i);
            let b = find(&mut parent, self.num_classes + j);
            if a == b {
                return false;
            }
            parent[a] = b;
        }
        true
    }

    pub fn validate(&self) -> ValidationReport {
        validate_topology(self)
    }

    /// Path from class `from` to class `to` as alternating
    /// `(class, pool, class, pool, ..., class)` hops, returned as the list of
    /// `(class, pool, next_class)` triples. `None` if unreachable.
    pub fn class_path(&self, from: usize, to: usize) -> Option<Vec<(usize, usize, usize)>> {
        let adj = self.adjacency();
        let mut prev = vec![usize::MAX; adj.len()];
        let mut queue = std::collections::VecDeque::new();
        prev[from] = from;
        queue.push_back(from);
        while let Some(v) = queue.pop_front() {
            if v == to {
                break;
            }
            let mut next = adj[v].clone();
            next.sort_unstable();
            for w in next {
                if prev[w] == usize::MAX {
                    prev[w] = v;
                    queue.push_back(w);
                }
            }
        }
        if prev[to] == usize::MAX {
            return None;
        }
        let mut nodes = vec![to];
        let mut v = to;
        while v != from {
            v = prev[v];
            nodes.push(v);
        }
        nodes.reverse();
        let hops = nodes
            .windows(3)
            .step_by(2)
            .map(|w| (w[0], w[1] - self.num_classes, w[2]))
            .collect();
        Some(hops)
    }
}

pub fn validate_topology(topo: &NetworkTopology) -> ValidationReport {
    let mut violations = Vec::new();
    if topo.num_classes == 0 || topo.num_pools == 0 {
        violations.push(Violation::EmptyNetwork);
        return ValidationReport { violations };
    }
    let mut seen = std::collections::BTreeSet::new();
    for &(i, j) in &topo.edges {
        if i >= topo.num_classes || j >= topo.num_pools {
            violations.push(Violation::EdgeOutOfRange { class: i, pool: j });
        } else if !seen.insert((i, j)) {
            violations.push(Violation::DuplicateEdge { class: i, pool: j });
        }
    }
    for i in 0..topo.num_classes {
        if !seen.iter().any(|&(c, _)| c == i) {
            violations.push(Violation::IsolatedClass(i));
        }
    }
    for j in 0..topo.num_pools {
        if !seen.iter().any(|&(_, p)| p == j) {
            violations.push(Violation::IsolatedPool(j));
        }
    }
    let expected = topo.num_classes + topo.num_pools - 1;
    if topo.edges.len() != expected {
        violations.push(Violation::EdgeCount {
            edges: topo.edges.len(),
            expected,
        });
    }
    if !topo.is_connected() {
        violations.push(Violation::Disconnected);
    }
    ValidationReport { violations }
}

/// Fluid-limit parameters and their second-order corrections.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LimitParams {
    pub lambda: Vec<f64>,
    /// `I x J`, zero off the edge set.
    pub mu: DMatrix<f64>,
    pub gamma: Vec<f64>,
    pub nu: Vec<f64>,
    pub lambda_hat: Vec<f64>,
    pub mu_hat: DMatrix<f64>,
    pub nu_hat: Vec<f64>,
}

impl LimitParams {
    /// Parameters with all second-order coefficients zero.
    pub fn first_order(
        topo: &NetworkTopology,
        lambda: Vec<f64>,
        edge_mu: &[f64],
        gamma: Vec<f64>,
        nu: Vec<f64>,
    ) -> Self {
        let (ni, nj) = (topo.num_classes, topo.num_pools);
        let mut mu = DMatrix::zeros(ni, nj);
        for (k, &(i, j)) in topo.edges.iter().enumerate() {
            mu[(i, j)] = edge_mu[k];
        }
        Self {
            lambda,
            mu,
            gamma,
            nu,
            lambda_hat: vec![0.0; ni],
            mu_hat: DMatrix::zeros(ni, nj),
            nu_hat: vec![0.0; nj],
        }
    }

    pub fn edge_mu(&self, topo: &NetworkTopology) -> Vec<f64> {
        topo.edges.iter().map(|&(i, j)| self.mu[(i, j)]).collect()
    }

    /// Checks every invariant of the parameter set against `topo`.
    /// `allow_zero_abandonment` lifts the `some gamma_i > 0` requirement.
    pub fn validate(
        &self,
        topo: &NetworkTopology,
        allow_zero_abandonment: bool,
    ) -> Result<(), ModelError> {
        let (ni, nj) = (topo.num_classes, topo.num_pools);
        check_len("lambda", self.lambda.len(), ni)?;
        check_len("gamma", self.gamma.len(), ni)?;
        check_len("lambda_hat", self.lambda_hat.len(), ni)?;
        check_len("nu", self.nu.len(), nj)?;
        check_len("nu_hat", self.nu_hat.len(), nj)?;
        if self.mu.shape() != (ni, nj) {
            return Err(ModelError::Invalid {
                field: "mu".into(),
                reason: format!("shape {:?}, expected ({ni}, {nj})", self.mu.shape()),
            });
        }
        if self.mu_hat.shape() != (ni, nj) {
            return Err(ModelError::Invalid {
                field: "mu_hat".into(),
                reason: format!("shape {:?}, expected ({ni}, {nj})", self.mu_hat.shape()),
            });
        }
        for (i, &l) in self.lambda.iter().enumerate() {
            positive(&format!("lambda[{i}]"), l)?;
        }
        for (j, &v) in self.nu.iter().enumerate() {
            positive(&format!("nu[{j}]"), v)?;
        }
        for (i, &g) in self.gamma.iter().enumerate() {
            if !(g.is_finite() && g >= 0.0) {
                return Err(ModelError::Invalid {
                    field: format!("gamma[{i}]"),
                    reason: format!("must be finite and >= 0, got {g}"),
                });
            }
        }
        for i in 0..ni {
            for j in 0..nj {
                let m = self.mu[(i, j)];
                if topo.has_edge(i, j) {
                    positive(&format!("mu[{i},{j}]"), m)?;
                } else if m != 0.0 {
                    return Err(ModelError::Invalid {
                        field: format!("mu[{i},{j}]"),
                        reason: "service rate given for a non-edge".into(),
                    });
                } else if self.mu_hat[(i, j)] != 0.0 {
                    return Err(ModelError::Invalid {
                        field: format!("mu_hat[{i},{j}]"),
                        reason: "correction given for a non-edge".into(),
                    });
                }
            }
        }
        let finite = self
            .lambda_hat
            .iter()
            .chain(self.nu_hat.iter())
            .chain(self.mu_hat.iter())
            .all(|v| v.is_finite());
        if !finite {
            return Err(ModelError::Invalid {
                field: "second-order coefficients".into(),
                reason: "must be finite".into(),
            });
        }
        if !allow_zero_abandonment && self.gamma.iter().all(|&g| g == 0.0) {
            return Err(ModelError::NoAbandonment);
        }
        Ok(())
    }
}

fn check_len(field: &'static str, got: usize, expected: usize) -> Result<(), ModelError> {
    if got == expected {
        Ok(())
    } else {
        Err(ModelError::Length {
            field,
            got,
            expected,
        })
    }
}

fn positive(field: &str, v: f64) -> Result<(), ModelError> {
    if v.is_finite() && v > 0.0 {
        Ok(())
    } else {
        Err(ModelError::Invalid {
            field: field.to_string(),
            reason: format!("must be finite and > 0, got {v}"),
        })
    }
}

/// Parameters of the `n`-th system.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScaledParams {
    pub n: u64,
    pub lambda: Vec<f64>,
    pub mu: DMatrix<f64>,
    pub gamma: Vec<f64>,
    pub pool_sizes: Vec<i64>,
}

impl ScaledParams {
    pub fn sqrt_n(&self) -> f64 {
        (self.n as f64).sqrt()
    }

    pub fn total_servers(&self) -> i64 {
        self.pool_sizes.iter().sum()
    }

    pub fn edge_mu(&self, topo: &NetworkTopology) -> Vec<f64> {
        topo.edges.iter().map(|&(i, j)| self.mu[(i, j)]).collect()
    }
}

/// Round half up, the rounding used for pool sizes.
pub fn round_half_up(v: f64) -> i64 {
    (v + 0.5).floor() as i64
}

pub fn scale_params(
    topo: &NetworkTopology,
    limit: &LimitParams,
    n: u64,
) -> Result<ScaledParams, ModelError> {
    if n == 0 {
        return Err(ModelError::BadScale);
    }
    let nf = n as f64;
    let rn = nf.sqrt();
    let lambda: Vec<f64> = limit
        .lambda
        .iter()
        .zip(&limit.lambda_hat)
        .map(|(&l, &lh)| nf * l + rn * lh)
        .collect();
    for (i, &l) in lambda.iter().enumerate() {
        if l <= 0.0 {
            return Err(ModelError::NegativeRate {
                field: format!("lambda[{i}]"),
                value: l,
                n,
            });
        }
    }
    let mut mu = DMatrix::zeros(topo.num_classes, topo.num_pools);
    for &(i, j) in &topo.edges {
        let m = limit.mu[(i, j)] + limit.mu_hat[(i, j)] / rn;
        if m <= 0.0 {
            return Err(ModelError::NegativeRate {
                field: format!("mu[{i},{j}]"),
                value: m,
                n,
            });
        }
        mu[(i, j)] = m;
    }
    let mut pool_sizes = Vec::with_capacity(topo.num_pools);
    for (j, (&nu, &nh)) in limit.nu.iter().zip(&limit.nu_hat).enumerate() {
        let size = round_half_up(nf * nu + rn * nh);
        if size < 1 {
            return Err(ModelError::Invalid {
                field: format!("nu[{j}]"),
                reason: format!("pool size {size} < 1 at n = {n}"),
            });
        }
        pool_sizes.push(size);
    }
    Ok(ScaledParams {
        n,
        lambda,
        mu,
        gamma: limit.gamma.clone(),
        pool_sizes,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn n_network_is_a_tree() {
        assert!(validate_topology(&NetworkTopology::n_network()).is_valid());
        assert!(validate_topology(&NetworkTopology::m_network()).is_valid());
    }

    #[test]
    fn complete_bipartite_2x2_has_a_cycle() {
        let t = NetworkTopology::new(2, 2, vec![(0, 0), (0, 1), (1, 0), (1, 1)]);
        let r = validate_topology(&t);
        assert!(r
            .violations
            .contains(&Violation::EdgeCount { edges: 4, expected: 3 }));
        assert!(!t.is_acyclic());
    }

    #[test]
    fn single_edge_is_valid() {
        assert!(validate_topology(&NetworkTopology::single()).is_valid());
    }

    #[test]
    fn isolated_nodes_are_reported() {
        let t = NetworkTopology::new(2, 2, vec![(0, 0), (0, 1)]);
        let r = validate_topology(&t);
        assert!(r.violations.contains(&Violation::IsolatedClass(1)));
        assert!(r.violations.contains(&Violation::Disconnected));
    }

    #[test]
    fn scale_examples() {
        let topo = NetworkTopology::single();
        let mut lp = LimitParams::first_order(&topo, vec![1.5], &[1.5], vec![1.0], vec![1.0]);
        let s = scale_params(&topo, &lp, 100).unwrap();
        assert_eq!(s.lambda[0], 150.0);
        lp.nu_hat = vec![1.0];
        let s = scale_params(&topo, &lp, 100).unwrap();
        assert_eq!(s.pool_sizes[0], 110);

        let mut lp = LimitParams::first_order(&topo, vec![1.0], &[1.0], vec![1.0], vec![1.0]);
        lp.mu_hat[(0, 0)] = -2.0;
        match scale_params(&topo, &lp, 4) {
            Err(ModelError::NegativeRate { value, .. }) => assert_eq!(value, 0.0),
            other => panic!("expected NegativeRate, got {other:?}"),
        }
    }

    #[test]
    fn zero_abandonment_needs_override() {
        let topo = NetworkTopology::single();
        let lp = LimitParams::first_order(&topo, vec![1.0], &[1.0], vec![0.0], vec![1.0]);
        assert_eq!(lp.validate(&topo, false), Err(ModelError::NoAbandonment));
        assert!(lp.validate(&topo, true).is_ok());
    }

    #[test]
    fn rate_on_non_edge_is_rejected() {
        let topo = NetworkTopology::n_network();
        let mut lp = LimitParams::first_order(
            &topo,
            vec![1.5, 1.5],
            &[1.0, 1.0, 1.0],
            vec![0.0, 1.0],
            vec![1.0, 2.0],
        );
        lp.mu[(1, 0)] = 1.0;
        assert!(matches!(
            lp.validate(&topo, false),
            Err(ModelError::Invalid { .. })
        ));
    }

    fn random_graph() -> impl Strategy<Value = NetworkTopology> {
        (1usize..5, 1usize..5).prop_flat_map(|(ni, nj)| {
            let all: Vec<(usize, usize)> =
                (0..ni).flat_map(|i| (0..nj).map(move |j| (i, j))).collect();
            proptest::sample::subsequence(all.clone(), 0..=all.len())
                .prop_map(move |edges| NetworkTopology::new(ni, nj, edges))
        })
    }

    proptest! {
        #[test]
        fn tree_checks_agree(topo in random_graph()) {
            let by_count = topo.is_connected() && topo.edges.len() == topo.num_classes + topo.num_pools - 1;
            let by_cycles = topo.is_connected() && topo.is_acyclic();
            prop_assert_eq!(by_count, by_cycles);
            prop_assert_eq!(validate_topology(&topo).is_valid(), by_cycles);
        }

        #[test]
        fn pool_sizes_track_second_order_term(n in 1u64..5000, nu in 0.2f64..3.0, nh in -1.0f64..1.0) {
            let topo = NetworkTopology::single();
            let mut lp = LimitParams::first_order(&topo, vec![nu], &[1.0], vec![1.0], vec![nu]);
            lp.nu_hat = vec![nh];
            if let Ok(s) = scale_params(&topo, &lp, n) {
                let rn = (n as f64).sqrt();
                let scaled = (s.pool_sizes[0] as f64 - n as f64 * nu) / rn;
                prop_assert!((scaled - nh).abs() <= 1.0 / rn + 1e-12);
            }
        }
    }
}
