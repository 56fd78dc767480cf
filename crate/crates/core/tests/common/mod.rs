#![allow(dead_code)]

use nalgebra::DMatrix;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use qednet::topology::{LimitParams, NetworkTopology};

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Uniformly grown random tree on `ni` classes and `nj` pools.
pub fn random_tree(rng: &mut ChaCha8Rng, ni: usize, nj: usize) -> NetworkTopology {
    let mut order: Vec<(bool, usize)> = (1..ni).map(|i| (true, i)).chain((1..nj).map(|j| (false, j))).collect();
    order.shuffle(rng);
    let mut classes = vec![0];
    let mut pools = vec![0];
    let mut edges = vec![(0, 0)];
    for (is_class, v) in order {
        if is_class {
            edges.push((v, *pools.choose(rng).unwrap()));
            classes.push(v);
        } else {
            edges.push((*classes.choose(rng).unwrap(), v));
            pools.push(v);
        }
    }
    edges.shuffle(rng);
    NetworkTopology::new(ni, nj, edges)
}

/// Critically loaded parameters built from a random interior fluid point,
/// returned with that point. At least one class abandons.
pub fn critical_params(rng: &mut ChaCha8Rng, topo: &NetworkTopology) -> (LimitParams, DMatrix<f64>) {
    let (ni, nj) = (topo.num_classes, topo.num_pools);
    let mut xi = DMatrix::<f64>::zeros(ni, nj);
    for j in 0..nj {
        let ks = topo.pool_edges(j);
        let w: Vec<f64> = ks.iter().map(|_| rng.gen_range(0.1..1.0)).collect();
        let s: f64 = w.iter().sum();
        for (k, wk) in ks.iter().zip(w) {
            xi[(topo.edges[*k].0, j)] = wk / s;
        }
    }
    let nu: Vec<f64> = (0..nj).map(|_| rng.gen_range(0.5..3.0)).collect();
    let edge_mu: Vec<f64> = (0..topo.num_edges()).map(|_| rng.gen_range(0.5..2.0)).collect();
    let mut lambda = vec![0.0; ni];
    for (k, &(i, j)) in topo.edges.iter().enumerate() {
        lambda[i] += edge_mu[k] * xi[(i, j)] * nu[j];
    }
    let mut gamma: Vec<f64> = (0..ni).map(|_| if rng.gen_bool(0.5) { rng.gen_range(0.2..1.5) } else { 0.0 }).collect();
    let anchor = rng.gen_range(0..ni);
    gamma[anchor] = rng.gen_range(0.2..1.5);
    (LimitParams::first_order(topo, lambda, &edge_mu, gamma, nu), xi)
}

/// Margins of an edge vector.
pub fn margins<T: Copy + Default + std::ops::AddAssign>(topo: &NetworkTopology, z: &[T]) -> (Vec<T>, Vec<T>) {
    let mut alpha = vec![T::default(); topo.num_classes];
    let mut beta = vec![T::default(); topo.num_pools];
    for (k, &(i, j)) in topo.edges.iter().enumerate() {
        alpha[i] += z[k];
        beta[j] += z[k];
    }
    (alpha, beta)
}
