//! Event-by-event simulation of the `n`-th system under a stationary
//! Markov scheduling policy.

mod trace;

pub use trace::{empirical_measure, tail_decay_fit, Occupancy, TailFit, TAIL_LEVELS};

use std::collections::BTreeMap;
use std::sync::Arc;

use rand::Rng;
use rand_distr::Exp1;
use serde::Serialize;
use thiserror::Error;

use crate::fluid::FluidSolution;
use crate::observables::{CostSpec, Observables};
use crate::policies::{check_allocation, Branch, JwcRegion, Policy, PolicyError};
use crate::rng;
use crate::stats::{BatchMeans, ErgodicEstimate, DEFAULT_BATCHES, DEFAULT_BURN_IN};
use crate::topology::{ModelError, NetworkTopology, ScaledParams};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SimError {
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Policy(#[from] PolicyError),
    #[error("state explosion at t = {time:.3}: |x_hat|_inf = {norm:.3e}")]
    StateExplosion { time: f64, norm: f64 },
    #[error("invariant violated at t = {time:.6}: {detail}")]
    InvariantViolation { time: f64, detail: String },
    #[error("tail fit needs at least 10 distinct exceedance levels, found {levels}")]
    InsufficientTail { levels: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum EventKind {
    Start,
    Arrival { class: usize },
    Service { class: usize, pool: usize },
    Abandon { class: usize },
}

/// What an observer sees after every scheduling decision.
#[derive(Debug)]
pub struct StepView<'a> {
    pub time: f64,
    pub event: EventKind,
    pub x: &'a [i64],
    pub z: &'a [i64],
    pub branch: Branch,
}

#[derive(Debug, Clone)]
pub struct CtmcConfig {
    pub horizon: f64,
    pub burn_in_frac: f64,
    pub batches: usize,
    pub seed: u64,
    pub replication: u64,
    /// Bound on `|x_hat|_inf`; `None` uses `1e6 / sqrt(n)`.
    pub guard: Option<f64>,
    /// Re-check balance and work conservation at every event.
    pub check_invariants: bool,
    pub record_occupancy: bool,
    /// `None` starts at the rounded fluid point `n x*`.
    pub initial_state: Option<Vec<i64>>,
    /// Region whose occupation fraction is reported.
    pub region: Option<Arc<JwcRegion>>,
}

impl CtmcConfig {
    pub fn new(horizon: f64, seed: u64) -> Self {
        Self {
            horizon,
            burn_in_frac: DEFAULT_BURN_IN,
            batches: DEFAULT_BATCHES,
            seed,
            replication: 0,
            guard: None,
            check_invariants: false,
            record_occupancy: false,
            initial_state: None,
            region: None,
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct CtmcRun {
    pub n: u64,
    pub seed: u64,
    pub replication: u64,
    pub horizon: f64,
    pub burn_in: f64,
    pub estimates: Vec<ErgodicEstimate>,
    pub events: u64,
    /// Largest `|x_hat|` visited.
    pub max_state_norm: f64,
    /// Fraction of post-burn-in time inside the configured region.
    pub region_fraction: Option<f64>,
    /// Fraction of post-burn-in time per decision branch.
    pub branch_fractions: BTreeMap<String, f64>,
    pub fallback_decisions: u64,
    pub final_state: Vec<i64>,
    #[serde(skip)]
    pub occupancy: Option<Occupancy>,
}

impl CtmcRun {
    pub fn estimate(&self, metric: &str) -> Option<&ErgodicEstimate> {
        self.estimates.iter().find(|e| e.metric == metric)
    }
}

pub fn fluid_start(scaled: &ScaledParams, fluid: &FluidSolution) -> Vec<i64> {
    fluid
        .x_star
        .iter()
        .map(|&v| crate::topology::round_half_up(v * scaled.n as f64))
        .collect()
}

pub fn simulate_ctmc(
    topo: &NetworkTopology,
    scaled: &ScaledParams,
    fluid: &FluidSolution,
    policy: &dyn Policy,
    cfg: &CtmcConfig,
    costs: &CostSpec,
) -> Result<CtmcRun, SimError> {
    simulate_ctmc_observed(topo, scaled, fluid, policy, cfg, costs, &mut |_| {})
}

fn branch_key(b: Branch) -> &'static str {
    match b {
        Branch::Bsp => "bsp",
        Branch::Canonical => "canonical",
        Branch::Fallback => "fallback",
    }
}

/// As [`simulate_ctmc`], calling `observer` after every decision.
pub fn simulate_ctmc_observed(
    topo: &NetworkTopology,
    scaled: &ScaledParams,
    fluid: &FluidSolution,
    policy: &dyn Policy,
    cfg: &CtmcConfig,
    costs: &CostSpec,
    observer: &mut dyn FnMut(&StepView),
) -> Result<CtmcRun, SimError> {
    let (ni, nj, ne) = (topo.num_classes, topo.num_pools, topo.num_edges());
    costs.validate(ni, nj)?;
    if !(cfg.horizon > 0.0) || !(0.0..1.0).contains(&cfg.burn_in_frac) || cfg.batches < 2 {
        return Err(ModelError::Invalid {
            field: "run".into(),
            reason: format!(
                "need horizon > 0, burn-in fraction in [0, 1) and >= 2 batches; got {}, {}, {}",
                cfg.horizon, cfg.burn_in_frac, cfg.batches
            ),
        }
        .into());
    }
    let rn = scaled.sqrt_n();
    let center: Vec<f64> = fluid.x_star.iter().map(|&v| v * scaled.n as f64).collect();
    let guard = cfg.guard.unwrap_or(1e6 / rn);
    let burn_in = cfg.burn_in_frac * cfg.horizon;
    let obs = Observables::new(costs.clone());
    let mut bm = BatchMeans::new(burn_in, cfg.horizon, cfg.batches, obs.len());
    let mut rng = rng::stream(cfg.seed, cfg.replication);
    let edge_mu = scaled.edge_mu(topo);
    let total_servers = scaled.total_servers();

    let mut x = cfg
        .initial_state
        .clone()
        .unwrap_or_else(|| fluid_start(scaled, fluid));
    if x.len() != ni || x.iter().any(|&v| v < 0) {
        return Err(ModelError::Invalid {
            field: "run.initial_state".into(),
            reason: format!("need {ni} nonnegative entries, got {x:?}"),
        }
        .into());
    }
    let mut z = vec![0i64; ne];
    let mut q = vec![0i64; ni];
    let mut y = vec![0i64; nj];
    let mut x_hat = vec![0.0; ni];
    let mut q_hat = vec![0.0; ni];
    let mut y_hat = vec![0.0; nj];
    let mut vals = vec![0.0; obs.len()];
    let mut occupancy = cfg.record_occupancy.then(Occupancy::default);
    let mut branch_time: BTreeMap<String, f64> = BTreeMap::new();
    let mut region_time = 0.0;
    let mut fallback_decisions = 0u64;
    let mut max_norm: f64 = 0.0;
    let mut events = 0u64;
    let mut event = EventKind::Start;
    let mut t = 0.0;

    loop {
        let branch = policy.decide_into(&x, &mut z)?;
        if branch == Branch::Fallback {
            fallback_decisions += 1;
        }
        q.copy_from_slice(&x);
        y.copy_from_slice(&scaled.pool_sizes);
        for (k, &(i, j)) in topo.edges.iter().enumerate() {
            q[i] -= z[k];
            y[j] -= z[k];
        }
        if cfg.check_invariants {
            check_allocation(topo, &scaled.pool_sizes, &x, &z).map_err(|e| SimError::InvariantViolation {
                time: t,
                detail: e.to_string(),
            })?;
            let imbalance = x.iter().sum::<i64>() - total_servers;
            let (eq, ey) = (q.iter().sum::<i64>(), y.iter().sum::<i64>());
            if eq - imbalance.max(0) != ey - (-imbalance).max(0) {
                return Err(SimError::InvariantViolation {
                    time: t,
                    detail: format!("queue/idleness identity fails: e.q = {eq}, e.y = {ey}, s = {imbalance}"),
                });
            }
            if branch == Branch::Canonical && eq.min(ey) != 0 {
                return Err(SimError::InvariantViolation {
                    time: t,
                    detail: format!("joint work conservation fails: e.q = {eq}, e.y = {ey}"),
                });
            }
        }
        observer(&StepView {
            time: t,
            event,
            x: &x,
            z: &z,
            branch,
        });

        let mut norm_sq = 0.0;
        let mut norm_inf: f64 = 0.0;
        for i in 0..ni {
            x_hat[i] = (x[i] as f64 - center[i]) / rn;
            q_hat[i] = q[i] as f64 / rn;
            norm_sq += x_hat[i] * x_hat[i];
            norm_inf = norm_inf.max(x_hat[i].abs());
        }
        for j in 0..nj {
            y_hat[j] = y[j] as f64 / rn;
        }
        max_norm = max_norm.max(norm_sq.sqrt());
        if norm_inf > guard {
            return Err(SimError::StateExplosion { time: t, norm: norm_inf });
        }

        let arrival_rate: f64 = scaled.lambda.iter().sum();
        let service_rate: f64 = z.iter().zip(&edge_mu).map(|(&zk, &m)| zk as f64 * m).sum();
        let abandon_rate: f64 = q.iter().zip(&scaled.gamma).map(|(&qi, &g)| qi as f64 * g).sum();
        let total_rate = arrival_rate + service_rate + abandon_rate;
        let dt = if total_rate > 0.0 {
            rng.sample::<f64, _>(Exp1) / total_rate
        } else {
            f64::INFINITY
        };
        let t_next = (t + dt).min(cfg.horizon);
        if t_next > burn_in {
            obs.evaluate(&x_hat, &q_hat, &y_hat, &mut vals);
            bm.add(t, t_next, &vals);
            let w = t_next - t.max(burn_in);
            *branch_time.entry(branch_key(branch).to_string()).or_insert(0.0) += w;
            if let Some(r) = &cfg.region {
                if r.contains(&x) {
                    region_time += w;
                }
            }
            if let Some(occ) = occupancy.as_mut() {
                occ.add(&x, w);
            }
        }
        if t + dt >= cfg.horizon {
            break;
        }
        t += dt;
        events += 1;

        let mut pick = rng.gen::<f64>() * total_rate;
        event = 'select: {
            if pick < arrival_rate {
                for (i, &l) in scaled.lambda.iter().enumerate() {
                    if pick < l {
                        break 'select EventKind::Arrival { class: i };
                    }
                    pick -= l;
                }
            } else {
                pick -= arrival_rate;
            }
            if pick < service_rate {
                for (k, &(i, j)) in topo.edges.iter().enumerate() {
                    let r = z[k] as f64 * edge_mu[k];
                    if pick < r {
                        break 'select EventKind::Service { class: i, pool: j };
                    }
                    pick -= r;
                }
            } else {
                pick -= service_rate;
            }
            for (i, (&qi, &g)) in q.iter().zip(&scaled.gamma).enumerate() {
                let r = qi as f64 * g;
                if pick < r {
                    break 'select EventKind::Abandon { class: i };
                }
                pick -= r;
            }
            // Round-off left `pick` past every bucket: take the last live one.
            last_live_event(topo, scaled, &z, &q, &edge_mu)
        };
        match event {
            EventKind::Arrival { class } => x[class] += 1,
            EventKind::Service { class, .. } | EventKind::Abandon { class } => x[class] -= 1,
            EventKind::Start => unreachable!(),
        }
    }

    let post = cfg.horizon - burn_in;
    let estimates = obs
        .names()
        .iter()
        .enumerate()
        .map(|(k, name)| bm.estimate(k, name, cfg.seed))
        .collect();
    Ok(CtmcRun {
        n: scaled.n,
        seed: cfg.seed,
        replication: cfg.replication,
        horizon: cfg.horizon,
        burn_in,
        estimates,
        events,
        max_state_norm: max_norm,
        region_fraction: cfg.region.as_ref().map(|_| region_time / post),
        branch_fractions: branch_time.into_iter().map(|(k, v)| (k, v / post)).collect(),
        fallback_decisions,
        final_state: x,
        occupancy,
    })
}

fn last_live_event(topo: &NetworkTopology, scaled: &ScaledParams, z: &[i64], q: &[i64], edge_mu: &[f64]) -> EventKind {
    for i in (0..q.len()).rev() {
        if q[i] > 0 && scaled.gamma[i] > 0.0 {
            return EventKind::Abandon { class: i };
        }
    }
    for k in (0..z.len()).rev() {
        if z[k] > 0 && edge_mu[k] > 0.0 {
            let (i, j) = topo.edges[k];
            return EventKind::Service { class: i, pool: j };
        }
    }
    let i = (0..scaled.lambda.len())
        .rev()
        .find(|&i| scaled.lambda[i] > 0.0)
        .unwrap_or(0);
    EventKind::Arrival { class: i }
}

/// Event rates at a state, one entry per arrival, edge service and
/// abandonment.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EventRates {
    pub arrival: Vec<f64>,
    pub service: Vec<f64>,
    pub abandon: Vec<f64>,
}

impl EventRates {
    pub fn at(topo: &NetworkTopology, scaled: &ScaledParams, x: &[i64], z: &[i64]) -> Self {
        let q = crate::policies::queues(topo, x, z);
        Self {
            arrival: scaled.lambda.clone(),
            service: topo
                .edges
                .iter()
                .enumerate()
                .map(|(k, &(i, j))| scaled.mu[(i, j)] * z[k] as f64)
                .collect(),
            abandon: q.iter().zip(&scaled.gamma).map(|(&qi, &g)| g * qi as f64).collect(),
        }
    }

    pub fn total(&self) -> f64 {
        self.arrival.iter().chain(&self.service).chain(&self.abandon).sum()
    }
}
