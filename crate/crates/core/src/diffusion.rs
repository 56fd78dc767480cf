//! The limiting controlled diffusion `dX = b(X, U) dt + Sigma dW`.

use rand::Rng;
use rand_distr::StandardNormal;
use serde::Serialize;
use thiserror::Error;

use crate::fluid::{FluidSolution, PsiPlan};
use crate::lyapunov::TestFunction;
use crate::measure::Histogram;
use crate::observables::{CostSpec, Observables};
use crate::policies::{Control, MarkovControl};
use crate::rng;
use crate::stats::{BatchMeans, ErgodicEstimate, DEFAULT_BATCHES, DEFAULT_BURN_IN};
use crate::topology::{LimitParams, ModelError, NetworkTopology};

pub const DEFAULT_BLOWUP_GUARD: f64 = 1e3;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum DiffusionError {
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error("diffusion blew up at t = {time:.3}: |X| = {norm:.3e}")]
    Blowup { time: f64, norm: f64 },
}

/// Drift data for the limit diffusion.
#[derive(Debug, Clone)]
pub struct DiffusionModel {
    num_classes: usize,
    num_pools: usize,
    plan: PsiPlan,
    edges: Vec<(usize, usize)>,
    edge_mu: Vec<f64>,
    ell: Vec<f64>,
    lambda: Vec<f64>,
    gamma: Vec<f64>,
    /// Multiplies `Sigma`; 0 turns the SDE into its ODE limit.
    pub noise_scale: f64,
}

/// Reusable buffers for allocation-free drift evaluation.
#[derive(Debug, Default, Clone)]
pub struct DriftScratch {
    alpha: Vec<f64>,
    beta: Vec<f64>,
    psi: Vec<f64>,
    row: Vec<f64>,
    col: Vec<f64>,
}

impl DiffusionModel {
    pub fn new(topo: &NetworkTopology, limit: &LimitParams, fluid: &FluidSolution) -> Result<Self, ModelError> {
        let plan = PsiPlan::new(topo)?;
        let ell = (0..topo.num_classes)
            .map(|i| {
                limit.lambda_hat[i]
                    - topo
                        .class_edges(i)
                        .into_iter()
                        .map(|k| {
                            let j = topo.edges[k].1;
                            limit.mu_hat[(i, j)] * fluid.z_star[(i, j)]
                        })
                        .sum::<f64>()
            })
            .collect();
        Ok(Self {
            num_classes: topo.num_classes,
            num_pools: topo.num_pools,
            plan,
            edges: topo.edges.clone(),
            edge_mu: limit.edge_mu(topo),
            ell,
            lambda: limit.lambda.clone(),
            gamma: limit.gamma.clone(),
            noise_scale: 1.0,
        })
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn num_pools(&self) -> usize {
        self.num_pools
    }

    pub fn ell(&self) -> &[f64] {
        &self.ell
    }

    pub fn lambda(&self) -> &[f64] {
        &self.lambda
    }

    /// Diagonal of `Sigma`: `sqrt(2 lambda_i)`.
    pub fn sigma(&self) -> Vec<f64> {
        self.lambda.iter().map(|l| (2.0 * l).sqrt()).collect()
    }

    pub fn max_rate(&self) -> f64 {
        self.edge_mu
            .iter()
            .chain(&self.gamma)
            .cloned()
            .fold(1.0, f64::max)
    }

    pub fn default_step(&self) -> f64 {
        0.01 / self.max_rate()
    }

    pub fn drift(&self, x: &[f64], u: &Control) -> Vec<f64> {
        let mut out = vec![0.0; self.num_classes];
        self.drift_into(x, u, &mut out, &mut DriftScratch::default());
        out
    }

    /// `b_i = ell_i - sum_j mu_ij Psi_ij(x - s+ uc, -s- us) - gamma_i s+ uc_i`.
    pub fn drift_into(&self, x: &[f64], u: &Control, out: &mut [f64], s: &mut DriftScratch) {
        let total: f64 = x.iter().sum();
        let (pos, neg) = (total.max(0.0), (-total).max(0.0));
        s.alpha.clear();
        s.alpha.extend(x.iter().zip(&u.uc).map(|(v, c)| v - pos * c));
        s.beta.clear();
        s.beta.extend(u.us.iter().map(|c| -neg * c));
        s.psi.resize(self.edges.len(), 0.0);
        self.plan
            .apply_edges_with(&s.alpha, &s.beta, &mut s.psi, &mut s.row, &mut s.col);
        for i in 0..self.num_classes {
            out[i] = self.ell[i] - self.gamma[i] * pos * u.uc[i];
        }
        for (k, &(i, _)) in self.edges.iter().enumerate() {
            out[i] -= self.edge_mu[k] * s.psi[k];
        }
    }

    /// `sum_i lambda_i d_ii f + b_i d_i f`.
    pub fn generator_apply(&self, f: &dyn TestFunction, x: &[f64], u: &Control) -> f64 {
        let b = self.drift(x, u);
        let g = f.gradient(x);
        let h = f.hessian_diag(x);
        (0..self.num_classes)
            .map(|i| self.lambda[i] * h[i] + b[i] * g[i])
            .sum()
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct SdeConfig {
    pub horizon: f64,
    /// `None` uses [`DiffusionModel::default_step`].
    pub step: Option<f64>,
    pub burn_in_frac: f64,
    pub batches: usize,
    pub seed: u64,
    pub replication: u64,
    pub guard: f64,
    /// Cell size of the occupation histogram of `X`; `None` skips it.
    pub histogram_cell: Option<f64>,
}

impl SdeConfig {
    pub fn new(horizon: f64, seed: u64) -> Self {
        Self {
            horizon,
            step: None,
            burn_in_frac: DEFAULT_BURN_IN,
            batches: DEFAULT_BATCHES,
            seed,
            replication: 0,
            guard: DEFAULT_BLOWUP_GUARD,
            histogram_cell: None,
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct SdeRun {
    pub estimates: Vec<ErgodicEstimate>,
    pub step: f64,
    pub steps: u64,
    pub max_norm: f64,
    pub final_state: Vec<f64>,
    #[serde(skip)]
    pub histogram: Option<Histogram>,
}

impl SdeRun {
    pub fn estimate(&self, metric: &str) -> Option<&ErgodicEstimate> {
        self.estimates.iter().find(|e| e.metric == metric)
    }
}

/// Euler-Maruyama path with ergodic averages of every observable.
pub fn simulate_sde(
    model: &DiffusionModel,
    control: &MarkovControl,
    x0: &[f64],
    cfg: &SdeConfig,
    costs: &CostSpec,
) -> Result<SdeRun, DiffusionError> {
    costs.validate(model.num_classes, model.num_pools)?;
    let h = cfg.step.unwrap_or_else(|| model.default_step());
    if !(h > 0.0) || !(cfg.horizon > 0.0) || !(0.0..1.0).contains(&cfg.burn_in_frac) {
        return Err(ModelError::Invalid {
            field: "run".into(),
            reason: format!(
                "need step > 0, horizon > 0, burn-in in [0, 1); got {h}, {}, {}",
                cfg.horizon, cfg.burn_in_frac
            ),
        }
        .into());
    }
    let obs = Observables::new(costs.clone());
    let burn_in = cfg.burn_in_frac * cfg.horizon;
    let mut bm = BatchMeans::new(burn_in, cfg.horizon, cfg.batches, obs.len());
    let mut rng = rng::stream(cfg.seed, cfg.replication);
    let noise: Vec<f64> = model
        .sigma()
        .iter()
        .map(|s| s * model.noise_scale * h.sqrt())
        .collect();
    let mut hist = cfg.histogram_cell.map(Histogram::new);

    let ni = model.num_classes;
    let mut x = x0.to_vec();
    let mut b = vec![0.0; ni];
    let mut q = vec![0.0; ni];
    let mut y = vec![0.0; model.num_pools];
    let mut vals = vec![0.0; obs.len()];
    let mut scratch = DriftScratch::default();
    let mut max_norm: f64 = 0.0;
    let total_steps = (cfg.horizon / h).ceil() as u64;
    let mut t = 0.0;
    for step in 0..total_steps {
        let u = control.eval_cow(&x);
        let total: f64 = x.iter().sum();
        let (pos, neg) = (total.max(0.0), (-total).max(0.0));
        for i in 0..ni {
            q[i] = pos * u.uc[i];
        }
        for (j, yj) in y.iter_mut().enumerate() {
            *yj = neg * u.us[j];
        }
        let t_next = ((step + 1) as f64 * h).min(cfg.horizon);
        if t_next > burn_in {
            obs.evaluate(&x, &q, &y, &mut vals);
            bm.add(t, t_next, &vals);
            if let Some(hist) = hist.as_mut() {
                hist.add(&x, t_next - t.max(burn_in));
            }
        }
        model.drift_into(&x, &u, &mut b, &mut scratch);
        drop(u);
        let mut norm_sq = 0.0;
        for i in 0..ni {
            let z: f64 = rng.sample(StandardNormal);
            x[i] += b[i] * h + noise[i] * z;
            norm_sq += x[i] * x[i];
        }
        let norm = norm_sq.sqrt();
        max_norm = max_norm.max(norm);
        t = t_next;
        if !(norm <= cfg.guard) {
            return Err(DiffusionError::Blowup { time: t, norm });
        }
    }
    let estimates = obs
        .names()
        .iter()
        .enumerate()
        .map(|(k, name)| bm.estimate(k, name, cfg.seed))
        .collect();
    Ok(SdeRun {
        estimates,
        step: h,
        steps: total_steps,
        max_norm,
        final_state: x,
        histogram: hist,
    })
}
