use std::sync::Arc;

use rayon::prelude::*;
use serde::Serialize;

use super::{content_hash, VerifyError};
use crate::ctmc::{simulate_ctmc, CtmcConfig, CtmcRun};
use crate::diffusion::{simulate_sde, DiffusionModel, SdeConfig};
use crate::fluid::solve_fluid;
use crate::measure::{tv_distance, Histogram};
use crate::observables::CostSpec;
use crate::policies::{build_capacity_shift, default_margin, Bsp, CanonicalJwc, Concatenated, JwcRegion, MarkovControl};
use crate::stats::{mean_ci, spearman, ErgodicEstimate};
use crate::topology::{scale_params, LimitParams, NetworkTopology};

/// Spearman correlation of gap against `n` required for a shrinking gap.
pub const TREND_THRESHOLD: f64 = -0.8;

#[derive(Debug, Clone, Serialize)]
pub struct ConvergenceConfig {
    pub n_list: Vec<u64>,
    pub seeds: Vec<u64>,
    pub ctmc_horizon: f64,
    pub sde_horizon: f64,
    pub sde_step: Option<f64>,
    pub burn_in_frac: f64,
    pub batches: usize,
    /// Histogram cell side in `x_hat` units, shared by both simulators.
    pub cell: f64,
    /// Observable compared across `n`.
    pub metric: String,
    pub region_samples: usize,
    /// Capacity-shift margin; derived per `n` when `None`.
    pub margin: Option<f64>,
    /// Target idleness split; adds a fairness report per `n`.
    pub theta: Option<Vec<f64>>,
}

impl Default for ConvergenceConfig {
    fn default() -> Self {
        Self {
            n_list: vec![50, 100, 200, 400],
            seeds: vec![1, 2, 3, 4],
            ctmc_horizon: 2e4,
            sde_horizon: 2e4,
            sde_step: None,
            burn_in_frac: crate::stats::DEFAULT_BURN_IN,
            batches: crate::stats::DEFAULT_BATCHES,
            cell: 0.25,
            metric: "cost".into(),
            region_samples: crate::policies::REGION_SAMPLES,
            margin: None,
            theta: None,
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct ConvergenceEntry {
    pub n: u64,
    pub seeds: Vec<u64>,
    pub config_hash: String,
    pub estimate: f64,
    pub ci_lo: f64,
    pub ci_hi: f64,
    pub gap: f64,
    pub tv: f64,
    pub outside_region_fraction: f64,
    pub fallback_decisions: u64,
    pub runs: Vec<ErgodicEstimate>,
    pub fairness: Option<FairnessReport>,
}

#[derive(Debug, Clone, Serialize)]
pub struct DiffusionEntry {
    pub seeds: Vec<u64>,
    pub config_hash: String,
    pub estimate: f64,
    pub ci_lo: f64,
    pub ci_hi: f64,
    pub step: f64,
    pub runs: Vec<ErgodicEstimate>,
}

#[derive(Debug, Clone, Serialize)]
pub struct ConvergenceReport {
    pub metric: String,
    pub config: ConvergenceConfig,
    pub config_hash: String,
    pub entries: Vec<ConvergenceEntry>,
    pub diffusion: DiffusionEntry,
    pub gap_spearman: f64,
    pub gap_shrinks: bool,
    /// TV distance between two independent diffusion histograms.
    pub tv_noise: f64,
    pub tv_nonincreasing: bool,
    pub outside_spearman: f64,
    pub outside_nonincreasing: bool,
}

fn pooled(estimates: &[ErgodicEstimate]) -> (f64, f64, f64) {
    let values: Vec<f64> = estimates.iter().map(|e| e.estimate).collect();
    if values.len() == 1 {
        let e = &estimates[0];
        return (e.estimate, e.ci_lo, e.ci_hi);
    }
    let (m, h) = mean_ci(&values);
    (m, m - h, m + h)
}

fn nonincreasing(v: &[f64], slack: f64) -> bool {
    v.windows(2).all(|w| w[1] <= w[0] + slack)
}

/// CTMC under the concatenated policy for each `n` against the diffusion
/// under the same control: cost gap, occupation-histogram TV distance and
/// time outside the JWC region.
pub fn convergence_experiment(
    topo: &NetworkTopology,
    limit: &LimitParams,
    control: &MarkovControl,
    costs: &CostSpec,
    cfg: &ConvergenceConfig,
) -> Result<ConvergenceReport, VerifyError> {
    if cfg.n_list.is_empty() || cfg.seeds.is_empty() {
        return Err(VerifyError::Invalid("need at least one n and one seed".into()));
    }
    let fluid = solve_fluid(topo, limit)?;
    let config_hash = content_hash(&(cfg, costs, control.kind()));
    let model = DiffusionModel::new(topo, limit, &fluid)?;
    let x0 = vec![0.0; topo.num_classes];

    // replication 0 feeds the estimate, replication 1 only the noise floor
    let sde_jobs: Vec<(u64, u64)> = cfg.seeds.iter().flat_map(|&s| [(s, 0), (s, 1)]).collect();
    let sde_runs = sde_jobs
        .par_iter()
        .map(|&(seed, replication)| {
            let mut sc = SdeConfig::new(cfg.sde_horizon, seed);
            sc.step = cfg.sde_step;
            sc.burn_in_frac = cfg.burn_in_frac;
            sc.batches = cfg.batches;
            sc.replication = replication;
            sc.histogram_cell = Some(cfg.cell);
            simulate_sde(&model, control, &x0, &sc, costs)
        })
        .collect::<Result<Vec<_>, _>>()?;
    let mut hist = [Histogram::new(cfg.cell), Histogram::new(cfg.cell)];
    let mut sde_estimates = Vec::new();
    for ((_, replication), run) in sde_jobs.iter().zip(&sde_runs) {
        if let Some(h) = &run.histogram {
            hist[*replication as usize].merge(h);
        }
        if *replication == 0 {
            let e = run
                .estimate(&cfg.metric)
                .ok_or_else(|| VerifyError::Invalid(format!("unknown metric {}", cfg.metric)))?;
            sde_estimates.push(e.clone());
        }
    }
    let (d_est, d_lo, d_hi) = pooled(&sde_estimates);
    let tv_noise = tv_distance(&hist[0], &hist[1]);
    let diffusion = DiffusionEntry {
        seeds: cfg.seeds.clone(),
        config_hash: config_hash.clone(),
        estimate: d_est,
        ci_lo: d_lo,
        ci_hi: d_hi,
        step: sde_runs[0].step,
        runs: sde_estimates,
    };

    let mut entries = Vec::with_capacity(cfg.n_list.len());
    for &n in &cfg.n_list {
        let scaled = scale_params(topo, limit, n)?;
        let margin = cfg.margin.unwrap_or_else(|| default_margin(topo, &scaled, &fluid));
        let shift = build_capacity_shift(topo, &scaled, &fluid, margin)?;
        let bsp = Bsp::new(topo, shift, scaled.pool_sizes.clone(), (0..topo.num_classes).collect());
        let region = JwcRegion::certify_with(topo, &scaled, &fluid, cfg.region_samples)?;
        let canonical = CanonicalJwc::new(topo, &scaled, &fluid, control.clone())?;
        let policy = Concatenated::new(region, canonical, bsp);
        let runs: Vec<CtmcRun> = cfg
            .seeds
            .par_iter()
            .map(|&seed| {
                let mut cc = CtmcConfig::new(cfg.ctmc_horizon, seed);
                cc.burn_in_frac = cfg.burn_in_frac;
                cc.batches = cfg.batches;
                cc.record_occupancy = true;
                cc.region = Some(Arc::clone(&policy.region));
                simulate_ctmc(topo, &scaled, &fluid, &policy, &cc, costs)
            })
            .collect::<Result<_, _>>()?;
        let mut h = Histogram::new(cfg.cell);
        let mut estimates = Vec::with_capacity(runs.len());
        let mut outside = 0.0;
        let mut fallback = 0;
        for run in &runs {
            if let Some(occ) = &run.occupancy {
                h.merge(&occ.lattice_histogram(&scaled, &fluid, cfg.cell));
            }
            estimates.push(
                run.estimate(&cfg.metric)
                    .ok_or_else(|| VerifyError::Invalid(format!("unknown metric {}", cfg.metric)))?
                    .clone(),
            );
            outside += 1.0 - run.region_fraction.unwrap_or(1.0);
            fallback += run.fallback_decisions;
        }
        let (est, lo, hi) = pooled(&estimates);
        let fairness = cfg.theta.as_deref().map(|theta| fairness_report(&runs, theta)).transpose()?;
        entries.push(ConvergenceEntry {
            n,
            seeds: cfg.seeds.clone(),
            config_hash: config_hash.clone(),
            estimate: est,
            ci_lo: lo,
            ci_hi: hi,
            gap: (est - d_est).abs(),
            tv: tv_distance(&h, &hist[0]),
            outside_region_fraction: outside / runs.len() as f64,
            fallback_decisions: fallback,
            runs: estimates,
            fairness,
        });
    }

    let ns: Vec<f64> = entries.iter().map(|e| e.n as f64).collect();
    let gaps: Vec<f64> = entries.iter().map(|e| e.gap).collect();
    let tvs: Vec<f64> = entries.iter().map(|e| e.tv).collect();
    let outs: Vec<f64> = entries.iter().map(|e| e.outside_region_fraction).collect();
    let gap_spearman = if ns.len() > 1 { spearman(&ns, &gaps) } else { f64::NAN };
    let outside_spearman = if ns.len() > 1 && outs.iter().any(|&o| o != outs[0]) {
        spearman(&ns, &outs)
    } else {
        0.0
    };
    Ok(ConvergenceReport {
        metric: cfg.metric.clone(),
        config: cfg.clone(),
        config_hash,
        gap_shrinks: ns.len() > 1 && gap_spearman <= TREND_THRESHOLD,
        gap_spearman,
        tv_noise,
        tv_nonincreasing: nonincreasing(&tvs, tv_noise),
        outside_spearman,
        outside_nonincreasing: nonincreasing(&outs, 1e-3),
        entries,
        diffusion,
    })
}

#[derive(Debug, Clone, Serialize)]
pub struct FairnessReport {
    pub theta: Vec<f64>,
    pub seeds: Vec<u64>,
    /// Per run, `J_{c,j} / sum_k J_{c,k}`.
    pub ratios: Vec<Vec<f64>>,
    pub mean_ratios: Vec<f64>,
    /// Largest across-run range of any pool's ratio.
    pub spread: f64,
    /// `max_j |mean ratio_j - theta_j|`.
    pub epsilon: f64,
}

/// Idleness shares per pool against a target split `theta`.
pub fn fairness_report(runs: &[CtmcRun], theta: &[f64]) -> Result<FairnessReport, VerifyError> {
    if runs.is_empty() {
        return Err(VerifyError::Invalid("no runs".into()));
    }
    if theta.iter().any(|&t| !(t > 0.0)) || (theta.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
        return Err(VerifyError::Invalid(format!("theta must be positive and sum to 1, got {theta:?}")));
    }
    let nj = theta.len();
    let mut ratios = Vec::with_capacity(runs.len());
    for run in runs {
        let j: Vec<f64> = (0..nj)
            .map(|k| {
                run.estimate(&format!("idle_cost.{}", k + 1))
                    .map(|e| e.estimate)
                    .ok_or_else(|| VerifyError::Invalid(format!("run has no idle_cost.{}", k + 1)))
            })
            .collect::<Result<_, _>>()?;
        let total: f64 = j.iter().sum();
        if !(total > 0.0) {
            return Err(VerifyError::Invalid(format!("seed {} has no idleness", run.seed)));
        }
        ratios.push(j.iter().map(|v| v / total).collect::<Vec<f64>>());
    }
    let mean_ratios: Vec<f64> = (0..nj)
        .map(|k| ratios.iter().map(|r| r[k]).sum::<f64>() / ratios.len() as f64)
        .collect();
    let spread = (0..nj)
        .map(|k| {
            let col = ratios.iter().map(|r| r[k]);
            col.clone().fold(f64::NEG_INFINITY, f64::max) - col.fold(f64::INFINITY, f64::min)
        })
        .fold(0.0, f64::max);
    let epsilon = mean_ratios
        .iter()
        .zip(theta)
        .map(|(r, t)| (r - t).abs())
        .fold(0.0, f64::max);
    Ok(FairnessReport {
        theta: theta.to_vec(),
        seeds: runs.iter().map(|r| r.seed).collect(),
        ratios,
        mean_ratios,
        spread,
        epsilon,
    })
}
