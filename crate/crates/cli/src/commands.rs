use std::collections::BTreeMap;
use std::path::Path;
use std::sync::Arc;

use nalgebra::DMatrix;
use rayon::prelude::*;
use serde::Serialize;

use qednet::ctmc::{fluid_start, simulate_ctmc_observed, CtmcConfig, CtmcRun, EventKind, SimError, StepView};
use qednet::topology::NetworkTopology;
use qednet::diffusion::{simulate_sde, DiffusionModel, SdeConfig, SdeRun};
use qednet::fluid::{extract_drift_matrices, psi_map, solve_fluid, FluidSolution};
use qednet::lyapunov::LyapunovSpec;
use qednet::policies::{
    build_capacity_shift, default_margin, Bsp, CanonicalJwc, Concatenated, JwcRegion, Policy, PolicyError,
};
use qednet::stats::mean_ci;
use qednet::topology::{scale_params, ScaledParams};
use qednet::verify::{
    check_discrete_lyapunov, check_jwc_stability_preservation, check_moment_bounds, content_hash,
    convergence_experiment, ConvergenceConfig, LyapunovCertificate, MomentAudit, MomentTrace, MomentVariant,
    SampleConfig, VerifyError,
};

use crate::config::{PolicyKind, Resolved, RunConfig};
use crate::{CliError, Command};

/// One plot-data row.
#[derive(Debug, Clone, Serialize)]
pub struct CsvRow {
    pub n: String,
    pub estimate: f64,
    pub ci_lo: f64,
    pub ci_hi: f64,
    pub metric: String,
}

#[derive(Debug, Clone)]
pub struct Artifact {
    pub json: String,
    pub csv: Option<String>,
    /// Additional files as `(file name suffix, contents)`.
    pub extra: Vec<(String, String)>,
}

impl Artifact {
    pub fn write(&self, dir: &Path, stem: &str) -> Result<(), CliError> {
        let io = |path: &Path| {
            let path = path.to_path_buf();
            move |source| CliError::Io { path, source }
        };
        std::fs::create_dir_all(dir).map_err(io(dir))?;
        let json_path = dir.join(format!("{stem}.json"));
        std::fs::write(&json_path, format!("{}\n", self.json)).map_err(io(&json_path))?;
        if let Some(csv) = &self.csv {
            let csv_path = dir.join(format!("{stem}.csv"));
            std::fs::write(&csv_path, csv).map_err(io(&csv_path))?;
        }
        for (suffix, contents) in &self.extra {
            let path = dir.join(format!("{stem}.{suffix}"));
            std::fs::write(&path, contents).map_err(io(&path))?;
        }
        Ok(())
    }
}

#[derive(Serialize)]
struct Envelope<'a, T: Serialize> {
    command: &'a str,
    config: &'a RunConfig,
    config_hash: String,
    result: T,
}

fn artifact<T: Serialize>(command: Command, r: &Resolved, result: T, rows: Option<Vec<CsvRow>>) -> Result<Artifact, CliError> {
    let env = Envelope {
        command: command.name(),
        config: &r.config,
        config_hash: content_hash(&r.config),
        result,
    };
    let json = serde_json::to_string_pretty(&env).map_err(|e| CliError::Runtime(e.to_string()))?;
    let csv = match rows {
        Some(rows) => {
            let mut w = csv::Writer::from_writer(Vec::new());
            for row in rows {
                w.serialize(row).map_err(|e| CliError::Runtime(e.to_string()))?;
            }
            let bytes = w.into_inner().map_err(|e| CliError::Runtime(e.to_string()))?;
            Some(String::from_utf8(bytes).expect("csv output is utf-8"))
        }
        None => None,
    };
    Ok(Artifact {
        json,
        csv,
        extra: Vec::new(),
    })
}

fn rows(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    (0..m.nrows()).map(|i| m.row(i).iter().cloned().collect()).collect()
}

fn fluid_of(r: &Resolved) -> Result<FluidSolution, CliError> {
    solve_fluid(&r.topo, &r.limit).map_err(|e| CliError::Config {
        key: "network".into(),
        message: e.to_string(),
    })
}

fn scaled_at(r: &Resolved, n: u64) -> Result<ScaledParams, CliError> {
    scale_params(&r.topo, &r.limit, n).map_err(|e| CliError::Config {
        key: "run.n_list".into(),
        message: format!("n = {n}: {e}"),
    })
}

fn policy_error(e: PolicyError) -> CliError {
    let key = match e {
        PolicyError::NoAnchorClass => "network.gamma",
        PolicyError::InfeasibleShift { .. } => "policy.margin",
        PolicyError::InvalidControl(_) => "policy.control",
        _ => "policy",
    };
    CliError::Config {
        key: key.into(),
        message: e.to_string(),
    }
}

enum Built {
    Bsp(Bsp),
    Canonical(CanonicalJwc, Arc<JwcRegion>),
    Concatenated(Concatenated),
}

impl Built {
    fn policy(&self) -> &dyn Policy {
        match self {
            Built::Bsp(p) => p,
            Built::Canonical(p, _) => p,
            Built::Concatenated(p) => p,
        }
    }

    fn region(&self) -> Option<Arc<JwcRegion>> {
        match self {
            Built::Bsp(_) => None,
            Built::Canonical(_, r) => Some(Arc::clone(r)),
            Built::Concatenated(p) => Some(Arc::clone(&p.region)),
        }
    }
}

fn build_bsp(r: &Resolved, s: &ScaledParams, f: &FluidSolution) -> Result<Bsp, CliError> {
    let p = &r.config.policy;
    let margin = p.margin.unwrap_or_else(|| default_margin(&r.topo, s, f));
    let shift = build_capacity_shift(&r.topo, s, f, margin).map_err(policy_error)?;
    let order = match &p.order {
        Some(o) => o.iter().map(|i| i - 1).collect(),
        None => (0..r.topo.num_classes).collect(),
    };
    Ok(Bsp::new(&r.topo, shift, s.pool_sizes.clone(), order))
}

fn build(r: &Resolved, s: &ScaledParams, f: &FluidSolution) -> Result<Built, CliError> {
    let region = || {
        JwcRegion::certify_with(&r.topo, s, f, r.config.run.region_samples).map_err(policy_error)
    };
    let canonical = || CanonicalJwc::new(&r.topo, s, f, r.control.clone()).map_err(policy_error);
    Ok(match r.config.policy.kind {
        PolicyKind::Bsp => Built::Bsp(build_bsp(r, s, f)?),
        PolicyKind::Canonical => Built::Canonical(canonical()?, Arc::new(region()?)),
        PolicyKind::Concatenated => Built::Concatenated(Concatenated::new(region()?, canonical()?, build_bsp(r, s, f)?)),
    })
}

#[derive(Serialize)]
struct Pooled {
    metric: String,
    estimate: f64,
    ci_lo: f64,
    ci_hi: f64,
}

/// Across seeds when there are several, else the single run's batch CI.
fn pool<'a>(names: impl Iterator<Item = &'a str>, lookup: impl Fn(&str) -> Vec<(f64, f64, f64)>) -> Vec<Pooled> {
    names
        .map(|name| {
            let v = lookup(name);
            let (estimate, ci_lo, ci_hi) = if v.len() == 1 {
                v[0]
            } else {
                let (m, h) = mean_ci(&v.iter().map(|e| e.0).collect::<Vec<_>>());
                (m, m - h, m + h)
            };
            Pooled {
                metric: name.to_string(),
                estimate,
                ci_lo,
                ci_hi,
            }
        })
        .collect()
}

fn csv_rows(n: &str, pooled: &[Pooled]) -> Vec<CsvRow> {
    pooled
        .iter()
        .map(|p| CsvRow {
            n: n.to_string(),
            estimate: p.estimate,
            ci_lo: p.ci_lo,
            ci_hi: p.ci_hi,
            metric: p.metric.clone(),
        })
        .collect()
}

pub fn run_command(command: Command, r: &Resolved) -> Result<Artifact, CliError> {
    match command {
        Command::Fluid => fluid(r),
        Command::Psi => psi(r),
        Command::SimulateCtmc => simulate_ctmc_cmd(r),
        Command::SimulateDiffusion => simulate_diffusion(r),
        Command::VerifyLyapunov => verify_lyapunov(r),
        Command::VerifyMoments => verify_moments(r),
        Command::Convergence => convergence(r),
    }
}

fn fluid(r: &Resolved) -> Result<Artifact, CliError> {
    #[derive(Serialize)]
    struct Drift {
        ell: Vec<f64>,
        b1: Vec<Vec<f64>>,
        b2: Vec<Vec<f64>>,
        gamma: Vec<f64>,
        elimination_order: Vec<usize>,
    }
    #[derive(Serialize)]
    struct Out {
        xi_star: Vec<Vec<f64>>,
        x_star: Vec<f64>,
        z_star: Vec<Vec<f64>>,
        drift: Drift,
    }
    let f = fluid_of(r)?;
    let d = extract_drift_matrices(&r.topo, &r.limit, &f).map_err(|e| CliError::Config {
        key: "network".into(),
        message: e.to_string(),
    })?;
    let out = Out {
        xi_star: rows(&f.xi_star),
        x_star: f.x_star.clone(),
        z_star: rows(&f.z_star),
        drift: Drift {
            ell: d.ell,
            b1: rows(&d.b1),
            b2: rows(&d.b2),
            gamma: d.gamma,
            elimination_order: d.elimination_order.iter().map(|i| i + 1).collect(),
        },
    };
    artifact(Command::Fluid, r, out, None)
}

fn psi(r: &Resolved) -> Result<Artifact, CliError> {
    #[derive(Serialize)]
    struct Out {
        alpha: Vec<f64>,
        beta: Vec<f64>,
        psi: Vec<Vec<f64>>,
    }
    let (alpha, beta) = match &r.config.psi {
        Some(p) => (p.alpha.clone(), p.beta.clone()),
        None => (fluid_of(r)?.x_star, r.limit.nu.clone()),
    };
    let m = psi_map(&r.topo, &alpha, &beta).map_err(|e| CliError::Config {
        key: "psi".into(),
        message: e.to_string(),
    })?;
    artifact(Command::Psi, r, Out { alpha, beta, psi: rows(&m) }, None)
}

fn ctmc_runs(r: &Resolved, s: &ScaledParams, f: &FluidSolution, built: &Built) -> Vec<Result<CtmcRun, SimError>> {
    logged_ctmc_runs(r, s, f, built, false)
        .into_iter()
        .map(|res| res.map(|(run, _)| run))
        .collect()
}

/// Runs every seed; with `log` set, also returns each run's event CSV.
fn logged_ctmc_runs(
    r: &Resolved,
    s: &ScaledParams,
    f: &FluidSolution,
    built: &Built,
    log: bool,
) -> Vec<Result<(CtmcRun, Option<String>), SimError>> {
    let run = &r.config.run;
    run.seeds
        .par_iter()
        .map(|&seed| {
            let mut cfg = CtmcConfig::new(run.horizon, seed);
            cfg.burn_in_frac = run.burn_in;
            cfg.batches = run.batches;
            cfg.check_invariants = run.check_invariants;
            cfg.region = built.region();
            if !log {
                let out = simulate_ctmc_observed(&r.topo, s, f, built.policy(), &cfg, &r.costs, &mut |_| {})?;
                return Ok((out, None));
            }
            let mut events = String::from("time,event,class,pool,edge,x\n");
            let out = simulate_ctmc_observed(&r.topo, s, f, built.policy(), &cfg, &r.costs, &mut |v| {
                push_event(&mut events, &r.topo, v)
            })?;
            Ok((out, Some(events)))
        })
        .collect()
}

fn push_event(out: &mut String, topo: &NetworkTopology, v: &StepView) {
    use std::fmt::Write;
    let (name, class, pool) = match v.event {
        EventKind::Start => ("start", None, None),
        EventKind::Arrival { class } => ("arrival", Some(class), None),
        EventKind::Service { class, pool } => ("service", Some(class), Some(pool)),
        EventKind::Abandon { class } => ("abandon", Some(class), None),
    };
    let edge = class
        .zip(pool)
        .and_then(|(i, j)| topo.edges.iter().position(|&e| e == (i, j)));
    let one_based = |k: Option<usize>| k.map(|k| (k + 1).to_string()).unwrap_or_default();
    let x = v.x.iter().map(|c| c.to_string()).collect::<Vec<_>>().join(" ");
    let _ = writeln!(
        out,
        "{},{name},{},{},{},{x}",
        v.time,
        one_based(class),
        one_based(pool),
        one_based(edge)
    );
}

fn simulate_ctmc_cmd(r: &Resolved) -> Result<Artifact, CliError> {
    #[derive(Serialize)]
    struct Entry {
        n: u64,
        pool_sizes: Vec<i64>,
        pooled: Vec<Pooled>,
        runs: Vec<CtmcRun>,
    }
    let f = fluid_of(r)?;
    let mut entries = Vec::new();
    let mut csv = Vec::new();
    let mut logs = Vec::new();
    for &n in &r.config.run.n_list {
        let s = scaled_at(r, n)?;
        let built = build(r, &s, &f)?;
        let logged = logged_ctmc_runs(r, &s, &f, &built, r.config.run.event_log)
            .into_iter()
            .collect::<Result<Vec<_>, _>>()?;
        let mut runs = Vec::with_capacity(logged.len());
        for (run, events) in logged {
            if let Some(events) = events {
                logs.push((format!("events.n{n}.seed{}.csv", run.seed), events));
            }
            runs.push(run);
        }
        let pooled = pool(runs[0].estimates.iter().map(|e| e.metric.as_str()), |m| {
            runs.iter()
                .map(|run| {
                    let e = run.estimate(m).expect("every run has the same metrics");
                    (e.estimate, e.ci_lo, e.ci_hi)
                })
                .collect()
        });
        csv.extend(csv_rows(&n.to_string(), &pooled));
        entries.push(Entry {
            n,
            pool_sizes: s.pool_sizes.clone(),
            pooled,
            runs,
        });
    }
    let mut out = artifact(Command::SimulateCtmc, r, entries, Some(csv))?;
    out.extra = logs;
    Ok(out)
}

fn simulate_diffusion(r: &Resolved) -> Result<Artifact, CliError> {
    #[derive(Serialize)]
    struct Out {
        pooled: Vec<Pooled>,
        runs: Vec<SdeRun>,
    }
    let f = fluid_of(r)?;
    let model = DiffusionModel::new(&r.topo, &r.limit, &f).map_err(|e| CliError::Config {
        key: "network".into(),
        message: e.to_string(),
    })?;
    let run = &r.config.run;
    let x0 = vec![0.0; r.topo.num_classes];
    let runs = run
        .seeds
        .par_iter()
        .map(|&seed| {
            let mut cfg = SdeConfig::new(run.sde_horizon, seed);
            cfg.step = run.step;
            cfg.burn_in_frac = run.burn_in;
            cfg.batches = run.batches;
            simulate_sde(&model, &r.control, &x0, &cfg, &r.costs)
        })
        .collect::<Result<Vec<_>, _>>()?;
    let pooled = pool(runs[0].estimates.iter().map(|e| e.metric.as_str()), |m| {
        runs.iter()
            .map(|run| {
                let e = run.estimate(m).expect("every run has the same metrics");
                (e.estimate, e.ci_lo, e.ci_hi)
            })
            .collect()
    });
    let csv = csv_rows("diffusion", &pooled);
    artifact(Command::SimulateDiffusion, r, Out { pooled, runs }, Some(csv))
}

fn verify_lyapunov(r: &Resolved) -> Result<Artifact, CliError> {
    #[derive(Serialize)]
    struct Entry {
        n: u64,
        pass: bool,
        error: Option<String>,
        certificate: Option<LyapunovCertificate>,
    }
    #[derive(Serialize)]
    struct Out {
        pass: bool,
        entries: Vec<Entry>,
    }
    let f = fluid_of(r)?;
    let run = &r.config.run;
    let spec = LyapunovSpec::exponential(run.epsilon, vec![1.0; r.topo.num_classes]).map_err(|e| CliError::Config {
        key: "run.epsilon".into(),
        message: e.to_string(),
    })?;
    let sampling = SampleConfig {
        count: run.samples,
        radius: run.radius,
        shell: run.shell,
        seed: run.sample_seed,
    };
    let mut entries = Vec::new();
    let mut csv = Vec::new();
    for &n in &run.n_list {
        let s = scaled_at(r, n)?;
        let result = match build(r, &s, &f)? {
            Built::Bsp(bsp) => check_discrete_lyapunov(&r.topo, &s, &f, &bsp, &spec, &sampling),
            Built::Canonical(c, region) => {
                check_jwc_stability_preservation(&r.topo, &s, &f, &c, &region, &spec, &sampling)
            }
            Built::Concatenated(p) => {
                check_jwc_stability_preservation(&r.topo, &s, &f, &p.canonical, &p.region, &spec, &sampling)
            }
        };
        let entry = match result {
            Ok(cert) => {
                csv.push(CsvRow {
                    n: n.to_string(),
                    estimate: cert.c1,
                    ci_lo: cert.c1,
                    ci_hi: cert.c1,
                    metric: "c1".into(),
                });
                Entry {
                    n,
                    pass: cert.pass,
                    error: None,
                    certificate: Some(cert),
                }
            }
            Err(VerifyError::FitFailed(msg)) => Entry {
                n,
                pass: false,
                error: Some(msg),
                certificate: None,
            },
            Err(e) => return Err(e.into()),
        };
        entries.push(entry);
    }
    let pass = entries.iter().all(|e| e.pass);
    artifact(Command::VerifyLyapunov, r, Out { pass, entries }, Some(csv))
}

fn verify_moments(r: &Resolved) -> Result<Artifact, CliError> {
    #[derive(Serialize)]
    struct Out {
        traces: Vec<MomentTrace>,
        audits: Vec<MomentAudit>,
    }
    let f = fluid_of(r)?;
    let run = &r.config.run;
    let mut traces = Vec::new();
    for &n in &run.n_list {
        let s = scaled_at(r, n)?;
        let built = build(r, &s, &f)?;
        let x0 = fluid_start(&s, &f);
        let rn = s.sqrt_n();
        let initial_norm = x0
            .iter()
            .zip(&f.x_star)
            .map(|(&x, &c)| ((x as f64 - n as f64 * c) / rn).powi(2))
            .sum::<f64>()
            .sqrt();
        for (seed, res) in run.seeds.iter().zip(ctmc_runs(r, &s, &f, &built)) {
            let label = format!("n={n},seed={seed}");
            match res {
                Ok(run) => traces.push(MomentTrace::from_run(label, &run, initial_norm)),
                Err(SimError::StateExplosion { .. }) => traces.push(MomentTrace::unstable(label, n, run.horizon)),
                Err(e) => return Err(e.into()),
            }
        }
    }
    let audits: Vec<MomentAudit> = [MomentVariant::QueueAndIdle, MomentVariant::QueueOnly]
        .into_iter()
        .map(|v| check_moment_bounds(&traces, &run.kappas, v))
        .collect();
    let mut csv = Vec::new();
    for audit in &audits {
        let tag = match audit.variant {
            MomentVariant::QueueAndIdle => "queue_idle",
            MomentVariant::QueueOnly => "queue_only",
        };
        for fit in &audit.fits {
            for (n, ratio) in &fit.per_n {
                csv.push(CsvRow {
                    n: n.to_string(),
                    estimate: *ratio,
                    ci_lo: *ratio,
                    ci_hi: *ratio,
                    metric: format!("moment_ratio^{}.{tag}", fit.kappa),
                });
            }
        }
    }
    artifact(Command::VerifyMoments, r, Out { traces, audits }, Some(csv))
}

fn convergence(r: &Resolved) -> Result<Artifact, CliError> {
    let run = &r.config.run;
    let cfg = ConvergenceConfig {
        n_list: run.n_list.clone(),
        seeds: run.seeds.clone(),
        ctmc_horizon: run.horizon,
        sde_horizon: run.sde_horizon,
        sde_step: run.step,
        burn_in_frac: run.burn_in,
        batches: run.batches,
        cell: run.cell,
        metric: run.metric.clone(),
        region_samples: run.region_samples,
        margin: r.config.policy.margin,
        theta: r.config.cost.as_ref().and_then(|c| c.theta.clone()),
    };
    let report = convergence_experiment(&r.topo, &r.limit, &r.control, &r.costs, &cfg)?;
    let mut csv = Vec::new();
    for e in &report.entries {
        let mut extra: BTreeMap<&str, f64> = BTreeMap::new();
        extra.insert("gap", e.gap);
        extra.insert("tv", e.tv);
        extra.insert("outside_region", e.outside_region_fraction);
        csv.push(CsvRow {
            n: e.n.to_string(),
            estimate: e.estimate,
            ci_lo: e.ci_lo,
            ci_hi: e.ci_hi,
            metric: report.metric.clone(),
        });
        for (name, v) in extra {
            csv.push(CsvRow {
                n: e.n.to_string(),
                estimate: v,
                ci_lo: v,
                ci_hi: v,
                metric: name.into(),
            });
        }
    }
    let d = &report.diffusion;
    csv.push(CsvRow {
        n: "diffusion".into(),
        estimate: d.estimate,
        ci_lo: d.ci_lo,
        ci_hi: d.ci_hi,
        metric: report.metric.clone(),
    });
    artifact(Command::Convergence, r, report, Some(csv))
}
