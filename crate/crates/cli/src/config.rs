//! Experiment configuration: TOML file plus `--set key=value` overrides.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use qednet::observables::CostSpec;
use qednet::policies::{Control, MarkovControl};
use qednet::topology::{LimitParams, NetworkTopology};

use crate::CliError;

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub network: NetworkConfig,
    #[serde(default)]
    pub policy: PolicyConfig,
    #[serde(default)]
    pub cost: Option<CostConfig>,
    #[serde(default)]
    pub run: RunSection,
    #[serde(default)]
    pub psi: Option<PsiConfig>,
}

/// Classes and pools are numbered from 1 in the file.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NetworkConfig {
    pub classes: usize,
    pub pools: usize,
    /// `[class, pool]` pairs.
    pub edges: Vec<[usize; 2]>,
    pub lambda: Vec<f64>,
    /// Keyed `"i-j"`.
    pub mu: BTreeMap<String, f64>,
    pub gamma: Vec<f64>,
    pub nu: Vec<f64>,
    #[serde(default)]
    pub lambda_hat: Option<Vec<f64>>,
    #[serde(default)]
    pub mu_hat: Option<BTreeMap<String, f64>>,
    #[serde(default)]
    pub nu_hat: Option<Vec<f64>>,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PolicyKind {
    #[default]
    Bsp,
    Canonical,
    Concatenated,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PolicyConfig {
    #[serde(default)]
    pub kind: PolicyKind,
    /// Constant control for the canonical rule; uniform when absent.
    #[serde(default)]
    pub control: Option<ControlConfig>,
    /// TOML file of `[[point]]` entries (`x`, `uc`, `us`) for a
    /// nearest-neighbour control; relative to the config file.
    #[serde(default)]
    pub control_table: Option<PathBuf>,
    /// Capacity-shift margin in units of `sqrt(n)`; derived when absent.
    #[serde(default)]
    pub margin: Option<f64>,
    /// Phase-two class priority, 1-based; index order when absent.
    #[serde(default)]
    pub order: Option<Vec<usize>>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ControlConfig {
    pub uc: Vec<f64>,
    pub us: Vec<f64>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct ControlTableFile {
    point: Vec<TablePoint>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct TablePoint {
    x: Vec<f64>,
    uc: Vec<f64>,
    us: Vec<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CostConfig {
    pub xi: Vec<f64>,
    pub zeta: Vec<f64>,
    #[serde(default = "one")]
    pub m: f64,
    #[serde(default = "one")]
    pub m_tilde: f64,
    /// Target idleness split for the fairness report.
    #[serde(default)]
    pub theta: Option<Vec<f64>>,
    /// Idleness constraint levels.
    #[serde(default)]
    pub delta: Option<Vec<f64>>,
}

fn one() -> f64 {
    1.0
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunSection {
    pub n_list: Vec<u64>,
    pub seeds: Vec<u64>,
    pub horizon: f64,
    pub sde_horizon: f64,
    pub step: Option<f64>,
    pub burn_in: f64,
    pub batches: usize,
    pub check_invariants: bool,
    /// `simulate-ctmc` also writes one event-log CSV per (n, seed).
    pub event_log: bool,
    /// Histogram cell for the convergence experiment.
    pub cell: f64,
    pub metric: String,
    pub kappas: Vec<i32>,
    pub epsilon: f64,
    pub samples: usize,
    pub radius: f64,
    pub shell: f64,
    pub sample_seed: u64,
    pub region_samples: usize,
}

impl Default for RunSection {
    fn default() -> Self {
        Self {
            n_list: vec![100],
            seeds: vec![1],
            horizon: 1e4,
            sde_horizon: 1e4,
            step: None,
            burn_in: 0.1,
            batches: 32,
            check_invariants: false,
            event_log: false,
            cell: 0.25,
            metric: "cost".into(),
            kappas: vec![1, 2],
            epsilon: 0.01,
            samples: 10_000,
            radius: 20.0,
            shell: 10.0,
            sample_seed: 1,
            region_samples: 10_000,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PsiConfig {
    pub alpha: Vec<f64>,
    pub beta: Vec<f64>,
}

/// Model objects built from a validated config.
#[derive(Debug, Clone)]
pub struct Resolved {
    pub config: RunConfig,
    pub topo: NetworkTopology,
    pub limit: LimitParams,
    pub costs: CostSpec,
    pub control: MarkovControl,
}

fn invalid(key: impl Into<String>, msg: impl Into<String>) -> CliError {
    CliError::Config {
        key: key.into(),
        message: msg.into(),
    }
}

/// Parses a `--set` value as a TOML value, falling back to a bare string.
fn parse_value(raw: &str) -> toml::Value {
    match format!("v = {raw}").parse::<toml::Table>() {
        Ok(mut t) => t.remove("v").unwrap_or_else(|| toml::Value::String(raw.into())),
        Err(_) => toml::Value::String(raw.into()),
    }
}

pub fn apply_override(root: &mut toml::Table, assignment: &str) -> Result<(), CliError> {
    let (key, raw) = assignment
        .split_once('=')
        .ok_or_else(|| invalid(assignment, "override must look like key=value"))?;
    let path: Vec<&str> = key.trim().split('.').collect();
    let (last, parents) = path.split_last().expect("split yields at least one item");
    let mut table = root;
    for (depth, part) in parents.iter().enumerate() {
        let entry = table
            .entry(part.to_string())
            .or_insert_with(|| toml::Value::Table(toml::Table::new()));
        table = entry
            .as_table_mut()
            .ok_or_else(|| invalid(path[..=depth].join("."), "not a table"))?;
    }
    table.insert(last.to_string(), parse_value(raw.trim()));
    Ok(())
}

pub fn load(path: &Path, overrides: &[String]) -> Result<Resolved, CliError> {
    let text = std::fs::read_to_string(path).map_err(|e| invalid("<config>", format!("{}: {e}", path.display())))?;
    parse_in(&text, overrides, path.parent().unwrap_or(Path::new(".")))
}

pub fn parse(text: &str, overrides: &[String]) -> Result<Resolved, CliError> {
    parse_in(text, overrides, Path::new("."))
}

/// Parses a config whose relative paths are taken from `base`.
pub fn parse_in(text: &str, overrides: &[String], base: &Path) -> Result<Resolved, CliError> {
    let mut root: toml::Table = text.parse().map_err(|e: toml::de::Error| invalid("<config>", e.message()))?;
    for o in overrides {
        apply_override(&mut root, o)?;
    }
    let config: RunConfig = serde_path_to_error::deserialize(toml::Value::Table(root)).map_err(|e| {
        let key = e.path().to_string();
        invalid(if key == "." { "<config>".into() } else { key }, e.into_inner().message())
    })?;
    resolve(config, base)
}

fn load_table(path: &Path, ni: usize, nj: usize) -> Result<MarkovControl, CliError> {
    const KEY: &str = "policy.control_table";
    let text = std::fs::read_to_string(path).map_err(|e| invalid(KEY, format!("{}: {e}", path.display())))?;
    let file: ControlTableFile = toml::from_str(&text).map_err(|e| invalid(KEY, format!("{}: {}", path.display(), e.message())))?;
    let mut points = Vec::with_capacity(file.point.len());
    let mut controls = Vec::with_capacity(file.point.len());
    for (k, p) in file.point.into_iter().enumerate() {
        let at = |field: &str| format!("{KEY} point[{}].{field}", k + 1);
        check_len(&at("x"), &p.x, ni)?;
        check_len(&at("uc"), &p.uc, ni)?;
        check_len(&at("us"), &p.us, nj)?;
        controls.push(Control::new(p.uc, p.us).map_err(|e| invalid(&at("uc"), e.to_string()))?);
        points.push(p.x);
    }
    MarkovControl::table(points, controls).map_err(|e| invalid(KEY, e.to_string()))
}

fn check_len<T>(key: &str, v: &[T], expected: usize) -> Result<(), CliError> {
    if v.len() == expected {
        Ok(())
    } else {
        Err(invalid(key, format!("expected {expected} entries, got {}", v.len())))
    }
}

fn edge_rates(
    key: &str,
    rates: &BTreeMap<String, f64>,
    topo: &NetworkTopology,
    required: bool,
) -> Result<Vec<f64>, CliError> {
    for k in rates.keys() {
        let parsed = k
            .split_once('-')
            .and_then(|(i, j)| Some((i.trim().parse::<usize>().ok()?, j.trim().parse::<usize>().ok()?)));
        match parsed {
            Some((i, j)) if i >= 1 && j >= 1 && topo.has_edge(i - 1, j - 1) => {}
            Some(_) => return Err(invalid(format!("{key}.{k}"), "not an edge of the network")),
            None => return Err(invalid(format!("{key}.{k}"), "keys must look like \"class-pool\", e.g. \"1-2\"")),
        }
    }
    topo.edges
        .iter()
        .map(|&(i, j)| {
            let k = format!("{}-{}", i + 1, j + 1);
            match rates.get(&k) {
                Some(&v) => Ok(v),
                None if !required => Ok(0.0),
                None => Err(invalid(format!("{key}.{k}"), format!("missing rate for edge ({}, {})", i + 1, j + 1))),
            }
        })
        .collect()
}

fn resolve(config: RunConfig, base: &Path) -> Result<Resolved, CliError> {
    let net = &config.network;
    if net.classes == 0 {
        return Err(invalid("network.classes", "must be at least 1"));
    }
    if net.pools == 0 {
        return Err(invalid("network.pools", "must be at least 1"));
    }
    let mut edges = Vec::with_capacity(net.edges.len());
    for (k, &[i, j]) in net.edges.iter().enumerate() {
        if !(1..=net.classes).contains(&i) || !(1..=net.pools).contains(&j) {
            return Err(invalid(
                format!("network.edges[{k}]"),
                format!("[{i}, {j}] is out of range for {} classes and {} pools", net.classes, net.pools),
            ));
        }
        edges.push((i - 1, j - 1));
    }
    let topo = NetworkTopology::new(net.classes, net.pools, edges);
    let report = topo.validate();
    if !report.is_valid() {
        return Err(invalid("network.edges", format!("not a tree: {:?}", report.violations)));
    }
    let (ni, nj) = (net.classes, net.pools);
    check_len("network.lambda", &net.lambda, ni)?;
    check_len("network.gamma", &net.gamma, ni)?;
    check_len("network.nu", &net.nu, nj)?;
    let mu = edge_rates("network.mu", &net.mu, &topo, true)?;
    let mut limit = LimitParams::first_order(&topo, net.lambda.clone(), &mu, net.gamma.clone(), net.nu.clone());
    if let Some(v) = &net.lambda_hat {
        check_len("network.lambda_hat", v, ni)?;
        limit.lambda_hat = v.clone();
    }
    if let Some(v) = &net.nu_hat {
        check_len("network.nu_hat", v, nj)?;
        limit.nu_hat = v.clone();
    }
    if let Some(m) = &net.mu_hat {
        for (k, v) in edge_rates("network.mu_hat", m, &topo, false)?.into_iter().enumerate() {
            let (i, j) = topo.edges[k];
            limit.mu_hat[(i, j)] = v;
        }
    }
    limit
        .validate(&topo, true)
        .map_err(|e| invalid("network", e.to_string()))?;

    let costs = match &config.cost {
        Some(c) => {
            check_len("cost.xi", &c.xi, ni)?;
            check_len("cost.zeta", &c.zeta, nj)?;
            if let Some(theta) = &c.theta {
                check_len("cost.theta", theta, nj)?;
                if theta.iter().any(|&t| !(t > 0.0)) || (theta.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
                    return Err(invalid("cost.theta", "entries must be positive and sum to 1"));
                }
            }
            if let Some(delta) = &c.delta {
                check_len("cost.delta", delta, nj)?;
                if delta.iter().any(|&d| !(d > 0.0)) {
                    return Err(invalid("cost.delta", "entries must be positive"));
                }
            }
            CostSpec {
                xi: c.xi.clone(),
                zeta: c.zeta.clone(),
                m: c.m,
                m_tilde: c.m_tilde,
            }
        }
        None => CostSpec::unit(ni, nj),
    };
    costs.validate(ni, nj).map_err(|e| invalid("cost", e.to_string()))?;

    let control = match (&config.policy.control, &config.policy.control_table) {
        (Some(_), Some(_)) => {
            return Err(invalid("policy.control_table", "give either policy.control or a table, not both"));
        }
        (Some(c), None) => {
            check_len("policy.control.uc", &c.uc, ni)?;
            check_len("policy.control.us", &c.us, nj)?;
            MarkovControl::Constant(
                Control::new(c.uc.clone(), c.us.clone()).map_err(|e| invalid("policy.control", e.to_string()))?,
            )
        }
        (None, Some(file)) => load_table(&base.join(file), ni, nj)?,
        (None, None) => MarkovControl::Constant(Control::uniform(ni, nj)),
    };
    if let Some(order) = &config.policy.order {
        let mut sorted = order.clone();
        sorted.sort_unstable();
        if sorted != (1..=ni).collect::<Vec<_>>() {
            return Err(invalid("policy.order", format!("must be a permutation of 1..={ni}")));
        }
    }
    if let Some(m) = config.policy.margin {
        if !(m > 0.0) {
            return Err(invalid("policy.margin", "must be positive"));
        }
    }

    let run = &config.run;
    if run.n_list.is_empty() || run.n_list.contains(&0) {
        return Err(invalid("run.n_list", "need at least one n >= 1"));
    }
    if run.seeds.is_empty() {
        return Err(invalid("run.seeds", "need at least one seed"));
    }
    for (key, v) in [
        ("run.horizon", run.horizon),
        ("run.sde_horizon", run.sde_horizon),
        ("run.cell", run.cell),
        ("run.epsilon", run.epsilon),
        ("run.radius", run.radius),
    ] {
        if !(v > 0.0 && v.is_finite()) {
            return Err(invalid(key, format!("must be positive, got {v}")));
        }
    }
    if let Some(h) = run.step {
        if !(h > 0.0) {
            return Err(invalid("run.step", "must be positive"));
        }
    }
    if !(0.0..1.0).contains(&run.burn_in) {
        return Err(invalid("run.burn_in", "must lie in [0, 1)"));
    }
    if run.batches < 2 {
        return Err(invalid("run.batches", "need at least 2 batches"));
    }
    if run.kappas.iter().any(|k| ![1, 2, 4].contains(k)) {
        return Err(invalid("run.kappas", "supported orders are 1, 2 and 4"));
    }
    if let Some(p) = &config.psi {
        check_len("psi.alpha", &p.alpha, ni)?;
        check_len("psi.beta", &p.beta, nj)?;
    }

    Ok(Resolved {
        topo,
        limit,
        costs,
        control,
        config,
    })
}
