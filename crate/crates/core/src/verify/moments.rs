use std::collections::BTreeMap;

use serde::Serialize;

use crate::ctmc::CtmcRun;
use crate::observables::MOMENT_ORDERS;

/// Which right-hand side bounds the state moments.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum MomentVariant {
    /// `(1 + |q_hat| + |y_hat|)^kappa`.
    QueueAndIdle,
    /// `(1 + |q_hat|)^kappa`, for a single dominant class.
    QueueOnly,
}

impl MomentVariant {
    fn metric(self, kappa: i32) -> String {
        match self {
            MomentVariant::QueueAndIdle => format!("qy_moment^{kappa}"),
            MomentVariant::QueueOnly => format!("q_moment^{kappa}"),
        }
    }
}

/// Time averages from one simulated trace.
#[derive(Debug, Clone, Serialize)]
pub struct MomentTrace {
    pub label: String,
    pub n: u64,
    pub horizon: f64,
    /// `|x_hat(0)|`.
    pub initial_norm: f64,
    /// Metric name to time average.
    pub averages: BTreeMap<String, f64>,
    pub stable: bool,
}

impl MomentTrace {
    pub fn from_run(label: impl Into<String>, run: &CtmcRun, initial_norm: f64) -> Self {
        let averages: BTreeMap<String, f64> = run
            .estimates
            .iter()
            .map(|e| (e.metric.clone(), e.estimate))
            .collect();
        let stable = run.max_state_norm.is_finite() && averages.values().all(|v| v.is_finite());
        Self {
            label: label.into(),
            n: run.n,
            horizon: run.horizon,
            initial_norm,
            averages,
            stable,
        }
    }

    /// Placeholder for a run that blew up; it is reported and never fitted.
    pub fn unstable(label: impl Into<String>, n: u64, horizon: f64) -> Self {
        Self {
            label: label.into(),
            n,
            horizon,
            initial_norm: f64::NAN,
            averages: BTreeMap::new(),
            stable: false,
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct MomentFit {
    pub kappa: i32,
    pub variant: MomentVariant,
    pub c0: f64,
    pub c1: f64,
    /// Largest `state / rhs` over traces: the `c1` needed with `c0 = 0`.
    pub worst_ratio: f64,
    pub worst_label: String,
    /// Per-`n` value of `worst_ratio`.
    pub per_n: BTreeMap<u64, f64>,
    /// Per-`n` ratios within a factor of two of each other.
    pub bounded: bool,
    pub pass: bool,
}

#[derive(Debug, Clone, Serialize)]
pub struct MomentAudit {
    pub variant: MomentVariant,
    pub traces: usize,
    pub excluded: Vec<String>,
    pub fits: Vec<MomentFit>,
    pub pass: bool,
}

/// `min c0 + c1` subject to `a_t <= c0 w_t + c1 r_t`, `c0, c1 >= 0`, by
/// enumerating vertices of the feasible region.
fn fit_two_constants(rows: &[(f64, f64, f64)]) -> (f64, f64) {
    let feasible = |c0: f64, c1: f64| rows.iter().all(|&(a, w, r)| a <= (c0 * w + c1 * r) * (1.0 + 1e-12));
    let mut candidates = Vec::new();
    candidates.push((0.0, rows.iter().map(|&(a, _, r)| a / r).fold(0.0, f64::max)));
    candidates.push((rows.iter().map(|&(a, w, _)| a / w).fold(0.0, f64::max), 0.0));
    for (k, &(a1, w1, r1)) in rows.iter().enumerate() {
        for &(a2, w2, r2) in &rows[k + 1..] {
            let det = w1 * r2 - w2 * r1;
            if det.abs() < 1e-300 {
                continue;
            }
            let c0 = (a1 * r2 - a2 * r1) / det;
            let c1 = (w1 * a2 - w2 * a1) / det;
            if c0 >= 0.0 && c1 >= 0.0 {
                candidates.push((c0, c1));
            }
        }
    }
    candidates
        .into_iter()
        .filter(|&(c0, c1)| feasible(c0, c1))
        .min_by(|a, b| (a.0 + a.1).total_cmp(&(b.0 + b.1)))
        .unwrap_or((f64::INFINITY, f64::INFINITY))
}

/// Fits, for each order, one pair of constants with
/// `avg |x_hat|^k <= c0 (1 + |x_hat(0)|^k / T) + c1 avg rhs^k` over all
/// stable traces at once.
pub fn check_moment_bounds(traces: &[MomentTrace], kappas: &[i32], variant: MomentVariant) -> MomentAudit {
    let excluded: Vec<String> = traces.iter().filter(|t| !t.stable).map(|t| t.label.clone()).collect();
    let stable: Vec<&MomentTrace> = traces.iter().filter(|t| t.stable).collect();
    let mut fits = Vec::new();
    for &kappa in kappas {
        debug_assert!(MOMENT_ORDERS.contains(&kappa));
        let state_key = format!("state_norm^{kappa}");
        let rhs_key = variant.metric(kappa);
        let rows: Vec<(f64, f64, f64, &MomentTrace)> = stable
            .iter()
            .filter_map(|t| {
                let a = *t.averages.get(&state_key)?;
                let r = *t.averages.get(&rhs_key)?;
                let w = 1.0 + t.initial_norm.powi(kappa) / t.horizon;
                Some((a, w, r, *t))
            })
            .collect();
        let (c0, c1) = fit_two_constants(&rows.iter().map(|r| (r.0, r.1, r.2)).collect::<Vec<_>>());
        let mut per_n: BTreeMap<u64, f64> = BTreeMap::new();
        let mut worst = (0.0, String::new());
        for &(a, _, r, t) in &rows {
            let ratio = a / r;
            let e = per_n.entry(t.n).or_insert(0.0);
            *e = e.max(ratio);
            if ratio > worst.0 {
                worst = (ratio, t.label.clone());
            }
        }
        let hi = per_n.values().cloned().fold(0.0, f64::max);
        let lo = per_n.values().cloned().fold(f64::INFINITY, f64::min);
        let bounded = per_n.is_empty() || hi <= 2.0 * lo;
        let pass = !rows.is_empty() && c0.is_finite() && c1.is_finite() && bounded;
        fits.push(MomentFit {
            kappa,
            variant,
            c0,
            c1,
            worst_ratio: worst.0,
            worst_label: worst.1,
            per_n,
            bounded,
            pass,
        });
    }
    let pass = !fits.is_empty() && fits.iter().all(|f| f.pass);
    MomentAudit {
        variant,
        traces: stable.len(),
        excluded,
        fits,
        pass,
    }
}
