use rand::Rng;
use rand_distr::StandardNormal;
use serde::Serialize;

use super::VerifyError;
use crate::diffusion::DiffusionModel;
use crate::fluid::FluidSolution;
use crate::lyapunov::{euclid, LyapunovKind, LyapunovSpec, TestFunction};
use crate::policies::{queues, CanonicalJwc, Control, JwcRegion, MarkovControl, Policy, PolicyError};
use crate::rng;
use crate::topology::{NetworkTopology, ScaledParams};

/// Where and how densely states are sampled.
#[derive(Debug, Clone, Serialize)]
pub struct SampleConfig {
    pub count: usize,
    /// Radius of the ball in diffusion scale.
    pub radius: f64,
    /// Decay is fitted only on states with `|x_hat| >= shell`.
    pub shell: f64,
    pub seed: u64,
}

impl Default for SampleConfig {
    fn default() -> Self {
        Self {
            count: 10_000,
            radius: 20.0,
            shell: 10.0,
            seed: 1,
        }
    }
}

/// Uniform point in the Euclidean ball of `radius` in `dim` dimensions.
pub(crate) fn ball_point<R: Rng>(rng: &mut R, dim: usize, radius: f64) -> Vec<f64> {
    let g: Vec<f64> = (0..dim).map(|_| rng.sample(StandardNormal)).collect();
    let norm = euclid(&g).max(f64::MIN_POSITIVE);
    let r = radius * rng.gen::<f64>().powf(1.0 / dim as f64);
    g.iter().map(|v| v * r / norm).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CertSample {
    pub x: Vec<i64>,
    /// `L f(x)`.
    pub generator: f64,
    /// `f(x)`.
    pub value: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct LyapunovCertificate {
    pub spec: LyapunovSpec,
    pub n: u64,
    pub policy: String,
    pub region: String,
    pub sampling: SampleConfig,
    pub rejected: usize,
    pub c0: f64,
    pub c1: f64,
    /// `max (L f + c1 f - c0)` over samples.
    pub max_residual: f64,
    pub pass: bool,
    pub samples: Vec<CertSample>,
}

/// Exact `L_n f(x)` and `f(x)` with `f = V(x_hat)`.
///
/// For the exponential function every difference is `f(x) expm1(dE)` with
/// `E` the exponent, which avoids cancellation far from the origin.
fn discrete_generator(
    topo: &NetworkTopology,
    scaled: &ScaledParams,
    center: &[f64],
    spec: &LyapunovSpec,
    x: &[i64],
    z: &[i64],
) -> (f64, f64) {
    let rn = scaled.sqrt_n();
    let ni = x.len();
    let to_hat = |x: &[i64]| -> Vec<f64> {
        x.iter()
            .zip(center)
            .map(|(&v, &c)| (v as f64 - c) / rn)
            .collect()
    };
    let base = to_hat(x);
    let value = spec.value(&base);
    let exp_kind = matches!(spec.kind, LyapunovKind::Exponential { .. });
    let e0 = spec.exponent(&base);
    let diff = |i: usize, delta: f64| -> f64 {
        let mut moved = base.clone();
        moved[i] += delta / rn;
        if exp_kind {
            value * (spec.exponent(&moved) - e0).exp_m1()
        } else {
            spec.value(&moved) - value
        }
    };
    let q = queues(topo, x, z);
    let mut down_rate = vec![0.0; ni];
    for (k, &(i, j)) in topo.edges.iter().enumerate() {
        down_rate[i] += scaled.mu[(i, j)] * z[k] as f64;
    }
    let mut lf = 0.0;
    for i in 0..ni {
        down_rate[i] += scaled.gamma[i] * q[i] as f64;
        lf += scaled.lambda[i] * diff(i, 1.0);
        if down_rate[i] > 0.0 {
            lf += down_rate[i] * diff(i, -1.0);
        }
    }
    (lf, value)
}

fn fit_certificate(
    spec: &LyapunovSpec,
    n: u64,
    policy: &str,
    region: String,
    sampling: &SampleConfig,
    rejected: usize,
    samples: Vec<CertSample>,
    hat_norm: impl Fn(&[i64]) -> f64,
) -> Result<LyapunovCertificate, VerifyError> {
    let worst_ratio = samples
        .iter()
        .filter(|s| hat_norm(&s.x) >= sampling.shell)
        .map(|s| s.generator / s.value)
        .fold(f64::NEG_INFINITY, f64::max);
    if worst_ratio == f64::NEG_INFINITY {
        return Err(VerifyError::FitFailed(format!(
            "no samples beyond the shell |x_hat| >= {}",
            sampling.shell
        )));
    }
    let c1 = -worst_ratio;
    if !(c1 > 0.0) {
        return Err(VerifyError::FitFailed(format!(
            "generator ratio reaches {worst_ratio:.4e} >= 0 on the shell; no decay rate"
        )));
    }
    let c0 = samples
        .iter()
        .map(|s| s.generator + c1 * s.value)
        .fold(0.0, f64::max);
    let max_residual = samples
        .iter()
        .map(|s| s.generator + c1 * s.value - c0)
        .fold(f64::NEG_INFINITY, f64::max);
    Ok(LyapunovCertificate {
        spec: spec.clone(),
        n,
        policy: policy.to_string(),
        region,
        sampling: sampling.clone(),
        rejected,
        c0,
        c1,
        max_residual,
        pass: max_residual <= 0.0 && c1 > 0.0,
        samples,
    })
}

/// Shared sampler: nonnegative integer states near `n x* + sqrt(n) B(radius)`.
#[allow(clippy::too_many_arguments)]
fn sample_states(
    topo: &NetworkTopology,
    scaled: &ScaledParams,
    fluid: &FluidSolution,
    spec: &LyapunovSpec,
    policy: &dyn Policy,
    sampling: &SampleConfig,
    accept: &dyn Fn(&[i64]) -> bool,
) -> Result<(Vec<CertSample>, usize), VerifyError> {
    let n = scaled.n as f64;
    let rn = scaled.sqrt_n();
    let center: Vec<f64> = fluid.x_star.iter().map(|&v| v * n).collect();
    let mut rng = rng::stream(sampling.seed, scaled.n);
    let mut samples = Vec::with_capacity(sampling.count);
    let mut rejected = 0usize;
    let mut z = vec![0; topo.num_edges()];
    let max_attempts = 1000 * sampling.count.max(1);
    let mut attempts = 0;
    while samples.len() < sampling.count {
        attempts += 1;
        if attempts > max_attempts {
            return Err(VerifyError::FitFailed(format!(
                "only {} of {} admissible samples found",
                samples.len(),
                sampling.count
            )));
        }
        let dir = ball_point(&mut rng, topo.num_classes, sampling.radius);
        let x: Vec<i64> = dir
            .iter()
            .zip(&center)
            .map(|(d, c)| (c + d * rn).round() as i64)
            .collect();
        if x.iter().any(|&v| v < 0) || !accept(&x) {
            rejected += 1;
            continue;
        }
        match policy.decide_into(&x, &mut z) {
            Ok(_) => {}
            Err(PolicyError::OutsideJwc { .. }) => {
                rejected += 1;
                continue;
            }
            Err(e) => return Err(e.into()),
        }
        let (generator, value) = discrete_generator(topo, scaled, &center, spec, &x, &z);
        samples.push(CertSample { x, generator, value });
    }
    Ok((samples, rejected))
}

fn hat_norm_fn(scaled: &ScaledParams, fluid: &FluidSolution) -> impl Fn(&[i64]) -> f64 {
    let n = scaled.n as f64;
    let rn = scaled.sqrt_n();
    let center: Vec<f64> = fluid.x_star.iter().map(|&v| v * n).collect();
    move |x: &[i64]| {
        x.iter()
            .zip(&center)
            .map(|(&v, &c)| ((v as f64 - c) / rn).powi(2))
            .sum::<f64>()
            .sqrt()
    }
}

/// Foster-Lyapunov certificate for the exact generator of the `n`-th
/// system under `policy`, fitted on sampled states.
pub fn check_discrete_lyapunov(
    topo: &NetworkTopology,
    scaled: &ScaledParams,
    fluid: &FluidSolution,
    policy: &dyn Policy,
    spec: &LyapunovSpec,
    sampling: &SampleConfig,
) -> Result<LyapunovCertificate, VerifyError> {
    let (samples, rejected) = sample_states(topo, scaled, fluid, spec, policy, sampling, &|_| true)?;
    fit_certificate(
        spec,
        scaled.n,
        policy.name(),
        format!("ball |x_hat| <= {} (nonnegative states)", sampling.radius),
        sampling,
        rejected,
        samples,
        hat_norm_fn(scaled, fluid),
    )
}

/// As [`check_discrete_lyapunov`] under the canonical policy, sampling only
/// inside the certified JWC region.
pub fn check_jwc_stability_preservation(
    topo: &NetworkTopology,
    scaled: &ScaledParams,
    fluid: &FluidSolution,
    canonical: &CanonicalJwc,
    region: &JwcRegion,
    spec: &LyapunovSpec,
    sampling: &SampleConfig,
) -> Result<LyapunovCertificate, VerifyError> {
    // The region is |x_hat|_1 <= m0 sqrt(n); keep the Euclidean sampling
    // ball inside it and shrink the shell by the same factor.
    let fit_radius = region.m0 * scaled.sqrt_n() / (topo.num_classes as f64).sqrt();
    let sampling = if fit_radius < sampling.radius {
        SampleConfig {
            radius: fit_radius,
            shell: sampling.shell * fit_radius / sampling.radius,
            ..sampling.clone()
        }
    } else {
        sampling.clone()
    };
    let inside = |x: &[i64]| region.contains(x);
    let (samples, rejected) = sample_states(topo, scaled, fluid, spec, canonical, &sampling, &inside)?;
    fit_certificate(
        spec,
        scaled.n,
        canonical.name(),
        format!(
            "ball |x_hat| <= {:.4} (shell {:.4}) within |x - n x*|_1 <= {} n",
            sampling.radius, sampling.shell, region.m0
        ),
        &sampling,
        rejected,
        samples,
        hat_norm_fn(scaled, fluid),
    )
}

impl LyapunovCertificate {
    /// Recomputes every stored sample and checks it bit for bit, then
    /// re-verifies the inequality with the stored constants.
    pub fn recheck(&self, topo: &NetworkTopology, scaled: &ScaledParams, fluid: &FluidSolution, policy: &dyn Policy) -> Result<bool, VerifyError> {
        let n = scaled.n as f64;
        let center: Vec<f64> = fluid.x_star.iter().map(|&v| v * n).collect();
        let mut z = vec![0; topo.num_edges()];
        for s in &self.samples {
            policy.decide_into(&s.x, &mut z)?;
            let (generator, value) = discrete_generator(topo, scaled, &center, &self.spec, &s.x, &z);
            if generator.to_bits() != s.generator.to_bits() || value.to_bits() != s.value.to_bits() {
                return Ok(false);
            }
            if s.generator + self.c1 * s.value - self.c0 > 0.0 {
                return Ok(false);
            }
        }
        Ok(self.pass)
    }
}

/// Which cone the structural inequality singles out.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Cone {
    /// `|e.x| > delta |x|`: growth allowed there, decay required off it.
    TwoSided,
    /// `e.x > delta |x|`: growth allowed only with positive total queue.
    Positive,
}

#[derive(Debug, Clone, Serialize)]
pub struct StructuralReport {
    pub cone: Cone,
    pub kappa: f64,
    pub beta: Vec<f64>,
    pub delta: f64,
    pub radius: f64,
    pub samples: usize,
    pub c0: f64,
    /// Decay rate off the cone.
    pub decay: f64,
    /// Growth allowance on the cone.
    pub growth: f64,
    pub pass: bool,
}

/// Fits `sup_u b . grad V <= c0 - decay V 1_{off cone} + growth V 1_{cone}`
/// on states sampled uniformly in a ball. The supremum over controls is
/// attained at corner controls because `b(x, .)` is affine.
pub fn check_structural(
    model: &DiffusionModel,
    spec: &LyapunovSpec,
    cone: Cone,
    samples: usize,
    radius: f64,
    seed: u64,
) -> StructuralReport {
    let (ni, nj) = (model.num_classes(), model.num_pools());
    let corners: Vec<Control> = (0..ni)
        .flat_map(|i| (0..nj).map(move |j| Control::corner(ni, nj, i, j)))
        .collect();
    let mut rng = rng::stream(seed, 0);
    let kappa = match spec.kind {
        LyapunovKind::Polynomial { kappa } => kappa,
        LyapunovKind::Exponential { .. } => f64::NAN,
    };
    let mut points = Vec::with_capacity(samples);
    for _ in 0..samples {
        let x = ball_point(&mut rng, ni, radius);
        let grad = spec.gradient(&x);
        let sup = corners
            .iter()
            .map(|u| model.drift(&x, u).iter().zip(&grad).map(|(b, g)| b * g).sum::<f64>())
            .fold(f64::NEG_INFINITY, f64::max);
        let on_cone = match cone {
            Cone::TwoSided => spec.in_cone(&x),
            Cone::Positive => spec.in_positive_cone(&x),
        };
        points.push((euclid(&x), spec.value(&x), sup, on_cone));
    }
    // Decay is fitted away from the origin where the constant term cannot
    // absorb it.
    let shell = 0.25 * radius;
    let decay = -points
        .iter()
        .filter(|p| !p.3 && p.0 >= shell)
        .map(|p| p.2 / p.1)
        .fold(f64::NEG_INFINITY, f64::max);
    let growth = points
        .iter()
        .filter(|p| p.3)
        .map(|p| p.2 / p.1)
        .fold(0.0, f64::max);
    let c0 = points
        .iter()
        .map(|p| if p.3 { p.2 - growth * p.1 } else { p.2 + decay * p.1 })
        .fold(0.0, f64::max);
    StructuralReport {
        cone,
        kappa,
        beta: spec.beta.clone(),
        delta: spec.delta,
        radius,
        samples,
        c0,
        decay,
        growth,
        pass: decay > 0.0 && decay.is_finite(),
    }
}

/// Candidate weights: uniform, and geometric in the elimination order.
pub fn beta_family(elimination_order: &[usize]) -> Vec<Vec<f64>> {
    let ni = elimination_order.len();
    let mut out = vec![vec![1.0; ni]];
    for eta in [0.5, 0.1, 0.01] {
        let mut beta = vec![0.0; ni];
        for (rank, &i) in elimination_order.iter().enumerate() {
            beta[i] = f64::powi(eta, rank as i32);
        }
        out.push(beta);
    }
    out
}

#[derive(Debug, Clone, Serialize)]
pub struct DiffusionLyapunovFit {
    pub spec: LyapunovSpec,
    pub c0: f64,
    pub c1: f64,
    pub samples: usize,
    pub radius: f64,
    pub pass: bool,
}

/// Fits `L^v V <= c0 - c1 V` for the exponential function under a Markov
/// control on states sampled in a ball.
pub fn check_diffusion_lyapunov(
    model: &DiffusionModel,
    control: &MarkovControl,
    spec: &LyapunovSpec,
    samples: usize,
    radius: f64,
    seed: u64,
) -> DiffusionLyapunovFit {
    let mut rng = rng::stream(seed, 1);
    let mut pts = Vec::with_capacity(samples);
    for _ in 0..samples {
        let x = ball_point(&mut rng, model.num_classes(), radius);
        let u = control.eval(&x);
        let lv = model.generator_apply(spec, &x, &u);
        pts.push((euclid(&x), spec.value(&x), lv));
    }
    let shell = 0.5 * radius;
    let c1 = -pts
        .iter()
        .filter(|p| p.0 >= shell)
        .map(|p| p.2 / p.1)
        .fold(f64::NEG_INFINITY, f64::max);
    let c0 = pts.iter().map(|p| p.2 + c1 * p.1).fold(0.0, f64::max);
    DiffusionLyapunovFit {
        spec: spec.clone(),
        c0,
        c1,
        samples,
        radius,
        pass: c1 > 0.0 && c1.is_finite(),
    }
}
