use std::collections::BTreeMap;
use std::sync::{Arc, Mutex};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::Exp1;
use serde::Serialize;

use super::{Branch, Bsp, MarkovControl, Policy, PolicyError};
use crate::fluid::{FluidSolution, PsiPlan};
use crate::topology::{NetworkTopology, ScaledParams};

pub const REGION_SAMPLES: usize = 10_000;
const REGION_GRANULARITY: f64 = 1.0 / 1024.0;
const REGION_SEED: u64 = 0x6a77_6372_6567;
const INTEGRAL_TOL: f64 = 1e-9;

/// Floors all but the last entry; the last entry takes the remainder of
/// `total`.
fn round_to_total(v: &[f64], total: i64, out: &mut [i64]) {
    let d = v.len();
    let mut used = 0;
    for k in 0..d - 1 {
        out[k] = (v[k] + INTEGRAL_TOL).floor() as i64;
        used += out[k];
    }
    out[d - 1] = total - used;
}

/// The map `(v_1, ..., v_d) -> (floor v_1, ..., floor v_{d-1}, e.v - sum)`.
pub fn rounding_map(v: &[f64]) -> Result<Vec<i64>, PolicyError> {
    let total: f64 = v.iter().sum();
    let rounded = total.round();
    if (total - rounded).abs() > INTEGRAL_TOL {
        return Err(PolicyError::NonIntegralTotal(total));
    }
    let mut out = vec![0; v.len()];
    if !v.is_empty() {
        round_to_total(v, rounded as i64, &mut out);
    }
    Ok(out)
}

/// The canonical JWC policy induced by a diffusion control.
#[derive(Debug, Clone)]
pub struct CanonicalJwc {
    plan: PsiPlan,
    pool_sizes: Vec<i64>,
    center: Vec<f64>,
    sqrt_n: f64,
    control: MarkovControl,
}

impl CanonicalJwc {
    pub fn new(topo: &NetworkTopology, scaled: &ScaledParams, fluid: &FluidSolution, control: MarkovControl) -> Result<Self, PolicyError> {
        Ok(Self {
            plan: PsiPlan::new(topo)?,
            pool_sizes: scaled.pool_sizes.clone(),
            center: fluid.x_star.iter().map(|&v| v * scaled.n as f64).collect(),
            sqrt_n: scaled.sqrt_n(),
            control,
        })
    }

    /// Queue and idleness vectors the policy targets at `x`.
    pub fn split(&self, x: &[i64]) -> (Vec<i64>, Vec<i64>) {
        let ni = x.len();
        let nj = self.pool_sizes.len();
        let imbalance: i64 = x.iter().sum::<i64>() - self.pool_sizes.iter().sum::<i64>();
        let x_hat: Vec<f64> = x
            .iter()
            .zip(&self.center)
            .map(|(&v, &c)| (v as f64 - c) / self.sqrt_n)
            .collect();
        let u = self.control.eval(&x_hat);
        let mut q = vec![0; ni];
        let mut y = vec![0; nj];
        if imbalance > 0 {
            let v: Vec<f64> = u.uc.iter().map(|&p| p * imbalance as f64).collect();
            round_to_total(&v, imbalance, &mut q);
        } else if imbalance < 0 {
            let v: Vec<f64> = u.us.iter().map(|&p| p * (-imbalance) as f64).collect();
            round_to_total(&v, -imbalance, &mut y);
        }
        (q, y)
    }
}

impl Policy for CanonicalJwc {
    fn decide_into(&self, x: &[i64], z: &mut [i64]) -> Result<Branch, PolicyError> {
        let (q, y) = self.split(x);
        let alpha: Vec<i64> = x.iter().zip(&q).map(|(a, b)| a - b).collect();
        let beta: Vec<i64> = self.pool_sizes.iter().zip(&y).map(|(a, b)| a - b).collect();
        self.plan.apply_edges(&alpha, &beta, z);
        if z.iter().any(|&v| v < 0) {
            return Err(PolicyError::OutsideJwc { x: x.to_vec() });
        }
        Ok(Branch::Canonical)
    }

    fn name(&self) -> &'static str {
        "canonical"
    }

    fn num_edges(&self) -> usize {
        self.plan.num_edges()
    }
}

pub fn canonical_jwc_decide(
    topo: &NetworkTopology,
    x: &[i64],
    control: &MarkovControl,
    scaled: &ScaledParams,
    fluid: &FluidSolution,
) -> Result<Vec<i64>, PolicyError> {
    CanonicalJwc::new(topo, scaled, fluid, control.clone())?.decide(x)
}

/// The ball `||x - n x*||_1 <= m0 n` on which every queue/idleness split
/// admits a nonnegative JWC allocation.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct JwcRegion {
    pub n: u64,
    pub m0: f64,
    pub center: Vec<f64>,
    pub samples: usize,
}

/// Whether every corner split at `x` yields a nonnegative `Psi`.
fn all_splits_feasible(plan: &PsiPlan, pool_sizes: &[i64], x: &[i64], scratch: &mut [i64]) -> bool {
    let imbalance: i64 = x.iter().sum::<i64>() - pool_sizes.iter().sum::<i64>();
    if imbalance >= 0 {
        let beta = pool_sizes;
        (0..x.len()).all(|i| {
            let mut alpha = x.to_vec();
            alpha[i] -= imbalance;
            plan.apply_edges(&alpha, beta, scratch);
            scratch.iter().all(|&v| v >= 0)
        })
    } else {
        (0..pool_sizes.len()).all(|j| {
            let mut beta = pool_sizes.to_vec();
            beta[j] += imbalance;
            plan.apply_edges(x, &beta, scratch);
            scratch.iter().all(|&v| v >= 0)
        })
    }
}

/// Fixed directions in the unit l1 ball: uniform samples plus the ball's
/// vertices.
fn unit_ball_samples(dim: usize, count: usize) -> Vec<Vec<f64>> {
    let mut rng = ChaCha8Rng::seed_from_u64(REGION_SEED);
    let mut out = Vec::with_capacity(count + 2 * dim);
    for _ in 0..count {
        let draws: Vec<f64> = (0..=dim).map(|_| rng.sample::<f64, _>(Exp1)).collect();
        let total: f64 = draws.iter().sum();
        out.push(
            draws[..dim]
                .iter()
                .map(|&d| if rng.gen::<bool>() { d / total } else { -d / total })
                .collect(),
        );
    }
    for k in 0..dim {
        for sign in [1.0, -1.0] {
            let mut v = vec![0.0; dim];
            v[k] = sign;
            out.push(v);
        }
    }
    out
}

impl JwcRegion {
    pub fn contains(&self, x: &[i64]) -> bool {
        let dist: f64 = x.iter().zip(&self.center).map(|(&v, &c)| (v as f64 - c).abs()).sum();
        dist <= self.m0 * self.n as f64
    }

    /// Largest radius fraction, to granularity `2^-10`, at which every
    /// sampled nonnegative state is feasible for all splits.
    pub fn certify(topo: &NetworkTopology, scaled: &ScaledParams, fluid: &FluidSolution) -> Result<Self, PolicyError> {
        Self::certify_with(topo, scaled, fluid, REGION_SAMPLES)
    }

    pub fn certify_with(topo: &NetworkTopology, scaled: &ScaledParams, fluid: &FluidSolution, samples: usize) -> Result<Self, PolicyError> {
        let plan = PsiPlan::new(topo)?;
        let n = scaled.n as f64;
        let center: Vec<f64> = fluid.x_star.iter().map(|&v| v * n).collect();
        let dirs = unit_ball_samples(topo.num_classes, samples);
        let mut scratch = vec![0; topo.num_edges()];
        let mut ok = |m: f64| {
            dirs.iter().all(|d| {
                let x: Vec<i64> = d
                    .iter()
                    .zip(&center)
                    .map(|(&dv, &c)| (c + dv * m * n).round() as i64)
                    .collect();
                x.iter().any(|&v| v < 0) || all_splits_feasible(&plan, &scaled.pool_sizes, &x, &mut scratch)
            })
        };
        let total: f64 = fluid.x_star.iter().sum();
        let m0 = if ok(total) {
            total
        } else {
            let (mut lo, mut hi) = (0.0, total);
            while hi - lo > REGION_GRANULARITY {
                let mid = 0.5 * (lo + hi);
                if ok(mid) {
                    lo = mid;
                } else {
                    hi = mid;
                }
            }
            lo
        };
        Ok(Self {
            n: scaled.n,
            m0,
            center,
            samples: dirs.len(),
        })
    }
}

/// Certified regions per scale for one network.
#[derive(Debug, Default)]
pub struct JwcRegionCache {
    regions: Mutex<BTreeMap<u64, JwcRegion>>,
}

impl JwcRegionCache {
    pub fn get_or_certify(&self, topo: &NetworkTopology, scaled: &ScaledParams, fluid: &FluidSolution) -> Result<JwcRegion, PolicyError> {
        if let Some(r) = self.regions.lock().expect("cache lock").get(&scaled.n) {
            return Ok(r.clone());
        }
        let region = JwcRegion::certify(topo, scaled, fluid)?;
        self.regions
            .lock()
            .expect("cache lock")
            .insert(scaled.n, region.clone());
        Ok(region)
    }

    pub fn len(&self) -> usize {
        self.regions.lock().expect("cache lock").len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Canonical JWC inside the certified region, BSP outside.
#[derive(Debug, Clone)]
pub struct Concatenated {
    pub region: Arc<JwcRegion>,
    pub canonical: CanonicalJwc,
    pub bsp: Bsp,
}

impl Concatenated {
    pub fn new(region: JwcRegion, canonical: CanonicalJwc, bsp: Bsp) -> Self {
        Self {
            region: Arc::new(region),
            canonical,
            bsp,
        }
    }
}

impl Policy for Concatenated {
    fn decide_into(&self, x: &[i64], z: &mut [i64]) -> Result<Branch, PolicyError> {
        if self.region.contains(x) {
            match self.canonical.decide_into(x, z) {
                Ok(b) => return Ok(b),
                Err(PolicyError::OutsideJwc { .. }) => {
                    self.bsp.decide_into(x, z)?;
                    return Ok(Branch::Fallback);
                }
                Err(e) => return Err(e),
            }
        }
        self.bsp.decide_into(x, z)
    }

    fn name(&self) -> &'static str {
        "concatenated"
    }

    fn num_edges(&self) -> usize {
        self.bsp.num_edges()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fluid::solve_fluid;
    use crate::policies::{check_allocation, Control};
    use crate::topology::{scale_params, LimitParams};
    use proptest::prelude::*;
    use rand::Rng;

    #[test]
    fn rounding_examples() {
        assert_eq!(rounding_map(&[1.7, 2.3]).unwrap(), vec![1, 3]);
        assert_eq!(rounding_map(&[4.0, 0.0, 2.0]).unwrap(), vec![4, 0, 2]);
        assert_eq!(rounding_map(&[0.5, 0.5, 1.0]).unwrap(), vec![0, 0, 2]);
        assert!(rounding_map(&[0.5, 0.6]).is_err());
    }

    proptest! {
        #[test]
        fn rounding_preserves_total(total in 0i64..10_000, w in proptest::collection::vec(0.0f64..1.0, 1..6)) {
            let s: f64 = w.iter().sum();
            prop_assume!(s > 1e-6);
            let v: Vec<f64> = w.iter().map(|&p| p / s * total as f64).collect();
            let r = rounding_map(&v).unwrap();
            prop_assert_eq!(r.iter().sum::<i64>(), total);
            prop_assert!(r.iter().all(|&k| k >= 0));
        }
    }

    fn single(n: u64) -> (NetworkTopology, ScaledParams, FluidSolution) {
        let topo = NetworkTopology::single();
        let lp = LimitParams::first_order(&topo, vec![1.0], &[1.0], vec![1.0], vec![1.0]);
        let f = solve_fluid(&topo, &lp).unwrap();
        (topo.clone(), scale_params(&topo, &lp, n).unwrap(), f)
    }

    #[test]
    fn scalar_canonical_decision() {
        let (topo, s, f) = single(100);
        let v = MarkovControl::Constant(Control::new(vec![1.0], vec![1.0]).unwrap());
        assert_eq!(canonical_jwc_decide(&topo, &[103], &v, &s, &f).unwrap(), vec![100]);
        assert_eq!(canonical_jwc_decide(&topo, &[97], &v, &s, &f).unwrap(), vec![97]);
    }

    #[test]
    fn scalar_region_is_whole_ball() {
        // Every nonnegative state of a single pool is JWC feasible.
        let (topo, s, f) = single(100);
        let r = JwcRegion::certify(&topo, &s, &f).unwrap();
        assert_eq!(r.m0, 1.0);
        let plan = PsiPlan::new(&topo).unwrap();
        let mut scratch = [0];
        for x in 0..=200 {
            assert!(all_splits_feasible(&plan, &s.pool_sizes, &[x], &mut scratch));
        }
    }

    #[test]
    fn n_network_region_states_are_jwc() {
        let topo = NetworkTopology::n_network();
        let lp = LimitParams::first_order(&topo, vec![1.5, 1.5], &[1.0; 3], vec![0.0, 1.0], vec![1.0, 2.0]);
        let f = solve_fluid(&topo, &lp).unwrap();
        let s = scale_params(&topo, &lp, 100).unwrap();
        let r = JwcRegion::certify(&topo, &s, &f).unwrap();
        assert!(r.m0 > 0.0);
        assert!(r.contains(&[150, 150]));
        let v = MarkovControl::Constant(Control::new(vec![0.3, 0.7], vec![0.5, 0.5]).unwrap());
        let canon = CanonicalJwc::new(&topo, &s, &f, v).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut z = vec![0; 3];
        let mut seen = 0;
        while seen < 2000 {
            let x = [rng.gen_range(0..400), rng.gen_range(0..400)];
            if !r.contains(&x) {
                continue;
            }
            seen += 1;
            if canon.decide_into(&x, &mut z).is_ok() {
                check_allocation(&topo, &s.pool_sizes, &x, &z).unwrap();
                let q: i64 = crate::policies::queues(&topo, &x, &z).iter().sum();
                let y: i64 = crate::policies::idle(&topo, &s.pool_sizes, &z).iter().sum();
                assert_eq!(q.min(y), 0);
            }
        }
    }
}
