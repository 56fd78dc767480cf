use qednet::diffusion::{simulate_sde, DiffusionModel, SdeConfig};
use qednet::fluid::solve_fluid;
use qednet::observables::CostSpec;
use qednet::policies::{Control, MarkovControl};
use qednet::stats::mean_ci;
use qednet::topology::{LimitParams, NetworkTopology};

/// Single class, single pool: `dX = b(X) dt + sqrt(2 lambda) dW` with
/// `b(x) = ell - mu x` below zero and `ell - gamma x` above. The stationary
/// density is `exp(U(x) / lambda)`, `U' = b`, integrated here by Simpson's rule.
#[test]
fn scalar_diffusion_matches_quadrature() {
    let (lambda, mu, gamma, ell) = (1.0, 1.0, 0.5, 0.5);
    let topo = NetworkTopology::single();
    let mut lp = LimitParams::first_order(&topo, vec![lambda], &[mu], vec![gamma], vec![1.0]);
    lp.lambda_hat = vec![ell];
    let f = solve_fluid(&topo, &lp).unwrap();
    let model = DiffusionModel::new(&topo, &lp, &f).unwrap();
    assert_eq!(model.ell(), &[ell]);

    let potential = |x: f64| if x < 0.0 { ell * x - mu * x * x / 2.0 } else { ell * x - gamma * x * x / 2.0 };
    let (lo, hi, steps) = (-20.0, 40.0, 60_000);
    let h = (hi - lo) / steps as f64;
    let (mut mass, mut pos, mut neg) = (0.0, 0.0, 0.0);
    for k in 0..=steps {
        let x = lo + k as f64 * h;
        let w = if k == 0 || k == steps { 1.0 } else if k % 2 == 1 { 4.0 } else { 2.0 };
        let p = w * (potential(x) / lambda).exp();
        mass += p;
        pos += p * x.max(0.0);
        neg += p * (-x).max(0.0);
    }
    let (exact_q, exact_y) = (pos / mass, neg / mass);

    let control = MarkovControl::Constant(Control::uniform(1, 1));
    let values = |metric: &str| -> Vec<f64> {
        (1..=4)
            .map(|seed| {
                let run = simulate_sde(&model, &control, &[0.0], &SdeConfig::new(2e4, seed), &CostSpec::unit(1, 1)).unwrap();
                run.estimate(metric).unwrap().estimate
            })
            .collect()
    };
    for (metric, exact) in [("queue_total_pos", exact_q), ("idle_cost.1", exact_y)] {
        let (mean, half) = mean_ci(&values(metric));
        assert!(
            (mean - exact).abs() <= half.max(0.02 * exact),
            "{metric}: simulated {mean:.5} +- {half:.5}, quadrature {exact:.5}"
        );
    }
}

#[test]
fn sde_runs_are_reproducible() {
    let topo = NetworkTopology::n_network();
    let lp = LimitParams::first_order(&topo, vec![1.5, 1.5], &[1.0; 3], vec![0.0, 1.0], vec![1.0, 2.0]);
    let f = solve_fluid(&topo, &lp).unwrap();
    let model = DiffusionModel::new(&topo, &lp, &f).unwrap();
    let control = MarkovControl::Constant(Control::uniform(2, 2));
    let run = |seed| {
        let r = simulate_sde(&model, &control, &[0.0, 0.0], &SdeConfig::new(500.0, seed), &CostSpec::unit(2, 2)).unwrap();
        serde_json::to_string(&r).unwrap()
    };
    assert_eq!(run(3), run(3));
    assert_ne!(run(3), run(4));
}
