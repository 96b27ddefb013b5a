use hyperada::distributions::{
    integrate, meta_update, wrapped_normal_sample, ClassDistribution, DistributionError, EmbeddingSplit,
    FlowNetwork, MetaConfig, OdeSolverConfig, ValidationNll,
};
use hyperada::geometry::{BallPoint, Curvature, PoincareBall};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn growth(y: &[f64]) -> Result<Vec<f64>, DistributionError> {
    Ok(y.to_vec())
}

fn solve(cfg: &OdeSolverConfig, y0: f64) -> f64 {
    integrate(growth, &[y0], cfg).unwrap()[0]
}

/// Error of the solver at `t = 1` against `y0·e`.
fn error_at(steps: usize, rk4: bool) -> f64 {
    let dt = 1.0 / steps as f64;
    let cfg = if rk4 {
        OdeSolverConfig::fixed_rk4(dt, steps)
    } else {
        OdeSolverConfig::fixed_euler().with_fixed_steps(dt, steps)
    };
    (solve(&cfg, 1.0) - 1f64.exp()).abs()
}

#[test]
fn euler_two_half_steps_is_exact() {
    assert_eq!(solve(&OdeSolverConfig::fixed_euler().with_fixed_steps(0.5, 2), 1.0), 2.25);
    assert_eq!(solve(&OdeSolverConfig::fixed_euler(), 1.0), 2.25);
}

#[test]
fn single_rk4_step_is_the_truncated_series() {
    let got = solve(&OdeSolverConfig::fixed_rk4(1.0, 1), 1.0);
    assert!((got - (1.0 + 1.0 + 0.5 + 1.0 / 6.0 + 1.0 / 24.0)).abs() < 1e-15);
}

#[test]
fn adaptive_rk4_reaches_e() {
    let got = solve(&OdeSolverConfig::adaptive_rk4(), 1.0);
    assert!((got - 1f64.exp()).abs() <= 1e-6, "{got}");
}

#[test]
fn convergence_orders() {
    for steps in [20, 40, 80, 160] {
        let r = error_at(steps, false) / error_at(2 * steps, false);
        assert!((1.7..=2.3).contains(&r), "Euler ratio {r} at {steps} steps");
    }
    for steps in [4, 8, 16, 32] {
        let r = error_at(steps, true) / error_at(2 * steps, true);
        assert!((12.0..=20.0).contains(&r), "RK4 ratio {r} at {steps} steps");
    }
}

proptest! {
    #[test]
    fn solvers_are_linear_in_the_initial_value(y0 in -5.0f64..5.0, steps in 1usize..50) {
        let dt = 1.0 / steps as f64;
        for cfg in [
            OdeSolverConfig::fixed_euler().with_fixed_steps(dt, steps),
            OdeSolverConfig::fixed_rk4(dt, steps),
        ] {
            let a = solve(&cfg, y0);
            let b = solve(&cfg, 1.0) * y0;
            prop_assert!((a - b).abs() <= 1e-12 * b.abs().max(1.0));
        }
    }
}

#[test]
fn origin_identity_samples_have_zero_tangent_mean() {
    let k = Curvature::default();
    let d = ClassDistribution::new(0, BallPoint::origin(2, k), vec![0.0, 0.0]).unwrap();
    let samples = wrapped_normal_sample(&d, 10_000, &mut ChaCha8Rng::seed_from_u64(11)).unwrap();
    let ball = PoincareBall::<f64>::new(k);
    let mut mean = [0.0; 2];
    for s in &samples {
        let v = ball.log_map0(s.coords());
        mean[0] += v[0] / samples.len() as f64;
        mean[1] += v[1] / samples.len() as f64;
    }
    assert!(mean.iter().all(|m| m.abs() < 0.05), "{mean:?}");
}

fn separable_splits(seed: u64) -> (EmbeddingSplit, EmbeddingSplit) {
    let k = Curvature::default();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let centers = [[0.5, 0.0], [-0.25, 0.43], [-0.25, -0.43]];
    let (mut train, mut val) = (EmbeddingSplit::default(), EmbeddingSplit::default());
    for (c, mu) in centers.iter().enumerate() {
        let d = ClassDistribution::new(c as u32, BallPoint::new(mu.to_vec(), k).unwrap(), vec![0.03f64.ln(); 2])
            .unwrap();
        for (i, s) in wrapped_normal_sample(&d, 30, &mut rng).unwrap().into_iter().enumerate() {
            if i % 3 == 0 {
                val.push(c as u32, s.into_coords());
            } else {
                train.push(c as u32, s.into_coords());
            }
        }
    }
    (train, val)
}

#[test]
fn meta_training_does_not_raise_validation_loss() {
    let k = Curvature::default();
    let solver = OdeSolverConfig::fixed_euler();
    let cfg = MetaConfig::default();
    let (mut before, mut after) = (0.0, 0.0);
    for seed in 0..5u64 {
        let (train, val) = separable_splits(seed);
        let mut net = FlowNetwork::init(2, 8, &mut ChaCha8Rng::seed_from_u64(100 + seed));
        let mut rng = ChaCha8Rng::seed_from_u64(200 + seed);
        let mut first = None;
        for _ in 0..50 {
            let out = meta_update(&net, &train, &val, k, &solver, &ValidationNll, &cfg, &mut rng).unwrap();
            first.get_or_insert(out.val_loss);
            net = out.network;
        }
        let last = meta_update(&net, &train, &val, k, &solver, &ValidationNll, &cfg, &mut rng).unwrap();
        before += first.unwrap() / 5.0;
        after += last.val_loss / 5.0;
    }
    assert!(after <= before, "validation loss {before} -> {after}");
}
