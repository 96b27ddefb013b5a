//! Runtime property suites for geometry, ODE solvers and losses.
//!
//! Each suite draws randomized instances from a seeded generator, checks an
//! invariant per instance and reports the worst observed error.

use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::acquisition::{entropy, vcd, VoxelGrid};
use crate::augmentation::focal_loss;
use crate::autodiff::{gradient, Tape, Var};
use crate::distributions::{integrate, OdeSolverConfig};
use crate::geometry::{mlr_logits, Curvature, MlrHyperplane, PoincareBall, BALL_EPS};
use crate::scalar::{log_softmax, Real};

/// Suite parameters. `ball_eps` feeds the balls under test, so setting it to
/// zero is a fault injection that the boundary fuzz must catch.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SelftestOptions {
    pub seed: u64,
    pub instances: usize,
    pub ball_eps: f64,
}

impl Default for SelftestOptions {
    fn default() -> Self {
        SelftestOptions {
            seed: 0,
            instances: 1000,
            ball_eps: BALL_EPS,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CheckResult {
    pub name: String,
    pub passed: bool,
    pub worst: f64,
    pub tolerance: f64,
    pub detail: String,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SuiteReport {
    pub suite: String,
    pub checks: Vec<CheckResult>,
    pub seconds: f64,
}

impl SuiteReport {
    pub fn passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }
}

struct Collector {
    checks: Vec<CheckResult>,
}

impl Collector {
    fn new() -> Self {
        Collector { checks: Vec::new() }
    }

    /// Records `worst ≤ tolerance`; NaN counts as a failure.
    fn bound(&mut self, name: &str, worst: f64, tolerance: f64, detail: String) {
        self.checks.push(CheckResult {
            name: name.to_string(),
            passed: worst <= tolerance,
            worst,
            tolerance,
            detail,
        });
    }

    fn flag(&mut self, name: &str, ok: bool, detail: String) {
        self.checks.push(CheckResult {
            name: name.to_string(),
            passed: ok,
            worst: if ok { 0.0 } else { 1.0 },
            tolerance: 0.0,
            detail,
        });
    }
}

fn timed(name: &str, f: impl FnOnce(&mut Collector)) -> SuiteReport {
    let start = Instant::now();
    let mut col = Collector::new();
    f(&mut col);
    SuiteReport {
        suite: name.to_string(),
        checks: col.checks,
        seconds: start.elapsed().as_secs_f64(),
    }
}

fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / b.abs().max(1e-300)
}

fn norm(x: &[f64]) -> f64 {
    x.iter().map(|v| v * v).sum::<f64>().sqrt()
}

fn random_curvature(rng: &mut impl Rng) -> Curvature {
    Curvature::new(-(10f64.powf(rng.random_range(-1.0..1.0)))).expect("negative curvature")
}

fn random_direction(rng: &mut impl Rng, dim: usize) -> Vec<f64> {
    loop {
        let v: Vec<f64> = (0..dim).map(|_| rng.random_range(-1.0..1.0)).collect();
        let n = norm(&v);
        if n > 1e-3 {
            return v.into_iter().map(|x| x / n).collect();
        }
    }
}

/// Point with `√c‖x‖ = r`.
fn point_at(rng: &mut impl Rng, dim: usize, c: f64, r: f64) -> Vec<f64> {
    random_direction(rng, dim).into_iter().map(|x| x * r / c.sqrt()).collect()
}

fn interior_point(rng: &mut impl Rng, dim: usize, c: f64, max_r: f64) -> Vec<f64> {
    let r = rng.random_range(0.0..max_r);
    point_at(rng, dim, c, r)
}

/// Boundary fuzz, gyromidpoint invariances, exp/log inverse, geodesic
/// midpoint equidistance and the Euclidean limit.
pub fn geometry_suite(opts: &SelftestOptions) -> SuiteReport {
    timed("geometry", |col| {
        let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
        let n = opts.instances;
        let limit = 1.0 - BALL_EPS;

        let mut worst_excess = f64::NEG_INFINITY;
        for _ in 0..n {
            let k = random_curvature(&mut rng);
            let c = k.c();
            let ball = PoincareBall::<f64>::with_eps(k, opts.ball_eps);
            let dim = rng.random_range(2..=8);
            let near = 1.0 - 10f64.powf(rng.random_range(-12.0..-2.0));
            let x = point_at(&mut rng, dim, c, near);
            let ry = rng.random_range(0.0..1.0);
            let y = point_at(&mut rng, dim, c, ry);
            let v: Vec<f64> = random_direction(&mut rng, dim)
                .into_iter()
                .map(|t| t * rng.random_range(0.0..50.0))
                .collect();
            let mut pushed: Vec<f64> = x.iter().map(|t| t * 1.5).collect();
            ball.project(&mut pushed);
            let outputs = [
                ball.mobius_add(&x, &y),
                ball.mobius_add(&y, &x),
                ball.exp_map0(&v),
                ball.exp_map(&v, &x),
                ball.mobius_scalar_mul(rng.random_range(1.0..20.0), &x),
                pushed,
            ];
            for out in &outputs {
                let s = c * out.iter().map(|t| t * t).sum::<f64>();
                worst_excess = worst_excess.max(s - limit);
            }
        }
        col.bound(
            "ball containment under boundary fuzz",
            worst_excess,
            0.0,
            format!("max c|x|^2 - (1 - {BALL_EPS:e}) over {n} instances"),
        );

        let mut worst_perm = 0.0f64;
        let mut worst_scale = 0.0f64;
        for _ in 0..n {
            let k = random_curvature(&mut rng);
            let ball = PoincareBall::<f64>::new(k);
            let dim = rng.random_range(2..=6);
            let m = rng.random_range(2..=6);
            let pts: Vec<Vec<f64>> = (0..m).map(|_| interior_point(&mut rng, dim, k.c(), 0.9)).collect();
            let w: Vec<f64> = (0..m).map(|_| rng.random_range(0.1..2.0)).collect();
            let refs: Vec<&[f64]> = pts.iter().map(|p| p.as_slice()).collect();
            let base = ball.gyromidpoint(&refs, &w).expect("valid gyromidpoint input");

            let mut order: Vec<usize> = (0..m).collect();
            for i in (1..m).rev() {
                order.swap(i, rng.random_range(0..=i));
            }
            let prefs: Vec<&[f64]> = order.iter().map(|&i| pts[i].as_slice()).collect();
            let pw: Vec<f64> = order.iter().map(|&i| w[i]).collect();
            let permuted = ball.gyromidpoint(&prefs, &pw).expect("valid gyromidpoint input");
            worst_perm = worst_perm.max(max_abs_diff(&base, &permuted));

            let s = 10f64.powf(rng.random_range(-3.0..3.0));
            let sw: Vec<f64> = w.iter().map(|x| x * s).collect();
            let scaled = ball.gyromidpoint(&refs, &sw).expect("valid gyromidpoint input");
            worst_scale = worst_scale.max(max_abs_diff(&base, &scaled));
        }
        col.bound("gyromidpoint permutation invariance", worst_perm, 1e-9, format!("{n} instances"));
        col.bound("gyromidpoint weight-scale invariance", worst_scale, 1e-9, format!("{n} instances"));

        let mut worst_rt = 0.0f64;
        for _ in 0..n {
            let k = random_curvature(&mut rng);
            let ball = PoincareBall::<f64>::new(k);
            let dim = rng.random_range(2..=8);
            let base = interior_point(&mut rng, dim, k.c(), 0.5);
            let lam = 2.0 / (1.0 - k.c() * base.iter().map(|t| t * t).sum::<f64>());
            let reach = rng.random_range(0.0..2.0);
            let v: Vec<f64> = random_direction(&mut rng, dim)
                .into_iter()
                .map(|t| t * reach / (k.c().sqrt() * lam))
                .collect();
            let y = ball.exp_map(&v, &base);
            let back = ball.log_map(&y, &base).expect("exp output lies inside");
            worst_rt = worst_rt.max(max_abs_diff(&back, &v) / norm(&v).max(1.0));
        }
        col.bound("exp/log roundtrip", worst_rt, 1e-9, format!("{n} instances"));

        let mut worst_mid = 0.0f64;
        for _ in 0..n {
            let k = random_curvature(&mut rng);
            let ball = PoincareBall::<f64>::new(k);
            let dim = rng.random_range(2..=8);
            let a = interior_point(&mut rng, dim, k.c(), 0.9);
            let b = interior_point(&mut rng, dim, k.c(), 0.9);
            let m = ball.gyromidpoint(&[&a, &b], &[1.0, 1.0]).expect("valid gyromidpoint input");
            let da = ball.distance(&m, &a);
            let db = ball.distance(&m, &b);
            worst_mid = worst_mid.max((da - db).abs());
        }
        col.bound("two-point midpoint equidistance", worst_mid, 1e-7, format!("{n} instances"));

        let mut monotone = true;
        let mut final_err = 0.0;
        let trials = (n / 10).max(1);
        for _ in 0..trials {
            let dim = rng.random_range(2..=6);
            let m = rng.random_range(2..=5);
            let pts: Vec<Vec<f64>> = (0..m)
                .map(|_| (0..dim).map(|_| rng.random_range(-1.0..1.0)).collect())
                .collect();
            let w: Vec<f64> = (0..m).map(|_| rng.random_range(0.1..2.0)).collect();
            let wsum: f64 = w.iter().sum();
            let mean: Vec<f64> = (0..dim)
                .map(|j| pts.iter().zip(&w).map(|(p, wi)| wi * p[j]).sum::<f64>() / wsum)
                .collect();
            let refs: Vec<&[f64]> = pts.iter().map(|p| p.as_slice()).collect();
            let mut prev = f64::INFINITY;
            for kappa in [-1e-2, -1e-3, -1e-4, -1e-5] {
                let ball = PoincareBall::<f64>::new(Curvature::new(kappa).expect("negative curvature"));
                let g = ball.gyromidpoint(&refs, &w).expect("valid gyromidpoint input");
                let err = max_abs_diff(&g, &mean);
                if err > prev {
                    monotone = false;
                }
                prev = err;
            }
            final_err = f64::max(final_err, prev);
        }
        col.flag(
            "Euclidean limit monotone in |kappa|",
            monotone && final_err < 1e-3,
            format!("{trials} instances, worst error at kappa=-1e-5: {final_err:.2e}"),
        );
    })
}

fn exp_field(y: &[f64]) -> Result<Vec<f64>, crate::distributions::DistributionError> {
    Ok(y.to_vec())
}

fn solve(cfg: &OdeSolverConfig) -> f64 {
    integrate(exp_field, &[1.0], cfg).expect("solver on dy/dt = y")[0]
}

/// Convergence order of fixed Euler and RK4 on `dy/dt = y` plus the
/// adaptive tolerance target.
pub fn solver_suite(_opts: &SelftestOptions) -> SuiteReport {
    timed("solver", |col| {
        let two_steps = solve(&OdeSolverConfig::fixed_euler().with_fixed_steps(0.5, 2));
        col.bound(
            "Euler 0.5x2 on dy/dt=y gives 2.25",
            (two_steps - 2.25).abs(),
            0.0,
            format!("got {two_steps}"),
        );

        let e = 1f64.exp();
        let err = |cfg: OdeSolverConfig| (solve(&cfg) - e).abs();
        let euler = |steps: usize| err(OdeSolverConfig::fixed_euler().with_fixed_steps(1.0 / steps as f64, steps));
        let rk4 = |steps: usize| err(OdeSolverConfig::fixed_rk4(1.0 / steps as f64, steps));

        let r_euler = euler(50) / euler(100);
        col.flag(
            "fixed Euler first order",
            (1.7..=2.3).contains(&r_euler),
            format!("error ratio {r_euler:.4} for halved step, window [1.7, 2.3]"),
        );
        let r_rk4 = rk4(8) / rk4(16);
        col.flag(
            "fixed RK4 fourth order",
            (12.0..=20.0).contains(&r_rk4),
            format!("error ratio {r_rk4:.4} for halved step, window [12, 20]"),
        );
        let coarse = solve(&OdeSolverConfig::fixed_rk4(1.0, 1));
        col.bound(
            "single RK4 step h=1",
            (coarse - 65.0 / 24.0).abs(),
            1e-15,
            format!("got {coarse}"),
        );
        let adaptive = solve(&OdeSolverConfig::adaptive_rk4());
        col.bound(
            "adaptive RK4 reaches e",
            (adaptive - e).abs(),
            1e-6,
            format!("got {adaptive}"),
        );
    })
}

fn mlr_ce(ball: &PoincareBall<Var>, x: &[Var], params: &[Var], dim: usize, target: usize) -> Var {
    let planes: Vec<MlrHyperplane<Var>> = params
        .chunks(2 * dim)
        .map(|ch| MlrHyperplane::new(ch[..dim].to_vec(), ch[dim..].to_vec()))
        .collect();
    let logits = mlr_logits(ball, x, &planes).expect("valid MLR instance");
    -log_softmax(&logits)[target]
}

/// Closed-form loss values and a finite-difference check of the MLR
/// cross-entropy gradient.
pub fn loss_suite(opts: &SelftestOptions) -> SuiteReport {
    timed("loss", |col| {
        let mut rng = ChaCha8Rng::seed_from_u64(opts.seed ^ 0x5eed);

        let pt: f64 = 0.9;
        let oracle = -(1.0 - pt).powi(2) * pt.ln();
        let got = focal_loss::<f64>(&[vec![0.9, 0.1]], &[0], 2.0).expect("valid focal input");
        col.bound("focal p_t=0.9 gamma=2", rel_err(got, oracle), 1e-9, format!("got {got:.6e}"));

        let mut worst_ce = 0.0f64;
        for _ in 0..opts.instances.min(200) {
            let k = rng.random_range(2..=6);
            let raw: Vec<f64> = (0..k).map(|_| rng.random_range(0.01..1.0)).collect();
            let s: f64 = raw.iter().sum();
            let p: Vec<f64> = raw.iter().map(|v| v / s).collect();
            let t = rng.random_range(0..k);
            let got = focal_loss::<f64>(std::slice::from_ref(&p), &[t as u32], 0.0).expect("valid focal input");
            worst_ce = worst_ce.max(rel_err(got, -p[t].ln()));
        }
        col.bound("focal gamma=0 equals cross-entropy", worst_ce, 1e-12, "200 instances".into());

        let h = entropy(&[0.5, 0.5, 0.0, 0.0]).expect("valid distribution");
        col.bound("entropy (0.5,0.5,0,0)", rel_err(h, 2f64.ln()), 1e-9, format!("got {h}"));
        let h4 = entropy(&[0.25; 4]).expect("valid distribution");
        col.bound("entropy uniform 4-class", rel_err(h4, 4f64.ln()), 1e-9, format!("got {h4}"));

        let grid = VoxelGrid::build(&[[0.1, 0.1, 0.1], [0.2, 0.2, 0.2], [0.3, 0.3, 0.3], [0.4, 0.4, 0.4]], 1.0)
            .expect("valid voxel grid");
        let d = vcd(&grid, &[1, 1, 1, 2]).expect("valid labels")[0];
        let oracle = -(0.75f64 * 0.75f64.ln() + 0.25 * 0.25f64.ln());
        col.bound("VCD labels {1,1,1,2}", rel_err(d, oracle), 1e-9, format!("got {d}"));

        let mut worst_grad = 0.0f64;
        let trials = (opts.instances / 50).max(1);
        for _ in 0..trials {
            let dim = 4;
            let classes = 3;
            let kappa = random_curvature(&mut rng);
            let x0 = interior_point(&mut rng, dim, kappa.c(), 0.7);
            let mut theta = Vec::with_capacity(classes * 2 * dim);
            for _ in 0..classes {
                theta.extend(interior_point(&mut rng, dim, kappa.c(), 0.5));
                theta.extend((0..dim).map(|_| rng.random_range(-1.0..1.0)));
            }
            let target = rng.random_range(0..classes);
            let eval = |th: &[f64]| -> f64 {
                Tape::reset();
                let ball = PoincareBall::<Var>::new(kappa);
                let x: Vec<Var> = x0.iter().map(|&v| Var::lit(v)).collect();
                let p: Vec<Var> = th.iter().map(|&v| Var::lit(v)).collect();
                mlr_ce(&ball, &x, &p, dim, target).val()
            };
            Tape::reset();
            let ball = PoincareBall::<Var>::new(kappa);
            let x: Vec<Var> = x0.iter().map(|&v| Var::lit(v)).collect();
            let params = Var::params(&theta);
            let loss = mlr_ce(&ball, &x, &params, dim, target);
            let analytic = gradient(loss).wrt_all(&params);
            let step = 1e-6;
            for i in 0..theta.len() {
                let mut plus = theta.clone();
                plus[i] += step;
                let mut minus = theta.clone();
                minus[i] -= step;
                let fd = (eval(&plus) - eval(&minus)) / (2.0 * step);
                let scale = fd.abs().max(analytic[i].abs()).max(1e-3);
                worst_grad = worst_grad.max((fd - analytic[i]).abs() / scale);
            }
        }
        Tape::reset();
        col.bound(
            "MLR cross-entropy gradient vs central differences",
            worst_grad,
            1e-4,
            format!("{trials} random 3-class d=4 instances"),
        );
    })
}

pub fn run_all(opts: &SelftestOptions) -> Vec<SuiteReport> {
    vec![geometry_suite(opts), solver_suite(opts), loss_suite(opts)]
}

/// Fixed-width table of check name, status and worst error, with a timing
/// line per suite.
pub fn render_table(reports: &[SuiteReport]) -> String {
    let width = reports
        .iter()
        .flat_map(|r| r.checks.iter().map(|c| c.name.len()))
        .max()
        .unwrap_or(10)
        .max(10);
    let mut out = String::new();
    for r in reports {
        out.push_str(&format!("[{}] {:.1} ms\n", r.suite, r.seconds * 1e3));
        for c in &r.checks {
            out.push_str(&format!(
                "  {:<width$}  {}  worst={:.3e}  tol={:.1e}  {}\n",
                c.name,
                if c.passed { "PASS" } else { "FAIL" },
                c.worst,
                c.tolerance,
                c.detail,
            ));
        }
    }
    out
}
