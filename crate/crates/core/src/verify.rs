//! Self-contained property suites, runnable outside `cargo test`.
//!
//! Nothing here touches the network or reads data files.

use std::sync::Arc;

use nalgebra::DMatrix;
use rand::Rng as _;
use rand_distr::StandardNormal;
use serde::Serialize;

use crate::autodiff::{gradient_check, ParamVector};
use crate::error::Result;
use crate::experiments::median;
use crate::losses::{record_loss, LossKind};
use crate::metrics::{h_rate, error_bound, BoundInputs};
use crate::models::{draw_noise, LinearGaussian, LinearGaussianParams, MlpArch, Propagation, StochasticMlp, StochasticModel};
use crate::neighborhoods::{build_index, InputNorm};
use crate::ode::{ground_truth_rhs, integrate_rk4};
use crate::optim::{record_predictions, AdamW};
use crate::transport::{optimal_coupling, w2sq_1d_sorted, w2sq_assignment, w2sq_bruteforce, PointCloud};
use crate::datasets::SampleSet;
use crate::{rng_from_seed, Rng};

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CheckResult {
    pub name: String,
    pub passed: bool,
    pub detail: String,
}

impl CheckResult {
    fn new(name: &str, passed: bool, detail: String) -> Self {
        CheckResult { name: name.to_string(), passed, detail }
    }

    fn from_result(name: &str, r: Result<(bool, String)>) -> Self {
        match r {
            Ok((passed, detail)) => Self::new(name, passed, detail),
            Err(e) => Self::new(name, false, format!("error: {e}")),
        }
    }
}

/// A squared-W2 solver under test.
pub type Solver<'a> = &'a dyn Fn(&PointCloud, &PointCloud) -> Result<f64>;

fn random_cloud(rng: &mut Rng, n: usize, d: usize) -> PointCloud {
    let pts = (0..n * d).map(|_| rng.sample::<f64, _>(StandardNormal)).collect();
    PointCloud::new(pts, d).expect("finite points")
}

/// `count` random instances with `n ≤ 6`, `d ≤ 4`: max |solver − brute force|.
pub fn bruteforce_agreement(solver: Solver, count: usize, seed: u64) -> Result<f64> {
    let mut rng = rng_from_seed(seed);
    let mut worst: f64 = 0.0;
    for _ in 0..count {
        let n = rng.random_range(1..=6);
        let d = rng.random_range(1..=4);
        let (a, b) = (random_cloud(&mut rng, n, d), random_cloud(&mut rng, n, d));
        worst = worst.max((solver(&a, &b)? - w2sq_bruteforce(&a, &b)?).abs());
    }
    Ok(worst)
}

/// Max |solver − sorted| over random 1D instances.
pub fn sorted_agreement(solver: Solver, count: usize, seed: u64) -> Result<f64> {
    let mut rng = rng_from_seed(seed);
    let mut worst: f64 = 0.0;
    for _ in 0..count {
        let n = rng.random_range(1..=40);
        let (a, b) = (random_cloud(&mut rng, n, 1), random_cloud(&mut rng, n, 1));
        worst = worst.max((solver(&a, &b)? - w2sq_1d_sorted(&a, &b)?).abs());
    }
    Ok(worst)
}

/// Median over seeds of the empirical W2² between `N(0,1)` and `N(1,4)`
/// samples of size `n` (closed form 2), on the 1D training path.
pub fn gaussian_closed_form(n: usize, seeds: &[u64]) -> Result<f64> {
    let mut values = Vec::with_capacity(seeds.len());
    for &s in seeds {
        let mut rng = rng_from_seed(s);
        let a: Vec<f64> = (0..n).map(|_| rng.sample(StandardNormal)).collect();
        let b: Vec<f64> = (0..n).map(|_| 1.0 + 2.0 * rng.sample::<f64, _>(StandardNormal)).collect();
        values.push(optimal_coupling(&PointCloud::scalars(&a)?, &PointCloud::scalars(&b)?)?.cost);
    }
    Ok(median(&values))
}

/// Symmetry and translation invariance of `(a - b)` costs.
fn metric_properties(solver: Solver, seed: u64) -> Result<(bool, String)> {
    let mut rng = rng_from_seed(seed);
    let mut worst: f64 = 0.0;
    for _ in 0..50 {
        let n = rng.random_range(1..=12);
        let d = rng.random_range(1..=4);
        let (a, b) = (random_cloud(&mut rng, n, d), random_cloud(&mut rng, n, d));
        let ab = solver(&a, &b)?;
        worst = worst.max((ab - solver(&b, &a)?).abs());
        let shift = rng.random_range(-3.0..3.0);
        worst = worst.max((ab - solver(&a.map(|v| v + shift)?, &b.map(|v| v + shift)?)?).abs());
        let scaled = solver(&a.map(|v| 2.0 * v)?, &b.map(|v| 2.0 * v)?)?;
        worst = worst.max((scaled - 4.0 * ab).abs() / 4.0);
    }
    Ok((worst < 1e-9, format!("max deviation {worst:.3e}")))
}

/// Transport oracle suite for an arbitrary solver.
pub fn oracle_checks_with(solver: Solver) -> Vec<CheckResult> {
    let bf = bruteforce_agreement(solver, 200, 11).map(|w| (w <= 1e-9, format!("max |Δ| {w:.3e} (tol 1e-9)")));
    let so = sorted_agreement(solver, 200, 12).map(|w| (w <= 1e-12, format!("max |Δ| {w:.3e} (tol 1e-12)")));
    let gc = gaussian_closed_form(20_000, &[1, 2, 3, 4, 5])
        .map(|m| ((m - 2.0).abs() <= 0.1, format!("median {m:.4} vs 2 (tol 5%)")));
    vec![
        CheckResult::from_result("assignment-vs-bruteforce", bf),
        CheckResult::from_result("assignment-vs-sorted-1d", so),
        CheckResult::from_result("gaussian-closed-form", gc),
        CheckResult::from_result("metric-properties", metric_properties(solver, 13)),
    ]
}

pub fn assignment_solver(a: &PointCloud, b: &PointCloud) -> Result<f64> {
    Ok(w2sq_assignment(a, b)?.cost)
}

pub fn oracle_checks() -> Vec<CheckResult> {
    oracle_checks_with(&assignment_solver)
}

/// Largest relative error over `points` random parameter draws for one
/// loss kind on a small linear model with frozen noise.
pub fn loss_gradient_check(kind: LossKind, points: usize, seed: u64) -> Result<f64> {
    let mut rng = rng_from_seed(seed);
    let n = 12;
    let xs: Vec<Vec<f64>> = (0..n).map(|_| (0..2).map(|_| rng.random_range(-1.0..1.0)).collect()).collect();
    let ys: Vec<Vec<f64>> = xs.iter().map(|x| vec![x[0] - 2.0 * x[1] + rng.sample::<f64, _>(StandardNormal)]).collect();
    let data = SampleSet::from_rows(&xs, &ys, "gradcheck")?;
    let index = build_index(&xs, &InputNorm::Homogeneous, 0.8)?;
    let truth: Arc<[f64]> = data.outputs_flat().into();
    let mut worst: f64 = 0.0;
    for _ in 0..points {
        let means = (0..3).map(|_| rng.random_range(-2.0..2.0)).collect();
        let spreads = (0..3).map(|_| rng.random_range(0.2..1.5) * if rng.random() { 1.0 } else { -1.0 }).collect();
        let model = LinearGaussian::from_params(&LinearGaussianParams::new(means, spreads)?)?;
        let noises: Vec<Vec<f64>> = (0..n).map(|_| draw_noise(&mut rng, 3)).collect();
        let program = |t: &mut crate::Tape, p: crate::Var| {
            let preds = record_predictions(&model, t, p, &data, &noises);
            record_loss(t, kind, &truth, 1, preds, Some(&index)).expect("valid loss inputs").root
        };
        let report = gradient_check(program, model.params(), 1e-5, 1e-4)?;
        worst = worst.max(report.max_rel_error);
    }
    Ok(worst)
}

/// Gradient of a local W2 loss through a small residual MLP.
fn mlp_gradient_check(seed: u64) -> Result<f64> {
    let mut rng = rng_from_seed(seed);
    let arch = MlpArch::new(vec![1, 4, 4, 1], Propagation::ResNet, true)?;
    let mut mlp = StochasticMlp::init(arch, &mut rng)?;
    mlp.params_mut().values.iter_mut().for_each(|v| *v = rng.random_range(-1.0..1.0));
    let xs: Vec<Vec<f64>> = (0..8).map(|i| vec![i as f64 / 8.0]).collect();
    let ys: Vec<Vec<f64>> = xs.iter().map(|x| vec![x[0] + rng.sample::<f64, _>(StandardNormal)]).collect();
    let data = SampleSet::from_rows(&xs, &ys, "gradcheck")?;
    let index = build_index(&xs, &InputNorm::Homogeneous, 0.3)?;
    let truth: Arc<[f64]> = data.outputs_flat().into();
    let noises: Vec<Vec<f64>> = (0..8).map(|_| draw_noise(&mut rng, mlp.noise_len())).collect();
    let program = |t: &mut crate::Tape, p: crate::Var| {
        let preds = record_predictions(&mlp, t, p, &data, &noises);
        record_loss(t, LossKind::LOCAL_W2, &truth, 1, preds, Some(&index)).expect("valid loss inputs").root
    };
    Ok(gradient_check(program, mlp.params(), 1e-6, 1e-4)?.max_rel_error)
}

pub fn gradient_checks() -> Vec<CheckResult> {
    let mut out: Vec<CheckResult> = LossKind::all()
        .into_iter()
        .map(|kind| {
            let r = loss_gradient_check(kind, 20, 21).map(|w| (w <= 1e-4, format!("max rel err {w:.3e} (tol 1e-4)")));
            CheckResult::from_result(&format!("grad-{kind}"), r)
        })
        .collect();
    let r = mlp_gradient_check(22).map(|w| (w <= 1e-4, format!("max rel err {w:.3e} (tol 1e-4)")));
    out.push(CheckResult::from_result("grad-mlp-local-w2", r));
    out
}

/// Two AdamW steps on one coordinate against the hand formula.
pub fn adamw_two_step_error() -> f64 {
    let (lr, wd) = (0.1, 0.01);
    let mut p = ParamVector::new();
    p.push_block("theta", vec![1.0], true).expect("fresh vector");
    let mut opt = AdamW::new(lr, wd, 1);
    p.gradient = vec![2.0];
    opt.step(&mut p).expect("finite");
    let theta1 = 1.0 - lr * (2.0 / (2.0 + 1e-8) + wd);
    p.gradient = vec![-1.0];
    opt.step(&mut p).expect("finite");
    let m = (0.9 * 0.1 * 2.0 - 0.1) / (1.0 - 0.81);
    let v = (0.999 * 0.001 * 4.0 + 0.001) / (1.0 - 0.999f64 * 0.999);
    let theta2 = theta1 - lr * (m / (v.sqrt() + 1e-8) + wd * theta1);
    (p.values[0] - theta2).abs()
}

/// `y(0.1)` from one RK4 step of `dy/dt = y`.
pub fn rk4_exponential_step() -> Result<f64> {
    Ok(integrate_rk4(|y| y.to_vec(), &[1.0], 0.1, 1)?[1])
}

/// Error ratio when the step halves, against the matrix exponential of the
/// `ω = 0` system over `[0, 2]`.
pub fn rk4_order_ratio(steps: usize) -> Result<f64> {
    let cols: Vec<Vec<f64>> = (0..4)
        .map(|j| {
            let mut e = vec![0.0; 4];
            e[j] = 1.0;
            ground_truth_rhs(&e, 0.0)
        })
        .collect();
    let a = DMatrix::from_fn(4, 4, |i, j| cols[j][i]);
    let y0 = nalgebra::DVector::from_element(4, 1.0);
    let exact = (a * 2.0).exp() * y0;
    let err = |m: usize| -> Result<f64> {
        let s = integrate_rk4(|y| ground_truth_rhs(y, 0.0), &[1.0; 4], 2.0 / m as f64, m)?;
        let last = &s[s.len() - 4..];
        Ok(last.iter().zip(exact.iter()).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt())
    };
    Ok(err(steps)? / err(2 * steps)?)
}

/// Monotonicity of the bound in counts, δ and L, and its hand value.
fn bound_checks() -> Result<(bool, String)> {
    let base = BoundInputs { m: 1.0, l: 1.0, c: 1.0, n_samples: 100, delta: 0.1, counts: vec![100; 4], input_dim: 3 };
    let hand = 0.4 + 8.0 * 2.0 * 100f64.powf(-0.25) * 101f64.ln().sqrt() + 0.8;
    let v0 = error_bound(&base)?;
    let mut ok = (v0 - hand).abs() < 1e-12;
    let mut more = base.clone();
    more.counts = vec![200; 4];
    ok &= error_bound(&more)? < v0;
    let mut wider = base.clone();
    wider.delta = 0.2;
    ok &= error_bound(&wider)? > v0;
    let mut steeper = base.clone();
    steeper.l = 2.0;
    ok &= error_bound(&steeper)? > v0;
    ok &= (1..200).all(|k| h_rate(k + 1, 3) < h_rate(k, 3) || k < 4);
    Ok((ok, format!("bound {v0:.6}, hand {hand:.6}")))
}

pub fn bound_checks_suite() -> Vec<CheckResult> {
    let adam = adamw_two_step_error();
    let rk = rk4_exponential_step().map(|v| ((v - 1.1051708).abs() <= 1e-6, format!("y(0.1) = {v:.10}")));
    let ratio = rk4_order_ratio(10).map(|r| ((12.0..=20.0).contains(&r), format!("ratio {r:.3} (want [12, 20])")));
    vec![
        CheckResult::new("adamw-two-step", adam <= 1e-12, format!("|Δ| {adam:.3e} (tol 1e-12)")),
        CheckResult::from_result("rk4-single-step", rk),
        CheckResult::from_result("rk4-order", ratio),
        CheckResult::from_result("bound-monotonicity", bound_checks()),
    ]
}
