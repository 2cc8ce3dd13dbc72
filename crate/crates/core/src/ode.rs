//! Reconstruction of a 4-state linear ODE with a latent parameter.
//!
//! Truth: `dy/dt = g(y, ω)` with `ω ~ U(-σ_u, σ_u)` fixed per trajectory and
//! `y₀ ~ N(1, a² I)`. The model replaces `g` by a weight-uncertain MLP whose
//! weights are drawn once per trajectory; training unrolls fixed-step RK4 on
//! the tape and minimises the time-averaged local squared W2 distance, with
//! neighborhoods formed on initial conditions.

use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::autodiff::{value_and_grad, Tape, Var};
use crate::error::{ensure_finite, Error, Result};
use crate::losses::{local_w2_loss, record_loss, LossKind};
use crate::models::{draw_noise, symmetric_uniform, MlpArch, Propagation, SampledMlp, StochasticMlp, StochasticModel};
use crate::neighborhoods::{build_index, InputNorm, NeighborhoodIndex};
use crate::optim::{AdamW, TrainConfig, TRAIN_NOISE_STREAM};
use crate::transport::{w2sq_assignment, PointCloud};
use crate::{stream_rng, Rng};

pub const STATE_DIM: usize = 4;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OdeExperimentConfig {
    /// Final time `T`.
    pub horizon: f64,
    /// Grid size `m`; states are stored at `t_i = i T / m`, `i = 0..=m`.
    pub steps: usize,
    /// SD `a` of the initial condition around `(1,1,1,1)`.
    pub init_sd: f64,
    /// Half-width of the latent uniform law.
    pub sigma_u: f64,
    pub trajectories: usize,
}

impl Default for OdeExperimentConfig {
    fn default() -> Self {
        OdeExperimentConfig { horizon: 2.0, steps: 100, init_sd: 0.0, sigma_u: 0.25, trajectories: 100 }
    }
}

impl OdeExperimentConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.horizon > 0.0 && self.horizon.is_finite()) {
            return Err(Error::invalid(format!("horizon must be positive, got {}", self.horizon)));
        }
        if self.steps == 0 {
            return Err(Error::invalid("grid size must be at least 1"));
        }
        if !(self.init_sd >= 0.0 && self.init_sd.is_finite()) {
            return Err(Error::invalid(format!("initial-condition SD must be nonnegative, got {}", self.init_sd)));
        }
        if !(self.sigma_u >= 0.0 && self.sigma_u.is_finite()) {
            return Err(Error::invalid(format!("latent half-width must be nonnegative, got {}", self.sigma_u)));
        }
        if self.trajectories == 0 {
            return Err(Error::invalid("need at least one trajectory"));
        }
        Ok(())
    }

    pub fn dt(&self) -> f64 {
        self.horizon / self.steps as f64
    }

    pub fn times(&self) -> Vec<f64> {
        (0..=self.steps).map(|i| i as f64 * self.dt()).collect()
    }
}

/// Ground-truth right-hand side.
pub fn ground_truth_rhs(y: &[f64], omega: f64) -> Vec<f64> {
    let c = 1.0 - omega * omega;
    vec![
        (0.05 + omega) * y[0] + 0.05 * y[2] - c * y[1],
        c * y[0] + 0.05 * y[3],
        (-0.05 + omega) * y[2] - c * y[3],
        c * y[2],
    ]
}

/// `Σ c_k v_k`, summed in term order.
fn combine(terms: &[(&[f64], f64)]) -> Vec<f64> {
    let mut out = vec![0.0; terms[0].0.len()];
    for (v, c) in terms {
        out.iter_mut().zip(v.iter()).for_each(|(o, x)| *o += c * x);
    }
    out
}

/// One classical Runge–Kutta step.
pub fn rk4_step(rhs: &impl Fn(&[f64]) -> Vec<f64>, y: &[f64], h: f64) -> Vec<f64> {
    let k1 = rhs(y);
    let k2 = rhs(&combine(&[(y, 1.0), (&k1, h / 2.0)]));
    let k3 = rhs(&combine(&[(y, 1.0), (&k2, h / 2.0)]));
    let k4 = rhs(&combine(&[(y, 1.0), (&k3, h)]));
    combine(&[(y, 1.0), (&k1, h / 6.0), (&k2, h / 3.0), (&k3, h / 3.0), (&k4, h / 6.0)])
}

/// Fixed-step RK4; returns the `steps + 1` states, flattened.
pub fn integrate_rk4(rhs: impl Fn(&[f64]) -> Vec<f64>, y0: &[f64], dt: f64, steps: usize) -> Result<Vec<f64>> {
    ensure_finite(y0, "initial condition")?;
    let mut states = Vec::with_capacity((steps + 1) * y0.len());
    states.extend_from_slice(y0);
    let mut y = y0.to_vec();
    for step in 1..=steps {
        y = rk4_step(&rhs, &y, dt);
        if !y.iter().all(|v| v.is_finite()) {
            return Err(Error::BlowUp { step });
        }
        states.extend_from_slice(&y);
    }
    Ok(states)
}

#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub y0: Vec<f64>,
    /// Latent draw (`ω` for the truth; empty for model trajectories).
    pub latent: Vec<f64>,
    /// `(m + 1) x 4` states, row-major.
    pub states: Vec<f64>,
}

impl Trajectory {
    pub fn state(&self, i: usize) -> &[f64] {
        &self.states[i * STATE_DIM..(i + 1) * STATE_DIM]
    }

    pub fn num_states(&self) -> usize {
        self.states.len() / STATE_DIM
    }
}

/// Independent `(y₀, ω)` per trajectory, integrated with RK4.
pub fn simulate_dataset(cfg: &OdeExperimentConfig, rng: &mut Rng) -> Result<Vec<Trajectory>> {
    cfg.validate()?;
    (0..cfg.trajectories)
        .map(|_| {
            let y0: Vec<f64> = draw_noise(rng, STATE_DIM).iter().map(|z| 1.0 + cfg.init_sd * z).collect();
            let omega = symmetric_uniform(rng, cfg.sigma_u);
            let states = integrate_rk4(|y| ground_truth_rhs(y, omega), &y0, cfg.dt(), cfg.steps)?;
            Ok(Trajectory { y0, latent: vec![omega], states })
        })
        .collect()
}

/// States of every trajectory at grid index `i`.
pub fn slice_cloud(trajs: &[Trajectory], i: usize) -> Result<PointCloud> {
    PointCloud::new(trajs.iter().flat_map(|t| t.state(i).iter().copied()).collect(), STATE_DIM)
}

/// δ-balls on initial conditions under the Euclidean norm.
pub fn initial_condition_index(trajs: &[Trajectory], delta: f64) -> Result<NeighborhoodIndex> {
    let y0: Vec<Vec<f64>> = trajs.iter().map(|t| t.y0.clone()).collect();
    build_index(&y0, &InputNorm::Homogeneous, delta)
}

fn check_grid(truth: &[Trajectory], model: &[Trajectory]) -> Result<usize> {
    if truth.is_empty() {
        return Err(Error::Empty("trajectories"));
    }
    if truth.len() != model.len() {
        return Err(Error::SizeMismatch { left: truth.len(), right: model.len() });
    }
    let m = truth[0].num_states();
    for t in truth.iter().chain(model) {
        if t.num_states() != m {
            return Err(Error::SizeMismatch { left: m, right: t.num_states() });
        }
    }
    Ok(m)
}

/// Local squared W2 at every grid time.
pub fn per_slice_local_w2(truth: &[Trajectory], model: &[Trajectory], index: &NeighborhoodIndex) -> Result<Vec<f64>> {
    let m = check_grid(truth, model)?;
    (0..m).map(|i| Ok(local_w2_loss(&slice_cloud(truth, i)?, &slice_cloud(model, i)?, index)?.value)).collect()
}

/// Mean over grid times of the local squared W2 distance.
pub fn time_avg_local_w2(truth: &[Trajectory], model: &[Trajectory], delta: f64) -> Result<f64> {
    let index = initial_condition_index(truth, delta)?;
    let s = per_slice_local_w2(truth, model, &index)?;
    Ok(s.iter().sum::<f64>() / s.len() as f64)
}

fn trapezoid(times: &[f64], values: &[f64]) -> f64 {
    times.windows(2).zip(values.windows(2)).map(|(t, v)| 0.5 * (t[1] - t[0]) * (v[0] + v[1])).sum()
}

/// Right-hand side with latent randomness, sampled one realisation at a time.
pub trait UncertainRhs {
    type Draw;
    fn draw(&self, rng: &mut Rng) -> Self::Draw;
    fn eval(&self, draw: &Self::Draw, y: &[f64]) -> Vec<f64>;
}

pub struct TruthRhs {
    pub sigma_u: f64,
}

impl UncertainRhs for TruthRhs {
    type Draw = f64;

    fn draw(&self, rng: &mut Rng) -> f64 {
        symmetric_uniform(rng, self.sigma_u)
    }

    fn eval(&self, omega: &f64, y: &[f64]) -> Vec<f64> {
        ground_truth_rhs(y, *omega)
    }
}

pub struct NeuralRhs<'a> {
    pub mlp: &'a StochasticMlp,
}

impl UncertainRhs for NeuralRhs<'_> {
    type Draw = SampledMlp;

    fn draw(&self, rng: &mut Rng) -> SampledMlp {
        self.mlp.sample(&draw_noise(rng, self.mlp.noise_len()))
    }

    fn eval(&self, net: &SampledMlp, y: &[f64]) -> Vec<f64> {
        net.eval(y)
    }
}

/// Sampling effort for the right-hand-side error.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GSampleBudget {
    /// Latent draws per side, shared across evaluation points.
    pub draws: usize,
    /// Grid times used (evenly spaced, endpoints included).
    pub slices: usize,
    /// Truth trajectories used as evaluation points per time.
    pub trajectories: usize,
}

impl Default for GSampleBudget {
    fn default() -> Self {
        GSampleBudget { draws: 200, slices: 11, trajectories: 10 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct OdeErrors {
    pub error_in_yhat: f64,
    pub error_in_ghat: f64,
    /// `W̃²(y, ŷ)(t_i) / E‖y(t_i)‖²` at every grid time.
    pub per_slice_normalized: Vec<f64>,
}

/// Relative trajectory error and relative right-hand-side error.
pub fn ode_errors(
    truth: &[Trajectory],
    model: &[Trajectory],
    times: &[f64],
    delta0: f64,
    g_truth: &impl UncertainRhs,
    g_model: &impl UncertainRhs,
    budget: GSampleBudget,
    rng: &mut Rng,
) -> Result<OdeErrors> {
    let m = check_grid(truth, model)?;
    if times.len() != m {
        return Err(Error::SizeMismatch { left: times.len(), right: m });
    }
    let index = initial_condition_index(truth, delta0)?;
    let num = per_slice_local_w2(truth, model, &index)?;
    let zeros: Vec<Trajectory> = truth
        .iter()
        .map(|t| Trajectory { y0: t.y0.clone(), latent: Vec::new(), states: vec![0.0; t.states.len()] })
        .collect();
    let den = per_slice_local_w2(truth, &zeros, &index)?;
    let (num_int, den_int) = (trapezoid(times, &num), trapezoid(times, &den));
    if !(den_int > 0.0) {
        return Err(Error::ZeroDenominator("trajectory error"));
    }
    let per_slice_normalized = (0..m)
        .map(|i| {
            let e = truth.iter().map(|t| t.state(i).iter().map(|v| v * v).sum::<f64>()).sum::<f64>() / truth.len() as f64;
            if e > 0.0 {
                Ok(num[i] / e)
            } else {
                Err(Error::ZeroDenominator("slice second moment"))
            }
        })
        .collect::<Result<Vec<_>>>()?;

    if budget.draws == 0 || budget.slices < 2 || budget.trajectories == 0 {
        return Err(Error::invalid("g-error budget needs draws ≥ 1, slices ≥ 2, trajectories ≥ 1"));
    }
    let truth_draws: Vec<_> = (0..budget.draws).map(|_| g_truth.draw(rng)).collect();
    let model_draws: Vec<_> = (0..budget.draws).map(|_| g_model.draw(rng)).collect();
    let slices: Vec<usize> = (0..budget.slices)
        .map(|k| ((k * (m - 1)) as f64 / (budget.slices - 1) as f64).round() as usize)
        .collect::<std::collections::BTreeSet<_>>()
        .into_iter()
        .collect();
    let ntraj = budget.trajectories.min(truth.len());
    let (mut g_num, mut g_den) = (Vec::new(), Vec::new());
    for &i in &slices {
        let (mut w, mut e) = (0.0, 0.0);
        for t in &truth[..ntraj] {
            let y = t.state(i);
            let a: Vec<f64> = truth_draws.iter().flat_map(|d| g_truth.eval(d, y)).collect();
            let b: Vec<f64> = model_draws.iter().flat_map(|d| g_model.eval(d, y)).collect();
            e += a.iter().map(|v| v * v).sum::<f64>() / budget.draws as f64;
            let a = PointCloud::new(a, STATE_DIM)?;
            let b = PointCloud::new(b, STATE_DIM)?;
            w += w2sq_assignment(&a, &b)?.cost;
        }
        g_num.push(w / ntraj as f64);
        g_den.push(e / ntraj as f64);
    }
    let st: Vec<f64> = slices.iter().map(|&i| times[i]).collect();
    let g_den_int = trapezoid(&st, &g_den);
    if !(g_den_int > 0.0) {
        return Err(Error::ZeroDenominator("right-hand-side error"));
    }
    Ok(OdeErrors {
        error_in_yhat: num_int / den_int,
        error_in_ghat: trapezoid(&st, &g_num) / g_den_int,
        per_slice_normalized,
    })
}

/// `4 -> width^depth -> 4`, feed-forward, stochastic weights.
pub fn neural_rhs_arch(width: usize, depth: usize) -> Result<MlpArch> {
    MlpArch::uniform(STATE_DIM, width, depth, STATE_DIM, Propagation::FeedForward)
}

/// Model trajectories from the given initial conditions, one weight draw each.
pub fn model_trajectories(
    mlp: &StochasticMlp,
    y0s: &[Vec<f64>],
    cfg: &OdeExperimentConfig,
    rng: &mut Rng,
) -> Result<Vec<Trajectory>> {
    y0s.iter()
        .map(|y0| {
            let net = mlp.sample(&draw_noise(rng, mlp.noise_len()));
            let states = integrate_rk4(|y| net.eval(y), y0, cfg.dt(), cfg.steps)?;
            Ok(Trajectory { y0: y0.clone(), latent: Vec::new(), states })
        })
        .collect()
}

/// Records an RK4 rollout of the network on the tape; returns every state.
pub fn record_trajectory(
    mlp: &StochasticMlp,
    tape: &mut Tape,
    params: Var,
    y0: &[f64],
    noise: &[f64],
    dt: f64,
    steps: usize,
) -> Vec<Var> {
    let w = mlp.record_weights(tape, params, noise);
    let mut y = tape.constant(y0.to_vec());
    let mut states = Vec::with_capacity(steps + 1);
    states.push(y);
    for _ in 0..steps {
        let k1 = mlp.record_eval(tape, &w, y);
        let y2 = tape.lincomb(&[(y, 1.0), (k1, dt / 2.0)]);
        let k2 = mlp.record_eval(tape, &w, y2);
        let y3 = tape.lincomb(&[(y, 1.0), (k2, dt / 2.0)]);
        let k3 = mlp.record_eval(tape, &w, y3);
        let y4 = tape.lincomb(&[(y, 1.0), (k3, dt)]);
        let k4 = mlp.record_eval(tape, &w, y4);
        y = tape.lincomb(&[(y, 1.0), (k1, dt / 6.0), (k2, dt / 3.0), (k3, dt / 3.0), (k4, dt / 6.0)]);
        states.push(y);
    }
    states
}

/// Trains the neural right-hand side on `truth` by the time-averaged local
/// squared W2 loss. Returns the per-epoch loss.
pub fn train_neural_ode(
    mlp: &mut StochasticMlp,
    truth: &[Trajectory],
    cfg: &OdeExperimentConfig,
    train: &TrainConfig,
) -> Result<Vec<f64>> {
    cfg.validate()?;
    train.validate()?;
    if truth.is_empty() {
        return Err(Error::Empty("training trajectories"));
    }
    let m = cfg.steps + 1;
    if truth.iter().any(|t| t.num_states() != m) {
        return Err(Error::invalid("trajectory grid does not match the configuration"));
    }
    let index = initial_condition_index(truth, train.delta)?;
    let slices: Vec<Arc<[f64]>> = (0..m)
        .map(|i| truth.iter().flat_map(|t| t.state(i).iter().copied()).collect::<Vec<_>>().into())
        .collect();
    let mut rng = stream_rng(train.seed, TRAIN_NOISE_STREAM);
    let mut opt = AdamW::new(train.lr, train.weight_decay, mlp.params().len());
    let mut trace = Vec::with_capacity(train.epochs);
    for epoch in 0..train.epochs {
        let noises: Vec<Vec<f64>> = truth.iter().map(|_| draw_noise(&mut rng, mlp.noise_len())).collect();
        let mut params = mlp.params().clone();
        let mut failure = None;
        let model = &*mlp;
        let value = value_and_grad(&mut params, |t, p| {
            let rollouts: Vec<Vec<Var>> = truth
                .iter()
                .zip(&noises)
                .map(|(tr, noise)| record_trajectory(model, t, p, &tr.y0, noise, cfg.dt(), cfg.steps))
                .collect();
            let mut terms = Vec::with_capacity(m);
            for (i, target) in slices.iter().enumerate() {
                let parts: Vec<Var> = rollouts.iter().map(|r| r[i]).collect();
                let cloud = t.concat(&parts);
                match record_loss(t, LossKind::LOCAL_W2, target, STATE_DIM, cloud, Some(&index)) {
                    Ok(r) => terms.push((r.root, 1.0 / m as f64)),
                    Err(e) => {
                        failure = Some(e);
                        return t.constant(vec![0.0]);
                    }
                }
            }
            t.lincomb(&terms)
        });
        if let Some(e) = failure {
            return Err(e);
        }
        let value = match value {
            Ok(v) if v.is_finite() => v,
            Ok(_) | Err(Error::NonFiniteNode { .. }) | Err(Error::NonFinite(_)) => {
                return Err(Error::Diverged { epoch })
            }
            Err(e) => return Err(e),
        };
        opt.step(&mut params).map_err(|_| Error::Diverged { epoch })?;
        *mlp.params_mut() = params;
        trace.push(value);
    }
    Ok(trace)
}

/// `traj_id,t,y1,y2,y3,y4` CSV.
pub fn write_trajectories(path: &std::path::Path, trajs: &[Trajectory], times: &[f64]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["traj_id", "t", "y1", "y2", "y3", "y4"])?;
    for (k, tr) in trajs.iter().enumerate() {
        for (i, t) in times.iter().enumerate().take(tr.num_states()) {
            let mut row = vec![k.to_string(), format!("{t:.16e}")];
            row.extend(tr.state(i).iter().map(|v| format!("{v:.16e}")));
            w.write_record(&row)?;
        }
    }
    w.flush().map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng_from_seed;

    #[test]
    fn rhs_examples() {
        let g = ground_truth_rhs(&[1.0; 4], 0.0);
        let want = [-0.9, 1.05, -1.05, 1.0];
        g.iter().zip(want).for_each(|(a, b)| assert!((a - b).abs() < 1e-15, "{g:?}"));
        assert_eq!(ground_truth_rhs(&[0.0; 4], 0.3), vec![0.0; 4]);
        let y = [0.3, -1.2, 2.0, 0.7];
        let g = ground_truth_rhs(&y, 1.0);
        let want = [1.05 * y[0] + 0.05 * y[2], 0.05 * y[3], 0.95 * y[2], 0.0];
        g.iter().zip(want).for_each(|(a, b)| assert!((a - b).abs() < 1e-15));
    }

    #[test]
    fn rhs_is_linear() {
        let y = [0.3, -1.2, 2.0, 0.7];
        let a = ground_truth_rhs(&y, 0.17);
        let b = ground_truth_rhs(&y.map(|v| 2.5 * v), 0.17);
        a.iter().zip(&b).for_each(|(a, b)| assert!((2.5 * a - b).abs() < 1e-14));
    }

    #[test]
    fn rk4_single_exponential_step() {
        let s = integrate_rk4(|y| y.to_vec(), &[1.0], 0.1, 1).unwrap();
        assert!((s[1] - 1.1051708333333333).abs() < 1e-15);
        let s = integrate_rk4(|y| vec![0.0; y.len()], &[1.0, 2.0], 0.1, 5).unwrap();
        assert!(s.chunks(2).all(|c| c == [1.0, 2.0]));
    }

    #[test]
    fn rk4_reports_blow_up() {
        let r = integrate_rk4(|y| vec![y[0] * y[0] * 1e200], &[1e200], 0.1, 3);
        assert!(matches!(r, Err(Error::BlowUp { step: 1 })));
    }

    #[test]
    fn simulation_edge_cases() {
        let cfg = OdeExperimentConfig { init_sd: 0.0, sigma_u: 0.0, trajectories: 4, steps: 10, ..Default::default() };
        let trajs = simulate_dataset(&cfg, &mut rng_from_seed(1)).unwrap();
        assert!(trajs.iter().all(|t| t.y0 == vec![1.0; 4] && t.states == trajs[0].states));
        assert_eq!(trajs[0].num_states(), 11);
        let cfg = OdeExperimentConfig { steps: 0, ..Default::default() };
        assert!(simulate_dataset(&cfg, &mut rng_from_seed(1)).is_err());
    }

    #[test]
    fn latent_uniform_moments() {
        let cfg = OdeExperimentConfig { trajectories: 10_000, steps: 1, ..Default::default() };
        let trajs = simulate_dataset(&cfg, &mut rng_from_seed(2)).unwrap();
        let w: Vec<f64> = trajs.iter().map(|t| t.latent[0]).collect();
        let n = w.len() as f64;
        let mean = w.iter().sum::<f64>() / n;
        let sd = (w.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n).sqrt();
        let want_sd = 0.25 / 3f64.sqrt();
        assert!(mean.abs() < 3.0 * want_sd / n.sqrt());
        assert!((sd / want_sd - 1.0).abs() < 0.03);
    }

    #[test]
    fn time_average_hand_instance() {
        // Two trajectories, m = 1, shared initial condition: one neighborhood.
        let t = |y0: f64, y1: f64| Trajectory { y0: vec![0.0; 4], latent: vec![], states: [[y0; 4], [y1; 4]].concat() };
        let truth = vec![t(0.0, 1.0), t(0.0, 3.0)];
        let model = vec![t(0.0, 2.0), t(0.0, 0.0)];
        // Slice 0 identical; slice 1 pairs 1<->0 and 3<->2, cost 4 each.
        let v = time_avg_local_w2(&truth, &model, 0.5).unwrap();
        assert!((v - 2.0).abs() < 1e-12);
        assert_eq!(time_avg_local_w2(&truth, &truth, 0.5).unwrap(), 0.0);
    }

    #[test]
    fn error_metrics_on_exact_and_zero_models() {
        let cfg = OdeExperimentConfig { trajectories: 12, steps: 20, ..Default::default() };
        let truth = simulate_dataset(&cfg, &mut rng_from_seed(3)).unwrap();
        let rhs = TruthRhs { sigma_u: cfg.sigma_u };
        let budget = GSampleBudget { draws: 200, slices: 5, trajectories: 4 };
        let e = ode_errors(&truth, &truth, &cfg.times(), 0.1, &rhs, &rhs, budget, &mut rng_from_seed(4)).unwrap();
        assert_eq!(e.error_in_yhat, 0.0);
        assert!(e.error_in_ghat <= 0.05, "{}", e.error_in_ghat);
        let zeros: Vec<Trajectory> =
            truth.iter().map(|t| Trajectory { states: vec![0.0; t.states.len()], ..t.clone() }).collect();
        let e = ode_errors(&truth, &zeros, &cfg.times(), 0.1, &rhs, &rhs, budget, &mut rng_from_seed(4)).unwrap();
        assert!((e.error_in_yhat - 1.0).abs() < 1e-15);
    }

    #[test]
    fn taped_rollout_matches_plain_rollout() {
        let mut rng = rng_from_seed(5);
        let arch = neural_rhs_arch(8, 2).unwrap();
        let mut mlp = StochasticMlp::init(arch, &mut rng).unwrap();
        mlp.params_mut().values.iter_mut().for_each(|v| *v *= 30.0);
        let noise = draw_noise(&mut rng, mlp.noise_len());
        let y0 = [1.0, 0.9, 1.1, 1.0];
        let plain = integrate_rk4(|y| mlp.sample(&noise).eval(y), &y0, 0.02, 10).unwrap();
        let mut params = mlp.params().clone();
        let mut taped = Vec::new();
        value_and_grad(&mut params, |t, p| {
            let s = record_trajectory(&mlp, t, p, &y0, &noise, 0.02, 10);
            taped = s.iter().flat_map(|&v| t.value(v).to_vec()).collect();
            let last = *s.last().unwrap();
            t.sum(last)
        })
        .unwrap();
        for (a, b) in plain.iter().zip(&taped) {
            assert!((a - b).abs() < 1e-13, "{a} vs {b}");
        }
    }
}
