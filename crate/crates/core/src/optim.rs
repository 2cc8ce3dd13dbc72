//! AdamW and the full-batch training loop.

use std::io::Write as _;
use std::path::Path;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::autodiff::{value_and_grad, ParamVector, Tape, Var};
use crate::datasets::SampleSet;
use crate::error::{ensure_finite, Error, Result};
use crate::losses::{record_loss, LossKind, Locality};
use crate::models::{draw_noise, StochasticModel};
use crate::neighborhoods::NeighborhoodIndex;
use crate::{stream_rng, Rng};

pub const BETA1: f64 = 0.9;
pub const BETA2: f64 = 0.999;
pub const EPSILON: f64 = 1e-8;

/// Adam with decoupled weight decay.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamW {
    pub lr: f64,
    pub weight_decay: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    t: u64,
    m: Vec<f64>,
    v: Vec<f64>,
}

impl AdamW {
    pub fn new(lr: f64, weight_decay: f64, len: usize) -> Self {
        AdamW { lr, weight_decay, beta1: BETA1, beta2: BETA2, eps: EPSILON, t: 0, m: vec![0.0; len], v: vec![0.0; len] }
    }

    pub fn steps_taken(&self) -> u64 {
        self.t
    }

    /// One update from `params.gradient`. Frozen blocks are left untouched.
    pub fn step(&mut self, params: &mut ParamVector) -> Result<()> {
        if params.gradient.len() != params.values.len() || self.m.len() != params.values.len() {
            return Err(Error::SizeMismatch { left: self.m.len(), right: params.gradient.len() });
        }
        ensure_finite(&params.gradient, "gradient")?;
        self.t += 1;
        let t = self.t as i32;
        let (c1, c2) = (1.0 - self.beta1.powi(t), 1.0 - self.beta2.powi(t));
        let mask = params.trainable_mask();
        for (k, &on) in mask.iter().enumerate() {
            if !on {
                continue;
            }
            let g = params.gradient[k];
            self.m[k] = self.beta1 * self.m[k] + (1.0 - self.beta1) * g;
            self.v[k] = self.beta2 * self.v[k] + (1.0 - self.beta2) * g * g;
            let (mh, vh) = (self.m[k] / c1, self.v[k] / c2);
            let theta = params.values[k];
            params.values[k] = theta - self.lr * (mh / (vh.sqrt() + self.eps) + self.weight_decay * theta);
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs: usize,
    pub lr: f64,
    pub weight_decay: f64,
    pub delta: f64,
    pub loss: LossKind,
    pub seed: u64,
    pub repeats: usize,
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(Error::invalid(format!("learning rate must be positive, got {}", self.lr)));
        }
        if !(self.weight_decay >= 0.0 && self.weight_decay.is_finite()) {
            return Err(Error::invalid(format!("weight decay must be nonnegative, got {}", self.weight_decay)));
        }
        if !(self.delta > 0.0) {
            return Err(Error::invalid(format!("neighborhood radius must be positive, got {}", self.delta)));
        }
        if self.repeats == 0 {
            return Err(Error::invalid("repeats must be at least 1"));
        }
        Ok(())
    }
}

/// Stream used for per-epoch noise, separate from initialisation.
pub const TRAIN_NOISE_STREAM: u64 = 1;

/// Records one prediction per sample and concatenates them.
pub fn record_predictions<M: StochasticModel + ?Sized>(
    model: &M,
    tape: &mut Tape,
    params: Var,
    data: &SampleSet,
    noises: &[Vec<f64>],
) -> Var {
    let parts: Vec<Var> = (0..data.len()).map(|i| model.record(tape, params, data.input(i), &noises[i])).collect();
    tape.concat(&parts)
}

/// Predictions with fresh noise per sample.
pub fn sample_predictions<M: StochasticModel + ?Sized>(model: &M, data: &SampleSet, rng: &mut Rng) -> Vec<f64> {
    (0..data.len())
        .flat_map(|i| {
            let noise = draw_noise(rng, model.noise_len());
            model.predict(data.input(i), &noise)
        })
        .collect()
}

/// Full-batch training. Returns the loss recorded at each epoch before
/// that epoch's update.
pub fn train<M: StochasticModel + ?Sized>(
    model: &mut M,
    data: &SampleSet,
    index: Option<&NeighborhoodIndex>,
    config: &TrainConfig,
) -> Result<Vec<f64>> {
    config.validate()?;
    if data.input_dim() != model.input_dim() {
        return Err(Error::DimensionMismatch { expected: model.input_dim(), got: data.input_dim() });
    }
    if data.output_dim() != model.output_dim() {
        return Err(Error::DimensionMismatch { expected: model.output_dim(), got: data.output_dim() });
    }
    if config.loss.locality == Locality::Local && index.is_none() {
        return Err(Error::invalid(format!("{} needs a neighborhood index", config.loss)));
    }
    let truth: Arc<[f64]> = data.outputs_flat().into();
    let dim = data.output_dim();
    let mut rng = stream_rng(config.seed, TRAIN_NOISE_STREAM);
    let mut opt = AdamW::new(config.lr, config.weight_decay, model.params().len());
    let mut trace = Vec::with_capacity(config.epochs);
    for epoch in 0..config.epochs {
        let noises: Vec<Vec<f64>> = (0..data.len()).map(|_| draw_noise(&mut rng, model.noise_len())).collect();
        let mut params = model.params().clone();
        let mut failure = None;
        let value = value_and_grad(&mut params, |t, p| {
            let preds = record_predictions(&*model, t, p, data, &noises);
            match record_loss(t, config.loss, &truth, dim, preds, index) {
                Ok(r) => r.root,
                Err(e) => {
                    failure = Some(e);
                    t.constant(vec![0.0])
                }
            }
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
        if !params.values.iter().all(|v| v.is_finite()) {
            return Err(Error::Diverged { epoch });
        }
        *model.params_mut() = params;
        trace.push(value);
    }
    Ok(trace)
}

/// `epoch,loss` CSV.
pub fn write_trace(path: &Path, trace: &[f64]) -> Result<()> {
    let mut f = std::io::BufWriter::new(std::fs::File::create(path).map_err(|e| Error::io(path, e))?);
    let mut body = String::from("epoch,loss\n");
    for (e, v) in trace.iter().enumerate() {
        body.push_str(&format!("{e},{v:.16e}\n"));
    }
    f.write_all(body.as_bytes()).and_then(|_| f.flush()).map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::losses::LossFamily;
    use crate::models::{LinearGaussian, LinearGaussianParams};

    fn single(value: f64, grad: f64) -> ParamVector {
        let mut p = ParamVector::new();
        p.push_block("theta", vec![value], true).unwrap();
        p.gradient = vec![grad];
        p
    }

    #[test]
    fn zero_gradient_without_decay_is_a_no_op() {
        let mut p = single(0.7, 0.0);
        let mut opt = AdamW::new(0.1, 0.0, 1);
        opt.step(&mut p).unwrap();
        assert_eq!(p.values, vec![0.7]);
    }

    #[test]
    fn first_step_and_decay_alone() {
        let mut p = single(0.0, 1.0);
        AdamW::new(0.1, 0.0, 1).step(&mut p).unwrap();
        assert!((p.values[0] + 0.1 / (1.0 + 1e-8)).abs() < 1e-15);
        let mut p = single(1.0, 0.0);
        AdamW::new(0.02, 0.005, 1).step(&mut p).unwrap();
        assert!((p.values[0] - 0.9999).abs() < 1e-15);
    }

    #[test]
    fn two_step_hand_trajectory() {
        // θ0 = 1, lr = 0.1, wd = 0.01, g1 = 2, g2 = -1.
        let (lr, wd) = (0.1, 0.01);
        let mut p = single(1.0, 2.0);
        let mut opt = AdamW::new(lr, wd, 1);
        opt.step(&mut p).unwrap();
        let theta1 = 1.0 - lr * (2.0 / (2.0 + 1e-8) + wd * 1.0);
        assert!((p.values[0] - theta1).abs() < 1e-12);
        p.gradient = vec![-1.0];
        opt.step(&mut p).unwrap();
        let m = (0.9 * 0.1 * 2.0 - 0.1) / (1.0 - 0.81);
        let v = (0.999 * 0.001 * 4.0 + 0.001 * 1.0) / (1.0 - 0.999f64.powi(2));
        let theta2 = theta1 - lr * (m / (v.sqrt() + 1e-8) + wd * theta1);
        assert!((p.values[0] - theta2).abs() < 1e-12);
    }

    #[test]
    fn frozen_blocks_do_not_move() {
        let mut p = ParamVector::new();
        p.push_block("a", vec![1.0], true).unwrap();
        p.push_block("b", vec![1.0], false).unwrap();
        p.gradient = vec![1.0, 1.0];
        AdamW::new(0.1, 0.1, 2).step(&mut p).unwrap();
        assert_eq!(p.values[1], 1.0);
        assert!(p.values[0] < 1.0);
    }

    #[test]
    fn rejects_non_finite_gradient() {
        let mut p = single(1.0, f64::NAN);
        assert!(AdamW::new(0.1, 0.0, 1).step(&mut p).is_err());
    }

    fn toy() -> (SampleSet, TrainConfig) {
        let data = SampleSet::from_rows(&[vec![0.0], vec![1.0], vec![2.0]], &[vec![1.0], vec![2.0], vec![4.0]], "toy")
            .unwrap();
        let cfg = TrainConfig {
            epochs: 1000,
            lr: 0.05,
            weight_decay: 0.0,
            delta: 1.0,
            loss: LossKind::new(LossFamily::Mse, Locality::Global),
            seed: 3,
            repeats: 1,
        };
        (data, cfg)
    }

    #[test]
    fn deterministic_toy_reaches_least_squares() {
        let (data, cfg) = toy();
        let mut m =
            LinearGaussian::from_params(&LinearGaussianParams::new(vec![0.0, 0.0], vec![0.0, 0.0]).unwrap()).unwrap();
        m.params_mut().set_trainable("spread", false);
        train(&mut m, &data, None, &cfg).unwrap();
        // OLS through (0,1), (1,2), (2,4): slope 1.5, intercept 5/6.
        let p = m.to_params();
        assert!((p.means[1] - 1.5).abs() < 1e-3, "{:?}", p.means);
        assert!((p.means[0] - 5.0 / 6.0).abs() < 1e-3, "{:?}", p.means);
    }

    #[test]
    fn zero_epochs_and_determinism() {
        let (data, mut cfg) = toy();
        cfg.epochs = 0;
        let mut m = LinearGaussian::init(1).unwrap();
        let before = m.params().clone();
        assert!(train(&mut m, &data, None, &cfg).unwrap().is_empty());
        assert_eq!(m.params().values, before.values);

        cfg.epochs = 20;
        cfg.loss = LossKind::new(LossFamily::W2, Locality::Global);
        let mut a = LinearGaussian::init(1).unwrap();
        let mut b = LinearGaussian::init(1).unwrap();
        let ta = train(&mut a, &data, None, &cfg).unwrap();
        let tb = train(&mut b, &data, None, &cfg).unwrap();
        assert_eq!(ta.iter().map(|v| v.to_bits()).collect::<Vec<_>>(), tb.iter().map(|v| v.to_bits()).collect::<Vec<_>>());
    }

    #[test]
    fn config_validation() {
        let (_, mut cfg) = toy();
        cfg.delta = 0.0;
        assert!(cfg.validate().is_err());
        let (_, mut cfg) = toy();
        cfg.lr = -1.0;
        assert!(cfg.validate().is_err());
        let (_, mut cfg) = toy();
        cfg.repeats = 0;
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn trace_file_format() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("trace.csv");
        write_trace(&path, &[1.5, 0.25]).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines[0], "epoch,loss");
        assert_eq!(lines.len(), 3);
        assert!(lines[2].starts_with("1,2.5"));
    }
}
