//! End-to-end pipelines behind the command-line experiments.
//!
//! Every run derives its random streams from one seed: stream 0 for data,
//! stream 1 for training noise, stream 2 for model initialisation and
//! stream 3 for evaluation.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::datasets::{
    linreg_input_laws, linreg_truth, load_csv, nonlinear_eval, nonlinear_input_laws, nonlinear_test_grid,
    psd_factor, sample_gaussian, sample_ground_truth, sample_inputs, split_and_standardize, GroundTruthSpec,
    SampleSet, Scaler, CONCRETE_INPUTS, CONCRETE_OUTPUT, NONLINEAR_COV, NONLINEAR_MEAN,
};
use crate::error::{Error, Result};
use crate::losses::{evaluate_loss, LossKind, Locality};
use crate::metrics::{conditional_moments, mean_sd_error, param_error, MomentErrorReport, Moments};
use crate::models::{draw_noise, LinearGaussian, LinearGaussianParams, MlpArch, Propagation, StochasticMlp, StochasticModel};
use crate::neighborhoods::{build_index, fit_hetero_norm, InputNorm, NeighborhoodIndex};
use crate::ode::{
    model_trajectories, neural_rhs_arch, ode_errors, simulate_dataset, train_neural_ode, GSampleBudget, NeuralRhs,
    OdeErrors, OdeExperimentConfig, Trajectory, TruthRhs,
};
use crate::optim::{sample_predictions, train, TrainConfig};
use crate::transport::PointCloud;
use crate::stream_rng;

pub const DATA_STREAM: u64 = 0;
pub const INIT_STREAM: u64 = 2;
pub const EVAL_STREAM: u64 = 3;

/// Which input norm defines neighborhoods.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum NormChoice {
    Homo,
    Hete,
}

impl std::str::FromStr for NormChoice {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "homo" => Ok(NormChoice::Homo),
            "hete" | "hetero" => Ok(NormChoice::Hete),
            _ => Err(Error::invalid(format!("unknown norm {s:?}"))),
        }
    }
}

impl NormChoice {
    pub fn resolve(self, inputs: &[Vec<f64>], outputs: &[f64]) -> Result<InputNorm> {
        match self {
            NormChoice::Homo => Ok(InputNorm::Homogeneous),
            NormChoice::Hete => fit_hetero_norm(inputs, outputs),
        }
    }
}

fn index_for(kind: LossKind, inputs: &[Vec<f64>], norm: &InputNorm, delta: f64) -> Result<Option<NeighborhoodIndex>> {
    match kind.locality {
        Locality::Local => Ok(Some(build_index(inputs, norm, delta)?)),
        Locality::Global => Ok(None),
    }
}

fn mean_count(index: Option<&NeighborhoodIndex>) -> Option<f64> {
    index.map(|ix| ix.counts().iter().sum::<usize>() as f64 / ix.num_anchors() as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinregConfig {
    pub n: usize,
    pub norm: NormChoice,
    pub train: TrainConfig,
}

impl LinregConfig {
    pub fn defaults(seed: u64) -> Self {
        LinregConfig {
            n: 1000,
            norm: NormChoice::Hete,
            train: TrainConfig {
                epochs: 1000,
                lr: 0.02,
                weight_decay: 0.005,
                delta: 0.1,
                loss: LossKind::LOCAL_W2,
                seed,
                repeats: 5,
            },
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinregResult {
    pub seed: u64,
    pub estimate: LinearGaussianParams,
    pub error_b: f64,
    pub error_sigma: f64,
    pub norm: InputNorm,
    pub mean_neighborhood_size: Option<f64>,
    pub loss_trace: Vec<f64>,
}

pub fn run_linreg(cfg: &LinregConfig, seed: u64) -> Result<LinregResult> {
    let mut tc = cfg.train.clone();
    tc.seed = seed;
    tc.validate()?;
    if cfg.n < 5 {
        return Err(Error::TooFewSamples { needed: 5, got: cfg.n });
    }
    let mut rng = stream_rng(seed, DATA_STREAM);
    let truth = linreg_truth();
    let xs = sample_inputs(&linreg_input_laws(), cfg.n, &mut rng)?;
    let data = sample_ground_truth(&GroundTruthSpec::LinearGaussian(truth.clone()), &xs, &mut rng)?;
    let norm = cfg.norm.resolve(&xs, data.scalar_outputs())?;
    let index = index_for(tc.loss, &xs, &norm, tc.delta)?;
    let mut model = LinearGaussian::init(xs[0].len())?;
    let trace = train(&mut model, &data, index.as_ref(), &tc)?;
    let estimate = model.to_params();
    let (error_b, error_sigma) = param_error(&truth, &estimate)?;
    Ok(LinregResult {
        seed,
        estimate,
        error_b,
        error_sigma,
        norm,
        mean_neighborhood_size: mean_count(index.as_ref()),
        loss_trace: trace,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NnReconConfig {
    pub n: usize,
    pub width: usize,
    pub depth: usize,
    pub resnet: bool,
    /// Samples per grid point in the test set.
    pub test_per_point: usize,
    pub train: TrainConfig,
}

impl NnReconConfig {
    pub fn defaults(seed: u64) -> Self {
        NnReconConfig {
            n: 2000,
            width: 50,
            depth: 4,
            resnet: true,
            test_per_point: 100,
            train: TrainConfig {
                epochs: 1000,
                lr: 0.025,
                weight_decay: 0.005,
                delta: 0.025,
                loss: LossKind::LOCAL_W2,
                seed,
                repeats: 5,
            },
        }
    }

    pub fn arch(&self, input: usize, output: usize) -> Result<MlpArch> {
        let prop = if self.resnet { Propagation::ResNet } else { Propagation::FeedForward };
        MlpArch::uniform(input, self.width, self.depth, output, prop)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NnReconResult {
    pub seed: u64,
    pub loss: LossKind,
    pub mean_error: f64,
    pub sd_error: f64,
    pub grid: Vec<f64>,
    pub truth_moments: Vec<Moments>,
    pub pred_moments: Vec<Moments>,
    pub mean_neighborhood_size: Option<f64>,
    pub loss_trace: Vec<f64>,
}

pub fn run_nn_recon(cfg: &NnReconConfig, seed: u64) -> Result<NnReconResult> {
    let mut tc = cfg.train.clone();
    tc.seed = seed;
    tc.validate()?;
    if cfg.test_per_point == 0 {
        return Err(Error::invalid("test set needs at least one sample per grid point"));
    }
    let mut rng = stream_rng(seed, DATA_STREAM);
    let xs = sample_inputs(&nonlinear_input_laws(), cfg.n, &mut rng)?;
    let spec = GroundTruthSpec::NonlinearExp { mean: NONLINEAR_MEAN, cov: NONLINEAR_COV };
    let data = sample_ground_truth(&spec, &xs, &mut rng)?;
    let index = index_for(tc.loss, &xs, &InputNorm::Homogeneous, tc.delta)?;
    let mut model = StochasticMlp::init(cfg.arch(1, 1)?, &mut stream_rng(seed, INIT_STREAM))?;
    let trace = train(&mut model, &data, index.as_ref(), &tc)?;

    let grid = nonlinear_test_grid();
    let factor = psd_factor(&[NONLINEAR_COV[0][0], NONLINEAR_COV[0][1], NONLINEAR_COV[1][0], NONLINEAR_COV[1][1]], 2)?;
    let mut eval = stream_rng(seed, EVAL_STREAM);
    let (mut tm, mut pm) = (Vec::new(), Vec::new());
    for &x in &grid {
        let ys: Vec<f64> = (0..cfg.test_per_point)
            .map(|_| nonlinear_eval(&sample_gaussian(&NONLINEAR_MEAN, &factor, &mut eval), x))
            .collect();
        let ps: Vec<f64> =
            (0..cfg.test_per_point).map(|_| model.predict(&[x], &draw_noise(&mut eval, model.noise_len()))[0]).collect();
        tm.push(Moments::of(&ys)?);
        pm.push(Moments::of(&ps)?);
    }
    let report = mean_sd_error(&tm, &pm)?;
    Ok(NnReconResult {
        seed,
        loss: tc.loss,
        mean_error: report.mean_error,
        sd_error: report.sd_error,
        grid,
        truth_moments: tm,
        pred_moments: pm,
        mean_neighborhood_size: mean_count(index.as_ref()),
        loss_trace: trace,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConcreteConfig {
    pub width: usize,
    pub depth: usize,
    pub resnet: bool,
    pub norm: NormChoice,
    pub delta0: f64,
    pub min_count: usize,
    pub train: TrainConfig,
}

impl ConcreteConfig {
    pub fn defaults(seed: u64) -> Self {
        ConcreteConfig {
            width: 50,
            depth: 4,
            resnet: true,
            norm: NormChoice::Homo,
            delta0: 0.2,
            min_count: 5,
            train: TrainConfig {
                epochs: 1000,
                lr: 0.02,
                weight_decay: 0.005,
                delta: 0.05,
                loss: LossKind::LOCAL_W2,
                seed,
                repeats: 5,
            },
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConcreteResult {
    pub seed: u64,
    pub n_train: usize,
    pub n_test: usize,
    pub scaler: Scaler,
    pub qualifying_anchors: usize,
    pub excluded_anchors: usize,
    pub moments: MomentErrorReport,
    pub loss_trace: Vec<f64>,
}

pub fn load_concrete(path: &Path) -> Result<SampleSet> {
    load_csv(path, &CONCRETE_INPUTS, &[CONCRETE_OUTPUT])
}

pub fn run_concrete(cfg: &ConcreteConfig, data: &SampleSet, seed: u64) -> Result<ConcreteResult> {
    let mut tc = cfg.train.clone();
    tc.seed = seed;
    tc.validate()?;
    if !(cfg.delta0 > 0.0) {
        return Err(Error::invalid(format!("evaluation radius must be positive, got {}", cfg.delta0)));
    }
    let (train_set, test_set, scaler) = split_and_standardize(data)?;
    let xs = train_set.input_rows();
    let norm = cfg.norm.resolve(&xs, train_set.scalar_outputs())?;
    let index = index_for(tc.loss, &xs, &norm, tc.delta)?;
    let prop = if cfg.resnet { Propagation::ResNet } else { Propagation::FeedForward };
    let arch = MlpArch::uniform(train_set.input_dim(), cfg.width, cfg.depth, 1, prop)?;
    let mut model = StochasticMlp::init(arch, &mut stream_rng(seed, INIT_STREAM))?;
    let trace = train(&mut model, &train_set, index.as_ref(), &tc)?;

    let test_x = test_set.input_rows();
    let test_index = build_index(&test_x, &norm, cfg.delta0)?;
    let preds = sample_predictions(&model, &test_set, &mut stream_rng(seed, EVAL_STREAM));
    let truth = conditional_moments(test_set.scalar_outputs(), &test_index, cfg.min_count)?;
    let pred = conditional_moments(&preds, &test_index, cfg.min_count)?;
    let moments = mean_sd_error(&truth.moments, &pred.moments)?;
    Ok(ConcreteResult {
        seed,
        n_train: train_set.len(),
        n_test: test_set.len(),
        scaler,
        qualifying_anchors: truth.anchors.len(),
        excluded_anchors: truth.excluded.len(),
        moments,
        loss_trace: trace,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OdeRunConfig {
    pub ode: OdeExperimentConfig,
    pub width: usize,
    pub depth: usize,
    pub delta0: f64,
    pub g_budget: GSampleBudget,
    pub train: TrainConfig,
}

impl OdeRunConfig {
    pub fn defaults(seed: u64) -> Self {
        OdeRunConfig {
            ode: OdeExperimentConfig::default(),
            width: 100,
            depth: 2,
            delta0: 0.1,
            g_budget: GSampleBudget::default(),
            train: TrainConfig {
                epochs: 500,
                lr: 0.005,
                weight_decay: 0.005,
                delta: 0.1,
                loss: LossKind::LOCAL_W2,
                seed,
                repeats: 3,
            },
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct OdeRunResult {
    pub seed: u64,
    pub errors: OdeErrors,
    pub times: Vec<f64>,
    pub loss_trace: Vec<f64>,
    #[serde(skip)]
    pub test_truth: Vec<Trajectory>,
    #[serde(skip)]
    pub test_model: Vec<Trajectory>,
}

pub fn run_ode(cfg: &OdeRunConfig, seed: u64) -> Result<OdeRunResult> {
    let mut tc = cfg.train.clone();
    tc.seed = seed;
    tc.validate()?;
    cfg.ode.validate()?;
    let mut rng = stream_rng(seed, DATA_STREAM);
    let train_trajs = simulate_dataset(&cfg.ode, &mut rng)?;
    let test_trajs = simulate_dataset(&cfg.ode, &mut rng)?;
    let mut mlp = StochasticMlp::init(neural_rhs_arch(cfg.width, cfg.depth)?, &mut stream_rng(seed, INIT_STREAM))?;
    let trace = train_neural_ode(&mut mlp, &train_trajs, &cfg.ode, &tc)?;
    let mut eval = stream_rng(seed, EVAL_STREAM);
    let y0s: Vec<Vec<f64>> = test_trajs.iter().map(|t| t.y0.clone()).collect();
    let model = model_trajectories(&mlp, &y0s, &cfg.ode, &mut eval)?;
    let times = cfg.ode.times();
    let errors = ode_errors(
        &test_trajs,
        &model,
        &times,
        cfg.delta0,
        &TruthRhs { sigma_u: cfg.ode.sigma_u },
        &NeuralRhs { mlp: &mlp },
        cfg.g_budget,
        &mut eval,
    )?;
    Ok(OdeRunResult { seed, errors, times, loss_trace: trace, test_truth: test_trajs, test_model: model })
}

/// Loss value of every kind on one fixed prediction set, for comparison.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LossBenchRow {
    pub loss: LossKind,
    pub value: f64,
    pub seconds: f64,
}

/// Evaluates every loss kind between linear-benchmark truth and a perturbed
/// model's predictions, timing each.
pub fn bench_losses(n: usize, delta: f64, seed: u64) -> Result<Vec<LossBenchRow>> {
    let mut rng = stream_rng(seed, DATA_STREAM);
    let xs = sample_inputs(&linreg_input_laws(), n, &mut rng)?;
    let data = sample_ground_truth(&GroundTruthSpec::LinearGaussian(linreg_truth()), &xs, &mut rng)?;
    let model = LinearGaussian::init(3)?;
    let preds = sample_predictions(&model, &data, &mut rng);
    let truth = data.output_cloud()?;
    let preds = PointCloud::new(preds, 1)?;
    let norm = NormChoice::Hete.resolve(&xs, data.scalar_outputs())?;
    let index = build_index(&xs, &norm, delta)?;
    LossKind::all()
        .into_iter()
        .map(|kind| {
            let start = std::time::Instant::now();
            let ix = (kind.locality == Locality::Local).then_some(&index);
            let r = evaluate_loss(kind, &truth, &preds, ix)?;
            Ok(LossBenchRow { loss: kind, value: r.value, seconds: start.elapsed().as_secs_f64() })
        })
        .collect()
}

/// Seeds `base, base+1, ...`.
pub fn seeds(base: u64, repeats: usize) -> Vec<u64> {
    (0..repeats as u64).map(|k| base + k).collect()
}

/// Median of a non-empty slice.
pub fn median(values: &[f64]) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn median_values() {
        assert_eq!(median(&[3.0, 1.0, 2.0]), 2.0);
        assert_eq!(median(&[4.0, 1.0, 2.0, 3.0]), 2.5);
    }

    #[test]
    fn short_linreg_run_is_deterministic() {
        let mut cfg = LinregConfig::defaults(1);
        cfg.n = 200;
        cfg.train.epochs = 20;
        let a = run_linreg(&cfg, 4).unwrap();
        let b = run_linreg(&cfg, 4).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.loss_trace.len(), 20);
        let c = run_linreg(&cfg, 5).unwrap();
        assert_ne!(a.loss_trace, c.loss_trace);
    }

    #[test]
    fn short_nn_run() {
        let mut cfg = NnReconConfig::defaults(1);
        cfg.n = 100;
        cfg.width = 8;
        cfg.depth = 2;
        cfg.test_per_point = 10;
        cfg.train.epochs = 3;
        cfg.train.delta = 0.05;
        let r = run_nn_recon(&cfg, 1).unwrap();
        assert_eq!(r.grid.len(), 11);
        assert!(r.mean_error.is_finite() && r.sd_error.is_finite());
    }

    #[test]
    fn loss_bench_covers_every_kind() {
        let rows = bench_losses(100, 0.2, 1).unwrap();
        assert_eq!(rows.len(), 8);
        assert!(rows.iter().all(|r| r.value.is_finite() && r.value >= 0.0));
    }
}
