//! Stochastic forward models `ŷ = f̂(x, ω̂)`.
//!
//! Randomness enters through frozen standard-normal draws: a stochastic
//! weight with mean `a` and raw spread `σ` is realised as `a + |σ|·ε`.

use rand::Rng as _;
use rand_distr::{Distribution, Normal, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::autodiff::{ParamVector, Tape, Var};
use crate::error::{ensure_finite, Error, Result};
use crate::Rng;

/// Standard deviation of the `N(0, 1e-4)` network initialisation.
pub const MLP_INIT_SD: f64 = 1e-2;

/// A model whose predictions depend on frozen noise.
pub trait StochasticModel {
    fn params(&self) -> &ParamVector;
    fn params_mut(&mut self) -> &mut ParamVector;
    fn input_dim(&self) -> usize;
    fn output_dim(&self) -> usize;
    /// Standard-normal deviates consumed by one prediction.
    fn noise_len(&self) -> usize;
    /// Prediction using the model's current parameters.
    fn predict(&self, x: &[f64], noise: &[f64]) -> Vec<f64>;
    /// Records one prediction on `tape`, reading parameters from `params`.
    fn record(&self, tape: &mut Tape, params: Var, x: &[f64], noise: &[f64]) -> Var;
}

/// Draws `count` standard-normal deviates.
pub fn draw_noise(rng: &mut Rng, count: usize) -> Vec<f64> {
    (0..count).map(|_| rng.sample::<f64, _>(StandardNormal)).collect()
}

/// Means and raw spreads of `ω_i ~ N(b_i, σ_i²)`; index 0 is the intercept.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinearGaussianParams {
    pub means: Vec<f64>,
    pub spreads: Vec<f64>,
}

impl LinearGaussianParams {
    pub fn new(means: Vec<f64>, spreads: Vec<f64>) -> Result<Self> {
        if means.len() != spreads.len() {
            return Err(Error::SizeMismatch { left: means.len(), right: spreads.len() });
        }
        if means.len() < 2 {
            return Err(Error::invalid("linear model needs an intercept and at least one slope"));
        }
        ensure_finite(&means, "linear means")?;
        ensure_finite(&spreads, "linear spreads")?;
        Ok(Self { means, spreads })
    }

    /// Input dimension `n`.
    pub fn input_dim(&self) -> usize {
        self.means.len() - 1
    }

    /// Conditional mean `Σ b_i x_i + b_0`.
    pub fn mean_at(&self, x: &[f64]) -> f64 {
        self.means[0] + x.iter().zip(&self.means[1..]).map(|(x, b)| x * b).sum::<f64>()
    }

    /// Conditional standard deviation `sqrt(Σ σ_i² x_i² + σ_0²)`.
    pub fn sd_at(&self, x: &[f64]) -> f64 {
        let v: f64 = self.spreads[0].powi(2)
            + x.iter().zip(&self.spreads[1..]).map(|(x, s)| (x * s).powi(2)).sum::<f64>();
        v.sqrt()
    }
}

/// `Σ (b_i + |σ_i| ε_i) x_i + (b_0 + |σ_0| ε_0)`.
pub fn linear_predict(params: &LinearGaussianParams, x: &[f64], noise: &[f64]) -> Result<f64> {
    let n = params.input_dim();
    if x.len() != n {
        return Err(Error::DimensionMismatch { expected: n, got: x.len() });
    }
    if noise.len() != n + 1 {
        return Err(Error::DimensionMismatch { expected: n + 1, got: noise.len() });
    }
    Ok(linear_eval(&params.means, &params.spreads, x, noise))
}

fn linear_eval(means: &[f64], spreads: &[f64], x: &[f64], noise: &[f64]) -> f64 {
    let coef = |i: usize| means[i] + spreads[i].abs() * noise[i];
    std::iter::once(1.0).chain(x.iter().copied()).enumerate().map(|(i, x)| coef(i) * x).sum()
}

/// Trainable linear model with Gaussian coefficients.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearGaussian {
    n: usize,
    params: ParamVector,
}

impl LinearGaussian {
    pub fn from_params(p: &LinearGaussianParams) -> Result<Self> {
        let p = LinearGaussianParams::new(p.means.clone(), p.spreads.clone())?;
        let mut params = ParamVector::new();
        params.push_block("mean", p.means.clone(), true)?;
        params.push_block("spread", p.spreads, true)?;
        Ok(Self { n: p.means.len() - 1, params })
    }

    /// Every mean and spread set to 1.
    pub fn init(n: usize) -> Result<Self> {
        Self::from_params(&LinearGaussianParams { means: vec![1.0; n + 1], spreads: vec![1.0; n + 1] })
    }

    pub fn to_params(&self) -> LinearGaussianParams {
        LinearGaussianParams {
            means: self.params.block_values("mean").expect("mean block").to_vec(),
            spreads: self.params.block_values("spread").expect("spread block").to_vec(),
        }
    }
}

impl StochasticModel for LinearGaussian {
    fn params(&self) -> &ParamVector {
        &self.params
    }

    fn params_mut(&mut self) -> &mut ParamVector {
        &mut self.params
    }

    fn input_dim(&self) -> usize {
        self.n
    }

    fn output_dim(&self) -> usize {
        1
    }

    fn noise_len(&self) -> usize {
        self.n + 1
    }

    fn predict(&self, x: &[f64], noise: &[f64]) -> Vec<f64> {
        let k = self.n + 1;
        let v = &self.params.values;
        vec![linear_eval(&v[..k], &v[k..2 * k], x, noise)]
    }

    fn record(&self, tape: &mut Tape, params: Var, x: &[f64], noise: &[f64]) -> Var {
        let k = self.n + 1;
        let mean = tape.slice(params, 0, k);
        let spread = tape.slice(params, k, k);
        let coef = tape.reparam(mean, spread, noise);
        let mut augmented = Vec::with_capacity(k);
        augmented.push(1.0);
        augmented.extend_from_slice(x);
        let xa = tape.constant(augmented);
        tape.dot(coef, xa)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Propagation {
    #[serde(rename = "feed-forward")]
    FeedForward,
    ResNet,
}

/// Layer widths and propagation mode of a weight-uncertain MLP.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MlpArch {
    /// `[input, hidden..., output]`.
    pub widths: Vec<usize>,
    pub propagation: Propagation,
    /// When false every spread is pinned at zero.
    pub stochastic: bool,
}

impl MlpArch {
    pub fn new(widths: Vec<usize>, propagation: Propagation, stochastic: bool) -> Result<Self> {
        if widths.len() < 2 {
            return Err(Error::invalid("network needs at least an input and an output layer"));
        }
        if widths.contains(&0) {
            return Err(Error::invalid("layer widths must be positive"));
        }
        let hidden = &widths[1..widths.len() - 1];
        if propagation == Propagation::ResNet && hidden.windows(2).any(|w| w[0] != w[1]) {
            return Err(Error::invalid("residual propagation needs equal hidden widths"));
        }
        Ok(Self { widths, propagation, stochastic })
    }

    /// `input -> depth x width -> output`.
    pub fn uniform(input: usize, width: usize, depth: usize, output: usize, propagation: Propagation) -> Result<Self> {
        let mut widths = vec![input];
        widths.extend(std::iter::repeat_n(width, depth));
        widths.push(output);
        Self::new(widths, propagation, true)
    }

    pub fn num_layers(&self) -> usize {
        self.widths.len() - 1
    }

    /// `(rows, cols)` of layer `l`.
    pub fn layer_shape(&self, l: usize) -> (usize, usize) {
        (self.widths[l + 1], self.widths[l])
    }

    pub fn num_weights(&self) -> usize {
        (0..self.num_layers()).map(|l| self.widths[l] * self.widths[l + 1]).sum()
    }

    fn skips(&self, l: usize) -> bool {
        self.propagation == Propagation::ResNet && l >= 1 && l + 1 < self.num_layers()
    }
}

/// Weight-uncertain MLP: `w ~ N(a, σ²)` per weight, deterministic biases,
/// ReLU between hidden layers and a linear output layer.
#[derive(Debug, Clone, PartialEq)]
pub struct StochasticMlp {
    arch: MlpArch,
    params: ParamVector,
    layout: Vec<LayerLayout>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
struct LayerLayout {
    mean: usize,
    spread: usize,
    bias: usize,
    noise: usize,
}

impl StochasticMlp {
    /// Every mean, spread and bias drawn i.i.d. from `N(0, 1e-4)`.
    pub fn init(arch: MlpArch, rng: &mut Rng) -> Result<Self> {
        let normal = Normal::new(0.0, MLP_INIT_SD).expect("valid sd");
        Self::build(arch, |_, len| (0..len).map(|_| normal.sample(rng)).collect())
    }

    /// All parameters zero.
    pub fn zeros(arch: MlpArch) -> Result<Self> {
        Self::build(arch, |_, len| vec![0.0; len])
    }

    fn build(arch: MlpArch, mut fill: impl FnMut(&str, usize) -> Vec<f64>) -> Result<Self> {
        let arch = MlpArch::new(arch.widths, arch.propagation, arch.stochastic)?;
        let mut params = ParamVector::new();
        let mut layout = Vec::new();
        let mut noise = 0;
        for l in 0..arch.num_layers() {
            let (rows, cols) = arch.layer_shape(l);
            let mean = params.push_block(&format!("l{l}.mean"), fill("mean", rows * cols), true)?;
            let spread_values = if arch.stochastic { fill("spread", rows * cols) } else { vec![0.0; rows * cols] };
            let spread = params.push_block(&format!("l{l}.spread"), spread_values, arch.stochastic)?;
            let bias = params.push_block(&format!("l{l}.bias"), fill("bias", rows), true)?;
            layout.push(LayerLayout { mean, spread, bias, noise });
            noise += rows * cols;
        }
        Ok(Self { arch, params, layout })
    }

    pub fn arch(&self) -> &MlpArch {
        &self.arch
    }

    /// Realises every weight from one noise draw.
    pub fn sample(&self, noise: &[f64]) -> SampledMlp {
        self.sample_with(&self.params.values, noise)
    }

    fn sample_with(&self, values: &[f64], noise: &[f64]) -> SampledMlp {
        let mut weights = Vec::with_capacity(self.layout.len());
        let mut biases = Vec::with_capacity(self.layout.len());
        for (l, lay) in self.layout.iter().enumerate() {
            let (rows, cols) = self.arch.layer_shape(l);
            let len = rows * cols;
            let mean = &values[lay.mean..lay.mean + len];
            let spread = &values[lay.spread..lay.spread + len];
            let eps = &noise[lay.noise..lay.noise + len];
            let w: Vec<f64> = if self.arch.stochastic {
                mean.iter().zip(spread).zip(eps).map(|((m, s), e)| m + s.abs() * e).collect()
            } else {
                mean.to_vec()
            };
            weights.push(w);
            biases.push(values[lay.bias..lay.bias + rows].to_vec());
        }
        SampledMlp { arch: self.arch.clone(), weights, biases }
    }

    /// Records weight realisations for one noise draw; reuse them for
    /// several evaluations with [`StochasticMlp::record_eval`].
    pub fn record_weights(&self, tape: &mut Tape, params: Var, noise: &[f64]) -> RecordedWeights {
        let mut weights = Vec::with_capacity(self.layout.len());
        let mut biases = Vec::with_capacity(self.layout.len());
        for (l, lay) in self.layout.iter().enumerate() {
            let (rows, cols) = self.arch.layer_shape(l);
            let len = rows * cols;
            let mean = tape.slice(params, lay.mean, len);
            let w = if self.arch.stochastic {
                let spread = tape.slice(params, lay.spread, len);
                tape.reparam(mean, spread, &noise[lay.noise..lay.noise + len])
            } else {
                mean
            };
            weights.push(w);
            biases.push(tape.slice(params, lay.bias, rows));
        }
        RecordedWeights { weights, biases }
    }

    pub fn record_eval(&self, tape: &mut Tape, w: &RecordedWeights, x: Var) -> Var {
        let mut h = x;
        let last = self.arch.num_layers() - 1;
        for l in 0..=last {
            let (rows, cols) = self.arch.layer_shape(l);
            let z = tape.matvec(w.weights[l], h, rows, cols);
            let z = tape.add(z, w.biases[l]);
            if l == last {
                return z;
            }
            let a = tape.relu(z);
            h = if self.arch.skips(l) { tape.add(a, h) } else { a };
        }
        unreachable!("loop returns at the output layer")
    }
}

/// Tape handles of one realised set of weights.
#[derive(Debug, Clone)]
pub struct RecordedWeights {
    weights: Vec<Var>,
    biases: Vec<Var>,
}

/// A deterministic network obtained by fixing every stochastic weight.
#[derive(Debug, Clone, PartialEq)]
pub struct SampledMlp {
    arch: MlpArch,
    weights: Vec<Vec<f64>>,
    biases: Vec<Vec<f64>>,
}

impl SampledMlp {
    pub fn eval(&self, x: &[f64]) -> Vec<f64> {
        let mut h = x.to_vec();
        let last = self.arch.num_layers() - 1;
        for l in 0..=last {
            let (_, cols) = self.arch.layer_shape(l);
            let mut z: Vec<f64> = self.weights[l]
                .chunks_exact(cols)
                .zip(&self.biases[l])
                .map(|(row, b)| row.iter().zip(&h).map(|(w, x)| w * x).sum::<f64>() + b)
                .collect();
            if l == last {
                return z;
            }
            z.iter_mut().for_each(|v| *v = v.max(0.0));
            if self.arch.skips(l) {
                z.iter_mut().zip(&h).for_each(|(a, p)| *a += p);
            }
            h = z;
        }
        unreachable!("loop returns at the output layer")
    }
}

/// Forward pass with weights resampled from `noise`.
pub fn mlp_predict(model: &StochasticMlp, x: &[f64], noise: &[f64]) -> Result<Vec<f64>> {
    if x.len() != model.input_dim() {
        return Err(Error::DimensionMismatch { expected: model.input_dim(), got: x.len() });
    }
    if noise.len() != model.noise_len() {
        return Err(Error::DimensionMismatch { expected: model.noise_len(), got: noise.len() });
    }
    Ok(model.sample(noise).eval(x))
}

impl StochasticModel for StochasticMlp {
    fn params(&self) -> &ParamVector {
        &self.params
    }

    fn params_mut(&mut self) -> &mut ParamVector {
        &mut self.params
    }

    fn input_dim(&self) -> usize {
        self.arch.widths[0]
    }

    fn output_dim(&self) -> usize {
        *self.arch.widths.last().expect("validated widths")
    }

    fn noise_len(&self) -> usize {
        self.arch.num_weights()
    }

    fn predict(&self, x: &[f64], noise: &[f64]) -> Vec<f64> {
        self.sample(noise).eval(x)
    }

    fn record(&self, tape: &mut Tape, params: Var, x: &[f64], noise: &[f64]) -> Var {
        let w = self.record_weights(tape, params, noise);
        let xv = tape.constant(x.to_vec());
        self.record_eval(tape, &w, xv)
    }
}

/// Uniform draw in `[-half_width, half_width]`, used by latent-parameter
/// samplers.
pub(crate) fn symmetric_uniform(rng: &mut Rng, half_width: f64) -> f64 {
    if half_width == 0.0 {
        0.0
    } else {
        rng.random_range(-half_width..=half_width)
    }
}
