//! Input samplers, ground-truth synthesis and CSV ingestion.

use std::path::Path;

use rand::Rng as _;
use rand_distr::{Beta, Distribution, Exp, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{ensure_finite, Error, Result};
use crate::models::{linear_predict, LinearGaussianParams};
use crate::ode::{ground_truth_rhs, integrate_rk4, OdeExperimentConfig};
use crate::transport::PointCloud;
use crate::Rng;

/// Paired inputs and outputs, stored row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct SampleSet {
    inputs: Vec<f64>,
    input_dim: usize,
    outputs: Vec<f64>,
    output_dim: usize,
    pub provenance: String,
}

impl SampleSet {
    pub fn new(
        inputs: Vec<f64>,
        input_dim: usize,
        outputs: Vec<f64>,
        output_dim: usize,
        provenance: impl Into<String>,
    ) -> Result<Self> {
        if input_dim == 0 || output_dim == 0 {
            return Err(Error::invalid("sample dimensions must be positive"));
        }
        if !inputs.len().is_multiple_of(input_dim) {
            return Err(Error::DimensionMismatch { expected: input_dim, got: inputs.len() % input_dim });
        }
        if !outputs.len().is_multiple_of(output_dim) {
            return Err(Error::DimensionMismatch { expected: output_dim, got: outputs.len() % output_dim });
        }
        let (n_in, n_out) = (inputs.len() / input_dim, outputs.len() / output_dim);
        if n_in != n_out {
            return Err(Error::SizeMismatch { left: n_in, right: n_out });
        }
        ensure_finite(&inputs, "sample inputs")?;
        ensure_finite(&outputs, "sample outputs")?;
        Ok(Self { inputs, input_dim, outputs, output_dim, provenance: provenance.into() })
    }

    pub fn from_rows(inputs: &[Vec<f64>], outputs: &[Vec<f64>], provenance: impl Into<String>) -> Result<Self> {
        let input_dim = inputs.first().map_or(0, Vec::len);
        let output_dim = outputs.first().map_or(0, Vec::len);
        if inputs.iter().any(|r| r.len() != input_dim) || outputs.iter().any(|r| r.len() != output_dim) {
            return Err(Error::invalid("ragged sample rows"));
        }
        Self::new(inputs.concat(), input_dim, outputs.concat(), output_dim, provenance)
    }

    pub fn len(&self) -> usize {
        self.inputs.len() / self.input_dim
    }

    pub fn is_empty(&self) -> bool {
        self.inputs.is_empty()
    }

    pub fn input_dim(&self) -> usize {
        self.input_dim
    }

    pub fn output_dim(&self) -> usize {
        self.output_dim
    }

    pub fn input(&self, i: usize) -> &[f64] {
        &self.inputs[i * self.input_dim..(i + 1) * self.input_dim]
    }

    pub fn output(&self, i: usize) -> &[f64] {
        &self.outputs[i * self.output_dim..(i + 1) * self.output_dim]
    }

    pub fn inputs_flat(&self) -> &[f64] {
        &self.inputs
    }

    pub fn outputs_flat(&self) -> &[f64] {
        &self.outputs
    }

    pub fn input_rows(&self) -> Vec<Vec<f64>> {
        self.inputs.chunks_exact(self.input_dim).map(<[f64]>::to_vec).collect()
    }

    /// Scalar outputs; panics unless `output_dim == 1`.
    pub fn scalar_outputs(&self) -> &[f64] {
        assert_eq!(self.output_dim, 1, "outputs are not scalar");
        &self.outputs
    }

    pub fn output_cloud(&self) -> Result<PointCloud> {
        PointCloud::new(self.outputs.clone(), self.output_dim)
    }

    /// Rows `indices`, in that order.
    pub fn select(&self, indices: &[usize]) -> SampleSet {
        let mut inputs = Vec::with_capacity(indices.len() * self.input_dim);
        let mut outputs = Vec::with_capacity(indices.len() * self.output_dim);
        for &i in indices {
            inputs.extend_from_slice(self.input(i));
            outputs.extend_from_slice(self.output(i));
        }
        SampleSet { inputs, outputs, provenance: self.provenance.clone(), ..*self }
    }

    /// Same inputs, new outputs.
    pub fn with_outputs(&self, outputs: Vec<f64>, output_dim: usize) -> Result<SampleSet> {
        Self::new(self.inputs.clone(), self.input_dim, outputs, output_dim, self.provenance.clone())
    }
}

/// One-dimensional input law.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "law", rename_all = "lowercase")]
pub enum InputLaw {
    Uniform { low: f64, high: f64 },
    Normal { mean: f64, sd: f64 },
    /// Rate parameterisation: mean `1 / rate`.
    Exponential { rate: f64 },
    Beta { alpha: f64, beta: f64 },
}

impl InputLaw {
    /// Normal law given its variance.
    pub fn normal_var(mean: f64, variance: f64) -> Self {
        InputLaw::Normal { mean, sd: variance.sqrt() }
    }

    fn validate(&self) -> Result<()> {
        let ok = match *self {
            InputLaw::Uniform { low, high } => low.is_finite() && high.is_finite() && low <= high,
            InputLaw::Normal { mean, sd } => mean.is_finite() && sd.is_finite() && sd >= 0.0,
            InputLaw::Exponential { rate } => rate.is_finite() && rate > 0.0,
            InputLaw::Beta { alpha, beta } => alpha.is_finite() && beta.is_finite() && alpha > 0.0 && beta > 0.0,
        };
        if ok {
            Ok(())
        } else {
            Err(Error::invalid(format!("invalid input law {self:?}")))
        }
    }

    fn sample(&self, rng: &mut Rng) -> f64 {
        match *self {
            InputLaw::Uniform { low, high } if low == high => low,
            InputLaw::Uniform { low, high } => rng.random_range(low..high),
            InputLaw::Normal { mean, sd } => mean + sd * rng.sample::<f64, _>(StandardNormal),
            InputLaw::Exponential { rate } => Exp::new(rate).expect("validated").sample(rng),
            InputLaw::Beta { alpha, beta } => Beta::new(alpha, beta).expect("validated").sample(rng),
        }
    }
}

/// I.i.d. draws from the product of `laws`, one coordinate per law.
pub fn sample_inputs(laws: &[InputLaw], count: usize, rng: &mut Rng) -> Result<Vec<Vec<f64>>> {
    if count == 0 {
        return Err(Error::Empty("sample count"));
    }
    if laws.is_empty() {
        return Err(Error::Empty("input laws"));
    }
    for law in laws {
        law.validate()?;
    }
    Ok((0..count).map(|_| laws.iter().map(|l| l.sample(rng)).collect()).collect())
}

/// Data-generating process.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum GroundTruthSpec {
    /// `y = Σ ω_i x_i + ω_0`, `ω_i ~ N(b_i, σ_i²)`.
    LinearGaussian(LinearGaussianParams),
    /// `y = ω₁(1 - exp(-ω₂ x)) + 5`, `ω ~ N(mean, cov)`.
    NonlinearExp { mean: [f64; 2], cov: [[f64; 2]; 2] },
    /// Inputs are initial conditions; output is the state at the horizon.
    Ode(OdeExperimentConfig),
}

/// Coefficients of the linear benchmark.
pub fn linreg_truth() -> LinearGaussianParams {
    LinearGaussianParams { means: vec![1.0, 1.0, 2.0, 3.0], spreads: vec![0.1, 0.2, 0.3, 0.4] }
}

/// `x₁ ~ Exp(4)`, `x₂ ~ N(0, 0.25)`, `x₃ ~ Beta(5, 5)`.
pub fn linreg_input_laws() -> Vec<InputLaw> {
    vec![
        InputLaw::Exponential { rate: 4.0 },
        InputLaw::normal_var(0.0, 0.25),
        InputLaw::Beta { alpha: 5.0, beta: 5.0 },
    ]
}

pub const NONLINEAR_MEAN: [f64; 2] = [19.1426, 0.5311];
pub const NONLINEAR_COV: [[f64; 2]; 2] = [[6.22864, -0.4322], [-0.4322, 0.04124]];

pub fn nonlinear_truth() -> GroundTruthSpec {
    GroundTruthSpec::NonlinearExp { mean: NONLINEAR_MEAN, cov: NONLINEAR_COV }
}

pub fn nonlinear_input_laws() -> Vec<InputLaw> {
    vec![InputLaw::Uniform { low: -0.5, high: 0.5 }]
}

/// Evaluation grid `x = 0.1 i - 0.5`, `i = 0..=10`.
pub fn nonlinear_test_grid() -> Vec<f64> {
    (0..=10).map(|i| 0.1 * i as f64 - 0.5).collect()
}

pub fn nonlinear_eval(omega: &[f64], x: f64) -> f64 {
    omega[0] * (1.0 - (-omega[1] * x).exp()) + 5.0
}

/// Lower-triangular `L` with `L Lᵀ = cov`, tolerating singular PSD input.
pub fn psd_factor(cov: &[f64], n: usize) -> Result<Vec<f64>> {
    if cov.len() != n * n {
        return Err(Error::DimensionMismatch { expected: n * n, got: cov.len() });
    }
    ensure_finite(cov, "covariance")?;
    let scale = (0..n).map(|i| cov[i * n + i].abs()).fold(0.0, f64::max).max(f64::MIN_POSITIVE);
    let tol = 1e-12 * scale;
    for i in 0..n {
        for j in 0..i {
            if (cov[i * n + j] - cov[j * n + i]).abs() > tol {
                return Err(Error::NotPositiveSemiDefinite);
            }
        }
    }
    let mut l = vec![0.0; n * n];
    for j in 0..n {
        let d = cov[j * n + j] - (0..j).map(|k| l[j * n + k] * l[j * n + k]).sum::<f64>();
        if d < -tol {
            return Err(Error::NotPositiveSemiDefinite);
        }
        let ljj = d.max(0.0).sqrt();
        l[j * n + j] = ljj;
        for i in j + 1..n {
            let r = cov[i * n + j] - (0..j).map(|k| l[i * n + k] * l[j * n + k]).sum::<f64>();
            if ljj > 0.0 {
                l[i * n + j] = r / ljj;
            } else if r.abs() > tol {
                return Err(Error::NotPositiveSemiDefinite);
            }
        }
    }
    Ok(l)
}

/// Correlated Gaussian draws `mean + L z`.
pub fn sample_gaussian(mean: &[f64], factor: &[f64], rng: &mut Rng) -> Vec<f64> {
    let n = mean.len();
    let z: Vec<f64> = (0..n).map(|_| rng.sample(StandardNormal)).collect();
    (0..n).map(|i| mean[i] + (0..=i).map(|k| factor[i * n + k] * z[k]).sum::<f64>()).collect()
}

/// One independent latent draw per input, output computed from that draw.
pub fn sample_ground_truth(spec: &GroundTruthSpec, inputs: &[Vec<f64>], rng: &mut Rng) -> Result<SampleSet> {
    Ok(sample_ground_truth_with_latents(spec, inputs, rng)?.0)
}

/// Like [`sample_ground_truth`], also returning each sample's latent draw.
pub fn sample_ground_truth_with_latents(
    spec: &GroundTruthSpec,
    inputs: &[Vec<f64>],
    rng: &mut Rng,
) -> Result<(SampleSet, Vec<Vec<f64>>)> {
    if inputs.is_empty() {
        return Err(Error::Empty("ground-truth inputs"));
    }
    let mut outputs = Vec::new();
    let mut latents = Vec::with_capacity(inputs.len());
    let (out_dim, tag) = match spec {
        GroundTruthSpec::LinearGaussian(p) => {
            let p = LinearGaussianParams::new(p.means.clone(), p.spreads.clone())?;
            for x in inputs {
                let eps: Vec<f64> = (0..p.means.len()).map(|_| rng.sample(StandardNormal)).collect();
                outputs.push(linear_predict(&p, x, &eps)?);
                latents.push(eps.iter().zip(&p.means).zip(&p.spreads).map(|((e, m), s)| m + s.abs() * e).collect());
            }
            (1, "linear-gaussian")
        }
        GroundTruthSpec::NonlinearExp { mean, cov } => {
            let factor = psd_factor(&[cov[0][0], cov[0][1], cov[1][0], cov[1][1]], 2)?;
            for x in inputs {
                if x.len() != 1 {
                    return Err(Error::DimensionMismatch { expected: 1, got: x.len() });
                }
                let omega = sample_gaussian(mean, &factor, rng);
                outputs.push(nonlinear_eval(&omega, x[0]));
                latents.push(omega);
            }
            (1, "nonlinear-exp")
        }
        GroundTruthSpec::Ode(cfg) => {
            cfg.validate()?;
            for y0 in inputs {
                if y0.len() != 4 {
                    return Err(Error::DimensionMismatch { expected: 4, got: y0.len() });
                }
                let omega = crate::models::symmetric_uniform(rng, cfg.sigma_u);
                let states = integrate_rk4(|y| ground_truth_rhs(y, omega), y0, cfg.dt(), cfg.steps)?;
                outputs.extend_from_slice(&states[states.len() - 4..]);
                latents.push(vec![omega]);
            }
            (4, "ode")
        }
    };
    let input_dim = inputs[0].len();
    if inputs.iter().any(|r| r.len() != input_dim) {
        return Err(Error::invalid("ragged input rows"));
    }
    let set = SampleSet::new(inputs.concat(), input_dim, outputs, out_dim, tag)?;
    Ok((set, latents))
}

/// Input columns of the concrete study, addressed by header name.
pub const CONCRETE_INPUTS: [&str; 6] =
    ["cement", "fly_ash", "water", "superplasticizer", "coarse_aggregate", "fine_aggregate"];
pub const CONCRETE_OUTPUT: &str = "strength";

/// Reads named columns; data rows are numbered from 1 in errors.
pub fn load_csv(path: &Path, input_cols: &[&str], output_cols: &[&str]) -> Result<SampleSet> {
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    read_csv(file, input_cols, output_cols, &path.display().to_string())
}

pub fn read_csv(
    reader: impl std::io::Read,
    input_cols: &[&str],
    output_cols: &[&str],
    provenance: &str,
) -> Result<SampleSet> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
    let headers = rdr.headers()?.clone();
    if headers.is_empty() || headers.iter().all(str::is_empty) {
        return Err(Error::Empty("csv header"));
    }
    let locate = |name: &str| {
        headers
            .iter()
            .position(|h| h.eq_ignore_ascii_case(name))
            .ok_or_else(|| Error::MissingColumn(name.to_string()))
    };
    let in_pos = input_cols.iter().map(|c| locate(c)).collect::<Result<Vec<_>>>()?;
    let out_pos = output_cols.iter().map(|c| locate(c)).collect::<Result<Vec<_>>>()?;
    let (mut inputs, mut outputs) = (Vec::new(), Vec::new());
    for (r, record) in rdr.records().enumerate() {
        let record = record?;
        let cell = |pos: usize, name: &str| -> Result<f64> {
            let raw = record.get(pos).unwrap_or("");
            raw.parse::<f64>().ok().filter(|v| v.is_finite()).ok_or_else(|| Error::Parse {
                row: r + 1,
                column: name.to_string(),
                value: raw.to_string(),
            })
        };
        for (&p, name) in in_pos.iter().zip(input_cols) {
            inputs.push(cell(p, name)?);
        }
        for (&p, name) in out_pos.iter().zip(output_cols) {
            outputs.push(cell(p, name)?);
        }
    }
    if inputs.is_empty() {
        return Err(Error::Empty("csv data rows"));
    }
    SampleSet::new(inputs, input_cols.len(), outputs, output_cols.len(), provenance)
}

/// Writes a header row and every sample with round-trip precision.
pub fn write_csv(set: &SampleSet, path: &Path, input_cols: &[&str], output_cols: &[&str]) -> Result<()> {
    if input_cols.len() != set.input_dim() {
        return Err(Error::DimensionMismatch { expected: set.input_dim(), got: input_cols.len() });
    }
    if output_cols.len() != set.output_dim() {
        return Err(Error::DimensionMismatch { expected: set.output_dim(), got: output_cols.len() });
    }
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(input_cols.iter().chain(output_cols))?;
    for i in 0..set.len() {
        let row: Vec<String> = set.input(i).iter().chain(set.output(i)).map(|v| format!("{v:.16e}")).collect();
        w.write_record(&row)?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// Affine input standardisation fitted on training rows.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scaler {
    pub mean: Vec<f64>,
    pub sd: Vec<f64>,
}

impl Scaler {
    pub fn transform(&self, x: &[f64]) -> Vec<f64> {
        x.iter().zip(&self.mean).zip(&self.sd).map(|((v, m), s)| (v - m) / s).collect()
    }

    pub fn inverse(&self, z: &[f64]) -> Vec<f64> {
        z.iter().zip(&self.mean).zip(&self.sd).map(|((v, m), s)| v * s + m).collect()
    }

    fn apply(&self, set: &SampleSet) -> Result<SampleSet> {
        let inputs: Vec<f64> = set.inputs.chunks_exact(set.input_dim).flat_map(|r| self.transform(r)).collect();
        SampleSet::new(inputs, set.input_dim, set.outputs.clone(), set.output_dim, set.provenance.clone())
    }
}

/// First `⌊2N/3⌋` rows train, the rest test; inputs standardised with the
/// training mean and population SD.
pub fn split_and_standardize(data: &SampleSet) -> Result<(SampleSet, SampleSet, Scaler)> {
    let n = data.len();
    if n < 3 {
        return Err(Error::TooFewSamples { needed: 3, got: n });
    }
    let n_train = 2 * n / 3;
    let train = data.select(&(0..n_train).collect::<Vec<_>>());
    let test = data.select(&(n_train..n).collect::<Vec<_>>());
    let d = data.input_dim;
    let mut mean = vec![0.0; d];
    for i in 0..n_train {
        mean.iter_mut().zip(train.input(i)).for_each(|(m, v)| *m += v / n_train as f64);
    }
    let mut var = vec![0.0; d];
    for i in 0..n_train {
        var.iter_mut().zip(train.input(i)).zip(&mean).for_each(|((s, v), m)| *s += (v - m).powi(2) / n_train as f64);
    }
    let sd: Vec<f64> = var.iter().map(|v| v.sqrt()).collect();
    if sd.iter().any(|&s| !(s > 0.0)) {
        return Err(Error::ZeroDenominator("constant input column"));
    }
    let scaler = Scaler { mean, sd };
    Ok((scaler.apply(&train)?, scaler.apply(&test)?, scaler))
}
