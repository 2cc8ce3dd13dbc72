//! Evaluation metrics.
//!
//! Standard deviations use the population convention `sqrt(Σ(v-m)²/N)`.

use rand::seq::index::sample;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::models::LinearGaussianParams;
use crate::neighborhoods::{InputNorm, NeighborhoodIndex};
use crate::Rng;

/// Mean and SD of a scalar sample at one anchor.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Moments {
    pub mean: f64,
    pub sd: f64,
}

impl Moments {
    pub fn of(values: &[f64]) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::Empty("moment sample"));
        }
        let n = values.len() as f64;
        let mean = values.iter().sum::<f64>() / n;
        let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
        Ok(Moments { mean, sd: var.sqrt() })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MomentErrorReport {
    pub mean_error: f64,
    pub sd_error: f64,
    pub truth: Vec<Moments>,
    pub pred: Vec<Moments>,
}

/// `Σ|E y - E ŷ| / Σ|E y|` and the same for SDs.
pub fn mean_sd_error(truth: &[Moments], pred: &[Moments]) -> Result<MomentErrorReport> {
    if truth.len() != pred.len() {
        return Err(Error::SizeMismatch { left: truth.len(), right: pred.len() });
    }
    if truth.is_empty() {
        return Err(Error::Empty("moment anchors"));
    }
    let mean_den: f64 = truth.iter().map(|m| m.mean.abs()).sum();
    let sd_den: f64 = truth.iter().map(|m| m.sd.abs()).sum();
    if mean_den == 0.0 {
        return Err(Error::ZeroDenominator("mean error"));
    }
    if sd_den == 0.0 {
        return Err(Error::ZeroDenominator("sd error"));
    }
    let mean_num: f64 = truth.iter().zip(pred).map(|(t, p)| (t.mean - p.mean).abs()).sum();
    let sd_num: f64 = truth.iter().zip(pred).map(|(t, p)| (t.sd - p.sd).abs()).sum();
    Ok(MomentErrorReport {
        mean_error: mean_num / mean_den,
        sd_error: sd_num / sd_den,
        truth: truth.to_vec(),
        pred: pred.to_vec(),
    })
}

/// Relative coefficient errors `(error_b, error_sigma)`; spreads are
/// compared in absolute value.
pub fn param_error(truth: &LinearGaussianParams, est: &LinearGaussianParams) -> Result<(f64, f64)> {
    if truth.means.len() != est.means.len() || truth.spreads.len() != est.spreads.len() {
        return Err(Error::SizeMismatch { left: truth.means.len(), right: est.means.len() });
    }
    let b_den: f64 = truth.means.iter().map(|b| b.abs()).sum();
    let s_den: f64 = truth.spreads.iter().map(|s| s.abs()).sum();
    if b_den == 0.0 {
        return Err(Error::ZeroDenominator("coefficient error"));
    }
    if s_den == 0.0 {
        return Err(Error::ZeroDenominator("spread error"));
    }
    let b: f64 = truth.means.iter().zip(&est.means).map(|(a, b)| (a - b).abs()).sum();
    let s: f64 = truth.spreads.iter().zip(&est.spreads).map(|(a, b)| (a.abs() - b.abs()).abs()).sum();
    Ok((b / b_den, s / s_den))
}

/// Per-anchor empirical moments over δ₀-balls with enough members.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConditionalMoments {
    /// Positions in the index's anchor list that qualified.
    pub anchors: Vec<usize>,
    pub moments: Vec<Moments>,
    /// Positions that had fewer than `min_count` members.
    pub excluded: Vec<usize>,
}

pub fn conditional_moments(outputs: &[f64], index: &NeighborhoodIndex, min_count: usize) -> Result<ConditionalMoments> {
    if min_count == 0 {
        return Err(Error::invalid("min_count must be at least 1"));
    }
    if index.num_points() > outputs.len() {
        return Err(Error::SizeMismatch { left: index.num_points(), right: outputs.len() });
    }
    let mut out = ConditionalMoments { anchors: Vec::new(), moments: Vec::new(), excluded: Vec::new() };
    for (a, members) in index.all_members().iter().enumerate() {
        if members.len() < min_count {
            out.excluded.push(a);
            continue;
        }
        let vals: Vec<f64> = members.iter().map(|&j| outputs[j]).collect();
        out.anchors.push(a);
        out.moments.push(Moments::of(&vals)?);
    }
    if out.anchors.is_empty() {
        return Err(Error::NoQualifyingAnchors { min_count });
    }
    Ok(out)
}

/// Constants of the estimator error bound.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoundInputs {
    /// Bound on output norms.
    pub m: f64,
    /// Lipschitz constant in the input.
    pub l: f64,
    pub c: f64,
    /// Total sample count.
    pub n_samples: usize,
    pub delta: f64,
    /// Neighborhood sizes `N(x, δ)` over anchors.
    pub counts: Vec<usize>,
    /// Input dimension.
    pub input_dim: usize,
}

/// Empirical W2 convergence rate `h(N, d)`.
pub fn h_rate(count: usize, d: usize) -> f64 {
    let n = count as f64;
    if d <= 4 {
        2.0 * n.powf(-0.25) * (1.0 + n).ln().sqrt()
    } else {
        2.0 * n.powf(-1.0 / d as f64)
    }
}

/// `4M/√N + 8CM·mean h(N(x,δ), n) + 8√M·L·δ`.
pub fn error_bound(b: &BoundInputs) -> Result<f64> {
    let positive = [b.m, b.l, b.c, b.delta].iter().all(|v| *v > 0.0 && v.is_finite());
    if !positive || b.n_samples == 0 || b.input_dim == 0 {
        return Err(Error::invalid("bound inputs must be positive"));
    }
    if b.counts.is_empty() || b.counts.contains(&0) {
        return Err(Error::invalid("neighborhood counts must be at least 1"));
    }
    let mean_h = b.counts.iter().map(|&k| h_rate(k, b.input_dim)).sum::<f64>() / b.counts.len() as f64;
    Ok(4.0 * b.m / (b.n_samples as f64).sqrt() + 8.0 * b.c * b.m * mean_h + 8.0 * b.m.sqrt() * b.l * b.delta)
}

/// Largest output norm in the sample.
pub fn estimate_output_bound(outputs: &[f64], dim: usize) -> f64 {
    outputs.chunks_exact(dim).map(|y| y.iter().map(|v| v * v).sum::<f64>().sqrt()).fold(0.0, f64::max)
}

/// Largest `‖y_i - y_j‖ / ‖x_i - x_j‖` over `pairs` random sample pairs.
pub fn estimate_lipschitz(
    inputs: &[Vec<f64>],
    outputs: &[f64],
    dim: usize,
    norm: &InputNorm,
    pairs: usize,
    rng: &mut Rng,
) -> Result<f64> {
    let n = inputs.len();
    if n < 2 {
        return Err(Error::TooFewSamples { needed: 2, got: n });
    }
    if outputs.len() != n * dim {
        return Err(Error::SizeMismatch { left: n, right: outputs.len() / dim.max(1) });
    }
    let mut best: f64 = 0.0;
    for _ in 0..pairs {
        let ij = sample(rng, n, 2);
        let (i, j) = (ij.index(0), ij.index(1));
        let dx = norm.distance(&inputs[i], &inputs[j])?;
        if dx == 0.0 {
            continue;
        }
        let dy = outputs[i * dim..(i + 1) * dim]
            .iter()
            .zip(&outputs[j * dim..(j + 1) * dim])
            .map(|(a, b)| (a - b).powi(2))
            .sum::<f64>()
            .sqrt();
        best = best.max(dy / dx);
    }
    Ok(best)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::neighborhoods::build_index;

    fn mo(mean: f64, sd: f64) -> Moments {
        Moments { mean, sd }
    }

    #[test]
    fn moment_error_examples() {
        let r = mean_sd_error(&[mo(2.0, 1.0)], &[mo(2.2, 0.8)]).unwrap();
        assert!((r.mean_error - 0.1).abs() < 1e-15 && (r.sd_error - 0.2).abs() < 1e-15);
        let same = [mo(1.0, 0.5), mo(-3.0, 2.0)];
        let r = mean_sd_error(&same, &same).unwrap();
        assert_eq!((r.mean_error, r.sd_error), (0.0, 0.0));
        assert!(matches!(mean_sd_error(&[mo(0.0, 1.0)], &[mo(1.0, 1.0)]), Err(Error::ZeroDenominator(_))));
    }

    #[test]
    fn param_error_examples() {
        let truth = LinearGaussianParams { means: vec![1.0, 1.0, 2.0, 3.0], spreads: vec![0.1, 0.2, 0.3, 0.4] };
        assert_eq!(param_error(&truth, &truth).unwrap(), (0.0, 0.0));
        let mut est = truth.clone();
        est.means[3] = 3.7;
        let (eb, _) = param_error(&truth, &est).unwrap();
        assert!((eb - 0.1).abs() < 1e-15);
        let flipped = LinearGaussianParams { means: truth.means.clone(), spreads: truth.spreads.iter().map(|s| -s).collect() };
        assert_eq!(param_error(&truth, &flipped).unwrap().1, 0.0);
    }

    #[test]
    fn conditional_moment_examples() {
        let inputs = vec![vec![0.0], vec![0.1], vec![5.0]];
        let index = build_index(&inputs, &InputNorm::Homogeneous, 0.2).unwrap();
        let cm = conditional_moments(&[1.0, 3.0, 7.0], &index, 2).unwrap();
        assert_eq!(cm.anchors, vec![0, 1]);
        assert_eq!(cm.excluded, vec![2]);
        assert_eq!(cm.moments[0], mo(2.0, 1.0));
        let cm = conditional_moments(&[4.0; 3], &index, 1).unwrap();
        assert!(cm.moments.iter().all(|m| *m == mo(4.0, 0.0)));
        assert!(matches!(
            conditional_moments(&[1.0, 3.0, 7.0], &index, 5),
            Err(Error::NoQualifyingAnchors { min_count: 5 })
        ));
    }

    fn inputs(counts: Vec<usize>, delta: f64, l: f64) -> BoundInputs {
        BoundInputs { m: 1.0, l, c: 1.0, n_samples: 100, delta, counts, input_dim: 3 }
    }

    #[test]
    fn bound_hand_value() {
        let h = 2.0 * 100f64.powf(-0.25) * 101f64.ln().sqrt();
        let b = error_bound(&inputs(vec![100; 5], 0.1, 1.0)).unwrap();
        assert!((b - (0.4 + 8.0 * h + 0.8)).abs() < 1e-12);
        assert!((h_rate(100, 3) - h).abs() < 1e-15);
        assert_eq!(h_rate(32, 5), 2.0 * 32f64.powf(-0.2));
    }

    #[test]
    fn bound_monotonicity() {
        let base = error_bound(&inputs(vec![10, 20], 0.1, 1.0)).unwrap();
        assert!(error_bound(&inputs(vec![11, 20], 0.1, 1.0)).unwrap() < base);
        assert!(error_bound(&inputs(vec![10, 20], 0.2, 1.0)).unwrap() > base);
        assert!(error_bound(&inputs(vec![10, 20], 0.1, 2.0)).unwrap() > base);
        assert!(error_bound(&inputs(vec![0], 0.1, 1.0)).is_err());
        assert!(error_bound(&inputs(vec![1], -0.1, 1.0)).is_err());
    }

    #[test]
    fn lipschitz_of_a_line() {
        let xs: Vec<Vec<f64>> = (0..20).map(|i| vec![i as f64]).collect();
        let ys: Vec<f64> = (0..20).map(|i| 3.0 * i as f64).collect();
        let l = estimate_lipschitz(&xs, &ys, 1, &InputNorm::Homogeneous, 50, &mut crate::rng_from_seed(1)).unwrap();
        assert!((l - 3.0).abs() < 1e-12);
        assert_eq!(estimate_output_bound(&[3.0, 4.0, 1.0, 0.0], 2), 5.0);
    }
}
