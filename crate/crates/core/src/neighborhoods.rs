//! Input norms and δ-ball neighborhood indices.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{ensure_finite, Error, Result};

/// Norm on the input space used to decide neighborhood membership.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum InputNorm {
    /// Euclidean norm.
    Homogeneous,
    /// `sqrt(Σ c_i² x_i²)` with `c` the least-squares slopes of y on x.
    Heterogeneous { weights: Vec<f64> },
}

impl InputNorm {
    pub fn heterogeneous(weights: Vec<f64>) -> Result<Self> {
        ensure_finite(&weights, "norm weights")?;
        Ok(InputNorm::Heterogeneous { weights })
    }

    /// Norm of `x`.
    pub fn norm(&self, x: &[f64]) -> Result<f64> {
        if let InputNorm::Heterogeneous { weights } = self {
            if weights.len() != x.len() {
                return Err(Error::DimensionMismatch { expected: weights.len(), got: x.len() });
            }
        }
        Ok(self.sq_dist_unchecked(x, None).sqrt())
    }

    /// Norm of `a - b`.
    pub fn distance(&self, a: &[f64], b: &[f64]) -> Result<f64> {
        if a.len() != b.len() {
            return Err(Error::DimensionMismatch { expected: a.len(), got: b.len() });
        }
        if let InputNorm::Heterogeneous { weights } = self {
            if weights.len() != a.len() {
                return Err(Error::DimensionMismatch { expected: weights.len(), got: a.len() });
            }
        }
        Ok(self.sq_dist_unchecked(a, Some(b)).sqrt())
    }

    fn sq_dist_unchecked(&self, a: &[f64], b: Option<&[f64]>) -> f64 {
        let diff = |i: usize| a[i] - b.map_or(0.0, |b| b[i]);
        match self {
            InputNorm::Homogeneous => (0..a.len()).map(|i| diff(i) * diff(i)).sum(),
            InputNorm::Heterogeneous { weights } => {
                (0..a.len()).map(|i| weights[i] * weights[i] * diff(i) * diff(i)).sum()
            }
        }
    }

    pub fn label(&self) -> &'static str {
        match self {
            InputNorm::Homogeneous => "homo",
            InputNorm::Heterogeneous { .. } => "hete",
        }
    }
}

/// Ordinary least squares of `outputs` on `inputs` with an intercept.
///
/// Returns `(intercept, slopes)`.
pub fn least_squares(inputs: &[Vec<f64>], outputs: &[f64]) -> Result<(f64, Vec<f64>)> {
    if inputs.len() != outputs.len() {
        return Err(Error::SizeMismatch { left: inputs.len(), right: outputs.len() });
    }
    let n = inputs.first().map(Vec::len).ok_or(Error::Empty("regression inputs"))?;
    let rows = inputs.len();
    if rows < n + 2 {
        return Err(Error::TooFewSamples { needed: n + 2, got: rows });
    }
    let design = DMatrix::from_fn(rows, n + 1, |r, c| if c == 0 { 1.0 } else { inputs[r][c - 1] });
    for row in inputs {
        if row.len() != n {
            return Err(Error::DimensionMismatch { expected: n, got: row.len() });
        }
        ensure_finite(row, "regression inputs")?;
    }
    ensure_finite(outputs, "regression outputs")?;
    let gram = design.transpose() * &design;
    // Scale-free conditioning test on the correlation form of the Gram matrix.
    let diag: Vec<f64> = (0..=n).map(|i| gram[(i, i)].sqrt()).collect();
    if diag.contains(&0.0) {
        return Err(Error::RankDeficient);
    }
    let corr = DMatrix::from_fn(n + 1, n + 1, |i, j| gram[(i, j)] / (diag[i] * diag[j]));
    let eig = corr.symmetric_eigenvalues();
    let (lo, hi) = eig.iter().fold((f64::INFINITY, 0.0f64), |(lo, hi), &e| (lo.min(e), hi.max(e)));
    if !(lo > 1e-12 * hi) {
        return Err(Error::RankDeficient);
    }
    let rhs = design.transpose() * DVector::from_column_slice(outputs);
    let chol = gram.cholesky().ok_or(Error::RankDeficient)?;
    let coef = chol.solve(&rhs);
    Ok((coef[0], coef.iter().skip(1).copied().collect()))
}

/// Heterogeneous norm whose weights are the OLS slopes of y on x.
pub fn fit_hetero_norm(inputs: &[Vec<f64>], outputs: &[f64]) -> Result<InputNorm> {
    let (_, slopes) = least_squares(inputs, outputs)?;
    InputNorm::heterogeneous(slopes)
}

/// Per-anchor lists of sample indices within distance δ.
#[derive(Debug, Clone, PartialEq)]
pub struct NeighborhoodIndex {
    delta: f64,
    anchors: Vec<usize>,
    members: Vec<Vec<usize>>,
}

impl NeighborhoodIndex {
    pub fn delta(&self) -> f64 {
        self.delta
    }

    pub fn anchors(&self) -> &[usize] {
        &self.anchors
    }

    pub fn members(&self, anchor: usize) -> &[usize] {
        &self.members[anchor]
    }

    pub fn all_members(&self) -> &[Vec<usize>] {
        &self.members
    }

    pub fn counts(&self) -> Vec<usize> {
        self.members.iter().map(Vec::len).collect()
    }

    pub fn num_anchors(&self) -> usize {
        self.anchors.len()
    }

    /// Largest sample index referenced plus one.
    pub fn num_points(&self) -> usize {
        self.members.iter().flatten().map(|&j| j + 1).max().unwrap_or(0)
    }

    /// Index where every anchor's neighborhood is the full set.
    pub fn whole(n: usize) -> Self {
        NeighborhoodIndex {
            delta: f64::INFINITY,
            anchors: (0..n).collect(),
            members: vec![(0..n).collect(); n],
        }
    }
}

/// δ-ball index with every sample acting as an anchor.
pub fn build_index(inputs: &[Vec<f64>], norm: &InputNorm, delta: f64) -> Result<NeighborhoodIndex> {
    let anchors: Vec<usize> = (0..inputs.len()).collect();
    build_index_for_anchors(inputs, &anchors, norm, delta)
}

/// δ-ball index restricted to the given anchors (indices into `inputs`).
pub fn build_index_for_anchors(
    inputs: &[Vec<f64>],
    anchors: &[usize],
    norm: &InputNorm,
    delta: f64,
) -> Result<NeighborhoodIndex> {
    if !(delta > 0.0) {
        return Err(Error::invalid(format!("neighborhood radius must be positive, got {delta}")));
    }
    if inputs.is_empty() {
        return Err(Error::Empty("neighborhood inputs"));
    }
    let n = inputs[0].len();
    if let InputNorm::Heterogeneous { weights } = norm {
        if weights.len() != n {
            return Err(Error::DimensionMismatch { expected: weights.len(), got: n });
        }
    }
    for x in inputs {
        if x.len() != n {
            return Err(Error::DimensionMismatch { expected: n, got: x.len() });
        }
    }
    let delta_sq = delta * delta;
    let mut members = Vec::with_capacity(anchors.len());
    for &a in anchors {
        let xa = inputs.get(a).ok_or_else(|| Error::invalid(format!("anchor {a} out of range")))?;
        let list: Vec<usize> = (0..inputs.len())
            .filter(|&j| norm.sq_dist_unchecked(xa, Some(&inputs[j])) <= delta_sq)
            .collect();
        members.push(list);
    }
    Ok(NeighborhoodIndex { delta, anchors: anchors.to_vec(), members })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ols_recovers_exact_planes() {
        let inputs: Vec<Vec<f64>> =
            (0..10).map(|i| vec![i as f64 * 0.3, ((i * 7) % 5) as f64 - 1.0]).collect();
        let outputs: Vec<f64> = inputs.iter().map(|x| 2.0 * x[0] + 3.0 * x[1] + 1.0).collect();
        let norm = fit_hetero_norm(&inputs, &outputs).unwrap();
        let InputNorm::Heterogeneous { weights } = norm else { panic!() };
        assert!((weights[0] - 2.0).abs() < 1e-10 && (weights[1] - 3.0).abs() < 1e-10);

        let inputs: Vec<Vec<f64>> = (0..5).map(|i| vec![i as f64]).collect();
        let outputs: Vec<f64> = (0..5).map(|i| i as f64).collect();
        let (c0, c) = least_squares(&inputs, &outputs).unwrap();
        assert!(c0.abs() < 1e-12 && (c[0] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn ols_rejects_degenerate_designs() {
        let inputs = vec![vec![1.0, 2.0]; 6];
        let outputs = vec![1.0; 6];
        assert!(matches!(fit_hetero_norm(&inputs, &outputs), Err(Error::RankDeficient)));
        let inputs = vec![vec![1.0], vec![2.0]];
        assert!(matches!(
            fit_hetero_norm(&inputs, &[1.0, 2.0]),
            Err(Error::TooFewSamples { needed: 3, got: 2 })
        ));
    }

    #[test]
    fn norm_values() {
        assert_eq!(InputNorm::Homogeneous.norm(&[3.0, 4.0]).unwrap(), 5.0);
        let hete = InputNorm::heterogeneous(vec![2.0, 1.0]).unwrap();
        assert_eq!(hete.norm(&[3.0, 4.0]).unwrap(), 52f64.sqrt());
        assert_eq!(hete.norm(&[0.0, 0.0]).unwrap(), 0.0);
        assert!(matches!(hete.norm(&[1.0]), Err(Error::DimensionMismatch { .. })));
    }

    #[test]
    fn index_examples() {
        let inputs = vec![vec![0.0], vec![0.05], vec![0.2]];
        let idx = build_index(&inputs, &InputNorm::Homogeneous, 0.1).unwrap();
        assert_eq!(idx.members(0), &[0, 1]);
        assert_eq!(idx.members(2), &[2]);
        let idx = build_index(&inputs, &InputNorm::Homogeneous, 0.2).unwrap();
        assert_eq!(idx.members(1), &[0, 1, 2]);
        let idx = build_index(&inputs, &InputNorm::Homogeneous, f64::INFINITY).unwrap();
        assert!(idx.all_members().iter().all(|m| m == &[0, 1, 2]));
        assert_eq!(idx.counts(), vec![3, 3, 3]);
    }

    #[test]
    fn index_rejects_bad_radius_and_empty_input() {
        let inputs = vec![vec![0.0]];
        assert!(build_index(&inputs, &InputNorm::Homogeneous, 0.0).is_err());
        assert!(build_index(&inputs, &InputNorm::Homogeneous, -1.0).is_err());
        assert!(matches!(
            build_index(&[], &InputNorm::Homogeneous, 1.0),
            Err(Error::Empty(_))
        ));
    }

    #[test]
    fn anchor_subset() {
        let inputs = vec![vec![0.0], vec![0.05], vec![0.2]];
        let idx = build_index_for_anchors(&inputs, &[2], &InputNorm::Homogeneous, 0.16).unwrap();
        assert_eq!(idx.anchors(), &[2]);
        assert_eq!(idx.members(0), &[1, 2]);
    }
}
