//! Exact squared W2 between uniform empirical distributions of equal size.
//!
//! With uniform weights and equal cardinality the optimal coupling is a
//! permutation, so the transport problem reduces to linear assignment on the
//! squared-distance matrix.

use crate::error::{ensure_finite, Error, Result};

/// A finite set of points in `R^d`, stored row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct PointCloud {
    points: Vec<f64>,
    dim: usize,
}

impl PointCloud {
    pub fn new(points: Vec<f64>, dim: usize) -> Result<Self> {
        if dim == 0 {
            return Err(Error::invalid("point dimension must be positive"));
        }
        if points.is_empty() {
            return Err(Error::Empty("point cloud"));
        }
        if !points.len().is_multiple_of(dim) {
            return Err(Error::DimensionMismatch { expected: dim, got: points.len() % dim });
        }
        ensure_finite(&points, "point cloud")?;
        Ok(Self { points, dim })
    }

    /// One-dimensional cloud from scalars.
    pub fn scalars(values: &[f64]) -> Result<Self> {
        Self::new(values.to_vec(), 1)
    }

    pub fn from_rows<R: AsRef<[f64]>>(rows: &[R]) -> Result<Self> {
        let dim = rows.first().map(|r| r.as_ref().len()).ok_or(Error::Empty("point cloud"))?;
        let mut points = Vec::with_capacity(rows.len() * dim);
        for row in rows {
            let row = row.as_ref();
            if row.len() != dim {
                return Err(Error::DimensionMismatch { expected: dim, got: row.len() });
            }
            points.extend_from_slice(row);
        }
        Self::new(points, dim)
    }

    pub fn len(&self) -> usize {
        self.points.len() / self.dim
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn point(&self, i: usize) -> &[f64] {
        &self.points[i * self.dim..(i + 1) * self.dim]
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.points
    }

    /// Sub-cloud made of the listed points, in order.
    pub fn select(&self, indices: &[usize]) -> PointCloud {
        let mut points = Vec::with_capacity(indices.len() * self.dim);
        for &i in indices {
            points.extend_from_slice(self.point(i));
        }
        PointCloud { points, dim: self.dim }
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Result<PointCloud> {
        PointCloud::new(self.points.iter().map(|&v| f(v)).collect(), self.dim)
    }
}

/// Optimal permutation coupling: point `i` of the first cloud is sent to
/// point `assignment[i]` of the second.
#[derive(Debug, Clone, PartialEq)]
pub struct CouplingPlan {
    pub assignment: Vec<usize>,
    pub cost: f64,
}

impl CouplingPlan {
    /// Mean squared distance realised by an arbitrary permutation.
    pub fn cost_of(a: &PointCloud, b: &PointCloud, assignment: &[usize]) -> f64 {
        let n = a.len();
        let total: f64 = (0..n).map(|i| sq_dist(a.point(i), b.point(assignment[i]))).sum();
        total / n as f64
    }
}

#[inline]
pub(crate) fn sq_dist(u: &[f64], v: &[f64]) -> f64 {
    u.iter().zip(v).map(|(a, b)| (a - b) * (a - b)).sum()
}

fn check_pair(a: &PointCloud, b: &PointCloud) -> Result<()> {
    if a.len() != b.len() {
        return Err(Error::SizeMismatch { left: a.len(), right: b.len() });
    }
    if a.dim() != b.dim() {
        return Err(Error::DimensionMismatch { expected: a.dim(), got: b.dim() });
    }
    Ok(())
}

/// Squared W2 of two scalar clouds by pairing order statistics.
pub fn w2sq_1d_sorted(a: &PointCloud, b: &PointCloud) -> Result<f64> {
    check_pair(a, b)?;
    if a.dim() != 1 {
        return Err(Error::DimensionMismatch { expected: 1, got: a.dim() });
    }
    let mut xs = a.as_slice().to_vec();
    let mut ys = b.as_slice().to_vec();
    xs.sort_by(f64::total_cmp);
    ys.sort_by(f64::total_cmp);
    let total: f64 = xs.iter().zip(&ys).map(|(x, y)| (x - y) * (x - y)).sum();
    Ok(total / xs.len() as f64)
}

/// Squared W2 and an optimal coupling via shortest augmenting paths.
pub fn w2sq_assignment(a: &PointCloud, b: &PointCloud) -> Result<CouplingPlan> {
    check_pair(a, b)?;
    let n = a.len();
    let mut cost = vec![0.0; n * n];
    for i in 0..n {
        let pi = a.point(i);
        for j in 0..n {
            cost[i * n + j] = sq_dist(pi, b.point(j));
        }
    }
    let assignment = solve_assignment(&cost, n);
    let cost = CouplingPlan::cost_of(a, b, &assignment);
    Ok(CouplingPlan { assignment, cost })
}

/// Optimal coupling for the loss code: order statistics when `d = 1`,
/// assignment otherwise.
pub fn optimal_coupling(a: &PointCloud, b: &PointCloud) -> Result<CouplingPlan> {
    if a.dim() != 1 {
        return w2sq_assignment(a, b);
    }
    check_pair(a, b)?;
    let assignment = sorted_coupling(a.as_slice(), b.as_slice());
    let cost = CouplingPlan::cost_of(a, b, &assignment);
    Ok(CouplingPlan { assignment, cost })
}

pub(crate) fn sorted_coupling(a: &[f64], b: &[f64]) -> Vec<usize> {
    let n = a.len();
    let mut ia: Vec<usize> = (0..n).collect();
    let mut ib: Vec<usize> = (0..n).collect();
    ia.sort_by(|&i, &j| a[i].total_cmp(&a[j]));
    ib.sort_by(|&i, &j| b[i].total_cmp(&b[j]));
    let mut assignment = vec![0; n];
    for (&i, &j) in ia.iter().zip(&ib) {
        assignment[i] = j;
    }
    assignment
}

/// Exhaustive minimum over all permutations; `n <= 8`.
pub fn w2sq_bruteforce(a: &PointCloud, b: &PointCloud) -> Result<f64> {
    check_pair(a, b)?;
    let n = a.len();
    if n > 8 {
        return Err(Error::TooLarge(n));
    }
    let mut cost = vec![0.0; n * n];
    for i in 0..n {
        for j in 0..n {
            cost[i * n + j] = sq_dist(a.point(i), b.point(j));
        }
    }
    let mut perm: Vec<usize> = (0..n).collect();
    let mut best = f64::INFINITY;
    permute(&mut perm, 0, &cost, n, &mut best);
    Ok(best / n as f64)
}

fn permute(perm: &mut [usize], k: usize, cost: &[f64], n: usize, best: &mut f64) {
    if k == n {
        let total: f64 = perm.iter().enumerate().map(|(i, &j)| cost[i * n + j]).sum();
        if total < *best {
            *best = total;
        }
        return;
    }
    for i in k..n {
        perm.swap(k, i);
        permute(perm, k + 1, cost, n, best);
        perm.swap(k, i);
    }
}

/// Dense minimum-cost assignment on an `n x n` row-major matrix.
///
/// Rows are inserted one at a time; each insertion runs a Dijkstra-style
/// search over reduced costs and augments along the shortest path, keeping
/// dual potentials feasible. O(n^3).
pub fn solve_assignment(cost: &[f64], n: usize) -> Vec<usize> {
    debug_assert_eq!(cost.len(), n * n);
    if n == 0 {
        return Vec::new();
    }
    // 1-based columns, column 0 is the virtual source.
    let mut u = vec![0.0; n + 1];
    let mut v = vec![0.0; n + 1];
    let mut row_of = vec![0usize; n + 1];
    let mut way = vec![0usize; n + 1];
    let mut minv = vec![0.0; n + 1];
    let mut used = vec![false; n + 1];

    for i in 1..=n {
        row_of[0] = i;
        let mut j0 = 0usize;
        minv.iter_mut().for_each(|m| *m = f64::INFINITY);
        used.iter_mut().for_each(|f| *f = false);
        loop {
            used[j0] = true;
            let i0 = row_of[j0];
            let row = &cost[(i0 - 1) * n..i0 * n];
            let mut delta = f64::INFINITY;
            let mut j1 = 0usize;
            for j in 1..=n {
                if used[j] {
                    continue;
                }
                let reduced = row[j - 1] - u[i0] - v[j];
                if reduced < minv[j] {
                    minv[j] = reduced;
                    way[j] = j0;
                }
                if minv[j] < delta {
                    delta = minv[j];
                    j1 = j;
                }
            }
            for j in 0..=n {
                if used[j] {
                    u[row_of[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            j0 = j1;
            if row_of[j0] == 0 {
                break;
            }
        }
        loop {
            let j1 = way[j0];
            row_of[j0] = row_of[j1];
            j0 = j1;
            if j0 == 0 {
                break;
            }
        }
    }

    let mut assignment = vec![0usize; n];
    for j in 1..=n {
        if row_of[j] > 0 {
            assignment[row_of[j] - 1] = j - 1;
        }
    }
    assignment
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cloud(rows: &[&[f64]]) -> PointCloud {
        PointCloud::from_rows(rows).unwrap()
    }

    #[test]
    fn sorted_examples() {
        let a = PointCloud::scalars(&[1.0, 2.0, 3.0]).unwrap();
        assert_eq!(w2sq_1d_sorted(&a, &a).unwrap(), 0.0);
        let a = PointCloud::scalars(&[0.0, 1.0]).unwrap();
        let b = PointCloud::scalars(&[1.0, 2.0]).unwrap();
        assert_eq!(w2sq_1d_sorted(&a, &b).unwrap(), 1.0);
        let a = PointCloud::scalars(&[0.0]).unwrap();
        let b = PointCloud::scalars(&[3.0]).unwrap();
        assert_eq!(w2sq_1d_sorted(&a, &b).unwrap(), 9.0);
    }

    #[test]
    fn sorted_rejects_bad_input() {
        let a = PointCloud::scalars(&[0.0, 1.0]).unwrap();
        let b = PointCloud::scalars(&[1.0]).unwrap();
        assert!(matches!(w2sq_1d_sorted(&a, &b), Err(Error::SizeMismatch { .. })));
        let c = cloud(&[&[0.0, 1.0], &[1.0, 1.0]]);
        let d = cloud(&[&[0.0, 1.0], &[1.0, 2.0]]);
        assert!(matches!(w2sq_1d_sorted(&c, &d), Err(Error::DimensionMismatch { .. })));
        assert!(matches!(PointCloud::scalars(&[f64::NAN]), Err(Error::NonFinite(_))));
        assert!(PointCloud::scalars(&[]).is_err());
    }

    #[test]
    fn assignment_examples() {
        let a = cloud(&[&[0.0, 0.0], &[2.0, 0.0]]);
        let b = cloud(&[&[0.0, 1.0], &[2.0, 1.0]]);
        let plan = w2sq_assignment(&a, &b).unwrap();
        assert_eq!(plan.cost, 1.0);
        assert_eq!(plan.assignment, vec![0, 1]);
        assert_eq!(w2sq_assignment(&a, &a).unwrap().cost, 0.0);

        let a = PointCloud::scalars(&[0.0, 1.0, 2.0]).unwrap();
        let b = PointCloud::scalars(&[2.0, 0.0, 1.0]).unwrap();
        let plan = w2sq_assignment(&a, &b).unwrap();
        assert_eq!(plan.cost, 0.0);
        assert_eq!(plan.assignment, vec![1, 2, 0]);
    }

    #[test]
    fn assignment_rejects_mismatch() {
        let a = cloud(&[&[0.0, 0.0], &[2.0, 0.0]]);
        let b = cloud(&[&[0.0, 1.0]]);
        assert!(matches!(w2sq_assignment(&a, &b), Err(Error::SizeMismatch { .. })));
        let c = PointCloud::scalars(&[0.0, 1.0]).unwrap();
        assert!(matches!(w2sq_assignment(&a, &c), Err(Error::DimensionMismatch { .. })));
    }

    #[test]
    fn bruteforce_examples() {
        let a = cloud(&[&[0.0, 0.0], &[2.0, 0.0]]);
        let b = cloud(&[&[0.0, 1.0], &[2.0, 1.0]]);
        assert_eq!(w2sq_bruteforce(&a, &b).unwrap(), 1.0);
        assert_eq!(w2sq_bruteforce(&a, &a).unwrap(), 0.0);
        let big = PointCloud::scalars(&[0.0; 9]).unwrap();
        assert!(matches!(w2sq_bruteforce(&big, &big), Err(Error::TooLarge(9))));
    }

    #[test]
    fn optimal_coupling_matches_sorted_in_1d() {
        let a = PointCloud::scalars(&[3.0, -1.0, 0.5, 2.0]).unwrap();
        let b = PointCloud::scalars(&[0.0, 4.0, 1.0, -2.0]).unwrap();
        let plan = optimal_coupling(&a, &b).unwrap();
        assert!((plan.cost - w2sq_1d_sorted(&a, &b).unwrap()).abs() < 1e-15);
        let mut seen = plan.assignment.clone();
        seen.sort();
        assert_eq!(seen, vec![0, 1, 2, 3]);
    }

    #[test]
    fn solver_handles_ties() {
        // Every permutation is optimal.
        let cost = vec![1.0; 16];
        let assignment = solve_assignment(&cost, 4);
        let mut seen = assignment.clone();
        seen.sort();
        assert_eq!(seen, vec![0, 1, 2, 3]);
    }
}
