//! Eager reverse-mode differentiation over vector-valued nodes.
//!
//! Every node holds its forward value as a flat `Vec<f64>`; scalars are
//! length-one nodes. Operations are evaluated when recorded, so intermediate
//! values (for example predictions needed to pick an optimal coupling) can be
//! read back before the rest of the program is recorded.

use std::fmt;
use std::sync::Arc;

use crate::error::{Error, Result};

/// Handle to a node on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    AddN(Vec<Var>),
    LinComb(Vec<(Var, f64)>),
    Scale(Var, f64),
    Offset(Var),
    Square(Var),
    Abs(Var),
    Relu(Var),
    Exp(Var),
    Powf(Var, f64),
    Sum(Var),
    Dot(Var, Var),
    MatVec { mat: Var, x: Var, rows: usize, cols: usize },
    Slice { src: Var, start: usize },
    Concat(Vec<Var>),
    Gather { src: Var, idx: Vec<usize> },
    Reparam { mean: Var, spread: Var, noise: Vec<f64> },
    PairedSqDist(PairedData),
    SumSqDev { src: Var, idx: Vec<usize>, dim: usize },
    Mmd(PairedData),
}

/// Predictions (a tape node) matched against a frozen target array.
#[derive(Debug, Clone)]
struct PairedData {
    pred: Var,
    pred_idx: Vec<usize>,
    target: Arc<[f64]>,
    target_idx: Vec<usize>,
    dim: usize,
    scale: f64,
}

impl Op {
    fn name(&self) -> &'static str {
        match self {
            Op::Leaf => "leaf",
            Op::Add(..) => "add",
            Op::Sub(..) => "sub",
            Op::Mul(..) => "mul",
            Op::AddN(..) => "add_n",
            Op::LinComb(..) => "lincomb",
            Op::Scale(..) => "scale",
            Op::Offset(..) => "offset",
            Op::Square(..) => "square",
            Op::Abs(..) => "abs",
            Op::Relu(..) => "relu",
            Op::Exp(..) => "exp",
            Op::Powf(..) => "powf",
            Op::Sum(..) => "sum",
            Op::Dot(..) => "dot",
            Op::MatVec { .. } => "matvec",
            Op::Slice { .. } => "slice",
            Op::Concat(..) => "concat",
            Op::Gather { .. } => "gather",
            Op::Reparam { .. } => "reparam",
            Op::PairedSqDist(..) => "paired_sq_dist",
            Op::SumSqDev { .. } => "sum_sq_dev",
            Op::Mmd(..) => "mmd",
        }
    }
}

#[derive(Debug, Clone)]
struct Node {
    op: Op,
    value: Vec<f64>,
}

/// Record of evaluated operations.
#[derive(Clone, Default)]
pub struct Tape {
    nodes: Vec<Node>,
    poisoned: Option<(usize, &'static str)>,
}

impl fmt::Debug for Tape {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Tape")
            .field("nodes", &self.nodes.len())
            .field("poisoned", &self.poisoned)
            .finish()
    }
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &[f64] {
        &self.nodes[v.0].value
    }

    pub fn scalar(&self, v: Var) -> f64 {
        self.nodes[v.0].value[0]
    }

    /// First node whose value was not finite, if any.
    pub fn check(&self) -> Result<()> {
        match self.poisoned {
            Some((node, op)) => Err(Error::NonFiniteNode { node, op }),
            None => Ok(()),
        }
    }

    fn push(&mut self, op: Op, value: Vec<f64>) -> Var {
        let idx = self.nodes.len();
        if self.poisoned.is_none() && !value.iter().all(|v| v.is_finite()) {
            self.poisoned = Some((idx, op.name()));
        }
        self.nodes.push(Node { op, value });
        Var(idx)
    }

    fn len_of(&self, v: Var) -> usize {
        self.nodes[v.0].value.len()
    }

    /// Input node; gradients with respect to it are available after `backward`.
    pub fn leaf(&mut self, values: Vec<f64>) -> Var {
        self.push(Op::Leaf, values)
    }

    pub fn constant(&mut self, values: Vec<f64>) -> Var {
        self.leaf(values)
    }

    pub fn scalar_leaf(&mut self, value: f64) -> Var {
        self.leaf(vec![value])
    }

    /// Leaf holding the full flat parameter array.
    pub fn param_leaf(&mut self, params: &ParamVector) -> Var {
        self.leaf(params.values.clone())
    }

    fn binary(&mut self, a: Var, b: Var, f: impl Fn(f64, f64) -> f64) -> Vec<f64> {
        let (x, y) = (&self.nodes[a.0].value, &self.nodes[b.0].value);
        assert_eq!(x.len(), y.len(), "elementwise operands differ in length");
        x.iter().zip(y).map(|(&p, &q)| f(p, q)).collect()
    }

    fn unary(&self, a: Var, f: impl Fn(f64) -> f64) -> Vec<f64> {
        self.nodes[a.0].value.iter().map(|&p| f(p)).collect()
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        let v = self.binary(a, b, |p, q| p + q);
        self.push(Op::Add(a, b), v)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Var {
        let v = self.binary(a, b, |p, q| p - q);
        self.push(Op::Sub(a, b), v)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        let v = self.binary(a, b, |p, q| p * q);
        self.push(Op::Mul(a, b), v)
    }

    /// Elementwise sum of equally sized nodes.
    pub fn add_n(&mut self, terms: &[Var]) -> Var {
        let len = terms.first().map_or(1, |&t| self.len_of(t));
        let mut v = vec![0.0; len];
        for &t in terms {
            let x = &self.nodes[t.0].value;
            assert_eq!(x.len(), len, "add_n operands differ in length");
            v.iter_mut().zip(x).for_each(|(o, x)| *o += x);
        }
        self.push(Op::AddN(terms.to_vec()), v)
    }

    /// `Σ c_k v_k` over equally sized nodes.
    pub fn lincomb(&mut self, terms: &[(Var, f64)]) -> Var {
        let len = terms.first().map_or(1, |&(t, _)| self.len_of(t));
        let mut v = vec![0.0; len];
        for &(t, c) in terms {
            let x = &self.nodes[t.0].value;
            assert_eq!(x.len(), len, "lincomb operands differ in length");
            v.iter_mut().zip(x).for_each(|(o, x)| *o += c * x);
        }
        self.push(Op::LinComb(terms.to_vec()), v)
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Var {
        let v = self.unary(a, |p| c * p);
        self.push(Op::Scale(a, c), v)
    }

    /// Adds the constant `c` to every entry.
    pub fn offset(&mut self, a: Var, c: f64) -> Var {
        let v = self.unary(a, |p| p + c);
        self.push(Op::Offset(a), v)
    }

    pub fn square(&mut self, a: Var) -> Var {
        let v = self.unary(a, |p| p * p);
        self.push(Op::Square(a), v)
    }

    pub fn abs(&mut self, a: Var) -> Var {
        let v = self.unary(a, f64::abs);
        self.push(Op::Abs(a), v)
    }

    pub fn relu(&mut self, a: Var) -> Var {
        let v = self.unary(a, |p| p.max(0.0));
        self.push(Op::Relu(a), v)
    }

    pub fn exp(&mut self, a: Var) -> Var {
        let v = self.unary(a, f64::exp);
        self.push(Op::Exp(a), v)
    }

    pub fn powf(&mut self, a: Var, p: f64) -> Var {
        let v = self.unary(a, |x| x.powf(p));
        self.push(Op::Powf(a, p), v)
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let s = self.nodes[a.0].value.iter().sum();
        self.push(Op::Sum(a), vec![s])
    }

    pub fn dot(&mut self, a: Var, b: Var) -> Var {
        let (x, y) = (&self.nodes[a.0].value, &self.nodes[b.0].value);
        assert_eq!(x.len(), y.len(), "dot operands differ in length");
        let s = x.iter().zip(y).map(|(p, q)| p * q).sum();
        self.push(Op::Dot(a, b), vec![s])
    }

    /// Row-major `rows x cols` matrix times vector.
    pub fn matvec(&mut self, mat: Var, x: Var, rows: usize, cols: usize) -> Var {
        let (m, xv) = (&self.nodes[mat.0].value, &self.nodes[x.0].value);
        assert_eq!(m.len(), rows * cols, "matrix node has wrong size");
        assert_eq!(xv.len(), cols, "vector node has wrong size");
        let v = m.chunks_exact(cols).map(|row| row.iter().zip(xv).map(|(a, b)| a * b).sum()).collect();
        self.push(Op::MatVec { mat, x, rows, cols }, v)
    }

    pub fn slice(&mut self, src: Var, start: usize, len: usize) -> Var {
        let v = self.nodes[src.0].value[start..start + len].to_vec();
        self.push(Op::Slice { src, start }, v)
    }

    pub fn concat(&mut self, parts: &[Var]) -> Var {
        let mut v = Vec::with_capacity(parts.iter().map(|&p| self.len_of(p)).sum());
        for &p in parts {
            v.extend_from_slice(&self.nodes[p.0].value);
        }
        self.push(Op::Concat(parts.to_vec()), v)
    }

    /// Entries of `src` at the listed positions.
    pub fn gather(&mut self, src: Var, idx: Vec<usize>) -> Var {
        let s = &self.nodes[src.0].value;
        let v = idx.iter().map(|&i| s[i]).collect();
        self.push(Op::Gather { src, idx }, v)
    }

    /// Sampled weights `mean + |spread| * noise` with frozen noise.
    pub fn reparam(&mut self, mean: Var, spread: Var, noise: &[f64]) -> Var {
        let (m, s) = (&self.nodes[mean.0].value, &self.nodes[spread.0].value);
        assert!(m.len() == s.len() && s.len() == noise.len(), "reparam operands differ in length");
        let v = m.iter().zip(s).zip(noise).map(|((m, s), e)| m + s.abs() * e).collect();
        self.push(Op::Reparam { mean, spread, noise: noise.to_vec() }, v)
    }

    /// `scale * Σ_s ‖target[target_idx[s]] - pred[pred_idx[s]]‖²`, where
    /// indices address `dim`-sized points.
    pub fn paired_sq_dist(
        &mut self,
        pred: Var,
        pred_idx: Vec<usize>,
        target: Arc<[f64]>,
        target_idx: Vec<usize>,
        dim: usize,
        scale: f64,
    ) -> Var {
        assert_eq!(pred_idx.len(), target_idx.len(), "paired index lists differ in length");
        let p = &self.nodes[pred.0].value;
        let mut s = 0.0;
        for (&pi, &ti) in pred_idx.iter().zip(&target_idx) {
            let (u, w) = (&p[pi * dim..(pi + 1) * dim], &target[ti * dim..(ti + 1) * dim]);
            s += u.iter().zip(w).map(|(a, b)| (a - b) * (a - b)).sum::<f64>();
        }
        let data = PairedData { pred, pred_idx, target, target_idx, dim, scale };
        self.push(Op::PairedSqDist(data), vec![scale * s])
    }

    /// `Σ_s ‖x_s - x̄‖²` over the listed `dim`-sized points of `src`.
    pub fn sum_sq_dev(&mut self, src: Var, idx: Vec<usize>, dim: usize) -> Var {
        let x = &self.nodes[src.0].value;
        let mean = point_mean(x, &idx, dim);
        let mut s = 0.0;
        for &i in &idx {
            s += x[i * dim..(i + 1) * dim].iter().zip(&mean).map(|(a, m)| (a - m) * (a - m)).sum::<f64>();
        }
        self.push(Op::SumSqDev { src, idx, dim }, vec![s])
    }

    /// Biased MMD between target points and predicted points under the
    /// five-bandwidth Gaussian mixture kernel (see [`crate::losses`]).
    pub fn mmd(
        &mut self,
        pred: Var,
        pred_idx: Vec<usize>,
        target: Arc<[f64]>,
        target_idx: Vec<usize>,
        dim: usize,
    ) -> Var {
        let pooled = pool_points(&target, &target_idx, &self.nodes[pred.0].value, &pred_idx, dim);
        let (value, _) = mmd_pooled(&pooled, target_idx.len(), dim, false);
        let data = PairedData { pred, pred_idx, target, target_idx, dim, scale: 1.0 };
        self.push(Op::Mmd(data), vec![value])
    }

    /// Reverse sweep from a scalar root.
    pub fn backward(&self, root: Var) -> Result<Gradients> {
        let rlen = self.len_of(root);
        if rlen != 1 {
            return Err(Error::NonScalarRoot(rlen));
        }
        self.check()?;
        let mut grads: Vec<Vec<f64>> = vec![Vec::new(); root.0 + 1];
        grads[root.0] = vec![1.0];
        for i in (0..=root.0).rev() {
            let (lower, upper) = grads.split_at_mut(i);
            let g = &upper[0];
            if g.is_empty() {
                continue;
            }
            self.propagate(i, g, lower);
        }
        Ok(Gradients { grads })
    }

    fn propagate(&self, i: usize, g: &[f64], lower: &mut [Vec<f64>]) {
        let nodes = &self.nodes;
        let val = |v: Var| -> &[f64] { &nodes[v.0].value };
        match &nodes[i].op {
            Op::Leaf => {}
            Op::Add(a, b) => {
                add_into(slot(lower, nodes, *a), g, 1.0);
                add_into(slot(lower, nodes, *b), g, 1.0);
            }
            Op::Sub(a, b) => {
                add_into(slot(lower, nodes, *a), g, 1.0);
                add_into(slot(lower, nodes, *b), g, -1.0);
            }
            Op::Mul(a, b) => {
                let (x, y) = (val(*a).to_vec(), val(*b).to_vec());
                slot(lower, nodes, *a).iter_mut().zip(g).zip(&y).for_each(|((o, g), y)| *o += g * y);
                slot(lower, nodes, *b).iter_mut().zip(g).zip(&x).for_each(|((o, g), x)| *o += g * x);
            }
            Op::AddN(terms) => {
                for &t in terms {
                    add_into(slot(lower, nodes, t), g, 1.0);
                }
            }
            Op::LinComb(terms) => {
                for &(t, c) in terms {
                    add_into(slot(lower, nodes, t), g, c);
                }
            }
            Op::Scale(a, c) => add_into(slot(lower, nodes, *a), g, *c),
            Op::Offset(a) => add_into(slot(lower, nodes, *a), g, 1.0),
            Op::Square(a) => {
                let x = val(*a);
                slot(lower, nodes, *a).iter_mut().zip(g).zip(x).for_each(|((o, g), x)| *o += 2.0 * x * g);
            }
            Op::Abs(a) => {
                let x = val(*a);
                slot(lower, nodes, *a).iter_mut().zip(g).zip(x).for_each(|((o, g), x)| *o += sign(*x) * g);
            }
            Op::Relu(a) => {
                let x = val(*a);
                slot(lower, nodes, *a).iter_mut().zip(g).zip(x).for_each(|((o, g), x)| {
                    if *x > 0.0 {
                        *o += g
                    }
                });
            }
            Op::Exp(a) => {
                let y = &nodes[i].value;
                slot(lower, nodes, *a).iter_mut().zip(g).zip(y).for_each(|((o, g), y)| *o += g * y);
            }
            Op::Powf(a, p) => {
                let x = val(*a);
                slot(lower, nodes, *a).iter_mut().zip(g).zip(x).for_each(|((o, g), x)| {
                    *o += g * p * x.powf(p - 1.0);
                });
            }
            Op::Sum(a) => slot(lower, nodes, *a).iter_mut().for_each(|o| *o += g[0]),
            Op::Dot(a, b) => {
                let (x, y) = (val(*a).to_vec(), val(*b).to_vec());
                add_into(slot(lower, nodes, *a), &y, g[0]);
                add_into(slot(lower, nodes, *b), &x, g[0]);
            }
            Op::MatVec { mat, x, rows, cols } => {
                let (m, xv) = (val(*mat), val(*x));
                let gm = slot(lower, nodes, *mat);
                for r in 0..*rows {
                    let gr = g[r];
                    if gr != 0.0 {
                        add_into(&mut gm[r * cols..(r + 1) * cols], xv, gr);
                    }
                }
                let gx = slot(lower, nodes, *x);
                for r in 0..*rows {
                    let gr = g[r];
                    if gr != 0.0 {
                        add_into(gx, &m[r * cols..(r + 1) * cols], gr);
                    }
                }
            }
            Op::Slice { src, start } => {
                let s = slot(lower, nodes, *src);
                add_into(&mut s[*start..*start + g.len()], g, 1.0);
            }
            Op::Concat(parts) => {
                let mut off = 0;
                for &p in parts {
                    let n = nodes[p.0].value.len();
                    add_into(slot(lower, nodes, p), &g[off..off + n], 1.0);
                    off += n;
                }
            }
            Op::Gather { src, idx } => {
                let s = slot(lower, nodes, *src);
                for (&k, g) in idx.iter().zip(g) {
                    s[k] += g;
                }
            }
            Op::Reparam { mean, spread, noise } => {
                add_into(slot(lower, nodes, *mean), g, 1.0);
                let s = val(*spread).to_vec();
                slot(lower, nodes, *spread).iter_mut().zip(g).zip(s.iter().zip(noise)).for_each(|((o, g), (s, e))| {
                    *o += g * sign(*s) * e;
                });
            }
            Op::PairedSqDist(d) => {
                let p = val(d.pred);
                let gp = slot(lower, nodes, d.pred);
                let c = 2.0 * d.scale * g[0];
                for (&pi, &ti) in d.pred_idx.iter().zip(&d.target_idx) {
                    let dim = d.dim;
                    for k in 0..dim {
                        gp[pi * dim + k] += c * (p[pi * dim + k] - d.target[ti * dim + k]);
                    }
                }
            }
            Op::SumSqDev { src, idx, dim } => {
                let x = val(*src);
                let mean = point_mean(x, idx, *dim);
                let gs = slot(lower, nodes, *src);
                for &i in idx {
                    for k in 0..*dim {
                        gs[i * dim + k] += 2.0 * g[0] * (x[i * dim + k] - mean[k]);
                    }
                }
            }
            Op::Mmd(d) => {
                let pooled = pool_points(&d.target, &d.target_idx, val(d.pred), &d.pred_idx, d.dim);
                let n_a = d.target_idx.len();
                let (_, grad) = mmd_pooled(&pooled, n_a, d.dim, true);
                let gp = slot(lower, nodes, d.pred);
                for (s, &pi) in d.pred_idx.iter().enumerate() {
                    for k in 0..d.dim {
                        gp[pi * d.dim + k] += g[0] * grad[(n_a + s) * d.dim + k];
                    }
                }
            }
        }
    }
}

fn slot<'a>(lower: &'a mut [Vec<f64>], nodes: &[Node], v: Var) -> &'a mut Vec<f64> {
    let slot = &mut lower[v.0];
    if slot.is_empty() {
        *slot = vec![0.0; nodes[v.0].value.len()];
    }
    slot
}

#[inline]
fn sign(x: f64) -> f64 {
    if x > 0.0 {
        1.0
    } else if x < 0.0 {
        -1.0
    } else {
        0.0
    }
}

#[inline]
fn add_into(dst: &mut [f64], src: &[f64], c: f64) {
    debug_assert_eq!(dst.len(), src.len());
    dst.iter_mut().zip(src).for_each(|(d, s)| *d += c * s);
}

fn point_mean(x: &[f64], idx: &[usize], dim: usize) -> Vec<f64> {
    let mut mean = vec![0.0; dim];
    for &i in idx {
        add_into(&mut mean, &x[i * dim..(i + 1) * dim], 1.0);
    }
    let n = idx.len().max(1) as f64;
    mean.iter_mut().for_each(|m| *m /= n);
    mean
}

fn pool_points(target: &[f64], target_idx: &[usize], pred: &[f64], pred_idx: &[usize], dim: usize) -> Vec<f64> {
    let mut pooled = Vec::with_capacity((target_idx.len() + pred_idx.len()) * dim);
    for &i in target_idx {
        pooled.extend_from_slice(&target[i * dim..(i + 1) * dim]);
    }
    for &i in pred_idx {
        pooled.extend_from_slice(&pred[i * dim..(i + 1) * dim]);
    }
    pooled
}

/// Number of bandwidths and their ratio in the MMD kernel mixture.
pub const MMD_KERNELS: usize = 5;
pub const MMD_MULTIPLIER: f64 = 2.0;

/// V-statistic MMD between the first `n_a` pooled points and the rest.
///
/// Bandwidths are `β · 2^(k-2)`, `k = 0..5`, with `β` the mean squared
/// distance over distinct ordered pairs of the pooled set. The gradient (with
/// respect to every pooled point) includes the dependence of `β` on the
/// points.
pub(crate) fn mmd_pooled(pooled: &[f64], n_a: usize, dim: usize, with_grad: bool) -> (f64, Vec<f64>) {
    let p = pooled.len() / dim;
    let n_b = p - n_a;
    if n_a == 0 || n_b == 0 {
        return (0.0, vec![0.0; pooled.len()]);
    }
    let point = |i: usize| &pooled[i * dim..(i + 1) * dim];
    let mut dist = vec![0.0; p * p];
    let mut total = 0.0;
    for i in 0..p {
        for j in (i + 1)..p {
            let d: f64 = point(i).iter().zip(point(j)).map(|(a, b)| (a - b) * (a - b)).sum();
            dist[i * p + j] = d;
            dist[j * p + i] = d;
            total += 2.0 * d;
        }
    }
    let pairs = (p * (p - 1)) as f64;
    let raw_beta = total / pairs;
    let beta_free = raw_beta > 0.0;
    let beta = if beta_free { raw_beta } else { 1.0 };
    let widths: Vec<f64> = (0..MMD_KERNELS)
        .map(|k| beta * MMD_MULTIPLIER.powi(k as i32 - (MMD_KERNELS / 2) as i32))
        .collect();
    let weight = |i: usize, j: usize| -> f64 {
        match (i < n_a, j < n_a) {
            (true, true) => 1.0 / (n_a * n_a) as f64,
            (false, false) => 1.0 / (n_b * n_b) as f64,
            _ => -1.0 / (n_a * n_b) as f64,
        }
    };
    let mut value = 0.0;
    let mut dval_dbeta = 0.0;
    // dK/dD per pair, weighted.
    let mut gpair = if with_grad { vec![0.0; p * p] } else { Vec::new() };
    for i in 0..p {
        for j in 0..p {
            let d = dist[i * p + j];
            let w = weight(i, j);
            let mut k_sum = 0.0;
            let mut dk_dd = 0.0;
            let mut dk_dbeta = 0.0;
            for &h in &widths {
                let e = (-d / h).exp();
                k_sum += e;
                if with_grad {
                    dk_dd -= e / h;
                    // h = beta * s, so d/dbeta exp(-d/(beta s)) = e * d / (beta h).
                    dk_dbeta += e * d / (beta * h);
                }
            }
            value += w * k_sum;
            if with_grad {
                gpair[i * p + j] = w * dk_dd;
                dval_dbeta += w * dk_dbeta;
            }
        }
    }
    if !with_grad {
        return (value, Vec::new());
    }
    let beta_share = if beta_free { dval_dbeta / pairs } else { 0.0 };
    let mut grad = vec![0.0; pooled.len()];
    for i in 0..p {
        for j in 0..p {
            if i == j {
                continue;
            }
            let g = gpair[i * p + j] + beta_share;
            // D_ij = ‖z_i - z_j‖²; G symmetric so both orderings contribute.
            for k in 0..dim {
                grad[i * dim + k] += 4.0 * g * (pooled[i * dim + k] - pooled[j * dim + k]);
            }
        }
    }
    (value, grad)
}

/// Gradients produced by [`Tape::backward`].
#[derive(Debug, Clone)]
pub struct Gradients {
    grads: Vec<Vec<f64>>,
}

impl Gradients {
    /// Gradient with respect to `v`, or `None` if the root does not depend on it.
    pub fn wrt(&self, v: Var) -> Option<&[f64]> {
        self.grads.get(v.0).filter(|g| !g.is_empty()).map(Vec::as_slice)
    }

    pub fn wrt_or_zeros(&self, tape: &Tape, v: Var) -> Vec<f64> {
        self.wrt(v).map(<[f64]>::to_vec).unwrap_or_else(|| vec![0.0; tape.len_of(v)])
    }
}

/// Records `program` on a fresh tape and returns its scalar value.
pub fn forward_eval(program: impl FnOnce(&mut Tape) -> Var) -> Result<(f64, Tape, Var)> {
    let mut tape = Tape::new();
    let root = program(&mut tape);
    tape.check()?;
    let len = tape.len_of(root);
    if len != 1 {
        return Err(Error::NonScalarRoot(len));
    }
    Ok((tape.scalar(root), tape, root))
}

/// Evaluates a program over `params`, writing the gradient into `params`.
pub fn value_and_grad(
    params: &mut ParamVector,
    program: impl FnOnce(&mut Tape, Var) -> Var,
) -> Result<f64> {
    let mut leaf = None;
    let (value, tape, root) = forward_eval(|t| {
        let p = t.param_leaf(params);
        leaf = Some(p);
        program(t, p)
    })?;
    let grads = tape.backward(root)?;
    let leaf = leaf.expect("program ran");
    params.gradient = grads.wrt_or_zeros(&tape, leaf);
    Ok(value)
}

/// Outcome of comparing reverse-mode gradients with central differences.
#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    pub worst_coordinate: usize,
    pub tolerance: f64,
    pub passed: bool,
    pub analytic: Vec<f64>,
    pub numeric: Vec<f64>,
}

/// Denominator floor for relative errors; gradients below this compare absolutely.
pub const GRADCHECK_FLOOR: f64 = 1e-6;

/// Central finite-difference check of `program` at `params`.
pub fn gradient_check(
    program: impl Fn(&mut Tape, Var) -> Var,
    params: &ParamVector,
    step: f64,
    tolerance: f64,
) -> Result<GradCheckReport> {
    if !(1e-6..=1e-3).contains(&step) {
        return Err(Error::invalid(format!("finite-difference step {step} outside [1e-6, 1e-3]")));
    }
    let mut work = params.clone();
    let first = value_and_grad(&mut work, &program)?;
    let analytic = work.gradient.clone();
    let second = eval_at(&program, &params.values)?;
    if first.to_bits() != second.to_bits() {
        return Err(Error::NonDeterministic { first, second });
    }
    let mut numeric = vec![0.0; analytic.len()];
    let mut values = params.values.clone();
    for k in 0..values.len() {
        let orig = values[k];
        values[k] = orig + step;
        let up = eval_at(&program, &values)?;
        values[k] = orig - step;
        let down = eval_at(&program, &values)?;
        values[k] = orig;
        numeric[k] = (up - down) / (2.0 * step);
    }
    let (mut worst, mut worst_k) = (0.0f64, 0usize);
    for (k, (a, n)) in analytic.iter().zip(&numeric).enumerate() {
        let rel = (a - n).abs() / a.abs().max(n.abs()).max(GRADCHECK_FLOOR);
        if rel > worst {
            worst = rel;
            worst_k = k;
        }
    }
    Ok(GradCheckReport {
        max_rel_error: worst,
        worst_coordinate: worst_k,
        tolerance,
        passed: worst <= tolerance,
        analytic,
        numeric,
    })
}

fn eval_at(program: &impl Fn(&mut Tape, Var) -> Var, values: &[f64]) -> Result<f64> {
    let (v, _, _) = forward_eval(|t| {
        let p = t.leaf(values.to_vec());
        program(t, p)
    })?;
    Ok(v)
}

/// Contiguous named run of parameters.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ParamBlock {
    pub name: String,
    pub offset: usize,
    pub len: usize,
    pub trainable: bool,
}

/// Flat parameter storage shared by models, the tape and the optimizer.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ParamVector {
    blocks: Vec<ParamBlock>,
    pub values: Vec<f64>,
    pub gradient: Vec<f64>,
}

impl ParamVector {
    pub fn new() -> Self {
        Self::default()
    }

    /// Appends a block and returns its offset.
    pub fn push_block(&mut self, name: &str, values: Vec<f64>, trainable: bool) -> Result<usize> {
        if self.blocks.iter().any(|b| b.name == name) {
            return Err(Error::invalid(format!("duplicate parameter block {name:?}")));
        }
        if name.contains(['=', '[', ']']) || name.trim() != name || name.is_empty() {
            return Err(Error::invalid(format!("bad parameter block name {name:?}")));
        }
        crate::error::ensure_finite(&values, "parameter block")?;
        let offset = self.values.len();
        self.blocks.push(ParamBlock { name: name.to_string(), offset, len: values.len(), trainable });
        self.gradient.extend(std::iter::repeat_n(0.0, values.len()));
        self.values.extend(values);
        Ok(offset)
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn blocks(&self) -> &[ParamBlock] {
        &self.blocks
    }

    pub fn block(&self, name: &str) -> Option<&ParamBlock> {
        self.blocks.iter().find(|b| b.name == name)
    }

    pub fn block_values(&self, name: &str) -> Option<&[f64]> {
        self.block(name).map(|b| &self.values[b.offset..b.offset + b.len])
    }

    pub fn block_values_mut(&mut self, name: &str) -> Option<&mut [f64]> {
        let b = self.block(name)?.clone();
        Some(&mut self.values[b.offset..b.offset + b.len])
    }

    pub fn set_trainable(&mut self, name: &str, trainable: bool) {
        if let Some(b) = self.blocks.iter_mut().find(|b| b.name == name) {
            b.trainable = trainable;
        }
    }

    /// Per-coordinate trainable flags.
    pub fn trainable_mask(&self) -> Vec<bool> {
        let mut mask = Vec::with_capacity(self.len());
        for b in &self.blocks {
            mask.extend(std::iter::repeat_n(b.trainable, b.len));
        }
        mask
    }

    /// Element names in storage order, `block[k]`.
    pub fn names(&self) -> Vec<String> {
        self.blocks.iter().flat_map(|b| (0..b.len).map(move |k| format!("{}[{}]", b.name, k))).collect()
    }

    pub fn zero_grad(&mut self) {
        self.gradient.iter_mut().for_each(|g| *g = 0.0);
    }

    /// `name=value` lines, values in 17 significant digits.
    pub fn to_checkpoint(&self) -> String {
        let mut out = String::new();
        for (name, v) in self.names().iter().zip(&self.values) {
            out.push_str(name);
            out.push('=');
            out.push_str(&format!("{v:.16e}"));
            out.push('\n');
        }
        out
    }

    /// Loads values written by [`ParamVector::to_checkpoint`] into this layout.
    pub fn load_checkpoint(&mut self, text: &str) -> Result<()> {
        let names = self.names();
        let mut seen = vec![false; names.len()];
        let lookup: std::collections::HashMap<&str, usize> =
            names.iter().enumerate().map(|(i, n)| (n.as_str(), i)).collect();
        let mut values = self.values.clone();
        for (lineno, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let bad = |reason: &str| Error::Checkpoint { line: lineno + 1, reason: reason.to_string() };
            let (name, value) = line.split_once('=').ok_or_else(|| bad("expected name=value"))?;
            let &i = lookup.get(name.trim()).ok_or_else(|| bad("unknown parameter"))?;
            let v: f64 = value.trim().parse().map_err(|_| bad("value is not a number"))?;
            if !v.is_finite() {
                return Err(bad("value is not finite"));
            }
            values[i] = v;
            seen[i] = true;
        }
        if let Some(missing) = seen.iter().position(|s| !s) {
            return Err(Error::Checkpoint { line: 0, reason: format!("missing {}", names[missing]) });
        }
        self.values = values;
        Ok(())
    }

    pub fn save(&self, path: &std::path::Path) -> Result<()> {
        std::fs::write(path, self.to_checkpoint()).map_err(|e| Error::io(path, e))
    }

    pub fn load(&mut self, path: &std::path::Path) -> Result<()> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        self.load_checkpoint(&text)
    }
}
