//! Training objectives: local and global squared W2, MMD, MSE and
//! mean²+var.
//!
//! Every objective is recorded on a [`Tape`] so the same code path serves
//! evaluation and training. For W2 kinds the optimal couplings are computed
//! from the current prediction values and then held fixed, which yields the
//! envelope gradient of the transport cost.
//!
//! The MMD kernel is `Σ_{k=0..4} exp(-‖u-v‖² / (β 2^{k-2}))` with `β` the mean
//! squared distance over distinct pairs of the pooled set.

use std::collections::HashMap;
use std::fmt;
use std::str::FromStr;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::autodiff::{forward_eval, Tape, Var};
use crate::error::{Error, Result};
use crate::neighborhoods::NeighborhoodIndex;
use crate::transport::{optimal_coupling, CouplingPlan, PointCloud};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LossFamily {
    W2,
    Mmd,
    Mse,
    Mean2Var,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Locality {
    Local,
    Global,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct LossKind {
    pub family: LossFamily,
    pub locality: Locality,
}

impl LossKind {
    pub const LOCAL_W2: LossKind = LossKind { family: LossFamily::W2, locality: Locality::Local };

    pub fn new(family: LossFamily, locality: Locality) -> Self {
        LossKind { family, locality }
    }

    pub fn all() -> Vec<LossKind> {
        let mut v = Vec::new();
        for locality in [Locality::Local, Locality::Global] {
            for family in [LossFamily::W2, LossFamily::Mmd, LossFamily::Mse, LossFamily::Mean2Var] {
                v.push(LossKind { family, locality });
            }
        }
        v
    }
}

impl fmt::Display for LossFamily {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            LossFamily::W2 => "w2",
            LossFamily::Mmd => "mmd",
            LossFamily::Mse => "mse",
            LossFamily::Mean2Var => "mean2var",
        })
    }
}

impl FromStr for LossFamily {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "w2" => Ok(LossFamily::W2),
            "mmd" => Ok(LossFamily::Mmd),
            "mse" => Ok(LossFamily::Mse),
            "mean2var" => Ok(LossFamily::Mean2Var),
            _ => Err(Error::invalid(format!("unknown loss family {s:?}"))),
        }
    }
}

impl fmt::Display for LossKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let loc = match self.locality {
            Locality::Local => "local",
            Locality::Global => "global",
        };
        write!(f, "{loc}-{}", self.family)
    }
}

impl FromStr for LossKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let (loc, fam) = s.split_once('-').ok_or_else(|| Error::invalid(format!("unknown loss {s:?}")))?;
        let locality = match loc {
            "local" => Locality::Local,
            "global" => Locality::Global,
            _ => return Err(Error::invalid(format!("unknown loss {s:?}"))),
        };
        Ok(LossKind { family: fam.parse()?, locality })
    }
}

/// Value of a loss together with its per-anchor breakdown.
#[derive(Debug, Clone, PartialEq)]
pub struct LossReport {
    pub value: f64,
    /// One entry per anchor for local kinds, a single entry for global ones.
    pub per_anchor: Vec<f64>,
    /// Couplings (W2 kinds only), aligned with `per_anchor`; indices are
    /// positions within the anchor's member list.
    pub couplings: Vec<CouplingPlan>,
    /// True when a slightly negative MMD was clamped to zero.
    pub clamped: bool,
}

/// Anchors sharing a member list, evaluated once.
#[derive(Debug, Clone)]
struct Group {
    members: Vec<usize>,
    weight: f64,
    anchors: Vec<usize>,
}

fn groups(index: Option<&NeighborhoodIndex>, n: usize) -> Vec<Group> {
    let Some(index) = index else {
        return vec![Group { members: (0..n).collect(), weight: 1.0, anchors: vec![0] }];
    };
    let na = index.num_anchors() as f64;
    let mut out: Vec<Group> = Vec::new();
    let mut seen: HashMap<&[usize], usize> = HashMap::new();
    for (a, m) in index.all_members().iter().enumerate() {
        match seen.get(m.as_slice()) {
            Some(&g) => {
                out[g].weight += 1.0 / na;
                out[g].anchors.push(a);
            }
            None => {
                seen.insert(m.as_slice(), out.len());
                out.push(Group { members: m.clone(), weight: 1.0 / na, anchors: vec![a] });
            }
        }
    }
    out
}

/// Recorded loss plus the per-group statistics it combined.
pub struct RecordedLoss {
    pub root: Var,
    group_stats: Vec<Var>,
    groups: Vec<Group>,
    couplings: Vec<Option<CouplingPlan>>,
    num_anchors: usize,
}

impl RecordedLoss {
    fn report(&self, tape: &Tape, family: LossFamily) -> LossReport {
        let mut per_anchor = vec![0.0; self.num_anchors];
        let mut couplings = vec![CouplingPlan { assignment: Vec::new(), cost: 0.0 }; self.num_anchors];
        for ((g, &s), c) in self.groups.iter().zip(&self.group_stats).zip(&self.couplings) {
            for &a in &g.anchors {
                per_anchor[a] = tape.scalar(s);
                if let Some(c) = c {
                    couplings[a] = c.clone();
                }
            }
        }
        let mut value = tape.scalar(self.root);
        let clamped = family == LossFamily::Mmd && value < 0.0;
        if clamped {
            value = 0.0;
        }
        if family != LossFamily::W2 {
            couplings.clear();
        }
        LossReport { value, per_anchor, couplings, clamped }
    }
}

/// Records `kind` between `truth` (flat, `dim`-sized points) and the
/// prediction node `preds`, indexed identically.
pub fn record_loss(
    tape: &mut Tape,
    kind: LossKind,
    truth: &Arc<[f64]>,
    dim: usize,
    preds: Var,
    index: Option<&NeighborhoodIndex>,
) -> Result<RecordedLoss> {
    let plen = tape.value(preds).len();
    if dim == 0 || !truth.len().is_multiple_of(dim) {
        return Err(Error::DimensionMismatch { expected: dim, got: truth.len() });
    }
    if plen != truth.len() {
        return Err(Error::SizeMismatch { left: truth.len() / dim, right: plen / dim });
    }
    let n = truth.len() / dim;
    if n == 0 {
        return Err(Error::Empty("loss samples"));
    }
    let index = match (kind.locality, index) {
        (Locality::Local, None) => return Err(Error::invalid(format!("{kind} needs a neighborhood index"))),
        (Locality::Local, Some(ix)) => {
            if ix.num_points() > n {
                return Err(Error::SizeMismatch { left: ix.num_points(), right: n });
            }
            Some(ix)
        }
        (Locality::Global, _) => None,
    };
    let groups = groups(index, n);
    let num_anchors = index.map_or(1, NeighborhoodIndex::num_anchors);
    let mut stats = Vec::with_capacity(groups.len());
    let mut couplings = Vec::with_capacity(groups.len());
    for g in &groups {
        let k = g.members.len();
        let m = &g.members;
        let (stat, plan) = match kind.family {
            LossFamily::W2 => {
                let t = PointCloud::new(gather(truth, m, dim), dim)?;
                let p = PointCloud::new(gather(tape.value(preds), m, dim), dim)?;
                let plan = optimal_coupling(&t, &p)?;
                let pred_idx = plan.assignment.iter().map(|&j| m[j]).collect();
                let s = tape.paired_sq_dist(preds, pred_idx, truth.clone(), m.clone(), dim, 1.0 / k as f64);
                (s, Some(plan))
            }
            LossFamily::Mse => (tape.paired_sq_dist(preds, m.clone(), truth.clone(), m.clone(), dim, 1.0 / k as f64), None),
            LossFamily::Mean2Var => {
                let mse = tape.paired_sq_dist(preds, m.clone(), truth.clone(), m.clone(), dim, 1.0 / k as f64);
                let pv = tape.sum_sq_dev(preds, m.clone(), dim);
                let tv = tape.constant(vec![sum_sq_dev(truth, m, dim)]);
                let diff = tape.sub(pv, tv);
                let gap = tape.abs(diff);
                (tape.add(mse, gap), None)
            }
            LossFamily::Mmd => (tape.mmd(preds, m.clone(), truth.clone(), m.clone(), dim), None),
        };
        stats.push(stat);
        couplings.push(plan);
    }
    let terms: Vec<(Var, f64)> = stats.iter().zip(&groups).map(|(&s, g)| (s, g.weight)).collect();
    let root = tape.lincomb(&terms);
    Ok(RecordedLoss { root, group_stats: stats, groups, couplings, num_anchors })
}

fn gather(flat: &[f64], idx: &[usize], dim: usize) -> Vec<f64> {
    idx.iter().flat_map(|&i| flat[i * dim..(i + 1) * dim].iter().copied()).collect()
}

fn sum_sq_dev(flat: &[f64], idx: &[usize], dim: usize) -> f64 {
    let k = idx.len() as f64;
    let mut mean = vec![0.0; dim];
    for &i in idx {
        mean.iter_mut().zip(&flat[i * dim..(i + 1) * dim]).for_each(|(m, v)| *m += v / k);
    }
    idx.iter()
        .map(|&i| flat[i * dim..(i + 1) * dim].iter().zip(&mean).map(|(v, m)| (v - m).powi(2)).sum::<f64>())
        .sum()
}

/// Evaluates `kind` on fixed clouds.
pub fn evaluate_loss(
    kind: LossKind,
    truth: &PointCloud,
    preds: &PointCloud,
    index: Option<&NeighborhoodIndex>,
) -> Result<LossReport> {
    if truth.dim() != preds.dim() {
        return Err(Error::DimensionMismatch { expected: truth.dim(), got: preds.dim() });
    }
    if truth.len() != preds.len() {
        return Err(Error::SizeMismatch { left: truth.len(), right: preds.len() });
    }
    let target: Arc<[f64]> = truth.as_slice().into();
    let mut recorded = None;
    let (_, tape, _) = forward_eval(|t| {
        let p = t.constant(preds.as_slice().to_vec());
        match record_loss(t, kind, &target, truth.dim(), p, index) {
            Ok(r) => {
                let root = r.root;
                recorded = Some(Ok(r));
                root
            }
            Err(e) => {
                recorded = Some(Err(e));
                t.constant(vec![0.0])
            }
        }
    })?;
    let recorded = recorded.expect("program ran")?;
    Ok(recorded.report(&tape, kind.family))
}

/// Mean over anchors of the squared W2 distance between neighborhood clouds.
pub fn local_w2_loss(truth: &PointCloud, preds: &PointCloud, index: &NeighborhoodIndex) -> Result<LossReport> {
    evaluate_loss(LossKind::LOCAL_W2, truth, preds, Some(index))
}

/// Squared W2 between the full clouds, ignoring inputs.
pub fn global_w2_loss(truth: &PointCloud, preds: &PointCloud) -> Result<LossReport> {
    evaluate_loss(LossKind::new(LossFamily::W2, Locality::Global), truth, preds, None)
}

/// MMD, MSE or mean²+var, local or global.
pub fn baseline_loss(
    kind: LossKind,
    truth: &PointCloud,
    preds: &PointCloud,
    index: Option<&NeighborhoodIndex>,
) -> Result<LossReport> {
    if kind.family == LossFamily::W2 {
        return Err(Error::invalid("w2 is not a baseline loss"));
    }
    evaluate_loss(kind, truth, preds, index)
}
