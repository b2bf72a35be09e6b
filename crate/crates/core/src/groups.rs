//! Group inference from reference-model outputs.
//!
//! [`statistical_split`] stratifies samples by the reference output until the
//! label and the reference log-odds are independent inside every block.
//! [`agreement_split`] and [`ei_soft_infer`] are the majority/minority
//! baselines.

use std::collections::VecDeque;
use std::io::{Read, Write};

use ndarray::Array2;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::stats::{two_sample_t, TTestKind};
use crate::PROB_FLOOR;

#[derive(Debug, Error)]
pub enum GroupError {
    #[error("reference outputs must have 2 columns, got {0}")]
    Columns(usize),
    #[error("row {row} of the reference outputs does not lie in the simplex")]
    NotSimplex { row: usize },
    #[error("{what} has length {found}, expected {expected}")]
    Length {
        what: &'static str,
        found: usize,
        expected: usize,
    },
    #[error("group {0} is empty")]
    EmptyGroup(usize),
    #[error("label {0} is not binary")]
    Label(u8),
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
    #[error("assignment csv: {0}")]
    Parse(String),
}

/// Reference-model class probabilities, one row per sample.
#[derive(Debug, Clone, PartialEq)]
pub struct ReferenceOutputs {
    pub probs: Array2<f64>,
}

impl ReferenceOutputs {
    pub fn new(probs: Array2<f64>) -> Result<Self, GroupError> {
        if probs.ncols() != 2 {
            return Err(GroupError::Columns(probs.ncols()));
        }
        for (row, r) in probs.rows().into_iter().enumerate() {
            let ok = r.iter().all(|&v| (0.0..=1.0).contains(&v)) && (r.sum() - 1.0).abs() <= 1e-9;
            if !ok {
                return Err(GroupError::NotSimplex { row });
            }
        }
        Ok(Self { probs })
    }

    pub fn len(&self) -> usize {
        self.probs.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.probs.nrows() == 0
    }

    /// `P(class 0)` clamped to `[1e-12, 1 - 1e-12]`.
    pub fn p0(&self, i: usize) -> f64 {
        self.probs[[i, 0]].clamp(PROB_FLOOR, 1.0 - PROB_FLOOR)
    }

    /// `log(f_r(x)_0 / f_r(x)_1)` with both entries clamped.
    pub fn log_odds(&self, i: usize) -> f64 {
        let a = self.probs[[i, 0]].clamp(PROB_FLOOR, 1.0 - PROB_FLOOR);
        let b = self.probs[[i, 1]].clamp(PROB_FLOOR, 1.0 - PROB_FLOOR);
        (a / b).ln()
    }

    /// Argmax class, lowest index on ties.
    pub fn predicted(&self, i: usize) -> u8 {
        u8::from(self.probs[[i, 1]] > self.probs[[i, 0]])
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LeafStat {
    /// Within-leaf t statistic of log-odds between label classes; `None`
    /// where it is undefined.
    pub t: Option<f64>,
    pub size: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupAssignment {
    pub group_of: Vec<usize>,
    pub m: usize,
    pub label_counts: Vec<[usize; 2]>,
    pub leaf_stats: Vec<LeafStat>,
    /// `weights[g][y] = omega^g(y)`, `None` for labels absent from `g`.
    pub weights: Option<Vec<[Option<f64>; 2]>>,
}

impl GroupAssignment {
    /// Builds an assignment from group indices `0..m`; every group must be
    /// non-empty.
    pub fn from_group_of(group_of: Vec<usize>, labels: &[u8]) -> Result<Self, GroupError> {
        if group_of.len() != labels.len() {
            return Err(GroupError::Length {
                what: "group_of",
                found: group_of.len(),
                expected: labels.len(),
            });
        }
        let m = group_of.iter().max().map_or(0, |&g| g + 1).max(1);
        let mut label_counts = vec![[0usize; 2]; m];
        for (&g, &y) in group_of.iter().zip(labels) {
            if y > 1 {
                return Err(GroupError::Label(y));
            }
            label_counts[g][y as usize] += 1;
        }
        if let Some(g) = label_counts.iter().position(|c| c[0] + c[1] == 0) {
            if !labels.is_empty() {
                return Err(GroupError::EmptyGroup(g));
            }
        }
        let leaf_stats = label_counts
            .iter()
            .map(|c| LeafStat {
                t: None,
                size: c[0] + c[1],
            })
            .collect();
        Ok(Self {
            group_of,
            m,
            label_counts,
            leaf_stats,
            weights: None,
        })
    }

    pub fn members(&self) -> Vec<Vec<usize>> {
        let mut out = vec![Vec::new(); self.m];
        for (i, &g) in self.group_of.iter().enumerate() {
            out[g].push(i);
        }
        out
    }

    /// Writes `sample_index,group_id` rows.
    pub fn write_csv<W: Write>(&self, writer: W) -> Result<(), GroupError> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record(["sample_index", "group_id"])?;
        for (i, g) in self.group_of.iter().enumerate() {
            w.write_record([i.to_string(), g.to_string()])?;
        }
        w.flush().map_err(csv::Error::from)?;
        Ok(())
    }

    /// Reads `sample_index,group_id` rows; indices must be `0..n` in order.
    pub fn read_csv<R: Read>(reader: R, labels: &[u8]) -> Result<Self, GroupError> {
        let mut r = csv::Reader::from_reader(reader);
        let mut group_of = Vec::new();
        for (k, rec) in r.records().enumerate() {
            let rec = rec?;
            let idx: usize = rec
                .get(0)
                .and_then(|s| s.parse().ok())
                .ok_or_else(|| GroupError::Parse(format!("row {k}: bad sample_index")))?;
            if idx != k {
                return Err(GroupError::Parse(format!(
                    "row {k}: sample_index {idx} out of order"
                )));
            }
            let g: usize = rec
                .get(1)
                .and_then(|s| s.parse().ok())
                .ok_or_else(|| GroupError::Parse(format!("row {k}: bad group_id")))?;
            group_of.push(g);
        }
        Self::from_group_of(group_of, labels)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "rule", rename_all = "snake_case")]
pub enum SplitRule {
    /// Split while `|t| > threshold`.
    TStat { threshold: f64 },
    /// Split while the two-sided p-value is below `p_threshold`.
    PValue { p_threshold: f64 },
}

fn check_inputs(reference: &ReferenceOutputs, labels: &[u8]) -> Result<(), GroupError> {
    if labels.len() != reference.len() {
        return Err(GroupError::Length {
            what: "labels",
            found: labels.len(),
            expected: reference.len(),
        });
    }
    if let Some(&y) = labels.iter().find(|&&y| y > 1) {
        return Err(GroupError::Label(y));
    }
    Ok(())
}

/// t statistic of reference log-odds between the label-0 and label-1 members
/// of `block`.
pub fn block_t(
    reference: &ReferenceOutputs,
    labels: &[u8],
    block: &[usize],
    kind: TTestKind,
) -> Option<f64> {
    let mut a = Vec::new();
    let mut b = Vec::new();
    for &i in block {
        let v = reference.log_odds(i);
        if labels[i] == 0 {
            a.push(v);
        } else {
            b.push(v);
        }
    }
    two_sample_t(&a, &b, kind).map(|t| t.t)
}

fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        (v[n / 2 - 1] + v[n / 2]) / 2.0
    }
}

/// Breadth-first stratification of the reference outputs.
///
/// A block whose label classes differ in reference log-odds (per `rule`) is
/// split at the median of `f_r(x)_0`, with ties going to the upper child.
/// Blocks with an undefined statistic, or whose split would leave a child
/// empty, become leaves. Leaves are numbered in the order they leave the
/// queue.
pub fn statistical_split(
    reference: &ReferenceOutputs,
    labels: &[u8],
    rule: SplitRule,
    kind: TTestKind,
) -> Result<GroupAssignment, GroupError> {
    check_inputs(reference, labels)?;
    let n = labels.len();
    let mut queue: VecDeque<Vec<usize>> = VecDeque::from([(0..n).collect::<Vec<_>>()]);
    let mut leaves: Vec<(Vec<usize>, Option<f64>)> = Vec::new();
    while let Some(block) = queue.pop_front() {
        let mut a = Vec::new();
        let mut b = Vec::new();
        for &i in &block {
            let v = reference.log_odds(i);
            if labels[i] == 0 {
                a.push(v);
            } else {
                b.push(v);
            }
        }
        let Some(test) = two_sample_t(&a, &b, kind) else {
            leaves.push((block, None));
            continue;
        };
        let split = match rule {
            SplitRule::TStat { threshold } => test.t.abs() > threshold,
            SplitRule::PValue { p_threshold } => test.p_value() < p_threshold,
        };
        if !split {
            leaves.push((block, Some(test.t)));
            continue;
        }
        let med = median(block.iter().map(|&i| reference.p0(i)).collect());
        let (upper, lower): (Vec<usize>, Vec<usize>) =
            block.iter().partition(|&&i| reference.p0(i) >= med);
        if upper.is_empty() || lower.is_empty() {
            leaves.push((block, Some(test.t)));
            continue;
        }
        queue.push_back(lower);
        queue.push_back(upper);
    }
    let mut group_of = vec![0usize; n];
    for (g, (members, _)) in leaves.iter().enumerate() {
        for &i in members {
            group_of[i] = g;
        }
    }
    let mut asg = GroupAssignment::from_group_of(group_of, labels)?;
    for (stat, (_, t)) in asg.leaf_stats.iter_mut().zip(&leaves) {
        stat.t = *t;
    }
    Ok(asg)
}

/// [`statistical_split`] with the pooled t statistic and threshold `thr`.
pub fn statistical_split_t(
    reference: &ReferenceOutputs,
    labels: &[u8],
    thr: f64,
) -> Result<GroupAssignment, GroupError> {
    statistical_split(
        reference,
        labels,
        SplitRule::TStat { threshold: thr },
        TTestKind::Pooled,
    )
}

fn two_way(
    member_of_first: impl Fn(usize) -> bool,
    labels: &[u8],
) -> Result<GroupAssignment, GroupError> {
    let first: Vec<bool> = (0..labels.len()).map(member_of_first).collect();
    let any_first = first.iter().any(|&f| f);
    let any_second = first.iter().any(|&f| !f);
    let group_of = first
        .iter()
        .map(|&f| {
            if any_first && any_second {
                usize::from(!f)
            } else {
                0
            }
        })
        .collect();
    GroupAssignment::from_group_of(group_of, labels)
}

/// Majority (group 0: reference argmax equals the label) and minority
/// (group 1) split; a single group when either side is empty.
pub fn agreement_split(
    reference: &ReferenceOutputs,
    labels: &[u8],
) -> Result<GroupAssignment, GroupError> {
    check_inputs(reference, labels)?;
    two_way(|i| reference.predicted(i) == labels[i], labels)
}

#[derive(Debug, Clone, PartialEq)]
pub struct SoftInference {
    pub assignment: GroupAssignment,
    /// IRM penalty of the reference under the returned soft assignment.
    pub penalty: f64,
    /// Set when the reference gives no gradient signal (every per-sample
    /// scale derivative vanishes).
    pub degenerate: bool,
}

/// Per-sample derivative of the cross-entropy with respect to a logit scale,
/// using `log p` as the logits.
fn scale_derivatives(reference: &ReferenceOutputs, labels: &[u8]) -> Vec<f64> {
    (0..labels.len())
        .map(|i| {
            let lp = [reference.p0(i).ln(), (1.0 - reference.p0(i)).ln()];
            let p = [lp[0].exp(), lp[1].exp()];
            p[0] * lp[0] + p[1] * lp[1] - lp[labels[i] as usize]
        })
        .collect()
}

fn soft_penalty(u: &[f64], q: &[f64]) -> (f64, f64, f64, f64, f64) {
    let n = u.len() as f64;
    let qs: f64 = q.iter().sum();
    let a: f64 = q.iter().zip(u).map(|(q, u)| q * u).sum();
    let total: f64 = u.iter().sum();
    let q1 = qs.max(1e-12);
    let q2 = (n - qs).max(1e-12);
    let g1 = a / q1;
    let g2 = (total - a) / q2;
    (g1 * g1 + g2 * g2, g1, g2, q1, q2)
}

/// Soft environment inference: per-sample logits `theta` define
/// `q = sigmoid(theta)`, the weight of each sample in environment 1 (the
/// rest goes to environment 0). Gradient ascent on the summed squared IRM
/// scale gradient of the fixed reference over both environments; the best
/// iterate is hardened at `q > 0.5` and relabelled so that group 0 is the
/// larger group.
pub fn ei_soft_infer(
    reference: &ReferenceOutputs,
    labels: &[u8],
    steps: usize,
    lr: f64,
    seed: u64,
) -> Result<SoftInference, GroupError> {
    check_inputs(reference, labels)?;
    let n = labels.len();
    let u = scale_derivatives(reference, labels);
    let degenerate = u.iter().all(|v| v.abs() < 1e-12);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut theta: Vec<f64> = (0..n).map(|_| StandardNormal.sample(&mut rng)).collect();
    let sigmoid = |t: f64| 1.0 / (1.0 + (-t).exp());
    let mut q: Vec<f64> = theta.iter().map(|&t| sigmoid(t)).collect();
    let (mut best_pen, ..) = soft_penalty(&u, &q);
    let mut best_theta = theta.clone();
    for _ in 0..steps {
        let (_, g1, g2, q1, q2) = soft_penalty(&u, &q);
        for i in 0..n {
            let dq = 2.0 * g1 * (u[i] - g1) / q1 - 2.0 * g2 * (u[i] - g2) / q2;
            // Scaled by n so the step size does not shrink with the sample count.
            theta[i] += lr * n as f64 * dq * q[i] * (1.0 - q[i]);
        }
        for (qi, &t) in q.iter_mut().zip(&theta) {
            *qi = sigmoid(t);
        }
        let (pen, ..) = soft_penalty(&u, &q);
        if pen > best_pen {
            best_pen = pen;
            best_theta.clone_from(&theta);
        }
    }
    let hard: Vec<bool> = best_theta.iter().map(|&t| sigmoid(t) > 0.5).collect();
    let ones = hard.iter().filter(|&&h| h).count();
    let first_is_ones = ones * 2 >= n;
    let assignment = two_way(|i| hard[i] == first_is_ones, labels)?;
    Ok(SoftInference {
        assignment,
        penalty: best_pen,
        degenerate,
    })
}

/// Per-group mean of the reference probability rows.
pub fn group_centers(
    reference: &ReferenceOutputs,
    asg: &GroupAssignment,
) -> Result<Array2<f64>, GroupError> {
    if asg.group_of.len() != reference.len() {
        return Err(GroupError::Length {
            what: "assignment",
            found: asg.group_of.len(),
            expected: reference.len(),
        });
    }
    let mut sums = Array2::<f64>::zeros((asg.m, 2));
    let mut counts = vec![0usize; asg.m];
    for (i, &g) in asg.group_of.iter().enumerate() {
        counts[g] += 1;
        sums[[g, 0]] += reference.probs[[i, 0]];
        sums[[g, 1]] += reference.probs[[i, 1]];
    }
    for (g, &c) in counts.iter().enumerate() {
        if c == 0 {
            return Err(GroupError::EmptyGroup(g));
        }
        sums[[g, 0]] /= c as f64;
        sums[[g, 1]] /= c as f64;
    }
    Ok(sums)
}
