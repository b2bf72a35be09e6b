//! Label-balanced group invariant training.
//!
//! The objective is `sum_g R^g(f) + lambda_eff * penalty`, where `R^g` is the
//! weighted mean cross-entropy of group `g` with per-sample weight
//! `base_i * omega^g(y_i)` and `omega^g(y) = P(Y=y) / P(Y=y|g)`. Optimisation
//! is gradient descent or Adam with a fixed learning rate.

use ndarray::{Array2, Zip};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dataset::LabeledDataset;
use crate::groups::GroupAssignment;
use crate::model::{
    irm_scale_logits, log_softmax_rows, softmax_rows, weighted_ce_grad, weighted_ce_logits,
    Architecture, Gradient, ModelError, ModelParams,
};
use crate::PROB_FLOOR;

#[derive(Debug, Error)]
pub enum TrainError {
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error("assignment covers {found} samples, dataset has {expected}")]
    Assignment { found: usize, expected: usize },
    #[error("invalid config: {0}")]
    Config(String),
    #[error("diverged at epoch {epoch}: risk {risk}, penalty {penalty}")]
    Diverged {
        epoch: usize,
        risk: f64,
        penalty: f64,
    },
}

pub const DEFAULT_BANDWIDTHS: [f64; 3] = [1.0, 5.0, 10.0];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum PenaltyKind {
    /// Sum over groups of the squared logit-scale gradient of the group risk.
    Irm,
    /// Population variance of the group risks.
    Rex,
    /// Class-conditional MMD between groups on log-probabilities.
    Cmmd { bandwidths: Vec<f64> },
    /// Class-conditional KL between group-mean predicted distributions.
    Pgi,
}

impl PenaltyKind {
    pub fn cmmd_default() -> Self {
        PenaltyKind::Cmmd {
            bandwidths: DEFAULT_BANDWIDTHS.to_vec(),
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            PenaltyKind::Irm => "irm",
            PenaltyKind::Rex => "rex",
            PenaltyKind::Cmmd { .. } => "cmmd",
            PenaltyKind::Pgi => "pgi",
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Optimizer {
    #[default]
    Sgd,
    /// `beta1 = 0.9`, `beta2 = 0.999`, `eps = 1e-8`.
    Adam,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub lr: f64,
    pub epochs: usize,
    /// The penalty is off for epochs `< anneal_epochs`.
    pub anneal_epochs: usize,
    pub lambda: f64,
    /// `0` switches the penalty on in one step; otherwise `lambda_eff` grows
    /// by `ramp_rate * lambda` per epoch after annealing, capped at `lambda`.
    pub ramp_rate: f64,
    pub seed: u64,
    pub penalty: PenaltyKind,
    /// Snapshot interval in epochs; `None` uses `max(1, epochs / 13)`.
    pub checkpoint_every: Option<usize>,
    /// Multiply sample weights by `omega^g(y)`.
    pub reweight: bool,
    /// Use the reweighted risks inside the penalty (otherwise base weights).
    pub penalty_uses_weights: bool,
    /// Divide the whole objective by `lambda_eff` when it exceeds 1.
    pub rescale_penalty: bool,
    /// Mini-batch size; `None` is full-batch.
    pub batch_size: Option<usize>,
    #[serde(default)]
    pub optimizer: Optimizer,
    /// Adds `l2 * sum ||W||^2` over weight matrices (not biases) to the
    /// objective before rescaling.
    #[serde(default)]
    pub l2: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            lr: 0.1,
            epochs: 800,
            anneal_epochs: 100,
            lambda: 1.0,
            ramp_rate: 0.0,
            seed: 0,
            penalty: PenaltyKind::Irm,
            checkpoint_every: None,
            reweight: true,
            penalty_uses_weights: true,
            rescale_penalty: true,
            batch_size: None,
            optimizer: Optimizer::Sgd,
            l2: 0.0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), TrainError> {
        let bad = |m: &str| Err(TrainError::Config(m.to_string()));
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return bad("lr must be positive");
        }
        if self.anneal_epochs > self.epochs {
            return bad("anneal_epochs exceeds epochs");
        }
        if !(self.lambda >= 0.0 && self.lambda.is_finite()) {
            return bad("lambda must be finite and non-negative");
        }
        if !(self.l2 >= 0.0 && self.l2.is_finite()) {
            return bad("l2 must be finite and non-negative");
        }
        if !(0.0..=1.0).contains(&self.ramp_rate) {
            return bad("ramp_rate must lie in [0, 1]");
        }
        if let PenaltyKind::Cmmd { bandwidths } = &self.penalty {
            if bandwidths.is_empty() || bandwidths.iter().any(|&b| !(b > 0.0)) {
                return bad("cmmd bandwidths must be positive");
            }
        }
        if self.batch_size == Some(0) {
            return bad("batch_size must be positive");
        }
        if self.checkpoint_every == Some(0) {
            return bad("checkpoint_every must be positive");
        }
        Ok(())
    }

    pub fn lambda_at(&self, epoch: usize) -> f64 {
        if epoch < self.anneal_epochs {
            0.0
        } else if self.ramp_rate > 0.0 {
            let k = (epoch - self.anneal_epochs + 1) as f64;
            (self.ramp_rate * k).min(1.0) * self.lambda
        } else {
            self.lambda
        }
    }

    pub fn interval(&self) -> usize {
        self.checkpoint_every.unwrap_or((self.epochs / 13).max(1))
    }
}

/// `omega^g(y) = P(Y=y) / P(Y=y|g)` from label masses `sum_i mass_i` (counts
/// when every mass is 1). Attaches the table to `asg` and returns the
/// per-sample weights; labels absent from a group get no entry.
pub fn compute_group_weights_with_mass(
    asg: &mut GroupAssignment,
    labels: &[u8],
    mass: &[f64],
) -> Vec<f64> {
    let mut per_group = vec![[0.0f64; 2]; asg.m];
    let mut global = [0.0f64; 2];
    for ((&g, &y), &w) in asg.group_of.iter().zip(labels).zip(mass) {
        per_group[g][y as usize] += w;
        global[y as usize] += w;
    }
    let total = global[0] + global[1];
    let table: Vec<[Option<f64>; 2]> = per_group
        .iter()
        .map(|m| {
            let tot = m[0] + m[1];
            [0, 1].map(|y| (m[y] > 0.0).then(|| (global[y] / total) / (m[y] / tot)))
        })
        .collect();
    let out = asg
        .group_of
        .iter()
        .zip(labels)
        .map(|(&g, &y)| table[g][y as usize].unwrap_or(1.0))
        .collect();
    asg.weights = Some(table);
    out
}

/// [`compute_group_weights_with_mass`] with unit masses.
pub fn compute_group_weights(asg: &mut GroupAssignment, labels: &[u8]) -> Vec<f64> {
    compute_group_weights_with_mass(asg, labels, &vec![1.0; labels.len()])
}

/// Base weights `mass_i * n_g / mass_g` under which each group's weighted
/// mean over rows equals the mass-weighted expectation within the group.
pub fn fold_mass(asg: &GroupAssignment, mass: &[f64]) -> Vec<f64> {
    let mut n = vec![0.0; asg.m];
    let mut m = vec![0.0; asg.m];
    for (&g, &w) in asg.group_of.iter().zip(mass) {
        n[g] += 1.0;
        m[g] += w;
    }
    asg.group_of
        .iter()
        .zip(mass)
        .map(|(&g, &w)| w * n[g] / m[g])
        .collect()
}

/// Population variance of `risks` and its gradient with respect to each risk.
pub fn rex_penalty(risks: &[f64]) -> (f64, Vec<f64>) {
    let m = risks.len() as f64;
    let mean = risks.iter().sum::<f64>() / m;
    let value = risks.iter().map(|r| (r - mean).powi(2)).sum::<f64>() / m;
    let grad = risks.iter().map(|r| 2.0 * (r - mean) / m).collect();
    (value, grad)
}

/// Rows of one `(group, label)` cell with their sample weights.
#[derive(Debug, Clone, PartialEq)]
pub struct CellSet {
    pub rows: Array2<f64>,
    pub weights: Vec<f64>,
}

impl CellSet {
    fn normalized(&self) -> Vec<f64> {
        let s: f64 = self.weights.iter().sum();
        if s > 0.0 {
            self.weights.iter().map(|w| w / s).collect()
        } else {
            vec![1.0 / self.weights.len() as f64; self.weights.len()]
        }
    }
}

/// Cells indexed `[group][label]`; `None` for empty cells.
pub type Cells = Vec<[Option<CellSet>; 2]>;

#[derive(Debug, Clone, PartialEq)]
pub struct PenaltyOutput {
    pub value: f64,
    /// Gradient with respect to each cell's rows, same layout as the input.
    pub grads: Vec<[Option<Array2<f64>>; 2]>,
    /// `(group pair, label)` combinations skipped for an empty cell.
    pub skipped: usize,
}

fn zero_grads(cells: &Cells) -> Vec<[Option<Array2<f64>>; 2]> {
    cells
        .iter()
        .map(|pair| [0, 1].map(|y| pair[y].as_ref().map(|c| Array2::zeros(c.rows.raw_dim()))))
        .collect()
}

fn sq_dist(u: ndarray::ArrayView1<'_, f64>, v: ndarray::ArrayView1<'_, f64>) -> f64 {
    u.iter().zip(v.iter()).map(|(a, b)| (a - b) * (a - b)).sum()
}

/// `sum_i sum_j a_i b_j K(u_i, v_j)`, and optionally the gradient with
/// respect to each `u_i` (scaled by `scale`) accumulated into `gu`.
fn kernel_mean(
    u: &Array2<f64>,
    a: &[f64],
    v: &Array2<f64>,
    b: &[f64],
    bandwidths: &[f64],
    scale: f64,
    mut gu: Option<&mut Array2<f64>>,
) -> f64 {
    let mut total = 0.0;
    for i in 0..u.nrows() {
        let ui = u.row(i);
        for j in 0..v.nrows() {
            let vj = v.row(j);
            let d2 = sq_dist(ui, vj);
            let mut k = 0.0;
            let mut dk = 0.0;
            for &s in bandwidths {
                let e = (-d2 / (2.0 * s * s)).exp();
                k += e;
                dk += e / (s * s);
            }
            let w = a[i] * b[j];
            total += w * k;
            if let Some(g) = gu.as_deref_mut() {
                let c = -scale * w * dk;
                for t in 0..u.ncols() {
                    g[[i, t]] += c * (ui[t] - vj[t]);
                }
            }
        }
    }
    total
}

/// Weighted biased MMD^2 between cells of the same label across every
/// unordered group pair, summed over labels, with a Gaussian mixture kernel
/// `K(u, v) = sum_s exp(-|u - v|^2 / (2 s^2))`.
pub fn cmmd_penalty(cells: &Cells, bandwidths: &[f64]) -> PenaltyOutput {
    let m = cells.len();
    let mut grads = zero_grads(cells);
    let mut value = 0.0;
    let mut skipped = 0;
    for y in 0..2 {
        let w: Vec<Option<Vec<f64>>> = cells
            .iter()
            .map(|c| c[y].as_ref().map(CellSet::normalized))
            .collect();
        // Self terms and how many pairs each cell joins.
        let mut partners = vec![0usize; m];
        for g in 0..m {
            for h in g + 1..m {
                if cells[g][y].is_some() && cells[h][y].is_some() {
                    partners[g] += 1;
                    partners[h] += 1;
                } else {
                    skipped += 1;
                }
            }
        }
        for g in 0..m {
            if partners[g] == 0 {
                continue;
            }
            let c = cells[g][y].as_ref().expect("cell with partners");
            let wg = w[g].as_ref().expect("weights");
            let scale = partners[g] as f64;
            // d/du_i of sum_jk a_j a_k K(u_j, u_k) = 2 a_i sum_k a_k dK(u_i, u_k)
            let gu = grads[g][y].as_mut().expect("grad");
            value +=
                scale * kernel_mean(&c.rows, wg, &c.rows, wg, bandwidths, 2.0 * scale, Some(gu));
        }
        for g in 0..m {
            for h in g + 1..m {
                let (Some(cg), Some(ch)) = (cells[g][y].as_ref(), cells[h][y].as_ref()) else {
                    continue;
                };
                let (wg, wh) = (w[g].as_ref().expect("w"), w[h].as_ref().expect("w"));
                let cross = {
                    let gu = grads[g][y].as_mut().expect("grad");
                    kernel_mean(&cg.rows, wg, &ch.rows, wh, bandwidths, -2.0, Some(gu))
                };
                let gv = grads[h][y].as_mut().expect("grad");
                kernel_mean(&ch.rows, wh, &cg.rows, wg, bandwidths, -2.0, Some(gv));
                value -= 2.0 * cross;
            }
        }
    }
    PenaltyOutput {
        value,
        grads,
        skipped,
    }
}

/// Sum over unordered group pairs `g < h` and labels `y` of
/// `KL(mu_{g,y} || mu_{h,y})`, where `mu` is the weighted mean probability
/// row of a cell, clamped at `1e-12`.
pub fn pgi_penalty(cells: &Cells) -> PenaltyOutput {
    let m = cells.len();
    let mut grads = zero_grads(cells);
    let mut value = 0.0;
    let mut skipped = 0;
    for y in 0..2 {
        let w: Vec<Option<Vec<f64>>> = cells
            .iter()
            .map(|c| c[y].as_ref().map(CellSet::normalized))
            .collect();
        let mu: Vec<Option<Vec<f64>>> = cells
            .iter()
            .zip(&w)
            .map(|(c, w)| {
                c[y].as_ref().map(|c| {
                    let wv = w.as_ref().expect("w");
                    (0..c.rows.ncols())
                        .map(|k| c.rows.column(k).iter().zip(wv).map(|(p, w)| p * w).sum())
                        .collect()
                })
            })
            .collect();
        // dmu[g][k] accumulates d value / d mu_{g,y,k}.
        let mut dmu: Vec<Vec<f64>> = mu
            .iter()
            .map(|m| vec![0.0; m.as_ref().map_or(0, Vec::len)])
            .collect();
        for g in 0..m {
            for h in g + 1..m {
                let (Some(a), Some(b)) = (mu[g].as_ref(), mu[h].as_ref()) else {
                    skipped += 1;
                    continue;
                };
                for k in 0..a.len() {
                    let (ca, cb) = (a[k] >= PROB_FLOOR, b[k] >= PROB_FLOOR);
                    let (pa, pb) = (a[k].max(PROB_FLOOR), b[k].max(PROB_FLOOR));
                    value += pa * (pa.ln() - pb.ln());
                    if ca {
                        dmu[g][k] += pa.ln() - pb.ln() + 1.0;
                    }
                    if cb {
                        dmu[h][k] -= pa / pb;
                    }
                }
            }
        }
        for g in 0..m {
            if let (Some(gr), Some(wg)) = (grads[g][y].as_mut(), w[g].as_ref()) {
                for (i, mut row) in gr.rows_mut().into_iter().enumerate() {
                    for (k, v) in row.iter_mut().enumerate() {
                        *v = wg[i] * dmu[g][k];
                    }
                }
            }
        }
    }
    PenaltyOutput {
        value,
        grads,
        skipped,
    }
}

/// Training rows split by group and label.
#[derive(Debug, Clone)]
pub struct GroupIndex {
    /// `rows[g]`: members of group `g`.
    pub rows: Vec<Vec<usize>>,
}

impl GroupIndex {
    pub fn new(group_of: &[usize], m: usize, subset: &[usize]) -> Self {
        let mut rows = vec![Vec::new(); m];
        for &i in subset {
            rows[group_of[i]].push(i);
        }
        Self { rows }
    }
}

/// Everything the objective needs besides the parameters.
pub struct ObjectiveInputs<'a> {
    pub features: ndarray::ArrayView2<'a, f64>,
    pub labels: &'a [u8],
    /// Weights of the risk term.
    pub risk_weights: &'a [f64],
    /// Weights inside the penalty.
    pub penalty_weights: &'a [f64],
    pub groups: &'a GroupIndex,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ObjectiveValue {
    /// `sum_g R^g`
    pub risk: f64,
    pub penalty: f64,
    pub objective: f64,
}

fn cells_from(
    rows_of: impl Fn(&[usize]) -> Array2<f64>,
    inputs: &ObjectiveInputs<'_>,
) -> (Cells, Vec<[Vec<usize>; 2]>) {
    let mut cells = Vec::new();
    let mut index = Vec::new();
    for members in &inputs.groups.rows {
        let split: [Vec<usize>; 2] = [0u8, 1].map(|y| {
            members
                .iter()
                .copied()
                .filter(|&i| inputs.labels[i] == y)
                .collect()
        });
        let pair = [0, 1].map(|y| {
            (!split[y].is_empty()).then(|| CellSet {
                rows: rows_of(&split[y]),
                weights: split[y]
                    .iter()
                    .map(|&i| inputs.penalty_weights[i])
                    .collect(),
            })
        });
        cells.push(pair);
        index.push(split);
    }
    (cells, index)
}

/// Objective value and its parameter gradient, scaled by `scale`.
pub fn objective_grad(
    params: &ModelParams,
    inputs: &ObjectiveInputs<'_>,
    penalty: &PenaltyKind,
    lambda: f64,
    scale: f64,
) -> Result<(ObjectiveValue, Gradient), TrainError> {
    let cache = params.forward_cache(inputs.features)?;
    let logits = &cache.logits;
    let probs = softmax_rows(logits);
    let mut d = Array2::zeros(logits.raw_dim());
    let mut risk = 0.0;
    for rows in inputs.groups.rows.iter().filter(|r| !r.is_empty()) {
        risk += weighted_ce_logits(
            logits,
            &probs,
            inputs.labels,
            inputs.risk_weights,
            rows,
            scale,
            &mut d,
        );
    }
    let pscale = scale * lambda;
    let want_grad = pscale != 0.0;
    let pen = match penalty {
        PenaltyKind::Irm => {
            let mut total = 0.0;
            for rows in inputs.groups.rows.iter().filter(|r| !r.is_empty()) {
                let g = irm_scale_logits(
                    logits,
                    &probs,
                    inputs.labels,
                    inputs.penalty_weights,
                    rows,
                    1.0,
                    None,
                );
                if want_grad {
                    irm_scale_logits(
                        logits,
                        &probs,
                        inputs.labels,
                        inputs.penalty_weights,
                        rows,
                        pscale * 2.0 * g,
                        Some(&mut d),
                    );
                }
                total += g * g;
            }
            total
        }
        PenaltyKind::Rex => {
            let groups: Vec<&Vec<usize>> = inputs
                .groups
                .rows
                .iter()
                .filter(|r| !r.is_empty())
                .collect();
            let mut scratch = Array2::zeros(logits.raw_dim());
            let risks: Vec<f64> = groups
                .iter()
                .map(|rows| {
                    weighted_ce_logits(
                        logits,
                        &probs,
                        inputs.labels,
                        inputs.penalty_weights,
                        rows,
                        0.0,
                        &mut scratch,
                    )
                })
                .collect();
            let (v, dr) = rex_penalty(&risks);
            if want_grad {
                for (rows, c) in groups.iter().zip(dr) {
                    weighted_ce_logits(
                        logits,
                        &probs,
                        inputs.labels,
                        inputs.penalty_weights,
                        rows,
                        pscale * c,
                        &mut d,
                    );
                }
            }
            v
        }
        PenaltyKind::Cmmd { bandwidths } => {
            let logp = log_softmax_rows(logits);
            let (cells, index) = cells_from(|r| logp.select(ndarray::Axis(0), r), inputs);
            let out = cmmd_penalty(&cells, bandwidths);
            if want_grad {
                let floor = PROB_FLOOR.ln();
                for (g, split) in index.iter().enumerate() {
                    for y in 0..2 {
                        let Some(gr) = out.grads[g][y].as_ref() else {
                            continue;
                        };
                        for (r, &i) in split[y].iter().enumerate() {
                            // d logp_k / d z_j = delta_kj - p_j, zero where the floor is active.
                            let gk: Vec<f64> = (0..logits.ncols())
                                .map(|k| {
                                    if logp[[i, k]] > floor {
                                        gr[[r, k]]
                                    } else {
                                        0.0
                                    }
                                })
                                .collect();
                            let s: f64 = gk.iter().sum();
                            for j in 0..logits.ncols() {
                                d[[i, j]] += pscale * (gk[j] - probs[[i, j]] * s);
                            }
                        }
                    }
                }
            }
            out.value
        }
        PenaltyKind::Pgi => {
            let (cells, index) = cells_from(|r| probs.select(ndarray::Axis(0), r), inputs);
            let out = pgi_penalty(&cells);
            if want_grad {
                for (g, split) in index.iter().enumerate() {
                    for y in 0..2 {
                        let Some(gr) = out.grads[g][y].as_ref() else {
                            continue;
                        };
                        for (r, &i) in split[y].iter().enumerate() {
                            let pg: f64 = (0..logits.ncols())
                                .map(|k| probs[[i, k]] * gr[[r, k]])
                                .sum();
                            for j in 0..logits.ncols() {
                                d[[i, j]] += pscale * probs[[i, j]] * (gr[[r, j]] - pg);
                            }
                        }
                    }
                }
            }
            out.value
        }
    };
    let grad = params.backward(inputs.features, &cache, d.view());
    let value = ObjectiveValue {
        risk,
        penalty: pen,
        objective: scale * (risk + lambda * pen),
    };
    Ok((value, grad))
}

#[derive(Debug, Clone, PartialEq)]
pub struct Snapshot {
    /// Number of completed epochs.
    pub epoch: usize,
    pub params: ModelParams,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub lambda_eff: f64,
    pub risk: f64,
    pub penalty: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainRun {
    pub trajectory: Vec<Snapshot>,
    pub history: Vec<EpochRecord>,
}

impl TrainRun {
    pub fn final_params(&self) -> &ModelParams {
        &self.trajectory.last().expect("non-empty trajectory").params
    }
}

struct Stepper {
    optimizer: Optimizer,
    lr: f64,
    l2: f64,
    m: Gradient,
    v: Gradient,
    t: i32,
}

impl Stepper {
    fn new(config: &TrainConfig, params: &ModelParams) -> Self {
        Stepper {
            optimizer: config.optimizer,
            lr: config.lr,
            l2: config.l2,
            m: Gradient::zeros_like(params),
            v: Gradient::zeros_like(params),
            t: 0,
        }
    }

    fn step(&mut self, params: &mut ModelParams, mut g: Gradient, scale: f64) {
        if self.l2 > 0.0 {
            for (gl, pl) in g.layers.iter_mut().zip(&params.layers) {
                gl.weight.scaled_add(2.0 * self.l2 * scale, &pl.weight);
            }
        }
        match self.optimizer {
            Optimizer::Sgd => params.descend(self.lr, &g),
            Optimizer::Adam => {
                const B1: f64 = 0.9;
                const B2: f64 = 0.999;
                self.t += 1;
                let c1 = 1.0 - B1.powi(self.t);
                let c2 = 1.0 - B2.powi(self.t);
                let lr = self.lr;
                let update = |p: &mut f64, g: &f64, m: &mut f64, v: &mut f64| {
                    *m = B1 * *m + (1.0 - B1) * g;
                    *v = B2 * *v + (1.0 - B2) * g * g;
                    *p -= lr * (*m / c1) / ((*v / c2).sqrt() + 1e-8);
                };
                for (((pl, gl), ml), vl) in params
                    .layers
                    .iter_mut()
                    .zip(&g.layers)
                    .zip(&mut self.m.layers)
                    .zip(&mut self.v.layers)
                {
                    Zip::from(&mut pl.weight)
                        .and(&gl.weight)
                        .and(&mut ml.weight)
                        .and(&mut vl.weight)
                        .for_each(update);
                    Zip::from(&mut pl.bias)
                        .and(&gl.bias)
                        .and(&mut ml.bias)
                        .and(&mut vl.bias)
                        .for_each(update);
                }
            }
        }
    }
}

/// Minimises the group objective from an initialisation drawn with
/// `config.seed`. Snapshots are taken every `config.interval()` epochs and
/// after the last epoch (the initialisation when `epochs = 0`).
pub fn train_scill(
    data: &LabeledDataset,
    asg: &GroupAssignment,
    config: &TrainConfig,
    arch: Architecture,
) -> Result<TrainRun, TrainError> {
    config.validate()?;
    if asg.group_of.len() != data.len() {
        return Err(TrainError::Assignment {
            found: asg.group_of.len(),
            expected: data.len(),
        });
    }
    let omega: Vec<f64> = if config.reweight {
        let table = match &asg.weights {
            Some(t) => t.clone(),
            None => {
                let mut a = asg.clone();
                compute_group_weights(&mut a, &data.labels);
                a.weights.expect("just computed")
            }
        };
        asg.group_of
            .iter()
            .zip(&data.labels)
            .map(|(&g, &y)| table[g][y as usize].unwrap_or(1.0))
            .collect()
    } else {
        vec![1.0; data.len()]
    };
    let risk_weights: Vec<f64> = data
        .weights
        .iter()
        .zip(&omega)
        .map(|(b, o)| b * o)
        .collect();
    let penalty_weights: Vec<f64> = if config.penalty_uses_weights {
        risk_weights.clone()
    } else {
        data.weights.clone()
    };

    let mut params = ModelParams::init(arch, config.seed);
    let mut stepper = Stepper::new(config, &params);
    let mut batch_rng = ChaCha8Rng::seed_from_u64(config.seed ^ 0x5eed_ba7c);
    let mut order: Vec<usize> = (0..data.len()).collect();
    let full = GroupIndex::new(&asg.group_of, asg.m, &order);
    let interval = config.interval();
    let mut trajectory = Vec::new();
    let mut history = Vec::with_capacity(config.epochs);
    if config.epochs == 0 {
        trajectory.push(Snapshot {
            epoch: 0,
            params: params.clone(),
        });
    }
    for epoch in 0..config.epochs {
        let lambda = config.lambda_at(epoch);
        let scale = if config.rescale_penalty && lambda > 1.0 {
            1.0 / lambda
        } else {
            1.0
        };
        let mut risk = 0.0;
        let mut penalty = 0.0;
        match config.batch_size {
            None => {
                let inputs = ObjectiveInputs {
                    features: data.features.view(),
                    labels: &data.labels,
                    risk_weights: &risk_weights,
                    penalty_weights: &penalty_weights,
                    groups: &full,
                };
                let (v, g) = objective_grad(&params, &inputs, &config.penalty, lambda, scale)?;
                risk = v.risk;
                penalty = v.penalty;
                stepper.step(&mut params, g, scale);
            }
            Some(bs) => {
                order.shuffle(&mut batch_rng);
                let batches = order.len().div_ceil(bs);
                for chunk in order.chunks(bs) {
                    let sub = data.subset(chunk);
                    let local: Vec<usize> = (0..chunk.len()).collect();
                    let group_of: Vec<usize> = chunk.iter().map(|&i| asg.group_of[i]).collect();
                    let idx = GroupIndex::new(&group_of, asg.m, &local);
                    let rw: Vec<f64> = chunk.iter().map(|&i| risk_weights[i]).collect();
                    let pw: Vec<f64> = chunk.iter().map(|&i| penalty_weights[i]).collect();
                    let inputs = ObjectiveInputs {
                        features: sub.features.view(),
                        labels: &sub.labels,
                        risk_weights: &rw,
                        penalty_weights: &pw,
                        groups: &idx,
                    };
                    let (v, g) = objective_grad(&params, &inputs, &config.penalty, lambda, scale)?;
                    risk += v.risk / batches as f64;
                    penalty += v.penalty / batches as f64;
                    stepper.step(&mut params, g, scale);
                }
            }
        }
        if !risk.is_finite() || !penalty.is_finite() || !params.is_finite() {
            return Err(TrainError::Diverged {
                epoch,
                risk,
                penalty,
            });
        }
        history.push(EpochRecord {
            epoch,
            lambda_eff: lambda,
            risk,
            penalty,
        });
        let done = epoch + 1;
        if done % interval == 0 || done == config.epochs {
            trajectory.push(Snapshot {
                epoch: done,
                params: params.clone(),
            });
        }
    }
    Ok(TrainRun {
        trajectory,
        history,
    })
}

/// Plain full-batch ERM on the dataset's own weights.
pub fn train_reference(
    data: &LabeledDataset,
    arch: Architecture,
    epochs: usize,
    lr: f64,
    seed: u64,
) -> Result<ModelParams, TrainError> {
    let mut params = ModelParams::init(arch, seed);
    for epoch in 0..epochs {
        let (loss, g) =
            weighted_ce_grad(&params, data.features.view(), &data.labels, &data.weights)?;
        if !loss.is_finite() {
            return Err(TrainError::Diverged {
                epoch,
                risk: loss,
                penalty: 0.0,
            });
        }
        params.descend(lr, &g);
        if !params.is_finite() {
            return Err(TrainError::Diverged {
                epoch,
                risk: loss,
                penalty: 0.0,
            });
        }
    }
    Ok(params)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use ndarray::array;

    #[test]
    fn weights_from_formula() {
        // P(Y=0) = 0.5; group 0 has P(Y=0|g) = 0.75.
        let labels = [0, 0, 0, 1, 0, 1, 1, 1];
        let mut asg =
            GroupAssignment::from_group_of(vec![0, 0, 0, 0, 1, 1, 1, 1], &labels).unwrap();
        let w = compute_group_weights(&mut asg, &labels);
        let t = asg.weights.as_ref().unwrap();
        assert_relative_eq!(t[0][0].unwrap(), 2.0 / 3.0, epsilon = 1e-15);
        assert_relative_eq!(t[0][1].unwrap(), 2.0, epsilon = 1e-15);
        assert_relative_eq!(w[3], 2.0, epsilon = 1e-15);
    }

    #[test]
    fn balanced_group_has_unit_weights() {
        let labels = [0, 1, 0, 1];
        let mut asg = GroupAssignment::from_group_of(vec![0, 0, 1, 1], &labels).unwrap();
        assert_eq!(compute_group_weights(&mut asg, &labels), vec![1.0; 4]);
    }

    #[test]
    fn absent_label_has_no_weight() {
        let labels = [0, 0, 1, 0];
        let mut asg = GroupAssignment::from_group_of(vec![0, 0, 1, 1], &labels).unwrap();
        compute_group_weights(&mut asg, &labels);
        assert_eq!(asg.weights.as_ref().unwrap()[0][1], None);
    }

    #[test]
    fn rex_examples() {
        assert_eq!(rex_penalty(&[0.3, 0.3, 0.3]).0, 0.0);
        assert_eq!(rex_penalty(&[0.0, 1.0]).0, 0.25);
        let (_, g) = rex_penalty(&[0.0, 1.0]);
        assert_eq!(g, vec![-0.5, 0.5]);
    }

    fn cell(rows: Array2<f64>) -> Option<CellSet> {
        let n = rows.nrows();
        Some(CellSet {
            rows,
            weights: vec![1.0; n],
        })
    }

    #[test]
    fn cmmd_examples() {
        let u = array![[0.1, -0.4]];
        let v = array![[-1.0, 0.7]];
        let same: Cells = vec![[cell(u.clone()), None], [cell(u.clone()), None]];
        assert!(cmmd_penalty(&same, &DEFAULT_BANDWIDTHS).value.abs() < 1e-12);
        let diff: Cells = vec![[cell(u.clone()), None], [cell(v.clone()), None]];
        let d2: f64 = 1.1f64.powi(2) + 1.1f64.powi(2);
        let k: f64 = DEFAULT_BANDWIDTHS
            .iter()
            .map(|s| (-d2 / (2.0 * s * s)).exp())
            .sum();
        let out = cmmd_penalty(&diff, &DEFAULT_BANDWIDTHS);
        assert_relative_eq!(out.value, 2.0 * (3.0 - k), max_relative = 1e-12);
        assert_eq!(out.skipped, 1);
    }

    #[test]
    fn pgi_example() {
        let a = array![[0.8, 0.2]];
        let b = array![[0.5, 0.5]];
        let cells: Cells = vec![[cell(a), None], [cell(b), None]];
        let out = pgi_penalty(&cells);
        assert_relative_eq!(
            out.value,
            0.8 * 1.6f64.ln() + 0.2 * 0.4f64.ln(),
            max_relative = 1e-12
        );
        assert!((out.value - 0.19274).abs() < 1e-5);
    }

    #[test]
    fn lambda_schedule() {
        let c = TrainConfig {
            epochs: 10,
            anneal_epochs: 3,
            lambda: 10.0,
            ramp_rate: 0.5,
            ..Default::default()
        };
        assert_eq!(c.lambda_at(2), 0.0);
        assert_eq!(c.lambda_at(3), 5.0);
        assert_eq!(c.lambda_at(4), 10.0);
        assert_eq!(c.lambda_at(9), 10.0);
        let step = TrainConfig {
            ramp_rate: 0.0,
            ..c
        };
        assert_eq!(step.lambda_at(3), 10.0);
        assert!(TrainConfig {
            anneal_epochs: 11,
            ..step
        }
        .validate()
        .is_err());
    }

    #[test]
    fn zero_epochs_return_the_initialisation() {
        let ds = LabeledDataset::new(array![[0.0, 1.0], [1.0, 0.0]], vec![0, 1]).unwrap();
        let arch = Architecture::Logistic { input: 2 };
        let p = train_reference(&ds, arch, 0, 0.1, 4).unwrap();
        assert_eq!(p, ModelParams::init(arch, 4));
        let asg = GroupAssignment::from_group_of(vec![0, 0], &ds.labels).unwrap();
        let cfg = TrainConfig {
            epochs: 0,
            anneal_epochs: 0,
            seed: 4,
            ..Default::default()
        };
        let run = train_scill(&ds, &asg, &cfg, arch).unwrap();
        assert_eq!(run.trajectory.len(), 1);
        assert_eq!(run.final_params(), &p);
    }

    #[test]
    fn divergence_is_reported() {
        let ds = LabeledDataset::new(array![[10.0, 10.0], [10.0, 10.0]], vec![0, 1]).unwrap();
        let asg = GroupAssignment::from_group_of(vec![0, 1], &ds.labels).unwrap();
        let cfg = TrainConfig {
            lr: 1e307,
            epochs: 50,
            anneal_epochs: 0,
            lambda: 1e6,
            rescale_penalty: false,
            ..Default::default()
        };
        let arch = Architecture::Logistic { input: 2 };
        let r = train_scill(&ds, &asg, &cfg, arch);
        assert!(matches!(r, Err(TrainError::Diverged { .. })), "{r:?}");
    }

    fn one_step(optimizer: Optimizer, l2: f64) -> (ModelParams, ModelParams, Gradient) {
        let ds = LabeledDataset::new(array![[0.5, -1.0], [1.5, 0.2], [-0.3, 0.7]], vec![0, 1, 1])
            .unwrap();
        let arch = Architecture::Logistic { input: 2 };
        let asg = GroupAssignment::from_group_of(vec![0; 3], &ds.labels).unwrap();
        let cfg = TrainConfig {
            lr: 0.01,
            epochs: 1,
            anneal_epochs: 1,
            seed: 3,
            reweight: false,
            optimizer,
            l2,
            ..Default::default()
        };
        let start = ModelParams::init(arch, 3);
        let (_, g) = weighted_ce_grad(&start, ds.features.view(), &ds.labels, &ds.weights).unwrap();
        let run = train_scill(&ds, &asg, &cfg, arch).unwrap();
        (start, run.final_params().clone(), g)
    }

    #[test]
    fn first_adam_step_moves_by_lr_times_sign() {
        let (start, end, g) = one_step(Optimizer::Adam, 0.0);
        for ((a, b), g) in start.flatten().iter().zip(end.flatten()).zip(g.flatten()) {
            assert_relative_eq!(a - b, 0.01 * g.signum(), max_relative = 1e-5);
        }
    }

    #[test]
    fn l2_adds_to_weight_gradients_only() {
        let (start, end, mut g) = one_step(Optimizer::Sgd, 0.5);
        for (gl, pl) in g.layers.iter_mut().zip(&start.layers) {
            gl.weight.scaled_add(1.0, &pl.weight);
        }
        let mut expected = start.clone();
        expected.descend(0.01, &g);
        for (a, b) in expected.flatten().iter().zip(end.flatten()) {
            assert_relative_eq!(*a, b, max_relative = 1e-12);
        }
    }
}
