//! Dense predictors written from scratch: a logistic (single affine) model and
//! a two-hidden-layer ReLU MLP, with exact gradients for the weighted
//! cross-entropy and for the IRM scale penalty.
//!
//! All losses are expressed through their gradient with respect to the logits
//! and then pulled back through the network with one backward pass, so any
//! scalar that is a function of the logits gets an exact parameter gradient
//! from [`ModelParams::backward`].

use ndarray::{s, Array1, Array2, ArrayView1, ArrayView2, Axis, Zip};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::PROB_FLOOR;

pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("input has {found} features, model expects {expected}")]
    Shape { expected: usize, found: usize },
    #[error("empty batch")]
    EmptyBatch,
    #[error("batch has {rows} rows but {labels} labels and {weights} weights")]
    BatchLength {
        rows: usize,
        labels: usize,
        weights: usize,
    },
    #[error("invalid checkpoint: {0}")]
    Checkpoint(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Architecture {
    /// Affine map `input -> 2` followed by softmax.
    Logistic { input: usize },
    /// `input -> hidden1 -> hidden2 -> classes` with ReLU between layers.
    Mlp {
        input: usize,
        hidden1: usize,
        hidden2: usize,
        classes: usize,
    },
}

impl Architecture {
    pub fn input_dim(&self) -> usize {
        match *self {
            Architecture::Logistic { input } | Architecture::Mlp { input, .. } => input,
        }
    }

    pub fn classes(&self) -> usize {
        match *self {
            Architecture::Logistic { .. } => 2,
            Architecture::Mlp { classes, .. } => classes,
        }
    }

    /// `(fan_in, fan_out)` for each affine layer.
    pub fn layer_shapes(&self) -> Vec<(usize, usize)> {
        match *self {
            Architecture::Logistic { input } => vec![(input, 2)],
            Architecture::Mlp {
                input,
                hidden1,
                hidden2,
                classes,
            } => {
                vec![(input, hidden1), (hidden1, hidden2), (hidden2, classes)]
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Layer {
    /// `fan_in x fan_out`
    pub weight: Array2<f64>,
    pub bias: Array1<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    pub arch: Architecture,
    pub layers: Vec<Layer>,
}

/// Same shape tree as [`ModelParams`].
#[derive(Debug, Clone, PartialEq)]
pub struct Gradient {
    pub layers: Vec<Layer>,
}

impl Gradient {
    pub fn zeros_like(params: &ModelParams) -> Self {
        Gradient {
            layers: params
                .layers
                .iter()
                .map(|l| Layer {
                    weight: Array2::zeros(l.weight.raw_dim()),
                    bias: Array1::zeros(l.bias.raw_dim()),
                })
                .collect(),
        }
    }

    pub fn scaled_add(&mut self, alpha: f64, other: &Gradient) {
        for (a, b) in self.layers.iter_mut().zip(&other.layers) {
            a.weight.scaled_add(alpha, &b.weight);
            a.bias.scaled_add(alpha, &b.bias);
        }
    }

    pub fn scale(&mut self, alpha: f64) {
        for l in &mut self.layers {
            l.weight *= alpha;
            l.bias *= alpha;
        }
    }

    pub fn flatten(&self) -> Vec<f64> {
        flatten_layers(&self.layers)
    }

    pub fn is_finite(&self) -> bool {
        self.layers
            .iter()
            .all(|l| l.weight.iter().chain(l.bias.iter()).all(|v| v.is_finite()))
    }
}

fn flatten_layers(layers: &[Layer]) -> Vec<f64> {
    let mut out = Vec::new();
    for l in layers {
        out.extend(l.weight.iter());
        out.extend(l.bias.iter());
    }
    out
}

/// Activations kept from a forward pass for the backward pass.
#[derive(Debug, Clone)]
pub struct ForwardCache {
    /// Post-ReLU output of every hidden layer.
    hidden: Vec<Array2<f64>>,
    pub logits: Array2<f64>,
}

impl ModelParams {
    pub fn zeros(arch: Architecture) -> Self {
        let layers = arch
            .layer_shapes()
            .into_iter()
            .map(|(i, o)| Layer {
                weight: Array2::zeros((i, o)),
                bias: Array1::zeros(o),
            })
            .collect();
        Self { arch, layers }
    }

    /// Uniform `(-1/sqrt(fan_in), 1/sqrt(fan_in))` initialisation of weights
    /// and biases, deterministic in `seed`.
    pub fn init(arch: Architecture, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut p = Self::zeros(arch);
        for l in &mut p.layers {
            let bound = 1.0 / (l.weight.nrows() as f64).sqrt();
            l.weight.mapv_inplace(|_| rng.random_range(-bound..bound));
            l.bias.mapv_inplace(|_| rng.random_range(-bound..bound));
        }
        p
    }

    pub fn num_params(&self) -> usize {
        self.layers
            .iter()
            .map(|l| l.weight.len() + l.bias.len())
            .sum()
    }

    pub fn flatten(&self) -> Vec<f64> {
        flatten_layers(&self.layers)
    }

    pub fn set_flat(&mut self, flat: &[f64]) {
        assert_eq!(flat.len(), self.num_params());
        let mut k = 0;
        for l in &mut self.layers {
            for v in l.weight.iter_mut().chain(l.bias.iter_mut()) {
                *v = flat[k];
                k += 1;
            }
        }
    }

    pub fn is_finite(&self) -> bool {
        self.layers
            .iter()
            .all(|l| l.weight.iter().chain(l.bias.iter()).all(|v| v.is_finite()))
    }

    /// `self -= lr * grad`
    pub fn descend(&mut self, lr: f64, grad: &Gradient) {
        for (p, g) in self.layers.iter_mut().zip(&grad.layers) {
            p.weight.scaled_add(-lr, &g.weight);
            p.bias.scaled_add(-lr, &g.bias);
        }
    }

    fn check_input(&self, d: usize) -> Result<(), ModelError> {
        let expected = self.arch.input_dim();
        if d != expected {
            return Err(ModelError::Shape { expected, found: d });
        }
        Ok(())
    }

    pub fn forward_cache(&self, x: ArrayView2<'_, f64>) -> Result<ForwardCache, ModelError> {
        self.check_input(x.ncols())?;
        let last = self.layers.len() - 1;
        let mut hidden: Vec<Array2<f64>> = Vec::with_capacity(last);
        let mut logits = None;
        for (k, layer) in self.layers.iter().enumerate() {
            let input = if k == 0 { x } else { hidden[k - 1].view() };
            let mut z = input.dot(&layer.weight);
            z += &layer.bias;
            if k == last {
                logits = Some(z);
            } else {
                z.mapv_inplace(|v| v.max(0.0));
                hidden.push(z);
            }
        }
        Ok(ForwardCache {
            hidden,
            logits: logits.expect("at least one layer"),
        })
    }

    pub fn logits(&self, x: ArrayView2<'_, f64>) -> Result<Array2<f64>, ModelError> {
        Ok(self.forward_cache(x)?.logits)
    }

    /// Softmax output for a single feature row.
    pub fn forward(&self, x: ArrayView1<'_, f64>) -> Result<Array1<f64>, ModelError> {
        let row = x.insert_axis(Axis(0));
        let z = self.logits(row)?;
        Ok(softmax_rows(&z).row(0).to_owned())
    }

    pub fn predict_proba(&self, x: ArrayView2<'_, f64>) -> Result<Array2<f64>, ModelError> {
        Ok(softmax_rows(&self.logits(x)?))
    }

    /// Pulls `dlogits` (gradient of some scalar with respect to the logits)
    /// back to the parameters.
    pub fn backward(
        &self,
        x: ArrayView2<'_, f64>,
        cache: &ForwardCache,
        dlogits: ArrayView2<'_, f64>,
    ) -> Gradient {
        let nl = self.layers.len();
        let mut grads: Vec<Option<Layer>> = vec![None; nl];
        let mut delta = dlogits.to_owned();
        for k in (0..nl).rev() {
            let input = if k == 0 {
                x
            } else {
                cache.hidden[k - 1].view()
            };
            let gw = input.t().dot(&delta);
            let gb = delta.sum_axis(Axis(0));
            if k > 0 {
                let mut prev = delta.dot(&self.layers[k].weight.t());
                Zip::from(&mut prev)
                    .and(&cache.hidden[k - 1])
                    .for_each(|d, &h| {
                        if h <= 0.0 {
                            *d = 0.0;
                        }
                    });
                delta = prev;
            }
            grads[k] = Some(Layer {
                weight: gw,
                bias: gb,
            });
        }
        Gradient {
            layers: grads.into_iter().map(|g| g.expect("filled")).collect(),
        }
    }

    pub fn to_checkpoint(&self) -> Checkpoint {
        Checkpoint {
            format_version: CHECKPOINT_VERSION,
            architecture: self.arch,
            layers: self
                .layers
                .iter()
                .map(|l| CheckpointLayer {
                    fan_in: l.weight.nrows(),
                    fan_out: l.weight.ncols(),
                    weight: l.weight.iter().copied().collect(),
                    bias: l.bias.to_vec(),
                })
                .collect(),
        }
    }

    pub fn from_checkpoint(c: &Checkpoint) -> Result<Self, ModelError> {
        if c.format_version != CHECKPOINT_VERSION {
            return Err(ModelError::Checkpoint(format!(
                "unsupported format_version {}",
                c.format_version
            )));
        }
        let shapes = c.architecture.layer_shapes();
        if shapes.len() != c.layers.len() {
            return Err(ModelError::Checkpoint(format!(
                "architecture has {} layers, checkpoint has {}",
                shapes.len(),
                c.layers.len()
            )));
        }
        let mut layers = Vec::with_capacity(shapes.len());
        for (k, ((i, o), l)) in shapes.into_iter().zip(&c.layers).enumerate() {
            if l.fan_in != i || l.fan_out != o || l.weight.len() != i * o || l.bias.len() != o {
                return Err(ModelError::Checkpoint(format!("layer {k} shape mismatch")));
            }
            if l.weight.iter().chain(&l.bias).any(|v| !v.is_finite()) {
                return Err(ModelError::Checkpoint(format!(
                    "layer {k} has non-finite entries"
                )));
            }
            layers.push(Layer {
                weight: Array2::from_shape_vec((i, o), l.weight.clone())
                    .map_err(|e| ModelError::Checkpoint(e.to_string()))?,
                bias: Array1::from(l.bias.clone()),
            });
        }
        Ok(Self {
            arch: c.architecture,
            layers,
        })
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(&self.to_checkpoint()).expect("checkpoint serializes")
    }

    pub fn from_json(s: &str) -> Result<Self, ModelError> {
        let c: Checkpoint =
            serde_json::from_str(s).map_err(|e| ModelError::Checkpoint(e.to_string()))?;
        Self::from_checkpoint(&c)
    }
}

/// Versioned on-disk form of [`ModelParams`]; weights are row-major `fan_in x fan_out`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub format_version: u32,
    pub architecture: Architecture,
    pub layers: Vec<CheckpointLayer>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointLayer {
    pub fan_in: usize,
    pub fan_out: usize,
    pub weight: Vec<f64>,
    pub bias: Vec<f64>,
}

/// Row-wise softmax with max subtraction.
pub fn softmax_rows(z: &Array2<f64>) -> Array2<f64> {
    let mut p = z.clone();
    for mut row in p.rows_mut() {
        let m = row.fold(f64::NEG_INFINITY, |a, &b| a.max(b));
        row.mapv_inplace(|v| (v - m).exp());
        let s = row.sum();
        row /= s;
    }
    p
}

/// Row-wise log-softmax, floored at `ln(PROB_FLOOR)`.
pub fn log_softmax_rows(z: &Array2<f64>) -> Array2<f64> {
    let floor = PROB_FLOOR.ln();
    let mut out = z.clone();
    for mut row in out.rows_mut() {
        let m = row.fold(f64::NEG_INFINITY, |a, &b| a.max(b));
        let lse = m + row.iter().map(|v| (v - m).exp()).sum::<f64>().ln();
        row.mapv_inplace(|v| (v - lse).max(floor));
    }
    out
}

/// Weighted cross-entropy `sum_i w_i l_i / n` over `rows` of the logits and
/// its gradient with respect to those logits (written into `dlogits`, scaled
/// by `scale`).
///
/// `l_i = -max(log p_{i,y_i}, ln 1e-12)`; the gradient is zero where the floor
/// is active.
pub fn weighted_ce_logits(
    logits: &Array2<f64>,
    probs: &Array2<f64>,
    labels: &[u8],
    weights: &[f64],
    rows: &[usize],
    scale: f64,
    dlogits: &mut Array2<f64>,
) -> f64 {
    let n = rows.len() as f64;
    let floor = PROB_FLOOR.ln();
    let mut loss = 0.0;
    for &i in rows {
        let y = labels[i] as usize;
        let z = logits.row(i);
        let m = z.fold(f64::NEG_INFINITY, |a, &b| a.max(b));
        let lse = m + z.iter().map(|v| (v - m).exp()).sum::<f64>().ln();
        let logp = z[y] - lse;
        let w = weights[i];
        if logp.is_nan() {
            loss = f64::NAN;
            continue;
        }
        if logp > floor {
            loss += -w * logp;
            let c = scale * w / n;
            if c != 0.0 {
                for k in 0..z.len() {
                    let e = if k == y { 1.0 } else { 0.0 };
                    dlogits[[i, k]] += c * (probs[[i, k]] - e);
                }
            }
        } else {
            loss += -w * floor;
        }
    }
    loss / n
}

/// IRM scale gradient `g = dR(s * z)/ds` at `s = 1` for the weighted risk over
/// `rows`, and `dg/dlogits` accumulated into `dgrad` scaled by `scale`.
pub fn irm_scale_logits(
    logits: &Array2<f64>,
    probs: &Array2<f64>,
    labels: &[u8],
    weights: &[f64],
    rows: &[usize],
    scale: f64,
    dgrad: Option<&mut Array2<f64>>,
) -> f64 {
    let n = rows.len() as f64;
    let floor = PROB_FLOOR.ln();
    let mut g = 0.0;
    let mut active = Vec::with_capacity(rows.len());
    for &i in rows {
        let y = labels[i] as usize;
        let z = logits.row(i);
        let p = probs.row(i);
        if p[y].max(f64::MIN_POSITIVE).ln() <= floor {
            continue;
        }
        let pz: f64 = p.dot(&z);
        let u = pz - z[y];
        g += weights[i] * u;
        active.push((i, pz));
    }
    g /= n;
    if let Some(d) = dgrad {
        for (i, pz) in active {
            let c = scale * weights[i] / n;
            if c == 0.0 {
                continue;
            }
            let y = labels[i] as usize;
            for k in 0..logits.ncols() {
                let e = if k == y { 1.0 } else { 0.0 };
                let pk = probs[[i, k]];
                d[[i, k]] += c * ((pk - e) + pk * (logits[[i, k]] - pz));
            }
        }
    }
    g
}

fn check_batch(
    params: &ModelParams,
    x: ArrayView2<'_, f64>,
    labels: &[u8],
    weights: &[f64],
) -> Result<(), ModelError> {
    if x.nrows() == 0 {
        return Err(ModelError::EmptyBatch);
    }
    if labels.len() != x.nrows() || weights.len() != x.nrows() {
        return Err(ModelError::BatchLength {
            rows: x.nrows(),
            labels: labels.len(),
            weights: weights.len(),
        });
    }
    params.check_input(x.ncols())
}

/// Weighted mean cross-entropy `sum_i w_i l_i / n` and its exact gradient.
pub fn weighted_ce_grad(
    params: &ModelParams,
    x: ArrayView2<'_, f64>,
    labels: &[u8],
    weights: &[f64],
) -> Result<(f64, Gradient), ModelError> {
    check_batch(params, x, labels, weights)?;
    let cache = params.forward_cache(x)?;
    let probs = softmax_rows(&cache.logits);
    let rows: Vec<usize> = (0..x.nrows()).collect();
    let mut d = Array2::zeros(cache.logits.raw_dim());
    let loss = weighted_ce_logits(&cache.logits, &probs, labels, weights, &rows, 1.0, &mut d);
    Ok((loss, params.backward(x, &cache, d.view())))
}

/// IRM penalty `(dR/ds)^2` at `s = 1`, where `s` scales the logits and `R` is
/// the weighted mean cross-entropy, with its exact parameter gradient
/// `2 g grad_theta g`.
pub fn irm_penalty_grad(
    params: &ModelParams,
    x: ArrayView2<'_, f64>,
    labels: &[u8],
    weights: &[f64],
) -> Result<(f64, Gradient), ModelError> {
    check_batch(params, x, labels, weights)?;
    let cache = params.forward_cache(x)?;
    let probs = softmax_rows(&cache.logits);
    let rows: Vec<usize> = (0..x.nrows()).collect();
    let g = irm_scale_logits(&cache.logits, &probs, labels, weights, &rows, 1.0, None);
    let mut d = Array2::zeros(cache.logits.raw_dim());
    irm_scale_logits(
        &cache.logits,
        &probs,
        labels,
        weights,
        &rows,
        2.0 * g,
        Some(&mut d),
    );
    Ok((g * g, params.backward(x, &cache, d.view())))
}

/// Fraction of rows whose argmax matches the label (lowest index wins ties).
pub fn accuracy(
    params: &ModelParams,
    x: ArrayView2<'_, f64>,
    labels: &[u8],
) -> Result<f64, ModelError> {
    let preds = predict_labels(params, x)?;
    let hits = preds.iter().zip(labels).filter(|(p, y)| p == y).count();
    Ok(hits as f64 / labels.len() as f64)
}

pub fn predict_labels(params: &ModelParams, x: ArrayView2<'_, f64>) -> Result<Vec<u8>, ModelError> {
    let z = params.logits(x)?;
    Ok(z.rows()
        .into_iter()
        .map(|r| argmax(&r.to_vec()) as u8)
        .collect())
}

pub fn argmax(v: &[f64]) -> usize {
    let mut best = 0;
    for (k, &x) in v.iter().enumerate().skip(1) {
        if x > v[best] {
            best = k;
        }
    }
    best
}

/// Slices the batch rows `[start, end)`; a convenience for callers that keep
/// data in one matrix.
pub fn rows_view(x: &Array2<f64>, start: usize, end: usize) -> ArrayView2<'_, f64> {
    x.slice(s![start..end, ..])
}
