//! Randomised self-checks: finite-difference gradients, the reweighting
//! identity and IDX round trips.

use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use scill_core::ingest::{parse_idx, serialize_idx, IdxError, IdxTensor};
use scill_core::model::{irm_penalty_grad, weighted_ce_grad};
use scill_core::train::{
    compute_group_weights, objective_grad, GroupIndex, ObjectiveInputs, PenaltyKind,
};
use scill_core::{Architecture, GroupAssignment, ModelParams};
use serde::{Deserialize, Serialize};

const FD_STEP: f64 = 1e-5;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GradientCheck {
    pub name: String,
    pub trials: usize,
    pub max_relative_error: f64,
}

fn kink_margin(params: &ModelParams, x: &Array2<f64>) -> f64 {
    let mut margin = f64::INFINITY;
    let mut input = x.clone();
    for layer in &params.layers[..params.layers.len() - 1] {
        let z = input.dot(&layer.weight) + &layer.bias;
        margin = z.iter().fold(margin, |m, v| m.min(v.abs()));
        input = z.mapv(|v| v.max(0.0));
    }
    margin
}

struct Instance {
    params: ModelParams,
    x: Array2<f64>,
    labels: Vec<u8>,
    weights: Vec<f64>,
    groups: GroupIndex,
}

/// Random instance with `d <= 8`, hidden widths `<= 4`, `n <= 16`, away
/// from ReLU kinks.
fn instance(rng: &mut ChaCha8Rng) -> Instance {
    loop {
        let d = rng.random_range(1..=8);
        let arch = if rng.random_bool(0.25) {
            Architecture::Logistic { input: d }
        } else {
            Architecture::Mlp {
                input: d,
                hidden1: rng.random_range(1..=4),
                hidden2: rng.random_range(1..=4),
                classes: 2,
            }
        };
        let n = rng.random_range(2..=16);
        let m = rng.random_range(1..=3.min(n));
        let params = ModelParams::init(arch, rng.random());
        let x = Array2::from_shape_fn((n, d), |_| rng.random_range(-2.0..2.0));
        let labels = (0..n).map(|_| rng.random_range(0..2)).collect();
        let weights = (0..n).map(|_| rng.random_range(0.2..2.0)).collect();
        let group_of: Vec<usize> = (0..n)
            .map(|i| if i < m { i } else { rng.random_range(0..m) })
            .collect();
        let all: Vec<usize> = (0..n).collect();
        if kink_margin(&params, &x) > 1e-3 {
            return Instance {
                params,
                x,
                labels,
                weights,
                groups: GroupIndex::new(&group_of, m, &all),
            };
        }
    }
}

fn relative_error(params: &ModelParams, analytic: &[f64], f: impl Fn(&ModelParams) -> f64) -> f64 {
    let base = params.flatten();
    let mut p = params.clone();
    let mut diff = 0.0f64;
    let mut scale = 0.0f64;
    for k in 0..base.len() {
        let mut v = base.clone();
        v[k] = base[k] + FD_STEP;
        p.set_flat(&v);
        let up = f(&p);
        v[k] = base[k] - FD_STEP;
        p.set_flat(&v);
        let fd = (up - f(&p)) / (2.0 * FD_STEP);
        diff = diff.max((fd - analytic[k]).abs());
        scale = scale.max(fd.abs());
    }
    diff / scale.max(1e-6)
}

/// Analytic against central-difference gradients for cross-entropy, the
/// IRM penalty and the full objective under each penalty.
pub fn gradient_suite(trials: usize, seed: u64) -> Vec<GradientCheck> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let penalties = [
        PenaltyKind::Irm,
        PenaltyKind::Rex,
        PenaltyKind::cmmd_default(),
        PenaltyKind::Pgi,
    ];
    let mut names: Vec<String> = vec!["cross_entropy".into(), "irm_penalty".into()];
    names.extend(penalties.iter().map(|p| format!("objective_{}", p.name())));
    let mut worst = vec![0.0f64; names.len()];
    for _ in 0..trials {
        let inst = instance(&mut rng);
        let x = inst.x.view();
        let (_, g) =
            weighted_ce_grad(&inst.params, x, &inst.labels, &inst.weights).expect("shapes match");
        worst[0] = worst[0].max(relative_error(&inst.params, &g.flatten(), |p| {
            weighted_ce_grad(p, x, &inst.labels, &inst.weights)
                .expect("shapes match")
                .0
        }));
        let (_, g) =
            irm_penalty_grad(&inst.params, x, &inst.labels, &inst.weights).expect("shapes match");
        worst[1] = worst[1].max(relative_error(&inst.params, &g.flatten(), |p| {
            irm_penalty_grad(p, x, &inst.labels, &inst.weights)
                .expect("shapes match")
                .0
        }));
        let risk_weights: Vec<f64> = inst.weights.iter().map(|w| 0.7 * w).collect();
        let inputs = ObjectiveInputs {
            features: x,
            labels: &inst.labels,
            risk_weights: &risk_weights,
            penalty_weights: &inst.weights,
            groups: &inst.groups,
        };
        let lambda = rng.random_range(0.1..5.0);
        for (k, penalty) in penalties.iter().enumerate() {
            let (_, g) =
                objective_grad(&inst.params, &inputs, penalty, lambda, 1.0).expect("shapes match");
            let e = relative_error(&inst.params, &g.flatten(), |p| {
                objective_grad(p, &inputs, penalty, lambda, 1.0)
                    .expect("shapes match")
                    .0
                    .objective
            });
            worst[2 + k] = worst[2 + k].max(e);
        }
    }
    names
        .into_iter()
        .zip(worst)
        .map(|(name, max_relative_error)| GradientCheck {
            name,
            trials,
            max_relative_error,
        })
        .collect()
}

/// Largest gap, over `cases` random assignments, between a group's
/// weighted label-1 frequency and the global one. Every group holds both
/// labels.
pub fn reweighting_identity(cases: usize, seed: u64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst = 0.0f64;
    for _ in 0..cases {
        let m = rng.random_range(1..=8);
        let extra = rng.random_range(0..200);
        let mut labels = Vec::new();
        let mut group_of = Vec::new();
        for g in 0..m {
            labels.extend([0u8, 1]);
            group_of.extend([g, g]);
        }
        let bias = rng.random_range(0.05..0.95);
        for _ in 0..extra {
            labels.push(u8::from(rng.random_bool(bias)));
            group_of.push(rng.random_range(0..m));
        }
        let mut asg =
            GroupAssignment::from_group_of(group_of.clone(), &labels).expect("groups non-empty");
        let w = compute_group_weights(&mut asg, &labels);
        let p1 = labels.iter().filter(|&&y| y == 1).count() as f64 / labels.len() as f64;
        let mut num = vec![0.0; m];
        let mut den = vec![0.0; m];
        for ((&g, &y), &wi) in group_of.iter().zip(&labels).zip(&w) {
            den[g] += wi;
            if y == 1 {
                num[g] += wi;
            }
        }
        for g in 0..m {
            worst = worst.max((num[g] / den[g] - p1).abs());
        }
    }
    worst
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IdxCheck {
    pub cases: usize,
    pub round_trip_failures: usize,
    /// Truncated or padded inputs that parsed, or were rejected without a
    /// byte offset.
    pub malformed_accepted: usize,
}

fn random_tensor(rng: &mut ChaCha8Rng) -> IdxTensor {
    if rng.random_bool(0.5) {
        let n = rng.random_range(0..100);
        IdxTensor::new(vec![n], (0..n).map(|_| rng.random()).collect()).expect("consistent")
    } else {
        let dims = vec![
            rng.random_range(0..6),
            rng.random_range(0..8),
            rng.random_range(0..8),
        ];
        let len = dims.iter().product();
        IdxTensor::new(dims, (0..len).map(|_| rng.random()).collect()).expect("consistent")
    }
}

pub fn idx_round_trip(cases: usize, seed: u64) -> IdxCheck {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut round_trip_failures = 0;
    let mut malformed_accepted = 0;
    for _ in 0..cases {
        let t = random_tensor(&mut rng);
        let bytes = serialize_idx(&t).expect("valid tensor");
        let ok = parse_idx(&bytes)
            .is_ok_and(|back| back == t && serialize_idx(&back).is_ok_and(|b| b == bytes));
        if !ok {
            round_trip_failures += 1;
        }
        let cut = rng.random_range(0..bytes.len());
        let mut padded = bytes.clone();
        padded.push(0);
        for bad in [&bytes[..cut], &padded[..]] {
            let located = matches!(
                parse_idx(bad),
                Err(IdxError::Truncated { .. }
                    | IdxError::PayloadLength { .. }
                    | IdxError::DimOverflow { .. })
            );
            if !located {
                malformed_accepted += 1;
            }
        }
    }
    IdxCheck {
        cases,
        round_trip_failures,
        malformed_accepted,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn small_runs_pass() {
        for c in gradient_suite(5, 1) {
            assert!(c.max_relative_error < 1e-3, "{c:?}");
        }
        assert!(reweighting_identity(20, 2) < 1e-12);
        let idx = idx_round_trip(20, 3);
        assert_eq!(idx.round_trip_failures + idx.malformed_accepted, 0);
    }
}
