//! The two group criteria (label balance and falsity exposure) on sampled
//! data, and exact checkers for EIC, SFC and falsity exposure on discrete
//! worlds.

use serde::{Deserialize, Serialize};

use crate::groups::{block_t, GroupAssignment, GroupError, ReferenceOutputs};
use crate::stats::TTestKind;
use crate::synth::{Cell, DiscreteWorld};

/// Tolerance used when comparing exact probabilities.
pub const EXACT_TOL: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabelBalance {
    /// `P(Y=0|g) / P(Y=1|g)`, `None` when either label is absent from `g`.
    pub ratios: Vec<Option<f64>>,
    /// `max |log r_g - log r_g'|` over groups with a defined ratio.
    pub max_log_deviation: f64,
    pub tol: f64,
    pub pass: bool,
}

/// Label balance from per-group label masses `masses[g][y]`.
pub fn label_balance_from_masses(masses: &[[f64; 2]], tol: f64) -> LabelBalance {
    let ratios: Vec<Option<f64>> = masses
        .iter()
        .map(|m| (m[0] > 0.0 && m[1] > 0.0).then(|| m[0] / m[1]))
        .collect();
    let logs: Vec<f64> = ratios.iter().flatten().map(|r| r.ln()).collect();
    let max_log_deviation = match (
        logs.iter().copied().reduce(f64::max),
        logs.iter().copied().reduce(f64::min),
    ) {
        (Some(hi), Some(lo)) => hi - lo,
        _ => 0.0,
    };
    LabelBalance {
        ratios,
        max_log_deviation,
        tol,
        pass: max_log_deviation <= tol,
    }
}

pub fn label_balance_report(asg: &GroupAssignment, tol: f64) -> LabelBalance {
    let masses: Vec<[f64; 2]> = asg
        .label_counts
        .iter()
        .map(|c| [c[0] as f64, c[1] as f64])
        .collect();
    label_balance_from_masses(&masses, tol)
}

/// Label balance of the weighted label masses `sum_{i in g, y_i = y} w_i`.
pub fn weighted_label_balance(
    asg: &GroupAssignment,
    labels: &[u8],
    weights: &[f64],
    tol: f64,
) -> LabelBalance {
    let mut masses = vec![[0.0; 2]; asg.m];
    for ((&g, &y), &w) in asg.group_of.iter().zip(labels).zip(weights) {
        masses[g][y as usize] += w;
    }
    label_balance_from_masses(&masses, tol)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FalsityExposure {
    /// Within-group t statistic of reference log-odds between label classes.
    pub t: Vec<Option<f64>>,
    /// Groups where the statistic is undefined; they pass vacuously.
    pub degenerate: Vec<usize>,
    pub worst_abs_t: f64,
    pub thr: f64,
    pub pass: bool,
}

/// Operational surrogate for falsity exposure: label and reference output
/// should be independent inside each group, tested with the pooled t
/// statistic.
pub fn falsity_exposure_probe(
    reference: &ReferenceOutputs,
    labels: &[u8],
    asg: &GroupAssignment,
    thr: f64,
) -> Result<FalsityExposure, GroupError> {
    if labels.len() != reference.len() || asg.group_of.len() != labels.len() {
        return Err(GroupError::Length {
            what: "labels/assignment",
            found: labels.len().min(asg.group_of.len()),
            expected: reference.len(),
        });
    }
    let members = asg.members();
    let t: Vec<Option<f64>> = members
        .iter()
        .map(|block| block_t(reference, labels, block, TTestKind::Pooled))
        .collect();
    let degenerate = t
        .iter()
        .enumerate()
        .filter(|(_, t)| t.is_none())
        .map(|(g, _)| g)
        .collect();
    let worst_abs_t = t.iter().flatten().map(|v| v.abs()).fold(0.0, f64::max);
    Ok(FalsityExposure {
        t,
        degenerate,
        worst_abs_t,
        thr,
        pass: worst_abs_t <= thr,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CriteriaReport {
    pub label_balance: LabelBalance,
    pub falsity_exposure: FalsityExposure,
}

impl CriteriaReport {
    pub fn build(
        reference: &ReferenceOutputs,
        labels: &[u8],
        asg: &GroupAssignment,
        balance_tol: f64,
        probe_thr: f64,
    ) -> Result<Self, GroupError> {
        Ok(Self {
            label_balance: label_balance_report(asg, balance_tol),
            falsity_exposure: falsity_exposure_probe(reference, labels, asg, probe_thr)?,
        })
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }
}

/// Group rule on a discrete world: `table[b0][b1][y]` is the group of every
/// cell `(b0, b1, s)` with label `y`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DiscreteGroupRule {
    pub table: [[[usize; 2]; 2]; 2],
    pub m: usize,
}

impl DiscreteGroupRule {
    pub fn group(&self, c: Cell, y: usize) -> usize {
        self.table[c.b0][c.b1][y]
    }

    /// Majority (0): `argmax P(Y | b0, b1) = y`, lowest class on ties within
    /// `1e-12`; minority (1) otherwise.
    pub fn majority_minority(world: &DiscreteWorld) -> Self {
        let mut table = [[[0; 2]; 2]; 2];
        for (b0, plane) in table.iter_mut().enumerate() {
            for (b1, row) in plane.iter_mut().enumerate() {
                let p = world
                    .bayes_posterior(b0, b1, None)
                    .expect("all cells have mass");
                let pred = usize::from(p[1] > p[0] + EXACT_TOL);
                for (y, g) in row.iter_mut().enumerate() {
                    *g = usize::from(pred != y);
                }
            }
        }
        Self { table, m: 2 }
    }

    /// Strata of the exact spurious-only posterior: cells `(b0, b1)` with
    /// equal `P(Y | b0, b1)` (within `1e-12`) share a group, numbered by
    /// increasing `P(Y=0 | b0, b1)`.
    pub fn ideal_strata(world: &DiscreteWorld) -> Self {
        let mut post = Vec::new();
        for b0 in 0..2 {
            for b1 in 0..2 {
                post.push((
                    (b0, b1),
                    world.bayes_posterior(b0, b1, None).expect("mass")[0],
                ));
            }
        }
        let mut values: Vec<f64> = post.iter().map(|p| p.1).collect();
        values.sort_by(f64::total_cmp);
        values.dedup_by(|a, b| (*a - *b).abs() <= EXACT_TOL);
        let mut table = [[[0; 2]; 2]; 2];
        for ((b0, b1), v) in post {
            let g = values
                .iter()
                .position(|u| (u - v).abs() <= EXACT_TOL)
                .expect("value present");
            table[b0][b1] = [g, g];
        }
        Self {
            table,
            m: values.len(),
        }
    }

    /// Label masses `P(g, Y=y)`.
    pub fn label_masses(&self, world: &DiscreteWorld) -> Vec<[f64; 2]> {
        let mut m = vec![[0.0; 2]; self.m];
        for c in world.cells() {
            for y in 0..2 {
                m[self.group(c, y)][y] += world.mass(c, y);
            }
        }
        m
    }
}

pub fn label_balance_discrete(
    world: &DiscreteWorld,
    rule: &DiscreteGroupRule,
    tol: f64,
) -> LabelBalance {
    label_balance_from_masses(&rule.label_masses(world), tol)
}

/// Predictor on a discrete world: `probs[world.cell_index(c)]` is the output
/// for cell `c`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiscretePredictor {
    pub probs: Vec<[f64; 2]>,
}

impl DiscretePredictor {
    pub fn from_fn(world: &DiscreteWorld, f: impl Fn(Cell) -> [f64; 2]) -> Self {
        let mut probs = vec![[0.5, 0.5]; 4 * world.s_card];
        for c in world.cells() {
            probs[world.cell_index(c)] = f(c);
        }
        Self { probs }
    }

    pub fn constant(world: &DiscreteWorld, p: [f64; 2]) -> Self {
        Self::from_fn(world, |_| p)
    }

    /// `P(Y | S)`.
    pub fn invariant(world: &DiscreteWorld) -> Self {
        Self::from_fn(world, |c| world.invariant_posterior(c.s).expect("mass"))
    }

    /// `P(Y | B0, B1, S)`.
    pub fn full_bayes(world: &DiscreteWorld) -> Self {
        Self::from_fn(world, |c| {
            world.bayes_posterior(c.b0, c.b1, Some(c.s)).expect("mass")
        })
    }

    /// `P(Y | S, B1)`.
    pub fn invariant_and_b1(world: &DiscreteWorld) -> Self {
        Self::from_fn(world, |c| {
            world
                .conditional_label(|d| d.s == c.s && d.b1 == c.b1)
                .expect("mass")
        })
    }

    fn output(&self, world: &DiscreteWorld, c: Cell) -> f64 {
        self.probs[world.cell_index(c)][1]
    }

    /// Output buckets: every cell maps to the index of its bucket. Outputs
    /// are sorted and consecutive values within `tol` are merged; `tol = 0`
    /// is exact equality.
    fn buckets(&self, world: &DiscreteWorld, tol: f64) -> (Vec<usize>, usize) {
        let cells = world.cells();
        let mut order: Vec<usize> = (0..cells.len()).collect();
        let vals: Vec<f64> = cells.iter().map(|&c| self.output(world, c)).collect();
        order.sort_by(|&a, &b| vals[a].total_cmp(&vals[b]));
        let mut bucket = vec![0usize; cells.len()];
        let mut k = 0;
        for w in 0..order.len() {
            if w > 0 && vals[order[w]] - vals[order[w - 1]] > tol {
                k += 1;
            }
            bucket[world.cell_index(cells[order[w]])] = k;
        }
        (bucket, k + 1)
    }
}

/// Max over output buckets and group pairs of
/// `|P(Y=1 | f=a, g) - P(Y=1 | f=a, g')|`, exact from the joint table.
pub fn eic_deviation_discrete(
    world: &DiscreteWorld,
    rule: &DiscreteGroupRule,
    predictor: &DiscretePredictor,
    bucket_tol: f64,
) -> f64 {
    let (bucket, nb) = predictor.buckets(world, bucket_tol);
    let mut mass = vec![vec![[0.0; 2]; rule.m]; nb];
    for c in world.cells() {
        let a = bucket[world.cell_index(c)];
        for y in 0..2 {
            mass[a][rule.group(c, y)][y] += world.mass(c, y);
        }
    }
    let mut worst = 0.0f64;
    for per_group in &mass {
        let cond: Vec<f64> = per_group
            .iter()
            .filter(|m| m[0] + m[1] > 0.0)
            .map(|m| m[1] / (m[0] + m[1]))
            .collect();
        for i in 0..cond.len() {
            for j in i + 1..cond.len() {
                worst = worst.max((cond[i] - cond[j]).abs());
            }
        }
    }
    worst
}

/// Max over output buckets, labels and spurious pairs `(b, b')` of
/// `|P(f=a | X_sp=b, Y=y) - P(f=a | X_sp=b', Y=y)|`, exact from the joint
/// table.
pub fn sfc_deviation_discrete(
    world: &DiscreteWorld,
    predictor: &DiscretePredictor,
    bucket_tol: f64,
) -> f64 {
    let (bucket, nb) = predictor.buckets(world, bucket_tol);
    let mut worst = 0.0f64;
    for y in 0..2 {
        // cond[b][a] = P(f in a | b, y)
        let mut cond: Vec<Vec<f64>> = Vec::new();
        for b0 in 0..2 {
            for b1 in 0..2 {
                let mut per = vec![0.0; nb];
                let mut total = 0.0;
                for s in 0..world.s_card {
                    let c = Cell { b0, b1, s };
                    let m = world.mass(c, y);
                    per[bucket[world.cell_index(c)]] += m;
                    total += m;
                }
                if total > 0.0 {
                    cond.push(per.into_iter().map(|v| v / total).collect());
                }
            }
        }
        for i in 0..cond.len() {
            for j in i + 1..cond.len() {
                for a in 0..nb {
                    worst = worst.max((cond[i][a] - cond[j][a]).abs());
                }
            }
        }
    }
    worst
}

/// Max over labels and spurious pairs `(b, b')` of the Wasserstein-1
/// distance between the laws of `f = P(Y=1 | x)` given `(b, y)` and given
/// `(b', y)`. Zero exactly when SFC holds; unlike the bucketed deviation it
/// is continuous in the output table.
pub fn sfc_transport_deviation_discrete(
    world: &DiscreteWorld,
    predictor: &DiscretePredictor,
) -> f64 {
    let mut worst = 0.0f64;
    for y in 0..2 {
        let mut laws: Vec<Vec<(f64, f64)>> = Vec::new();
        for b0 in 0..2 {
            for b1 in 0..2 {
                let mut law = Vec::new();
                let mut total = 0.0;
                for s in 0..world.s_card {
                    let c = Cell { b0, b1, s };
                    let m = world.mass(c, y);
                    if m > 0.0 {
                        law.push((predictor.output(world, c), m));
                        total += m;
                    }
                }
                if total > 0.0 {
                    laws.push(law.into_iter().map(|(v, m)| (v, m / total)).collect());
                }
            }
        }
        for i in 0..laws.len() {
            for j in i + 1..laws.len() {
                worst = worst.max(wasserstein_1(&laws[i], &laws[j]));
            }
        }
    }
    worst
}

/// `W1` between two finite laws on the line, as the integral of the CDF gap.
fn wasserstein_1(a: &[(f64, f64)], b: &[(f64, f64)]) -> f64 {
    let mut points: Vec<(f64, f64)> = a
        .iter()
        .copied()
        .chain(b.iter().map(|&(v, m)| (v, -m)))
        .collect();
    points.sort_by(|x, y| x.0.total_cmp(&y.0));
    let mut gap = 0.0f64;
    let mut total = 0.0;
    for w in 0..points.len() {
        if w > 0 {
            total += gap.abs() * (points[w].0 - points[w - 1].0);
        }
        gap += points[w].1;
    }
    total
}

/// A function of the spurious bits, given by its value on each `(b0, b1)`
/// (index `2 b0 + b1`).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SpuriousMap {
    pub values: [u8; 4],
}

impl SpuriousMap {
    pub fn eval(&self, b0: usize, b1: usize) -> u8 {
        self.values[b0 * 2 + b1]
    }

    /// The 16 binary maps followed by the identity `(b0, b1) -> 2 b0 + b1`.
    pub fn family() -> Vec<SpuriousMap> {
        let mut out: Vec<SpuriousMap> = (0..16u8)
            .map(|k| SpuriousMap {
                values: [0, 1, 2, 3].map(|j| (k >> j) & 1),
            })
            .collect();
        out.push(SpuriousMap {
            values: [0, 1, 2, 3],
        });
        out
    }

    /// True when the map is a relabelling of `B0`.
    pub fn is_b0(&self) -> bool {
        let v = self.values;
        v[0] == v[1] && v[2] == v[3] && v[0] != v[2]
    }

    /// True when the map is a relabelling of `B1`.
    pub fn is_b1(&self) -> bool {
        let v = self.values;
        v[0] == v[2] && v[1] == v[3] && v[0] != v[1]
    }
}

/// Every `h` in [`SpuriousMap::family`] whose label posterior is identical
/// across groups (every value of `h` has mass in every group and
/// `P(Y | h, g) = P(Y | h, g')` within `1e-12`) while still predictive
/// (`P(Y | h = v) != P(Y)` for some `v`).
pub fn falsity_exposure_witnesses(
    world: &DiscreteWorld,
    rule: &DiscreteGroupRule,
) -> Vec<SpuriousMap> {
    let prior1 = 1.0 - world.label_prior;
    let mut out = Vec::new();
    for h in SpuriousMap::family() {
        let mut mass = vec![vec![[0.0f64; 2]; rule.m]; 4];
        for c in world.cells() {
            let v = h.eval(c.b0, c.b1) as usize;
            for y in 0..2 {
                mass[v][rule.group(c, y)][y] += world.mass(c, y);
            }
        }
        let mut invariant = true;
        let mut predictive = false;
        for per_group in &mass {
            let tot = per_group
                .iter()
                .fold([0.0; 2], |a, m| [a[0] + m[0], a[1] + m[1]]);
            if tot[0] + tot[1] <= 0.0 {
                continue;
            }
            let pv = tot[1] / (tot[0] + tot[1]);
            if (pv - prior1).abs() > EXACT_TOL {
                predictive = true;
            }
            // Invariance needs the event in every group.
            for m in per_group {
                if m[0] + m[1] <= 0.0 || (m[1] / (m[0] + m[1]) - pv).abs() > EXACT_TOL {
                    invariant = false;
                }
            }
        }
        if invariant && predictive {
            out.push(h);
        }
    }
    out
}

/// First witness of a falsity-exposure violation, if any.
pub fn falsity_exposure_violation_discrete(
    world: &DiscreteWorld,
    rule: &DiscreteGroupRule,
) -> Option<SpuriousMap> {
    falsity_exposure_witnesses(world, rule).into_iter().next()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synth::build_discrete_world;
    use approx::assert_relative_eq;

    #[test]
    fn ratio_examples() {
        let lb = label_balance_from_masses(&[[2.87, 1.0], [0.17, 1.0]], 0.1);
        assert!(!lb.pass);
        assert_relative_eq!(
            lb.max_log_deviation,
            (2.87f64 / 0.17).ln(),
            max_relative = 1e-12
        );
        let lb = label_balance_from_masses(&[[30.0, 10.0], [60.0, 20.0]], 0.1);
        assert!(lb.pass);
        assert_eq!(lb.max_log_deviation, 0.0);
        let lb = label_balance_from_masses(&[[5.0, 0.0], [1.0, 1.0]], 0.1);
        assert_eq!(lb.ratios[0], None);
        assert!(lb.pass);
    }

    #[test]
    fn witness_on_asymmetric_world_is_b1() {
        let w = build_discrete_world(0.9, 0.8, 0.75, 0.5).unwrap();
        let rule = DiscreteGroupRule::majority_minority(&w);
        let all = falsity_exposure_witnesses(&w, &rule);
        assert!(!all.is_empty());
        assert!(all.iter().all(|h| h.is_b1()), "{all:?}");
        let w = build_discrete_world(0.8, 0.9, 0.75, 0.5).unwrap();
        let rule = DiscreteGroupRule::majority_minority(&w);
        let h = falsity_exposure_violation_discrete(&w, &rule).unwrap();
        assert!(h.is_b0());
    }

    #[test]
    fn no_witness_on_symmetric_world_or_ideal_strata() {
        let w = build_discrete_world(0.8, 0.8, 0.75, 0.5).unwrap();
        assert_eq!(
            falsity_exposure_violation_discrete(&w, &DiscreteGroupRule::majority_minority(&w)),
            None
        );
        let w = build_discrete_world(0.9, 0.8, 0.75, 0.5).unwrap();
        assert_eq!(
            falsity_exposure_violation_discrete(&w, &DiscreteGroupRule::ideal_strata(&w)),
            None
        );
    }

    #[test]
    fn majority_cells_on_asymmetric_world() {
        let w = build_discrete_world(0.9, 0.8, 0.75, 0.5).unwrap();
        let rule = DiscreteGroupRule::majority_minority(&w);
        // B0 dominates: the majority is exactly {Y = B0}.
        for b0 in 0..2 {
            for b1 in 0..2 {
                for y in 0..2 {
                    assert_eq!(rule.table[b0][b1][y], usize::from(y != b0));
                }
            }
        }
    }

    #[test]
    fn eic_examples() {
        let w = build_discrete_world(0.9, 0.8, 0.75, 0.5).unwrap();
        let rule = DiscreteGroupRule::majority_minority(&w);
        let m = rule.label_masses(&w);
        let pg: Vec<f64> = m.iter().map(|m| m[1] / (m[0] + m[1])).collect();
        let c = DiscretePredictor::constant(&w, [0.3, 0.7]);
        assert_relative_eq!(
            eic_deviation_discrete(&w, &rule, &c, 0.0),
            (pg[0] - pg[1]).abs(),
            epsilon = 1e-15
        );

        // One informative spurious bit, uniform labels: the split is label balanced.
        let cm = build_discrete_world(0.8, 0.5, 0.75, 0.5).unwrap();
        let rule = DiscreteGroupRule::majority_minority(&cm);
        assert!(label_balance_discrete(&cm, &rule, 0.1).max_log_deviation < 1e-12);
        assert!(
            eic_deviation_discrete(&cm, &rule, &DiscretePredictor::invariant(&cm), 0.0) < 1e-12
        );
        assert!(eic_deviation_discrete(&cm, &rule, &DiscretePredictor::full_bayes(&cm), 0.0) > 0.5);
        assert_eq!(falsity_exposure_violation_discrete(&cm, &rule), None);
    }

    #[test]
    fn invariant_predictor_breaks_eic_under_label_imbalance() {
        let w = build_discrete_world(0.9, 0.8, 0.75, 0.5).unwrap();
        let rule = DiscreteGroupRule::ideal_strata(&w);
        assert!(label_balance_discrete(&w, &rule, 0.1).max_log_deviation > 0.1);
        assert!(eic_deviation_discrete(&w, &rule, &DiscretePredictor::invariant(&w), 0.0) > 1e-3);
    }

    #[test]
    fn sfc_examples() {
        let w = build_discrete_world(0.9, 0.8, 0.75, 0.5).unwrap();
        assert!(sfc_deviation_discrete(&w, &DiscretePredictor::invariant(&w), 0.0) < 1e-12);
        assert_eq!(
            sfc_deviation_discrete(&w, &DiscretePredictor::constant(&w, [0.5, 0.5]), 0.0),
            0.0
        );
        assert!(sfc_deviation_discrete(&w, &DiscretePredictor::invariant_and_b1(&w), 0.0) > 0.1);
    }

    #[test]
    fn bucketing_tolerance_merges_near_values() {
        let w = build_discrete_world(0.9, 0.8, 0.75, 0.5).unwrap();
        let inv = DiscretePredictor::invariant(&w);
        let jittered = DiscretePredictor::from_fn(&w, |c| {
            let p = inv.probs[w.cell_index(c)];
            let e = 1e-9 * (c.b0 + 2 * c.b1) as f64;
            [p[0] - e, p[1] + e]
        });
        assert!(sfc_deviation_discrete(&w, &jittered, 0.0) > 0.1);
        assert!(sfc_deviation_discrete(&w, &jittered, 1e-6) < 1e-12);
    }

    #[test]
    fn transport_deviation_is_continuous() {
        let w = build_discrete_world(0.9, 0.8, 0.75, 0.5).unwrap();
        let inv = DiscretePredictor::invariant(&w);
        assert!(sfc_transport_deviation_discrete(&w, &inv) < 1e-15);
        let jittered = DiscretePredictor::from_fn(&w, |c| {
            let p = inv.probs[w.cell_index(c)];
            let e = 1e-9 * (c.b0 + 2 * c.b1) as f64;
            [p[0] - e, p[1] + e]
        });
        let d = sfc_transport_deviation_discrete(&w, &jittered);
        assert!((d - 3e-9).abs() < 1e-15, "{d}");
        assert!(
            sfc_transport_deviation_discrete(&w, &DiscretePredictor::invariant_and_b1(&w)) > 0.1
        );
    }

    #[test]
    fn wasserstein_of_point_masses() {
        assert!((wasserstein_1(&[(0.2, 1.0)], &[(0.7, 1.0)]) - 0.5).abs() < 1e-15);
        let a = [(0.0, 0.5), (1.0, 0.5)];
        let b = [(0.0, 0.25), (1.0, 0.75)];
        assert!((wasserstein_1(&a, &b) - 0.25).abs() < 1e-15);
    }

    #[test]
    fn probe_passes_on_split_groups() {
        let p0 = [0.9, 0.8, 0.7, 0.6, 0.4, 0.3, 0.2, 0.1, 0.85, 0.15];
        let labels = [0, 0, 1, 0, 1, 1, 1, 1, 0, 0];
        let mut a = ndarray::Array2::zeros((10, 2));
        for (i, p) in p0.iter().enumerate() {
            a[[i, 0]] = *p;
            a[[i, 1]] = 1.0 - p;
        }
        let r = ReferenceOutputs::new(a).unwrap();
        let asg = crate::groups::statistical_split_t(&r, &labels, 1.5).unwrap();
        let report = CriteriaReport::build(&r, &labels, &asg, 0.1, 1.5).unwrap();
        assert!(report.falsity_exposure.pass);
        let json = report.to_json();
        let back: CriteriaReport = serde_json::from_str(&json).unwrap();
        assert_eq!(back, report);
    }
}
