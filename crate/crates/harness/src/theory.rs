//! Exact checks of the group criteria on a grid of discrete worlds.

use scill_core::criteria::{
    eic_deviation_discrete, falsity_exposure_witnesses, label_balance_discrete,
    sfc_deviation_discrete, sfc_transport_deviation_discrete, DiscreteGroupRule, DiscretePredictor,
};
use scill_core::synth::{build_discrete_world, DiscreteWorld, Encoding, SynthError};
use scill_core::train::{
    compute_group_weights_with_mass, fold_mass, train_scill, PenaltyKind, TrainConfig, TrainError,
};
use scill_core::{Architecture, GroupAssignment, LabeledDataset};
use serde::{Deserialize, Serialize};

/// `(p0, p1, p_s, P(Y=0))`
pub type WorldParams = (f64, f64, f64, f64);

pub fn default_grid() -> Vec<WorldParams> {
    let mut grid = Vec::new();
    for &(p0, p1) in &[
        (0.9, 0.8),
        (0.8, 0.9),
        (0.7, 0.6),
        (0.6, 0.7),
        (0.95, 0.6),
        (0.6, 0.95),
        (0.85, 0.75),
        (0.8, 0.8),
        (0.7, 0.7),
        (0.9, 0.9),
    ] {
        for &ps in &[0.75, 0.9] {
            grid.push((p0, p1, ps, 0.5));
        }
    }
    grid.push((0.9, 0.8, 0.75, 0.45));
    grid.push((0.8, 0.7, 0.8, 0.55));
    grid
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckResult {
    pub world: WorldParams,
    pub check: String,
    pub value: f64,
    pub pass: bool,
    pub detail: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TheoryReport {
    pub checks: Vec<CheckResult>,
}

impl TheoryReport {
    pub fn all_pass(&self) -> bool {
        self.checks.iter().all(|c| c.pass)
    }

    pub fn failures(&self) -> impl Iterator<Item = &CheckResult> {
        self.checks.iter().filter(|c| !c.pass)
    }
}

/// Settings for the tabular training check.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TabularTraining {
    pub lr: f64,
    pub epochs: usize,
    pub lambda: f64,
    /// Output values closer than this share a bucket in the bucketed SFC
    /// deviation.
    pub bucket_tol: f64,
    pub sfc_bound: f64,
}

impl Default for TabularTraining {
    fn default() -> Self {
        Self {
            lr: 0.1,
            epochs: 20_000,
            lambda: 1.0,
            bucket_tol: 1e-6,
            sfc_bound: 1e-3,
        }
    }
}

/// Population rows of `world` with groups from `rule`. Rows follow the order
/// of `DiscreteWorld::population`.
pub fn population_groups(
    world: &DiscreteWorld,
    rule: &DiscreteGroupRule,
) -> (LabeledDataset, GroupAssignment) {
    let pop = world.population(Encoding::OneHot);
    let mut group_of = Vec::with_capacity(pop.len());
    for c in world.cells() {
        for y in 0..2 {
            if world.mass(c, y) > 0.0 {
                group_of.push(rule.group(c, y));
            }
        }
    }
    let asg = GroupAssignment::from_group_of(group_of, &pop.labels).expect("every group has a row");
    (pop, asg)
}

/// Trains the label-balanced objective on the exact population of `world`
/// with a one-hot tabular logistic model and returns its output table.
pub fn train_tabular(
    world: &DiscreteWorld,
    rule: &DiscreteGroupRule,
    penalty: PenaltyKind,
    settings: &TabularTraining,
) -> Result<DiscretePredictor, TrainError> {
    let (mut pop, mut asg) = population_groups(world, rule);
    let mass = pop.weights.clone();
    compute_group_weights_with_mass(&mut asg, &pop.labels, &mass);
    pop.weights = fold_mass(&asg, &mass);
    let config = TrainConfig {
        lr: settings.lr,
        epochs: settings.epochs,
        anneal_epochs: 0,
        lambda: settings.lambda,
        penalty,
        checkpoint_every: Some(settings.epochs.max(1)),
        ..TrainConfig::default()
    };
    let arch = Architecture::Logistic {
        input: world.feature_dim(Encoding::OneHot),
    };
    let run = train_scill(&pop, &asg, &config, arch)?;
    let params = run.final_params();
    Ok(DiscretePredictor::from_fn(world, |c| {
        let x = ndarray::Array1::from(world.encode(c, Encoding::OneHot));
        let p = params.forward(x.view()).expect("feature width matches");
        [p[0], p[1]]
    }))
}

fn check(world: WorldParams, name: &str, value: f64, pass: bool, detail: String) -> CheckResult {
    CheckResult {
        world,
        check: name.to_string(),
        value,
        pass,
        detail,
    }
}

pub fn penalties() -> Vec<PenaltyKind> {
    vec![
        PenaltyKind::Irm,
        PenaltyKind::Rex,
        PenaltyKind::cmmd_default(),
        PenaltyKind::Pgi,
    ]
}

/// Runs every check on every world of `grid`.
pub fn run_theory_suite(
    grid: &[WorldParams],
    settings: &TabularTraining,
) -> Result<TheoryReport, SynthError> {
    let mut checks = Vec::new();
    for &params in grid {
        let (p0, p1, ps, prior) = params;
        let world = build_discrete_world(p0, p1, ps, prior)?;
        let majority = DiscreteGroupRule::majority_minority(&world);
        let strata = DiscreteGroupRule::ideal_strata(&world);

        // The witness argument assumes a uniform label prior; with a skewed
        // prior the majority/minority split can expose every spurious map.
        let witnesses = falsity_exposure_witnesses(&world, &majority);
        let uniform = (prior - 0.5).abs() < 1e-12;
        if uniform && (p0 - p1).abs() > 1e-12 {
            let expected_b1 = p0 > p1;
            let ok = !witnesses.is_empty()
                && witnesses
                    .iter()
                    .all(|h| if expected_b1 { h.is_b1() } else { h.is_b0() });
            checks.push(check(
                params,
                "majority_minority_witness",
                witnesses.len() as f64,
                ok,
                format!("{witnesses:?}"),
            ));
        } else if uniform {
            checks.push(check(
                params,
                "majority_minority_no_witness",
                witnesses.len() as f64,
                witnesses.is_empty(),
                format!("{witnesses:?}"),
            ));
        }
        let strata_witnesses = falsity_exposure_witnesses(&world, &strata);
        checks.push(check(
            params,
            "ideal_strata_no_witness",
            strata_witnesses.len() as f64,
            strata_witnesses.is_empty(),
            format!("{strata_witnesses:?}"),
        ));

        let invariant = DiscretePredictor::invariant(&world);
        for (name, rule) in [("majority_minority", &majority), ("ideal_strata", &strata)] {
            let balance = label_balance_discrete(&world, rule, 0.1);
            if balance.max_log_deviation > 0.1 {
                let eic = eic_deviation_discrete(&world, rule, &invariant, 0.0);
                checks.push(check(
                    params,
                    &format!("{name}_imbalance_breaks_eic"),
                    eic,
                    eic > 1e-9,
                    format!("label log-ratio deviation {:.6}", balance.max_log_deviation),
                ));
            }
        }

        for penalty in penalties() {
            let name = format!("sfc_after_training_{}", penalty.name());
            match train_tabular(&world, &strata, penalty, settings) {
                Ok(pred) => {
                    let transport = sfc_transport_deviation_discrete(&world, &pred);
                    let bucketed = sfc_deviation_discrete(&world, &pred, settings.bucket_tol);
                    let pass = transport < settings.sfc_bound && bucketed < settings.sfc_bound;
                    checks.push(check(
                        params,
                        &name,
                        transport,
                        pass,
                        format!("bucketed {bucketed:.3e}"),
                    ));
                }
                Err(e) => checks.push(check(params, &name, f64::NAN, false, e.to_string())),
            }
        }
    }
    Ok(TheoryReport { checks })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn grid_check_names() {
        let report = run_theory_suite(
            &[(0.9, 0.8, 0.75, 0.5), (0.8, 0.8, 0.9, 0.5)],
            &TabularTraining::default(),
        )
        .unwrap();
        let names = |w: WorldParams| -> Vec<&str> {
            report
                .checks
                .iter()
                .filter(|c| c.world == w)
                .map(|c| c.check.as_str())
                .collect()
        };
        assert!(names((0.9, 0.8, 0.75, 0.5)).contains(&"majority_minority_witness"));
        assert!(names((0.8, 0.8, 0.9, 0.5)).contains(&"majority_minority_no_witness"));
        assert_eq!(
            names((0.8, 0.8, 0.9, 0.5))
                .iter()
                .filter(|n| n.starts_with("sfc_after_training"))
                .count(),
            4
        );
        assert!(
            report.all_pass(),
            "{:?}",
            report.failures().collect::<Vec<_>>()
        );
    }

    #[test]
    fn skewed_prior_skips_witness_check() {
        let report = run_theory_suite(
            &[(0.9, 0.8, 0.75, 0.45)],
            &TabularTraining {
                epochs: 10,
                ..Default::default()
            },
        )
        .unwrap();
        assert!(
            report
                .checks
                .iter()
                .all(|c| !c.check.starts_with("majority_minority_")
                    || c.check.ends_with("breaks_eic"))
        );
    }

    #[test]
    fn default_grid_covers_ties_and_skewed_priors() {
        let grid = default_grid();
        assert_eq!(grid.len(), 22);
        assert!(grid.iter().any(|w| w.0 == w.1));
        assert!(grid.iter().any(|w| w.3 != 0.5));
    }
}
