//! Reference model, group inference, grid training and checkpoint selection.

use std::path::Path;

use scill_core::criteria::CriteriaReport;
use scill_core::groups::{
    ei_soft_infer, group_centers, statistical_split, ReferenceOutputs, SplitRule,
};
use scill_core::ingest::{read_idx_file, IdxTensor};
use scill_core::model::accuracy;
use scill_core::select::{
    score_trajectory, select_from_scores, tev_allocate, Selection, SelectionSets, SelectionStrategy,
};
use scill_core::stats::TTestKind;
use scill_core::synth::{build_pcmnist, ImageSource, PC_DIM};
use scill_core::train::{
    compute_group_weights, train_reference, train_scill, PenaltyKind, Snapshot, TrainConfig,
};
use scill_core::{Architecture, GroupAssignment, LabeledDataset, ModelParams};

use crate::config::{DataConfig, ExperimentConfig, GroupConfig, ImageConfig, Method, TrainGrid};
use crate::derive_seed;
use crate::report::{aggregate, ExperimentReport, GroupSummary, ReferenceSummary, SeedResult};
use crate::HarnessError;

const STREAM_TRAIN: u64 = 1;
const STREAM_VAL: u64 = 2;
const STREAM_ORACLE: u64 = 3;
const STREAM_TEST: u64 = 4;
const STREAM_REFERENCE: u64 = 5;
const STREAM_EIIL: u64 = 6;
const STREAM_MODEL: u64 = 7;

/// Training set, in-distribution validation, test-distribution validation
/// and test.
#[derive(Debug, Clone)]
pub struct Splits {
    pub train: LabeledDataset,
    pub val: LabeledDataset,
    pub oracle: LabeledDataset,
    pub test: LabeledDataset,
}

fn slice_images(t: &IdxTensor, start: usize, n: usize) -> Result<IdxTensor, String> {
    if t.dims.len() != 3 || start + n > t.dims[0] {
        return Err(format!(
            "image pool of shape {:?} cannot supply rows {start}..{}",
            t.dims,
            start + n
        ));
    }
    let per = t.dims[1] * t.dims[2];
    IdxTensor::new(
        vec![n, t.dims[1], t.dims[2]],
        t.data[start * per..(start + n) * per].to_vec(),
    )
    .map_err(|e| e.to_string())
}

fn read_pool(images: &Path, labels: &Path) -> Result<(IdxTensor, Vec<u8>), HarnessError> {
    let imgs = read_idx_file(images).map_err(|e| HarnessError::io(images, e))?;
    let digits = read_idx_file(labels).map_err(|e| HarnessError::io(labels, e))?;
    Ok((imgs, digits.data))
}

/// Builds the four datasets for `seed`.
pub fn build_splits(data: &DataConfig, seed: u64) -> Result<Splits, String> {
    let sets = [
        (data.n_train, data.train, STREAM_TRAIN),
        (data.n_val, data.train, STREAM_VAL),
        (data.n_oracle, data.test, STREAM_ORACLE),
        (data.n_test, data.test, STREAM_TEST),
    ];
    let built: Vec<LabeledDataset> = match &data.images {
        ImageConfig::Surrogate { params } => sets
            .iter()
            .map(|&(n, p, stream)| {
                build_pcmnist(
                    ImageSource::Surrogate { n, params: *params },
                    p,
                    derive_seed(seed, stream),
                )
                .map_err(|e| e.to_string())
            })
            .collect::<Result<_, _>>()?,
        ImageConfig::Idx {
            train_images,
            train_labels,
            test_images,
            test_labels,
        } => {
            let (pool, pool_digits) =
                read_pool(train_images, train_labels).map_err(|e| e.to_string())?;
            let (tpool, tpool_digits) =
                read_pool(test_images, test_labels).map_err(|e| e.to_string())?;
            let mut out = Vec::new();
            let mut start = 0;
            for (k, &(n, p, stream)) in sets.iter().enumerate() {
                let (src, digits, offset) = if k == 3 {
                    (&tpool, &tpool_digits, 0)
                } else {
                    (&pool, &pool_digits, start)
                };
                let images = slice_images(src, offset, n)?;
                let d = digits
                    .get(offset..offset + n)
                    .ok_or("label pool too short")?;
                out.push(
                    build_pcmnist(
                        ImageSource::Idx {
                            images: &images,
                            digits: d,
                            n,
                        },
                        p,
                        derive_seed(seed, stream),
                    )
                    .map_err(|e| e.to_string())?,
                );
                if k < 3 {
                    start += n;
                }
            }
            out
        }
    };
    let mut it = built.into_iter();
    Ok(Splits {
        train: it.next().expect("train"),
        val: it.next().expect("val"),
        oracle: it.next().expect("oracle"),
        test: it.next().expect("test"),
    })
}

pub fn mlp(hidden: usize) -> Architecture {
    Architecture::Mlp {
        input: PC_DIM,
        hidden1: hidden,
        hidden2: hidden,
        classes: 2,
    }
}

pub fn reference_outputs(
    params: &ModelParams,
    ds: &LabeledDataset,
) -> Result<ReferenceOutputs, String> {
    let probs = params
        .predict_proba(ds.features.view())
        .map_err(|e| e.to_string())?;
    ReferenceOutputs::new(probs).map_err(|e| e.to_string())
}

/// Groups for `method`; ERM gets a single group.
pub fn infer_groups(
    method: Method,
    reference: &ReferenceOutputs,
    labels: &[u8],
    cfg: &GroupConfig,
    seed: u64,
) -> Result<(GroupAssignment, bool), String> {
    let (mut asg, degenerate) = match method {
        Method::Erm => (
            GroupAssignment::from_group_of(vec![0; labels.len()], labels)
                .map_err(|e| e.to_string())?,
            false,
        ),
        Method::Scill | Method::ScillUw => {
            let rule = match cfg.p_thr {
                Some(p_threshold) => SplitRule::PValue { p_threshold },
                None => SplitRule::TStat { threshold: cfg.thr },
            };
            (
                statistical_split(reference, labels, rule, TTestKind::Pooled)
                    .map_err(|e| e.to_string())?,
                false,
            )
        }
        Method::Eiil | Method::EiilLb => {
            let soft = ei_soft_infer(
                reference,
                labels,
                cfg.eiil_steps,
                cfg.eiil_lr,
                derive_seed(seed, STREAM_EIIL),
            )
            .map_err(|e| e.to_string())?;
            (soft.assignment, soft.degenerate)
        }
    };
    compute_group_weights(&mut asg, labels);
    Ok((asg, degenerate))
}

/// One trained grid point.
struct GridRun {
    lambda: f64,
    anneal: usize,
    trajectory: Vec<Snapshot>,
}

fn grid_points(method: Method, grid: &TrainGrid) -> Vec<(f64, usize)> {
    if method == Method::Erm {
        return vec![(0.0, 0)];
    }
    let mut out = Vec::new();
    for &l in &grid.lambdas {
        for &a in &grid.anneals {
            out.push((l, a));
        }
    }
    out
}

fn train_grid(
    method: Method,
    penalty: &PenaltyKind,
    train: &LabeledDataset,
    asg: &GroupAssignment,
    grid: &TrainGrid,
    seed: u64,
) -> Result<Vec<GridRun>, String> {
    grid_points(method, grid)
        .into_iter()
        .map(|(lambda, anneal)| {
            let config = TrainConfig {
                lr: grid.lr,
                epochs: grid.epochs,
                anneal_epochs: anneal,
                lambda,
                ramp_rate: grid.ramp_rate,
                seed: derive_seed(seed, STREAM_MODEL),
                penalty: penalty.clone(),
                checkpoint_every: grid.checkpoint_every,
                reweight: method.reweights(),
                penalty_uses_weights: true,
                rescale_penalty: grid.rescale_penalty,
                batch_size: grid.batch_size,
                optimizer: grid.optimizer,
                l2: grid.l2,
            };
            let run =
                train_scill(train, asg, &config, mlp(grid.hidden)).map_err(|e| e.to_string())?;
            Ok(GridRun {
                lambda,
                anneal,
                trajectory: run.trajectory,
            })
        })
        .collect()
}

/// Best (grid point, checkpoint) for each strategy; ties keep the earliest
/// grid point and checkpoint.
fn select_over_grid(
    runs: &[GridRun],
    sets: &SelectionSets<'_>,
    strategies: &[SelectionStrategy],
) -> Result<Vec<(SelectionStrategy, usize, Selection)>, String> {
    let scores = runs
        .iter()
        .map(|r| score_trajectory(&r.trajectory, sets).map_err(|e| e.to_string()))
        .collect::<Result<Vec<_>, _>>()?;
    let mut out = Vec::new();
    for &s in strategies {
        let mut best: Option<(usize, Selection)> = None;
        for (k, sc) in scores.iter().enumerate() {
            let sel = select_from_scores(sc, s).map_err(|e| e.to_string())?;
            if best
                .as_ref()
                .is_none_or(|(_, b)| sel.val_metric > b.val_metric)
            {
                best = Some((k, sel));
            }
        }
        let (k, sel) = best.ok_or("empty grid")?;
        out.push((s, k, sel));
    }
    Ok(out)
}

/// Progress sink; `None` is silent.
pub type Log<'a> = Option<&'a mut dyn FnMut(&str)>;

fn say(log: &mut Log<'_>, msg: &str) {
    if let Some(f) = log.as_deref_mut() {
        f(msg);
    }
}

/// Runs every method, penalty and seed of `config`. When `out_dir` is set,
/// reports and the selected checkpoints are written there.
pub fn run_experiment(
    config: &ExperimentConfig,
    out_dir: Option<&Path>,
    mut log: Log<'_>,
) -> Result<ExperimentReport, HarnessError> {
    config.validate()?;
    let hash = config.hash();
    let stage = |stage: &'static str| {
        let hash = hash.clone();
        move |message: String| HarnessError::Stage {
            stage,
            hash: hash.clone(),
            message,
        }
    };
    let mut per_seed = Vec::new();
    let mut reference_summaries = Vec::new();
    let mut group_summaries = Vec::new();
    let mut checkpoints: Vec<(String, ModelParams)> = Vec::new();
    for &seed in &config.seeds {
        let splits = build_splits(&config.data, seed).map_err(stage("data"))?;
        let reference = train_reference(
            &splits.train,
            mlp(config.reference.hidden),
            config.reference.epochs,
            config.reference.lr,
            derive_seed(seed, STREAM_REFERENCE),
        )
        .map_err(|e| stage("reference")(e.to_string()))?;
        let acc = |ds: &LabeledDataset| -> Result<f64, HarnessError> {
            accuracy(&reference, ds.features.view(), &ds.labels)
                .map(|a| 100.0 * a)
                .map_err(|e| stage("reference")(e.to_string()))
        };
        let summary = ReferenceSummary {
            seed,
            train_acc: acc(&splits.train)?,
            val_acc: acc(&splits.val)?,
            test_acc: acc(&splits.test)?,
        };
        say(
            &mut log,
            &format!(
                "seed {seed}: reference train {:.2} val {:.2} test {:.2}",
                summary.train_acc, summary.val_acc, summary.test_acc
            ),
        );
        reference_summaries.push(summary);
        let train_ref = reference_outputs(&reference, &splits.train).map_err(stage("reference"))?;
        let val_ref = reference_outputs(&reference, &splits.val).map_err(stage("reference"))?;

        for &method in &config.methods {
            let (asg, degenerate) = infer_groups(
                method,
                &train_ref,
                &splits.train.labels,
                &config.groups,
                seed,
            )
            .map_err(stage("groups"))?;
            let criteria = CriteriaReport::build(
                &train_ref,
                &splits.train.labels,
                &asg,
                config.groups.balance_tol,
                config.groups.thr,
            )
            .map_err(|e| stage("criteria")(e.to_string()))?;
            say(
                &mut log,
                &format!(
                    "seed {seed} {method}: {} groups {:?}",
                    asg.m, asg.label_counts
                ),
            );
            group_summaries.push(GroupSummary {
                method,
                seed,
                m: asg.m,
                label_counts: asg.label_counts.clone(),
                degenerate,
                criteria,
            });

            let centers =
                group_centers(&train_ref, &asg).map_err(|e| stage("select")(e.to_string()))?;
            let omega: Vec<[Option<f64>; 2]> = if method.reweights() {
                asg.weights
                    .clone()
                    .expect("weights computed with the groups")
            } else {
                vec![[Some(1.0); 2]; asg.m]
            };
            let tev = tev_allocate(&val_ref, &splits.val.labels, &centers, &omega)
                .map_err(|e| stage("select")(e.to_string()))?;
            let sets = SelectionSets {
                id_val: Some(&splits.val),
                oracle_val: Some(&splits.oracle),
                tev: Some((&splits.val, &tev.weights)),
                test: Some(&splits.test),
            };

            let penalties: Vec<PenaltyKind> = if method == Method::Erm {
                vec![PenaltyKind::Irm]
            } else {
                config.penalties.clone()
            };
            for penalty in penalties {
                let pname = if method == Method::Erm {
                    "none"
                } else {
                    penalty.name()
                };
                let runs = train_grid(method, &penalty, &splits.train, &asg, &config.train, seed)
                    .map_err(stage("train"))?;
                for (strategy, k, sel) in
                    select_over_grid(&runs, &sets, &config.strategies).map_err(stage("select"))?
                {
                    let run = &runs[k];
                    let result = SeedResult {
                        method,
                        penalty: pname.to_string(),
                        seed,
                        strategy,
                        val: 100.0 * sel.val_metric,
                        test: 100.0 * sel.test_metric.expect("test set supplied"),
                        lambda: run.lambda,
                        anneal: run.anneal,
                        epoch: sel.epoch,
                    };
                    say(&mut log, &format!(
                        "seed {seed} {method}/{pname} {}: val {:.2} test {:.2} (lambda {} anneal {} epoch {})",
                        strategy.name(), result.val, result.test, run.lambda, run.anneal, sel.epoch
                    ));
                    per_seed.push(result);
                    checkpoints.push((
                        format!(
                            "{}_{}_seed{}_{}.json",
                            method.name(),
                            pname,
                            seed,
                            strategy.name()
                        ),
                        run.trajectory[sel.index].params.clone(),
                    ));
                }
            }
        }
    }
    let report = ExperimentReport {
        name: config.name.clone(),
        config_hash: hash.clone(),
        rows: aggregate(&per_seed),
        per_seed,
        reference: reference_summaries,
        groups: group_summaries,
    };
    if let Some(dir) = out_dir {
        report.write_dir(dir)?;
        let ck = dir.join("checkpoints");
        std::fs::create_dir_all(&ck).map_err(|e| HarnessError::io(&ck, e))?;
        for (name, params) in &checkpoints {
            let p = ck.join(name);
            std::fs::write(&p, params.to_json()).map_err(|e| HarnessError::io(&p, e))?;
        }
        let cfg = dir.join("config.toml");
        std::fs::write(&cfg, config.to_toml()).map_err(|e| HarnessError::io(&cfg, e))?;
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny() -> ExperimentConfig {
        let mut c = ExperimentConfig::quick();
        c.seeds = vec![3];
        c.methods = vec![Method::Erm, Method::Scill];
        c.data.n_train = 300;
        c.data.n_val = 60;
        c.data.n_oracle = 60;
        c.data.n_test = 60;
        c.reference.epochs = 5;
        c.reference.hidden = 4;
        c.train.hidden = 4;
        c.train.epochs = 6;
        c.train.anneals = vec![2];
        c.train.lambdas = vec![1.0];
        c.groups.thr = 2.0;
        c
    }

    #[test]
    fn splits_are_seeded() {
        let c = tiny();
        let a = build_splits(&c.data, 1).unwrap();
        let b = build_splits(&c.data, 1).unwrap();
        let d = build_splits(&c.data, 2).unwrap();
        assert_eq!(a.train.features, b.train.features);
        assert_ne!(a.train.features, d.train.features);
        assert_ne!(a.train.features, a.val.features);
        assert_eq!(a.test.len(), 60);
    }

    #[test]
    fn erm_uses_one_group_and_one_grid_point() {
        assert_eq!(
            grid_points(Method::Erm, &ExperimentConfig::full().train),
            vec![(0.0, 0)]
        );
        assert_eq!(
            grid_points(Method::Scill, &ExperimentConfig::full().train).len(),
            20
        );
        let refs = ReferenceOutputs::new(ndarray::array![[0.7, 0.3], [0.2, 0.8]]).unwrap();
        let (asg, _) = infer_groups(Method::Erm, &refs, &[0, 1], &tiny().groups, 0).unwrap();
        assert_eq!(asg.m, 1);
    }

    #[test]
    fn tiny_pipeline_is_deterministic() {
        let c = tiny();
        let a = run_experiment(&c, None, None).unwrap();
        let b = run_experiment(&c, None, None).unwrap();
        assert_eq!(a.to_json(), b.to_json());
        assert_eq!(a.rows.len(), 2 * 3);
        assert!(a
            .rows
            .iter()
            .all(|r| r.test_mean >= 0.0 && r.test_mean <= 100.0));
    }
}
