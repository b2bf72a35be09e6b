use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use scill_core::train::{train_reference, train_scill, PenaltyKind, TrainConfig};
use scill_core::{Architecture, GroupAssignment, LabeledDataset};

fn data(n: usize, d: usize, seed: u64) -> LabeledDataset {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let x = Array2::from_shape_fn((n, d), |_| rng.random_range(-1.0..1.0));
    let labels = (0..n)
        .map(|i| u8::from(x[[i, 0]] + 0.3 * rng.random::<f64>() > 0.1))
        .collect();
    LabeledDataset::new(x, labels).unwrap()
}

#[test]
fn zero_penalty_single_group_is_erm() {
    let ds = data(64, 5, 1);
    let arch = Architecture::Mlp {
        input: 5,
        hidden1: 6,
        hidden2: 4,
        classes: 2,
    };
    let asg = GroupAssignment::from_group_of(vec![0; ds.len()], &ds.labels).unwrap();
    for penalty in [
        PenaltyKind::Irm,
        PenaltyKind::Rex,
        PenaltyKind::cmmd_default(),
        PenaltyKind::Pgi,
    ] {
        let config = TrainConfig {
            lr: 0.2,
            epochs: 50,
            anneal_epochs: 0,
            lambda: 0.0,
            seed: 9,
            penalty,
            reweight: false,
            ..TrainConfig::default()
        };
        let run = train_scill(&ds, &asg, &config, arch).unwrap();
        let erm = train_reference(&ds, arch, 50, 0.2, 9).unwrap();
        assert_eq!(run.final_params().flatten(), erm.flatten());
    }
}

#[test]
fn training_is_deterministic_and_snapshots_on_schedule() {
    let ds = data(40, 3, 2);
    let group_of: Vec<usize> = (0..ds.len()).map(|i| i % 3).collect();
    let asg = GroupAssignment::from_group_of(group_of, &ds.labels).unwrap();
    let config = TrainConfig {
        epochs: 26,
        anneal_epochs: 5,
        lambda: 10.0,
        ..TrainConfig::default()
    };
    let arch = Architecture::Mlp {
        input: 3,
        hidden1: 4,
        hidden2: 4,
        classes: 2,
    };
    let a = train_scill(&ds, &asg, &config, arch).unwrap();
    let b = train_scill(&ds, &asg, &config, arch).unwrap();
    assert_eq!(a.trajectory, b.trajectory);
    let epochs: Vec<usize> = a.trajectory.iter().map(|s| s.epoch).collect();
    assert_eq!(epochs, vec![2, 4, 6, 8, 10, 12, 14, 16, 18, 20, 22, 24, 26]);
    assert!(a.history[..5].iter().all(|h| h.lambda_eff == 0.0));
    assert!(a.history[5..].iter().all(|h| h.lambda_eff == 10.0));
}

#[test]
fn minibatch_training_runs_and_is_seeded() {
    let ds = data(50, 3, 3);
    let asg = GroupAssignment::from_group_of((0..50).map(|i| i % 2).collect(), &ds.labels).unwrap();
    let config = TrainConfig {
        epochs: 5,
        anneal_epochs: 1,
        batch_size: Some(16),
        ..TrainConfig::default()
    };
    let arch = Architecture::Logistic { input: 3 };
    let a = train_scill(&ds, &asg, &config, arch).unwrap();
    let b = train_scill(&ds, &asg, &config, arch).unwrap();
    assert_eq!(a.final_params(), b.final_params());
    assert!(a.history.iter().all(|h| h.risk.is_finite()));
}
