use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use scill_core::criteria::falsity_exposure_probe;
use scill_core::groups::{statistical_split_t, ReferenceOutputs};
use scill_core::synth::{build_discrete_world, sample_dataset, Encoding};
use scill_core::GroupAssignment;

const N: usize = 200_000;

#[test]
fn cell_frequencies_within_three_sigma() {
    let world = build_discrete_world(0.9, 0.8, 0.75, 0.45).unwrap();
    let ds = sample_dataset(&world, N, 7, Encoding::Real).unwrap();
    for c in world.cells() {
        for y in 0..2u8 {
            let p = world.mass(c, y as usize);
            let count = (0..N)
                .filter(|&i| {
                    let r = ds.row(i);
                    ds.labels[i] == y
                        && r[0] as usize == c.b0
                        && r[1] as usize == c.b1
                        && r[2] as usize == c.s
                })
                .count();
            let sigma = (N as f64 * p * (1.0 - p)).sqrt();
            assert!(
                (count as f64 - N as f64 * p).abs() <= 3.0 * sigma,
                "{c:?} y={y}: {count} vs {}",
                N as f64 * p
            );
        }
    }
}

#[test]
fn spurious_bits_independent_given_label() {
    let world = build_discrete_world(0.85, 0.7, 0.8, 0.5).unwrap();
    let ds = sample_dataset(&world, N, 11, Encoding::OneHot).unwrap();
    let ann = ds.annotations.as_ref().unwrap();
    for y in 0..2u8 {
        let rows: Vec<usize> = (0..N).filter(|&i| ds.labels[i] == y).collect();
        let n = rows.len() as f64;
        let freq = |f: &dyn Fn(usize) -> bool| rows.iter().filter(|&&i| f(i)).count() as f64 / n;
        for b0 in 0..2u8 {
            for b1 in 0..2u8 {
                let joint = freq(&|i| ann.spurious[i] == [b0, b1]);
                let m0 = freq(&|i| ann.spurious[i][0] == b0);
                let m1 = freq(&|i| ann.spurious[i][1] == b1);
                let p = m0 * m1;
                let sigma = (p * (1.0 - p) / n).sqrt();
                assert!(
                    (joint - p).abs() <= 3.0 * sigma,
                    "y={y} b=({b0},{b1}): {joint} vs {p}"
                );
            }
        }
    }
}

/// Labels drawn independently of the reference output: the probe should
/// pass at the default threshold for every seed.
#[test]
fn probe_is_calibrated_on_shuffled_labels() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let n = 4000;
    for trial in 0..20 {
        let p0: Vec<f64> = (0..n).map(|_| rng.random_range(0.02..0.98)).collect();
        let mut labels: Vec<u8> = p0
            .iter()
            .map(|&p| u8::from(rng.random::<f64>() > p))
            .collect();
        let probs =
            ndarray::Array2::from_shape_fn(
                (n, 2),
                |(i, k)| if k == 0 { p0[i] } else { 1.0 - p0[i] },
            );
        let refs = ReferenceOutputs::new(probs).unwrap();
        let informative = GroupAssignment::from_group_of(vec![0; n], &labels).unwrap();
        assert!(
            !falsity_exposure_probe(&refs, &labels, &informative, 10.0)
                .unwrap()
                .pass,
            "trial {trial}"
        );
        labels.shuffle(&mut rng);
        let asg = statistical_split_t(&refs, &labels, 10.0).unwrap();
        let probe = falsity_exposure_probe(&refs, &labels, &asg, 10.0).unwrap();
        assert_eq!(asg.m, 1, "trial {trial}");
        assert!(
            probe.pass && probe.worst_abs_t < 5.0,
            "trial {trial}: {}",
            probe.worst_abs_t
        );
    }
}
