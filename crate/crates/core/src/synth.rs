//! Synthetic testbeds: discrete worlds with an exact joint table over
//! `(B0, B1, S, Y)`, and the patched-colored digit images (PC-MNIST) built
//! either from IDX digits or from a download-free surrogate renderer.
//!
//! In a discrete world `B_i = j` is the spurious value that points at label
//! `j`, so `p_i = P(Y=j | B_i=j)` for both `j`. `B0`, `B1` and `S` are
//! conditionally independent given `Y`.

use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dataset::{Annotations, LabeledDataset};
use crate::ingest::IdxTensor;

#[derive(Debug, Error, PartialEq)]
pub enum SynthError {
    #[error("{name} = {value} is outside {range}")]
    Domain {
        name: &'static str,
        value: f64,
        range: &'static str,
    },
    #[error("no label-conditional distribution of B{index} yields posterior {posterior} under prior P(Y=0) = {prior}")]
    Infeasible {
        index: usize,
        posterior: f64,
        prior: f64,
    },
    #[error("posterior undefined: conditioning event has probability zero")]
    UndefinedPosterior,
    #[error("index out of range: {0}")]
    Index(String),
    #[error("no image source: supply IDX digits or enable the surrogate renderer")]
    MissingImages,
    #[error("images must be square with side a multiple of 14, got {0:?}")]
    ImageShape(Vec<usize>),
    #[error("{images} images but {labels} digit labels")]
    LabelCount { images: usize, labels: usize },
    #[error("n must be at least 1")]
    EmptySample,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiscreteWorld {
    pub p0: f64,
    pub p1: f64,
    pub s_card: usize,
    /// `p_s_given_y[s][y] = P(S=s | Y=y)`
    pub p_s_given_y: Vec<[f64; 2]>,
    /// `P(Y=0)`
    pub label_prior: f64,
    /// `b_given_y[i][b][y] = P(B_i=b | Y=y)`
    pub b_given_y: [[[f64; 2]; 2]; 2],
    /// `joint[b0][b1][s][y]`
    pub joint: Vec<[[[f64; 2]; 2]; 2]>,
}

fn open_unit(name: &'static str, value: f64) -> Result<(), SynthError> {
    if value > 0.0 && value < 1.0 {
        Ok(())
    } else {
        Err(SynthError::Domain {
            name,
            value,
            range: "(0, 1)",
        })
    }
}

/// Solves for `P(B=b | Y=y)` such that `P(Y=j | B=j) = p` for both `j`.
fn spurious_conditional(index: usize, p: f64, pi0: f64) -> Result<[[f64; 2]; 2], SynthError> {
    let pi1 = 1.0 - pi0;
    // a = P(B=0|Y=0) pi0, c = P(B=1|Y=1) pi1; a + c = p, (a - c)(1 - 2p) = p (pi1 - pi0).
    let diff = if (1.0 - 2.0 * p).abs() < 1e-15 {
        if (pi0 - pi1).abs() > 1e-15 {
            return Err(SynthError::Infeasible {
                index,
                posterior: p,
                prior: pi0,
            });
        }
        0.0
    } else {
        p * (pi1 - pi0) / (1.0 - 2.0 * p)
    };
    let a = (p + diff) / 2.0;
    let c = (p - diff) / 2.0;
    let q0 = a / pi0;
    let q1 = c / pi1;
    let ok = |q: f64| (0.0..=1.0).contains(&q) && q.is_finite();
    if !ok(q0) || !ok(q1) {
        return Err(SynthError::Infeasible {
            index,
            posterior: p,
            prior: pi0,
        });
    }
    Ok([[q0, 1.0 - q1], [1.0 - q0, q1]])
}

pub fn build_discrete_world(
    p0: f64,
    p1: f64,
    p_s: f64,
    label_prior: f64,
) -> Result<DiscreteWorld, SynthError> {
    open_unit("p0", p0)?;
    open_unit("p1", p1)?;
    open_unit("p_s", p_s)?;
    open_unit("label_prior", label_prior)?;
    let b_given_y = [
        spurious_conditional(0, p0, label_prior)?,
        spurious_conditional(1, p1, label_prior)?,
    ];
    let p_s_given_y = vec![[p_s, 1.0 - p_s], [1.0 - p_s, p_s]];
    let prior = [label_prior, 1.0 - label_prior];
    let mut joint = vec![[[[0.0; 2]; 2]; 2]; 2];
    for (b0, plane) in joint.iter_mut().enumerate() {
        for b1 in 0..2 {
            for s in 0..2 {
                for y in 0..2 {
                    plane[b1][s][y] =
                        prior[y] * b_given_y[0][b0][y] * b_given_y[1][b1][y] * p_s_given_y[s][y];
                }
            }
        }
    }
    Ok(DiscreteWorld {
        p0,
        p1,
        s_card: 2,
        p_s_given_y,
        label_prior,
        b_given_y,
        joint,
    })
}

/// One cell of the joint table.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Cell {
    pub b0: usize,
    pub b1: usize,
    pub s: usize,
}

impl DiscreteWorld {
    pub fn mass(&self, c: Cell, y: usize) -> f64 {
        self.joint[c.b0][c.b1][c.s][y]
    }

    pub fn cells(&self) -> Vec<Cell> {
        let mut out = Vec::with_capacity(4 * self.s_card);
        for b0 in 0..2 {
            for b1 in 0..2 {
                for s in 0..self.s_card {
                    out.push(Cell { b0, b1, s });
                }
            }
        }
        out
    }

    pub fn total_mass(&self) -> f64 {
        self.cells()
            .iter()
            .map(|&c| self.mass(c, 0) + self.mass(c, 1))
            .sum()
    }

    /// `P(Y | event)` for the event `{(b0, b1, s) : keep(cell)}`.
    pub fn conditional_label(&self, keep: impl Fn(Cell) -> bool) -> Result<[f64; 2], SynthError> {
        let mut m = [0.0; 2];
        for c in self.cells().into_iter().filter(|&c| keep(c)) {
            m[0] += self.mass(c, 0);
            m[1] += self.mass(c, 1);
        }
        let z = m[0] + m[1];
        if z <= 0.0 {
            return Err(SynthError::UndefinedPosterior);
        }
        Ok([m[0] / z, m[1] / z])
    }

    /// Exact `P(Y | B0=b0, B1=b1, S=s)`; `s = None` marginalises `S`.
    pub fn bayes_posterior(
        &self,
        b0: usize,
        b1: usize,
        s: Option<usize>,
    ) -> Result<[f64; 2], SynthError> {
        if b0 > 1 || b1 > 1 || s.is_some_and(|s| s >= self.s_card) {
            return Err(SynthError::Index(format!("b0={b0} b1={b1} s={s:?}")));
        }
        self.conditional_label(|c| c.b0 == b0 && c.b1 == b1 && s.is_none_or(|s| c.s == s))
    }

    /// Exact `P(Y | S=s)`, the spurious-free optimum.
    pub fn invariant_posterior(&self, s: usize) -> Result<[f64; 2], SynthError> {
        if s >= self.s_card {
            return Err(SynthError::Index(format!("s={s}")));
        }
        self.conditional_label(|c| c.s == s)
    }

    /// Accuracy of the Bayes classifier that sees only `S`.
    pub fn invariant_bayes_accuracy(&self) -> f64 {
        (0..self.s_card)
            .map(|s| {
                let m: [f64; 2] = [0, 1].map(|y| {
                    self.cells()
                        .iter()
                        .filter(|c| c.s == s)
                        .map(|&c| self.mass(c, y))
                        .sum()
                });
                m[0].max(m[1])
            })
            .sum()
    }

    /// Accuracy of the Bayes classifier that sees `(B0, B1, S)`.
    pub fn full_bayes_accuracy(&self) -> f64 {
        self.cells()
            .iter()
            .map(|&c| self.mass(c, 0).max(self.mass(c, 1)))
            .sum()
    }

    /// Joint-cell one-hot index of `(b0, b1, s)`.
    pub fn cell_index(&self, c: Cell) -> usize {
        (c.b0 * 2 + c.b1) * self.s_card + c.s
    }

    pub fn encode(&self, c: Cell, encoding: Encoding) -> Vec<f64> {
        match encoding {
            Encoding::OneHot => {
                let mut v = vec![0.0; 4 * self.s_card];
                v[self.cell_index(c)] = 1.0;
                v
            }
            Encoding::Real => vec![c.b0 as f64, c.b1 as f64, c.s as f64],
        }
    }

    pub fn feature_dim(&self, encoding: Encoding) -> usize {
        match encoding {
            Encoding::OneHot => 4 * self.s_card,
            Encoding::Real => 3,
        }
    }

    /// Every `(cell, y)` with positive mass as one row, weighted by its
    /// probability.
    pub fn population(&self, encoding: Encoding) -> LabeledDataset {
        let mut feats = Vec::new();
        let mut labels = Vec::new();
        let mut weights = Vec::new();
        let mut spurious = Vec::new();
        for c in self.cells() {
            for y in 0..2 {
                let m = self.mass(c, y);
                if m > 0.0 {
                    feats.extend(self.encode(c, encoding));
                    labels.push(y as u8);
                    weights.push(m);
                    spurious.push([c.b0 as u8, c.b1 as u8]);
                }
            }
        }
        let n = labels.len();
        let features = Array2::from_shape_vec((n, self.feature_dim(encoding)), feats)
            .expect("row length matches feature_dim");
        let clean_label = labels.clone();
        LabeledDataset::with_parts(
            features,
            labels,
            weights,
            Some(Annotations {
                spurious,
                clean_label,
            }),
        )
        .expect("population rows are valid")
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Encoding {
    /// One indicator per joint cell `(b0, b1, s)`.
    #[default]
    OneHot,
    /// `[b0, b1, s]` as reals.
    Real,
}

/// I.i.d. draws from the joint table. Annotations carry `(b0, b1)`; the
/// clean label is the drawn label.
pub fn sample_dataset(
    world: &DiscreteWorld,
    n: usize,
    seed: u64,
    encoding: Encoding,
) -> Result<LabeledDataset, SynthError> {
    if n == 0 {
        return Err(SynthError::EmptySample);
    }
    let mut outcomes = Vec::new();
    let mut cdf = Vec::new();
    let mut acc = 0.0;
    for c in world.cells() {
        for y in 0..2 {
            acc += world.mass(c, y);
            outcomes.push((c, y));
            cdf.push(acc);
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let d = world.feature_dim(encoding);
    let mut feats = Vec::with_capacity(n * d);
    let mut labels = Vec::with_capacity(n);
    let mut spurious = Vec::with_capacity(n);
    for _ in 0..n {
        let u: f64 = rng.random::<f64>() * acc;
        let k = cdf.partition_point(|&v| v <= u).min(outcomes.len() - 1);
        let (c, y) = outcomes[k];
        feats.extend(world.encode(c, encoding));
        labels.push(y as u8);
        spurious.push([c.b0 as u8, c.b1 as u8]);
    }
    let features = Array2::from_shape_vec((n, d), feats).expect("row length matches");
    let clean_label = labels.clone();
    Ok(LabeledDataset::with_parts(
        features,
        labels,
        vec![1.0; n],
        Some(Annotations {
            spurious,
            clean_label,
        }),
    )
    .expect("sampled rows are valid"))
}

pub const PC_SIDE: usize = 14;
pub const PC_DIM: usize = 2 * PC_SIDE * PC_SIDE;
const PATCH: usize = 3;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PcMnistParams {
    pub p_noise: f64,
    pub p_color: f64,
    pub p_patch: f64,
}

impl PcMnistParams {
    pub const TRAIN: PcMnistParams = PcMnistParams {
        p_noise: 0.25,
        p_color: 0.1,
        p_patch: 0.3,
    };
    pub const TEST: PcMnistParams = PcMnistParams {
        p_noise: 0.25,
        p_color: 0.5,
        p_patch: 0.5,
    };
}

/// Renderer for digit-free images: a Gaussian blob whose horizontal position
/// depends on the clean label, over uniform background noise.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SurrogateParams {
    /// Blob amplitude.
    pub amplitude: f64,
    /// Background noise is `U(0, background)`.
    pub background: f64,
    /// Standard deviation of the blob-centre jitter, in pixels.
    pub jitter: f64,
    /// Blob radius, in pixels.
    pub sigma: f64,
    /// Horizontal blob centre for clean labels 0 and 1.
    pub centers: [f64; 2],
}

impl Default for SurrogateParams {
    fn default() -> Self {
        Self {
            amplitude: 0.2,
            background: 0.5,
            jitter: 1.5,
            sigma: 2.0,
            centers: [4.5, 8.5],
        }
    }
}

/// Where PC-MNIST grayscale images come from.
#[derive(Debug, Clone, Copy)]
pub enum ImageSource<'a> {
    /// IDX image tensor `[N, side, side]` with digits `0..=9`; the first `n`
    /// are used (all when `n` is 0).
    Idx {
        images: &'a IdxTensor,
        digits: &'a [u8],
        n: usize,
    },
    /// `n` rendered images with uniformly drawn clean labels.
    Surrogate { n: usize, params: SurrogateParams },
    /// No source configured.
    Missing,
}

fn flip<R: Rng>(bit: u8, p: f64, rng: &mut R) -> u8 {
    if rng.random::<f64>() < p {
        1 - bit
    } else {
        bit
    }
}

/// Average-pools a `side x side` byte image to `14 x 14`, scaled to `[0, 1]`.
fn downsample(pixels: &[u8], side: usize) -> Vec<f64> {
    let f = side / PC_SIDE;
    let norm = 255.0 * (f * f) as f64;
    let mut out = vec![0.0; PC_SIDE * PC_SIDE];
    for r in 0..PC_SIDE {
        for c in 0..PC_SIDE {
            let mut s = 0u32;
            for dr in 0..f {
                for dc in 0..f {
                    s += pixels[(r * f + dr) * side + c * f + dc] as u32;
                }
            }
            out[r * PC_SIDE + c] = s as f64 / norm;
        }
    }
    out
}

fn render_surrogate<R: Rng>(clean: u8, p: &SurrogateParams, rng: &mut R) -> Vec<f64> {
    let jitter = Normal::new(0.0, p.jitter.max(0.0)).expect("finite jitter");
    let cx = p.centers[clean as usize] + jitter.sample(rng);
    let cy = (PC_SIDE as f64 - 1.0) / 2.0 + jitter.sample(rng);
    let two_s2 = 2.0 * p.sigma * p.sigma;
    let mut out = Vec::with_capacity(PC_SIDE * PC_SIDE);
    for r in 0..PC_SIDE {
        for c in 0..PC_SIDE {
            let d2 = (r as f64 - cy).powi(2) + (c as f64 - cx).powi(2);
            let v = rng.random::<f64>() * p.background + p.amplitude * (-d2 / two_s2).exp();
            out.push(v.clamp(0.0, 1.0));
        }
    }
    out
}

/// Writes a grayscale image into channel `color`, zeroes the other channel
/// and blanks the 3x3 corner patch (top-left when `patch = 1`, bottom-right
/// otherwise) in both channels.
fn compose(gray: &[f64], color: u8, patch: u8, out: &mut [f64]) {
    let plane = PC_SIDE * PC_SIDE;
    out.fill(0.0);
    out[color as usize * plane..(color as usize + 1) * plane].copy_from_slice(gray);
    let start = if patch == 1 { 0 } else { PC_SIDE - PATCH };
    for ch in 0..2 {
        for r in start..start + PATCH {
            for c in start..start + PATCH {
                out[ch * plane + r * PC_SIDE + c] = 0.0;
            }
        }
    }
}

/// Builds a PC-MNIST dataset with `d = 392` features
/// (`channel x row x column`, row-major).
pub fn build_pcmnist(
    source: ImageSource<'_>,
    params: PcMnistParams,
    seed: u64,
) -> Result<LabeledDataset, SynthError> {
    for (name, v) in [
        ("p_noise", params.p_noise),
        ("p_color", params.p_color),
        ("p_patch", params.p_patch),
    ] {
        if !(0.0..=0.5).contains(&v) {
            return Err(SynthError::Domain {
                name,
                value: v,
                range: "[0, 0.5]",
            });
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = match source {
        ImageSource::Missing => return Err(SynthError::MissingImages),
        ImageSource::Surrogate { n, .. } => n,
        ImageSource::Idx { images, digits, n } => {
            let dims = &images.dims;
            if dims.len() != 3 || dims[1] != dims[2] || dims[1] == 0 || dims[1] % PC_SIDE != 0 {
                return Err(SynthError::ImageShape(dims.clone()));
            }
            if digits.len() != dims[0] {
                return Err(SynthError::LabelCount {
                    images: dims[0],
                    labels: digits.len(),
                });
            }
            if n == 0 {
                dims[0]
            } else {
                n.min(dims[0])
            }
        }
    };
    if n == 0 {
        return Err(SynthError::EmptySample);
    }
    let mut features = Array2::zeros((n, PC_DIM));
    let mut labels = Vec::with_capacity(n);
    let mut spurious = Vec::with_capacity(n);
    let mut clean_labels = Vec::with_capacity(n);
    for (i, mut row) in features.rows_mut().into_iter().enumerate() {
        let clean = match source {
            ImageSource::Idx { digits, .. } => u8::from(digits[i] >= 5),
            _ => rng.random_range(0..2u8),
        };
        let y = flip(clean, params.p_noise, &mut rng);
        let color = flip(y, params.p_color, &mut rng);
        let patch = flip(y, params.p_patch, &mut rng);
        let gray = match source {
            ImageSource::Idx { images, .. } => downsample(images.item(i), images.dims[1]),
            ImageSource::Surrogate { params: sp, .. } => render_surrogate(clean, &sp, &mut rng),
            ImageSource::Missing => unreachable!(),
        };
        compose(
            &gray,
            color,
            patch,
            row.as_slice_mut().expect("standard layout"),
        );
        labels.push(y);
        spurious.push([color, patch]);
        clean_labels.push(clean);
    }
    Ok(LabeledDataset::with_parts(
        features,
        labels,
        vec![1.0; n],
        Some(Annotations {
            spurious,
            clean_label: clean_labels,
        }),
    )
    .expect("rendered rows are valid"))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn symmetric_world_is_uninformative() {
        let w = build_discrete_world(0.5, 0.5, 0.75, 0.5).unwrap();
        for b0 in 0..2 {
            for b1 in 0..2 {
                let p = w.bayes_posterior(b0, b1, None).unwrap();
                assert_relative_eq!(p[0], 0.5, epsilon = 1e-15);
            }
        }
    }

    #[test]
    fn posterior_with_disagreeing_spurious_bits() {
        let w = build_discrete_world(0.9, 0.8, 0.75, 0.5).unwrap();
        let p = w.bayes_posterior(0, 1, None).unwrap();
        let expected = 0.9 * 0.2 / (0.9 * 0.2 + 0.1 * 0.8);
        assert_relative_eq!(p[0], expected, epsilon = 1e-12);
        assert!((p[0] - 0.6923).abs() < 1e-4);
    }

    #[test]
    fn joint_sums_to_one_and_factorises() {
        for &(p0, p1, ps, pr) in &[
            (0.9, 0.8, 0.75, 0.5),
            (0.7, 0.95, 0.6, 0.35),
            (0.7, 0.65, 0.9, 0.55),
        ] {
            let w = build_discrete_world(p0, p1, ps, pr).unwrap();
            assert!((w.total_mass() - 1.0).abs() < 1e-12);
            let prior = [pr, 1.0 - pr];
            for c in w.cells() {
                for y in 0..2 {
                    let m = w.mass(c, y);
                    assert!(m >= 0.0);
                    let f =
                        w.b_given_y[0][c.b0][y] * w.b_given_y[1][c.b1][y] * w.p_s_given_y[c.s][y];
                    assert!((m / prior[y] - f).abs() < 1e-12);
                }
            }
            for j in 0..2 {
                let q0 = w.conditional_label(|c| c.b0 == j).unwrap();
                let q1 = w.conditional_label(|c| c.b1 == j).unwrap();
                assert!((q0[j] - p0).abs() < 1e-12);
                assert!((q1[j] - p1).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn domain_and_feasibility_errors() {
        assert!(matches!(
            build_discrete_world(1.0, 0.8, 0.75, 0.5),
            Err(SynthError::Domain { name: "p0", .. })
        ));
        assert!(matches!(
            build_discrete_world(0.9, 0.8, 0.0, 0.5),
            Err(SynthError::Domain { name: "p_s", .. })
        ));
        assert!(matches!(
            build_discrete_world(0.5, 0.8, 0.75, 0.3),
            Err(SynthError::Infeasible { index: 0, .. })
        ));
    }

    #[test]
    fn posterior_marginalises_over_s() {
        let w = build_discrete_world(0.85, 0.7, 0.8, 0.45).unwrap();
        for b0 in 0..2 {
            for b1 in 0..2 {
                let full = w.bayes_posterior(b0, b1, None).unwrap();
                let mut m = [0.0; 2];
                for s in 0..2 {
                    let c = Cell { b0, b1, s };
                    let pc = w.mass(c, 0) + w.mass(c, 1);
                    let post = w.bayes_posterior(b0, b1, Some(s)).unwrap();
                    m[0] += pc * post[0];
                    m[1] += pc * post[1];
                }
                let z = m[0] + m[1];
                assert!((m[0] / z - full[0]).abs() < 1e-12);
                assert!((full[0] + full[1] - 1.0).abs() < 1e-12);
            }
        }
        assert!(w.bayes_posterior(2, 0, None).is_err());
    }

    #[test]
    fn invariant_accuracy_equals_one_minus_noise() {
        let w = build_discrete_world(0.9, 0.8, 0.75, 0.5).unwrap();
        assert_relative_eq!(w.invariant_bayes_accuracy(), 0.75, epsilon = 1e-12);
        assert!(w.full_bayes_accuracy() > 0.75);
    }

    #[test]
    fn sampling_is_deterministic_and_handles_one_row() {
        let w = build_discrete_world(0.9, 0.8, 0.75, 0.5).unwrap();
        let a = sample_dataset(&w, 50, 3, Encoding::OneHot).unwrap();
        let b = sample_dataset(&w, 50, 3, Encoding::OneHot).unwrap();
        assert_eq!(a, b);
        let one = sample_dataset(&w, 1, 0, Encoding::Real).unwrap();
        assert_eq!(one.len(), 1);
        assert_eq!(one.annotations.unwrap().spurious.len(), 1);
        assert!(sample_dataset(&w, 0, 0, Encoding::Real).is_err());
    }

    #[test]
    fn population_rows_carry_the_joint_mass() {
        let w = build_discrete_world(0.9, 0.8, 0.75, 0.5).unwrap();
        let pop = w.population(Encoding::OneHot);
        assert_eq!(pop.len(), 16);
        assert!((pop.weights.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        for i in 0..pop.len() {
            assert_eq!(pop.row(i).sum(), 1.0);
        }
    }

    #[test]
    fn pcmnist_without_flips_copies_the_label() {
        let p = PcMnistParams {
            p_noise: 0.0,
            p_color: 0.0,
            p_patch: 0.0,
        };
        let ds = build_pcmnist(
            ImageSource::Surrogate {
                n: 200,
                params: SurrogateParams::default(),
            },
            p,
            1,
        )
        .unwrap();
        let ann = ds.annotations.as_ref().unwrap();
        for i in 0..ds.len() {
            assert_eq!(ann.spurious[i][0], ds.labels[i]);
            assert_eq!(ann.spurious[i][1], ds.labels[i]);
            assert_eq!(ann.clean_label[i], ds.labels[i]);
            let plane = PC_SIDE * PC_SIDE;
            let off = 1 - ds.labels[i] as usize;
            assert!(ds
                .row(i)
                .iter()
                .skip(off * plane)
                .take(plane)
                .all(|&v| v == 0.0));
        }
        assert_eq!(ds.dim(), PC_DIM);
    }

    #[test]
    fn patch_position_follows_patch_bit() {
        let gray = vec![1.0; PC_SIDE * PC_SIDE];
        let mut out = vec![0.0; PC_DIM];
        compose(&gray, 0, 1, &mut out);
        assert_eq!(out[0], 0.0);
        assert_eq!(out[PC_SIDE * PC_SIDE - 1], 1.0);
        compose(&gray, 0, 0, &mut out);
        assert_eq!(out[0], 1.0);
        assert_eq!(out[PC_SIDE * PC_SIDE - 1], 0.0);
        assert_eq!(out[PC_SIDE * 3 + 3], 1.0);
    }

    #[test]
    fn idx_images_are_pooled_and_binarised() {
        let mut data = vec![0u8; 2 * 28 * 28];
        data[..28 * 28].fill(255);
        let images = IdxTensor::new(vec![2, 28, 28], data).unwrap();
        let p = PcMnistParams {
            p_noise: 0.0,
            p_color: 0.0,
            p_patch: 0.0,
        };
        let ds = build_pcmnist(
            ImageSource::Idx {
                images: &images,
                digits: &[3, 7],
                n: 0,
            },
            p,
            0,
        )
        .unwrap();
        assert_eq!(ds.labels, vec![0, 1]);
        assert_eq!(ds.features[[0, 7 * PC_SIDE + 7]], 1.0);
        assert!(matches!(
            build_pcmnist(ImageSource::Missing, p, 0),
            Err(SynthError::MissingImages)
        ));
        let bad = IdxTensor::new(vec![1, 5, 5], vec![0; 25]).unwrap();
        assert!(matches!(
            build_pcmnist(
                ImageSource::Idx {
                    images: &bad,
                    digits: &[1],
                    n: 0
                },
                p,
                0
            ),
            Err(SynthError::ImageShape(_))
        ));
    }
}
