//! Experiment configuration, read from TOML.

use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use scill_core::select::SelectionStrategy;
use scill_core::synth::{PcMnistParams, SurrogateParams};
use scill_core::train::{Optimizer, PenaltyKind};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::HarnessError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Method {
    #[serde(rename = "ERM")]
    Erm,
    #[serde(rename = "EIIL")]
    Eiil,
    #[serde(rename = "SCILL")]
    Scill,
    #[serde(rename = "SCILL-uw")]
    ScillUw,
    #[serde(rename = "EIIL-lb")]
    EiilLb,
}

impl Method {
    pub const ALL: [Method; 5] = [
        Self::Erm,
        Self::Eiil,
        Self::Scill,
        Self::ScillUw,
        Self::EiilLb,
    ];

    pub fn name(&self) -> &'static str {
        match self {
            Self::Erm => "ERM",
            Self::Eiil => "EIIL",
            Self::Scill => "SCILL",
            Self::ScillUw => "SCILL-uw",
            Self::EiilLb => "EIIL-lb",
        }
    }

    /// Whether training uses the group label weights.
    pub fn reweights(&self) -> bool {
        matches!(self, Self::Scill | Self::EiilLb)
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Method {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Self::ALL
            .into_iter()
            .find(|m| m.name().eq_ignore_ascii_case(s))
            .ok_or_else(|| format!("unknown method {s:?}"))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "source", rename_all = "snake_case")]
pub enum ImageConfig {
    /// Rendered digit-free images.
    Surrogate {
        #[serde(default)]
        params: SurrogateParams,
    },
    /// MNIST IDX files. Training, validation and oracle sets are taken in
    /// order from the training pool, the test set from the test pool.
    Idx {
        train_images: PathBuf,
        train_labels: PathBuf,
        test_images: PathBuf,
        test_labels: PathBuf,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DataConfig {
    pub images: ImageConfig,
    pub n_train: usize,
    /// In-distribution validation set size.
    pub n_val: usize,
    /// Test-distribution validation set size.
    pub n_oracle: usize,
    pub n_test: usize,
    pub train: PcMnistParams,
    pub test: PcMnistParams,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReferenceConfig {
    pub epochs: usize,
    pub lr: f64,
    pub hidden: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupConfig {
    /// Split threshold on the t statistic.
    pub thr: f64,
    /// Split on the p-value instead when set.
    pub p_thr: Option<f64>,
    /// Label-balance tolerance of the criteria report.
    pub balance_tol: f64,
    pub eiil_steps: usize,
    pub eiil_lr: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainGrid {
    pub lr: f64,
    pub epochs: usize,
    pub hidden: usize,
    pub lambdas: Vec<f64>,
    pub anneals: Vec<usize>,
    pub ramp_rate: f64,
    pub rescale_penalty: bool,
    pub checkpoint_every: Option<usize>,
    pub batch_size: Option<usize>,
    #[serde(default)]
    pub optimizer: Optimizer,
    #[serde(default)]
    pub l2: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub name: String,
    pub seeds: Vec<u64>,
    pub methods: Vec<Method>,
    pub penalties: Vec<PenaltyKind>,
    pub strategies: Vec<SelectionStrategy>,
    pub data: DataConfig,
    pub reference: ReferenceConfig,
    pub groups: GroupConfig,
    pub train: TrainGrid,
}

impl ExperimentConfig {
    /// 10,000 training samples, three seeds, IRM, a two-point grid.
    pub fn quick() -> Self {
        Self {
            name: "quick".into(),
            seeds: vec![0, 1, 2],
            methods: vec![Method::Erm, Method::Eiil, Method::Scill, Method::ScillUw],
            penalties: vec![PenaltyKind::Irm],
            strategies: SelectionStrategy::ALL.to_vec(),
            data: DataConfig {
                images: ImageConfig::Surrogate {
                    params: SurrogateParams::default(),
                },
                n_train: 10_000,
                n_val: 2_000,
                n_oracle: 2_000,
                n_test: 2_000,
                train: PcMnistParams::TRAIN,
                test: PcMnistParams::TEST,
            },
            reference: ReferenceConfig {
                epochs: 100,
                lr: 0.2,
                hidden: 64,
            },
            groups: GroupConfig {
                thr: 10.0,
                p_thr: None,
                balance_tol: 0.1,
                eiil_steps: 2000,
                eiil_lr: 0.01,
            },
            train: TrainGrid {
                lr: 0.1,
                epochs: 800,
                hidden: 64,
                lambdas: vec![10.0, 100.0],
                anneals: vec![300],
                ramp_rate: 0.0,
                rescale_penalty: true,
                checkpoint_every: None,
                batch_size: None,
                optimizer: Optimizer::Sgd,
                l2: 0.0,
            },
        }
    }

    /// 50,000 training samples, every method, the full search grid.
    pub fn full() -> Self {
        let mut c = Self::quick();
        c.name = "full".into();
        c.seeds = vec![0, 1, 2];
        c.methods = Method::ALL.to_vec();
        c.data.n_train = 50_000;
        c.data.n_val = 10_000;
        c.data.n_oracle = 10_000;
        c.data.n_test = 10_000;
        c.train.lambdas = vec![0.1, 1.0, 10.0, 100.0, 0.0];
        c.train.anneals = vec![100, 300, 500, 700];
        c
    }

    pub fn profile(name: &str) -> Result<Self, HarnessError> {
        match name {
            "quick" => Ok(Self::quick()),
            "full" => Ok(Self::full()),
            other => Err(HarnessError::Config(format!("unknown profile {other:?}"))),
        }
    }

    pub fn from_toml(s: &str) -> Result<Self, HarnessError> {
        let c: Self = toml::from_str(s).map_err(|e| HarnessError::Config(e.to_string()))?;
        c.validate()?;
        Ok(c)
    }

    pub fn load(path: &Path) -> Result<Self, HarnessError> {
        let text = std::fs::read_to_string(path).map_err(|e| HarnessError::io(path, e))?;
        Self::from_toml(&text)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<(), HarnessError> {
        let bad = |m: String| Err(HarnessError::Config(m));
        if self.seeds.is_empty() {
            return bad("at least one seed is required".into());
        }
        if self.methods.is_empty() || self.penalties.is_empty() || self.strategies.is_empty() {
            return bad("methods, penalties and strategies must be non-empty".into());
        }
        let d = &self.data;
        if d.n_train < 2 || d.n_val == 0 || d.n_oracle == 0 || d.n_test == 0 {
            return bad("dataset sizes must be positive (n_train at least 2)".into());
        }
        for p in [d.train, d.test] {
            for v in [p.p_noise, p.p_color, p.p_patch] {
                if !(0.0..=0.5).contains(&v) {
                    return bad(format!("flip probability {v} outside [0, 0.5]"));
                }
            }
        }
        if self.reference.hidden == 0 || self.train.hidden == 0 {
            return bad("hidden width must be positive".into());
        }
        if !(self.reference.lr > 0.0) || !(self.train.lr > 0.0) {
            return bad("learning rates must be positive".into());
        }
        if !(self.groups.thr >= 0.0) {
            return bad("thr must be non-negative".into());
        }
        if let Some(p) = self.groups.p_thr {
            if !(0.0..=1.0).contains(&p) {
                return bad(format!("p_thr {p} outside [0, 1]"));
            }
        }
        let t = &self.train;
        if t.lambdas.is_empty() || t.anneals.is_empty() {
            return bad("lambda and anneal grids must be non-empty".into());
        }
        if t.lambdas.iter().any(|&l| !(l >= 0.0 && l.is_finite())) {
            return bad("lambdas must be finite and non-negative".into());
        }
        if let Some(&a) = t.anneals.iter().find(|&&a| a > t.epochs) {
            return bad(format!("anneal {a} exceeds epochs {}", t.epochs));
        }
        if !(0.0..=1.0).contains(&t.ramp_rate) {
            return bad("ramp_rate must lie in [0, 1]".into());
        }
        Ok(())
    }

    /// SHA-256 of the canonical TOML form, hex encoded.
    pub fn hash(&self) -> String {
        hex::encode(Sha256::digest(self.to_toml().as_bytes()))
    }
}
