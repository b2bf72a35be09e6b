//! Experiment runner for label-balanced group invariant learning on
//! PC-MNIST and on discrete worlds.

use std::path::Path;

use thiserror::Error;

pub mod checks;
pub mod config;
pub mod pipeline;
pub mod report;
pub mod theory;

pub use config::{ExperimentConfig, Method};
pub use pipeline::run_experiment;
pub use report::ExperimentReport;

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("config: {0}")]
    Config(String),
    #[error("{path}: {message}")]
    Io { path: String, message: String },
    #[error("stage {stage} failed (config {hash}): {message}")]
    Stage {
        stage: &'static str,
        hash: String,
        message: String,
    },
}

impl HarnessError {
    pub fn io(path: &Path, e: impl std::fmt::Display) -> Self {
        Self::Io {
            path: path.display().to_string(),
            message: e.to_string(),
        }
    }
}

/// Seed for an independent stream `stream` derived from `seed`
/// (SplitMix64 finaliser).
pub fn derive_seed(seed: u64, stream: u64) -> u64 {
    let mut z = seed
        .wrapping_add(stream.wrapping_mul(0x9e37_79b9_7f4a_7c15))
        .wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}
