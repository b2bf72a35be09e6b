//! Checkpoint selection by in-distribution validation (ID), validation on
//! the test distribution (Oracle), or training-environments validation (TEV).

use ndarray::Array2;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dataset::LabeledDataset;
use crate::groups::ReferenceOutputs;
use crate::model::{predict_labels, ModelError};
use crate::train::Snapshot;

#[derive(Debug, Error)]
pub enum SelectError {
    #[error("empty trajectory")]
    EmptyTrajectory,
    #[error("strategy {0:?} needs a validation set that was not supplied")]
    MissingSet(SelectionStrategy),
    #[error("centers have {centers} rows but the weight table has {weights}")]
    Shape { centers: usize, weights: usize },
    #[error(transparent)]
    Model(#[from] ModelError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum SelectionStrategy {
    #[serde(rename = "ID")]
    Id,
    #[serde(rename = "Oracle")]
    Oracle,
    #[serde(rename = "TEV")]
    Tev,
}

impl SelectionStrategy {
    pub const ALL: [SelectionStrategy; 3] = [Self::Id, Self::Oracle, Self::Tev];

    pub fn name(&self) -> &'static str {
        match self {
            Self::Id => "ID",
            Self::Oracle => "Oracle",
            Self::Tev => "TEV",
        }
    }
}

/// Validation samples allocated to training groups.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TevAllocation {
    pub group_of: Vec<usize>,
    pub weights: Vec<f64>,
    /// Samples whose label is absent from the matched group (weight 1).
    pub fallback: Vec<usize>,
}

/// Assigns each validation row to the nearest center (L2 over reference
/// probability rows, lowest index on ties) and gives it the training weight
/// `omega^g(y)` of its label in that group.
pub fn tev_allocate(
    val_ref: &ReferenceOutputs,
    labels: &[u8],
    centers: &Array2<f64>,
    omega: &[[Option<f64>; 2]],
) -> Result<TevAllocation, SelectError> {
    if centers.nrows() != omega.len() {
        return Err(SelectError::Shape {
            centers: centers.nrows(),
            weights: omega.len(),
        });
    }
    let mut group_of = Vec::with_capacity(labels.len());
    let mut weights = Vec::with_capacity(labels.len());
    let mut fallback = Vec::new();
    for (i, &y) in labels.iter().enumerate() {
        let row = val_ref.probs.row(i);
        let mut best = 0;
        let mut best_d = f64::INFINITY;
        for (g, c) in centers.rows().into_iter().enumerate() {
            let d: f64 = row
                .iter()
                .zip(c.iter())
                .map(|(a, b)| (a - b) * (a - b))
                .sum();
            if d < best_d {
                best_d = d;
                best = g;
            }
        }
        group_of.push(best);
        match omega[best][y as usize] {
            Some(w) => weights.push(w),
            None => {
                weights.push(1.0);
                fallback.push(i);
            }
        }
    }
    Ok(TevAllocation {
        group_of,
        weights,
        fallback,
    })
}

/// `sum_i w_i [pred_i = y_i] / sum_i w_i`.
pub fn weighted_accuracy(preds: &[u8], labels: &[u8], weights: &[f64]) -> f64 {
    let total: f64 = weights.iter().sum();
    let hit: f64 = preds
        .iter()
        .zip(labels)
        .zip(weights)
        .filter(|((p, y), _)| p == y)
        .map(|(_, w)| w)
        .sum();
    hit / total
}

/// Validation sets available for selection.
#[derive(Debug, Clone, Copy, Default)]
pub struct SelectionSets<'a> {
    pub id_val: Option<&'a LabeledDataset>,
    pub oracle_val: Option<&'a LabeledDataset>,
    /// TEV set with its allocated weights.
    pub tev: Option<(&'a LabeledDataset, &'a [f64])>,
    /// Reported alongside the choice, never used to choose.
    pub test: Option<&'a LabeledDataset>,
}

/// Metrics of every checkpoint on every supplied set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryScores {
    pub epochs: Vec<usize>,
    pub id: Option<Vec<f64>>,
    pub oracle: Option<Vec<f64>>,
    pub tev: Option<Vec<f64>>,
    pub test: Option<Vec<f64>>,
}

pub fn score_trajectory(
    trajectory: &[Snapshot],
    sets: &SelectionSets<'_>,
) -> Result<TrajectoryScores, SelectError> {
    let plain = |ds: Option<&LabeledDataset>| -> Result<Option<Vec<f64>>, SelectError> {
        ds.map(|ds| {
            trajectory
                .iter()
                .map(|s| {
                    let preds = predict_labels(&s.params, ds.features.view())?;
                    Ok(weighted_accuracy(&preds, &ds.labels, &vec![1.0; ds.len()]))
                })
                .collect()
        })
        .transpose()
    };
    let tev = sets
        .tev
        .map(|(ds, w)| {
            trajectory
                .iter()
                .map(|s| {
                    let preds = predict_labels(&s.params, ds.features.view())?;
                    Ok(weighted_accuracy(&preds, &ds.labels, w))
                })
                .collect::<Result<Vec<f64>, SelectError>>()
        })
        .transpose()?;
    Ok(TrajectoryScores {
        epochs: trajectory.iter().map(|s| s.epoch).collect(),
        id: plain(sets.id_val)?,
        oracle: plain(sets.oracle_val)?,
        tev,
        test: plain(sets.test)?,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Selection {
    pub strategy: SelectionStrategy,
    /// Position in the trajectory.
    pub index: usize,
    pub epoch: usize,
    pub val_metric: f64,
    pub test_metric: Option<f64>,
}

/// Highest validation metric for `strategy`, earliest checkpoint on ties.
pub fn select_from_scores(
    scores: &TrajectoryScores,
    strategy: SelectionStrategy,
) -> Result<Selection, SelectError> {
    let metric = match strategy {
        SelectionStrategy::Id => scores.id.as_ref(),
        SelectionStrategy::Oracle => scores.oracle.as_ref(),
        SelectionStrategy::Tev => scores.tev.as_ref(),
    }
    .ok_or(SelectError::MissingSet(strategy))?;
    if metric.is_empty() {
        return Err(SelectError::EmptyTrajectory);
    }
    let mut index = 0;
    for (k, &v) in metric.iter().enumerate() {
        if v > metric[index] {
            index = k;
        }
    }
    Ok(Selection {
        strategy,
        index,
        epoch: scores.epochs[index],
        val_metric: metric[index],
        test_metric: scores.test.as_ref().map(|t| t[index]),
    })
}

pub fn select_checkpoint(
    trajectory: &[Snapshot],
    strategy: SelectionStrategy,
    sets: &SelectionSets<'_>,
) -> Result<Selection, SelectError> {
    if trajectory.is_empty() {
        return Err(SelectError::EmptyTrajectory);
    }
    let needed = match strategy {
        SelectionStrategy::Id => sets.id_val.is_some(),
        SelectionStrategy::Oracle => sets.oracle_val.is_some(),
        SelectionStrategy::Tev => sets.tev.is_some(),
    };
    if !needed {
        return Err(SelectError::MissingSet(strategy));
    }
    let scores = score_trajectory(trajectory, sets)?;
    select_from_scores(&scores, strategy)
}
