//! Labeled feature matrices with per-sample weights and optional spurious
//! annotations.

use std::io::{Read, Write};

use ndarray::{Array2, ArrayView1};
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum DatasetError {
    #[error("dataset must contain at least one sample")]
    Empty,
    #[error("labels have length {labels}, features have {rows} rows")]
    LabelLength { labels: usize, rows: usize },
    #[error("weights have length {weights}, expected {rows}")]
    WeightLength { weights: usize, rows: usize },
    #[error("label {label} at row {row} is not binary")]
    NonBinaryLabel { row: usize, label: u8 },
    #[error("non-finite feature at row {row}, column {col}")]
    NonFinite { row: usize, col: usize },
    #[error("negative or non-finite weight {weight} at row {row}")]
    BadWeight { row: usize, weight: f64 },
    #[error("annotation field `{field}` has {len} entries, expected {rows}")]
    AnnotationLength {
        field: &'static str,
        len: usize,
        rows: usize,
    },
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
    #[error("csv header is malformed: {0}")]
    Header(String),
    #[error("csv row {row}: {msg}")]
    Row { row: usize, msg: String },
}

/// Per-sample record of the spurious bits and the label before noise.
///
/// `spurious[i]` is `(color, patch)` for image data and `(b0, b1)` for
/// discrete worlds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Annotations {
    pub spurious: Vec<[u8; 2]>,
    pub clean_label: Vec<u8>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LabeledDataset {
    pub features: Array2<f64>,
    pub labels: Vec<u8>,
    pub weights: Vec<f64>,
    pub annotations: Option<Annotations>,
}

impl LabeledDataset {
    /// Builds a dataset with unit weights.
    pub fn new(features: Array2<f64>, labels: Vec<u8>) -> Result<Self, DatasetError> {
        let n = labels.len();
        Self::with_parts(features, labels, vec![1.0; n], None)
    }

    pub fn with_parts(
        features: Array2<f64>,
        labels: Vec<u8>,
        weights: Vec<f64>,
        annotations: Option<Annotations>,
    ) -> Result<Self, DatasetError> {
        let ds = Self {
            features,
            labels,
            weights,
            annotations,
        };
        ds.validate()?;
        Ok(ds)
    }

    pub fn validate(&self) -> Result<(), DatasetError> {
        let rows = self.features.nrows();
        if rows == 0 {
            return Err(DatasetError::Empty);
        }
        if self.labels.len() != rows {
            return Err(DatasetError::LabelLength {
                labels: self.labels.len(),
                rows,
            });
        }
        if self.weights.len() != rows {
            return Err(DatasetError::WeightLength {
                weights: self.weights.len(),
                rows,
            });
        }
        for (row, &label) in self.labels.iter().enumerate() {
            if label > 1 {
                return Err(DatasetError::NonBinaryLabel { row, label });
            }
        }
        for ((row, col), v) in self.features.indexed_iter() {
            if !v.is_finite() {
                return Err(DatasetError::NonFinite { row, col });
            }
        }
        for (row, &weight) in self.weights.iter().enumerate() {
            if !(weight >= 0.0 && weight.is_finite()) {
                return Err(DatasetError::BadWeight { row, weight });
            }
        }
        if let Some(ann) = &self.annotations {
            if ann.spurious.len() != rows {
                return Err(DatasetError::AnnotationLength {
                    field: "spurious",
                    len: ann.spurious.len(),
                    rows,
                });
            }
            if ann.clean_label.len() != rows {
                return Err(DatasetError::AnnotationLength {
                    field: "clean_label",
                    len: ann.clean_label.len(),
                    rows,
                });
            }
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.features.ncols()
    }

    pub fn row(&self, i: usize) -> ArrayView1<'_, f64> {
        self.features.row(i)
    }

    /// Rows `indices`, in that order.
    pub fn subset(&self, indices: &[usize]) -> LabeledDataset {
        let features = self.features.select(ndarray::Axis(0), indices);
        let labels = indices.iter().map(|&i| self.labels[i]).collect();
        let weights = indices.iter().map(|&i| self.weights[i]).collect();
        let annotations = self.annotations.as_ref().map(|a| Annotations {
            spurious: indices.iter().map(|&i| a.spurious[i]).collect(),
            clean_label: indices.iter().map(|&i| a.clean_label[i]).collect(),
        });
        LabeledDataset {
            features,
            labels,
            weights,
            annotations,
        }
    }

    pub fn label_counts(&self) -> [usize; 2] {
        let mut c = [0usize; 2];
        for &y in &self.labels {
            c[y as usize] += 1;
        }
        c
    }

    /// Writes the dataset as CSV.
    ///
    /// Header: `f0..f{d-1},label,weight,spurious_a,spurious_b,clean_label`.
    /// The three annotation columns are empty when no annotations exist.
    pub fn write_csv<W: Write>(&self, writer: W) -> Result<(), DatasetError> {
        let mut w = csv::Writer::from_writer(writer);
        let d = self.dim();
        let mut header: Vec<String> = (0..d).map(|j| format!("f{j}")).collect();
        header.extend(
            ["label", "weight", "spurious_a", "spurious_b", "clean_label"]
                .iter()
                .map(|s| s.to_string()),
        );
        w.write_record(&header)?;
        let mut record: Vec<String> = Vec::with_capacity(d + 5);
        for i in 0..self.len() {
            record.clear();
            record.extend(self.features.row(i).iter().map(|v| v.to_string()));
            record.push(self.labels[i].to_string());
            record.push(self.weights[i].to_string());
            match &self.annotations {
                Some(a) => {
                    record.push(a.spurious[i][0].to_string());
                    record.push(a.spurious[i][1].to_string());
                    record.push(a.clean_label[i].to_string());
                }
                None => record.extend(std::iter::repeat_n(String::new(), 3)),
            }
            w.write_record(&record)?;
        }
        w.flush().map_err(csv::Error::from)?;
        Ok(())
    }

    pub fn read_csv<R: Read>(reader: R) -> Result<Self, DatasetError> {
        let mut r = csv::Reader::from_reader(reader);
        let header = r.headers()?.clone();
        let tail = ["label", "weight", "spurious_a", "spurious_b", "clean_label"];
        if header.len() < tail.len() {
            return Err(DatasetError::Header(format!(
                "only {} columns",
                header.len()
            )));
        }
        let d = header.len() - tail.len();
        for (j, name) in header.iter().take(d).enumerate() {
            if name != format!("f{j}") {
                return Err(DatasetError::Header(format!("column {j} is `{name}`")));
            }
        }
        for (k, expected) in tail.iter().enumerate() {
            if &header[d + k] != *expected {
                return Err(DatasetError::Header(format!(
                    "column {} is `{}`, expected `{expected}`",
                    d + k,
                    &header[d + k]
                )));
            }
        }

        let mut feats = Vec::new();
        let mut labels = Vec::new();
        let mut weights = Vec::new();
        let mut spurious = Vec::new();
        let mut clean = Vec::new();
        let mut annotated: Option<bool> = None;
        for (row, rec) in r.records().enumerate() {
            let rec = rec?;
            let bad = |msg: String| DatasetError::Row { row, msg };
            for j in 0..d {
                let v: f64 = rec[j]
                    .parse()
                    .map_err(|e| bad(format!("feature {j}: {e}")))?;
                feats.push(v);
            }
            labels.push(
                rec[d]
                    .parse::<u8>()
                    .map_err(|e| bad(format!("label: {e}")))?,
            );
            weights.push(
                rec[d + 1]
                    .parse::<f64>()
                    .map_err(|e| bad(format!("weight: {e}")))?,
            );
            let has = !rec[d + 2].is_empty();
            match annotated {
                None => annotated = Some(has),
                Some(prev) if prev != has => {
                    return Err(bad("annotations present on some rows only".into()))
                }
                _ => {}
            }
            if has {
                let parse = |k: usize| -> Result<u8, DatasetError> {
                    rec[d + k]
                        .parse::<u8>()
                        .map_err(|e| bad(format!("{}: {e}", tail[k])))
                };
                spurious.push([parse(2)?, parse(3)?]);
                clean.push(parse(4)?);
            }
        }
        let n = labels.len();
        let features = Array2::from_shape_vec((n, d), feats)
            .map_err(|e| DatasetError::Header(e.to_string()))?;
        let annotations = if annotated == Some(true) {
            Some(Annotations {
                spurious,
                clean_label: clean,
            })
        } else {
            None
        };
        Self::with_parts(features, labels, weights, annotations)
    }
}
