//! Accuracy tables and their CSV/JSON forms.

use std::io::Write;
use std::path::Path;

use scill_core::criteria::CriteriaReport;
use scill_core::select::SelectionStrategy;
use serde::{Deserialize, Serialize};

use crate::config::Method;
use crate::HarnessError;

/// Outcome of one strategy on one seed, in percent.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeedResult {
    pub method: Method,
    pub penalty: String,
    pub seed: u64,
    pub strategy: SelectionStrategy,
    pub val: f64,
    pub test: f64,
    pub lambda: f64,
    pub anneal: usize,
    pub epoch: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportRow {
    pub method: Method,
    pub penalty: String,
    pub strategy: SelectionStrategy,
    pub val_mean: f64,
    pub val_std: f64,
    pub test_mean: f64,
    pub test_std: f64,
    pub seeds: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReferenceSummary {
    pub seed: u64,
    pub train_acc: f64,
    pub val_acc: f64,
    pub test_acc: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupSummary {
    pub method: Method,
    pub seed: u64,
    pub m: usize,
    pub label_counts: Vec<[usize; 2]>,
    /// EIIL only: the soft assignment collapsed to one group.
    pub degenerate: bool,
    pub criteria: CriteriaReport,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentReport {
    pub name: String,
    pub config_hash: String,
    pub rows: Vec<ReportRow>,
    pub per_seed: Vec<SeedResult>,
    pub reference: Vec<ReferenceSummary>,
    pub groups: Vec<GroupSummary>,
}

/// Mean and sample standard deviation (0 for a single value).
pub fn mean_std(v: &[f64]) -> (f64, f64) {
    let n = v.len() as f64;
    let mean = v.iter().sum::<f64>() / n;
    if v.len() < 2 {
        return (mean, 0.0);
    }
    let var = v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

/// Rows in order of first appearance of each (method, penalty, strategy).
pub fn aggregate(per_seed: &[SeedResult]) -> Vec<ReportRow> {
    let mut keys: Vec<(Method, String, SelectionStrategy)> = Vec::new();
    for r in per_seed {
        let k = (r.method, r.penalty.clone(), r.strategy);
        if !keys.contains(&k) {
            keys.push(k);
        }
    }
    keys.into_iter()
        .map(|(method, penalty, strategy)| {
            let sel: Vec<&SeedResult> = per_seed
                .iter()
                .filter(|r| r.method == method && r.penalty == penalty && r.strategy == strategy)
                .collect();
            let val: Vec<f64> = sel.iter().map(|r| r.val).collect();
            let test: Vec<f64> = sel.iter().map(|r| r.test).collect();
            let (val_mean, val_std) = mean_std(&val);
            let (test_mean, test_std) = mean_std(&test);
            ReportRow {
                method,
                penalty,
                strategy,
                val_mean,
                val_std,
                test_mean,
                test_std,
                seeds: sel.len(),
            }
        })
        .collect()
}

impl ExperimentReport {
    pub fn row(
        &self,
        method: Method,
        penalty: &str,
        strategy: SelectionStrategy,
    ) -> Option<&ReportRow> {
        self.rows
            .iter()
            .find(|r| r.method == method && r.penalty == penalty && r.strategy == strategy)
    }

    pub fn write_table<W: Write>(&self, w: W) -> Result<(), csv::Error> {
        let mut out = csv::Writer::from_writer(w);
        out.write_record([
            "method",
            "penalty",
            "strategy",
            "val_mean",
            "val_std",
            "test_mean",
            "test_std",
            "seeds",
        ])?;
        for r in &self.rows {
            out.write_record([
                r.method.name().to_string(),
                r.penalty.clone(),
                r.strategy.name().to_string(),
                format!("{:.4}", r.val_mean),
                format!("{:.4}", r.val_std),
                format!("{:.4}", r.test_mean),
                format!("{:.4}", r.test_std),
                r.seeds.to_string(),
            ])?;
        }
        out.flush()?;
        Ok(())
    }

    pub fn write_per_seed<W: Write>(&self, w: W) -> Result<(), csv::Error> {
        let mut out = csv::Writer::from_writer(w);
        out.write_record([
            "method", "penalty", "seed", "strategy", "val", "test", "lambda", "anneal", "epoch",
        ])?;
        for r in &self.per_seed {
            out.write_record([
                r.method.name().to_string(),
                r.penalty.clone(),
                r.seed.to_string(),
                r.strategy.name().to_string(),
                format!("{:.4}", r.val),
                format!("{:.4}", r.test),
                r.lambda.to_string(),
                r.anneal.to_string(),
                r.epoch.to_string(),
            ])?;
        }
        out.flush()?;
        Ok(())
    }

    pub fn table_csv(&self) -> String {
        let mut buf = Vec::new();
        self.write_table(&mut buf).expect("in-memory write");
        String::from_utf8(buf).expect("utf-8")
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    /// Writes `report.csv`, `per_seed.csv` and `report.json` into `dir`.
    pub fn write_dir(&self, dir: &Path) -> Result<(), HarnessError> {
        std::fs::create_dir_all(dir).map_err(|e| HarnessError::io(dir, e))?;
        let write = |name: &str, body: &[u8]| {
            let p = dir.join(name);
            std::fs::write(&p, body).map_err(|e| HarnessError::io(&p, e))
        };
        write("report.csv", self.table_csv().as_bytes())?;
        let mut seeds = Vec::new();
        self.write_per_seed(&mut seeds)
            .map_err(|e| HarnessError::io(&dir.join("per_seed.csv"), e))?;
        write("per_seed.csv", &seeds)?;
        write("report.json", self.to_json().as_bytes())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn result(seed: u64, strategy: SelectionStrategy, test: f64) -> SeedResult {
        SeedResult {
            method: Method::Scill,
            penalty: "irm".into(),
            seed,
            strategy,
            val: 80.0,
            test,
            lambda: 10.0,
            anneal: 100,
            epoch: 60,
        }
    }

    #[test]
    fn mean_and_sample_std() {
        let (m, s) = mean_std(&[60.0, 62.0, 64.0]);
        assert!((m - 62.0).abs() < 1e-12);
        assert!((s - 2.0).abs() < 1e-12);
        assert_eq!(mean_std(&[5.0]), (5.0, 0.0));
    }

    #[test]
    fn table_schema_is_fixed() {
        let per_seed = vec![
            result(0, SelectionStrategy::Oracle, 60.0),
            result(1, SelectionStrategy::Oracle, 64.0),
            result(0, SelectionStrategy::Id, 55.0),
        ];
        let report = ExperimentReport {
            name: "t".into(),
            config_hash: "h".into(),
            rows: aggregate(&per_seed),
            per_seed,
            reference: vec![],
            groups: vec![],
        };
        let csv = report.table_csv();
        let mut lines = csv.lines();
        assert_eq!(
            lines.next().unwrap(),
            "method,penalty,strategy,val_mean,val_std,test_mean,test_std,seeds"
        );
        assert_eq!(
            lines.next().unwrap(),
            "SCILL,irm,Oracle,80.0000,0.0000,62.0000,2.8284,2"
        );
        assert_eq!(
            lines.next().unwrap(),
            "SCILL,irm,ID,80.0000,0.0000,55.0000,0.0000,1"
        );
        assert!(report
            .row(Method::Scill, "irm", SelectionStrategy::Tev)
            .is_none());
    }
}
