use std::io::Write;
use std::time::{Duration, Instant};

use scill_core::groups::statistical_split_t;
use scill_core::select::SelectionStrategy;
use scill_core::train::train_reference;
use scill_harness::checks::{gradient_suite, idx_round_trip, reweighting_identity};
use scill_harness::pipeline::{build_splits, mlp, reference_outputs};
use scill_harness::report::ReportRow;
use scill_harness::theory::{default_grid, run_theory_suite, TabularTraining};
use scill_harness::{run_experiment, ExperimentConfig, ExperimentReport, Method};

struct Outcome {
    pass: bool,
    summary: String,
}

fn report_line(n: usize, outcome: &Outcome, elapsed: Duration) {
    let verdict = if outcome.pass { "PASS" } else { "FAIL" };
    let line = format!(
        "criterion {n}: {verdict} ({:.1}s) {}\n",
        elapsed.as_secs_f64(),
        outcome.summary
    );
    std::io::stderr().write_all(line.as_bytes()).unwrap();
}

fn theory() -> Outcome {
    let grid = default_grid();
    let start = Instant::now();
    let report = run_theory_suite(&grid, &TabularTraining::default()).unwrap();
    let secs = start.elapsed().as_secs_f64();
    let failures: Vec<String> = report
        .failures()
        .map(|c| format!("{:?} {} = {:e}", c.world, c.check, c.value))
        .collect();
    Outcome {
        pass: grid.len() >= 20 && failures.is_empty() && secs < 60.0,
        summary: format!(
            "{} worlds, {} checks, failures {failures:?}",
            grid.len(),
            report.checks.len()
        ),
    }
}

fn gradients() -> Outcome {
    let start = Instant::now();
    let checks = gradient_suite(120, 7);
    let secs = start.elapsed().as_secs_f64();
    let worst = checks
        .iter()
        .map(|c| c.max_relative_error)
        .fold(0.0f64, f64::max);
    Outcome {
        pass: checks
            .iter()
            .all(|c| c.trials >= 100 && c.max_relative_error < 1e-3)
            && secs < 60.0,
        summary: format!(
            "{} gradients, worst relative error {worst:.2e}",
            checks.len()
        ),
    }
}

fn statistical_split() -> Outcome {
    let config = ExperimentConfig::full();
    let splits = build_splits(&config.data, 0).unwrap();
    let reference = train_reference(
        &splits.train,
        mlp(config.reference.hidden),
        config.reference.epochs,
        config.reference.lr,
        scill_harness::derive_seed(0, 5),
    )
    .unwrap();
    let outputs = reference_outputs(&reference, &splits.train).unwrap();
    let counts: Vec<usize> = [5.0, 10.0, 15.0, 20.0]
        .iter()
        .map(|&thr| {
            statistical_split_t(&outputs, &splits.train.labels, thr)
                .unwrap()
                .m
        })
        .collect();
    let monotone = counts.windows(2).all(|w| w[1] <= w[0]);
    Outcome {
        pass: monotone && counts[1].abs_diff(9) <= 3,
        summary: format!("groups at thr 5/10/15/20: {counts:?}"),
    }
}

fn oracle_test(report: &ExperimentReport, method: Method) -> f64 {
    let penalty = if method == Method::Erm { "none" } else { "irm" };
    report
        .rows
        .iter()
        .find(|r: &&ReportRow| {
            r.method == method && r.penalty == penalty && r.strategy == SelectionStrategy::Oracle
        })
        .map(|r| r.test_mean)
        .unwrap_or(f64::NAN)
}

fn accuracy(report: &ExperimentReport) -> Outcome {
    let erm = oracle_test(report, Method::Erm);
    let scill = oracle_test(report, Method::Scill);
    let eiil = oracle_test(report, Method::Eiil);
    let uw = oracle_test(report, Method::ScillUw);
    let top = report
        .rows
        .iter()
        .map(|r| r.test_mean)
        .fold(f64::NEG_INFINITY, f64::max);
    Outcome {
        pass: (47.0..=57.0).contains(&erm) && scill >= 62.0 && eiil < scill && uw < scill && top <= 77.0,
        summary: format!(
            "Oracle test: ERM {erm:.2}, SCILL {scill:.2}, EIIL {eiil:.2}, SCILL-uw {uw:.2}; max {top:.2}"
        ),
    }
}

fn reweighting() -> Outcome {
    let worst = reweighting_identity(1000, 11);
    Outcome {
        pass: worst < 1e-12,
        summary: format!("worst deviation {worst:.2e} over 1000 assignments"),
    }
}

fn idx() -> Outcome {
    let r = idx_round_trip(1000, 13);
    Outcome {
        pass: r.round_trip_failures == 0 && r.malformed_accepted == 0,
        summary: format!(
            "{} files, {} round-trip failures, {} malformed inputs accepted",
            r.cases, r.round_trip_failures, r.malformed_accepted
        ),
    }
}

fn report_files(dir: &std::path::Path) -> Vec<(String, Vec<u8>)> {
    ["report.csv", "per_seed.csv", "report.json"]
        .iter()
        .map(|f| (f.to_string(), std::fs::read(dir.join(f)).unwrap()))
        .collect()
}

#[test]
fn acceptance() {
    let mut outcomes = Vec::new();
    let mut run = |n: usize, f: &mut dyn FnMut() -> Outcome| {
        let start = Instant::now();
        let outcome = f();
        report_line(n, &outcome, start.elapsed());
        outcomes.push((n, outcome.pass));
    };
    run(1, &mut theory);
    run(2, &mut gradients);
    run(3, &mut statistical_split);

    let dir = tempfile::tempdir().unwrap();
    let quick = ExperimentConfig::quick();
    let mut first: Option<ExperimentReport> = None;
    run(4, &mut || {
        let start = Instant::now();
        let report = run_experiment(&quick, Some(&dir.path().join("a")), None).unwrap();
        let mut outcome = accuracy(&report);
        outcome.pass &= start.elapsed() < Duration::from_secs(7200);
        first = Some(report);
        outcome
    });
    run(5, &mut reweighting);
    run(6, &mut idx);
    run(7, &mut || {
        let second = run_experiment(&quick, Some(&dir.path().join("b")), None).unwrap();
        let same_files = report_files(&dir.path().join("a")) == report_files(&dir.path().join("b"));
        let same_report = first.as_ref().is_some_and(|r| *r == second);
        Outcome {
            pass: same_files && same_report,
            summary: format!(
                "report files identical: {same_files}, in-memory reports equal: {same_report}"
            ),
        }
    });

    let failed: Vec<usize> = outcomes
        .iter()
        .filter(|(_, p)| !p)
        .map(|(n, _)| *n)
        .collect();
    assert!(failed.is_empty(), "failed criteria: {failed:?}");
}
