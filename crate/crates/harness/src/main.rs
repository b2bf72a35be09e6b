use std::fs::File;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use scill_core::criteria::CriteriaReport;
use scill_core::groups::group_centers;
use scill_core::select::{select_checkpoint, tev_allocate, SelectionSets, SelectionStrategy};
use scill_core::train::{
    compute_group_weights, train_reference, train_scill, Optimizer, PenaltyKind, Snapshot,
    TrainConfig,
};
use scill_core::{GroupAssignment, LabeledDataset, ModelParams};
use scill_harness::pipeline::{build_splits, infer_groups, mlp, reference_outputs};
use scill_harness::theory::{default_grid, run_theory_suite, TabularTraining};
use scill_harness::{run_experiment, ExperimentConfig, HarnessError, Method};

#[derive(Parser)]
#[command(
    name = "scill",
    version,
    about = "Group invariant learning experiments"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct ConfigSource {
    /// Built-in profile: quick or full.
    #[arg(long, default_value = "quick", conflicts_with = "config")]
    profile: String,
    /// TOML experiment config.
    #[arg(long)]
    config: Option<PathBuf>,
}

impl ConfigSource {
    fn load(&self) -> Result<ExperimentConfig, HarnessError> {
        match &self.config {
            Some(p) => ExperimentConfig::load(p),
            None => ExperimentConfig::profile(&self.profile),
        }
    }
}

#[derive(Subcommand)]
enum Command {
    /// Write train/val/oracle/test PC-MNIST splits as CSV.
    GenData {
        #[command(flatten)]
        source: ConfigSource,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train the ERM reference model.
    TrainRef {
        #[arg(long)]
        data: PathBuf,
        #[arg(long, default_value_t = 100)]
        epochs: usize,
        #[arg(long, default_value_t = 0.2)]
        lr: f64,
        #[arg(long, default_value_t = 64)]
        hidden: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Infer groups from reference outputs.
    InferGroups {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        reference: PathBuf,
        /// SCILL (statistical split) or EIIL (environment inference).
        #[arg(long, default_value = "SCILL")]
        method: Method,
        #[arg(long, default_value_t = 10.0)]
        thr: f64,
        #[arg(long)]
        p_thr: Option<f64>,
        #[arg(long, default_value_t = 2000)]
        eiil_steps: usize,
        #[arg(long, default_value_t = 0.01)]
        eiil_lr: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Label-balance and falsity-exposure report for a grouping.
    CheckCriteria {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        reference: PathBuf,
        #[arg(long)]
        groups: PathBuf,
        #[arg(long, default_value_t = 0.1)]
        balance_tol: f64,
        #[arg(long, default_value_t = 10.0)]
        thr: f64,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Train with a group penalty and write the checkpoint trajectory.
    Train {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        groups: PathBuf,
        /// irm, rex, cmmd or pgi.
        #[arg(long, default_value = "irm")]
        penalty: String,
        #[arg(long, default_value_t = 10.0)]
        lambda: f64,
        #[arg(long, default_value_t = 300)]
        anneal: usize,
        #[arg(long, default_value_t = 0.0)]
        ramp_rate: f64,
        #[arg(long, default_value_t = 800)]
        epochs: usize,
        #[arg(long, default_value_t = 0.1)]
        lr: f64,
        /// sgd or adam.
        #[arg(long, default_value = "sgd")]
        optimizer: String,
        /// Weight-matrix L2 coefficient.
        #[arg(long, default_value_t = 0.0)]
        l2: f64,
        #[arg(long, default_value_t = 64)]
        hidden: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Train without group label weights.
        #[arg(long)]
        no_reweight: bool,
        #[arg(long)]
        out: PathBuf,
    },
    /// Choose a checkpoint from a trajectory directory.
    Select {
        #[arg(long)]
        checkpoints: PathBuf,
        #[arg(long, default_value = "Oracle")]
        strategy: String,
        #[arg(long)]
        val: Option<PathBuf>,
        #[arg(long)]
        oracle: Option<PathBuf>,
        #[arg(long)]
        test: Option<PathBuf>,
        /// For TEV: training data, groups and reference model.
        #[arg(long)]
        train: Option<PathBuf>,
        #[arg(long)]
        groups: Option<PathBuf>,
        #[arg(long)]
        reference: Option<PathBuf>,
        /// For TEV: the trajectory was trained without label weights.
        #[arg(long)]
        no_reweight: bool,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Full pipeline: reference, groups, grid training, selection, report.
    Run {
        #[command(flatten)]
        source: ConfigSource,
        /// Override the configured seeds.
        #[arg(long, value_delimiter = ',')]
        seeds: Option<Vec<u64>>,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        quiet: bool,
    },
    /// Exact checks on discrete worlds; exits nonzero on any failure.
    TheorySuite {
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn read_dataset(path: &Path) -> Result<LabeledDataset, HarnessError> {
    let f = File::open(path).map_err(|e| HarnessError::io(path, e))?;
    LabeledDataset::read_csv(f).map_err(|e| HarnessError::io(path, e))
}

fn write_dataset(ds: &LabeledDataset, path: &Path) -> Result<(), HarnessError> {
    let f = File::create(path).map_err(|e| HarnessError::io(path, e))?;
    ds.write_csv(f).map_err(|e| HarnessError::io(path, e))
}

fn read_model(path: &Path) -> Result<ModelParams, HarnessError> {
    let text = std::fs::read_to_string(path).map_err(|e| HarnessError::io(path, e))?;
    ModelParams::from_json(&text).map_err(|e| HarnessError::io(path, e))
}

fn read_groups(path: &Path, labels: &[u8]) -> Result<GroupAssignment, HarnessError> {
    let f = File::open(path).map_err(|e| HarnessError::io(path, e))?;
    GroupAssignment::read_csv(f, labels).map_err(|e| HarnessError::io(path, e))
}

fn write_text(path: Option<&Path>, body: &str) -> Result<(), HarnessError> {
    match path {
        Some(p) => std::fs::write(p, body).map_err(|e| HarnessError::io(p, e)),
        None => {
            println!("{body}");
            Ok(())
        }
    }
}

fn parse_penalty(name: &str) -> Result<PenaltyKind, HarnessError> {
    match name.to_ascii_lowercase().as_str() {
        "irm" => Ok(PenaltyKind::Irm),
        "rex" => Ok(PenaltyKind::Rex),
        "cmmd" => Ok(PenaltyKind::cmmd_default()),
        "pgi" => Ok(PenaltyKind::Pgi),
        other => Err(HarnessError::Config(format!("unknown penalty {other:?}"))),
    }
}

fn parse_optimizer(name: &str) -> Result<Optimizer, HarnessError> {
    match name.to_ascii_lowercase().as_str() {
        "sgd" => Ok(Optimizer::Sgd),
        "adam" => Ok(Optimizer::Adam),
        other => Err(HarnessError::Config(format!("unknown optimizer {other:?}"))),
    }
}

fn parse_strategy(name: &str) -> Result<SelectionStrategy, HarnessError> {
    SelectionStrategy::ALL
        .into_iter()
        .find(|s| s.name().eq_ignore_ascii_case(name))
        .ok_or_else(|| HarnessError::Config(format!("unknown strategy {name:?}")))
}

fn other(e: impl std::fmt::Display) -> HarnessError {
    HarnessError::Config(e.to_string())
}

/// Checkpoints `epoch_NNNNNN.json` in epoch order.
fn read_trajectory(dir: &Path) -> Result<Vec<Snapshot>, HarnessError> {
    let mut entries: Vec<(usize, PathBuf)> = Vec::new();
    for e in std::fs::read_dir(dir).map_err(|e| HarnessError::io(dir, e))? {
        let p = e.map_err(|e| HarnessError::io(dir, e))?.path();
        let name = p.file_name().and_then(|n| n.to_str()).unwrap_or_default();
        if let Some(epoch) = name
            .strip_prefix("epoch_")
            .and_then(|s| s.strip_suffix(".json"))
        {
            entries.push((epoch.parse().map_err(other)?, p.clone()));
        }
    }
    entries.sort();
    entries
        .into_iter()
        .map(|(epoch, p)| {
            Ok(Snapshot {
                epoch,
                params: read_model(&p)?,
            })
        })
        .collect()
}

fn run(cli: Cli) -> Result<ExitCode, HarnessError> {
    match cli.command {
        Command::GenData { source, seed, out } => {
            let config = source.load()?;
            let splits = build_splits(&config.data, seed).map_err(other)?;
            std::fs::create_dir_all(&out).map_err(|e| HarnessError::io(&out, e))?;
            for (name, ds) in [
                ("train", &splits.train),
                ("val", &splits.val),
                ("oracle", &splits.oracle),
                ("test", &splits.test),
            ] {
                write_dataset(ds, &out.join(format!("{name}.csv")))?;
            }
        }
        Command::TrainRef {
            data,
            epochs,
            lr,
            hidden,
            seed,
            out,
        } => {
            let ds = read_dataset(&data)?;
            let params = train_reference(&ds, mlp(hidden), epochs, lr, seed).map_err(other)?;
            std::fs::write(&out, params.to_json()).map_err(|e| HarnessError::io(&out, e))?;
        }
        Command::InferGroups {
            data,
            reference,
            method,
            thr,
            p_thr,
            eiil_steps,
            eiil_lr,
            seed,
            out,
        } => {
            let ds = read_dataset(&data)?;
            let refs = reference_outputs(&read_model(&reference)?, &ds).map_err(other)?;
            let cfg = scill_harness::config::GroupConfig {
                thr,
                p_thr,
                balance_tol: 0.1,
                eiil_steps,
                eiil_lr,
            };
            let (asg, _) = infer_groups(method, &refs, &ds.labels, &cfg, seed).map_err(other)?;
            let f = File::create(&out).map_err(|e| HarnessError::io(&out, e))?;
            asg.write_csv(f).map_err(|e| HarnessError::io(&out, e))?;
            eprintln!("{} groups, label counts {:?}", asg.m, asg.label_counts);
        }
        Command::CheckCriteria {
            data,
            reference,
            groups,
            balance_tol,
            thr,
            out,
        } => {
            let ds = read_dataset(&data)?;
            let refs = reference_outputs(&read_model(&reference)?, &ds).map_err(other)?;
            let asg = read_groups(&groups, &ds.labels)?;
            let report =
                CriteriaReport::build(&refs, &ds.labels, &asg, balance_tol, thr).map_err(other)?;
            write_text(out.as_deref(), &report.to_json())?;
        }
        Command::Train {
            data,
            groups,
            penalty,
            lambda,
            anneal,
            ramp_rate,
            epochs,
            lr,
            optimizer,
            l2,
            hidden,
            seed,
            no_reweight,
            out,
        } => {
            let ds = read_dataset(&data)?;
            let asg = read_groups(&groups, &ds.labels)?;
            let config = TrainConfig {
                lr,
                epochs,
                anneal_epochs: anneal,
                lambda,
                ramp_rate,
                seed,
                penalty: parse_penalty(&penalty)?,
                reweight: !no_reweight,
                optimizer: parse_optimizer(&optimizer)?,
                l2,
                ..TrainConfig::default()
            };
            let run = train_scill(&ds, &asg, &config, mlp(hidden)).map_err(other)?;
            std::fs::create_dir_all(&out).map_err(|e| HarnessError::io(&out, e))?;
            for s in &run.trajectory {
                let p = out.join(format!("epoch_{:06}.json", s.epoch));
                std::fs::write(&p, s.params.to_json()).map_err(|e| HarnessError::io(&p, e))?;
            }
            let p = out.join("history.json");
            std::fs::write(
                &p,
                serde_json::to_string_pretty(&run.history).map_err(other)?,
            )
            .map_err(|e| HarnessError::io(&p, e))?;
        }
        Command::Select {
            checkpoints,
            strategy,
            val,
            oracle,
            test,
            train,
            groups,
            reference,
            no_reweight,
            out,
        } => {
            let strategy = parse_strategy(&strategy)?;
            let trajectory = read_trajectory(&checkpoints)?;
            let load = |p: &Option<PathBuf>| p.as_deref().map(read_dataset).transpose();
            let (val, oracle, test) = (load(&val)?, load(&oracle)?, load(&test)?);
            let mut tev_weights = None;
            if let (SelectionStrategy::Tev, Some(train), Some(groups), Some(reference), Some(v)) =
                (strategy, &train, &groups, &reference, &val)
            {
                let tr = read_dataset(train)?;
                let model = read_model(reference)?;
                let mut asg = read_groups(groups, &tr.labels)?;
                compute_group_weights(&mut asg, &tr.labels);
                let centers = group_centers(&reference_outputs(&model, &tr).map_err(other)?, &asg)
                    .map_err(other)?;
                let omega = if no_reweight {
                    vec![[Some(1.0); 2]; asg.m]
                } else {
                    asg.weights.clone().expect("computed")
                };
                let alloc = tev_allocate(
                    &reference_outputs(&model, v).map_err(other)?,
                    &v.labels,
                    &centers,
                    &omega,
                )
                .map_err(other)?;
                tev_weights = Some(alloc.weights);
            }
            let sets = SelectionSets {
                id_val: val.as_ref(),
                oracle_val: oracle.as_ref(),
                tev: val.as_ref().zip(tev_weights.as_deref()),
                test: test.as_ref(),
            };
            let sel = select_checkpoint(&trajectory, strategy, &sets).map_err(other)?;
            write_text(
                out.as_deref(),
                &serde_json::to_string_pretty(&sel).map_err(other)?,
            )?;
        }
        Command::Run {
            source,
            seeds,
            out,
            quiet,
        } => {
            let mut config = source.load()?;
            if let Some(s) = seeds {
                config.seeds = s;
            }
            let mut print = |m: &str| eprintln!("{m}");
            let log: scill_harness::pipeline::Log<'_> = if quiet { None } else { Some(&mut print) };
            let report = run_experiment(&config, Some(&out), log)?;
            print!("{}", report.table_csv());
        }
        Command::TheorySuite { out } => {
            let report =
                run_theory_suite(&default_grid(), &TabularTraining::default()).map_err(other)?;
            for c in report.failures() {
                eprintln!("FAIL {:?} {}: {} {}", c.world, c.check, c.value, c.detail);
            }
            let pass = report.all_pass();
            println!(
                "{} checks, {}",
                report.checks.len(),
                if pass { "all pass" } else { "FAILED" }
            );
            if let Some(p) = out {
                std::fs::write(&p, serde_json::to_string_pretty(&report).map_err(other)?)
                    .map_err(|e| HarnessError::io(&p, e))?;
            }
            return Ok(if pass {
                ExitCode::SUCCESS
            } else {
                ExitCode::FAILURE
            });
        }
    }
    Ok(ExitCode::SUCCESS)
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}
