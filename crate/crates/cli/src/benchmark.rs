//! `benchmark`: repeated executions of the evaluation protocol per
//! (dataset, algorithm, strategy).

use std::collections::BTreeSet;
use std::path::{Path, PathBuf};

use anyhow::{bail, Result};
use clap::{Args, ValueEnum};
use llp_core::dataset::Variant;
use llp_core::harness::{run_benchmark, summary_table, BenchmarkConfig, BenchmarkReport};
use llp_core::learners::Algorithm;
use llp_core::modelsel::StrategyKind;
use serde::{Deserialize, Serialize};

use crate::config::{BenchmarkSection, RunConfig};
use crate::output::OutDir;
use crate::verify::load_instance;
use crate::Status;

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum Preset {
    /// Published grids, four strategies, 30 executions, 75% training split.
    Paper,
}

#[derive(Debug, Args)]
pub struct BenchmarkArgs {
    /// Instance directory or table; repeat for several datasets.
    #[arg(long = "instance")]
    instances: Vec<PathBuf>,
    #[arg(long, value_enum)]
    preset: Option<Preset>,
    #[arg(long)]
    executions: Option<usize>,
    /// Comma-separated strategy names, e.g. `split-bag-shuffle`.
    #[arg(long, value_delimiter = ',')]
    strategies: Vec<StrategyKind>,
    /// Comma-separated algorithm names, e.g. `EMLR,DLLP`.
    #[arg(long, value_delimiter = ',')]
    algorithms: Vec<Algorithm>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetResult {
    pub dataset_id: String,
    pub variant: Variant,
    /// Binary-only algorithms left out on multiclass data.
    pub skipped_algorithms: Vec<Algorithm>,
    #[serde(flatten)]
    pub report: BenchmarkReport,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchmarkFile {
    pub datasets: Vec<DatasetResult>,
}

/// Directory name for `.../<id>/instance.csv` layouts, file stem otherwise.
pub fn dataset_id(path: &Path) -> String {
    let is_default_table = path.file_name().is_some_and(|f| f == "instance.csv");
    let named = if path.is_dir() || is_default_table {
        let dir = if path.is_dir() {
            path
        } else {
            path.parent().unwrap_or(path)
        };
        dir.file_name()
    } else {
        path.file_stem()
    };
    named.map_or_else(
        || "dataset".to_string(),
        |s| s.to_string_lossy().into_owned(),
    )
}

fn merge(args: BenchmarkArgs, mut cfg: BenchmarkSection) -> BenchmarkSection {
    if let Some(Preset::Paper) = args.preset {
        cfg.apply_published_preset();
    }
    if !args.instances.is_empty() {
        cfg.instances = args.instances;
    }
    if let Some(n) = args.executions {
        cfg.n_executions = n;
    }
    if !args.strategies.is_empty() {
        cfg.strategies = args.strategies;
    }
    if !args.algorithms.is_empty() {
        cfg.algorithms = args.algorithms;
    }
    cfg
}

#[derive(Serialize)]
struct BenchmarkExtra {
    executions_per_algorithm: usize,
    n_records: usize,
    invalid_cells: Vec<String>,
}

pub fn run(args: BenchmarkArgs, run_cfg: RunConfig, out_dir: &Path) -> Result<Status> {
    let cfg = merge(args, run_cfg.benchmark.clone());
    cfg.validate()?;
    let strategies = cfg.selection_strategies();
    let bench_cfg = BenchmarkConfig {
        n_executions: cfg.n_executions,
        train_fraction: cfg.train_fraction,
        base_seed: run_cfg.seed,
        alpha: cfg.alpha,
        max_failure_rate: cfg.max_failure_rate,
        learner: cfg.learner.clone(),
    };
    let mut ids = BTreeSet::new();
    let mut datasets = Vec::new();
    for path in &cfg.instances {
        let id = dataset_id(path);
        if !ids.insert(id.clone()) {
            bail!("two instances share the dataset id {id:?}");
        }
        let inst = load_instance(path)?;
        let (algorithms, skipped): (Vec<Algorithm>, Vec<Algorithm>) = cfg
            .algorithms
            .iter()
            .partition(|a| inst.n_classes() == 2 || !a.binary_only());
        for a in &skipped {
            eprintln!("note: {a} skipped on {id} ({} classes)", inst.n_classes());
        }
        let records = run_benchmark(&id, &inst, &algorithms, &strategies, &cfg.grid, &bench_cfg)?;
        datasets.push(DatasetResult {
            dataset_id: id,
            variant: inst.spec().variant,
            skipped_algorithms: skipped,
            report: BenchmarkReport::new(records, cfg.alpha, cfg.grouping),
        });
    }

    let all_records: Vec<_> = datasets
        .iter()
        .flat_map(|d| d.report.records.clone())
        .collect();
    let invalid_cells: Vec<String> = all_records
        .iter()
        .filter(|r| !r.valid)
        .map(|r| {
            format!(
                "{}/{}/{}",
                r.dataset_id,
                r.algorithm,
                r.strategy.kind.name()
            )
        })
        .collect();
    let table = summary_table(&all_records);
    print!("{table}");

    let mut out = OutDir::create(out_dir)?;
    out.write_json("benchmark_report.json", &BenchmarkFile { datasets })?;
    out.write_text("summary.tsv", &table)?;
    for c in &invalid_cells {
        eprintln!("invalid cell: {c}");
    }
    let extra = BenchmarkExtra {
        executions_per_algorithm: cfg.n_executions * strategies.len(),
        n_records: all_records.len(),
        invalid_cells: invalid_cells.clone(),
    };
    out.finish("benchmark", run_cfg.seed, &cfg, extra)?;
    Ok(if invalid_cells.is_empty() {
        Status::Ok
    } else {
        Status::Invalid
    })
}
