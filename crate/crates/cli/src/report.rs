//! `report`: text tables of best sets per dataset, then per variant the
//! share of datasets in which each algorithm, and each strategy family,
//! belongs to the best set.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::Args;
use serde::Serialize;

use crate::benchmark::{BenchmarkFile, DatasetResult};
use crate::config::RunConfig;
use crate::output::OutDir;
use crate::Status;

#[derive(Debug, Args)]
pub struct ReportArgs {
    /// Benchmark report JSON; repeat to combine several runs.
    #[arg(long = "input", required = true)]
    inputs: Vec<PathBuf>,
}

fn dataset_section(out: &mut String, d: &DatasetResult) {
    let _ = writeln!(out, "dataset {} ({})", d.dataset_id, d.variant);
    let _ = writeln!(
        out,
        "  {:<6} {:<20} {:>8} {:>8} {:>4}",
        "alg", "strategy", "mean", "std", "n"
    );
    for r in &d.report.records {
        let f = |v: Option<f64>| v.map_or_else(|| "NA".to_string(), |x| format!("{x:.4}"));
        let _ = writeln!(
            out,
            "  {:<6} {:<20} {:>8} {:>8} {:>4}{}",
            r.algorithm.name(),
            r.strategy.kind.name(),
            f(r.summary.mean),
            f(r.summary.std),
            r.summary.count - r.summary.failed,
            if r.valid { "" } else { "  invalid" }
        );
    }
    if let Some(best) = &d.report.comparisons.algorithms {
        let _ = writeln!(out, "  best algorithms: {}", best.best_set.join(", "));
    }
    if let Some(s) = &d.report.comparisons.strategies {
        for (key, set) in &s.sets {
            let _ = writeln!(
                out,
                "  best strategies [{key}]: {} ({})",
                set.best_set.join(", "),
                s.families[key]
            );
        }
    }
    out.push('\n');
}

#[derive(Default, Serialize)]
struct VariantTally {
    datasets: usize,
    algorithm_in_best: BTreeMap<String, usize>,
    strategy_family: BTreeMap<String, usize>,
    strategy_sets: usize,
}

pub fn render(files: &[BenchmarkFile]) -> String {
    let mut out = String::new();
    let mut tallies: BTreeMap<String, VariantTally> = BTreeMap::new();
    for d in files.iter().flat_map(|f| &f.datasets) {
        dataset_section(&mut out, d);
        let t = tallies.entry(d.variant.name().to_string()).or_default();
        t.datasets += 1;
        if let Some(best) = &d.report.comparisons.algorithms {
            for a in &best.ranked {
                *t.algorithm_in_best.entry(a.clone()).or_default() +=
                    usize::from(best.best_set.contains(a));
            }
        }
        if let Some(s) = &d.report.comparisons.strategies {
            for fam in s.families.values() {
                *t.strategy_family.entry(fam.clone()).or_default() += 1;
                t.strategy_sets += 1;
            }
        }
    }
    for (variant, t) in &tallies {
        let _ = writeln!(out, "variant {variant}: {} dataset(s)", t.datasets);
        let _ = writeln!(
            out,
            "  share of datasets with the algorithm in the best set"
        );
        for (a, &c) in &t.algorithm_in_best {
            let _ = writeln!(out, "    {a:<6} {:>6.3}", c as f64 / t.datasets as f64);
        }
        let _ = writeln!(out, "  share of best strategy sets by family");
        for (fam, &c) in &t.strategy_family {
            let _ = writeln!(
                out,
                "    {fam:<6} {:>6.3}",
                c as f64 / t.strategy_sets.max(1) as f64
            );
        }
    }
    out
}

pub fn run(args: ReportArgs, run_cfg: RunConfig, out_dir: &Path) -> Result<Status> {
    if args.inputs.is_empty() {
        bail!("no benchmark reports given");
    }
    let mut files = Vec::new();
    for p in &args.inputs {
        let text =
            std::fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?;
        files.push(
            serde_json::from_str::<BenchmarkFile>(&text)
                .with_context(|| format!("parsing {}", p.display()))?,
        );
    }
    let text = render(&files);
    print!("{text}");
    let mut out = OutDir::create(out_dir)?;
    out.write_text("report.txt", &text)?;
    out.finish("report", run_cfg.seed, &args.inputs, ())?;
    Ok(Status::Ok)
}
