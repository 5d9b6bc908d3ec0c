//! `generate`: one instance, or every cell of the characteristic sweep.

use std::path::{Path, PathBuf};
use std::sync::Arc;

use anyhow::{bail, Context, Result};
use clap::Args;
use llp_core::baggen::regimes::{bag_sizes, proportions, ProportionRegime, SizeRegime};
use llp_core::baggen::{self, GenerationReport, WARN_INFEASIBLE_RESIDUAL};
use llp_core::dataset::{
    load_base_dataset, scale_features, write_instance, AssignmentMode, BaseDataset, GenSpec,
    Variant,
};
use llp_core::rng;
use llp_core::synthetic::two_gaussians;
use serde::Serialize;

use crate::config::{GenerateConfig, RunConfig, SyntheticBase};
use crate::output::OutDir;
use crate::Status;

#[derive(Debug, Args)]
pub struct GenerateArgs {
    /// Base dataset CSV with a header row.
    #[arg(long)]
    base: Option<PathBuf>,
    /// Name of the label column in the base CSV.
    #[arg(long)]
    label_column: Option<String>,
    /// Use a two-Gaussian base with this many items instead of a CSV.
    #[arg(long)]
    synthetic: Option<usize>,
    /// Map features onto [-1, 1] first.
    #[arg(long)]
    scale: bool,
    /// Enumerate variants, bag counts, size and proportion regimes.
    #[arg(long)]
    sweep: bool,
    #[arg(long)]
    variant: Option<Variant>,
    #[arg(long)]
    bags: Option<usize>,
    /// `equal` or `not-equal`.
    #[arg(long, value_parser = parse_size)]
    size_regime: Option<SizeRegime>,
    /// `close-global`, `far-global` or `mixed`.
    #[arg(long, value_parser = parse_proportion)]
    proportion_regime: Option<ProportionRegime>,
    #[arg(long)]
    clusters: Option<usize>,
    /// Draw bags per item instead of rounding counts.
    #[arg(long)]
    sampled: bool,
}

fn parse_size(s: &str) -> Result<SizeRegime, String> {
    SizeRegime::ALL
        .into_iter()
        .find(|r| r.name() == s)
        .ok_or_else(|| format!("unknown size regime {s:?}"))
}

fn parse_proportion(s: &str) -> Result<ProportionRegime, String> {
    ProportionRegime::ALL
        .into_iter()
        .find(|r| r.name() == s)
        .ok_or_else(|| format!("unknown proportion regime {s:?}"))
}

fn merge(args: GenerateArgs, mut cfg: GenerateConfig) -> GenerateConfig {
    if let Some(b) = args.base {
        cfg.base = Some(b);
        cfg.synthetic = None;
    }
    if let Some(n) = args.synthetic {
        cfg.synthetic = Some(SyntheticBase {
            n_items: n,
            ..cfg.synthetic.unwrap_or_default()
        });
        cfg.base = None;
    }
    if let Some(c) = args.label_column {
        cfg.label_column = c;
    }
    cfg.scale |= args.scale;
    cfg.sweep |= args.sweep;
    if let Some(v) = args.variant {
        cfg.variant = v;
    }
    if let Some(l) = args.bags {
        cfg.n_bags = l;
    }
    if let Some(r) = args.size_regime {
        cfg.size_regime = r;
    }
    if let Some(r) = args.proportion_regime {
        cfg.proportion_regime = r;
    }
    if let Some(q) = args.clusters {
        cfg.n_clusters = Some(q);
    }
    if args.sampled {
        cfg.assignment_mode = AssignmentMode::Sampled;
    }
    cfg
}

fn load_base(cfg: &GenerateConfig, seed: u64) -> Result<BaseDataset> {
    let base = match (&cfg.base, &cfg.synthetic) {
        (Some(path), _) => load_base_dataset(path, &cfg.label_column)
            .with_context(|| format!("loading {}", path.display()))?,
        (None, Some(s)) => two_gaussians(s.n_items, s.positive_fraction, rng::derive(seed, 0)),
        (None, None) => bail!("no base dataset"),
    };
    Ok(if cfg.scale {
        scale_features(&base)
    } else {
        base
    })
}

/// One cell of a sweep (or the single requested instance).
#[derive(Debug, Clone, Serialize)]
pub struct Cell {
    pub id: String,
    pub variant: Variant,
    pub n_bags: usize,
    pub size_regime: SizeRegime,
    /// Absent for Naive cells, whose proportions are not controlled.
    pub proportion_regime: Option<ProportionRegime>,
    pub status: CellStatus,
    pub reason: Option<String>,
    pub warnings: Vec<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum CellStatus {
    Generated,
    Infeasible,
    Error,
}

fn cell_id(variant: Variant, l: usize, size: SizeRegime, prop: Option<ProportionRegime>) -> String {
    match prop {
        Some(p) => format!("{}-L{l}-{}-{}", variant.name(), size.name(), p.name()),
        None => format!("{}-L{l}-{}", variant.name(), size.name()),
    }
}

/// Naive proportions are a consequence of random assignment; the recipe
/// records the global proportion for every bag.
fn recipe(
    base: &BaseDataset,
    cfg: &GenerateConfig,
    variant: Variant,
    l: usize,
    size: SizeRegime,
    prop: Option<ProportionRegime>,
    seed: u64,
) -> llp_core::Result<GenSpec> {
    let n = base.n_items();
    let sizes = bag_sizes(size, n, l)?;
    let counts = base.class_counts();
    let rows = match prop {
        Some(p) => {
            if base.n_classes() != 2 {
                return Err(llp_core::Error::InvalidArgument(
                    "proportion regimes are defined for binary bases only".into(),
                ));
            }
            proportions(p, &sizes, counts[1], &cfg.regimes)?
        }
        None => vec![counts.iter().map(|&c| c as f64 / n as f64).collect(); l],
    };
    Ok(GenSpec {
        variant,
        n_bags: l,
        bag_sizes: sizes,
        proportions: rows,
        n_clusters: cfg.n_clusters.unwrap_or(l),
        assignment_mode: cfg.assignment_mode,
        seed,
    })
}

fn emit(out: &mut OutDir, dir: &str, generated: &baggen::Generated) -> Result<()> {
    let prefix = if dir.is_empty() {
        String::new()
    } else {
        format!("{dir}/")
    };
    if !dir.is_empty() {
        out.ensure_dir(dir)?;
    }
    let table = format!("{prefix}instance.csv");
    let sidecar = format!("{prefix}instance.json");
    write_instance(&generated.instance, out.path(&table), out.path(&sidecar))?;
    out.register(&table)?;
    out.register(&sidecar)?;
    out.write_json(
        &format!("{prefix}generation_report.json"),
        &generated.report,
    )?;
    Ok(())
}

fn warnings(report: &GenerationReport) -> Vec<String> {
    report
        .warnings
        .iter()
        .map(|w| format!("{}: {}", w.code, w.message))
        .collect()
}

#[derive(Serialize)]
struct SweepExtra {
    n_cells: usize,
    n_generated: usize,
    cells: Vec<Cell>,
}

pub fn run(args: GenerateArgs, run_cfg: RunConfig, out_dir: &Path) -> Result<Status> {
    let cfg = merge(args, run_cfg.generate.clone());
    cfg.validate()?;
    let seed = run_cfg.seed;
    let base = Arc::new(load_base(&cfg, seed)?);
    let mut out = OutDir::create(out_dir)?;

    if !cfg.sweep {
        let prop = (cfg.variant != Variant::Naive).then_some(cfg.proportion_regime);
        let spec = recipe(
            &base,
            &cfg,
            cfg.variant,
            cfg.n_bags,
            cfg.size_regime,
            prop,
            seed,
        )?;
        let generated = baggen::generate(base, &spec, None, &cfg.generation)?;
        emit(&mut out, "", &generated)?;
        for w in warnings(&generated.report) {
            eprintln!("warning: {w}");
        }
        let cell = Cell {
            id: cell_id(cfg.variant, cfg.n_bags, cfg.size_regime, prop),
            variant: cfg.variant,
            n_bags: cfg.n_bags,
            size_regime: cfg.size_regime,
            proportion_regime: prop,
            status: CellStatus::Generated,
            reason: None,
            warnings: warnings(&generated.report),
        };
        out.finish(
            "generate",
            seed,
            &cfg,
            SweepExtra {
                n_cells: 1,
                n_generated: 1,
                cells: vec![cell],
            },
        )?;
        return Ok(Status::Ok);
    }

    let mut cells = Vec::new();
    for variant in Variant::ALL {
        for &l in &cfg.sweep_bags {
            for size in SizeRegime::ALL {
                let props: Vec<Option<ProportionRegime>> = if variant == Variant::Naive {
                    vec![None]
                } else {
                    ProportionRegime::ALL.into_iter().map(Some).collect()
                };
                for prop in props {
                    let id = cell_id(variant, l, size, prop);
                    let cell_seed = rng::derive_key(seed, &[&id]);
                    let attempt =
                        recipe(&base, &cfg, variant, l, size, prop, cell_seed).and_then(|spec| {
                            baggen::generate(base.clone(), &spec, None, &cfg.generation)
                        });
                    let mut cell = Cell {
                        id: id.clone(),
                        variant,
                        n_bags: l,
                        size_regime: size,
                        proportion_regime: prop,
                        status: CellStatus::Generated,
                        reason: None,
                        warnings: Vec::new(),
                    };
                    match attempt {
                        Ok(g) if g.report.has_warning(WARN_INFEASIBLE_RESIDUAL) => {
                            cell.status = CellStatus::Infeasible;
                            cell.reason = Some(WARN_INFEASIBLE_RESIDUAL.to_string());
                            cell.warnings = warnings(&g.report);
                        }
                        Ok(g) => {
                            cell.warnings = warnings(&g.report);
                            emit(&mut out, &id, &g)?;
                        }
                        Err(e @ llp_core::Error::Infeasible { .. }) => {
                            cell.status = CellStatus::Infeasible;
                            cell.reason = Some(e.to_string());
                        }
                        Err(e) => {
                            cell.status = CellStatus::Error;
                            cell.reason = Some(e.to_string());
                        }
                    }
                    cells.push(cell);
                }
            }
        }
    }
    let n_generated = cells
        .iter()
        .filter(|c| c.status == CellStatus::Generated)
        .count();
    println!("sweep: {} cells, {n_generated} generated", cells.len());
    for c in cells.iter().filter(|c| c.status != CellStatus::Generated) {
        println!("  {} skipped: {}", c.id, c.reason.as_deref().unwrap_or(""));
    }
    out.finish(
        "generate",
        seed,
        &cfg,
        SweepExtra {
            n_cells: cells.len(),
            n_generated,
            cells,
        },
    )?;
    Ok(Status::Ok)
}
