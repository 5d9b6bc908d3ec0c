//! `verify`: run the five dependence tests on an instance and compare the
//! inferred variant with the one in its recipe.

use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::Args;
use llp_core::citest::{verify_variant, InferredVariant};
use llp_core::dataset::{read_instance, LlpInstance};
use serde::Serialize;

use crate::config::RunConfig;
use crate::output::OutDir;
use crate::Status;

#[derive(Debug, Args)]
pub struct VerifyArgs {
    /// Instance directory (with instance.csv and instance.json) or table path.
    #[arg(long)]
    instance: Option<PathBuf>,
    /// Significance level of every test.
    #[arg(long)]
    alpha: Option<f64>,
}

/// Table and sidecar paths for an instance given as a directory or a CSV file.
pub fn instance_paths(path: &Path) -> (PathBuf, PathBuf) {
    if path.is_dir() {
        (path.join("instance.csv"), path.join("instance.json"))
    } else {
        (path.to_path_buf(), path.with_extension("json"))
    }
}

pub fn load_instance(path: &Path) -> Result<LlpInstance> {
    let (table, sidecar) = instance_paths(path);
    read_instance(&table, &sidecar).with_context(|| format!("loading instance {}", path.display()))
}

#[derive(Serialize)]
struct VerifyExtra {
    expected: InferredVariant,
    inferred: InferredVariant,
    matches: bool,
}

pub fn run(args: VerifyArgs, run_cfg: RunConfig, out_dir: &Path) -> Result<Status> {
    let mut cfg = run_cfg.verify.clone();
    if let Some(p) = args.instance {
        cfg.instance = Some(p);
    }
    if let Some(a) = args.alpha {
        cfg.alpha = a;
    }
    if !(cfg.alpha > 0.0 && cfg.alpha < 1.0) {
        bail!("alpha {} outside (0, 1)", cfg.alpha);
    }
    let Some(path) = cfg.instance.clone() else {
        bail!("no instance given: pass --instance <dir>");
    };
    let inst = load_instance(&path)?;
    let report = verify_variant(&inst, cfg.alpha, &cfg.tests, run_cfg.seed)?;
    let expected = InferredVariant::from(inst.spec().variant);
    let matches = report.inferred_variant == expected;

    let mut out = OutDir::create(out_dir)?;
    out.write_json("variant_report.json", &report)?;
    for t in &report.tests {
        println!(
            "{:<12} p = {:<12.6} {:?}",
            t.name.as_str(),
            t.p_value,
            t.decision
        );
    }
    println!(
        "expected {expected:?}, inferred {:?}",
        report.inferred_variant
    );
    out.finish(
        "verify",
        run_cfg.seed,
        &cfg,
        VerifyExtra {
            expected,
            inferred: report.inferred_variant,
            matches,
        },
    )?;
    Ok(if matches {
        Status::Ok
    } else {
        Status::Mismatch
    })
}
