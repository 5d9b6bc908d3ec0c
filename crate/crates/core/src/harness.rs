//! Repeated train/test evaluation with label-free model selection, test F1
//! scores and Welch t-test best sets.
//!
//! One execution: split every bag into train and test items, recount the
//! training proportions from ground truth, grid-search hyperparameters on
//! the training bags, refit on all training bags and score F1 on the test
//! items.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::dataset::{train_test_split, LlpInstance};
use crate::error::{Error, Result};
use crate::learners::{fit, Algorithm, HyperGrid, Hyperparameters, LearnerConfig};
use crate::modelsel::{select, SelectionStrategy, StrategyKind};
use crate::special::student_t_two_sided;
use crate::{par, rng};

/// Binary F1 with class 1 positive; an undefined precision or recall counts as 0.
pub fn f1_binary(truth: &[usize], predicted: &[usize]) -> f64 {
    f1_for_class(truth, predicted, 1)
}

fn f1_for_class(truth: &[usize], predicted: &[usize], class: usize) -> f64 {
    let (mut tp, mut fp, mut fn_) = (0usize, 0usize, 0usize);
    for (&t, &p) in truth.iter().zip(predicted) {
        match (t == class, p == class) {
            (true, true) => tp += 1,
            (false, true) => fp += 1,
            (true, false) => fn_ += 1,
            _ => {}
        }
    }
    if tp == 0 {
        return 0.0;
    }
    2.0 * tp as f64 / (2 * tp + fp + fn_) as f64
}

/// Unweighted mean of per-class F1 over `n_classes` classes.
pub fn macro_f1(truth: &[usize], predicted: &[usize], n_classes: usize) -> f64 {
    (0..n_classes)
        .map(|c| f1_for_class(truth, predicted, c))
        .sum::<f64>()
        / n_classes as f64
}

/// Binary F1 for two classes, macro-F1 otherwise.
pub fn f1_score(truth: &[usize], predicted: &[usize], n_classes: usize) -> f64 {
    if n_classes == 2 {
        f1_binary(truth, predicted)
    } else {
        macro_f1(truth, predicted, n_classes)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BenchmarkConfig {
    pub n_executions: usize,
    pub train_fraction: f64,
    pub base_seed: u64,
    pub alpha: f64,
    /// Cells with a larger share of failed executions are flagged invalid.
    pub max_failure_rate: f64,
    pub learner: LearnerConfig,
}

impl Default for BenchmarkConfig {
    fn default() -> Self {
        Self {
            n_executions: 30,
            train_fraction: 0.75,
            base_seed: 0,
            alpha: 0.05,
            max_failure_rate: 0.2,
            learner: LearnerConfig::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Execution {
    pub index: usize,
    pub seed: u64,
    pub selected_hyperparameters: Option<Hyperparameters>,
    pub test_f1: Option<f64>,
    pub error: Option<String>,
}

/// One execution of the evaluation protocol.
#[allow(clippy::too_many_arguments)]
pub fn run_once(
    inst: &LlpInstance,
    algorithm: Algorithm,
    strategy: &SelectionStrategy,
    grid: &HyperGrid,
    train_fraction: f64,
    seed: u64,
    cfg: &LearnerConfig,
) -> Result<(Hyperparameters, f64)> {
    let (train, test) = train_test_split(inst, train_fraction, rng::derive(seed, 0))?;
    // training proportions are recounted from ground truth by the split
    let bags = train.bag_data();
    let chosen = select(algorithm, &bags, grid, strategy, rng::derive(seed, 1), cfg)?;
    let model = fit(
        algorithm,
        &bags,
        &chosen.best_hyperparameters,
        rng::derive(seed, 2),
        cfg,
    )?;
    let predicted = model.predict(&test.features())?;
    Ok((
        chosen.best_hyperparameters,
        f1_score(&test.labels(), &predicted, inst.n_classes()),
    ))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    /// All executions, failed ones included.
    pub count: usize,
    pub failed: usize,
    /// Mean and sample standard deviation over successful executions.
    pub mean: Option<f64>,
    pub std: Option<f64>,
}

impl Summary {
    pub fn of(executions: &[Execution]) -> Self {
        let ok: Vec<f64> = executions.iter().filter_map(|e| e.test_f1).collect();
        let mean = (!ok.is_empty()).then(|| ok.iter().sum::<f64>() / ok.len() as f64);
        let std = mean.filter(|_| ok.len() >= 2).map(|m| {
            (ok.iter().map(|v| (v - m).powi(2)).sum::<f64>() / (ok.len() - 1) as f64).sqrt()
        });
        Self {
            count: executions.len(),
            failed: executions.len() - ok.len(),
            mean,
            std,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchmarkRecord {
    pub dataset_id: String,
    pub algorithm: Algorithm,
    pub strategy: SelectionStrategy,
    pub executions: Vec<Execution>,
    pub summary: Summary,
    pub valid: bool,
}

impl BenchmarkRecord {
    pub fn f1_samples(&self) -> Vec<f64> {
        self.executions.iter().filter_map(|e| e.test_f1).collect()
    }
}

/// Seed of one execution, keyed by everything that identifies it.
pub fn execution_seed(
    base_seed: u64,
    dataset_id: &str,
    algorithm: Algorithm,
    strategy: StrategyKind,
    index: usize,
) -> u64 {
    rng::derive_key(
        base_seed,
        &[
            dataset_id,
            algorithm.name(),
            strategy.name(),
            &index.to_string(),
        ],
    )
}

/// `n_executions` executions for every (algorithm, strategy) pair.
pub fn run_benchmark(
    dataset_id: &str,
    inst: &LlpInstance,
    algorithms: &[Algorithm],
    strategies: &[SelectionStrategy],
    grid: &HyperGrid,
    cfg: &BenchmarkConfig,
) -> Result<Vec<BenchmarkRecord>> {
    if cfg.n_executions < 2 {
        return Err(Error::InvalidArgument(
            "at least two executions are needed".into(),
        ));
    }
    let mut kinds = BTreeSet::new();
    for s in strategies {
        if !kinds.insert(s.kind) {
            return Err(Error::InvalidArgument(format!(
                "strategy {} listed twice",
                s.kind.name()
            )));
        }
    }
    let cells: Vec<(Algorithm, &SelectionStrategy)> = algorithms
        .iter()
        .flat_map(|&a| strategies.iter().map(move |s| (a, s)))
        .collect();
    let n = cfg.n_executions;
    let seeds: Vec<u64> = (0..cells.len() * n)
        .map(|t| {
            execution_seed(
                cfg.base_seed,
                dataset_id,
                cells[t / n].0,
                cells[t / n].1.kind,
                t % n,
            )
        })
        .collect();
    if seeds.iter().collect::<BTreeSet<_>>().len() != seeds.len() {
        return Err(Error::Numerical("execution seed collision".into()));
    }
    let executions = par::map_range(cells.len() * n, |t| {
        let (algorithm, strategy) = cells[t / n];
        let seed = seeds[t];
        match run_once(
            inst,
            algorithm,
            strategy,
            grid,
            cfg.train_fraction,
            seed,
            &cfg.learner,
        ) {
            Ok((hp, f1)) => Execution {
                index: t % n,
                seed,
                selected_hyperparameters: Some(hp),
                test_f1: Some(f1),
                error: None,
            },
            Err(e) => Execution {
                index: t % n,
                seed,
                selected_hyperparameters: None,
                test_f1: None,
                error: Some(e.to_string()),
            },
        }
    });
    Ok(cells
        .iter()
        .zip(executions.chunks(n))
        .map(|(&(algorithm, strategy), ex)| {
            let summary = Summary::of(ex);
            let valid = (summary.failed as f64) <= cfg.max_failure_rate * summary.count as f64;
            BenchmarkRecord {
                dataset_id: dataset_id.to_string(),
                algorithm,
                strategy: strategy.clone(),
                executions: ex.to_vec(),
                summary,
                valid,
            }
        })
        .collect())
}

/// Welch two-sample two-sided t-test p-value.
///
/// With zero variance on both sides, equal means give 1 and unequal means 0.
pub fn welch_t_test(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() < 2 || b.len() < 2 {
        return Err(Error::InvalidArgument(
            "Welch t-test needs two samples per group".into(),
        ));
    }
    let stats = |x: &[f64]| {
        let n = x.len() as f64;
        let m = x.iter().sum::<f64>() / n;
        let v = x.iter().map(|v| (v - m).powi(2)).sum::<f64>() / (n - 1.0);
        (n, m, v)
    };
    let (na, ma, va) = stats(a);
    let (nb, mb, vb) = stats(b);
    let (sa, sb) = (va / na, vb / nb);
    let se2 = sa + sb;
    // constant samples up to rounding
    let tol = 1e-12 * ma.abs().max(mb.abs()).max(1.0);
    if se2.sqrt() <= tol {
        return Ok(if (ma - mb).abs() <= tol { 1.0 } else { 0.0 });
    }
    let t = (ma - mb) / se2.sqrt();
    let dof = se2 * se2 / (sa * sa / (na - 1.0) + sb * sb / (nb - 1.0));
    Ok(student_t_two_sided(t, dof))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BestSet {
    /// Group names by descending mean (ties by name).
    pub ranked: Vec<String>,
    pub means: BTreeMap<String, f64>,
    /// Groups not distinguishable from the top at `alpha`, in ranked order.
    pub best_set: Vec<String>,
    /// Top versus each other group.
    pub p_values: BTreeMap<String, f64>,
}

/// Ranks the groups by mean and keeps those whose Welch test against the
/// top has `p >= alpha`.
pub fn best_set(groups: &BTreeMap<String, Vec<f64>>, alpha: f64) -> Result<BestSet> {
    if groups.is_empty() {
        return Err(Error::InvalidArgument("no groups to compare".into()));
    }
    let means: BTreeMap<String, f64> = groups
        .iter()
        .map(|(k, v)| (k.clone(), v.iter().sum::<f64>() / v.len().max(1) as f64))
        .collect();
    let mut ranked: Vec<String> = groups.keys().cloned().collect();
    ranked.sort_by(|a, b| means[b].total_cmp(&means[a]).then(a.cmp(b)));
    let top = &ranked[0];
    let mut p_values = BTreeMap::new();
    let mut best = vec![top.clone()];
    if ranked.len() > 1 {
        for other in &ranked[1..] {
            let p = welch_t_test(&groups[top], &groups[other])?;
            if p >= alpha {
                best.push(other.clone());
            }
            p_values.insert(other.clone(), p);
        }
    }
    Ok(BestSet {
        ranked,
        means,
        best_set: best,
        p_values,
    })
}

/// Pools every algorithm's successful executions across strategies (and
/// across datasets, if the records span several) and compares the pools.
pub fn best_algorithm_set(records: &[BenchmarkRecord], alpha: f64) -> Result<BestSet> {
    let mut groups: BTreeMap<String, Vec<f64>> = BTreeMap::new();
    for r in records.iter().filter(|r| r.valid) {
        groups
            .entry(r.algorithm.name().to_string())
            .or_default()
            .extend(r.f1_samples());
    }
    best_set(&groups, alpha)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum StrategyGrouping {
    /// One comparison per algorithm.
    #[default]
    PerAlgorithm,
    /// One comparison with every algorithm's executions pooled per strategy.
    Pooled,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StrategyComparison {
    pub grouping: StrategyGrouping,
    /// Keyed by algorithm name, or `pooled`.
    pub sets: BTreeMap<String, BestSet>,
    /// `FB`, `SB` or `SB+FB` for each set, by the strategy families present.
    pub families: BTreeMap<String, String>,
}

/// Family label of a strategy best set: full-bag, split-bag or both.
pub fn family_label(best: &BestSet) -> String {
    let kinds: Vec<StrategyKind> = best
        .best_set
        .iter()
        .filter_map(|s| s.parse().ok())
        .collect();
    let full = kinds.iter().any(|k| !k.is_split_bag());
    let split = kinds.iter().any(|k| k.is_split_bag());
    match (split, full) {
        (true, true) => "SB+FB",
        (true, false) => "SB",
        (false, true) => "FB",
        (false, false) => "",
    }
    .to_string()
}

pub fn best_strategy_set(
    records: &[BenchmarkRecord],
    alpha: f64,
    grouping: StrategyGrouping,
) -> Result<StrategyComparison> {
    let mut by_key: BTreeMap<String, BTreeMap<String, Vec<f64>>> = BTreeMap::new();
    for r in records.iter().filter(|r| r.valid) {
        let key = match grouping {
            StrategyGrouping::PerAlgorithm => r.algorithm.name().to_string(),
            StrategyGrouping::Pooled => "pooled".to_string(),
        };
        by_key
            .entry(key)
            .or_default()
            .entry(r.strategy.kind.name().to_string())
            .or_default()
            .extend(r.f1_samples());
    }
    let mut sets = BTreeMap::new();
    let mut families = BTreeMap::new();
    for (key, groups) in by_key {
        let set = best_set(&groups, alpha)?;
        families.insert(key.clone(), family_label(&set));
        sets.insert(key, set);
    }
    Ok(StrategyComparison {
        grouping,
        sets,
        families,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Comparisons {
    pub algorithms: Option<BestSet>,
    pub strategies: Option<StrategyComparison>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchmarkReport {
    pub records: Vec<BenchmarkRecord>,
    pub comparisons: Comparisons,
}

impl BenchmarkReport {
    /// Assembles records with their comparisons. Comparisons that cannot be
    /// computed (for instance fewer than two successful runs) are left empty.
    pub fn new(records: Vec<BenchmarkRecord>, alpha: f64, grouping: StrategyGrouping) -> Self {
        let comparisons = Comparisons {
            algorithms: best_algorithm_set(&records, alpha).ok(),
            strategies: best_strategy_set(&records, alpha, grouping).ok(),
        };
        Self {
            records,
            comparisons,
        }
    }

    pub fn any_invalid(&self) -> bool {
        self.records.iter().any(|r| !r.valid)
    }
}

/// Tab-separated summary, one row per dataset, algorithm and strategy.
pub fn summary_table(records: &[BenchmarkRecord]) -> String {
    let mut out = String::from("dataset\talgorithm\tstrategy\tmean_f1\tstd_f1\tn\tfailed\tvalid\n");
    let fmt = |v: Option<f64>| v.map_or_else(|| "NA".to_string(), |x| format!("{x:.4}"));
    for r in records {
        out.push_str(&format!(
            "{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}\n",
            r.dataset_id,
            r.algorithm,
            r.strategy.kind.name(),
            fmt(r.summary.mean),
            fmt(r.summary.std),
            r.summary.count - r.summary.failed,
            r.summary.failed,
            r.valid
        ));
    }
    out
}
