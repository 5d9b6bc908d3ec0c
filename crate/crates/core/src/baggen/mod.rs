//! Bag assignment for the four dependence structures.
//!
//! Every generator turns a conditional table `Pr(B | .)` into assignments,
//! either by largest-remainder rounding inside each stratum (`Exact`) or by
//! an independent draw per item (`Sampled`).

mod ipf;
mod pgd;
pub mod regimes;

use std::sync::Arc;

use ndarray::{Array2, Array3, Axis};
use rand::seq::SliceRandom;
use rand::Rng as _;
use rand_distr::{weighted::WeightedIndex, Distribution};
use serde::{Deserialize, Serialize};

pub use ipf::{ipf_fit, IpfConfig, IpfReport, IpfTargets, JointTable3D};
pub use pgd::{
    descend_clip_renormalize, frobenius_residual, pgd_solve, project_rows_to_simplex,
    refine_simplex, PgdConfig, PgdSolution,
};

use crate::cluster::{cluster_label_joint, kmeans, Clustering, KMeansConfig};
use crate::dataset::{
    array_to_rows, largest_remainder, AssignmentMode, BaseDataset, GenSpec, LlpInstance,
    StochasticMatrix, Variant,
};
use crate::error::{Error, Result};
use crate::rng;

const ASSIGN_STREAM: u64 = 1;
const PGD_STREAM: u64 = 2;
const IPF_STREAM: u64 = 3;
const KMEANS_STREAM: u64 = 4;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum RuleKind {
    ByConstant,
    ByLabel,
    ByCluster,
    ByClusterAndLabel,
}

/// Conditional bag distribution used for assignment.
///
/// Rows are indexed by nothing (one row), label, cluster, or
/// `cluster * n_classes + label`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AssignmentRule {
    pub kind: RuleKind,
    pub table: StochasticMatrix,
}

impl AssignmentRule {
    pub fn row_index(&self, cluster: usize, label: usize, n_classes: usize) -> usize {
        match self.kind {
            RuleKind::ByConstant => 0,
            RuleKind::ByLabel => label,
            RuleKind::ByCluster => cluster,
            RuleKind::ByClusterAndLabel => cluster * n_classes + label,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GenConfig {
    pub pgd: PgdConfig,
    pub ipf: IpfConfig,
    pub kmeans: KMeansConfig,
    /// Intermediate residual above which an infeasibility warning is recorded.
    pub residual_threshold: f64,
    /// Distribution of the entries of the initial Hard joint table.
    pub hard_init: HardInit,
}

impl Default for GenConfig {
    fn default() -> Self {
        Self {
            pgd: PgdConfig::default(),
            ipf: IpfConfig::default(),
            kmeans: KMeansConfig::default(),
            residual_threshold: 0.05,
            hard_init: HardInit::default(),
        }
    }
}

/// Entry distribution for the random Hard joint table before fitting.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", tag = "kind")]
pub enum HardInit {
    /// Uniform on `(low, high]`.
    Uniform { low: f64, high: f64 },
    /// `exp(sigma * N(0, 1))`.
    LogNormal { sigma: f64 },
}

impl Default for HardInit {
    fn default() -> Self {
        HardInit::Uniform {
            low: 0.0,
            high: 1.0,
        }
    }
}

impl HardInit {
    fn validate(&self) -> Result<()> {
        let ok = match *self {
            HardInit::Uniform { low, high } => low >= 0.0 && high > low && high.is_finite(),
            HardInit::LogNormal { sigma } => sigma >= 0.0 && sigma.is_finite(),
        };
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidArgument(format!(
                "invalid Hard initialization {self:?}"
            )))
        }
    }

    fn draw(&self, r: &mut rng::Rng) -> f64 {
        match *self {
            // (0, 1] draws keep every entry positive
            HardInit::Uniform { low, high } => low + (high - low) * (1.0 - r.random::<f64>()),
            HardInit::LogNormal { sigma } => {
                let z: f64 = rand_distr::StandardNormal.sample(r);
                (sigma * z).exp()
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenWarning {
    pub code: String,
    pub message: String,
}

pub const WARN_INFEASIBLE_RESIDUAL: &str = "infeasible_residual";
pub const WARN_IPF_NOT_CONVERGED: &str = "ipf_not_converged";

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PgdReport {
    pub residual: f64,
    pub clip_residual: f64,
    pub iterations: usize,
    pub restart: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenerationReport {
    pub variant: Variant,
    pub rule: AssignmentRule,
    pub target_sizes: Vec<usize>,
    pub realized_sizes: Vec<usize>,
    pub pgd: Option<PgdReport>,
    pub ipf: Option<IpfReport>,
    /// `(cluster, label)` strata whose fitted mass was zero although they hold items;
    /// their items were assigned with `Pr(B | Y)` instead.
    pub redistributed_strata: Vec<[usize; 2]>,
    pub warnings: Vec<GenWarning>,
}

impl GenerationReport {
    pub fn has_warning(&self, code: &str) -> bool {
        self.warnings.iter().any(|w| w.code == code)
    }
}

#[derive(Debug, Clone)]
pub struct Generated {
    pub instance: LlpInstance,
    pub report: GenerationReport,
}

/// Generates the variant named in `spec`. Cluster-based variants use
/// `clustering` when given, otherwise k-means is run with a seed derived
/// from `spec.seed`.
pub fn generate(
    base: Arc<BaseDataset>,
    spec: &GenSpec,
    clustering: Option<&Clustering>,
    cfg: &GenConfig,
) -> Result<Generated> {
    spec.validate(base.n_items(), base.n_classes())?;
    match spec.variant {
        Variant::Naive => generate_naive(base, spec),
        Variant::Simple => generate_simple(base, spec),
        Variant::Intermediate | Variant::Hard => {
            let owned;
            let cl = match clustering {
                Some(c) => c,
                None => {
                    owned = kmeans(
                        &base,
                        spec.n_clusters,
                        rng::derive(spec.seed, KMEANS_STREAM),
                        cfg.kmeans,
                    )?;
                    &owned
                }
            };
            if spec.variant == Variant::Intermediate {
                generate_intermediate(base, spec, cl, cfg)
            } else {
                generate_hard(base, spec, cl, cfg)
            }
        }
    }
}

fn expect_variant(spec: &GenSpec, v: Variant) -> Result<()> {
    if spec.variant != v {
        return Err(Error::InvalidSpec(format!(
            "expected a {v} spec, got {}",
            spec.variant
        )));
    }
    Ok(())
}

fn check_clustering(base: &BaseDataset, spec: &GenSpec, cl: &Clustering) -> Result<()> {
    if cl.assignments.len() != base.n_items() {
        return Err(Error::DimensionMismatch {
            expected: base.n_items(),
            got: cl.assignments.len(),
        });
    }
    if cl.n_clusters() != spec.n_clusters {
        return Err(Error::InvalidSpec(format!(
            "clustering has {} clusters, spec asks for {}",
            cl.n_clusters(),
            spec.n_clusters
        )));
    }
    Ok(())
}

/// Assigns each stratum's items to bags following `probs[stratum]`.
fn assign_strata(
    strata: &[Vec<usize>],
    probs: &Array2<f64>,
    mode: AssignmentMode,
    n_items: usize,
    seed: u64,
) -> Result<Vec<usize>> {
    let mut r = rng::rng(rng::derive(seed, ASSIGN_STREAM));
    let mut bag_ids = vec![0usize; n_items];
    for (s, items) in strata.iter().enumerate() {
        if items.is_empty() {
            continue;
        }
        let row = probs.row(s);
        match mode {
            AssignmentMode::Exact => {
                let targets: Vec<f64> = row.iter().map(|p| p * items.len() as f64).collect();
                let counts = largest_remainder(&targets, items.len());
                let mut shuffled = items.clone();
                shuffled.shuffle(&mut r);
                deal(&shuffled, &counts, &mut bag_ids);
            }
            AssignmentMode::Sampled => {
                let dist = WeightedIndex::new(row.iter().copied())
                    .map_err(|e| Error::Numerical(format!("stratum {s}: {e}")))?;
                for &i in items {
                    bag_ids[i] = dist.sample(&mut r);
                }
            }
        }
    }
    Ok(bag_ids)
}

fn deal(items: &[usize], counts: &[usize], bag_ids: &mut [usize]) {
    let mut k = 0;
    for (b, &n) in counts.iter().enumerate() {
        for &i in &items[k..k + n] {
            bag_ids[i] = b;
        }
        k += n;
    }
}

fn finish(
    base: Arc<BaseDataset>,
    spec: &GenSpec,
    bag_ids: Vec<usize>,
    rule: AssignmentRule,
    pgd: Option<PgdReport>,
    ipf: Option<IpfReport>,
    redistributed_strata: Vec<[usize; 2]>,
    warnings: Vec<GenWarning>,
) -> Result<Generated> {
    let instance = LlpInstance::new(base, bag_ids, spec.clone())?;
    let report = GenerationReport {
        variant: spec.variant,
        rule,
        target_sizes: spec.bag_sizes.clone(),
        realized_sizes: instance.realized_sizes().to_vec(),
        pgd,
        ipf,
        redistributed_strata,
        warnings,
    };
    Ok(Generated { instance, report })
}

/// Bags drawn independently of items and labels with `Pr(B = l) = s_l / N`.
/// The spec's proportion matrix plays no part.
pub fn generate_naive(base: Arc<BaseDataset>, spec: &GenSpec) -> Result<Generated> {
    expect_variant(spec, Variant::Naive)?;
    spec.validate(base.n_items(), base.n_classes())?;
    let n = base.n_items();
    let table = Array2::from_shape_fn((1, spec.n_bags), |(_, b)| {
        spec.bag_sizes[b] as f64 / n as f64
    });
    let rule = AssignmentRule {
        kind: RuleKind::ByConstant,
        table: StochasticMatrix::new(table)?,
    };
    let bag_ids = match spec.assignment_mode {
        AssignmentMode::Exact => {
            let mut r = rng::rng(rng::derive(spec.seed, ASSIGN_STREAM));
            let mut perm: Vec<usize> = (0..n).collect();
            perm.shuffle(&mut r);
            let mut ids = vec![0; n];
            deal(&perm, &spec.bag_sizes, &mut ids);
            ids
        }
        AssignmentMode::Sampled => {
            let all: Vec<usize> = (0..n).collect();
            assign_strata(
                &[all],
                rule.table.as_array(),
                AssignmentMode::Sampled,
                n,
                spec.seed,
            )?
        }
    };
    finish(
        base,
        spec,
        bag_ids,
        rule,
        None,
        None,
        Vec::new(),
        Vec::new(),
    )
}

/// Integer `(bag, class)` counts for Simple generation: per-bag
/// largest-remainder rounding of `p_{l,c} s_l`, then unit moves inside bags
/// until every class total equals its item count.
pub fn simple_count_targets(spec: &GenSpec, class_counts: &[usize]) -> Result<Array2<usize>> {
    let p = spec.proportions_array()?;
    let (l, c) = p.dim();
    let expected = Array2::from_shape_fn((l, c), |(b, k)| p[[b, k]] * spec.bag_sizes[b] as f64);
    check_simple_feasibility(&expected, class_counts)?;
    let mut counts = Array2::<usize>::zeros((l, c));
    for b in 0..l {
        let row = largest_remainder(&expected.row(b).to_vec(), spec.bag_sizes[b]);
        for k in 0..c {
            counts[[b, k]] = row[k];
        }
    }
    loop {
        let col: Vec<usize> = counts.sum_axis(Axis(0)).to_vec();
        let Some(over) = (0..c).find(|&k| col[k] > class_counts[k]) else {
            break;
        };
        let under = (0..c)
            .find(|&k| col[k] < class_counts[k])
            .expect("totals agree, so a surplus implies a deficit");
        // move one item from `over` to `under` in the bag where it hurts least
        let b = (0..l)
            .filter(|&b| counts[[b, over]] > 0)
            .max_by(|&x, &y| {
                let gain = |b: usize| {
                    (expected[[b, under]] - counts[[b, under]] as f64)
                        - (expected[[b, over]] - counts[[b, over]] as f64)
                };
                gain(x).total_cmp(&gain(y)).then(y.cmp(&x))
            })
            .expect("class with surplus has a positive count");
        counts[[b, over]] -= 1;
        counts[[b, under]] += 1;
    }
    Ok(counts)
}

fn check_simple_feasibility(expected: &Array2<f64>, class_counts: &[usize]) -> Result<()> {
    let (l, c) = expected.dim();
    for b in 0..l {
        for k in 0..c {
            if expected[[b, k]] > class_counts[k] as f64 + 1e-9 {
                return Err(Error::Infeasible {
                    bag: Some(b),
                    class: k,
                    reason: format!(
                        "bag needs {:.1} items of class {k}, only {} exist (Pr(B|Y) > 1)",
                        expected[[b, k]],
                        class_counts[k]
                    ),
                });
            }
        }
    }
    let slack = 0.5 * l as f64;
    for k in 0..c {
        let total: f64 = expected.column(k).sum();
        if (total - class_counts[k] as f64).abs() > slack {
            return Err(Error::Infeasible {
                bag: None,
                class: k,
                reason: format!(
                    "bags need {total:.1} items of class {k}, dataset has {} (slack {slack})",
                    class_counts[k]
                ),
            });
        }
    }
    Ok(())
}

/// Bags depend on labels only, `Pr(B = l | Y = c) = p_{l,c} (s_l / N) / Pr(Y = c)`.
pub fn generate_simple(base: Arc<BaseDataset>, spec: &GenSpec) -> Result<Generated> {
    expect_variant(spec, Variant::Simple)?;
    spec.validate(base.n_items(), base.n_classes())?;
    let class_counts = base.class_counts();
    let c = base.n_classes();
    let l = spec.n_bags;
    let counts = simple_count_targets(spec, &class_counts)?;
    let p = spec.proportions_array()?;
    let mut table = Array2::from_shape_fn((c, l), |(k, b)| {
        if class_counts[k] == 0 {
            spec.bag_sizes[b] as f64 / base.n_items() as f64
        } else {
            p[[b, k]] * spec.bag_sizes[b] as f64 / class_counts[k] as f64
        }
    });
    for mut row in table.axis_iter_mut(Axis(0)) {
        let s = row.sum();
        row /= s;
    }
    let rule = AssignmentRule {
        kind: RuleKind::ByLabel,
        table: StochasticMatrix::new(table)?,
    };
    let mut by_class = vec![Vec::new(); c];
    for (i, &y) in base.labels().iter().enumerate() {
        by_class[y].push(i);
    }
    let n = base.n_items();
    let bag_ids = match spec.assignment_mode {
        AssignmentMode::Exact => {
            let mut r = rng::rng(rng::derive(spec.seed, ASSIGN_STREAM));
            let mut ids = vec![0; n];
            for (k, items) in by_class.iter_mut().enumerate() {
                items.shuffle(&mut r);
                deal(items, &counts.column(k).to_vec(), &mut ids);
            }
            ids
        }
        AssignmentMode::Sampled => assign_strata(
            &by_class,
            rule.table.as_array(),
            AssignmentMode::Sampled,
            n,
            spec.seed,
        )?,
    };
    finish(
        base,
        spec,
        bag_ids,
        rule,
        None,
        None,
        Vec::new(),
        Vec::new(),
    )
}

/// `C x L` target joint `Pr(Y = c, B = l) = p_{l,c} s_l / N`.
pub fn target_label_bag_joint(spec: &GenSpec) -> Result<Array2<f64>> {
    let p = spec.proportions_array()?;
    let n: usize = spec.bag_sizes.iter().sum();
    Ok(Array2::from_shape_fn((p.ncols(), p.nrows()), |(k, b)| {
        p[[b, k]] * spec.bag_sizes[b] as f64 / n as f64
    }))
}

/// Bags depend on the item's cluster only; `Pr(B | Z)` solves the
/// row-stochastic least-squares problem `P_YB ~ P_YZ A`.
pub fn generate_intermediate(
    base: Arc<BaseDataset>,
    spec: &GenSpec,
    cl: &Clustering,
    cfg: &GenConfig,
) -> Result<Generated> {
    expect_variant(spec, Variant::Intermediate)?;
    spec.validate(base.n_items(), base.n_classes())?;
    check_clustering(&base, spec, cl)?;
    let p_yz = cluster_label_joint(cl, &base)?;
    let p_yb = target_label_bag_joint(spec)?;
    let sol = pgd_solve(&p_yz, &p_yb, &cfg.pgd, rng::derive(spec.seed, PGD_STREAM))?;
    let mut warnings = Vec::new();
    if sol.residual > cfg.residual_threshold {
        warnings.push(GenWarning {
            code: WARN_INFEASIBLE_RESIDUAL.into(),
            message: format!(
                "residual {:.4} exceeds {}; targets are outside the convex hull of cluster proportions",
                sol.residual, cfg.residual_threshold
            ),
        });
    }
    let mut strata = vec![Vec::new(); cl.n_clusters()];
    for (i, &z) in cl.assignments.iter().enumerate() {
        strata[z].push(i);
    }
    let bag_ids = assign_strata(
        &strata,
        sol.matrix.as_array(),
        spec.assignment_mode,
        base.n_items(),
        spec.seed,
    )?;
    let report = PgdReport {
        residual: sol.residual,
        clip_residual: sol.clip_residual,
        iterations: sol.iterations,
        restart: sol.restart,
    };
    let rule = AssignmentRule {
        kind: RuleKind::ByCluster,
        table: sol.matrix,
    };
    finish(
        base,
        spec,
        bag_ids,
        rule,
        Some(report),
        None,
        Vec::new(),
        warnings,
    )
}

/// Bags depend on cluster and label jointly through a randomly initialized
/// `Q x C x L` table fitted to the `(Z, Y)` and `(Y, B)` marginals.
pub fn generate_hard(
    base: Arc<BaseDataset>,
    spec: &GenSpec,
    cl: &Clustering,
    cfg: &GenConfig,
) -> Result<Generated> {
    expect_variant(spec, Variant::Hard)?;
    spec.validate(base.n_items(), base.n_classes())?;
    check_clustering(&base, spec, cl)?;
    cfg.hard_init.validate()?;
    let (q, c, l) = (cl.n_clusters(), base.n_classes(), spec.n_bags);
    let p_zy = cluster_label_joint(cl, &base)?.reversed_axes();
    let p_yb = target_label_bag_joint(spec)?;
    let mut r = rng::rng(rng::derive(spec.seed, IPF_STREAM));
    let mut init = Array3::from_shape_simple_fn((q, c, l), || cfg.hard_init.draw(&mut r));
    let total = init.sum();
    init /= total;
    let targets = IpfTargets::new(p_zy.to_owned(), p_yb.clone());
    let (fitted, ipf_report) = ipf_fit(&JointTable3D::new(init)?, &targets, &cfg.ipf)?;
    let mut warnings = Vec::new();
    if !ipf_report.converged {
        warnings.push(GenWarning {
            code: WARN_IPF_NOT_CONVERGED.into(),
            message: format!(
                "marginal deviation {:.2e} after {} sweeps",
                ipf_report.max_deviation, ipf_report.iterations
            ),
        });
    }
    let mut strata = vec![Vec::new(); q * c];
    for (i, (&z, &y)) in cl.assignments.iter().zip(base.labels()).enumerate() {
        strata[z * c + y].push(i);
    }
    let label_rows = {
        let mut t = p_yb.clone();
        for mut row in t.axis_iter_mut(Axis(0)) {
            let s = row.sum();
            if s > 0.0 {
                row /= s;
            } else {
                row.fill(1.0 / l as f64);
            }
        }
        t
    };
    let mut redistributed = Vec::new();
    let mut table = Array2::zeros((q * c, l));
    for z in 0..q {
        for y in 0..c {
            let row = match fitted.bag_conditional(z, y) {
                Some(row) => row,
                None => {
                    if !strata[z * c + y].is_empty() {
                        redistributed.push([z, y]);
                    }
                    label_rows.row(y).to_vec()
                }
            };
            for (b, v) in row.into_iter().enumerate() {
                table[[z * c + y, b]] = v;
            }
        }
    }
    let rule = AssignmentRule {
        kind: RuleKind::ByClusterAndLabel,
        table: StochasticMatrix::new(table)?,
    };
    let bag_ids = assign_strata(
        &strata,
        rule.table.as_array(),
        spec.assignment_mode,
        base.n_items(),
        spec.seed,
    )?;
    finish(
        base,
        spec,
        bag_ids,
        rule,
        None,
        Some(ipf_report),
        redistributed,
        warnings,
    )
}

/// Proportion rows of `spec` as nested vectors (for reports).
pub fn proportion_rows(a: &Array2<f64>) -> Vec<Vec<f64>> {
    array_to_rows(a)
}
