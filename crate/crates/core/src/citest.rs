//! Dependence checks among items `X`, labels `Y` and bags `B`.
//!
//! `Y ⊥ B` uses Pearson's chi-square on the bag/label contingency table.
//! The four tests involving `X` compare regression trees with and without
//! the predictor of interest over repeated random half splits (the
//! fast conditional independence test idea): if adding the predictor lowers
//! held-out error consistently, the variables are dependent.

use ndarray::{Array2, Axis};
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::dataset::{LlpInstance, Variant};
use crate::error::{Error, Result};
use crate::{par, rng, special};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum TestName {
    #[serde(rename = "Y_indep_B")]
    YIndepB,
    #[serde(rename = "X_indep_B")]
    XIndepB,
    #[serde(rename = "X_indep_Y_given_B")]
    XIndepYGivenB,
    #[serde(rename = "X_indep_B_given_Y")]
    XIndepBGivenY,
    #[serde(rename = "Y_indep_B_given_X")]
    YIndepBGivenX,
}

impl TestName {
    /// Order used in reports and variant patterns.
    pub const ALL: [TestName; 5] = [
        TestName::YIndepB,
        TestName::XIndepB,
        TestName::XIndepYGivenB,
        TestName::XIndepBGivenY,
        TestName::YIndepBGivenX,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            TestName::YIndepB => "Y_indep_B",
            TestName::XIndepB => "X_indep_B",
            TestName::XIndepYGivenB => "X_indep_Y_given_B",
            TestName::XIndepBGivenY => "X_indep_B_given_Y",
            TestName::YIndepBGivenX => "Y_indep_B_given_X",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Decision {
    Independent,
    Dependent,
}

impl Decision {
    pub fn at(p_value: f64, alpha: f64) -> Self {
        if p_value < alpha {
            Decision::Dependent
        } else {
            Decision::Independent
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TestOutcome {
    pub name: TestName,
    pub p_value: f64,
    pub statistic: f64,
    pub decision: Decision,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum InferredVariant {
    Naive,
    Simple,
    Intermediate,
    Hard,
    Unrecognized,
}

impl From<Variant> for InferredVariant {
    fn from(v: Variant) -> Self {
        match v {
            Variant::Naive => InferredVariant::Naive,
            Variant::Simple => InferredVariant::Simple,
            Variant::Intermediate => InferredVariant::Intermediate,
            Variant::Hard => InferredVariant::Hard,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VariantReport {
    pub alpha: f64,
    pub tests: Vec<TestOutcome>,
    pub inferred_variant: InferredVariant,
}

/// Expected decisions per variant, in [`TestName::ALL`] order.
pub fn variant_pattern(v: Variant) -> [Decision; 5] {
    use Decision::{Dependent as D, Independent as I};
    match v {
        Variant::Naive => [I, I, D, I, I],
        Variant::Simple => [D, D, D, I, D],
        Variant::Intermediate => [D, D, D, D, I],
        Variant::Hard => [D, D, D, D, D],
    }
}

/// The variant whose pattern equals `decisions`, if any.
pub fn infer_variant(decisions: &[Decision; 5]) -> InferredVariant {
    Variant::ALL
        .into_iter()
        .find(|&v| variant_pattern(v) == *decisions)
        .map_or(InferredVariant::Unrecognized, InferredVariant::from)
}

/// Pearson chi-square test of independence on an `L x C` table of counts.
/// Returns `(statistic, dof, p_value)`.
pub fn chi_square_counts(table: &Array2<usize>) -> Result<(f64, f64, f64)> {
    let (l, c) = table.dim();
    if l < 2 || c < 2 {
        return Err(Error::DegenerateTest(format!(
            "{l}x{c} table has no degrees of freedom"
        )));
    }
    let n = table.sum() as f64;
    let rows: Vec<f64> = table.sum_axis(Axis(1)).iter().map(|&v| v as f64).collect();
    let cols: Vec<f64> = table.sum_axis(Axis(0)).iter().map(|&v| v as f64).collect();
    let mut stat = 0.0;
    for i in 0..l {
        for j in 0..c {
            let e = rows[i] * cols[j] / n;
            if e <= 0.0 {
                return Err(Error::DegenerateTest(format!(
                    "expected count 0 in cell ({i}, {j})"
                )));
            }
            let d = table[[i, j]] as f64 - e;
            stat += d * d / e;
        }
    }
    let dof = ((l - 1) * (c - 1)) as f64;
    Ok((stat, dof, special::chi2_sf(stat, dof)))
}

/// Chi-square test of `Y ⊥ B` on the instance's bag/label table.
pub fn chi_square_yb(inst: &LlpInstance, alpha: f64) -> Result<TestOutcome> {
    let (statistic, _, p_value) = chi_square_counts(&inst.contingency())?;
    Ok(TestOutcome {
        name: TestName::YIndepB,
        p_value,
        statistic,
        decision: Decision::at(p_value, alpha),
    })
}

/// How held-out errors are turned into a paired t-test.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Aggregation {
    /// One paired observation per split: the two arms' mean held-out errors.
    SplitMeans,
    /// One paired observation per item: its error difference averaged over
    /// the splits that held it out.
    ItemMeans,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CiConfig {
    pub n_splits: usize,
    pub max_depth: usize,
    /// Minimum leaf size; capped at a twentieth of the sample (at least 5)
    /// so small samples still get split.
    pub min_leaf: usize,
    pub aggregation: Aggregation,
}

impl Default for CiConfig {
    fn default() -> Self {
        Self {
            n_splits: 32,
            max_depth: 8,
            min_leaf: 100,
            aggregation: Aggregation::ItemMeans,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TreeConfig {
    pub max_depth: usize,
    pub min_leaf: usize,
}

#[derive(Debug, Clone)]
enum Node {
    Leaf(Vec<f64>),
    Split {
        feature: usize,
        threshold: f64,
        left: usize,
        right: usize,
    },
}

/// Multi-output CART regression tree with squared-error splits.
#[derive(Debug, Clone)]
pub struct RegressionTree {
    nodes: Vec<Node>,
}

impl RegressionTree {
    /// Fits on the rows `rows` of `x` / `y`.
    pub fn fit(x: &Array2<f64>, y: &Array2<f64>, rows: &[usize], cfg: TreeConfig) -> Self {
        let mut tree = RegressionTree { nodes: Vec::new() };
        let mut rows = rows.to_vec();
        tree.grow(x, y, &mut rows, 0, cfg);
        tree
    }

    fn grow(
        &mut self,
        x: &Array2<f64>,
        y: &Array2<f64>,
        rows: &mut [usize],
        depth: usize,
        cfg: TreeConfig,
    ) -> usize {
        let id = self.nodes.len();
        self.nodes.push(Node::Leaf(mean_rows(y, rows)));
        if depth >= cfg.max_depth || rows.len() < 2 * cfg.min_leaf.max(1) {
            return id;
        }
        let Some((feature, threshold)) = best_split(x, y, rows, cfg.min_leaf.max(1)) else {
            return id;
        };
        let mut k = 0;
        for i in 0..rows.len() {
            if x[[rows[i], feature]] <= threshold {
                rows.swap(i, k);
                k += 1;
            }
        }
        let (lo, hi) = rows.split_at_mut(k);
        let left = self.grow(x, y, lo, depth + 1, cfg);
        let right = self.grow(x, y, hi, depth + 1, cfg);
        self.nodes[id] = Node::Split {
            feature,
            threshold,
            left,
            right,
        };
        id
    }

    pub fn predict_row(&self, row: ndarray::ArrayView1<f64>) -> &[f64] {
        let mut id = 0;
        loop {
            match &self.nodes[id] {
                Node::Leaf(v) => return v,
                Node::Split {
                    feature,
                    threshold,
                    left,
                    right,
                } => {
                    id = if row[*feature] <= *threshold {
                        *left
                    } else {
                        *right
                    }
                }
            }
        }
    }

    pub fn n_leaves(&self) -> usize {
        self.nodes
            .iter()
            .filter(|n| matches!(n, Node::Leaf(_)))
            .count()
    }

    /// Squared error of row `r`, averaged across outputs.
    pub fn sq_error(&self, x: &Array2<f64>, y: &Array2<f64>, r: usize) -> f64 {
        let pred = self.predict_row(x.row(r));
        pred.iter()
            .zip(y.row(r))
            .map(|(p, t)| (p - t) * (p - t))
            .sum::<f64>()
            / y.ncols() as f64
    }

    /// Mean squared error over `rows`, averaged across outputs.
    pub fn mse(&self, x: &Array2<f64>, y: &Array2<f64>, rows: &[usize]) -> f64 {
        let k = y.ncols();
        let mut total = 0.0;
        for &r in rows {
            let pred = self.predict_row(x.row(r));
            for j in 0..k {
                let d = pred[j] - y[[r, j]];
                total += d * d;
            }
        }
        total / (rows.len() * k) as f64
    }
}

fn mean_rows(y: &Array2<f64>, rows: &[usize]) -> Vec<f64> {
    let mut m = vec![0.0; y.ncols()];
    for &r in rows {
        for (j, v) in m.iter_mut().enumerate() {
            *v += y[[r, j]];
        }
    }
    let n = rows.len().max(1) as f64;
    m.iter_mut().for_each(|v| *v /= n);
    m
}

fn best_split(
    x: &Array2<f64>,
    y: &Array2<f64>,
    rows: &[usize],
    min_leaf: usize,
) -> Option<(usize, f64)> {
    let n = rows.len();
    let k = y.ncols();
    let mut total = vec![0.0; k];
    for &r in rows {
        for j in 0..k {
            total[j] += y[[r, j]];
        }
    }
    // minimizing SSE is maximizing sum_j (S_L^2 / n_L + S_R^2 / n_R)
    let parent: f64 = total.iter().map(|s| s * s).sum::<f64>() / n as f64;
    let mut best_gain = 1e-12;
    let mut best = None;
    let mut order = rows.to_vec();
    let mut left = vec![0.0; k];
    for f in 0..x.ncols() {
        order.sort_by(|&a, &b| x[[a, f]].total_cmp(&x[[b, f]]));
        left.iter_mut().for_each(|v| *v = 0.0);
        for i in 0..n - 1 {
            let r = order[i];
            for j in 0..k {
                left[j] += y[[r, j]];
            }
            let nl = i + 1;
            if nl < min_leaf || n - nl < min_leaf {
                continue;
            }
            let (a, b) = (x[[r, f]], x[[order[i + 1], f]]);
            if a == b {
                continue;
            }
            let mut score = 0.0;
            for j in 0..k {
                let sr = total[j] - left[j];
                score += left[j] * left[j] / nl as f64 + sr * sr / (n - nl) as f64;
            }
            let gain = score - parent;
            if gain > best_gain {
                best_gain = gain;
                best = Some((f, a + (b - a) / 2.0));
            }
        }
    }
    best
}

/// Column-wise concatenation.
fn hstack(a: &Array2<f64>, b: &Array2<f64>) -> Array2<f64> {
    ndarray::concatenate(Axis(1), &[a.view(), b.view()]).expect("equal row counts")
}

/// One-hot encoding of `values` in `0..k`.
pub fn one_hot(values: &[usize], k: usize) -> Array2<f64> {
    let mut out = Array2::zeros((values.len(), k));
    for (i, &v) in values.iter().enumerate() {
        out[[i, v]] = 1.0;
    }
    out
}

/// Tests whether `predictors` help predict `target` beyond `conditioning`.
///
/// Over `cfg.n_splits` random half splits, a tree on `[conditioning,
/// predictors]` and a tree on `conditioning` alone are fitted on one half and
/// scored on the other. Without conditioning, the reduced model uses a
/// row-permuted copy of the predictors. The p-value is that of a one-sided
/// paired t-test on the error differences (reduced minus full), taken per
/// split or per item according to `cfg.aggregation`.
///
/// Split means are correlated because the splits overlap, which inflates
/// the size of the split-level test; per-item means do not share that
/// problem.
pub fn predictive_ci_test(
    name: TestName,
    target: &Array2<f64>,
    predictors: &Array2<f64>,
    conditioning: Option<&Array2<f64>>,
    alpha: f64,
    cfg: &CiConfig,
    seed: u64,
) -> Result<TestOutcome> {
    let n = target.nrows();
    if predictors.nrows() != n || conditioning.is_some_and(|c| c.nrows() != n) {
        return Err(Error::DimensionMismatch {
            expected: n,
            got: predictors.nrows(),
        });
    }
    if cfg.n_splits < 8 {
        return Err(Error::InvalidArgument(format!(
            "n_splits = {} < 8",
            cfg.n_splits
        )));
    }
    if n < 4 {
        return Err(Error::DegenerateTest(format!("{n} items")));
    }
    let first = target.row(0);
    if target.rows().into_iter().all(|r| r == first) {
        return Err(Error::DegenerateTest("constant target".into()));
    }
    let full_cond = conditioning.map(|c| hstack(c, predictors));
    let tree_cfg = TreeConfig {
        max_depth: cfg.max_depth,
        min_leaf: cfg.min_leaf.min((n / 20).max(5)),
    };
    let diffs = par::map_range(cfg.n_splits, |s| {
        let mut r = rng::rng(rng::derive(seed, s as u64));
        let mut perm: Vec<usize> = (0..n).collect();
        perm.shuffle(&mut r);
        let (train, eval) = perm.split_at(n / 2);
        let (full, reduced) = match (&full_cond, conditioning) {
            (Some(full), Some(cond)) => (full.clone(), cond.clone()),
            _ => {
                let mut shuffled: Vec<usize> = (0..n).collect();
                shuffled.shuffle(&mut r);
                (predictors.clone(), predictors.select(Axis(0), &shuffled))
            }
        };
        let full_tree = RegressionTree::fit(&full, target, train, tree_cfg);
        let red_tree = RegressionTree::fit(&reduced, target, train, tree_cfg);
        eval.iter()
            .map(|&i| {
                (
                    i,
                    red_tree.sq_error(&reduced, target, i) - full_tree.sq_error(&full, target, i),
                )
            })
            .collect::<Vec<_>>()
    });
    let diffs: Vec<f64> = match cfg.aggregation {
        Aggregation::SplitMeans => diffs
            .iter()
            .map(|d| d.iter().map(|(_, v)| v).sum::<f64>() / d.len() as f64)
            .collect(),
        Aggregation::ItemMeans => {
            let mut sum = vec![0.0; n];
            let mut count = vec![0usize; n];
            for (i, v) in diffs.iter().flatten() {
                sum[*i] += v;
                count[*i] += 1;
            }
            sum.iter()
                .zip(&count)
                .filter(|(_, &c)| c > 0)
                .map(|(s, &c)| s / c as f64)
                .collect()
        }
    };
    let (t, p_value) = paired_t_one_sided(&diffs);
    Ok(TestOutcome {
        name,
        p_value,
        statistic: t,
        decision: Decision::at(p_value, alpha),
    })
}

/// `(t, p)` for `H0: mean(d) <= 0` against `mean(d) > 0`.
fn paired_t_one_sided(d: &[f64]) -> (f64, f64) {
    let n = d.len() as f64;
    let mean = d.iter().sum::<f64>() / n;
    let var = d.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1.0);
    let se = (var / n).sqrt();
    if se == 0.0 {
        return if mean > 0.0 {
            (f64::INFINITY, 0.0)
        } else {
            (0.0, 1.0)
        };
    }
    let t = mean / se;
    (t, special::student_t_sf(t, n - 1.0))
}

/// Runs the five tests on `inst` and matches the decisions against the
/// variant patterns.
///
/// When a test conditions on a categorical variable, `X` is the target and
/// the trees reduce to comparing stratum means (`X ⊥ Y | B`, `X ⊥ B | Y`).
/// Otherwise the bag indicator is the target: `X ⊥ B` predicts `B` from
/// `X`, and `Y ⊥ B | X` predicts `B` from `Y` given `X`.
pub fn verify_variant(
    inst: &LlpInstance,
    alpha: f64,
    cfg: &CiConfig,
    seed: u64,
) -> Result<VariantReport> {
    let x = inst.features();
    let y = one_hot(&inst.labels(), inst.n_classes());
    let b = one_hot(inst.bag_ids(), inst.n_bags());
    let s = |k: u64| rng::derive(seed, k);
    let tests = vec![
        chi_square_yb(inst, alpha)?,
        predictive_ci_test(TestName::XIndepB, &b, &x, None, alpha, cfg, s(1))?,
        predictive_ci_test(TestName::XIndepYGivenB, &x, &y, Some(&b), alpha, cfg, s(2))?,
        predictive_ci_test(TestName::XIndepBGivenY, &x, &b, Some(&y), alpha, cfg, s(3))?,
        predictive_ci_test(TestName::YIndepBGivenX, &b, &y, Some(&x), alpha, cfg, s(4))?,
    ];
    let decisions: [Decision; 5] = std::array::from_fn(|i| tests[i].decision);
    Ok(VariantReport {
        alpha,
        inferred_variant: infer_variant(&decisions),
        tests,
    })
}
