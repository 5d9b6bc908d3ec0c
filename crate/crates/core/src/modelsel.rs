//! Label-free hyperparameter selection.
//!
//! Validation consumes only features, bag ids and bag proportions: every
//! training or validation sub-bag carries its parent bag's proportion row,
//! and a grid point is scored by the mean per-bag L1 distance between
//! predicted and given proportions.

use rand::seq::SliceRandom;
use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::dataset::BagData;
use crate::error::{Error, Result};
use crate::learners::{fit, Algorithm, HyperGrid, Hyperparameters, LearnerConfig};
use crate::{par, rng};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum StrategyKind {
    FullBagKFold,
    SplitBagKFold,
    SplitBagShuffle,
    SplitBagBootstrap,
}

impl StrategyKind {
    pub const ALL: [StrategyKind; 4] = [
        Self::FullBagKFold,
        Self::SplitBagKFold,
        Self::SplitBagShuffle,
        Self::SplitBagBootstrap,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Self::FullBagKFold => "full-bag-k-fold",
            Self::SplitBagKFold => "split-bag-k-fold",
            Self::SplitBagShuffle => "split-bag-shuffle",
            Self::SplitBagBootstrap => "split-bag-bootstrap",
        }
    }

    pub fn is_split_bag(self) -> bool {
        self != Self::FullBagKFold
    }
}

impl std::str::FromStr for StrategyKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| Error::InvalidArgument(format!("unknown selection strategy {s:?}")))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SelectionStrategy {
    pub kind: StrategyKind,
    /// Number of folds for the k-fold kinds.
    pub k: usize,
    /// Number of repeats for shuffle and bootstrap.
    pub repeats: usize,
    /// Validation share of every bag for shuffle.
    pub val_fraction: f64,
    /// Mixed into the seed passed to [`make_folds`] and [`select`].
    pub seed: u64,
}

impl Default for SelectionStrategy {
    fn default() -> Self {
        Self::new(StrategyKind::SplitBagShuffle)
    }
}

impl SelectionStrategy {
    /// `kind` with k = 5, R = 5 and a 0.25 validation share.
    pub fn new(kind: StrategyKind) -> Self {
        Self {
            kind,
            k: 5,
            repeats: 5,
            val_fraction: 0.25,
            seed: 0,
        }
    }

    pub fn validate(&self, n_bags: usize) -> Result<()> {
        match self.kind {
            StrategyKind::FullBagKFold if self.k < 2 || self.k > n_bags => {
                Err(Error::InvalidArgument(format!(
                    "full-bag k-fold needs 2 <= k <= L, got k = {} with L = {n_bags}",
                    self.k
                )))
            }
            StrategyKind::SplitBagKFold if self.k < 2 => Err(Error::InvalidArgument(format!(
                "split-bag k-fold needs k >= 2, got {}",
                self.k
            ))),
            StrategyKind::SplitBagShuffle | StrategyKind::SplitBagBootstrap
                if self.repeats == 0 =>
            {
                Err(Error::InvalidArgument(
                    "at least one repeat is required".into(),
                ))
            }
            StrategyKind::SplitBagShuffle
                if !(self.val_fraction > 0.0 && self.val_fraction < 1.0) =>
            {
                Err(Error::InvalidArgument(format!(
                    "val_fraction {} outside (0, 1)",
                    self.val_fraction
                )))
            }
            _ => Ok(()),
        }
    }
}

/// One train/validation pair. Positions index the rows of the parent [`BagData`].
#[derive(Debug, Clone, PartialEq)]
pub struct Fold {
    pub train: BagData,
    pub validation: BagData,
    pub train_positions: Vec<usize>,
    pub validation_positions: Vec<usize>,
}

/// Whole bags `keep` of `bags`, re-indexed in the given order.
fn keep_bags(bags: &BagData, keep: &[usize]) -> Result<(BagData, Vec<usize>)> {
    let mut new_id = vec![usize::MAX; bags.n_bags()];
    for (j, &b) in keep.iter().enumerate() {
        new_id[b] = j;
    }
    let positions: Vec<usize> = (0..bags.n_items())
        .filter(|&i| new_id[bags.bag_ids[i]] != usize::MAX)
        .collect();
    let sub = BagData::new(
        bags.features.select(ndarray::Axis(0), &positions),
        positions.iter().map(|&i| new_id[bags.bag_ids[i]]).collect(),
        bags.proportions.select(ndarray::Axis(0), keep),
    )?;
    Ok((sub, positions))
}

fn split_fold(bags: &BagData, train: Vec<usize>, validation: Vec<usize>) -> Result<Fold> {
    Ok(Fold {
        train: bags.select(&train)?,
        validation: bags.select(&validation)?,
        train_positions: train,
        validation_positions: validation,
    })
}

/// Greedy assignment of whole bags to `k` folds with similar aggregate
/// proportions. Bags go in order of decreasing distance from the global
/// proportion; each joins, among the folds holding the fewest bags, the one
/// whose running deviation from global points most against the bag's own
/// (ties: fewest items, then lowest index).
pub fn balance_bags(bags: &BagData, k: usize) -> Vec<Vec<usize>> {
    let sizes = bags.bag_sizes();
    let n = bags.n_items() as f64;
    let c = bags.n_classes();
    let global: Vec<f64> = (0..c)
        .map(|j| {
            (0..bags.n_bags())
                .map(|b| sizes[b] as f64 * bags.proportions[[b, j]])
                .sum::<f64>()
                / n
        })
        .collect();
    let dev = |b: usize| -> Vec<f64> {
        (0..c)
            .map(|j| bags.proportions[[b, j]] - global[j])
            .collect()
    };
    let mut order: Vec<usize> = (0..bags.n_bags()).collect();
    let norm = |v: &[f64]| v.iter().map(|x| x.abs()).sum::<f64>();
    order.sort_by(|&a, &b| norm(&dev(b)).total_cmp(&norm(&dev(a))).then(a.cmp(&b)));

    let mut folds: Vec<Vec<usize>> = vec![Vec::new(); k];
    let mut mass = vec![vec![0.0; c]; k];
    let mut items = vec![0usize; k];
    for b in order {
        let d = dev(b);
        let fewest = folds.iter().map(Vec::len).min().unwrap_or(0);
        let score = |f: usize| -> f64 {
            if items[f] == 0 {
                return 0.0;
            }
            (0..c)
                .map(|j| (mass[f][j] / items[f] as f64 - global[j]) * d[j])
                .sum()
        };
        let best = (0..k)
            .filter(|&f| folds[f].len() == fewest)
            .min_by(|&f, &g| {
                score(f)
                    .total_cmp(&score(g))
                    .then(items[f].cmp(&items[g]))
                    .then(f.cmp(&g))
            })
            .expect("k >= 1");
        folds[best].push(b);
        items[best] += sizes[b];
        for j in 0..c {
            mass[best][j] += sizes[b] as f64 * bags.proportions[[b, j]];
        }
    }
    folds
}

/// Train/validation pairs for `strategy`.
pub fn make_folds(bags: &BagData, strategy: &SelectionStrategy, seed: u64) -> Result<Vec<Fold>> {
    strategy.validate(bags.n_bags())?;
    let seed = rng::derive(seed, strategy.seed);
    let members = bags.bag_members();
    match strategy.kind {
        StrategyKind::FullBagKFold => {
            let groups = balance_bags(bags, strategy.k);
            groups
                .iter()
                .map(|val_bags| {
                    let train_bags: Vec<usize> = (0..bags.n_bags())
                        .filter(|b| !val_bags.contains(b))
                        .collect();
                    let mut val_sorted = val_bags.clone();
                    val_sorted.sort_unstable();
                    let (train, train_positions) = keep_bags(bags, &train_bags)?;
                    let (validation, validation_positions) = keep_bags(bags, &val_sorted)?;
                    Ok(Fold {
                        train,
                        validation,
                        train_positions,
                        validation_positions,
                    })
                })
                .collect()
        }
        StrategyKind::SplitBagKFold => {
            let k = strategy.k;
            if let Some(b) = members.iter().position(|m| m.len() < k) {
                return Err(Error::InvalidArgument(format!(
                    "bag {b} has fewer than k = {k} items"
                )));
            }
            let mut r = rng::rng(seed);
            let mut part_of = vec![0usize; bags.n_items()];
            for m in &members {
                let mut shuffled = m.clone();
                shuffled.shuffle(&mut r);
                let (q, rem) = (m.len() / k, m.len() % k);
                let mut start = 0;
                for j in 0..k {
                    let len = q + usize::from(j < rem);
                    for &i in &shuffled[start..start + len] {
                        part_of[i] = j;
                    }
                    start += len;
                }
            }
            (0..k)
                .map(|j| {
                    let (val, train): (Vec<usize>, Vec<usize>) =
                        (0..bags.n_items()).partition(|&i| part_of[i] == j);
                    split_fold(bags, train, val)
                })
                .collect()
        }
        StrategyKind::SplitBagShuffle => {
            if let Some(b) = members.iter().position(|m| m.len() < 2) {
                return Err(Error::InvalidArgument(format!(
                    "bag {b} has fewer than two items"
                )));
            }
            (0..strategy.repeats)
                .map(|rep| {
                    let mut r = rng::rng(rng::derive(seed, rep as u64));
                    let mut train = Vec::new();
                    let mut val = Vec::new();
                    for m in &members {
                        let n_val = ((m.len() as f64 * strategy.val_fraction).round() as usize)
                            .clamp(1, m.len() - 1);
                        let mut shuffled = m.clone();
                        shuffled.shuffle(&mut r);
                        val.extend_from_slice(&shuffled[..n_val]);
                        train.extend_from_slice(&shuffled[n_val..]);
                    }
                    train.sort_unstable();
                    val.sort_unstable();
                    split_fold(bags, train, val)
                })
                .collect()
        }
        StrategyKind::SplitBagBootstrap => (0..strategy.repeats)
            .map(|rep| {
                for attempt in 0..10u64 {
                    let mut r = rng::rng(rng::derive(rng::derive(seed, rep as u64), attempt));
                    let mut train = Vec::new();
                    let mut val = Vec::new();
                    let mut empty = false;
                    for m in &members {
                        let mut drawn = vec![false; m.len()];
                        for _ in 0..m.len() {
                            let j = r.random_range(0..m.len());
                            drawn[j] = true;
                            train.push(m[j]);
                        }
                        let oob: Vec<usize> =
                            (0..m.len()).filter(|&j| !drawn[j]).map(|j| m[j]).collect();
                        empty |= oob.is_empty();
                        val.extend(oob);
                    }
                    if !empty {
                        train.sort_unstable();
                        val.sort_unstable();
                        return split_fold(bags, train, val);
                    }
                }
                Err(Error::InvalidArgument(format!(
                    "bootstrap repeat {rep} left a bag without out-of-sample items after 10 draws"
                )))
            })
            .collect(),
    }
}

/// Mean per-bag L1 distance between two `L x C` proportion matrices.
pub fn proportion_error(predicted: &ndarray::Array2<f64>, given: &ndarray::Array2<f64>) -> f64 {
    let l = given.nrows() as f64;
    (predicted - given).mapv(f64::abs).sum() / l
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridScore {
    pub hyperparameters: Hyperparameters,
    /// Mean over folds whose fit succeeded; `None` if every fit failed.
    pub mean_score: Option<f64>,
    /// Per fold or repeat; `None` marks a failed fit.
    pub fold_scores: Vec<Option<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SelectionResult {
    pub best_index: usize,
    pub best_hyperparameters: Hyperparameters,
    pub scores: Vec<GridScore>,
}

/// Grid search over `grid`'s points for `algorithm`; the lowest mean
/// validation proportion error wins, earlier grid points win ties.
pub fn select(
    algorithm: Algorithm,
    bags: &BagData,
    grid: &HyperGrid,
    strategy: &SelectionStrategy,
    seed: u64,
    cfg: &LearnerConfig,
) -> Result<SelectionResult> {
    let points = grid.points(algorithm)?;
    if points.is_empty() {
        return Err(Error::InvalidArgument(format!(
            "empty grid for {algorithm}"
        )));
    }
    let folds = make_folds(bags, strategy, rng::derive(seed, 0))?;
    let n_folds = folds.len();
    let cells = par::map_range(points.len() * n_folds, |t| {
        let (g, f) = (t / n_folds, t % n_folds);
        let fold = &folds[f];
        let fit_seed = rng::derive(rng::derive(seed, 1 + g as u64), f as u64);
        fit(algorithm, &fold.train, &points[g], fit_seed, cfg)
            .and_then(|m| m.predict_proportions(&fold.validation))
            .map(|p| proportion_error(&p, &fold.validation.proportions))
            .ok()
            .filter(|s| s.is_finite())
    });
    let scores: Vec<GridScore> = points
        .into_iter()
        .enumerate()
        .map(|(g, hyperparameters)| {
            let fold_scores = cells[g * n_folds..(g + 1) * n_folds].to_vec();
            let ok: Vec<f64> = fold_scores.iter().flatten().copied().collect();
            GridScore {
                hyperparameters,
                mean_score: (!ok.is_empty()).then(|| ok.iter().sum::<f64>() / ok.len() as f64),
                fold_scores,
            }
        })
        .collect();
    let mut best: Option<(usize, f64)> = None;
    for (g, s) in scores.iter().enumerate() {
        if let Some(v) = s.mean_score {
            if best.is_none_or(|(_, b)| v < b) {
                best = Some((g, v));
            }
        }
    }
    let (best_index, _) = best.ok_or_else(|| {
        Error::Numerical(format!("every {algorithm} grid point failed on every fold"))
    })?;
    Ok(SelectionResult {
        best_index,
        best_hyperparameters: scores[best_index].hyperparameters.clone(),
        scores,
    })
}
