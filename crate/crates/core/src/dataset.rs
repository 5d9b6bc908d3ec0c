//! Domain types shared by every stage: base datasets, generation recipes,
//! LLP instances and the label-free bag view consumed by learners.

use std::collections::HashMap;
use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::Path;
use std::sync::Arc;

use ndarray::{Array2, Axis};
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng;

/// Tolerance used for stochastic-row checks.
pub const ROW_SUM_TOL: f64 = 1e-9;

/// A labeled feature matrix: the raw material for LLP generation.
#[derive(Debug, Clone, PartialEq)]
pub struct BaseDataset {
    features: Array2<f64>,
    labels: Vec<usize>,
    feature_names: Vec<String>,
    n_classes: usize,
}

impl BaseDataset {
    /// Validates and wraps the parts of a dataset.
    ///
    /// Requires `N >= 1`, `d >= 1`, finite features, `C >= 2`, labels below
    /// `C` and every class present at least once.
    pub fn new(
        features: Array2<f64>,
        labels: Vec<usize>,
        feature_names: Vec<String>,
        n_classes: usize,
    ) -> Result<Self> {
        let (n, d) = features.dim();
        if n == 0 || d == 0 {
            return Err(Error::InvalidDataset(format!(
                "empty feature matrix ({n}x{d})"
            )));
        }
        if labels.len() != n {
            return Err(Error::InvalidDataset(format!(
                "{} labels for {n} items",
                labels.len()
            )));
        }
        if feature_names.len() != d {
            return Err(Error::InvalidDataset(format!(
                "{} feature names for {d} columns",
                feature_names.len()
            )));
        }
        if n_classes < 2 {
            return Err(Error::InvalidDataset(format!(
                "need at least two classes, got {n_classes}"
            )));
        }
        if let Some((i, _)) = features.iter().enumerate().find(|(_, v)| !v.is_finite()) {
            return Err(Error::InvalidDataset(format!(
                "non-finite feature at row {}, column {}",
                i / d,
                i % d
            )));
        }
        let mut seen = vec![false; n_classes];
        for &y in &labels {
            if y >= n_classes {
                return Err(Error::InvalidDataset(format!("label {y} >= {n_classes}")));
            }
            seen[y] = true;
        }
        if let Some(c) = seen.iter().position(|s| !s) {
            return Err(Error::InvalidDataset(format!("class {c} has no items")));
        }
        Ok(Self {
            features,
            labels,
            feature_names,
            n_classes,
        })
    }

    pub fn features(&self) -> &Array2<f64> {
        &self.features
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn feature_names(&self) -> &[String] {
        &self.feature_names
    }

    pub fn n_classes(&self) -> usize {
        self.n_classes
    }

    pub fn n_items(&self) -> usize {
        self.labels.len()
    }

    pub fn n_features(&self) -> usize {
        self.features.ncols()
    }

    pub fn class_counts(&self) -> Vec<usize> {
        let mut counts = vec![0; self.n_classes];
        for &y in &self.labels {
            counts[y] += 1;
        }
        counts
    }

    /// Stable content hash over shape, feature bits and labels.
    pub fn content_hash(&self) -> u64 {
        let mut bytes = Vec::with_capacity(8 * (self.features.len() + self.labels.len() + 3));
        bytes.extend_from_slice(&(self.n_items() as u64).to_le_bytes());
        bytes.extend_from_slice(&(self.n_features() as u64).to_le_bytes());
        bytes.extend_from_slice(&(self.n_classes as u64).to_le_bytes());
        for v in self.features.iter() {
            bytes.extend_from_slice(&v.to_bits().to_le_bytes());
        }
        for &y in &self.labels {
            bytes.extend_from_slice(&(y as u64).to_le_bytes());
        }
        rng::fnv1a(&bytes)
    }
}

/// Reads a comma-separated table with a header row.
///
/// Every column other than `label_column` must parse as a finite number.
/// Label values are treated as categorical strings and re-encoded densely in
/// order of first appearance.
pub fn load_base_dataset(path: impl AsRef<Path>, label_column: &str) -> Result<BaseDataset> {
    let path = path.as_ref();
    let file = File::open(path)?;
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_reader(BufReader::new(file));
    let headers: Vec<String> = reader.headers()?.iter().map(str::to_owned).collect();
    let label_idx = headers
        .iter()
        .position(|h| h == label_column)
        .ok_or_else(|| {
            Error::InvalidDataset(format!(
                "label column `{label_column}` not found in {}",
                path.display()
            ))
        })?;
    let feature_names: Vec<String> = headers
        .iter()
        .enumerate()
        .filter(|&(i, _)| i != label_idx)
        .map(|(_, h)| h.clone())
        .collect();

    let mut values = Vec::new();
    let mut labels = Vec::new();
    let mut codes: HashMap<String, usize> = HashMap::new();
    for (row, record) in reader.records().enumerate() {
        let record = record?;
        for (col, cell) in record.iter().enumerate() {
            if col == label_idx {
                let next = codes.len();
                labels.push(*codes.entry(cell.to_owned()).or_insert(next));
            } else {
                let v: f64 = cell.parse().map_err(|_| {
                    Error::InvalidDataset(format!(
                        "row {}, column `{}`: cannot parse `{cell}`",
                        row + 1,
                        headers[col]
                    ))
                })?;
                if !v.is_finite() {
                    return Err(Error::InvalidDataset(format!(
                        "row {}, column `{}`: non-finite value",
                        row + 1,
                        headers[col]
                    )));
                }
                values.push(v);
            }
        }
    }
    let n = labels.len();
    let d = feature_names.len();
    if codes.len() < 2 {
        return Err(Error::InvalidDataset(format!(
            "{} has {} distinct label value(s); need at least two",
            path.display(),
            codes.len()
        )));
    }
    let features =
        Array2::from_shape_vec((n, d), values).map_err(|e| Error::InvalidDataset(e.to_string()))?;
    BaseDataset::new(features, labels, feature_names, codes.len())
}

/// Maps every feature column affinely onto `[-1, 1]`; constant columns become 0.
pub fn scale_features(ds: &BaseDataset) -> BaseDataset {
    let mut features = ds.features.clone();
    for mut col in features.axis_iter_mut(Axis(1)) {
        let lo = col.iter().copied().fold(f64::INFINITY, f64::min);
        let hi = col.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let span = hi - lo;
        if span > 0.0 {
            col.mapv_inplace(|v| (2.0 * (v - lo) / span - 1.0).clamp(-1.0, 1.0));
        } else {
            col.fill(0.0);
        }
    }
    BaseDataset {
        features,
        ..ds.clone()
    }
}

/// Relabels classes through `mapping[old] = new`.
///
/// The image of the mapping must be exactly `{0, …, C'-1}` with `C' >= 2`.
pub fn merge_classes(ds: &BaseDataset, mapping: &[usize]) -> Result<BaseDataset> {
    if mapping.len() != ds.n_classes {
        return Err(Error::InvalidArgument(format!(
            "mapping covers {} classes, dataset has {}",
            mapping.len(),
            ds.n_classes
        )));
    }
    let n_new = mapping.iter().max().map_or(0, |m| m + 1);
    let mut hit = vec![false; n_new];
    for &m in mapping {
        hit[m] = true;
    }
    if let Some(gap) = hit.iter().position(|h| !h) {
        return Err(Error::InvalidArgument(format!(
            "class mapping is not onto 0..{n_new}: {gap} is never produced"
        )));
    }
    if n_new < 2 {
        return Err(Error::InvalidArgument(
            "class mapping collapses the dataset to a single class".into(),
        ));
    }
    let labels = ds.labels.iter().map(|&y| mapping[y]).collect();
    BaseDataset::new(ds.features.clone(), labels, ds.feature_names.clone(), n_new)
}

/// A matrix whose rows are probability distributions.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<Vec<f64>>", into = "Vec<Vec<f64>>")]
pub struct StochasticMatrix(Array2<f64>);

impl StochasticMatrix {
    pub fn new(entries: Array2<f64>) -> Result<Self> {
        for (r, row) in entries.axis_iter(Axis(0)).enumerate() {
            if row.iter().any(|&v| !(0.0..=1.0).contains(&v)) {
                return Err(Error::InvalidArgument(format!(
                    "row {r} has an entry outside [0, 1]"
                )));
            }
            let s: f64 = row.sum();
            if (s - 1.0).abs() > ROW_SUM_TOL {
                return Err(Error::InvalidArgument(format!("row {r} sums to {s}")));
            }
        }
        Ok(Self(entries))
    }

    /// Uniform rows of width `k`.
    pub fn uniform(rows: usize, k: usize) -> Self {
        Self(Array2::from_elem((rows, k), 1.0 / k as f64))
    }

    pub(crate) fn from_trusted(entries: Array2<f64>) -> Self {
        Self(entries)
    }

    pub fn as_array(&self) -> &Array2<f64> {
        &self.0
    }

    pub fn into_inner(self) -> Array2<f64> {
        self.0
    }

    pub fn nrows(&self) -> usize {
        self.0.nrows()
    }

    pub fn ncols(&self) -> usize {
        self.0.ncols()
    }

    pub fn row(&self, r: usize) -> ndarray::ArrayView1<'_, f64> {
        self.0.row(r)
    }
}

impl TryFrom<Vec<Vec<f64>>> for StochasticMatrix {
    type Error = Error;
    fn try_from(rows: Vec<Vec<f64>>) -> Result<Self> {
        Self::new(rows_to_array(&rows)?)
    }
}

impl From<StochasticMatrix> for Vec<Vec<f64>> {
    fn from(m: StochasticMatrix) -> Self {
        array_to_rows(&m.0)
    }
}

pub(crate) fn rows_to_array(rows: &[Vec<f64>]) -> Result<Array2<f64>> {
    let r = rows.len();
    let c = rows.first().map_or(0, Vec::len);
    if rows.iter().any(|row| row.len() != c) {
        return Err(Error::InvalidArgument("ragged matrix".into()));
    }
    Array2::from_shape_vec((r, c), rows.iter().flatten().copied().collect())
        .map_err(|e| Error::InvalidArgument(e.to_string()))
}

pub(crate) fn array_to_rows(a: &Array2<f64>) -> Vec<Vec<f64>> {
    a.axis_iter(Axis(0)).map(|r| r.to_vec()).collect()
}

/// The four dependence structures that can be generated and verified.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Variant {
    Naive,
    Simple,
    Intermediate,
    Hard,
}

impl Variant {
    pub const ALL: [Variant; 4] = [
        Variant::Naive,
        Variant::Simple,
        Variant::Intermediate,
        Variant::Hard,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Variant::Naive => "naive",
            Variant::Simple => "simple",
            Variant::Intermediate => "intermediate",
            Variant::Hard => "hard",
        }
    }

    /// Whether generation needs a clustering of the base dataset.
    pub fn uses_clusters(self) -> bool {
        matches!(self, Variant::Intermediate | Variant::Hard)
    }
}

impl std::fmt::Display for Variant {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for Variant {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "naive" => Ok(Variant::Naive),
            "simple" => Ok(Variant::Simple),
            "intermediate" => Ok(Variant::Intermediate),
            "hard" => Ok(Variant::Hard),
            other => Err(Error::InvalidArgument(format!("unknown variant `{other}`"))),
        }
    }
}

/// How conditional bag probabilities are turned into assignments.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
pub enum AssignmentMode {
    /// Largest-remainder rounding of expected counts within each stratum.
    #[default]
    Exact,
    /// Independent categorical draw per item.
    Sampled,
}

/// Full recipe for one LLP instance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenSpec {
    pub variant: Variant,
    pub n_bags: usize,
    pub bag_sizes: Vec<usize>,
    /// `L x C` target label proportions, one stochastic row per bag.
    pub proportions: Vec<Vec<f64>>,
    /// Number of k-means clusters (Intermediate and Hard only).
    pub n_clusters: usize,
    pub assignment_mode: AssignmentMode,
    pub seed: u64,
}

impl GenSpec {
    /// Checks the recipe against a dataset with `n_items` items and `n_classes` classes.
    pub fn validate(&self, n_items: usize, n_classes: usize) -> Result<()> {
        if self.n_bags < 2 {
            return Err(Error::InvalidSpec(format!("n_bags = {} < 2", self.n_bags)));
        }
        if self.bag_sizes.len() != self.n_bags {
            return Err(Error::InvalidSpec(format!(
                "{} bag sizes for {} bags",
                self.bag_sizes.len(),
                self.n_bags
            )));
        }
        if let Some(b) = self.bag_sizes.iter().position(|&s| s == 0) {
            return Err(Error::InvalidSpec(format!("bag {b} has size 0")));
        }
        let total: usize = self.bag_sizes.iter().sum();
        if total != n_items {
            return Err(Error::InvalidSpec(format!(
                "bag sizes sum to {total}, dataset has {n_items} items"
            )));
        }
        if self.proportions.len() != self.n_bags {
            return Err(Error::InvalidSpec(format!(
                "{} proportion rows for {} bags",
                self.proportions.len(),
                self.n_bags
            )));
        }
        for (b, row) in self.proportions.iter().enumerate() {
            if row.len() != n_classes {
                return Err(Error::InvalidSpec(format!(
                    "proportion row {b} has {} entries, expected {n_classes}",
                    row.len()
                )));
            }
            if row.iter().any(|&p| !(0.0..=1.0).contains(&p)) {
                return Err(Error::InvalidSpec(format!(
                    "proportion row {b} has an entry outside [0, 1]"
                )));
            }
            let s: f64 = row.iter().sum();
            if (s - 1.0).abs() > ROW_SUM_TOL {
                return Err(Error::InvalidSpec(format!(
                    "proportion row {b} sums to {s}"
                )));
            }
        }
        if self.variant.uses_clusters() && self.n_clusters == 0 {
            return Err(Error::InvalidSpec("n_clusters must be >= 1".into()));
        }
        Ok(())
    }

    pub fn proportions_array(&self) -> Result<Array2<f64>> {
        rows_to_array(&self.proportions)
    }
}

/// Items of a base dataset grouped into bags.
///
/// The instance refers to its base dataset through `items`, so train/test
/// splits share the same underlying storage.
#[derive(Debug, Clone)]
pub struct LlpInstance {
    base: Arc<BaseDataset>,
    items: Vec<usize>,
    bag_ids: Vec<usize>,
    realized_proportions: Array2<f64>,
    realized_sizes: Vec<usize>,
    spec: GenSpec,
}

impl LlpInstance {
    /// Builds an instance over all items of `base`.
    pub fn new(base: Arc<BaseDataset>, bag_ids: Vec<usize>, spec: GenSpec) -> Result<Self> {
        let items = (0..base.n_items()).collect();
        Self::from_items(base, items, bag_ids, spec)
    }

    /// Builds an instance over the listed items of `base`; `bag_ids[k]` is the bag of `items[k]`.
    pub fn from_items(
        base: Arc<BaseDataset>,
        items: Vec<usize>,
        bag_ids: Vec<usize>,
        spec: GenSpec,
    ) -> Result<Self> {
        if items.len() != bag_ids.len() {
            return Err(Error::InvalidArgument(format!(
                "{} items but {} bag ids",
                items.len(),
                bag_ids.len()
            )));
        }
        if let Some(&i) = items.iter().find(|&&i| i >= base.n_items()) {
            return Err(Error::InvalidArgument(format!("item {i} out of range")));
        }
        let n_bags = spec.n_bags;
        let c = base.n_classes();
        let mut counts = Array2::<usize>::zeros((n_bags, c));
        for (&i, &b) in items.iter().zip(&bag_ids) {
            if b >= n_bags {
                return Err(Error::InvalidArgument(format!("bag id {b} >= {n_bags}")));
            }
            counts[[b, base.labels[i]]] += 1;
        }
        let realized_sizes: Vec<usize> = counts.axis_iter(Axis(0)).map(|r| r.sum()).collect();
        if let Some(b) = realized_sizes.iter().position(|&s| s == 0) {
            return Err(Error::EmptyBag(b));
        }
        let realized_proportions = Array2::from_shape_fn((n_bags, c), |(b, k)| {
            counts[[b, k]] as f64 / realized_sizes[b] as f64
        });
        Ok(Self {
            base,
            items,
            bag_ids,
            realized_proportions,
            realized_sizes,
            spec,
        })
    }

    pub fn base(&self) -> &Arc<BaseDataset> {
        &self.base
    }

    pub fn items(&self) -> &[usize] {
        &self.items
    }

    pub fn bag_ids(&self) -> &[usize] {
        &self.bag_ids
    }

    pub fn realized_proportions(&self) -> &Array2<f64> {
        &self.realized_proportions
    }

    pub fn realized_sizes(&self) -> &[usize] {
        &self.realized_sizes
    }

    pub fn spec(&self) -> &GenSpec {
        &self.spec
    }

    pub fn n_items(&self) -> usize {
        self.items.len()
    }

    pub fn n_bags(&self) -> usize {
        self.spec.n_bags
    }

    pub fn n_classes(&self) -> usize {
        self.base.n_classes()
    }

    /// Feature rows of the instance's items, in instance order.
    pub fn features(&self) -> Array2<f64> {
        self.base.features.select(Axis(0), &self.items)
    }

    /// Ground-truth labels of the instance's items, in instance order.
    pub fn labels(&self) -> Vec<usize> {
        self.items.iter().map(|&i| self.base.labels[i]).collect()
    }

    /// `L x C` table of item counts per (bag, class).
    pub fn contingency(&self) -> Array2<usize> {
        let mut counts = Array2::zeros((self.n_bags(), self.n_classes()));
        for (&i, &b) in self.items.iter().zip(&self.bag_ids) {
            counts[[b, self.base.labels[i]]] += 1;
        }
        counts
    }

    /// Label-free view with the realized proportions as bag-level supervision.
    pub fn bag_data(&self) -> BagData {
        BagData {
            features: self.features(),
            bag_ids: self.bag_ids.clone(),
            proportions: self.realized_proportions.clone(),
        }
    }

    fn subset(&self, positions: &[usize]) -> Result<Self> {
        let items = positions.iter().map(|&p| self.items[p]).collect();
        let bag_ids = positions.iter().map(|&p| self.bag_ids[p]).collect();
        Self::from_items(self.base.clone(), items, bag_ids, self.spec.clone())
    }
}

/// What a learner sees: features, bag memberships and one proportion row per bag.
///
/// Ground-truth item labels are deliberately absent.
#[derive(Debug, Clone, PartialEq)]
pub struct BagData {
    pub features: Array2<f64>,
    pub bag_ids: Vec<usize>,
    /// `L x C`; row `b` is the proportion vector attached to bag `b`.
    pub proportions: Array2<f64>,
}

impl BagData {
    pub fn new(
        features: Array2<f64>,
        bag_ids: Vec<usize>,
        proportions: Array2<f64>,
    ) -> Result<Self> {
        if features.nrows() != bag_ids.len() {
            return Err(Error::DimensionMismatch {
                expected: features.nrows(),
                got: bag_ids.len(),
            });
        }
        let l = proportions.nrows();
        let mut sizes = vec![0usize; l];
        for &b in &bag_ids {
            if b >= l {
                return Err(Error::InvalidArgument(format!("bag id {b} >= {l}")));
            }
            sizes[b] += 1;
        }
        if let Some(b) = sizes.iter().position(|&s| s == 0) {
            return Err(Error::EmptyBag(b));
        }
        Ok(Self {
            features,
            bag_ids,
            proportions,
        })
    }

    pub fn n_items(&self) -> usize {
        self.bag_ids.len()
    }

    pub fn n_bags(&self) -> usize {
        self.proportions.nrows()
    }

    pub fn n_classes(&self) -> usize {
        self.proportions.ncols()
    }

    pub fn n_features(&self) -> usize {
        self.features.ncols()
    }

    pub fn bag_sizes(&self) -> Vec<usize> {
        let mut sizes = vec![0; self.n_bags()];
        for &b in &self.bag_ids {
            sizes[b] += 1;
        }
        sizes
    }

    /// Item positions of each bag.
    pub fn bag_members(&self) -> Vec<Vec<usize>> {
        let mut members = vec![Vec::new(); self.n_bags()];
        for (i, &b) in self.bag_ids.iter().enumerate() {
            members[b].push(i);
        }
        members
    }

    /// Sub-view over `positions` (repeats allowed); bags are kept with their rows.
    pub fn select(&self, positions: &[usize]) -> Result<Self> {
        Self::new(
            self.features.select(Axis(0), positions),
            positions.iter().map(|&p| self.bag_ids[p]).collect(),
            self.proportions.clone(),
        )
    }
}

/// Largest-remainder rounding of non-negative `targets` to integers summing to `total`.
///
/// Ties in the fractional part go to the lower index.
pub fn largest_remainder(targets: &[f64], total: usize) -> Vec<usize> {
    let mut counts: Vec<usize> = targets
        .iter()
        .map(|&t| t.max(0.0).floor() as usize)
        .collect();
    let assigned: usize = counts.iter().sum();
    if assigned > total {
        // targets overshoot the total; trim from the largest counts
        let mut excess = assigned - total;
        while excess > 0 {
            let i = (0..counts.len())
                .max_by_key(|&i| (counts[i], usize::MAX - i))
                .unwrap_or(0);
            counts[i] -= 1;
            excess -= 1;
        }
        return counts;
    }
    let mut order: Vec<usize> = (0..targets.len()).collect();
    order.sort_by(|&a, &b| {
        let fa = targets[a].max(0.0) - targets[a].max(0.0).floor();
        let fb = targets[b].max(0.0) - targets[b].max(0.0).floor();
        fb.total_cmp(&fa).then(a.cmp(&b))
    });
    let mut remaining = total - assigned;
    let mut k = 0;
    while remaining > 0 && !order.is_empty() {
        counts[order[k % order.len()]] += 1;
        remaining -= 1;
        k += 1;
    }
    counts
}

/// Random split of every bag into training and test items.
///
/// Each bag contributes `train_fraction` of its items to the training side
/// (largest-remainder rounding across bags, then kept within `1..n_b-1` so
/// both sides keep every bag). The training instance's proportions are
/// recounted from its own ground-truth labels.
pub fn train_test_split(
    inst: &LlpInstance,
    train_fraction: f64,
    seed: u64,
) -> Result<(LlpInstance, LlpInstance)> {
    if !(train_fraction > 0.0 && train_fraction < 1.0) {
        return Err(Error::InvalidArgument(format!(
            "train_fraction {train_fraction} outside (0, 1)"
        )));
    }
    let l = inst.n_bags();
    let mut members = vec![Vec::new(); l];
    for (p, &b) in inst.bag_ids.iter().enumerate() {
        members[b].push(p);
    }
    if let Some(b) = members.iter().position(|m| m.len() < 2) {
        return Err(Error::InvalidArgument(format!(
            "bag {b} has fewer than two items and cannot be split"
        )));
    }
    let targets: Vec<f64> = members
        .iter()
        .map(|m| m.len() as f64 * train_fraction)
        .collect();
    let total = (inst.n_items() as f64 * train_fraction).round() as usize;
    let mut n_train = largest_remainder(&targets, total);
    for (b, n) in n_train.iter_mut().enumerate() {
        *n = (*n).clamp(1, members[b].len() - 1);
    }
    let mut r = rng::rng(seed);
    let mut train = Vec::new();
    let mut test = Vec::new();
    for (b, m) in members.iter_mut().enumerate() {
        m.shuffle(&mut r);
        train.extend_from_slice(&m[..n_train[b]]);
        test.extend_from_slice(&m[n_train[b]..]);
    }
    train.sort_unstable();
    test.sort_unstable();
    Ok((inst.subset(&train)?, inst.subset(&test)?))
}

pub const LABEL_COLUMN: &str = "label";
pub const BAG_COLUMN: &str = "bag";

/// JSON sidecar stored next to an instance table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InstanceSidecar {
    #[serde(flatten)]
    pub spec: GenSpec,
    pub n_classes: usize,
    pub realized_sizes: Vec<usize>,
    pub realized_proportions: Vec<Vec<f64>>,
}

/// Writes `inst` as a CSV table (features, `label`, `bag`) plus a JSON sidecar.
pub fn write_instance(
    inst: &LlpInstance,
    table: impl AsRef<Path>,
    sidecar: impl AsRef<Path>,
) -> Result<()> {
    let names = inst.base.feature_names();
    if names.iter().any(|n| n == LABEL_COLUMN || n == BAG_COLUMN) {
        return Err(Error::InvalidDataset(format!(
            "feature names may not be `{LABEL_COLUMN}` or `{BAG_COLUMN}`"
        )));
    }
    let mut w = csv::Writer::from_writer(BufWriter::new(File::create(table)?));
    let mut header: Vec<&str> = names.iter().map(String::as_str).collect();
    header.push(LABEL_COLUMN);
    header.push(BAG_COLUMN);
    w.write_record(&header)?;
    let feats = inst.base.features();
    for (&i, &b) in inst.items.iter().zip(&inst.bag_ids) {
        let mut rec: Vec<String> = feats.row(i).iter().map(|v| v.to_string()).collect();
        rec.push(inst.base.labels[i].to_string());
        rec.push(b.to_string());
        w.write_record(&rec)?;
    }
    w.flush()?;
    let meta = InstanceSidecar {
        spec: inst.spec.clone(),
        n_classes: inst.n_classes(),
        realized_sizes: inst.realized_sizes.clone(),
        realized_proportions: array_to_rows(&inst.realized_proportions),
    };
    let mut f = BufWriter::new(File::create(sidecar)?);
    serde_json::to_writer_pretty(&mut f, &meta)?;
    f.write_all(b"\n")?;
    f.flush()?;
    Ok(())
}

/// Reads an instance written by [`write_instance`].
pub fn read_instance(table: impl AsRef<Path>, sidecar: impl AsRef<Path>) -> Result<LlpInstance> {
    let sidecar = sidecar.as_ref();
    if !sidecar.exists() {
        return Err(Error::InvalidDataset(format!(
            "missing sidecar {}",
            sidecar.display()
        )));
    }
    let meta: InstanceSidecar = serde_json::from_reader(BufReader::new(File::open(sidecar)?))?;
    let mut reader = csv::Reader::from_reader(BufReader::new(File::open(table)?));
    let headers: Vec<String> = reader.headers()?.iter().map(str::to_owned).collect();
    let find = |name: &str| {
        headers
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| Error::InvalidDataset(format!("column `{name}` missing")))
    };
    let (label_idx, bag_idx) = (find(LABEL_COLUMN)?, find(BAG_COLUMN)?);
    let feature_cols: Vec<usize> = (0..headers.len())
        .filter(|&c| c != label_idx && c != bag_idx)
        .collect();
    let mut values = Vec::new();
    let mut labels = Vec::new();
    let mut bags = Vec::new();
    for (row, record) in reader.records().enumerate() {
        let record = record?;
        let parse_int = |col: usize| -> Result<usize> {
            record[col].parse().map_err(|_| {
                Error::InvalidDataset(format!(
                    "row {}: bad integer in `{}`",
                    row + 1,
                    headers[col]
                ))
            })
        };
        labels.push(parse_int(label_idx)?);
        bags.push(parse_int(bag_idx)?);
        for &c in &feature_cols {
            let v: f64 = record[c].parse().map_err(|_| {
                Error::InvalidDataset(format!("row {}: bad number in `{}`", row + 1, headers[c]))
            })?;
            values.push(v);
        }
    }
    let features = Array2::from_shape_vec((labels.len(), feature_cols.len()), values)
        .map_err(|e| Error::InvalidDataset(e.to_string()))?;
    let names = feature_cols.iter().map(|&c| headers[c].clone()).collect();
    let base = Arc::new(BaseDataset::new(features, labels, names, meta.n_classes)?);
    LlpInstance::new(base, bags, meta.spec)
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    fn toy(features: Array2<f64>, labels: Vec<usize>) -> BaseDataset {
        let d = features.ncols();
        let c = labels.iter().max().unwrap() + 1;
        BaseDataset::new(
            features,
            labels,
            (0..d).map(|i| format!("f{i}")).collect(),
            c,
        )
        .unwrap()
    }

    fn spec(n_bags: usize, sizes: Vec<usize>, c: usize) -> GenSpec {
        GenSpec {
            variant: Variant::Naive,
            n_bags,
            bag_sizes: sizes,
            proportions: vec![vec![1.0 / c as f64; c]; n_bags],
            n_clusters: 1,
            assignment_mode: AssignmentMode::Exact,
            seed: 0,
        }
    }

    #[test]
    fn rejects_invalid_datasets() {
        let f = array![[0.0], [1.0]];
        assert!(BaseDataset::new(f.clone(), vec![0, 0], vec!["a".into()], 2).is_err());
        assert!(BaseDataset::new(f.clone(), vec![0, 2], vec!["a".into()], 2).is_err());
        assert!(
            BaseDataset::new(array![[f64::NAN], [1.0]], vec![0, 1], vec!["a".into()], 2).is_err()
        );
        assert!(BaseDataset::new(f, vec![0, 1], vec!["a".into()], 2).is_ok());
    }

    #[test]
    fn load_encodes_labels_by_first_appearance() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("d.csv");
        std::fs::write(&p, "x,cls,z\n1,b,0\n2,a,0\n3,b,0\n4,a,0\n").unwrap();
        let ds = load_base_dataset(&p, "cls").unwrap();
        assert_eq!(ds.labels(), &[0, 1, 0, 1]);
        assert_eq!(ds.n_classes(), 2);
        assert_eq!(ds.feature_names(), &["x".to_string(), "z".to_string()]);
        assert!(ds.features().column(1).iter().all(|&v| v == 0.0));
    }

    #[test]
    fn load_errors() {
        let dir = tempfile::tempdir().unwrap();
        assert!(matches!(
            load_base_dataset(dir.path().join("nope.csv"), "y"),
            Err(Error::Io(_))
        ));
        let p = dir.path().join("d.csv");
        std::fs::write(&p, "x,y\n1,0\n2,1\n").unwrap();
        assert!(load_base_dataset(&p, "label").is_err());
        std::fs::write(&p, "x,y\ninf,0\n2,1\n").unwrap();
        assert!(load_base_dataset(&p, "y").is_err());
        std::fs::write(&p, "x,y\n1,0\n2,0\n").unwrap();
        assert!(load_base_dataset(&p, "y").is_err());
    }

    #[test]
    fn scaling_examples() {
        let ds = toy(
            array![[0.0, 7.0, -1.0], [5.0, 7.0, 1.0], [10.0, 7.0, 1.0]],
            vec![0, 1, 0],
        );
        let s = scale_features(&ds);
        assert_eq!(s.features().column(0).to_vec(), vec![-1.0, 0.0, 1.0]);
        assert_eq!(s.features().column(1).to_vec(), vec![0.0, 0.0, 0.0]);
        assert_eq!(s.features().column(2).to_vec(), vec![-1.0, 1.0, 1.0]);
        assert_eq!(scale_features(&s), s);
    }

    #[test]
    fn merge_examples() {
        let labels: Vec<usize> = (0..10).collect();
        let ds = toy(Array2::zeros((10, 1)), labels);
        let vehicles = [0, 1, 8, 9];
        let mapping: Vec<usize> = (0..10)
            .map(|c| if vehicles.contains(&c) { 0 } else { 1 })
            .collect();
        let bin = merge_classes(&ds, &mapping).unwrap();
        assert_eq!(bin.n_classes(), 2);
        assert_eq!(bin.class_counts(), vec![4, 6]);
        let id: Vec<usize> = (0..10).collect();
        assert_eq!(merge_classes(&ds, &id).unwrap(), ds);
        assert!(merge_classes(&ds, &[0; 10]).is_err());
        let mut gap = id.clone();
        gap[3] = 11;
        assert!(merge_classes(&ds, &gap).is_err());
    }

    #[test]
    fn largest_remainder_cases() {
        assert_eq!(largest_remainder(&[1.5, 1.5, 1.0], 4), vec![2, 1, 1]);
        assert_eq!(largest_remainder(&[3.0], 3), vec![3]);
        assert_eq!(largest_remainder(&[0.3, 0.3, 0.4], 1), vec![0, 0, 1]);
        assert_eq!(largest_remainder(&[2.6, 2.6], 4), vec![2, 2]);
    }

    #[test]
    fn split_rounding_and_recount() {
        // one bag of 4 items with labels {1,1,0,1}; 0.75 -> 3 train, 1 test
        let ds = Arc::new(toy(Array2::zeros((8, 1)), vec![1, 1, 0, 1, 0, 0, 1, 0]));
        let inst =
            LlpInstance::new(ds, vec![0, 0, 0, 0, 1, 1, 1, 1], spec(2, vec![4, 4], 2)).unwrap();
        for seed in 0..20 {
            let (tr, te) = train_test_split(&inst, 0.75, seed).unwrap();
            assert_eq!(tr.realized_sizes(), &[3, 3]);
            assert_eq!(te.realized_sizes(), &[1, 1]);
            let labels = tr.labels();
            for b in 0..2 {
                let ones = tr
                    .bag_ids()
                    .iter()
                    .zip(&labels)
                    .filter(|&(&bb, &y)| bb == b && y == 1)
                    .count();
                assert_eq!(tr.realized_proportions()[[b, 1]], ones as f64 / 3.0);
            }
        }
        let (a, _) = train_test_split(&inst, 0.75, 3).unwrap();
        let (b, _) = train_test_split(&inst, 0.75, 3).unwrap();
        assert_eq!(a.items(), b.items());
    }

    #[test]
    fn split_rejects_tiny_bags() {
        let ds = Arc::new(toy(Array2::zeros((3, 1)), vec![0, 1, 0]));
        let inst = LlpInstance::new(ds, vec![0, 0, 1], spec(2, vec![2, 1], 2)).unwrap();
        assert!(train_test_split(&inst, 0.5, 0).is_err());
    }

    #[test]
    fn instance_rejects_empty_bag() {
        let ds = Arc::new(toy(Array2::zeros((3, 1)), vec![0, 1, 0]));
        assert!(matches!(
            LlpInstance::new(ds, vec![0, 0, 0], spec(2, vec![2, 1], 2)),
            Err(Error::EmptyBag(1))
        ));
    }

    #[test]
    fn instance_files_roundtrip() {
        let ds = Arc::new(toy(
            array![[0.5, -1.0], [0.25, 1.0], [1.0, 0.0], [0.0, 0.125]],
            vec![1, 0, 1, 0],
        ));
        let mut s = spec(2, vec![2, 2], 2);
        s.proportions = vec![vec![0.5, 0.5], vec![0.5, 0.5]];
        let inst = LlpInstance::new(ds, vec![1, 0, 0, 1], s).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let (t, j) = (dir.path().join("i.csv"), dir.path().join("i.json"));
        write_instance(&inst, &t, &j).unwrap();
        let back = read_instance(&t, &j).unwrap();
        assert_eq!(back.bag_ids(), inst.bag_ids());
        assert_eq!(back.labels(), inst.labels());
        assert_eq!(back.features(), inst.features());
        assert_eq!(back.spec(), inst.spec());
        let json: serde_json::Value =
            serde_json::from_str(&std::fs::read_to_string(&j).unwrap()).unwrap();
        for key in [
            "variant",
            "n_bags",
            "bag_sizes",
            "proportions",
            "seed",
            "assignment_mode",
            "n_clusters",
        ] {
            assert!(json.get(key).is_some(), "sidecar lacks `{key}`");
        }
        assert!(read_instance(&t, dir.path().join("missing.json")).is_err());
    }

    #[test]
    fn stochastic_matrix_validation() {
        assert!(StochasticMatrix::new(array![[0.5, 0.5], [1.0, 0.0]]).is_ok());
        assert!(StochasticMatrix::new(array![[0.5, 0.6]]).is_err());
        assert!(StochasticMatrix::new(array![[1.5, -0.5]]).is_err());
    }
}
