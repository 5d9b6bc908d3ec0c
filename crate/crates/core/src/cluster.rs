//! k-means clustering (Lloyd iterations, k-means++ seeding, best of several restarts).

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufReader, BufWriter};
use std::path::Path;

use ndarray::{Array2, ArrayView1, Axis};
use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::dataset::BaseDataset;
use crate::error::{Error, Result};
use crate::{par, rng};

/// A hard partition of the items into `Q` non-empty clusters.
#[derive(Debug, Clone, PartialEq)]
pub struct Clustering {
    pub assignments: Vec<usize>,
    /// `Q x d`, each row is the mean of its cluster.
    pub centroids: Array2<f64>,
    /// Sum of squared distances of items to their assigned centroid.
    pub inertia: f64,
}

impl Clustering {
    pub fn n_clusters(&self) -> usize {
        self.centroids.nrows()
    }

    /// Rebuilds centroids and inertia from an assignment vector.
    pub fn from_assignments(x: &Array2<f64>, assignments: Vec<usize>, q: usize) -> Result<Self> {
        if assignments.len() != x.nrows() {
            return Err(Error::DimensionMismatch {
                expected: x.nrows(),
                got: assignments.len(),
            });
        }
        if let Some(&z) = assignments.iter().find(|&&z| z >= q) {
            return Err(Error::InvalidArgument(format!("cluster id {z} >= {q}")));
        }
        let centroids = means(x, &assignments, q);
        if let Some(k) = cluster_sizes(&assignments, q).iter().position(|&s| s == 0) {
            return Err(Error::InvalidArgument(format!("cluster {k} is empty")));
        }
        let inertia = inertia(x, &assignments, &centroids);
        Ok(Self {
            assignments,
            centroids,
            inertia,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct KMeansConfig {
    pub n_init: usize,
    pub max_iter: usize,
}

impl Default for KMeansConfig {
    fn default() -> Self {
        Self {
            n_init: 10,
            max_iter: 300,
        }
    }
}

/// Clusters the features of `ds` into `q` groups.
pub fn kmeans(ds: &BaseDataset, q: usize, seed: u64, cfg: KMeansConfig) -> Result<Clustering> {
    kmeans_matrix(ds.features(), q, seed, cfg)
}

/// [`kmeans`] on a raw `N x d` matrix.
///
/// Restarts run independently (in parallel when enabled); the lowest
/// inertia wins, ties going to the earliest restart.
pub fn kmeans_matrix(
    x: &Array2<f64>,
    q: usize,
    seed: u64,
    cfg: KMeansConfig,
) -> Result<Clustering> {
    let n = x.nrows();
    if q == 0 {
        return Err(Error::InvalidArgument("q must be at least 1".into()));
    }
    if q > n {
        return Err(Error::InvalidArgument(format!("q = {q} exceeds N = {n}")));
    }
    if cfg.n_init == 0 {
        return Err(Error::InvalidArgument("n_init must be at least 1".into()));
    }
    let runs = par::map_range(cfg.n_init, |r| {
        lloyd(x, q, rng::derive(seed, r as u64), cfg.max_iter).0
    });
    let mut best = 0;
    for (r, run) in runs.iter().enumerate() {
        if run.inertia < runs[best].inertia {
            best = r;
        }
    }
    Ok(runs.into_iter().nth(best).expect("n_init >= 1"))
}

fn sq_dist(a: ArrayView1<f64>, b: ArrayView1<f64>) -> f64 {
    a.iter().zip(b.iter()).map(|(u, v)| (u - v) * (u - v)).sum()
}

fn nearest(x: ArrayView1<f64>, centroids: &Array2<f64>) -> (usize, f64) {
    let mut best = (0, f64::INFINITY);
    for (k, c) in centroids.axis_iter(Axis(0)).enumerate() {
        let d = sq_dist(x, c);
        if d < best.1 {
            best = (k, d);
        }
    }
    best
}

fn cluster_sizes(assignments: &[usize], q: usize) -> Vec<usize> {
    let mut sizes = vec![0; q];
    for &z in assignments {
        sizes[z] += 1;
    }
    sizes
}

fn means(x: &Array2<f64>, assignments: &[usize], q: usize) -> Array2<f64> {
    let mut sums = Array2::zeros((q, x.ncols()));
    let sizes = cluster_sizes(assignments, q);
    for (row, &z) in x.axis_iter(Axis(0)).zip(assignments) {
        let mut s = sums.row_mut(z);
        s += &row;
    }
    for (k, mut s) in sums.axis_iter_mut(Axis(0)).enumerate() {
        if sizes[k] > 0 {
            s /= sizes[k] as f64;
        }
    }
    sums
}

fn inertia(x: &Array2<f64>, assignments: &[usize], centroids: &Array2<f64>) -> f64 {
    x.axis_iter(Axis(0))
        .zip(assignments)
        .map(|(row, &z)| sq_dist(row, centroids.row(z)))
        .sum()
}

fn plus_plus_seeds(x: &Array2<f64>, q: usize, r: &mut rng::Rng) -> Array2<f64> {
    let n = x.nrows();
    let mut chosen = vec![r.random_range(0..n)];
    let mut d2: Vec<f64> = x
        .axis_iter(Axis(0))
        .map(|row| sq_dist(row, x.row(chosen[0])))
        .collect();
    while chosen.len() < q {
        let total: f64 = d2.iter().sum();
        let next = if total > 0.0 {
            let mut u = r.random::<f64>() * total;
            let mut pick = n - 1;
            for (i, &w) in d2.iter().enumerate() {
                if u < w {
                    pick = i;
                    break;
                }
                u -= w;
            }
            // rounding can land on a zero-weight point; step to the next positive one
            if d2[pick] == 0.0 {
                pick = (0..n)
                    .map(|k| (pick + k) % n)
                    .find(|&i| d2[i] > 0.0)
                    .unwrap_or(pick);
            }
            pick
        } else {
            // every point coincides with a centre; pick an unused index
            let free: Vec<usize> = (0..n).filter(|i| !chosen.contains(i)).collect();
            free[r.random_range(0..free.len())]
        };
        chosen.push(next);
        for (i, row) in x.axis_iter(Axis(0)).enumerate() {
            d2[i] = d2[i].min(sq_dist(row, x.row(next)));
        }
    }
    x.select(Axis(0), &chosen)
}

/// One k-means++ seeded Lloyd run. Returns the clustering and the inertia
/// recorded after every centroid update.
pub(crate) fn lloyd(
    x: &Array2<f64>,
    q: usize,
    seed: u64,
    max_iter: usize,
) -> (Clustering, Vec<f64>) {
    let mut r = rng::rng(seed);
    let mut centroids = plus_plus_seeds(x, q, &mut r);
    let mut assignments: Vec<usize> = x
        .axis_iter(Axis(0))
        .map(|row| nearest(row, &centroids).0)
        .collect();
    let mut trace = Vec::new();
    for _ in 0..max_iter.max(1) {
        repair_empty(x, &mut assignments, &centroids, q);
        centroids = means(x, &assignments, q);
        trace.push(inertia(x, &assignments, &centroids));
        let next: Vec<usize> = x
            .axis_iter(Axis(0))
            .map(|row| nearest(row, &centroids).0)
            .collect();
        if next == assignments {
            break;
        }
        assignments = next;
    }
    repair_empty(x, &mut assignments, &centroids, q);
    let centroids = means(x, &assignments, q);
    let inertia = inertia(x, &assignments, &centroids);
    (
        Clustering {
            assignments,
            centroids,
            inertia,
        },
        trace,
    )
}

// Each empty cluster takes the point farthest from its current centroid,
// drawn from clusters that can spare one.
fn repair_empty(x: &Array2<f64>, assignments: &mut [usize], centroids: &Array2<f64>, q: usize) {
    let mut sizes = cluster_sizes(assignments, q);
    for k in 0..q {
        if sizes[k] > 0 {
            continue;
        }
        let mut best: Option<(usize, f64)> = None;
        for (i, row) in x.axis_iter(Axis(0)).enumerate() {
            let z = assignments[i];
            if sizes[z] < 2 {
                continue;
            }
            let d = sq_dist(row, centroids.row(z));
            if best.is_none_or(|(_, bd)| d > bd) {
                best = Some((i, d));
            }
        }
        if let Some((i, _)) = best {
            sizes[assignments[i]] -= 1;
            assignments[i] = k;
            sizes[k] += 1;
        }
    }
}

/// `C x Q` matrix of joint frequencies `|{i : y_i = c, z_i = z}| / N`.
pub fn cluster_label_joint(cl: &Clustering, ds: &BaseDataset) -> Result<Array2<f64>> {
    let labels = ds.labels();
    if labels.len() != cl.assignments.len() {
        return Err(Error::DimensionMismatch {
            expected: labels.len(),
            got: cl.assignments.len(),
        });
    }
    let n = labels.len() as f64;
    let mut joint = Array2::zeros((ds.n_classes(), cl.n_clusters()));
    for (&y, &z) in labels.iter().zip(&cl.assignments) {
        joint[[y, z]] += 1.0;
    }
    joint /= n;
    Ok(joint)
}

/// On-disk memo of cluster assignments keyed by (dataset hash, q, seed).
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ClusterCache {
    pub entries: BTreeMap<String, Vec<usize>>,
}

impl ClusterCache {
    pub fn key(dataset_hash: u64, q: usize, seed: u64) -> String {
        format!("{dataset_hash:016x}:{q}:{seed}")
    }

    /// Loads a cache file; a missing file yields an empty cache.
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        if !path.exists() {
            return Ok(Self::default());
        }
        Ok(serde_json::from_reader(BufReader::new(File::open(path)?))?)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        serde_json::to_writer(BufWriter::new(File::create(path)?), self)?;
        Ok(())
    }

    /// Cached clustering of `ds`, computing and storing it on a miss.
    pub fn get_or_compute(
        &mut self,
        ds: &BaseDataset,
        q: usize,
        seed: u64,
        cfg: KMeansConfig,
    ) -> Result<Clustering> {
        let key = Self::key(ds.content_hash(), q, seed);
        if let Some(assign) = self.entries.get(&key) {
            return Clustering::from_assignments(ds.features(), assign.clone(), q);
        }
        let cl = kmeans(ds, q, seed, cfg)?;
        self.entries.insert(key, cl.assignments.clone());
        Ok(cl)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    fn ds(x: Array2<f64>, labels: Vec<usize>) -> BaseDataset {
        let d = x.ncols();
        BaseDataset::new(x, labels, (0..d).map(|i| i.to_string()).collect(), 2).unwrap()
    }

    #[test]
    fn separated_pairs() {
        let x = array![[0.0, 0.0], [0.0, 0.0], [5.0, 5.0], [5.0, 5.0]];
        let cl = kmeans(&ds(x, vec![0, 0, 1, 1]), 2, 1, KMeansConfig::default()).unwrap();
        assert_eq!(cl.assignments[0], cl.assignments[1]);
        assert_eq!(cl.assignments[2], cl.assignments[3]);
        assert_ne!(cl.assignments[0], cl.assignments[2]);
        assert_eq!(cl.inertia, 0.0);
    }

    #[test]
    fn single_cluster_is_the_mean() {
        let x = array![[1.0, 2.0], [3.0, 4.0], [5.0, 0.0]];
        let cl = kmeans(&ds(x, vec![0, 1, 0]), 1, 9, KMeansConfig::default()).unwrap();
        assert_eq!(cl.centroids.row(0).to_vec(), vec![3.0, 2.0]);
    }

    #[test]
    fn one_point_per_cluster() {
        let x = array![[0.0], [1.0], [1.0], [4.0], [9.0]];
        let cl = kmeans(
            &ds(x.clone(), vec![0, 1, 0, 1, 1]),
            5,
            3,
            KMeansConfig::default(),
        )
        .unwrap();
        assert_eq!(cl.inertia, 0.0);
        let mut sizes = cluster_sizes(&cl.assignments, 5);
        sizes.sort();
        assert_eq!(sizes, vec![1; 5]);
        assert!(kmeans(&ds(x, vec![0, 1, 0, 1, 1]), 6, 3, KMeansConfig::default()).is_err());
    }

    #[test]
    fn inertia_never_increases() {
        let x = crate::synthetic::two_gaussians(300, 0.5, 5)
            .features()
            .clone();
        for seed in 0..10 {
            let (cl, trace) = lloyd(&x, 5, seed, 300);
            for w in trace.windows(2) {
                assert!(w[1] <= w[0] * (1.0 + 1e-12), "{:?}", w);
            }
            let recomputed = inertia(&x, &cl.assignments, &cl.centroids);
            assert_eq!(recomputed, cl.inertia);
            assert!(cluster_sizes(&cl.assignments, 5).iter().all(|&s| s > 0));
        }
    }

    #[test]
    fn joint_examples() {
        let x = array![[0.0], [0.0], [1.0], [1.0]];
        let base = ds(x.clone(), vec![0, 0, 1, 1]);
        let cl = Clustering::from_assignments(&x, vec![0, 0, 1, 1], 2).unwrap();
        assert_eq!(
            cluster_label_joint(&cl, &base).unwrap(),
            array![[0.5, 0.0], [0.0, 0.5]]
        );
        let one = Clustering::from_assignments(&x, vec![0; 4], 1).unwrap();
        assert_eq!(
            cluster_label_joint(&one, &base).unwrap(),
            array![[0.5], [0.5]]
        );
    }

    #[test]
    fn deterministic_and_cached() {
        let base = crate::synthetic::two_gaussians(200, 0.5, 11);
        let a = kmeans(&base, 4, 17, KMeansConfig::default()).unwrap();
        let b = kmeans(&base, 4, 17, KMeansConfig::default()).unwrap();
        assert_eq!(a, b);
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("cache.json");
        let mut cache = ClusterCache::load(&p).unwrap();
        let c = cache
            .get_or_compute(&base, 4, 17, KMeansConfig::default())
            .unwrap();
        cache.save(&p).unwrap();
        let mut again = ClusterCache::load(&p).unwrap();
        let d = again
            .get_or_compute(&base, 4, 17, KMeansConfig::default())
            .unwrap();
        assert_eq!(c.assignments, d.assignments);
        assert!((c.inertia - d.inertia).abs() < 1e-9);
    }
}
