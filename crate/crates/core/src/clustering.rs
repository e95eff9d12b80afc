//! Spectral clustering of the range graph followed by the minimum-size
//! complement that folds undersized clusters into their nearest neighbour.

use nalgebra::DMatrix;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{sorted_symmetric_eigen, SortedEigen};
use crate::rng::{derive_seed, rng_from_seed};
use crate::swarm::RangeMatrix;

/// Minimum members a cluster needs to be localized and fused in 3D.
pub const DEFAULT_MIN_CLUSTER_SIZE: usize = 4;
pub const KMEANS_RESTARTS: usize = 10;
const KMEANS_MAX_ITER: usize = 300;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "mode")]
pub enum Bandwidth {
    /// Median of the measured off-diagonal ranges.
    AutoMedian,
    Fixed { sigma_m: f64 },
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimilarityMatrix {
    weights: DMatrix<f64>,
    sigma: f64,
}

impl SimilarityMatrix {
    pub fn weights(&self) -> &DMatrix<f64> {
        &self.weights
    }

    pub fn sigma(&self) -> f64 {
        self.sigma
    }

    /// Wraps raw weights, e.g. for synthetic graphs. Weights must be symmetric in [0, 1].
    pub fn from_weights(weights: DMatrix<f64>) -> Result<Self> {
        let n = weights.nrows();
        if weights.ncols() != n {
            return Err(Error::Usage("similarity matrix must be square".into()));
        }
        for i in 0..n {
            for j in 0..n {
                let w = weights[(i, j)];
                if !(0.0..=1.0).contains(&w) || (w - weights[(j, i)]).abs() > 1e-12 {
                    return Err(Error::Usage(format!("invalid similarity at ({i},{j})")));
                }
            }
        }
        let mut weights = weights;
        weights.fill_diagonal(0.0);
        Ok(Self { weights, sigma: f64::NAN })
    }
}

fn median(mut values: Vec<f64>) -> f64 {
    values.sort_by(f64::total_cmp);
    let n = values.len();
    if n % 2 == 1 {
        values[n / 2]
    } else {
        0.5 * (values[n / 2 - 1] + values[n / 2])
    }
}

/// Gaussian-kernel similarity; missing links get zero weight, the diagonal is zero.
pub fn similarity_matrix(ranges: &RangeMatrix, bandwidth: Bandwidth) -> Result<SimilarityMatrix> {
    let measured = ranges.measured_values();
    if measured.is_empty() {
        return Err(Error::DegenerateGraph);
    }
    let sigma = match bandwidth {
        Bandwidth::AutoMedian => median(measured),
        Bandwidth::Fixed { sigma_m } => sigma_m,
    };
    if !(sigma.is_finite() && sigma > 0.0) {
        return Err(Error::config("clustering.bandwidth", format!("bandwidth {sigma} must be positive")));
    }
    let n = ranges.size();
    let weights = DMatrix::from_fn(n, n, |i, j| match ranges.get(i, j) {
        Some(d) if i != j => (-(d * d) / (2.0 * sigma * sigma)).exp(),
        _ => 0.0,
    });
    Ok(SimilarityMatrix { weights, sigma })
}

/// `G^{-1/2} (G - W) G^{-1/2}` with `G` the degree matrix. Isolated nodes get a
/// zero row and column.
pub fn normalized_laplacian(w: &SimilarityMatrix) -> DMatrix<f64> {
    let n = w.weights.nrows();
    let inv_sqrt: Vec<f64> = (0..n)
        .map(|i| {
            let d: f64 = w.weights.row(i).sum();
            if d > 0.0 {
                1.0 / d.sqrt()
            } else {
                0.0
            }
        })
        .collect();
    DMatrix::from_fn(n, n, |i, j| {
        let degree_term = if i == j && inv_sqrt[i] > 0.0 { 1.0 } else { 0.0 };
        degree_term - inv_sqrt[i] * w.weights[(i, j)] * inv_sqrt[j]
    })
}

pub fn laplacian_spectrum(lap: &DMatrix<f64>) -> SortedEigen {
    sorted_symmetric_eigen(lap)
}

/// First `k` eigenvectors (ascending eigenvalue) as columns.
pub fn spectral_embed(lap: &DMatrix<f64>, k: usize) -> Result<DMatrix<f64>> {
    let n = lap.nrows();
    if k == 0 || k > n {
        return Err(Error::Usage(format!("embedding dimension {k} outside [1, {n}]")));
    }
    let eig = laplacian_spectrum(lap);
    Ok(eig.vectors.columns(0, k).into_owned())
}

/// Largest eigengap `λ_{k+1} - λ_k` over `k ∈ [2, k_max]` (1-based), smaller k on ties.
pub fn choose_k(eigenvalues: &[f64], k_max: usize) -> usize {
    let upper = k_max.min(eigenvalues.len().saturating_sub(1));
    let mut best_k = 2;
    let mut best_gap = f64::NEG_INFINITY;
    for k in 2..=upper {
        let gap = eigenvalues[k] - eigenvalues[k - 1];
        if gap > best_gap {
            best_gap = gap;
            best_k = k;
        }
    }
    best_k
}

/// A partition of agent indices. Members are sorted; clusters are ordered by
/// their smallest member, and a cluster's id is its position in that order.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ClusterSet {
    clusters: Vec<Vec<usize>>,
}

impl ClusterSet {
    pub fn new(clusters: Vec<Vec<usize>>) -> Self {
        let mut clusters: Vec<Vec<usize>> = clusters
            .into_iter()
            .filter(|c| !c.is_empty())
            .map(|mut c| {
                c.sort_unstable();
                c.dedup();
                c
            })
            .collect();
        clusters.sort_by_key(|c| c[0]);
        Self { clusters }
    }

    pub fn clusters(&self) -> &[Vec<usize>] {
        &self.clusters
    }

    pub fn len(&self) -> usize {
        self.clusters.len()
    }

    pub fn is_empty(&self) -> bool {
        self.clusters.is_empty()
    }

    pub fn total_members(&self) -> usize {
        self.clusters.iter().map(Vec::len).sum()
    }

    pub fn min_size(&self) -> usize {
        self.clusters.iter().map(Vec::len).min().unwrap_or(0)
    }

    /// True when the clusters are disjoint and cover exactly `0..n`.
    pub fn is_partition_of(&self, n: usize) -> bool {
        let mut seen = vec![false; n];
        for &i in self.clusters.iter().flatten() {
            if i >= n || seen[i] {
                return false;
            }
            seen[i] = true;
        }
        seen.into_iter().all(|s| s)
    }
}

fn squared_distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

struct KMeansRun {
    labels: Vec<usize>,
    inertia: f64,
}

fn nearest_center(point: &[f64], centers: &[Vec<f64>]) -> (usize, f64) {
    let mut best = (0, f64::INFINITY);
    for (c, center) in centers.iter().enumerate() {
        let d = squared_distance(point, center);
        if d < best.1 {
            best = (c, d);
        }
    }
    best
}

fn kmeans_plus_plus(points: &[Vec<f64>], k: usize, rng: &mut impl Rng) -> Vec<Vec<f64>> {
    let n = points.len();
    let mut centers = vec![points[rng.random_range(0..n)].clone()];
    let mut dist: Vec<f64> = points.iter().map(|p| squared_distance(p, &centers[0])).collect();
    while centers.len() < k {
        let total: f64 = dist.iter().sum();
        let next = if total > 0.0 {
            let mut target = rng.random_range(0.0..total);
            let mut pick = n - 1;
            for (i, &d) in dist.iter().enumerate() {
                if target < d {
                    pick = i;
                    break;
                }
                target -= d;
            }
            pick
        } else {
            rng.random_range(0..n)
        };
        centers.push(points[next].clone());
        for (d, p) in dist.iter_mut().zip(points) {
            *d = d.min(squared_distance(p, centers.last().unwrap()));
        }
    }
    centers
}

fn lloyd(points: &[Vec<f64>], mut centers: Vec<Vec<f64>>) -> KMeansRun {
    let n = points.len();
    let k = centers.len();
    let dim = points[0].len();
    let mut labels = vec![usize::MAX; n];
    for _ in 0..KMEANS_MAX_ITER {
        let mut changed = false;
        for (i, p) in points.iter().enumerate() {
            let (c, _) = nearest_center(p, &centers);
            if labels[i] != c {
                labels[i] = c;
                changed = true;
            }
        }
        if !changed {
            break;
        }
        let mut sums = vec![vec![0.0; dim]; k];
        let mut counts = vec![0usize; k];
        for (p, &l) in points.iter().zip(&labels) {
            counts[l] += 1;
            for (s, v) in sums[l].iter_mut().zip(p) {
                *s += v;
            }
        }
        for c in 0..k {
            if counts[c] > 0 {
                centers[c] = sums[c].iter().map(|s| s / counts[c] as f64).collect();
            } else {
                // re-seed an empty cluster at the point farthest from its center
                let far = (0..n)
                    .max_by(|&a, &b| {
                        let da = squared_distance(&points[a], &centers[labels[a]]);
                        let db = squared_distance(&points[b], &centers[labels[b]]);
                        da.total_cmp(&db).then(b.cmp(&a))
                    })
                    .unwrap();
                centers[c] = points[far].clone();
                labels[far] = c;
            }
        }
    }
    let inertia = points
        .iter()
        .zip(&labels)
        .map(|(p, &l)| squared_distance(p, &centers[l]))
        .sum();
    KMeansRun { labels, inertia }
}

/// k-means (k-means++ seeding, best of [`KMEANS_RESTARTS`]) on the row-normalized embedding.
pub fn kmeans_assign(embedding: &DMatrix<f64>, k: usize, seed: u64) -> Result<ClusterSet> {
    let n = embedding.nrows();
    if k == 0 || k > n {
        return Err(Error::Usage(format!("k = {k} outside [1, {n}]")));
    }
    let points: Vec<Vec<f64>> = embedding
        .row_iter()
        .map(|row| {
            let norm = row.norm();
            let scale = if norm > 0.0 { 1.0 / norm } else { 1.0 };
            row.iter().map(|v| v * scale).collect()
        })
        .collect();
    let mut best: Option<KMeansRun> = None;
    for restart in 0..KMEANS_RESTARTS {
        let mut rng = rng_from_seed(derive_seed(seed, 0x6b6d, restart as u64));
        let run = lloyd(&points, kmeans_plus_plus(&points, k, &mut rng));
        if best.as_ref().is_none_or(|b| run.inertia < b.inertia) {
            best = Some(run);
        }
    }
    let labels = best.expect("at least one restart").labels;
    let mut groups = vec![Vec::new(); k];
    for (i, l) in labels.into_iter().enumerate() {
        groups[l].push(i);
    }
    Ok(ClusterSet::new(groups))
}

/// Single-linkage distance between two member sets over measured links; `None` if no link exists.
pub fn single_linkage(a: &[usize], b: &[usize], ranges: &RangeMatrix) -> Option<f64> {
    a.iter()
        .flat_map(|&u| b.iter().filter_map(move |&v| ranges.get(u, v)))
        .min_by(f64::total_cmp)
}

/// Index of the cluster nearest to `target` by single linkage; missing links count as +inf.
pub(crate) fn nearest_cluster(target: &[usize], candidates: &[(usize, &[usize])], ranges: &RangeMatrix) -> Option<usize> {
    let mut best: Option<(usize, f64)> = None;
    for &(id, members) in candidates {
        let d = single_linkage(target, members, ranges).unwrap_or(f64::INFINITY);
        if best.is_none_or(|(_, bd)| d < bd) {
            best = Some((id, d));
        }
    }
    best.map(|(id, _)| id)
}

/// Merges undersized clusters into their nearest cluster until every cluster
/// has at least `min_size` members or only one cluster is left.
pub fn complement_undersized(clusters: &ClusterSet, ranges: &RangeMatrix, min_size: usize) -> ClusterSet {
    complement_where(clusters, ranges, |c| c.len() < min_size)
}

/// Merges the first cluster flagged by `too_small` into its nearest cluster,
/// repeatedly, until none is flagged or only one cluster is left.
pub fn complement_where(clusters: &ClusterSet, ranges: &RangeMatrix, too_small: impl Fn(&[usize]) -> bool) -> ClusterSet {
    let mut current = clusters.clone();
    while current.len() > 1 {
        let Some(p) = current.clusters.iter().position(|c| too_small(c)) else {
            break;
        };
        let candidates: Vec<(usize, &[usize])> = current
            .clusters
            .iter()
            .enumerate()
            .filter(|&(q, _)| q != p)
            .map(|(q, c)| (q, c.as_slice()))
            .collect();
        let q = nearest_cluster(&current.clusters[p], &candidates, ranges).expect("more than one cluster");
        let mut groups = current.clusters.clone();
        let absorbed = std::mem::take(&mut groups[q]);
        groups[p].extend(absorbed);
        current = ClusterSet::new(groups);
    }
    current
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "mode")]
pub enum ClusterCount {
    /// Largest eigengap up to `k_max` (default `floor(L / min_size)`).
    Eigengap { k_max: Option<usize> },
    Fixed { k: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ClusteringConfig {
    pub bandwidth: Bandwidth,
    pub min_size: usize,
    pub count: ClusterCount,
}

impl Default for ClusteringConfig {
    fn default() -> Self {
        Self {
            bandwidth: Bandwidth::AutoMedian,
            min_size: DEFAULT_MIN_CLUSTER_SIZE,
            count: ClusterCount::Eigengap { k_max: None },
        }
    }
}

impl ClusteringConfig {
    pub fn validate(&self) -> Result<()> {
        if self.min_size == 0 {
            return Err(Error::config("clustering.min_size", "must be >= 1"));
        }
        if let Bandwidth::Fixed { sigma_m } = self.bandwidth {
            if !(sigma_m.is_finite() && sigma_m > 0.0) {
                return Err(Error::config("clustering.bandwidth.sigma_m", "must be positive"));
            }
        }
        match self.count {
            ClusterCount::Fixed { k: 0 } => Err(Error::config("clustering.count.k", "must be >= 1")),
            ClusterCount::Eigengap { k_max: Some(k) } if k < 2 => {
                Err(Error::config("clustering.count.k_max", "must be >= 2"))
            }
            _ => Ok(()),
        }
    }
}

/// Outcome of the full clustering stage.
#[derive(Debug, Clone)]
pub struct Clustering {
    pub clusters: ClusterSet,
    /// Cluster count handed to k-means (before the size complement).
    pub k: usize,
    pub eigenvalues: Vec<f64>,
}

pub fn cluster_swarm(ranges: &RangeMatrix, cfg: &ClusteringConfig, seed: u64) -> Result<Clustering> {
    cfg.validate()?;
    let n = ranges.size();
    let w = similarity_matrix(ranges, cfg.bandwidth)?;
    let lap = normalized_laplacian(&w);
    let eig = laplacian_spectrum(&lap);
    let k = match cfg.count {
        ClusterCount::Fixed { k } => {
            if k > n {
                return Err(Error::Usage(format!("fixed k = {k} exceeds swarm size {n}")));
            }
            k
        }
        ClusterCount::Eigengap { k_max } => {
            let k_max = k_max.unwrap_or(n / cfg.min_size).min(n.saturating_sub(1));
            if k_max < 2 {
                1
            } else {
                choose_k(&eig.values, k_max)
            }
        }
    };
    let initial = if k == 1 {
        ClusterSet::new(vec![(0..n).collect()])
    } else {
        let embedding = eig.vectors.columns(0, k).into_owned();
        kmeans_assign(&embedding, k, derive_seed(seed, 0x636c, 0))?
    };
    let clusters = complement_undersized(&initial, ranges, cfg.min_size);
    Ok(Clustering { clusters, k, eigenvalues: eig.values })
}
