//! Intra-cluster localization: public-node selection, low-rank completion of
//! the cluster's range matrix, and classical MDS into relative 3D coordinates.

use nalgebra::{DMatrix, DVector, Vector3};
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::baselines::shortest_path_complete;
use crate::error::{Error, Result};
use crate::linalg::sorted_symmetric_eigen;
use crate::rng::{derive_seed, rng_from_seed};
use crate::swarm::RangeMatrix;

/// Two anchors on each side of a cluster pair.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PublicNodes {
    /// Members of the cluster being localized, closest to the adjacent one.
    pub own: [usize; 2],
    /// Members of the adjacent cluster, closest to the first one.
    pub adjacent: [usize; 2],
}

impl PublicNodes {
    pub fn all(&self) -> [usize; 4] {
        [self.own[0], self.own[1], self.adjacent[0], self.adjacent[1]]
    }
}

fn two_closest(side: &[usize], other: &[usize], ranges: &RangeMatrix) -> Result<[usize; 2]> {
    let mut scored: Vec<(f64, usize)> = side
        .iter()
        .filter_map(|&u| {
            other
                .iter()
                .filter_map(|&v| ranges.get(u, v))
                .min_by(f64::total_cmp)
                .map(|d| (d, u))
        })
        .collect();
    if scored.len() < 2 {
        return Err(Error::MergeInfeasible(format!(
            "only {} node(s) of {:?} have a measured link across",
            scored.len(),
            side
        )));
    }
    scored.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
    Ok([scored[0].1, scored[1].1])
}

/// Picks, on each side, the two nodes with the smallest measured range to the other side.
pub fn select_public_nodes(cluster: &[usize], adjacent: &[usize], ranges: &RangeMatrix) -> Result<PublicNodes> {
    if cluster.iter().any(|u| adjacent.contains(u)) {
        return Err(Error::Usage("public-node selection needs disjoint clusters".into()));
    }
    Ok(PublicNodes {
        own: two_closest(cluster, adjacent, ranges)?,
        adjacent: two_closest(adjacent, cluster, ranges)?,
    })
}

/// Square matrix with missing entries.
#[derive(Debug, Clone, PartialEq)]
pub struct PartialMatrix {
    n: usize,
    entries: Vec<Option<f64>>,
}

impl PartialMatrix {
    pub fn new(n: usize, entries: Vec<Option<f64>>) -> Result<Self> {
        if entries.len() != n * n {
            return Err(Error::Usage(format!("expected {} entries, got {}", n * n, entries.len())));
        }
        Ok(Self { n, entries })
    }

    pub fn from_fn(n: usize, f: impl Fn(usize, usize) -> Option<f64>) -> Self {
        let entries = (0..n * n).map(|idx| f(idx / n, idx % n)).collect();
        Self { n, entries }
    }

    pub fn size(&self) -> usize {
        self.n
    }

    pub fn get(&self, i: usize, j: usize) -> Option<f64> {
        self.entries[i * self.n + j]
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Self {
        Self {
            n: self.n,
            entries: self.entries.iter().map(|e| e.map(&f)).collect(),
        }
    }

    /// Same matrix with every diagonal entry observed as zero.
    pub fn with_zero_diagonal(&self) -> Self {
        Self::from_fn(self.n, |i, j| if i == j { Some(0.0) } else { self.get(i, j) })
    }

    /// Observed positions, row-major.
    pub fn observed(&self) -> Vec<(usize, usize)> {
        (0..self.n * self.n)
            .filter(|&idx| self.entries[idx].is_some())
            .map(|idx| (idx / self.n, idx % self.n))
            .collect()
    }
}

/// A cluster's range sub-matrix and its observed off-diagonal index set.
#[derive(Debug, Clone, PartialEq)]
pub struct ClusterMatrix {
    pub members: Vec<usize>,
    pub ranges: PartialMatrix,
}

impl ClusterMatrix {
    /// Ordered observed pairs `(i, j)`, `i != j`.
    pub fn omega(&self) -> Vec<(usize, usize)> {
        self.ranges.observed().into_iter().filter(|&(i, j)| i != j).collect()
    }

    pub fn is_complete(&self) -> bool {
        let m = self.members.len();
        self.omega().len() == m * (m - 1)
    }
}

pub fn extract_cluster_matrix(members: &[usize], ranges: &RangeMatrix) -> Result<ClusterMatrix> {
    if members.len() < 2 {
        return Err(Error::Usage(format!("cluster needs at least 2 members, got {}", members.len())));
    }
    let sub = ranges.restrict(members);
    let m = members.len();
    let ranges = PartialMatrix::from_fn(m, |i, j| if i == j { None } else { sub.get(i, j) });
    Ok(ClusterMatrix {
        members: members.to_vec(),
        ranges,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CompletionTarget {
    /// Complete the element-wise squared ranges (an exact rank <= 5 model in 3D).
    SquaredRanges,
    /// Complete the raw ranges directly.
    RawRanges,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CompletionConfig {
    pub rank: usize,
    /// Regularization weight; `None` means `1e-8 x` mean observed magnitude.
    pub lambda: Option<f64>,
    pub max_iter: usize,
    /// Stop once the observed-entry RMSE changes by less than `tol` relative
    /// to the mean observed magnitude.
    pub tol: f64,
    pub target: CompletionTarget,
    pub init: AlsInit,
    /// Extra randomly initialized runs. Among all runs, the embedding that best
    /// reproduces the measured ranges wins.
    pub restarts: usize,
    /// Skip the remaining runs once a candidate reproduces the measured ranges
    /// to this RMS error, relative to their mean.
    pub accept_stress: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AlsInit {
    /// Gaussian factors at the magnitude of the data.
    Random,
    /// Truncated SVD of the shortest-path completion of the cluster graph; the
    /// factorization then only has to correct the path-length overestimates.
    ShortestPath,
}

impl Default for CompletionConfig {
    fn default() -> Self {
        Self {
            rank: 5,
            lambda: None,
            max_iter: 500,
            tol: 1e-8,
            target: CompletionTarget::SquaredRanges,
            init: AlsInit::ShortestPath,
            restarts: 10,
            accept_stress: 1e-6,
        }
    }
}

impl CompletionConfig {
    pub fn validate(&self) -> Result<()> {
        if self.rank == 0 {
            return Err(Error::config("completion.rank", "must be >= 1"));
        }
        if let Some(l) = self.lambda {
            if !(l.is_finite() && l > 0.0) {
                return Err(Error::config("completion.lambda", "must be > 0"));
            }
        }
        if self.max_iter == 0 {
            return Err(Error::config("completion.max_iter", "must be >= 1"));
        }
        if !(self.tol.is_finite() && self.tol >= 0.0) {
            return Err(Error::config("completion.tol", "must be >= 0"));
        }
        if !(self.accept_stress.is_finite() && self.accept_stress >= 0.0) {
            return Err(Error::config("completion.accept_stress", "must be >= 0"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct AlsOutcome {
    /// `U V^T` without any post-processing.
    pub product: DMatrix<f64>,
    /// Regularized objective after every half-step (U update, then V update).
    pub objective: Vec<f64>,
    pub iterations: usize,
}

fn als_objective(obs: &[(usize, usize, f64)], u: &DMatrix<f64>, v: &DMatrix<f64>, lambda: f64) -> f64 {
    let fit: f64 = obs
        .iter()
        .map(|&(i, j, d)| {
            let r = d - u.row(i).dot(&v.row(j));
            r * r
        })
        .sum();
    fit + lambda * (u.norm_squared() + v.norm_squared())
}

/// Solves `(sum_j f_j f_j^T + lambda I) x = sum_j d_j f_j` for every row of `target`.
fn update_factor(target: &mut DMatrix<f64>, fixed: &DMatrix<f64>, groups: &[Vec<(usize, f64)>], lambda: f64) {
    let r = fixed.ncols();
    for (row, group) in groups.iter().enumerate() {
        let mut gram = DMatrix::<f64>::identity(r, r) * lambda;
        let mut rhs = DVector::<f64>::zeros(r);
        for &(other, d) in group {
            let f = fixed.row(other).transpose();
            gram += &f * f.transpose();
            rhs += f * d;
        }
        let sol = gram.cholesky().expect("regularized normal matrix is positive definite").solve(&rhs);
        target.set_row(row, &sol.transpose());
    }
}

/// Regularized alternating least squares on the observed entries of `obs`.
pub fn als_factorize(obs: &PartialMatrix, cfg: &CompletionConfig, seed: u64) -> Result<AlsOutcome> {
    als_factorize_from(obs, cfg, None, seed)
}

/// Rank-`r` factors `U S^1/2`, `V S^1/2` of the truncated SVD of `warm`.
fn svd_factors(warm: &DMatrix<f64>, r: usize) -> (DMatrix<f64>, DMatrix<f64>) {
    let m = warm.nrows();
    let svd = warm.clone().svd(true, true);
    let (uu, vt) = (svd.u.expect("requested"), svd.v_t.expect("requested"));
    let mut order: Vec<usize> = (0..svd.singular_values.len()).collect();
    order.sort_by(|&a, &b| svd.singular_values[b].total_cmp(&svd.singular_values[a]));
    let mut u = DMatrix::zeros(m, r);
    let mut v = DMatrix::zeros(m, r);
    for (c, &k) in order.iter().take(r).enumerate() {
        let s = svd.singular_values[k].sqrt();
        u.set_column(c, &(uu.column(k) * s));
        v.set_column(c, &(vt.row(k).transpose() * s));
    }
    (u, v)
}

/// As [`als_factorize`], optionally starting from the rank-`r` SVD of `warm`
/// instead of random factors.
pub fn als_factorize_from(obs: &PartialMatrix, cfg: &CompletionConfig, warm: Option<&DMatrix<f64>>, seed: u64) -> Result<AlsOutcome> {
    cfg.validate()?;
    let m = obs.size();
    let observed: Vec<(usize, usize, f64)> = obs
        .observed()
        .into_iter()
        .map(|(i, j)| (i, j, obs.get(i, j).unwrap()))
        .collect();
    let mut by_row = vec![Vec::new(); m];
    let mut by_col = vec![Vec::new(); m];
    for &(i, j, d) in &observed {
        by_row[i].push((j, d));
        by_col[j].push((i, d));
    }
    if let Some(empty) = (0..m).find(|&i| by_row[i].is_empty() || by_col[i].is_empty()) {
        return Err(Error::CompletionInfeasible(empty));
    }

    let scale = observed.iter().map(|o| o.2.abs()).sum::<f64>() / observed.len() as f64;
    let lambda = cfg.lambda.unwrap_or(1e-8 * scale).max(f64::MIN_POSITIVE);
    let r = cfg.rank;
    let std = (scale.max(f64::MIN_POSITIVE) / r as f64).sqrt();
    let normal = Normal::new(0.0, std).expect("finite std");
    let mut rng = rng_from_seed(seed);
    let (mut u, mut v) = match warm {
        Some(w) if w.shape() == (m, m) => svd_factors(w, r),
        Some(w) => return Err(Error::Usage(format!("warm start is {:?}, expected {m}x{m}", w.shape()))),
        None => (
            DMatrix::from_fn(m, r, |_, _| normal.sample(&mut rng)),
            DMatrix::from_fn(m, r, |_, _| normal.sample(&mut rng)),
        ),
    };

    let rmse = |u: &DMatrix<f64>, v: &DMatrix<f64>| {
        let sq: f64 = observed
            .iter()
            .map(|&(i, j, d)| (d - u.row(i).dot(&v.row(j))).powi(2))
            .sum();
        (sq / observed.len() as f64).sqrt()
    };
    let mut objective = Vec::with_capacity(2 * cfg.max_iter);
    let mut prev = rmse(&u, &v);
    let mut iterations = 0;
    for _ in 0..cfg.max_iter {
        iterations += 1;
        update_factor(&mut u, &v, &by_row, lambda);
        objective.push(als_objective(&observed, &u, &v, lambda));
        update_factor(&mut v, &u, &by_col, lambda);
        objective.push(als_objective(&observed, &u, &v, lambda));
        let cur = rmse(&u, &v);
        if (prev - cur).abs() < cfg.tol * scale.max(f64::MIN_POSITIVE) {
            break;
        }
        prev = cur;
    }
    Ok(AlsOutcome {
        product: &u * v.transpose(),
        objective,
        iterations,
    })
}

/// Completes a symmetric, zero-diagonal, non-negative matrix: ALS fit, then
/// symmetrize, zero the diagonal, clamp negatives, and restore observed values.
pub fn als_complete(obs: &PartialMatrix, cfg: &CompletionConfig, seed: u64) -> Result<DMatrix<f64>> {
    als_complete_from(obs, cfg, None, seed)
}

pub fn als_complete_from(obs: &PartialMatrix, cfg: &CompletionConfig, warm: Option<&DMatrix<f64>>, seed: u64) -> Result<DMatrix<f64>> {
    let m = obs.size();
    let raw = als_factorize_from(obs, cfg, warm, seed)?.product;
    let mut out = (&raw + raw.transpose()) * 0.5;
    for i in 0..m {
        for j in 0..m {
            out[(i, j)] = if i == j {
                0.0
            } else if let Some(d) = obs.get(i, j) {
                d
            } else {
                out[(i, j)].max(0.0)
            };
        }
    }
    Ok(out)
}

/// Relative coordinates of one cluster; rows follow `members`.
#[derive(Debug, Clone, PartialEq)]
pub struct LocalMap {
    pub members: Vec<usize>,
    pub coords: Vec<Vector3<f64>>,
    /// Set when fewer than three positive Gram eigenvalues were found.
    pub degenerate: bool,
}

impl LocalMap {
    pub fn coord_of(&self, agent: usize) -> Option<Vector3<f64>> {
        self.members.iter().position(|&m| m == agent).map(|i| self.coords[i])
    }
}

#[derive(Debug, Clone)]
pub struct MdsEmbedding {
    /// `m x dim` coordinates.
    pub coords: DMatrix<f64>,
    /// Eigenvalues of the double-centered Gram matrix, descending.
    pub eigenvalues: Vec<f64>,
    pub degenerate: bool,
}

/// Classical MDS: `B = -1/2 J D∘D J`, coordinates from the `dim` largest
/// eigenpairs scaled by the square root of their (clamped) eigenvalues.
pub fn classical_mds(distances: &DMatrix<f64>, dim: usize) -> Result<MdsEmbedding> {
    let m = distances.nrows();
    if m == 0 || distances.ncols() != m {
        return Err(Error::Usage("MDS needs a non-empty square distance matrix".into()));
    }
    let sq = distances.map(|d| d * d);
    let j = DMatrix::<f64>::identity(m, m) - DMatrix::from_element(m, m, 1.0 / m as f64);
    let b = &j * sq * &j * -0.5;
    let eig = sorted_symmetric_eigen(&b);
    let scale = eig.values.iter().fold(0.0f64, |a, v| a.max(v.abs()));
    let cutoff = 1e-9 * scale.max(f64::MIN_POSITIVE);
    let mut coords = DMatrix::zeros(m, dim);
    let mut positive = 0;
    for axis in 0..dim.min(m) {
        let idx = m - 1 - axis;
        let lambda = eig.values[idx];
        if lambda > cutoff {
            positive += 1;
            let column = eig.vectors.column(idx) * lambda.sqrt();
            coords.set_column(axis, &column);
        }
    }
    // remove the residual mean left by round-off
    for mut col in coords.column_iter_mut() {
        let mean = col.mean();
        col.add_scalar_mut(-mean);
    }
    Ok(MdsEmbedding {
        coords,
        eigenvalues: eig.values.into_iter().rev().collect(),
        degenerate: positive < dim,
    })
}

/// Whether the cluster's observed entries (measured pairs both ways plus the
/// zero diagonal) outnumber the `2 m r - r^2` free parameters of a rank-`r`
/// factorization by at least `margin`. Fully measured clusters need no completion.
pub fn completion_determined(members: &[usize], ranges: &RangeMatrix, rank: usize, margin: f64) -> bool {
    let m = members.len();
    let mut pairs = 0usize;
    for (a, &i) in members.iter().enumerate() {
        for &j in &members[a + 1..] {
            if ranges.is_measured(i, j) {
                pairs += 1;
            }
        }
    }
    if pairs == m * m.saturating_sub(1) / 2 {
        return true;
    }
    let r = rank.min(m);
    let params = (2 * m * r).saturating_sub(r * r);
    (m + 2 * pairs) as f64 >= margin * params as f64
}

/// Shortest-path distances between `members`, inside the cluster when its own
/// graph is connected and through the whole swarm otherwise.
fn path_distances(members: &[usize], ranges: &RangeMatrix) -> Option<DMatrix<f64>> {
    if let Ok(d) = shortest_path_complete(&ranges.restrict(members)) {
        return Some(d);
    }
    let all = shortest_path_complete(ranges).ok()?;
    Some(DMatrix::from_fn(members.len(), members.len(), |i, j| all[(members[i], members[j])]))
}

/// Completes (if needed) and embeds one cluster into a [`LocalMap`].
pub fn localize_cluster(
    members: &[usize],
    ranges: &RangeMatrix,
    cfg: &CompletionConfig,
    seed: u64,
) -> Result<LocalMap> {
    let cm = extract_cluster_matrix(members, ranges)?;
    let m = members.len();
    // a distance matrix has a known zero diagonal; feeding it to the factorization
    // adds m constraints for free
    let known = cm.ranges.with_zero_diagonal();
    if cm.is_complete() {
        let d = DMatrix::from_fn(m, m, |i, j| cm.ranges.get(i, j).unwrap_or(0.0));
        return embed(members, &d);
    }
    let mut starts: Vec<Option<DMatrix<f64>>> = Vec::new();
    if cfg.init == AlsInit::ShortestPath {
        if let Some(w) = path_distances(members, ranges) {
            starts.push(Some(w));
        }
    }
    let randoms = if starts.is_empty() { cfg.restarts.max(1) } else { cfg.restarts };
    starts.extend(std::iter::repeat_n(None, randoms));

    let measured: Vec<f64> = cm.omega().iter().filter_map(|&(i, j)| cm.ranges.get(i, j)).collect();
    let good_enough = cfg.accept_stress * measured.iter().sum::<f64>() / measured.len().max(1) as f64;
    let mut best: Option<(f64, LocalMap)> = None;
    // the path-length warm start is itself a candidate: when the cluster is too
    // sparse for the factorization, that is what survives
    if let Some(Some(w)) = starts.first() {
        let map = embed(members, w)?;
        best = Some((observed_stress(&map, &cm), map));
    }
    for (run, warm) in starts.into_iter().enumerate() {
        if best.as_ref().is_some_and(|(s, _)| *s <= good_enough) {
            break;
        }
        let run_seed = derive_seed(seed, 0x616c73, run as u64);
        let distances = match cfg.target {
            CompletionTarget::SquaredRanges => {
                let warm = warm.map(|w| w.map(|d| d * d));
                als_complete_from(&known.map(|d| d * d), cfg, warm.as_ref(), run_seed)?.map(|v| v.max(0.0).sqrt())
            }
            CompletionTarget::RawRanges => als_complete_from(&known, cfg, warm.as_ref(), run_seed)?,
        };
        let map = embed(members, &distances)?;
        let stress = observed_stress(&map, &cm);
        // strict: earlier runs win ties
        if best.as_ref().is_none_or(|(s, _)| stress < *s) {
            best = Some((stress, map));
        }
    }
    Ok(best.expect("at least one run").1)
}

fn embed(members: &[usize], distances: &DMatrix<f64>) -> Result<LocalMap> {
    let emb = classical_mds(distances, 3)?;
    Ok(LocalMap {
        members: members.to_vec(),
        coords: emb
            .coords
            .row_iter()
            .map(|r| Vector3::new(r[0], r[1], r[2]))
            .collect(),
        degenerate: emb.degenerate,
    })
}

/// RMS mismatch between embedded and measured distances.
fn observed_stress(map: &LocalMap, cm: &ClusterMatrix) -> f64 {
    let mut acc = 0.0;
    let mut count = 0usize;
    for (i, j) in cm.omega() {
        if let Some(d) = cm.ranges.get(i, j) {
            acc += ((map.coords[i] - map.coords[j]).norm() - d).powi(2);
            count += 1;
        }
    }
    if count == 0 { 0.0 } else { (acc / count as f64).sqrt() }
}
