//! Fusion of per-cluster relative maps into one global frame.
//!
//! The reference is the largest cluster. The remaining clusters are attached
//! one at a time, nearest first (single-linkage range to everything merged so
//! far). Each step aligns the incoming map onto the growing map through four
//! public nodes, two on each side.

use nalgebra::{Matrix3, Vector3};

use crate::clustering::{single_linkage, ClusterSet};
use crate::error::{Error, Result};
use crate::localization::{select_public_nodes, LocalMap, PublicNodes};
use crate::swarm::RangeMatrix;

/// `x -> R x + t` with `R` a proper rotation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RigidTransform {
    pub rotation: Matrix3<f64>,
    pub translation: Vector3<f64>,
}

impl RigidTransform {
    pub fn identity() -> Self {
        Self {
            rotation: Matrix3::identity(),
            translation: Vector3::zeros(),
        }
    }

    pub fn apply(&self, p: &Vector3<f64>) -> Vector3<f64> {
        self.rotation * p + self.translation
    }
}

fn centroid(points: &[Vector3<f64>]) -> Vector3<f64> {
    points.iter().sum::<Vector3<f64>>() / points.len() as f64
}

/// Spread of a point set along its two main axes; both near zero means coincident,
/// the second near zero means collinear.
fn is_degenerate(centered: &[Vector3<f64>]) -> bool {
    let scatter: Matrix3<f64> = centered.iter().map(|p| p * p.transpose()).sum();
    let mut s = scatter.symmetric_eigenvalues();
    s.as_mut_slice().sort_by(|a, b| b.total_cmp(a));
    s[0] <= f64::MIN_POSITIVE || s[1] <= 1e-18 * s[0]
}

/// Sum of squared residuals `|R p_i + t - q_i|^2`.
pub fn alignment_cost(tf: &RigidTransform, source: &[Vector3<f64>], target: &[Vector3<f64>]) -> f64 {
    source
        .iter()
        .zip(target)
        .map(|(p, q)| (tf.apply(p) - q).norm_squared())
        .sum()
}

/// Least-squares rigid transform taking `source` onto `target` (Kabsch with the
/// determinant correction that keeps the result in SO(3)).
pub fn procrustes_fit(source: &[Vector3<f64>], target: &[Vector3<f64>]) -> Result<RigidTransform> {
    if source.len() != target.len() || source.len() < 3 {
        return Err(Error::Usage(format!(
            "procrustes needs two equally sized sets of >= 3 points, got {} and {}",
            source.len(),
            target.len()
        )));
    }
    let mu_p = centroid(source);
    let mu_q = centroid(target);
    let p_bar: Vec<Vector3<f64>> = source.iter().map(|p| p - mu_p).collect();
    let q_bar: Vec<Vector3<f64>> = target.iter().map(|q| q - mu_q).collect();
    if is_degenerate(&p_bar) || is_degenerate(&q_bar) {
        return Err(Error::DegenerateAlignment("point sets are collinear or coincident".into()));
    }
    // cross-covariance sum_i q_i p_i^T
    let h: Matrix3<f64> = q_bar.iter().zip(&p_bar).map(|(q, p)| q * p.transpose()).sum();
    let svd = h.svd(true, true);
    let u = svd.u.expect("requested U");
    let v_t = svd.v_t.expect("requested V^T");
    let d = (u * v_t).determinant().signum();
    let rotation = u * Matrix3::from_diagonal(&Vector3::new(1.0, 1.0, d)) * v_t;
    Ok(RigidTransform {
        rotation,
        translation: mu_q - rotation * mu_p,
    })
}

/// Reflection through the xy-plane.
pub fn mirror(p: &Vector3<f64>) -> Vector3<f64> {
    Vector3::new(p.x, p.y, -p.z)
}

/// Rigid transform, optionally preceded by a reflection.
///
/// Distances fix a point set only up to rotation, translation *and*
/// reflection, so two maps embedded independently may disagree in handedness.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Alignment {
    pub mirrored: bool,
    pub transform: RigidTransform,
}

impl Alignment {
    pub fn apply(&self, p: &Vector3<f64>) -> Vector3<f64> {
        if self.mirrored {
            self.transform.apply(&mirror(p))
        } else {
            self.transform.apply(p)
        }
    }
}

/// Best of the proper fit and the fit of the mirrored source (lower residual wins,
/// the unmirrored one on ties).
pub fn fit_alignment(source: &[Vector3<f64>], target: &[Vector3<f64>]) -> Result<Alignment> {
    let direct = procrustes_fit(source, target)?;
    let flipped: Vec<Vector3<f64>> = source.iter().map(mirror).collect();
    let reflected = procrustes_fit(&flipped, target)?;
    if alignment_cost(&reflected, &flipped, target) < alignment_cost(&direct, source, target) {
        Ok(Alignment { mirrored: true, transform: reflected })
    } else {
        Ok(Alignment { mirrored: false, transform: direct })
    }
}

/// Brings `incoming` into the frame of `base`: its own nodes are transformed,
/// nodes present in both maps are averaged, the base's other nodes stay put.
/// Output members are sorted by agent id.
pub fn merge_pair(base: &LocalMap, incoming: &LocalMap, public: &PublicNodes, tf: &RigidTransform) -> Result<LocalMap> {
    for a in public.all() {
        if base.coord_of(a).is_none() || incoming.coord_of(a).is_none() {
            return Err(Error::MergeInfeasible(format!("public node {a} is missing from one of the maps")));
        }
    }
    let mut merged: Vec<(usize, Vector3<f64>)> = Vec::with_capacity(base.members.len() + incoming.members.len());
    for (&agent, q) in base.members.iter().zip(&base.coords) {
        let coord = match incoming.coord_of(agent) {
            Some(p) => (tf.apply(&p) + q) * 0.5,
            None => *q,
        };
        merged.push((agent, coord));
    }
    for (&agent, p) in incoming.members.iter().zip(&incoming.coords) {
        if base.coord_of(agent).is_none() {
            merged.push((agent, tf.apply(p)));
        }
    }
    merged.sort_by_key(|&(a, _)| a);
    Ok(LocalMap {
        members: merged.iter().map(|m| m.0).collect(),
        coords: merged.iter().map(|m| m.1).collect(),
        degenerate: base.degenerate || incoming.degenerate,
    })
}

/// Agent coordinates in the reference cluster's frame.
#[derive(Debug, Clone, PartialEq)]
pub struct GlobalMap {
    /// One row per agent, indexed by agent id.
    pub coords: Vec<Vector3<f64>>,
    /// Cluster ids in merge order, starting with the reference.
    pub merged: Vec<usize>,
    /// Id of the reference cluster.
    pub frame: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MergeStep {
    pub cluster: usize,
    /// `own` lies in the incoming cluster, `adjacent` in the already merged set.
    pub public: PublicNodes,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MergePlan {
    pub reference: usize,
    pub steps: Vec<MergeStep>,
}

/// Merge order and public nodes, decided from the ranges alone.
pub fn plan_merges(ranges: &RangeMatrix, clusters: &ClusterSet) -> Result<MergePlan> {
    let groups = clusters.clusters();
    if groups.is_empty() {
        return Err(Error::Usage("no clusters to merge".into()));
    }
    let mut reference = 0;
    for (id, c) in groups.iter().enumerate() {
        if c.len() > groups[reference].len() {
            reference = id;
        }
    }
    let mut merged_members = groups[reference].clone();
    let mut pending: Vec<usize> = (0..groups.len()).filter(|&id| id != reference).collect();
    let mut steps = Vec::with_capacity(pending.len());
    while !pending.is_empty() {
        let mut best: Option<(usize, f64)> = None;
        for (pos, &id) in pending.iter().enumerate() {
            if let Some(d) = single_linkage(&groups[id], &merged_members, ranges) {
                if best.is_none_or(|(_, bd)| d < bd) {
                    best = Some((pos, d));
                }
            }
        }
        let Some((pos, _)) = best else {
            return Err(Error::PartialMap { stranded: pending });
        };
        let id = pending.remove(pos);
        let public = select_public_nodes(&groups[id], &merged_members, ranges)?;
        merged_members.extend_from_slice(&groups[id]);
        steps.push(MergeStep { cluster: id, public });
    }
    Ok(MergePlan { reference, steps })
}

/// Member lists extended with the public nodes of every merge step.
///
/// The incoming cluster receives the two anchors on the merged side. Each of
/// its own two anchors is added to the already merged cluster holding the most
/// measured links to it (lowest id on ties), so that it can be completed and
/// embedded there and ends up in the global frame before the step runs.
pub fn augment_clusters(clusters: &ClusterSet, plan: &MergePlan, ranges: &RangeMatrix) -> Vec<Vec<usize>> {
    let groups = clusters.clusters();
    let mut out: Vec<Vec<usize>> = groups.to_vec();
    let mut merged = vec![plan.reference];
    for step in &plan.steps {
        out[step.cluster].extend_from_slice(&step.public.adjacent);
        for anchor in step.public.own {
            let links = |id: usize| groups[id].iter().filter(|&&b| ranges.is_measured(anchor, b)).count();
            let mut host = merged[0];
            for &id in &merged[1..] {
                if links(id) > links(host) || (links(id) == links(host) && id < host) {
                    host = id;
                }
            }
            out[host].push(anchor);
        }
        merged.push(step.cluster);
    }
    for c in &mut out {
        c.sort_unstable();
        c.dedup();
    }
    out
}

/// Fuses `local_maps` (indexed like `clusters`, typically built from
/// [`augment_clusters`]) into a single map covering every agent.
pub fn merge_all(local_maps: &[LocalMap], ranges: &RangeMatrix, clusters: &ClusterSet) -> Result<GlobalMap> {
    if local_maps.len() != clusters.len() {
        return Err(Error::Usage(format!(
            "{} local maps for {} clusters",
            local_maps.len(),
            clusters.len()
        )));
    }
    let plan = plan_merges(ranges, clusters)?;
    let mut global = local_maps[plan.reference].clone();
    let mut merged = vec![plan.reference];
    for step in &plan.steps {
        let incoming = &local_maps[step.cluster];
        let anchors = step.public.all();
        let mut source = Vec::with_capacity(4);
        let mut target = Vec::with_capacity(4);
        for a in anchors {
            match (incoming.coord_of(a), global.coord_of(a)) {
                (Some(p), Some(q)) => {
                    source.push(p);
                    target.push(q);
                }
                _ => {
                    return Err(Error::MergeInfeasible(format!(
                        "public node {a} of cluster {} has no coordinates on both sides",
                        step.cluster
                    )))
                }
            }
        }
        let fit = fit_alignment(&source, &target)?;
        let oriented = if fit.mirrored {
            LocalMap { coords: incoming.coords.iter().map(mirror).collect(), ..incoming.clone() }
        } else {
            incoming.clone()
        };
        global = merge_pair(&global, &oriented, &step.public, &fit.transform)?;
        merged.push(step.cluster);
    }
    let n = ranges.size();
    let mut coords = vec![Vector3::zeros(); n];
    let mut covered = vec![false; n];
    for (&a, c) in global.members.iter().zip(&global.coords) {
        coords[a] = *c;
        covered[a] = true;
    }
    if covered.iter().any(|c| !c) {
        return Err(Error::Usage("local maps do not cover every agent".into()));
    }
    Ok(GlobalMap {
        coords,
        merged,
        frame: plan.reference,
    })
}
