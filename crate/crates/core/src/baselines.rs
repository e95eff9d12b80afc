//! MDS-MAP and its patch-wise variant MDS-MAP(P).

use std::collections::VecDeque;

use nalgebra::{DMatrix, Vector3};

use crate::error::{Error, Result};
use crate::localization::classical_mds;
use crate::merging::{fit_alignment, GlobalMap};
use crate::swarm::RangeMatrix;

fn require_connected(ranges: &RangeMatrix) -> Result<()> {
    let components = ranges.components().len();
    if components > 1 {
        return Err(Error::Disconnected { components });
    }
    Ok(())
}

/// Dijkstra from `src` over measured edges, dense O(n^2) variant.
fn dijkstra(ranges: &RangeMatrix, src: usize) -> Vec<f64> {
    let n = ranges.size();
    let mut dist = vec![f64::INFINITY; n];
    let mut done = vec![false; n];
    dist[src] = 0.0;
    for _ in 0..n {
        let mut u = None;
        for v in 0..n {
            if !done[v] && dist[v].is_finite() && u.is_none_or(|u: usize| dist[v] < dist[u]) {
                u = Some(v);
            }
        }
        let Some(u) = u else { break };
        done[u] = true;
        for (v, w) in ranges.neighbors(u) {
            let alt = dist[u] + w;
            if alt < dist[v] {
                dist[v] = alt;
            }
        }
    }
    dist
}

/// All-pairs shortest paths over the measured-range graph.
pub fn shortest_path_complete(ranges: &RangeMatrix) -> Result<DMatrix<f64>> {
    require_connected(ranges)?;
    let n = ranges.size();
    let mut out = DMatrix::zeros(n, n);
    for i in 0..n {
        for (j, d) in dijkstra(ranges, i).into_iter().enumerate() {
            out[(i, j)] = d;
        }
    }
    // both directions are computed independently; keep the matrix exactly symmetric
    let sym = DMatrix::from_fn(n, n, |i, j| out[(i, j)].min(out[(j, i)]));
    Ok(sym)
}

fn to_points(m: &DMatrix<f64>) -> Vec<Vector3<f64>> {
    m.row_iter().map(|r| Vector3::new(r[0], r[1], r[2])).collect()
}

/// Shortest-path completion followed by one classical MDS over every agent.
pub fn mds_map(ranges: &RangeMatrix) -> Result<GlobalMap> {
    let d = shortest_path_complete(ranges)?;
    let emb = classical_mds(&d, 3)?;
    Ok(GlobalMap {
        coords: to_points(&emb.coords),
        merged: vec![0],
        frame: 0,
    })
}

/// Agents within `hops` measured links of `center`, sorted.
fn hop_neighbourhood(ranges: &RangeMatrix, center: usize, hops: usize) -> Vec<usize> {
    let n = ranges.size();
    let mut depth = vec![usize::MAX; n];
    depth[center] = 0;
    let mut queue = VecDeque::from([center]);
    while let Some(u) = queue.pop_front() {
        if depth[u] == hops {
            continue;
        }
        for (v, _) in ranges.neighbors(u) {
            if depth[v] == usize::MAX {
                depth[v] = depth[u] + 1;
                queue.push_back(v);
            }
        }
    }
    (0..n).filter(|&v| depth[v] != usize::MAX).collect()
}

struct Patch {
    members: Vec<usize>,
    coords: Vec<Vector3<f64>>,
}

fn build_patch(ranges: &RangeMatrix, center: usize, hops: usize) -> Result<Option<Patch>> {
    let members = hop_neighbourhood(ranges, center, hops);
    if members.len() < 4 {
        return Ok(None);
    }
    let d = shortest_path_complete(&ranges.restrict(&members))?;
    let emb = classical_mds(&d, 3)?;
    Ok(Some(Patch { coords: to_points(&emb.coords), members }))
}

/// MDS-MAP(P): one local map per agent from its `patch_hops`-hop neighbourhood,
/// stitched into a growing map by Procrustes over the shared agents.
///
/// Stitching starts from the largest patch; the next patch is always the one
/// sharing the most agents with the current map (lowest centre on ties), which
/// is the closest one in hop terms. A stitched agent keeps the running mean of
/// every estimate it received.
pub fn mds_map_p(ranges: &RangeMatrix, patch_hops: usize) -> Result<GlobalMap> {
    if patch_hops == 0 {
        return Err(Error::config("baselines.patch_hops", "must be >= 1"));
    }
    require_connected(ranges)?;
    let n = ranges.size();
    let mut patches: Vec<(usize, Patch)> = Vec::new();
    for center in 0..n {
        if let Some(p) = build_patch(ranges, center, patch_hops)? {
            patches.push((center, p));
        }
    }
    if patches.is_empty() {
        return Err(Error::Stitch { patch: 0, shared: 0 });
    }
    let mut start = 0;
    for (i, (_, p)) in patches.iter().enumerate() {
        if p.members.len() > patches[start].1.members.len() {
            start = i;
        }
    }

    let mut sum = vec![Vector3::zeros(); n];
    let mut count = vec![0usize; n];
    let first = patches.swap_remove(start).1;
    for (&a, c) in first.members.iter().zip(&first.coords) {
        sum[a] = *c;
        count[a] = 1;
    }
    // original centre order; swap_remove above broke it
    patches.sort_by_key(|(center, _)| *center);

    let mut pending: Vec<Option<(usize, Patch)>> = patches.into_iter().map(Some).collect();
    loop {
        let mut best: Option<(usize, usize)> = None;
        for (slot, entry) in pending.iter().enumerate() {
            if let Some((_, p)) = entry {
                let shared = p.members.iter().filter(|&&a| count[a] > 0).count();
                if shared >= 4 && best.is_none_or(|(_, s)| shared > s) {
                    best = Some((slot, shared));
                }
            }
        }
        let Some((slot, _)) = best else { break };
        let (_, patch) = pending[slot].take().expect("slot is pending");
        let mut source = Vec::new();
        let mut target = Vec::new();
        for (&a, c) in patch.members.iter().zip(&patch.coords) {
            if count[a] > 0 {
                source.push(*c);
                target.push(sum[a] / count[a] as f64);
            }
        }
        // a flat overlap cannot orient the patch; leave it out
        let Ok(tf) = fit_alignment(&source, &target) else { continue };
        for (&a, c) in patch.members.iter().zip(&patch.coords) {
            sum[a] += tf.apply(c);
            count[a] += 1;
        }
    }

    if let Some(stranded) = (0..n).find(|&a| count[a] == 0) {
        let shared = pending
            .iter()
            .flatten()
            .filter(|(_, p)| p.members.contains(&stranded))
            .map(|(_, p)| p.members.iter().filter(|&&a| count[a] > 0).count())
            .max()
            .unwrap_or(0);
        return Err(Error::Stitch { patch: stranded, shared });
    }
    Ok(GlobalMap {
        coords: (0..n).map(|a| sum[a] / count[a] as f64).collect(),
        merged: vec![0],
        frame: 0,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::rng_from_seed;
    use crate::swarm::{generate_swarm, observe_ranges, true_range, MeasurementConfig, Swarm};
    use proptest::prelude::*;
    use rand::Rng;

    fn floyd_warshall(ranges: &RangeMatrix) -> DMatrix<f64> {
        let n = ranges.size();
        let mut d = DMatrix::from_fn(n, n, |i, j| ranges.get(i, j).unwrap_or(f64::INFINITY));
        for k in 0..n {
            for i in 0..n {
                for j in 0..n {
                    if d[(i, k)] + d[(k, j)] < d[(i, j)] {
                        d[(i, j)] = d[(i, k)] + d[(k, j)];
                    }
                }
            }
        }
        d
    }

    fn distance_error(map: &GlobalMap, s: &Swarm) -> f64 {
        let mut worst: f64 = 0.0;
        for i in 0..s.len() {
            for j in 0..s.len() {
                let want = true_range(s.position(i), s.position(j));
                worst = worst.max(((map.coords[i] - map.coords[j]).norm() - want).abs());
            }
        }
        worst
    }

    #[test]
    fn chain_sums_edges() {
        let mut r = RangeMatrix::unobserved(3);
        r.set_pair(0, 1, Some(3.0));
        r.set_pair(1, 2, Some(4.0));
        let d = shortest_path_complete(&r).unwrap();
        assert_eq!(d[(0, 2)], 7.0);
        assert_eq!(d[(2, 0)], 7.0);
    }

    #[test]
    fn full_graph_is_unchanged() {
        let s = generate_swarm(10, [100.0; 3], 1).unwrap();
        let r = s.true_ranges();
        let d = shortest_path_complete(&r).unwrap();
        for i in 0..10 {
            for j in 0..10 {
                assert_eq!(d[(i, j)], r.get(i, j).unwrap());
            }
        }
    }

    #[test]
    fn disconnected_fails_everywhere() {
        let mut r = RangeMatrix::unobserved(8);
        for (i, j) in [(0, 1), (1, 2), (2, 3), (0, 3), (4, 5), (5, 6), (6, 7), (4, 7)] {
            r.set_pair(i, j, Some(1.0));
        }
        assert!(matches!(shortest_path_complete(&r), Err(Error::Disconnected { components: 2 })));
        assert!(matches!(mds_map(&r), Err(Error::Disconnected { .. })));
        assert!(matches!(mds_map_p(&r, 2), Err(Error::Disconnected { .. })));
    }

    #[test]
    fn exact_with_full_connectivity() {
        let s = generate_swarm(20, [500.0; 3], 2).unwrap();
        let r = s.true_ranges();
        let a = mds_map(&r).unwrap();
        let b = mds_map_p(&r, 2).unwrap();
        assert!(distance_error(&a, &s) < 1e-7);
        assert!(distance_error(&b, &s) < 1e-6);
    }

    #[test]
    fn partial_connectivity_covers_everyone() {
        let s = generate_swarm(30, [1000.0; 3], 3).unwrap();
        let r = observe_ranges(&s, &MeasurementConfig { retention_ratio: 0.5, seed: 3, ..Default::default() }).unwrap();
        for map in [mds_map(&r).unwrap(), mds_map_p(&r, 1).unwrap()] {
            assert_eq!(map.coords.len(), 30);
            assert!(map.coords.iter().all(|c| c.iter().all(|v| v.is_finite())));
        }
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]

        #[test]
        fn dijkstra_matches_floyd_warshall(seed in any::<u64>(), n in 2usize..14, p in 0.2f64..1.0) {
            let mut rng = rng_from_seed(seed);
            let mut r = RangeMatrix::unobserved(n);
            for i in 1..n {
                // spanning chain keeps the graph connected
                r.set_pair(i - 1, i, Some(rng.random_range(0.5..10.0)));
            }
            for i in 0..n {
                for j in (i + 2)..n {
                    if rng.random_bool(p) {
                        r.set_pair(i, j, Some(rng.random_range(0.5..10.0)));
                    }
                }
            }
            let fast = shortest_path_complete(&r).unwrap();
            let slow = floyd_warshall(&r);
            for i in 0..n {
                for j in 0..n {
                    prop_assert!((fast[(i, j)] - slow[(i, j)]).abs() < 1e-9);
                    // triangle inequality, and direct edges are never lengthened
                    for k in 0..n {
                        prop_assert!(fast[(i, j)] <= fast[(i, k)] + fast[(k, j)] + 1e-9);
                    }
                    if let Some(d) = r.get(i, j) {
                        prop_assert!(fast[(i, j)] <= d);
                    }
                }
            }
        }
    }
}
