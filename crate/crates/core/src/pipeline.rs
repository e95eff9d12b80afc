//! Clustering, per-cluster completion and embedding, then map fusion.

use serde::{Deserialize, Serialize};

use crate::clustering::{cluster_swarm, complement_where, ClusterCount, Clustering, ClusteringConfig};
use crate::error::{Error, Result};
use crate::localization::{completion_determined, localize_cluster, CompletionConfig, LocalMap};
use crate::merging::{augment_clusters, merge_all, plan_merges, GlobalMap, MergePlan};
use crate::rng::derive_seed;
use crate::swarm::RangeMatrix;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PipelineConfig {
    pub clustering: ClusteringConfig,
    pub completion: CompletionConfig,
    /// A cluster whose observed entries number fewer than `margin` times the
    /// factorization's free parameters is merged into its nearest neighbour
    /// before completion. 0 disables the rule.
    pub determinacy_margin: f64,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            clustering: ClusteringConfig::default(),
            completion: CompletionConfig::default(),
            determinacy_margin: 2.5,
        }
    }
}

impl PipelineConfig {
    pub fn validate(&self) -> Result<()> {
        self.clustering.validate()?;
        self.completion.validate()?;
        if !(self.determinacy_margin.is_finite() && self.determinacy_margin >= 0.0) {
            return Err(Error::Config {
                field: "pipeline.determinacy_margin".into(),
                reason: "must be finite and >= 0".into(),
            });
        }
        Ok(())
    }
}

/// Everything the pipeline produced, for inspection.
#[derive(Debug, Clone)]
pub struct PipelineOutput {
    pub map: GlobalMap,
    pub clustering: Clustering,
    pub plan: MergePlan,
    pub local_maps: Vec<LocalMap>,
}

const STREAM_CLUSTER: u64 = 1;
const STREAM_COMPLETE: u64 = 2;

pub fn run_pipeline(ranges: &RangeMatrix, cfg: &PipelineConfig, seed: u64) -> Result<PipelineOutput> {
    cfg.validate()?;
    let mut clustering = cluster_swarm(ranges, &cfg.clustering, derive_seed(seed, STREAM_CLUSTER, 0))?;
    let (rank, margin) = (cfg.completion.rank, cfg.determinacy_margin);
    // augmentation adds the neighbour's public nodes, which can make a cluster
    // underdetermined again; fold the offender into its nearest neighbour and re-plan
    let (plan, augmented) = loop {
        let plan = plan_merges(ranges, &clustering.clusters)?;
        let augmented = augment_clusters(&clustering.clusters, &plan, ranges);
        let weak = (margin > 0.0)
            .then(|| augmented.iter().position(|c| !completion_determined(c, ranges, rank, margin)))
            .flatten();
        match weak {
            Some(p) if clustering.clusters.len() > 1 => {
                let target = clustering.clusters.clusters()[p].clone();
                clustering.clusters = complement_where(&clustering.clusters, ranges, |c| c == target.as_slice());
            }
            _ => break (plan, augmented),
        }
    };
    let local_maps = augmented
        .iter()
        .enumerate()
        .map(|(id, members)| localize_cluster(members, ranges, &cfg.completion, derive_seed(seed, STREAM_COMPLETE, id as u64)))
        .collect::<Result<Vec<_>>>()?;
    let map = merge_all(&local_maps, ranges, &clustering.clusters)?;
    Ok(PipelineOutput { map, clustering, plan, local_maps })
}

/// Adaptive cluster count (eigengap).
pub fn proposed(ranges: &RangeMatrix, cfg: &PipelineConfig, seed: u64) -> Result<GlobalMap> {
    Ok(run_pipeline(ranges, cfg, seed)?.map)
}

/// Same pipeline with the cluster count pinned to `k` before the size complement.
pub fn proposed_fix(ranges: &RangeMatrix, k: usize, cfg: &PipelineConfig, seed: u64) -> Result<GlobalMap> {
    let mut cfg = cfg.clone();
    cfg.clustering.count = ClusterCount::Fixed { k };
    Ok(run_pipeline(ranges, &cfg, seed)?.map)
}
