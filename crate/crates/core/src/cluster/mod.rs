//! Semantic point cloud, per-label density clustering, and scene-graph output.

mod hdbscan;
mod kdtree;
pub mod reference;

use std::collections::{BTreeMap, HashMap};

use serde::{Deserialize, Serialize};

use crate::model::{
    Aabb3, LabeledInstance, Mask, PointCloud, RealObjectNode, SceneGraph, Vec3, UNKNOWN_LABEL,
};

pub use hdbscan::{hdbscan, ClusterResult, HdbscanConfig, NOISE};
pub use kdtree::KdTree;
pub use reference::hdbscan_reference;

/// Per-point label, parallel to the cloud.
#[derive(Debug, Clone, PartialEq)]
pub struct SemanticPointCloud {
    pub labels: Vec<String>,
}

impl SemanticPointCloud {
    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ClusterConfig {
    #[serde(flatten)]
    pub hdbscan: HdbscanConfig,
    /// Cluster voxel centroids instead of raw points for very large clouds.
    pub voxel_downsample: bool,
    pub voxel_size: f64,
    /// Clouds with more points than this are downsampled when enabled.
    pub voxel_threshold: usize,
}

impl Default for ClusterConfig {
    fn default() -> Self {
        Self {
            hdbscan: HdbscanConfig::default(),
            voxel_downsample: false,
            voxel_size: 0.05,
            voxel_threshold: 500_000,
        }
    }
}

/// Each point takes the label of the smallest instance containing it (ties
/// to the lower mask id); uncovered points are `unknown`.
pub fn build_semantic_cloud(cloud: &PointCloud, instances: &[LabeledInstance]) -> SemanticPointCloud {
    let mut labels: Vec<Option<&str>> = vec![None; cloud.len()];
    let mut order: Vec<&LabeledInstance> = instances.iter().collect();
    order.sort_by_key(|i| (i.mask.len(), i.mask.id));
    for inst in order {
        for &p in inst.mask.indices() {
            let slot = &mut labels[p as usize];
            if slot.is_none() {
                *slot = Some(&inst.label);
            }
        }
    }
    SemanticPointCloud {
        labels: labels
            .into_iter()
            .map(|l| l.unwrap_or(UNKNOWN_LABEL).to_string())
            .collect(),
    }
}

fn voxel_key(p: Vec3, size: f64) -> (i64, i64, i64) {
    (
        (p.x / size).floor() as i64,
        (p.y / size).floor() as i64,
        (p.z / size).floor() as i64,
    )
}

/// Clusters voxel centroids and propagates cluster ids back to member points.
fn cluster_voxelized(points: &[Vec3], cfg: &ClusterConfig) -> ClusterResult {
    let mut voxels: BTreeMap<(i64, i64, i64), Vec<usize>> = BTreeMap::new();
    for (i, p) in points.iter().enumerate() {
        voxels.entry(voxel_key(*p, cfg.voxel_size)).or_default().push(i);
    }
    let members: Vec<Vec<usize>> = voxels.into_values().collect();
    let centroids: Vec<Vec3> = members
        .iter()
        .map(|m| m.iter().fold(Vec3::ZERO, |acc, &i| acc + points[i]) * (1.0 / m.len() as f64))
        .collect();
    let coarse = hdbscan(&centroids, &cfg.hdbscan);
    let mut raw = vec![None; points.len()];
    for (v, pts) in members.iter().enumerate() {
        if coarse.labels[v] >= 0 {
            for &p in pts {
                raw[p] = Some(coarse.labels[v] as usize);
            }
        }
    }
    hdbscan::canonical_labels(&raw)
}

/// Splits each non-unknown label's points into density clusters; every
/// cluster becomes one instance. Noise is dropped. Output is ordered by
/// (label, cluster id) with mask ids assigned sequentially.
pub fn cluster_refine(
    cloud: &PointCloud,
    semantic: &SemanticPointCloud,
    cfg: &ClusterConfig,
) -> Vec<LabeledInstance> {
    let mut by_label: BTreeMap<&str, Vec<u32>> = BTreeMap::new();
    for (i, l) in semantic.labels.iter().enumerate() {
        if l != UNKNOWN_LABEL {
            by_label.entry(l).or_default().push(i as u32);
        }
    }
    let downsample = cfg.voxel_downsample && cloud.len() > cfg.voxel_threshold;
    let mut out = Vec::new();
    for (label, indices) in by_label {
        let pts: Vec<Vec3> = indices.iter().map(|&i| cloud.points[i as usize]).collect();
        let result = if downsample {
            cluster_voxelized(&pts, cfg)
        } else {
            hdbscan(&pts, &cfg.hdbscan)
        };
        for members in result.members() {
            let idx = members.iter().map(|&m| indices[m as usize]).collect();
            let id = out.len() as u32;
            out.push(LabeledInstance {
                mask: Mask::new(id, idx).expect("selected clusters are non-empty"),
                label: label.to_string(),
            });
        }
    }
    out
}

/// One real-object node per instance, boxed tightly around its points.
pub fn build_scene_graph(instances: &[LabeledInstance], cloud: &PointCloud) -> SceneGraph {
    let nodes = instances
        .iter()
        .enumerate()
        .map(|(i, inst)| RealObjectNode {
            id: format!("r{i}"),
            label: inst.label.clone(),
            aabb: Aabb3::enclosing(inst.mask.indices().iter().map(|&p| cloud.points[p as usize]))
                .expect("instance masks are non-empty"),
        })
        .collect();
    SceneGraph::new(nodes)
}

/// Label multiset of a scene graph, for comparisons against ground truth.
pub fn label_counts<'a, I: IntoIterator<Item = &'a str>>(labels: I) -> HashMap<&'a str, usize> {
    let mut m = HashMap::new();
    for l in labels {
        *m.entry(l).or_insert(0) += 1;
    }
    m
}
