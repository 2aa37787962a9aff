//! Offline scene understanding: scan in, labeled scene graph out.

use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::cluster::{build_scene_graph, build_semantic_cloud, cluster_refine, ClusterConfig};
use crate::depth::{metric_depth, DepthConfig};
use crate::ingest::ScanBundle;
use crate::labeler::{label_masks, LabelRegistry, LabelerConfig, VlmPort};
use crate::maskproc::{refine_masks, MaskRefineConfig};
use crate::model::{LabeledInstance, SceneGraph, UNKNOWN_LABEL};

/// Stage switches, mirroring the ablation rows of the benchmark table.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct StageSwitches {
    pub filtering: bool,
    pub monocular_depth: bool,
    pub clustering: bool,
}

impl Default for StageSwitches {
    fn default() -> Self {
        Self {
            filtering: true,
            monocular_depth: true,
            clustering: true,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(default)]
pub struct PipelineConfig {
    pub stages: StageSwitches,
    pub depth: DepthConfig,
    pub masks: MaskRefineConfig,
    pub labeler: LabelerConfig,
    pub cluster: ClusterConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageCounts {
    pub s_i: usize,
    pub s_m: usize,
    pub s_f: usize,
}

impl std::fmt::Display for StageCounts {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "S_I={} S_M={} S_F={}", self.s_i, self.s_m, self.s_f)
    }
}

#[derive(Debug, Clone)]
pub struct PipelineOutput {
    pub scene: SceneGraph,
    pub final_instances: Vec<LabeledInstance>,
    pub labeled: Vec<LabeledInstance>,
    pub registry: LabelRegistry,
    pub counts: StageCounts,
    pub never_visible: Vec<u32>,
    pub port_failures: Vec<u32>,
    pub wall_seconds: f64,
}

/// Metric depth per frame; raw sensor depth when mono depth is switched off.
pub fn frame_depths(scan: &ScanBundle, cfg: &PipelineConfig) -> Vec<Vec<f32>> {
    scan.frames
        .iter()
        .map(|f| {
            if cfg.stages.monocular_depth {
                metric_depth(f, &cfg.depth).0
            } else {
                f.sensor_depth.clone()
            }
        })
        .collect()
}

pub fn run_pipeline(scan: &ScanBundle, vlm: &dyn VlmPort, cfg: &PipelineConfig) -> PipelineOutput {
    let start = Instant::now();
    let depths = frame_depths(scan, cfg);
    let refined = if cfg.stages.filtering {
        refine_masks(&scan.masks_initial, &cfg.masks)
    } else {
        scan.masks_initial.clone()
    };
    let mut registry = LabelRegistry::new();
    let labeled = label_masks(&refined, &scan.cloud, &scan.frames, &depths, vlm, &mut registry, &cfg.labeler);
    let final_instances = if cfg.stages.clustering {
        let semantic = build_semantic_cloud(&scan.cloud, &labeled.instances);
        cluster_refine(&scan.cloud, &semantic, &cfg.cluster)
    } else {
        labeled
            .instances
            .iter()
            .filter(|i| i.label != UNKNOWN_LABEL)
            .cloned()
            .collect()
    };
    let scene = build_scene_graph(&final_instances, &scan.cloud);
    PipelineOutput {
        counts: StageCounts {
            s_i: scan.masks_initial.len(),
            s_m: refined.len(),
            s_f: final_instances.len(),
        },
        scene,
        final_instances,
        labeled: labeled.instances,
        registry,
        never_visible: labeled.never_visible,
        port_failures: labeled.port_failures,
        wall_seconds: start.elapsed().as_secs_f64(),
    }
}
