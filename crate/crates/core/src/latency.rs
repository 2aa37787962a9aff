//! End-to-end latency accounting with simulated stage delays: each run plans
//! and assembles a creation command while every port spends virtual time.

use std::sync::Arc;

use crate::agents::{Authoring, Mode, RulePlanner, UserCommand};
use crate::assets::{
    AssetStore, Delayed, GenPipeline, MockBgRemoval, MockBoost, MockImage, MockMesher, SimulatedLatency, Stage, StageTimings,
    VirtualClock,
};
use crate::model::SceneGraph;

/// Authoring stack whose ports draw delays from the reference latencies.
pub fn delayed_authoring(store: Arc<AssetStore>, seed: u64) -> Authoring {
    let clock = VirtualClock::default();
    let lat = Arc::new(SimulatedLatency::new(clock.clone(), seed));
    let gen = GenPipeline {
        boost: Arc::new(Delayed::new(MockBoost, Stage::Boost, lat.clone())),
        boost_enabled: true,
        images: vec![Arc::new(Delayed::new(MockImage::default(), Stage::Image, lat.clone()))],
        bg_removal: Arc::new(Delayed::new(MockBgRemoval, Stage::BgRemoval, lat.clone())),
        mesher: Arc::new(Delayed::new(MockMesher, Stage::Mesh, lat.clone())),
        clock: Arc::new(clock),
        stage_timeout_s: 120.0,
    };
    Authoring {
        planner: Arc::new(Delayed::new(RulePlanner, Stage::Agents, lat)),
        store,
        gen: Arc::new(gen),
    }
}

/// `runs` single-threaded creations of distinct prompts on `scene`. The
/// command places each new asset next to `reference_label`.
pub fn simulate_runs(
    runs: usize,
    seed: u64,
    scene: &SceneGraph,
    reference_label: &str,
    store: Arc<AssetStore>,
) -> Result<Vec<StageTimings>, crate::agents::AgentError> {
    (0..runs)
        .map(|i| {
            let a = delayed_authoring(store.clone(), seed.wrapping_add(i as u64));
            let cmd = UserCommand::new(&format!("create a paper lantern {seed}-{i} near {reference_label}"), Mode::Decided);
            a.decide(&cmd, scene).map(|c| c.timings)
        })
        .collect()
}
