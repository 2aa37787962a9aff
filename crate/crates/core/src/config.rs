//! TOML configuration and port wiring. Precedence, lowest first: built-in
//! defaults, the config file, backend env vars, command-line flags (applied
//! by the caller).

use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Duration;

use serde::{Deserialize, Serialize};

use crate::agents::{Brainstormer, ChatPort, LlmPlanner, MockBrainstorm, PlannerPort, RulePlanner};
use crate::assets::{AssetsConfig, BoostPort, GenPipeline, ImagePort, MockBgRemoval, MockBoost, MockImage, MockMesher, SystemClock};
use crate::eval::{EvalConfig, LabelEmbedder, TrigramEmbedder};
use crate::live::{HttpBgRemoval, HttpBoost, HttpChat, HttpEmbedder, HttpImage, HttpMesher};
use crate::pipeline::PipelineConfig;
use crate::ports::{endpoint_from_env, EMBED_BACKEND_ENV, IMG_BACKEND_ENV, LLM_BACKEND_ENV, MESH_BACKEND_ENV};

#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("reading {path}: {source}")]
    Read { path: PathBuf, source: std::io::Error },
    #[error("parsing {path}: {source}")]
    Parse { path: PathBuf, source: toml::de::Error },
}

/// Backend base URLs. Unset means the offline mock.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PortsConfig {
    pub llm_url: Option<String>,
    pub img_url: Option<String>,
    /// Second image backend tried when the first fails.
    pub img_fallback_url: Option<String>,
    pub mesh_url: Option<String>,
    pub embed_url: Option<String>,
    pub timeout_s: f64,
}

impl Default for PortsConfig {
    fn default() -> Self {
        Self {
            llm_url: None,
            img_url: None,
            img_fallback_url: None,
            mesh_url: None,
            embed_url: None,
            timeout_s: 60.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AgentsConfig {
    /// Candidates proposed in assisted mode.
    pub candidates: usize,
    pub brainstorm_seed: u64,
}

impl Default for AgentsConfig {
    fn default() -> Self {
        Self {
            candidates: 3,
            brainstorm_seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ServiceConfig {
    pub bind: String,
    pub port: u16,
}

impl Default for ServiceConfig {
    fn default() -> Self {
        Self {
            bind: "127.0.0.1".into(),
            port: 7878,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Config {
    pub pipeline: PipelineConfig,
    pub eval: EvalConfig,
    pub assets: AssetsConfig,
    pub agents: AgentsConfig,
    pub ports: PortsConfig,
    pub service: ServiceConfig,
}

impl Config {
    pub fn from_toml(text: &str, path: &Path) -> Result<Self, ConfigError> {
        toml::from_str(text).map_err(|source| ConfigError::Parse {
            path: path.to_path_buf(),
            source,
        })
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Read {
            path: path.to_path_buf(),
            source,
        })?;
        Self::from_toml(&text, path)
    }

    /// Built-ins, then `path` if given, then backend env vars.
    pub fn resolve(path: Option<&Path>) -> Result<Self, ConfigError> {
        let mut cfg = match path {
            Some(p) => Self::load(p)?,
            None => Self::default(),
        };
        cfg.apply_env();
        Ok(cfg)
    }

    pub fn apply_env(&mut self) {
        let p = &mut self.ports;
        for (var, slot) in [
            (LLM_BACKEND_ENV, &mut p.llm_url),
            (IMG_BACKEND_ENV, &mut p.img_url),
            (MESH_BACKEND_ENV, &mut p.mesh_url),
            (EMBED_BACKEND_ENV, &mut p.embed_url),
        ] {
            if let Some(url) = endpoint_from_env(var) {
                *slot = Some(url);
            }
        }
    }

    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("config serializes")
    }

    fn timeout(&self) -> Duration {
        Duration::from_secs_f64(self.ports.timeout_s.max(0.001))
    }

    pub fn chat_port(&self) -> Option<Arc<dyn ChatPort>> {
        self.ports
            .llm_url
            .as_deref()
            .map(|u| Arc::new(HttpChat::new(u, self.timeout())) as Arc<dyn ChatPort>)
    }

    /// LLM planner when an LLM backend is configured, else the rule grammar.
    pub fn planner(&self) -> Arc<dyn PlannerPort> {
        match self.chat_port() {
            Some(port) => Arc::new(LlmPlanner::new(port)),
            None => Arc::new(RulePlanner),
        }
    }

    pub fn brainstormer(&self) -> Brainstormer {
        let port = self.chat_port().unwrap_or_else(|| Arc::new(MockBrainstorm));
        Brainstormer::new(port, self.agents.brainstorm_seed)
    }

    pub fn embedder(&self) -> Box<dyn LabelEmbedder> {
        match &self.ports.embed_url {
            Some(u) => Box::new(HttpEmbedder::new(u, self.timeout())),
            None => Box::new(TrigramEmbedder),
        }
    }

    pub fn gen_pipeline(&self) -> GenPipeline {
        let t = self.timeout();
        let boost: Arc<dyn BoostPort> = match &self.ports.llm_url {
            Some(u) => Arc::new(HttpBoost::new(u, t)),
            None => Arc::new(MockBoost),
        };
        let mut images: Vec<Arc<dyn ImagePort>> = Vec::new();
        match &self.ports.img_url {
            Some(u) => images.push(Arc::new(HttpImage::new(u, t))),
            None => images.push(Arc::new(MockImage::default())),
        }
        if let Some(u) = &self.ports.img_fallback_url {
            images.push(Arc::new(HttpImage::new(u, t)));
        }
        GenPipeline {
            boost,
            boost_enabled: self.assets.boost_enabled,
            images,
            bg_removal: match &self.ports.img_url {
                Some(u) => Arc::new(HttpBgRemoval::new(u, t)),
                None => Arc::new(MockBgRemoval),
            },
            mesher: match &self.ports.mesh_url {
                Some(u) => Arc::new(HttpMesher::new(u, t)),
                None => Arc::new(MockMesher),
            },
            clock: Arc::new(SystemClock::default()),
            stage_timeout_s: self.assets.stage_timeout_s,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn partial_file_overrides_defaults() {
        let cfg = Config::from_toml(
            "[pipeline.masks]\nmin_points = 20\n[pipeline.cluster]\nmin_cluster_size = 40\n[eval]\niou_threshold = 0.5\n[service]\nport = 9000\n",
            Path::new("t.toml"),
        )
        .unwrap();
        assert_eq!(cfg.pipeline.masks.min_points, 20);
        assert_eq!(cfg.pipeline.masks.duplicate_iou, 0.8);
        assert_eq!(cfg.pipeline.cluster.hdbscan.min_cluster_size, 40);
        assert_eq!(cfg.eval.iou_threshold, 0.5);
        assert_eq!(cfg.service.port, 9000);
        assert_eq!(cfg.service.bind, "127.0.0.1");
    }

    #[test]
    fn round_trip_and_typos_rejected() {
        let d = Config::default();
        assert_eq!(Config::from_toml(&d.to_toml(), Path::new("x")).unwrap(), d);
        assert!(Config::from_toml("[service]\nprot = 1\n", Path::new("x")).is_err());
    }

    #[test]
    fn mocks_without_urls() {
        let cfg = Config::default();
        assert_eq!(cfg.planner().id(), "rule");
        let g = cfg.gen_pipeline();
        assert_eq!(g.images.len(), 1);
        assert_eq!(g.mesher.id(), "mock-mesher");
        let mut cfg = cfg;
        cfg.ports.llm_url = Some("http://127.0.0.1:9".into());
        cfg.ports.img_fallback_url = Some("http://127.0.0.1:9".into());
        assert_eq!(cfg.planner().id(), "http-llm");
        assert_eq!(cfg.gen_pipeline().images.len(), 2);
    }
}
