//! Core library: scene model, scan ingest, depth completion, mask cleanup,
//! labeling, clustering, evaluation, asset generation and authoring agents.

pub mod agents;
pub mod assets;
pub mod cluster;
pub mod config;
pub mod depth;
pub mod eval;
pub mod ingest;
pub mod labeler;
pub mod latency;
pub mod live;
pub mod maskproc;
pub mod model;
pub mod pipeline;
pub mod ports;
pub mod session;
