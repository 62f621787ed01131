//! Layered analytics over Call Detail Records.
//!
//! The engine works through a file-backed knowledge base with six layers:
//! layer 0 holds the validated raw records, and layers 1 through 5 hold
//! progressively deeper findings (usage behavior, places of interest, homes
//! and workplaces, commute routes, city-zone character, social groups).
//! A layer's producer may only read tables from strictly lower layers; the
//! [`kb`] module enforces that contract at read time.
//!
//! Modules map onto the pipeline stages:
//!
//! - [`model`] / [`kb`]: shared domain types and the layered store
//! - [`ingest`]: CSV parsing and per-user call logs
//! - [`synth`]: synthetic city generator with persona ground truth
//! - [`layer1`]: usage scores, activity classes, call-graph reconstruction
//! - [`geo`]: haversine, route graphs, Dijkstra, Voronoi tessellation
//! - [`ml`]: EM clustering, X-Means, linear max-margin classification
//! - [`layer23`]: POIs, home/workplace, zones, worker patterns, routes
//! - [`layer45`]: social groups, transport, closeness, family/friends
//! - [`pipeline`]: stage orchestration against a knowledge base

pub mod config;
pub mod error;
pub mod export;
pub mod geo;
pub mod ingest;
pub mod kb;
pub mod layer1;
pub mod layer23;
pub mod layer45;
pub mod ml;
pub mod model;
pub mod pipeline;
pub mod synth;

pub use config::PipelineConfig;
pub use error::{Error, Result};
pub use geo::{GeoPoint, LocKey};
pub use kb::{KnowledgeBase, Layer, Table};
pub use model::{CdrDataset, CdrRecord, ObservationWindow, TimeWindow, UserId, WindowSpec};
