//! Cross-device linking over bipartite browsing graphs.
//!
//! Devices and the attributes they touch (IPs, domains) form a weighted
//! bipartite graph. A random walk with restart from each device scores every
//! other device; mutually top-ranked pairs become edges of a similarity graph
//! and its cliques become predicted users.
//!
//! ```
//! use graphlink::{track, BrowsingRecord, LinkerConfig};
//!
//! let records = vec![
//!     BrowsingRecord::ip("phone", "10.0.0.1", 4),
//!     BrowsingRecord::ip("laptop", "10.0.0.1", 9),
//!     BrowsingRecord::ip("other", "10.9.9.9", 2),
//! ];
//! let out = track(&records, &LinkerConfig::default(), None).unwrap();
//! assert_eq!(out.prediction.groups, vec![vec!["laptop".to_string(), "phone".to_string()]]);
//! ```

// `!(x >= 0.0)` also rejects NaN
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod baselines;
pub mod dataset;
pub mod error;
pub mod eval;
pub mod graph;
pub mod linker;
pub mod perturb;
pub mod rwwr;
pub mod synthetic;

pub use dataset::{Attribute, AttributeKind, BrowsingRecord, DeviceType, GroundTruth, LabeledPairs};
pub use error::{Error, Result};
pub use graph::{build_graph, make_transition, BipartiteGraph, TransitionOperator, WeightMode};
pub use linker::{track, IncrementalLinker, LinkerConfig, Prediction, Scorer, SimilarityGraph, Variant};
pub use rwwr::{rwwr_from_seed, RwwrConfig, StationaryDistribution};

/// Crate version, recorded in run manifests.
pub const VERSION: &str = env!("CARGO_PKG_VERSION");
