//! From similarity scores to device groups.
//!
//! Per component graph: score every device against every other, keep each
//! device's top `K - 1`, connect mutually ranked pairs (optionally gated by a
//! threshold), then combine component graphs and cut the result into
//! cliques.

mod groups;
mod incremental;
mod similarity;

use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

pub use groups::{assign_groups, maximal_cliques, Prediction};
pub use incremental::{IncrementalLinker, LinkOutcome};
pub use similarity::{
    build_similarity_graph_supervised, build_similarity_graph_unsupervised, combine, learn_threshold, CombineMode,
    EdgeRule, Rankings, SimilarityGraph, ThresholdModel,
};

use crate::baselines::bhattacharyya::BhattacharyyaScorer;
use crate::dataset::{AttributeKind, BrowsingRecord, DeviceType, LabeledPairs};
use crate::error::{Error, Result};
use crate::graph::{build_graph, make_transition, BipartiteGraph, TransitionOperator, WeightMode};
use crate::rwwr::{rwwr_from_seed, CandidateList, RwwrConfig, TopK};

/// Which attribute graphs feed the similarity graph, and how they are joined.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Variant {
    #[default]
    Ip,
    Domain,
    /// One graph holding IPs and domains together.
    UniGraph,
    /// IP and domain similarity graphs, edge union.
    Or,
    /// IP and domain similarity graphs, edge intersection.
    And,
}

impl Variant {
    /// Attribute kinds of each component graph.
    pub fn components(self) -> Vec<Vec<AttributeKind>> {
        use AttributeKind::*;
        match self {
            Variant::Ip => vec![vec![Ip]],
            Variant::Domain => vec![vec![Domain]],
            Variant::UniGraph => vec![vec![Ip, Domain]],
            Variant::Or | Variant::And => vec![vec![Ip], vec![Domain]],
        }
    }

    fn combine_mode(self) -> Option<CombineMode> {
        match self {
            Variant::Or => Some(CombineMode::Or),
            Variant::And => Some(CombineMode::And),
            _ => None,
        }
    }
}

impl FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "ip" => Ok(Variant::Ip),
            "domain" => Ok(Variant::Domain),
            "unigraph" => Ok(Variant::UniGraph),
            "or" => Ok(Variant::Or),
            "and" => Ok(Variant::And),
            other => Err(Error::InvalidConfig(format!("unknown variant {other:?}"))),
        }
    }
}

/// Pairwise device similarity function.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Scorer {
    /// Stationary probability of a walk with restart from the seed device.
    #[default]
    RandomWalk,
    /// Bhattacharyya coefficient of the two devices' visit distributions.
    Bhattacharyya,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LinkerConfig {
    /// Most devices a single user can own.
    pub k: usize,
    pub variant: Variant,
    pub supervised: bool,
    /// Use this threshold instead of learning one.
    pub fixed_threshold: Option<f64>,
    pub rng_seed: u64,
    pub scorer: Scorer,
    pub weight_mode: WeightMode,
    pub walk: RwwrConfig,
    pub edge_rule: EdgeRule,
    /// With `k == 2`, rank only devices of the opposite type (mobile vs
    /// desktop). Devices of unknown type are never filtered.
    pub cross_type: bool,
}

impl Default for LinkerConfig {
    fn default() -> Self {
        LinkerConfig {
            k: 2,
            variant: Variant::Ip,
            supervised: false,
            fixed_threshold: None,
            rng_seed: 0,
            scorer: Scorer::RandomWalk,
            weight_mode: WeightMode::Normalized,
            walk: RwwrConfig::default(),
            edge_rule: EdgeRule::Both,
            cross_type: true,
        }
    }
}

impl LinkerConfig {
    pub fn validate(&self) -> Result<()> {
        if self.k < 2 {
            return Err(Error::InvalidConfig(format!("K = {} must be at least 2", self.k)));
        }
        if let Some(t) = self.fixed_threshold {
            if !(t >= 0.0) {
                return Err(Error::InvalidConfig(format!("fixed threshold {t} must be non-negative")));
            }
        }
        self.walk.validate()
    }

    pub(crate) fn candidate_type(&self, g: &BipartiteGraph, device: usize) -> Option<DeviceType> {
        if self.cross_type && self.k == 2 {
            g.device_type(device).opposite()
        } else {
            None
        }
    }
}

/// Scores one seed device against all others under a [`LinkerConfig`].
pub(crate) enum SeedScorer {
    Walk(TransitionOperator),
    Bhattacharyya(BhattacharyyaScorer),
}

impl SeedScorer {
    pub(crate) fn new(g: &BipartiteGraph, cfg: &LinkerConfig) -> Self {
        match cfg.scorer {
            Scorer::RandomWalk => SeedScorer::Walk(make_transition(g, cfg.weight_mode)),
            Scorer::Bhattacharyya => SeedScorer::Bhattacharyya(BhattacharyyaScorer::new(g)),
        }
    }

    /// Top `depth` devices for `seed`; empty when the seed has no edges.
    pub(crate) fn rank(&self, g: &BipartiteGraph, cfg: &LinkerConfig, seed: usize, depth: usize) -> Result<CandidateList> {
        let filter = cfg.candidate_type(g, seed);
        let mut top = TopK::new(depth, |d| g.device_id(d));
        let seed_node = g.device_node(seed);
        match self {
            SeedScorer::Walk(op) => {
                if op.is_isolated(seed_node) {
                    return Ok(CandidateList { seed, entries: Vec::new() });
                }
                let dist = rwwr_from_seed(op, seed_node, &cfg.walk)?;
                for (d, &node) in g.device_nodes().iter().enumerate() {
                    if d != seed && filter.is_none_or(|t| g.device_type(d) == t) {
                        top.push(d, dist.p[node]);
                    }
                }
            }
            SeedScorer::Bhattacharyya(b) => {
                for (d, s) in b.scores_from(g, seed) {
                    if filter.is_none_or(|t| g.device_type(d) == t) {
                        top.push(d, s);
                    }
                }
            }
        }
        Ok(top.finish(seed))
    }
}

/// Candidate lists of every device in `g`, walks run in parallel.
pub fn rank_devices(g: &BipartiteGraph, cfg: &LinkerConfig, depth: usize) -> Result<Rankings> {
    let scorer = SeedScorer::new(g, cfg);
    let lists = (0..g.device_count())
        .into_par_iter()
        .map(|d| scorer.rank(g, cfg, d, depth))
        .collect::<Result<Vec<_>>>()?;
    Ok(Rankings {
        ids: g.device_ids(),
        lists,
    })
}

/// Candidate list of a single device.
pub fn rank_device(g: &BipartiteGraph, cfg: &LinkerConfig, device: usize, depth: usize) -> Result<CandidateList> {
    cfg.validate()?;
    if device >= g.device_count() {
        return Err(Error::InvalidConfig(format!("device position {device} out of range")));
    }
    SeedScorer::new(g, cfg).rank(g, cfg, device, depth)
}

/// Rankings for each component graph of the configured variant.
pub fn score_components(records: &[BrowsingRecord], cfg: &LinkerConfig, depth: usize) -> Result<Vec<Rankings>> {
    cfg.validate()?;
    cfg.variant
        .components()
        .iter()
        .map(|kinds| {
            let g = build_graph(records, kinds)?;
            rank_devices(&g, cfg, depth)
        })
        .collect()
}

#[derive(Clone, Debug)]
pub struct TrackOutput {
    pub prediction: Prediction,
    pub similarity: SimilarityGraph,
    /// Threshold applied per component graph; `None` when unthresholded.
    pub thresholds: Vec<Option<f64>>,
    /// Supervised components whose threshold could not be learned and which
    /// fell back to the unsupervised rule.
    pub fallbacks: usize,
}

/// Similarity graph of one component under the configured thresholding.
pub(crate) fn component_graph(
    rankings: &Rankings,
    cfg: &LinkerConfig,
    labels: Option<&LabeledPairs>,
) -> Result<(SimilarityGraph, Option<f64>, bool)> {
    let threshold = match (cfg.fixed_threshold, cfg.supervised) {
        (Some(t), _) => Some(t),
        (None, true) => {
            let labels = labels.ok_or_else(|| Error::InvalidConfig("supervised linking needs labeled pairs".into()))?;
            match learn_threshold(labels, rankings, cfg.k) {
                Ok(m) => Some(m.threshold),
                Err(Error::EmptyThresholdSet) => return Ok((build_similarity_graph_unsupervised(rankings, cfg.k), None, true)),
                Err(e) => return Err(e),
            }
        }
        (None, false) => None,
    };
    let sg = match threshold {
        Some(t) => build_similarity_graph_supervised(
            rankings,
            &ThresholdModel {
                threshold: t,
                score_set_size: 1,
            },
            cfg.k,
            cfg.edge_rule,
        ),
        None => build_similarity_graph_unsupervised(rankings, cfg.k),
    };
    Ok((sg, threshold, false))
}

/// Link devices from precomputed component rankings.
pub fn link_rankings(components: &[Rankings], cfg: &LinkerConfig, labels: Option<&LabeledPairs>) -> Result<TrackOutput> {
    let mut graphs = Vec::with_capacity(components.len());
    let mut thresholds = Vec::with_capacity(components.len());
    let mut fallbacks = 0;
    for r in components {
        let (sg, t, fell_back) = component_graph(r, cfg, labels)?;
        graphs.push(sg);
        thresholds.push(t);
        fallbacks += fell_back as usize;
    }
    let similarity = match (cfg.variant.combine_mode(), graphs.len()) {
        (Some(mode), 2) => combine(&graphs[0], &graphs[1], mode)?,
        _ => graphs.into_iter().next().unwrap_or_else(|| SimilarityGraph::new(Vec::new())),
    };
    let prediction = assign_groups(&similarity, cfg.rng_seed);
    Ok(TrackOutput {
        prediction,
        similarity,
        thresholds,
        fallbacks,
    })
}

/// The full linking pipeline over a set of records.
pub fn track(records: &[BrowsingRecord], cfg: &LinkerConfig, labels: Option<&LabeledPairs>) -> Result<TrackOutput> {
    let rankings = score_components(records, cfg, cfg.k - 1)?;
    link_rankings(&rankings, cfg, labels)
}
