//! Random walk with restart.
//!
//! `p(t+1) = (1 - alpha) * A * p(t) + alpha * e_seed`, starting from
//! `p(0) = e_seed`, until the L1 change drops below `epsilon` or the
//! iteration budget runs out.
//!
//! Each output entry is computed by a single worker from the same inputs,
//! and the residual is reduced over fixed-size row chunks in chunk order,
//! so the result is bit-identical whether rows are spread over threads or not.

use std::cmp::Ordering;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataset::DeviceType;
use crate::error::{Error, Result};
use crate::graph::{BipartiteGraph, TransitionOperator};

const ROW_CHUNK: usize = 2048;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RwwrConfig {
    /// Restart probability.
    pub alpha: f64,
    /// `None` means `max(ceil(ln |V|), 10)`.
    pub max_iterations: Option<usize>,
    /// L1 change between consecutive iterates at which to stop.
    pub epsilon: f64,
    /// Split each matrix-vector product over the rayon pool.
    pub parallel_rows: bool,
}

impl Default for RwwrConfig {
    fn default() -> Self {
        RwwrConfig {
            alpha: 0.15,
            max_iterations: None,
            epsilon: 1e-3,
            parallel_rows: false,
        }
    }
}

impl RwwrConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return Err(Error::InvalidConfig(format!("alpha {} must lie in (0, 1)", self.alpha)));
        }
        if self.max_iterations == Some(0) {
            return Err(Error::InvalidConfig("max_iterations must be at least 1".into()));
        }
        if !(self.epsilon > 0.0) {
            return Err(Error::InvalidConfig(format!("epsilon {} must be positive", self.epsilon)));
        }
        Ok(())
    }

    pub fn iterations_for(&self, node_count: usize) -> usize {
        self.max_iterations.unwrap_or_else(|| default_iterations(node_count))
    }
}

/// `max(ceil(ln n), 10)`.
pub fn default_iterations(node_count: usize) -> usize {
    let ln = (node_count.max(1) as f64).ln().ceil() as usize;
    ln.max(10)
}

#[derive(Clone, Debug, PartialEq)]
pub struct StationaryDistribution {
    pub seed: usize,
    pub p: Vec<f64>,
    pub iterations_used: usize,
    pub final_residual: f64,
}

pub fn rwwr_from_seed(op: &TransitionOperator, seed: usize, cfg: &RwwrConfig) -> Result<StationaryDistribution> {
    rwwr_observed(op, seed, cfg, |_, _, _| {})
}

/// Like [`rwwr_from_seed`], calling `observer(t, p(t), residual)` after every
/// iteration.
pub fn rwwr_observed<F>(op: &TransitionOperator, seed: usize, cfg: &RwwrConfig, mut observer: F) -> Result<StationaryDistribution>
where
    F: FnMut(usize, &[f64], f64),
{
    cfg.validate()?;
    let n = op.dim();
    if seed >= n {
        return Err(Error::InvalidConfig(format!("seed node {seed} out of range ({n} nodes)")));
    }
    if op.is_isolated(seed) {
        return Err(Error::UnlinkableDevice(format!("node {seed}")));
    }
    let max_iter = cfg.iterations_for(n);
    let keep = 1.0 - cfg.alpha;

    let mut p = vec![0.0; n];
    p[seed] = 1.0;
    let mut next = vec![0.0; n];
    let mut scaled = vec![0.0; n];
    let mut residual = f64::INFINITY;
    let mut used = 0;

    for t in 1..=max_iter {
        op.scale_by_degree(&p, &mut scaled);
        let step = |(ci, chunk): (usize, &mut [f64])| -> f64 {
            let start = ci * ROW_CHUNK;
            let mut diff = 0.0;
            for (i, out) in chunk.iter_mut().enumerate() {
                let u = start + i;
                let mut v = keep * op.row_dot(u, &scaled);
                if u == seed {
                    v += cfg.alpha;
                }
                diff += (v - p[u]).abs();
                *out = v;
            }
            diff
        };
        let partials: Vec<f64> = if cfg.parallel_rows && n > ROW_CHUNK {
            next.par_chunks_mut(ROW_CHUNK).enumerate().map(step).collect()
        } else {
            next.chunks_mut(ROW_CHUNK).enumerate().map(step).collect()
        };
        residual = partials.iter().sum();
        std::mem::swap(&mut p, &mut next);
        used = t;
        observer(t, &p, residual);
        if residual < cfg.epsilon {
            break;
        }
    }

    Ok(StationaryDistribution {
        seed,
        p,
        iterations_used: used,
        final_residual: residual,
    })
}

/// Scores from one seed device to the other devices, by device position.
#[derive(Clone, Debug)]
pub struct SimilarityScores<'g> {
    pub graph: &'g BipartiteGraph,
    pub seed: usize,
    pub entries: Vec<(usize, f64)>,
}

impl SimilarityScores<'_> {
    pub fn get(&self, device: usize) -> Option<f64> {
        self.entries.iter().find(|(d, _)| *d == device).map(|(_, s)| *s)
    }

    /// `(device_id, score)` pairs.
    pub fn by_id(&self) -> Vec<(&str, f64)> {
        self.entries.iter().map(|&(d, s)| (self.graph.device_id(d), s)).collect()
    }
}

/// Restrict a walk to device nodes, dropping the seed and, if a type is
/// given, every device of another type. Scores are raw probabilities.
pub fn device_similarities<'g>(
    dist: &StationaryDistribution,
    g: &'g BipartiteGraph,
    type_filter: Option<DeviceType>,
) -> SimilarityScores<'g> {
    let seed_label = &g.node(dist.seed).label;
    let seed = match g.node(dist.seed).is_device() {
        true => g.device_position(seed_label).unwrap_or(usize::MAX),
        false => usize::MAX,
    };
    let entries = (0..g.device_count())
        .filter(|&d| d != seed)
        .filter(|&d| type_filter.is_none_or(|t| g.device_type(d) == t))
        .map(|d| (d, dist.p[g.device_node(d)]))
        .collect();
    SimilarityScores {
        graph: g,
        seed,
        entries,
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Candidate {
    pub device: usize,
    pub score: f64,
}

/// A seed's most similar devices, best first.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct CandidateList {
    pub seed: usize,
    pub entries: Vec<Candidate>,
}

impl CandidateList {
    pub fn contains(&self, device: usize) -> bool {
        self.entries.iter().any(|c| c.device == device)
    }

    pub fn score_of(&self, device: usize) -> Option<f64> {
        self.entries.iter().find(|c| c.device == device).map(|c| c.score)
    }

    pub fn truncated(&self, k: usize) -> CandidateList {
        CandidateList {
            seed: self.seed,
            entries: self.entries.iter().take(k).copied().collect(),
        }
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}

/// Keeps the best `k` of a stream of `(device, score)` pairs. Higher scores
/// win, equal scores go to the smaller device id, zero scores never enter.
pub(crate) struct TopK<'a, F: Fn(usize) -> &'a str> {
    k: usize,
    id: F,
    best: Vec<Candidate>,
}

impl<'a, F: Fn(usize) -> &'a str> TopK<'a, F> {
    pub(crate) fn new(k: usize, id: F) -> Self {
        TopK {
            k,
            id,
            best: Vec::with_capacity(k + 1),
        }
    }

    fn before(&self, a: &Candidate, b: &Candidate) -> bool {
        match b.score.total_cmp(&a.score) {
            Ordering::Less => true,
            Ordering::Greater => false,
            Ordering::Equal => (self.id)(a.device) < (self.id)(b.device),
        }
    }

    #[inline]
    pub(crate) fn push(&mut self, device: usize, score: f64) {
        if !(score > 0.0) || self.k == 0 {
            return;
        }
        let c = Candidate { device, score };
        if self.best.len() == self.k {
            let last = self.best[self.k - 1];
            if last.score > score {
                return;
            }
            if !self.before(&c, &last) {
                return;
            }
        }
        let pos = self.best.iter().position(|b| self.before(&c, b)).unwrap_or(self.best.len());
        self.best.insert(pos, c);
        self.best.truncate(self.k);
    }

    pub(crate) fn finish(self, seed: usize) -> CandidateList {
        CandidateList {
            seed,
            entries: self.best,
        }
    }
}

/// The `k` highest scoring devices; ties by device id, zeros excluded.
pub fn top_k_candidates(scores: &SimilarityScores<'_>, k: usize) -> CandidateList {
    let g = scores.graph;
    let mut top = TopK::new(k, |d| g.device_id(d));
    for &(d, s) in &scores.entries {
        top.push(d, s);
    }
    top.finish(scores.seed)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::{AttributeKind, BrowsingRecord};
    use crate::graph::{build_graph, make_transition, WeightMode};

    fn toy() -> BipartiteGraph {
        let m = DeviceType::Mobile;
        let d = DeviceType::Desktop;
        let recs = vec![
            BrowsingRecord::domain("M1", "twitter", 1).with_type(m),
            BrowsingRecord::domain("D1", "facebook", 1).with_type(d),
            BrowsingRecord::domain("M2", "facebook", 1).with_type(m),
            BrowsingRecord::domain("M2", "twitter", 1).with_type(m),
            BrowsingRecord::domain("M2", "amazon", 1).with_type(m),
            BrowsingRecord::domain("D2", "amazon", 1).with_type(d),
            BrowsingRecord::domain("D2", "coursera", 1).with_type(d),
        ];
        build_graph(&recs, &[AttributeKind::Domain]).unwrap()
    }

    #[test]
    fn two_node_closed_form() {
        let g = build_graph(&[BrowsingRecord::ip("D", "P", 7)], &[AttributeKind::Ip]).unwrap();
        let op = make_transition(&g, WeightMode::Normalized);
        let cfg = RwwrConfig {
            max_iterations: Some(10_000),
            epsilon: 1e-14,
            ..Default::default()
        };
        let dist = rwwr_from_seed(&op, g.device_node(0), &cfg).unwrap();
        let a: f64 = 0.15;
        let p_d = a / (1.0 - (1.0 - a).powi(2));
        assert!((p_d - 0.5405).abs() < 1e-4);
        assert!((dist.p[g.device_node(0)] - p_d).abs() < 1e-12);
        assert!((dist.p[1 - g.device_node(0)] - (1.0 - p_d)).abs() < 1e-12);
    }

    #[test]
    fn toy_four_step_scores() {
        let g = toy();
        let op = make_transition(&g, WeightMode::Normalized);
        let cfg = RwwrConfig {
            max_iterations: Some(4),
            ..Default::default()
        };
        let m1 = g.device_node(g.device_position("M1").unwrap());
        let dist = rwwr_from_seed(&op, m1, &cfg).unwrap();
        let scores = device_similarities(&dist, &g, Some(DeviceType::Desktop));
        let by_id = scores.by_id();
        assert_eq!(by_id.len(), 2);
        let d1 = by_id.iter().find(|(id, _)| *id == "D1").unwrap().1;
        let d2 = by_id.iter().find(|(id, _)| *id == "D2").unwrap().1;
        assert!((d1 - 0.032).abs() <= 0.003, "{d1}");
        assert!((d2 - 0.026).abs() <= 0.003, "{d2}");
        assert!(d1 > d2);
        let top = top_k_candidates(&scores, 1);
        assert_eq!(g.device_id(top.entries[0].device), "D1");
    }

    #[test]
    fn toy_converged_ordering_holds() {
        let g = toy();
        let op = make_transition(&g, WeightMode::Normalized);
        let cfg = RwwrConfig {
            max_iterations: Some(10_000),
            epsilon: 1e-13,
            ..Default::default()
        };
        let m1 = g.device_node(g.device_position("M1").unwrap());
        let dist = rwwr_from_seed(&op, m1, &cfg).unwrap();
        let s = device_similarities(&dist, &g, Some(DeviceType::Desktop));
        assert!(s.get(g.device_position("D1").unwrap()).unwrap() > s.get(g.device_position("D2").unwrap()).unwrap());
    }

    #[test]
    fn seed_is_excluded() {
        let g = toy();
        let op = make_transition(&g, WeightMode::Normalized);
        for d in 0..g.device_count() {
            let dist = rwwr_from_seed(&op, g.device_node(d), &RwwrConfig::default()).unwrap();
            let s = device_similarities(&dist, &g, None);
            assert!(s.entries.iter().all(|&(x, _)| x != d));
            assert_eq!(s.entries.len(), 3);
        }
    }

    #[test]
    fn single_device_has_no_scores() {
        let g = build_graph(&[BrowsingRecord::ip("a", "x", 1)], &[AttributeKind::Ip]).unwrap();
        let op = make_transition(&g, WeightMode::Normalized);
        let dist = rwwr_from_seed(&op, g.device_node(0), &RwwrConfig::default()).unwrap();
        assert!(device_similarities(&dist, &g, None).entries.is_empty());
    }

    #[test]
    fn isolated_seed_is_unlinkable() {
        let recs = vec![BrowsingRecord::ip("a", "x", 1), BrowsingRecord::domain("b", "y", 1)];
        let g = build_graph(&recs, &[AttributeKind::Ip]).unwrap();
        let op = make_transition(&g, WeightMode::Normalized);
        let b = g.device_node(g.device_position("b").unwrap());
        assert!(matches!(rwwr_from_seed(&op, b, &RwwrConfig::default()), Err(Error::UnlinkableDevice(_))));
    }

    #[test]
    fn bad_configs() {
        for cfg in [
            RwwrConfig { alpha: 0.0, ..Default::default() },
            RwwrConfig { alpha: 1.0, ..Default::default() },
            RwwrConfig { max_iterations: Some(0), ..Default::default() },
            RwwrConfig { epsilon: 0.0, ..Default::default() },
        ] {
            assert!(cfg.validate().is_err());
        }
    }

    #[test]
    fn default_iteration_budget() {
        assert_eq!(default_iterations(8), 10);
        assert_eq!(default_iterations(1_000_000), 14);
    }

    fn scores_of<'g>(g: &'g BipartiteGraph, entries: Vec<(usize, f64)>) -> SimilarityScores<'g> {
        SimilarityScores { graph: g, seed: usize::MAX, entries }
    }

    #[test]
    fn top_k_rules() {
        let recs: Vec<_> = ["a", "b", "c"].iter().map(|d| BrowsingRecord::ip(*d, "x", 1)).collect();
        let g = build_graph(&recs, &[AttributeKind::Ip]).unwrap();
        let zero = scores_of(&g, vec![(0, 0.0), (1, 0.0)]);
        assert!(top_k_candidates(&zero, 2).is_empty());

        let tie = scores_of(&g, vec![(1, 0.5), (0, 0.5)]);
        let top = top_k_candidates(&tie, 1);
        assert_eq!(top.entries, vec![Candidate { device: 0, score: 0.5 }]);

        let few = scores_of(&g, vec![(2, 0.1), (1, 0.0)]);
        assert_eq!(top_k_candidates(&few, 3).len(), 1);

        let order = scores_of(&g, vec![(0, 0.1), (1, 0.3), (2, 0.2)]);
        let got: Vec<usize> = top_k_candidates(&order, 2).entries.iter().map(|c| c.device).collect();
        assert_eq!(got, vec![1, 2]);
    }

    #[test]
    fn parallel_rows_are_bit_identical() {
        // enough nodes to span several row chunks
        let mut recs = Vec::new();
        for d in 0..3000 {
            for j in 0..3 {
                recs.push(BrowsingRecord::ip(format!("d{d}"), format!("ip{}", (d * 7 + j * 13) % 2500), 1 + (d % 5) as u64));
            }
        }
        let g = build_graph(&recs, &[AttributeKind::Ip]).unwrap();
        let op = make_transition(&g, WeightMode::Normalized);
        let serial = rwwr_from_seed(&op, g.device_node(0), &RwwrConfig::default()).unwrap();
        let pool = rayon::ThreadPoolBuilder::new().num_threads(4).build().unwrap();
        let par = pool
            .install(|| {
                rwwr_from_seed(
                    &op,
                    g.device_node(0),
                    &RwwrConfig {
                        parallel_rows: true,
                        ..Default::default()
                    },
                )
            })
            .unwrap();
        assert_eq!(serial, par);
    }
}
