use std::collections::{BTreeSet, HashMap};

use serde::{Deserialize, Serialize};

use crate::dataset::LabeledPairs;
use crate::error::{Error, Result};
use crate::rwwr::CandidateList;

/// Undirected, unweighted graph over devices.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SimilarityGraph {
    ids: Vec<String>,
    adj: Vec<BTreeSet<usize>>,
}

impl SimilarityGraph {
    pub fn new(ids: Vec<String>) -> Self {
        let adj = vec![BTreeSet::new(); ids.len()];
        SimilarityGraph { ids, adj }
    }

    pub fn ids(&self) -> &[String] {
        &self.ids
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn push_device(&mut self, id: String) -> usize {
        self.ids.push(id);
        self.adj.push(BTreeSet::new());
        self.ids.len() - 1
    }

    pub fn add_edge(&mut self, a: usize, b: usize) {
        if a == b {
            return;
        }
        self.adj[a].insert(b);
        self.adj[b].insert(a);
    }

    pub fn remove_edge(&mut self, a: usize, b: usize) {
        self.adj[a].remove(&b);
        self.adj[b].remove(&a);
    }

    pub fn has_edge(&self, a: usize, b: usize) -> bool {
        self.adj[a].contains(&b)
    }

    pub fn neighbors(&self, a: usize) -> &BTreeSet<usize> {
        &self.adj[a]
    }

    pub fn degree(&self, a: usize) -> usize {
        self.adj[a].len()
    }

    pub fn edge_count(&self) -> usize {
        self.adj.iter().map(BTreeSet::len).sum::<usize>() / 2
    }

    /// Each edge once, as `(smaller, larger)`.
    pub fn edges(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        self.adj
            .iter()
            .enumerate()
            .flat_map(|(a, ns)| ns.range(a + 1..).map(move |&b| (a, b)))
    }

    pub fn edge_set(&self) -> BTreeSet<(usize, usize)> {
        self.edges().collect()
    }

    /// Edges as id pairs, each pair ordered.
    pub fn id_edges(&self) -> BTreeSet<(String, String)> {
        self.edges()
            .map(|(a, b)| {
                let (x, y) = (&self.ids[a], &self.ids[b]);
                if x <= y {
                    (x.clone(), y.clone())
                } else {
                    (y.clone(), x.clone())
                }
            })
            .collect()
    }
}

/// Learned similarity cut-off.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ThresholdModel {
    pub threshold: f64,
    pub score_set_size: usize,
}

/// Whether a thresholded edge needs both directed scores to pass or just one.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EdgeRule {
    #[default]
    Both,
    Either,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CombineMode {
    Or,
    And,
}

/// Per-device candidate lists over a shared device numbering.
///
/// Lists may hold more than `K - 1` entries (the sweep wants runner-up
/// scores); every rule here only looks at the first `K - 1`.
#[derive(Clone, Debug, Default)]
pub struct Rankings {
    pub ids: Vec<String>,
    pub lists: Vec<CandidateList>,
}

impl Rankings {
    pub fn position(&self, id: &str) -> Option<usize> {
        self.ids.iter().position(|x| x == id)
    }

    fn index(&self) -> HashMap<&str, usize> {
        self.ids.iter().enumerate().map(|(i, s)| (s.as_str(), i)).collect()
    }

    /// Score of `to` in `from`'s top `k - 1`, if ranked there.
    pub fn ranked_score(&self, from: usize, to: usize, k: usize) -> Option<f64> {
        self.lists[from]
            .entries
            .iter()
            .take(k - 1)
            .find(|c| c.device == to)
            .map(|c| c.score)
    }
}

/// Edge iff each device is in the other's top `k - 1`.
pub fn build_similarity_graph_unsupervised(rankings: &Rankings, k: usize) -> SimilarityGraph {
    build_similarity_graph_supervised(
        rankings,
        &ThresholdModel {
            threshold: 0.0,
            score_set_size: 1,
        },
        k,
        EdgeRule::Both,
    )
}

/// Mutual top `k - 1`, plus the directed score(s) must reach the threshold.
pub fn build_similarity_graph_supervised(
    rankings: &Rankings,
    model: &ThresholdModel,
    k: usize,
    rule: EdgeRule,
) -> SimilarityGraph {
    let mut sg = SimilarityGraph::new(rankings.ids.clone());
    for (i, list) in rankings.lists.iter().enumerate() {
        for c in list.entries.iter().take(k - 1) {
            let j = c.device;
            if j <= i {
                continue;
            }
            if let Some(back) = rankings.ranked_score(j, i, k) {
                if passes(c.score, back, model.threshold, rule) {
                    sg.add_edge(i, j);
                }
            }
        }
        // pairs with j < i were handled when j was the seed
    }
    sg
}

pub(crate) fn passes(forward: f64, backward: f64, threshold: f64, rule: EdgeRule) -> bool {
    match rule {
        EdgeRule::Both => forward >= threshold && backward >= threshold,
        EdgeRule::Either => forward >= threshold || backward >= threshold,
    }
}

/// Minimum over the labeled pairs' scores that made it into the partner's
/// top `k - 1`, each direction on its own.
pub fn learn_threshold(labels: &LabeledPairs, rankings: &Rankings, k: usize) -> Result<ThresholdModel> {
    let index = rankings.index();
    let mut scores = Vec::new();
    for (a, b) in &labels.pairs {
        let (Some(&ia), Some(&ib)) = (index.get(a.as_str()), index.get(b.as_str())) else {
            continue;
        };
        if let Some(s) = rankings.ranked_score(ia, ib, k) {
            scores.push(s);
        }
        if let Some(s) = rankings.ranked_score(ib, ia, k) {
            scores.push(s);
        }
    }
    let threshold = scores
        .iter()
        .copied()
        .min_by(f64::total_cmp)
        .ok_or(Error::EmptyThresholdSet)?;
    Ok(ThresholdModel {
        threshold,
        score_set_size: scores.len(),
    })
}

pub fn combine(a: &SimilarityGraph, b: &SimilarityGraph, mode: CombineMode) -> Result<SimilarityGraph> {
    if a.ids != b.ids {
        return Err(Error::DeviceSetMismatch);
    }
    let mut out = SimilarityGraph::new(a.ids.clone());
    match mode {
        CombineMode::Or => {
            for (x, y) in a.edges().chain(b.edges()) {
                out.add_edge(x, y);
            }
        }
        CombineMode::And => {
            for (x, y) in a.edges().filter(|&(x, y)| b.has_edge(x, y)) {
                out.add_edge(x, y);
            }
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rwwr::Candidate;

    fn rankings(lists: &[&[(usize, f64)]]) -> Rankings {
        Rankings {
            ids: (0..lists.len()).map(|i| format!("d{i}")).collect(),
            lists: lists
                .iter()
                .enumerate()
                .map(|(seed, l)| CandidateList {
                    seed,
                    entries: l.iter().map(|&(device, score)| Candidate { device, score }).collect(),
                })
                .collect(),
        }
    }

    #[test]
    fn mutual_top1_makes_edge() {
        let r = rankings(&[&[(1, 0.5)], &[(0, 0.4)], &[]]);
        let sg = build_similarity_graph_unsupervised(&r, 2);
        assert!(sg.has_edge(0, 1));
        assert_eq!(sg.edge_count(), 1);
    }

    #[test]
    fn one_sided_top1_makes_no_edge() {
        let r = rankings(&[&[(1, 0.5)], &[(2, 0.4)], &[(1, 0.3)]]);
        let sg = build_similarity_graph_unsupervised(&r, 2);
        assert!(!sg.has_edge(0, 1));
        assert!(sg.has_edge(1, 2));
    }

    #[test]
    fn deeper_entries_are_ignored() {
        // 1 sits at rank 2 in 0's list, outside top-(K-1) for K = 2
        let r = rankings(&[&[(2, 0.5), (1, 0.4)], &[(0, 0.4)], &[]]);
        assert_eq!(build_similarity_graph_unsupervised(&r, 2).edge_count(), 0);
        assert_eq!(build_similarity_graph_unsupervised(&r, 3).edge_count(), 1);
    }

    #[test]
    fn threshold_from_both_directions() {
        let r = rankings(&[&[(1, 0.04)], &[(0, 0.05)]]);
        let labels = LabeledPairs {
            pairs: vec![("d0".into(), "d1".into())],
        };
        let m = learn_threshold(&labels, &r, 2).unwrap();
        assert_eq!(m.threshold, 0.04);
        assert_eq!(m.score_set_size, 2);
    }

    #[test]
    fn threshold_from_one_direction() {
        let r = rankings(&[&[(1, 0.04)], &[(2, 0.05)], &[]]);
        let labels = LabeledPairs {
            pairs: vec![("d0".into(), "d1".into())],
        };
        let m = learn_threshold(&labels, &r, 2).unwrap();
        assert_eq!(m.threshold, 0.04);
        assert_eq!(m.score_set_size, 1);
    }

    #[test]
    fn threshold_needs_a_ranked_pair() {
        let r = rankings(&[&[(2, 0.04)], &[(2, 0.05)], &[]]);
        let labels = LabeledPairs {
            pairs: vec![("d0".into(), "d1".into())],
        };
        assert!(matches!(learn_threshold(&labels, &r, 2), Err(Error::EmptyThresholdSet)));
    }

    #[test]
    fn supervised_rule() {
        let model = |t| ThresholdModel {
            threshold: t,
            score_set_size: 1,
        };
        let r = rankings(&[&[(1, 0.05)], &[(0, 0.06)]]);
        assert_eq!(build_similarity_graph_supervised(&r, &model(0.04), 2, EdgeRule::Both).edge_count(), 1);
        let r = rankings(&[&[(1, 0.03)], &[(0, 0.06)]]);
        assert_eq!(build_similarity_graph_supervised(&r, &model(0.04), 2, EdgeRule::Both).edge_count(), 0);
        assert_eq!(build_similarity_graph_supervised(&r, &model(0.04), 2, EdgeRule::Either).edge_count(), 1);
        assert_eq!(
            build_similarity_graph_supervised(&r, &model(0.0), 2, EdgeRule::Both),
            build_similarity_graph_unsupervised(&r, 2)
        );
    }

    fn graph(n: usize, edges: &[(usize, usize)]) -> SimilarityGraph {
        let mut g = SimilarityGraph::new((0..n).map(|i| format!("d{i}")).collect());
        for &(a, b) in edges {
            g.add_edge(a, b);
        }
        g
    }

    #[test]
    fn combinators() {
        let ab = graph(3, &[(0, 1)]);
        let bc = graph(3, &[(1, 2)]);
        assert_eq!(combine(&ab, &bc, CombineMode::Or).unwrap().edge_set(), [(0, 1), (1, 2)].into());
        assert_eq!(combine(&ab, &bc, CombineMode::And).unwrap().edge_count(), 0);
        for mode in [CombineMode::Or, CombineMode::And] {
            assert_eq!(combine(&ab, &ab, mode).unwrap(), ab);
        }
        assert!(matches!(combine(&ab, &graph(4, &[]), CombineMode::Or), Err(Error::DeviceSetMismatch)));
    }

    #[test]
    fn no_self_loops() {
        let mut g = graph(2, &[]);
        g.add_edge(1, 1);
        assert_eq!(g.edge_count(), 0);
    }
}
