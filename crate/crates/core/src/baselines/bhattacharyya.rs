use crate::dataset::{BrowsingRecord, LabeledPairs};
use crate::error::Result;
use crate::graph::BipartiteGraph;
use crate::linker::{track, LinkerConfig, Prediction, Scorer};

/// Bhattacharyya coefficient of two devices' visit distributions over the
/// graph's attributes: `Σ sqrt(w'_a · w'_b)` over common neighbors, where
/// `w'` is an edge weight over the device's total.
pub fn bhattacharyya_similarity(g: &BipartiteGraph, device_a: usize, device_b: usize) -> f64 {
    let (na, nb) = (g.device_node(device_a), g.device_node(device_b));
    let (da, db) = (g.weighted_degree(na), g.weighted_degree(nb));
    if da == 0.0 || db == 0.0 {
        return 0.0;
    }
    let (ea, eb) = (g.neighbors(na), g.neighbors(nb));
    let mut sum = 0.0;
    // adjacency lists are not guaranteed sorted after incremental updates
    for x in ea {
        if let Some(y) = eb.iter().find(|y| y.to == x.to) {
            sum += (x.weight / da * (y.weight / db)).sqrt();
        }
    }
    sum
}

/// One-to-all Bhattacharyya scoring.
pub(crate) struct BhattacharyyaScorer {
    position: Vec<Option<usize>>,
}

impl BhattacharyyaScorer {
    pub(crate) fn new(g: &BipartiteGraph) -> Self {
        let mut position = vec![None; g.node_count()];
        for (pos, &node) in g.device_nodes().iter().enumerate() {
            position[node] = Some(pos);
        }
        BhattacharyyaScorer { position }
    }

    /// Nonzero scores from `seed` to every other device sharing an attribute.
    pub(crate) fn scores_from(&self, g: &BipartiteGraph, seed: usize) -> Vec<(usize, f64)> {
        let seed_node = g.device_node(seed);
        let d_seed = g.weighted_degree(seed_node);
        if d_seed == 0.0 {
            return Vec::new();
        }
        let mut acc: Vec<(usize, f64)> = Vec::new();
        let mut slot: std::collections::HashMap<usize, usize> = std::collections::HashMap::new();
        for x in g.neighbors(seed_node) {
            let fa = x.weight / d_seed;
            for y in g.neighbors(x.to as usize) {
                let other = y.to as usize;
                if other == seed_node {
                    continue;
                }
                let fb = y.weight / g.weighted_degree(other);
                let pos = self.position[other].expect("attribute neighbors are devices");
                let i = *slot.entry(pos).or_insert_with(|| {
                    acc.push((pos, 0.0));
                    acc.len() - 1
                });
                acc[i].1 += (fa * fb).sqrt();
            }
        }
        acc
    }
}

/// The linking pipeline with Bhattacharyya scores in place of walks.
pub fn bat_track(records: &[BrowsingRecord], cfg: &LinkerConfig, labels: Option<&LabeledPairs>) -> Result<Prediction> {
    let cfg = LinkerConfig {
        scorer: Scorer::Bhattacharyya,
        ..cfg.clone()
    };
    Ok(track(records, &cfg, labels)?.prediction)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::AttributeKind;
    use crate::graph::build_graph;
    use crate::graph::tests::toy_records;
    use crate::linker::Variant;

    fn toy() -> BipartiteGraph {
        build_graph(&toy_records(), &[AttributeKind::Domain]).unwrap()
    }

    fn pos(g: &BipartiteGraph, id: &str) -> usize {
        g.device_position(id).unwrap()
    }

    #[test]
    fn toy_scores() {
        let g = toy();
        assert_eq!(bhattacharyya_similarity(&g, pos(&g, "M1"), pos(&g, "D1")), 0.0);
        let s = bhattacharyya_similarity(&g, pos(&g, "M2"), pos(&g, "D2"));
        assert!((s - (1.0f64 / 3.0 * 0.5).sqrt()).abs() < 1e-12);
    }

    #[test]
    fn identical_distributions_score_one() {
        let recs = vec![
            BrowsingRecord::ip("a", "1.1.1.1", 2),
            BrowsingRecord::ip("a", "1.1.1.2", 6),
            BrowsingRecord::ip("b", "1.1.1.1", 1),
            BrowsingRecord::ip("b", "1.1.1.2", 3),
        ];
        let g = build_graph(&recs, &[AttributeKind::Ip]).unwrap();
        assert!((bhattacharyya_similarity(&g, 0, 1) - 1.0).abs() < 1e-12);
    }

    #[test]
    fn one_to_all_matches_pairwise() {
        let g = toy();
        let scorer = BhattacharyyaScorer::new(&g);
        for seed in 0..g.device_count() {
            let all = scorer.scores_from(&g, seed);
            for d in 0..g.device_count() {
                let expected = if d == seed { 0.0 } else { bhattacharyya_similarity(&g, seed, d) };
                let got = all.iter().find(|(p, _)| *p == d).map_or(0.0, |e| e.1);
                assert!((got - expected).abs() < 1e-12);
                assert_eq!(bhattacharyya_similarity(&g, seed, d), bhattacharyya_similarity(&g, d, seed));
            }
        }
    }

    #[test]
    fn toy_bat_leaves_m1_unmatched() {
        let cfg = LinkerConfig {
            variant: Variant::Domain,
            ..Default::default()
        };
        let p = bat_track(&toy_records(), &cfg, None).unwrap();
        assert!(p.no_match.contains("M1"));
        assert!(p.group_of("M1").is_none());
    }

    #[test]
    fn threshold_above_all_scores_matches_nothing() {
        let cfg = LinkerConfig {
            variant: Variant::Domain,
            fixed_threshold: Some(1.5),
            ..Default::default()
        };
        let p = bat_track(&toy_records(), &cfg, None).unwrap();
        assert!(p.groups.is_empty());
        assert_eq!(p.no_match.len(), 4);
    }
}
