use super::groups::assign_groups;
use super::similarity::{passes, EdgeRule, Rankings, SimilarityGraph};
use super::{combine, component_graph, rank_devices, LinkerConfig, Prediction, SeedScorer};
use crate::dataset::{AttributeKind, BrowsingRecord, LabeledPairs};
use crate::error::{Error, Result};
use crate::graph::{build_graph, BipartiteGraph};

/// Where an incoming device ended up.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct LinkOutcome {
    pub device: String,
    /// The device's group, or `None` for no match.
    pub group: Option<Vec<String>>,
}

struct Component {
    graph: BipartiteGraph,
    kinds: Vec<AttributeKind>,
    rankings: Rankings,
    threshold: Option<f64>,
    similarity: SimilarityGraph,
}

impl Component {
    /// Re-derive all similarity edges touching `d` from the current lists.
    fn refresh_edges(&mut self, d: usize, cfg: &LinkerConfig) {
        let old: Vec<usize> = self.similarity.neighbors(d).iter().copied().collect();
        for j in old {
            self.similarity.remove_edge(d, j);
        }
        let rule = if self.threshold.is_some() { cfg.edge_rule } else { EdgeRule::Both };
        let t = self.threshold.unwrap_or(0.0);
        for c in self.rankings.lists[d].entries.iter().take(cfg.k - 1) {
            if let Some(back) = self.rankings.ranked_score(c.device, d, cfg.k) {
                if passes(c.score, back, t, rule) {
                    self.similarity.add_edge(d, c.device);
                }
            }
        }
    }
}

/// Links devices one at a time against an already linked population.
///
/// A new device is walked from once. Only its own candidates get their
/// lists recomputed, so devices further away keep their old rankings until
/// the population is re-linked in batch.
pub struct IncrementalLinker {
    cfg: LinkerConfig,
    components: Vec<Component>,
    similarity: SimilarityGraph,
    prediction: Prediction,
}

impl IncrementalLinker {
    pub fn new(records: &[BrowsingRecord], cfg: LinkerConfig, labels: Option<&LabeledPairs>) -> Result<Self> {
        cfg.validate()?;
        let mut components = Vec::new();
        for kinds in cfg.variant.components() {
            let graph = build_graph(records, &kinds)?;
            let rankings = rank_devices(&graph, &cfg, cfg.k - 1)?;
            let (similarity, threshold, _) = component_graph(&rankings, &cfg, labels)?;
            components.push(Component {
                graph,
                kinds,
                rankings,
                threshold,
                similarity,
            });
        }
        let mut linker = IncrementalLinker {
            cfg,
            components,
            similarity: SimilarityGraph::new(Vec::new()),
            prediction: Prediction::default(),
        };
        linker.regroup()?;
        Ok(linker)
    }

    pub fn prediction(&self) -> &Prediction {
        &self.prediction
    }

    pub fn similarity(&self) -> &SimilarityGraph {
        &self.similarity
    }

    pub fn device_count(&self) -> usize {
        self.similarity.len()
    }

    fn regroup(&mut self) -> Result<()> {
        self.similarity = match (self.cfg.variant.combine_mode(), self.components.as_slice()) {
            (Some(mode), [a, b]) => combine(&a.similarity, &b.similarity, mode)?,
            (_, [a, ..]) => a.similarity.clone(),
            (_, []) => SimilarityGraph::new(Vec::new()),
        };
        self.prediction = assign_groups(&self.similarity, self.cfg.rng_seed);
        Ok(())
    }

    /// Add one device (all of its records) and link it.
    pub fn link_incoming_device(&mut self, records: &[BrowsingRecord]) -> Result<LinkOutcome> {
        let Some(first) = records.first() else {
            return Err(Error::InvalidConfig("no records for the incoming device".into()));
        };
        let device = first.device_id.clone();
        if self.components[0].graph.device_position(&device).is_some() {
            return Err(Error::DuplicateDevice(device));
        }
        let cfg = self.cfg.clone();
        for comp in &mut self.components {
            let pos = comp.graph.add_device(records, &comp.kinds)?;
            comp.rankings.ids.push(device.clone());
            let pushed = comp.similarity.push_device(device.clone());
            debug_assert_eq!(pos, pushed);

            let scorer = SeedScorer::new(&comp.graph, &cfg);
            let list = scorer.rank(&comp.graph, &cfg, pos, cfg.k - 1)?;
            let touched: Vec<usize> = list.entries.iter().map(|c| c.device).collect();
            comp.rankings.lists.push(list);
            for &c in &touched {
                let relisted = scorer.rank(&comp.graph, &cfg, c, cfg.k - 1)?;
                comp.rankings.lists[c] = relisted;
            }
            comp.refresh_edges(pos, &cfg);
            for &c in &touched {
                comp.refresh_edges(c, &cfg);
            }
        }
        self.regroup()?;
        let group = self.prediction.group_of(&device).map(<[String]>::to_vec);
        Ok(LinkOutcome { device, group })
    }
}
