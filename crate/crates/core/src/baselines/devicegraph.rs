use std::collections::{BTreeMap, BTreeSet};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::dataset::{Attribute, BrowsingRecord};
use crate::linker::Prediction;

/// Devices joined when they used a common IP; weight counts distinct
/// shared IPs.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ColocationGraph {
    ids: Vec<String>,
    adj: Vec<BTreeMap<usize, f64>>,
}

impl ColocationGraph {
    pub fn ids(&self) -> &[String] {
        &self.ids
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn weight(&self, a: usize, b: usize) -> f64 {
        self.adj[a].get(&b).copied().unwrap_or(0.0)
    }

    pub fn neighbors(&self, a: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        self.adj[a].iter().map(|(&b, &w)| (b, w))
    }

    pub fn edge_count(&self) -> usize {
        self.adj.iter().map(BTreeMap::len).sum::<usize>() / 2
    }

    pub fn total_weight(&self) -> f64 {
        self.adj.iter().flat_map(|m| m.values()).sum::<f64>() / 2.0
    }
}

/// Every device in `records` is a node; only IP records create edges.
pub fn build_colocation_graph(records: &[BrowsingRecord]) -> ColocationGraph {
    let ids: Vec<String> = records
        .iter()
        .map(|r| r.device_id.clone())
        .collect::<BTreeSet<_>>()
        .into_iter()
        .collect();
    let pos: BTreeMap<&str, usize> = ids.iter().enumerate().map(|(i, s)| (s.as_str(), i)).collect();
    let mut by_ip: BTreeMap<&str, BTreeSet<usize>> = BTreeMap::new();
    for r in records {
        if let Attribute::Ip(ip) = &r.attribute {
            by_ip.entry(ip).or_default().insert(pos[r.device_id.as_str()]);
        }
    }
    let mut adj = vec![BTreeMap::new(); ids.len()];
    for devices in by_ip.values() {
        let devices: Vec<usize> = devices.iter().copied().collect();
        for (i, &a) in devices.iter().enumerate() {
            for &b in &devices[i + 1..] {
                *adj[a].entry(b).or_insert(0.0) += 1.0;
                *adj[b].entry(a).or_insert(0.0) += 1.0;
            }
        }
    }
    ColocationGraph { ids, adj }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Partition {
    /// Community of each device, numbered by first appearance.
    pub assignment: Vec<usize>,
    pub modularity: f64,
}

impl Partition {
    pub fn community_count(&self) -> usize {
        self.assignment.iter().max().map_or(0, |m| m + 1)
    }

    pub fn communities(&self) -> Vec<Vec<usize>> {
        let mut out = vec![Vec::new(); self.community_count()];
        for (v, &c) in self.assignment.iter().enumerate() {
            out[c].push(v);
        }
        out
    }
}

/// Weighted graph with self-loops, as produced by aggregation.
struct Level {
    adj: Vec<Vec<(usize, f64)>>,
    self_loop: Vec<f64>,
}

impl Level {
    fn degree(&self, v: usize) -> f64 {
        self.adj[v].iter().map(|e| e.1).sum::<f64>() + self.self_loop[v]
    }
}

/// Modularity of `assignment` on `g`.
pub fn modularity(g: &ColocationGraph, assignment: &[usize]) -> f64 {
    let two_m = 2.0 * g.total_weight();
    if two_m == 0.0 {
        return 0.0;
    }
    let n = assignment.iter().max().map_or(0, |m| m + 1);
    let mut inside = vec![0.0; n];
    let mut total = vec![0.0; n];
    for v in 0..g.len() {
        for (u, w) in g.neighbors(v) {
            total[assignment[v]] += w;
            if assignment[u] == assignment[v] {
                inside[assignment[v]] += w;
            }
        }
    }
    inside
        .iter()
        .zip(&total)
        .map(|(i, t)| i / two_m - (t / two_m).powi(2))
        .sum()
}

const MIN_GAIN: f64 = 1e-12;

/// One local-move phase. Returns the community of each node and whether any
/// node moved.
fn local_moves(level: &Level, two_m: f64, rng: &mut ChaCha8Rng) -> (Vec<usize>, bool) {
    let n = level.adj.len();
    let k: Vec<f64> = (0..n).map(|v| level.degree(v)).collect();
    let mut comm: Vec<usize> = (0..n).collect();
    let mut tot = k.clone();
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(rng);
    let mut links = vec![0.0; n];
    let mut touched: Vec<usize> = Vec::new();
    let mut moved_any = false;
    loop {
        let mut moved = false;
        for &v in &order {
            let own = comm[v];
            for &(u, w) in &level.adj[v] {
                if links[comm[u]] == 0.0 {
                    touched.push(comm[u]);
                }
                links[comm[u]] += w;
            }
            tot[own] -= k[v];
            let gain = |c: usize, links: &[f64]| links[c] - tot[c] * k[v] / two_m;
            let mut best = own;
            let mut best_gain = gain(own, &links);
            for &c in &touched {
                let g = gain(c, &links);
                if g > best_gain + MIN_GAIN {
                    best = c;
                    best_gain = g;
                }
            }
            tot[best] += k[v];
            if best != own {
                comm[v] = best;
                moved = true;
            }
            for &c in &touched {
                links[c] = 0.0;
            }
            touched.clear();
        }
        if !moved {
            break;
        }
        moved_any = true;
    }
    (comm, moved_any)
}

fn aggregate(level: &Level, comm: &[usize]) -> (Level, Vec<usize>) {
    let mut relabel = vec![usize::MAX; comm.len()];
    let mut next = 0;
    for &c in comm {
        if relabel[c] == usize::MAX {
            relabel[c] = next;
            next += 1;
        }
    }
    let node_comm: Vec<usize> = comm.iter().map(|&c| relabel[c]).collect();
    let mut maps: Vec<BTreeMap<usize, f64>> = vec![BTreeMap::new(); next];
    let mut self_loop = vec![0.0; next];
    for v in 0..level.adj.len() {
        let cv = node_comm[v];
        self_loop[cv] += level.self_loop[v];
        for &(u, w) in &level.adj[v] {
            let cu = node_comm[u];
            if cu == cv {
                self_loop[cv] += w;
            } else {
                *maps[cv].entry(cu).or_insert(0.0) += w;
            }
        }
    }
    let adj = maps.into_iter().map(|m| m.into_iter().collect()).collect();
    (Level { adj, self_loop }, node_comm)
}

/// Louvain modularity optimization. Node visit order is shuffled with `seed`.
pub fn louvain_communities(g: &ColocationGraph, seed: u64) -> Partition {
    let n = g.len();
    let two_m = 2.0 * g.total_weight();
    let mut assignment: Vec<usize> = (0..n).collect();
    if two_m > 0.0 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut level = Level {
            adj: (0..n).map(|v| g.neighbors(v).collect()).collect(),
            self_loop: vec![0.0; n],
        };
        loop {
            let (comm, moved) = local_moves(&level, two_m, &mut rng);
            if !moved {
                break;
            }
            let (next, node_comm) = aggregate(&level, &comm);
            for a in &mut assignment {
                *a = node_comm[*a];
            }
            level = next;
        }
    }
    let assignment = renumber(&assignment);
    let q = modularity(g, &assignment);
    Partition {
        assignment,
        modularity: q,
    }
}

fn renumber(assignment: &[usize]) -> Vec<usize> {
    let mut map = BTreeMap::new();
    assignment
        .iter()
        .map(|&c| {
            let next = map.len();
            *map.entry(c).or_insert(next)
        })
        .collect()
}

/// Communities of the IP colocation graph as groups.
pub fn devicegraph_track(records: &[BrowsingRecord], seed: u64) -> Prediction {
    let g = build_colocation_graph(records);
    let partition = louvain_communities(&g, seed);
    let mut groups = Vec::new();
    let mut no_match = BTreeSet::new();
    for members in partition.communities() {
        if members.len() >= 2 {
            groups.push(members.iter().map(|&v| g.ids[v].clone()).collect());
        } else {
            no_match.extend(members.iter().map(|&v| g.ids[v].clone()));
        }
    }
    Prediction::from_parts(groups, no_match)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ip(device: &str, ip: &str) -> BrowsingRecord {
        BrowsingRecord::ip(device, ip, 1)
    }

    #[test]
    fn shared_ip_count_is_weight() {
        let g = build_colocation_graph(&[ip("a", "1"), ip("a", "2"), ip("b", "1"), ip("b", "2"), ip("c", "3")]);
        assert_eq!(g.edge_count(), 1);
        assert_eq!(g.weight(0, 1), 2.0);
        assert_eq!(g.weight(1, 0), 2.0);
    }

    #[test]
    fn nat_ip_makes_a_clique() {
        let recs: Vec<_> = (0..10).map(|i| ip(&format!("d{i}"), "nat")).collect();
        let g = build_colocation_graph(&recs);
        assert_eq!(g.edge_count(), 45);
        let p = devicegraph_track(&recs, 0);
        assert_eq!(p.groups.len(), 1);
        assert_eq!(p.groups[0].len(), 10);
    }

    #[test]
    fn two_triangles() {
        let recs = vec![
            ip("a", "x"),
            ip("b", "x"),
            ip("c", "x"),
            ip("d", "y"),
            ip("e", "y"),
            ip("f", "y"),
        ];
        let g = build_colocation_graph(&recs);
        let p = louvain_communities(&g, 3);
        assert_eq!(p.assignment, vec![0, 0, 0, 1, 1, 1]);
        assert!((p.modularity - 0.5).abs() < 1e-12);
    }

    #[test]
    fn singleton_and_edgeless() {
        let g = build_colocation_graph(&[BrowsingRecord::domain("a", "x.com", 1)]);
        assert_eq!(louvain_communities(&g, 0).assignment, vec![0]);
        let p = devicegraph_track(&[ip("a", "1"), ip("b", "2")], 0);
        assert!(p.groups.is_empty());
        assert_eq!(p.no_match.len(), 2);
    }

    #[test]
    fn bridged_cliques_split() {
        // two 4-cliques joined by one edge
        let mut recs = Vec::new();
        for i in 0..4 {
            recs.push(ip(&format!("a{i}"), "p"));
            recs.push(ip(&format!("b{i}"), "q"));
        }
        recs.push(ip("a0", "bridge"));
        recs.push(ip("b0", "bridge"));
        let p = devicegraph_track(&recs, 1);
        assert_eq!(p.groups.len(), 2);
        assert!(p.groups.iter().all(|g| g.len() == 4));
    }
}
