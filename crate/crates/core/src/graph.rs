//! Weighted device–attribute bipartite graphs and their random-walk
//! transition operators.
//!
//! Edges keep raw visit counts. How those counts become transition
//! probabilities is decided when the operator is built, so one graph serves
//! every [`WeightMode`].

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::io::Write;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::dataset::{Attribute, AttributeKind, BrowsingRecord, DeviceType};
use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum NodeKind {
    Device(DeviceType),
    Attribute(AttributeKind),
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Node {
    pub kind: NodeKind,
    pub label: String,
}

impl Node {
    pub fn is_device(&self) -> bool {
        matches!(self.kind, NodeKind::Device(_))
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Edge {
    pub to: u32,
    pub weight: f64,
}

/// Devices on one side, IPs and/or domains on the other.
///
/// Node ids are dense indices into one table. Devices additionally have a
/// *position* (their rank among device nodes), which is what the linker uses
/// so that graphs built from the same records agree on device numbering.
#[derive(Clone, Debug, Default)]
pub struct BipartiteGraph {
    nodes: Vec<Node>,
    adj: Vec<Vec<Edge>>,
    devices: Vec<usize>,
    device_pos: HashMap<String, usize>,
    attributes: HashMap<Attribute, usize>,
    edge_count: usize,
}

impl BipartiteGraph {
    pub fn node_count(&self) -> usize {
        self.nodes.len()
    }

    pub fn edge_count(&self) -> usize {
        self.edge_count
    }

    pub fn device_count(&self) -> usize {
        self.devices.len()
    }

    pub fn attribute_count(&self) -> usize {
        self.attributes.len()
    }

    pub fn node(&self, node: usize) -> &Node {
        &self.nodes[node]
    }

    pub fn nodes(&self) -> &[Node] {
        &self.nodes
    }

    pub fn neighbors(&self, node: usize) -> &[Edge] {
        &self.adj[node]
    }

    /// Sum of raw incident edge weights.
    pub fn weighted_degree(&self, node: usize) -> f64 {
        self.adj[node].iter().map(|e| e.weight).sum()
    }

    pub fn device_node(&self, position: usize) -> usize {
        self.devices[position]
    }

    pub fn device_nodes(&self) -> &[usize] {
        &self.devices
    }

    pub fn device_position(&self, device_id: &str) -> Option<usize> {
        self.device_pos.get(device_id).copied()
    }

    pub fn device_id(&self, position: usize) -> &str {
        &self.nodes[self.devices[position]].label
    }

    pub fn device_ids(&self) -> Vec<String> {
        self.devices.iter().map(|&n| self.nodes[n].label.clone()).collect()
    }

    pub fn device_type(&self, position: usize) -> DeviceType {
        match self.nodes[self.devices[position]].kind {
            NodeKind::Device(t) => t,
            NodeKind::Attribute(_) => unreachable!("device table points at an attribute node"),
        }
    }

    pub fn attribute_node(&self, attribute: &Attribute) -> Option<usize> {
        self.attributes.get(attribute).copied()
    }

    /// Attribute nodes of the given kind, in index order.
    pub fn attribute_nodes(&self, kind: AttributeKind) -> Vec<usize> {
        let mut v: Vec<usize> = self
            .attributes
            .iter()
            .filter(|(a, _)| a.kind() == kind)
            .map(|(_, &n)| n)
            .collect();
        v.sort_unstable();
        v
    }

    pub fn attribute_of(&self, node: usize) -> Option<Attribute> {
        match self.nodes[node].kind {
            NodeKind::Attribute(kind) => Some(Attribute::new(kind, self.nodes[node].label.clone())),
            NodeKind::Device(_) => None,
        }
    }

    pub fn has_edge(&self, a: usize, b: usize) -> bool {
        let (small, other) = if self.adj[a].len() <= self.adj[b].len() { (a, b) } else { (b, a) };
        self.adj[small].iter().any(|e| e.to as usize == other)
    }

    /// Every edge once, as `(device node, attribute node, weight)`.
    pub fn edges(&self) -> impl Iterator<Item = (usize, usize, f64)> + '_ {
        self.devices
            .iter()
            .flat_map(move |&d| self.adj[d].iter().map(move |e| (d, e.to as usize, e.weight)))
    }

    fn push_device(&mut self, device_id: &str, device_type: DeviceType) -> usize {
        let node = self.nodes.len();
        self.nodes.push(Node {
            kind: NodeKind::Device(device_type),
            label: device_id.to_string(),
        });
        self.adj.push(Vec::new());
        self.device_pos.insert(device_id.to_string(), self.devices.len());
        self.devices.push(node);
        node
    }

    fn attribute_or_insert(&mut self, attribute: &Attribute) -> usize {
        if let Some(&n) = self.attributes.get(attribute) {
            return n;
        }
        let node = self.nodes.len();
        self.nodes.push(Node {
            kind: NodeKind::Attribute(attribute.kind()),
            label: attribute.value().to_string(),
        });
        self.adj.push(Vec::new());
        self.attributes.insert(attribute.clone(), node);
        node
    }

    /// Add `weight` to the edge between a device node and an attribute node,
    /// creating it if needed. Returns true if the edge is new.
    pub fn add_weight(&mut self, device: usize, attribute: usize, weight: f64) -> bool {
        assert!(self.nodes[device].is_device() && !self.nodes[attribute].is_device());
        assert!(weight > 0.0, "edge weights must be positive");
        if let Some(e) = self.adj[device].iter_mut().find(|e| e.to as usize == attribute) {
            e.weight += weight;
            let back = self.adj[attribute]
                .iter_mut()
                .find(|e| e.to as usize == device)
                .expect("adjacency is symmetric");
            back.weight += weight;
            return false;
        }
        self.adj[device].push(Edge {
            to: attribute as u32,
            weight,
        });
        self.adj[attribute].push(Edge {
            to: device as u32,
            weight,
        });
        self.edge_count += 1;
        true
    }

    /// Insert a new edge; false (and no change) if it already exists.
    pub fn insert_edge(&mut self, device: usize, attribute: usize, weight: f64) -> bool {
        if self.has_edge(device, attribute) {
            return false;
        }
        self.add_weight(device, attribute, weight)
    }

    /// Remove every edge touching `attribute`; returns how many went.
    pub fn remove_attribute_edges(&mut self, attribute: usize) -> usize {
        let incident = std::mem::take(&mut self.adj[attribute]);
        for e in &incident {
            self.adj[e.to as usize].retain(|b| b.to as usize != attribute);
        }
        self.edge_count -= incident.len();
        incident.len()
    }

    /// Add a device that is not in the graph yet, together with its records.
    ///
    /// Existing node ids and device positions stay valid. Records of kinds
    /// the graph does not model are ignored, except that every record still
    /// introduces its device.
    pub fn add_device(&mut self, records: &[BrowsingRecord], kinds: &[AttributeKind]) -> Result<usize> {
        let Some(first) = records.first() else {
            return Err(Error::InvalidConfig("no records for the incoming device".into()));
        };
        let device_id = first.device_id.as_str();
        if records.iter().any(|r| r.device_id != device_id) {
            return Err(Error::InvalidConfig("incoming records span several devices".into()));
        }
        if self.device_pos.contains_key(device_id) {
            return Err(Error::DuplicateDevice(device_id.to_string()));
        }
        let device_type = records
            .iter()
            .map(|r| r.device_type)
            .find(|t| *t != DeviceType::Unknown)
            .unwrap_or_default();
        let node = self.push_device(device_id, device_type);
        for r in records.iter().filter(|r| kinds.contains(&r.attribute.kind())) {
            let a = self.attribute_or_insert(&r.attribute);
            self.add_weight(node, a, r.count as f64);
        }
        Ok(self.devices.len() - 1)
    }

    /// Label-based edge set, independent of node numbering.
    pub fn canonical_edges(&self) -> BTreeSet<(String, AttributeKind, String, u64)> {
        self.edges()
            .map(|(d, a, w)| {
                let kind = match self.nodes[a].kind {
                    NodeKind::Attribute(k) => k,
                    NodeKind::Device(_) => unreachable!(),
                };
                (self.nodes[d].label.clone(), kind, self.nodes[a].label.clone(), w.to_bits())
            })
            .collect()
    }

    /// One record per edge, sorted; weights are rounded to whole visits.
    /// Devices without edges are dropped.
    pub fn to_records(&self) -> Vec<BrowsingRecord> {
        let mut out: Vec<BrowsingRecord> = self
            .edges()
            .map(|(d, a, w)| {
                let t = match self.nodes[d].kind {
                    NodeKind::Device(t) => t,
                    NodeKind::Attribute(_) => unreachable!(),
                };
                let attr = self.attribute_of(a).expect("edge ends at an attribute");
                BrowsingRecord::new(self.nodes[d].label.clone(), attr, w.round().max(1.0) as u64).with_type(t)
            })
            .collect();
        out.sort_by(|a, b| (&a.device_id, &a.attribute).cmp(&(&b.device_id, &b.attribute)));
        out
    }

    /// Debug dump, one `{side_a, side_b, weight}` object per line.
    pub fn write_edges<W: Write>(&self, mut w: W) -> Result<()> {
        for (d, a, weight) in self.edges() {
            let attr = self.attribute_of(a).expect("edge ends at an attribute");
            serde_json::to_writer(
                &mut w,
                &serde_json::json!({
                    "side_a": self.nodes[d].label,
                    "side_b": format!("{}:{}", attr.kind(), attr.value()),
                    "weight": weight,
                }),
            )?;
            w.write_all(b"\n")?;
        }
        Ok(())
    }
}

/// Build the graph over the requested attribute kinds.
///
/// Every device seen in `records` becomes a node, even if none of its
/// records is of a requested kind; such devices are isolated. Devices are
/// ordered by id and attributes by `(kind, value)`, so two graphs built
/// from the same records share device positions.
pub fn build_graph(records: &[BrowsingRecord], kinds: &[AttributeKind]) -> Result<BipartiteGraph> {
    if kinds.is_empty() {
        return Err(Error::NoAttributeKinds);
    }
    let mut device_types: BTreeMap<&str, DeviceType> = BTreeMap::new();
    let mut attrs: BTreeSet<&Attribute> = BTreeSet::new();
    for r in records {
        let t = device_types.entry(r.device_id.as_str()).or_default();
        if *t == DeviceType::Unknown {
            *t = r.device_type;
        }
        if kinds.contains(&r.attribute.kind()) {
            attrs.insert(&r.attribute);
        }
    }
    let mut g = BipartiteGraph::default();
    for (id, t) in &device_types {
        g.push_device(id, *t);
    }
    for a in attrs {
        g.attribute_or_insert(a);
    }
    for r in records.iter().filter(|r| kinds.contains(&r.attribute.kind())) {
        let d = g.devices[g.device_pos[r.device_id.as_str()]];
        let a = g.attributes[&r.attribute];
        g.add_weight(d, a, r.count as f64);
    }
    for list in &mut g.adj {
        list.sort_by_key(|e| e.to);
    }
    Ok(g)
}

/// How raw visit counts turn into transition weights.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum WeightMode {
    /// Each edge weight divided by the device's total visits.
    #[default]
    Normalized,
    /// Raw visit counts.
    #[serde(alias = "unnorm")]
    UnNormalizedWeighted,
    /// Every edge weighs 1.
    UnWeighted,
}

impl FromStr for WeightMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "normalized" | "norm" => Ok(WeightMode::Normalized),
            "unnorm" | "unnormalized" | "unnormalizedweighted" => Ok(WeightMode::UnNormalizedWeighted),
            "unweighted" => Ok(WeightMode::UnWeighted),
            other => Err(Error::InvalidConfig(format!("unknown weight mode {other:?}"))),
        }
    }
}

/// Per-device normalized weights `w'`, parallel to [`BipartiteGraph::neighbors`]
/// of each node: entry `[v][i]` is the weight of `v`'s i-th edge divided by
/// the total visit count of that edge's device endpoint.
pub fn normalize_weights(g: &BipartiteGraph) -> Vec<Vec<f64>> {
    effective_weights(g, WeightMode::Normalized)
}

fn effective_weights(g: &BipartiteGraph, mode: WeightMode) -> Vec<Vec<f64>> {
    let device_total: Vec<f64> = match mode {
        WeightMode::Normalized => (0..g.node_count())
            .map(|v| if g.nodes[v].is_device() { g.weighted_degree(v) } else { 0.0 })
            .collect(),
        _ => Vec::new(),
    };
    (0..g.node_count())
        .map(|v| {
            let v_is_device = g.nodes[v].is_device();
            g.adj[v]
                .iter()
                .map(|e| match mode {
                    WeightMode::Normalized => {
                        let device = if v_is_device { v } else { e.to as usize };
                        e.weight / device_total[device]
                    }
                    WeightMode::UnNormalizedWeighted => e.weight,
                    WeightMode::UnWeighted => 1.0,
                })
                .collect()
        })
        .collect()
}

/// Column-stochastic walk operator: `A[u][v] = w[u][v] / d[v]` over the
/// effective weights of a [`WeightMode`].
///
/// Stored as compressed adjacency rows. Because the graph is undirected,
/// row `u` lists exactly the nonzero columns of `A[u][·]`.
#[derive(Clone, Debug, PartialEq)]
pub struct TransitionOperator {
    offsets: Vec<usize>,
    targets: Vec<u32>,
    weights: Vec<f64>,
    degree: Vec<f64>,
    mode: WeightMode,
}

pub fn make_transition(g: &BipartiteGraph, mode: WeightMode) -> TransitionOperator {
    let eff = effective_weights(g, mode);
    let mut offsets = Vec::with_capacity(g.node_count() + 1);
    let mut targets = Vec::with_capacity(2 * g.edge_count());
    let mut weights = Vec::with_capacity(2 * g.edge_count());
    offsets.push(0);
    for (v, row) in eff.iter().enumerate() {
        targets.extend(g.adj[v].iter().map(|e| e.to));
        weights.extend_from_slice(row);
        offsets.push(targets.len());
    }
    let degree = eff.iter().map(|row| row.iter().sum()).collect();
    TransitionOperator {
        offsets,
        targets,
        weights,
        degree,
        mode,
    }
}

impl TransitionOperator {
    pub fn dim(&self) -> usize {
        self.degree.len()
    }

    pub fn nnz(&self) -> usize {
        self.targets.len()
    }

    pub fn mode(&self) -> WeightMode {
        self.mode
    }

    /// Effective weighted degree `d''` of a node.
    pub fn degree(&self, node: usize) -> f64 {
        self.degree[node]
    }

    pub fn is_isolated(&self, node: usize) -> bool {
        self.offsets[node] == self.offsets[node + 1]
    }

    pub(crate) fn row(&self, u: usize) -> (&[u32], &[f64]) {
        let r = self.offsets[u]..self.offsets[u + 1];
        (&self.targets[r.clone()], &self.weights[r])
    }

    /// Probability of stepping from `from` to `to`.
    pub fn entry(&self, to: usize, from: usize) -> f64 {
        let (cols, ws) = self.row(to);
        match cols.iter().position(|&c| c as usize == from) {
            Some(i) => ws[i] / self.degree[from],
            None => 0.0,
        }
    }

    pub fn column_sum(&self, v: usize) -> f64 {
        if self.is_isolated(v) {
            return 0.0;
        }
        // symmetric storage: column v's entries are v's own row weights
        let (_, ws) = self.row(v);
        ws.iter().map(|w| w / self.degree[v]).sum()
    }

    /// `x / d`, with isolated nodes mapped to 0.
    pub(crate) fn scale_by_degree(&self, x: &[f64], out: &mut [f64]) {
        for ((o, &xv), &d) in out.iter_mut().zip(x).zip(&self.degree) {
            *o = if d > 0.0 { xv / d } else { 0.0 };
        }
    }

    /// `(A x)[u]` given `scaled = x / d`.
    #[inline]
    pub(crate) fn row_dot(&self, u: usize, scaled: &[f64]) -> f64 {
        let (cols, ws) = self.row(u);
        cols.iter().zip(ws).map(|(&c, w)| w * scaled[c as usize]).sum()
    }

    /// Dense `y = A x`.
    pub fn apply(&self, x: &[f64]) -> Vec<f64> {
        let mut scaled = vec![0.0; self.dim()];
        self.scale_by_degree(x, &mut scaled);
        (0..self.dim()).map(|u| self.row_dot(u, &scaled)).collect()
    }
}
