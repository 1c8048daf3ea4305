//! Comparison methods: Bhattacharyya scoring inside the linker, and
//! community detection on an IP colocation graph.

pub(crate) mod bhattacharyya;
mod devicegraph;

pub use bhattacharyya::{bat_track, bhattacharyya_similarity};
pub use devicegraph::{
    build_colocation_graph, devicegraph_track, louvain_communities, modularity, ColocationGraph, Partition,
};
