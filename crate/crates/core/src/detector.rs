//! Architecture detection over a traced graph.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::graph::{ComputeGraph, LayerKind, LayerKindTag};

/// Layer families used by the recommender's mapping table.
///
/// `Recurrent`, `Transformer` and `DecisionTree` are never detected by this
/// runtime; they exist so user-supplied mapping tables can name them.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum ArchTag {
    Linear,
    Convolution,
    Recurrent,
    Transformer,
    DecisionTree,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ArchitectureProfile {
    pub tags: BTreeSet<ArchTag>,
    /// Conv2D node ids in topological order; the last one is the deepest.
    pub conv_nodes: Vec<usize>,
    pub has_residual: bool,
    pub layer_census: BTreeMap<LayerKindTag, usize>,
}

impl ArchitectureProfile {
    /// Default Grad-CAM target: the deepest convolution.
    pub fn default_cam_target(&self) -> Option<usize> {
        self.conv_nodes.last().copied()
    }
}

pub fn detect(graph: &ComputeGraph) -> ArchitectureProfile {
    let mut tags = BTreeSet::new();
    let mut conv_nodes = Vec::new();
    let mut layer_census = BTreeMap::new();
    for node in graph.nodes() {
        *layer_census.entry(node.kind.tag()).or_insert(0) += 1;
        match node.kind {
            LayerKind::Linear { .. } => {
                tags.insert(ArchTag::Linear);
            }
            LayerKind::Conv2D { .. } => {
                tags.insert(ArchTag::Convolution);
                conv_nodes.push(node.id);
            }
            _ => {}
        }
    }
    let has_residual = layer_census.contains_key(&LayerKindTag::ResidualAdd);
    ArchitectureProfile { tags, conv_nodes, has_residual, layer_census }
}

/// Layer listing, one line per node in topological order.
pub fn describe(graph: &ComputeGraph) -> Vec<String> {
    graph.describe()
}
