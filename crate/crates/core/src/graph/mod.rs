//! Feed-forward compute graphs over a restricted layer vocabulary.
//!
//! A [`ComputeGraph`] is an immutable, validated DAG. All arithmetic is `f64`.
//! Forward passes produce a [`ForwardTrace`]; the `autodiff` submodule
//! derives gradients from it.

mod autodiff;
pub(crate) mod ops;

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub use autodiff::{ForwardTrace, GradientMode, GradientSweep, ParamGrads};
pub use ops::bilinear_resize;

/// Where a node reads one of its operands from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Source {
    Input,
    Node(usize),
}

// Serialized as the string "input" or a node id.
impl Serialize for Source {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        match self {
            Source::Input => s.serialize_str("input"),
            Source::Node(id) => s.serialize_u64(*id as u64),
        }
    }
}

impl<'de> Deserialize<'de> for Source {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Raw {
            Id(usize),
            Name(String),
        }
        match Raw::deserialize(d)? {
            Raw::Id(id) => Ok(Source::Node(id)),
            Raw::Name(n) if n == "input" => Ok(Source::Input),
            Raw::Name(n) => Err(serde::de::Error::custom(format!(
                "expected a node id or \"input\", got {n:?}"
            ))),
        }
    }
}

/// Address of an activation inside a trace: the graph input or a node output.
pub type NodeRef = Source;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum LayerKindTag {
    Linear,
    Conv2D,
    ReLU,
    MaxPool2D,
    AvgPool2D,
    GlobalAvgPool2D,
    Flatten,
    ResidualAdd,
    FrozenBatchNorm,
    SoftmaxHead,
}

impl fmt::Display for LayerKindTag {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{self:?}")
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum LayerKind {
    /// `weight: [out, in]`, `bias: [out]`.
    Linear { weight: Tensor, bias: Tensor },
    /// `weight: [out_c, in_c, kh, kw]`, `bias: [out_c]`, zero padding.
    Conv2D { weight: Tensor, bias: Tensor, stride: usize, padding: usize },
    ReLU,
    MaxPool2D { kernel: usize, stride: usize },
    AvgPool2D { kernel: usize, stride: usize },
    GlobalAvgPool2D,
    Flatten,
    ResidualAdd,
    /// Inference-only affine normalisation over the leading (channel) dimension.
    FrozenBatchNorm { gamma: Tensor, beta: Tensor, mean: Tensor, var: Tensor, eps: f64 },
    /// Marks the classifier head. Identity on logits.
    SoftmaxHead,
}

impl LayerKind {
    pub fn tag(&self) -> LayerKindTag {
        match self {
            LayerKind::Linear { .. } => LayerKindTag::Linear,
            LayerKind::Conv2D { .. } => LayerKindTag::Conv2D,
            LayerKind::ReLU => LayerKindTag::ReLU,
            LayerKind::MaxPool2D { .. } => LayerKindTag::MaxPool2D,
            LayerKind::AvgPool2D { .. } => LayerKindTag::AvgPool2D,
            LayerKind::GlobalAvgPool2D => LayerKindTag::GlobalAvgPool2D,
            LayerKind::Flatten => LayerKindTag::Flatten,
            LayerKind::ResidualAdd => LayerKindTag::ResidualAdd,
            LayerKind::FrozenBatchNorm { .. } => LayerKindTag::FrozenBatchNorm,
            LayerKind::SoftmaxHead => LayerKindTag::SoftmaxHead,
        }
    }

    fn arity(&self) -> usize {
        if matches!(self, LayerKind::ResidualAdd) {
            2
        } else {
            1
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LayerNode {
    pub id: usize,
    pub kind: LayerKind,
    pub inputs: Vec<Source>,
}

impl LayerNode {
    pub fn new(id: usize, kind: LayerKind, inputs: Vec<Source>) -> Self {
        LayerNode { id, kind, inputs }
    }
}

/// Validated, topologically ordered feed-forward network.
#[derive(Debug, Clone, PartialEq)]
pub struct ComputeGraph {
    nodes: Vec<LayerNode>,
    /// Operand slots per node: `None` is the graph input, `Some(i)` a node position.
    slots: Vec<Vec<Option<usize>>>,
    shapes: Vec<Vec<usize>>,
    positions: BTreeMap<usize, usize>,
    input_shape: Vec<usize>,
    output_dim: usize,
}

impl ComputeGraph {
    /// Validates and topologically sorts `nodes`.
    ///
    /// Ties in the topological order are broken by node id, so any listing of
    /// the same nodes produces the same graph.
    pub fn new(input_shape: Vec<usize>, output_dim: usize, nodes: Vec<LayerNode>) -> Result<Self> {
        if nodes.is_empty() {
            return Err(Error::InvalidGraph("graph has no layers".into()));
        }
        if input_shape.is_empty() || input_shape.contains(&0) {
            return Err(Error::InvalidGraph(format!("invalid input shape {input_shape:?}")));
        }
        let mut by_id = BTreeMap::new();
        for node in nodes {
            let id = node.id;
            if node.inputs.len() != node.kind.arity() {
                return Err(Error::Layer {
                    layer: id,
                    message: format!(
                        "{} takes {} input(s), got {}",
                        node.kind.tag(),
                        node.kind.arity(),
                        node.inputs.len()
                    ),
                });
            }
            if by_id.insert(id, node).is_some() {
                return Err(Error::InvalidGraph(format!("duplicate node id {id}")));
            }
        }
        for node in by_id.values() {
            for src in &node.inputs {
                if let Source::Node(p) = src {
                    if !by_id.contains_key(p) {
                        return Err(Error::Layer {
                            layer: node.id,
                            message: format!("input references unknown node {p}"),
                        });
                    }
                }
            }
        }

        // Kahn's algorithm, smallest ready id first.
        let mut indegree: BTreeMap<usize, usize> = by_id
            .values()
            .map(|n| (n.id, n.inputs.iter().filter(|s| matches!(s, Source::Node(_))).count()))
            .collect();
        let mut consumers: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
        for n in by_id.values() {
            for s in &n.inputs {
                if let Source::Node(p) = s {
                    consumers.entry(*p).or_default().push(n.id);
                }
            }
        }
        let mut ready: BTreeSet<usize> =
            indegree.iter().filter(|(_, &d)| d == 0).map(|(&id, _)| id).collect();
        let mut order = Vec::with_capacity(by_id.len());
        while let Some(id) = ready.pop_first() {
            order.push(id);
            for &c in consumers.get(&id).map(Vec::as_slice).unwrap_or(&[]) {
                let d = indegree.get_mut(&c).expect("consumer exists");
                *d -= 1;
                if *d == 0 {
                    ready.insert(c);
                }
            }
        }
        if order.len() != by_id.len() {
            return Err(Error::InvalidGraph("graph contains a cycle".into()));
        }

        let positions: BTreeMap<usize, usize> =
            order.iter().enumerate().map(|(pos, &id)| (id, pos)).collect();
        let nodes: Vec<LayerNode> =
            order.iter().map(|id| by_id.remove(id).expect("sorted id exists")).collect();
        let slots: Vec<Vec<Option<usize>>> = nodes
            .iter()
            .map(|n| {
                n.inputs
                    .iter()
                    .map(|s| match s {
                        Source::Input => None,
                        Source::Node(id) => Some(positions[id]),
                    })
                    .collect()
            })
            .collect();

        let last = nodes.len() - 1;
        let mut consumed = vec![false; nodes.len()];
        let mut reads_input = false;
        for s in slots.iter().flatten() {
            match s {
                Some(p) => consumed[*p] = true,
                None => reads_input = true,
            }
        }
        if !reads_input {
            return Err(Error::InvalidGraph("no layer reads the graph input".into()));
        }
        if let Some(p) = consumed[..last].iter().position(|c| !c) {
            return Err(Error::InvalidGraph(format!(
                "node {} is not consumed: graph must have exactly one output node",
                nodes[p].id
            )));
        }
        if let Some(p) = nodes[..last].iter().position(|n| matches!(n.kind, LayerKind::SoftmaxHead)) {
            return Err(Error::Layer {
                layer: nodes[p].id,
                message: "SoftmaxHead must be the output node".into(),
            });
        }

        let mut shapes: Vec<Vec<usize>> = Vec::with_capacity(nodes.len());
        for (node, node_slots) in nodes.iter().zip(&slots) {
            let ins: Vec<&[usize]> = node_slots
                .iter()
                .map(|s| match s {
                    None => input_shape.as_slice(),
                    Some(p) => shapes[*p].as_slice(),
                })
                .collect();
            let shape = infer_shape(&node.kind, &ins).map_err(|message| Error::Layer { layer: node.id, message })?;
            shapes.push(shape);
        }
        let out_shape = &shapes[last];
        if out_shape.len() != 1 || out_shape[0] != output_dim {
            return Err(Error::Layer {
                layer: nodes[last].id,
                message: format!("output shape {out_shape:?} does not match output_dim {output_dim}"),
            });
        }

        Ok(ComputeGraph { nodes, slots, shapes, positions, input_shape, output_dim })
    }

    pub fn nodes(&self) -> &[LayerNode] {
        &self.nodes
    }

    pub fn input_shape(&self) -> &[usize] {
        &self.input_shape
    }

    pub fn output_dim(&self) -> usize {
        self.output_dim
    }

    /// Output shape of the node at topological position `pos`.
    pub fn shape_at(&self, pos: usize) -> &[usize] {
        &self.shapes[pos]
    }

    pub fn position(&self, id: usize) -> Result<usize> {
        self.positions.get(&id).copied().ok_or(Error::UnknownNode(id))
    }

    pub fn node(&self, id: usize) -> Result<&LayerNode> {
        Ok(&self.nodes[self.position(id)?])
    }

    pub(crate) fn slots(&self, pos: usize) -> &[Option<usize>] {
        &self.slots[pos]
    }

    pub fn output_node_id(&self) -> usize {
        self.nodes[self.nodes.len() - 1].id
    }

    /// Shape of an activation addressed by `r`.
    pub fn shape_of(&self, r: NodeRef) -> Result<&[usize]> {
        match r {
            Source::Input => Ok(&self.input_shape),
            Source::Node(id) => Ok(&self.shapes[self.position(id)?]),
        }
    }

    /// One human-readable line per node in topological order.
    pub fn describe(&self) -> Vec<String> {
        self.nodes
            .iter()
            .enumerate()
            .map(|(pos, node)| {
                let mut line = format!("{}: {}", node.id, node.kind.tag());
                match &node.kind {
                    LayerKind::Linear { weight, .. } => {
                        line += &format!(" {}→{}", weight.shape()[1], weight.shape()[0]);
                    }
                    LayerKind::Conv2D { weight, stride, padding, .. } => {
                        let s = weight.shape();
                        line += &format!(" {}→{} k{}x{} s{} p{}", s[1], s[0], s[2], s[3], stride, padding);
                    }
                    LayerKind::MaxPool2D { kernel, stride } | LayerKind::AvgPool2D { kernel, stride } => {
                        line += &format!(" k{kernel} s{stride}");
                    }
                    LayerKind::FrozenBatchNorm { gamma, eps, .. } => {
                        line += &format!(" c{} eps={eps:e}", gamma.len());
                    }
                    _ => {}
                }
                let expected_prev = if pos == 0 { Source::Input } else { Source::Node(self.nodes[pos - 1].id) };
                if node.inputs.len() != 1 || node.inputs[0] != expected_prev {
                    let srcs: Vec<String> = node
                        .inputs
                        .iter()
                        .map(|s| match s {
                            Source::Input => "input".to_string(),
                            Source::Node(id) => id.to_string(),
                        })
                        .collect();
                    line += &format!(" <- {}", srcs.join(" + "));
                }
                line
            })
            .collect()
    }
}

fn infer_shape(kind: &LayerKind, ins: &[&[usize]]) -> std::result::Result<Vec<usize>, String> {
    let x = ins[0];
    let need_chw = || -> std::result::Result<(), String> {
        if x.len() == 3 {
            Ok(())
        } else {
            Err(format!("expects a [C, H, W] input, got {x:?}"))
        }
    };
    match kind {
        LayerKind::Linear { weight, bias } => {
            let ws = weight.shape();
            if ws.len() != 2 {
                return Err(format!("weight must be [out, in], got {ws:?}"));
            }
            if x.len() != 1 || x[0] != ws[1] {
                return Err(format!("weight {ws:?} does not accept input {x:?}"));
            }
            if bias.shape() != [ws[0]] {
                return Err(format!("bias {:?} does not match {} outputs", bias.shape(), ws[0]));
            }
            Ok(vec![ws[0]])
        }
        LayerKind::Conv2D { weight, bias, stride, padding } => {
            need_chw()?;
            let ws = weight.shape();
            if ws.len() != 4 {
                return Err(format!("weight must be [out_c, in_c, kh, kw], got {ws:?}"));
            }
            if ws[1] != x[0] {
                return Err(format!("weight {ws:?} expects {} input channels, got {x:?}", ws[1]));
            }
            if bias.shape() != [ws[0]] {
                return Err(format!("bias {:?} does not match {} channels", bias.shape(), ws[0]));
            }
            if *stride == 0 {
                return Err("stride must be positive".into());
            }
            let h = ops::conv_out_len(x[1], ws[2], *stride, *padding);
            let w = ops::conv_out_len(x[2], ws[3], *stride, *padding);
            match (h, w) {
                (Some(h), Some(w)) => Ok(vec![ws[0], h, w]),
                _ => Err(format!("kernel {ws:?} larger than padded input {x:?}")),
            }
        }
        LayerKind::ReLU | LayerKind::SoftmaxHead => Ok(x.to_vec()),
        LayerKind::MaxPool2D { kernel, stride } | LayerKind::AvgPool2D { kernel, stride } => {
            need_chw()?;
            if *kernel == 0 || *stride == 0 {
                return Err("pool kernel and stride must be positive".into());
            }
            match (ops::conv_out_len(x[1], *kernel, *stride, 0), ops::conv_out_len(x[2], *kernel, *stride, 0)) {
                (Some(h), Some(w)) => Ok(vec![x[0], h, w]),
                _ => Err(format!("pool kernel {kernel} larger than input {x:?}")),
            }
        }
        LayerKind::GlobalAvgPool2D => {
            need_chw()?;
            Ok(vec![x[0]])
        }
        LayerKind::Flatten => Ok(vec![x.iter().product()]),
        LayerKind::ResidualAdd => {
            if ins[0] != ins[1] {
                return Err(format!("residual operands differ: {:?} vs {:?}", ins[0], ins[1]));
            }
            Ok(x.to_vec())
        }
        LayerKind::FrozenBatchNorm { gamma, beta, mean, var, eps } => {
            let c = x[0];
            for (name, t) in [("gamma", gamma), ("beta", beta), ("mean", mean), ("var", var)] {
                if t.shape() != [c] {
                    return Err(format!("{name} {:?} does not match {c} channels", t.shape()));
                }
            }
            if !(*eps > 0.0) || var.data().iter().any(|&v| v + eps <= 0.0) {
                return Err("batch-norm variance + eps must be positive".into());
            }
            Ok(x.to_vec())
        }
    }
}
