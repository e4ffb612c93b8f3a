use super::ops::{self, ConvGeometry, Dims3, PoolGeometry};
use super::{ComputeGraph, LayerKind, NodeRef, Source};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Activations of every node for one input.
#[derive(Debug, Clone, PartialEq)]
pub struct ForwardTrace {
    input: Tensor,
    activations: Vec<Tensor>,
}

impl ForwardTrace {
    pub fn input(&self) -> &Tensor {
        &self.input
    }

    /// Output of the node at topological position `pos`.
    pub fn activation_at(&self, pos: usize) -> &Tensor {
        &self.activations[pos]
    }

    pub fn activations(&self) -> &[Tensor] {
        &self.activations
    }

    /// Pre-softmax class scores.
    pub fn logits(&self) -> &Tensor {
        self.activations.last().expect("graph has at least one node")
    }

    pub(crate) fn operand(&self, slot: Option<usize>) -> &Tensor {
        match slot {
            None => &self.input,
            Some(p) => &self.activations[p],
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GradientMode {
    Plain,
    /// Negative gradients are zeroed at every ReLU on the way back.
    Guided,
}

/// Gradients of one scalar objective with respect to every activation.
#[derive(Debug, Clone)]
pub struct GradientSweep {
    pub input: Tensor,
    pub nodes: Vec<Tensor>,
}

/// Gradients for the trainable tensors of a Linear or Conv2D node.
#[derive(Debug, Clone)]
pub struct ParamGrads {
    pub weight: Tensor,
    pub bias: Tensor,
}

impl ComputeGraph {
    pub fn forward(&self, x: &Tensor) -> Result<ForwardTrace> {
        self.forward_with_override(x, None)
    }

    /// Logits only.
    pub fn logits(&self, x: &Tensor) -> Result<Tensor> {
        Ok(self.forward(x)?.logits().clone())
    }

    /// Runs the graph, replacing the output of node `id` with `value` when given.
    ///
    /// Downstream nodes see the replacement; upstream nodes are computed normally.
    pub fn forward_with_override(&self, x: &Tensor, replace: Option<(usize, &Tensor)>) -> Result<ForwardTrace> {
        if x.shape() != self.input_shape() {
            return Err(Error::Shape(format!(
                "input {:?} does not match model input {:?}",
                x.shape(),
                self.input_shape()
            )));
        }
        x.check_finite("graph input")?;
        let replace = match replace {
            Some((id, t)) => {
                let pos = self.position(id)?;
                if t.shape() != self.shape_at(pos) {
                    return Err(Error::Shape(format!("override for node {id} has shape {:?}", t.shape())));
                }
                Some((pos, t))
            }
            None => None,
        };
        let mut trace = ForwardTrace { input: x.clone(), activations: Vec::with_capacity(self.nodes().len()) };
        for (pos, node) in self.nodes().iter().enumerate() {
            let out = match replace {
                Some((p, t)) if p == pos => t.clone(),
                _ => {
                    let ins: Vec<&Tensor> = self.slots(pos).iter().map(|&s| trace.operand(s)).collect();
                    let data = eval_node(&node.kind, &ins);
                    Tensor::new(self.shape_at(pos).to_vec(), data)?
                }
            };
            if !out.is_finite() {
                return Err(Error::NonFinite(format!("node {} ({})", node.id, node.kind.tag())));
            }
            trace.activations.push(out);
        }
        Ok(trace)
    }

    fn check_class(&self, class: usize) -> Result<()> {
        if class >= self.output_dim() {
            return Err(Error::InvalidClass { index: class, classes: self.output_dim() });
        }
        Ok(())
    }

    fn one_hot(&self, class: usize) -> Tensor {
        let mut g = Tensor::zeros(&[self.output_dim()]);
        g.data_mut()[class] = 1.0;
        g
    }

    /// ∂ logits[class] / ∂ x.
    pub fn backward(&self, trace: &ForwardTrace, class: usize) -> Result<Tensor> {
        self.check_class(class)?;
        Ok(self.sweep(trace, &self.one_hot(class), GradientMode::Plain)?.input)
    }

    /// As [`ComputeGraph::backward`] but clamping gradients to be non-negative at every ReLU.
    pub fn guided_backward(&self, trace: &ForwardTrace, class: usize) -> Result<Tensor> {
        self.check_class(class)?;
        Ok(self.sweep(trace, &self.one_hot(class), GradientMode::Guided)?.input)
    }

    /// ∂ logits[class] / ∂ activation(node).
    pub fn intermediate_gradient(&self, trace: &ForwardTrace, node: NodeRef, class: usize) -> Result<Tensor> {
        self.check_class(class)?;
        let sweep = self.sweep(trace, &self.one_hot(class), GradientMode::Plain)?;
        Ok(match node {
            Source::Input => sweep.input,
            Source::Node(id) => sweep.nodes[self.position(id)?].clone(),
        })
    }

    /// Reverse sweep seeded with an arbitrary gradient on the logits.
    pub fn sweep(&self, trace: &ForwardTrace, output_grad: &Tensor, mode: GradientMode) -> Result<GradientSweep> {
        if trace.activations.len() != self.nodes().len() || trace.input.shape() != self.input_shape() {
            return Err(Error::InvalidArgument("trace was not produced by this graph".into()));
        }
        if output_grad.shape() != [self.output_dim()] {
            return Err(Error::Shape(format!("output gradient {:?}", output_grad.shape())));
        }
        let n = self.nodes().len();
        let mut grads: Vec<Tensor> = (0..n).map(|p| Tensor::zeros(self.shape_at(p))).collect();
        let mut input_grad = Tensor::zeros(self.input_shape());
        grads[n - 1] = output_grad.clone();
        for pos in (0..n).rev() {
            let node = &self.nodes()[pos];
            let slots = self.slots(pos);
            let ins: Vec<&Tensor> = slots.iter().map(|&s| trace.operand(s)).collect();
            let upstream = vjp_node(&node.kind, &ins, grads[pos].data(), mode);
            for (slot, g) in slots.iter().zip(upstream) {
                let target = match slot {
                    None => &mut input_grad,
                    Some(p) => &mut grads[*p],
                };
                for (t, v) in target.data_mut().iter_mut().zip(g) {
                    *t += v;
                }
            }
        }
        input_grad.check_finite("backward pass")?;
        Ok(GradientSweep { input: input_grad, nodes: grads })
    }

    /// Weight and bias gradients for every Linear/Conv2D node, indexed by position.
    pub fn parameter_gradients(&self, trace: &ForwardTrace, sweep: &GradientSweep) -> Vec<Option<ParamGrads>> {
        self.nodes()
            .iter()
            .enumerate()
            .map(|(pos, node)| {
                let x = trace.operand(self.slots(pos)[0]);
                let g = sweep.nodes[pos].data();
                match &node.kind {
                    LayerKind::Linear { weight, bias } => {
                        let (out, inp) = (weight.shape()[0], weight.shape()[1]);
                        let mut gw = vec![0.0; out * inp];
                        for o in 0..out {
                            for i in 0..inp {
                                gw[o * inp + i] = g[o] * x.data()[i];
                            }
                        }
                        Some(ParamGrads {
                            weight: Tensor::new(weight.shape().to_vec(), gw).ok()?,
                            bias: Tensor::new(bias.shape().to_vec(), g.to_vec()).ok()?,
                        })
                    }
                    LayerKind::Conv2D { weight, bias, stride, padding } => {
                        let geo = ConvGeometry::new(x.shape(), weight, *stride, *padding);
                        let gw = ops::conv2d_weight_grad(g, x.data(), &geo);
                        let area = geo.output.h * geo.output.w;
                        let gb = g.chunks(area).map(|c| c.iter().sum()).collect();
                        Some(ParamGrads {
                            weight: Tensor::new(weight.shape().to_vec(), gw).ok()?,
                            bias: Tensor::new(bias.shape().to_vec(), gb).ok()?,
                        })
                    }
                    _ => None,
                }
            })
            .collect()
    }
}

fn eval_node(kind: &LayerKind, ins: &[&Tensor]) -> Vec<f64> {
    let x = ins[0];
    match kind {
        LayerKind::Linear { weight, bias } => ops::linear(x.data(), weight, Some(bias.data())),
        LayerKind::Conv2D { weight, bias, stride, padding } => {
            let geo = ConvGeometry::new(x.shape(), weight, *stride, *padding);
            ops::conv2d(x.data(), weight, Some(bias.data()), &geo)
        }
        LayerKind::ReLU => x.data().iter().map(|&v| v.max(0.0)).collect(),
        LayerKind::MaxPool2D { kernel, stride } => {
            ops::max_pool(x.data(), &PoolGeometry::new(x.shape(), *kernel, *stride))
        }
        LayerKind::AvgPool2D { kernel, stride } => {
            ops::avg_pool(x.data(), &PoolGeometry::new(x.shape(), *kernel, *stride))
        }
        LayerKind::GlobalAvgPool2D => ops::global_avg_pool(x.data(), Dims3::of(x.shape())),
        LayerKind::Flatten | LayerKind::SoftmaxHead => x.data().to_vec(),
        LayerKind::ResidualAdd => x.data().iter().zip(ins[1].data()).map(|(a, b)| a + b).collect(),
        LayerKind::FrozenBatchNorm { gamma, beta, mean, var, eps } => {
            let (scale, shift) = ops::batch_norm_affine(gamma.data(), beta.data(), mean.data(), var.data(), *eps);
            ops::per_channel(x.data(), scale.len(), |v, c| scale[c] * v + shift[c])
        }
    }
}

/// Gradient with respect to each operand, given the gradient on the output.
fn vjp_node(kind: &LayerKind, ins: &[&Tensor], grad: &[f64], mode: GradientMode) -> Vec<Vec<f64>> {
    let x = ins[0];
    let single = |g: Vec<f64>| vec![g];
    match kind {
        LayerKind::Linear { weight, .. } => single(ops::linear_vjp(grad, weight)),
        LayerKind::Conv2D { weight, stride, padding, .. } => {
            let geo = ConvGeometry::new(x.shape(), weight, *stride, *padding);
            single(ops::conv2d_vjp(grad, weight, &geo))
        }
        // Subgradient at exactly zero is zero.
        LayerKind::ReLU => single(
            x.data()
                .iter()
                .zip(grad)
                .map(|(&v, &g)| {
                    let g = if mode == GradientMode::Guided { g.max(0.0) } else { g };
                    if v > 0.0 { g } else { 0.0 }
                })
                .collect(),
        ),
        LayerKind::MaxPool2D { kernel, stride } => {
            single(ops::max_pool_vjp(grad, x.data(), &PoolGeometry::new(x.shape(), *kernel, *stride)))
        }
        LayerKind::AvgPool2D { kernel, stride } => {
            single(ops::avg_pool_vjp(grad, x.len(), &PoolGeometry::new(x.shape(), *kernel, *stride)))
        }
        LayerKind::GlobalAvgPool2D => single(ops::global_avg_pool_vjp(grad, Dims3::of(x.shape()))),
        LayerKind::Flatten | LayerKind::SoftmaxHead => single(grad.to_vec()),
        LayerKind::ResidualAdd => vec![grad.to_vec(), grad.to_vec()],
        LayerKind::FrozenBatchNorm { gamma, beta, mean, var, eps } => {
            let (scale, _) = ops::batch_norm_affine(gamma.data(), beta.data(), mean.data(), var.data(), *eps);
            single(ops::per_channel(grad, scale.len(), |g, c| scale[c] * g))
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::LayerNode;

    fn relu_graph(n: usize) -> ComputeGraph {
        ComputeGraph::new(vec![n], n, vec![LayerNode::new(0, LayerKind::ReLU, vec![Source::Input])]).unwrap()
    }

    #[test]
    fn relu_forward() {
        let g = relu_graph(3);
        let t = g.forward(&Tensor::from_vec(vec![-1.0, 0.0, 3.0])).unwrap();
        assert_eq!(t.logits().data(), &[0.0, 0.0, 3.0]);
    }

    #[test]
    fn relu_subgradient_at_zero_is_zero() {
        let g = relu_graph(3);
        let t = g.forward(&Tensor::from_vec(vec![-1.0, 0.0, 3.0])).unwrap();
        assert_eq!(g.backward(&t, 1).unwrap().data(), &[0.0, 0.0, 0.0]);
        assert_eq!(g.backward(&t, 2).unwrap().data(), &[0.0, 0.0, 1.0]);
    }

    #[test]
    fn guided_relu_clamps_negative_gradient() {
        let g = relu_graph(2);
        let t = g.forward(&Tensor::from_vec(vec![3.0, 4.0])).unwrap();
        let seed = Tensor::from_vec(vec![-1.0, 2.0]);
        let plain = g.sweep(&t, &seed, GradientMode::Plain).unwrap();
        let guided = g.sweep(&t, &seed, GradientMode::Guided).unwrap();
        assert_eq!(plain.input.data(), &[-1.0, 2.0]);
        assert_eq!(guided.input.data(), &[0.0, 2.0]);
    }

    #[test]
    fn invalid_class_rejected() {
        let g = relu_graph(2);
        let t = g.forward(&Tensor::from_vec(vec![1.0, 1.0])).unwrap();
        assert!(matches!(g.backward(&t, 2), Err(Error::InvalidClass { .. })));
    }

    #[test]
    fn wrong_input_shape_rejected() {
        let g = relu_graph(2);
        assert!(matches!(g.forward(&Tensor::from_vec(vec![1.0])), Err(Error::Shape(_))));
    }

    #[test]
    fn non_finite_activation_rejected() {
        let nodes = vec![LayerNode::new(
            0,
            LayerKind::Linear {
                weight: Tensor::new(vec![1, 1], vec![f64::MAX]).unwrap(),
                bias: Tensor::zeros(&[1]),
            },
            vec![Source::Input],
        )];
        let g = ComputeGraph::new(vec![1], 1, nodes).unwrap();
        assert!(matches!(g.forward(&Tensor::from_vec(vec![10.0])), Err(Error::NonFinite(_))));
    }
}
