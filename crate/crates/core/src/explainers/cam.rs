use crate::error::{Error, Result};
use crate::graph::{bilinear_resize, ComputeGraph, LayerKind, Source};
use crate::tensor::Tensor;

/// Class activation map of `target_node` upsampled to the input's `[H, W]`.
///
/// Channel weights are the spatial mean of the gradient at the target layer;
/// the map is `ReLU(Σ_k w_k A_k)`.
pub fn grad_cam_map(graph: &ComputeGraph, x: &Tensor, class: usize, target_node: usize) -> Result<Vec<f64>> {
    let node = graph.node(target_node)?;
    if !matches!(node.kind, LayerKind::Conv2D { .. }) {
        return Err(Error::InvalidArgument(format!("Grad-CAM target {target_node} is not a Conv2D node")));
    }
    let input_shape = x.shape();
    if input_shape.len() != 3 {
        return Err(Error::Unsupported(format!("Grad-CAM needs a [C, H, W] input, got {input_shape:?}")));
    }
    let trace = graph.forward(x)?;
    let grad = graph.intermediate_gradient(&trace, Source::Node(target_node), class)?;
    let act = trace.activation_at(graph.position(target_node)?);
    let (k, h, w) = (act.shape()[0], act.shape()[1], act.shape()[2]);
    let area = h * w;
    let mut map = vec![0.0; area];
    for c in 0..k {
        let weight = grad.data()[c * area..(c + 1) * area].iter().sum::<f64>() / area as f64;
        for (m, a) in map.iter_mut().zip(&act.data()[c * area..(c + 1) * area]) {
            *m += weight * a;
        }
    }
    for m in &mut map {
        *m = m.max(0.0);
    }
    Ok(bilinear_resize(&map, h, w, input_shape[1], input_shape[2]))
}

fn broadcast_channels(map: &[f64], shape: &[usize]) -> Result<Tensor> {
    Tensor::new(shape.to_vec(), (0..shape[0]).flat_map(|_| map.iter().copied()).collect())
}

pub fn grad_cam(graph: &ComputeGraph, x: &Tensor, class: usize, target_node: usize) -> Result<Tensor> {
    broadcast_channels(&grad_cam_map(graph, x, class, target_node)?, x.shape())
}

/// Guided backpropagation masked by the Grad-CAM map.
pub fn guided_grad_cam(graph: &ComputeGraph, x: &Tensor, class: usize, target_node: usize) -> Result<Tensor> {
    let cam = grad_cam(graph, x, class, target_node)?;
    let guided = graph.guided_backward(&graph.forward(x)?, class)?;
    guided.mul(&cam)
}
