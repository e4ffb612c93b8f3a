//! Layer-wise relevance propagation.
//!
//! Relevance starts as the target logit and flows backwards node by node.
//! Linear and Conv2D layers redistribute with the selected rule; the other
//! layers have fixed redistribution schemes. The stabiliser for a layer is
//! `epsilon * mean(|z|)` over that layer's pre-activations, so `epsilon` is
//! relative to the layer's scale.

use std::str::FromStr;

use crate::error::{Error, Result};
use crate::graph::ops::{self, ConvGeometry, PoolGeometry};
use crate::graph::{ComputeGraph, LayerKind};
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LrpRule {
    /// ε-rule on every weighted layer.
    Epsilon,
    /// γ-rule (`w + γ w⁺`) on every weighted layer.
    Gamma,
    /// z⁺ on convolutions, ε on linear layers.
    ZPlusComposite,
}

impl FromStr for LrpRule {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "epsilon" => Ok(LrpRule::Epsilon),
            "gamma" => Ok(LrpRule::Gamma),
            "zplus_composite" => Ok(LrpRule::ZPlusComposite),
            _ => Err(Error::Hyperparameter {
                method: "lrp".into(),
                message: format!("unknown rule {s:?} (expected epsilon, gamma or zplus_composite)"),
            }),
        }
    }
}

/// Sign with `sign(0) = +1`, so the stabiliser never cancels.
fn stabilize(z: f64, eps: f64) -> f64 {
    if z >= 0.0 {
        z + eps
    } else {
        z - eps
    }
}

fn layer_eps(z: &[f64], epsilon: f64) -> f64 {
    let scale = z.iter().map(|v| v.abs()).sum::<f64>() / z.len() as f64;
    if scale > 0.0 {
        epsilon * scale
    } else {
        epsilon
    }
}

fn modified_weight(weight: &Tensor, rule: LrpRule, is_conv: bool, gamma: f64) -> Tensor {
    match (rule, is_conv) {
        (LrpRule::Epsilon, _) | (LrpRule::ZPlusComposite, false) => weight.clone(),
        (LrpRule::Gamma, _) => weight.map(|w| w + gamma * w.max(0.0)),
        (LrpRule::ZPlusComposite, true) => weight.map(|w| w.max(0.0)),
    }
}

/// Generic rule: `R_in = a ⊙ Jᵀ (R_out / stab(z))` where `z = J a` and `J`
/// applies the (modified) weights without bias.
fn redistribute(
    a: &[f64],
    relevance: &[f64],
    epsilon: f64,
    apply: impl Fn(&[f64]) -> Vec<f64>,
    apply_t: impl Fn(&[f64]) -> Vec<f64>,
) -> Vec<f64> {
    let z = apply(a);
    let eps = layer_eps(&z, epsilon);
    let s: Vec<f64> = z.iter().zip(relevance).map(|(&z, &r)| r / stabilize(z, eps)).collect();
    let c = apply_t(&s);
    a.iter().zip(c).map(|(a, c)| a * c).collect()
}

pub fn lrp(
    graph: &ComputeGraph,
    x: &Tensor,
    class: usize,
    rule: LrpRule,
    epsilon: f64,
    gamma: f64,
) -> Result<Tensor> {
    if class >= graph.output_dim() {
        return Err(Error::InvalidClass { index: class, classes: graph.output_dim() });
    }
    if !(epsilon >= 0.0) || !(gamma >= 0.0) {
        return Err(Error::InvalidArgument("LRP epsilon and gamma must be non-negative".into()));
    }
    let trace = graph.forward(x)?;
    let n = graph.nodes().len();
    let mut rel: Vec<Vec<f64>> = (0..n).map(|p| vec![0.0; graph.shape_at(p).iter().product()]).collect();
    let mut input_rel = vec![0.0; x.len()];
    rel[n - 1][class] = trace.logits().data()[class];

    for pos in (0..n).rev() {
        let node = &graph.nodes()[pos];
        let slots = graph.slots(pos);
        let r_out = std::mem::take(&mut rel[pos]);
        let a = trace.operand(slots[0]);
        let upstream: Vec<Vec<f64>> = match &node.kind {
            LayerKind::Linear { weight, .. } => {
                let w = modified_weight(weight, rule, false, gamma);
                vec![redistribute(
                    a.data(),
                    &r_out,
                    epsilon,
                    |v| ops::linear(v, &w, None),
                    |s| ops::linear_vjp(s, &w),
                )]
            }
            LayerKind::Conv2D { weight, stride, padding, .. } => {
                let w = modified_weight(weight, rule, true, gamma);
                let geo = ConvGeometry::new(a.shape(), &w, *stride, *padding);
                vec![redistribute(
                    a.data(),
                    &r_out,
                    epsilon,
                    |v| ops::conv2d(v, &w, None, &geo),
                    |s| ops::conv2d_vjp(s, &w, &geo),
                )]
            }
            LayerKind::ReLU | LayerKind::Flatten | LayerKind::SoftmaxHead => vec![r_out],
            LayerKind::MaxPool2D { kernel, stride } => {
                vec![ops::max_pool_vjp(&r_out, a.data(), &PoolGeometry::new(a.shape(), *kernel, *stride))]
            }
            LayerKind::AvgPool2D { kernel, stride } => {
                let geo = PoolGeometry::new(a.shape(), *kernel, *stride);
                let area = (kernel * kernel) as f64;
                vec![redistribute(
                    a.data(),
                    &r_out,
                    epsilon,
                    |v| ops::avg_pool(v, &geo).into_iter().map(|m| m * area).collect(),
                    |s| ops::avg_pool_vjp(s, a.len(), &geo).into_iter().map(|g| g * area).collect(),
                )]
            }
            LayerKind::GlobalAvgPool2D => {
                let dims = ops::Dims3::of(a.shape());
                let area = (dims.h * dims.w) as f64;
                vec![redistribute(
                    a.data(),
                    &r_out,
                    epsilon,
                    |v| ops::global_avg_pool(v, dims).into_iter().map(|m| m * area).collect(),
                    |s| ops::global_avg_pool_vjp(s, dims).into_iter().map(|g| g * area).collect(),
                )]
            }
            LayerKind::ResidualAdd => {
                let b = trace.operand(slots[1]);
                let total: Vec<f64> = a.data().iter().zip(b.data()).map(|(x, y)| x + y).collect();
                let eps = layer_eps(&total, epsilon);
                let share = |part: &[f64]| -> Vec<f64> {
                    part.iter()
                        .zip(&total)
                        .zip(&r_out)
                        .map(|((p, t), r)| p / stabilize(*t, eps) * r)
                        .collect()
                };
                vec![share(a.data()), share(b.data())]
            }
            LayerKind::FrozenBatchNorm { gamma: g, beta, mean, var, eps } => {
                let (scale, _) = ops::batch_norm_affine(g.data(), beta.data(), mean.data(), var.data(), *eps);
                let channels = scale.len();
                vec![redistribute(
                    a.data(),
                    &r_out,
                    epsilon,
                    |v| ops::per_channel(v, channels, |x, c| scale[c] * x),
                    |s| ops::per_channel(s, channels, |x, c| scale[c] * x),
                )]
            }
        };
        for (slot, r) in slots.iter().zip(upstream) {
            let target = match slot {
                None => &mut input_rel,
                Some(p) => &mut rel[*p],
            };
            for (t, v) in target.iter_mut().zip(r) {
                *t += v;
            }
        }
    }
    Tensor::new(x.shape().to_vec(), input_rel)
}
