//! Independent oracles shared by the integration tests.
#![allow(dead_code)]

use xai_core::graph::{ComputeGraph, ForwardTrace, LayerKind, Source};
use xai_core::Tensor;

pub fn logit(graph: &ComputeGraph, x: &Tensor, class: usize) -> f64 {
    graph.logits(x).unwrap().data()[class]
}

/// Central finite differences of `logits[class]` with step `h`.
pub fn finite_difference(graph: &ComputeGraph, x: &Tensor, class: usize, h: f64) -> Vec<f64> {
    (0..x.len())
        .map(|i| {
            let mut up = x.clone();
            let mut down = x.clone();
            up.data_mut()[i] += h;
            down.data_mut()[i] -= h;
            (logit(graph, &up, class) - logit(graph, &down, class)) / (2.0 * h)
        })
        .collect()
}

fn operand<'a>(graph: &ComputeGraph, trace: &'a ForwardTrace, source: Source) -> &'a Tensor {
    match source {
        Source::Input => trace.input(),
        Source::Node(id) => trace.activation_at(graph.position(id).unwrap()),
    }
}

/// Every piecewise decision the network makes: ReLU signs and max-pool
/// winners. Finite differences are only trusted when this is constant over
/// the stencil.
pub fn switching_pattern(graph: &ComputeGraph, x: &Tensor) -> Vec<usize> {
    let trace = graph.forward(x).unwrap();
    let mut pattern = Vec::new();
    for node in graph.nodes() {
        let a = operand(graph, &trace, node.inputs[0]);
        match &node.kind {
            LayerKind::ReLU => pattern.extend(a.data().iter().map(|&v| usize::from(v > 0.0))),
            LayerKind::MaxPool2D { kernel, stride } => {
                let (c, h, w) = (a.shape()[0], a.shape()[1], a.shape()[2]);
                let (oh, ow) = ((h - kernel) / stride + 1, (w - kernel) / stride + 1);
                for ch in 0..c {
                    for oy in 0..oh {
                        for ox in 0..ow {
                            let mut best = None;
                            for ky in 0..*kernel {
                                for kx in 0..*kernel {
                                    let i = (ch * h + oy * stride + ky) * w + ox * stride + kx;
                                    if best.is_none_or(|b: usize| a.data()[i] > a.data()[b]) {
                                        best = Some(i);
                                    }
                                }
                            }
                            pattern.push(best.unwrap());
                        }
                    }
                }
            }
            _ => {}
        }
    }
    pattern
}

/// Exact Shapley values of `v` over `m` players by enumerating all `2^m`
/// coalitions (bit `i` set = player `i` present).
pub fn brute_force_shapley(m: usize, v: impl Fn(&[bool]) -> f64) -> Vec<f64> {
    let values: Vec<f64> = (0..1usize << m)
        .map(|bits| v(&(0..m).map(|i| bits >> i & 1 == 1).collect::<Vec<_>>()))
        .collect();
    let fact = |n: usize| (1..=n).map(|k| k as f64).product::<f64>();
    (0..m)
        .map(|i| {
            let mut phi = 0.0;
            for bits in 0..1usize << m {
                if bits >> i & 1 == 1 {
                    continue;
                }
                let s = bits.count_ones() as usize;
                let w = fact(s) * fact(m - s - 1) / fact(m);
                phi += w * (values[bits | 1 << i] - values[bits]);
            }
            phi
        })
        .collect()
}

/// Value function for segment-masking explainers: the class logit with
/// absent features set to the baseline.
pub fn masked_logit(graph: &ComputeGraph, x: &Tensor, baseline: &Tensor, class: usize, keep: &[bool]) -> f64 {
    let data = x.data().iter().zip(baseline.data()).zip(keep).map(|((&a, &b), &k)| if k { a } else { b }).collect();
    logit(graph, &Tensor::new(x.shape().to_vec(), data).unwrap(), class)
}

pub fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

pub fn mean(values: &[f64]) -> f64 {
    values.iter().sum::<f64>() / values.len() as f64
}
