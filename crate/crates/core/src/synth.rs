//! Synthetic models and datasets with known ground truth.
//!
//! The patch task plants a 4×4 square in 16×16 noise: a bright square means
//! class 1, a dark one class 0, and the square's footprint is the
//! ground-truth mask. A small CNN learns it in a few seconds.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::error::Result;
use crate::evaluator::softmax;
use crate::graph::{ComputeGraph, GradientMode, LayerKind, LayerNode, Source};
use crate::io;
use crate::tensor::Tensor;

pub const PATCH_SIDE: usize = 16;
pub const PATCH_SIZE: usize = 4;
const NOISE_STD: f64 = 0.2;

#[derive(Debug, Clone, PartialEq)]
pub struct LabelledData {
    pub samples: Vec<Tensor>,
    pub labels: Vec<usize>,
    pub masks: Option<Vec<Tensor>>,
}

fn normal(std: f64) -> Normal<f64> {
    Normal::new(0.0, std).expect("valid std")
}

/// `n` patch-task images `[1, 16, 16]` with balanced labels and masks.
pub fn patch_task(n: usize, seed: u64) -> LabelledData {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let noise = normal(NOISE_STD);
    let (mut samples, mut labels, mut masks) = (Vec::new(), Vec::new(), Vec::new());
    for i in 0..n {
        let label = i % 2;
        let sign = if label == 1 { 1.0 } else { -1.0 };
        let top = rng.random_range(0..=PATCH_SIDE - PATCH_SIZE);
        let left = rng.random_range(0..=PATCH_SIDE - PATCH_SIZE);
        let mut img: Vec<f64> = (0..PATCH_SIDE * PATCH_SIDE).map(|_| noise.sample(&mut rng)).collect();
        let mut mask = vec![0.0; PATCH_SIDE * PATCH_SIDE];
        for r in top..top + PATCH_SIZE {
            for c in left..left + PATCH_SIZE {
                img[r * PATCH_SIDE + c] += sign;
                mask[r * PATCH_SIDE + c] = 1.0;
            }
        }
        let shape = vec![1, PATCH_SIDE, PATCH_SIDE];
        samples.push(Tensor::new(shape.clone(), img).expect("shape"));
        masks.push(Tensor::new(shape, mask).expect("shape"));
        labels.push(label);
    }
    LabelledData { samples, labels, masks: Some(masks) }
}

/// Structured task: 8 features, class 1 iff `x0 + x1 - x2 > 0`.
pub fn tabular_task(n: usize, seed: u64) -> LabelledData {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let dist = normal(1.0);
    let (mut samples, mut labels) = (Vec::new(), Vec::new());
    for _ in 0..n {
        let x: Vec<f64> = (0..8).map(|_| dist.sample(&mut rng)).collect();
        labels.push(usize::from(x[0] + x[1] - x[2] > 0.0));
        samples.push(Tensor::from_vec(x));
    }
    LabelledData { samples, labels, masks: None }
}

fn random_tensor(shape: &[usize], std: f64, rng: &mut ChaCha8Rng) -> Tensor {
    let dist = normal(std.max(f64::MIN_POSITIVE));
    let n = shape.iter().product();
    let data = if std == 0.0 { vec![0.0; n] } else { (0..n).map(|_| dist.sample(rng)).collect() };
    Tensor::new(shape.to_vec(), data).expect("shape")
}

fn linear(out: usize, inp: usize, bias_std: f64, rng: &mut ChaCha8Rng) -> LayerKind {
    LayerKind::Linear {
        weight: random_tensor(&[out, inp], (2.0 / inp as f64).sqrt(), rng),
        bias: random_tensor(&[out], bias_std, rng),
    }
}

fn conv(out: usize, inp: usize, k: usize, bias_std: f64, rng: &mut ChaCha8Rng) -> LayerKind {
    LayerKind::Conv2D {
        weight: random_tensor(&[out, inp, k, k], (2.0 / (inp * k * k) as f64).sqrt(), rng),
        bias: random_tensor(&[out], bias_std, rng),
        stride: 1,
        padding: k / 2,
    }
}

/// Chains `kinds` so each node reads the previous one.
pub fn sequential(input_shape: Vec<usize>, output_dim: usize, kinds: Vec<LayerKind>) -> Result<ComputeGraph> {
    let nodes = kinds
        .into_iter()
        .enumerate()
        .map(|(i, k)| LayerNode::new(i, k, vec![if i == 0 { Source::Input } else { Source::Node(i - 1) }]))
        .collect();
    ComputeGraph::new(input_shape, output_dim, nodes)
}

/// He-initialised ReLU MLP over `dims = [input, hidden…, output]`.
pub fn random_mlp(dims: &[usize], bias_std: f64, seed: u64) -> Result<ComputeGraph> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut kinds = Vec::new();
    for (i, pair) in dims.windows(2).enumerate() {
        if i > 0 {
            kinds.push(LayerKind::ReLU);
        }
        kinds.push(linear(pair[1], pair[0], bias_std, &mut rng));
    }
    sequential(vec![dims[0]], dims[dims.len() - 1], kinds)
}

/// Six-node CNN on `[2, 6, 6]` inputs with a residual connection:
/// conv → relu → conv → add(relu, conv) → maxpool → global average pool.
pub fn random_residual_cnn(bias_std: f64, seed: u64) -> Result<ComputeGraph> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let nodes = vec![
        LayerNode::new(0, conv(3, 2, 3, bias_std, &mut rng), vec![Source::Input]),
        LayerNode::new(1, LayerKind::ReLU, vec![Source::Node(0)]),
        LayerNode::new(2, conv(3, 3, 3, bias_std, &mut rng), vec![Source::Node(1)]),
        LayerNode::new(3, LayerKind::ResidualAdd, vec![Source::Node(1), Source::Node(2)]),
        LayerNode::new(4, LayerKind::MaxPool2D { kernel: 2, stride: 2 }, vec![Source::Node(3)]),
        LayerNode::new(5, LayerKind::GlobalAvgPool2D, vec![Source::Node(4)]),
    ];
    ComputeGraph::new(vec![2, 6, 6], 3, nodes)
}

/// Untrained CNN for the patch task.
pub fn patch_cnn(seed: u64) -> Result<ComputeGraph> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let kinds = vec![
        conv(6, 1, 3, 0.0, &mut rng),
        LayerKind::ReLU,
        LayerKind::MaxPool2D { kernel: 2, stride: 2 },
        conv(8, 6, 3, 0.0, &mut rng),
        LayerKind::ReLU,
        LayerKind::GlobalAvgPool2D,
        linear(2, 8, 0.0, &mut rng),
    ];
    sequential(vec![1, PATCH_SIDE, PATCH_SIDE], 2, kinds)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig { epochs: 20, batch_size: 16, learning_rate: 0.01, seed: 0 }
    }
}

struct Adam {
    m: Vec<f64>,
    v: Vec<f64>,
    t: i32,
}

impl Adam {
    fn step(&mut self, params: &mut [f64], grad: &[f64], lr: f64) {
        const B1: f64 = 0.9;
        const B2: f64 = 0.999;
        self.t += 1;
        let (c1, c2) = (1.0 - B1.powi(self.t), 1.0 - B2.powi(self.t));
        for i in 0..params.len() {
            self.m[i] = B1 * self.m[i] + (1.0 - B1) * grad[i];
            self.v[i] = B2 * self.v[i] + (1.0 - B2) * grad[i] * grad[i];
            params[i] -= lr * (self.m[i] / c1) / ((self.v[i] / c2).sqrt() + 1e-8);
        }
    }
}

fn trainable(kind: &mut LayerKind) -> Option<(&mut Tensor, &mut Tensor)> {
    match kind {
        LayerKind::Linear { weight, bias } | LayerKind::Conv2D { weight, bias, .. } => Some((weight, bias)),
        _ => None,
    }
}

/// Minibatch Adam on softmax cross-entropy. The result is rounded to f32
/// precision so it survives a save/load round trip unchanged.
pub fn train(graph: &ComputeGraph, data: &LabelledData, config: TrainConfig) -> Result<ComputeGraph> {
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut graph = graph.clone();
    let mut nodes: Vec<LayerNode> = graph.nodes().to_vec();
    let mut optim: Vec<Option<(Adam, Adam)>> = nodes
        .iter_mut()
        .map(|n| {
            trainable(&mut n.kind).map(|(w, b)| {
                let adam = |len| Adam { m: vec![0.0; len], v: vec![0.0; len], t: 0 };
                (adam(w.len()), adam(b.len()))
            })
        })
        .collect();
    let mut order: Vec<usize> = (0..data.samples.len()).collect();
    for _ in 0..config.epochs {
        order.shuffle(&mut rng);
        for batch in order.chunks(config.batch_size.max(1)) {
            let mut grads: Vec<Option<(Vec<f64>, Vec<f64>)>> = vec![None; nodes.len()];
            for &i in batch {
                let trace = graph.forward(&data.samples[i])?;
                let mut g = softmax(trace.logits().data());
                g[data.labels[i]] -= 1.0;
                let sweep = graph.sweep(&trace, &Tensor::from_vec(g), GradientMode::Plain)?;
                for (acc, pg) in grads.iter_mut().zip(graph.parameter_gradients(&trace, &sweep)) {
                    if let Some(pg) = pg {
                        let (w, b) = acc.get_or_insert_with(|| (vec![0.0; pg.weight.len()], vec![0.0; pg.bias.len()]));
                        w.iter_mut().zip(pg.weight.data()).for_each(|(a, v)| *a += v / batch.len() as f64);
                        b.iter_mut().zip(pg.bias.data()).for_each(|(a, v)| *a += v / batch.len() as f64);
                    }
                }
            }
            for ((node, opt), grad) in nodes.iter_mut().zip(&mut optim).zip(&grads) {
                if let (Some((w, b)), Some((ow, ob)), Some((gw, gb))) = (trainable(&mut node.kind), opt, grad) {
                    ow.step(w.data_mut(), gw, config.learning_rate);
                    ob.step(b.data_mut(), gb, config.learning_rate);
                }
            }
            graph = ComputeGraph::new(graph.input_shape().to_vec(), graph.output_dim(), nodes.clone())?;
        }
    }
    let (manifest, blob) = io::encode_model(&graph);
    let text = serde_json::to_string(&manifest).expect("manifest serializes");
    io::parse_model(&text, &blob, std::path::Path::new("<memory>"))
}

/// Fraction of samples whose argmax logit equals the label.
pub fn accuracy(graph: &ComputeGraph, samples: &[Tensor], labels: &[usize]) -> Result<f64> {
    let mut hits = 0;
    for (x, &y) in samples.iter().zip(labels) {
        if graph.logits(x)?.argmax() == y {
            hits += 1;
        }
    }
    Ok(hits as f64 / samples.len() as f64)
}

/// Patch-task CNN trained on 512 images.
pub fn trained_patch_cnn(seed: u64) -> Result<ComputeGraph> {
    let data = patch_task(512, seed);
    train(&patch_cnn(seed)?, &data, TrainConfig { seed, ..TrainConfig::default() })
}

/// Tabular-task MLP trained on 512 rows.
pub fn trained_tabular_mlp(seed: u64) -> Result<ComputeGraph> {
    let data = tabular_task(512, seed);
    train(&random_mlp(&[8, 16, 2], 0.0, seed)?, &data, TrainConfig { seed, ..TrainConfig::default() })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn patch_masks_cover_sixteen_pixels() {
        let d = patch_task(6, 3);
        for m in d.masks.unwrap() {
            assert_eq!(m.sum(), 16.0);
        }
        assert_eq!(d.labels, vec![0, 1, 0, 1, 0, 1]);
    }

    #[test]
    fn toy_nets_build() {
        assert_eq!(random_mlp(&[4, 8, 8, 3], 0.1, 1).unwrap().nodes().len(), 5);
        assert_eq!(random_residual_cnn(0.1, 1).unwrap().nodes().len(), 6);
        assert_eq!(patch_cnn(0).unwrap().output_dim(), 2);
    }

    #[test]
    fn training_is_deterministic_and_learns_tabular() {
        let data = tabular_task(256, 5);
        let cfg = TrainConfig { epochs: 10, seed: 5, ..TrainConfig::default() };
        let init = random_mlp(&[8, 16, 2], 0.0, 5).unwrap();
        let a = train(&init, &data, cfg).unwrap();
        let b = train(&init, &data, cfg).unwrap();
        assert_eq!(a, b);
        let test = tabular_task(256, 6);
        assert!(accuracy(&a, &test.samples, &test.labels).unwrap() > 0.9);
    }
}
