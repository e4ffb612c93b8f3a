use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};
use crate::graph::{bilinear_resize, ComputeGraph, GradientMode, LayerKind};
use crate::graph::ops::batch_norm_affine;
use crate::tensor::Tensor;

pub fn gradient(graph: &ComputeGraph, x: &Tensor, class: usize) -> Result<Tensor> {
    graph.backward(&graph.forward(x)?, class)
}

pub fn gradient_x_input(graph: &ComputeGraph, x: &Tensor, class: usize) -> Result<Tensor> {
    gradient(graph, x, class)?.mul(x)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NoiseAggregate {
    /// SmoothGrad.
    Mean,
    /// VarGrad (population variance).
    Variance,
}

/// Running mean and variance. Identical samples give an exact mean and zero variance.
struct Welford {
    count: f64,
    mean: Vec<f64>,
    m2: Vec<f64>,
}

impl Welford {
    fn new(len: usize) -> Self {
        Welford { count: 0.0, mean: vec![0.0; len], m2: vec![0.0; len] }
    }

    fn push(&mut self, sample: &[f64]) {
        self.count += 1.0;
        for ((m, s), &v) in self.mean.iter_mut().zip(&mut self.m2).zip(sample) {
            let delta = v - *m;
            *m += delta / self.count;
            *s += delta * (v - *m);
        }
    }

    fn variance(&self) -> Vec<f64> {
        self.m2.iter().map(|s| s / self.count).collect()
    }
}

/// Mean or variance of gradients over Gaussian-perturbed copies of `x`,
/// with noise scale `sigma_frac * (max(x) - min(x))`.
pub fn smoothgrad(
    graph: &ComputeGraph,
    x: &Tensor,
    class: usize,
    n_samples: usize,
    sigma_frac: f64,
    seed: u64,
    mode: NoiseAggregate,
) -> Result<Tensor> {
    if n_samples == 0 {
        return Err(Error::InvalidArgument("n_samples must be at least 1".into()));
    }
    if sigma_frac < 0.0 {
        return Err(Error::InvalidArgument("sigma_frac must be non-negative".into()));
    }
    let sigma = sigma_frac * (x.max() - x.min());
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut acc = Welford::new(x.len());
    for _ in 0..n_samples {
        let noisy = if sigma > 0.0 {
            let normal = Normal::new(0.0, sigma).map_err(|e| Error::InvalidArgument(e.to_string()))?;
            let data = x.data().iter().map(|&v| v + normal.sample(&mut rng)).collect();
            Tensor::new(x.shape().to_vec(), data)?
        } else {
            x.clone()
        };
        acc.push(gradient(graph, &noisy, class)?.data());
    }
    let data = match mode {
        NoiseAggregate::Mean => acc.mean.clone(),
        NoiseAggregate::Variance => acc.variance(),
    };
    Tensor::new(x.shape().to_vec(), data)
}

/// `(x - baseline) ⊙` midpoint-rule average of gradients along the straight path.
pub fn integrated_gradients(
    graph: &ComputeGraph,
    x: &Tensor,
    class: usize,
    baseline: &Tensor,
    n_steps: usize,
) -> Result<Tensor> {
    baseline.expect_same_shape(x)?;
    if n_steps == 0 {
        return Err(Error::InvalidArgument("n_steps must be at least 1".into()));
    }
    let delta = x.sub(baseline)?;
    let mut acc = Welford::new(x.len());
    for k in 0..n_steps {
        let alpha = (k as f64 + 0.5) / n_steps as f64;
        let point = baseline.zip_map(&delta, |b, d| b + alpha * d)?;
        acc.push(gradient(graph, &point, class)?.data());
    }
    Tensor::new(x.shape().to_vec(), acc.mean)?.mul(&delta)
}

/// Maps a per-node contribution onto the input's layout.
///
/// Spatial maps are summed over channels, bilinearly resized and broadcast
/// over input channels; vectors are linearly resized onto vector inputs and
/// spread uniformly otherwise.
fn project_to_input(contrib: &Tensor, input_shape: &[usize]) -> Vec<f64> {
    let numel: usize = input_shape.iter().product();
    let cs = contrib.shape();
    match (cs.len(), input_shape.len()) {
        (3, 3) => {
            let (h, w) = (cs[1], cs[2]);
            let mut summed = vec![0.0; h * w];
            for ch in contrib.data().chunks(h * w) {
                for (s, v) in summed.iter_mut().zip(ch) {
                    *s += v;
                }
            }
            let (ih, iw) = (input_shape[1], input_shape[2]);
            let map = bilinear_resize(&summed, h, w, ih, iw);
            (0..input_shape[0]).flat_map(|_| map.iter().copied()).collect()
        }
        (1, 1) => bilinear_resize(contrib.data(), 1, cs[0], 1, input_shape[0]),
        _ => vec![contrib.sum() / numel as f64; numel],
    }
}

/// Input-gradient term plus bias-gradient terms of every biased layer,
/// all in absolute value, min-max normalised to `[0, 1]`.
pub fn fullgrad(graph: &ComputeGraph, x: &Tensor, class: usize) -> Result<Tensor> {
    let trace = graph.forward(x)?;
    let mut seed = Tensor::zeros(&[graph.output_dim()]);
    if class >= graph.output_dim() {
        return Err(Error::InvalidClass { index: class, classes: graph.output_dim() });
    }
    seed.data_mut()[class] = 1.0;
    let sweep = graph.sweep(&trace, &seed, GradientMode::Plain)?;
    let mut total = sweep.input.mul(x)?.map(f64::abs);
    for (pos, node) in graph.nodes().iter().enumerate() {
        let bias: Vec<f64> = match &node.kind {
            LayerKind::Linear { bias, .. } | LayerKind::Conv2D { bias, .. } => bias.data().to_vec(),
            LayerKind::FrozenBatchNorm { gamma, beta, mean, var, eps } => {
                batch_norm_affine(gamma.data(), beta.data(), mean.data(), var.data(), *eps).1
            }
            _ => continue,
        };
        if bias.iter().all(|&b| b == 0.0) {
            continue;
        }
        let g = &sweep.nodes[pos];
        let per = g.len() / bias.len();
        let contrib = Tensor::new(
            g.shape().to_vec(),
            g.data().iter().enumerate().map(|(i, v)| (v * bias[i / per]).abs()).collect(),
        )?;
        for (t, v) in total.data_mut().iter_mut().zip(project_to_input(&contrib, x.shape())) {
            *t += v;
        }
    }
    Ok(min_max_normalize(&total))
}

pub(crate) fn min_max_normalize(t: &Tensor) -> Tensor {
    let (lo, hi) = (t.min(), t.max());
    if hi > lo {
        t.map(|v| (v - lo) / (hi - lo))
    } else {
        Tensor::zeros(t.shape())
    }
}
