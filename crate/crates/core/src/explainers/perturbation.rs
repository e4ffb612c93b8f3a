//! Model-agnostic surrogate explainers over input segments.

use std::collections::HashMap;

use nalgebra::{DMatrix, DVector};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::ComputeGraph;
use crate::tensor::Tensor;

/// Segment label per input feature (flat row-major), labels `0..count`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Segmentation {
    pub labels: Vec<usize>,
    pub count: usize,
}

impl Segmentation {
    /// Paints one value per segment back onto every feature.
    pub fn paint(&self, values: &[f64], shape: &[usize]) -> Result<Tensor> {
        Tensor::new(shape.to_vec(), self.labels.iter().map(|&l| values[l]).collect())
    }
}

/// Axis-aligned `cell × cell` tiles over the two trailing spatial axes,
/// shared across channels. Vector inputs get one segment per feature.
pub fn grid_segments(shape: &[usize], cell: usize) -> Result<Segmentation> {
    if cell == 0 {
        return Err(Error::InvalidArgument("segment cell size must be at least 1".into()));
    }
    let (channels, h, w) = match *shape {
        [n] => return Ok(Segmentation { labels: (0..n).collect(), count: n }),
        [h, w] => (1, h, w),
        [c, h, w] => (c, h, w),
        _ => return Err(Error::Unsupported(format!("cannot segment input of shape {shape:?}"))),
    };
    let tiles_w = w.div_ceil(cell);
    let count = h.div_ceil(cell) * tiles_w;
    let plane: Vec<usize> = (0..h)
        .flat_map(|y| (0..w).map(move |x| (y / cell) * tiles_w + x / cell))
        .collect();
    let labels = (0..channels).flat_map(|_| plane.iter().copied()).collect();
    Ok(Segmentation { labels, count })
}

/// Takes features of segments with `keep[s] == true` from `x`, the rest from `baseline`.
pub fn compose(x: &Tensor, baseline: &Tensor, segmentation: &Segmentation, keep: &[bool]) -> Result<Tensor> {
    x.expect_same_shape(baseline)?;
    let data = x
        .data()
        .iter()
        .zip(baseline.data())
        .zip(&segmentation.labels)
        .map(|((&xv, &bv), &l)| if keep[l] { xv } else { bv })
        .collect();
    Tensor::new(x.shape().to_vec(), data)
}

fn logit(graph: &ComputeGraph, input: &Tensor, class: usize) -> Result<f64> {
    let logits = graph.logits(input)?;
    logits
        .data()
        .get(class)
        .copied()
        .ok_or(Error::InvalidClass { index: class, classes: graph.output_dim() })
}

/// Solves `(XᵀWX + λI) β = XᵀW y`. Uses a least-squares pseudo-inverse when `λ = 0`.
fn weighted_ridge(rows: &[Vec<f64>], y: &[f64], weights: &[f64], lambda: f64) -> Result<Vec<f64>> {
    let p = rows.first().map_or(0, Vec::len);
    let mut a = DMatrix::<f64>::zeros(p, p);
    let mut b = DVector::<f64>::zeros(p);
    for ((row, &yi), &wi) in rows.iter().zip(y).zip(weights) {
        for i in 0..p {
            if row[i] == 0.0 {
                continue;
            }
            let wri = wi * row[i];
            b[i] += wri * yi;
            for j in 0..p {
                a[(i, j)] += wri * row[j];
            }
        }
    }
    for i in 0..p {
        a[(i, i)] += lambda;
    }
    let solution = if lambda > 0.0 {
        a.cholesky().map(|c| c.solve(&b))
    } else {
        a.svd(true, true).solve(&b, 1e-12).ok()
    };
    let beta = solution.ok_or_else(|| Error::Singular("surrogate normal equations".into()))?;
    if beta.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("surrogate regression".into()));
    }
    Ok(beta.iter().copied().collect())
}

/// Weighted ridge regression of the target logit on binary segment masks.
///
/// The first sample is the unperturbed input. Sample weights are
/// `exp(-d² / kernel_width²)` with `d` the cosine distance between the mask
/// and the all-ones mask. The intercept is fitted but not penalised.
#[allow(clippy::too_many_arguments)]
pub fn lime(
    graph: &ComputeGraph,
    x: &Tensor,
    class: usize,
    segmentation: &Segmentation,
    n_samples: usize,
    kernel_width: f64,
    ridge_lambda: f64,
    baseline: &Tensor,
    seed: u64,
) -> Result<Tensor> {
    let s = segmentation.count;
    if n_samples < s + 2 {
        return Err(Error::InvalidArgument(format!("LIME needs at least {} samples for {s} segments", s + 2)));
    }
    if !(kernel_width > 0.0) || !(ridge_lambda >= 0.0) {
        return Err(Error::InvalidArgument("kernel_width must be positive and ridge_lambda non-negative".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut masks = Vec::with_capacity(n_samples);
    masks.push(vec![true; s]);
    while masks.len() < n_samples {
        masks.push((0..s).map(|_| rng.random_bool(0.5)).collect::<Vec<bool>>());
    }
    let mut y = Vec::with_capacity(n_samples);
    let mut weights = Vec::with_capacity(n_samples);
    for keep in &masks {
        y.push(logit(graph, &compose(x, baseline, segmentation, keep)?, class)?);
        let on = keep.iter().filter(|&&k| k).count() as f64;
        let d = if on == 0.0 { 1.0 } else { 1.0 - (on / s as f64).sqrt() };
        weights.push((-(d * d) / (kernel_width * kernel_width)).exp());
    }

    // Centre on weighted means so the intercept drops out of the penalty.
    let wsum: f64 = weights.iter().sum();
    let ybar = y.iter().zip(&weights).map(|(v, w)| v * w).sum::<f64>() / wsum;
    let mut xbar = vec![0.0; s];
    for (keep, w) in masks.iter().zip(&weights) {
        for (m, &k) in xbar.iter_mut().zip(keep) {
            if k {
                *m += w;
            }
        }
    }
    for m in &mut xbar {
        *m /= wsum;
    }
    let rows: Vec<Vec<f64>> = masks
        .iter()
        .map(|keep| keep.iter().zip(&xbar).map(|(&k, m)| f64::from(u8::from(k)) - m).collect())
        .collect();
    let yc: Vec<f64> = y.iter().map(|v| v - ybar).collect();
    let coef = weighted_ridge(&rows, &yc, &weights, ridge_lambda)?;
    segmentation.paint(&coef, x.shape())
}

fn binomial(n: usize, k: usize) -> f64 {
    (0..k).fold(1.0, |acc, i| acc * (n - i) as f64 / (i + 1) as f64)
}

/// Calls `f` with every `k`-subset of `0..n` in lexicographic order.
fn for_each_combination(n: usize, k: usize, mut f: impl FnMut(&[usize])) {
    let mut idx: Vec<usize> = (0..k).collect();
    loop {
        f(&idx);
        let mut i = k;
        loop {
            if i == 0 {
                return;
            }
            i -= 1;
            if idx[i] != i + n - k {
                break;
            }
            if i == 0 {
                return;
            }
        }
        idx[i] += 1;
        for j in i + 1..k {
            idx[j] = idx[j - 1] + 1;
        }
    }
}

struct CoalitionSet {
    masks: Vec<Vec<bool>>,
    weights: Vec<f64>,
    index: HashMap<Vec<bool>, usize>,
}

impl CoalitionSet {
    fn add(&mut self, mask: Vec<bool>, weight: f64) -> bool {
        if let Some(&i) = self.index.get(&mask) {
            self.weights[i] += weight;
            return false;
        }
        self.index.insert(mask.clone(), self.masks.len());
        self.masks.push(mask);
        self.weights.push(weight);
        true
    }
}

/// Coalitions and regression weights following the Shapley kernel.
///
/// Subset sizes are taken smallest-first (paired with their complements)
/// and enumerated completely while the budget covers them; the remaining
/// budget is sampled from the leftover sizes in proportion to the kernel.
/// A budget of at least `2^M - 2` therefore enumerates every coalition.
fn shapley_coalitions(m: usize, budget: usize, rng: &mut ChaCha8Rng) -> CoalitionSet {
    let max_coalitions = if m >= 63 { usize::MAX } else { (1usize << m) - 2 };
    let budget = budget.min(max_coalitions);
    let n_sizes = (m - 1).div_ceil(2);
    let n_paired = (m - 1) / 2;
    let kernel: Vec<f64> = (1..=n_sizes)
        .map(|s| {
            let w = (m - 1) as f64 / (s * (m - s)) as f64;
            if s <= n_paired { 2.0 * w } else { w }
        })
        .collect();
    let total: f64 = kernel.iter().sum();
    let kernel: Vec<f64> = kernel.iter().map(|w| w / total).collect();

    let mut set = CoalitionSet { masks: Vec::new(), weights: Vec::new(), index: HashMap::new() };
    let mut remaining = kernel.clone();
    let mut left = budget as f64;
    let mut full_sizes = 0;
    for s in 1..=n_sizes {
        let paired = s <= n_paired;
        let n_subsets = binomial(m, s) * if paired { 2.0 } else { 1.0 };
        if left * remaining[s - 1] / n_subsets < 1.0 - 1e-8 {
            break;
        }
        full_sizes += 1;
        left -= n_subsets;
        if remaining[s - 1] < 1.0 {
            let r = 1.0 - remaining[s - 1];
            for w in &mut remaining {
                *w /= r;
            }
        }
        let w = kernel[s - 1] / n_subsets;
        for_each_combination(m, s, |idx| {
            let mut mask = vec![false; m];
            for &i in idx {
                mask[i] = true;
            }
            if paired {
                set.add(mask.iter().map(|b| !b).collect(), w);
            }
            set.add(mask, w);
        });
    }

    let n_fixed = set.masks.len();
    let mut left = budget.saturating_sub(n_fixed);
    if full_sizes < n_sizes && left > 0 {
        let probs: Vec<f64> = (full_sizes..n_sizes)
            .map(|i| if i < n_paired { kernel[i] / 2.0 } else { kernel[i] })
            .collect();
        let psum: f64 = probs.iter().sum();
        let mut features: Vec<usize> = (0..m).collect();
        let mut draws = 4 * left;
        while left > 0 && draws > 0 {
            draws -= 1;
            let mut u = rng.random::<f64>() * psum;
            let mut pick = probs.len() - 1;
            for (i, p) in probs.iter().enumerate() {
                if u < *p {
                    pick = i;
                    break;
                }
                u -= p;
            }
            let size = full_sizes + pick + 1;
            features.shuffle(rng);
            let mut mask = vec![false; m];
            for &i in &features[..size] {
                mask[i] = true;
            }
            if set.add(mask.clone(), 1.0) {
                left -= 1;
            }
            if left > 0 && size <= n_paired && set.add(mask.iter().map(|b| !b).collect(), 1.0) {
                left -= 1;
            }
        }
        let leftover: f64 = kernel[full_sizes..].iter().sum();
        let sampled: f64 = set.weights[n_fixed..].iter().sum();
        if sampled > 0.0 {
            for w in &mut set.weights[n_fixed..] {
                *w *= leftover / sampled;
            }
        }
    }
    set
}

/// KernelSHAP with the efficiency constraint `Σφ = f(x) - f(baseline)` enforced exactly.
#[allow(clippy::too_many_arguments)]
pub fn kernel_shap(
    graph: &ComputeGraph,
    x: &Tensor,
    class: usize,
    segmentation: &Segmentation,
    n_samples: usize,
    ridge_lambda: f64,
    baseline: &Tensor,
    seed: u64,
) -> Result<Tensor> {
    let m = segmentation.count;
    if m < 2 {
        return Err(Error::InvalidArgument(format!("KernelSHAP needs at least 2 segments, got {m}")));
    }
    if n_samples < 2 * m {
        return Err(Error::InvalidArgument(format!("KernelSHAP needs at least {} samples for {m} segments", 2 * m)));
    }
    if !(ridge_lambda >= 0.0) {
        return Err(Error::InvalidArgument("ridge_lambda must be non-negative".into()));
    }
    let fx = logit(graph, x, class)?;
    let fb = logit(graph, baseline, class)?;
    let delta = fx - fb;

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let set = shapley_coalitions(m, n_samples, &mut rng);

    // Eliminate the last coordinate: φ_last = Δ - Σ_{i<last} φ_i.
    let mut rows = Vec::with_capacity(set.masks.len());
    let mut y = Vec::with_capacity(set.masks.len());
    for mask in &set.masks {
        let v = logit(graph, &compose(x, baseline, segmentation, mask)?, class)? - fb;
        let last = f64::from(u8::from(mask[m - 1]));
        y.push(v - last * delta);
        rows.push(mask[..m - 1].iter().map(|&b| f64::from(u8::from(b)) - last).collect::<Vec<f64>>());
    }
    let mut phi = weighted_ridge(&rows, &y, &set.weights, ridge_lambda)?;
    let head: f64 = phi.iter().sum();
    phi.push(delta - head);
    segmentation.paint(&phi, x.shape())
}
