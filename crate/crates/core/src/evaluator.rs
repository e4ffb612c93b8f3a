//! Quantitative explanation metrics.
//!
//! Correctness is measured by ABPC (area between the LeRF and MoRF
//! perturbation curves), continuity by explanation sensitivity to small
//! input perturbations, and compactness by attribution entropy. When a
//! ground-truth mask exists, relevance mass and rank accuracy are available.

use std::fmt;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::ComputeGraph;
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MetricId {
    Abpc,
    Sensitivity,
    Entropy,
    MassAccuracy,
    RankAccuracy,
}

impl MetricId {
    pub const ALL: [MetricId; 5] =
        [MetricId::Abpc, MetricId::Sensitivity, MetricId::Entropy, MetricId::MassAccuracy, MetricId::RankAccuracy];

    pub fn id(self) -> &'static str {
        match self {
            MetricId::Abpc => "abpc",
            MetricId::Sensitivity => "sensitivity",
            MetricId::Entropy => "entropy",
            MetricId::MassAccuracy => "mass_accuracy",
            MetricId::RankAccuracy => "rank_accuracy",
        }
    }

    pub fn direction(self) -> Direction {
        match self {
            MetricId::Abpc | MetricId::MassAccuracy | MetricId::RankAccuracy => Direction::HigherBetter,
            MetricId::Sensitivity | MetricId::Entropy => Direction::LowerBetter,
        }
    }

    pub fn needs_mask(self) -> bool {
        matches!(self, MetricId::MassAccuracy | MetricId::RankAccuracy)
    }
}

impl fmt::Display for MetricId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.id())
    }
}

impl FromStr for MetricId {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        MetricId::ALL.into_iter().find(|m| m.id() == s).ok_or_else(|| {
            Error::InvalidArgument(format!(
                "unknown metric {s:?} (expected abpc, sensitivity, entropy, mass_accuracy or rank_accuracy)"
            ))
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Direction {
    HigherBetter,
    LowerBetter,
}

impl Direction {
    /// True when `a` is strictly better than `b`.
    pub fn better(self, a: f64, b: f64) -> bool {
        match self {
            Direction::HigherBetter => a > b,
            Direction::LowerBetter => a < b,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Order {
    /// Most relevant first.
    MoRF,
    /// Least relevant first.
    LeRF,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Curve {
    /// Fraction of features replaced, `0, 1/steps, …, 1`.
    pub fractions: Vec<f64>,
    /// Softmax probability of the target class at each step.
    pub values: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CurvePair {
    pub morf: Curve,
    pub lerf: Curve,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricResult {
    pub metric: MetricId,
    /// `None` when the metric is undefined for this explanation
    /// (e.g. no positive attribution mass).
    pub value: Option<f64>,
    pub direction: Direction,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub curves: Option<CurvePair>,
}

impl MetricResult {
    fn new(metric: MetricId, value: Option<f64>) -> Self {
        MetricResult { metric, value, direction: metric.direction(), curves: None }
    }
}

pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|v| (v - max).exp()).collect();
    let total: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / total).collect()
}

/// Flat feature indices ranked by `key`, descending; ties go to the lowest index.
fn rank_desc(values: &[f64], key: impl Fn(f64) -> f64) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..values.len()).collect();
    idx.sort_by(|&a, &b| key(values[b]).total_cmp(&key(values[a])).then(a.cmp(&b)));
    idx
}

/// Features ordered for removal. Both orders break ties by lowest flat index.
pub fn feature_order(attributions: &Tensor, order: Order) -> Vec<usize> {
    match order {
        Order::MoRF => rank_desc(attributions.data(), f64::abs),
        Order::LeRF => rank_desc(attributions.data(), |v| -v.abs()),
    }
}

/// Target-class probability as the top `t/steps` fraction of features (in
/// the given order) is replaced by the baseline, for `t = 0..=steps`.
#[allow(clippy::too_many_arguments)]
pub fn perturbation_curve(
    graph: &ComputeGraph,
    x: &Tensor,
    class: usize,
    attributions: &Tensor,
    order: Order,
    steps: usize,
    baseline: &Tensor,
) -> Result<Curve> {
    if steps == 0 {
        return Err(Error::InvalidArgument("perturbation curves need at least one step".into()));
    }
    attributions.expect_same_shape(x)?;
    baseline.expect_same_shape(x)?;
    if class >= graph.output_dim() {
        return Err(Error::InvalidClass { index: class, classes: graph.output_dim() });
    }
    let ranked = feature_order(attributions, order);
    let n = x.len();
    let mut current = x.clone();
    let mut replaced = 0;
    let mut fractions = Vec::with_capacity(steps + 1);
    let mut values = Vec::with_capacity(steps + 1);
    for t in 0..=steps {
        let upto = t * n / steps;
        for &i in &ranked[replaced..upto] {
            current.data_mut()[i] = baseline.data()[i];
        }
        replaced = upto;
        let logits = graph.logits(&current)?;
        values.push(softmax(logits.data())[class]);
        fractions.push(t as f64 / steps as f64);
    }
    Ok(Curve { fractions, values })
}

/// Trapezoidal area of `LeRF - MoRF` over the replaced fraction.
pub fn abpc(morf: &Curve, lerf: &Curve) -> Result<MetricResult> {
    if morf.fractions != lerf.fractions || morf.values.len() != morf.fractions.len() || morf.values.len() < 2 {
        return Err(Error::InvalidArgument("MoRF and LeRF curves must share a step grid".into()));
    }
    let diff: Vec<f64> = lerf.values.iter().zip(&morf.values).map(|(l, m)| l - m).collect();
    let area = morf
        .fractions
        .windows(2)
        .zip(diff.windows(2))
        .map(|(f, d)| (f[1] - f[0]) * (d[0] + d[1]) / 2.0)
        .sum();
    let mut result = MetricResult::new(MetricId::Abpc, Some(area));
    result.curves = Some(CurvePair { morf: morf.clone(), lerf: lerf.clone() });
    Ok(result)
}

/// Builds both curves and their ABPC.
pub fn abpc_of(
    graph: &ComputeGraph,
    x: &Tensor,
    class: usize,
    attributions: &Tensor,
    steps: usize,
    baseline: &Tensor,
) -> Result<MetricResult> {
    let morf = perturbation_curve(graph, x, class, attributions, Order::MoRF, steps, baseline)?;
    let lerf = perturbation_curve(graph, x, class, attributions, Order::LeRF, steps, baseline)?;
    abpc(&morf, &lerf)
}

/// Mean of `‖E(x) − E(x + δ)‖₂ / ‖E(x)‖₂` over probes `δ ~ U([-radius, radius]^n)`.
///
/// When `‖E(x)‖₂ = 0` the absolute difference is used instead.
pub fn continuity_sensitivity(
    x: &Tensor,
    radius: f64,
    n_probes: usize,
    seed: u64,
    explainer: impl Fn(&Tensor) -> Result<Tensor>,
) -> Result<MetricResult> {
    if n_probes == 0 || !(radius >= 0.0) {
        return Err(Error::InvalidArgument("sensitivity needs n_probes ≥ 1 and radius ≥ 0".into()));
    }
    let base = explainer(x)?;
    let norm = base.l2_norm();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut total = 0.0;
    for _ in 0..n_probes {
        let probe = if radius > 0.0 {
            let data = x.data().iter().map(|&v| v + rng.random_range(-radius..=radius)).collect();
            Tensor::new(x.shape().to_vec(), data)?
        } else {
            x.clone()
        };
        let diff = explainer(&probe)?.sub(&base)?.l2_norm();
        total += if norm > 0.0 { diff / norm } else { diff };
    }
    Ok(MetricResult::new(MetricId::Sensitivity, Some(total / n_probes as f64)))
}

/// Shannon entropy (nats) of `|a| / Σ|a|`; undefined for all-zero attributions.
pub fn compactness_entropy(attributions: &Tensor) -> MetricResult {
    let total: f64 = attributions.data().iter().map(|v| v.abs()).sum();
    let value = (total > 0.0).then(|| {
        -attributions
            .data()
            .iter()
            .map(|v| v.abs() / total)
            .filter(|&p| p > 0.0)
            .map(|p| p * p.ln())
            .sum::<f64>()
    });
    MetricResult::new(MetricId::Entropy, value)
}

fn check_mask(attributions: &Tensor, mask: &Tensor) -> Result<()> {
    attributions.expect_same_shape(mask)?;
    if mask.data().iter().any(|&m| m != 0.0 && m != 1.0) {
        return Err(Error::InvalidArgument("ground-truth mask must contain only 0 and 1".into()));
    }
    Ok(())
}

/// Share of positive attribution mass that falls inside the mask.
pub fn relevance_mass_accuracy(attributions: &Tensor, mask: &Tensor) -> Result<MetricResult> {
    check_mask(attributions, mask)?;
    let (mut inside, mut total) = (0.0, 0.0);
    for (&a, &m) in attributions.data().iter().zip(mask.data()) {
        let p = a.max(0.0);
        total += p;
        if m == 1.0 {
            inside += p;
        }
    }
    Ok(MetricResult::new(MetricId::MassAccuracy, (total > 0.0).then(|| inside / total)))
}

/// Fraction of the `K = |mask|` highest-attributed features that lie in the mask.
pub fn relevance_rank_accuracy(attributions: &Tensor, mask: &Tensor) -> Result<MetricResult> {
    check_mask(attributions, mask)?;
    let k = mask.data().iter().filter(|&&m| m == 1.0).count();
    if k == 0 {
        return Ok(MetricResult::new(MetricId::RankAccuracy, None));
    }
    let hits = rank_desc(attributions.data(), |v| v).into_iter().take(k).filter(|&i| mask.data()[i] == 1.0).count();
    Ok(MetricResult::new(MetricId::RankAccuracy, Some(hits as f64 / k as f64)))
}

/// 1-based rank of every feature by attribution value, consistent with
/// [`relevance_rank_accuracy`]'s tie rule.
pub fn feature_ranks(attributions: &Tensor) -> Vec<usize> {
    let mut ranks = vec![0; attributions.len()];
    for (r, i) in rank_desc(attributions.data(), |v| v).into_iter().enumerate() {
        ranks[i] = r + 1;
    }
    ranks
}
