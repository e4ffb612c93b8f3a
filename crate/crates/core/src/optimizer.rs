//! Grid search over explainer hyperparameters.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::evaluator::{self, Direction, MetricId, MetricResult};
use crate::explainers::{explain, ExplainContext, Explanation, HyperParams, HyperparamSchema, Method};
use crate::parallel::par_map;
use crate::seed::derive_seed;
use crate::tensor::Tensor;

/// One optimization input with its target class and optional ground-truth mask.
#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub x: Tensor,
    pub target: usize,
    pub mask: Option<Tensor>,
}

/// Objective metric plus the settings it needs.
#[derive(Debug, Clone, PartialEq)]
pub struct Objective {
    pub metric: MetricId,
    /// Perturbation-curve steps for ABPC.
    pub steps: usize,
    /// Replacement values for ABPC; `None` means zeros.
    pub baseline: Option<Tensor>,
    pub sensitivity_radius: f64,
    pub sensitivity_probes: usize,
}

impl Objective {
    pub fn new(metric: MetricId) -> Self {
        Objective { metric, steps: 10, baseline: None, sensitivity_radius: 0.05, sensitivity_probes: 4 }
    }

    /// Objective value of a precomputed explanation of `sample`. `None`
    /// means the metric is undefined for it (e.g. no positive attribution mass).
    pub fn score(&self, ctx: &ExplainContext<'_>, sample: &Sample, explanation: &Explanation) -> Result<Option<f64>> {
        Ok(self.evaluate(ctx, sample, explanation, self.metric)?.value)
    }

    /// Evaluates any metric with this objective's settings.
    pub fn evaluate(
        &self,
        ctx: &ExplainContext<'_>,
        sample: &Sample,
        explanation: &Explanation,
        metric: MetricId,
    ) -> Result<MetricResult> {
        let attributions = &explanation.attributions;
        let mask = || {
            sample
                .mask
                .as_ref()
                .ok_or_else(|| Error::InvalidArgument(format!("metric {metric} needs ground-truth masks")))
        };
        match metric {
            MetricId::Abpc => {
                let zeros;
                let baseline = match &self.baseline {
                    Some(b) => b,
                    None => {
                        zeros = Tensor::zeros(sample.x.shape());
                        &zeros
                    }
                };
                evaluator::abpc_of(ctx.graph, &sample.x, sample.target, attributions, self.steps, baseline)
            }
            MetricId::Entropy => Ok(evaluator::compactness_entropy(attributions)),
            MetricId::MassAccuracy => evaluator::relevance_mass_accuracy(attributions, mask()?),
            MetricId::RankAccuracy => evaluator::relevance_rank_accuracy(attributions, mask()?),
            MetricId::Sensitivity => evaluator::continuity_sensitivity(
                &sample.x,
                self.sensitivity_radius,
                self.sensitivity_probes,
                derive_seed(explanation.seed, &[0]),
                |probe| {
                    let e = explain(ctx, explanation.method, probe, sample.target, &explanation.params, explanation.seed)?;
                    Ok(e.attributions)
                },
            ),
        }
    }
}

/// Cartesian product of the candidate lists. Parameters are taken in name
/// order with the first one most significant; the default assignment is
/// prepended when the grid does not contain it.
pub fn expand_grid(schema: &HyperparamSchema) -> Vec<HyperParams> {
    let mut params = schema.params.clone();
    params.sort_by(|a, b| a.name.cmp(&b.name));
    let mut points = vec![HyperParams::new()];
    for spec in &params {
        points = points
            .into_iter()
            .flat_map(|p| {
                spec.candidates.iter().map(move |c| {
                    let mut q = p.clone();
                    q.insert(spec.name.clone(), c.clone());
                    q
                })
            })
            .collect();
    }
    let defaults = schema.defaults();
    if !points.contains(&defaults) {
        points.insert(0, defaults);
    }
    points
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridPointRecord {
    pub index: usize,
    pub params: HyperParams,
    /// Mean objective over samples where the metric is defined.
    pub mean_score: Option<f64>,
    pub scored_samples: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OptimizationRecord {
    pub method: Method,
    pub metric: MetricId,
    pub direction: Direction,
    pub grid: Vec<GridPointRecord>,
    pub default_index: usize,
    pub default_score: Option<f64>,
    pub best_index: usize,
    pub best_params: HyperParams,
    pub best_score: f64,
}

/// Seed for explaining batch sample `sample` at grid point `point`.
pub fn job_seed(seed: u64, method: Method, sample: usize, point: usize) -> u64 {
    derive_seed(seed, &[method.index(), sample as u64, point as u64])
}

/// Scores every grid point by its mean objective over `batch` and picks the
/// best one; ties go to the earliest point. A point whose explanation fails
/// on any sample is recorded with its error and excluded.
pub fn optimize_explainer(
    ctx: &ExplainContext<'_>,
    batch: &[Sample],
    method: Method,
    schema: &HyperparamSchema,
    objective: &Objective,
    seed: u64,
) -> Result<OptimizationRecord> {
    if batch.is_empty() {
        return Err(Error::InvalidArgument("optimization batch is empty".into()));
    }
    let grid = expand_grid(schema);
    let defaults = schema.defaults();
    let default_index = grid.iter().position(|p| *p == defaults).expect("default is always in the grid");

    let jobs: Vec<(usize, usize)> = (0..grid.len()).flat_map(|g| (0..batch.len()).map(move |s| (g, s))).collect();
    let scores = par_map(&jobs, |&(g, s)| -> Result<Option<f64>> {
        let sample = &batch[s];
        let e = explain(ctx, method, &sample.x, sample.target, &grid[g], job_seed(seed, method, s, g))?;
        objective.score(ctx, sample, &e)
    });

    let direction = objective.metric.direction();
    let mut records = Vec::with_capacity(grid.len());
    let mut best: Option<(usize, f64)> = None;
    for (g, (params, chunk)) in grid.iter().zip(scores.chunks(batch.len())).enumerate() {
        let mut record =
            GridPointRecord { index: g, params: params.clone(), mean_score: None, scored_samples: 0, error: None };
        match chunk.iter().find_map(|r| r.as_ref().err()) {
            Some(e) => record.error = Some(e.to_string()),
            None => {
                let defined: Vec<f64> = chunk.iter().filter_map(|r| *r.as_ref().expect("checked")).collect();
                if defined.is_empty() {
                    record.error = Some(format!("{} is undefined on every sample", objective.metric));
                } else {
                    let mean = defined.iter().sum::<f64>() / defined.len() as f64;
                    record.mean_score = Some(mean);
                    record.scored_samples = defined.len();
                    if best.is_none_or(|(_, b)| direction.better(mean, b)) {
                        best = Some((g, mean));
                    }
                }
            }
        }
        records.push(record);
    }

    let (best_index, best_score) = best.ok_or_else(|| Error::AllGridPointsFailed {
        method: method.id().into(),
        message: records.iter().find_map(|r| r.error.clone()).unwrap_or_default(),
    })?;
    Ok(OptimizationRecord {
        method,
        metric: objective.metric,
        direction,
        default_index,
        default_score: records[default_index].mean_score,
        best_index,
        best_params: grid[best_index].clone(),
        best_score,
        grid: records,
    })
}

/// Methods ordered best-first under each record's direction; equal scores
/// keep the input order.
pub fn rank_explainers(records: &[OptimizationRecord]) -> Vec<Method> {
    let mut order: Vec<&OptimizationRecord> = records.iter().collect();
    order.sort_by(|a, b| {
        let ord = a.best_score.total_cmp(&b.best_score);
        match a.direction {
            Direction::HigherBetter => ord.reverse(),
            Direction::LowerBetter => ord,
        }
    });
    order.into_iter().map(|r| r.method).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::explainers::{ParamSpec, ParamValue};

    fn schema(params: Vec<(&str, i64, Vec<i64>)>) -> HyperparamSchema {
        HyperparamSchema {
            method: Method::SmoothGrad,
            params: params
                .into_iter()
                .map(|(n, d, c)| ParamSpec {
                    name: n.into(),
                    default: ParamValue::Int(d),
                    candidates: c.into_iter().map(ParamValue::Int).collect(),
                })
                .collect(),
        }
    }

    #[test]
    fn grid_sizes() {
        assert_eq!(expand_grid(&schema(vec![])), vec![HyperParams::new()]);
        assert_eq!(expand_grid(&schema(vec![("a", 1, vec![1, 2, 3])])).len(), 3);
        let g = expand_grid(&schema(vec![("b", 1, vec![1, 2, 3]), ("a", 1, vec![1, 2])]));
        let flat: Vec<(i64, i64)> = g
            .iter()
            .map(|p| (p["a"].as_f64().unwrap() as i64, p["b"].as_f64().unwrap() as i64))
            .collect();
        assert_eq!(flat, vec![(1, 1), (1, 2), (1, 3), (2, 1), (2, 2), (2, 3)]);
    }

    #[test]
    fn default_prepended_when_missing() {
        let g = expand_grid(&schema(vec![("a", 7, vec![1, 2])]));
        assert_eq!(g.len(), 3);
        assert_eq!(g[0]["a"], ParamValue::Int(7));
    }

    fn record(method: Method, score: f64) -> OptimizationRecord {
        OptimizationRecord {
            method,
            metric: MetricId::Abpc,
            direction: Direction::HigherBetter,
            grid: vec![],
            default_index: 0,
            default_score: Some(score),
            best_index: 0,
            best_params: HyperParams::new(),
            best_score: score,
        }
    }

    #[test]
    fn ranking() {
        let recs = [record(Method::Lime, 0.3), record(Method::KernelShap, 0.7), record(Method::Gradient, 0.5)];
        assert_eq!(rank_explainers(&recs), vec![Method::KernelShap, Method::Gradient, Method::Lime]);
        let tied = [record(Method::Gradient, 0.5), record(Method::Lime, 0.5)];
        assert_eq!(rank_explainers(&tied), vec![Method::Gradient, Method::Lime]);
    }
}
