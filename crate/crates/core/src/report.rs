//! The end-to-end pipeline and its output files.
//!
//! [`auto_explain`] runs detect → recommend → optimize → evaluate and returns
//! a self-contained [`AutoExplanationReport`]. [`write_outputs`] stores it as
//! `report.json` plus heatmap/CSV sidecars. Wall time goes to a separate
//! `timing.json` so the report bytes depend only on the inputs and the seed.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::detector::{self, ArchitectureProfile};
use crate::error::{Error, Result};
use crate::evaluator::{feature_ranks, MetricId, MetricResult};
use crate::explainers::{explain, ExplainContext, Explanation, HyperParams, Method};
use crate::graph::ComputeGraph;
use crate::io::{self, BaselineKind, Dataset, RunConfig};
use crate::optimizer::{self, job_seed, Objective, OptimizationRecord, Sample};
use crate::recommender::{self, MappingEntry, Modality, Recommendation};
use crate::tensor::Tensor;

pub const REPORT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Architecture {
    pub description: Vec<String>,
    pub profile: ArchitectureProfile,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ObjectiveSettings {
    pub metric: MetricId,
    pub steps: usize,
    pub perturbation_baseline: BaselineKind,
    pub sensitivity_radius: f64,
    pub sensitivity_probes: usize,
}

/// One stored explanation and every metric computed on it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvaluatedExplanation {
    pub params: HyperParams,
    pub seed: u64,
    pub attributions: Tensor,
    pub metrics: Vec<MetricResult>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampleReport {
    /// Index into the dataset.
    pub sample: usize,
    pub target: usize,
    pub default: EvaluatedExplanation,
    pub optimized: EvaluatedExplanation,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MethodReport {
    pub method: Method,
    pub optimization: OptimizationRecord,
    /// Mean of each metric over samples where it is defined.
    pub default_summary: BTreeMap<MetricId, Option<f64>>,
    pub optimized_summary: BTreeMap<MetricId, Option<f64>>,
    pub samples: Vec<SampleReport>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunMetadata {
    pub seed: u64,
    /// SHA-256 of the effective configuration (output directory excluded).
    pub config_hash: String,
    /// SHA-256 of the model encoding.
    pub model_hash: String,
    /// SHA-256 of the optimization batch (samples and targets).
    pub data_hash: String,
    pub engine_version: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AutoExplanationReport {
    pub report_version: u32,
    pub architecture: Architecture,
    pub modalities: BTreeSet<Modality>,
    pub recommendation: Recommendation,
    pub objective: ObjectiveSettings,
    pub metrics: Vec<MetricId>,
    /// Methods best-first by optimized objective score.
    pub ranking: Vec<Method>,
    pub methods: Vec<MethodReport>,
    pub metadata: RunMetadata,
}

/// One stored explanation of a dataset sample, as written by `explain`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExplanationRecord {
    pub sample: usize,
    pub explanation: Explanation,
}

/// Metrics computed for one stored explanation, as written by `evaluate`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvaluationRecord {
    pub sample: usize,
    pub method: Method,
    pub target: usize,
    pub metrics: Vec<MetricResult>,
}

fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().fold(String::new(), |mut s, b| {
        let _ = write!(s, "{b:02x}");
        s
    })
}

fn config_hash(config: &RunConfig) -> String {
    let mut c = config.clone();
    c.output_dir = None;
    sha256_hex(serde_json::to_string(&c).expect("config serializes").as_bytes())
}

fn model_hash(graph: &ComputeGraph) -> String {
    let (manifest, blob) = io::encode_model(graph);
    let mut bytes = serde_json::to_vec(&manifest).expect("manifest serializes");
    bytes.extend_from_slice(&blob);
    sha256_hex(&bytes)
}

fn data_hash(batch: &[Sample]) -> String {
    let mut h = Sha256::new();
    for s in batch {
        h.update((s.target as u64).to_le_bytes());
        for v in s.x.data() {
            h.update(v.to_le_bytes());
        }
    }
    h.finalize().iter().fold(String::new(), |mut s, b| {
        let _ = write!(s, "{b:02x}");
        s
    })
}

/// Declared modalities: the configuration's if any, else the dataset's.
pub fn effective_modalities(config: &RunConfig, dataset: &Dataset) -> Result<BTreeSet<Modality>> {
    let declared: BTreeSet<Modality> = if config.modalities.is_empty() {
        dataset.modalities.clone()
    } else {
        config.modalities.iter().copied().collect()
    };
    if declared.is_empty() {
        return Err(Error::InvalidArgument(
            "no input modality declared (use --modality or the config's \"modalities\")".into(),
        ));
    }
    Ok(declared)
}

/// Labels when the dataset has them, otherwise the model's predictions.
pub fn targets(graph: &ComputeGraph, dataset: &Dataset) -> Result<Vec<usize>> {
    match &dataset.labels {
        Some(labels) => {
            if let Some(&bad) = labels.iter().find(|&&l| l >= graph.output_dim()) {
                return Err(Error::InvalidClass { index: bad, classes: graph.output_dim() });
            }
            Ok(labels.clone())
        }
        None => dataset.samples.iter().map(|x| Ok(graph.logits(x)?.argmax())).collect(),
    }
}

fn mean_defined(values: impl Iterator<Item = Option<f64>>) -> Option<f64> {
    let defined: Vec<f64> = values.flatten().collect();
    (!defined.is_empty()).then(|| defined.iter().sum::<f64>() / defined.len() as f64)
}

fn summarize(samples: &[SampleReport], metrics: &[MetricId], pick: impl Fn(&SampleReport) -> &EvaluatedExplanation) -> BTreeMap<MetricId, Option<f64>> {
    metrics
        .iter()
        .map(|&m| {
            let values = samples.iter().map(|s| pick(s).metrics.iter().find(|r| r.metric == m).and_then(|r| r.value));
            (m, mean_defined(values))
        })
        .collect()
}

/// Runs the whole pipeline in memory.
pub fn auto_explain(
    graph: &ComputeGraph,
    dataset: &Dataset,
    config: &RunConfig,
    table: &[MappingEntry],
) -> Result<AutoExplanationReport> {
    let profile = detector::detect(graph);
    let architecture = Architecture { description: detector::describe(graph), profile: profile.clone() };

    let modalities = effective_modalities(config, dataset).map_err(|e| e.in_stage("recommend", "configuration"))?;
    let recommendation =
        recommender::recommend(&profile, &modalities, table).map_err(|e| e.in_stage("recommend", "mapping table"))?;
    let methods: Vec<Method> = recommendation
        .recommended
        .iter()
        .map(|id| id.parse::<Method>())
        .collect::<Result<_>>()
        .map_err(|e| e.in_stage("recommend", "mapping table"))?;

    if dataset.samples[0].shape() != graph.input_shape() {
        return Err(Error::Shape(format!(
            "samples have shape {:?} but the model expects {:?}",
            dataset.samples[0].shape(),
            graph.input_shape()
        ))
        .in_stage("load", "dataset"));
    }
    let targets = targets(graph, dataset).map_err(|e| e.in_stage("load", "dataset"))?;
    let n = config.optimization_samples.min(dataset.len());
    let batch: Vec<Sample> = (0..n)
        .map(|i| Sample {
            x: dataset.samples[i].clone(),
            target: targets[i],
            mask: dataset.masks.as_ref().map(|m| m[i].clone()),
        })
        .collect();

    let mean = dataset.mean();
    let mut ctx = ExplainContext::new(graph);
    ctx.mean_baseline = Some(&mean);
    let objective = Objective {
        metric: config.metric,
        steps: config.steps,
        baseline: match config.perturbation_baseline {
            BaselineKind::Zeros => None,
            BaselineKind::Mean => Some(mean.clone()),
        },
        sensitivity_radius: config.sensitivity_radius,
        sensitivity_probes: config.sensitivity_probes,
    };
    let mut metrics = vec![MetricId::Abpc, MetricId::Sensitivity, MetricId::Entropy];
    if dataset.masks.is_some() {
        metrics.extend([MetricId::MassAccuracy, MetricId::RankAccuracy]);
    }
    if !metrics.contains(&config.metric) {
        return Err(Error::InvalidArgument(format!("metric {} needs ground-truth masks", config.metric))
            .in_stage("optimize", "configuration"));
    }

    for method in config.grid.keys() {
        if !methods.contains(method) {
            // Overrides for methods that were not recommended are checked but unused.
            let mut schema = method.schema_for(graph.input_shape());
            for (name, values) in &config.grid[method] {
                schema.override_candidates(name, values.clone()).map_err(|e| e.in_stage("optimize", "configuration"))?;
            }
        }
    }

    let mut reports = Vec::with_capacity(methods.len());
    for &method in &methods {
        let mut schema = method.schema_for(graph.input_shape());
        if let Some(overrides) = config.grid.get(&method) {
            for (name, values) in overrides {
                schema.override_candidates(name, values.clone()).map_err(|e| e.in_stage("optimize", "configuration"))?;
            }
        }
        let record = optimizer::optimize_explainer(&ctx, &batch, method, &schema, &objective, config.seed)
            .map_err(|e| e.in_stage("optimize", method.id()))?;

        let evaluate = |sample_idx: usize, params: &HyperParams, point: usize| -> Result<EvaluatedExplanation> {
            let sample = &batch[sample_idx];
            let seed = job_seed(config.seed, method, sample_idx, point);
            let e: Explanation = explain(&ctx, method, &sample.x, sample.target, params, seed)?;
            let results = metrics.iter().map(|&m| objective.evaluate(&ctx, sample, &e, m)).collect::<Result<_>>()?;
            Ok(EvaluatedExplanation { params: e.params, seed, attributions: e.attributions, metrics: results })
        };
        let grid = optimizer::expand_grid(&schema);
        let samples = crate::parallel::par_map(&(0..batch.len()).collect::<Vec<_>>(), |&i| -> Result<SampleReport> {
            Ok(SampleReport {
                sample: i,
                target: batch[i].target,
                default: evaluate(i, &grid[record.default_index], record.default_index)?,
                optimized: evaluate(i, &grid[record.best_index], record.best_index)?,
            })
        })
        .into_iter()
        .collect::<Result<Vec<_>>>()
        .map_err(|e| e.in_stage("evaluate", method.id()))?;

        reports.push(MethodReport {
            method,
            default_summary: summarize(&samples, &metrics, |s| &s.default),
            optimized_summary: summarize(&samples, &metrics, |s| &s.optimized),
            optimization: record,
            samples,
        });
    }

    let records: Vec<OptimizationRecord> = reports.iter().map(|r| r.optimization.clone()).collect();
    Ok(AutoExplanationReport {
        report_version: REPORT_VERSION,
        architecture,
        modalities,
        recommendation,
        objective: ObjectiveSettings {
            metric: config.metric,
            steps: config.steps,
            perturbation_baseline: config.perturbation_baseline,
            sensitivity_radius: config.sensitivity_radius,
            sensitivity_probes: config.sensitivity_probes,
        },
        metrics,
        ranking: optimizer::rank_explainers(&records),
        methods: reports,
        metadata: RunMetadata {
            seed: config.seed,
            config_hash: config_hash(config),
            model_hash: model_hash(graph),
            data_hash: data_hash(&batch),
            engine_version: env!("CARGO_PKG_VERSION").to_string(),
        },
    })
}

// ------------------------------------------------------------- rendering

/// Blue (negative) → white (zero) → red (positive), scaled by the largest
/// magnitude. Returns `(width, height, rgb bytes)`.
pub fn heatmap_pixels(attributions: &Tensor) -> Result<(usize, usize, Vec<u8>)> {
    let shape = attributions.shape();
    let (h, w, map): (usize, usize, Vec<f64>) = match shape.len() {
        2 => (shape[0], shape[1], attributions.data().to_vec()),
        3 => {
            let (h, w) = (shape[1], shape[2]);
            let mut map = vec![0.0; h * w];
            for ch in attributions.data().chunks(h * w) {
                map.iter_mut().zip(ch).for_each(|(m, v)| *m += v);
            }
            (h, w, map)
        }
        _ => {
            return Err(Error::Unsupported(format!(
                "attributions of shape {shape:?} have no image layout; export them as CSV instead"
            )))
        }
    };
    let scale = map.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let mut rgb = Vec::with_capacity(3 * h * w);
    for v in map {
        let t = if scale > 0.0 { v / scale } else { 0.0 };
        let fade = |t: f64| (255.0 * (1.0 - t.abs())).round() as u8;
        rgb.extend_from_slice(&if t >= 0.0 { [255, fade(t), fade(t)] } else { [fade(t), fade(t), 255] });
    }
    Ok((w, h, rgb))
}

/// Binary PPM (P6) bytes for a heatmap.
pub fn heatmap_ppm(attributions: &Tensor) -> Result<Vec<u8>> {
    let (w, h, rgb) = heatmap_pixels(attributions)?;
    let mut out = format!("P6\n{w} {h}\n255\n").into_bytes();
    out.extend_from_slice(&rgb);
    Ok(out)
}

pub fn render_heatmap(attributions: &Tensor, path: &Path) -> Result<()> {
    fs::write(path, heatmap_ppm(attributions)?).map_err(|e| Error::io(path, e))
}

/// `feature,attribution,rank` rows; values carry 17 significant digits and
/// ranks follow the rank-accuracy tie rule.
pub fn attribution_csv(attributions: &Tensor) -> String {
    let ranks = feature_ranks(attributions);
    let mut out = String::from("feature,attribution,rank\n");
    for (i, (v, r)) in attributions.data().iter().zip(ranks).enumerate() {
        let _ = writeln!(out, "{i},{v:.16e},{r}");
    }
    out
}

pub fn export_csv(attributions: &Tensor, path: &Path) -> Result<()> {
    fs::write(path, attribution_csv(attributions)).map_err(|e| Error::io(path, e))
}

/// Heatmap when the attributions have an image layout, CSV otherwise.
/// Returns the file written.
pub fn write_sidecar(attributions: &Tensor, dir: &Path, stem: &str) -> Result<PathBuf> {
    if attributions.shape().len() >= 2 {
        let path = dir.join(format!("{stem}.ppm"));
        render_heatmap(attributions, &path)?;
        Ok(path)
    } else {
        let path = dir.join(format!("{stem}.csv"));
        export_csv(attributions, &path)?;
        Ok(path)
    }
}

pub fn report_json(report: &AutoExplanationReport) -> String {
    serde_json::to_string_pretty(report).expect("report serializes") + "\n"
}

/// Writes `report.json`, the sidecars for the first `sidecar_samples`
/// samples of every method, and `timing.json`. Returns every file written.
pub fn write_outputs(
    report: &AutoExplanationReport,
    out_dir: &Path,
    sidecar_samples: usize,
    wall_time_secs: f64,
) -> Result<Vec<PathBuf>> {
    fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let mut written = Vec::new();
    let path = out_dir.join("report.json");
    fs::write(&path, report_json(report)).map_err(|e| Error::io(&path, e))?;
    written.push(path);
    for m in &report.methods {
        for s in m.samples.iter().take(sidecar_samples) {
            for (label, e) in [("default", &s.default), ("optimized", &s.optimized)] {
                let stem = format!("{}_sample{}_{label}", m.method, s.sample);
                written.push(write_sidecar(&e.attributions, out_dir, &stem)?);
            }
        }
    }
    let path = out_dir.join("timing.json");
    let timing = serde_json::json!({ "wall_time_secs": wall_time_secs });
    fs::write(&path, serde_json::to_string_pretty(&timing).expect("json") + "\n").map_err(|e| Error::io(&path, e))?;
    written.push(path);
    Ok(written)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_heatmap_is_white() {
        let (w, h, rgb) = heatmap_pixels(&Tensor::zeros(&[1, 2, 3])).unwrap();
        assert_eq!((w, h), (3, 2));
        assert!(rgb.iter().all(|&b| b == 255));
    }

    #[test]
    fn peak_pixel_is_pure_red() {
        let mut t = Tensor::zeros(&[2, 2]);
        t.data_mut()[3] = 2.0;
        t.data_mut()[0] = -1.0;
        let (_, _, rgb) = heatmap_pixels(&t).unwrap();
        assert_eq!(&rgb[9..12], &[255, 0, 0]);
        assert_eq!(&rgb[0..3], &[128, 128, 255]);
        assert_eq!(&rgb[3..6], &[255, 255, 255]);
    }

    #[test]
    fn ppm_header() {
        let bytes = heatmap_ppm(&Tensor::zeros(&[1, 2, 3])).unwrap();
        assert!(bytes.starts_with(b"P6\n3 2\n255\n"));
        assert_eq!(bytes.len(), 11 + 18);
    }

    #[test]
    fn vectors_need_csv() {
        let err = heatmap_ppm(&Tensor::from_vec(vec![1.0, 2.0])).unwrap_err();
        assert!(err.to_string().contains("CSV"));
    }

    #[test]
    fn csv_rows_round_trip() {
        let t = Tensor::from_vec(vec![0.1, -1.0 / 3.0, 0.1]);
        let csv = attribution_csv(&t);
        let rows: Vec<&str> = csv.lines().collect();
        assert_eq!(rows.len(), 4);
        assert_eq!(rows[0], "feature,attribution,rank");
        let back: f64 = rows[2].split(',').nth(1).unwrap().parse().unwrap();
        assert_eq!(back.to_bits(), (-1.0f64 / 3.0).to_bits());
        let ranks: Vec<&str> = rows[1..].iter().map(|r| r.rsplit(',').next().unwrap()).collect();
        assert_eq!(ranks, vec!["1", "3", "2"]);
    }
}
