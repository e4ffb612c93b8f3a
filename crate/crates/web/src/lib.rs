//! Browser demo over the bundled patch-task CNN.
//!
//! Three operations are exported: recommending explainers for a set of
//! modalities, explaining one sample as a heatmap, and scoring it with
//! MoRF/LeRF curves. The plain-Rust [`Demo`] methods return JSON strings so
//! they can be tested natively; the wasm wrappers only convert errors.

use std::collections::BTreeSet;
use std::path::Path;

use serde_json::{json, Value};
use wasm_bindgen::prelude::*;
use xai_core::detector;
use xai_core::evaluator::{self, Order};
use xai_core::explainers::{explain, ExplainContext, HyperParams, Method, ParamValue};
use xai_core::io::{self, DatasetDescriptor, LabelSource};
use xai_core::recommender::{self, Modality};
use xai_core::report;
use xai_core::{ComputeGraph, Tensor};

const MANIFEST: &str = include_str!("../../../data/example/patch/model.json");
const WEIGHTS: &[u8] = include_bytes!("../../../data/example/patch/model.bin");
const SAMPLES: &[u8] = include_bytes!("../../../data/example/patch/samples.pnpt");
const MASKS: &[u8] = include_bytes!("../../../data/example/patch/masks.pnpt");
const DESCRIPTOR: &str = include_str!("../../../data/example/patch/data.json");

#[wasm_bindgen]
pub struct Demo {
    graph: ComputeGraph,
    samples: Vec<Tensor>,
    masks: Vec<Tensor>,
    labels: Vec<usize>,
}

fn text_error(e: impl ToString) -> String {
    e.to_string()
}

fn rgba(attributions: &Tensor) -> Result<Value, String> {
    let (w, h, rgb) = report::heatmap_pixels(attributions).map_err(text_error)?;
    let pixels: Vec<u8> = rgb.chunks(3).flat_map(|p| [p[0], p[1], p[2], 255]).collect();
    Ok(json!({ "width": w, "height": h, "rgba": pixels }))
}

/// Grey-scale view of an input image, scaled to its own range.
fn grey(x: &Tensor) -> Value {
    let (lo, hi) = (x.min(), x.max());
    let span = if hi > lo { hi - lo } else { 1.0 };
    let shape = x.shape();
    let pixels: Vec<u8> = x
        .data()
        .iter()
        .flat_map(|v| {
            let g = (255.0 * (v - lo) / span).round() as u8;
            [g, g, g, 255]
        })
        .collect();
    json!({ "width": shape[2], "height": shape[1], "rgba": pixels })
}

fn parse_params(text: &str) -> Result<HyperParams, String> {
    if text.trim().is_empty() {
        return Ok(HyperParams::new());
    }
    let map: serde_json::Map<String, Value> = serde_json::from_str(text).map_err(text_error)?;
    map.into_iter()
        .map(|(k, v)| {
            let value = match v {
                Value::Number(n) if n.is_i64() => ParamValue::Int(n.as_i64().unwrap()),
                Value::Number(n) => ParamValue::Float(n.as_f64().unwrap()),
                Value::String(s) => ParamValue::Text(s),
                other => return Err(format!("parameter {k:?} has unsupported value {other}")),
            };
            Ok((k, value))
        })
        .collect()
}

impl Demo {
    pub fn load() -> Result<Demo, String> {
        let origin = Path::new("embedded");
        let graph = io::parse_model(MANIFEST, WEIGHTS, origin).map_err(text_error)?;
        let samples = io::decode_tensor(SAMPLES, origin).and_then(|t| t.unstack()).map_err(text_error)?;
        let masks = io::decode_tensor(MASKS, origin).and_then(|t| t.unstack()).map_err(text_error)?;
        let descriptor: DatasetDescriptor = serde_json::from_str(DESCRIPTOR).map_err(text_error)?;
        let labels = match descriptor.labels {
            Some(LabelSource::Inline(l)) => l,
            _ => return Err("embedded descriptor has no inline labels".into()),
        };
        Ok(Demo { graph, samples, masks, labels })
    }

    fn sample(&self, index: usize) -> Result<(&Tensor, usize), String> {
        let x = self.samples.get(index).ok_or_else(|| format!("sample {index} out of range"))?;
        Ok((x, self.labels[index]))
    }

    fn attributions(&self, method: &str, index: usize, params: &str, seed: u64) -> Result<Tensor, String> {
        let method: Method = method.parse().map_err(text_error)?;
        let (x, target) = self.sample(index)?;
        let ctx = ExplainContext::new(&self.graph);
        let e = explain(&ctx, method, x, target, &parse_params(params)?, seed).map_err(text_error)?;
        Ok(e.attributions)
    }

    /// `{"recommended": [...], "rejected": [...]}` for comma-separated modality codes.
    pub fn recommend_json(&self, modalities: &str) -> Result<String, String> {
        let set = modalities
            .split(',')
            .map(str::trim)
            .filter(|s| !s.is_empty())
            .map(|s| s.parse::<Modality>())
            .collect::<Result<BTreeSet<_>, _>>()
            .map_err(text_error)?;
        if set.is_empty() {
            return Err("choose at least one modality".into());
        }
        let profile = detector::detect(&self.graph);
        let rec = recommender::recommend(&profile, &set, &recommender::default_table()).map_err(text_error)?;
        serde_json::to_string(&rec).map_err(text_error)
    }

    /// Input image and attribution heatmap as RGBA arrays, plus the
    /// localisation scores against the planted patch.
    pub fn explain_json(&self, method: &str, index: usize, params: &str, seed: u64) -> Result<String, String> {
        let attr = self.attributions(method, index, params, seed)?;
        let (x, target) = self.sample(index)?;
        let mask = &self.masks[index];
        let mass = evaluator::relevance_mass_accuracy(&attr, mask).map_err(text_error)?.value;
        let rank = evaluator::relevance_rank_accuracy(&attr, mask).map_err(text_error)?.value;
        let predicted = self.graph.logits(x).map_err(text_error)?.argmax();
        Ok(json!({
            "input": grey(x),
            "heatmap": rgba(&attr)?,
            "target": target,
            "predicted": predicted,
            "mass_accuracy": mass,
            "rank_accuracy": rank,
        })
        .to_string())
    }

    /// MoRF and LeRF probability curves and their ABPC.
    pub fn curves_json(&self, method: &str, index: usize, params: &str, seed: u64, steps: usize) -> Result<String, String> {
        let attr = self.attributions(method, index, params, seed)?;
        let (x, target) = self.sample(index)?;
        let baseline = Tensor::zeros(x.shape());
        let curve = |order| evaluator::perturbation_curve(&self.graph, x, target, &attr, order, steps, &baseline);
        let morf = curve(Order::MoRF).map_err(text_error)?;
        let lerf = curve(Order::LeRF).map_err(text_error)?;
        let score = evaluator::abpc(&morf, &lerf).map_err(text_error)?.value;
        Ok(json!({ "fractions": morf.fractions, "morf": morf.values, "lerf": lerf.values, "abpc": score }).to_string())
    }
}

#[wasm_bindgen]
impl Demo {
    #[wasm_bindgen(constructor)]
    pub fn new() -> Result<Demo, JsError> {
        Demo::load().map_err(|e| JsError::new(&e))
    }

    #[wasm_bindgen(js_name = sampleCount)]
    pub fn sample_count(&self) -> usize {
        self.samples.len()
    }

    /// Layer listing, one line per node.
    pub fn describe(&self) -> String {
        detector::describe(&self.graph).join("\n")
    }

    pub fn recommend(&self, modalities: &str) -> Result<String, JsError> {
        self.recommend_json(modalities).map_err(|e| JsError::new(&e))
    }

    pub fn explain(&self, method: &str, index: usize, params: &str, seed: u64) -> Result<String, JsError> {
        self.explain_json(method, index, params, seed).map_err(|e| JsError::new(&e))
    }

    pub fn curves(&self, method: &str, index: usize, params: &str, seed: u64, steps: usize) -> Result<String, JsError> {
        self.curves_json(method, index, params, seed, steps).map_err(|e| JsError::new(&e))
    }
}
