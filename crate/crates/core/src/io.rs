//! Model, tensor, dataset and configuration files.
//!
//! A model is a JSON manifest plus a raw little-endian weight blob. Tensors
//! travel in a small self-describing binary format:
//!
//! ```text
//! "PNPT" | 0x01 | dtype (0x01 f32LE, 0x02 f64LE) | ndim: u8 | ndim × u32LE dims | payload
//! ```

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::evaluator::MetricId;
use crate::explainers::{Method, ParamValue};
use crate::graph::{ComputeGraph, LayerKind, LayerNode, Source};
use crate::recommender::Modality;
use crate::tensor::Tensor;

pub const FORMAT_VERSION: u32 = 1;
const MAGIC: &[u8; 4] = b"PNPT";
const TENSOR_VERSION: u8 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DType {
    F32,
    F64,
}

impl DType {
    fn width(self) -> usize {
        match self {
            DType::F32 => 4,
            DType::F64 => 8,
        }
    }

    fn code(self) -> u8 {
        match self {
            DType::F32 => 1,
            DType::F64 => 2,
        }
    }
}

fn read_floats(bytes: &[u8], dtype: DType) -> Vec<f64> {
    match dtype {
        DType::F32 => bytes.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().unwrap()) as f64).collect(),
        DType::F64 => bytes.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())).collect(),
    }
}

fn write_floats(out: &mut Vec<u8>, values: &[f64], dtype: DType) {
    for &v in values {
        match dtype {
            DType::F32 => out.extend_from_slice(&(v as f32).to_le_bytes()),
            DType::F64 => out.extend_from_slice(&v.to_le_bytes()),
        }
    }
}

// ---------------------------------------------------------------- tensors

pub fn encode_tensor(t: &Tensor, dtype: DType) -> Result<Vec<u8>> {
    if t.shape().len() > u8::MAX as usize {
        return Err(Error::Shape(format!("{} dimensions do not fit a tensor file", t.shape().len())));
    }
    let mut out = Vec::with_capacity(8 + 4 * t.shape().len() + dtype.width() * t.len());
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&[TENSOR_VERSION, dtype.code(), t.shape().len() as u8]);
    for &d in t.shape() {
        let d = u32::try_from(d).map_err(|_| Error::Shape(format!("dimension {d} exceeds u32")))?;
        out.extend_from_slice(&d.to_le_bytes());
    }
    write_floats(&mut out, t.data(), dtype);
    Ok(out)
}

/// Parses tensor-file bytes; `origin` names the source in errors.
pub fn decode_tensor(bytes: &[u8], origin: &Path) -> Result<Tensor> {
    if bytes.len() < 4 || &bytes[..4] != MAGIC {
        return Err(Error::BadMagic(origin.to_path_buf()));
    }
    let header = bytes.get(4..7).ok_or_else(|| Error::Truncated(origin.to_path_buf()))?;
    if header[0] != TENSOR_VERSION {
        return Err(Error::parse(origin, format!("unsupported tensor file version {}", header[0])));
    }
    let dtype = match header[1] {
        1 => DType::F32,
        2 => DType::F64,
        other => return Err(Error::parse(origin, format!("unknown dtype code {other:#04x}"))),
    };
    let ndim = header[2] as usize;
    let dims_end = 7 + 4 * ndim;
    let dims = bytes.get(7..dims_end).ok_or_else(|| Error::Truncated(origin.to_path_buf()))?;
    let shape: Vec<usize> = dims.chunks_exact(4).map(|c| u32::from_le_bytes(c.try_into().unwrap()) as usize).collect();
    let numel = shape.iter().try_fold(1usize, |acc, &d| acc.checked_mul(d));
    let payload_len = numel
        .and_then(|n| n.checked_mul(dtype.width()))
        .ok_or_else(|| Error::parse(origin, "tensor size overflows"))?;
    let payload = &bytes[dims_end..];
    if payload.len() < payload_len {
        return Err(Error::Truncated(origin.to_path_buf()));
    }
    if payload.len() > payload_len {
        return Err(Error::parse(origin, format!("{} trailing bytes after payload", payload.len() - payload_len)));
    }
    Tensor::new(shape, read_floats(payload, dtype)).map_err(|e| Error::parse(origin, e.to_string()))
}

pub fn load_tensor_file(path: &Path) -> Result<Tensor> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_tensor(&bytes, path)
}

/// Writes `t` losslessly (f64 payload).
pub fn save_tensor_file(path: &Path, t: &Tensor) -> Result<()> {
    fs::write(path, encode_tensor(t, DType::F64)?).map_err(|e| Error::io(path, e))
}

// ----------------------------------------------------------------- models

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WeightEntry {
    pub offset: u64,
    #[serde(default = "default_dtype")]
    pub dtype: DType,
    pub shape: Vec<usize>,
}

fn default_dtype() -> DType {
    DType::F32
}

fn one() -> usize {
    1
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind")]
pub enum LayerSpec {
    Linear {
        weight: String,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        bias: Option<String>,
    },
    Conv2D {
        weight: String,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        bias: Option<String>,
        #[serde(default = "one")]
        stride: usize,
        #[serde(default)]
        padding: usize,
    },
    ReLU,
    MaxPool2D {
        kernel: usize,
        stride: usize,
    },
    AvgPool2D {
        kernel: usize,
        stride: usize,
    },
    GlobalAvgPool2D,
    Flatten,
    ResidualAdd,
    FrozenBatchNorm {
        gamma: String,
        beta: String,
        mean: String,
        var: String,
        eps: f64,
    },
    SoftmaxHead,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerEntry {
    pub id: usize,
    /// Operands; when absent the layer reads the previously listed layer
    /// (or the input, for the first layer).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub inputs: Option<Vec<Source>>,
    #[serde(flatten)]
    pub spec: LayerSpec,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelManifest {
    pub format_version: u32,
    pub input_shape: Vec<usize>,
    pub output_dim: usize,
    pub layers: Vec<LayerEntry>,
    pub weights: BTreeMap<String, WeightEntry>,
}

impl ModelManifest {
    /// Checks that weight ranges lie inside a blob of `blob_len` bytes and do
    /// not overlap.
    pub fn check_weight_table(&self, blob_len: usize) -> Result<()> {
        let mut ranges = Vec::with_capacity(self.weights.len());
        for (name, entry) in &self.weights {
            let numel: usize = entry.shape.iter().product();
            let len = (numel * entry.dtype.width()) as u64;
            let end = entry.offset.checked_add(len).filter(|&e| e <= blob_len as u64).ok_or_else(|| {
                Error::InvalidGraph(format!(
                    "weight {name:?} spans bytes {}..{} but the blob has {blob_len}",
                    entry.offset,
                    entry.offset.saturating_add(len)
                ))
            })?;
            ranges.push((entry.offset, end, name));
        }
        ranges.sort();
        for pair in ranges.windows(2) {
            if pair[1].0 < pair[0].1 {
                return Err(Error::InvalidGraph(format!(
                    "weights {:?} and {:?} overlap in the blob",
                    pair[0].2, pair[1].2
                )));
            }
        }
        Ok(())
    }
}

/// Builds a graph from manifest text and blob bytes.
pub fn parse_model(manifest_text: &str, blob: &[u8], manifest_path: &Path) -> Result<ComputeGraph> {
    let manifest: ModelManifest =
        serde_json::from_str(manifest_text).map_err(|e| Error::parse(manifest_path, e.to_string()))?;
    if manifest.format_version != FORMAT_VERSION {
        return Err(Error::parse(
            manifest_path,
            format!("unsupported format_version {} (expected {FORMAT_VERSION})", manifest.format_version),
        ));
    }
    manifest.check_weight_table(blob.len())?;
    let mut nodes = Vec::with_capacity(manifest.layers.len());
    let mut previous = Source::Input;
    for layer in &manifest.layers {
        let fetch = |name: &str| -> Result<Tensor> {
            let entry = manifest.weights.get(name).ok_or_else(|| Error::Layer {
                layer: layer.id,
                message: format!("weight {name:?} is not in the weight table"),
            })?;
            let start = entry.offset as usize;
            let end = start + entry.shape.iter().product::<usize>() * entry.dtype.width();
            Tensor::new(entry.shape.clone(), read_floats(&blob[start..end], entry.dtype))
                .map_err(|e| Error::Layer { layer: layer.id, message: format!("weight {name:?}: {e}") })
        };
        let zero_bias = |weight: &Tensor| Tensor::zeros(&[weight.shape()[0]]);
        let kind = match &layer.spec {
            LayerSpec::Linear { weight, bias } => {
                let weight = fetch(weight)?;
                let bias = match bias {
                    Some(b) => fetch(b)?,
                    None => zero_bias(&weight),
                };
                LayerKind::Linear { weight, bias }
            }
            LayerSpec::Conv2D { weight, bias, stride, padding } => {
                let weight = fetch(weight)?;
                let bias = match bias {
                    Some(b) => fetch(b)?,
                    None => zero_bias(&weight),
                };
                LayerKind::Conv2D { weight, bias, stride: *stride, padding: *padding }
            }
            LayerSpec::ReLU => LayerKind::ReLU,
            LayerSpec::MaxPool2D { kernel, stride } => LayerKind::MaxPool2D { kernel: *kernel, stride: *stride },
            LayerSpec::AvgPool2D { kernel, stride } => LayerKind::AvgPool2D { kernel: *kernel, stride: *stride },
            LayerSpec::GlobalAvgPool2D => LayerKind::GlobalAvgPool2D,
            LayerSpec::Flatten => LayerKind::Flatten,
            LayerSpec::ResidualAdd => LayerKind::ResidualAdd,
            LayerSpec::FrozenBatchNorm { gamma, beta, mean, var, eps } => LayerKind::FrozenBatchNorm {
                gamma: fetch(gamma)?,
                beta: fetch(beta)?,
                mean: fetch(mean)?,
                var: fetch(var)?,
                eps: *eps,
            },
            LayerSpec::SoftmaxHead => LayerKind::SoftmaxHead,
        };
        let inputs = layer.inputs.clone().unwrap_or_else(|| vec![previous]);
        nodes.push(LayerNode::new(layer.id, kind, inputs));
        previous = Source::Node(layer.id);
    }
    ComputeGraph::new(manifest.input_shape, manifest.output_dim, nodes)
}

pub fn load_model(manifest_path: &Path, blob_path: &Path) -> Result<ComputeGraph> {
    let text = fs::read_to_string(manifest_path).map_err(|e| Error::io(manifest_path, e))?;
    let blob = fs::read(blob_path).map_err(|e| Error::io(blob_path, e))?;
    parse_model(&text, &blob, manifest_path)
}

/// Manifest and f32 blob for `graph`. Weights are named `"{id}.{field}"`.
pub fn encode_model(graph: &ComputeGraph) -> (ModelManifest, Vec<u8>) {
    let mut blob = Vec::new();
    let mut weights = BTreeMap::new();
    let mut layers = Vec::new();
    for node in graph.nodes() {
        let mut put = |field: &str, t: &Tensor| -> String {
            let name = format!("{}.{field}", node.id);
            weights.insert(
                name.clone(),
                WeightEntry { offset: blob.len() as u64, dtype: DType::F32, shape: t.shape().to_vec() },
            );
            write_floats(&mut blob, t.data(), DType::F32);
            name
        };
        let spec = match &node.kind {
            LayerKind::Linear { weight, bias } => {
                LayerSpec::Linear { weight: put("weight", weight), bias: Some(put("bias", bias)) }
            }
            LayerKind::Conv2D { weight, bias, stride, padding } => LayerSpec::Conv2D {
                weight: put("weight", weight),
                bias: Some(put("bias", bias)),
                stride: *stride,
                padding: *padding,
            },
            LayerKind::ReLU => LayerSpec::ReLU,
            LayerKind::MaxPool2D { kernel, stride } => LayerSpec::MaxPool2D { kernel: *kernel, stride: *stride },
            LayerKind::AvgPool2D { kernel, stride } => LayerSpec::AvgPool2D { kernel: *kernel, stride: *stride },
            LayerKind::GlobalAvgPool2D => LayerSpec::GlobalAvgPool2D,
            LayerKind::Flatten => LayerSpec::Flatten,
            LayerKind::ResidualAdd => LayerSpec::ResidualAdd,
            LayerKind::FrozenBatchNorm { gamma, beta, mean, var, eps } => LayerSpec::FrozenBatchNorm {
                gamma: put("gamma", gamma),
                beta: put("beta", beta),
                mean: put("mean", mean),
                var: put("var", var),
                eps: *eps,
            },
            LayerKind::SoftmaxHead => LayerSpec::SoftmaxHead,
        };
        layers.push(LayerEntry { id: node.id, inputs: Some(node.inputs.clone()), spec });
    }
    let manifest = ModelManifest {
        format_version: FORMAT_VERSION,
        input_shape: graph.input_shape().to_vec(),
        output_dim: graph.output_dim(),
        layers,
        weights,
    };
    (manifest, blob)
}

/// Writes the manifest and blob. Weights are narrowed to f32.
pub fn save_model(graph: &ComputeGraph, manifest_path: &Path, blob_path: &Path) -> Result<()> {
    let (manifest, blob) = encode_model(graph);
    let text = serde_json::to_string_pretty(&manifest).expect("manifest serializes");
    fs::write(manifest_path, text + "\n").map_err(|e| Error::io(manifest_path, e))?;
    fs::write(blob_path, blob).map_err(|e| Error::io(blob_path, e))
}

// --------------------------------------------------------------- datasets

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum LabelSource {
    Inline(Vec<usize>),
    File(PathBuf),
}

/// JSON file pointing at the sample, label and mask files. Relative paths
/// are resolved against the descriptor's directory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetDescriptor {
    pub samples: PathBuf,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub labels: Option<LabelSource>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub masks: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub modalities: Vec<Modality>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub samples: Vec<Tensor>,
    /// `None` when the dataset is unlabelled; predictions are used instead.
    pub labels: Option<Vec<usize>>,
    pub masks: Option<Vec<Tensor>>,
    pub modalities: BTreeSet<Modality>,
}

impl Dataset {
    pub fn new(samples: Vec<Tensor>, labels: Option<Vec<usize>>, masks: Option<Vec<Tensor>>) -> Result<Self> {
        let first = samples.first().ok_or_else(|| Error::InvalidArgument("dataset has no samples".into()))?;
        if samples.iter().any(|s| s.shape() != first.shape()) {
            return Err(Error::Shape("samples differ in shape".into()));
        }
        if let Some(l) = &labels {
            if l.len() != samples.len() {
                return Err(Error::Shape(format!("{} labels for {} samples", l.len(), samples.len())));
            }
        }
        if let Some(m) = &masks {
            if m.len() != samples.len() {
                return Err(Error::Shape(format!("{} masks for {} samples", m.len(), samples.len())));
            }
            for (i, mask) in m.iter().enumerate() {
                mask.expect_same_shape(first).map_err(|e| Error::Shape(format!("mask {i}: {e}")))?;
                if mask.data().iter().any(|&v| v != 0.0 && v != 1.0) {
                    return Err(Error::InvalidArgument(format!("mask {i} contains values other than 0 and 1")));
                }
            }
        }
        Ok(Dataset { samples, labels, masks, modalities: BTreeSet::new() })
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    /// Element-wise mean of all samples.
    pub fn mean(&self) -> Tensor {
        let mut acc = Tensor::zeros(self.samples[0].shape());
        for s in &self.samples {
            for (a, v) in acc.data_mut().iter_mut().zip(s.data()) {
                *a += v;
            }
        }
        let n = self.samples.len() as f64;
        acc.map(|v| v / n)
    }
}

fn integer_labels(t: &Tensor, path: &Path) -> Result<Vec<usize>> {
    t.data()
        .iter()
        .map(|&v| {
            if v >= 0.0 && v.fract() == 0.0 && v <= u32::MAX as f64 {
                Ok(v as usize)
            } else {
                Err(Error::parse(path, format!("label {v} is not a non-negative integer")))
            }
        })
        .collect()
}

/// Reads a dataset descriptor (`.json`) or a bare batched tensor file.
/// A separate mask file, when given, overrides the descriptor's.
pub fn load_dataset(path: &Path, masks_override: Option<&Path>) -> Result<Dataset> {
    let is_json = path.extension().is_some_and(|e| e.eq_ignore_ascii_case("json"));
    let (samples_path, labels, masks_path, modalities) = if is_json {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let d: DatasetDescriptor = serde_json::from_str(&text).map_err(|e| Error::parse(path, e.to_string()))?;
        let dir = path.parent().unwrap_or(Path::new(""));
        let labels = match d.labels {
            None => None,
            Some(LabelSource::Inline(v)) => Some(v),
            Some(LabelSource::File(p)) => {
                let p = dir.join(p);
                Some(integer_labels(&load_tensor_file(&p)?, &p)?)
            }
        };
        (dir.join(d.samples), labels, d.masks.map(|m| dir.join(m)), d.modalities)
    } else {
        (path.to_path_buf(), None, None, Vec::new())
    };
    let masks_path = masks_override.map(Path::to_path_buf).or(masks_path);
    let samples = load_tensor_file(&samples_path)?.unstack()?;
    let masks = match &masks_path {
        Some(p) => Some(load_tensor_file(p)?.unstack()?),
        None => None,
    };
    let mut data = Dataset::new(samples, labels, masks)?;
    data.modalities = modalities.into_iter().collect();
    Ok(data)
}

// ----------------------------------------------------------- run config

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BaselineKind {
    Zeros,
    Mean,
}

/// Per-method candidate overrides: `{method: {param: [values]}}`.
pub type GridOverrides = BTreeMap<Method, BTreeMap<String, Vec<ParamValue>>>;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub metric: MetricId,
    pub grid: GridOverrides,
    pub seed: u64,
    /// Size of the optimization batch (the first samples of the dataset).
    pub optimization_samples: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub output_dir: Option<PathBuf>,
    pub modalities: Vec<Modality>,
    /// Perturbation-curve steps.
    pub steps: usize,
    /// Replacement values for perturbation curves.
    pub perturbation_baseline: BaselineKind,
    pub sensitivity_radius: f64,
    pub sensitivity_probes: usize,
    /// Number of samples that get heatmap/CSV sidecars.
    pub sidecar_samples: usize,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            metric: MetricId::Abpc,
            grid: GridOverrides::new(),
            seed: 0,
            optimization_samples: 16,
            output_dir: None,
            modalities: Vec::new(),
            steps: 10,
            perturbation_baseline: BaselineKind::Zeros,
            sensitivity_radius: 0.05,
            sensitivity_probes: 4,
            sidecar_samples: 4,
        }
    }
}

impl RunConfig {
    pub fn parse(text: &str, origin: &Path) -> Result<Self> {
        let config: RunConfig = serde_json::from_str(text).map_err(|e| Error::parse(origin, e.to_string()))?;
        if config.steps == 0 || config.optimization_samples == 0 {
            return Err(Error::parse(origin, "steps and optimization_samples must be at least 1"));
        }
        Ok(config)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text, path)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn tensor_bytes_round_trip() {
        let t = Tensor::from_vec(vec![1.5, -2.0]);
        let back = decode_tensor(&encode_tensor(&t, DType::F64).unwrap(), Path::new("t")).unwrap();
        assert_eq!(back.shape(), t.shape());
        assert_eq!(back.data()[0].to_bits(), 1.5f64.to_bits());
        assert_eq!(back.data()[1].to_bits(), (-2.0f64).to_bits());
    }

    #[test]
    fn bad_magic_and_truncation() {
        let mut bytes = encode_tensor(&Tensor::from_vec(vec![1.0, 2.0]), DType::F32).unwrap();
        assert!(matches!(decode_tensor(b"NOPE\x01\x01\x00", Path::new("x")), Err(Error::BadMagic(_))));
        bytes.pop();
        assert!(matches!(decode_tensor(&bytes, Path::new("x")), Err(Error::Truncated(_))));
        assert!(matches!(decode_tensor(b"PNPT\x01", Path::new("x")), Err(Error::Truncated(_))));
    }

    fn linear_manifest(weight_shape: &str) -> String {
        format!(
            r#"{{"format_version": 1, "input_shape": [2], "output_dim": 2,
                "layers": [{{"id": 0, "kind": "Linear", "weight": "w", "bias": "b"}}],
                "weights": {{"w": {{"offset": 0, "dtype": "f32", "shape": {weight_shape}}},
                             "b": {{"offset": 16, "dtype": "f32", "shape": [2]}}}}}}"#
        )
    }

    fn blob() -> Vec<u8> {
        [1.0f32, 2.0, 3.0, 4.0, 0.5, -0.5].iter().flat_map(|v| v.to_le_bytes()).collect()
    }

    #[test]
    fn minimal_linear_manifest() {
        let g = parse_model(&linear_manifest("[2, 2]"), &blob(), Path::new("m.json")).unwrap();
        assert_eq!(g.nodes().len(), 1);
        let y = g.logits(&Tensor::from_vec(vec![1.0, 1.0])).unwrap();
        assert_eq!(y.data(), &[3.5, 6.5]);
    }

    #[test]
    fn mismatched_weight_names_layer() {
        let err = parse_model(&linear_manifest("[2, 1]"), &blob(), Path::new("m.json")).unwrap_err();
        assert!(err.to_string().contains("layer 0"), "{err}");
    }

    #[test]
    fn dangling_weight_names_layer() {
        let text = linear_manifest("[2, 2]").replace("\"bias\": \"b\"", "\"bias\": \"missing\"");
        let err = parse_model(&text, &blob(), Path::new("m.json")).unwrap_err();
        assert!(matches!(err, Error::Layer { layer: 0, .. }), "{err}");
    }

    #[test]
    fn weight_table_bounds_and_overlap() {
        let short = &blob()[..20];
        assert!(parse_model(&linear_manifest("[2, 2]"), short, Path::new("m.json")).is_err());
        let overlapping = linear_manifest("[2, 2]").replace("\"offset\": 16", "\"offset\": 12");
        let err = parse_model(&overlapping, &blob(), Path::new("m.json")).unwrap_err();
        assert!(err.to_string().contains("overlap"), "{err}");
    }

    #[test]
    fn config_defaults_and_unknown_keys() {
        let c = RunConfig::parse("{}", Path::new("c.json")).unwrap();
        assert_eq!(c.seed, 0);
        assert_eq!(c.metric, MetricId::Abpc);
        assert_eq!(c.optimization_samples, 16);
        assert!(RunConfig::parse(r#"{"sede": 1}"#, Path::new("c.json")).is_err());
        assert!(RunConfig::parse(r#"{"metric": "accuracy"}"#, Path::new("c.json")).is_err());
        let g = RunConfig::parse(r#"{"grid": {"lime": {"cell": [2, 4]}}}"#, Path::new("c.json")).unwrap();
        assert_eq!(g.grid[&Method::Lime]["cell"], vec![ParamValue::Int(2), ParamValue::Int(4)]);
    }

    #[test]
    fn masks_must_be_binary() {
        let s = vec![Tensor::zeros(&[2])];
        assert!(Dataset::new(s.clone(), None, Some(vec![Tensor::from_vec(vec![0.0, 0.5])])).is_err());
        assert!(Dataset::new(s.clone(), Some(vec![0, 1]), None).is_err());
        assert!(Dataset::new(s, None, Some(vec![Tensor::from_vec(vec![0.0, 1.0])])).is_ok());
    }
}
