//! Attribution methods behind one calling convention.
//!
//! Every method maps `(graph, input, target class, hyperparameters, seed)` to
//! an [`Explanation`] whose attributions have the input's shape. Missing
//! hyperparameters take their schema defaults; unknown names are rejected.

mod cam;
mod gradient;
mod lrp;
mod perturbation;

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::ComputeGraph;
use crate::tensor::Tensor;

pub use cam::{grad_cam, grad_cam_map, guided_grad_cam};
pub use gradient::{fullgrad, gradient, gradient_x_input, integrated_gradients, smoothgrad, NoiseAggregate};
pub use lrp::{lrp, LrpRule};
pub use perturbation::{compose, grid_segments, kernel_shap, lime, Segmentation};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    Lime,
    KernelShap,
    Gradient,
    GradXInput,
    GradCam,
    GuidedGradCam,
    #[serde(rename = "fullgrad")]
    FullGrad,
    #[serde(rename = "smoothgrad")]
    SmoothGrad,
    #[serde(rename = "vargrad")]
    VarGrad,
    IntegratedGradients,
    Lrp,
}

impl Method {
    pub const ALL: [Method; 11] = [
        Method::Lime,
        Method::KernelShap,
        Method::Gradient,
        Method::GradXInput,
        Method::GradCam,
        Method::GuidedGradCam,
        Method::FullGrad,
        Method::SmoothGrad,
        Method::VarGrad,
        Method::IntegratedGradients,
        Method::Lrp,
    ];

    pub fn id(self) -> &'static str {
        match self {
            Method::Lime => "lime",
            Method::KernelShap => "kernel_shap",
            Method::Gradient => "gradient",
            Method::GradXInput => "grad_x_input",
            Method::GradCam => "grad_cam",
            Method::GuidedGradCam => "guided_grad_cam",
            Method::FullGrad => "fullgrad",
            Method::SmoothGrad => "smoothgrad",
            Method::VarGrad => "vargrad",
            Method::IntegratedGradients => "integrated_gradients",
            Method::Lrp => "lrp",
        }
    }

    /// Stable small integer used when deriving per-job seeds.
    pub fn index(self) -> u64 {
        Method::ALL.iter().position(|&m| m == self).expect("listed") as u64
    }

    /// Hyperparameter schema, sorted by parameter name.
    pub fn schema(self) -> HyperparamSchema {
        use ParamValue::{Float as F, Int as I};
        let text = |s: &str| ParamValue::Text(s.to_string());
        let p = |name: &str, default: ParamValue, candidates: Vec<ParamValue>| ParamSpec {
            name: name.to_string(),
            default,
            candidates,
        };
        let params = match self {
            Method::Gradient | Method::GradXInput | Method::FullGrad | Method::GradCam | Method::GuidedGradCam => {
                vec![]
            }
            Method::SmoothGrad | Method::VarGrad => vec![
                p("n_samples", I(32), vec![I(32), I(64)]),
                p("sigma_frac", F(0.1), vec![F(0.05), F(0.1), F(0.2)]),
            ],
            Method::IntegratedGradients => vec![
                p("baseline", text("zeros"), vec![text("zeros"), text("mean")]),
                p("n_steps", I(64), vec![I(16), I(64), I(128)]),
            ],
            Method::Lrp => vec![
                p("epsilon", F(1e-6), vec![F(1e-9), F(1e-6)]),
                p("gamma", F(0.25), vec![F(0.25)]),
                p(
                    "rule",
                    text("epsilon"),
                    vec![text("epsilon"), text("gamma"), text("zplus_composite")],
                ),
            ],
            Method::Lime => vec![
                p("baseline", text("zeros"), vec![text("zeros")]),
                p("cell", I(8), vec![I(4), I(8), I(16)]),
                p("kernel_width", F(0.25), vec![F(0.1), F(0.25), F(0.5)]),
                p("n_samples", I(512), vec![I(512), I(2048)]),
                p("ridge_lambda", F(1.0), vec![F(1.0)]),
            ],
            Method::KernelShap => vec![
                p("baseline", text("zeros"), vec![text("zeros")]),
                p("cell", I(8), vec![I(4), I(8), I(16)]),
                p("n_samples", I(512), vec![I(512), I(2048)]),
                p("ridge_lambda", F(0.0), vec![F(0.0)]),
            ],
        };
        HyperparamSchema { method: self, params }
    }

    /// Schema adjusted to an input shape: `cell` is meaningless for
    /// non-spatial inputs (every feature is its own segment) and is dropped.
    pub fn schema_for(self, input_shape: &[usize]) -> HyperparamSchema {
        let mut schema = self.schema();
        if input_shape.len() < 2 {
            schema.params.retain(|p| p.name != "cell");
        }
        schema
    }

    pub fn is_stochastic(self) -> bool {
        matches!(self, Method::Lime | Method::KernelShap | Method::SmoothGrad | Method::VarGrad)
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.id())
    }
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Method::ALL
            .into_iter()
            .find(|m| m.id() == s)
            .ok_or_else(|| Error::NotImplemented(s.to_string()))
    }
}

/// A single hyperparameter value.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ParamValue {
    Int(i64),
    Float(f64),
    Text(String),
}

impl ParamValue {
    pub fn as_f64(&self) -> Option<f64> {
        match self {
            ParamValue::Int(v) => Some(*v as f64),
            ParamValue::Float(v) => Some(*v),
            ParamValue::Text(_) => None,
        }
    }

    pub fn as_usize(&self) -> Option<usize> {
        match self {
            ParamValue::Int(v) => usize::try_from(*v).ok(),
            _ => None,
        }
    }

    pub fn as_str(&self) -> Option<&str> {
        match self {
            ParamValue::Text(s) => Some(s),
            _ => None,
        }
    }

    /// Parses `16`, `0.25` or `zeros` style command-line values.
    pub fn parse(text: &str) -> ParamValue {
        if let Ok(i) = text.parse::<i64>() {
            ParamValue::Int(i)
        } else if let Ok(f) = text.parse::<f64>() {
            ParamValue::Float(f)
        } else {
            ParamValue::Text(text.to_string())
        }
    }
}

impl fmt::Display for ParamValue {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ParamValue::Int(v) => write!(f, "{v}"),
            ParamValue::Float(v) => write!(f, "{v}"),
            ParamValue::Text(s) => f.write_str(s),
        }
    }
}

pub type HyperParams = BTreeMap<String, ParamValue>;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParamSpec {
    pub name: String,
    pub default: ParamValue,
    pub candidates: Vec<ParamValue>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HyperparamSchema {
    pub method: Method,
    pub params: Vec<ParamSpec>,
}

impl HyperparamSchema {
    pub fn defaults(&self) -> HyperParams {
        self.params.iter().map(|p| (p.name.clone(), p.default.clone())).collect()
    }

    /// Fills in defaults and rejects names the method does not know.
    pub fn resolve(&self, given: &HyperParams) -> Result<HyperParams> {
        let mut out = self.defaults();
        for (name, value) in given {
            if !out.contains_key(name) {
                return Err(Error::Hyperparameter {
                    method: self.method.id().into(),
                    message: format!("unknown parameter {name:?}"),
                });
            }
            out.insert(name.clone(), value.clone());
        }
        Ok(out)
    }

    /// Replaces the candidate list of `name`, keeping the default.
    pub fn override_candidates(&mut self, name: &str, candidates: Vec<ParamValue>) -> Result<()> {
        let spec = self.params.iter_mut().find(|p| p.name == name).ok_or_else(|| Error::Hyperparameter {
            method: self.method.id().into(),
            message: format!("unknown parameter {name:?} in grid override"),
        })?;
        if candidates.is_empty() {
            return Err(Error::Hyperparameter {
                method: self.method.id().into(),
                message: format!("empty candidate list for {name:?}"),
            });
        }
        spec.candidates = candidates;
        Ok(())
    }
}

/// Attribution tensor plus its provenance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Explanation {
    pub method: Method,
    pub target_class: usize,
    pub params: HyperParams,
    pub seed: u64,
    pub attributions: Tensor,
}

/// Per-model context shared by all explanation calls.
#[derive(Debug, Clone, Copy)]
pub struct ExplainContext<'a> {
    pub graph: &'a ComputeGraph,
    /// Conv2D node for Grad-CAM; `None` means the deepest convolution.
    pub cam_target: Option<usize>,
    /// Dataset mean, used when a method's `baseline` is `"mean"`.
    pub mean_baseline: Option<&'a Tensor>,
}

impl<'a> ExplainContext<'a> {
    pub fn new(graph: &'a ComputeGraph) -> Self {
        ExplainContext { graph, cam_target: None, mean_baseline: None }
    }

    fn baseline(&self, method: Method, params: &HyperParams, x: &Tensor) -> Result<Tensor> {
        match params.get("baseline").and_then(ParamValue::as_str) {
            Some("zeros") | None => Ok(Tensor::zeros(x.shape())),
            Some("mean") => self.mean_baseline.cloned().ok_or_else(|| Error::Hyperparameter {
                method: method.id().into(),
                message: "baseline \"mean\" requested but no dataset mean is available".into(),
            }),
            Some(other) => Err(Error::Hyperparameter {
                method: method.id().into(),
                message: format!("unknown baseline {other:?} (expected zeros or mean)"),
            }),
        }
    }

    fn cam_target(&self) -> Result<usize> {
        match self.cam_target {
            Some(id) => Ok(id),
            None => crate::detector::detect(self.graph)
                .default_cam_target()
                .ok_or_else(|| Error::Unsupported("Grad-CAM needs a Conv2D layer".into())),
        }
    }
}

fn get_usize(method: Method, params: &HyperParams, name: &str) -> Result<usize> {
    params.get(name).and_then(ParamValue::as_usize).ok_or_else(|| Error::Hyperparameter {
        method: method.id().into(),
        message: format!("{name} must be a non-negative integer"),
    })
}

fn get_f64(method: Method, params: &HyperParams, name: &str) -> Result<f64> {
    params.get(name).and_then(ParamValue::as_f64).filter(|v| v.is_finite()).ok_or_else(|| {
        Error::Hyperparameter { method: method.id().into(), message: format!("{name} must be a finite number") }
    })
}

/// Runs `method` on one input.
pub fn explain(
    ctx: &ExplainContext<'_>,
    method: Method,
    x: &Tensor,
    class: usize,
    params: &HyperParams,
    seed: u64,
) -> Result<Explanation> {
    let params = method.schema_for(x.shape()).resolve(params)?;
    let graph = ctx.graph;
    let attributions = match method {
        Method::Gradient => gradient(graph, x, class)?,
        Method::GradXInput => gradient_x_input(graph, x, class)?,
        Method::SmoothGrad | Method::VarGrad => {
            let mode = if method == Method::SmoothGrad { NoiseAggregate::Mean } else { NoiseAggregate::Variance };
            smoothgrad(
                graph,
                x,
                class,
                get_usize(method, &params, "n_samples")?,
                get_f64(method, &params, "sigma_frac")?,
                seed,
                mode,
            )?
        }
        Method::IntegratedGradients => {
            let baseline = ctx.baseline(method, &params, x)?;
            integrated_gradients(graph, x, class, &baseline, get_usize(method, &params, "n_steps")?)?
        }
        Method::FullGrad => fullgrad(graph, x, class)?,
        Method::GradCam => grad_cam(graph, x, class, ctx.cam_target()?)?,
        Method::GuidedGradCam => guided_grad_cam(graph, x, class, ctx.cam_target()?)?,
        Method::Lrp => {
            let rule: LrpRule = params
                .get("rule")
                .and_then(ParamValue::as_str)
                .unwrap_or("epsilon")
                .parse()?;
            lrp(graph, x, class, rule, get_f64(method, &params, "epsilon")?, get_f64(method, &params, "gamma")?)?
        }
        Method::Lime | Method::KernelShap => {
            let cell = if x.shape().len() >= 2 { get_usize(method, &params, "cell")? } else { 1 };
            let segmentation = grid_segments(x.shape(), cell)?;
            let baseline = ctx.baseline(method, &params, x)?;
            let n_samples = get_usize(method, &params, "n_samples")?;
            let ridge = get_f64(method, &params, "ridge_lambda")?;
            if method == Method::Lime {
                let width = get_f64(method, &params, "kernel_width")?;
                lime(graph, x, class, &segmentation, n_samples, width, ridge, &baseline, seed)?
            } else {
                kernel_shap(graph, x, class, &segmentation, n_samples, ridge, &baseline, seed)?
            }
        }
    };
    if attributions.shape() != x.shape() {
        return Err(Error::Shape(format!("{method} produced {:?} for input {:?}", attributions.shape(), x.shape())));
    }
    attributions.check_finite(method.id())?;
    Ok(Explanation { method, target_class: class, params, seed, attributions })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_lie_inside_grids() {
        for m in Method::ALL {
            for p in m.schema().params {
                assert!(p.candidates.contains(&p.default), "{m}: {}", p.name);
            }
        }
    }

    #[test]
    fn schemas_sorted_by_name() {
        for m in Method::ALL {
            let names: Vec<_> = m.schema().params.iter().map(|p| p.name.clone()).collect();
            let mut sorted = names.clone();
            sorted.sort();
            assert_eq!(names, sorted);
        }
    }

    #[test]
    fn method_ids_round_trip() {
        for m in Method::ALL {
            assert_eq!(m.id().parse::<Method>().unwrap(), m);
            let json = serde_json::to_string(&m).unwrap();
            assert_eq!(json, format!("\"{}\"", m.id()));
        }
        assert!("rap".parse::<Method>().is_err());
    }

    #[test]
    fn unknown_parameter_rejected() {
        let mut p = HyperParams::new();
        p.insert("bogus".into(), ParamValue::Int(1));
        assert!(Method::Gradient.schema().resolve(&p).is_err());
    }

    #[test]
    fn param_value_parsing() {
        assert_eq!(ParamValue::parse("16"), ParamValue::Int(16));
        assert_eq!(ParamValue::parse("0.25"), ParamValue::Float(0.25));
        assert_eq!(ParamValue::parse("mean"), ParamValue::Text("mean".into()));
    }
}
