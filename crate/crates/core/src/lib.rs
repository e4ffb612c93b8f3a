//! Architecture-aware feature attribution.
//!
//! The pipeline: load a model ([`io`]), detect its layer families
//! ([`detector`]), pick applicable attribution methods ([`recommender`]),
//! tune each method's hyperparameters against a faithfulness objective
//! ([`optimizer`], [`evaluator`]), and write a report ([`report`]).

// `!(x >= 0.0)` is how argument checks reject NaN as well as negatives.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod detector;
pub mod error;
pub mod evaluator;
pub mod explainers;
pub mod graph;
pub mod io;
pub mod optimizer;
pub mod parallel;
pub mod recommender;
pub mod report;
pub mod seed;
pub mod synth;
pub mod tensor;

pub use error::{Error, Result};
pub use graph::{ComputeGraph, ForwardTrace, LayerKind, LayerNode, NodeRef, Source};
pub use tensor::Tensor;
