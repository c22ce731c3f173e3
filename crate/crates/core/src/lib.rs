//! Sparse training for multi-task learning.
//!
//! A small multi-task MLP engine, fixed per-neuron magnitude masks over the
//! shared trunk, gradient-manipulation combiners, and gradient-conflict
//! telemetry, plus a synthetic-benchmark harness and the `mtl-sparse-opt`
//! experiment CLI.
//!
//! The numeric core is generic over [`Scalar`] (`f32` or `f64`); the aliases
//! below fix it to `f64`, which is what experiments use.

pub mod cli;
pub mod combiners;
pub mod config;
pub mod error;
pub mod harness;
pub mod masking;
pub mod metrics;
pub mod model;
pub mod report;
pub mod scalar;
pub mod tensor;

pub use config::RunConfig;
pub use error::{Error, Result};
pub use report::RunReport;
pub use scalar::Scalar;

pub type Tensor = tensor::Tensor<f64>;
pub type MtlModel = model::MtlModel<f64>;
pub type ParamVector = model::ParamVector<f64>;
pub type TaskBatch = model::TaskBatch<f64>;
pub type TaskGradientSet = combiners::TaskGradientSet<f64>;
pub type CombineResult = combiners::CombineResult<f64>;

pub type MtlModelF32 = model::MtlModel<f32>;
pub type TaskGradientSetF32 = combiners::TaskGradientSet<f32>;
