//! Context-aware gaze estimation trained with a coordinate-regression plus
//! graph-matching objective.
//!
//! The numeric core is generic over [`Scalar`] (`f32` or `f64`). Training and
//! checkpoints use `f32`; gradient checks run in `f64`. Concrete aliases for
//! the common instantiations live at the crate root.

// `!(x > 0)` is used on purpose: it also rejects NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod encoders;
pub mod error;
pub mod formats;
pub mod fusion;
pub mod gazegraph;
pub mod matcher;
pub mod nn;
pub mod pipeline;
pub mod scalar;
pub mod tensor;

#[cfg(test)]
mod testutil;

pub use error::{GemError, Result};
pub use pipeline::{GemModel, MetricsReport, Sample, TrainConfig};
pub use scalar::Scalar;
pub use tensor::{grad_check, Gradients, ParamId, ParamStore, Tape, Tensor, Var};

pub type Tensor64 = Tensor<f64>;
pub type Tensor32 = Tensor<f32>;
pub type Tape64 = Tape<f64>;
pub type ParamStore64 = ParamStore<f64>;
pub type ParamStore32 = ParamStore<f32>;
