//! Dense tensors, reverse-mode differentiation and gradient checking.

pub mod gradcheck;
pub mod kernels;
pub mod params;
pub mod tape;
pub mod tensor;


pub use gradcheck::{gradcheck, gradcheck_with_params, GradCheckReport};
pub use kernels::{Conv1dGeom, Conv2dGeom};
pub use params::{ParamId, ParamStore, Parameter};
pub use tape::{Gradients, Tape, VarId};
pub use tensor::Tensor;

/// Normalization epsilon used throughout the model.
pub const NORM_EPS: f64 = 1e-8;
