//! Multi-scale target speaker extraction with conditional speaker modulation.

pub mod audio;
pub mod checks;
pub mod config;
pub mod error;
pub mod extractor;
pub mod frontend;
pub mod kvconfig;
pub mod maskgen;
pub mod model;
pub mod nn;
pub mod numcore;
pub mod objective;
pub mod scalar;
pub mod spkenc;
pub mod trainer;

pub use config::{ConditioningMode, ModelConfig, Toggles};
pub use error::{Error, Result};
pub use model::{count_parameters, Model, ParamCount};
pub use scalar::Scalar;

pub type Tensor32 = numcore::Tensor<f32>;
pub type Tensor64 = numcore::Tensor<f64>;

pub type Model32 = model::Model<f32>;
pub type Model64 = model::Model<f64>;
