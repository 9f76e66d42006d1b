//! Audio-visual captioning: signal and video frontends, a tape-based autodiff
//! core, modality and joint encoders, a prefix-masked caption decoder,
//! training, beam search and caption metrics.

pub mod app;
pub mod autograd;
pub mod config;
pub mod dataset;
pub mod decoder;
pub mod encoder;
pub mod error;
pub mod gradcheck;
pub mod inference;
pub mod kernels;
pub mod metrics;
pub mod model;
pub mod nn;
pub mod params;
pub mod patches;
pub mod scalar;
pub mod signal;
pub mod synth;
pub mod tensor;
pub mod text;
pub mod training;
pub mod video;

pub use error::{Error, Result};
pub use scalar::Scalar;

pub type Tensor32 = tensor::Tensor<f32>;
pub type Tensor64 = tensor::Tensor<f64>;
pub type Graph32 = autograd::Graph<f32>;
pub type Graph64 = autograd::Graph<f64>;
pub type Params32 = params::ModelParams<f32>;
pub type Params64 = params::ModelParams<f64>;
pub type AvCap32 = model::AvCap<f32>;
pub type AvCap64 = model::AvCap<f64>;
pub type AdamW32 = training::AdamW<f32>;
pub type AdamW64 = training::AdamW<f64>;
