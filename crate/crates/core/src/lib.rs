//! Learning blind image denoisers from corrupted observations only.
//!
//! A conditional generator is trained to *transfer* noise: given an
//! observation `y` and the noise level map `M_z` of a target observation
//! `z`, it reproduces `z`. Denoising is the special case `M_z = 0`.
//! Training pairs are synthesized from the observations themselves with a
//! camera-pipeline noise model ([`noise_model`]).

pub mod checkpoint;
pub mod config;
pub mod discriminator;
pub mod error;
pub mod evaluation;
pub mod generator;
pub mod image;
pub mod manifest;
pub mod nn;
pub mod noise_model;
pub mod pipeline;
pub mod scalar;
pub mod seed;
pub mod tensor;
pub mod training;

pub use error::{Error, Result};
pub use scalar::Scalar;

pub type Image32 = image::Image<f32>;
pub type Image64 = image::Image<f64>;
pub type NoiseLevelMap32 = image::NoiseLevelMap<f32>;
pub type NoiseLevelMap64 = image::NoiseLevelMap<f64>;
pub type TrainingPair32 = noise_model::TrainingPair<f32>;
pub type TrainingPair64 = noise_model::TrainingPair<f64>;
pub type ParameterSet32 = nn::ParameterSet<f32>;
pub type ParameterSet64 = nn::ParameterSet<f64>;
pub type Tensor32 = tensor::Tensor<f32>;
pub type Tensor64 = tensor::Tensor<f64>;
pub type Trainer32 = training::Trainer<f32>;
pub type Trainer64 = training::Trainer<f64>;
pub type Checkpoint32 = checkpoint::Checkpoint<f32>;
pub type Checkpoint64 = checkpoint::Checkpoint<f64>;
pub type Dataset32 = training::Dataset<f32>;
pub type Dataset64 = training::Dataset<f64>;
