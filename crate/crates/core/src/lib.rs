//! Desert locust breeding-ground prediction: record curation, raster
//! feature extraction, a small autograd engine, five model families,
//! training and evaluation.
//!
//! Numeric code is generic over [`num::Scalar`] (`f32` or `f64`); the
//! aliases below fix the common choices.

pub mod curation;
pub mod features;
pub mod geodata;
pub mod metrics;
pub mod models;
pub mod num;
pub mod synth;
pub mod tensorkit;
pub mod training;

pub type Tensor32 = tensorkit::Tensor<f32>;
pub type Tensor64 = tensorkit::Tensor<f64>;
pub type Graph32 = tensorkit::Graph<f32>;
pub type Graph64 = tensorkit::Graph<f64>;
pub type Network32 = models::Network<f32>;
pub type Network64 = models::Network<f64>;
pub type Trainer32 = training::Trainer<f32>;
pub type Trainer64 = training::Trainer<f64>;
