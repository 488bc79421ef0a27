//! Stereo object matching on a small reverse-mode engine.

pub mod camera;
pub mod checks;
pub mod cli;
pub mod config;
pub mod detection;
pub mod diff;
pub mod disparity;
pub mod error;
pub mod io;
pub mod model;
pub mod nn;
pub mod occupancy;
pub mod roi;
pub mod scalar;
pub mod synth;
pub mod train;
pub mod volume;

pub use error::{Error, Result};
pub use scalar::Scalar;

pub type Tensor32 = diff::Tensor<f32>;
pub type Tensor64 = diff::Tensor<f64>;
pub type Graph32 = diff::Graph<f32>;
pub type Graph64 = diff::Graph<f64>;
pub type ParamStore32 = diff::ParamStore<f32>;
pub type ParamStore64 = diff::ParamStore<f64>;
