//! Model stitching between Small ResNets: the network family, stitch
//! layers, training loops, sweeps and reporting.
//!
//! Everything numeric is generic over [`Scalar`] (`f32` or `f64`); the
//! `*32` aliases below are what the command-line tool uses.

pub mod checkpoint;
pub mod config;
pub mod data;
pub mod error;
pub mod experiments;
pub mod nn;
pub mod params;
pub mod report;
pub mod scalar;
pub mod stitching;
pub mod tensor;
pub mod training;
pub mod zoo;

pub use error::{Error, Result};
pub use scalar::Scalar;
pub use tensor::Tensor;

pub type Tensor32 = Tensor<f32>;
pub type ResNet32 = zoo::ResNet<f32>;
pub type ModelHandle32 = zoo::ModelHandle<f32>;
pub type Stitch32 = stitching::Stitch<f32>;
pub type StitchedNetwork32 = stitching::StitchedNetwork<f32>;
