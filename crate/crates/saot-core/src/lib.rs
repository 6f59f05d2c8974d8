//! Core library for a spectral-attention operator model: a small f64
//! autodiff tape, FFT/Haar transforms, the attention mechanisms built on
//! them, the model and trainer, and a synthetic Darcy-flow data pipeline.

pub mod attention;
pub mod checkpoint;
pub mod container;
pub mod darcy;
pub mod dataset;
pub mod error;
pub mod gradcheck;
mod linalg;
pub mod model;
pub mod ops;
pub mod spectral;
pub mod spectrum;
pub mod tape;
pub mod tensor;
pub mod train;

pub use error::{Error, Result};
pub use tensor::{ParameterStore, Tensor};
