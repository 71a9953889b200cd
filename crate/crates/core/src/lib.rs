//! Volumetric residual classifiers built on a small reverse-mode autograd
//! engine: full 3D, factored (2+1)D and mixed-convolution networks, the
//! training and cross-validation loop, evaluation metrics, and the MRI
//! volume pipeline feeding them.

pub mod data;
pub mod error;
pub mod metrics;
pub mod models;
pub mod nn;
pub mod seed;
pub mod tensor;
pub mod train;

pub use error::{Error, Result};
