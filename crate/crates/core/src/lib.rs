//! Hierarchical-attention adversarial network for cross-domain sentiment
//! classification, built on a small reverse-mode autodiff engine.

// `!(x > 0.0)` style guards are deliberate: they also reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod analysis;
pub mod autodiff;
pub mod cli;
pub mod corpus;
pub mod discriminator;
pub mod error;
pub mod generator;
pub mod losses;
pub mod model;
pub mod tensor;
pub mod trainer;

pub use error::{Error, Result};
pub use model::{evaluate, Hagan, ModelSpec};
pub use tensor::Tensor;
pub use trainer::{TrainConfig, Trainer};
