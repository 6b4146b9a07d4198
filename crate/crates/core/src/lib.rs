//! Dual-branch image score regression: a Vision Transformer and a
//! selective-scan state-space encoder fused by a learnable linear layer,
//! built on a small reverse-mode autodiff engine.

pub mod autograd;
pub mod bench;
pub mod checkpoint;
pub mod config;
pub mod data;
pub mod embedding;
pub mod error;
pub mod eval;
pub mod mamba;
pub mod model;
pub mod params;
pub mod seed;
pub mod tensor;
pub mod train;
pub mod vit;

pub use autograd::{Gradients, Tape, Var};
pub use config::RunConfig;
pub use error::{Error, Result};
pub use model::{Prediction, Variant, VmBeautyNet};
pub use params::ParamStore;
pub use tensor::{Scalar, Tensor};
