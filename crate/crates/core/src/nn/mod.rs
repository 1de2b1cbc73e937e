//! Dense `tanh` networks, exact reverse-mode gradients and Adam.

mod activation;
mod adam;
mod kernels;
mod mlp;

pub use activation::{tanh, tanh_in_place};
pub use adam::{AdamConfig, AdamState};
pub use mlp::{Batch, Dense, ForwardCache, Gradients, LayerGrad, Mlp};

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum NnError {
    #[error("shape error: {0}")]
    Shape(String),
    #[error("invalid input: {0}")]
    Input(String),
    #[error("invalid network configuration: {0}")]
    Config(String),
    #[error("non-finite parameter in layer {layer}")]
    NonFinite { layer: usize },
    #[error("non-finite gradient in layer {layer}")]
    NonFiniteGradient { layer: usize },
}
