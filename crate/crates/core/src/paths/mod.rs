//! Forward state simulation on a uniform grid.

mod grid;
pub mod rng;
mod sim;

pub use grid::TimeGrid;
pub use sim::{brownian_increments, simulate_euler, simulate_gbm_exact, Increments, PathBatch, BLOW_UP_THRESHOLD};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum SimError {
    #[error("invalid size: {0}")]
    InvalidSize(String),
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error("state blew up on path {path} at step {step}")]
    BlowUp { path: usize, step: usize },
}
