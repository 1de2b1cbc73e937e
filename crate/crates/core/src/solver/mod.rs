//! Backward deep solver: one pair of `Y`/`Z` networks per time step, trained
//! from the horizon down to zero on the discrete residual.

mod engine;
mod residual;

use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::metrics::SolutionValues;
use crate::nn::{Mlp, NnError};
use crate::paths::{PathBatch, SimError, TimeGrid};
use crate::problem::{BsvieProblem, ProblemError};

pub use engine::{evaluate_raw, train_with};
#[cfg(test)]
pub(crate) use engine::Step;
pub use residual::{residual, step_loss};

/// Where training paths come from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PathMode {
    /// New paths every epoch; frozen future networks are re-evaluated on them.
    FreshPerEpoch,
    /// One batch for the whole run; future values are cached.
    Frozen,
}

/// Time fed to the `Z` network for the term paired with `dB_m`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ZTimeConvention {
    /// `Z(t_n, t_m)`, `m = n..N-1`, diagonal included.
    Left,
    /// `Z(t_n, t_{m+1})`, i.e. evaluations at `m = n+1..N`.
    Right,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SolverConfig {
    pub n_steps: usize,
    pub n_paths: usize,
    pub epochs: usize,
    pub learning_rate: f64,
    pub hidden_layers: usize,
    pub hidden_width: usize,
    pub seed: u64,
    pub path_mode: PathMode,
    /// Independent paths used for evaluation.
    pub m_eval: usize,
    /// Start the networks of step `n` from the trained ones of step `n + 1`.
    pub warm_start: bool,
    pub z_time: ZTimeConvention,
    /// Rows per work unit of the fused forward/backward pass.
    pub chunk_rows: usize,
    /// Soft bound for the generator's Lipschitz probe; exceeding it only warns.
    pub lipschitz_bound: f64,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self {
            n_steps: 50,
            n_paths: 1 << 13,
            epochs: 500,
            learning_rate: 1e-3,
            hidden_layers: 3,
            hidden_width: 11,
            seed: 42,
            path_mode: PathMode::FreshPerEpoch,
            m_eval: 1 << 13,
            warm_start: false,
            z_time: ZTimeConvention::Left,
            chunk_rows: 2048,
            lipschitz_bound: 100.0,
        }
    }
}

impl SolverConfig {
    pub fn validate(&self) -> Result<(), SolverError> {
        let positive = [
            ("n_steps", self.n_steps),
            ("n_paths", self.n_paths),
            ("hidden_layers", self.hidden_layers),
            ("hidden_width", self.hidden_width),
            ("m_eval", self.m_eval),
            ("chunk_rows", self.chunk_rows),
        ];
        for (name, v) in positive {
            if v == 0 {
                return Err(SolverError::Config(format!("{name} must be positive")));
            }
        }
        if !(self.learning_rate.is_finite() && self.learning_rate >= 0.0) {
            return Err(SolverError::Config(format!("learning rate must be non-negative, got {}", self.learning_rate)));
        }
        Ok(())
    }

    fn dims(&self, input: usize, output: usize) -> Vec<usize> {
        let mut d = vec![input];
        d.extend(std::iter::repeat(self.hidden_width).take(self.hidden_layers));
        d.push(output);
        d
    }

    /// Layer dims of the `Y` network: input `(t_n, x)`.
    pub fn y_dims(&self, state_dim: usize, value_dim: usize) -> Vec<usize> {
        self.dims(1 + state_dim, value_dim)
    }

    /// Layer dims of the `Z` network: input `(t_n, t_m, x_n, x_m)`.
    pub fn z_dims(&self, state_dim: usize, z_dim: usize) -> Vec<usize> {
        self.dims(2 + 2 * state_dim, z_dim)
    }
}

/// Lower barrier `L(t, x)` for reflected equations.
pub trait Barrier: Send + Sync {
    fn value(&self, t: f64, x: &[f64]) -> f64;
}

/// Time-and-state independent barrier.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ConstantBarrier(pub f64);

impl Barrier for ConstantBarrier {
    fn value(&self, _t: f64, _x: &[f64]) -> f64 {
        self.0
    }
}

/// When the projection `max(Y, L)` is applied while training a step.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ProjectionMode {
    /// Every epoch: the current step's own value inside `f` is projected.
    PerEpoch,
    /// After the epoch loop only: `f` sees the raw current value.
    OncePerStep,
}

/// Barrier plus projection schedule.
#[derive(Clone)]
pub struct Reflection {
    pub barrier: Arc<dyn Barrier>,
    pub mode: ProjectionMode,
}

impl std::fmt::Debug for Reflection {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Reflection").field("mode", &self.mode).finish_non_exhaustive()
    }
}

/// Trained per-step networks; `y_nets[n]` and `z_nets[n]` for `n = 0..N-1`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainedSolution {
    pub grid: TimeGrid,
    pub config: SolverConfig,
    pub state_dim: usize,
    pub value_dim: usize,
    pub noise_dim: usize,
    pub y_nets: Vec<Mlp>,
    pub z_nets: Vec<Mlp>,
    /// Per-epoch training loss, indexed by time step.
    pub losses: Vec<Vec<f64>>,
}

impl TrainedSolution {
    pub fn n_steps(&self) -> usize {
        self.grid.n_steps()
    }
}

#[derive(Debug, Clone, thiserror::Error)]
pub enum SolverError {
    #[error("invalid solver configuration: {0}")]
    Config(String),
    #[error("contract violation: {0}")]
    Contract(String),
    #[error(transparent)]
    Problem(#[from] ProblemError),
    #[error(transparent)]
    Sim(#[from] SimError),
    #[error(transparent)]
    Nn(#[from] NnError),
    /// Training produced a non-finite loss or gradient. `partial` holds every
    /// step trained so far plus the last finite parameters of `step`.
    #[error("training diverged at step {step}, epoch {epoch}")]
    Divergence { step: usize, epoch: usize, partial: Box<TrainedSolution> },
}

/// Trains the plain solver.
pub fn train(problem: &BsvieProblem, config: &SolverConfig) -> Result<TrainedSolution, SolverError> {
    train_with(problem, config, None)
}

/// Network outputs on every grid index and every pair `k >= n`.
pub fn evaluate(solution: &TrainedSolution, paths: &PathBatch) -> Result<SolutionValues, SolverError> {
    evaluate_raw(solution, paths)
}
