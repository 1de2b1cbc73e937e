//! Reflected solver: the plain backward sweep with values floored at a lower
//! barrier `L(t, x)` through `max(Y, L)`.
//!
//! The reflection field has no network of its own. Its discrete trace is the
//! per-path push `kappa = max(Y, L) - Y`, kept in [`ProjectionRecord`].

use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::paths::rng::{derive_seed, tags};
use crate::paths::PathBatch;
use crate::problem::{AffineDynamics, BsvieProblem, Forward, LinearGenerator, Terminal};
use crate::solver::{evaluate_raw, train_with, Barrier, ConstantBarrier, ProjectionMode, Reflection, SolverConfig, SolverError, TrainedSolution};

/// `max(y, floor)`.
#[inline]
pub fn project(y: f64, floor: f64) -> f64 {
    y.max(floor)
}

/// Componentwise [`project`].
pub fn project_in_place(ys: &mut [f64], floor: f64) {
    for y in ys {
        *y = project(*y, floor);
    }
}

/// A BSVIE plus the barrier its solution must stay above.
#[derive(Clone)]
pub struct ReflectedProblem {
    pub base: BsvieProblem,
    pub barrier: Arc<dyn Barrier>,
}

impl std::fmt::Debug for ReflectedProblem {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("ReflectedProblem").field("base", &self.base).finish_non_exhaustive()
    }
}

/// Raw and projected `Y` per path and grid index, layout `[(j * N + n) * dy + c]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProjectionRecord {
    pub n_paths: usize,
    pub n_steps: usize,
    pub value_dim: usize,
    pub raw: Vec<f64>,
    pub projected: Vec<f64>,
    /// `projected - raw`, zero wherever the barrier is slack.
    pub kappa: Vec<f64>,
    /// Barrier value per path and grid index, layout `[j * N + n]`.
    pub barrier: Vec<f64>,
}

impl ProjectionRecord {
    /// Projects raw network outputs on `paths` against `barrier`.
    pub fn build(solution: &TrainedSolution, barrier: &dyn Barrier, paths: &PathBatch) -> Result<Self, SolverError> {
        let values = evaluate_raw(solution, paths)?;
        let (m_paths, big_n, dy) = (values.n_paths, values.n_steps, values.y_dim);
        let grid = solution.grid;
        let mut projected = values.y.clone();
        let mut floors = vec![0.0; m_paths * big_n];
        for j in 0..m_paths {
            for n in 0..big_n {
                let l = barrier.value(grid.time(n), paths.state(j, n));
                floors[j * big_n + n] = l;
                let o = (j * big_n + n) * dy;
                project_in_place(&mut projected[o..o + dy], l);
            }
        }
        let kappa = projected.iter().zip(&values.y).map(|(p, r)| p - r).collect();
        Ok(Self { n_paths: m_paths, n_steps: big_n, value_dim: dy, raw: values.y, projected, kappa, barrier: floors })
    }

    pub fn projected_at(&self, j: usize, n: usize) -> &[f64] {
        let o = (j * self.n_steps + n) * self.value_dim;
        &self.projected[o..o + self.value_dim]
    }

    /// Fraction of paths on which the barrier binds at step `n`.
    pub fn binding_fraction(&self, n: usize) -> f64 {
        let dy = self.value_dim;
        let hits = (0..self.n_paths)
            .filter(|&j| {
                let o = (j * self.n_steps + n) * dy;
                self.kappa[o..o + dy].iter().any(|&k| k > 0.0)
            })
            .count();
        hits as f64 / self.n_paths as f64
    }

    /// `min_{n, j, c} (projected - L)`; non-negative by construction.
    pub fn floor_margin(&self) -> f64 {
        let dy = self.value_dim;
        self.projected
            .iter()
            .enumerate()
            .map(|(i, y)| y - self.barrier[i / dy])
            .fold(f64::INFINITY, f64::min)
    }

    /// `max |kappa (projected - L)|`; zero when pushes happen only at the barrier.
    pub fn flatness_defect(&self) -> f64 {
        let dy = self.value_dim;
        self.kappa
            .iter()
            .zip(&self.projected)
            .enumerate()
            .map(|(i, (k, y))| (k * (y - self.barrier[i / dy])).abs())
            .fold(0.0, f64::max)
    }
}

/// Trained networks plus the projection record on the evaluation paths.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReflectedSolution {
    #[serde(flatten)]
    pub solution: TrainedSolution,
    pub projection_mode: ProjectionMode,
    pub record: ProjectionRecord,
}

/// Trains with reflection, then projects on `config.m_eval` evaluation paths.
pub fn train_reflected(problem: &ReflectedProblem, config: &SolverConfig, mode: ProjectionMode) -> Result<ReflectedSolution, SolverError> {
    let reflection = Reflection { barrier: problem.barrier.clone(), mode };
    let solution = train_with(&problem.base, config, Some(&reflection))?;
    let eval = problem.base.simulate(&solution.grid, config.m_eval, derive_seed(config.seed, &[tags::EVAL_PATHS]))?;
    let record = ProjectionRecord::build(&solution, problem.barrier.as_ref(), &eval)?;
    Ok(ReflectedSolution { solution, projection_mode: mode, record })
}

/// Call payoff discounted hyperbolically in the remaining time:
/// `g(t, x_t, x_T) = max(x_T - K, 0) / (1 + T - t)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RegretTerminal {
    pub strike: f64,
    pub horizon: f64,
}

impl Terminal for RegretTerminal {
    fn eval(&self, t: f64, _x_t: &[f64], x_end: &[f64], out: &mut [f64]) {
        out[0] = (x_end[0] - self.strike).max(0.0) / (1.0 + (self.horizon - t));
    }
}

/// Parameters of the regret-floor example.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RegretSpec {
    pub mu: f64,
    pub sigma: f64,
    pub x0: f64,
    pub strike: f64,
    pub floor: f64,
    pub horizon: f64,
}

impl Default for RegretSpec {
    fn default() -> Self {
        Self { mu: 0.07, sigma: 0.2, x0: 1.0, strike: 1.0, floor: 0.1, horizon: 1.0 }
    }
}

/// Euler GBM forward, zero generator, call payoff, constant floor.
pub fn build_regret_example(spec: &RegretSpec) -> ReflectedProblem {
    let dynamics = AffineDynamics { drift_const: 0.0, drift_linear: spec.mu, vol_const: 0.0, vol_linear: spec.sigma };
    let base = BsvieProblem {
        name: "regret-floor".into(),
        horizon: spec.horizon,
        state_dim: 1,
        value_dim: 1,
        noise_dim: 1,
        forward: Forward::Euler { x0: vec![spec.x0], dynamics: Arc::new(dynamics) },
        generator: Arc::new(LinearGenerator::default()),
        terminal: Arc::new(RegretTerminal { strike: spec.strike, horizon: spec.horizon }),
    };
    ReflectedProblem { base, barrier: Arc::new(ConstantBarrier(spec.floor)) }
}
