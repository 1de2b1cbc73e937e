//! Equation data: forward dynamics, generator and terminal condition.

use std::fmt;
use std::sync::Arc;

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::paths::rng::{derive_seed, path_rng, tags};
use crate::paths::{brownian_increments, simulate_euler, simulate_gbm_exact, PathBatch, SimError, TimeGrid};

/// Arguments of `f(t, s, x_t, x_s, y, z)`. `z` is `m x d` row-major.
#[derive(Debug, Clone, Copy)]
pub struct GenArgs<'a> {
    pub t: f64,
    pub s: f64,
    pub x_t: &'a [f64],
    pub x_s: &'a [f64],
    pub y: &'a [f64],
    pub z: &'a [f64],
}

/// Generator `f` of the backward equation.
pub trait Generator: Send + Sync {
    fn eval(&self, a: &GenArgs, out: &mut [f64]);

    /// Adds `(df/dy)^T cot` to `dy` and `(df/dz)^T cot` to `dz`.
    ///
    /// The default uses central differences; closed-form generators should
    /// override it.
    fn vjp(&self, a: &GenArgs, cot: &[f64], dy: &mut [f64], dz: &mut [f64]) {
        let m = cot.len();
        let mut y = a.y.to_vec();
        let mut z = a.z.to_vec();
        let mut hi = vec![0.0; m];
        let mut lo = vec![0.0; m];
        for i in 0..y.len() {
            let h = 1e-6 * (1.0 + y[i].abs());
            let y0 = y[i];
            y[i] = y0 + h;
            self.eval(&GenArgs { y: &y, ..*a }, &mut hi);
            y[i] = y0 - h;
            self.eval(&GenArgs { y: &y, ..*a }, &mut lo);
            y[i] = y0;
            dy[i] += (0..m).map(|r| cot[r] * (hi[r] - lo[r])).sum::<f64>() / (2.0 * h);
        }
        for i in 0..z.len() {
            let h = 1e-6 * (1.0 + z[i].abs());
            let z0 = z[i];
            z[i] = z0 + h;
            self.eval(&GenArgs { z: &z, ..*a }, &mut hi);
            z[i] = z0 - h;
            self.eval(&GenArgs { z: &z, ..*a }, &mut lo);
            z[i] = z0;
            dz[i] += (0..m).map(|r| cot[r] * (hi[r] - lo[r])).sum::<f64>() / (2.0 * h);
        }
    }

    /// Whether `f` reads `y`. Lets the solver skip evaluating frozen
    /// networks whose values would be discarded.
    fn uses_y(&self) -> bool {
        true
    }
}

/// Terminal condition `g(t, x_t, x_T)`.
pub trait Terminal: Send + Sync {
    fn eval(&self, t: f64, x_t: &[f64], x_end: &[f64], out: &mut [f64]);
}

/// Drift `b(t, x)` and diffusion `sigma(t, x)` (`n x d` row-major).
pub trait Dynamics: Send + Sync {
    fn drift(&self, t: f64, x: &[f64], out: &mut [f64]);
    fn diffusion(&self, t: f64, x: &[f64], out: &mut [f64]);
}

/// How forward paths are produced.
#[derive(Clone)]
pub enum Forward {
    /// Euler–Maruyama on arbitrary dynamics.
    Euler { x0: Vec<f64>, dynamics: Arc<dyn Dynamics> },
    /// Scalar geometric Brownian motion sampled exactly.
    ExactGbm { mu: f64, sigma: f64, x0: f64 },
}

impl fmt::Debug for Forward {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Forward::Euler { x0, .. } => f.debug_struct("Euler").field("x0", x0).finish_non_exhaustive(),
            Forward::ExactGbm { mu, sigma, x0 } => {
                f.debug_struct("ExactGbm").field("mu", mu).field("sigma", sigma).field("x0", x0).finish()
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum ProblemError {
    #[error("invalid problem: {0}")]
    Invalid(String),
    #[error("{what} is not finite at t={t}, s={s}")]
    NonFinite { what: &'static str, t: f64, s: f64 },
    #[error(transparent)]
    Sim(#[from] SimError),
}

/// One Type-I equation instance.
#[derive(Clone)]
pub struct BsvieProblem {
    pub name: String,
    pub horizon: f64,
    /// State dimension `n`.
    pub state_dim: usize,
    /// Value dimension `m`.
    pub value_dim: usize,
    /// Brownian dimension `d`.
    pub noise_dim: usize,
    pub forward: Forward,
    pub generator: Arc<dyn Generator>,
    pub terminal: Arc<dyn Terminal>,
}

impl fmt::Debug for BsvieProblem {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("BsvieProblem")
            .field("name", &self.name)
            .field("horizon", &self.horizon)
            .field("state_dim", &self.state_dim)
            .field("value_dim", &self.value_dim)
            .field("noise_dim", &self.noise_dim)
            .field("forward", &self.forward)
            .finish_non_exhaustive()
    }
}

/// Outcome of [`BsvieProblem::validate`].
#[derive(Debug, Clone, PartialEq)]
pub struct ProbeReport {
    /// Largest observed `|f(y1, z1) - f(y2, z2)| / |(y1, z1) - (y2, z2)|`.
    pub lipschitz_ratio: f64,
    pub warnings: Vec<String>,
}

impl BsvieProblem {
    pub fn z_dim(&self) -> usize {
        self.value_dim * self.noise_dim
    }

    pub fn initial_state(&self) -> Vec<f64> {
        match &self.forward {
            Forward::Euler { x0, .. } => x0.clone(),
            Forward::ExactGbm { x0, .. } => vec![*x0],
        }
    }

    /// Simulates `n_paths` forward paths with increments drawn under `key`.
    pub fn simulate(&self, grid: &TimeGrid, n_paths: usize, key: u64) -> Result<PathBatch, SimError> {
        let inc = brownian_increments(grid, n_paths, self.noise_dim, key)?;
        match &self.forward {
            Forward::Euler { x0, dynamics } => {
                let dy = dynamics.as_ref();
                simulate_euler(|t, x, o| dy.drift(t, x, o), |t, x, o| dy.diffusion(t, x, o), x0, grid, inc)
            }
            Forward::ExactGbm { mu, sigma, x0 } => simulate_gbm_exact(*mu, *sigma, *x0, grid, inc),
        }
    }

    /// Checks dimensions, spot-checks `f` and `g` for finiteness on sampled
    /// states and probes the Lipschitz ratio of `f` in `(y, z)`.
    ///
    /// A ratio above `lipschitz_bound` is reported as a warning only.
    pub fn validate(&self, lipschitz_bound: f64, seed: u64) -> Result<ProbeReport, ProblemError> {
        if !(self.horizon.is_finite() && self.horizon > 0.0) {
            return Err(ProblemError::Invalid(format!("horizon must be positive, got {}", self.horizon)));
        }
        if self.state_dim == 0 || self.value_dim == 0 || self.noise_dim == 0 {
            return Err(ProblemError::Invalid("dimensions must be positive".into()));
        }
        match &self.forward {
            Forward::Euler { x0, .. } if x0.len() != self.state_dim => {
                return Err(ProblemError::Invalid(format!(
                    "initial state has {} entries, state dimension is {}",
                    x0.len(),
                    self.state_dim
                )));
            }
            Forward::ExactGbm { .. } if self.state_dim != 1 || self.noise_dim != 1 => {
                return Err(ProblemError::Invalid("exact GBM forward is scalar".into()));
            }
            _ => {}
        }

        let grid = TimeGrid::new(self.horizon, 8)?;
        let n_paths = 16;
        let paths = self.simulate(&grid, n_paths, derive_seed(seed, &[tags::PROBE]))?;
        let mut rng = path_rng(derive_seed(seed, &[tags::PROBE, 1]), 0);
        let (m, zd) = (self.value_dim, self.z_dim());
        let mut out = vec![0.0; m];
        let mut out2 = vec![0.0; m];
        let mut ratio: f64 = 0.0;
        for j in 0..n_paths {
            let k = rng.gen_range(0..=grid.n_steps());
            let l = rng.gen_range(k..=grid.n_steps());
            let (t, s) = (grid.time(k), grid.time(l));
            let (x_t, x_s) = (paths.state(j, k), paths.state(j, l));
            self.terminal.eval(t, x_t, paths.state(j, grid.n_steps()), &mut out);
            if out.iter().any(|v| !v.is_finite()) {
                return Err(ProblemError::NonFinite { what: "terminal", t, s });
            }
            let draw = |rng: &mut rand_chacha::ChaCha8Rng, n: usize| -> Vec<f64> {
                (0..n).map(|_| rng.sample::<f64, _>(StandardNormal)).collect()
            };
            let (y1, z1) = (draw(&mut rng, m), draw(&mut rng, zd));
            let (y2, z2) = (draw(&mut rng, m), draw(&mut rng, zd));
            self.generator.eval(&GenArgs { t, s, x_t, x_s, y: &y1, z: &z1 }, &mut out);
            self.generator.eval(&GenArgs { t, s, x_t, x_s, y: &y2, z: &z2 }, &mut out2);
            if out.iter().chain(&out2).any(|v| !v.is_finite()) {
                return Err(ProblemError::NonFinite { what: "generator", t, s });
            }
            let num = out.iter().zip(&out2).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
            let den = y1.iter().zip(&y2).chain(z1.iter().zip(&z2)).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
            if den > 0.0 {
                ratio = ratio.max(num / den);
            }
        }
        let mut warnings = Vec::new();
        if ratio > lipschitz_bound {
            let msg = format!("generator Lipschitz ratio {ratio:.3e} exceeds the bound {lipschitz_bound:.3e}");
            log::warn!("{}: {msg}", self.name);
            warnings.push(msg);
        }
        Ok(ProbeReport { lipschitz_ratio: ratio, warnings })
    }
}

/// Scalar affine dynamics `b = a + b x`, `sigma = c + e x`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AffineDynamics {
    pub drift_const: f64,
    pub drift_linear: f64,
    pub vol_const: f64,
    pub vol_linear: f64,
}

impl Dynamics for AffineDynamics {
    fn drift(&self, _t: f64, x: &[f64], out: &mut [f64]) {
        out[0] = self.drift_const + self.drift_linear * x[0];
    }

    fn diffusion(&self, _t: f64, x: &[f64], out: &mut [f64]) {
        out[0] = self.vol_const + self.vol_linear * x[0];
    }
}

/// Scalar generator `f = c + a_t x_t + a_s x_s + a_y y + a_z z`.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct LinearGenerator {
    pub constant: f64,
    pub x_t: f64,
    pub x_s: f64,
    pub y: f64,
    pub z: f64,
}

impl Generator for LinearGenerator {
    fn eval(&self, a: &GenArgs, out: &mut [f64]) {
        out[0] = self.constant + self.x_t * a.x_t[0] + self.x_s * a.x_s[0] + self.y * a.y[0] + self.z * a.z[0];
    }

    fn vjp(&self, _a: &GenArgs, cot: &[f64], dy: &mut [f64], dz: &mut [f64]) {
        dy[0] += self.y * cot[0];
        dz[0] += self.z * cot[0];
    }

    fn uses_y(&self) -> bool {
        self.y != 0.0
    }
}

/// Scalar terminal `g = c + a_t x_t + a_T x_T`.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct LinearTerminal {
    pub constant: f64,
    pub x_t: f64,
    pub x_terminal: f64,
}

impl Terminal for LinearTerminal {
    fn eval(&self, _t: f64, x_t: &[f64], x_end: &[f64], out: &mut [f64]) {
        out[0] = self.constant + self.x_t * x_t[0] + self.x_terminal * x_end[0];
    }
}

/// Scalar problem assembled from the affine families above.
pub fn linear_problem(name: &str, horizon: f64, x0: f64, dynamics: AffineDynamics, generator: LinearGenerator, terminal: LinearTerminal) -> BsvieProblem {
    BsvieProblem {
        name: name.to_string(),
        horizon,
        state_dim: 1,
        value_dim: 1,
        noise_dim: 1,
        forward: Forward::Euler { x0: vec![x0], dynamics: Arc::new(dynamics) },
        generator: Arc::new(generator),
        terminal: Arc::new(terminal),
    }
}
