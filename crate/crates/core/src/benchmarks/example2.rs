//! Recursive valuation on a geometric Brownian motion: discounted terminal
//! payoff plus a running flow proportional to the state.
//!
//! `f(t, s, x_t, x_s, y, z) = lambda0 x_s`, `g(t, x_t, x_T) = e^{-lambda t} x_T`,
//! `X_t = x0 exp((alpha - sigma^2 / 2) t + sigma B_t)` sampled exactly.

use std::sync::Arc;

use serde::{Deserialize, Serialize};

use super::BenchmarkError;
use crate::metrics::SolutionValues;
use crate::paths::PathBatch;
use crate::problem::{BsvieProblem, Forward, GenArgs, Generator, Terminal};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Example2Spec {
    /// Drift of the forward state, also the growth rate in the closed form.
    pub alpha: f64,
    pub sigma: f64,
    /// Discount rate of the terminal payoff.
    pub lambda: f64,
    /// Weight of the running flow.
    pub lambda0: f64,
    pub horizon: f64,
    pub x0: f64,
}

impl Default for Example2Spec {
    fn default() -> Self {
        Self { alpha: 0.1, sigma: 0.2, lambda: 0.5, lambda0: 0.5, horizon: 1.0, x0: 1.0 }
    }
}

impl Example2Spec {
    pub fn validate(&self) -> Result<(), BenchmarkError> {
        let finite = [self.alpha, self.sigma, self.lambda, self.lambda0, self.horizon, self.x0].iter().all(|v| v.is_finite());
        if !finite || self.sigma < 0.0 || self.lambda < 0.0 || self.lambda0 < 0.0 || self.horizon <= 0.0 || self.x0 <= 0.0 {
            return Err(BenchmarkError::Parameter(format!("{self:?}")));
        }
        Ok(())
    }

    /// `X_t` given `B_t`.
    pub fn state(&self, t: f64, b_t: f64) -> f64 {
        self.x0 * ((self.alpha - 0.5 * self.sigma * self.sigma) * t + self.sigma * b_t).exp()
    }

    /// `(e^{alpha tau} - 1) / alpha`, equal to `tau` in the driftless limit.
    fn growth_integral(&self, tau: f64) -> f64 {
        if self.alpha.abs() * tau.max(1.0) < 1e-12 {
            tau * (1.0 + 0.5 * self.alpha * tau)
        } else {
            (self.alpha * tau).exp_m1() / self.alpha
        }
    }

    /// `e^{-lambda t} e^{alpha (T - u)} + lambda0 (e^{alpha (T - u)} - 1) / alpha`.
    fn bracket(&self, t: f64, u: f64) -> f64 {
        let tau = self.horizon - u;
        (-self.lambda * t).exp() * (self.alpha * tau).exp() + self.lambda0 * self.growth_integral(tau)
    }

    /// `Y(t) = X_t (e^{-lambda t} e^{alpha (T-t)} + lambda0 (e^{alpha (T-t)} - 1) / alpha)`.
    pub fn analytic_y(&self, t: f64, b_t: f64) -> f64 {
        self.state(t, b_t) * self.bracket(t, t)
    }

    /// `Z(t, s) = sigma X_s (e^{-lambda t} e^{alpha (T-s)} + lambda0 (e^{alpha (T-s)} - 1) / alpha)`
    /// given `B_s`.
    pub fn analytic_z(&self, t: f64, s: f64, b_s: f64) -> Result<f64, BenchmarkError> {
        if t > s || s > self.horizon {
            return Err(BenchmarkError::Domain { t, s });
        }
        Ok(self.sigma * self.state(s, b_s) * self.bracket(t, s))
    }
}

pub fn analytic_y_ex2(t: f64, b_t: f64, spec: &Example2Spec) -> f64 {
    spec.analytic_y(t, b_t)
}

pub fn analytic_z_ex2(t: f64, s: f64, b_s: f64, spec: &Example2Spec) -> Result<f64, BenchmarkError> {
    spec.analytic_z(t, s, b_s)
}

/// Reference `Y` and `Z` on the paths' own Brownian realizations.
pub fn reference_values_ex2(spec: &Example2Spec, paths: &PathBatch) -> SolutionValues {
    let grid = paths.grid();
    let big_n = grid.n_steps();
    let mut out = SolutionValues::zeros(paths.n_paths(), big_n, 1, 1);
    for j in 0..paths.n_paths() {
        let b = paths.increments().brownian_path(j);
        for n in 0..big_n {
            let t = grid.time(n);
            out.y_at_mut(j, n)[0] = spec.analytic_y(t, b[n]);
            for k in n..big_n {
                out.z_at_mut(j, n, k)[0] = spec.analytic_z(t, grid.time(k), b[k]).expect("ordered grid pair");
            }
        }
    }
    out
}

#[derive(Debug, Clone, Copy)]
pub struct Example2Generator {
    pub lambda0: f64,
}

impl Generator for Example2Generator {
    fn eval(&self, a: &GenArgs, out: &mut [f64]) {
        out[0] = self.lambda0 * a.x_s[0];
    }

    fn vjp(&self, _a: &GenArgs, _cot: &[f64], _dy: &mut [f64], _dz: &mut [f64]) {}

    fn uses_y(&self) -> bool {
        false
    }
}

#[derive(Debug, Clone, Copy)]
pub struct Example2Terminal {
    pub lambda: f64,
}

impl Terminal for Example2Terminal {
    fn eval(&self, t: f64, _x_t: &[f64], x_end: &[f64], out: &mut [f64]) {
        out[0] = (-self.lambda * t).exp() * x_end[0];
    }
}

pub fn build_example2(spec: &Example2Spec) -> BsvieProblem {
    BsvieProblem {
        name: "example2".into(),
        horizon: spec.horizon,
        state_dim: 1,
        value_dim: 1,
        noise_dim: 1,
        forward: Forward::ExactGbm { mu: spec.alpha, sigma: spec.sigma, x0: spec.x0 },
        generator: Arc::new(Example2Generator { lambda0: spec.lambda0 }),
        terminal: Arc::new(Example2Terminal { lambda: spec.lambda }),
    }
}
