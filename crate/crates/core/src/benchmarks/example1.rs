//! Linear equation driven by Brownian motion with an exponential Volterra
//! kernel and an exponential ambiguity weight on `z`.
//!
//! `f(t, s, x_t, x_s, y, z) = e^{-(s-t)} y + e^s z`, `g(t, x_t, x_T) = sin(pi t) x_T`,
//! forward state `X = B`.

use std::f64::consts::PI;
use std::sync::Arc;

use super::quadrature::integrate;
use super::BenchmarkError;
use crate::metrics::SolutionValues;
use crate::paths::{PathBatch, TimeGrid};
use crate::problem::{AffineDynamics, BsvieProblem, Forward, GenArgs, Generator, Terminal};

/// Absolute tolerance for the outer integral of the `Z` reference.
pub const Z_QUADRATURE_TOL: f64 = 1e-10;

/// `int_t^T sin(pi r) dr`.
fn sine_tail(t: f64, horizon: f64) -> f64 {
    ((PI * t).cos() - (PI * horizon).cos()) / PI
}

/// `Y(t) = (sin(pi t) + int_t^T sin(pi r) dr) (B_t + e^T - e^t)`.
pub fn analytic_y_ex1(t: f64, b_t: f64, horizon: f64) -> f64 {
    ((PI * t).sin() + sine_tail(t, horizon)) * (b_t + (horizon.exp() - t.exp()))
}

/// `Z(t, s) = sin(pi t) + int_s^T e^{-(r-t)} (sin(pi r) + int_r^T sin(pi u) du) dr`,
/// outer integral by adaptive quadrature.
pub fn analytic_z_ex1(t: f64, s: f64, horizon: f64) -> Result<f64, BenchmarkError> {
    analytic_z_ex1_with_tol(t, s, horizon, Z_QUADRATURE_TOL)
}

pub fn analytic_z_ex1_with_tol(t: f64, s: f64, horizon: f64, tol: f64) -> Result<f64, BenchmarkError> {
    if t > s || s > horizon {
        return Err(BenchmarkError::Domain { t, s });
    }
    let outer = integrate(|r| (-(r - t)).exp() * ((PI * r).sin() + sine_tail(r, horizon)), s, horizon, tol);
    Ok((PI * t).sin() + outer)
}

/// `Z` reference on every grid pair `n <= k < N`, computed once.
#[derive(Debug, Clone, PartialEq)]
pub struct Example1ZTable {
    n_steps: usize,
    values: Vec<f64>,
}

impl Example1ZTable {
    pub fn new(grid: &TimeGrid) -> Self {
        let n = grid.n_steps();
        let mut values = vec![f64::NAN; n * n];
        for i in 0..n {
            for k in i..n {
                values[i * n + k] = analytic_z_ex1(grid.time(i), grid.time(k), grid.horizon()).expect("ordered grid pair");
            }
        }
        Self { n_steps: n, values }
    }

    /// `Z(t_n, t_k)` for `n <= k`.
    pub fn get(&self, n: usize, k: usize) -> f64 {
        debug_assert!(n <= k && k < self.n_steps);
        self.values[n * self.n_steps + k]
    }
}

/// Reference `Y` and `Z` on the paths' own Brownian realizations.
pub fn reference_values_ex1(paths: &PathBatch) -> SolutionValues {
    let grid = paths.grid();
    let big_n = grid.n_steps();
    let table = Example1ZTable::new(grid);
    let mut out = SolutionValues::zeros(paths.n_paths(), big_n, 1, 1);
    for j in 0..paths.n_paths() {
        let b = paths.increments().brownian_path(j);
        for n in 0..big_n {
            out.y_at_mut(j, n)[0] = analytic_y_ex1(grid.time(n), b[n], grid.horizon());
            for k in n..big_n {
                out.z_at_mut(j, n, k)[0] = table.get(n, k);
            }
        }
    }
    out
}

#[derive(Debug, Clone, Copy, Default)]
pub struct Example1Generator;

impl Generator for Example1Generator {
    fn eval(&self, a: &GenArgs, out: &mut [f64]) {
        let kernel = if a.s >= a.t { (-(a.s - a.t)).exp() } else { 0.0 };
        out[0] = kernel * a.y[0] + a.s.exp() * a.z[0];
    }

    fn vjp(&self, a: &GenArgs, cot: &[f64], dy: &mut [f64], dz: &mut [f64]) {
        let kernel = if a.s >= a.t { (-(a.s - a.t)).exp() } else { 0.0 };
        dy[0] += kernel * cot[0];
        dz[0] += a.s.exp() * cot[0];
    }
}

#[derive(Debug, Clone, Copy, Default)]
pub struct Example1Terminal;

impl Terminal for Example1Terminal {
    fn eval(&self, t: f64, _x_t: &[f64], x_end: &[f64], out: &mut [f64]) {
        out[0] = (PI * t).sin() * x_end[0];
    }
}

pub fn build_example1(horizon: f64) -> BsvieProblem {
    let brownian = AffineDynamics { drift_const: 0.0, drift_linear: 0.0, vol_const: 1.0, vol_linear: 0.0 };
    BsvieProblem {
        name: "example1".into(),
        horizon,
        state_dim: 1,
        value_dim: 1,
        noise_dim: 1,
        forward: Forward::Euler { x0: vec![0.0], dynamics: Arc::new(brownian) },
        generator: Arc::new(Example1Generator),
        terminal: Arc::new(Example1Terminal),
    }
}
