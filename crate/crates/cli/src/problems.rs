use bsvie::benchmarks::{analytic_y_ex1, analytic_z_ex1, build_example1, reference_values_ex1, reference_values_ex2, build_example2, Example2Spec};
use bsvie::metrics::SolutionValues;
use bsvie::oracle::{integrated_errors, IntegratedErrors};
use bsvie::paths::PathBatch;
use bsvie::problem::{linear_problem, AffineDynamics, BsvieProblem, LinearGenerator, LinearTerminal};
use bsvie::reflected::{build_regret_example, ReflectedProblem, RegretSpec};
use serde::{Deserialize, Serialize};

use crate::config::{ProblemId, RunConfig};
use crate::error::CliError;

/// Scalar linear equation: affine forward, linear generator, linear terminal.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LinearSpec {
    pub horizon: f64,
    pub x0: f64,
    pub dynamics: AffineDynamics,
    pub generator: LinearGenerator,
    pub terminal: LinearTerminal,
}

impl Default for LinearSpec {
    fn default() -> Self {
        Self {
            horizon: 1.0,
            x0: 0.0,
            dynamics: AffineDynamics { drift_const: 0.0, drift_linear: 0.0, vol_const: 1.0, vol_linear: 0.0 },
            generator: LinearGenerator::default(),
            terminal: LinearTerminal::default(),
        }
    }
}

impl LinearSpec {
    pub fn validate(&self) -> Result<(), CliError> {
        let d = &self.dynamics;
        let f = &self.generator;
        let g = &self.terminal;
        let all = [
            self.horizon, self.x0, d.drift_const, d.drift_linear, d.vol_const, d.vol_linear, f.constant, f.x_t, f.x_s, f.y, f.z, g.constant, g.x_t,
            g.x_terminal,
        ];
        if all.iter().any(|v| !v.is_finite()) || self.horizon <= 0.0 {
            return Err(CliError::Config(format!("invalid linear problem {self:?}")));
        }
        Ok(())
    }

    pub fn build(&self) -> BsvieProblem {
        linear_problem("user-defined", self.horizon, self.x0, self.dynamics, self.generator, self.terminal)
    }

    /// Closed form exists when the state is an arithmetic Brownian motion and
    /// the generator ignores `(y, z)`.
    pub fn has_closed_form(&self) -> bool {
        self.dynamics.drift_linear == 0.0 && self.dynamics.vol_linear == 0.0 && self.generator.y == 0.0 && self.generator.z == 0.0
    }

    /// `Y(t)` given `X_t = x`, with `X_s = x + mu (s - t) + sigma (B_s - B_t)`.
    pub fn exact_y(&self, t: f64, x: f64) -> f64 {
        let (mu, tau) = (self.dynamics.drift_const, self.horizon - t);
        let (f, g) = (&self.generator, &self.terminal);
        g.constant + g.x_t * x + g.x_terminal * (x + mu * tau) + f.constant * tau + f.x_t * x * tau + f.x_s * (x * tau + 0.5 * mu * tau * tau)
    }

    /// `Z(t, s)` for `s >= t`; deterministic.
    pub fn exact_z(&self, _t: f64, s: f64) -> f64 {
        self.dynamics.vol_const * (self.terminal.x_terminal + self.generator.x_s * (self.horizon - s))
    }

    pub fn reference_values(&self, paths: &PathBatch) -> SolutionValues {
        let grid = paths.grid();
        let big_n = grid.n_steps();
        let mut out = SolutionValues::zeros(paths.n_paths(), big_n, 1, 1);
        for j in 0..paths.n_paths() {
            for n in 0..big_n {
                let t = grid.time(n);
                out.y_at_mut(j, n)[0] = self.exact_y(t, paths.state(j, n)[0]);
                for k in n..big_n {
                    out.z_at_mut(j, n, k)[0] = self.exact_z(t, grid.time(k));
                }
            }
        }
        out
    }
}

/// Known solution used for error metrics.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Reference {
    Example1 { horizon: f64 },
    Example2(Example2Spec),
    Linear(LinearSpec),
}

impl Reference {
    pub fn values(&self, paths: &PathBatch) -> SolutionValues {
        match self {
            Self::Example1 { .. } => reference_values_ex1(paths),
            Self::Example2(spec) => reference_values_ex2(spec, paths),
            Self::Linear(spec) => spec.reference_values(paths),
        }
    }

    /// Oracle error: cell-integrated for Example 1, grid-node rectangle rule
    /// `sum_k dt |dY_k|^2` and `sum_{k<=l} dt^2 |dZ_kl|^2` otherwise.
    pub fn oracle_errors(&self, values: &SolutionValues, paths: &PathBatch) -> Result<IntegratedErrors, CliError> {
        if let Self::Example1 { horizon } = *self {
            let z = |t: f64, s: f64| analytic_z_ex1(t, s, horizon).unwrap_or(f64::NAN);
            return Ok(integrated_errors(values, paths, |t, x| analytic_y_ex1(t, x, horizon), z)?);
        }
        let reference = self.values(paths);
        let report = bsvie::metrics::l2_errors(&reference, values).map_err(|e| CliError::Numerical(e.to_string()))?;
        let dt = paths.grid().dt();
        Ok(IntegratedErrors { err_y: report.e_y * dt, err_z: report.e_z * dt * dt })
    }
}

/// A problem ready to train.
#[derive(Debug, Clone)]
pub enum Built {
    Plain(BsvieProblem),
    Reflected(ReflectedProblem),
}

impl Built {
    pub fn base(&self) -> &BsvieProblem {
        match self {
            Self::Plain(p) => p,
            Self::Reflected(r) => &r.base,
        }
    }
}

pub fn build(cfg: &RunConfig) -> Result<(Built, Option<Reference>), CliError> {
    Ok(match cfg.problem {
        ProblemId::Example1 => (Built::Plain(build_example1(1.0)), Some(Reference::Example1 { horizon: 1.0 })),
        ProblemId::Example2 => {
            let spec = Example2Spec::default();
            (Built::Plain(build_example2(&spec)), Some(Reference::Example2(spec)))
        }
        ProblemId::RegretFloor => (Built::Reflected(build_regret_example(&RegretSpec { floor: cfg.floor, ..RegretSpec::default() })), None),
        ProblemId::UserDefined => {
            let spec = cfg.linear.ok_or_else(|| CliError::Config("problem user-defined needs a `linear` block".into()))?;
            spec.validate()?;
            let reference = spec.has_closed_form().then_some(Reference::Linear(spec));
            (Built::Plain(spec.build()), reference)
        }
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use bsvie::paths::rng::path_rng;
    use rand_distr::{Distribution, StandardNormal};

    fn spec() -> LinearSpec {
        LinearSpec {
            horizon: 1.5,
            x0: 0.3,
            dynamics: AffineDynamics { drift_const: 0.4, drift_linear: 0.0, vol_const: 0.7, vol_linear: 0.0 },
            generator: LinearGenerator { constant: 0.2, x_t: -0.5, x_s: 0.9, y: 0.0, z: 0.0 },
            terminal: LinearTerminal { constant: 1.0, x_t: 0.25, x_terminal: -1.2 },
        }
    }

    /// Monte Carlo of `g(t, x, X_T) + int_t^T f(t, s, x, X_s) ds` with a fine
    /// trapezoid rule; the integrand is linear so the rule is exact in mean.
    fn monte_carlo_y(spec: &LinearSpec, t: f64, x: f64, m: usize) -> (f64, f64) {
        let steps = 64;
        let h = (spec.horizon - t) / steps as f64;
        let (mu, sigma) = (spec.dynamics.drift_const, spec.dynamics.vol_const);
        let (f, g) = (&spec.generator, &spec.terminal);
        let mut samples = Vec::with_capacity(m);
        for j in 0..m {
            let mut rng = path_rng(17, j as u64);
            let mut xs = x;
            let flow = |xs: f64| f.constant + f.x_t * x + f.x_s * xs;
            let mut integral = 0.5 * h * flow(xs);
            for k in 0..steps {
                let e: f64 = StandardNormal.sample(&mut rng);
                xs += mu * h + sigma * h.sqrt() * e;
                integral += if k + 1 == steps { 0.5 } else { 1.0 } * h * flow(xs);
            }
            samples.push(g.constant + g.x_t * x + g.x_terminal * xs + integral);
        }
        let mean = samples.iter().sum::<f64>() / m as f64;
        let var = samples.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (m - 1) as f64;
        (mean, (var / m as f64).sqrt())
    }

    #[test]
    fn linear_closed_form_matches_monte_carlo() {
        let s = spec();
        for (t, x) in [(0.0, 0.3), (0.7, -1.0), (1.2, 2.0)] {
            let (mean, se) = monte_carlo_y(&s, t, x, 20_000);
            assert!((mean - s.exact_y(t, x)).abs() < 4.0 * se, "t={t} x={x}: mc {mean} +- {se}, exact {}", s.exact_y(t, x));
        }
    }

    #[test]
    fn linear_closed_form_z_is_the_sensitivity_to_the_noise() {
        // Z(t, s) = sigma * d/dx E[... | X_s = x] for the part of the payoff
        // decided after s; a bump of X_s shifts X_T and X_r for r >= s.
        let s = spec();
        let (t, u) = (0.2, 0.9);
        let tail = |x: f64| s.terminal.x_terminal * (x + s.dynamics.drift_const * (s.horizon - u))
            + s.generator.x_s * (x * (s.horizon - u) + 0.5 * s.dynamics.drift_const * (s.horizon - u).powi(2));
        let h = 1e-4;
        let fd = s.dynamics.vol_const * (tail(1.0 + h) - tail(1.0 - h)) / (2.0 * h);
        assert!((s.exact_z(t, u) - fd).abs() < 1e-9);
    }

    #[test]
    fn terminal_identity_holds() {
        let s = spec();
        let x = 0.8;
        let g = s.terminal.constant + s.terminal.x_t * x + s.terminal.x_terminal * x;
        assert!((s.exact_y(s.horizon, x) - g).abs() < 1e-14);
    }

    #[test]
    fn closed_form_needs_decoupled_generator() {
        let mut s = spec();
        assert!(s.has_closed_form());
        s.generator.y = 0.5;
        assert!(!s.has_closed_form());
        let cfg = RunConfig { problem: ProblemId::UserDefined, linear: Some(s), ..Default::default() };
        assert!(build(&cfg).unwrap().1.is_none());
    }
}
