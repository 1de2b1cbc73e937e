//! Non-neural reference solver: the discrete backward scheme on a uniform
//! grid with conditional expectations estimated by least-squares regression
//! on polynomial features of the Markov state.
//!
//! For every pair `k <= l`:
//!
//! ```text
//! Z_l^k = E_l[(Y_{l+1}^k - E_l[Y_{l+1}^k]) dB_l] / dt
//! Y_l^k = E_l[Y_{l+1}^k] + dt f(t_k, t_l, X_k, X_l, Y_l^l, Z_l^k)
//! ```
//!
//! starting from `Y_N^k = g(t_k, X_k, X_N)`. Subtracting the continuation
//! inside the `Z` target leaves its conditional mean unchanged and removes most
//! of its variance. The diagonal `Y_l^l` appears on both sides and is solved
//! by fixed-point iteration.

mod regression;

use std::io::{self, Write};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

pub use regression::{conditional_expectation, Design, Fit, RegressionBasis};

use crate::benchmarks::quadrature::GAUSS_LEGENDRE_3;
use crate::metrics::{triangle_index, triangle_len, SolutionValues};
use crate::paths::{PathBatch, SimError, TimeGrid};
use crate::problem::{BsvieProblem, GenArgs};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum OracleError {
    #[error("shape error: {0}")]
    Shape(String),
    #[error("non-finite {0}")]
    NonFinite(&'static str),
    #[error("{paths} paths cannot fit a basis of size {basis}")]
    InsufficientPaths { paths: usize, basis: usize },
    #[error("regression design is singular even with ridge")]
    Singular,
    #[error("fixed-point iteration for the diagonal did not converge at step {step}")]
    NoConvergence { step: usize },
    #[error(transparent)]
    Sim(#[from] SimError),
}

/// Iteration cap for the implicit diagonal value.
const PICARD_MAX_ITER: usize = 200;

/// Regression fits of one cell `(k, l)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OracleCell {
    /// `E_l[Y_{l+1}^k]`, one fit per component of `Y`.
    pub continuation: Vec<Fit>,
    /// `Z_l^k`, one fit per component of `Z` (row-major `m x d`).
    pub z: Vec<Fit>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiscreteSolution {
    pub grid: TimeGrid,
    pub basis: RegressionBasis,
    pub state_dim: usize,
    pub value_dim: usize,
    pub noise_dim: usize,
    /// Cells in `triangle_index(N, k, l)` order.
    pub cells: Vec<OracleCell>,
    /// Number of cells whose design needed the ridge fallback.
    pub ridge_fallbacks: usize,
}

/// Regressors of cell `(k, l)` on path `j`: `X_l` on the diagonal, `(X_k, X_l)` otherwise.
fn regressors_into(paths: &PathBatch, j: usize, k: usize, l: usize, out: &mut Vec<f64>) {
    if k < l {
        out.extend_from_slice(paths.state(j, k));
    }
    out.extend_from_slice(paths.state(j, l));
}

/// Fixed point of `y = c + dt f(.., y, z)` on the diagonal.
fn diagonal_fixed_point(problem: &BsvieProblem, t: f64, x: &[f64], cont: &[f64], z: &[f64], dt: f64, step: usize) -> Result<Vec<f64>, OracleError> {
    let dy = cont.len();
    let mut y = cont.to_vec();
    let mut f = vec![0.0; dy];
    for _ in 0..PICARD_MAX_ITER {
        problem.generator.eval(&GenArgs { t, s: t, x_t: x, x_s: x, y: &y, z }, &mut f);
        let mut moved = false;
        for c in 0..dy {
            let next = cont[c] + dt * f[c];
            if !next.is_finite() {
                return Err(OracleError::NonFinite("diagonal value"));
            }
            if (next - y[c]).abs() > 4.0 * f64::EPSILON * (1.0 + next.abs()) {
                moved = true;
            }
            y[c] = next;
        }
        if !moved {
            return Ok(y);
        }
    }
    Err(OracleError::NoConvergence { step })
}

/// Runs the scheme on `paths` and keeps the regression fits of every cell.
pub fn solve_discrete(problem: &BsvieProblem, paths: &PathBatch, basis: &RegressionBasis) -> Result<DiscreteSolution, OracleError> {
    let grid = *paths.grid();
    let big_n = grid.n_steps();
    let (ns, dy, d) = (problem.state_dim, problem.value_dim, problem.noise_dim);
    let dz = dy * d;
    if paths.state_dim() != ns || paths.noise_dim() != d {
        return Err(OracleError::Shape("paths do not match the problem dimensions".into()));
    }
    let m_paths = paths.n_paths();
    let dt = grid.dt();

    // next[k][j * dy + c] = Y_{l+1}^k on path j
    let mut next: Vec<Vec<f64>> = (0..big_n)
        .map(|k| {
            let mut v = vec![0.0; m_paths * dy];
            for j in 0..m_paths {
                problem.terminal.eval(grid.time(k), paths.state(j, k), paths.state(j, big_n), &mut v[j * dy..(j + 1) * dy]);
            }
            v
        })
        .collect();
    let mut cells: Vec<Option<OracleCell>> = vec![None; triangle_len(big_n)];
    let mut ridge_fallbacks = 0;

    for l in (0..big_n).rev() {
        let t_l = grid.time(l);
        // Returns (cell, continuation values, Z values, ridge flag).
        let regress = |k: usize, target: &[f64]| -> Result<(OracleCell, Vec<f64>, Vec<f64>, bool), OracleError> {
            let n_vars = if k < l { 2 * ns } else { ns };
            let mut regs = Vec::with_capacity(m_paths * n_vars);
            for j in 0..m_paths {
                regressors_into(paths, j, k, l, &mut regs);
            }
            let design = Design::new(&regs, n_vars, basis)?;
            let mut cont = vec![0.0; m_paths * dy];
            let mut continuation = Vec::with_capacity(dy);
            for c in 0..dy {
                let col: Vec<f64> = (0..m_paths).map(|j| target[j * dy + c]).collect();
                let coef = design.solve(&col)?;
                for (j, v) in design.fitted(&coef).into_iter().enumerate() {
                    cont[j * dy + c] = v;
                }
                continuation.push(design.fit(coef));
            }
            let mut z = vec![0.0; m_paths * dz];
            let mut z_fits = Vec::with_capacity(dz);
            for c in 0..dy {
                for i in 0..d {
                    let col: Vec<f64> = (0..m_paths)
                        .map(|j| (target[j * dy + c] - cont[j * dy + c]) * paths.increment(j, l)[i] / dt)
                        .collect();
                    let coef = design.solve(&col)?;
                    for (j, v) in design.fitted(&coef).into_iter().enumerate() {
                        z[j * dz + c * d + i] = v;
                    }
                    z_fits.push(design.fit(coef));
                }
            }
            Ok((OracleCell { continuation, z: z_fits }, cont, z, design.ridge))
        };

        let (cell, cont, z, ridge) = regress(l, &next[l])?;
        ridge_fallbacks += usize::from(ridge);
        let mut diag = vec![0.0; m_paths * dy];
        for j in 0..m_paths {
            let x = paths.state(j, l);
            let y = diagonal_fixed_point(problem, t_l, x, &cont[j * dy..(j + 1) * dy], &z[j * dz..(j + 1) * dz], dt, l)?;
            diag[j * dy..(j + 1) * dy].copy_from_slice(&y);
        }
        cells[triangle_index(big_n, l, l)] = Some(cell);

        let updated: Vec<(usize, OracleCell, Vec<f64>, bool)> = (0..l)
            .into_par_iter()
            .map(|k| {
                let (cell, cont, z, ridge) = regress(k, &next[k])?;
                let t_k = grid.time(k);
                let mut y = vec![0.0; m_paths * dy];
                let mut f = vec![0.0; dy];
                for j in 0..m_paths {
                    let args = GenArgs {
                        t: t_k,
                        s: t_l,
                        x_t: paths.state(j, k),
                        x_s: paths.state(j, l),
                        y: &diag[j * dy..(j + 1) * dy],
                        z: &z[j * dz..(j + 1) * dz],
                    };
                    problem.generator.eval(&args, &mut f);
                    for c in 0..dy {
                        y[j * dy + c] = cont[j * dy + c] + dt * f[c];
                    }
                }
                if y.iter().any(|v| !v.is_finite()) {
                    return Err(OracleError::NonFinite("scheme value"));
                }
                Ok((k, cell, y, ridge))
            })
            .collect::<Result<_, _>>()?;
        for (k, cell, y, ridge) in updated {
            ridge_fallbacks += usize::from(ridge);
            cells[triangle_index(big_n, k, l)] = Some(cell);
            next[k] = y;
        }
        next[l] = diag;
    }
    if ridge_fallbacks > 0 {
        log::warn!("{ridge_fallbacks} of {} regressions used the ridge fallback", triangle_len(big_n));
    }
    Ok(DiscreteSolution {
        grid,
        basis: *basis,
        state_dim: ns,
        value_dim: dy,
        noise_dim: d,
        cells: cells.into_iter().map(|c| c.expect("every cell visited")).collect(),
        ridge_fallbacks,
    })
}

impl DiscreteSolution {
    pub fn cell(&self, k: usize, l: usize) -> &OracleCell {
        &self.cells[triangle_index(self.grid.n_steps(), k, l)]
    }

    /// Visits `(k, l, Y_l^k, Z_l^k)` on path `j`, diagonal first within each `l`.
    fn walk_path(
        &self,
        problem: &BsvieProblem,
        paths: &PathBatch,
        j: usize,
        mut visit: impl FnMut(usize, usize, &[f64], &[f64]),
    ) -> Result<(), OracleError> {
        let big_n = self.grid.n_steps();
        let (dy, dz) = (self.value_dim, self.value_dim * self.noise_dim);
        let dt = self.grid.dt();
        let mut regs = Vec::with_capacity(2 * self.state_dim);
        let mut cont = vec![0.0; dy];
        let mut z = vec![0.0; dz];
        let mut f = vec![0.0; dy];
        let mut y = vec![0.0; dy];
        for l in 0..big_n {
            let t_l = self.grid.time(l);
            let mut predict = |k: usize, cont: &mut [f64], z: &mut [f64]| {
                regs.clear();
                regressors_into(paths, j, k, l, &mut regs);
                let cell = self.cell(k, l);
                for (c, fit) in cell.continuation.iter().enumerate() {
                    cont[c] = fit.predict(&regs);
                }
                for (c, fit) in cell.z.iter().enumerate() {
                    z[c] = fit.predict(&regs);
                }
            };
            predict(l, &mut cont, &mut z);
            let diag = diagonal_fixed_point(problem, t_l, paths.state(j, l), &cont, &z, dt, l)?;
            visit(l, l, &diag, &z);
            for k in 0..l {
                predict(k, &mut cont, &mut z);
                let args = GenArgs { t: self.grid.time(k), s: t_l, x_t: paths.state(j, k), x_s: paths.state(j, l), y: &diag, z: &z };
                problem.generator.eval(&args, &mut f);
                for c in 0..dy {
                    y[c] = cont[c] + dt * f[c];
                }
                visit(k, l, &y, &z);
            }
        }
        Ok(())
    }

    fn check_paths(&self, paths: &PathBatch) -> Result<(), OracleError> {
        if paths.grid() != &self.grid || paths.state_dim() != self.state_dim || paths.noise_dim() != self.noise_dim {
            return Err(OracleError::Shape("paths do not match the oracle grid or dimensions".into()));
        }
        Ok(())
    }

    /// Diagonal values `Y_k^k` and `Z_l^k` per path in [`SolutionValues`] layout.
    pub fn evaluate(&self, problem: &BsvieProblem, paths: &PathBatch) -> Result<SolutionValues, OracleError> {
        self.check_paths(paths)?;
        let big_n = self.grid.n_steps();
        let (dy, dz) = (self.value_dim, self.value_dim * self.noise_dim);
        let tri = triangle_len(big_n);
        let mut out = SolutionValues::zeros(paths.n_paths(), big_n, dy, dz);
        out.y
            .par_chunks_mut(big_n * dy)
            .zip(out.z.par_chunks_mut(tri * dz))
            .enumerate()
            .try_for_each(|(j, (y_row, z_row))| {
                self.walk_path(problem, paths, j, |k, l, y, z| {
                    if k == l {
                        y_row[k * dy..(k + 1) * dy].copy_from_slice(y);
                    }
                    let o = triangle_index(big_n, k, l) * dz;
                    z_row[o..o + dz].copy_from_slice(z);
                })
            })?;
        Ok(out)
    }

    /// Path means of `Y_l^k` and `Z_l^k` per cell, `triangle_index` order.
    pub fn cell_means(&self, problem: &BsvieProblem, paths: &PathBatch) -> Result<(Vec<f64>, Vec<f64>), OracleError> {
        self.check_paths(paths)?;
        let big_n = self.grid.n_steps();
        let (dy, dz) = (self.value_dim, self.value_dim * self.noise_dim);
        let tri = triangle_len(big_n);
        let m_paths = paths.n_paths();
        let per_path = (0..m_paths)
            .into_par_iter()
            .map(|j| {
                let mut y_sum = vec![0.0; tri * dy];
                let mut z_sum = vec![0.0; tri * dz];
                self.walk_path(problem, paths, j, |k, l, y, z| {
                    let i = triangle_index(big_n, k, l);
                    y_sum[i * dy..(i + 1) * dy].copy_from_slice(y);
                    z_sum[i * dz..(i + 1) * dz].copy_from_slice(z);
                })?;
                Ok((y_sum, z_sum))
            })
            .collect::<Result<Vec<_>, OracleError>>()?;
        let mut y_mean = vec![0.0; tri * dy];
        let mut z_mean = vec![0.0; tri * dz];
        for (ys, zs) in &per_path {
            for (a, b) in y_mean.iter_mut().zip(ys) {
                *a += b;
            }
            for (a, b) in z_mean.iter_mut().zip(zs) {
                *a += b;
            }
        }
        for v in y_mean.iter_mut().chain(z_mean.iter_mut()) {
            *v /= m_paths as f64;
        }
        Ok((y_mean, z_mean))
    }

    /// `k,l,t_k,t_l,mean_Y,mean_Z` rows over `k <= l`; vector components get
    /// `_c` suffixes.
    pub fn write_cell_means_csv<W: Write>(&self, problem: &BsvieProblem, paths: &PathBatch, mut w: W) -> io::Result<()> {
        let (y_mean, z_mean) = self.cell_means(problem, paths).map_err(io::Error::other)?;
        let (dy, dz) = (self.value_dim, self.value_dim * self.noise_dim);
        let names = |base: &str, dim: usize| -> String {
            if dim == 1 {
                base.to_string()
            } else {
                (0..dim).map(|c| format!("{base}_{c}")).collect::<Vec<_>>().join(",")
            }
        };
        writeln!(w, "k,l,t_k,t_l,{},{}", names("mean_Y", dy), names("mean_Z", dz))?;
        let big_n = self.grid.n_steps();
        for k in 0..big_n {
            for l in k..big_n {
                let i = triangle_index(big_n, k, l);
                write!(w, "{k},{l},{:.16e},{:.16e}", self.grid.time(k), self.grid.time(l))?;
                for v in &y_mean[i * dy..(i + 1) * dy] {
                    write!(w, ",{v:.16e}")?;
                }
                for v in &z_mean[i * dz..(i + 1) * dz] {
                    write!(w, ",{v:.16e}")?;
                }
                writeln!(w)?;
            }
        }
        Ok(())
    }
}

/// Diagonal values `Y_k^k`, layout `[(j * N + k) * m + c]`.
pub fn diagonal_y(solution: &DiscreteSolution, problem: &BsvieProblem, paths: &PathBatch) -> Result<Vec<f64>, OracleError> {
    Ok(solution.evaluate(problem, paths)?.y)
}

/// Cell-integrated squared gaps to an exact solution.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IntegratedErrors {
    /// `sum_k E int_{t_k}^{t_{k+1}} |Y(t) - Y_k|^2 dt`
    pub err_y: f64,
    /// `sum_{k <= l} E int int_{cell (k, l)} |Z(t, s) - Z_l^k|^2 ds dt`
    pub err_z: f64,
}

impl IntegratedErrors {
    pub fn total(&self) -> f64 {
        self.err_y + self.err_z
    }
}

/// Probabilists' Gauss–Hermite rule with three nodes.
const GAUSS_HERMITE_3: [(f64, f64); 3] = [(-1.732_050_807_568_877_2, 1.0 / 6.0), (0.0, 2.0 / 3.0), (1.732_050_807_568_877_2, 1.0 / 6.0)];

/// Integrated errors of grid values against `y_exact(t, x_t)` and a
/// deterministic `z_exact(t, s)`.
///
/// Scalar Brownian state only: between grid nodes the state follows the
/// Brownian bridge, whose Gaussian law is integrated exactly for `Y` affine in
/// the state. On diagonal cells `Z(t, s)` is read at `(t, max(s, t))`.
pub fn integrated_errors(
    values: &SolutionValues,
    paths: &PathBatch,
    y_exact: impl Fn(f64, f64) -> f64 + Sync,
    z_exact: impl Fn(f64, f64) -> f64 + Sync,
) -> Result<IntegratedErrors, OracleError> {
    let grid = paths.grid();
    let big_n = grid.n_steps();
    if paths.state_dim() != 1 || values.y_dim != 1 || values.z_dim != 1 {
        return Err(OracleError::Shape("integrated errors need scalar state, Y and Z".into()));
    }
    if values.n_steps != big_n || values.n_paths != paths.n_paths() {
        return Err(OracleError::Shape("values and paths disagree".into()));
    }
    let dt = grid.dt();
    let half = 0.5 * dt;
    let nodes = |k: usize| GAUSS_LEGENDRE_3.map(|(x, w)| (grid.time(k) + half * (1.0 + x), half * w));

    // Per cell: (int 1, int Z, int Z^2) over the square.
    let moments: Vec<(f64, f64, f64)> = (0..triangle_len(big_n))
        .into_par_iter()
        .map(|i| {
            let (k, l) = triangle_pair(big_n, i);
            let (mut a, mut b, mut c) = (0.0, 0.0, 0.0);
            for (t, wt) in nodes(k) {
                for (s, ws) in nodes(l) {
                    let z = z_exact(t, s.max(t));
                    a += wt * ws;
                    b += wt * ws * z;
                    c += wt * ws * z * z;
                }
            }
            (a, b, c)
        })
        .collect();
    if moments.iter().any(|m| !m.1.is_finite() || !m.2.is_finite()) {
        return Err(OracleError::NonFinite("exact Z"));
    }

    let m_paths = paths.n_paths();
    let per_path: Vec<(f64, f64)> = (0..m_paths)
        .into_par_iter()
        .map(|j| {
            let mut ey = 0.0;
            for k in 0..big_n {
                let (x0, x1) = (paths.state(j, k)[0], paths.state(j, k + 1)[0]);
                let approx = values.y_at(j, k)[0];
                for (t, w) in nodes(k) {
                    let theta = (t - grid.time(k)) / dt;
                    let mean = x0 + theta * (x1 - x0);
                    let sd = (theta * (1.0 - theta) * dt).sqrt();
                    for (xi, wh) in GAUSS_HERMITE_3 {
                        let gap = y_exact(t, mean + sd * xi) - approx;
                        ey += w * wh * gap * gap;
                    }
                }
            }
            let mut ez = 0.0;
            for (i, &(a, b, c)) in moments.iter().enumerate() {
                let (k, l) = triangle_pair(big_n, i);
                let z = values.z_at(j, k, l)[0];
                ez += c - 2.0 * z * b + z * z * a;
            }
            (ey, ez)
        })
        .collect();
    let (sy, sz) = per_path.iter().fold((0.0, 0.0), |(a, b), &(y, z)| (a + y, b + z));
    let out = IntegratedErrors { err_y: sy / m_paths as f64, err_z: sz / m_paths as f64 };
    if !out.total().is_finite() {
        return Err(OracleError::NonFinite("integrated error"));
    }
    Ok(out)
}

/// Inverse of [`triangle_index`].
fn triangle_pair(n_steps: usize, index: usize) -> (usize, usize) {
    let mut k = 0;
    let mut start = 0;
    while start + (n_steps - k) <= index {
        start += n_steps - k;
        k += 1;
    }
    (k, k + index - start)
}

#[cfg(test)]
mod tests;
