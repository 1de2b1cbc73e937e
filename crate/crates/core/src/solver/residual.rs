use super::SolverError;
use crate::paths::PathBatch;
use crate::problem::{BsvieProblem, GenArgs};

/// Discrete residual `G_n` per path, written out term by term.
///
/// `y_values[(j * L + (m - n)) * dim_y + c]` holds `Yhat_m` and
/// `z_values[(j * L + (m - n)) * dim_z + c]` holds `Zhat(t_n, t_m)` for
/// `m = n..N-1`, `L = N - n`. Returns `G[j * dim_y + c]`.
pub fn residual(
    problem: &BsvieProblem,
    paths: &PathBatch,
    n: usize,
    y_values: &[f64],
    z_values: &[f64],
) -> Result<Vec<f64>, SolverError> {
    let grid = paths.grid();
    let big_n = grid.n_steps();
    if n >= big_n {
        return Err(SolverError::Contract(format!("step {n} outside 0..{big_n}")));
    }
    let (dy, dz, d) = (problem.value_dim, problem.z_dim(), problem.noise_dim);
    let width = big_n - n;
    let m_paths = paths.n_paths();
    if y_values.len() != m_paths * width * dy {
        return Err(SolverError::Contract(format!(
            "expected {} future Y values, got {}",
            m_paths * width * dy,
            y_values.len()
        )));
    }
    if z_values.len() != m_paths * width * dz {
        return Err(SolverError::Contract(format!(
            "expected {} Z values, got {}",
            m_paths * width * dz,
            z_values.len()
        )));
    }
    let dt = grid.dt();
    let t_n = grid.time(n);
    let mut out = vec![0.0; m_paths * dy];
    let mut f = vec![0.0; dy];
    for j in 0..m_paths {
        let g = &mut out[j * dy..(j + 1) * dy];
        problem.terminal.eval(t_n, paths.state(j, n), paths.state(j, big_n), g);
        for m in n..big_n {
            let r = j * width + (m - n);
            let y = &y_values[r * dy..(r + 1) * dy];
            let z = &z_values[r * dz..(r + 1) * dz];
            let args = GenArgs { t: t_n, s: grid.time(m), x_t: paths.state(j, n), x_s: paths.state(j, m), y, z };
            problem.generator.eval(&args, &mut f);
            let db = paths.increment(j, m);
            for i in 0..dy {
                let stoch: f64 = (0..d).map(|c| z[i * d + c] * db[c]).sum();
                g[i] += f[i] * dt - stoch;
            }
        }
    }
    Ok(out)
}

/// `(1/M) sum_j |y_j - G_j|^2` for `M` rows of width `dim`.
pub fn step_loss(y_pred: &[f64], residual: &[f64], dim: usize) -> Result<f64, SolverError> {
    if y_pred.len() != residual.len() || dim == 0 || y_pred.len() % dim != 0 || y_pred.is_empty() {
        return Err(SolverError::Contract("prediction and residual shapes differ".into()));
    }
    if y_pred.iter().chain(residual).any(|v| !v.is_finite()) {
        return Err(SolverError::Contract("non-finite loss input".into()));
    }
    let m = (y_pred.len() / dim) as f64;
    Ok(y_pred.iter().zip(residual).map(|(a, b)| (a - b) * (a - b)).sum::<f64>() / m)
}
