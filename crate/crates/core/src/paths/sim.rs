use std::io::{self, Write};

use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;

use super::rng::path_rng;
use super::{SimError, TimeGrid};

/// States beyond this magnitude abort the simulation.
pub const BLOW_UP_THRESHOLD: f64 = 1e12;

/// Brownian increments laid out path-major: `data[(j * N + k) * d + c]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Increments {
    n_paths: usize,
    n_steps: usize,
    dim: usize,
    data: Vec<f64>,
}

impl Increments {
    pub fn from_vec(n_paths: usize, n_steps: usize, dim: usize, data: Vec<f64>) -> Result<Self, SimError> {
        if n_paths == 0 || n_steps == 0 || dim == 0 {
            return Err(SimError::InvalidSize("increments need M, N, d >= 1".into()));
        }
        if data.len() != n_paths * n_steps * dim {
            return Err(SimError::InvalidSize(format!(
                "expected {} increments, got {}",
                n_paths * n_steps * dim,
                data.len()
            )));
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(SimError::InvalidParameter("increments must be finite".into()));
        }
        Ok(Self { n_paths, n_steps, dim, data })
    }

    pub fn n_paths(&self) -> usize {
        self.n_paths
    }

    pub fn n_steps(&self) -> usize {
        self.n_steps
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    /// `dB` over `[t_k, t_{k+1}]` on path `j`.
    #[inline]
    pub fn get(&self, j: usize, k: usize) -> &[f64] {
        let o = (j * self.n_steps + k) * self.dim;
        &self.data[o..o + self.dim]
    }

    pub fn path(&self, j: usize) -> &[f64] {
        let w = self.n_steps * self.dim;
        &self.data[j * w..(j + 1) * w]
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    /// Brownian motion at every node of path `j`, `B_0 = 0`.
    pub fn brownian_path(&self, j: usize) -> Vec<f64> {
        let d = self.dim;
        let mut out = vec![0.0; (self.n_steps + 1) * d];
        for k in 0..self.n_steps {
            for c in 0..d {
                out[(k + 1) * d + c] = out[k * d + c] + self.get(j, k)[c];
            }
        }
        out
    }
}

/// I.i.d. `N(0, dt I_d)` increments for `n_paths` paths.
///
/// Path `j` draws from its own stream under `key`, so the result does not
/// depend on how paths are distributed over threads.
pub fn brownian_increments(grid: &TimeGrid, n_paths: usize, dim: usize, key: u64) -> Result<Increments, SimError> {
    if n_paths == 0 || dim == 0 {
        return Err(SimError::InvalidSize("increments need M >= 1 and d >= 1".into()));
    }
    let n = grid.n_steps();
    let sd = grid.dt().sqrt();
    let mut data = vec![0.0; n_paths * n * dim];
    data.par_chunks_mut(n * dim).enumerate().for_each(|(j, chunk)| {
        let mut rng = path_rng(key, j as u64);
        for v in chunk {
            let z: f64 = StandardNormal.sample(&mut rng);
            *v = sd * z;
        }
    });
    Ok(Increments { n_paths, n_steps: n, dim, data })
}

/// Simulated states together with the noise that drove them.
#[derive(Debug, Clone, PartialEq)]
pub struct PathBatch {
    grid: TimeGrid,
    state_dim: usize,
    states: Vec<f64>,
    increments: Increments,
}

impl PathBatch {
    /// Wraps precomputed states laid out `states[(j * (N + 1) + k) * n + i]`.
    pub fn from_parts(grid: TimeGrid, state_dim: usize, states: Vec<f64>, increments: Increments) -> Result<Self, SimError> {
        if increments.n_steps != grid.n_steps() {
            return Err(SimError::InvalidSize("increments do not match the grid".into()));
        }
        if state_dim == 0 || states.len() != increments.n_paths * (grid.n_steps() + 1) * state_dim {
            return Err(SimError::InvalidSize("state array does not match the increments".into()));
        }
        Ok(Self { grid, state_dim, states, increments })
    }

    pub fn grid(&self) -> &TimeGrid {
        &self.grid
    }

    pub fn n_paths(&self) -> usize {
        self.increments.n_paths
    }

    pub fn state_dim(&self) -> usize {
        self.state_dim
    }

    pub fn noise_dim(&self) -> usize {
        self.increments.dim
    }

    /// `X_k` on path `j`.
    #[inline]
    pub fn state(&self, j: usize, k: usize) -> &[f64] {
        let o = (j * (self.grid.n_steps() + 1) + k) * self.state_dim;
        &self.states[o..o + self.state_dim]
    }

    /// `dB` over `[t_k, t_{k+1}]` on path `j`.
    #[inline]
    pub fn increment(&self, j: usize, k: usize) -> &[f64] {
        self.increments.get(j, k)
    }

    pub fn increments(&self) -> &Increments {
        &self.increments
    }

    pub fn states(&self) -> &[f64] {
        &self.states
    }

    /// Writes `path,step,time,x_0..x_{n-1}` rows.
    pub fn write_csv<W: Write>(&self, mut w: W) -> io::Result<()> {
        write!(w, "path,step,time")?;
        for i in 0..self.state_dim {
            write!(w, ",x_{i}")?;
        }
        writeln!(w)?;
        for j in 0..self.n_paths() {
            for k in 0..=self.grid.n_steps() {
                write!(w, "{j},{k},{:.16e}", self.grid.time(k))?;
                for v in self.state(j, k) {
                    write!(w, ",{v:.16e}")?;
                }
                writeln!(w)?;
            }
        }
        Ok(())
    }
}

/// Euler–Maruyama: `X_{k+1} = X_k + b(t_k, X_k) dt + sigma(t_k, X_k) dB_k`.
///
/// `drift` fills an `n`-vector; `diffusion` fills an `n x d` row-major matrix.
pub fn simulate_euler<B, S>(drift: B, diffusion: S, x0: &[f64], grid: &TimeGrid, increments: Increments) -> Result<PathBatch, SimError>
where
    B: Fn(f64, &[f64], &mut [f64]) + Sync,
    S: Fn(f64, &[f64], &mut [f64]) + Sync,
{
    let n = x0.len();
    let d = increments.dim;
    let steps = grid.n_steps();
    if n == 0 {
        return Err(SimError::InvalidSize("initial state is empty".into()));
    }
    if increments.n_steps != steps {
        return Err(SimError::InvalidSize("increments do not match the grid".into()));
    }
    if x0.iter().any(|v| !v.is_finite()) {
        return Err(SimError::InvalidParameter("initial state must be finite".into()));
    }
    let dt = grid.dt();
    let mut states = vec![0.0; increments.n_paths * (steps + 1) * n];
    let failures: Vec<SimError> = states
        .par_chunks_mut((steps + 1) * n)
        .enumerate()
        .filter_map(|(j, path)| {
            path[..n].copy_from_slice(x0);
            let mut b = vec![0.0; n];
            let mut s = vec![0.0; n * d];
            for k in 0..steps {
                let (done, rest) = path.split_at_mut((k + 1) * n);
                let x = &done[k * n..];
                let t = grid.time(k);
                drift(t, x, &mut b);
                diffusion(t, x, &mut s);
                let db = increments.get(j, k);
                for i in 0..n {
                    let noise: f64 = (0..d).map(|c| s[i * d + c] * db[c]).sum();
                    let next = x[i] + b[i] * dt + noise;
                    if !(next.abs() <= BLOW_UP_THRESHOLD) {
                        return Some(SimError::BlowUp { path: j, step: k + 1 });
                    }
                    rest[i] = next;
                }
            }
            None
        })
        .collect();
    if let Some(e) = failures.into_iter().next() {
        return Err(e);
    }
    Ok(PathBatch { grid: *grid, state_dim: n, states, increments })
}

/// Exact scalar geometric Brownian motion
/// `X_k = x0 exp((mu - sigma^2 / 2) t_k + sigma B_{t_k})` driven by the
/// first noise component.
pub fn simulate_gbm_exact(mu: f64, sigma: f64, x0: f64, grid: &TimeGrid, increments: Increments) -> Result<PathBatch, SimError> {
    if !(x0 > 0.0 && x0.is_finite()) {
        return Err(SimError::InvalidParameter(format!("GBM needs x0 > 0, got {x0}")));
    }
    if !(mu.is_finite() && sigma.is_finite()) {
        return Err(SimError::InvalidParameter("GBM coefficients must be finite".into()));
    }
    let steps = grid.n_steps();
    if increments.n_steps != steps {
        return Err(SimError::InvalidSize("increments do not match the grid".into()));
    }
    let d = increments.dim;
    let drift = mu - 0.5 * sigma * sigma;
    let mut states = vec![0.0; increments.n_paths * (steps + 1)];
    states.par_chunks_mut(steps + 1).enumerate().for_each(|(j, path)| {
        let mut b = 0.0;
        path[0] = x0;
        for k in 0..steps {
            b += increments.data[(j * steps + k) * d];
            path[k + 1] = x0 * (drift * grid.time(k + 1) + sigma * b).exp();
        }
    });
    Ok(PathBatch { grid: *grid, state_dim: 1, states, increments })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::paths::rng::derive_seed;
    use proptest::prelude::*;

    fn gbm_euler(mu: f64, sigma: f64, grid: &TimeGrid, inc: Increments) -> PathBatch {
        simulate_euler(
            move |_, x, b| b[0] = mu * x[0],
            move |_, x, s| s[0] = sigma * x[0],
            &[1.0],
            grid,
            inc,
        )
        .unwrap()
    }

    fn mean_var(v: &[f64]) -> (f64, f64) {
        let n = v.len() as f64;
        let m = v.iter().sum::<f64>() / n;
        (m, v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (n - 1.0))
    }

    #[test]
    fn increments_are_deterministic() {
        let g = TimeGrid::new(1.0, 8).unwrap();
        let a = brownian_increments(&g, 100, 2, 9).unwrap();
        let b = brownian_increments(&g, 100, 2, 9).unwrap();
        assert_eq!(a, b);
        let c = brownian_increments(&g, 100, 2, 10).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn increments_do_not_depend_on_thread_count() {
        let g = TimeGrid::new(1.0, 10).unwrap();
        let pool = rayon::ThreadPoolBuilder::new().num_threads(3).build().unwrap();
        let a = pool.install(|| brownian_increments(&g, 257, 1, 4).unwrap());
        let b = rayon::ThreadPoolBuilder::new()
            .num_threads(1)
            .build()
            .unwrap()
            .install(|| brownian_increments(&g, 257, 1, 4).unwrap());
        assert_eq!(a, b);
    }

    #[test]
    fn increment_moments() {
        let g = TimeGrid::new(0.02, 1).unwrap();
        let m = 65536;
        let inc = brownian_increments(&g, m, 1, 123).unwrap();
        let (mean, var) = mean_var(inc.as_slice());
        assert!(mean.abs() < 4.0 * (0.02f64 / m as f64).sqrt(), "mean {mean}");
        assert!((var / 0.02 - 1.0).abs() < 0.05, "var {var}");
    }

    #[test]
    fn per_step_variance_within_ten_percent() {
        let g = TimeGrid::new(1.0, 20).unwrap();
        let inc = brownian_increments(&g, 4096, 1, 5).unwrap();
        for k in 0..20 {
            let col: Vec<f64> = (0..4096).map(|j| inc.get(j, k)[0]).collect();
            let (_, var) = mean_var(&col);
            assert!((var / g.dt() - 1.0).abs() < 0.1, "step {k}: {var}");
        }
    }

    #[test]
    fn variance_scales_linearly_with_dt() {
        let mut pts = Vec::new();
        for &dt in &[0.1, 0.05, 0.025] {
            let g = TimeGrid::new(dt, 1).unwrap();
            let inc = brownian_increments(&g, 1 << 16, 1, 77).unwrap();
            pts.push((dt.ln(), mean_var(inc.as_slice()).1.ln()));
        }
        let slope = least_squares_slope(&pts);
        assert!((slope - 1.0).abs() < 0.05, "slope {slope}");
    }

    fn least_squares_slope(pts: &[(f64, f64)]) -> f64 {
        let n = pts.len() as f64;
        let mx = pts.iter().map(|p| p.0).sum::<f64>() / n;
        let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
        let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
        let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
        sxy / sxx
    }

    #[test]
    fn frozen_dynamics_stay_put() {
        let g = TimeGrid::new(1.0, 5).unwrap();
        let inc = brownian_increments(&g, 4, 2, 1).unwrap();
        let x0 = [0.5, -2.0, 3.0];
        let p = simulate_euler(|_, _, b| b.fill(0.0), |_, _, s| s.fill(0.0), &x0, &g, inc).unwrap();
        for j in 0..4 {
            for k in 0..=5 {
                assert_eq!(p.state(j, k), &x0);
            }
        }
    }

    #[test]
    fn pure_brownian_is_the_cumulative_sum() {
        let g = TimeGrid::new(1.0, 12).unwrap();
        let inc = brownian_increments(&g, 16, 1, 2).unwrap();
        let p = simulate_euler(|_, _, b| b[0] = 0.0, |_, _, s| s[0] = 1.0, &[0.0], &g, inc).unwrap();
        for j in 0..16 {
            let bm = p.increments().brownian_path(j);
            for k in 0..=12 {
                assert!((p.state(j, k)[0] - bm[k]).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn gbm_euler_terminal_mean() {
        let g = TimeGrid::new(1.0, 50).unwrap();
        let m = 1 << 13;
        let p = gbm_euler(0.1, 0.2, &g, brownian_increments(&g, m, 1, 11).unwrap());
        let xt: Vec<f64> = (0..m).map(|j| p.state(j, 50)[0]).collect();
        let (mean, var) = mean_var(&xt);
        let se = (var / m as f64).sqrt();
        assert!((mean - 0.1f64.exp()).abs() < 3.0 * se, "{mean} vs {}", 0.1f64.exp());
    }

    #[test]
    fn noiseless_gbm_is_exponential() {
        let g = TimeGrid::new(1.0, 10).unwrap();
        let inc = brownian_increments(&g, 3, 1, 0).unwrap();
        let p = simulate_gbm_exact(0.1, 0.0, 2.0, &g, inc).unwrap();
        let zero = Increments::from_vec(3, 10, 1, vec![0.0; 30]).unwrap();
        let q = simulate_gbm_exact(0.1, 0.2, 2.0, &g, zero).unwrap();
        for j in 0..3 {
            for k in 0..=10 {
                let expect = 2.0 * (0.1 * g.time(k)).exp();
                assert!((p.state(j, k)[0] - expect).abs() < 1e-14);
                let expect = 2.0 * ((0.1 - 0.02) * g.time(k)).exp();
                assert!((q.state(j, k)[0] - expect).abs() < 1e-14);
            }
        }
    }

    #[test]
    fn euler_converges_to_exact_gbm_at_order_one() {
        let m = 1 << 13;
        let mut pts = Vec::new();
        for &n in &[10usize, 20, 40, 80] {
            let g = TimeGrid::new(1.0, n).unwrap();
            let inc = brownian_increments(&g, m, 1, derive_seed(3, &[n as u64])).unwrap();
            let exact = simulate_gbm_exact(0.1, 0.2, 1.0, &g, inc.clone()).unwrap();
            let euler = gbm_euler(0.1, 0.2, &g, inc);
            let mse = (0..m).map(|j| (exact.state(j, n)[0] - euler.state(j, n)[0]).powi(2)).sum::<f64>() / m as f64;
            pts.push(((1.0 / n as f64).ln(), mse.ln()));
        }
        let slope = least_squares_slope(&pts);
        assert!(slope >= 0.9, "slope {slope}");
    }

    #[test]
    fn blow_up_reports_path_and_step() {
        let g = TimeGrid::new(1.0, 10).unwrap();
        let inc = Increments::from_vec(2, 10, 1, vec![0.0; 20]).unwrap();
        // growth factor 101 per step crosses 1e12 at step 6
        let err = simulate_euler(|_, x, b| b[0] = 1e3 * x[0], |_, _, s| s[0] = 0.0, &[1.0], &g, inc).unwrap_err();
        assert!(matches!(err, SimError::BlowUp { path: 0, step: 6 }), "{err:?}");
    }

    #[test]
    fn csv_dump_has_header_and_rows() {
        let g = TimeGrid::new(1.0, 2).unwrap();
        let inc = brownian_increments(&g, 2, 1, 0).unwrap();
        let p = simulate_euler(|_, _, b| b.fill(0.0), |_, _, s| s.fill(1.0), &[0.0, 1.0], &g, inc).unwrap();
        let mut buf = Vec::new();
        p.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines[0], "path,step,time,x_0,x_1");
        assert_eq!(lines.len(), 1 + 2 * 3);
        assert!(lines[6].starts_with("1,2,1.0000000000000000e0,"));
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(32))]

        #[test]
        fn simulation_is_a_pure_function_of_its_inputs(seed in any::<u64>(), n in 1usize..20, m in 1usize..40) {
            let g = TimeGrid::new(1.0, n).unwrap();
            let a = gbm_euler(0.05, 0.3, &g, brownian_increments(&g, m, 1, seed).unwrap());
            let b = gbm_euler(0.05, 0.3, &g, brownian_increments(&g, m, 1, seed).unwrap());
            prop_assert_eq!(a, b);
        }

        #[test]
        fn initial_state_is_preserved(x0 in -5.0f64..5.0, m in 1usize..30) {
            let g = TimeGrid::new(0.5, 4).unwrap();
            let p = simulate_euler(|_, x, b| b[0] = -x[0], |_, _, s| s[0] = 0.4, &[x0], &g,
                brownian_increments(&g, m, 1, 1).unwrap()).unwrap();
            for j in 0..m {
                prop_assert_eq!(p.state(j, 0)[0], x0);
            }
        }
    }
}
