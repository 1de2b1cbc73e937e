//! Empirical L² error metrics, time-resolved MSE curves and their CSV forms.

use std::io::{self, Write};

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum MetricsError {
    #[error("shape mismatch: {0}")]
    Shape(String),
}

/// Number of pairs `(n, k)` with `0 <= n <= k < n_steps`.
pub fn triangle_len(n_steps: usize) -> usize {
    n_steps * (n_steps + 1) / 2
}

/// Position of `(n, k)`, `n <= k`, in row-major upper-triangular order.
#[inline]
pub fn triangle_index(n_steps: usize, n: usize, k: usize) -> usize {
    debug_assert!(n <= k && k < n_steps);
    n * (2 * n_steps - n + 1) / 2 + (k - n)
}

/// Per-path values of `Y` on `t_0..t_{N-1}` and of `Z` on the triangle
/// `k >= n`.
///
/// `y[(j * N + n) * m + c]`, `z[(j * P + triangle_index(n, k)) * q + c]`
/// with `P = N (N + 1) / 2` and `q = m d`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolutionValues {
    pub n_paths: usize,
    pub n_steps: usize,
    pub y_dim: usize,
    pub z_dim: usize,
    pub y: Vec<f64>,
    pub z: Vec<f64>,
}

impl SolutionValues {
    pub fn zeros(n_paths: usize, n_steps: usize, y_dim: usize, z_dim: usize) -> Self {
        Self {
            n_paths,
            n_steps,
            y_dim,
            z_dim,
            y: vec![0.0; n_paths * n_steps * y_dim],
            z: vec![0.0; n_paths * triangle_len(n_steps) * z_dim],
        }
    }

    pub fn y_at(&self, j: usize, n: usize) -> &[f64] {
        let o = (j * self.n_steps + n) * self.y_dim;
        &self.y[o..o + self.y_dim]
    }

    pub fn y_at_mut(&mut self, j: usize, n: usize) -> &mut [f64] {
        let o = (j * self.n_steps + n) * self.y_dim;
        &mut self.y[o..o + self.y_dim]
    }

    pub fn z_at(&self, j: usize, n: usize, k: usize) -> &[f64] {
        let o = (j * triangle_len(self.n_steps) + triangle_index(self.n_steps, n, k)) * self.z_dim;
        &self.z[o..o + self.z_dim]
    }

    pub fn z_at_mut(&mut self, j: usize, n: usize, k: usize) -> &mut [f64] {
        let o = (j * triangle_len(self.n_steps) + triangle_index(self.n_steps, n, k)) * self.z_dim;
        &mut self.z[o..o + self.z_dim]
    }

    fn check(&self) -> Result<(), MetricsError> {
        if self.y.len() != self.n_paths * self.n_steps * self.y_dim
            || self.z.len() != self.n_paths * triangle_len(self.n_steps) * self.z_dim
        {
            return Err(MetricsError::Shape("value arrays do not match their declared sizes".into()));
        }
        Ok(())
    }

    fn check_same_shape(&self, other: &Self) -> Result<(), MetricsError> {
        self.check()?;
        other.check()?;
        if (self.n_paths, self.n_steps, self.y_dim, self.z_dim) != (other.n_paths, other.n_steps, other.y_dim, other.z_dim) {
            return Err(MetricsError::Shape(format!(
                "reference is {}x{} (y {}, z {}), approximation is {}x{} (y {}, z {})",
                self.n_paths, self.n_steps, self.y_dim, self.z_dim, other.n_paths, other.n_steps, other.y_dim, other.z_dim
            )));
        }
        if self.n_paths == 0 {
            return Err(MetricsError::Shape("no paths".into()));
        }
        Ok(())
    }
}

/// Aggregate and time-resolved errors of an approximation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ErrorReport {
    pub e_y: f64,
    pub e_z: f64,
    /// `None` when the reference mass is zero.
    pub er_y: Option<f64>,
    pub er_z: Option<f64>,
    /// `(1/M) sum_j |Y_n - Yhat_n|^2` for each `n`.
    pub mse_y_curve: Vec<f64>,
    /// Same for `Z` over `(n, k)`, `k >= n`, in [`triangle_index`] order.
    pub mse_z_surface: Vec<f64>,
    pub loss_curves: Vec<Vec<f64>>,
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

fn sq_norm(a: &[f64]) -> f64 {
    a.iter().map(|x| x * x).sum()
}

/// Per-time MSE curve for `Y` and triangular MSE surface for `Z`.
pub fn mse_curves(reference: &SolutionValues, approx: &SolutionValues) -> Result<(Vec<f64>, Vec<f64>), MetricsError> {
    reference.check_same_shape(approx)?;
    let (m, n_steps) = (reference.n_paths, reference.n_steps);
    let mut curve = vec![0.0; n_steps];
    let mut surface = vec![0.0; triangle_len(n_steps)];
    for j in 0..m {
        for (n, c) in curve.iter_mut().enumerate() {
            *c += sq_dist(reference.y_at(j, n), approx.y_at(j, n));
        }
        let row = j * triangle_len(n_steps) * reference.z_dim;
        let len = triangle_len(n_steps) * reference.z_dim;
        let (r, a) = (&reference.z[row..row + len], &approx.z[row..row + len]);
        for (p, s) in surface.iter_mut().enumerate() {
            let o = p * reference.z_dim;
            *s += sq_dist(&r[o..o + reference.z_dim], &a[o..o + reference.z_dim]);
        }
    }
    curve.iter_mut().chain(surface.iter_mut()).for_each(|v| *v /= m as f64);
    Ok((curve, surface))
}

/// Empirical absolute and relative L² errors.
pub fn l2_errors(reference: &SolutionValues, approx: &SolutionValues) -> Result<ErrorReport, MetricsError> {
    let (curve, surface) = mse_curves(reference, approx)?;
    let m = reference.n_paths as f64;
    let e_y: f64 = curve.iter().sum();
    let e_z: f64 = surface.iter().sum();
    let mass_y = sq_norm(&reference.y) / m;
    let mass_z = sq_norm(&reference.z) / m;
    let relative = |e: f64, mass: f64| (mass > 0.0).then(|| e / mass);
    Ok(ErrorReport {
        e_y,
        e_z,
        er_y: relative(e_y, mass_y),
        er_z: relative(e_z, mass_z),
        mse_y_curve: curve,
        mse_z_surface: surface,
        loss_curves: Vec::new(),
    })
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map_or_else(|| "undefined".to_string(), |x| format!("{x:.16e}"))
}

impl ErrorReport {
    /// `metric,value` rows for the four scalars.
    pub fn write_metrics_csv<W: Write>(&self, mut w: W) -> io::Result<()> {
        writeln!(w, "metric,value")?;
        writeln!(w, "e_y,{:.16e}", self.e_y)?;
        writeln!(w, "er_y,{}", fmt_opt(self.er_y))?;
        writeln!(w, "e_z,{:.16e}", self.e_z)?;
        writeln!(w, "er_z,{}", fmt_opt(self.er_z))
    }

    /// `n,t,mse` rows; `times[n] = t_n`.
    pub fn write_mse_y_csv<W: Write>(&self, times: &[f64], mut w: W) -> io::Result<()> {
        writeln!(w, "n,t,mse")?;
        for (n, v) in self.mse_y_curve.iter().enumerate() {
            writeln!(w, "{n},{:.16e},{v:.16e}", times[n])?;
        }
        Ok(())
    }

    /// `n,k,t_n,t_k,mse` rows over `k >= n`.
    pub fn write_mse_z_csv<W: Write>(&self, times: &[f64], mut w: W) -> io::Result<()> {
        writeln!(w, "n,k,t_n,t_k,mse")?;
        let n_steps = self.mse_y_curve.len();
        for n in 0..n_steps {
            for k in n..n_steps {
                let v = self.mse_z_surface[triangle_index(n_steps, n, k)];
                writeln!(w, "{n},{k},{:.16e},{:.16e},{v:.16e}", times[n], times[k])?;
            }
        }
        Ok(())
    }
}

/// `epoch,loss` rows for one time step.
pub fn write_loss_csv<W: Write>(losses: &[f64], mut w: W) -> io::Result<()> {
    writeln!(w, "epoch,loss")?;
    for (e, l) in losses.iter().enumerate() {
        writeln!(w, "{e},{l:.16e}")?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random(m: usize, n: usize, q: usize, seed: u64) -> SolutionValues {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut v = SolutionValues::zeros(m, n, q, q);
        v.y.iter_mut().chain(v.z.iter_mut()).for_each(|x| *x = rng.gen_range(-2.0..2.0));
        v
    }

    #[test]
    fn triangle_indexing_is_dense_and_ordered() {
        for n_steps in 1..8 {
            let mut expect = 0;
            for n in 0..n_steps {
                for k in n..n_steps {
                    assert_eq!(triangle_index(n_steps, n, k), expect);
                    expect += 1;
                }
            }
            assert_eq!(expect, triangle_len(n_steps));
        }
    }

    #[test]
    fn identical_inputs_give_zero() {
        let r = random(5, 4, 1, 1);
        let rep = l2_errors(&r, &r).unwrap();
        assert_eq!((rep.e_y, rep.e_z, rep.er_y, rep.er_z), (0.0, 0.0, Some(0.0), Some(0.0)));
        assert!(rep.mse_y_curve.iter().chain(&rep.mse_z_surface).all(|&v| v == 0.0));
    }

    #[test]
    fn zero_reference_flags_relative_error() {
        let r = SolutionValues::zeros(1, 2, 1, 1);
        let mut a = r.clone();
        a.y.fill(1.0);
        let rep = l2_errors(&r, &a).unwrap();
        assert_eq!(rep.e_y, 2.0);
        assert_eq!(rep.er_y, None);
        let mut buf = Vec::new();
        rep.write_metrics_csv(&mut buf).unwrap();
        assert!(String::from_utf8(buf).unwrap().contains("er_y,undefined"));
    }

    #[test]
    fn constant_offset_gives_flat_curve() {
        let r = random(7, 5, 1, 2);
        let mut a = r.clone();
        a.y.iter_mut().for_each(|v| *v += 0.3);
        let (curve, surface) = mse_curves(&r, &a).unwrap();
        assert!(curve.iter().all(|&c| (c - 0.09).abs() < 1e-15));
        assert!(surface.iter().all(|&s| s == 0.0));
    }

    #[test]
    fn shape_mismatch_is_rejected() {
        assert!(l2_errors(&random(3, 4, 1, 0), &random(3, 5, 1, 0)).is_err());
        let mut bad = random(3, 4, 1, 0);
        bad.z.pop();
        assert!(l2_errors(&bad, &bad).is_err());
    }

    /// Nested-loop transcription of the metric definitions on plain
    /// `[j][n][k]` arrays.
    pub(crate) fn naive(reference: &SolutionValues, approx: &SolutionValues) -> [f64; 4] {
        let (m, n_steps) = (reference.n_paths, reference.n_steps);
        let mut ry = vec![vec![0.0; n_steps]; m];
        let mut ay = ry.clone();
        let mut rz = vec![vec![vec![0.0; n_steps]; n_steps]; m];
        let mut az = rz.clone();
        let mut idx = 0;
        for j in 0..m {
            for n in 0..n_steps {
                ry[j][n] = reference.y[idx];
                ay[j][n] = approx.y[idx];
                idx += 1;
            }
        }
        idx = 0;
        for j in 0..m {
            for n in 0..n_steps {
                for k in n..n_steps {
                    rz[j][n][k] = reference.z[idx];
                    az[j][n][k] = approx.z[idx];
                    idx += 1;
                }
            }
        }
        let (mut ey, mut my, mut ez, mut mz) = (0.0, 0.0, 0.0, 0.0);
        for j in 0..m {
            for n in 0..n_steps {
                ey += (ry[j][n] - ay[j][n]).powi(2);
                my += ry[j][n].powi(2);
                for k in n..n_steps {
                    ez += (rz[j][n][k] - az[j][n][k]).powi(2);
                    mz += rz[j][n][k].powi(2);
                }
            }
        }
        let mf = m as f64;
        [ey / mf, ez / mf, (ey / mf) / (my / mf), (ez / mf) / (mz / mf)]
    }

    fn rel(a: f64, b: f64) -> f64 {
        (a - b).abs() / b.abs().max(f64::MIN_POSITIVE)
    }

    #[test]
    fn agrees_with_naive_loops() {
        for seed in 0..5 {
            let r = random(10, 6, 1, seed);
            let a = random(10, 6, 1, seed + 100);
            let rep = l2_errors(&r, &a).unwrap();
            let [ey, ez, ery, erz] = naive(&r, &a);
            assert!(rel(rep.e_y, ey) < 1e-12 && rel(rep.e_z, ez) < 1e-12);
            assert!(rel(rep.er_y.unwrap(), ery) < 1e-12 && rel(rep.er_z.unwrap(), erz) < 1e-12);
        }
    }

    #[test]
    fn csv_writers_emit_expected_rows() {
        let r = random(2, 3, 1, 3);
        let rep = l2_errors(&r, &random(2, 3, 1, 4)).unwrap();
        let times = [0.0, 1.0 / 3.0, 2.0 / 3.0];
        let mut y = Vec::new();
        rep.write_mse_y_csv(&times, &mut y).unwrap();
        let mut z = Vec::new();
        rep.write_mse_z_csv(&times, &mut z).unwrap();
        let (y, z) = (String::from_utf8(y).unwrap(), String::from_utf8(z).unwrap());
        assert_eq!(y.lines().count(), 4);
        assert_eq!(z.lines().count(), 7);
        assert!(z.lines().nth(2).unwrap().starts_with("0,1,"));
        let parsed: f64 = y.lines().nth(1).unwrap().split(',').nth(2).unwrap().parse().unwrap();
        assert_eq!(parsed, rep.mse_y_curve[0]);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]

        #[test]
        fn aggregation_identities(seed in any::<u64>(), m in 1usize..12, n in 1usize..9) {
            let r = random(m, n, 1, seed);
            let a = random(m, n, 1, seed ^ 0xabc);
            let rep = l2_errors(&r, &a).unwrap();
            let sy: f64 = rep.mse_y_curve.iter().sum();
            let sz: f64 = rep.mse_z_surface.iter().sum();
            prop_assert!(rel(sy, rep.e_y) < 1e-12);
            prop_assert!(rel(sz, rep.e_z) < 1e-12);
            let dt = 1.0 / n as f64;
            let weighted: f64 = rep.mse_z_surface.iter().map(|v| v * dt * dt).sum();
            prop_assert!(rel(weighted, rep.e_z * dt * dt) < 1e-12);
            let [ey, ez, ery, erz] = naive(&r, &a);
            prop_assert!(rel(rep.e_y, ey) < 1e-12 && rel(rep.e_z, ez) < 1e-12);
            prop_assert!(rel(rep.er_y.unwrap(), ery) < 1e-12 && rel(rep.er_z.unwrap(), erz) < 1e-12);
        }

        #[test]
        fn scale_covariance(seed in any::<u64>(), c in 0.1f64..10.0) {
            let r = random(6, 5, 1, seed);
            let a = random(6, 5, 1, seed.wrapping_add(1));
            let scale = |v: &SolutionValues| {
                let mut s = v.clone();
                s.y.iter_mut().chain(s.z.iter_mut()).for_each(|x| *x *= c);
                s
            };
            let base = l2_errors(&r, &a).unwrap();
            let scaled = l2_errors(&scale(&r), &scale(&a)).unwrap();
            prop_assert!(rel(scaled.e_y, c * c * base.e_y) < 1e-12);
            prop_assert!(rel(scaled.e_z, c * c * base.e_z) < 1e-12);
            prop_assert!(rel(scaled.er_y.unwrap(), base.er_y.unwrap()) < 1e-12);
            prop_assert!(rel(scaled.er_z.unwrap(), base.er_z.unwrap()) < 1e-12);
        }
    }
}
