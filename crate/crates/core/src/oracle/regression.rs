use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use super::OracleError;

/// Polynomial basis in the regressors, intercept included.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RegressionBasis {
    pub degree: u32,
    /// Mixed monomials up to total degree `degree`; otherwise pure powers only.
    pub interactions: bool,
}

impl Default for RegressionBasis {
    fn default() -> Self {
        Self { degree: 3, interactions: true }
    }
}

impl RegressionBasis {
    /// Exponent vectors over `n_vars` variables, constant term first.
    pub fn exponents(&self, n_vars: usize) -> Vec<Vec<u32>> {
        let mut out = vec![vec![0; n_vars]];
        if n_vars == 0 {
            return out;
        }
        if self.interactions {
            let mut current = vec![0u32; n_vars];
            for total in 1..=self.degree {
                compositions(total, 0, &mut current, &mut out);
            }
        } else {
            for v in 0..n_vars {
                for p in 1..=self.degree {
                    let mut e = vec![0; n_vars];
                    e[v] = p;
                    out.push(e);
                }
            }
        }
        out
    }

    pub fn size(&self, n_vars: usize) -> usize {
        self.exponents(n_vars).len()
    }
}

fn compositions(remaining: u32, var: usize, current: &mut Vec<u32>, out: &mut Vec<Vec<u32>>) {
    if var + 1 == current.len() {
        current[var] = remaining;
        out.push(current.clone());
        current[var] = 0;
        return;
    }
    for p in (0..=remaining).rev() {
        current[var] = p;
        compositions(remaining - p, var + 1, current, out);
    }
    current[var] = 0;
}

/// Fitted polynomial: coefficients on standardized regressors.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Fit {
    /// Indices of regressors with non-zero spread; the rest are constant on
    /// the fitting batch and dropped.
    pub active: Vec<usize>,
    pub center: Vec<f64>,
    pub scale: Vec<f64>,
    pub exponents: Vec<Vec<u32>>,
    pub coefficients: Vec<f64>,
}

impl Fit {
    pub fn predict(&self, row: &[f64]) -> f64 {
        let z: Vec<f64> = self.active.iter().enumerate().map(|(i, &v)| (row[v] - self.center[i]) / self.scale[i]).collect();
        self.exponents
            .iter()
            .zip(&self.coefficients)
            .map(|(e, c)| c * e.iter().zip(&z).map(|(&p, &x)| x.powi(p as i32)).product::<f64>())
            .sum()
    }
}

/// Least-squares design on one batch of regressors, factored once and
/// reused for several targets.
#[derive(Debug, Clone)]
pub struct Design {
    n_rows: usize,
    n_cols: usize,
    active: Vec<usize>,
    center: Vec<f64>,
    scale: Vec<f64>,
    exponents: Vec<Vec<u32>>,
    /// Row-major `n_rows x n_cols` feature matrix.
    features: Vec<f64>,
    factor: nalgebra::Cholesky<f64, nalgebra::Dyn>,
    /// Whether the normal equations needed a ridge term.
    pub ridge: bool,
}

/// Smallest accepted pivot of the Cholesky factor relative to the largest.
const PIVOT_FLOOR: f64 = 1e-12;

impl Design {
    /// `regressors` is row-major `n_rows x n_vars`.
    pub fn new(regressors: &[f64], n_vars: usize, basis: &RegressionBasis) -> Result<Self, OracleError> {
        let n_rows = if n_vars == 0 { 0 } else { regressors.len() / n_vars };
        if n_vars == 0 || regressors.len() != n_rows * n_vars {
            return Err(OracleError::Shape(format!("{} regressor entries for {n_vars} variables", regressors.len())));
        }
        if regressors.iter().any(|v| !v.is_finite()) {
            return Err(OracleError::NonFinite("regressor"));
        }
        let mut active = Vec::new();
        let mut center = Vec::new();
        let mut scale = Vec::new();
        for v in 0..n_vars {
            let mean = (0..n_rows).map(|r| regressors[r * n_vars + v]).sum::<f64>() / n_rows as f64;
            let var = (0..n_rows).map(|r| (regressors[r * n_vars + v] - mean).powi(2)).sum::<f64>() / n_rows as f64;
            let sd = var.sqrt();
            if sd > 1e-12 * (1.0 + mean.abs()) {
                active.push(v);
                center.push(mean);
                scale.push(sd);
            }
        }
        let exponents = basis.exponents(active.len());
        let n_cols = exponents.len();
        if n_rows < basis.size(n_vars) {
            return Err(OracleError::InsufficientPaths { paths: n_rows, basis: basis.size(n_vars) });
        }

        let max_p = basis.degree as usize;
        let mut features = vec![0.0; n_rows * n_cols];
        let mut powers = vec![0.0; active.len() * (max_p + 1)];
        for r in 0..n_rows {
            for (i, &v) in active.iter().enumerate() {
                let z = (regressors[r * n_vars + v] - center[i]) / scale[i];
                let row = &mut powers[i * (max_p + 1)..(i + 1) * (max_p + 1)];
                row[0] = 1.0;
                for p in 1..=max_p {
                    row[p] = row[p - 1] * z;
                }
            }
            for (c, e) in exponents.iter().enumerate() {
                let mut m = 1.0;
                for (i, &p) in e.iter().enumerate() {
                    m *= powers[i * (max_p + 1) + p as usize];
                }
                features[r * n_cols + c] = m;
            }
        }

        let mut gram = DMatrix::<f64>::zeros(n_cols, n_cols);
        for r in 0..n_rows {
            let row = &features[r * n_cols..(r + 1) * n_cols];
            for a in 0..n_cols {
                let fa = row[a];
                for b in a..n_cols {
                    gram[(a, b)] += fa * row[b];
                }
            }
        }
        for a in 0..n_cols {
            for b in a..n_cols {
                gram[(a, b)] /= n_rows as f64;
                gram[(b, a)] = gram[(a, b)];
            }
        }
        let well_posed = nalgebra::Cholesky::new(gram.clone()).filter(|ch| {
            let d = ch.l_dirty().diagonal();
            let (lo, hi) = d.iter().fold((f64::INFINITY, 0.0f64), |(lo, hi), &x| (lo.min(x * x), hi.max(x * x)));
            lo > PIVOT_FLOOR * hi
        });
        let (factor, ridge) = match well_posed {
            Some(f) => (f, false),
            None => {
                let lambda = 1e-8 * gram.trace() / n_cols as f64;
                log::warn!("rank-deficient regression design ({n_rows} x {n_cols}); ridge {lambda:e} added");
                let shifted = &gram + DMatrix::<f64>::identity(n_cols, n_cols) * lambda;
                let f = nalgebra::Cholesky::new(shifted).ok_or(OracleError::Singular)?;
                (f, true)
            }
        };
        Ok(Self { n_rows, n_cols, active, center, scale, exponents, features, factor, ridge })
    }

    pub fn n_rows(&self) -> usize {
        self.n_rows
    }

    /// Coefficients of the least-squares projection of `target`.
    pub fn solve(&self, target: &[f64]) -> Result<Vec<f64>, OracleError> {
        if target.len() != self.n_rows {
            return Err(OracleError::Shape(format!("{} targets for {} rows", target.len(), self.n_rows)));
        }
        if target.iter().any(|v| !v.is_finite()) {
            return Err(OracleError::NonFinite("regression target"));
        }
        let mut rhs = DVector::<f64>::zeros(self.n_cols);
        for (r, &y) in target.iter().enumerate() {
            let row = &self.features[r * self.n_cols..(r + 1) * self.n_cols];
            for (acc, f) in rhs.iter_mut().zip(row) {
                *acc += f * y;
            }
        }
        rhs /= self.n_rows as f64;
        Ok(self.factor.solve(&rhs).iter().copied().collect())
    }

    /// In-sample fitted values for `coefficients`.
    pub fn fitted(&self, coefficients: &[f64]) -> Vec<f64> {
        (0..self.n_rows)
            .map(|r| self.features[r * self.n_cols..(r + 1) * self.n_cols].iter().zip(coefficients).map(|(f, c)| f * c).sum())
            .collect()
    }

    pub fn fit(&self, coefficients: Vec<f64>) -> Fit {
        Fit {
            active: self.active.clone(),
            center: self.center.clone(),
            scale: self.scale.clone(),
            exponents: self.exponents.clone(),
            coefficients,
        }
    }
}

/// Regression estimate of `E[target | regressors]` on the same rows.
pub fn conditional_expectation(targets: &[f64], regressors: &[f64], n_vars: usize, basis: &RegressionBasis) -> Result<Vec<f64>, OracleError> {
    if targets.len() * n_vars != regressors.len() {
        return Err(OracleError::Shape(format!("{} targets for {} regressor entries", targets.len(), regressors.len())));
    }
    let design = Design::new(regressors, n_vars, basis)?;
    let coefficients = design.solve(targets)?;
    Ok(design.fitted(&coefficients))
}
