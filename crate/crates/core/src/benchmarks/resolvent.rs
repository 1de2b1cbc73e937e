use serde::{Deserialize, Serialize};

/// Convolution kernel `rho(x) = scale * exp(-rate * x)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ExpKernel {
    pub scale: f64,
    pub rate: f64,
}

impl ExpKernel {
    pub const UNIT: Self = Self { scale: 1.0, rate: 1.0 };

    pub fn eval(&self, x: f64) -> f64 {
        self.scale * (-self.rate * x).exp()
    }

    /// `n`-fold convolution power `scale^n x^{n-1} / (n-1)! exp(-rate x)`, `n >= 1`.
    pub fn convolution_power(&self, n: u32, x: f64) -> f64 {
        assert!(n >= 1, "convolution powers start at 1");
        let mut term = self.scale;
        for i in 1..n {
            term *= self.scale * x / i as f64;
        }
        term * (-self.rate * x).exp()
    }
}

/// Partial Neumann sum `sum_{n=1}^{n_terms} rho^{*n}(x)`.
///
/// For the unit kernel the full series is identically one.
pub fn resolvent_kernel(rho: &ExpKernel, x: f64, n_terms: u32) -> f64 {
    debug_assert!(x >= 0.0);
    let decay = (-rho.rate * x).exp();
    let mut term = rho.scale;
    let mut sum = 0.0;
    for n in 1..=n_terms {
        sum += term;
        term *= rho.scale * x / n as f64;
    }
    sum * decay
}
