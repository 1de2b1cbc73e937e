use serde::{Deserialize, Serialize};

use super::mlp::{Gradients, Mlp};
use super::NnError;

/// Adam hyperparameters. Only the learning rate comes from the solver
/// configuration; the rest are the usual defaults.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self { learning_rate: 1e-3, beta1: 0.9, beta2: 0.999, epsilon: 1e-8 }
    }
}

impl AdamConfig {
    pub fn with_learning_rate(learning_rate: f64) -> Self {
        Self { learning_rate, ..Self::default() }
    }
}

/// Moment buffers for one network.
#[derive(Debug, Clone)]
pub struct AdamState {
    pub config: AdamConfig,
    pub step_count: u64,
    first_moment: Gradients,
    second_moment: Gradients,
}

impl AdamState {
    pub fn new(net: &Mlp, config: AdamConfig) -> Self {
        Self {
            config,
            step_count: 0,
            first_moment: Gradients::zeros_like(net),
            second_moment: Gradients::zeros_like(net),
        }
    }

    pub fn first_moment(&self) -> &Gradients {
        &self.first_moment
    }

    pub fn second_moment(&self) -> &Gradients {
        &self.second_moment
    }

    /// One bias-corrected Adam update of `net` along `grads`.
    ///
    /// A non-finite gradient leaves both the network and the state untouched.
    pub fn step(&mut self, net: &mut Mlp, grads: &Gradients) -> Result<(), NnError> {
        if grads.layers.len() != net.layers().len() {
            return Err(NnError::Shape("gradient layout does not match network".into()));
        }
        for (l, (g, layer)) in grads.layers.iter().zip(net.layers()).enumerate() {
            if g.weights.len() != layer.weights.len() || g.biases.len() != layer.biases.len() {
                return Err(NnError::Shape(format!("gradient layer {l} has the wrong shape")));
            }
        }
        if let Some(layer) = grads.first_non_finite_layer() {
            return Err(NnError::NonFiniteGradient { layer });
        }

        let AdamConfig { learning_rate, beta1, beta2, epsilon } = self.config;
        self.step_count += 1;
        let t = self.step_count as i32;
        let bias1 = 1.0 - beta1.powi(t);
        let bias2 = 1.0 - beta2.powi(t);

        let coeffs = Coeffs { learning_rate, beta1, beta2, epsilon, bias1, bias2 };
        for (l, layer) in net.layers_mut().iter_mut().enumerate() {
            let g = &grads.layers[l];
            let m = &mut self.first_moment.layers[l];
            let v = &mut self.second_moment.layers[l];
            coeffs.apply(&mut layer.weights, &g.weights, &mut m.weights, &mut v.weights);
            coeffs.apply(&mut layer.biases, &g.biases, &mut m.biases, &mut v.biases);
        }
        Ok(())
    }
}

struct Coeffs {
    learning_rate: f64,
    beta1: f64,
    beta2: f64,
    epsilon: f64,
    bias1: f64,
    bias2: f64,
}

impl Coeffs {
    fn apply(&self, params: &mut [f64], grads: &[f64], m: &mut [f64], v: &mut [f64]) {
        for (((p, &g), m), v) in params.iter_mut().zip(grads).zip(m).zip(v) {
            *m = self.beta1 * *m + (1.0 - self.beta1) * g;
            *v = self.beta2 * *v + (1.0 - self.beta2) * g * g;
            let m_hat = *m / self.bias1;
            let v_hat = *v / self.bias2;
            *p -= self.learning_rate * m_hat / (v_hat.sqrt() + self.epsilon);
        }
    }
}
