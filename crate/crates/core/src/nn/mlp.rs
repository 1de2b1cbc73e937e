use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Uniform};
use serde::{Deserialize, Serialize};

use super::activation::tanh_in_place;
use super::kernels;
use super::NnError;

/// A batch of samples stored feature-major: `data[feature * len + sample]`.
///
/// Feature-major storage turns every dense layer into a sequence of `axpy`s
/// over contiguous sample rows, which is what makes full-batch training on
/// tens of thousands of paths affordable.
#[derive(Debug, Clone, PartialEq)]
pub struct Batch {
    dim: usize,
    len: usize,
    data: Vec<f64>,
}

impl Batch {
    pub fn zeros(dim: usize, len: usize) -> Self {
        Self { dim, len, data: vec![0.0; dim * len] }
    }

    /// Builds a batch from per-sample rows.
    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self, NnError> {
        let dim = rows.first().map_or(0, Vec::len);
        let len = rows.len();
        let mut out = Self::zeros(dim, len);
        for (r, row) in rows.iter().enumerate() {
            if row.len() != dim {
                return Err(NnError::Shape(format!(
                    "row {r} has {} entries, expected {dim}",
                    row.len()
                )));
            }
            for (f, &v) in row.iter().enumerate() {
                out.data[f * len + r] = v;
            }
        }
        Ok(out)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    #[inline]
    pub fn get(&self, sample: usize, feature: usize) -> f64 {
        self.data[feature * self.len + sample]
    }

    #[inline]
    pub fn set(&mut self, sample: usize, feature: usize, value: f64) {
        self.data[feature * self.len + sample] = value;
    }

    /// All samples of one feature.
    pub fn feature(&self, feature: usize) -> &[f64] {
        &self.data[feature * self.len..(feature + 1) * self.len]
    }

    pub fn feature_mut(&mut self, feature: usize) -> &mut [f64] {
        &mut self.data[feature * self.len..(feature + 1) * self.len]
    }

    pub fn row(&self, sample: usize) -> Vec<f64> {
        (0..self.dim).map(|f| self.get(sample, f)).collect()
    }

    /// Reshapes in place, reusing the allocation. Contents are unspecified.
    pub(crate) fn reshape(&mut self, dim: usize, len: usize) {
        self.dim = dim;
        self.len = len;
        self.data.resize(dim * len, 0.0);
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }
}

/// One affine layer; weights are row-major `(out_dim, in_dim)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dense {
    pub in_dim: usize,
    pub out_dim: usize,
    pub weights: Vec<f64>,
    pub biases: Vec<f64>,
}

impl Dense {
    #[inline]
    pub fn weight(&self, out: usize, inp: usize) -> f64 {
        self.weights[out * self.in_dim + inp]
    }

    fn forward_into(&self, input: &Batch, out: &mut Batch) {
        out.reshape(self.out_dim, input.len);
        kernels::affine(
            &self.weights,
            Some(&self.biases),
            self.out_dim,
            self.in_dim,
            &input.data,
            &mut out.data,
            input.len,
        );
    }

    fn transposed_weights(&self) -> Vec<f64> {
        let mut t = vec![0.0; self.weights.len()];
        for o in 0..self.out_dim {
            for i in 0..self.in_dim {
                t[i * self.out_dim + o] = self.weights[o * self.in_dim + i];
            }
        }
        t
    }
}

/// Dense feed-forward network: `tanh` on every hidden layer, affine output.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Mlp {
    layer_dims: Vec<usize>,
    layers: Vec<Dense>,
}

/// Per-parameter gradient buffers with the same layout as [`Mlp`].
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub layers: Vec<LayerGrad>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LayerGrad {
    pub weights: Vec<f64>,
    pub biases: Vec<f64>,
}

/// Activations kept from the last forward pass, reused across calls.
#[derive(Debug, Clone, Default)]
pub struct ForwardCache {
    // activations[0] is the input, activations[L] the network output.
    activations: Vec<Batch>,
    delta: Batch,
    delta_prev: Batch,
}

impl Default for Batch {
    fn default() -> Self {
        Self::zeros(0, 0)
    }
}

impl ForwardCache {
    pub fn output(&self) -> &Batch {
        self.activations.last().expect("forward has not been run")
    }

    /// Input slot to fill before calling [`Mlp::forward_cached`].
    pub fn input_mut(&mut self, dim: usize, len: usize) -> &mut Batch {
        if self.activations.is_empty() {
            self.activations.push(Batch::default());
        }
        let b = &mut self.activations[0];
        b.reshape(dim, len);
        b
    }
}

impl Mlp {
    /// Glorot-uniform weights, zero biases; deterministic in `seed`.
    pub fn init(layer_dims: &[usize], seed: u64) -> Result<Self, NnError> {
        if layer_dims.len() < 2 {
            return Err(NnError::Config(
                "need at least an input and an output dimension".into(),
            ));
        }
        if layer_dims.contains(&0) {
            return Err(NnError::Config("layer dimensions must be positive".into()));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let layers = layer_dims
            .windows(2)
            .map(|w| {
                let (fan_in, fan_out) = (w[0], w[1]);
                let a = (6.0 / (fan_in + fan_out) as f64).sqrt();
                let dist = Uniform::new_inclusive(-a, a);
                Dense {
                    in_dim: fan_in,
                    out_dim: fan_out,
                    weights: (0..fan_in * fan_out).map(|_| dist.sample(&mut rng)).collect(),
                    biases: vec![0.0; fan_out],
                }
            })
            .collect();
        Ok(Self { layer_dims: layer_dims.to_vec(), layers })
    }

    /// Builds a network from explicit layers, checking that shapes chain.
    pub fn from_layers(layers: Vec<Dense>) -> Result<Self, NnError> {
        if layers.is_empty() {
            return Err(NnError::Config("network needs at least one layer".into()));
        }
        let mut layer_dims = vec![layers[0].in_dim];
        for (l, layer) in layers.iter().enumerate() {
            if layer.in_dim != *layer_dims.last().unwrap()
                || layer.weights.len() != layer.in_dim * layer.out_dim
                || layer.biases.len() != layer.out_dim
                || layer.out_dim == 0
            {
                return Err(NnError::Shape(format!("layer {l} is inconsistent")));
            }
            layer_dims.push(layer.out_dim);
        }
        Ok(Self { layer_dims, layers })
    }

    /// Re-checks shape invariants; use after deserializing.
    pub fn validate(&self) -> Result<(), NnError> {
        let rebuilt = Self::from_layers(self.layers.clone())?;
        if rebuilt.layer_dims != self.layer_dims {
            return Err(NnError::Shape("layer_dims disagree with layers".into()));
        }
        if let Some(l) = self.layers.iter().position(|d| {
            d.weights.iter().chain(&d.biases).any(|v| !v.is_finite())
        }) {
            return Err(NnError::NonFinite { layer: l });
        }
        Ok(())
    }

    pub fn layer_dims(&self) -> &[usize] {
        &self.layer_dims
    }

    pub fn layers(&self) -> &[Dense] {
        &self.layers
    }

    pub fn layers_mut(&mut self) -> &mut [Dense] {
        &mut self.layers
    }

    pub fn input_dim(&self) -> usize {
        self.layer_dims[0]
    }

    pub fn output_dim(&self) -> usize {
        *self.layer_dims.last().unwrap()
    }

    pub fn n_params(&self) -> usize {
        self.layers.iter().map(|l| l.weights.len() + l.biases.len()).sum()
    }

    /// Shape- and value-checked forward pass.
    pub fn forward(&self, batch: &Batch) -> Result<Batch, NnError> {
        if batch.dim != self.input_dim() {
            return Err(NnError::Shape(format!(
                "batch has {} features, network expects {}",
                batch.dim,
                self.input_dim()
            )));
        }
        if batch.data.iter().any(|v| !v.is_finite()) {
            return Err(NnError::Input("non-finite value in batch".into()));
        }
        let mut cache = ForwardCache::default();
        *cache.input_mut(batch.dim, batch.len) = batch.clone();
        self.forward_cached(&mut cache);
        Ok(cache.activations.pop().unwrap())
    }

    /// Forward pass on the input already placed in `cache`; keeps every
    /// activation for a subsequent [`Mlp::backward_cached`].
    pub fn forward_cached(&self, cache: &mut ForwardCache) {
        let n_layers = self.layers.len();
        assert_eq!(cache.activations[0].dim, self.input_dim(), "input dim");
        cache.activations.resize_with(n_layers + 1, Batch::default);
        for (l, layer) in self.layers.iter().enumerate() {
            let (done, rest) = cache.activations.split_at_mut(l + 1);
            let out = &mut rest[0];
            layer.forward_into(&done[l], out);
            if l + 1 < n_layers {
                tanh_in_place(&mut out.data);
            }
        }
    }

    /// Shape-checked reverse pass: gradient of a scalar loss with respect to
    /// every parameter, given `loss_grad = dloss/doutput` at `batch`.
    pub fn backward(&self, batch: &Batch, loss_grad: &Batch) -> Result<Gradients, NnError> {
        if loss_grad.dim != self.output_dim() || loss_grad.len != batch.len {
            return Err(NnError::Shape(format!(
                "loss gradient is {}x{}, expected {}x{}",
                loss_grad.len,
                loss_grad.dim,
                batch.len,
                self.output_dim()
            )));
        }
        if batch.dim != self.input_dim() {
            return Err(NnError::Shape("batch dim does not match network".into()));
        }
        let mut cache = ForwardCache::default();
        *cache.input_mut(batch.dim, batch.len) = batch.clone();
        self.forward_cached(&mut cache);
        let mut grads = Gradients::zeros_like(self);
        self.backward_cached(&mut cache, loss_grad, &mut grads);
        Ok(grads)
    }

    /// Accumulates parameter gradients into `grads` using activations from
    /// the preceding [`Mlp::forward_cached`] on the same cache.
    pub fn backward_cached(&self, cache: &mut ForwardCache, out_grad: &Batch, grads: &mut Gradients) {
        let n_layers = self.layers.len();
        let len = out_grad.len;
        assert_eq!(cache.activations.len(), n_layers + 1);
        assert_eq!(cache.activations[0].len, len);
        assert_eq!(out_grad.dim, self.output_dim());

        let ForwardCache { activations, delta, delta_prev } = cache;
        delta.reshape(out_grad.dim, len);
        delta.data.copy_from_slice(&out_grad.data);

        for l in (0..n_layers).rev() {
            let layer = &self.layers[l];
            let input = &activations[l];
            let g = &mut grads.layers[l];
            kernels::accumulate_outer(
                &delta.data,
                &input.data,
                layer.out_dim,
                layer.in_dim,
                len,
                &mut g.weights,
                &mut g.biases,
            );
            if l == 0 {
                break;
            }
            delta_prev.reshape(layer.in_dim, len);
            let wt = layer.transposed_weights();
            kernels::affine(&wt, None, layer.in_dim, layer.out_dim, &delta.data, &mut delta_prev.data, len);
            // input to this layer is the tanh output of the previous one
            for (acc, &a) in delta_prev.data.iter_mut().zip(&input.data) {
                *acc *= 1.0 - a * a;
            }
            std::mem::swap(delta, delta_prev);
        }
    }
}

impl Gradients {
    pub fn zeros_like(net: &Mlp) -> Self {
        Self {
            layers: net
                .layers
                .iter()
                .map(|l| LayerGrad {
                    weights: vec![0.0; l.weights.len()],
                    biases: vec![0.0; l.biases.len()],
                })
                .collect(),
        }
    }

    pub fn fill_zero(&mut self) {
        for l in &mut self.layers {
            l.weights.fill(0.0);
            l.biases.fill(0.0);
        }
    }

    pub fn add_assign(&mut self, other: &Gradients) {
        for (a, b) in self.layers.iter_mut().zip(&other.layers) {
            for (x, y) in a.weights.iter_mut().zip(&b.weights) {
                *x += y;
            }
            for (x, y) in a.biases.iter_mut().zip(&b.biases) {
                *x += y;
            }
        }
    }

    /// Index of the first layer holding a non-finite entry.
    pub fn first_non_finite_layer(&self) -> Option<usize> {
        self.layers
            .iter()
            .position(|l| l.weights.iter().chain(&l.biases).any(|v| !v.is_finite()))
    }

    pub fn iter(&self) -> impl Iterator<Item = &f64> {
        self.layers.iter().flat_map(|l| l.weights.iter().chain(&l.biases))
    }
}
