//! Dense feed-forward network engine.
//!
//! A small, deterministic, double-precision MLP with hand-written
//! backpropagation. Hidden layers use ReLU and the output layer is a single
//! identity unit. Weights are stored row-major with shape `(out_dim, in_dim)`.

mod gradcheck;
mod loss;
mod optim;

pub use gradcheck::grad_check;
pub use loss::mae_loss;
pub use optim::{OptimizerConfig, OptimizerKind, OptimizerState};

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::Rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Relu,
    Identity,
}

impl Activation {
    #[inline]
    fn apply(self, z: f64) -> f64 {
        match self {
            Activation::Relu => {
                if z > 0.0 {
                    z
                } else {
                    0.0
                }
            }
            Activation::Identity => z,
        }
    }

    #[inline]
    fn derivative(self, z: f64) -> f64 {
        match self {
            Activation::Relu => {
                if z > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Identity => 1.0,
        }
    }
}

/// A dense affine layer followed by an element-wise activation.
#[derive(Debug, Clone, PartialEq)]
pub struct DenseLayer {
    in_dim: usize,
    out_dim: usize,
    activation: Activation,
    /// Row-major, shape (out_dim, in_dim).
    weights: Vec<f64>,
    bias: Vec<f64>,
}

impl DenseLayer {
    /// Builds a layer from explicit parameters.
    pub fn from_parts(
        in_dim: usize,
        out_dim: usize,
        activation: Activation,
        weights: Vec<f64>,
        bias: Vec<f64>,
    ) -> Result<Self> {
        if in_dim == 0 || out_dim == 0 {
            return Err(Error::InvalidArchitecture(format!(
                "layer dims must be positive, got {in_dim}x{out_dim}"
            )));
        }
        if weights.len() != in_dim * out_dim {
            return Err(Error::Shape(format!(
                "weights have {} entries, expected {}x{}",
                weights.len(),
                out_dim,
                in_dim
            )));
        }
        if bias.len() != out_dim {
            return Err(Error::Shape(format!(
                "bias has {} entries, expected {out_dim}",
                bias.len()
            )));
        }
        if weights.iter().chain(&bias).any(|v| !v.is_finite()) {
            return Err(Error::Numeric("layer contains non-finite parameters".into()));
        }
        Ok(Self {
            in_dim,
            out_dim,
            activation,
            weights,
            bias,
        })
    }

    /// Uniform fan-in scaled init, `U(-sqrt(6/in), +sqrt(6/in))`, zero bias.
    fn init(in_dim: usize, out_dim: usize, activation: Activation, rng: &mut Rng) -> Self {
        let limit = (6.0 / in_dim as f64).sqrt();
        let weights = (0..in_dim * out_dim)
            .map(|_| rng.random_range(-limit..limit))
            .collect();
        Self {
            in_dim,
            out_dim,
            activation,
            weights,
            bias: vec![0.0; out_dim],
        }
    }

    pub fn in_dim(&self) -> usize {
        self.in_dim
    }

    pub fn out_dim(&self) -> usize {
        self.out_dim
    }

    pub fn activation(&self) -> Activation {
        self.activation
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn bias(&self) -> &[f64] {
        &self.bias
    }

    pub fn weights_mut(&mut self) -> &mut [f64] {
        &mut self.weights
    }

    pub fn bias_mut(&mut self) -> &mut [f64] {
        &mut self.bias
    }

    pub fn param_count(&self) -> usize {
        self.weights.len() + self.bias.len()
    }

    fn affine(&self, x: &[f64], z: &mut Vec<f64>) {
        z.clear();
        for (row, b) in self.weights.chunks_exact(self.in_dim).zip(&self.bias) {
            let mut acc = *b;
            for (w, xi) in row.iter().zip(x) {
                acc += w * xi;
            }
            z.push(acc);
        }
    }
}

/// Values recorded by [`Mlp::forward`] and consumed by [`Mlp::backward`].
#[derive(Debug, Clone)]
pub struct ForwardCache {
    input: Vec<f64>,
    pre: Vec<Vec<f64>>,
    post: Vec<Vec<f64>>,
    dims: Vec<usize>,
    generation: u64,
}

impl ForwardCache {
    pub fn input(&self) -> &[f64] {
        &self.input
    }

    /// Pre-activation values of every layer.
    pub fn pre_activations(&self) -> &[Vec<f64>] {
        &self.pre
    }

    /// Post-activation values of every layer; the last entry holds the output.
    pub fn activations(&self) -> &[Vec<f64>] {
        &self.post
    }

    /// Sign pattern of the hidden ReLU units.
    pub(crate) fn relu_mask(&self) -> Vec<bool> {
        self.pre[..self.pre.len() - 1]
            .iter()
            .flatten()
            .map(|&z| z > 0.0)
            .collect()
    }
}

/// Per-layer parameter gradients, shape-congruent with an [`Mlp`].
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    layers: Vec<LayerGradients>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LayerGradients {
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
}

impl Gradients {
    pub fn zeros_like(mlp: &Mlp) -> Self {
        Self {
            layers: mlp
                .layers
                .iter()
                .map(|l| LayerGradients {
                    weights: vec![0.0; l.weights.len()],
                    bias: vec![0.0; l.bias.len()],
                })
                .collect(),
        }
    }

    pub fn layers(&self) -> &[LayerGradients] {
        &self.layers
    }

    pub fn layers_mut(&mut self) -> &mut [LayerGradients] {
        &mut self.layers
    }

    pub fn is_congruent(&self, mlp: &Mlp) -> bool {
        self.layers.len() == mlp.layers.len()
            && self.layers.iter().zip(&mlp.layers).all(|(g, l)| {
                g.weights.len() == l.weights.len() && g.bias.len() == l.bias.len()
            })
    }

    fn same_shape(&self, other: &Gradients) -> bool {
        self.layers.len() == other.layers.len()
            && self.layers.iter().zip(&other.layers).all(|(a, b)| {
                a.weights.len() == b.weights.len() && a.bias.len() == b.bias.len()
            })
    }

    /// `self += scale * other`.
    pub fn add_scaled(&mut self, other: &Gradients, scale: f64) -> Result<()> {
        if !self.same_shape(other) {
            return Err(Error::Shape("gradient shapes differ".into()));
        }
        for (a, b) in self.layers.iter_mut().zip(&other.layers) {
            for (x, y) in a.weights.iter_mut().zip(&b.weights) {
                *x += scale * y;
            }
            for (x, y) in a.bias.iter_mut().zip(&b.bias) {
                *x += scale * y;
            }
        }
        Ok(())
    }

    pub fn scale(&mut self, factor: f64) {
        for l in &mut self.layers {
            l.weights.iter_mut().for_each(|v| *v *= factor);
            l.bias.iter_mut().for_each(|v| *v *= factor);
        }
    }

    /// Flattened view in the same order as [`Mlp::parameters`].
    pub fn flatten(&self) -> Vec<f64> {
        self.layers
            .iter()
            .flat_map(|l| l.weights.iter().chain(&l.bias).copied())
            .collect()
    }

    pub fn is_finite(&self) -> bool {
        self.layers
            .iter()
            .all(|l| l.weights.iter().chain(&l.bias).all(|v| v.is_finite()))
    }
}

/// Dense multilayer perceptron ending in one identity unit.
#[derive(Debug, Clone)]
pub struct Mlp {
    layers: Vec<DenseLayer>,
    /// Bumped on every parameter mutation so stale caches can be detected.
    generation: u64,
}

impl Mlp {
    /// Builds a ReLU network with the given layer widths (`init_mlp`).
    pub fn new(layer_dims: &[usize], seed: u64) -> Result<Self> {
        Self::with_hidden_activation(layer_dims, Activation::Relu, seed)
    }

    /// Same as [`Mlp::new`] with a custom hidden activation. The output layer
    /// is always identity.
    pub fn with_hidden_activation(
        layer_dims: &[usize],
        hidden: Activation,
        seed: u64,
    ) -> Result<Self> {
        validate_dims(layer_dims)?;
        let mut rng = <Rng as rand::SeedableRng>::seed_from_u64(seed);
        let n = layer_dims.len() - 1;
        let layers = layer_dims
            .windows(2)
            .enumerate()
            .map(|(i, w)| {
                let act = if i + 1 == n { Activation::Identity } else { hidden };
                DenseLayer::init(w[0], w[1], act, &mut rng)
            })
            .collect();
        Ok(Self {
            layers,
            generation: 0,
        })
    }

    pub fn from_layers(layers: Vec<DenseLayer>) -> Result<Self> {
        if layers.is_empty() {
            return Err(Error::InvalidArchitecture("network has no layers".into()));
        }
        for (i, pair) in layers.windows(2).enumerate() {
            if pair[0].out_dim != pair[1].in_dim {
                return Err(Error::InvalidArchitecture(format!(
                    "layer {i} outputs {} values but layer {} expects {}",
                    pair[0].out_dim,
                    i + 1,
                    pair[1].in_dim
                )));
            }
        }
        let last = layers.last().expect("non-empty");
        if last.out_dim != 1 || last.activation != Activation::Identity {
            return Err(Error::InvalidArchitecture(
                "output layer must be a single identity unit".into(),
            ));
        }
        Ok(Self {
            layers,
            generation: 0,
        })
    }

    pub fn layers(&self) -> &[DenseLayer] {
        &self.layers
    }

    /// Mutable access to the layers. Invalidates outstanding forward caches.
    pub fn layers_mut(&mut self) -> &mut [DenseLayer] {
        self.generation += 1;
        &mut self.layers
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].in_dim
    }

    /// Layer widths `[d0, d1, ..., dL]`.
    pub fn dims(&self) -> Vec<usize> {
        std::iter::once(self.layers[0].in_dim)
            .chain(self.layers.iter().map(|l| l.out_dim))
            .collect()
    }

    pub fn param_count(&self) -> usize {
        self.layers.iter().map(DenseLayer::param_count).sum()
    }

    /// Multiply-accumulate operations for one forward pass.
    pub fn mac_count(&self) -> usize {
        self.layers.iter().map(|l| l.in_dim * l.out_dim).sum()
    }

    /// All parameters flattened layer by layer, weights before bias.
    pub fn parameters(&self) -> Vec<f64> {
        self.layers
            .iter()
            .flat_map(|l| l.weights.iter().chain(&l.bias).copied())
            .collect()
    }

    pub fn set_parameters(&mut self, values: &[f64]) -> Result<()> {
        if values.len() != self.param_count() {
            return Err(Error::Shape(format!(
                "expected {} parameters, got {}",
                self.param_count(),
                values.len()
            )));
        }
        let mut it = values.iter();
        for l in &mut self.layers {
            for w in l.weights.iter_mut().chain(l.bias.iter_mut()) {
                *w = *it.next().expect("length checked");
            }
        }
        self.generation += 1;
        Ok(())
    }

    /// Runs the network and records what [`Mlp::backward`] needs.
    pub fn forward(&self, x: &[f64]) -> Result<(f64, ForwardCache)> {
        self.check_input(x)?;
        let mut pre = Vec::with_capacity(self.layers.len());
        let mut post: Vec<Vec<f64>> = Vec::with_capacity(self.layers.len());
        for layer in &self.layers {
            let input = post.last().map_or(x, |v| v.as_slice());
            let mut z = Vec::with_capacity(layer.out_dim);
            layer.affine(input, &mut z);
            let a = z.iter().map(|&v| layer.activation.apply(v)).collect();
            pre.push(z);
            post.push(a);
        }
        let y = post.last().expect("non-empty")[0];
        let cache = ForwardCache {
            input: x.to_vec(),
            pre,
            post,
            dims: self.dims(),
            generation: self.generation,
        };
        Ok((y, cache))
    }

    /// Output only, without keeping a cache.
    pub fn predict(&self, x: &[f64]) -> Result<f64> {
        self.check_input(x)?;
        let mut a = x.to_vec();
        let mut z = Vec::new();
        for layer in &self.layers {
            layer.affine(&a, &mut z);
            a.clear();
            a.extend(z.iter().map(|&v| layer.activation.apply(v)));
        }
        Ok(a[0])
    }

    /// Gradients of `y * dy` with respect to every parameter and the input.
    pub fn backward(&self, cache: &ForwardCache, dy: f64) -> Result<(Gradients, Vec<f64>)> {
        if cache.dims != self.dims() {
            return Err(Error::Cache(format!(
                "cache built for dims {:?}, network has {:?}",
                cache.dims,
                self.dims()
            )));
        }
        if cache.generation != self.generation {
            return Err(Error::Cache(
                "network parameters changed since the forward pass".into(),
            ));
        }
        let mut grads = Gradients::zeros_like(self);
        let mut delta = vec![dy];
        for (idx, layer) in self.layers.iter().enumerate().rev() {
            // dL/dz for this layer
            for (d, &z) in delta.iter_mut().zip(&cache.pre[idx]) {
                *d *= layer.activation.derivative(z);
            }
            let input = if idx == 0 {
                &cache.input
            } else {
                &cache.post[idx - 1]
            };
            let g = &mut grads.layers[idx];
            for (o, &d) in delta.iter().enumerate() {
                g.bias[o] = d;
                let row = &mut g.weights[o * layer.in_dim..(o + 1) * layer.in_dim];
                for (gw, &xi) in row.iter_mut().zip(input) {
                    *gw = d * xi;
                }
            }
            let mut next = vec![0.0; layer.in_dim];
            for (row, &d) in layer.weights.chunks_exact(layer.in_dim).zip(&delta) {
                for (n, w) in next.iter_mut().zip(row) {
                    *n += w * d;
                }
            }
            delta = next;
        }
        Ok((grads, delta))
    }

    /// Applies `f(param, grad)` to every parameter in lockstep with `grads`.
    pub(crate) fn update_with(
        &mut self,
        grads: &Gradients,
        mut f: impl FnMut(usize, &mut f64, f64),
    ) -> Result<()> {
        if !grads.is_congruent(self) {
            return Err(Error::Shape("gradients do not match network shape".into()));
        }
        let mut k = 0;
        for (l, g) in self.layers.iter_mut().zip(&grads.layers) {
            for (p, &d) in l
                .weights
                .iter_mut()
                .zip(&g.weights)
                .chain(l.bias.iter_mut().zip(&g.bias))
            {
                f(k, p, d);
                k += 1;
            }
        }
        self.generation += 1;
        Ok(())
    }

    pub fn is_finite(&self) -> bool {
        self.layers
            .iter()
            .all(|l| l.weights.iter().chain(&l.bias).all(|v| v.is_finite()))
    }

    fn check_input(&self, x: &[f64]) -> Result<()> {
        if x.len() != self.input_dim() {
            return Err(Error::Shape(format!(
                "input has {} features, network expects {}",
                x.len(),
                self.input_dim()
            )));
        }
        Ok(())
    }
}

fn validate_dims(dims: &[usize]) -> Result<()> {
    if dims.len() < 2 {
        return Err(Error::InvalidArchitecture(format!(
            "need at least input and output widths, got {dims:?}"
        )));
    }
    if dims.contains(&0) {
        return Err(Error::InvalidArchitecture(format!(
            "layer widths must be positive, got {dims:?}"
        )));
    }
    if *dims.last().expect("len >= 2") != 1 {
        return Err(Error::InvalidArchitecture(format!(
            "output width must be 1, got {dims:?}"
        )));
    }
    Ok(())
}

/// Number of weights and biases in an MLP with the given widths.
pub fn param_count_for(dims: &[usize]) -> usize {
    dims.windows(2).map(|w| (w[0] + 1) * w[1]).sum()
}
