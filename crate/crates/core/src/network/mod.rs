//! Dense multilayer perceptron with hand-written forward and backward passes.
//!
//! Layer `l` (1-based, `l = 1..=L`) maps `a⁽ˡ⁻¹⁾` to
//! `z⁽ˡ⁾ = a⁽ˡ⁻¹⁾ W⁽ˡ⁾ + b⁽ˡ⁾` and `a⁽ˡ⁾ = f⁽ˡ⁾(z⁽ˡ⁾)`, with `W⁽ˡ⁾` stored as an
//! `N(l-1) x N(l)` matrix so that `W[k][i]` connects input unit `k` to output
//! unit `i`. Hidden layers share one activation; the output layer has its own.
//!
//! The backward pass is organised around the matrices
//! `β⁽ˡ⁾[i][j] = ∂a_j⁽ᴸ⁾ / ∂a_i⁽ˡ⁾`, built from `β⁽ᴸ⁾ = I` downwards. `β⁽⁰⁾` is
//! the input–output Jacobian, and its Frobenius norm is the output sharpness.

mod backprop;
pub mod fdcheck;
mod io;
mod metrics;

use serde::{Deserialize, Serialize};

use crate::numkit::{Matrix, Rng};
use crate::{Error, Result};

pub use backprop::{
    backward, batch_gradients, delta_backward, jacobian, jacobian_with, sharpness,
    sharpness_with, Backward, BatchStats, Gradients, JacobianEndpoint, JacobianRecord,
};
pub use io::{load_model, read_model, save_model, sidecar_path, write_model, ModelMetadata, MODEL_MAGIC};
pub use metrics::{loss_and_accuracy, weight_norm, WeightNorm};

/// Nonlinearity applied after a layer's affine map.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Identity,
    Relu,
    Tanh,
    /// Normalized exponential over the whole layer; output layer only.
    Softmax,
}

impl Activation {
    pub fn name(self) -> &'static str {
        match self {
            Activation::Identity => "identity",
            Activation::Relu => "relu",
            Activation::Tanh => "tanh",
            Activation::Softmax => "softmax",
        }
    }

    pub fn tag(self) -> u8 {
        match self {
            Activation::Identity => 0,
            Activation::Relu => 1,
            Activation::Tanh => 2,
            Activation::Softmax => 3,
        }
    }

    pub fn from_tag(tag: u8) -> Option<Self> {
        Some(match tag {
            0 => Activation::Identity,
            1 => Activation::Relu,
            2 => Activation::Tanh,
            3 => Activation::Softmax,
            _ => return None,
        })
    }

    pub fn is_elementwise(self) -> bool {
        self != Activation::Softmax
    }

    pub(crate) fn apply(self, z: &[f64], out: &mut [f64]) {
        match self {
            Activation::Identity => out.copy_from_slice(z),
            Activation::Relu => {
                for (o, &v) in out.iter_mut().zip(z) {
                    *o = if v > 0.0 { v } else { 0.0 };
                }
            }
            Activation::Tanh => {
                for (o, &v) in out.iter_mut().zip(z) {
                    *o = v.tanh();
                }
            }
            Activation::Softmax => softmax_into(z, out),
        }
    }

    /// `f'(z)` for elementwise activations, given `z` and `a = f(z)`.
    ///
    /// ReLU uses `f'(0) = 0`. Must not be called for softmax.
    #[inline]
    pub(crate) fn derivative(self, z: f64, a: f64) -> f64 {
        match self {
            Activation::Identity => 1.0,
            Activation::Relu => {
                if z > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Tanh => 1.0 - a * a,
            Activation::Softmax => unreachable!("softmax has no elementwise derivative"),
        }
    }

    /// Full local Jacobian `J[k][j] = ∂a_j / ∂z_k` for one layer.
    pub fn local_jacobian(self, z: &[f64], a: &[f64]) -> Matrix {
        match self {
            Activation::Softmax => Matrix::from_fn(a.len(), a.len(), |k, j| {
                let delta = if k == j { 1.0 } else { 0.0 };
                a[j] * (delta - a[k])
            }),
            _ => {
                let d: Vec<f64> = z.iter().zip(a).map(|(&zi, &ai)| self.derivative(zi, ai)).collect();
                Matrix::diag(&d)
            }
        }
    }
}

impl std::str::FromStr for Activation {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "identity" | "linear" => Ok(Activation::Identity),
            "relu" => Ok(Activation::Relu),
            "tanh" => Ok(Activation::Tanh),
            "softmax" => Ok(Activation::Softmax),
            other => Err(Error::Parameter(format!("unknown activation `{other}`"))),
        }
    }
}

fn softmax_into(z: &[f64], out: &mut [f64]) {
    let max = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for (o, &v) in out.iter_mut().zip(z) {
        *o = (v - max).exp();
        sum += *o;
    }
    for o in out.iter_mut() {
        *o /= sum;
    }
}

/// Training objective.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LossKind {
    /// `Σ_k (o_k - y_k)²` per example; pairs with an identity output.
    SquaredError,
    /// `-Σ_k y_k ln o_k` per example; pairs with a softmax output.
    CategoricalCrossentropy,
}

impl LossKind {
    pub fn name(self) -> &'static str {
        match self {
            LossKind::SquaredError => "squared_error",
            LossKind::CategoricalCrossentropy => "categorical_crossentropy",
        }
    }

    /// Checks the loss/output pairing.
    pub fn check_output(self, output: Activation) -> Result<()> {
        let ok = matches!(
            (self, output),
            (LossKind::SquaredError, Activation::Identity)
                | (LossKind::CategoricalCrossentropy, Activation::Softmax)
        );
        if ok {
            Ok(())
        } else {
            Err(Error::Config(format!(
                "loss {} cannot be paired with a {} output layer",
                self.name(),
                output.name()
            )))
        }
    }

    /// Per-example loss value.
    pub fn value(self, output: &[f64], target: &[f64]) -> f64 {
        match self {
            LossKind::SquaredError => output
                .iter()
                .zip(target)
                .map(|(o, y)| (o - y) * (o - y))
                .sum(),
            LossKind::CategoricalCrossentropy => output
                .iter()
                .zip(target)
                .filter(|(_, &y)| y != 0.0)
                .map(|(&o, &y)| -y * o.ln())
                .sum(),
        }
    }

    /// `∂e/∂a⁽ᴸ⁾` for one example.
    pub fn output_gradient(self, output: &[f64], target: &[f64]) -> Vec<f64> {
        match self {
            LossKind::SquaredError => output.iter().zip(target).map(|(o, y)| 2.0 * (o - y)).collect(),
            LossKind::CategoricalCrossentropy => output
                .iter()
                .zip(target)
                .map(|(&o, &y)| if y == 0.0 { 0.0 } else { -y / o })
                .collect(),
        }
    }
}

impl std::str::FromStr for LossKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "sq" | "mse" | "squared_error" | "squared-error" => Ok(LossKind::SquaredError),
            "xent" | "crossentropy" | "categorical_crossentropy" => {
                Ok(LossKind::CategoricalCrossentropy)
            }
            other => Err(Error::Parameter(format!("unknown loss `{other}`"))),
        }
    }
}

/// Fully connected feed-forward network.
#[derive(Debug, Clone, PartialEq)]
pub struct Mlp {
    layer_sizes: Vec<usize>,
    weights: Vec<Matrix>,
    biases: Vec<Vec<f64>>,
    hidden: Activation,
    output: Activation,
}

impl Mlp {
    /// All-zero network with the given shape.
    pub fn zeros(layer_sizes: &[usize], hidden: Activation, output: Activation) -> Result<Self> {
        validate_shape(layer_sizes, hidden)?;
        let weights = layer_sizes
            .windows(2)
            .map(|w| Matrix::zeros(w[0], w[1]))
            .collect();
        let biases = layer_sizes[1..].iter().map(|&n| vec![0.0; n]).collect();
        Ok(Mlp {
            layer_sizes: layer_sizes.to_vec(),
            weights,
            biases,
            hidden,
            output,
        })
    }

    /// Random network: `W⁽ˡ⁾ ~ N(0, 1/N(l-1))` drawn layer by layer in row-major
    /// order from one stream seeded with `seed`; biases start at zero.
    pub fn init(
        layer_sizes: &[usize],
        hidden: Activation,
        output: Activation,
        seed: u64,
    ) -> Result<Self> {
        let mut net = Mlp::zeros(layer_sizes, hidden, output)?;
        let mut rng = Rng::new(seed);
        for w in &mut net.weights {
            let std = 1.0 / (w.rows() as f64).sqrt();
            *w = rng.normal_matrix(w.rows(), w.cols(), 0.0, std);
        }
        Ok(net)
    }

    pub fn from_parts(
        layer_sizes: &[usize],
        weights: Vec<Matrix>,
        biases: Vec<Vec<f64>>,
        hidden: Activation,
        output: Activation,
    ) -> Result<Self> {
        validate_shape(layer_sizes, hidden)?;
        let depth = layer_sizes.len() - 1;
        if weights.len() != depth || biases.len() != depth {
            return Err(Error::Shape(format!(
                "{depth} layers need {depth} weight matrices and bias vectors, got {} and {}",
                weights.len(),
                biases.len()
            )));
        }
        for l in 0..depth {
            let want = (layer_sizes[l], layer_sizes[l + 1]);
            if weights[l].shape() != want {
                return Err(Error::Shape(format!(
                    "layer {}: weight is {}x{}, expected {}x{}",
                    l + 1,
                    weights[l].rows(),
                    weights[l].cols(),
                    want.0,
                    want.1
                )));
            }
            if biases[l].len() != want.1 {
                return Err(Error::Shape(format!(
                    "layer {}: bias has length {}, expected {}",
                    l + 1,
                    biases[l].len(),
                    want.1
                )));
            }
        }
        Ok(Mlp {
            layer_sizes: layer_sizes.to_vec(),
            weights,
            biases,
            hidden,
            output,
        })
    }

    pub fn layer_sizes(&self) -> &[usize] {
        &self.layer_sizes
    }

    /// Number of weight layers `L`.
    pub fn depth(&self) -> usize {
        self.weights.len()
    }

    pub fn input_dim(&self) -> usize {
        self.layer_sizes[0]
    }

    pub fn output_dim(&self) -> usize {
        *self.layer_sizes.last().expect("validated non-empty")
    }

    pub fn hidden_activation(&self) -> Activation {
        self.hidden
    }

    pub fn output_activation(&self) -> Activation {
        self.output
    }

    /// Activation of layer `l` (1-based).
    pub fn activation(&self, l: usize) -> Activation {
        if l == self.depth() {
            self.output
        } else {
            self.hidden
        }
    }

    /// `W⁽ˡ⁾` for `l` in `1..=L`.
    pub fn weight(&self, l: usize) -> &Matrix {
        &self.weights[l - 1]
    }

    /// `b⁽ˡ⁾` for `l` in `1..=L`.
    pub fn bias(&self, l: usize) -> &[f64] {
        &self.biases[l - 1]
    }

    pub fn weights(&self) -> &[Matrix] {
        &self.weights
    }

    pub fn biases(&self) -> &[Vec<f64>] {
        &self.biases
    }

    pub fn weights_mut(&mut self) -> &mut [Matrix] {
        &mut self.weights
    }

    pub fn biases_mut(&mut self) -> &mut [Vec<f64>] {
        &mut self.biases
    }

    pub fn weight_count(&self) -> usize {
        self.layer_sizes.windows(2).map(|w| w[0] * w[1]).sum()
    }

    /// `Σ_l N(l-1)·N(l) + N(l)`.
    pub fn parameter_count(&self) -> usize {
        self.layer_sizes.windows(2).map(|w| w[0] * w[1] + w[1]).sum()
    }

    /// Runs the network on one input and keeps every intermediate vector.
    pub fn forward(&self, x: &[f64]) -> Result<ForwardTrace> {
        if x.len() != self.input_dim() {
            return Err(Error::Shape(format!(
                "input has length {}, network expects {}",
                x.len(),
                self.input_dim()
            )));
        }
        let mut pre = Vec::with_capacity(self.depth());
        let mut act = Vec::with_capacity(self.depth() + 1);
        act.push(x.to_vec());
        for l in 1..=self.depth() {
            let mut z = self.weight(l).vec_matmul(&act[l - 1])?;
            for (zi, bi) in z.iter_mut().zip(self.bias(l)) {
                *zi += bi;
            }
            if z.iter().any(|v| !v.is_finite()) {
                return Err(Error::Numeric {
                    layer: l,
                    what: "pre-activation".into(),
                });
            }
            let mut a = vec![0.0; z.len()];
            self.activation(l).apply(&z, &mut a);
            if a.iter().any(|v| !v.is_finite()) {
                return Err(Error::Numeric {
                    layer: l,
                    what: "activation".into(),
                });
            }
            pre.push(z);
            act.push(a);
        }
        Ok(ForwardTrace {
            pre_activations: pre,
            activations: act,
        })
    }

    /// Network output `a⁽ᴸ⁾` for one input.
    pub fn predict(&self, x: &[f64]) -> Result<Vec<f64>> {
        Ok(self.forward(x)?.activations.pop().expect("at least the input"))
    }

    /// Batched forward pass; row `r` of each returned matrix belongs to input row `r`.
    ///
    /// Returns `(pre_activations[l-1], activations[l])` with `activations[0] = x`.
    pub fn forward_batch(&self, x: &Matrix) -> Result<(Vec<Matrix>, Vec<Matrix>)> {
        if x.cols() != self.input_dim() {
            return Err(Error::Shape(format!(
                "batch has {} columns, network expects {}",
                x.cols(),
                self.input_dim()
            )));
        }
        let mut pre = Vec::with_capacity(self.depth());
        let mut act = Vec::with_capacity(self.depth() + 1);
        act.push(x.clone());
        for l in 1..=self.depth() {
            let mut z = act[l - 1].matmul(self.weight(l))?;
            let b = self.bias(l);
            let f = self.activation(l);
            let mut a = Matrix::zeros(z.rows(), z.cols());
            for r in 0..z.rows() {
                let zr = z.row_mut(r);
                for (zi, bi) in zr.iter_mut().zip(b) {
                    *zi += bi;
                }
                f.apply(zr, a.row_mut(r));
            }
            if !a.all_finite() {
                return Err(Error::Numeric {
                    layer: l,
                    what: "batched activation".into(),
                });
            }
            pre.push(z);
            act.push(a);
        }
        Ok((pre, act))
    }
}

fn validate_shape(layer_sizes: &[usize], hidden: Activation) -> Result<()> {
    if layer_sizes.len() < 2 {
        return Err(Error::Shape(format!(
            "need at least input and output sizes, got {layer_sizes:?}"
        )));
    }
    if layer_sizes.contains(&0) {
        return Err(Error::Shape(format!("zero-width layer in {layer_sizes:?}")));
    }
    if hidden == Activation::Softmax && layer_sizes.len() > 2 {
        return Err(Error::Config("softmax is only allowed at the output layer".into()));
    }
    Ok(())
}

/// Every intermediate of one forward pass.
#[derive(Debug, Clone, PartialEq)]
pub struct ForwardTrace {
    /// `z⁽ˡ⁾` stored at index `l - 1`.
    pub pre_activations: Vec<Vec<f64>>,
    /// `a⁽ˡ⁾` stored at index `l`; `a⁽⁰⁾` is the input.
    pub activations: Vec<Vec<f64>>,
}

impl ForwardTrace {
    pub fn z(&self, l: usize) -> &[f64] {
        &self.pre_activations[l - 1]
    }

    pub fn a(&self, l: usize) -> &[f64] {
        &self.activations[l]
    }

    pub fn output(&self) -> &[f64] {
        self.activations.last().expect("non-empty trace")
    }
}

/// Free-function form of [`Mlp::forward`].
pub fn forward(net: &Mlp, x: &[f64]) -> Result<ForwardTrace> {
    net.forward(x)
}
