//! Beta recursion, loss gradients and input–output Jacobians.

use serde::{Deserialize, Serialize};

use super::{Activation, ForwardTrace, LossKind, Mlp};
use crate::numkit::{axpy, frobenius_norm, Matrix};
use crate::{Error, Result};

/// Which output the Jacobian differentiates.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum JacobianEndpoint {
    /// `a⁽ᴸ⁾`, through the output activation (softmax included).
    #[default]
    Outputs,
    /// `z⁽ᴸ⁾`, the pre-activation logits.
    Logits,
}

impl JacobianEndpoint {
    pub fn name(self) -> &'static str {
        match self {
            JacobianEndpoint::Outputs => "outputs",
            JacobianEndpoint::Logits => "logits",
        }
    }
}

impl std::str::FromStr for JacobianEndpoint {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "outputs" | "softmax" => Ok(JacobianEndpoint::Outputs),
            "logits" => Ok(JacobianEndpoint::Logits),
            _ => Err(Error::Config(format!("jacobian endpoint must be outputs or logits, got {s:?}"))),
        }
    }
}

/// Loss gradients with respect to every weight and bias.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    /// Same shapes as [`Mlp::weights`].
    pub weights: Vec<Matrix>,
    pub biases: Vec<Vec<f64>>,
}

impl Gradients {
    pub fn zeros_like(net: &Mlp) -> Self {
        Gradients {
            weights: net
                .weights()
                .iter()
                .map(|w| Matrix::zeros(w.rows(), w.cols()))
                .collect(),
            biases: net.biases().iter().map(|b| vec![0.0; b.len()]).collect(),
        }
    }

    /// Largest absolute difference over all entries.
    pub fn max_abs_diff(&self, other: &Gradients) -> f64 {
        let w = self
            .weights
            .iter()
            .zip(&other.weights)
            .map(|(a, b)| a.max_abs_diff(b))
            .fold(0.0, f64::max);
        let b = self
            .biases
            .iter()
            .zip(&other.biases)
            .flat_map(|(a, b)| a.iter().zip(b).map(|(x, y)| (x - y).abs()))
            .fold(0.0, f64::max);
        w.max(b)
    }
}

/// Result of [`backward`].
#[derive(Debug, Clone)]
pub struct Backward {
    pub weight_grads: Vec<Matrix>,
    pub bias_grads: Vec<Vec<f64>>,
    /// `β⁽ˡ⁾` at index `l` for `l = 0..=L`, each `N(l) x N(L)`.
    pub betas: Vec<Matrix>,
}

impl Backward {
    pub fn gradients(&self) -> Gradients {
        Gradients {
            weights: self.weight_grads.clone(),
            biases: self.bias_grads.clone(),
        }
    }
}

/// `β⁽ˡ⁾` for every layer plus the products `M⁽ˡ⁾ = (∂a⁽ˡ⁾/∂z⁽ˡ⁾) β⁽ˡ⁾`
/// (stored at index `l - 1`), which are what the weight gradient contracts with.
fn beta_recursion(
    net: &Mlp,
    trace: &ForwardTrace,
    endpoint: JacobianEndpoint,
) -> (Vec<Matrix>, Vec<Matrix>) {
    let depth = net.depth();
    let out_dim = net.output_dim();
    let mut betas = vec![Matrix::zeros(0, 0); depth + 1];
    let mut locals = vec![Matrix::zeros(0, 0); depth];
    betas[depth] = Matrix::identity(out_dim);
    for l in (1..=depth).rev() {
        let beta = &betas[l];
        let f = net.activation(l);
        let local = if l == depth && endpoint == JacobianEndpoint::Logits {
            beta.clone()
        } else if f == Activation::Softmax {
            f.local_jacobian(trace.z(l), trace.a(l))
                .matmul(beta)
                .expect("softmax jacobian is N(L) x N(L)")
        } else {
            let mut m = beta.clone();
            for (j, (&z, &a)) in trace.z(l).iter().zip(trace.a(l)).enumerate() {
                let d = f.derivative(z, a);
                m.row_mut(j).iter_mut().for_each(|v| *v *= d);
            }
            m
        };
        betas[l - 1] = net
            .weight(l)
            .matmul(&local)
            .expect("weight rows match beta rows");
        locals[l - 1] = local;
    }
    (betas, locals)
}

fn check_target(net: &Mlp, target: &[f64], loss: LossKind) -> Result<()> {
    loss.check_output(net.output_activation())?;
    if target.len() != net.output_dim() {
        return Err(Error::Shape(format!(
            "target has length {}, network outputs {}",
            target.len(),
            net.output_dim()
        )));
    }
    Ok(())
}

fn check_trace(net: &Mlp, trace: &ForwardTrace) -> Result<()> {
    let sizes = net.layer_sizes();
    let ok = trace.activations.len() == sizes.len()
        && trace.pre_activations.len() == net.depth()
        && trace.activations.iter().zip(sizes).all(|(a, &n)| a.len() == n)
        && trace.pre_activations.iter().zip(&sizes[1..]).all(|(z, &n)| z.len() == n);
    if ok {
        Ok(())
    } else {
        Err(Error::Shape("forward trace does not match network layer sizes".into()))
    }
}

/// Backward pass through the beta recursion.
///
/// Betas start from `β⁽ᴸ⁾ = I` and descend via
/// `β⁽ˡ⁻¹⁾ = W⁽ˡ⁾ (∂a⁽ˡ⁾/∂z⁽ˡ⁾) β⁽ˡ⁾`. Each weight gradient is then assembled as
/// `∂e/∂W⁽ˡ⁾[i][j] = a⁽ˡ⁻¹⁾_i [(∂a⁽ˡ⁾/∂z⁽ˡ⁾) β⁽ˡ⁾ ∂e/∂a⁽ᴸ⁾]_j`. For a softmax
/// output the local derivative is the full softmax Jacobian, and with
/// crossentropy the output-layer term reduces to `a⁽ᴸ⁾ - y`.
pub fn backward(
    net: &Mlp,
    trace: &ForwardTrace,
    target: &[f64],
    loss: LossKind,
) -> Result<Backward> {
    check_target(net, target, loss)?;
    check_trace(net, trace)?;
    let (betas, locals) = beta_recursion(net, trace, JacobianEndpoint::Outputs);
    let g = loss.output_gradient(trace.output(), target);

    let mut weight_grads = Vec::with_capacity(net.depth());
    let mut bias_grads = Vec::with_capacity(net.depth());
    for l in 1..=net.depth() {
        let delta: Vec<f64> = (0..net.layer_sizes()[l])
            .map(|j| locals[l - 1].row(j).iter().zip(&g).map(|(m, gk)| m * gk).sum())
            .collect();
        let a_prev = trace.a(l - 1);
        let grad = Matrix::from_fn(a_prev.len(), delta.len(), |i, j| a_prev[i] * delta[j]);
        if !grad.all_finite() {
            return Err(Error::Numeric {
                layer: l,
                what: "weight gradient".into(),
            });
        }
        weight_grads.push(grad);
        bias_grads.push(delta);
    }
    Ok(Backward {
        weight_grads,
        bias_grads,
        betas,
    })
}

/// `∂e/∂z⁽ᴸ⁾` for the supported loss/output pairs.
fn output_delta(loss: LossKind, output: &[f64], target: &[f64], out: &mut [f64]) {
    let factor = match loss {
        LossKind::SquaredError => 2.0,
        LossKind::CategoricalCrossentropy => 1.0,
    };
    for ((d, &o), &y) in out.iter_mut().zip(output).zip(target) {
        *d = factor * (o - y);
    }
}

/// Conventional delta backpropagation: `δ⁽ᴸ⁾ = ∂e/∂z⁽ᴸ⁾`,
/// `δ⁽ˡ⁾ = f'(z⁽ˡ⁾) ⊙ W⁽ˡ⁺¹⁾ δ⁽ˡ⁺¹⁾`. Same gradients as [`backward`] without
/// materialising any beta matrix.
pub fn delta_backward(
    net: &Mlp,
    trace: &ForwardTrace,
    target: &[f64],
    loss: LossKind,
) -> Result<Gradients> {
    check_target(net, target, loss)?;
    check_trace(net, trace)?;
    let depth = net.depth();
    let mut grads = Gradients::zeros_like(net);
    let mut delta = vec![0.0; net.output_dim()];
    output_delta(loss, trace.output(), target, &mut delta);
    for l in (1..=depth).rev() {
        let a_prev = trace.a(l - 1);
        let gw = &mut grads.weights[l - 1];
        for (i, &ai) in a_prev.iter().enumerate() {
            if ai != 0.0 {
                axpy(ai, &delta, gw.row_mut(i));
            }
        }
        grads.biases[l - 1].copy_from_slice(&delta);
        if l > 1 {
            let w = net.weight(l);
            let f = net.activation(l - 1);
            delta = (0..w.rows())
                .map(|k| {
                    let back: f64 = w.row(k).iter().zip(&delta).map(|(a, b)| a * b).sum();
                    back * f.derivative(trace.z(l - 1)[k], trace.a(l - 1)[k])
                })
                .collect();
        }
    }
    Ok(grads)
}

/// Aggregates from one minibatch.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct BatchStats {
    pub loss_sum: f64,
    pub correct: usize,
    pub count: usize,
}

/// Mean loss gradient over the rows of `x`, computed with batched delta backprop.
pub fn batch_gradients(
    net: &Mlp,
    x: &Matrix,
    y: &Matrix,
    loss: LossKind,
) -> Result<(Gradients, BatchStats)> {
    loss.check_output(net.output_activation())?;
    if y.rows() != x.rows() || y.cols() != net.output_dim() {
        return Err(Error::Shape(format!(
            "targets are {}x{}, expected {}x{}",
            y.rows(),
            y.cols(),
            x.rows(),
            net.output_dim()
        )));
    }
    let (pre, act) = net.forward_batch(x)?;
    let depth = net.depth();
    let n = x.rows();

    let output = &act[depth];
    let mut stats = BatchStats {
        count: n,
        ..BatchStats::default()
    };
    let mut delta = Matrix::zeros(n, net.output_dim());
    for r in 0..n {
        stats.loss_sum += example_loss(loss, pre[depth - 1].row(r), output.row(r), y.row(r));
        if argmax(output.row(r)) == argmax(y.row(r)) {
            stats.correct += 1;
        }
        output_delta(loss, output.row(r), y.row(r), delta.row_mut(r));
    }

    let scale = 1.0 / n as f64;
    let mut grads = Gradients::zeros_like(net);
    for l in (1..=depth).rev() {
        grads.weights[l - 1] = act[l - 1].t_matmul(&delta)?.scale(scale);
        let gb = &mut grads.biases[l - 1];
        for r in 0..n {
            axpy(scale, delta.row(r), gb);
        }
        if l > 1 {
            let mut back = delta.matmul_t(net.weight(l))?;
            let f = net.activation(l - 1);
            let (z, a) = (&pre[l - 2], &act[l - 1]);
            for ((d, &zv), &av) in back
                .as_mut_slice()
                .iter_mut()
                .zip(z.as_slice())
                .zip(a.as_slice())
            {
                *d *= f.derivative(zv, av);
            }
            delta = back;
        }
    }
    Ok((grads, stats))
}

/// Per-example loss; crossentropy is evaluated from logits so that saturated
/// softmax outputs stay finite.
pub(crate) fn example_loss(loss: LossKind, logits: &[f64], output: &[f64], target: &[f64]) -> f64 {
    match loss {
        LossKind::SquaredError => loss.value(output, target),
        LossKind::CategoricalCrossentropy => {
            let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let lse = max + logits.iter().map(|z| (z - max).exp()).sum::<f64>().ln();
            logits
                .iter()
                .zip(target)
                .filter(|(_, &y)| y != 0.0)
                .map(|(&z, &y)| -y * (z - lse))
                .sum()
        }
    }
}

/// Index of the largest entry; ties go to the lowest index.
pub(crate) fn argmax(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in v.iter().enumerate() {
        if x > v[best] {
            best = i;
        }
    }
    best
}

/// Input–output Jacobian of one example.
#[derive(Debug, Clone, PartialEq)]
pub struct JacobianRecord {
    /// `N(0) x N(L)`, entry `(i, j) = ∂o_j / ∂x_i`.
    pub beta0: Matrix,
    /// Frobenius norm of `beta0`.
    pub frob: f64,
}

/// `β⁽⁰⁾` at `x`, differentiating the network outputs.
pub fn jacobian(net: &Mlp, x: &[f64]) -> Result<JacobianRecord> {
    jacobian_with(net, x, JacobianEndpoint::Outputs)
}

pub fn jacobian_with(net: &Mlp, x: &[f64], endpoint: JacobianEndpoint) -> Result<JacobianRecord> {
    let trace = net.forward(x)?;
    let (mut betas, _) = beta_recursion(net, &trace, endpoint);
    let beta0 = betas.swap_remove(0);
    let frob = frobenius_norm(&beta0)?;
    Ok(JacobianRecord { beta0, frob })
}

/// Mean per-example `‖β⁽⁰⁾‖_F` over the first `min(sample_cap, n)` rows of `inputs`.
pub fn sharpness(net: &Mlp, inputs: &Matrix, sample_cap: usize) -> Result<f64> {
    sharpness_with(net, inputs, sample_cap, JacobianEndpoint::Outputs)
}

pub fn sharpness_with(
    net: &Mlp,
    inputs: &Matrix,
    sample_cap: usize,
    endpoint: JacobianEndpoint,
) -> Result<f64> {
    let k = sample_cap.min(inputs.rows());
    if k == 0 {
        return Err(Error::Parameter(format!(
            "sharpness needs at least one input (got {} rows, cap {sample_cap})",
            inputs.rows()
        )));
    }
    let mut total = 0.0;
    for r in 0..k {
        total += jacobian_with(net, inputs.row(r), endpoint)?.frob;
    }
    Ok(total / k as f64)
}
