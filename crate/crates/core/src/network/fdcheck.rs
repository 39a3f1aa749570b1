//! Central finite-difference oracles.
//!
//! These only ever call [`Mlp::forward`], so they stay independent of the
//! backward pass they are used to check.

use serde::Serialize;

use super::{backprop::example_loss, backward, jacobian, Activation, Gradients, LossKind, Mlp};
use crate::numkit::{derive_seed, Matrix, Rng};
use crate::Result;

/// Step used by the checks unless told otherwise.
pub const FD_STEP: f64 = 1e-6;

/// Relative error with an absolute floor: `|a - b| / max(|a|, |b|, floor / rel_tol)`.
///
/// With `floor = 1e-8` and `rel_tol = 1e-5`, a value `<= 1e-5` means the pair
/// agrees to 1e-5 relative or 1e-8 absolute, whichever is looser.
pub fn relative_error(a: f64, b: f64, rel_tol: f64, floor: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(floor / rel_tol)
}

/// `∂o_j/∂x_i` by central differences, shaped `N(0) x N(L)` like `β⁽⁰⁾`.
pub fn fd_jacobian(net: &Mlp, x: &[f64], h: f64) -> Result<Matrix> {
    let mut out = Matrix::zeros(net.input_dim(), net.output_dim());
    let mut xp = x.to_vec();
    for i in 0..x.len() {
        xp[i] = x[i] + h;
        let plus = net.predict(&xp)?;
        xp[i] = x[i] - h;
        let minus = net.predict(&xp)?;
        xp[i] = x[i];
        for (j, (p, m)) in plus.iter().zip(&minus).enumerate() {
            out.set(i, j, (p - m) / (2.0 * h));
        }
    }
    Ok(out)
}

fn loss_at(net: &Mlp, x: &[f64], y: &[f64], loss: LossKind) -> Result<f64> {
    let t = net.forward(x)?;
    Ok(example_loss(loss, t.z(net.depth()), t.output(), y))
}

/// Loss gradient for every weight and bias by central differences.
pub fn fd_gradients(net: &Mlp, x: &[f64], y: &[f64], loss: LossKind, h: f64) -> Result<Gradients> {
    let mut work = net.clone();
    let mut grads = Gradients::zeros_like(net);
    for l in 0..net.depth() {
        for idx in 0..net.weights()[l].as_slice().len() {
            let orig = net.weights()[l].as_slice()[idx];
            work.weights_mut()[l].as_mut_slice()[idx] = orig + h;
            let plus = loss_at(&work, x, y, loss)?;
            work.weights_mut()[l].as_mut_slice()[idx] = orig - h;
            let minus = loss_at(&work, x, y, loss)?;
            work.weights_mut()[l].as_mut_slice()[idx] = orig;
            grads.weights[l].as_mut_slice()[idx] = (plus - minus) / (2.0 * h);
        }
        for idx in 0..net.biases()[l].len() {
            let orig = net.biases()[l][idx];
            work.biases_mut()[l][idx] = orig + h;
            let plus = loss_at(&work, x, y, loss)?;
            work.biases_mut()[l][idx] = orig - h;
            let minus = loss_at(&work, x, y, loss)?;
            work.biases_mut()[l][idx] = orig;
            grads.biases[l][idx] = (plus - minus) / (2.0 * h);
        }
    }
    Ok(grads)
}

/// Smallest `|z|` over all hidden pre-activations at `x`.
///
/// ReLU is not differentiable at 0, so finite differences are only meaningful
/// when this margin is well above the step size.
pub fn kink_margin(net: &Mlp, x: &[f64]) -> Result<f64> {
    let t = net.forward(x)?;
    Ok((1..net.depth())
        .flat_map(|l| t.z(l).iter().map(|v| v.abs()))
        .fold(f64::INFINITY, f64::min))
}

/// Largest [`relative_error`] between two matrices.
pub fn max_relative_error(a: &Matrix, b: &Matrix, rel_tol: f64, floor: f64) -> f64 {
    assert_eq!(a.shape(), b.shape());
    a.as_slice()
        .iter()
        .zip(b.as_slice())
        .map(|(&p, &q)| relative_error(p, q, rel_tol, floor))
        .fold(0.0, f64::max)
}

/// Largest [`relative_error`] over all weight and bias entries.
pub fn max_gradient_error(a: &Gradients, b: &Gradients, rel_tol: f64, floor: f64) -> f64 {
    let w = a
        .weights
        .iter()
        .zip(&b.weights)
        .map(|(p, q)| max_relative_error(p, q, rel_tol, floor))
        .fold(0.0, f64::max);
    let bias = a
        .biases
        .iter()
        .zip(&b.biases)
        .flat_map(|(p, q)| p.iter().zip(q).map(|(&u, &v)| relative_error(u, v, rel_tol, floor)))
        .fold(0.0, f64::max);
    w.max(bias)
}

/// Tolerances used by [`check_family`].
pub const CHECK_REL_TOL: f64 = 1e-5;
pub const CHECK_ABS_FLOOR: f64 = 1e-8;

/// Worst finite-difference disagreement over a batch of random nets.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FamilyCheck {
    pub hidden: Activation,
    pub output: Activation,
    pub loss: LossKind,
    pub nets: usize,
    pub max_gradient_error: f64,
    pub max_jacobian_error: f64,
}

impl FamilyCheck {
    pub fn passed(&self) -> bool {
        self.max_gradient_error <= CHECK_REL_TOL && self.max_jacobian_error <= CHECK_REL_TOL
    }
}

/// Compares backprop gradients and `β⁽⁰⁾` against central differences on
/// `nets` random nets of shape `49-h₁[-h₂]-10` with widths in `1..=50`.
/// Inputs are uniform in `[0, 1)`; for ReLU nets inputs closer than `1e-4`
/// to a kink are redrawn.
pub fn check_family(hidden: Activation, output: Activation, loss: LossKind, seed: u64, nets: usize) -> Result<FamilyCheck> {
    let mut worst_g: f64 = 0.0;
    let mut worst_j: f64 = 0.0;
    for k in 0..nets {
        let mut rng = Rng::new(derive_seed(seed, &[hidden.tag() as u64, output.tag() as u64, k as u64]));
        let hidden_layers = 1 + (rng.next_u64() % 2) as usize;
        let mut sizes = vec![49];
        for _ in 0..hidden_layers {
            sizes.push(1 + (rng.next_u64() % 50) as usize);
        }
        sizes.push(10);
        let mut net = Mlp::init(&sizes, hidden, output, rng.next_u64())?;
        // Nonzero biases so they are exercised too.
        for b in net.biases_mut() {
            for v in b.iter_mut() {
                *v = 0.1 * rng.standard_normal();
            }
        }
        let mut x: Vec<f64> = (0..49).map(|_| rng.uniform()).collect();
        if hidden == Activation::Relu {
            while kink_margin(&net, &x)? < 1e-4 {
                x = (0..49).map(|_| rng.uniform()).collect();
            }
        }
        let mut y = vec![0.0; 10];
        y[(rng.next_u64() % 10) as usize] = 1.0;

        let trace = net.forward(&x)?;
        let g = backward(&net, &trace, &y, loss)?.gradients();
        let fd = fd_gradients(&net, &x, &y, loss, FD_STEP)?;
        worst_g = worst_g.max(max_gradient_error(&g, &fd, CHECK_REL_TOL, CHECK_ABS_FLOOR));
        let j = jacobian(&net, &x)?;
        let fdj = fd_jacobian(&net, &x, FD_STEP)?;
        worst_j = worst_j.max(max_relative_error(&j.beta0, &fdj, CHECK_REL_TOL, CHECK_ABS_FLOOR));
    }
    Ok(FamilyCheck {
        hidden,
        output,
        loss,
        nets,
        max_gradient_error: worst_g,
        max_jacobian_error: worst_j,
    })
}
