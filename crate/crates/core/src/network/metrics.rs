use serde::{Deserialize, Serialize};

use super::backprop::{argmax, example_loss};
use super::{LossKind, Mlp};
use crate::numkit::{norm2, Matrix};
use crate::{Error, Result};

/// ℓ2 norm of all weights (biases excluded), raw and per-weight normalized.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WeightNorm {
    pub raw_l2: f64,
    /// `raw_l2 / sqrt(weight_count)`.
    pub normalized: f64,
}

pub fn weight_norm(net: &Mlp) -> WeightNorm {
    let per_layer: Vec<f64> = net.weights().iter().map(|w| norm2(w.as_slice())).collect();
    let raw_l2 = norm2(&per_layer);
    WeightNorm {
        raw_l2,
        normalized: raw_l2 / (net.weight_count() as f64).sqrt(),
    }
}

const EVAL_CHUNK: usize = 512;

/// Mean per-example loss and argmax accuracy over a labelled set.
pub fn loss_and_accuracy(
    net: &Mlp,
    x: &Matrix,
    y_onehot: &Matrix,
    labels: &[u8],
    loss: LossKind,
) -> Result<(f64, f64)> {
    loss.check_output(net.output_activation())?;
    let n = x.rows();
    if y_onehot.rows() != n || labels.len() != n || y_onehot.cols() != net.output_dim() {
        return Err(Error::Shape(format!(
            "{} inputs, {}x{} targets and {} labels for a network with {} outputs",
            n,
            y_onehot.rows(),
            y_onehot.cols(),
            labels.len(),
            net.output_dim()
        )));
    }
    if n == 0 {
        return Err(Error::Parameter("cannot evaluate on an empty set".into()));
    }
    let depth = net.depth();
    let mut loss_sum = 0.0;
    let mut correct = 0usize;
    for start in (0..n).step_by(EVAL_CHUNK) {
        let rows: Vec<usize> = (start..(start + EVAL_CHUNK).min(n)).collect();
        let (pre, act) = net.forward_batch(&x.select_rows(&rows))?;
        for (i, &r) in rows.iter().enumerate() {
            let out = act[depth].row(i);
            loss_sum += example_loss(loss, pre[depth - 1].row(i), out, y_onehot.row(r));
            if argmax(out) == labels[r] as usize {
                correct += 1;
            }
        }
    }
    Ok((loss_sum / n as f64, correct as f64 / n as f64))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::network::Activation;
    use crate::numkit::Rng;

    #[test]
    fn three_four_five() {
        let net = Mlp::from_parts(
            &[1, 2],
            vec![Matrix::from_rows(&[[3.0, 4.0]]).unwrap()],
            vec![vec![7.0, 7.0]],
            Activation::Identity,
            Activation::Identity,
        )
        .unwrap();
        let n = weight_norm(&net);
        assert_eq!(n.raw_l2, 5.0);
        assert!((n.normalized - 5.0 / 2f64.sqrt()).abs() < 1e-15);

        let zero = Mlp::zeros(&[4, 3, 2], Activation::Tanh, Activation::Identity).unwrap();
        assert_eq!(weight_norm(&zero), WeightNorm { raw_l2: 0.0, normalized: 0.0 });
    }

    #[test]
    fn matches_flattened_norm() {
        let net = Mlp::init(&[9, 7, 5, 3], Activation::Relu, Activation::Softmax, 31).unwrap();
        let flat: Vec<f64> = net.weights().iter().flat_map(|w| w.as_slice().to_vec()).collect();
        let oracle = flat.iter().map(|v| v * v).sum::<f64>().sqrt();
        let n = weight_norm(&net);
        assert!((n.raw_l2 - oracle).abs() <= 1e-12);
        assert!((n.normalized - oracle / (flat.len() as f64).sqrt()).abs() <= 1e-12);
    }

    /// Identity network on 10 classes whose output equals its input.
    fn passthrough(output: crate::network::Activation) -> Mlp {
        Mlp::from_parts(
            &[10, 10],
            vec![Matrix::identity(10)],
            vec![vec![0.0; 10]],
            Activation::Identity,
            output,
        )
        .unwrap()
    }

    #[test]
    fn perfect_and_uniform_predictions() {
        let labels: Vec<u8> = vec![3, 7, 0];
        let y = Matrix::from_fn(3, 10, |r, c| if c == labels[r] as usize { 1.0 } else { 0.0 });
        let net = passthrough(Activation::Identity);
        let (l, acc) = loss_and_accuracy(&net, &y, &y, &labels, LossKind::SquaredError).unwrap();
        assert_eq!((l, acc), (0.0, 1.0));

        // Huge logit on the right class gives a one-hot softmax.
        let sharp = y.scale(1000.0);
        let net = passthrough(Activation::Softmax);
        let (l, acc) =
            loss_and_accuracy(&net, &sharp, &y, &labels, LossKind::CategoricalCrossentropy).unwrap();
        assert_eq!((l, acc), (0.0, 1.0));

        let flat = Matrix::zeros(3, 10);
        let (l, _) =
            loss_and_accuracy(&net, &flat, &y, &labels, LossKind::CategoricalCrossentropy).unwrap();
        assert!((l - 10f64.ln()).abs() < 1e-12);
        assert!((l - 2.302585).abs() < 1e-6);
    }

    #[test]
    fn matches_per_example_loop() {
        let net = Mlp::init(&[6, 5, 10], Activation::Tanh, Activation::Softmax, 3).unwrap();
        let mut rng = Rng::new(3);
        let x = rng.normal_matrix(20, 6, 0.0, 1.0);
        let labels: Vec<u8> = (0..20).map(|i| (i * 7 % 10) as u8).collect();
        let y = Matrix::from_fn(20, 10, |r, c| if c == labels[r] as usize { 1.0 } else { 0.0 });
        let (l, acc) =
            loss_and_accuracy(&net, &x, &y, &labels, LossKind::CategoricalCrossentropy).unwrap();
        let mut sum = 0.0;
        let mut hits = 0;
        for r in 0..20 {
            let o = net.predict(x.row(r)).unwrap();
            sum += -o[labels[r] as usize].ln();
            let best = (0..10).max_by(|&a, &b| o[a].total_cmp(&o[b])).unwrap();
            hits += usize::from(best == labels[r] as usize);
        }
        assert!((l - sum / 20.0).abs() <= 1e-12);
        assert_eq!(acc, hits as f64 / 20.0);
    }

    #[test]
    fn shape_mismatch() {
        let net = passthrough(Activation::Identity);
        let err = loss_and_accuracy(&net, &Matrix::zeros(2, 10), &Matrix::zeros(3, 10), &[0, 1], LossKind::SquaredError);
        assert!(matches!(err, Err(Error::Shape(_))));
    }
}
