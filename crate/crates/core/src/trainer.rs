//! Minibatch SGD with classic momentum and exponential learning-rate decay.

use serde::{Deserialize, Serialize};

use crate::dataset::Dataset;
use crate::network::{batch_gradients, Gradients, LossKind, Mlp};
use crate::numkit::{Matrix, Rng};
use crate::{Error, Result};

/// Loss above which a run counts as diverged.
pub const DIVERGENCE_LOSS: f64 = 1e6;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr0: f64,
    /// Per-epoch multiplicative factor.
    pub lr_decay: f64,
    pub momentum: f64,
    /// Seeds the per-epoch shuffles.
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig::with_epochs(5000, 0)
    }
}

impl TrainConfig {
    /// Default hyperparameters with the decay chosen so that the learning
    /// rate after `epochs` epochs is `lr0 / 100`.
    pub fn with_epochs(epochs: usize, seed: u64) -> Self {
        TrainConfig {
            epochs,
            batch_size: 32,
            lr0: 0.05,
            lr_decay: decay_to_hundredth(epochs),
            momentum: 0.9,
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 || self.batch_size == 0 {
            return Err(Error::Config("epochs and batch size must be positive".into()));
        }
        // lr0 = 0 is allowed: it freezes the net, which is a useful control.
        if !(self.lr0 >= 0.0 && self.lr0.is_finite()) {
            return Err(Error::Config(format!("lr0 must be >= 0, got {}", self.lr0)));
        }
        if !(self.lr_decay > 0.0 && self.lr_decay <= 1.0) {
            return Err(Error::Config(format!("lr decay must be in (0, 1], got {}", self.lr_decay)));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(Error::Config(format!("momentum must be in [0, 1), got {}", self.momentum)));
        }
        Ok(())
    }
}

/// `100^(-1/epochs)`.
pub fn decay_to_hundredth(epochs: usize) -> f64 {
    100f64.powf(-1.0 / epochs.max(1) as f64)
}

/// Learning rate used during `epoch` (0-based).
pub fn lr_at(cfg: &TrainConfig, epoch: usize) -> f64 {
    cfg.lr0 * cfg.lr_decay.powi(epoch as i32)
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainHistory {
    /// Mean training loss seen during each epoch (before each batch's update).
    pub loss: Vec<f64>,
    pub accuracy: Vec<f64>,
    pub lr: Vec<f64>,
    pub epochs: usize,
}

impl TrainHistory {
    /// Means of the first and last `window` epoch losses.
    pub fn leading_trailing_loss(&self, window: usize) -> Option<(f64, f64)> {
        let w = window.min(self.loss.len());
        if w == 0 {
            return None;
        }
        let mean = |s: &[f64]| s.iter().sum::<f64>() / s.len() as f64;
        Some((mean(&self.loss[..w]), mean(&self.loss[self.loss.len() - w..])))
    }
}

/// Trains on the dataset's training split.
pub fn train(net: Mlp, data: &Dataset, loss: LossKind, cfg: &TrainConfig) -> Result<(Mlp, TrainHistory)> {
    train_on(net, &data.train_x, &data.train_y_onehot, loss, cfg)
}

/// Trains on explicit inputs and targets.
///
/// Each epoch visits the rows in a fresh seeded permutation, in batches of
/// `batch_size` (the last one may be short). Per batch:
/// `v ← μv − η∇`, `w ← w + v`, for weights and biases alike.
pub fn train_on(
    mut net: Mlp,
    x: &Matrix,
    y: &Matrix,
    loss: LossKind,
    cfg: &TrainConfig,
) -> Result<(Mlp, TrainHistory)> {
    cfg.validate()?;
    loss.check_output(net.output_activation())?;
    let n = x.rows();
    if n == 0 || y.rows() != n {
        return Err(Error::Shape(format!("{n} inputs but {} targets", y.rows())));
    }
    let mut rng = Rng::new(cfg.seed);
    let mut velocity = Gradients::zeros_like(&net);
    let mut history = TrainHistory::default();

    for epoch in 0..cfg.epochs {
        let lr = lr_at(cfg, epoch);
        let order = rng.permutation(n);
        let mut loss_sum = 0.0;
        let mut correct = 0usize;
        for batch in order.chunks(cfg.batch_size) {
            let bx = x.select_rows(batch);
            let by = y.select_rows(batch);
            let (grads, stats) = match batch_gradients(&net, &bx, &by, loss) {
                Ok(v) => v,
                Err(Error::Numeric { .. }) => {
                    return Err(Error::Diverged {
                        epoch,
                        loss: f64::NAN,
                    })
                }
                Err(e) => return Err(e),
            };
            loss_sum += stats.loss_sum;
            correct += stats.correct;
            step(&mut net, &mut velocity, &grads, lr, cfg.momentum);
        }
        let mean = loss_sum / n as f64;
        if !mean.is_finite() || mean > DIVERGENCE_LOSS {
            return Err(Error::Diverged { epoch, loss: mean });
        }
        history.loss.push(mean);
        history.accuracy.push(correct as f64 / n as f64);
        history.lr.push(lr);
        history.epochs = epoch + 1;
    }
    Ok((net, history))
}

fn step(net: &mut Mlp, velocity: &mut Gradients, grads: &Gradients, lr: f64, momentum: f64) {
    let update = |p: &mut [f64], v: &mut [f64], g: &[f64]| {
        for ((p, v), g) in p.iter_mut().zip(v.iter_mut()).zip(g) {
            *v = momentum * *v - lr * g;
            *p += *v;
        }
    };
    for l in 0..net.depth() {
        update(
            net.weights_mut()[l].as_mut_slice(),
            velocity.weights[l].as_mut_slice(),
            grads.weights[l].as_slice(),
        );
        update(&mut net.biases_mut()[l], &mut velocity.biases[l], &grads.biases[l]);
    }
}

/// Writes `epoch,loss,accuracy,lr` rows.
pub fn write_history_csv(history: &TrainHistory, path: &std::path::Path) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["epoch", "loss", "accuracy", "lr"])?;
    for e in 0..history.epochs {
        w.write_record([
            e.to_string(),
            format!("{:.16e}", history.loss[e]),
            format!("{:.16e}", history.accuracy[e]),
            format!("{:.16e}", history.lr[e]),
        ])?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::closedform::anchored_least_squares;
    use crate::network::Activation;

    fn regression_problem(n: usize, d: usize, seed: u64) -> (Matrix, Matrix) {
        let mut rng = Rng::new(seed);
        let x = rng.normal_matrix(n, d, 0.0, 1.0);
        let y = rng.normal_matrix(n, 2, 0.0, 1.0);
        (x, y)
    }

    #[test]
    fn default_schedule() {
        let cfg = TrainConfig::default();
        assert_eq!((cfg.epochs, cfg.batch_size, cfg.momentum), (5000, 32, 0.9));
        assert_eq!(lr_at(&cfg, 0), 0.05);
        let end = lr_at(&cfg, 5000);
        assert!((end / 0.0005 - 1.0).abs() < 1e-9, "{end}");
        let flat = TrainConfig {
            lr_decay: 1.0,
            ..cfg
        };
        assert_eq!(lr_at(&flat, 1234), 0.05);
    }

    #[test]
    fn zero_learning_rate_freezes_weights() {
        let (x, y) = regression_problem(20, 3, 1);
        let net = Mlp::init(&[3, 4, 2], Activation::Tanh, Activation::Identity, 2).unwrap();
        let cfg = TrainConfig {
            epochs: 3,
            lr0: 0.0,
            ..TrainConfig::default()
        };
        let (after, hist) = train_on(net.clone(), &x, &y, LossKind::SquaredError, &cfg).unwrap();
        assert_eq!(after, net);
        assert_eq!(hist.epochs, 3);
        assert!(hist.lr.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn single_step_matches_hand_gradient() {
        let x = Matrix::from_rows(&[[0.5, -1.0, 2.0]]).unwrap();
        let y = Matrix::from_rows(&[[1.0, -0.5]]).unwrap();
        let net = Mlp::init(&[3, 2], Activation::Identity, Activation::Identity, 9).unwrap();
        let eta = 0.01;
        let cfg = TrainConfig {
            epochs: 1,
            batch_size: 1,
            lr0: eta,
            lr_decay: 1.0,
            momentum: 0.0,
            seed: 0,
        };
        let (after, _) = train_on(net.clone(), &x, &y, LossKind::SquaredError, &cfg).unwrap();
        let w = net.weight(1);
        let out: Vec<f64> = (0..2)
            .map(|j| (0..3).map(|i| x.get(0, i) * w.get(i, j)).sum::<f64>() + net.bias(1)[j])
            .collect();
        for j in 0..2 {
            let r = 2.0 * (out[j] - y.get(0, j));
            for i in 0..3 {
                let expect = w.get(i, j) - eta * r * x.get(0, i);
                assert!((after.weight(1).get(i, j) - expect).abs() <= 1e-12);
            }
            assert!((after.bias(1)[j] - (net.bias(1)[j] - eta * r)).abs() <= 1e-12);
        }
    }

    #[test]
    fn momentum_accumulates_velocity() {
        // Two identical steps on a linear loss surface: the second moves
        // (1 + μ) times as far as the first.
        let x = Matrix::from_rows(&[[1.0]]).unwrap();
        let y = Matrix::from_rows(&[[0.0, 1.0]]).unwrap();
        let net = Mlp::zeros(&[1, 2], Activation::Identity, Activation::Softmax).unwrap();
        let cfg = |epochs| TrainConfig {
            epochs,
            batch_size: 1,
            lr0: 1e-6,
            lr_decay: 1.0,
            momentum: 0.5,
            seed: 0,
        };
        let xent = LossKind::CategoricalCrossentropy;
        let (one, _) = train_on(net.clone(), &x, &y, xent, &cfg(1)).unwrap();
        let (two, _) = train_on(net.clone(), &x, &y, xent, &cfg(2)).unwrap();
        let d1 = one.weight(1).get(0, 1);
        let d2 = two.weight(1).get(0, 1) - d1;
        assert!((d2 / d1 - 1.5).abs() < 1e-5, "{}", d2 / d1);
    }

    fn with_ones(x: &Matrix) -> Matrix {
        Matrix::from_fn(x.rows(), x.cols() + 1, |r, c| if c < x.cols() { x.get(r, c) } else { 1.0 })
    }

    /// Full-batch gradient descent from `W0` on least squares converges to the
    /// minimizer closest to `W0`; with the bias as a weight on a constant
    /// input that is the closed-form anchored solution on `[x, 1]`.
    fn converges_to_closed_form(n: usize, d: usize, seed: u64) {
        let (x, y) = regression_problem(n, d, seed);
        let mut net = Mlp::init(&[d, 2], Activation::Identity, Activation::Identity, seed + 1).unwrap();
        net.biases_mut()[0] = vec![0.3, -0.2];
        let anchor = Matrix::from_fn(d + 1, 2, |r, c| {
            if r < d {
                net.weight(1).get(r, c)
            } else {
                net.bias(1)[c]
            }
        });
        let exact = anchored_least_squares(&with_ones(&x), &y, &anchor, 1e-12).unwrap().w;
        let cfg = TrainConfig {
            epochs: 20_000,
            batch_size: n,
            lr0: 0.05,
            lr_decay: 1.0,
            momentum: 0.0,
            seed: 0,
        };
        let (fit, hist) = train_on(net, &x, &y, LossKind::SquaredError, &cfg).unwrap();
        let (lead, trail) = hist.leading_trailing_loss(100).unwrap();
        assert!(trail <= lead);
        for c in 0..2 {
            for r in 0..d {
                assert!((fit.weight(1).get(r, c) - exact.get(r, c)).abs() <= 1e-6);
            }
            assert!((fit.bias(1)[c] - exact.get(d, c)).abs() <= 1e-6);
        }
    }

    #[test]
    fn full_batch_overdetermined_reaches_closed_form() {
        converges_to_closed_form(40, 4, 3);
    }

    #[test]
    fn full_batch_underdetermined_reaches_anchored_solution() {
        converges_to_closed_form(6, 9, 5);
    }

    #[test]
    fn divergence_is_reported_with_epoch() {
        let (x, y) = regression_problem(30, 3, 2);
        let x = x.scale(100.0);
        let net = Mlp::init(&[3, 2], Activation::Identity, Activation::Identity, 1).unwrap();
        let cfg = TrainConfig {
            epochs: 50,
            lr0: 1.0,
            ..TrainConfig::default()
        };
        match train_on(net, &x, &y, LossKind::SquaredError, &cfg) {
            Err(Error::Diverged { epoch, .. }) => assert!(epoch < 50),
            other => panic!("expected divergence, got {other:?}"),
        }
    }

    #[test]
    fn same_seed_same_weights() {
        let (x, y) = regression_problem(50, 5, 4);
        let net = Mlp::init(&[5, 6, 2], Activation::Relu, Activation::Identity, 3).unwrap();
        let cfg = TrainConfig::with_epochs(5, 17);
        let a = train_on(net.clone(), &x, &y, LossKind::SquaredError, &cfg).unwrap().0;
        let b = train_on(net.clone(), &x, &y, LossKind::SquaredError, &cfg).unwrap().0;
        assert_eq!(a, b);
        let other = TrainConfig::with_epochs(5, 18);
        assert_ne!(a, train_on(net, &x, &y, LossKind::SquaredError, &other).unwrap().0);
    }

    #[test]
    fn rejects_bad_config() {
        let bad = TrainConfig {
            momentum: 1.0,
            ..TrainConfig::default()
        };
        assert!(bad.validate().is_err());
        let bad = TrainConfig {
            lr_decay: 0.0,
            ..TrainConfig::default()
        };
        assert!(bad.validate().is_err());
    }
}
