//! Cross-module invariants as randomized properties.

use proptest::prelude::*;

use sharplab::closedform::{anchored_least_squares, as_softmax_net, make_anchor, softmax_sharpness_of_linear};
use sharplab::dataset::{make_split, read_cache, write_cache};
use sharplab::network::{
    backward, delta_backward, jacobian, jacobian_with, sharpness, weight_norm, Activation, JacobianEndpoint,
    LossKind, Mlp,
};
use sharplab::numkit::{frobenius_norm, pseudoinverse, Matrix, Rng};
use sharplab::sweep::{param_count, solve_units, DEPTHS};
use sharplab::trainer::{train_on, TrainConfig};

fn families() -> [(Activation, Activation, LossKind); 3] {
    [
        (Activation::Tanh, Activation::Softmax, LossKind::CategoricalCrossentropy),
        (Activation::Relu, Activation::Softmax, LossKind::CategoricalCrossentropy),
        (Activation::Relu, Activation::Identity, LossKind::SquaredError),
    ]
}

fn random_net(rng: &mut Rng, fam: (Activation, Activation, LossKind), depth: usize) -> Mlp {
    let mut sizes = vec![1 + (rng.next_u64() % 8) as usize];
    for _ in 0..depth {
        sizes.push(1 + (rng.next_u64() % 8) as usize);
    }
    sizes.push(2 + (rng.next_u64() % 5) as usize);
    let mut net = Mlp::init(&sizes, fam.0, fam.1, rng.next_u64()).unwrap();
    for b in net.biases_mut() {
        for v in b.iter_mut() {
            *v = 0.3 * rng.standard_normal();
        }
    }
    net
}

fn rel(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1.0)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn frobenius_matches_trace(seed in any::<u64>()) {
        let m = Rng::new(seed).normal_matrix(6, 6, 0.0, 1.0);
        let f = frobenius_norm(&m).unwrap();
        let t = m.t_matmul(&m).unwrap().trace().sqrt();
        prop_assert!(rel(f, t) <= 1e-12);
    }

    #[test]
    fn beta_gradients_equal_delta_gradients(seed in any::<u64>(), fam in 0usize..3, depth in 0usize..4) {
        let mut rng = Rng::new(seed);
        let fam = families()[fam];
        let net = random_net(&mut rng, fam, depth);
        let x = rng.normal_vec(net.input_dim(), 0.0, 1.0);
        let mut y = vec![0.0; net.output_dim()];
        let k = (rng.next_u64() as usize) % y.len();
        y[k] = 1.0;
        let t = net.forward(&x).unwrap();
        let a = backward(&net, &t, &y, fam.2).unwrap().gradients();
        let b = delta_backward(&net, &t, &y, fam.2).unwrap();
        prop_assert!(a.max_abs_diff(&b) <= 1e-12);
    }

    #[test]
    fn softmax_jacobian_rows_sum_to_zero(seed in any::<u64>(), relu in any::<bool>(), depth in 0usize..4) {
        let mut rng = Rng::new(seed);
        let fam = families()[usize::from(relu)];
        let net = random_net(&mut rng, fam, depth);
        let x = rng.normal_vec(net.input_dim(), 0.0, 1.0);
        let j = jacobian(&net, &x).unwrap().beta0;
        for i in 0..j.rows() {
            let s: f64 = j.row(i).iter().sum();
            prop_assert!(s.abs() <= 1e-10, "row {} sums to {}", i, s);
        }
    }

    #[test]
    fn linear_sharpness_is_weight_norm(seed in any::<u64>(), n_in in 1usize..12, n_out in 1usize..6, c in -10.0f64..10.0) {
        let mut rng = Rng::new(seed);
        let net = Mlp::init(&[n_in, n_out], Activation::Tanh, Activation::Identity, rng.next_u64()).unwrap();
        let x = rng.normal_matrix(7, n_in, 0.0, 3.0);
        let s = sharpness(&net, &x, 1000).unwrap();
        prop_assert!((s - weight_norm(&net).raw_l2).abs() <= 1e-12);

        let mut scaled = net.clone();
        for w in scaled.weights_mut() {
            *w = w.scale(c);
        }
        let sc = sharpness(&scaled, &x, 1000).unwrap();
        prop_assert!((sc - c.abs() * s).abs() <= 1e-12 * s.max(1.0));
    }

    #[test]
    fn softmax_shift_leaves_jacobian_unchanged(seed in any::<u64>(), shift in -20.0f64..20.0) {
        let mut rng = Rng::new(seed);
        let w = rng.normal_matrix(5, 4, 0.0, 1.0);
        let mut net = as_softmax_net(&w).unwrap();
        let x = rng.normal_vec(5, 0.0, 1.0);
        let before = jacobian(&net, &x).unwrap().beta0;
        for b in net.biases_mut() {
            for v in b.iter_mut() {
                *v += shift;
            }
        }
        let after = jacobian(&net, &x).unwrap().beta0;
        prop_assert!(before.max_abs_diff(&after) <= 1e-12);
    }

    #[test]
    fn linear_softmax_sharpness_matches_network(seed in any::<u64>(), d in 1usize..10, c in 2usize..6) {
        let mut rng = Rng::new(seed);
        let w = rng.normal_matrix(d, c, 0.0, 2.0);
        let phi = rng.normal_matrix(9, d, 0.0, 1.0);
        let direct = softmax_sharpness_of_linear(&w, &phi, 1000).unwrap();
        let net = sharpness(&as_softmax_net(&w).unwrap(), &phi, 1000).unwrap();
        prop_assert!(rel(direct, net) <= 1e-12);
    }

    #[test]
    fn logits_endpoint_of_linear_net_is_weight(seed in any::<u64>(), d in 1usize..8, c in 2usize..5) {
        let mut rng = Rng::new(seed);
        let w = rng.normal_matrix(d, c, 0.0, 1.0);
        let net = as_softmax_net(&w).unwrap();
        let x = rng.normal_vec(d, 0.0, 1.0);
        let j = jacobian_with(&net, &x, JacobianEndpoint::Logits).unwrap().beta0;
        prop_assert!(j.max_abs_diff(&w) <= 1e-15);
    }

    #[test]
    fn anchored_solution_properties(seed in any::<u64>(), n in 2usize..14, d in 2usize..14, c in 1usize..4) {
        let mut rng = Rng::new(seed);
        let phi = rng.normal_matrix(n, d, 0.0, 1.0);
        let y = rng.normal_matrix(n, c, 0.0, 1.0);
        let anchor = make_anchor(rng.next_u64(), d, c, 3.0).unwrap();
        let w = anchored_least_squares(&phi, &y, &anchor, 1e-10).unwrap().w;
        // Normal equations.
        let grad = phi.t_matmul(&phi.matmul(&w).unwrap().sub(&y).unwrap()).unwrap();
        prop_assert!(grad.max_abs() <= 1e-8 * (1.0 + w.max_abs()));
        // W - anchor lies in the row space of phi.
        let delta = w.sub(&anchor).unwrap();
        let proj = pseudoinverse(&phi, 1e-10).unwrap().matmul(&phi.matmul(&delta).unwrap()).unwrap();
        prop_assert!(proj.max_abs_diff(&delta) <= 1e-8 * (1.0 + delta.max_abs()));
        // Full column rank: the anchor drops out.
        if n >= d + 2 {
            let other = make_anchor(rng.next_u64(), d, c, 50.0).unwrap();
            let w2 = anchored_least_squares(&phi, &y, &other, 1e-10).unwrap().w;
            prop_assert!(w.max_abs_diff(&w2) <= 1e-8);
        }
    }

    #[test]
    fn realized_params_monotone(depth in 1usize..7, a in 500usize..20000, b in 500usize..20000) {
        let (lo, hi) = (a.min(b), a.max(b));
        let p = |t| param_count(depth, solve_units(depth, t, 49, 10).unwrap(), 49, 10);
        prop_assert!(p(lo) <= p(hi));
    }

    #[test]
    fn cache_round_trip(seed in any::<u64>(), n in 3usize..30) {
        let mut rng = Rng::new(seed);
        let images = Matrix::from_fn(n, 49, |_, _| (rng.next_u64() % 256) as f64 / 255.0);
        let labels: Vec<u8> = (0..n).map(|i| (i % 10) as u8).collect();
        let ds = make_split(&images, &labels, 1 + (seed as usize) % (n - 1), seed).unwrap();
        let back = read_cache(&write_cache(&ds)).unwrap();
        prop_assert_eq!(&back, &ds);
        // Nothing is lost or duplicated by the split.
        let mut all: Vec<usize> = ds.train_indices.iter().chain(&ds.test_indices).copied().collect();
        all.sort_unstable();
        prop_assert_eq!(all, (0..n).collect::<Vec<_>>());
    }
}

#[test]
fn table_grid_is_solvable() {
    for &depth in &DEPTHS {
        let mut last = 0;
        for target in (1000..=14000).step_by(1000) {
            let u = solve_units(depth, target, 49, 10).unwrap();
            assert!(u >= last);
            last = u;
        }
    }
}

#[test]
fn training_is_bit_reproducible() {
    let mut rng = Rng::new(11);
    let x = rng.normal_matrix(40, 6, 0.0, 1.0);
    let labels: Vec<usize> = (0..40).map(|i| i % 3).collect();
    let y = Matrix::from_fn(40, 3, |r, c| f64::from(u8::from(labels[r] == c)));
    let cfg = TrainConfig::with_epochs(30, 5);
    let run = || {
        let net = Mlp::init(&[6, 8, 3], Activation::Tanh, Activation::Softmax, 2).unwrap();
        train_on(net, &x, &y, LossKind::CategoricalCrossentropy, &cfg).unwrap()
    };
    let (a, ha) = run();
    let (b, hb) = run();
    assert_eq!(a, b);
    assert_eq!(ha.loss, hb.loss);
    let (lead, trail) = ha.leading_trailing_loss(10).unwrap();
    assert!(trail <= lead);
}
