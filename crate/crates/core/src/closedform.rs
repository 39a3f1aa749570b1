//! Closed-form linear models on random ReLU features.
//!
//! Each model is the least-squares fit of one-hot targets on fixed random
//! features, picked among all minimizers as the one nearest a random anchor:
//! `W = anchor + Φ⁺ (Y − Φ·anchor)`. Varying the anchor norm sweeps the weight
//! norm of otherwise equally good training-set fits.

use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::dataset::{Dataset, SMALL_PIXELS};
use crate::network::{Activation, LossKind, Mlp};
use crate::numkit::{derive_seed, frobenius_norm, norm2, svd, Matrix, Rng, Svd, DEFAULT_PINV_TOL};
use crate::sweep::{RunRecord, RunStatus};
use crate::{Error, Result};

/// Fixed random map `x ↦ relu(x·proj + bias)`.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMap {
    pub dim: usize,
    /// `in_dim x dim`.
    pub proj: Matrix,
    pub bias: Vec<f64>,
    pub seed: u64,
}

impl FeatureMap {
    /// Feature rows for every row of `x`.
    pub fn features(&self, x: &Matrix) -> Result<Matrix> {
        let mut phi = x.matmul(&self.proj)?;
        for r in 0..phi.rows() {
            for (v, b) in phi.row_mut(r).iter_mut().zip(&self.bias) {
                *v = (*v + b).max(0.0);
            }
        }
        Ok(phi)
    }
}

/// Random feature map over 7×7 inputs.
pub fn build_feature_map(seed: u64, dim: usize) -> Result<FeatureMap> {
    build_feature_map_for(seed, SMALL_PIXELS, dim)
}

/// Projection entries are `N(0, 1/√in_dim)` (standard deviation), biases `N(0, 1)`.
pub fn build_feature_map_for(seed: u64, in_dim: usize, dim: usize) -> Result<FeatureMap> {
    if dim == 0 || in_dim == 0 {
        return Err(Error::Parameter(format!(
            "feature map needs positive sizes, got {in_dim} -> {dim}"
        )));
    }
    let mut rng = Rng::new(seed);
    let proj = rng.normal_matrix(in_dim, dim, 0.0, 1.0 / (in_dim as f64).sqrt());
    let bias = rng.normal_vec(dim, 0.0, 1.0);
    Ok(FeatureMap { dim, proj, bias, seed })
}

/// Closed-form solution plus the provenance needed to rebuild it.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearSolution {
    /// `d x c`.
    pub w: Matrix,
    pub anchor_norm: f64,
    pub feature_seed: u64,
    pub anchor_seed: u64,
    /// Numerical rank of Φ at the solver tolerance.
    pub rank: usize,
}

/// SVD of Φ, factored once and reused for every anchor.
#[derive(Debug, Clone)]
pub struct AnchoredSolver {
    phi: Matrix,
    svd: Svd,
    rank: usize,
}

impl AnchoredSolver {
    pub fn new(phi: &Matrix, tol: f64) -> Result<Self> {
        if !(tol > 0.0) {
            return Err(Error::Parameter(format!("pseudoinverse tol must be > 0, got {tol}")));
        }
        let svd = svd(phi)?;
        let rank = svd.rank(tol);
        Ok(AnchoredSolver {
            phi: phi.clone(),
            svd,
            rank,
        })
    }

    pub fn rank(&self) -> usize {
        self.rank
    }

    /// `Φ⁺ r` without forming `Φ⁺`.
    fn apply_pinv(&self, r: &Matrix) -> Result<Matrix> {
        let k = self.rank;
        let mut coef = self.svd.u.t_matmul(r)?;
        for i in 0..coef.rows() {
            let s = if i < k { 1.0 / self.svd.s[i] } else { 0.0 };
            coef.row_mut(i).iter_mut().for_each(|v| *v *= s);
        }
        self.svd.v.matmul(&coef)
    }

    /// Least-squares minimizer of `‖Φ W − y‖_F` closest to `anchor`.
    pub fn solve(&self, y: &Matrix, anchor: &Matrix) -> Result<Matrix> {
        let (n, d) = self.phi.shape();
        if y.rows() != n || anchor.rows() != d || anchor.cols() != y.cols() {
            return Err(Error::Shape(format!(
                "phi {n}x{d}, targets {}x{}, anchor {}x{}",
                y.rows(),
                y.cols(),
                anchor.rows(),
                anchor.cols()
            )));
        }
        let residual = y.sub(&self.phi.matmul(anchor)?)?;
        anchor.add(&self.apply_pinv(&residual)?)
    }
}

/// `anchor + Φ⁺ (y − Φ·anchor)`; seeds are left at 0 for the caller to fill.
pub fn anchored_least_squares(
    phi: &Matrix,
    y: &Matrix,
    anchor: &Matrix,
    tol: f64,
) -> Result<LinearSolution> {
    if phi.rows() != y.rows() || phi.cols() != anchor.rows() || y.cols() != anchor.cols() {
        return Err(Error::Shape(format!(
            "phi {}x{}, targets {}x{}, anchor {}x{}",
            phi.rows(),
            phi.cols(),
            y.rows(),
            y.cols(),
            anchor.rows(),
            anchor.cols()
        )));
    }
    let solver = AnchoredSolver::new(phi, tol)?;
    Ok(LinearSolution {
        w: solver.solve(y, anchor)?,
        anchor_norm: frobenius_norm(anchor)?,
        feature_seed: 0,
        anchor_seed: 0,
        rank: solver.rank(),
    })
}

/// Random Gaussian direction rescaled to Frobenius norm `target_norm`.
pub fn make_anchor(seed: u64, d: usize, c: usize, target_norm: f64) -> Result<Matrix> {
    if !(target_norm > 0.0) || !target_norm.is_finite() {
        return Err(Error::Parameter(format!("anchor norm must be > 0, got {target_norm}")));
    }
    let dir = Rng::new(seed).normal_matrix(d, c, 0.0, 1.0);
    let norm = frobenius_norm(&dir)?;
    Ok(dir.scale(target_norm / norm))
}

/// Mean over the first `min(cap, n)` feature rows of `‖∂ softmax(φW) / ∂φ‖_F`.
///
/// Per example the Jacobian is `W·S` with `S` the softmax Jacobian, and
/// `‖W S‖_F² = Σ_j s_jᵀ (WᵀW) s_j`, so only the `c x c` Gram matrix is needed.
pub fn softmax_sharpness_of_linear(w: &Matrix, features: &Matrix, sample_cap: usize) -> Result<f64> {
    if features.cols() != w.rows() {
        return Err(Error::Shape(format!(
            "features have {} columns, weights have {} rows",
            features.cols(),
            w.rows()
        )));
    }
    let k = sample_cap.min(features.rows());
    if k == 0 {
        return Err(Error::Parameter("softmax sharpness needs at least one input".into()));
    }
    let c = w.cols();
    let gram = w.t_matmul(w)?;
    let logits = features.select_rows(&(0..k).collect::<Vec<_>>()).matmul(w)?;
    let mut a = vec![0.0; c];
    let mut s = vec![0.0; c];
    let mut gs = vec![0.0; c];
    let mut total = 0.0;
    for r in 0..k {
        let z = logits.row(r);
        let max = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let mut sum = 0.0;
        for (ai, zi) in a.iter_mut().zip(z) {
            *ai = (zi - max).exp();
            sum += *ai;
        }
        a.iter_mut().for_each(|v| *v /= sum);
        let mut sq = 0.0;
        for j in 0..c {
            for (i, si) in s.iter_mut().enumerate() {
                *si = a[j] * (if i == j { 1.0 } else { 0.0 } - a[i]);
            }
            for (g, row) in gs.iter_mut().zip(0..c) {
                *g = gram.row(row).iter().zip(&s).map(|(x, y)| x * y).sum();
            }
            sq += s.iter().zip(&gs).map(|(x, y)| x * y).sum::<f64>();
        }
        total += sq.max(0.0).sqrt();
    }
    Ok(total / k as f64)
}

/// The 1-layer softmax network whose sharpness equals
/// [`softmax_sharpness_of_linear`] of `w`.
pub fn as_softmax_net(w: &Matrix) -> Result<Mlp> {
    Mlp::from_parts(
        &[w.rows(), w.cols()],
        vec![w.clone()],
        vec![vec![0.0; w.cols()]],
        Activation::Identity,
        Activation::Softmax,
    )
}

/// Mean per-example squared error and argmax accuracy of `Φ W`.
pub fn evaluate_linear(phi: &Matrix, w: &Matrix, y_onehot: &Matrix, labels: &[u8]) -> Result<(f64, f64)> {
    let n = phi.rows();
    if n == 0 || y_onehot.rows() != n || labels.len() != n || y_onehot.cols() != w.cols() {
        return Err(Error::Shape(format!(
            "{n} feature rows, {}x{} targets, {} labels",
            y_onehot.rows(),
            y_onehot.cols(),
            labels.len()
        )));
    }
    let pred = phi.matmul(w)?;
    let mut loss = 0.0;
    let mut correct = 0usize;
    for r in 0..n {
        let o = pred.row(r);
        loss += LossKind::SquaredError.value(o, y_onehot.row(r));
        let mut best = 0;
        for (i, &v) in o.iter().enumerate() {
            if v > o[best] {
                best = i;
            }
        }
        if best == labels[r] as usize {
            correct += 1;
        }
    }
    Ok((loss / n as f64, correct as f64 / n as f64))
}

/// Grid and seeds of a linear sweep.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinearSweepConfig {
    pub dims: Vec<usize>,
    pub norm_min: f64,
    pub norm_max: f64,
    /// Total number of models, spread as evenly as possible over `dims`.
    pub count: usize,
    pub seed: u64,
    pub sample_cap: usize,
    pub pinv_tol: f64,
}

impl Default for LinearSweepConfig {
    fn default() -> Self {
        LinearSweepConfig {
            dims: vec![300, 800, 1200, 1800],
            norm_min: 0.1,
            norm_max: 1000.0,
            count: 57,
            seed: 0,
            sample_cap: 1000,
            pinv_tol: DEFAULT_PINV_TOL,
        }
    }
}

/// One point of the linear grid.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LinearPoint {
    pub index: usize,
    pub dim: usize,
    pub anchor_norm: f64,
    pub feature_seed: u64,
    pub anchor_seed: u64,
}

const FEATURE_KEY: u64 = 1;
const ANCHOR_KEY: u64 = 2;

impl LinearSweepConfig {
    fn validate(&self) -> Result<()> {
        if self.dims.is_empty() || self.dims.contains(&0) {
            return Err(Error::Config("linear sweep needs positive feature dims".into()));
        }
        if !(self.norm_min > 0.0 && self.norm_max >= self.norm_min && self.norm_max.is_finite()) {
            return Err(Error::Config(format!(
                "anchor norms must satisfy 0 < min <= max, got [{}, {}]",
                self.norm_min, self.norm_max
            )));
        }
        if self.count < self.dims.len() {
            return Err(Error::Config(format!(
                "count {} is smaller than the number of dims {}",
                self.count,
                self.dims.len()
            )));
        }
        if self.sample_cap == 0 || !(self.pinv_tol > 0.0) {
            return Err(Error::Config("sample cap and pinv tol must be positive".into()));
        }
        Ok(())
    }

    /// Grid points in sweep order: dims as listed, each with its own
    /// log-spaced norms; leftover counts go to the first dims.
    pub fn points(&self) -> Result<Vec<LinearPoint>> {
        self.validate()?;
        let per = self.count / self.dims.len();
        let extra = self.count % self.dims.len();
        let (lo, hi) = (self.norm_min.ln(), self.norm_max.ln());
        let mut out = Vec::with_capacity(self.count);
        for (di, &dim) in self.dims.iter().enumerate() {
            let k = per + usize::from(di < extra);
            let feature_seed = derive_seed(self.seed, &[FEATURE_KEY, dim as u64]);
            for i in 0..k {
                let t = if k == 1 { 0.0 } else { i as f64 / (k - 1) as f64 };
                let anchor_norm = match i {
                    0 => self.norm_min,
                    _ if i + 1 == k => self.norm_max,
                    _ => (lo + t * (hi - lo)).exp(),
                };
                out.push(LinearPoint {
                    index: out.len(),
                    dim,
                    anchor_norm,
                    feature_seed,
                    anchor_seed: derive_seed(self.seed, &[ANCHOR_KEY, dim as u64, i as u64]),
                });
            }
        }
        Ok(out)
    }
}

/// Per-dim summary, including the measured rank of the training features.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DimSummary {
    pub dim: usize,
    pub feature_seed: u64,
    pub rank: usize,
    pub train_examples: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LinearSweep {
    pub records: Vec<RunRecord>,
    pub dims: Vec<DimSummary>,
}

pub const LINEAR_FAMILY: &str = "linear";
pub const LINEAR_BASIS: &str = "train:softmax";

struct DimContext {
    train_phi: Matrix,
    test_phi: Matrix,
    solver: AnchoredSolver,
}

impl DimContext {
    fn build(ds: &Dataset, dim: usize, feature_seed: u64, tol: f64) -> Result<Self> {
        let map = build_feature_map_for(feature_seed, ds.dim(), dim)?;
        let train_phi = map.features(&ds.train_x)?;
        let test_phi = map.features(&ds.test_x)?;
        let solver = AnchoredSolver::new(&train_phi, tol)?;
        Ok(DimContext {
            train_phi,
            test_phi,
            solver,
        })
    }

    fn record(&self, ds: &Dataset, cfg: &LinearSweepConfig, p: &LinearPoint) -> Result<RunRecord> {
        let start = Instant::now();
        let c = ds.train_y_onehot.cols();
        let anchor = make_anchor(p.anchor_seed, p.dim, c, p.anchor_norm)?;
        let w = self.solver.solve(&ds.train_y_onehot, &anchor)?;
        let raw = norm2(w.as_slice());
        let sharpness = softmax_sharpness_of_linear(&w, &self.train_phi, cfg.sample_cap)?;
        let (test_loss, test_acc) = evaluate_linear(&self.test_phi, &w, &ds.test_y_onehot, &ds.test_y)?;
        let (train_loss, train_acc) =
            evaluate_linear(&self.train_phi, &w, &ds.train_y_onehot, &ds.train_y)?;
        Ok(RunRecord {
            family: LINEAR_FAMILY.into(),
            depth: 0,
            param_target: p.index,
            units: p.dim,
            realized_params: w.rows() * w.cols(),
            seed_init: p.anchor_seed,
            seed_shuffle: p.feature_seed,
            raw_norm: raw,
            normalized_norm: raw / ((w.rows() * w.cols()) as f64).sqrt(),
            sharpness,
            sharpness_basis: LINEAR_BASIS.into(),
            test_acc,
            test_loss,
            train_acc,
            train_loss,
            status: RunStatus::Ok,
            wall_time_s: start.elapsed().as_secs_f64(),
        })
    }
}

/// Fits every grid point. Each feature dim is factored once; records come
/// back in grid order.
pub fn run_linear_sweep(ds: &Dataset, cfg: &LinearSweepConfig) -> Result<LinearSweep> {
    let points = cfg.points()?;
    let mut records = Vec::with_capacity(points.len());
    let mut dims = Vec::new();
    let mut i = 0;
    while i < points.len() {
        let dim = points[i].dim;
        let ctx = DimContext::build(ds, dim, points[i].feature_seed, cfg.pinv_tol)?;
        dims.push(DimSummary {
            dim,
            feature_seed: points[i].feature_seed,
            rank: ctx.solver.rank(),
            train_examples: ds.n_train(),
        });
        while i < points.len() && points[i].dim == dim {
            records.push(ctx.record(ds, cfg, &points[i])?);
            i += 1;
        }
    }
    Ok(LinearSweep { records, dims })
}

/// Recomputes the single grid point `index` from scratch.
pub fn replay_linear_point(ds: &Dataset, cfg: &LinearSweepConfig, index: usize) -> Result<RunRecord> {
    let points = cfg.points()?;
    let p = points.get(index).ok_or_else(|| {
        Error::Parameter(format!("grid index {index} outside 0..{}", points.len()))
    })?;
    DimContext::build(ds, p.dim, p.feature_seed, cfg.pinv_tol)?.record(ds, cfg, p)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::network::sharpness;

    #[test]
    fn feature_map_is_seeded_and_nonnegative() {
        let a = build_feature_map(3, 20).unwrap();
        assert_eq!(a, build_feature_map(3, 20).unwrap());
        assert_ne!(a, build_feature_map(4, 20).unwrap());
        let f0 = a.features(&Matrix::zeros(1, 49)).unwrap();
        for (v, b) in f0.row(0).iter().zip(&a.bias) {
            assert_eq!(*v, b.max(0.0));
        }
        let x = Rng::new(1).normal_matrix(5, 49, 0.0, 1.0);
        assert!(a.features(&x).unwrap().as_slice().iter().all(|&v| v >= 0.0));
        assert!(build_feature_map(1, 0).is_err());
    }

    #[test]
    fn feature_map_moments() {
        let m = build_feature_map(9, 4000).unwrap();
        let p = m.proj.as_slice();
        let var = p.iter().map(|v| v * v).sum::<f64>() / p.len() as f64;
        assert!((var - 1.0 / 49.0).abs() < 0.05 / 49.0, "proj variance {var}");
        let bvar = m.bias.iter().map(|v| v * v).sum::<f64>() / m.bias.len() as f64;
        assert!((bvar - 1.0).abs() < 0.08, "bias variance {bvar}");
    }

    #[test]
    fn square_invertible_ignores_anchor() {
        let phi = Matrix::from_rows(&[[2.0, 1.0], [1.0, 3.0]]).unwrap();
        let y = Matrix::from_rows(&[[1.0], [2.0]]).unwrap();
        let exact = Matrix::from_rows(&[[0.2], [0.6]]).unwrap();
        for seed in 0..3 {
            let anchor = make_anchor(seed, 2, 1, 10.0).unwrap();
            let sol = anchored_least_squares(&phi, &y, &anchor, 1e-10).unwrap();
            assert!(sol.w.max_abs_diff(&exact) < 1e-12);
            assert_eq!(sol.rank, 2);
        }
    }

    #[test]
    fn minimizer_anchor_is_fixed_point() {
        let mut rng = Rng::new(5);
        let phi = rng.normal_matrix(6, 10, 0.0, 1.0);
        let anchor = rng.normal_matrix(10, 3, 0.0, 1.0);
        let y = phi.matmul(&anchor).unwrap();
        let sol = anchored_least_squares(&phi, &y, &anchor, 1e-10).unwrap();
        assert!(sol.w.max_abs_diff(&anchor) < 1e-10);
    }

    #[test]
    fn anchor_norm_is_exact_and_direction_fixed() {
        for target in [0.1, 1.0, 1000.0] {
            let a = make_anchor(11, 30, 10, target).unwrap();
            assert!((frobenius_norm(&a).unwrap() - target).abs() <= 1e-12 * target.max(1.0));
        }
        let small = make_anchor(11, 4, 3, 0.5).unwrap();
        let big = make_anchor(11, 4, 3, 50.0).unwrap();
        assert!(small.scale(100.0).max_abs_diff(&big) < 1e-12);
        assert!(make_anchor(1, 2, 2, 0.0).is_err());
    }

    #[test]
    fn softmax_sharpness_matches_network() {
        let mut rng = Rng::new(21);
        let w = rng.normal_matrix(12, 10, 0.0, 0.7);
        let phi = rng.normal_matrix(15, 12, 0.0, 1.0).map(|v| v.max(0.0));
        let net = as_softmax_net(&w).unwrap();
        for cap in [1, 7, 15, 100] {
            let ours = softmax_sharpness_of_linear(&w, &phi, cap).unwrap();
            let theirs = sharpness(&net, &phi, cap).unwrap();
            assert!((ours - theirs).abs() <= 1e-12 * theirs.max(1.0), "{ours} vs {theirs}");
        }
        let zero = Matrix::zeros(12, 10);
        assert_eq!(softmax_sharpness_of_linear(&zero, &phi, 5).unwrap(), 0.0);
        assert!(softmax_sharpness_of_linear(&w, &Matrix::zeros(3, 11), 5).is_err());
    }

    #[test]
    fn grid_layout() {
        let cfg = LinearSweepConfig::default();
        let pts = cfg.points().unwrap();
        assert_eq!(pts.len(), 57);
        let per_dim: Vec<usize> = cfg
            .dims
            .iter()
            .map(|&d| pts.iter().filter(|p| p.dim == d).count())
            .collect();
        assert_eq!(per_dim, vec![15, 14, 14, 14]);
        for d in &cfg.dims {
            let norms: Vec<f64> = pts.iter().filter(|p| p.dim == *d).map(|p| p.anchor_norm).collect();
            assert_eq!(norms[0], 0.1);
            assert_eq!(*norms.last().unwrap(), 1000.0);
            let ratios: Vec<f64> = norms.windows(2).map(|w| w[1] / w[0]).collect();
            for r in &ratios {
                assert!((r / ratios[0] - 1.0).abs() < 1e-9);
            }
        }
        assert!(pts.iter().enumerate().all(|(i, p)| p.index == i));
        let bad = LinearSweepConfig {
            norm_min: 0.0,
            ..LinearSweepConfig::default()
        };
        assert!(bad.points().is_err());
    }

    #[test]
    fn evaluate_linear_counts() {
        let phi = Matrix::identity(3);
        let w = Matrix::from_rows(&[[1.0, 0.0], [0.0, 1.0], [1.0, 0.0]]).unwrap();
        let y = Matrix::from_rows(&[[1.0, 0.0], [0.0, 1.0], [0.0, 1.0]]).unwrap();
        let (loss, acc) = evaluate_linear(&phi, &w, &y, &[0, 1, 1]).unwrap();
        assert!((loss - 2.0 / 3.0).abs() < 1e-15);
        assert!((acc - 2.0 / 3.0).abs() < 1e-15);
    }
}
