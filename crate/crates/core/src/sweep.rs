//! Depth × parameter-budget grids of trained networks.
//!
//! Hidden layers all share one width, chosen so the total parameter count is
//! as close as possible to the budget. Every cell gets its own seeds derived
//! from the master seed, so any single cell can be rerun in isolation.

use std::collections::BTreeMap;
use std::str::FromStr;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::dataset::{Dataset, CLASSES, SMALL_PIXELS};
use crate::network::{
    loss_and_accuracy, sharpness_with, weight_norm, Activation, JacobianEndpoint, LossKind, Mlp,
};
use crate::numkit::{derive_seed, pearson, Matrix};
use crate::trainer::{decay_to_hundredth, train, TrainConfig};
use crate::{Error, Result};

pub const PARAM_TARGETS: [usize; 6] = [1000, 5000, 8000, 10000, 12000, 14000];
pub const DEPTHS: [usize; 6] = [1, 2, 3, 4, 5, 6];
pub const CI_PARAM_TARGETS: [usize; 3] = [1000, 8000, 14000];
pub const CI_DEPTHS: [usize; 3] = [1, 3, 6];
pub const CI_EPOCHS: usize = 500;

/// Hidden activation / output activation / loss combination.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Family {
    TanhSoftmaxXent,
    ReluSoftmaxXent,
    ReluLinearSq,
}

impl Family {
    pub const ALL: [Family; 3] = [Family::TanhSoftmaxXent, Family::ReluSoftmaxXent, Family::ReluLinearSq];

    pub fn name(self) -> &'static str {
        match self {
            Family::TanhSoftmaxXent => "tanh_softmax_xent",
            Family::ReluSoftmaxXent => "relu_softmax_xent",
            Family::ReluLinearSq => "relu_linear_sq",
        }
    }

    pub fn hidden(self) -> Activation {
        match self {
            Family::TanhSoftmaxXent => Activation::Tanh,
            _ => Activation::Relu,
        }
    }

    pub fn output(self) -> Activation {
        match self {
            Family::ReluLinearSq => Activation::Identity,
            _ => Activation::Softmax,
        }
    }

    pub fn loss(self) -> LossKind {
        match self {
            Family::ReluLinearSq => LossKind::SquaredError,
            _ => LossKind::CategoricalCrossentropy,
        }
    }

    /// Test metric the family is judged on: accuracy for classifiers, loss for
    /// the regression family.
    pub fn headline_metric(self) -> &'static str {
        match self {
            Family::ReluLinearSq => "test_loss",
            _ => "test_acc",
        }
    }

    fn key(self) -> u64 {
        self as u64 + 1
    }
}

impl FromStr for Family {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Family::ALL
            .into_iter()
            .find(|f| f.name() == s)
            .ok_or_else(|| {
                Error::Config(format!(
                    "unknown family {s:?} (expected tanh_softmax_xent, relu_softmax_xent or relu_linear_sq)"
                ))
            })
    }
}

/// `(in·n + n) + (depth − 1)(n² + n) + (n·out + out)`.
pub fn param_count(depth: usize, units: usize, in_dim: usize, out_dim: usize) -> usize {
    let n = units;
    (in_dim * n + n) + (depth - 1) * (n * n + n) + (n * out_dim + out_dim)
}

/// Hidden width whose parameter count is closest to `param_target`; ties go
/// to the wider net.
pub fn solve_units(depth: usize, param_target: usize, in_dim: usize, out_dim: usize) -> Result<usize> {
    if depth == 0 || in_dim == 0 || out_dim == 0 {
        return Err(Error::Parameter(format!(
            "depth, input and output sizes must be positive (got {depth}, {in_dim}, {out_dim})"
        )));
    }
    if param_target <= out_dim {
        return Err(Error::Parameter(format!(
            "parameter target {param_target} must exceed the output size {out_dim}"
        )));
    }
    // param_count is strictly increasing in n, so walk up to the first width
    // at or past the target and compare it with its predecessor.
    let mut n = 1;
    while param_count(depth, n, in_dim, out_dim) < param_target {
        n += 1;
    }
    if n > 1 {
        let below = param_target - param_count(depth, n - 1, in_dim, out_dim);
        let above = param_count(depth, n, in_dim, out_dim) - param_target;
        if below < above {
            n -= 1;
        }
    }
    Ok(n)
}

/// One cell of the architecture grid.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ArchSpec {
    pub family: Family,
    pub depth: usize,
    pub param_target: usize,
    pub units: usize,
}

impl ArchSpec {
    pub fn new(family: Family, depth: usize, param_target: usize) -> Result<Self> {
        Ok(ArchSpec {
            family,
            depth,
            param_target,
            units: solve_units(depth, param_target, SMALL_PIXELS, CLASSES)?,
        })
    }

    pub fn layer_sizes(&self) -> Vec<usize> {
        let mut sizes = vec![SMALL_PIXELS];
        sizes.extend(std::iter::repeat(self.units).take(self.depth));
        sizes.push(CLASSES);
        sizes
    }

    pub fn realized_params(&self) -> usize {
        param_count(self.depth, self.units, SMALL_PIXELS, CLASSES)
    }
}

/// Outcome of one sweep cell.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RunStatus {
    Ok,
    Diverged,
}

impl RunStatus {
    pub fn name(self) -> &'static str {
        match self {
            RunStatus::Ok => "ok",
            RunStatus::Diverged => "diverged",
        }
    }
}

impl FromStr for RunStatus {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "ok" => Ok(RunStatus::Ok),
            "diverged" => Ok(RunStatus::Diverged),
            _ => Err(Error::Format(format!("unknown run status {s:?}"))),
        }
    }
}

/// One row of the shared results CSV.
///
/// Diverged runs keep their identity and seeds but carry zeros in every
/// measured field.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub family: String,
    pub depth: usize,
    pub param_target: usize,
    pub units: usize,
    pub realized_params: usize,
    pub seed_init: u64,
    pub seed_shuffle: u64,
    pub raw_norm: f64,
    pub normalized_norm: f64,
    pub sharpness: f64,
    pub sharpness_basis: String,
    pub test_acc: f64,
    pub test_loss: f64,
    pub train_acc: f64,
    pub train_loss: f64,
    pub status: RunStatus,
    pub wall_time_s: f64,
}

impl RunRecord {
    pub fn is_ok(&self) -> bool {
        self.status == RunStatus::Ok
    }

    /// Numeric column by CSV name.
    pub fn metric(&self, column: &str) -> Option<f64> {
        Some(match column {
            "depth" => self.depth as f64,
            "param_target" => self.param_target as f64,
            "units" => self.units as f64,
            "realized_params" => self.realized_params as f64,
            "raw_norm" => self.raw_norm,
            "normalized_norm" => self.normalized_norm,
            "sharpness" => self.sharpness,
            "test_acc" => self.test_acc,
            "test_loss" => self.test_loss,
            "train_acc" => self.train_acc,
            "train_loss" => self.train_loss,
            "wall_time_s" => self.wall_time_s,
            _ => return None,
        })
    }
}

/// Which inputs sharpness is averaged over.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SampleSet {
    #[default]
    Train,
    Test,
}

impl FromStr for SampleSet {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(SampleSet::Train),
            "test" => Ok(SampleSet::Test),
            _ => Err(Error::Config(format!("sharpness inputs must be train or test, got {s:?}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Scale {
    Full,
    Ci,
}

impl FromStr for Scale {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "full" => Ok(Scale::Full),
            "ci" => Ok(Scale::Ci),
            _ => Err(Error::Config(format!("scale must be full or ci, got {s:?}"))),
        }
    }
}

/// Everything needed to rerun a family sweep.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepConfig {
    pub family: Family,
    pub master_seed: u64,
    pub depths: Vec<usize>,
    pub param_targets: Vec<usize>,
    /// Hyperparameters shared by every cell; the shuffle seed is replaced per cell.
    pub train: TrainConfig,
    pub sample_cap: usize,
    pub sample_set: SampleSet,
    pub endpoint: JacobianEndpoint,
    pub workers: usize,
}

impl SweepConfig {
    /// Full grid at 5000 epochs, or the reduced CI grid at 500 epochs. The
    /// decay always ends at `lr0 / 100`.
    pub fn new(family: Family, scale: Scale, master_seed: u64) -> Self {
        let (depths, targets, epochs) = match scale {
            Scale::Full => (DEPTHS.to_vec(), PARAM_TARGETS.to_vec(), 5000),
            Scale::Ci => (CI_DEPTHS.to_vec(), CI_PARAM_TARGETS.to_vec(), CI_EPOCHS),
        };
        SweepConfig {
            family,
            master_seed,
            depths,
            param_targets: targets,
            train: TrainConfig::with_epochs(epochs, 0),
            sample_cap: 1000,
            sample_set: SampleSet::Train,
            endpoint: JacobianEndpoint::Outputs,
            workers: 1,
        }
    }

    /// Overrides the epoch count and rescales the decay to match.
    pub fn with_epochs(mut self, epochs: usize) -> Self {
        self.train.epochs = epochs;
        self.train.lr_decay = decay_to_hundredth(epochs);
        self
    }

    pub fn cells(&self) -> Result<Vec<ArchSpec>> {
        let mut out = Vec::new();
        for &d in &self.depths {
            for &p in &self.param_targets {
                out.push(ArchSpec::new(self.family, d, p)?);
            }
        }
        Ok(out)
    }

    /// `(seed_init, seed_shuffle)` for a cell.
    pub fn cell_seeds(&self, depth: usize, param_target: usize) -> (u64, u64) {
        let key = [self.family.key(), depth as u64, param_target as u64];
        (
            derive_seed(self.master_seed, &[key[0], key[1], key[2], 1]),
            derive_seed(self.master_seed, &[key[0], key[1], key[2], 2]),
        )
    }

    /// Label stored in the `sharpness_basis` column, e.g. `train:softmax`.
    pub fn basis_label(&self) -> String {
        let end = match (self.endpoint, self.family.output()) {
            (JacobianEndpoint::Outputs, Activation::Softmax) => "softmax",
            _ => "logits",
        };
        let set = match self.sample_set {
            SampleSet::Train => "train",
            SampleSet::Test => "test",
        };
        format!("{set}:{end}")
    }
}

/// Measured quantities of a trained net.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Measurements {
    pub raw_norm: f64,
    pub normalized_norm: f64,
    pub sharpness: f64,
    pub test_acc: f64,
    pub test_loss: f64,
    pub train_acc: f64,
    pub train_loss: f64,
}

pub fn measure(
    net: &Mlp,
    ds: &Dataset,
    loss: LossKind,
    sample_set: SampleSet,
    sample_cap: usize,
    endpoint: JacobianEndpoint,
) -> Result<Measurements> {
    let norm = weight_norm(net);
    let inputs: &Matrix = match sample_set {
        SampleSet::Train => &ds.train_x,
        SampleSet::Test => &ds.test_x,
    };
    let sharpness = sharpness_with(net, inputs, sample_cap, endpoint)?;
    let (test_loss, test_acc) = loss_and_accuracy(net, &ds.test_x, &ds.test_y_onehot, &ds.test_y, loss)?;
    let (train_loss, train_acc) =
        loss_and_accuracy(net, &ds.train_x, &ds.train_y_onehot, &ds.train_y, loss)?;
    Ok(Measurements {
        raw_norm: norm.raw_l2,
        normalized_norm: norm.normalized,
        sharpness,
        test_acc,
        test_loss,
        train_acc,
        train_loss,
    })
}

/// Initializes, trains and measures one cell. Divergence becomes a flagged
/// record, any other failure an error.
pub fn run_cell(ds: &Dataset, cfg: &SweepConfig, arch: &ArchSpec) -> Result<RunRecord> {
    let start = Instant::now();
    let family = arch.family;
    let (seed_init, seed_shuffle) = cfg.cell_seeds(arch.depth, arch.param_target);
    let net = Mlp::init(&arch.layer_sizes(), family.hidden(), family.output(), seed_init)?;
    let train_cfg = TrainConfig {
        seed: seed_shuffle,
        ..cfg.train
    };
    let mut record = RunRecord {
        family: family.name().into(),
        depth: arch.depth,
        param_target: arch.param_target,
        units: arch.units,
        realized_params: arch.realized_params(),
        seed_init,
        seed_shuffle,
        raw_norm: 0.0,
        normalized_norm: 0.0,
        sharpness: 0.0,
        sharpness_basis: cfg.basis_label(),
        test_acc: 0.0,
        test_loss: 0.0,
        train_acc: 0.0,
        train_loss: 0.0,
        status: RunStatus::Ok,
        wall_time_s: 0.0,
    };
    match train(net, ds, family.loss(), &train_cfg) {
        Ok((trained, _)) => {
            let m = measure(&trained, ds, family.loss(), cfg.sample_set, cfg.sample_cap, cfg.endpoint)?;
            record.raw_norm = m.raw_norm;
            record.normalized_norm = m.normalized_norm;
            record.sharpness = m.sharpness;
            record.test_acc = m.test_acc;
            record.test_loss = m.test_loss;
            record.train_acc = m.train_acc;
            record.train_loss = m.train_loss;
        }
        Err(Error::Diverged { .. }) => record.status = RunStatus::Diverged,
        Err(e) => return Err(e),
    }
    record.wall_time_s = start.elapsed().as_secs_f64();
    Ok(record)
}

/// Runs every cell of the grid on up to `cfg.workers` threads. Output is
/// sorted by `(depth, param_target)` whatever the schedule.
pub fn run_family_sweep(ds: &Dataset, cfg: &SweepConfig) -> Result<Vec<RunRecord>> {
    run_family_sweep_with(ds, cfg, |_| {})
}

/// As [`run_family_sweep`], calling `on_done` as each cell finishes.
pub fn run_family_sweep_with(
    ds: &Dataset,
    cfg: &SweepConfig,
    on_done: impl Fn(&RunRecord) + Sync,
) -> Result<Vec<RunRecord>> {
    cfg.train.validate()?;
    let cells = cfg.cells()?;
    let next = AtomicUsize::new(0);
    let results: Mutex<Vec<Result<RunRecord>>> = Mutex::new(Vec::with_capacity(cells.len()));
    let workers = cfg.workers.clamp(1, cells.len().max(1));
    std::thread::scope(|scope| {
        for _ in 0..workers {
            scope.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::Relaxed);
                let Some(arch) = cells.get(i) else { break };
                let r = run_cell(ds, cfg, arch);
                if let Ok(rec) = &r {
                    on_done(rec);
                }
                results.lock().expect("worker panicked").push(r);
            });
        }
    });
    let mut records = results
        .into_inner()
        .expect("worker panicked")
        .into_iter()
        .collect::<Result<Vec<_>>>()?;
    records.sort_by_key(|r| (r.depth, r.param_target));
    Ok(records)
}

/// Reruns the cell a record came from and returns the fresh record.
pub fn replay_record(ds: &Dataset, cfg: &SweepConfig, record: &RunRecord) -> Result<RunRecord> {
    let family: Family = record.family.parse()?;
    if family != cfg.family {
        return Err(Error::Config(format!(
            "record is from {} but the config is for {}",
            record.family,
            cfg.family.name()
        )));
    }
    let arch = ArchSpec::new(family, record.depth, record.param_target)?;
    let (seed_init, seed_shuffle) = cfg.cell_seeds(record.depth, record.param_target);
    if (seed_init, seed_shuffle) != (record.seed_init, record.seed_shuffle) {
        return Err(Error::Config(
            "record seeds do not derive from this master seed".into(),
        ));
    }
    run_cell(ds, cfg, &arch)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DepthRow {
    pub depth: usize,
    pub runs: usize,
    pub mean_sharpness: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DepthStudy {
    pub rows: Vec<DepthRow>,
    pub r_depth_sharpness: f64,
    /// `None` when some sharpness is not positive.
    pub r_depth_log_sharpness: Option<f64>,
}

impl DepthStudy {
    pub fn mean_at(&self, depth: usize) -> Option<f64> {
        self.rows.iter().find(|r| r.depth == depth).map(|r| r.mean_sharpness)
    }
}

/// Mean sharpness per depth and depth/sharpness correlations over the
/// successful records.
pub fn depth_study(records: &[RunRecord]) -> Result<DepthStudy> {
    let ok: Vec<&RunRecord> = records.iter().filter(|r| r.is_ok()).collect();
    let mut by_depth: BTreeMap<usize, Vec<f64>> = BTreeMap::new();
    for r in &ok {
        by_depth.entry(r.depth).or_default().push(r.sharpness);
    }
    if by_depth.len() < 2 {
        return Err(Error::Parameter(format!(
            "depth study needs at least two depths among successful runs, found {}",
            by_depth.len()
        )));
    }
    let rows = by_depth
        .iter()
        .map(|(&depth, s)| DepthRow {
            depth,
            runs: s.len(),
            mean_sharpness: s.iter().sum::<f64>() / s.len() as f64,
        })
        .collect();
    let depths: Vec<f64> = ok.iter().map(|r| r.depth as f64).collect();
    let sharp: Vec<f64> = ok.iter().map(|r| r.sharpness).collect();
    let r_depth_sharpness = pearson(&depths, &sharp)?;
    let r_depth_log_sharpness = if sharp.iter().all(|&s| s > 0.0) {
        let logs: Vec<f64> = sharp.iter().map(|s| s.ln()).collect();
        pearson(&depths, &logs).ok()
    } else {
        None
    };
    Ok(DepthStudy {
        rows,
        r_depth_sharpness,
        r_depth_log_sharpness,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::make_split;
    use crate::numkit::Rng;

    #[test]
    fn units_examples() {
        assert_eq!(solve_units(4, 8000, 49, 10).unwrap(), 42);
        assert_eq!(solve_units(1, 1000, 49, 10).unwrap(), 17);
        assert_eq!(solve_units(6, 14000, 49, 10).unwrap(), 47);
        assert_eq!(solve_units(6, 1000, 49, 10).unwrap(), 9);
        assert_eq!(param_count(6, 9, 49, 10), 1000);
    }

    #[test]
    fn units_tie_goes_to_wider() {
        // depth 1: params(n) = 60n + 10, so 100 is 30 away from both n=1 and n=2.
        assert_eq!(param_count(1, 1, 49, 10), 70);
        assert_eq!(param_count(1, 2, 49, 10), 130);
        assert_eq!(solve_units(1, 100, 49, 10).unwrap(), 2);
        assert_eq!(solve_units(1, 99, 49, 10).unwrap(), 1);
        // (1, 1000) is the same kind of tie: 970 vs 1030.
        assert_eq!(solve_units(1, 1000, 49, 10).unwrap(), 17);
    }

    #[test]
    fn units_errors() {
        assert!(solve_units(0, 1000, 49, 10).is_err());
        assert!(solve_units(2, 10, 49, 10).is_err());
    }

    #[test]
    fn family_round_trip() {
        for f in Family::ALL {
            assert_eq!(f.name().parse::<Family>().unwrap(), f);
            assert!(f.loss().check_output(f.output()).is_ok());
        }
        assert!("tanh".parse::<Family>().is_err());
    }

    #[test]
    fn grid_sizes() {
        let full = SweepConfig::new(Family::ReluLinearSq, Scale::Full, 1);
        assert_eq!(full.cells().unwrap().len(), 36);
        assert_eq!(full.train.epochs, 5000);
        let ci = SweepConfig::new(Family::ReluLinearSq, Scale::Ci, 1);
        assert_eq!(ci.cells().unwrap().len(), 9);
        assert_eq!(ci.train.epochs, 500);
        assert!((ci.train.lr0 * ci.train.lr_decay.powi(500) / 0.0005 - 1.0).abs() < 1e-9);
    }

    #[test]
    fn cell_seeds_are_distinct_and_stable() {
        let cfg = SweepConfig::new(Family::TanhSoftmaxXent, Scale::Full, 7);
        let mut seen = std::collections::HashSet::new();
        for a in cfg.cells().unwrap() {
            let (i, s) = cfg.cell_seeds(a.depth, a.param_target);
            assert!(seen.insert(i) && seen.insert(s));
        }
        let other = SweepConfig::new(Family::ReluSoftmaxXent, Scale::Full, 7);
        assert_ne!(cfg.cell_seeds(1, 1000), other.cell_seeds(1, 1000));
        assert_eq!(cfg.cell_seeds(3, 8000), cfg.clone().cell_seeds(3, 8000));
    }

    fn toy_dataset() -> Dataset {
        let mut rng = Rng::new(3);
        let n = 120;
        let labels: Vec<u8> = (0..n).map(|i| (i % 10) as u8).collect();
        let x = Matrix::from_fn(n, 49, |r, c| {
            let base = if c % 10 == labels[r] as usize { 0.8 } else { 0.1 };
            base + 0.05 * rng.uniform()
        });
        make_split(&x, &labels, 60, 1).unwrap()
    }

    fn tiny_config(family: Family, workers: usize) -> SweepConfig {
        SweepConfig {
            depths: vec![1, 2],
            param_targets: vec![1000, 2000],
            workers,
            sample_cap: 20,
            ..SweepConfig::new(family, Scale::Ci, 11).with_epochs(3)
        }
    }

    #[test]
    fn sweep_is_schedule_independent_and_replayable() {
        let ds = toy_dataset();
        let serial = run_family_sweep(&ds, &tiny_config(Family::TanhSoftmaxXent, 1)).unwrap();
        let parallel = run_family_sweep(&ds, &tiny_config(Family::TanhSoftmaxXent, 3)).unwrap();
        assert_eq!(serial.len(), 4);
        let strip = |v: &[RunRecord]| {
            v.iter()
                .map(|r| RunRecord {
                    wall_time_s: 0.0,
                    ..r.clone()
                })
                .collect::<Vec<_>>()
        };
        assert_eq!(strip(&serial), strip(&parallel));
        let keys: Vec<(usize, usize)> = serial.iter().map(|r| (r.depth, r.param_target)).collect();
        assert_eq!(keys, vec![(1, 1000), (1, 2000), (2, 1000), (2, 2000)]);
        for r in &serial {
            assert!(r.is_ok());
            assert_eq!(r.sharpness_basis, "train:softmax");
            assert!(r.sharpness > 0.0 && r.test_acc >= 0.0);
        }
        let again = replay_record(&ds, &tiny_config(Family::TanhSoftmaxXent, 1), &serial[2]).unwrap();
        assert_eq!(again.sharpness, serial[2].sharpness);
        assert_eq!(again.test_acc, serial[2].test_acc);
    }

    #[test]
    fn divergence_is_flagged_not_dropped() {
        let ds = toy_dataset();
        let mut cfg = tiny_config(Family::ReluLinearSq, 1);
        cfg.train.lr0 = 1e3;
        cfg.train.momentum = 0.0;
        let recs = run_family_sweep(&ds, &cfg).unwrap();
        assert_eq!(recs.len(), 4);
        assert!(recs.iter().all(|r| r.status == RunStatus::Diverged));
        assert!(recs.iter().all(|r| r.sharpness == 0.0 && r.sharpness_basis == "train:logits"));
    }

    fn rec(depth: usize, sharpness: f64) -> RunRecord {
        RunRecord {
            family: "relu_linear_sq".into(),
            depth,
            param_target: 1000,
            units: 1,
            realized_params: 1,
            seed_init: 0,
            seed_shuffle: 0,
            raw_norm: 1.0,
            normalized_norm: 1.0,
            sharpness,
            sharpness_basis: "train:logits".into(),
            test_acc: 0.5,
            test_loss: 0.5,
            train_acc: 0.5,
            train_loss: 0.5,
            status: RunStatus::Ok,
            wall_time_s: 0.0,
        }
    }

    #[test]
    fn depth_study_summaries() {
        let recs = vec![rec(1, 8.0), rec(1, 6.0), rec(3, 4.0), rec(6, 1.0), rec(6, 0.5)];
        let s = depth_study(&recs).unwrap();
        assert_eq!(s.mean_at(1), Some(7.0));
        assert_eq!(s.mean_at(6), Some(0.75));
        assert!(s.r_depth_sharpness < 0.0);
        assert!(s.r_depth_log_sharpness.unwrap() < 0.0);
        assert!(depth_study(&[rec(2, 1.0), rec(2, 3.0)]).is_err());
        let mut bad = rec(6, 100.0);
        bad.status = RunStatus::Diverged;
        let with_failed = depth_study(&[recs.clone(), vec![bad]].concat()).unwrap();
        assert_eq!(with_failed, s);
    }
}
