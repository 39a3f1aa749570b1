//! `sharplab`: prepare data, train nets, run sweeps and render reports.
//!
//! Failures print one line, `error[<kind>]: <message>`, and exit 1. Usage
//! errors exit 2.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde::Deserialize;
use serde_json::json;

use sharplab::closedform::{run_linear_sweep, LinearSweepConfig};
use sharplab::dataset::{export_csv, load_cache, prepare, save_cache, Dataset};
use sharplab::network::fdcheck::{check_family, CHECK_REL_TOL};
use sharplab::network::{save_model, sidecar_path, Activation, JacobianEndpoint, LossKind, Mlp};
use sharplab::report::{self, correlation_report, default_pairs, family_pairs, figure, render_figure};
use sharplab::sweep::{measure, run_family_sweep_with, Family, SampleSet, Scale, SweepConfig};
use sharplab::trainer::{decay_to_hundredth, train, write_history_csv, TrainConfig};
use sharplab::{numkit::derive_seed, Error};

/// Directory holding the raw MNIST files and the prepared cache.
const DATA_ENV: &str = "SHARPLAB_DATA_DIR";
const DEFAULT_CACHE: &str = "mnist7x7.bin";

#[derive(Parser)]
#[command(name = "sharplab", version, about = "Output-sharpness experiments on downsampled MNIST")]
struct Cli {
    /// TOML file of defaults (epochs, batch_size, lr0, lr_decay, momentum,
    /// sample_cap, sample_set, endpoint, workers); flags take precedence.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Dataset preparation.
    Data {
        #[command(subcommand)]
        command: DataCommand,
    },
    /// Train one network and save it.
    Train(TrainArgs),
    /// Train and measure a family's grid of architectures.
    Sweep(SweepArgs),
    /// Closed-form random-feature linear models.
    LinearSweep(LinearArgs),
    /// Correlation table and figures from a results CSV.
    Report(ReportArgs),
    /// Compare backprop against finite differences on random nets.
    JacobianCheck(CheckArgs),
}

#[derive(Subcommand)]
enum DataCommand {
    /// Downsample to 7x7, split, and write the binary cache.
    Prepare {
        /// Directory with the MNIST IDX files (plain or .gz) [default: $SHARPLAB_DATA_DIR]
        #[arg(long)]
        mnist_dir: Option<PathBuf>,
        /// Cache file [default: $SHARPLAB_DATA_DIR/mnist7x7.bin]
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long, default_value_t = 1000)]
        train_size: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Also export the split as CSV.
        #[arg(long)]
        csv: Option<PathBuf>,
    },
}

#[derive(Args, Default)]
struct HyperArgs {
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    lr0: Option<f64>,
    /// Per-epoch decay factor [default: reaches lr0/100 at the last epoch]
    #[arg(long)]
    lr_decay: Option<f64>,
    #[arg(long)]
    momentum: Option<f64>,
}

#[derive(Args, Default)]
struct MeasureArgs {
    /// Examples sharpness is averaged over [default: 1000]
    #[arg(long)]
    sample_cap: Option<usize>,
    /// train or test [default: train]
    #[arg(long)]
    sample_set: Option<String>,
    /// outputs (through softmax) or logits [default: outputs]
    #[arg(long)]
    endpoint: Option<String>,
}

#[derive(Args)]
struct TrainArgs {
    /// Layer sizes, e.g. 49,17,10.
    #[arg(long, value_delimiter = ',', required = true)]
    arch: Vec<usize>,
    #[arg(long)]
    hidden: String,
    #[arg(long)]
    output: String,
    /// xent or sq
    #[arg(long)]
    loss: String,
    /// Seeds the weights; the shuffle seed is derived from it.
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Prepared cache [default: $SHARPLAB_DATA_DIR/mnist7x7.bin]
    #[arg(long)]
    data: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
    /// Per-epoch loss/accuracy/lr CSV.
    #[arg(long)]
    history: Option<PathBuf>,
    #[command(flatten)]
    hyper: HyperArgs,
    #[command(flatten)]
    measure: MeasureArgs,
}

#[derive(Args)]
struct SweepArgs {
    /// tanh_softmax_xent, relu_softmax_xent or relu_linear_sq
    #[arg(long)]
    family: String,
    #[arg(long)]
    data: Option<PathBuf>,
    #[arg(long, default_value_t = 0)]
    master_seed: u64,
    #[arg(long)]
    workers: Option<usize>,
    /// full (6x6 grid, 5000 epochs) or ci (3x3 grid, 500 epochs)
    #[arg(long, default_value = "full")]
    scale: String,
    /// Results CSV; the configuration goes to <out>.json.
    #[arg(long)]
    out: PathBuf,
    #[command(flatten)]
    hyper: HyperArgs,
    #[command(flatten)]
    measure: MeasureArgs,
}

#[derive(Args)]
struct LinearArgs {
    #[arg(long)]
    data: Option<PathBuf>,
    #[arg(long, value_delimiter = ',', default_value = "300,800,1200,1800")]
    dims: Vec<usize>,
    #[arg(long, default_value_t = 0.1)]
    norm_min: f64,
    #[arg(long, default_value_t = 1000.0)]
    norm_max: f64,
    #[arg(long, default_value_t = 57)]
    count: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    sample_cap: Option<usize>,
    /// Results CSV; the configuration and feature ranks go to <out>.json.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct ReportArgs {
    /// Results CSV (several may be given).
    #[arg(long = "in", required = true, num_args = 1..)]
    input: Vec<PathBuf>,
    /// f1, f2, f3, f4, f6, f8, f10, or <x>-vs-<y> such as sharpness-vs-acc.
    #[arg(long, requires = "out")]
    fig: Option<String>,
    /// SVG path for --fig.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Also write the correlation table as JSON.
    #[arg(long)]
    json: Option<PathBuf>,
}

#[derive(Args)]
struct CheckArgs {
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Random nets per family.
    #[arg(long, default_value_t = 20)]
    nets: usize,
}

/// Contents of `--config`.
#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct FileConfig {
    epochs: Option<usize>,
    batch_size: Option<usize>,
    lr0: Option<f64>,
    lr_decay: Option<f64>,
    momentum: Option<f64>,
    sample_cap: Option<usize>,
    sample_set: Option<String>,
    endpoint: Option<String>,
    workers: Option<usize>,
}

enum Failure {
    Core(Error),
    Check(String),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure::Core(e)
    }
}

type CliResult<T> = std::result::Result<T, Failure>;

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            let (kind, msg) = match f {
                Failure::Core(e) => (e.kind(), e.to_string()),
                Failure::Check(m) => ("check-failed", m),
            };
            eprintln!("error[{kind}]: {}", msg.replace('\n', " "));
            ExitCode::FAILURE
        }
    }
}

fn run(cli: Cli) -> CliResult<()> {
    let file = match &cli.config {
        Some(p) => load_config(p)?,
        None => FileConfig::default(),
    };
    match cli.command {
        Command::Data {
            command:
                DataCommand::Prepare {
                    mnist_dir,
                    out,
                    train_size,
                    seed,
                    csv,
                },
        } => {
            let dir = match mnist_dir {
                Some(d) => d,
                None => env_dir()?,
            };
            let out = cache_path(out)?;
            let ds = prepare(&dir, train_size, seed)?;
            save_cache(&ds, &out)?;
            if let Some(csv) = csv {
                export_csv(&ds, &csv)?;
            }
            println!(
                "prepared {} train / {} test examples of dim {} -> {}",
                ds.n_train(),
                ds.n_test(),
                ds.dim(),
                out.display()
            );
            Ok(())
        }
        Command::Train(a) => cmd_train(a, &file),
        Command::Sweep(a) => cmd_sweep(a, &file),
        Command::LinearSweep(a) => cmd_linear(a, &file),
        Command::Report(a) => cmd_report(a),
        Command::JacobianCheck(a) => cmd_check(a),
    }
}

fn load_config(path: &Path) -> CliResult<FileConfig> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    toml::from_str(&text)
        .map_err(|e| Error::Config(format!("{}: {}", path.display(), e.message())).into())
}

fn env_dir() -> CliResult<PathBuf> {
    std::env::var_os(DATA_ENV)
        .map(PathBuf::from)
        .ok_or_else(|| Error::Config(format!("no data location: pass a path or set {DATA_ENV}")).into())
}

fn cache_path(flag: Option<PathBuf>) -> CliResult<PathBuf> {
    match flag {
        Some(p) => Ok(p),
        None => Ok(env_dir()?.join(DEFAULT_CACHE)),
    }
}

fn load_data(flag: Option<PathBuf>) -> CliResult<Dataset> {
    Ok(load_cache(&cache_path(flag)?)?)
}

/// Flags, then the config file, then defaults for `epochs`.
fn train_config(h: &HyperArgs, file: &FileConfig, default_epochs: usize, seed: u64) -> CliResult<TrainConfig> {
    let epochs = h.epochs.or(file.epochs).unwrap_or(default_epochs);
    let mut cfg = TrainConfig::with_epochs(epochs, seed);
    if let Some(v) = h.batch_size.or(file.batch_size) {
        cfg.batch_size = v;
    }
    if let Some(v) = h.lr0.or(file.lr0) {
        cfg.lr0 = v;
    }
    cfg.lr_decay = h.lr_decay.or(file.lr_decay).unwrap_or(decay_to_hundredth(epochs));
    if let Some(v) = h.momentum.or(file.momentum) {
        cfg.momentum = v;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn measure_config(m: &MeasureArgs, file: &FileConfig) -> CliResult<(usize, SampleSet, JacobianEndpoint)> {
    let cap = m.sample_cap.or(file.sample_cap).unwrap_or(1000);
    let set = match m.sample_set.as_deref().or(file.sample_set.as_deref()) {
        Some(s) => s.parse()?,
        None => SampleSet::Train,
    };
    let endpoint = match m.endpoint.as_deref().or(file.endpoint.as_deref()) {
        Some(s) => s.parse()?,
        None => JacobianEndpoint::Outputs,
    };
    Ok((cap, set, endpoint))
}

fn cmd_train(a: TrainArgs, file: &FileConfig) -> CliResult<()> {
    let hidden: Activation = a.hidden.parse()?;
    let output: Activation = a.output.parse()?;
    let loss: LossKind = a.loss.parse()?;
    loss.check_output(output)?;
    let ds = load_data(a.data)?;
    let classes = ds.train_y_onehot.cols();
    if a.arch.first() != Some(&ds.dim()) || a.arch.last() != Some(&classes) {
        return Err(Error::Config(format!(
            "--arch must start with the input dim {} and end with {} classes",
            ds.dim(),
            classes
        ))
        .into());
    }
    let shuffle_seed = derive_seed(a.seed, &[1]);
    let cfg = train_config(&a.hyper, file, 5000, shuffle_seed)?;
    let (cap, set, endpoint) = measure_config(&a.measure, file)?;
    let net = Mlp::init(&a.arch, hidden, output, a.seed)?;
    let (net, history) = train(net, &ds, loss, &cfg)?;
    let m = measure(&net, &ds, loss, set, cap, endpoint)?;
    if let Some(h) = &a.history {
        write_history_csv(&history, h)?;
    }
    let extra = json!({
        "seed_init": a.seed,
        "loss": loss,
        "train": cfg,
        "data_seed": ds.seed,
        "train_examples": ds.n_train(),
        "sharpness_samples": cap,
        "sharpness_set": set,
        "sharpness_endpoint": endpoint,
        "raw_norm": m.raw_norm,
        "normalized_norm": m.normalized_norm,
        "sharpness": m.sharpness,
        "train_acc": m.train_acc,
        "train_loss": m.train_loss,
        "test_acc": m.test_acc,
        "test_loss": m.test_loss,
    });
    save_model(&net, &a.out, extra)?;
    println!(
        "params {}  train acc {:.4} loss {:.4}  test acc {:.4} loss {:.4}  norm {:.4} (normalized {:.4})  sharpness {:.4}",
        net.parameter_count(),
        m.train_acc,
        m.train_loss,
        m.test_acc,
        m.test_loss,
        m.raw_norm,
        m.normalized_norm,
        m.sharpness
    );
    Ok(())
}

fn cmd_sweep(a: SweepArgs, file: &FileConfig) -> CliResult<()> {
    let family: Family = a.family.parse()?;
    let scale: Scale = a.scale.parse()?;
    let ds = load_data(a.data)?;
    let mut cfg = SweepConfig::new(family, scale, a.master_seed);
    cfg.train = train_config(&a.hyper, file, cfg.train.epochs, 0)?;
    let (cap, set, endpoint) = measure_config(&a.measure, file)?;
    cfg.sample_cap = cap;
    cfg.sample_set = set;
    cfg.endpoint = endpoint;
    cfg.workers = a.workers.or(file.workers).unwrap_or(1);
    let records = run_family_sweep_with(&ds, &cfg, |r| {
        eprintln!(
            "depth {} target {:>5} units {:>3}: {} sharpness {:.4} test acc {:.4} loss {:.4} ({:.1}s)",
            r.depth,
            r.param_target,
            r.units,
            r.status.name(),
            r.sharpness,
            r.test_acc,
            r.test_loss,
            r.wall_time_s
        )
    })?;
    report::write_runs(&records, &a.out)?;
    let side = json!({
        "sweep": cfg,
        "data_seed": ds.seed,
        "train_examples": ds.n_train(),
    });
    report::write_json(&side, &sidecar_path(&a.out))?;
    let table = correlation_report(&records, &family_pairs(family.name()))?;
    print!("{}", table.to_text());
    Ok(())
}

fn cmd_linear(a: LinearArgs, file: &FileConfig) -> CliResult<()> {
    let ds = load_data(a.data)?;
    let defaults = LinearSweepConfig::default();
    let cfg = LinearSweepConfig {
        dims: a.dims,
        norm_min: a.norm_min,
        norm_max: a.norm_max,
        count: a.count,
        seed: a.seed,
        sample_cap: a.sample_cap.or(file.sample_cap).unwrap_or(defaults.sample_cap),
        pinv_tol: defaults.pinv_tol,
    };
    let sweep = run_linear_sweep(&ds, &cfg)?;
    report::write_runs(&sweep.records, &a.out)?;
    let side = json!({
        "linear_sweep": cfg,
        "features": sweep.dims,
        "data_seed": ds.seed,
        "train_examples": ds.n_train(),
    });
    report::write_json(&side, &sidecar_path(&a.out))?;
    let table = correlation_report(&sweep.records, &default_pairs(&sweep.records))?;
    print!("{}", table.to_text());
    Ok(())
}

fn cmd_report(a: ReportArgs) -> CliResult<()> {
    let mut records = Vec::new();
    for p in &a.input {
        records.extend(report::read_runs(p)?);
    }
    let table = correlation_report(&records, &default_pairs(&records))?;
    print!("{}", table.to_text());
    if let Some(path) = &a.json {
        std::fs::write(path, table.to_json()?).map_err(|e| Error::io(path, e))?;
    }
    if let (Some(id), Some(out)) = (&a.fig, &a.out) {
        let fig = figure(id, &records)?;
        let (svg, rs) = render_figure(&records, &fig)?;
        std::fs::write(out, svg).map_err(|e| Error::io(out, e))?;
        for r in rs {
            match r {
                Some(r) => println!("{id}: r = {r:.4}"),
                None => println!("{id}: r undefined"),
            }
        }
    }
    Ok(())
}

fn cmd_check(a: CheckArgs) -> CliResult<()> {
    let mut failed = Vec::new();
    for f in Family::ALL {
        let c = check_family(f.hidden(), f.output(), f.loss(), a.seed, a.nets)?;
        println!(
            "{:<18} nets {:>3}  max rel error: gradients {:.3e}  jacobian {:.3e}  {}",
            f.name(),
            c.nets,
            c.max_gradient_error,
            c.max_jacobian_error,
            if c.passed() { "ok" } else { "FAIL" }
        );
        if !c.passed() {
            failed.push(f.name());
        }
    }
    if failed.is_empty() {
        Ok(())
    } else {
        Err(Failure::Check(format!(
            "finite-difference error above {CHECK_REL_TOL:e} for {}",
            failed.join(", ")
        )))
    }
}
