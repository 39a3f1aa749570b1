//! Results CSV, correlation tables and SVG scatter plots.
//!
//! Everything here is a pure function of the records it is given, so reports
//! regenerated from the same CSV are byte-identical.

use std::fmt::Write as _;
use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::closedform::LINEAR_FAMILY;
use crate::numkit::pearson;
use crate::sweep::{RunRecord, RunStatus};
use crate::{Error, Result};

/// Column order of the results CSV.
pub const COLUMNS: [&str; 17] = [
    "family",
    "depth",
    "param_target",
    "units",
    "realized_params",
    "seed_init",
    "seed_shuffle",
    "raw_norm",
    "normalized_norm",
    "sharpness",
    "sharpness_basis",
    "test_acc",
    "test_loss",
    "train_acc",
    "train_loss",
    "status",
    "wall_time_s",
];

/// 17 significant digits, enough to round-trip any f64.
fn real(v: f64) -> String {
    format!("{v:.16e}")
}

pub fn write_runs_to<W: Write>(records: &[RunRecord], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(COLUMNS)?;
    for r in records {
        w.write_record([
            r.family.clone(),
            r.depth.to_string(),
            r.param_target.to_string(),
            r.units.to_string(),
            r.realized_params.to_string(),
            r.seed_init.to_string(),
            r.seed_shuffle.to_string(),
            real(r.raw_norm),
            real(r.normalized_norm),
            real(r.sharpness),
            r.sharpness_basis.clone(),
            real(r.test_acc),
            real(r.test_loss),
            real(r.train_acc),
            real(r.train_loss),
            r.status.name().to_string(),
            real(r.wall_time_s),
        ])?;
    }
    w.flush().map_err(|e| Error::Format(format!("flushing CSV: {e}")))
}

pub fn write_runs(records: &[RunRecord], path: &Path) -> Result<()> {
    let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    write_runs_to(records, std::io::BufWriter::new(file))
}

/// Parses a results CSV. Rows are numbered as file lines: the header is row 1.
pub fn read_runs_from<R: Read>(input: R) -> Result<Vec<RunRecord>> {
    let mut rdr = csv::Reader::from_reader(input);
    let header = rdr.headers()?.clone();
    let mut index = [0usize; COLUMNS.len()];
    for (slot, name) in index.iter_mut().zip(COLUMNS) {
        *slot = header.iter().position(|h| h == name).ok_or_else(|| Error::Parse {
            row: 1,
            column: name.to_string(),
            message: "missing column".into(),
        })?;
    }
    let mut out = Vec::new();
    for (i, row) in rdr.records().enumerate() {
        let row = row?;
        let line = i + 2;
        let cell = |k: usize| -> Result<&str> {
            row.get(index[k]).ok_or_else(|| Error::Parse {
                row: line,
                column: COLUMNS[k].to_string(),
                message: "missing cell".into(),
            })
        };
        let parse = |k: usize, what: &str| -> Error {
            Error::Parse {
                row: line,
                column: COLUMNS[k].to_string(),
                message: format!("not {what}: {:?}", cell(k).unwrap_or_default()),
            }
        };
        let int = |k: usize| -> Result<usize> { cell(k)?.trim().parse().map_err(|_| parse(k, "an integer")) };
        let seed = |k: usize| -> Result<u64> { cell(k)?.trim().parse().map_err(|_| parse(k, "an integer")) };
        let num = |k: usize| -> Result<f64> { cell(k)?.trim().parse().map_err(|_| parse(k, "a number")) };
        let status: RunStatus = cell(15)?.trim().parse().map_err(|_| parse(15, "ok or diverged"))?;
        out.push(RunRecord {
            family: cell(0)?.to_string(),
            depth: int(1)?,
            param_target: int(2)?,
            units: int(3)?,
            realized_params: int(4)?,
            seed_init: seed(5)?,
            seed_shuffle: seed(6)?,
            raw_norm: num(7)?,
            normalized_norm: num(8)?,
            sharpness: num(9)?,
            sharpness_basis: cell(10)?.to_string(),
            test_acc: num(11)?,
            test_loss: num(12)?,
            train_acc: num(13)?,
            train_loss: num(14)?,
            status,
            wall_time_s: num(16)?,
        });
    }
    Ok(out)
}

pub fn read_runs(path: &Path) -> Result<Vec<RunRecord>> {
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    read_runs_from(std::io::BufReader::new(file))
}

/// Writes `value` as pretty JSON followed by a newline.
pub fn write_json<T: Serialize>(value: &T, path: &Path) -> Result<()> {
    let text = serde_json::to_string_pretty(value)? + "\n";
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

/// One correlation to compute.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorrelationPair {
    pub family: String,
    pub x: String,
    pub y: String,
    /// Published value to compare against, if any.
    pub reference: Option<f64>,
}

impl CorrelationPair {
    fn new(family: &str, x: &str, y: &str, reference: Option<f64>) -> Self {
        CorrelationPair {
            family: family.into(),
            x: x.into(),
            y: y.into(),
            reference,
        }
    }
}

/// Headline pairs for one family, with reference values where known.
pub fn family_pairs(family: &str) -> Vec<CorrelationPair> {
    let p = CorrelationPair::new;
    match family {
        LINEAR_FAMILY => vec![
            p(family, "normalized_norm", "test_loss", Some(0.965)),
            p(family, "normalized_norm", "test_acc", None),
            p(family, "sharpness", "test_acc", Some(-0.995)),
            p(family, "sharpness", "test_loss", None),
        ],
        "tanh_softmax_xent" => vec![
            p(family, "normalized_norm", "test_acc", Some(-0.390)),
            p(family, "sharpness", "test_acc", Some(-0.901)),
            p(family, "depth", "sharpness", None),
        ],
        "relu_softmax_xent" => vec![
            p(family, "normalized_norm", "test_acc", None),
            p(family, "sharpness", "test_acc", Some(-0.756)),
            p(family, "depth", "sharpness", None),
        ],
        "relu_linear_sq" => vec![
            p(family, "normalized_norm", "test_loss", None),
            p(family, "sharpness", "test_loss", Some(0.831)),
            p(family, "depth", "sharpness", None),
        ],
        _ => vec![
            p(family, "normalized_norm", "test_acc", None),
            p(family, "sharpness", "test_acc", None),
        ],
    }
}

/// Families in order of first appearance.
pub fn families(records: &[RunRecord]) -> Vec<String> {
    let mut out: Vec<String> = Vec::new();
    for r in records {
        if !out.contains(&r.family) {
            out.push(r.family.clone());
        }
    }
    out
}

/// Headline pairs for every family present.
pub fn default_pairs(records: &[RunRecord]) -> Vec<CorrelationPair> {
    families(records).iter().flat_map(|f| family_pairs(f)).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorrelationEntry {
    pub family: String,
    pub x: String,
    pub y: String,
    /// Successful records used.
    pub n: usize,
    pub r: Option<f64>,
    pub reference: Option<f64>,
    /// Why `r` is missing.
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorrelationTable {
    pub entries: Vec<CorrelationEntry>,
}

impl CorrelationTable {
    pub fn get(&self, family: &str, x: &str, y: &str) -> Option<&CorrelationEntry> {
        self.entries.iter().find(|e| e.family == family && e.x == x && e.y == y)
    }

    pub fn r(&self, family: &str, x: &str, y: &str) -> Option<f64> {
        self.get(family, x, y).and_then(|e| e.r)
    }

    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(
            s,
            "{:<20} {:<16} {:<11} {:>4} {:>8} {:>8}",
            "family", "x", "y", "n", "r", "ref"
        );
        for e in &self.entries {
            let r = match (e.r, &e.error) {
                (Some(r), _) => format!("{r:.4}"),
                (None, Some(_)) => "undef".into(),
                (None, None) => "-".into(),
            };
            let reference = e.reference.map_or("-".into(), |v| format!("{v:.3}"));
            let _ = writeln!(
                s,
                "{:<20} {:<16} {:<11} {:>4} {:>8} {:>8}",
                e.family, e.x, e.y, e.n, r, reference
            );
        }
        s
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)? + "\n")
    }
}

fn column(records: &[&RunRecord], name: &str) -> Result<Vec<f64>> {
    records
        .iter()
        .map(|r| {
            r.metric(name)
                .ok_or_else(|| Error::Parameter(format!("unknown numeric column {name:?}")))
        })
        .collect()
}

/// Pearson r for each pair over that family's successful records. A pair
/// that cannot be computed gets an error note; the others are unaffected.
/// Unknown column names are an error for the whole call.
pub fn correlation_report(records: &[RunRecord], pairs: &[CorrelationPair]) -> Result<CorrelationTable> {
    let mut entries = Vec::with_capacity(pairs.len());
    for p in pairs {
        let ok: Vec<&RunRecord> = records
            .iter()
            .filter(|r| r.is_ok() && r.family == p.family)
            .collect();
        let xs = column(&ok, &p.x)?;
        let ys = column(&ok, &p.y)?;
        let (r, error) = match pearson(&xs, &ys) {
            Ok(r) => (Some(r), None),
            Err(e) => (None, Some(e.to_string())),
        };
        entries.push(CorrelationEntry {
            family: p.family.clone(),
            x: p.x.clone(),
            y: p.y.clone(),
            n: ok.len(),
            r,
            reference: p.reference,
            error,
        });
    }
    Ok(CorrelationTable { entries })
}

/// What to plot in one scatter panel.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScatterSpec {
    pub x_column: String,
    pub y_column: String,
    pub x_label: String,
    pub y_label: String,
    pub log_x: bool,
    pub log_y: bool,
    pub title: String,
}

impl ScatterSpec {
    pub fn new(x: &str, y: &str, title: &str) -> Self {
        ScatterSpec {
            x_column: x.into(),
            y_column: y.into(),
            x_label: axis_label(x).into(),
            y_label: axis_label(y).into(),
            log_x: false,
            log_y: false,
            title: title.into(),
        }
    }

    fn log(mut self, x: bool, y: bool) -> Self {
        self.log_x = x;
        self.log_y = y;
        self
    }
}

fn axis_label(column: &str) -> &str {
    match column {
        "normalized_norm" => "normalized weight norm",
        "raw_norm" => "weight norm",
        "sharpness" => "output sharpness",
        "test_acc" => "test accuracy",
        "test_loss" => "test loss",
        "train_acc" => "train accuracy",
        "train_loss" => "train loss",
        "depth" => "hidden layers",
        other => other,
    }
}

/// A figure: one or more panels, each over one family's successful records.
#[derive(Debug, Clone, PartialEq)]
pub struct Figure {
    pub id: String,
    pub panels: Vec<(String, ScatterSpec)>,
}

/// Registered figure ids.
pub const FIGURES: [&str; 7] = ["f1", "f2", "f3", "f4", "f6", "f8", "f10"];

/// Looks up a registered figure (`f1` … `f10`) or builds an ad-hoc one from
/// `<x>-vs-<y>` (e.g. `sharpness-vs-acc`), which plots every family present.
pub fn figure(id: &str, records: &[RunRecord]) -> Result<Figure> {
    let panel = |fam: &str, x: &str, y: &str, title: &str| (fam.to_string(), ScatterSpec::new(x, y, title));
    let panels = match id {
        "f1" => vec![(
            LINEAR_FAMILY.to_string(),
            ScatterSpec::new("normalized_norm", "test_loss", "Linear models: norm vs test loss").log(true, false),
        )],
        "f2" => vec![(
            LINEAR_FAMILY.to_string(),
            ScatterSpec::new("normalized_norm", "test_acc", "Linear models: norm vs test accuracy").log(true, false),
        )],
        "f3" => vec![(
            LINEAR_FAMILY.to_string(),
            ScatterSpec::new("sharpness", "test_acc", "Linear models: softmax sharpness vs test accuracy"),
        )],
        "f4" => vec![
            panel("tanh_softmax_xent", "normalized_norm", "test_acc", "Tanh-Softmax: norm vs accuracy"),
            panel("tanh_softmax_xent", "sharpness", "test_acc", "Tanh-Softmax: sharpness vs accuracy"),
        ],
        "f6" => vec![
            panel("relu_softmax_xent", "normalized_norm", "test_acc", "ReLU-Softmax: norm vs accuracy"),
            panel("relu_softmax_xent", "sharpness", "test_acc", "ReLU-Softmax: sharpness vs accuracy"),
        ],
        "f8" => vec![
            panel("relu_linear_sq", "normalized_norm", "test_loss", "ReLU-Linear: norm vs loss"),
            panel("relu_linear_sq", "sharpness", "test_loss", "ReLU-Linear: sharpness vs loss"),
        ],
        "f10" => vec![
            panel("tanh_softmax_xent", "depth", "sharpness", "Tanh-Softmax: depth vs sharpness"),
            panel("relu_softmax_xent", "depth", "sharpness", "ReLU-Softmax: depth vs sharpness"),
            (
                "relu_linear_sq".to_string(),
                ScatterSpec::new("depth", "sharpness", "ReLU-Linear: depth vs sharpness").log(false, true),
            ),
        ],
        other => {
            let (x, y) = other.split_once("-vs-").ok_or_else(|| {
                Error::Parameter(format!(
                    "unknown figure {other:?}; use one of {} or <x>-vs-<y>",
                    FIGURES.join(", ")
                ))
            })?;
            let (x, y) = (column_alias(x), column_alias(y));
            families(records)
                .into_iter()
                .map(|f| {
                    let title = format!("{f}: {} vs {}", axis_label(x), axis_label(y));
                    (f, ScatterSpec::new(x, y, &title))
                })
                .collect()
        }
    };
    Ok(Figure {
        id: id.to_string(),
        panels,
    })
}

fn column_alias(s: &str) -> &str {
    match s {
        "norm" => "normalized_norm",
        "acc" | "accuracy" => "test_acc",
        "loss" => "test_loss",
        other => other,
    }
}

/// Renders every panel of `fig`; panels whose family has no successful
/// records are skipped, and a figure left with none is an error.
pub fn render_figure(records: &[RunRecord], fig: &Figure) -> Result<(String, Vec<Option<f64>>)> {
    let mut parts = Vec::new();
    for (family, spec) in &fig.panels {
        let rows: Vec<RunRecord> = records
            .iter()
            .filter(|r| r.is_ok() && &r.family == family)
            .cloned()
            .collect();
        if !rows.is_empty() {
            parts.push(panel(&rows, spec)?);
        }
    }
    if parts.is_empty() {
        return Err(Error::Parameter(format!(
            "figure {} has no successful records to plot",
            fig.id
        )));
    }
    let width = PANEL_W * parts.len() as f64;
    let mut svg = svg_header(width, PANEL_H);
    let mut rs = Vec::new();
    for (i, (body, r)) in parts.into_iter().enumerate() {
        let _ = writeln!(svg, "<g transform=\"translate({},0)\">", fmt_num(i as f64 * PANEL_W));
        svg.push_str(&body);
        svg.push_str("</g>\n");
        rs.push(r);
    }
    svg.push_str("</svg>\n");
    Ok((svg, rs))
}

/// Single-panel SVG document with one circle per record and the Pearson r
/// of the plotted columns in the title.
pub fn render_scatter(records: &[RunRecord], spec: &ScatterSpec) -> Result<String> {
    let (body, _) = panel(records, spec)?;
    let mut svg = svg_header(PANEL_W, PANEL_H);
    svg.push_str(&body);
    svg.push_str("</svg>\n");
    Ok(svg)
}

pub fn write_scatter(records: &[RunRecord], spec: &ScatterSpec, out: &Path) -> Result<()> {
    let svg = render_scatter(records, spec)?;
    std::fs::write(out, svg).map_err(|e| Error::io(out, e))
}

const PANEL_W: f64 = 480.0;
const PANEL_H: f64 = 400.0;
const LEFT: f64 = 70.0;
const RIGHT: f64 = 20.0;
const TOP: f64 = 40.0;
const BOTTOM: f64 = 55.0;

fn svg_header(w: f64, h: f64) -> String {
    format!(
        "<?xml version=\"1.0\" encoding=\"UTF-8\"?>\n\
         <svg xmlns=\"http://www.w3.org/2000/svg\" version=\"1.1\" width=\"{0}\" height=\"{1}\" viewBox=\"0 0 {0} {1}\" font-family=\"sans-serif\" font-size=\"11\">\n\
         <rect width=\"{0}\" height=\"{1}\" fill=\"white\"/>\n",
        fmt_num(w),
        fmt_num(h)
    )
}

/// Shortest fixed-point text for coordinates, rounded to 0.01.
fn fmt_num(v: f64) -> String {
    let s = format!("{:.2}", v);
    let s = s.trim_end_matches('0').trim_end_matches('.');
    if s == "-0" {
        "0".into()
    } else {
        s.into()
    }
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;").replace('"', "&quot;")
}

struct Axis {
    lo: f64,
    hi: f64,
    log: bool,
    ticks: Vec<f64>,
}

impl Axis {
    fn new(values: &[f64], log: bool, name: &str) -> Result<Self> {
        if log && values.iter().any(|&v| v <= 0.0) {
            return Err(Error::Parameter(format!(
                "log axis for {name} needs positive values"
            )));
        }
        let min = values.iter().copied().fold(f64::INFINITY, f64::min);
        let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        if log {
            let lo = min.log10().floor();
            let hi = max.log10().ceil().max(lo + 1.0);
            let ticks = (lo as i32..=hi as i32).map(|e| 10f64.powi(e)).collect();
            Ok(Axis {
                lo: 10f64.powf(lo),
                hi: 10f64.powf(hi),
                log,
                ticks,
            })
        } else {
            let (min, max) = if max > min {
                (min, max)
            } else {
                (min - 0.5 * min.abs().max(1.0), max + 0.5 * max.abs().max(1.0))
            };
            let step = nice_step((max - min) / 5.0);
            let lo = (min / step).floor() * step;
            let hi = (max / step).ceil() * step;
            let n = ((hi - lo) / step).round() as usize;
            let ticks = (0..=n).map(|i| lo + i as f64 * step).collect();
            Ok(Axis { lo, hi, log, ticks })
        }
    }

    /// Position of `v` in `[0, 1]`.
    fn frac(&self, v: f64) -> f64 {
        if self.log {
            (v.log10() - self.lo.log10()) / (self.hi.log10() - self.lo.log10())
        } else {
            (v - self.lo) / (self.hi - self.lo)
        }
    }
}

/// 1, 2 or 5 times a power of ten, at least `raw`.
fn nice_step(raw: f64) -> f64 {
    let mag = 10f64.powf(raw.log10().floor());
    for m in [1.0, 2.0, 5.0, 10.0] {
        if m * mag >= raw * (1.0 - 1e-12) {
            return m * mag;
        }
    }
    10.0 * mag
}

fn tick_label(v: f64) -> String {
    if v == 0.0 {
        return "0".into();
    }
    let a = v.abs();
    if !(1e-3..1e5).contains(&a) {
        return format!("{v:e}");
    }
    let s = format!("{v:.6}");
    s.trim_end_matches('0').trim_end_matches('.').to_string()
}

/// Panel body in a `PANEL_W x PANEL_H` box, and the r of its data.
fn panel(records: &[RunRecord], spec: &ScatterSpec) -> Result<(String, Option<f64>)> {
    if records.is_empty() {
        return Err(Error::Parameter("cannot plot an empty record set".into()));
    }
    let refs: Vec<&RunRecord> = records.iter().collect();
    let xs = column(&refs, &spec.x_column)?;
    let ys = column(&refs, &spec.y_column)?;
    let r = pearson(&xs, &ys).ok();
    let ax = Axis::new(&xs, spec.log_x, &spec.x_column)?;
    let ay = Axis::new(&ys, spec.log_y, &spec.y_column)?;
    let (pw, ph) = (PANEL_W - LEFT - RIGHT, PANEL_H - TOP - BOTTOM);
    let px = |v: f64| LEFT + ax.frac(v) * pw;
    let py = |v: f64| TOP + (1.0 - ay.frac(v)) * ph;

    let mut s = String::new();
    let title = match r {
        Some(r) => format!("{} (r = {r:.3})", spec.title),
        None => format!("{} (r undefined)", spec.title),
    };
    let _ = writeln!(
        s,
        "<text x=\"{}\" y=\"22\" text-anchor=\"middle\" font-size=\"13\">{}</text>",
        fmt_num(PANEL_W / 2.0),
        escape(&title)
    );
    let _ = writeln!(
        s,
        "<rect x=\"{}\" y=\"{}\" width=\"{}\" height=\"{}\" fill=\"none\" stroke=\"black\"/>",
        fmt_num(LEFT),
        fmt_num(TOP),
        fmt_num(pw),
        fmt_num(ph)
    );
    for &t in &ax.ticks {
        let x = fmt_num(px(t));
        let _ = writeln!(
            s,
            "<line x1=\"{x}\" y1=\"{}\" x2=\"{x}\" y2=\"{}\" stroke=\"black\"/>\
             <text x=\"{x}\" y=\"{}\" text-anchor=\"middle\">{}</text>",
            fmt_num(TOP + ph),
            fmt_num(TOP + ph + 5.0),
            fmt_num(TOP + ph + 18.0),
            tick_label(t)
        );
    }
    for &t in &ay.ticks {
        let y = fmt_num(py(t));
        let _ = writeln!(
            s,
            "<line x1=\"{}\" y1=\"{y}\" x2=\"{}\" y2=\"{y}\" stroke=\"black\"/>\
             <text x=\"{}\" y=\"{y}\" text-anchor=\"end\" dominant-baseline=\"middle\">{}</text>",
            fmt_num(LEFT - 5.0),
            fmt_num(LEFT),
            fmt_num(LEFT - 8.0),
            tick_label(t)
        );
    }
    let _ = writeln!(
        s,
        "<text x=\"{}\" y=\"{}\" text-anchor=\"middle\">{}</text>",
        fmt_num(LEFT + pw / 2.0),
        fmt_num(PANEL_H - 12.0),
        escape(&spec.x_label)
    );
    let _ = writeln!(
        s,
        "<text x=\"16\" y=\"{0}\" text-anchor=\"middle\" transform=\"rotate(-90 16 {0})\">{1}</text>",
        fmt_num(TOP + ph / 2.0),
        escape(&spec.y_label)
    );
    for (&x, &y) in xs.iter().zip(&ys) {
        let _ = writeln!(
            s,
            "<circle cx=\"{}\" cy=\"{}\" r=\"3.5\" fill=\"steelblue\" fill-opacity=\"0.8\"/>",
            fmt_num(px(x)),
            fmt_num(py(y))
        );
    }
    Ok((s, r))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn record(i: usize, family: &str) -> RunRecord {
        let f = i as f64;
        RunRecord {
            family: family.into(),
            depth: 1 + i % 6,
            param_target: 1000 * (1 + i),
            units: 10 + i,
            realized_params: 990 + i,
            seed_init: u64::MAX - i as u64,
            seed_shuffle: i as u64 * 7919,
            raw_norm: 1.0 / 3.0 + f,
            normalized_norm: 0.1 * 10f64.powf(f / 9.0),
            sharpness: std::f64::consts::PI * (1.0 + f),
            sharpness_basis: "train:softmax".into(),
            test_acc: 0.9 - 0.01 * f,
            test_loss: 0.2 + f * f * 1e-3,
            train_acc: 1.0,
            train_loss: 1e-300,
            status: if i == 5 { RunStatus::Diverged } else { RunStatus::Ok },
            wall_time_s: 0.125,
        }
    }

    fn records(n: usize) -> Vec<RunRecord> {
        (0..n).map(|i| record(i, "tanh_softmax_xent")).collect()
    }

    #[test]
    fn round_trip_is_exact() {
        let recs = records(36);
        let mut buf = Vec::new();
        write_runs_to(&recs, &mut buf).unwrap();
        let header = String::from_utf8(buf.clone()).unwrap();
        assert_eq!(header.lines().next().unwrap(), COLUMNS.join(","));
        let back = read_runs_from(buf.as_slice()).unwrap();
        assert_eq!(back, recs);
        for (a, b) in back.iter().zip(&recs) {
            assert_eq!(a.sharpness.to_bits(), b.sharpness.to_bits());
            assert_eq!(a.raw_norm.to_bits(), b.raw_norm.to_bits());
        }
    }

    #[test]
    fn empty_file_with_header() {
        let text = COLUMNS.join(",") + "\n";
        assert!(read_runs_from(text.as_bytes()).unwrap().is_empty());
    }

    #[test]
    fn missing_column_is_named() {
        let cols: Vec<&str> = COLUMNS.iter().copied().filter(|c| *c != "sharpness").collect();
        match read_runs_from((cols.join(",") + "\n").as_bytes()) {
            Err(Error::Parse { row, column, .. }) => {
                assert_eq!(row, 1);
                assert_eq!(column, "sharpness");
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn bad_cell_reports_row_and_column() {
        let mut buf = Vec::new();
        write_runs_to(&records(3), &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap().replacen("3.1415926535897931e0", "abc", 1);
        match read_runs_from(text.as_bytes()) {
            Err(Error::Parse { row, column, .. }) => {
                assert_eq!(row, 2);
                assert_eq!(column, "sharpness");
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn correlations_match_pearson_and_skip_failures() {
        let recs = records(12);
        let table = correlation_report(&recs, &default_pairs(&recs)).unwrap();
        let ok: Vec<&RunRecord> = recs.iter().filter(|r| r.is_ok()).collect();
        let xs: Vec<f64> = ok.iter().map(|r| r.sharpness).collect();
        let ys: Vec<f64> = ok.iter().map(|r| r.test_acc).collect();
        let e = table.get("tanh_softmax_xent", "sharpness", "test_acc").unwrap();
        assert_eq!(e.n, 11);
        assert_eq!(e.r.unwrap(), pearson(&xs, &ys).unwrap());
        // sharpness and accuracy are both affine in i here.
        assert!((e.r.unwrap() + 1.0).abs() < 1e-12);
        assert_eq!(e.reference, Some(-0.901));
        assert!(table.to_text().contains("-0.901"));
        let json: CorrelationTable = serde_json::from_str(&table.to_json().unwrap()).unwrap();
        assert_eq!(json, table);
    }

    #[test]
    fn constant_column_fails_only_its_pair() {
        let mut recs = records(6);
        for r in &mut recs {
            r.test_acc = 0.5;
        }
        let pairs = vec![
            CorrelationPair::new("tanh_softmax_xent", "sharpness", "test_acc", None),
            CorrelationPair::new("tanh_softmax_xent", "sharpness", "test_loss", None),
        ];
        let t = correlation_report(&recs, &pairs).unwrap();
        assert!(t.entries[0].r.is_none() && t.entries[0].error.is_some());
        assert!(t.entries[1].r.is_some());
    }

    #[test]
    fn scatter_has_one_circle_per_record() {
        let recs: Vec<RunRecord> = records(36).into_iter().filter(|r| r.is_ok()).collect();
        let spec = ScatterSpec::new("sharpness", "test_acc", "t");
        let svg = render_scatter(&recs, &spec).unwrap();
        assert_eq!(svg.matches("<circle").count(), recs.len());
        assert!(svg.contains("(r = -1.000)"));
        assert_eq!(svg, render_scatter(&recs, &spec).unwrap());
        assert!(render_scatter(&[], &spec).is_err());
    }

    #[test]
    fn log_axis_has_decade_ticks() {
        let mut recs = records(10);
        for (r, v) in recs.iter_mut().zip([0.1, 0.5, 1.0, 3.0, 10.0, 20.0, 50.0, 100.0, 500.0, 1000.0]) {
            r.normalized_norm = v;
            r.status = RunStatus::Ok;
        }
        let spec = ScatterSpec::new("normalized_norm", "test_loss", "t").log(true, false);
        let svg = render_scatter(&recs, &spec).unwrap();
        for label in [">0.1<", ">1<", ">10<", ">100<", ">1000<"] {
            assert!(svg.contains(label), "missing tick {label}");
        }
        assert!(!svg.contains(">10000<"));
    }

    #[test]
    fn figures_registry() {
        let mut recs = records(8);
        recs.extend((0..8).map(|i| record(i, "linear")));
        for id in ["f1", "f2", "f3", "f4", "f10"] {
            let (svg, rs) = render_figure(&recs, &figure(id, &recs).unwrap()).unwrap();
            assert!(svg.starts_with("<?xml"));
            assert!(!rs.is_empty());
        }
        let (svg, rs) = render_figure(&recs, &figure("f4", &recs).unwrap()).unwrap();
        assert_eq!(rs.len(), 2);
        assert_eq!(svg.matches("<circle").count(), 2 * 7);
        assert!(render_figure(&recs, &figure("f8", &recs).unwrap()).is_err());
        let adhoc = figure("sharpness-vs-acc", &recs).unwrap();
        assert_eq!(adhoc.panels.len(), 2);
        assert_eq!(adhoc.panels[0].1.y_column, "test_acc");
        assert!(figure("nonsense", &recs).is_err());
    }
}
