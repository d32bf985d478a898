//! Command-line driver.
//!
//! Every command writes into a fresh output directory:
//!
//! * `manifest.json`: command, model, input expressions, span, grid,
//!   tolerances and tool version;
//! * long-format tables, one value per row (`t,i,k,value` for
//!   substorages, `t,i,j,value` for diact matrices), numbers printed with
//!   12 significant digits, indices 1-based with `k = 0` for initial stocks;
//! * `summary.txt`, a short human-readable report.
//!
//! Exit status is 0 on success, 1 for invalid input or configuration and
//! 2 when a numerical routine fails.

use std::fmt::{self, Display};
use std::fs;
use std::io;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use nalgebra::{DMatrix, DVector};
use serde_json::{json, Value};

use crate::diact::{diact_storages, parse_kinds, static_diact, DiactKind, FlowScope};
use crate::interact::{classify, Basis, Normalization, Source};
use crate::model::{default_probes, validate_model, CompartmentalModel, ValidationOptions};
use crate::odeint::{integrate, OdeConfig};
use crate::partition::decompose;
use crate::pathflow::{cumulative_transient, parse_path, transient_flows, SolveMode, SubflowPath};
use crate::staticnet::{find_steady_state, output_oriented, static_partition_at, SteadyConfig};

#[derive(Debug, Parser)]
#[command(
    name = "ecopart",
    version,
    about = "Dynamic system and subsystem partitioning of compartmental models"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Integrate the aggregate model.
    Simulate(SpanArgs),
    /// Substorages, subthroughflows and residence times by input source.
    Partition(SpanArgs),
    /// Transient flows and storages along subflow paths.
    Path(PathArgs),
    /// Dynamic diact flows and storages.
    Diact(DiactArgs),
    /// Steady-state network analysis.
    Static(StaticArgs),
    /// Interaction signs and strengths between two compartments.
    Interact(InteractArgs),
}

#[derive(Debug, Args)]
pub struct ModelArgs {
    /// Model document (JSON).
    pub model: PathBuf,
    /// Comma-separated input expressions replacing the document's inputs.
    #[arg(long)]
    pub z: Option<String>,
    /// Output directory; must not exist yet.
    #[arg(long, env = "ECOPART_OUT")]
    pub out: PathBuf,
    #[arg(long, value_enum, default_value_t = Format::Csv)]
    pub format: Format,
}

#[derive(Debug, Args)]
pub struct SpanArgs {
    #[command(flatten)]
    pub model: ModelArgs,
    #[arg(long, default_value_t = 0.0, allow_hyphen_values = true)]
    pub t0: f64,
    #[arg(long, default_value_t = 10.0)]
    pub t_end: f64,
    /// Number of evenly spaced output times.
    #[arg(long, default_value_t = 101)]
    pub points: usize,
    /// Explicit output times, comma-separated; overrides `--points`.
    #[arg(long, value_delimiter = ',')]
    pub times: Vec<f64>,
    #[arg(long, default_value_t = 1e-8)]
    pub rtol: f64,
    #[arg(long, default_value_t = 1e-10)]
    pub atol: f64,
}

#[derive(Debug, Args)]
pub struct PathArgs {
    #[command(flatten)]
    pub span: SpanArgs,
    /// Path specification such as `k=1: 0 -> 1 -> 2 -> 1`; repeatable.
    #[arg(long = "path", required = true)]
    pub paths: Vec<String>,
    /// Arrivals kept when unrolling closed paths; overrides the spec.
    #[arg(long)]
    pub cycles: Option<usize>,
    /// Activation time; defaults to `--t0`.
    #[arg(long)]
    pub t1: Option<f64>,
    #[arg(long, value_enum, default_value_t = Mode::Simultaneous)]
    pub mode: Mode,
}

#[derive(Debug, Args)]
pub struct DiactArgs {
    #[command(flatten)]
    pub span: SpanArgs,
    /// Comma-separated kinds (`d,i,a,c,t` or names) or `all`.
    #[arg(long, default_value = "all")]
    pub kinds: String,
    #[arg(long)]
    pub t1: Option<f64>,
}

#[derive(Debug, Args)]
pub struct StaticArgs {
    #[command(flatten)]
    pub model: ModelArgs,
    /// Time at which the inputs are evaluated.
    #[arg(long, default_value_t = 0.0)]
    pub t: f64,
    #[arg(long, default_value = "all")]
    pub kinds: String,
}

#[derive(Debug, Args)]
pub struct InteractArgs {
    #[command(flatten)]
    pub span: SpanArgs,
    /// Ordered pair `i,j` (1-based).
    #[arg(long)]
    pub pair: String,
    #[arg(long, default_value = "all")]
    pub kinds: String,
    #[arg(long, default_value = "flow")]
    pub basis: String,
    #[arg(long, default_value = "composite")]
    pub source: String,
    #[arg(long, default_value = "pairwise-throughflow")]
    pub normalization: String,
    #[arg(long)]
    pub t1: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Format {
    Csv,
    Json,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Mode {
    Simultaneous,
    PostHoc,
}

impl From<Mode> for SolveMode {
    fn from(m: Mode) -> Self {
        match m {
            Mode::Simultaneous => SolveMode::Simultaneous,
            Mode::PostHoc => SolveMode::PostHoc,
        }
    }
}

#[derive(Debug)]
pub enum CliError {
    Validation(String),
    Numerical(String),
    Io(PathBuf, io::Error),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Numerical(_) => 2,
            _ => 1,
        }
    }
}

impl Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Validation(m) => write!(f, "invalid input: {m}"),
            CliError::Numerical(m) => write!(f, "numerical failure: {m}"),
            CliError::Io(p, e) => write!(f, "{}: {e}", p.display()),
        }
    }
}

impl std::error::Error for CliError {}

fn invalid(module: &'static str) -> impl Fn(&dyn Display) -> CliError {
    move |e| CliError::Validation(format!("{module}: {e}"))
}

fn numerical<E: Display>(module: &'static str) -> impl Fn(E) -> CliError {
    move |e| CliError::Numerical(format!("{module}: {e}"))
}

/// Formats like C's `%.12g`.
pub fn fmt_num(v: f64) -> String {
    if v.is_nan() {
        return "nan".into();
    }
    if v.is_infinite() {
        return if v > 0.0 { "inf".into() } else { "-inf".into() };
    }
    if v == 0.0 {
        return "0".into();
    }
    let sci = format!("{v:.11e}");
    let (mant, exp) = sci.split_once('e').unwrap();
    let exp: i32 = exp.parse().unwrap();
    if (-5..12).contains(&exp) {
        let fixed = format!("{:.*}", (11 - exp) as usize, v);
        trim_zeros(&fixed).to_string()
    } else {
        format!(
            "{}e{}{:02}",
            trim_zeros(mant),
            if exp < 0 { '-' } else { '+' },
            exp.abs()
        )
    }
}

fn trim_zeros(s: &str) -> &str {
    if s.contains('.') {
        s.trim_end_matches('0').trim_end_matches('.')
    } else {
        s
    }
}

#[derive(Debug, Clone)]
enum Cell {
    Int(usize),
    Num(f64),
    Text(String),
}

impl Cell {
    fn render(&self) -> String {
        match self {
            Cell::Int(v) => v.to_string(),
            Cell::Num(v) => fmt_num(*v),
            Cell::Text(s) => s.clone(),
        }
    }

    fn json(&self) -> Value {
        match self {
            Cell::Int(v) => json!(v),
            Cell::Num(v) if v.is_finite() => json!(v),
            Cell::Num(v) => json!(fmt_num(*v)),
            Cell::Text(s) => json!(s),
        }
    }
}

impl From<usize> for Cell {
    fn from(v: usize) -> Self {
        Cell::Int(v)
    }
}

impl From<f64> for Cell {
    fn from(v: f64) -> Self {
        Cell::Num(v)
    }
}

impl From<&str> for Cell {
    fn from(v: &str) -> Self {
        Cell::Text(v.to_string())
    }
}

impl From<String> for Cell {
    fn from(v: String) -> Self {
        Cell::Text(v)
    }
}

macro_rules! row {
    ($($c:expr),* $(,)?) => { vec![$(Cell::from($c)),*] };
}

struct Table {
    name: String,
    header: Vec<&'static str>,
    rows: Vec<Vec<Cell>>,
}

impl Table {
    fn new(name: impl Into<String>, header: &[&'static str]) -> Self {
        Table {
            name: name.into(),
            header: header.to_vec(),
            rows: Vec::new(),
        }
    }

    fn push(&mut self, row: Vec<Cell>) {
        debug_assert_eq!(row.len(), self.header.len());
        self.rows.push(row);
    }

    /// Appends `(t, i, j, value)` rows for every entry of `m`.
    fn matrix(&mut self, t: f64, m: &DMatrix<f64>) {
        for i in 0..m.nrows() {
            for j in 0..m.ncols() {
                self.push(row![t, i + 1, j + 1, m[(i, j)]]);
            }
        }
    }

    fn vector(&mut self, t: f64, v: &DVector<f64>) {
        for (i, x) in v.iter().enumerate() {
            self.push(row![t, i + 1, *x]);
        }
    }

    fn render(&self, format: Format) -> String {
        match format {
            Format::Csv => {
                let mut s = self.header.join(",");
                s.push('\n');
                for r in &self.rows {
                    let cells: Vec<String> = r.iter().map(Cell::render).collect();
                    s.push_str(&cells.join(","));
                    s.push('\n');
                }
                s
            }
            Format::Json => {
                let rows: Vec<Value> = self
                    .rows
                    .iter()
                    .map(|r| Value::Array(r.iter().map(Cell::json).collect()))
                    .collect();
                let mut s = serde_json::to_string_pretty(&json!({"columns": self.header, "rows": rows})).unwrap();
                s.push('\n');
                s
            }
        }
    }
}

/// Tables and summary lines collected in memory and written once the
/// command has succeeded.
struct Report {
    dir: PathBuf,
    format: Format,
    manifest: serde_json::Map<String, Value>,
    tables: Vec<Table>,
    summary: Vec<String>,
}

impl Report {
    fn new(command: &str, args: &ModelArgs, model: &CompartmentalModel) -> Result<Self, CliError> {
        if args.out.exists() {
            return Err(CliError::Validation(format!(
                "output directory {} already exists",
                args.out.display()
            )));
        }
        let mut manifest = serde_json::Map::new();
        manifest.insert("tool".into(), json!("ecopart"));
        manifest.insert("version".into(), json!(env!("CARGO_PKG_VERSION")));
        manifest.insert("command".into(), json!(command));
        manifest.insert("model".into(), json!(args.model.display().to_string()));
        manifest.insert("compartments".into(), json!(model.labels));
        let inputs: Vec<String> = model.input_exprs.iter().map(|e| e.to_string()).collect();
        manifest.insert("inputs".into(), json!(inputs));
        manifest.insert(
            "initial".into(),
            json!(model.x_init.iter().copied().collect::<Vec<f64>>()),
        );
        manifest.insert(
            "format".into(),
            json!(match args.format {
                Format::Csv => "csv",
                Format::Json => "json",
            }),
        );
        Ok(Report {
            dir: args.out.clone(),
            format: args.format,
            manifest,
            tables: Vec::new(),
            summary: vec![format!("ecopart {command}: {}", args.model.display())],
        })
    }

    fn set(&mut self, key: &str, value: Value) {
        self.manifest.insert(key.into(), value);
    }

    fn line(&mut self, s: impl Into<String>) {
        self.summary.push(s.into());
    }

    fn add(&mut self, t: Table) {
        self.tables.push(t);
    }

    fn write(mut self) -> Result<(), CliError> {
        let io_err = |p: &Path| {
            let p = p.to_path_buf();
            move |e| CliError::Io(p, e)
        };
        if let Some(parent) = self.dir.parent().filter(|p| !p.as_os_str().is_empty()) {
            fs::create_dir_all(parent).map_err(io_err(parent))?;
        }
        fs::create_dir(&self.dir).map_err(|e| {
            if e.kind() == io::ErrorKind::AlreadyExists {
                CliError::Validation(format!("output directory {} already exists", self.dir.display()))
            } else {
                CliError::Io(self.dir.clone(), e)
            }
        })?;
        let ext = match self.format {
            Format::Csv => "csv",
            Format::Json => "json",
        };
        let mut files = Vec::new();
        for t in &self.tables {
            let name = format!("{}.{ext}", t.name);
            let path = self.dir.join(&name);
            fs::write(&path, t.render(self.format)).map_err(io_err(&path))?;
            files.push(name);
        }
        files.push("summary.txt".into());
        self.manifest.insert("files".into(), json!(files));
        let path = self.dir.join("manifest.json");
        let mut text = serde_json::to_string_pretty(&Value::Object(self.manifest)).unwrap();
        text.push('\n');
        fs::write(&path, text).map_err(io_err(&path))?;
        let path = self.dir.join("summary.txt");
        let mut text = self.summary.join("\n");
        text.push('\n');
        fs::write(&path, text).map_err(io_err(&path))
    }
}

fn load_model(args: &ModelArgs) -> Result<CompartmentalModel, CliError> {
    let text = fs::read_to_string(&args.model).map_err(|e| CliError::Io(args.model.clone(), e))?;
    let mut model = CompartmentalModel::from_json(&text).map_err(|e| invalid("model")(&e))?;
    if let Some(z) = &args.z {
        model = model.with_input_sources(z).map_err(|e| invalid("model")(&e))?;
    }
    let probes = default_probes(&model, 8, 7);
    let report = validate_model(&model, &probes, ValidationOptions::default()).map_err(|e| invalid("model")(&e))?;
    if !report.ok() {
        let failed: Vec<String> = report
            .checks()
            .iter()
            .filter(|c| c.status == crate::model::CheckStatus::Fail)
            .map(|c| format!("{} ({})", c.name, c.details.join("; ")))
            .collect();
        return Err(CliError::Validation(format!(
            "model: failed checks: {}",
            failed.join(", ")
        )));
    }
    Ok(model)
}

impl SpanArgs {
    fn config(&self) -> Result<OdeConfig, CliError> {
        if !(self.rtol > 0.0 && self.atol > 0.0) {
            return Err(CliError::Validation("tolerances must be positive".into()));
        }
        if !(self.t0.is_finite() && self.t_end.is_finite() && self.t_end > self.t0) {
            return Err(CliError::Validation(format!(
                "time span [{}, {}] is empty",
                self.t0, self.t_end
            )));
        }
        Ok(OdeConfig::with_tolerances(self.rtol, self.atol))
    }

    /// Output times within `[start, t_end]`.
    fn grid(&self, start: f64) -> Result<Vec<f64>, CliError> {
        if !self.times.is_empty() {
            if let Some(t) = self.times.iter().find(|&&t| !(t >= start && t <= self.t_end)) {
                return Err(CliError::Validation(format!(
                    "output time {t} outside [{start}, {}]",
                    self.t_end
                )));
            }
            return Ok(self.times.clone());
        }
        if self.points < 2 {
            return Err(CliError::Validation("--points must be at least 2".into()));
        }
        let h = (self.t_end - start) / (self.points - 1) as f64;
        Ok((0..self.points)
            .map(|k| {
                if k + 1 == self.points {
                    self.t_end
                } else {
                    start + h * k as f64
                }
            })
            .collect())
    }

    fn activation(&self, t1: Option<f64>) -> Result<f64, CliError> {
        let t1 = t1.unwrap_or(self.t0);
        if !(t1 >= self.t0 && t1 < self.t_end) {
            return Err(CliError::Validation(format!(
                "activation time {t1} outside [{}, {})",
                self.t0, self.t_end
            )));
        }
        Ok(t1)
    }

    fn record(&self, report: &mut Report, grid: &[f64]) {
        report.set("t0", json!(self.t0));
        report.set("t_end", json!(self.t_end));
        report.set("rtol", json!(self.rtol));
        report.set("atol", json!(self.atol));
        report.set("grid_points", json!(grid.len()));
        if !self.times.is_empty() {
            report.set("times", json!(self.times));
        }
    }
}

fn kinds_of(s: &str) -> Result<Vec<DiactKind>, CliError> {
    parse_kinds(s).map_err(|e| invalid("diact")(&e))
}

fn cmd_simulate(args: &SpanArgs) -> Result<(), CliError> {
    let model = load_model(&args.model)?;
    let cfg = args.config()?;
    let grid = args.grid(args.t0)?;
    let mut report = Report::new("simulate", &args.model, &model)?;
    args.record(&mut report, &grid);
    let m = model.clone();
    let traj = integrate(
        move |t, x, dx| {
            dx.copy_from_slice(m.rhs(t, x)?.as_slice());
            Ok(())
        },
        model.x_init.as_slice(),
        args.t0,
        args.t_end,
        &cfg,
    )
    .map_err(numerical("odeint"))?;
    let mut storage = Table::new("storage", &["t", "i", "value"]);
    let mut inflow = Table::new("throughflow_in", &["t", "i", "value"]);
    let mut outflow = Table::new("throughflow_out", &["t", "i", "value"]);
    for &t in &grid {
        let x = traj.interpolate(t).map_err(numerical("odeint"))?;
        let snap = model.evaluate_flows(t, &x).map_err(numerical("model"))?;
        storage.vector(t, &DVector::from_vec(x));
        inflow.vector(t, &snap.tau_in);
        outflow.vector(t, &snap.tau_out);
    }
    let last = traj.final_state().to_vec();
    let residual = model.rhs(args.t_end, &last).map_err(numerical("model"))?.amax();
    report.line(format!("steps: {}", traj.len() - 1));
    report.line(format!("x({}) = {}", args.t_end, join(&last)));
    report.line(format!("|dx/dt|_inf at t_end = {}", fmt_num(residual)));
    report.add(storage);
    report.add(inflow);
    report.add(outflow);
    report.write()
}

fn join(v: &[f64]) -> String {
    v.iter().map(|x| fmt_num(*x)).collect::<Vec<_>>().join(", ")
}

fn cmd_partition(args: &SpanArgs) -> Result<(), CliError> {
    let model = load_model(&args.model)?;
    let cfg = args.config()?;
    let grid = args.grid(args.t0)?;
    let mut report = Report::new("partition", &args.model, &model)?;
    args.record(&mut report, &grid);
    let part = decompose(&model, args.t0, args.t_end, &cfg).map_err(numerical("partition"))?;
    let n = model.n;
    let mut sub = Table::new("substorage", &["t", "i", "k", "value"]);
    let mut t_in = Table::new("subthroughflow_in", &["t", "i", "k", "value"]);
    let mut t_out = Table::new("subthroughflow_out", &["t", "i", "k", "value"]);
    let mut res = Table::new("residence_time", &["t", "i", "value"]);
    for &t in &grid {
        let frame = part.frame(t).map_err(numerical("partition"))?;
        let st = &frame.state;
        let s = &frame.sub;
        for i in 0..n {
            sub.push(row![t, i + 1, 0usize, st.x0[i]]);
            t_in.push(row![t, i + 1, 0usize, s.tau0_in[i]]);
            t_out.push(row![t, i + 1, 0usize, s.tau0_out[i]]);
            for k in 0..n {
                sub.push(row![t, i + 1, k + 1, st.x_sub[(i, k)]]);
                t_in.push(row![t, i + 1, k + 1, s.t_in[(i, k)]]);
                t_out.push(row![t, i + 1, k + 1, s.t_out[(i, k)]]);
            }
        }
        res.vector(t, &part.intensities(t).map_err(numerical("partition"))?.r);
    }
    let last = part.state(args.t_end).map_err(numerical("partition"))?;
    report.line(format!("compartments: {}", model.labels.join(", ")));
    report.line(format!("initial-stock storage at t_end: {}", join(last.x0.as_slice())));
    for k in 0..n {
        report.line(format!(
            "storage from input into {} at t_end: {}",
            model.labels[k],
            join(last.x_sub.column(k).clone_owned().as_slice())
        ));
    }
    report.add(sub);
    report.add(t_in);
    report.add(t_out);
    report.add(res);
    report.write()
}

fn cmd_path(args: &PathArgs) -> Result<(), CliError> {
    let span = &args.span;
    let model = load_model(&span.model)?;
    let cfg = span.config()?;
    let t1 = span.activation(args.t1)?;
    let grid = span.grid(t1)?;
    let paths: Vec<SubflowPath> = args
        .paths
        .iter()
        .map(|s| {
            let mut p = parse_path(s, &model).map_err(|e| invalid("pathflow")(&e))?;
            if let Some(c) = args.cycles {
                p.cycles = c;
            }
            Ok(p)
        })
        .collect::<Result<_, CliError>>()?;
    let mut report = Report::new("path", &span.model, &model)?;
    span.record(&mut report, &grid);
    report.set("t1", json!(t1));
    report.set("paths", json!(paths.iter().map(|p| p.to_string()).collect::<Vec<_>>()));
    report.set(
        "mode",
        json!(match args.mode {
            Mode::Simultaneous => "simultaneous",
            Mode::PostHoc => "post-hoc",
        }),
    );
    let part = decompose(&model, span.t0, span.t_end, &cfg).map_err(numerical("partition"))?;
    let mode = SolveMode::from(args.mode);
    for (p, path) in paths.iter().enumerate() {
        let rec = transient_flows(&part, path, t1, mode).map_err(numerical("pathflow"))?;
        let mut table = Table::new(
            format!("path{}", p + 1),
            &["t", "step", "i", "inflow", "outflow", "storage"],
        );
        let mut peak = (0.0f64, t1);
        for &t in &grid {
            let nodes = rec.nodes_at(t).map_err(numerical("pathflow"))?;
            for (s, v) in nodes.iter().enumerate() {
                table.push(row![t, s + 1, v.compartment + 1, v.inflow, v.outflow, v.storage]);
            }
            let last = nodes.last().unwrap();
            let end = if path.exits() { last.outflow } else { last.inflow };
            if end > peak.0 {
                peak = (end, t);
            }
        }
        report.add(table);
        let what = if path.exits() {
            "exit outflow"
        } else {
            "terminal inflow"
        };
        report.line(format!(
            "path {}: {path}; max {what} {} at t = {}",
            p + 1,
            fmt_num(peak.0),
            fmt_num(peak.1)
        ));
        if path.unrolled().tracked.len() > path.layout().tracked.len() {
            let cum = cumulative_transient(&part, path, t1, mode).map_err(numerical("pathflow"))?;
            let mut table = Table::new(
                format!("path{}_cumulative", p + 1),
                &["t", "i", "inflow", "outflow", "storage"],
            );
            for &t in &grid {
                let v = cum.cumulative_at(t).map_err(numerical("pathflow"))?;
                table.push(row![t, v.compartment + 1, v.inflow, v.outflow, v.storage]);
            }
            report.add(table);
            report.line(format!("path {}: cumulative over {} arrivals", p + 1, path.cycles));
        }
    }
    report.write()
}

fn cmd_diact(args: &DiactArgs) -> Result<(), CliError> {
    let span = &args.span;
    let model = load_model(&span.model)?;
    let cfg = span.config()?;
    let kinds = kinds_of(&args.kinds)?;
    let t1 = span.activation(args.t1)?;
    let grid = span.grid(t1)?;
    let mut report = Report::new("diact", &span.model, &model)?;
    span.record(&mut report, &grid);
    report.set("t1", json!(t1));
    report.set("kinds", json!(kinds.iter().map(|k| k.name()).collect::<Vec<_>>()));
    let part = decompose(&model, span.t0, span.t_end, &cfg).map_err(numerical("partition"))?;
    let st = diact_storages(&part, &kinds, t1).map_err(numerical("diact"))?;
    let n = model.n;
    let mut flagged = Vec::new();
    for &kind in &kinds {
        let name = kind.name();
        let mut dist = Table::new(format!("{name}_distribution"), &["t", "i", "j", "value"]);
        let mut flow = Table::new(format!("{name}_flow"), &["t", "i", "j", "value"]);
        let mut storage = Table::new(format!("{name}_storage"), &["t", "i", "j", "value"]);
        let mut simple_flow = Table::new(format!("{name}_simple_flow"), &["t", "i", "j", "value"]);
        let mut simple_storage = Table::new(format!("{name}_simple_storage"), &["t", "i", "j", "value"]);
        let mut sub_flow = Table::new(format!("{name}_subsystem_flow"), &["t", "l", "i", "j", "value"]);
        let mut sub_storage = Table::new(format!("{name}_subsystem_storage"), &["t", "l", "i", "j", "value"]);
        for &t in &grid {
            let set = st.distributions(t).map_err(numerical("diact"))?;
            if kind == kinds[0] && !set.flagged.is_empty() {
                flagged.push((t, set.flagged.clone()));
            }
            dist.matrix(t, set.get(kind));
            flow.matrix(t, &set.flows(kind, FlowScope::Composite).map_err(numerical("diact"))?);
            storage.matrix(t, &st.composite(kind, t).map_err(numerical("diact"))?);
            simple_flow.matrix(t, &set.flows(kind, FlowScope::Simple).map_err(numerical("diact"))?);
            simple_storage.matrix(t, &st.simple(kind, t).map_err(numerical("diact"))?);
            for l in 0..=n {
                let f = set.flows(kind, FlowScope::Subsystem(l)).map_err(numerical("diact"))?;
                let x = st.subsystem(kind, l, t).map_err(numerical("diact"))?;
                for i in 0..n {
                    for j in 0..n {
                        sub_flow.push(row![t, l, i + 1, j + 1, f[(i, j)]]);
                        sub_storage.push(row![t, l, i + 1, j + 1, x[(i, j)]]);
                    }
                }
            }
        }
        let last = st.distributions(span.t_end).map_err(numerical("diact"))?;
        let f = last.flows(kind, FlowScope::Composite).map_err(numerical("diact"))?;
        report.line(format!("{name} composite flows at t_end (row i, column j):"));
        for i in 0..n {
            report.line(format!("  {}", join(f.row(i).clone_owned().transpose().as_slice())));
        }
        for t in [dist, flow, storage, simple_flow, simple_storage, sub_flow, sub_storage] {
            report.add(t);
        }
    }
    if flagged.is_empty() {
        report.line("no compartment fell below the throughflow threshold");
    } else {
        report.line(format!(
            "{} output times had columns zeroed below the throughflow threshold (first t = {})",
            flagged.len(),
            fmt_num(flagged[0].0)
        ));
    }
    report.write()
}

fn cmd_static(args: &StaticArgs) -> Result<(), CliError> {
    let model = load_model(&args.model)?;
    let kinds = kinds_of(&args.kinds)?;
    let mut report = Report::new("static", &args.model, &model)?;
    report.set("t", json!(args.t));
    report.set("kinds", json!(kinds.iter().map(|k| k.name()).collect::<Vec<_>>()));
    let cfg = SteadyConfig {
        t: args.t,
        ..SteadyConfig::default()
    };
    let x_ss = find_steady_state(&model, &model.x_init, &cfg).map_err(numerical("staticnet"))?;
    let sol = static_partition_at(&model, args.t, &x_ss).map_err(numerical("staticnet"))?;
    let n = sol.n();
    let mut vectors = Table::new("steady_state", &["i", "storage", "throughflow", "residence_time"]);
    for i in 0..n {
        vectors.push(row![i + 1, sol.x_ss[i], sol.tau[i], sol.r[i]]);
    }
    report.add(vectors);
    let add_matrix = |report: &mut Report, name: String, m: &DMatrix<f64>| {
        let by_source = name.ends_with("substorage") || name == "subthroughflow";
        let mut t = Table::new(name, &["i", if by_source { "k" } else { "j" }, "value"]);
        for i in 0..m.nrows() {
            for j in 0..m.ncols() {
                t.push(row![i + 1, j + 1, m[(i, j)]]);
            }
        }
        report.add(t);
    };
    add_matrix(&mut report, "substorage".into(), &sol.x_sub);
    add_matrix(&mut report, "subthroughflow".into(), &sol.t_sub);
    add_matrix(&mut report, "flow_distribution".into(), &sol.n_mat);
    add_matrix(&mut report, "storage_distribution".into(), &sol.s_mat);
    match output_oriented(&sol) {
        Ok(dual) => {
            add_matrix(&mut report, "output_flow_distribution".into(), &dual.n_bar);
            add_matrix(&mut report, "output_storage_distribution".into(), &dual.s_bar);
            add_matrix(&mut report, "output_substorage".into(), &dual.x_sub_bar);
        }
        Err(e) => report.line(format!("output-oriented analysis skipped: {e}")),
    }
    for &kind in &kinds {
        let d = static_diact(&sol, kind).map_err(numerical("diact"))?;
        let name = kind.name();
        add_matrix(&mut report, format!("{name}_distribution"), &d.n_star);
        add_matrix(&mut report, format!("{name}_storage_distribution"), &d.s_star);
        add_matrix(&mut report, format!("{name}_flow"), &d.t_star);
        add_matrix(&mut report, format!("{name}_storage"), &d.x_star);
        add_matrix(&mut report, format!("{name}_simple_flow"), &d.t_simple);
        add_matrix(&mut report, format!("{name}_simple_storage"), &d.x_simple);
    }
    report.line(format!("steady state: {}", join(sol.x_ss.as_slice())));
    report.line(format!("throughflow: {}", join(sol.tau.as_slice())));
    report.line("substorage (row i, column k):");
    for i in 0..n {
        report.line(format!(
            "  {}",
            join(sol.x_sub.row(i).clone_owned().transpose().as_slice())
        ));
    }
    report.write()
}

fn parse_pair(s: &str, n: usize) -> Result<(usize, usize), CliError> {
    let bad = || CliError::Validation(format!("interact: pair `{s}` must be two indices in 1..={n}"));
    let (a, b) = s.split_once(',').ok_or_else(bad)?;
    let a: usize = a.trim().parse().map_err(|_| bad())?;
    let b: usize = b.trim().parse().map_err(|_| bad())?;
    if a == 0 || b == 0 || a > n || b > n || a == b {
        return Err(bad());
    }
    Ok((a - 1, b - 1))
}

fn cmd_interact(args: &InteractArgs) -> Result<(), CliError> {
    let span = &args.span;
    let model = load_model(&span.model)?;
    let cfg = span.config()?;
    let kinds = kinds_of(&args.kinds)?;
    let pair = parse_pair(&args.pair, model.n)?;
    let basis: Basis = args.basis.parse().map_err(|e| invalid("interact")(&e))?;
    let source: Source = args.source.parse().map_err(|e| invalid("interact")(&e))?;
    let norm: Normalization = args.normalization.parse().map_err(|e| invalid("interact")(&e))?;
    let t1 = span.activation(args.t1)?;
    let grid = span.grid(t1)?;
    let mut report = Report::new("interact", &span.model, &model)?;
    span.record(&mut report, &grid);
    report.set("t1", json!(t1));
    report.set("pair", json!([pair.0 + 1, pair.1 + 1]));
    report.set("kinds", json!(kinds.iter().map(|k| k.name()).collect::<Vec<_>>()));
    report.set("basis", json!(args.basis.trim().to_ascii_lowercase()));
    report.set("source", json!(args.source.trim().to_ascii_lowercase()));
    report.set("normalization", json!(args.normalization.trim().to_ascii_lowercase()));
    let part = decompose(&model, span.t0, span.t_end, &cfg).map_err(numerical("partition"))?;
    let mut with_transfer = kinds.clone();
    if norm == Normalization::PairwiseTransfer && !with_transfer.contains(&DiactKind::Transfer) {
        with_transfer.push(DiactKind::Transfer);
    }
    let st = diact_storages(&part, &with_transfer, t1).map_err(numerical("diact"))?;
    let mut table = Table::new("interaction", &["t", "kind", "net", "delta", "mu"]);
    for &kind in &kinds {
        let rep = classify(&st, pair, kind, basis, source, norm, &grid).map_err(numerical("interact"))?;
        let mut changes = 0;
        for (q, p) in rep.points.iter().enumerate() {
            table.push(row![p.t, kind.name(), p.net, p.delta.to_string(), p.mu]);
            if q > 0 && rep.points[q - 1].delta != p.delta {
                changes += 1;
            }
        }
        let last = rep.points.last().unwrap();
        let label = last.delta.label().map(|l| format!(" ({l})")).unwrap_or_default();
        report.line(format!(
            "{}: sign at t_end {}{label}, strength {}, {changes} sign change(s) on the grid",
            kind.name(),
            last.delta,
            fmt_num(last.mu)
        ));
    }
    report.add(table);
    report.write()
}

pub fn run(cli: &Cli) -> Result<(), CliError> {
    match &cli.command {
        Command::Simulate(a) => cmd_simulate(a),
        Command::Partition(a) => cmd_partition(a),
        Command::Path(a) => cmd_path(a),
        Command::Diact(a) => cmd_diact(a),
        Command::Static(a) => cmd_static(a),
        Command::Interact(a) => cmd_interact(a),
    }
}

/// Parses `args`, runs the command and returns the process exit status.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 1 } else { 0 };
        }
    };
    match run(&cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("ecopart: {e}");
            e.exit_code()
        }
    }
}
