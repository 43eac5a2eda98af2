//! Command-line front end.
//!
//! Every subcommand builds a [`Report`] of named tables and scalars, which is
//! written as tidy CSV (6 significant digits) or JSON (15 significant digits).
//! Exit codes: 0 success, 1 validation error, 2 numeric threshold exceeded,
//! 3 I/O error.

use std::ffi::OsString;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Parser, Subcommand, ValueEnum};
use serde::Deserialize;
use serde_json::{json, Map, Value};

use crate::disparity::{
    average_rank, average_rank_affine, delta_global, delta_local, finite_fan_distribution, initial_from_disparity,
    limit_distribution, DisparityTable, Orientation,
};
use crate::distribution::{l1_distance, Density, Side};
use crate::error::Error;
use crate::exec::{configure_threads, Execution};
use crate::fan::{theorem43_residual, ConvergenceRate, FanSpec, Mode};
use crate::lagrangian::{
    build_lagrangian, c_constants, equilibrium, predicted_limit, LagrangianParams, DEFAULT_TAIL_TERMS,
    DEFAULT_TRUNCATION,
};
use crate::twist::{synth_prime_stream, StreamConfig};

pub const EXIT_OK: i32 = 0;
pub const EXIT_VALIDATION: i32 = 1;
pub const EXIT_THRESHOLD: i32 = 2;
pub const EXIT_IO: i32 = 3;

const DEFAULT_STREAM_CAP: f64 = 1e5;

#[derive(Debug, Parser)]
#[command(name = "selmer-lab", version, about = "Markov model laboratory for Selmer ranks in twist families")]
struct Cli {
    /// Master seed for every random stream.
    #[arg(long, global = true, default_value_t = 0)]
    seed: u64,
    /// Worker threads for the Monte Carlo loops.
    #[arg(long, global = true, env = "SELMER_LAB_THREADS")]
    threads: Option<usize>,
    /// Write output here instead of stdout.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[arg(long, global = true, value_enum, default_value_t = Format::Csv)]
    format: Format,
    /// Include wall time in the report (breaks byte-identical reruns).
    #[arg(long, global = true)]
    timing: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Format {
    Csv,
    Json,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum OrientationArg {
    #[value(name = "theorem_A", alias = "theorem-a")]
    TheoremA,
    #[value(name = "corollary_1112", alias = "corollary-1112")]
    Corollary1112,
}

impl From<OrientationArg> for Orientation {
    fn from(o: OrientationArg) -> Self {
        match o {
            OrientationArg::TheoremA => Orientation::TheoremA,
            OrientationArg::Corollary1112 => Orientation::Corollary1112,
        }
    }
}

#[derive(Debug, clap::Args)]
struct ModelArgs {
    #[arg(long, default_value_t = 2)]
    p: u64,
    /// Rank truncation N.
    #[arg(long = "n", default_value_t = DEFAULT_TRUNCATION)]
    n: usize,
    /// Factors J kept in the infinite product.
    #[arg(long, default_value_t = DEFAULT_TAIL_TERMS)]
    tail_terms: usize,
}

impl ModelArgs {
    fn params(&self) -> crate::Result<LagrangianParams> {
        LagrangianParams::new(self.p, self.n, self.tail_terms)
    }
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Table of c_n with cumulative even and odd mass.
    Constants(ModelArgs),
    /// The equilibrium states E^+ and E^-.
    Equilibrium(ModelArgs),
    /// Distance of M^{2j} f and M^{2j+1} f to their predicted limits.
    Iterate {
        #[command(flatten)]
        model: ModelArgs,
        /// Initial density as comma-separated masses at ranks 0, 1, ...
        #[arg(long, default_value = "1")]
        initial: String,
        /// Number of applications of M^2.
        #[arg(long, default_value_t = 60)]
        steps: usize,
    },
    /// Fan experiment from a JSON spec.
    Fans {
        /// Path to the experiment spec.
        spec: PathBuf,
    },
    /// Disparity of a character table and its limiting rank law.
    Disparity {
        #[command(flatten)]
        model: ModelArgs,
        /// Path to the disparity table JSON.
        table: PathBuf,
        #[arg(long, value_enum, default_value_t = OrientationArg::TheoremA)]
        orientation: OrientationArg,
        /// Also report the finite fan law M^k(E_1^±) for this total width.
        #[arg(long)]
        k: Option<usize>,
    },
    /// Average limiting rank over a grid of disparities with an affine fit.
    AvgRank {
        #[command(flatten)]
        model: ModelArgs,
        #[arg(long, value_enum, default_value_t = OrientationArg::TheoremA)]
        orientation: OrientationArg,
        /// Grid points on [-1/2, 1/2].
        #[arg(long, default_value_t = 21)]
        points: usize,
    },
}

#[derive(Debug)]
enum Failure {
    Validation(String),
    Threshold(String),
    Io(String),
}

impl Failure {
    fn code(&self) -> i32 {
        match self {
            Failure::Validation(_) => EXIT_VALIDATION,
            Failure::Threshold(_) => EXIT_THRESHOLD,
            Failure::Io(_) => EXIT_IO,
        }
    }

    fn message(&self) -> &str {
        match self {
            Failure::Validation(m) | Failure::Threshold(m) | Failure::Io(m) => m,
        }
    }
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        match e {
            Error::NoConvergence { .. } => Failure::Threshold(e.to_string()),
            _ => Failure::Validation(e.to_string()),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Cell {
    Int(i64),
    Float(f64),
    Text(String),
}

impl From<usize> for Cell {
    fn from(v: usize) -> Self {
        Cell::Int(v as i64)
    }
}

impl From<f64> for Cell {
    fn from(v: f64) -> Self {
        Cell::Float(v)
    }
}

impl From<&str> for Cell {
    fn from(v: &str) -> Self {
        Cell::Text(v.to_string())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Table {
    pub name: String,
    pub columns: Vec<String>,
    pub rows: Vec<Vec<Cell>>,
}

impl Table {
    fn new(name: &str, columns: &[&str]) -> Self {
        Table { name: name.into(), columns: columns.iter().map(|c| c.to_string()).collect(), rows: Vec::new() }
    }

    fn push(&mut self, row: Vec<Cell>) {
        debug_assert_eq!(row.len(), self.columns.len());
        self.rows.push(row);
    }
}

/// Output of one subcommand.
#[derive(Debug, Clone, PartialEq)]
pub struct Report {
    pub command: String,
    pub inputs: Value,
    pub tables: Vec<Table>,
    pub scalars: Vec<(String, Cell)>,
}

impl Report {
    fn new(command: &str, inputs: Value) -> Self {
        Report { command: command.into(), inputs, tables: Vec::new(), scalars: Vec::new() }
    }

    fn scalar(&mut self, name: &str, value: impl Into<Cell>) {
        self.scalars.push((name.into(), value.into()));
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::new();
        for (j, t) in self.tables.iter().enumerate() {
            if j > 0 {
                out.push('\n');
            }
            out.push_str(&t.columns.join(","));
            out.push('\n');
            for row in &t.rows {
                let cells: Vec<String> = row.iter().map(csv_cell).collect();
                out.push_str(&cells.join(","));
                out.push('\n');
            }
        }
        for (name, value) in &self.scalars {
            let _ = writeln!(out, "{},{}", name, csv_cell(value));
        }
        out
    }

    pub fn to_json(&self, seed: u64) -> String {
        let mut tables = Map::new();
        for t in &self.tables {
            let rows: Vec<Value> = t
                .rows
                .iter()
                .map(|r| Value::Object(t.columns.iter().cloned().zip(r.iter().map(json_cell)).collect()))
                .collect();
            tables.insert(t.name.clone(), Value::Array(rows));
        }
        let scalars: Map<String, Value> = self.scalars.iter().map(|(k, v)| (k.clone(), json_cell(v))).collect();
        let doc = json!({
            "command": self.command,
            "version": env!("CARGO_PKG_VERSION"),
            "seed": seed,
            "inputs": self.inputs,
            "outputs": {"tables": tables, "scalars": scalars},
        });
        let mut s = serde_json::to_string_pretty(&doc).expect("report is valid JSON");
        s.push('\n');
        s
    }
}

/// `x` with six significant digits, trailing zeros dropped.
pub fn format_sig6(x: f64) -> String {
    if x == 0.0 || !x.is_finite() {
        return if x == 0.0 { "0".into() } else { x.to_string() };
    }
    let exp = x.abs().log10().floor() as i32;
    if (-5..15).contains(&exp) {
        let decimals = (5 - exp).max(0) as usize;
        let s = format!("{x:.decimals$}");
        if s.contains('.') {
            s.trim_end_matches('0').trim_end_matches('.').to_string()
        } else {
            s
        }
    } else {
        format!("{x:.5e}")
    }
}

/// `x` rounded to 15 significant digits.
pub fn round_sig15(x: f64) -> f64 {
    if x.is_finite() {
        format!("{x:.14e}").parse().unwrap_or(x)
    } else {
        x
    }
}

fn csv_cell(c: &Cell) -> String {
    match c {
        Cell::Int(v) => v.to_string(),
        Cell::Float(v) => format_sig6(*v),
        Cell::Text(s) if s.contains([',', '"', '\n']) => format!("\"{}\"", s.replace('"', "\"\"")),
        Cell::Text(s) => s.clone(),
    }
}

fn json_cell(c: &Cell) -> Value {
    match c {
        Cell::Int(v) => json!(v),
        Cell::Float(v) => json!(round_sig15(*v)),
        Cell::Text(s) => json!(s),
    }
}

fn density_table(name: &str, columns: &[(&str, &Density)]) -> Table {
    let mut header = vec!["n"];
    header.extend(columns.iter().map(|(c, _)| *c));
    let mut t = Table::new(name, &header);
    let n = columns.first().map_or(0, |(_, d)| d.truncation());
    for r in 0..n {
        let mut row = vec![Cell::from(r)];
        row.extend(columns.iter().map(|(_, d)| Cell::Float(d.get(r))));
        t.push(row);
    }
    t
}

fn parse_masses(text: &str) -> Result<Vec<f64>, Failure> {
    text.split(',')
        .map(|s| s.trim().parse::<f64>().map_err(|e| Failure::Validation(format!("bad mass {s:?}: {e}"))))
        .collect()
}

fn read_file(path: &Path) -> Result<String, Failure> {
    std::fs::read_to_string(path).map_err(|e| Failure::Io(format!("{}: {e}", path.display())))
}

fn model_inputs(m: &ModelArgs) -> Value {
    json!({"p": m.p, "N": m.n, "tail_terms": m.tail_terms})
}

fn cmd_constants(model: &ModelArgs) -> Result<Report, Failure> {
    let params = model.params()?;
    let c = c_constants(&params);
    let mut report = Report::new("constants", model_inputs(model));
    let mut t = Table::new("constants", &["n", "c_n", "cumulative_even", "cumulative_odd"]);
    let (mut even, mut odd) = (0.0, 0.0);
    for (n, v) in c.iter().enumerate() {
        match Side::of(n) {
            Side::Even => even += v,
            Side::Odd => odd += v,
        }
        t.push(vec![n.into(), (*v).into(), even.into(), odd.into()]);
    }
    report.tables.push(t);
    report.scalar("sum_even", even);
    report.scalar("sum_odd", odd);
    Ok(report)
}

fn cmd_equilibrium(model: &ModelArgs) -> Result<Report, Failure> {
    let params = model.params()?;
    let pair = equilibrium(&params)?;
    let op = build_lagrangian(&params);
    let mut report = Report::new("equilibrium", model_inputs(model));
    report.tables.push(density_table("equilibrium", &[("e_plus", &pair.e_plus), ("e_minus", &pair.e_minus)]));
    report.scalar("fixed_point_error_plus", l1_distance(&op.apply(&pair.e_plus)?, &pair.e_minus)?);
    report.scalar("fixed_point_error_minus", l1_distance(&op.apply(&pair.e_minus)?, &pair.e_plus)?);
    report.scalar("mean_plus", pair.e_plus.mean());
    report.scalar("mean_minus", pair.e_minus.mean());
    Ok(report)
}

fn cmd_iterate(model: &ModelArgs, initial: &str, steps: usize) -> Result<Report, Failure> {
    let params = model.params()?;
    let f = Density::new(parse_masses(initial)?, params.truncation)?;
    let pair = equilibrium(&params)?;
    let op = build_lagrangian(&params);
    let square = op.power(2);
    let even_limit = predicted_limit(&f, Side::Even, &pair)?;
    let odd_limit = predicted_limit(&f, Side::Odd, &pair)?;
    let mut report = Report::new("iterate", json!({"model": model_inputs(model), "initial": f.values(), "steps": steps}));
    let mut t = Table::new("trajectory", &["step", "l1_even", "l1_odd"]);
    let mut cur = f.clone();
    let mut last = 0.0;
    for step in 0..=steps {
        last = l1_distance(&cur, &even_limit)?;
        let odd = l1_distance(&op.apply(&cur)?, &odd_limit)?;
        t.push(vec![step.into(), last.into(), odd.into()]);
        cur = square.apply(&cur)?;
    }
    report.tables.push(t);
    report.scalar("rho", f.rho());
    report.scalar("final_l1_even", last);
    Ok(report)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "snake_case")]
enum ModeTag {
    Exact,
    Sampled,
}

/// Fans spec. `walks` is the total walk budget, split evenly over `levels`.
#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
struct FanExperiment {
    m: usize,
    k: usize,
    #[serde(rename = "X")]
    x: f64,
    rate: ConvergenceRate,
    mode: ModeTag,
    #[serde(rename = "Y", default)]
    y: Option<f64>,
    #[serde(default)]
    walks: Option<u64>,
    #[serde(default)]
    seed: Option<u64>,
    #[serde(default)]
    p: Option<u64>,
    #[serde(rename = "N", default)]
    n: Option<usize>,
    #[serde(default)]
    initial: Option<Vec<f64>>,
    #[serde(default)]
    stream: Option<StreamConfig>,
    #[serde(default)]
    stream_bound: Option<f64>,
    #[serde(default)]
    levels: Option<usize>,
    #[serde(default)]
    threshold: Option<f64>,
}

fn cmd_fans(path: &Path, global_seed: u64) -> Result<(Report, Option<Failure>), Failure> {
    let text = read_file(path)?;
    let exp: FanExperiment =
        serde_json::from_str(&text).map_err(|e| Failure::Validation(format!("{}: {e}", path.display())))?;
    let seed = exp.seed.unwrap_or(global_seed);
    let params = LagrangianParams::new(exp.p.unwrap_or(2), exp.n.unwrap_or(DEFAULT_TRUNCATION), DEFAULT_TAIL_TERMS)?;
    let spec = FanSpec::new(exp.rate, exp.m, exp.k, exp.x)?;
    spec.width_pattern()?;
    let levels = exp.levels.unwrap_or(100).max(1);
    let mode = match exp.mode {
        ModeTag::Exact => Mode::ExactKernel,
        ModeTag::Sampled => {
            let y = exp.y.ok_or_else(|| Failure::Validation("sampled mode needs Y".into()))?;
            let budget = exp.walks.ok_or_else(|| Failure::Validation("sampled mode needs walks".into()))?;
            Mode::SampledAtY { y, walks: (budget / levels as u64).max(1), seed }
        }
    };
    let threshold = exp.threshold.unwrap_or(match exp.mode {
        ModeTag::Exact => 1e-10,
        ModeTag::Sampled => 0.05,
    });
    let stream_config = exp.stream.unwrap_or(StreamConfig { seed, ..StreamConfig::default() });
    let widest = spec.log_bounds()[exp.m.saturating_sub(1)].exp();
    let bound = exp.stream_bound.unwrap_or(widest.min(DEFAULT_STREAM_CAP));
    let stream = synth_prime_stream(&stream_config, bound)?;
    let initial = Density::new(exp.initial.clone().unwrap_or_else(|| vec![1.0]), params.truncation)?;
    let r = theorem43_residual(&spec, &stream, &initial, mode, params.p, levels, seed, Execution::default())?;

    let inputs = json!({
        "m": exp.m, "k": exp.k, "X": exp.x, "mode": format!("{:?}", exp.mode).to_lowercase(),
        "Y": exp.y, "walks": exp.walks, "levels": levels, "p": params.p.get(), "N": params.truncation,
        "stream_bound": bound, "stream_sites": stream.len(), "threshold": threshold, "seed": seed,
    });
    let mut report = Report::new("fans", inputs);
    report.tables.push(density_table("fan", &[("fan", &r.fan), ("target", &r.target)]));
    report.scalar("fan_size", r.fan_size);
    report.scalar("residual", r.residual);
    let failure = (r.residual >= threshold)
        .then(|| Failure::Threshold(format!("residual {} is not below the threshold {threshold}", r.residual)));
    Ok((report, failure))
}

fn cmd_disparity(model: &ModelArgs, path: &Path, orientation: Orientation, k: Option<usize>) -> Result<Report, Failure> {
    let params = model.params()?;
    let table = DisparityTable::from_json(&read_file(path)?)
        .map_err(|e| Failure::Validation(format!("{}: {e}", path.display())))?;
    let delta = delta_global(&table)?;
    let pair = equilibrium(&params)?;
    let limit = limit_distribution(delta, &pair, orientation)?;
    let mut report = Report::new(
        "disparity",
        json!({"model": model_inputs(model), "orientation": format!("{orientation:?}"), "k": k, "places": table.places.len()}),
    );
    let mut places = Table::new("places", &["id", "delta_v"]);
    for place in &table.places {
        places.push(vec![place.id.as_str().into(), delta_local(place)?.into()]);
    }
    report.tables.push(places);
    match k {
        Some(k) => {
            let initial = initial_from_disparity(orientation.initial_disparity(delta), params.truncation)?;
            let finite = finite_fan_distribution(&initial, k, &params)?;
            report.scalar("residual_finite_vs_limit", l1_distance(&finite, &limit)?);
            report.tables.push(density_table("limit", &[("limit", &limit), ("finite", &finite)]));
        }
        None => report.tables.push(density_table("limit", &[("limit", &limit)])),
    }
    report.scalar("delta", delta);
    report.scalar("even_mass", limit.mass(Side::Even));
    report.scalar("average_rank", average_rank(delta, &pair, orientation)?);
    Ok(report)
}

fn cmd_avg_rank(model: &ModelArgs, orientation: Orientation, points: usize) -> Result<Report, Failure> {
    if points < 2 {
        return Err(Failure::Validation("the grid needs at least 2 points".into()));
    }
    let params = model.params()?;
    let pair = equilibrium(&params)?;
    let mut t = Table::new("avg_rank", &["delta", "mean_rank"]);
    let mut xs = Vec::with_capacity(points);
    let mut ys = Vec::with_capacity(points);
    for j in 0..points {
        let d = -0.5 + j as f64 / (points - 1) as f64;
        let y = average_rank(d, &pair, orientation)?;
        t.push(vec![d.into(), y.into()]);
        xs.push(d);
        ys.push(y);
    }
    let (intercept, slope) = least_squares(&xs, &ys);
    let mut report = Report::new(
        "avg-rank",
        json!({"model": model_inputs(model), "orientation": format!("{orientation:?}"), "points": points}),
    );
    report.tables.push(t);
    report.scalar("intercept", intercept);
    report.scalar("slope", slope);
    report.scalar("value_at_half", average_rank(0.5, &pair, orientation)?);
    let (a, b) = average_rank_affine(&pair, orientation);
    report.scalar("closed_form_intercept", a);
    report.scalar("closed_form_slope", b);
    Ok(report)
}

fn least_squares(xs: &[f64], ys: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let sxy: f64 = xs.iter().zip(ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let sxx: f64 = xs.iter().map(|x| (x - mx).powi(2)).sum();
    let slope = sxy / sxx;
    (my - slope * mx, slope)
}

fn execute(cli: &Cli) -> Result<(Report, Option<Failure>), Failure> {
    Ok(match &cli.command {
        Command::Constants(m) => (cmd_constants(m)?, None),
        Command::Equilibrium(m) => (cmd_equilibrium(m)?, None),
        Command::Iterate { model, initial, steps } => (cmd_iterate(model, initial, *steps)?, None),
        Command::Fans { spec } => cmd_fans(spec, cli.seed)?,
        Command::Disparity { model, table, orientation, k } => {
            (cmd_disparity(model, table, (*orientation).into(), *k)?, None)
        }
        Command::AvgRank { model, orientation, points } => (cmd_avg_rank(model, (*orientation).into(), *points)?, None),
    })
}

fn emit(cli: &Cli, report: &Report) -> Result<(), Failure> {
    let text = match cli.format {
        Format::Csv => report.to_csv(),
        Format::Json => report.to_json(cli.seed),
    };
    match &cli.out {
        Some(path) => std::fs::write(path, text).map_err(|e| Failure::Io(format!("{}: {e}", path.display()))),
        None => {
            use std::io::Write;
            std::io::stdout().write_all(text.as_bytes()).map_err(|e| Failure::Io(e.to_string()))
        }
    }
}

/// Parses `args`, runs the subcommand and returns the process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_VALIDATION } else { EXIT_OK };
        }
    };
    if let Some(n) = cli.threads {
        if let Err(e) = configure_threads(n) {
            eprintln!("error: cannot size the worker pool: {e}");
            return EXIT_VALIDATION;
        }
    }
    let start = Instant::now();
    let outcome = execute(&cli).and_then(|(mut report, failure)| {
        if cli.timing {
            report.scalar("wall_time_s", start.elapsed().as_secs_f64());
        }
        emit(&cli, &report)?;
        failure.map_or(Ok(()), Err)
    });
    match outcome {
        Ok(()) => EXIT_OK,
        Err(f) => {
            eprintln!("error: {}", f.message());
            f.code()
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sig6_formatting() {
        assert_eq!(format_sig6(0.419422444), "0.419422");
        assert_eq!(format_sig6(1.0), "1");
        assert_eq!(format_sig6(0.0), "0");
        assert_eq!(format_sig6(123456.7), "123457");
        assert_eq!(format_sig6(-0.5), "-0.5");
        assert_eq!(format_sig6(3.2e-12), "3.20000e-12");
    }

    #[test]
    fn sig15_rounding() {
        assert_eq!(round_sig15(0.1 + 0.2), 0.3);
        assert_eq!(round_sig15(1.0 / 3.0), 0.333333333333333);
    }

    #[test]
    fn least_squares_recovers_a_line() {
        let xs = [-0.5, 0.0, 0.5, 1.0];
        let ys: Vec<f64> = xs.iter().map(|x| 2.0 - 3.0 * x).collect();
        let (a, b) = least_squares(&xs, &ys);
        assert!((a - 2.0).abs() < 1e-12 && (b + 3.0).abs() < 1e-12);
    }

    #[test]
    fn csv_quotes_text() {
        assert_eq!(csv_cell(&Cell::Text("a,b".into())), "\"a,b\"");
    }
}
