//! Command-line front end.
//!
//! Every parameter flag accepts a range: a scalar (`100`), a list
//! (`50,100,200`), a linear grid (`10:800:80`) or a log grid
//! (`log:1e-3:10:5`). Commands evaluate the Cartesian product of all ranges,
//! with `L` varying slowest and `strategy` fastest, and emit one record per
//! grid point in grid order.

use std::ffi::OsString;
use std::fmt::Write as _;
use std::fs;
use std::io::{self, Write};
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::amplify::{cc_threshold_l0, AmplificationStrategy, CcThreshold, ExpectationMode};
use crate::error::Error;
use crate::gkpcode::{self, PauliModel, QberThreshold};
use crate::model::{PhysicalConstants, RepeaterConfig};
use crate::montecarlo::{self, derive_seed, SimulationOptions};
use crate::rates::{self, MuExponent, NoiseMapping, RateOptions, RateResult};

pub const EXIT_OK: i32 = 0;
pub const EXIT_VALIDATION: i32 = 2;
pub const EXIT_NUMERIC: i32 = 3;

#[derive(Debug)]
pub enum CliError {
    Lib(Error),
    Usage(String),
    Io(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Lib(e) if e.is_validation() => EXIT_VALIDATION,
            CliError::Lib(_) | CliError::Io(_) => EXIT_NUMERIC,
            CliError::Usage(_) => EXIT_VALIDATION,
        }
    }
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Lib(e) => write!(f, "{e}"),
            CliError::Usage(m) | CliError::Io(m) => f.write_str(m),
        }
    }
}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        CliError::Lib(e)
    }
}

impl From<io::Error> for CliError {
    fn from(e: io::Error) -> Self {
        CliError::Io(e.to_string())
    }
}

impl From<csv::Error> for CliError {
    fn from(e: csv::Error) -> Self {
        CliError::Io(e.to_string())
    }
}

impl From<serde_json::Error> for CliError {
    fn from(e: serde_json::Error) -> Self {
        CliError::Io(e.to_string())
    }
}

type CliResult<T> = std::result::Result<T, CliError>;

fn usage(msg: impl Into<String>) -> CliError {
    CliError::Usage(msg.into())
}

#[derive(Parser, Debug)]
#[command(name = "gkp-repeater", version, about = "Secret-key rates of GKP quantum repeaters")]
pub struct Cli {
    /// Output file; stdout when omitted.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    #[arg(long, global = true, value_enum, default_value_t = Format::Csv)]
    pub format: Format,
    #[arg(long, global = true, default_value_t = 0)]
    pub seed: u64,
    /// Worker threads (default: available parallelism).
    #[arg(long, global = true)]
    pub workers: Option<usize>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Format {
    Csv,
    Json,
    Text,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Analytic key rate on a parameter grid.
    Rate(ParamArgs),
    /// Segment-length thresholds below which CC amplification wins.
    Table1(Table1Args),
    /// Operation-noise thresholds in the lossless-memory limit.
    Table2(Table2Args),
    /// Analytic, numerically averaged and simulated rates side by side.
    Compare(SimArgs),
    /// Best segment count for each grid point (the `--n` flag is ignored).
    Optimize(OptimizeArgs),
    /// Correctionless single-spin baseline next to the GKP rate.
    Baseline(BaselineArgs),
    /// Monte Carlo chain statistics.
    Simulate(SimArgs),
    /// Repeaterless bound.
    Plob(PlobArgs),
}

#[derive(Args, Debug, Clone, Default)]
pub struct ParamArgs {
    /// JSON file with `RepeaterConfig` fields; flags override it.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Total distance, km.
    #[arg(long = "L", value_name = "RANGE", allow_hyphen_values = true)]
    pub length: Option<String>,
    /// Number of segments.
    #[arg(long = "n", value_name = "RANGE", allow_hyphen_values = true)]
    pub segments: Option<String>,
    #[arg(long, value_name = "RANGE", allow_hyphen_values = true)]
    pub p_link: Option<String>,
    #[arg(long, value_name = "RANGE", allow_hyphen_values = true)]
    pub delta_sq: Option<String>,
    /// Coherence time, s (`inf` allowed).
    #[arg(long, value_name = "RANGE", allow_hyphen_values = true)]
    pub t_coh: Option<String>,
    #[arg(long, value_name = "RANGE", allow_hyphen_values = true)]
    pub gamma_sq: Option<String>,
    /// Comma-separated strategies.
    #[arg(long, value_name = "LIST")]
    pub strategy: Option<String>,
    #[arg(long)]
    pub n_atoms: Option<f64>,
    #[arg(long)]
    pub theta_max: Option<f64>,
    #[arg(long, value_enum, default_value_t = ExpectationArg::ClosedForm)]
    pub expectation: ExpectationArg,
    #[arg(long, value_enum, default_value_t = PauliArg::Simplified)]
    pub pauli_model: PauliArg,
    #[arg(long, value_enum, default_value_t = ThresholdArg::Working)]
    pub qber_threshold: ThresholdArg,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, ValueEnum)]
pub enum ExpectationArg {
    #[default]
    ClosedForm,
    Numeric,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, ValueEnum)]
pub enum PauliArg {
    #[default]
    Simplified,
    Striped,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, ValueEnum)]
pub enum ThresholdArg {
    #[default]
    Working,
    ExactRoot,
}

impl ParamArgs {
    fn rate_options(&self) -> RateOptions {
        RateOptions {
            pauli_model: match self.pauli_model {
                PauliArg::Simplified => PauliModel::Simplified,
                PauliArg::Striped => PauliModel::Striped,
            },
            expectation: match self.expectation {
                ExpectationArg::ClosedForm => ExpectationMode::ClosedForm,
                ExpectationArg::Numeric => ExpectationMode::Numeric,
            },
            qber_threshold: match self.qber_threshold {
                ThresholdArg::Working => QberThreshold::Working,
                ThresholdArg::ExactRoot => QberThreshold::ExactRoot,
            },
            constants: PhysicalConstants::FIBER,
        }
    }
}

#[derive(Args, Debug, Clone)]
pub struct Table1Args {
    #[arg(long, default_value = "0.05,0.7,1", allow_hyphen_values = true)]
    pub p_link: String,
    #[arg(long, default_value = "0.001,0.1,10", allow_hyphen_values = true)]
    pub t_coh: String,
}

#[derive(Args, Debug, Clone)]
pub struct Table2Args {
    #[arg(long, default_value = "0.05,0.03,0.02,0.01", allow_hyphen_values = true)]
    pub delta_sq: String,
    #[arg(long = "n", default_value = "2,4,8,16,32,64,128,256", allow_hyphen_values = true)]
    pub segments: String,
    #[arg(long, value_enum, default_value_t = ThresholdArg::Working)]
    pub qber_threshold: ThresholdArg,
}

#[derive(Args, Debug, Clone)]
pub struct SimArgs {
    #[command(flatten)]
    pub params: ParamArgs,
    #[arg(long, default_value_t = montecarlo::DEFAULT_TRIALS)]
    pub trials: u64,
    #[arg(long, default_value_t = montecarlo::DEFAULT_INNER_ITERATIONS)]
    pub inner: u64,
}

#[derive(Args, Debug, Clone)]
pub struct OptimizeArgs {
    #[command(flatten)]
    pub params: ParamArgs,
    #[arg(long, default_value_t = 1)]
    pub n_min: u64,
    #[arg(long, default_value_t = 1000)]
    pub n_max: u64,
}

#[derive(Args, Debug, Clone)]
pub struct BaselineArgs {
    #[command(flatten)]
    pub params: ParamArgs,
    /// Depolarization parameter range.
    #[arg(long, default_value = "1", allow_hyphen_values = true)]
    pub mu: String,
    /// `segments`, `swaps` or a number.
    #[arg(long, default_value = "segments")]
    pub mu_exponent: String,
    /// Drop the one-step dephasing booked per intermediate station.
    #[arg(long)]
    pub no_initial_dephasing: bool,
}

#[derive(Args, Debug, Clone)]
pub struct PlobArgs {
    #[arg(
        long = "L",
        value_name = "RANGE",
        default_value = "log:1:1000:31",
        allow_hyphen_values = true
    )]
    pub length: String,
}

/// Parses the range syntax described in the module docs.
pub fn parse_range(field: &str, text: &str) -> CliResult<Vec<f64>> {
    let text = text.trim();
    let bad = |why: &str| usage(format!("invalid {field}: {why} in {text:?}"));
    let scalar = |s: &str| -> CliResult<f64> {
        let v: f64 = s.trim().parse().map_err(|_| bad("not a number"))?;
        if v.is_nan() {
            return Err(bad("NaN"));
        }
        Ok(v)
    };
    if text.is_empty() {
        return Err(bad("empty range"));
    }
    if text.contains(',') {
        return text.split(',').map(scalar).collect();
    }
    let (log, body) = match text.strip_prefix("log:") {
        Some(rest) => (true, rest),
        None => (false, text),
    };
    if !body.contains(':') {
        if log {
            return Err(bad("log grid needs start:stop:count"));
        }
        return Ok(vec![scalar(body)?]);
    }
    let parts: Vec<&str> = body.split(':').collect();
    if parts.len() != 3 {
        return Err(bad("grid needs start:stop:count"));
    }
    let (start, stop) = (scalar(parts[0])?, scalar(parts[1])?);
    let count: usize = parts[2]
        .trim()
        .parse()
        .map_err(|_| bad("count is not a positive integer"))?;
    if count == 0 {
        return Err(bad("empty grid"));
    }
    if !(start.is_finite() && stop.is_finite()) {
        return Err(bad("grid endpoints must be finite"));
    }
    if log && !(start > 0.0 && stop > 0.0) {
        return Err(bad("log grid needs positive endpoints"));
    }
    if count == 1 {
        return Ok(vec![start]);
    }
    let last = (count - 1) as f64;
    Ok((0..count)
        .map(|i| {
            if i == 0 {
                return start;
            }
            if i == count - 1 {
                return stop;
            }
            let f = i as f64 / last;
            if log {
                (start.ln() + f * (stop.ln() - start.ln())).exp()
            } else {
                start + f * (stop - start)
            }
        })
        .collect())
}

fn parse_counts(field: &str, text: &str) -> CliResult<Vec<u64>> {
    let values = parse_range(field, text)?;
    let grid = text.contains(':');
    let mut out: Vec<u64> = Vec::with_capacity(values.len());
    for v in values {
        let r = v.round();
        if !grid && r != v {
            return Err(usage(format!("invalid {field}: {v} is not an integer")));
        }
        if !(r >= 0.0 && r < u64::MAX as f64) {
            return Err(usage(format!("invalid {field}: {v} is out of range")));
        }
        if out.last() != Some(&(r as u64)) {
            out.push(r as u64);
        }
    }
    Ok(out)
}

/// Partial configuration read from `--config`.
#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct ConfigFile {
    #[serde(rename = "L")]
    length_km: Option<f64>,
    #[serde(rename = "n")]
    segments: Option<u64>,
    p_link: Option<f64>,
    delta_sq: Option<f64>,
    t_coh: Option<f64>,
    gamma_sq: Option<f64>,
    strategy: Option<AmplificationStrategy>,
    n_atoms: Option<f64>,
    theta_max: Option<f64>,
}

/// Parameter ranges after merging defaults, the config file and flags.
#[derive(Debug, Clone)]
struct Grid {
    length: Vec<f64>,
    segments: Vec<u64>,
    p_link: Vec<f64>,
    delta_sq: Vec<f64>,
    t_coh: Vec<f64>,
    gamma_sq: Vec<f64>,
    strategy: Vec<AmplificationStrategy>,
    n_atoms: Option<f64>,
    theta_max: Option<f64>,
}

impl Grid {
    fn from_args(args: &ParamArgs) -> CliResult<Self> {
        let file: ConfigFile = match &args.config {
            Some(path) => {
                let text = fs::read_to_string(path)
                    .map_err(|e| usage(format!("cannot read config {}: {e}", path.display())))?;
                serde_json::from_str(&text).map_err(|e| usage(format!("invalid config {}: {e}", path.display())))?
            }
            None => ConfigFile::default(),
        };
        let floats = |field: &str, flag: &Option<String>, file: Option<f64>, default: f64| -> CliResult<Vec<f64>> {
            match flag {
                Some(text) => parse_range(field, text),
                None => Ok(vec![file.unwrap_or(default)]),
            }
        };
        let strategy = match &args.strategy {
            Some(list) => list
                .split(',')
                .map(|s| s.trim().parse::<AmplificationStrategy>())
                .collect::<Result<Vec<_>, _>>()?,
            None => vec![file.strategy.unwrap_or_default()],
        };
        Ok(Self {
            length: floats("L", &args.length, file.length_km, 100.0)?,
            segments: match &args.segments {
                Some(text) => parse_counts("n", text)?,
                None => vec![file.segments.unwrap_or(4)],
            },
            p_link: floats("p_link", &args.p_link, file.p_link, 0.7)?,
            delta_sq: floats("delta_sq", &args.delta_sq, file.delta_sq, 0.05)?,
            t_coh: floats("t_coh", &args.t_coh, file.t_coh, 10.0)?,
            gamma_sq: floats("gamma_sq", &args.gamma_sq, file.gamma_sq, 0.0)?,
            strategy,
            n_atoms: args.n_atoms.or(file.n_atoms),
            theta_max: args.theta_max.or(file.theta_max),
        })
    }

    /// Every grid point in grid order, validated.
    fn configs(&self) -> CliResult<Vec<RepeaterConfig>> {
        let mut out = Vec::new();
        for &l in &self.length {
            for &n in &self.segments {
                for &p_link in &self.p_link {
                    for &delta_sq in &self.delta_sq {
                        for &t_coh in &self.t_coh {
                            for &gamma_sq in &self.gamma_sq {
                                for &strategy in &self.strategy {
                                    let cfg = RepeaterConfig {
                                        n_atoms: self.n_atoms,
                                        theta_max: self.theta_max,
                                        ..RepeaterConfig::new(l, n, p_link, delta_sq, t_coh)
                                            .with_gamma_sq(gamma_sq)
                                            .with_strategy(strategy)
                                    };
                                    cfg.validate()?;
                                    out.push(cfg);
                                }
                            }
                        }
                    }
                }
            }
        }
        Ok(out)
    }
}

fn hp_floor(cfg: &RepeaterConfig) -> CliResult<Option<f64>> {
    match (cfg.n_atoms, cfg.theta_max) {
        (Some(n), Some(t)) => Ok(Some(gkpcode::hp_min_variance(n, t)?)),
        (None, None) => Ok(None),
        _ => Err(usage("n_atoms and theta_max must be given together")),
    }
}

/// Runs `f` over `items` in the worker pool, keeping input order and
/// reporting the first failure by position.
fn par_map<T, R, F>(items: &[T], f: F) -> CliResult<Vec<R>>
where
    T: Sync,
    R: Send,
    F: Fn(usize, &T) -> CliResult<R> + Sync + Send,
{
    let results: Vec<CliResult<R>> = items.par_iter().enumerate().map(|(i, t)| f(i, t)).collect();
    results.into_iter().collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RateRecord {
    #[serde(rename = "L")]
    pub length_km: f64,
    pub n: u64,
    pub p_link: f64,
    pub delta_sq: f64,
    pub t_coh: f64,
    pub gamma_sq: f64,
    pub strategy: AmplificationStrategy,
    pub resolved_strategy: Option<AmplificationStrategy>,
    pub delta_sq_floor: Option<f64>,
    pub p: f64,
    pub alpha: f64,
    pub sigma_add_sq: f64,
    pub sigma_tot_sq: f64,
    pub p_pauli: f64,
    pub qber: f64,
    pub r: f64,
    #[serde(rename = "R")]
    pub raw_rate: f64,
    #[serde(rename = "S")]
    pub s: f64,
    #[serde(rename = "S_hz")]
    pub s_hz: f64,
}

impl RateRecord {
    fn new(cfg: &RepeaterConfig, res: RateResult) -> CliResult<Self> {
        Ok(Self {
            length_km: cfg.length_km,
            n: cfg.segments,
            p_link: cfg.p_link,
            delta_sq: cfg.delta_sq,
            t_coh: cfg.t_coh,
            gamma_sq: cfg.gamma_sq,
            strategy: cfg.strategy,
            resolved_strategy: res.strategy,
            delta_sq_floor: hp_floor(cfg)?,
            p: res.p,
            alpha: res.alpha,
            sigma_add_sq: res.sigma_add_sq,
            sigma_tot_sq: res.sigma_tot_sq,
            p_pauli: res.p_pauli,
            qber: res.qber,
            r: res.r,
            raw_rate: res.raw_rate,
            s: res.s,
            s_hz: res.s_hz,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Table1Record {
    pub t_coh: f64,
    pub p_link: f64,
    /// Empty when there is no crossing inside the search bracket.
    pub threshold_km: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Table2Record {
    pub delta_sq: f64,
    pub n: u64,
    pub gamma_sq_threshold: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompareRecord {
    #[serde(rename = "L")]
    pub length_km: f64,
    pub n: u64,
    pub p_link: f64,
    pub delta_sq: f64,
    pub t_coh: f64,
    pub gamma_sq: f64,
    pub strategy: AmplificationStrategy,
    pub seed: u64,
    pub trials: u64,
    pub inner: u64,
    pub qber_analytic: f64,
    pub qber_numeric: f64,
    pub qber_simulated: f64,
    pub qber_stderr: f64,
    pub s_analytic: f64,
    pub s_numeric: f64,
    pub s_simulated: f64,
    pub s_simulated_stderr: f64,
    pub tail_warning: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimulateRecord {
    #[serde(rename = "L")]
    pub length_km: f64,
    pub n: u64,
    pub p_link: f64,
    pub delta_sq: f64,
    pub t_coh: f64,
    pub gamma_sq: f64,
    pub strategy: AmplificationStrategy,
    pub seed: u64,
    pub trials: u64,
    pub inner: u64,
    pub qber_mean: f64,
    pub qber_stderr: f64,
    pub mean_completion_steps: f64,
    pub completion_stderr: f64,
    pub sigma_add_mean: f64,
    pub sigma_add_variance: f64,
    #[serde(rename = "S")]
    pub s: f64,
    pub s_stderr: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OptimizeRecord {
    #[serde(rename = "L")]
    pub length_km: f64,
    pub p_link: f64,
    pub delta_sq: f64,
    pub t_coh: f64,
    pub gamma_sq: f64,
    pub strategy: AmplificationStrategy,
    pub n_min: u64,
    pub n_max: u64,
    pub n_opt: u64,
    pub qber: f64,
    pub r: f64,
    #[serde(rename = "S")]
    pub s: f64,
    #[serde(rename = "S_hz")]
    pub s_hz: f64,
    pub all_zero: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BaselineRecord {
    #[serde(rename = "L")]
    pub length_km: f64,
    pub n: u64,
    pub p_link: f64,
    pub delta_sq: f64,
    pub t_coh: f64,
    pub gamma_sq: f64,
    pub strategy: AmplificationStrategy,
    pub mu: f64,
    pub qber_correctionless: f64,
    pub s_correctionless: f64,
    pub s_hz_correctionless: f64,
    pub qber_gkp: f64,
    pub s_gkp: f64,
    pub s_hz_gkp: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlobRecord {
    #[serde(rename = "L")]
    pub length_km: f64,
    pub plob_bits: f64,
}

/// Serializes records as CSV with a header row.
pub fn to_csv<T: Serialize>(records: &[T]) -> CliResult<String> {
    let mut w = csv::WriterBuilder::new().from_writer(Vec::new());
    for r in records {
        w.serialize(r)?;
    }
    let bytes = w.into_inner().map_err(|e| CliError::Io(e.to_string()))?;
    String::from_utf8(bytes).map_err(|e| CliError::Io(e.to_string()))
}

/// Aligns CSV text into whitespace-separated columns.
fn csv_to_text(csv_text: &str) -> CliResult<String> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(false)
        .from_reader(csv_text.as_bytes());
    let rows: Vec<Vec<String>> = rdr
        .records()
        .map(|r| r.map(|r| r.iter().map(str::to_owned).collect()))
        .collect::<Result<_, _>>()?;
    let cols = rows.first().map_or(0, Vec::len);
    let widths: Vec<usize> = (0..cols)
        .map(|c| rows.iter().map(|r| r[c].chars().count()).max().unwrap_or(0))
        .collect();
    let mut out = String::new();
    for row in &rows {
        let line: Vec<String> = row.iter().zip(&widths).map(|(v, &w)| format!("{v:>w$}")).collect();
        out.push_str(line.join("  ").trim_end());
        out.push('\n');
    }
    Ok(out)
}

fn render_all<T: Serialize>(records: &[T], format: Format) -> CliResult<String> {
    match format {
        Format::Json => Ok(serde_json::to_string_pretty(records)? + "\n"),
        Format::Csv => to_csv(records),
        Format::Text => csv_to_text(&to_csv(records)?),
    }
}

fn table1_text(records: &[Table1Record], p_links: &[f64], t_cohs: &[f64]) -> String {
    let mut out = String::from("t_coh \\ p_link");
    for p in p_links {
        let _ = write!(out, "\t{p}");
    }
    out.push('\n');
    for (i, t) in t_cohs.iter().enumerate() {
        let _ = write!(out, "{t}s");
        for j in 0..p_links.len() {
            match records[i * p_links.len() + j].threshold_km {
                Some(km) => {
                    let _ = write!(out, "\t{km:.1}km");
                }
                None => out.push_str("\tnone"),
            }
        }
        out.push('\n');
    }
    out
}

fn table2_text(records: &[Table2Record], deltas: &[f64], ns: &[u64]) -> String {
    let mut out = String::from("delta_sq \\ n");
    for n in ns {
        let _ = write!(out, "\t{n}");
    }
    out.push('\n');
    for (i, d) in deltas.iter().enumerate() {
        let _ = write!(out, "{d}");
        for j in 0..ns.len() {
            let g = records[i * ns.len() + j].gamma_sq_threshold;
            if g < 1e-3 {
                out.push_str("\t≤0.0010");
            } else {
                let _ = write!(out, "\t{g:.4}");
            }
        }
        out.push('\n');
    }
    out
}

fn run_command(cli: &Cli) -> CliResult<String> {
    match &cli.command {
        Command::Rate(args) => {
            let configs = Grid::from_args(args)?.configs()?;
            let options = args.rate_options();
            let records = par_map(&configs, |_, cfg| {
                RateRecord::new(cfg, rates::analytic_rate_with(cfg, &options)?)
            })?;
            render_all(&records, cli.format)
        }
        Command::Table1(args) => {
            let p_links = parse_range("p_link", &args.p_link)?;
            let t_cohs = parse_range("t_coh", &args.t_coh)?;
            let cells: Vec<(f64, f64)> = t_cohs
                .iter()
                .flat_map(|&t| p_links.iter().map(move |&p| (t, p)))
                .collect();
            let constants = PhysicalConstants::FIBER;
            let records = par_map(&cells, |_, &(t_coh, p_link)| {
                let threshold_km = match cc_threshold_l0(p_link, t_coh, &constants)? {
                    CcThreshold::At(km) => Some(km),
                    CcThreshold::NoCrossing => None,
                };
                Ok(Table1Record {
                    t_coh,
                    p_link,
                    threshold_km,
                })
            })?;
            match cli.format {
                Format::Text => Ok(table1_text(&records, &p_links, &t_cohs)),
                f => render_all(&records, f),
            }
        }
        Command::Table2(args) => {
            let deltas = parse_range("delta_sq", &args.delta_sq)?;
            let ns = parse_counts("n", &args.segments)?;
            let threshold = match args.qber_threshold {
                ThresholdArg::Working => QberThreshold::Working,
                ThresholdArg::ExactRoot => QberThreshold::ExactRoot,
            };
            let cells: Vec<(f64, u64)> = deltas.iter().flat_map(|&d| ns.iter().map(move |&n| (d, n))).collect();
            let records = par_map(&cells, |_, &(delta_sq, n)| {
                Ok(Table2Record {
                    delta_sq,
                    n,
                    gamma_sq_threshold: gkpcode::gamma_threshold_with(n, delta_sq, threshold)?,
                })
            })?;
            match cli.format {
                Format::Text => Ok(table2_text(&records, &deltas, &ns)),
                f => render_all(&records, f),
            }
        }
        Command::Compare(args) => {
            let configs = Grid::from_args(&args.params)?.configs()?;
            let options = args.params.rate_options();
            let records = par_map(&configs, |i, cfg| {
                let seed = derive_seed(cli.seed, i as u64);
                let sim = SimulationOptions {
                    trials: args.trials,
                    inner_iterations: args.inner,
                    seed,
                    workers: None,
                };
                let row = montecarlo::compare_methods(cfg, &[cfg.length_km], &sim, &options)?.remove(0);
                if row.tail_warning {
                    eprintln!(
                        "warning: truncated waiting-time tail exceeds {} at L = {}",
                        montecarlo::TAIL_WARNING,
                        cfg.length_km
                    );
                }
                Ok(CompareRecord {
                    length_km: cfg.length_km,
                    n: cfg.segments,
                    p_link: cfg.p_link,
                    delta_sq: cfg.delta_sq,
                    t_coh: cfg.t_coh,
                    gamma_sq: cfg.gamma_sq,
                    strategy: cfg.strategy,
                    seed,
                    trials: args.trials,
                    inner: args.inner,
                    qber_analytic: row.qber_analytic,
                    qber_numeric: row.qber_numeric,
                    qber_simulated: row.qber_simulated,
                    qber_stderr: row.qber_stderr,
                    s_analytic: row.s_analytic,
                    s_numeric: row.s_numeric,
                    s_simulated: row.s_simulated,
                    s_simulated_stderr: row.s_simulated_stderr,
                    tail_warning: row.tail_warning,
                })
            })?;
            render_all(&records, cli.format)
        }
        Command::Simulate(args) => {
            let configs = Grid::from_args(&args.params)?.configs()?;
            let options = args.params.rate_options();
            let records = par_map(&configs, |i, cfg| {
                let seed = derive_seed(cli.seed, i as u64);
                let sim = SimulationOptions {
                    trials: args.trials,
                    inner_iterations: args.inner,
                    seed,
                    workers: None,
                };
                let stats = montecarlo::simulate_chain_with(cfg, &sim, &options.constants, options.pauli_model)?;
                let (s, s_stderr) = stats.secret_rate(options.qber_threshold.value())?;
                Ok(SimulateRecord {
                    length_km: cfg.length_km,
                    n: cfg.segments,
                    p_link: cfg.p_link,
                    delta_sq: cfg.delta_sq,
                    t_coh: cfg.t_coh,
                    gamma_sq: cfg.gamma_sq,
                    strategy: cfg.strategy,
                    seed,
                    trials: args.trials,
                    inner: args.inner,
                    qber_mean: stats.qber_mean,
                    qber_stderr: stats.qber_stderr,
                    mean_completion_steps: stats.mean_completion_steps,
                    completion_stderr: stats.completion_stderr,
                    sigma_add_mean: stats.per_swap_variance.mean,
                    sigma_add_variance: stats.per_swap_variance.variance,
                    s,
                    s_stderr,
                })
            })?;
            render_all(&records, cli.format)
        }
        Command::Optimize(args) => {
            if args.n_min == 0 || args.n_min > args.n_max {
                return Err(usage(format!("invalid n: empty range {}..={}", args.n_min, args.n_max)));
            }
            let mut grid = Grid::from_args(&args.params)?;
            grid.segments = vec![args.n_min];
            let configs = grid.configs()?;
            let options = args.params.rate_options();
            // the optimizer parallelizes internally
            let records = configs
                .iter()
                .map(|cfg| {
                    let opt = rates::optimize_n(cfg, args.n_min..=args.n_max, &options)?;
                    Ok(OptimizeRecord {
                        length_km: cfg.length_km,
                        p_link: cfg.p_link,
                        delta_sq: cfg.delta_sq,
                        t_coh: cfg.t_coh,
                        gamma_sq: cfg.gamma_sq,
                        strategy: cfg.strategy,
                        n_min: args.n_min,
                        n_max: args.n_max,
                        n_opt: opt.n,
                        qber: opt.result.qber,
                        r: opt.result.r,
                        s: opt.result.s,
                        s_hz: opt.result.s_hz,
                        all_zero: opt.all_zero,
                    })
                })
                .collect::<CliResult<Vec<_>>>()?;
            render_all(&records, cli.format)
        }
        Command::Baseline(args) => {
            let configs = Grid::from_args(&args.params)?.configs()?;
            let mus = parse_range("mu", &args.mu)?;
            let mu_exponent = match args.mu_exponent.as_str() {
                "segments" => MuExponent::Segments,
                "swaps" => MuExponent::Swaps,
                other => MuExponent::Fixed(
                    other
                        .parse()
                        .map_err(|_| usage(format!("invalid mu_exponent: {other:?}")))?,
                ),
            };
            let mapping = NoiseMapping {
                mu_exponent,
                initial_dephasing: !args.no_initial_dephasing,
            };
            let options = args.params.rate_options();
            let points: Vec<(&RepeaterConfig, f64)> =
                configs.iter().flat_map(|c| mus.iter().map(move |&m| (c, m))).collect();
            let records = par_map(&points, |_, &(cfg, mu)| {
                let base = rates::correctionless_rate(cfg, mu, &mapping, &options)?;
                let gkp = rates::analytic_rate_with(cfg, &options)?;
                Ok(BaselineRecord {
                    length_km: cfg.length_km,
                    n: cfg.segments,
                    p_link: cfg.p_link,
                    delta_sq: cfg.delta_sq,
                    t_coh: cfg.t_coh,
                    gamma_sq: cfg.gamma_sq,
                    strategy: cfg.strategy,
                    mu,
                    qber_correctionless: base.qber,
                    s_correctionless: base.s,
                    s_hz_correctionless: base.s_hz,
                    qber_gkp: gkp.qber,
                    s_gkp: gkp.s,
                    s_hz_gkp: gkp.s_hz,
                })
            })?;
            render_all(&records, cli.format)
        }
        Command::Plob(args) => {
            let lengths = parse_range("L", &args.length)?;
            let records = lengths
                .iter()
                .map(|&l| {
                    Ok(PlobRecord {
                        length_km: l,
                        plob_bits: rates::plob_bound(l)?,
                    })
                })
                .collect::<CliResult<Vec<_>>>()?;
            render_all(&records, cli.format)
        }
    }
}

/// Executes a parsed command and writes its output.
pub fn execute(cli: &Cli) -> CliResult<()> {
    if cli.workers == Some(0) {
        return Err(usage("invalid workers: must be at least 1"));
    }
    let mut builder = rayon::ThreadPoolBuilder::new();
    if let Some(w) = cli.workers {
        builder = builder.num_threads(w);
    }
    let pool = builder.build().map_err(|e| CliError::Io(e.to_string()))?;
    let text = pool.install(|| run_command(cli))?;
    match &cli.out {
        Some(path) => fs::write(path, text)?,
        None => io::stdout().lock().write_all(text.as_bytes())?,
    }
    Ok(())
}

/// Parses `args`, runs the command and returns the process exit code.
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
    match execute(&cli) {
        Ok(()) => EXIT_OK,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}
