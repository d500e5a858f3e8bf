//! Command-line front end.
//!
//! Exit codes: 0 success, 2 invalid input, 3 internal invariant breach
//! (quantizer saturation, non-converging eigen-solve).

use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;

use crate::channel::ChannelConfig;
use crate::codec::{ControlLaw, QuantizerSpec};
use crate::error::Error;
use crate::limits::BoundsReport;
use crate::mjls::{build_f, min_sufficient_n, min_sufficient_rate, sufficient_mss};
use crate::montecarlo::{run_experiment, run_trial, Experiment, Target, DEFAULT_TOL_SLOPE};
use crate::plant::{StrategyKind, UncertainPlant};
use crate::sweep::{sweep, timeshare_record, GridRange, SweepSpec, SweepTable, SweepVar};
use crate::timeshare::{timeshare_row, TimeShareConfig, TimeShareRow};

pub const EXIT_OK: i32 = 0;
pub const EXIT_INVALID: i32 = 2;
pub const EXIT_INVARIANT: i32 = 3;

#[derive(Debug)]
pub struct CliError {
    pub code: i32,
    pub message: String,
}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        let code = match e {
            Error::Saturation { .. } | Error::IterationCap { .. } => EXIT_INVARIANT,
            _ => EXIT_INVALID,
        };
        CliError {
            code,
            message: e.to_string(),
        }
    }
}

impl From<io::Error> for CliError {
    fn from(e: io::Error) -> Self {
        CliError {
            code: EXIT_INVALID,
            message: e.to_string(),
        }
    }
}

fn invalid(flag: &str, msg: impl std::fmt::Display) -> CliError {
    CliError {
        code: EXIT_INVALID,
        message: format!("--{flag}: {msg}"),
    }
}

#[derive(Parser, Debug)]
#[command(
    name = "ratelim",
    version,
    about = "Rate and loss limits for uncertain plants over lossy quantized channels"
)]
pub struct Cli {
    /// Flat key=value file; keys are long flag names, command-line flags win.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Necessary rate and loss bounds (JSON).
    Bounds(BoundsArgs),
    /// Spectral-radius sufficiency test (JSON).
    Sufficient(SufficientArgs),
    /// Monte Carlo closed-loop runs (decay CSV, verdict on stderr).
    Simulate(SimulateArgs),
    /// Grid sweeps over lambda, p, N or m (CSV).
    Sweep(SweepArgs),
    /// Time-sharing analysis for scalar plants (JSON or CSV).
    Timeshare(TimeshareArgs),
}

#[derive(Args, Debug, Clone)]
pub struct PlantArgs {
    /// Plant order; must match the coefficient lists when given.
    #[arg(long = "n")]
    pub n: Option<usize>,
    /// Nominal coefficients a_1*,...,a_n*.
    #[arg(
        long = "a-star",
        value_delimiter = ',',
        allow_hyphen_values = true,
        required = true
    )]
    pub a_star: Vec<f64>,
    /// Uncertainty radii eps_1,...,eps_n.
    #[arg(long, value_delimiter = ',', required = true)]
    pub eps: Vec<f64>,
    /// Bound Y0 on |y0|.
    #[arg(long = "y0-bound", default_value_t = 1.0)]
    pub y0_bound: f64,
    /// Packet loss probability.
    #[arg(long, default_value_t = 0.0)]
    pub p: f64,
}

impl PlantArgs {
    fn plant(&self) -> Result<UncertainPlant, CliError> {
        if let Some(n) = self.n {
            if n != self.a_star.len() || n != self.eps.len() {
                return Err(invalid(
                    "n",
                    format!(
                        "order {n} does not match {} coefficients and {} radii",
                        self.a_star.len(),
                        self.eps.len()
                    ),
                ));
            }
        }
        UncertainPlant::new(self.a_star.clone(), self.eps.clone(), self.y0_bound)
            .map_err(|e| invalid("a-star", e))
    }

    fn channel(&self, seed: u64) -> Result<ChannelConfig, CliError> {
        ChannelConfig::new(self.p, seed).map_err(|e| invalid("p", e))
    }
}

#[derive(Args, Debug)]
pub struct BoundsArgs {
    #[command(flatten)]
    pub plant: PlantArgs,
}

#[derive(Args, Debug)]
pub struct SufficientArgs {
    #[command(flatten)]
    pub plant: PlantArgs,
    /// Quantizer level to test.
    #[arg(long = "N", conflicts_with = "min_n")]
    pub levels: Option<u64>,
    /// Search the smallest sufficient level instead.
    #[arg(long = "min-n")]
    pub min_n: bool,
    /// Search cap for --min-n.
    #[arg(long = "n-max", default_value_t = 4096)]
    pub n_max: u64,
    /// Also report the smallest sufficient rate over real levels.
    #[arg(long)]
    pub rate: bool,
    /// Write F as CSV to this path.
    #[arg(long = "dump-f")]
    pub dump_f: Option<PathBuf>,
    #[arg(long, short)]
    pub output: Option<PathBuf>,
}

#[derive(ValueEnum, Clone, Copy, Debug, PartialEq, Eq)]
pub enum Format {
    Json,
    Csv,
}

#[derive(Args, Debug, Clone)]
pub struct ExperimentArgs {
    #[arg(long, default_value_t = 100)]
    pub trials: usize,
    #[arg(long, default_value_t = 400)]
    pub steps: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// nominal, vertex:+-.., iid or greedy.
    #[arg(long, default_value = "nominal")]
    pub strategy: String,
    /// nominal or centering.
    #[arg(long = "control-law", default_value = "nominal")]
    pub control_law: String,
    /// Fixed initial output; uniform on [-Y0, Y0] per trial otherwise.
    #[arg(long, allow_hyphen_values = true)]
    pub y0: Option<f64>,
    #[arg(long = "tol-slope", default_value_t = DEFAULT_TOL_SLOPE)]
    pub tol_slope: f64,
}

impl ExperimentArgs {
    fn experiment(&self) -> Result<Experiment, CliError> {
        if self.trials == 0 {
            return Err(invalid("trials", "must be positive"));
        }
        if self.steps < 2 {
            return Err(invalid("steps", "must be at least 2"));
        }
        let strategy: StrategyKind = self.strategy.parse().map_err(|e| invalid("strategy", e))?;
        let law: ControlLaw = self
            .control_law
            .parse()
            .map_err(|e| invalid("control-law", e))?;
        let mut exp = Experiment::new(self.trials, self.steps, self.seed, strategy);
        exp.law = law;
        exp.y0 = self.y0;
        exp.tol_slope = self.tol_slope;
        Ok(exp)
    }
}

#[derive(Args, Debug)]
pub struct SimulateArgs {
    #[command(flatten)]
    pub plant: PlantArgs,
    #[command(flatten)]
    pub exp: ExperimentArgs,
    /// Quantizer level (per slot when --m is given).
    #[arg(long = "N")]
    pub levels: Option<u64>,
    /// Simulate the time-sharing protocol with this cycle length.
    #[arg(long)]
    pub m: Option<u32>,
    /// Total level per cycle for --m (instead of N^m).
    #[arg(long = "total-level")]
    pub total_level: Option<u64>,
    #[arg(long, value_enum, default_value_t = Format::Csv)]
    pub format: Format,
    /// Write the per-step trace of trial 0 as CSV to this path.
    #[arg(long)]
    pub trace: Option<PathBuf>,
    #[arg(long, short)]
    pub output: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct SweepArgs {
    #[command(flatten)]
    pub plant: PlantArgs,
    /// Swept variable (lambda, p, N, m); repeat for a second axis.
    #[arg(long = "var", required = true)]
    pub vars: Vec<String>,
    /// lo:hi:step for each --var, in order.
    #[arg(long = "range", required = true)]
    pub ranges: Vec<String>,
    #[arg(long = "N")]
    pub levels: Option<u64>,
    #[arg(long)]
    pub m: Option<u32>,
    #[arg(long = "n-max", default_value_t = 4096)]
    pub n_max: u64,
    /// Add the Monte Carlo verdict per grid point.
    #[arg(long)]
    pub empirical: bool,
    #[command(flatten)]
    pub exp: ExperimentArgs,
    #[arg(long, short)]
    pub output: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct TimeshareArgs {
    #[command(flatten)]
    pub plant: PlantArgs,
    /// Cycle length.
    #[arg(long, conflicts_with = "sweep_m")]
    pub m: Option<u32>,
    /// Range of cycle lengths, lo:hi.
    #[arg(long = "sweep-m")]
    pub sweep_m: Option<String>,
    /// Average level at which to evaluate kappa_bar.
    #[arg(long = "N")]
    pub levels: Option<f64>,
    /// Search cap on the total level.
    #[arg(long, default_value_t = 1_000_000)]
    pub cap: u64,
    #[arg(long, value_enum, default_value_t = Format::Json)]
    pub format: Format,
    #[arg(long, short)]
    pub output: Option<PathBuf>,
}

/// Reads `key=value` lines; `#` starts a comment.
pub fn read_config(path: &Path) -> Result<Vec<(String, String)>, CliError> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| invalid("config", format!("{}: {e}", path.display())))?;
    let mut out = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let Some((k, v)) = line.split_once('=') else {
            return Err(invalid(
                "config",
                format!("line {}: expected key=value", i + 1),
            ));
        };
        out.push((
            k.trim().trim_start_matches("--").to_string(),
            v.trim().to_string(),
        ));
    }
    Ok(out)
}

fn has_flag(args: &[String], key: &str) -> bool {
    let long = format!("--{key}");
    let eq = format!("--{key}=");
    args.iter().any(|a| *a == long || a.starts_with(&eq))
}

/// Appends config entries whose flag is absent from `args`. Values `true`
/// and `false` stand for a bare switch and its absence.
pub fn merge_config(mut args: Vec<String>, entries: &[(String, String)]) -> Vec<String> {
    let given: Vec<String> = args.clone();
    for (k, v) in entries {
        if k == "config" || has_flag(&given, k) {
            continue;
        }
        match v.as_str() {
            "true" => args.push(format!("--{k}")),
            "false" => {}
            _ => args.push(format!("--{k}={v}")),
        }
    }
    args
}

fn config_path(args: &[String]) -> Option<PathBuf> {
    args.iter().enumerate().find_map(|(i, a)| {
        if let Some(p) = a.strip_prefix("--config=") {
            Some(PathBuf::from(p))
        } else if a == "--config" {
            args.get(i + 1).map(PathBuf::from)
        } else {
            None
        }
    })
}

fn sink<'a>(
    path: &Option<PathBuf>,
    stdout: &'a mut dyn Write,
) -> Result<Box<dyn Write + 'a>, CliError> {
    Ok(match path {
        Some(p) => {
            Box::new(BufWriter::new(File::create(p).map_err(|e| {
                invalid("output", format!("{}: {e}", p.display()))
            })?))
        }
        None => Box::new(stdout),
    })
}

fn write_json<T: Serialize>(value: &T, out: &mut dyn Write) -> Result<(), CliError> {
    serde_json::to_writer_pretty(&mut *out, value).map_err(|e| invalid("output", e))?;
    writeln!(out)?;
    Ok(())
}

/// Parses `args` (including the program name) and runs the command.
pub fn run(
    args: Vec<String>,
    stdout: &mut dyn Write,
    stderr: &mut dyn Write,
) -> Result<(), CliError> {
    let args = match config_path(&args) {
        Some(p) => merge_config(args, &read_config(&p)?),
        None => args,
    };
    let cli = match Cli::try_parse_from(&args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() {
                EXIT_INVALID
            } else {
                EXIT_OK
            };
            let text = e.render().to_string();
            if code == EXIT_OK {
                write!(stdout, "{text}")?;
                return Ok(());
            }
            return Err(CliError {
                code,
                message: text.trim_end().to_string(),
            });
        }
    };
    match cli.command {
        Command::Bounds(a) => cmd_bounds(a, stdout),
        Command::Sufficient(a) => cmd_sufficient(a, stdout),
        Command::Simulate(a) => cmd_simulate(a, stdout, stderr),
        Command::Sweep(a) => cmd_sweep(a, stdout),
        Command::Timeshare(a) => cmd_timeshare(a, stdout),
    }
}

fn cmd_bounds(a: BoundsArgs, stdout: &mut dyn Write) -> Result<(), CliError> {
    let plant = a.plant.plant()?;
    let report = BoundsReport::for_plant(&plant, a.plant.p).map_err(|e| invalid("p", e))?;
    write_json(&report, stdout)
}

#[derive(Serialize)]
struct MinLevelReport {
    n: usize,
    p: f64,
    #[serde(rename = "N")]
    levels: Option<u64>,
    rho: f64,
    n_max: u64,
    #[serde(skip_serializing_if = "Option::is_none")]
    r_suf: Option<Option<f64>>,
}

#[derive(Serialize)]
struct SufficientReport {
    #[serde(flatten)]
    s: crate::mjls::Sufficiency,
    #[serde(skip_serializing_if = "Option::is_none")]
    r_suf: Option<Option<f64>>,
}

fn cmd_sufficient(a: SufficientArgs, stdout: &mut dyn Write) -> Result<(), CliError> {
    let plant = a.plant.plant()?;
    let p = a.plant.p;
    a.plant.channel(0)?;
    let r_suf = if a.rate {
        Some(min_sufficient_rate(&plant, p)?)
    } else {
        None
    };
    let mut out = sink(&a.output, stdout)?;
    if a.min_n {
        let found = min_sufficient_n(&plant, p, a.n_max).map_err(|e| invalid("n-max", e))?;
        if let (Some(path), Some(n)) = (&a.dump_f, found.levels) {
            std::fs::write(path, build_f(&plant, n as f64, p)?.f_csv())?;
        }
        write_json(
            &MinLevelReport {
                n: plant.order(),
                p,
                levels: found.levels,
                rho: found.rho,
                n_max: a.n_max,
                r_suf,
            },
            &mut out,
        )
    } else {
        let Some(n) = a.levels else {
            return Err(invalid("N", "give --N <level> or --min-n"));
        };
        if n < 2 {
            return Err(invalid(
                "N",
                format!("sufficiency test needs N >= 2, got {n}"),
            ));
        }
        let s = sufficient_mss(&plant, n, p)?;
        if let Some(path) = &a.dump_f {
            std::fs::write(path, build_f(&plant, n as f64, p)?.f_csv())?;
        }
        write_json(&SufficientReport { s, r_suf }, &mut out)
    }
}

#[derive(Serialize)]
struct SimulateSummary<'a> {
    verdict: crate::montecarlo::Verdict,
    slope: f64,
    trials: usize,
    steps: usize,
    converged_trials: usize,
    diverged_trials: usize,
    mean_sq_y: &'a [f64],
    mean_sq_sigma: &'a [f64],
}

fn cmd_simulate(
    a: SimulateArgs,
    stdout: &mut dyn Write,
    stderr: &mut dyn Write,
) -> Result<(), CliError> {
    let plant = a.plant.plant()?;
    let exp = a.exp.experiment()?;
    let channel = a.plant.channel(exp.base_seed)?;
    let target = match a.m {
        None => {
            let n = a
                .levels
                .ok_or_else(|| invalid("N", "quantizer level is required"))?;
            Target::Plant {
                plant: plant.clone(),
                quantizer: QuantizerSpec::new(n).map_err(|e| invalid("N", e))?,
            }
        }
        Some(m) => {
            if plant.order() != 1 {
                return Err(invalid("m", "time-sharing needs a scalar plant"));
            }
            let total = match (a.total_level, a.levels) {
                (Some(t), _) => t,
                (None, Some(n)) => n
                    .checked_pow(m)
                    .ok_or_else(|| invalid("N", "N^m overflows"))?,
                (None, None) => return Err(invalid("total-level", "give --total-level or --N")),
            };
            let cfg = TimeShareConfig::with_total_level(
                plant.a_star()[0],
                plant.eps()[0],
                m,
                total,
                a.plant.p,
            )
            .map_err(|e| invalid("total-level", e))?;
            Target::TimeShare {
                cfg,
                y0_bound: plant.y0_bound(),
            }
        }
    };
    if let Some(y0) = exp.y0 {
        if y0.abs() > plant.y0_bound() {
            return Err(invalid(
                "y0",
                format!("|y0| exceeds --y0-bound {}", plant.y0_bound()),
            ));
        }
    }
    if let Some(path) = &a.trace {
        let trace = run_trial(&target, &channel, &exp, 0)?;
        let f =
            File::create(path).map_err(|e| invalid("trace", format!("{}: {e}", path.display())))?;
        trace.write_csv(BufWriter::new(f))?;
    }
    let report = run_experiment(&target, &channel, &exp)?;
    let mut out = sink(&a.output, stdout)?;
    match a.format {
        Format::Csv => report.write_csv(&mut out)?,
        Format::Json => write_json(
            &SimulateSummary {
                verdict: report.verdict,
                slope: report.slope,
                trials: report.trials,
                steps: report.steps,
                converged_trials: report.converged_trials,
                diverged_trials: report.diverged_trials,
                mean_sq_y: &report.mean_sq_y,
                mean_sq_sigma: &report.mean_sq_sigma,
            },
            &mut out,
        )?,
    }
    out.flush()?;
    writeln!(
        stderr,
        "verdict: {:?} (slope {:.6} per step, {} converged, {} diverged)",
        report.verdict, report.slope, report.converged_trials, report.diverged_trials
    )?;
    Ok(())
}

fn cmd_sweep(a: SweepArgs, stdout: &mut dyn Write) -> Result<(), CliError> {
    let plant = a.plant.plant()?;
    a.plant.channel(0)?;
    if a.vars.len() != a.ranges.len() {
        return Err(invalid("range", "give one --range per --var"));
    }
    let mut vars = Vec::new();
    for (v, r) in a.vars.iter().zip(&a.ranges) {
        let var: SweepVar = v.parse().map_err(|e| invalid("var", e))?;
        let range: GridRange = r.parse().map_err(|e| invalid("range", e))?;
        vars.push((var, range));
    }
    let spec = SweepSpec {
        plant,
        p: a.plant.p,
        levels: a.levels,
        m: a.m,
        vars,
        n_max: a.n_max,
        empirical: if a.empirical {
            Some(a.exp.experiment()?)
        } else {
            None
        },
    };
    let table: SweepTable = sweep(&spec).map_err(|e| match e {
        Error::Saturation { .. } | Error::IterationCap { .. } => CliError::from(e),
        other => invalid("range", other),
    })?;
    let mut out = sink(&a.output, stdout)?;
    table.write_csv(&mut out)?;
    out.flush()?;
    Ok(())
}

fn parse_m_range(s: &str) -> Result<Vec<u32>, CliError> {
    let bad = || invalid("sweep-m", format!("`{s}` is not lo:hi"));
    let (lo, hi) = s.split_once(':').ok_or_else(bad)?;
    let lo: u32 = lo.trim().parse().map_err(|_| bad())?;
    let hi: u32 = hi.trim().parse().map_err(|_| bad())?;
    if lo == 0 || hi < lo || hi - lo > 1000 {
        return Err(bad());
    }
    Ok((lo..=hi).collect())
}

fn cmd_timeshare(a: TimeshareArgs, stdout: &mut dyn Write) -> Result<(), CliError> {
    if a.plant.a_star.len() != 1 || a.plant.eps.len() != 1 || a.plant.n.is_some_and(|n| n != 1) {
        return Err(invalid("n", "time-sharing analysis needs a scalar plant"));
    }
    let plant = a.plant.plant()?;
    a.plant.channel(0)?;
    let ms = match (&a.sweep_m, a.m) {
        (Some(r), _) => parse_m_range(r)?,
        (None, Some(m)) => vec![m],
        (None, None) => return Err(invalid("m", "give --m or --sweep-m")),
    };
    let (a_star, eps) = (plant.a_star()[0], plant.eps()[0]);
    let rows: Vec<TimeShareRow> = ms
        .iter()
        .map(|&m| timeshare_row(a_star, eps, a.plant.p, m, a.levels, a.cap))
        .collect::<Result<_, _>>()
        .map_err(|e| invalid("m", e))?;
    let mut out = sink(&a.output, stdout)?;
    match a.format {
        Format::Json if rows.len() == 1 => write_json(&rows[0], &mut out)?,
        Format::Json => write_json(&rows, &mut out)?,
        Format::Csv => {
            let mut w = csv::Writer::from_writer(&mut out);
            w.write_record([
                "m",
                "delta_plus",
                "delta_minus",
                "kappa_bar",
                "r_bar",
                "feasible",
                "min_total_level",
                "avg_level",
            ])
            .map_err(|e| invalid("output", e))?;
            for r in &rows {
                w.write_record(timeshare_record(r))
                    .map_err(|e| invalid("output", e))?;
            }
            w.flush()?;
        }
    }
    out.flush()?;
    Ok(())
}

/// Entry point for the binary; returns the process exit code.
pub fn main() -> i32 {
    let args: Vec<String> = std::env::args().collect();
    let stdout = io::stdout();
    let stderr = io::stderr();
    let mut out = stdout.lock();
    let mut err = stderr.lock();
    match run(args, &mut out, &mut err) {
        Ok(()) => EXIT_OK,
        Err(e) => {
            let _ = writeln!(err, "error: {}", e.message);
            e.code
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn argv(s: &str) -> Vec<String> {
        std::iter::once("ratelim".to_string())
            .chain(s.split_whitespace().map(String::from))
            .collect()
    }

    #[test]
    fn config_merge_respects_command_line() {
        let entries = vec![
            ("p".to_string(), "0.1".to_string()),
            ("eps".to_string(), "0.2".to_string()),
            ("min-n".to_string(), "true".to_string()),
            ("rate".to_string(), "false".to_string()),
        ];
        let merged = merge_config(argv("sufficient --p 0.3 --a-star 2"), &entries);
        assert_eq!(
            merged,
            argv("sufficient --p 0.3 --a-star 2 --eps=0.2 --min-n")
        );
    }

    #[test]
    fn scalar_bounds_json() {
        let mut out = Vec::new();
        run(
            argv("bounds --n 1 --a-star 2 --eps 0 --p 0"),
            &mut out,
            &mut io::sink(),
        )
        .unwrap();
        let v: serde_json::Value = serde_json::from_slice(&out).unwrap();
        assert_eq!(v["r_nec"], 1.0);
        assert_eq!(v["p_nec"], 0.25);
    }

    #[test]
    fn invalid_plant_exits_two() {
        let e = run(
            argv("bounds --n 1 --a-star 1.5 --eps 0.6 --p 0"),
            &mut io::sink(),
            &mut io::sink(),
        )
        .unwrap_err();
        assert_eq!(e.code, EXIT_INVALID);
        assert!(e.message.contains("--a-star"));
    }
}
