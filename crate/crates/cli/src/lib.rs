//! Command-line front end: load or build a scenario, apply overrides, run,
//! and write the report directory.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use rocesim_core::config::{build_parking_lot, build_single_flow, parse_scenario, render_scenario};
use rocesim_core::{
    run_scenario, ReportFormat, RunOutput, Scenario, SimError, SimOptions, SimTime,
};

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{0}")]
    Config(String),
    #[error("{0}")]
    Runtime(String),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 2,
            CliError::Runtime(_) => 3,
            CliError::Io { .. } => 1,
        }
    }
}

impl From<SimError> for CliError {
    fn from(e: SimError) -> Self {
        match e {
            SimError::Config(_) | SimError::NoRoute { .. } => CliError::Config(e.to_string()),
            _ => CliError::Runtime(e.to_string()),
        }
    }
}

#[derive(Debug, Parser)]
#[command(
    name = "rocesim",
    version,
    about = "Packet-level RoCEv2 fabric simulator with PFC and RCM"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Run one scenario and write its report directory.
    Run(RunArgs),
    /// Run the cross product of value lists, one report directory per point.
    Sweep(SweepArgs),
    /// Run RCM off, 1a and 1b and print the per-flow throughput table.
    Table(RunArgs),
    /// Print the effective scenario after overrides.
    Show(ScenarioArgs),
}

#[derive(Debug, Clone, Args)]
pub struct ScenarioArgs {
    /// Built-in scenario: parking-lot or single-flow.
    #[arg(long, conflicts_with = "config")]
    pub scenario: Option<String>,
    /// Scenario file.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// off, 1a or 1b.
    #[arg(long)]
    pub rcm: Option<String>,
    /// root or root+victim.
    #[arg(long)]
    pub mark_at: Option<String>,
    /// Simulated time, e.g. 10ms.
    #[arg(long)]
    pub duration: Option<String>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Override one key, e.g. rcm.recovery_time_ns=50us. Applied last.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    pub sets: Vec<String>,
}

#[derive(Debug, Clone, Args)]
pub struct RunArgs {
    #[command(flatten)]
    pub scenario: ScenarioArgs,
    /// Report directory.
    #[arg(long, env = "ROCESIM_OUT", default_value = "rocesim-out")]
    pub out: PathBuf,
    /// Also write the event trace.
    #[arg(long)]
    pub trace: bool,
}

#[derive(Debug, Clone, Args)]
pub struct SweepArgs {
    #[command(flatten)]
    pub run: RunArgs,
    /// One swept key and its values, e.g. rcm.mode=off,1a,1b. Repeatable.
    #[arg(long = "vary", value_name = "KEY=V1,V2,...", required = true)]
    pub vary: Vec<String>,
}

pub fn execute(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::Run(args) => {
            let scn = load_scenario(&args.scenario)?;
            let out = run_once(&scn, args.trace)?;
            write_report_dir(&args.out, &scn, &out)?;
            print!("{}", out.report.render(ReportFormat::Csv));
            Ok(())
        }
        Command::Sweep(args) => sweep(&args),
        Command::Table(args) => {
            let base = load_scenario(&args.scenario)?;
            let table = table(&base, &args.out, args.trace)?;
            print!("{table}");
            Ok(())
        }
        Command::Show(args) => {
            print!("{}", render_scenario(&load_scenario(&args)?));
            Ok(())
        }
    }
}

pub fn preset(name: &str) -> Option<Scenario> {
    match name {
        "parking-lot" => Some(build_parking_lot()),
        "single-flow" => Some(build_single_flow()),
        _ => None,
    }
}

/// Builds the effective scenario: file or preset, then flags, then `--set`.
pub fn load_scenario(args: &ScenarioArgs) -> Result<Scenario, CliError> {
    let mut scn = match (&args.scenario, &args.config) {
        (Some(name), None) => preset(name).ok_or_else(|| {
            CliError::Config(format!(
                "unknown scenario `{name}` (parking-lot, single-flow)"
            ))
        })?,
        (None, Some(path)) => {
            let text = fs::read_to_string(path).map_err(|source| CliError::Io {
                path: path.clone(),
                source,
            })?;
            parse_scenario(&text)
                .map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?
        }
        (None, None) => build_parking_lot(),
        (Some(_), Some(_)) => unreachable!("clap rejects --scenario with --config"),
    };
    let mut apply = |key: &str, value: &str| {
        scn.set(key, value)
            .map_err(|e| CliError::Config(e.to_string()))
    };
    if let Some(v) = &args.rcm {
        apply("rcm.mode", v)?;
    }
    if let Some(v) = &args.mark_at {
        apply("rcm.mark_at", v)?;
    }
    if let Some(v) = &args.duration {
        apply("run.duration_ns", v)?;
    }
    if let Some(v) = args.seed {
        apply("run.seed", &v.to_string())?;
    }
    for s in &args.sets {
        let (k, v) = s
            .split_once('=')
            .ok_or_else(|| CliError::Config(format!("--set `{s}` must be KEY=VALUE")))?;
        apply(k.trim(), v.trim())?;
    }
    scn.validate()
        .map_err(|e| CliError::Config(e.to_string()))?;
    Ok(scn)
}

pub fn run_once(scn: &Scenario, trace: bool) -> Result<RunOutput, CliError> {
    let opts = SimOptions {
        seed: scn.run.seed,
        trace,
    };
    Ok(run_scenario(
        scn,
        SimTime::from_ns(scn.run.duration_ns),
        &opts,
    )?)
}

fn write_file(path: PathBuf, contents: &str) -> Result<(), CliError> {
    fs::write(&path, contents).map_err(|source| CliError::Io { path, source })
}

/// Writes every report view plus the effective scenario into `dir`.
pub fn write_report_dir(dir: &Path, scn: &Scenario, out: &RunOutput) -> Result<(), CliError> {
    fs::create_dir_all(dir).map_err(|source| CliError::Io {
        path: dir.to_path_buf(),
        source,
    })?;
    let r = &out.report;
    write_file(dir.join("scenario.scn"), &render_scenario(scn))?;
    write_file(dir.join("flows.csv"), &r.render(ReportFormat::Csv))?;
    write_file(dir.join("report.json"), &r.render(ReportFormat::Json))?;
    write_file(
        dir.join("congestion.csv"),
        &r.render(ReportFormat::CongestionCsv),
    )?;
    write_file(
        dir.join("rate_changes.csv"),
        &r.render(ReportFormat::RateCsv),
    )?;
    write_file(dir.join("pauses.csv"), &r.render(ReportFormat::PauseCsv))?;
    write_file(dir.join("throughput.dat"), &r.render(ReportFormat::Series))?;
    if let Some(trace) = &out.trace {
        write_file(dir.join("trace.csv"), trace)?;
    }
    Ok(())
}

/// Parses `key=v1,v2,...`.
pub fn parse_vary(spec: &str) -> Result<(String, Vec<String>), CliError> {
    let (key, values) = spec
        .split_once('=')
        .ok_or_else(|| CliError::Config(format!("--vary `{spec}` must be KEY=V1,V2,...")))?;
    if key.trim().is_empty() {
        return Err(CliError::Config(format!("--vary `{spec}` has no key")));
    }
    if values.trim().is_empty() {
        return Err(CliError::Config(format!(
            "--vary `{spec}` has an empty value list"
        )));
    }
    let values: Vec<String> = values.split(',').map(|v| v.trim().to_string()).collect();
    if values.iter().any(String::is_empty) {
        return Err(CliError::Config(format!(
            "--vary `{spec}` has an empty value"
        )));
    }
    Ok((key.trim().to_string(), values))
}

/// Every combination of the swept values, first key slowest.
pub fn cross_product(axes: &[(String, Vec<String>)]) -> Vec<Vec<(String, String)>> {
    let mut points = vec![Vec::new()];
    for (key, values) in axes {
        points = points
            .into_iter()
            .flat_map(|p| {
                values.iter().map(move |v| {
                    let mut p = p.clone();
                    p.push((key.clone(), v.clone()));
                    p
                })
            })
            .collect();
    }
    points
}

fn sweep(args: &SweepArgs) -> Result<(), CliError> {
    let axes = args
        .vary
        .iter()
        .map(|s| parse_vary(s))
        .collect::<Result<Vec<_>, _>>()?;
    let base = load_scenario(&args.run.scenario)?;
    let points = cross_product(&axes);
    // validate every point before running any
    let scenarios = points
        .iter()
        .map(|point| {
            let mut scn = base.clone();
            for (k, v) in point {
                scn.set(k, v).map_err(|e| CliError::Config(e.to_string()))?;
            }
            scn.validate()
                .map_err(|e| CliError::Config(e.to_string()))?;
            Ok(scn)
        })
        .collect::<Result<Vec<_>, CliError>>()?;

    let flow_names: Vec<&str> = base.flows.iter().map(|f| f.name.as_str()).collect();
    let mut index = String::from("point,dir");
    for (k, _) in &axes {
        let _ = write!(index, ",{k}");
    }
    index.push_str(",aggregate_gbps,jain");
    for name in &flow_names {
        let _ = write!(index, ",{name}_gbps");
    }
    index.push('\n');

    for (i, (point, scn)) in points.iter().zip(&scenarios).enumerate() {
        let dir_name = format!("point-{i:03}");
        let out = run_once(scn, args.run.trace)?;
        write_report_dir(&args.run.out.join(&dir_name), scn, &out)?;
        let s = &out.report.summary;
        let _ = write!(index, "{i},{dir_name}");
        for (_, v) in point {
            let _ = write!(index, ",{v}");
        }
        let _ = write!(
            index,
            ",{:.4},{:.4}",
            s.aggregate_steady_gbps, s.jain_fairness
        );
        for row in &out.report.flows {
            let _ = write!(index, ",{:.4}", row.steady_gbps);
        }
        index.push('\n');
    }
    fs::create_dir_all(&args.run.out).map_err(|source| CliError::Io {
        path: args.run.out.clone(),
        source,
    })?;
    write_file(args.run.out.join("index.csv"), &index)?;
    print!("{index}");
    Ok(())
}

/// Steady-state Gbps per flow under RCM off, 1a and 1b.
fn table(base: &Scenario, out_dir: &Path, trace: bool) -> Result<String, CliError> {
    let modes = [("off", "NO RCM"), ("1a", "RCM_1a"), ("1b", "RCM_1b")];
    let mut columns = Vec::new();
    for (mode, _) in modes {
        let mut scn = base.clone();
        scn.set("rcm.mode", mode)
            .map_err(|e| CliError::Config(e.to_string()))?;
        let out = run_once(&scn, trace)?;
        write_report_dir(&out_dir.join(format!("rcm-{mode}")), &scn, &out)?;
        columns.push(out.report);
    }
    let mut csv = String::from("flow");
    for (_, title) in modes {
        let _ = write!(csv, ",{title}");
    }
    csv.push('\n');
    for (i, f) in base.flows.iter().enumerate() {
        let _ = write!(csv, "{}", f.name);
        for r in &columns {
            let _ = write!(csv, ",{:.2}", r.flows[i].steady_gbps);
        }
        csv.push('\n');
    }
    let _ = write!(csv, "aggregate");
    for r in &columns {
        let _ = write!(csv, ",{:.2}", r.summary.aggregate_steady_gbps);
    }
    csv.push('\n');
    write_file(out_dir.join("table.csv"), &csv)?;
    Ok(csv)
}
