//! Command-line front end.
//!
//! Settings resolve as flags, then `TASKMERGE_*` environment variables, then
//! the `--config` file, then built-in defaults. Exit codes: 0 success,
//! 1 usage error, 2 runtime failure.

use std::ffi::OsString;
use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};

use crate::config::ConfigFile;
use crate::engine::{Engine, MergeMode};
use crate::error::{Error, Result};
use crate::position::{PositionMode, QueuingPolicy};
use crate::workload::{format_trace, generate, load_trace};

#[derive(Debug, Parser)]
#[command(name = "taskmerge", version, about = "Deadline-aware task merging simulator")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Write a synthetic trace.
    Generate(GenerateArgs),
    /// Simulate one trace and write summary (and optionally per-task) CSV.
    Run(RunArgs),
    /// Run the paired experiment matrix and write long-form CSV.
    Experiment(ExperimentArgs),
    /// Check a configuration file and print the resolved settings.
    ValidateConfig(ValidateArgs),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum Toggle {
    Off,
    On,
}

fn parse_mode(s: &str) -> std::result::Result<MergeMode, String> {
    s.parse().map_err(|e: Error| e.to_string())
}

fn parse_policy(s: &str) -> std::result::Result<QueuingPolicy, String> {
    s.parse().map_err(|e: Error| e.to_string())
}

#[derive(Debug, Args)]
pub struct Common {
    /// TOML file with [engine], [workload] and [experiment] sections.
    #[arg(long, env = "TASKMERGE_CONFIG")]
    pub config: Option<PathBuf>,
    #[arg(long, env = "TASKMERGE_SEED")]
    pub seed: Option<u64>,
}

#[derive(Debug, Args)]
pub struct GenerateArgs {
    #[command(flatten)]
    pub common: Common,
    /// Number of tasks.
    #[arg(long, env = "TASKMERGE_TASKS")]
    pub tasks: Option<usize>,
    #[arg(long, env = "TASKMERGE_SD_SCALE")]
    pub sd_scale: Option<f64>,
    /// Output path; stdout when omitted.
    #[arg(long, env = "TASKMERGE_OUT")]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct RunArgs {
    #[command(flatten)]
    pub common: Common,
    #[arg(long, env = "TASKMERGE_TRACE")]
    pub trace: PathBuf,
    #[arg(long, env = "TASKMERGE_MODE", value_parser = parse_mode)]
    pub mode: Option<MergeMode>,
    #[arg(long, env = "TASKMERGE_QUEUE_POLICY", value_parser = parse_policy)]
    pub queue_policy: Option<QueuingPolicy>,
    #[arg(long, env = "TASKMERGE_POSITION_FINDER")]
    pub position_finder: Option<Toggle>,
    /// Multiplier on every task's standard deviation.
    #[arg(long, env = "TASKMERGE_SD_SCALE")]
    pub sd_scale: Option<f64>,
    /// Summary CSV path; stdout when omitted.
    #[arg(long, env = "TASKMERGE_OUT")]
    pub out: Option<PathBuf>,
    /// Per-task CSV path.
    #[arg(long, env = "TASKMERGE_RECORDS")]
    pub records: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct ExperimentArgs {
    #[command(flatten)]
    pub common: Common,
    #[arg(long, env = "TASKMERGE_REPS")]
    pub reps: Option<u64>,
    #[arg(long, env = "TASKMERGE_MODES", value_delimiter = ',', value_parser = parse_mode)]
    pub modes: Option<Vec<MergeMode>>,
    #[arg(long, env = "TASKMERGE_LOADS", value_delimiter = ',')]
    pub loads: Option<Vec<usize>>,
    #[arg(long, env = "TASKMERGE_SD_SCALE", value_delimiter = ',')]
    pub sd_scale: Option<Vec<f64>>,
    #[arg(long, env = "TASKMERGE_POSITION_FINDER", value_delimiter = ',')]
    pub position_finder: Option<Vec<Toggle>>,
    #[arg(long, env = "TASKMERGE_QUEUE_POLICY", value_delimiter = ',', value_parser = parse_policy)]
    pub queue_policy: Option<Vec<QueuingPolicy>>,
    /// Output path; stdout when omitted.
    #[arg(long, env = "TASKMERGE_OUT")]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct ValidateArgs {
    #[arg(long, env = "TASKMERGE_CONFIG")]
    pub config: PathBuf,
}

fn load_config(path: Option<&Path>) -> Result<ConfigFile> {
    match path {
        Some(p) => ConfigFile::load(p),
        None => Ok(ConfigFile::default()),
    }
}

fn output(path: Option<&Path>) -> Result<Box<dyn Write>> {
    Ok(match path {
        Some(p) => Box::new(BufWriter::new(File::create(p)?)),
        None => Box::new(BufWriter::new(io::stdout())),
    })
}

fn cmd_generate(a: GenerateArgs) -> Result<()> {
    let mut cfg = load_config(a.common.config.as_deref())?;
    if let Some(n) = a.tasks {
        cfg.workload.total_tasks = n;
    }
    if let Some(s) = a.sd_scale {
        cfg.workload.sd_scale = s;
    }
    let seed = a.common.seed.unwrap_or(cfg.experiment.seed);
    let trace = generate(&cfg.workload, seed)?;
    let mut out = output(a.out.as_deref())?;
    out.write_all(format_trace(&trace).as_bytes())?;
    out.flush()?;
    Ok(())
}

fn cmd_run(a: RunArgs) -> Result<()> {
    let cfg = load_config(a.common.config.as_deref())?;
    let mut engine = cfg.engine;
    if let Some(m) = a.mode {
        engine.mode = m;
    }
    if let Some(p) = a.queue_policy {
        engine.policy = p;
    }
    if let Some(t) = a.position_finder {
        engine.position_mode = match t {
            Toggle::On => PositionMode::Relaxed,
            Toggle::Off => PositionMode::Maintained,
        };
    }
    if let Some(s) = a.sd_scale {
        engine.sd_scale = s;
    }
    if let Some(s) = a.common.seed {
        engine.seed = s;
    }
    engine.keep_records = a.records.is_some();
    let trace = load_trace(&a.trace)?;
    let report = Engine::run(engine, &trace)?;
    let mut out = output(a.out.as_deref())?;
    report.write_summary_csv(&mut out)?;
    out.flush()?;
    if let Some(path) = a.records {
        let mut rec = output(Some(&path))?;
        report.write_records_csv(&mut rec)?;
        rec.flush()?;
    }
    Ok(())
}

fn cmd_experiment(a: ExperimentArgs) -> Result<()> {
    let cfg = load_config(a.common.config.as_deref())?;
    let mut plan = cfg.plan();
    let s = &mut plan.settings;
    if let Some(v) = a.reps {
        s.reps = v;
    }
    if let Some(v) = a.modes {
        s.modes = v;
    }
    if let Some(v) = a.loads {
        s.loads = v;
    }
    if let Some(v) = a.sd_scale {
        s.sd_scales = v;
    }
    if let Some(v) = a.position_finder {
        s.position_finder = v.into_iter().map(|t| t == Toggle::On).collect();
    }
    if let Some(v) = a.queue_policy {
        s.policies = v;
    }
    if let Some(v) = a.common.seed {
        s.seed = v;
    }
    let results = plan.run()?;
    let mut out = output(a.out.as_deref())?;
    results.write_csv(&mut out)?;
    out.flush()?;
    Ok(())
}

fn cmd_validate(a: ValidateArgs) -> Result<()> {
    let cfg = ConfigFile::load(&a.config)?;
    cfg.validate()?;
    print!("{}", cfg.to_toml());
    Ok(())
}

pub fn execute(command: Command) -> Result<()> {
    match command {
        Command::Generate(a) => cmd_generate(a),
        Command::Run(a) => cmd_run(a),
        Command::Experiment(a) => cmd_experiment(a),
        Command::ValidateConfig(a) => cmd_validate(a),
    }
}

/// Parses `args` and runs the command; returns the process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    match execute(cli.command) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            2
        }
    }
}
