//! `attrib` — additive attribution of aggregated-measure changes.
//!
//! Three commands: `attribute` computes a contribution report for a measure
//! change between time steps of a CSV extract, `rank` orders the sub-cubes
//! by their total contribution, and `experiment` reproduces the packaged
//! evaluation suites.
//!
//! Exit codes: 0 success, 2 validation error, 3 numerical error, 4 I/O
//! error.

mod config;
mod pipeline;

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use attrib_core::model::ContributionMatrix;
use attrib_core::report::{rank_sub_cubes, render_aligned, ContributionReport};
use attrib_core::Error;
use attrib_experiments::{
    berkeley_table, run_berkeley, run_dau_sim, run_linear_sim, DauSimConfig, ExperimentError,
    LinearSimConfig, MetricReport,
};
use clap::{Args, Parser, Subcommand};

use config::{ConfigFile, OutputFormat, RunConfig};

#[derive(Parser)]
#[command(
    name = "attrib",
    version,
    about = "Fair additive attribution of aggregated-measure changes over cube drill-downs"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Compute the contribution matrix for a measure change.
    Attribute(RunArgs),
    /// Rank sub-cubes by the magnitude of their total contribution.
    Rank(RunArgs),
    /// Reproduce a packaged experiment: rq1, rq2 or berkeley.
    Experiment(ExperimentArgs),
}

#[derive(Args)]
struct RunArgs {
    /// Declarative run configuration file.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Input CSV path (overrides the config file).
    #[arg(long)]
    input: Option<PathBuf>,
    /// Report destination; stdout when omitted.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Report format: json, csv or table.
    #[arg(long)]
    format: Option<String>,
    /// Engine: auto, linear, ratio, riemann, exact, permutation or kernel.
    #[arg(long)]
    engine: Option<String>,
    /// Sample count for the sampling engines.
    #[arg(long)]
    samples: Option<usize>,
    /// Step count for the path-integral engine.
    #[arg(long = "riemann-steps")]
    riemann_steps: Option<usize>,
    /// Master seed; every random stream derives from it.
    #[arg(long)]
    seed: Option<u64>,
    /// Worker threads for engine-internal parallelism (results never depend
    /// on this).
    #[arg(long)]
    threads: Option<usize>,
    /// Player scope: cells, rows or cols.
    #[arg(long)]
    scope: Option<String>,
}

#[derive(Args)]
struct ExperimentArgs {
    /// Experiment name: rq1, rq2 or berkeley.
    name: String,
    #[arg(long)]
    seed: Option<u64>,
    /// Repetition count override.
    #[arg(long)]
    reps: Option<usize>,
    /// Output directory for the report files.
    #[arg(long, default_value = ".")]
    out: PathBuf,
    /// Worker threads for engine-internal parallelism (results never depend
    /// on this).
    #[arg(long)]
    threads: Option<usize>,
}

/// Error with the pipeline stage it occurred in, mapped onto exit codes.
#[derive(Debug)]
pub struct CliError {
    stage: &'static str,
    message: String,
    code: u8,
}

impl CliError {
    fn new(stage: &'static str, message: String, code: u8) -> Self {
        Self {
            stage,
            message,
            code,
        }
    }

    pub fn core(stage: &'static str, err: Error) -> Self {
        let code = match err {
            Error::DivisionByZero
            | Error::UndefinedMeasure(_)
            | Error::PathSingularity { .. }
            | Error::SingularSystem
            | Error::NonFinite { .. } => 3,
            _ => 2,
        };
        Self::new(stage, err.to_string(), code)
    }

    pub fn experiment(stage: &'static str, err: ExperimentError) -> Self {
        match err {
            ExperimentError::Core(e) => Self::core(stage, e),
            ExperimentError::ZeroDenominator => Self::new(stage, err.to_string(), 3),
            ExperimentError::ShapeMismatch { .. } => Self::new(stage, err.to_string(), 2),
        }
    }

    pub fn io(stage: &'static str, path: &str, err: std::io::Error) -> Self {
        Self::new(stage, format!("{path}: {err}"), 4)
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error [{}]: {}", e.stage, e.message);
            ExitCode::from(e.code)
        }
    }
}

fn run(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::Attribute(args) => {
            let config = resolve_config(&args)?;
            configure_threads(config.threads);
            let matrix = pipeline::run_attribution(&config)?;
            let report = ContributionReport::from_matrix(&matrix, Some(config.seed));
            let rendered = match config.format {
                OutputFormat::Json => report.to_json(),
                OutputFormat::Csv => report.to_csv(),
                OutputFormat::Table => report.render_table(),
            };
            write_output(config.out.as_deref(), &rendered)
        }
        Command::Rank(args) => {
            let config = resolve_config(&args)?;
            configure_threads(config.threads);
            let matrix = pipeline::run_attribution(&config)?;
            let rendered = render_ranking(&matrix, config.format);
            write_output(config.out.as_deref(), &rendered)
        }
        Command::Experiment(args) => {
            configure_threads(args.threads.unwrap_or(1));
            run_experiment(&args)
        }
    }
}

/// Merges the config file (when given) with flag overrides.
fn resolve_config(args: &RunArgs) -> Result<RunConfig, CliError> {
    let mut file = match &args.config {
        Some(path) => {
            let text = fs::read_to_string(path)
                .map_err(|e| CliError::io("configure", &path.display().to_string(), e))?;
            ConfigFile::parse(&text).map_err(|e| CliError::core("configure", e))?
        }
        None => ConfigFile::default(),
    };
    if let Some(input) = &args.input {
        file.input = Some(input.clone());
    }
    if let Some(out) = &args.out {
        file.out = Some(out.clone());
    }
    if let Some(s) = &args.format {
        file.format = Some(s.parse().map_err(|e| CliError::core("configure", e))?);
    }
    if let Some(s) = &args.engine {
        file.engine = Some(s.parse().map_err(|e| CliError::core("configure", e))?);
    }
    if let Some(s) = &args.scope {
        file.scope = Some(s.parse().map_err(|e| CliError::core("configure", e))?);
    }
    if args.samples.is_some() {
        file.samples = args.samples;
    }
    if args.riemann_steps.is_some() {
        file.riemann_steps = args.riemann_steps;
    }
    if args.seed.is_some() {
        file.seed = args.seed;
    }
    if args.threads.is_some() {
        file.threads = args.threads;
    }
    file.into_run_config()
        .map_err(|e| CliError::core("configure", e))
}

fn configure_threads(threads: usize) {
    let _ = rayon::ThreadPoolBuilder::new()
        .num_threads(threads.max(1))
        .build_global();
}

fn render_ranking(matrix: &ContributionMatrix, format: OutputFormat) -> String {
    let ranked = rank_sub_cubes(matrix);
    match format {
        OutputFormat::Json => {
            let items: Vec<serde_json::Value> = ranked
                .iter()
                .map(|(label, total)| serde_json::json!({ "sub_cube": label, "total": total }))
                .collect();
            let mut s = serde_json::to_string_pretty(&items).expect("ranking serialises");
            s.push('\n');
            s
        }
        OutputFormat::Csv => {
            let mut out = String::from("sub_cube,total\n");
            for (label, total) in &ranked {
                out.push_str(&format!("{label},{total}\n"));
            }
            out
        }
        OutputFormat::Table => {
            let header = vec!["sub_cube".to_string(), "total".to_string()];
            let body: Vec<Vec<String>> = ranked
                .iter()
                .map(|(label, total)| vec![label.clone(), format!("{total:+.6}")])
                .collect();
            render_aligned(&header, &body)
        }
    }
}

fn run_experiment(args: &ExperimentArgs) -> Result<(), CliError> {
    fs::create_dir_all(&args.out)
        .map_err(|e| CliError::io("write", &args.out.display().to_string(), e))?;
    match args.name.as_str() {
        "rq1" => {
            let mut config = LinearSimConfig::default();
            if let Some(seed) = args.seed {
                config.seed = seed;
            }
            if let Some(reps) = args.reps {
                config.repetitions = reps;
            }
            let report =
                run_linear_sim(&config).map_err(|e| CliError::experiment("experiment", e))?;
            write_metric_report(&args.out, "rq1", &report)
        }
        "rq2" => {
            let mut config = DauSimConfig::default();
            if let Some(seed) = args.seed {
                config.seed = seed;
            }
            if let Some(reps) = args.reps {
                config.repetitions = reps;
            }
            let report = run_dau_sim(&config).map_err(|e| CliError::experiment("experiment", e))?;
            write_metric_report(&args.out, "rq2", &report)
        }
        "berkeley" => {
            let matrix = run_berkeley().map_err(|e| CliError::experiment("experiment", e))?;
            let table = berkeley_table(&matrix);
            let report = ContributionReport::from_matrix(&matrix, None);
            write_file(&args.out.join("berkeley.json"), &report.to_json())?;
            write_file(&args.out.join("berkeley.txt"), &table)?;
            print!("{table}");
            Ok(())
        }
        other => Err(CliError::core(
            "configure",
            Error::InvalidConfig(format!(
                "unknown experiment `{other}` (expected rq1, rq2 or berkeley)"
            )),
        )),
    }
}

fn write_metric_report(dir: &Path, name: &str, report: &MetricReport) -> Result<(), CliError> {
    write_file(&dir.join(format!("{name}.json")), &report.to_json())?;
    write_file(&dir.join(format!("{name}.csv")), &report.to_plot_csv())?;
    print!("{}", report.render_table());
    Ok(())
}

fn write_file(path: &Path, contents: &str) -> Result<(), CliError> {
    fs::write(path, contents).map_err(|e| CliError::io("write", &path.display().to_string(), e))
}

fn write_output(out: Option<&Path>, rendered: &str) -> Result<(), CliError> {
    match out {
        Some(path) => write_file(path, rendered),
        None => {
            print!("{rendered}");
            Ok(())
        }
    }
}
