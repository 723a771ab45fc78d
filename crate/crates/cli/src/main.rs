//! `rdlab`: generate cohorts, simulate datasets, estimate, diagnose and run
//! simulation studies. Every command writes into `--out` alongside a
//! `manifest.json` describing the run.

mod error;

use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use clap::{Args, Parser, Subcommand};
use rdlab::cohort::{generate_default_stream, read_cohort_file, write_cohort, CohortParams};
use rdlab::diagnostics::{diagnose, DEFAULT_BIN_WIDTH};
use rdlab::inference::window::window_with_min;
use rdlab::inference::{estimate_window, rd_points, Estimator, InferenceError, InferenceSettings};
use rdlab::io::{write_csv_file, write_json_atomic, DataError};
use rdlab::numerics::RngStream;
use rdlab::simulate::{read_dataset_file, PreparedCohort, ScenarioConfig};
use rdlab::study::{aggregate, build_id, run_study, write_table, CellFilter, StudyConfig, StudyOptions};
use serde::Serialize;
use serde_json::{json, Value};

use error::CliError;

#[derive(Parser)]
#[command(name = "rdlab", version, about = "Regression-discontinuity simulation and estimation laboratory")]
struct Cli {
    #[command(flatten)]
    global: Global,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Global {
    /// Seed for all randomness; overrides any seed in a config file.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads for `study`; 0 uses every logical core.
    #[arg(long, global = true, default_value_t = 0)]
    jobs: usize,
    /// Output directory; created if missing.
    #[arg(long, global = true, default_value = "rdlab-out")]
    out: PathBuf,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic cohort CSV.
    Cohort {
        /// TOML file of generator settings; omitted keys keep their defaults.
        #[arg(long)]
        config: Option<PathBuf>,
    },
    /// Simulate one dataset per replicate from a cohort and a scenario.
    Simulate {
        #[arg(long)]
        cohort: PathBuf,
        /// TOML scenario: tau, confounding_level, iv_strength, bandwidth, replicates, seed.
        #[arg(long)]
        scenario: PathBuf,
    },
    /// Run estimators on one dataset.
    Estimate {
        #[arg(long)]
        dataset: PathBuf,
        /// Comma-separated subset of freq, wip, sip, late-unct, late-flex, late-cnst.
        #[arg(long, value_delimiter = ',', default_value = "freq,wip,sip,late-unct,late-flex,late-cnst")]
        estimators: Vec<String>,
        #[arg(long, default_value_t = 0.05)]
        bandwidth: f64,
        /// Also write the retained posterior draws of each Bayesian estimator.
        #[arg(long)]
        dump_draws: bool,
    },
    /// Binned summary plus threshold and covariate-continuity checks.
    Diagnose {
        #[arg(long)]
        dataset: PathBuf,
        #[arg(long, default_value_t = 0.05)]
        bandwidth: f64,
        #[arg(long, default_value_t = DEFAULT_BIN_WIDTH)]
        bin_width: f64,
    },
    /// Run a scenario grid and write the aggregated table.
    Study {
        /// TOML grid config; takes precedence over --preset.
        #[arg(long)]
        config: Option<PathBuf>,
        /// smoke, paper-tables or full.
        #[arg(long, default_value = "smoke")]
        preset: String,
        /// Only run cells matching iv:level:tau:h (each part may be `*`); repeatable.
        #[arg(long)]
        cells: Vec<String>,
        /// Reuse finished cells from a previous run into the same --out.
        #[arg(long)]
        resume: bool,
        #[arg(long)]
        replicates: Option<usize>,
        /// Also write every simulated dataset as CSV.
        #[arg(long)]
        write_datasets: bool,
    },
}

#[derive(Serialize)]
struct Manifest {
    command: String,
    args: Vec<String>,
    config: Value,
    seeds: Value,
    inputs: Vec<String>,
    outputs: Vec<String>,
    build: String,
    duration_secs: f64,
}

/// What a command produced, before timing is added.
struct Report {
    name: &'static str,
    config: Value,
    seeds: Value,
    inputs: Vec<PathBuf>,
    outputs: Vec<PathBuf>,
    /// Set when outputs were written but some estimate failed.
    partial_failure: Option<CliError>,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let start = Instant::now();
    match run(&cli) {
        Ok(report) => {
            let status = report.partial_failure.as_ref().map(CliError::exit_code);
            if let Some(e) = &report.partial_failure {
                eprintln!("error: {e}");
            }
            if let Err(e) = write_manifest(&cli.global.out, report, start) {
                eprintln!("error: {e}");
                return ExitCode::from(e.exit_code());
            }
            ExitCode::from(status.unwrap_or(0))
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}

fn write_manifest(out: &Path, r: Report, start: Instant) -> Result<(), CliError> {
    let show = |v: &[PathBuf]| v.iter().map(|p| p.display().to_string()).collect();
    let manifest = Manifest {
        command: r.name.to_string(),
        args: std::env::args().skip(1).collect(),
        config: r.config,
        seeds: r.seeds,
        inputs: show(&r.inputs),
        outputs: show(&r.outputs),
        build: build_id(),
        duration_secs: start.elapsed().as_secs_f64(),
    };
    write_json_atomic(&out.join("manifest.json"), &manifest)?;
    Ok(())
}

fn read_toml<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T, CliError> {
    let text = std::fs::read_to_string(path).map_err(|e| DataError::io(path, e))?;
    toml::from_str(&text).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))
}

fn to_value<T: Serialize>(v: &T) -> Value {
    serde_json::to_value(v).unwrap_or(Value::Null)
}

fn run(cli: &Cli) -> Result<Report, CliError> {
    let g = &cli.global;
    std::fs::create_dir_all(&g.out).map_err(|e| DataError::io(&g.out, e))?;
    match &cli.command {
        Command::Cohort { config } => cmd_cohort(g, config.as_deref()),
        Command::Simulate { cohort, scenario } => cmd_simulate(g, cohort, scenario),
        Command::Estimate {
            dataset,
            estimators,
            bandwidth,
            dump_draws,
        } => cmd_estimate(g, dataset, estimators, *bandwidth, *dump_draws),
        Command::Diagnose {
            dataset,
            bandwidth,
            bin_width,
        } => cmd_diagnose(g, dataset, *bandwidth, *bin_width),
        Command::Study {
            config,
            preset,
            cells,
            resume,
            replicates,
            write_datasets,
        } => cmd_study(g, config.as_deref(), preset, cells, *resume, *replicates, *write_datasets),
    }
}

fn cmd_cohort(g: &Global, config: Option<&Path>) -> Result<Report, CliError> {
    let mut params: CohortParams = match config {
        Some(p) => read_toml(p)?,
        None => CohortParams::default(),
    };
    if let Some(s) = g.seed {
        params.seed = s;
    }
    params.validate().map_err(|e| CliError::Config(e.to_string()))?;
    let cohort = generate_default_stream(&params).map_err(|e| CliError::Numeric(e.to_string()))?;
    let path = g.out.join("cohort.csv");
    let file = std::fs::File::create(&path).map_err(|e| DataError::io(&path, e))?;
    write_cohort(std::io::BufWriter::new(file), &cohort)?;
    Ok(Report {
        name: "cohort",
        config: to_value(&params),
        seeds: json!({ "cohort": params.seed }),
        inputs: config.into_iter().map(Path::to_path_buf).collect(),
        outputs: vec![path],
        partial_failure: None,
    })
}

fn cmd_simulate(g: &Global, cohort_path: &Path, scenario_path: &Path) -> Result<Report, CliError> {
    let mut scenario: ScenarioConfig = read_toml(scenario_path)?;
    if let Some(s) = g.seed {
        scenario.seed = s;
    }
    scenario.validate().map_err(CliError::Config)?;
    let cohort = read_cohort_file(cohort_path)?;
    let prepared = PreparedCohort::new(&cohort, scenario.confounding_level)?;
    let mut outputs = Vec::new();
    for r in 0..scenario.replicates as u64 {
        let data = prepared.simulate(scenario.iv_strength, scenario.tau, scenario.seed, r)?;
        let path = g.out.join(format!("dataset_r{r:03}.csv"));
        write_csv_file(&path, &data.records)?;
        outputs.push(path);
    }
    Ok(Report {
        name: "simulate",
        config: to_value(&scenario),
        seeds: json!({ "scenario": scenario.seed, "replicates": scenario.replicates }),
        inputs: vec![cohort_path.to_path_buf(), scenario_path.to_path_buf()],
        outputs,
        partial_failure: None,
    })
}

fn cmd_estimate(g: &Global, dataset: &Path, names: &[String], h: f64, dump_draws: bool) -> Result<Report, CliError> {
    let requested = names
        .iter()
        .map(|n| n.trim().parse::<Estimator>())
        .collect::<Result<Vec<_>, _>>()
        .map_err(CliError::Config)?;
    if !(h > 0.0 && h.is_finite()) {
        return Err(CliError::Config(InferenceError::Bandwidth(h).to_string()));
    }
    let records = read_dataset_file(dataset)?;
    let settings = InferenceSettings::default();
    let w = window_with_min(&rd_points(&records), h, settings.min_side).map_err(|e| CliError::Data(e.to_string()))?;
    let seed = g.seed.unwrap_or(1);
    let run = estimate_window(&w, &requested, &settings, &RngStream::for_replicate(seed, 0, 0), dump_draws);

    let mut failed = Vec::new();
    let records: Vec<Value> = run
        .results
        .iter()
        .map(|(e, r)| match r {
            Ok(s) => to_value(s),
            Err(msg) => {
                failed.push(format!("{e}: {msg}"));
                json!({ "estimator": e.name(), "error": msg })
            }
        })
        .collect();
    let path = g.out.join("results.json");
    write_json_atomic(&path, &records)?;
    let mut outputs = vec![path];
    for (e, d) in &run.draws {
        let p = g.out.join(format!("draws_{}.csv", e.name()));
        write_csv_file(&p, &d.long_rows())?;
        outputs.push(p);
    }
    Ok(Report {
        name: "estimate",
        config: json!({ "estimators": requested, "bandwidth": h, "settings": to_value(&settings) }),
        seeds: json!({ "estimate": seed }),
        inputs: vec![dataset.to_path_buf()],
        outputs,
        partial_failure: (!failed.is_empty()).then(|| CliError::Numeric(failed.join("; "))),
    })
}

fn cmd_diagnose(g: &Global, dataset: &Path, h: f64, bin_width: f64) -> Result<Report, CliError> {
    if !(h > 0.0 && h.is_finite()) {
        return Err(CliError::Config(InferenceError::Bandwidth(h).to_string()));
    }
    if !(bin_width > 0.0 && bin_width.is_finite()) {
        return Err(CliError::Config(format!("bin width must be positive (got {bin_width})")));
    }
    let records = read_dataset_file(dataset)?;
    let (binned, report) = diagnose(&records, h, bin_width).map_err(|e| CliError::Data(e.to_string()))?;
    let csv = g.out.join("binned.csv");
    write_csv_file(&csv, &binned.rows())?;
    let json_path = g.out.join("diagnostics.json");
    write_json_atomic(&json_path, &report)?;
    Ok(Report {
        name: "diagnose",
        config: json!({ "bandwidth": h, "bin_width": bin_width }),
        seeds: Value::Null,
        inputs: vec![dataset.to_path_buf()],
        outputs: vec![csv, json_path],
        partial_failure: None,
    })
}

fn cmd_study(
    g: &Global,
    config: Option<&Path>,
    preset: &str,
    cells: &[String],
    resume: bool,
    replicates: Option<usize>,
    write_datasets: bool,
) -> Result<Report, CliError> {
    let mut cfg = match config {
        Some(p) => read_toml(p)?,
        None => StudyConfig::preset(preset)?,
    };
    if let Some(s) = g.seed {
        cfg.seed = s;
    }
    if let Some(r) = replicates {
        cfg.replicates = r;
    }
    cfg.validate()?;
    let filters = cells
        .iter()
        .map(|c| c.parse::<CellFilter>())
        .collect::<Result<Vec<_>, _>>()
        .map_err(CliError::Config)?;
    let cells_dir = g.out.join("cells");
    let options = StudyOptions {
        jobs: g.jobs,
        cells: filters,
        artifact_dir: Some(cells_dir.clone()),
        resume,
        dataset_dir: write_datasets.then(|| g.out.join("datasets")),
    };
    let results = run_study(&cfg, &options)?;
    let rows = aggregate(&results);
    for cell in &results.cells {
        for ec in cell.estimators.iter().filter(|ec| !ec.is_valid()) {
            eprintln!(
                "warning: cell {} estimator {} invalid ({} of {} replicates failed)",
                cell.key,
                ec.estimator,
                ec.failures(),
                ec.entries.len()
            );
        }
    }
    let table = g.out.join("table.csv");
    write_table(&table, &rows)?;
    let mut outputs = vec![table, cells_dir];
    outputs.extend(options.dataset_dir);
    let seeds: Vec<Value> = results
        .cells
        .iter()
        .map(|c| json!({ "cell": c.key.to_string(), "scenario_seed": c.scenario_seed }))
        .collect();
    Ok(Report {
        name: "study",
        config: to_value(&cfg),
        seeds: json!({ "base": cfg.seed, "cells": seeds }),
        inputs: config.into_iter().map(Path::to_path_buf).collect(),
        outputs,
        partial_failure: None,
    })
}
