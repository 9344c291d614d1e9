//! `minpen`: run penalized model-selection experiments from a JSON config.

mod config;

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use minpen_core::sim::{Experiment, ExperimentKind, ExperimentReport};
use minpen_core::{
    check_assumptions, empirical_risk, fit_least_squares, PartitionModel, PenaltyShape, Sample,
};
use serde::Serialize;
use serde_json::{json, Value};
use sha2::{Digest, Sha256};

use config::{ExperimentConfig, PenaltyRegime};

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{0}")]
    Config(String),
    #[error(transparent)]
    Runtime(#[from] minpen_core::Error),
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}

impl CliError {
    fn exit_code(&self) -> u8 {
        match self {
            Self::Config(_) => 2,
            Self::Runtime(_) | Self::Io(_) => 3,
        }
    }

    fn kind(&self) -> &'static str {
        match self {
            Self::Config(_) => "config",
            Self::Runtime(_) => "runtime",
            Self::Io(_) => "io",
        }
    }
}

#[derive(Debug, Parser)]
#[command(
    name = "minpen",
    version,
    about = "Penalized least-squares model selection experiments"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
    /// Experiment configuration (JSON).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Overrides the configured seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory (default: the config's `output`, else `.`).
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Worker threads; results do not depend on it.
    #[arg(long, global = true)]
    threads: Option<usize>,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Run the configured experiment.
    Run,
    /// Fit one model to a CSV sample with header `x,y`.
    Fit {
        #[arg(long)]
        sample: PathBuf,
        /// Number of regular cells.
        #[arg(
            long,
            conflicts_with = "breakpoints",
            required_unless_present = "breakpoints"
        )]
        cells: Option<usize>,
        /// Explicit breakpoints `0,...,1`.
        #[arg(long, value_delimiter = ',')]
        breakpoints: Option<Vec<f64>>,
        #[arg(long, default_value_t = 0)]
        degree: usize,
    },
    /// Selection path `A -> D(M̂(A))` on the first replicate.
    Path,
    /// Dimension-jump calibration on every replicate.
    Calibrate,
    /// Selection under `c_under · pen_min`.
    Theorem1 {
        #[arg(long)]
        c_under: Option<f64>,
    },
    /// Selection under `c_over · pen_min`.
    Theorem2 {
        #[arg(long)]
        c_over: Option<f64>,
    },
    /// Monte Carlo table of `E[p2]` per model.
    Minpen,
    /// Assumption report for the configured collection and truth.
    Check,
}

/// Writes output files tagged with the config hash and seed.
struct Output {
    dir: PathBuf,
    hash: String,
    seed: Option<u64>,
}

impl Output {
    fn new(dir: PathBuf, hash: String, seed: Option<u64>) -> Result<Self, CliError> {
        fs::create_dir_all(&dir)?;
        Ok(Self { dir, hash, seed })
    }

    fn header(&self) -> String {
        match self.seed {
            Some(s) => format!("# config_sha256={} seed={s}\n", self.hash),
            None => format!("# config_sha256={}\n", self.hash),
        }
    }

    fn csv(
        &self,
        name: &str,
        body: impl FnOnce(&mut Vec<u8>) -> minpen_core::Result<()>,
    ) -> Result<(), CliError> {
        let mut buf = self.header().into_bytes();
        body(&mut buf)?;
        self.write(name, &buf)
    }

    fn json<T: Serialize>(&self, name: &str, value: &T) -> Result<(), CliError> {
        let mut v = serde_json::to_value(value).map_err(minpen_core::Error::from)?;
        let provenance = json!({ "config_sha256": self.hash, "seed": self.seed });
        match &mut v {
            Value::Object(map) => {
                map.insert("provenance".into(), provenance);
            }
            other => v = json!({ "provenance": provenance, "data": other.take() }),
        }
        let mut buf = serde_json::to_vec_pretty(&v).map_err(minpen_core::Error::from)?;
        buf.push(b'\n');
        self.write(name, &buf)
    }

    fn write(&self, name: &str, bytes: &[u8]) -> Result<(), CliError> {
        let path = self.dir.join(name);
        fs::write(&path, bytes)?;
        println!("{}", path.display());
        Ok(())
    }

    fn report(&self, report: &ExperimentReport) -> Result<(), CliError> {
        self.json("report.json", report)?;
        self.csv("replicates.csv", |w| report.write_replicates_csv(w))?;
        self.csv("aggregates.csv", |w| report.write_aggregates_csv(w))
    }
}

fn load_config(cli: &Cli) -> Result<ExperimentConfig, CliError> {
    let path = cli
        .config
        .as_deref()
        .ok_or_else(|| CliError::Config("--config is required for this command".into()))?;
    let mut config = ExperimentConfig::load(path)?;
    if let Some(seed) = cli.seed {
        config.seed = seed;
    }
    match cli.command {
        Command::Theorem1 { c_under: Some(c) } => config.theory.c_under = c,
        Command::Theorem2 { c_over: Some(c) } => config.theory.c_over = c,
        _ => {}
    }
    config.validate()?;
    Ok(config)
}

fn output_for(cli: &Cli, config: &ExperimentConfig) -> Result<Output, CliError> {
    let dir = cli
        .out
        .clone()
        .or_else(|| config.output.clone())
        .unwrap_or_else(|| PathBuf::from("."));
    Output::new(dir, config.hash(), Some(config.seed))
}

fn experiment(config: &ExperimentConfig) -> Result<Experiment, CliError> {
    Ok(Experiment::new(
        config.truth.clone(),
        config.collection()?,
        config.settings(),
    )?)
}

fn shape(config: &ExperimentConfig, exp: &Experiment) -> Result<PenaltyShape, CliError> {
    match config.user_shape()? {
        Some(shape) => {
            if shape.len() != exp.collection().len() {
                return Err(CliError::Config(format!(
                    "penalty.values has {} entries, the collection has {} models",
                    shape.len(),
                    exp.collection().len()
                )));
            }
            Ok(shape)
        }
        None => Ok(exp.shape(config.penalty.shape_kind())?),
    }
}

fn write_path(out: &Output, exp: &Experiment, shape: &PenaltyShape) -> Result<(), CliError> {
    let (path, calibration) = exp.example_path(shape)?;
    out.csv("path.csv", |w| path.write_csv(w))?;
    out.json(
        "calibration.json",
        &json!({ "replicate": 0, "calibration": calibration }),
    )
}

fn calibrate(config: &ExperimentConfig, out: &Output) -> Result<(), CliError> {
    let exp = experiment(config)?;
    let shape = shape(config, &exp)?;
    let report = exp.run_with_shape(ExperimentKind::Calibration, &shape, &[], true)?;
    out.report(&report)?;
    write_path(out, &exp, &shape)
}

fn run(config: &ExperimentConfig, out: &Output) -> Result<(), CliError> {
    if config.check_assumptions {
        check(config, out)?;
    }
    match &config.penalty {
        PenaltyRegime::Fixed { multipliers, .. } => {
            let exp = experiment(config)?;
            let shape = shape(config, &exp)?;
            let report =
                exp.run_with_shape(ExperimentKind::PenaltySweep, &shape, multipliers, false)?;
            out.report(&report)
        }
        PenaltyRegime::Calibration { .. } => calibrate(config, out),
    }
}

fn check(config: &ExperimentConfig, out: &Output) -> Result<(), CliError> {
    let report = check_assumptions(&config.collection()?, &config.truth, config.n);
    out.json("assumptions.json", &report)
}

fn fit(
    cli: &Cli,
    sample_path: &Path,
    cells: Option<usize>,
    breakpoints: Option<Vec<f64>>,
    degree: usize,
) -> Result<(), CliError> {
    let bytes = fs::read(sample_path)
        .map_err(|e| CliError::Config(format!("cannot read {}: {e}", sample_path.display())))?;
    let sample = Sample::read_csv(bytes.as_slice())
        .map_err(|e| CliError::Config(format!("{}: {e}", sample_path.display())))?;
    let model = match (cells, breakpoints) {
        (_, Some(b)) => PartitionModel::new(b, degree),
        (Some(k), None) => PartitionModel::regular(k, degree),
        (None, None) => unreachable!("clap requires --cells or --breakpoints"),
    }
    .map_err(|e| CliError::Config(e.to_string()))?;
    let fitted = fit_least_squares(&model, &sample)?;
    let cells: Vec<Value> = (0..model.cells())
        .map(|c| {
            let (left, right) = model.cell_bounds(c);
            json!({
                "cell": c,
                "left": left,
                "right": right,
                "legendre_coefficients": fitted.legendre_coefficients(c),
                "orthonormal_coefficients": fitted.cell_coefficients(c),
            })
        })
        .collect();
    let result = json!({
        "model": model,
        "dimension": model.dimension(),
        "n": sample.len(),
        "empirical_risk": empirical_risk(&fitted, &sample)?,
        "cells": cells,
    });
    let provenance = json!({
        "command": "fit",
        "model": model,
        "sample_sha256": hex::encode(Sha256::digest(&bytes)),
    });
    let hash = hex::encode(Sha256::digest(provenance.to_string()));
    let out = Output::new(
        cli.out.clone().unwrap_or_else(|| PathBuf::from(".")),
        hash,
        None,
    )?;
    out.json("fit.json", &result)
}

fn execute(cli: &Cli) -> Result<(), CliError> {
    if let Command::Fit {
        sample,
        cells,
        breakpoints,
        degree,
    } = &cli.command
    {
        return fit(cli, sample, *cells, breakpoints.clone(), *degree);
    }
    let config = load_config(cli)?;
    let out = output_for(cli, &config)?;
    match &cli.command {
        Command::Run => run(&config, &out),
        Command::Path => {
            let exp = experiment(&config)?;
            let shape = shape(&config, &exp)?;
            write_path(&out, &exp, &shape)
        }
        Command::Calibrate => calibrate(&config, &out),
        Command::Theorem1 { .. } => {
            out.report(&experiment(&config)?.theorem1(config.theory.c_under)?)
        }
        Command::Theorem2 { .. } => {
            out.report(&experiment(&config)?.theorem2(config.theory.c_over)?)
        }
        Command::Minpen => {
            let exp = experiment(&config)?;
            let est = exp.min_penalty()?;
            out.csv("minpen.csv", |w| est.write_csv(w))
        }
        Command::Check => check(&config, &out),
        Command::Fit { .. } => unreachable!(),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.threads {
        Some(0) => Err(CliError::Config("--threads must be positive".into())),
        Some(t) => match rayon::ThreadPoolBuilder::new().num_threads(t).build() {
            Ok(pool) => pool.install(|| execute(&cli)),
            Err(e) => Err(CliError::Config(format!("cannot build thread pool: {e}"))),
        },
        None => execute(&cli),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let record =
                json!({ "error": e.kind(), "exit_code": e.exit_code(), "message": e.to_string() });
            eprintln!("{record}");
            ExitCode::from(e.exit_code())
        }
    }
}
