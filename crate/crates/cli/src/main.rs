use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand, ValueEnum};
use swarmeq::experiments::{
    emit, run_experiment, ExperimentConfig, ExperimentKind, OutputFormat, ResultRecord,
};

#[derive(Parser)]
#[command(
    name = "swarmeq",
    version,
    about = "Equilibria of one-dimensional aggregation-diffusion swarms"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Solve a single problem described by `--set` overrides.
    Solve(RunArgs),
    /// Run a named experiment.
    Experiment {
        /// kp2, kpsmall, kplarge, multistate, gamma-energy, effdim or custom
        name: String,
        #[command(flatten)]
        args: RunArgs,
    },
    /// List experiments and the override keys each one accepts.
    List,
}

#[derive(clap::Args)]
struct RunArgs {
    /// Parameter override, repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
    /// Where to write the records; a summary is printed either way.
    #[arg(long, short)]
    output: Option<PathBuf>,
    #[arg(long, value_enum, default_value_t = Format::Csv)]
    format: Format,
    /// Random seed for Monte Carlo experiments.
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Clone, Copy, ValueEnum)]
enum Format {
    Csv,
    Json,
}

impl From<Format> for OutputFormat {
    fn from(f: Format) -> Self {
        match f {
            Format::Csv => OutputFormat::Csv,
            Format::Json => OutputFormat::Json,
        }
    }
}

fn run(kind: ExperimentKind, args: &RunArgs) -> Result<bool> {
    let mut cfg = ExperimentConfig::new(kind);
    for pair in &args.set {
        cfg.set_pair(pair)?;
    }
    if let Some(seed) = args.seed {
        if !kind.allowed_keys().contains(&"seed") {
            bail!("experiment `{kind}` is deterministic and takes no seed");
        }
        cfg.set("seed", &seed.to_string())?;
    }
    let records = run_experiment(&cfg)?;
    for r in &records {
        println!("{}", summary(r));
    }
    if let Some(path) = &args.output {
        emit(&records, args.format.into(), path)
            .with_context(|| format!("writing {}", path.display()))?;
    }
    Ok(records.iter().all(ResultRecord::ok))
}

fn summary(r: &ResultRecord) -> String {
    let status = match (r.converged, r.tolerated) {
        (true, _) => "ok",
        (false, true) => "tolerated",
        (false, false) => "FAILED",
    };
    let mut line = format!("{:<12} {:<28} {:<9}", r.experiment, r.label, status);
    for key in [
        "iterations",
        "residual",
        "energy_total",
        "lambda_inf",
        "e0",
        "aggregates",
        "f_d",
        "l1_exact",
        "l1_pinf",
    ] {
        if let Some(v) = r.get(key) {
            line.push_str(&format!(" {key}={v:.6e}"));
        }
    }
    if !r.flags.is_empty() {
        line.push_str(&format!(" flags={}", r.flags.join(",")));
    }
    if let Some(e) = &r.error {
        line.push_str(&format!(" error=\"{e}\""));
    }
    line
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let outcome = match &cli.command {
        Command::List => {
            for k in ExperimentKind::ALL {
                println!("{:<13} {}", k.name(), k.allowed_keys().join(" "));
            }
            Ok(true)
        }
        Command::Solve(args) => run(ExperimentKind::Custom, args),
        Command::Experiment { name, args } => name
            .parse::<ExperimentKind>()
            .map_err(anyhow::Error::from)
            .and_then(|k| run(k, args)),
    };
    match outcome {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}
