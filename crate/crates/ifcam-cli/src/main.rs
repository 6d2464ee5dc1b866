//! `ifcam` — one binary driving the toolkit: weight compression, accelerator
//! simulation, the predict-then-focus pipeline, lensless reconstruction, and
//! a combined headline report.
//!
//! Exit codes: 0 success, 2 I/O, 3 validation, 4 internal invariant
//! violation. Errors are emitted as one-line JSON on stderr. Output is never
//! colorized, so NO_COLOR is honored trivially.

mod commands;
mod config;
mod error;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};

use commands::CommandContext;
use config::ExperimentConfig;
use error::CliError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum OutputFormat {
    Json,
    Csv,
}

#[derive(Parser)]
#[command(name = "ifcam", version, about = "Lensless eye-tracking camera toolkit")]
struct Cli {
    /// Experiment configuration (JSON).
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Overrides the config's output_dir.
    #[arg(long, global = true)]
    output_dir: Option<PathBuf>,

    /// Overrides the config's seed.
    #[arg(long, global = true)]
    seed: Option<u64>,

    /// Format of the stdout summary (files are always written in their
    /// canonical formats).
    #[arg(long, global = true, value_enum, default_value_t = OutputFormat::Json)]
    format: OutputFormat,

    #[arg(long, global = true, default_value_t = false)]
    verbose: bool,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Compress the configured network and write bitstreams plus a report.
    Compress,
    /// Simulate the accelerator over the configured network.
    Simulate,
    /// Run the predict-then-focus pipeline over a synthetic stream.
    Pipeline,
    /// Capture and reconstruct seeded scenes through the coded mask.
    Reconstruct,
    /// Run everything and write a combined summary.
    Report,
    /// Write the seeded dense weights as per-layer IFCM files.
    ExportWeights,
}

fn flatten_json(prefix: &str, v: &serde_json::Value, rows: &mut Vec<(String, String)>) {
    match v {
        serde_json::Value::Object(map) => {
            for (k, val) in map {
                let key = if prefix.is_empty() {
                    k.clone()
                } else {
                    format!("{prefix}.{k}")
                };
                flatten_json(&key, val, rows);
            }
        }
        serde_json::Value::Array(items) => {
            for (i, val) in items.iter().enumerate() {
                flatten_json(&format!("{prefix}[{i}]"), val, rows);
            }
        }
        other => rows.push((prefix.to_string(), other.to_string())),
    }
}

fn run(cli: &Cli) -> Result<String, CliError> {
    let config_path = cli
        .config
        .as_ref()
        .ok_or_else(|| CliError::validation("--config PATH is required".into()))?;
    let (mut config, base_dir) = ExperimentConfig::load(config_path)?;
    if let Some(seed) = cli.seed {
        config.seed = seed;
    }
    if let Some(dir) = &cli.output_dir {
        config.output_dir = Some(dir.clone());
    }
    let output_dir = match &config.output_dir {
        Some(d) if d.is_absolute() => d.clone(),
        Some(d) => base_dir.join(d),
        None => base_dir.join("out"),
    };
    let ctx = CommandContext {
        config,
        base_dir,
        output_dir,
        verbose: cli.verbose,
    };
    let json = match cli.command {
        Command::Compress => commands::cmd_compress(&ctx)?,
        Command::Simulate => commands::cmd_simulate(&ctx)?,
        Command::Pipeline => commands::cmd_pipeline(&ctx)?,
        Command::Reconstruct => commands::cmd_reconstruct(&ctx)?,
        Command::Report => commands::cmd_report(&ctx)?,
        Command::ExportWeights => commands::cmd_export_weights(&ctx)?,
    };
    Ok(match cli.format {
        OutputFormat::Json => json,
        OutputFormat::Csv => {
            let value: serde_json::Value =
                serde_json::from_str(&json).expect("command output is JSON");
            let mut rows = Vec::new();
            flatten_json("", &value, &mut rows);
            let mut out = String::from("key,value\n");
            for (k, v) in rows {
                out.push_str(&format!("{k},{v}\n"));
            }
            out
        }
    })
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(output) => {
            println!("{output}");
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("{}", e.to_json());
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
