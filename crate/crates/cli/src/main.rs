//! `sim`: scenario runner and report tool for the fogsim simulator.
//!
//! `sim run` executes one scenario and writes messages.csv, summary.json,
//! cloud.jsonl and effective_config.json into the output directory.
//! `sim report` juxtaposes the summaries of several finished runs.

use std::path::PathBuf;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand};

use fogsim_core::kpi::OutputFormats;
use fogsim_core::report::{build_report, write_report};
use fogsim_core::scenario::parse_config;
use fogsim_core::world::run_scenario;

#[derive(Parser)]
#[command(
    name = "sim",
    version,
    about = "Multi-RAT V2X fog-area network simulator"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one scenario and write its KPI artifacts.
    Run {
        /// Scenario JSON file.
        #[arg(long)]
        scenario: PathBuf,
        /// RNG seed; overrides the config and the SIM_SEED variable.
        #[arg(long)]
        seed: Option<u64>,
        /// Simulated duration in seconds; overrides the config.
        #[arg(long)]
        duration: Option<f64>,
        /// Output directory.
        #[arg(long, default_value = "out")]
        out: PathBuf,
        /// Comma-separated output formats: csv, json.
        #[arg(long, default_value = "csv,json", value_parser = parse_formats)]
        format: OutputFormats,
        /// Force BSM-assisted mmWave beamforming on or off.
        #[arg(long, value_parser = parse_on_off)]
        assist: Option<bool>,
    },
    /// Compare the summaries of one or more finished runs.
    Report {
        /// Run directories holding summary.json, baseline first.
        #[arg(long = "in", required = true, num_args = 1..)]
        inputs: Vec<PathBuf>,
        /// Report file to write.
        #[arg(long, default_value = "report.json")]
        out: PathBuf,
        /// Also emit SVG bar charts next to the report.
        #[arg(long)]
        svg: bool,
    },
}

fn parse_formats(s: &str) -> Result<OutputFormats, String> {
    let mut formats = OutputFormats {
        csv: false,
        json: false,
    };
    for part in s.split(',').map(str::trim).filter(|p| !p.is_empty()) {
        match part {
            "csv" => formats.csv = true,
            "json" => formats.json = true,
            other => return Err(format!("unknown format `{other}` (expected csv, json)")),
        }
    }
    if !formats.csv && !formats.json {
        return Err("at least one of csv, json is required".into());
    }
    Ok(formats)
}

fn parse_on_off(s: &str) -> Result<bool, String> {
    match s {
        "on" => Ok(true),
        "off" => Ok(false),
        other => Err(format!("expected `on` or `off`, got `{other}`")),
    }
}

fn main() -> Result<()> {
    let cli = Cli::parse();
    match cli.command {
        Command::Run {
            scenario,
            seed,
            duration,
            out,
            format,
            assist,
        } => {
            let mut config = parse_config(&scenario)
                .with_context(|| format!("loading scenario `{}`", scenario.display()))?;
            match seed {
                Some(s) => config.seed = s,
                None => {
                    if let Ok(env_seed) = std::env::var("SIM_SEED") {
                        config.seed = env_seed
                            .parse()
                            .with_context(|| format!("SIM_SEED `{env_seed}` is not a u64"))?;
                    }
                }
            }
            if let Some(d) = duration {
                if d <= 0.0 || d.is_nan() {
                    bail!("--duration must be positive, got {d}");
                }
                config.duration_s = d;
            }
            if let Some(a) = assist {
                config.policy.assist = a;
            }

            let output = run_scenario(&config, &out, format)
                .with_context(|| format!("running scenario `{}`", scenario.display()))?;
            let run = &output.summary.run;
            println!(
                "run complete: {} events, {} messages ({} delivered, {} erased, {} no-coverage, {} policy-dropped, {} deferred), conservation {}",
                output.events_processed,
                run.sent,
                run.delivered,
                run.erased,
                run.dropped_no_coverage,
                run.dropped_policy,
                run.deferred,
                if run.conservation_ok { "ok" } else { "VIOLATED" },
            );
            for path in &output.written {
                println!("wrote {}", path.display());
            }
            Ok(())
        }
        Command::Report { inputs, out, svg } => {
            let report = build_report(&inputs).context("building report")?;
            let written = write_report(&report, &out, svg).context("writing report")?;
            for path in &written {
                println!("wrote {}", path.display());
            }
            Ok(())
        }
    }
}
