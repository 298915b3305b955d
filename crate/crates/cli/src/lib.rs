//! Command-line front end: `run`, `verify`, `render`, `list-scenarios`.

pub mod render;

use std::io::Write;
use std::path::PathBuf;

use anyhow::{Context, Result};
use clap::{Parser, Subcommand, ValueEnum};
use doppler_core::runner::{self, OutputFormat, RunOptions};
use doppler_core::scenario;

#[derive(Parser, Debug)]
#[command(
    name = "ldv",
    version,
    about = "Driven-ion Doppler velocimetry simulator"
)]
pub struct Cli {
    /// Increase log verbosity (-v info, -vv debug, -vvv trace).
    #[arg(short, long, action = clap::ArgAction::Count, global = true)]
    pub verbose: u8,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum Format {
    Csv,
    Json,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Simulate a scenario and write its products.
    Run {
        /// Bundled scenario name or path to a scenario TOML file.
        scenario: String,
        /// Override the scenario seed.
        #[arg(long)]
        seed: Option<u64>,
        /// Output directory (default: out/<scenario name>).
        #[arg(long)]
        out: Option<PathBuf>,
        /// Worker threads.
        #[arg(long)]
        jobs: Option<usize>,
        #[arg(long, value_enum, default_value_t = Format::Csv)]
        format: Format,
    },
    /// Evaluate a scenario's expectations.
    Verify {
        scenario: String,
        #[arg(long)]
        seed: Option<u64>,
        /// Only run checks whose name or kind starts with this prefix.
        #[arg(long)]
        only: Option<String>,
        #[arg(long)]
        jobs: Option<usize>,
        /// Report format (`json` prints the report as JSON).
        #[arg(long, value_enum, default_value_t = Format::Csv)]
        format: Format,
    },
    /// Render a product file (CSV or JSON) to a PPM image.
    Render {
        file: PathBuf,
        /// Output image (default: input with a .ppm extension).
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// List bundled scenarios.
    ListScenarios,
}

fn load(name: &str, seed: Option<u64>) -> Result<scenario::Scenario> {
    let mut s = scenario::resolve(name).with_context(|| format!("loading scenario `{name}`"))?;
    if let Some(seed) = seed {
        s.seed = seed;
    }
    Ok(s)
}

/// Executes a parsed command, writing user-facing output to `out`. Returns
/// whether the command succeeded.
pub fn execute(cli: &Cli, out: &mut impl Write) -> Result<bool> {
    match &cli.command {
        Command::Run {
            scenario,
            seed,
            out: dir,
            jobs,
            format,
        } => {
            let s = load(scenario, *seed)?;
            let dir = dir
                .clone()
                .unwrap_or_else(|| PathBuf::from("out").join(&s.name));
            let options = RunOptions {
                jobs: *jobs,
                format: match format {
                    Format::Csv => OutputFormat::Csv,
                    Format::Json => OutputFormat::Json,
                },
            };
            let manifest = runner::run(&s, &dir, &options)?;
            writeln!(out, "{}", dir.join(runner::MANIFEST_FILE).display())?;
            if !manifest.succeeded() {
                writeln!(
                    out,
                    "failed products: {}",
                    manifest.failed_products().join(", ")
                )?;
            }
            Ok(manifest.succeeded())
        }
        Command::Verify {
            scenario,
            seed,
            only,
            jobs,
            format,
        } => {
            let s = load(scenario, *seed)?;
            let report = runner::verify(&s, only.as_deref(), *jobs)?;
            match format {
                Format::Json => writeln!(out, "{}", serde_json::to_string_pretty(&report)?)?,
                Format::Csv => write!(out, "{}", runner::format_report(&report))?,
            }
            Ok(report.passed())
        }
        Command::Render { file, out: image } => {
            let bytes = render::render_file(file)?;
            let image = image.clone().unwrap_or_else(|| file.with_extension("ppm"));
            std::fs::write(&image, bytes)
                .with_context(|| format!("writing {}", image.display()))?;
            writeln!(out, "{}", image.display())?;
            Ok(true)
        }
        Command::ListScenarios => {
            for name in scenario::bundled_names() {
                let s = scenario::load_bundled(name)?;
                writeln!(out, "{name:28} {}", s.description.as_deref().unwrap_or(""))?;
            }
            Ok(true)
        }
    }
}
