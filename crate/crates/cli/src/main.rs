use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use scenforge_core::pipeline::{Pipeline, PipelineConfig, PipelineError, Stage};

/// Build a geographically grounded driving scenario package from one config file.
#[derive(Parser, Debug)]
#[command(name = "scenforge", version)]
struct Cli {
    /// Pipeline configuration (JSON).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Master seed; overrides the config.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output package directory; overrides the config.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Use only local inputs: OSM file, speed feed, cached images and recorded model responses.
    #[arg(long, global = true)]
    offline: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug, Clone, Copy)]
enum Command {
    /// Retrieve the OSM extract around the scenario coordinate.
    FetchMap,
    /// Build the lane-level network and write JSON, SUMO and OpenDRIVE files.
    Convert,
    /// Derive traffic demand and the spawn schedule.
    Demand,
    /// Simulate traffic with the configured adversities.
    Simulate,
    /// Render HDMap frame sequences.
    Render,
    /// Fetch street-level imagery and compose per-view prompts.
    Prompt,
    /// Run every stage in order.
    Run,
}

fn pipeline(cli: &Cli) -> Result<Pipeline, PipelineError> {
    let path = cli.config.as_ref().ok_or_else(|| PipelineError::Config("--config is required".into()))?;
    let mut config = PipelineConfig::load(path)?;
    if let Some(s) = cli.seed {
        config.seed = s;
    }
    let out = cli.out.clone().or_else(|| config.output_dir.clone()).unwrap_or_else(|| PathBuf::from("out"));
    Pipeline::new(config, out, cli.offline)
}

fn execute(cli: &Cli) -> Result<(), PipelineError> {
    let p = pipeline(cli)?;
    std::fs::create_dir_all(&p.out).map_err(|e| PipelineError::Config(format!("{}: {e}", p.out.display())))?;
    let stage = match cli.command {
        Command::FetchMap => Stage::FetchMap,
        Command::Convert => Stage::Convert,
        Command::Demand => Stage::Demand,
        Command::Simulate => Stage::Simulate,
        Command::Render => Stage::Render,
        Command::Prompt => Stage::Prompt,
        Command::Run => {
            let m = p.run()?;
            println!("wrote {} files to {}", m.files.len(), p.out.display());
            return Ok(());
        }
    };
    p.run_stage(stage)?;
    println!("{} done", stage.name());
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match execute(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
