use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::Result;
use chrono::NaiveDate;
use clap::{Parser, Subcommand};

use locust_cli::commands;
use locust_cli::config::{Overrides, PipelineConfig};
use locust_cli::exit_code;
use locust_cli::synth::{write_scenario, Scenario, SynthOptions};
use locust_core::curation::BBox;

#[derive(Parser)]
#[command(name = "locust", version, about = "Breeding-ground mapping pipeline")]
struct Cli {
    /// Pipeline configuration (TOML).
    #[arg(long, global = true, default_value = "config.toml")]
    config: PathBuf,
    /// Overrides every seed in the configuration.
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[arg(long, global = true)]
    output_dir: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Ingest presence reports, draw pseudo-absences and assign splits.
    Curate,
    /// Extract point samples from the variable stacks.
    Featurize,
    /// Extract image chips from the image stack.
    Chip,
    /// Train the configured model.
    Train {
        /// Continue from model/state.lckpt when present.
        #[arg(long)]
        resume: bool,
    },
    /// Score every split with a checkpoint.
    Evaluate {
        #[arg(long)]
        checkpoint: Option<PathBuf>,
    },
    /// Write a breeding probability raster for a region and date.
    PredictMap {
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        /// west,east,south,north in degrees.
        #[arg(long, value_parser = parse_bbox)]
        region: Option<BBox>,
        #[arg(long)]
        date: Option<NaiveDate>,
    },
    /// Write a synthetic scenario with its own config.toml.
    Synth {
        #[arg(long, value_enum, default_value = "points")]
        scenario: Scenario,
        #[arg(long)]
        sites: Option<usize>,
        #[arg(long)]
        static_vars: Option<usize>,
        #[arg(long)]
        chip_size: Option<usize>,
        /// Target directory.
        dir: PathBuf,
    },
}

fn parse_bbox(s: &str) -> Result<BBox, String> {
    let v: Vec<f64> = s
        .split(',')
        .map(|p| p.trim().parse::<f64>().map_err(|e| format!("{p:?}: {e}")))
        .collect::<Result<_, _>>()?;
    match v[..] {
        [west, east, south, north] => Ok(BBox { west, east, south, north }),
        _ => Err("expected west,east,south,north".into()),
    }
}

fn run(cli: Cli) -> Result<()> {
    if let Command::Synth { scenario, sites, static_vars, chip_size, dir } = &cli.command {
        let opts = SynthOptions {
            scenario: *scenario,
            sites: *sites,
            static_vars: *static_vars,
            chip_size: *chip_size,
            seed: cli.seed.unwrap_or(0),
        };
        let path = write_scenario(dir, &opts)?;
        println!("wrote {}", path.display());
        return Ok(());
    }
    let ov = Overrides {
        seed: cli.seed,
        output_dir: cli.output_dir.clone(),
    };
    let cfg = PipelineConfig::load(&cli.config, &ov)?;
    match cli.command {
        Command::Curate => commands::print_curation_summary(&commands::curate(&cfg)?),
        Command::Featurize => commands::print_feature_manifest(&commands::featurize(&cfg)?),
        Command::Chip => commands::print_feature_manifest(&commands::chip(&cfg)?),
        Command::Train { resume } => {
            commands::train(&cfg, resume)?;
        }
        Command::Evaluate { checkpoint } => {
            let reports = commands::evaluate(&cfg, checkpoint.as_deref())?;
            commands::print_metrics(&cfg, &reports);
        }
        Command::PredictMap { checkpoint, region, date } => {
            let m = commands::predict_map(&cfg, checkpoint.as_deref(), region, date)?;
            let s = &m.summary;
            println!(
                "{}x{} cells from ({}, {}), {} tiles, {} at or above {}, {} nodata",
                s.rows,
                s.cols,
                s.row0,
                s.col0,
                s.tiles.len(),
                s.breeding_cells,
                s.threshold,
                s.nodata_cells
            );
        }
        Command::Synth { .. } => unreachable!(),
    }
    Ok(())
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e) as u8)
        }
    }
}
