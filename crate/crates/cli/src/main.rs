//! `wigig`: build radio maps, learn exemplars, and run simulations or sweeps.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use log::{info, warn};

use wigig_coord::harness::{self, parse_config, ScenarioConfig, SweepSpec};
use wigig_coord::learning::build_exemplars;
use wigig_coord::macsim::{Mode, RunOptions};
use wigig_coord::radiomap::Database;

#[derive(Parser)]
#[command(name = "wigig", version, about = "Coordinated multi-AP 60 GHz WLAN simulator")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Radio-map database operations.
    Radiomap {
        #[command(subcommand)]
        action: RadiomapAction,
    },
    /// Cluster the database fingerprints and store the exemplars in it.
    Learn {
        #[arg(long)]
        db: PathBuf,
        /// Config supplying clustering parameters (defaults otherwise).
        #[arg(long)]
        config: Option<PathBuf>,
    },
    /// Run one simulation and print its metrics as JSON.
    Simulate {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        db: PathBuf,
        #[arg(long)]
        mode: Option<Mode>,
        #[arg(long, default_value_t = 1)]
        seed: u64,
        /// Comma-separated AP ids to activate (all configured APs by default).
        #[arg(long, value_delimiter = ',')]
        aps: Option<Vec<u16>>,
        /// Write the per-event trace here.
        #[arg(long)]
        trace: Option<PathBuf>,
    },
    /// Run the AP-count sweep over both modes and write a CSV table.
    Sweep {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        db: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Subcommand)]
enum RadiomapAction {
    /// Survey the configured LP grid from every configured AP.
    Build {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
}

fn load_config(path: &Path) -> wigig_coord::Result<ScenarioConfig> {
    let (config, warnings) = parse_config(path)?;
    for w in warnings {
        warn!("{}: {w}", path.display());
    }
    Ok(config)
}

fn load_db(path: &Path) -> wigig_coord::Result<Database> {
    Ok(Database::load(path)?)
}

fn execute(cli: Cli) -> wigig_coord::Result<()> {
    match cli.command {
        Command::Radiomap {
            action: RadiomapAction::Build { config, out },
        } => {
            let config = load_config(&config)?;
            let map = config.build_radio_map()?;
            info!("surveyed {} LPs from {} APs", map.num_lps(), map.num_aps());
            Database::new(map).save(&out)?;
        }
        Command::Learn { db, config } => {
            let params = match config {
                Some(path) => load_config(&path)?.affinity,
                None => ScenarioConfig::default().affinity,
            };
            let mut database = load_db(&db)?;
            let exemplars = build_exemplars(&database.map, &params)?;
            let count: usize = exemplars
                .aps
                .iter()
                .flat_map(|a| &a.groups)
                .map(|g| g.clusters.len())
                .sum();
            info!("learned {count} exemplars");
            database.exemplars = Some(exemplars);
            database.save(&db)?;
        }
        Command::Simulate {
            config,
            db,
            mode,
            seed,
            aps,
            trace,
        } => {
            let config = load_config(&config)?;
            let database = load_db(&db)?;
            let ids = aps.unwrap_or_else(|| config.ap_ids());
            let mode = mode.unwrap_or(config.mode);
            let options = RunOptions {
                trace: trace.is_some(),
                ..RunOptions::default()
            };
            let outcome = harness::simulate(&config, &database, &ids, mode, seed, options)?;
            if let (Some(path), Some(lines)) = (trace, outcome.trace.as_ref()) {
                let mut text = lines.join("\n");
                text.push('\n');
                std::fs::write(path, text)?;
            }
            let report = harness::compute_metrics(&outcome.stats);
            println!("{}", serde_json::to_string_pretty(&report).expect("report serializes"));
        }
        Command::Sweep { config, db, out } => {
            let config = load_config(&config)?;
            let database = load_db(&db)?;
            let spec = SweepSpec::from_config(&config);
            let rows = harness::run_sweep(
                &config,
                &database,
                &spec,
                &[Mode::Coordinated, Mode::Uncoordinated],
                &config.seeds,
            )?;
            harness::emit_csv(&rows, &out)?;
            info!("wrote {} rows to {}", rows.len(), out.display());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match execute(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let msg = serde_json::json!({ "error": e.to_string() });
            eprintln!("{msg}");
            ExitCode::FAILURE
        }
    }
}
