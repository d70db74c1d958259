use std::fs::File;
use std::io::{self, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use pothole_core::detection::SweepConfig;
use pothole_core::maintenance::{priority_report, write_report_csv};
use pothole_core::{
    preprocess, route, simulate, Error, NodeId, Registry, Scenario, SimConfig, StreetNetwork,
};

/// Pothole detection, avoidance and maintenance simulator.
#[derive(Debug, Parser)]
#[command(name = "potholes", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Run a scenario and write trace, routes, registry and reports.
    Simulate {
        #[arg(long)]
        network: PathBuf,
        #[arg(long)]
        scenario: PathBuf,
        #[arg(long)]
        out_dir: PathBuf,
        /// Overrides the scenario seed.
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long, default_value_t = 10.0)]
        threshold_mm: f64,
        #[arg(long, default_value_t = 0.5)]
        cell_m: f64,
    },
    /// Print the minimum-damage route between two nodes.
    Route {
        #[arg(long)]
        network: PathBuf,
        /// Registry CSV; without it every arc weighs 0.
        #[arg(long)]
        registry: Option<PathBuf>,
        #[arg(long)]
        source: String,
        #[arg(long)]
        dest: String,
    },
    /// Print the repair priority report at a timestamp.
    Report {
        #[arg(long)]
        registry: PathBuf,
        #[arg(long)]
        events: PathBuf,
        #[arg(long)]
        at: u64,
    },
    /// Print the weighted network.
    Preprocess {
        #[arg(long)]
        network: PathBuf,
        #[arg(long)]
        registry: Option<PathBuf>,
    },
}

fn load_registry(path: Option<&Path>, net: &StreetNetwork) -> Result<Registry, Error> {
    match path {
        Some(p) => {
            let mut reg = Registry::read_csv(File::open(p)?)?;
            reg.bind(net)?;
            Ok(reg)
        }
        None => Ok(Registry::new(net)),
    }
}

fn run(cmd: Command) -> Result<(), Error> {
    let mut stdout = io::stdout().lock();
    match cmd {
        Command::Simulate {
            network,
            scenario,
            out_dir,
            seed,
            threshold_mm,
            cell_m,
        } => {
            let net = StreetNetwork::load(&network)?;
            let scenario = Scenario::load(&scenario)?;
            let cfg = SimConfig {
                threshold_mm,
                sweep: SweepConfig {
                    cell_m,
                    ..SweepConfig::default()
                },
                seed,
                ..SimConfig::default()
            };
            let out = simulate(&net, &scenario, cfg)?;
            out.write_to(&out_dir)?;
            writeln!(
                stdout,
                "simulated {} ms: {} potholes, {} updates",
                out.duration_ms,
                out.registry().len(),
                out.registry().events().len()
            )?;
        }
        Command::Route {
            network,
            registry,
            source,
            dest,
        } => {
            let net = StreetNetwork::load(&network)?;
            let reg = load_registry(registry.as_deref(), &net)?;
            let wnet = preprocess(&net, &reg)?;
            let r = route(&wnet, &NodeId::from(source), &NodeId::from(dest))?;
            stdout.write_all(r.trace(&wnet).as_bytes())?;
        }
        Command::Report {
            registry,
            events,
            at,
        } => {
            let mut reg = Registry::read_csv(File::open(registry)?)?;
            reg.read_events_csv(File::open(events)?)?;
            write_report_csv(&priority_report(&reg, at), &mut stdout)?;
        }
        Command::Preprocess { network, registry } => {
            let net = StreetNetwork::load(&network)?;
            let reg = load_registry(registry.as_deref(), &net)?;
            preprocess(&net, &reg)?.write_csv(&mut stdout)?;
        }
    }
    stdout.flush()?;
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(err) => {
            let _ = err.print();
            return if err.use_stderr() {
                ExitCode::from(1)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err @ Error::Unreachable { .. }) => {
            eprintln!("error: {err}");
            ExitCode::from(2)
        }
        Err(err) => {
            eprintln!("error: {err}");
            ExitCode::from(1)
        }
    }
}
