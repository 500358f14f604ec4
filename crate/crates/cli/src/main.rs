use std::path::PathBuf;

use anyhow::{Context, Result};
use clap::{Parser, Subcommand};
use ecpsim::session::Session;
use ecpsim_cli::commands;
use ecpsim_cli::service::{serve, ServiceConfig, SimHandle, DEFAULT_FRAME_HZ, DEFAULT_PORT};
use tokio::net::TcpListener;

#[derive(Parser)]
#[command(name = "ecpsim", version, about = "Contact simulation, pushing and avoidance")]
struct Cli {
    #[command(subcommand)]
    command: Verb,
}

#[derive(Subcommand)]
enum Verb {
    /// Run a scene offline and optionally write the trajectory log.
    Simulate {
        scene: PathBuf,
        /// Seconds of simulated time; defaults to the scene's duration.
        #[arg(long)]
        duration: Option<f64>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Push the scene's planner object to a planar goal pose.
    Push {
        scene: PathBuf,
        #[arg(long, num_args = 3, value_names = ["X", "Y", "YAW"], allow_negative_numbers = true)]
        goal: Vec<f64>,
        #[arg(long)]
        duration: Option<f64>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run a robot scene and report obstacle clearance.
    AvoidDemo {
        scene: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Serve a live session over websockets.
    Serve {
        scene: PathBuf,
        #[arg(long, env = "ECPSIM_PORT", default_value_t = DEFAULT_PORT)]
        port: u16,
        /// Simulated seconds per wall-clock second; 0 runs unpaced.
        #[arg(long, default_value_t = 1.0)]
        rt_factor: f64,
        #[arg(long, default_value_t = DEFAULT_FRAME_HZ)]
        frame_hz: f64,
        /// On exit, write the applied control schedule here for `replay`.
        #[arg(long)]
        record: Option<PathBuf>,
        /// On exit, write the trajectory log here.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Re-run a recorded service session offline.
    Replay {
        scene: PathBuf,
        record: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Write selected log columns as CSV.
    Export {
        log: PathBuf,
        /// Comma-separated column names, or `all`.
        #[arg(long, default_value = "all")]
        columns: String,
        /// Body for the CoM columns; defaults to the first body.
        #[arg(long)]
        body: Option<String>,
        /// Contact pair for impulse and ECP columns; defaults to `ground/<body>`.
        #[arg(long)]
        pair: Option<String>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn main() -> Result<()> {
    match Cli::parse().command {
        Verb::Simulate { scene, duration, out } => print!("{}", commands::simulate(&scene, duration, out.as_deref())?),
        Verb::Push {
            scene,
            goal,
            duration,
            out,
        } => print!("{}", commands::push(&scene, [goal[0], goal[1], goal[2]], duration, out.as_deref())?),
        Verb::AvoidDemo { scene, out } => print!("{}", commands::avoid_demo(&scene, out.as_deref())?),
        Verb::Replay { scene, record, out } => print!("{}", commands::replay(&scene, &record, out.as_deref())?),
        Verb::Export {
            log,
            columns,
            body,
            pair,
            out,
        } => {
            let csv = commands::export(&log, &columns, body.as_deref(), pair.as_deref())?;
            match out {
                Some(path) => std::fs::write(&path, csv).with_context(|| format!("writing {}", path.display()))?,
                None => print!("{csv}"),
            }
        }
        Verb::Serve {
            scene,
            port,
            rt_factor,
            frame_hz,
            record,
            out,
        } => {
            let spec = commands::load(&scene)?;
            let config = ServiceConfig {
                rt_factor,
                frame_hz,
                keep_records: out.is_some(),
            };
            let sim = SimHandle::spawn(Session::new(spec)?, config);
            let runtime = tokio::runtime::Runtime::new()?;
            runtime.block_on(async {
                let listener = TcpListener::bind(("0.0.0.0", port)).await?;
                eprintln!("serving {} on ws://{}", scene.display(), listener.local_addr()?);
                tokio::select! {
                    r = serve(listener, sim.client()) => r,
                    _ = tokio::signal::ctrl_c() => Ok(()),
                }
            })?;
            let outcome = sim.shutdown()?;
            if let Some(path) = record {
                std::fs::write(&path, serde_json::to_string_pretty(&outcome.record)?)?;
                eprintln!("session record written to {}", path.display());
            }
            if let Some(path) = out {
                outcome.log.save(&path)?;
                eprintln!("log written to {}", path.display());
            }
        }
    }
    Ok(())
}
