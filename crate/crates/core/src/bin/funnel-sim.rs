use std::path::PathBuf;

use anyhow::Context;
use clap::{Parser, Subcommand};
use serde::Deserialize;

use funnel_planner::dynamics::{Bicycle, PdTracker};
use funnel_planner::funnel::{standard_library, CalibrationConfig, DEFAULT_DISTURBANCE};
use funnel_planner::reachability::DisturbanceModel;
use funnel_planner::sim::{emit_plots, run_served, scenario_library, RunLog, Scenario, Simulation, StreamServer};

#[derive(Parser)]
#[command(name = "funnel-sim", about = "Simulate the funnel-loop planner")]
struct Cli {
    #[command(subcommand)]
    command: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Run a scenario and write its log and figures.
    Run {
        #[arg(long)]
        scenario: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Skip the figures.
        #[arg(long)]
        headless: bool,
        /// Stream frames over WebSocket on this port, paced to real time.
        #[arg(long)]
        serve: Option<u16>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        plan_hz: Option<f64>,
    },
    /// Calibrate a funnel library.
    Calibrate {
        /// JSON with optional `model`, `controller`, `calibration`, `disturbance`.
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Render figures from a run log.
    Plot {
        #[arg(long)]
        log: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Deserialize, Default)]
#[serde(default)]
struct CalibrateFile {
    model: Bicycle,
    controller: PdTracker,
    calibration: CalibrationConfig,
    disturbance: Option<[f64; 3]>,
}

fn main() -> anyhow::Result<()> {
    match Cli::parse().command {
        Cmd::Run {
            scenario,
            out,
            headless,
            serve,
            seed,
            plan_hz,
        } => {
            let mut sc = Scenario::load(&scenario)?;
            if let Some(s) = seed {
                sc.seed = s;
            }
            if let Some(h) = plan_hz {
                sc.plan_hz = h;
            }
            let library = scenario_library(&sc)?;
            let sim = Simulation::new(sc, &library)?;
            let log = match serve {
                Some(port) => {
                    let server = StreamServer::bind(port)?;
                    eprintln!("streaming on ws://{}", server.local_addr());
                    run_served(sim, &server, true)?
                }
                None => sim.run_to_end()?,
            };
            std::fs::create_dir_all(&out).with_context(|| out.display().to_string())?;
            log.save(&out.join("run.ndjson"))?;
            let s = log.summary();
            println!(
                "epochs {} collisions {} min clearance {:.3} m loop epochs {} containment violations {}",
                s.epochs, s.collision_epochs, s.min_clearance, s.loop_epochs, s.containment_violations
            );
            println!("cycles {} new plans {} mean cycle {:.2} ms", s.cycles, s.new_plans, s.mean_cycle_ms);
            if !headless {
                for f in emit_plots(&log, &out)? {
                    println!("wrote {}", f.display());
                }
            }
        }
        Cmd::Calibrate { model, out } => {
            let text = std::fs::read_to_string(&model).with_context(|| model.display().to_string())?;
            let cfg: CalibrateFile = serde_json::from_str(&text)?;
            let w = DisturbanceModel::symmetric_box(cfg.disturbance.unwrap_or(DEFAULT_DISTURBANCE))?;
            let lib = standard_library(&cfg.model, &cfg.controller, &w, &cfg.calibration)?;
            lib.save(&out)?;
            println!("wrote {} funnels to {}", lib.len(), out.display());
        }
        Cmd::Plot { log, out } => {
            let log = RunLog::load(&log)?;
            for f in emit_plots(&log, &out)? {
                println!("wrote {}", f.display());
            }
        }
    }
    Ok(())
}
