//! Stream the boxes scenario over WebSocket in real time.
//! Connect a viewer to the printed address; it may send
//! `{"set_goal":{"x":..,"y":..}}` or `{"toggle_region":{"x0":..,"y0":..,"x1":..,"y1":..}}`.

use std::path::Path;

use funnel_planner::sim::{run_served, scenario_library, Scenario, Simulation, StreamServer};

fn main() -> anyhow::Result<()> {
    let port: u16 = std::env::args().nth(1).map(|p| p.parse()).transpose()?.unwrap_or(8765);
    let sc = Scenario::load(&Path::new(env!("CARGO_MANIFEST_DIR")).join("scenarios/boxes.json"))?;
    let lib = scenario_library(&sc)?;
    let sim = Simulation::new(sc, &lib)?;
    let server = StreamServer::bind(port)?;
    println!("ws://{}", server.local_addr());
    let log = run_served(sim, &server, true)?;
    println!("done after {} epochs", log.summary().epochs);
    Ok(())
}
