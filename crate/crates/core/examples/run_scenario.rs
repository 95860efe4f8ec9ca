//! Run a bundled scenario headless and print its summary.
//! Usage: run_scenario [corridor|dead_end|boxes|pocket|open_20m] [seed]

use std::path::Path;

use funnel_planner::sim::{scenario_library, Scenario, Simulation};

fn main() -> anyhow::Result<()> {
    let args: Vec<String> = std::env::args().skip(1).collect();
    let name = args.first().map(String::as_str).unwrap_or("corridor");
    let path = Path::new(env!("CARGO_MANIFEST_DIR")).join(format!("scenarios/{name}.json"));
    let mut sc = Scenario::load(&path)?;
    if let Some(seed) = args.get(1) {
        sc.seed = seed.parse()?;
    }
    let lib = scenario_library(&sc)?;
    let log = Simulation::new(sc, &lib)?.run_to_end()?;
    let s = log.summary();
    println!("epochs {} collisions {} min clearance {:.3} m", s.epochs, s.collision_epochs, s.min_clearance);
    println!("loop epochs {} outside the loop {}", s.loop_epochs, s.containment_violations);
    println!("cycles {} new plans {} mean {:.2} ms", s.cycles, s.new_plans, s.mean_cycle_ms);
    let st = s.mean_stage_ms;
    println!(
        "stages: global {:.2} local {:.2} frs {:.2} search {:.2} closure {:.2} ms",
        st.global, st.local, st.frs, st.search, st.closure
    );
    Ok(())
}
