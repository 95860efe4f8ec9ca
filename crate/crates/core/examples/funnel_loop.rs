//! Search a loop of funnels from a root pose, close it exactly with the
//! translation QP, and re-check the closed loop.

use std::f64::consts::PI;
use std::path::Path;

use funnel_planner::funnel::FunnelLibrary;
use funnel_planner::loop_closure::{close_loop, default_weights, funnel_area, verify_closed_loop};
use funnel_planner::loop_search::{find_loop_with, FunnelNode, LoopSearchConfig, PreparedLibrary};
use funnel_planner::world::{CellState, OccupancyGrid};

fn main() -> anyhow::Result<()> {
    let lib = FunnelLibrary::load(&Path::new(env!("CARGO_MANIFEST_DIR")).join("assets/funnel_library.json"))?;
    let prepared = PreparedLibrary::new(&lib);
    let mut grid = OccupancyGrid::new(100, 100, 0.1, [0.0, 0.0], CellState::Free);
    grid.set_region([6.5, 4.0], [7.0, 9.0], CellState::Occupied);
    grid.set_region([0.5, 2.0], [1.0, 8.0], CellState::Occupied);

    let normals = &lib.funnels[0].entrance;
    let worst = vec![0.03; normals.n_rows()];
    let b_frs: Vec<f64> = normals.offsets().iter().zip(&worst).map(|(b, w)| b - w).collect();
    let end = [4.0, 5.0];
    let heading = PI / 2.0;
    let root = FunnelNode::from_terminal_set(end, normals, &worst, [heading - 0.05, heading + 0.05]);

    let cfg = LoopSearchConfig {
        heuristic_weight: 10.0,
        ..LoopSearchConfig::default()
    };
    let (candidate, solution) = find_loop_with(&root, &prepared, &grid, &cfg, |c| {
        let areas = c.funnels.iter().map(|f| funnel_area(&grid, f, 2.0)).collect::<Result<Vec<_>, _>>().ok()?;
        let (w0, w) = default_weights(c.funnels.len());
        close_loop(&c.funnels, &areas, &b_frs, end, w0, &w).ok()
    })?;
    println!(
        "{} funnels after {} expansions, gap before closure {:.3} m",
        candidate.funnels.len(),
        candidate.expanded,
        candidate.closure_gap
    );
    for (f, d) in candidate.funnels.iter().zip(&solution.deltas) {
        println!("  funnel {:2} shifted by ({:+.4}, {:+.4})", f.id, d[0], d[1]);
    }
    let closed = solution.apply(&candidate.funnels);
    let violations = verify_closed_loop(&closed, &grid, &b_frs, end);
    println!("objective {:.3e}, violations {:?}", solution.objective, violations);
    Ok(())
}
