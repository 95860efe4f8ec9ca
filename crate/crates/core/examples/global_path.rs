//! Jump point search across the corridor scenario map.

use std::path::Path;

use funnel_planner::global_planner::plan_global;
use funnel_planner::world::OccupancyGrid;

fn main() -> anyhow::Result<()> {
    let map = Path::new(env!("CARGO_MANIFEST_DIR")).join("scenarios/corridor.map");
    let grid = OccupancyGrid::load(&map)?;
    let start = grid.cell_of([3.0, 6.0]);
    let goal = grid.cell_of([27.0, 6.0]);
    let path = plan_global(&grid, start, goal)?;
    println!(
        "{} cells, {} straight + {} diagonal moves, {:.2} m",
        path.cells.len(),
        path.straight,
        path.diagonal,
        path.length
    );
    let pts = path.points(&grid);
    for p in pts.iter().step_by((pts.len() / 10).max(1)) {
        println!("  ({:.2}, {:.2})", p[0], p[1]);
    }
    Ok(())
}
