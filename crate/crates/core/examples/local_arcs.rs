//! Pick the arc that best follows a global path past a wall.

use funnel_planner::dynamics::Bicycle;
use funnel_planner::local_planner::{plan_local, LocalPlannerConfig, TrajectoryLibrary};
use funnel_planner::world::{CellState, OccupancyGrid};

fn main() -> anyhow::Result<()> {
    let mut grid = OccupancyGrid::new(60, 60, 0.1, [0.0, 0.0], CellState::Free);
    grid.set_region([2.2, 1.0], [2.5, 3.4], CellState::Occupied);
    let path = [[1.0, 3.0], [2.0, 4.0], [4.0, 4.5]];
    let lib = TrajectoryLibrary::default();
    let plan = plan_local(&lib, &Bicycle::default(), [1.0, 3.0, 0.0], &path, &grid, &LocalPlannerConfig::default())?;
    let end = plan.trajectory.end();
    println!(
        "arc {} (curvature {:+.2}) cost {:.3}, ends at ({:.2}, {:.2}) heading {:.2}",
        plan.primitive, lib.curvatures[plan.primitive], plan.cost, end[0], end[1], end[2]
    );
    Ok(())
}
