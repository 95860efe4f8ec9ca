//! Receding-horizon selection from a fixed library of constant-curvature
//! arcs.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dynamics::Bicycle;
use crate::funnel::constant_input_rollout;
use crate::trajectory::{CarState, Trajectory};
use crate::world::OccupancyGrid;

#[derive(Debug, Clone, Error, PartialEq)]
pub enum LocalPlanError {
    #[error("every primitive leaves free space")]
    NoCandidate,
    #[error("global path is empty")]
    EmptyPath,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryLibrary {
    pub curvatures: Vec<f64>,
    pub speed: f64,
    pub horizon: usize,
}

impl Default for TrajectoryLibrary {
    fn default() -> Self {
        Self {
            curvatures: vec![-1.1, -0.7, -0.35, 0.0, 0.35, 0.7, 1.1],
            speed: 0.5,
            horizon: 100,
        }
    }
}

impl TrajectoryLibrary {
    pub fn len(&self) -> usize {
        self.curvatures.len()
    }

    pub fn is_empty(&self) -> bool {
        self.curvatures.is_empty()
    }

    /// Noiseless rollout of primitive `k` from `start`.
    pub fn rollout(&self, model: &Bicycle, k: usize, start: CarState) -> Trajectory {
        constant_input_rollout(model, start, [self.speed, self.curvatures[k]], self.horizon)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LocalPlannerConfig {
    /// Clearance every rollout position must keep from blocked cells.
    pub tube_radius: f64,
    /// Epoch stride of the tracking cost.
    pub cost_stride: usize,
}

impl Default for LocalPlannerConfig {
    fn default() -> Self {
        Self {
            tube_radius: 0.1,
            cost_stride: 5,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LocalPlan {
    pub trajectory: Trajectory,
    pub primitive: usize,
    pub cost: f64,
}

/// Distance from `p` to the polyline through `path`.
pub fn distance_to_polyline(p: [f64; 2], path: &[[f64; 2]]) -> f64 {
    if path.len() == 1 {
        return (p[0] - path[0][0]).hypot(p[1] - path[0][1]);
    }
    path.windows(2)
        .map(|w| {
            let (a, b) = (w[0], w[1]);
            let ab = [b[0] - a[0], b[1] - a[1]];
            let len2 = ab[0] * ab[0] + ab[1] * ab[1];
            let t = if len2 > 0.0 {
                (((p[0] - a[0]) * ab[0] + (p[1] - a[1]) * ab[1]) / len2).clamp(0.0, 1.0)
            } else {
                0.0
            };
            (p[0] - a[0] - t * ab[0]).hypot(p[1] - a[1] - t * ab[1])
        })
        .fold(f64::INFINITY, f64::min)
}

/// Sum of squared distances to the global path over every `stride`-th epoch.
pub fn tracking_cost(trajectory: &Trajectory, path: &[[f64; 2]], stride: usize) -> f64 {
    trajectory
        .positions()
        .step_by(stride.max(1))
        .map(|p| distance_to_polyline(p, path).powi(2))
        .sum()
}

/// True when every position of the rollout keeps `radius` from blocked cells.
pub fn rollout_is_clear(trajectory: &Trajectory, grid: &OccupancyGrid, radius: f64) -> bool {
    trajectory.positions().all(|p| grid.is_clear(p, radius))
}

/// Picks the collision-free primitive that best follows `path` (world-frame
/// points). Ties go to the lowest index.
pub fn plan_local(
    library: &TrajectoryLibrary,
    model: &Bicycle,
    start: CarState,
    path: &[[f64; 2]],
    grid: &OccupancyGrid,
    config: &LocalPlannerConfig,
) -> Result<LocalPlan, LocalPlanError> {
    if path.is_empty() {
        return Err(LocalPlanError::EmptyPath);
    }
    let mut best: Option<LocalPlan> = None;
    for k in 0..library.len() {
        let traj = library.rollout(model, k, start);
        if !rollout_is_clear(&traj, grid, config.tube_radius) {
            continue;
        }
        let cost = tracking_cost(&traj, path, config.cost_stride);
        if best.as_ref().is_none_or(|b| cost < b.cost) {
            best = Some(LocalPlan {
                trajectory: traj,
                primitive: k,
                cost,
            });
        }
    }
    best.ok_or(LocalPlanError::NoCandidate)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::world::CellState;

    fn open() -> OccupancyGrid {
        OccupancyGrid::new(60, 60, 0.1, [0.0, 0.0], CellState::Free)
    }

    #[test]
    fn straight_path_picks_straight_arc() {
        let lib = TrajectoryLibrary::default();
        let path: Vec<[f64; 2]> = (0..30).map(|k| [1.0 + 0.1 * k as f64, 3.0]).collect();
        let plan = plan_local(&lib, &Bicycle::default(), [1.0, 3.0, 0.0], &path, &open(), &LocalPlannerConfig::default()).unwrap();
        assert_eq!(lib.curvatures[plan.primitive], 0.0);
    }

    #[test]
    fn left_turn_picks_positive_curvature() {
        let lib = TrajectoryLibrary::default();
        let mut path: Vec<[f64; 2]> = (0..3).map(|k| [1.0 + 0.1 * k as f64, 3.0]).collect();
        path.extend((1..30).map(|k| [1.2, 3.0 + 0.1 * k as f64]));
        let plan = plan_local(&lib, &Bicycle::default(), [1.0, 3.0, 0.0], &path, &open(), &LocalPlannerConfig::default()).unwrap();
        assert!(lib.curvatures[plan.primitive] > 0.0);
    }

    #[test]
    fn starts_at_state_within_input_bounds() {
        let lib = TrajectoryLibrary::default();
        let model = Bicycle::default();
        for k in 0..lib.len() {
            let t = lib.rollout(&model, k, [0.3, 0.4, 1.0]);
            assert_eq!(t.states[0], [0.3, 0.4, 1.0]);
            assert!(t.inputs.iter().all(|u| u[1].abs() <= model.input_upper[1] && u[0] <= model.input_upper[0]));
            assert_eq!(t.horizon(), 100);
        }
    }

    #[test]
    fn boxed_in_gives_no_candidate() {
        let mut g = open();
        g.set_region([0.0, 0.0], [6.0, 6.0], CellState::Occupied);
        g.set_region([2.95, 2.95], [3.05, 3.05], CellState::Free);
        let r = plan_local(
            &TrajectoryLibrary::default(),
            &Bicycle::default(),
            [3.0, 3.0, 0.0],
            &[[4.0, 3.0]],
            &g,
            &LocalPlannerConfig::default(),
        );
        assert_eq!(r, Err(LocalPlanError::NoCandidate));
    }
}
