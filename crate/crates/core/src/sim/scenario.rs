use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::SimError;
use crate::convex::Polytope;
use crate::funnel::DEFAULT_DISTURBANCE;
use crate::orchestrator::PlannerConfig;
use crate::reachability::DisturbanceModel;
use crate::trajectory::CarState;
use crate::world::CellState;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GoalEvent {
    pub time: f64,
    pub goal: [f64; 2],
}

/// Sets the truth map inside `region = [x0, y0, x1, y1]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MapEvent {
    pub time: f64,
    pub region: [f64; 4],
    pub set_to: CellState,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DisturbanceMode {
    RandomUniform,
    Adversarial,
    Replay,
}

/// Disturbance set, either a symmetric box or general halfplanes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum DisturbanceSet {
    Box { half_widths: [f64; 3] },
    Polytope { rows: Vec<[f64; 3]>, offsets: Vec<f64> },
}

impl Default for DisturbanceSet {
    fn default() -> Self {
        DisturbanceSet::Box {
            half_widths: DEFAULT_DISTURBANCE,
        }
    }
}

impl DisturbanceSet {
    pub fn model(&self) -> Result<DisturbanceModel<3>, SimError> {
        let invalid = |e: String| SimError::ScenarioInvalid(format!("disturbance set: {e}"));
        match self {
            DisturbanceSet::Box { half_widths } => {
                DisturbanceModel::symmetric_box(*half_widths).map_err(|e| invalid(e.to_string()))
            }
            DisturbanceSet::Polytope { rows, offsets } => {
                let a: Vec<f64> = rows.iter().flatten().copied().collect();
                let p = Polytope::new(3, a, offsets.clone()).map_err(|e| invalid(e.to_string()))?;
                DisturbanceModel::new(p).map_err(|e| invalid(e.to_string()))
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DisturbanceSpec {
    pub mode: DisturbanceMode,
    #[serde(rename = "W", default)]
    pub set: DisturbanceSet,
    /// JSON array of `[w_x, w_y, w_theta]` per epoch, cycled; replay mode.
    #[serde(default)]
    pub replay_file: Option<PathBuf>,
}

impl Default for DisturbanceSpec {
    fn default() -> Self {
        Self {
            mode: DisturbanceMode::RandomUniform,
            set: DisturbanceSet::default(),
            replay_file: None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SensorConfig {
    pub range: f64,
    pub rays: usize,
    pub period: f64,
}

impl Default for SensorConfig {
    fn default() -> Self {
        Self {
            range: 5.0,
            rays: 360,
            period: 1.0,
        }
    }
}

fn default_plan_hz() -> f64 {
    5.0
}

fn default_frame_period() -> f64 {
    0.05
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scenario {
    #[serde(default)]
    pub name: String,
    pub world_map: PathBuf,
    pub start_pose: CarState,
    #[serde(default)]
    pub goal_schedule: Vec<GoalEvent>,
    #[serde(default)]
    pub map_events: Vec<MapEvent>,
    #[serde(default)]
    pub disturbance: DisturbanceSpec,
    #[serde(default)]
    pub seed: u64,
    pub duration: f64,
    #[serde(default = "default_plan_hz")]
    pub plan_hz: f64,
    #[serde(default)]
    pub sensor: SensorConfig,
    #[serde(default)]
    pub planner: PlannerConfig,
    /// Stop planning once the robot first follows a loop.
    #[serde(default)]
    pub freeze_after_loop_entry: bool,
    /// Funnel library; the bundled one when absent.
    #[serde(default)]
    pub library: Option<PathBuf>,
    /// Simulated seconds between stream frames.
    #[serde(default = "default_frame_period")]
    pub frame_period: f64,
    /// Feed measured cycle times to the latency estimate. Off by default so
    /// that runs are reproducible; the start-state prediction then uses the
    /// configured initial estimate.
    #[serde(default)]
    pub measured_latency: bool,
    /// Worst-case envelope slices kept per plan for display (0 disables).
    #[serde(default)]
    pub envelope_directions: usize,
}

impl Scenario {
    /// Reads a scenario; relative paths are resolved against its directory.
    pub fn load(path: &Path) -> Result<Self, SimError> {
        let text = std::fs::read_to_string(path).map_err(|e| SimError::Io(format!("{}: {e}", path.display())))?;
        let mut s: Scenario = serde_json::from_str(&text).map_err(|e| SimError::ScenarioInvalid(e.to_string()))?;
        let base = path.parent().unwrap_or(Path::new("."));
        s.resolve(base);
        Ok(s)
    }

    pub fn resolve(&mut self, base: &Path) {
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        fix(&mut self.world_map);
        if let Some(p) = self.library.as_mut() {
            fix(p);
        }
        if let Some(p) = self.disturbance.replay_file.as_mut() {
            fix(p);
        }
    }

    /// Checks that need no map.
    pub fn validate(&self) -> Result<(), SimError> {
        let bad = |m: &str| Err(SimError::ScenarioInvalid(m.into()));
        if !(self.duration > 0.0) {
            return bad("duration must be positive");
        }
        if !(self.plan_hz > 0.0) {
            return bad("plan_hz must be positive");
        }
        if !(self.frame_period > 0.0) {
            return bad("frame_period must be positive");
        }
        if self.sensor.rays == 0 || !(self.sensor.period > 0.0) {
            return bad("sensor needs rays and a positive period");
        }
        if self.goal_schedule.windows(2).any(|w| w[1].time <= w[0].time) {
            return bad("goal times must be strictly increasing");
        }
        if self.map_events.iter().any(|e| e.set_to == CellState::Unknown) {
            return bad("map events set cells to Occupied or Free");
        }
        if self.disturbance.mode == DisturbanceMode::Replay && self.disturbance.replay_file.is_none() {
            return bad("replay mode needs replay_file");
        }
        Ok(())
    }
}
