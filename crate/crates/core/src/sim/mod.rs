//! Discrete-time simulation of the planner on a scenario: truth map, range
//! sensing, disturbance injection, tracking control and run logging.

mod log;
pub mod plot;
mod scenario;
pub mod server;

use std::collections::VecDeque;
use std::path::Path;

use nalgebra::{SVector, Vector3};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;
use thiserror::Error;

pub use log::{CycleRecord, EpochRecord, FunnelRecord, LogRecord, PlanRecord, RunLog, RunSummary};
pub use scenario::{
    DisturbanceMode, DisturbanceSet, DisturbanceSpec, GoalEvent, MapEvent, Scenario, SensorConfig,
};
pub use plot::emit_plots;
pub use server::{parse_command, run_served, StreamServer};

use crate::dynamics::{bicycle_step, wrap_angle, TrackingErrorDynamics};
use crate::funnel::FunnelLibrary;
use crate::orchestrator::{CycleOutcome, CycleReport, ExecutionState, Mode, OrchestratorError, Planner};
use crate::reachability::{envelope_outline, frs_envelope, worst_case, DdpSettings, DisturbanceModel, FrsQuery};
use crate::trajectory::{CarState, Trajectory};
use crate::world::{CellChange, CellState, OccupancyGrid};

#[derive(Debug, Clone, Error, PartialEq)]
pub enum SimError {
    #[error("invalid scenario: {0}")]
    ScenarioInvalid(String),
    #[error("plan violation: {0}")]
    PlanViolation(OrchestratorError),
    #[error("io: {0}")]
    Io(String),
}

/// The funnel library shipped with the crate.
pub fn bundled_library() -> FunnelLibrary {
    FunnelLibrary::from_json(include_str!("../../assets/funnel_library.json")).expect("bundled library parses")
}

/// Library named by the scenario, or the bundled one.
pub fn scenario_library(scenario: &Scenario) -> Result<FunnelLibrary, SimError> {
    match &scenario.library {
        Some(p) => FunnelLibrary::load(p).map_err(|e| SimError::Io(format!("{}: {e}", p.display()))),
        None => Ok(bundled_library()),
    }
}

/// Commands accepted from a live viewer.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Command {
    SetGoal { x: f64, y: f64 },
    ToggleRegion { x0: f64, y0: f64, x1: f64, y1: f64 },
}

/// Half-space description of one encompassing shape.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FramePolytope {
    #[serde(rename = "A_E")]
    pub a: Vec<[f64; 2]>,
    #[serde(rename = "b_E")]
    pub b: Vec<f64>,
}

/// One viewer frame.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Frame {
    pub t: f64,
    pub pose: CarState,
    pub reference: Option<CarState>,
    pub grid_delta: Vec<CellChange>,
    pub global_path: Vec<[f64; 2]>,
    pub local_traj: Vec<[f64; 2]>,
    pub funnels: Vec<FramePolytope>,
    pub frs_envelope: Vec<Vec<[f64; 2]>>,
    pub mode: Mode,
    pub goal: Option<[f64; 2]>,
    pub grid: GridInfo,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct GridInfo {
    pub resolution: f64,
    pub origin: [f64; 2],
    pub width: usize,
    pub height: usize,
}

enum DisturbanceSource {
    Uniform,
    Adversarial {
        queue: VecDeque<[f64; 3]>,
        sign: f64,
        last_local: Option<u64>,
    },
    Replay {
        sequence: Vec<[f64; 3]>,
        next: usize,
    },
}

/// Distance from `p` to the nearest occupied cell of `grid`, capped at `cap`.
pub fn clearance(grid: &OccupancyGrid, p: [f64; 2], cap: f64) -> f64 {
    let (a, b) = grid.cell_range([p[0] - cap, p[1] - cap], [p[0] + cap, p[1] + cap], false);
    let mut best = cap;
    for iy in a.1..=b.1 {
        for ix in a.0..=b.0 {
            if grid.get((ix, iy)) != CellState::Occupied {
                continue;
            }
            let k = grid.cell_corners((ix, iy));
            let dx = (k[0][0] - p[0]).max(p[0] - k[2][0]).max(0.0);
            let dy = (k[0][1] - p[1]).max(p[1] - k[2][1]).max(0.0);
            best = best.min(dx.hypot(dy));
        }
    }
    best
}

/// Latest planning artifacts kept for display.
#[derive(Debug, Clone, Default)]
struct Display {
    global_path: Vec<[f64; 2]>,
    local_traj: Vec<[f64; 2]>,
    envelope: Vec<Vec<[f64; 2]>>,
    grid_delta: Vec<CellChange>,
}

pub struct Simulation<'a> {
    pub scenario: Scenario,
    pub truth: OccupancyGrid,
    pub known: OccupancyGrid,
    pub planner: Planner<'a>,
    pub exec: ExecutionState,
    pub state: CarState,
    pub epoch: u64,
    pub goal: Option<[f64; 2]>,
    pub log: RunLog,
    w_model: DisturbanceModel<3>,
    rng: ChaCha8Rng,
    source: DisturbanceSource,
    goals: VecDeque<(u64, [f64; 2])>,
    events: Vec<(u64, MapEvent)>,
    frozen: bool,
    display: Display,
    last_reference: Option<crate::orchestrator::Reference>,
}

fn to_epoch(time: f64, dt: f64) -> u64 {
    (time / dt).round().max(0.0) as u64
}

impl<'a> Simulation<'a> {
    /// Loads the scenario's map and sets up the run.
    pub fn new(scenario: Scenario, library: &'a FunnelLibrary) -> Result<Self, SimError> {
        let truth = OccupancyGrid::load(&scenario.world_map)
            .map_err(|e| SimError::Io(format!("{}: {e}", scenario.world_map.display())))?;
        Self::with_map(scenario, truth, library)
    }

    pub fn with_map(scenario: Scenario, truth: OccupancyGrid, library: &'a FunnelLibrary) -> Result<Self, SimError> {
        scenario.validate()?;
        let dt = scenario.planner.model.dt;
        let (lo, hi) = truth.bounds();
        let inside = |x: f64, y: f64| x >= lo[0] && x <= hi[0] && y >= lo[1] && y <= hi[1];
        for e in &scenario.map_events {
            let r = e.region;
            if !(inside(r[0], r[1]) && inside(r[2], r[3])) || r[2] < r[0] || r[3] < r[1] {
                return Err(SimError::ScenarioInvalid(format!("map event region {r:?} outside the map")));
            }
        }
        let p = scenario.start_pose;
        if truth.state_at([p[0], p[1]]) != CellState::Free {
            return Err(SimError::ScenarioInvalid("start pose is not in free space".into()));
        }
        let w_model = scenario.disturbance.set.model()?;
        let source = match scenario.disturbance.mode {
            DisturbanceMode::RandomUniform => DisturbanceSource::Uniform,
            DisturbanceMode::Adversarial => DisturbanceSource::Adversarial {
                queue: VecDeque::new(),
                sign: 1.0,
                last_local: None,
            },
            DisturbanceMode::Replay => {
                let path = scenario.disturbance.replay_file.as_ref().expect("validated");
                let text =
                    std::fs::read_to_string(path).map_err(|e| SimError::Io(format!("{}: {e}", path.display())))?;
                let sequence: Vec<[f64; 3]> =
                    serde_json::from_str(&text).map_err(|e| SimError::ScenarioInvalid(format!("replay file: {e}")))?;
                if sequence.is_empty() {
                    return Err(SimError::ScenarioInvalid("replay file is empty".into()));
                }
                if let Some(w) = sequence.iter().find(|w| !w_model.polytope.contains(&w[..], 1e-12)) {
                    return Err(SimError::ScenarioInvalid(format!("replayed disturbance {w:?} outside W")));
                }
                DisturbanceSource::Replay { sequence, next: 0 }
            }
        };
        let mut planner_config = scenario.planner.clone();
        if !scenario.measured_latency && planner_config.fixed_latency_ms.is_none() {
            planner_config.fixed_latency_ms = Some(planner_config.initial_latency_ms);
        }
        let planner = Planner::with_disturbance(library, planner_config, w_model.clone());
        let goals = scenario.goal_schedule.iter().map(|g| (to_epoch(g.time, dt), g.goal)).collect();
        let mut events: Vec<(u64, MapEvent)> =
            scenario.map_events.iter().map(|e| (to_epoch(e.time, dt), *e)).collect();
        events.sort_by_key(|e| e.0);
        let mut log = RunLog::default();
        log.push(LogRecord::Header {
            name: scenario.name.clone(),
            seed: scenario.seed,
            dt,
            map: truth.to_map_text(),
        });
        Ok(Self {
            known: OccupancyGrid::unknown_like(&truth),
            truth,
            planner,
            exec: ExecutionState::default(),
            state: scenario.start_pose,
            epoch: 0,
            goal: None,
            log,
            rng: ChaCha8Rng::seed_from_u64(scenario.seed),
            w_model,
            source,
            goals,
            events,
            frozen: false,
            display: Display::default(),
            last_reference: None,
            scenario,
        })
    }

    pub fn dt(&self) -> f64 {
        self.scenario.planner.model.dt
    }

    pub fn total_epochs(&self) -> u64 {
        to_epoch(self.scenario.duration, self.dt())
    }

    pub fn finished(&self) -> bool {
        self.epoch >= self.total_epochs()
    }

    /// Queues a viewer command for the next epoch.
    pub fn inject(&mut self, command: Command) {
        let at = self.epoch + 1;
        match command {
            Command::SetGoal { x, y } => {
                // replaces anything already queued for later
                self.goals.retain(|g| g.0 < at);
                self.goals.push_back((at, [x, y]));
            }
            Command::ToggleRegion { x0, y0, x1, y1 } => {
                let (lo, hi) = ([x0.min(x1), y0.min(y1)], [x0.max(x1), y0.max(y1)]);
                let (a, b) = self.truth.cell_range(lo, hi, true);
                let mut any = false;
                for iy in a.1..=b.1 {
                    for ix in a.0..=b.0 {
                        any |= self.truth.get((ix, iy)) == CellState::Occupied;
                    }
                }
                let set_to = if any { CellState::Free } else { CellState::Occupied };
                let event = MapEvent {
                    time: at as f64 * self.dt(),
                    region: [lo[0], lo[1], hi[0], hi[1]],
                    set_to,
                };
                let pos = self.events.partition_point(|e| e.0 <= at);
                self.events.insert(pos, (at, event));
            }
        }
    }

    /// Advances one epoch.
    pub fn step(&mut self) -> Result<(), SimError> {
        let k = self.epoch;
        let dt = self.dt();
        while self.goals.front().is_some_and(|g| g.0 <= k) {
            let (_, goal) = self.goals.pop_front().expect("checked");
            self.goal = Some(goal);
            self.log.push(LogRecord::Goal { epoch: k, goal });
        }
        while self.events.first().is_some_and(|e| e.0 <= k) {
            let (_, e) = self.events.remove(0);
            let changed = self
                .truth
                .set_region([e.region[0], e.region[1]], [e.region[2], e.region[3]], e.set_to);
            // the robot's map follows the change on cells it has already seen
            for c in changed {
                if self.known.get((c.ix, c.iy)) != CellState::Unknown && self.known.set((c.ix, c.iy), c.state) {
                    self.display.grid_delta.push(c);
                }
            }
            self.log.push(LogRecord::MapEvent {
                epoch: k,
                region: e.region,
                set_to: e.set_to,
            });
            self.planner.validate(&self.exec, &self.known, k).map_err(SimError::PlanViolation)?;
        }

        let sense_every = to_epoch(self.scenario.sensor.period, dt).max(1);
        if k % sense_every == 0 {
            let s = self.scenario.sensor;
            let changes = self.known.sense(&self.truth, [self.state[0], self.state[1]], s.range, s.rays);
            self.log.push(LogRecord::Sense {
                epoch: k,
                changed: changes.len(),
            });
            self.display.grid_delta.extend_from_slice(&changes);
            self.planner.validate(&self.exec, &self.known, k).map_err(SimError::PlanViolation)?;
        }

        let plan_every = ((1.0 / self.scenario.plan_hz) / dt).round().max(1.0) as u64;
        if let Some(goal) = self.goal {
            if !self.frozen && k % plan_every == 0 && self.exec.pending.is_none() {
                let report = self
                    .planner
                    .plan_cycle(k, self.state, goal, &self.known, &mut self.exec)
                    .map_err(SimError::PlanViolation)?;
                self.record_cycle(k, report);
            }
        }

        let reference = self.exec.step_execution(k);
        let mode = reference.map(|r| r.mode).unwrap_or(Mode::Idle);
        if self.scenario.freeze_after_loop_entry && matches!(mode, Mode::InLoop { .. }) {
            self.frozen = true;
        }
        let input = match &reference {
            Some(r) => self.planner.config.controller.track(&self.state, &r.state, &r.input),
            None => [0.0, 0.0],
        };
        let w = self.next_disturbance(mode);
        let pos = [self.state[0], self.state[1]];
        let contained = match (mode, &self.exec.active) {
            (Mode::InLoop { .. }, Some(a)) => Some(a.funnels.iter().any(|f| f.encompassing.contains(&pos, 1e-9))),
            _ => None,
        };
        self.log.push(LogRecord::Epoch(EpochRecord {
            epoch: k,
            t: k as f64 * dt,
            state: self.state,
            reference: reference.map(|r| r.state),
            input,
            disturbance: w,
            mode,
            plan: self.exec.active.as_ref().filter(|_| reference.is_some()).map(|a| a.id),
            clearance: clearance(&self.truth, pos, 1.0),
            contained,
        }));
        self.last_reference = reference;
        self.state = bicycle_step(&self.state, &input, &w, dt);
        self.epoch += 1;
        Ok(())
    }

    fn record_cycle(&mut self, k: u64, report: CycleReport) {
        if report.outcome == CycleOutcome::Idle {
            return;
        }
        if !report.global_path.is_empty() {
            self.display.global_path = report.global_path.clone();
        }
        if let Some(l) = &report.local {
            self.display.local_traj = l.positions().collect();
        }
        let mut envelope = Vec::new();
        if let (Some(_), Some((reference, e0))) = (&report.plan, &report.frs_reference) {
            let n = self.scenario.envelope_directions;
            if n >= 3 {
                envelope = self.envelope(reference, *e0, n);
            }
            self.display.envelope = envelope.clone();
        }
        self.log.push(LogRecord::Cycle(CycleRecord {
            epoch: k,
            t: k as f64 * self.dt(),
            swap_epoch: report.swap_epoch,
            outcome: report.outcome,
            durations: report.durations,
            expanded: report.expanded,
            plan: report.plan.as_ref().map(PlanRecord::from),
            envelope,
        }));
    }

    fn envelope(&self, reference: &Trajectory, e0: [f64; 3], directions: usize) -> Vec<Vec<[f64; 2]>> {
        let cfg = &self.planner.config;
        let ed = TrackingErrorDynamics::new(&cfg.model, &cfg.controller, reference);
        let positions: Vec<[f64; 2]> = reference.positions().collect();
        let settings: DdpSettings = cfg.ddp.into();
        frs_envelope(&ed, &self.w_model, &Vector3::from(e0), &positions, directions, 10, &settings)
            .map(|slices| slices.iter().map(envelope_outline).collect())
            .unwrap_or_default()
    }

    fn next_disturbance(&mut self, mode: Mode) -> [f64; 3] {
        let sample = |rng: &mut ChaCha8Rng, m: &DisturbanceModel<3>| {
            let w = m.sample_uniform(rng);
            [w[0], w[1], w[2]]
        };
        match &mut self.source {
            DisturbanceSource::Uniform => sample(&mut self.rng, &self.w_model),
            DisturbanceSource::Replay { sequence, next } => {
                let w = sequence[*next % sequence.len()];
                *next += 1;
                w
            }
            DisturbanceSource::Adversarial { .. } => {
                self.refill_adversarial(mode);
                match &mut self.source {
                    DisturbanceSource::Adversarial { queue, .. } => match queue.pop_front() {
                        Some(w) => w,
                        None => sample(&mut self.rng, &self.w_model),
                    },
                    _ => unreachable!(),
                }
            }
        }
    }

    /// At the start of each local trajectory and each funnel, queue the
    /// disturbance sequence that pushes the error furthest sideways at its
    /// end, alternating sides.
    fn refill_adversarial(&mut self, mode: Mode) {
        let Some(active) = self.exec.active.as_ref() else {
            return;
        };
        let DisturbanceSource::Adversarial { queue, sign, last_local } = &mut self.source else {
            return;
        };
        let reference = match mode {
            Mode::TrackingLocal { step } if *last_local != Some(active.id) => {
                *last_local = Some(active.id);
                active.local.slice(step, active.local.horizon())
            }
            Mode::InLoop { funnel, progress: 0 } => active.funnels[funnel].nominal.clone(),
            _ => return,
        };
        if reference.horizon() == 0 {
            return;
        }
        let r0 = reference.start();
        let e0 = Vector3::new(
            self.state[0] - r0[0],
            self.state[1] - r0[1],
            wrap_angle(self.state[2] - r0[2]),
        );
        let end = reference.end();
        let direction = SVector::<f64, 3>::new(-end[2].sin() * *sign, end[2].cos() * *sign, 0.0);
        *sign = -*sign;
        let cfg = &self.planner.config;
        let ed = TrackingErrorDynamics::new(&cfg.model, &cfg.controller, &reference);
        let q = FrsQuery {
            direction,
            offset: 0.0,
            horizon: reference.horizon(),
            initial_error: e0,
        };
        queue.clear();
        if let Ok(wc) = worst_case(&ed, &self.w_model, &q, &cfg.ddp.into()) {
            queue.extend(wc.disturbances.iter().map(|w| [w[0], w[1], w[2]]));
        }
    }

    /// Viewer frame; drains the accumulated grid changes.
    pub fn frame(&mut self) -> Frame {
        let funnels = self
            .exec
            .active
            .as_ref()
            .map(|a| {
                a.funnels
                    .iter()
                    .map(|f| FramePolytope {
                        a: f.encompassing.rows().map(|r| [r[0], r[1]]).collect(),
                        b: f.encompassing.offsets().to_vec(),
                    })
                    .collect()
            })
            .unwrap_or_default();
        Frame {
            t: self.epoch as f64 * self.dt(),
            pose: self.state,
            reference: self.last_reference.map(|r| r.state),
            grid_delta: std::mem::take(&mut self.display.grid_delta),
            global_path: self.display.global_path.clone(),
            local_traj: self.display.local_traj.clone(),
            funnels,
            frs_envelope: self.display.envelope.clone(),
            mode: self.last_reference.map(|r| r.mode).unwrap_or(Mode::Idle),
            goal: self.goal,
            grid: GridInfo {
                resolution: self.known.resolution,
                origin: self.known.origin,
                width: self.known.width,
                height: self.known.height,
            },
        }
    }

    /// Every known (non-Unknown) cell, for a viewer that joins mid-run.
    pub fn known_cells(&self) -> Vec<CellChange> {
        self.known
            .cells()
            .filter(|(_, s)| *s != CellState::Unknown)
            .map(|((ix, iy), state)| CellChange { ix, iy, state })
            .collect()
    }

    /// Epochs between viewer frames.
    pub fn frame_every(&self) -> u64 {
        to_epoch(self.scenario.frame_period, self.dt()).max(1)
    }

    pub fn run_to_end(mut self) -> Result<RunLog, SimError> {
        while !self.finished() {
            self.step()?;
        }
        Ok(self.log)
    }
}

/// Runs a scenario headless to its duration.
pub fn run(scenario: &Scenario, library: &FunnelLibrary) -> Result<RunLog, SimError> {
    Simulation::new(scenario.clone(), library)?.run_to_end()
}

/// Loads `path` and runs it with its own or the bundled library.
pub fn run_file(path: &Path) -> Result<RunLog, SimError> {
    let scenario = Scenario::load(path)?;
    let library = scenario_library(&scenario)?;
    run(&scenario, &library)
}
