//! One planning cycle (global path, local primitive, reachability, loop
//! search, loop closure) and the execution state that always holds a
//! certified funnel-loop trajectory once the first cycle succeeds.

use std::time::Instant;

use nalgebra::{SVector, Vector3};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dynamics::{wrap_angle, Bicycle, PdTracker, TrackingErrorDynamics};
use crate::funnel::{Funnel, FunnelLibrary, DEFAULT_DISTURBANCE};
use crate::global_planner::{plan_global, GridPath};
use crate::local_planner::{plan_local, LocalPlannerConfig, TrajectoryLibrary};
use crate::loop_closure::{close_loop, default_weights, funnel_area, ClosureError, ClosureSolution};
use crate::loop_search::{find_loop_with, FunnelNode, LoopSearchConfig, PreparedLibrary};
use crate::reachability::{check_collision, heading_range, terminal_extents, DdpSettings, DisturbanceModel};
use crate::trajectory::{CarInput, CarState, Trajectory};
use crate::world::{build_corridor, polygon_is_free, OccupancyGrid};

#[derive(Debug, Clone, Error, PartialEq)]
pub enum OrchestratorError {
    #[error("map change at epoch {epoch} intersects funnel {funnel} of the active loop")]
    InvalidatedPlan { epoch: u64, funnel: usize },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PlannerConfig {
    pub model: Bicycle,
    pub controller: PdTracker,
    /// Half widths of the per-step disturbance box.
    pub disturbance: [f64; 3],
    pub local_library: TrajectoryLibrary,
    pub local: LocalPlannerConfig,
    pub loop_search: LoopSearchConfig,
    /// Distance the corridor may extend past the reference.
    pub corridor_margin: f64,
    /// Half width of the box each loop funnel may be shifted within.
    pub trust_box: f64,
    pub latency_smoothing: f64,
    pub initial_latency_ms: f64,
    /// Feed this value to the latency estimate instead of the measured
    /// cycle time, which makes runs reproducible.
    pub fixed_latency_ms: Option<f64>,
    /// A plan whose local part ends this close to the goal is kept.
    pub goal_tolerance: f64,
    pub ddp: DdpSettingsConfig,
}

/// Serializable mirror of [`DdpSettings`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DdpSettingsConfig {
    pub max_iterations: usize,
    pub alpha: f64,
    pub min_improvement: f64,
}

impl Default for DdpSettingsConfig {
    fn default() -> Self {
        let d = DdpSettings::default();
        Self {
            max_iterations: d.max_iterations,
            alpha: d.alpha,
            min_improvement: d.min_improvement,
        }
    }
}

impl From<DdpSettingsConfig> for DdpSettings {
    fn from(c: DdpSettingsConfig) -> Self {
        DdpSettings {
            max_iterations: c.max_iterations,
            alpha: c.alpha,
            min_improvement: c.min_improvement,
        }
    }
}

impl Default for PlannerConfig {
    fn default() -> Self {
        Self {
            model: Bicycle::default(),
            controller: PdTracker::default(),
            disturbance: DEFAULT_DISTURBANCE,
            local_library: TrajectoryLibrary::default(),
            local: LocalPlannerConfig::default(),
            loop_search: LoopSearchConfig {
                heuristic_weight: 10.0,
                node_budget: 600,
                ..LoopSearchConfig::default()
            },
            corridor_margin: 0.6,
            trust_box: 2.0,
            latency_smoothing: 0.2,
            initial_latency_ms: 60.0,
            fixed_latency_ms: None,
            goal_tolerance: 0.5,
            ddp: DdpSettingsConfig::default(),
        }
    }
}

/// Where the reference comes from at a given epoch.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Mode {
    Idle,
    TrackingLocal { step: usize },
    InLoop { funnel: usize, progress: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Reference {
    pub state: CarState,
    pub input: CarInput,
    pub mode: Mode,
}

/// A local trajectory whose reachable set ends inside the entrance of a
/// closed, collision-free funnel loop.
#[derive(Debug, Clone, PartialEq)]
pub struct FunnelLoopTrajectory {
    pub id: u64,
    /// Epoch at which `local.states[0]` is the reference.
    pub start_epoch: u64,
    pub created_at: u64,
    pub goal: [f64; 2],
    pub local: Trajectory,
    pub funnels: Vec<Funnel>,
    /// Translatable margin of the first entrance at creation.
    pub entry_margin: Vec<f64>,
    offsets: Vec<usize>,
}

impl FunnelLoopTrajectory {
    pub fn new(
        id: u64,
        start_epoch: u64,
        created_at: u64,
        goal: [f64; 2],
        local: Trajectory,
        funnels: Vec<Funnel>,
        entry_margin: Vec<f64>,
    ) -> Self {
        let mut offsets = Vec::with_capacity(funnels.len() + 1);
        let mut acc = 0;
        offsets.push(0);
        for f in &funnels {
            acc += f.epochs();
            offsets.push(acc);
        }
        Self {
            id,
            start_epoch,
            created_at,
            goal,
            local,
            funnels,
            entry_margin,
            offsets,
        }
    }

    /// Epochs per lap of the loop.
    pub fn period(&self) -> usize {
        *self.offsets.last().unwrap_or(&0)
    }

    /// Reference at `epoch`; `None` before the plan starts.
    pub fn reference_at(&self, epoch: u64) -> Option<Reference> {
        if epoch < self.start_epoch {
            return None;
        }
        let k = (epoch - self.start_epoch) as usize;
        let t = self.local.horizon();
        if k < t || self.funnels.is_empty() {
            let k = k.min(t);
            let input = if k < t { self.local.inputs[k] } else { [0.0, 0.0] };
            return Some(Reference {
                state: self.local.states[k],
                input,
                mode: Mode::TrackingLocal { step: k },
            });
        }
        let m = (k - t) % self.period();
        let i = self.offsets.partition_point(|&o| o <= m) - 1;
        let j = m - self.offsets[i];
        let f = &self.funnels[i];
        Some(Reference {
            state: f.nominal.states[j],
            input: f.nominal.inputs[j],
            mode: Mode::InLoop { funnel: i, progress: j },
        })
    }

    /// Reference over epochs `from..=to` with continuous headings.
    pub fn segment(&self, from: u64, to: u64) -> Option<Trajectory> {
        let mut states = Vec::with_capacity((to - from + 1) as usize);
        let mut inputs = Vec::with_capacity((to - from) as usize);
        for e in from..=to {
            let r = self.reference_at(e)?;
            let mut s = r.state;
            if let Some(prev) = states.last() {
                let p: &CarState = prev;
                s[2] = p[2] + wrap_angle(s[2] - p[2]);
            }
            states.push(s);
            if e < to {
                inputs.push(r.input);
            }
        }
        Some(Trajectory::new(states, inputs, self.local.dt))
    }

    /// First loop funnel whose encompassing shape is no longer free.
    pub fn blocked_funnel(&self, grid: &OccupancyGrid) -> Option<usize> {
        self.funnels.iter().position(|f| !polygon_is_free(grid, &f.encompassing))
    }
}

/// Active plan plus at most one certified plan waiting for its start epoch.
#[derive(Debug, Clone, Default)]
pub struct ExecutionState {
    pub active: Option<FunnelLoopTrajectory>,
    pub pending: Option<FunnelLoopTrajectory>,
}

impl ExecutionState {
    /// Promotes the pending plan when its start epoch arrives and returns
    /// the reference for `epoch`; `None` until the first plan exists.
    pub fn step_execution(&mut self, epoch: u64) -> Option<Reference> {
        if self.pending.as_ref().is_some_and(|p| p.start_epoch <= epoch) {
            self.active = self.pending.take();
        }
        self.active.as_ref().and_then(|a| a.reference_at(epoch))
    }

    pub fn plans_held(&self) -> usize {
        self.active.is_some() as usize + self.pending.is_some() as usize
    }
}

/// Exponential moving average of cycle durations.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct LatencyEstimator {
    pub smoothing: f64,
    pub estimate_ms: f64,
}

impl LatencyEstimator {
    pub fn observe(&mut self, ms: f64) {
        self.estimate_ms += self.smoothing * (ms - self.estimate_ms);
    }

    /// Whole epochs covering the estimate; at least one.
    pub fn epochs(&self, dt: f64) -> u64 {
        ((self.estimate_ms * 1e-3 / dt).ceil() as u64).max(1)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stage {
    Global,
    Local,
    Frs,
    Search,
    Closure,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum CycleOutcome {
    NewPlan { id: u64 },
    /// Goal already covered by the active plan; no planning done.
    Idle,
    Failed { stage: Stage },
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct StageDurations {
    pub global: f64,
    pub local: f64,
    pub frs: f64,
    pub search: f64,
    pub closure: f64,
}

impl StageDurations {
    pub fn total(&self) -> f64 {
        self.global + self.local + self.frs + self.search + self.closure
    }
}

/// Everything one cycle produced, for logging and display.
#[derive(Debug, Clone)]
pub struct CycleReport {
    pub outcome: CycleOutcome,
    pub durations: StageDurations,
    pub swap_epoch: u64,
    pub global_path: Vec<[f64; 2]>,
    pub local: Option<Trajectory>,
    /// Reference and initial error the reachability stage certified.
    pub frs_reference: Option<(Trajectory, [f64; 3])>,
    pub plan: Option<FunnelLoopTrajectory>,
    pub expanded: usize,
}

/// Planner state carried across cycles.
pub struct Planner<'a> {
    pub config: PlannerConfig,
    pub latency: LatencyEstimator,
    library: PreparedLibrary<'a>,
    disturbance: DisturbanceModel<3>,
    next_id: u64,
}

fn ms_since(t: Instant) -> f64 {
    t.elapsed().as_secs_f64() * 1e3
}

impl<'a> Planner<'a> {
    pub fn new(library: &'a FunnelLibrary, config: PlannerConfig) -> Self {
        let disturbance =
            DisturbanceModel::symmetric_box(config.disturbance).expect("disturbance half widths are positive");
        Self::with_disturbance(library, config, disturbance)
    }

    /// Planner certifying against a general disturbance set instead of the
    /// configured box.
    pub fn with_disturbance(library: &'a FunnelLibrary, config: PlannerConfig, disturbance: DisturbanceModel<3>) -> Self {
        Self {
            latency: LatencyEstimator {
                smoothing: config.latency_smoothing,
                estimate_ms: config.initial_latency_ms,
            },
            library: PreparedLibrary::new(library),
            disturbance,
            config,
            next_id: 1,
        }
    }

    pub fn library(&self) -> &FunnelLibrary {
        self.library.library
    }

    pub fn disturbance(&self) -> &DisturbanceModel<3> {
        &self.disturbance
    }

    /// Map-change rule: the active loop must still be free on `grid`.
    pub fn validate(&self, exec: &ExecutionState, grid: &OccupancyGrid, epoch: u64) -> Result<(), OrchestratorError> {
        match exec.active.as_ref().and_then(|a| a.blocked_funnel(grid)) {
            Some(funnel) => Err(OrchestratorError::InvalidatedPlan { epoch, funnel }),
            None => Ok(()),
        }
    }

    /// Runs one cycle from the measured `state` at epoch `now`. On success
    /// the new plan is stored as pending in `exec` and starts at the
    /// returned swap epoch; on failure `exec` is untouched.
    pub fn plan_cycle(
        &mut self,
        now: u64,
        state: CarState,
        goal: [f64; 2],
        grid: &OccupancyGrid,
        exec: &mut ExecutionState,
    ) -> Result<CycleReport, OrchestratorError> {
        self.validate(exec, grid, now)?;
        let mut report = CycleReport {
            outcome: CycleOutcome::Idle,
            durations: StageDurations::default(),
            swap_epoch: now,
            global_path: Vec::new(),
            local: None,
            frs_reference: None,
            plan: None,
            expanded: 0,
        };
        if let Some(a) = &exec.active {
            let end = a.local.end();
            if a.goal == goal && (end[0] - goal[0]).hypot(end[1] - goal[1]) <= self.config.goal_tolerance {
                return Ok(report);
            }
        }
        let outcome = self.run_stages(now, state, goal, grid, exec, &mut report);
        let measured = report.durations.total();
        self.latency.observe(self.config.fixed_latency_ms.unwrap_or(measured));
        report.outcome = match outcome {
            Ok(plan) => {
                let id = plan.id;
                report.plan = Some(plan.clone());
                exec.pending = Some(plan);
                CycleOutcome::NewPlan { id }
            }
            Err(stage) => CycleOutcome::Failed { stage },
        };
        Ok(report)
    }

    fn run_stages(
        &mut self,
        now: u64,
        state: CarState,
        goal: [f64; 2],
        grid: &OccupancyGrid,
        exec: &ExecutionState,
        report: &mut CycleReport,
    ) -> Result<FunnelLoopTrajectory, Stage> {
        let dt = self.config.model.dt;
        // start from the reference expected once this cycle has finished
        let (swap, prefix) = match &exec.active {
            Some(a) => {
                let swap = now + self.latency.epochs(dt);
                (swap, a.segment(now, swap))
            }
            None => (now, None),
        };
        report.swap_epoch = swap;
        let start = match &prefix {
            Some(p) => *p.end(),
            None => state,
        };

        let t = Instant::now();
        let path = plan_global(grid, grid.cell_of([start[0], start[1]]), grid.cell_of(goal));
        report.durations.global = ms_since(t);
        let path: GridPath = path.map_err(|_| Stage::Global)?;
        let mut points = path.points(grid);
        if let Some(last) = points.last_mut() {
            *last = goal;
        }
        report.global_path = points;

        let t = Instant::now();
        let local = plan_local(
            &self.config.local_library,
            &self.config.model,
            start,
            &report.global_path,
            grid,
            &self.config.local,
        );
        report.durations.local = ms_since(t);
        let local = local.map_err(|_| Stage::Local)?.trajectory;
        report.local = Some(local.clone());

        let t = Instant::now();
        let frs = self.reachability(state, prefix.as_ref(), &local, grid);
        report.durations.frs = ms_since(t);
        let (reference, e0, worst, headings) = frs.ok_or(Stage::Frs)?;
        report.frs_reference = Some((reference, [e0[0], e0[1], e0[2]]));

        let entrance = &self.library.library.funnels[0].entrance;
        let end = *local.end();
        let end_point = [end[0], end[1]];
        let b_frs: Vec<f64> = entrance.offsets().iter().zip(&worst).map(|(b, w)| b - w).collect();
        let root = FunnelNode::from_terminal_set(end_point, entrance, &worst, headings);

        let t = Instant::now();
        let mut closure_ms = 0.0;
        let trust = self.config.trust_box;
        let found = find_loop_with(&root, &self.library, grid, &self.config.loop_search, |c| {
            let tc = Instant::now();
            let r = close_candidate(grid, &c.funnels, &b_frs, end_point, trust);
            closure_ms += ms_since(tc);
            r.ok()
        });
        let total = ms_since(t);
        report.durations.closure = closure_ms;
        report.durations.search = total - closure_ms;
        let (candidate, solution) = found.map_err(|e| match e {
            crate::loop_search::LoopSearchError::NotFound { expanded } => {
                report.expanded = expanded;
                if closure_ms > 0.0 {
                    Stage::Closure
                } else {
                    Stage::Search
                }
            }
            crate::loop_search::LoopSearchError::InvalidWeight => Stage::Search,
        })?;
        report.expanded = candidate.expanded;

        let id = self.next_id;
        self.next_id += 1;
        Ok(FunnelLoopTrajectory::new(
            id,
            swap,
            now,
            goal,
            local,
            solution.apply(&candidate.funnels),
            b_frs,
        ))
    }

    /// Worst-case check of the reference from now to the end of `local`
    /// inside a corridor, plus the terminal extents along the entrance
    /// normals and the terminal heading range.
    #[allow(clippy::type_complexity)]
    fn reachability(
        &self,
        state: CarState,
        prefix: Option<&Trajectory>,
        local: &Trajectory,
        grid: &OccupancyGrid,
    ) -> Option<(Trajectory, Vector3<f64>, Vec<f64>, [f64; 2])> {
        let reference = match prefix {
            Some(p) => {
                let heading = p.end()[2];
                p.concat(&local.unwrapped_near(heading))
            }
            None => local.clone(),
        };
        let r0 = reference.start();
        let e0 = Vector3::new(state[0] - r0[0], state[1] - r0[1], wrap_angle(state[2] - r0[2]));
        let corridor = build_corridor(grid, &reference, self.config.corridor_margin).ok()?;
        let ed = TrackingErrorDynamics::new(&self.config.model, &self.config.controller, &reference);
        let settings: DdpSettings = self.config.ddp.into();
        let positions: Vec<[f64; 2]> = reference.positions().collect();
        let report = check_collision(&ed, &self.disturbance, &e0, &positions, &corridor.polytope, &settings).ok()?;
        if !report.safe {
            return None;
        }
        let entrance = &self.library.library.funnels[0].entrance;
        let dirs: Vec<SVector<f64, 3>> = entrance.rows().map(|a| SVector::<f64, 3>::new(a[0], a[1], 0.0)).collect();
        let tau = reference.horizon();
        let worst = terminal_extents(&ed, &self.disturbance, &e0, &dirs, tau, &settings).ok()?;
        let headings = heading_range(&ed, &self.disturbance, &e0, reference.end()[2], tau, &settings).ok()?;
        Some((reference, e0, worst, headings))
    }
}

/// Adjustable areas plus the closure QP with default weights.
pub fn close_candidate(
    grid: &OccupancyGrid,
    funnels: &[Funnel],
    b_frs: &[f64],
    end_point: [f64; 2],
    trust: f64,
) -> Result<ClosureSolution, ClosureError> {
    let areas = funnels
        .iter()
        .map(|f| funnel_area(grid, f, trust))
        .collect::<Result<Vec<_>, _>>()?;
    let (w0, w) = default_weights(funnels.len());
    close_loop(funnels, &areas, b_frs, end_point, w0, &w)
}
