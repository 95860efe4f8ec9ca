//! Funnels, the funnel library and empirical calibration of funnel sets from
//! closed-loop rollouts.

use std::f64::consts::PI;
use std::path::Path;

use nalgebra::Vector3;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::convex::{Ball, ConvexError, Polytope};
use crate::dynamics::{bicycle_step, wrap_angle, Bicycle, ErrorDynamics, PdTracker, TrackingErrorDynamics};
use crate::reachability::{rollout, worst_case, DdpSettings, DisturbanceModel, FrsQuery, ReachabilityError};
use crate::trajectory::Trajectory;

pub const LIBRARY_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum FunnelError {
    #[error("calibration failed for funnel {id}: {reason}")]
    CalibrationFailure { id: usize, reason: String },
    #[error("funnel library file: {0}")]
    Io(#[from] std::io::Error),
    #[error("funnel library format: {0}")]
    Format(String),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Convex(#[from] ConvexError),
    #[error(transparent)]
    Reachability(#[from] ReachabilityError),
}

/// Closed heading interval `[lo, hi]`, compared modulo `2 pi`.
pub type HeadingInterval = [f64; 2];

/// True iff `inner` fits in `outer` after shifting `inner` by the multiple
/// of `2 pi` that brings the two midpoints closest.
pub fn heading_within(inner: HeadingInterval, outer: HeadingInterval, tol: f64) -> bool {
    let ci = 0.5 * (inner[0] + inner[1]);
    let co = 0.5 * (outer[0] + outer[1]);
    let shift = wrap_angle(ci - co) - (ci - co);
    inner[0] + shift >= outer[0] - tol && inner[1] + shift <= outer[1] + tol
}

/// Does `heading` (any branch) lie in `interval`?
pub fn heading_in(heading: f64, interval: HeadingInterval, tol: f64) -> bool {
    heading_within([heading, heading], interval, tol)
}

#[derive(Debug, Clone, PartialEq)]
pub struct Funnel {
    pub id: usize,
    /// Cyclic entrance, relative to `entrance_center`.
    pub entrance: Polytope,
    pub entrance_center: [f64; 2],
    pub entrance_heading: HeadingInterval,
    pub exit_center: [f64; 2],
    pub exit_radius: f64,
    pub exit_heading: HeadingInterval,
    /// Encompassing shape in the workspace.
    pub encompassing: Polytope,
    pub nominal: Trajectory,
}

impl Funnel {
    pub fn translated(&self, dp: [f64; 2]) -> Funnel {
        Funnel {
            id: self.id,
            entrance: self.entrance.clone(),
            entrance_center: [self.entrance_center[0] + dp[0], self.entrance_center[1] + dp[1]],
            entrance_heading: self.entrance_heading,
            exit_center: [self.exit_center[0] + dp[0], self.exit_center[1] + dp[1]],
            exit_radius: self.exit_radius,
            exit_heading: self.exit_heading,
            encompassing: self.encompassing.translated(&dp),
            nominal: self.nominal.translated(dp),
        }
    }

    pub fn exit_ball(&self) -> Ball {
        Ball::new(self.exit_center.to_vec(), self.exit_radius)
    }

    /// Entrance as a workspace polytope.
    pub fn entrance_in_workspace(&self) -> Polytope {
        self.entrance.translated(&self.entrance_center)
    }

    pub fn contains_entry_state(&self, x: &[f64; 3], tol: f64) -> bool {
        let rel = [x[0] - self.entrance_center[0], x[1] - self.entrance_center[1]];
        self.entrance.contains(&rel, tol) && heading_in(x[2], self.entrance_heading, tol)
    }

    pub fn contains_exit_state(&self, x: &[f64; 3], tol: f64) -> bool {
        let d = ((x[0] - self.exit_center[0]).powi(2) + (x[1] - self.exit_center[1]).powi(2)).sqrt();
        d <= self.exit_radius + tol && heading_in(x[2], self.exit_heading, tol)
    }

    pub fn epochs(&self) -> usize {
        self.nominal.horizon()
    }

    /// Nominal heading at the entrance; the template's canonical heading.
    pub fn heading(&self) -> f64 {
        self.nominal.start()[2]
    }

    pub fn length(&self) -> f64 {
        self.nominal.length()
    }
}

/// Smallest slack of the cyclic composition inequalities
/// `A_j (p_Xi - p_Ij) <= b_j - r_Xi`; nonnegative iff the exit ball of `fi`
/// lies in the entrance of `fj`.
pub fn cyclic_margin(fi: &Funnel, fj: &Funnel) -> f64 {
    let rel = [
        fi.exit_center[0] - fj.entrance_center[0],
        fi.exit_center[1] - fj.entrance_center[1],
    ];
    fj.entrance
        .rows()
        .zip(fj.entrance.offsets())
        .map(|(a, b)| b - fi.exit_radius - (a[0] * rel[0] + a[1] * rel[1]))
        .fold(f64::INFINITY, f64::min)
}

pub fn noncyclic_composable(fi: &Funnel, fj: &Funnel) -> bool {
    heading_within(fi.exit_heading, fj.entrance_heading, 1e-12)
}

/// `fi` followed by `fj`: the exit set of `fi` lies in the entrance of `fj`.
pub fn composable(fi: &Funnel, fj: &Funnel) -> bool {
    noncyclic_composable(fi, fj) && cyclic_margin(fi, fj) >= -1e-9
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct FunnelLibrary {
    pub funnels: Vec<Funnel>,
}

impl FunnelLibrary {
    pub fn len(&self) -> usize {
        self.funnels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.funnels.is_empty()
    }

    pub fn get(&self, id: usize) -> Option<&Funnel> {
        self.funnels.iter().find(|f| f.id == id)
    }

    /// Largest distance from a funnel's entrance center to a vertex of its
    /// encompassing shape.
    pub fn max_reach(&self) -> f64 {
        self.funnels
            .iter()
            .flat_map(|f| {
                let c = f.entrance_center;
                f.encompassing
                    .vertices()
                    .into_iter()
                    .map(move |v| ((v[0] - c[0]).powi(2) + (v[1] - c[1]).powi(2)).sqrt())
            })
            .fold(0.0, f64::max)
    }

    pub fn to_json(&self) -> Result<String, FunnelError> {
        let file = LibraryFile {
            version: LIBRARY_VERSION,
            funnels: self.funnels.iter().map(FunnelRecord::from).collect(),
        };
        Ok(serde_json::to_string(&file)?)
    }

    pub fn from_json(text: &str) -> Result<Self, FunnelError> {
        let file: LibraryFile = serde_json::from_str(text)?;
        if file.version != LIBRARY_VERSION {
            return Err(FunnelError::Format(format!("unsupported version {}", file.version)));
        }
        let funnels = file.funnels.into_iter().map(Funnel::try_from).collect::<Result<_, _>>()?;
        Ok(Self { funnels })
    }

    pub fn save(&self, path: &Path) -> Result<(), FunnelError> {
        std::fs::write(path, self.to_json()?)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self, FunnelError> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }
}

#[derive(Serialize, Deserialize)]
struct LibraryFile {
    version: u32,
    funnels: Vec<FunnelRecord>,
}

#[allow(non_snake_case)]
#[derive(Serialize, Deserialize)]
struct FunnelRecord {
    id: usize,
    A_I: Vec<[f64; 2]>,
    b_I: Vec<f64>,
    p_I: [f64; 2],
    I_nc: [f64; 2],
    p_X: [f64; 2],
    r_X: f64,
    X_nc: [f64; 2],
    A_E: Vec<[f64; 2]>,
    b_E: Vec<f64>,
    nominal: Vec<NominalPoint>,
}

#[derive(Serialize, Deserialize)]
struct NominalPoint {
    t: f64,
    x: [f64; 3],
    u: Option<[f64; 2]>,
}

fn rows2(p: &Polytope) -> Vec<[f64; 2]> {
    p.rows().map(|r| [r[0], r[1]]).collect()
}

fn polytope2(rows: &[[f64; 2]], b: &[f64]) -> Result<Polytope, FunnelError> {
    let rows: Vec<Vec<f64>> = rows.iter().map(|r| r.to_vec()).collect();
    Ok(Polytope::from_rows(&rows, b)?)
}

impl From<&Funnel> for FunnelRecord {
    fn from(f: &Funnel) -> Self {
        let dt = f.nominal.dt;
        let nominal = f
            .nominal
            .states
            .iter()
            .enumerate()
            .map(|(t, x)| NominalPoint {
                t: t as f64 * dt,
                x: *x,
                u: f.nominal.inputs.get(t).copied(),
            })
            .collect();
        FunnelRecord {
            id: f.id,
            A_I: rows2(&f.entrance),
            b_I: f.entrance.offsets().to_vec(),
            p_I: f.entrance_center,
            I_nc: f.entrance_heading,
            p_X: f.exit_center,
            r_X: f.exit_radius,
            X_nc: f.exit_heading,
            A_E: rows2(&f.encompassing),
            b_E: f.encompassing.offsets().to_vec(),
            nominal,
        }
    }
}

impl TryFrom<FunnelRecord> for Funnel {
    type Error = FunnelError;

    fn try_from(r: FunnelRecord) -> Result<Self, FunnelError> {
        if r.nominal.len() < 2 {
            return Err(FunnelError::Format(format!("funnel {} has no nominal steps", r.id)));
        }
        let dt = r.nominal[1].t - r.nominal[0].t;
        let states = r.nominal.iter().map(|p| p.x).collect();
        let inputs = r.nominal[..r.nominal.len() - 1]
            .iter()
            .map(|p| p.u.ok_or_else(|| FunnelError::Format(format!("funnel {}: missing input", r.id))))
            .collect::<Result<_, _>>()?;
        Ok(Funnel {
            id: r.id,
            entrance: polytope2(&r.A_I, &r.b_I)?,
            entrance_center: r.p_I,
            entrance_heading: r.I_nc,
            exit_center: r.p_X,
            exit_radius: r.r_X,
            exit_heading: r.X_nc,
            encompassing: polytope2(&r.A_E, &r.b_E)?,
            nominal: Trajectory::new(states, inputs, dt),
        })
    }
}

/// Constant-curvature base shape of a funnel template.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FunnelShape {
    pub curvature: f64,
    pub epochs: usize,
}

/// Straight segment plus a gentle and a sharp arc each way. Arc turns are
/// multiples of the heading grid so funnels chain on it.
pub fn standard_shapes(config: &CalibrationConfig, dt: f64) -> Vec<FunnelShape> {
    let step = config.speed * dt;
    let arc = |kappa: f64, turn: f64| FunnelShape {
        curvature: kappa,
        epochs: (turn / kappa / step).round() as usize,
    };
    let gentle = arc(config.gentle_curvature, config.gentle_turn);
    let sharp = arc(config.sharp_curvature, config.sharp_turn);
    // exact turn angle after rounding the epoch count
    let exact = |s: FunnelShape, turn: f64| FunnelShape {
        curvature: turn / (s.epochs as f64 * step),
        epochs: s.epochs,
    };
    let gentle = exact(gentle, config.gentle_turn);
    let sharp = exact(sharp, config.sharp_turn);
    vec![
        FunnelShape {
            curvature: 0.0,
            epochs: (config.straight_length / step).round() as usize,
        },
        gentle,
        FunnelShape {
            curvature: -gentle.curvature,
            ..gentle
        },
        sharp,
        FunnelShape {
            curvature: -sharp.curvature,
            ..sharp
        },
    ]
}

/// Per-step disturbance bound the default library is calibrated for.
pub const DEFAULT_DISTURBANCE: [f64; 3] = [7.5e-5, 7.5e-5, 1.5e-4];

pub fn default_disturbance() -> DisturbanceModel<3> {
    DisturbanceModel::symmetric_box(DEFAULT_DISTURBANCE).expect("default disturbance box is valid")
}

/// Noiseless rollout of a constant input from `start`.
pub fn constant_input_rollout(model: &Bicycle, start: [f64; 3], input: [f64; 2], epochs: usize) -> Trajectory {
    let mut states = Vec::with_capacity(epochs + 1);
    states.push(start);
    for _ in 0..epochs {
        let next = bicycle_step(states.last().unwrap(), &input, &[0.0; 3], model.dt);
        states.push(next);
    }
    Trajectory::new(states, vec![input; epochs], model.dt)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CalibrationConfig {
    pub speed: f64,
    pub headings: usize,
    /// Inradius of the octagonal cyclic entrance.
    pub entrance_inradius: f64,
    /// Half width of the heading entrance interval.
    pub entrance_heading_half_width: f64,
    pub straight_length: f64,
    pub gentle_curvature: f64,
    pub gentle_turn: f64,
    pub sharp_curvature: f64,
    pub sharp_turn: f64,
    pub trials: usize,
    pub validation_trials: usize,
    pub safety_factor: f64,
    pub encompassing_facets: usize,
    pub seed: u64,
}

impl Default for CalibrationConfig {
    fn default() -> Self {
        Self {
            speed: 0.5,
            headings: 16,
            entrance_inradius: 0.15,
            entrance_heading_half_width: 0.3,
            straight_length: 1.5,
            gentle_curvature: 0.45,
            gentle_turn: PI / 4.0,
            sharp_curvature: 0.6,
            sharp_turn: PI / 2.0,
            trials: 200,
            validation_trials: 100,
            safety_factor: 1.2,
            encompassing_facets: 12,
            seed: 7,
        }
    }
}

impl CalibrationConfig {
    /// Entrance shared by every funnel (fixed orientation so that terminal
    /// reachability margins computed once serve any library funnel).
    pub fn entrance(&self) -> Polytope {
        Polytope::regular_polygon(8, self.entrance_inradius, 0.0)
    }
}

/// Statistics gathered over calibration rollouts, relative to the nominal.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize)]
pub struct TubeStats {
    pub max_deviation: f64,
    pub max_terminal_error: f64,
    pub terminal_heading: [f64; 2],
}

impl TubeStats {
    fn new() -> Self {
        Self {
            max_deviation: 0.0,
            max_terminal_error: 0.0,
            terminal_heading: [0.0, 0.0],
        }
    }

    fn absorb(&mut self, errors: &[Vector3<f64>]) {
        for e in errors {
            self.max_deviation = self.max_deviation.max(e.xy().norm());
        }
        let last = errors.last().unwrap();
        self.max_terminal_error = self.max_terminal_error.max(last.xy().norm());
        self.terminal_heading[0] = self.terminal_heading[0].min(last[2]);
        self.terminal_heading[1] = self.terminal_heading[1].max(last[2]);
    }
}

fn sample_entrance<R: Rng>(rng: &mut R, entrance: &Polytope, half_heading: f64) -> Vector3<f64> {
    let r = entrance.offsets().iter().fold(0.0f64, |m, b| m.max(*b)) / (PI / 8.0).cos();
    loop {
        let p = [rng.gen_range(-r..=r), rng.gen_range(-r..=r)];
        if entrance.contains(&p, 0.0) {
            return Vector3::new(p[0], p[1], rng.gen_range(-half_heading..=half_heading));
        }
    }
}

/// Octagon vertices combined with both heading extremes.
fn extreme_entries(entrance: &Polytope, half_heading: f64) -> Vec<Vector3<f64>> {
    entrance
        .vertices()
        .iter()
        .flat_map(|v| [-1.0, 1.0].map(|s| Vector3::new(v[0], v[1], s * half_heading)))
        .collect()
}

fn random_disturbances<R: Rng>(rng: &mut R, w: &DisturbanceModel<3>, n: usize) -> Vec<Vector3<f64>> {
    (0..n)
        .map(|_| {
            if rng.gen_bool(0.5) {
                w.sample_vertex(rng)
            } else {
                w.sample_uniform(rng)
            }
        })
        .collect()
}

fn adversarial_sequences(
    ed: &TrackingErrorDynamics<'_>,
    w: &DisturbanceModel<3>,
    e0: &Vector3<f64>,
    horizons: &[usize],
) -> Result<Vec<Vec<Vector3<f64>>>, FunnelError> {
    let mut out = Vec::new();
    let mut dirs: Vec<Vector3<f64>> = (0..8)
        .map(|k| {
            let a = k as f64 * PI / 4.0;
            Vector3::new(a.cos(), a.sin(), 0.0)
        })
        .collect();
    dirs.push(Vector3::new(0.0, 0.0, 1.0));
    dirs.push(Vector3::new(0.0, 0.0, -1.0));
    for &tau in horizons {
        for d in &dirs {
            let q = FrsQuery {
                direction: *d,
                offset: 0.0,
                horizon: tau,
                initial_error: *e0,
            };
            let mut seq = worst_case(ed, w, &q, &DdpSettings::default())?.disturbances;
            // keep pushing the same way after tau
            let tail = *seq.last().unwrap();
            seq.resize(ed.horizon(), tail);
            out.push(seq);
        }
    }
    Ok(out)
}

/// Tracking-error statistics of closed-loop rollouts along `nominal` that
/// start in the configured entrance: `config.trials` Monte Carlo rollouts
/// (the first ones from the extreme entrance states) and adversarial
/// sequences from every extreme entrance state.
pub fn measure_tube<R: Rng>(
    model: &Bicycle,
    controller: &PdTracker,
    nominal: &Trajectory,
    w: &DisturbanceModel<3>,
    config: &CalibrationConfig,
    rng: &mut R,
) -> Result<TubeStats, FunnelError> {
    let ed = TrackingErrorDynamics::new(model, controller, nominal);
    let horizon = nominal.horizon();
    let entrance = config.entrance();
    let half = config.entrance_heading_half_width;
    let extremes = extreme_entries(&entrance, half);
    let mut stats = TubeStats::new();
    for trial in 0..config.trials {
        let e0 = if trial < extremes.len() {
            extremes[trial]
        } else {
            sample_entrance(rng, &entrance, half)
        };
        let seq = random_disturbances(rng, w, horizon);
        stats.absorb(&rollout(&ed, &e0, &seq));
    }
    for e0 in &extremes {
        for seq in adversarial_sequences(&ed, w, e0, &[horizon / 2, horizon])? {
            stats.absorb(&rollout(&ed, e0, &seq));
        }
    }
    Ok(stats)
}

/// Calibrate one funnel around `nominal` by Monte Carlo and adversarial
/// rollouts, then validate with fresh rollouts from a grid over the entrance.
pub fn calibrate_funnel(
    id: usize,
    model: &Bicycle,
    controller: &PdTracker,
    nominal: &Trajectory,
    w: &DisturbanceModel<3>,
    config: &CalibrationConfig,
) -> Result<(Funnel, TubeStats), FunnelError> {
    let fail = |reason: String| FunnelError::CalibrationFailure { id, reason };
    if config.trials < 100 {
        return Err(fail(format!("need at least 100 trials, got {}", config.trials)));
    }
    for u in &nominal.inputs {
        if u[0] < model.input_lower[0] || u[0] > model.input_upper[0] || u[1].abs() > model.input_upper[1] {
            return Err(fail("nominal violates input bounds".into()));
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed ^ (id as u64).wrapping_mul(0x9e37_79b9_7f4a_7c15));
    let stats = measure_tube(model, controller, nominal, w, config, &mut rng)?;
    let entrance = config.entrance();
    let half = config.entrance_heading_half_width;
    let k = config.safety_factor;
    let exit_radius = k * stats.max_terminal_error;
    let end = *nominal.end();
    let exit_heading = [end[2] + k * stats.terminal_heading[0], end[2] + k * stats.terminal_heading[1]];
    let start = *nominal.start();
    let inflate = k * stats.max_deviation;
    let n_facets = config.encompassing_facets.max(3);
    let mut rows = Vec::with_capacity(n_facets);
    let mut offsets = Vec::with_capacity(n_facets);
    for j in 0..n_facets {
        let a = 2.0 * PI * j as f64 / n_facets as f64;
        let d = [a.cos(), a.sin()];
        let support = nominal
            .positions()
            .map(|p| d[0] * p[0] + d[1] * p[1])
            .fold(f64::NEG_INFINITY, f64::max);
        rows.push(d.to_vec());
        offsets.push(support + inflate);
    }
    let funnel = Funnel {
        id,
        entrance,
        entrance_center: [start[0], start[1]],
        entrance_heading: [start[2] - half, start[2] + half],
        exit_center: [end[0], end[1]],
        exit_radius,
        exit_heading,
        encompassing: Polytope::from_rows(&rows, &offsets)?,
        nominal: nominal.clone(),
    };

    if exit_radius > config.entrance_inradius {
        return Err(fail(format!(
            "exit radius {exit_radius:.4} does not fit the entrance inradius {:.4}",
            config.entrance_inradius
        )));
    }
    let heading_spread = k * stats.terminal_heading[0].abs().max(stats.terminal_heading[1].abs());
    if heading_spread > half {
        return Err(fail(format!("exit heading spread {heading_spread:.4} exceeds the entrance half width {half:.4}")));
    }

    let violations = validate_funnel(&funnel, model, controller, w, config.validation_trials, &mut rng);
    if violations > 0 {
        return Err(fail(format!("{violations} validation rollouts left the funnel")));
    }
    Ok((funnel, stats))
}

/// Fresh rollouts from a grid over the entrance (positions on a 5x5 grid
/// clipped to the octagon, three headings) plus random starts, with random
/// disturbances; returns how many left `E` or missed the exit set.
pub fn validate_funnel<R: Rng>(
    funnel: &Funnel,
    model: &Bicycle,
    controller: &PdTracker,
    w: &DisturbanceModel<3>,
    random_trials: usize,
    rng: &mut R,
) -> usize {
    let ed = TrackingErrorDynamics::new(model, controller, &funnel.nominal);
    let half = 0.5 * (funnel.entrance_heading[1] - funnel.entrance_heading[0]);
    let r = funnel.entrance.offsets().iter().fold(0.0f64, |m, b| m.max(*b)) / (PI / 8.0).cos();
    let mut starts = Vec::new();
    for i in 0..5 {
        for j in 0..5 {
            let p = [-r + 2.0 * r * i as f64 / 4.0, -r + 2.0 * r * j as f64 / 4.0];
            if funnel.entrance.contains(&p, 0.0) {
                for h in [-half, 0.0, half] {
                    starts.push(Vector3::new(p[0], p[1], h));
                }
            }
        }
    }
    for _ in 0..random_trials {
        starts.push(sample_entrance(rng, &funnel.entrance, half));
    }
    let mut violations = 0;
    for e0 in starts {
        let seq = random_disturbances(rng, w, ed.horizon());
        if !rollout_stays_in_funnel(funnel, &rollout(&ed, &e0, &seq)) {
            violations += 1;
        }
    }
    violations
}

/// Checks a rollout given as errors relative to the funnel's nominal.
pub fn rollout_stays_in_funnel(funnel: &Funnel, errors: &[Vector3<f64>]) -> bool {
    let inside = funnel.nominal.states.iter().zip(errors).all(|(r, e)| {
        let p = [r[0] + e[0], r[1] + e[1]];
        funnel.encompassing.contains(&p, 1e-9)
    });
    let end = funnel.nominal.end();
    let e = errors.last().unwrap();
    inside && funnel.contains_exit_state(&[end[0] + e[0], end[1] + e[1], end[2] + e[2]], 1e-9)
}

/// Nominal set for the standard library: every base shape at every heading
/// of the heading grid, all starting at the origin.
pub fn standard_nominals(model: &Bicycle, config: &CalibrationConfig) -> Vec<Trajectory> {
    let shapes = standard_shapes(config, model.dt);
    let mut out = Vec::with_capacity(shapes.len() * config.headings);
    for h in 0..config.headings {
        let heading = wrap_angle(2.0 * PI * h as f64 / config.headings as f64);
        for s in &shapes {
            out.push(constant_input_rollout(model, [0.0, 0.0, heading], [config.speed, s.curvature], s.epochs));
        }
    }
    out
}

/// Calibrate a funnel per nominal; ids follow the nominal order.
pub fn calibrate_library(
    model: &Bicycle,
    controller: &PdTracker,
    nominals: &[Trajectory],
    w: &DisturbanceModel<3>,
    config: &CalibrationConfig,
) -> Result<FunnelLibrary, FunnelError> {
    let funnels = nominals
        .iter()
        .enumerate()
        .map(|(id, n)| calibrate_funnel(id, model, controller, n, w, config).map(|(f, _)| f))
        .collect::<Result<_, _>>()?;
    Ok(FunnelLibrary { funnels })
}

pub fn standard_library(
    model: &Bicycle,
    controller: &PdTracker,
    w: &DisturbanceModel<3>,
    config: &CalibrationConfig,
) -> Result<FunnelLibrary, FunnelError> {
    calibrate_library(model, controller, &standard_nominals(model, config), w, config)
}

/// Epoch-wise error of a full closed-loop rollout tracking the funnel's
/// nominal from `x0` (used by simulations outside calibration).
pub fn track_errors(
    model: &Bicycle,
    controller: &PdTracker,
    funnel: &Funnel,
    x0: &[f64; 3],
    disturbances: &[Vector3<f64>],
) -> Vec<Vector3<f64>> {
    let ed = TrackingErrorDynamics::new(model, controller, &funnel.nominal);
    let s = funnel.nominal.start();
    let e0 = Vector3::new(x0[0] - s[0], x0[1] - s[1], wrap_angle(x0[2] - s[2]));
    let n = disturbances.len().min(ed.horizon());
    rollout(&ed, &e0, &disturbances[..n])
}
