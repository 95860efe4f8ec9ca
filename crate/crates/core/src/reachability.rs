//! Adversarial forward reachability along a reference trajectory.
//!
//! The worst disturbance sequence for a linear functional of the terminal
//! error is searched with a first-order DDP sweep: simulate forward, pull the
//! objective gradient back through the closed-loop Jacobians, then move each
//! disturbance to the best point of the disturbance set for its gradient.
//! The result is always attained by an explicit admissible sequence, so it
//! is a lower bound on the true maximum.

use nalgebra::{DMatrix, DVector, SVector};
use rand::Rng;
use serde::Serialize;
use thiserror::Error;

use crate::convex::{solve_qp, ConvexError, Polytope, QpProblem, VertexGraph};
use crate::dynamics::ErrorDynamics;

#[derive(Debug, Clone, Error, PartialEq)]
pub enum ReachabilityError {
    #[error("disturbance set is invalid: {0}")]
    InvalidDisturbance(String),
    #[error("terminal heading can leave the entrance interval (worst excess {0:.4})")]
    NoncyclicViolation(f64),
    #[error("horizon {tau} outside 1..={horizon}")]
    InvalidHorizon { tau: usize, horizon: usize },
    #[error(transparent)]
    Convex(#[from] ConvexError),
}

/// Bounded disturbance set `W = {w | A_w w <= b_w}` with its vertex graph.
#[derive(Debug, Clone)]
pub struct DisturbanceModel<const N: usize> {
    pub polytope: Polytope,
    pub graph: VertexGraph,
}

impl<const N: usize> DisturbanceModel<N> {
    pub fn new(polytope: Polytope) -> Result<Self, ReachabilityError> {
        if polytope.dim() != N {
            return Err(ReachabilityError::InvalidDisturbance(format!(
                "dimension {} but the error state has {N}",
                polytope.dim()
            )));
        }
        if !polytope.contains(&[0.0; N], 1e-12) {
            return Err(ReachabilityError::InvalidDisturbance("does not contain 0".into()));
        }
        let graph = polytope.vertex_graph();
        if graph.vertices.is_empty() {
            return Err(ReachabilityError::InvalidDisturbance("no vertices (unbounded?)".into()));
        }
        Ok(Self { polytope, graph })
    }

    /// Symmetric box `|w_k| <= half_widths[k]`.
    pub fn symmetric_box(half_widths: [f64; N]) -> Result<Self, ReachabilityError> {
        let lo: Vec<f64> = half_widths.iter().map(|h| -h).collect();
        Self::new(Polytope::axis_box(&lo, &half_widths))
    }

    pub fn scaled(&self, factor: f64) -> Result<Self, ReachabilityError> {
        let b: Vec<f64> = self.polytope.offsets().iter().map(|b| b * factor).collect();
        let a: Vec<f64> = self.polytope.rows().flatten().copied().collect();
        Self::new(Polytope::new(N, a, b)?)
    }

    pub fn vertex(&self, i: usize) -> SVector<f64, N> {
        SVector::from_column_slice(&self.graph.vertices[i])
    }

    /// Uniform sample by rejection from the vertex bounding box.
    pub fn sample_uniform<R: Rng + ?Sized>(&self, rng: &mut R) -> SVector<f64, N> {
        let mut lo = [f64::INFINITY; N];
        let mut hi = [f64::NEG_INFINITY; N];
        for v in &self.graph.vertices {
            for k in 0..N {
                lo[k] = lo[k].min(v[k]);
                hi[k] = hi[k].max(v[k]);
            }
        }
        loop {
            let w = SVector::<f64, N>::from_fn(|k, _| {
                if hi[k] > lo[k] {
                    rng.gen_range(lo[k]..=hi[k])
                } else {
                    lo[k]
                }
            });
            if self.polytope.contains(w.as_slice(), 1e-12) {
                return w;
            }
        }
    }

    pub fn sample_vertex<R: Rng + ?Sized>(&self, rng: &mut R) -> SVector<f64, N> {
        self.vertex(rng.gen_range(0..self.graph.vertices.len()))
    }

    /// `argmax_{w in W} g^T w - alpha ||w - current||^2`; `start` seeds the
    /// hill climb when `alpha == 0` and is updated to the chosen vertex.
    fn ascent_step(
        &self,
        g: &SVector<f64, N>,
        current: &SVector<f64, N>,
        alpha: f64,
        start: &mut usize,
    ) -> Result<SVector<f64, N>, ReachabilityError> {
        if alpha == 0.0 {
            *start = self.graph.hill_climb(g.as_slice(), *start);
            return Ok(self.vertex(*start));
        }
        let h = DMatrix::<f64>::identity(N, N) * (2.0 * alpha);
        let lin = -DVector::from_column_slice((g + current * (2.0 * alpha)).as_slice());
        let qp = QpProblem::new(h, lin, self.polytope.clone())?;
        let x = solve_qp(&qp, Some(current.as_slice()))?;
        Ok(SVector::from_column_slice(&x))
    }
}

/// Linear objective `a(e) = direction^T e + offset` on the error at epoch
/// `horizon`, starting from `initial_error`.
#[derive(Debug, Clone)]
pub struct FrsQuery<const N: usize> {
    pub direction: SVector<f64, N>,
    pub offset: f64,
    pub horizon: usize,
    pub initial_error: SVector<f64, N>,
}

#[derive(Debug, Clone)]
pub struct WorstCase<const N: usize> {
    pub value: f64,
    pub disturbances: Vec<SVector<f64, N>>,
    pub iterations: usize,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DdpSettings {
    pub max_iterations: usize,
    pub alpha: f64,
    pub min_improvement: f64,
}

impl Default for DdpSettings {
    fn default() -> Self {
        Self {
            max_iterations: 10,
            alpha: 0.0,
            min_improvement: 1e-9,
        }
    }
}

/// Errors `e(0..=w.len())` under the disturbance sequence `w`.
pub fn rollout<const N: usize, D: ErrorDynamics<N> + ?Sized>(
    ed: &D,
    e0: &SVector<f64, N>,
    w: &[SVector<f64, N>],
) -> Vec<SVector<f64, N>> {
    let mut es = Vec::with_capacity(w.len() + 1);
    es.push(*e0);
    for (t, wt) in w.iter().enumerate() {
        let next = ed.step(t, &es[t]) + wt;
        es.push(next);
    }
    es
}

/// Backward pass: `g[t] = d a(e(tau)) / d w(t)` for `t < tau = errors.len() - 1`.
pub fn backward_gradients<const N: usize, D: ErrorDynamics<N> + ?Sized>(
    ed: &D,
    errors: &[SVector<f64, N>],
    direction: &SVector<f64, N>,
) -> Vec<SVector<f64, N>> {
    let tau = errors.len() - 1;
    let mut g = vec![SVector::zeros(); tau];
    if tau == 0 {
        return g;
    }
    g[tau - 1] = *direction;
    for t in (0..tau - 1).rev() {
        g[t] = ed.jacobian(t + 1, &errors[t + 1]).transpose() * g[t + 1];
    }
    g
}

/// Worst admissible disturbance sequence for one query.
pub fn worst_case<const N: usize, D: ErrorDynamics<N> + ?Sized>(
    ed: &D,
    w_model: &DisturbanceModel<N>,
    query: &FrsQuery<N>,
    settings: &DdpSettings,
) -> Result<WorstCase<N>, ReachabilityError> {
    let tau = query.horizon;
    if tau == 0 || tau > ed.horizon() {
        return Err(ReachabilityError::InvalidHorizon {
            tau,
            horizon: ed.horizon(),
        });
    }
    let objective = |e: &SVector<f64, N>| query.direction.dot(e) + query.offset;
    let mut w = vec![SVector::<f64, N>::zeros(); tau];
    let mut errors = rollout(ed, &query.initial_error, &w);
    let mut best = WorstCase {
        value: objective(&errors[tau]),
        disturbances: w.clone(),
        iterations: 0,
    };
    let mut starts = vec![0usize; tau];
    for it in 1..=settings.max_iterations.max(1) {
        let g = backward_gradients(ed, &errors, &query.direction);
        for t in 0..tau {
            w[t] = w_model.ascent_step(&g[t], &w[t], settings.alpha, &mut starts[t])?;
        }
        errors = rollout(ed, &query.initial_error, &w);
        let value = objective(&errors[tau]);
        best.iterations = it;
        if value > best.value + settings.min_improvement {
            best.value = value;
            best.disturbances.clone_from(&w);
        } else {
            if value > best.value {
                best.value = value;
                best.disturbances.clone_from(&w);
            }
            break;
        }
    }
    Ok(best)
}

/// Worst values of a set of linear functionals of the error at `tau`,
/// `max_w direction_k^T e(tau)`.
pub fn terminal_extents<const N: usize, D: ErrorDynamics<N> + ?Sized>(
    ed: &D,
    w_model: &DisturbanceModel<N>,
    e0: &SVector<f64, N>,
    directions: &[SVector<f64, N>],
    tau: usize,
    settings: &DdpSettings,
) -> Result<Vec<f64>, ReachabilityError> {
    directions
        .iter()
        .map(|d| {
            let q = FrsQuery {
                direction: *d,
                offset: 0.0,
                horizon: tau,
                initial_error: *e0,
            };
            worst_case(ed, w_model, &q, settings).map(|r| r.value)
        })
        .collect()
}

/// Entrance of the first loop funnel in the shape the reachability check
/// needs: cyclic polytope relative to its center and a heading interval.
#[derive(Debug, Clone)]
pub struct EntranceSpec<'a> {
    pub cyclic: &'a Polytope,
    pub center: [f64; 2],
    pub heading: [f64; 2],
}

#[derive(Debug, Clone, Serialize)]
pub struct FrsResult {
    /// Worst value of `a_i^T Pi(e(T))` per entrance facet.
    pub worst_values: Vec<f64>,
    /// `b_i - worst_values[i]`: the terminal set fits the entrance translated
    /// by `dp` iff `A_I (Pi(x_r(T)) - p_I - dp) <= b_frs`.
    pub b_frs: Vec<f64>,
    /// Worst terminal heading range `[min, max]` (absolute).
    pub heading_range: [f64; 2],
    pub collision_safe: bool,
}

impl FrsResult {
    /// Slack of each facet for the entrance centered at `center`, i.e. the
    /// margin left at `dp = 0`; negative entries mean the entrance must move.
    pub fn slack_at(&self, entrance: &Polytope, end_point: [f64; 2], center: [f64; 2]) -> Vec<f64> {
        let rel = [end_point[0] - center[0], end_point[1] - center[1]];
        entrance
            .rows()
            .zip(&self.b_frs)
            .map(|(a, b)| b - (a[0] * rel[0] + a[1] * rel[1]))
            .collect()
    }
}

fn heading_direction(sign: f64) -> SVector<f64, 3> {
    SVector::<f64, 3>::new(0.0, 0.0, sign)
}

/// Worst terminal heading interval `[min, max]` (absolute) at `tau`.
pub fn heading_range<D: ErrorDynamics<3> + ?Sized>(
    ed: &D,
    w_model: &DisturbanceModel<3>,
    e0: &SVector<f64, 3>,
    reference_heading: f64,
    tau: usize,
    settings: &DdpSettings,
) -> Result<[f64; 2], ReachabilityError> {
    let ext = terminal_extents(ed, w_model, e0, &[heading_direction(1.0), heading_direction(-1.0)], tau, settings)?;
    Ok([reference_heading - ext[1], reference_heading + ext[0]])
}

/// FRS-to-entrance check at the end of the reference. Fails when the heading
/// can leave the entrance interval; otherwise returns the cyclic margins.
pub fn check_composability<D: ErrorDynamics<3> + ?Sized>(
    ed: &D,
    w_model: &DisturbanceModel<3>,
    e0: &SVector<f64, 3>,
    reference_end: &[f64; 3],
    entrance: &EntranceSpec<'_>,
    settings: &DdpSettings,
) -> Result<FrsResult, ReachabilityError> {
    let tau = ed.horizon();
    let mid = 0.5 * (entrance.heading[0] + entrance.heading[1]);
    let heading = unwrap_near(reference_end[2], mid);
    let range = heading_range(ed, w_model, e0, heading, tau, settings)?;
    let excess = (range[1] - entrance.heading[1]).max(entrance.heading[0] - range[0]);
    if excess > 0.0 {
        return Err(ReachabilityError::NoncyclicViolation(excess));
    }
    let directions: Vec<SVector<f64, 3>> = entrance
        .cyclic
        .rows()
        .map(|a| SVector::<f64, 3>::new(a[0], a[1], 0.0))
        .collect();
    let worst_values = terminal_extents(ed, w_model, e0, &directions, tau, settings)?;
    let b_frs = entrance
        .cyclic
        .offsets()
        .iter()
        .zip(&worst_values)
        .map(|(b, v)| b - v)
        .collect();
    Ok(FrsResult {
        worst_values,
        b_frs,
        heading_range: range,
        collision_safe: true,
    })
}

/// Outcome of the corridor check: the tightest facet margin found and where.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CollisionReport {
    pub safe: bool,
    pub min_margin: f64,
    pub facet: usize,
    pub epoch: usize,
}

/// Worst-case corridor check: for every epoch and corridor facet the
/// adversarial position must stay inside the corridor.
pub fn check_collision<D: ErrorDynamics<3> + ?Sized>(
    ed: &D,
    w_model: &DisturbanceModel<3>,
    e0: &SVector<f64, 3>,
    reference_positions: &[[f64; 2]],
    corridor: &Polytope,
    settings: &DdpSettings,
) -> Result<CollisionReport, ReachabilityError> {
    let mut report = CollisionReport {
        safe: true,
        min_margin: f64::INFINITY,
        facet: 0,
        epoch: 0,
    };
    let horizon = ed.horizon().min(reference_positions.len().saturating_sub(1));
    for (i, a) in corridor.rows().enumerate() {
        let b = corridor.offset(i);
        let direction = SVector::<f64, 3>::new(a[0], a[1], 0.0);
        let margin0 = b - (a[0] * (reference_positions[0][0] + e0[0]) + a[1] * (reference_positions[0][1] + e0[1]));
        record(&mut report, margin0, i, 0);
        for tau in 1..=horizon {
            let r = reference_positions[tau];
            let q = FrsQuery {
                direction,
                offset: a[0] * r[0] + a[1] * r[1],
                horizon: tau,
                initial_error: *e0,
            };
            let worst = worst_case(ed, w_model, &q, settings)?;
            record(&mut report, b - worst.value, i, tau);
        }
    }
    report.safe = report.min_margin >= 0.0;
    Ok(report)
}

fn record(report: &mut CollisionReport, margin: f64, facet: usize, epoch: usize) {
    if margin < report.min_margin {
        report.min_margin = margin;
        report.facet = facet;
        report.epoch = epoch;
    }
}

/// Angle equivalent to `a` closest to `near`.
pub fn unwrap_near(a: f64, near: f64) -> f64 {
    near + crate::dynamics::wrap_angle(a - near)
}

/// Per-epoch worst-case extents of the cyclic error along `directions`,
/// evaluated at every `stride`-th epoch; used for envelope plots.
#[derive(Debug, Clone, Serialize)]
pub struct EnvelopeSlice {
    pub t: usize,
    pub center: [f64; 2],
    pub directions: Vec<[f64; 2]>,
    pub extents: Vec<f64>,
}

pub fn frs_envelope<D: ErrorDynamics<3> + ?Sized>(
    ed: &D,
    w_model: &DisturbanceModel<3>,
    e0: &SVector<f64, 3>,
    reference_positions: &[[f64; 2]],
    n_directions: usize,
    stride: usize,
    settings: &DdpSettings,
) -> Result<Vec<EnvelopeSlice>, ReachabilityError> {
    let dirs2: Vec<[f64; 2]> = (0..n_directions)
        .map(|k| {
            let ang = 2.0 * std::f64::consts::PI * k as f64 / n_directions as f64;
            [ang.cos(), ang.sin()]
        })
        .collect();
    let dirs: Vec<SVector<f64, 3>> = dirs2.iter().map(|d| SVector::<f64, 3>::new(d[0], d[1], 0.0)).collect();
    let horizon = ed.horizon().min(reference_positions.len().saturating_sub(1));
    let mut out = Vec::new();
    let mut t = stride.max(1);
    while t <= horizon {
        let extents = terminal_extents(ed, w_model, e0, &dirs, t, settings)?;
        out.push(EnvelopeSlice {
            t,
            center: reference_positions[t],
            directions: dirs2.clone(),
            extents,
        });
        if t == horizon {
            break;
        }
        t = (t + stride).min(horizon);
    }
    Ok(out)
}

/// Convex outline of one envelope slice (intersection of the support
/// halfplanes), as polygon vertices.
pub fn envelope_outline(slice: &EnvelopeSlice) -> Vec<[f64; 2]> {
    let rows: Vec<Vec<f64>> = slice.directions.iter().map(|d| d.to_vec()).collect();
    let b: Vec<f64> = slice
        .directions
        .iter()
        .zip(&slice.extents)
        .map(|(d, e)| e + d[0] * slice.center[0] + d[1] * slice.center[1])
        .collect();
    match Polytope::from_rows(&rows, &b) {
        Ok(p) => p.vertices().into_iter().map(|v| [v[0], v[1]]).collect(),
        Err(_) => Vec::new(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dynamics::{Bicycle, LinearErrorDynamics, PdTracker, TrackingErrorDynamics};
    use crate::trajectory::Trajectory;
    use nalgebra::{Matrix1, Matrix3, SMatrix, Vector1, Vector3};

    fn scalar_model() -> (LinearErrorDynamics<1>, DisturbanceModel<1>) {
        (
            LinearErrorDynamics::time_invariant(Matrix1::new(0.5), 3),
            DisturbanceModel::symmetric_box([1.0]).unwrap(),
        )
    }

    fn scalar_query(tau: usize) -> FrsQuery<1> {
        FrsQuery {
            direction: Vector1::new(1.0),
            offset: 0.0,
            horizon: tau,
            initial_error: Vector1::zeros(),
        }
    }

    #[test]
    fn scalar_geometric_sum() {
        let (ed, w) = scalar_model();
        let r = worst_case(&ed, &w, &scalar_query(3), &DdpSettings::default()).unwrap();
        assert!((r.value - 1.75).abs() <= 1e-12);
        assert!(r.disturbances.iter().all(|w| w[0] == 1.0));
    }

    #[test]
    fn degenerate_disturbance_set() {
        let a = Matrix3::new(0.9, 0.1, 0.0, 0.0, 0.8, 0.2, 0.1, 0.0, 0.7);
        let ed = LinearErrorDynamics::time_invariant(a, 5);
        let zero = DisturbanceModel::<3>::new(Polytope::axis_box(&[0.0; 3], &[0.0; 3])).unwrap();
        let e0 = Vector3::new(1.0, -0.5, 0.2);
        let q = FrsQuery {
            direction: Vector3::new(1.0, 2.0, 0.0),
            offset: 0.3,
            horizon: 5,
            initial_error: e0,
        };
        let r = worst_case(&ed, &zero, &q, &DdpSettings::default()).unwrap();
        let expect = q.direction.dot(&(a.pow(5) * e0)) + 0.3;
        assert!((r.value - expect).abs() < 1e-12);
    }

    #[test]
    fn collision_scalar_corridor() {
        // Scalar system embedded in the first error coordinate.
        let mut a = SMatrix::<f64, 3, 3>::zeros();
        a[(0, 0)] = 0.5;
        let ed = LinearErrorDynamics::time_invariant(a, 3);
        let w = DisturbanceModel::<3>::new(Polytope::axis_box(&[-1.0, 0.0, 0.0], &[1.0, 0.0, 0.0])).unwrap();
        let refs = vec![[0.0, 0.0]; 4];
        let wide = Polytope::axis_box(&[-10.0, -1.0], &[2.0, 1.0]);
        let tight = Polytope::axis_box(&[-10.0, -1.0], &[1.5, 1.0]);
        let s = DdpSettings::default();
        assert!(check_collision(&ed, &w, &Vector3::zeros(), &refs, &wide, &s).unwrap().safe);
        let r = check_collision(&ed, &w, &Vector3::zeros(), &refs, &tight, &s).unwrap();
        assert!(!r.safe);
        assert!((r.min_margin + 0.25).abs() < 1e-12);
    }

    fn straight(n: usize) -> Trajectory {
        let states = (0..=n).map(|k| [0.005 * k as f64, 0.0, 0.0]).collect();
        Trajectory::new(states, vec![[0.5, 0.0]; n], 0.01)
    }

    #[test]
    fn zero_disturbance_margin_equals_entrance() {
        let model = Bicycle::default();
        let ctrl = PdTracker::default();
        let reference = straight(50);
        let ed = TrackingErrorDynamics::new(&model, &ctrl, &reference);
        let zero = DisturbanceModel::<3>::new(Polytope::axis_box(&[0.0; 3], &[0.0; 3])).unwrap();
        let oct = Polytope::regular_polygon(8, 0.1, 0.0);
        let spec = EntranceSpec {
            cyclic: &oct,
            center: [0.25, 0.0],
            heading: [-0.3, 0.3],
        };
        let r = check_composability(&ed, &zero, &Vector3::zeros(), reference.end(), &spec, &DdpSettings::default())
            .unwrap();
        for (m, b) in r.b_frs.iter().zip(oct.offsets()) {
            assert!((m - b).abs() < 1e-12);
        }
        let far = r.slack_at(&oct, [0.25, 0.0], [1.25, 0.0]);
        assert!(far.iter().any(|s| *s < 0.0));
    }

    #[test]
    fn heading_outside_entrance_rejected() {
        let model = Bicycle::default();
        let ctrl = PdTracker::default();
        let reference = straight(50);
        let ed = TrackingErrorDynamics::new(&model, &ctrl, &reference);
        let w = DisturbanceModel::symmetric_box([5e-4, 5e-4, 1e-3]).unwrap();
        let oct = Polytope::regular_polygon(8, 0.1, 0.0);
        let spec = EntranceSpec {
            cyclic: &oct,
            center: [0.25, 0.0],
            heading: [0.5, 1.0],
        };
        let r = check_composability(&ed, &w, &Vector3::zeros(), reference.end(), &spec, &DdpSettings::default());
        assert!(matches!(r, Err(ReachabilityError::NoncyclicViolation(_))));
    }

    #[test]
    fn invalid_horizon() {
        let (ed, w) = scalar_model();
        assert!(worst_case(&ed, &w, &scalar_query(0), &DdpSettings::default()).is_err());
        assert!(worst_case(&ed, &w, &scalar_query(4), &DdpSettings::default()).is_err());
    }
}
