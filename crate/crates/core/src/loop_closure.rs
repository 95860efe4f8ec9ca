//! Translation bounds that keep each funnel collision-free, and the closure
//! QP that shifts a loop candidate's funnels until every link composes.

use nalgebra::{DMatrix, DVector};
use serde::Serialize;
use thiserror::Error;

use crate::convex::{closest_points, smallest_enclosing_ball, ConvexError, Polytope, QpProblem};
use crate::funnel::{composable, Funnel};
use crate::world::{collision_cells_near, polygon_is_free, polytope_bounds, OccupancyGrid};

#[derive(Debug, Clone, Error, PartialEq)]
pub enum ClosureError {
    #[error("encompassing shape touches an obstacle")]
    TouchingObstacle,
    #[error("closure problem is infeasible")]
    Infeasible,
    #[error("closure solver hit its iteration limit")]
    SolverMaxIterations,
    #[error("candidate is empty or inconsistent: {0}")]
    BadCandidate(String),
    #[error("convex backend: {0}")]
    Convex(ConvexError),
}

impl From<ConvexError> for ClosureError {
    fn from(e: ConvexError) -> Self {
        match e {
            ConvexError::Infeasible => ClosureError::Infeasible,
            ConvexError::MaxIterations(_) => ClosureError::SolverMaxIterations,
            other => ClosureError::Convex(other),
        }
    }
}

/// Halfplanes `a^T dp <= b` on one funnel's translation.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AdjustableArea {
    pub rows: Vec<[f64; 2]>,
    pub offsets: Vec<f64>,
    /// Obstacle-removal rounds; at most the obstacle count.
    pub iterations: usize,
}

impl AdjustableArea {
    pub fn contains(&self, dp: [f64; 2], tol: f64) -> bool {
        self.rows
            .iter()
            .zip(&self.offsets)
            .all(|(a, b)| a[0] * dp[0] + a[1] * dp[1] <= b + tol)
    }

    /// Area intersected with the box `|dp|_inf <= half_width`.
    pub fn with_trust_box(&self, half_width: f64) -> Polytope {
        let mut rows: Vec<Vec<f64>> = self.rows.iter().map(|r| r.to_vec()).collect();
        let mut b = self.offsets.clone();
        rows.extend([vec![1.0, 0.0], vec![-1.0, 0.0], vec![0.0, 1.0], vec![0.0, -1.0]]);
        b.extend([half_width; 4]);
        Polytope::from_rows(&rows, &b).expect("unit rows")
    }
}

/// Translation bounds for `encompassing` among convex `obstacles`: repeatedly
/// take the obstacle whose center is nearest the shape's enclosing-ball
/// center, add the halfplane through the closest-point pair, and drop every
/// obstacle lying entirely beyond it.
pub fn adjustable_area(encompassing: &Polytope, obstacles: &[Polytope]) -> Result<AdjustableArea, ClosureError> {
    let center = smallest_enclosing_ball(encompassing)?.center;
    let mut open: Vec<(f64, usize, Vec<Vec<f64>>)> = obstacles
        .iter()
        .enumerate()
        .map(|(k, v)| {
            let verts = v.vertices();
            let c = centroid(&verts);
            ((c[0] - center[0]).hypot(c[1] - center[1]), k, verts)
        })
        .collect();
    open.sort_by(|x, y| x.0.total_cmp(&y.0).then(x.1.cmp(&y.1)));
    let mut area = AdjustableArea {
        rows: Vec::new(),
        offsets: Vec::new(),
        iterations: 0,
    };
    let mut alive = vec![true; open.len()];
    for i in 0..open.len() {
        if !alive[i] {
            continue;
        }
        alive[i] = false;
        area.iterations += 1;
        let pair = closest_points(encompassing, &obstacles[open[i].1])?;
        if pair.distance <= 1e-12 {
            return Err(ClosureError::TouchingObstacle);
        }
        let a = [(pair.v[0] - pair.p[0]) / pair.distance, (pair.v[1] - pair.p[1]) / pair.distance];
        let wall = a[0] * pair.v[0] + a[1] * pair.v[1];
        area.rows.push(a);
        area.offsets.push(pair.distance);
        for (j, (_, _, verts)) in open.iter().enumerate().skip(i + 1) {
            if alive[j] && verts.iter().all(|v| a[0] * v[0] + a[1] * v[1] > wall) {
                alive[j] = false;
            }
        }
    }
    Ok(area)
}

/// Translation polytope for one funnel on `grid`: the adjustable area
/// against every blocked cell it could reach, the trust box
/// `|dp|_inf <= trust`, and the grid extent.
pub fn funnel_area(grid: &OccupancyGrid, funnel: &Funnel, trust: f64) -> Result<Polytope, ClosureError> {
    let margin = trust * std::f64::consts::SQRT_2 + grid.resolution;
    let cells: Vec<Polytope> = collision_cells_near(grid, &funnel.encompassing, margin)
        .into_iter()
        .map(|c| c.polytope)
        .collect();
    let area = adjustable_area(&funnel.encompassing, &cells)?;
    let (lo, hi) = polytope_bounds(&funnel.encompassing)
        .ok_or_else(|| ClosureError::BadCandidate("unbounded encompassing shape".into()))?;
    let (glo, ghi) = grid.bounds();
    let mut rows: Vec<Vec<f64>> = area.rows.iter().map(|r| r.to_vec()).collect();
    let mut b = area.offsets.clone();
    rows.extend([vec![1.0, 0.0], vec![-1.0, 0.0], vec![0.0, 1.0], vec![0.0, -1.0]]);
    b.extend([
        trust.min(ghi[0] - hi[0]),
        trust.min(lo[0] - glo[0]),
        trust.min(ghi[1] - hi[1]),
        trust.min(lo[1] - glo[1]),
    ]);
    Ok(Polytope::from_rows(&rows, &b)?)
}

fn centroid(v: &[Vec<f64>]) -> [f64; 2] {
    let n = v.len() as f64;
    [v.iter().map(|p| p[0]).sum::<f64>() / n, v.iter().map(|p| p[1]).sum::<f64>() / n]
}

/// Default link weights `n - i + 1` (1-based `i`, wrap-around link gets 1)
/// and entry weight `2 n`.
pub fn default_weights(n: usize) -> (f64, Vec<f64>) {
    (2.0 * n as f64, (0..n).map(|i| (n - i) as f64).collect())
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ClosureSolution {
    pub deltas: Vec<[f64; 2]>,
    pub objective: f64,
}

impl ClosureSolution {
    pub fn apply(&self, funnels: &[Funnel]) -> Vec<Funnel> {
        funnels.iter().zip(&self.deltas).map(|(f, d)| f.translated(*d)).collect()
    }
}

/// Constraint tightening applied inside the QP so the returned point passes
/// the exact re-checks.
const TIGHTEN: f64 = 1e-6;

/// Solves for funnel translations that make every link of the loop
/// (including last to first) compose, keep each funnel inside its
/// adjustable area, and let the reachable set at `end_point` fit the first
/// entrance (`A_1 (end_point - p_I1 - dp_1) <= b_frs`).
pub fn close_loop(
    funnels: &[Funnel],
    areas: &[Polytope],
    b_frs: &[f64],
    end_point: [f64; 2],
    entry_weight: f64,
    link_weights: &[f64],
) -> Result<ClosureSolution, ClosureError> {
    let n = funnels.len();
    if n == 0 || areas.len() != n || link_weights.len() != n {
        return Err(ClosureError::BadCandidate("lengths disagree".into()));
    }
    if b_frs.len() != funnels[0].entrance.n_rows() {
        return Err(ClosureError::BadCandidate("margin length does not match the first entrance".into()));
    }
    let dim = 2 * n;
    let mut h = DMatrix::zeros(dim, dim);
    let mut g = DVector::zeros(dim);
    for i in 0..n {
        let j = (i + 1) % n;
        let w = link_weights[i];
        let c = [
            funnels[i].exit_center[0] - funnels[j].entrance_center[0],
            funnels[i].exit_center[1] - funnels[j].entrance_center[1],
        ];
        for k in 0..2 {
            let (a, b) = (2 * i + k, 2 * j + k);
            if a != b {
                h[(a, a)] += 2.0 * w;
                h[(b, b)] += 2.0 * w;
                h[(a, b)] -= 2.0 * w;
                h[(b, a)] -= 2.0 * w;
                g[a] += 2.0 * w * c[k];
                g[b] -= 2.0 * w * c[k];
            }
        }
    }
    let d = [
        end_point[0] - funnels[0].entrance_center[0],
        end_point[1] - funnels[0].entrance_center[1],
    ];
    for k in 0..2 {
        h[(k, k)] += 2.0 * entry_weight;
        g[k] -= 2.0 * entry_weight * d[k];
    }

    let mut rows: Vec<Vec<f64>> = Vec::new();
    let mut rhs: Vec<f64> = Vec::new();
    for (k, area) in areas.iter().enumerate() {
        for (a, &b) in area.rows().zip(area.offsets()) {
            let mut r = vec![0.0; dim];
            r[2 * k] = a[0];
            r[2 * k + 1] = a[1];
            rows.push(r);
            rhs.push(b - TIGHTEN);
        }
    }
    for i in 0..n {
        let j = (i + 1) % n;
        let fi = &funnels[i];
        let fj = &funnels[j];
        let c = [fi.exit_center[0] - fj.entrance_center[0], fi.exit_center[1] - fj.entrance_center[1]];
        for (a, &b) in fj.entrance.rows().zip(fj.entrance.offsets()) {
            let mut r = vec![0.0; dim];
            r[2 * i] += a[0];
            r[2 * i + 1] += a[1];
            r[2 * j] -= a[0];
            r[2 * j + 1] -= a[1];
            let bound = b - fi.exit_radius - (a[0] * c[0] + a[1] * c[1]);
            if i == j {
                if bound < 0.0 {
                    return Err(ClosureError::Infeasible);
                }
                continue;
            }
            let norm = (2.0 * (a[0] * a[0] + a[1] * a[1])).sqrt();
            rows.push(r);
            rhs.push(bound - TIGHTEN * norm);
        }
    }
    for (a, &b) in funnels[0].entrance.rows().zip(b_frs) {
        let mut r = vec![0.0; dim];
        r[0] = -a[0];
        r[1] = -a[1];
        rows.push(r);
        rhs.push(b - (a[0] * d[0] + a[1] * d[1]) - TIGHTEN);
    }
    let constraint = Polytope::from_rows(&rows, &rhs)?;
    let qp = QpProblem::new(h, g, constraint)?;
    let x = crate::convex::solve_qp(&qp, Some(&vec![0.0; dim]))?;
    if qp.constraint.max_violation(&x) > 1e-9 {
        return Err(ClosureError::Infeasible);
    }
    let deltas: Vec<[f64; 2]> = (0..n).map(|k| [x[2 * k], x[2 * k + 1]]).collect();
    let objective = closure_objective(funnels, &deltas, end_point, entry_weight, link_weights);
    Ok(ClosureSolution { deltas, objective })
}

/// Weighted sum of squared jumps for given translations.
pub fn closure_objective(
    funnels: &[Funnel],
    deltas: &[[f64; 2]],
    end_point: [f64; 2],
    entry_weight: f64,
    link_weights: &[f64],
) -> f64 {
    let n = funnels.len();
    let mut total = 0.0;
    for i in 0..n {
        let j = (i + 1) % n;
        let gap = [
            funnels[i].exit_center[0] + deltas[i][0] - funnels[j].entrance_center[0] - deltas[j][0],
            funnels[i].exit_center[1] + deltas[i][1] - funnels[j].entrance_center[1] - deltas[j][1],
        ];
        total += link_weights[i] * (gap[0] * gap[0] + gap[1] * gap[1]);
    }
    total + entry_weight * entry_jump(&funnels[0], deltas[0], end_point).powi(2)
}

/// `|end_point - (p_I1 + dp_1)|`.
pub fn entry_jump(first: &Funnel, delta: [f64; 2], end_point: [f64; 2]) -> f64 {
    (end_point[0] - first.entrance_center[0] - delta[0]).hypot(end_point[1] - first.entrance_center[1] - delta[1])
}

/// What failed in an independent re-check of a closed loop.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub enum ClosureViolation {
    Link { from: usize, to: usize },
    Collision { funnel: usize },
    Entry { facet: usize, excess: f64 },
}

/// Re-checks a closed loop from scratch: every link composes, every shape
/// misses every blocked cell, and the reachable set fits the first entrance.
pub fn verify_closed_loop(
    closed: &[Funnel],
    grid: &OccupancyGrid,
    b_frs: &[f64],
    end_point: [f64; 2],
) -> Vec<ClosureViolation> {
    let n = closed.len();
    let mut out = Vec::new();
    for i in 0..n {
        let j = (i + 1) % n;
        if !composable(&closed[i], &closed[j]) {
            out.push(ClosureViolation::Link { from: i, to: j });
        }
    }
    for (k, f) in closed.iter().enumerate() {
        if !polygon_is_free(grid, &f.encompassing) {
            out.push(ClosureViolation::Collision { funnel: k });
        }
    }
    if let Some(first) = closed.first() {
        let rel = [end_point[0] - first.entrance_center[0], end_point[1] - first.entrance_center[1]];
        for (facet, (a, b)) in first.entrance.rows().zip(b_frs).enumerate() {
            let excess = a[0] * rel[0] + a[1] * rel[1] - b;
            if excess > 1e-9 {
                out.push(ClosureViolation::Entry { facet, excess });
            }
        }
    }
    out
}
