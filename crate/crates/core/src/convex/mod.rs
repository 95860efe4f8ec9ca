//! Convex geometry primitives and the small dense QP solver used throughout
//! the planner.

mod ball;
mod closest;
mod hull;
mod polytope;
mod qp;

pub use ball::{smallest_ball_of_points, smallest_enclosing_ball};
pub use closest::{closest_points, closest_points_polygons, closest_points_qp, ClosestPair};
pub use hull::convex_hull;
pub use polytope::{contains, Ball, Polytope, VertexGraph, FEASIBILITY_TOL, NORMALIZATION_TOL};
pub use qp::{solve_general, solve_qp, solve_qp_detailed, AdmmSettings, QpProblem, QpSolution};


use nalgebra::{DMatrix, DVector};
use thiserror::Error;

#[derive(Debug, Clone, Error, PartialEq)]
pub enum ConvexError {
    #[error("constraint set is empty")]
    Infeasible,
    #[error("problem is unbounded")]
    Unbounded,
    #[error("solver hit the iteration limit ({0})")]
    MaxIterations(usize),
    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },
    #[error("invalid polytope: {0}")]
    InvalidPolytope(String),
    #[error("problem is not convex: {0}")]
    NotConvex(String),
}

/// `argmax_{w in P} c^T w`. With a precomputed vertex graph this is a hill
/// climb over vertices; otherwise the LP is solved with the QP backend.
pub fn maximize_linear_over_polytope(
    c: &[f64],
    p: &Polytope,
    vertices: Option<&VertexGraph>,
) -> Result<Vec<f64>, ConvexError> {
    if c.len() != p.dim() {
        return Err(ConvexError::DimensionMismatch {
            expected: p.dim(),
            found: c.len(),
        });
    }
    if let Some(graph) = vertices {
        if graph.vertices.is_empty() {
            return Err(ConvexError::Infeasible);
        }
        let best = graph.hill_climb(c, 0);
        return Ok(graph.vertices[best].clone());
    }
    let n = p.dim();
    let a = p.a_matrix();
    let u = p.b_vector();
    let l = DVector::from_element(u.len(), f64::NEG_INFINITY);
    let q = -DVector::from_column_slice(c);
    let sol = solve_general(&DMatrix::zeros(n, n), &q, &a, &l, &u, None, &AdmmSettings::default())?;
    Ok(sol.x)
}

/// A polytope is bounded iff no coordinate direction is unbounded.
pub fn is_bounded(p: &Polytope) -> bool {
    let d = p.dim();
    (0..d).all(|k| {
        [1.0, -1.0].iter().all(|s| {
            let mut c = vec![0.0; d];
            c[k] = *s;
            !matches!(maximize_linear_over_polytope(&c, p, None), Err(ConvexError::Unbounded))
        })
    })
}
