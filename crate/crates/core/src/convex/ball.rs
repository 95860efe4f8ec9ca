use nalgebra::{DMatrix, DVector};

use super::polytope::dist;
use super::{ConvexError, Polytope};
use crate::convex::Ball;

/// Smallest ball covering a bounded polytope, computed exactly over its
/// enumerated vertices.
pub fn smallest_enclosing_ball(p: &Polytope) -> Result<Ball, ConvexError> {
    if !super::is_bounded(p) {
        return Err(ConvexError::Unbounded);
    }
    let verts = p.vertices();
    if verts.is_empty() {
        return Err(ConvexError::Infeasible);
    }
    Ok(smallest_ball_of_points(&verts))
}

/// Move-to-front Welzl recursion over a point set.
pub fn smallest_ball_of_points(points: &[Vec<f64>]) -> Ball {
    assert!(!points.is_empty());
    let d = points[0].len();
    let mut pts: Vec<Vec<f64>> = points.to_vec();
    let mut support = Vec::with_capacity(d + 1);
    welzl(&mut pts, points.len(), &mut support, d).unwrap_or_else(|| Ball::new(points[0].clone(), 0.0))
}

fn welzl(pts: &mut Vec<Vec<f64>>, n: usize, support: &mut Vec<Vec<f64>>, d: usize) -> Option<Ball> {
    let mut ball = ball_from_support(support, d);
    if support.len() == d + 1 {
        return ball;
    }
    for i in 0..n {
        let inside = ball
            .as_ref()
            .map(|b| dist(&b.center, &pts[i]) <= b.radius * (1.0 + 1e-12) + 1e-12)
            .unwrap_or(false);
        if inside {
            continue;
        }
        support.push(pts[i].clone());
        ball = welzl(pts, i, support, d);
        support.pop();
        // move to front keeps the recursion expected-linear
        let p = pts.remove(i);
        pts.insert(0, p);
    }
    ball
}

/// Circumscribed ball of the support points inside their affine hull.
fn ball_from_support(support: &[Vec<f64>], d: usize) -> Option<Ball> {
    match support.len() {
        0 => None,
        1 => Some(Ball::new(support[0].clone(), 0.0)),
        k => {
            let p0 = &support[0];
            let m = k - 1;
            let diffs: Vec<Vec<f64>> = support[1..]
                .iter()
                .map(|p| p.iter().zip(p0).map(|(a, b)| a - b).collect())
                .collect();
            let mut gram = DMatrix::zeros(m, m);
            let mut rhs = DVector::zeros(m);
            for i in 0..m {
                for j in 0..m {
                    gram[(i, j)] = 2.0 * diffs[i].iter().zip(&diffs[j]).map(|(a, b)| a * b).sum::<f64>();
                }
                rhs[i] = diffs[i].iter().map(|a| a * a).sum::<f64>();
            }
            let lambda = gram.lu().solve(&rhs)?;
            let mut center = p0.clone();
            for i in 0..m {
                for c in 0..d {
                    center[c] += lambda[i] * diffs[i][c];
                }
            }
            let radius = support.iter().map(|p| dist(p, &center)).fold(0.0, f64::max);
            Some(Ball::new(center, radius))
        }
    }
}
