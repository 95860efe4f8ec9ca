use nalgebra::{DMatrix, DVector};

use super::polytope::{dist, dot};
use super::qp::{solve_qp_detailed, AdmmSettings, QpProblem};
use super::{ConvexError, Polytope};

/// Closest pair between two convex sets.
#[derive(Debug, Clone, PartialEq)]
pub struct ClosestPair {
    pub p: Vec<f64>,
    pub v: Vec<f64>,
    pub distance: f64,
}

/// Closest points `p in P`, `v in V`. Planar inputs use an exact
/// vertex/edge computation; other dimensions solve the `2d`-variable QP.
/// Overlapping sets return distance 0 and a common point.
pub fn closest_points(p: &Polytope, v: &Polytope) -> Result<ClosestPair, ConvexError> {
    if p.dim() != v.dim() {
        return Err(ConvexError::DimensionMismatch {
            expected: p.dim(),
            found: v.dim(),
        });
    }
    if p.dim() == 2 {
        let pv = p.vertices();
        let vv = v.vertices();
        if pv.is_empty() || vv.is_empty() {
            return Err(ConvexError::Infeasible);
        }
        Ok(closest_points_polygons(&pv, &vv, Some((p, v))))
    } else {
        closest_points_qp(p, v)
    }
}

/// QP route: `min ||p - v||^2` with `p in P`, `v in V`.
pub fn closest_points_qp(p: &Polytope, v: &Polytope) -> Result<ClosestPair, ConvexError> {
    let d = p.dim();
    let n = 2 * d;
    let mut h = DMatrix::zeros(n, n);
    for i in 0..d {
        h[(i, i)] = 2.0;
        h[(d + i, d + i)] = 2.0;
        h[(i, d + i)] = -2.0;
        h[(d + i, i)] = -2.0;
    }
    let rows = p.n_rows() + v.n_rows();
    let mut a = vec![0.0; rows * n];
    let mut b = Vec::with_capacity(rows);
    for (i, r) in p.rows().enumerate() {
        a[i * n..i * n + d].copy_from_slice(r);
        b.push(p.offset(i));
    }
    for (j, r) in v.rows().enumerate() {
        let i = p.n_rows() + j;
        a[i * n + d..i * n + n].copy_from_slice(r);
        b.push(v.offset(j));
    }
    let constraint = Polytope::new(n, a, b)?;
    let qp = QpProblem::new(h, DVector::zeros(n), constraint)?;
    let sol = solve_qp_detailed(&qp, None, &AdmmSettings::default())?;
    let pp = sol.x[..d].to_vec();
    let vv = sol.x[d..].to_vec();
    let distance = dist(&pp, &vv);
    Ok(ClosestPair {
        p: pp,
        v: vv,
        distance,
    })
}

/// Exact closest points between two convex polygons given by their
/// counter-clockwise vertex lists (degenerate point/segment lists allowed).
pub fn closest_points_polygons(
    pv: &[Vec<f64>],
    vv: &[Vec<f64>],
    halfspaces: Option<(&Polytope, &Polytope)>,
) -> ClosestPair {
    let overlapping = match halfspaces {
        Some((p, v)) => !separated(p, pv, vv) && !separated(v, vv, pv),
        None => !separated_by_edges(pv, vv) && !separated_by_edges(vv, pv),
    };
    if overlapping {
        let common = match halfspaces {
            Some((p, v)) => {
                let both = p.intersection(v).vertices();
                if both.is_empty() {
                    None
                } else {
                    Some(centroid(&both))
                }
            }
            None => None,
        };
        let point = common.unwrap_or_else(|| {
            let pair = min_vertex_edge(pv, vv);
            pair.p
        });
        return ClosestPair {
            p: point.clone(),
            v: point,
            distance: 0.0,
        };
    }
    min_vertex_edge(pv, vv)
}

fn min_vertex_edge(pv: &[Vec<f64>], vv: &[Vec<f64>]) -> ClosestPair {
    let mut best = ClosestPair {
        p: pv[0].clone(),
        v: vv[0].clone(),
        distance: f64::INFINITY,
    };
    for (j0, j1) in edges(vv) {
        for x in pv {
            let c = closest_on_segment(x, &vv[j0], &vv[j1]);
            let d = dist(x, &c);
            if d < best.distance {
                best = ClosestPair {
                    p: x.clone(),
                    v: c,
                    distance: d,
                };
            }
        }
    }
    for (i0, i1) in edges(pv) {
        for x in vv {
            let c = closest_on_segment(x, &pv[i0], &pv[i1]);
            let d = dist(x, &c);
            if d < best.distance {
                best = ClosestPair {
                    p: c,
                    v: x.clone(),
                    distance: d,
                };
            }
        }
    }
    best
}

fn edges(v: &[Vec<f64>]) -> Vec<(usize, usize)> {
    match v.len() {
        0 => vec![],
        1 => vec![(0, 0)],
        2 => vec![(0, 1)],
        n => (0..n).map(|i| (i, (i + 1) % n)).collect(),
    }
}

fn closest_on_segment(x: &[f64], a: &[f64], b: &[f64]) -> Vec<f64> {
    let ab: Vec<f64> = b.iter().zip(a).map(|(p, q)| p - q).collect();
    let len2 = dot(&ab, &ab);
    if len2 < 1e-24 {
        return a.to_vec();
    }
    let ax: Vec<f64> = x.iter().zip(a).map(|(p, q)| p - q).collect();
    let t = (dot(&ax, &ab) / len2).clamp(0.0, 1.0);
    a.iter().zip(&ab).map(|(p, d)| p + t * d).collect()
}

/// True when some facet normal of `poly` separates its vertices `own` from
/// `other` with a positive gap.
fn separated(poly: &Polytope, own: &[Vec<f64>], other: &[Vec<f64>]) -> bool {
    poly.rows().any(|a| {
        let hi = own.iter().map(|x| dot(a, x)).fold(f64::NEG_INFINITY, f64::max);
        let lo = other.iter().map(|x| dot(a, x)).fold(f64::INFINITY, f64::min);
        lo > hi + 1e-12
    })
}

fn separated_by_edges(own: &[Vec<f64>], other: &[Vec<f64>]) -> bool {
    edges(own).into_iter().any(|(i, j)| {
        let e = [own[j][0] - own[i][0], own[j][1] - own[i][1]];
        let n = [e[1], -e[0]];
        if n[0].abs() + n[1].abs() < 1e-15 {
            return false;
        }
        let hi = own.iter().map(|x| dot(&n, x)).fold(f64::NEG_INFINITY, f64::max);
        let lo = other.iter().map(|x| dot(&n, x)).fold(f64::INFINITY, f64::min);
        let lo2 = own.iter().map(|x| dot(&n, x)).fold(f64::INFINITY, f64::min);
        let hi2 = other.iter().map(|x| dot(&n, x)).fold(f64::NEG_INFINITY, f64::max);
        lo > hi + 1e-12 || lo2 > hi2 + 1e-12
    })
}

fn centroid(pts: &[Vec<f64>]) -> Vec<f64> {
    let d = pts[0].len();
    let n = pts.len() as f64;
    (0..d).map(|k| pts.iter().map(|p| p[k]).sum::<f64>() / n).collect()
}
