use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use super::ConvexError;

/// Tolerance used when checking that rows are unit length.
pub const NORMALIZATION_TOL: f64 = 1e-9;

/// Default feasibility tolerance for membership and constraint checks.
pub const FEASIBILITY_TOL: f64 = 1e-6;

/// Halfspace polytope `{x | A x <= b}` with unit-length rows.
///
/// Rows are stored row-major in a flat buffer. The constructor rescales every
/// row (and its offset) so that `||A_i|| = 1`, which lets callers shrink a
/// polytope by a ball of radius `r` by subtracting `r` from `b`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Polytope {
    dim: usize,
    a: Vec<f64>,
    b: Vec<f64>,
}

impl Polytope {
    pub fn new(dim: usize, a: Vec<f64>, b: Vec<f64>) -> Result<Self, ConvexError> {
        if dim == 0 {
            return Err(ConvexError::InvalidPolytope("dimension must be positive".into()));
        }
        if b.is_empty() {
            return Err(ConvexError::InvalidPolytope("at least one row required".into()));
        }
        if a.len() != b.len() * dim {
            return Err(ConvexError::DimensionMismatch {
                expected: b.len() * dim,
                found: a.len(),
            });
        }
        let mut a = a;
        let mut b = b;
        for (i, bi) in b.iter_mut().enumerate() {
            let row = &mut a[i * dim..(i + 1) * dim];
            let norm = row.iter().map(|v| v * v).sum::<f64>().sqrt();
            if !norm.is_finite() || norm < 1e-12 {
                return Err(ConvexError::InvalidPolytope(format!("row {i} has zero norm")));
            }
            // rows already unit length up to rounding are kept bit-exact
            if (norm - 1.0).abs() > 4.0 * f64::EPSILON {
                row.iter_mut().for_each(|v| *v /= norm);
                *bi /= norm;
            }
        }
        Ok(Self { dim, a, b })
    }

    pub fn from_rows(rows: &[Vec<f64>], b: &[f64]) -> Result<Self, ConvexError> {
        let dim = rows.first().map(|r| r.len()).unwrap_or(0);
        if rows.iter().any(|r| r.len() != dim) {
            return Err(ConvexError::InvalidPolytope("ragged rows".into()));
        }
        if rows.len() != b.len() {
            return Err(ConvexError::DimensionMismatch {
                expected: rows.len(),
                found: b.len(),
            });
        }
        Self::new(dim, rows.concat(), b.to_vec())
    }

    /// Axis-aligned box `lo <= x <= hi`.
    pub fn axis_box(lo: &[f64], hi: &[f64]) -> Self {
        assert_eq!(lo.len(), hi.len(), "box bounds must match");
        let dim = lo.len();
        let mut a = vec![0.0; 2 * dim * dim];
        let mut b = Vec::with_capacity(2 * dim);
        for k in 0..dim {
            a[(2 * k) * dim + k] = 1.0;
            b.push(hi[k]);
            a[(2 * k + 1) * dim + k] = -1.0;
            b.push(-lo[k]);
        }
        Self { dim, a, b }
    }

    /// Regular polygon in the plane with `sides` facets, the given inradius
    /// and the first facet normal rotated by `rotation` radians, centered at
    /// the origin.
    pub fn regular_polygon(sides: usize, inradius: f64, rotation: f64) -> Self {
        assert!(sides >= 3, "a polygon needs at least three sides");
        let mut a = Vec::with_capacity(2 * sides);
        let mut b = Vec::with_capacity(sides);
        for k in 0..sides {
            let ang = rotation + 2.0 * std::f64::consts::PI * k as f64 / sides as f64;
            a.push(ang.cos());
            a.push(ang.sin());
            b.push(inradius);
        }
        Self { dim: 2, a, b }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn n_rows(&self) -> usize {
        self.b.len()
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.a[i * self.dim..(i + 1) * self.dim]
    }

    pub fn rows(&self) -> impl Iterator<Item = &[f64]> {
        self.a.chunks_exact(self.dim)
    }

    pub fn offsets(&self) -> &[f64] {
        &self.b
    }

    pub fn offset(&self, i: usize) -> f64 {
        self.b[i]
    }

    pub fn a_matrix(&self) -> DMatrix<f64> {
        DMatrix::from_row_slice(self.n_rows(), self.dim, &self.a)
    }

    pub fn b_vector(&self) -> DVector<f64> {
        DVector::from_column_slice(&self.b)
    }

    /// Per-row values `A x`.
    pub fn eval(&self, x: &[f64]) -> Vec<f64> {
        self.rows().map(|r| dot(r, x)).collect()
    }

    /// Largest constraint violation `max_i (A_i x - b_i)`; negative when
    /// strictly inside.
    pub fn max_violation(&self, x: &[f64]) -> f64 {
        self.rows()
            .zip(&self.b)
            .map(|(r, bi)| dot(r, x) - bi)
            .fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn contains(&self, x: &[f64], tol: f64) -> bool {
        debug_assert_eq!(x.len(), self.dim);
        self.rows().zip(&self.b).all(|(r, bi)| dot(r, x) <= bi + tol)
    }

    /// The set `{x + delta | x in P}`.
    pub fn translated(&self, delta: &[f64]) -> Self {
        assert_eq!(delta.len(), self.dim);
        let b = self.rows().zip(&self.b).map(|(r, bi)| bi + dot(r, delta)).collect();
        Self {
            dim: self.dim,
            a: self.a.clone(),
            b,
        }
    }

    /// Shrink (negative) or grow (positive) every facet by `margin`.
    pub fn offset_by(&self, margin: f64) -> Self {
        Self {
            dim: self.dim,
            a: self.a.clone(),
            b: self.b.iter().map(|bi| bi + margin).collect(),
        }
    }

    /// Planar rotation about the origin.
    pub fn rotated_2d(&self, angle: f64) -> Self {
        assert_eq!(self.dim, 2, "rotation is only defined for planar polytopes");
        let (s, c) = angle.sin_cos();
        let a = self
            .a
            .chunks_exact(2)
            .flat_map(|r| [c * r[0] - s * r[1], s * r[0] + c * r[1]])
            .collect();
        Self {
            dim: 2,
            a,
            b: self.b.clone(),
        }
    }

    /// Stack the rows of both polytopes.
    pub fn intersection(&self, other: &Polytope) -> Self {
        assert_eq!(self.dim, other.dim);
        let mut a = self.a.clone();
        a.extend_from_slice(&other.a);
        let mut b = self.b.clone();
        b.extend_from_slice(&other.b);
        Self { dim: self.dim, a, b }
    }

    /// Enumerate vertices by intersecting every `dim`-subset of facets and
    /// keeping the feasible, distinct solutions. Planar results are sorted
    /// counter-clockwise.
    pub fn vertices(&self) -> Vec<Vec<f64>> {
        let scale = 1.0 + self.b.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        let tol = 1e-9 * scale;
        let mut out: Vec<Vec<f64>> = Vec::new();
        for_each_combination(self.n_rows(), self.dim, |idx| {
            if let Some(x) = self.solve_tight(idx) {
                if self.contains(&x, tol) && !out.iter().any(|v| dist(v, &x) <= tol) {
                    out.push(x);
                }
            }
        });
        if self.dim == 2 && out.len() > 2 {
            sort_ccw(&mut out);
        }
        out
    }

    /// Vertices plus adjacency (two vertices are neighbours when they share
    /// `dim - 1` tight facets).
    pub fn vertex_graph(&self) -> VertexGraph {
        let vertices = self.vertices();
        let scale = 1.0 + self.b.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        let tol = 1e-8 * scale;
        let tight: Vec<Vec<usize>> = vertices
            .iter()
            .map(|v| {
                (0..self.n_rows())
                    .filter(|&i| (dot(self.row(i), v) - self.b[i]).abs() <= tol)
                    .collect()
            })
            .collect();
        let need = self.dim.saturating_sub(1);
        let mut neighbors = vec![Vec::new(); vertices.len()];
        for i in 0..vertices.len() {
            for j in (i + 1)..vertices.len() {
                let shared = tight[i].iter().filter(|k| tight[j].contains(k)).count();
                if shared >= need {
                    neighbors[i].push(j);
                    neighbors[j].push(i);
                }
            }
        }
        VertexGraph {
            vertices,
            neighbors,
        }
    }

    fn solve_tight(&self, idx: &[usize]) -> Option<Vec<f64>> {
        let d = self.dim;
        if d == 2 {
            let (r0, r1) = (self.row(idx[0]), self.row(idx[1]));
            let det = r0[0] * r1[1] - r0[1] * r1[0];
            if det.abs() < 1e-10 {
                return None;
            }
            let (b0, b1) = (self.b[idx[0]], self.b[idx[1]]);
            return Some(vec![(b0 * r1[1] - b1 * r0[1]) / det, (r0[0] * b1 - r1[0] * b0) / det]);
        }
        let mut m = DMatrix::zeros(d, d);
        let mut rhs = DVector::zeros(d);
        for (r, &i) in idx.iter().enumerate() {
            for c in 0..d {
                m[(r, c)] = self.a[i * d + c];
            }
            rhs[r] = self.b[i];
        }
        let lu = m.lu();
        if lu.determinant().abs() < 1e-10 {
            return None;
        }
        lu.solve(&rhs).map(|x| x.as_slice().to_vec())
    }

    /// `max_{x in P} dir^T x` evaluated on enumerated vertices.
    pub fn support(&self, dir: &[f64]) -> Option<f64> {
        let v = self.vertices();
        if v.is_empty() {
            return None;
        }
        Some(v.iter().map(|x| dot(dir, x)).fold(f64::NEG_INFINITY, f64::max))
    }
}

/// Vertices of a polytope together with edge adjacency; precomputed once for
/// sets that never change (e.g. the disturbance set).
#[derive(Debug, Clone, PartialEq)]
pub struct VertexGraph {
    pub vertices: Vec<Vec<f64>>,
    pub neighbors: Vec<Vec<usize>>,
}

impl VertexGraph {
    /// Greedy ascent on the vertex graph; returns the index of a maximizer of
    /// `c^T v`. Convexity makes every local maximum global.
    pub fn hill_climb(&self, c: &[f64], start: usize) -> usize {
        let mut cur = start.min(self.vertices.len().saturating_sub(1));
        let mut val = dot(c, &self.vertices[cur]);
        loop {
            let mut best = cur;
            let mut best_val = val;
            for &n in &self.neighbors[cur] {
                let v = dot(c, &self.vertices[n]);
                if v > best_val + 1e-15 {
                    best = n;
                    best_val = v;
                }
            }
            if best == cur {
                return cur;
            }
            cur = best;
            val = best_val;
        }
    }
}

/// Ball `{x | ||x - center|| <= radius}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Ball {
    pub center: Vec<f64>,
    pub radius: f64,
}

impl Ball {
    pub fn new(center: Vec<f64>, radius: f64) -> Self {
        assert!(radius >= 0.0, "ball radius must be nonnegative");
        Self { center, radius }
    }

    pub fn contains(&self, x: &[f64], tol: f64) -> bool {
        dist(&self.center, x) <= self.radius + tol
    }
}

pub fn contains(p: &Polytope, x: &[f64], tol: f64) -> bool {
    p.contains(x, tol)
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub(crate) fn dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}

fn sort_ccw(pts: &mut [Vec<f64>]) {
    let n = pts.len() as f64;
    let cx = pts.iter().map(|p| p[0]).sum::<f64>() / n;
    let cy = pts.iter().map(|p| p[1]).sum::<f64>() / n;
    pts.sort_by(|p, q| {
        let ap = (p[1] - cy).atan2(p[0] - cx);
        let aq = (q[1] - cy).atan2(q[0] - cx);
        ap.total_cmp(&aq)
    });
}

fn for_each_combination(n: usize, k: usize, mut f: impl FnMut(&[usize])) {
    if k == 0 || k > n {
        return;
    }
    let mut idx: Vec<usize> = (0..k).collect();
    loop {
        f(&idx);
        let mut i = k;
        while i > 0 && idx[i - 1] == n - k + i - 1 {
            i -= 1;
        }
        if i == 0 {
            return;
        }
        idx[i - 1] += 1;
        for j in i..k {
            idx[j] = idx[j - 1] + 1;
        }
    }
}
