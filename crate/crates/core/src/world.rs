//! Occupancy grid, simulated range sensing and corridor construction.

use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::convex::{closest_points_polygons, convex_hull, smallest_ball_of_points, Polytope};
use crate::trajectory::Trajectory;

#[derive(Debug, Error)]
pub enum WorldError {
    #[error("segment point ({0:.3}, {1:.3}) is not in a free cell")]
    SeedInCollision(f64, f64),
    #[error("convex hull of the segment touches a blocked cell")]
    HullInCollision,
    #[error("empty segment")]
    EmptySegment,
    #[error("map format: {0}")]
    Format(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum CellState {
    Free,
    Occupied,
    Unknown,
}

impl CellState {
    /// Occupied or Unknown: not usable by funnels and corridors.
    pub fn is_blocked(self) -> bool {
        self != CellState::Free
    }
}

/// Integer cell coordinates; `(0, 0)` is the lower-left cell.
pub type GridCell = (isize, isize);

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CellChange {
    pub ix: isize,
    pub iy: isize,
    pub state: CellState,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OccupancyGrid {
    pub resolution: f64,
    pub origin: [f64; 2],
    pub width: usize,
    pub height: usize,
    cells: Vec<CellState>,
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
struct MapHeader {
    resolution: f64,
    origin: [f64; 2],
}

impl OccupancyGrid {
    pub fn new(width: usize, height: usize, resolution: f64, origin: [f64; 2], fill: CellState) -> Self {
        Self {
            resolution,
            origin,
            width,
            height,
            cells: vec![fill; width * height],
        }
    }

    /// All-Unknown grid with the same geometry as `other`.
    pub fn unknown_like(other: &OccupancyGrid) -> Self {
        Self::new(other.width, other.height, other.resolution, other.origin, CellState::Unknown)
    }

    pub fn in_bounds(&self, c: GridCell) -> bool {
        c.0 >= 0 && c.1 >= 0 && (c.0 as usize) < self.width && (c.1 as usize) < self.height
    }

    /// Out-of-bounds cells read as Occupied.
    pub fn get(&self, c: GridCell) -> CellState {
        if self.in_bounds(c) {
            self.cells[c.1 as usize * self.width + c.0 as usize]
        } else {
            CellState::Occupied
        }
    }

    /// Returns whether the cell changed; out-of-bounds writes are ignored.
    pub fn set(&mut self, c: GridCell, state: CellState) -> bool {
        if !self.in_bounds(c) {
            return false;
        }
        let slot = &mut self.cells[c.1 as usize * self.width + c.0 as usize];
        let changed = *slot != state;
        *slot = state;
        changed
    }

    pub fn cell_of(&self, p: [f64; 2]) -> GridCell {
        (
            ((p[0] - self.origin[0]) / self.resolution).floor() as isize,
            ((p[1] - self.origin[1]) / self.resolution).floor() as isize,
        )
    }

    pub fn center(&self, c: GridCell) -> [f64; 2] {
        [
            self.origin[0] + (c.0 as f64 + 0.5) * self.resolution,
            self.origin[1] + (c.1 as f64 + 0.5) * self.resolution,
        ]
    }

    pub fn state_at(&self, p: [f64; 2]) -> CellState {
        self.get(self.cell_of(p))
    }

    /// Closed square of the cell as counter-clockwise corners.
    pub fn cell_corners(&self, c: GridCell) -> [[f64; 2]; 4] {
        let x0 = self.origin[0] + c.0 as f64 * self.resolution;
        let y0 = self.origin[1] + c.1 as f64 * self.resolution;
        let x1 = x0 + self.resolution;
        let y1 = y0 + self.resolution;
        [[x0, y0], [x1, y0], [x1, y1], [x0, y1]]
    }

    pub fn cell_polytope(&self, c: GridCell) -> Polytope {
        let k = self.cell_corners(c);
        Polytope::axis_box(&k[0], &k[2])
    }

    /// World-frame extent `[lo, hi]` of the grid.
    pub fn bounds(&self) -> ([f64; 2], [f64; 2]) {
        (
            self.origin,
            [
                self.origin[0] + self.width as f64 * self.resolution,
                self.origin[1] + self.height as f64 * self.resolution,
            ],
        )
    }

    pub fn count(&self, state: CellState) -> usize {
        self.cells.iter().filter(|&&s| s == state).count()
    }

    pub fn cells(&self) -> impl Iterator<Item = (GridCell, CellState)> + '_ {
        self.cells
            .iter()
            .enumerate()
            .map(move |(k, &s)| (((k % self.width) as isize, (k / self.width) as isize), s))
    }

    /// Cell range (inclusive) covering the world box `[lo, hi]`, clipped to
    /// the grid when `clip` is set.
    pub fn cell_range(&self, lo: [f64; 2], hi: [f64; 2], clip: bool) -> (GridCell, GridCell) {
        let mut a = self.cell_of(lo);
        let mut b = self.cell_of(hi);
        if clip {
            a = (a.0.max(0), a.1.max(0));
            b = (b.0.min(self.width as isize - 1), b.1.min(self.height as isize - 1));
        }
        (a, b)
    }

    /// Sets every cell whose center lies in the world rectangle. Returns the
    /// cells that actually changed.
    pub fn set_region(&mut self, lo: [f64; 2], hi: [f64; 2], state: CellState) -> Vec<CellChange> {
        let (a, b) = self.cell_range(lo, hi, true);
        let mut changes = Vec::new();
        for iy in a.1..=b.1 {
            for ix in a.0..=b.0 {
                let c = self.center((ix, iy));
                if c[0] < lo[0] || c[0] > hi[0] || c[1] < lo[1] || c[1] > hi[1] {
                    continue;
                }
                if self.set((ix, iy), state) {
                    changes.push(CellChange { ix, iy, state });
                }
            }
        }
        changes
    }

    /// Casts `rays` evenly spaced rays from `position` against `truth`. Cells
    /// crossed before a hit become Free, the hit cell becomes Occupied and
    /// anything behind it is left alone. Returns the changed cells.
    pub fn sense(&mut self, truth: &OccupancyGrid, position: [f64; 2], range: f64, rays: usize) -> Vec<CellChange> {
        let mut changes = Vec::new();
        for k in 0..rays {
            let ang = 2.0 * std::f64::consts::PI * k as f64 / rays as f64;
            self.cast_ray(truth, position, [ang.cos(), ang.sin()], range, &mut changes);
        }
        changes
    }

    fn cast_ray(
        &mut self,
        truth: &OccupancyGrid,
        p: [f64; 2],
        d: [f64; 2],
        range: f64,
        changes: &mut Vec<CellChange>,
    ) {
        let res = self.resolution;
        let (mut ix, mut iy) = self.cell_of(p);
        let axis = |pos: f64, org: f64, dir: f64, idx: isize| -> (isize, f64, f64) {
            if dir.abs() < 1e-12 {
                return (0, f64::INFINITY, f64::INFINITY);
            }
            let step = if dir > 0.0 { 1 } else { -1 };
            let boundary = org + (idx + if dir > 0.0 { 1 } else { 0 }) as f64 * res;
            (step, (boundary - pos) / dir, res / dir.abs())
        };
        let (sx, mut tx, dx) = axis(p[0], self.origin[0], d[0], ix);
        let (sy, mut ty, dy) = axis(p[1], self.origin[1], d[1], iy);
        let mut entry = 0.0;
        while entry <= range {
            let c = (ix, iy);
            if truth.get(c) == CellState::Occupied {
                if self.set(c, CellState::Occupied) {
                    changes.push(CellChange {
                        ix,
                        iy,
                        state: CellState::Occupied,
                    });
                }
                return;
            }
            if self.set(c, CellState::Free) {
                changes.push(CellChange {
                    ix,
                    iy,
                    state: CellState::Free,
                });
            }
            if tx < ty {
                entry = tx;
                ix += sx;
                tx += dx;
            } else {
                entry = ty;
                iy += sy;
                ty += dy;
            }
        }
    }

    pub fn apply(&mut self, changes: &[CellChange]) {
        for c in changes {
            self.set((c.ix, c.iy), c.state);
        }
    }

    /// True when no blocked cell square comes within `radius` of `p`.
    pub fn is_clear(&self, p: [f64; 2], radius: f64) -> bool {
        let (a, b) = self.cell_range([p[0] - radius, p[1] - radius], [p[0] + radius, p[1] + radius], false);
        for iy in a.1..=b.1 {
            for ix in a.0..=b.0 {
                if !self.get((ix, iy)).is_blocked() {
                    continue;
                }
                let k = self.cell_corners((ix, iy));
                let dx = (k[0][0] - p[0]).max(p[0] - k[2][0]).max(0.0);
                let dy = (k[0][1] - p[1]).max(p[1] - k[2][1]).max(0.0);
                if dx.hypot(dy) <= radius {
                    return false;
                }
            }
        }
        true
    }

    /// Some blocked cell whose center lies in `region` grown by `inflation`.
    /// `lo`/`hi` bound the region.
    pub fn blocked_center_in(&self, region: &Polytope, lo: [f64; 2], hi: [f64; 2], inflation: f64) -> Option<GridCell> {
        let grown = region.offset_by(inflation);
        let lo = [lo[0] - inflation, lo[1] - inflation];
        let hi = [hi[0] + inflation, hi[1] + inflation];
        let (a, b) = self.cell_range(lo, hi, false);
        for iy in a.1..=b.1 {
            for ix in a.0..=b.0 {
                if self.get((ix, iy)).is_blocked() && grown.contains(&self.center((ix, iy)), 0.0) {
                    return Some((ix, iy));
                }
            }
        }
        None
    }

    /// Parses the plain-text map format: a JSON header line
    /// `{"resolution": r, "origin": [x, y]}` followed by rows of `.` (free),
    /// `#` (occupied) or `?` (unknown), top row first.
    pub fn parse_map(text: &str) -> Result<Self, WorldError> {
        let mut lines = text.lines().filter(|l| !l.trim().is_empty());
        let header: MapHeader = serde_json::from_str(lines.next().ok_or_else(|| WorldError::Format("missing header".into()))?)?;
        if header.resolution <= 0.0 {
            return Err(WorldError::Format("resolution must be positive".into()));
        }
        let rows: Vec<&str> = lines.map(|l| l.trim_end()).collect();
        let height = rows.len();
        let width = rows.first().map(|r| r.chars().count()).unwrap_or(0);
        if height == 0 || width == 0 {
            return Err(WorldError::Format("empty grid".into()));
        }
        let mut grid = Self::new(width, height, header.resolution, header.origin, CellState::Free);
        for (r, row) in rows.iter().enumerate() {
            if row.chars().count() != width {
                return Err(WorldError::Format(format!("row {r} has the wrong width")));
            }
            let iy = (height - 1 - r) as isize;
            for (ix, ch) in row.chars().enumerate() {
                let s = match ch {
                    '.' => CellState::Free,
                    '#' => CellState::Occupied,
                    '?' => CellState::Unknown,
                    other => return Err(WorldError::Format(format!("unexpected character {other:?}"))),
                };
                grid.set((ix as isize, iy), s);
            }
        }
        Ok(grid)
    }

    pub fn to_map_text(&self) -> String {
        let header = MapHeader {
            resolution: self.resolution,
            origin: self.origin,
        };
        let mut out = serde_json::to_string(&header).expect("header serializes");
        out.push('\n');
        for iy in (0..self.height as isize).rev() {
            for ix in 0..self.width as isize {
                out.push(match self.get((ix, iy)) {
                    CellState::Free => '.',
                    CellState::Occupied => '#',
                    CellState::Unknown => '?',
                });
            }
            out.push('\n');
        }
        out
    }

    pub fn load(path: &Path) -> Result<Self, WorldError> {
        Self::parse_map(&std::fs::read_to_string(path)?)
    }

    pub fn save(&self, path: &Path) -> Result<(), WorldError> {
        std::fs::write(path, self.to_map_text())?;
        Ok(())
    }
}

/// Axis-aligned bounding box of a bounded polytope.
pub fn polytope_bounds(p: &Polytope) -> Option<([f64; 2], [f64; 2])> {
    let lo = [-p.support(&[-1.0, 0.0])?, -p.support(&[0.0, -1.0])?];
    let hi = [p.support(&[1.0, 0.0])?, p.support(&[0.0, 1.0])?];
    Some((lo, hi))
}

/// Exact test that no blocked cell (closed square) meets the bounded convex
/// polygon `p`, by separating axes.
pub fn polygon_is_free(grid: &OccupancyGrid, p: &Polytope) -> bool {
    let verts = p.vertices();
    if verts.is_empty() {
        return true;
    }
    let lo = [
        verts.iter().map(|v| v[0]).fold(f64::INFINITY, f64::min),
        verts.iter().map(|v| v[1]).fold(f64::INFINITY, f64::min),
    ];
    let hi = [
        verts.iter().map(|v| v[0]).fold(f64::NEG_INFINITY, f64::max),
        verts.iter().map(|v| v[1]).fold(f64::NEG_INFINITY, f64::max),
    ];
    let (a, b) = grid.cell_range(lo, hi, false);
    for iy in a.1..=b.1 {
        for ix in a.0..=b.0 {
            if !grid.get((ix, iy)).is_blocked() {
                continue;
            }
            let k = grid.cell_corners((ix, iy));
            let apart_axes = k[0][0] > hi[0] || k[2][0] < lo[0] || k[0][1] > hi[1] || k[2][1] < lo[1];
            let apart_facet = p
                .rows()
                .zip(p.offsets())
                .any(|(r, &off)| k.iter().all(|c| r[0] * c[0] + r[1] * c[1] > off));
            if !apart_axes && !apart_facet {
                return false;
            }
        }
    }
    true
}

/// Blocked cell near a region, as returned by [`collision_cells_near`].
#[derive(Debug, Clone, PartialEq)]
pub struct NearbyCell {
    pub cell: GridCell,
    pub polytope: Polytope,
}

/// Blocked cells whose center lies within `margin` of the smallest ball
/// enclosing `region`. Unbounded regions yield an empty list.
pub fn collision_cells_near(grid: &OccupancyGrid, region: &Polytope, margin: f64) -> Vec<NearbyCell> {
    let verts = region.vertices();
    if verts.is_empty() || polytope_bounds(region).is_none() {
        return Vec::new();
    }
    let ball = smallest_ball_of_points(&verts);
    let c = [ball.center[0], ball.center[1]];
    let reach = ball.radius + margin;
    let (a, b) = grid.cell_range([c[0] - reach, c[1] - reach], [c[0] + reach, c[1] + reach], true);
    let mut out = Vec::new();
    for iy in a.1..=b.1 {
        for ix in a.0..=b.0 {
            if !grid.get((ix, iy)).is_blocked() {
                continue;
            }
            let q = grid.center((ix, iy));
            if (q[0] - c[0]).hypot(q[1] - c[1]) <= reach {
                out.push(NearbyCell {
                    cell: (ix, iy),
                    polytope: grid.cell_polytope((ix, iy)),
                });
            }
        }
    }
    out
}

/// Convex obstacle-free region grown around a trajectory segment.
#[derive(Debug, Clone, PartialEq)]
pub struct Corridor {
    pub polytope: Polytope,
    pub seed: Trajectory,
}

/// Grows a corridor around the convex hull of the segment's positions:
/// nearest blocked cell gives a separating wall, cells entirely beyond the
/// wall are dropped, repeat. The result is clipped to a box `margin` around
/// the segment and to the grid.
pub fn build_corridor(grid: &OccupancyGrid, segment: &Trajectory, margin: f64) -> Result<Corridor, WorldError> {
    let points: Vec<[f64; 2]> = segment.positions().collect();
    if points.is_empty() {
        return Err(WorldError::EmptySegment);
    }
    for p in &points {
        if grid.state_at(*p) != CellState::Free {
            return Err(WorldError::SeedInCollision(p[0], p[1]));
        }
    }
    let hull: Vec<Vec<f64>> = convex_hull(&points).into_iter().map(|p| p.to_vec()).collect();
    let mut lo = [f64::INFINITY; 2];
    let mut hi = [f64::NEG_INFINITY; 2];
    for p in &points {
        for k in 0..2 {
            lo[k] = lo[k].min(p[k] - margin);
            hi[k] = hi[k].max(p[k] + margin);
        }
    }
    let (glo, ghi) = grid.bounds();
    for k in 0..2 {
        lo[k] = lo[k].max(glo[k]);
        hi[k] = hi[k].min(ghi[k]);
    }

    struct Obstacle {
        corners: [[f64; 2]; 4],
        distance: f64,
        p: Vec<f64>,
        v: Vec<f64>,
    }
    let (a, b) = grid.cell_range(lo, hi, true);
    let mut obstacles = Vec::new();
    for iy in a.1..=b.1 {
        for ix in a.0..=b.0 {
            if !grid.get((ix, iy)).is_blocked() {
                continue;
            }
            let corners = grid.cell_corners((ix, iy));
            let cv: Vec<Vec<f64>> = corners.iter().map(|c| c.to_vec()).collect();
            let pair = closest_points_polygons(&hull, &cv, None);
            if pair.distance < 1e-9 {
                return Err(WorldError::HullInCollision);
            }
            obstacles.push(Obstacle {
                corners,
                distance: pair.distance,
                p: pair.p,
                v: pair.v,
            });
        }
    }
    // stable sort keeps the cell scan order on ties
    obstacles.sort_by(|x, y| x.distance.total_cmp(&y.distance));

    let mut rows: Vec<Vec<f64>> = Vec::new();
    let mut offsets: Vec<f64> = Vec::new();
    let mut removed = vec![false; obstacles.len()];
    for i in 0..obstacles.len() {
        if removed[i] {
            continue;
        }
        let o = &obstacles[i];
        let n = [(o.v[0] - o.p[0]) / o.distance, (o.v[1] - o.p[1]) / o.distance];
        let wall = n[0] * o.v[0] + n[1] * o.v[1];
        rows.push(n.to_vec());
        offsets.push(wall);
        for (j, other) in obstacles.iter().enumerate().skip(i) {
            if !removed[j] && other.corners.iter().all(|c| n[0] * c[0] + n[1] * c[1] >= wall - 1e-12) {
                removed[j] = true;
            }
        }
    }
    rows.extend([vec![1.0, 0.0], vec![-1.0, 0.0], vec![0.0, 1.0], vec![0.0, -1.0]]);
    offsets.extend([hi[0], -lo[0], hi[1], -lo[1]]);
    let polytope = Polytope::from_rows(&rows, &offsets).expect("unit rows");
    Ok(Corridor {
        polytope,
        seed: segment.clone(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn open(w: usize, h: usize) -> OccupancyGrid {
        OccupancyGrid::new(w, h, 0.1, [0.0, 0.0], CellState::Free)
    }

    fn line(from: [f64; 2], to: [f64; 2], n: usize) -> Trajectory {
        let heading = (to[1] - from[1]).atan2(to[0] - from[0]);
        let states = (0..=n)
            .map(|k| {
                let s = k as f64 / n as f64;
                [from[0] + s * (to[0] - from[0]), from[1] + s * (to[1] - from[1]), heading]
            })
            .collect();
        Trajectory::new(states, vec![[0.5, 0.0]; n], 0.01)
    }

    #[test]
    fn out_of_bounds_reads_occupied() {
        let g = open(5, 5);
        assert_eq!(g.get((-1, 0)), CellState::Occupied);
        assert_eq!(g.get((0, 5)), CellState::Occupied);
        assert_eq!(g.get((4, 4)), CellState::Free);
    }

    #[test]
    fn map_text_round_trip() {
        let text = "{\"resolution\":0.5,\"origin\":[1.0,-2.0]}\n#..\n.?#\n";
        let g = OccupancyGrid::parse_map(text).unwrap();
        assert_eq!((g.width, g.height), (3, 2));
        assert_eq!(g.get((0, 1)), CellState::Occupied);
        assert_eq!(g.get((1, 0)), CellState::Unknown);
        assert_eq!(g.get((2, 0)), CellState::Occupied);
        assert_eq!(OccupancyGrid::parse_map(&g.to_map_text()).unwrap(), g);
    }

    #[test]
    fn ragged_map_rejected() {
        assert!(OccupancyGrid::parse_map("{\"resolution\":0.1,\"origin\":[0,0]}\n..\n.\n").is_err());
    }

    #[test]
    fn wall_occludes() {
        let mut truth = open(60, 20);
        truth.set_region([2.0, 0.0], [2.1, 2.0], CellState::Occupied);
        let mut g = OccupancyGrid::unknown_like(&truth);
        g.sense(&truth, [1.05, 1.05], 3.5, 360);
        assert_eq!(g.state_at([1.55, 1.05]), CellState::Free);
        assert_eq!(g.state_at([2.05, 1.05]), CellState::Occupied);
        assert_eq!(g.state_at([2.55, 1.05]), CellState::Unknown);
    }

    #[test]
    fn set_region_reports_changes() {
        let mut g = open(10, 10);
        let ch = g.set_region([0.0, 0.0], [0.3, 0.3], CellState::Occupied);
        assert_eq!(ch.len(), 9);
        assert!(g.set_region([0.0, 0.0], [0.3, 0.3], CellState::Occupied).is_empty());
    }

    #[test]
    fn corridor_in_open_space_is_clipped_box() {
        let g = open(30, 30);
        let c = build_corridor(&g, &line([1.0, 1.0], [2.0, 1.0], 50), 10.0).unwrap();
        assert_eq!(c.polytope.n_rows(), 4);
        assert!(c.polytope.contains(&[0.0, 0.0], 1e-12) && c.polytope.contains(&[3.0, 3.0], 1e-12));
        assert!(!c.polytope.contains(&[3.01, 1.0], 1e-12));
    }

    #[test]
    fn seed_in_blocked_cell_rejected() {
        let mut g = open(30, 30);
        g.set((15, 10), CellState::Unknown);
        assert!(matches!(
            build_corridor(&g, &line([1.0, 1.05], [2.0, 1.05], 50), 2.0),
            Err(WorldError::SeedInCollision(..))
        ));
    }
}
