//! Jump point search on the 8-connected occupancy grid. Free and Unknown
//! cells are traversable; diagonal moves need both adjacent side cells open.

use std::cmp::Ordering;
use std::collections::{BinaryHeap, HashMap};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::world::{CellState, GridCell, OccupancyGrid};

#[derive(Debug, Clone, Error, PartialEq)]
pub enum GlobalPlanError {
    #[error("no path to the goal")]
    NoPath,
    #[error("start cell {0:?} is occupied")]
    StartOccupied(GridCell),
}

/// Grid path with its exact octile cost split into straight and diagonal
/// step counts.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridPath {
    pub cells: Vec<GridCell>,
    pub straight: usize,
    pub diagonal: usize,
    pub length: f64,
}

impl GridPath {
    /// World-frame cell centers along the path.
    pub fn points(&self, grid: &OccupancyGrid) -> Vec<[f64; 2]> {
        self.cells.iter().map(|&c| grid.center(c)).collect()
    }
}

pub fn passable(grid: &OccupancyGrid, c: GridCell) -> bool {
    grid.get(c) != CellState::Occupied
}

/// Octile distance in cells.
pub fn octile(a: GridCell, b: GridCell) -> f64 {
    let dx = (a.0 - b.0).unsigned_abs() as f64;
    let dy = (a.1 - b.1).unsigned_abs() as f64;
    dx.max(dy) + (std::f64::consts::SQRT_2 - 1.0) * dx.min(dy)
}

#[derive(Debug, Clone, Copy)]
struct Entry {
    f: f64,
    order: u64,
    cell: GridCell,
}

impl PartialEq for Entry {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}
impl Eq for Entry {}
impl PartialOrd for Entry {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}
impl Ord for Entry {
    fn cmp(&self, other: &Self) -> Ordering {
        other.f.total_cmp(&self.f).then(other.order.cmp(&self.order))
    }
}

struct Search<'a> {
    grid: &'a OccupancyGrid,
    goal: GridCell,
}

impl Search<'_> {
    fn open(&self, c: GridCell) -> bool {
        passable(self.grid, c)
    }

    fn neighbors(&self, c: GridCell, parent: Option<GridCell>) -> Vec<GridCell> {
        let (x, y) = c;
        let mut out = Vec::with_capacity(8);
        let Some(p) = parent else {
            for dy in -1..=1 {
                for dx in -1..=1 {
                    if (dx, dy) == (0, 0) {
                        continue;
                    }
                    if self.can_step(c, dx, dy) {
                        out.push((x + dx, y + dy));
                    }
                }
            }
            return out;
        };
        let dx = (x - p.0).signum();
        let dy = (y - p.1).signum();
        if dx != 0 && dy != 0 {
            let v = self.open((x, y + dy));
            let h = self.open((x + dx, y));
            if v {
                out.push((x, y + dy));
            }
            if h {
                out.push((x + dx, y));
            }
            if v && h && self.open((x + dx, y + dy)) {
                out.push((x + dx, y + dy));
            }
        } else if dx != 0 {
            let next = self.open((x + dx, y));
            let up = self.open((x, y + 1));
            let down = self.open((x, y - 1));
            if next {
                out.push((x + dx, y));
                if up && self.open((x + dx, y + 1)) {
                    out.push((x + dx, y + 1));
                }
                if down && self.open((x + dx, y - 1)) {
                    out.push((x + dx, y - 1));
                }
            }
            if up {
                out.push((x, y + 1));
            }
            if down {
                out.push((x, y - 1));
            }
        } else {
            let next = self.open((x, y + dy));
            let right = self.open((x + 1, y));
            let left = self.open((x - 1, y));
            if next {
                out.push((x, y + dy));
                if right && self.open((x + 1, y + dy)) {
                    out.push((x + 1, y + dy));
                }
                if left && self.open((x - 1, y + dy)) {
                    out.push((x - 1, y + dy));
                }
            }
            if right {
                out.push((x + 1, y));
            }
            if left {
                out.push((x - 1, y));
            }
        }
        out
    }

    fn can_step(&self, c: GridCell, dx: isize, dy: isize) -> bool {
        let to = (c.0 + dx, c.1 + dy);
        if !self.open(to) {
            return false;
        }
        dx == 0 || dy == 0 || (self.open((c.0 + dx, c.1)) && self.open((c.0, c.1 + dy)))
    }

    /// Iterative jump from `from` in direction `(dx, dy)`.
    fn jump(&self, from: GridCell, dx: isize, dy: isize) -> Option<GridCell> {
        let mut cur = from;
        loop {
            if !self.can_step(cur, dx, dy) {
                return None;
            }
            let (x, y) = (cur.0 + dx, cur.1 + dy);
            if (x, y) == self.goal {
                return Some((x, y));
            }
            if dx != 0 && dy != 0 {
                if self.jump((x, y), dx, 0).is_some() || self.jump((x, y), 0, dy).is_some() {
                    return Some((x, y));
                }
            } else if dx != 0 {
                if (self.open((x, y - 1)) && !self.open((x - dx, y - 1)))
                    || (self.open((x, y + 1)) && !self.open((x - dx, y + 1)))
                {
                    return Some((x, y));
                }
            } else if (self.open((x - 1, y)) && !self.open((x - 1, y - dy)))
                || (self.open((x + 1, y)) && !self.open((x + 1, y - dy)))
            {
                return Some((x, y));
            }
            cur = (x, y);
        }
    }
}

/// Optimal 8-connected path from `start` to `goal` through Free and Unknown
/// cells, found by jump point search.
pub fn plan_global(grid: &OccupancyGrid, start: GridCell, goal: GridCell) -> Result<GridPath, GlobalPlanError> {
    if !passable(grid, start) {
        return Err(GlobalPlanError::StartOccupied(start));
    }
    if !passable(grid, goal) {
        return Err(GlobalPlanError::NoPath);
    }
    if start == goal {
        return Ok(expand(grid, &[start]));
    }
    let search = Search { grid, goal };
    let mut g: HashMap<GridCell, f64> = HashMap::new();
    let mut parent: HashMap<GridCell, GridCell> = HashMap::new();
    let mut heap = BinaryHeap::new();
    let mut order = 0u64;
    g.insert(start, 0.0);
    heap.push(Entry {
        f: octile(start, goal),
        order,
        cell: start,
    });
    let mut closed = std::collections::HashSet::new();
    while let Some(Entry { cell, .. }) = heap.pop() {
        if !closed.insert(cell) {
            continue;
        }
        if cell == goal {
            let mut jumps = vec![goal];
            let mut c = goal;
            while let Some(&p) = parent.get(&c) {
                jumps.push(p);
                c = p;
            }
            jumps.reverse();
            return Ok(expand(grid, &jumps));
        }
        let gc = g[&cell];
        for n in search.neighbors(cell, parent.get(&cell).copied()) {
            let dx = (n.0 - cell.0).signum();
            let dy = (n.1 - cell.1).signum();
            let Some(jp) = search.jump(cell, dx, dy) else {
                continue;
            };
            if closed.contains(&jp) {
                continue;
            }
            let ng = gc + octile(cell, jp);
            if g.get(&jp).is_none_or(|&old| ng < old) {
                g.insert(jp, ng);
                parent.insert(jp, cell);
                order += 1;
                heap.push(Entry {
                    f: ng + octile(jp, goal),
                    order,
                    cell: jp,
                });
            }
        }
    }
    Err(GlobalPlanError::NoPath)
}

/// Fills in the straight and diagonal runs between jump points.
fn expand(grid: &OccupancyGrid, jumps: &[GridCell]) -> GridPath {
    let mut cells = vec![jumps[0]];
    let mut straight = 0;
    let mut diagonal = 0;
    for w in jumps.windows(2) {
        let mut c = w[0];
        while c != w[1] {
            let dx = (w[1].0 - c.0).signum();
            let dy = (w[1].1 - c.1).signum();
            if dx != 0 && dy != 0 {
                diagonal += 1;
            } else {
                straight += 1;
            }
            c = (c.0 + dx, c.1 + dy);
            cells.push(c);
        }
    }
    GridPath {
        cells,
        straight,
        diagonal,
        length: (straight as f64 + diagonal as f64 * std::f64::consts::SQRT_2) * grid.resolution,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn open(n: usize) -> OccupancyGrid {
        OccupancyGrid::new(n, n, 0.1, [0.0, 0.0], CellState::Free)
    }

    #[test]
    fn start_equals_goal() {
        let p = plan_global(&open(5), (2, 2), (2, 2)).unwrap();
        assert_eq!(p.cells, vec![(2, 2)]);
        assert_eq!(p.length, 0.0);
    }

    #[test]
    fn corner_to_corner() {
        let p = plan_global(&open(10), (0, 0), (9, 9)).unwrap();
        assert_eq!((p.straight, p.diagonal), (0, 9));
        assert!((p.length - 9.0 * std::f64::consts::SQRT_2 * 0.1).abs() < 1e-12);
    }

    #[test]
    fn unknown_is_traversable_occupied_is_not() {
        let mut g = open(10);
        for y in 0..10 {
            g.set((5, y), CellState::Unknown);
        }
        let p = plan_global(&g, (0, 5), (9, 5)).unwrap();
        assert_eq!((p.straight, p.diagonal), (9, 0));
        for y in 0..10 {
            g.set((5, y), CellState::Occupied);
        }
        assert_eq!(plan_global(&g, (0, 5), (9, 5)), Err(GlobalPlanError::NoPath));
    }

    #[test]
    fn occupied_start() {
        let mut g = open(4);
        g.set((0, 0), CellState::Occupied);
        assert_eq!(plan_global(&g, (0, 0), (3, 3)), Err(GlobalPlanError::StartOccupied((0, 0))));
    }

    #[test]
    fn no_corner_cutting() {
        let mut g = open(3);
        g.set((1, 0), CellState::Occupied);
        let p = plan_global(&g, (0, 0), (2, 1)).unwrap();
        for w in p.cells.windows(2) {
            let (dx, dy) = (w[1].0 - w[0].0, w[1].1 - w[0].1);
            if dx != 0 && dy != 0 {
                assert!(passable(&g, (w[0].0 + dx, w[0].1)) && passable(&g, (w[0].0, w[0].1 + dy)));
            }
        }
    }
}
