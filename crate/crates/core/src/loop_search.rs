//! Best-first search over chains of translated library funnels for a chain
//! that returns to its own start.

use std::cmp::Ordering;
use std::collections::{BinaryHeap, HashSet};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::convex::Polytope;
use crate::funnel::{heading_within, Funnel, FunnelLibrary, HeadingInterval};
use crate::world::{polytope_bounds, OccupancyGrid};

#[derive(Debug, Clone, Error, PartialEq)]
pub enum LoopSearchError {
    #[error("no loop found after {expanded} expansions")]
    NotFound { expanded: usize },
    #[error("heuristic weight must be at least 1")]
    InvalidWeight,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LoopSearchConfig {
    pub close_radius: f64,
    pub heuristic_weight: f64,
    pub node_budget: usize,
    pub min_depth: usize,
    pub position_bin: f64,
    pub heading_bins: usize,
}

impl Default for LoopSearchConfig {
    fn default() -> Self {
        Self {
            close_radius: 0.3,
            heuristic_weight: 1.0,
            node_budget: 5000,
            min_depth: 3,
            position_bin: 0.1,
            heading_bins: 16,
        }
    }
}

/// Search node: an exit set plus the funnel that produced it.
#[derive(Debug, Clone, PartialEq)]
pub struct FunnelNode {
    pub exit_center: [f64; 2],
    pub exit_radius: f64,
    pub exit_heading: HeadingInterval,
    pub parent: Option<usize>,
    pub funnel: Option<Funnel>,
    pub g_cost: f64,
    pub depth: usize,
}

impl FunnelNode {
    /// Root from a terminal reachable set given by its worst extents
    /// `worst[i] = max a_i^T e` along the entrance normals `a_i` around
    /// `end_point`. The center balances opposite extents; the radius covers
    /// the largest remaining extent, so any entrance with those normals and
    /// inradius at least the radius holds the set when centered there.
    pub fn from_terminal_set(end_point: [f64; 2], normals: &Polytope, worst: &[f64], heading: HeadingInterval) -> Self {
        let rows: Vec<&[f64]> = normals.rows().collect();
        // least-squares shift: sum a a^T over the rows
        let (mut sxx, mut sxy, mut syy, mut bx, mut by) = (0.0, 0.0, 0.0, 0.0, 0.0);
        for (a, v) in rows.iter().zip(worst) {
            sxx += a[0] * a[0];
            sxy += a[0] * a[1];
            syy += a[1] * a[1];
            bx += a[0] * v;
            by += a[1] * v;
        }
        let det = sxx * syy - sxy * sxy;
        let shift = if det.abs() > 1e-12 {
            [(syy * bx - sxy * by) / det, (sxx * by - sxy * bx) / det]
        } else {
            [0.0, 0.0]
        };
        let center = [end_point[0] + shift[0], end_point[1] + shift[1]];
        let radius = rows
            .iter()
            .zip(worst)
            .map(|(a, v)| v - (a[0] * shift[0] + a[1] * shift[1]))
            .fold(0.0, f64::max);
        Self::root(center, radius, heading)
    }

    pub fn root(center: [f64; 2], radius: f64, heading: HeadingInterval) -> Self {
        Self {
            exit_center: center,
            exit_radius: radius,
            exit_heading: heading,
            parent: None,
            funnel: None,
            g_cost: 0.0,
            depth: 0,
        }
    }
}

/// Library plus the bounding boxes of its encompassing shapes.
#[derive(Debug, Clone)]
pub struct PreparedLibrary<'a> {
    pub library: &'a FunnelLibrary,
    bounds: Vec<([f64; 2], [f64; 2])>,
}

impl<'a> PreparedLibrary<'a> {
    pub fn new(library: &'a FunnelLibrary) -> Self {
        let bounds = library
            .funnels
            .iter()
            .map(|f| polytope_bounds(&f.encompassing).expect("encompassing shapes are bounded"))
            .collect();
        Self { library, bounds }
    }
}

/// Closed chain of translated funnels; the last exit is meant to re-enter
/// the first funnel after closure.
#[derive(Debug, Clone, PartialEq)]
pub struct LoopCandidate {
    pub funnels: Vec<Funnel>,
    pub closure_gap: f64,
    pub expanded: usize,
}

/// True when the translated encompassing shape keeps one cell of clearance
/// from every blocked cell center.
pub fn encompassing_is_clear(grid: &OccupancyGrid, funnel: &Funnel, bounds: ([f64; 2], [f64; 2]), dp: [f64; 2]) -> bool {
    let lo = [bounds.0[0] + dp[0], bounds.0[1] + dp[1]];
    let hi = [bounds.1[0] + dp[0], bounds.1[1] + dp[1]];
    let e = funnel.encompassing.translated(&dp);
    grid.blocked_center_in(&e, lo, hi, grid.resolution).is_none()
}

/// Children of `node`: every library funnel whose entrance heading box
/// contains the node's exit heading box, translated onto the exit center,
/// whose entrance holds the exit ball and whose shape is collision-free.
pub fn expand(node: &FunnelNode, prepared: &PreparedLibrary<'_>, grid: &OccupancyGrid) -> Vec<FunnelNode> {
    let mut out = Vec::new();
    for (k, f) in prepared.library.funnels.iter().enumerate() {
        if !heading_within(node.exit_heading, f.entrance_heading, 1e-12) {
            continue;
        }
        let dp = [
            node.exit_center[0] - f.entrance_center[0],
            node.exit_center[1] - f.entrance_center[1],
        ];
        // entrance centered on the exit center: the ball fits iff every
        // facet offset covers the radius
        if f.entrance.offsets().iter().any(|&b| b < node.exit_radius) {
            continue;
        }
        if !encompassing_is_clear(grid, f, prepared.bounds[k], dp) {
            continue;
        }
        let moved = f.translated(dp);
        out.push(FunnelNode {
            exit_center: moved.exit_center,
            exit_radius: moved.exit_radius,
            exit_heading: moved.exit_heading,
            parent: None,
            g_cost: node.g_cost + f.length(),
            depth: node.depth + 1,
            funnel: Some(moved),
        });
    }
    out
}

#[derive(Debug, Clone, Copy)]
struct Open {
    f: f64,
    order: u64,
    node: usize,
}

impl PartialEq for Open {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}
impl Eq for Open {}
impl PartialOrd for Open {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}
impl Ord for Open {
    fn cmp(&self, other: &Self) -> Ordering {
        other.f.total_cmp(&self.f).then(other.order.cmp(&self.order))
    }
}

fn distance(a: [f64; 2], b: [f64; 2]) -> f64 {
    (a[0] - b[0]).hypot(a[1] - b[1])
}

fn bin(node: &FunnelNode, config: &LoopSearchConfig) -> (i64, i64, i64) {
    let mid = 0.5 * (node.exit_heading[0] + node.exit_heading[1]);
    let step = 2.0 * std::f64::consts::PI / config.heading_bins as f64;
    let h = ((mid / step).round() as i64).rem_euclid(config.heading_bins as i64);
    (
        (node.exit_center[0] / config.position_bin).floor() as i64,
        (node.exit_center[1] / config.position_bin).floor() as i64,
        h,
    )
}

/// A* from `root` for a chain of at least `min_depth` funnels whose last
/// exit lands within `close_radius` of the root center with a heading box
/// inside the first funnel's entrance box.
pub fn find_loop(
    root: &FunnelNode,
    prepared: &PreparedLibrary<'_>,
    grid: &OccupancyGrid,
    config: &LoopSearchConfig,
) -> Result<LoopCandidate, LoopSearchError> {
    find_loop_with(root, prepared, grid, config, |_| Some(())).map(|(c, _)| c)
}

/// [`find_loop`] where each goal candidate must also pass `accept`; rejected
/// candidates are expanded like ordinary nodes and the search goes on.
pub fn find_loop_with<T, F: FnMut(&LoopCandidate) -> Option<T>>(
    root: &FunnelNode,
    prepared: &PreparedLibrary<'_>,
    grid: &OccupancyGrid,
    config: &LoopSearchConfig,
    mut accept: F,
) -> Result<(LoopCandidate, T), LoopSearchError> {
    if config.heuristic_weight < 1.0 {
        return Err(LoopSearchError::InvalidWeight);
    }
    let target = root.exit_center;
    let heuristic = |n: &FunnelNode| {
        if n.depth < config.min_depth {
            0.0
        } else {
            config.heuristic_weight * (distance(n.exit_center, target) - config.close_radius).max(0.0)
        }
    };
    let mut nodes = vec![FunnelNode {
        parent: None,
        g_cost: 0.0,
        depth: 0,
        ..root.clone()
    }];
    let mut heap = BinaryHeap::new();
    let mut order = 0u64;
    heap.push(Open { f: 0.0, order, node: 0 });
    let mut closed: HashSet<(i64, i64, i64)> = HashSet::new();
    let mut expanded = 0usize;
    while let Some(Open { node: id, .. }) = heap.pop() {
        let node = nodes[id].clone();
        if node.depth >= config.min_depth {
            let first = first_funnel(&nodes, id);
            let gap = distance(node.exit_center, target);
            if gap <= config.close_radius && heading_within(node.exit_heading, first.entrance_heading, 1e-12) {
                let candidate = LoopCandidate {
                    funnels: chain(&nodes, id),
                    closure_gap: gap,
                    expanded,
                };
                if let Some(extra) = accept(&candidate) {
                    return Ok((candidate, extra));
                }
            }
        }
        if !closed.insert(bin(&node, config)) && id != 0 {
            continue;
        }
        if expanded >= config.node_budget {
            break;
        }
        expanded += 1;
        for mut child in expand(&node, prepared, grid) {
            child.parent = Some(id);
            let f = child.g_cost + heuristic(&child);
            nodes.push(child);
            order += 1;
            heap.push(Open {
                f,
                order,
                node: nodes.len() - 1,
            });
        }
    }
    Err(LoopSearchError::NotFound { expanded })
}

fn chain(nodes: &[FunnelNode], mut id: usize) -> Vec<Funnel> {
    let mut out = Vec::new();
    while let Some(f) = &nodes[id].funnel {
        out.push(f.clone());
        id = nodes[id].parent.expect("non-root nodes have parents");
    }
    out.reverse();
    out
}

fn first_funnel(nodes: &[FunnelNode], mut id: usize) -> &Funnel {
    loop {
        let parent = nodes[id].parent.expect("non-root nodes have parents");
        if parent == 0 {
            return nodes[id].funnel.as_ref().expect("non-root nodes carry a funnel");
        }
        id = parent;
    }
}
