//! SVG figures from a run log.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use super::{RunLog, SimError};
use crate::orchestrator::Mode;
use crate::world::{CellState, OccupancyGrid};

const SCALE: f64 = 40.0;

struct Canvas {
    lo: [f64; 2],
    hi: [f64; 2],
    body: String,
}

impl Canvas {
    fn new(lo: [f64; 2], hi: [f64; 2]) -> Self {
        Self {
            lo,
            hi,
            body: String::new(),
        }
    }

    fn px(&self, p: [f64; 2]) -> (f64, f64) {
        ((p[0] - self.lo[0]) * SCALE, (self.hi[1] - p[1]) * SCALE)
    }

    fn map(&mut self, grid: &OccupancyGrid) {
        for iy in 0..grid.height as isize {
            let mut ix = 0isize;
            while ix < grid.width as isize {
                let s = grid.get((ix, iy));
                if s == CellState::Free {
                    ix += 1;
                    continue;
                }
                let start = ix;
                while ix < grid.width as isize && grid.get((ix, iy)) == s {
                    ix += 1;
                }
                let k0 = grid.cell_corners((start, iy));
                let k1 = grid.cell_corners((ix - 1, iy));
                let (x, y) = self.px([k0[0][0], k1[2][1]]);
                let fill = if s == CellState::Occupied { "#222" } else { "#bbb" };
                let _ = writeln!(
                    self.body,
                    r##"<rect x="{x:.1}" y="{y:.1}" width="{:.1}" height="{:.1}" fill="{fill}"/>"##,
                    (k1[2][0] - k0[0][0]) * SCALE,
                    grid.resolution * SCALE
                );
            }
        }
    }

    fn polyline(&mut self, pts: &[[f64; 2]], stroke: &str, width: f64, closed: bool, fill: &str) {
        if pts.is_empty() {
            return;
        }
        let coords: Vec<String> = pts
            .iter()
            .map(|p| {
                let (x, y) = self.px(*p);
                format!("{x:.1},{y:.1}")
            })
            .collect();
        let tag = if closed { "polygon" } else { "polyline" };
        let _ = writeln!(
            self.body,
            r##"<{tag} points="{}" fill="{fill}" stroke="{stroke}" stroke-width="{width}"/>"##,
            coords.join(" ")
        );
    }

    fn circle(&mut self, p: [f64; 2], r: f64, fill: &str) {
        let (x, y) = self.px(p);
        let _ = writeln!(self.body, r##"<circle cx="{x:.1}" cy="{y:.1}" r="{r}" fill="{fill}"/>"##);
    }

    fn arrowhead(&mut self, tip: [f64; 2], heading: f64, fill: &str) {
        let len = 0.3;
        let back = [tip[0] - len * heading.cos(), tip[1] - len * heading.sin()];
        let side = [-heading.sin() * 0.12, heading.cos() * 0.12];
        let pts = [
            tip,
            [back[0] + side[0], back[1] + side[1]],
            [back[0] - side[0], back[1] - side[1]],
        ];
        self.polyline(&pts, fill, 1.0, true, fill);
    }

    fn finish(self) -> String {
        let w = (self.hi[0] - self.lo[0]) * SCALE;
        let h = (self.hi[1] - self.lo[1]) * SCALE;
        format!(
            "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{w:.0}\" height=\"{h:.0}\" viewBox=\"0 0 {w:.1} {h:.1}\">\n<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n{}</svg>\n",
            self.body
        )
    }
}

fn write(out_dir: &Path, name: &str, svg: String, files: &mut Vec<PathBuf>) -> Result<(), SimError> {
    let path = out_dir.join(name);
    std::fs::write(&path, svg).map_err(|e| SimError::Io(format!("{}: {e}", path.display())))?;
    files.push(path);
    Ok(())
}

/// Mean of the planning-cycle totals, as shown on the histogram.
pub fn mean_cycle_ms(log: &RunLog) -> f64 {
    log.summary().mean_cycle_ms
}

/// Writes the trajectory, loop overlay, envelope and cycle-time figures
/// that the log has data for; returns the written files.
pub fn emit_plots(log: &RunLog, out_dir: &Path) -> Result<Vec<PathBuf>, SimError> {
    let (_, _, _, map_text) = log.header().ok_or_else(|| SimError::Io("log has no header".into()))?;
    let grid = OccupancyGrid::parse_map(map_text).map_err(|e| SimError::Io(e.to_string()))?;
    let states: Vec<[f64; 3]> = log.epochs().map(|e| e.state).collect();
    if states.is_empty() {
        return Err(SimError::Io("log has no epochs".into()));
    }
    std::fs::create_dir_all(out_dir).map_err(|e| SimError::Io(e.to_string()))?;
    let (lo, hi) = grid.bounds();
    let path: Vec<[f64; 2]> = states.iter().map(|s| [s[0], s[1]]).collect();
    let mut files = Vec::new();

    let base = |grid: &OccupancyGrid| {
        let mut c = Canvas::new(lo, hi);
        c.map(grid);
        c
    };

    let mut c = base(&grid);
    c.polyline(&path, "#1f77b4", 2.0, false, "none");
    c.circle(path[0], 6.0, "#2ca02c");
    let last = states[states.len() - 1];
    c.arrowhead([last[0], last[1]], last[2], "#d62728");
    write(out_dir, "trajectory.svg", c.finish(), &mut files)?;

    // loops that were being followed, spread over the run
    let mut followed: Vec<u64> = Vec::new();
    for e in log.epochs() {
        if let (Mode::InLoop { .. }, Some(id)) = (e.mode, e.plan) {
            if !followed.contains(&id) {
                followed.push(id);
            }
        }
    }
    if !followed.is_empty() {
        let picks = 4.min(followed.len());
        let mut c = base(&grid);
        c.polyline(&path, "#1f77b4", 1.0, false, "none");
        let colors = ["#ff7f0e", "#9467bd", "#8c564b", "#e377c2"];
        for k in 0..picks {
            let id = followed[k * followed.len() / picks];
            if let Some(plan) = log.plan(id) {
                for f in &plan.funnels {
                    c.polyline(&f.outline, colors[k], 1.5, true, "none");
                }
                c.polyline(&plan.local, colors[k], 2.5, false, "none");
            }
        }
        write(out_dir, "loops.svg", c.finish(), &mut files)?;
    }

    let envelopes: Vec<&Vec<Vec<[f64; 2]>>> = log.cycles().map(|c| &c.envelope).filter(|e| !e.is_empty()).collect();
    if !envelopes.is_empty() {
        let mut c = base(&grid);
        c.polyline(&path, "#1f77b4", 1.0, false, "none");
        let step = (envelopes.len() / 20).max(1);
        for env in envelopes.iter().step_by(step) {
            for slice in env.iter() {
                c.polyline(slice, "#d62728", 1.0, true, "rgba(214,39,40,0.15)");
            }
        }
        write(out_dir, "frs.svg", c.finish(), &mut files)?;
    }

    let totals: Vec<f64> = log.planning_cycles().map(|c| c.durations.total()).collect();
    if !totals.is_empty() {
        write(out_dir, "cycle_times.svg", histogram(&totals, mean_cycle_ms(log)), &mut files)?;
    }
    Ok(files)
}

fn histogram(values: &[f64], mean: f64) -> String {
    let bins = 20;
    let max = values.iter().fold(0.0f64, |m, v| m.max(*v)).max(1e-9);
    let width = max / bins as f64;
    let mut counts = vec![0usize; bins];
    for v in values {
        counts[((v / width) as usize).min(bins - 1)] += 1;
    }
    let top = *counts.iter().max().unwrap_or(&1) as f64;
    let (w, h, pad) = (600.0, 300.0, 40.0);
    let mut body = String::new();
    for (k, n) in counts.iter().enumerate() {
        let bw = (w - 2.0 * pad) / bins as f64;
        let bh = (h - 2.0 * pad) * *n as f64 / top;
        let _ = writeln!(
            body,
            r##"<rect x="{:.1}" y="{:.1}" width="{:.1}" height="{bh:.1}" fill="#1f77b4"/>"##,
            pad + k as f64 * bw,
            h - pad - bh,
            bw - 1.0
        );
    }
    let mx = pad + (w - 2.0 * pad) * (mean / max).min(1.0);
    let _ = writeln!(
        body,
        r##"<line x1="{mx:.1}" y1="{pad}" x2="{mx:.1}" y2="{:.1}" stroke="#d62728" stroke-width="2"/>"##,
        h - pad
    );
    let _ = writeln!(
        body,
        r##"<text x="{pad}" y="24" font-size="14" font-family="sans-serif">cycles {} mean {mean:.2} ms</text>"##,
        values.len()
    );
    let _ = writeln!(
        body,
        r##"<text x="{:.1}" y="{:.1}" font-size="12" font-family="sans-serif">{max:.1} ms</text>"##,
        w - pad - 40.0,
        h - 12.0
    );
    format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{w}\" height=\"{h}\">\n<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n{body}</svg>\n"
    )
}
