//! Acceptance suite. Runs as a plain binary so every criterion prints its
//! own PASS/FAIL line; exits non-zero if any criterion fails.

mod common;

use std::f64::consts::PI;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use common::library;
use funnel_planner::dynamics::{Bicycle, LinearErrorDynamics, PdTracker, TrackingErrorDynamics};
use funnel_planner::funnel::Funnel;
use funnel_planner::global_planner::{passable, plan_global};
use funnel_planner::loop_closure::{
    adjustable_area, close_loop, default_weights, funnel_area, verify_closed_loop, ClosureError, ClosureSolution,
};
use funnel_planner::loop_search::{find_loop, find_loop_with, FunnelNode, LoopSearchConfig, LoopSearchError, PreparedLibrary};
use funnel_planner::reachability::{backward_gradients, rollout, worst_case, DdpSettings, DisturbanceModel, FrsQuery};
use funnel_planner::sim::{scenario_library, RunLog, Scenario, SimError, Simulation};
use funnel_planner::trajectory::Trajectory;
use funnel_planner::world::{collision_cells_near, polygon_is_free, CellState, GridCell, OccupancyGrid};
use nalgebra::{Matrix1, Matrix3, Vector1, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

type Verdict = Result<String, String>;

fn check(ok: bool, detail: String) -> Verdict {
    if ok {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn scenario_path(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("scenarios").join(name)
}

// ---------------------------------------------------------------- reachability

fn lti_analytic(a: &Matrix3<f64>, c: &Vector3<f64>, e0: &Vector3<f64>, half: &[f64; 3], tau: usize) -> f64 {
    let mut g = *c;
    let mut total = 0.0;
    for _ in 0..tau {
        total += (0..3).map(|k| g[k].abs() * half[k]).sum::<f64>();
        g = a.transpose() * g;
    }
    total + c.dot(&(a.pow(tau as u32) * e0))
}

fn lti_exactness() -> Verdict {
    let one_pass = DdpSettings {
        max_iterations: 1,
        ..DdpSettings::default()
    };
    let ed = LinearErrorDynamics::time_invariant(Matrix1::new(0.5), 3);
    let w = DisturbanceModel::symmetric_box([1.0]).unwrap();
    let q = FrsQuery {
        direction: Vector1::new(1.0),
        offset: 0.0,
        horizon: 3,
        initial_error: Vector1::zeros(),
    };
    let scalar = worst_case(&ed, &w, &q, &one_pass).map_err(|e| e.to_string())?.value;
    // 1 + 0.5 + 0.25
    let scalar_err = (scalar - 1.75).abs();

    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let mut worst = 0.0f64;
    for _ in 0..20 {
        let m = Matrix3::from_fn(|_, _| rng.gen_range(-1.0..1.0));
        let a = m * (rng.gen_range(0.3..0.95) / m.singular_values().max());
        let tau = rng.gen_range(1..40);
        let half = [rng.gen_range(0.01..1.0), rng.gen_range(0.01..1.0), rng.gen_range(0.01..1.0)];
        let w = DisturbanceModel::symmetric_box(half).unwrap();
        let ed = LinearErrorDynamics::time_invariant(a, tau);
        let c = Vector3::from_fn(|_, _| rng.gen_range(-1.0..1.0));
        let e0 = Vector3::from_fn(|_, _| rng.gen_range(-1.0..1.0));
        let q = FrsQuery {
            direction: c,
            offset: 0.0,
            horizon: tau,
            initial_error: e0,
        };
        let got = worst_case(&ed, &w, &q, &one_pass).map_err(|e| e.to_string())?.value;
        worst = worst.max((got - lti_analytic(&a, &c, &e0, &half, tau)).abs());
    }
    check(
        scalar_err <= 1e-8 && worst <= 1e-8,
        format!("scalar value {scalar:.12} (err {scalar_err:.1e}), 20 random systems max err {worst:.1e}, tol 1e-8"),
    )
}

fn arc(kappa: f64, heading: f64, n: usize) -> Trajectory {
    let model = Bicycle::default();
    let mut states = vec![[0.3, -0.2, heading]];
    let inputs = vec![[0.5, kappa]; n];
    for u in &inputs {
        let next = funnel_planner::dynamics::bicycle_step(states.last().unwrap(), u, &[0.0; 3], model.dt);
        states.push(next);
    }
    Trajectory::new(states, inputs, model.dt)
}

fn gradient_check() -> Verdict {
    const W_BOX: [f64; 3] = [5e-4, 5e-4, 1e-3];
    let model = Bicycle::default();
    let ctrl = PdTracker::default();
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut worst = 0.0f64;
    for _ in 0..100 {
        let reference = arc(rng.gen_range(-1.0..1.0), rng.gen_range(-3.0..3.0), 60);
        let ed = TrackingErrorDynamics::new(&model, &ctrl, &reference);
        let tau = rng.gen_range(2..=60);
        let e0 = Vector3::new(rng.gen_range(-0.02..0.02), rng.gen_range(-0.02..0.02), rng.gen_range(-0.05..0.05));
        let w: Vec<Vector3<f64>> = (0..tau)
            .map(|_| Vector3::from_fn(|k, _| rng.gen_range(-W_BOX[k]..W_BOX[k])))
            .collect();
        let c = Vector3::from_fn(|_, _| rng.gen_range(-1.0..1.0));
        let g = backward_gradients(&ed, &rollout(&ed, &e0, &w), &c);
        let h = 1e-6;
        for t in 0..tau {
            for k in 0..3 {
                let mut wp = w.clone();
                let mut wm = w.clone();
                wp[t][k] += h;
                wm[t][k] -= h;
                let fd = (c.dot(&rollout(&ed, &e0, &wp)[tau]) - c.dot(&rollout(&ed, &e0, &wm)[tau])) / (2.0 * h);
                worst = worst.max((fd - g[t][k]).abs());
            }
        }
    }
    check(worst <= 1e-4, format!("100 bicycle instances, max |analytic - central difference| {worst:.2e}, tol 1e-4"))
}

// ---------------------------------------------------------------- closure

const TRUST: f64 = 2.0;

fn scattered(rng: &mut ChaCha8Rng, blocks: usize) -> OccupancyGrid {
    let mut g = OccupancyGrid::new(120, 120, 0.1, [0.0, 0.0], CellState::Free);
    for _ in 0..blocks {
        let x = rng.gen_range(0.0..12.0);
        let y = rng.gen_range(0.0..12.0);
        let state = if rng.gen_bool(0.3) { CellState::Unknown } else { CellState::Occupied };
        g.set_region([x, y], [x + rng.gen_range(0.1..0.7), y + rng.gen_range(0.1..0.7)], state);
    }
    g
}

fn area_soundness() -> Verdict {
    let mut rng = ChaCha8Rng::seed_from_u64(77);
    let lib = library();
    let (mut instances, mut samples, mut violations, mut over_budget) = (0, 0usize, 0usize, 0);
    while instances < 20 {
        let grid = scattered(&mut rng, 40);
        let f = &lib.funnels[rng.gen_range(0..lib.funnels.len())];
        let f = f.translated([rng.gen_range(3.0..9.0), rng.gen_range(3.0..9.0)]);
        if !polygon_is_free(&grid, &f.encompassing) {
            continue;
        }
        let cells: Vec<_> = collision_cells_near(&grid, &f.encompassing, TRUST * 2f64.sqrt() + grid.resolution)
            .into_iter()
            .map(|c| c.polytope)
            .collect();
        let raw = match adjustable_area(&f.encompassing, &cells) {
            Ok(a) => a,
            Err(ClosureError::TouchingObstacle) => continue,
            Err(e) => return Err(e.to_string()),
        };
        instances += 1;
        if raw.iterations > cells.len() {
            over_budget += 1;
        }
        let area = funnel_area(&grid, &f, TRUST).map_err(|e| e.to_string())?;
        let mut accepted = 0;
        let mut tries = 0;
        while accepted < 1000 && tries < 400_000 {
            tries += 1;
            let dp = [rng.gen_range(-TRUST..TRUST), rng.gen_range(-TRUST..TRUST)];
            if !area.contains(&dp, 0.0) {
                continue;
            }
            accepted += 1;
            if !polygon_is_free(&grid, &f.encompassing.translated(&dp)) {
                violations += 1;
            }
        }
        samples += accepted;
    }
    check(
        violations == 0 && over_budget == 0 && samples >= 20 * 1000,
        format!(
            "{instances} grids, {samples} sampled translations, {violations} collisions, {over_budget} runs over the iteration bound"
        ),
    )
}

fn wrap(a: f64) -> f64 {
    (a + PI).rem_euclid(2.0 * PI) - PI
}

/// Composition checked by sampling the exit circle and comparing heading
/// interval endpoints directly.
fn links_by_sampling(fi: &Funnel, fj: &Funnel) -> bool {
    let pts = (0..64).map(|k| {
        let a = k as f64 * 2.0 * PI / 64.0;
        [fi.exit_center[0] + fi.exit_radius * a.cos(), fi.exit_center[1] + fi.exit_radius * a.sin()]
    });
    let in_entrance = pts.chain(std::iter::once(fi.exit_center)).all(|p| {
        fj.entrance
            .contains(&[p[0] - fj.entrance_center[0], p[1] - fj.entrance_center[1]], 1e-9)
    });
    let mid_i = 0.5 * (fi.exit_heading[0] + fi.exit_heading[1]);
    let mid_j = 0.5 * (fj.entrance_heading[0] + fj.entrance_heading[1]);
    let d = wrap(mid_i - mid_j);
    let half_i = 0.5 * (fi.exit_heading[1] - fi.exit_heading[0]);
    let half_j = 0.5 * (fj.entrance_heading[1] - fj.entrance_heading[0]);
    in_entrance && d.abs() + half_i <= half_j + 1e-9
}

/// Every point on a 2 cm lattice inside the shape lies in a free cell.
fn free_by_lattice(grid: &OccupancyGrid, f: &Funnel) -> bool {
    let v = f.encompassing.vertices();
    let lo = [v.iter().map(|p| p[0]).fold(f64::INFINITY, f64::min), v.iter().map(|p| p[1]).fold(f64::INFINITY, f64::min)];
    let hi = [
        v.iter().map(|p| p[0]).fold(f64::NEG_INFINITY, f64::max),
        v.iter().map(|p| p[1]).fold(f64::NEG_INFINITY, f64::max),
    ];
    let step = 0.02;
    let nx = ((hi[0] - lo[0]) / step).ceil() as usize;
    let ny = ((hi[1] - lo[1]) / step).ceil() as usize;
    (0..=ny).all(|j| {
        (0..=nx).all(|i| {
            let p = [lo[0] + i as f64 * step, lo[1] + j as f64 * step];
            !f.encompassing.contains(&p, 0.0) || grid.state_at(p) == CellState::Free
        })
    })
}

fn closure_correctness() -> Verdict {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let prepared = PreparedLibrary::new(library());
    let normals = &library().funnels[0].entrance;
    let cfg = LoopSearchConfig::default();
    let (mut closed, mut violations) = (0, 0);
    for _ in 0..50 {
        let grid = scattered(&mut rng, 12);
        let end = [rng.gen_range(4.0..8.0), rng.gen_range(4.0..8.0)];
        let h = rng.gen_range(0..16) as f64 * PI / 8.0 + rng.gen_range(-0.1..0.1);
        let worst: Vec<f64> = (0..normals.n_rows()).map(|_| rng.gen_range(0.005..0.05)).collect();
        let b_frs: Vec<f64> = normals.offsets().iter().zip(&worst).map(|(b, w)| b - w).collect();
        let root = FunnelNode::from_terminal_set(end, normals, &worst, [h - 0.05, h + 0.05]);
        let close = |funnels: &[Funnel]| -> Result<ClosureSolution, ClosureError> {
            let areas = funnels.iter().map(|f| funnel_area(&grid, f, TRUST)).collect::<Result<Vec<_>, _>>()?;
            let (w0, w) = default_weights(funnels.len());
            close_loop(funnels, &areas, &b_frs, end, w0, &w)
        };
        let Ok((candidate, solution)) = find_loop_with(&root, &prepared, &grid, &cfg, |c| close(&c.funnels).ok()) else {
            continue;
        };
        closed += 1;
        let fixed = solution.apply(&candidate.funnels);
        let n = fixed.len();
        let links = (0..n).all(|i| links_by_sampling(&fixed[i], &fixed[(i + 1) % n]));
        let free = fixed.iter().all(|f| free_by_lattice(&grid, f) && polygon_is_free(&grid, &f.encompassing));
        let first = &fixed[0];
        let rel = [end[0] - first.entrance_center[0], end[1] - first.entrance_center[1]];
        let entry = first.entrance.rows().zip(&b_frs).all(|(a, b)| a[0] * rel[0] + a[1] * rel[1] <= b + 1e-9);
        let library_route = verify_closed_loop(&fixed, &grid, &b_frs, end).is_empty();
        if !(links && free && entry && library_route) {
            violations += 1;
        }
    }
    check(
        violations == 0 && closed >= 30,
        format!("50 instances, {closed} closed, {violations} failing the independent re-check"),
    )
}

// ---------------------------------------------------------------- simulation

struct Runs {
    /// (scenario, seed, outcome)
    logs: Vec<(&'static str, u64, Result<RunLog, SimError>)>,
}

fn run_scenario(file: &str, edit: impl FnOnce(&mut Scenario)) -> Result<RunLog, SimError> {
    let mut sc = Scenario::load(&scenario_path(file))?;
    edit(&mut sc);
    let lib = scenario_library(&sc)?;
    Simulation::new(sc, &lib)?.run_to_end()
}

fn closed_loop_runs() -> Runs {
    let mut logs = Vec::new();
    for name in ["corridor", "dead_end", "boxes"] {
        for seed in 1..=10 {
            let log = run_scenario(&format!("{name}.json"), |s| s.seed = seed);
            logs.push((name, seed, log));
        }
    }
    Runs { logs }
}

fn containment(runs: &Runs) -> Verdict {
    let mut failures = Vec::new();
    let (mut collisions, mut min_clear, mut loop_epochs, mut uncontained) = (0, f64::INFINITY, 0, 0);
    for (name, seed, log) in &runs.logs {
        match log {
            Ok(log) => {
                let s = log.summary();
                collisions += s.collision_epochs;
                min_clear = min_clear.min(s.min_clearance);
                loop_epochs += s.loop_epochs;
                uncontained += s.containment_violations;
            }
            Err(e) => failures.push(format!("{name}/{seed}: {e}")),
        }
    }
    let mut frozen_epochs = Vec::new();
    let mut frozen_uncontained = 0;
    for name in ["corridor", "dead_end", "boxes"] {
        let log = run_scenario(&format!("{name}.json"), |s| {
            s.freeze_after_loop_entry = true;
            s.duration = 400.0;
            s.map_events.clear();
        });
        match log {
            Ok(log) => {
                let s = log.summary();
                collisions += s.collision_epochs;
                frozen_epochs.push(s.loop_epochs);
                frozen_uncontained += s.containment_violations;
            }
            Err(e) => failures.push(format!("{name}/frozen: {e}")),
        }
    }
    let frozen_total: usize = frozen_epochs.iter().sum();
    check(
        failures.is_empty() && collisions == 0 && uncontained == 0 && frozen_uncontained == 0 && frozen_total >= 10_000,
        format!(
            "{} runs of 300 s: {collisions} collision epochs, min clearance {min_clear:.3} m, {loop_epochs} loop epochs \
             with {uncontained} outside; frozen loops {frozen_epochs:?} epochs with {frozen_uncontained} outside{}",
            runs.logs.len(),
            if failures.is_empty() { String::new() } else { format!("; errors: {}", failures.join(", ")) }
        ),
    )
}

const POCKET: [f64; 4] = [10.0, 6.2, 14.0, 7.2];

/// Distance from `p` to the pocket interior rectangle; zero inside.
fn pocket_distance(p: [f64; 2]) -> f64 {
    let dx = (POCKET[0] - p[0]).max(p[0] - POCKET[2]).max(0.0);
    let dy = (POCKET[1] - p[1]).max(p[1] - POCKET[3]).max(0.0);
    dx.hypot(dy)
}

fn dead_end_refusal() -> Verdict {
    let log = run_scenario("pocket.json", |_| {}).map_err(|e| e.to_string())?;
    let closest = log.epochs().map(|e| pocket_distance([e.state[0], e.state[1]])).fold(f64::INFINITY, f64::min);

    let sc = Scenario::load(&scenario_path("pocket.json")).map_err(|e| e.to_string())?;
    let grid = OccupancyGrid::load(&sc.world_map).map_err(|e| e.to_string())?;
    let prepared = PreparedLibrary::new(library());
    let cfg = LoopSearchConfig {
        heuristic_weight: 10.0,
        node_budget: 20_000,
        ..LoopSearchConfig::default()
    };
    let (mut roots, mut exhausted, mut at_budget, mut found) = (0, 0, 0, 0);
    for i in 0..19 {
        for j in 0..5 {
            for h in 0..16 {
                let c = [POCKET[0] + 0.2 + 0.2 * i as f64, POCKET[1] + 0.1 + 0.2 * j as f64];
                let heading = wrap(h as f64 * PI / 8.0);
                let root = FunnelNode::root(c, 0.05, [heading - 0.05, heading + 0.05]);
                roots += 1;
                match find_loop(&root, &prepared, &grid, &cfg) {
                    Err(LoopSearchError::NotFound { expanded }) if expanded < cfg.node_budget => exhausted += 1,
                    Err(LoopSearchError::NotFound { .. }) => at_budget += 1,
                    Ok(_) => found += 1,
                    Err(e) => return Err(e.to_string()),
                }
            }
        }
    }
    check(
        closest > 0.0 && found == 0,
        format!(
            "run: closest approach to the pocket interior {closest:.2} m; search: {}/{roots} roots NotFound \
             ({exhausted} with the open list exhausted, {at_budget} at the {}-node budget)",
            exhausted + at_budget,
            cfg.node_budget
        ),
    )
}

// ---------------------------------------------------------------- global planner

fn astar(grid: &OccupancyGrid, start: GridCell, goal: GridCell) -> Option<(usize, usize)> {
    use std::collections::{BinaryHeap, HashMap};
    #[derive(PartialEq)]
    struct Node(f64, (usize, usize), GridCell);
    impl Eq for Node {}
    impl PartialOrd for Node {
        fn partial_cmp(&self, o: &Self) -> Option<std::cmp::Ordering> {
            Some(self.cmp(o))
        }
    }
    impl Ord for Node {
        fn cmp(&self, o: &Self) -> std::cmp::Ordering {
            o.0.total_cmp(&self.0)
        }
    }
    let value = |c: (usize, usize)| c.0 as f64 + c.1 as f64 * std::f64::consts::SQRT_2;
    let h = |c: GridCell| {
        let dx = (c.0 - goal.0).unsigned_abs() as f64;
        let dy = (c.1 - goal.1).unsigned_abs() as f64;
        dx.max(dy) + (std::f64::consts::SQRT_2 - 1.0) * dx.min(dy)
    };
    let mut best: HashMap<GridCell, (usize, usize)> = HashMap::new();
    let mut heap = BinaryHeap::new();
    best.insert(start, (0, 0));
    heap.push(Node(h(start), (0, 0), start));
    while let Some(Node(_, cost, c)) = heap.pop() {
        if best[&c] != cost {
            continue;
        }
        if c == goal {
            return Some(cost);
        }
        for dy in -1..=1isize {
            for dx in -1..=1isize {
                if (dx, dy) == (0, 0) {
                    continue;
                }
                let n = (c.0 + dx, c.1 + dy);
                if !passable(grid, n) {
                    continue;
                }
                let diag = dx != 0 && dy != 0;
                if diag && !(passable(grid, (c.0 + dx, c.1)) && passable(grid, (c.0, c.1 + dy))) {
                    continue;
                }
                let nc = if diag { (cost.0, cost.1 + 1) } else { (cost.0 + 1, cost.1) };
                if best.get(&n).is_none_or(|&old| value(nc) < value(old)) {
                    best.insert(n, nc);
                    heap.push(Node(value(nc) + h(n), nc, n));
                }
            }
        }
    }
    None
}

fn jps_matches_astar() -> Verdict {
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let (mut agree, mut solved) = (0, 0);
    for _ in 0..200 {
        let w = rng.gen_range(8..60);
        let h = rng.gen_range(8..60);
        let density = rng.gen_range(0.0..0.4);
        let mut g = OccupancyGrid::new(w, h, 0.1, [0.0, 0.0], CellState::Free);
        for iy in 0..h as isize {
            for ix in 0..w as isize {
                let r: f64 = rng.gen();
                if r < density {
                    g.set((ix, iy), CellState::Occupied);
                } else if r < density + 0.1 {
                    g.set((ix, iy), CellState::Unknown);
                }
            }
        }
        for _ in 0..rng.gen_range(0..4) {
            let x = rng.gen_range(0..w as isize);
            let y0 = rng.gen_range(0..h as isize);
            for y in y0..(y0 + rng.gen_range(2..h as isize)) {
                g.set((x, y), CellState::Occupied);
            }
        }
        let mut free = || loop {
            let c = (rng.gen_range(0..w as isize), rng.gen_range(0..h as isize));
            if passable(&g, c) {
                return c;
            }
        };
        let (s, t) = (free(), free());
        let oracle = astar(&g, s, t);
        let got = plan_global(&g, s, t).ok().map(|p| (p.straight, p.diagonal));
        if got.is_some() {
            solved += 1;
        }
        if got == oracle {
            agree += 1;
        }
    }
    check(agree == 200, format!("{agree}/200 maps agree with plain A* ({solved} reachable)"))
}

// ---------------------------------------------------------------- timing and search effort

fn timing() -> Verdict {
    let log = run_scenario("open_20m.json", |_| {}).map_err(|e| e.to_string())?;
    let s = log.summary();
    let st = s.mean_stage_ms;
    let others = [st.global, st.local, st.search, st.closure];
    let frs_largest = others.iter().all(|&x| st.frs >= x);
    check(
        s.mean_cycle_ms <= 200.0 && st.frs <= 150.0 && frs_largest,
        format!(
            "{} cycles on 200x200 grid: mean {:.2} ms (global {:.2}, local {:.2}, frs {:.2}, search {:.2}, closure {:.2})",
            s.cycles, s.mean_cycle_ms, st.global, st.local, st.frs, st.search, st.closure
        ),
    )
}

fn heuristic_weight() -> Verdict {
    let prepared = PreparedLibrary::new(library());
    let grid = OccupancyGrid::new(100, 100, 0.1, [0.0, 0.0], CellState::Free);
    let unit = LoopSearchConfig::default();
    let inflated = LoopSearchConfig {
        heuristic_weight: 10.0,
        ..unit
    };
    let (mut base, mut fast, mut valid) = (0, 0, 0);
    let roots = 8;
    for h in 0..roots {
        let heading = h as f64 * PI / 4.0 + 0.1;
        let root = FunnelNode::root([5.0, 5.0], 0.05, [heading - 0.05, heading + 0.05]);
        let a = find_loop(&root, &prepared, &grid, &unit).map_err(|e| e.to_string())?;
        let b = find_loop(&root, &prepared, &grid, &inflated).map_err(|e| e.to_string())?;
        base += a.expanded;
        fast += b.expanded;
        for c in [&a, &b] {
            let n = c.funnels.len();
            let chained = (0..n - 1).all(|i| links_by_sampling(&c.funnels[i], &c.funnels[i + 1]));
            let last = &c.funnels[n - 1];
            let gap = (last.exit_center[0] - root.exit_center[0]).hypot(last.exit_center[1] - root.exit_center[1]);
            if chained && n >= unit.min_depth && gap <= unit.close_radius && c.funnels.iter().all(|f| free_by_lattice(&grid, f)) {
                valid += 1;
            }
        }
    }
    let ratio = fast as f64 / base as f64;
    check(
        ratio <= 0.7 && valid == 2 * roots,
        format!("{roots} roots: weight 10 expands {fast}, weight 1 expands {base}, ratio {ratio:.3}; {valid}/{} loops valid", 2 * roots),
    )
}

fn box_resilience(runs: &Runs) -> Verdict {
    let sc = Scenario::load(&scenario_path("boxes.json")).map_err(|e| e.to_string())?;
    let removals: Vec<(f64, [f64; 4])> = sc
        .map_events
        .iter()
        .filter(|e| e.set_to == CellState::Free)
        .map(|e| (e.time, e.region))
        .collect();
    let inside = |p: [f64; 3], r: &[f64; 4]| (r[0]..=r[2]).contains(&p[0]) && (r[1]..=r[3]).contains(&p[1]);
    let mut problems = Vec::new();
    let mut delays = Vec::new();
    for (_, seed, log) in runs.logs.iter().filter(|r| r.0 == "boxes") {
        let log = match log {
            Ok(l) => l,
            Err(e) => {
                problems.push(format!("seed {seed}: {e}"));
                continue;
            }
        };
        for (removed, region) in &removals {
            let removed = *removed;
            let first = log
                .epochs()
                .find(|e| e.t >= removed && inside(e.state, region))
                .map(|e| e.t - removed);
            match first {
                Some(d) if d <= 30.0 => delays.push(d),
                Some(d) => problems.push(format!("seed {seed}: entered {d:.1} s after t={removed}")),
                None => problems.push(format!("seed {seed}: never entered after t={removed}")),
            }
        }
    }
    let longest = delays.iter().cloned().fold(0.0, f64::max);
    check(
        problems.is_empty(),
        format!(
            "{} removals entered within 30 s (longest {longest:.1} s), no plan violations{}",
            delays.len(),
            if problems.is_empty() { String::new() } else { format!("; {}", problems.join(", ")) }
        ),
    )
}

fn main() -> ExitCode {
    let mut failed = 0;
    let mut report = |name: &str, started: Instant, v: Verdict| {
        let secs = started.elapsed().as_secs_f64();
        match v {
            Ok(d) => println!("PASS {name}: {d} [{secs:.1} s]"),
            Err(d) => {
                failed += 1;
                println!("FAIL {name}: {d} [{secs:.1} s]");
            }
        }
    };
    let t = Instant::now();
    report("lti_exactness", t, lti_exactness());
    let t = Instant::now();
    report("gradient_finite_differences", t, gradient_check());
    let t = Instant::now();
    report("adjustable_area_soundness", t, area_soundness());
    let t = Instant::now();
    report("closure_correctness", t, closure_correctness());
    let t = Instant::now();
    let runs = closed_loop_runs();
    report("containment_and_safety", t, containment(&runs));
    let t = Instant::now();
    report("dead_end_refusal", t, dead_end_refusal());
    let t = Instant::now();
    report("jps_matches_astar", t, jps_matches_astar());
    let t = Instant::now();
    report("planning_cycle_timing", t, timing());
    let t = Instant::now();
    report("heuristic_weight_effort", t, heuristic_weight());
    let t = Instant::now();
    report("box_resilience", t, box_resilience(&runs));
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        println!("{failed} criteria failed");
        ExitCode::FAILURE
    }
}
