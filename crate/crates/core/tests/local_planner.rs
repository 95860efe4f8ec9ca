use funnel_planner::dynamics::Bicycle;
use funnel_planner::local_planner::{
    plan_local, rollout_is_clear, LocalPlanError, LocalPlannerConfig, TrajectoryLibrary,
};
use funnel_planner::world::{CellState, OccupancyGrid};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

#[test]
fn only_the_tightest_arc_survives_a_carved_map() {
    let model = Bicycle::default();
    let lib = TrajectoryLibrary {
        horizon: 300,
        ..TrajectoryLibrary::default()
    };
    let cfg = LocalPlannerConfig::default();
    let start = [2.0, 2.0, 0.0];
    let sharpest = lib.curvatures.iter().position(|&k| k == 1.1).unwrap();
    let keep = lib.rollout(&model, sharpest, start);
    let mut g = OccupancyGrid::new(60, 60, 0.1, [0.0, 0.0], CellState::Occupied);
    for iy in 0..60 {
        for ix in 0..60 {
            let c = g.center((ix, iy));
            if keep.positions().any(|p| (p[0] - c[0]).hypot(p[1] - c[1]) < 0.19) {
                g.set((ix, iy), CellState::Free);
            }
        }
    }
    let clear: Vec<usize> = (0..lib.len())
        .filter(|&k| rollout_is_clear(&lib.rollout(&model, k, start), &g, cfg.tube_radius))
        .collect();
    assert_eq!(clear, vec![sharpest]);
    // the path pulls right, but only the left arc is admissible
    let path = [[2.0, 2.0], [4.0, 0.5]];
    let plan = plan_local(&lib, &model, start, &path, &g, &cfg).unwrap();
    assert_eq!(plan.primitive, sharpest);
}

fn mirrored(g: &OccupancyGrid) -> OccupancyGrid {
    let mut m = g.clone();
    for ((ix, iy), s) in g.cells() {
        m.set((ix, g.height as isize - 1 - iy), s);
    }
    m
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn mirrored_world_flips_the_curvature(seed in 0u64..10_000) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut g = OccupancyGrid::new(60, 60, 0.1, [0.0, 0.0], CellState::Free);
        for _ in 0..rng.gen_range(0..6) {
            let x = rng.gen_range(1.2..5.0);
            let y = rng.gen_range(0.5..5.5);
            g.set_region([x, y], [x + rng.gen_range(0.1..0.8), y + rng.gen_range(0.1..0.8)], CellState::Occupied);
        }
        let mid = 3.0;
        let path: Vec<[f64; 2]> = (0..4)
            .map(|k| [1.0 + k as f64 * rng.gen_range(0.3..1.0), mid + rng.gen_range(-1.5..1.5)])
            .collect();
        let flipped: Vec<[f64; 2]> = path.iter().map(|p| [p[0], 2.0 * mid - p[1]]).collect();
        let lib = TrajectoryLibrary::default();
        let model = Bicycle::default();
        let cfg = LocalPlannerConfig::default();
        let start = [1.0, mid, 0.0];
        let a = plan_local(&lib, &model, start, &path, &g, &cfg);
        let b = plan_local(&lib, &model, start, &flipped, &mirrored(&g), &cfg);
        match (a, b) {
            (Ok(a), Ok(b)) => {
                prop_assert_eq!(lib.curvatures[a.primitive], -lib.curvatures[b.primitive]);
                prop_assert!((a.cost - b.cost).abs() <= 1e-9);
            }
            (Err(LocalPlanError::NoCandidate), Err(LocalPlanError::NoCandidate)) => {}
            (a, b) => prop_assert!(false, "asymmetric outcome {:?} {:?}", a.map(|p| p.primitive), b.map(|p| p.primitive)),
        }
    }
}
