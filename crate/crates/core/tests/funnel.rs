use std::f64::consts::PI;
use std::sync::OnceLock;

use funnel_planner::convex::Polytope;
use funnel_planner::dynamics::{Bicycle, PdTracker, TrackingErrorDynamics};
use funnel_planner::funnel::{
    calibrate_funnel, composable, constant_input_rollout, default_disturbance, heading_in, measure_tube,
    rollout_stays_in_funnel, standard_library, CalibrationConfig, Funnel, FunnelLibrary,
};
use funnel_planner::reachability::{rollout, worst_case, DdpSettings, DisturbanceModel, FrsQuery};
use nalgebra::Vector3;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn library() -> &'static FunnelLibrary {
    static LIB: OnceLock<FunnelLibrary> = OnceLock::new();
    LIB.get_or_init(|| {
        standard_library(&Bicycle::default(), &PdTracker::default(), &default_disturbance(), &CalibrationConfig::default())
            .expect("default library calibrates")
    })
}

#[test]
fn standard_library_has_eighty_funnels() {
    let lib = library();
    assert_eq!(lib.len(), 80);
    for f in &lib.funnels {
        assert!(f.exit_radius < f.entrance.offsets()[0]);
        assert!(f.encompassing.n_rows() <= 12);
        assert!(f.entrance.n_rows() <= 8);
        let s = f.nominal.start();
        assert_eq!([s[0], s[1]], f.entrance_center);
        let e = f.nominal.end();
        assert!(((e[0] - f.exit_center[0]).powi(2) + (e[1] - f.exit_center[1]).powi(2)).sqrt() < 1e-12);
        for p in f.nominal.positions() {
            // nominal inside E with at least the calibrated tube margin
            assert!(f.encompassing.max_violation(&p) <= -0.1, "funnel {}", f.id);
        }
    }
}

#[test]
fn library_survives_json_round_trip() {
    let lib = library();
    let back = FunnelLibrary::from_json(&lib.to_json().unwrap()).unwrap();
    assert_eq!(back.len(), lib.len());
    for (a, b) in lib.funnels.iter().zip(&back.funnels) {
        assert_eq!(a.id, b.id);
        assert_eq!(a.exit_radius, b.exit_radius);
        assert_eq!(a.encompassing, b.encompassing);
        assert_eq!(a.nominal, b.nominal);
    }
}

/// Fresh rollouts from a grid over the entrance, driven by adversarial
/// disturbance sequences (random objective direction and horizon) mixed with
/// random samples, must stay in E and end in X.
#[test]
fn adversarially_seeded_rollouts_stay_in_funnel() {
    let model = Bicycle::default();
    let ctrl = PdTracker::default();
    let w = default_disturbance();
    let lib = library();
    let mut rng = ChaCha8Rng::seed_from_u64(99);
    for id in [0usize, 1, 2, 3, 4, 27, 38, 49, 61, 75] {
        let f = lib.get(id).unwrap();
        let ed = TrackingErrorDynamics::new(&model, &ctrl, &f.nominal);
        let horizon = f.epochs();
        let half = 0.5 * (f.entrance_heading[1] - f.entrance_heading[0]);
        let r = f.entrance.offsets()[0] / (PI / 8.0).cos();
        let mut starts = Vec::new();
        for i in 0..7 {
            for j in 0..7 {
                let p = [-r + 2.0 * r * i as f64 / 6.0, -r + 2.0 * r * j as f64 / 6.0];
                if f.entrance.contains(&p, 1e-12) {
                    for h in [-half, -0.5 * half, 0.0, 0.5 * half, half] {
                        starts.push(Vector3::new(p[0], p[1], h));
                    }
                }
            }
        }
        let mut violations = 0;
        for k in 0..100 {
            let e0 = starts[k % starts.len()];
            let ang = rng.gen_range(0.0..2.0 * PI);
            let q = FrsQuery {
                direction: Vector3::new(ang.cos(), ang.sin(), rng.gen_range(-1.0..1.0)),
                offset: 0.0,
                horizon: rng.gen_range(1..=horizon),
                initial_error: e0,
            };
            let mut seq = worst_case(&ed, &w, &q, &DdpSettings::default()).unwrap().disturbances;
            while seq.len() < horizon {
                seq.push(if rng.gen_bool(0.5) { w.sample_vertex(&mut rng) } else { w.sample_uniform(&mut rng) });
            }
            if !rollout_stays_in_funnel(f, &rollout(&ed, &e0, &seq)) {
                violations += 1;
            }
        }
        assert_eq!(violations, 0, "funnel {id}");
    }
}

#[test]
fn undisturbed_point_entrance_collapses_funnel() {
    let model = Bicycle::default();
    let ctrl = PdTracker::default();
    let zero = DisturbanceModel::<3>::new(Polytope::axis_box(&[0.0; 3], &[0.0; 3])).unwrap();
    let config = CalibrationConfig {
        entrance_inradius: 0.0,
        entrance_heading_half_width: 0.0,
        ..CalibrationConfig::default()
    };
    let nominal = constant_input_rollout(&model, [0.0, 0.0, 0.3], [0.5, 0.45], 300);
    let (f, stats) = calibrate_funnel(0, &model, &ctrl, &nominal, &zero, &config).unwrap();
    assert!(f.exit_radius < 1e-12);
    assert!(stats.max_deviation < 1e-12);
    for (a, b) in f.encompassing.rows().zip(f.encompassing.offsets()) {
        let support = nominal.positions().map(|p| a[0] * p[0] + a[1] * p[1]).fold(f64::NEG_INFINITY, f64::max);
        assert!((support - b).abs() < 1e-12);
    }
}

#[test]
fn doubling_disturbance_grows_exit_radius() {
    let model = Bicycle::default();
    let ctrl = PdTracker::default();
    let config = CalibrationConfig::default();
    let w = default_disturbance();
    let w2 = w.scaled(2.0).unwrap();
    for kappa in [0.0, 0.45, -0.6] {
        let nominal = constant_input_rollout(&model, [0.0, 0.0, 1.0], [0.5, kappa], 250);
        let a = measure_tube(&model, &ctrl, &nominal, &w, &config, &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
        let b = measure_tube(&model, &ctrl, &nominal, &w2, &config, &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
        assert!(b.max_terminal_error >= a.max_terminal_error, "{kappa}");
    }
}

fn sampled_composable(fi: &Funnel, fj: &Funnel, rng: &mut ChaCha8Rng) -> bool {
    // dense boundary of the exit ball (the extreme points of each facet
    // functional lie on it) plus interior samples, crossed with the heading
    // interval's end points and interior
    for k in 0..10_000 {
        let (rad, ang) = if k % 2 == 0 {
            (fi.exit_radius, 2.0 * PI * k as f64 / 10_000.0)
        } else {
            (fi.exit_radius * rng.gen::<f64>().sqrt(), rng.gen_range(0.0..2.0 * PI))
        };
        let heading = match k % 3 {
            0 => fi.exit_heading[0],
            1 => fi.exit_heading[1],
            _ => rng.gen_range(fi.exit_heading[0]..=fi.exit_heading[1]),
        };
        let x = [fi.exit_center[0] + rad * ang.cos(), fi.exit_center[1] + rad * ang.sin(), heading];
        if !fj.contains_entry_state(&x, 1e-9) {
            return false;
        }
    }
    true
}

#[test]
fn composable_matches_sampled_membership() {
    let lib = library();
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let mut agree_true = 0;
    for _ in 0..200 {
        let fi = &lib.funnels[rng.gen_range(0..lib.len())];
        let fj = &lib.funnels[rng.gen_range(0..lib.len())];
        // place fj so its entrance is near fi's exit, sometimes with a
        // heading that matches
        let off = [rng.gen_range(-0.12..0.12), rng.gen_range(-0.12..0.12)];
        let dp = [
            fi.exit_center[0] - fj.entrance_center[0] + off[0],
            fi.exit_center[1] - fj.entrance_center[1] + off[1],
        ];
        let fj = fj.translated(dp);
        let predicate = composable(fi, &fj);
        assert_eq!(predicate, sampled_composable(fi, &fj, &mut rng), "{} -> {}", fi.id, fj.id);
        agree_true += predicate as usize;
    }
    assert!(agree_true > 0, "no composable pair sampled");
}

#[test]
fn chained_templates_compose_on_heading_grid() {
    let lib = library();
    for fi in &lib.funnels {
        let end_heading = fi.nominal.end()[2];
        let next = lib
            .funnels
            .iter()
            .filter(|f| heading_in(f.heading(), [end_heading - 1e-9, end_heading + 1e-9], 0.0))
            .collect::<Vec<_>>();
        assert_eq!(next.len(), 5, "funnel {}", fi.id);
        for fj in next {
            let placed = fj.translated([fi.exit_center[0] - fj.entrance_center[0], fi.exit_center[1] - fj.entrance_center[1]]);
            assert!(composable(fi, &placed));
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn translation_preserves_membership(
        id in 0usize..80,
        dp in prop::array::uniform2(-5.0f64..5.0),
        p in prop::array::uniform2(-2.0f64..2.0),
    ) {
        let f = &library().funnels[id];
        let g = f.translated(dp);
        prop_assert_eq!(
            f.encompassing.contains(&p, 0.0),
            g.encompassing.contains(&[p[0] + dp[0], p[1] + dp[1]], 1e-12) && f.encompassing.contains(&p, 0.0)
        );
        let x = [p[0], p[1], f.heading()];
        let y = [p[0] + dp[0], p[1] + dp[1], f.heading()];
        prop_assert_eq!(f.contains_entry_state(&x, 1e-9), g.contains_entry_state(&y, 1e-9));
    }

    #[test]
    fn composability_is_translation_invariant(
        i in 0usize..80,
        j in 0usize..80,
        off in prop::array::uniform2(-0.2f64..0.2),
        dp in prop::array::uniform2(-10.0f64..10.0),
    ) {
        let lib = library();
        let fi = &lib.funnels[i];
        let fj = lib.funnels[j].translated([fi.exit_center[0] + off[0], fi.exit_center[1] + off[1]]);
        prop_assert_eq!(composable(fi, &fj), composable(&fi.translated(dp), &fj.translated(dp)));
    }
}

#[test]
fn shipped_library_asset_matches_fresh_calibration() {
    let path = std::path::Path::new(env!("CARGO_MANIFEST_DIR")).join("assets/funnel_library.json");
    let shipped = FunnelLibrary::load(&path).unwrap();
    assert_eq!(&shipped, library());
}
