//! Worst-case tracking error along a curved reference: adversarial
//! disturbance value per direction, and the envelope at a few epochs.

use funnel_planner::dynamics::{bicycle_step, Bicycle, PdTracker, TrackingErrorDynamics};
use funnel_planner::funnel::DEFAULT_DISTURBANCE;
use funnel_planner::reachability::{frs_envelope, worst_case, DdpSettings, DisturbanceModel, FrsQuery};
use funnel_planner::trajectory::Trajectory;
use nalgebra::Vector3;

fn main() -> anyhow::Result<()> {
    let model = Bicycle::default();
    let mut states = vec![[0.0, 0.0, 0.0]];
    let inputs = vec![[0.5, 0.6]; 200];
    for u in &inputs {
        states.push(bicycle_step(states.last().unwrap(), u, &[0.0; 3], model.dt));
    }
    let reference = Trajectory::new(states, inputs, model.dt);
    let controller = PdTracker::default();
    let ed = TrackingErrorDynamics::new(&model, &controller, &reference);
    let w = DisturbanceModel::symmetric_box(DEFAULT_DISTURBANCE)?;
    let settings = DdpSettings::default();

    for (name, dir) in [("x", [1.0, 0.0, 0.0]), ("y", [0.0, 1.0, 0.0]), ("heading", [0.0, 0.0, 1.0])] {
        let q = FrsQuery {
            direction: Vector3::from(dir),
            offset: 0.0,
            horizon: 200,
            initial_error: Vector3::zeros(),
        };
        let r = worst_case(&ed, &w, &q, &settings)?;
        println!("worst {name} error after 2 s: {:.3e} ({} iterations)", r.value, r.iterations);
    }

    let positions: Vec<[f64; 2]> = reference.positions().collect();
    let e0 = Vector3::new(0.02, -0.01, 0.05);
    for slice in frs_envelope(&ed, &w, &e0, &positions, 8, 50, &settings)? {
        let widest = slice.extents.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        println!(
            "epoch {:3}: center ({:.2}, {:.2}) widest extent {:.4} m",
            slice.t, slice.center[0], slice.center[1], widest
        );
    }
    Ok(())
}
