//! Calibrate the standard 80-funnel library and print per-shape tube
//! statistics. Optional args: output path, W scale, entrance inradius,
//! heading half width.

use std::path::PathBuf;

use funnel_planner::dynamics::{Bicycle, PdTracker};
use funnel_planner::funnel::{calibrate_funnel, standard_nominals, CalibrationConfig, FunnelLibrary, DEFAULT_DISTURBANCE};
use funnel_planner::reachability::DisturbanceModel;

fn main() -> anyhow::Result<()> {
    let args: Vec<String> = std::env::args().skip(1).collect();
    let out = args.first().map(PathBuf::from);
    let scale: f64 = args.get(1).map(|s| s.parse()).transpose()?.unwrap_or(1.0);
    let mut config = CalibrationConfig::default();
    if let Some(r) = args.get(2) {
        config.entrance_inradius = r.parse()?;
    }
    if let Some(h) = args.get(3) {
        config.entrance_heading_half_width = h.parse()?;
    }
    let num = |i: usize| args.get(i).map(|s| s.parse::<f64>()).transpose();
    if let Some(v) = num(4)? {
        config.straight_length = v;
    }
    if let Some(v) = num(5)? {
        config.gentle_curvature = v;
    }
    if let Some(v) = num(6)? {
        config.gentle_turn = v.to_radians();
    }
    if let Some(v) = num(7)? {
        config.sharp_curvature = v;
    }
    if let Some(v) = num(8)? {
        config.sharp_turn = v.to_radians();
    }
    let model = Bicycle::default();
    let controller = PdTracker::default();
    let w = DisturbanceModel::symmetric_box(DEFAULT_DISTURBANCE.map(|b| b * scale))?;
    let nominals = standard_nominals(&model, &config);
    let mut funnels = Vec::new();
    for (id, nominal) in nominals.iter().enumerate() {
        match calibrate_funnel(id, &model, &controller, nominal, &w, &config) {
            Ok((f, stats)) => {
                if id < 5 {
                    println!(
                        "shape {id}: max deviation {:.4} m, exit radius {:.4} m, exit heading [{:+.4}, {:+.4}] rad",
                        stats.max_deviation,
                        f.exit_radius,
                        f.exit_heading[0] - nominal.end()[2],
                        f.exit_heading[1] - nominal.end()[2]
                    );
                }
                funnels.push(f);
            }
            Err(e) => println!("{e}"),
        }
    }
    println!("{} of {} funnels calibrated", funnels.len(), nominals.len());
    if let Some(path) = out {
        FunnelLibrary { funnels }.save(&path)?;
        println!("wrote {}", path.display());
    }
    Ok(())
}
