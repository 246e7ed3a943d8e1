//! Sequence accumulation: past readings are re-expressed in the newest body
//! frame through backward odometry, bounded by traveled distance.

use roslac::scenario::{build_field, simulate, ScenarioConfig};
use roslac::window::SlidingWindow;

fn main() -> roslac::Result<()> {
    let cfg = ScenarioConfig::default();
    let field = build_field(&cfg.world)?;
    let sim = simulate(&cfg, &field)?;

    let mut window = SlidingWindow::new(0.5, cfg.rig.clone())?;
    for frame in &sim.frames[..30] {
        window.push_frame(frame)?;
    }
    println!("{} entries spanning {:.3} m", window.len(), window.span());

    let newest = sim.frames[29].gt_pose();
    let body = window.body_sensor_poses();
    // Each past entry's sensor pose, mapped through the newest ground-truth
    // pose, lands where that sensor actually was (up to odometry noise).
    for (k, (entry, row)) in window.entries().zip(&body).enumerate() {
        let frame = sim.frames.iter().find(|f| f.timestamp == entry.timestamp).unwrap();
        let truth = frame.gt_pose().to_transform().compose(&cfg.rig[0].as_transform());
        let via = newest.to_transform().compose(&row[0]);
        println!(
            "entry {k}: t = {:.1} s, {:.3} m back, sensor 0 offset {:.4} m",
            entry.timestamp,
            entry.distance,
            (via.translation - truth.translation).norm()
        );
    }
    Ok(())
}
