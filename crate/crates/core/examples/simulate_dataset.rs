//! Synthetic data: a lawnmower drive, noisy wheel odometry and distorted
//! readings from an eight-sensor rig, written as JSON lines.

use nalgebra::Vector2;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use roslac::scenario::{build_field, WorldConfig};
use roslac::sim::{self, CalibrationParams, NoiseConfig, TrajectorySpec};

fn main() -> roslac::Result<()> {
    let world = WorldConfig::default();
    let field = build_field(&world)?;
    let spec = TrajectorySpec {
        waypoints: TrajectorySpec::lawnmower(Vector2::new(3.0, 3.0), 4.0, 1.0, 2),
        speed: 0.5,
        frame_rate: 10.0,
        height: 0.0,
    };
    let poses = sim::generate_trajectory(&spec, Some(&world.grid))?;
    let rig = sim::default_rig();
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let calib: Vec<CalibrationParams> = rig.iter().map(|_| CalibrationParams::random(&mut rng)).collect();
    let noise = NoiseConfig::default();
    let frames = sim::simulate_dataset(&field, &poses, spec.frame_rate, &rig, &calib, &noise)?;

    println!("{} m path, {} frames, {} sensors", spec.length(), frames.len(), rig.len());
    println!("sensor 0 bias {:.2?} uT", calib[0].b.as_slice());
    let f = &frames[40];
    println!("t = {:.1} s, gt ({:.2}, {:.2})", f.timestamp, f.gt_position.x, f.gt_position.y);
    for (i, b) in f.readings.iter().enumerate().take(3) {
        println!("  reading {i}: {:.2?}", b.as_slice());
    }

    // Dead reckoning from the first pose drifts with the odometry noise.
    let mut pose = frames[0].gt_pose().to_transform();
    for f in &frames[1..] {
        pose = pose.compose(&f.odom_increment());
    }
    let last = frames.last().unwrap();
    println!("dead-reckoning end error {:.3} m", (pose.translation - last.gt_position).norm());

    let path = std::env::temp_dir().join("roslac_dataset.jsonl");
    sim::write_dataset(&frames, &path)?;
    let back = sim::read_dataset(&path)?;
    println!("wrote {} ({} frames read back)", path.display(), back.len());
    Ok(())
}
