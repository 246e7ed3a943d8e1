//! Trajectory scoring: rigid alignment, ATE, per-frame robustness classes and
//! the calibration-parameter error.

use nalgebra::{Matrix3, Vector3};
use roslac::eval::{align_rigid, ate, calib_error, classify_frames, ClassCounts, TrajectoryPair};
use roslac::geom::{PoseState, RigidTransform, Rotation3};
use roslac::sim::CalibrationParams;

fn main() -> roslac::Result<()> {
    let reference: Vec<PoseState> = (0..100)
        .map(|k| {
            let t = k as f64 * 0.1;
            PoseState::planar(3.0 * t.cos(), 2.0 * t.sin(), 0.0, t)
        })
        .collect();

    // The estimate lives in a rotated, shifted frame.
    let offset = RigidTransform::new(Rotation3::about_z(0.3), Vector3::new(1.0, -2.0, 0.0));
    let mut estimated: Vec<PoseState> = reference
        .iter()
        .map(|p| PoseState::from_transform(&offset.compose(&p.to_transform())))
        .collect();
    let pair = TrajectoryPair::new(estimated.clone(), reference.clone())?;
    let s = align_rigid(&pair)?;
    println!("alignment yaw {:.6} rad, ATE {:.2e} m", s.rotation.yaw(), ate(&pair)?);

    // A few gross errors near the end.
    for q in &mut estimated[95..] {
        q.position.x += 1.5;
    }
    let pair = TrajectoryPair::new(estimated, reference)?;
    println!("with outliers: ATE {:.4} m", ate(&pair)?);
    let counts: ClassCounts = classify_frames(&pair)?.into_iter().collect();
    println!("well {} / poor {} / failed {}", counts.well, counts.poor, counts.failed);

    let truth = CalibrationParams::new(
        Matrix3::from_diagonal(&Vector3::new(1.01, 0.98, 0.99)),
        Vector3::new(19.49, 20.60, 20.17),
    );
    let start = CalibrationParams::identity();
    println!("identity guess is {:.3} uT from the truth", calib_error(&start.theta(), &truth.theta()));
    Ok(())
}
