//! Pose arithmetic: exponential and log maps, boxplus updates and frame
//! composition for a sensor mounted on the robot.

use std::f64::consts::FRAC_PI_2;

use nalgebra::Vector3;
use nalgebra::Vector6;
use roslac::geom::{exp_so3, log_so3, PosePerturbation, PoseState, RigidTransform, Rotation3, StateMask};
use roslac::sim::default_rig;

fn main() {
    let phi = Vector3::new(0.1, -0.2, 0.7);
    let r = exp_so3(&phi);
    println!("log(exp(phi)) = {:.6?}", log_so3(&r).as_slice());
    println!("orthonormality error {:.2e}", r.orthonormality_error());

    // Drive 1 m forward after turning left by 90 degrees.
    let x = PoseState::planar(2.0, 3.0, 0.0, 0.0);
    let turned = x.boxplus(&PosePerturbation {
        dp: Vector3::zeros(),
        dphi: Vector3::new(0.0, 0.0, FRAC_PI_2),
    });
    let forward = RigidTransform::new(Rotation3::identity(), Vector3::new(1.0, 0.0, 0.0));
    let step = turned.to_transform().compose(&forward);
    let moved = PoseState::from_transform(&step);
    println!(
        "after turn and step: ({:.3}, {:.3}) yaw {:.3}",
        moved.position.x,
        moved.position.y,
        moved.yaw()
    );

    // Where the rig's sensors sit in the world for that pose.
    for (i, m) in default_rig().iter().enumerate().take(3) {
        let s = moved.to_transform().compose(&m.as_transform());
        println!("sensor {i} at ({:.3}, {:.3}, {:.3})", s.translation.x, s.translation.y, s.translation.z);
    }

    let mask: StateMask = "xyyaw".parse().unwrap();
    let raw = Vector6::new(0.1, 0.2, 0.3, 0.01, 0.02, 0.03);
    println!("masked step {:?}", mask.apply(&raw).as_slice());
}
