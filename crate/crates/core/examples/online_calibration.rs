//! The full online loop on the reference scenario: per-frame calibration
//! steps, Gauss-Newton pose updates and the recursive filter, starting from
//! identity calibration with ~20 uT unknown biases.
//!
//! Run with `--release`; pass a seed to redraw distortions and noise.

use roslac::eval::calib_error;
use roslac::scenario::{build_field, build_map, evaluate, run_estimator, simulate, RunFlags, ScenarioConfig};

fn main() -> roslac::Result<()> {
    let mut cfg = ScenarioConfig::default();
    if let Some(seed) = std::env::args().nth(1).and_then(|s| s.parse().ok()) {
        cfg = cfg.with_seed(seed);
    }
    let field = build_field(&cfg.world)?;
    let sim = simulate(&cfg, &field)?;
    let map = build_map(&cfg, &field, &sim.fingerprints)?;
    let flags = RunFlags::default();
    let out = run_estimator(&sim.frames, &map, &sim.truth, &cfg.solver, &flags)?;

    let truth = sim.truth.thetas();
    println!("{:>6} {:>9} {:>10}", "t [s]", "pos [m]", "calib [uT]");
    for k in (0..out.frames.len()).step_by(50) {
        let f = &out.frames[k];
        let err = (f.pose.position - sim.frames[k].gt_position).norm();
        let calib = out.theta_trace[k].iter().zip(&truth).map(|(a, b)| calib_error(a, b)).sum::<f64>() / truth.len() as f64;
        println!("{:>6.1} {:>9.3} {:>10.3}", f.timestamp, err, calib);
    }

    let report = evaluate(&out, &sim.frames, &sim.truth, false)?;
    println!(
        "ATE {:.3} m, calibration error {:.2} uT (from {:.2}), {:.2} ms/frame",
        report.ate_m, report.calib_error_mean_ut, report.initial_calib_error_mean_ut, report.mean_frame_ms
    );
    Ok(())
}
