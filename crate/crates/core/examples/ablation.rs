//! Module ablations on the reference scenario: the full method against runs
//! without calibration, without the window, and on pre-corrected readings.
//!
//! Run with `--release`.

use roslac::scenario::{run_scenario, RunFlags, ScenarioConfig};

fn main() -> roslac::Result<()> {
    let cfg = ScenarioConfig::default();
    let runs = [
        ("full", RunFlags::default()),
        ("no calibration", RunFlags { no_calib: true, ..RunFlags::default() }),
        ("no window", RunFlags { no_window: true, ..RunFlags::default() }),
        ("pre-calibrated", RunFlags { precalibrated: true, ..RunFlags::default() }),
        ("window 1.0 m", RunFlags { window_m: Some(1.0), ..RunFlags::default() }),
    ];
    println!("{:<16} {:>8} {:>11} {:>9} {:>9}", "configuration", "ATE [m]", "calib [uT]", "fallback", "ms/frame");
    for (name, flags) in runs {
        let (out, report) = run_scenario(&cfg, &flags)?;
        println!(
            "{:<16} {:>8.3} {:>11.2} {:>9} {:>9.2}",
            name,
            report.ate_m,
            report.calib_error_mean_ut,
            out.fallback_count(),
            report.mean_frame_ms
        );
    }
    Ok(())
}
