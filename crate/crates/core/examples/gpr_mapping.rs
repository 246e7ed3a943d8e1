//! Offline map building: survey a field on a lattice, regress each axis with
//! an RBF Gaussian process, and compare the gridded prediction to the truth.

use nalgebra::Vector2;
use roslac::gpr::{self, KernelParams};
use roslac::scenario::{build_field, WorldConfig};
use roslac::sim::survey_fingerprints;

fn main() -> roslac::Result<()> {
    let world = WorldConfig::default();
    let field = build_field(&world)?;
    let grid = world.grid;

    let fps = survey_fingerprints(
        &field,
        Vector2::new(2.0, 2.0),
        Vector2::new(8.0, 7.0),
        0.4,
        grid.plane_height,
        0.2,
        23,
    )?;
    println!("{} fingerprints", fps.len());

    for lengthscale in [0.5, 0.7, 1.0] {
        let params = KernelParams {
            lengthscale,
            ..KernelParams::default()
        };
        let model = gpr::fit(&fps, params)?;
        let mut sq = 0.0;
        let mut n = 0;
        for j in (25..=65).step_by(5) {
            for i in (25..=75).step_by(5) {
                let p = grid.node_position(i, j);
                sq += (model.predict(&p) - field.sample(&p)?).norm_squared();
                n += 1;
            }
        }
        println!("lengthscale {lengthscale:.1} m: RMS error {:.3} uT over {n} nodes", (sq / n as f64).sqrt());
    }

    // Away from the survey the prediction reverts to the training mean.
    let model = gpr::fit(&fps, KernelParams { lengthscale: 0.7, ..KernelParams::default() })?;
    let map = model.build_grid(&grid)?;
    println!("mean field {:.2?} uT", model.mean().as_slice());
    println!("far corner {:.2?} uT", map.node(grid.nx - 1, grid.ny - 1).as_slice());
    Ok(())
}
