//! Dipole anomalies over a uniform background, rasterized into a grid map and
//! queried with bilinear interpolation and its gradient.

use nalgebra::{Vector2, Vector3};
use roslac::magmap::{self, DipoleSource, FieldModel, GridSpec, MagneticGridMap};

fn main() -> roslac::Result<()> {
    let field = FieldModel {
        earth_field: Vector3::new(20.0, 0.0, -40.0),
        dipoles: vec![
            DipoleSource {
                position: Vector3::new(2.0, 1.5, -1.2),
                moment: Vector3::new(30.0, -60.0, 120.0),
            },
            DipoleSource {
                position: Vector3::new(4.0, 3.0, -1.0),
                moment: Vector3::new(-80.0, 20.0, -90.0),
            },
        ],
    };
    let spec = GridSpec {
        origin: Vector2::new(0.0, 0.0),
        resolution: 0.1,
        nx: 61,
        ny: 46,
        plane_height: 0.0,
    };
    let map = magmap::rasterize(&field, &spec)?;
    println!("median gradient {:.2} uT/m", map.median_gradient_norm());

    let p = Vector3::new(2.34, 1.87, 0.0);
    let (b, g) = map.interpolate_with_gradient(&p)?;
    let exact = field.sample(&p)?;
    println!("map   {:.3?}", b.as_slice());
    println!("field {:.3?}", exact.as_slice());
    println!("interpolation error {:.4} uT", (b - exact).norm());
    println!("dB/dx {:.3?}", g.column(0).as_slice());

    let path = std::env::temp_dir().join("roslac_field_map.magmap");
    map.save(&path)?;
    let back = MagneticGridMap::load(&path)?;
    println!("round trip identical: {}", back == map);

    match map.interpolate(&Vector3::new(-1.0, 0.0, 0.0)) {
        Err(e) => println!("outside query: {e}"),
        Ok(_) => unreachable!(),
    }
    Ok(())
}
