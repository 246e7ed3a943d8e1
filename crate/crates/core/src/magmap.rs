//! Synthetic ambient field, dense planar grid maps, bilinear lookup and the
//! analytic spatial gradient of the bilinear surface.

use std::io::{Read, Write};
use std::path::Path;

use nalgebra::{Matrix3, Vector2, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

const MAGIC: &[u8; 8] = b"MAGMAP01";
const HEADER_LEN: usize = 8 + 4 * 8 + 2 * 4;
/// Queries closer than this to a dipole are rejected.
const MIN_DIPOLE_DISTANCE: f64 = 1e-6;
/// Slack on the map boundary for queries that land on the last node.
const EDGE_SLACK: f64 = 1e-9;

/// A point dipole; `moment` absorbs the µ₀/4π constant so the field is in µT.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DipoleSource {
    pub position: Vector3<f64>,
    pub moment: Vector3<f64>,
}

/// Uniform background plus a superposition of dipoles.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FieldModel {
    pub earth_field: Vector3<f64>,
    #[serde(default)]
    pub dipoles: Vec<DipoleSource>,
}

impl FieldModel {
    pub fn uniform(earth_field: Vector3<f64>) -> Self {
        Self {
            earth_field,
            dipoles: Vec::new(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.earth_field.norm();
        if !(10.0..=100.0).contains(&n) {
            return Err(Error::Config(format!(
                "earth field magnitude {n:.2} µT outside [10, 100]"
            )));
        }
        if self
            .dipoles
            .iter()
            .any(|d| !d.position.iter().chain(d.moment.iter()).all(|v| v.is_finite()))
        {
            return Err(Error::Config("non-finite dipole parameters".into()));
        }
        Ok(())
    }

    pub fn sample(&self, p: &Vector3<f64>) -> Result<Vector3<f64>> {
        sample_field(self, p)
    }
}

/// `(3(m·r̂)r̂ − m) / ‖r‖³` with `r = p − d.position`.
pub fn dipole_field(p: &Vector3<f64>, d: &DipoleSource) -> Result<Vector3<f64>> {
    let r = p - d.position;
    let dist = r.norm();
    if dist < MIN_DIPOLE_DISTANCE {
        return Err(Error::DegenerateQuery { distance: dist });
    }
    let rhat = r / dist;
    Ok((3.0 * d.moment.dot(&rhat) * rhat - d.moment) / (dist * dist * dist))
}

pub fn sample_field(model: &FieldModel, p: &Vector3<f64>) -> Result<Vector3<f64>> {
    model
        .dipoles
        .iter()
        .try_fold(model.earth_field, |acc, d| Ok(acc + dipole_field(p, d)?))
}

/// Placement and size of a planar grid.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    pub origin: Vector2<f64>,
    pub resolution: f64,
    pub nx: usize,
    pub ny: usize,
    pub plane_height: f64,
}

impl GridSpec {
    pub fn validate(&self) -> Result<()> {
        if !(self.resolution > 0.0 && self.resolution.is_finite()) {
            return Err(Error::Config(format!(
                "grid resolution must be positive, got {}",
                self.resolution
            )));
        }
        if self.nx < 2 || self.ny < 2 {
            return Err(Error::Config(format!(
                "grid needs at least 2×2 nodes, got {}×{}",
                self.nx, self.ny
            )));
        }
        if u32::try_from(self.nx).is_err() || u32::try_from(self.ny).is_err() {
            return Err(Error::Config("grid dimensions exceed u32".into()));
        }
        if !(self.origin.iter().all(|v| v.is_finite()) && self.plane_height.is_finite()) {
            return Err(Error::Config("non-finite grid placement".into()));
        }
        Ok(())
    }

    pub fn node_position(&self, i: usize, j: usize) -> Vector3<f64> {
        Vector3::new(
            self.origin.x + i as f64 * self.resolution,
            self.origin.y + j as f64 * self.resolution,
            self.plane_height,
        )
    }

    pub fn max_corner(&self) -> Vector2<f64> {
        self.origin
            + Vector2::new(
                (self.nx - 1) as f64 * self.resolution,
                (self.ny - 1) as f64 * self.resolution,
            )
    }

    pub fn contains(&self, x: f64, y: f64) -> bool {
        let hi = self.max_corner();
        x >= self.origin.x - EDGE_SLACK
            && y >= self.origin.y - EDGE_SLACK
            && x <= hi.x + EDGE_SLACK
            && y <= hi.y + EDGE_SLACK
    }

    /// True when `p` lies within one cell of the grid plane's footprint.
    fn near_interior(&self, p: &Vector3<f64>) -> bool {
        let hi = self.max_corner();
        let r = self.resolution;
        p.x > self.origin.x - r
            && p.x < hi.x + r
            && p.y > self.origin.y - r
            && p.y < hi.y + r
            && (p.z - self.plane_height).abs() < r
    }

    pub fn node_count(&self) -> usize {
        self.nx * self.ny
    }
}

/// Dense planar grid of 3-axis field values; `values[j * nx + i]` holds node `(i, j)`.
#[derive(Debug, Clone, PartialEq)]
pub struct MagneticGridMap {
    spec: GridSpec,
    values: Vec<Vector3<f64>>,
}

/// Cell lookup result shared by interpolation and gradient.
struct Cell {
    i: usize,
    j: usize,
    fu: f64,
    fv: f64,
}

impl MagneticGridMap {
    pub fn new(spec: GridSpec, values: Vec<Vector3<f64>>) -> Result<Self> {
        spec.validate()?;
        if values.len() != spec.node_count() {
            return Err(Error::DimensionMismatch {
                expected: spec.node_count(),
                found: values.len(),
            });
        }
        if values.iter().any(|v| !v.iter().all(|c| c.is_finite())) {
            return Err(Error::Config("non-finite map value".into()));
        }
        Ok(Self { spec, values })
    }

    /// Builds a map by evaluating `f` at every node.
    pub fn from_fn<F>(spec: GridSpec, mut f: F) -> Result<Self>
    where
        F: FnMut(&Vector3<f64>) -> Result<Vector3<f64>>,
    {
        spec.validate()?;
        let mut values = Vec::with_capacity(spec.node_count());
        for j in 0..spec.ny {
            for i in 0..spec.nx {
                values.push(f(&spec.node_position(i, j))?);
            }
        }
        Self::new(spec, values)
    }

    pub fn spec(&self) -> &GridSpec {
        &self.spec
    }

    pub fn values(&self) -> &[Vector3<f64>] {
        &self.values
    }

    pub fn node(&self, i: usize, j: usize) -> Vector3<f64> {
        self.values[j * self.spec.nx + i]
    }

    pub fn contains(&self, p: &Vector3<f64>) -> bool {
        self.spec.contains(p.x, p.y)
    }

    fn locate(&self, p: &Vector3<f64>) -> Result<Cell> {
        let s = &self.spec;
        if !(p.x.is_finite() && p.y.is_finite()) || !s.contains(p.x, p.y) {
            return Err(Error::OutOfBounds { x: p.x, y: p.y });
        }
        let snap = |u: f64, n: usize| {
            let r = u.round();
            let u = if (u - r).abs() < EDGE_SLACK { r } else { u };
            u.clamp(0.0, (n - 1) as f64)
        };
        let u = snap((p.x - s.origin.x) / s.resolution, s.nx);
        let v = snap((p.y - s.origin.y) / s.resolution, s.ny);
        let i = (u.floor() as usize).min(s.nx - 2);
        let j = (v.floor() as usize).min(s.ny - 2);
        Ok(Cell {
            i,
            j,
            fu: u - i as f64,
            fv: v - j as f64,
        })
    }

    fn corners(&self, c: &Cell) -> [Vector3<f64>; 4] {
        [
            self.node(c.i, c.j),
            self.node(c.i + 1, c.j),
            self.node(c.i, c.j + 1),
            self.node(c.i + 1, c.j + 1),
        ]
    }

    /// Bilinear blend of the four surrounding nodes; `p.z` is ignored.
    pub fn interpolate(&self, p: &Vector3<f64>) -> Result<Vector3<f64>> {
        let c = self.locate(p)?;
        let [a, b, cc, d] = self.corners(&c);
        let (fu, fv) = (c.fu, c.fv);
        Ok(a * ((1.0 - fu) * (1.0 - fv)) + b * (fu * (1.0 - fv)) + cc * ((1.0 - fu) * fv) + d * (fu * fv))
    }

    /// Columns `∂M/∂x`, `∂M/∂y`, `∂M/∂z = 0` of the bilinear surface.
    pub fn gradient(&self, p: &Vector3<f64>) -> Result<Matrix3<f64>> {
        let c = self.locate(p)?;
        let [a, b, cc, d] = self.corners(&c);
        let inv = 1.0 / self.spec.resolution;
        let dx = ((b - a) * (1.0 - c.fv) + (d - cc) * c.fv) * inv;
        let dy = ((cc - a) * (1.0 - c.fu) + (d - b) * c.fu) * inv;
        Ok(Matrix3::from_columns(&[dx, dy, Vector3::zeros()]))
    }

    /// Field value and gradient from a single cell lookup.
    pub fn interpolate_with_gradient(&self, p: &Vector3<f64>) -> Result<(Vector3<f64>, Matrix3<f64>)> {
        let c = self.locate(p)?;
        let [a, b, cc, d] = self.corners(&c);
        let (fu, fv) = (c.fu, c.fv);
        let value = a * ((1.0 - fu) * (1.0 - fv)) + b * (fu * (1.0 - fv)) + cc * ((1.0 - fu) * fv) + d * (fu * fv);
        let inv = 1.0 / self.spec.resolution;
        let dx = ((b - a) * (1.0 - fv) + (d - cc) * fv) * inv;
        let dy = ((cc - a) * (1.0 - fu) + (d - b) * fu) * inv;
        Ok((value, Matrix3::from_columns(&[dx, dy, Vector3::zeros()])))
    }

    /// Median Frobenius norm of the gradient evaluated at cell centers (µT/m).
    pub fn median_gradient_norm(&self) -> f64 {
        let s = &self.spec;
        let mut norms = Vec::with_capacity((s.nx - 1) * (s.ny - 1));
        for j in 0..s.ny - 1 {
            for i in 0..s.nx - 1 {
                let p = s.node_position(i, j) + Vector3::new(0.5, 0.5, 0.0) * s.resolution;
                if let Ok(g) = self.gradient(&p) {
                    norms.push(g.norm());
                }
            }
        }
        norms.sort_by(f64::total_cmp);
        norms[norms.len() / 2]
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let s = &self.spec;
        let mut out = Vec::with_capacity(HEADER_LEN + self.values.len() * 24);
        out.extend_from_slice(MAGIC);
        for v in [s.origin.x, s.origin.y, s.resolution, s.plane_height] {
            out.extend_from_slice(&v.to_le_bytes());
        }
        out.extend_from_slice(&(s.nx as u32).to_le_bytes());
        out.extend_from_slice(&(s.ny as u32).to_le_bytes());
        for v in &self.values {
            for c in v.iter() {
                out.extend_from_slice(&c.to_le_bytes());
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < HEADER_LEN {
            return Err(Error::Malformed(format!(
                "map header needs {HEADER_LEN} bytes, file has {}",
                bytes.len()
            )));
        }
        if &bytes[..8] != MAGIC {
            return Err(Error::Malformed("missing MAGMAP01 magic".into()));
        }
        let f = |k: usize| f64::from_le_bytes(bytes[8 + 8 * k..16 + 8 * k].try_into().unwrap());
        let u = |off: usize| u32::from_le_bytes(bytes[off..off + 4].try_into().unwrap()) as usize;
        let spec = GridSpec {
            origin: Vector2::new(f(0), f(1)),
            resolution: f(2),
            plane_height: f(3),
            nx: u(40),
            ny: u(44),
        };
        let payload = &bytes[HEADER_LEN..];
        if !payload.len().is_multiple_of(24) {
            return Err(Error::Malformed(format!(
                "payload of {} bytes is not a whole number of 3×f64 records",
                payload.len()
            )));
        }
        let found = payload.len() / 24;
        let expected = spec.nx.saturating_mul(spec.ny);
        if found != expected {
            return Err(Error::DimensionMismatch { expected, found });
        }
        let values = payload
            .chunks_exact(24)
            .map(|rec| {
                Vector3::from_fn(|k, _| f64::from_le_bytes(rec[8 * k..8 * k + 8].try_into().unwrap()))
            })
            .collect();
        Self::new(spec, values).map_err(|e| match e {
            Error::Config(msg) => Error::Malformed(msg),
            other => other,
        })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let mut f = std::fs::File::create(path).map_err(|e| Error::file(path, e))?;
        f.write_all(&self.to_bytes()).map_err(|e| Error::file(path, e))?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let mut buf = Vec::new();
        std::fs::File::open(path)
            .and_then(|mut f| f.read_to_end(&mut buf))
            .map_err(|e| Error::file(path, e))?;
        Self::from_bytes(&buf)
    }
}

/// Samples `model` at every node of `spec`.
pub fn rasterize(model: &FieldModel, spec: &GridSpec) -> Result<MagneticGridMap> {
    spec.validate()?;
    model.validate()?;
    if let Some(d) = model.dipoles.iter().find(|d| spec.near_interior(&d.position)) {
        return Err(Error::Config(format!(
            "dipole at ({:.3}, {:.3}, {:.3}) lies inside the mapped region",
            d.position.x, d.position.y, d.position.z
        )));
    }
    MagneticGridMap::from_fn(*spec, |p| sample_field(model, p))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn spec(nx: usize, ny: usize, res: f64) -> GridSpec {
        GridSpec {
            origin: Vector2::new(-1.0, 2.0),
            resolution: res,
            nx,
            ny,
            plane_height: 0.25,
        }
    }

    fn earth() -> Vector3<f64> {
        Vector3::new(20.0, 1.0, -40.0)
    }

    fn affine_map(s: GridSpec, a: Matrix3<f64>, c: Vector3<f64>) -> MagneticGridMap {
        MagneticGridMap::from_fn(s, |p| Ok(a * p + c)).unwrap()
    }

    fn planar_affine(rng: &mut ChaCha8Rng) -> (Matrix3<f64>, Vector3<f64>) {
        let mut a = Matrix3::from_fn(|_, _| rng.random_range(-5.0..5.0));
        a.column_mut(2).fill(0.0);
        let c = Vector3::from_fn(|_, _| rng.random_range(-50.0..50.0));
        (a, c)
    }

    #[test]
    fn dipole_on_axis_and_equator() {
        let d = DipoleSource {
            position: Vector3::zeros(),
            moment: Vector3::z(),
        };
        assert_relative_eq!(dipole_field(&Vector3::z(), &d).unwrap(), Vector3::new(0.0, 0.0, 2.0));
        assert_relative_eq!(dipole_field(&Vector3::x(), &d).unwrap(), Vector3::new(0.0, 0.0, -1.0));
        assert_relative_eq!(
            dipole_field(&Vector3::new(0.0, 0.0, 2.0), &d).unwrap(),
            Vector3::new(0.0, 0.0, 0.25),
            epsilon = 1e-15
        );
        assert!(matches!(
            dipole_field(&Vector3::new(1e-7, 0.0, 0.0), &d),
            Err(Error::DegenerateQuery { .. })
        ));
    }

    #[test]
    fn dipole_decays_cubically() {
        let d = DipoleSource {
            position: Vector3::new(1.0, 1.0, -1.0),
            moment: Vector3::new(3.0, -2.0, 5.0),
        };
        let dir = Vector3::new(0.3, 0.4, 0.5).normalize();
        let near = dipole_field(&(d.position + dir), &d).unwrap();
        let far = dipole_field(&(d.position + 2.0 * dir), &d).unwrap();
        assert_relative_eq!(far, near / 8.0, epsilon = 1e-12);
    }

    #[test]
    fn superposition() {
        let p = Vector3::new(0.5, -0.3, 0.2);
        assert_eq!(sample_field(&FieldModel::uniform(earth()), &p).unwrap(), earth());

        let d1 = DipoleSource {
            position: Vector3::new(0.0, 0.0, -1.0),
            moment: Vector3::new(0.0, 0.0, 10.0),
        };
        let d2 = DipoleSource {
            position: Vector3::new(2.0, 1.0, -1.5),
            moment: Vector3::new(4.0, 0.0, -3.0),
        };
        let one = FieldModel {
            earth_field: earth(),
            dipoles: vec![d1],
        };
        assert_relative_eq!(sample_field(&one, &p).unwrap(), earth() + dipole_field(&p, &d1).unwrap());

        let two = FieldModel {
            earth_field: earth(),
            dipoles: vec![d1, d2],
        };
        let manual = earth() + dipole_field(&p, &d1).unwrap() + dipole_field(&p, &d2).unwrap();
        assert_relative_eq!(sample_field(&two, &p).unwrap(), manual, epsilon = 1e-12);
    }

    #[test]
    fn rasterize_uniform_and_indexing() {
        let s = spec(2, 2, 0.5);
        let map = rasterize(&FieldModel::uniform(earth()), &s).unwrap();
        assert!(map.values().iter().all(|v| *v == earth()));
        assert_eq!(s.node_position(1, 1), Vector3::new(-0.5, 2.5, 0.25));
    }

    #[test]
    fn rasterize_matches_pointwise_and_rejects_interior_dipole() {
        let s = spec(7, 5, 0.25);
        let model = FieldModel {
            earth_field: earth(),
            dipoles: vec![DipoleSource {
                position: Vector3::new(0.0, 2.5, -1.0),
                moment: Vector3::new(1.0, 2.0, 30.0),
            }],
        };
        let map = rasterize(&model, &s).unwrap();
        for j in 0..s.ny {
            for i in 0..s.nx {
                let expected = sample_field(&model, &s.node_position(i, j)).unwrap();
                assert_relative_eq!(map.node(i, j), expected, epsilon = 1e-12);
                assert_eq!(map.interpolate(&s.node_position(i, j)).unwrap(), map.node(i, j));
            }
        }

        let bad = FieldModel {
            earth_field: earth(),
            dipoles: vec![DipoleSource {
                position: Vector3::new(0.0, 2.5, 0.3),
                moment: Vector3::z(),
            }],
        };
        assert!(matches!(rasterize(&bad, &s), Err(Error::Config(_))));
    }

    #[test]
    fn rejects_implausible_earth_field() {
        let s = spec(3, 3, 1.0);
        let weak = FieldModel::uniform(Vector3::new(1.0, 0.0, 0.0));
        assert!(matches!(rasterize(&weak, &s), Err(Error::Config(_))));
    }

    #[test]
    fn cell_center_is_corner_average() {
        let s = spec(2, 2, 1.0);
        let vals = vec![
            Vector3::new(1.0, 2.0, 3.0),
            Vector3::new(5.0, -2.0, 0.0),
            Vector3::new(-3.0, 4.0, 8.0),
            Vector3::new(9.0, 0.0, 1.0),
        ];
        let map = MagneticGridMap::new(s, vals.clone()).unwrap();
        let center = s.node_position(0, 0) + Vector3::new(0.5, 0.5, 7.0);
        let avg = (vals[0] + vals[1] + vals[2] + vals[3]) / 4.0;
        assert_relative_eq!(map.interpolate(&center).unwrap(), avg, epsilon = 1e-14);
    }

    #[test]
    fn affine_field_is_reproduced() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let s = spec(20, 14, 0.1);
        let (a, c) = planar_affine(&mut rng);
        let map = affine_map(s, a, c);
        let hi = s.max_corner();
        for _ in 0..50 {
            let p = Vector3::new(
                rng.random_range(s.origin.x..hi.x),
                rng.random_range(s.origin.y..hi.y),
                s.plane_height,
            );
            assert_relative_eq!(map.interpolate(&p).unwrap(), a * p + c, epsilon = 1e-10);
            assert_relative_eq!(map.gradient(&p).unwrap(), a, epsilon = 1e-9);
        }
    }

    #[test]
    fn constant_map_has_zero_gradient() {
        let map = rasterize(&FieldModel::uniform(earth()), &spec(4, 4, 0.3)).unwrap();
        let g = map.gradient(&Vector3::new(-0.5, 2.4, 0.0)).unwrap();
        assert_eq!(g, Matrix3::zeros());
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let s = spec(12, 9, 0.1);
        let vals = (0..s.node_count())
            .map(|_| Vector3::from_fn(|_, _| rng.random_range(-30.0..30.0)))
            .collect();
        let map = MagneticGridMap::new(s, vals).unwrap();
        let h = s.resolution / 100.0;
        for _ in 0..50 {
            let i = rng.random_range(0..s.nx - 1);
            let j = rng.random_range(0..s.ny - 1);
            let fu = rng.random_range(0.05..0.95);
            let fv = rng.random_range(0.05..0.95);
            let p = s.node_position(i, j) + Vector3::new(fu, fv, 0.0) * s.resolution;
            let g = map.gradient(&p).unwrap();
            for (axis, step) in [(0, Vector3::x() * h), (1, Vector3::y() * h)] {
                let fd = (map.interpolate(&(p + step)).unwrap() - map.interpolate(&(p - step)).unwrap())
                    / (2.0 * h);
                let col = g.column(axis).into_owned();
                assert!((fd - col).norm() <= 1e-6 * col.norm().max(1.0));
            }
            assert_eq!(g.column(2).norm(), 0.0);
        }
    }

    #[test]
    fn continuous_across_cell_edges() {
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        let s = spec(6, 6, 0.5);
        let vals = (0..s.node_count())
            .map(|_| Vector3::from_fn(|_, _| rng.random_range(-30.0..30.0)))
            .collect();
        let map = MagneticGridMap::new(s, vals).unwrap();
        for i in 1..s.nx - 1 {
            let edge = s.node_position(i, 2) + Vector3::new(0.0, 0.37 * s.resolution, 0.0);
            let left = map.interpolate(&(edge - Vector3::x() * 1e-13)).unwrap();
            let right = map.interpolate(&(edge + Vector3::x() * 1e-13)).unwrap();
            assert_relative_eq!(left, right, epsilon = 1e-10);
        }
    }

    #[test]
    fn out_of_bounds_carries_query() {
        let map = rasterize(&FieldModel::uniform(earth()), &spec(3, 3, 1.0)).unwrap();
        match map.interpolate(&Vector3::new(5.0, 2.5, 0.0)) {
            Err(Error::OutOfBounds { x, y }) => assert_eq!((x, y), (5.0, 2.5)),
            other => panic!("unexpected {other:?}"),
        }
        assert!(map.gradient(&Vector3::new(-1.0, 1.9, 0.0)).is_err());
        assert!(map.interpolate(&Vector3::new(1.0, 4.0, 0.0)).is_ok());
    }

    #[test]
    fn save_load_round_trip_is_bit_exact() {
        let mut rng = ChaCha8Rng::seed_from_u64(14);
        let s = spec(5, 4, 0.1);
        let vals = (0..s.node_count())
            .map(|_| Vector3::from_fn(|_, _| rng.random::<f64>() * 1e3 - 5e2))
            .collect();
        let map = MagneticGridMap::new(s, vals).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.magmap");
        map.save(&path).unwrap();
        let back = MagneticGridMap::load(&path).unwrap();
        assert_eq!(back.to_bytes(), map.to_bytes());
        assert_eq!(back, map);
    }

    #[test]
    fn corrupted_files_are_rejected() {
        let map = rasterize(&FieldModel::uniform(earth()), &spec(3, 2, 1.0)).unwrap();
        let bytes = map.to_bytes();

        let truncated = &bytes[..bytes.len() - 5];
        assert!(matches!(MagneticGridMap::from_bytes(truncated), Err(Error::Malformed(_))));
        assert!(matches!(MagneticGridMap::from_bytes(&bytes[..20]), Err(Error::Malformed(_))));

        let mut wrong_dims = bytes.clone();
        wrong_dims[40..44].copy_from_slice(&4u32.to_le_bytes());
        assert!(matches!(
            MagneticGridMap::from_bytes(&wrong_dims),
            Err(Error::DimensionMismatch { expected: 8, found: 6 })
        ));

        let mut bad_magic = bytes;
        bad_magic[0] = b'X';
        assert!(matches!(MagneticGridMap::from_bytes(&bad_magic), Err(Error::Malformed(_))));
    }
}
