//! Ground-truth trajectories, wheel odometry, distorted magnetometer
//! readings and the JSON-lines dataset format.
//!
//! All randomness flows through [`ChaCha8Rng`] so a seed reproduces a dataset
//! bit-for-bit on any platform.

use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use nalgebra::{Matrix3, Quaternion, SVector, UnitQuaternion, Vector2, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geom::{exp_so3, log_so3, PoseState, RigidTransform, Rotation3};
use crate::gpr::Fingerprint;
use crate::magmap::{sample_field, FieldModel, GridSpec};

/// Stacked calibration parameters `[c₁ c₂ c₃ b]`, rows of `C` first.
pub type Theta = SVector<f64, 12>;

/// Pose of a magnetometer in the robot body frame.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(from = "ExtrinsicsRecord", into = "ExtrinsicsRecord")]
pub struct SensorExtrinsics {
    pub rotation: Rotation3,
    pub translation: Vector3<f64>,
}

#[derive(Serialize, Deserialize)]
struct ExtrinsicsRecord {
    /// Axis-angle, radians.
    rotation: [f64; 3],
    translation: [f64; 3],
}

impl From<ExtrinsicsRecord> for SensorExtrinsics {
    fn from(r: ExtrinsicsRecord) -> Self {
        Self {
            rotation: exp_so3(&Vector3::from(r.rotation)),
            translation: Vector3::from(r.translation),
        }
    }
}

impl From<SensorExtrinsics> for ExtrinsicsRecord {
    fn from(e: SensorExtrinsics) -> Self {
        Self {
            rotation: log_so3(&e.rotation).into(),
            translation: e.translation.into(),
        }
    }
}

impl SensorExtrinsics {
    pub fn new(rotation: Rotation3, translation: Vector3<f64>) -> Self {
        Self {
            rotation,
            translation,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.rotation.orthonormality_error() > 1e-9 {
            return Err(Error::Config("sensor extrinsic rotation is not orthonormal".into()));
        }
        if self.translation.norm() > 2.0 {
            return Err(Error::Config(format!(
                "sensor offset {:.3} m exceeds the 2 m robot footprint",
                self.translation.norm()
            )));
        }
        Ok(())
    }

    pub fn as_transform(&self) -> RigidTransform {
        RigidTransform::new(self.rotation, self.translation)
    }
}

/// Eight sensors on the corners of two 0.3 m × 0.2 m rectangles, front
/// group at identity orientation, rear group turned half a revolution.
pub fn default_rig() -> Vec<SensorExtrinsics> {
    let mut rig = Vec::with_capacity(8);
    for (x0, yaw) in [(0.1, 0.0), (-0.4, std::f64::consts::PI)] {
        for (dx, dy) in [(0.0, -0.1), (0.3, -0.1), (0.0, 0.1), (0.3, 0.1)] {
            rig.push(SensorExtrinsics::new(
                Rotation3::about_z(yaw),
                Vector3::new(x0 + dx, dy, 0.0),
            ));
        }
    }
    rig
}

/// Affine distortion `B_env = C·B_raw + b`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(from = "CalibrationRecord", into = "CalibrationRecord")]
pub struct CalibrationParams {
    pub c: Matrix3<f64>,
    pub b: Vector3<f64>,
}

#[derive(Serialize, Deserialize)]
struct CalibrationRecord {
    /// Row-major.
    c: [[f64; 3]; 3],
    b: [f64; 3],
}

impl From<CalibrationRecord> for CalibrationParams {
    fn from(r: CalibrationRecord) -> Self {
        Self {
            c: Matrix3::from_fn(|i, j| r.c[i][j]),
            b: Vector3::from(r.b),
        }
    }
}

impl From<CalibrationParams> for CalibrationRecord {
    fn from(p: CalibrationParams) -> Self {
        Self {
            c: std::array::from_fn(|i| std::array::from_fn(|j| p.c[(i, j)])),
            b: p.b.into(),
        }
    }
}

impl CalibrationParams {
    pub fn new(c: Matrix3<f64>, b: Vector3<f64>) -> Self {
        Self { c, b }
    }

    pub fn identity() -> Self {
        Self::new(Matrix3::identity(), Vector3::zeros())
    }

    pub fn theta(&self) -> Theta {
        Theta::from_fn(|k, _| if k < 9 { self.c[(k / 3, k % 3)] } else { self.b[k - 9] })
    }

    pub fn from_theta(theta: &Theta) -> Self {
        Self {
            c: Matrix3::from_fn(|i, j| theta[3 * i + j]),
            b: Vector3::new(theta[9], theta[10], theta[11]),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let det = self.c.determinant();
        if !(det.abs() > 1e-6) {
            return Err(Error::Config(format!("calibration matrix is singular (det {det:.3e})")));
        }
        Ok(())
    }

    /// Maps a raw reading onto the environment field.
    pub fn apply(&self, raw: &Vector3<f64>) -> Vector3<f64> {
        self.c * raw + self.b
    }

    /// Raw reading that [`apply`](Self::apply) maps back onto `env`.
    pub fn distort(&self, env: &Vector3<f64>) -> Result<Vector3<f64>> {
        self.validate()?;
        let inv = self
            .c
            .try_inverse()
            .ok_or_else(|| Error::Config("calibration matrix is singular".into()))?;
        Ok(inv * (env - self.b))
    }

    /// Uniform draws: diagonal in [0.9, 1.1], off-diagonal in [−0.05, 0.05],
    /// bias components in [−20, 20] µT.
    pub fn random<R: Rng + ?Sized>(rng: &mut R) -> Self {
        let c = Matrix3::from_fn(|i, j| {
            if i == j {
                rng.random_range(0.9..1.1)
            } else {
                rng.random_range(-0.05..0.05)
            }
        });
        let b = Vector3::from_fn(|_, _| rng.random_range(-20.0..20.0));
        Self::new(c, b)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct NoiseConfig {
    /// Per-axis reading noise, µT.
    pub meas_sigma: f64,
    /// Odometry translation noise, m per meter traveled.
    pub odom_trans_sigma: f64,
    /// Odometry heading noise, rad per meter traveled.
    pub odom_rot_sigma: f64,
    pub rng_seed: u64,
}

impl Default for NoiseConfig {
    fn default() -> Self {
        Self {
            meas_sigma: 0.2,
            odom_trans_sigma: 0.01,
            odom_rot_sigma: 0.005,
            rng_seed: 7,
        }
    }
}

impl NoiseConfig {
    pub fn noiseless() -> Self {
        Self {
            meas_sigma: 0.0,
            odom_trans_sigma: 0.0,
            odom_rot_sigma: 0.0,
            rng_seed: 0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let ok = [self.meas_sigma, self.odom_trans_sigma, self.odom_rot_sigma]
            .iter()
            .all(|s| *s >= 0.0 && s.is_finite());
        if !ok {
            return Err(Error::Config("noise sigmas must be finite and non-negative".into()));
        }
        Ok(())
    }

    pub fn rng(&self) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(self.rng_seed)
    }
}

/// One time step of sensor data. Rotations are kept as the unit quaternions
/// that are serialized so a dataset round-trips bit-exactly.
#[derive(Debug, Clone, PartialEq)]
pub struct DatasetFrame {
    pub timestamp: f64,
    /// Odometry increment from the previous frame, expressed in the previous body frame.
    pub odom_dq: UnitQuaternion<f64>,
    pub odom_dp: Vector3<f64>,
    /// Raw per-sensor readings, µT.
    pub readings: Vec<Vector3<f64>>,
    pub gt_position: Vector3<f64>,
    pub gt_q: UnitQuaternion<f64>,
}

impl DatasetFrame {
    pub fn odom_rotation(&self) -> Rotation3 {
        Rotation3::from_quaternion(&self.odom_dq)
    }

    pub fn odom_increment(&self) -> RigidTransform {
        RigidTransform::new(self.odom_rotation(), self.odom_dp)
    }

    pub fn gt_pose(&self) -> PoseState {
        PoseState::new(self.gt_position, log_so3(&Rotation3::from_quaternion(&self.gt_q)))
    }

    pub fn sensor_count(&self) -> usize {
        self.readings.len()
    }
}

/// Polyline path driven at constant speed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrajectorySpec {
    pub waypoints: Vec<Vector2<f64>>,
    /// m/s
    pub speed: f64,
    /// Hz
    pub frame_rate: f64,
    /// Height of the body origin, normally the map plane height.
    #[serde(default)]
    pub height: f64,
}

impl TrajectorySpec {
    pub fn length(&self) -> f64 {
        self.waypoints.windows(2).map(|w| (w[1] - w[0]).norm()).sum()
    }

    /// Boustrophedon path: `legs` passes of `leg_length` along x starting at
    /// `start`, stepping `lane_spacing` along y between passes.
    pub fn lawnmower(start: Vector2<f64>, leg_length: f64, lane_spacing: f64, legs: usize) -> Vec<Vector2<f64>> {
        let mut pts = vec![start];
        let mut cur = start;
        for leg in 0..legs {
            let dir = if leg % 2 == 0 { 1.0 } else { -1.0 };
            cur.x += dir * leg_length;
            pts.push(cur);
            if leg + 1 < legs {
                cur.y += lane_spacing;
                pts.push(cur);
            }
        }
        pts
    }
}

/// Samples poses every `speed / frame_rate` meters of arc length with yaw
/// tangent to the current segment. A sample that lands exactly on a corner
/// takes the heading of the outgoing segment.
pub fn generate_trajectory(spec: &TrajectorySpec, bounds: Option<&GridSpec>) -> Result<Vec<PoseState>> {
    if spec.waypoints.len() < 2 {
        return Err(Error::Config("trajectory needs at least two waypoints".into()));
    }
    if !(spec.speed > 0.0 && spec.frame_rate > 0.0) {
        return Err(Error::Config("trajectory speed and frame rate must be positive".into()));
    }
    if let Some(b) = bounds {
        if let Some(w) = spec.waypoints.iter().find(|w| !b.contains(w.x, w.y)) {
            return Err(Error::Config(format!(
                "waypoint ({:.3}, {:.3}) lies outside the map",
                w.x, w.y
            )));
        }
    }
    let segments: Vec<(Vector2<f64>, Vector2<f64>, f64)> = spec
        .waypoints
        .windows(2)
        .map(|w| (w[0], w[1], (w[1] - w[0]).norm()))
        .filter(|s| s.2 > 1e-12)
        .collect();
    if segments.is_empty() {
        return Err(Error::Config("trajectory has zero length".into()));
    }
    let total: f64 = segments.iter().map(|s| s.2).sum();
    let ds = spec.speed / spec.frame_rate;
    let count = (total / ds + 1e-9).floor() as usize + 1;

    let mut poses = Vec::with_capacity(count);
    let mut seg = 0;
    let mut seg_start = 0.0;
    for k in 0..count {
        let s = (k as f64 * ds).min(total);
        while seg + 1 < segments.len() && s >= seg_start + segments[seg].2 - 1e-12 {
            seg_start += segments[seg].2;
            seg += 1;
        }
        let (a, b, len) = segments[seg];
        let t = ((s - seg_start) / len).clamp(0.0, 1.0);
        let p = a + (b - a) * t;
        let dir = b - a;
        poses.push(PoseState::planar(p.x, p.y, spec.height, dir.y.atan2(dir.x)));
    }
    Ok(poses)
}

/// Relative motion `T_{k−1}⁻¹ T_k` for consecutive poses, perturbed by planar
/// Gaussian noise whose standard deviation scales with the step length.
pub fn simulate_odometry<R: Rng + ?Sized>(
    poses: &[PoseState],
    noise: &NoiseConfig,
    rng: &mut R,
) -> Result<Vec<RigidTransform>> {
    noise.validate()?;
    if poses.len() < 2 {
        return Err(Error::Config("odometry needs at least two poses".into()));
    }
    let std_normal = Normal::new(0.0, 1.0).expect("unit normal");
    Ok(poses
        .windows(2)
        .map(|w| {
            let inc = w[0].to_transform().inverse().compose(&w[1].to_transform());
            let step = inc.translation.norm();
            let mut dp = inc.translation;
            let mut rot = inc.rotation;
            if noise.odom_trans_sigma > 0.0 {
                dp.x += std_normal.sample(rng) * noise.odom_trans_sigma * step;
                dp.y += std_normal.sample(rng) * noise.odom_trans_sigma * step;
            }
            if noise.odom_rot_sigma > 0.0 {
                let dyaw = std_normal.sample(rng) * noise.odom_rot_sigma * step;
                rot = rot.compose(&Rotation3::about_z(dyaw));
            }
            RigidTransform::new(rot, dp)
        })
        .collect())
}

/// World pose of each sensor for robot pose `x`.
pub fn sensor_world_poses(x: &PoseState, rig: &[SensorExtrinsics]) -> Vec<RigidTransform> {
    let body = x.to_transform();
    rig.iter().map(|e| body.compose(&e.as_transform())).collect()
}

/// Raw readings whose calibrated value equals the sensor-frame field, plus
/// per-axis Gaussian noise on the raw output.
pub fn simulate_readings<R: Rng + ?Sized>(
    field: &FieldModel,
    gt_pose: &PoseState,
    rig: &[SensorExtrinsics],
    calib: &[CalibrationParams],
    noise: &NoiseConfig,
    rng: &mut R,
) -> Result<Vec<Vector3<f64>>> {
    if rig.len() != calib.len() {
        return Err(Error::Config(format!(
            "{} extrinsics but {} calibrations",
            rig.len(),
            calib.len()
        )));
    }
    let std_normal = Normal::new(0.0, 1.0).expect("unit normal");
    sensor_world_poses(gt_pose, rig)
        .iter()
        .zip(calib)
        .map(|(pose, cal)| {
            let env = pose.rotation.transpose().apply(&sample_field(field, &pose.translation)?);
            let mut raw = cal.distort(&env)?;
            if noise.meas_sigma > 0.0 {
                for c in raw.iter_mut() {
                    *c += std_normal.sample(rng) * noise.meas_sigma;
                }
            }
            Ok(raw)
        })
        .collect()
}

/// Full dataset along `poses`; odometry noise is drawn before reading noise
/// at each step from a single generator seeded by `noise.rng_seed`.
pub fn simulate_dataset(
    field: &FieldModel,
    poses: &[PoseState],
    frame_rate: f64,
    rig: &[SensorExtrinsics],
    calib: &[CalibrationParams],
    noise: &NoiseConfig,
) -> Result<Vec<DatasetFrame>> {
    for e in rig {
        e.validate()?;
    }
    for c in calib {
        c.validate()?;
    }
    let mut rng = noise.rng();
    let increments = if poses.len() >= 2 {
        simulate_odometry(poses, noise, &mut rng)?
    } else {
        Vec::new()
    };
    poses
        .iter()
        .enumerate()
        .map(|(k, pose)| {
            let inc = if k == 0 {
                RigidTransform::identity()
            } else {
                increments[k - 1]
            };
            let readings = simulate_readings(field, pose, rig, calib, noise, &mut rng)?;
            Ok(DatasetFrame {
                timestamp: k as f64 / frame_rate,
                odom_dq: inc.rotation.to_quaternion(),
                odom_dp: inc.translation,
                readings,
                gt_position: pose.position,
                gt_q: pose.rotation().to_quaternion(),
            })
        })
        .collect()
}

/// Replaces every raw reading by its calibrated value.
pub fn apply_calibration(frames: &mut [DatasetFrame], calib: &[CalibrationParams]) {
    for f in frames {
        for (r, c) in f.readings.iter_mut().zip(calib) {
            *r = c.apply(r);
        }
    }
}

/// Survey samples on a lawnmower lattice covering `[min, max]` at `spacing`,
/// measured by an ideal sensor with Gaussian noise.
pub fn survey_fingerprints(
    field: &FieldModel,
    min: Vector2<f64>,
    max: Vector2<f64>,
    spacing: f64,
    height: f64,
    sigma: f64,
    seed: u64,
) -> Result<Vec<Fingerprint>> {
    if !(spacing > 0.0) || max.x < min.x || max.y < min.y {
        return Err(Error::Config("invalid fingerprint survey region".into()));
    }
    let cols = ((max.x - min.x) / spacing + 1e-9).floor() as usize + 1;
    let rows = ((max.y - min.y) / spacing + 1e-9).floor() as usize + 1;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let noise = Normal::new(0.0, sigma.max(0.0)).map_err(|e| Error::Config(e.to_string()))?;
    let mut out = Vec::with_capacity(rows * cols);
    for r in 0..rows {
        for k in 0..cols {
            let c = if r % 2 == 0 { k } else { cols - 1 - k };
            let p = Vector3::new(min.x + c as f64 * spacing, min.y + r as f64 * spacing, height);
            let mut b = sample_field(field, &p)?;
            if sigma > 0.0 {
                for v in b.iter_mut() {
                    *v += noise.sample(&mut rng);
                }
            }
            out.push(Fingerprint { position: p, field: b });
        }
    }
    Ok(out)
}

#[derive(Serialize, Deserialize)]
struct FrameRecord {
    t: f64,
    dq: [f64; 4],
    dp: [f64; 3],
    readings: Vec<f64>,
    gt_p: [f64; 3],
    gt_q: [f64; 4],
}

fn quat_wxyz(q: &UnitQuaternion<f64>) -> [f64; 4] {
    [q.w, q.i, q.j, q.k]
}

fn quat_from_wxyz(v: [f64; 4]) -> UnitQuaternion<f64> {
    UnitQuaternion::new_unchecked(Quaternion::new(v[0], v[1], v[2], v[3]))
}

impl From<&DatasetFrame> for FrameRecord {
    fn from(f: &DatasetFrame) -> Self {
        Self {
            t: f.timestamp,
            dq: quat_wxyz(&f.odom_dq),
            dp: f.odom_dp.into(),
            readings: f.readings.iter().flat_map(|r| [r.x, r.y, r.z]).collect(),
            gt_p: f.gt_position.into(),
            gt_q: quat_wxyz(&f.gt_q),
        }
    }
}

/// Writes one JSON object per line: `t, dq, dp, readings, gt_p, gt_q`.
pub fn write_dataset(frames: &[DatasetFrame], path: impl AsRef<Path>) -> Result<()> {
    validate_frames(frames)?;
    let path = path.as_ref();
    let file = std::fs::File::create(path).map_err(|e| Error::file(path, e))?;
    let mut w = BufWriter::new(file);
    for f in frames {
        serde_json::to_writer(&mut w, &FrameRecord::from(f))?;
        w.write_all(b"\n")?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_dataset(path: impl AsRef<Path>) -> Result<Vec<DatasetFrame>> {
    let path = path.as_ref();
    let file = std::fs::File::open(path).map_err(|e| Error::file(path, e))?;
    let mut frames = Vec::new();
    for (idx, line) in BufReader::new(file).lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let rec: FrameRecord = serde_json::from_str(&line).map_err(|e| Error::Schema {
            record: idx,
            message: e.to_string(),
        })?;
        if !rec.readings.len().is_multiple_of(3) {
            return Err(Error::Schema {
                record: idx,
                message: format!("{} reading values is not a multiple of 3", rec.readings.len()),
            });
        }
        frames.push(DatasetFrame {
            timestamp: rec.t,
            odom_dq: quat_from_wxyz(rec.dq),
            odom_dp: Vector3::from(rec.dp),
            readings: rec
                .readings
                .chunks_exact(3)
                .map(|c| Vector3::new(c[0], c[1], c[2]))
                .collect(),
            gt_position: Vector3::from(rec.gt_p),
            gt_q: quat_from_wxyz(rec.gt_q),
        });
    }
    validate_frames(&frames)?;
    Ok(frames)
}

/// Constant sensor count and strictly increasing timestamps.
pub fn validate_frames(frames: &[DatasetFrame]) -> Result<()> {
    let Some(first) = frames.first() else {
        return Ok(());
    };
    let n = first.sensor_count();
    for (idx, f) in frames.iter().enumerate() {
        if f.sensor_count() != n {
            return Err(Error::Schema {
                record: idx,
                message: format!("frame has {} sensors, dataset has {n}", f.sensor_count()),
            });
        }
        if idx > 0 && !(f.timestamp > frames[idx - 1].timestamp) {
            return Err(Error::NonMonotoneTimestamp {
                prev: frames[idx - 1].timestamp,
                next: f.timestamp,
            });
        }
    }
    Ok(())
}
