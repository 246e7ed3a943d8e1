//! Rotation and rigid-transform primitives.
//!
//! Orientations in [`PoseState`] are stored as axis-angle vectors and turned
//! into [`Rotation3`] at use sites. Perturbations act on the right:
//! `R ⊞ δφ = R · exp(δφ)`.

use nalgebra::{Matrix3, Matrix6, UnitQuaternion, Vector3, Vector6};
use serde::{Deserialize, Serialize};

/// Below this angle `exp_so3` switches to a second-order Taylor expansion.
pub const SMALL_ANGLE: f64 = 1e-8;

/// Above `π - NEAR_PI_MARGIN` the logarithm extracts the axis from the
/// symmetric part of the rotation.
const NEAR_PI_MARGIN: f64 = 1e-3;

/// A 3×3 rotation matrix.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Rotation3(Matrix3<f64>);

impl Rotation3 {
    pub fn identity() -> Self {
        Self(Matrix3::identity())
    }

    /// Wraps a matrix without checking orthonormality.
    pub fn from_matrix_unchecked(m: Matrix3<f64>) -> Self {
        Self(m)
    }

    /// Wraps a matrix, rejecting anything that is not a proper rotation
    /// within `tol`.
    pub fn from_matrix(m: Matrix3<f64>, tol: f64) -> Option<Self> {
        let r = Self(m);
        (r.orthonormality_error() <= tol && (m.determinant() - 1.0).abs() <= tol).then_some(r)
    }

    pub fn about_z(yaw: f64) -> Self {
        exp_so3(&Vector3::new(0.0, 0.0, yaw))
    }

    pub fn from_quaternion(q: &UnitQuaternion<f64>) -> Self {
        Self(q.to_rotation_matrix().into_inner())
    }

    pub fn to_quaternion(&self) -> UnitQuaternion<f64> {
        UnitQuaternion::from_matrix(&self.0)
    }

    pub fn matrix(&self) -> &Matrix3<f64> {
        &self.0
    }

    pub fn transpose(&self) -> Self {
        Self(self.0.transpose())
    }

    pub fn inverse(&self) -> Self {
        self.transpose()
    }

    pub fn compose(&self, other: &Rotation3) -> Self {
        Self(self.0 * other.0)
    }

    pub fn apply(&self, v: &Vector3<f64>) -> Vector3<f64> {
        self.0 * v
    }

    /// Frobenius norm of `RᵀR − I`.
    pub fn orthonormality_error(&self) -> f64 {
        (self.0.transpose() * self.0 - Matrix3::identity()).norm()
    }

    /// Heading angle of the rotated x axis in the xy plane.
    pub fn yaw(&self) -> f64 {
        self.0[(1, 0)].atan2(self.0[(0, 0)])
    }
}

impl std::ops::Mul for Rotation3 {
    type Output = Rotation3;

    fn mul(self, rhs: Rotation3) -> Rotation3 {
        self.compose(&rhs)
    }
}

/// Skew-symmetric matrix `[v]×` with `[v]× w = v × w`.
#[inline]
pub fn skew(v: &Vector3<f64>) -> Matrix3<f64> {
    #[rustfmt::skip]
    let m = Matrix3::new(
        0.0, -v.z, v.y,
        v.z, 0.0, -v.x,
        -v.y, v.x, 0.0,
    );
    m
}

/// Inverse of [`skew`] applied to the antisymmetric part of `m`.
#[inline]
fn vee_antisym(m: &Matrix3<f64>) -> Vector3<f64> {
    Vector3::new(
        m[(2, 1)] - m[(1, 2)],
        m[(0, 2)] - m[(2, 0)],
        m[(1, 0)] - m[(0, 1)],
    ) * 0.5
}

/// Rodrigues' formula.
pub fn exp_so3(phi: &Vector3<f64>) -> Rotation3 {
    let theta = phi.norm();
    let k = skew(phi);
    if theta < SMALL_ANGLE {
        return Rotation3(Matrix3::identity() + k + 0.5 * k * k);
    }
    let a = theta.sin() / theta;
    let b = (1.0 - theta.cos()) / (theta * theta);
    Rotation3(Matrix3::identity() + a * k + b * k * k)
}

/// Which formula [`log_so3_with_branch`] used.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LogBranch {
    SmallAngle,
    Regular,
    NearPi,
}

/// Principal logarithm (`‖φ‖ ≤ π`) plus the branch taken.
pub fn log_so3_with_branch(r: &Rotation3) -> (Vector3<f64>, LogBranch) {
    let m = r.matrix();
    let w = vee_antisym(m); // sin(θ)·axis
    let s = w.norm();
    let c = ((m.trace() - 1.0) * 0.5).clamp(-1.0, 1.0);
    let theta = s.atan2(c);

    if theta < SMALL_ANGLE {
        return (w, LogBranch::SmallAngle);
    }
    if theta < std::f64::consts::PI - NEAR_PI_MARGIN {
        return (w * (theta / s), LogBranch::Regular);
    }

    // (R + Rᵀ)/2 − cosθ·I = (1 − cosθ)·aaᵀ
    let sym = (m + m.transpose()) * 0.5 - Matrix3::identity() * c;
    let k = (0..3)
        .max_by(|&i, &j| sym[(i, i)].total_cmp(&sym[(j, j)]))
        .unwrap_or(0);
    let mut axis: Vector3<f64> = sym.column(k).into_owned();
    axis /= axis.norm();
    if axis.dot(&w) < 0.0 {
        axis = -axis;
    }
    (axis * theta, LogBranch::NearPi)
}

pub fn log_so3(r: &Rotation3) -> Vector3<f64> {
    log_so3_with_branch(r).0
}

/// Rotation plus translation, mapping points from a child frame into a parent frame.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RigidTransform {
    pub rotation: Rotation3,
    pub translation: Vector3<f64>,
}

impl RigidTransform {
    pub fn new(rotation: Rotation3, translation: Vector3<f64>) -> Self {
        Self {
            rotation,
            translation,
        }
    }

    pub fn identity() -> Self {
        Self::new(Rotation3::identity(), Vector3::zeros())
    }

    /// `self ∘ other`: `(R_a R_b, R_a p_b + p_a)`.
    pub fn compose(&self, other: &RigidTransform) -> RigidTransform {
        RigidTransform {
            rotation: self.rotation.compose(&other.rotation),
            translation: self.rotation.apply(&other.translation) + self.translation,
        }
    }

    pub fn inverse(&self) -> RigidTransform {
        let rt = self.rotation.transpose();
        RigidTransform {
            rotation: rt,
            translation: -rt.apply(&self.translation),
        }
    }

    pub fn transform_point(&self, p: &Vector3<f64>) -> Vector3<f64> {
        self.rotation.apply(p) + self.translation
    }
}

/// Increment `[Δp, δφ]` applied through [`boxplus`].
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct PosePerturbation {
    pub dp: Vector3<f64>,
    pub dphi: Vector3<f64>,
}

impl PosePerturbation {
    pub fn zero() -> Self {
        Self::default()
    }

    pub fn from_vector(v: &Vector6<f64>) -> Self {
        Self {
            dp: v.fixed_rows::<3>(0).into_owned(),
            dphi: v.fixed_rows::<3>(3).into_owned(),
        }
    }

    pub fn to_vector(&self) -> Vector6<f64> {
        let mut v = Vector6::zeros();
        v.fixed_rows_mut::<3>(0).copy_from(&self.dp);
        v.fixed_rows_mut::<3>(3).copy_from(&self.dphi);
        v
    }

    pub fn is_finite(&self) -> bool {
        self.dp.iter().chain(self.dphi.iter()).all(|v| v.is_finite())
    }

    /// Scales the perturbation down so that `‖dp‖ ≤ max_trans` and
    /// `‖dphi‖ ≤ max_rot`, preserving its direction.
    pub fn clamped(&self, max_trans: f64, max_rot: f64) -> Self {
        let mut scale: f64 = 1.0;
        let t = self.dp.norm();
        if t > max_trans {
            scale = scale.min(max_trans / t);
        }
        let r = self.dphi.norm();
        if r > max_rot {
            scale = scale.min(max_rot / r);
        }
        self.scaled(scale)
    }

    pub fn scaled(&self, s: f64) -> Self {
        Self {
            dp: self.dp * s,
            dphi: self.dphi * s,
        }
    }
}

/// Robot position and axis-angle orientation in the map frame.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct PoseState {
    pub position: Vector3<f64>,
    pub orientation: Vector3<f64>,
}

impl PoseState {
    pub fn new(position: Vector3<f64>, orientation: Vector3<f64>) -> Self {
        Self {
            position,
            orientation,
        }
    }

    pub fn identity() -> Self {
        Self::default()
    }

    /// Pose in the plane `z` with heading `yaw`.
    pub fn planar(x: f64, y: f64, z: f64, yaw: f64) -> Self {
        Self::new(Vector3::new(x, y, z), Vector3::new(0.0, 0.0, yaw))
    }

    pub fn from_transform(t: &RigidTransform) -> Self {
        Self::new(t.translation, log_so3(&t.rotation))
    }

    pub fn rotation(&self) -> Rotation3 {
        exp_so3(&self.orientation)
    }

    pub fn to_transform(&self) -> RigidTransform {
        RigidTransform::new(self.rotation(), self.position)
    }

    pub fn yaw(&self) -> f64 {
        self.rotation().yaw()
    }

    pub fn boxplus(&self, dx: &PosePerturbation) -> PoseState {
        boxplus(self, dx)
    }

    pub fn as_vector(&self) -> Vector6<f64> {
        let mut v = Vector6::zeros();
        v.fixed_rows_mut::<3>(0).copy_from(&self.position);
        v.fixed_rows_mut::<3>(3).copy_from(&self.orientation);
        v
    }
}

/// `p ← p + Δp`, `R ← R·exp(δφ)`, re-encoded through the principal log.
pub fn boxplus(x: &PoseState, dx: &PosePerturbation) -> PoseState {
    if dx.dphi == Vector3::zeros() {
        return PoseState::new(x.position + dx.dp, x.orientation);
    }
    let r = x.rotation().compose(&exp_so3(&dx.dphi));
    PoseState::new(x.position + dx.dp, log_so3(&r))
}

/// Which of the six perturbation coordinates `[x, y, z, roll, pitch, yaw]`
/// an optimizer may move.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct StateMask(pub [bool; 6]);

impl StateMask {
    pub const XY: StateMask = StateMask([true, true, false, false, false, false]);
    pub const XY_YAW: StateMask = StateMask([true, true, false, false, false, true]);
    pub const FULL: StateMask = StateMask([true; 6]);

    pub fn enabled(&self) -> impl Iterator<Item = usize> + '_ {
        (0..6).filter(|&i| self.0[i])
    }

    pub fn count(&self) -> usize {
        self.0.iter().filter(|&&b| b).count()
    }

    pub fn apply(&self, v: &Vector6<f64>) -> Vector6<f64> {
        Vector6::from_fn(|i, _| if self.0[i] { v[i] } else { 0.0 })
    }

    /// Zeroes rows and columns of disabled coordinates.
    pub fn apply_matrix(&self, m: &Matrix6<f64>) -> Matrix6<f64> {
        Matrix6::from_fn(|i, j| if self.0[i] && self.0[j] { m[(i, j)] } else { 0.0 })
    }
}

impl std::str::FromStr for StateMask {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "xy" => Ok(Self::XY),
            "xyyaw" => Ok(Self::XY_YAW),
            "full" => Ok(Self::FULL),
            other => Err(format!("unknown state mask '{other}' (expected xy|xyyaw|full)")),
        }
    }
}
