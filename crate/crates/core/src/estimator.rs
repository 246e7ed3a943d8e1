//! Joint pose and calibration estimation over a sliding window.
//!
//! Each frame alternates gradient steps on the per-sensor affine
//! calibration with Gauss-Newton steps on the robot pose, then folds the
//! newest measurement into a recursive least-squares filter whose output
//! seeds the next frame.

use std::io::Write;
use std::path::Path;
use std::time::Instant;

use nalgebra::{DMatrix, DVector, Matrix3, Matrix4, Matrix4x3, Matrix6, SMatrix, Vector3, Vector6};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geom::{log_so3, skew, PosePerturbation, PoseState, RigidTransform, StateMask};
use crate::magmap::MagneticGridMap;
use crate::sim::{CalibrationParams, DatasetFrame, SensorExtrinsics, Theta};
use crate::window::{Regressor, SlidingWindow};

type Matrix12 = SMatrix<f64, 12, 12>;

/// What the ℓ₂ penalty pulls the `C` block toward.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RegTarget {
    Zero,
    #[default]
    Identity,
}

impl RegTarget {
    fn c_block(self) -> [f64; 9] {
        match self {
            RegTarget::Zero => [0.0; 9],
            RegTarget::Identity => [1.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 1.0],
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SolverConfig {
    /// Step size relative to the largest curvature of the field-normalized
    /// objective; stable in (0, 2).
    pub eta: f64,
    /// Weight of the pull toward the regularization target, applied in
    /// field-normalized units (equivalent to `lambda_reg·mean‖B‖²` on raw
    /// readings).
    pub lambda_reg: f64,
    pub reg_target: RegTarget,
    pub sgd_iters_per_round: usize,
    pub gn_iters_per_round: usize,
    pub max_alternations: usize,
    pub pose_tol_m: f64,
    pub pose_tol_rad: f64,
    pub calib_tol: f64,
    pub state_mask: StateMask,
    pub gn_damping: f64,
    /// Largest accepted Gauss-Newton translation per step, m.
    pub max_step_m: f64,
    /// Largest accepted Gauss-Newton rotation per step, rad.
    pub max_step_rad: f64,
    /// Fixed pooled-residual threshold in µT; `None` scales with the window.
    pub divergence_residual: Option<f64>,
    /// Reading noise assumed by the default divergence threshold, µT.
    pub meas_sigma: f64,
    /// Traveled-distance horizon of the window, m.
    pub window_m: f64,
    /// Online calibration (gradient steps and recursive filter).
    pub calibrate: bool,
    /// Prior weight of the recursive filter.
    pub rls_epsilon: f64,
    /// Separate prior weight on the matrix block; `None` uses `rls_epsilon`.
    pub rls_epsilon_c: Option<f64>,
    /// Odometry prior on the pose, in m and rad per frame; `None` leaves
    /// the pose to the magnetic residual alone.
    pub pose_prior_sigma: Option<[f64; 2]>,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self {
            eta: 1.0,
            lambda_reg: 1e-2,
            reg_target: RegTarget::Identity,
            sgd_iters_per_round: 20,
            gn_iters_per_round: 3,
            max_alternations: 10,
            pose_tol_m: 5e-4,
            pose_tol_rad: 5e-4,
            calib_tol: 0.1,
            state_mask: StateMask::XY_YAW,
            gn_damping: 1e-6,
            max_step_m: 0.3,
            max_step_rad: 0.2,
            divergence_residual: None,
            meas_sigma: 0.2,
            window_m: 0.5,
            calibrate: true,
            rls_epsilon: 1e-4,
            rls_epsilon_c: Some(10.0),
            pose_prior_sigma: Some([0.02, 0.01]),
        }
    }
}

impl SolverConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(m.to_string()));
        if !(self.eta > 0.0 && self.eta.is_finite()) {
            return bad("eta must be positive");
        }
        if !(self.lambda_reg >= 0.0) {
            return bad("lambda_reg must be non-negative");
        }
        if self.state_mask.count() == 0 {
            return bad("state mask enables no dimension");
        }
        if !(self.gn_damping >= 0.0 && self.max_step_m > 0.0 && self.max_step_rad > 0.0) {
            return bad("damping must be non-negative and step limits positive");
        }
        if !(self.window_m >= 0.0 && self.window_m.is_finite()) {
            return bad("window length must be finite and non-negative");
        }
        if self.pose_prior_sigma.is_some_and(|s| !s.iter().all(|v| *v > 0.0 && v.is_finite())) {
            return bad("pose prior sigmas must be positive");
        }
        if !(self.rls_epsilon > 0.0) || self.rls_epsilon_c.is_some_and(|e| !(e > 0.0)) {
            return bad("rls_epsilon must be positive");
        }
        if self.max_alternations == 0 {
            return bad("max_alternations must be at least 1");
        }
        if self.divergence_residual.is_some_and(|d| !(d > 0.0)) || !(self.meas_sigma >= 0.0) {
            return bad("divergence threshold and noise level must be positive");
        }
        Ok(())
    }

    /// Pooled residual norm above which a frame counts as diverged.
    pub fn divergence_threshold(&self, sensors: usize, entries: usize) -> f64 {
        self.divergence_residual
            .unwrap_or_else(|| 10.0 * self.meas_sigma * ((3 * sensors * entries) as f64).sqrt())
    }
}

/// Recursive least-squares state for one sensor.
#[derive(Debug, Clone, PartialEq)]
pub struct RlsState {
    p: Matrix12,
    p_inv: Matrix12,
    theta: Theta,
}

impl RlsState {
    pub fn new(theta0: Theta, epsilon: f64) -> Self {
        Self {
            p: Matrix12::identity() * epsilon,
            p_inv: Matrix12::identity() / epsilon,
            theta: theta0,
        }
    }

    pub fn identity(epsilon: f64) -> Self {
        Self::new(CalibrationParams::identity().theta(), epsilon)
    }

    /// Prior information `epsilon_c` on the matrix block and `epsilon_b` on
    /// the bias.
    pub fn with_prior(theta0: Theta, epsilon_c: f64, epsilon_b: f64) -> Self {
        let d = Theta::from_fn(|k, _| if k < 9 { epsilon_c } else { epsilon_b });
        Self {
            p: Matrix12::from_diagonal(&d),
            p_inv: Matrix12::from_diagonal(&d.map(|v| 1.0 / v)),
            theta: theta0,
        }
    }

    pub fn theta(&self) -> &Theta {
        &self.theta
    }

    /// Accumulated normal matrix.
    pub fn p(&self) -> &Matrix12 {
        &self.p
    }

    pub fn p_inv(&self) -> &Matrix12 {
        &self.p_inv
    }

    pub fn update(&mut self, h: &Regressor, g: &Vector3<f64>) {
        let ph = self.p_inv * h.transpose();
        let s = Matrix3::identity() + h * ph;
        let s_inv = s.try_inverse().expect("I + H P⁻¹ Hᵀ is positive definite");
        let k = ph * s_inv;
        self.theta += k * (g - h * self.theta);
        self.p += h.transpose() * h;
        self.p_inv -= k * (h * self.p_inv);
        self.p_inv = (self.p_inv + self.p_inv.transpose()) * 0.5;
    }
}

pub fn rls_update(state: &mut RlsState, h: &Regressor, g: &Vector3<f64>) {
    state.update(h, g);
}

/// Map field expressed in each sensor frame, indexed `[entry][sensor]`.
pub fn map_targets(window: &SlidingWindow, x: &PoseState, map: &MagneticGridMap) -> Result<Vec<Vec<Vector3<f64>>>> {
    window
        .sensor_poses(x)
        .iter()
        .map(|row| {
            row.iter()
                .map(|s| Ok(s.rotation.transpose().apply(&map.interpolate(&s.translation)?)))
                .collect()
        })
        .collect()
}

fn reg_gradient(theta: &Theta, lambda: f64, target: RegTarget) -> Theta {
    let t = target.c_block();
    Theta::from_fn(|k, _| if k < 9 { lambda * (theta[k] - t[k]) } else { 0.0 })
}

/// Calibration objective `½Σ‖Hθ − g‖² + ½λ‖θ^C − target‖²` for one sensor.
pub fn calib_objective(
    window: &SlidingWindow,
    sensor: usize,
    theta: &Theta,
    targets: &[Vec<Vector3<f64>>],
    lambda: f64,
    target: RegTarget,
) -> f64 {
    let t = target.c_block();
    let data: f64 = window
        .entries()
        .zip(targets)
        .map(|(e, g)| (e.regressors[sensor] * theta - g[sensor]).norm_squared())
        .sum();
    let reg: f64 = (0..9).map(|k| (theta[k] - t[k]).powi(2)).sum();
    0.5 * data + 0.5 * lambda * reg
}

fn calib_gradient_from_targets(
    window: &SlidingWindow,
    sensor: usize,
    theta: &Theta,
    targets: &[Vec<Vector3<f64>>],
    lambda: f64,
    target: RegTarget,
) -> Theta {
    let mut grad = reg_gradient(theta, lambda, target);
    for (e, g) in window.entries().zip(targets) {
        let h = &e.regressors[sensor];
        grad += h.transpose() * (h * theta - g[sensor]);
    }
    grad
}

/// Gradient of [`calib_objective`] with the map queried at pose `x`.
pub fn calib_gradient(
    window: &SlidingWindow,
    sensor: usize,
    theta: &Theta,
    x: &PoseState,
    map: &MagneticGridMap,
    lambda: f64,
    target: RegTarget,
) -> Result<Theta> {
    if window.is_empty() {
        return Err(Error::Empty("window"));
    }
    let targets = map_targets(window, x, map)?;
    Ok(calib_gradient_from_targets(window, sensor, theta, &targets, lambda, target))
}

pub fn sgd_step(theta: &Theta, grad: &Theta, eta: f64) -> Theta {
    theta - grad * eta
}

/// Calibration sub-problem of one sensor in field-normalized coordinates:
/// readings and targets are divided by the mean raw field magnitude `1/s`.
///
/// `ΣHᵀH` splits into three copies of the 4×4 block `Σ z zᵀ`, `z = [sB; 1]`,
/// so θ is handled as the 4×3 matrix `Φ = [Cᵀ; s·bᵀ]`. The step is `eta`
/// over the largest curvature, stable for `eta` in (0, 2) at any window length.
struct CalibSystem {
    s: f64,
    normal: Matrix4<f64>,
    rate: f64,
}

impl CalibSystem {
    fn new(window: &SlidingWindow, sensor: usize, cfg: &SolverConfig) -> Self {
        let mean_norm = window.entries().map(|e| e.readings[sensor].norm()).sum::<f64>() / window.len() as f64;
        let s = if mean_norm > 1e-9 { 1.0 / mean_norm } else { 1.0 };
        let mut normal = Matrix4::zeros();
        for e in window.entries() {
            let z = (e.readings[sensor] * s).push(1.0);
            normal += z * z.transpose();
        }
        let mut curvature = normal;
        for k in 0..3 {
            curvature[(k, k)] += cfg.lambda_reg;
        }
        let top = curvature.symmetric_eigenvalues().max();
        let rate = if top > 0.0 { cfg.eta / top } else { 0.0 };
        Self { s, normal, rate }
    }

    /// `iters` gradient steps from `theta` toward the targets of `sensor`.
    fn descend(
        &self,
        window: &SlidingWindow,
        sensor: usize,
        theta: &Theta,
        targets: &[Vec<Vector3<f64>>],
        cfg: &SolverConfig,
        iters: usize,
    ) -> Theta {
        if self.rate == 0.0 {
            return *theta;
        }
        let s = self.s;
        let mut cross = Matrix4x3::zeros();
        for (e, g) in window.entries().zip(targets) {
            cross += (e.readings[sensor] * s).push(1.0) * (g[sensor] * s).transpose();
        }
        let mut phi = Matrix4x3::from_fn(|k, r| if k < 3 { theta[3 * r + k] } else { theta[9 + r] * s });
        let t = cfg.reg_target.c_block();
        let reg_target = Matrix4x3::from_fn(|k, r| if k < 3 { t[3 * r + k] } else { 0.0 });
        let reg_mask = Matrix4x3::from_fn(|k, _| if k < 3 { cfg.lambda_reg } else { 0.0 });
        for _ in 0..iters {
            let grad = self.normal * phi - cross + (phi - reg_target).component_mul(&reg_mask);
            phi -= grad * self.rate;
        }
        Theta::from_fn(|k, _| if k < 9 { phi[(k % 3, k / 3)] } else { phi[(3, k - 9)] / s })
    }
}

/// Residual and 3×6 Jacobian of one window entry for one sensor.
///
/// `body` is the sensor pose in the newest body frame, `(Q, o)`. Under the
/// right perturbation `p ← p + δp`, `R ← R·Exp(δφ)`, the Jacobian is
/// `[−R_sᵀ G | −Qᵀ[Rᵀ M]× + R_sᵀ G R [o]×]` with `R_s = R Q`.
fn entry_terms(
    x_rot: &Matrix3<f64>,
    x_pos: &Vector3<f64>,
    body: &RigidTransform,
    h: &Regressor,
    theta: &Theta,
    map: &MagneticGridMap,
    with_jacobian: bool,
) -> Result<(Vector3<f64>, SMatrix<f64, 3, 6>)> {
    let q = body.rotation.matrix();
    let o = &body.translation;
    let r_s = x_rot * q;
    let p_s = x_rot * o + x_pos;
    let (m, g) = if with_jacobian {
        map.interpolate_with_gradient(&p_s)?
    } else {
        (map.interpolate(&p_s)?, Matrix3::zeros())
    };
    let residual = h * theta - r_s.transpose() * m;
    let mut jac = SMatrix::<f64, 3, 6>::zeros();
    if with_jacobian {
        let rtg = r_s.transpose() * g;
        let u = x_rot.transpose() * m;
        jac.fixed_view_mut::<3, 3>(0, 0).copy_from(&(-rtg));
        jac.fixed_view_mut::<3, 3>(0, 3)
            .copy_from(&(-q.transpose() * skew(&u) + rtg * x_rot * skew(o)));
    }
    Ok((residual, jac))
}

/// Stacked residual `H θ − R_sᵀ M(p_s)` over window entries for one sensor.
pub fn pose_residual(
    window: &SlidingWindow,
    theta: &Theta,
    x: &PoseState,
    map: &MagneticGridMap,
    sensor: usize,
) -> Result<DVector<f64>> {
    let rot = *x.rotation().matrix();
    let body = window.body_sensor_poses();
    let mut out = DVector::zeros(3 * window.len());
    for (j, (e, row)) in window.entries().zip(&body).enumerate() {
        let (r, _) = entry_terms(&rot, &x.position, &row[sensor], &e.regressors[sensor], theta, map, false)?;
        out.fixed_rows_mut::<3>(3 * j).copy_from(&r);
    }
    Ok(out)
}

/// Stacked `(3·entries) × 6` Jacobian of [`pose_residual`] under boxplus.
pub fn pose_jacobian(
    window: &SlidingWindow,
    x: &PoseState,
    map: &MagneticGridMap,
    sensor: usize,
) -> Result<DMatrix<f64>> {
    let rot = *x.rotation().matrix();
    let body = window.body_sensor_poses();
    let theta = Theta::zeros();
    let mut out = DMatrix::zeros(3 * window.len(), 6);
    for (j, (e, row)) in window.entries().zip(&body).enumerate() {
        let (_, jac) = entry_terms(&rot, &x.position, &row[sensor], &e.regressors[sensor], &theta, map, true)?;
        out.fixed_view_mut::<3, 6>(3 * j, 0).copy_from(&jac);
    }
    Ok(out)
}

/// Normal equations pooled over all sensors and entries.
struct Linearization {
    cost: f64,
    jtj: Matrix6<f64>,
    jtr: Vector6<f64>,
}

fn linearize(
    window: &SlidingWindow,
    body: &[Vec<RigidTransform>],
    thetas: &[Theta],
    x: &PoseState,
    map: &MagneticGridMap,
    with_jacobian: bool,
) -> Result<Linearization> {
    let rot = *x.rotation().matrix();
    let mut lin = Linearization {
        cost: 0.0,
        jtj: Matrix6::zeros(),
        jtr: Vector6::zeros(),
    };
    for (e, row) in window.entries().zip(body) {
        for (i, theta) in thetas.iter().enumerate() {
            let (r, j) = entry_terms(&rot, &x.position, &row[i], &e.regressors[i], theta, map, with_jacobian)?;
            lin.cost += r.norm_squared();
            if with_jacobian {
                lin.jtj += j.transpose() * j;
                lin.jtr += j.transpose() * r;
            }
        }
    }
    Ok(lin)
}

/// Quadratic pull of the pose toward its odometry prediction, expressed in
/// residual units so it pools with the magnetic terms.
#[derive(Debug, Clone, Copy)]
struct PosePrior {
    pose: PoseState,
    weights: Vector6<f64>,
}

impl PosePrior {
    fn new(pose: &PoseState, cfg: &SolverConfig) -> Option<Self> {
        let [sm, sr] = cfg.pose_prior_sigma?;
        let sigma = cfg.meas_sigma.max(1e-6);
        let (wm, wr) = ((sigma / sm).powi(2), (sigma / sr).powi(2));
        Some(Self {
            pose: *pose,
            weights: Vector6::new(wm, wm, wm, wr, wr, wr),
        })
    }

    fn residual(&self, x: &PoseState) -> Vector6<f64> {
        let dphi = log_so3(&self.pose.rotation().transpose().compose(&x.rotation()));
        let dp = x.position - self.pose.position;
        Vector6::new(dp.x, dp.y, dp.z, dphi.x, dphi.y, dphi.z)
    }

    fn add_to(&self, x: &PoseState, lin: &mut Linearization) {
        let r = self.residual(x);
        lin.cost += r.component_mul(&self.weights).dot(&r);
        for k in 0..6 {
            lin.jtj[(k, k)] += self.weights[k];
            lin.jtr[k] += self.weights[k] * r[k];
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GnStep {
    pub delta: PosePerturbation,
    /// An enabled dimension had no usable information.
    pub stalled: bool,
}

/// Solves `(JᵀJ + μI) Δx = −Jᵀr` restricted to the enabled dimensions.
pub fn solve_normal_equations(jtj: &Matrix6<f64>, jtr: &Vector6<f64>, mask: StateMask, damping: f64) -> GnStep {
    let dims: Vec<usize> = mask.enabled().collect();
    let scale = dims.iter().map(|&d| jtj[(d, d)]).fold(0.0, f64::max);
    let unobservable = dims.iter().any(|&d| !(jtj[(d, d)] > 1e-12 * scale.max(1.0)));
    let n = dims.len();
    let a = DMatrix::from_fn(n, n, |r, c| jtj[(dims[r], dims[c])] + if r == c { damping } else { 0.0 });
    let b = DVector::from_fn(n, |r, _| -jtr[dims[r]]);
    let mut v = Vector6::zeros();
    let solved = a.cholesky().map(|ch| ch.solve(&b));
    match solved {
        Some(sol) if sol.iter().all(|s| s.is_finite()) => {
            for (k, &d) in dims.iter().enumerate() {
                v[d] = sol[k];
            }
        }
        _ => {
            return GnStep {
                delta: PosePerturbation::zero(),
                stalled: true,
            }
        }
    }
    if unobservable {
        return GnStep {
            delta: PosePerturbation::zero(),
            stalled: true,
        };
    }
    GnStep {
        delta: PosePerturbation::from_vector(&v),
        stalled: false,
    }
}

/// Gauss-Newton step from stacked residuals `r` and Jacobian `J`.
pub fn gauss_newton_step(residuals: &DVector<f64>, jacobian: &DMatrix<f64>, mask: StateMask, damping: f64) -> GnStep {
    let jtj = jacobian.transpose() * jacobian;
    let jtr = jacobian.transpose() * residuals;
    solve_normal_equations(
        &Matrix6::from_fn(|r, c| jtj[(r, c)]),
        &Vector6::from_fn(|r, _| jtr[r]),
        mask,
        damping,
    )
}

#[derive(Debug, Clone, Copy, PartialEq)]
struct PoseUpdate {
    x: PoseState,
    cost: f64,
    step: PosePerturbation,
    stalled: bool,
}

/// One damped Gauss-Newton step with step halving.
fn gauss_newton_update(
    window: &SlidingWindow,
    body: &[Vec<RigidTransform>],
    thetas: &[Theta],
    x: &PoseState,
    prior: Option<&PosePrior>,
    map: &MagneticGridMap,
    cfg: &SolverConfig,
) -> Result<PoseUpdate> {
    let mut lin = linearize(window, body, thetas, x, map, true)?;
    if let Some(p) = prior {
        p.add_to(x, &mut lin);
    }
    let GnStep { delta, stalled } = solve_normal_equations(&lin.jtj, &lin.jtr, cfg.state_mask, cfg.gn_damping);
    let unchanged = PoseUpdate {
        x: *x,
        cost: lin.cost,
        step: PosePerturbation::zero(),
        stalled: true,
    };
    if stalled || lin.cost == 0.0 {
        return Ok(PoseUpdate {
            stalled,
            ..unchanged
        });
    }
    let mut step = delta.clamped(cfg.max_step_m, cfg.max_step_rad);
    for _ in 0..5 {
        let trial = x.boxplus(&step);
        if let Ok(mut t) = linearize(window, body, thetas, &trial, map, false) {
            if let Some(p) = prior {
                p.add_to(&trial, &mut t);
            }
            if t.cost < lin.cost {
                return Ok(PoseUpdate {
                    x: trial,
                    cost: t.cost,
                    step,
                    stalled: false,
                });
            }
        }
        step = step.scaled(0.5);
    }
    Ok(unchanged)
}

#[derive(Debug, Clone, PartialEq)]
pub struct Alternation {
    pub thetas: Vec<Theta>,
    pub x: PoseState,
    pub rounds: usize,
    /// Pooled residual norm at the returned iterate, µT.
    pub residual: f64,
    pub converged: bool,
    pub stalled: bool,
    pub diverged: bool,
}

/// Alternates calibration gradient steps with pose Gauss-Newton steps.
pub fn alternate(
    window: &SlidingWindow,
    thetas: &[Theta],
    x_prior: &PoseState,
    map: &MagneticGridMap,
    cfg: &SolverConfig,
) -> Result<Alternation> {
    if window.is_empty() {
        return Err(Error::Empty("window"));
    }
    if thetas.len() != window.sensor_count() {
        return Err(Error::Config(format!(
            "{} calibration vectors for {} sensors",
            thetas.len(),
            window.sensor_count()
        )));
    }
    let body = window.body_sensor_poses();
    let pose_prior = PosePrior::new(x_prior, cfg);
    let systems: Vec<CalibSystem> = if cfg.calibrate {
        (0..window.sensor_count()).map(|i| CalibSystem::new(window, i, cfg)).collect()
    } else {
        Vec::new()
    };
    let mut thetas = thetas.to_vec();
    let mut x = *x_prior;
    let mut out = Alternation {
        thetas: thetas.clone(),
        x,
        rounds: 0,
        residual: f64::INFINITY,
        converged: false,
        stalled: false,
        diverged: true,
    };

    for round in 0..cfg.max_alternations {
        out.rounds = round + 1;
        let mut calib_step: f64 = 0.0;
        if cfg.calibrate && cfg.sgd_iters_per_round > 0 {
            let Ok(targets) = map_targets(window, &x, map) else {
                return Ok(out);
            };
            for (i, theta) in thetas.iter_mut().enumerate() {
                let next = systems[i].descend(window, i, theta, &targets, cfg, cfg.sgd_iters_per_round);
                calib_step = calib_step.max((next - *theta).norm());
                *theta = next;
            }
        }
        let mut moved = (0.0_f64, 0.0_f64);
        for _ in 0..cfg.gn_iters_per_round {
            let Ok(upd) = gauss_newton_update(window, &body, &thetas, &x, pose_prior.as_ref(), map, cfg) else {
                out.thetas = thetas;
                out.x = x;
                return Ok(out);
            };
            x = upd.x;
            moved.0 += upd.step.dp.norm();
            moved.1 += upd.step.dphi.norm();
            out.stalled |= upd.stalled;
            if upd.stalled || (upd.step.dp.norm() < cfg.pose_tol_m && upd.step.dphi.norm() < cfg.pose_tol_rad) {
                break;
            }
        }
        if calib_step < cfg.calib_tol && moved.0 < cfg.pose_tol_m && moved.1 < cfg.pose_tol_rad {
            out.converged = true;
            break;
        }
    }

    out.thetas = thetas;
    out.x = x;
    match linearize(window, &body, &out.thetas, &x, map, false) {
        Ok(lin) => {
            out.residual = lin.cost.sqrt();
            out.diverged = !(out.residual <= cfg.divergence_threshold(window.sensor_count(), window.len()));
        }
        Err(_) => out.diverged = true,
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FrameEstimate {
    pub timestamp: f64,
    pub pose: PoseState,
    pub fallback: bool,
    pub stalled: bool,
    pub iterations: usize,
    pub residual: f64,
    pub elapsed_ms: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EstimatorOutput {
    pub frames: Vec<FrameEstimate>,
    /// Post-filter calibration per frame and sensor.
    pub theta_trace: Vec<Vec<Theta>>,
}

impl EstimatorOutput {
    pub fn final_theta(&self) -> &[Theta] {
        self.theta_trace.last().map_or(&[], |t| t.as_slice())
    }

    pub fn fallback_count(&self) -> usize {
        self.frames.iter().filter(|f| f.fallback).count()
    }

    pub fn mean_frame_ms(&self) -> f64 {
        if self.frames.is_empty() {
            return 0.0;
        }
        self.frames.iter().map(|f| f.elapsed_ms).sum::<f64>() / self.frames.len() as f64
    }
}

/// Online estimation over a whole dataset.
///
/// The first frame starts from its reference pose. Later frames propagate
/// the previous estimate by the odometry increment. A diverged frame keeps
/// its failed iterate as the reported pose, and the next prior restarts
/// from the frame's reference pose.
pub fn run(
    frames: &[DatasetFrame],
    map: &MagneticGridMap,
    extrinsics: &[SensorExtrinsics],
    cfg: &SolverConfig,
) -> Result<EstimatorOutput> {
    cfg.validate()?;
    let first = frames.first().ok_or(Error::Empty("dataset"))?;
    crate::sim::validate_frames(frames)?;
    if first.sensor_count() != extrinsics.len() {
        return Err(Error::Config(format!(
            "dataset has {} sensors but the rig defines {}",
            first.sensor_count(),
            extrinsics.len()
        )));
    }
    let start = first.gt_pose();
    if !map.contains(&start.position) {
        return Err(Error::Config(format!(
            "dataset starts at ({:.3}, {:.3}) outside the map",
            start.position.x, start.position.y
        )));
    }

    let mut window = SlidingWindow::new(cfg.window_m, extrinsics.to_vec())?;
    let identity = CalibrationParams::identity().theta();
    let eps_c = cfg.rls_epsilon_c.unwrap_or(cfg.rls_epsilon);
    let mut rls: Vec<RlsState> =
        extrinsics.iter().map(|_| RlsState::with_prior(identity, eps_c, cfg.rls_epsilon)).collect();
    let mut prev = start;
    let mut out = EstimatorOutput {
        frames: Vec::with_capacity(frames.len()),
        theta_trace: Vec::with_capacity(frames.len()),
    };

    for (k, frame) in frames.iter().enumerate() {
        let clock = Instant::now();
        let prior = if k == 0 {
            start
        } else {
            PoseState::from_transform(&prev.to_transform().compose(&frame.odom_increment()))
        };
        window.push_frame(frame)?;
        let thetas: Vec<Theta> = rls.iter().map(|r| *r.theta()).collect();
        let alt = alternate(&window, &thetas, &prior, map, cfg)?;

        if cfg.calibrate {
            let newest = window.newest().expect("window holds the pushed frame");
            for ((state, m), (h, _)) in rls
                .iter_mut()
                .zip(extrinsics)
                .zip(newest.regressors.iter().zip(&newest.readings))
            {
                let pose = alt.x.to_transform().compose(&m.as_transform());
                if let Ok(field) = map.interpolate(&pose.translation) {
                    state.update(h, &pose.rotation.transpose().apply(&field));
                }
            }
        }
        prev = if alt.diverged { frame.gt_pose() } else { alt.x };
        let elapsed_ms = clock.elapsed().as_secs_f64() * 1e3;

        out.frames.push(FrameEstimate {
            timestamp: frame.timestamp,
            pose: alt.x,
            fallback: alt.diverged,
            stalled: alt.stalled,
            iterations: alt.rounds,
            residual: alt.residual,
            elapsed_ms,
        });
        out.theta_trace.push(rls.iter().map(|r| *r.theta()).collect());
    }
    Ok(out)
}

/// Per-frame CSV: `t,px,py,pz,yaw,fallback,iters,resid,ms`.
pub fn write_frames_csv(output: &EstimatorOutput, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["t", "px", "py", "pz", "yaw", "fallback", "iters", "resid", "ms"])?;
    for f in &output.frames {
        w.write_record(&[
            f.timestamp.to_string(),
            f.pose.position.x.to_string(),
            f.pose.position.y.to_string(),
            f.pose.position.z.to_string(),
            f.pose.yaw().to_string(),
            u8::from(f.fallback).to_string(),
            f.iterations.to_string(),
            f.residual.to_string(),
            f.elapsed_ms.to_string(),
        ])?;
    }
    w.flush().map_err(|e| Error::file(path, e))?;
    Ok(())
}

/// One row per frame and sensor: `t,sensor,theta_0..theta_11`.
pub fn write_theta_csv(output: &EstimatorOutput, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let mut w = csv::Writer::from_path(path)?;
    let mut header = vec!["t".to_string(), "sensor".to_string()];
    header.extend((0..12).map(|k| format!("theta_{k}")));
    w.write_record(&header)?;
    for (f, thetas) in output.frames.iter().zip(&output.theta_trace) {
        for (i, th) in thetas.iter().enumerate() {
            let mut rec = vec![f.timestamp.to_string(), i.to_string()];
            rec.extend(th.iter().map(|v| v.to_string()));
            w.write_record(&rec)?;
        }
    }
    w.flush().map_err(|e| Error::file(path, e))?;
    Ok(())
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunSummary {
    pub frames: usize,
    pub fallback_frames: usize,
    pub stalled_frames: usize,
    pub mean_frame_ms: f64,
    pub final_calibration: Vec<CalibrationParams>,
    pub solver: SolverConfig,
}

impl RunSummary {
    pub fn new(output: &EstimatorOutput, solver: &SolverConfig) -> Self {
        Self {
            frames: output.frames.len(),
            fallback_frames: output.fallback_count(),
            stalled_frames: output.frames.iter().filter(|f| f.stalled).count(),
            mean_frame_ms: output.mean_frame_ms(),
            final_calibration: output.final_theta().iter().map(CalibrationParams::from_theta).collect(),
            solver: *solver,
        }
    }

    pub fn write(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let mut f = std::fs::File::create(path).map_err(|e| Error::file(path, e))?;
        serde_json::to_writer_pretty(&mut f, self)?;
        f.write_all(b"\n")?;
        Ok(())
    }
}
