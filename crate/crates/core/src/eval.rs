//! Trajectory alignment, absolute trajectory error, calibration error and
//! per-frame robustness classes.

use std::path::Path;

use nalgebra::{Matrix3, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geom::{PoseState, RigidTransform, Rotation3};
use crate::sim::Theta;

/// Error below which a frame is well estimated, m.
pub const WELL_ESTIMATED_M: f64 = 0.3;
/// Error above which a frame has failed, m.
pub const FAILED_M: f64 = 1.0;

/// Estimated and reference poses already associated one to one.
#[derive(Debug, Clone, PartialEq)]
pub struct TrajectoryPair {
    pub estimated: Vec<PoseState>,
    pub reference: Vec<PoseState>,
}

impl TrajectoryPair {
    pub fn new(estimated: Vec<PoseState>, reference: Vec<PoseState>) -> Result<Self> {
        if estimated.len() != reference.len() {
            return Err(Error::Alignment(format!(
                "{} estimated poses against {} reference poses",
                estimated.len(),
                reference.len()
            )));
        }
        Ok(Self {
            estimated,
            reference,
        })
    }

    /// Pairs each estimate with the nearest reference timestamp within `tolerance` seconds.
    pub fn associate(estimated: &[(f64, PoseState)], reference: &[(f64, PoseState)], tolerance: f64) -> Self {
        let mut pair = Self {
            estimated: Vec::new(),
            reference: Vec::new(),
        };
        if reference.is_empty() {
            return pair;
        }
        for (t, pose) in estimated {
            let idx = reference.partition_point(|(tr, _)| tr < t);
            let best = [idx.checked_sub(1), (idx < reference.len()).then_some(idx)]
                .into_iter()
                .flatten()
                .min_by(|&a, &b| (reference[a].0 - t).abs().total_cmp(&(reference[b].0 - t).abs()));
            if let Some(b) = best.filter(|&b| (reference[b].0 - t).abs() <= tolerance) {
                pair.estimated.push(*pose);
                pair.reference.push(reference[b].1);
            }
        }
        pair
    }

    pub fn len(&self) -> usize {
        self.estimated.len()
    }

    pub fn is_empty(&self) -> bool {
        self.estimated.is_empty()
    }
}

/// Rigid transform `S` minimizing `Σ‖S·p_e − p_g‖²` (rotation and
/// translation, no scale).
pub fn align_rigid(pair: &TrajectoryPair) -> Result<RigidTransform> {
    if pair.len() < 3 {
        return Err(Error::Alignment(format!("need at least 3 associated poses, got {}", pair.len())));
    }
    let n = pair.len() as f64;
    let ce = pair.estimated.iter().map(|p| p.position).sum::<Vector3<f64>>() / n;
    let cg = pair.reference.iter().map(|p| p.position).sum::<Vector3<f64>>() / n;
    let mut cov = Matrix3::zeros();
    let mut spread = Matrix3::zeros();
    for (e, g) in pair.estimated.iter().zip(&pair.reference) {
        let de = e.position - ce;
        cov += (g.position - cg) * de.transpose();
        spread += de * de.transpose();
    }
    let ev = spread.symmetric_eigenvalues();
    let (max, mid) = {
        let mut v = [ev[0], ev[1], ev[2]];
        v.sort_by(f64::total_cmp);
        (v[2], v[1])
    };
    if !(mid > 1e-12 * max.max(1e-300)) {
        return Err(Error::Alignment("positions are collinear or coincident".into()));
    }
    let svd = cov.svd(true, true);
    let (u, v_t) = (svd.u.unwrap(), svd.v_t.unwrap());
    let d = (u * v_t).determinant().signum();
    let rot = u * Matrix3::from_diagonal(&Vector3::new(1.0, 1.0, d)) * v_t;
    let rotation = Rotation3::from_matrix_unchecked(rot);
    Ok(RigidTransform::new(rotation, cg - rotation.apply(&ce)))
}

/// Translational error of each frame after applying `s` to the estimate.
pub fn position_errors(pair: &TrajectoryPair, s: &RigidTransform) -> Vec<f64> {
    pair.estimated
        .iter()
        .zip(&pair.reference)
        .map(|(e, g)| {
            let f = g.to_transform().inverse().compose(&s.compose(&e.to_transform()));
            f.translation.norm()
        })
        .collect()
}

/// Root-mean-square translational error after rigid alignment, m.
pub fn ate(pair: &TrajectoryPair) -> Result<f64> {
    if pair.is_empty() {
        return Err(Error::Empty("trajectory association"));
    }
    let s = align_rigid(pair)?;
    let errs = position_errors(pair, &s);
    Ok((errs.iter().map(|e| e * e).sum::<f64>() / errs.len() as f64).sqrt())
}

/// Plain ℓ₂ distance between stacked calibration vectors.
pub fn calib_error(theta_e: &Theta, theta_g: &Theta) -> f64 {
    (theta_e - theta_g).norm()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FrameClass {
    Well,
    Poor,
    Failed,
}

impl FrameClass {
    pub fn from_error(err: f64) -> Self {
        if err < WELL_ESTIMATED_M {
            FrameClass::Well
        } else if err <= FAILED_M {
            FrameClass::Poor
        } else {
            FrameClass::Failed
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClassCounts {
    pub well: usize,
    pub poor: usize,
    pub failed: usize,
}

impl ClassCounts {
    pub fn total(&self) -> usize {
        self.well + self.poor + self.failed
    }

    pub fn well_fraction(&self) -> f64 {
        if self.total() == 0 {
            0.0
        } else {
            self.well as f64 / self.total() as f64
        }
    }
}

impl FromIterator<FrameClass> for ClassCounts {
    fn from_iter<I: IntoIterator<Item = FrameClass>>(iter: I) -> Self {
        let mut c = ClassCounts::default();
        for class in iter {
            match class {
                FrameClass::Well => c.well += 1,
                FrameClass::Poor => c.poor += 1,
                FrameClass::Failed => c.failed += 1,
            }
        }
        c
    }
}

pub fn classify_frames(pair: &TrajectoryPair) -> Result<Vec<FrameClass>> {
    let s = align_rigid(pair)?;
    Ok(position_errors(pair, &s).into_iter().map(FrameClass::from_error).collect())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Report {
    pub ate_m: f64,
    /// Per sensor, µT-scale mixed norm.
    #[serde(rename = "calib_error_uT")]
    pub calib_error_ut: Vec<f64>,
    #[serde(rename = "calib_error_mean_uT")]
    pub calib_error_mean_ut: f64,
    /// Distance of the identity calibration from the truth, per sensor mean.
    #[serde(rename = "initial_calib_error_mean_uT")]
    pub initial_calib_error_mean_ut: f64,
    /// Absolute error of each of the 12 parameters per sensor.
    pub calib_abs_error: Vec<[f64; 12]>,
    pub frame_class_counts: ClassCounts,
    pub fallback_frames: usize,
    pub frames: usize,
    pub mean_frame_ms: f64,
}

impl Report {
    pub fn new(
        pair: &TrajectoryPair,
        theta_est: &[Theta],
        theta_true: &[Theta],
        fallback_frames: usize,
        mean_frame_ms: f64,
    ) -> Result<Self> {
        if theta_est.len() != theta_true.len() {
            return Err(Error::Config(format!(
                "{} estimated calibrations against {} true ones",
                theta_est.len(),
                theta_true.len()
            )));
        }
        let errs: Vec<f64> = theta_est.iter().zip(theta_true).map(|(e, g)| calib_error(e, g)).collect();
        let identity = crate::sim::CalibrationParams::identity().theta();
        let mean = |v: &[f64]| if v.is_empty() { 0.0 } else { v.iter().sum::<f64>() / v.len() as f64 };
        let initial: Vec<f64> = theta_true.iter().map(|g| calib_error(&identity, g)).collect();
        Ok(Self {
            ate_m: ate(pair)?,
            calib_error_mean_ut: mean(&errs),
            calib_error_ut: errs,
            initial_calib_error_mean_ut: mean(&initial),
            calib_abs_error: theta_est
                .iter()
                .zip(theta_true)
                .map(|(e, g)| std::array::from_fn(|k| (e[k] - g[k]).abs()))
                .collect(),
            frame_class_counts: classify_frames(pair)?.into_iter().collect(),
            fallback_frames,
            frames: pair.len(),
            mean_frame_ms,
        })
    }

    /// The report with timing fields zeroed, for reproducibility comparisons.
    pub fn without_timing(&self) -> Self {
        Self {
            mean_frame_ms: 0.0,
            ..self.clone()
        }
    }

    pub fn write(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let text = serde_json::to_string_pretty(self)? + "\n";
        std::fs::write(path, text).map_err(|e| Error::file(path, e))
    }

    pub fn read(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::file(path, e))?;
        Ok(serde_json::from_str(&text)?)
    }
}

/// Row of the estimator's per-frame CSV.
#[derive(Debug, Clone, Copy, PartialEq, Deserialize)]
pub struct FrameRow {
    pub t: f64,
    pub px: f64,
    pub py: f64,
    pub pz: f64,
    pub yaw: f64,
    pub fallback: u8,
    pub iters: usize,
    pub resid: f64,
    pub ms: f64,
}

impl FrameRow {
    pub fn pose(&self) -> PoseState {
        PoseState::planar(self.px, self.py, self.pz, self.yaw)
    }
}

pub fn read_frames_csv(path: impl AsRef<Path>) -> Result<Vec<FrameRow>> {
    let path = path.as_ref();
    let mut r = csv::Reader::from_path(path)?;
    let rows: std::result::Result<Vec<FrameRow>, _> = r.deserialize().collect();
    let rows = rows?;
    if rows.is_empty() {
        return Err(Error::Empty("estimator frame CSV"));
    }
    Ok(rows)
}
