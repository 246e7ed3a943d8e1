//! Sliding window of past frames re-expressed in the current body frame.

use std::collections::VecDeque;

use nalgebra::{SMatrix, Vector3};

use crate::error::{Error, Result};
use crate::geom::{log_so3, PoseState, RigidTransform};
use crate::sim::{DatasetFrame, SensorExtrinsics};

pub type Regressor = SMatrix<f64, 3, 12>;

/// Increments below both thresholds count as standing still.
pub const STATIONARY_TRANS: f64 = 1e-4;
pub const STATIONARY_ROT: f64 = 1e-4;

/// Row `r` holds `Bᵀ` in columns `3r..3r+3` and a one in column `9 + r`, so
/// `regressor(B)·θ = C·B + b`.
pub fn regressor(b: &Vector3<f64>) -> Regressor {
    let mut h = Regressor::zeros();
    for r in 0..3 {
        for c in 0..3 {
            h[(r, 3 * r + c)] = b[c];
        }
        h[(r, 9 + r)] = 1.0;
    }
    h
}

#[derive(Debug, Clone, PartialEq)]
pub struct WindowEntry {
    pub timestamp: f64,
    /// Pose of this frame in the newest body frame.
    pub rel_pose: RigidTransform,
    pub readings: Vec<Vector3<f64>>,
    pub regressors: Vec<Regressor>,
    /// Odometry distance between this frame and the newest one.
    pub distance: f64,
}

#[derive(Debug, Clone)]
pub struct SlidingWindow {
    entries: VecDeque<WindowEntry>,
    horizon: f64,
    extrinsics: Vec<SensorExtrinsics>,
}

impl SlidingWindow {
    pub fn new(horizon: f64, extrinsics: Vec<SensorExtrinsics>) -> Result<Self> {
        if !(horizon >= 0.0 && horizon.is_finite()) {
            return Err(Error::Config(format!("window horizon {horizon} must be a finite non-negative length")));
        }
        if extrinsics.is_empty() {
            return Err(Error::Config("window needs at least one sensor".into()));
        }
        Ok(Self {
            entries: VecDeque::new(),
            horizon,
            extrinsics,
        })
    }

    pub fn horizon(&self) -> f64 {
        self.horizon
    }

    pub fn sensor_count(&self) -> usize {
        self.extrinsics.len()
    }

    pub fn extrinsics(&self) -> &[SensorExtrinsics] {
        &self.extrinsics
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn entries(&self) -> impl ExactSizeIterator<Item = &WindowEntry> + DoubleEndedIterator {
        self.entries.iter()
    }

    pub fn newest(&self) -> Option<&WindowEntry> {
        self.entries.back()
    }

    pub fn clear(&mut self) {
        self.entries.clear();
    }

    /// Odometry length spanned by the retained entries.
    pub fn span(&self) -> f64 {
        self.entries.front().map_or(0.0, |e| e.distance)
    }

    pub fn push_frame(&mut self, frame: &DatasetFrame) -> Result<()> {
        self.push(frame.timestamp, &frame.odom_increment(), &frame.readings)
    }

    /// Appends a frame reached by `increment` from the previous newest frame.
    pub fn push(&mut self, timestamp: f64, increment: &RigidTransform, readings: &[Vector3<f64>]) -> Result<()> {
        if readings.len() != self.extrinsics.len() {
            return Err(Error::Config(format!(
                "frame carries {} readings for {} sensors",
                readings.len(),
                self.extrinsics.len()
            )));
        }
        if let Some(last) = self.entries.back() {
            if !(timestamp > last.timestamp) {
                return Err(Error::NonMonotoneTimestamp {
                    prev: last.timestamp,
                    next: timestamp,
                });
            }
        }

        let step = increment.translation.norm();
        let stationary = step < STATIONARY_TRANS && log_so3(&increment.rotation).norm() < STATIONARY_ROT;
        let back = increment.inverse();
        for e in &mut self.entries {
            e.rel_pose = back.compose(&e.rel_pose);
            e.distance += step;
        }
        if stationary {
            self.entries.pop_back();
        }
        let horizon = self.horizon;
        while self.entries.front().is_some_and(|e| e.distance > horizon) {
            self.entries.pop_front();
        }
        self.entries.push_back(WindowEntry {
            timestamp,
            rel_pose: RigidTransform::identity(),
            readings: readings.to_vec(),
            regressors: readings.iter().map(regressor).collect(),
            distance: 0.0,
        });
        Ok(())
    }

    /// Sensor poses relative to the newest body frame, indexed `[entry][sensor]`.
    pub fn body_sensor_poses(&self) -> Vec<Vec<RigidTransform>> {
        self.entries
            .iter()
            .map(|e| self.extrinsics.iter().map(|m| e.rel_pose.compose(&m.as_transform())).collect())
            .collect()
    }

    /// World poses of every sensor at every entry when the newest frame sits at `x`.
    pub fn sensor_poses(&self, x: &PoseState) -> Vec<Vec<RigidTransform>> {
        let t = x.to_transform();
        self.body_sensor_poses()
            .into_iter()
            .map(|row| row.iter().map(|s| t.compose(s)).collect())
            .collect()
    }
}
