//! Exact Gaussian-process regression of the field from scattered
//! fingerprints, one independent GP per axis sharing an RBF kernel.

use std::path::Path;

use nalgebra::{DMatrix, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::magmap::{GridSpec, MagneticGridMap};

/// Largest training set accepted by [`fit`].
pub const MAX_TRAINING_POINTS: usize = 5000;
const MIN_SEPARATION: f64 = 1e-6;

/// A surveyed field sample.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Fingerprint {
    pub position: Vector3<f64>,
    pub field: Vector3<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KernelParams {
    pub lengthscale: f64,
    pub signal_var: f64,
    pub noise_var: f64,
}

impl Default for KernelParams {
    fn default() -> Self {
        Self {
            lengthscale: 1.0,
            signal_var: 25.0,
            noise_var: 0.04,
        }
    }
}

impl KernelParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.lengthscale > 0.0 && self.signal_var > 0.0 && self.noise_var >= 0.0)
            || !(self.lengthscale.is_finite() && self.signal_var.is_finite() && self.noise_var.is_finite())
        {
            return Err(Error::Config(format!("invalid kernel parameters {self:?}")));
        }
        Ok(())
    }
}

/// `σ_f² · exp(−‖a − b‖² / 2ℓ²)`
#[inline]
pub fn rbf_kernel(a: &Vector3<f64>, b: &Vector3<f64>, params: &KernelParams) -> f64 {
    let d2 = (a - b).norm_squared();
    params.signal_var * (-d2 / (2.0 * params.lengthscale * params.lengthscale)).exp()
}

/// A fitted posterior-mean predictor.
#[derive(Debug, Clone)]
pub struct GprModel {
    positions: Vec<Vector3<f64>>,
    /// `n × 3`, one weight column per field axis.
    weights: DMatrix<f64>,
    params: KernelParams,
    mean: Vector3<f64>,
}

pub fn fit(fingerprints: &[Fingerprint], params: KernelParams) -> Result<GprModel> {
    params.validate()?;
    let n = fingerprints.len();
    if n == 0 {
        return Err(Error::Empty("no fingerprints"));
    }
    if n > MAX_TRAINING_POINTS {
        return Err(Error::Config(format!(
            "{n} fingerprints exceed the exact-GPR cap of {MAX_TRAINING_POINTS}"
        )));
    }
    if fingerprints
        .iter()
        .any(|f| !f.position.iter().chain(f.field.iter()).all(|v| v.is_finite()))
    {
        return Err(Error::DegenerateTraining("non-finite fingerprint".into()));
    }
    for (a, fa) in fingerprints.iter().enumerate() {
        for fb in &fingerprints[a + 1..] {
            if (fa.position - fb.position).norm() <= MIN_SEPARATION {
                return Err(Error::DegenerateTraining(format!(
                    "duplicate position ({:.6}, {:.6}, {:.6})",
                    fa.position.x, fa.position.y, fa.position.z
                )));
            }
        }
    }

    let positions: Vec<Vector3<f64>> = fingerprints.iter().map(|f| f.position).collect();
    let mean = fingerprints.iter().map(|f| f.field).sum::<Vector3<f64>>() / n as f64;
    let targets = DMatrix::from_fn(n, 3, |r, c| fingerprints[r].field[c] - mean[c]);

    let mut k = DMatrix::from_fn(n, n, |r, c| rbf_kernel(&positions[r], &positions[c], &params));
    for d in 0..n {
        k[(d, d)] += params.noise_var;
    }
    let chol = match k.clone().cholesky() {
        Some(c) => c,
        None => {
            for d in 0..n {
                k[(d, d)] += 1e-8 * params.signal_var;
            }
            k.cholesky().ok_or(Error::Factorization)?
        }
    };
    let weights = chol.solve(&targets);

    Ok(GprModel {
        positions,
        weights,
        params,
        mean,
    })
}

impl GprModel {
    pub fn mean(&self) -> Vector3<f64> {
        self.mean
    }

    pub fn params(&self) -> &KernelParams {
        &self.params
    }

    pub fn weights(&self) -> &DMatrix<f64> {
        &self.weights
    }

    pub fn len(&self) -> usize {
        self.positions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.positions.is_empty()
    }

    /// Posterior mean `m + k(p, ·)ᵀ α` per axis.
    pub fn predict(&self, p: &Vector3<f64>) -> Vector3<f64> {
        let mut out = self.mean;
        for (r, q) in self.positions.iter().enumerate() {
            let k = rbf_kernel(p, q, &self.params);
            out.x += k * self.weights[(r, 0)];
            out.y += k * self.weights[(r, 1)];
            out.z += k * self.weights[(r, 2)];
        }
        out
    }

    pub fn build_grid(&self, spec: &GridSpec) -> Result<MagneticGridMap> {
        build_grid(self, spec)
    }
}

pub fn predict(model: &GprModel, p: &Vector3<f64>) -> Vector3<f64> {
    model.predict(p)
}

/// Dense map whose nodes are posterior means at the node positions.
pub fn build_grid(model: &GprModel, spec: &GridSpec) -> Result<MagneticGridMap> {
    MagneticGridMap::from_fn(*spec, |p| Ok(model.predict(p)))
}

#[derive(Debug, Serialize, Deserialize)]
struct FingerprintRecord {
    x: f64,
    y: f64,
    z: f64,
    bx: f64,
    by: f64,
    bz: f64,
}

/// Writes `x,y,z,bx,by,bz` CSV.
pub fn write_fingerprints(path: impl AsRef<Path>, fingerprints: &[Fingerprint]) -> Result<()> {
    let mut w = csv::Writer::from_path(path.as_ref())?;
    for f in fingerprints {
        w.serialize(FingerprintRecord {
            x: f.position.x,
            y: f.position.y,
            z: f.position.z,
            bx: f.field.x,
            by: f.field.y,
            bz: f.field.z,
        })?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_fingerprints(path: impl AsRef<Path>) -> Result<Vec<Fingerprint>> {
    let mut r = csv::Reader::from_path(path.as_ref())?;
    let headers = r.headers()?.clone();
    if headers.iter().collect::<Vec<_>>() != ["x", "y", "z", "bx", "by", "bz"] {
        return Err(Error::Schema {
            record: 0,
            message: format!("expected header x,y,z,bx,by,bz, got {}", headers.iter().collect::<Vec<_>>().join(",")),
        });
    }
    r.deserialize()
        .map(|rec| {
            let rec: FingerprintRecord = rec?;
            Ok(Fingerprint {
                position: Vector3::new(rec.x, rec.y, rec.z),
                field: Vector3::new(rec.bx, rec.by, rec.bz),
            })
        })
        .collect()
}
