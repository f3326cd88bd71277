//! Final-pose distributions of manipulable objects.
//!
//! The dataset's 20 final object positions and orientations (as Euler
//! triples) are each summarized by a multivariate normal fit; a simulated
//! final pose is scored by its Mahalanobis distance from those fits.

use std::f64::consts::{FRAC_PI_2, PI, TAU};

use nalgebra::{Cholesky, DMatrix, DVector, Dyn, Quaternion, Rotation3, SymmetricEigen, UnitQuaternion};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::trajectory::{RepeatSet, TaskRecording, QUATERNION_NORM_TOLERANCE};

/// Smallest covariance eigenvalue tolerated before regularizing.
pub const REGULARIZATION_FLOOR: f64 = 1e-9;
const SYMMETRY_TOLERANCE: f64 = 1e-12;
const GIMBAL_LOCK_TOLERANCE: f64 = 1e-6;

/// Multivariate normal summary of a sample cloud.
#[derive(Clone, Debug)]
pub struct GaussianFit {
    mean: DVector<f64>,
    covariance: DMatrix<f64>,
    regularization: Option<f64>,
    cholesky: Cholesky<f64, Dyn>,
}

impl GaussianFit {
    /// Builds a fit from an explicit mean and covariance. The covariance
    /// must be symmetric and positive definite; no regularization is applied.
    pub fn new(mean: DVector<f64>, covariance: DMatrix<f64>) -> Result<Self> {
        Self::with_regularization(mean, covariance, None)
    }

    fn with_regularization(mean: DVector<f64>, covariance: DMatrix<f64>, regularization: Option<f64>) -> Result<Self> {
        let k = mean.len();
        if k == 0 {
            return Err(Error::DegenerateInput("zero-dimensional distribution".into()));
        }
        if covariance.nrows() != k || covariance.ncols() != k {
            return Err(Error::DimensionMismatch {
                expected: k,
                found: covariance.nrows(),
            });
        }
        let scale = covariance.amax().max(1.0);
        if (&covariance - covariance.transpose()).amax() > SYMMETRY_TOLERANCE * scale {
            return Err(Error::InvalidValue("covariance is not symmetric".into()));
        }
        let cholesky = Cholesky::new(covariance.clone())
            .ok_or_else(|| Error::InvalidValue("covariance is not positive definite".into()))?;
        Ok(Self {
            mean,
            covariance,
            regularization,
            cholesky,
        })
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn mean(&self) -> &DVector<f64> {
        &self.mean
    }

    pub fn covariance(&self) -> &DMatrix<f64> {
        &self.covariance
    }

    /// The ridge `λ` added to the diagonal during fitting, if any.
    pub fn regularization(&self) -> Option<f64> {
        self.regularization
    }

    /// `sqrt((x - μ)ᵀ Σ⁻¹ (x - μ))`, via a triangular solve against the
    /// Cholesky factor.
    pub fn mahalanobis(&self, x: &DVector<f64>) -> Result<f64> {
        if x.len() != self.dim() {
            return Err(Error::DimensionMismatch {
                expected: self.dim(),
                found: x.len(),
            });
        }
        let diff = x - &self.mean;
        let whitened = self
            .cholesky
            .l_dirty()
            .solve_lower_triangular(&diff)
            .ok_or_else(|| Error::InvalidValue("singular covariance factor".into()))?;
        Ok(whitened.norm())
    }
}

/// Free-function form of [`GaussianFit::mahalanobis`].
pub fn mahalanobis(fit: &GaussianFit, x: &DVector<f64>) -> Result<f64> {
    fit.mahalanobis(x)
}

/// Component-wise arithmetic mean.
pub fn sample_mean(samples: &[DVector<f64>]) -> Result<DVector<f64>> {
    let first = samples
        .first()
        .ok_or_else(|| Error::DegenerateInput("no samples".into()))?;
    let k = first.len();
    let mut sum = DVector::zeros(k);
    for s in samples {
        if s.len() != k {
            return Err(Error::DimensionMismatch {
                expected: k,
                found: s.len(),
            });
        }
        sum += s;
    }
    Ok(sum / samples.len() as f64)
}

/// Sample mean and unbiased (n - 1) covariance. If the smallest eigenvalue
/// of the covariance is below [`REGULARIZATION_FLOOR`], the diagonal is
/// loaded with `max(floor, 1e-9 · trace / k)` and the amount is recorded.
pub fn fit_multivariate_normal(samples: &[DVector<f64>]) -> Result<GaussianFit> {
    let n = samples.len();
    if n < 2 {
        return Err(Error::DegenerateInput(format!(
            "a normal fit needs at least 2 samples, got {n}"
        )));
    }
    let mean = sample_mean(samples)?;
    let k = mean.len();
    if k == 0 {
        return Err(Error::DegenerateInput("zero-dimensional samples".into()));
    }
    let mut covariance = DMatrix::<f64>::zeros(k, k);
    for s in samples {
        let d = s - &mean;
        for i in 0..k {
            for j in i..k {
                covariance[(i, j)] += d[i] * d[j];
            }
        }
    }
    for i in 0..k {
        for j in i..k {
            let v: f64 = covariance[(i, j)] / (n - 1) as f64;
            covariance[(i, j)] = v;
            covariance[(j, i)] = v;
        }
    }
    if !covariance.iter().all(|v| v.is_finite()) {
        return Err(Error::InvalidValue("non-finite samples".into()));
    }

    let smallest = SymmetricEigen::new(covariance.clone()).eigenvalues.min();
    let regularization = (smallest < REGULARIZATION_FLOOR).then(|| {
        let lambda = REGULARIZATION_FLOOR.max(1e-9 * covariance.trace() / k as f64);
        for i in 0..k {
            covariance[(i, i)] += lambda;
        }
        lambda
    });
    GaussianFit::with_regularization(mean, covariance, regularization)
}

/// Intrinsic X-Y-Z Euler angles: `R = Rx(roll) · Ry(pitch) · Rz(yaw)`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EulerTriple {
    pub roll: f64,
    pub pitch: f64,
    pub yaw: f64,
}

impl EulerTriple {
    pub fn to_array(self) -> [f64; 3] {
        [self.roll, self.pitch, self.yaw]
    }

    pub fn to_rotation(self) -> UnitQuaternion<f64> {
        UnitQuaternion::from_axis_angle(&nalgebra::Vector3::x_axis(), self.roll)
            * UnitQuaternion::from_axis_angle(&nalgebra::Vector3::y_axis(), self.pitch)
            * UnitQuaternion::from_axis_angle(&nalgebra::Vector3::z_axis(), self.yaw)
    }
}

/// Maps an angle from `atan2`'s `(-π, π]` onto `[-π, π)`.
fn half_open(angle: f64) -> f64 {
    if angle >= PI {
        angle - TAU
    } else {
        angle
    }
}

/// Converts a unit quaternion `(w, x, y, z)` to intrinsic X-Y-Z angles.
///
/// Within 1e-6 of pitch ±π/2 roll is set to zero and the remaining
/// rotation about Z is assigned to yaw.
pub fn quaternion_to_euler(q: &Quaternion<f64>) -> Result<EulerTriple> {
    let norm = q.norm();
    let off = (norm - 1.0).abs();
    if off.is_nan() || off > QUATERNION_NORM_TOLERANCE {
        return Err(Error::InvalidValue(format!("quaternion norm {norm} is not unit")));
    }
    let m = Rotation3::from(UnitQuaternion::new_normalize(*q)).into_inner();
    let pitch = m[(0, 2)].atan2(m[(0, 0)].hypot(m[(0, 1)]));
    if FRAC_PI_2 - pitch.abs() < GIMBAL_LOCK_TOLERANCE {
        return Ok(EulerTriple {
            roll: 0.0,
            pitch,
            yaw: half_open(m[(1, 0)].atan2(m[(1, 1)])),
        });
    }
    Ok(EulerTriple {
        roll: half_open((-m[(1, 2)]).atan2(m[(2, 2)])),
        pitch,
        yaw: half_open((-m[(0, 1)]).atan2(m[(0, 0)])),
    })
}

/// Mean direction of a set of angles.
pub fn circular_mean(angles: impl IntoIterator<Item = f64>) -> f64 {
    let (s, c) = angles
        .into_iter()
        .fold((0.0, 0.0), |(s, c), a| (s + a.sin(), c + a.cos()));
    s.atan2(c)
}

/// Shifts `angle` by a multiple of 2π into `[center - π, center + π)`.
pub fn wrap_near(angle: f64, center: f64) -> f64 {
    angle - TAU * ((angle - center + PI) / TAU).floor()
}

fn unwrap_triples(triples: &[EulerTriple]) -> Vec<DVector<f64>> {
    let arrays: Vec<[f64; 3]> = triples.iter().map(|t| t.to_array()).collect();
    let centers: Vec<f64> = (0..3)
        .map(|axis| circular_mean(arrays.iter().map(|a| a[axis])))
        .collect();
    arrays
        .iter()
        .map(|a| DVector::from_iterator(3, (0..3).map(|axis| wrap_near(a[axis], centers[axis]))))
        .collect()
}

/// Per-axis mean of Euler triples after moving each sample within π of the
/// axis' circular mean. This is the mean used by [`fit_euler_normal`].
pub fn euler_mean(triples: &[EulerTriple]) -> Result<DVector<f64>> {
    sample_mean(&unwrap_triples(triples))
}

/// Normal fit over Euler triples with per-axis branch unwrapping.
pub fn fit_euler_normal(triples: &[EulerTriple]) -> Result<GaussianFit> {
    fit_multivariate_normal(&unwrap_triples(triples))
}

/// Mahalanobis distance of an Euler triple (or mean triple) from a fit made
/// by [`fit_euler_normal`], after moving it onto the fit's angular branch.
pub fn euler_mahalanobis(fit: &GaussianFit, angles: &DVector<f64>) -> Result<f64> {
    if angles.len() != fit.dim() {
        return Err(Error::DimensionMismatch {
            expected: fit.dim(),
            found: angles.len(),
        });
    }
    let wrapped = DVector::from_iterator(
        angles.len(),
        angles.iter().zip(fit.mean().iter()).map(|(&a, &m)| wrap_near(a, m)),
    );
    fit.mahalanobis(&wrapped)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RepeatDistance {
    pub translation: f64,
    pub rotation: f64,
}

#[derive(Clone, Debug)]
pub struct FinalPoseDistances {
    /// Distance of the simulation's mean final position.
    pub translation: f64,
    /// Distance of the simulation's mean final Euler triple.
    pub rotation: f64,
    pub translation_fit: GaussianFit,
    pub rotation_fit: GaussianFit,
    /// Distances of every individual simulation repeat.
    pub per_repeat: Vec<RepeatDistance>,
}

fn final_object_pose(rec: &TaskRecording) -> Result<(DVector<f64>, EulerTriple)> {
    let object = rec.object().ok_or_else(|| {
        Error::InvalidValue(format!(
            "task {} repeat {} has no object series",
            rec.metadata().task_id,
            rec.metadata().repeat_id
        ))
    })?;
    let last = object.samples.last().expect("recordings hold at least two samples");
    let position = DVector::from_column_slice(last.position.as_slice());
    Ok((position, quaternion_to_euler(last.orientation.quaternion())?))
}

/// Compares the simulation's final object poses with the dataset's
/// final-pose distributions.
///
/// The simulation is represented by its mean final pose: the arithmetic
/// mean of final positions and the unwrapped per-axis mean of final Euler
/// triples, both computed exactly as the corresponding fit means are.
pub fn final_pose_distances(dataset: &RepeatSet, sim: &RepeatSet) -> Result<FinalPoseDistances> {
    let collect = |set: &RepeatSet| -> Result<(Vec<DVector<f64>>, Vec<EulerTriple>)> {
        let poses = set
            .repeats()
            .iter()
            .map(final_object_pose)
            .collect::<Result<Vec<_>>>()?;
        Ok(poses.into_iter().unzip())
    };
    let (data_positions, data_angles) = collect(dataset)?;
    let (sim_positions, sim_angles) = collect(sim)?;

    let translation_fit = fit_multivariate_normal(&data_positions)?;
    let rotation_fit = fit_euler_normal(&data_angles)?;

    let translation = translation_fit.mahalanobis(&sample_mean(&sim_positions)?)?;
    let rotation = euler_mahalanobis(&rotation_fit, &euler_mean(&sim_angles)?)?;
    let per_repeat = sim_positions
        .iter()
        .zip(&sim_angles)
        .map(|(p, e)| {
            Ok(RepeatDistance {
                translation: translation_fit.mahalanobis(p)?,
                rotation: euler_mahalanobis(&rotation_fit, &DVector::from_column_slice(&e.to_array()))?,
            })
        })
        .collect::<Result<Vec<_>>>()?;

    Ok(FinalPoseDistances {
        translation,
        rotation,
        translation_fit,
        rotation_fit,
        per_repeat,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use nalgebra::dvector;

    #[test]
    fn identical_samples_are_fully_regularized() {
        let samples = vec![dvector![0.5, -1.0, 2.0]; 20];
        let fit = fit_multivariate_normal(&samples).unwrap();
        assert_eq!(fit.mean(), &samples[0]);
        assert_eq!(fit.regularization(), Some(REGULARIZATION_FLOOR));
        assert_eq!(fit.covariance(), &(DMatrix::identity(3, 3) * REGULARIZATION_FLOOR));
    }

    #[test]
    fn four_point_cross() {
        let samples = vec![
            dvector![1.0, 0.0],
            dvector![-1.0, 0.0],
            dvector![0.0, 1.0],
            dvector![0.0, -1.0],
        ];
        let fit = fit_multivariate_normal(&samples).unwrap();
        assert_eq!(fit.mean(), &dvector![0.0, 0.0]);
        assert_relative_eq!(fit.covariance()[(0, 0)], 2.0 / 3.0, epsilon = 1e-15);
        assert_relative_eq!(fit.covariance()[(1, 1)], 2.0 / 3.0, epsilon = 1e-15);
        assert_eq!(fit.covariance()[(0, 1)], 0.0);
        assert_eq!(fit.regularization(), None);
    }

    #[test]
    fn too_few_samples() {
        assert!(matches!(
            fit_multivariate_normal(&[dvector![1.0]]),
            Err(Error::DegenerateInput(_))
        ));
    }

    #[test]
    fn unit_covariance_distances() {
        let fit = GaussianFit::new(dvector![1.0, 2.0, 3.0], DMatrix::identity(3, 3)).unwrap();
        assert_eq!(fit.mahalanobis(&dvector![1.0, 2.0, 3.0]).unwrap(), 0.0);
        assert_eq!(fit.mahalanobis(&dvector![1.0, 3.0, 3.0]).unwrap(), 1.0);
        assert_eq!(fit.mahalanobis(&dvector![1.0, 2.0, 2.0]).unwrap(), 1.0);
        assert!(matches!(
            fit.mahalanobis(&dvector![1.0, 2.0]),
            Err(Error::DimensionMismatch { expected: 3, found: 2 })
        ));
    }

    #[test]
    fn rejects_indefinite_covariance() {
        let cov = DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 2.0, 1.0]);
        assert!(GaussianFit::new(dvector![0.0, 0.0], cov).is_err());
    }

    #[test]
    fn euler_basics() {
        let e = quaternion_to_euler(UnitQuaternion::identity().quaternion()).unwrap();
        assert_eq!(e.to_array(), [0.0, 0.0, 0.0]);
        let yaw = UnitQuaternion::from_axis_angle(&nalgebra::Vector3::z_axis(), FRAC_PI_2);
        let e = quaternion_to_euler(yaw.quaternion()).unwrap();
        assert_relative_eq!(e.roll, 0.0, epsilon = 1e-15);
        assert_relative_eq!(e.pitch, 0.0, epsilon = 1e-15);
        assert_relative_eq!(e.yaw, FRAC_PI_2, epsilon = 1e-15);
        assert!(quaternion_to_euler(&Quaternion::new(2.0, 0.0, 0.0, 0.0)).is_err());
    }

    #[test]
    fn euler_half_turn_is_minus_pi() {
        let q = UnitQuaternion::from_axis_angle(&nalgebra::Vector3::z_axis(), PI);
        let e = quaternion_to_euler(q.quaternion()).unwrap();
        assert!(e.yaw >= -PI && e.yaw < PI);
        assert_relative_eq!(e.yaw.abs(), PI, epsilon = 1e-12);
    }

    #[test]
    fn gimbal_lock_assigns_yaw() {
        let e = EulerTriple {
            roll: 0.0,
            pitch: FRAC_PI_2,
            yaw: 0.3,
        };
        let back = quaternion_to_euler(e.to_rotation().quaternion()).unwrap();
        assert_eq!(back.roll, 0.0);
        assert_relative_eq!(back.yaw, 0.3, epsilon = 1e-9);
    }

    #[test]
    fn wrap_near_range() {
        assert_relative_eq!(wrap_near(-3.1, 3.1), -3.1 + TAU, epsilon = 1e-15);
        assert_relative_eq!(wrap_near(0.5, 0.0), 0.5);
        assert_relative_eq!(wrap_near(0.5 + 4.0 * PI, 0.0), 0.5, epsilon = 1e-12);
    }
}
