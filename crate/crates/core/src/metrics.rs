//! Per-task metric kernels and their assembly into a [`MetricSet`].
//!
//! Arm metrics compare the dataset and simulation mean trajectories sample
//! by sample. Object metrics are characterised per simulation repeat and
//! averaged, because objects do not share a common end pose across repeats.
//! "Error" entries are signed as `dataset - simulation`.

use std::f64::consts::PI;

use nalgebra::{Matrix3, Vector3};
use serde::{Deserialize, Serialize};

use crate::distributions::{final_pose_distances, FinalPoseDistances};
use crate::error::{Error, Result};
use crate::trajectory::{
    align_pair, derive_speed, derive_speed_rate, JointTorqueSample, LengthMismatch, PoseSample, RepeatSet,
    TaskRecording, WrenchSample,
};

pub const ARM_METRIC_COUNT: usize = 15;
pub const OBJECT_METRIC_COUNT: usize = 8;

/// Length scale weighting translation against rotation in the pose error.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PoseMetricConfig {
    pub r: f64,
}

impl Default for PoseMetricConfig {
    fn default() -> Self {
        Self { r: 37.0 }
    }
}

impl PoseMetricConfig {
    pub fn new(r: f64) -> Result<Self> {
        if !(r.is_finite() && r > 0.0) {
            return Err(Error::InvalidValue(format!("length scale r must be positive, got {r}")));
        }
        Ok(Self { r })
    }
}

/// When a body counts as moving: speed at or above `speed_threshold` for at
/// least `window` consecutive samples.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct StaticnessConfig {
    /// m/s
    pub speed_threshold: f64,
    pub window: usize,
}

impl Default for StaticnessConfig {
    fn default() -> Self {
        Self {
            speed_threshold: 0.005,
            window: 3,
        }
    }
}

impl StaticnessConfig {
    pub fn new(speed_threshold: f64, window: usize) -> Result<Self> {
        if !(speed_threshold.is_finite() && speed_threshold > 0.0) || window == 0 {
            return Err(Error::InvalidValue(format!(
                "staticness needs a positive threshold and window, got {speed_threshold} / {window}"
            )));
        }
        Ok(Self {
            speed_threshold,
            window,
        })
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct EvaluationConfig {
    pub pose: PoseMetricConfig,
    pub staticness: StaticnessConfig,
}

/// Inclusive sample range over which an object moves.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MovingWindow {
    pub start_index: usize,
    pub end_index: usize,
    pub start_t: f64,
    pub end_t: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MovingTime {
    /// Seconds between the first and last moving sample; 0 if none.
    pub moving_time: f64,
    pub window: Option<MovingWindow>,
}

fn check_aligned(left: usize, right: usize) -> Result<usize> {
    if left != right {
        return Err(Error::Alignment(format!(
            "series lengths differ ({left} vs {right}); align first"
        )));
    }
    if left == 0 {
        return Err(Error::DegenerateInput("empty series".into()));
    }
    Ok(left)
}

fn mean_of(values: impl Iterator<Item = f64>, n: usize) -> f64 {
    values.sum::<f64>() / n as f64
}

/// Mean pointwise distance between positions, in meters.
pub fn euclidean_error(d: &[PoseSample], s: &[PoseSample]) -> Result<f64> {
    let n = check_aligned(d.len(), s.len())?;
    Ok(mean_of(
        d.iter().zip(s).map(|(a, b)| (a.position - b.position).norm()),
        n,
    ))
}

/// Upper bound of a single rotation-error term.
pub const MAX_ROTATION_TERM: f64 = PI / 2.0;

/// Mean of `arccos(|q_d · q_s|)`, in radians. Each term lies in
/// `[0, MAX_ROTATION_TERM]`.
///
/// The angle between the sign-aligned unit quaternions is evaluated as
/// `2·atan2(‖q_d − q_s‖, ‖q_d + q_s‖)`, which stays accurate where
/// `arccos` of a dot product near 1 does not.
pub fn rotation_error(d: &[PoseSample], s: &[PoseSample]) -> Result<f64> {
    let n = check_aligned(d.len(), s.len())?;
    Ok(mean_of(
        d.iter().zip(s).map(|(a, b)| {
            let (qa, mut qb) = (a.orientation.coords, b.orientation.coords);
            if qa.dot(&qb) < 0.0 {
                qb = -qb;
            }
            2.0 * (qa - qb).norm().atan2((qa + qb).norm())
        }),
        n,
    ))
}

/// Logarithm of a rotation matrix as a rotation vector (axis × angle,
/// angle in `[0, π]`).
///
/// Near a half turn the axis is read from the symmetric part of the matrix,
/// where the antisymmetric part vanishes.
pub fn rotation_log(m: &Matrix3<f64>) -> Vector3<f64> {
    let vee = Vector3::new(m[(2, 1)] - m[(1, 2)], m[(0, 2)] - m[(2, 0)], m[(1, 0)] - m[(0, 1)]);
    let sin = 0.5 * vee.norm();
    let cos = 0.5 * (m.trace() - 1.0);
    let angle = sin.atan2(cos);

    if angle < 1e-6 {
        // θ / (2 sin θ) ≈ 1/2 + θ²/12
        return vee * (0.5 + angle * angle / 12.0);
    }
    if cos > -0.5 {
        return vee * (angle / (2.0 * sin));
    }
    // (R + Rᵀ)/2 - cos θ·I = (1 - cos θ) a aᵀ
    let sym = (m + m.transpose()) * 0.5 - Matrix3::identity() * cos;
    let i = (0..3)
        .max_by(|&a, &b| sym[(a, a)].total_cmp(&sym[(b, b)]))
        .expect("three diagonal entries");
    let mut axis = sym.column(i).into_owned();
    axis /= axis.norm();
    if axis.dot(&vee) < 0.0 {
        axis = -axis;
    }
    axis * angle
}

/// Mean over samples of `sqrt(‖log(R_dᵀ R_s)‖² + r ‖b_s - b_d‖²)`.
pub fn pose_error(d: &[PoseSample], s: &[PoseSample], cfg: &PoseMetricConfig) -> Result<f64> {
    let n = check_aligned(d.len(), s.len())?;
    Ok(mean_of(
        d.iter().zip(s).map(|(a, b)| {
            let relative =
                a.orientation.to_rotation_matrix().matrix().transpose() * b.orientation.to_rotation_matrix().matrix();
            let rotation = rotation_log(&relative).norm_squared();
            let translation = (b.position - a.position).norm_squared();
            (rotation + cfg.r * translation).sqrt()
        }),
        n,
    ))
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ArmVelocityStats {
    /// Highest simulated end-effector speed, m/s.
    pub velocity_max: f64,
    /// Mean of `|v_d| - |v_s|`, m/s.
    pub velocity_error: f64,
}

pub fn velocity_stats_arm(d: &[PoseSample], s: &[PoseSample]) -> Result<ArmVelocityStats> {
    let n = check_aligned(d.len(), s.len())?;
    let speed_d = derive_speed(d)?;
    let speed_s = derive_speed(s)?;
    Ok(ArmVelocityStats {
        velocity_max: speed_s.iter().copied().fold(0.0, f64::max),
        velocity_error: mean_of(speed_d.iter().zip(&speed_s).map(|(a, b)| a - b), n),
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ObjectVelocityStats {
    pub velocity_max: f64,
    /// Mean speed over the moving window; 0 without one.
    pub velocity_avg: f64,
}

fn window_slice<'a, T>(values: &'a [T], window: Option<&MovingWindow>) -> &'a [T] {
    match window {
        Some(w) if w.start_index <= w.end_index && w.end_index < values.len() => &values[w.start_index..=w.end_index],
        _ => &[],
    }
}

pub fn velocity_stats_object(obj: &[PoseSample], window: Option<&MovingWindow>) -> Result<ObjectVelocityStats> {
    let speed = derive_speed(obj)?;
    let moving = window_slice(&speed, window);
    Ok(ObjectVelocityStats {
        velocity_max: speed.iter().copied().fold(0.0, f64::max),
        velocity_avg: if moving.is_empty() {
            0.0
        } else {
            mean_of(moving.iter().copied(), moving.len())
        },
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ArmAccelerationStats {
    /// Largest simulated rate of speed increase, m/s².
    pub accel_max: f64,
    /// Largest simulated rate of speed decrease, as a magnitude.
    pub decel_max: f64,
    /// Mean of dataset minus simulation rate of speed change.
    pub accel_error: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ObjectAccelerationStats {
    pub accel_max: f64,
    pub decel_max: f64,
    /// Mean magnitude of the rate of speed change over the moving window.
    pub accel_avg: f64,
}

fn extremes(rates: &[f64]) -> (f64, f64) {
    let max = rates.iter().copied().fold(0.0, f64::max);
    let min = rates.iter().copied().fold(0.0, f64::min);
    (max, -min)
}

pub fn acceleration_stats_arm(d: &[PoseSample], s: &[PoseSample]) -> Result<ArmAccelerationStats> {
    let n = check_aligned(d.len(), s.len())?;
    let rate_d = derive_speed_rate(d)?;
    let rate_s = derive_speed_rate(s)?;
    let (accel_max, decel_max) = extremes(&rate_s);
    Ok(ArmAccelerationStats {
        accel_max,
        decel_max,
        accel_error: mean_of(rate_d.iter().zip(&rate_s).map(|(a, b)| a - b), n),
    })
}

pub fn acceleration_stats_object(obj: &[PoseSample], window: Option<&MovingWindow>) -> Result<ObjectAccelerationStats> {
    let rate = derive_speed_rate(obj)?;
    let (accel_max, decel_max) = extremes(&rate);
    let moving = window_slice(&rate, window);
    Ok(ObjectAccelerationStats {
        accel_max,
        decel_max,
        accel_avg: if moving.is_empty() {
            0.0
        } else {
            mean_of(moving.iter().map(|a| a.abs()), moving.len())
        },
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TorqueStats {
    pub torque_min: f64,
    pub torque_max: f64,
    pub torque_error: f64,
}

fn total_abs_torque(sample: &JointTorqueSample) -> f64 {
    sample.torques.iter().map(|t| t.abs()).sum()
}

/// Extremes of the simulated summed absolute joint torque and the mean
/// dataset-minus-simulation difference of that sum.
pub fn torque_stats(d: &[JointTorqueSample], s: &[JointTorqueSample]) -> Result<TorqueStats> {
    let n = check_aligned(d.len(), s.len())?;
    let totals_s: Vec<f64> = s.iter().map(total_abs_torque).collect();
    Ok(TorqueStats {
        torque_min: totals_s.iter().copied().fold(f64::INFINITY, f64::min),
        torque_max: totals_s.iter().copied().fold(f64::NEG_INFINITY, f64::max),
        torque_error: mean_of(d.iter().zip(&totals_s).map(|(a, b)| total_abs_torque(a) - b), n),
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct WrenchStats {
    pub force_max: f64,
    pub force_error: f64,
    pub moment_max: f64,
    pub moment_error: f64,
}

/// Component sums `Fx + Fy + Fz` and `Mx + My + Mz`: maxima over the
/// simulation, and the mean dataset-minus-simulation difference.
pub fn wrench_stats(d: &[WrenchSample], s: &[WrenchSample]) -> Result<WrenchStats> {
    let n = check_aligned(d.len(), s.len())?;
    let force = |w: &WrenchSample| w.force.sum();
    let moment = |w: &WrenchSample| w.moment.sum();
    Ok(WrenchStats {
        force_max: s.iter().map(force).fold(f64::NEG_INFINITY, f64::max),
        force_error: mean_of(d.iter().zip(s).map(|(a, b)| force(a) - force(b)), n),
        moment_max: s.iter().map(moment).fold(f64::NEG_INFINITY, f64::max),
        moment_error: mean_of(d.iter().zip(s).map(|(a, b)| moment(a) - moment(b)), n),
    })
}

/// Time between the first and last sample at which the body is moving.
pub fn moving_time(obj: &[PoseSample], cfg: &StaticnessConfig) -> Result<MovingTime> {
    let speed = derive_speed(obj)?;
    let mut first: Option<usize> = None;
    let mut last: Option<usize> = None;
    let mut run_start: Option<usize> = None;
    for k in 0..=speed.len() {
        let moving = speed.get(k).is_some_and(|&v| v >= cfg.speed_threshold);
        match (moving, run_start) {
            (true, None) => run_start = Some(k),
            (false, Some(start)) => {
                if k - start >= cfg.window {
                    first.get_or_insert(start);
                    last = Some(k - 1);
                }
                run_start = None;
            }
            _ => {}
        }
    }
    Ok(match (first, last) {
        (Some(a), Some(b)) => MovingTime {
            moving_time: obj[b].t - obj[a].t,
            window: Some(MovingWindow {
                start_index: a,
                end_index: b,
                start_t: obj[a].t,
                end_t: obj[b].t,
            }),
        },
        _ => MovingTime {
            moving_time: 0.0,
            window: None,
        },
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ArmMetrics {
    pub euclidean_error: f64,
    pub rotation_error: f64,
    pub pose_error: f64,
    pub velocity_max: f64,
    pub velocity_error: f64,
    pub accel_max: f64,
    pub decel_max: f64,
    pub accel_error: f64,
    pub torque_min: f64,
    pub torque_max: f64,
    pub torque_error: f64,
    pub force_max: f64,
    pub force_error: f64,
    pub moment_max: f64,
    pub moment_error: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ObjectMetrics {
    pub obj_velocity_max: f64,
    pub obj_velocity_avg: f64,
    pub obj_accel_max: f64,
    pub obj_decel_max: f64,
    pub obj_accel_avg: f64,
    pub moving_time: f64,
    pub obj_translation_distance: f64,
    pub obj_rotation_distance: f64,
}

/// The 15 arm metrics of one task, plus 8 object metrics when the task
/// involves a manipulable object.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricSet {
    pub task_id: u8,
    pub arm: ArmMetrics,
    pub object: Option<ObjectMetrics>,
}

impl ArmMetrics {
    pub fn entries(&self) -> [(&'static str, f64); ARM_METRIC_COUNT] {
        [
            ("euclidean_error", self.euclidean_error),
            ("rotation_error", self.rotation_error),
            ("pose_error", self.pose_error),
            ("velocity_max", self.velocity_max),
            ("velocity_error", self.velocity_error),
            ("accel_max", self.accel_max),
            ("decel_max", self.decel_max),
            ("accel_error", self.accel_error),
            ("torque_min", self.torque_min),
            ("torque_max", self.torque_max),
            ("torque_error", self.torque_error),
            ("force_max", self.force_max),
            ("force_error", self.force_error),
            ("moment_max", self.moment_max),
            ("moment_error", self.moment_error),
        ]
    }
}

impl ObjectMetrics {
    pub fn entries(&self) -> [(&'static str, f64); OBJECT_METRIC_COUNT] {
        [
            ("obj_velocity_max", self.obj_velocity_max),
            ("obj_velocity_avg", self.obj_velocity_avg),
            ("obj_accel_max", self.obj_accel_max),
            ("obj_decel_max", self.obj_decel_max),
            ("obj_accel_avg", self.obj_accel_avg),
            ("moving_time", self.moving_time),
            ("obj_translation_distance", self.obj_translation_distance),
            ("obj_rotation_distance", self.obj_rotation_distance),
        ]
    }
}

impl MetricSet {
    /// All populated metrics in canonical order (15 or 23 entries).
    pub fn entries(&self) -> Vec<(&'static str, f64)> {
        let mut out = self.arm.entries().to_vec();
        if let Some(object) = &self.object {
            out.extend(object.entries());
        }
        out
    }

    pub fn len(&self) -> usize {
        ARM_METRIC_COUNT + if self.object.is_some() { OBJECT_METRIC_COUNT } else { 0 }
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    /// Entries that compare dataset with simulation (as opposed to
    /// describing the simulation alone).
    pub fn error_entries(&self) -> Vec<(&'static str, f64)> {
        const ERRORS: [&str; 10] = [
            "euclidean_error",
            "rotation_error",
            "pose_error",
            "velocity_error",
            "accel_error",
            "torque_error",
            "force_error",
            "moment_error",
            "obj_translation_distance",
            "obj_rotation_distance",
        ];
        self.entries()
            .into_iter()
            .filter(|(name, _)| ERRORS.contains(name))
            .collect()
    }
}

/// Kinematic statistics of one object series.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ObjectMotion {
    pub velocity: ObjectVelocityStats,
    pub acceleration: ObjectAccelerationStats,
    pub moving: MovingTime,
}

pub fn object_motion(obj: &[PoseSample], cfg: &StaticnessConfig) -> Result<ObjectMotion> {
    let moving = moving_time(obj, cfg)?;
    Ok(ObjectMotion {
        velocity: velocity_stats_object(obj, moving.window.as_ref())?,
        acceleration: acceleration_stats_object(obj, moving.window.as_ref())?,
        moving,
    })
}

/// Averages of per-repeat object statistics.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ObjectSummary {
    pub velocity_max: f64,
    pub velocity_avg: f64,
    pub accel_max: f64,
    pub decel_max: f64,
    pub accel_avg: f64,
    pub moving_time: f64,
}

impl ObjectSummary {
    fn from_motions(motions: &[ObjectMotion]) -> Self {
        let n = motions.len();
        let avg = |f: fn(&ObjectMotion) -> f64| mean_of(motions.iter().map(f), n);
        Self {
            velocity_max: avg(|m| m.velocity.velocity_max),
            velocity_avg: avg(|m| m.velocity.velocity_avg),
            accel_max: avg(|m| m.acceleration.accel_max),
            decel_max: avg(|m| m.acceleration.decel_max),
            accel_avg: avg(|m| m.acceleration.accel_avg),
            moving_time: avg(|m| m.moving.moving_time),
        }
    }
}

/// Simulation-only maxima recomputed on the dataset side.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct DatasetExtremes {
    pub velocity_max: f64,
    pub accel_max: f64,
    pub decel_max: f64,
    pub torque_min: f64,
    pub torque_max: f64,
    pub force_max: f64,
    pub moment_max: f64,
}

#[derive(Clone, Debug)]
pub struct ObjectEvaluation {
    pub simulation: ObjectSummary,
    pub dataset: ObjectSummary,
    pub simulation_motions: Vec<ObjectMotion>,
    pub dataset_motions: Vec<ObjectMotion>,
    pub distances: FinalPoseDistances,
}

/// A metric set together with the supporting values that end up in the
/// appendix.
#[derive(Clone, Debug)]
pub struct TaskEvaluation {
    pub metrics: MetricSet,
    pub dataset_extremes: DatasetExtremes,
    pub object: Option<ObjectEvaluation>,
    pub length_warning: Option<LengthMismatch>,
}

fn arm_metrics(d: &TaskRecording, s: &TaskRecording, cfg: &EvaluationConfig) -> Result<ArmMetrics> {
    let (dp, sp) = (&d.effector().samples, &s.effector().samples);
    let velocity = velocity_stats_arm(dp, sp)?;
    let accel = acceleration_stats_arm(dp, sp)?;
    let torque = torque_stats(d.joint_torques(), s.joint_torques())?;
    let wrench = wrench_stats(d.wrench(), s.wrench())?;
    Ok(ArmMetrics {
        euclidean_error: euclidean_error(dp, sp)?,
        rotation_error: rotation_error(dp, sp)?,
        pose_error: pose_error(dp, sp, &cfg.pose)?,
        velocity_max: velocity.velocity_max,
        velocity_error: velocity.velocity_error,
        accel_max: accel.accel_max,
        decel_max: accel.decel_max,
        accel_error: accel.accel_error,
        torque_min: torque.torque_min,
        torque_max: torque.torque_max,
        torque_error: torque.torque_error,
        force_max: wrench.force_max,
        force_error: wrench.force_error,
        moment_max: wrench.moment_max,
        moment_error: wrench.moment_error,
    })
}

fn object_motions(set: &RepeatSet, cfg: &StaticnessConfig) -> Result<Vec<ObjectMotion>> {
    set.repeats()
        .iter()
        .map(|r| {
            let object = r.object().ok_or_else(|| {
                Error::InvalidValue(format!("repeat {} lacks the object series", r.metadata().repeat_id))
            })?;
            object_motion(&object.samples, cfg)
        })
        .collect()
}

/// Full comparison of one task, with appendix details.
pub fn evaluate_task(dataset: &RepeatSet, sim: &RepeatSet, cfg: &EvaluationConfig) -> Result<TaskEvaluation> {
    if dataset.task_id() != sim.task_id() {
        return Err(Error::TaskMismatch(dataset.task_id(), sim.task_id()));
    }
    if dataset.has_object() != sim.has_object() {
        return Err(Error::InvalidValue(format!(
            "task {}: object tracked in only one of dataset and simulation",
            dataset.task_id()
        )));
    }
    let aligned = align_pair(dataset.mean(), sim.mean())?;
    let (d, s) = (&aligned.left, &aligned.right);
    let arm = arm_metrics(d, s, cfg)?;

    // Dataset-side extremes: the same kernels with the roles swapped.
    let reverse = arm_metrics(s, d, cfg)?;
    let dataset_extremes = DatasetExtremes {
        velocity_max: reverse.velocity_max,
        accel_max: reverse.accel_max,
        decel_max: reverse.decel_max,
        torque_min: reverse.torque_min,
        torque_max: reverse.torque_max,
        force_max: reverse.force_max,
        moment_max: reverse.moment_max,
    };

    let object = if dataset.has_object() {
        let simulation_motions = object_motions(sim, &cfg.staticness)?;
        let dataset_motions = object_motions(dataset, &cfg.staticness)?;
        Some(ObjectEvaluation {
            simulation: ObjectSummary::from_motions(&simulation_motions),
            dataset: ObjectSummary::from_motions(&dataset_motions),
            simulation_motions,
            dataset_motions,
            distances: final_pose_distances(dataset, sim)?,
        })
    } else {
        None
    };

    let metrics = MetricSet {
        task_id: dataset.task_id(),
        arm,
        object: object.as_ref().map(|o| ObjectMetrics {
            obj_velocity_max: o.simulation.velocity_max,
            obj_velocity_avg: o.simulation.velocity_avg,
            obj_accel_max: o.simulation.accel_max,
            obj_decel_max: o.simulation.decel_max,
            obj_accel_avg: o.simulation.accel_avg,
            moving_time: o.simulation.moving_time,
            obj_translation_distance: o.distances.translation,
            obj_rotation_distance: o.distances.rotation,
        }),
    };
    let bad: Vec<&str> = metrics
        .entries()
        .into_iter()
        .filter(|(_, v)| !v.is_finite())
        .map(|(name, _)| name)
        .collect();
    if !bad.is_empty() {
        return Err(Error::InvalidValue(format!("non-finite metrics: {}", bad.join(", "))));
    }

    Ok(TaskEvaluation {
        metrics,
        dataset_extremes,
        object,
        length_warning: aligned.warning,
    })
}

/// The 15- or 23-entry metric set for one task.
pub fn compute_metric_set(dataset: &RepeatSet, sim: &RepeatSet, cfg: &EvaluationConfig) -> Result<MetricSet> {
    evaluate_task(dataset, sim, cfg).map(|e| e.metrics)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use nalgebra::{Rotation3, UnitQuaternion};
    use std::f64::consts::FRAC_PI_2;

    fn series(f: impl Fn(f64) -> (Vector3<f64>, UnitQuaternion<f64>), n: usize) -> Vec<PoseSample> {
        (0..n)
            .map(|k| {
                let t = k as f64 / 10.0;
                let (p, q) = f(t);
                PoseSample::new(t, p, q)
            })
            .collect()
    }

    fn fixed(p: Vector3<f64>) -> Vec<PoseSample> {
        series(|_| (p, UnitQuaternion::identity()), 20)
    }

    #[test]
    fn euclidean_cases() {
        let a = fixed(Vector3::new(1.0, 2.0, 3.0));
        assert_eq!(euclidean_error(&a, &a).unwrap(), 0.0);
        let b = fixed(Vector3::new(1.3, 2.4, 3.0));
        assert_relative_eq!(euclidean_error(&a, &b).unwrap(), 0.5, epsilon = 1e-12);
        assert!(matches!(euclidean_error(&a, &b[..5]), Err(Error::Alignment(_))));
    }

    #[test]
    fn rotation_cases() {
        let yaw = UnitQuaternion::from_axis_angle(&Vector3::z_axis(), FRAC_PI_2);
        let a = series(|_| (Vector3::zeros(), yaw), 10);
        let flipped = series(
            |_| (Vector3::zeros(), UnitQuaternion::new_unchecked(-yaw.into_inner())),
            10,
        );
        assert_eq!(rotation_error(&a, &a).unwrap(), 0.0);
        assert_eq!(rotation_error(&a, &flipped).unwrap(), 0.0);
        let id = fixed(Vector3::zeros());
        assert_relative_eq!(rotation_error(&id[..10], &a).unwrap(), PI / 4.0, epsilon = 1e-12);
    }

    #[test]
    fn pose_cases() {
        let cfg = PoseMetricConfig::default();
        let a = fixed(Vector3::zeros());
        assert_eq!(pose_error(&a, &a, &cfg).unwrap(), 0.0);
        let b = fixed(Vector3::new(0.0, 1.0, 0.0));
        assert_relative_eq!(pose_error(&a, &b, &cfg).unwrap(), 37f64.sqrt(), epsilon = 1e-12);
        let yaw = UnitQuaternion::from_axis_angle(&Vector3::x_axis(), FRAC_PI_2);
        let c = series(|_| (Vector3::zeros(), yaw), 20);
        assert_relative_eq!(pose_error(&a, &c, &cfg).unwrap(), FRAC_PI_2, epsilon = 1e-12);
    }

    #[test]
    fn pose_config_rejects_non_positive() {
        assert!(PoseMetricConfig::new(0.0).is_err());
        assert!(PoseMetricConfig::new(-1.0).is_err());
        assert!(StaticnessConfig::new(0.01, 0).is_err());
    }

    #[test]
    fn log_recovers_angle_everywhere() {
        let axis = Vector3::new(1.0, -2.0, 0.5).normalize();
        for &angle in &[0.0, 1e-9, 1e-3, 0.5, 2.0, 2.2, 3.0, PI - 1e-7, PI] {
            let r = Rotation3::from_axis_angle(&nalgebra::Unit::new_normalize(axis), angle);
            let w = rotation_log(r.matrix());
            assert_relative_eq!(w.norm(), angle, epsilon = 1e-9);
            if angle > 1e-6 && angle < PI {
                assert_relative_eq!(w / angle, axis, epsilon = 1e-6);
            }
        }
    }

    #[test]
    fn log_at_half_turn_about_each_axis() {
        for axis in [Vector3::x_axis(), Vector3::y_axis(), Vector3::z_axis()] {
            let r = Rotation3::from_axis_angle(&axis, PI);
            let w = rotation_log(r.matrix());
            assert_relative_eq!(w.norm(), PI, epsilon = 1e-12);
            assert_relative_eq!(w.normalize().dot(&axis).abs(), 1.0, epsilon = 1e-12);
        }
    }

    #[test]
    fn static_vs_ramp_velocity() {
        let s = fixed(Vector3::zeros());
        let d = series(|t| (Vector3::new(t, 0.0, 0.0), UnitQuaternion::identity()), 20);
        let v = velocity_stats_arm(&d, &s).unwrap();
        assert_eq!(v.velocity_max, 0.0);
        assert_relative_eq!(v.velocity_error, 1.0, epsilon = 1e-9);
        let same = velocity_stats_arm(&d, &d).unwrap();
        assert_eq!(same.velocity_error, 0.0);
    }

    #[test]
    fn triangle_speed_profile_accel() {
        // speed ramps 0 -> 1 m/s over 1 s, then back to 0 over 1 s
        let speeds: Vec<f64> = (0..=20)
            .map(|k| {
                if k <= 10 {
                    k as f64 / 10.0
                } else {
                    (20 - k) as f64 / 10.0
                }
            })
            .collect();
        let mut x = 0.0;
        let mut samples = Vec::new();
        for (k, v) in speeds.iter().enumerate() {
            samples.push(PoseSample::new(
                k as f64 / 10.0,
                Vector3::new(x, 0.0, 0.0),
                UnitQuaternion::identity(),
            ));
            x += v * 0.1;
        }
        let a = acceleration_stats_arm(&samples, &samples).unwrap();
        assert_relative_eq!(a.accel_max, 1.0, epsilon = 1e-9);
        assert_relative_eq!(a.decel_max, 1.0, epsilon = 1e-9);
        assert_eq!(a.accel_error, 0.0);

        let constant = series(|t| (Vector3::new(0.3 * t, 0.0, 0.0), UnitQuaternion::identity()), 20);
        let c = acceleration_stats_arm(&constant, &constant).unwrap();
        assert!(c.accel_max < 1e-9 && c.decel_max < 1e-9);
    }

    fn torques(value: f64, n: usize) -> Vec<JointTorqueSample> {
        (0..n)
            .map(|k| JointTorqueSample {
                t: k as f64 / 10.0,
                torques: [value; 6],
            })
            .collect()
    }

    #[test]
    fn torque_cases() {
        let d = torques(1.0, 10);
        assert_eq!(torque_stats(&d, &d).unwrap().torque_error, 0.0);
        let stats = torque_stats(&d, &torques(0.0, 10)).unwrap();
        assert_eq!(stats.torque_error, 6.0);
        assert_eq!(stats.torque_min, 0.0);
        assert_eq!(stats.torque_max, 0.0);
        let neg = torque_stats(&torques(0.0, 10), &torques(-2.0, 10)).unwrap();
        assert_eq!((neg.torque_min, neg.torque_max, neg.torque_error), (12.0, 12.0, -12.0));
    }

    #[test]
    fn wrench_component_sum() {
        let mk = |f: [f64; 3]| -> Vec<WrenchSample> {
            (0..10)
                .map(|k| WrenchSample {
                    t: k as f64 / 10.0,
                    force: f.into(),
                    moment: Vector3::zeros(),
                })
                .collect()
        };
        let d = mk([1.0, 2.0, 3.0]);
        let s = mk([0.0; 3]);
        let w = wrench_stats(&d, &s).unwrap();
        assert_eq!(w.force_error, 6.0);
        assert_eq!(w.moment_error, 0.0);
        assert_eq!(w.force_max, 0.0);
        let same = wrench_stats(&d, &d).unwrap();
        assert_eq!((same.force_error, same.moment_error), (0.0, 0.0));
    }

    #[test]
    fn moving_time_cases() {
        let cfg = StaticnessConfig::default();
        let still = fixed(Vector3::new(0.2, 0.1, 0.0));
        let mt = moving_time(&still, &cfg).unwrap();
        assert_eq!(mt.moving_time, 0.0);
        assert!(mt.window.is_none());

        let moving = series(
            |t| {
                let x = 0.1 * (t.clamp(1.0, 4.0) - 1.0);
                (Vector3::new(x, 0.0, 0.0), UnitQuaternion::identity())
            },
            60,
        );
        let mt = moving_time(&moving, &cfg).unwrap();
        assert!((mt.moving_time - 3.0).abs() <= 0.1 + 1e-9, "{}", mt.moving_time);
        let w = mt.window.unwrap();
        assert_eq!((w.start_index, w.end_index), (10, 39));

        let never = velocity_stats_object(&still, None).unwrap();
        assert_eq!((never.velocity_max, never.velocity_avg), (0.0, 0.0));
        let obj = velocity_stats_object(&moving, mt.window.as_ref()).unwrap();
        assert_relative_eq!(obj.velocity_avg, 0.1, epsilon = 1e-9);
        assert_relative_eq!(obj.velocity_max, 0.1, epsilon = 1e-9);
    }

    #[test]
    fn short_bursts_do_not_count_as_motion() {
        let cfg = StaticnessConfig::default();
        // two samples of motion, shorter than the 3-sample window
        let blip = series(
            |t| {
                let x = if t > 1.05 && t < 1.25 { 0.01 } else { 0.0 };
                (Vector3::new(x, 0.0, 0.0), UnitQuaternion::identity())
            },
            30,
        );
        assert_eq!(moving_time(&blip, &cfg).unwrap().moving_time, 0.0);
    }
}
