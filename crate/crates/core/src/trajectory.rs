//! Recording data model and the numerical kernels shared by every metric:
//! pairwise alignment, repeat averaging and finite-difference kinematics.
//!
//! Units are SI throughout: seconds, meters, radians, newtons, newton-meters.
//! Orientations are unit quaternions in `(w, x, y, z)` order.

use std::fmt;
use std::str::FromStr;

use log::warn;
use nalgebra::{Quaternion, UnitQuaternion, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Nominal sampling rate of every benchmark stream.
pub const RECORDING_RATE_HZ: f64 = 10.0;
/// Repeats recorded per task and source.
pub const REPEATS_PER_TASK: usize = 20;
/// Highest task number in the benchmark.
pub const TASK_COUNT: u8 = 10;
/// Quaternions further than this from unit norm are renormalized on construction.
pub const QUATERNION_NORM_TOLERANCE: f64 = 1e-6;
/// Relative length difference above which `align_pair` warns.
pub const LENGTH_MISMATCH_WARN_FRACTION: f64 = 0.05;
/// Number of arm joints carried in torque streams.
pub const JOINT_COUNT: usize = 6;
/// Number of gripper fingers.
pub const FINGER_COUNT: usize = 3;
/// Fully closed finger angle in radians.
pub const FINGER_CLOSED_RAD: f64 = 1.4;

const GRID_TOLERANCE: f64 = 1e-4;
const RATE_TOLERANCE: f64 = 1e-6;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Source {
    Dataset,
    Simulation,
}

impl fmt::Display for Source {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Source::Dataset => "dataset",
            Source::Simulation => "simulation",
        })
    }
}

impl FromStr for Source {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "dataset" => Ok(Source::Dataset),
            "simulation" => Ok(Source::Simulation),
            other => Err(Error::InvalidValue(format!(
                "unknown source {other:?}, expected dataset or simulation"
            ))),
        }
    }
}

/// Recording header.
#[derive(Clone, Debug, PartialEq)]
pub struct Metadata {
    pub task_id: u8,
    pub repeat_id: u8,
    /// ISO-8601 date/time of recording, kept verbatim.
    pub timestamp: String,
    /// Degrees Celsius.
    pub temperature: Option<f64>,
    /// Relative humidity in percent.
    pub humidity: Option<f64>,
    pub description: String,
    pub source: Source,
}

impl Metadata {
    pub fn validate(&self) -> Result<()> {
        if !(1..=TASK_COUNT).contains(&self.task_id) {
            return Err(Error::InvalidValue(format!(
                "task id {} outside 1..={TASK_COUNT}",
                self.task_id
            )));
        }
        if !(1..=REPEATS_PER_TASK as u8).contains(&self.repeat_id) {
            return Err(Error::InvalidValue(format!(
                "repeat id {} outside 1..={REPEATS_PER_TASK}",
                self.repeat_id
            )));
        }
        for (name, value) in [("temperature", self.temperature), ("humidity", self.humidity)] {
            if value.is_some_and(|v| !v.is_finite()) {
                return Err(Error::InvalidValue(format!("{name} is not finite")));
            }
        }
        for (name, text) in [("timestamp", &self.timestamp), ("description", &self.description)] {
            if text.contains(['\n', '\r']) {
                return Err(Error::InvalidValue(format!("{name} contains a line break")));
            }
        }
        Ok(())
    }
}

/// Position and orientation of one rigid body at one instant.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PoseSample {
    pub t: f64,
    pub position: Vector3<f64>,
    pub orientation: UnitQuaternion<f64>,
}

impl PoseSample {
    pub fn new(t: f64, position: Vector3<f64>, orientation: UnitQuaternion<f64>) -> Self {
        Self {
            t,
            position,
            orientation,
        }
    }

    /// Builds a sample from raw `(w, x, y, z)` components, renormalizing the
    /// quaternion only when its norm is off by more than
    /// [`QUATERNION_NORM_TOLERANCE`]. Returns the original norm alongside.
    pub fn from_raw(t: f64, position: [f64; 3], wxyz: [f64; 4]) -> Result<(Self, f64)> {
        let q = Quaternion::new(wxyz[0], wxyz[1], wxyz[2], wxyz[3]);
        let norm = q.norm();
        if !norm.is_finite() || norm == 0.0 {
            return Err(Error::InvalidValue(format!("quaternion {wxyz:?} cannot be normalized")));
        }
        let orientation = if (norm - 1.0).abs() > QUATERNION_NORM_TOLERANCE {
            UnitQuaternion::from_quaternion(q)
        } else {
            UnitQuaternion::new_unchecked(q)
        };
        Ok((Self::new(t, Vector3::from(position), orientation), norm))
    }

    fn validate(&self) -> Result<()> {
        if !self.t.is_finite() || self.t < 0.0 {
            return Err(Error::InvalidValue(format!("sample time {} invalid", self.t)));
        }
        if !self.position.iter().all(|v| v.is_finite()) {
            return Err(Error::InvalidValue(format!("non-finite position at t={}", self.t)));
        }
        let norm = self.orientation.quaternion().norm();
        let off = (norm - 1.0).abs();
        if off.is_nan() || off > QUATERNION_NORM_TOLERANCE {
            return Err(Error::InvalidValue(format!(
                "quaternion norm {norm} at t={} is not unit",
                self.t
            )));
        }
        Ok(())
    }
}

/// Wrist force-torque reading.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct WrenchSample {
    pub t: f64,
    pub force: Vector3<f64>,
    pub moment: Vector3<f64>,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct JointTorqueSample {
    pub t: f64,
    pub torques: [f64; JOINT_COUNT],
}

/// Finger angles in radians, 0 = open, [`FINGER_CLOSED_RAD`] = closed.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct FingerSample {
    pub t: f64,
    pub positions: [f64; FINGER_COUNT],
}

/// One tracked rigid body and its pose stream.
#[derive(Clone, Debug, PartialEq)]
pub struct Body {
    pub name: String,
    pub samples: Vec<PoseSample>,
}

impl Body {
    pub fn new(name: impl Into<String>, samples: Vec<PoseSample>) -> Self {
        Self {
            name: name.into(),
            samples,
        }
    }
}

/// One repeat of one task: every stream on a shared uniform time grid.
///
/// The first body is always the arm end effector; a second body, when
/// present, is the manipulable object.
#[derive(Clone, Debug, PartialEq)]
pub struct TaskRecording {
    metadata: Metadata,
    rate_hz: f64,
    bodies: Vec<Body>,
    wrench: Vec<WrenchSample>,
    joint_torques: Vec<JointTorqueSample>,
    fingers: Vec<FingerSample>,
}

impl TaskRecording {
    pub fn new(
        metadata: Metadata,
        bodies: Vec<Body>,
        wrench: Vec<WrenchSample>,
        joint_torques: Vec<JointTorqueSample>,
        fingers: Vec<FingerSample>,
    ) -> Result<Self> {
        metadata.validate()?;
        if bodies.is_empty() || bodies.len() > 2 {
            return Err(Error::InvalidValue(format!(
                "expected the end effector plus at most one object, got {} bodies",
                bodies.len()
            )));
        }
        for (i, body) in bodies.iter().enumerate() {
            if body.name.is_empty() || body.name.contains([',', '\n']) {
                return Err(Error::InvalidValue(format!("invalid body name {:?}", body.name)));
            }
            if bodies[..i].iter().any(|b| b.name == body.name) {
                return Err(Error::InvalidValue(format!("duplicate body {:?}", body.name)));
            }
        }

        let times: Vec<f64> = bodies[0].samples.iter().map(|s| s.t).collect();
        let n = times.len();
        if n < 2 {
            return Err(Error::DegenerateInput(format!(
                "recording needs at least 2 samples, got {n}"
            )));
        }
        let lengths = bodies
            .iter()
            .map(|b| b.samples.len())
            .chain([wrench.len(), joint_torques.len(), fingers.len()]);
        if lengths.clone().any(|len| len != n) {
            return Err(Error::Alignment(format!(
                "series lengths differ: {:?}",
                lengths.collect::<Vec<_>>()
            )));
        }
        let dt = uniform_step(&times)?;

        for body in &bodies {
            for (s, &t) in body.samples.iter().zip(&times) {
                s.validate()?;
                check_time(s.t, t)?;
            }
        }
        for (w, &t) in wrench.iter().zip(&times) {
            check_time(w.t, t)?;
            if !w.force.iter().chain(w.moment.iter()).all(|v| v.is_finite()) {
                return Err(Error::InvalidValue(format!("non-finite wrench at t={t}")));
            }
        }
        for (j, &t) in joint_torques.iter().zip(&times) {
            check_time(j.t, t)?;
            if !j.torques.iter().all(|v| v.is_finite()) {
                return Err(Error::InvalidValue(format!("non-finite joint torque at t={t}")));
            }
        }
        for (f, &t) in fingers.iter().zip(&times) {
            check_time(f.t, t)?;
            if !f.positions.iter().all(|v| v.is_finite()) {
                return Err(Error::InvalidValue(format!("non-finite finger position at t={t}")));
            }
        }

        Ok(Self {
            metadata,
            rate_hz: 1.0 / dt,
            bodies,
            wrench,
            joint_torques,
            fingers,
        })
    }

    pub fn metadata(&self) -> &Metadata {
        &self.metadata
    }

    pub fn rate_hz(&self) -> f64 {
        self.rate_hz
    }

    pub fn len(&self) -> usize {
        self.bodies[0].samples.len()
    }

    /// Always false; a recording holds at least two samples.
    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn times(&self) -> impl Iterator<Item = f64> + '_ {
        self.bodies[0].samples.iter().map(|s| s.t)
    }

    pub fn bodies(&self) -> &[Body] {
        &self.bodies
    }

    pub fn effector(&self) -> &Body {
        &self.bodies[0]
    }

    pub fn object(&self) -> Option<&Body> {
        self.bodies.get(1)
    }

    pub fn wrench(&self) -> &[WrenchSample] {
        &self.wrench
    }

    pub fn joint_torques(&self) -> &[JointTorqueSample] {
        &self.joint_torques
    }

    pub fn fingers(&self) -> &[FingerSample] {
        &self.fingers
    }

    /// Same recording with a replaced header.
    pub fn with_metadata(&self, metadata: Metadata) -> Result<Self> {
        metadata.validate()?;
        Ok(Self {
            metadata,
            ..self.clone()
        })
    }

    /// Common prefix of `n` samples.
    pub fn truncated(&self, n: usize) -> Result<Self> {
        if n < 2 {
            return Err(Error::DegenerateInput(format!(
                "cannot truncate recording to {n} samples"
            )));
        }
        if n >= self.len() {
            return Ok(self.clone());
        }
        Ok(Self {
            metadata: self.metadata.clone(),
            rate_hz: self.rate_hz,
            bodies: self
                .bodies
                .iter()
                .map(|b| Body::new(b.name.clone(), b.samples[..n].to_vec()))
                .collect(),
            wrench: self.wrench[..n].to_vec(),
            joint_torques: self.joint_torques[..n].to_vec(),
            fingers: self.fingers[..n].to_vec(),
        })
    }

    /// Internal constructor for values derived from already validated recordings.
    fn from_parts_unchecked(
        metadata: Metadata,
        rate_hz: f64,
        bodies: Vec<Body>,
        wrench: Vec<WrenchSample>,
        joint_torques: Vec<JointTorqueSample>,
        fingers: Vec<FingerSample>,
    ) -> Self {
        Self {
            metadata,
            rate_hz,
            bodies,
            wrench,
            joint_torques,
            fingers,
        }
    }
}

fn check_time(sample_t: f64, grid_t: f64) -> Result<()> {
    if sample_t != grid_t {
        return Err(Error::Alignment(format!(
            "sample time {sample_t} is off the shared grid ({grid_t})"
        )));
    }
    Ok(())
}

/// Returns the grid period of a uniformly spaced, increasing time series.
///
/// The period is the mean step `(t_last - t_first) / (n - 1)`; every
/// individual step must agree with it to a relative 1e-4.
pub fn uniform_step(times: &[f64]) -> Result<f64> {
    let n = times.len();
    if n < 2 {
        return Err(Error::DegenerateInput(format!(
            "a time grid needs at least 2 samples, got {n}"
        )));
    }
    let dt = (times[n - 1] - times[0]) / (n - 1) as f64;
    if !(dt.is_finite() && dt > 0.0) {
        return Err(Error::Alignment(format!("time grid is not increasing (step {dt})")));
    }
    for (k, pair) in times.windows(2).enumerate() {
        let step = pair[1] - pair[0];
        if (step - dt).abs() > GRID_TOLERANCE * dt {
            return Err(Error::Alignment(format!(
                "non-uniform time grid: step {step} at sample {k} differs from {dt}"
            )));
        }
    }
    Ok(dt)
}

/// The 20 repeats of one task from one source, plus their mean.
#[derive(Clone, Debug, PartialEq)]
pub struct RepeatSet {
    task_id: u8,
    repeats: Vec<TaskRecording>,
    mean: TaskRecording,
}

impl RepeatSet {
    pub fn new(task_id: u8, repeats: Vec<TaskRecording>) -> Result<Self> {
        if repeats.len() != REPEATS_PER_TASK {
            return Err(Error::Validation(vec![format!(
                "task {task_id}: expected {REPEATS_PER_TASK} repeats, got {}",
                repeats.len()
            )]));
        }
        let stray: Vec<String> = repeats
            .iter()
            .filter(|r| r.metadata.task_id != task_id)
            .map(|r| {
                format!(
                    "repeat {} belongs to task {}, expected {task_id}",
                    r.metadata.repeat_id, r.metadata.task_id
                )
            })
            .collect();
        if !stray.is_empty() {
            return Err(Error::Validation(stray));
        }
        let shortest = repeats.iter().map(TaskRecording::len).min().unwrap_or(0);
        let repeats = repeats
            .iter()
            .map(|r| r.truncated(shortest))
            .collect::<Result<Vec<_>>>()?;
        let mean = mean_trajectory(&repeats)?;
        Ok(Self { task_id, repeats, mean })
    }

    pub fn task_id(&self) -> u8 {
        self.task_id
    }

    /// Repeats truncated to the shortest one, ordered by repeat index.
    pub fn repeats(&self) -> &[TaskRecording] {
        &self.repeats
    }

    pub fn mean(&self) -> &TaskRecording {
        &self.mean
    }

    pub fn has_object(&self) -> bool {
        self.mean.object().is_some()
    }
}

/// Reported when aligned recordings differ in length by more than
/// [`LENGTH_MISMATCH_WARN_FRACTION`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct LengthMismatch {
    pub left: usize,
    pub right: usize,
}

impl fmt::Display for LengthMismatch {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "recording lengths differ by more than {:.0}% ({} vs {}); truncated to {}",
            LENGTH_MISMATCH_WARN_FRACTION * 100.0,
            self.left,
            self.right,
            self.left.min(self.right)
        )
    }
}

#[derive(Clone, Debug)]
pub struct AlignedPair {
    pub left: TaskRecording,
    pub right: TaskRecording,
    pub warning: Option<LengthMismatch>,
}

/// Truncates both recordings to their common prefix so that sample `k`
/// of one corresponds to sample `k` of the other.
pub fn align_pair(a: &TaskRecording, b: &TaskRecording) -> Result<AlignedPair> {
    if (a.rate_hz - b.rate_hz).abs() > RATE_TOLERANCE * a.rate_hz.max(b.rate_hz) {
        return Err(Error::Alignment(format!(
            "sampling rates differ: {} Hz vs {} Hz",
            a.rate_hz, b.rate_hz
        )));
    }
    let n = a.len().min(b.len());
    if n < 2 {
        return Err(Error::DegenerateInput(format!("only {n} common samples")));
    }
    let longest = a.len().max(b.len());
    let warning = ((longest - n) as f64 > LENGTH_MISMATCH_WARN_FRACTION * longest as f64).then(|| {
        let w = LengthMismatch {
            left: a.len(),
            right: b.len(),
        };
        warn!("{w}");
        w
    });
    Ok(AlignedPair {
        left: a.truncated(n)?,
        right: b.truncated(n)?,
        warning,
    })
}

/// Per-sample mean of a list of repeats.
///
/// Repeats are first truncated to the shortest one. Quaternions are
/// sign-aligned to the first repeat before averaging and renormalized after.
/// The header and time grid of the first repeat are kept.
pub fn mean_trajectory(repeats: &[TaskRecording]) -> Result<TaskRecording> {
    let first = repeats
        .first()
        .ok_or_else(|| Error::DegenerateInput("no repeats to average".into()))?;
    if repeats.len() == 1 {
        return Ok(first.clone());
    }
    for r in &repeats[1..] {
        let same_layout =
            r.bodies.len() == first.bodies.len() && r.bodies.iter().zip(&first.bodies).all(|(x, y)| x.name == y.name);
        if !same_layout {
            return Err(Error::Alignment("repeats track different bodies".into()));
        }
        if (r.rate_hz - first.rate_hz).abs() > RATE_TOLERANCE * first.rate_hz {
            return Err(Error::Alignment("repeats use different sampling rates".into()));
        }
    }
    let n = repeats.iter().map(TaskRecording::len).min().unwrap_or(0);
    let count = repeats.len() as f64;

    let bodies = first
        .bodies
        .iter()
        .enumerate()
        .map(|(b, body)| {
            let samples = (0..n)
                .map(|k| {
                    let reference = body.samples[k].orientation.into_inner();
                    let mut position = Vector3::zeros();
                    let mut q_sum = Quaternion::new(0.0, 0.0, 0.0, 0.0);
                    for r in repeats {
                        let s = &r.bodies[b].samples[k];
                        position += s.position;
                        let q = s.orientation.into_inner();
                        q_sum += if q.dot(&reference) < 0.0 { -q } else { q };
                    }
                    PoseSample::new(
                        body.samples[k].t,
                        position / count,
                        UnitQuaternion::from_quaternion(q_sum),
                    )
                })
                .collect();
            Body::new(body.name.clone(), samples)
        })
        .collect();

    let wrench = (0..n)
        .map(|k| {
            let (force, moment) = repeats.iter().fold((Vector3::zeros(), Vector3::zeros()), |(f, m), r| {
                (f + r.wrench[k].force, m + r.wrench[k].moment)
            });
            WrenchSample {
                t: first.wrench[k].t,
                force: force / count,
                moment: moment / count,
            }
        })
        .collect();
    let joint_torques = (0..n)
        .map(|k| JointTorqueSample {
            t: first.joint_torques[k].t,
            torques: mean_array(repeats.iter().map(|r| &r.joint_torques[k].torques), count),
        })
        .collect();
    let fingers = (0..n)
        .map(|k| FingerSample {
            t: first.fingers[k].t,
            positions: mean_array(repeats.iter().map(|r| &r.fingers[k].positions), count),
        })
        .collect();

    Ok(TaskRecording::from_parts_unchecked(
        first.metadata.clone(),
        first.rate_hz,
        bodies,
        wrench,
        joint_torques,
        fingers,
    ))
}

fn mean_array<'a, const N: usize>(rows: impl Iterator<Item = &'a [f64; N]>, count: f64) -> [f64; N] {
    let mut sum = [0.0; N];
    for row in rows {
        for (acc, v) in sum.iter_mut().zip(row) {
            *acc += v;
        }
    }
    sum.map(|v| v / count)
}

/// Forward difference with the last value repeated, so the output has the
/// same length as the input. Needs at least two values.
pub(crate) fn forward_difference<T>(values: &[T], dt: f64) -> Vec<T>
where
    T: Copy + std::ops::Sub<Output = T> + std::ops::Div<f64, Output = T>,
{
    let mut out: Vec<T> = values.windows(2).map(|w| (w[1] - w[0]) / dt).collect();
    if let Some(&last) = out.last() {
        out.push(last);
    }
    out
}

fn pose_step(series: &[PoseSample]) -> Result<f64> {
    let times: Vec<f64> = series.iter().map(|s| s.t).collect();
    uniform_step(&times)
}

/// Linear velocity by forward differences, `v_k = (p_{k+1} - p_k) / dt`,
/// with `v_{n-1} = v_{n-2}`.
pub fn derive_velocity(series: &[PoseSample]) -> Result<Vec<Vector3<f64>>> {
    let dt = pose_step(series)?;
    let positions: Vec<Vector3<f64>> = series.iter().map(|s| s.position).collect();
    Ok(forward_difference(&positions, dt))
}

/// Forward difference of [`derive_velocity`], same padding rule.
pub fn derive_acceleration(series: &[PoseSample]) -> Result<Vec<Vector3<f64>>> {
    let dt = pose_step(series)?;
    let velocity = derive_velocity(series)?;
    Ok(forward_difference(&velocity, dt))
}

/// Speed (velocity magnitude) per sample.
pub fn derive_speed(series: &[PoseSample]) -> Result<Vec<f64>> {
    Ok(derive_velocity(series)?.iter().map(|v| v.norm()).collect())
}

/// Rate of change of speed per sample: positive while speeding up,
/// negative while slowing down.
pub fn derive_speed_rate(series: &[PoseSample]) -> Result<Vec<f64>> {
    let dt = pose_step(series)?;
    Ok(forward_difference(&derive_speed(series)?, dt))
}
