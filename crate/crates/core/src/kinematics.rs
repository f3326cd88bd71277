//! Kinematic arm simulator used to produce synthetic benchmark bundles.
//!
//! A serial chain of revolute joints is driven by a clamped proportional
//! joint-velocity controller and integrated with forward Euler at the
//! control rate. There is no dynamics: wrench, torque, finger and object
//! streams come from a [`ChannelGenerator`].

use std::fmt::Write as _;

use nalgebra::{Isometry3, Quaternion, Translation3, Unit, UnitQuaternion, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, UnitSphere};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ingest::{format_sig9, Finding};
use crate::trajectory::{
    Body, FingerSample, JointTorqueSample, Metadata, PoseSample, RepeatSet, TaskRecording, WrenchSample, FINGER_COUNT,
    JOINT_COUNT, RECORDING_RATE_HZ, REPEATS_PER_TASK,
};

const AXIS_TOLERANCE: f64 = 1e-6;
const LIMIT_SLACK: f64 = 1e-12;

#[derive(Clone, Debug, PartialEq)]
pub struct Joint {
    pub name: String,
    /// Transform from the parent frame to this joint's frame at q = 0.
    pub origin: Isometry3<f64>,
    pub axis: Unit<Vector3<f64>>,
    /// `(lower, upper)` in radians.
    pub limits: (f64, f64),
}

impl Joint {
    fn transform(&self, q: f64) -> Isometry3<f64> {
        self.origin * UnitQuaternion::from_axis_angle(&self.axis, q)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct KinematicChain {
    joints: Vec<Joint>,
    effector: Isometry3<f64>,
}

impl KinematicChain {
    pub fn new(joints: Vec<Joint>, effector: Isometry3<f64>) -> Result<Self> {
        if joints.is_empty() {
            return Err(Error::InvalidValue("a chain needs at least one joint".into()));
        }
        for j in &joints {
            let (lo, hi) = j.limits;
            if lo.is_nan() || hi.is_nan() || lo > hi {
                return Err(Error::InvalidValue(format!(
                    "joint {}: lower limit {} above upper {}",
                    j.name, j.limits.0, j.limits.1
                )));
            }
        }
        Ok(Self { joints, effector })
    }

    pub fn joints(&self) -> &[Joint] {
        &self.joints
    }

    pub fn effector(&self) -> &Isometry3<f64> {
        &self.effector
    }

    pub fn dof(&self) -> usize {
        self.joints.len()
    }

    /// Clamps `q` into the joint limits, returning whether anything moved.
    pub fn clamp(&self, q: &mut [f64]) -> bool {
        let mut clamped = false;
        for (v, j) in q.iter_mut().zip(&self.joints) {
            let c = v.clamp(j.limits.0, j.limits.1);
            clamped |= c != *v;
            *v = c;
        }
        clamped
    }
}

fn parse_numbers<const N: usize>(tokens: &[&str], line: usize, what: &str) -> Result<[f64; N]> {
    if tokens.len() < N {
        return Err(Error::format(line, format!("{what} needs {N} numbers")));
    }
    let mut out = [0.0; N];
    for (o, t) in out.iter_mut().zip(tokens) {
        *o = t
            .parse::<f64>()
            .ok()
            .filter(|v| v.is_finite())
            .ok_or_else(|| Error::format(line, format!("{what}: {t:?} is not a number")))?;
    }
    Ok(out)
}

fn parse_origin(tokens: &[&str], line: usize) -> Result<Isometry3<f64>> {
    let [px, py, pz, qw, qx, qy, qz] = parse_numbers::<7>(tokens, line, "origin")?;
    let q = Quaternion::new(qw, qx, qy, qz);
    if (q.norm() - 1.0).abs() > AXIS_TOLERANCE {
        return Err(Error::format(
            line,
            format!("origin quaternion norm {} is not unit", q.norm()),
        ));
    }
    Ok(Isometry3::from_parts(
        Translation3::new(px, py, pz),
        UnitQuaternion::from_quaternion(q),
    ))
}

/// Parses the line-oriented chain description:
///
/// ```text
/// joint <name> axis <x y z> origin <px py pz qw qx qy qz> limits <lo hi>
/// effector origin <px py pz qw qx qy qz>
/// ```
///
/// Blank lines and lines starting with `#` are ignored.
pub fn parse_chain(text: &str) -> Result<KinematicChain> {
    let mut joints = Vec::new();
    let mut effector = None;
    for (i, raw) in text.lines().enumerate() {
        let line = i + 1;
        let tokens: Vec<&str> = raw.split_whitespace().collect();
        match tokens.first() {
            None => continue,
            Some(t) if t.starts_with('#') => continue,
            Some(_) if effector.is_some() => {
                return Err(Error::format(line, "nothing may follow the effector line"));
            }
            Some(&"joint") => {
                let ok = tokens.len() == 17 && tokens[2] == "axis" && tokens[6] == "origin" && tokens[14] == "limits";
                if !ok {
                    return Err(Error::format(
                        line,
                        "expected: joint <name> axis <x y z> origin <px py pz qw qx qy qz> limits <lo hi>",
                    ));
                }
                let axis = Vector3::from(parse_numbers::<3>(&tokens[3..6], line, "axis")?);
                if (axis.norm() - 1.0).abs() > AXIS_TOLERANCE {
                    return Err(Error::format(line, format!("axis norm {} is not unit", axis.norm())));
                }
                let [lo, hi] = parse_numbers::<2>(&tokens[15..17], line, "limits")?;
                if lo > hi {
                    return Err(Error::format(line, "lower limit above upper limit"));
                }
                joints.push(Joint {
                    name: tokens[1].to_string(),
                    origin: parse_origin(&tokens[7..14], line)?,
                    axis: Unit::new_normalize(axis),
                    limits: (lo, hi),
                });
            }
            Some(&"effector") => {
                if tokens.len() != 9 || tokens[1] != "origin" {
                    return Err(Error::format(line, "expected: effector origin <px py pz qw qx qy qz>"));
                }
                effector = Some(parse_origin(&tokens[2..9], line)?);
            }
            Some(other) => {
                return Err(Error::format(line, format!("unknown directive {other:?}")));
            }
        }
    }
    let last = text.lines().count().max(1);
    let effector = effector.ok_or_else(|| Error::format(last, "missing effector line"))?;
    if joints.is_empty() {
        return Err(Error::format(1, "no joints declared"));
    }
    KinematicChain::new(joints, effector)
}

fn push_origin(out: &mut String, iso: &Isometry3<f64>) {
    let t = iso.translation.vector;
    let q = iso.rotation.quaternion();
    for v in [t.x, t.y, t.z, q.w, q.i, q.j, q.k] {
        let _ = write!(out, " {}", format_sig9(v));
    }
}

/// Inverse of [`parse_chain`].
pub fn write_chain(chain: &KinematicChain) -> String {
    let mut out = String::new();
    for j in &chain.joints {
        let a = j.axis.into_inner();
        let _ = write!(
            out,
            "joint {} axis {} {} {} origin",
            j.name,
            format_sig9(a.x),
            format_sig9(a.y),
            format_sig9(a.z)
        );
        push_origin(&mut out, &j.origin);
        let _ = writeln!(out, " limits {} {}", format_sig9(j.limits.0), format_sig9(j.limits.1));
    }
    out.push_str("effector origin");
    push_origin(&mut out, &chain.effector);
    out.push('\n');
    out
}

/// End-effector pose for joint positions `q`.
pub fn forward_kinematics(chain: &KinematicChain, q: &[f64], t: f64) -> Result<PoseSample> {
    if q.len() != chain.dof() {
        return Err(Error::DimensionMismatch {
            expected: chain.dof(),
            found: q.len(),
        });
    }
    for (j, &v) in chain.joints.iter().zip(q) {
        if v < j.limits.0 - LIMIT_SLACK || v > j.limits.1 + LIMIT_SLACK {
            return Err(Error::InvalidValue(format!(
                "joint {} at {v} rad is outside [{}, {}]",
                j.name, j.limits.0, j.limits.1
            )));
        }
    }
    let pose = chain
        .joints
        .iter()
        .zip(q)
        .fold(Isometry3::identity(), |acc, (j, &v)| acc * j.transform(v))
        * chain.effector;
    Ok(PoseSample::new(t, pose.translation.vector, pose.rotation))
}

/// Proportional joint-velocity controller settings.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ControllerConfig {
    /// 1/s: commanded rad/s per rad of error.
    pub gain: f64,
    /// Per-joint speed limits in rad/s.
    pub velocity_limits: Vec<f64>,
    pub rate_hz: f64,
}

impl Default for ControllerConfig {
    /// Gain 4, 10°/s on joints 1-3 and 20°/s on joints 4-6, 10 Hz.
    fn default() -> Self {
        Self {
            gain: 4.0,
            velocity_limits: [10.0, 10.0, 10.0, 20.0, 20.0, 20.0]
                .iter()
                .map(|d: &f64| d.to_radians())
                .collect(),
            rate_hz: RECORDING_RATE_HZ,
        }
    }
}

impl ControllerConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.gain.is_finite() && self.gain > 0.0) {
            return Err(Error::InvalidValue(format!("gain must be positive, got {}", self.gain)));
        }
        if !(self.rate_hz.is_finite() && self.rate_hz > 0.0) {
            return Err(Error::InvalidValue(format!(
                "rate must be positive, got {}",
                self.rate_hz
            )));
        }
        if self.velocity_limits.iter().any(|l| !(l.is_finite() && *l > 0.0)) {
            return Err(Error::InvalidValue("velocity limits must be positive".into()));
        }
        Ok(())
    }

    pub fn period(&self) -> f64 {
        1.0 / self.rate_hz
    }
}

/// `v_j = clamp(gain · (target_j - q_j), ±limit_j)`
pub fn controller_step(q: &[f64], target: &[f64], cfg: &ControllerConfig) -> Vec<f64> {
    q.iter()
        .zip(target)
        .zip(&cfg.velocity_limits)
        .map(|((&q, &target), &limit)| (cfg.gain * (target - q)).clamp(-limit, limit))
        .collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Segment {
    /// Joint targets in radians.
    pub target: Vec<f64>,
    /// Seconds allotted to reach the target.
    pub duration: f64,
}

/// Timed sequence of joint targets, starting from `initial`.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct MotionScript {
    /// Starting joint positions; zeros when empty.
    #[serde(default)]
    pub initial: Vec<f64>,
    #[serde(default, rename = "segment")]
    pub segments: Vec<Segment>,
}

impl MotionScript {
    pub fn total_duration(&self) -> f64 {
        self.segments.iter().map(|s| s.duration).sum()
    }
}

/// Object whose pose follows a constant-velocity push between two times.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ObjectPush {
    /// Position at rest before the push, meters.
    pub start: [f64; 3],
    /// Yaw at rest before the push, radians.
    #[serde(default)]
    pub start_yaw: f64,
    /// m/s while moving.
    pub velocity: [f64; 3],
    /// rad/s about Z while moving.
    #[serde(default)]
    pub yaw_rate: f64,
    pub move_from: f64,
    pub move_until: f64,
}

impl ObjectPush {
    pub fn pose(&self, t: f64) -> Isometry3<f64> {
        let moved = (t.min(self.move_until) - self.move_from).max(0.0);
        let position = Vector3::from(self.start) + Vector3::from(self.velocity) * moved;
        let yaw = self.start_yaw + self.yaw_rate * moved;
        Isometry3::from_parts(
            Translation3::from(position),
            UnitQuaternion::from_axis_angle(&Vector3::z_axis(), yaw),
        )
    }
}

/// Sources for the streams a kinematic simulation cannot produce itself.
/// Every stream defaults to zero and no object is tracked.
pub trait ChannelGenerator {
    fn wrench(&self, _t: f64, _q: &[f64]) -> (Vector3<f64>, Vector3<f64>) {
        (Vector3::zeros(), Vector3::zeros())
    }

    fn joint_torques(&self, _t: f64, _q: &[f64]) -> [f64; JOINT_COUNT] {
        [0.0; JOINT_COUNT]
    }

    fn fingers(&self, _t: f64, _q: &[f64]) -> [f64; FINGER_COUNT] {
        [0.0; FINGER_COUNT]
    }

    /// Pose of the tracked object at time `t`. Must be `Some` at every
    /// sample or at none.
    fn object_pose(&self, _t: f64) -> Option<Isometry3<f64>> {
        None
    }
}

#[derive(Clone, Copy, Debug, Default)]
pub struct ZeroChannels;

impl ChannelGenerator for ZeroChannels {}

/// Constant wrench/torque/finger signals plus an optional pushed object.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ScriptedChannels {
    pub force: [f64; 3],
    pub moment: [f64; 3],
    pub joint_torques: [f64; JOINT_COUNT],
    pub fingers: [f64; FINGER_COUNT],
    pub object: Option<ObjectPush>,
}

impl ChannelGenerator for ScriptedChannels {
    fn wrench(&self, _t: f64, _q: &[f64]) -> (Vector3<f64>, Vector3<f64>) {
        (self.force.into(), self.moment.into())
    }

    fn joint_torques(&self, _t: f64, _q: &[f64]) -> [f64; JOINT_COUNT] {
        self.joint_torques
    }

    fn fingers(&self, _t: f64, _q: &[f64]) -> [f64; FINGER_COUNT] {
        self.fingers
    }

    fn object_pose(&self, t: f64) -> Option<Isometry3<f64>> {
        self.object.as_ref().map(|o| o.pose(t))
    }
}

pub const EFFECTOR_BODY: &str = "ee";
pub const OBJECT_BODY: &str = "obj";

#[derive(Clone, Debug)]
pub struct SimulationOutput {
    pub recording: TaskRecording,
    /// Joint positions at every recorded sample.
    pub joint_positions: Vec<Vec<f64>>,
    /// Velocity commanded after each sample but the last.
    pub commanded: Vec<Vec<f64>>,
    pub findings: Vec<Finding>,
}

/// Runs `script` on `chain` at the controller rate and records every
/// stream on that grid.
///
/// Segment `i` is active from the end of segment `i - 1` for its duration
/// (rounded to whole control periods); after the last one the final target
/// is held. An empty script yields a two-sample static recording.
pub fn simulate_task(
    chain: &KinematicChain,
    script: &MotionScript,
    cfg: &ControllerConfig,
    channels: &dyn ChannelGenerator,
    metadata: Metadata,
) -> Result<SimulationOutput> {
    cfg.validate()?;
    let dof = chain.dof();
    if cfg.velocity_limits.len() != dof {
        return Err(Error::DimensionMismatch {
            expected: dof,
            found: cfg.velocity_limits.len(),
        });
    }
    let mut q = if script.initial.is_empty() {
        vec![0.0; dof]
    } else {
        script.initial.clone()
    };
    if q.len() != dof {
        return Err(Error::DimensionMismatch {
            expected: dof,
            found: q.len(),
        });
    }
    for seg in &script.segments {
        if seg.target.len() != dof {
            return Err(Error::DimensionMismatch {
                expected: dof,
                found: seg.target.len(),
            });
        }
        if !(seg.duration.is_finite() && seg.duration > 0.0) {
            return Err(Error::InvalidValue(format!(
                "segment duration {} must be positive",
                seg.duration
            )));
        }
        if seg.target.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidValue("non-finite joint target".into()));
        }
    }

    let dt = cfg.period();
    let mut findings = Vec::new();
    if chain.clamp(&mut q) {
        findings.push(Finding::warning("t=0", "initial joint positions clamped to limits"));
    }

    let mut boundaries = Vec::with_capacity(script.segments.len());
    let mut elapsed = 0.0;
    for seg in &script.segments {
        elapsed += seg.duration;
        boundaries.push((elapsed * cfg.rate_hz).round() as usize);
    }
    let steps = boundaries.last().copied().unwrap_or(0).max(1);
    let target_at = |k: usize| -> Vec<f64> {
        boundaries
            .iter()
            .position(|&end| k < end)
            .or_else(|| script.segments.len().checked_sub(1))
            .map_or_else(|| q.clone(), |i| script.segments[i].target.clone())
    };
    let targets: Vec<Vec<f64>> = (0..steps).map(target_at).collect();

    let has_object = channels.object_pose(0.0).is_some();
    let mut joint_positions = Vec::with_capacity(steps + 1);
    let mut commanded = Vec::with_capacity(steps);
    let mut effector = Vec::with_capacity(steps + 1);
    let mut object = Vec::new();
    let mut wrench = Vec::with_capacity(steps + 1);
    let mut joint_torques = Vec::with_capacity(steps + 1);
    let mut fingers = Vec::with_capacity(steps + 1);

    for k in 0..=steps {
        let t = k as f64 / cfg.rate_hz;
        effector.push(forward_kinematics(chain, &q, t)?);
        match (has_object, channels.object_pose(t)) {
            (true, Some(pose)) => {
                object.push(PoseSample::new(t, pose.translation.vector, pose.rotation));
            }
            (false, None) => {}
            _ => {
                return Err(Error::InvalidValue(format!(
                    "object channel appeared or vanished at t={t}"
                )))
            }
        }
        let (force, moment) = channels.wrench(t, &q);
        wrench.push(WrenchSample { t, force, moment });
        joint_torques.push(JointTorqueSample {
            t,
            torques: channels.joint_torques(t, &q),
        });
        fingers.push(FingerSample {
            t,
            positions: channels.fingers(t, &q),
        });
        joint_positions.push(q.clone());

        if let Some(target) = targets.get(k) {
            let v = controller_step(&q, target, cfg);
            for (qj, vj) in q.iter_mut().zip(&v) {
                *qj += vj * dt;
            }
            if chain.clamp(&mut q) {
                findings.push(Finding::warning(
                    format!("t={}", format_sig9(t + dt)),
                    "joint limit reached; position clamped",
                ));
            }
            commanded.push(v);
        }
    }

    let mut bodies = vec![Body::new(EFFECTOR_BODY, effector)];
    if has_object {
        bodies.push(Body::new(OBJECT_BODY, object));
    }
    let recording = TaskRecording::new(metadata, bodies, wrench, joint_torques, fingers)?;
    Ok(SimulationOutput {
        recording,
        joint_positions,
        commanded,
        findings,
    })
}

/// Per-repeat perturbation: every tracked body of a repeat is shifted by one
/// Gaussian offset (`position_sigma`, meters, per axis) and rotated by one
/// Gaussian angle (`rotation_sigma`, radians) about a uniformly random axis
/// in its own frame.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct NoiseConfig {
    pub position_sigma: f64,
    pub rotation_sigma: f64,
}

impl NoiseConfig {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("position_sigma", self.position_sigma),
            ("rotation_sigma", self.rotation_sigma),
        ] {
            if !(v.is_finite() && v >= 0.0) {
                return Err(Error::InvalidValue(format!("{name} must be non-negative, got {v}")));
            }
        }
        Ok(())
    }
}

fn perturb(rec: &TaskRecording, repeat_id: u8, noise: &NoiseConfig, rng: &mut ChaCha8Rng) -> Result<TaskRecording> {
    let position = Normal::new(0.0, noise.position_sigma.max(f64::MIN_POSITIVE))
        .map_err(|e| Error::InvalidValue(e.to_string()))?;
    let angle = Normal::new(0.0, noise.rotation_sigma.max(f64::MIN_POSITIVE))
        .map_err(|e| Error::InvalidValue(e.to_string()))?;
    let bodies = rec
        .bodies()
        .iter()
        .map(|body| {
            let offset = if noise.position_sigma > 0.0 {
                Vector3::new(position.sample(rng), position.sample(rng), position.sample(rng))
            } else {
                Vector3::zeros()
            };
            let twist = if noise.rotation_sigma > 0.0 {
                let axis: [f64; 3] = UnitSphere.sample(rng);
                Some(UnitQuaternion::from_axis_angle(
                    &Unit::new_normalize(Vector3::from(axis)),
                    angle.sample(rng),
                ))
            } else {
                None
            };
            let samples = body
                .samples
                .iter()
                .map(|s| {
                    let orientation = twist.map_or(s.orientation, |d| s.orientation * d);
                    PoseSample::new(s.t, s.position + offset, orientation)
                })
                .collect();
            Body::new(body.name.clone(), samples)
        })
        .collect();
    let mut meta = rec.metadata().clone();
    meta.repeat_id = repeat_id;
    TaskRecording::new(
        meta,
        bodies,
        rec.wrench().to_vec(),
        rec.joint_torques().to_vec(),
        rec.fingers().to_vec(),
    )
}

/// `n` perturbed copies of `base`, numbered 1..=n, deterministic in `seed`.
pub fn generate_repeat_recordings(
    base: &TaskRecording,
    noise: &NoiseConfig,
    n: usize,
    seed: u64,
) -> Result<Vec<TaskRecording>> {
    noise.validate()?;
    if n < 2 || n > u8::MAX as usize {
        return Err(Error::InvalidValue(format!("repeat count {n} outside 2..=255")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (1..=n)
        .map(|i| {
            // each repeat draws from its own stream so one body layout change
            // does not reshuffle the others
            let mut repeat_rng = ChaCha8Rng::seed_from_u64(rng.random());
            perturb(base, i as u8, noise, &mut repeat_rng)
        })
        .collect()
}

/// The standard 20-repeat set.
pub fn generate_repeats(base: &TaskRecording, noise: &NoiseConfig, seed: u64) -> Result<RepeatSet> {
    let repeats = generate_repeat_recordings(base, noise, REPEATS_PER_TASK, seed)?;
    RepeatSet::new(base.metadata().task_id, repeats)
}
