#![allow(dead_code)]

pub mod oracles;

use nalgebra::{Quaternion, UnitQuaternion, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use simgap_core::ingest::format_sig9;
use simgap_core::trajectory::{
    Body, FingerSample, JointTorqueSample, Metadata, PoseSample, Source, TaskRecording, WrenchSample,
};

pub const DT: f64 = 0.1;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn normal(rng: &mut ChaCha8Rng) -> f64 {
    rng.sample(StandardNormal)
}

/// Uniform on SO(3): a normalized 4D Gaussian.
pub fn random_quaternion(rng: &mut ChaCha8Rng) -> UnitQuaternion<f64> {
    loop {
        let q = Quaternion::new(normal(rng), normal(rng), normal(rng), normal(rng));
        if q.norm() > 1e-3 {
            return UnitQuaternion::from_quaternion(q);
        }
    }
}

pub fn random_vector(rng: &mut ChaCha8Rng, scale: f64) -> Vector3<f64> {
    Vector3::new(normal(rng), normal(rng), normal(rng)) * scale
}

pub fn time(k: usize) -> f64 {
    k as f64 / 10.0
}

pub fn random_poses(rng: &mut ChaCha8Rng, n: usize) -> Vec<PoseSample> {
    (0..n)
        .map(|k| PoseSample::new(time(k), random_vector(rng, 0.5), random_quaternion(rng)))
        .collect()
}

pub fn random_torques(rng: &mut ChaCha8Rng, n: usize) -> Vec<JointTorqueSample> {
    (0..n)
        .map(|k| JointTorqueSample {
            t: time(k),
            torques: std::array::from_fn(|_| normal(rng) * 5.0),
        })
        .collect()
}

pub fn random_wrench(rng: &mut ChaCha8Rng, n: usize) -> Vec<WrenchSample> {
    (0..n)
        .map(|k| WrenchSample {
            t: time(k),
            force: random_vector(rng, 10.0),
            moment: random_vector(rng, 0.5),
        })
        .collect()
}

pub fn zero_fingers(n: usize) -> Vec<FingerSample> {
    (0..n)
        .map(|k| FingerSample {
            t: time(k),
            positions: [0.0; 3],
        })
        .collect()
}

pub fn metadata(task_id: u8, repeat_id: u8) -> Metadata {
    Metadata {
        task_id,
        repeat_id,
        timestamp: "2019-06-01T12:00:00Z".into(),
        temperature: Some(21.0),
        humidity: None,
        description: "test".into(),
        source: Source::Dataset,
    }
}

pub fn random_recording(rng: &mut ChaCha8Rng, task_id: u8, repeat_id: u8, n: usize, object: bool) -> TaskRecording {
    let mut bodies = vec![Body::new("ee", random_poses(rng, n))];
    if object {
        bodies.push(Body::new("obj", random_poses(rng, n)));
    }
    TaskRecording::new(
        metadata(task_id, repeat_id),
        bodies,
        random_wrench(rng, n),
        random_torques(rng, n),
        zero_fingers(n),
    )
    .unwrap()
}

/// The value the writer would emit, read back.
pub fn q9(x: f64) -> f64 {
    format_sig9(x).parse().unwrap()
}

pub fn q9v(v: Vector3<f64>) -> Vector3<f64> {
    v.map(q9)
}

pub fn quantize(rec: &TaskRecording, meta: Metadata) -> TaskRecording {
    let bodies = rec
        .bodies()
        .iter()
        .map(|b| {
            let samples = b
                .samples
                .iter()
                .map(|s| {
                    let q = s.orientation.quaternion();
                    let q = Quaternion::new(q9(q.w), q9(q.i), q9(q.j), q9(q.k));
                    PoseSample::new(q9(s.t), q9v(s.position), UnitQuaternion::new_unchecked(q))
                })
                .collect();
            Body::new(b.name.clone(), samples)
        })
        .collect();
    let wrench = rec
        .wrench()
        .iter()
        .map(|w| WrenchSample {
            t: q9(w.t),
            force: q9v(w.force),
            moment: q9v(w.moment),
        })
        .collect();
    let torques = rec
        .joint_torques()
        .iter()
        .map(|j| JointTorqueSample {
            t: q9(j.t),
            torques: j.torques.map(q9),
        })
        .collect();
    let fingers = rec
        .fingers()
        .iter()
        .map(|f| FingerSample {
            t: q9(f.t),
            positions: f.positions.map(q9),
        })
        .collect();
    TaskRecording::new(meta, bodies, wrench, torques, fingers).unwrap()
}
