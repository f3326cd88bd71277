//! Straight-loop reimplementations used as independent references.

#![allow(clippy::needless_range_loop)]

use nalgebra::{DVector, Matrix3};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use simgap_core::trajectory::{JointTorqueSample, PoseSample, WrenchSample};

use super::*;

pub fn step(s: &[PoseSample]) -> f64 {
    (s[s.len() - 1].t - s[0].t) / (s.len() - 1) as f64
}

pub fn oracle_speeds(s: &[PoseSample]) -> Vec<f64> {
    let n = s.len();
    let dt = step(s);
    let mut out = vec![0.0; n];
    for k in 0..n {
        let j = if k + 1 < n { k } else { n - 2 };
        let dx = s[j + 1].position[0] - s[j].position[0];
        let dy = s[j + 1].position[1] - s[j].position[1];
        let dz = s[j + 1].position[2] - s[j].position[2];
        out[k] = (dx * dx + dy * dy + dz * dz).sqrt() / dt;
    }
    out
}

pub fn oracle_rates(s: &[PoseSample]) -> Vec<f64> {
    let v = oracle_speeds(s);
    let n = v.len();
    let dt = step(s);
    let mut out = vec![0.0; n];
    for k in 0..n {
        let j = if k + 1 < n { k } else { n - 2 };
        out[k] = (v[j + 1] - v[j]) / dt;
    }
    out
}

pub fn oracle_euclidean(d: &[PoseSample], s: &[PoseSample]) -> f64 {
    let mut total = 0.0;
    for k in 0..d.len() {
        let mut sq = 0.0;
        for i in 0..3 {
            sq += (d[k].position[i] - s[k].position[i]).powi(2);
        }
        total += sq.sqrt();
    }
    total / d.len() as f64
}

pub fn wxyz(p: &PoseSample) -> [f64; 4] {
    let q = p.orientation.quaternion();
    [q.w, q.i, q.j, q.k]
}

/// Half the relative rotation angle.
pub fn oracle_rotation(d: &[PoseSample], s: &[PoseSample]) -> f64 {
    let mut total = 0.0;
    for k in 0..d.len() {
        total += 0.5 * relative_angle(wxyz(&d[k]), wxyz(&s[k]));
    }
    total / d.len() as f64
}

/// Relative rotation angle from the quaternion `conj(a) * b`.
pub fn relative_angle(a: [f64; 4], b: [f64; 4]) -> f64 {
    let [aw, ax, ay, az] = a;
    let [bw, bx, by, bz] = b;
    let (aw, ax, ay, az) = (aw, -ax, -ay, -az);
    let w = aw * bw - ax * bx - ay * by - az * bz;
    let x = aw * bx + ax * bw + ay * bz - az * by;
    let y = aw * by - ax * bz + ay * bw + az * bx;
    let z = aw * bz + ax * by - ay * bx + az * bw;
    2.0 * (x * x + y * y + z * z).sqrt().atan2(w.abs())
}

pub fn oracle_pose(d: &[PoseSample], s: &[PoseSample], r: f64) -> f64 {
    let mut total = 0.0;
    for k in 0..d.len() {
        let angle = relative_angle(wxyz(&d[k]), wxyz(&s[k]));
        let mut sq = 0.0;
        for i in 0..3 {
            sq += (s[k].position[i] - d[k].position[i]).powi(2);
        }
        total += (angle * angle + r * sq).sqrt();
    }
    total / d.len() as f64
}

pub fn oracle_torque(d: &[JointTorqueSample], s: &[JointTorqueSample]) -> (f64, f64, f64) {
    let mut lo = f64::INFINITY;
    let mut hi = f64::NEG_INFINITY;
    let mut diff = 0.0;
    for k in 0..d.len() {
        let mut td = 0.0;
        let mut ts = 0.0;
        for j in 0..6 {
            td += d[k].torques[j].abs();
            ts += s[k].torques[j].abs();
        }
        lo = lo.min(ts);
        hi = hi.max(ts);
        diff += td - ts;
    }
    (lo, hi, diff / d.len() as f64)
}

pub fn oracle_wrench(d: &[WrenchSample], s: &[WrenchSample]) -> (f64, f64, f64, f64) {
    let mut fmax = f64::NEG_INFINITY;
    let mut mmax = f64::NEG_INFINITY;
    let mut ferr = 0.0;
    let mut merr = 0.0;
    for k in 0..d.len() {
        let fs = s[k].force[0] + s[k].force[1] + s[k].force[2];
        let ms = s[k].moment[0] + s[k].moment[1] + s[k].moment[2];
        let fd = d[k].force[0] + d[k].force[1] + d[k].force[2];
        let md = d[k].moment[0] + d[k].moment[1] + d[k].moment[2];
        fmax = fmax.max(fs);
        mmax = mmax.max(ms);
        ferr += fd - fs;
        merr += md - ms;
    }
    let n = d.len() as f64;
    (fmax, ferr / n, mmax, merr / n)
}

/// First and last index of qualifying runs of at least `window` samples.
pub fn oracle_window(speeds: &[f64], threshold: f64, window: usize) -> Option<(usize, usize)> {
    let mut runs = Vec::new();
    let mut k = 0;
    while k < speeds.len() {
        if speeds[k] >= threshold {
            let start = k;
            while k < speeds.len() && speeds[k] >= threshold {
                k += 1;
            }
            if k - start >= window {
                runs.push((start, k - 1));
            }
        } else {
            k += 1;
        }
    }
    Some((runs.first()?.0, runs.last()?.1))
}

/// Object series with static stretches so that the moving window is
/// nontrivial: a random walk whose steps are zeroed in random blocks.
pub fn object_series(rng: &mut ChaCha8Rng, n: usize) -> Vec<PoseSample> {
    let mut p = random_vector(rng, 0.2);
    let q = random_quaternion(rng);
    let mut out = Vec::with_capacity(n);
    let mut moving = false;
    for k in 0..n {
        if rng.random_bool(0.15) {
            moving = !moving;
        }
        out.push(PoseSample::new(time(k), p, q));
        if moving {
            p += random_vector(rng, 0.01);
        } else if rng.random_bool(0.3) {
            p += random_vector(rng, 1e-5);
        }
    }
    out
}

pub fn correlated_samples(rng: &mut ChaCha8Rng, n: usize) -> Vec<DVector<f64>> {
    let mix = Matrix3::from_fn(|_, _| normal(rng));
    let centre = random_vector(rng, 2.0);
    (0..n)
        .map(|_| {
            let z = random_vector(rng, 1.0);
            DVector::from_column_slice((centre + mix * z).as_slice())
        })
        .collect()
}

/// Mean, (n - 1) covariance and the cofactor inverse, all by hand.
pub fn oracle_distance(samples: &[DVector<f64>], x: &DVector<f64>) -> f64 {
    let n = samples.len() as f64;
    let mut mean = [0.0; 3];
    for s in samples {
        for i in 0..3 {
            mean[i] += s[i] / n;
        }
    }
    let mut c = [[0.0; 3]; 3];
    for s in samples {
        for i in 0..3 {
            for j in 0..3 {
                c[i][j] += (s[i] - mean[i]) * (s[j] - mean[j]) / (n - 1.0);
            }
        }
    }
    let cof = |i: usize, j: usize| {
        let r: Vec<usize> = (0..3).filter(|&k| k != i).collect();
        let q: Vec<usize> = (0..3).filter(|&k| k != j).collect();
        let minor = c[r[0]][q[0]] * c[r[1]][q[1]] - c[r[0]][q[1]] * c[r[1]][q[0]];
        if (i + j).is_multiple_of(2) {
            minor
        } else {
            -minor
        }
    };
    let det = c[0][0] * cof(0, 0) + c[0][1] * cof(0, 1) + c[0][2] * cof(0, 2);
    let mut inv = [[0.0; 3]; 3];
    for i in 0..3 {
        for j in 0..3 {
            inv[i][j] = cof(j, i) / det;
        }
    }
    let d: Vec<f64> = (0..3).map(|i| x[i] - mean[i]).collect();
    let mut q = 0.0;
    for i in 0..3 {
        for j in 0..3 {
            q += d[i] * inv[i][j] * d[j];
        }
    }
    q.sqrt()
}
