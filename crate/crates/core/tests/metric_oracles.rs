//! Every metric kernel against a plain index-loop reimplementation.

mod common;

use common::oracles::*;
use common::*;
use simgap_core::metrics::{
    acceleration_stats_arm, acceleration_stats_object, euclidean_error, moving_time, pose_error, rotation_error,
    torque_stats, velocity_stats_arm, velocity_stats_object, wrench_stats, PoseMetricConfig, StaticnessConfig,
};

const TOL: f64 = 1e-12;
const PAIRS: u64 = 100;
const N: usize = 50;

fn close(a: f64, b: f64, what: &str) {
    assert!((a - b).abs() <= TOL, "{what}: {a} vs oracle {b}");
}

#[test]
fn arm_kernels_match_loop_oracles() {
    let cfg = PoseMetricConfig::default();
    for seed in 0..PAIRS {
        let mut rng = rng(seed);
        let d = random_poses(&mut rng, N);
        let s = random_poses(&mut rng, N);

        close(euclidean_error(&d, &s).unwrap(), oracle_euclidean(&d, &s), "euclidean");
        close(rotation_error(&d, &s).unwrap(), oracle_rotation(&d, &s), "rotation");
        close(pose_error(&d, &s, &cfg).unwrap(), oracle_pose(&d, &s, cfg.r), "pose");

        let (vd, vs) = (oracle_speeds(&d), oracle_speeds(&s));
        let v = velocity_stats_arm(&d, &s).unwrap();
        close(v.velocity_max, vs.iter().copied().fold(0.0, f64::max), "velocity_max");
        let verr: f64 = (0..N).map(|k| vd[k] - vs[k]).sum::<f64>() / N as f64;
        close(v.velocity_error, verr, "velocity_error");

        let (ad, as_) = (oracle_rates(&d), oracle_rates(&s));
        let a = acceleration_stats_arm(&d, &s).unwrap();
        let mut amax = 0.0f64;
        let mut dmax = 0.0f64;
        for &x in &as_ {
            amax = amax.max(x);
            dmax = dmax.max(-x);
        }
        close(a.accel_max, amax, "accel_max");
        close(a.decel_max, dmax, "decel_max");
        let aerr: f64 = (0..N).map(|k| ad[k] - as_[k]).sum::<f64>() / N as f64;
        close(a.accel_error, aerr, "accel_error");

        let (td, ts) = (random_torques(&mut rng, N), random_torques(&mut rng, N));
        let t = torque_stats(&td, &ts).unwrap();
        let (lo, hi, terr) = oracle_torque(&td, &ts);
        close(t.torque_min, lo, "torque_min");
        close(t.torque_max, hi, "torque_max");
        close(t.torque_error, terr, "torque_error");

        let (wd, ws) = (random_wrench(&mut rng, N), random_wrench(&mut rng, N));
        let w = wrench_stats(&wd, &ws).unwrap();
        let (fmax, ferr, mmax, merr) = oracle_wrench(&wd, &ws);
        close(w.force_max, fmax, "force_max");
        close(w.force_error, ferr, "force_error");
        close(w.moment_max, mmax, "moment_max");
        close(w.moment_error, merr, "moment_error");
    }
}

#[test]
fn object_kernels_match_loop_oracles() {
    let cfg = StaticnessConfig::default();
    let mut with_window = 0;
    for seed in 0..PAIRS {
        let mut rng = rng(1000 + seed);
        let obj = object_series(&mut rng, N);
        let speeds = oracle_speeds(&obj);
        let rates = oracle_rates(&obj);

        let m = moving_time(&obj, &cfg).unwrap();
        let expected = oracle_window(&speeds, cfg.speed_threshold, cfg.window);
        match expected {
            Some((a, b)) => {
                with_window += 1;
                let w = m.window.expect("window");
                assert_eq!((w.start_index, w.end_index), (a, b), "seed {seed}");
                close(m.moving_time, obj[b].t - obj[a].t, "moving_time");
            }
            None => {
                assert!(m.window.is_none());
                assert_eq!(m.moving_time, 0.0);
            }
        }

        let v = velocity_stats_object(&obj, m.window.as_ref()).unwrap();
        close(
            v.velocity_max,
            speeds.iter().copied().fold(0.0, f64::max),
            "obj_velocity_max",
        );
        let a = acceleration_stats_object(&obj, m.window.as_ref()).unwrap();
        let (mut amax, mut dmax) = (0.0f64, 0.0f64);
        for &x in &rates {
            amax = amax.max(x);
            dmax = dmax.max(-x);
        }
        close(a.accel_max, amax, "obj_accel_max");
        close(a.decel_max, dmax, "obj_decel_max");
        match expected {
            Some((i, j)) => {
                let len = (j - i + 1) as f64;
                let vavg: f64 = speeds[i..=j].iter().sum::<f64>() / len;
                let aavg: f64 = rates[i..=j].iter().map(|x| x.abs()).sum::<f64>() / len;
                close(v.velocity_avg, vavg, "obj_velocity_avg");
                close(a.accel_avg, aavg, "obj_accel_avg");
            }
            None => {
                assert_eq!(v.velocity_avg, 0.0);
                assert_eq!(a.accel_avg, 0.0);
            }
        }
    }
    assert!(with_window > 50, "only {with_window} series moved");
}
