mod common;

use std::f64::consts::{PI, TAU};

use common::oracles::*;
use common::*;
use nalgebra::{DMatrix, DVector, Vector3};
use proptest::prelude::*;
use simgap_core::distributions::{
    circular_mean, euler_mahalanobis, euler_mean, fit_euler_normal, fit_multivariate_normal, mahalanobis,
    quaternion_to_euler, EulerTriple, GaussianFit,
};
use simgap_core::kinematics::{generate_repeats, NoiseConfig};
use statrs::distribution::{ChiSquared, ContinuousCDF};

#[test]
fn mahalanobis_matches_explicit_inverse() {
    for seed in 0..100 {
        let mut r = rng(seed);
        let samples = correlated_samples(&mut r, 20);
        let fit = fit_multivariate_normal(&samples).unwrap();
        assert!(fit.regularization().is_none());
        let x = DVector::from_column_slice(random_vector(&mut r, 3.0).as_slice());
        let got = mahalanobis(&fit, &x).unwrap();
        let want = oracle_distance(&samples, &x);
        assert!(
            (got - want).abs() <= 1e-8 * want.max(1.0),
            "seed {seed}: {got} vs {want}"
        );
        assert_eq!(mahalanobis(&fit, fit.mean()).unwrap(), 0.0);
    }
}

#[test]
fn unit_step_under_identity_covariance() {
    let fit = GaussianFit::new(DVector::zeros(3), DMatrix::identity(3, 3)).unwrap();
    let d = fit.mahalanobis(&DVector::from_column_slice(&[0.0, 1.0, 0.0])).unwrap();
    assert_eq!(d, 1.0);
}

#[test]
fn identical_samples_are_regularized_and_recorded() {
    let samples = vec![DVector::from_column_slice(&[0.1, 0.2, 0.3]); 20];
    let fit = fit_multivariate_normal(&samples).unwrap();
    assert!(fit.regularization().unwrap() > 0.0);
    assert_eq!(fit.mahalanobis(fit.mean()).unwrap(), 0.0);
    // the mean of twenty copies may differ from each copy in the last ulp
    assert!(fit.mahalanobis(&samples[0]).unwrap() < 1e-9);
}

fn affine(samples: &[DVector<f64>], a: &DMatrix<f64>, b: &DVector<f64>) -> Vec<DVector<f64>> {
    samples.iter().map(|s| a * s + b).collect()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn distance_is_affine_invariant(seed in any::<u64>()) {
        let mut r = rng(seed);
        let samples = correlated_samples(&mut r, 20);
        let a = DMatrix::from_fn(3, 3, |_, _| normal(&mut r));
        prop_assume!(a.determinant().abs() > 0.1);
        let b = DVector::from_fn(3, |_, _| normal(&mut r) * 5.0);
        let x = DVector::from_column_slice(random_vector(&mut r, 3.0).as_slice());
        let d0 = fit_multivariate_normal(&samples).unwrap().mahalanobis(&x).unwrap();
        let d1 = fit_multivariate_normal(&affine(&samples, &a, &b)).unwrap().mahalanobis(&(&a * &x + &b)).unwrap();
        prop_assert!((d0 - d1).abs() <= 1e-8 * d0.max(1.0), "{} vs {}", d0, d1);
        prop_assert!(d0 >= 0.0);
    }

    #[test]
    fn covariance_ignores_translation(seed in any::<u64>()) {
        let mut r = rng(seed);
        let samples = correlated_samples(&mut r, 20);
        let shift = DVector::from_fn(3, |_, _| normal(&mut r) * 10.0);
        let moved: Vec<DVector<f64>> = samples.iter().map(|s| s + &shift).collect();
        let c0 = fit_multivariate_normal(&samples).unwrap().covariance().clone();
        let c1 = fit_multivariate_normal(&moved).unwrap().covariance().clone();
        prop_assert!((c0 - c1).amax() < 1e-10);
    }

    #[test]
    fn euler_round_trip(seed in any::<u64>()) {
        let q = random_quaternion(&mut rng(seed));
        let e = quaternion_to_euler(q.quaternion()).unwrap();
        for a in e.to_array() {
            prop_assert!((-PI..PI).contains(&a));
        }
        prop_assert!(e.to_rotation().angle_to(&q) < 1e-9);
    }

    #[test]
    fn yaw_plus_full_turn_changes_nothing(seed in any::<u64>(), which in 0usize..20) {
        let mut r = rng(seed);
        let centre = random_vector(&mut r, 1.0);
        let triples: Vec<EulerTriple> = (0..20)
            .map(|_| {
                let v = centre + random_vector(&mut r, 0.05);
                EulerTriple { roll: v.x, pitch: v.y, yaw: v.z }
            })
            .collect();
        let mut turned = triples.clone();
        turned[which].yaw += TAU;
        let f0 = fit_euler_normal(&triples).unwrap();
        let f1 = fit_euler_normal(&turned).unwrap();
        prop_assert!((f0.mean() - f1.mean()).amax() < 1e-12);
        prop_assert!((f0.covariance() - f1.covariance()).amax() < 1e-12);
        let q = euler_mean(&triples).unwrap();
        let d0 = euler_mahalanobis(&f0, &q).unwrap();
        let d1 = euler_mahalanobis(&f1, &q.map(|v| v + TAU)).unwrap();
        prop_assert!((d0 - d1).abs() < 1e-9);
    }
}

#[test]
fn circular_mean_across_the_seam() {
    let m = circular_mean([PI - 0.1, -PI + 0.1, PI - 0.05, -PI + 0.05]);
    assert!((m.abs() - PI).abs() < 1e-12);
    assert!((circular_mean([0.1, 0.3]) - 0.2).abs() < 1e-12);
}

fn failure_probability(rel: f64, n: usize) -> f64 {
    // (n - 1) s² / σ² ~ χ²(n - 1); the estimate misses by more than `rel`
    // when s/σ falls outside [1 - rel, 1 + rel].
    let df = (n - 1) as f64;
    let chi = ChiSquared::new(df).unwrap();
    chi.cdf(df * (1.0 - rel).powi(2)) + (1.0 - chi.cdf(df * (1.0 + rel).powi(2)))
}

fn recovered_sigmas(seed: u64, sigma: f64) -> Vector3<f64> {
    let base = random_recording(&mut rng(99), 3, 1, 10, true);
    let noise = NoiseConfig {
        position_sigma: sigma,
        rotation_sigma: 0.0,
    };
    let set = generate_repeats(&base, &noise, seed).unwrap();
    let finals: Vec<DVector<f64>> = set
        .repeats()
        .iter()
        .map(|r| DVector::from_column_slice(r.object().unwrap().samples.last().unwrap().position.as_slice()))
        .collect();
    let fit = fit_multivariate_normal(&finals).unwrap();
    Vector3::from_fn(|i, _| fit.covariance()[(i, i)].sqrt())
}

#[test]
fn position_noise_is_recovered_within_thirty_percent() {
    let sigma = 0.01;
    let s = recovered_sigmas(0, sigma);
    for i in 0..3 {
        assert!((s[i] / sigma - 1.0).abs() < 0.3, "axis {i}: {}", s[i]);
    }
}

#[test]
fn miss_rate_matches_chi_squared() {
    let sigma = 0.01;
    let p = failure_probability(0.3, 20);
    let seeds = 300u64;
    let trials = (seeds * 3) as f64;
    let misses = (0..seeds)
        .flat_map(|seed| {
            let s = recovered_sigmas(seed, sigma);
            (0..3).map(move |i| (s[i] / sigma - 1.0).abs() >= 0.3)
        })
        .filter(|&m| m)
        .count() as f64;
    let expected = p * trials;
    let sd = (trials * p * (1.0 - p)).sqrt();
    assert!(
        (misses - expected).abs() < 4.0 * sd,
        "misses {misses}, expected {expected:.1} ± {sd:.1}"
    );
}
