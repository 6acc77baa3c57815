use std::f64::consts::PI;
use std::fs;

use heatlab::spaces::{
    build_cutoff, make_model_sample, model_ball_volume, model_boundary_measure, volume_profile,
    SampledSpace, SpaceDescriptor, SpaceKind,
};
use heatlab::Error;
use proptest::prelude::*;

fn rel(a: f64, b: f64) -> f64 {
    (a - b).abs() / b.abs()
}

#[test]
fn save_and_load_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let desc = SpaceDescriptor::euclidean(2).with_truncation(3.0);
    let space = make_model_sample(&desc, 200, 7).unwrap();
    space.save(dir.path()).unwrap();
    for name in ["points.csv", "distances.bin", "weights.csv", "meta.json"] {
        assert!(dir.path().join(name).is_file(), "{name} missing");
    }
    let back = SampledSpace::load(dir.path()).unwrap();
    assert_eq!(back.len(), space.len());
    assert_eq!(back.distances(), space.distances());
    assert_eq!(back.weights(), space.weights());
    assert_eq!(back.core_mask(), space.core_mask());
    assert_eq!(back.descriptor(), space.descriptor());
    assert_eq!(back.content_hash(), space.content_hash());

    // saving twice writes identical bytes
    let again = tempfile::tempdir().unwrap();
    back.save(again.path()).unwrap();
    for name in ["points.csv", "distances.bin", "weights.csv", "meta.json"] {
        assert_eq!(
            fs::read(dir.path().join(name)).unwrap(),
            fs::read(again.path().join(name)).unwrap(),
            "{name} differs"
        );
    }
}

#[test]
fn load_rejects_missing_and_corrupt_files() {
    let dir = tempfile::tempdir().unwrap();
    assert!(SampledSpace::load(dir.path()).is_err());
    let space = make_model_sample(&SpaceDescriptor::circle(2.0 * PI), 32, 0).unwrap();
    space.save(dir.path()).unwrap();
    let bin = dir.path().join("distances.bin");
    let mut bytes = fs::read(&bin).unwrap();
    bytes.truncate(bytes.len() - 8);
    fs::write(&bin, bytes).unwrap();
    assert!(SampledSpace::load(dir.path()).is_err());
}

#[test]
fn content_hash_tracks_the_data() {
    let a = make_model_sample(&SpaceDescriptor::circle(2.0 * PI), 64, 0).unwrap();
    let b = make_model_sample(&SpaceDescriptor::circle(2.0 * PI), 64, 0).unwrap();
    let c = make_model_sample(&SpaceDescriptor::circle(2.0 * PI), 65, 0).unwrap();
    assert_eq!(a.content_hash(), b.content_hash());
    assert_ne!(a.content_hash(), c.content_hash());
}

#[test]
fn from_parts_validates() {
    let d = vec![0.0, 1.0, 1.0, 0.0];
    let ok = SampledSpace::from_parts(
        d.clone(),
        vec![0.5, 0.5],
        vec![true, true],
        vec![f64::INFINITY; 2],
        None,
        SpaceDescriptor::sampled(1.0, 0.0),
    );
    assert!(ok.is_ok());
    let bad_weight = SampledSpace::from_parts(
        d.clone(),
        vec![0.5, 0.0],
        vec![true, true],
        vec![f64::INFINITY; 2],
        None,
        SpaceDescriptor::sampled(1.0, 0.0),
    );
    assert!(matches!(bad_weight, Err(Error::InvalidSpace(_))));
    let asymmetric = SampledSpace::from_parts(
        vec![0.0, 1.0, 2.0, 0.0],
        vec![0.5, 0.5],
        vec![true, true],
        vec![f64::INFINITY; 2],
        None,
        SpaceDescriptor::sampled(1.0, 0.0),
    );
    assert!(asymmetric.is_err());
}

#[test]
fn samples_carry_the_model_measure() {
    // 30 x 30 lattice on [-4, 4]^2: 900 cells of side 8/29
    let desc = SpaceDescriptor::euclidean(2).with_truncation(4.0);
    let s = make_model_sample(&desc, 900, 0).unwrap();
    assert_eq!(s.len(), 900);
    assert!(rel(s.total_mass(), 900.0 * (8.0f64 / 29.0).powi(2)) < 1e-12, "{}", s.total_mass());
    let c = make_model_sample(&SpaceDescriptor::circle(2.0 * PI), 100, 0).unwrap();
    assert!(rel(c.total_mass(), 2.0 * PI) < 1e-12);
    assert!(c.is_untruncated());
    assert!(rel(c.diameter(), PI) < 0.01);
    assert_eq!(c.descriptor().kind, SpaceKind::Circle);
}

#[test]
fn counting_volume_approaches_the_model() {
    let desc = SpaceDescriptor::euclidean(1).with_truncation(10.0);
    let s = make_model_sample(&desc, 801, 0).unwrap();
    let center = (0..s.len())
        .min_by(|&a, &b| s.boundary_distance()[b].total_cmp(&s.boundary_distance()[a]))
        .unwrap();
    for r in [1.0, 3.0, 6.0] {
        let v = s.ball_volume(center, r);
        assert!(rel(v, model_ball_volume(&desc, r).unwrap()) < 0.02, "r = {r}: {v}");
    }
    // line boundary measure is the two endpoints
    assert!((model_boundary_measure(&desc, 2.0).unwrap() - 2.0).abs() < 1e-12);
    let r_grid: Vec<f64> = (1..=20).map(|i| 0.3 * i as f64).collect();
    let profile = volume_profile(&s, center, &r_grid, 0.2).unwrap();
    assert!(profile.s.iter().zip(&profile.trusted).all(|(v, t)| !t || (v - 2.0).abs() < 0.2));
}

#[test]
fn hyperbolic_descriptor_has_fixed_curvature() {
    let h = SpaceDescriptor::hyperbolic3();
    assert_eq!(h.dimension, 3.0);
    assert_eq!(h.curvature, -2.0);
    assert!(rel(model_ball_volume(&h, 1.0).unwrap(), PI * (2f64.sinh() - 2.0)) < 1e-12);
}

#[test]
fn cutoff_is_lipschitz() {
    let desc = SpaceDescriptor::euclidean(1).with_truncation(5.0);
    let s = make_model_sample(&desc, 201, 0).unwrap();
    let set: Vec<usize> = (0..s.len()).filter(|&i| s.coords().unwrap()[i][0].abs() < 0.5).collect();
    let eps = 1.0;
    let chi = build_cutoff(&s, &set, eps).unwrap();
    for i in 0..s.len() {
        for j in 0..s.len() {
            let d = s.dist(i, j);
            if d > 0.0 {
                assert!((chi[i] - chi[j]).abs() <= 2.0 / eps * d + 1e-12);
            }
        }
    }
    assert!(set.iter().all(|&i| chi[i] == 1.0));
    assert!(build_cutoff(&s, &set, 0.01).is_err());
    assert!(matches!(build_cutoff(&s, &[], 1.0), Err(Error::EmptySet)));
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn sampled_metrics_are_metrics(seed in 0u64..1000, n in 20usize..60) {
        let s = make_model_sample(&SpaceDescriptor::circle(2.0 * PI), n, seed).unwrap();
        for i in 0..n {
            prop_assert_eq!(s.dist(i, i), 0.0);
            for j in 0..n {
                prop_assert_eq!(s.dist(i, j), s.dist(j, i));
                for k in 0..n {
                    prop_assert!(s.dist(i, k) <= s.dist(i, j) + s.dist(j, k) + 1e-12);
                }
            }
        }
    }

    #[test]
    fn ball_volume_is_monotone(r in 0.0f64..4.0, dr in 0.0f64..1.0, c in 0usize..50) {
        let s = make_model_sample(&SpaceDescriptor::circle(2.0 * PI), 50, 0).unwrap();
        prop_assert!(s.ball_volume(c, r) <= s.ball_volume(c, r + dr));
        prop_assert!(s.ball_volume(c, 10.0) <= s.total_mass() + 1e-12);
    }
}
