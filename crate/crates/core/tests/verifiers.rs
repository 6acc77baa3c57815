use std::f64::consts::PI;
use std::sync::{Arc, OnceLock};

use heatlab::analytic::AnalyticKernel;
use heatlab::spaces::{make_model_sample, SpaceDescriptor, VolumeProfile};
use heatlab::spectral::{eigendecompose, Bandwidth, Generator, SpectralDecomposition};
use heatlab::verifiers::*;

fn rel(a: f64, b: f64) -> f64 {
    (a - b).abs() / b.abs()
}

fn circle128() -> &'static SpectralDecomposition {
    static DEC: OnceLock<SpectralDecomposition> = OnceLock::new();
    DEC.get_or_init(|| {
        let space = make_model_sample(&SpaceDescriptor::circle(2.0 * PI), 128, 0).unwrap();
        eigendecompose(&Generator::build(Arc::new(space), Bandwidth::Auto).unwrap()).unwrap()
    })
}

fn resolved(dec: &SpectralDecomposition) -> GridSpec {
    GridSpec::discrete(resolved_time(dec), 4.0)
}

fn source(kind: SpaceDescriptor) -> AnalyticSource {
    AnalyticSource::new(AnalyticKernel::new(kind).unwrap())
}

#[test]
fn margin_tracker_counts_and_scales() {
    let mut t = MarginTracker::new(0.01);
    assert_eq!(t.record(1.0, 2.0, &[]), 0.5);
    // within tolerance: not a violation, but the worst point
    assert!((t.record(1.005, 1.0, &[("x", 3.0)]) + 0.005 / 1.005).abs() < 1e-15);
    assert_eq!(t.violations, 0);
    t.record(2.0, 1.0, &[]);
    assert_eq!(t.violations, 1);
    assert_eq!(t.record(5.0, f64::INFINITY, &[]), 1.0);
    assert_eq!(t.record(f64::NAN, 1.0, &[]), f64::NEG_INFINITY);
    assert_eq!(t.violations, 2);
}

#[test]
fn fit_and_drift_helpers() {
    assert_eq!(fit_sup_ratio(&[1.0, 6.0, 2.0], &[1.0, 2.0, 1.0]).unwrap(), (3.0, 1));
    assert!(fit_sup_ratio(&[1.0], &[0.0]).is_err());
    assert!(fit_sup_ratio(&[], &[]).is_err());
    assert_eq!(drift(2.0, 2.0), 0.0);
    assert!((drift(2.0, 2.2) - 0.1).abs() < 1e-12);
}

#[test]
fn model_volumes() {
    for r in [0.1, 1.0, 3.0] {
        assert!(rel(model_volume(0.0, 3.0, r), 4.0 / 3.0 * PI * r.powi(3)) < 1e-14);
        // K = -(N-1): hyperbolic 3-space, pi (sinh 2r - 2r)
        let h = PI * ((2.0 * r).sinh() - 2.0 * r);
        assert!(rel(model_volume(-2.0, 3.0, r), h) < 1e-9, "r = {r}");
    }
    assert!(rel(large_time_limit(2.0), 0.25) < 1e-15);
    assert!(rel(large_time_limit(3.0), 1.0 / (6.0 * PI.sqrt())) < 1e-14);
    assert!(rel(k_coefficient(-1.0, 0.5), 1.0 / (1.0 - (-1.0f64).exp())) < 1e-14);
}

#[test]
fn harnack_factors() {
    // (t/s)^{N/2} e^{d^2 / 4(t-s)}
    let f = harnack_rhs_factor(0.0, 2.0, 1.5, 1.0, 3.0);
    assert!(rel(f, 3.0 * (2.25f64 / 8.0).exp()) < 1e-15);
    assert_eq!(harnack_rhs_factor_integrated(0.0, 2.0, 1.5, 1.0, 3.0), f);
    // the integrated K < 0 factor is the printed one times e^{-NK(t-s)/3} at d = 0
    let (k, n, s, t) = (-2.0, 3.0, 0.5, 1.5);
    let printed = harnack_rhs_factor(k, n, 0.0, s, t);
    let integrated = harnack_rhs_factor_integrated(k, n, 0.0, s, t);
    assert!(rel(integrated, printed * (-n * k * (t - s) / 3.0).exp()) < 1e-13);
}

#[test]
fn euclidean_li_yau_is_an_equality() {
    for n in 1..=3 {
        let r = check_li_yau(&source(SpaceDescriptor::euclidean(n)), &GridSpec::analytic()).unwrap();
        assert_eq!(r.status, Status::Pass);
        assert!(r.constants["max_scaled_residual"] < 1e-12);
    }
}

#[test]
fn hyperbolic_li_yau_holds() {
    let r = check_li_yau(&source(SpaceDescriptor::hyperbolic3()), &GridSpec::analytic()).unwrap();
    assert_eq!(r.status, Status::Pass, "{:?}", r.witness);
}

#[test]
fn gaussian_constants_at_the_diagonal() {
    // sup_d p_t(d) mu(B(sqrt t)) e^{d^2/((4+eps)t)} is attained at d = 0:
    // omega(N) (4 pi)^{-N/2}
    let grid = GridSpec::analytic();
    for n in 1..=3 {
        let fit = fit_gaussian_constants(&source(SpaceDescriptor::euclidean(n)), 0.5, &grid).unwrap();
        let diag = omega(n as f64) * (4.0 * PI).powf(-0.5 * n as f64);
        assert!(rel(fit.upper.c1, diag) < 1e-12, "N = {n}: {}", fit.upper.c1);
        assert!(rel(fit.lower.c1, 1.0 / diag) < 1e-12, "N = {n}: {}", fit.lower.c1);
        assert_eq!(fit.upper.d, 0.0);
    }
}

#[test]
fn gaussian_family_passes_on_models() {
    let grid = GridSpec::analytic();
    for desc in [SpaceDescriptor::euclidean(2), SpaceDescriptor::hyperbolic3()] {
        let s = source(desc);
        for r in [
            check_gaussian_bounds(&s, 0.5, &grid).unwrap(),
            check_gradient_bound(&s, 0.5, &grid).unwrap(),
            check_time_derivative(&s, 0.5, &grid).unwrap(),
            check_integrated_lower_bound(&s, 0.5, &grid).unwrap(),
        ] {
            assert_eq!(r.status, Status::Pass, "{} on {}: {:?}", r.name, r.space, r.notes);
        }
    }
}

#[test]
fn model_ball_mass_is_a_probability() {
    let e2 = SpaceDescriptor::euclidean(2);
    // centered disc: 1 - e^{-r^2/4t}
    let m = model_ball_mass(&e2, 1.0, 0.0, 1.5).unwrap();
    assert!(rel(m, 1.0 - (-1.5f64 * 1.5 / 4.0).exp()) < 1e-9);
    let far = model_ball_mass(&e2, 1.0, 3.0, 1.5).unwrap();
    assert!(far > 0.0 && far < m);
}

#[test]
fn harnack_on_flat_models() {
    let r = check_harnack(&AnalyticKernel::new(SpaceDescriptor::euclidean(1)).unwrap(), &GridSpec::analytic()).unwrap();
    assert_eq!(r.status, Status::Pass);
    assert!(rel(r.constants["instance_lhs"], (4.0 * PI).powf(-0.5)) < 1e-14);
    assert!(rel(r.constants["instance_rhs"], (4.0 * PI).powf(-0.5) * 0.125f64.exp()) < 1e-14);
}

#[test]
fn laplacian_comparison_is_sharp_on_models() {
    let r_grid: Vec<f64> = (1..=50).map(|i| 0.1 * i as f64).collect();
    let e3 = check_laplacian_comparison(&SpaceDescriptor::euclidean(3), &r_grid, 1e-12).unwrap();
    assert_eq!(e3.status, Status::Pass);
    // (N-1)/r with equality
    assert!(rel(e3.constants["laplacian_at_1"], 2.0) < 1e-14);
    assert!(rel(e3.constants["bound_at_1"], 2.0) < 1e-14);
    let h3 = check_laplacian_comparison(&SpaceDescriptor::hyperbolic3(), &r_grid, 1e-9).unwrap();
    assert!(rel(h3.constants["laplacian_at_1"], 2.0 / 1f64.tanh()) < 1e-14);
    assert!(h3.constants["laplacian_at_1"] < h3.constants["bound_at_1"]);
    assert!(check_laplacian_comparison(&SpaceDescriptor::euclidean(2), &[0.0], 1e-9).is_err());
}

#[test]
fn model_doubling_and_boundary() {
    let r_grid: Vec<f64> = (1..=30).map(|i| 0.1 * i as f64).collect();
    let e2 = SpaceDescriptor::euclidean(2);
    let r = check_doubling_poincare(Geometry::Model(&e2), &r_grid, 1e-9, 0).unwrap();
    assert_eq!(r.status, Status::Pass);
    let profile = VolumeProfile::analytic(&e2, &r_grid).unwrap();
    let b = check_boundary_calculus(&e2, &profile, &[], 1e-9).unwrap();
    assert_eq!(b.status, Status::Pass);
    assert!(rel(b.constants["theta"], PI) < 1e-12);
    let h3 = SpaceDescriptor::hyperbolic3();
    let profile = VolumeProfile::analytic(&h3, &r_grid).unwrap();
    assert_eq!(check_boundary_calculus(&h3, &profile, &[], 1e-9).unwrap().status, Status::HypothesisNotMet);
}

#[test]
fn caccioppoli_line_closed_form() {
    let sign = |x: f64| x.signum();
    let x_grid: Vec<f64> = (-200..=200).map(|i| 0.02 * i as f64).collect();
    let times = [0.25, 1.0, 4.0];
    let r = check_caccioppoli_line(&sign, &[0.0], &times, &x_grid, 1e-9).unwrap();
    assert_eq!(r.status, Status::Pass);
    for t in times {
        // d/dx H_t sign at 0 = 2 p_t(0) = (pi t)^{-1/2}
        let g = r.constants[&format!("gradient_sup_t={t}")];
        assert!(rel(g, (PI * t).powf(-0.5)) < 1e-10, "t = {t}: {g}");
        assert!(rel(r.constants[&format!("bound_t={t}")], (2.0 * t).powf(-0.5)) < 1e-15);
    }
}

#[test]
fn large_time_on_models() {
    let grid = GridSpec::analytic();
    let e2 = AnalyticKernel::new(SpaceDescriptor::euclidean(2)).unwrap();
    let r = check_large_time(LargeTimeInput::Analytic { kernel: &e2, d: 1.0 }, &grid.t_grid(), 1e-9).unwrap();
    assert_eq!(r.status, Status::Pass);
    // a(t) = e^{-1/4t} / 4
    assert!(rel(r.constants["final_a"], 0.25 * (-1.0f64 / 400.0).exp()) < 1e-13);
    let e1 = AnalyticKernel::new(SpaceDescriptor::euclidean(1)).unwrap();
    let r = check_large_time(LargeTimeInput::Analytic { kernel: &e1, d: 1.0 }, &grid.t_grid(), 1e-9).unwrap();
    assert_eq!(r.status, Status::HypothesisNotMet);
    assert!(check_large_time(LargeTimeInput::Analytic { kernel: &e2, d: 1.0 }, &[0.0], 1e-9).is_err());
}

#[test]
fn semigroup_axioms_on_models_and_samples() {
    let e2 = AnalyticKernel::new(SpaceDescriptor::euclidean(2)).unwrap();
    let r = check_semigroup_axioms_analytic(&e2, &[0.0, 0.0], &[1.0, 0.0], &[(0.5, 0.5), (0.25, 1.0)], 1e-9).unwrap();
    assert_eq!(r.status, Status::Pass, "{:?}", r.constants);
    let dec = circle128();
    let fs = sample_batch(dec.space(), Some(dec), 10, 3, &[BatchKind::Smooth, BatchKind::Step], false);
    let r = check_semigroup_axioms(dec, &[(0.5, 0.5), (0.25, 1.0)], &fs, &[2.0, 4.0, f64::INFINITY], 0.05).unwrap();
    assert_eq!(r.status, Status::Pass, "{:?}", r.constants);
    assert!(r.constants["max_mass_residual"] < 1e-8);
}

#[test]
fn discrete_li_yau_and_caccioppoli_on_the_circle() {
    let dec = circle128();
    let src = DiscreteSource::new(dec, None).unwrap();
    let r = check_li_yau(&src, &resolved(dec)).unwrap();
    assert_eq!(r.status, Status::Pass, "{:?}", r.witness);
    let fs = sample_batch(dec.space(), Some(dec), 20, 1, &[BatchKind::Smooth, BatchKind::Trig], false);
    let r = check_caccioppoli(dec, &fs, &[0.2, 1.0], &[2.0, 4.0], 0.05).unwrap();
    assert_eq!(r.status, Status::Pass);
}

#[test]
fn davies_gaffney_on_arcs() {
    let dec = circle128();
    let sets = arc_partition(dec.space(), 4).unwrap();
    assert_eq!(sets.iter().map(Vec::len).sum::<usize>(), 128);
    let input = DaviesGaffneyInput {
        sets,
        balls: ball_catalog(dec.space(), 3),
        t_list: vec![0.25, 1.0],
        functions_per_pair: 10,
        seed: 5,
    };
    let r = check_davies_gaffney(dec, &input, 0.0).unwrap();
    assert_eq!(r.status, Status::Pass, "{:?}", r.witness);
    assert!(r.constants["max_random_ratio_over_bound"] <= 1.0);
}

#[test]
fn riesz_identity_and_shift_rules() {
    let dec = circle128();
    let input = RieszInput {
        a: 0.0,
        a_min: None,
        p_list: vec![4.0],
        identity_batch: 20,
        batch: 20,
        seed: 0,
    };
    let r = check_riesz(&[dec], &input).unwrap();
    assert!(r.constants["max_identity_residual"] < 1e-10);
    let shifted = RieszInput { a: 1.5, ..input.clone() };
    let r = check_riesz(&[dec], &shifted).unwrap();
    assert!(r.constants["max_identity_residual"] < 1e-10);
    assert!(check_riesz(&[dec], &RieszInput { a: -1.0, ..input }).is_err());
}

#[test]
fn circle_routing() {
    let dec = circle128();
    let grid = resolved(dec);
    let r = check_large_time(LargeTimeInput::Discrete { dec, x: 0, y: 0 }, &grid.t_grid(), 0.05).unwrap();
    assert_eq!(r.status, Status::HypothesisNotMet);
    let c = check_compactness(CompactnessInput::Discrete(dec, 0), 1.0).unwrap();
    // trace = sum e^{-lambda_k}, close to sum_k e^{-k^2}
    let series: f64 = (-10..=10).map(|k: i32| (-(k * k) as f64).exp()).sum();
    assert!(rel(c.constants["trace"], series) < 0.01);
}

#[test]
fn status_serializes_in_snake_case() {
    assert_eq!(serde_json::to_string(&Status::HypothesisNotMet).unwrap(), "\"hypothesis_not_met\"");
    assert_eq!(Status::Untrusted.to_string(), "untrusted");
    let mut s = Sweep::new(&["a", "b"]);
    s.push(vec![0.1, 1.0 / 3.0]);
    assert_eq!(s.to_csv(), "a,b\n1.0000000000000001e-1,3.3333333333333331e-1\n");
}

#[test]
fn grid_refinement_contains_the_coarse_grid() {
    let g = GridSpec::analytic();
    let fine = g.refined();
    let fine_t = fine.t_grid();
    for t in g.t_grid() {
        assert!(fine_t.iter().any(|&s| (s - t).abs() <= 1e-12 * t));
    }
    assert_eq!(fine.xi_grid().len(), 2 * g.xi_grid().len() - 1);
    assert!(GridSpec { t_min: 0.0, ..g.clone() }.validate().is_err());
    assert!(GridSpec { eps_list: vec![4.0], ..g }.validate().is_err());
}
