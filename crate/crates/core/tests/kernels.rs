use std::f64::consts::PI;

use heatlab::analytic::{self, quadrature, AnalyticKernel, CircleMethod, KernelMode};
use heatlab::spaces::SpaceDescriptor;
use proptest::prelude::*;

fn rel(a: f64, b: f64) -> f64 {
    (a - b).abs() / b.abs()
}

#[test]
fn reference_values() {
    // (4 pi)^{-1} e^{-1}
    let e = analytic::euclidean(2, 1.0, 2.0).unwrap();
    assert!(rel(e.value, 0.029_274_915_762_159_584) < 1e-14);

    // (4 pi)^{-3/2} e^{-1}
    let h = analytic::hyperbolic3(1.0, 0.0).unwrap();
    assert!(rel(h.value, 0.008_258_301_266_124_231) < 1e-12);
    let h_small = analytic::hyperbolic3(1.0, 1e-9).unwrap();
    assert!(rel(h_small.value, h.value) < 1e-15);

    for method in [CircleMethod::ImageSum, CircleMethod::SpectralSum] {
        let c0 = analytic::circle(2.0 * PI, 1.0, 0.0, method).unwrap();
        assert!(rel(c0.value, 0.282_123_973_456_76) < 1e-12);
        let c_pi = analytic::circle(2.0 * PI, 1.0, PI, method).unwrap();
        assert!(rel(c_pi.value, 0.047_846_082_229_26) < 1e-11);
        let c_late = analytic::circle(2.0 * PI, 200.0, 1.0, method).unwrap();
        assert!(rel(c_late.value, 1.0 / (2.0 * PI)) < 1e-14);
    }
}

#[test]
fn euclidean_mass_by_gauss_hermite() {
    let one = |_: &[f64]| 1.0;
    for n in 1..=3 {
        let x = vec![0.3; n];
        for &t in &[0.05, 1.0, 7.0] {
            let mass = analytic::euclidean_gauss_hermite(&one, t, &x, 16);
            assert!((mass - 1.0).abs() < 1e-10, "N={n} t={t}: {mass}");
        }
    }
}

#[test]
fn hyperbolic_radial_mass() {
    for &t in &[0.25_f64, 1.0, 4.0] {
        let rho_max = 2.0 * t + (4.0 * t * t + 160.0 * t).sqrt();
        let q = quadrature::integrate(
            |r| {
                let s = r.sinh();
                analytic::hyperbolic3(t, r).unwrap().value * 4.0 * PI * s * s
            },
            0.0,
            rho_max,
            1e-12,
            10_000,
        );
        assert!((q.value - 1.0).abs() < 1e-8, "t={t}: {}", q.value);
    }
}

#[test]
fn semigroup_of_constants_is_one() {
    let one = |_: &[f64]| 1.0;
    let cases = [
        (SpaceDescriptor::euclidean(1), vec![0.7]),
        (SpaceDescriptor::euclidean(2), vec![0.1, -0.4]),
        (SpaceDescriptor::circle(2.0 * PI), vec![1.0]),
        (SpaceDescriptor::hyperbolic3(), vec![0.2, 0.1, -0.3]),
    ];
    for (desc, x) in cases {
        let k = AnalyticKernel::new(desc.clone()).unwrap();
        let q = k.semigroup_quadrature(&one, 0.5, &x).unwrap();
        assert!((q.value - 1.0).abs() < 1e-8, "{}: {}", desc.label(), q.value);
        assert!(q.converged);
    }
}

#[test]
fn sign_function_on_the_line() {
    let k = AnalyticKernel::new(SpaceDescriptor::euclidean(1)).unwrap();
    let sign = |y: &[f64]| y[0].signum();
    let q = k.semigroup_quadrature(&sign, 1.0, &[1.0]).unwrap();
    // erf(1/2)
    assert!((q.value - 0.520_499_877_813_046_5).abs() < 1e-9);
}

#[test]
fn cosine_decays_on_the_circle() {
    let k = AnalyticKernel::new(SpaceDescriptor::circle(2.0 * PI)).unwrap();
    let f = |y: &[f64]| y[0].cos();
    for &x in &[0.0, 1.0, 2.5] {
        let q = k.semigroup_quadrature(&f, 1.0, &[x]).unwrap();
        assert!((q.value - (-1.0f64).exp() * x.cos()).abs() < 1e-9);
    }
}

#[test]
fn chapman_kolmogorov() {
    let models = [
        (SpaceDescriptor::euclidean(1), vec![0.0], vec![0.8]),
        (SpaceDescriptor::euclidean(2), vec![0.0, 0.0], vec![0.6, -0.3]),
        (SpaceDescriptor::circle(2.0 * PI), vec![0.0], vec![2.0]),
        (SpaceDescriptor::hyperbolic3(), vec![0.0, 0.0, 0.0], vec![0.5, 0.2, 0.0]),
    ];
    for (desc, x, y) in models {
        let k = AnalyticKernel::new(desc.clone()).unwrap();
        for &t in &[0.25, 1.0] {
            for &s in &[0.25, 1.0] {
                if desc.kind == heatlab::spaces::SpaceKind::Hyperbolic3 && t != s {
                    // one asymmetric pair keeps the 3-d quadrature budget small
                    if !(t == 0.25 && s == 1.0) {
                        continue;
                    }
                }
                let ks = k.clone();
                let yy = y.clone();
                let f = move |z: &[f64]| {
                    let d = ks.distance(z, &yy).unwrap();
                    ks.value(s, d).unwrap()
                };
                let q = k.semigroup_quadrature(&f, t, &x).unwrap();
                let exact = k.value(t + s, k.distance(&x, &y).unwrap()).unwrap();
                assert!(rel(q.value, exact) < 1e-6, "{} t={t} s={s}", desc.label());
            }
        }
    }
}

#[test]
fn euclidean_li_yau_equality() {
    for n in 1..=3 {
        for i in 0..16 {
            let t = 0.01 * 10f64.powf(i as f64 / 5.0);
            for j in 0..16 {
                let d = j as f64 * 0.4 * t.sqrt();
                let e = analytic::euclidean(n, t, d).unwrap();
                let residual = e.log_gradient.powi(2) - e.log_time_derivative - n as f64 / (2.0 * t);
                assert!(residual.abs() <= 1e-9 * n as f64 / (2.0 * t));
            }
        }
    }
}

#[test]
fn modes_match_evaluate() {
    let k = AnalyticKernel::new(SpaceDescriptor::hyperbolic3()).unwrap();
    let e = k.evaluate(0.8, 1.1).unwrap();
    assert_eq!(k.evaluate_mode(KernelMode::Value, 0.8, 1.1).unwrap(), e.value);
    assert_eq!(k.evaluate_mode(KernelMode::TimeDerivative, 0.8, 1.1).unwrap(), e.time_derivative);
    assert_eq!(k.evaluate_mode(KernelMode::RadialGradientMagnitude, 0.8, 1.1).unwrap(), e.gradient);
    assert!(rel(k.evaluate_mode(KernelMode::LogValue, 0.8, 1.1).unwrap(), e.value.ln()) < 1e-14);
}

proptest! {
    #[test]
    fn kernels_are_positive_and_symmetric(t in 0.01f64..20.0, a in -3.0f64..3.0, b in -3.0f64..3.0) {
        for desc in [SpaceDescriptor::euclidean(1), SpaceDescriptor::circle(2.0 * PI)] {
            let k = AnalyticKernel::new(desc).unwrap();
            let d_ab = k.distance(&[a], &[b]).unwrap();
            let d_ba = k.distance(&[b], &[a]).unwrap();
            prop_assert_eq!(d_ab, d_ba);
            prop_assert!(k.value(t, d_ab).unwrap() > 0.0);
        }
        let h = AnalyticKernel::new(SpaceDescriptor::hyperbolic3()).unwrap();
        let x = [a, 0.5 * b, 0.1];
        let y = [b, -a, 0.3];
        prop_assert!((h.distance(&x, &y).unwrap() - h.distance(&y, &x).unwrap()).abs() < 1e-12);
        prop_assert!(h.value(t, h.distance(&x, &y).unwrap()).unwrap() > 0.0);
    }

    #[test]
    fn circle_series_agree(t in 0.02f64..10.0, a in 0.0f64..6.28) {
        let i = analytic::circle(2.0 * PI, t, a, CircleMethod::ImageSum).unwrap();
        let s = analytic::circle(2.0 * PI, t, a, CircleMethod::SpectralSum).unwrap();
        prop_assert!((i.value - s.value).abs() < 1e-12);
    }
}
