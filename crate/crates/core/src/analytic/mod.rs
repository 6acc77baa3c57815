//! Closed-form heat kernels of the model spaces and quadrature of the heat
//! semigroup against them.
//!
//! All three kernels are radial: `p_t(x, y)` depends only on `d(x, y)`, so
//! the evaluation API takes a distance. Points, where needed, are slices:
//! Euclidean coordinates, `[arc]` on the circle, and geodesic normal
//! coordinates at a fixed origin in hyperbolic 3-space.

pub mod quadrature;

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::spaces::{self, SpaceDescriptor, SpaceKind};
pub use quadrature::QuadResult;

/// Exponents beyond this are treated as underflow.
const UNDERFLOW_EXPONENT: f64 = 700.0;
/// Semigroup quadrature tolerance.
const SEMIGROUP_TOL: f64 = 1e-10;
const MAX_INTERVALS: usize = 4000;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CircleMethod {
    ImageSum,
    SpectralSum,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum KernelMode {
    Value,
    RadialGradientMagnitude,
    TimeDerivative,
    LogValue,
}

/// Value and first derivatives of a radial kernel at `(t, d)`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct KernelEval {
    pub value: f64,
    /// `|d/dd p|`, the gradient magnitude in the second variable.
    pub gradient: f64,
    pub time_derivative: f64,
    /// `|grad log p|`, computed without dividing by a tiny `value`.
    pub log_gradient: f64,
    /// `d/dt log p`.
    pub log_time_derivative: f64,
    pub log_value: f64,
    /// Set when the Gaussian exponent exceeded the underflow guard and
    /// `value` was returned as 0.
    pub underflow: bool,
}

fn check_time(t: f64) -> Result<()> {
    if t > 0.0 && t.is_finite() {
        Ok(())
    } else {
        Err(Error::Domain(format!("time must be positive and finite, got {t}")))
    }
}

fn check_distance(d: f64) -> Result<()> {
    if d >= 0.0 && d.is_finite() {
        Ok(())
    } else {
        Err(Error::Domain(format!("distance must be nonnegative, got {d}")))
    }
}

/// Euclidean heat kernel `(4 pi t)^{-N/2} exp(-d^2 / 4t)` with derivatives.
pub fn euclidean(n: usize, t: f64, d: f64) -> Result<KernelEval> {
    check_time(t)?;
    check_distance(d)?;
    if n == 0 {
        return Err(Error::Domain("dimension must be at least 1".into()));
    }
    let nf = n as f64;
    let q = d * d / (4.0 * t);
    let log_value = -0.5 * nf * (4.0 * PI * t).ln() - q;
    let underflow = q > UNDERFLOW_EXPONENT;
    let value = if underflow {
        0.0
    } else {
        (4.0 * PI * t).powf(-0.5 * nf) * (-q).exp()
    };
    let log_gradient = d / (2.0 * t);
    let log_time_derivative = -nf / (2.0 * t) + d * d / (4.0 * t * t);
    Ok(KernelEval {
        value,
        gradient: log_gradient * value,
        time_derivative: log_time_derivative * value,
        log_gradient,
        log_time_derivative,
        log_value,
        underflow,
    })
}

/// `r / sinh r`, accurate near 0 and for large `r`.
fn r_over_sinh(r: f64) -> f64 {
    if r < 1e-6 {
        1.0 - r * r / 6.0
    } else if r < 20.0 {
        r / r.sinh()
    } else {
        2.0 * r * (-r).exp() / (1.0 - (-2.0 * r).exp())
    }
}

/// `coth r - 1/r`, with a series near 0 where the difference cancels.
fn coth_minus_inv(r: f64) -> f64 {
    if r < 0.1 {
        let r2 = r * r;
        r * (1.0 / 3.0
            + r2 * (-1.0 / 45.0
                + r2 * (2.0 / 945.0 + r2 * (-1.0 / 4725.0 + r2 * (2.0 / 93555.0)))))
    } else {
        1.0 / r.tanh() - 1.0 / r
    }
}

/// Heat kernel of hyperbolic 3-space (sectional curvature -1):
/// `(4 pi t)^{-3/2} (r / sinh r) exp(-t - r^2 / 4t)`.
pub fn hyperbolic3(t: f64, r: f64) -> Result<KernelEval> {
    check_time(t)?;
    check_distance(r)?;
    let q = r * r / (4.0 * t);
    let ros = r_over_sinh(r);
    let log_ros = if r < 1e-6 {
        -r * r / 6.0
    } else if r < 20.0 {
        ros.ln()
    } else {
        r.ln() + std::f64::consts::LN_2 - r - (-(-2.0 * r).exp()).ln_1p()
    };
    let log_value = -1.5 * (4.0 * PI * t).ln() + log_ros - t - q;
    let underflow = q > UNDERFLOW_EXPONENT;
    let value = if underflow {
        0.0
    } else {
        (4.0 * PI * t).powf(-1.5) * ros * (-t - q).exp()
    };
    let log_gradient = coth_minus_inv(r) + r / (2.0 * t);
    let log_time_derivative = -1.5 / t - 1.0 + r * r / (4.0 * t * t);
    Ok(KernelEval {
        value,
        gradient: log_gradient * value,
        time_derivative: log_time_derivative * value,
        log_gradient,
        log_time_derivative,
        log_value,
        underflow,
    })
}

/// Heat kernel of the circle of length `l` at arc separation `arc`.
///
/// The image sum is `sum_k (4 pi t)^{-1/2} exp(-(arc + kL)^2 / 4t)`; the
/// spectral sum is `(1/L) sum_k exp(-(2 pi k / L)^2 t) cos(2 pi k arc / L)`.
/// They agree by Poisson summation.
pub fn circle(l: f64, t: f64, arc: f64, method: CircleMethod) -> Result<KernelEval> {
    check_time(t)?;
    if !(l > 0.0 && l.is_finite()) {
        return Err(Error::Domain(format!("circumference must be positive, got {l}")));
    }
    if !arc.is_finite() {
        return Err(Error::Domain("arc must be finite".into()));
    }
    let a = arc.rem_euclid(l);
    let (value, dp_darc, dp_dt) = match method {
        CircleMethod::ImageSum => circle_images(l, t, a),
        CircleMethod::SpectralSum => circle_spectral(l, t, a),
    };
    let gradient = dp_darc.abs();
    Ok(KernelEval {
        value,
        gradient,
        time_derivative: dp_dt,
        log_gradient: gradient / value,
        log_time_derivative: dp_dt / value,
        log_value: value.ln(),
        underflow: false,
    })
}

fn circle_images(l: f64, t: f64, a: f64) -> (f64, f64, f64) {
    let kmax = ((2800.0 * t).sqrt() / l).ceil() as i64 + 2;
    let norm = (4.0 * PI * t).powf(-0.5);
    let (mut v, mut dv, mut dt) = (0.0, 0.0, 0.0);
    for k in -kmax..=kmax {
        let x = a + k as f64 * l;
        let g = norm * (-x * x / (4.0 * t)).exp();
        v += g;
        dv += -x / (2.0 * t) * g;
        dt += (-0.5 / t + x * x / (4.0 * t * t)) * g;
    }
    (v, dv, dt)
}

fn circle_spectral(l: f64, t: f64, a: f64) -> (f64, f64, f64) {
    let (mut v, mut dv, mut dt) = (1.0 / l, 0.0, 0.0);
    let mut k = 1u64;
    loop {
        let w = 2.0 * PI * k as f64 / l;
        let decay = (-w * w * t).exp();
        let term = 2.0 / l * decay;
        if term < 1e-16 && k as f64 * w * w * t > 1.0 {
            break;
        }
        v += term * (w * a).cos();
        dv -= term * w * (w * a).sin();
        dt -= term * w * w * (w * a).cos();
        k += 1;
    }
    (v, dv, dt)
}

/// Closed-form heat kernel of a model space.
#[derive(Clone, Debug, PartialEq)]
pub struct AnalyticKernel {
    model: SpaceDescriptor,
}

impl AnalyticKernel {
    pub fn new(model: SpaceDescriptor) -> Result<Self> {
        model.validate()?;
        if model.kind == SpaceKind::Sampled {
            return Err(Error::Domain(
                "sampled spaces have no closed-form kernel".into(),
            ));
        }
        Ok(AnalyticKernel { model })
    }

    pub fn model(&self) -> &SpaceDescriptor {
        &self.model
    }

    /// Value and derivatives at time `t` and distance `d`.
    pub fn evaluate(&self, t: f64, d: f64) -> Result<KernelEval> {
        match self.model.kind {
            SpaceKind::Euclidean => euclidean(self.model.dimension as usize, t, d),
            SpaceKind::Hyperbolic3 => hyperbolic3(t, d),
            SpaceKind::Circle => {
                let l = self.model.circumference.expect("validated circle");
                check_distance(d)?;
                circle(l, t, d, CircleMethod::ImageSum)
            }
            SpaceKind::Sampled => unreachable!("rejected in new"),
        }
    }

    pub fn evaluate_mode(&self, mode: KernelMode, t: f64, d: f64) -> Result<f64> {
        let e = self.evaluate(t, d)?;
        Ok(match mode {
            KernelMode::Value => e.value,
            KernelMode::RadialGradientMagnitude => e.gradient,
            KernelMode::TimeDerivative => e.time_derivative,
            KernelMode::LogValue => e.log_value,
        })
    }

    pub fn value(&self, t: f64, d: f64) -> Result<f64> {
        Ok(self.evaluate(t, d)?.value)
    }

    /// Geodesic distance between two points in this model's coordinates.
    pub fn distance(&self, x: &[f64], y: &[f64]) -> Result<f64> {
        model_distance(&self.model, x, y)
    }

    /// `H_t f(x) = integral f(y) p_t(x, y) dmu(y)` by adaptive quadrature.
    ///
    /// The integration region is truncated where the kernel falls below
    /// `e^{-40}` of its peak. A result with `converged == false` is an
    /// estimate whose refinement budget ran out.
    pub fn semigroup_quadrature(
        &self,
        f: &dyn Fn(&[f64]) -> f64,
        t: f64,
        x: &[f64],
    ) -> Result<QuadResult> {
        self.semigroup_quadrature_tol(f, t, x, SEMIGROUP_TOL)
    }

    /// [`AnalyticKernel::semigroup_quadrature`] with an explicit absolute
    /// tolerance per quadrature level.
    pub fn semigroup_quadrature_tol(
        &self,
        f: &dyn Fn(&[f64]) -> f64,
        t: f64,
        x: &[f64],
        tol: f64,
    ) -> Result<QuadResult> {
        check_time(t)?;
        self.check_point(x)?;
        if !(tol > 0.0) {
            return Err(Error::Domain(format!("quadrature tolerance must be positive, got {tol}")));
        }
        match self.model.kind {
            SpaceKind::Euclidean => Ok(self.euclidean_semigroup(f, t, x, tol)),
            SpaceKind::Circle => Ok(self.circle_semigroup(f, t, x[0], tol)),
            SpaceKind::Hyperbolic3 => Ok(hyperbolic3_semigroup(f, t, x, tol)),
            SpaceKind::Sampled => unreachable!("rejected in new"),
        }
    }

    fn check_point(&self, x: &[f64]) -> Result<()> {
        let want = match self.model.kind {
            SpaceKind::Euclidean => self.model.dimension as usize,
            SpaceKind::Circle => 1,
            _ => 3,
        };
        if x.len() != want || x.iter().any(|v| !v.is_finite()) {
            return Err(Error::Domain(format!(
                "point must have {want} finite coordinates, got {x:?}"
            )));
        }
        Ok(())
    }

    fn euclidean_semigroup(&self, f: &dyn Fn(&[f64]) -> f64, t: f64, x: &[f64], tol: f64) -> QuadResult {
        let n = x.len();
        let half_width = (160.0 * t).sqrt();
        let mut y = x.to_vec();
        nested_box(0, x, half_width, &mut y, tol, &|y: &[f64]| {
            let d2: f64 = x.iter().zip(y).map(|(a, b)| (a - b) * (a - b)).sum();
            let p = euclidean(n, t, d2.sqrt()).map(|e| e.value).unwrap_or(0.0);
            if p == 0.0 { 0.0 } else { f(y) * p }
        })
    }

    fn circle_semigroup(&self, f: &dyn Fn(&[f64]) -> f64, t: f64, x: f64, tol: f64) -> QuadResult {
        let l = self.model.circumference.expect("validated circle");
        let half = 0.5 * l;
        let integrand = |s: f64| {
            let p = circle(l, t, s.abs(), CircleMethod::ImageSum)
                .map(|e| e.value)
                .unwrap_or(0.0);
            f(&[(x + s).rem_euclid(l)]) * p
        };
        let width = (160.0 * t).sqrt().min(half);
        let mut pts = vec![-half];
        if width < half {
            pts.push(-width);
        }
        pts.push(0.0);
        if width < half {
            pts.push(width);
        }
        pts.push(half);
        quadrature::integrate_pieces(integrand, &pts, tol, MAX_INTERVALS)
    }
}

fn nested_box(
    axis: usize,
    center: &[f64],
    half_width: f64,
    y: &mut [f64],
    tol: f64,
    g: &dyn Fn(&[f64]) -> f64,
) -> QuadResult {
    let n = center.len();
    let c = center[axis];
    // Inner errors are integrated over the outer length.
    let inner_tol = tol / (2.0 * half_width);
    let mut inner_ok = true;
    let r = quadrature::integrate_pieces(
        |s| {
            y[axis] = s;
            if axis + 1 == n {
                g(y)
            } else {
                let q = nested_box(axis + 1, center, half_width, y, inner_tol, g);
                inner_ok &= q.converged;
                q.value
            }
        },
        &[c - half_width, c, c + half_width],
        tol,
        MAX_INTERVALS,
    );
    QuadResult {
        converged: r.converged && inner_ok,
        ..r
    }
}

/// Lorentz boost of the hyperboloid taking the origin to the point with
/// normal coordinates `x`, applied to `(x0, v)`.
fn boost(x: &[f64], time: f64, v: [f64; 3]) -> (f64, [f64; 3]) {
    let r = spaces::norm(x);
    if r == 0.0 {
        return (time, v);
    }
    let u = [x[0] / r, x[1] / r, x[2] / r];
    let uv = u[0] * v[0] + u[1] * v[1] + u[2] * v[2];
    let (ch, sh) = (r.cosh(), r.sinh());
    let s = (ch - 1.0) * uv + sh * time;
    (
        ch * time + sh * uv,
        [v[0] + s * u[0], v[1] + s * u[1], v[2] + s * u[2]],
    )
}

/// Normal coordinates at the origin of the point at distance `rho` from `x`
/// in tangent direction `omega` (a unit vector in the frame carried by the
/// boost).
pub(crate) fn hyperbolic3_exp(x: &[f64], rho: f64, omega: [f64; 3]) -> [f64; 3] {
    let sh = rho.sinh();
    let (_, spatial) = boost(x, rho.cosh(), [sh * omega[0], sh * omega[1], sh * omega[2]]);
    let len = (spatial[0] * spatial[0] + spatial[1] * spatial[1] + spatial[2] * spatial[2]).sqrt();
    if len == 0.0 {
        return [0.0; 3];
    }
    let r = len.asinh();
    [spatial[0] / len * r, spatial[1] / len * r, spatial[2] / len * r]
}

fn hyperbolic3_semigroup(f: &dyn Fn(&[f64]) -> f64, t: f64, x: &[f64], tol: f64) -> QuadResult {
    let rho_max = 2.0 * t + (4.0 * t * t + 160.0 * t).sqrt();
    let sphere_tol = tol;
    let mut converged = true;
    let radial = quadrature::integrate(
        |rho| {
            let p = hyperbolic3(t, rho).map(|e| e.value).unwrap_or(0.0);
            if p == 0.0 {
                return 0.0;
            }
            let sh = rho.sinh();
            let shell = p * sh * sh;
            let angular = quadrature::integrate(
                |theta| {
                    let (st, ct) = theta.sin_cos();
                    let q = quadrature::integrate(
                        |phi| {
                            let (sp, cp) = phi.sin_cos();
                            f(&hyperbolic3_exp(x, rho, [st * cp, st * sp, ct]))
                        },
                        0.0,
                        2.0 * PI,
                        sphere_tol,
                        MAX_INTERVALS,
                    );
                    st * q.value
                },
                0.0,
                PI,
                sphere_tol,
                MAX_INTERVALS,
            );
            converged &= angular.converged;
            shell * angular.value
        },
        0.0,
        rho_max,
        tol,
        MAX_INTERVALS,
    );
    QuadResult {
        converged: radial.converged && converged,
        ..radial
    }
}

/// Geodesic distance between model points (see the module docs for the
/// coordinate conventions).
pub fn model_distance(desc: &SpaceDescriptor, x: &[f64], y: &[f64]) -> Result<f64> {
    if x.len() != y.len() {
        return Err(Error::Domain("points have different dimensions".into()));
    }
    match desc.kind {
        SpaceKind::Euclidean => Ok(x
            .iter()
            .zip(y)
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>()
            .sqrt()),
        SpaceKind::Circle => {
            let l = desc
                .circumference
                .ok_or_else(|| Error::InvalidDescriptor("circle needs L".into()))?;
            let a = (x[0] - y[0]).abs().rem_euclid(l);
            Ok(a.min(l - a))
        }
        SpaceKind::Hyperbolic3 => Ok(spaces::hyperbolic3_distance(x, y)),
        SpaceKind::Sampled => Err(Error::Domain("sampled spaces have no coordinates".into())),
    }
}

/// `integral f(y) p_t(x, y) dy` on `R^N` by an `m`-point-per-axis
/// Gauss–Hermite product rule. Accurate for smooth `f` only.
pub fn euclidean_gauss_hermite(f: &dyn Fn(&[f64]) -> f64, t: f64, x: &[f64], m: usize) -> f64 {
    let (nodes, weights) = quadrature::gauss_hermite(m);
    let n = x.len();
    let scale = (4.0 * t).sqrt();
    let norm = PI.powf(-0.5 * n as f64);
    let mut idx = vec![0usize; n];
    let mut y = vec![0.0; n];
    let mut total = 0.0;
    'outer: loop {
        let mut w = norm;
        for k in 0..n {
            y[k] = x[k] + scale * nodes[idx[k]];
            w *= weights[idx[k]];
        }
        total += w * f(&y);
        for k in 0..n {
            idx[k] += 1;
            if idx[k] < m {
                continue 'outer;
            }
            idx[k] = 0;
        }
        break;
    }
    total
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn euclidean_normalization_point() {
        let e = euclidean(1, 1.0 / (4.0 * PI), 0.0).unwrap();
        assert!((e.value - 1.0).abs() < 1e-15);
        let e2 = euclidean(2, 1.0, 2.0).unwrap();
        assert!((e2.value - (-1.0f64).exp() / (4.0 * PI)).abs() < 1e-16);
    }

    #[test]
    fn domain_errors() {
        assert!(euclidean(2, 0.0, 1.0).is_err());
        assert!(hyperbolic3(1.0, -1.0).is_err());
        assert!(circle(0.0, 1.0, 0.0, CircleMethod::ImageSum).is_err());
        assert!(AnalyticKernel::new(SpaceDescriptor::sampled(2.0, 0.0)).is_err());
    }

    #[test]
    fn hyperbolic_underflow_flag() {
        let e = hyperbolic3(0.01, 10.0).unwrap();
        assert!(e.underflow);
        assert_eq!(e.value, 0.0);
        assert!(e.log_value.is_finite());
    }

    #[test]
    fn small_r_series_matches_direct_form() {
        // Near the switch the direct form is still accurate.
        for &r in &[0.05_f64, 0.099, 0.0999999, 0.2] {
            let direct = 1.0 / r.tanh() - 1.0 / r;
            assert!((coth_minus_inv(r) - direct).abs() <= 1e-12 * direct);
        }
        // Deep in the series range the leading term dominates.
        for &r in &[1e-7_f64, 1e-4] {
            assert!((coth_minus_inv(r) - r / 3.0).abs() <= r * r * r / 30.0);
        }
    }

    #[test]
    fn hyperbolic_derivatives_match_finite_differences() {
        let (t, r) = (0.7, 1.3);
        let e = hyperbolic3(t, r).unwrap();
        let h = 1e-5;
        let dr = (hyperbolic3(t, r + h).unwrap().value - hyperbolic3(t, r - h).unwrap().value) / (2.0 * h);
        let dt = (hyperbolic3(t + h, r).unwrap().value - hyperbolic3(t - h, r).unwrap().value) / (2.0 * h);
        assert!((e.gradient + dr).abs() < 1e-8 * e.gradient);
        assert!((e.time_derivative - dt).abs() < 1e-8 * e.time_derivative.abs());
    }

    #[test]
    fn circle_methods_agree() {
        for &(t, a) in &[(0.01, 0.3), (1.0, 0.0), (1.0, PI), (5.0, 2.0)] {
            let i = circle(2.0 * PI, t, a, CircleMethod::ImageSum).unwrap();
            let s = circle(2.0 * PI, t, a, CircleMethod::SpectralSum).unwrap();
            assert!((i.value - s.value).abs() < 1e-12, "t={t} a={a}");
            assert!((i.gradient - s.gradient).abs() < 1e-11);
            assert!((i.time_derivative - s.time_derivative).abs() < 1e-11);
        }
    }

    #[test]
    fn gauss_hermite_mass() {
        let one = |_: &[f64]| 1.0;
        assert!((euclidean_gauss_hermite(&one, 0.3, &[0.2, -1.0], 12) - 1.0).abs() < 1e-13);
    }

    #[test]
    fn hyperbolic_exponential_map_preserves_distance() {
        let x = [0.4, -0.2, 0.9];
        let y = hyperbolic3_exp(&x, 1.7, [0.0, 0.6, 0.8]);
        assert!((spaces::hyperbolic3_distance(&x, &y) - 1.7).abs() < 1e-12);
    }
}
