//! Gradient estimates for heat flows: Li–Yau, Bakry–Ledoux, Caccioppoli
//! (with the reversed Poincaré inequality) and the weighted L^2 bound.

use crate::analytic::quadrature::integrate_pieces;
use crate::analytic::{euclidean, AnalyticKernel};
use crate::error::{Error, Result};
use crate::spaces::{build_cutoff, discrete_lipschitz, SpaceDescriptor};
use crate::spectral::{lp_norm, SpectralDecomposition};

use super::sources::KernelSource;
use super::{k_coefficient, CheckResult, GridSpec, MarginTracker, Status, Sweep};

/// `(e^{2Kt} - 2Kt - 1) / (N K^2)`, `2t^2/N` at `K = 0`.
fn hessian_coefficient(k: f64, n: f64, t: f64) -> f64 {
    let x = 2.0 * k * t;
    if x.abs() < 1e-3 {
        // (e^x - x - 1)/K^2 = 2 t^2 (1 + x/3 + x^2/12 + x^3/60)
        2.0 * t * t * (1.0 + x / 3.0 + x * x / 12.0 + x * x * x / 60.0) / n
    } else {
        (x.exp_m1() - x) / (n * k * k)
    }
}

/// Li–Yau for positive kernel columns: the `K = 0` form
/// `Gamma(log p) - d/dt log p <= N/(2t)` and, for `K < 0`,
/// `Gamma(log u) <= e^{-2Kt/3} (du/dt)/u + (NK/3) e^{-4Kt/3} / (1 - e^{-2Kt/3})`.
pub fn check_li_yau(source: &dyn KernelSource, grid: &GridSpec) -> Result<CheckResult> {
    grid.validate()?;
    let k = source.curvature();
    let n = source.dimension();
    let mut result = CheckResult::new("li_yau", &source.label(), grid.summary(), grid.tolerance);
    result.constant("K", k);
    result.constant("N", n);
    let mut tracker = MarginTracker::new(grid.tolerance);
    let mut sweep = Sweep::new(&["t", "d", "x", "y", "lhs", "rhs"]);
    let mut excluded = 0usize;
    let mut max_residual = 0.0_f64;
    for t in grid.t_grid() {
        for s in source.samples(t, grid)? {
            if !s.log_gradient_sq.is_finite() || !(s.value > 0.0) {
                excluded += 1;
                continue;
            }
            let dlog = s.time_derivative / s.value;
            let (lhs, rhs) = if k >= 0.0 {
                (s.log_gradient_sq - dlog, n / (2.0 * t))
            } else {
                let g = (-2.0 * k * t / 3.0).exp();
                let tail = n * k / 3.0 * (-4.0 * k * t / 3.0).exp() / (-(-2.0 * k * t / 3.0).exp_m1());
                (s.log_gradient_sq, g * dlog + tail)
            };
            if k >= 0.0 {
                max_residual = max_residual.max((lhs - rhs).abs() / rhs);
            }
            tracker.record(
                lhs,
                rhs,
                &[("t", t), ("d", s.d), ("x", s.x as f64), ("y", s.y as f64)],
            );
            sweep.push(vec![t, s.d, s.x as f64, s.y as f64, lhs, rhs]);
        }
    }
    if tracker.count == 0 {
        let mut r = CheckResult::with_status(
            "li_yau",
            &source.label(),
            Status::HypothesisNotMet,
            "no positive heat values on the grid",
        );
        r.grid = grid.summary();
        return Ok(r);
    }
    result.absorb(&tracker);
    if k >= 0.0 {
        result.constant("max_scaled_residual", max_residual);
    }
    if excluded > 0 {
        result.note(format!(
            "{excluded} samples skipped where the heat column is not positive on the stencil"
        ));
    }
    result.sweep = Some(sweep);
    Ok(result)
}

fn core_points(dec: &SpectralDecomposition) -> Vec<usize> {
    let core = dec.space().core_indices();
    if core.is_empty() {
        (0..dec.len()).collect()
    } else {
        core
    }
}

fn sup_abs(v: &[f64]) -> f64 {
    v.iter().fold(0.0_f64, |a, x| a.max(x.abs()))
}

/// `Gamma(H_t f) + 4Kt^2/(N(e^{2Kt}-1)) (A H_t f)^2 <= e^{-2Kt} H_t(Gamma(f))`
/// at every core point.
pub fn check_bakry_ledoux(
    dec: &SpectralDecomposition,
    functions: &[Vec<f64>],
    t_list: &[f64],
    tolerance: f64,
) -> Result<CheckResult> {
    let desc = dec.space().descriptor();
    let (k, n) = (desc.curvature, desc.dimension);
    let gen = dec.generator();
    let grid = format!("{} functions x t in {:?}", functions.len(), t_list);
    let mut result = CheckResult::new("bakry_ledoux", &space_label(dec), grid, tolerance);
    result.constant("K", k);
    result.constant("N", n);
    let mut tracker = MarginTracker::new(tolerance);
    let core = core_points(dec);
    let mut sweep = Sweep::new(&["function", "t", "y", "lhs", "rhs"]);
    for (fi, f) in functions.iter().enumerate() {
        let gamma_f = gen.carre_du_champ(f);
        tracker.set_floor(1e-12 * sup_abs(&gamma_f).max(f64::MIN_POSITIVE));
        for &t in t_list {
            check_time(t)?;
            let u = dec.heat(f, t);
            let gamma_u = gen.carre_du_champ(&u);
            let au = dec.heat_time_derivative(f, t);
            let h_gamma = dec.heat(&gamma_f, t);
            let coef = 4.0 * t * t / n * k_coefficient(k, t);
            let decay = (-2.0 * k * t).exp();
            for &y in &core {
                let lhs = gamma_u[y] + coef * au[y] * au[y];
                let rhs = decay * h_gamma[y];
                tracker.record(lhs, rhs, &[("function", fi as f64), ("t", t), ("y", y as f64)]);
                sweep.push(vec![fi as f64, t, y as f64, lhs, rhs]);
            }
        }
    }
    result.absorb(&tracker);
    result.sweep = Some(sweep);
    Ok(result)
}

fn space_label(dec: &SpectralDecomposition) -> String {
    format!("{} (n={})", dec.space().descriptor().label(), dec.len())
}

fn check_time(t: f64) -> Result<()> {
    if !(t > 0.0 && t.is_finite()) {
        return Err(Error::Domain(format!("time must be positive, got {t}")));
    }
    Ok(())
}

fn check_p_list(p_list: &[f64]) -> Result<()> {
    if let Some(&p) = p_list.iter().find(|&&p| !(p >= 2.0)) {
        return Err(Error::Domain(format!(
            "the L^p gradient bound is stated for p in [2, inf], got {p}"
        )));
    }
    Ok(())
}

/// `|| |grad H_t f| ||_p <= sqrt(K/(e^{2Kt}-1)) ||f||_p` for `p >= 2`, and
/// pointwise `(e^{2Kt}-1)/K Gamma(H_t f) + (e^{2Kt}-2Kt-1)/(NK^2) (A H_t f)^2
/// <= H_t(f^2) - (H_t f)^2`.
pub fn check_caccioppoli(
    dec: &SpectralDecomposition,
    functions: &[Vec<f64>],
    t_list: &[f64],
    p_list: &[f64],
    tolerance: f64,
) -> Result<CheckResult> {
    check_p_list(p_list)?;
    let desc = dec.space().descriptor();
    let (k, n) = (desc.curvature, desc.dimension);
    let gen = dec.generator();
    let weights = dec.space().weights();
    let grid = format!(
        "{} functions x t in {:?} x p in {:?}",
        functions.len(),
        t_list,
        p_list
    );
    let mut result = CheckResult::new("caccioppoli", &space_label(dec), grid, tolerance);
    let mut norms = MarginTracker::new(tolerance);
    let mut pointwise = MarginTracker::new(tolerance);
    let core = core_points(dec);
    let mut sweep = Sweep::new(&["function", "t", "p", "lhs", "rhs"]);
    for (fi, f) in functions.iter().enumerate() {
        let f2: Vec<f64> = f.iter().map(|x| x * x).collect();
        for &t in t_list {
            check_time(t)?;
            let coef = k_coefficient(k, t);
            let u = dec.heat(f, t);
            let gamma_u = gen.carre_du_champ(&u);
            let grad: Vec<f64> = gamma_u.iter().map(|g| g.max(0.0).sqrt()).collect();
            for &p in p_list {
                let lhs = lp_norm(weights, &grad, p)?;
                let rhs = coef.sqrt() * lp_norm(weights, f, p)?;
                norms.record(lhs, rhs, &[("function", fi as f64), ("t", t), ("p", p)]);
                sweep.push(vec![fi as f64, t, p, lhs, rhs]);
            }
            let au = dec.heat_time_derivative(f, t);
            let hf2 = dec.heat(&f2, t);
            let b = hessian_coefficient(k, n, t);
            pointwise.set_floor(1e-12 * sup_abs(&hf2).max(f64::MIN_POSITIVE));
            for &y in &core {
                let lhs = gamma_u[y] / coef + b * au[y] * au[y];
                let rhs = hf2[y] - u[y] * u[y];
                pointwise.record(lhs, rhs, &[("function", fi as f64), ("t", t), ("y", y as f64)]);
            }
        }
    }
    if let Some(w) = &norms.worst {
        result.constant("lp_worst_relative_margin", w.relative);
    }
    if let Some(w) = &pointwise.worst {
        result.constant("reversed_poincare_worst_relative_margin", w.relative);
    }
    result.constant("reversed_poincare_violations", pointwise.violations as f64);
    norms.merge(pointwise);
    result.absorb(&norms);
    result.sweep = Some(sweep);
    Ok(result)
}

/// The closed-form line instance: `f` bounded with jumps at `jumps`,
/// `|| d/dx H_t f ||_inf <= ||f||_inf / sqrt(2t)` on `x_grid`, plus the
/// pointwise reversed Poincaré inequality with `K = 0`, `N = 1`.
pub fn check_caccioppoli_line(
    f: &dyn Fn(f64) -> f64,
    jumps: &[f64],
    t_list: &[f64],
    x_grid: &[f64],
    tolerance: f64,
) -> Result<CheckResult> {
    let kernel = AnalyticKernel::new(SpaceDescriptor::euclidean(1))?;
    let grid = format!("t in {:?}; {} x points", t_list, x_grid.len());
    let mut result = CheckResult::new(
        "caccioppoli",
        &kernel.model().label(),
        grid,
        tolerance,
    );
    let f_sup = x_grid
        .iter()
        .chain(jumps)
        .map(|&x| f(x).abs())
        .fold(0.0_f64, f64::max);
    let mut norms = MarginTracker::new(tolerance);
    let mut pointwise = MarginTracker::new(tolerance);
    let mut sweep = Sweep::new(&["t", "x", "u", "du", "d2u", "variance"]);
    for &t in t_list {
        check_time(t)?;
        let mut grad_sup = 0.0_f64;
        let mut arg = 0.0;
        for &x in x_grid {
            let [u, du, d2u, hf2] = line_moments(f, jumps, t, x)?;
            if du.abs() > grad_sup {
                grad_sup = du.abs();
                arg = x;
            }
            let variance = hf2 - u * u;
            pointwise.record(
                2.0 * t * du * du + 2.0 * t * t * d2u * d2u,
                variance,
                &[("t", t), ("x", x)],
            );
            sweep.push(vec![t, x, u, du, d2u, variance]);
        }
        let bound = f_sup / (2.0 * t).sqrt();
        norms.record(grad_sup, bound, &[("t", t), ("x", arg)]);
        result.constant(&format!("gradient_sup_t={t}"), grad_sup);
        result.constant(&format!("bound_t={t}"), bound);
    }
    if let Some(w) = &pointwise.worst {
        result.constant("reversed_poincare_worst_relative_margin", w.relative);
    }
    norms.merge(pointwise);
    result.absorb(&norms);
    result.sweep = Some(sweep);
    Ok(result)
}

/// `[H_t f, d/dx H_t f, d^2/dx^2 H_t f, H_t(f^2)]` at `x` on the line.
fn line_moments(f: &dyn Fn(f64) -> f64, jumps: &[f64], t: f64, x: f64) -> Result<[f64; 4]> {
    let w = (160.0 * t).sqrt();
    let mut pts = vec![x - w, x, x + w];
    pts.extend(jumps.iter().copied().filter(|&j| j > x - w && j < x + w));
    pts.sort_by(f64::total_cmp);
    pts.dedup();
    let mut out = [0.0; 4];
    for (m, slot) in out.iter_mut().enumerate() {
        let q = integrate_pieces(
            |y| {
                let s = x - y;
                let p = euclidean(1, t, s.abs()).map(|e| e.value).unwrap_or(0.0);
                let fy = f(y);
                match m {
                    0 => fy * p,
                    1 => -s / (2.0 * t) * p * fy,
                    2 => (s * s / (4.0 * t * t) - 1.0 / (2.0 * t)) * p * fy,
                    _ => fy * fy * p,
                }
            },
            &pts,
            1e-13,
            4000,
        );
        *slot = q.value;
    }
    Ok(out)
}

/// `||e^psi H_t u||_2 <= e^{gamma^2 t} ||e^psi u||_2` with
/// `psi = alpha * chi`, `chi` the `eps`-cutoff of `set` and `gamma = 2 alpha / eps`.
pub fn check_weighted_contraction(
    dec: &SpectralDecomposition,
    set: &[usize],
    eps: f64,
    alphas: &[f64],
    functions: &[Vec<f64>],
    t_list: &[f64],
    tolerance: f64,
) -> Result<CheckResult> {
    let space = dec.space();
    let chi = build_cutoff(space, set, eps)?;
    let gen = dec.generator();
    let weights = space.weights();
    let grid = format!(
        "{} functions x t in {:?} x alpha in {:?}; eps = {eps}",
        functions.len(),
        t_list,
        alphas
    );
    let mut result = CheckResult::new("weighted_contraction", &space_label(dec), grid, tolerance);
    result.constant("cutoff_lipschitz", discrete_lipschitz(space, &chi));
    result.constant("cutoff_gradient_sup", sup_abs(&gen.gradient_norm(&chi)));
    let mut tracker = MarginTracker::new(tolerance);
    let mut sweep = Sweep::new(&["alpha", "function", "t", "lhs", "rhs"]);
    for &alpha in alphas {
        let gamma = 2.0 * alpha / eps;
        result.constant(&format!("gamma_alpha={alpha}"), gamma);
        let weight: Vec<f64> = chi.iter().map(|c| (alpha * c).exp()).collect();
        for (fi, u) in functions.iter().enumerate() {
            let wu: Vec<f64> = u.iter().zip(&weight).map(|(a, b)| a * b).collect();
            let base = lp_norm(weights, &wu, 2.0)?;
            for &t in t_list {
                check_time(t)?;
                let ut = dec.heat(u, t);
                let wut: Vec<f64> = ut.iter().zip(&weight).map(|(a, b)| a * b).collect();
                let lhs = lp_norm(weights, &wut, 2.0)?;
                let rhs = (gamma * gamma * t).exp() * base;
                tracker.record(lhs, rhs, &[("alpha", alpha), ("function", fi as f64), ("t", t)]);
                sweep.push(vec![alpha, fi as f64, t, lhs, rhs]);
            }
        }
    }
    result.absorb(&tracker);
    result.sweep = Some(sweep);
    Ok(result)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn hessian_coefficient_limits() {
        let exact = |k: f64, t: f64| ((2.0 * k * t).exp() - 2.0 * k * t - 1.0) / (k * k);
        assert!((hessian_coefficient(-2.0, 1.0, 0.5) - exact(-2.0, 0.5)).abs() < 1e-14);
        assert!((hessian_coefficient(0.0, 2.0, 3.0) - 9.0).abs() < 1e-14);
        let small = hessian_coefficient(-1e-5, 1.0, 1.0);
        // x = 2Kt = -2e-5: 2 (1 + x/3 + x^2/12)
        assert!((small - 2.0 * (1.0 - 2e-5 / 3.0 + 4e-10 / 12.0)).abs() < 1e-14);
    }

    #[test]
    fn sign_on_the_line() {
        let sign = |x: f64| if x > 0.0 { 1.0 } else if x < 0.0 { -1.0 } else { 0.0 };
        let m = line_moments(&sign, &[0.0], 1.0, 0.0).unwrap();
        assert!(m[0].abs() < 1e-14);
        assert!((m[1] - 1.0 / std::f64::consts::PI.sqrt()).abs() < 1e-10);
        assert!((m[3] - 1.0).abs() < 1e-10);
    }
}
