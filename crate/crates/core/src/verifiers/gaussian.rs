//! Two-sided Gaussian bounds, the integrated lower bound, and the gradient
//! and time-derivative bounds, all as sup-ratio fits.

use crate::analytic::AnalyticKernel;
use crate::error::{Error, Result};
use crate::spaces::SpaceDescriptor;

use super::sources::{AnalyticSource, KernelSample, KernelSource};
use super::{drift, CheckResult, GridSpec, MarginTracker, Status, Sweep, FIT_DRIFT_LIMIT};

/// `C_2` candidates for negatively curved spaces: `0` and `2^j`, `|j| <= 6`.
fn c2_candidates(curvature: f64) -> Vec<f64> {
    if curvature >= 0.0 {
        return vec![0.0];
    }
    std::iter::once(0.0)
        .chain((-6..=6).map(|j| 2f64.powi(j)))
        .collect()
}

#[derive(Clone, Copy, Debug, PartialEq)]
enum Shape {
    /// `p <= C1 / mu * exp(-d^2/((4+eps)t) + C2 t)`
    Upper,
    /// `p >= 1 / (C1 mu) * exp(-d^2/((4-eps)t) - C2 t)`
    Lower,
    /// `|grad p| <= C1 / (sqrt(t) mu) * exp(-d^2/((4+eps)t) + C2 t)`
    Gradient,
    /// `|dp/dt| <= C1 / (t mu) * exp(-d^2/((4+eps)t) + C2 t)`
    TimeDerivative,
}

impl Shape {
    fn label(self) -> &'static str {
        match self {
            Shape::Upper => "upper",
            Shape::Lower => "lower",
            Shape::Gradient => "gradient",
            Shape::TimeDerivative => "time_derivative",
        }
    }

    /// `log C1` needed at this sample is `b - C2 t`; returns `b`.
    fn log_term(self, s: &KernelSample, eps: f64) -> f64 {
        let gauss_plus = s.d * s.d / ((4.0 + eps) * s.t);
        let log_mu = s.ball_mass.ln();
        match self {
            Shape::Upper => s.value.ln() + log_mu + gauss_plus,
            Shape::Lower => -s.d * s.d / ((4.0 - eps) * s.t) - s.value.ln() - log_mu,
            Shape::Gradient => s.gradient.ln() + 0.5 * s.t.ln() + log_mu + gauss_plus,
            Shape::TimeDerivative => s.time_derivative.abs().ln() + s.t.ln() + log_mu + gauss_plus,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
struct Term {
    t: f64,
    d: f64,
    b: f64,
}

/// A fitted `(C1, C2)` pair with the sample attaining `C1`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Fit {
    pub c1: f64,
    pub c2: f64,
    pub t: f64,
    pub d: f64,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GaussianFit {
    pub upper: Fit,
    pub lower: Fit,
    /// `sup e^{-C_2 t} (p_t(y, y) mu(B(y, sqrt t)))^{-1}` over on-diagonal
    /// samples, with the lower fit's `C_2`.
    pub on_diagonal_lower: f64,
}

fn collect(source: &dyn KernelSource, grid: &GridSpec) -> Result<Vec<KernelSample>> {
    let mut out = Vec::new();
    for t in grid.t_grid() {
        out.extend(
            source
                .samples(t, grid)?
                .into_iter()
                .filter(|s| s.value > 0.0 && s.ball_mass > 0.0),
        );
    }
    Ok(out)
}

fn terms(samples: &[KernelSample], shape: Shape, eps: f64) -> Vec<Term> {
    samples
        .iter()
        .map(|s| Term {
            t: s.t,
            d: s.d,
            b: shape.log_term(s, eps),
        })
        .filter(|term| !term.b.is_nan() && term.b != f64::INFINITY)
        .collect()
}

fn log_c1_at(terms: &[Term], c2: f64) -> (f64, usize) {
    let mut best = (f64::NEG_INFINITY, 0);
    for (i, term) in terms.iter().enumerate() {
        let v = term.b - c2 * term.t;
        if v > best.0 {
            best = (v, i);
        }
    }
    best
}

/// Picks `C2` minimizing `log C1(C2) + C2 * t_mean`, the log-size of the
/// bound's prefactor averaged over the time grid.
fn fit_terms(terms: &[Term], candidates: &[f64], t_mean: f64) -> Option<Fit> {
    let mut best: Option<(f64, Fit)> = None;
    for &c2 in candidates {
        let (log_c1, i) = log_c1_at(terms, c2);
        if !log_c1.is_finite() {
            continue;
        }
        let objective = log_c1 + c2 * t_mean;
        if best.as_ref().is_none_or(|(o, _)| objective < *o) {
            let term = terms[i];
            best = Some((
                objective,
                Fit {
                    c1: log_c1.exp(),
                    c2,
                    t: term.t,
                    d: term.d,
                },
            ));
        }
    }
    best.map(|(_, f)| f)
}

fn t_mean(grid: &GridSpec) -> f64 {
    let t = grid.t_grid();
    t.iter().sum::<f64>() / t.len().max(1) as f64
}

fn validate_eps(eps: f64, upper_limit: f64) -> Result<()> {
    if !(eps > 0.0 && eps < upper_limit) {
        return Err(Error::Domain(format!(
            "epsilon must lie in (0, {upper_limit}), got {eps}"
        )));
    }
    Ok(())
}

/// Fits the upper and lower Gaussian constants on `grid`.
pub fn fit_gaussian_constants(
    source: &dyn KernelSource,
    eps: f64,
    grid: &GridSpec,
) -> Result<GaussianFit> {
    validate_eps(eps, 4.0)?;
    grid.validate()?;
    let samples = collect(source, grid)?;
    let cands = c2_candidates(source.curvature());
    let tm = t_mean(grid);
    let fit = |shape| {
        fit_terms(&terms(&samples, shape, eps), &cands, tm)
            .ok_or_else(|| Error::Domain("no usable samples on the grid".into()))
    };
    let lower = fit(Shape::Lower)?;
    let on_diagonal_lower = samples
        .iter()
        .filter(|s| s.d == 0.0)
        .map(|s| (-lower.c2 * s.t).exp() / (s.value * s.ball_mass))
        .fold(f64::NAN, f64::max);
    Ok(GaussianFit {
        upper: fit(Shape::Upper)?,
        lower,
        on_diagonal_lower,
    })
}

/// Fits every shape on `grid` and on its refinement and judges drift.
fn fit_check(
    name: &str,
    source: &dyn KernelSource,
    eps: f64,
    grid: &GridSpec,
    shapes: &[Shape],
) -> Result<CheckResult> {
    validate_eps(eps, 4.0)?;
    grid.validate()?;
    let mut result = CheckResult::new(name, &source.label(), grid.summary(), FIT_DRIFT_LIMIT);
    result.constant("epsilon", eps);
    let coarse = collect(source, grid)?;
    if coarse.is_empty() {
        result.status = Status::Untrusted;
        result.note("no kernel samples inside the trusted core for this grid");
        return Ok(result);
    }
    let fine = collect(source, &grid.refined())?;
    let cands = c2_candidates(source.curvature());
    let tm = t_mean(grid);
    let negative = source.curvature() < 0.0;
    let mut tracker = MarginTracker::new(0.0);

    let mut sweep_cols: Vec<Vec<f64>> = Vec::new();
    for &shape in shapes {
        let label = shape.label();
        let coarse_terms = terms(&coarse, shape, eps);
        let fine_terms = terms(&fine, shape, eps);
        let Some(fit) = fit_terms(&coarse_terms, &cands, tm) else {
            result.status = Status::Fail;
            result.note(format!("{label}: no finite constant fits the grid"));
            sweep_cols.push(vec![f64::NAN; coarse.len()]);
            continue;
        };
        let (log_refined, _) = log_c1_at(&fine_terms, fit.c2);
        let refined = log_refined.exp();
        result.constant(&format!("{label}_c1"), fit.c1);
        result.constant(&format!("{label}_c1_refined"), refined);
        result.constant(&format!("{label}_drift"), drift(fit.c1, refined));
        if negative {
            result.constant(&format!("{label}_c2"), fit.c2);
            if let Some(fine_fit) = fit_terms(&fine_terms, &cands, tm) {
                result.constant(&format!("{label}_c2_refined"), fine_fit.c2);
                if fine_fit.c2 != fit.c2 {
                    result.note(format!(
                        "{label}: refined grid prefers C2 = {} over {}",
                        fine_fit.c2, fit.c2
                    ));
                }
            }
        }
        let d = drift(fit.c1, refined);
        let d = if d.is_finite() { d } else { f64::INFINITY };
        tracker.record(
            d,
            FIT_DRIFT_LIMIT,
            &[("t", fit.t), ("d", fit.d), (&format!("{label}_c1"), fit.c1)],
        );
        sweep_cols.push(
            coarse
                .iter()
                .map(|s| (shape.log_term(s, eps) - fit.c2 * s.t).exp())
                .collect(),
        );
    }
    result.absorb(&tracker);

    let mut header = vec!["t", "d", "x", "y", "p", "ball_mass"];
    let ratio_names: Vec<String> = shapes.iter().map(|s| format!("ratio_{}", s.label())).collect();
    header.extend(ratio_names.iter().map(|s| s.as_str()));
    let mut sweep = Sweep::new(&header);
    for (i, s) in coarse.iter().enumerate() {
        let mut row = vec![s.t, s.d, s.x as f64, s.y as f64, s.value, s.ball_mass];
        row.extend(sweep_cols.iter().map(|c| c[i]));
        sweep.push(row);
    }
    result.sweep = Some(sweep);
    if source.is_discrete() {
        result.note("discrete sample: bounds checked at every sampled core pair");
    }
    Ok(result)
}

/// Upper and lower Gaussian bounds with fitted `C1` (and `C2` when `K < 0`).
pub fn check_gaussian_bounds(
    source: &dyn KernelSource,
    eps: f64,
    grid: &GridSpec,
) -> Result<CheckResult> {
    let mut r = fit_check("gaussian_bounds", source, eps, grid, &[Shape::Upper, Shape::Lower])?;
    if r.status != Status::Untrusted {
        let fit = fit_gaussian_constants(source, eps, grid)?;
        r.constant("on_diagonal_lower", fit.on_diagonal_lower);
    }
    Ok(r)
}

pub fn check_gradient_bound(
    source: &dyn KernelSource,
    eps: f64,
    grid: &GridSpec,
) -> Result<CheckResult> {
    fit_check("gradient_bound", source, eps, grid, &[Shape::Gradient])
}

pub fn check_time_derivative(
    source: &dyn KernelSource,
    eps: f64,
    grid: &GridSpec,
) -> Result<CheckResult> {
    fit_check("time_derivative", source, eps, grid, &[Shape::TimeDerivative])
}

/// `int_{B(y, r)} p_t(x, z) dmu(z)` on a model with `d(x, y) = d`.
pub fn model_ball_mass(desc: &SpaceDescriptor, t: f64, d: f64, r: f64) -> Result<f64> {
    AnalyticSource::new(AnalyticKernel::new(desc.clone())?).ball_mass(t, d, r)
}

fn integrated_terms(
    source: &dyn KernelSource,
    grid: &GridSpec,
    eps: f64,
) -> Result<Vec<(KernelSample, f64, f64)>> {
    let mut out = Vec::new();
    for t in grid.t_grid() {
        for (s, mass) in source.ball_masses(t, grid)? {
            let log_shape = -s.d * s.d / (4.0 * (1.0 - eps) * t) - 0.5 * (1.0 + 1.0 / eps);
            out.push((s, mass, mass / log_shape.exp()));
        }
    }
    Ok(out)
}

/// Fits the largest `C` with
/// `int_{B(y, sqrt t)} p_t(x, .) >= C exp(-d^2/(4(1-eps)t) - (1 + 1/eps)/2)`.
pub fn check_integrated_lower_bound(
    source: &dyn KernelSource,
    eps: f64,
    grid: &GridSpec,
) -> Result<CheckResult> {
    validate_eps(eps, 1.0)?;
    grid.validate()?;
    let mut result = CheckResult::new(
        "integrated_lower_bound",
        &source.label(),
        grid.summary(),
        FIT_DRIFT_LIMIT,
    );
    result.constant("epsilon", eps);
    let coarse = integrated_terms(source, grid, eps)?;
    if coarse.is_empty() {
        result.status = Status::Untrusted;
        result.note("no kernel samples inside the trusted core for this grid");
        return Ok(result);
    }
    let fine = integrated_terms(source, &grid.refined(), eps)?;
    let inf = |v: &[(KernelSample, f64, f64)]| {
        v.iter()
            .enumerate()
            .fold((f64::INFINITY, 0), |acc, (i, x)| if x.2 < acc.0 { (x.2, i) } else { acc })
    };
    let (c, arg) = inf(&coarse);
    let (c_fine, _) = inf(&fine);
    result.constant("c", c);
    result.constant("c_refined", c_fine);
    let mut tracker = MarginTracker::new(0.0);
    let d = drift(c, c_fine);
    let d = if d.is_finite() { d } else { f64::INFINITY };
    let w = &coarse[arg].0;
    tracker.record(d, FIT_DRIFT_LIMIT, &[("t", w.t), ("d", w.d), ("c", c)]);
    result.absorb(&tracker);
    if !(c > 0.0 && c.is_finite()) || d > FIT_DRIFT_LIMIT {
        result.status = Status::Fail;
    }
    let mut sweep = Sweep::new(&["t", "d", "x", "y", "ball_integral", "ratio"]);
    for (s, mass, ratio) in &coarse {
        sweep.push(vec![s.t, s.d, s.x as f64, s.y as f64, *mass, *ratio]);
    }
    result.sweep = Some(sweep);
    Ok(result)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn euclid2() -> AnalyticSource {
        AnalyticSource::new(AnalyticKernel::new(SpaceDescriptor::euclidean(2)).unwrap())
    }

    #[test]
    fn euclidean_plane_constants() {
        let fit = fit_gaussian_constants(&euclid2(), 0.5, &GridSpec::analytic()).unwrap();
        assert!((fit.upper.c1 - 0.25).abs() < 1e-12);
        assert!((fit.lower.c1 - 4.0).abs() < 1e-10);
        assert_eq!(fit.upper.d, 0.0);
        assert!((fit.on_diagonal_lower - 4.0).abs() < 1e-10);
    }

    #[test]
    fn integrated_ball_mass_on_the_plane() {
        let desc = SpaceDescriptor::euclidean(2);
        let m = model_ball_mass(&desc, 1.0, 0.0, 1.0).unwrap();
        assert!((m - 0.221_199_216_928_595_1).abs() < 1e-10);
        // self-similar in t
        let m2 = model_ball_mass(&desc, 9.0, 0.0, 3.0).unwrap();
        assert!((m - m2).abs() < 1e-10);
    }
}
