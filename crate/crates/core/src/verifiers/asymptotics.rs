//! Large-time behaviour, stability of heat flows against ball averages, and
//! compactness diagnostics.

use crate::analytic::quadrature::integrate;
use crate::analytic::AnalyticKernel;
use crate::error::{Error, Result};
use crate::spaces::{model_ball_volume, SpaceDescriptor, SpaceKind};
use crate::spectral::SpectralDecomposition;

use super::{omega, resolved_time, CheckResult, MarginTracker, Status, Sweep};

/// Final relative error allowed for the large-time limit.
pub const LARGE_TIME_LIMIT_ERROR: f64 = 0.02;
/// Points in the Cauchy tail of a net.
pub const CAUCHY_TAIL: usize = 5;
/// Cauchy-tail tolerance as a fraction of `sup |f|`.
pub const CAUCHY_TOLERANCE: f64 = 1e-2;
/// Relative agreement of the two limits.
pub const LIMIT_AGREEMENT: f64 = 0.02;
/// Quadrature accuracy of both nets; five orders below the Cauchy tolerance.
const STABILITY_QUADRATURE_TOL: f64 = 1e-7;

/// Why `0 < theta < inf` with integer `N >= 2` and `K = 0` fails for a
/// descriptor, if it does.
fn growth_hypothesis(desc: &SpaceDescriptor, compact: bool) -> Option<String> {
    if compact {
        return Some("bounded volume: theta = lim mu(B(R))/R^N = 0".into());
    }
    if desc.curvature != 0.0 {
        return Some(format!(
            "K = {} gives exponential volume growth: theta is not finite",
            desc.curvature
        ));
    }
    let n = desc.dimension;
    if n.fract() != 0.0 || n < 2.0 {
        return Some(format!("the large-time limits need an integer N >= 2, got N = {n}"));
    }
    None
}

/// The large-time constant `omega(N) (4 pi)^{-N/2}`.
pub fn large_time_limit(n: f64) -> f64 {
    omega(n) * (4.0 * std::f64::consts::PI).powf(-0.5 * n)
}

/// The sequence `a(t) = mu(B(x0, sqrt t)) p_t(x, y)` comes from a model at a
/// fixed distance, or from a sample at two points (`x0 = x`).
#[derive(Clone, Copy)]
pub enum LargeTimeInput<'a> {
    Analytic { kernel: &'a AnalyticKernel, d: f64 },
    Discrete { dec: &'a SpectralDecomposition, x: usize, y: usize },
}

/// Times at which a truncated sample is still trusted, `t <= (R_max/4)^2`.
fn trusted_times(desc: &SpaceDescriptor, dec: &SpectralDecomposition, t_grid: &[f64]) -> Vec<f64> {
    let cap = desc
        .truncation_radius
        .map(|r| (0.25 * r).powi(2))
        .unwrap_or(f64::INFINITY);
    let floor = resolved_time(dec);
    t_grid.iter().copied().filter(|&t| t >= floor && t <= cap).collect()
}

/// Convergence of `a(t)` to `omega(N)(4 pi)^{-N/2}`. Passes when the final
/// relative error is at most 2% and no larger than the first one.
pub fn check_large_time(
    input: LargeTimeInput<'_>,
    t_grid: &[f64],
    tolerance: f64,
) -> Result<CheckResult> {
    if t_grid.iter().any(|&t| !(t > 0.0)) {
        return Err(Error::Domain("times must be positive".into()));
    }
    let (desc, compact, label) = match input {
        LargeTimeInput::Analytic { kernel, .. } => {
            let d = kernel.model();
            (d.clone(), d.is_compact(), d.label())
        }
        LargeTimeInput::Discrete { dec, .. } => {
            let s = dec.space();
            let d = s.descriptor();
            (d.clone(), s.is_untruncated() && d.is_compact(), format!("{} (n={})", d.label(), dec.len()))
        }
    };
    let times = match input {
        LargeTimeInput::Analytic { .. } => t_grid.to_vec(),
        LargeTimeInput::Discrete { dec, .. } => trusted_times(&desc, dec, t_grid),
    };
    let grid = format!("{} times in [{:?}, {:?}]", times.len(), times.first(), times.last());
    let mut result = CheckResult::new("large_time", &label, grid, tolerance);
    let limit = large_time_limit(desc.dimension);
    result.constant("limit", limit);
    let mut sweep = Sweep::new(&["t", "ball_volume", "kernel", "a", "relative_error"]);
    let mut errors = Vec::with_capacity(times.len());
    for &t in &times {
        let (vol, p) = match input {
            LargeTimeInput::Analytic { kernel, d } => {
                (model_ball_volume(kernel.model(), t.sqrt())?, kernel.value(t, d)?)
            }
            LargeTimeInput::Discrete { dec, x, y } => {
                (dec.space().ball_volume(x, t.sqrt()), dec.heat_column(y, t)[x])
            }
        };
        let a = vol * p;
        let err = (a - limit).abs() / limit;
        errors.push(err);
        sweep.push(vec![t, vol, p, a, err]);
    }
    result.sweep = Some(sweep);
    if let Some(reason) = growth_hypothesis(&desc, compact) {
        result.status = Status::HypothesisNotMet;
        result.note(reason);
        if let Some(last) = result.sweep.as_ref().and_then(|s| s.rows.last()) {
            result.constant("final_a", last[3]);
        }
        return Ok(result);
    }
    let (Some(&first), Some(&last)) = (errors.first(), errors.last()) else {
        result.status = Status::Untrusted;
        result.note("no time in the trusted range 50h <= t <= (R_max/4)^2");
        return Ok(result);
    };
    let final_row = result.sweep.as_ref().and_then(|s| s.rows.last()).cloned().unwrap_or_default();
    result.constant("final_t", final_row[0]);
    result.constant("final_a", final_row[3]);
    result.constant("final_relative_error", last);
    result.constant("first_relative_error", first);
    let mut tracker = MarginTracker::new(tolerance);
    tracker.record(last, LARGE_TIME_LIMIT_ERROR, &[("t", final_row[0])]);
    // monotone in trend: the error must not end above where it started
    tracker.record(last, first + tolerance, &[("t", final_row[0])]);
    result.absorb(&tracker);
    Ok(result)
}

/// Data for the stability check: a bounded function on a model (with its
/// supremum) evaluated around `x`, or a vector on a sample around node `x`.
pub enum StabilityInput<'a> {
    Analytic {
        kernel: &'a AnalyticKernel,
        f: &'a (dyn Fn(&[f64]) -> f64 + Sync),
        f_sup: f64,
        x: Vec<f64>,
    },
    Discrete {
        dec: &'a SpectralDecomposition,
        f: &'a [f64],
        x: usize,
    },
}

/// Average of `f` over the Euclidean ball `B(x, r)` by nested quadrature.
fn euclidean_ball_average(f: &(dyn Fn(&[f64]) -> f64 + Sync), x: &[f64], r: f64) -> Result<f64> {
    let tol = STABILITY_QUADRATURE_TOL;
    let max = 400;
    let two_pi = 2.0 * std::f64::consts::PI;
    let value = match x.len() {
        1 => integrate(|s| f(&[x[0] + s]), -r, r, tol * r, max).value / (2.0 * r),
        2 => {
            let shell = |rho: f64| {
                integrate(
                    |phi| f(&[x[0] + rho * phi.cos(), x[1] + rho * phi.sin()]),
                    0.0,
                    two_pi,
                    tol,
                    max,
                )
                .value
                    * rho
            };
            integrate(shell, 0.0, r, tol * r * r, max).value / (std::f64::consts::PI * r * r)
        }
        3 => {
            let shell = |rho: f64| {
                let polar = |u: f64| {
                    let s = (1.0 - u * u).max(0.0).sqrt();
                    integrate(
                        |phi| {
                            f(&[
                                x[0] + rho * s * phi.cos(),
                                x[1] + rho * s * phi.sin(),
                                x[2] + rho * u,
                            ])
                        },
                        0.0,
                        two_pi,
                        tol,
                        max,
                    )
                    .value
                };
                integrate(polar, -1.0, 1.0, tol, max).value * rho * rho
            };
            integrate(shell, 0.0, r, tol * r.powi(3), max).value
                / (4.0 / 3.0 * std::f64::consts::PI * r.powi(3))
        }
        n => return Err(Error::Domain(format!("ball averages support N <= 3, got {n}"))),
    };
    Ok(value)
}

/// Cauchy tail: `max |v_i - v_last|` over the last points.
fn cauchy_tail(values: &[f64]) -> f64 {
    let Some(&last) = values.last() else {
        return f64::NAN;
    };
    let start = values.len().saturating_sub(CAUCHY_TAIL);
    values[start..].iter().map(|v| (v - last).abs()).fold(0.0, f64::max)
}

/// Existence of `lim_t H_t f(x)` against existence of
/// `lim_r` of the ball averages of `f` around `x`. Each net counts as
/// convergent when its Cauchy tail over the last five grid points is at most
/// `1e-2 sup|f|`; the check passes when the classifications agree and
/// convergent limits agree within 2%.
pub fn check_stability(
    input: &StabilityInput<'_>,
    t_grid: &[f64],
    r_grid: &[f64],
    tolerance: f64,
) -> Result<CheckResult> {
    if t_grid.iter().chain(r_grid).any(|&v| !(v > 0.0)) {
        return Err(Error::Domain("times and radii must be positive".into()));
    }
    let (desc, compact, label) = match input {
        StabilityInput::Analytic { kernel, .. } => {
            let d = kernel.model();
            (d.clone(), d.is_compact(), d.label())
        }
        StabilityInput::Discrete { dec, .. } => {
            let s = dec.space();
            let d = s.descriptor();
            (d.clone(), s.is_untruncated() && d.is_compact(), format!("{} (n={})", d.label(), dec.len()))
        }
    };
    let (times, radii, f_sup) = match input {
        StabilityInput::Analytic { f_sup, .. } => (t_grid.to_vec(), r_grid.to_vec(), *f_sup),
        StabilityInput::Discrete { dec, f, x } => {
            let reach = dec.space().boundary_distance()[*x];
            let radii: Vec<f64> = r_grid.iter().copied().filter(|&r| r <= reach).collect();
            let sup = f.iter().fold(0.0_f64, |m, v| m.max(v.abs()));
            (trusted_times(&desc, dec, t_grid), radii, sup)
        }
    };
    if !f_sup.is_finite() {
        return Err(Error::Domain("f must be bounded".into()));
    }
    let grid = format!(
        "{} times in [{:?}, {:?}], {} radii in [{:?}, {:?}]",
        times.len(),
        times.first(),
        times.last(),
        radii.len(),
        radii.first(),
        radii.last()
    );
    let mut result = CheckResult::new("stability", &label, grid, tolerance);

    let heat: Vec<f64> = match input {
        StabilityInput::Analytic { kernel, f, x, .. } => times
            .iter()
            .map(|&t| {
                kernel
                    .semigroup_quadrature_tol(*f, t, x, STABILITY_QUADRATURE_TOL)
                    .map(|q| q.value)
            })
            .collect::<Result<_>>()?,
        StabilityInput::Discrete { dec, f, x } => times.iter().map(|&t| dec.heat(f, t)[*x]).collect(),
    };
    let averages: Vec<f64> = match input {
        StabilityInput::Analytic { kernel, f, x, .. } => {
            if kernel.model().kind == SpaceKind::Euclidean {
                radii
                    .iter()
                    .map(|&r| euclidean_ball_average(*f, x, r))
                    .collect::<Result<_>>()?
            } else {
                Vec::new()
            }
        }
        StabilityInput::Discrete { dec, f, x } => {
            let space = dec.space();
            radii
                .iter()
                .map(|&r| space.ball_integral(*x, r, f) / space.ball_volume(*x, r))
                .collect()
        }
    };

    let mut sweep = Sweep::new(&["net", "parameter", "value"]);
    for (t, v) in times.iter().zip(&heat) {
        sweep.push(vec![0.0, *t, *v]);
    }
    for (r, v) in radii.iter().zip(&averages) {
        sweep.push(vec![1.0, *r, *v]);
    }
    result.sweep = Some(sweep);

    let cauchy_tol = CAUCHY_TOLERANCE * f_sup;
    let heat_tail = cauchy_tail(&heat);
    let avg_tail = cauchy_tail(&averages);
    result.constant("heat_tail", heat_tail);
    result.constant("average_tail", avg_tail);
    result.constant("cauchy_tolerance", cauchy_tol);
    if let Some(&v) = heat.last() {
        result.constant("heat_limit", v);
    }
    if let Some(&v) = averages.last() {
        result.constant("average_limit", v);
    }

    if let Some(reason) = growth_hypothesis(&desc, compact) {
        result.status = Status::HypothesisNotMet;
        result.note(reason);
        return Ok(result);
    }
    if heat.len() < CAUCHY_TAIL || averages.len() < CAUCHY_TAIL {
        result.status = Status::Untrusted;
        result.note(format!("each net needs at least {CAUCHY_TAIL} trusted grid points"));
        return Ok(result);
    }
    let heat_conv = heat_tail <= cauchy_tol;
    let avg_conv = avg_tail <= cauchy_tol;
    result.constant("heat_convergent", f64::from(u8::from(heat_conv)));
    result.constant("average_convergent", f64::from(u8::from(avg_conv)));
    let mut tracker = MarginTracker::new(tolerance);
    if heat_conv != avg_conv {
        result.note("one net converges and the other does not");
        tracker.record(1.0, 0.0, &[("t", *times.last().unwrap()), ("r", *radii.last().unwrap())]);
    } else if heat_conv {
        let (a, b) = (*heat.last().unwrap(), *averages.last().unwrap());
        let scale = a.abs().max(b.abs()).max(cauchy_tol);
        tracker.set_floor(LIMIT_AGREEMENT * scale);
        tracker.record(
            (a - b).abs(),
            LIMIT_AGREEMENT * scale,
            &[("t", *times.last().unwrap()), ("r", *radii.last().unwrap())],
        );
    } else {
        result.note("neither net converges on this grid");
        tracker.record(0.0, 0.0, &[]);
    }
    result.absorb(&tracker);
    Ok(result)
}

/// Input for the compactness diagnostic.
#[derive(Clone, Copy)]
pub enum CompactnessInput<'a> {
    Analytic(&'a AnalyticKernel),
    /// A sample and the base point of the inverse-kernel integral.
    Discrete(&'a SpectralDecomposition, usize),
}

/// Trace `int p_t0(x, x) dmu` and inverse-kernel integral
/// `int p_t0(x, y)^{-1} dmu(y)`. Both are finite on compact spaces and
/// infinite otherwise; on samples they are always finite and only their
/// growth under `R_max` doubling is meaningful (see
/// [`check_compactness_sequence`]).
pub fn check_compactness(input: CompactnessInput<'_>, t0: f64) -> Result<CheckResult> {
    if !(t0 > 0.0) {
        return Err(Error::Domain(format!("t0 must be positive, got {t0}")));
    }
    let grid = format!("t0 = {t0}");
    match input {
        CompactnessInput::Analytic(kernel) => {
            let desc = kernel.model();
            let mut result = CheckResult::new("compactness", &desc.label(), grid, 0.0);
            if let Some(l) = desc.circumference {
                let trace = l * kernel.value(t0, 0.0)?;
                let half = 0.5 * l;
                let inv = |s: f64| 1.0 / kernel.value(t0, s).unwrap_or(f64::NAN);
                let q = integrate(inv, 0.0, half, 1e-10, 2000);
                let antipode = kernel.value(t0, half)?;
                result.constant("trace", trace);
                result.constant("inverse_integral", 2.0 * q.value);
                result.constant("inverse_integral_bound", l / antipode);
                result.constant("antipodal_kernel", antipode);
                result.note("compact: both integrals are finite");
            } else {
                result.constant("trace", f64::INFINITY);
                result.constant("inverse_integral", f64::INFINITY);
                result.note("non-compact model: p_t0(x, x) is constant in x and the volume is infinite");
            }
            Ok(result)
        }
        CompactnessInput::Discrete(dec, x) => {
            let space = dec.space();
            let label = format!("{} (n={})", space.descriptor().label(), dec.len());
            let mut result = CheckResult::new("compactness", &label, grid, 0.0);
            let trace = dec.trace(t0);
            let col = dec.heat_column(x, t0);
            let inverse: f64 = col.iter().zip(space.weights()).map(|(p, m)| m / p).sum();
            result.constant("trace", trace);
            result.constant("inverse_integral", inverse);
            if !col.iter().all(|&p| p > 0.0) {
                result.note("some kernel entries are not positive; the inverse integral is not meaningful");
            }
            if !space.is_untruncated() {
                result.note("truncated sample: divergence shows only as growth under R_max doubling");
            }
            Ok(result)
        }
    }
}

/// Growth of the trace along a sequence of samples with increasing `R_max`.
/// On untruncated compact samples the values must stay bounded (within
/// `tolerance` relative of one another); on truncated samples the trace must
/// not decrease along the sequence.
pub fn check_compactness_sequence(
    decs: &[&SpectralDecomposition],
    t0: f64,
    tolerance: f64,
) -> Result<CheckResult> {
    if decs.len() < 2 {
        return Err(Error::Domain("the compactness sequence needs at least two samples".into()));
    }
    if !(t0 > 0.0) {
        return Err(Error::Domain(format!("t0 must be positive, got {t0}")));
    }
    let first = decs[0].space().descriptor();
    let compact = decs.iter().all(|d| d.space().is_untruncated()) && first.is_compact();
    let label = format!("{} x{}", first.label(), decs.len());
    let mut result = CheckResult::new("compactness_sequence", &label, format!("t0 = {t0}"), tolerance);
    let mut sweep = Sweep::new(&["r_max", "n", "trace"]);
    let traces: Vec<f64> = decs.iter().map(|d| d.trace(t0)).collect();
    for (d, tr) in decs.iter().zip(&traces) {
        let r = d.space().descriptor().truncation_radius.unwrap_or(f64::NAN);
        sweep.push(vec![r, d.len() as f64, *tr]);
    }
    let mut tracker = MarginTracker::new(tolerance);
    for (i, w) in traces.windows(2).enumerate() {
        if compact {
            tracker.record(w[1], w[0] * (1.0 + tolerance), &[("step", i as f64)]);
            tracker.record(w[0], w[1] * (1.0 + tolerance), &[("step", i as f64)]);
        } else {
            tracker.record(w[0], w[1], &[("step", i as f64)]);
        }
    }
    for (i, tr) in traces.iter().enumerate() {
        result.constant(&format!("trace_{i}"), *tr);
    }
    result.constant(
        "growth_ratio",
        traces.last().unwrap() / traces.first().unwrap(),
    );
    result.absorb(&tracker);
    result.sweep = Some(sweep);
    if compact {
        result.note("compact samples: the trace stays bounded");
    } else {
        result.note("truncated samples: the trace grows with R_max, signalling divergence");
    }
    Ok(result)
}
