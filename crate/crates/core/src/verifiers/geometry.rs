//! Volume doubling, local Poincaré, Laplacian comparison and the calculus
//! of the boundary measure `s(x0, r)`.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::analytic::quadrature::integrate;
use crate::error::{Error, Result};
use crate::spaces::{model_ball_volume, SpaceDescriptor, SpaceKind, VolumeProfile};
use crate::spectral::SpectralDecomposition;

use super::{model_volume, tau, CheckResult, MarginTracker, Status, Sweep};

/// Poincaré constants count as radius-stable when `max C_r / min C_r` stays
/// below this.
pub const POINCARE_SPREAD: f64 = 3.0;
/// Smallest radius used on samples, in units of the mean spacing.
const POINCARE_FUNCTIONS: usize = 8;

/// Where volumes and gradients come from.
#[derive(Clone, Copy)]
pub enum Geometry<'a> {
    Model(&'a SpaceDescriptor),
    Sample {
        dec: &'a SpectralDecomposition,
        center: usize,
    },
}

impl Geometry<'_> {
    fn descriptor(&self) -> &SpaceDescriptor {
        match self {
            Geometry::Model(d) => d,
            Geometry::Sample { dec, .. } => dec.space().descriptor(),
        }
    }

    fn label(&self) -> String {
        match self {
            Geometry::Model(d) => d.label(),
            Geometry::Sample { dec, .. } => {
                format!("{} (n={})", dec.space().descriptor().label(), dec.len())
            }
        }
    }
}

/// The volume-growth constant `liminf mu(B(x0, R)) / R^N`, estimated from
/// a profile.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Theta {
    pub value: f64,
    /// `0 < theta < inf`.
    pub positive: bool,
}

/// Bounded (compact) profiles have `theta = 0`. Otherwise `theta` is the
/// minimum of `vol(R) / R^N` over the largest quarter of trusted radii.
pub fn estimate_theta(profile: &VolumeProfile, n: f64) -> Theta {
    if profile.bounded {
        return Theta {
            value: 0.0,
            positive: false,
        };
    }
    let trusted: Vec<usize> = (0..profile.r_grid.len())
        .filter(|&i| profile.trusted[i] && profile.r_grid[i] > 0.0)
        .collect();
    if trusted.is_empty() {
        return Theta {
            value: f64::NAN,
            positive: false,
        };
    }
    let start = trusted.len() - trusted.len().div_ceil(4);
    let value = trusted[start..]
        .iter()
        .map(|&i| profile.vol[i] / profile.r_grid[i].powf(n))
        .fold(f64::INFINITY, f64::min);
    Theta {
        value,
        positive: value > 0.0 && value.is_finite(),
    }
}

/// Comparison ratio `(R/r)^N` (`K >= 0`) or `V_{K,N}(R) / V_{K,N}(r)`.
fn comparison_ratio(k: f64, n: f64, r: f64, big_r: f64) -> f64 {
    if k >= 0.0 {
        (big_r / r).powf(n)
    } else {
        model_volume(k, n, big_r) / model_volume(k, n, r)
    }
}

/// Doubling `mu(B(R)) / mu(B(r)) <= comparison ratio` over all pairs of
/// `r_grid`, and on samples the local Poincaré constant
/// `C_r = sup_f int_B |f - f_B|^2 / (r^2 int_B Gamma(f))` per radius.
pub fn check_doubling_poincare(
    geometry: Geometry<'_>,
    r_grid: &[f64],
    tolerance: f64,
    seed: u64,
) -> Result<CheckResult> {
    let desc = geometry.descriptor();
    let (k, n) = (desc.curvature, desc.dimension);
    let radii: Vec<f64> = match geometry {
        Geometry::Model(_) => r_grid.iter().copied().filter(|&r| r > 0.0).collect(),
        Geometry::Sample { dec, center } => {
            let space = dec.space();
            // stencil radius, and one cell of counting volume within tolerance
            let min_r = (4.0 * dec.generator().bandwidth().sqrt()).max(space.mean_spacing() / tolerance);
            let reach = space.boundary_distance()[center];
            r_grid
                .iter()
                .copied()
                .filter(|&r| r >= min_r && r <= reach)
                .collect()
        }
    };
    let grid = format!("{} radii in [{:?}, {:?}]", radii.len(), radii.first(), radii.last());
    let mut result = CheckResult::new("doubling_poincare", &geometry.label(), grid, tolerance);
    if radii.len() < 2 {
        result.status = Status::Untrusted;
        result.note("fewer than two trusted radii on this sample");
        return Ok(result);
    }
    let volume = |r: f64| -> Result<f64> {
        match geometry {
            Geometry::Model(d) => model_ball_volume(d, r),
            Geometry::Sample { dec, center } => Ok(dec.space().ball_volume(center, r)),
        }
    };
    let vols = radii.iter().map(|&r| volume(r)).collect::<Result<Vec<_>>>()?;
    let mut tracker = MarginTracker::new(tolerance);
    let mut sweep = Sweep::new(&["r", "R", "volume_ratio", "comparison"]);
    for i in 0..radii.len() {
        for j in (i + 1)..radii.len() {
            let lhs = vols[j] / vols[i];
            let rhs = comparison_ratio(k, n, radii[i], radii[j]);
            tracker.record(lhs, rhs, &[("r", radii[i]), ("R", radii[j])]);
            sweep.push(vec![radii[i], radii[j], lhs, rhs]);
        }
    }
    if k < 0.0 {
        result.note("K < 0 uses the Bishop-Gromov ratio V_{K,N}(R)/V_{K,N}(r) as the comparison volume");
    }
    result.absorb(&tracker);
    result.sweep = Some(sweep);

    match geometry {
        Geometry::Model(_) => {
            result.note("Poincaré constants are fitted on samples only");
        }
        Geometry::Sample { dec, center } => {
            let constants = poincare_constants(dec, center, &radii, seed);
            let finite: Vec<f64> = constants.iter().map(|c| c.1).filter(|c| c.is_finite()).collect();
            let max = finite.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let min = finite.iter().cloned().fold(f64::INFINITY, f64::min);
            for (r, c) in &constants {
                result.constant(&format!("poincare_c_r={r:.6}"), *c);
            }
            result.constant("poincare_max", max);
            result.constant("poincare_min", min);
            let spread = max / min;
            result.constant("poincare_spread", spread);
            if k >= 0.0 && !(spread <= POINCARE_SPREAD) && result.status == Status::Pass {
                result.status = Status::Fail;
                result.note(format!(
                    "Poincaré constants vary by {spread:.3}x across radii (limit {POINCARE_SPREAD})"
                ));
            }
        }
    }
    Ok(result)
}

/// Scale-invariant test functions per ball: distances to random points of
/// the ball and Gaussian bumps of width proportional to `r`.
fn poincare_constants(
    dec: &SpectralDecomposition,
    center: usize,
    radii: &[f64],
    seed: u64,
) -> Vec<(f64, f64)> {
    let space = dec.space();
    let gen = dec.generator();
    let weights = space.weights();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    radii
        .iter()
        .map(|&r| {
            let ball = space.ball(center, r);
            let mut best = f64::NAN;
            for m in 0..POINCARE_FUNCTIONS {
                let z = ball[rng.random_range(0..ball.len())];
                let dz = space.distance_row(z);
                let f: Vec<f64> = if m % 2 == 0 {
                    dz.to_vec()
                } else {
                    let w = r * rng.random_range(0.3..1.0);
                    dz.iter().map(|d| (-d * d / (2.0 * w * w)).exp()).collect()
                };
                let gamma = gen.carre_du_champ(&f);
                let mass: f64 = ball.iter().map(|&i| weights[i]).sum();
                let mean = ball.iter().map(|&i| weights[i] * f[i]).sum::<f64>() / mass;
                let lhs: f64 = ball.iter().map(|&i| weights[i] * (f[i] - mean).powi(2)).sum();
                let energy: f64 = ball.iter().map(|&i| weights[i] * gamma[i]).sum();
                if energy > 0.0 {
                    let c = lhs / (r * r * energy);
                    if !(c <= best) {
                        best = c;
                    }
                }
            }
            (r, best)
        })
        .collect()
}

/// Radial Laplacian of the distance on a model, `(N-1)/r` or `2 coth r`.
fn model_distance_laplacian(desc: &SpaceDescriptor, r: f64) -> Result<f64> {
    match desc.kind {
        SpaceKind::Euclidean => Ok((desc.dimension - 1.0) / r),
        SpaceKind::Hyperbolic3 => Ok(2.0 / r.tanh()),
        SpaceKind::Circle => Ok(0.0),
        SpaceKind::Sampled => Err(Error::Domain("model Laplacian needs a model space".into())),
    }
}

/// `(N tau_{K,N}(r) - 1) / r`.
fn comparison_bound(k: f64, n: f64, r: f64) -> f64 {
    (n * tau(k, n, r) - 1.0) / r
}

/// `Delta d_{x0} <= (N tau_{K,N}(d) - 1) / d` on a model over `r_grid`.
pub fn check_laplacian_comparison(
    desc: &SpaceDescriptor,
    r_grid: &[f64],
    tolerance: f64,
) -> Result<CheckResult> {
    if r_grid.iter().any(|&r| !(r > 0.0)) {
        return Err(Error::Domain("radii must be positive (the base point is excluded)".into()));
    }
    let (k, n) = (desc.curvature, desc.dimension);
    let half = desc.circumference.map(|l| 0.5 * l).unwrap_or(f64::INFINITY);
    let radii: Vec<f64> = r_grid.iter().copied().filter(|&r| r < half).collect();
    let grid = format!("{} radii in [{:?}, {:?}]", radii.len(), radii.first(), radii.last());
    let mut result = CheckResult::new("laplacian_comparison", &desc.label(), grid, tolerance);
    let mut tracker = MarginTracker::new(tolerance);
    let mut sweep = Sweep::new(&["r", "laplacian", "bound"]);
    for &r in &radii {
        let lhs = model_distance_laplacian(desc, r)?;
        let rhs = comparison_bound(k, n, r);
        tracker.record(lhs, rhs, &[("r", r)]);
        sweep.push(vec![r, lhs, rhs]);
    }
    if half > 1.0 {
        result.constant("laplacian_at_1", model_distance_laplacian(desc, 1.0)?);
        result.constant("bound_at_1", comparison_bound(k, n, 1.0));
    }
    if half.is_infinite() {
        result.constant("laplacian_at_50", model_distance_laplacian(desc, 50.0)?);
        result.constant("bound_at_50", comparison_bound(k, n, 50.0));
    }
    result.absorb(&tracker);
    result.sweep = Some(sweep);
    Ok(result)
}

/// `A d(center, .) <= (N tau - 1)/d` at core points whose generator stencil
/// (radius `4 sqrt(h)`) neither contains the base point nor leaves the
/// sample. Margins are relative to `max(|bound|, 1/d)`, the natural size of
/// `Delta d` at radius `d`.
pub fn check_laplacian_comparison_discrete(
    dec: &SpectralDecomposition,
    center: usize,
    tolerance: f64,
) -> Result<CheckResult> {
    let space = dec.space();
    let gen = dec.generator();
    let desc = space.descriptor();
    let (k, n) = (desc.curvature, desc.dimension);
    let h = gen.bandwidth();
    let stencil = 4.0 * h.sqrt();
    let d: Vec<f64> = space.distance_row(center).to_vec();
    let ad = gen.apply(&d);
    let label = format!("{} (n={})", desc.label(), dec.len());
    let mut result = CheckResult::new(
        "laplacian_comparison",
        &label,
        format!("core points with d > 4 sqrt(h) = {:.4}", stencil),
        tolerance,
    );
    let mut tracker = MarginTracker::new(tolerance);
    let mut sweep = Sweep::new(&["point", "r", "laplacian", "bound"]);
    let bd = space.boundary_distance();
    for i in space.core_indices() {
        let r = d[i];
        // inside the stencil the point mass of Delta d at the base point
        // is visible, and the bound holds away from it
        if r <= stencil || bd[i] <= stencil {
            continue;
        }
        let rhs = comparison_bound(k, n, r);
        tracker.set_floor(rhs.abs().max(1.0 / r));
        tracker.record(ad[i], rhs, &[("point", i as f64), ("r", r)]);
        sweep.push(vec![i as f64, r, ad[i], rhs]);
    }
    if tracker.count == 0 {
        result.status = Status::Untrusted;
        result.note("no core point lies at d > 4 sqrt(h) with its stencil inside the sample");
        return Ok(result);
    }
    result.absorb(&tracker);
    result.sweep = Some(sweep);
    Ok(result)
}

/// Boundary-measure calculus on a volume profile:
/// `s(R)/s(r) <= (R/r)^{N-1}`, `s(R) >= N theta R^{N-1}`, and the co-area
/// identity `int_{B(R)} f = int_0^R |f|_{dB(r)} dr` for each `(r, ball
/// integral)` table in `functions` (the profile's own volume is always
/// included as `f = 1`).
pub fn check_boundary_calculus(
    desc: &SpaceDescriptor,
    profile: &VolumeProfile,
    functions: &[(Vec<f64>, Vec<f64>)],
    tolerance: f64,
) -> Result<CheckResult> {
    let (k, n) = (desc.curvature, desc.dimension);
    let label = desc.label();
    let grid = format!(
        "{} radii in [{:?}, {:?}]",
        profile.r_grid.len(),
        profile.r_grid.first(),
        profile.r_grid.last()
    );
    if k < 0.0 || n <= 1.0 {
        let mut r = CheckResult::with_status(
            "boundary_calculus",
            &label,
            Status::HypothesisNotMet,
            "boundary-measure bounds assume K = 0 and N > 1",
        );
        r.grid = grid;
        return Ok(r);
    }
    let mut result = CheckResult::new("boundary_calculus", &label, grid, tolerance);
    let idx: Vec<usize> = (0..profile.r_grid.len())
        .filter(|&i| profile.trusted[i] && profile.r_grid[i] > 0.0 && profile.s[i] > 0.0)
        .collect();
    if idx.is_empty() {
        result.status = Status::Untrusted;
        result.note("no trusted radius with positive boundary measure");
        return Ok(result);
    }
    let mut ratio = MarginTracker::new(tolerance);
    for (a, &i) in idx.iter().enumerate() {
        for &j in &idx[a + 1..] {
            let (r, big_r) = (profile.r_grid[i], profile.r_grid[j]);
            ratio.record(
                profile.s[j] / profile.s[i],
                (big_r / r).powf(n - 1.0),
                &[("r", r), ("R", big_r)],
            );
        }
    }
    result.constant("s_ratio_worst_relative_margin", worst(&ratio));

    let theta = estimate_theta(profile, n);
    result.constant("theta", theta.value);
    let mut lower = MarginTracker::new(tolerance);
    if theta.positive {
        for &i in &idx {
            let r = profile.r_grid[i];
            lower.record(n * theta.value * r.powf(n - 1.0), profile.s[i], &[("R", r)]);
        }
        result.constant("s_lower_worst_relative_margin", worst(&lower));
    } else {
        result.note("theta = 0: the lower boundary-measure bound is hypothesis_not_met");
    }

    let mut coarea = MarginTracker::new(tolerance);
    let mut tables = vec![(profile.vol.clone(), profile.s.clone())];
    tables.extend(functions.iter().cloned());
    let mut sweep = Sweep::new(&["function", "R", "ball_integral", "coarea_integral"]);
    for (fi, (ball, boundary)) in tables.iter().enumerate() {
        let integrated: Vec<f64> = if fi == 0 && profile.delta == 0.0 && desc.is_model() {
            profile
                .r_grid
                .iter()
                .map(|&r| model_coarea_integral(desc, r))
                .collect()
        } else {
            // anchored at the first radius: sub-resolution balls are not integrated
            let cum = crate::spaces::cumulative_trapezoid(&profile.r_grid, boundary);
            cum.iter().map(|v| ball[0] + v - cum[0]).collect()
        };
        for &i in &idx {
            let (lhs, rhs) = (ball[i], integrated[i]);
            coarea.record(lhs, rhs, &[("function", fi as f64), ("R", profile.r_grid[i])]);
            coarea.record(rhs, lhs, &[("function", fi as f64), ("R", profile.r_grid[i])]);
            sweep.push(vec![fi as f64, profile.r_grid[i], lhs, rhs]);
        }
    }
    result.constant("coarea_worst_relative_margin", worst(&coarea));

    ratio.merge(lower);
    ratio.merge(coarea);
    result.absorb(&ratio);
    if !theta.positive && result.status == Status::Pass {
        result.status = Status::HypothesisNotMet;
    }
    result.sweep = Some(sweep);
    Ok(result)
}

fn worst(t: &MarginTracker) -> f64 {
    t.worst.as_ref().map(|w| w.relative).unwrap_or(f64::NAN)
}

/// `int_0^R s(r) dr` for a closed-form boundary measure.
fn model_coarea_integral(desc: &SpaceDescriptor, r: f64) -> f64 {
    let s = |x: f64| crate::spaces::model_boundary_measure(desc, x).unwrap_or(f64::NAN);
    integrate(s, 0.0, r, 1e-13 * (1.0 + r.powf(desc.dimension)), 4000).value
}
