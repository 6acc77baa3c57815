//! Checkers for the heat-kernel inequalities.
//!
//! Every checker sweeps a parameter grid, evaluates the two sides of one
//! inequality, and returns a [`CheckResult`]. Existential constants ("there
//! exists C") are fitted as on-grid suprema of `LHS / shape` and judged by
//! their drift when the grid is refined.
//!
//! Margins are `RHS - LHS`. The reported witness is the grid point with the
//! smallest relative margin `(RHS - LHS) / max(|LHS|, |RHS|)`, and a check
//! fails exactly when that relative margin is below `-tolerance`.

mod asymptotics;
mod functions;
mod gaussian;
mod geometry;
mod harnack;
mod li_yau;
mod semigroup;
mod sources;

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::spaces::unit_ball_volume;
use crate::spectral::SpectralDecomposition;

pub use asymptotics::{
    check_compactness, check_compactness_sequence, check_large_time, check_stability,
    large_time_limit, CompactnessInput, LargeTimeInput, StabilityInput,
};
pub use functions::{sample_batch, BatchKind, ContinuumFunction};
pub use gaussian::{
    check_gaussian_bounds, check_gradient_bound, check_integrated_lower_bound,
    check_time_derivative, fit_gaussian_constants, model_ball_mass, GaussianFit,
};
pub use geometry::{
    check_boundary_calculus, check_doubling_poincare, check_laplacian_comparison,
    check_laplacian_comparison_discrete, estimate_theta, Geometry, Theta, POINCARE_SPREAD,
};
pub use harnack::{
    check_harnack, check_harnack_discrete, harnack_rhs_factor, harnack_rhs_factor_integrated,
};
pub use li_yau::{
    check_bakry_ledoux, check_caccioppoli, check_caccioppoli_line, check_li_yau,
    check_weighted_contraction,
};
pub use semigroup::{
    arc_partition, ball_catalog, check_davies_gaffney, check_riesz, check_semigroup_axioms,
    check_semigroup_axioms_analytic, BallPair, DaviesGaffneyInput, RieszInput,
};
pub use sources::{AnalyticSource, DiscreteSource, KernelSample, KernelSource};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Status {
    Pass,
    Fail,
    HypothesisNotMet,
    Untrusted,
    /// Set by the runner when a checker errors or panics.
    Error,
}

impl std::fmt::Display for Status {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let s = match self {
            Status::Pass => "pass",
            Status::Fail => "fail",
            Status::HypothesisNotMet => "hypothesis_not_met",
            Status::Untrusted => "untrusted",
            Status::Error => "error",
        };
        f.write_str(s)
    }
}

/// Plot-ready table of one grid sweep.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Sweep {
    pub header: Vec<String>,
    pub rows: Vec<Vec<f64>>,
}

impl Sweep {
    pub fn new(header: &[&str]) -> Self {
        Sweep {
            header: header.iter().map(|s| s.to_string()).collect(),
            rows: Vec::new(),
        }
    }

    pub fn push(&mut self, row: Vec<f64>) {
        debug_assert_eq!(row.len(), self.header.len());
        self.rows.push(row);
    }

    /// CSV with a header row and 17-significant-digit floats.
    pub fn to_csv(&self) -> String {
        let mut out = self.header.join(",");
        out.push('\n');
        for row in &self.rows {
            let cells: Vec<String> = row.iter().map(|v| crate::spaces::fmt_f64(*v)).collect();
            out.push_str(&cells.join(","));
            out.push('\n');
        }
        out
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CheckResult {
    pub name: String,
    pub space: String,
    pub grid: String,
    pub status: Status,
    /// `RHS - LHS` at the witness (most negative relative margin).
    pub worst_margin: Option<f64>,
    pub tolerance: f64,
    pub constants: BTreeMap<String, f64>,
    pub witness: BTreeMap<String, f64>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub notes: Vec<String>,
    #[serde(skip)]
    pub sweep: Option<Sweep>,
}

impl CheckResult {
    pub fn new(name: &str, space: &str, grid: String, tolerance: f64) -> Self {
        CheckResult {
            name: name.to_string(),
            space: space.to_string(),
            grid,
            status: Status::Pass,
            worst_margin: None,
            tolerance,
            constants: BTreeMap::new(),
            witness: BTreeMap::new(),
            notes: Vec::new(),
            sweep: None,
        }
    }

    /// Result with no grid evaluation, e.g. an unmet hypothesis.
    pub fn with_status(name: &str, space: &str, status: Status, note: impl Into<String>) -> Self {
        let mut r = CheckResult::new(name, space, String::new(), 0.0);
        r.status = status;
        r.notes.push(note.into());
        r
    }

    pub fn constant(&mut self, key: &str, value: f64) {
        self.constants.insert(key.to_string(), value);
    }

    pub fn note(&mut self, note: impl Into<String>) {
        self.notes.push(note.into());
    }

    /// Copies the tracker's worst point into the result and sets
    /// pass/fail from it. Does not override a non-pass status.
    pub fn absorb(&mut self, tracker: &MarginTracker) {
        if let Some(w) = &tracker.worst {
            self.worst_margin = Some(w.margin);
            self.witness = w.coords.clone();
            self.constant("worst_relative_margin", w.relative);
            self.constant("lhs_at_witness", w.lhs);
            self.constant("rhs_at_witness", w.rhs);
        }
        self.constant("evaluations", tracker.count as f64);
        self.constant("violations", tracker.violations as f64);
        if tracker.violations > 0 && self.status == Status::Pass {
            self.status = Status::Fail;
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct WorstPoint {
    pub lhs: f64,
    pub rhs: f64,
    pub margin: f64,
    pub relative: f64,
    pub coords: BTreeMap<String, f64>,
}

/// Tracks `LHS <= RHS` over a sweep.
#[derive(Clone, Debug)]
pub struct MarginTracker {
    tolerance: f64,
    floor: f64,
    pub worst: Option<WorstPoint>,
    pub count: usize,
    pub violations: usize,
}

impl MarginTracker {
    pub fn new(tolerance: f64) -> Self {
        MarginTracker {
            tolerance,
            floor: 0.0,
            worst: None,
            count: 0,
            violations: 0,
        }
    }

    /// Absolute scale below which margins are measured against `floor`
    /// rather than `max(|LHS|, |RHS|)`; keeps rounding noise around exact
    /// zeros from registering as relative violations.
    pub fn set_floor(&mut self, floor: f64) {
        self.floor = floor;
    }

    /// Records one comparison; returns the relative margin.
    pub fn record(&mut self, lhs: f64, rhs: f64, coords: &[(&str, f64)]) -> f64 {
        let margin = rhs - lhs;
        let scale = lhs.abs().max(rhs.abs()).max(self.floor);
        let relative = if margin == f64::INFINITY {
            // a finite left side against an infinite bound
            1.0
        } else if scale > 0.0 {
            margin / scale
        } else {
            0.0
        };
        let relative = if relative.is_nan() { f64::NEG_INFINITY } else { relative };
        self.count += 1;
        if relative < -self.tolerance {
            self.violations += 1;
        }
        let better = self.worst.as_ref().is_none_or(|w| relative < w.relative);
        if better {
            self.worst = Some(WorstPoint {
                lhs,
                rhs,
                margin,
                relative,
                coords: coords.iter().map(|(k, v)| (k.to_string(), *v)).collect(),
            });
        }
        relative
    }

    pub fn merge(&mut self, other: MarginTracker) {
        self.count += other.count;
        self.violations += other.violations;
        if let Some(w) = other.worst {
            if self.worst.as_ref().is_none_or(|mine| w.relative < mine.relative) {
                self.worst = Some(w);
            }
        }
    }
}

/// Parameter grid shared by the checkers.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GridSpec {
    pub t_min: f64,
    pub t_max: f64,
    /// Log-spaced times `t_min * 10^(j / t_per_decade)` up to `t_max`.
    pub t_per_decade: usize,
    /// Distances `d = xi sqrt(t)` with `xi` uniform on `[0, xi_max]`.
    pub xi_max: f64,
    pub xi_count: usize,
    /// Explicit base points (core indices) for discrete sources.
    pub points: Option<Vec<usize>>,
    pub eps_list: Vec<f64>,
    pub p_list: Vec<f64>,
    pub tolerance: f64,
    pub seed: u64,
}

impl Default for GridSpec {
    fn default() -> Self {
        GridSpec::analytic()
    }
}

pub const ANALYTIC_TOLERANCE: f64 = 1e-9;
pub const DISCRETE_TOLERANCE: f64 = 5e-2;
/// Allowed relative drift of a fitted constant under grid refinement.
pub const FIT_DRIFT_LIMIT: f64 = 0.10;
/// Pointwise kernel values on a sample are trusted from `t = 50 h` on; below
/// that the discretization error of the diagonal exceeds about 1%.
pub const RESOLVED_TIME_FACTOR: f64 = 50.0;

pub fn resolved_time(dec: &SpectralDecomposition) -> f64 {
    RESOLVED_TIME_FACTOR * dec.generator().bandwidth()
}

impl GridSpec {
    pub fn analytic() -> Self {
        GridSpec {
            t_min: 0.01,
            t_max: 100.0,
            t_per_decade: 16,
            xi_max: 6.0,
            xi_count: 25,
            points: None,
            eps_list: vec![0.1, 0.5, 1.0],
            p_list: vec![2.0, 4.0, f64::INFINITY],
            tolerance: ANALYTIC_TOLERANCE,
            seed: 0,
        }
    }

    /// Discrete default over `[t_min, t_max]`, typically `[h, (R_max/4)^2]`.
    pub fn discrete(t_min: f64, t_max: f64) -> Self {
        GridSpec {
            t_min,
            t_max,
            t_per_decade: 16,
            xi_max: 4.0,
            xi_count: 17,
            tolerance: DISCRETE_TOLERANCE,
            ..GridSpec::analytic()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.t_min > 0.0 && self.t_max >= self.t_min && self.t_max.is_finite()) {
            return Err(Error::Config(format!(
                "time range [{}, {}] is invalid",
                self.t_min, self.t_max
            )));
        }
        if self.t_per_decade == 0 || self.xi_count < 2 || !(self.xi_max > 0.0) {
            return Err(Error::Config("grid densities must be positive".into()));
        }
        if self.eps_list.iter().any(|&e| !(e > 0.0 && e < 4.0)) {
            return Err(Error::Config("every epsilon must lie in (0, 4)".into()));
        }
        if self.p_list.iter().any(|&p| !(p >= 1.0)) {
            return Err(Error::Config("every p must be >= 1".into()));
        }
        if !(self.tolerance >= 0.0) {
            return Err(Error::Config("tolerance must be nonnegative".into()));
        }
        Ok(())
    }

    pub fn t_grid(&self) -> Vec<f64> {
        let mut out = Vec::new();
        let mut j = 0usize;
        loop {
            let t = self.t_min * 10f64.powf(j as f64 / self.t_per_decade as f64);
            if t > self.t_max * (1.0 + 1e-12) {
                break;
            }
            out.push(t);
            j += 1;
        }
        out
    }

    pub fn xi_grid(&self) -> Vec<f64> {
        let last = (self.xi_count - 1) as f64;
        (0..self.xi_count)
            .map(|j| self.xi_max * (j as f64 / last))
            .collect()
    }

    /// Doubles both densities; the result contains every original grid
    /// point exactly.
    pub fn refined(&self) -> Self {
        GridSpec {
            t_per_decade: 2 * self.t_per_decade,
            xi_count: 2 * (self.xi_count - 1) + 1,
            ..self.clone()
        }
    }

    pub fn summary(&self) -> String {
        let t = self.t_grid();
        format!(
            "t in [{:.4e}, {:.4e}] ({} pts, {}/decade); xi in [0, {}] ({} pts)",
            t.first().copied().unwrap_or(f64::NAN),
            t.last().copied().unwrap_or(f64::NAN),
            t.len(),
            self.t_per_decade,
            self.xi_max,
            self.xi_count
        )
    }
}

/// `omega(N)`, the volume of the unit ball in `R^N`.
pub fn omega(n: f64) -> f64 {
    unit_ball_volume(n)
}

/// `tau_{K,N}(theta) = theta sqrt(-K/N) coth(theta sqrt(-K/N))`, `1` at `K = 0`.
pub fn tau(k: f64, n: f64, theta: f64) -> f64 {
    if k >= 0.0 {
        return 1.0;
    }
    let x = theta * (-k / n).sqrt();
    if x < 1e-4 {
        1.0 + x * x / 3.0
    } else {
        x / x.tanh()
    }
}

/// `K / (e^{2Kt} - 1)`, with the `K = 0` value `1 / (2t)`.
pub fn k_coefficient(k: f64, t: f64) -> f64 {
    if k == 0.0 {
        1.0 / (2.0 * t)
    } else {
        k / (2.0 * k * t).exp_m1()
    }
}

/// Bishop–Gromov model volume `V_{K,N}(r)`.
pub fn model_volume(k: f64, n: f64, r: f64) -> f64 {
    if k >= 0.0 || n <= 1.0 {
        return omega(n) * r.powf(n);
    }
    let a = (-k / (n - 1.0)).sqrt();
    let q = crate::analytic::quadrature::integrate(
        |s| ((a * s).sinh() / a).powf(n - 1.0),
        0.0,
        r,
        1e-13 * (1.0 + r.powf(n)),
        2000,
    );
    n * omega(n) * q.value
}

/// `sup_i lhs_i / rhs_i` and its argmax.
pub fn fit_sup_ratio(lhs: &[f64], rhs: &[f64]) -> Result<(f64, usize)> {
    if lhs.len() != rhs.len() || lhs.is_empty() {
        return Err(Error::Domain("fit needs equally sized nonempty fields".into()));
    }
    let mut best = (f64::NEG_INFINITY, 0);
    for (i, (&l, &r)) in lhs.iter().zip(rhs).enumerate() {
        if !(r > 0.0) {
            return Err(Error::Domain(format!("rhs must be positive, got {r} at {i}")));
        }
        let q = l / r;
        if q > best.0 {
            best = (q, i);
        }
    }
    Ok(best)
}

/// Relative drift `|refined - coarse| / |coarse|`.
pub fn drift(coarse: f64, refined: f64) -> f64 {
    if coarse == refined {
        0.0
    } else {
        (refined - coarse).abs() / coarse.abs()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn constants() {
        assert!((omega(2.0) - std::f64::consts::PI).abs() < 1e-14);
        assert!((omega(3.0) - 4.0 * std::f64::consts::PI / 3.0).abs() < 1e-13);
        assert!((tau(-2.0, 3.0, 1e-8) - 1.0).abs() < 1e-15);
        assert_eq!(tau(0.0, 2.0, 5.0), 1.0);
        // pi (sinh 2 - 2)
        assert!((model_volume(-2.0, 3.0, 1.0) - 5.110_932_705_708_289).abs() < 1e-10);
        assert!((k_coefficient(-2.0, 0.5) - 2.313_035_285_499_331).abs() < 1e-12);
        assert!((k_coefficient(1e-300, 0.5) - 1.0).abs() < 1e-12);
    }

    #[test]
    fn sup_ratio_fits() {
        assert_eq!(fit_sup_ratio(&[1.0, 2.0], &[1.0, 2.0]).unwrap().0, 1.0);
        assert_eq!(fit_sup_ratio(&[0.0, 0.0], &[1.0, 2.0]).unwrap().0, 0.0);
        assert!(fit_sup_ratio(&[1.0], &[0.0]).is_err());
        assert_eq!(fit_sup_ratio(&[1.0, 3.0, 2.0], &[1.0, 1.0, 1.0]).unwrap().1, 1);
    }

    #[test]
    fn refined_grid_is_a_superset() {
        let g = GridSpec::analytic();
        let r = g.refined();
        let (t, tr) = (g.t_grid(), r.t_grid());
        assert!(t.iter().all(|x| tr.contains(x)));
        assert!(g.xi_grid().iter().all(|x| r.xi_grid().contains(x)));
        assert_eq!(tr.len(), 2 * t.len() - 1);
    }

    #[test]
    fn tracker_flags_violations() {
        let mut tr = MarginTracker::new(1e-3);
        tr.record(1.0, 2.0, &[("i", 0.0)]);
        tr.record(1.0005, 1.0, &[("i", 1.0)]);
        assert_eq!(tr.violations, 0);
        tr.record(2.0, 1.0, &[("i", 2.0)]);
        assert_eq!(tr.violations, 1);
        assert_eq!(tr.worst.as_ref().unwrap().coords["i"], 2.0);
    }
}
