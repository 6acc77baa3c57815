//! Uniform access to heat-kernel samples on model spaces and on sampled
//! spaces.

use std::f64::consts::PI;

use crate::analytic::quadrature::integrate;
use crate::analytic::AnalyticKernel;
use crate::error::{Error, Result};
use crate::spaces::{model_ball_volume, SpaceKind};
use crate::spectral::SpectralDecomposition;

use super::GridSpec;

/// Discrete pairs with `p_t(x, y)` below this fraction of `p_t(y, y)` are
/// dropped: their relative accuracy is dominated by rounding.
const NOISE_FLOOR: f64 = 1e-10;
const BALL_TOL: f64 = 1e-11;
const BALL_INTERVALS: usize = 2000;

/// One kernel evaluation `p_t(x, y)` with its derived quantities.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct KernelSample {
    pub x: usize,
    pub y: usize,
    pub t: f64,
    pub d: f64,
    pub value: f64,
    /// `|grad_y p_t(x, y)|`.
    pub gradient: f64,
    pub time_derivative: f64,
    /// `|grad log p_t(x, .)|^2 (y)`; NaN where the logarithm is undefined
    /// on the stencil.
    pub log_gradient_sq: f64,
    /// `mu(B(y, sqrt t))`.
    pub ball_mass: f64,
}

pub trait KernelSource: Sync {
    fn label(&self) -> String;
    fn curvature(&self) -> f64;
    fn dimension(&self) -> f64;
    fn is_discrete(&self) -> bool;
    fn is_compact(&self) -> bool;

    /// Samples on the `(x, y)` pairs selected by `grid` at time `t`.
    fn samples(&self, t: f64, grid: &GridSpec) -> Result<Vec<KernelSample>>;

    /// `int_{B(y, sqrt t)} p_t(x, z) dmu(z)` for each sample pair.
    fn ball_masses(&self, t: f64, grid: &GridSpec) -> Result<Vec<(KernelSample, f64)>>;
}

/// Closed-form kernel on a model space. Samples put `x` at the origin and
/// `y` at distance `d = xi sqrt(t)`; `y` is the index into the `xi` grid.
pub struct AnalyticSource {
    kernel: AnalyticKernel,
}

impl AnalyticSource {
    pub fn new(kernel: AnalyticKernel) -> Self {
        AnalyticSource { kernel }
    }

    pub fn kernel_ref(&self) -> &AnalyticKernel {
        &self.kernel
    }

    fn half_circumference(&self) -> Option<f64> {
        self.kernel.model().circumference.map(|l| 0.5 * l)
    }

    /// `int_{B(y, r)} p_t(x, z) dz` with `d(x, y) = d`, by polar quadrature
    /// around `y` using the axial symmetry about the `y -> x` axis.
    pub fn ball_mass(&self, t: f64, d: f64, r: f64) -> Result<f64> {
        let model = self.kernel.model();
        let k = &self.kernel;
        let mut failure: Option<Error> = None;
        let mut p = |dist: f64| match k.value(t, dist) {
            Ok(v) => v,
            Err(e) => {
                failure.get_or_insert(e);
                0.0
            }
        };
        let value = match model.kind {
            SpaceKind::Circle => {
                let l = model.circumference.unwrap_or(2.0 * PI);
                if 2.0 * r >= l {
                    return Ok(1.0);
                }
                let arc = |s: f64| {
                    let a = (d + s).abs().rem_euclid(l);
                    a.min(l - a)
                };
                let mut pts = vec![-r, r];
                // kink of the distance where d + s hits the antipode
                for c in [0.5 * l - d, -0.5 * l - d, -d] {
                    if c > -r && c < r {
                        pts.push(c);
                    }
                }
                pts.sort_by(f64::total_cmp);
                crate::analytic::quadrature::integrate_pieces(
                    |s| p(arc(s)),
                    &pts,
                    BALL_TOL,
                    BALL_INTERVALS,
                )
                .value
            }
            SpaceKind::Euclidean if model.dimension == 1.0 => {
                integrate(|s| p((d + s).abs()), -r, r, BALL_TOL, BALL_INTERVALS).value
            }
            SpaceKind::Euclidean if model.dimension == 2.0 => {
                let outer = |rho: f64| {
                    let inner = integrate(
                        |phi| p((d * d + rho * rho - 2.0 * d * rho * phi.cos()).max(0.0).sqrt()),
                        0.0,
                        PI,
                        BALL_TOL,
                        BALL_INTERVALS,
                    );
                    2.0 * rho * inner.value
                };
                integrate(outer, 0.0, r, BALL_TOL, BALL_INTERVALS).value
            }
            SpaceKind::Euclidean | SpaceKind::Hyperbolic3 => {
                if model.kind == SpaceKind::Euclidean && model.dimension != 3.0 {
                    return Err(Error::Domain(format!(
                        "ball quadrature supports N <= 3, got {}",
                        model.dimension
                    )));
                }
                let hyperbolic = model.kind == SpaceKind::Hyperbolic3;
                let outer = |rho: f64| {
                    let inner = integrate(
                        |u| {
                            // u = cos of the angle at y between x and z
                            let dist = if hyperbolic {
                                let c = d.cosh() * rho.cosh() - d.sinh() * rho.sinh() * u;
                                c.max(1.0).acosh()
                            } else {
                                (d * d + rho * rho - 2.0 * d * rho * u).max(0.0).sqrt()
                            };
                            p(dist)
                        },
                        -1.0,
                        1.0,
                        BALL_TOL,
                        BALL_INTERVALS,
                    );
                    let shell = if hyperbolic { rho.sinh().powi(2) } else { rho * rho };
                    2.0 * PI * shell * inner.value
                };
                integrate(outer, 0.0, r, BALL_TOL, BALL_INTERVALS).value
            }
            SpaceKind::Sampled => unreachable!("analytic kernels are models"),
        };
        match failure {
            Some(e) => Err(e),
            None => Ok(value),
        }
    }
}

impl KernelSource for AnalyticSource {
    fn label(&self) -> String {
        self.kernel.model().label()
    }

    fn curvature(&self) -> f64 {
        self.kernel.model().curvature
    }

    fn dimension(&self) -> f64 {
        self.kernel.model().dimension
    }

    fn is_discrete(&self) -> bool {
        false
    }

    fn is_compact(&self) -> bool {
        self.kernel.model().is_compact()
    }

    fn samples(&self, t: f64, grid: &GridSpec) -> Result<Vec<KernelSample>> {
        let model = self.kernel.model();
        let ball_mass = model_ball_volume(model, t.sqrt())?;
        let mut out = Vec::with_capacity(grid.xi_count + 1);
        let mut distances: Vec<f64> = grid.xi_grid().iter().map(|xi| xi * t.sqrt()).collect();
        if let Some(h) = self.half_circumference() {
            // the grid is cut at the antipode, which is then sampled exactly
            if distances.iter().any(|&d| d > h) {
                distances.retain(|&d| d < h);
                distances.push(h);
            }
        }
        for (j, d) in distances.into_iter().enumerate() {
            let e = self.kernel.evaluate(t, d)?;
            if e.underflow {
                continue;
            }
            out.push(KernelSample {
                x: 0,
                y: j,
                t,
                d,
                value: e.value,
                gradient: e.gradient,
                time_derivative: e.time_derivative,
                log_gradient_sq: e.log_gradient * e.log_gradient,
                ball_mass,
            });
        }
        Ok(out)
    }

    fn ball_masses(&self, t: f64, grid: &GridSpec) -> Result<Vec<(KernelSample, f64)>> {
        self.samples(t, grid)?
            .into_iter()
            .map(|s| Ok((s, self.ball_mass(t, s.d, t.sqrt())?)))
            .collect()
    }
}

/// Spectral heat kernel on a sampled space, evaluated from a few base
/// points `x` to every core point `y`.
pub struct DiscreteSource<'a> {
    dec: &'a SpectralDecomposition,
    centers: Vec<usize>,
}

impl<'a> DiscreteSource<'a> {
    /// Uses `centers` when given, otherwise the core point deepest inside
    /// the sample.
    pub fn new(dec: &'a SpectralDecomposition, centers: Option<Vec<usize>>) -> Result<Self> {
        let space = dec.space();
        let centers = match centers {
            Some(c) if !c.is_empty() => c,
            _ => vec![deepest_core_point(space)],
        };
        for &c in &centers {
            if c >= space.len() {
                return Err(Error::IndexOutOfRange {
                    index: c,
                    n: space.len(),
                });
            }
            if !space.core_mask()[c] {
                return Err(Error::Domain(format!("base point {c} is outside the core")));
            }
        }
        Ok(DiscreteSource { dec, centers })
    }

    pub fn decomposition(&self) -> &SpectralDecomposition {
        self.dec
    }

    pub fn centers(&self) -> &[usize] {
        &self.centers
    }

    /// `p_t(y, y)` for all `y`.
    pub fn diagonal(&self, t: f64) -> Vec<f64> {
        let lambda = self.dec.eigenvalues();
        let v = self.dec.eigenvectors();
        let n = self.dec.len();
        let mut diag = vec![0.0; n];
        for (k, &l) in lambda.iter().enumerate() {
            let e = (-l * t).exp();
            if e == 0.0 {
                break;
            }
            for (i, d) in diag.iter_mut().enumerate() {
                let phi = v[(i, k)];
                *d += e * phi * phi;
            }
        }
        diag
    }

    fn column_samples(&self, t: f64, grid: &GridSpec, x: usize, diag: &[f64]) -> Vec<KernelSample> {
        let space = self.dec.space();
        let gen = self.dec.generator();
        let col = self.dec.heat_column(x, t);
        let dcol = self.dec.heat_column_time_derivative(x, t);
        let grad = gen.gradient_norm(&col);
        let log_col: Vec<f64> = col.iter().map(|&v| if v > 0.0 { v.ln() } else { f64::NAN }).collect();
        let reach = grid.xi_max * t.sqrt();
        let row = space.distance_row(x);
        let mut out = Vec::new();
        for y in space.core_indices() {
            let d = row[y];
            if d > reach || !(col[y] >= NOISE_FLOOR * diag[y]) {
                continue;
            }
            let log_gradient_sq = {
                let mut acc = 0.0;
                for &(j, a) in gen.row(y) {
                    let diff = log_col[j] - log_col[y];
                    acc += a * diff * diff;
                }
                0.5 * acc
            };
            out.push(KernelSample {
                x,
                y,
                t,
                d,
                value: col[y],
                gradient: grad[y],
                time_derivative: dcol[y],
                log_gradient_sq,
                ball_mass: space.ball_volume(y, t.sqrt()),
            });
        }
        out
    }
}

/// Core point with the largest distance to the truncation boundary
/// (lowest index on ties).
pub(crate) fn deepest_core_point(space: &crate::spaces::SampledSpace) -> usize {
    let bd = space.boundary_distance();
    let mut best = None::<usize>;
    for i in space.core_indices() {
        if best.is_none_or(|b| bd[i] > bd[b]) {
            best = Some(i);
        }
    }
    best.unwrap_or(0)
}

impl KernelSource for DiscreteSource<'_> {
    fn label(&self) -> String {
        format!("{} (n={})", self.dec.space().descriptor().label(), self.dec.len())
    }

    fn curvature(&self) -> f64 {
        self.dec.space().descriptor().curvature
    }

    fn dimension(&self) -> f64 {
        self.dec.space().descriptor().dimension
    }

    fn is_discrete(&self) -> bool {
        true
    }

    fn is_compact(&self) -> bool {
        self.dec.space().is_untruncated()
    }

    fn samples(&self, t: f64, grid: &GridSpec) -> Result<Vec<KernelSample>> {
        let diag = self.diagonal(t);
        let centers = grid.points.clone().unwrap_or_else(|| self.centers.clone());
        let mut out = Vec::new();
        for x in centers {
            if x >= self.dec.len() {
                return Err(Error::IndexOutOfRange {
                    index: x,
                    n: self.dec.len(),
                });
            }
            out.extend(self.column_samples(t, grid, x, &diag));
        }
        Ok(out)
    }

    fn ball_masses(&self, t: f64, grid: &GridSpec) -> Result<Vec<(KernelSample, f64)>> {
        let space = self.dec.space();
        let samples = self.samples(t, grid)?;
        let mut cols: Vec<(usize, Vec<f64>)> = Vec::new();
        let mut out = Vec::with_capacity(samples.len());
        for s in samples {
            if !cols.iter().any(|(x, _)| *x == s.x) {
                cols.push((s.x, self.dec.heat_column(s.x, t)));
            }
            let col = &cols.iter().find(|(x, _)| *x == s.x).unwrap().1;
            out.push((s, space.ball_integral(s.y, t.sqrt(), col)));
        }
        Ok(out)
    }

}

impl DiscreteSource<'_> {
    pub fn kernel(&self, t: f64, x: usize, y: usize) -> Result<f64> {
        let n = self.dec.len();
        if x >= n || y >= n {
            return Err(Error::IndexOutOfRange { index: x.max(y), n });
        }
        Ok(self.dec.heat_column(x, t)[y])
    }
}
