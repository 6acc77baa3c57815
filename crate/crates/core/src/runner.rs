//! Suite registry, run configuration and report assembly behind the CLI.
//!
//! A run is a list of spaces times a list of suites. Each (space, suite)
//! cell is an independent task; tasks fan out over a rayon pool and the
//! report is assembled in registry order, so the output does not depend on
//! the worker count.

use std::fs;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::sync::Arc;
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::analytic::AnalyticKernel;
use crate::error::{Error, Result};
use crate::spaces::{make_model_sample, volume_profile, SampledSpace, SpaceDescriptor, SpaceKind, VolumeProfile};
use crate::spectral::{eigendecompose_cached, Bandwidth, Generator, SpectralDecomposition};
use crate::verifiers::*;

pub const REPORT_SCHEMA_VERSION: u32 = 1;
pub const TOOL_VERSION: &str = env!("CARGO_PKG_VERSION");
pub const CACHE_ENV: &str = "HEATLAB_CACHE";

/// Dense eigendecomposition cap, shared with the spectral module.
const MAX_POINTS: usize = 4000;
const DG_PARTS: usize = 8;
const DG_FUNCTIONS: usize = 50;
const BATCH: usize = 100;
const SMALL_BATCH: usize = 20;

/// Where a suite can run.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum Scope {
    Both,
    DiscreteOnly,
    /// Analytic only on the line, discrete everywhere.
    LineOrDiscrete,
}

struct Suite {
    name: &'static str,
    scope: Scope,
    summary: &'static str,
}

const REGISTRY: &[Suite] = &[
    Suite { name: "semigroup_axioms", scope: Scope::Both, summary: "mass, symmetry, Chapman-Kolmogorov, L^p contraction" },
    Suite { name: "li_yau", scope: Scope::Both, summary: "Li-Yau gradient estimate for log p_t" },
    Suite { name: "bakry_ledoux", scope: Scope::DiscreteOnly, summary: "Bakry-Ledoux gradient bound for H_t f" },
    Suite { name: "harnack", scope: Scope::Both, summary: "parabolic Harnack inequality and kernel chain" },
    Suite { name: "gaussian_bounds", scope: Scope::Both, summary: "two-sided Gaussian bounds, fitted C1 (and C2)" },
    Suite { name: "gradient_bound", scope: Scope::Both, summary: "Gaussian bound on |grad p_t|" },
    Suite { name: "time_derivative", scope: Scope::Both, summary: "Gaussian bound on |d/dt p_t|" },
    Suite { name: "integrated_lower_bound", scope: Scope::Both, summary: "lower bound on the kernel mass of B(y, sqrt t)" },
    Suite { name: "weighted_contraction", scope: Scope::DiscreteOnly, summary: "exponentially weighted L^2 contraction" },
    Suite { name: "doubling_poincare", scope: Scope::Both, summary: "volume doubling and local Poincare constants" },
    Suite { name: "laplacian_comparison", scope: Scope::Both, summary: "Laplacian comparison for the distance function" },
    Suite { name: "boundary_calculus", scope: Scope::Both, summary: "boundary measure ratios, lower bound and co-area" },
    Suite { name: "large_time", scope: Scope::Both, summary: "large-time limit of mu(B(x, sqrt t)) p_t(x, y)" },
    Suite { name: "stability", scope: Scope::Both, summary: "heat-flow limit versus ball-average limit" },
    Suite { name: "compactness", scope: Scope::Both, summary: "heat trace and inverse-kernel integral" },
    Suite { name: "caccioppoli", scope: Scope::LineOrDiscrete, summary: "L^p gradient bound and reversed Poincare" },
    Suite { name: "davies_gaffney", scope: Scope::DiscreteOnly, summary: "off-diagonal L^2 estimates between disjoint sets" },
    Suite { name: "riesz", scope: Scope::DiscreteOnly, summary: "Riesz transform L^2 identity and L^p norms under refinement" },
];

/// `(name, one-line summary)` for every registered suite.
pub fn suites() -> Vec<(&'static str, &'static str)> {
    REGISTRY.iter().map(|s| (s.name, s.summary)).collect()
}

fn suite(name: &str) -> Result<&'static Suite> {
    REGISTRY
        .iter()
        .find(|s| s.name == name)
        .ok_or_else(|| Error::UnknownSuite(name.to_string()))
}

/// A space on the command line: `kind[:key=value,...]`.
///
/// Keys: `N` (euclidean dimension), `L` (circle length), `R` (truncation
/// radius), `n` (sample size; makes the run discrete), `h` (bandwidth,
/// default auto), `path` (a saved sample directory, kind `sampled`).
#[derive(Clone, Debug, PartialEq)]
pub struct SpaceSpec {
    pub descriptor: SpaceDescriptor,
    pub points: Option<usize>,
    pub bandwidth: Option<f64>,
    pub path: Option<PathBuf>,
}

impl SpaceSpec {
    pub fn is_discrete(&self) -> bool {
        self.points.is_some() || self.path.is_some()
    }
}

impl FromStr for SpaceSpec {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let bad = |msg: String| Error::Config(format!("space `{s}`: {msg}"));
        let (kind, rest) = s.split_once(':').unwrap_or((s, ""));
        let kind: SpaceKind = kind.parse()?;
        let mut dimension = None;
        let mut length = None;
        let mut radius = None;
        let mut points = None;
        let mut bandwidth = None;
        let mut path = None;
        for part in rest.split(',').map(str::trim).filter(|p| !p.is_empty()) {
            let (key, value) = part
                .split_once('=')
                .ok_or_else(|| bad(format!("expected key=value, got `{part}`")))?;
            let real = || {
                value
                    .trim()
                    .parse::<f64>()
                    .map_err(|e| bad(format!("{key}: {e}")))
            };
            match key.trim() {
                "N" => dimension = Some(real()?),
                "L" => length = Some(real()?),
                "R" => radius = Some(real()?),
                "h" => bandwidth = Some(real()?),
                "n" => {
                    points = Some(
                        value
                            .trim()
                            .parse::<usize>()
                            .map_err(|e| bad(format!("n: {e}")))?,
                    )
                }
                "path" => path = Some(PathBuf::from(value.trim())),
                other => return Err(bad(format!("unknown key `{other}`"))),
            }
        }
        let mut descriptor = match kind {
            SpaceKind::Euclidean => {
                let n = dimension.ok_or_else(|| bad("euclidean needs N".into()))?;
                if !(n >= 1.0 && n.fract() == 0.0) {
                    return Err(bad(format!("N must be a positive integer, got {n}")));
                }
                SpaceDescriptor::euclidean(n as usize)
            }
            SpaceKind::Hyperbolic3 => SpaceDescriptor::hyperbolic3(),
            SpaceKind::Circle => {
                SpaceDescriptor::circle(length.ok_or_else(|| bad("circle needs L".into()))?)
            }
            SpaceKind::Sampled => {
                if path.is_none() {
                    return Err(bad("sampled spaces need path=<dir>".into()));
                }
                // replaced by the saved descriptor when the sample is loaded
                SpaceDescriptor::sampled(1.0, 0.0)
            }
        };
        if let Some(r) = radius {
            descriptor = descriptor.with_truncation(r);
        }
        descriptor.validate()?;
        if path.is_some() && kind != SpaceKind::Sampled {
            return Err(bad("path= is only valid for kind `sampled`".into()));
        }
        if points.is_some() && matches!(kind, SpaceKind::Euclidean | SpaceKind::Hyperbolic3) && radius.is_none() {
            return Err(bad("samples of non-compact models need a truncation radius R".into()));
        }
        if let Some(n) = points {
            if n > MAX_POINTS {
                return Err(bad(format!("n = {n} exceeds the cap of {MAX_POINTS}")));
            }
        }
        if bandwidth.is_some_and(|h| !(h > 0.0 && h.is_finite())) {
            return Err(bad("h must be positive".into()));
        }
        Ok(SpaceSpec {
            descriptor,
            points,
            bandwidth,
            path,
        })
    }
}

/// Partial [`GridSpec`]: fields left out keep the analytic or discrete
/// default of the space they are applied to.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GridOverrides {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub t_min: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub t_max: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub t_per_decade: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub xi_max: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub xi_count: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub points: Option<Vec<usize>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub eps_list: Option<Vec<f64>>,
    /// `"inf"` is accepted for `p = infinity`.
    #[serde(skip_serializing_if = "Option::is_none", with = "exponents")]
    pub p_list: Option<Vec<f64>>,
}

impl GridOverrides {
    fn apply(&self, mut grid: GridSpec) -> GridSpec {
        if let Some(v) = self.t_min {
            grid.t_min = v;
        }
        if let Some(v) = self.t_max {
            grid.t_max = v;
        }
        if let Some(v) = self.t_per_decade {
            grid.t_per_decade = v;
        }
        if let Some(v) = self.xi_max {
            grid.xi_max = v;
        }
        if let Some(v) = self.xi_count {
            grid.xi_count = v;
        }
        if let Some(v) = &self.points {
            grid.points = Some(v.clone());
        }
        if let Some(v) = &self.eps_list {
            grid.eps_list = v.clone();
        }
        if let Some(v) = &self.p_list {
            grid.p_list = v.clone();
        }
        grid
    }
}

mod exponents {
    use serde::{Deserialize, Deserializer, Serialize, Serializer};

    #[derive(Serialize, Deserialize)]
    #[serde(untagged)]
    enum Exponent {
        Finite(f64),
        Named(String),
    }

    pub fn serialize<S: Serializer>(v: &Option<Vec<f64>>, s: S) -> Result<S::Ok, S::Error> {
        let out: Option<Vec<Exponent>> = v.as_ref().map(|ps| {
            ps.iter()
                .map(|&p| {
                    if p.is_finite() {
                        Exponent::Finite(p)
                    } else {
                        Exponent::Named("inf".into())
                    }
                })
                .collect()
        });
        out.serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Option<Vec<f64>>, D::Error> {
        let raw: Option<Vec<Exponent>> = Option::deserialize(d)?;
        raw.map(|ps| {
            ps.into_iter()
                .map(|p| match p {
                    Exponent::Finite(x) => Ok(x),
                    Exponent::Named(s) => match s.to_ascii_lowercase().as_str() {
                        "inf" | "infinity" => Ok(f64::INFINITY),
                        other => Err(serde::de::Error::custom(format!("bad exponent `{other}`"))),
                    },
                })
                .collect()
        })
        .transpose()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CachePolicy {
    pub enabled: bool,
    /// Spectrum cache directory; `HEATLAB_CACHE` takes precedence.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub dir: Option<PathBuf>,
}

impl Default for CachePolicy {
    fn default() -> Self {
        CachePolicy {
            enabled: true,
            dir: None,
        }
    }
}

impl CachePolicy {
    pub fn effective_dir(&self) -> Option<PathBuf> {
        if !self.enabled {
            return None;
        }
        std::env::var_os(CACHE_ENV)
            .filter(|v| !v.is_empty())
            .map(PathBuf::from)
            .or_else(|| self.dir.clone())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub spaces: Vec<String>,
    /// Suite names, or `["all"]`.
    pub suites: Vec<String>,
    pub grid: GridOverrides,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub tolerance: Option<f64>,
    pub seed: u64,
    pub out: PathBuf,
    pub cache: CachePolicy,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            spaces: Vec::new(),
            suites: vec!["all".into()],
            grid: GridOverrides::default(),
            tolerance: None,
            seed: 0,
            out: PathBuf::from("heatlab-out"),
            cache: CachePolicy::default(),
        }
    }
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_toml(&fs::read_to_string(path)?)
    }

    /// Checks everything that can be checked without building a space.
    pub fn validate(&self) -> Result<()> {
        if self.spaces.is_empty() {
            return Err(Error::Config("no space given".into()));
        }
        for s in &self.spaces {
            s.parse::<SpaceSpec>()?;
        }
        if self.suites.is_empty() {
            return Err(Error::Config("no suite given".into()));
        }
        for name in &self.suites {
            if name != "all" {
                suite(name)?;
            }
        }
        if let Some(tol) = self.tolerance {
            if !(tol >= 0.0 && tol.is_finite()) {
                return Err(Error::Config(format!("tolerance must be nonnegative, got {tol}")));
            }
        }
        if let Some(eps) = &self.grid.eps_list {
            if eps.iter().any(|&e| !(e > 0.0 && e < 2.0)) {
                return Err(Error::Config("eps_list entries must lie in (0, 2)".into()));
            }
        }
        if let Some(ps) = &self.grid.p_list {
            if ps.iter().any(|&p| !(p >= 1.0)) {
                return Err(Error::Config("p_list entries must be >= 1".into()));
            }
        }
        GridOverrides::apply(&self.grid, GridSpec::analytic()).validate()
    }

    fn selected(&self, spec: &SpaceSpec) -> Vec<(&'static Suite, bool)> {
        if self.suites.iter().any(|s| s == "all") {
            REGISTRY
                .iter()
                .filter(|s| applicable(s, spec))
                .map(|s| (s, true))
                .collect()
        } else {
            self.suites
                .iter()
                .filter_map(|n| suite(n).ok())
                .map(|s| (s, applicable(s, spec)))
                .collect()
        }
    }
}

fn applicable(suite: &Suite, spec: &SpaceSpec) -> bool {
    match suite.scope {
        Scope::Both => true,
        Scope::DiscreteOnly => spec.is_discrete(),
        Scope::LineOrDiscrete => {
            spec.is_discrete()
                || (spec.descriptor.kind == SpaceKind::Euclidean && spec.descriptor.dimension == 1.0)
        }
    }
}

/// One entry of `results[]`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReportEntry {
    #[serde(flatten)]
    pub result: CheckResult,
    /// Sweep table written next to the report, if any.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub csv: Option<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Timing {
    pub task: String,
    pub seconds: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Timings {
    pub total_seconds: f64,
    pub spaces: Vec<Timing>,
    pub checks: Vec<Timing>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Environment {
    pub tool_version: String,
    pub os: String,
    pub arch: String,
    pub logical_cpus: usize,
    pub jobs: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub cache_dir: Option<PathBuf>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Report {
    pub version: u32,
    pub config: RunConfig,
    pub results: Vec<ReportEntry>,
    pub timings: Timings,
    pub environment: Environment,
}

impl Report {
    /// True when no result is `fail` or `error`.
    pub fn succeeded(&self) -> bool {
        self.results
            .iter()
            .all(|e| !matches!(e.result.status, Status::Fail | Status::Error))
    }

    pub fn exit_code(&self) -> i32 {
        if self.succeeded() {
            0
        } else {
            1
        }
    }
}

enum Target {
    Analytic(AnalyticKernel),
    Discrete(SpectralDecomposition),
}

struct Prepared {
    spec: SpaceSpec,
    label: String,
    target: Result<Target>,
}

fn build_sample(spec: &SpaceSpec, seed: u64) -> Result<SampledSpace> {
    match (&spec.path, spec.points) {
        (Some(dir), _) => SampledSpace::load(dir),
        (None, Some(n)) => make_model_sample(&spec.descriptor, n, seed),
        (None, None) => Err(Error::Config("space has no sample".into())),
    }
}

fn decompose(space: SampledSpace, bandwidth: Option<f64>, cache: Option<&Path>) -> Result<SpectralDecomposition> {
    let bw = bandwidth.map_or(Bandwidth::Auto, Bandwidth::Fixed);
    let gen = Generator::build(Arc::new(space), bw)?;
    eigendecompose_cached(&gen, cache)
}

fn prepare(spec: &SpaceSpec, seed: u64, cache: Option<&Path>) -> Prepared {
    if !spec.is_discrete() {
        return Prepared {
            spec: spec.clone(),
            label: spec.descriptor.label(),
            target: AnalyticKernel::new(spec.descriptor.clone()).map(Target::Analytic),
        };
    }
    let built = build_sample(spec, seed).and_then(|s| {
        let label = format!("{} (n={})", s.descriptor().label(), s.len());
        decompose(s, spec.bandwidth, cache).map(|d| (label, d))
    });
    match built {
        Ok((label, dec)) => {
            let mut spec = spec.clone();
            spec.descriptor = dec.space().descriptor().clone();
            Prepared {
                spec,
                label,
                target: Ok(Target::Discrete(dec)),
            }
        }
        Err(e) => Prepared {
            spec: spec.clone(),
            label: match spec.points {
                Some(n) => format!("{} (n={n})", spec.descriptor.label()),
                None => spec.descriptor.label(),
            },
            target: Err(e),
        },
    }
}

/// Everything a suite needs besides the space.
struct Context<'a> {
    config: &'a RunConfig,
    cache: Option<PathBuf>,
}

impl Context<'_> {
    fn seed(&self) -> u64 {
        self.config.seed
    }

    fn analytic_grid(&self) -> GridSpec {
        let mut g = self.config.grid.apply(GridSpec::analytic());
        g.seed = self.seed();
        if let Some(tol) = self.config.tolerance {
            g.tolerance = tol;
        }
        g
    }

    /// Discrete default: `[h, (R_max/4)^2]`, or `[h, (diam/2)^2]` on an
    /// untruncated sample.
    fn discrete_grid(&self, dec: &SpectralDecomposition) -> GridSpec {
        let space = dec.space();
        let h = dec.generator().bandwidth();
        let cap = match space.descriptor().truncation_radius {
            Some(r) => (0.25 * r).powi(2),
            None => (0.5 * space.diameter()).powi(2),
        };
        let mut g = self.config.grid.apply(GridSpec::discrete(h, cap.max(h)));
        g.seed = self.seed();
        if let Some(tol) = self.config.tolerance {
            g.tolerance = tol;
        }
        g
    }
}

/// The discrete grid restricted to resolved times `t >= 50 h`.
fn resolved_grid(grid: &GridSpec, dec: &SpectralDecomposition) -> Option<GridSpec> {
    let t_min = grid.t_min.max(resolved_time(dec));
    (t_min <= grid.t_max).then(|| GridSpec {
        t_min,
        ..grid.clone()
    })
}

/// Up to `count` times spread over the grid.
fn pick_times(grid: &GridSpec, count: usize) -> Vec<f64> {
    let all = grid.t_grid();
    if all.len() <= count {
        return all;
    }
    let last = (all.len() - 1) as f64;
    let mut out: Vec<f64> = (0..count)
        .map(|i| all[((i as f64) * last / (count - 1) as f64).round() as usize])
        .collect();
    out.dedup();
    out
}

fn unresolved(name: &str, label: &str, dec: &SpectralDecomposition, grid: &GridSpec) -> CheckResult {
    CheckResult::with_status(
        name,
        label,
        Status::Untrusted,
        format!(
            "no resolved time: 50h = {} exceeds t_max = {}",
            resolved_time(dec),
            grid.t_max
        ),
    )
}

fn origin(desc: &SpaceDescriptor) -> Vec<f64> {
    match desc.kind {
        SpaceKind::Circle => vec![0.0],
        SpaceKind::Hyperbolic3 => vec![0.0; 3],
        _ => vec![0.0; desc.dimension as usize],
    }
}

fn unit_offset(desc: &SpaceDescriptor) -> Vec<f64> {
    let mut p = origin(desc);
    p[0] = 1.0;
    p
}

fn radius_grid(max: f64, count: usize) -> Vec<f64> {
    (1..=count).map(|i| max * i as f64 / count as f64).collect()
}

/// Largest radius around `c` that stays inside the sample.
fn reach(dec: &SpectralDecomposition, c: usize) -> f64 {
    let space = dec.space();
    let b = space.boundary_distance()[c];
    if b.is_finite() {
        b
    } else {
        0.5 * space.diameter()
    }
}

fn discrete_batch(dec: &SpectralDecomposition, count: usize, seed: u64, positive: bool) -> Vec<Vec<f64>> {
    let kinds: &[BatchKind] = if positive {
        &[BatchKind::Smooth, BatchKind::Step]
    } else {
        &[BatchKind::Smooth, BatchKind::Step, BatchKind::Trig, BatchKind::Eigen]
    };
    sample_batch(dec.space(), Some(dec), count, seed, kinds, positive)
}

/// Disjoint regions for the Davies-Gaffney sweep: equal arcs on a circle,
/// otherwise nearest-anchor cells of the core.
fn regions(dec: &SpectralDecomposition) -> Result<Vec<Vec<usize>>> {
    let space = dec.space();
    if space.descriptor().kind == SpaceKind::Circle && space.coords().is_some() {
        return arc_partition(space, DG_PARTS);
    }
    let core = space.core_indices();
    let step = (core.len() / DG_PARTS).max(1);
    let anchors: Vec<usize> = core.iter().step_by(step).copied().take(DG_PARTS).collect();
    let mut cells = vec![Vec::new(); anchors.len()];
    for &i in &core {
        let k = (0..anchors.len())
            .min_by(|&a, &b| space.dist(i, anchors[a]).total_cmp(&space.dist(i, anchors[b])))
            .expect("at least one anchor");
        cells[k].push(i);
    }
    Ok(cells.into_iter().filter(|c| !c.is_empty()).collect())
}

fn run_suite(name: &str, prepared: &Prepared, ctx: &Context<'_>) -> Result<Vec<CheckResult>> {
    let target = prepared.target.as_ref().map_err(|e| Error::Config(e.to_string()))?;
    match target {
        Target::Analytic(kernel) => run_analytic(name, kernel, ctx),
        Target::Discrete(dec) => {
            let mut results = run_discrete(name, &prepared.spec, &prepared.label, dec, ctx)?;
            for r in &mut results {
                r.space.clone_from(&prepared.label);
            }
            Ok(results)
        }
    }
}

fn per_eps(
    grid: &GridSpec,
    below_one: bool,
    mut f: impl FnMut(f64) -> Result<CheckResult>,
) -> Result<Vec<CheckResult>> {
    let mut eps: Vec<f64> = grid
        .eps_list
        .iter()
        .copied()
        .filter(|&e| !below_one || e < 1.0)
        .collect();
    if eps.is_empty() {
        eps.push(0.5);
    }
    eps.into_iter().map(&mut f).collect()
}

fn run_analytic(name: &str, kernel: &AnalyticKernel, ctx: &Context<'_>) -> Result<Vec<CheckResult>> {
    let desc = kernel.model().clone();
    let grid = ctx.analytic_grid();
    let tol = grid.tolerance;
    let source = AnalyticSource::new(kernel.clone());
    let r_grid: Vec<f64> = (1..=50).map(|i| 0.1 * i as f64).collect();
    let one = |r: Result<CheckResult>| r.map(|c| vec![c]);
    match name {
        "semigroup_axioms" => {
            let pairs = [(0.5, 0.5), (0.25, 1.0), (1.0, 2.0)];
            one(check_semigroup_axioms_analytic(kernel, &origin(&desc), &unit_offset(&desc), &pairs, tol))
        }
        "li_yau" => one(check_li_yau(&source, &grid)),
        "harnack" => one(check_harnack(kernel, &grid)),
        "gaussian_bounds" => per_eps(&grid, false, |e| check_gaussian_bounds(&source, e, &grid)),
        "gradient_bound" => per_eps(&grid, false, |e| check_gradient_bound(&source, e, &grid)),
        "time_derivative" => per_eps(&grid, false, |e| check_time_derivative(&source, e, &grid)),
        "integrated_lower_bound" => {
            per_eps(&grid, true, |e| check_integrated_lower_bound(&source, e, &grid))
        }
        "doubling_poincare" => one(check_doubling_poincare(Geometry::Model(&desc), &r_grid, tol, ctx.seed())),
        "laplacian_comparison" => one(check_laplacian_comparison(&desc, &r_grid, tol)),
        "boundary_calculus" => {
            let profile = VolumeProfile::analytic(&desc, &r_grid)?;
            one(check_boundary_calculus(&desc, &profile, &[], tol))
        }
        "large_time" => one(check_large_time(
            LargeTimeInput::Analytic { kernel, d: 1.0 },
            &grid.t_grid(),
            tol,
        )),
        "stability" => {
            let dist = move |p: &[f64]| -> f64 {
                crate::analytic::model_distance(&desc, &origin(&desc), p).unwrap_or(0.0)
            };
            // smooth, bounded, tending to 1: both nets converge to 1
            let f = move |p: &[f64]| -(-dist(p).powi(2)).exp_m1();
            let x = origin(kernel.model());
            let r_grid: Vec<f64> = (0..=32).map(|j| 10f64.powf(j as f64 / 16.0)).collect();
            let input = StabilityInput::Analytic {
                kernel,
                f: &f,
                f_sup: 1.0,
                x,
            };
            one(check_stability(&input, &grid.t_grid(), &r_grid, tol))
        }
        "compactness" => one(check_compactness(CompactnessInput::Analytic(kernel), 1.0)),
        "caccioppoli" => {
            let sign = |x: f64| x.signum();
            let x_grid: Vec<f64> = (-400..=400).map(|i| 0.01 * i as f64).collect();
            one(check_caccioppoli_line(&sign, &[0.0], &[0.25, 0.5, 1.0, 2.0, 4.0], &x_grid, tol))
        }
        other => Err(Error::UnknownSuite(other.to_string())),
    }
}

fn run_discrete(
    name: &str,
    spec: &SpaceSpec,
    label: &str,
    dec: &SpectralDecomposition,
    ctx: &Context<'_>,
) -> Result<Vec<CheckResult>> {
    let grid = ctx.discrete_grid(dec);
    let tol = grid.tolerance;
    let seed = ctx.seed();
    let points = grid.points.clone();
    let source = DiscreteSource::new(dec, points)?;
    let c = source.centers()[0];
    let resolved = resolved_grid(&grid, dec);
    let one = |r: Result<CheckResult>| r.map(|c| vec![c]);
    let h = dec.generator().bandwidth();
    match name {
        "semigroup_axioms" => {
            let fs = discrete_batch(dec, SMALL_BATCH, seed, false);
            let pairs = [(0.5, 0.5), (0.25, 1.0), (h, 2.0 * h)];
            one(check_semigroup_axioms(dec, &pairs, &fs, &grid.p_list, tol))
        }
        "li_yau" => match &resolved {
            Some(g) => one(check_li_yau(&source, g)),
            None => Ok(vec![unresolved(name, label, dec, &grid)]),
        },
        "bakry_ledoux" => match &resolved {
            Some(g) => {
                let fs = discrete_batch(dec, 50, seed, false);
                one(check_bakry_ledoux(dec, &fs, &pick_times(g, 4), tol))
            }
            None => Ok(vec![unresolved(name, label, dec, &grid)]),
        },
        "caccioppoli" => match &resolved {
            Some(g) => {
                let fs = discrete_batch(dec, BATCH, seed, false);
                let ps: Vec<f64> = grid.p_list.iter().copied().filter(|&p| p >= 2.0).collect();
                one(check_caccioppoli(dec, &fs, &pick_times(g, 8), &ps, tol))
            }
            None => Ok(vec![unresolved(name, label, dec, &grid)]),
        },
        "harnack" => match &resolved {
            Some(g) => {
                let fs = discrete_batch(dec, SMALL_BATCH, seed, true);
                let pairs: Vec<(f64, f64)> = pick_times(g, 6)
                    .into_iter()
                    .filter(|&t| 2.0 * t <= g.t_max)
                    .map(|t| (t, 2.0 * t))
                    .collect();
                if pairs.is_empty() {
                    return Ok(vec![unresolved(name, label, dec, &grid)]);
                }
                one(check_harnack_discrete(dec, &fs, &pairs, tol))
            }
            None => Ok(vec![unresolved(name, label, dec, &grid)]),
        },
        "gaussian_bounds" | "gradient_bound" | "time_derivative" | "integrated_lower_bound" => {
            let Some(g) = &resolved else {
                return Ok(vec![unresolved(name, label, dec, &grid)]);
            };
            match name {
                "gaussian_bounds" => per_eps(g, false, |e| check_gaussian_bounds(&source, e, g)),
                "gradient_bound" => per_eps(g, false, |e| check_gradient_bound(&source, e, g)),
                "time_derivative" => per_eps(g, false, |e| check_time_derivative(&source, e, g)),
                _ => per_eps(g, true, |e| check_integrated_lower_bound(&source, e, g)),
            }
        }
        "weighted_contraction" => {
            let space = dec.space();
            let eps = 8.0 * space.mean_spacing();
            let set = space.ball(c, eps);
            let fs = discrete_batch(dec, SMALL_BATCH, seed, false);
            let ts = pick_times(&grid, 3);
            one(check_weighted_contraction(dec, &set, eps, &[0.5, 1.0, 2.0], &fs, &ts, tol))
        }
        "doubling_poincare" => {
            let r_grid = radius_grid(reach(dec, c), 40);
            one(check_doubling_poincare(Geometry::Sample { dec, center: c }, &r_grid, tol, seed))
        }
        "laplacian_comparison" => one(check_laplacian_comparison_discrete(dec, c, tol)),
        "boundary_calculus" => {
            let delta = 2.0 * h.sqrt();
            let max_r = reach(dec, c);
            let min_r = (2.0 * delta).max(dec.space().mean_spacing() / tol);
            if !(min_r < max_r) {
                return Ok(vec![CheckResult::with_status(
                    name,
                    label,
                    Status::Untrusted,
                    format!("resolved radius {min_r} exceeds the sample reach {max_r}"),
                )]);
            }
            let r_grid: Vec<f64> = (0..40).map(|i| min_r + (max_r - min_r) * i as f64 / 39.0).collect();
            let profile = volume_profile(dec.space(), c, &r_grid, delta)?;
            one(check_boundary_calculus(dec.space().descriptor(), &profile, &[], tol))
        }
        "large_time" => one(check_large_time(
            LargeTimeInput::Discrete { dec, x: c, y: c },
            &grid.t_grid(),
            tol,
        )),
        "stability" => {
            let space = dec.space();
            let rho = 0.25 * reach(dec, c);
            let f: Vec<f64> = (0..space.len())
                .map(|i| if space.dist(c, i) > rho { 1.0 } else { 0.0 })
                .collect();
            let r_grid = radius_grid(reach(dec, c), 40);
            one(check_stability(
                &StabilityInput::Discrete { dec, f: &f, x: c },
                &grid.t_grid(),
                &r_grid,
                tol,
            ))
        }
        "compactness" => {
            let mut out = vec![check_compactness(CompactnessInput::Discrete(dec, c), 1.0)?];
            let space = dec.space();
            let desc = space.descriptor();
            if let (Some(r), Some(n), None) = (desc.truncation_radius, spec.points, &spec.path) {
                let scale = 2f64.powf(desc.dimension).round() as usize;
                if desc.kind == SpaceKind::Euclidean && n * scale <= MAX_POINTS {
                    let doubled = desc.clone().with_truncation(2.0 * r);
                    let bigger = decompose(
                        make_model_sample(&doubled, n * scale, seed)?,
                        spec.bandwidth,
                        ctx.cache.as_deref(),
                    )?;
                    out.push(check_compactness_sequence(&[dec, &bigger], 1.0, tol)?);
                }
            }
            Ok(out)
        }
        "davies_gaffney" => {
            let input = DaviesGaffneyInput {
                sets: regions(dec)?,
                balls: ball_catalog(dec.space(), 4),
                t_list: [0.25, 1.0].iter().map(|&t| f64::max(t, h)).collect(),
                functions_per_pair: DG_FUNCTIONS,
                seed,
            };
            one(check_davies_gaffney(dec, &input, tol))
        }
        "riesz" => run_riesz(spec, label, dec, &grid, ctx),
        other => Err(Error::UnknownSuite(other.to_string())),
    }
}

/// Riesz norms over the refinement `{n/2, n, 2n}` (or `{n/4, n/2, n}` near
/// the size cap) of a model sample.
fn run_riesz(
    spec: &SpaceSpec,
    label: &str,
    dec: &SpectralDecomposition,
    grid: &GridSpec,
    ctx: &Context<'_>,
) -> Result<Vec<CheckResult>> {
    let seed = ctx.seed();
    let desc = dec.space().descriptor().clone();
    let (a, a_min) = if desc.curvature < 0.0 {
        let source = DiscreteSource::new(dec, None)?;
        let c2 = fit_gaussian_constants(&source, 0.5, grid)?.lower.c2;
        (c2 + 1.0, Some(c2))
    } else {
        (0.0, None)
    };
    let sizes: Vec<usize> = match (spec.points, &spec.path) {
        (Some(n), None) if 2 * n <= MAX_POINTS => vec![n / 2, n, 2 * n],
        (Some(n), None) => vec![n / 4, n / 2, n],
        _ => {
            return Ok(vec![CheckResult::with_status(
                "riesz",
                label,
                Status::Untrusted,
                "refinement needs a model sample (kind:...,n=...), not a loaded directory",
            )])
        }
    };
    let mut decs = Vec::with_capacity(sizes.len());
    for &n in &sizes {
        decs.push(decompose(make_model_sample(&desc, n, seed)?, None, ctx.cache.as_deref())?);
    }
    let refs: Vec<&SpectralDecomposition> = decs.iter().collect();
    let p_list: Vec<f64> = grid.p_list.iter().copied().filter(|p| p.is_finite()).collect();
    let input = RieszInput {
        a,
        a_min,
        p_list,
        identity_batch: 200,
        batch: 500,
        seed,
    };
    check_riesz(&refs, &input).map(|r| vec![r])
}

fn not_applicable(name: &str, label: &str) -> CheckResult {
    CheckResult::with_status(
        name,
        label,
        Status::Untrusted,
        "not available on this space kind; use a sample (add n=... to the space)",
    )
}

fn panic_message(payload: Box<dyn std::any::Any + Send>) -> String {
    if let Some(s) = payload.downcast_ref::<&str>() {
        s.to_string()
    } else if let Some(s) = payload.downcast_ref::<String>() {
        s.clone()
    } else {
        "checker panicked".into()
    }
}

fn file_slug(s: &str) -> String {
    let mut out = String::with_capacity(s.len());
    for ch in s.chars() {
        if ch.is_ascii_alphanumeric() || ch == '.' {
            out.push(ch);
        } else if !out.ends_with('_') {
            out.push('_');
        }
    }
    out.trim_matches('_').to_string()
}

/// Runs every selected suite on every space, writes `report.json` and the
/// sweep CSVs into `config.out`, and returns the report.
pub fn run(config: &RunConfig, jobs: Option<usize>) -> Result<Report> {
    config.validate()?;
    let start = Instant::now();
    let specs: Vec<SpaceSpec> = config
        .spaces
        .iter()
        .map(|s| s.parse())
        .collect::<Result<_>>()?;
    let jobs = jobs.unwrap_or_else(rayon::current_num_threads).max(1);
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(jobs)
        .build()
        .map_err(|e| Error::Config(e.to_string()))?;
    let cache = config.cache.effective_dir();
    let ctx = Context {
        config,
        cache: cache.clone(),
    };

    let prepared: Vec<(Prepared, f64)> = pool.install(|| {
        specs
            .par_iter()
            .map(|spec| {
                let t = Instant::now();
                let p = prepare(spec, config.seed, cache.as_deref());
                (p, t.elapsed().as_secs_f64())
            })
            .collect()
    });

    let mut tasks = Vec::new();
    for (si, (p, _)) in prepared.iter().enumerate() {
        for (s, ok) in config.selected(&p.spec) {
            tasks.push((si, s.name, ok));
        }
    }
    let outcomes: Vec<(Vec<CheckResult>, f64)> = pool.install(|| {
        tasks
            .par_iter()
            .map(|&(si, name, ok)| {
                let p = &prepared[si].0;
                let t = Instant::now();
                let results = if !ok {
                    vec![not_applicable(name, &p.label)]
                } else {
                    match catch_unwind(AssertUnwindSafe(|| run_suite(name, p, &ctx))) {
                        Ok(Ok(r)) => r,
                        Ok(Err(e)) => vec![CheckResult::with_status(name, &p.label, Status::Error, e.to_string())],
                        Err(payload) => vec![CheckResult::with_status(
                            name,
                            &p.label,
                            Status::Error,
                            format!("panic: {}", panic_message(payload)),
                        )],
                    }
                };
                (results, t.elapsed().as_secs_f64())
            })
            .collect()
    });

    fs::create_dir_all(&config.out)?;
    let mut entries = Vec::new();
    let mut checks = Vec::new();
    for (&(si, name, _), (results, secs)) in tasks.iter().zip(outcomes) {
        checks.push(Timing {
            task: format!("{name} @ {}", prepared[si].0.label),
            seconds: secs,
        });
        for result in results {
            let csv = match &result.sweep {
                Some(sweep) if !sweep.rows.is_empty() => {
                    let file = format!(
                        "{:03}_{}_{}.csv",
                        entries.len(),
                        result.name,
                        file_slug(&result.space)
                    );
                    fs::write(config.out.join(&file), sweep.to_csv())?;
                    Some(file)
                }
                _ => None,
            };
            entries.push(ReportEntry { result, csv });
        }
    }
    let report = Report {
        version: REPORT_SCHEMA_VERSION,
        config: config.clone(),
        results: entries,
        timings: Timings {
            total_seconds: start.elapsed().as_secs_f64(),
            spaces: prepared
                .iter()
                .map(|(p, s)| Timing {
                    task: p.label.clone(),
                    seconds: *s,
                })
                .collect(),
            checks,
        },
        environment: Environment {
            tool_version: TOOL_VERSION.into(),
            os: std::env::consts::OS.into(),
            arch: std::env::consts::ARCH.into(),
            logical_cpus: std::thread::available_parallelism().map_or(1, |n| n.get()),
            jobs,
            cache_dir: cache,
        },
    };
    let mut json = serde_json::to_string_pretty(&report)?;
    json.push('\n');
    fs::write(config.out.join("report.json"), json)?;
    Ok(report)
}

/// `(t, d, p, |grad p|, d/dt p)` rows for a model kernel.
pub fn dump_kernel(desc: &SpaceDescriptor, t_list: &[f64], d_list: &[f64]) -> Result<String> {
    if !desc.is_model() {
        return Err(Error::Domain("dump-kernel needs a model space, not a sample".into()));
    }
    let kernel = AnalyticKernel::new(desc.clone())?;
    let mut sweep = Sweep::new(&["t", "d", "p", "grad_p", "dt_p"]);
    for &t in t_list {
        for &d in d_list {
            let e = kernel.evaluate(t, d)?;
            sweep.push(vec![t, d, e.value, e.gradient, e.time_derivative]);
        }
    }
    Ok(sweep.to_csv())
}

/// Samples a model space and saves it as a directory.
pub fn sample_space(spec: &SpaceSpec, seed: u64, dir: &Path) -> Result<SampledSpace> {
    let n = spec
        .points
        .ok_or_else(|| Error::Config("sample-space needs n=... in the space".into()))?;
    if spec.path.is_some() {
        return Err(Error::Config("sample-space builds model samples only".into()));
    }
    let space = make_model_sample(&spec.descriptor, n, seed)?;
    space.save(dir)?;
    Ok(space)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_space_specs() {
        let s: SpaceSpec = "euclidean:N=2".parse().unwrap();
        assert_eq!(s.descriptor, SpaceDescriptor::euclidean(2));
        assert!(!s.is_discrete());
        let s: SpaceSpec = "circle:L=6.5,n=64,h=0.01".parse().unwrap();
        assert_eq!(s.points, Some(64));
        assert_eq!(s.bandwidth, Some(0.01));
        let s: SpaceSpec = "hyperbolic3:R=2,n=300".parse().unwrap();
        assert_eq!(s.descriptor.truncation_radius, Some(2.0));
        for bad in ["euclidean", "torus:N=2", "circle:L=-1", "euclidean:N=2,n=100", "circle:L=1,q=2", "sampled:N=2"] {
            assert!(bad.parse::<SpaceSpec>().is_err(), "{bad}");
        }
    }

    #[test]
    fn registry_names_are_unique() {
        let mut names: Vec<&str> = REGISTRY.iter().map(|s| s.name).collect();
        names.sort_unstable();
        names.dedup();
        assert_eq!(names.len(), REGISTRY.len());
    }

    #[test]
    fn config_round_trips_with_infinite_exponent() {
        let cfg = RunConfig {
            spaces: vec!["circle:L=6.283185307179586,n=128".into()],
            suites: vec!["li_yau".into(), "riesz".into()],
            grid: GridOverrides {
                t_min: Some(0.1),
                p_list: Some(vec![2.0, f64::INFINITY]),
                ..Default::default()
            },
            tolerance: Some(0.05),
            seed: 7,
            out: PathBuf::from("out"),
            cache: CachePolicy {
                enabled: false,
                dir: Some(PathBuf::from("cache")),
            },
        };
        let text = cfg.to_toml().unwrap();
        assert_eq!(RunConfig::from_toml(&text).unwrap(), cfg);
        let json = serde_json::to_string(&cfg).unwrap();
        assert_eq!(serde_json::from_str::<RunConfig>(&json).unwrap(), cfg);
    }

    #[test]
    fn unknown_suite_is_a_config_error() {
        let cfg = RunConfig {
            spaces: vec!["euclidean:N=1".into()],
            suites: vec!["no_such".into()],
            ..Default::default()
        };
        assert!(matches!(cfg.validate(), Err(Error::UnknownSuite(_))));
    }

    #[test]
    fn slug_is_filesystem_safe() {
        assert_eq!(file_slug("circle:L=6.28 (n=256)"), "circle_L_6.28_n_256");
    }
}
