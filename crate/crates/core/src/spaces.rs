//! Model and sampled metric measure spaces.
//!
//! A [`SpaceDescriptor`] names one of the analytic model spaces (Euclidean
//! space, the hyperbolic space of curvature -1 seen as an `RCD*(-2,3)` space,
//! or a circle). [`make_model_sample`] discretizes a model into a
//! [`SampledSpace`]: a finite point cloud with a dense distance matrix and
//! measure weights. Everything downstream (generators, volume profiles,
//! checkers) works on the sampled form.
//!
//! Non-compact models are truncated at `R_max`. Points whose distance to the
//! truncation boundary is at least `R_max / 2` are flagged in `core_mask`;
//! checks restrict themselves to those points.

use std::f64::consts::PI;
use std::fs;
use std::io::Write as _;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

/// Exhaustive triangle-inequality verification is used up to this size.
const EXHAUSTIVE_TRIANGLE_CAP: usize = 500;
const SAMPLED_TRIANGLES: usize = 20_000;
const TRIANGLE_REL_TOL: f64 = 1e-9;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SpaceKind {
    Euclidean,
    Hyperbolic3,
    Circle,
    Sampled,
}

impl std::fmt::Display for SpaceKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let s = match self {
            SpaceKind::Euclidean => "euclidean",
            SpaceKind::Hyperbolic3 => "hyperbolic3",
            SpaceKind::Circle => "circle",
            SpaceKind::Sampled => "sampled",
        };
        f.write_str(s)
    }
}

impl std::str::FromStr for SpaceKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "euclidean" => Ok(SpaceKind::Euclidean),
            "hyperbolic3" => Ok(SpaceKind::Hyperbolic3),
            "circle" => Ok(SpaceKind::Circle),
            "sampled" => Ok(SpaceKind::Sampled),
            other => Err(Error::UnknownKind(other.to_string())),
        }
    }
}

/// Parameters of a metric measure space: curvature lower bound `K`,
/// dimension upper bound `N`, and the model-specific geometry.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SpaceDescriptor {
    pub kind: SpaceKind,
    pub dimension: f64,
    pub curvature: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub circumference: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub truncation_radius: Option<f64>,
}

impl SpaceDescriptor {
    pub fn euclidean(dimension: usize) -> Self {
        SpaceDescriptor {
            kind: SpaceKind::Euclidean,
            dimension: dimension as f64,
            curvature: 0.0,
            circumference: None,
            truncation_radius: None,
        }
    }

    pub fn hyperbolic3() -> Self {
        SpaceDescriptor {
            kind: SpaceKind::Hyperbolic3,
            dimension: 3.0,
            curvature: -2.0,
            circumference: None,
            truncation_radius: None,
        }
    }

    pub fn circle(circumference: f64) -> Self {
        SpaceDescriptor {
            kind: SpaceKind::Circle,
            dimension: 1.0,
            curvature: 0.0,
            circumference: Some(circumference),
            truncation_radius: None,
        }
    }

    /// A user-supplied space with declared curvature-dimension parameters.
    pub fn sampled(dimension: f64, curvature: f64) -> Self {
        SpaceDescriptor {
            kind: SpaceKind::Sampled,
            dimension,
            curvature,
            circumference: None,
            truncation_radius: None,
        }
    }

    pub fn with_truncation(mut self, r_max: f64) -> Self {
        self.truncation_radius = Some(r_max);
        self
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidDescriptor(msg));
        if !(self.dimension.is_finite() && self.dimension > 0.0) {
            return bad(format!("dimension must be positive, got {}", self.dimension));
        }
        if !self.curvature.is_finite() {
            return bad("curvature must be finite".into());
        }
        if let Some(r) = self.truncation_radius {
            if !(r.is_finite() && r > 0.0) {
                return bad(format!("truncation radius must be positive, got {r}"));
            }
        }
        match self.kind {
            SpaceKind::Euclidean => {
                if self.curvature != 0.0 {
                    return bad("euclidean space has K = 0".into());
                }
                if self.dimension.fract() != 0.0 {
                    return bad("euclidean dimension must be an integer".into());
                }
            }
            SpaceKind::Hyperbolic3 => {
                if self.curvature != -2.0 || self.dimension != 3.0 {
                    return bad("hyperbolic3 has K = -2, N = 3".into());
                }
            }
            SpaceKind::Circle => {
                if self.curvature != 0.0 || self.dimension != 1.0 {
                    return bad("circle has K = 0, N = 1".into());
                }
                match self.circumference {
                    Some(l) if l.is_finite() && l > 0.0 => {}
                    _ => return bad("circle needs a positive circumference L".into()),
                }
            }
            SpaceKind::Sampled => {}
        }
        Ok(())
    }

    pub fn is_model(&self) -> bool {
        self.kind != SpaceKind::Sampled
    }

    pub fn is_compact(&self) -> bool {
        self.kind == SpaceKind::Circle
    }

    /// Short human-readable identifier, e.g. `euclidean:N=2`.
    pub fn label(&self) -> String {
        let mut s = match self.kind {
            SpaceKind::Euclidean => format!("euclidean:N={}", self.dimension),
            SpaceKind::Hyperbolic3 => "hyperbolic3".to_string(),
            SpaceKind::Circle => format!("circle:L={}", self.circumference.unwrap_or(0.0)),
            SpaceKind::Sampled => format!("sampled:N={},K={}", self.dimension, self.curvature),
        };
        if let Some(r) = self.truncation_radius {
            let sep = if s.contains(':') { ',' } else { ':' };
            s.push_str(&format!("{sep}R={r}"));
        }
        s
    }

    fn circumference_or_err(&self) -> Result<f64> {
        self.circumference
            .ok_or_else(|| Error::InvalidDescriptor("circle needs a circumference".into()))
    }
}

/// Volume of the unit ball in `R^N`, for real `N > 0`.
pub fn unit_ball_volume(n: f64) -> f64 {
    PI.powf(n / 2.0) / statrs::function::gamma::gamma(n / 2.0 + 1.0)
}

/// `mu(B(o, r))` in hyperbolic 3-space: `pi (sinh 2r - 2r)`.
pub fn hyperbolic3_ball_volume(r: f64) -> f64 {
    let x = 2.0 * r;
    if x < 1e-2 {
        // sinh x - x = x^3/6 + x^5/120 + x^7/5040 + ...
        let x2 = x * x;
        PI * x * x2 * (1.0 / 6.0 + x2 * (1.0 / 120.0 + x2 / 5040.0))
    } else {
        PI * (x.sinh() - x)
    }
}

/// Area of the geodesic sphere of radius `r` in hyperbolic 3-space.
pub fn hyperbolic3_sphere_area(r: f64) -> f64 {
    let s = r.sinh();
    4.0 * PI * s * s
}

/// Ball volume `mu(B(x, r))` on a model space (all models are homogeneous).
pub fn model_ball_volume(desc: &SpaceDescriptor, r: f64) -> Result<f64> {
    let r = r.max(0.0);
    match desc.kind {
        SpaceKind::Euclidean => Ok(unit_ball_volume(desc.dimension) * r.powf(desc.dimension)),
        SpaceKind::Hyperbolic3 => Ok(hyperbolic3_ball_volume(r)),
        SpaceKind::Circle => Ok((2.0 * r).min(desc.circumference_or_err()?)),
        SpaceKind::Sampled => Err(Error::Domain(
            "a sampled space has no closed-form ball volume".into(),
        )),
    }
}

/// Boundary measure `s(x, r)`, the derivative of `r -> mu(B(x, r))`.
pub fn model_boundary_measure(desc: &SpaceDescriptor, r: f64) -> Result<f64> {
    let r = r.max(0.0);
    match desc.kind {
        SpaceKind::Euclidean => {
            let n = desc.dimension;
            Ok(n * unit_ball_volume(n) * r.powf(n - 1.0))
        }
        SpaceKind::Hyperbolic3 => Ok(hyperbolic3_sphere_area(r)),
        SpaceKind::Circle => {
            let l = desc.circumference_or_err()?;
            Ok(if 2.0 * r < l { 2.0 } else { 0.0 })
        }
        SpaceKind::Sampled => Err(Error::Domain(
            "a sampled space has no closed-form boundary measure".into(),
        )),
    }
}

/// Geodesic distance in hyperbolic 3-space between points given in geodesic
/// normal coordinates at a base point (`|v|` is the distance to the base).
///
/// Uses `cosh d = cosh(r1 - r2) + sinh r1 sinh r2 (1 - cos theta)`, the
/// cancellation-free form of the hyperbolic law of cosines.
pub fn hyperbolic3_distance(a: &[f64], b: &[f64]) -> f64 {
    let r1 = norm(a);
    let r2 = norm(b);
    let one_minus_cos = if r1 == 0.0 || r2 == 0.0 {
        0.0
    } else {
        let chord2: f64 = a
            .iter()
            .zip(b)
            .map(|(x, y)| {
                let d = x / r1 - y / r2;
                d * d
            })
            .sum();
        0.5 * chord2
    };
    let c = (r1 - r2).cosh() + r1.sinh() * r2.sinh() * one_minus_cos;
    c.max(1.0).acosh()
}

pub(crate) fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// A finite metric measure space.
#[derive(Clone, Debug, PartialEq)]
pub struct SampledSpace {
    n: usize,
    distances: Vec<f64>,
    weights: Vec<f64>,
    core_mask: Vec<bool>,
    boundary_distance: Vec<f64>,
    coords: Option<Vec<Vec<f64>>>,
    descriptor: SpaceDescriptor,
}

impl SampledSpace {
    /// Assemble and validate a sampled space.
    ///
    /// `distances` is row-major `n x n`. `boundary_distance` is the distance
    /// of each point to the truncation boundary (`f64::INFINITY` when the
    /// space is not truncated).
    pub fn from_parts(
        distances: Vec<f64>,
        weights: Vec<f64>,
        core_mask: Vec<bool>,
        boundary_distance: Vec<f64>,
        coords: Option<Vec<Vec<f64>>>,
        descriptor: SpaceDescriptor,
    ) -> Result<Self> {
        let n = weights.len();
        let invalid = |msg: String| Err(Error::InvalidSpace(msg));
        if n < 2 {
            return invalid(format!("need at least two points, got {n}"));
        }
        if distances.len() != n * n {
            return invalid(format!(
                "distance matrix has {} entries, expected {}",
                distances.len(),
                n * n
            ));
        }
        if core_mask.len() != n || boundary_distance.len() != n {
            return invalid("core mask / boundary distances have the wrong length".into());
        }
        if let Some(c) = &coords {
            if c.len() != n {
                return invalid("coordinate list has the wrong length".into());
            }
        }
        descriptor.validate()?;
        let space = SampledSpace {
            n,
            distances,
            weights,
            core_mask,
            boundary_distance,
            coords,
            descriptor,
        };
        space.validate()?;
        Ok(space)
    }

    /// Checks the metric and measure invariants.
    pub fn validate(&self) -> Result<()> {
        let n = self.n;
        for (i, &m) in self.weights.iter().enumerate() {
            if !(m.is_finite() && m > 0.0) {
                return Err(Error::InvalidSpace(format!("weight {i} is {m}, must be positive")));
            }
        }
        let scale = self.distances.iter().cloned().fold(0.0_f64, f64::max);
        for i in 0..n {
            if self.dist(i, i) != 0.0 {
                return Err(Error::InvalidSpace(format!("D[{i},{i}] is not zero")));
            }
            for j in (i + 1)..n {
                let a = self.dist(i, j);
                let b = self.dist(j, i);
                if !(a.is_finite() && a > 0.0) {
                    return Err(Error::InvalidSpace(format!("D[{i},{j}] = {a} must be positive")));
                }
                if (a - b).abs() > 1e-12 * scale {
                    return Err(Error::InvalidSpace(format!("D is not symmetric at ({i},{j})")));
                }
            }
        }
        if let Some((i, j, k)) = self.find_triangle_violation() {
            return Err(Error::InvalidSpace(format!(
                "triangle inequality fails for ({i},{j},{k})"
            )));
        }
        Ok(())
    }

    fn find_triangle_violation(&self) -> Option<(usize, usize, usize)> {
        let n = self.n;
        let bad = |i: usize, j: usize, k: usize| {
            self.dist(i, k) > (self.dist(i, j) + self.dist(j, k)) * (1.0 + TRIANGLE_REL_TOL)
        };
        if n <= EXHAUSTIVE_TRIANGLE_CAP {
            for i in 0..n {
                for j in 0..n {
                    for k in (i + 1)..n {
                        if bad(i, j, k) {
                            return Some((i, j, k));
                        }
                    }
                }
            }
            None
        } else {
            let mut rng = ChaCha8Rng::seed_from_u64(0x7219_11ab);
            (0..SAMPLED_TRIANGLES)
                .map(|_| {
                    (
                        rng.random_range(0..n),
                        rng.random_range(0..n),
                        rng.random_range(0..n),
                    )
                })
                .find(|&(i, j, k)| bad(i, j, k))
        }
    }

    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    #[inline]
    pub fn dist(&self, i: usize, j: usize) -> f64 {
        self.distances[i * self.n + j]
    }

    pub fn distance_row(&self, i: usize) -> &[f64] {
        &self.distances[i * self.n..(i + 1) * self.n]
    }

    pub fn distances(&self) -> &[f64] {
        &self.distances
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn core_mask(&self) -> &[bool] {
        &self.core_mask
    }

    pub fn core_indices(&self) -> Vec<usize> {
        (0..self.n).filter(|&i| self.core_mask[i]).collect()
    }

    pub fn boundary_distance(&self) -> &[f64] {
        &self.boundary_distance
    }

    pub fn coords(&self) -> Option<&[Vec<f64>]> {
        self.coords.as_deref()
    }

    pub fn descriptor(&self) -> &SpaceDescriptor {
        &self.descriptor
    }

    pub fn total_mass(&self) -> f64 {
        self.weights.iter().sum()
    }

    /// True when no point is affected by truncation.
    pub fn is_untruncated(&self) -> bool {
        self.boundary_distance.iter().all(|d| d.is_infinite())
    }

    pub fn diameter(&self) -> f64 {
        self.distances.iter().cloned().fold(0.0, f64::max)
    }

    /// Distance from `i` to its nearest other sample point.
    pub fn nearest_neighbor_distance(&self, i: usize) -> f64 {
        self.distance_row(i)
            .iter()
            .enumerate()
            .filter(|&(j, _)| j != i)
            .map(|(_, &d)| d)
            .fold(f64::INFINITY, f64::min)
    }

    /// Mean nearest-neighbor spacing over all points.
    pub fn mean_spacing(&self) -> f64 {
        (0..self.n).map(|i| self.nearest_neighbor_distance(i)).sum::<f64>() / self.n as f64
    }

    /// Indices of the open ball `B(center, r)`.
    pub fn ball(&self, center: usize, r: f64) -> Vec<usize> {
        self.distance_row(center)
            .iter()
            .enumerate()
            .filter(|&(_, &d)| d < r)
            .map(|(j, _)| j)
            .collect()
    }

    /// `mu(B(center, r))` by exact counting.
    pub fn ball_volume(&self, center: usize, r: f64) -> f64 {
        self.distance_row(center)
            .iter()
            .zip(&self.weights)
            .filter(|&(&d, _)| d < r)
            .map(|(_, &m)| m)
            .sum()
    }

    /// Weighted integral of `f` over `B(center, r)`.
    pub fn ball_integral(&self, center: usize, r: f64, f: &[f64]) -> f64 {
        self.distance_row(center)
            .iter()
            .zip(self.weights.iter().zip(f))
            .filter(|&(&d, _)| d < r)
            .map(|(_, (&m, &v))| m * v)
            .sum()
    }

    /// Weighted mean of `f`.
    pub fn mean(&self, f: &[f64]) -> f64 {
        let total: f64 = self.weights.iter().zip(f).map(|(m, v)| m * v).sum();
        total / self.total_mass()
    }

    /// Distance from point `i` to the index set `set`.
    pub fn distance_to_set(&self, i: usize, set: &[usize]) -> f64 {
        set.iter().map(|&j| self.dist(i, j)).fold(f64::INFINITY, f64::min)
    }

    fn check_indices(&self, set: &[usize]) -> Result<()> {
        if set.is_empty() {
            return Err(Error::EmptySet);
        }
        match set.iter().find(|&&i| i >= self.n) {
            Some(&index) => Err(Error::IndexOutOfRange { index, n: self.n }),
            None => Ok(()),
        }
    }

    /// Writes the space as a directory: `points.csv`, `distances.bin`,
    /// `weights.csv`, `meta.json`.
    pub fn save(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir)?;
        let files = self.serialized();
        fs::write(dir.join("meta.json"), &files.meta)?;
        fs::write(dir.join("points.csv"), &files.points)?;
        fs::write(dir.join("weights.csv"), &files.weights)?;
        fs::write(dir.join("distances.bin"), &files.distances)?;
        Ok(())
    }

    /// Reads a directory written by [`SampledSpace::save`] (or by hand, as
    /// long as it follows the same layout) and validates it.
    pub fn load(dir: &Path) -> Result<Self> {
        let meta: SpaceMeta = serde_json::from_slice(&fs::read(dir.join("meta.json"))?)?;
        let n = meta.n;
        let raw = fs::read(dir.join("distances.bin"))?;
        if raw.len() != n * n * 8 {
            return Err(Error::Parse(format!(
                "distances.bin has {} bytes, expected {}",
                raw.len(),
                n * n * 8
            )));
        }
        let distances = raw
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
            .collect();

        let weights_text = fs::read_to_string(dir.join("weights.csv"))?;
        let mut weights = vec![f64::NAN; n];
        for (line_no, line) in data_lines(&weights_text) {
            let fields: Vec<&str> = line.split(',').collect();
            if fields.len() != 2 {
                return Err(Error::Parse(format!("weights.csv line {line_no}: expected 2 fields")));
            }
            let i = parse_index(fields[0], n, line_no)?;
            weights[i] = parse_f64(fields[1], line_no)?;
        }

        let mut core_mask = vec![true; n];
        let mut boundary_distance = vec![f64::INFINITY; n];
        let mut coords: Vec<Vec<f64>> = vec![Vec::new(); n];
        let points_path = dir.join("points.csv");
        if points_path.exists() {
            let text = fs::read_to_string(points_path)?;
            for (line_no, line) in data_lines(&text) {
                let fields: Vec<&str> = line.split(',').collect();
                if fields.len() < 3 {
                    return Err(Error::Parse(format!("points.csv line {line_no}: too few fields")));
                }
                let i = parse_index(fields[0], n, line_no)?;
                core_mask[i] = fields[1].trim() == "1";
                boundary_distance[i] = parse_f64(fields[2], line_no)?;
                coords[i] = fields[3..]
                    .iter()
                    .map(|f| parse_f64(f, line_no))
                    .collect::<Result<_>>()?;
            }
        }
        let coords = if coords.iter().all(|c| !c.is_empty()) {
            Some(coords)
        } else {
            None
        };
        SampledSpace::from_parts(
            distances,
            weights,
            core_mask,
            boundary_distance,
            coords,
            meta.descriptor,
        )
    }

    /// SHA-256 over the serialized directory contents.
    pub fn content_hash(&self) -> String {
        let files = self.serialized();
        let mut h = Sha256::new();
        for part in [&files.meta, &files.points, &files.weights, &files.distances] {
            h.update((part.len() as u64).to_le_bytes());
            h.update(part);
        }
        h.finalize().iter().map(|b| format!("{b:02x}")).collect()
    }

    fn serialized(&self) -> SerializedSpace {
        let meta = SpaceMeta {
            format_version: 1,
            n: self.n,
            descriptor: self.descriptor.clone(),
        };
        let mut meta_bytes = serde_json::to_vec_pretty(&meta).expect("meta serializes");
        meta_bytes.push(b'\n');

        let dim = self.coords.as_ref().map_or(0, |c| c[0].len());
        let mut points = Vec::new();
        write!(points, "index,core,boundary_distance").unwrap();
        for k in 0..dim {
            write!(points, ",x{k}").unwrap();
        }
        points.push(b'\n');
        for i in 0..self.n {
            write!(
                points,
                "{},{},{}",
                i,
                u8::from(self.core_mask[i]),
                fmt_f64(self.boundary_distance[i])
            )
            .unwrap();
            if let Some(c) = &self.coords {
                for x in &c[i] {
                    write!(points, ",{}", fmt_f64(*x)).unwrap();
                }
            }
            points.push(b'\n');
        }

        let mut weights = Vec::new();
        writeln!(weights, "index,weight").unwrap();
        for (i, m) in self.weights.iter().enumerate() {
            writeln!(weights, "{},{}", i, fmt_f64(*m)).unwrap();
        }

        let mut distances = Vec::with_capacity(self.distances.len() * 8);
        for d in &self.distances {
            distances.extend_from_slice(&d.to_le_bytes());
        }
        SerializedSpace {
            meta: meta_bytes,
            points,
            weights,
            distances,
        }
    }
}

struct SerializedSpace {
    meta: Vec<u8>,
    points: Vec<u8>,
    weights: Vec<u8>,
    distances: Vec<u8>,
}

#[derive(Serialize, Deserialize)]
struct SpaceMeta {
    format_version: u32,
    n: usize,
    descriptor: SpaceDescriptor,
}

/// Formats a float with 17 significant digits (lossless round trip).
pub fn fmt_f64(x: f64) -> String {
    if x.is_infinite() {
        if x > 0.0 { "inf".into() } else { "-inf".into() }
    } else if x.is_nan() {
        "nan".into()
    } else {
        format!("{x:.16e}")
    }
}

fn data_lines(text: &str) -> impl Iterator<Item = (usize, &str)> {
    text.lines()
        .enumerate()
        .skip(1)
        .map(|(i, l)| (i + 1, l.trim()))
        .filter(|(_, l)| !l.is_empty())
}

fn parse_f64(s: &str, line: usize) -> Result<f64> {
    s.trim()
        .parse::<f64>()
        .map_err(|e| Error::Parse(format!("line {line}: `{s}`: {e}")))
}

fn parse_index(s: &str, n: usize, line: usize) -> Result<usize> {
    let i = s
        .trim()
        .parse::<usize>()
        .map_err(|e| Error::Parse(format!("line {line}: `{s}`: {e}")))?;
    if i >= n {
        return Err(Error::IndexOutOfRange { index: i, n });
    }
    Ok(i)
}

/// Discretizes a model space into `n` points (see the module docs).
///
/// * circle: `n` equally spaced points, weights `L/n`;
/// * euclidean: a `k^N` lattice on `[-R_max, R_max]^N` with `k = floor(n^(1/N))`
///   and cell-volume weights;
/// * hyperbolic3: a central point plus radial shells of equal thickness, each
///   shell holding a Fibonacci-sphere set of points sharing the shell's mass.
pub fn make_model_sample(desc: &SpaceDescriptor, n: usize, seed: u64) -> Result<SampledSpace> {
    desc.validate()?;
    match desc.kind {
        SpaceKind::Circle => sample_circle(desc, n),
        SpaceKind::Euclidean => sample_lattice(desc, n),
        SpaceKind::Hyperbolic3 => sample_hyperbolic3(desc, n, seed),
        SpaceKind::Sampled => Err(Error::UnknownKind(
            "sampled (only model spaces can be discretized)".into(),
        )),
    }
}

fn sample_circle(desc: &SpaceDescriptor, n: usize) -> Result<SampledSpace> {
    if n < 3 {
        return Err(Error::TooFewPoints {
            kind: "circle".into(),
            min: 3,
            got: n,
        });
    }
    let l = desc.circumference_or_err()?;
    let step = l / n as f64;
    // Index arithmetic keeps the distance matrix exactly circulant.
    let mut distances = vec![0.0; n * n];
    for i in 0..n {
        for j in 0..n {
            let k = i.abs_diff(j);
            distances[i * n + j] = k.min(n - k) as f64 * step;
        }
    }
    let coords = (0..n).map(|i| vec![i as f64 * step]).collect();
    SampledSpace::from_parts(
        distances,
        vec![step; n],
        vec![true; n],
        vec![f64::INFINITY; n],
        Some(coords),
        desc.clone(),
    )
}

fn sample_lattice(desc: &SpaceDescriptor, n: usize) -> Result<SampledSpace> {
    let r_max = desc.truncation_radius.ok_or_else(|| {
        Error::InvalidDescriptor("euclidean sampling needs a truncation radius R_max".into())
    })?;
    let dim = desc.dimension as usize;
    let mut k = (n as f64).powf(1.0 / dim as f64).floor() as usize;
    while (k + 1).pow(dim as u32) <= n {
        k += 1;
    }
    while k > 0 && k.pow(dim as u32) > n {
        k -= 1;
    }
    if k < 2 {
        return Err(Error::TooFewPoints {
            kind: format!("euclidean N={dim} lattice"),
            min: 2usize.pow(dim as u32),
            got: n,
        });
    }
    let spacing = 2.0 * r_max / (k - 1) as f64;
    let total = k.pow(dim as u32);
    let coords: Vec<Vec<f64>> = (0..total)
        .map(|mut idx| {
            let mut c = vec![0.0; dim];
            for x in c.iter_mut() {
                *x = -r_max + (idx % k) as f64 * spacing;
                idx /= k;
            }
            c
        })
        .collect();
    let mut distances = vec![0.0; total * total];
    for i in 0..total {
        for j in (i + 1)..total {
            let d = coords[i]
                .iter()
                .zip(&coords[j])
                .map(|(a, b)| (a - b) * (a - b))
                .sum::<f64>()
                .sqrt();
            distances[i * total + j] = d;
            distances[j * total + i] = d;
        }
    }
    let boundary: Vec<f64> = coords
        .iter()
        .map(|c| r_max - c.iter().fold(0.0_f64, |m, x| m.max(x.abs())))
        .collect();
    let core = boundary.iter().map(|&b| b >= r_max / 2.0 - 1e-12).collect();
    SampledSpace::from_parts(
        distances,
        vec![spacing.powi(dim as i32); total],
        core,
        boundary,
        Some(coords),
        desc.clone(),
    )
}

fn sample_hyperbolic3(desc: &SpaceDescriptor, n: usize, seed: u64) -> Result<SampledSpace> {
    if n < 16 {
        return Err(Error::TooFewPoints {
            kind: "hyperbolic3".into(),
            min: 16,
            got: n,
        });
    }
    let r_max = desc.truncation_radius.ok_or_else(|| {
        Error::InvalidDescriptor("hyperbolic3 sampling needs a truncation radius R_max".into())
    })?;
    let total_mass = hyperbolic3_ball_volume(r_max);
    let cell = total_mass / n as f64;
    let r_center = invert_monotone(hyperbolic3_ball_volume, cell, r_max);
    let spacing = cell.cbrt();
    let shells = (((r_max - r_center) / spacing).round() as usize).clamp(1, n - 1);
    let bounds: Vec<f64> = (0..=shells)
        .map(|j| r_center + (r_max - r_center) * j as f64 / shells as f64)
        .collect();
    let masses: Vec<f64> = bounds
        .windows(2)
        .map(|w| hyperbolic3_ball_volume(w[1]) - hyperbolic3_ball_volume(w[0]))
        .collect();
    let counts = apportion(&masses, n - 1);

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut coords = vec![vec![0.0, 0.0, 0.0]];
    let mut weights = vec![hyperbolic3_ball_volume(r_center)];
    for (j, (&count, &mass)) in counts.iter().zip(&masses).enumerate() {
        let v_mid = 0.5 * (hyperbolic3_ball_volume(bounds[j]) + hyperbolic3_ball_volume(bounds[j + 1]));
        let radius = invert_monotone(hyperbolic3_ball_volume, v_mid, r_max);
        let rotation = random_rotation(&mut rng);
        for dir in fibonacci_sphere(count) {
            let d = apply_rotation(&rotation, dir);
            coords.push(d.iter().map(|x| x * radius).collect());
            weights.push(mass / count as f64);
        }
    }
    let total = coords.len();
    let mut distances = vec![0.0; total * total];
    for i in 0..total {
        for j in (i + 1)..total {
            let d = hyperbolic3_distance(&coords[i], &coords[j]);
            distances[i * total + j] = d;
            distances[j * total + i] = d;
        }
    }
    let boundary: Vec<f64> = coords.iter().map(|c| r_max - norm(c)).collect();
    let core = boundary.iter().map(|&b| b >= r_max / 2.0 - 1e-12).collect();
    SampledSpace::from_parts(distances, weights, core, boundary, Some(coords), desc.clone())
}

/// Largest-remainder apportionment of `total` items proportional to `shares`,
/// with at least one item per share.
fn apportion(shares: &[f64], total: usize) -> Vec<usize> {
    let k = shares.len();
    let sum: f64 = shares.iter().sum();
    let spare = total - k;
    let exact: Vec<f64> = shares.iter().map(|s| s / sum * spare as f64).collect();
    let mut counts: Vec<usize> = exact.iter().map(|e| 1 + e.floor() as usize).collect();
    let mut left = total - counts.iter().sum::<usize>();
    let mut order: Vec<usize> = (0..k).collect();
    order.sort_by(|&a, &b| {
        let ra = exact[a] - exact[a].floor();
        let rb = exact[b] - exact[b].floor();
        rb.total_cmp(&ra).then(a.cmp(&b))
    });
    for &i in order.iter().cycle() {
        if left == 0 {
            break;
        }
        counts[i] += 1;
        left -= 1;
    }
    counts
}

fn invert_monotone(f: impl Fn(f64) -> f64, target: f64, hi: f64) -> f64 {
    let (mut lo, mut hi) = (0.0, hi);
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if f(mid) < target {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    0.5 * (lo + hi)
}

fn fibonacci_sphere(count: usize) -> Vec<[f64; 3]> {
    let golden = PI * (3.0 - 5.0_f64.sqrt());
    (0..count)
        .map(|k| {
            let z = 1.0 - (2 * k + 1) as f64 / count as f64;
            let rho = (1.0 - z * z).max(0.0).sqrt();
            let phi = golden * k as f64;
            [rho * phi.cos(), rho * phi.sin(), z]
        })
        .collect()
}

/// Uniform random rotation (unit quaternion, Shoemake's method).
fn random_rotation(rng: &mut ChaCha8Rng) -> [[f64; 3]; 3] {
    let (u1, u2, u3): (f64, f64, f64) = (rng.random(), rng.random(), rng.random());
    let a = (1.0 - u1).sqrt();
    let b = u1.sqrt();
    let (w, x, y, z) = (
        a * (2.0 * PI * u2).sin(),
        a * (2.0 * PI * u2).cos(),
        b * (2.0 * PI * u3).sin(),
        b * (2.0 * PI * u3).cos(),
    );
    [
        [1.0 - 2.0 * (y * y + z * z), 2.0 * (x * y - z * w), 2.0 * (x * z + y * w)],
        [2.0 * (x * y + z * w), 1.0 - 2.0 * (x * x + z * z), 2.0 * (y * z - x * w)],
        [2.0 * (x * z - y * w), 2.0 * (y * z + x * w), 1.0 - 2.0 * (x * x + y * y)],
    ]
}

fn apply_rotation(r: &[[f64; 3]; 3], v: [f64; 3]) -> [f64; 3] {
    let mut out = [0.0; 3];
    for (o, row) in out.iter_mut().zip(r) {
        *o = row[0] * v[0] + row[1] * v[1] + row[2] * v[2];
    }
    out
}

/// `mu(B(x0, r))` on a radius grid together with the boundary measure.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VolumeProfile {
    pub center: usize,
    pub r_grid: Vec<f64>,
    pub vol: Vec<f64>,
    pub s: Vec<f64>,
    /// Central-difference half-width used for `s` (0 for closed forms).
    pub delta: f64,
    /// Whether `B(x0, r + delta)` stays clear of the truncation boundary.
    pub trusted: Vec<bool>,
    /// `max |s_delta - s_2delta| / max s_delta`: how much `s` moves when the
    /// difference width doubles.
    pub delta_sensitivity: f64,
    /// Volume is bounded (compact space).
    pub bounded: bool,
}

impl VolumeProfile {
    /// Closed-form profile of a model space.
    pub fn analytic(desc: &SpaceDescriptor, r_grid: &[f64]) -> Result<Self> {
        check_increasing(r_grid)?;
        let vol = r_grid
            .iter()
            .map(|&r| model_ball_volume(desc, r))
            .collect::<Result<Vec<_>>>()?;
        let s = r_grid
            .iter()
            .map(|&r| model_boundary_measure(desc, r))
            .collect::<Result<Vec<_>>>()?;
        Ok(VolumeProfile {
            center: 0,
            r_grid: r_grid.to_vec(),
            vol,
            s,
            delta: 0.0,
            trusted: vec![true; r_grid.len()],
            delta_sensitivity: 0.0,
            bounded: desc.is_compact(),
        })
    }

    pub fn is_fully_trusted(&self) -> bool {
        self.trusted.iter().all(|&t| t)
    }

    /// Trapezoid integral of `s` over `[0, r_grid[k]]`, taking `s(0)` from
    /// the first grid value when the grid does not start at zero.
    pub fn integrated_boundary_measure(&self) -> Vec<f64> {
        cumulative_trapezoid(&self.r_grid, &self.s)
    }
}

/// Running trapezoid integral from `r = 0` over a grid.
pub(crate) fn cumulative_trapezoid(grid: &[f64], values: &[f64]) -> Vec<f64> {
    let mut out = Vec::with_capacity(grid.len());
    let mut acc = 0.0;
    let mut prev_r = 0.0;
    let mut prev_v = values.first().copied().unwrap_or(0.0);
    for (&r, &v) in grid.iter().zip(values) {
        acc += 0.5 * (r - prev_r) * (v + prev_v);
        out.push(acc);
        prev_r = r;
        prev_v = v;
    }
    out
}

fn check_increasing(r_grid: &[f64]) -> Result<()> {
    if r_grid.is_empty() {
        return Err(Error::Domain("radius grid is empty".into()));
    }
    if r_grid[0] < 0.0 || r_grid.windows(2).any(|w| w[1] <= w[0]) {
        return Err(Error::Domain("radius grid must be nonnegative and increasing".into()));
    }
    Ok(())
}

/// Volume profile of a sampled space around `center`.
///
/// `vol` is exact counting; `s` is the central difference
/// `(vol(r + delta) - vol(r - delta)) / (2 delta)`. Radii whose ball
/// `B(center, r + delta)` reaches the truncation boundary are flagged
/// untrusted rather than rejected.
pub fn volume_profile(
    space: &SampledSpace,
    center: usize,
    r_grid: &[f64],
    delta: f64,
) -> Result<VolumeProfile> {
    if center >= space.len() {
        return Err(Error::IndexOutOfRange {
            index: center,
            n: space.len(),
        });
    }
    check_increasing(r_grid)?;
    let local = space.nearest_neighbor_distance(center);
    if !(delta > 2.0 * local) {
        return Err(Error::BelowResolution {
            what: "delta".into(),
            value: delta,
            min: 2.0 * local,
        });
    }
    let row = space.distance_row(center);
    let weights = space.weights();
    let mut order: Vec<usize> = (0..space.len()).collect();
    order.sort_by(|&a, &b| row[a].total_cmp(&row[b]));
    let sorted_d: Vec<f64> = order.iter().map(|&i| row[i]).collect();
    let mut prefix = Vec::with_capacity(order.len() + 1);
    prefix.push(0.0);
    for &i in &order {
        prefix.push(prefix.last().unwrap() + weights[i]);
    }
    let vol_at = |r: f64| -> f64 {
        if r <= 0.0 {
            return 0.0;
        }
        let k = sorted_d.partition_point(|&d| d < r);
        prefix[k]
    };
    let diff = |r: f64, w: f64| (vol_at(r + w) - vol_at(r - w)) / (2.0 * w);

    let vol: Vec<f64> = r_grid.iter().map(|&r| vol_at(r)).collect();
    let s: Vec<f64> = r_grid.iter().map(|&r| diff(r, delta)).collect();
    let s_coarse: Vec<f64> = r_grid.iter().map(|&r| diff(r, 2.0 * delta)).collect();
    let s_max = s.iter().cloned().fold(0.0, f64::max);
    let delta_sensitivity = if s_max > 0.0 {
        s.iter()
            .zip(&s_coarse)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
            / s_max
    } else {
        0.0
    };
    let reach = space.boundary_distance()[center];
    let trusted = r_grid.iter().map(|&r| r + delta <= reach).collect();
    Ok(VolumeProfile {
        center,
        r_grid: r_grid.to_vec(),
        vol,
        s,
        delta,
        trusted,
        delta_sensitivity,
        bounded: space.is_untruncated(),
    })
}

/// `d(E, F) = min_{e in E, f in F} D(e, f)`; zero when the sets meet.
pub fn set_distance(space: &SampledSpace, e: &[usize], f: &[usize]) -> Result<f64> {
    space.check_indices(e)?;
    space.check_indices(f)?;
    Ok(e.iter()
        .map(|&i| space.distance_to_set(i, f))
        .fold(f64::INFINITY, f64::min))
}

/// Lipschitz cut-off equal to 1 on the open `eps/2`-neighborhood of `F` and
/// 0 outside the `eps`-neighborhood, with slope at most `2/eps`.
///
/// Evaluates `min((eps/2 - d(x, F^(eps/2)))^+ / (eps/2), 1)` using the
/// length-space identity `d(x, F^(r)) = (d(x, F) - r)^+`.
pub fn build_cutoff(space: &SampledSpace, f: &[usize], eps: f64) -> Result<Vec<f64>> {
    space.check_indices(f)?;
    let resolution = 4.0 * space.mean_spacing();
    if !(eps > resolution) {
        return Err(Error::BelowResolution {
            what: "epsilon".into(),
            value: eps,
            min: resolution,
        });
    }
    let half = 0.5 * eps;
    Ok((0..space.len())
        .map(|i| {
            let to_nbhd = (space.distance_to_set(i, f) - half).max(0.0);
            ((half - to_nbhd).max(0.0) / half).min(1.0)
        })
        .collect())
}

/// Largest discrete slope `max_{i != j} |chi_i - chi_j| / D_ij`.
pub fn discrete_lipschitz(space: &SampledSpace, values: &[f64]) -> f64 {
    let n = space.len();
    let mut best = 0.0_f64;
    for i in 0..n {
        for j in (i + 1)..n {
            best = best.max((values[i] - values[j]).abs() / space.dist(i, j));
        }
    }
    best
}

#[cfg(test)]
mod tests {
    use super::*;

    fn approx(a: f64, b: f64, tol: f64) -> bool {
        (a - b).abs() <= tol * b.abs().max(1.0)
    }

    #[test]
    fn circle_of_four_points() {
        let space = make_model_sample(&SpaceDescriptor::circle(2.0 * PI), 4, 0).unwrap();
        assert_eq!(space.len(), 4);
        let arcs: Vec<f64> = space.coords().unwrap().iter().map(|c| c[0]).collect();
        for (a, e) in arcs.iter().zip([0.0, PI / 2.0, PI, 1.5 * PI]) {
            assert!(approx(*a, e, 1e-15));
        }
        assert!(space.weights().iter().all(|&m| approx(m, PI / 2.0, 1e-15)));
        assert!(approx(space.dist(0, 1), PI / 2.0, 1e-15));
        assert!(approx(space.dist(0, 2), PI, 1e-15));
        assert!(approx(space.dist(0, 3), PI / 2.0, 1e-15));
    }

    #[test]
    fn line_lattice_of_five_points() {
        let desc = SpaceDescriptor::euclidean(1).with_truncation(1.0);
        let space = make_model_sample(&desc, 5, 0).unwrap();
        let xs: Vec<f64> = space.coords().unwrap().iter().map(|c| c[0]).collect();
        assert_eq!(xs, vec![-1.0, -0.5, 0.0, 0.5, 1.0]);
        assert!(space.weights().iter().all(|&m| m == 0.5));
        assert_eq!(space.core_mask(), &[false, true, true, true, false]);
    }

    #[test]
    fn hyperbolic_sample_carries_the_ball_mass() {
        let desc = SpaceDescriptor::hyperbolic3().with_truncation(3.0);
        let space = make_model_sample(&desc, 2000, 7).unwrap();
        assert_eq!(space.len(), 2000);
        // pi (sinh 6 - 6)
        let expected = 614.851_017_405_332_3;
        assert!(approx(space.total_mass(), expected, 1e-9));
        assert!(approx(hyperbolic3_ball_volume(3.0), expected, 1e-12));
        assert_eq!(space.coords().unwrap()[0], vec![0.0, 0.0, 0.0]);
    }

    #[test]
    fn unknown_and_undersized_samples_are_rejected() {
        let sampled = SpaceDescriptor::sampled(2.0, 0.0);
        assert!(matches!(make_model_sample(&sampled, 100, 0), Err(Error::UnknownKind(_))));
        let h = SpaceDescriptor::hyperbolic3().with_truncation(2.0);
        assert!(matches!(make_model_sample(&h, 8, 0), Err(Error::TooFewPoints { .. })));
        let e = SpaceDescriptor::euclidean(2).with_truncation(1.0);
        assert!(matches!(make_model_sample(&e, 3, 0), Err(Error::TooFewPoints { .. })));
        assert!("torus".parse::<SpaceKind>().is_err());
    }

    #[test]
    fn descriptor_consistency() {
        let mut d = SpaceDescriptor::hyperbolic3();
        d.curvature = -1.0;
        assert!(d.validate().is_err());
        let mut c = SpaceDescriptor::circle(1.0);
        c.dimension = 2.0;
        assert!(c.validate().is_err());
        assert!(SpaceDescriptor::euclidean(2).with_truncation(-1.0).validate().is_err());
        assert!(SpaceDescriptor::euclidean(3).validate().is_ok());
    }

    #[test]
    fn unit_ball_volumes() {
        assert!(approx(unit_ball_volume(2.0), PI, 1e-14));
        assert!(approx(unit_ball_volume(3.0), 4.0 * PI / 3.0, 1e-14));
        assert!(approx(unit_ball_volume(1.0), 2.0, 1e-14));
    }

    #[test]
    fn hyperbolic_volume_series_branch_is_continuous() {
        let r = 0.005 - 1e-12;
        let direct = PI * ((2.0 * r as f64).sinh() - 2.0 * r);
        assert!(approx(hyperbolic3_ball_volume(r), direct, 1e-6));
        assert!(approx(hyperbolic3_ball_volume(1.0), 5.110_932_705_708_289, 1e-12));
        assert!(approx(hyperbolic3_sphere_area(1.0), 17.355_387_381_771_433, 1e-12));
    }

    #[test]
    fn circle_profile_half_circle() {
        let space = make_model_sample(&SpaceDescriptor::circle(2.0 * PI), 400, 0).unwrap();
        let step = 2.0 * PI / 400.0;
        // Open ball of radius pi/2 + step/2 holds 201 points: exactly half the circle plus one cell.
        let p = volume_profile(&space, 0, &[PI / 2.0 + 0.5 * step], 3.0 * step).unwrap();
        assert!(approx(p.vol[0], PI + step, 1e-12));
        assert!(p.bounded);
    }

    #[test]
    fn profile_rejects_narrow_delta() {
        let space = make_model_sample(&SpaceDescriptor::circle(2.0 * PI), 64, 0).unwrap();
        let step = 2.0 * PI / 64.0;
        assert!(matches!(
            volume_profile(&space, 0, &[1.0], step),
            Err(Error::BelowResolution { .. })
        ));
        assert!(volume_profile(&space, 0, &[1.0, 0.5], 3.0 * step).is_err());
    }

    #[test]
    fn set_distances() {
        let space = make_model_sample(&SpaceDescriptor::circle(2.0 * PI), 8, 0).unwrap();
        assert_eq!(set_distance(&space, &[1, 2], &[2, 5]).unwrap(), 0.0);
        assert!(approx(set_distance(&space, &[0], &[4]).unwrap(), PI, 1e-15));
        assert!(matches!(set_distance(&space, &[], &[1]), Err(Error::EmptySet)));

        let line = make_model_sample(&SpaceDescriptor::euclidean(1).with_truncation(1.0), 5, 0).unwrap();
        // [-1, -0.5] and [0.5, 1]
        assert!(approx(set_distance(&line, &[0, 1], &[3, 4]).unwrap(), 1.0, 1e-15));
    }

    #[test]
    fn cutoff_on_line() {
        let desc = SpaceDescriptor::euclidean(1).with_truncation(3.0);
        let space = make_model_sample(&desc, 61, 0).unwrap();
        let xs: Vec<f64> = space.coords().unwrap().iter().map(|c| c[0]).collect();
        let origin = xs.iter().position(|x| x.abs() < 1e-12).unwrap();
        let chi = build_cutoff(&space, &[origin], 2.0).unwrap();
        for (x, c) in xs.iter().zip(&chi) {
            let expected = (2.0 - x.abs()).clamp(0.0, 1.0);
            assert!(approx(*c, expected, 1e-12), "x = {x}: {c} vs {expected}");
        }
        assert!(discrete_lipschitz(&space, &chi) <= 1.0 * (1.0 + 1e-12));
    }

    #[test]
    fn cutoff_whole_space_and_circle() {
        let space = make_model_sample(&SpaceDescriptor::circle(2.0 * PI), 64, 0).unwrap();
        let all: Vec<usize> = (0..64).collect();
        assert!(build_cutoff(&space, &all, 0.5).unwrap().iter().all(|&c| c == 1.0));
        let chi = build_cutoff(&space, &[0], PI / 2.0).unwrap();
        assert_eq!(chi[32], 0.0); // arc pi
        assert_eq!(chi[4], 1.0); // arc pi/8
        assert!(matches!(
            build_cutoff(&space, &[0], 0.2),
            Err(Error::BelowResolution { .. })
        ));
    }

    #[test]
    fn triangle_violations_are_caught() {
        let d = vec![0.0, 1.0, 5.0, 1.0, 0.0, 1.0, 5.0, 1.0, 0.0];
        let err = SampledSpace::from_parts(
            d,
            vec![1.0; 3],
            vec![true; 3],
            vec![f64::INFINITY; 3],
            None,
            SpaceDescriptor::sampled(1.0, 0.0),
        );
        assert!(matches!(err, Err(Error::InvalidSpace(_))));
    }

    #[test]
    fn apportion_is_exact() {
        let counts = apportion(&[1.0, 2.0, 3.0, 10.0], 50);
        assert_eq!(counts.iter().sum::<usize>(), 50);
        assert!(counts.iter().all(|&c| c >= 1));
    }
}
