//! Random test-function batches.
//!
//! Smooth, step and trigonometric families are defined on the underlying
//! model (through coordinates) whenever the sample carries coordinates, so
//! the same seed yields the same continuum functions on every refinement.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::analytic::model_distance;
use crate::spaces::{SampledSpace, SpaceKind};
use crate::spectral::SpectralDecomposition;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum BatchKind {
    /// Sum of Gaussian bumps.
    Smooth,
    /// Indicator of a ball (or its signed version).
    Step,
    /// A single trigonometric mode of the model.
    Trig,
    /// I.i.d. uniform node values.
    Noise,
    /// Eigenvector of the discrete generator.
    Eigen,
}

#[derive(Clone, Debug, PartialEq)]
enum Anchor {
    Coord(Vec<f64>),
    Index(usize),
}

/// A function given independently of the sample resolution.
#[derive(Clone, Debug, PartialEq)]
pub enum ContinuumFunction {
    Bumps { centers: Vec<Vec<f64>>, widths: Vec<f64>, amps: Vec<f64> },
    Step { center: Vec<f64>, radius: f64, inside: f64, outside: f64 },
    /// `cos(omega x_0 + phase)` in the first coordinate.
    Trig { omega: f64, phase: f64 },
}

impl ContinuumFunction {
    /// Values at the sample points (requires coordinates).
    pub fn sample(&self, space: &SampledSpace) -> Option<Vec<f64>> {
        let coords = space.coords()?;
        let desc = space.descriptor();
        let dist = |a: &[f64], b: &[f64]| model_distance(desc, a, b).unwrap_or(f64::INFINITY);
        Some(
            coords
                .iter()
                .map(|c| match self {
                    ContinuumFunction::Bumps { centers, widths, amps } => centers
                        .iter()
                        .zip(widths)
                        .zip(amps)
                        .map(|((z, w), a)| {
                            let d = dist(z, c);
                            a * (-d * d / (2.0 * w * w)).exp()
                        })
                        .sum(),
                    ContinuumFunction::Step { center, radius, inside, outside } => {
                        if dist(center, c) < *radius {
                            *inside
                        } else {
                            *outside
                        }
                    }
                    ContinuumFunction::Trig { omega, phase } => (omega * c[0] + phase).cos(),
                })
                .collect(),
        )
    }
}

/// Length scale of the sample used to size bumps and steps.
fn scale(space: &SampledSpace) -> f64 {
    let desc = space.descriptor();
    match (desc.kind, desc.truncation_radius, desc.circumference) {
        (SpaceKind::Circle, _, Some(l)) => 0.5 * l,
        (_, Some(r), _) => r,
        _ => 0.5 * space.diameter(),
    }
}

fn random_anchor(space: &SampledSpace, rng: &mut ChaCha8Rng) -> Anchor {
    let desc = space.descriptor();
    if space.coords().is_none() {
        let core = space.core_indices();
        let pool = if core.is_empty() { (0..space.len()).collect() } else { core };
        return Anchor::Index(pool[rng.random_range(0..pool.len())]);
    }
    match desc.kind {
        SpaceKind::Circle => {
            let l = desc.circumference.unwrap_or(1.0);
            Anchor::Coord(vec![rng.random_range(0.0..l)])
        }
        SpaceKind::Euclidean => {
            let half = 0.5 * scale(space);
            let n = desc.dimension as usize;
            Anchor::Coord((0..n).map(|_| rng.random_range(-half..half)).collect())
        }
        _ => {
            // direction uniform on the sphere, radius uniform in [0, R/2]
            let r = 0.5 * scale(space) * rng.random::<f64>();
            let z: f64 = rng.random_range(-1.0..1.0);
            let phi: f64 = rng.random_range(0.0..std::f64::consts::TAU);
            let s = (1.0 - z * z).sqrt();
            Anchor::Coord(vec![r * s * phi.cos(), r * s * phi.sin(), r * z])
        }
    }
}

fn anchor_distances(space: &SampledSpace, anchor: &Anchor) -> Vec<f64> {
    match anchor {
        Anchor::Index(i) => space.distance_row(*i).to_vec(),
        Anchor::Coord(c) => {
            let desc = space.descriptor();
            space
                .coords()
                .expect("coordinate anchors need coordinates")
                .iter()
                .map(|p| model_distance(desc, c, p).unwrap_or(f64::INFINITY))
                .collect()
        }
    }
}

fn random_continuum(
    space: &SampledSpace,
    kind: BatchKind,
    positive: bool,
    rng: &mut ChaCha8Rng,
) -> Option<ContinuumFunction> {
    let sc = scale(space);
    let coord = |a: Anchor| match a {
        Anchor::Coord(c) => Some(c),
        Anchor::Index(_) => None,
    };
    match kind {
        BatchKind::Smooth => {
            let m = rng.random_range(1..=3);
            let mut centers = Vec::new();
            let mut widths = Vec::new();
            let mut amps = Vec::new();
            for _ in 0..m {
                centers.push(coord(random_anchor(space, rng))?);
                widths.push(sc * rng.random_range(0.1..0.5));
                let a: f64 = rng.random_range(0.5..1.5);
                amps.push(if positive || rng.random::<bool>() { a } else { -a });
            }
            Some(ContinuumFunction::Bumps { centers, widths, amps })
        }
        BatchKind::Step => {
            let center = coord(random_anchor(space, rng))?;
            let radius = sc * rng.random_range(0.1..0.6);
            let (inside, outside) = if positive { (1.0, 0.0) } else { (1.0, -1.0) };
            Some(ContinuumFunction::Step { center, radius, inside, outside })
        }
        BatchKind::Trig => {
            let desc = space.descriptor();
            let omega = match (desc.kind, desc.circumference) {
                (SpaceKind::Circle, Some(l)) => {
                    std::f64::consts::TAU / l * rng.random_range(1..=16) as f64
                }
                (SpaceKind::Euclidean, _) => rng.random_range(0.25..3.0),
                _ => return None,
            };
            space.coords()?;
            Some(ContinuumFunction::Trig {
                omega,
                phase: rng.random_range(0.0..std::f64::consts::TAU),
            })
        }
        BatchKind::Noise | BatchKind::Eigen => None,
    }
}

/// `count` functions cycling through `kinds`, deterministic in `seed`.
///
/// With `positive`, every function is nonnegative and not identically zero.
/// `Eigen` needs `dec`; families that cannot be realized on this space
/// (e.g. `Trig` without coordinates) fall back to index-based bumps.
pub fn sample_batch(
    space: &SampledSpace,
    dec: Option<&SpectralDecomposition>,
    count: usize,
    seed: u64,
    kinds: &[BatchKind],
    positive: bool,
) -> Vec<Vec<f64>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = space.len();
    let kinds = if kinds.is_empty() { &[BatchKind::Smooth][..] } else { kinds };
    let mut out = Vec::with_capacity(count);
    for i in 0..count {
        let kind = kinds[i % kinds.len()];
        let mut f = match kind {
            BatchKind::Noise => (0..n)
                .map(|_| {
                    if positive {
                        rng.random_range(0.0..1.0)
                    } else {
                        rng.random_range(-1.0..1.0)
                    }
                })
                .collect(),
            BatchKind::Eigen => match dec {
                Some(dec) => {
                    // spread over the spectrum: low modes first, then extremes
                    let picks = [1usize, 2, 3, n / 8, n / 4, n / 2, n - 1];
                    let k = picks[(i / kinds.len()) % picks.len()].clamp(1, n - 1);
                    let mut v = dec.eigenvector(k);
                    if positive {
                        let m = v.iter().fold(0.0_f64, |a, x| a.max(x.abs()));
                        v.iter_mut().for_each(|x| *x = 1.0 + *x / m);
                    }
                    v
                }
                None => index_bumps(space, positive, &mut rng),
            },
            _ => match random_continuum(space, kind, positive, &mut rng) {
                Some(cf) => cf.sample(space).unwrap_or_else(|| index_bumps(space, positive, &mut rng)),
                None => index_bumps(space, positive, &mut rng),
            },
        };
        if positive && kind == BatchKind::Trig {
            f.iter_mut().for_each(|x| *x += 1.0);
        }
        if f.iter().all(|&x| x == 0.0) {
            f.iter_mut().for_each(|x| *x = 1.0);
        }
        out.push(f);
    }
    out
}

fn index_bumps(space: &SampledSpace, positive: bool, rng: &mut ChaCha8Rng) -> Vec<f64> {
    let sc = scale(space);
    let anchor = {
        let core = space.core_indices();
        let pool: Vec<usize> = if core.is_empty() { (0..space.len()).collect() } else { core };
        Anchor::Index(pool[rng.random_range(0..pool.len())])
    };
    let d = anchor_distances(space, &anchor);
    let w = sc * rng.random_range(0.1..0.5);
    let a: f64 = rng.random_range(0.5..1.5);
    let a = if positive || rng.random::<bool>() { a } else { -a };
    d.iter().map(|x| a * (-x * x / (2.0 * w * w)).exp()).collect()
}

/// Removes the weighted mean.
pub(crate) fn center(space: &SampledSpace, f: &mut [f64]) {
    let m = space.mean(f);
    f.iter_mut().for_each(|x| *x -= m);
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::spaces::{make_model_sample, SpaceDescriptor};

    #[test]
    fn batches_are_deterministic_and_resolution_independent() {
        let desc = SpaceDescriptor::circle(std::f64::consts::TAU);
        let coarse = make_model_sample(&desc, 64, 0).unwrap();
        let fine = make_model_sample(&desc, 128, 0).unwrap();
        let kinds = [BatchKind::Smooth, BatchKind::Step, BatchKind::Trig];
        let a = sample_batch(&coarse, None, 9, 7, &kinds, false);
        let b = sample_batch(&fine, None, 9, 7, &kinds, false);
        assert_eq!(a, sample_batch(&coarse, None, 9, 7, &kinds, false));
        for (fa, fb) in a.iter().zip(&b) {
            // node i of the coarse sample is node 2i of the fine one
            for (i, v) in fa.iter().enumerate() {
                assert!((v - fb[2 * i]).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn positive_batches_are_nonnegative() {
        let desc = SpaceDescriptor::euclidean(2).with_truncation(4.0);
        let space = make_model_sample(&desc, 100, 0).unwrap();
        let kinds = [BatchKind::Smooth, BatchKind::Step, BatchKind::Trig, BatchKind::Noise];
        for f in sample_batch(&space, None, 12, 3, &kinds, true) {
            assert!(f.iter().all(|&x| x >= 0.0));
            assert!(f.iter().any(|&x| x > 0.0));
        }
    }
}
