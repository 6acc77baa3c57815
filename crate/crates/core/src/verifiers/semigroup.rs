//! Semigroup axioms, Davies–Gaffney off-diagonal estimates and Riesz
//! transforms on sampled spaces.

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::analytic::AnalyticKernel;
use crate::error::{Error, Result};
use crate::spaces::{set_distance, SampledSpace, SpaceKind};
use crate::spectral::{lp_norm, SpectralDecomposition, ZeroMode};

use super::functions::{center, sample_batch, BatchKind};
use super::{CheckResult, MarginTracker, Status, Sweep};

pub const MASS_TOLERANCE: f64 = 1e-8;
pub const SYMMETRY_TOLERANCE: f64 = 1e-12;
pub const CHAPMAN_KOLMOGOROV_TOLERANCE: f64 = 1e-8;
pub const RIESZ_IDENTITY_TOLERANCE: f64 = 1e-8;
pub const RIESZ_DRIFT_LIMIT: f64 = 0.15;
/// Upper limit on the fitted constant when maximizing `beta`.
pub const GRADIENT_DG_C_MAX: f64 = 10.0;

fn label(dec: &SpectralDecomposition) -> String {
    format!("{} (n={})", dec.space().descriptor().label(), dec.len())
}

fn check_times(t_list: &[f64]) -> Result<()> {
    if let Some(t) = t_list.iter().find(|&&t| !(t > 0.0 && t.is_finite())) {
        return Err(Error::Domain(format!("time must be positive, got {t}")));
    }
    Ok(())
}

/// Records `residual <= limit` as an absolute comparison.
fn record_residual(tracker: &mut MarginTracker, residual: f64, limit: f64, coords: &[(&str, f64)]) {
    tracker.set_floor(limit);
    tracker.record(residual, limit, coords);
}

/// Mass `sum_j p_t(i,j) m_j = 1` (1e-8), symmetry (1e-12), Chapman–Kolmogorov
/// `p_{t+s} = p_t M p_s` (1e-8) and `||H_t f||_p <= ||f||_p` for the given
/// functions (relative `tolerance`).
pub fn check_semigroup_axioms(
    dec: &SpectralDecomposition,
    ts_pairs: &[(f64, f64)],
    functions: &[Vec<f64>],
    p_list: &[f64],
    tolerance: f64,
) -> Result<CheckResult> {
    for &(t, s) in ts_pairs {
        check_times(&[t, s])?;
    }
    let weights = dec.space().weights();
    let n = dec.len();
    let grid = format!("(t, s) in {ts_pairs:?}, {} functions, p in {p_list:?}", functions.len());
    let mut result = CheckResult::new("semigroup_axioms", &label(dec), grid, tolerance);
    let mut mass = MarginTracker::new(0.0);
    let mut symmetry = MarginTracker::new(0.0);
    let mut ck = MarginTracker::new(0.0);
    let mut contraction = MarginTracker::new(tolerance);
    let (mut max_mass, mut max_sym, mut max_ck) = (0.0_f64, 0.0_f64, 0.0_f64);
    for &(t, s) in ts_pairs {
        let pt = dec.heat_matrix(t);
        let ps = dec.heat_matrix(s);
        let pts = dec.heat_matrix(t + s);
        for (i, m) in pt.row_mass(weights).iter().enumerate() {
            let r = (m - 1.0).abs();
            max_mass = max_mass.max(r);
            record_residual(&mut mass, r, MASS_TOLERANCE, &[("t", t), ("i", i as f64)]);
        }
        let peak = pt.entries.amax();
        let mut worst = (0.0_f64, 0, 0);
        for i in 0..n {
            for j in (i + 1)..n {
                let r = (pt.entries[(i, j)] - pt.entries[(j, i)]).abs() / peak;
                if r > worst.0 {
                    worst = (r, i, j);
                }
            }
        }
        max_sym = max_sym.max(worst.0);
        record_residual(
            &mut symmetry,
            worst.0,
            SYMMETRY_TOLERANCE,
            &[("t", t), ("i", worst.1 as f64), ("j", worst.2 as f64)],
        );
        let mut scaled = ps.entries.clone();
        for (i, m) in weights.iter().enumerate() {
            scaled.row_mut(i).scale_mut(*m);
        }
        let product = &pt.entries * scaled;
        let peak = pts.entries.amax();
        let diff = (&product - &pts.entries).amax() / peak;
        max_ck = max_ck.max(diff);
        record_residual(&mut ck, diff, CHAPMAN_KOLMOGOROV_TOLERANCE, &[("t", t), ("s", s)]);
        for (fi, f) in functions.iter().enumerate() {
            let u = pt.apply(f, weights);
            for &p in p_list {
                contraction.record(
                    lp_norm(weights, &u, p)?,
                    lp_norm(weights, f, p)?,
                    &[("t", t), ("function", fi as f64), ("p", p)],
                );
            }
        }
    }
    result.constant("max_mass_residual", max_mass);
    result.constant("max_symmetry_residual", max_sym);
    result.constant("max_chapman_kolmogorov_residual", max_ck);
    if let Some(w) = &contraction.worst {
        result.constant("contraction_worst_relative_margin", w.relative);
    }
    mass.merge(symmetry);
    mass.merge(ck);
    mass.merge(contraction);
    result.absorb(&mass);
    Ok(result)
}

/// Mass, symmetry and Chapman–Kolmogorov for a closed-form kernel by
/// quadrature at base point `x` and partner `y`.
pub fn check_semigroup_axioms_analytic(
    kernel: &AnalyticKernel,
    x: &[f64],
    y: &[f64],
    ts_pairs: &[(f64, f64)],
    tolerance: f64,
) -> Result<CheckResult> {
    for &(t, s) in ts_pairs {
        check_times(&[t, s])?;
    }
    let model = kernel.model();
    let grid = format!("(t, s) in {ts_pairs:?}");
    let mut result = CheckResult::new("semigroup_axioms", &model.label(), grid, tolerance);
    let mut tracker = MarginTracker::new(0.0);
    let d = kernel.distance(x, y)?;
    let d_rev = kernel.distance(y, x)?;
    let (mut max_mass, mut max_ck) = (0.0_f64, 0.0_f64);
    for &(t, s) in ts_pairs {
        let q = kernel.semigroup_quadrature(&|_| 1.0, t, x)?;
        let r = (q.value - 1.0).abs();
        max_mass = max_mass.max(r);
        record_residual(&mut tracker, r, tolerance, &[("t", t)]);
        let sym = (kernel.value(t, d)? - kernel.value(t, d_rev)?).abs();
        record_residual(&mut tracker, sym, SYMMETRY_TOLERANCE * kernel.value(t, 0.0)?, &[("t", t)]);
        let partner = |z: &[f64]| {
            kernel
                .distance(z, y)
                .and_then(|dz| kernel.value(s, dz))
                .unwrap_or(f64::NAN)
        };
        let conv = kernel.semigroup_quadrature(&partner, t, x)?;
        let exact = kernel.value(t + s, d)?;
        let r = (conv.value - exact).abs() / exact;
        max_ck = max_ck.max(r);
        record_residual(&mut tracker, r, tolerance, &[("t", t), ("s", s)]);
    }
    result.constant("max_mass_residual", max_mass);
    result.constant("max_chapman_kolmogorov_residual", max_ck);
    result.absorb(&tracker);
    Ok(result)
}

/// Splits a circle sample into `parts` arcs of equal length.
pub fn arc_partition(space: &SampledSpace, parts: usize) -> Result<Vec<Vec<usize>>> {
    let desc = space.descriptor();
    let (Some(l), Some(coords)) = (desc.circumference, space.coords()) else {
        return Err(Error::Domain("arc partitions need a circle sample with coordinates".into()));
    };
    if desc.kind != SpaceKind::Circle || parts == 0 {
        return Err(Error::Domain("arc partitions need a circle sample and parts > 0".into()));
    }
    let mut arcs = vec![Vec::new(); parts];
    for (i, c) in coords.iter().enumerate() {
        let k = ((c[0].rem_euclid(l) / l) * parts as f64).floor() as usize;
        arcs[k.min(parts - 1)].push(i);
    }
    Ok(arcs)
}

/// Two balls `B(a, ra)` and `B(b, rb)` given by center node and radius.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct BallPair {
    pub a: usize,
    pub ra: f64,
    pub b: usize,
    pub rb: f64,
}

/// Disjoint ball pairs around spread-out core points, with radii of 3 and
/// 6 mean spacings.
pub fn ball_catalog(space: &SampledSpace, centers: usize) -> Vec<BallPair> {
    let core = space.core_indices();
    if core.is_empty() {
        return Vec::new();
    }
    let step = (core.len() / centers.max(1)).max(1);
    let picks: Vec<usize> = core.iter().step_by(step).copied().take(centers).collect();
    let h = space.mean_spacing();
    let mut out = Vec::new();
    for (ia, &a) in picks.iter().enumerate() {
        for &b in &picks[ia + 1..] {
            for &(ra, rb) in &[(3.0 * h, 3.0 * h), (3.0 * h, 6.0 * h), (6.0 * h, 6.0 * h)] {
                if space.dist(a, b) > ra + rb + h {
                    out.push(BallPair { a, ra, b, rb });
                }
            }
        }
    }
    out
}

/// Sets, times and batch sizes for the Davies–Gaffney family.
#[derive(Clone, Debug)]
pub struct DaviesGaffneyInput {
    /// Candidate sets; every ordered pair of disjoint sets is checked.
    pub sets: Vec<Vec<usize>>,
    pub balls: Vec<BallPair>,
    pub t_list: Vec<f64>,
    pub functions_per_pair: usize,
    pub seed: u64,
}

/// Weighted `L^2(E) -> L^2(F)` norm of the block `K[F, E]` of a kernel
/// matrix acting by `(K f)_i = sum_j K_ij f_j m_j`.
fn block_norm(kernel: &DMatrix<f64>, weights: &[f64], e: &[usize], f: &[usize]) -> f64 {
    let block = DMatrix::from_fn(f.len(), e.len(), |r, c| {
        let (i, j) = (f[r], e[c]);
        weights[i].sqrt() * kernel[(i, j)] * weights[j].sqrt()
    });
    block
        .singular_values()
        .iter()
        .cloned()
        .fold(0.0, f64::max)
}

fn l2_on(weights: &[f64], f: &[f64], set: &[usize]) -> f64 {
    set.iter().map(|&i| weights[i] * f[i] * f[i]).sum::<f64>().sqrt()
}

fn random_on(set: &[usize], n: usize, rng: &mut ChaCha8Rng) -> Vec<f64> {
    let mut f = vec![0.0; n];
    for &i in set {
        f[i] = rng.random_range(-1.0..1.0);
    }
    f
}

/// Time-derivative kernel `t d/dt p_t = sum_k -t lambda_k e^{-lambda_k t} phi_k phi_k^T`.
fn t_laplacian_matrix(dec: &SpectralDecomposition, t: f64) -> DMatrix<f64> {
    let mut scaled = dec.eigenvectors().clone();
    for (k, &l) in dec.eigenvalues().iter().enumerate() {
        scaled.column_mut(k).scale_mut(-t * l * (-l * t).exp());
    }
    scaled * dec.eigenvectors().transpose()
}

/// Davies–Gaffney family over all ordered pairs of disjoint sets:
/// `||H_t f||_{L^2(F)} <= e^{-d^2/4t} ||f||_{L^2(E)}` with constant exactly 1
/// (random `f` plus the exact operator norm of the block), the fitted `C` in
/// `||t Delta H_t f||_{L^2(F)} <= C e^{-d^2/6t} ||f||_2`, the largest `beta`
/// with `sqrt t || |grad H_t f| ||_{L^2(F)} <= C e^{-beta d^2/t} ||f||_2` and
/// `C <= 10`, and the bilinear bound `int (H_t f_1) f_2 <= e^{-d^2/4t}` for
/// unit functions on disjoint balls.
pub fn check_davies_gaffney(
    dec: &SpectralDecomposition,
    input: &DaviesGaffneyInput,
    tolerance: f64,
) -> Result<CheckResult> {
    check_times(&input.t_list)?;
    let space = dec.space();
    let gen = dec.generator();
    let weights = space.weights();
    let n = dec.len();
    let grid = format!(
        "{} sets, {} ball pairs, t in {:?}, {} functions per pair",
        input.sets.len(),
        input.balls.len(),
        input.t_list,
        input.functions_per_pair
    );
    let mut result = CheckResult::new("davies_gaffney", &label(dec), grid, tolerance);
    let mut rng = ChaCha8Rng::seed_from_u64(input.seed);
    let mut first = MarginTracker::new(tolerance);
    let mut bilinear = MarginTracker::new(tolerance);
    let mut sweep = Sweep::new(&["t", "e", "f", "distance", "operator_norm", "bound"]);
    // (ratio, d^2/t) samples for the gradient estimate
    let mut gradient_terms: Vec<(f64, f64)> = Vec::new();
    let mut laplacian_c = 0.0_f64;
    let mut pairs = 0usize;
    let mut sup_ratio = 0.0_f64;

    let nonempty: Vec<(usize, &Vec<usize>)> =
        input.sets.iter().enumerate().filter(|(_, s)| !s.is_empty()).collect();
    for &t in &input.t_list {
        let heat = dec.heat_matrix(t);
        let tl = t_laplacian_matrix(dec, t);
        for &(ei, e) in &nonempty {
            for &(fi, f) in &nonempty {
                if ei == fi {
                    continue;
                }
                let d = set_distance(space, e, f)?;
                if d == 0.0 {
                    continue;
                }
                pairs += 1;
                let bound = (-d * d / (4.0 * t)).exp();
                let coords = [("t", t), ("e", ei as f64), ("f", fi as f64), ("distance", d)];
                let op = block_norm(&heat.entries, weights, e, f);
                first.set_floor(0.0);
                first.record(op, bound, &coords);
                sweep.push(vec![t, ei as f64, fi as f64, d, op, bound]);
                let lap = block_norm(&tl, weights, e, f);
                laplacian_c = laplacian_c.max(lap / (-d * d / (6.0 * t)).exp());
                for _ in 0..input.functions_per_pair {
                    let g = random_on(e, n, &mut rng);
                    let norm = l2_on(weights, &g, e);
                    if norm == 0.0 {
                        continue;
                    }
                    let u = heat.apply(&g, weights);
                    let ratio = l2_on(weights, &u, f) / norm;
                    sup_ratio = sup_ratio.max(ratio / bound);
                    first.record(ratio, bound, &coords);
                    let gamma = gen.carre_du_champ(&u);
                    let grad: Vec<f64> = gamma.iter().map(|v| v.max(0.0).sqrt()).collect();
                    gradient_terms.push((t.sqrt() * l2_on(weights, &grad, f) / norm, d * d / t));
                }
            }
        }
        for (bi, ball) in input.balls.iter().enumerate() {
            let b1 = space.ball(ball.a, ball.ra);
            let b2 = space.ball(ball.b, ball.rb);
            if b1.is_empty() || b2.is_empty() {
                continue;
            }
            let d = set_distance(space, &b1, &b2)?;
            let bound = (-d * d / (4.0 * t)).exp();
            let coords = [("t", t), ("ball_pair", bi as f64), ("distance", d)];
            bilinear.record(block_norm(&heat.entries, weights, &b1, &b2), bound, &coords);
            for _ in 0..input.functions_per_pair {
                let f1 = random_on(&b1, n, &mut rng);
                let f2 = random_on(&b2, n, &mut rng);
                let (n1, n2) = (l2_on(weights, &f1, &b1), l2_on(weights, &f2, &b2));
                if n1 == 0.0 || n2 == 0.0 {
                    continue;
                }
                let u = heat.apply(&f1, weights);
                let pairing: f64 = b2.iter().map(|&i| weights[i] * u[i] * f2[i]).sum::<f64>() / (n1 * n2);
                bilinear.record(pairing, bound, &coords);
            }
        }
    }
    if pairs == 0 && input.balls.is_empty() {
        result.status = Status::Untrusted;
        result.note("no pair of disjoint sets at positive distance");
        return Ok(result);
    }
    result.constant("pairs", pairs as f64);
    result.constant("max_random_ratio_over_bound", sup_ratio);
    if let Some(w) = &first.worst {
        result.constant("first_worst_relative_margin", w.relative);
    }
    if let Some(w) = &bilinear.worst {
        result.constant("bilinear_worst_relative_margin", w.relative);
    }
    result.constant("laplacian_c", laplacian_c);

    let c_at = |beta: f64| {
        gradient_terms
            .iter()
            .map(|&(r, x)| r * (beta * x).exp())
            .fold(0.0, f64::max)
    };
    let c0 = c_at(0.0);
    result.constant("gradient_c_at_beta_0", c0);
    if !gradient_terms.is_empty() {
        if c0 > GRADIENT_DG_C_MAX {
            result.note(format!("the gradient estimate needs C = {c0:.4} > {GRADIENT_DG_C_MAX} even at beta = 0"));
            first.record(c0, GRADIENT_DG_C_MAX, &[("beta", 0.0)]);
        } else {
            let (mut lo, mut hi) = (0.0_f64, 1.0_f64);
            while c_at(hi) <= GRADIENT_DG_C_MAX && hi < 1e3 {
                lo = hi;
                hi *= 2.0;
            }
            for _ in 0..60 {
                let mid = 0.5 * (lo + hi);
                if c_at(mid) <= GRADIENT_DG_C_MAX {
                    lo = mid;
                } else {
                    hi = mid;
                }
            }
            result.constant("gradient_beta", lo);
            result.constant("gradient_c", c_at(lo));
        }
    }
    first.merge(bilinear);
    result.absorb(&first);
    result.sweep = Some(sweep);
    Ok(result)
}

/// Parameters for the Riesz-transform check.
#[derive(Clone, Debug)]
pub struct RieszInput {
    /// Shift `a >= 0` in `|grad (-A + a)^{-1/2}|`.
    pub a: f64,
    /// For `K < 0`: the smallest admissible shift (the fitted `C_2`).
    pub a_min: Option<f64>,
    pub p_list: Vec<f64>,
    /// Functions for the `L^2` identity.
    pub identity_batch: usize,
    /// Functions for the empirical `L^p` norms.
    pub batch: usize,
    pub seed: u64,
}

/// Riesz transform `T f = |grad (-A + a)^{-1/2} f|`. Checks the identity
/// `||sqrt Gamma((-A+a)^{-1/2} f)||^2 + a ||(-A+a)^{-1/2} f||^2 = ||f||^2`
/// (1e-8), and requires the empirical `L^p` operator norms over a mixed batch
/// to agree within 15% across `decs` (a refinement sequence). Reports the
/// weak-(1,1) quotient `sup lambda mu{Tf > lambda} / ||f||_1`.
pub fn check_riesz(decs: &[&SpectralDecomposition], input: &RieszInput) -> Result<CheckResult> {
    let Some(first) = decs.first() else {
        return Err(Error::Domain("the Riesz check needs at least one sample".into()));
    };
    let desc = first.space().descriptor();
    let a = input.a;
    if !(a >= 0.0 && a.is_finite()) {
        return Err(Error::Domain(format!("the shift a must be nonnegative, got {a}")));
    }
    if a == 0.0 && desc.curvature < 0.0 {
        return Err(Error::Domain(
            "a = 0 is only admissible for K = 0; K < 0 needs a large shift".into(),
        ));
    }
    let sizes: Vec<usize> = decs.iter().map(|d| d.len()).collect();
    let grid = format!(
        "a = {a}, n in {sizes:?}, p in {:?}, {} functions",
        input.p_list, input.batch
    );
    let mut result = CheckResult::new("riesz", &format!("{} x{}", desc.label(), decs.len()), grid, RIESZ_DRIFT_LIMIT);
    if let Some(a_min) = input.a_min {
        if a <= a_min {
            result.status = Status::HypothesisNotMet;
            result.note(format!("shift a = {a} is not above the fitted C_2 = {a_min}"));
            return Ok(result);
        }
    }
    let zero = if a == 0.0 { ZeroMode::ProjectOut } else { ZeroMode::Keep };
    let multiplier = move |l: f64| if l + a > 0.0 { 1.0 / (l + a).sqrt() } else { f64::INFINITY };
    let kinds = [BatchKind::Smooth, BatchKind::Step, BatchKind::Trig, BatchKind::Eigen];

    let mut identity = MarginTracker::new(0.0);
    let mut max_identity = 0.0_f64;
    let mut norms: Vec<Vec<f64>> = Vec::new();
    let mut weak = 0.0_f64;
    let mut sweep = Sweep::new(&["n", "p", "empirical_norm"]);
    for dec in decs {
        let space = dec.space();
        let weights = space.weights();
        let gen = dec.generator();
        let transform = |f: &[f64]| -> Result<(Vec<f64>, Vec<f64>)> {
            let u = dec.spectral_function(multiplier, f, zero)?;
            let grad = gen.carre_du_champ(&u);
            Ok((u, grad))
        };
        let mut prepare = |mut f: Vec<f64>| {
            if a == 0.0 {
                center(space, &mut f);
            }
            f
        };
        if std::ptr::eq(*dec, *first) {
            let batch = sample_batch(space, Some(dec), input.identity_batch, input.seed, &kinds, false);
            for (fi, f) in batch.into_iter().map(&mut prepare).enumerate() {
                let (u, gamma) = transform(&f)?;
                let energy: f64 = gamma.iter().zip(weights).map(|(g, m)| g * m).sum();
                let mass: f64 = u.iter().zip(weights).map(|(v, m)| v * v * m).sum();
                let norm2: f64 = f.iter().zip(weights).map(|(v, m)| v * v * m).sum();
                if norm2 == 0.0 {
                    continue;
                }
                let r = (energy + a * mass - norm2).abs() / norm2;
                max_identity = max_identity.max(r);
                record_residual(&mut identity, r, RIESZ_IDENTITY_TOLERANCE, &[("function", fi as f64)]);
            }
        }
        let batch = sample_batch(space, Some(dec), input.batch, input.seed.wrapping_add(1), &kinds, false);
        let mut sup = vec![0.0_f64; input.p_list.len()];
        for f in batch.into_iter().map(&mut prepare) {
            let (_, gamma) = transform(&f)?;
            let tf: Vec<f64> = gamma.iter().map(|g| g.max(0.0).sqrt()).collect();
            for (k, &p) in input.p_list.iter().enumerate() {
                let fp = lp_norm(weights, &f, p)?;
                if fp > 0.0 {
                    sup[k] = sup[k].max(lp_norm(weights, &tf, p)? / fp);
                }
            }
            let f1 = lp_norm(weights, &f, 1.0)?;
            if f1 > 0.0 {
                let mut order: Vec<usize> = (0..tf.len()).collect();
                order.sort_by(|&i, &j| tf[j].total_cmp(&tf[i]));
                let mut level_mass = 0.0;
                for i in order {
                    level_mass += weights[i];
                    weak = weak.max(tf[i] * level_mass / f1);
                }
            }
        }
        for (k, &p) in input.p_list.iter().enumerate() {
            sweep.push(vec![dec.len() as f64, p, sup[k]]);
        }
        norms.push(sup);
    }
    result.constant("max_identity_residual", max_identity);
    result.constant("weak_11_quotient", weak);
    let mut drift = MarginTracker::new(0.0);
    for (k, &p) in input.p_list.iter().enumerate() {
        let values: Vec<f64> = norms.iter().map(|s| s[k]).collect();
        for (i, v) in values.iter().enumerate() {
            result.constant(&format!("norm_p={p}_n={}", sizes[i]), *v);
        }
        let max = values.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let min = values.iter().cloned().fold(f64::INFINITY, f64::min);
        let spread = max / min - 1.0;
        result.constant(&format!("drift_p={p}"), spread);
        if decs.len() > 1 {
            record_residual(&mut drift, spread, RIESZ_DRIFT_LIMIT, &[("p", p)]);
        }
    }
    identity.merge(drift);
    result.absorb(&identity);
    result.sweep = Some(sweep);
    Ok(result)
}
