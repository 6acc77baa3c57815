//! One-dimensional quadrature: adaptive Gauss–Kronrod (7/15) and
//! Gauss–Hermite rules from the Golub–Welsch eigenproblem.

use nalgebra::{DMatrix, SymmetricEigen};

/// Outcome of an adaptive integration.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct QuadResult {
    pub value: f64,
    /// Sum of the local `|K15 - G7|` estimates.
    pub error: f64,
    /// False when the subdivision cap was hit before reaching tolerance.
    pub converged: bool,
}

impl QuadResult {
    fn zero() -> Self {
        QuadResult {
            value: 0.0,
            error: 0.0,
            converged: true,
        }
    }

    pub(crate) fn add(&mut self, other: QuadResult) {
        self.value += other.value;
        self.error += other.error;
        self.converged &= other.converged;
    }
}

const XGK: [f64; 8] = [
    0.991_455_371_120_812_6,
    0.949_107_912_342_758_5,
    0.864_864_423_359_769_1,
    0.741_531_185_599_394_4,
    0.586_087_235_467_691_1,
    0.405_845_151_377_397_2,
    0.207_784_955_007_898_5,
    0.0,
];
const WGK: [f64; 8] = [
    0.022_935_322_010_529_22,
    0.063_092_092_629_978_55,
    0.104_790_010_322_250_2,
    0.140_653_259_715_525_9,
    0.169_004_726_639_267_9,
    0.190_350_578_064_785_4,
    0.204_432_940_075_298_9,
    0.209_482_141_084_727_8,
];
const WG: [f64; 4] = [
    0.129_484_966_168_869_7,
    0.279_705_391_489_276_7,
    0.381_830_050_505_118_9,
    0.417_959_183_673_469_4,
];

fn gk15(f: &mut dyn FnMut(f64) -> f64, a: f64, b: f64) -> (f64, f64) {
    let c = 0.5 * (a + b);
    let h = 0.5 * (b - a);
    let fc = f(c);
    let mut kron = WGK[7] * fc;
    let mut gauss = WG[3] * fc;
    for j in 0..7 {
        let dx = h * XGK[j];
        let pair = f(c - dx) + f(c + dx);
        kron += WGK[j] * pair;
        if j % 2 == 1 {
            gauss += WG[j / 2] * pair;
        }
    }
    (kron * h, ((kron - gauss) * h).abs())
}

/// Adaptive Gauss–Kronrod integral of `f` over `[a, b]`.
///
/// An interval is accepted when its local error estimate is below
/// `abs_tol` times its share of the full length; at most `max_intervals`
/// evaluations of the 15-point rule are spent.
pub fn integrate(
    mut f: impl FnMut(f64) -> f64,
    a: f64,
    b: f64,
    abs_tol: f64,
    max_intervals: usize,
) -> QuadResult {
    if a == b {
        return QuadResult::zero();
    }
    let total = (b - a).abs();
    let mut out = QuadResult::zero();
    let mut stack = vec![(a, b)];
    let mut used = 0usize;
    while let Some((lo, hi)) = stack.pop() {
        let (v, e) = gk15(&mut f, lo, hi);
        used += 1;
        let budget = abs_tol * (hi - lo).abs() / total;
        let tiny = (hi - lo).abs() <= 1e-14 * total.max(lo.abs().max(hi.abs()));
        if e <= budget || tiny {
            out.value += v;
            out.error += e;
        } else if used + stack.len() >= max_intervals {
            out.value += v;
            out.error += e;
            out.converged = false;
        } else {
            let mid = 0.5 * (lo + hi);
            stack.push((mid, hi));
            stack.push((lo, mid));
        }
    }
    out
}

/// Integral over consecutive pieces `[p_0, p_1], [p_1, p_2], ...`, useful
/// when the integrand has known kinks or peaks at the breakpoints.
pub fn integrate_pieces(
    mut f: impl FnMut(f64) -> f64,
    breakpoints: &[f64],
    abs_tol: f64,
    max_intervals: usize,
) -> QuadResult {
    let mut out = QuadResult::zero();
    let span = breakpoints.last().unwrap_or(&0.0) - breakpoints.first().unwrap_or(&0.0);
    for w in breakpoints.windows(2) {
        let share = if span > 0.0 { (w[1] - w[0]) / span } else { 1.0 };
        out.add(integrate(&mut f, w[0], w[1], abs_tol * share, max_intervals));
    }
    out
}

/// Nodes and weights of the `m`-point Gauss–Hermite rule for
/// `integral e^{-x^2} g(x) dx`.
pub fn gauss_hermite(m: usize) -> (Vec<f64>, Vec<f64>) {
    assert!(m >= 1, "Gauss-Hermite rule needs at least one node");
    let mut jacobi = DMatrix::<f64>::zeros(m, m);
    for k in 1..m {
        let b = (k as f64 / 2.0).sqrt();
        jacobi[(k, k - 1)] = b;
        jacobi[(k - 1, k)] = b;
    }
    let eig = SymmetricEigen::new(jacobi);
    let mut pairs: Vec<(f64, f64)> = (0..m)
        .map(|k| {
            let v0 = eig.eigenvectors[(0, k)];
            (eig.eigenvalues[k], std::f64::consts::PI.sqrt() * v0 * v0)
        })
        .collect();
    pairs.sort_by(|a, b| a.0.total_cmp(&b.0));
    pairs.into_iter().unzip()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn polynomial_exactness() {
        let r = integrate(|x| x.powi(5) - 3.0 * x * x, -1.0, 2.0, 1e-12, 100);
        let exact = (64.0 - 1.0) / 6.0 - (8.0 + 1.0);
        assert!((r.value - exact).abs() < 1e-12);
        assert!(r.converged);
    }

    #[test]
    fn gaussian_integral() {
        let r = integrate(|x: f64| (-x * x).exp(), -10.0, 10.0, 1e-12, 1000);
        assert!((r.value - std::f64::consts::PI.sqrt()).abs() < 1e-12);
    }

    #[test]
    fn step_function_refines() {
        let r = integrate(|x| if x > 0.3 { 1.0 } else { 0.0 }, 0.0, 1.0, 1e-10, 10_000);
        assert!((r.value - 0.7).abs() < 1e-9);
    }

    #[test]
    fn cap_reports_non_convergence() {
        let r = integrate(|x| if x > 0.3 { 1.0 } else { 0.0 }, 0.0, 1.0, 1e-14, 5);
        assert!(!r.converged);
    }

    #[test]
    fn hermite_moments() {
        let (x, w) = gauss_hermite(20);
        let sqrt_pi = std::f64::consts::PI.sqrt();
        let m0: f64 = w.iter().sum();
        let m2: f64 = x.iter().zip(&w).map(|(x, w)| w * x * x).sum();
        let m4: f64 = x.iter().zip(&w).map(|(x, w)| w * x.powi(4)).sum();
        assert!((m0 - sqrt_pi).abs() < 1e-13);
        assert!((m2 - sqrt_pi / 2.0).abs() < 1e-13);
        assert!((m4 - 0.75 * sqrt_pi).abs() < 1e-12);
    }
}
