//! Discrete generator on a sampled space and its spectral calculus.
//!
//! The generator is a Gaussian-weight epsilon-graph Laplacian
//!
//! ```text
//! (A f)_i = sum_j a_ij (f_j - f_i),   a_ij = w_ij m_j / (c h z),
//! w_ij = exp(-D_ij^2 / 4h) for D_ij <= 4 sqrt(h), else 0,
//! ```
//!
//! where `z` is the mean over core points of `sum_j w_ij m_j` (including the
//! self-weight `w_ii = 1`) and `c` is a single calibration constant fixed so
//! that the first nonzero eigenvalue of the 256-point circle of length `2 pi` equals 1. Because
//! `a_ij m_i` is symmetric, `A` is self-adjoint for `<f, g>_m = sum f g m`.
//!
//! [`SpectralDecomposition`] diagonalizes `-A` densely and exposes heat
//! kernels, spectral multipliers and the mollifier used to approximate
//! `L^p` functions by smooth ones.

use std::collections::VecDeque;
use std::fs;
use std::path::Path;
use std::sync::{Arc, OnceLock};

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::spaces::{make_model_sample, SampledSpace, SpaceDescriptor};

/// Dense eigendecomposition budget.
pub const MAX_POINTS: usize = 4000;
const CALIBRATION_POINTS: usize = 256;
/// Heat terms with `lambda t` above this underflow and are skipped.
const HEAT_EXPONENT_CUTOFF: f64 = 745.0;
const EIGEN_CLAMP: f64 = 1e-12;
const CONNECTIVITY_FLOOR: f64 = 1e-8;

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Bandwidth {
    /// `h = 4 (mean nearest-neighbor spacing)^2`.
    Auto,
    Fixed(f64),
}

pub fn auto_bandwidth(space: &SampledSpace) -> f64 {
    let s = space.mean_spacing();
    4.0 * s * s
}

/// Calibration constant `c` of the generator normalization.
///
/// Computed once from the circle benchmark: with `c = 1`, `-(A cos)/cos`
/// at any node of the 256-point circle of length `2 pi` is the raw first
/// eigenvalue (the sample is circulant, so `cos` is an exact eigenvector).
pub fn calibration_constant() -> f64 {
    static CALIBRATION: OnceLock<f64> = OnceLock::new();
    *CALIBRATION.get_or_init(|| {
        let desc = SpaceDescriptor::circle(2.0 * std::f64::consts::PI);
        let space = make_model_sample(&desc, CALIBRATION_POINTS, 0).expect("benchmark circle");
        let h = auto_bandwidth(&space);
        let gen = Generator::with_calibration(Arc::new(space), h, 1.0)
            .expect("benchmark circle is connected");
        let arcs: Vec<f64> = gen.space.coords().unwrap().iter().map(|c| c[0]).collect();
        let f: Vec<f64> = arcs.iter().map(|a| a.cos()).collect();
        -gen.apply(&f)[0] / f[0]
    })
}

/// The discrete Laplacian `A` stored as sparse neighbor rows.
#[derive(Clone, Debug)]
pub struct Generator {
    space: Arc<SampledSpace>,
    h: f64,
    c: f64,
    z: f64,
    rows: Vec<Vec<(usize, f64)>>,
}

impl Generator {
    pub fn build(space: Arc<SampledSpace>, bandwidth: Bandwidth) -> Result<Self> {
        let h = match bandwidth {
            Bandwidth::Auto => auto_bandwidth(&space),
            Bandwidth::Fixed(h) => h,
        };
        Generator::with_calibration(space, h, calibration_constant())
    }

    pub fn with_calibration(space: Arc<SampledSpace>, h: f64, c: f64) -> Result<Self> {
        let n = space.len();
        if n > MAX_POINTS {
            return Err(Error::TooLarge { n, cap: MAX_POINTS });
        }
        if !(h > 0.0 && h.is_finite()) {
            return Err(Error::Domain(format!("bandwidth must be positive, got {h}")));
        }
        let cutoff = 4.0 * h.sqrt() * (1.0 + 1e-9);
        let weights = space.weights();
        let mut rows: Vec<Vec<(usize, f64)>> = Vec::with_capacity(n);
        for i in 0..n {
            let row = space.distance_row(i);
            rows.push(
                (0..n)
                    .filter(|&j| j != i && row[j] <= cutoff)
                    .map(|j| (j, (-row[j] * row[j] / (4.0 * h)).exp() * weights[j]))
                    .collect(),
            );
        }
        let core = space.core_indices();
        let sample: Vec<usize> = if core.is_empty() { (0..n).collect() } else { core };
        // the self-weight w_ii m_i = m_i is part of the kernel mass even
        // though it never enters A
        let z = sample
            .iter()
            .map(|&i| weights[i] + rows[i].iter().map(|&(_, w)| w).sum::<f64>())
            .sum::<f64>()
            / sample.len() as f64;
        if rows.iter().all(|r| r.is_empty()) {
            return Err(Error::Disconnected { h, lambda1: 0.0 });
        }
        let scale = 1.0 / (c * h * z);
        for row in rows.iter_mut() {
            for entry in row.iter_mut() {
                entry.1 *= scale;
            }
        }
        let gen = Generator { space, h, c, z, rows };
        if !gen.is_connected() {
            return Err(Error::Disconnected { h, lambda1: 0.0 });
        }
        Ok(gen)
    }

    fn is_connected(&self) -> bool {
        let n = self.rows.len();
        let mut seen = vec![false; n];
        let mut queue = VecDeque::from([0usize]);
        seen[0] = true;
        let mut count = 1;
        while let Some(i) = queue.pop_front() {
            for &(j, _) in &self.rows[i] {
                if !seen[j] {
                    seen[j] = true;
                    count += 1;
                    queue.push_back(j);
                }
            }
        }
        count == n
    }

    pub fn space(&self) -> &Arc<SampledSpace> {
        &self.space
    }

    pub fn bandwidth(&self) -> f64 {
        self.h
    }

    pub fn calibration(&self) -> f64 {
        self.c
    }

    /// The normalization `z` (mean weighted degree over core points).
    pub fn normalization(&self) -> f64 {
        self.z
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    /// Neighbor list `(j, a_ij)` of row `i`.
    pub fn row(&self, i: usize) -> &[(usize, f64)] {
        &self.rows[i]
    }

    /// `A f`.
    pub fn apply(&self, f: &[f64]) -> Vec<f64> {
        self.rows
            .iter()
            .enumerate()
            .map(|(i, row)| row.iter().map(|&(j, a)| a * (f[j] - f[i])).sum())
            .collect()
    }

    /// Carré du champ `Gamma(f) = (A(f^2) - 2 f A f) / 2`, evaluated in the
    /// equivalent manifestly nonnegative form `sum_j a_ij (f_j - f_i)^2 / 2`.
    pub fn carre_du_champ(&self, f: &[f64]) -> Vec<f64> {
        self.rows
            .iter()
            .enumerate()
            .map(|(i, row)| {
                0.5 * row
                    .iter()
                    .map(|&(j, a)| {
                        let d = f[j] - f[i];
                        a * d * d
                    })
                    .sum::<f64>()
            })
            .collect()
    }

    /// `|grad f| := sqrt(Gamma(f))`.
    pub fn gradient_norm(&self, f: &[f64]) -> Vec<f64> {
        self.carre_du_champ(f).into_iter().map(f64::sqrt).collect()
    }

    /// Largest neighbor slope `max_j |f_j - f_i| / D_ij` at each point, a
    /// cross-check for `sqrt(Gamma)`.
    pub fn edge_slope(&self, f: &[f64]) -> Vec<f64> {
        self.rows
            .iter()
            .enumerate()
            .map(|(i, row)| {
                row.iter()
                    .map(|&(j, _)| (f[j] - f[i]).abs() / self.space.dist(i, j))
                    .fold(0.0, f64::max)
            })
            .collect()
    }

    /// Dense `A` (row-major semantics, `A[(i, j)] = a_ij`, diagonal `-sum`).
    pub fn dense(&self) -> DMatrix<f64> {
        let n = self.len();
        let mut a = DMatrix::zeros(n, n);
        for (i, row) in self.rows.iter().enumerate() {
            let mut diag = 0.0;
            for &(j, v) in row {
                a[(i, j)] = v;
                diag += v;
            }
            a[(i, i)] = -diag;
        }
        a
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ZeroMode {
    Keep,
    ProjectOut,
}

/// Eigenpairs of `-A`, ascending, with `<phi_j, phi_k>_m = delta_jk`.
#[derive(Clone, Debug)]
pub struct SpectralDecomposition {
    generator: Generator,
    eigenvalues: Vec<f64>,
    /// Column `k` is `phi_k`.
    phi: DMatrix<f64>,
}

/// A dense heat kernel `p_t(i, j)` such that `(H_t f)_i = sum_j p_t(i,j) f_j m_j`.
#[derive(Clone, Debug)]
pub struct HeatMatrix {
    pub t: f64,
    pub entries: DMatrix<f64>,
}

impl HeatMatrix {
    pub fn apply(&self, f: &[f64], weights: &[f64]) -> Vec<f64> {
        let fm = DVector::from_iterator(f.len(), f.iter().zip(weights).map(|(a, m)| a * m));
        (&self.entries * fm).iter().copied().collect()
    }

    /// `sum_j p_t(i, j) m_j` for each row.
    pub fn row_mass(&self, weights: &[f64]) -> Vec<f64> {
        self.apply(&vec![1.0; weights.len()], weights)
    }
}

/// Diagonalizes `M^{1/2} (-A) M^{-1/2}` and back-transforms.
pub fn eigendecompose(gen: &Generator) -> Result<SpectralDecomposition> {
    let n = gen.len();
    if n > MAX_POINTS {
        return Err(Error::TooLarge { n, cap: MAX_POINTS });
    }
    let m = gen.space.weights();
    let sqrt_m: Vec<f64> = m.iter().map(|x| x.sqrt()).collect();
    let mut s = DMatrix::<f64>::zeros(n, n);
    for i in 0..n {
        let mut diag = 0.0;
        for &(j, a) in gen.row(i) {
            s[(i, j)] -= 0.5 * a * sqrt_m[i] / sqrt_m[j];
            s[(j, i)] -= 0.5 * a * sqrt_m[i] / sqrt_m[j];
            diag += a;
        }
        s[(i, i)] = diag;
    }
    let eig = SymmetricEigen::try_new(s, f64::EPSILON, 0).ok_or_else(|| {
        Error::Eigen(format!("symmetric QR iteration did not converge for n = {n}"))
    })?;
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[a].total_cmp(&eig.eigenvalues[b]));
    let eigenvalues: Vec<f64> = order
        .iter()
        .map(|&k| {
            let l = eig.eigenvalues[k];
            if l.abs() < EIGEN_CLAMP { 0.0 } else { l }
        })
        .collect();
    if let Some(bad) = eigenvalues.iter().find(|l| !l.is_finite()) {
        return Err(Error::Eigen(format!("non-finite eigenvalue {bad}")));
    }
    let mut phi = DMatrix::<f64>::zeros(n, n);
    for (col, &k) in order.iter().enumerate() {
        for i in 0..n {
            phi[(i, col)] = eig.eigenvectors[(i, k)] / sqrt_m[i];
        }
    }
    // Fix the sign of phi_0 so the constant mode is positive.
    if phi.column(0).sum() < 0.0 {
        phi.column_mut(0).neg_mut();
    }
    if n > 1 && eigenvalues[1] < CONNECTIVITY_FLOOR {
        return Err(Error::Disconnected {
            h: gen.h,
            lambda1: eigenvalues[1],
        });
    }
    Ok(SpectralDecomposition {
        generator: gen.clone(),
        eigenvalues,
        phi,
    })
}

impl SpectralDecomposition {
    pub fn generator(&self) -> &Generator {
        &self.generator
    }

    pub fn space(&self) -> &Arc<SampledSpace> {
        &self.generator.space
    }

    pub fn len(&self) -> usize {
        self.eigenvalues.len()
    }

    pub fn is_empty(&self) -> bool {
        self.eigenvalues.is_empty()
    }

    pub fn eigenvalues(&self) -> &[f64] {
        &self.eigenvalues
    }

    /// Column `k` is the eigenvector `phi_k`.
    pub fn eigenvectors(&self) -> &DMatrix<f64> {
        &self.phi
    }

    pub fn eigenvector(&self, k: usize) -> Vec<f64> {
        self.phi.column(k).iter().copied().collect()
    }

    fn weights(&self) -> &[f64] {
        self.generator.space.weights()
    }

    /// `<f, phi_k>_m` for every `k`.
    pub fn coefficients(&self, f: &[f64]) -> DVector<f64> {
        let fm = DVector::from_iterator(
            f.len(),
            f.iter().zip(self.weights()).map(|(a, m)| a * m),
        );
        self.phi.tr_mul(&fm)
    }

    /// `sum_k c_k phi_k`.
    pub fn synthesize(&self, coeffs: &DVector<f64>) -> Vec<f64> {
        (&self.phi * coeffs).iter().copied().collect()
    }

    /// `sum_k phi(lambda_k) <f, phi_k>_m phi_k`.
    pub fn spectral_function(
        &self,
        multiplier: impl Fn(f64) -> f64,
        f: &[f64],
        zero_mode: ZeroMode,
    ) -> Result<Vec<f64>> {
        let mut c = self.coefficients(f);
        for (k, &l) in self.eigenvalues.iter().enumerate() {
            if k == 0 && zero_mode == ZeroMode::ProjectOut {
                c[0] = 0.0;
                continue;
            }
            let g = multiplier(l);
            if !g.is_finite() {
                return Err(Error::SingularMultiplier { lambda: l });
            }
            c[k] *= g;
        }
        Ok(self.synthesize(&c))
    }

    /// `H_t f`.
    pub fn heat(&self, f: &[f64], t: f64) -> Vec<f64> {
        let mut c = self.coefficients(f);
        for (k, &l) in self.eigenvalues.iter().enumerate() {
            c[k] *= heat_factor(l, t);
        }
        self.synthesize(&c)
    }

    /// `d/dt H_t f = A H_t f`, computed spectrally.
    pub fn heat_time_derivative(&self, f: &[f64], t: f64) -> Vec<f64> {
        let mut c = self.coefficients(f);
        for (k, &l) in self.eigenvalues.iter().enumerate() {
            c[k] *= -l * heat_factor(l, t);
        }
        self.synthesize(&c)
    }

    pub fn heat_matrix(&self, t: f64) -> HeatMatrix {
        let mut scaled = self.phi.clone();
        for (k, &l) in self.eigenvalues.iter().enumerate() {
            scaled.column_mut(k).scale_mut(heat_factor(l, t));
        }
        HeatMatrix {
            t,
            entries: scaled * self.phi.transpose(),
        }
    }

    /// `p_t(., j)`.
    pub fn heat_column(&self, j: usize, t: f64) -> Vec<f64> {
        self.kernel_column(j, |l| heat_factor(l, t))
    }

    /// `d/dt p_t(., j) = -sum_k lambda_k e^{-lambda_k t} phi_k(j) phi_k`.
    pub fn heat_column_time_derivative(&self, j: usize, t: f64) -> Vec<f64> {
        self.kernel_column(j, |l| -l * heat_factor(l, t))
    }

    fn kernel_column(&self, j: usize, g: impl Fn(f64) -> f64) -> Vec<f64> {
        let c = DVector::from_iterator(
            self.len(),
            self.eigenvalues
                .iter()
                .enumerate()
                .map(|(k, &l)| g(l) * self.phi[(j, k)]),
        );
        self.synthesize(&c)
    }

    /// `sum_k e^{-lambda_k t} = sum_i p_t(i, i) m_i`.
    pub fn trace(&self, t: f64) -> f64 {
        self.eigenvalues.iter().map(|&l| heat_factor(l, t)).sum()
    }

    /// `e^{-a eps} H_eps f - e^{-a/eps} H_{1/eps} f`.
    ///
    /// On a finite-mass space with `a = 0`, `f` must be mean-zero
    /// (otherwise the constant mode makes the construction degenerate).
    pub fn mollify(&self, f: &[f64], eps: f64, a: f64) -> Result<Vec<f64>> {
        if !(eps > 0.0 && eps < 1.0) {
            return Err(Error::Domain(format!("epsilon must lie in (0, 1), got {eps}")));
        }
        if !(a >= 0.0) {
            return Err(Error::Domain(format!("a must be nonnegative, got {a}")));
        }
        if a == 0.0 {
            let mean = self.generator.space.mean(f);
            let scale = f.iter().fold(0.0_f64, |m, v| m.max(v.abs())).max(f64::MIN_POSITIVE);
            if mean.abs() > 1e-8 * scale {
                return Err(Error::NotMeanZero { mean });
            }
        }
        let (w1, w2) = ((-a * eps).exp(), (-a / eps).exp());
        let mut c = self.coefficients(f);
        for (k, &l) in self.eigenvalues.iter().enumerate() {
            c[k] *= w1 * heat_factor(l, eps) - w2 * heat_factor(l, 1.0 / eps);
        }
        Ok(self.synthesize(&c))
    }

    /// `Phi^T M Phi`, which should be the identity.
    pub fn gram(&self) -> DMatrix<f64> {
        let mut mphi = self.phi.clone();
        for (i, m) in self.weights().iter().enumerate() {
            mphi.row_mut(i).scale_mut(*m);
        }
        self.phi.transpose() * mphi
    }

    /// Writes `spectrum.bin` and `spectrum.key` into `dir`.
    ///
    /// `spectrum.bin` holds the `n` eigenvalues followed by the `n^2`
    /// eigenvector entries `Phi[i][k] = phi_k(i)` in row-major order, all
    /// little-endian `f64`.
    pub fn save_cache(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir)?;
        let n = self.len();
        let mut bytes = Vec::with_capacity(8 * (n + n * n));
        for l in &self.eigenvalues {
            bytes.extend_from_slice(&l.to_le_bytes());
        }
        for i in 0..n {
            for k in 0..n {
                bytes.extend_from_slice(&self.phi[(i, k)].to_le_bytes());
            }
        }
        write_atomic(&dir.join("spectrum.bin"), &bytes)?;
        write_atomic(&dir.join("spectrum.key"), cache_key(&self.generator).as_bytes())?;
        Ok(())
    }

    /// Loads a cached decomposition if its key matches `gen`.
    pub fn load_cache(gen: &Generator, dir: &Path) -> Result<Option<Self>> {
        let key_path = dir.join("spectrum.key");
        let bin_path = dir.join("spectrum.bin");
        if !key_path.exists() || !bin_path.exists() {
            return Ok(None);
        }
        if fs::read_to_string(key_path)?.trim() != cache_key(gen) {
            return Ok(None);
        }
        let n = gen.len();
        let raw = fs::read(bin_path)?;
        if raw.len() != 8 * (n + n * n) {
            return Ok(None);
        }
        let vals: Vec<f64> = raw
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
            .collect();
        let eigenvalues = vals[..n].to_vec();
        let phi = DMatrix::from_row_slice(n, n, &vals[n..]);
        Ok(Some(SpectralDecomposition {
            generator: gen.clone(),
            eigenvalues,
            phi,
        }))
    }
}

/// Writes through a temporary sibling and a rename, so concurrent readers
/// never see a partial file.
fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    static COUNTER: std::sync::atomic::AtomicU64 = std::sync::atomic::AtomicU64::new(0);
    let unique = COUNTER.fetch_add(1, std::sync::atomic::Ordering::Relaxed);
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(format!(".tmp{}-{unique}", std::process::id()));
    fs::write(&tmp, bytes)?;
    fs::rename(&tmp, path)?;
    Ok(())
}

/// Eigendecomposition through an optional on-disk cache: one subdirectory
/// per [`cache_key`] under `cache_dir`, holding `spectrum.bin` and
/// `spectrum.key`.
pub fn eigendecompose_cached(gen: &Generator, cache_dir: Option<&Path>) -> Result<SpectralDecomposition> {
    if let Some(root) = cache_dir {
        let dir = root.join(cache_key(gen));
        let dir = dir.as_path();
        if let Some(dec) = SpectralDecomposition::load_cache(gen, dir)? {
            return Ok(dec);
        }
        let dec = eigendecompose(gen)?;
        dec.save_cache(dir)?;
        return Ok(dec);
    }
    eigendecompose(gen)
}

/// Content hash of the space plus the generator parameters.
pub fn cache_key(gen: &Generator) -> String {
    let mut h = Sha256::new();
    h.update(gen.space.content_hash().as_bytes());
    h.update(gen.h.to_le_bytes());
    h.update(gen.c.to_le_bytes());
    h.finalize().iter().map(|b| format!("{b:02x}")).collect()
}

#[inline]
fn heat_factor(lambda: f64, t: f64) -> f64 {
    let x = lambda * t;
    if x > HEAT_EXPONENT_CUTOFF { 0.0 } else { (-x).exp() }
}

/// `(sum |f_i|^p m_i)^{1/p}`, or `max |f_i|` for `p = inf`.
pub fn lp_norm(weights: &[f64], f: &[f64], p: f64) -> Result<f64> {
    if !(p >= 1.0) {
        return Err(Error::InvalidExponent(p));
    }
    if p.is_infinite() {
        return Ok(f.iter().fold(0.0_f64, |m, v| m.max(v.abs())));
    }
    let scale = f.iter().fold(0.0_f64, |m, v| m.max(v.abs()));
    if scale == 0.0 {
        return Ok(0.0);
    }
    // Scaling by the max keeps |f|^p representable for large p.
    let s: f64 = f
        .iter()
        .zip(weights)
        .map(|(v, m)| (v.abs() / scale).powf(p) * m)
        .sum();
    Ok(scale * s.powf(1.0 / p))
}
