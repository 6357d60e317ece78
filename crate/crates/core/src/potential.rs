//! Group convolutions `G_f(z) = ∫ G(ζ⁻¹ ∘ z) f(ζ) dζ` with δ-homogeneous
//! kernels, `L^p` norms and the gain ratio `‖G_f‖_q / ‖f‖_p`.
//!
//! For lattice points `z = (x_i, y_j, t_k)` and `ζ = (ξ_m, η_l, τ_n)`,
//!
//! ```text
//! ζ⁻¹ ∘ z = (x_i − ξ_m, (j − l)dy + (k − n)dt·ξ_m, (k − n)dt)
//! ```
//!
//! so for each column pair `(i, m)` the kernel depends only on `(j − l, k − n)`
//! and the sum is a 2-D convolution. [`ConvolutionPlan`] evaluates those with
//! FFTs; [`convolve_direct`] is the plain Riemann sum.

use std::sync::Arc;

use rand::{RngExt, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use realfft::{ComplexToReal, RealFftPlanner, RealToComplex};
use rustfft::num_complex::Complex64;
use rustfft::{Fft, FftPlanner};
use serde::Serialize;
use thiserror::Error;

use crate::gamma::{gamma_origin, neg_gamma_dxi_kernel};
use crate::geometry::{compose, inverse, Point, Region};

/// Homogeneous dimension of the group.
pub const HOMOGENEOUS_DIMENSION: f64 = 6.0;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum PotentialError {
    #[error("lattice has no cells")]
    EmptyLattice,
    #[error("lattices differ")]
    LatticeMismatch,
    #[error("exponent mismatch: 1/q must equal 1/p - alpha/6; p = {p}, alpha = {alpha} give q = {expected}, got {q}")]
    ExponentMismatch { p: f64, q: f64, alpha: f64, expected: f64 },
    #[error("exponent p = {0} must be at least 1")]
    InvalidExponent(f64),
    #[error("input field vanishes identically; the ratio is undefined")]
    ZeroInput,
    #[error("{0}")]
    Io(String),
}

/// `G(δ_μ w) = μ^{α−6} G(w)`.
pub trait HomogeneousKernel: Sync {
    fn eval(&self, w: Point) -> f64;
    fn alpha(&self) -> f64;
    fn name(&self) -> &'static str;

    fn degree(&self) -> f64 {
        self.alpha() - HOMOGENEOUS_DIMENSION
    }
}

/// `Γ`, degree −4.
#[derive(Debug, Clone, Copy)]
pub struct GammaKernel;

impl HomogeneousKernel for GammaKernel {
    fn eval(&self, w: Point) -> f64 {
        gamma_origin(w)
    }
    fn alpha(&self) -> f64 {
        2.0
    }
    fn name(&self) -> &'static str {
        "gamma"
    }
}

/// `G(ζ⁻¹ ∘ z) = −∂_ξ Γ(z, ζ)`, degree −5; convolving it with `f` gives `Γ(∂_ξ f)`.
#[derive(Debug, Clone, Copy)]
pub struct GammaDxiKernel;

impl HomogeneousKernel for GammaDxiKernel {
    fn eval(&self, w: Point) -> f64 {
        neg_gamma_dxi_kernel(w)
    }
    fn alpha(&self) -> f64 {
        1.0
    }
    fn name(&self) -> &'static str {
        "gamma-dx"
    }
}

pub fn kernel_by_name(name: &str) -> Option<Box<dyn HomogeneousKernel>> {
    match name {
        "gamma" => Some(Box::new(GammaKernel)),
        "gamma-dx" | "gamma_dx" => Some(Box::new(GammaDxiKernel)),
        _ => None,
    }
}

/// Cell-centered lattice on `[lo, hi]` with `n` cells per axis `(x, y, t)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, serde::Deserialize)]
pub struct Lattice {
    pub lo: Point,
    pub hi: Point,
    pub n: [usize; 3],
}

impl Lattice {
    pub fn new(lo: Point, hi: Point, n: [usize; 3]) -> Self {
        Self { lo, hi, n }
    }

    pub fn cube(lo: Point, hi: Point, n: usize) -> Self {
        Self::new(lo, hi, [n; 3])
    }

    pub fn len(&self) -> usize {
        self.n[0] * self.n[1] * self.n[2]
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn step(&self) -> [f64; 3] {
        [(self.hi.x - self.lo.x) / self.n[0] as f64, (self.hi.y - self.lo.y) / self.n[1] as f64, (self.hi.t - self.lo.t) / self.n[2] as f64]
    }

    pub fn cell_volume(&self) -> f64 {
        let h = self.step();
        h[0] * h[1] * h[2]
    }

    pub fn index(&self, i: usize, j: usize, k: usize) -> usize {
        (i * self.n[1] + j) * self.n[2] + k
    }

    pub fn center(&self, i: usize, j: usize, k: usize) -> Point {
        let h = self.step();
        Point::new(self.lo.x + (i as f64 + 0.5) * h[0], self.lo.y + (j as f64 + 0.5) * h[1], self.lo.t + (k as f64 + 0.5) * h[2])
    }

    pub fn centers(&self) -> impl Iterator<Item = Point> + '_ {
        let [nx, ny, nt] = self.n;
        (0..nx).flat_map(move |i| (0..ny).flat_map(move |j| (0..nt).map(move |k| self.center(i, j, k))))
    }
}

/// Scalar samples at the cells of a [`Lattice`], index `(i·ny + j)·nt + k`.
#[derive(Debug, Clone, PartialEq)]
pub struct SpaceTimeField {
    pub lattice: Lattice,
    pub values: Vec<f64>,
}

impl SpaceTimeField {
    pub fn zeros(lattice: Lattice) -> Self {
        Self { lattice, values: vec![0.0; lattice.len()] }
    }

    pub fn from_fn(lattice: Lattice, f: impl Fn(Point) -> f64) -> Self {
        Self { lattice, values: lattice.centers().map(f).collect() }
    }

    pub fn is_zero(&self) -> bool {
        self.values.iter().all(|&v| v == 0.0)
    }

    pub fn linear_combination(a: f64, f: &Self, b: f64, g: &Self) -> Result<Self, PotentialError> {
        if f.lattice != g.lattice {
            return Err(PotentialError::LatticeMismatch);
        }
        let values = f.values.iter().zip(&g.values).map(|(u, v)| a * u + b * v).collect();
        Ok(Self { lattice: f.lattice, values })
    }

    pub fn max_abs_diff(&self, other: &Self) -> f64 {
        self.values.iter().zip(&other.values).fold(0.0, |m, (a, b)| m.max((a - b).abs()))
    }

    pub fn max_abs(&self) -> f64 {
        self.values.iter().fold(0.0, |m, v| m.max(v.abs()))
    }
}

fn check_lattice(l: &Lattice) -> Result<(), PotentialError> {
    if l.is_empty() {
        Err(PotentialError::EmptyLattice)
    } else {
        Ok(())
    }
}

/// Riemann sum over all input cells, skipping the cell that contains the
/// output point. Cost is quadratic in the number of cells.
pub fn convolve_direct(kernel: &dyn HomogeneousKernel, f: &SpaceTimeField) -> Result<SpaceTimeField, PotentialError> {
    let l = f.lattice;
    check_lattice(&l)?;
    let vol = l.cell_volume();
    let sources: Vec<(Point, f64, usize)> =
        l.centers().zip(&f.values).enumerate().filter(|(_, (_, &v))| v != 0.0).map(|(idx, (p, &v))| (inverse(p), v, idx)).collect();
    let values = l
        .centers()
        .enumerate()
        .collect::<Vec<_>>()
        .into_par_iter()
        .map(|(idx, z)| {
            let mut acc = 0.0;
            for &(zeta_inv, v, src) in &sources {
                if src != idx {
                    acc += kernel.eval(compose(zeta_inv, z)) * v;
                }
            }
            acc * vol
        })
        .collect();
    Ok(SpaceTimeField { lattice: l, values })
}

struct Fft2 {
    rows: usize,
    cols: usize,
    spec_cols: usize,
    r2c: Arc<dyn RealToComplex<f64>>,
    c2r: Arc<dyn ComplexToReal<f64>>,
    fwd: Arc<dyn Fft<f64>>,
    inv: Arc<dyn Fft<f64>>,
}

impl Fft2 {
    fn new(rows: usize, cols: usize) -> Self {
        let mut rp = RealFftPlanner::<f64>::new();
        let mut cp = FftPlanner::<f64>::new();
        Self {
            rows,
            cols,
            spec_cols: cols / 2 + 1,
            r2c: rp.plan_fft_forward(cols),
            c2r: rp.plan_fft_inverse(cols),
            fwd: cp.plan_fft_forward(rows),
            inv: cp.plan_fft_inverse(rows),
        }
    }

    /// `data` is `rows × cols` row-major; returns `rows × spec_cols`.
    fn forward(&self, mut data: Vec<f64>) -> Vec<Complex64> {
        let sc = self.spec_cols;
        let mut spec = vec![Complex64::new(0.0, 0.0); self.rows * sc];
        for (row, out) in data.chunks_mut(self.cols).zip(spec.chunks_mut(sc)) {
            self.r2c.process(row, out).expect("buffer sizes match the plan");
        }
        let mut col = vec![Complex64::new(0.0, 0.0); self.rows];
        for c in 0..sc {
            for r in 0..self.rows {
                col[r] = spec[r * sc + c];
            }
            self.fwd.process(&mut col);
            for r in 0..self.rows {
                spec[r * sc + c] = col[r];
            }
        }
        spec
    }

    /// Unnormalized inverse of [`Fft2::forward`].
    fn inverse(&self, mut spec: Vec<Complex64>) -> Vec<f64> {
        let sc = self.spec_cols;
        let mut col = vec![Complex64::new(0.0, 0.0); self.rows];
        for c in 0..sc {
            for r in 0..self.rows {
                col[r] = spec[r * sc + c];
            }
            self.inv.process(&mut col);
            for r in 0..self.rows {
                spec[r * sc + c] = col[r];
            }
        }
        let mut out = vec![0.0; self.rows * self.cols];
        for (row, dst) in spec.chunks_mut(sc).zip(out.chunks_mut(self.cols)) {
            // Roundoff leaves tiny imaginary parts on the self-conjugate bins.
            row[0].im = 0.0;
            if self.cols.is_multiple_of(2) {
                row[sc - 1].im = 0.0;
            }
            self.c2r.process(row, dst).expect("buffer sizes match the plan");
        }
        out
    }
}

/// Precomputed kernel spectra for one lattice, reusable across inputs.
///
/// Memory is `nx² · Y · (T/2 + 1)` complex numbers with `Y, T` the padded
/// sizes (about 545 MB for a 64³ lattice).
pub struct ConvolutionPlan {
    lattice: Lattice,
    alpha: f64,
    fft: Fft2,
    /// Spectrum for column pair `(i, m)` at `i * nx + m`.
    spectra: Vec<Vec<Complex64>>,
}

impl ConvolutionPlan {
    pub fn new(kernel: &dyn HomogeneousKernel, lattice: Lattice) -> Result<Self, PotentialError> {
        check_lattice(&lattice)?;
        let [nx, ny, nt] = lattice.n;
        let rows = (2 * ny - 1).next_power_of_two();
        let cols = (2 * nt - 1).next_power_of_two();
        let fft = Fft2::new(rows, cols);
        let [_, dy, dt] = lattice.step();
        let xs: Vec<f64> = (0..nx).map(|i| lattice.center(i, 0, 0).x).collect();
        let spectra = (0..nx * nx)
            .into_par_iter()
            .map(|pair| {
                let (i, m) = (pair / nx, pair % nx);
                let (dxm, xi) = (xs[i] - xs[m], xs[m]);
                let mut data = vec![0.0; rows * cols];
                for dj in -(ny as isize - 1)..ny as isize {
                    let r = dj.rem_euclid(rows as isize) as usize;
                    // dk = 0 is the equal-time slab, where the kernel vanishes.
                    for dk in 1..nt {
                        let s = dk as f64 * dt;
                        let w = Point::new(dxm, dj as f64 * dy + s * xi, s);
                        data[r * cols + dk] = kernel.eval(w);
                    }
                }
                fft.forward(data)
            })
            .collect();
        Ok(Self { lattice, alpha: kernel.alpha(), fft, spectra })
    }

    pub fn lattice(&self) -> &Lattice {
        &self.lattice
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    pub fn apply(&self, f: &SpaceTimeField) -> Result<SpaceTimeField, PotentialError> {
        if f.lattice != self.lattice {
            return Err(PotentialError::LatticeMismatch);
        }
        let [nx, ny, nt] = self.lattice.n;
        let (rows, cols) = (self.fft.rows, self.fft.cols);
        let slab = ny * nt;
        let inputs: Vec<Option<Vec<Complex64>>> = (0..nx)
            .into_par_iter()
            .map(|m| {
                let src = &f.values[m * slab..(m + 1) * slab];
                if src.iter().all(|&v| v == 0.0) {
                    return None;
                }
                let mut data = vec![0.0; rows * cols];
                for j in 0..ny {
                    data[j * cols..j * cols + nt].copy_from_slice(&src[j * nt..(j + 1) * nt]);
                }
                Some(self.fft.forward(data))
            })
            .collect();
        let scale = self.lattice.cell_volume() / (rows * cols) as f64;
        let slabs: Vec<Vec<f64>> = (0..nx)
            .into_par_iter()
            .map(|i| {
                let mut acc = vec![Complex64::new(0.0, 0.0); rows * self.fft.spec_cols];
                let mut any = false;
                for (m, input) in inputs.iter().enumerate() {
                    if let Some(fin) = input {
                        any = true;
                        for ((a, k), v) in acc.iter_mut().zip(&self.spectra[i * nx + m]).zip(fin) {
                            *a += k * v;
                        }
                    }
                }
                if !any {
                    return vec![0.0; slab];
                }
                let full = self.fft.inverse(acc);
                let mut out = vec![0.0; slab];
                for j in 0..ny {
                    for k in 0..nt {
                        out[j * nt + k] = full[j * cols + k] * scale;
                    }
                }
                out
            })
            .collect();
        Ok(SpaceTimeField { lattice: self.lattice, values: slabs.concat() })
    }
}

/// One-shot convolution through a temporary [`ConvolutionPlan`].
pub fn convolve(kernel: &dyn HomogeneousKernel, f: &SpaceTimeField) -> Result<SpaceTimeField, PotentialError> {
    ConvolutionPlan::new(kernel, f.lattice)?.apply(f)
}

/// `(Σ |f|^p vol)^{1/p}` over cells whose center lies in `region` (all cells
/// when `None`).
pub fn lp_norm(f: &SpaceTimeField, p: f64, region: Option<&Region>) -> Result<f64, PotentialError> {
    if !(p >= 1.0) {
        return Err(PotentialError::InvalidExponent(p));
    }
    let vol = f.lattice.cell_volume();
    let mut sum = 0.0;
    for (z, &v) in f.lattice.centers().zip(&f.values) {
        if region.is_none_or(|r| r.contains(z)) {
            sum += v.abs().powf(p);
        }
    }
    Ok((sum * vol).powf(1.0 / p))
}

/// The `q` paired with `p` by `1/q = 1/p − α/6`, if finite.
pub fn target_exponent(p: f64, alpha: f64) -> Option<f64> {
    let inv = 1.0 / p - alpha / HOMOGENEOUS_DIMENSION;
    (inv > 0.0).then(|| 1.0 / inv)
}

pub fn check_exponents(p: f64, q: f64, alpha: f64) -> Result<(), PotentialError> {
    if !(p >= 1.0) {
        return Err(PotentialError::InvalidExponent(p));
    }
    let expected = target_exponent(p, alpha).unwrap_or(f64::INFINITY);
    if (1.0 / q - 1.0 / expected).abs() > 1e-12 {
        return Err(PotentialError::ExponentMismatch { p, q, alpha, expected });
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Gain {
    pub p: f64,
    pub q: f64,
    pub alpha: f64,
    pub input_norm: f64,
    pub output_norm: f64,
    pub ratio: f64,
}

/// `‖G_f‖_{L^q} / ‖f‖_{L^p}` over the whole lattice.
pub fn gain_ratio(plan: &ConvolutionPlan, f: &SpaceTimeField, p: f64, q: f64) -> Result<Gain, PotentialError> {
    check_exponents(p, q, plan.alpha())?;
    if f.is_zero() {
        return Err(PotentialError::ZeroInput);
    }
    let out = plan.apply(f)?;
    gain_of(&out, f, p, q, plan.alpha())
}

/// Ratio from an already computed potential.
pub fn gain_of(out: &SpaceTimeField, f: &SpaceTimeField, p: f64, q: f64, alpha: f64) -> Result<Gain, PotentialError> {
    check_exponents(p, q, alpha)?;
    let input_norm = lp_norm(f, p, None)?;
    if input_norm == 0.0 {
        return Err(PotentialError::ZeroInput);
    }
    let output_norm = lp_norm(out, q, None)?;
    Ok(Gain { p, q, alpha, input_norm, output_norm, ratio: output_norm / input_norm })
}

/// Tensor bump `Π (1 − s²)₊³` with given center and half-widths.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Bump {
    pub center: Point,
    pub half_width: [f64; 3],
    pub height: f64,
}

impl Bump {
    pub fn eval(&self, p: Point) -> f64 {
        let w = |d: f64, h: f64| {
            let s = d / h;
            if s.abs() >= 1.0 {
                0.0
            } else {
                (1.0 - s * s).powi(3)
            }
        };
        self.height * w(p.x - self.center.x, self.half_width[0]) * w(p.y - self.center.y, self.half_width[1]) * w(p.t - self.center.t, self.half_width[2])
    }

    pub fn field(&self, lattice: Lattice) -> SpaceTimeField {
        SpaceTimeField::from_fn(lattice, |p| self.eval(p))
    }
}

/// Seeded family of bumps inside `lattice`, half-widths between 15% and 35%
/// of each side, supports kept inside the box.
pub fn bump_family(lattice: &Lattice, count: usize, seed: u64) -> Vec<Bump> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let lo = [lattice.lo.x, lattice.lo.y, lattice.lo.t];
    let hi = [lattice.hi.x, lattice.hi.y, lattice.hi.t];
    (0..count)
        .map(|_| {
            let mut c = [0.0; 3];
            let mut hw = [0.0; 3];
            for a in 0..3 {
                let side = hi[a] - lo[a];
                hw[a] = side * rng.random_range(0.15..0.35);
                c[a] = rng.random_range(lo[a] + hw[a]..hi[a] - hw[a]);
            }
            Bump { center: Point::new(c[0], c[1], c[2]), half_width: hw, height: rng.random_range(0.5..2.0) }
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gamma::gamma;
    use crate::geometry::{dilate, BallSpec};

    fn small() -> Lattice {
        Lattice::new(Point::new(-1.0, -1.0, 0.0), Point::new(1.0, 1.0, 1.0), [8, 10, 12])
    }

    #[test]
    fn kernels_are_homogeneous() {
        let pts = [Point::new(0.3, -0.2, 0.5), Point::new(-1.0, 0.7, 2.0), Point::new(0.1, 0.01, 0.04)];
        for k in [&GammaKernel as &dyn HomogeneousKernel, &GammaDxiKernel] {
            for &w in &pts {
                for mu in [0.3, 1.7, 4.0] {
                    let lhs = k.eval(dilate(mu, w).unwrap());
                    let rhs = mu.powf(k.degree()) * k.eval(w);
                    assert!((lhs - rhs).abs() <= 1e-8 * rhs.abs().max(1e-300), "{} {lhs} {rhs}", k.name());
                }
            }
        }
    }

    #[test]
    fn zero_in_zero_out() {
        let f = SpaceTimeField::zeros(small());
        assert!(convolve(&GammaKernel, &f).unwrap().is_zero());
        assert!(convolve_direct(&GammaKernel, &f).unwrap().is_zero());
    }

    #[test]
    fn fft_plan_matches_direct_sum() {
        let l = small();
        let b = Bump { center: Point::new(0.1, -0.2, 0.35), half_width: [0.6, 0.5, 0.3], height: 1.0 };
        let f = b.field(l);
        for k in [&GammaKernel as &dyn HomogeneousKernel, &GammaDxiKernel] {
            let direct = convolve_direct(k, &f).unwrap();
            let fast = convolve(k, &f).unwrap();
            let diff = direct.max_abs_diff(&fast);
            assert!(diff <= 1e-10 * direct.max_abs().max(1.0), "{} {diff}", k.name());
        }
    }

    #[test]
    fn small_box_far_in_the_past() {
        // Indicator of one cell: output equals Γ(z, ζ_c)·vol exactly.
        let l = small();
        let mut f = SpaceTimeField::zeros(l);
        let (i, j, k) = (3, 4, 1);
        f.values[l.index(i, j, k)] = 1.0;
        let out = convolve(&GammaKernel, &f).unwrap();
        let zc = l.center(i, j, k);
        let z = l.center(5, 6, 10);
        let expected = gamma(z, zc) * l.cell_volume();
        assert!((out.values[l.index(5, 6, 10)] - expected).abs() <= 1e-12 * expected.max(1e-300));
    }

    #[test]
    fn mass_is_transported() {
        // f concentrated near τ₀ with unit integral: ∫∫ Γ(f)(·, t) dx dy ≈ 1.
        let l = Lattice::new(Point::new(-4.0, -4.0, 0.0), Point::new(4.0, 4.0, 0.4), [64, 64, 8]);
        let mut f = SpaceTimeField::zeros(l);
        let idx = l.index(32, 32, 0);
        f.values[idx] = 1.0 / l.cell_volume();
        let out = convolve(&GammaKernel, &f).unwrap();
        let h = l.step();
        let k = 7;
        let mut mass = 0.0;
        for i in 0..64 {
            for j in 0..64 {
                mass += out.values[l.index(i, j, k)];
            }
        }
        mass *= h[0] * h[1];
        assert!((mass - 1.0).abs() < 0.02, "{mass}");
    }

    #[test]
    fn linearity() {
        let l = small();
        let f = Bump { center: Point::new(0.0, 0.0, 0.4), half_width: [0.5, 0.5, 0.3], height: 1.0 }.field(l);
        let g = Bump { center: Point::new(0.3, -0.3, 0.6), half_width: [0.4, 0.6, 0.3], height: 2.0 }.field(l);
        let plan = ConvolutionPlan::new(&GammaDxiKernel, l).unwrap();
        let combo = SpaceTimeField::linear_combination(2.0, &f, -3.0, &g).unwrap();
        let lhs = plan.apply(&combo).unwrap();
        let rhs = SpaceTimeField::linear_combination(2.0, &plan.apply(&f).unwrap(), -3.0, &plan.apply(&g).unwrap()).unwrap();
        assert!(lhs.max_abs_diff(&rhs) <= 1e-10 * lhs.max_abs());
    }

    #[test]
    fn lp_norm_examples() {
        let l = Lattice::cube(Point::new(0.0, 0.0, 0.0), Point::new(1.0, 1.0, 1.0), 8);
        let c = SpaceTimeField::from_fn(l, |_| -2.5);
        for p in [1.0, 2.0, 6.0] {
            assert!((lp_norm(&c, p, None).unwrap() - 2.5).abs() < 1e-12);
        }
        let half = SpaceTimeField::from_fn(l, |p| if p.x < 0.5 { 1.0 } else { 0.0 });
        assert!((lp_norm(&half, 2.0, None).unwrap() - 0.5f64.sqrt()).abs() < 1e-12);
        assert!(lp_norm(&c, 0.5, None).is_err());
        let big = Region::from(BallSpec::full(Point::new(0.5, 0.5, 0.5), 0.6).unwrap());
        let small = Region::from(BallSpec::full(Point::new(0.5, 0.5, 0.5), 0.3).unwrap());
        let f = SpaceTimeField::from_fn(l, |p| p.x * p.x + p.t);
        assert!(lp_norm(&f, 2.0, Some(&small)).unwrap() <= lp_norm(&f, 2.0, Some(&big)).unwrap());
    }

    #[test]
    fn exponent_pairs() {
        assert!((target_exponent(2.0, 2.0).unwrap() - 6.0).abs() < 1e-12);
        assert!((target_exponent(2.0, 1.0).unwrap() - 3.0).abs() < 1e-12);
        assert!(check_exponents(2.0, 6.0, 2.0).is_ok());
        assert!(check_exponents(2.0, 3.0, 1.0).is_ok());
        assert!(matches!(check_exponents(2.0, 3.0, 2.0), Err(PotentialError::ExponentMismatch { .. })));
        assert!(check_exponents(4.0, 10.0, 2.0).is_err());
        let plan = ConvolutionPlan::new(&GammaKernel, small()).unwrap();
        let zero = SpaceTimeField::zeros(small());
        assert_eq!(gain_ratio(&plan, &zero, 2.0, 6.0).unwrap_err(), PotentialError::ZeroInput);
    }

    #[test]
    fn co_dilated_lattices_give_equal_ratios() {
        let l = small();
        let b = Bump { center: Point::new(0.0, 0.1, 0.4), half_width: [0.6, 0.6, 0.3], height: 1.0 };
        let base = gain_ratio(&ConvolutionPlan::new(&GammaKernel, l).unwrap(), &b.field(l), 2.0, 6.0).unwrap();
        let mu = 2.0;
        let shrink = |p: Point| dilate(1.0 / mu, p).unwrap();
        let ld = Lattice::new(shrink(l.lo), shrink(l.hi), l.n);
        let fd = SpaceTimeField::from_fn(ld, |p| b.eval(dilate(mu, p).unwrap()));
        let scaled = gain_ratio(&ConvolutionPlan::new(&GammaKernel, ld).unwrap(), &fd, 2.0, 6.0).unwrap();
        assert!((scaled.ratio / base.ratio - 1.0).abs() < 1e-10);
    }

    #[test]
    fn bump_family_is_seeded_and_inside() {
        let l = small();
        let a = bump_family(&l, 5, 42);
        assert_eq!(a, bump_family(&l, 5, 42));
        assert_ne!(a, bump_family(&l, 5, 43));
        for b in a {
            assert!(b.center.x - b.half_width[0] >= l.lo.x && b.center.t + b.half_width[2] <= l.hi.t);
        }
    }
}
