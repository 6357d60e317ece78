//! Fundamental solution of `L₀ = ∂ₓ² + x∂_y − ∂ₜ`.
//!
//! ```text
//! Γ(z, ζ) = √3 / (2π s²) · exp[−(x² + xξ + ξ²)/s − 3(x + ξ)(y − η)/s² − 3(y − η)²/s³],  s = t − τ > 0
//! ```
//!
//! and `Γ(z, ζ) = 0` for `t ≤ τ`. With the pole at the origin this reduces to
//! `Γ(z) = √3/(2πt²) exp[−(x² + 3xy/t + 3y²/t²)/t]`, and `Γ(z, ζ) = Γ(ζ⁻¹ ∘ z)`.

use std::f64::consts::PI;

use thiserror::Error;

use crate::geometry::{group_norm, Point};

/// `√3 / (2π)`.
pub const GAMMA_PREFACTOR: f64 = 0.275_664_447_710_896_04;

/// Below this log-density the value is reported as exactly zero.
const UNDERFLOW_EXPONENT: f64 = -700.0;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GammaError {
    #[error("time lag must be positive (t = {t}, tau = {tau})")]
    NonPositiveLag { t: f64, tau: f64 },
    #[error("quadrature needs at least 8 nodes per axis, got {0}")]
    TooFewNodes(usize),
    #[error("step must be positive, got {0}")]
    NonPositiveStep(f64),
    #[error("point {point} is too close to the pole for step {h}: norm {norm} < 10h")]
    TooCloseToPole { point: Point, h: f64, norm: f64 },
}

/// Exponent of `Γ(z, ζ)` (without the sign) in Horner form in `1/s`.
#[inline]
fn exponent(x: f64, dy: f64, xi: f64, inv_s: f64) -> f64 {
    let c1 = x * x + x * xi + xi * xi;
    let c2 = 3.0 * (x + xi) * dy;
    let c3 = 3.0 * dy * dy;
    let e = inv_s * (c1 + inv_s * (c2 + inv_s * c3));
    if e.is_nan() {
        // inf · 0 when 1/s overflows: fall back to term-wise evaluation.
        let term = |c: f64, k: i32| if c == 0.0 { 0.0 } else { c * inv_s.powi(k) };
        term(c1, 1) + term(c2, 2) + term(c3, 3)
    } else {
        e
    }
}

/// `√3/(2π s²) · exp(−e)` evaluated in the log domain, flushing to zero below
/// `exp(−700)`.
#[inline]
fn density(s: f64, e: f64) -> f64 {
    let log_v = GAMMA_PREFACTOR.ln() - 2.0 * s.ln() - e;
    if log_v.is_nan() || log_v < UNDERFLOW_EXPONENT {
        0.0
    } else if e.abs() < 700.0 && s > 1e-150 {
        GAMMA_PREFACTOR / (s * s) * (-e).exp()
    } else {
        log_v.exp()
    }
}

/// `Γ(z) = Γ(z, 0)`.
pub fn gamma_origin(z: Point) -> f64 {
    gamma(z, Point::ORIGIN)
}

/// Two-point fundamental solution `Γ(z, ζ)`.
pub fn gamma(z: Point, zeta: Point) -> f64 {
    let s = z.t - zeta.t;
    if !(s > 0.0) {
        return 0.0;
    }
    let e = exponent(z.x, z.y - zeta.y, zeta.x, 1.0 / s);
    density(s, e)
}

/// `∂Γ(z, ζ)/∂ξ = −[(x + 2ξ)/s + 3(y − η)/s²] Γ(z, ζ)`.
pub fn gamma_dx(z: Point, zeta: Point) -> f64 {
    let s = z.t - zeta.t;
    if !(s > 0.0) {
        return 0.0;
    }
    let inv_s = 1.0 / s;
    let factor = inv_s * ((z.x + 2.0 * zeta.x) + 3.0 * (z.y - zeta.y) * inv_s);
    -factor * gamma(z, zeta)
}

/// Kernel `G(w)` with `G(ζ⁻¹ ∘ z) = −∂_ξ Γ(z, ζ)`, i.e. `G(w) = (x/t + 3y/t²) Γ(w)`.
/// It is δ-homogeneous of degree −5.
pub fn neg_gamma_dxi_kernel(w: Point) -> f64 {
    if !(w.t > 0.0) {
        return 0.0;
    }
    let inv_t = 1.0 / w.t;
    inv_t * (w.x + 3.0 * w.y * inv_t) * gamma_origin(w)
}

/// `∫∫ Γ(x, y, t; 0, 0, τ) dx dy` by a tensor-product trapezoid rule on a
/// window of eight marginal standard deviations per axis
/// (`Var x = 2s`, `Var y = 2s³/3`).
pub fn gamma_mass(t: f64, tau: f64, grid_n: usize) -> Result<f64, GammaError> {
    let s = t - tau;
    if !(s > 0.0) {
        return Err(GammaError::NonPositiveLag { t, tau });
    }
    if grid_n < 8 {
        return Err(GammaError::TooFewNodes(grid_n));
    }
    let wx = 8.0 * (2.0 * s).sqrt();
    let wy = 8.0 * (2.0 * s * s * s / 3.0).sqrt();
    let (hx, hy) = (2.0 * wx / grid_n as f64, 2.0 * wy / grid_n as f64);
    let pole = Point::new(0.0, 0.0, tau);
    let mut total = 0.0;
    for i in 0..=grid_n {
        let x = -wx + i as f64 * hx;
        let wi = if i == 0 || i == grid_n { 0.5 } else { 1.0 };
        let mut row = 0.0;
        for j in 0..=grid_n {
            let y = -wy + j as f64 * hy;
            let wj = if j == 0 || j == grid_n { 0.5 } else { 1.0 };
            row += wj * gamma(Point::new(x, y, t), pole);
        }
        total += wi * row;
    }
    Ok(total * hx * hy)
}

/// Centered second-order finite-difference value of `L₀Γ(·, 0)` at `z`,
/// with the same step `h` in every direction.
pub fn l0_residual(z: Point, h: f64) -> Result<f64, GammaError> {
    if !(h > 0.0) {
        return Err(GammaError::NonPositiveStep(h));
    }
    let norm = group_norm(z);
    if norm < 10.0 * h {
        return Err(GammaError::TooCloseToPole { point: z, h, norm });
    }
    let g = |dx: f64, dy: f64, dt: f64| gamma_origin(Point::new(z.x + dx, z.y + dy, z.t + dt));
    let center = g(0.0, 0.0, 0.0);
    let dxx = (g(h, 0.0, 0.0) - 2.0 * center + g(-h, 0.0, 0.0)) / (h * h);
    let dy = (g(0.0, h, 0.0) - g(0.0, -h, 0.0)) / (2.0 * h);
    let dt = (g(0.0, 0.0, h) - g(0.0, 0.0, -h)) / (2.0 * h);
    Ok(dxx + z.x * dy - dt)
}

/// `√3/(2π)` computed rather than hard-coded; used to cross-check the constant.
pub fn prefactor() -> f64 {
    3f64.sqrt() / (2.0 * PI)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{compose, inverse};
    use approx::assert_relative_eq;
    use rand::{RngExt, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn prefactor_constant() {
        assert_relative_eq!(GAMMA_PREFACTOR, prefactor(), max_relative = 1e-15);
    }

    #[test]
    fn value_at_unit_time() {
        assert_relative_eq!(gamma_origin(Point::new(0.0, 0.0, 1.0)), 0.275664, epsilon = 1e-6);
    }

    #[test]
    fn causal_support() {
        assert_eq!(gamma_origin(Point::new(0.3, 0.1, -1.0)), 0.0);
        assert_eq!(gamma_origin(Point::new(0.3, 0.1, 0.0)), 0.0);
        let z = Point::new(0.3, 0.1, 0.5);
        assert_eq!(gamma(z, z), 0.0);
        assert_eq!(gamma_dx(z, z), 0.0);
        assert!(gamma_origin(Point::new(0.0, 0.0, 1e-3)) > 0.0);
    }

    #[test]
    fn underflows_to_zero_not_nan() {
        let v = gamma_origin(Point::new(50.0, -40.0, 1e-6));
        assert_eq!(v, 0.0);
        let v = gamma_origin(Point::new(1.0, 1.0, 1e-300));
        assert_eq!(v, 0.0);
    }

    #[test]
    fn two_point_reduces_to_origin_and_translation() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..1000 {
            let z = Point::new(rng.random_range(-2.0..2.0), rng.random_range(-2.0..2.0), rng.random_range(0.05..3.0));
            assert_relative_eq!(gamma(z, Point::ORIGIN), gamma_origin(z), max_relative = 1e-14);
            let zeta = Point::new(rng.random_range(-2.0..2.0), rng.random_range(-2.0..2.0), rng.random_range(-3.0..z.t - 0.05));
            let direct = gamma(z, zeta);
            let translated = gamma_origin(compose(inverse(zeta), z));
            if direct > 1e-250 {
                assert_relative_eq!(direct, translated, max_relative = 1e-10);
            }
        }
    }

    #[test]
    fn derivative_matches_finite_difference() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let h = 1e-5;
        for _ in 0..200 {
            let z = Point::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), rng.random_range(0.5..2.0));
            let zeta = Point::new(rng.random_range(-1.0..1.0), rng.random_range(-0.5..0.5), rng.random_range(-1.0..0.0));
            let fd = (gamma(z, Point { x: zeta.x + h, ..zeta }) - gamma(z, Point { x: zeta.x - h, ..zeta })) / (2.0 * h);
            let exact = gamma_dx(z, zeta);
            assert!((fd - exact).abs() <= 1e-7 * (1.0 + exact.abs()), "{fd} vs {exact}");
        }
    }

    #[test]
    fn derivative_vanishes_where_linear_factor_does() {
        // (x + 2ξ)/s + 3(y − η)/s² = 0  ⇔  ξ = −x/2 − 3(y − η)/(2s).
        let z = Point::new(0.4, 0.3, 1.5);
        let (eta, tau) = (-0.1, 0.5);
        let s = z.t - tau;
        let xi = -z.x / 2.0 - 3.0 * (z.y - eta) / (2.0 * s);
        assert!(gamma_dx(z, Point::new(xi, eta, tau)).abs() < 1e-16);
    }

    #[test]
    fn dxi_kernel_matches_two_point_derivative() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..500 {
            let z = Point::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), rng.random_range(0.2..2.0));
            let zeta = Point::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), rng.random_range(-1.0..0.1));
            let lhs = neg_gamma_dxi_kernel(compose(inverse(zeta), z));
            let rhs = -gamma_dx(z, zeta);
            assert!((lhs - rhs).abs() <= 1e-9 * (1e-12 + rhs.abs()), "{lhs} vs {rhs}");
        }
    }

    #[test]
    fn homogeneity_degree_minus_four() {
        let z = Point::new(0.3, -0.2, 0.8);
        for mu in [1e-2, 0.5, 3.0, 1e2] {
            let lhs = gamma_origin(z.dilated(mu));
            assert_relative_eq!(lhs, mu.powi(-4) * gamma_origin(z), max_relative = 1e-12);
            let lhs = neg_gamma_dxi_kernel(z.dilated(mu));
            assert_relative_eq!(lhs, mu.powi(-5) * neg_gamma_dxi_kernel(z), max_relative = 1e-12);
        }
    }

    #[test]
    fn unit_mass() {
        for s in [0.01, 1.0, 4.0] {
            let m = gamma_mass(s, 0.0, 400).unwrap();
            assert!((m - 1.0).abs() < 1e-6, "s = {s}: {m}");
        }
        assert!(gamma_mass(0.0, 0.0, 100).is_err());
        assert!(gamma_mass(1.0, 0.0, 3).is_err());
    }

    #[test]
    fn residual_second_order() {
        for z in [Point::new(0.0, 0.0, 1.0), Point::new(1.0, 1.0, 2.0)] {
            let r: Vec<f64> = [1e-2, 5e-3, 2.5e-3].iter().map(|&h| l0_residual(z, h).unwrap().abs()).collect();
            let p1 = (r[0] / r[1]).log2();
            let p2 = (r[1] / r[2]).log2();
            assert!((p1 - 2.0).abs() < 0.3 && (p2 - 2.0).abs() < 0.3, "{r:?}");
        }
        assert!(l0_residual(Point::new(0.0, 0.0, 1.0), 1e-2).unwrap().abs() < 1e-2);
        assert!(l0_residual(Point::new(0.0, 0.0, 1e-4), 1e-2).is_err());
    }
}
