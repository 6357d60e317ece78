//! The Lie group `(R^{2+1}, ∘)` attached to the Kolmogorov operator
//! `∂ₓ² + x∂_y − ∂ₜ`, its anisotropic dilations and the ball/cube geometry.
//!
//! Points are `(x, y, t)` with homogeneity degrees `(1, 3, 2)` under the
//! dilation `δ_μ = diag(μ, μ³, μ²)`; the homogeneous dimension is 6.
//!
//! The group law is
//!
//! ```text
//! (x, y, t) ∘ (ξ, η, τ) = (ξ + x, η + y − τx, t + τ)
//! ```
//!
//! and the quasi-distance `d(z₀, z) = ‖z₀⁻¹ ∘ z‖` is *not* symmetric.

use rand::{RngExt, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Seed used by the Monte-Carlo estimators when the caller does not pick one.
pub const DEFAULT_SEED: u64 = 42;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GeometryError {
    #[error("dilation parameter must be positive, got {0}")]
    NonPositiveDilation(f64),
    #[error("radius must be positive, got {0}")]
    NonPositiveRadius(f64),
    #[error("at least {min} samples are required, got {got}")]
    TooFewSamples { min: usize, got: usize },
}

/// A point `z = (x, y, t)` of `R^{2+1}`.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Point {
    pub x: f64,
    pub y: f64,
    pub t: f64,
}

impl Point {
    pub const ORIGIN: Point = Point { x: 0.0, y: 0.0, t: 0.0 };

    pub const fn new(x: f64, y: f64, t: f64) -> Self {
        Self { x, y, t }
    }

    pub fn is_finite(&self) -> bool {
        self.x.is_finite() && self.y.is_finite() && self.t.is_finite()
    }

    /// `self ∘ other`.
    #[inline]
    pub fn compose(self, other: Point) -> Point {
        compose(self, other)
    }

    #[inline]
    pub fn inverse(self) -> Point {
        inverse(self)
    }

    /// Dilation without the positivity check; callers guarantee `mu > 0`.
    #[inline]
    pub(crate) fn dilated(self, mu: f64) -> Point {
        Point::new(mu * self.x, mu * mu * mu * self.y, mu * mu * self.t)
    }
}

impl std::fmt::Display for Point {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "({}, {}, {})", self.x, self.y, self.t)
    }
}

/// Group law `p ∘ q = ((ξ, η) + E(τ)(x, y)ᵀ, t + τ)` with `E(τ) = [[1, 0], [−τ, 1]]`.
#[inline]
pub fn compose(p: Point, q: Point) -> Point {
    Point::new(q.x + p.x, q.y + p.y - q.t * p.x, p.t + q.t)
}

/// `(x, y, t)⁻¹ = (−x, −y − tx, −t)`.
#[inline]
pub fn inverse(p: Point) -> Point {
    Point::new(-p.x, -p.y - p.t * p.x, -p.t)
}

pub fn dilate(mu: f64, p: Point) -> Result<Point, GeometryError> {
    if !(mu > 0.0) {
        return Err(GeometryError::NonPositiveDilation(mu));
    }
    Ok(p.dilated(mu))
}

/// Value of `x²/r² + y²/r⁶ + t²/r⁴`; strictly decreasing in `r`.
#[inline]
fn gauge(p: Point, r: f64) -> f64 {
    let r2 = r * r;
    p.x * p.x / r2 + p.t * p.t / (r2 * r2) + p.y * p.y / (r2 * r2 * r2)
}

/// The homogeneous norm: the unique `r > 0` with `x²/r² + y²/r⁶ + t²/r⁴ = 1`,
/// and `0` at the origin.
///
/// The point is first normalised by `m = max(|x|, |y|^{1/3}, |t|^{1/2})`, which
/// puts the root of the rescaled equation in `[1, 2]`; bisection then runs
/// until the bracket collapses to a couple of ulps.
pub fn group_norm(p: Point) -> f64 {
    let m = p.x.abs().max(p.y.abs().cbrt()).max(p.t.abs().sqrt());
    if m == 0.0 {
        return 0.0;
    }
    let scaled = Point::new(p.x / m, p.y / (m * m * m), p.t / (m * m));
    let (mut lo, mut hi) = (0.5_f64, 2.0_f64);
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        if gauge(scaled, mid) > 1.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    m * 0.5 * (lo + hi)
}

/// Quasi-distance `‖z₀⁻¹ ∘ z‖`. Not symmetric in its arguments.
pub fn distance(z0: Point, z: Point) -> f64 {
    group_norm(compose(inverse(z0), z))
}

/// `‖p‖ ≤ r` without solving for the norm (the gauge is monotone in `r`).
#[inline]
pub fn norm_at_most(p: Point, r: f64) -> bool {
    p == Point::ORIGIN || gauge(p, r) <= 1.0
}

/// Closed group ball `ℬ_r(center)`, or its past part `ℬ⁻_r = ℬ_r ∩ {t < t_center}`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BallSpec {
    pub center: Point,
    pub radius: f64,
    pub past_only: bool,
}

impl BallSpec {
    pub fn new(center: Point, radius: f64, past_only: bool) -> Result<Self, GeometryError> {
        if !(radius > 0.0) {
            return Err(GeometryError::NonPositiveRadius(radius));
        }
        Ok(Self { center, radius, past_only })
    }

    pub fn full(center: Point, radius: f64) -> Result<Self, GeometryError> {
        Self::new(center, radius, false)
    }

    pub fn past(center: Point, radius: f64) -> Result<Self, GeometryError> {
        Self::new(center, radius, true)
    }

    pub fn contains(&self, p: Point) -> bool {
        if self.past_only && !(p.t < self.center.t) {
            return false;
        }
        norm_at_most(compose(inverse(self.center), p), self.radius)
    }
}

/// Cube `𝒞_r = {|x| ≤ r, |y| ≤ 8r³, |t| ≤ r²}` left-translated to `center`.
/// With `past_only` the time range becomes `−r² ≤ t < 0` (the cube `𝒞⁻_r`).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CubeSpec {
    pub center: Point,
    pub radius: f64,
    pub past_only: bool,
}

impl CubeSpec {
    pub fn new(center: Point, radius: f64) -> Result<Self, GeometryError> {
        if !(radius > 0.0) {
            return Err(GeometryError::NonPositiveRadius(radius));
        }
        Ok(Self { center, radius, past_only: false })
    }

    pub fn past(center: Point, radius: f64) -> Result<Self, GeometryError> {
        Ok(Self { past_only: true, ..Self::new(center, radius)? })
    }

    pub fn contains(&self, p: Point) -> bool {
        let d = compose(inverse(self.center), p);
        let r = self.radius;
        let time_ok = if self.past_only { d.t >= -r * r && d.t < 0.0 } else { d.t.abs() <= r * r };
        time_ok && d.x.abs() <= r && d.y.abs() <= 8.0 * r * r * r
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum Region {
    Ball(BallSpec),
    Cube(CubeSpec),
}

impl Region {
    pub fn contains(&self, p: Point) -> bool {
        match self {
            Region::Ball(b) => b.contains(p),
            Region::Cube(c) => c.contains(p),
        }
    }
}

impl From<BallSpec> for Region {
    fn from(b: BallSpec) -> Self {
        Region::Ball(b)
    }
}

impl From<CubeSpec> for Region {
    fn from(c: CubeSpec) -> Self {
        Region::Cube(c)
    }
}

pub fn contains(region: &Region, p: Point) -> bool {
    region.contains(p)
}

/// Monte-Carlo estimate of the smallest `Λ` with `𝒞_{r/Λ} ⊂ ℬ_r ⊂ 𝒞_{Λr}`,
/// using [`DEFAULT_SEED`].
pub fn estimate_lambda(r: f64, sample_count: usize) -> Result<f64, GeometryError> {
    estimate_lambda_with_seed(r, sample_count, DEFAULT_SEED)
}

/// The estimate only sees the sampled points, so it approaches the true
/// constant from below.
pub fn estimate_lambda_with_seed(r: f64, sample_count: usize, seed: u64) -> Result<f64, GeometryError> {
    const MIN_SAMPLES: usize = 1000;
    if !(r > 0.0) {
        return Err(GeometryError::NonPositiveRadius(r));
    }
    if sample_count < MIN_SAMPLES {
        return Err(GeometryError::TooFewSamples { min: MIN_SAMPLES, got: sample_count });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    // Points of the reference cube 𝒞_1.
    let cube_pts: Vec<Point> =
        (0..sample_count).map(|_| Point::new(rng.random_range(-1.0..=1.0), rng.random_range(-8.0..=8.0), rng.random_range(-1.0..=1.0))).collect();
    // Points of ℬ_r by rejection from its bounding box [−r, r] × [−r³, r³] × [−r², r²].
    let ball = BallSpec::full(Point::ORIGIN, r)?;
    let mut ball_pts = Vec::with_capacity(sample_count);
    while ball_pts.len() < sample_count {
        let p = Point::new(r * rng.random_range(-1.0..=1.0), r * r * r * rng.random_range(-1.0..=1.0), r * r * rng.random_range(-1.0..=1.0));
        if ball.contains(p) {
            ball_pts.push(p);
        }
    }

    let sandwich_holds = |lambda: f64| -> bool {
        let inner = cube_pts.iter().all(|&p| ball.contains(p.dilated(r / lambda)));
        let outer = CubeSpec { center: Point::ORIGIN, radius: lambda * r, past_only: false };
        inner && ball_pts.iter().all(|&p| outer.contains(p))
    };

    let mut hi = 2.0;
    while !sandwich_holds(hi) {
        hi *= 2.0;
    }
    let mut lo = 1.0;
    if sandwich_holds(lo) {
        return Ok(lo);
    }
    while hi - lo > 1e-12 * hi {
        let mid = 0.5 * (lo + hi);
        if sandwich_holds(mid) {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    Ok(hi)
}

/// Largest observed `d(a, c) / (d(a, b) + d(b, c))` over random triples in
/// `[−extent, extent]³`. A measurement only; no bound is asserted anywhere.
pub fn measure_quasi_triangle(samples: usize, extent: f64, seed: u64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut draw = || Point::new(rng.random_range(-extent..=extent), rng.random_range(-extent..=extent), rng.random_range(-extent..=extent));
    let mut worst: f64 = 0.0;
    for _ in 0..samples {
        let (a, b, c) = (draw(), draw(), draw());
        let denom = distance(a, b) + distance(b, c);
        if denom > 0.0 {
            worst = worst.max(distance(a, c) / denom);
        }
    }
    worst
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    fn close(a: Point, b: Point, tol: f64) -> bool {
        (a.x - b.x).abs() <= tol && (a.y - b.y).abs() <= tol && (a.t - b.t).abs() <= tol
    }

    #[test]
    fn compose_examples() {
        let q = Point::new(0.3, -1.2, 2.5);
        assert_eq!(compose(Point::ORIGIN, q), q);
        assert_eq!(compose(Point::new(1.0, 0.0, 0.0), Point::new(0.0, 0.0, 1.0)), Point::new(1.0, -1.0, 1.0));
    }

    #[test]
    fn inverse_examples() {
        assert_eq!(inverse(Point::new(1.0, 0.0, 0.0)), Point::new(-1.0, 0.0, 0.0));
        assert_eq!(inverse(Point::ORIGIN), Point::new(-0.0, -0.0, -0.0));
        assert_eq!(inverse(Point::new(1.0, 1.0, 2.0)), Point::new(-1.0, -3.0, -2.0));
    }

    #[test]
    fn dilate_examples() {
        let p = Point::new(0.7, -0.2, 1.1);
        assert_eq!(dilate(1.0, p).unwrap(), p);
        assert_eq!(dilate(2.0, Point::new(1.0, 1.0, 1.0)).unwrap(), Point::new(2.0, 8.0, 4.0));
        assert!(dilate(0.0, p).is_err());
        assert!(dilate(-1.0, p).is_err());
        assert!(dilate(f64::NAN, p).is_err());
    }

    #[test]
    fn norm_examples() {
        assert_eq!(group_norm(Point::ORIGIN), 0.0);
        assert_relative_eq!(group_norm(Point::new(1.0, 0.0, 0.0)), 1.0, max_relative = 1e-15);
        assert_relative_eq!(group_norm(Point::new(0.0, 0.0, 4.0)), 2.0, max_relative = 1e-15);
        assert_relative_eq!(group_norm(Point::new(0.0, -27.0, 0.0)), 3.0, max_relative = 1e-15);
    }

    #[test]
    fn norm_solves_defining_equation() {
        for p in [Point::new(0.3, 2.0, -0.7), Point::new(1e-5, 3e-12, 1e-9), Point::new(1e4, -1e9, 3e7)] {
            let r = group_norm(p);
            assert_relative_eq!(gauge(p, r), 1.0, max_relative = 1e-12);
        }
    }

    #[test]
    fn norm_continuous_at_origin() {
        let p = Point::new(0.4, -1.3, 0.9);
        let mut prev = f64::INFINITY;
        for k in 0..30 {
            let eps = 0.5_f64.powi(k);
            let n = group_norm(p.dilated(eps));
            assert!(n < prev);
            prev = n;
        }
        assert!(prev < 1e-8);
    }

    #[test]
    fn distance_examples() {
        let p = Point::new(0.2, 0.5, -1.0);
        assert_eq!(distance(p, p), 0.0);
        assert_relative_eq!(distance(Point::ORIGIN, Point::new(1.0, 0.0, 0.0)), 1.0, max_relative = 1e-15);
    }

    #[test]
    fn distance_is_not_symmetric() {
        let a = Point::new(1.0, 0.0, 0.0);
        let b = Point::new(0.0, 0.0, 1.0);
        assert!((distance(a, b) - distance(b, a)).abs() > 1e-3);
    }

    #[test]
    fn ball_membership() {
        let ball = BallSpec::full(Point::ORIGIN, 1.0).unwrap();
        assert!(ball.contains(Point::ORIGIN));
        assert!(ball.contains(Point::new(1.0, 0.0, 0.0)));
        assert!(!ball.contains(Point::new(1.0 + 1e-12, 0.0, 0.0)));
        let past = BallSpec::past(Point::ORIGIN, 1.0).unwrap();
        assert!(!past.contains(Point::new(0.0, 0.0, 1e-3)));
        assert!(!past.contains(Point::ORIGIN));
        assert!(past.contains(Point::new(0.0, 0.0, -1e-3)));
        assert!(BallSpec::full(Point::ORIGIN, 0.0).is_err());
    }

    #[test]
    fn translated_ball_matches_distance() {
        let c = Point::new(0.5, -0.3, 1.0);
        let ball = BallSpec::full(c, 0.4).unwrap();
        let p = Point::new(0.7, -0.4, 1.05);
        assert_eq!(ball.contains(p), distance(c, p) <= 0.4);
    }

    #[test]
    fn cube_membership() {
        let cube = CubeSpec::new(Point::ORIGIN, 0.5).unwrap();
        assert!(cube.contains(Point::new(0.5, 1.0, 0.25)));
        assert!(!cube.contains(Point::new(0.5, 1.0 + 1e-9, 0.25)));
        let past = CubeSpec::past(Point::ORIGIN, 0.5).unwrap();
        assert!(!past.contains(Point::ORIGIN));
        assert!(past.contains(Point::new(0.1, 0.0, -0.25)));
        // Translation uses the group law: the cube around c is c ∘ 𝒞_r.
        let c = Point::new(1.0, 0.0, 0.0);
        let moved = CubeSpec::new(c, 0.5).unwrap();
        let q = Point::new(0.0, 0.9, 0.2);
        assert!(cube.contains(q));
        assert!(moved.contains(compose(c, q)));
    }

    #[test]
    fn lambda_estimate_bounds() {
        // The norm is maximal on 𝒞_1 at its corners, so Λ = ‖(1, 8, 1)‖ exactly;
        // the sampled estimate sits just below.
        let exact = group_norm(Point::new(1.0, 8.0, 1.0));
        let l1 = estimate_lambda(1.0, 20_000).unwrap();
        let l2 = estimate_lambda(2.0, 20_000).unwrap();
        assert!(l1 >= 1.0 && l1 <= exact * (1.0 + 1e-9));
        assert!(l1 > 0.9 * exact);
        assert!((l1 - l2).abs() < 0.05 * l1);
        assert!(estimate_lambda(1.0, 10).is_err());
    }

    #[test]
    fn quasi_triangle_is_measurable() {
        let k = measure_quasi_triangle(2000, 2.0, 7);
        assert!(k.is_finite() && k > 0.0);
    }

    fn coord() -> impl Strategy<Value = f64> {
        -10.0f64..10.0
    }

    fn point() -> impl Strategy<Value = Point> {
        (coord(), coord(), coord()).prop_map(|(x, y, t)| Point::new(x, y, t))
    }

    proptest! {
        #[test]
        fn group_axioms(p in point(), q in point(), s in point()) {
            let lhs = compose(compose(p, q), s);
            let rhs = compose(p, compose(q, s));
            prop_assert!(close(lhs, rhs, 1e-12 * (1.0 + lhs.y.abs())));
            prop_assert!(close(compose(p, inverse(p)), Point::ORIGIN, 1e-14 * (1.0 + p.y.abs() + p.x.abs() * p.t.abs())));
            prop_assert!(close(compose(inverse(p), p), Point::ORIGIN, 1e-14 * (1.0 + p.y.abs() + p.x.abs() * p.t.abs())));
        }

        #[test]
        fn dilation_semigroup(p in point(), mu in 0.1f64..10.0, lam in 0.1f64..10.0) {
            let a = dilate(mu, dilate(lam, p).unwrap()).unwrap();
            let b = dilate(mu * lam, p).unwrap();
            prop_assert!((a.x - b.x).abs() <= 1e-12 * (1.0 + b.x.abs()));
            prop_assert!((a.y - b.y).abs() <= 1e-12 * (1.0 + b.y.abs()));
            prop_assert!((a.t - b.t).abs() <= 1e-12 * (1.0 + b.t.abs()));
        }

        #[test]
        fn norm_homogeneity(p in point(), log_mu in -2.0f64..2.0) {
            let mu = 10f64.powf(log_mu);
            let lhs = group_norm(dilate(mu, p).unwrap());
            let rhs = mu * group_norm(p);
            prop_assert!((lhs - rhs).abs() <= 1e-10 * rhs.max(f64::MIN_POSITIVE));
        }

        #[test]
        fn distance_dilation_covariance(z0 in point(), z in point(), mu in 0.1f64..10.0) {
            let lhs = distance(z0.dilated(mu), z.dilated(mu));
            let rhs = mu * distance(z0, z);
            prop_assert!((lhs - rhs).abs() <= 1e-10 * rhs.max(1e-300));
        }
    }
}
