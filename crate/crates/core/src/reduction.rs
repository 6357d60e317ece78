//! Change of variables `ξ = b(x, y, t), η = y, τ = t`.
//!
//! If `u(x, y, t) = v(b(x, y, t), y, t)` then `v` solves
//!
//! ```text
//! ∂_τ v = ∂_ξ(ã ∂_ξ v) + b̃₀ ∂_ξ v + ξ ∂_η v
//! ã  = b_x² a
//! b̃₀ = −a b_xx + b₀ b_x + ξ b_y − b_t
//! ```
//!
//! with everything on the right evaluated at `(x(ξ, η, τ), η, τ)`. The
//! `−a b_xx` term is `a (∂²x/∂ξ²) b_x³`, using `∂²x/∂ξ² = −b_xx / b_x³`.

use thiserror::Error;

use crate::dsl::{CoefficientSet, Expr};
use crate::field::{Field, Grid, PointFunction};
use crate::geometry::Point;
use crate::solver::{CoeffValues, Coefficients};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ReductionError {
    #[error("xi = {xi} is outside the range [{lo}, {hi}] of b at (eta, tau) = ({eta}, {tau})")]
    OutOfRange { xi: f64, eta: f64, tau: f64, lo: f64, hi: f64 },
    #[error("db/dx changes sign near x = {x} (eta = {eta}, tau = {tau})")]
    SignChange { x: f64, eta: f64, tau: f64 },
    #[error("inversion stalled at x = {x} with residual {residual:.3e}")]
    NoConvergence { x: f64, residual: f64 },
    #[error("evaluation of b failed: {0}")]
    Eval(String),
}

pub const INVERSION_TOLERANCE: f64 = 1e-12;

fn eval_b(b: &Expr, p: Point) -> Result<f64, ReductionError> {
    b.eval(p).map_err(|e| ReductionError::Eval(e.to_string()))
}

/// The `x` in `x_range` with `b(x, η, τ) = ξ`, by Newton steps kept inside a
/// shrinking bisection bracket.
pub fn invert_b(b: &Expr, xi: f64, eta: f64, tau: f64, x_range: (f64, f64)) -> Result<f64, ReductionError> {
    let at = |x: f64| Point::new(x, eta, tau);
    let (mut lo, mut hi) = x_range;
    let (mut f_lo, f_hi) = (eval_b(b, at(lo))? - xi, eval_b(b, at(hi))? - xi);
    let increasing = f_hi + xi >= f_lo + xi;
    if f_lo == 0.0 {
        return Ok(lo);
    }
    if f_hi == 0.0 {
        return Ok(hi);
    }
    if f_lo.signum() == f_hi.signum() {
        let (a, c) = (f_lo + xi, f_hi + xi);
        return Err(ReductionError::OutOfRange { xi, eta, tau, lo: a.min(c), hi: a.max(c) });
    }
    let smooth = b.is_smooth();
    let tol = INVERSION_TOLERANCE.max(8.0 * f64::EPSILON * xi.abs());
    let mut x = lo - f_lo * (hi - lo) / (f_hi - f_lo);
    for _ in 0..200 {
        let f = eval_b(b, at(x))? - xi;
        if f.abs() <= tol {
            return Ok(x);
        }
        if (f < 0.0) == (f_lo < 0.0) {
            lo = x;
            f_lo = f;
        } else {
            hi = x;
        }
        let slope = if smooth {
            b.eval_jet(at(x)).map_err(|e| ReductionError::Eval(e.to_string()))?.g[0]
        } else {
            let h = 1e-7 * (x_range.1 - x_range.0);
            (eval_b(b, at(x + h))? - eval_b(b, at(x - h))?) / (2.0 * h)
        };
        if slope != 0.0 && (slope > 0.0) != increasing {
            return Err(ReductionError::SignChange { x, eta, tau });
        }
        let newton = if slope != 0.0 { x - f / slope } else { f64::NAN };
        x = if newton > lo && newton < hi { newton } else { 0.5 * (lo + hi) };
        if hi - lo <= 4.0 * f64::EPSILON * x.abs().max(1.0) {
            let r = eval_b(b, at(x))? - xi;
            return if r.abs() <= tol { Ok(x) } else { Err(ReductionError::NoConvergence { x, residual: r.abs() }) };
        }
    }
    let r = eval_b(b, at(x))? - xi;
    Err(ReductionError::NoConvergence { x, residual: r.abs() })
}

/// `[b_x, b_xx, b_y, b_t]` at `p`: exact jets for smooth expressions,
/// centered differences with step `h` otherwise.
pub fn b_derivatives(b: &Expr, p: Point, h: f64) -> Result<[f64; 4], ReductionError> {
    if b.is_smooth() {
        let j = b.eval_jet(p).map_err(|e| ReductionError::Eval(e.to_string()))?;
        return Ok([j.g[0], j.second(0, 0), j.g[1], j.g[2]]);
    }
    let f = |q: Point| eval_b(b, q);
    let c = f(p)?;
    let xp = f(Point::new(p.x + h, p.y, p.t))?;
    let xm = f(Point::new(p.x - h, p.y, p.t))?;
    let yp = f(Point::new(p.x, p.y + h, p.t))?;
    let ym = f(Point::new(p.x, p.y - h, p.t))?;
    let tp = f(Point::new(p.x, p.y, p.t + h))?;
    let tm = f(Point::new(p.x, p.y, p.t - h))?;
    Ok([(xp - xm) / (2.0 * h), (xp - 2.0 * c + xm) / (h * h), (yp - ym) / (2.0 * h), (tp - tm) / (2.0 * h)])
}

/// Coefficients of the canonical problem in `(ξ, η, τ)`.
#[derive(Debug, Clone)]
pub struct TransformedCoefficients {
    pub source: CoefficientSet,
    /// Search interval for `x(ξ, η, τ)`.
    pub x_range: (f64, f64),
    /// Finite-difference step for non-smooth `b`.
    pub fd_step: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TransformedValues {
    pub x: f64,
    pub a_tilde: f64,
    pub b0_tilde: f64,
}

impl TransformedCoefficients {
    pub fn inverse_map(&self, xi: f64, eta: f64, tau: f64) -> Result<f64, ReductionError> {
        invert_b(&self.source.b, xi, eta, tau, self.x_range)
    }

    /// `(x, ã, b̃₀)` at `(ξ, η, τ)`.
    pub fn values(&self, w: Point) -> Result<TransformedValues, ReductionError> {
        let x = self.inverse_map(w.x, w.y, w.t)?;
        let p = Point::new(x, w.y, w.t);
        let ev = |e: &Expr| e.eval(p).map_err(|e| ReductionError::Eval(e.to_string()));
        let (a, b0) = (ev(&self.source.a)?, ev(&self.source.b0)?);
        let [bx, bxx, by, bt] = b_derivatives(&self.source.b, p, self.fd_step)?;
        Ok(TransformedValues { x, a_tilde: bx * bx * a, b0_tilde: -a * bxx + b0 * bx + w.x * by - bt })
    }
}

impl Coefficients for TransformedCoefficients {
    fn eval(&self, p: Point) -> Result<CoeffValues, String> {
        let v = self.values(p).map_err(|e| e.to_string())?;
        Ok(CoeffValues { a: v.a_tilde, b0: v.b0_tilde, b: p.x })
    }

    fn time_dependent(&self) -> bool {
        self.source.time_dependent()
    }
}

/// Pushforward of the coefficient set. Inversions search `x_range`, which
/// should cover the source box with some slack.
pub fn transform_coeffs(cs: &CoefficientSet, x_range: (f64, f64)) -> TransformedCoefficients {
    TransformedCoefficients { source: cs.clone(), x_range, fd_step: 1e-5 * (x_range.1 - x_range.0) }
}

/// `[min b, max b]` over a sampling of the source box and time range,
/// widened by `margin` of its width on each side.
pub fn image_range(b: &Expr, grid: &Grid, margin: f64) -> Result<(f64, f64), ReductionError> {
    let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
    let n = 64usize;
    for k in 0..=4 {
        let t = grid.t0 + (grid.t1 - grid.t0) * k as f64 / 4.0;
        for i in 0..=n {
            for j in 0..=n {
                let x = grid.x_range.0 + (grid.x_range.1 - grid.x_range.0) * i as f64 / n as f64;
                let y = grid.y_range.0 + (grid.y_range.1 - grid.y_range.0) * j as f64 / n as f64;
                let v = eval_b(b, Point::new(x, y, t))?;
                lo = lo.min(v);
                hi = hi.max(v);
            }
        }
    }
    let w = hi - lo;
    Ok((lo - margin * w, hi + margin * w))
}

/// Grid for the transformed problem: same `y`, time range and resolution,
/// `ξ` over the image range.
pub fn transformed_grid(cs: &CoefficientSet, grid: &Grid, margin: f64) -> Result<Grid, ReductionError> {
    Ok(Grid { x_range: image_range(&cs.b, grid, margin)?, dt: None, ..*grid })
}

/// A field with invalid cells excluded from norms.
#[derive(Debug, Clone, PartialEq)]
pub struct MaskedField {
    pub field: Field,
    pub valid: Vec<bool>,
}

impl MaskedField {
    pub fn masked_count(&self) -> usize {
        self.valid.iter().filter(|v| !**v).count()
    }

    pub fn max_abs_diff(&self, other: &Field) -> f64 {
        self.field.values.iter().zip(&other.values).zip(&self.valid).filter(|(_, ok)| **ok).fold(0.0, |m, ((a, b), _)| m.max((a - b).abs()))
    }
}

/// `v(ξ, η) = u(x(ξ, η, t), η)` on `target`, bilinear in the source grid.
pub fn pushforward_field(u: &Field, tc: &TransformedCoefficients, target: &Grid) -> MaskedField {
    let mut field = Field::zeros(*target, u.t);
    let mut valid = vec![false; target.len()];
    for i in 0..target.nx {
        for j in 0..target.ny {
            let (xi, eta) = (target.xc(i as isize), target.yc(j as isize));
            let k = i * target.ny + j;
            if let Some(v) = tc.inverse_map(xi, eta, u.t).ok().and_then(|x| u.interpolate(x, eta)) {
                field.values[k] = v;
                valid[k] = true;
            }
        }
    }
    MaskedField { field, valid }
}

/// `u(x, y) = v(b(x, y, t), y)` on `target`.
pub fn pullback_field(v: &Field, tc: &TransformedCoefficients, target: &Grid) -> MaskedField {
    let mut field = Field::zeros(*target, v.t);
    let mut valid = vec![false; target.len()];
    for i in 0..target.nx {
        for j in 0..target.ny {
            let (x, y) = (target.xc(i as isize), target.yc(j as isize));
            let k = i * target.ny + j;
            if let Some(val) = tc.source.b.eval(Point::new(x, y, v.t)).ok().and_then(|xi| v.interpolate(xi, y)) {
                field.values[k] = val;
                valid[k] = true;
            }
        }
    }
    MaskedField { field, valid }
}

/// `g(x(ξ, η, τ), η, τ)`: data of the original problem seen in the new
/// variables.
pub struct PushedData<'a> {
    pub data: &'a dyn PointFunction,
    pub map: &'a TransformedCoefficients,
}

impl PointFunction for PushedData<'_> {
    fn value(&self, w: Point) -> Result<f64, String> {
        let x = self.map.inverse_map(w.x, w.y, w.t).map_err(|e| e.to_string())?;
        self.data.value(Point::new(x, w.y, w.t))
    }

    fn time_dependent(&self) -> bool {
        self.data.time_dependent() || self.map.source.time_dependent()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dsl::parse;
    use rand::{RngExt, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn cs(a: &str, b0: &str, b: &str) -> CoefficientSet {
        CoefficientSet::parse(a, b0, b, 0.25).unwrap()
    }

    #[test]
    fn identity_map() {
        let b = parse("x").unwrap();
        for xi in [-0.7, 0.0, 0.3, 0.999] {
            assert!((invert_b(&b, xi, 0.2, 0.1, (-1.0, 1.0)).unwrap() - xi).abs() <= 1e-12);
        }
    }

    #[test]
    fn sine_shift_has_closed_form_inverse() {
        let b = parse("x + 0.1*sin(y)").unwrap();
        for (xi, eta) in [(0.3, 0.7), (-0.5, -1.2), (0.0, 2.0)] {
            let x = invert_b(&b, xi, eta, 0.0, (-2.0, 2.0)).unwrap();
            assert!((x - (xi - 0.1 * f64::sin(eta))).abs() < 1e-12);
        }
    }

    #[test]
    fn cubic_residuals() {
        let b = parse("x^3 + x").unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        for _ in 0..1000 {
            let xi = rng.random_range(-2.0..2.0);
            let x = invert_b(&b, xi, 0.0, 0.0, (-1.0, 1.0)).unwrap();
            assert!((x * x * x + x - xi).abs() <= 1e-12);
        }
    }

    #[test]
    fn inversion_errors() {
        let b = parse("x").unwrap();
        assert!(matches!(invert_b(&b, 3.0, 0.0, 0.0, (-1.0, 1.0)), Err(ReductionError::OutOfRange { .. })));
        // b = x³ − x: endpoints bracket 0.5 but b' changes sign inside.
        let b = parse("4*x^3 - 3*x").unwrap();
        let err = invert_b(&b, 0.5, 0.0, 0.0, (-1.2, 1.2)).unwrap_err();
        assert!(matches!(err, ReductionError::SignChange { .. }), "{err:?}");
    }

    #[test]
    fn non_smooth_b_still_inverts() {
        let b = parse("x + 0.2*abs(x)").unwrap();
        for xi in [-0.5, 0.0, 0.9] {
            let x = invert_b(&b, xi, 0.0, 0.0, (-1.0, 1.0)).unwrap();
            assert!((x + 0.2 * x.abs() - xi).abs() <= 1e-12);
        }
    }

    #[test]
    fn closed_form_coefficients() {
        let tc = transform_coeffs(&cs("1 + 0.3*sin(x*y)", "0.2*cos(t)", "x"), (-3.0, 3.0));
        let w = Point::new(0.4, -0.8, 0.3);
        let v = tc.values(w).unwrap();
        assert!((v.a_tilde - (1.0 + 0.3 * (0.4f64 * -0.8).sin())).abs() < 1e-15);
        assert!((v.b0_tilde - 0.2 * 0.3f64.cos()).abs() < 1e-15);

        let tc = transform_coeffs(&cs("1", "0", "2*x"), (-3.0, 3.0));
        let v = tc.values(Point::new(0.6, 0.1, 0.0)).unwrap();
        assert!((v.x - 0.3).abs() < 1e-15);
        assert!((v.a_tilde - 4.0).abs() < 1e-12);
        assert!(v.b0_tilde.abs() < 1e-12);

        let tc = transform_coeffs(&cs("1", "0", "x + 0.1*sin(y)"), (-3.0, 3.0));
        for (xi, eta) in [(0.5, 0.3), (-1.0, 2.0)] {
            let v = tc.values(Point::new(xi, eta, 0.0)).unwrap();
            assert!((v.a_tilde - 1.0).abs() < 1e-12);
            assert!((v.b0_tilde - xi * 0.1 * f64::cos(eta)).abs() < 1e-12);
        }
    }

    #[test]
    fn finite_difference_path_agrees_with_jets() {
        // step(x + 10) ≡ 1 on the box but is flagged non-smooth.
        let smooth = transform_coeffs(&cs("1 + x^2", "0.5", "x^3 + x + 0.2*t*y"), (-2.0, 2.0));
        let rough = transform_coeffs(&cs("1 + x^2", "0.5", "(x^3 + x + 0.2*t*y) * step(x + 10)"), (-2.0, 2.0));
        let w = Point::new(0.7, 0.4, 0.5);
        let (a, b) = (smooth.values(w).unwrap(), rough.values(w).unwrap());
        assert!((a.a_tilde - b.a_tilde).abs() < 1e-8);
        assert!((a.b0_tilde - b.b0_tilde).abs() < 1e-5);
    }

    #[test]
    fn ellipticity_is_preserved() {
        let c = cs("checkerboard(3,.1,.1,.1,.6,1.5)", "0", "2*x + 0.3*x^3");
        let tc = transform_coeffs(&c, (-2.0, 2.0));
        let mut inf = f64::INFINITY;
        for k in 0..200 {
            let xi = -2.0 + 4.0 * k as f64 / 199.0;
            inf = inf.min(tc.values(Point::new(xi, 0.3, 0.2)).unwrap().a_tilde);
        }
        // inf ã ≥ inf a · inf b_x² = 0.6 · 4.
        assert!(inf >= 0.6 * 4.0 - 1e-12);
    }

    #[test]
    fn pushforward_roundtrip() {
        let grid = Grid::new((-1.0, 1.0), (-1.0, 1.0), 64, 64, 0.0, 1.0);
        let c = cs("1", "0", "2*x");
        let tc = transform_coeffs(&c, (-2.0, 2.0));
        let target = Grid { nx: 48, ny: 40, ..transformed_grid(&c, &grid, 0.0).unwrap() };
        assert_eq!(target.x_range, (-2.0, 2.0));
        let u = Field::from_fn(grid, 0.0, |p| (-(p.x * p.x + p.y * p.y) * 3.0).exp());
        let v = pushforward_field(&u, &tc, &target);
        assert_eq!(v.masked_count(), 0);
        let back = pullback_field(&v.field, &tc, &grid);
        assert_eq!(back.masked_count(), 0);
        let coarse_err = back.max_abs_diff(&u);
        let grid2 = grid.refined(2);
        let u2 = Field::from_fn(grid2, 0.0, |p| (-(p.x * p.x + p.y * p.y) * 3.0).exp());
        let v2 = pushforward_field(&u2, &tc, &target.refined(2));
        let fine_err = pullback_field(&v2.field, &tc, &grid2).max_abs_diff(&u2);
        assert!(coarse_err < 5e-3);
        assert!(fine_err < coarse_err / 2.5, "{coarse_err} {fine_err}");
    }

    #[test]
    fn identity_pushforward_is_exact() {
        let grid = Grid::new((-1.0, 1.0), (-1.0, 1.0), 16, 16, 0.0, 1.0);
        let tc = transform_coeffs(&cs("1", "0", "x"), (-2.0, 2.0));
        let u = Field::from_fn(grid, 0.0, |p| (3.0 * p.x).sin() * p.y);
        let v = pushforward_field(&u, &tc, &grid);
        assert!(v.max_abs_diff(&u) < 1e-14);
    }
}
