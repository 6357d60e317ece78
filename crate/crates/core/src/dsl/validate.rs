//! Sampling checks of the structural hypotheses on `(a, b₀, b, μ)`.

use serde::Serialize;

use super::{parse, Expr, ParseError};
use crate::geometry::Point;

/// Coefficients of `∂ₜu = ∂ₓ(a∂ₓu) + b₀∂ₓu + b∂_y u` together with the
/// structural constant `μ ∈ (0, 1)`.
#[derive(Debug, Clone, PartialEq)]
pub struct CoefficientSet {
    pub a: Expr,
    pub b0: Expr,
    pub b: Expr,
    pub mu: f64,
}

impl CoefficientSet {
    pub fn parse(a: &str, b0: &str, b: &str, mu: f64) -> Result<Self, ParseError> {
        Ok(Self { a: parse(a)?, b0: parse(b0)?, b: parse(b)?, mu })
    }

    pub fn time_dependent(&self) -> bool {
        [&self.a, &self.b0, &self.b].iter().any(|e| e.depends_on(super::Var::T))
    }

    /// `a = 1, b₀ = 0, b = x`.
    pub fn canonical(mu: f64) -> Self {
        Self::parse("1", "0", "x", mu).expect("literal sources parse")
    }
}

/// Axis-aligned box `[lo.x, hi.x] × [lo.y, hi.y] × [lo.t, hi.t]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct DomainBox {
    pub lo: Point,
    pub hi: Point,
}

impl DomainBox {
    pub fn new(lo: Point, hi: Point) -> Self {
        Self { lo, hi }
    }

    /// `[-1, 1]² × [0, 1]`.
    pub fn unit() -> Self {
        Self::new(Point::new(-1.0, -1.0, 0.0), Point::new(1.0, 1.0, 1.0))
    }

    pub fn extent(&self) -> [f64; 3] {
        [self.hi.x - self.lo.x, self.hi.y - self.lo.y, self.hi.t - self.lo.t]
    }

    fn at_unit(&self, u: [f64; 3]) -> Point {
        let e = self.extent();
        Point::new(self.lo.x + u[0] * e[0], self.lo.y + u[1] * e[1], self.lo.t + u[2] * e[2])
    }
}

/// Radical inverse of `i` in `base`.
fn radical_inverse(mut i: u64, base: u64) -> f64 {
    let inv = 1.0 / base as f64;
    let (mut f, mut out) = (inv, 0.0);
    while i > 0 {
        out += (i % base) as f64 * f;
        i /= base;
        f *= inv;
    }
    out
}

/// Halton points in `[0, 1)³`, bases 2, 3, 5, skipping the origin.
pub fn halton(n: usize) -> impl Iterator<Item = [f64; 3]> {
    (1..=n as u64).map(|i| [radical_inverse(i, 2), radical_inverse(i, 3), radical_inverse(i, 5)])
}

#[derive(Debug, Clone, Copy)]
pub struct ValidationOptions {
    pub samples: usize,
    /// Smallest admissible `|∂ₓb|`.
    pub bx_floor: f64,
    /// Finite-difference step as a fraction of each side of the box.
    pub fd_fraction: f64,
}

pub const MIN_SAMPLES: usize = 10_000;

impl Default for ValidationOptions {
    fn default() -> Self {
        Self { samples: MIN_SAMPLES, bx_floor: 1e-3, fd_fraction: 1e-4 }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct CheckOutcome {
    pub name: &'static str,
    pub passed: bool,
    /// Worst observed value of the checked quantity.
    pub worst: f64,
    pub bound: f64,
    pub witness: Option<Point>,
    pub violations: usize,
    pub detail: String,
}

#[derive(Debug, Clone, Serialize)]
pub struct ValidationReport {
    pub domain: DomainBox,
    pub samples: usize,
    pub mu: f64,
    pub checks: Vec<CheckOutcome>,
    pub sup_a: f64,
    pub inf_a: f64,
    pub sup_abs_b0: f64,
    pub sup_abs_b: f64,
}

impl ValidationReport {
    pub fn passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }

    pub fn check(&self, name: &str) -> Option<&CheckOutcome> {
        self.checks.iter().find(|c| c.name == name)
    }

    pub fn failures(&self) -> impl Iterator<Item = &CheckOutcome> {
        self.checks.iter().filter(|c| !c.passed)
    }
}

struct Tally {
    name: &'static str,
    bound: f64,
    worst: f64,
    witness: Option<Point>,
    violations: usize,
    first_violation: Option<Point>,
    errors: Vec<String>,
}

impl Tally {
    fn new(name: &'static str, bound: f64, start: f64) -> Self {
        Self { name, bound, worst: start, witness: None, violations: 0, first_violation: None, errors: Vec::new() }
    }

    fn observe(&mut self, value: f64, p: Point, worse: bool, violates: bool) {
        if worse {
            self.worst = value;
            self.witness = Some(p);
        }
        if violates {
            self.violations += 1;
            self.first_violation.get_or_insert(p);
        }
    }

    fn error(&mut self, p: Point, msg: String) {
        self.violations += 1;
        self.first_violation.get_or_insert(p);
        if self.errors.len() < 3 {
            self.errors.push(msg);
        }
    }

    fn finish(self, detail: String) -> CheckOutcome {
        let passed = self.violations == 0;
        let witness = if passed { self.witness } else { self.first_violation.or(self.witness) };
        let mut detail = detail;
        if !self.errors.is_empty() {
            detail = format!("{detail}; evaluation errors: {}", self.errors.join("; "));
        }
        CheckOutcome { name: self.name, passed, worst: self.worst, bound: self.bound, witness, violations: self.violations, detail }
    }
}

/// Finite-difference derivatives of `b` at `p`: `[∂ₓ, ∂_y, ∂ₜ, ∂ₓₓ, ∂_yy, ∂ₜₜ]`.
fn b_derivatives(b: &Expr, p: Point, h: [f64; 3]) -> Result<(f64, [f64; 6]), String> {
    let f = |q: Point| b.eval(q).map_err(|e| e.to_string());
    let c = f(p)?;
    let mut d = [0.0; 6];
    for axis in 0..3 {
        let mut plus = p;
        let mut minus = p;
        match axis {
            0 => {
                plus.x += h[0];
                minus.x -= h[0];
            }
            1 => {
                plus.y += h[1];
                minus.y -= h[1];
            }
            _ => {
                plus.t += h[2];
                minus.t -= h[2];
            }
        }
        let (fp, fm) = (f(plus)?, f(minus)?);
        d[axis] = (fp - fm) / (2.0 * h[axis]);
        d[axis + 3] = (fp - 2.0 * c + fm) / (h[axis] * h[axis]);
    }
    Ok((c, d))
}

/// Samples the hypotheses on a Halton point set in `domain`.
///
/// Checks: `μ < a < 1/μ`, `|b₀| ≤ 1/μ`, the finite-difference `C²` size of
/// `b` (largest of `|b|`, first and pure second derivatives) `≤ 1/μ`,
/// `|∂ₓb| ≥ floor`, and a single sign of `∂ₓb`. A sample count below
/// [`MIN_SAMPLES`] is raised to it.
pub fn validate(cs: &CoefficientSet, domain: &DomainBox, opts: &ValidationOptions) -> ValidationReport {
    let n = opts.samples.max(MIN_SAMPLES);
    let mu = cs.mu;
    let inv_mu = 1.0 / mu;
    let ext = domain.extent();
    let h = ext.map(|e| opts.fd_fraction * if e > 0.0 { e } else { 1.0 });

    let mut a_lo = Tally::new("a_lower", mu, f64::INFINITY);
    let mut a_hi = Tally::new("a_upper", inv_mu, f64::NEG_INFINITY);
    let mut b0_t = Tally::new("b0_bound", inv_mu, 0.0);
    let mut c2_t = Tally::new("b_c2_bound", inv_mu, 0.0);
    let mut floor_t = Tally::new("bx_floor", opts.bx_floor, f64::INFINITY);
    let mut sign_t = Tally::new("bx_sign", 0.0, 0.0);
    let mut sign_ref: Option<(f64, Point)> = None;
    let mut sup_abs_b = 0.0f64;

    let mu_ok = mu > 0.0 && mu < 1.0;
    for u in halton(n) {
        let p = domain.at_unit(u);
        match cs.a.eval(p) {
            Ok(a) => {
                a_lo.observe(a, p, a < a_lo.worst, !(a > mu));
                a_hi.observe(a, p, a > a_hi.worst, !(a < inv_mu));
            }
            Err(e) => {
                a_lo.error(p, e.to_string());
                a_hi.error(p, e.to_string());
            }
        }
        match cs.b0.eval(p) {
            Ok(v) => b0_t.observe(v.abs(), p, v.abs() > b0_t.worst, !(v.abs() <= inv_mu)),
            Err(e) => b0_t.error(p, e.to_string()),
        }
        match b_derivatives(&cs.b, p, h) {
            Ok((b, d)) => {
                sup_abs_b = sup_abs_b.max(b.abs());
                let c2 = d.iter().fold(b.abs(), |m, v| m.max(v.abs()));
                c2_t.observe(c2, p, c2 > c2_t.worst, !(c2 <= inv_mu));
                let bx = d[0];
                floor_t.observe(bx.abs(), p, bx.abs() < floor_t.worst, !(bx.abs() >= opts.bx_floor));
                if bx.abs() >= opts.bx_floor {
                    match sign_ref {
                        None => sign_ref = Some((bx.signum(), p)),
                        Some((s, _)) => sign_t.observe(bx, p, false, bx.signum() != s),
                    }
                }
            }
            Err(e) => {
                c2_t.error(p, e.clone());
                floor_t.error(p, e);
            }
        }
    }

    let mut checks = Vec::with_capacity(7);
    checks.push(CheckOutcome {
        name: "mu_range",
        passed: mu_ok,
        worst: mu,
        bound: 1.0,
        witness: None,
        violations: usize::from(!mu_ok),
        detail: "mu must lie in (0, 1)".into(),
    });
    let (a_min, a_max) = (a_lo.worst, a_hi.worst);
    checks.push(a_lo.finish(format!("min a = {a_min:.6} must exceed mu = {mu}")));
    checks.push(a_hi.finish(format!("max a = {a_max:.6} must stay below 1/mu = {inv_mu}")));
    let b0_max = b0_t.worst;
    checks.push(b0_t.finish(format!("sup |b0| = {b0_max:.6}, bound 1/mu = {inv_mu}")));
    let c2 = c2_t.worst;
    checks.push(c2_t.finish(format!("finite-difference |b|_C2 = {c2:.6}, bound 1/mu = {inv_mu}")));
    let bx_min = floor_t.worst;
    checks.push(floor_t.finish(format!("min |db/dx| = {bx_min:.3e}, floor {:.1e} (hypoellipticity needs db/dx != 0)", opts.bx_floor)));
    let sign_detail = match sign_ref {
        Some((s, _)) => format!("db/dx has sign {s:+} at the first sample"),
        None => "no sample with |db/dx| above the floor".into(),
    };
    checks.push(sign_t.finish(sign_detail));

    ValidationReport { domain: *domain, samples: n, mu, checks, sup_a: a_max, inf_a: a_min, sup_abs_b0: b0_max, sup_abs_b }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn run(a: &str, b0: &str, b: &str, mu: f64) -> ValidationReport {
        let cs = CoefficientSet::parse(a, b0, b, mu).unwrap();
        validate(&cs, &DomainBox::unit(), &ValidationOptions::default())
    }

    #[test]
    fn canonical_passes() {
        let r = run("1", "0", "x", 0.5);
        assert!(r.passed(), "{:#?}", r.failures().collect::<Vec<_>>());
        assert_eq!(r.samples, 10_000);
        assert!((r.check("bx_floor").unwrap().worst - 1.0).abs() < 1e-9);
    }

    #[test]
    fn checkerboard_diffusion_passes() {
        let r = run("checkerboard(3,.1,.1,.1,.6,1.5)", "0", "x", 0.5);
        assert!(r.passed(), "{:#?}", r.failures().collect::<Vec<_>>());
        assert!(r.inf_a >= 0.6 && r.sup_a <= 1.5);
    }

    #[test]
    fn constant_drift_fails_hypoellipticity() {
        let r = run("1", "0", "1", 0.5);
        assert!(!r.passed());
        let c = r.check("bx_floor").unwrap();
        assert!(!c.passed);
        assert!(c.witness.is_some());
        assert_eq!(c.violations, r.samples);
    }

    #[test]
    fn interior_zero_of_bx_fails() {
        // ∂ₓb = 2x·0.5 changes sign at x = 0.
        let r = run("1", "0", "0.5*x^2", 0.5);
        assert!(!r.check("bx_sign").unwrap().passed);
        assert!(!r.check("bx_floor").unwrap().passed);
    }

    #[test]
    fn bound_violations_have_witnesses() {
        let r = run("0.4 + x^2", "3*y", "x", 0.5);
        let a = r.check("a_lower").unwrap();
        assert!(!a.passed);
        let w = a.witness.unwrap();
        assert!(0.4 + w.x * w.x <= 0.5);
        let b0 = r.check("b0_bound").unwrap();
        assert!(!b0.passed);
        assert!(3.0 * b0.witness.unwrap().y.abs() > 2.0);
        assert!(r.check("a_upper").unwrap().passed);
    }

    #[test]
    fn large_curvature_of_b_fails_c2() {
        let r = run("1", "0", "x + 3*x^2", 0.5);
        let c = r.check("b_c2_bound").unwrap();
        assert!(!c.passed);
        assert!(c.worst > 6.9 && c.worst < 7.0 + 1e-6, "{}", c.worst);
    }

    #[test]
    fn evaluation_errors_are_violations() {
        let r = run("1/x", "0", "x", 0.5);
        assert!(!r.passed());
        let r = run("1", "0", "log(x)", 0.5);
        assert!(!r.check("bx_floor").unwrap().passed);
    }

    #[test]
    fn mu_out_of_range() {
        assert!(!run("1", "0", "x", 1.5).check("mu_range").unwrap().passed);
    }

    #[test]
    fn halton_is_deterministic_and_fills_cube() {
        let pts: Vec<_> = halton(1000).collect();
        assert_eq!(pts[0], [0.5, 1.0 / 3.0, 0.2]);
        for axis in 0..3 {
            let below = pts.iter().filter(|p| p[axis] < 0.5).count();
            assert!((below as i64 - 500).abs() < 10);
        }
    }
}
