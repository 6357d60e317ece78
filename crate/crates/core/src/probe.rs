//! Empirical measurements of the regularity estimates on sampled solutions.
//!
//! Balls are sampled through a reference lattice of the unit past ball
//! `ℬ⁻_1(0)`: `ℬ⁻_r(c) = c ∘ δ_r(ℬ⁻_1(0))`, so every radius sees the same
//! number of points and ball integrals pick up the Jacobian `r⁶`.

use std::sync::OnceLock;

use rand::{RngExt, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::field::{Field, Trajectory};
use crate::gamma::gamma_origin;
use crate::geometry::{compose, dilate, distance, group_norm, inverse, CubeSpec, Point};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ProbeError {
    #[error("invalid probe configuration: {0}")]
    Config(String),
    #[error("ball of radius {radius} around {center} leaves the sampled domain at {point}")]
    OutsideDomain { center: Point, radius: f64, point: Point },
    #[error("Moser integral vanishes on the ball of radius {0}")]
    ZeroIntegral(f64),
    #[error("need at least 4 radii for a Hölder fit, got {0}")]
    TooFewRadii(usize),
    #[error("cut-off needs theta^(1/6) < 1/2 and r > 0 (theta = {theta}, r = {r})")]
    Cutoff { theta: f64, r: f64 },
}

/// Something that can be evaluated at space-time points.
pub trait Sampler: Sync {
    /// `None` outside the sampled domain.
    fn sample(&self, p: Point) -> Option<f64>;

    /// Step for finite differences in `x`.
    fn dx_step(&self) -> f64 {
        1e-4
    }
}

impl Sampler for Trajectory {
    fn sample(&self, p: Point) -> Option<f64> {
        self.interpolate(p)
    }

    fn dx_step(&self) -> f64 {
        self.grid.dx()
    }
}

/// A trajectory read through its Catmull-Rom interpolant, whose second
/// derivatives inside cells approximate the solution's.
pub struct Smooth<'a>(pub &'a Trajectory);

impl Sampler for Smooth<'_> {
    fn sample(&self, p: Point) -> Option<f64> {
        self.0.interpolate_cubic(p)
    }

    fn dx_step(&self) -> f64 {
        self.0.grid.dx()
    }
}

/// Closure-backed sampler, defined everywhere.
pub struct FnSampler<F>(pub F);

impl<F: Fn(Point) -> f64 + Sync> Sampler for FnSampler<F> {
    fn sample(&self, p: Point) -> Option<f64> {
        Some((self.0)(p))
    }
}

/// Cell centers of a lattice on `[−1,1]² × [−1,0]` that lie in `ℬ⁻_1(0)`.
#[derive(Debug, Clone)]
pub struct BallLattice {
    pub points: Vec<Point>,
    pub cell_volume: f64,
}

impl BallLattice {
    pub fn new(n: usize) -> Self {
        let h = 1.0 / n as f64;
        let mut points = Vec::new();
        for i in 0..2 * n {
            for j in 0..2 * n {
                for k in 0..n {
                    let p = Point::new(-1.0 + (i as f64 + 0.5) * h, -1.0 + (j as f64 + 0.5) * h, -1.0 + (k as f64 + 0.5) * h);
                    if group_norm(p) <= 1.0 {
                        points.push(p);
                    }
                }
            }
        }
        Self { points, cell_volume: h * h * h }
    }

    /// Riemann-sum volume of `ℬ⁻_1`.
    pub fn volume(&self) -> f64 {
        self.points.len() as f64 * self.cell_volume
    }

    /// Images `c ∘ δ_r(w)` of the lattice points.
    pub fn mapped(&self, center: Point, r: f64) -> impl Iterator<Item = Point> + '_ {
        self.points.iter().map(move |&w| compose(center, Point::new(r * w.x, r * r * r * w.y, r * r * w.t)))
    }
}

const OSC_LATTICE: usize = 32;
const INTEGRAL_LATTICE: usize = 24;

/// Oscillation samples also include the dyadic sub-balls down to this
/// radius, so `osc(θr) ≤ osc(r)` holds exactly for dyadic `θ`.
pub const LADDER_FLOOR: f64 = 1e-6;

pub fn osc_lattice() -> &'static BallLattice {
    static L: OnceLock<BallLattice> = OnceLock::new();
    L.get_or_init(|| BallLattice::new(OSC_LATTICE))
}

pub fn integral_lattice() -> &'static BallLattice {
    static L: OnceLock<BallLattice> = OnceLock::new();
    L.get_or_init(|| BallLattice::new(INTEGRAL_LATTICE))
}

fn sample_all(u: &dyn Sampler, lattice: &BallLattice, center: Point, r: f64, mut f: impl FnMut(Point, f64)) -> Result<(), ProbeError> {
    for p in lattice.mapped(center, r) {
        let v = u.sample(p).ok_or(ProbeError::OutsideDomain { center, radius: r, point: p })?;
        f(p, v);
    }
    Ok(())
}

fn ladder(r: f64) -> impl Iterator<Item = f64> {
    let mut s = r;
    std::iter::from_fn(move || {
        let cur = s;
        s *= 0.5;
        (cur == r || cur >= LADDER_FLOOR).then_some(cur)
    })
}

fn extrema(u: &dyn Sampler, center: Point, r: f64) -> Result<(f64, f64), ProbeError> {
    let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
    for s in ladder(r) {
        sample_all(u, osc_lattice(), center, s, |_, v| {
            lo = lo.min(v);
            hi = hi.max(v);
        })?;
    }
    Ok((lo, hi))
}

/// `max − min` of `u` over samples of `ℬ⁻_r(center)`.
pub fn oscillation(u: &dyn Sampler, center: Point, r: f64) -> Result<f64, ProbeError> {
    if !(r > 0.0) {
        return Err(ProbeError::Config(format!("radius must be positive, got {r}")));
    }
    let (lo, hi) = extrema(u, center, r)?;
    Ok(hi - lo)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProbeConfig {
    pub theta: f64,
    pub alpha: f64,
    pub beta: f64,
    pub p: f64,
    pub radii: Vec<f64>,
    pub h_levels: Vec<f64>,
    #[serde(default)]
    pub poincare: Option<PoincareConfig>,
}

impl Default for ProbeConfig {
    fn default() -> Self {
        Self { theta: 0.125, alpha: 0.5, beta: 0.5, p: 2.0, radii: vec![0.4, 0.2, 0.1, 0.05], h_levels: vec![0.5], poincare: None }
    }
}

/// Poincaré check on `w = ln⁺(h/(u + h^{9/8}))`. Its own `theta` because the
/// cut-off needs `θ^{1/6} < 1/2`, far below the oscillation ratio's `θ`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PoincareConfig {
    pub theta: f64,
    pub r: f64,
    pub h: f64,
    #[serde(default = "default_z_lattice")]
    pub z_lattice: usize,
}

fn default_z_lattice() -> usize {
    3
}

impl ProbeConfig {
    /// `half_width` is the smaller half-width of the sampled box in `x`.
    pub fn check(&self, half_width: Option<f64>) -> Result<(), ProbeError> {
        let unit = |v: f64| v > 0.0 && v < 1.0;
        if !unit(self.theta) || !unit(self.alpha) || !unit(self.beta) {
            return Err(ProbeError::Config("theta, alpha and beta must lie in (0, 1)".into()));
        }
        if !(self.p >= 1.0) {
            return Err(ProbeError::Config(format!("p must be >= 1, got {}", self.p)));
        }
        if self.radii.is_empty() || self.radii.iter().any(|r| !(*r > 0.0)) {
            return Err(ProbeError::Config("radii must be positive and non-empty".into()));
        }
        if self.radii.windows(2).any(|w| w[1] >= w[0]) {
            return Err(ProbeError::Config("radii must be strictly decreasing".into()));
        }
        if let Some(hw) = half_width {
            if self.radii[0] > 0.25 * hw {
                return Err(ProbeError::Config(format!("radius {} exceeds a quarter of the half-width {hw}", self.radii[0])));
            }
        }
        if self.h_levels.iter().any(|h| !unit(*h)) {
            return Err(ProbeError::Config("h levels must lie in (0, 1)".into()));
        }
        if let Some(pc) = &self.poincare {
            if !(pc.r > 0.0) || !unit(pc.h) {
                return Err(ProbeError::Config("poincare needs r > 0 and h in (0, 1)".into()));
            }
            Cutoff::new(pc.theta, pc.r)?;
        }
        Ok(())
    }

    /// Extra requirement when the cut-off is built from `theta`.
    pub fn check_cutoff(&self) -> Result<(), ProbeError> {
        if self.theta.powf(1.0 / 6.0) < 0.5 {
            Ok(())
        } else {
            Err(ProbeError::Cutoff { theta: self.theta, r: 1.0 })
        }
    }
}

/// `osc(θrᵢ) / osc(rᵢ)` for each radius; `0` where `u` is locally constant.
pub fn oscillation_decay(u: &dyn Sampler, center: Point, cfg: &ProbeConfig) -> Result<Vec<f64>, ProbeError> {
    let scale = u.sample(center).map_or(1.0, |v| v.abs().max(1.0));
    cfg.radii
        .iter()
        .map(|&r| {
            let big = oscillation(u, center, r)?;
            let small = oscillation(u, center, cfg.theta * r)?;
            Ok(if big < 1e-13 * scale { 0.0 } else { small / big })
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MoserRatio {
    pub radius: f64,
    pub p: f64,
    pub ratio: f64,
    /// `sup_{ℬ⁻_{r/2}} u^p`.
    pub sup: f64,
    /// `∫_{ℬ⁻_r} u^p`.
    pub integral: f64,
    /// Samples with `u < 0`, clipped to zero.
    pub clipped: usize,
}

/// `[sup_{ℬ⁻_{r/2}} u^p] · r⁶ / ∫_{ℬ⁻_r} u^p`.
pub fn moser_ratio(u: &dyn Sampler, center: Point, r: f64, p: f64) -> Result<MoserRatio, ProbeError> {
    if !(p >= 1.0) || !(r > 0.0) {
        return Err(ProbeError::Config(format!("need p >= 1 and r > 0, got p = {p}, r = {r}")));
    }
    let mut clipped = 0usize;
    let mut pow = |v: f64| {
        if v < 0.0 {
            clipped += 1;
        }
        v.max(0.0).powf(p)
    };
    let mut sum = 0.0;
    sample_all(u, integral_lattice(), center, r, |_, v| sum += pow(v))?;
    let r6 = r.powi(6);
    let integral = sum * integral_lattice().cell_volume * r6;
    let mut sup = 0.0f64;
    for s in ladder(0.5 * r) {
        sample_all(u, osc_lattice(), center, s, |_, v| sup = sup.max(pow(v)))?;
    }
    if clipped > 0 {
        log::warn!("moser_ratio: clipped {clipped} negative samples at r = {r}");
    }
    if !(integral > 0.0) {
        return Err(ProbeError::ZeroIntegral(r));
    }
    Ok(MoserRatio { radius: r, p, ratio: sup * r6 / integral, sup, integral, clipped })
}

/// Fraction of the grid cells of `u` inside `cube` at time `u.t` with
/// `u ≥ h`; `None` when the slice misses the cube.
pub fn level_set_fraction(u: &Field, cube: &CubeSpec, h: f64) -> Option<f64> {
    let g = &u.grid;
    let (mut inside, mut above) = (0usize, 0usize);
    for i in 0..g.nx {
        for j in 0..g.ny {
            if cube.contains(Point::new(g.xc(i as isize), g.yc(j as isize), u.t)) {
                inside += 1;
                if u.get(i, j) >= h {
                    above += 1;
                }
            }
        }
    }
    (inside > 0).then(|| above as f64 / inside as f64)
}

/// `(t, fraction)` for every frame whose time slice meets `cube`.
pub fn level_set_fractions(traj: &Trajectory, cube: &CubeSpec, h: f64) -> Vec<(f64, f64)> {
    traj.frames.iter().filter_map(|f| level_set_fraction(f, cube, h).map(|q| (f.t, q))).collect()
}

/// Transition profile of the cut-off. `Flipped` reverses the sign of `χ′`
/// and exists to check that the sign test can fail.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Profile {
    #[default]
    Smoothstep,
    Flipped,
}

/// `χ` with `χ = 1` below `θ^{1/6} r`, `χ = 0` above `r`, quintic smoothstep
/// in between.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Cutoff {
    pub theta: f64,
    pub r: f64,
    pub profile: Profile,
}

impl Cutoff {
    pub fn new(theta: f64, r: f64) -> Result<Self, ProbeError> {
        if !(theta > 0.0 && theta.powf(1.0 / 6.0) < 0.5 && r > 0.0 && r.is_finite()) {
            return Err(ProbeError::Cutoff { theta, r });
        }
        Ok(Self { theta, r, profile: Profile::Smoothstep })
    }

    pub fn with_profile(self, profile: Profile) -> Self {
        Self { profile, ..self }
    }

    fn inner(&self) -> f64 {
        self.theta.powf(1.0 / 6.0) * self.r
    }

    /// `(χ, χ′, χ″)` at `s`.
    pub fn chi(&self, s: f64) -> (f64, f64, f64) {
        let (s0, s1) = (self.inner(), self.r);
        let w = s1 - s0;
        let (v, d1, d2) = if s <= s0 {
            (1.0, 0.0, 0.0)
        } else if s > s1 {
            (0.0, 0.0, 0.0)
        } else {
            let u = (s - s0) / w;
            let step = u * u * u * (10.0 - 15.0 * u + 6.0 * u * u);
            let d = 30.0 * u * u * (1.0 - u) * (1.0 - u) / w;
            let dd = 60.0 * u * (1.0 - u) * (1.0 - 2.0 * u) / (w * w);
            (1.0 - step, -d, -dd)
        };
        match self.profile {
            Profile::Smoothstep => (v, d1, d2),
            Profile::Flipped if s > s0 && s <= s1 => (1.0 - v, -d1, -d2),
            Profile::Flipped => (v, d1, d2),
        }
    }

    fn bracket(&self, y: f64, t: f64) -> f64 {
        self.theta * self.theta * y * y - 6.0 * t * self.r.powi(4)
    }

    /// `φ₀ = χ([θ²y² − 6tr⁴]^{1/6})`.
    pub fn phi0(&self, z: Point) -> f64 {
        self.chi(self.bracket(z.y, z.t).max(0.0).powf(1.0 / 6.0)).0
    }

    /// `φ₁ = χ(θ|x|)`.
    pub fn phi1(&self, z: Point) -> f64 {
        self.chi(self.theta * z.x.abs()).0
    }

    /// `φ = φ₀φ₁` on `t ≤ 0`; zero in the future.
    pub fn phi(&self, z: Point) -> f64 {
        if z.t > 0.0 {
            return 0.0;
        }
        self.phi0(z) * self.phi1(z)
    }

    /// `(x∂_y − ∂_t)φ₀` in closed form.
    pub fn drift_phi0(&self, z: Point) -> f64 {
        let b = self.bracket(z.y, z.t);
        if b <= 0.0 {
            return 0.0;
        }
        let (_, d1, _) = self.chi(b.powf(1.0 / 6.0));
        let th2 = self.theta * self.theta;
        d1 / 6.0 * b.powf(-5.0 / 6.0) * (6.0 * self.r.powi(4) + 2.0 * th2 * z.x * z.y)
    }

    /// `∂ₓ²φ₁ = θ²χ″(θ|x|)`.
    pub fn dxx_phi1(&self, z: Point) -> f64 {
        self.theta * self.theta * self.chi(self.theta * z.x.abs()).2
    }

    /// `𝒬 = {−r² ≤ t ≤ 0, |x| ≤ r/θ, |y| ≤ r³/θ}`.
    pub fn in_q(&self, z: Point) -> bool {
        let r = self.r;
        z.t >= -r * r && z.t <= 0.0 && z.x.abs() <= r / self.theta && z.y.abs() <= r.powi(3) / self.theta
    }
}

/// `φ` for the cut-off with parameters `θ, r`.
pub fn cutoff_phi(theta: f64, r: f64, z: Point) -> Result<f64, ProbeError> {
    Ok(Cutoff::new(theta, r)?.phi(z))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SignCheck {
    pub worst: f64,
    pub at: Point,
    pub samples: usize,
    pub tolerance: f64,
}

impl SignCheck {
    pub fn passed(&self) -> bool {
        self.worst <= self.tolerance
    }
}

/// Largest sampled value of `(x∂_y − ∂_t)φ₀` over `𝒬`, by a centered
/// difference along the direction `(0, x, −1)`.
pub fn cutoff_sign_check(cut: &Cutoff, samples: usize, seed: u64) -> SignCheck {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (r, th) = (cut.r, cut.theta);
    let h = 1e-6 * r * r;
    let mut worst = (f64::NEG_INFINITY, Point::ORIGIN);
    for _ in 0..samples {
        let z = Point::new(rng.random_range(-r / th..=r / th), rng.random_range(-r.powi(3) / th..=r.powi(3) / th), rng.random_range(-r * r..=0.0));
        let step = |s: f64| Point::new(z.x, z.y + s * z.x, z.t - s);
        let d = (cut.phi0(step(h)) - cut.phi0(step(-h))) / (2.0 * h);
        if d > worst.0 {
            worst = (d, z);
        }
    }
    // φ₀ is O(1) over a time span r², so derivatives scale like 1/r².
    SignCheck { worst: worst.0, at: worst.1, samples, tolerance: 1e-8 / (r * r) }
}

/// Quadrature for `I₁`: midpoint in `s = t − τ` and, at each `s`, in the
/// self-similar variables `(p, q') = (x/√s, y/s^{3/2} + p/2)` of `Γ`, where
/// the Gaussian has a fixed shape (`Var p = 2`, `Var q' = 1/6`).
#[derive(Debug, Clone)]
struct I1Rule {
    nodes: Vec<(f64, f64, f64)>,
    ds_count: usize,
}

impl I1Rule {
    fn new(np: usize, nq: usize, ns: usize) -> Self {
        let (pw, qw) = (12.0, 4.5);
        let (hp, hq) = (2.0 * pw / np as f64, 2.0 * qw / nq as f64);
        let mut nodes = Vec::with_capacity(np * nq);
        for i in 0..np {
            let p = -pw + (i as f64 + 0.5) * hp;
            for j in 0..nq {
                let qq = -qw + (j as f64 + 0.5) * hq;
                let q = qq - 0.5 * p;
                let g = gamma_origin(Point::new(p, q, 1.0)) * hp * hq;
                if g > 1e-18 {
                    nodes.push((p, q, g));
                }
            }
        }
        Self { nodes, ds_count: ns }
    }

    /// `∫ Γ(z, ζ) F(ζ) dζ` over `t_z − s_max < τ < t_z`.
    fn integrate(&self, z: Point, s_max: f64, mut f: impl FnMut(Point) -> Option<f64>) -> Option<f64> {
        let ds = s_max / self.ds_count as f64;
        let mut total = 0.0;
        for k in 0..self.ds_count {
            let s = (k as f64 + 0.5) * ds;
            let (rs, s32) = (s.sqrt(), s * s.sqrt());
            let mut inner = 0.0;
            for &(p, q, g) in &self.nodes {
                // ζ = z ∘ w⁻¹ with w = ζ⁻¹ ∘ z = (√s p, s^{3/2} q, s).
                let zeta = compose(z, inverse(Point::new(rs * p, s32 * q, s)));
                inner += g * f(zeta)?;
            }
            total += inner * ds;
        }
        Some(total)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PoincareReport {
    pub theta: f64,
    pub r: f64,
    /// `∫_{ℬ⁻_{θr}} (w − I₀)₊²`.
    pub lhs: f64,
    /// `∫_{ℬ⁻_{r/θ}} |∂ₓw|²`.
    pub gradient_integral: f64,
    /// `θ²r² ∫ |∂ₓw|²`.
    pub rhs: f64,
    pub i0: f64,
    pub i1: Vec<(Point, f64)>,
    /// `lhs / rhs`; absent when the gradient integral vanishes.
    pub implied_c: Option<f64>,
}

/// `−L₀φ(ζ) = −φ₁(ξ∂_η − ∂_τ)φ₀ − φ₀∂_ξ²φ₁`, the weight of `w` in `I₁`.
fn i1_weight(cut: &Cutoff, zeta: Point) -> f64 {
    -cut.phi1(zeta) * cut.drift_phi0(zeta) - cut.phi0(zeta) * cut.dxx_phi1(zeta)
}

fn default_rule() -> &'static I1Rule {
    static R: OnceLock<I1Rule> = OnceLock::new();
    R.get_or_init(|| I1Rule::new(32, 32, 240))
}

/// Quadrature of `∫ −Γ(z, ζ) L₀φ(ζ) dζ`, which equals `φ(z)` exactly; for
/// `z ∈ ℬ⁻_{θr}` that is 1.
pub fn partition_of_unity(cut: &Cutoff, z: Point) -> f64 {
    let s_max = z.t + cut.r * cut.r / 6.0;
    if s_max <= 0.0 {
        return 0.0;
    }
    default_rule().integrate(z, s_max, |zeta| Some(i1_weight(cut, zeta))).unwrap_or(0.0)
}

/// `I₁(z)` for `z` in local coordinates (cut-off centered at the origin);
/// `w` is read at `center ∘ ζ`. The kernel integrates to `φ(z)` exactly, so
/// only `w − w(z)` goes through the quadrature.
pub fn i1(w: &dyn Sampler, center: Point, cut: &Cutoff, z: Point) -> Result<f64, ProbeError> {
    let (wz, rest) = i1_parts(w, center, cut, z)?;
    Ok(cut.phi(z) * wz + rest)
}

/// `(w(z), ∫ −Γ L₀φ (w − w(z)))`.
fn i1_parts(w: &dyn Sampler, center: Point, cut: &Cutoff, z: Point) -> Result<(f64, f64), ProbeError> {
    let s_max = z.t + cut.r * cut.r / 6.0;
    let at = compose(center, z);
    let wz = w.sample(at).ok_or(ProbeError::OutsideDomain { center, radius: cut.r, point: at })?;
    if s_max <= 0.0 {
        return Ok((wz, 0.0));
    }
    let mut outside = None;
    let value = default_rule().integrate(z, s_max, |zeta| {
        let l = i1_weight(cut, zeta);
        if l == 0.0 {
            return Some(0.0);
        }
        let p = compose(center, zeta);
        match w.sample(p) {
            Some(v) => Some(l * (v - wz)),
            None => {
                outside = Some(p);
                None
            }
        }
    });
    let rest = value.ok_or(ProbeError::OutsideDomain { center, radius: cut.r, point: outside.unwrap_or(center) })?;
    Ok((wz, rest))
}

/// Both sides of the Poincaré-type inequality around `center`.
///
/// `I₁ = w(z) + D(z)` on `ℬ⁻_{θr}`, where `D` varies on the scale of the
/// cut-off and not of the small ball. `D` is integrated at `z_lattice`
/// points per axis and taken from the nearest of them elsewhere; `I₀` is the
/// supremum of `w + D` over the same samples as the left-hand side.
pub fn poincare_check(w: &dyn Sampler, center: Point, r: f64, theta: f64, z_lattice: usize) -> Result<PoincareReport, ProbeError> {
    let cut = Cutoff::new(theta, r)?;
    let small = theta * r;
    // The center's own past limit is included so a one-point lattice still works.
    let coarse: Vec<Point> = std::iter::once(Point::new(0.0, 0.0, -1e-12)).chain(BallLattice::new(z_lattice.max(1)).mapped(Point::ORIGIN, 1.0)).collect();
    let mut d = Vec::with_capacity(coarse.len());
    let mut i1s = Vec::with_capacity(coarse.len());
    for &u in &coarse {
        let z = Point::new(small * u.x, small.powi(3) * u.y, small * small * u.t);
        let (wz, rest) = i1_parts(w, center, &cut, z)?;
        d.push(rest);
        i1s.push((z, wz + rest));
    }
    let nearest = |u: Point| {
        let dist = |c: &Point| (c.x - u.x).powi(2) + (c.y - u.y).powi(2) + (c.t - u.t).powi(2);
        (0..coarse.len()).min_by(|&a, &b| dist(&coarse[a]).total_cmp(&dist(&coarse[b]))).unwrap_or(0)
    };

    let lat = integral_lattice();
    let mut values = Vec::with_capacity(lat.points.len());
    let mut i0 = f64::NEG_INFINITY;
    for (&u, p) in lat.points.iter().zip(lat.mapped(center, small)) {
        let v = w.sample(p).ok_or(ProbeError::OutsideDomain { center, radius: small, point: p })?;
        i0 = i0.max(v + d[nearest(u)]);
        values.push(v);
    }
    let lhs = values.iter().map(|v| (v - i0).max(0.0).powi(2)).sum::<f64>() * lat.cell_volume * small.powi(6);

    let big = r / theta;
    let h = w.dx_step();
    let mut grad = 0.0;
    for p in lat.mapped(center, big) {
        let at = |dx: f64| w.sample(Point::new(p.x + dx, p.y, p.t));
        let (a, b) = match (at(h), at(-h)) {
            (Some(a), Some(b)) => (a, b),
            _ => return Err(ProbeError::OutsideDomain { center, radius: big, point: p }),
        };
        grad += ((a - b) / (2.0 * h)).powi(2);
    }
    grad *= lat.cell_volume * big.powi(6);
    let rhs = theta * theta * r * r * grad;
    Ok(PoincareReport { theta, r, lhs, gradient_integral: grad, rhs, i0, i1: i1s, implied_c: (rhs > 0.0).then(|| lhs / rhs) })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct HolderFit {
    /// `None` when every oscillation is below the noise floor.
    pub alpha: Option<f64>,
    pub intercept: f64,
    /// RMS residual of the log-log fit.
    pub residual: f64,
    pub radii: Vec<f64>,
    pub oscillations: Vec<f64>,
    /// `sup |u(z) − u(center)| / d(center, z)^α̂` over the largest ball.
    pub pointwise: Option<f64>,
}

/// Least-squares slope of `log osc(r)` against `log r`.
pub fn holder_fit(u: &dyn Sampler, center: Point, radii: &[f64]) -> Result<HolderFit, ProbeError> {
    if radii.len() < 4 {
        return Err(ProbeError::TooFewRadii(radii.len()));
    }
    let osc = radii.iter().map(|&r| oscillation(u, center, r)).collect::<Result<Vec<_>, _>>()?;
    let scale = u.sample(center).map_or(1.0, |v| v.abs().max(1.0));
    let pairs: Vec<(f64, f64)> = radii.iter().zip(&osc).filter(|(_, o)| **o > 1e-13 * scale).map(|(r, o)| (r.ln(), o.ln())).collect();
    if pairs.len() < 2 {
        return Ok(HolderFit { alpha: None, intercept: 0.0, residual: 0.0, radii: radii.to_vec(), oscillations: osc, pointwise: None });
    }
    let n = pairs.len() as f64;
    let mx = pairs.iter().map(|p| p.0).sum::<f64>() / n;
    let my = pairs.iter().map(|p| p.1).sum::<f64>() / n;
    let sxx: f64 = pairs.iter().map(|p| (p.0 - mx).powi(2)).sum();
    let sxy: f64 = pairs.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let alpha = sxy / sxx;
    let intercept = my - alpha * mx;
    let residual = (pairs.iter().map(|p| (p.1 - intercept - alpha * p.0).powi(2)).sum::<f64>() / n).sqrt();

    let rmax = radii.iter().copied().fold(0.0, f64::max);
    let u0 = u.sample(center);
    let mut pointwise = None;
    if let Some(u0) = u0 {
        let mut sup = 0.0f64;
        sample_all(u, osc_lattice(), center, rmax, |p, v| {
            let d = distance(center, p);
            if d > 0.0 {
                sup = sup.max((v - u0).abs() / d.powf(alpha));
            }
        })?;
        pointwise = Some(sup);
    }
    Ok(HolderFit { alpha: Some(alpha), intercept, residual, radii: radii.to_vec(), oscillations: osc, pointwise })
}

/// Monte-Carlo volume of `ℬ⁻_1(0)` from the bounding box `[−1,1]² × [−1,0]`.
pub fn past_ball_volume_mc(samples: usize, seed: u64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut hits = 0usize;
    for _ in 0..samples {
        let p = Point::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), rng.random_range(-1.0..0.0));
        if group_norm(p) <= 1.0 {
            hits += 1;
        }
    }
    4.0 * hits as f64 / samples as f64
}

/// `u ∘ δ_μ`, for checking that fitted exponents are scale-free.
pub struct Dilated<'a> {
    pub inner: &'a dyn Sampler,
    pub mu: f64,
}

impl Sampler for Dilated<'_> {
    fn sample(&self, p: Point) -> Option<f64> {
        self.inner.sample(dilate(self.mu, p).ok()?)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RadiusRow {
    pub r: f64,
    pub osc: f64,
    pub ratio: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ProbeReport {
    pub center: Point,
    pub theta: f64,
    pub rows: Vec<RadiusRow>,
    /// Empirical `h₂`: the largest ratio.
    pub max_ratio: f64,
    pub moser: Vec<MoserRatio>,
    pub holder: Option<HolderFit>,
    pub level_sets: Vec<LevelSetRow>,
    pub poincare: Option<PoincareReport>,
    pub warnings: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LevelSetRow {
    pub h: f64,
    /// `(t, fraction)` over the cube `K_{βr}` below the center.
    pub fractions: Vec<(f64, f64)>,
}

/// Oscillations, decay ratios, Moser ratios, the Hölder fit and level-set
/// fractions around `center`.
pub fn probe(traj: &Trajectory, center: Point, cfg: &ProbeConfig) -> Result<ProbeReport, ProbeError> {
    let g = traj.grid;
    cfg.check(Some(0.5 * (g.x_range.1 - g.x_range.0)))?;
    let mut warnings = Vec::new();
    let ratios = oscillation_decay(traj, center, cfg)?;
    let mut rows = Vec::new();
    for (&r, &ratio) in cfg.radii.iter().zip(&ratios) {
        rows.push(RadiusRow { r, osc: oscillation(traj, center, r)?, ratio });
    }
    let moser = cfg.radii.iter().map(|&r| moser_ratio(traj, center, r, cfg.p)).collect::<Result<Vec<_>, _>>()?;
    if moser.iter().any(|m| m.clipped > 0) {
        warnings.push("negative samples clipped in Moser ratios".to_string());
    }
    let holder = if cfg.radii.len() >= 4 { Some(holder_fit(traj, center, &cfg.radii)?) } else { None };
    if holder.is_none() {
        warnings.push("fewer than 4 radii: no Hölder fit".to_string());
    }
    let cube = CubeSpec::past(center, cfg.beta * cfg.radii[0]).map_err(|e| ProbeError::Config(e.to_string()))?;
    let level_sets = cfg
        .h_levels
        .iter()
        .map(|&h| LevelSetRow {
            h,
            fractions: level_set_fractions(traj, &cube, h).into_iter().filter(|(t, _)| *t > center.t - cfg.alpha * cfg.radii[0].powi(2)).collect(),
        })
        .collect();
    let poincare = match &cfg.poincare {
        Some(pc) => {
            let w = log_transform(traj, pc.h);
            Some(poincare_check(&Smooth(&w), center, pc.r, pc.theta, pc.z_lattice)?)
        }
        None => None,
    };
    let max_ratio = ratios.iter().copied().fold(0.0, f64::max);
    Ok(ProbeReport { center, theta: cfg.theta, rows, max_ratio, moser, holder, level_sets, poincare, warnings })
}

/// `w = ln⁺(h/(u + h^{9/8}))` frame by frame; `u` is clipped at 0 first.
pub fn log_transform(traj: &Trajectory, h: f64) -> Trajectory {
    let floor = h.powf(1.125);
    let frames = traj
        .frames
        .iter()
        .map(|f| {
            let mut g = f.clone();
            for v in &mut g.values {
                *v = (h / (v.max(0.0) + floor)).ln().max(0.0);
            }
            g
        })
        .collect();
    Trajectory::new(traj.grid, frames)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::field::Grid;
    use crate::geometry::BallSpec;

    fn affine() -> FnSampler<impl Fn(Point) -> f64 + Sync> {
        FnSampler(|p: Point| 2.0 * p.x + 1.0)
    }

    #[test]
    fn lattice_lies_in_unit_past_ball() {
        let l = BallLattice::new(8);
        let ball = BallSpec::past(Point::ORIGIN, 1.0).unwrap();
        assert!(l.points.iter().all(|p| ball.contains(*p)));
        let c = Point::new(0.3, -0.2, 1.0);
        assert!(l.mapped(c, 0.25).all(|p| BallSpec::past(c, 0.25).unwrap().contains(p)));
    }

    #[test]
    fn lattice_volume_matches_monte_carlo() {
        let mc = past_ball_volume_mc(400_000, 42);
        assert!((integral_lattice().volume() - mc).abs() / mc < 0.02, "{} vs {mc}", integral_lattice().volume());
    }

    #[test]
    fn oscillation_examples() {
        let c = FnSampler(|_| 3.0);
        assert_eq!(oscillation(&c, Point::ORIGIN, 0.3).unwrap(), 0.0);
        let x = FnSampler(|p: Point| p.x);
        for r in [0.1, 0.4] {
            let o = oscillation(&x, Point::ORIGIN, r).unwrap();
            assert!((o - 2.0 * r).abs() <= 2.0 * r / 16.0, "{o}");
        }
        let ratios = oscillation_decay(&affine(), Point::new(0.1, 0.0, 0.5), &ProbeConfig::default()).unwrap();
        for q in ratios {
            assert!((q - 0.125).abs() < 1e-12);
        }
    }

    #[test]
    fn oscillation_is_nested() {
        let u = FnSampler(|p: Point| (5.0 * p.x).sin() + (40.0 * p.y).cos() * p.t + p.x * p.x * 3.0);
        let c = Point::new(0.2, 0.1, 0.7);
        for r in [0.4, 0.2, 0.1] {
            assert!(oscillation(&u, c, r / 8.0).unwrap() <= oscillation(&u, c, r).unwrap());
            assert!(oscillation(&u, c, r / 2.0).unwrap() <= oscillation(&u, c, r).unwrap());
        }
    }

    #[test]
    fn outside_domain_is_reported() {
        let g = Grid::new((-1.0, 1.0), (-1.0, 1.0), 8, 8, 0.0, 1.0);
        let traj = Trajectory::from_fn(g, &[0.0, 1.0], |p| p.x);
        assert!(matches!(oscillation(&traj, Point::new(0.0, 0.0, 0.1), 0.4), Err(ProbeError::OutsideDomain { .. })));
        assert!(oscillation(&traj, Point::new(0.0, 0.0, 0.9), 0.4).is_ok());
    }

    #[test]
    fn moser_ratio_of_one_is_geometric() {
        let one = FnSampler(|_| 1.0);
        let mc = past_ball_volume_mc(400_000, 7);
        let m: Vec<f64> = [0.1, 0.2, 0.4].iter().map(|&r| moser_ratio(&one, Point::new(0.0, 0.0, 1.0), r, 1.0).unwrap().ratio).collect();
        assert!((m[0] - m[2]).abs() < 1e-9 * m[0]);
        assert!((m[1] - 1.0 / mc).abs() * mc < 0.02);
        let two = moser_ratio(&one, Point::ORIGIN, 0.2, 2.0).unwrap();
        assert!((two.ratio - m[1]).abs() < 1e-9);
    }

    #[test]
    fn moser_clips_negative_values() {
        let u = FnSampler(|p: Point| p.x);
        let m = moser_ratio(&u, Point::ORIGIN, 0.2, 1.0).unwrap();
        assert!(m.clipped > 0 && m.ratio.is_finite());
        let neg = FnSampler(|_| -1.0);
        assert!(matches!(moser_ratio(&neg, Point::ORIGIN, 0.2, 1.0), Err(ProbeError::ZeroIntegral(_))));
    }

    #[test]
    fn level_sets() {
        let g = Grid::new((-1.0, 1.0), (-1.0, 1.0), 40, 40, 0.0, 1.0);
        let cube = CubeSpec::new(Point::new(0.0, 0.0, 0.5), 0.5).unwrap();
        let one = Field::from_fn(g, 0.5, |_| 1.0);
        assert_eq!(level_set_fraction(&one, &cube, 0.5), Some(1.0));
        let x = Field::from_fn(g, 0.5, |p| p.x);
        assert_eq!(level_set_fraction(&x, &cube, 0.0), Some(0.5));
        assert_eq!(level_set_fraction(&Field::from_fn(g, 0.9, |_| 1.0), &cube, 0.5), None);
    }

    #[test]
    fn cutoff_properties() {
        let cut = Cutoff::new(1.0 / 128.0, 1.0).unwrap();
        assert!(Cutoff::new(0.1, 1.0).is_err());
        let ball = BallSpec::past(Point::ORIGIN, cut.theta * cut.r).unwrap();
        for p in BallLattice::new(6).mapped(Point::ORIGIN, cut.theta) {
            assert!(ball.contains(p));
            assert_eq!(cut.phi(p), 1.0);
        }
        assert_eq!(cut.phi(Point::new(128.0, 0.0, -0.1)), 0.0);
        assert_eq!(cut.phi(Point::new(0.0, 200.0, -0.1)), 0.0);
        assert_eq!(cut.phi(Point::new(0.0, 0.0, -1.01)), 0.0);
        let mut last = 1.0;
        for k in 1..50 {
            let v = cut.phi(Point::new(0.0, 0.0, -k as f64 * 0.005));
            assert!(v <= last && (0.0..=1.0).contains(&v));
            last = v;
        }
        let mid = cut.phi(Point::new(0.0, 0.0, -0.1));
        assert!(mid > 0.0 && mid < 1.0);
    }

    #[test]
    fn chi_derivative_bound() {
        let cut = Cutoff::new(1.0 / 100.0, 0.7).unwrap();
        let bound = 2.0 / ((1.0 - cut.theta.powf(1.0 / 6.0)) * cut.r);
        for k in 0..=1000 {
            let (_, d, _) = cut.chi(k as f64 * 0.001);
            assert!(d <= 0.0 && -d <= bound);
        }
    }

    #[test]
    fn closed_form_drift_matches_differences() {
        let cut = Cutoff::new(1.0 / 128.0, 1.0).unwrap();
        let h = 1e-6;
        for z in [Point::new(3.0, 20.0, -0.1), Point::new(-50.0, 70.0, -0.05), Point::new(10.0, -5.0, -0.15)] {
            let f = |s: f64| cut.phi0(Point::new(z.x, z.y + s * z.x, z.t - s));
            let fd = (f(h) - f(-h)) / (2.0 * h);
            assert!((fd - cut.drift_phi0(z)).abs() < 1e-5 * (1.0 + fd.abs()), "{fd} {}", cut.drift_phi0(z));
        }
    }

    #[test]
    fn sign_check_and_its_meta_test() {
        let cut = Cutoff::new(1.0 / 128.0, 1.0).unwrap();
        let good = cutoff_sign_check(&cut, 20_000, 42);
        assert!(good.passed(), "{good:?}");
        let bad = cutoff_sign_check(&cut.with_profile(Profile::Flipped), 20_000, 42);
        assert!(!bad.passed());
    }

    #[test]
    fn kernel_integrates_to_one() {
        let cut = Cutoff::new(1.0 / 128.0, 0.5).unwrap();
        for z in [Point::new(0.0, 0.0, -1e-9), Point::new(0.003, 0.0, -1e-5)] {
            let v = partition_of_unity(&cut, z);
            assert!((v - 1.0).abs() < 5e-4, "{v}");
        }
    }

    #[test]
    fn i1_of_affine_time_profile() {
        // For w = t the representation gives I₁(z) = t_z − ∫Γ φ (the L₀w = −1 term),
        // so I₁ < w(z) and the gap is at most the support length r²/6.
        let cut = Cutoff::new(1.0 / 128.0, 0.5).unwrap();
        let w = FnSampler(|p: Point| p.t);
        let c = Point::new(0.0, 0.0, 1.0);
        let v = i1(&w, c, &cut, Point::new(0.0, 0.0, -1e-9)).unwrap();
        assert!(v < 1.0 && v > 1.0 - 0.25 / 6.0, "{v}");
    }

    #[test]
    fn poincare_trivial_cases() {
        let c = Point::new(0.0, 0.0, 1.0);
        let zero = poincare_check(&FnSampler(|_| 0.0), c, 0.2, 1.0 / 100.0, 2).unwrap();
        assert_eq!((zero.lhs, zero.i0), (0.0, 0.0));
        assert_eq!(zero.implied_c, None);
        let konst = poincare_check(&FnSampler(|_| 2.5), c, 0.2, 1.0 / 100.0, 2).unwrap();
        assert!(konst.i0 >= 2.5 - 1e-3);
        assert!(konst.lhs < 1e-20);
    }

    #[test]
    fn holder_exponents() {
        let sqrt = FnSampler(|p: Point| p.x.abs().sqrt());
        let fit = holder_fit(&sqrt, Point::new(0.0, 0.0, 0.5), &[0.4, 0.2, 0.1, 0.05]).unwrap();
        assert!((fit.alpha.unwrap() - 0.5).abs() < 0.05, "{fit:?}");
        let lin = holder_fit(&affine(), Point::new(0.0, 0.0, 0.5), &[0.4, 0.2, 0.1, 0.05]).unwrap();
        assert!((lin.alpha.unwrap() - 1.0).abs() < 1e-9 && lin.residual < 1e-9);
        let flat = holder_fit(&FnSampler(|_| 1.0), Point::ORIGIN, &[0.4, 0.2, 0.1, 0.05]).unwrap();
        assert_eq!(flat.alpha, None);
        assert!(matches!(holder_fit(&sqrt, Point::ORIGIN, &[0.4, 0.2]), Err(ProbeError::TooFewRadii(2))));
    }

    #[test]
    fn holder_is_scale_free() {
        let u = FnSampler(|p: Point| (p.x + 0.3).abs().powf(0.7) + 0.1 * p.t);
        let radii = [0.4, 0.2, 0.1, 0.05];
        let c = Point::new(-0.3, 0.0, 0.5);
        let a = holder_fit(&u, c, &radii).unwrap();
        let mu = 2.0;
        let d = Dilated { inner: &u, mu };
        let dc = dilate(1.0 / mu, c).unwrap();
        let dr: Vec<f64> = radii.iter().map(|r| r / mu).collect();
        let b = holder_fit(&d, dc, &dr).unwrap();
        assert!((a.alpha.unwrap() - b.alpha.unwrap()).abs() <= a.residual.max(1e-9), "{a:?} {b:?}");
    }

    #[test]
    fn config_validation() {
        let mut cfg = ProbeConfig::default();
        assert!(cfg.check(Some(2.0)).is_ok());
        assert!(cfg.check(Some(1.0)).is_err());
        cfg.radii = vec![0.1, 0.2];
        assert!(cfg.check(None).is_err());
        cfg = ProbeConfig { theta: 1.5, ..ProbeConfig::default() };
        assert!(cfg.check(None).is_err());
        assert!(ProbeConfig::default().check_cutoff().is_err());
        assert!(ProbeConfig { theta: 1.0 / 128.0, ..ProbeConfig::default() }.check_cutoff().is_ok());
    }

    #[test]
    fn poincare_section_validated() {
        let mut cfg = ProbeConfig { poincare: Some(PoincareConfig { theta: 0.125, r: 0.01, h: 0.4, z_lattice: 3 }), ..ProbeConfig::default() };
        assert!(cfg.check(None).is_err());
        cfg.poincare = Some(PoincareConfig { theta: 1.0 / 128.0, r: 0.01, h: 0.4, z_lattice: 3 });
        assert!(cfg.check(None).is_ok());
    }

    #[test]
    fn log_transform_levels() {
        let g = Grid::new((-1.0, 1.0), (-1.0, 1.0), 4, 4, 0.0, 1.0);
        let t = Trajectory::from_fn(g, &[0.0], |p| if p.x < 0.0 { 0.0 } else { 5.0 });
        let h: f64 = 0.25;
        let w = log_transform(&t, h);
        let top = -(h.ln()) / 8.0;
        assert!((w.frames[0].get(0, 0) - top).abs() < 1e-15);
        assert_eq!(w.frames[0].get(3, 0), 0.0);
    }
}
