//! Explicit finite differences for `∂ₜu = ∂ₓ(a∂ₓu) + b₀∂ₓu + b∂_y u` on a
//! box with Dirichlet data in `x` and Dirichlet or periodic data in `y`.
//!
//! Update per cell:
//!
//! ```text
//! uⁿ⁺¹ = uⁿ + dt·[ (F_{i+½} − F_{i−½})/dx + b₀·Dₓu + b·D_y^up u ]
//! F_{i+½} = a_{i+½}(u_{i+1} − u_i)/dx,   a_{i+½} = harmonic mean
//! ```
//!
//! `Dₓ` is centered unless the cell Péclet test `|b₀|dx ≤ 2·a_face` fails, in
//! which case it is upwinded. `D_y^up` follows the characteristic of
//! `u_t = b u_y`: forward difference for `b > 0`, backward for `b < 0`.

use rayon::prelude::*;
use thiserror::Error;

use crate::dsl::{parse, CoefficientSet};
use crate::field::{Field, Grid, PointFunction, Trajectory};
use crate::geometry::Point;

pub const CFL_SAFETY: f64 = 0.9;
/// Aborts when `max |u|` exceeds this multiple of the data scale.
pub const GROWTH_LIMIT: f64 = 10.0;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SolverError {
    #[error("invalid grid: {0}")]
    InvalidGrid(String),
    #[error("requested dt {dt:.3e} exceeds the monotone stability bound {limit:.3e}")]
    DtAboveCfl { dt: f64, limit: f64 },
    #[error("coefficient evaluation failed at t = {t}: {message}")]
    Coefficient { t: f64, message: String },
    #[error("data evaluation failed at t = {t}: {message}")]
    Data { t: f64, message: String },
    #[error("non-finite value at t = {t} in cell ({i}, {j})")]
    NonFinite { t: f64, i: usize, j: usize },
    #[error("instability at t = {t}: max |u| = {max:.3e} exceeds {limit:.3e}")]
    Unstable { t: f64, max: f64, limit: f64 },
    #[error("test function does not vanish on the boundary ring: |phi| = {value:.3e} at {point}")]
    SupportViolation { value: f64, point: Point },
    #[error("{0}")]
    Unsupported(String),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CoeffValues {
    pub a: f64,
    pub b0: f64,
    pub b: f64,
}

/// Anything that supplies `(a, b₀, b)` pointwise.
pub trait Coefficients: Sync {
    fn eval(&self, p: Point) -> Result<CoeffValues, String>;

    fn time_dependent(&self) -> bool {
        true
    }
}

impl Coefficients for CoefficientSet {
    fn eval(&self, p: Point) -> Result<CoeffValues, String> {
        let e = |r: Result<f64, crate::dsl::EvalError>| r.map_err(|e| e.to_string());
        Ok(CoeffValues { a: e(self.a.eval(p))?, b0: e(self.b0.eval(p))?, b: e(self.b.eval(p))? })
    }

    fn time_dependent(&self) -> bool {
        CoefficientSet::time_dependent(self)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub enum EquationClass {
    L0,
    L1,
    L2,
    #[serde(rename = "L")]
    General,
}

impl EquationClass {
    pub fn name(self) -> &'static str {
        match self {
            EquationClass::L0 => "L0",
            EquationClass::L1 => "L1",
            EquationClass::L2 => "L2",
            EquationClass::General => "L",
        }
    }

    /// `L0`: `a = 1, b₀ = 0, b = x`; `L1`: `b₀ = 0, b = x`; `L2`: `b = x`.
    pub fn check(self, cs: &CoefficientSet) -> Result<(), String> {
        let is = |e: &crate::dsl::Expr, src: &str| *e == parse(src).expect("literal parses");
        let zero_b0 = cs.b0.constant_value() == Some(0.0);
        let b_is_x = is(&cs.b, "x");
        let ok = match self {
            EquationClass::L0 => cs.a.constant_value() == Some(1.0) && zero_b0 && b_is_x,
            EquationClass::L1 => zero_b0 && b_is_x,
            EquationClass::L2 => b_is_x,
            EquationClass::General => true,
        };
        if ok {
            Ok(())
        } else {
            let need = match self {
                EquationClass::L0 => "a = 1, b0 = 0, b = x",
                EquationClass::L1 => "b0 = 0, b = x",
                _ => "b = x",
            };
            Err(format!("equation class {} requires {need}", self.name()))
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum B0Scheme {
    /// Centered unless the cell Péclet test fails.
    Auto,
    Centered,
    Upwind,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Checkpoints {
    /// Every `n`-th step plus the final time.
    Every(usize),
    /// Exactly these times (clipped to the horizon); `t0` and `t1` are always recorded.
    Times(Vec<f64>),
}

#[derive(Clone, Copy)]
pub struct Problem<'a> {
    pub grid: Grid,
    pub coefficients: &'a dyn Coefficients,
    pub initial: &'a dyn PointFunction,
    /// Dirichlet values, read at ghost-cell centers.
    pub boundary: &'a dyn PointFunction,
    pub periodic_y: bool,
    pub b0_scheme: B0Scheme,
}

impl<'a> Problem<'a> {
    pub fn new(grid: Grid, coefficients: &'a dyn Coefficients, initial: &'a dyn PointFunction, boundary: &'a dyn PointFunction) -> Self {
        Self { grid, coefficients, initial, boundary, periodic_y: false, b0_scheme: B0Scheme::Auto }
    }

    pub fn with_grid(&self, grid: Grid) -> Self {
        Self { grid, ..*self }
    }
}

/// Sup norms of the coefficients over a sample set.
#[derive(Debug, Clone, Copy, PartialEq, Default, serde::Serialize)]
pub struct CoefficientBounds {
    pub sup_a: f64,
    pub inf_a: f64,
    pub sup_abs_b0: f64,
    pub sup_abs_b: f64,
}

impl CoefficientBounds {
    fn observe(&mut self, c: CoeffValues) {
        self.sup_a = self.sup_a.max(c.a);
        self.inf_a = self.inf_a.min(c.a);
        self.sup_abs_b0 = self.sup_abs_b0.max(c.b0.abs());
        self.sup_abs_b = self.sup_abs_b.max(c.b.abs());
    }

    /// Samples cell centers and x-ghost centers at nine time levels (one when
    /// the coefficients do not depend on time).
    pub fn sample(grid: &Grid, cs: &dyn Coefficients) -> Result<Self, SolverError> {
        let mut out = Self { inf_a: f64::INFINITY, ..Default::default() };
        let levels = if cs.time_dependent() { 8 } else { 0 };
        for k in 0..=levels {
            let t = grid.t0 + (grid.t1 - grid.t0) * k as f64 / 8.0;
            for i in -1..=grid.nx as isize {
                for j in 0..grid.ny as isize {
                    let p = Point::new(grid.xc(i), grid.yc(j), t);
                    let c = cs.eval(p).map_err(|message| SolverError::Coefficient { t, message })?;
                    out.observe(c);
                }
            }
        }
        Ok(out)
    }
}

/// `safety · min(dx²/(2 sup a), dy/sup|b|, dx/sup|b₀|)`, sups over the
/// supplied bounds; a vanishing sup drops its term.
pub fn cfl_dt(grid: &Grid, bounds: &CoefficientBounds) -> f64 {
    let (dx, dy) = (grid.dx(), grid.dy());
    let mut m = dx * dx / (2.0 * bounds.sup_a);
    if bounds.sup_abs_b > 0.0 {
        m = m.min(dy / bounds.sup_abs_b);
    }
    if bounds.sup_abs_b0 > 0.0 {
        m = m.min(dx / bounds.sup_abs_b0);
    }
    CFL_SAFETY * m
}

/// `safety / (2 sup a/dx² + sup|b|/dy + sup|b₀|/dx)`: keeps every stencil
/// weight nonnegative, so the explicit update is monotone. Never larger than
/// [`cfl_dt`].
pub fn stable_dt(grid: &Grid, bounds: &CoefficientBounds) -> f64 {
    let (dx, dy) = (grid.dx(), grid.dy());
    CFL_SAFETY / (2.0 * bounds.sup_a / (dx * dx) + bounds.sup_abs_b / dy + bounds.sup_abs_b0 / dx)
}

/// Coefficients laid out for one step.
struct Stencil {
    /// Face diffusivities, `(nx + 1) × ny`, face `i` sits left of cell `i`.
    a_face: Vec<f64>,
    b0: Vec<f64>,
    b: Vec<f64>,
    /// Cells where `b₀∂ₓ` is upwinded.
    upwind: Vec<bool>,
    upwind_count: usize,
}

fn harmonic(a: f64, b: f64) -> f64 {
    2.0 * a * b / (a + b)
}

impl Stencil {
    fn build(grid: &Grid, cs: &dyn Coefficients, t: f64, scheme: B0Scheme) -> Result<Self, SolverError> {
        let (nx, ny) = (grid.nx, grid.ny);
        let dx = grid.dx();
        let err = |message| SolverError::Coefficient { t, message };
        // Columns -1..=nx, so the boundary faces see the ghost diffusivity.
        let cols: Vec<Vec<CoeffValues>> = (-1..=nx as isize)
            .into_par_iter()
            .map(|i| {
                (0..ny as isize)
                    .map(|j| {
                        let p = Point::new(grid.xc(i), grid.yc(j), t);
                        let c = cs.eval(p)?;
                        if !(c.a > 0.0) {
                            return Err(format!("a = {} <= 0 at {p}", c.a));
                        }
                        Ok(c)
                    })
                    .collect::<Result<Vec<_>, String>>()
            })
            .collect::<Result<_, String>>()
            .map_err(err)?;
        let mut a_face = vec![0.0; (nx + 1) * ny];
        for f in 0..=nx {
            for j in 0..ny {
                a_face[f * ny + j] = harmonic(cols[f][j].a, cols[f + 1][j].a);
            }
        }
        let mut b0 = vec![0.0; nx * ny];
        let mut b = vec![0.0; nx * ny];
        let mut upwind = vec![false; nx * ny];
        let mut upwind_count = 0;
        for i in 0..nx {
            for j in 0..ny {
                let c = cols[i + 1][j];
                let k = i * ny + j;
                b0[k] = c.b0;
                b[k] = c.b;
                let a_min = a_face[i * ny + j].min(a_face[(i + 1) * ny + j]);
                upwind[k] = match scheme {
                    B0Scheme::Centered => false,
                    B0Scheme::Upwind => c.b0 != 0.0,
                    B0Scheme::Auto => c.b0.abs() * dx > 2.0 * a_min,
                };
                upwind_count += usize::from(upwind[k]);
            }
        }
        Ok(Self { a_face, b0, b, upwind, upwind_count })
    }
}

/// Dirichlet ghost values at time `t`.
struct Ghosts {
    left: Vec<f64>,
    right: Vec<f64>,
    /// Empty when periodic in y.
    bottom: Vec<f64>,
    top: Vec<f64>,
}

impl Ghosts {
    fn build(grid: &Grid, data: &dyn PointFunction, t: f64, periodic_y: bool) -> Result<Self, SolverError> {
        let err = |message| SolverError::Data { t, message };
        let (nx, ny) = (grid.nx as isize, grid.ny as isize);
        let col = |i: isize| -> Result<Vec<f64>, SolverError> { (0..ny).map(|j| data.value(Point::new(grid.xc(i), grid.yc(j), t)).map_err(err)).collect() };
        let row = |j: isize| -> Result<Vec<f64>, SolverError> { (0..nx).map(|i| data.value(Point::new(grid.xc(i), grid.yc(j), t)).map_err(err)).collect() };
        let (bottom, top) = if periodic_y { (Vec::new(), Vec::new()) } else { (row(-1)?, row(ny)?) };
        Ok(Self { left: col(-1)?, right: col(nx)?, bottom, top })
    }

    fn max_abs(&self) -> f64 {
        [&self.left, &self.right, &self.bottom, &self.top].iter().flat_map(|v| v.iter()).fold(0.0, |m, v| m.max(v.abs()))
    }
}

fn step_with(u: &Field, st: &Stencil, gh: &Ghosts, dt: f64, periodic_y: bool) -> Field {
    let g = u.grid;
    let (nx, ny) = (g.nx, g.ny);
    let (dx, dy) = (g.dx(), g.dy());
    let (idx2, idx, idy) = (1.0 / (dx * dx), 1.0 / dx, 1.0 / dy);
    let v = &u.values;
    let mut out = vec![0.0; nx * ny];
    out.par_chunks_mut(ny).enumerate().for_each(|(i, row)| {
        for (j, slot) in row.iter_mut().enumerate() {
            let k = i * ny + j;
            let c = v[k];
            let w = if i > 0 { v[k - ny] } else { gh.left[j] };
            let e = if i + 1 < nx { v[k + ny] } else { gh.right[j] };
            let s = if j > 0 {
                v[k - 1]
            } else if periodic_y {
                v[k + ny - 1]
            } else {
                gh.bottom[i]
            };
            let n = if j + 1 < ny {
                v[k + 1]
            } else if periodic_y {
                v[k + 1 - ny]
            } else {
                gh.top[i]
            };
            let (aw, ae) = (st.a_face[i * ny + j], st.a_face[(i + 1) * ny + j]);
            let diffusion = (ae * (e - c) - aw * (c - w)) * idx2;
            let b0 = st.b0[k];
            let drift = if st.upwind[k] {
                if b0 > 0.0 {
                    b0 * (e - c) * idx
                } else {
                    b0 * (c - w) * idx
                }
            } else {
                b0 * (e - w) * 0.5 * idx
            };
            let b = st.b[k];
            let transport = if b > 0.0 { b * (n - c) * idy } else { b * (c - s) * idy };
            *slot = c + dt * (diffusion + drift + transport);
        }
    });
    Field { grid: g, t: u.t + dt, values: out }
}

/// One explicit step from `u` at time `u.t`.
pub fn step(u: &Field, problem: &Problem<'_>, dt: f64) -> Result<Field, SolverError> {
    let st = Stencil::build(&u.grid, problem.coefficients, u.t, problem.b0_scheme)?;
    let gh = Ghosts::build(&u.grid, problem.boundary, u.t, problem.periodic_y)?;
    Ok(step_with(u, &st, &gh, dt, problem.periodic_y))
}

/// `dy · Σ_j (F_right − F_left)`: the rate of change of `Σ u dx dy` due to
/// diffusive flux through the x-boundaries.
pub fn boundary_flux(u: &Field, problem: &Problem<'_>) -> Result<f64, SolverError> {
    let g = u.grid;
    let st = Stencil::build(&g, problem.coefficients, u.t, problem.b0_scheme)?;
    let gh = Ghosts::build(&g, problem.boundary, u.t, problem.periodic_y)?;
    let (nx, ny, dx) = (g.nx, g.ny, g.dx());
    let mut sum = 0.0;
    for j in 0..ny {
        let right = st.a_face[nx * ny + j] * (gh.right[j] - u.get(nx - 1, j)) / dx;
        let left = st.a_face[j] * (u.get(0, j) - gh.left[j]) / dx;
        sum += right - left;
    }
    Ok(sum * g.dy())
}

#[derive(Debug, Clone)]
pub struct Solution {
    pub trajectory: Trajectory,
    pub steps: usize,
    /// Largest step actually taken.
    pub dt: f64,
    pub stable_dt: f64,
    pub bounds: CoefficientBounds,
    /// Cells using the upwinded `b₀` stencil in the last step.
    pub upwind_cells: usize,
    pub warnings: Vec<String>,
}

fn schedule(grid: &Grid, dt_max: f64, checkpoints: &Checkpoints) -> Vec<(f64, bool)> {
    // (time after each step, record?) with the checkpoint times hit exactly.
    let span = grid.t1 - grid.t0;
    let mut out = Vec::new();
    match checkpoints {
        Checkpoints::Every(n) => {
            let steps = (span / dt_max).ceil().max(1.0) as usize;
            let n = (*n).max(1);
            for k in 1..=steps {
                let t = if k == steps { grid.t1 } else { grid.t0 + span * k as f64 / steps as f64 };
                out.push((t, k % n == 0 || k == steps));
            }
        }
        Checkpoints::Times(times) => {
            let mut targets: Vec<f64> = times.iter().copied().filter(|&t| t > grid.t0 && t < grid.t1).collect();
            targets.push(grid.t1);
            targets.sort_by(f64::total_cmp);
            targets.dedup();
            let mut from = grid.t0;
            for to in targets {
                let steps = ((to - from) / dt_max).ceil().max(1.0) as usize;
                for k in 1..=steps {
                    let t = if k == steps { to } else { from + (to - from) * k as f64 / steps as f64 };
                    out.push((t, k == steps));
                }
                from = to;
            }
        }
    }
    out
}

/// Marches from `t0` to `t1`, recording fields at the checkpoints.
pub fn solve(problem: &Problem<'_>, checkpoints: &Checkpoints) -> Result<Solution, SolverError> {
    let grid = problem.grid;
    grid.check().map_err(SolverError::InvalidGrid)?;
    let mut warnings = Vec::new();
    if let Some(w) = grid.anisotropy_advisory() {
        log::warn!("{w}");
        warnings.push(w);
    }
    let bounds = CoefficientBounds::sample(&grid, problem.coefficients)?;
    if !(bounds.inf_a > 0.0) {
        return Err(SolverError::Unsupported(format!("inf a = {} must be positive", bounds.inf_a)));
    }
    let limit = stable_dt(&grid, &bounds);
    let dt_max = match grid.dt {
        Some(dt) if dt > limit * (1.0 + 1e-12) => return Err(SolverError::DtAboveCfl { dt, limit }),
        Some(dt) => dt,
        None => limit,
    };

    let mut u = Field::sample(grid, grid.t0, problem.initial).map_err(|message| SolverError::Data { t: grid.t0, message })?;
    if let Some((i, j)) = u.first_non_finite() {
        return Err(SolverError::NonFinite { t: grid.t0, i, j });
    }
    let static_coeffs = !problem.coefficients.time_dependent();
    let static_data = !problem.boundary.time_dependent();
    let mut stencil = Stencil::build(&grid, problem.coefficients, grid.t0, problem.b0_scheme)?;
    let mut ghosts = Ghosts::build(&grid, problem.boundary, grid.t0, problem.periodic_y)?;
    let mut scale = u.max_abs().max(ghosts.max_abs());

    let mut frames = vec![u.clone()];
    let plan = schedule(&grid, dt_max, checkpoints);
    let mut dt_used = 0.0f64;
    for &(t_next, record) in &plan {
        let dt = t_next - u.t;
        dt_used = dt_used.max(dt);
        if !static_coeffs {
            stencil = Stencil::build(&grid, problem.coefficients, u.t, problem.b0_scheme)?;
        }
        if !static_data {
            ghosts = Ghosts::build(&grid, problem.boundary, u.t, problem.periodic_y)?;
            scale = scale.max(ghosts.max_abs());
        }
        let mut next = step_with(&u, &stencil, &ghosts, dt, problem.periodic_y);
        next.t = t_next;
        if let Some((i, j)) = next.first_non_finite() {
            return Err(SolverError::NonFinite { t: t_next, i, j });
        }
        let m = next.max_abs();
        let cap = GROWTH_LIMIT * scale.max(f64::MIN_POSITIVE);
        if m > cap {
            return Err(SolverError::Unstable { t: t_next, max: m, limit: cap });
        }
        if record {
            frames.push(next.clone());
        }
        u = next;
    }
    Ok(Solution {
        trajectory: Trajectory::new(grid, frames),
        steps: plan.len(),
        dt: dt_used,
        stable_dt: limit,
        bounds,
        upwind_cells: stencil.upwind_count,
        warnings,
    })
}

/// Quadrature of `∫ φ(b₀∂ₓ + b∂_y − ∂ₜ)u − a∂ₓφ∂ₓu` over the trajectory.
///
/// Each pair of consecutive frames contributes at its midpoint time: the time
/// derivative is the frame difference, spatial terms use the frame average,
/// `∂_y` is centered and the diffusive term uses the same harmonic face
/// coefficients as the scheme. `φ` must vanish (to `1e-12` of its maximum) on
/// the outer ring of cells and at the first and last frames.
pub fn weak_residual(traj: &Trajectory, cs: &dyn Coefficients, phi: &dyn PointFunction) -> Result<f64, SolverError> {
    let g = traj.grid;
    let (nx, ny) = (g.nx, g.ny);
    let (dx, dy) = (g.dx(), g.dy());
    let frames = &traj.frames;
    if frames.len() < 2 {
        return Ok(0.0);
    }
    let phi_at = |p: Point| phi.value(p).map_err(|message| SolverError::Data { t: p.t, message });

    // Support check on the boundary ring and at the time ends.
    let mut ring = Vec::new();
    for &t in &[frames[0].t, frames[frames.len() - 1].t] {
        for i in 0..nx {
            for j in 0..ny {
                ring.push(Point::new(g.xc(i as isize), g.yc(j as isize), t));
            }
        }
    }
    for f in frames {
        for i in 0..nx as isize {
            ring.push(Point::new(g.xc(i), g.yc(0), f.t));
            ring.push(Point::new(g.xc(i), g.yc(ny as isize - 1), f.t));
        }
        for j in 0..ny as isize {
            ring.push(Point::new(g.xc(0), g.yc(j), f.t));
            ring.push(Point::new(g.xc(nx as isize - 1), g.yc(j), f.t));
        }
    }
    let mut phi_max = 0.0f64;
    for w in frames.windows(2) {
        let tm = 0.5 * (w[0].t + w[1].t);
        for i in 0..nx as isize {
            for j in 0..ny as isize {
                phi_max = phi_max.max(phi_at(Point::new(g.xc(i), g.yc(j), tm))?.abs());
            }
        }
    }
    for p in ring {
        let v = phi_at(p)?;
        if v.abs() > 1e-12 * phi_max.max(f64::MIN_POSITIVE) {
            return Err(SolverError::SupportViolation { value: v.abs(), point: p });
        }
    }

    let mut total = 0.0;
    for w in frames.windows(2) {
        let (u0, u1) = (&w[0], &w[1]);
        let dt = u1.t - u0.t;
        let tm = 0.5 * (u0.t + u1.t);
        let st = Stencil::build(&g, cs, tm, B0Scheme::Centered)?;
        let avg = |i: usize, j: usize| 0.5 * (u0.get(i, j) + u1.get(i, j));
        let mut phis = vec![0.0; nx * ny];
        for i in 0..nx {
            for j in 0..ny {
                phis[i * ny + j] = phi_at(Point::new(g.xc(i as isize), g.yc(j as isize), tm))?;
            }
        }
        let mut slab = 0.0;
        for i in 0..nx {
            for j in 0..ny {
                let k = i * ny + j;
                let p = phis[k];
                if i + 1 < nx {
                    // −a ∂ₓφ ∂ₓu at the face between i and i+1.
                    let dphi = (phis[k + ny] - p) / dx;
                    let du = (avg(i + 1, j) - avg(i, j)) / dx;
                    slab -= st.a_face[(i + 1) * ny + j] * dphi * du;
                }
                if p == 0.0 || i == 0 || j == 0 || i + 1 == nx || j + 1 == ny {
                    continue;
                }
                let ux = (avg(i + 1, j) - avg(i - 1, j)) / (2.0 * dx);
                let uy = (avg(i, j + 1) - avg(i, j - 1)) / (2.0 * dy);
                let ut = (u1.get(i, j) - u0.get(i, j)) / dt;
                slab += p * (st.b0[k] * ux + st.b[k] * uy - ut);
            }
        }
        total += slab * dx * dy * dt;
    }
    Ok(total)
}

#[derive(Debug, Clone, PartialEq, serde::Serialize)]
pub struct ConvergenceRow {
    pub nx: usize,
    pub ny: usize,
    pub dx: f64,
    pub dt: f64,
    pub max_error: f64,
    pub l2_error: f64,
    /// `log₂` of the error ratio to the previous (coarser) row.
    pub order_max: Option<f64>,
    pub order_l2: Option<f64>,
}

pub enum Reference<'a> {
    /// Exact solution evaluated at the final time.
    Exact(&'a dyn PointFunction),
    /// One further dyadic refinement, restricted by interpolation.
    FineGrid,
}

/// Solves at `levels` refinements of `problem.grid`, halving `dx` and
/// dividing `dy` by `y_ratio` per level (the time step follows the stability
/// bound), and compares final fields with `reference`.
///
/// With `y_ratio = 2` the first-order upwind `y` error dominates; `y_ratio = 4`
/// keeps `dy ∝ dx²` and lets the second-order `x` terms show.
pub fn convergence_study(problem: &Problem<'_>, levels: usize, y_ratio: usize, reference: Reference<'_>) -> Result<Vec<ConvergenceRow>, SolverError> {
    let last_only = Checkpoints::Times(Vec::new());
    let level_grid = |k: usize| Grid { nx: problem.grid.nx << k, ny: problem.grid.ny * y_ratio.pow(k as u32), dt: None, ..problem.grid };
    let fine = match reference {
        Reference::FineGrid => {
            let g = level_grid(levels);
            Some(solve(&problem.with_grid(g), &last_only)?.trajectory.frames.pop().expect("final frame"))
        }
        Reference::Exact(_) => None,
    };
    let mut rows: Vec<ConvergenceRow> = Vec::with_capacity(levels);
    for level in 0..levels {
        let g = level_grid(level);
        let sol = solve(&problem.with_grid(g), &last_only)?;
        let u = sol.trajectory.last().expect("final frame");
        let (max_error, l2_error) = match (&reference, &fine) {
            (Reference::Exact(f), _) => {
                let mut failure = None;
                let errs = u.errors_against(|p| {
                    f.value(p).unwrap_or_else(|e| {
                        failure.get_or_insert(e);
                        f64::NAN
                    })
                });
                if let Some(message) = failure {
                    return Err(SolverError::Data { t: u.t, message });
                }
                errs
            }
            (_, Some(fine)) => u.errors_against(|p| fine.interpolate(p.x, p.y).unwrap_or(f64::NAN)),
            _ => unreachable!("fine reference computed above"),
        };
        let order = |prev: f64, cur: f64| (prev / cur).log2();
        let prev = rows.last();
        rows.push(ConvergenceRow {
            nx: g.nx,
            ny: g.ny,
            dx: g.dx(),
            dt: sol.dt,
            max_error,
            l2_error,
            order_max: prev.map(|r| order(r.max_error, max_error)),
            order_l2: prev.map(|r| order(r.l2_error, l2_error)),
        });
    }
    Ok(rows)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dsl::parse;
    use crate::field::FnData;
    use crate::gamma::gamma_origin;

    fn unit_grid(n: usize) -> Grid {
        Grid::new((-1.0, 1.0), (-1.0, 1.0), n, n, 0.0, 0.01)
    }

    #[test]
    fn cfl_formula_example() {
        let g = Grid::new((-1.0, 1.0), (-1.0, 1.0), 200, 200, 0.0, 1.0);
        let cs = CoefficientSet::canonical(0.5);
        let mut b = CoefficientBounds::sample(&g, &cs).unwrap();
        // Sup over the cell centers misses |x| = 1 by a half cell.
        assert!((b.sup_abs_b - 1.005).abs() < 1e-12);
        b.sup_abs_b = 1.0;
        assert!((cfl_dt(&g, &b) - 4.5e-5).abs() < 1e-18);
        let fine = g.refined(2);
        let ratio = cfl_dt(&Grid { ny: 200, ..fine }, &b) / cfl_dt(&g, &b);
        assert!((ratio - 0.25).abs() < 1e-12);
        assert!(stable_dt(&g, &b) <= cfl_dt(&g, &b));
    }

    #[test]
    fn transport_bound_scales_with_range() {
        let b1 = CoefficientBounds { sup_a: 1e-9, inf_a: 1e-9, sup_abs_b0: 0.0, sup_abs_b: 1.0 };
        let b2 = CoefficientBounds { sup_abs_b: 2.0, ..b1 };
        let g = unit_grid(100);
        assert!((cfl_dt(&g, &b1) / cfl_dt(&g, &b2) - 2.0).abs() < 1e-12);
    }

    #[test]
    fn equation_classes() {
        assert!(EquationClass::L0.check(&CoefficientSet::canonical(0.5)).is_ok());
        let rough = CoefficientSet::parse("checkerboard(1,.1,.1,.1,.6,1.5)", "0", "x", 0.5).unwrap();
        assert!(EquationClass::L0.check(&rough).is_err());
        assert!(EquationClass::L1.check(&rough).is_ok());
        let drift = CoefficientSet::parse("1", "0.3", "x", 0.5).unwrap();
        assert!(EquationClass::L1.check(&drift).is_err());
        assert!(EquationClass::L2.check(&drift).is_ok());
        let general = CoefficientSet::parse("1", "0", "2*x", 0.5).unwrap();
        assert!(EquationClass::L2.check(&general).is_err());
        assert!(EquationClass::General.check(&general).is_ok());
    }

    #[test]
    fn constant_state_is_preserved() {
        let cs = CoefficientSet::parse("checkerboard(4,.1,.1,.1,.6,1.5)", "0.4*sin(y)", "x", 0.5).unwrap();
        let c = parse("2.5").unwrap();
        let mut problem = Problem::new(unit_grid(32), &cs, &c, &c);
        let sol = solve(&problem, &Checkpoints::Every(5)).unwrap();
        for f in &sol.trajectory.frames {
            assert!(f.values.iter().all(|&v| (v - 2.5).abs() < 1e-13));
        }
        problem.periodic_y = true;
        let sol = solve(&problem, &Checkpoints::Times(vec![0.005])).unwrap();
        assert_eq!(sol.trajectory.times(), vec![0.0, 0.005, 0.01]);
        assert!(sol.trajectory.last().unwrap().values.iter().all(|&v| (v - 2.5).abs() < 1e-13));
    }

    #[test]
    fn heat_mode_decays_at_symbol_rate() {
        // u = sin(kx) with a = 1: discrete symbol −(4/dx²)sin²(k dx/2) is
        // k²(1 + O(dx²)); one explicit step multiplies by 1 − dt k² + O(dt²).
        let cs = CoefficientSet::parse("1", "0", "0", 0.5).unwrap();
        let k = std::f64::consts::PI;
        let init = FnData(move |p: Point| (k * p.x).sin());
        let bc = FnData(move |p: Point| (k * p.x).sin() * (-k * k * p.t).exp());
        let g = Grid::new((-1.0, 1.0), (0.0, 1.0), 200, 4, 0.0, 1.0);
        let problem = Problem::new(g, &cs, &init, &bc);
        let u0 = Field::sample(g, 0.0, &init).unwrap();
        let dt = 2e-5;
        let u1 = step(&u0, &problem, dt).unwrap();
        let dx = g.dx();
        let symbol = 4.0 / (dx * dx) * (0.5 * k * dx).sin().powi(2);
        for i in [20, 50, 120] {
            let exact_discrete = u0.get(i, 1) * (1.0 - dt * symbol);
            assert!((u1.get(i, 1) - exact_discrete).abs() < 1e-13);
            let continuous = u0.get(i, 1) * (1.0 - dt * k * k);
            let bound = dt * k * k * (k * dx).powi(2) / 12.0 * 1.01;
            assert!((u1.get(i, 1) - continuous).abs() < bound);
        }
    }

    #[test]
    fn upwind_direction_mirrors_with_sign_of_b() {
        let g = Grid::new((0.0, 1.0), (-1.0, 1.0), 4, 40, 0.0, 1.0);
        let init = FnData(|p: Point| (-(p.y - 0.2).powi(2) * 20.0).exp());
        let mirrored = FnData(|p: Point| (-(-p.y - 0.2).powi(2) * 20.0).exp());
        let zero = parse("0").unwrap();
        let plus = CoefficientSet::parse("1", "0", "1", 0.5).unwrap();
        let minus = CoefficientSet::parse("1", "0", "-1", 0.5).unwrap();
        let u = Field::sample(g, 0.0, &init).unwrap();
        let m = Field::sample(g, 0.0, &mirrored).unwrap();
        let a = step(&u, &Problem::new(g, &plus, &zero, &zero), 1e-3).unwrap();
        let b = step(&m, &Problem::new(g, &minus, &zero, &zero), 1e-3).unwrap();
        for i in 0..4 {
            for j in 0..40 {
                assert!((a.get(i, j) - b.get(i, 39 - j)).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn mass_changes_by_boundary_flux_only() {
        let cs = CoefficientSet::parse("checkerboard(9,.125,.125,1,.6,1.5)", "0", "x", 0.5).unwrap();
        let init = FnData(|p: Point| (1.0 - p.x * p.x) * (2.0 + (3.0 * p.y).sin()) + 0.3);
        let zero = parse("0").unwrap();
        let g = Grid::new((-1.0, 1.0), (-1.0, 1.0), 32, 32, 0.0, 1.0);
        let mut problem = Problem::new(g, &cs, &init, &zero);
        problem.periodic_y = true;
        let b = CoefficientBounds::sample(&g, &cs).unwrap();
        let dt = stable_dt(&g, &b);
        let mut u = Field::sample(g, 0.0, &init).unwrap();
        for _ in 0..20 {
            let flux = boundary_flux(&u, &problem).unwrap();
            let next = step(&u, &problem, dt).unwrap();
            let change = next.mass() - u.mass();
            assert!((change - dt * flux).abs() <= 1e-12 * u.mass().abs(), "{change} vs {}", dt * flux);
            u = next;
        }
    }

    #[test]
    fn maximum_principle_with_rough_coefficients() {
        let cs = CoefficientSet::parse("checkerboard(5,.1,.1,.01,.6,1.5)", "1.8*sign(y)", "x", 0.5).unwrap();
        let init = FnData(|p: Point| if p.x.abs() < 0.3 && p.y.abs() < 0.3 { 1.0 } else { 0.0 });
        let zero = parse("0").unwrap();
        let g = Grid::new((-1.0, 1.0), (-1.0, 1.0), 24, 24, 0.0, 0.05);
        let problem = Problem::new(g, &cs, &init, &zero);
        let sol = solve(&problem, &Checkpoints::Every(1)).unwrap();
        for f in &sol.trajectory.frames {
            assert!(f.min() >= -1e-12);
            assert!(f.max() <= 1.0 + 1e-12);
        }
    }

    #[test]
    fn peclet_switch_engages() {
        let cs = CoefficientSet::parse("0.6", "1.9", "x", 0.5).unwrap();
        let zero = parse("0").unwrap();
        // |b0| dx = 1.9 > 2 a = 1.2 on the coarse grid only.
        let coarse = Grid::new((-2.0, 2.0), (-1.0, 1.0), 4, 4, 0.0, 0.01);
        let sol = solve(&Problem::new(coarse, &cs, &zero, &zero), &Checkpoints::Every(1)).unwrap();
        assert_eq!(sol.upwind_cells, 16);
        let fine = Grid { nx: 64, ..coarse };
        let sol = solve(&Problem::new(fine, &cs, &zero, &zero), &Checkpoints::Every(1)).unwrap();
        assert_eq!(sol.upwind_cells, 0);
    }

    #[test]
    fn rejects_oversized_dt_and_reports_blowup() {
        let cs = CoefficientSet::canonical(0.5);
        let zero = parse("0").unwrap();
        let g = Grid { dt: Some(1.0), ..unit_grid(16) };
        assert!(matches!(solve(&Problem::new(g, &cs, &zero, &zero), &Checkpoints::Every(1)), Err(SolverError::DtAboveCfl { .. })));
        // Stepping far past the bound by hand blows up a checkerboard mode.
        let init = FnData(|p: Point| if ((p.x * 8.0).floor() as i64) % 2 == 0 { 1.0 } else { -1.0 });
        let g = unit_grid(16);
        let problem = Problem::new(g, &cs, &init, &zero);
        let mut u = Field::sample(g, 0.0, &init).unwrap();
        for _ in 0..10 {
            u = step(&u, &problem, 0.1).unwrap();
        }
        assert!(u.max_abs() > 10.0);
    }

    #[test]
    fn nan_data_is_reported_with_time() {
        let cs = CoefficientSet::canonical(0.5);
        let init = FnData(|p: Point| if p.x > 0.5 { f64::NAN } else { 0.0 });
        let zero = parse("0").unwrap();
        let err = solve(&Problem::new(unit_grid(8), &cs, &init, &zero), &Checkpoints::Every(1)).unwrap_err();
        assert!(matches!(err, SolverError::NonFinite { t, .. } if t == 0.0));
    }

    fn gamma_problem_grid(n: usize) -> Grid {
        Grid::new((-3.0, 3.0), (-0.75, 0.75), n, 2 * n, 0.1, 0.2)
    }

    #[test]
    fn l0_tracks_fundamental_solution() {
        let cs = CoefficientSet::canonical(0.5);
        let exact = FnData(gamma_origin);
        let problem = Problem::new(gamma_problem_grid(48), &cs, &exact, &exact);
        let rows = convergence_study(&problem, 2, 2, Reference::Exact(&exact)).unwrap();
        assert!(rows[1].max_error < rows[0].max_error);
        // Peak of Γ at t = 0.2 is about 6.9.
        assert!(rows[1].max_error < 0.7, "{rows:?}");
    }

    #[test]
    fn deterministic_runs() {
        let cs = CoefficientSet::parse("checkerboard(2,.1,.1,.1,.6,1.5)", "0.2", "x", 0.5).unwrap();
        let init = parse("exp(-4*(x^2 + y^2))").unwrap();
        let zero = parse("0").unwrap();
        let p = Problem::new(unit_grid(20), &cs, &init, &zero);
        let a = solve(&p, &Checkpoints::Every(3)).unwrap();
        let b = solve(&p, &Checkpoints::Every(3)).unwrap();
        assert_eq!(a.trajectory, b.trajectory);
    }

    #[test]
    fn weak_residual_vanishing_phi_and_support() {
        let cs = CoefficientSet::canonical(0.5);
        let g = Grid::new((-1.0, 1.0), (-1.0, 1.0), 16, 16, 0.0, 0.1);
        let traj = Trajectory::from_fn(g, &[0.0, 0.05, 0.1], |p| p.x + p.y);
        let zero = parse("0").unwrap();
        assert_eq!(weak_residual(&traj, &cs, &zero).unwrap(), 0.0);
        let one = parse("1").unwrap();
        assert!(matches!(weak_residual(&traj, &cs, &one), Err(SolverError::SupportViolation { .. })));
    }

    #[test]
    fn weak_residual_of_exact_gamma_shrinks() {
        let cs = CoefficientSet::canonical(0.5);
        let phi = parse("step(0.64 - x^2)*(0.64 - x^2)^3 * step(0.04 - y^2)*(0.04 - y^2)^3 * step(0.0016 - (t - 0.2)^2)*(0.0016 - (t - 0.2)^2)^3").unwrap();
        let mut res = Vec::new();
        for n in [16usize, 32, 64] {
            let g = Grid::new((-1.0, 1.0), (-0.25, 0.25), n, n, 0.15, 0.25);
            let times: Vec<f64> = (0..=n).map(|k| 0.15 + 0.1 * k as f64 / n as f64).collect();
            let traj = Trajectory::from_fn(g, &times, gamma_origin);
            res.push(weak_residual(&traj, &cs, &phi).unwrap().abs());
        }
        assert!(res[1] < res[0] && res[2] < res[1], "{res:?}");
    }
}
