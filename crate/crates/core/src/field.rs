//! Cell-centered grids on boxes in `(x, y)`, single time levels and
//! trajectories of them.

use serde::{Deserialize, Serialize};

use crate::dsl::{Expr, Var};
use crate::geometry::Point;

/// Space-time data: initial values, boundary values, test functions.
pub trait PointFunction: Sync {
    fn value(&self, p: Point) -> Result<f64, String>;

    /// `false` lets callers evaluate once and reuse the values for all times.
    fn time_dependent(&self) -> bool {
        true
    }
}

impl PointFunction for Expr {
    fn value(&self, p: Point) -> Result<f64, String> {
        self.eval(p).map_err(|e| e.to_string())
    }

    fn time_dependent(&self) -> bool {
        self.depends_on(Var::T)
    }
}

/// Wraps a closure as a [`PointFunction`].
pub struct FnData<F>(pub F);

impl<F: Fn(Point) -> f64 + Sync> PointFunction for FnData<F> {
    fn value(&self, p: Point) -> Result<f64, String> {
        Ok((self.0)(p))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Grid {
    pub x_range: (f64, f64),
    pub y_range: (f64, f64),
    pub nx: usize,
    pub ny: usize,
    pub t0: f64,
    pub t1: f64,
    /// Upper bound on the time step; the stability bound is used when absent.
    #[serde(default)]
    pub dt: Option<f64>,
}

impl Grid {
    pub fn new(x_range: (f64, f64), y_range: (f64, f64), nx: usize, ny: usize, t0: f64, t1: f64) -> Self {
        Self { x_range, y_range, nx, ny, t0, t1, dt: None }
    }

    pub fn check(&self) -> Result<(), String> {
        if self.nx < 4 || self.ny < 4 {
            return Err(format!("need nx, ny >= 4, got {} x {}", self.nx, self.ny));
        }
        let ordered = |(a, b): (f64, f64)| a.is_finite() && b.is_finite() && a < b;
        if !ordered(self.x_range) || !ordered(self.y_range) {
            return Err("x and y ranges must be finite with lo < hi".into());
        }
        if !(self.t0.is_finite() && self.t1.is_finite() && self.t1 > self.t0) {
            return Err(format!("need t1 > t0, got [{}, {}]", self.t0, self.t1));
        }
        if let Some(dt) = self.dt {
            if !(dt > 0.0 && dt.is_finite()) {
                return Err(format!("dt must be positive, got {dt}"));
            }
        }
        Ok(())
    }

    /// Smallest group radius resolved by four cells in x and in y. A large
    /// mismatch means one direction is wasted when probing group balls.
    pub fn anisotropy_advisory(&self) -> Option<String> {
        let rx = 4.0 * self.dx();
        let ry = (4.0 * self.dy()).cbrt();
        let ratio = rx.max(ry) / rx.min(ry);
        (ratio > 4.0).then(|| format!("anisotropic resolution mismatch: x resolves radius {rx:.3e}, y resolves {ry:.3e}; dy ~ dx^3 balances them"))
    }

    pub fn dx(&self) -> f64 {
        (self.x_range.1 - self.x_range.0) / self.nx as f64
    }

    pub fn dy(&self) -> f64 {
        (self.y_range.1 - self.y_range.0) / self.ny as f64
    }

    pub fn cell_area(&self) -> f64 {
        self.dx() * self.dy()
    }

    /// Center of column `i`; valid for the ghost columns `-1` and `nx`.
    pub fn xc(&self, i: isize) -> f64 {
        self.x_range.0 + (i as f64 + 0.5) * self.dx()
    }

    pub fn yc(&self, j: isize) -> f64 {
        self.y_range.0 + (j as f64 + 0.5) * self.dy()
    }

    pub fn len(&self) -> usize {
        self.nx * self.ny
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Same box and horizon with `factor` times as many cells per axis.
    pub fn refined(&self, factor: usize) -> Self {
        Self { nx: self.nx * factor, ny: self.ny * factor, ..*self }
    }

    pub fn contains_xy(&self, x: f64, y: f64) -> bool {
        x >= self.x_range.0 && x <= self.x_range.1 && y >= self.y_range.0 && y <= self.y_range.1
    }
}

/// Cell-centered values at one time level, stored x-major: `values[i * ny + j]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Field {
    pub grid: Grid,
    pub t: f64,
    pub values: Vec<f64>,
}

impl Field {
    pub fn zeros(grid: Grid, t: f64) -> Self {
        Self { grid, t, values: vec![0.0; grid.len()] }
    }

    pub fn from_fn(grid: Grid, t: f64, f: impl Fn(Point) -> f64) -> Self {
        let mut values = Vec::with_capacity(grid.len());
        for i in 0..grid.nx as isize {
            for j in 0..grid.ny as isize {
                values.push(f(Point::new(grid.xc(i), grid.yc(j), t)));
            }
        }
        Self { grid, t, values }
    }

    pub fn sample(grid: Grid, t: f64, f: &dyn PointFunction) -> Result<Self, String> {
        let mut values = Vec::with_capacity(grid.len());
        for i in 0..grid.nx as isize {
            for j in 0..grid.ny as isize {
                values.push(f.value(Point::new(grid.xc(i), grid.yc(j), t))?);
            }
        }
        Ok(Self { grid, t, values })
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.values[i * self.grid.ny + j]
    }

    pub fn max_abs(&self) -> f64 {
        self.values.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    pub fn min(&self) -> f64 {
        self.values.iter().copied().fold(f64::INFINITY, f64::min)
    }

    pub fn max(&self) -> f64 {
        self.values.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }

    /// `Σ u dx dy`.
    pub fn mass(&self) -> f64 {
        self.values.iter().sum::<f64>() * self.grid.cell_area()
    }

    pub fn first_non_finite(&self) -> Option<(usize, usize)> {
        self.values.iter().position(|v| !v.is_finite()).map(|k| (k / self.grid.ny, k % self.grid.ny))
    }

    /// Bilinear interpolation between cell centers; constant extrapolation in
    /// the half cell next to the boundary, `None` outside the box.
    pub fn interpolate(&self, x: f64, y: f64) -> Option<f64> {
        let g = &self.grid;
        if !g.contains_xy(x, y) {
            return None;
        }
        let locate = |s: f64, lo: f64, h: f64, n: usize| {
            let u = ((s - lo) / h - 0.5).clamp(0.0, (n - 1) as f64);
            let k = (u.floor() as usize).min(n - 2);
            (k, u - k as f64)
        };
        let (i, fx) = locate(x, g.x_range.0, g.dx(), g.nx);
        let (j, fy) = locate(y, g.y_range.0, g.dy(), g.ny);
        let v00 = self.get(i, j);
        let v01 = self.get(i, j + 1);
        let v10 = self.get(i + 1, j);
        let v11 = self.get(i + 1, j + 1);
        Some((1.0 - fx) * ((1.0 - fy) * v00 + fy * v01) + fx * ((1.0 - fy) * v10 + fy * v11))
    }

    /// Catmull-Rom interpolation between cell centers, with indices clamped
    /// at the edges; `None` outside the box. Unlike the bilinear version it
    /// has a nonzero second derivative inside cells.
    pub fn interpolate_cubic(&self, x: f64, y: f64) -> Option<f64> {
        let g = &self.grid;
        if !g.contains_xy(x, y) {
            return None;
        }
        let locate = |s: f64, lo: f64, h: f64, n: usize| {
            let u = ((s - lo) / h - 0.5).clamp(0.0, (n - 1) as f64);
            let k = (u.floor() as usize).min(n - 2);
            let f = u - k as f64;
            let w = [
                0.5 * (-f * f * f + 2.0 * f * f - f),
                0.5 * (3.0 * f * f * f - 5.0 * f * f + 2.0),
                0.5 * (-3.0 * f * f * f + 4.0 * f * f + f),
                0.5 * (f * f * f - f * f),
            ];
            let idx = [k.saturating_sub(1), k, k + 1, (k + 2).min(n - 1)];
            (idx, w)
        };
        let (ix, wx) = locate(x, g.x_range.0, g.dx(), g.nx);
        let (iy, wy) = locate(y, g.y_range.0, g.dy(), g.ny);
        let mut v = 0.0;
        for a in 0..4 {
            let row: f64 = (0..4).map(|b| wy[b] * self.get(ix[a], iy[b])).sum();
            v += wx[a] * row;
        }
        Some(v)
    }

    /// Max-norm and discrete L² distance to `f` at the same time level.
    pub fn errors_against(&self, mut f: impl FnMut(Point) -> f64) -> (f64, f64) {
        let g = &self.grid;
        let (mut emax, mut e2) = (0.0f64, 0.0);
        for i in 0..g.nx {
            for j in 0..g.ny {
                let e = self.get(i, j) - f(Point::new(g.xc(i as isize), g.yc(j as isize), self.t));
                emax = emax.max(e.abs());
                e2 += e * e;
            }
        }
        (emax, (e2 * g.cell_area()).sqrt())
    }
}

/// Fields at increasing times on a common grid.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub grid: Grid,
    pub frames: Vec<Field>,
}

impl Trajectory {
    pub fn new(grid: Grid, frames: Vec<Field>) -> Self {
        Self { grid, frames }
    }

    /// Samples `f` on the grid at each of `times`.
    pub fn from_fn(grid: Grid, times: &[f64], f: impl Fn(Point) -> f64) -> Self {
        let frames = times.iter().map(|&t| Field::from_fn(grid, t, &f)).collect();
        Self { grid, frames }
    }

    pub fn times(&self) -> Vec<f64> {
        self.frames.iter().map(|f| f.t).collect()
    }

    pub fn last(&self) -> Option<&Field> {
        self.frames.last()
    }

    /// Linear in time between the bracketing frames, bilinear in space.
    pub fn interpolate(&self, p: Point) -> Option<f64> {
        self.interpolate_with(p, Field::interpolate)
    }

    /// Linear in time, Catmull-Rom in space.
    pub fn interpolate_cubic(&self, p: Point) -> Option<f64> {
        self.interpolate_with(p, Field::interpolate_cubic)
    }

    fn interpolate_with(&self, p: Point, space: fn(&Field, f64, f64) -> Option<f64>) -> Option<f64> {
        let first = self.frames.first()?;
        let last = self.frames.last()?;
        if p.t < first.t || p.t > last.t {
            return None;
        }
        let k = self.frames.partition_point(|f| f.t <= p.t);
        if k == 0 {
            return space(first, p.x, p.y);
        }
        let lo = &self.frames[k - 1];
        if k == self.frames.len() || lo.t == p.t {
            return space(lo, p.x, p.y);
        }
        let hi = &self.frames[k];
        let w = (p.t - lo.t) / (hi.t - lo.t);
        Some((1.0 - w) * space(lo, p.x, p.y)? + w * space(hi, p.x, p.y)?)
    }
}
