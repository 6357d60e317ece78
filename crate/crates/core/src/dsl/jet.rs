//! Second-order forward-mode jets in `(x, y, t)`: value, gradient and Hessian.

use std::ops::{Add, Mul, Neg, Sub};

/// Hessian entries are stored as `[xx, yy, tt, xy, xt, yt]`.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Jet2 {
    pub v: f64,
    pub g: [f64; 3],
    pub h: [f64; 6],
}

const PAIRS: [(usize, usize); 6] = [(0, 0), (1, 1), (2, 2), (0, 1), (0, 2), (1, 2)];

impl Jet2 {
    pub fn constant(v: f64) -> Self {
        Self { v, ..Default::default() }
    }

    pub fn variable(v: f64, axis: usize) -> Self {
        let mut j = Self::constant(v);
        j.g[axis] = 1.0;
        j
    }

    pub fn is_constant(&self) -> bool {
        self.g.iter().chain(self.h.iter()).all(|&d| d == 0.0)
    }

    /// Second partial `∂²/∂i∂j`.
    pub fn second(&self, i: usize, j: usize) -> f64 {
        let (a, b) = if i <= j { (i, j) } else { (j, i) };
        let k = PAIRS.iter().position(|&p| p == (a, b)).expect("axis index below 3");
        self.h[k]
    }

    /// `f(self)` given `f(v)`, `f'(v)`, `f''(v)`.
    pub fn chain(&self, f: f64, df: f64, d2f: f64) -> Self {
        let mut out = Self::constant(f);
        for i in 0..3 {
            out.g[i] = df * self.g[i];
        }
        for (k, &(i, j)) in PAIRS.iter().enumerate() {
            out.h[k] = df * self.h[k] + d2f * self.g[i] * self.g[j];
        }
        out
    }

    pub fn recip(&self) -> Self {
        let inv = 1.0 / self.v;
        self.chain(inv, -inv * inv, 2.0 * inv * inv * inv)
    }

    pub fn powf(&self, c: f64) -> Self {
        let v = self.v;
        self.chain(v.powf(c), c * v.powf(c - 1.0), c * (c - 1.0) * v.powf(c - 2.0))
    }

    pub fn exp(&self) -> Self {
        let e = self.v.exp();
        self.chain(e, e, e)
    }

    pub fn ln(&self) -> Self {
        let inv = 1.0 / self.v;
        self.chain(self.v.ln(), inv, -inv * inv)
    }

    pub fn sin(&self) -> Self {
        let (s, c) = self.v.sin_cos();
        self.chain(s, c, -s)
    }

    pub fn cos(&self) -> Self {
        let (s, c) = self.v.sin_cos();
        self.chain(c, -s, -c)
    }

    pub fn sqrt(&self) -> Self {
        let r = self.v.sqrt();
        self.chain(r, 0.5 / r, -0.25 / (r * self.v))
    }

    pub fn is_finite(&self) -> bool {
        self.v.is_finite() && self.g.iter().chain(self.h.iter()).all(|d| d.is_finite())
    }
}

impl Add for Jet2 {
    type Output = Jet2;
    fn add(self, o: Jet2) -> Jet2 {
        let mut out = self;
        out.v += o.v;
        for i in 0..3 {
            out.g[i] += o.g[i];
        }
        for k in 0..6 {
            out.h[k] += o.h[k];
        }
        out
    }
}

impl Neg for Jet2 {
    type Output = Jet2;
    fn neg(self) -> Jet2 {
        self.chain(-self.v, -1.0, 0.0)
    }
}

impl Sub for Jet2 {
    type Output = Jet2;
    fn sub(self, o: Jet2) -> Jet2 {
        self + (-o)
    }
}

impl Mul for Jet2 {
    type Output = Jet2;
    fn mul(self, o: Jet2) -> Jet2 {
        let mut out = Jet2::constant(self.v * o.v);
        for i in 0..3 {
            out.g[i] = self.g[i] * o.v + self.v * o.g[i];
        }
        for (k, &(i, j)) in PAIRS.iter().enumerate() {
            out.h[k] = self.h[k] * o.v + self.g[i] * o.g[j] + self.g[j] * o.g[i] + self.v * o.h[k];
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn product_rule_second_order() {
        // f = x² y at (2, 3): f_xx = 2y = 6, f_xy = 2x = 4, f_yy = 0.
        let x = Jet2::variable(2.0, 0);
        let y = Jet2::variable(3.0, 1);
        let f = x * x * y;
        assert_eq!(f.v, 12.0);
        assert_eq!(f.g, [12.0, 4.0, 0.0]);
        assert_eq!(f.second(0, 0), 6.0);
        assert_eq!(f.second(1, 0), 4.0);
        assert_eq!(f.second(1, 1), 0.0);
    }

    #[test]
    fn chain_rule_matches_closed_form() {
        // sin(x y) at (0.3, 0.7)
        let (x0, y0) = (0.3_f64, 0.7_f64);
        let f = (Jet2::variable(x0, 0) * Jet2::variable(y0, 1)).sin();
        let c = (x0 * y0).cos();
        let s = (x0 * y0).sin();
        assert!((f.g[0] - y0 * c).abs() < 1e-15);
        assert!((f.second(0, 0) + y0 * y0 * s).abs() < 1e-15);
        assert!((f.second(0, 1) - (c - x0 * y0 * s)).abs() < 1e-15);
    }
}
