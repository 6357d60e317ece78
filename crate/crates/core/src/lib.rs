//! Numerical toolkit for ultraparabolic Kolmogorov-type equations
//!
//! ```text
//! ∂ₜu = ∂ₓ(a ∂ₓu) + b₀ ∂ₓu + b ∂_y u
//! ```
//!
//! with rough (merely measurable) `a`, `b₀` and a twice differentiable `b`
//! with `∂ₓb ≠ 0`.

// `!(v > 0.0)` is the idiom here for rejecting NaN along with bad values.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod dsl;
pub mod field;
pub mod gamma;
pub mod geometry;
pub mod io;
pub mod potential;
pub mod probe;
pub mod problem;
pub mod reduction;
pub mod solver;
pub mod verify;

pub use geometry::Point;
