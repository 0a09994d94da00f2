//! Numerical laboratory for periodic homogenization of geometric level-set equations.
//!
//! Forced mean curvature flow `u_t = ε tr{(I − p̂⊗p̂)D²u} + c(x/ε)|Du|` and the curvature
//! G-equation with a cellular flow are evolved with monotone explicit schemes; effective
//! Hamiltonians come from discounted cell problems or long-time flatness runs.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod cell;
pub mod config;
pub mod error;
pub mod evolution;
pub mod grid;
pub mod operators;
pub mod oracles;
pub mod rate;
pub(crate) mod scheme;

pub use error::{GeomError, Result};
