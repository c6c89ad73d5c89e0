//! Solver and simulator toolkit for mechanism design when agents learn the
//! designer's private state from the allocations a mechanism produces.
//!
//! The toolkit is organized around a two-stage decomposition of the design
//! problem: first solve a standard IC/IR mechanism-design LP at every belief
//! the designer might induce about the state ([`stage_design`]), then choose
//! the optimal disclosure by concavifying the resulting value curve at the
//! prior ([`disclosure`]). Arbitrary state-dependent mechanisms can be
//! audited against the information they leak ([`calibrate`]), benchmarked
//! against Myersonian design ([`benchmark`]), and stress-tested in repeated
//! and block-dynamic play ([`repeated_sim`], [`dynamic_sim`]).
//!
//! All types are immutable after construction and all operations are pure
//! functions, so everything here is safe to use from multiple threads.

// Multi-axis index arithmetic reads better with explicit loops.
#![allow(clippy::needless_range_loop)]

pub mod benchmark;
pub mod calibrate;
pub mod disclosure;
pub mod dynamic_sim;
pub mod error;
pub mod lp;
pub mod model;
pub mod repeated_sim;
pub mod stage_design;

pub use error::Error;

#[cfg(test)]
pub(crate) mod fixtures;

/// Tolerance for probability vectors supplied as input.
pub const INPUT_SIMPLEX_TOL: f64 = 1e-12;
/// Tolerance for probability vectors and Bayes-plausibility residuals on
/// derived objects.
pub const DERIVED_TOL: f64 = 1e-10;
/// Gap an IC/IR constraint must exceed before the audit flags a violation.
pub const AUDIT_TOL: f64 = 1e-8;
/// L-infinity tolerance when grouping interim allocation rules into signals.
pub const GROUP_TOL: f64 = 1e-9;
