//! Deterministic simulator for magnetically actuated capsule endoscopes plus
//! the evaluation toolkit that goes with it: coverage, trajectory error and
//! point-cloud registration metrics.

// `!(x > 0.0)` is used on purpose so NaN fails validation.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod exec;
pub mod arm;
pub mod dynamics;
pub mod friction;
pub mod geometry;
pub mod magnetics;
pub mod metrics;
pub mod scenario;
pub mod sensing;
pub mod tissue;

pub use exec::Exec;
