//! Limiting spectral distributions of Gram matrices whose rows are
//! independent copies of a stationary, possibly long-memory, sequence:
//! solving for the limit, simulating the ensembles, and measuring the gap.

// `!(x > 0.0)` is used on purpose: it also rejects NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod config;
pub mod ensemble;
pub mod limit;
pub mod matrixops;
pub mod metrics;
pub mod quad;
pub mod runner;
pub mod spectral;
