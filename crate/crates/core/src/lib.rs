//! Simulation and numerical analysis for a discrete-time flocking model with
//! general local interaction kernels.
//!
//! Agents start uniformly at random in `[0,1]^d`, interact through a
//! non-increasing, compactly supported weight `f_n`, and update
//!
//! ```text
//! X(t+1) = X(t) + V(t)
//! V(t+1) = P(t) V(t)
//! ```
//!
//! with `P(t)` the symmetric weighted-average matrix built from pairwise
//! distances. The crate provides the dynamics and its diagnostics, random
//! geometric graph tools, the large-deviation degree level `k̄_{n,δ}`,
//! spectral diagnostics of `P(t)`, checkers for the sufficient and necessary
//! flocking conditions, and a seeded phase-sweep harness.

// `!(x > 0.0)` guards deliberately reject NaN as well.
#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

pub mod conditions;
pub mod config;
pub mod dynamics;
pub mod error;
pub mod geometry;
pub mod kernel;
pub mod ldp;
pub mod matrix;
pub mod numerics;
pub mod rng;
pub mod spectral;
pub mod sweep;
pub mod union_find;

pub use config::SimConfig;
pub use dynamics::{RunReport, SimOptions, SwarmState, WeightMatrix};
pub use error::{Error, Result};
pub use kernel::{Kernel, KernelFamily};
pub use matrix::RowMatrix;
pub use sweep::SweepResult;
