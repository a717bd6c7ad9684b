//! Intrinsic-performance scaling laws for reinforcement learning.
//!
//! Intrinsic performance `I` is the minimum training compute (in
//! parameter-interactions) any model size in a family needs to reach a
//! given return. This crate fits
//!
//! ```text
//! I^(-beta) = (N_c / N)^alpha_N + (E_c / E)^alpha_E
//! ```
//!
//! jointly with a monotone map from return to `I`, and answers the
//! questions the fit makes possible: compute-efficient frontiers,
//! optimal model size for a budget, infinite-size and infinite-data
//! extrapolations, and frontiers that charge for environment cost.
//!
//! Module map:
//!
//! - [`curves`]: ingestion, seed aggregation, early-data exclusion, smoothing
//! - [`monotone`]: weighted isotonic regression (pool adjacent violators)
//! - [`search`]: bounded Nelder-Mead with seeded restarts
//! - [`scalinglaw`]: closed-form algebra of the power law
//! - [`fitjoint`]: joint fit of constants and the return-to-`I` map
//! - [`accounting`]: parameter/FLOP formulas and the bundled fitted constants
//! - [`horizonlab`]: toy policy-gradient simulator for horizon-length variance
//! - [`synthetic`]: exact and noisy families generated from the power law
//! - [`plot`]: plot data (CSV) and deterministic SVG renderings
//! - [`config`]: flat key = value settings shared by the commands
//! - [`cli`]: command implementations behind the `intrinsic-scaling` binary
//!
//! Runnable walkthroughs for each capability live in `examples/`.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod accounting;
pub mod cli;
pub mod config;
pub mod curves;
pub mod error;
pub mod fitjoint;
pub mod horizonlab;
pub mod monotone;
pub mod plot;
pub mod scalinglaw;
pub mod search;
pub mod synthetic;

pub use error::{Error, Result};
