//! Ordinal cooperative-game valuation: exact solvers for order-sensitive
//! Shapley-style allocations, permutation-sampling estimators with
//! truncation and class-based subsampling, concentration-bound evaluators,
//! and a data-valuation experiment harness built on a position-weighted
//! logistic-regression utility.
//!
//! The crate is organized by layer:
//!
//! * [`model`] — players, ordered coalitions, the [`model::UtilityOracle`]
//!   trait, and a memoizing wrapper.
//! * [`exact`] — full-enumeration solvers and brute-force axiom checkers.
//! * [`estimators`] — the Monte Carlo family (plain/truncated, with
//!   class-proportional subsampling).
//! * [`bounds`] — closed-form tail-probability bounds for the estimators.
//! * [`ml`] — the weighted logistic-regression utility.
//! * [`synthetic`] — deterministic synthetic games for tests and
//!   calibration.
//! * [`data`] — tabular ingestion, splits, label noise, class partitions.
//! * [`experiments`] — removal/detection curves, AUC, repetition harness.
//! * [`cli`] — the `poshap` command-line binary's implementation.

pub mod bounds;
pub mod cli;
pub mod data;
pub mod error;
pub mod estimators;
pub mod exact;
pub mod experiments;
pub mod ml;
pub mod model;
pub mod synthetic;

pub use error::{Error, Result};
pub use model::{CachedUtility, Method, OrderedCoalition, PlayerId, TableUtility, UtilityOracle, ValueVector};
