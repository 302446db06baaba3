//! Individually fair classifiers for tabular credit data.
//!
//! The workflow has two steps. A fair distance is first learned on a split
//! that holds the sensitive attribute ([`fair_metric`]). Classifiers are then
//! trained on a disjoint split with no sensitive data, either as plain
//! baselines ([`models`]) or adversarially against the frozen fair distance
//! ([`sensr`] for smooth networks, [`ifgb`] for boosted trees). The
//! [`fairness_eval`] module audits any trained model.

// Validation compares with `!(x > 0.0)` on purpose so NaN is rejected.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod dataset;
pub mod error;
pub mod fair_metric;
pub mod fairness_eval;
pub mod ifgb;
pub mod io;
pub mod models;
pub mod pairs;
pub mod sensr;
pub mod synthetic;
mod par;

pub use error::{Error, Result};
