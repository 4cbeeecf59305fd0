//! Conservative wealth-exchange kinetics.
//!
//! A population trades pairwise: two agents holding `w1` and `w2` exchange
//! `w1 w2 / (w1 + w2)`, and the poorer side may be favored through a bias
//! `gamma`. This crate integrates the resulting master equation on a wealth
//! grid, simulates the same rule with explicit agents, and computes the
//! usual inequality observables (Shannon and Theil entropies, liquidity,
//! Lorenz curve, Gini coefficient, tail exponent).

pub mod agents;
pub mod error;
pub mod grid;
pub mod io;
pub mod kinetics;
pub mod metrics;
pub mod run;

pub use error::{Error, Result};
pub use grid::{Distribution, GrowthPolicy, WealthGrid};
pub use kinetics::Params;
pub use metrics::MetricsRecord;
