//! Temporal Poisson square root graphical models for longitudinal event
//! data: estimate, for every ordered pair of event types and every lag
//! window, whether occurrences of one type excite or inhibit future
//! occurrences of the other.
//!
//! Pipeline: [`event_data`] aggregates raw events into timespans,
//! [`design`] compiles them into a stacked sparse Poisson regression,
//! [`solver`] fits l1-penalized paths with AIC selection, and
//! [`evaluation`] scores the results. [`psqr_oracle`] provides exact
//! small-scale ground truth for the recovery experiments.

pub mod cli;
pub mod design;
pub mod error;
pub mod evaluation;
pub mod event_data;
pub mod psqr_oracle;
pub mod solver;
pub mod template;

pub use error::{Result, TpsqrError};
