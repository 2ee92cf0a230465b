//! Interpretable decision modelling on top of a probabilistic oracle.
//!
//! The pipeline elicits binary factors for a decision scenario, probes the
//! oracle for verbal likelihoods over factor configurations, fits a logistic
//! decision model jointly with a calibrated verbal-probability map, answers
//! free-text queries by Monte Carlo marginalisation, and supports auditable
//! expert edits of the fitted coefficients.

pub mod editing;
pub mod elicitation;
pub mod em;
pub mod error;
pub mod factor;
pub mod inference;
pub mod oracle;
pub mod probing;
pub mod store;
pub mod verbal;

pub use error::{Error, Result};
