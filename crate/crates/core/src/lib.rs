//! Fair learning-to-rank by reweighting pairwise training data.
//!
//! Observed relevance labels are assumed to carry a group bias. Instead of
//! changing the ranking model or its optimizer, the toolkit assigns each
//! training pair a closed-form weight derived from a pairwise fairness
//! constraint, then learns the constraint coefficients by alternating
//! between training and measuring the constraint violation.
//!
//! Module map:
//!
//! - [`dataset`]: CSV loading, query-level splits, pair generation and a
//!   synthetic generator with a known unbiased label function.
//! - [`constraints`]: group statistics and the pointwise / pairwise
//!   constraint functions.
//! - [`model`]: the linear scoring model.
//! - [`training`]: weighted pairwise (and pointwise) training with Adam.
//! - [`reweight`]: pair weights, expected bias, the coefficient loop and the
//!   pointwise reweighting baseline.
//! - [`evaluation`]: AUC, the fairness score and report export.
//! - [`experiment`]: configuration and the commands behind the CLI.

pub mod constraints;
pub mod dataset;
pub mod error;
pub mod evaluation;
pub mod experiment;
pub mod model;
pub mod reweight;
pub mod training;

pub use error::{Error, Result};

/// Numerically stable logistic function.
pub fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}
