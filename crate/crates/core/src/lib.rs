//! Per-profile dose models for patients who withhold some of their features.
//!
//! A privileged model trained on every feature teaches a student that only
//! sees what a given disclosure profile reveals.

// `!(x > 0.0)` is how the validators reject NaN along with the bad range.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod cli;
pub mod dataset;
pub mod distillation;
pub mod error;
pub mod evaluation;
pub mod feature_selection;
pub mod models;
pub mod profiles;

pub use error::{Error, Result};
