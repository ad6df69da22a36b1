//! Label-free F1 estimation for keyphrase extractors.
//!
//! An ensemble of extractors trained with different seeds is run on the same
//! texts. How much the members agree with each other, regressed against their
//! F1 on labeled groups, predicts F1 on groups that have no labels. The crate
//! also scores the alternative of evaluating against machine-generated silver
//! labels, and simulates calibrated ensembles to check the
//! disagreement/error relationship the method relies on.

pub mod agreement;
pub mod cli;
pub mod corpus;
pub mod error;
pub mod estimator;
pub mod gde_lab;
pub mod kpe_metrics;
pub mod silver_eval;

pub use error::{Error, Result};
