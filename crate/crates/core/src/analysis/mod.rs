//! Drivers built on top of single runs: homogenization error, one-at-a-time
//! sensitivity, and the starch evaluation.

pub mod homogenization;
pub mod sensitivity;
pub mod starch;

pub use homogenization::{homogenization_error, ComparisonWindow, HomogenizationTable};
pub use sensitivity::{default_study, sensitivity_sweep, study_targets, Output, SensitivityReport};
pub use starch::{evaluate_starch, EvaluationResult, StarchInputs, StarchReference};
