use thiserror::Error;

/// Errors raised by the model, the integrator and the scenario loader.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum ModelError {
    /// A quantity was requested outside of its mathematical domain.
    #[error("domain error: {0}")]
    Domain(String),

    /// A parameter or scenario field is invalid. `field` is the dotted path.
    #[error("{field}: {message}")]
    Config { field: String, message: String },

    /// The bolus reached a state the model cannot continue from.
    #[error("degenerate state at t = {t} s: {reason}")]
    DegenerateState { t: f64, reason: String },

    /// The right-hand side or the step produced a non-finite value.
    #[error("numerical failure at t = {t} s in {term}")]
    NumericalFailure { t: f64, term: &'static str },

    /// A mass dropped below `-abs_tol` during a step.
    #[error("mass `{component}` undershot to {value:e} g at t = {t} s")]
    NegativeMass {
        component: &'static str,
        value: f64,
        t: f64,
    },

    /// A sensitivity/evaluation driver failed for a reason not listed above.
    #[error("{0}")]
    Analysis(String),
}

impl ModelError {
    pub fn config(field: impl Into<String>, message: impl Into<String>) -> Self {
        ModelError::Config {
            field: field.into(),
            message: message.into(),
        }
    }
}

pub type Result<T> = std::result::Result<T, ModelError>;
