//! Transport, enzymatic degradation and absorption of a feed bolus along the
//! small intestine, modeled as coupled ordinary differential equations.
//!
//! Four nested models are provided (see [`ModelVariant`]): mass-action
//! degradation with constant friction (M1), surfacic hydrolysis with
//! pancreatic secretions and Michaelis-Menten absorption (M2), water-driven
//! solubilization and lubrication (M3), and M3 with the pulse train replaced
//! by its averaged effect (M4).

pub mod analysis;
pub mod cli;
pub mod error;
pub mod integrator;
pub mod kinetics;
pub mod state;
pub mod transport;

pub use error::{ModelError, Result};
pub use integrator::{run, ExitFlag, IntegrationConfig, Method, System, Trajectory};
pub use state::{BolusState, ModelVariant, Param, ParameterSet};
