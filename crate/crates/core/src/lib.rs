pub mod consistency;
pub mod dataset;
pub mod engine;
pub mod env;
pub mod error;
pub mod io;
pub mod manifest;
pub mod nn;
pub mod rl;
pub mod scenario;
pub mod species;
pub mod surrogate;
pub mod timing;

pub use engine::{ClimateEngine, EngineParams, StepMode};
pub use error::{Error, Result};
pub use scenario::EmissionTrajectory;
pub use species::{default_registry, SpeciesRegistry};
