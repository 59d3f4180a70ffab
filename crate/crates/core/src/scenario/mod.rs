//! Emission trajectories, the synthetic baseline, and the perturbed-growth
//! ensemble.

pub mod baseline;
pub mod ensemble;
pub mod rng;
mod trajectory;

pub use ensemble::{
    baseline_growth, build_scenario, generate_ensemble, sample_smoothed_multipliers, Ensemble,
    EnsembleManifest, GrowthTable, PerturbationConfig,
};
pub use trajectory::EmissionTrajectory;
