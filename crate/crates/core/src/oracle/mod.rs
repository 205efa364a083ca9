//! Independent oracles for the closed forms: a pipeline discrete-event
//! simulator, an activation ledger, a Monte Carlo fault replay and
//! exhaustive interval search.

pub mod faults;
pub mod pipeline;
pub mod verify;

pub use faults::{grid_search_interval, simulate_faults, MonteCarloEstimate, MonteCarloOptions};
pub use pipeline::{simulate_activation_ledger, simulate_pipeline, PipelineInstance, PipelineTrace};
