//! Late-life mortality analysis: hazard trajectories, cohort survival and
//! effective lifespan limits, threshold-excess tail fits, MRAD trend
//! analysis, and a seeded Monte Carlo engine that checks the analytic
//! results by brute force.

pub mod data_io;
pub mod hazard;
pub mod limit;
pub mod repro;
pub mod rng;
pub mod simulation;
pub mod survival;
pub mod tail;
pub mod trend;

use thiserror::Error;

/// Any library error, for callers that do not care which module failed.
#[derive(Debug, Error)]
pub enum Error {
    #[error(transparent)]
    Hazard(#[from] hazard::HazardError),
    #[error(transparent)]
    Scenario(#[from] hazard::ScenarioError),
    #[error(transparent)]
    Survival(#[from] survival::SurvivalError),
    #[error(transparent)]
    Limit(#[from] limit::LimitError),
    #[error(transparent)]
    Tail(#[from] tail::TailError),
    #[error(transparent)]
    Trend(#[from] trend::TrendError),
    #[error(transparent)]
    Simulation(#[from] simulation::SimulationError),
    #[error(transparent)]
    Data(#[from] data_io::DataError),
}
