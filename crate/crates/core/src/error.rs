use thiserror::Error;

use crate::coordinator::CoordinatorError;
use crate::harness::ConfigError;
use crate::learning::ClusterError;
use crate::macsim::SimError;
use crate::propagation::PropagationError;
use crate::radiomap::RadioMapError;

pub type Result<T, E = Error> = std::result::Result<T, E>;

/// Crate-level error, one variant per subsystem.
#[derive(Debug, Error)]
pub enum Error {
    #[error("propagation: {0}")]
    Propagation(#[from] PropagationError),
    #[error("radio map: {0}")]
    RadioMap(#[from] RadioMapError),
    #[error("clustering: {0}")]
    Cluster(#[from] ClusterError),
    #[error("coordinator: {0}")]
    Coordinator(#[from] CoordinatorError),
    #[error("simulation: {0}")]
    Sim(#[from] SimError),
    #[error("config: {0}")]
    Config(#[from] ConfigError),
    #[error("i/o: {0}")]
    Io(#[from] std::io::Error),
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
}
