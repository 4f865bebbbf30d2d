//! Crate-wide error type.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("density {density} outside [0, {jam}]")]
    DensityOutOfRange { density: f64, jam: f64 },
    #[error("({k1}, {k2}) is not an equilibrium: |q(k1) - q(k2)| = {mismatch}")]
    NotAnEquilibrium { k1: f64, k2: f64, mismatch: f64 },
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error("invalid geometry: {0}")]
    Geometry(String),
    #[error("config error: {0}")]
    Config(String),
    #[error("simulation error: {0}")]
    Sim(String),
    #[error("metrics error: {0}")]
    Metrics(String),
    #[error("incompatible schema: {0}")]
    Schema(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    /// Process exit code used by the command-line frontend.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config(_) | Error::InvalidParameter(_) | Error::Geometry(_) => 1,
            _ => 2,
        }
    }
}
