//! Two-ring traffic microsimulation and two-bin macroscopic analysis.
//!
//! The crate couples a deterministic car-following microsimulation of a
//! symmetric two-ring network (Bernoulli turning at diverges, zipper merging
//! with virtual gaps, cooperative merging for connected automated vehicles)
//! with the closed-form two-bin analysis of the same system: triangular
//! fundamental-diagram algebra, equilibrium enumeration with stability
//! classification, Edie-style flow measurement, and bifurcation detection on
//! simulated phase paths.

pub mod cf;
pub mod csvio;
pub mod error;
pub mod fd;
pub mod metrics;
pub mod network;
pub mod report;
pub mod scenario;
pub mod sim;
pub mod two_bin;

pub use error::{Error, Result};
pub use fd::TriangularFd;
pub use metrics::{BifurcationPoint, MetricsSample, PhasePath, Region};
pub use network::{GeometryConfig, TwoRingNetwork, TurnChoice};
pub use scenario::{FleetMix, PresetId, ScenarioConfig};
pub use sim::{ReplicationOutput, ReplicationPlan, VehicleClass};
pub use two_bin::{Branch, Equilibrium, Stability, TwoBinParams, TwoBinState};
