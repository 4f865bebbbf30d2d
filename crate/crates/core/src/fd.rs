//! Triangular fundamental diagram algebra.

use crate::error::{Error, Result};

/// Triangular flow-density relation of a single ring.
///
/// The free branch rises at `free_flow_speed` up to `critical_density`, the
/// congested branch falls at `wave_speed` down to zero at `jam_density`.
/// `capacity = free_flow_speed * critical_density = wave_speed *
/// (jam_density - critical_density)` by construction.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TriangularFd {
    /// Free-flow speed in m/s.
    pub free_flow_speed: f64,
    /// Density at the apex, veh/m.
    pub critical_density: f64,
    /// Density at zero flow, veh/m.
    pub jam_density: f64,
    /// Peak flow, veh/s.
    pub capacity: f64,
    /// Positive magnitude of the congested-branch slope, m/s.
    pub wave_speed: f64,
}

impl TriangularFd {
    /// Builds the diagram from its free-flow corner; capacity and wave speed
    /// follow from the apex-consistency invariants.
    pub fn from_critical(
        free_flow_speed: f64,
        critical_density: f64,
        jam_density: f64,
    ) -> Result<Self> {
        if !(free_flow_speed > 0.0) {
            return Err(Error::InvalidParameter(format!(
                "free_flow_speed must be positive, got {free_flow_speed}"
            )));
        }
        if !(critical_density > 0.0) || !(jam_density >= critical_density) {
            return Err(Error::InvalidParameter(format!(
                "need 0 < critical_density <= jam_density, got {critical_density} and {jam_density}"
            )));
        }
        let capacity = free_flow_speed * critical_density;
        // A zero-headway fleet collapses the congested branch to a vertical
        // drop at the jam density; the wave speed is unbounded there.
        let wave_speed = if jam_density > critical_density {
            capacity / (jam_density - critical_density)
        } else {
            f64::INFINITY
        };
        Ok(Self {
            free_flow_speed,
            critical_density,
            jam_density,
            capacity,
            wave_speed,
        })
    }

    /// Derives the diagram from car-following parameters: the jam density is
    /// the reciprocal of the standstill spacing (jam gap plus vehicle
    /// length), the critical density the reciprocal of the spacing held at
    /// the free-flow speed.
    pub fn from_driver_params(
        headway: f64,
        jam_gap: f64,
        vehicle_length: f64,
        free_speed: f64,
    ) -> Result<Self> {
        if !(headway >= 0.0 && jam_gap > 0.0 && vehicle_length > 0.0 && free_speed > 0.0) {
            return Err(Error::InvalidParameter(format!(
                "driver params must be positive (headway {headway}, jam_gap {jam_gap}, \
                 vehicle_length {vehicle_length}, free_speed {free_speed})"
            )));
        }
        let jam_spacing = jam_gap + vehicle_length;
        let critical_spacing = free_speed * headway + jam_spacing;
        Self::from_critical(free_speed, 1.0 / critical_spacing, 1.0 / jam_spacing)
    }

    /// Flow at density `k`, veh/s.
    pub fn flow(&self, k: f64) -> Result<f64> {
        if !(0.0..=self.jam_density).contains(&k) {
            return Err(Error::DensityOutOfRange {
                density: k,
                jam: self.jam_density,
            });
        }
        Ok(if k <= self.critical_density {
            self.free_flow_speed * k
        } else {
            self.wave_speed * (self.jam_density - k)
        })
    }

    /// One-sided slope of q(k). `from_above` selects the right-hand slope at
    /// the critical-density kink; elsewhere both sides agree.
    pub fn flow_slope(&self, k: f64, from_above: bool) -> f64 {
        if k < self.critical_density || (k == self.critical_density && !from_above) {
            self.free_flow_speed
        } else {
            -self.wave_speed
        }
    }
}
