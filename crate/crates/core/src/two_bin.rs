//! Two-bin density-exchange dynamics of the two-ring system: derivatives,
//! fixed-step integration with a gridlock latch, closed-form equilibrium
//! enumeration, stability classification, and the theoretical network
//! fundamental diagram.

use crate::error::{Error, Result};
use crate::fd::TriangularFd;

/// Flow-match tolerance for closed-form equilibrium roots, veh/s.
pub const FLOW_MATCH_TOL: f64 = 1e-9;
/// Density tolerance below the jam density at which a bin counts as
/// gridlocked, veh/m.
pub const GRIDLOCK_TOL: f64 = 1e-9;

/// Densities of the two bins at a point in time.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TwoBinState {
    pub k1: f64,
    pub k2: f64,
    pub time: f64,
}

/// Exchange parameters of the two-bin system.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TwoBinParams {
    /// Probability of switching rings at a diverge, in [0, 1].
    pub turn_probability: f64,
    /// Length of one ring, m.
    pub ring_length: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stability {
    Stable,
    Unstable,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Branch {
    Symmetric,
    Asymmetric,
    Gridlock,
}

/// One equilibrium of the two-bin system at a given mean density.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Equilibrium {
    pub k1: f64,
    pub k2: f64,
    pub stability: Stability,
    pub branch: Branch,
}

/// One point of the theoretical network fundamental diagram.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NfdPoint {
    pub mean_density: f64,
    pub flow: f64,
    pub branch: Branch,
}

fn validate_density(k: f64, fd: &TriangularFd) -> Result<()> {
    if !(0.0..=fd.jam_density).contains(&k) {
        return Err(Error::DensityOutOfRange {
            density: k,
            jam: fd.jam_density,
        });
    }
    Ok(())
}

fn gridlocked(k: f64, fd: &TriangularFd) -> bool {
    k >= fd.jam_density - GRIDLOCK_TOL
}

/// Density rates of change of both bins. Once either bin is gridlocked both
/// rates are zero: a switching vehicle would immediately congest the other
/// ring as well, so the exchange equations stop applying.
pub fn two_bin_derivatives(
    state: &TwoBinState,
    fd: &TriangularFd,
    params: &TwoBinParams,
) -> Result<(f64, f64)> {
    validate_density(state.k1, fd)?;
    validate_density(state.k2, fd)?;
    if gridlocked(state.k1, fd) || gridlocked(state.k2, fd) {
        return Ok((0.0, 0.0));
    }
    let rate = params.turn_probability / params.ring_length
        * (fd.flow(state.k2)? - fd.flow(state.k1)?);
    Ok((rate, -rate))
}

/// Explicit fixed-step integration of the two-bin system. An optional
/// perturbation is added to the initial densities (clamped to the valid
/// range). Once either bin reaches the jam density the state is frozen for
/// the rest of the horizon.
pub fn integrate_two_bin(
    initial: TwoBinState,
    fd: &TriangularFd,
    params: &TwoBinParams,
    dt: f64,
    horizon: f64,
    perturbation: Option<(f64, f64)>,
) -> Result<Vec<TwoBinState>> {
    if !(dt > 0.0) || horizon < dt {
        return Err(Error::InvalidParameter(format!(
            "need dt > 0 and horizon >= dt, got dt {dt}, horizon {horizon}"
        )));
    }
    let (d1, d2) = perturbation.unwrap_or((0.0, 0.0));
    let mut state = TwoBinState {
        k1: (initial.k1 + d1).clamp(0.0, fd.jam_density),
        k2: (initial.k2 + d2).clamp(0.0, fd.jam_density),
        time: initial.time,
    };
    let steps = (horizon / dt).round() as usize;
    let mut out = Vec::with_capacity(steps + 1);
    out.push(state);
    let mut frozen = gridlocked(state.k1, fd) || gridlocked(state.k2, fd);
    for n in 1..=steps {
        if !frozen {
            let (dk1, dk2) = two_bin_derivatives(&state, fd, params)?;
            state.k1 = (state.k1 + dk1 * dt).clamp(0.0, fd.jam_density);
            state.k2 = (state.k2 + dk2 * dt).clamp(0.0, fd.jam_density);
            if gridlocked(state.k1, fd) || gridlocked(state.k2, fd) {
                frozen = true;
            }
        }
        state.time = initial.time + n as f64 * dt;
        out.push(state);
    }
    Ok(out)
}

/// Stability of an equilibrium (k1, k2) under mass-conserving perturbations.
///
/// Linearizing the exchange dynamics along (+d, -d) gives a restoring rate
/// proportional to q'(k1) + q'(k2); the equilibrium is stable iff the sum of
/// one-sided slopes is positive for both perturbation directions. Gridlocked
/// states are absorbing and therefore stable.
pub fn classify_stability(fd: &TriangularFd, k1: f64, k2: f64) -> Result<Stability> {
    validate_density(k1, fd)?;
    validate_density(k2, fd)?;
    if gridlocked(k1, fd) || gridlocked(k2, fd) {
        return Ok(Stability::Stable);
    }
    let mismatch = (fd.flow(k1)? - fd.flow(k2)?).abs();
    if mismatch > FLOW_MATCH_TOL {
        return Err(Error::NotAnEquilibrium { k1, k2, mismatch });
    }
    let up = fd.flow_slope(k1, true) + fd.flow_slope(k2, false);
    let down = fd.flow_slope(k1, false) + fd.flow_slope(k2, true);
    if up > 0.0 && down > 0.0 {
        Ok(Stability::Stable)
    } else {
        Ok(Stability::Unstable)
    }
}

/// All equilibria of the two-bin system at mean density `mean_density`.
///
/// The symmetric root always exists. An asymmetric pair (one bin on each
/// branch with matching flows) exists wherever the flow-matching equation has
/// an interior solution, and gridlock states appear once the mean density
/// reaches half the jam density.
pub fn enumerate_equilibria(fd: &TriangularFd, mean_density: f64) -> Result<Vec<Equilibrium>> {
    validate_density(mean_density, fd)?;
    let mut out = Vec::new();
    let k_total = 2.0 * mean_density;

    let symmetric_branch = if gridlocked(mean_density, fd) {
        Branch::Gridlock
    } else {
        Branch::Symmetric
    };
    out.push(Equilibrium {
        k1: mean_density,
        k2: mean_density,
        stability: classify_stability(fd, mean_density, mean_density)?,
        branch: symmetric_branch,
    });

    // Flow-matching across the two branches: k1 = q/v_f on the free branch,
    // k2 = k_j - q/w on the congested branch, with k1 + k2 fixed.
    if fd.wave_speed.is_finite() && (fd.free_flow_speed - fd.wave_speed).abs() > 0.0 {
        let denom = 1.0 / fd.free_flow_speed - 1.0 / fd.wave_speed;
        let q = (k_total - fd.jam_density) / denom;
        if q > FLOW_MATCH_TOL && q < fd.capacity - FLOW_MATCH_TOL {
            let k_free = q / fd.free_flow_speed;
            let k_cong = fd.jam_density - q / fd.wave_speed;
            let stability = classify_stability(fd, k_free, k_cong)?;
            out.push(Equilibrium {
                k1: k_free,
                k2: k_cong,
                stability,
                branch: Branch::Asymmetric,
            });
            out.push(Equilibrium {
                k1: k_cong,
                k2: k_free,
                stability,
                branch: Branch::Asymmetric,
            });
        }
    }

    // Gridlock states: one bin pinned at the jam density.
    let k_rest = k_total - fd.jam_density;
    if k_rest >= -GRIDLOCK_TOL && !gridlocked(mean_density, fd) {
        let k_rest = k_rest.clamp(0.0, fd.jam_density);
        out.push(Equilibrium {
            k1: fd.jam_density,
            k2: k_rest,
            stability: Stability::Stable,
            branch: Branch::Gridlock,
        });
        out.push(Equilibrium {
            k1: k_rest,
            k2: fd.jam_density,
            stability: Stability::Stable,
            branch: Branch::Gridlock,
        });
    }
    Ok(out)
}

/// Flow values of all stable equilibria at each requested mean density.
/// The network flow of an equilibrium is the mean of the two bin flows.
pub fn theoretical_nfd(fd: &TriangularFd, densities: &[f64]) -> Result<Vec<NfdPoint>> {
    let mut out = Vec::new();
    for &mean_density in densities {
        for eq in enumerate_equilibria(fd, mean_density)? {
            if eq.stability != Stability::Stable {
                continue;
            }
            let q1 = if gridlocked(eq.k1, fd) { 0.0 } else { fd.flow(eq.k1)? };
            let q2 = if gridlocked(eq.k2, fd) { 0.0 } else { fd.flow(eq.k2)? };
            let flow = 0.5 * (q1 + q2);
            // Mirror-image equilibria share a flow value; keep one row each.
            if !out
                .iter()
                .any(|p: &NfdPoint| {
                    p.mean_density == mean_density
                        && p.branch == eq.branch
                        && (p.flow - flow).abs() <= FLOW_MATCH_TOL
                })
            {
                out.push(NfdPoint {
                    mean_density,
                    flow,
                    branch: eq.branch,
                });
            }
        }
    }
    Ok(out)
}
