//! Longitudinal acceleration laws: the intelligent driver model (IDM) for
//! automated vehicles, its human-driver extension (reaction delay,
//! estimation noise, temporal and multi-vehicle anticipation), and the
//! cooperative merging factors applied by connected automated vehicles.

use rand::Rng;
use rand_distr::{Distribution, Normal};

/// Maximum braking applied when a gap has closed completely, m/s^2.
pub const EMERGENCY_DECEL: f64 = 9.0;

/// IDM parameters of one driver/vehicle.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DriverParams {
    /// Desired speed v0, m/s.
    pub desired_speed: f64,
    /// Safe time headway T, s.
    pub safe_headway: f64,
    /// Maximum acceleration a, m/s^2.
    pub max_accel: f64,
    /// Comfortable deceleration b, m/s^2.
    pub comfort_decel: f64,
    /// Standstill gap s0, m.
    pub jam_gap: f64,
}

impl DriverParams {
    /// Desired speed capped by a link speed limit.
    pub fn with_speed_cap(mut self, limit: f64) -> Self {
        self.desired_speed = self.desired_speed.min(limit);
        self
    }
}

/// Behavioral extensions applied on top of the base law for human drivers.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HumanFactors {
    /// Reaction delay, s.
    pub reaction_time: f64,
    /// Standard deviation of the white acceleration noise, m/s^2.
    pub noise_sd: f64,
    /// Number of leaders taken into account (>= 1).
    pub anticipated_leaders: usize,
}

/// What a vehicle sees of one leader. For the m-th leader ahead the net gap
/// is cumulative: the sum of the net gaps of all intermediate pairs, i.e.
/// bumper-to-bumper distance with intermediate vehicle lengths removed.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LeaderObservation {
    /// Net gap s, m. May be negative in the virtual superposition at merges.
    pub net_gap: f64,
    /// Own speed minus leader speed, m/s.
    pub speed_difference: f64,
    /// Leader speed, m/s.
    pub leader_speed: f64,
}

/// Outcome of a car-following evaluation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum CfAccel {
    Accel(f64),
    /// The gap is closed (s <= 0); the caller applies maximum braking.
    EmergencyBrake,
}

impl CfAccel {
    /// Resolves the emergency signal to the capped braking value.
    pub fn value(self) -> f64 {
        match self {
            CfAccel::Accel(a) => a,
            CfAccel::EmergencyBrake => -EMERGENCY_DECEL,
        }
    }

    pub fn min(self, other: CfAccel) -> CfAccel {
        match (self, other) {
            (CfAccel::EmergencyBrake, _) | (_, CfAccel::EmergencyBrake) => CfAccel::EmergencyBrake,
            (CfAccel::Accel(a), CfAccel::Accel(b)) => CfAccel::Accel(a.min(b)),
        }
    }

    pub fn is_emergency(self) -> bool {
        matches!(self, CfAccel::EmergencyBrake)
    }
}

/// Desired dynamic gap s*(v, dv), floored at the standstill gap: the dynamic
/// term can otherwise drive the target gap negative.
pub fn idm_desired_gap(p: &DriverParams, speed: f64, speed_difference: f64) -> f64 {
    let dynamic = speed * speed_difference / (2.0 * (p.max_accel * p.comfort_decel).sqrt());
    (p.jam_gap + p.safe_headway * speed + dynamic).max(p.jam_gap)
}

/// Free-road acceleration term a[1 - (v/v0)^4].
pub fn idm_free_accel(p: &DriverParams, speed: f64) -> f64 {
    p.max_accel * (1.0 - (speed / p.desired_speed).powi(4))
}

/// Full IDM acceleration towards a single leader.
pub fn idm_accel(p: &DriverParams, speed: f64, obs: &LeaderObservation) -> CfAccel {
    if obs.net_gap <= 0.0 {
        return CfAccel::EmergencyBrake;
    }
    let desired = idm_desired_gap(p, speed, obs.speed_difference);
    let ratio = desired / obs.net_gap;
    CfAccel::Accel(p.max_accel * (1.0 - (speed / p.desired_speed).powi(4) - ratio * ratio))
}

/// Delayed own state fed into the human driver law.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DelayedSelf {
    /// Own speed at t - T_react, m/s.
    pub speed: f64,
    /// Own acceleration at t - T_react, m/s^2.
    pub accel: f64,
}

/// Human driver acceleration.
///
/// `leaders` holds observations as they were at t - T_react (up to the
/// anticipation count, nearest first); temporal anticipation extrapolates
/// them with constant-velocity (gap) and constant-acceleration (own speed)
/// heuristics before evaluating the free term plus one braking interaction
/// per leader. Zero-mean Gaussian noise is added to the sum.
pub fn hdm_accel<R: Rng + ?Sized>(
    p: &DriverParams,
    h: &HumanFactors,
    delayed: DelayedSelf,
    leaders: &[LeaderObservation],
    rng: &mut R,
) -> CfAccel {
    let noise = if h.noise_sd > 0.0 {
        Normal::new(0.0, h.noise_sd).expect("valid noise sd").sample(rng)
    } else {
        0.0
    };
    hdm_accel_with_noise(p, h, delayed, leaders, noise)
}

/// Deterministic part of [`hdm_accel`] with an externally supplied noise
/// draw; the engine uses this with per-vehicle streams.
pub fn hdm_accel_with_noise(
    p: &DriverParams,
    h: &HumanFactors,
    delayed: DelayedSelf,
    leaders: &[LeaderObservation],
    noise: f64,
) -> CfAccel {
    let anticipated_speed = (delayed.speed + h.reaction_time * delayed.accel).max(0.0);
    let mut accel = p.max_accel * (1.0 - (anticipated_speed / p.desired_speed).powi(4));
    for obs in leaders.iter().take(h.anticipated_leaders.max(1)) {
        let gap = obs.net_gap - h.reaction_time * obs.speed_difference;
        if gap <= 0.0 {
            return CfAccel::EmergencyBrake;
        }
        let desired = idm_desired_gap(p, anticipated_speed, obs.speed_difference);
        let ratio = desired / gap;
        accel -= p.max_accel * ratio * ratio;
    }
    CfAccel::Accel(accel + noise)
}

/// Multiplicative driving-style factors of a connected automated vehicle
/// near a merge. Acceleration and deceleration stay at their defaults; the
/// headway doubles and the perceived gap shrinks while cooperation is
/// active, producing a larger physical spacing for a smooth zipper merge.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CooperationState {
    pub active: bool,
    /// Distance to the merge point, m.
    pub distance_to_merge: f64,
    /// Detection range, m.
    pub detection_range: f64,
    /// Factor on the safe time headway.
    pub headway_factor: f64,
    /// Factor on the perceived net gap, in [gap_floor, 1].
    pub gap_factor: f64,
    /// Factor on the maximum acceleration (always 1).
    pub accel_factor: f64,
    /// Factor on the comfortable deceleration (always 1).
    pub decel_factor: f64,
}

impl CooperationState {
    pub fn inactive() -> Self {
        Self {
            active: false,
            distance_to_merge: 0.0,
            detection_range: 0.0,
            headway_factor: 1.0,
            gap_factor: 1.0,
            accel_factor: 1.0,
            decel_factor: 1.0,
        }
    }
}

/// Tunable cooperation constants.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CooperationSettings {
    /// Headway factor applied while cooperating.
    pub headway_factor: f64,
    /// Lower bound of the gap factor.
    pub gap_floor: f64,
}

impl Default for CooperationSettings {
    fn default() -> Self {
        Self { headway_factor: 2.0, gap_floor: 0.4 }
    }
}

/// Conflict input for the factor rule.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CooperationInput {
    /// Another connected vehicle is within range on the other approach.
    pub conflict: bool,
    /// Distance to the merge point, m.
    pub distance_to_merge: f64,
    /// Detection range, m.
    pub detection_range: f64,
}

/// Cooperation factors for the given conflict situation. The gap factor
/// decreases quadratically with the remaining distance to the merge point,
/// floored at the configured minimum; outside a conflict all factors are 1.
pub fn cidm_factors(input: &CooperationInput, settings: &CooperationSettings) -> CooperationState {
    if !input.conflict || input.distance_to_merge > input.detection_range {
        return CooperationState::inactive();
    }
    let ratio = input.distance_to_merge / input.detection_range;
    CooperationState {
        active: true,
        distance_to_merge: input.distance_to_merge,
        detection_range: input.detection_range,
        headway_factor: settings.headway_factor,
        gap_factor: (ratio * ratio).max(settings.gap_floor),
        accel_factor: 1.0,
        decel_factor: 1.0,
    }
}

/// IDM evaluated with the cooperation factors applied: headway scaled by the
/// headway factor, perceived gap scaled by the gap factor. With all factors
/// at 1 this is exactly [`idm_accel`].
pub fn cidm_accel(
    p: &DriverParams,
    cs: &CooperationState,
    speed: f64,
    obs: &LeaderObservation,
) -> CfAccel {
    let adjusted = DriverParams {
        safe_headway: cs.headway_factor * p.safe_headway,
        max_accel: cs.accel_factor * p.max_accel,
        comfort_decel: cs.decel_factor * p.comfort_decel,
        ..*p
    };
    let scaled = LeaderObservation {
        net_gap: cs.gap_factor * obs.net_gap,
        ..*obs
    };
    idm_accel(&adjusted, speed, &scaled)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha12Rng;

    const V30: f64 = 30.0 / 3.6;

    fn hv() -> DriverParams {
        DriverParams {
            desired_speed: V30,
            safe_headway: 1.5,
            max_accel: 1.5,
            comfort_decel: 2.0,
            jam_gap: 2.0,
        }
    }

    fn av() -> DriverParams {
        DriverParams {
            desired_speed: V30,
            safe_headway: 0.5,
            max_accel: 1.5,
            comfort_decel: 2.0,
            jam_gap: 0.5,
        }
    }

    #[test]
    fn desired_gap_examples() {
        let p = hv();
        assert_eq!(idm_desired_gap(&p, 0.0, 0.0), 2.0);
        assert!((idm_desired_gap(&p, 10.0, 0.0) - 17.0).abs() < 1e-12);
        // Leader faster: dynamic term shrinks the target but the standstill
        // floor holds the result above s0.
        let expected = 2.0 + 15.0 - 50.0 / (2.0 * 3.0f64.sqrt());
        assert!((idm_desired_gap(&p, 10.0, -5.0) - expected).abs() < 1e-12);
        assert_eq!(idm_desired_gap(&p, 10.0, -50.0), 2.0);
    }

    #[test]
    fn idm_fixed_points() {
        let p = hv();
        // Jam: standing at the standstill gap is an exact equilibrium.
        let obs = LeaderObservation { net_gap: 2.0, speed_difference: 0.0, leader_speed: 0.0 };
        assert_eq!(idm_accel(&p, 0.0, &obs).value(), 0.0);
        // Free flow: at the desired speed with a huge gap the residual
        // braking term is negligible.
        let obs = LeaderObservation { net_gap: 1e6, speed_difference: 0.0, leader_speed: V30 };
        assert!(idm_accel(&p, V30, &obs).value().abs() < 1e-6);
    }

    #[test]
    fn idm_matches_hand_evaluated_value() {
        let p = hv();
        let v = V30;
        let obs = LeaderObservation { net_gap: 20.0, speed_difference: 0.0, leader_speed: v };
        // Independent arithmetic route.
        let v0 = 120.0 / 3.6;
        let desired = 2.0 + 1.5 * v;
        let expected = 1.5 * (1.0 - (v / v0).powi(4) - (desired / 20.0).powi(2));
        let p_raw = DriverParams { desired_speed: v0, ..p };
        match idm_accel(&p_raw, v, &obs) {
            CfAccel::Accel(a) => assert!((a - expected).abs() < 1e-12),
            CfAccel::EmergencyBrake => panic!("unexpected emergency"),
        }
    }

    #[test]
    fn nonpositive_gap_signals_emergency() {
        let p = av();
        let obs = LeaderObservation { net_gap: 0.0, speed_difference: 0.0, leader_speed: 0.0 };
        assert!(idm_accel(&p, 5.0, &obs).is_emergency());
        assert_eq!(idm_accel(&p, 5.0, &obs).value(), -EMERGENCY_DECEL);
    }

    #[test]
    fn idm_is_monotone_on_a_parameter_grid() {
        for p in [hv(), av()] {
            let speeds: Vec<f64> = (0..=10).map(|i| i as f64 * 0.9).collect();
            let gaps: Vec<f64> = (1..=10).map(|i| i as f64 * 3.0).collect();
            let dvs: Vec<f64> = (-6..=6).map(|i| i as f64).collect();
            for &s in &gaps {
                for &dv in &dvs {
                    let mut prev = f64::INFINITY;
                    for &v in &speeds {
                        let a = idm_accel(&p, v, &LeaderObservation { net_gap: s, speed_difference: dv, leader_speed: v - dv }).value();
                        assert!(a <= prev + 1e-12, "accel not non-increasing in v");
                        prev = a;
                    }
                }
            }
            for &v in &speeds {
                for &dv in &dvs {
                    let mut prev = f64::NEG_INFINITY;
                    for &s in &gaps {
                        let a = idm_accel(&p, v, &LeaderObservation { net_gap: s, speed_difference: dv, leader_speed: v - dv }).value();
                        assert!(a >= prev - 1e-12, "accel not non-decreasing in s");
                        prev = a;
                    }
                }
                for &s in &gaps {
                    let mut prev = f64::INFINITY;
                    for &dv in &dvs {
                        let a = idm_accel(&p, v, &LeaderObservation { net_gap: s, speed_difference: dv, leader_speed: v - dv }).value();
                        assert!(a <= prev + 1e-12, "accel not non-increasing in dv");
                        prev = a;
                    }
                }
            }
        }
    }

    #[test]
    fn hdm_reduces_to_idm_without_human_factors() {
        let p = hv();
        let h = HumanFactors { reaction_time: 0.0, noise_sd: 0.0, anticipated_leaders: 1 };
        let mut rng = ChaCha12Rng::seed_from_u64(7);
        for _ in 0..1000 {
            let v = rng.gen::<f64>() * 10.0;
            let s = rng.gen::<f64>() * 60.0 + 0.5;
            let dv = rng.gen::<f64>() * 10.0 - 5.0;
            let obs = LeaderObservation { net_gap: s, speed_difference: dv, leader_speed: v - dv };
            let delayed = DelayedSelf { speed: v, accel: 0.7 };
            let a_h = hdm_accel_with_noise(&p, &h, delayed, &[obs], 0.0).value();
            let a_i = idm_accel(&p, v, &obs).value();
            assert!((a_h - a_i).abs() < 1e-12);
        }
    }

    #[test]
    fn distant_extra_leaders_change_nothing() {
        let p = hv();
        let h1 = HumanFactors { reaction_time: 0.9, noise_sd: 0.0, anticipated_leaders: 1 };
        let h3 = HumanFactors { reaction_time: 0.9, noise_sd: 0.0, anticipated_leaders: 3 };
        let delayed = DelayedSelf { speed: 6.0, accel: 0.1 };
        let near = LeaderObservation { net_gap: 12.0, speed_difference: 1.0, leader_speed: 5.0 };
        let far1 = LeaderObservation { net_gap: 5e4, speed_difference: 0.0, leader_speed: 6.0 };
        let far2 = LeaderObservation { net_gap: 9e4, speed_difference: 0.0, leader_speed: 6.0 };
        let a1 = hdm_accel_with_noise(&p, &h1, delayed, &[near], 0.0).value();
        let a3 = hdm_accel_with_noise(&p, &h3, delayed, &[near, far1, far2], 0.0).value();
        assert!((a1 - a3).abs() < 1e-6);
    }

    #[test]
    fn hdm_is_deterministic_for_a_fixed_seed() {
        let p = hv();
        let h = HumanFactors { reaction_time: 1.2, noise_sd: 0.2, anticipated_leaders: 3 };
        let delayed = DelayedSelf { speed: 5.0, accel: 0.2 };
        let obs = [LeaderObservation { net_gap: 15.0, speed_difference: 0.5, leader_speed: 4.5 }];
        let run = || {
            let mut rng = ChaCha12Rng::seed_from_u64(42);
            (0..32)
                .map(|_| hdm_accel(&p, &h, delayed, &obs, &mut rng).value().to_bits())
                .collect::<Vec<_>>()
        };
        assert_eq!(run(), run());
    }

    #[test]
    fn noise_standard_deviation_matches_the_setting() {
        let p = hv();
        let h = HumanFactors { reaction_time: 0.8, noise_sd: 0.2, anticipated_leaders: 1 };
        let quiet = HumanFactors { noise_sd: 0.0, ..h };
        let delayed = DelayedSelf { speed: 5.0, accel: 0.0 };
        let obs = [LeaderObservation { net_gap: 25.0, speed_difference: 0.0, leader_speed: 5.0 }];
        let base = hdm_accel_with_noise(&p, &quiet, delayed, &obs, 0.0).value();
        let mut rng = ChaCha12Rng::seed_from_u64(11);
        let n = 100_000;
        let mut sum = 0.0;
        let mut sum2 = 0.0;
        for _ in 0..n {
            let d = hdm_accel(&p, &h, delayed, &obs, &mut rng).value() - base;
            sum += d;
            sum2 += d * d;
        }
        let mean = sum / n as f64;
        let sd = (sum2 / n as f64 - mean * mean).sqrt();
        assert!((sd - 0.2).abs() < 0.01, "sd = {sd}");
    }

    #[test]
    fn cooperation_factor_examples() {
        let settings = CooperationSettings::default();
        let idle = cidm_factors(
            &CooperationInput { conflict: false, distance_to_merge: 10.0, detection_range: 30.0 },
            &settings,
        );
        assert!(!idle.active);
        assert_eq!(
            (idle.headway_factor, idle.gap_factor, idle.accel_factor, idle.decel_factor),
            (1.0, 1.0, 1.0, 1.0)
        );

        let edge = cidm_factors(
            &CooperationInput { conflict: true, distance_to_merge: 30.0, detection_range: 30.0 },
            &settings,
        );
        assert!(edge.active);
        assert_eq!(edge.gap_factor, 1.0);
        assert_eq!(edge.headway_factor, 2.0);

        let close = cidm_factors(
            &CooperationInput { conflict: true, distance_to_merge: 3.0, detection_range: 30.0 },
            &settings,
        );
        assert_eq!(close.gap_factor, 0.4);
    }

    #[test]
    fn cidm_with_unit_factors_is_bitwise_idm() {
        let p = av();
        let cs = CooperationState::inactive();
        let mut rng = ChaCha12Rng::seed_from_u64(3);
        for _ in 0..500 {
            let v = rng.gen::<f64>() * 9.0;
            let s = rng.gen::<f64>() * 50.0 + 0.1;
            let dv = rng.gen::<f64>() * 8.0 - 4.0;
            let obs = LeaderObservation { net_gap: s, speed_difference: dv, leader_speed: v - dv };
            let a = cidm_accel(&p, &cs, v, &obs).value();
            let b = idm_accel(&p, v, &obs).value();
            assert_eq!(a.to_bits(), b.to_bits());
        }
    }

    #[test]
    fn active_cooperation_never_accelerates_harder() {
        let p = av();
        let settings = CooperationSettings::default();
        for dist in [5.0, 15.0, 25.0] {
            let cs = cidm_factors(
                &CooperationInput { conflict: true, distance_to_merge: dist, detection_range: 30.0 },
                &settings,
            );
            for v in [0.0, 3.0, 6.0, 8.3] {
                for gap in [2.0, 8.0, 20.0, 50.0] {
                    for dv in [-2.0, 0.0, 2.0] {
                        let obs = LeaderObservation { net_gap: gap, speed_difference: dv, leader_speed: v - dv };
                        let coop = cidm_accel(&p, &cs, v, &obs).value();
                        let plain = idm_accel(&p, v, &obs).value();
                        assert!(coop <= plain + 1e-12);
                    }
                }
            }
        }
    }

    #[test]
    fn doubled_headway_widens_the_desired_gap() {
        let p = av();
        let wide = DriverParams { safe_headway: 2.0 * p.safe_headway, ..p };
        for v in [1.0, 4.0, 8.0] {
            assert!(idm_desired_gap(&wide, v, 0.0) > idm_desired_gap(&p, v, 0.0));
        }
    }
}
