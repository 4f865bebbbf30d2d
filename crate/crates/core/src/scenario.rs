//! Scenario configuration: flat key-value config files, fleet mixes, the
//! preset experiments, and conversion into engine options.

use std::path::Path;
use std::str::FromStr;

use rand::Rng;
use serde::Deserialize;

use crate::cf::{CooperationSettings, DriverParams};
use crate::error::{Error, Result};
use crate::fd::TriangularFd;
use crate::network::GeometryConfig;
use crate::sim::{ReactionConfig, SimOptions, VehicleClass};

/// Class composition of the loaded fleet; fractions sum to 1.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FleetMix {
    pub hv: f64,
    pub connected_hv: f64,
    pub av: f64,
    pub cav: f64,
}

impl FleetMix {
    pub fn pure(class: VehicleClass) -> Self {
        let mut mix = Self { hv: 0.0, connected_hv: 0.0, av: 0.0, cav: 0.0 };
        match class {
            VehicleClass::Hv => mix.hv = 1.0,
            VehicleClass::ConnectedHv => mix.connected_hv = 1.0,
            VehicleClass::Av => mix.av = 1.0,
            VehicleClass::Cav => mix.cav = 1.0,
        }
        mix
    }

    pub fn sum(&self) -> f64 {
        self.hv + self.connected_hv + self.av + self.cav
    }

    pub fn draw<R: Rng + ?Sized>(&self, rng: &mut R) -> VehicleClass {
        let u: f64 = rng.gen();
        let mut acc = self.hv;
        if u < acc {
            return VehicleClass::Hv;
        }
        acc += self.connected_hv;
        if u < acc {
            return VehicleClass::ConnectedHv;
        }
        acc += self.av;
        if u < acc {
            return VehicleClass::Av;
        }
        VehicleClass::Cav
    }
}

/// Full description of one experiment.
#[derive(Debug, Clone, PartialEq)]
pub struct ScenarioConfig {
    // Geometry.
    pub ring_radius_m: f64,
    pub connector_length_m: f64,
    pub speed_limit_kmh: f64,
    // Demand.
    pub demand_veh_per_h_per_ring: f64,
    pub horizon_s: f64,
    // Fleet.
    pub mix: FleetMix,
    pub vehicle_length_m: f64,
    pub hv_desired_speed_kmh: f64,
    pub hv_headway_s: f64,
    pub hv_max_accel_mps2: f64,
    pub hv_comfort_decel_mps2: f64,
    pub hv_jam_gap_m: f64,
    pub av_desired_speed_kmh: f64,
    pub av_headway_s: f64,
    pub av_max_accel_mps2: f64,
    pub av_comfort_decel_mps2: f64,
    pub av_jam_gap_m: f64,
    // Human factors. Scale and shape of the reaction-time distribution are
    // assumptions, not measured values; only the mean is pinned.
    pub reaction_mean_s: f64,
    pub reaction_scale_s: f64,
    pub reaction_shape: f64,
    pub reaction_min_s: f64,
    pub reaction_max_s: f64,
    pub accel_noise_sd_mps2: f64,
    pub anticipated_leaders: usize,
    // Turning.
    pub p_turn: f64,
    // Cooperation.
    pub detection_range_m: f64,
    pub merge_zone_m: f64,
    pub coop_headway_factor: f64,
    pub coop_gap_floor: f64,
    // Execution.
    pub dt_s: f64,
    pub replications: u32,
    pub base_seed: u64,
    pub out_dir: String,
    /// Test hook: swap the roles of the two rings.
    pub mirror_rings: bool,
}

impl ScenarioConfig {
    /// Standard setup with everything at its default; only the turn
    /// probability has no default and must be given.
    pub fn defaults(p_turn: f64) -> Self {
        Self {
            ring_radius_m: 50.0,
            connector_length_m: 100.0,
            speed_limit_kmh: 30.0,
            demand_veh_per_h_per_ring: 180.0,
            horizon_s: 1800.0,
            mix: FleetMix::pure(VehicleClass::Hv),
            vehicle_length_m: 5.0,
            hv_desired_speed_kmh: 120.0,
            hv_headway_s: 1.5,
            hv_max_accel_mps2: 1.5,
            hv_comfort_decel_mps2: 2.0,
            hv_jam_gap_m: 2.0,
            av_desired_speed_kmh: 120.0,
            av_headway_s: 0.5,
            av_max_accel_mps2: 1.5,
            av_comfort_decel_mps2: 2.0,
            av_jam_gap_m: 0.5,
            reaction_mean_s: 1.2,
            reaction_scale_s: 0.3,
            reaction_shape: 3.0,
            reaction_min_s: 0.3,
            reaction_max_s: 3.0,
            accel_noise_sd_mps2: 0.2,
            anticipated_leaders: 3,
            p_turn,
            detection_range_m: 30.0,
            merge_zone_m: 30.0,
            coop_headway_factor: 2.0,
            coop_gap_floor: 0.4,
            dt_s: 0.1,
            replications: 6,
            base_seed: 1,
            out_dir: "out".into(),
            mirror_rings: false,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("ring_radius_m", self.ring_radius_m),
            ("connector_length_m", self.connector_length_m),
            ("speed_limit_kmh", self.speed_limit_kmh),
            ("horizon_s", self.horizon_s),
            ("vehicle_length_m", self.vehicle_length_m),
            ("hv_desired_speed_kmh", self.hv_desired_speed_kmh),
            ("hv_headway_s", self.hv_headway_s),
            ("hv_max_accel_mps2", self.hv_max_accel_mps2),
            ("hv_comfort_decel_mps2", self.hv_comfort_decel_mps2),
            ("hv_jam_gap_m", self.hv_jam_gap_m),
            ("av_desired_speed_kmh", self.av_desired_speed_kmh),
            ("av_headway_s", self.av_headway_s),
            ("av_max_accel_mps2", self.av_max_accel_mps2),
            ("av_comfort_decel_mps2", self.av_comfort_decel_mps2),
            ("av_jam_gap_m", self.av_jam_gap_m),
            ("reaction_mean_s", self.reaction_mean_s),
            ("reaction_scale_s", self.reaction_scale_s),
            ("detection_range_m", self.detection_range_m),
            ("merge_zone_m", self.merge_zone_m),
            ("coop_headway_factor", self.coop_headway_factor),
            ("dt_s", self.dt_s),
        ];
        for (key, value) in positive {
            if !(value > 0.0) {
                return Err(Error::Config(format!("{key} must be positive, got {value}")));
            }
        }
        if self.demand_veh_per_h_per_ring < 0.0 {
            return Err(Error::Config("demand_veh_per_h_per_ring must be >= 0".into()));
        }
        if !(0.0..=1.0).contains(&self.p_turn) {
            return Err(Error::Config(format!("p_turn must lie in [0, 1], got {}", self.p_turn)));
        }
        if self.horizon_s < self.dt_s {
            return Err(Error::Config("horizon_s must be at least dt_s".into()));
        }
        let mix = self.mix;
        for (key, value) in [
            ("mix_hv", mix.hv),
            ("mix_connected_hv", mix.connected_hv),
            ("mix_av", mix.av),
            ("mix_cav", mix.cav),
        ] {
            if !(0.0..=1.0).contains(&value) {
                return Err(Error::Config(format!("{key} must lie in [0, 1], got {value}")));
            }
        }
        if (mix.sum() - 1.0).abs() > 1e-9 {
            return Err(Error::Config(format!(
                "mix_hv + mix_connected_hv + mix_av + mix_cav must sum to 1, got {}",
                mix.sum()
            )));
        }
        if !(0.0..=1.0).contains(&self.coop_gap_floor) {
            return Err(Error::Config("coop_gap_floor must lie in [0, 1]".into()));
        }
        if self.anticipated_leaders == 0 {
            return Err(Error::Config("anticipated_leaders must be at least 1".into()));
        }
        if self.reaction_min_s > self.reaction_max_s || self.reaction_min_s <= 0.0 {
            return Err(Error::Config("reaction bounds must satisfy 0 < min <= max".into()));
        }
        Ok(())
    }

    pub fn geometry(&self) -> GeometryConfig {
        GeometryConfig {
            ring_radii: [self.ring_radius_m, self.ring_radius_m],
            connector_length: self.connector_length_m,
            speed_limit: self.speed_limit_kmh / 3.6,
            detection_range: self.detection_range_m,
            merge_zone_length: self.merge_zone_m,
        }
    }

    pub fn hv_params(&self) -> DriverParams {
        DriverParams {
            desired_speed: self.hv_desired_speed_kmh / 3.6,
            safe_headway: self.hv_headway_s,
            max_accel: self.hv_max_accel_mps2,
            comfort_decel: self.hv_comfort_decel_mps2,
            jam_gap: self.hv_jam_gap_m,
        }
    }

    pub fn av_params(&self) -> DriverParams {
        DriverParams {
            desired_speed: self.av_desired_speed_kmh / 3.6,
            safe_headway: self.av_headway_s,
            max_accel: self.av_max_accel_mps2,
            comfort_decel: self.av_comfort_decel_mps2,
            jam_gap: self.av_jam_gap_m,
        }
    }

    pub fn sim_options(&self, replication: u32) -> SimOptions {
        SimOptions {
            dt: self.dt_s,
            horizon: self.horizon_s,
            demand_veh_per_h_per_ring: self.demand_veh_per_h_per_ring,
            p_turn: self.p_turn,
            mix: self.mix,
            hv_params: self.hv_params(),
            av_params: self.av_params(),
            vehicle_length: self.vehicle_length_m,
            reaction: ReactionConfig {
                mean: self.reaction_mean_s,
                scale: self.reaction_scale_s,
                shape: self.reaction_shape,
                min: self.reaction_min_s,
                max: self.reaction_max_s,
            },
            noise_sd: self.accel_noise_sd_mps2,
            anticipated_leaders: self.anticipated_leaders,
            coop: CooperationSettings {
                headway_factor: self.coop_headway_factor,
                gap_floor: self.coop_gap_floor,
            },
            base_seed: self.base_seed,
            replication,
            mirror_rings: self.mirror_rings,
        }
    }

    /// Composition-weighted standstill spacing reciprocal: the jam density
    /// the mixed fleet packs to.
    pub fn fleet_jam_density(&self) -> f64 {
        let l = self.vehicle_length_m;
        let mix = self.mix;
        let human = mix.hv + mix.connected_hv;
        let auto = mix.av + mix.cav;
        let spacing = human * (self.hv_jam_gap_m + l) + auto * (self.av_jam_gap_m + l);
        1.0 / spacing
    }

    /// Theoretical triangular diagram of the (composition-weighted) fleet at
    /// the link speed limit.
    pub fn fleet_fd(&self) -> Result<TriangularFd> {
        let v = self.speed_limit_kmh / 3.6;
        let mix = self.mix;
        let human = mix.hv + mix.connected_hv;
        let auto = mix.av + mix.cav;
        let headway = human * self.hv_headway_s + auto * self.av_headway_s;
        let jam_gap = human * self.hv_jam_gap_m + auto * self.av_jam_gap_m;
        TriangularFd::from_driver_params(headway, jam_gap, self.vehicle_length_m, v)
    }
}

/// Raw key-value file image; every key optional except `p_turn`.
#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawConfig {
    ring_radius_m: Option<f64>,
    connector_length_m: Option<f64>,
    speed_limit_kmh: Option<f64>,
    demand_veh_per_h_per_ring: Option<f64>,
    horizon_s: Option<f64>,
    mix_hv: Option<f64>,
    mix_connected_hv: Option<f64>,
    mix_av: Option<f64>,
    mix_cav: Option<f64>,
    vehicle_length_m: Option<f64>,
    hv_desired_speed_kmh: Option<f64>,
    hv_headway_s: Option<f64>,
    hv_max_accel_mps2: Option<f64>,
    hv_comfort_decel_mps2: Option<f64>,
    hv_jam_gap_m: Option<f64>,
    av_desired_speed_kmh: Option<f64>,
    av_headway_s: Option<f64>,
    av_max_accel_mps2: Option<f64>,
    av_comfort_decel_mps2: Option<f64>,
    av_jam_gap_m: Option<f64>,
    reaction_mean_s: Option<f64>,
    reaction_scale_s: Option<f64>,
    reaction_shape: Option<f64>,
    reaction_min_s: Option<f64>,
    reaction_max_s: Option<f64>,
    accel_noise_sd_mps2: Option<f64>,
    anticipated_leaders: Option<usize>,
    p_turn: Option<f64>,
    detection_range_m: Option<f64>,
    merge_zone_m: Option<f64>,
    coop_headway_factor: Option<f64>,
    coop_gap_floor: Option<f64>,
    dt_s: Option<f64>,
    replications: Option<u32>,
    base_seed: Option<u64>,
    out_dir: Option<String>,
}

/// Parses a flat key-value config. Unknown keys are rejected; all keys except
/// `p_turn` default to the standard setup values.
pub fn parse_config(text: &str) -> Result<ScenarioConfig> {
    let raw: RawConfig =
        toml::from_str(text).map_err(|e| Error::Config(format!("parse error: {e}")))?;
    let p_turn = raw
        .p_turn
        .ok_or_else(|| Error::Config("missing required key p_turn".into()))?;
    let mut cfg = ScenarioConfig::defaults(p_turn);

    macro_rules! take {
        ($($field:ident => $target:ident),* $(,)?) => {
            $(if let Some(v) = raw.$field { cfg.$target = v; })*
        };
    }
    take! {
        ring_radius_m => ring_radius_m,
        connector_length_m => connector_length_m,
        speed_limit_kmh => speed_limit_kmh,
        demand_veh_per_h_per_ring => demand_veh_per_h_per_ring,
        horizon_s => horizon_s,
        vehicle_length_m => vehicle_length_m,
        hv_desired_speed_kmh => hv_desired_speed_kmh,
        hv_headway_s => hv_headway_s,
        hv_max_accel_mps2 => hv_max_accel_mps2,
        hv_comfort_decel_mps2 => hv_comfort_decel_mps2,
        hv_jam_gap_m => hv_jam_gap_m,
        av_desired_speed_kmh => av_desired_speed_kmh,
        av_headway_s => av_headway_s,
        av_max_accel_mps2 => av_max_accel_mps2,
        av_comfort_decel_mps2 => av_comfort_decel_mps2,
        av_jam_gap_m => av_jam_gap_m,
        reaction_mean_s => reaction_mean_s,
        reaction_scale_s => reaction_scale_s,
        reaction_shape => reaction_shape,
        reaction_min_s => reaction_min_s,
        reaction_max_s => reaction_max_s,
        accel_noise_sd_mps2 => accel_noise_sd_mps2,
        anticipated_leaders => anticipated_leaders,
        detection_range_m => detection_range_m,
        merge_zone_m => merge_zone_m,
        coop_headway_factor => coop_headway_factor,
        coop_gap_floor => coop_gap_floor,
        dt_s => dt_s,
        replications => replications,
        base_seed => base_seed,
        out_dir => out_dir,
    }
    if raw.mix_hv.is_some()
        || raw.mix_connected_hv.is_some()
        || raw.mix_av.is_some()
        || raw.mix_cav.is_some()
    {
        cfg.mix = FleetMix {
            hv: raw.mix_hv.unwrap_or(0.0),
            connected_hv: raw.mix_connected_hv.unwrap_or(0.0),
            av: raw.mix_av.unwrap_or(0.0),
            cav: raw.mix_cav.unwrap_or(0.0),
        };
    }
    cfg.validate()?;
    Ok(cfg)
}

pub fn load_config(path: &Path) -> Result<ScenarioConfig> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
    parse_config(&text)
}

/// Canonical key-value rendering; loading it back yields an identical config.
pub fn save_config(cfg: &ScenarioConfig) -> String {
    let mut s = String::new();
    let mut kv = |k: &str, v: String| {
        s.push_str(k);
        s.push_str(" = ");
        s.push_str(&v);
        s.push('\n');
    };
    let f = |v: f64| {
        if v == v.trunc() && v.abs() < 1e15 {
            format!("{v:.1}")
        } else {
            format!("{v}")
        }
    };
    kv("ring_radius_m", f(cfg.ring_radius_m));
    kv("connector_length_m", f(cfg.connector_length_m));
    kv("speed_limit_kmh", f(cfg.speed_limit_kmh));
    kv("demand_veh_per_h_per_ring", f(cfg.demand_veh_per_h_per_ring));
    kv("horizon_s", f(cfg.horizon_s));
    kv("mix_hv", f(cfg.mix.hv));
    kv("mix_connected_hv", f(cfg.mix.connected_hv));
    kv("mix_av", f(cfg.mix.av));
    kv("mix_cav", f(cfg.mix.cav));
    kv("vehicle_length_m", f(cfg.vehicle_length_m));
    kv("hv_desired_speed_kmh", f(cfg.hv_desired_speed_kmh));
    kv("hv_headway_s", f(cfg.hv_headway_s));
    kv("hv_max_accel_mps2", f(cfg.hv_max_accel_mps2));
    kv("hv_comfort_decel_mps2", f(cfg.hv_comfort_decel_mps2));
    kv("hv_jam_gap_m", f(cfg.hv_jam_gap_m));
    kv("av_desired_speed_kmh", f(cfg.av_desired_speed_kmh));
    kv("av_headway_s", f(cfg.av_headway_s));
    kv("av_max_accel_mps2", f(cfg.av_max_accel_mps2));
    kv("av_comfort_decel_mps2", f(cfg.av_comfort_decel_mps2));
    kv("av_jam_gap_m", f(cfg.av_jam_gap_m));
    kv("reaction_mean_s", f(cfg.reaction_mean_s));
    kv("reaction_scale_s", f(cfg.reaction_scale_s));
    kv("reaction_shape", f(cfg.reaction_shape));
    kv("reaction_min_s", f(cfg.reaction_min_s));
    kv("reaction_max_s", f(cfg.reaction_max_s));
    kv("accel_noise_sd_mps2", f(cfg.accel_noise_sd_mps2));
    kv("anticipated_leaders", format!("{}", cfg.anticipated_leaders));
    kv("p_turn", f(cfg.p_turn));
    kv("detection_range_m", f(cfg.detection_range_m));
    kv("merge_zone_m", f(cfg.merge_zone_m));
    kv("coop_headway_factor", f(cfg.coop_headway_factor));
    kv("coop_gap_floor", f(cfg.coop_gap_floor));
    kv("dt_s", f(cfg.dt_s));
    kv("replications", format!("{}", cfg.replications));
    kv("base_seed", format!("{}", cfg.base_seed));
    kv("out_dir", format!("{:?}", cfg.out_dir));
    s
}

/// The preset experiments.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PresetId {
    ScenarioIHv,
    ScenarioIAv,
    ScenarioIIHv,
    ScenarioIIAv,
    ScenarioIICav,
    ScenarioIIIHv,
    ScenarioIIIAv,
    ScenarioIIICav,
    PenetrationSweepUnconnected,
    PenetrationSweepConnected,
}

impl PresetId {
    pub const ALL: [PresetId; 10] = [
        PresetId::ScenarioIHv,
        PresetId::ScenarioIAv,
        PresetId::ScenarioIIHv,
        PresetId::ScenarioIIAv,
        PresetId::ScenarioIICav,
        PresetId::ScenarioIIIHv,
        PresetId::ScenarioIIIAv,
        PresetId::ScenarioIIICav,
        PresetId::PenetrationSweepUnconnected,
        PresetId::PenetrationSweepConnected,
    ];

    pub fn name(self) -> &'static str {
        match self {
            PresetId::ScenarioIHv => "scenario_I_hv",
            PresetId::ScenarioIAv => "scenario_I_av",
            PresetId::ScenarioIIHv => "scenario_II_hv",
            PresetId::ScenarioIIAv => "scenario_II_av",
            PresetId::ScenarioIICav => "scenario_II_cav",
            PresetId::ScenarioIIIHv => "scenario_III_hv",
            PresetId::ScenarioIIIAv => "scenario_III_av",
            PresetId::ScenarioIIICav => "scenario_III_cav",
            PresetId::PenetrationSweepUnconnected => "penetration_sweep_unconnected",
            PresetId::PenetrationSweepConnected => "penetration_sweep_connected",
        }
    }

    /// The labeled scenario configs of this preset. Single-scenario presets
    /// yield one entry; the penetration sweeps yield one per level.
    pub fn configs(self) -> Vec<(String, ScenarioConfig)> {
        let single = |p_turn: f64, class: VehicleClass| {
            let mut cfg = ScenarioConfig::defaults(p_turn);
            cfg.mix = FleetMix::pure(class);
            vec![(self.name().to_string(), cfg)]
        };
        match self {
            PresetId::ScenarioIHv => single(0.0, VehicleClass::Hv),
            PresetId::ScenarioIAv => single(0.0, VehicleClass::Av),
            PresetId::ScenarioIIHv => single(0.15, VehicleClass::Hv),
            PresetId::ScenarioIIAv => single(0.15, VehicleClass::Av),
            PresetId::ScenarioIICav => single(0.15, VehicleClass::Cav),
            PresetId::ScenarioIIIHv => single(0.5, VehicleClass::Hv),
            PresetId::ScenarioIIIAv => single(0.5, VehicleClass::Av),
            PresetId::ScenarioIIICav => single(0.5, VehicleClass::Cav),
            PresetId::PenetrationSweepUnconnected | PresetId::PenetrationSweepConnected => {
                let connected = self == PresetId::PenetrationSweepConnected;
                [0.0, 0.25, 0.5, 0.75, 1.0]
                    .iter()
                    .map(|&cav| {
                        let mut cfg = ScenarioConfig::defaults(0.5);
                        cfg.mix = FleetMix {
                            hv: if connected { 0.0 } else { 1.0 - cav },
                            connected_hv: if connected { 1.0 - cav } else { 0.0 },
                            av: 0.0,
                            cav,
                        };
                        let label = format!("{}_p{:03}", self.name(), (cav * 100.0).round() as u32);
                        (label, cfg)
                    })
                    .collect()
            }
        }
    }
}

impl FromStr for PresetId {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        PresetId::ALL
            .iter()
            .copied()
            .find(|p| p.name() == s)
            .ok_or_else(|| {
                let names: Vec<&str> = PresetId::ALL.iter().map(|p| p.name()).collect();
                Error::Config(format!("unknown preset {s:?}; expected one of {names:?}"))
            })
    }
}

impl std::fmt::Display for PresetId {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn config_with_only_p_turn_gets_full_defaults() {
        let cfg = parse_config("p_turn = 0.15\n").unwrap();
        assert_eq!(cfg.ring_radius_m, 50.0);
        assert_eq!(cfg.connector_length_m, 100.0);
        assert_eq!(cfg.speed_limit_kmh, 30.0);
        assert_eq!(cfg.demand_veh_per_h_per_ring, 180.0);
        assert_eq!(cfg.horizon_s, 1800.0);
        assert_eq!(cfg.dt_s, 0.1);
        assert_eq!(cfg.replications, 6);
        assert_eq!(cfg.detection_range_m, 30.0);
        assert_eq!(cfg.mix, FleetMix::pure(VehicleClass::Hv));
        assert_eq!(cfg.hv_headway_s, 1.5);
        assert_eq!(cfg.av_headway_s, 0.5);
    }

    #[test]
    fn empty_config_errors_on_the_missing_turn_probability() {
        let err = parse_config("").unwrap_err();
        assert!(err.to_string().contains("p_turn"));
    }

    #[test]
    fn bad_mix_is_rejected_with_the_offending_keys() {
        let err = parse_config("p_turn = 0.1\nmix_av = 0.5\nmix_hv = 0.4\n").unwrap_err();
        assert!(err.to_string().contains("mix_"));
    }

    #[test]
    fn negative_dt_is_rejected() {
        assert!(parse_config("p_turn = 0.1\ndt_s = -0.1\n").is_err());
    }

    #[test]
    fn unknown_keys_are_rejected() {
        assert!(parse_config("p_turn = 0.1\nbogus_key = 3\n").is_err());
    }

    #[test]
    fn config_round_trips_through_save_and_parse() {
        let mut cfg = ScenarioConfig::defaults(0.15);
        cfg.mix = FleetMix { hv: 0.25, connected_hv: 0.25, av: 0.25, cav: 0.25 };
        cfg.base_seed = 99;
        cfg.horizon_s = 600.0;
        let text = save_config(&cfg);
        let back = parse_config(&text).unwrap();
        assert_eq!(cfg, back);
    }

    #[test]
    fn presets_resolve_complete_configs() {
        for preset in PresetId::ALL {
            let configs = preset.configs();
            assert!(!configs.is_empty());
            for (label, cfg) in &configs {
                cfg.validate().unwrap_or_else(|e| panic!("{label}: {e}"));
            }
        }
        assert_eq!(PresetId::PenetrationSweepConnected.configs().len(), 5);
        assert_eq!("scenario_II_av".parse::<PresetId>().unwrap(), PresetId::ScenarioIIAv);
        assert!("bogus".parse::<PresetId>().is_err());
    }

    #[test]
    fn fleet_jam_density_interpolates_between_classes() {
        let mut cfg = ScenarioConfig::defaults(0.5);
        cfg.mix = FleetMix { hv: 0.5, connected_hv: 0.0, av: 0.0, cav: 0.5 };
        let expect = 1.0 / (0.5 * 7.0 + 0.5 * 5.5);
        assert!((cfg.fleet_jam_density() - expect).abs() < 1e-12);
        let fd = cfg.fleet_fd().unwrap();
        assert!((fd.jam_density - expect).abs() < 1e-12);
    }
}
