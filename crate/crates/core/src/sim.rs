//! Fixed-timestep world update loop, per-vehicle delayed-history buffers,
//! seeded substreams, and the replication batch runner.

use std::collections::VecDeque;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha12Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;

use crate::cf::{
    cidm_accel, cidm_factors, idm_desired_gap, idm_free_accel, CfAccel, CooperationInput,
    CooperationSettings, CooperationState, DelayedSelf, DriverParams, HumanFactors,
    LeaderObservation, EMERGENCY_DECEL,
};
use crate::error::{Error, Result};
use crate::network::{
    build_two_ring, decide_turn, detect_merge_conflict, virtual_leader, GeometryConfig, LinkId,
    MergeCandidate, NodeRef, TurnChoice, TwoRingNetwork, FREE_ROAD_GAP, LINK_COUNT,
};
use crate::scenario::FleetMix;

/// Hard cap on the anticipation depth a history entry can store.
pub const MAX_LEADERS: usize = 4;
/// Leaders beyond this cumulative net gap contribute negligible braking and
/// are not collected, m.
pub const CHAIN_MAX_GAP: f64 = 150.0;

/// Simulation clock.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SimClock {
    pub step: u64,
    pub dt: f64,
    pub horizon: f64,
}

impl SimClock {
    pub fn time(&self) -> f64 {
        self.step as f64 * self.dt
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum VehicleClass {
    Hv,
    ConnectedHv,
    Av,
    Cav,
}

impl VehicleClass {
    pub fn is_human(self) -> bool {
        matches!(self, VehicleClass::Hv | VehicleClass::ConnectedHv)
    }

    /// Detectable by cooperative vehicles near merges.
    pub fn is_connected(self) -> bool {
        matches!(self, VehicleClass::ConnectedHv | VehicleClass::Cav)
    }

    pub fn label(self) -> &'static str {
        match self {
            VehicleClass::Hv => "hv",
            VehicleClass::ConnectedHv => "connected_hv",
            VehicleClass::Av => "av",
            VehicleClass::Cav => "cav",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "hv" => Some(VehicleClass::Hv),
            "connected_hv" => Some(VehicleClass::ConnectedHv),
            "av" => Some(VehicleClass::Av),
            "cav" => Some(VehicleClass::Cav),
            _ => None,
        }
    }
}

/// Truncated skew-normal reaction-time distribution.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ReactionConfig {
    pub mean: f64,
    pub scale: f64,
    pub shape: f64,
    pub min: f64,
    pub max: f64,
}

impl Default for ReactionConfig {
    fn default() -> Self {
        Self { mean: 1.2, scale: 0.3, shape: 3.0, min: 0.3, max: 3.0 }
    }
}

/// Draws one reaction time. The location parameter is chosen so that the
/// untruncated distribution has exactly the configured mean; the truncation
/// bounds cut only far-tail mass.
pub fn sample_reaction_time<R: Rng + ?Sized>(rng: &mut R, cfg: &ReactionConfig) -> f64 {
    let delta = cfg.shape / (1.0 + cfg.shape * cfg.shape).sqrt();
    let location = cfg.mean - cfg.scale * delta * (2.0 / std::f64::consts::PI).sqrt();
    loop {
        let u0: f64 = StandardNormal.sample(rng);
        let u1: f64 = StandardNormal.sample(rng);
        let z = delta * u0.abs() + (1.0 - delta * delta).sqrt() * u1;
        let x = location + cfg.scale * z;
        if (cfg.min..=cfg.max).contains(&x) {
            return x;
        }
    }
}

/// Seeds for a batch of replications.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ReplicationPlan {
    pub replications: u32,
    pub base_seed: u64,
}

impl ReplicationPlan {
    /// Reporting seed of one replication; substreams are derived from the
    /// (base seed, replication, vehicle, purpose) tuple directly.
    pub fn derived_seed(&self, replication: u32) -> u64 {
        splitmix64(self.base_seed ^ splitmix64(0x5EED_0000 + replication as u64))
    }
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

#[derive(Debug, Clone, Copy)]
enum StreamPurpose {
    Class = 1,
    Reaction = 2,
    Noise = 3,
    Turning = 4,
}

/// One independent substream per (vehicle, purpose), immune to draws made by
/// other vehicles or purposes.
fn substream(base_seed: u64, replication: u32, vehicle: u64, purpose: StreamPurpose) -> ChaCha12Rng {
    let mut s = base_seed;
    s = splitmix64(s ^ (replication as u64).wrapping_mul(0xA24B_AED4_963E_E407));
    s = splitmix64(s ^ vehicle.wrapping_mul(0x9FB2_1C65_1E98_DF25));
    s = splitmix64(s ^ purpose as u64);
    let mut seed = [0u8; 32];
    let mut x = s;
    for chunk in seed.chunks_mut(8) {
        x = splitmix64(x);
        chunk.copy_from_slice(&x.to_le_bytes());
    }
    ChaCha12Rng::from_seed(seed)
}

/// All knobs of one replication.
#[derive(Debug, Clone, PartialEq)]
pub struct SimOptions {
    pub dt: f64,
    pub horizon: f64,
    /// Loading rate per ring, veh/h. Zero disables insertion.
    pub demand_veh_per_h_per_ring: f64,
    pub p_turn: f64,
    pub mix: FleetMix,
    pub hv_params: DriverParams,
    pub av_params: DriverParams,
    pub vehicle_length: f64,
    pub reaction: ReactionConfig,
    pub noise_sd: f64,
    pub anticipated_leaders: usize,
    pub coop: CooperationSettings,
    pub base_seed: u64,
    pub replication: u32,
    /// Swap the roles of the two rings in the insertion schedule; used to
    /// check mirror symmetry.
    pub mirror_rings: bool,
}

impl SimOptions {
    pub fn params_for(&self, class: VehicleClass) -> DriverParams {
        match class {
            VehicleClass::Hv | VehicleClass::ConnectedHv => self.hv_params,
            VehicleClass::Av | VehicleClass::Cav => self.av_params,
        }
    }
}

#[derive(Debug, Clone, Copy)]
struct HistEntry {
    speed: f64,
    accel: f64,
    chain: [Option<(f64, f64)>; MAX_LEADERS],
    cross: Option<(f64, f64)>,
}

#[derive(Debug, Clone)]
struct HumanState {
    reaction_time: f64,
    hist: VecDeque<HistEntry>,
    cap: usize,
    noise_rng: ChaCha12Rng,
}

/// One vehicle in the world.
#[derive(Debug, Clone)]
pub struct Vehicle {
    pub id: u64,
    pub class: VehicleClass,
    pub params: DriverParams,
    pub length: f64,
    pub link: LinkId,
    /// Front-bumper position from the link start, m.
    pub pos: f64,
    pub speed: f64,
    /// Acceleration applied over the last step, m/s^2.
    pub accel: f64,
    pub decision: Option<TurnChoice>,
    pub cooperation: CooperationState,
    human: Option<HumanState>,
    turn_rng: ChaCha12Rng,
    held_logged: bool,
    emergency_on: bool,
    cross_stop_on: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EventKind {
    Insertion,
    Turn,
    Merge,
    MergeStop,
    EmergencyBrake,
    NodeBlock,
}

impl EventKind {
    pub fn label(self) -> &'static str {
        match self {
            EventKind::Insertion => "insertion",
            EventKind::Turn => "turn",
            EventKind::Merge => "merge",
            EventKind::MergeStop => "merge_stop",
            EventKind::EmergencyBrake => "emergency_brake",
            EventKind::NodeBlock => "node_block",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EventRecord {
    pub time: f64,
    pub vehicle: u64,
    pub kind: EventKind,
    pub detail: String,
}

/// One trajectory row: the state of one vehicle at the end of one step.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrajRecord {
    pub time: f64,
    pub vehicle: u64,
    pub class: VehicleClass,
    pub link: LinkId,
    pub pos: f64,
    pub speed: f64,
    pub accel: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct ReplicationSummary {
    pub insertions: u64,
    pub emergency_brakes: u64,
    pub merge_stops: u64,
    pub node_blocks: u64,
    pub final_vehicles: usize,
}

#[derive(Debug, Clone)]
pub struct ReplicationOutput {
    pub replication: u32,
    pub seed: u64,
    pub records: Vec<TrajRecord>,
    pub events: Vec<EventRecord>,
    pub summary: ReplicationSummary,
}

struct ObsBundle {
    chain: [Option<(f64, f64)>; MAX_LEADERS],
    /// The nearest chain leader shares the vehicle's link; a non-positive
    /// gap then means physical overlap rather than a path gap measured
    /// across a node.
    first_leader_same_link: bool,
    cross: Option<(f64, f64)>,
    /// The virtual gap is closed: the vehicle yields to the merge point.
    yielding: bool,
    /// Distance to the merge point while within detection range (CAV only).
    coop_dist: Option<f64>,
    conflict: bool,
}

/// The mutable simulation world.
pub struct World {
    pub net: TwoRingNetwork,
    pub opts: SimOptions,
    pub clock: SimClock,
    pub vehicles: Vec<Vehicle>,
    pub events: Vec<EventRecord>,
    pub summary: ReplicationSummary,
    occ: Vec<Vec<usize>>,
    inserted: [u64; 2],
    next_id: u64,
}

impl World {
    pub fn new(net: TwoRingNetwork, opts: SimOptions) -> Self {
        let clock = SimClock { step: 0, dt: opts.dt, horizon: opts.horizon };
        Self {
            net,
            opts,
            clock,
            vehicles: Vec::new(),
            events: Vec::new(),
            summary: ReplicationSummary::default(),
            occ: vec![Vec::new(); LINK_COUNT],
            inserted: [0, 0],
            next_id: 0,
        }
    }

    /// Places a vehicle directly; used by tests that start from a prepared
    /// state instead of the loading schedule.
    pub fn spawn(&mut self, class: VehicleClass, link: LinkId, pos: f64, speed: f64) -> u64 {
        let id = self.next_id;
        self.next_id += 1;
        let mut veh = self.build_vehicle(id, class, link, pos, speed);
        veh.decision = Some(decide_turn(&mut veh.turn_rng, self.opts.p_turn));
        let idx = self.vehicles.len();
        self.vehicles.push(veh);
        let slot = self.occ[link]
            .partition_point(|&j| self.vehicles[j].pos < pos);
        self.occ[link].insert(slot, idx);
        id
    }

    fn build_vehicle(&self, id: u64, class: VehicleClass, link: LinkId, pos: f64, speed: f64) -> Vehicle {
        let opts = &self.opts;
        let human = class.is_human().then(|| {
            let mut rng = substream(opts.base_seed, opts.replication, id, StreamPurpose::Reaction);
            let reaction_time = sample_reaction_time(&mut rng, &opts.reaction);
            let cap = (reaction_time / opts.dt).ceil() as usize + 2;
            HumanState {
                reaction_time,
                hist: VecDeque::with_capacity(cap + 1),
                cap,
                noise_rng: substream(opts.base_seed, opts.replication, id, StreamPurpose::Noise),
            }
        });
        Vehicle {
            id,
            class,
            params: opts.params_for(class),
            length: opts.vehicle_length,
            link,
            pos,
            speed,
            accel: 0.0,
            decision: None,
            cooperation: CooperationState::inactive(),
            human,
            turn_rng: substream(opts.base_seed, opts.replication, id, StreamPurpose::Turning),
            held_logged: false,
            emergency_on: false,
            cross_stop_on: false,
        }
    }

    fn observe(&self, i: usize) -> ObsBundle {
        let v = &self.vehicles[i];
        let want = if v.class.is_human() {
            self.opts.anticipated_leaders.clamp(1, MAX_LEADERS)
        } else {
            1
        };
        struct ChainWalk {
            chain: [Option<(f64, f64)>; MAX_LEADERS],
            found: usize,
            want: usize,
            lengths_sum: f64,
            own_speed: f64,
        }
        impl ChainWalk {
            /// Returns true when the walk is finished.
            fn consider(&mut self, rel_front: f64, lead: &Vehicle) -> bool {
                // Cumulative net gap: bumper-to-bumper distance with
                // intermediate vehicle lengths removed.
                let s_cum = rel_front - lead.length - self.lengths_sum;
                if s_cum > CHAIN_MAX_GAP {
                    return true;
                }
                self.chain[self.found] = Some((s_cum, self.own_speed - lead.speed));
                self.lengths_sum += lead.length;
                self.found += 1;
                self.found >= self.want
            }
        }
        let mut walk = ChainWalk {
            chain: [None; MAX_LEADERS],
            found: 0,
            want,
            lengths_sum: 0.0,
            own_speed: v.speed,
        };
        let mut done = false;
        let mut first_leader_same_link = false;

        // Leaders on the own link.
        let occ = &self.occ[v.link];
        let my_slot = occ
            .iter()
            .position(|&j| j == i)
            .expect("vehicle missing from link occupancy");
        if my_slot + 1 < occ.len() {
            first_leader_same_link = true;
        }
        for &j in &occ[my_slot + 1..] {
            let lead = &self.vehicles[j];
            if walk.consider(lead.pos - v.pos, lead) {
                done = true;
                break;
            }
        }

        // Continue along the vehicle's own route while the routing is known.
        if !done {
            let mut cur = v.link;
            let mut base = self.net.links[cur].length - v.pos;
            loop {
                let choice = if cur == v.link { v.decision } else { None };
                let Some(next) = self.net.next_link(cur, choice) else { break };
                let mut stop = false;
                for &j in &self.occ[next] {
                    if j == i {
                        stop = true;
                        break;
                    }
                    let lead = &self.vehicles[j];
                    if walk.consider(base + lead.pos, lead) {
                        stop = true;
                        break;
                    }
                }
                if stop {
                    break;
                }
                base += self.net.links[next].length;
                if base - walk.lengths_sum > CHAIN_MAX_GAP {
                    break;
                }
                cur = next;
            }
        }
        let chain = walk.chain;

        // Cross-approach observation inside the merge superposition zone.
        let mut cross = None;
        let mut yielding = false;
        let mut coop_dist = None;
        let mut conflict = false;
        if let Some(m_idx) = self.net.merge_for_approach(v.link) {
            let merge = self.net.merges[m_idx];
            let dist = self.net.links[v.link].length - v.pos;
            let other = self.net.other_approach(m_idx, v.link);
            let other_len = self.net.links[other].length;
            if dist <= merge.merge_zone_length {
                let mut cands: Vec<MergeCandidate> = Vec::new();
                for &j in &self.occ[other] {
                    let w = &self.vehicles[j];
                    let d = other_len - w.pos;
                    if d <= merge.merge_zone_length {
                        cands.push(MergeCandidate {
                            vehicle_id: w.id,
                            dist_to_merge: d,
                            length: w.length,
                            speed: w.speed,
                            connected: w.class.is_connected(),
                        });
                    }
                }
                let obs = virtual_leader(v.id, dist, v.speed, &cands);
                if obs.net_gap < FREE_ROAD_GAP * 0.5 {
                    if obs.net_gap <= 0.0 {
                        // Abreast of the counterpart in superimposed
                        // coordinates: the loser yields. A moving winner
                        // clears the conflict space, so the loser trails its
                        // rear through the node at standstill spacing; a
                        // standing winner pins the loser where it is.
                        yielding = true;
                        if obs.leader_speed < 0.5 {
                            cross = Some((obs.net_gap, v.speed));
                        } else {
                            cross = Some((obs.net_gap.max(0.5), obs.speed_difference));
                        }
                    } else {
                        cross = Some((obs.net_gap, obs.speed_difference));
                    }
                }
            }
            if v.class == VehicleClass::Cav && dist <= merge.detection_range {
                coop_dist = Some(dist);
                let mut cands: Vec<MergeCandidate> = Vec::new();
                for &j in &self.occ[other] {
                    let w = &self.vehicles[j];
                    cands.push(MergeCandidate {
                        vehicle_id: w.id,
                        dist_to_merge: other_len - w.pos,
                        length: w.length,
                        speed: w.speed,
                        connected: w.class.is_connected(),
                    });
                }
                conflict = detect_merge_conflict(&cands, merge.detection_range);
            }
        }

        ObsBundle {
            chain,
            first_leader_same_link,
            cross,
            yielding,
            coop_dist,
            conflict,
        }
    }

    /// Acceleration of vehicle `i` from the beginning-of-step snapshot.
    fn eval_accel(&mut self, i: usize, bundle: &ObsBundle) -> f64 {
        let limit = self.net.links[self.vehicles[i].link].speed_limit;
        let coop_settings = self.opts.coop;
        let noise_sd = self.opts.noise_sd;
        let anticipated = self.opts.anticipated_leaders.clamp(1, MAX_LEADERS);
        let dt = self.opts.dt;
        let v = &mut self.vehicles[i];
        let p_eff = v.params.with_speed_cap(limit);
        let speed = v.speed;

        let to_obs = |slot: (f64, f64), own: f64| LeaderObservation {
            net_gap: slot.0,
            speed_difference: slot.1,
            leader_speed: own - slot.1,
        };

        match v.class {
            VehicleClass::Av | VehicleClass::Cav => {
                let cs = if v.class == VehicleClass::Cav {
                    match bundle.coop_dist {
                        Some(d) if bundle.conflict => cidm_factors(
                            &CooperationInput {
                                conflict: true,
                                distance_to_merge: d,
                                detection_range: self.net.merges[0].detection_range,
                            },
                            &coop_settings,
                        ),
                        _ => CooperationState::inactive(),
                    }
                } else {
                    CooperationState::inactive()
                };
                v.cooperation = cs;
                // The widened headway opens the own-lane gap that admits the
                // merging counterpart; the gap factor additionally tightens
                // the style towards the virtual leader as the merge nears.
                let own_cs = CooperationState { gap_factor: 1.0, ..cs };
                let mut acc = match bundle.chain[0] {
                    Some(s) => cidm_accel(&p_eff, &own_cs, speed, &to_obs(s, speed)),
                    None => CfAccel::Accel(idm_free_accel(&p_eff, speed)),
                };
                if let Some(c) = bundle.cross {
                    acc = acc.min(cidm_accel(&p_eff, &cs, speed, &to_obs(c, speed)));
                }
                acc.value()
            }
            VehicleClass::Hv | VehicleClass::ConnectedHv => {
                let human = v.human.as_mut().expect("human state");
                human.hist.push_back(HistEntry {
                    speed,
                    accel: v.accel,
                    chain: bundle.chain,
                    cross: bundle.cross,
                });
                while human.hist.len() > human.cap {
                    human.hist.pop_front();
                }
                let entry = delayed_entry(&human.hist, human.reaction_time, dt);
                let hf = HumanFactors {
                    reaction_time: human.reaction_time,
                    noise_sd,
                    anticipated_leaders: anticipated,
                };
                let noise = if noise_sd > 0.0 {
                    let z: f64 = StandardNormal.sample(&mut human.noise_rng);
                    z * noise_sd
                } else {
                    0.0
                };
                let delayed = DelayedSelf { speed: entry.speed, accel: entry.accel };
                let mut leaders: Vec<LeaderObservation> = Vec::with_capacity(MAX_LEADERS);
                for slot in entry.chain.iter().take(anticipated) {
                    match slot {
                        Some(s) => leaders.push(to_obs(*s, entry.speed)),
                        None => break,
                    }
                }
                let mut acc = if leaders.is_empty() {
                    CfAccel::Accel(
                        p_eff.max_accel
                            * (1.0
                                - ((entry.speed + hf.reaction_time * entry.accel).max(0.0)
                                    / p_eff.desired_speed)
                                    .powi(4))
                            + noise,
                    )
                } else {
                    crate::cf::hdm_accel_with_noise(&p_eff, &hf, delayed, &leaders, noise)
                };
                if let Some(c) = entry.cross {
                    let single = HumanFactors { anticipated_leaders: 1, ..hf };
                    let ca = crate::cf::hdm_accel_with_noise(
                        &p_eff,
                        &single,
                        delayed,
                        &[to_obs(c, entry.speed)],
                        noise,
                    );
                    acc = acc.min(ca);
                }
                acc.value().max(-EMERGENCY_DECEL)
            }
        }
    }

    /// One synchronous update of the whole world.
    pub fn step(&mut self) -> Result<()> {
        let n = self.vehicles.len();
        let dt = self.opts.dt;
        let t_now = self.clock.time();

        // (1)+(2): accelerations from the beginning-of-step snapshot.
        let bundles: Vec<ObsBundle> = (0..n).map(|i| self.observe(i)).collect();
        let mut accels = vec![0.0; n];
        for i in 0..n {
            let a = self.eval_accel(i, &bundles[i]);
            if !a.is_finite() {
                return Err(Error::Sim(format!(
                    "non-finite acceleration for vehicle {} at t={t_now}",
                    self.vehicles[i].id
                )));
            }
            accels[i] = a;
            let b = &bundles[i];
            // Overlap on the own link: only possible for noisy human fleets.
            let overlap = b.first_leader_same_link
                && matches!(b.chain[0], Some((s, _)) if s <= 0.0);
            // A closed virtual gap that has actually brought the vehicle to
            // a halt in front of the merge point.
            let merge_halt = b.yielding && self.vehicles[i].speed < 1.0;
            let v = &mut self.vehicles[i];
            if overlap && !v.emergency_on {
                self.summary.emergency_brakes += 1;
                self.events.push(EventRecord {
                    time: t_now,
                    vehicle: v.id,
                    kind: EventKind::EmergencyBrake,
                    detail: format!("link {} gap closed", v.link),
                });
            }
            v.emergency_on = overlap;
            if merge_halt && !v.cross_stop_on {
                self.summary.merge_stops += 1;
                self.events.push(EventRecord {
                    time: t_now,
                    vehicle: v.id,
                    kind: EventKind::MergeStop,
                    detail: format!("link {} stopped by virtual gap", v.link),
                });
            }
            v.cross_stop_on = merge_halt;
        }

        // (3): ballistic kinematics with a stop clamp.
        for i in 0..n {
            let a = accels[i];
            let v = &mut self.vehicles[i];
            let speed_next = v.speed + a * dt;
            let (dx, speed_next) = if speed_next >= 0.0 {
                (v.speed * dt + 0.5 * a * dt * dt, speed_next)
            } else {
                let t_stop = if a < 0.0 { -v.speed / a } else { 0.0 };
                (v.speed * t_stop + 0.5 * a * t_stop * t_stop, 0.0)
            };
            v.accel = a;
            v.speed = speed_next;
            v.pos += dx.max(0.0);
            if !v.pos.is_finite() {
                return Err(Error::Sim(format!(
                    "non-finite position for vehicle {} at t={t_now}",
                    v.id
                )));
            }
        }

        // (4): link transitions in vehicle-id order with entry gates.
        let mut occ: Vec<Vec<usize>> = vec![Vec::new(); LINK_COUNT];
        let mut pending: Vec<usize> = Vec::new();
        for i in 0..n {
            let v = &self.vehicles[i];
            if v.pos > self.net.links[v.link].length {
                pending.push(i);
            } else {
                occ[v.link].push(i);
            }
        }
        for list in &mut occ {
            list.sort_unstable_by(|&a, &b| {
                let va = &self.vehicles[a];
                let vb = &self.vehicles[b];
                va.pos.partial_cmp(&vb.pos).unwrap().then(va.id.cmp(&vb.id))
            });
        }
        for &i in &pending {
            self.resolve_crossing(i, &mut occ, t_now)?;
        }

        // (5): demand loading.
        self.insert_vehicles(&mut occ);

        // (6): commit occupancy, advance the clock.
        self.occ = occ;
        self.clock.step += 1;
        self.summary.final_vehicles = self.vehicles.len();
        Ok(())
    }

    fn resolve_crossing(
        &mut self,
        i: usize,
        occ: &mut [Vec<usize>],
        t_now: f64,
    ) -> Result<()> {
        let (old_link, old_len, overshoot, decision, id) = {
            let v = &self.vehicles[i];
            let old_len = self.net.links[v.link].length;
            (v.link, old_len, v.pos - old_len, v.decision, v.id)
        };
        let node = self.net.node_at_end(old_link);
        let (target, crossed_choice) = match node {
            NodeRef::Merge(m) => (self.net.merges[m].outgoing, None),
            NodeRef::Diverge(d) => {
                let choice = decision.unwrap_or(TurnChoice::Stay);
                let dv = &self.net.diverges[d];
                let t = match choice {
                    TurnChoice::Stay => dv.stay,
                    TurnChoice::Switch => dv.switch,
                };
                (t, Some(choice))
            }
        };
        if overshoot > self.net.links[target].length {
            return Err(Error::Sim(format!(
                "vehicle {id} crossed more than one link boundary in a step"
            )));
        }
        let entry = overshoot;
        let list = &occ[target];
        let slot = list.partition_point(|&j| self.vehicles[j].pos < entry);
        let mut blocked = false;
        if slot < list.len() {
            let w = &self.vehicles[list[slot]];
            if w.pos - w.length - entry < 0.0 {
                blocked = true;
            }
        }
        if slot > 0 {
            let w = &self.vehicles[list[slot - 1]];
            if entry - self.vehicles[i].length - w.pos < 0.0 {
                blocked = true;
            }
        }
        if blocked {
            let already_logged = self.vehicles[i].held_logged;
            let v = &mut self.vehicles[i];
            v.pos = old_len;
            v.speed = 0.0;
            occ[old_link].push(i);
            if !already_logged {
                v.held_logged = true;
                match node {
                    NodeRef::Merge(m) => {
                        self.summary.merge_stops += 1;
                        self.events.push(EventRecord {
                            time: t_now,
                            vehicle: id,
                            kind: EventKind::MergeStop,
                            detail: format!("held at merge {m}"),
                        });
                    }
                    NodeRef::Diverge(d) => {
                        self.summary.node_blocks += 1;
                        self.events.push(EventRecord {
                            time: t_now,
                            vehicle: id,
                            kind: EventKind::NodeBlock,
                            detail: format!("held at diverge {d}"),
                        });
                    }
                }
            }
            return Ok(());
        }

        let p_turn = self.opts.p_turn;
        let v = &mut self.vehicles[i];
        v.link = target;
        v.pos = entry;
        v.held_logged = false;
        occ[target].insert(slot, i);
        match node {
            NodeRef::Merge(m) => {
                // Entering a diverge approach: draw the turning decision for
                // this passage now.
                v.decision = Some(decide_turn(&mut v.turn_rng, p_turn));
                self.events.push(EventRecord {
                    time: t_now,
                    vehicle: id,
                    kind: EventKind::Merge,
                    detail: format!("merge {m}"),
                });
            }
            NodeRef::Diverge(d) => {
                v.decision = None;
                let choice = match crossed_choice.unwrap() {
                    TurnChoice::Stay => "stay",
                    TurnChoice::Switch => "switch",
                };
                self.events.push(EventRecord {
                    time: t_now,
                    vehicle: id,
                    kind: EventKind::Turn,
                    detail: format!("diverge {d} {choice}"),
                });
            }
        }
        Ok(())
    }

    fn insert_vehicles(&mut self, occ: &mut [Vec<usize>]) {
        let rate = self.opts.demand_veh_per_h_per_ring;
        if rate <= 0.0 {
            return;
        }
        let t_next = (self.clock.step + 1) as f64 * self.opts.dt;
        let headway = 3600.0 / rate;
        let scheduled = ((t_next / headway) + 1e-9).floor() as u64;
        let rings: [usize; 2] = if self.opts.mirror_rings { [1, 0] } else { [0, 1] };
        for ring in rings {
            if self.inserted[ring] >= scheduled {
                continue;
            }
            if self.try_insert(ring, occ, t_next) {
                self.inserted[ring] += 1;
            }
        }
    }

    fn try_insert(&mut self, ring: usize, occ: &mut [Vec<usize>], t: f64) -> bool {
        let link = self.net.entry_link(ring);
        let limit = self.net.links[link].speed_limit;
        let entry = self.opts.vehicle_length;
        let speed = limit;
        let id = self.next_id;
        let mut class_rng = substream(
            self.opts.base_seed,
            self.opts.replication,
            id,
            StreamPurpose::Class,
        );
        let class = self.opts.mix.draw(&mut class_rng);
        let my_params = self.opts.params_for(class).with_speed_cap(limit);

        // The gap to the next vehicle downstream must permit entry at the
        // speed limit without immediate braking. Entering at full speed into
        // a same-speed stream, anything behind only needs standstill
        // clearance; the car-following law absorbs the rest.
        let list = &occ[link];
        let slot = list.partition_point(|&j| self.vehicles[j].pos < entry);
        if slot < list.len() {
            let w = &self.vehicles[list[slot]];
            let gap = w.pos - w.length - entry;
            if gap < idm_desired_gap(&my_params, speed, speed - w.speed) {
                return false;
            }
        }
        if slot > 0 {
            let w = &self.vehicles[list[slot - 1]];
            let gap = entry - self.opts.vehicle_length - w.pos;
            if gap < w.params.jam_gap {
                return false;
            }
        }

        self.next_id += 1;
        let mut veh = self.build_vehicle(id, class, link, entry, speed);
        veh.decision = Some(decide_turn(&mut veh.turn_rng, self.opts.p_turn));
        let idx = self.vehicles.len();
        self.vehicles.push(veh);
        let slot = occ[link].partition_point(|&j| self.vehicles[j].pos < entry);
        occ[link].insert(slot, idx);
        self.summary.insertions += 1;
        self.events.push(EventRecord {
            time: t,
            vehicle: id,
            kind: EventKind::Insertion,
            detail: format!("ring {ring} class {}", class.label()),
        });
        true
    }
}

/// Delayed history lookup with linear interpolation between stored steps.
/// Queries earlier than the first entry clamp to it (the insertion state
/// pads the cold start).
fn delayed_entry(hist: &VecDeque<HistEntry>, reaction_time: f64, dt: f64) -> HistEntry {
    let last = hist.len() - 1;
    let f = (last as f64 - reaction_time / dt).max(0.0);
    let i0 = f.floor() as usize;
    let i1 = (i0 + 1).min(last);
    let w = f - i0 as f64;
    let a = &hist[i0];
    let b = &hist[i1];
    let lerp = |x: f64, y: f64| x + (y - x) * w;
    let lerp_slot = |x: Option<(f64, f64)>, y: Option<(f64, f64)>| match (x, y) {
        (Some(p), Some(q)) => Some((lerp(p.0, q.0), lerp(p.1, q.1))),
        (Some(p), None) => Some(p),
        (None, Some(q)) => Some(q),
        (None, None) => None,
    };
    let mut chain = [None; MAX_LEADERS];
    for (k, slot) in chain.iter_mut().enumerate() {
        *slot = lerp_slot(a.chain[k], b.chain[k]);
    }
    HistEntry {
        speed: lerp(a.speed, b.speed),
        accel: lerp(a.accel, b.accel),
        chain,
        cross: lerp_slot(a.cross, b.cross),
    }
}

/// Runs one replication and returns the full trajectory table and event log.
pub fn run_replication(geom: &GeometryConfig, opts: &SimOptions) -> Result<ReplicationOutput> {
    let net = build_two_ring(geom)?;
    let mut world = World::new(net, opts.clone());
    let steps = (opts.horizon / opts.dt).round() as u64;
    let mut records: Vec<TrajRecord> = Vec::new();
    for _ in 0..steps {
        world.step()?;
        let t = world.clock.time();
        for v in &world.vehicles {
            records.push(TrajRecord {
                time: t,
                vehicle: v.id,
                class: v.class,
                link: v.link,
                pos: v.pos,
                speed: v.speed,
                accel: v.accel,
            });
        }
    }
    let plan = ReplicationPlan { replications: 0, base_seed: opts.base_seed };
    Ok(ReplicationOutput {
        replication: opts.replication,
        seed: plan.derived_seed(opts.replication),
        records,
        events: world.events,
        summary: world.summary,
    })
}

/// Runs a batch of replications, mapping each output through `f` (so large
/// trajectory tables can be reduced before the next replication finishes).
/// Results are in replication order and independent of the parallelism
/// degree; failures are reported per replication.
pub fn run_batch_map<T: Send>(
    geom: &GeometryConfig,
    base_opts: &SimOptions,
    plan: &ReplicationPlan,
    parallelism: usize,
    f: impl Fn(ReplicationOutput) -> Result<T> + Sync,
) -> Vec<Result<T>> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(parallelism.max(1))
        .build()
        .expect("thread pool");
    pool.install(|| {
        (0..plan.replications)
            .into_par_iter()
            .map(|rep| {
                let opts = SimOptions {
                    base_seed: plan.base_seed,
                    replication: rep,
                    ..base_opts.clone()
                };
                run_replication(geom, &opts).and_then(&f)
            })
            .collect()
    })
}

/// Runs a batch and keeps the full outputs.
pub fn run_batch(
    geom: &GeometryConfig,
    base_opts: &SimOptions,
    plan: &ReplicationPlan,
    parallelism: usize,
) -> Vec<Result<ReplicationOutput>> {
    run_batch_map(geom, base_opts, plan, parallelism, Ok)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scenario::FleetMix;

    const V30: f64 = 30.0 / 3.6;

    fn av_params() -> DriverParams {
        DriverParams {
            desired_speed: 120.0 / 3.6,
            safe_headway: 0.5,
            max_accel: 1.5,
            comfort_decel: 2.0,
            jam_gap: 0.5,
        }
    }

    fn hv_params() -> DriverParams {
        DriverParams {
            desired_speed: 120.0 / 3.6,
            safe_headway: 1.5,
            max_accel: 1.5,
            comfort_decel: 2.0,
            jam_gap: 2.0,
        }
    }

    fn quiet_opts(mix: FleetMix, p_turn: f64, horizon: f64) -> SimOptions {
        SimOptions {
            dt: 0.1,
            horizon,
            demand_veh_per_h_per_ring: 0.0,
            p_turn,
            mix,
            hv_params: hv_params(),
            av_params: av_params(),
            vehicle_length: 5.0,
            reaction: ReactionConfig::default(),
            noise_sd: 0.2,
            anticipated_leaders: 3,
            coop: CooperationSettings::default(),
            base_seed: 7,
            replication: 0,
            mirror_rings: false,
        }
    }

    fn world(opts: SimOptions) -> World {
        let net = build_two_ring(&GeometryConfig::default()).unwrap();
        World::new(net, opts)
    }

    #[test]
    fn reaction_times_have_the_configured_mean_and_bounds() {
        let cfg = ReactionConfig::default();
        let mut rng = ChaCha12Rng::seed_from_u64(5);
        let n = 100_000;
        let mut sum = 0.0;
        for _ in 0..n {
            let x = sample_reaction_time(&mut rng, &cfg);
            assert!((cfg.min..=cfg.max).contains(&x));
            sum += x;
        }
        let mean = sum / n as f64;
        assert!((mean - 1.2).abs() < 0.01, "mean {mean}");
    }

    #[test]
    fn reaction_sampling_is_deterministic() {
        let cfg = ReactionConfig::default();
        let draw = || {
            let mut rng = ChaCha12Rng::seed_from_u64(11);
            (0..64)
                .map(|_| sample_reaction_time(&mut rng, &cfg).to_bits())
                .collect::<Vec<_>>()
        };
        assert_eq!(draw(), draw());
    }

    #[test]
    fn derived_seeds_are_pairwise_distinct() {
        let plan = ReplicationPlan { replications: 6, base_seed: 1 };
        let seeds: Vec<u64> = (0..6).map(|i| plan.derived_seed(i)).collect();
        for i in 0..6 {
            for j in 0..i {
                assert_ne!(seeds[i], seeds[j]);
            }
        }
    }

    #[test]
    fn empty_world_steps_without_changes() {
        let mut w = world(quiet_opts(FleetMix::pure(VehicleClass::Av), 0.0, 10.0));
        w.step().unwrap();
        assert_eq!(w.vehicles.len(), 0);
        assert_eq!(w.clock.step, 1);
    }

    #[test]
    fn single_av_converges_to_the_speed_limit() {
        let mut w = world(quiet_opts(FleetMix::pure(VehicleClass::Av), 0.0, 600.0));
        w.spawn(VehicleClass::Av, 0, 10.0, 0.0);
        for _ in 0..6000 {
            w.step().unwrap();
        }
        let v = &w.vehicles[0];
        assert!((v.speed - V30).abs() < 0.1, "speed {}", v.speed);
        assert_eq!(w.summary.emergency_brakes, 0);
    }

    #[test]
    fn av_platoon_at_the_fixed_point_stays_there() {
        // Five vehicles evenly spaced on one ring; the equilibrium speed for
        // the implied net gap solves the IDM steady state exactly.
        let opts = quiet_opts(FleetMix::pure(VehicleClass::Av), 0.0, 200.0);
        let mut w = world(opts.clone());
        let ring_len = w.net.ring_length();
        let n = 5usize;
        let spacing = ring_len / n as f64;
        let gap = spacing - opts.vehicle_length;
        let p = av_params().with_speed_cap(V30);
        // Bisection on speed: f(v) = 1 - (v/v0)^4 - (s*(v)/gap)^2.
        let f = |v: f64| {
            1.0 - (v / p.desired_speed).powi(4)
                - (idm_desired_gap(&p, v, 0.0) / gap).powi(2)
        };
        let (mut lo, mut hi) = (0.0, p.desired_speed);
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if f(mid) > 0.0 {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        let v_eq = 0.5 * (lo + hi);
        // Lay the platoon across both ring segments.
        let half = ring_len / 2.0;
        for m in 0..n {
            let x = 6.0 + m as f64 * spacing;
            if x < half {
                w.spawn(VehicleClass::Av, 0, x, v_eq);
            } else {
                w.spawn(VehicleClass::Av, 1, x - half, v_eq);
            }
        }
        for _ in 0..1000 {
            w.step().unwrap();
        }
        for v in &w.vehicles {
            assert!((v.speed - v_eq).abs() < 1e-6, "drifted to {}", v.speed);
        }
        assert_eq!(w.summary.emergency_brakes, 0);
    }

    #[test]
    fn follower_at_the_equilibrium_gap_holds_zero_acceleration() {
        let opts = quiet_opts(FleetMix::pure(VehicleClass::Av), 0.0, 10.0);
        let mut w = world(opts);
        // The steady-state gap balances the free term against the braking
        // interaction exactly.
        let p = av_params().with_speed_cap(V30);
        let v = 5.0;
        let gap = idm_desired_gap(&p, v, 0.0) / (1.0 - (v / p.desired_speed).powi(4)).sqrt();
        w.spawn(VehicleClass::Av, 0, 20.0, v);
        w.spawn(VehicleClass::Av, 0, 20.0 + gap + 5.0, v);
        w.step().unwrap();
        assert!(w.vehicles[0].accel.abs() < 1e-9, "accel {}", w.vehicles[0].accel);
    }

    #[test]
    fn insertion_schedule_is_deterministic_and_counts_match() {
        // Before the first inserted vehicle wraps around the ring the entry
        // is always clear, so the count matches the schedule exactly.
        let mut opts = quiet_opts(FleetMix::pure(VehicleClass::Av), 0.0, 50.0);
        opts.demand_veh_per_h_per_ring = 180.0;
        let mut w = world(opts);
        for _ in 0..500 {
            w.step().unwrap();
        }
        assert_eq!(w.summary.insertions, 4);
        assert_eq!(w.inserted, [2, 2]);
    }

    #[test]
    fn blocked_insertions_are_queued_until_feasible() {
        // A stopped vehicle parked on the entry point blocks the schedule;
        // the backlog stays queued rather than being dropped.
        let mut opts = quiet_opts(FleetMix::pure(VehicleClass::Av), 0.0, 100.0);
        opts.demand_veh_per_h_per_ring = 180.0;
        let mut w = world(opts);
        // A wall of stopped vehicles covering the entry region of ring 1.
        for m in 0..20 {
            w.spawn(VehicleClass::Av, 0, 6.0 + 5.5 * m as f64, 0.0);
        }
        for _ in 0..400 {
            w.step().unwrap();
        }
        // Ring 2 inserts on schedule; ring 1 lags behind it.
        assert_eq!(w.inserted[1], 2);
        assert!(w.inserted[0] < 2);
    }

    #[test]
    fn zero_demand_inserts_nothing() {
        let mut w = world(quiet_opts(FleetMix::pure(VehicleClass::Av), 0.0, 10.0));
        for _ in 0..100 {
            w.step().unwrap();
        }
        assert_eq!(w.summary.insertions, 0);
    }

    #[test]
    fn speeds_never_go_negative() {
        let mut opts = quiet_opts(FleetMix::pure(VehicleClass::Hv), 0.15, 120.0);
        opts.demand_veh_per_h_per_ring = 600.0;
        let out = run_replication(&GeometryConfig::default(), &opts).unwrap();
        assert!(out.records.iter().all(|r| r.speed >= 0.0));
    }

    #[test]
    fn no_connector_records_without_turning() {
        let mut opts = quiet_opts(FleetMix::pure(VehicleClass::Hv), 0.0, 300.0);
        opts.demand_veh_per_h_per_ring = 180.0;
        let out = run_replication(&GeometryConfig::default(), &opts).unwrap();
        assert!(out.summary.insertions > 0);
        assert!(out
            .records
            .iter()
            .all(|r| r.link != crate::network::LINK_C1 && r.link != crate::network::LINK_C2));
    }

    #[test]
    fn replications_are_reproducible() {
        let mut opts = quiet_opts(FleetMix::pure(VehicleClass::Hv), 0.15, 200.0);
        opts.demand_veh_per_h_per_ring = 360.0;
        let a = run_replication(&GeometryConfig::default(), &opts).unwrap();
        let b = run_replication(&GeometryConfig::default(), &opts).unwrap();
        assert_eq!(a.records, b.records);
        assert_eq!(a.events, b.events);
    }

    #[test]
    fn batch_outputs_do_not_depend_on_parallelism() {
        let mut opts = quiet_opts(FleetMix::pure(VehicleClass::Av), 0.15, 150.0);
        opts.demand_veh_per_h_per_ring = 360.0;
        let plan = ReplicationPlan { replications: 4, base_seed: 3 };
        let geom = GeometryConfig::default();
        let serial = run_batch(&geom, &opts, &plan, 1);
        let parallel = run_batch(&geom, &opts, &plan, 4);
        for (a, b) in serial.iter().zip(parallel.iter()) {
            let (a, b) = (a.as_ref().unwrap(), b.as_ref().unwrap());
            assert_eq!(a.records, b.records);
            assert_eq!(a.events, b.events);
        }
    }

    #[test]
    fn mirrored_runs_produce_mirrored_trajectories() {
        use crate::network::{LINK_A1, LINK_A2, LINK_B1, LINK_B2, LINK_C1, LINK_C2};
        let mut opts = quiet_opts(FleetMix::pure(VehicleClass::Hv), 0.15, 200.0);
        opts.demand_veh_per_h_per_ring = 360.0;
        let base = run_replication(&GeometryConfig::default(), &opts).unwrap();
        let mut mirrored_opts = opts.clone();
        mirrored_opts.mirror_rings = true;
        let mirrored = run_replication(&GeometryConfig::default(), &mirrored_opts).unwrap();
        let map = |l: LinkId| match l {
            LINK_A1 => LINK_A2,
            LINK_B1 => LINK_B2,
            LINK_C1 => LINK_C2,
            LINK_A2 => LINK_A1,
            LINK_B2 => LINK_B1,
            _ => LINK_C1,
        };
        assert_eq!(base.records.len(), mirrored.records.len());
        for (a, b) in base.records.iter().zip(mirrored.records.iter()) {
            assert_eq!(a.time, b.time);
            assert_eq!(a.vehicle, b.vehicle);
            assert_eq!(map(a.link), b.link);
            assert_eq!(a.pos.to_bits(), b.pos.to_bits());
            assert_eq!(a.speed.to_bits(), b.speed.to_bits());
        }
    }

    #[test]
    fn av_only_merge_traffic_stops_on_virtual_gaps_without_collisions() {
        let mut opts = quiet_opts(FleetMix::pure(VehicleClass::Av), 0.5, 600.0);
        opts.demand_veh_per_h_per_ring = 360.0;
        let out = run_replication(&GeometryConfig::default(), &opts).unwrap();
        assert_eq!(out.summary.emergency_brakes, 0, "own-lane gap closed in AV run");
        assert_eq!(out.summary.node_blocks, 0);
    }

    #[test]
    fn fleet_mix_draw_fractions_match() {
        let mix = FleetMix { hv: 0.0, connected_hv: 0.5, av: 0.0, cav: 0.5 };
        let mut rng = ChaCha12Rng::seed_from_u64(13);
        let n = 10_000;
        let cavs = (0..n)
            .filter(|_| mix.draw(&mut rng) == VehicleClass::Cav)
            .count();
        let frac = cavs as f64 / n as f64;
        assert!((frac - 0.5).abs() < 0.015, "fraction {frac}");
    }

    #[test]
    fn history_interpolation_clamps_to_the_cold_start() {
        let mut hist = VecDeque::new();
        hist.push_back(HistEntry { speed: 5.0, accel: 0.5, chain: [None; MAX_LEADERS], cross: None });
        let e = delayed_entry(&hist, 1.2, 0.1);
        assert_eq!(e.speed, 5.0);
        assert_eq!(e.accel, 0.5);
        hist.push_back(HistEntry { speed: 6.0, accel: 0.0, chain: [None; MAX_LEADERS], cross: None });
        // One step of history, half a step of delay: interpolate midway.
        let e = delayed_entry(&hist, 0.05, 0.1);
        assert!((e.speed - 5.5).abs() < 1e-12);
    }
}
