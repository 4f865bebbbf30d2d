//! Two-ring topology: links, diverge and merge nodes, Bernoulli turning, and
//! the virtual-gap superposition used for zipper merging.

use rand::Rng;

use crate::cf::LeaderObservation;
use crate::error::{Error, Result};

/// Virtual gap reported on an empty merge approach, m.
pub const FREE_ROAD_GAP: f64 = 1e6;

/// Link index into [`TwoRingNetwork::links`].
pub type LinkId = usize;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LinkKind {
    Ring1Segment,
    Ring2Segment,
    Connector,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Link {
    pub id: LinkId,
    pub length: f64,
    pub speed_limit: f64,
    pub kind: LinkKind,
}

/// Zipper merge of two approaches into one outgoing link.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MergeNode {
    pub id: usize,
    pub approaches: [LinkId; 2],
    pub outgoing: LinkId,
    /// Detection range of cooperative vehicles, m.
    pub detection_range: f64,
    /// Length of the superposition zone on each approach, m.
    pub merge_zone_length: f64,
}

/// Bernoulli diverge: stay on the ring or switch onto the connector.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DivergeNode {
    pub id: usize,
    pub incoming: LinkId,
    pub stay: LinkId,
    pub switch: LinkId,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NodeRef {
    Merge(usize),
    Diverge(usize),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TurnChoice {
    Stay,
    Switch,
}

/// Geometry of the symmetric two-ring system.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GeometryConfig {
    /// Radii of the two rings, m. The model is symmetric; unequal radii are
    /// rejected.
    pub ring_radii: [f64; 2],
    /// Length of each connector link, m.
    pub connector_length: f64,
    /// Speed limit on every link, m/s.
    pub speed_limit: f64,
    /// Detection range at both merges, m.
    pub detection_range: f64,
    /// Superposition zone length at both merges, m.
    pub merge_zone_length: f64,
}

impl Default for GeometryConfig {
    fn default() -> Self {
        Self {
            ring_radii: [50.0, 50.0],
            connector_length: 100.0,
            speed_limit: 30.0 / 3.6,
            detection_range: 30.0,
            merge_zone_length: 30.0,
        }
    }
}

// Fixed link layout. Each ring is split by its merge and diverge into an
// entry segment A (merge -> diverge) and an exit segment B (diverge ->
// merge); the connectors C cross between the rings.
pub const LINK_A1: LinkId = 0;
pub const LINK_B1: LinkId = 1;
pub const LINK_C1: LinkId = 2; // diverge 1 -> merge 2
pub const LINK_A2: LinkId = 3;
pub const LINK_B2: LinkId = 4;
pub const LINK_C2: LinkId = 5; // diverge 2 -> merge 1
pub const LINK_COUNT: usize = 6;

/// The two-ring network with its merge and diverge nodes.
#[derive(Debug, Clone, PartialEq)]
pub struct TwoRingNetwork {
    pub links: Vec<Link>,
    pub merges: [MergeNode; 2],
    pub diverges: [DivergeNode; 2],
    link_end: [NodeRef; LINK_COUNT],
}

/// Builds the symmetric two-ring network.
pub fn build_two_ring(geom: &GeometryConfig) -> Result<TwoRingNetwork> {
    let [r1, r2] = geom.ring_radii;
    if !(r1 > 0.0 && r2 > 0.0 && geom.connector_length > 0.0 && geom.speed_limit > 0.0) {
        return Err(Error::Geometry(format!(
            "ring radii, connector length and speed limit must be positive \
             (got {r1}, {r2}, {}, {})",
            geom.connector_length, geom.speed_limit
        )));
    }
    if (r1 - r2).abs() > 1e-12 {
        return Err(Error::Geometry(format!(
            "the system is symmetric; ring radii must be equal (got {r1} and {r2})"
        )));
    }
    if !(geom.detection_range > 0.0) || !(geom.merge_zone_length > 0.0) {
        return Err(Error::Geometry(
            "detection range and merge zone length must be positive".into(),
        ));
    }
    let half = std::f64::consts::PI * r1;
    let mk = |id: LinkId, length: f64, kind: LinkKind| Link {
        id,
        length,
        speed_limit: geom.speed_limit,
        kind,
    };
    let links = vec![
        mk(LINK_A1, half, LinkKind::Ring1Segment),
        mk(LINK_B1, half, LinkKind::Ring1Segment),
        mk(LINK_C1, geom.connector_length, LinkKind::Connector),
        mk(LINK_A2, half, LinkKind::Ring2Segment),
        mk(LINK_B2, half, LinkKind::Ring2Segment),
        mk(LINK_C2, geom.connector_length, LinkKind::Connector),
    ];
    let merges = [
        MergeNode {
            id: 0,
            approaches: [LINK_B1, LINK_C2],
            outgoing: LINK_A1,
            detection_range: geom.detection_range,
            merge_zone_length: geom.merge_zone_length,
        },
        MergeNode {
            id: 1,
            approaches: [LINK_B2, LINK_C1],
            outgoing: LINK_A2,
            detection_range: geom.detection_range,
            merge_zone_length: geom.merge_zone_length,
        },
    ];
    let diverges = [
        DivergeNode { id: 0, incoming: LINK_A1, stay: LINK_B1, switch: LINK_C1 },
        DivergeNode { id: 1, incoming: LINK_A2, stay: LINK_B2, switch: LINK_C2 },
    ];
    let link_end = [
        NodeRef::Diverge(0), // A1 ends at diverge 1
        NodeRef::Merge(0),   // B1 ends at merge 1
        NodeRef::Merge(1),   // C1 ends at merge 2
        NodeRef::Diverge(1), // A2 ends at diverge 2
        NodeRef::Merge(1),   // B2 ends at merge 2
        NodeRef::Merge(0),   // C2 ends at merge 1
    ];
    Ok(TwoRingNetwork { links, merges, diverges, link_end })
}

impl TwoRingNetwork {
    pub fn node_at_end(&self, link: LinkId) -> NodeRef {
        self.link_end[link]
    }

    /// The two ring segments of ring 0 or 1.
    pub fn ring_links(&self, ring: usize) -> [LinkId; 2] {
        if ring == 0 { [LINK_A1, LINK_B1] } else { [LINK_A2, LINK_B2] }
    }

    pub fn ring_length(&self) -> f64 {
        self.links[LINK_A1].length + self.links[LINK_B1].length
    }

    /// Entry link of a ring: the outgoing link of its merge, i.e. vehicles
    /// are loaded immediately downstream of the merge node.
    pub fn entry_link(&self, ring: usize) -> LinkId {
        self.merges[ring].outgoing
    }

    /// Merge index if `link` is one of its approaches.
    pub fn merge_for_approach(&self, link: LinkId) -> Option<usize> {
        self.merges
            .iter()
            .position(|m| m.approaches.contains(&link))
    }

    pub fn other_approach(&self, merge: usize, link: LinkId) -> LinkId {
        let m = &self.merges[merge];
        if m.approaches[0] == link { m.approaches[1] } else { m.approaches[0] }
    }

    /// Link a vehicle continues onto when crossing the end of `link`.
    pub fn next_link(&self, link: LinkId, choice: Option<TurnChoice>) -> Option<LinkId> {
        match self.link_end[link] {
            NodeRef::Merge(m) => Some(self.merges[m].outgoing),
            NodeRef::Diverge(d) => choice.map(|c| match c {
                TurnChoice::Stay => self.diverges[d].stay,
                TurnChoice::Switch => self.diverges[d].switch,
            }),
        }
    }
}

/// One Bernoulli turning decision.
pub fn decide_turn<R: Rng + ?Sized>(rng: &mut R, p_turn: f64) -> TurnChoice {
    if rng.gen::<f64>() < p_turn {
        TurnChoice::Switch
    } else {
        TurnChoice::Stay
    }
}

/// A vehicle near a merge as seen from the other approach, in superimposed
/// coordinates (distance back from the merge point along its own approach).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MergeCandidate {
    pub vehicle_id: u64,
    /// Distance of the front bumper to the merge point, m.
    pub dist_to_merge: f64,
    pub length: f64,
    pub speed: f64,
    pub connected: bool,
}

/// Virtual leader of a subject approaching a merge, given the candidates on
/// the other approach inside the superposition zone.
///
/// Both approaches map onto a common axis ending at the merge point; the
/// virtual leader is the nearest candidate strictly ahead, with ties in
/// superimposed position broken towards the lower vehicle id (equal
/// priority). The returned net gap may be negative, in which case the
/// subject has to stop. With no candidate ahead the subject sees free road
/// beyond the merge point.
pub fn virtual_leader(
    subject_id: u64,
    subject_dist_to_merge: f64,
    subject_speed: f64,
    candidates: &[MergeCandidate],
) -> LeaderObservation {
    let mut best: Option<&MergeCandidate> = None;
    for c in candidates {
        let ahead = c.dist_to_merge < subject_dist_to_merge
            || (c.dist_to_merge == subject_dist_to_merge && c.vehicle_id < subject_id);
        if !ahead {
            continue;
        }
        let better = match best {
            None => true,
            Some(b) => {
                c.dist_to_merge > b.dist_to_merge
                    || (c.dist_to_merge == b.dist_to_merge && c.vehicle_id > b.vehicle_id)
            }
        };
        if better {
            best = Some(c);
        }
    }
    match best {
        Some(c) => LeaderObservation {
            net_gap: subject_dist_to_merge - c.dist_to_merge - c.length,
            speed_difference: subject_speed - c.speed,
            leader_speed: c.speed,
        },
        None => LeaderObservation {
            net_gap: subject_dist_to_merge + FREE_ROAD_GAP,
            speed_difference: 0.0,
            leader_speed: subject_speed,
        },
    }
}

/// True iff any connected vehicle on the other approach is within the
/// detection range of the merge point.
pub fn detect_merge_conflict(candidates: &[MergeCandidate], detection_range: f64) -> bool {
    candidates
        .iter()
        .any(|c| c.connected && c.dist_to_merge <= detection_range)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha12Rng;

    #[test]
    fn default_geometry_builds_the_expected_lengths() {
        let net = build_two_ring(&GeometryConfig::default()).unwrap();
        assert_eq!(net.links.len(), LINK_COUNT);
        assert!((net.ring_length() - 2.0 * std::f64::consts::PI * 50.0).abs() < 1e-9);
        assert_eq!(net.links[LINK_C1].length, 100.0);
        assert_eq!(net.links[LINK_C2].length, 100.0);
        // Each ring's segment lengths sum to its circumference.
        let l2 = net.links[LINK_A2].length + net.links[LINK_B2].length;
        assert!((l2 - 2.0 * std::f64::consts::PI * 50.0).abs() < 1e-9);
    }

    #[test]
    fn asymmetric_ring_lengths_are_rejected() {
        let geom = GeometryConfig { ring_radii: [50.0, 60.0], ..Default::default() };
        assert!(matches!(build_two_ring(&geom), Err(Error::Geometry(_))));
    }

    #[test]
    fn invalid_geometry_is_rejected() {
        let geom = GeometryConfig { connector_length: 0.0, ..Default::default() };
        assert!(build_two_ring(&geom).is_err());
    }

    #[test]
    fn routing_crosses_the_expected_nodes() {
        let net = build_two_ring(&GeometryConfig::default()).unwrap();
        assert_eq!(net.next_link(LINK_A1, Some(TurnChoice::Stay)), Some(LINK_B1));
        assert_eq!(net.next_link(LINK_A1, Some(TurnChoice::Switch)), Some(LINK_C1));
        assert_eq!(net.next_link(LINK_B1, None), Some(LINK_A1));
        assert_eq!(net.next_link(LINK_C1, None), Some(LINK_A2));
        assert_eq!(net.next_link(LINK_C2, None), Some(LINK_A1));
        assert_eq!(net.next_link(LINK_A1, None), None);
        assert_eq!(net.merge_for_approach(LINK_B1), Some(0));
        assert_eq!(net.merge_for_approach(LINK_C2), Some(0));
        assert_eq!(net.merge_for_approach(LINK_A1), None);
        assert_eq!(net.other_approach(0, LINK_B1), LINK_C2);
    }

    #[test]
    fn extreme_turn_probabilities_are_deterministic() {
        let mut rng = ChaCha12Rng::seed_from_u64(1);
        for _ in 0..1000 {
            assert_eq!(decide_turn(&mut rng, 0.0), TurnChoice::Stay);
            assert_eq!(decide_turn(&mut rng, 1.0), TurnChoice::Switch);
        }
    }

    #[test]
    fn turn_fraction_matches_the_probability() {
        let mut rng = ChaCha12Rng::seed_from_u64(9);
        let n = 100_000;
        let switches = (0..n)
            .filter(|_| decide_turn(&mut rng, 0.15) == TurnChoice::Switch)
            .count();
        let frac = switches as f64 / n as f64;
        assert!((frac - 0.15).abs() < 0.004, "fraction {frac}");
    }

    #[test]
    fn turn_decisions_have_no_serial_correlation() {
        let mut rng = ChaCha12Rng::seed_from_u64(21);
        let n = 10_000;
        let xs: Vec<f64> = (0..n)
            .map(|_| if decide_turn(&mut rng, 0.15) == TurnChoice::Switch { 1.0 } else { 0.0 })
            .collect();
        let mean = xs.iter().sum::<f64>() / n as f64;
        let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n as f64;
        let cov = xs
            .windows(2)
            .map(|w| (w[0] - mean) * (w[1] - mean))
            .sum::<f64>()
            / (n - 1) as f64;
        let lag1 = cov / var;
        assert!(lag1.abs() < 3.0 / (n as f64).sqrt(), "lag-1 autocorrelation {lag1}");
    }

    #[test]
    fn empty_approach_reads_as_free_road() {
        let obs = virtual_leader(3, 12.0, 7.0, &[]);
        assert_eq!(obs.net_gap, 12.0 + FREE_ROAD_GAP);
        assert_eq!(obs.speed_difference, 0.0);
    }

    #[test]
    fn ties_resolve_towards_the_lower_id() {
        let cand = MergeCandidate {
            vehicle_id: 2,
            dist_to_merge: 10.0,
            length: 5.0,
            speed: 4.0,
            connected: false,
        };
        // Subject id 5 yields: the equal-position lower id is its leader and
        // the resulting virtual gap is negative.
        let obs = virtual_leader(5, 10.0, 4.0, &[cand]);
        assert_eq!(obs.net_gap, -5.0);
        // Subject id 1 has priority: nobody is ahead.
        let obs = virtual_leader(1, 10.0, 4.0, &[cand]);
        assert!(obs.net_gap > FREE_ROAD_GAP / 2.0);
    }

    #[test]
    fn superimposed_gap_arithmetic() {
        // Subject 10 m out, candidate 3 m out and 5 m long: 10 - 3 - 5 = 2.
        let cand = MergeCandidate {
            vehicle_id: 2,
            dist_to_merge: 3.0,
            length: 5.0,
            speed: 6.0,
            connected: true,
        };
        let obs = virtual_leader(7, 10.0, 8.0, &[cand]);
        assert!((obs.net_gap - 2.0).abs() < 1e-12);
        assert!((obs.speed_difference - 2.0).abs() < 1e-12);
    }

    #[test]
    fn nearest_ahead_candidate_wins() {
        let mk = |id, dist| MergeCandidate {
            vehicle_id: id,
            dist_to_merge: dist,
            length: 5.0,
            speed: 5.0,
            connected: false,
        };
        let obs = virtual_leader(9, 20.0, 5.0, &[mk(1, 2.0), mk(2, 12.0), mk(3, 25.0)]);
        // 12 m out is the closest one strictly ahead of 20 m.
        assert!((obs.net_gap - 3.0).abs() < 1e-12);
    }

    #[test]
    fn conflict_detection_requires_a_connected_vehicle_in_range() {
        let mk = |connected, dist| MergeCandidate {
            vehicle_id: 1,
            dist_to_merge: dist,
            length: 5.0,
            speed: 5.0,
            connected,
        };
        assert!(!detect_merge_conflict(&[mk(false, 10.0)], 30.0));
        assert!(detect_merge_conflict(&[mk(true, 25.0)], 30.0));
        assert!(!detect_merge_conflict(&[mk(true, 35.0)], 30.0));
    }
}
