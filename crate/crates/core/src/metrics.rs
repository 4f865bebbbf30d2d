//! Edie-style flow and density measurement over trajectory tables,
//! fundamental-diagram series construction, phase-path smoothing, and
//! bifurcation-point detection.

use std::collections::HashMap;

use crate::error::{Error, Result};
use crate::network::{LinkId, TwoRingNetwork, LINK_A1, LINK_A2, LINK_B1, LINK_B2};
use crate::sim::TrajRecord;

/// Aggregation cadence of the measured series, s.
pub const METRICS_CADENCE_S: f64 = 10.0;
/// Sliding window of the phase-path moving average, s.
pub const SMOOTH_WINDOW_S: f64 = 60.0;
/// Resolution floor of the bifurcation detector in whole vehicles per ring:
/// smaller ring-density divergences are indistinguishable from single
/// vehicles switching rings.
pub const DETECTION_FLOOR_VEHICLES: f64 = 4.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Region {
    Ring1,
    Ring2,
    /// Both rings; connector links are not accounted for.
    Network,
}

impl Region {
    pub fn label(self) -> &'static str {
        match self {
            Region::Ring1 => "ring1",
            Region::Ring2 => "ring2",
            Region::Network => "network",
        }
    }
}

/// One measured sample of a region over one interval.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MetricsSample {
    pub interval_start: f64,
    pub region: Region,
    /// veh/m.
    pub density: f64,
    /// veh/s.
    pub flow: f64,
}

/// Time-ordered (k1, k2) samples at the aggregation cadence.
#[derive(Debug, Clone, PartialEq)]
pub struct PhasePath {
    pub cadence: f64,
    pub samples: Vec<(f64, f64)>,
}

/// First sample pair along the smoothed path that diverges from the diagonal
/// while bending (negative segment slope); the index points at the second
/// sample of the pair.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BifurcationPoint {
    pub index: usize,
    pub k1: f64,
    pub k2: f64,
    pub mean_density: f64,
}

fn region_links(region: Region) -> &'static [LinkId] {
    match region {
        Region::Ring1 => &[LINK_A1, LINK_B1],
        Region::Ring2 => &[LINK_A2, LINK_B2],
        Region::Network => &[LINK_A1, LINK_B1, LINK_A2, LINK_B2],
    }
}

fn region_length(net: &TwoRingNetwork, region: Region) -> f64 {
    region_links(region)
        .iter()
        .map(|&l| net.links[l].length)
        .sum()
}

/// Total distance traveled and time spent inside the given links during
/// `[t0, t0 + interval)`, from piecewise-linear trajectories. Contributions
/// are split exactly at interval boundaries and proportionally at link
/// boundaries.
pub fn edie_totals(
    records: &[TrajRecord],
    links: &[LinkId],
    link_lengths: &[f64],
    t0: f64,
    interval: f64,
) -> Result<(f64, f64)> {
    if links.is_empty() {
        return Err(Error::Metrics("empty region".into()));
    }
    if !(interval > 0.0) {
        return Err(Error::Metrics(format!("interval must be positive, got {interval}")));
    }
    let mut in_region = [false; 16];
    for &l in links {
        in_region[l] = true;
    }
    let t1 = t0 + interval;
    let mut dist = 0.0;
    let mut time = 0.0;
    let mut add = |ta: f64, tb: f64, xa: f64, xb: f64, link: LinkId| {
        if !in_region[link] || tb <= ta {
            return;
        }
        let lo = ta.max(t0);
        let hi = tb.min(t1);
        if hi <= lo {
            return;
        }
        let speed = (xb - xa) / (tb - ta);
        time += hi - lo;
        dist += speed * (hi - lo);
    };

    // Pair consecutive records of each vehicle.
    let mut order: Vec<usize> = (0..records.len()).collect();
    order.sort_by(|&a, &b| {
        records[a]
            .vehicle
            .cmp(&records[b].vehicle)
            .then(records[a].time.partial_cmp(&records[b].time).unwrap())
    });
    for w in order.windows(2) {
        let a = &records[w[0]];
        let b = &records[w[1]];
        if a.vehicle != b.vehicle {
            continue;
        }
        if a.link == b.link {
            add(a.time, b.time, a.pos, b.pos, a.link);
        } else {
            let d1 = link_lengths[a.link] - a.pos;
            let d2 = b.pos;
            let total = d1 + d2;
            let frac = if total > 0.0 { d1 / total } else { 0.5 };
            let t_cross = a.time + (b.time - a.time) * frac;
            add(a.time, t_cross, a.pos, link_lengths[a.link], a.link);
            add(t_cross, b.time, 0.0, b.pos, b.link);
        }
    }
    Ok((dist, time))
}

/// Edie sample of a region over one interval.
pub fn edie_metrics(
    records: &[TrajRecord],
    net: &TwoRingNetwork,
    region: Region,
    t0: f64,
    interval: f64,
) -> Result<MetricsSample> {
    let lengths: Vec<f64> = net.links.iter().map(|l| l.length).collect();
    let (dist, time) = edie_totals(records, region_links(region), &lengths, t0, interval)?;
    let area = region_length(net, region) * interval;
    Ok(MetricsSample {
        interval_start: t0,
        region,
        density: time / area,
        flow: dist / area,
    })
}

/// Per-ring and network series over the whole horizon in one sweep.
#[derive(Debug, Clone, PartialEq)]
pub struct SeriesBundle {
    /// Ring samples ordered by (window, ring).
    pub rings: Vec<MetricsSample>,
    /// Network samples ordered by window.
    pub network: Vec<MetricsSample>,
}

impl SeriesBundle {
    /// Phase path (k1, k2) at the aggregation cadence.
    pub fn phase_path(&self) -> PhasePath {
        let mut samples = Vec::with_capacity(self.network.len());
        for pair in self.rings.chunks(2) {
            samples.push((pair[0].density, pair[1].density));
        }
        PhasePath { cadence: METRICS_CADENCE_S, samples }
    }
}

/// Builds the per-ring and network series at the given cadence.
pub fn build_series(
    records: &[TrajRecord],
    net: &TwoRingNetwork,
    cadence: f64,
    horizon: f64,
) -> Result<SeriesBundle> {
    if !(cadence > 0.0) {
        return Err(Error::Metrics("cadence must be positive".into()));
    }
    let windows_f = horizon / cadence;
    if (windows_f - windows_f.round()).abs() > 1e-9 {
        return Err(Error::Metrics(format!(
            "cadence {cadence} must divide the horizon {horizon}"
        )));
    }
    let windows = windows_f.round() as usize;
    let ring_of = |l: LinkId| -> Option<usize> {
        match l {
            LINK_A1 | LINK_B1 => Some(0),
            LINK_A2 | LINK_B2 => Some(1),
            _ => None,
        }
    };
    let mut dist = vec![[0.0f64; 2]; windows];
    let mut time = vec![[0.0f64; 2]; windows];
    let lengths: Vec<f64> = net.links.iter().map(|l| l.length).collect();

    let mut last: HashMap<u64, TrajRecord> = HashMap::new();
    for b in records {
        if let Some(a) = last.get(&b.vehicle) {
            // One step never spans a window boundary (the cadence is a
            // multiple of the step); bin by the pair midpoint.
            let w = (((a.time + b.time) * 0.5) / cadence).floor() as usize;
            if w < windows {
                if a.link == b.link {
                    if let Some(r) = ring_of(a.link) {
                        dist[w][r] += b.pos - a.pos;
                        time[w][r] += b.time - a.time;
                    }
                } else {
                    let d1 = lengths[a.link] - a.pos;
                    let d2 = b.pos;
                    let total = d1 + d2;
                    let frac = if total > 0.0 { d1 / total } else { 0.5 };
                    let dt = b.time - a.time;
                    if let Some(r) = ring_of(a.link) {
                        dist[w][r] += d1;
                        time[w][r] += dt * frac;
                    }
                    if let Some(r) = ring_of(b.link) {
                        dist[w][r] += d2;
                        time[w][r] += dt * (1.0 - frac);
                    }
                }
            }
        }
        last.insert(b.vehicle, *b);
    }

    let ring_len = net.ring_length();
    let mut rings = Vec::with_capacity(windows * 2);
    let mut network = Vec::with_capacity(windows);
    for w in 0..windows {
        let t0 = w as f64 * cadence;
        let area = ring_len * cadence;
        for (r, region) in [(0usize, Region::Ring1), (1usize, Region::Ring2)] {
            rings.push(MetricsSample {
                interval_start: t0,
                region,
                density: time[w][r] / area,
                flow: dist[w][r] / area,
            });
        }
        let net_area = 2.0 * ring_len * cadence;
        network.push(MetricsSample {
            interval_start: t0,
            region: Region::Network,
            density: (time[w][0] + time[w][1]) / net_area,
            flow: (dist[w][0] + dist[w][1]) / net_area,
        });
    }
    Ok(SeriesBundle { rings, network })
}

/// Per-ring fundamental-diagram series at the standard cadence.
pub fn build_fd_series(
    records: &[TrajRecord],
    net: &TwoRingNetwork,
    cadence: f64,
    horizon: f64,
) -> Result<Vec<MetricsSample>> {
    Ok(build_series(records, net, cadence, horizon)?.rings)
}

/// Network series at the standard cadence; connector links are excluded.
pub fn build_nfd_series(
    records: &[TrajRecord],
    net: &TwoRingNetwork,
    cadence: f64,
    horizon: f64,
) -> Result<Vec<MetricsSample>> {
    Ok(build_series(records, net, cadence, horizon)?.network)
}

/// Centered moving average over the path, window given in seconds. Edges use
/// the truncated window; the output has the same length as the input.
pub fn smooth_path(path: &PhasePath, window_s: f64) -> Result<PhasePath> {
    let w_f = window_s / path.cadence;
    if !(window_s > 0.0) || (w_f - w_f.round()).abs() > 1e-9 || w_f.round() < 1.0 {
        return Err(Error::Metrics(format!(
            "window {window_s} must be a positive multiple of the cadence {}",
            path.cadence
        )));
    }
    let w = w_f.round() as usize;
    let n = path.samples.len();
    let mut out = Vec::with_capacity(n);
    for i in 0..n {
        let lo = i.saturating_sub((w - 1) / 2);
        let hi = (i + w / 2).min(n - 1);
        let count = (hi - lo + 1) as f64;
        let mut s1 = 0.0;
        let mut s2 = 0.0;
        for &(k1, k2) in &path.samples[lo..=hi] {
            s1 += k1;
            s2 += k2;
        }
        out.push((s1 / count, s2 / count));
    }
    Ok(PhasePath { cadence: path.cadence, samples: out })
}

/// First consecutive pair along the smoothed path whose distance to the
/// diagonal strictly increases while the connecting segment slopes downward.
/// A vanishing k1 change makes the slope undefined; such pairs do not
/// qualify.
pub fn detect_bifurcation(smoothed: &PhasePath) -> Option<BifurcationPoint> {
    detect_bifurcation_with_floor(smoothed, 0.0)
}

/// [`detect_bifurcation`] with a resolution floor: pairs whose divergence
/// stays below `min_divergence` (veh/m) do not qualify. Ring densities move
/// in whole-vehicle steps as vehicles switch rings, so a divergence of a few
/// vehicles' worth is transfer noise rather than a bend; batch pipelines
/// pass a floor of a few vehicles over the ring length.
pub fn detect_bifurcation_with_floor(
    smoothed: &PhasePath,
    min_divergence: f64,
) -> Option<BifurcationPoint> {
    for (n, pair) in smoothed.samples.windows(2).enumerate() {
        let (k1a, k2a) = pair[0];
        let (k1b, k2b) = pair[1];
        let div_b = (k1b - k2b).abs();
        let diverging = (k1a - k2a).abs() < div_b;
        if !diverging || div_b < min_divergence {
            continue;
        }
        let dk1 = k1b - k1a;
        if dk1 == 0.0 {
            continue;
        }
        let slope = (k2b - k2a) / dk1;
        if slope < 0.0 {
            return Some(BifurcationPoint {
                index: n + 1,
                k1: k1b,
                k2: k2b,
                mean_density: 0.5 * (k1b + k2b),
            });
        }
    }
    None
}
