//! CSV emission and parsing. All files carry a one-line schema header and
//! use fixed 9-significant-digit decimal formatting so goldens are
//! byte-stable across runs and machines.

use std::fmt::Write as _;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::fd::TriangularFd;
use crate::metrics::{MetricsSample, PhasePath};
use crate::sim::{EventRecord, ReplicationSummary, TrajRecord};
use crate::two_bin::{Branch, Equilibrium, NfdPoint, Stability};

pub const SCHEMA_PREFIX: &str = "# ringflow-csv v1";

/// Renders a float with 9 significant digits in positional notation.
pub fn fmt_sig9(x: f64) -> String {
    if x == 0.0 {
        return "0.00000000".into();
    }
    if !x.is_finite() {
        return if x.is_nan() {
            "nan".into()
        } else if x > 0.0 {
            "inf".into()
        } else {
            "-inf".into()
        };
    }
    let mag = x.abs().log10().floor() as i32;
    let prec = (8 - mag).clamp(0, 15) as usize;
    format!("{x:.prec$}")
}

fn header(name: &str, columns: &str) -> String {
    format!("{SCHEMA_PREFIX} {name}\n{columns}\n")
}

pub fn render_trajectories(records: &[TrajRecord]) -> String {
    let mut s = header(
        "trajectory",
        "time_s,vehicle_id,class,link_id,position_m,speed_mps,accel_mps2",
    );
    for r in records {
        let _ = writeln!(
            s,
            "{},{},{},{},{},{},{}",
            fmt_sig9(r.time),
            r.vehicle,
            r.class.label(),
            r.link,
            fmt_sig9(r.pos),
            fmt_sig9(r.speed),
            fmt_sig9(r.accel)
        );
    }
    s
}

pub fn render_events(events: &[EventRecord]) -> String {
    let mut s = header("events", "time_s,vehicle_id,event_kind,detail");
    for e in events {
        let _ = writeln!(
            s,
            "{},{},{},{}",
            fmt_sig9(e.time),
            e.vehicle,
            e.kind.label(),
            e.detail
        );
    }
    s
}

pub fn render_metrics(per_rep: &[(u32, &[MetricsSample])]) -> String {
    let mut s = header(
        "metrics",
        "replication,interval_start_s,region,density_veh_per_m,flow_veh_per_s",
    );
    for (rep, samples) in per_rep {
        for m in *samples {
            let _ = writeln!(
                s,
                "{},{},{},{},{}",
                rep,
                fmt_sig9(m.interval_start),
                m.region.label(),
                fmt_sig9(m.density),
                fmt_sig9(m.flow)
            );
        }
    }
    s
}

pub fn render_phase_paths(per_rep: &[(u32, &PhasePath, &PhasePath)]) -> String {
    let mut s = header(
        "phase_path",
        "replication,index,time_s,k1_veh_per_m,k2_veh_per_m,k1_smooth,k2_smooth",
    );
    for (rep, raw, smooth) in per_rep {
        for (i, (r, sm)) in raw.samples.iter().zip(smooth.samples.iter()).enumerate() {
            let _ = writeln!(
                s,
                "{},{},{},{},{},{},{}",
                rep,
                i,
                fmt_sig9(i as f64 * raw.cadence),
                fmt_sig9(r.0),
                fmt_sig9(r.1),
                fmt_sig9(sm.0),
                fmt_sig9(sm.1)
            );
        }
    }
    s
}

/// One row of the bifurcation summary table.
#[derive(Debug, Clone, PartialEq)]
pub struct BifurcationRow {
    pub scenario: String,
    pub replication: u32,
    pub detected: bool,
    pub index: usize,
    pub k1: f64,
    pub k2: f64,
    pub mean_density: f64,
    pub ratio_to_jam: f64,
}

pub fn render_bifurcation(rows: &[BifurcationRow]) -> String {
    let mut s = header(
        "bifurcation",
        "scenario,replication,detected,index,k1,k2,mean_density,ratio_to_jam",
    );
    for r in rows {
        let _ = writeln!(
            s,
            "{},{},{},{},{},{},{},{}",
            r.scenario,
            r.replication,
            r.detected,
            r.index,
            fmt_sig9(r.k1),
            fmt_sig9(r.k2),
            fmt_sig9(r.mean_density),
            fmt_sig9(r.ratio_to_jam)
        );
    }
    s
}

pub fn parse_bifurcation(text: &str) -> Result<Vec<BifurcationRow>> {
    let mut lines = text.lines();
    let first = lines.next().unwrap_or_default();
    let expected = format!("{SCHEMA_PREFIX} bifurcation");
    if first != expected {
        return Err(Error::Schema(format!(
            "expected header {expected:?}, found {first:?}"
        )));
    }
    let _columns = lines.next();
    let mut rows = Vec::new();
    for (n, line) in lines.enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let parts: Vec<&str> = line.split(',').collect();
        if parts.len() != 8 {
            return Err(Error::Schema(format!("bad bifurcation row {}: {line:?}", n + 3)));
        }
        let parse_f = |s: &str| -> Result<f64> {
            s.parse()
                .map_err(|_| Error::Schema(format!("bad number {s:?} in row {}", n + 3)))
        };
        rows.push(BifurcationRow {
            scenario: parts[0].to_string(),
            replication: parts[1]
                .parse()
                .map_err(|_| Error::Schema(format!("bad replication in row {}", n + 3)))?,
            detected: parts[2] == "true",
            index: parts[3]
                .parse()
                .map_err(|_| Error::Schema(format!("bad index in row {}", n + 3)))?,
            k1: parse_f(parts[4])?,
            k2: parse_f(parts[5])?,
            mean_density: parse_f(parts[6])?,
            ratio_to_jam: parse_f(parts[7])?,
        });
    }
    Ok(rows)
}

/// Per-replication roll-up written next to the summary table.
#[derive(Debug, Clone, PartialEq)]
pub struct RepStats {
    pub replication: u32,
    pub seed: u64,
    pub summary: ReplicationSummary,
    pub max_network_flow: f64,
    pub final_ring_density: [f64; 2],
}

pub fn render_rep_stats(rows: &[RepStats]) -> String {
    let mut s = header(
        "replication_stats",
        "replication,seed,insertions,emergency_brakes,merge_stops,node_blocks,final_vehicles,\
         max_10s_network_flow_veh_per_s,final5min_ring1_density,final5min_ring2_density",
    );
    for r in rows {
        let _ = writeln!(
            s,
            "{},{},{},{},{},{},{},{},{},{}",
            r.replication,
            r.seed,
            r.summary.insertions,
            r.summary.emergency_brakes,
            r.summary.merge_stops,
            r.summary.node_blocks,
            r.summary.final_vehicles,
            fmt_sig9(r.max_network_flow),
            fmt_sig9(r.final_ring_density[0]),
            fmt_sig9(r.final_ring_density[1])
        );
    }
    s
}

/// Theoretical diagram curves with the derived parameters stated in the
/// header so the wave-speed convention is explicit.
pub fn render_theory_fd(entries: &[(String, TriangularFd)], samples: usize) -> String {
    let mut s = header("theory_fd", "fleet,density_veh_per_m,flow_veh_per_s");
    for (label, fd) in entries {
        let _ = writeln!(
            s,
            "# {label}: free_flow_speed={} critical_density={} jam_density={} capacity={} wave_speed={}",
            fmt_sig9(fd.free_flow_speed),
            fmt_sig9(fd.critical_density),
            fmt_sig9(fd.jam_density),
            fmt_sig9(fd.capacity),
            fmt_sig9(fd.wave_speed)
        );
        for i in 0..=samples {
            let k = fd.jam_density * i as f64 / samples as f64;
            let q = fd.flow(k).unwrap_or(0.0);
            let _ = writeln!(s, "{label},{},{}", fmt_sig9(k), fmt_sig9(q));
        }
    }
    s
}

pub fn render_theory_equilibria(rows: &[(f64, Equilibrium)]) -> String {
    let mut s = header(
        "theory_equilibria",
        "mean_density,k1,k2,stability,branch",
    );
    for (mean, eq) in rows {
        let stability = match eq.stability {
            Stability::Stable => "stable",
            Stability::Unstable => "unstable",
        };
        let branch = match eq.branch {
            Branch::Symmetric => "symmetric",
            Branch::Asymmetric => "asymmetric",
            Branch::Gridlock => "gridlock",
        };
        let _ = writeln!(
            s,
            "{},{},{},{},{}",
            fmt_sig9(*mean),
            fmt_sig9(eq.k1),
            fmt_sig9(eq.k2),
            stability,
            branch
        );
    }
    s
}

pub fn render_theory_nfd(points: &[NfdPoint]) -> String {
    let mut s = header("theory_nfd", "mean_density,flow_veh_per_s,branch");
    for p in points {
        let branch = match p.branch {
            Branch::Symmetric => "symmetric",
            Branch::Asymmetric => "asymmetric",
            Branch::Gridlock => "gridlock",
        };
        let _ = writeln!(s, "{},{},{}", fmt_sig9(p.mean_density), fmt_sig9(p.flow), branch);
    }
    s
}

pub fn write_file(path: &Path, contents: &str) -> Result<()> {
    let file = File::create(path)?;
    let mut w = BufWriter::new(file);
    w.write_all(contents.as_bytes())?;
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sig9_formatting_is_stable() {
        assert_eq!(fmt_sig9(0.0), "0.00000000");
        assert_eq!(fmt_sig9(1.0), "1.00000000");
        assert_eq!(fmt_sig9(0.15), "0.150000000");
        assert_eq!(fmt_sig9(1800.0), "1800.00000");
        assert_eq!(fmt_sig9(-8.333333333333334), "-8.33333333");
        assert_eq!(fmt_sig9(0.05128205128), "0.0512820513");
    }

    #[test]
    fn bifurcation_rows_round_trip() {
        let rows = vec![
            BifurcationRow {
                scenario: "scenario_II_hv".into(),
                replication: 3,
                detected: true,
                index: 42,
                k1: 0.0812,
                k2: 0.0314,
                mean_density: 0.0563,
                ratio_to_jam: 0.394,
            },
            BifurcationRow {
                scenario: "scenario_I_hv".into(),
                replication: 0,
                detected: false,
                index: 0,
                k1: 0.0,
                k2: 0.0,
                mean_density: 0.0,
                ratio_to_jam: 0.0,
            },
        ];
        let text = render_bifurcation(&rows);
        let back = parse_bifurcation(&text).unwrap();
        assert_eq!(back.len(), 2);
        assert_eq!(back[0].scenario, "scenario_II_hv");
        assert!(back[0].detected);
        assert!(!back[1].detected);
        assert!((back[0].mean_density - 0.0563).abs() < 1e-9);
    }

    #[test]
    fn schema_mismatch_is_an_error() {
        assert!(parse_bifurcation("# other-tool v9 bifurcation\nx\n").is_err());
    }
}
