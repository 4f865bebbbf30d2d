//! Prints batch-level statistics for the preset scenarios; handy when
//! tuning or sanity-checking the engine without writing any files.

use ringflow::report::run_scenario_batch;
use ringflow::scenario::PresetId;

fn main() {
    let presets: Vec<PresetId> = std::env::args()
        .skip(1)
        .map(|a| a.parse().expect("preset name"))
        .collect();
    let presets = if presets.is_empty() {
        vec![
            PresetId::ScenarioIHv,
            PresetId::ScenarioIAv,
            PresetId::ScenarioIIHv,
            PresetId::ScenarioIIAv,
            PresetId::ScenarioIICav,
            PresetId::ScenarioIIIAv,
            PresetId::ScenarioIIICav,
        ]
    } else {
        presets
    };
    for preset in presets {
        for (label, cfg) in preset.configs() {
            let t0 = std::time::Instant::now();
            let out = run_scenario_batch(&cfg, &label, None, 6).unwrap();
            let k_cr = cfg.fleet_fd().unwrap().critical_density;
            println!(
                "{label}: max_Q={:.1} veh/h  k_cr={:.4}",
                out.max_network_flow() * 3600.0,
                k_cr
            );
            for r in &out.reps {
                let bif = match r.bifurcation {
                    Some(b) => format!(
                        "bif @idx {} t={}s K={:.4} ({:.4},{:.4})",
                        b.index,
                        b.index as f64 * 10.0,
                        b.mean_density,
                        b.k1,
                        b.k2
                    ),
                    None => "no bifurcation".into(),
                };
                println!(
                    "  rep{}: ins={} emerg={} mstop={} nblock={} veh={} maxQ={:.0} final5=({:.4},{:.4}) {}",
                    r.replication,
                    r.summary.insertions,
                    r.summary.emergency_brakes,
                    r.summary.merge_stops,
                    r.summary.node_blocks,
                    r.summary.final_vehicles,
                    r.max_network_flow * 3600.0,
                    r.final_ring_density[0],
                    r.final_ring_density[1],
                    bif
                );
            }
            println!("  ({:.2?})", t0.elapsed());
        }
    }
}
