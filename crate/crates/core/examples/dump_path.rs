use ringflow::scenario::PresetId;
use ringflow::sim::{run_replication, EventKind};

fn main() {
    let preset: PresetId = std::env::args().nth(1).unwrap().parse().unwrap();
    let (label, cfg) = preset.configs().remove(0);
    let out = run_replication(&cfg.geometry(), &cfg.sim_options(0)).unwrap();
    // Merge crossings per 100 s at each merge.
    let mut m0 = vec![0u32; 18];
    let mut m1 = vec![0u32; 18];
    let mut holds = vec![0u32; 18];
    for e in &out.events {
        let w = (e.time / 100.0) as usize;
        if w >= 18 {
            continue;
        }
        match e.kind {
            EventKind::Merge => {
                if e.detail.contains('0') {
                    m0[w] += 1;
                } else {
                    m1[w] += 1;
                }
            }
            EventKind::MergeStop if e.detail.contains("held") => holds[w] += 1,
            _ => {}
        }
    }
    println!("=== {label}: merge crossings / 100 s (M0, M1), gate holds ===");
    for w in 0..18 {
        println!(
            "t={:4}-{:4}: M0={:3} M1={:3} (per-merge veh/h: {:4.0}/{:4.0}) holds={}",
            w * 100,
            (w + 1) * 100,
            m0[w],
            m1[w],
            m0[w] as f64 * 36.0,
            m1[w] as f64 * 36.0,
            holds[w]
        );
    }
}
