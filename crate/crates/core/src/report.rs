//! Batch orchestration: running presets and ad-hoc scenarios, writing the
//! CSV artifact set, and comparing bifurcation summaries across runs.

use std::path::{Path, PathBuf};

use crate::csvio::{self, BifurcationRow, RepStats};
use crate::error::{Error, Result};
use crate::metrics::{
    build_series, detect_bifurcation_with_floor, smooth_path, BifurcationPoint, MetricsSample,
    PhasePath, DETECTION_FLOOR_VEHICLES, METRICS_CADENCE_S, SMOOTH_WINDOW_S,
};
use crate::scenario::{load_config, save_config, PresetId, ScenarioConfig};
use crate::sim::{run_batch_map, ReplicationPlan, ReplicationSummary};
use crate::two_bin::enumerate_equilibria;

/// Reduced result of one replication, kept after the trajectory table has
/// been processed (and optionally written to disk).
#[derive(Debug, Clone)]
pub struct RepResult {
    pub replication: u32,
    pub seed: u64,
    pub summary: ReplicationSummary,
    pub rings: Vec<MetricsSample>,
    pub network: Vec<MetricsSample>,
    pub phase_raw: PhasePath,
    pub phase_smooth: PhasePath,
    pub bifurcation: Option<BifurcationPoint>,
    pub max_network_flow: f64,
    pub final_ring_density: [f64; 2],
}

/// Result of one labeled batch (one scenario, N replications).
#[derive(Debug, Clone)]
pub struct BatchOutcome {
    pub label: String,
    pub config: ScenarioConfig,
    pub reps: Vec<RepResult>,
    pub bifurcation_rows: Vec<BifurcationRow>,
    pub out_dir: Option<PathBuf>,
}

impl BatchOutcome {
    /// Largest 10-s network flow across the batch, veh/s.
    pub fn max_network_flow(&self) -> f64 {
        self.reps
            .iter()
            .map(|r| r.max_network_flow)
            .fold(0.0, f64::max)
    }

    pub fn detected_mean_density(&self) -> Option<f64> {
        let ks: Vec<f64> = self
            .reps
            .iter()
            .filter_map(|r| r.bifurcation.map(|b| b.mean_density))
            .collect();
        if ks.is_empty() {
            None
        } else {
            Some(ks.iter().sum::<f64>() / ks.len() as f64)
        }
    }

    /// Mean distance of detected bifurcation points from the phase-plane
    /// origin.
    pub fn detected_mean_origin_distance(&self) -> Option<f64> {
        let ds: Vec<f64> = self
            .reps
            .iter()
            .filter_map(|r| r.bifurcation.map(|b| (b.k1 * b.k1 + b.k2 * b.k2).sqrt()))
            .collect();
        if ds.is_empty() {
            None
        } else {
            Some(ds.iter().sum::<f64>() / ds.len() as f64)
        }
    }
}

/// Runs one labeled scenario batch. With an output directory the full
/// trajectory and event tables are written per replication along with the
/// aggregated CSV set and the theoretical overlays; without one only the
/// reduced in-memory results are kept.
pub fn run_scenario_batch(
    cfg: &ScenarioConfig,
    label: &str,
    out_dir: Option<&Path>,
    parallelism: usize,
) -> Result<BatchOutcome> {
    cfg.validate()?;
    if let Some(dir) = out_dir {
        std::fs::create_dir_all(dir)?;
    }
    let geom = cfg.geometry();
    let base_opts = cfg.sim_options(0);
    let plan = ReplicationPlan { replications: cfg.replications, base_seed: cfg.base_seed };
    let horizon = cfg.horizon_s;
    let final5_start = (horizon - 300.0).max(0.0);
    let final5_len = horizon - final5_start;
    let net = crate::network::build_two_ring(&geom)?;

    let detection_floor = DETECTION_FLOOR_VEHICLES / net.ring_length();
    let results = run_batch_map(&geom, &base_opts, &plan, parallelism, |out| {
        let bundle = build_series(&out.records, &net, METRICS_CADENCE_S, horizon)?;
        let phase_raw = bundle.phase_path();
        let phase_smooth = smooth_path(&phase_raw, SMOOTH_WINDOW_S.min(horizon))?;
        let bifurcation = detect_bifurcation_with_floor(&phase_smooth, detection_floor);
        let max_network_flow = bundle
            .network
            .iter()
            .map(|s| s.flow)
            .fold(0.0, f64::max);
        // Mean per-ring density over the final five minutes.
        let mut final_ring_density = [0.0; 2];
        for (r, d) in final_ring_density.iter_mut().enumerate() {
            let tail: Vec<f64> = bundle
                .rings
                .iter()
                .filter(|s| {
                    s.interval_start >= final5_start - 1e-9
                        && s.region == [crate::metrics::Region::Ring1, crate::metrics::Region::Ring2][r]
                })
                .map(|s| s.density)
                .collect();
            if !tail.is_empty() {
                *d = tail.iter().sum::<f64>() / tail.len() as f64;
            }
        }
        let _ = final5_len;
        if let Some(dir) = out_dir {
            csvio::write_file(
                &dir.join(format!("trajectories_rep{:02}.csv", out.replication)),
                &csvio::render_trajectories(&out.records),
            )?;
            csvio::write_file(
                &dir.join(format!("events_rep{:02}.csv", out.replication)),
                &csvio::render_events(&out.events),
            )?;
        }
        Ok(RepResult {
            replication: out.replication,
            seed: out.seed,
            summary: out.summary,
            rings: bundle.rings,
            network: bundle.network,
            phase_raw,
            phase_smooth,
            bifurcation,
            max_network_flow,
            final_ring_density,
        })
    });

    let mut reps = Vec::with_capacity(results.len());
    for r in results {
        reps.push(r?);
    }

    let jam = cfg.fleet_jam_density();
    let bifurcation_rows: Vec<BifurcationRow> = reps
        .iter()
        .map(|r| match r.bifurcation {
            Some(b) => BifurcationRow {
                scenario: label.to_string(),
                replication: r.replication,
                detected: true,
                index: b.index,
                k1: b.k1,
                k2: b.k2,
                mean_density: b.mean_density,
                ratio_to_jam: b.mean_density / jam,
            },
            None => BifurcationRow {
                scenario: label.to_string(),
                replication: r.replication,
                detected: false,
                index: 0,
                k1: 0.0,
                k2: 0.0,
                mean_density: 0.0,
                ratio_to_jam: 0.0,
            },
        })
        .collect();

    if let Some(dir) = out_dir {
        write_batch_files(dir, cfg, &reps, &bifurcation_rows)?;
    }

    Ok(BatchOutcome {
        label: label.to_string(),
        config: cfg.clone(),
        reps,
        bifurcation_rows,
        out_dir: out_dir.map(Path::to_path_buf),
    })
}

fn write_batch_files(
    dir: &Path,
    cfg: &ScenarioConfig,
    reps: &[RepResult],
    bif_rows: &[BifurcationRow],
) -> Result<()> {
    csvio::write_file(&dir.join("config_resolved.toml"), &save_config(cfg))?;

    let metric_refs: Vec<(u32, &[MetricsSample])> = reps
        .iter()
        .flat_map(|r| {
            [
                (r.replication, r.rings.as_slice()),
                (r.replication, r.network.as_slice()),
            ]
        })
        .collect();
    csvio::write_file(&dir.join("metrics.csv"), &csvio::render_metrics(&metric_refs))?;

    let phase_refs: Vec<(u32, &PhasePath, &PhasePath)> = reps
        .iter()
        .map(|r| (r.replication, &r.phase_raw, &r.phase_smooth))
        .collect();
    csvio::write_file(
        &dir.join("phase_paths.csv"),
        &csvio::render_phase_paths(&phase_refs),
    )?;

    csvio::write_file(
        &dir.join("bifurcation_summary.csv"),
        &csvio::render_bifurcation(bif_rows),
    )?;

    let stats: Vec<RepStats> = reps
        .iter()
        .map(|r| RepStats {
            replication: r.replication,
            seed: r.seed,
            summary: r.summary,
            max_network_flow: r.max_network_flow,
            final_ring_density: r.final_ring_density,
        })
        .collect();
    csvio::write_file(&dir.join("replication_stats.csv"), &csvio::render_rep_stats(&stats))?;

    // Theoretical overlays for the active fleet.
    let fleet_fd = cfg.fleet_fd()?;
    let mut fd_entries = vec![("fleet".to_string(), fleet_fd)];
    let v = cfg.speed_limit_kmh / 3.6;
    fd_entries.push((
        "hv".to_string(),
        crate::fd::TriangularFd::from_driver_params(
            cfg.hv_headway_s,
            cfg.hv_jam_gap_m,
            cfg.vehicle_length_m,
            v,
        )?,
    ));
    fd_entries.push((
        "av".to_string(),
        crate::fd::TriangularFd::from_driver_params(
            cfg.av_headway_s,
            cfg.av_jam_gap_m,
            cfg.vehicle_length_m,
            v,
        )?,
    ));
    csvio::write_file(&dir.join("theory_fd.csv"), &csvio::render_theory_fd(&fd_entries, 200))?;

    let mut eq_rows = Vec::new();
    let mut nfd_densities = Vec::new();
    let steps = 200usize;
    for i in 0..=steps {
        let mean = fleet_fd.jam_density * i as f64 / steps as f64;
        nfd_densities.push(mean);
        for eq in enumerate_equilibria(&fleet_fd, mean)? {
            eq_rows.push((mean, eq));
        }
    }
    csvio::write_file(
        &dir.join("theory_equilibria.csv"),
        &csvio::render_theory_equilibria(&eq_rows),
    )?;
    let nfd = crate::two_bin::theoretical_nfd(&fleet_fd, &nfd_densities)?;
    csvio::write_file(&dir.join("theory_nfd.csv"), &csvio::render_theory_nfd(&nfd))?;
    Ok(())
}

/// Outcome of a preset: one batch per labeled scenario.
#[derive(Debug, Clone)]
pub struct PresetOutcome {
    pub preset: PresetId,
    pub batches: Vec<BatchOutcome>,
}

/// Runs a preset experiment. Sweep presets run one batch per penetration
/// level, each in its own subdirectory.
pub fn run_preset(
    preset: PresetId,
    out_dir: Option<&Path>,
    seed_override: Option<u64>,
    replications_override: Option<u32>,
    parallelism: usize,
) -> Result<PresetOutcome> {
    let configs = preset.configs();
    let multi = configs.len() > 1;
    let mut batches = Vec::with_capacity(configs.len());
    for (label, mut cfg) in configs {
        if let Some(seed) = seed_override {
            cfg.base_seed = seed;
        }
        if let Some(reps) = replications_override {
            cfg.replications = reps;
        }
        let sub_dir = out_dir.map(|d| if multi { d.join(&label) } else { d.to_path_buf() });
        let batch = run_scenario_batch(&cfg, &label, sub_dir.as_deref(), parallelism)?;
        batches.push(batch);
    }
    Ok(PresetOutcome { preset, batches })
}

/// Runs an ad-hoc scenario from a config file.
pub fn run_config_file(
    path: &Path,
    out_dir: &Path,
    seed_override: Option<u64>,
    replications_override: Option<u32>,
    parallelism: usize,
) -> Result<BatchOutcome> {
    let mut cfg = load_config(path)?;
    if let Some(seed) = seed_override {
        cfg.base_seed = seed;
    }
    if let Some(reps) = replications_override {
        cfg.replications = reps;
    }
    let label = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "scenario".into());
    run_scenario_batch(&cfg, &label, Some(out_dir), parallelism)
}

/// One line of the cross-run comparison.
#[derive(Debug, Clone, PartialEq)]
pub struct CompareRow {
    pub scenario: String,
    pub replications: usize,
    pub detected: usize,
    pub mean_density: Option<f64>,
    pub sd_density: Option<f64>,
    pub mean_ratio: Option<f64>,
    pub sd_ratio: Option<f64>,
}

fn mean_sd(xs: &[f64]) -> (Option<f64>, Option<f64>) {
    if xs.is_empty() {
        return (None, None);
    }
    let mean = xs.iter().sum::<f64>() / xs.len() as f64;
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / xs.len() as f64;
    (Some(mean), Some(var.sqrt()))
}

/// Aggregates bifurcation summaries, one row per (file, scenario) in input
/// order. Undetected replications are counted but excluded from the moments.
pub fn compare_runs(paths: &[PathBuf]) -> Result<Vec<CompareRow>> {
    if paths.len() < 2 {
        return Err(Error::Config("compare needs at least two summary files".into()));
    }
    let mut rows = Vec::new();
    for path in paths {
        let text = std::fs::read_to_string(path)?;
        let parsed = csvio::parse_bifurcation(&text)?;
        let mut scenarios: Vec<String> = Vec::new();
        for r in &parsed {
            if !scenarios.contains(&r.scenario) {
                scenarios.push(r.scenario.clone());
            }
        }
        for scenario in scenarios {
            let group: Vec<&BifurcationRow> =
                parsed.iter().filter(|r| r.scenario == scenario).collect();
            let detected: Vec<&BifurcationRow> =
                group.iter().copied().filter(|r| r.detected).collect();
            let ks: Vec<f64> = detected.iter().map(|r| r.mean_density).collect();
            let ratios: Vec<f64> = detected.iter().map(|r| r.ratio_to_jam).collect();
            let (mean_density, sd_density) = mean_sd(&ks);
            let (mean_ratio, sd_ratio) = mean_sd(&ratios);
            rows.push(CompareRow {
                scenario,
                replications: group.len(),
                detected: detected.len(),
                mean_density,
                sd_density,
                mean_ratio,
                sd_ratio,
            });
        }
    }
    Ok(rows)
}

pub fn render_comparison(rows: &[CompareRow]) -> String {
    use std::fmt::Write as _;
    let mut s = format!(
        "{} comparison\nscenario,replications,detected,mean_density,sd_density,mean_ratio,sd_ratio\n",
        csvio::SCHEMA_PREFIX
    );
    let opt = |v: Option<f64>| v.map(csvio::fmt_sig9).unwrap_or_else(|| "undetected".into());
    for r in rows {
        let _ = writeln!(
            s,
            "{},{},{},{},{},{},{}",
            r.scenario,
            r.replications,
            r.detected,
            opt(r.mean_density),
            opt(r.sd_density),
            opt(r.mean_ratio),
            opt(r.sd_ratio)
        );
    }
    s
}
