//! Scenario loading, batch experiment execution, metric reports and
//! trajectory export.

use crate::baseline::{chain_length, plan_arena_path};
use crate::geom::Vec2;
use crate::params::{ControllerParams, SimParams};
use crate::sim::{RunStatus, SimOutcome, Simulation};
use crate::world::{line_of_sight, ArenaSpec, ArenaError};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("scenario i/o: {0}")]
    Io(#[from] std::io::Error),
    #[error("scenario parse: {0}")]
    Parse(#[from] serde_json::Error),
    #[error("invalid scenario {path}: {reason}")]
    Invalid { path: String, reason: String },
    #[error(transparent)]
    Arena(#[from] ArenaError),
    #[error("simulation: {0}")]
    Sim(#[from] crate::sim::SimError),
    #[error("report parse at line {line}: {reason}")]
    Report { line: usize, reason: String },
}

/// One experiment description, loadable from JSON.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScenarioConfig {
    /// Arena file, relative to the scenario file.
    pub arena: String,
    pub robot_count: u32,
    pub seed: u64,
    pub max_ticks: u64,
    pub task_allocation: bool,
    /// Complexity margin for the required robot count.
    pub delta: f64,
    /// Baseline grid resolution in meters.
    pub grid_resolution: f64,
    pub controller: ControllerParams,
    pub name: Option<String>,
}

impl Default for ScenarioConfig {
    fn default() -> Self {
        ScenarioConfig {
            arena: String::new(),
            robot_count: 0,
            seed: 1,
            max_ticks: 300_000,
            task_allocation: true,
            delta: 2.0,
            grid_resolution: 0.05,
            controller: ControllerParams::default(),
            name: None,
        }
    }
}

impl ScenarioConfig {
    pub fn sim_params(&self) -> SimParams {
        let mut p = SimParams::default();
        p.controller = self.controller.clone();
        p.task_allocation = self.task_allocation;
        p.allocation_delta = self.delta;
        p.max_ticks = self.max_ticks;
        p
    }
}

/// A scenario with its arena resolved and loaded.
#[derive(Debug, Clone)]
pub struct LoadedScenario {
    pub name: String,
    pub config: ScenarioConfig,
    pub arena: ArenaSpec,
}

/// Load and validate a scenario file; defaults fill every omitted key.
pub fn load_scenario(path: &Path) -> Result<LoadedScenario, HarnessError> {
    let text = std::fs::read_to_string(path)?;
    let config: ScenarioConfig = serde_json::from_str(&text)?;
    let invalid = |reason: &str| HarnessError::Invalid {
        path: path.display().to_string(),
        reason: reason.to_string(),
    };
    if config.robot_count == 0 {
        return Err(invalid("robot_count must be positive"));
    }
    if config.arena.is_empty() {
        return Err(invalid("arena file reference missing"));
    }
    if config.grid_resolution <= 0.0 {
        return Err(invalid("grid_resolution must be positive"));
    }
    config
        .controller
        .validate()
        .map_err(|e| invalid(&format!("controller: {e}")))?;
    let arena_path = path
        .parent()
        .unwrap_or_else(|| Path::new("."))
        .join(&config.arena);
    let arena = ArenaSpec::load(&arena_path)?;
    let name = config.name.clone().unwrap_or_else(|| {
        path.file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_else(|| "scenario".into())
    });
    Ok(LoadedScenario {
        name,
        config,
        arena,
    })
}

/// Load every `*.json` scenario in a directory, sorted by file name.
pub fn load_suite(dir: &Path) -> Result<Vec<LoadedScenario>, HarnessError> {
    let mut paths: Vec<PathBuf> = std::fs::read_dir(dir)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().map(|x| x == "json").unwrap_or(false))
        .collect();
    paths.sort();
    paths.iter().map(|p| load_scenario(p)).collect()
}

/// Ordered nest-to-goal chain of anchor positions.
#[derive(Debug, Clone, PartialEq)]
pub struct SubgoalChain {
    pub nest: Vec2,
    pub anchors: Vec<(u32, Vec2)>,
    pub goal: Vec2,
}

impl SubgoalChain {
    pub fn from_anchors(arena: &ArenaSpec, anchors: Vec<(u32, Vec2)>) -> Self {
        SubgoalChain {
            nest: arena.nest.center,
            anchors,
            goal: arena.goal.center,
        }
    }

    pub fn polyline(&self) -> Vec<Vec2> {
        let mut pts = Vec::with_capacity(self.anchors.len() + 2);
        pts.push(self.nest);
        pts.extend(self.anchors.iter().map(|(_, p)| *p));
        pts.push(self.goal);
        pts
    }

    pub fn length_m(&self) -> f64 {
        chain_length(&self.polyline())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum ChainViolation {
    /// Consecutive points further apart than the visibility bound.
    Gap { index: usize, distance: f64 },
    /// Consecutive points separated by an obstacle.
    Occluded { index: usize },
}

/// Chain connectivity: consecutive points mutually within `max_range` with
/// unobstructed line of sight, nest and goal endpoints included. An empty
/// chain is valid only when the nest sees the goal directly.
pub fn validate_chain(
    chain: &SubgoalChain,
    arena: &ArenaSpec,
    max_range: f64,
) -> (bool, Vec<ChainViolation>) {
    let pts = chain.polyline();
    let mut violations = Vec::new();
    for (i, w) in pts.windows(2).enumerate() {
        let vis = line_of_sight(w[0], w[1], arena, max_range);
        if vis.out_of_range {
            violations.push(ChainViolation::Gap {
                index: i,
                distance: vis.range,
            });
        }
        if vis.occluded_by_obstacle {
            violations.push(ChainViolation::Occluded { index: i });
        }
    }
    (violations.is_empty(), violations)
}

/// One run's report row.
#[derive(Debug, Clone, Serialize)]
pub struct RunRecord {
    pub environment: String,
    pub seed: u64,
    pub status: String,
    pub ticks: u64,
    pub seconds: f64,
    pub robot_count: u32,
    pub raw_length_m: Option<f64>,
    pub optimized_length_m: Option<f64>,
    pub astar_length_m: Option<f64>,
    pub assigned_path: Option<u32>,
    pub robots_resting: u32,
    pub resource_reduction_pct: Option<f64>,
    pub chain_valid: bool,
    pub allocation_shortfall: Option<u32>,
}

impl RunRecord {
    pub fn success(&self) -> bool {
        self.status == "path_formed" && self.chain_valid
    }
}

/// Aggregate block over a batch.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Aggregate {
    pub runs: usize,
    pub path_formed: usize,
    pub success_rate: f64,
    pub mean_resource_reduction_pct: Option<f64>,
    pub frac_optimized_not_longer_than_raw: Option<f64>,
    pub frac_optimized_shorter_than_astar: Option<f64>,
    pub mean_seconds_success: Option<f64>,
}

#[derive(Debug, Clone)]
pub struct MetricsReport {
    pub rows: Vec<RunRecord>,
    pub aggregate: Aggregate,
}

fn mean(values: impl Iterator<Item = f64>) -> Option<f64> {
    let v: Vec<f64> = values.collect();
    if v.is_empty() {
        None
    } else {
        Some(v.iter().sum::<f64>() / v.len() as f64)
    }
}

/// Recompute the aggregate block from rows; pure so reports can be audited.
pub fn aggregate_rows(rows: &[RunRecord]) -> Aggregate {
    let runs = rows.len();
    let successes: Vec<&RunRecord> = rows.iter().filter(|r| r.success()).collect();
    let path_formed = successes.len();
    let frac = |pred: &dyn Fn(&RunRecord) -> Option<bool>| -> Option<f64> {
        let flags: Vec<bool> = successes.iter().filter_map(|r| pred(r)).collect();
        if flags.is_empty() {
            None
        } else {
            Some(flags.iter().filter(|&&b| b).count() as f64 / flags.len() as f64)
        }
    };
    Aggregate {
        runs,
        path_formed,
        success_rate: if runs == 0 {
            0.0
        } else {
            path_formed as f64 / runs as f64
        },
        mean_resource_reduction_pct: mean(
            successes
                .iter()
                .filter_map(|r| r.resource_reduction_pct),
        ),
        frac_optimized_not_longer_than_raw: frac(&|r| {
            Some(r.optimized_length_m? <= r.raw_length_m? + 1e-9)
        }),
        frac_optimized_shorter_than_astar: frac(&|r| {
            Some(r.optimized_length_m? < r.astar_length_m?)
        }),
        mean_seconds_success: mean(successes.iter().map(|r| r.seconds)),
    }
}

/// The simulation half of one run, without the baseline columns.
pub fn run_single(
    scenario: &LoadedScenario,
    seed: u64,
    threads: usize,
) -> Result<(SimOutcome, Simulation), HarnessError> {
    let mut params = scenario.config.sim_params();
    params.threads = threads;
    let mut sim = Simulation::new(
        scenario.arena.clone(),
        params,
        scenario.config.robot_count,
        seed,
    )?;
    let outcome = sim.run()?;
    Ok((outcome, sim))
}

fn record_run(
    scenario: &LoadedScenario,
    seed: u64,
    outcome: &SimOutcome,
    astar_length_m: Option<f64>,
) -> RunRecord {
    let cfg = &scenario.config;
    let tick_s = 0.1;
    let status = match outcome.status {
        RunStatus::PathFormed => "path_formed",
        RunStatus::Timeout => "timeout",
        RunStatus::Deadlock => "deadlock",
    };
    let opt_chain = outcome
        .chain_anchors
        .clone()
        .map(|a| SubgoalChain::from_anchors(&scenario.arena, a));
    let raw_chain = outcome
        .raw_chain_anchors
        .clone()
        .map(|a| SubgoalChain::from_anchors(&scenario.arena, a));
    let chain_valid = opt_chain
        .as_ref()
        .map(|c| validate_chain(c, &scenario.arena, crate::world::CAMERA_RANGE_M).0)
        .unwrap_or(false);
    let (assigned, reduction, shortfall) = if cfg.task_allocation {
        match &outcome.allocation {
            Some(alloc) => {
                let assigned = alloc.assigned_path.len() as u32;
                let red = 100.0 * (cfg.robot_count - assigned) as f64 / cfg.robot_count as f64;
                (Some(assigned), Some(red), Some(alloc.shortfall))
            }
            None => (None, None, None),
        }
    } else {
        // all robots take part: reduction is zero by definition
        (Some(cfg.robot_count), Some(0.0), None)
    };
    RunRecord {
        environment: scenario.name.clone(),
        seed,
        status: status.to_string(),
        ticks: outcome.ticks_elapsed,
        seconds: outcome.ticks_elapsed as f64 * tick_s,
        robot_count: cfg.robot_count,
        raw_length_m: raw_chain.as_ref().map(|c| c.length_m()),
        optimized_length_m: opt_chain.as_ref().map(|c| c.length_m()),
        astar_length_m,
        assigned_path: assigned,
        robots_resting: outcome.robots_resting,
        resource_reduction_pct: reduction,
        chain_valid,
        allocation_shortfall: shortfall,
    }
}

/// One run with everything the audits need.
pub struct DetailedRun {
    pub environment: String,
    pub seed: u64,
    pub record: RunRecord,
    pub outcome: SimOutcome,
    pub events: crate::sim::EventLog,
    pub arena: ArenaSpec,
}

/// Like [`run_experiment`] but keeps outcomes and event logs.
pub fn run_experiment_detailed(
    scenario: &LoadedScenario,
    seeds: &[u64],
) -> Result<Vec<DetailedRun>, HarnessError> {
    let astar_length_m = plan_arena_path(
        &scenario.arena,
        scenario.config.grid_resolution,
        SimParams::default().robot_radius,
    )
    .ok()
    .map(|p| p.length_m());
    let runs: Vec<DetailedRun> = seeds
        .par_iter()
        .map(|&seed| {
            let (outcome, sim) = run_single(scenario, seed, 1)
                .unwrap_or_else(|e| panic!("run {} seed {seed}: {e}", scenario.name));
            DetailedRun {
                environment: scenario.name.clone(),
                seed,
                record: record_run(scenario, seed, &outcome, astar_length_m),
                outcome,
                events: sim.events,
                arena: scenario.arena.clone(),
            }
        })
        .collect();
    Ok(runs)
}

/// Run one scenario over a list of seeds; rows stay in seed order.
pub fn run_experiment(
    scenario: &LoadedScenario,
    seeds: &[u64],
) -> Result<MetricsReport, HarnessError> {
    let astar_length_m = plan_arena_path(
        &scenario.arena,
        scenario.config.grid_resolution,
        SimParams::default().robot_radius,
    )
    .ok()
    .map(|p| p.length_m());
    let rows: Vec<RunRecord> = seeds
        .par_iter()
        .map(|&seed| {
            let (outcome, _) = run_single(scenario, seed, 1)
                .unwrap_or_else(|e| panic!("run {} seed {seed}: {e}", scenario.name));
            record_run(scenario, seed, &outcome, astar_length_m)
        })
        .collect();
    let aggregate = aggregate_rows(&rows);
    Ok(MetricsReport { rows, aggregate })
}

/// Run a whole suite; rows ordered by (environment, seed).
pub fn run_suite(
    scenarios: &[LoadedScenario],
    seeds: &[u64],
) -> Result<MetricsReport, HarnessError> {
    let mut rows = Vec::new();
    for scenario in scenarios {
        rows.extend(run_experiment(scenario, seeds)?.rows);
    }
    let aggregate = aggregate_rows(&rows);
    Ok(MetricsReport { rows, aggregate })
}

/// Length ratios for one successful run.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ComparisonRow {
    pub raw_m: f64,
    pub optimized_m: f64,
    pub astar_m: f64,
    pub ratio_optimized_astar: f64,
    pub ratio_optimized_raw: f64,
    pub shorter_than_astar: bool,
    pub not_longer_than_raw: bool,
    /// Raw shorter than optimized would contradict the alignment passes.
    pub anomaly: bool,
}

pub fn compare_paths(raw_m: f64, optimized_m: f64, astar_m: f64) -> ComparisonRow {
    ComparisonRow {
        raw_m,
        optimized_m,
        astar_m,
        ratio_optimized_astar: optimized_m / astar_m,
        ratio_optimized_raw: optimized_m / raw_m,
        shorter_than_astar: optimized_m < astar_m,
        not_longer_than_raw: optimized_m <= raw_m + 1e-9,
        anomaly: optimized_m > raw_m + 1e-9,
    }
}

const CSV_HEADER: &str = "environment,seed,status,ticks,seconds,robot_count,raw_length_m,optimized_length_m,astar_length_m,assigned_path,robots_resting,resource_reduction_pct,chain_valid,allocation_shortfall";

fn fmt_opt_f(v: Option<f64>, precision: usize) -> String {
    v.map(|x| format!("{x:.precision$}")).unwrap_or_default()
}

fn fmt_opt_u(v: Option<u32>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

/// Byte-deterministic CSV rendering of a report.
pub fn report_to_csv(report: &MetricsReport) -> String {
    let mut out = String::new();
    out.push_str(CSV_HEADER);
    out.push('\n');
    for r in &report.rows {
        let _ = writeln!(
            out,
            "{},{},{},{},{:.1},{},{},{},{},{},{},{},{},{}",
            r.environment,
            r.seed,
            r.status,
            r.ticks,
            r.seconds,
            r.robot_count,
            fmt_opt_f(r.raw_length_m, 4),
            fmt_opt_f(r.optimized_length_m, 4),
            fmt_opt_f(r.astar_length_m, 4),
            fmt_opt_u(r.assigned_path),
            r.robots_resting,
            fmt_opt_f(r.resource_reduction_pct, 2),
            r.chain_valid,
            fmt_opt_u(r.allocation_shortfall),
        );
    }
    out
}

/// Parse a report CSV back into rows (inverse of [`report_to_csv`]).
pub fn report_from_csv(text: &str) -> Result<Vec<RunRecord>, HarnessError> {
    let mut rows = Vec::new();
    let mut lines = text.lines().enumerate();
    match lines.next() {
        Some((_, h)) if h == CSV_HEADER => {}
        _ => {
            return Err(HarnessError::Report {
                line: 1,
                reason: "missing or unexpected header".into(),
            })
        }
    }
    for (i, line) in lines {
        if line.trim().is_empty() {
            continue;
        }
        let f: Vec<&str> = line.split(',').collect();
        if f.len() != 14 {
            return Err(HarnessError::Report {
                line: i + 1,
                reason: format!("expected 14 fields, got {}", f.len()),
            });
        }
        let err = |reason: String| HarnessError::Report {
            line: i + 1,
            reason,
        };
        let opt_f = |s: &str| -> Option<f64> {
            if s.is_empty() {
                None
            } else {
                s.parse().ok()
            }
        };
        let opt_u = |s: &str| -> Option<u32> {
            if s.is_empty() {
                None
            } else {
                s.parse().ok()
            }
        };
        rows.push(RunRecord {
            environment: f[0].to_string(),
            seed: f[1].parse().map_err(|e| err(format!("seed: {e}")))?,
            status: f[2].to_string(),
            ticks: f[3].parse().map_err(|e| err(format!("ticks: {e}")))?,
            seconds: f[4].parse().map_err(|e| err(format!("seconds: {e}")))?,
            robot_count: f[5]
                .parse()
                .map_err(|e| err(format!("robot_count: {e}")))?,
            raw_length_m: opt_f(f[6]),
            optimized_length_m: opt_f(f[7]),
            astar_length_m: opt_f(f[8]),
            assigned_path: opt_u(f[9]),
            robots_resting: f[10]
                .parse()
                .map_err(|e| err(format!("robots_resting: {e}")))?,
            resource_reduction_pct: opt_f(f[11]),
            chain_valid: f[12]
                .parse()
                .map_err(|e| err(format!("chain_valid: {e}")))?,
            allocation_shortfall: opt_u(f[13]),
        });
    }
    Ok(rows)
}

/// Write the report CSV plus a JSON aggregate sidecar next to it.
pub fn write_report(report: &MetricsReport, csv_path: &Path) -> Result<(), HarnessError> {
    if let Some(dir) = csv_path.parent() {
        if !dir.as_os_str().is_empty() {
            std::fs::create_dir_all(dir)?;
        }
    }
    std::fs::write(csv_path, report_to_csv(report))?;
    let sidecar = csv_path.with_extension("aggregate.json");
    let json = serde_json::to_string_pretty(&report.aggregate).expect("aggregate serializes");
    std::fs::write(sidecar, json + "\n")?;
    Ok(())
}

/// Per-tick trajectory export: tick,robot_id,x,y,heading,state,led rows,
/// then the final chain and the baseline path as separate sections.
pub fn export_trajectories(
    scenario: &LoadedScenario,
    seed: u64,
    path: &Path,
) -> Result<SimOutcome, HarnessError> {
    let mut params = scenario.config.sim_params();
    params.threads = 1;
    let mut sim = Simulation::new(
        scenario.arena.clone(),
        params,
        scenario.config.robot_count,
        seed,
    )?;
    let mut out = String::new();
    out.push_str("# trajectories\n");
    out.push_str("tick,robot_id,x,y,heading,state,led\n");
    let direct = line_of_sight(
        scenario.arena.nest.center,
        scenario.arena.goal.center,
        &scenario.arena,
        crate::world::CAMERA_RANGE_M,
    );
    let outcome = if direct.visible {
        sim.run()?
    } else {
        loop {
            for r in &sim.robots {
                let _ = writeln!(
                    out,
                    "{},{},{},{},{},{},{}",
                    sim.tick, r.id, r.pos.x, r.pos.y, r.heading, r.state, r.led
                );
            }
            sim.step();
            if let Some(msg) = sim.fault.take() {
                return Err(HarnessError::Sim(crate::sim::SimError::Fault {
                    tick: sim.tick,
                    message: msg,
                }));
            }
            if sim.path_formed {
                break sim.outcome(RunStatus::PathFormed);
            }
            if sim.tick >= sim.params.max_ticks {
                break sim.outcome(RunStatus::Timeout);
            }
            if sim.tick - sim.last_activity_tick > sim.params.deadlock_window {
                break sim.outcome(RunStatus::Deadlock);
            }
        }
    };

    out.push_str("# chain\n");
    if let Some(anchors) = &outcome.chain_anchors {
        let chain = SubgoalChain::from_anchors(&scenario.arena, anchors.clone());
        for p in chain.polyline() {
            let _ = writeln!(out, "{},{}", p.x, p.y);
        }
    }
    out.push_str("# astar\n");
    if let Ok(grid_path) = plan_arena_path(
        &scenario.arena,
        scenario.config.grid_resolution,
        SimParams::default().robot_radius,
    ) {
        let grid = crate::baseline::rasterize(
            &scenario.arena,
            scenario.config.grid_resolution,
            SimParams::default().robot_radius,
        )
        .expect("grid rasterized once already");
        for cell in &grid_path.cells {
            let c = grid.center_of(*cell);
            let _ = writeln!(out, "{},{}", c.x, c.y);
        }
    }
    if let Some(dir) = path.parent() {
        if !dir.as_os_str().is_empty() {
            std::fs::create_dir_all(dir)?;
        }
    }
    std::fs::write(path, out)?;
    Ok(outcome)
}

/// Read back the `# chain` section of a trajectory export.
pub fn read_exported_chain(path: &Path) -> Result<Vec<Vec2>, HarnessError> {
    let text = std::fs::read_to_string(path)?;
    let mut pts = Vec::new();
    let mut in_chain = false;
    for line in text.lines() {
        if line == "# chain" {
            in_chain = true;
            continue;
        }
        if in_chain {
            if line.starts_with('#') {
                break;
            }
            let mut parts = line.split(',');
            let x: f64 = parts
                .next()
                .and_then(|s| s.parse().ok())
                .ok_or_else(|| HarnessError::Report {
                    line: 0,
                    reason: "bad chain row".into(),
                })?;
            let y: f64 = parts
                .next()
                .and_then(|s| s.parse().ok())
                .ok_or_else(|| HarnessError::Report {
                    line: 0,
                    reason: "bad chain row".into(),
                })?;
            pts.push(Vec2::new(x, y));
        }
    }
    Ok(pts)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::world::Disk;

    fn arena() -> ArenaSpec {
        ArenaSpec {
            width: 8.0,
            height: 4.0,
            obstacles: vec![],
            nest: Disk {
                center: Vec2::new(1.0, 2.0),
                radius: 0.25,
            },
            goal: Disk {
                center: Vec2::new(6.0, 2.0),
                radius: 0.25,
            },
            light_source: None,
            reference_intensity: 1.0,
        }
    }

    #[test]
    fn chain_validation_cases() {
        let mut a = arena();
        // direct visibility, empty chain
        a.goal.center = Vec2::new(1.9, 2.0);
        let chain = SubgoalChain::from_anchors(&a, vec![]);
        assert!(validate_chain(&chain, &a, 1.0).0);

        // gap violation
        let a = arena();
        let chain = SubgoalChain::from_anchors(&a, vec![(0, Vec2::new(2.2, 2.0))]);
        let (ok, violations) = validate_chain(&chain, &a, 1.0);
        assert!(!ok);
        assert!(violations
            .iter()
            .any(|v| matches!(v, ChainViolation::Gap { .. })));

        // occlusion violation
        let mut blocked = arena();
        blocked
            .obstacles
            .push(crate::geom::Rect::from_bounds(1.4, 1.5, 1.6, 2.5));
        let anchors: Vec<(u32, Vec2)> = (0..6)
            .map(|i| (i as u32, Vec2::new(1.8 + 0.75 * i as f64, 2.0)))
            .collect();
        let chain = SubgoalChain::from_anchors(&blocked, anchors);
        let (ok, violations) = validate_chain(&chain, &blocked, 1.0);
        assert!(!ok);
        assert!(violations
            .iter()
            .any(|v| matches!(v, ChainViolation::Occluded { index: 0 })));
    }

    #[test]
    fn compare_paths_ratios() {
        let row = compare_paths(6.57, 5.015, 5.00);
        assert!((row.ratio_optimized_astar - 1.003).abs() < 1e-9);
        assert!((row.ratio_optimized_raw - 0.7633181126331811).abs() < 1e-9);
        assert!(!row.shorter_than_astar);
        assert!(row.not_longer_than_raw);
        assert!(!row.anomaly);

        let row = compare_paths(5.0, 5.0, 5.0);
        assert!((row.ratio_optimized_raw - 1.0).abs() < 1e-12);

        // injected anomaly: raw shorter than optimized
        let row = compare_paths(4.0, 4.5, 5.0);
        assert!(row.anomaly);
    }

    #[test]
    fn aggregate_is_pure_function_of_rows() {
        let rows = vec![
            RunRecord {
                environment: "e1".into(),
                seed: 1,
                status: "path_formed".into(),
                ticks: 100,
                seconds: 10.0,
                robot_count: 10,
                raw_length_m: Some(6.0),
                optimized_length_m: Some(5.5),
                astar_length_m: Some(5.0),
                assigned_path: Some(4),
                robots_resting: 6,
                resource_reduction_pct: Some(60.0),
                chain_valid: true,
                allocation_shortfall: Some(0),
            },
            RunRecord {
                environment: "e1".into(),
                seed: 2,
                status: "timeout".into(),
                ticks: 500,
                seconds: 50.0,
                robot_count: 10,
                raw_length_m: None,
                optimized_length_m: None,
                astar_length_m: Some(5.0),
                assigned_path: None,
                robots_resting: 2,
                resource_reduction_pct: None,
                chain_valid: false,
                allocation_shortfall: None,
            },
        ];
        let agg = aggregate_rows(&rows);
        assert_eq!(agg.runs, 2);
        assert_eq!(agg.path_formed, 1);
        assert!((agg.success_rate - 0.5).abs() < 1e-12);
        assert_eq!(agg.mean_resource_reduction_pct, Some(60.0));
        assert_eq!(agg.frac_optimized_not_longer_than_raw, Some(1.0));
        assert_eq!(agg.frac_optimized_shorter_than_astar, Some(0.0));
        let again = aggregate_rows(&rows);
        assert_eq!(agg, again);
    }

    #[test]
    fn csv_round_trip() {
        let rows = vec![RunRecord {
            environment: "env1".into(),
            seed: 3,
            status: "path_formed".into(),
            ticks: 1234,
            seconds: 123.4,
            robot_count: 60,
            raw_length_m: Some(6.5701),
            optimized_length_m: Some(5.015),
            astar_length_m: Some(5.0),
            assigned_path: Some(12),
            robots_resting: 47,
            resource_reduction_pct: Some(80.0),
            chain_valid: true,
            allocation_shortfall: Some(0),
        }];
        let report = MetricsReport {
            aggregate: aggregate_rows(&rows),
            rows,
        };
        let csv = report_to_csv(&report);
        let parsed = report_from_csv(&csv).unwrap();
        assert_eq!(parsed.len(), 1);
        assert_eq!(parsed[0].environment, "env1");
        assert_eq!(parsed[0].assigned_path, Some(12));
        assert_eq!(parsed[0].raw_length_m, Some(6.5701));
        // resource reduction recomputable from raw columns
        let r = &parsed[0];
        let recomputed =
            100.0 * (r.robot_count - r.assigned_path.unwrap()) as f64 / r.robot_count as f64;
        assert!((recomputed - r.resource_reduction_pct.unwrap()).abs() < 1e-9);
    }

    #[test]
    fn scenario_defaults_and_validation() {
        let dir = tempfile::tempdir().unwrap();
        let arena_path = dir.path().join("a.json");
        std::fs::write(
            &arena_path,
            serde_json::to_string(&arena()).unwrap(),
        )
        .unwrap();
        // minimal config: arena + robot count
        let sc_path = dir.path().join("s.json");
        std::fs::write(&sc_path, r#"{"arena":"a.json","robot_count":12}"#).unwrap();
        let loaded = load_scenario(&sc_path).unwrap();
        assert_eq!(loaded.config.robot_count, 12);
        assert_eq!(loaded.config.seed, 1);
        assert!(loaded.config.task_allocation);
        assert!((loaded.config.delta - 2.0).abs() < 1e-12);
        assert_eq!(loaded.name, "s");

        // zero robots rejected
        std::fs::write(&sc_path, r#"{"arena":"a.json","robot_count":0}"#).unwrap();
        assert!(load_scenario(&sc_path).is_err());
    }
}
