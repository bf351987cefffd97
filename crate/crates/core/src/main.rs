//! Command-line front end: single runs, batch suites, report comparison and
//! the A* baseline.

use clap::{Parser, Subcommand};
use std::path::PathBuf;
use std::process::ExitCode;
use swarmpath::baseline::{plan_arena_path, rasterize};
use swarmpath::harness::{
    self, aggregate_rows, compare_paths, load_scenario, load_suite, run_single, write_report,
    MetricsReport,
};
use swarmpath::params::SimParams;
use swarmpath::sim::RunStatus;
use swarmpath::world::ArenaSpec;

/// Default output directory environment variable.
const OUT_DIR_ENV: &str = "SWARMPATH_OUT";

#[derive(Parser)]
#[command(
    name = "swarmpath",
    about = "Swarm subgoal path-formation simulator and evaluation harness"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one scenario once and print the outcome.
    Run {
        #[arg(long)]
        scenario: PathBuf,
        #[arg(long, default_value_t = 1)]
        seed: u64,
        /// Disable the task-allocation round for this run.
        #[arg(long)]
        no_task_allocation: bool,
        /// Write per-tick trajectories, chain and baseline path to a file.
        #[arg(long)]
        export_traj: Option<PathBuf>,
        /// Worker threads for controller evaluation.
        #[arg(long, default_value_t = 1)]
        threads: usize,
        /// Write the event log as JSON lines to a file.
        #[arg(long)]
        export_events: Option<PathBuf>,
    },
    /// Run every scenario in a directory over several seeds.
    Batch {
        #[arg(long)]
        suite: PathBuf,
        #[arg(long, default_value_t = 5)]
        seeds: u64,
        /// Report CSV path; an aggregate JSON sidecar lands next to it.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Re-read a report and print the path-length comparison.
    Compare {
        #[arg(long)]
        report: PathBuf,
    },
    /// Plan the baseline path on an arena and print its length.
    Astar {
        #[arg(long)]
        arena: PathBuf,
        #[arg(long, default_value_t = 0.05)]
        resolution: f64,
    },
}

fn out_dir() -> PathBuf {
    std::env::var_os(OUT_DIR_ENV)
        .map(PathBuf::from)
        .unwrap_or_else(|| PathBuf::from("."))
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}

fn run(cli: Cli) -> Result<(), Box<dyn std::error::Error>> {
    match cli.command {
        Command::Run {
            scenario,
            seed,
            no_task_allocation,
            export_traj,
            threads,
            export_events,
        } => {
            let mut loaded = load_scenario(&scenario)?;
            if no_task_allocation {
                loaded.config.task_allocation = false;
            }
            if let Some(traj_path) = export_traj {
                let outcome = harness::export_trajectories(&loaded, seed, &traj_path)?;
                print_outcome(&loaded.name, seed, &outcome);
                println!("trajectories written to {}", traj_path.display());
                return Ok(());
            }
            let (outcome, sim) = run_single(&loaded, seed, threads.max(1))?;
            print_outcome(&loaded.name, seed, &outcome);
            if let Some(events_path) = export_events {
                std::fs::write(&events_path, sim.events.to_jsonl())?;
                println!("events written to {}", events_path.display());
            }
            Ok(())
        }
        Command::Batch { suite, seeds, out } => {
            let scenarios = load_suite(&suite)?;
            if scenarios.is_empty() {
                return Err(format!("no scenarios found in {}", suite.display()).into());
            }
            let seed_list: Vec<u64> = (1..=seeds).collect();
            let report = harness::run_suite(&scenarios, &seed_list)?;
            let csv_path = out.unwrap_or_else(|| out_dir().join("report.csv"));
            write_report(&report, &csv_path)?;
            print_aggregate(&report);
            println!("report written to {}", csv_path.display());
            Ok(())
        }
        Command::Compare { report } => {
            let rows = harness::report_from_csv(&std::fs::read_to_string(&report)?)?;
            println!("environment,seed,raw_m,optimized_m,astar_m,opt/astar,opt/raw,flags");
            for r in rows.iter().filter(|r| r.success()) {
                if let (Some(raw), Some(opt), Some(astar)) =
                    (r.raw_length_m, r.optimized_length_m, r.astar_length_m)
                {
                    let c = compare_paths(raw, opt, astar);
                    let mut flags = String::new();
                    if c.shorter_than_astar {
                        flags.push_str("beats_astar ");
                    }
                    if c.anomaly {
                        flags.push_str("ANOMALY ");
                    }
                    println!(
                        "{},{},{:.4},{:.4},{:.4},{:.3},{:.3},{}",
                        r.environment,
                        r.seed,
                        raw,
                        opt,
                        astar,
                        c.ratio_optimized_astar,
                        c.ratio_optimized_raw,
                        flags.trim_end()
                    );
                }
            }
            let agg = aggregate_rows(&rows);
            let report = MetricsReport {
                rows,
                aggregate: agg,
            };
            print_aggregate(&report);
            Ok(())
        }
        Command::Astar { arena, resolution } => {
            let spec = ArenaSpec::load(&arena)?;
            let radius = SimParams::default().robot_radius;
            let grid = rasterize(&spec, resolution, radius)?;
            let path = plan_arena_path(&spec, resolution, radius)?;
            println!(
                "grid {}x{} at {} m, {} occupied cells",
                grid.cols,
                grid.rows,
                resolution,
                grid.occupied_count()
            );
            println!(
                "baseline path: {} cells, length {:.4} m",
                path.cells.len(),
                path.length_m()
            );
            Ok(())
        }
    }
}

fn print_outcome(name: &str, seed: u64, outcome: &swarmpath::sim::SimOutcome) {
    let status = match outcome.status {
        RunStatus::PathFormed => "path_formed",
        RunStatus::Timeout => "timeout",
        RunStatus::Deadlock => "deadlock",
    };
    println!(
        "{name} seed {seed}: {status} after {} ticks ({:.1} s simulated)",
        outcome.ticks_elapsed,
        outcome.ticks_elapsed as f64 * 0.1
    );
    if let Some(anchors) = &outcome.chain_anchors {
        println!("  chain anchors: {}", anchors.len());
    }
    if let Some(alloc) = &outcome.allocation {
        println!(
            "  allocation: n={} assigned={} resting={} shortfall={}",
            alloc.n_required,
            alloc.assigned_path.len(),
            alloc.assigned_rest.len(),
            alloc.shortfall
        );
    }
    println!(
        "  robots active {} / resting {}",
        outcome.robots_active, outcome.robots_resting
    );
    println!("  trace_hash {:016x}", outcome.trace_hash);
}

fn print_aggregate(report: &MetricsReport) {
    let a = &report.aggregate;
    println!(
        "aggregate: {}/{} path_formed (success rate {:.1}%)",
        a.path_formed,
        a.runs,
        a.success_rate * 100.0
    );
    if let Some(m) = a.mean_resource_reduction_pct {
        println!("  mean resource reduction {:.2}%", m);
    }
    if let Some(f) = a.frac_optimized_not_longer_than_raw {
        println!("  optimized <= raw in {:.1}% of successes", f * 100.0);
    }
    if let Some(f) = a.frac_optimized_shorter_than_astar {
        println!("  optimized < astar in {:.1}% of successes", f * 100.0);
    }
    if let Some(t) = a.mean_seconds_success {
        println!("  mean time to path {:.1} s simulated", t);
    }
}
