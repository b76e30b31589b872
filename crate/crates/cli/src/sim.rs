//! `sim` and `compare`: closed-loop runs over seeds.

use std::fs::File;
use std::io::BufWriter;
use std::path::Path;
use std::time::SystemTime;

use rayon::prelude::*;
use serde::Serialize;
use stplan::sim::{
    ego_ground_speed, metrics, run_closed_loop, PlannerKind, RunMetrics, Scenario, SimLog,
    SolveTimeStats,
};

use crate::config::RunConfig;
use crate::error::{CliError, CliResult};
use crate::output::{write_csv, write_json, RunMeta};

pub struct Run {
    pub seed: u64,
    pub kind: PlannerKind,
    pub log: SimLog,
    pub metrics: RunMetrics,
}

/// Per-run metrics without wall-clock fields.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MetricsRow {
    pub seed: u64,
    pub planner: &'static str,
    pub completion_time_s: Option<f64>,
    pub mean_speed: f64,
    pub max_speed: f64,
    pub lane_changes: usize,
    pub min_clearance: f64,
    pub clearance_violations: usize,
    pub behavior_switches: usize,
    pub fallbacks: usize,
    pub failed: bool,
}

impl MetricsRow {
    fn new(run: &Run) -> Self {
        let m = &run.metrics;
        Self {
            seed: run.seed,
            planner: run.kind.label(),
            completion_time_s: m.completion_time,
            mean_speed: m.mean_speed,
            max_speed: m.max_speed,
            lane_changes: m.lane_changes,
            min_clearance: m.min_clearance,
            clearance_violations: m.clearance_violations,
            behavior_switches: m.behavior_switches,
            fallbacks: m.fallbacks,
            failed: m.failed,
        }
    }
}

#[derive(Debug, Serialize)]
struct RunTiming {
    seed: u64,
    planner: &'static str,
    solve_time: SolveTimeStats,
}

fn run_one(scenario: &Scenario, seed: u64, kind: PlannerKind, cfg: &RunConfig) -> CliResult<Run> {
    let s = scenario
        .for_seed(seed)
        .map_err(|e| CliError::Config(e.to_string()))?;
    let log = run_closed_loop(&s, kind, &cfg.sim).map_err(|e| CliError::Config(e.to_string()))?;
    let metrics = metrics(&log, &s.road, cfg.sim.planner.params.radius);
    Ok(Run {
        seed,
        kind,
        log,
        metrics,
    })
}

/// Runs every `(seed, planner)` pair, in parallel, returned in input order.
pub fn run_batch(
    scenario: &Scenario,
    seeds: &[u64],
    kinds: &[PlannerKind],
    cfg: &RunConfig,
) -> CliResult<Vec<Run>> {
    let jobs: Vec<(u64, PlannerKind)> = seeds
        .iter()
        .flat_map(|&s| kinds.iter().map(move |&k| (s, k)))
        .collect();
    jobs.par_iter()
        .map(|&(seed, kind)| run_one(scenario, seed, kind, cfg))
        .collect()
}

/// Writes `log.jsonl` and `metrics.json` for one run.
pub fn cmd_sim(
    scenario: &Scenario,
    kind: PlannerKind,
    seed: u64,
    cfg: &RunConfig,
    out: &Path,
) -> CliResult<Run> {
    let started = SystemTime::now();
    let run = run_one(scenario, seed, kind, cfg)?;
    run.log
        .write_jsonl(BufWriter::new(File::create(out.join("log.jsonl"))?))?;
    write_json(&out.join("metrics.json"), &MetricsRow::new(&run))?;
    RunMeta::new(
        "sim",
        started,
        RunTiming {
            seed,
            planner: kind.label(),
            solve_time: run.metrics.solve_time,
        },
    )
    .write(out)?;
    if let Some(f) = &run.log.failure {
        return Err(CliError::Planner(f.clone()));
    }
    Ok(run)
}

#[derive(Debug, Serialize)]
struct SpeedRow {
    seed: u64,
    planner: &'static str,
    t: f64,
    x: f64,
    y: f64,
    speed: f64,
}

#[derive(Debug, Serialize)]
struct BehaviorRow {
    seed: u64,
    planner: &'static str,
    t: f64,
    current_lane: usize,
    planned_lane: usize,
    behavior: &'static str,
    fallback: bool,
}

#[derive(Debug, Clone, Serialize)]
pub struct PlannerSummary {
    pub planner: &'static str,
    pub runs: usize,
    pub completed: usize,
    pub median_completion_time_s: Option<f64>,
    pub median_lane_changes: f64,
    pub clearance_violations: usize,
    pub min_clearance: f64,
    pub failures: usize,
}

#[derive(Debug, Clone, Serialize)]
pub struct PairedDelta {
    pub seed: u64,
    /// Baseline minus proposed completion time (s); positive when the
    /// proposed planner finishes first.
    pub completion_delta_s: Option<f64>,
}

#[derive(Debug, Clone, Serialize)]
pub struct CompareSummary {
    pub scenario: String,
    pub seeds: Vec<u64>,
    pub proposed: PlannerSummary,
    pub baseline: PlannerSummary,
    /// Baseline median minus proposed median completion time (s).
    pub median_completion_delta_s: Option<f64>,
    pub paired: Vec<PairedDelta>,
}

fn median(mut v: Vec<f64>) -> Option<f64> {
    if v.is_empty() {
        return None;
    }
    v.sort_by(f64::total_cmp);
    Some(stplan::sim::metrics::percentile(&v, 0.5))
}

fn summarize(runs: &[&Run], kind: PlannerKind) -> PlannerSummary {
    PlannerSummary {
        planner: kind.label(),
        runs: runs.len(),
        completed: runs.iter().filter(|r| r.metrics.completion_time.is_some()).count(),
        median_completion_time_s: if runs.iter().all(|r| r.metrics.completion_time.is_some()) {
            median(runs.iter().filter_map(|r| r.metrics.completion_time).collect())
        } else {
            None
        },
        median_lane_changes: median(runs.iter().map(|r| r.metrics.lane_changes as f64).collect())
            .unwrap_or(0.0),
        clearance_violations: runs.iter().map(|r| r.metrics.clearance_violations).sum(),
        min_clearance: runs
            .iter()
            .map(|r| r.metrics.min_clearance)
            .fold(f64::INFINITY, f64::min),
        failures: runs.iter().filter(|r| r.metrics.failed).count(),
    }
}

pub struct CompareOutcome {
    pub runs: Vec<Run>,
    pub summary: CompareSummary,
}

/// Runs both planners on every seed and writes `metrics.csv`,
/// `speed_trace.csv`, `behavior_trace.csv`, `summary.json`, and the timing
/// in `run_meta.json`. With `logs`, each run's JSON-lines log goes under
/// `logs/`.
pub fn cmd_compare(
    scenario: &Scenario,
    cfg: &RunConfig,
    out: &Path,
    logs: bool,
) -> CliResult<CompareOutcome> {
    if cfg.seeds.is_empty() {
        return Err(CliError::Config("seed list is empty".into()));
    }
    let started = SystemTime::now();
    let kinds = [PlannerKind::Proposed, PlannerKind::Baseline];
    let runs = run_batch(scenario, &cfg.seeds, &kinds, cfg)?;

    write_csv(&out.join("metrics.csv"), runs.iter().map(MetricsRow::new))?;
    let speed = runs.iter().flat_map(|r| {
        std::iter::once(&r.log.initial)
            .chain(&r.log.steps)
            .map(move |s| SpeedRow {
                seed: r.seed,
                planner: r.kind.label(),
                t: s.time,
                x: s.ego.x,
                y: s.ego.y,
                speed: ego_ground_speed(&s.ego),
            })
    });
    write_csv(&out.join("speed_trace.csv"), speed)?;
    let behavior = runs.iter().flat_map(|r| {
        r.log.cycles.iter().map(move |c| BehaviorRow {
            seed: r.seed,
            planner: r.kind.label(),
            t: c.time,
            current_lane: c.current_lane,
            planned_lane: c.planned_lane,
            behavior: c.behavior.label(),
            fallback: c.fallback,
        })
    });
    write_csv(&out.join("behavior_trace.csv"), behavior)?;
    if logs {
        let dir = out.join("logs");
        std::fs::create_dir_all(&dir)?;
        for r in &runs {
            let path = dir.join(format!("{}-{}.jsonl", r.seed, r.kind.label()));
            r.log.write_jsonl(BufWriter::new(File::create(path)?))?;
        }
    }

    let of = |k: PlannerKind| runs.iter().filter(|r| r.kind == k).collect::<Vec<_>>();
    let (proposed, baseline) = (of(PlannerKind::Proposed), of(PlannerKind::Baseline));
    let p = summarize(&proposed, PlannerKind::Proposed);
    let b = summarize(&baseline, PlannerKind::Baseline);
    let summary = CompareSummary {
        scenario: scenario.name.clone(),
        seeds: cfg.seeds.clone(),
        median_completion_delta_s: p
            .median_completion_time_s
            .zip(b.median_completion_time_s)
            .map(|(p, b)| b - p),
        paired: proposed
            .iter()
            .zip(&baseline)
            .map(|(p, b)| PairedDelta {
                seed: p.seed,
                completion_delta_s: p
                    .metrics
                    .completion_time
                    .zip(b.metrics.completion_time)
                    .map(|(p, b)| b - p),
            })
            .collect(),
        proposed: p,
        baseline: b,
    };
    write_json(&out.join("summary.json"), &summary)?;
    let timing: Vec<RunTiming> = runs
        .iter()
        .map(|r| RunTiming {
            seed: r.seed,
            planner: r.kind.label(),
            solve_time: r.metrics.solve_time,
        })
        .collect();
    RunMeta::new("compare", started, timing).write(out)?;
    Ok(CompareOutcome { runs, summary })
}
