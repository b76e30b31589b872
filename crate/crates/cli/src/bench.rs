//! `bench`: solve time against obstacle count, warm and cold.

use std::path::Path;
use std::time::SystemTime;

use serde::Serialize;
use stplan::planner::{plan, PlanCycleRecord};
use stplan::sim::metrics::percentile;
use stplan::sim::{step_world, EgoMotion, Scenario, SimConfig, TrafficModel, World};
use stplan::{
    ObstacleState, PlannerConfig, RoadGeometry, SolveStatus, VehicleState, WorldSnapshot,
};

use crate::error::{CliError, CliResult};
use crate::output::{write_csv, RunMeta};

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct CycleStat {
    pub solve_ms: f64,
    pub total_ms: f64,
    pub iterations: usize,
    pub converged: bool,
}

impl CycleStat {
    fn of(r: &PlanCycleRecord) -> Self {
        Self {
            solve_ms: r.timing.solve * 1e3,
            total_ms: r.timing.total * 1e3,
            iterations: r.total_iterations,
            converged: r.solution.status == SolveStatus::Converged && !r.fallback,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CyclePair {
    pub time: f64,
    pub in_range: usize,
    pub constraint_count: usize,
    pub warm: CycleStat,
    pub cold: CycleStat,
}

/// Plans `repeats` times and keeps the fastest timing. Planning is
/// deterministic, so only the clock differs between repeats.
fn timed_plan(
    snap: &WorldSnapshot,
    prev: Option<&PlanCycleRecord>,
    cfg: &PlannerConfig,
    repeats: usize,
) -> stplan::Result<PlanCycleRecord> {
    let mut best = plan(snap, prev, cfg)?;
    for _ in 1..repeats {
        let r = plan(snap, prev, cfg)?;
        best.timing.solve = best.timing.solve.min(r.timing.solve);
        best.timing.total = best.timing.total.min(r.timing.total);
    }
    Ok(best)
}

/// Drives the proposed planner in closed loop for `cycles` cycles. Each
/// cycle is planned twice from the same snapshot and previous record: once
/// warm-started from the shifted previous solution, once cold. The warm
/// plan's first input drives the ego.
pub fn warm_cold_cycles(
    scenario: &Scenario,
    cfg: &SimConfig,
    cycles: usize,
    repeats: usize,
) -> CliResult<Vec<CyclePair>> {
    let plant = cfg.plant();
    let warm_cfg = PlannerConfig {
        warm_start: true,
        ..cfg.planner
    };
    let cold_cfg = PlannerConfig {
        warm_start: false,
        ..cfg.planner
    };
    let mut world = World::from_scenario(scenario);
    let mut prev: Option<PlanCycleRecord> = None;
    let mut out = Vec::with_capacity(cycles);
    let planner_err = |e: stplan::Error| CliError::Planner(e.to_string());
    for _ in 0..cycles {
        let snap = world.snapshot();
        let warm = timed_plan(&snap, prev.as_ref(), &warm_cfg, repeats).map_err(planner_err)?;
        let cold = timed_plan(&snap, prev.as_ref(), &cold_cfg, repeats).map_err(planner_err)?;
        out.push(CyclePair {
            time: snap.time,
            in_range: warm.obstacles_in_range.len(),
            constraint_count: warm.constraint_count,
            warm: CycleStat::of(&warm),
            cold: CycleStat::of(&cold),
        });
        world = step_world(
            &world,
            EgoMotion::Dynamic(warm.first_input()),
            cfg.dt,
            &plant,
            &cfg.traffic,
        )
        .map_err(planner_err)?;
        prev = Some(warm);
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, clap::Args)]
pub struct BenchConfig {
    /// Largest obstacle count.
    #[arg(long, default_value_t = 12)]
    pub max_obstacles: usize,
    /// Obstacles placed inside the sensing window; the rest sit beyond it.
    #[arg(long, default_value_t = 6)]
    pub in_range: usize,
    /// Planning cycles per obstacle count.
    #[arg(long, default_value_t = 20)]
    pub cycles: usize,
    /// Timed repeats per plan; the fastest is kept.
    #[arg(long, default_value_t = 3)]
    pub repeats: usize,
}

impl Default for BenchConfig {
    fn default() -> Self {
        Self {
            max_obstacles: 12,
            in_range: 6,
            cycles: 20,
            repeats: 3,
        }
    }
}

/// Synthetic two-lane snapshot with `m` obstacles. The ego cruises just
/// under `v_max` with a free lane ahead, so added obstacles add collision
/// rows without changing its speed target. The first `in_range` obstacles
/// drive near the ego (the other lane ahead and behind, the ego's lane
/// behind); the rest cruise beyond the sensing window.
pub fn bench_scenario(m: usize, in_range: usize, cfg: &SimConfig) -> Scenario {
    const NEAR: [(f64, f64, f64); 6] = [
        (60.0, 2.0, 30.0),
        (-40.0, 6.0, 31.0),
        (120.0, 2.0, 30.0),
        (-30.0, 2.0, 32.0),
        (180.0, 2.0, 30.0),
        (-70.0, 6.0, 31.0),
    ];
    let v0 = cfg.planner.optimizer.limits.v_max - 0.3;
    let far_start = cfg.planner.sensing.ahead + 200.0;
    let obstacles = (0..m)
        .map(|j| {
            if j < in_range.min(NEAR.len()) {
                let (x, y, v) = NEAR[j];
                ObstacleState::new(x, y, v, 0.0)
            } else {
                let k = (j - in_range) as f64;
                let y = if j % 2 == 0 { 2.0 } else { 6.0 };
                ObstacleState::new(far_start + 60.0 * k, y, v0, 0.0)
            }
        })
        .collect();
    Scenario {
        name: format!("bench-{m}"),
        notes: String::new(),
        road: RoadGeometry {
            length: 3000.0,
            lanes: 2,
            lane_width: 4.0,
        },
        ego: VehicleState::cruising(0.0, 6.0, v0),
        obstacles,
        traffic: None,
        seed: 0,
        duration: 300.0,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BenchRow {
    pub m: usize,
    pub in_range: usize,
    pub constraint_count: usize,
    pub warm_median_ms: f64,
    pub warm_p95_ms: f64,
    pub cold_median_ms: f64,
    pub cold_p95_ms: f64,
    pub warm_median_iterations: f64,
    pub cold_median_iterations: f64,
    pub warm_converged: usize,
    pub cold_converged: usize,
}

fn stats(mut v: Vec<f64>) -> (f64, f64) {
    v.sort_by(f64::total_cmp);
    (percentile(&v, 0.5), percentile(&v, 0.95))
}

/// Sweeps `m = 0..=max_obstacles` and writes `bench.csv`. Obstacles keep
/// constant speed so every count sees the same traffic.
pub fn cmd_bench(sim: &SimConfig, bench: &BenchConfig, out: &Path) -> CliResult<Vec<BenchRow>> {
    if bench.cycles == 0 {
        return Err(CliError::Config("need at least one cycle".into()));
    }
    if bench.in_range > 6 {
        return Err(CliError::Config(format!(
            "at most 6 obstacles can be placed in range, got {}",
            bench.in_range
        )));
    }
    let started = SystemTime::now();
    let cfg = SimConfig {
        traffic: TrafficModel {
            follow_gap: 0.0,
            yield_to_ego: false,
            ..TrafficModel::default()
        },
        ..sim.clone()
    };
    let mut rows = Vec::new();
    for m in 0..=bench.max_obstacles {
        let scenario = bench_scenario(m, bench.in_range, &cfg);
        let pairs = warm_cold_cycles(&scenario, &cfg, bench.cycles, bench.repeats.max(1))?;
        let col = |f: fn(&CyclePair) -> f64| pairs.iter().map(f).collect::<Vec<_>>();
        let (warm_median_ms, warm_p95_ms) = stats(col(|p| p.warm.solve_ms));
        let (cold_median_ms, cold_p95_ms) = stats(col(|p| p.cold.solve_ms));
        rows.push(BenchRow {
            m,
            in_range: pairs[0].in_range,
            constraint_count: pairs[0].constraint_count,
            warm_median_ms,
            warm_p95_ms,
            cold_median_ms,
            cold_p95_ms,
            warm_median_iterations: stats(col(|p| p.warm.iterations as f64)).0,
            cold_median_iterations: stats(col(|p| p.cold.iterations as f64)).0,
            warm_converged: pairs.iter().filter(|p| p.warm.converged).count(),
            cold_converged: pairs.iter().filter(|p| p.cold.converged).count(),
        });
    }
    write_csv(&out.join("bench.csv"), rows.iter())?;
    RunMeta::new("bench", started, bench).write(out)?;
    Ok(rows)
}
