//! `plan`: one planning cycle from a scenario's initial state.

use std::path::Path;

use serde::Serialize;
use stplan::collision::{pairwise_clearances, Body};
use stplan::planner::{min_predicted_clearance, plan, PlanCycleRecord};
use stplan::sim::Scenario;
use stplan::{SolveStatus, WorldSnapshot};

use crate::config::RunConfig;
use crate::error::{CliError, CliResult};
use crate::output::{write_csv, write_json};

#[derive(Debug, Serialize)]
struct TrajectoryRow {
    t: f64,
    x: f64,
    y: f64,
    theta: f64,
    delta: f64,
    vx: f64,
    vy: f64,
    r: f64,
    gamma: f64,
    a: f64,
    v_pre: f64,
}

#[derive(Debug, Serialize)]
struct ClearanceRow {
    t: f64,
    obstacle: usize,
    lateral_m: f64,
    longitudinal_m: f64,
    clearance_m: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct PlanStats {
    pub scenario: String,
    pub status: SolveStatus,
    pub fallback: bool,
    pub iterations: usize,
    pub total_iterations: usize,
    pub solves: usize,
    pub objective: f64,
    pub max_violation: f64,
    pub stationarity: f64,
    pub constraint_count: usize,
    pub obstacles_in_range: Vec<usize>,
    pub target_lane: usize,
    pub min_clearance: Option<f64>,
    pub terminal_speed: f64,
    pub terminal_accel: f64,
}

pub struct PlanOutcome {
    pub record: PlanCycleRecord,
    pub stats: PlanStats,
}

pub fn snapshot_of(s: &Scenario) -> WorldSnapshot {
    WorldSnapshot {
        time: 0.0,
        ego: s.ego,
        obstacles: s.obstacles.clone(),
        road: s.road,
    }
}

/// Plans once and writes `trajectory.csv`, `clearance.csv` and `stats.json`.
/// Trajectory row `i` holds knot `X_i` at `t_i` and the input held over
/// `[t_{i−1}, t_i]`.
pub fn cmd_plan(scenario: &Scenario, cfg: &RunConfig, out: &Path) -> CliResult<PlanOutcome> {
    let pc = &cfg.sim.planner;
    let snapshot = snapshot_of(scenario);
    let record = plan(&snapshot, None, pc).map_err(|e| CliError::Planner(e.to_string()))?;
    let sol = &record.solution;
    let dts = pc.dt_schedule();
    let times: Vec<f64> = dts
        .iter()
        .scan(snapshot.time, |t, dt| {
            *t += dt;
            Some(*t)
        })
        .collect();

    let trajectory = sol
        .states
        .iter()
        .zip(&sol.inputs)
        .zip(&record.v_pre)
        .zip(&times)
        .map(|(((x, u), &v_pre), &t)| TrajectoryRow {
            t,
            x: x.x,
            y: x.y,
            theta: x.theta,
            delta: x.delta,
            vx: x.vx,
            vy: x.vy,
            r: x.r,
            gamma: u.gamma,
            a: u.a,
            v_pre,
        });
    write_csv(&out.join("trajectory.csv"), trajectory)?;

    let body = Body {
        l1: pc.params.l1,
        l2: pc.params.l2,
    };
    let mut clearance = Vec::new();
    for (i, (x, &t)) in sol.states.iter().zip(&times).enumerate() {
        let ego = stplan::Pose::new(x.x, x.y, x.theta);
        for p in &record.predictions {
            let pose = p.poses[i];
            let d = pairwise_clearances(&ego, body, &pose, Body { l1: p.l1, l2: p.l2 });
            clearance.push(ClearanceRow {
                t,
                obstacle: p.id,
                lateral_m: (pose.y - x.y).abs(),
                longitudinal_m: (pose.x - x.x).abs(),
                clearance_m: d.into_iter().fold(f64::INFINITY, f64::min),
            });
        }
    }
    write_csv(&out.join("clearance.csv"), clearance)?;

    let last = sol.states.last().expect("non-empty horizon");
    let stats = PlanStats {
        scenario: scenario.name.clone(),
        status: sol.status,
        fallback: record.fallback,
        iterations: sol.iterations,
        total_iterations: record.total_iterations,
        solves: record.solves,
        objective: sol.objective,
        max_violation: sol.max_violation,
        stationarity: sol.stationarity,
        constraint_count: record.constraint_count,
        obstacles_in_range: record.obstacles_in_range.clone(),
        target_lane: record.target_lane,
        min_clearance: min_predicted_clearance(&sol.states, &record.predictions, &pc.params)
            .map(|c| c.distance),
        terminal_speed: last.vx,
        terminal_accel: sol.inputs.last().map_or(0.0, |u| u.a),
    };
    write_json(&out.join("stats.json"), &stats)?;
    Ok(PlanOutcome { record, stats })
}
