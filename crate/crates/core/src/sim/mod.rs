//! Closed-loop traffic simulation, the Frenet comparison planner, and run
//! metrics.

pub mod baseline;
pub mod metrics;
pub mod scenario;
pub mod world;

use std::io::Write;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::dynamics::{Transition, VehicleState};
use crate::error::Result;
use crate::planner::{plan, PlanCycleRecord, PlannerConfig};
use crate::prediction::ObstacleState;
use crate::solver::SolveStatus;

pub use baseline::{baseline_frenet_plan, BaselineConfig, BaselinePlan};
pub use metrics::{metrics, Behavior, RunMetrics, SolveTimeStats};
pub use scenario::{spawn_dense_traffic, DenseTrafficConfig, LaneTraffic, Scenario, TrafficConfig};
pub use world::{ego_ground_speed, step_world, world_clearance, EgoMotion, TrafficModel, World};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PlannerKind {
    Proposed,
    Baseline,
}

impl PlannerKind {
    pub fn label(self) -> &'static str {
        match self {
            PlannerKind::Proposed => "proposed",
            PlannerKind::Baseline => "baseline",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SimConfig {
    /// Defaults to the planner defaults with uncertainty inflation `k = 2`,
    /// since reacting traffic departs from the constant-velocity prediction.
    pub planner: PlannerConfig,
    pub baseline: BaselineConfig,
    pub traffic: TrafficModel,
    /// Multiplies both cornering stiffnesses of the plant, for model-mismatch
    /// experiments. 1.0 means the plant equals the planning model.
    pub plant_stiffness_scale: f64,
    /// Replanning and world-step period (s).
    pub dt: f64,
}

impl Default for SimConfig {
    fn default() -> Self {
        let mut planner = PlannerConfig::default();
        planner.optimizer.collision.inflation_k = 2.0;
        Self {
            planner,
            baseline: BaselineConfig::default(),
            traffic: TrafficModel::default(),
            plant_stiffness_scale: 1.0,
            dt: 0.5,
        }
    }
}

impl SimConfig {
    pub fn plant(&self) -> Transition {
        let mut p = self.planner.params;
        p.c_alpha_f *= self.plant_stiffness_scale;
        p.c_alpha_r *= self.plant_stiffness_scale;
        Transition::new(p, self.planner.optimizer.substeps)
    }
}

/// World state after each step.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimStep {
    pub time: f64,
    pub ego: VehicleState,
    pub obstacles: Vec<ObstacleState>,
    /// Time-matched circle clearance to the nearest in-range obstacle.
    pub clearance: Option<f64>,
    /// Whether the plan that drove this step converged.
    pub plan_converged: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum CycleDetail {
    Proposed(Box<PlanCycleRecord>),
    Baseline(Box<BaselinePlan>),
}

/// One replanning cycle.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CycleLog {
    pub time: f64,
    pub current_lane: usize,
    /// Lane of the planned terminal state.
    pub planned_lane: usize,
    pub behavior: Behavior,
    pub fallback: bool,
    pub converged: bool,
    pub iterations: usize,
    pub constraint_count: usize,
    /// Wall time of the cycle (ms).
    pub solve_ms: f64,
    pub detail: CycleDetail,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimLog {
    pub scenario: String,
    pub planner: PlannerKind,
    pub dt: f64,
    pub road_length: f64,
    pub initial: SimStep,
    pub steps: Vec<SimStep>,
    pub cycles: Vec<CycleLog>,
    pub completion_time: Option<f64>,
    /// Set when the loop stopped on a planner or plant error.
    pub failure: Option<String>,
}

#[derive(Serialize)]
#[serde(tag = "type", rename_all = "kebab-case")]
enum LogLine<'a> {
    Header {
        scenario: &'a str,
        planner: PlannerKind,
        dt: f64,
        road_length: f64,
    },
    Step(&'a SimStep),
    Cycle(&'a CycleLog),
    End {
        completion_time: Option<f64>,
        failure: &'a Option<String>,
    },
}

impl SimLog {
    /// Copy with every wall-clock field zeroed.
    pub fn without_timing(&self) -> Self {
        let mut log = self.clone();
        for c in &mut log.cycles {
            c.solve_ms = 0.0;
            if let CycleDetail::Proposed(r) = &mut c.detail {
                **r = r.without_timing();
            }
        }
        log
    }

    /// Writes the log as JSON lines, timing excluded.
    pub fn write_jsonl(&self, mut out: impl Write) -> std::io::Result<()> {
        let log = self.without_timing();
        let mut line = |l: &LogLine| -> std::io::Result<()> {
            serde_json::to_writer(&mut out, l)?;
            out.write_all(b"\n")
        };
        line(&LogLine::Header {
            scenario: &log.scenario,
            planner: log.planner,
            dt: log.dt,
            road_length: log.road_length,
        })?;
        line(&LogLine::Step(&log.initial))?;
        for (s, c) in log.steps.iter().zip(&log.cycles) {
            line(&LogLine::Cycle(c))?;
            line(&LogLine::Step(s))?;
        }
        line(&LogLine::End {
            completion_time: log.completion_time,
            failure: &log.failure,
        })
    }
}

fn behavior(current: usize, planned: usize) -> Behavior {
    match planned.cmp(&current) {
        std::cmp::Ordering::Equal => Behavior::Follow,
        std::cmp::Ordering::Greater => Behavior::Left,
        std::cmp::Ordering::Less => Behavior::Right,
    }
}

fn record_step(world: &World, cfg: &SimConfig, converged: bool) -> SimStep {
    SimStep {
        time: world.time,
        ego: world.ego,
        obstacles: world.obstacles.clone(),
        clearance: world_clearance(world, &cfg.planner.params, &cfg.planner.sensing).map(|c| c.0),
        plan_converged: converged,
    }
}

/// Runs the lockstep loop: plan, apply, step the world, until the ego passes
/// the road end or the duration cap is reached.
pub fn run_closed_loop(scenario: &Scenario, kind: PlannerKind, cfg: &SimConfig) -> Result<SimLog> {
    scenario.validate(&cfg.planner.params)?;
    cfg.planner.validate()?;
    let plant = cfg.plant();
    let mut world = World::from_scenario(scenario);
    let mut log = SimLog {
        scenario: scenario.name.clone(),
        planner: kind,
        dt: cfg.dt,
        road_length: scenario.road.length,
        initial: record_step(&world, cfg, false),
        steps: Vec::new(),
        cycles: Vec::new(),
        completion_time: None,
        failure: None,
    };
    let mut prev_record: Option<PlanCycleRecord> = None;
    let mut prev_baseline: Option<BaselinePlan> = None;
    let steps = (scenario.duration / cfg.dt).round() as usize;
    for _ in 0..steps {
        let snapshot = world.snapshot();
        let current_lane = world.road.lane_of(world.ego.y);
        let started = Instant::now();
        let (motion, cycle) = match kind {
            PlannerKind::Proposed => {
                let rec = match plan(&snapshot, prev_record.as_ref(), &cfg.planner) {
                    Ok(r) => r,
                    Err(e) => {
                        log.failure = Some(format!("planner failed at t = {}: {e}", world.time));
                        break;
                    }
                };
                let solve_ms = started.elapsed().as_secs_f64() * 1e3;
                let planned_lane = rec
                    .solution
                    .states
                    .last()
                    .map_or(current_lane, |s| world.road.lane_of(s.y));
                let cycle = CycleLog {
                    time: world.time,
                    current_lane,
                    planned_lane,
                    behavior: behavior(current_lane, planned_lane),
                    fallback: rec.fallback,
                    converged: rec.solution.status == SolveStatus::Converged && !rec.fallback,
                    iterations: rec.solution.iterations,
                    constraint_count: rec.constraint_count,
                    solve_ms,
                    detail: CycleDetail::Proposed(Box::new(rec.clone())),
                };
                let motion = EgoMotion::Dynamic(rec.first_input());
                prev_record = Some(rec);
                (motion, cycle)
            }
            PlannerKind::Baseline => {
                let p = baseline_frenet_plan(
                    &snapshot,
                    prev_baseline.as_ref().map(|p| (p, cfg.dt)),
                    &cfg.planner.params,
                    &cfg.baseline,
                );
                let solve_ms = started.elapsed().as_secs_f64() * 1e3;
                let planned_lane = p.sample.target_lane;
                let motion = EgoMotion::Kinematic(p.state_at(cfg.dt, &cfg.planner.params));
                let cycle = CycleLog {
                    time: world.time,
                    current_lane,
                    planned_lane,
                    behavior: behavior(current_lane, planned_lane),
                    fallback: p.fallback,
                    converged: !p.fallback,
                    iterations: 0,
                    constraint_count: 0,
                    solve_ms,
                    detail: CycleDetail::Baseline(Box::new(p.clone())),
                };
                prev_baseline = Some(p);
                (motion, cycle)
            }
        };
        let converged = cycle.converged;
        let next = match step_world(&world, motion, cfg.dt, &plant, &cfg.traffic) {
            Ok(w) => w,
            Err(e) => {
                log.failure = Some(format!("plant step failed at t = {}: {e}", world.time));
                break;
            }
        };
        let x_prev = world.ego.x;
        world = next;
        log.cycles.push(cycle);
        log.steps.push(record_step(&world, cfg, converged));
        if world.ego.x >= scenario.road.length {
            let frac = (scenario.road.length - x_prev) / (world.ego.x - x_prev);
            log.completion_time = Some(world.time - cfg.dt + frac * cfg.dt);
            break;
        }
    }
    Ok(log)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::planner::RoadGeometry;

    fn empty_road(length: f64, v0: f64) -> Scenario {
        Scenario {
            name: "empty".into(),
            notes: String::new(),
            road: RoadGeometry {
                length,
                lanes: 2,
                lane_width: 4.0,
            },
            ego: VehicleState::cruising(0.0, 2.0, v0),
            obstacles: vec![],
            traffic: None,
            seed: 0,
            duration: 120.0,
        }
    }

    #[test]
    fn empty_road_completes_near_kinematic_time() {
        let s = empty_road(600.0, 25.0);
        let cfg = SimConfig::default();
        let v_max = cfg.planner.optimizer.limits.v_max;
        let a_max = cfg.planner.optimizer.limits.a_max;
        // accelerating at a_max from 25 to v_max, then cruising
        let t_acc = (v_max - 25.0) / a_max;
        let d_acc = 0.5 * (v_max + 25.0) * t_acc;
        let ideal = t_acc + (600.0 - d_acc) / v_max;
        for kind in [PlannerKind::Proposed, PlannerKind::Baseline] {
            let log = run_closed_loop(&s, kind, &cfg).unwrap();
            assert!(log.failure.is_none(), "{:?}", log.failure);
            let t = log.completion_time.expect("reaches the end");
            assert!(
                t >= ideal - 1e-6 && t < ideal + 6.0,
                "{kind:?}: {t} vs {ideal}"
            );
            let times: Vec<f64> = log.steps.iter().map(|s| s.time).collect();
            assert!(times.windows(2).all(|w| w[1] > w[0]));
            assert_eq!(log.steps.len(), log.cycles.len());
        }
    }

    #[test]
    fn closed_loop_is_deterministic() {
        let mut cfg = DenseTrafficConfig::default();
        cfg.duration = 10.0;
        let s = spawn_dense_traffic(5, &cfg).unwrap();
        let sim = SimConfig::default();
        for kind in [PlannerKind::Proposed, PlannerKind::Baseline] {
            let a = run_closed_loop(&s, kind, &sim).unwrap();
            let b = run_closed_loop(&s, kind, &sim).unwrap();
            let (mut ja, mut jb) = (Vec::new(), Vec::new());
            a.write_jsonl(&mut ja).unwrap();
            b.write_jsonl(&mut jb).unwrap();
            assert_eq!(ja, jb);
            assert_eq!(a.steps.len(), 20);
        }
    }
}
