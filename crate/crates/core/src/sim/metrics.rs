//! Per-run summary quantities.

use serde::{Deserialize, Serialize};

use super::world::ego_ground_speed;
use super::SimLog;
use crate::planner::RoadGeometry;

/// A lane change counts once the ego is this far past the boundary of the
/// lane it was committed to (m).
pub const LANE_CHANGE_HYSTERESIS: f64 = 0.5;

/// Clearances below `2R - CLEARANCE_TOLERANCE` are violations (m).
pub const CLEARANCE_TOLERANCE: f64 = 1e-3;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Behavior {
    Follow,
    Left,
    Right,
}

impl Behavior {
    pub fn label(self) -> &'static str {
        match self {
            Behavior::Follow => "follow",
            Behavior::Left => "left",
            Behavior::Right => "right",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct SolveTimeStats {
    pub mean_ms: f64,
    pub median_ms: f64,
    pub p95_ms: f64,
    pub max_ms: f64,
}

impl SolveTimeStats {
    pub fn from_samples(samples: &[f64]) -> Self {
        if samples.is_empty() {
            return Self::default();
        }
        let mut s = samples.to_vec();
        s.sort_by(f64::total_cmp);
        Self {
            mean_ms: s.iter().sum::<f64>() / s.len() as f64,
            median_ms: percentile(&s, 0.5),
            p95_ms: percentile(&s, 0.95),
            max_ms: s[s.len() - 1],
        }
    }
}

/// Linear-interpolated percentile of sorted data.
pub fn percentile(sorted: &[f64], q: f64) -> f64 {
    let pos = q * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    sorted[lo] + (pos - lo as f64) * (sorted[hi] - sorted[lo])
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunMetrics {
    pub completion_time: Option<f64>,
    pub mean_speed: f64,
    pub max_speed: f64,
    pub lane_changes: usize,
    /// Smallest time-matched circle clearance over the run (m).
    pub min_clearance: f64,
    /// Steps with clearance below `2R - 1e-3`, fallback steps included.
    pub clearance_violations: usize,
    pub behavior_switches: usize,
    pub fallbacks: usize,
    pub failed: bool,
    pub solve_time: SolveTimeStats,
}

/// Counts committed lane changes along a lateral trace.
pub fn count_lane_changes(ys: &[f64], road: &RoadGeometry, hysteresis: f64) -> usize {
    let Some(&y0) = ys.first() else { return 0 };
    let mut committed = road.lane_of(y0);
    let mut count = 0;
    for &y in ys {
        let lane = road.lane_of(y);
        if lane == committed {
            continue;
        }
        let c = road.lane_corridor(committed);
        let past = (y - c.y_max).max(c.y_min - y);
        if past >= hysteresis {
            committed = lane;
            count += 1;
        }
    }
    count
}

pub fn metrics(log: &SimLog, road: &RoadGeometry, radius: f64) -> RunMetrics {
    let speeds: Vec<f64> = std::iter::once(&log.initial)
        .chain(&log.steps)
        .map(|s| ego_ground_speed(&s.ego))
        .collect();
    let ys: Vec<f64> = std::iter::once(&log.initial)
        .chain(&log.steps)
        .map(|s| s.ego.y)
        .collect();
    let min_clearance = std::iter::once(&log.initial)
        .chain(&log.steps)
        .filter_map(|s| s.clearance)
        .fold(f64::INFINITY, f64::min);
    let clearance_violations = log
        .steps
        .iter()
        .filter(|s| {
            s.clearance
                .is_some_and(|d| d < 2.0 * radius - CLEARANCE_TOLERANCE)
        })
        .count();
    let behavior_switches = log
        .cycles
        .windows(2)
        .filter(|w| w[0].behavior != w[1].behavior)
        .count();
    let solve: Vec<f64> = log.cycles.iter().map(|c| c.solve_ms).collect();
    RunMetrics {
        completion_time: log.completion_time,
        mean_speed: speeds.iter().sum::<f64>() / speeds.len() as f64,
        max_speed: speeds.iter().copied().fold(f64::NEG_INFINITY, f64::max),
        lane_changes: count_lane_changes(&ys, road, LANE_CHANGE_HYSTERESIS),
        min_clearance,
        clearance_violations,
        behavior_switches,
        fallbacks: log.cycles.iter().filter(|c| c.fallback).count(),
        failed: log.failure.is_some(),
        solve_time: SolveTimeStats::from_samples(&solve),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dynamics::VehicleState;
    use crate::sim::{PlannerKind, SimStep};

    fn road() -> RoadGeometry {
        RoadGeometry {
            length: 3000.0,
            lanes: 2,
            lane_width: 4.0,
        }
    }

    fn log_from(ys: &[f64], v: f64) -> SimLog {
        let step = |k: usize, y: f64| SimStep {
            time: k as f64 * 0.5,
            ego: VehicleState::cruising(k as f64 * 0.5 * v, y, v),
            obstacles: vec![],
            clearance: None,
            plan_converged: true,
        };
        SimLog {
            scenario: "synthetic".into(),
            planner: PlannerKind::Proposed,
            dt: 0.5,
            road_length: 3000.0,
            initial: step(0, ys[0]),
            steps: ys
                .iter()
                .enumerate()
                .skip(1)
                .map(|(k, &y)| step(k, y))
                .collect(),
            cycles: vec![],
            completion_time: None,
            failure: None,
        }
    }

    #[test]
    fn straight_constant_speed_log() {
        let m = metrics(&log_from(&[2.0; 30], 22.0), &road(), 1.3);
        assert_eq!(m.lane_changes, 0);
        assert!((m.mean_speed - 22.0).abs() < 1e-12);
        assert_eq!(m.max_speed, 22.0);
        assert_eq!(m.behavior_switches, 0);
    }

    #[test]
    fn one_committed_crossing_counts_once() {
        let ys = [2.0, 3.0, 3.9, 4.2, 4.6, 5.5, 6.0, 6.0];
        assert_eq!(metrics(&log_from(&ys, 20.0), &road(), 1.3).lane_changes, 1);
    }

    #[test]
    fn boundary_dither_below_hysteresis_is_ignored() {
        let ys = [3.8, 4.2, 3.9, 4.3, 4.1, 3.7];
        assert_eq!(count_lane_changes(&ys, &road(), LANE_CHANGE_HYSTERESIS), 0);
    }

    #[test]
    fn there_and_back_counts_two() {
        let ys = [2.0, 4.0, 6.0, 4.0, 2.0];
        assert_eq!(count_lane_changes(&ys, &road(), LANE_CHANGE_HYSTERESIS), 2);
    }

    #[test]
    fn percentiles_interpolate() {
        let s = SolveTimeStats::from_samples(&[4.0, 1.0, 3.0, 2.0]);
        assert_eq!(s.median_ms, 2.5);
        assert_eq!(s.max_ms, 4.0);
        assert!((s.p95_ms - 3.85).abs() < 1e-12);
    }
}
