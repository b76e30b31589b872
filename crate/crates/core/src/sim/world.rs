//! World state and the lockstep traffic update.

use serde::{Deserialize, Serialize};

use crate::collision::{pairwise_clearances, Body, SensingRange};
use crate::dynamics::{ControlInput, Transition, VehicleParams, VehicleState};
use crate::error::{Error, Result};
use crate::geometry::Pose;
use crate::planner::{RoadGeometry, WorldSnapshot};
use crate::prediction::ObstacleState;

use super::scenario::Scenario;

/// Car-following rule for obstacle vehicles.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrafficModel {
    /// Gap below which a vehicle follows its leader (m).
    pub follow_gap: f64,
    /// Proportional gain on the gap error (1/s).
    pub gain: f64,
    /// Whether obstacles also follow the ego when it is ahead in their lane.
    pub yield_to_ego: bool,
    /// Largest speed gain per second (m/s²). Braking is immediate.
    pub max_accel: f64,
}

impl Default for TrafficModel {
    fn default() -> Self {
        Self {
            follow_gap: 50.0,
            gain: 0.5,
            yield_to_ego: true,
            max_accel: 3.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct World {
    pub time: f64,
    pub road: RoadGeometry,
    pub ego: VehicleState,
    pub obstacles: Vec<ObstacleState>,
    /// Free-flow speed each obstacle returns to when not following.
    pub cruise: Vec<f64>,
    pub following: Vec<bool>,
}

/// How the ego moves during one world step.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum EgoMotion {
    /// Integrate the plant under a held input.
    Dynamic(ControlInput),
    /// Place the ego at a state taken from a kinematic trajectory.
    Kinematic(VehicleState),
}

impl World {
    pub fn from_scenario(s: &Scenario) -> Self {
        Self {
            time: 0.0,
            road: s.road,
            ego: s.ego,
            cruise: s.obstacles.iter().map(|o| o.v).collect(),
            following: vec![false; s.obstacles.len()],
            obstacles: s.obstacles.clone(),
        }
    }

    pub fn snapshot(&self) -> WorldSnapshot {
        WorldSnapshot {
            time: self.time,
            ego: self.ego,
            obstacles: self.obstacles.clone(),
            road: self.road,
        }
    }

    /// Lanes whose strip the ego body currently reaches into.
    fn ego_lanes(&self, params: &VehicleParams) -> Vec<usize> {
        let half = 0.5 * params.track_width;
        (0..self.road.lanes)
            .filter(|&l| {
                let c = self.road.lane_corridor(l);
                self.ego.y + half > c.y_min && self.ego.y - half < c.y_max
            })
            .collect()
    }
}

/// Ground speed of the ego along the road.
pub fn ego_ground_speed(s: &VehicleState) -> f64 {
    let (sin, cos) = s.theta.sin_cos();
    s.vx * cos - s.vy * sin
}

/// Advances every vehicle by `dt`. Obstacles closer than `follow_gap` to the
/// vehicle ahead in their lane take the leader's speed plus `gain` times the
/// gap error, capped by the leader's speed and their own cruise speed; others
/// return to their cruise speed, gaining at most `max_accel·dt` per step.
pub fn step_world(
    world: &World,
    ego: EgoMotion,
    dt: f64,
    plant: &Transition,
    model: &TrafficModel,
) -> Result<World> {
    if !(dt > 0.0) {
        return Err(Error::InvalidArgument(format!(
            "dt must be positive, got {dt}"
        )));
    }
    let params = &plant.params;
    let ego_lanes = if model.yield_to_ego {
        world.ego_lanes(params)
    } else {
        Vec::new()
    };
    let ego_speed = ego_ground_speed(&world.ego);
    let n = world.obstacles.len();
    let mut speeds = Vec::with_capacity(n);
    let mut following = Vec::with_capacity(n);
    for (i, o) in world.obstacles.iter().enumerate() {
        let lane = world.road.lane_of(o.y);
        let front = o.x + o.l1;
        let mut leader: Option<(f64, f64)> = None;
        let mut consider = |rear: f64, v: f64| {
            if rear > front && leader.is_none_or(|(r, _)| rear < r) {
                leader = Some((rear, v));
            }
        };
        for (j, p) in world.obstacles.iter().enumerate() {
            if j != i && world.road.lane_of(p.y) == lane && p.x > o.x {
                consider(p.x - p.l2, p.v);
            }
        }
        if ego_lanes.contains(&lane) && world.ego.x > o.x {
            consider(world.ego.x - params.l2, ego_speed);
        }
        let cruise = world.cruise[i];
        let (target, follows) = match leader {
            Some((rear, v_lead)) if rear - front < model.follow_gap => {
                let gap = rear - front;
                let v = (v_lead + model.gain * (gap - model.follow_gap))
                    .min(v_lead)
                    .min(cruise)
                    .max(0.0);
                (v, true)
            }
            _ => (cruise, false),
        };
        speeds.push(target.min(o.v + model.max_accel * dt));
        following.push(follows);
    }
    let obstacles = world
        .obstacles
        .iter()
        .zip(&speeds)
        .map(|(o, &v)| {
            let (sin, cos) = o.heading.sin_cos();
            ObstacleState {
                x: o.x + v * cos * dt,
                y: o.y + v * sin * dt,
                v,
                ..*o
            }
        })
        .collect();
    let ego = match ego {
        EgoMotion::Dynamic(u) => plant.step(&world.ego, &u, dt)?,
        EgoMotion::Kinematic(s) => s,
    };
    Ok(World {
        time: world.time + dt,
        road: world.road,
        ego,
        obstacles,
        cruise: world.cruise.clone(),
        following,
    })
}

/// Smallest circle-center distance between the ego and any obstacle in the
/// sensing window, with that obstacle's index.
pub fn world_clearance(
    world: &World,
    params: &VehicleParams,
    sensing: &SensingRange,
) -> Option<(f64, usize)> {
    let ego = Pose::new(world.ego.x, world.ego.y, world.ego.theta);
    let body = Body {
        l1: params.l1,
        l2: params.l2,
    };
    world
        .obstacles
        .iter()
        .enumerate()
        .filter(|(_, o)| sensing.contains(world.ego.x, o.x))
        .map(|(i, o)| {
            let d = pairwise_clearances(&ego, body, &o.pose(), Body { l1: o.l1, l2: o.l2 });
            (d.into_iter().fold(f64::INFINITY, f64::min), i)
        })
        .min_by(|a, b| a.0.total_cmp(&b.0))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn world(obstacles: Vec<ObstacleState>, ego: VehicleState) -> World {
        World {
            time: 0.0,
            road: RoadGeometry {
                length: 3000.0,
                lanes: 2,
                lane_width: 4.0,
            },
            ego,
            cruise: obstacles.iter().map(|o| o.v).collect(),
            following: vec![false; obstacles.len()],
            obstacles,
        }
    }

    fn plant() -> Transition {
        Transition::new(VehicleParams::default(), 10)
    }

    #[test]
    fn lone_obstacle_moves_at_constant_speed() {
        let mut w = world(
            vec![ObstacleState::new(100.0, 2.0, 20.0, 0.0)],
            VehicleState::cruising(0.0, 6.0, 25.0),
        );
        for _ in 0..10 {
            w = step_world(
                &w,
                EgoMotion::Dynamic(ControlInput::default()),
                0.5,
                &plant(),
                &TrafficModel::default(),
            )
            .unwrap();
        }
        assert!((w.obstacles[0].x - 200.0).abs() < 1e-9);
        assert!(!w.following[0]);
    }

    #[test]
    fn zero_input_drives_straight() {
        let mut w = world(vec![], VehicleState::cruising(0.0, 2.0, 20.0));
        for _ in 0..20 {
            w = step_world(
                &w,
                EgoMotion::Dynamic(ControlInput::default()),
                0.5,
                &plant(),
                &TrafficModel::default(),
            )
            .unwrap();
        }
        assert!((w.ego.x - 200.0).abs() < 1e-9);
        assert_eq!(w.ego.y, 2.0);
        assert!((w.time - 10.0).abs() < 1e-12);
    }

    #[test]
    fn rejects_nonpositive_dt() {
        let w = world(vec![], VehicleState::cruising(0.0, 2.0, 20.0));
        assert!(step_world(
            &w,
            EgoMotion::Dynamic(ControlInput::default()),
            0.0,
            &plant(),
            &TrafficModel::default()
        )
        .is_err());
    }

    // Independent model of the follower gap: closing at the speed difference
    // until the gap drops below the threshold, then g' = -k (g - g*).
    fn follower_gap_oracle(
        gap0: f64,
        v_lead: f64,
        v_follow: f64,
        k: f64,
        g_star: f64,
        dt: f64,
        steps: usize,
    ) -> Vec<f64> {
        let mut g = gap0;
        let mut out = Vec::new();
        for _ in 0..steps {
            let v = if g < g_star {
                (v_lead + k * (g - g_star)).min(v_lead).min(v_follow)
            } else {
                v_follow
            };
            g += (v_lead - v) * dt;
            out.push(g);
        }
        out
    }

    #[test]
    fn follower_gap_converges_to_threshold() {
        let lead = ObstacleState::new(200.0, 2.0, 15.0, 0.0);
        let follow = ObstacleState::new(100.0, 2.0, 25.0, 0.0);
        let mut w = world(vec![lead, follow], VehicleState::cruising(0.0, 6.0, 20.0));
        let model = TrafficModel::default();
        let bumper = |w: &World| {
            (w.obstacles[0].x - w.obstacles[0].l2) - (w.obstacles[1].x + w.obstacles[1].l1)
        };
        let oracle = follower_gap_oracle(bumper(&w), 15.0, 25.0, 0.5, 50.0, 0.5, 200);
        let mut gaps = Vec::new();
        for _ in 0..200 {
            w = step_world(
                &w,
                EgoMotion::Dynamic(ControlInput::default()),
                0.5,
                &plant(),
                &model,
            )
            .unwrap();
            gaps.push(bumper(&w));
        }
        for (a, b) in gaps.iter().zip(&oracle) {
            assert!((a - b).abs() < 1e-9);
        }
        assert!((gaps.last().unwrap() - 50.0).abs() < 1e-3);
        let err: Vec<f64> = gaps.iter().map(|g| g - 50.0).collect();
        let sign_changes = err.windows(2).filter(|p| p[0] * p[1] < 0.0).count();
        assert!(sign_changes <= 1);
        assert!(w.following[1]);
    }

    #[test]
    fn obstacle_yields_to_ego_ahead_in_lane() {
        let mut w = world(
            vec![ObstacleState::new(0.0, 2.0, 30.0, 0.0)],
            VehicleState::cruising(30.0, 2.0, 20.0),
        );
        for _ in 0..40 {
            w = step_world(
                &w,
                EgoMotion::Dynamic(ControlInput::default()),
                0.5,
                &plant(),
                &TrafficModel::default(),
            )
            .unwrap();
            let (d, _) =
                world_clearance(&w, &VehicleParams::default(), &SensingRange::default()).unwrap();
            assert!(d >= 2.6);
        }
        assert!(w.following[0]);
    }
}
