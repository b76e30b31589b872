//! Frenet-lattice comparison planner: quintic lateral moves to lane centers and
//! quartic longitudinal speed profiles, filtered by collision and limit checks.
//! On a straight road the Frenet frame is the world frame with `s = x`.

use serde::{Deserialize, Serialize};

use crate::collision::{pairwise_clearances, Body};
use crate::dynamics::{VehicleParams, VehicleState};
use crate::geometry::Pose;
use crate::planner::WorldSnapshot;
use crate::prediction::ObstacleState;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BaselineConfig {
    pub desired_speed: f64,
    pub a_max: f64,
    pub delta_max: f64,
    /// Lateral-move and speed-change durations are sampled from this range (s).
    pub min_duration: f64,
    pub max_duration: f64,
    pub duration_step: f64,
    /// Terminal speeds are sampled as `v0 + k·speed_step`, clipped.
    pub speed_step: f64,
    pub speed_samples: usize,
    pub horizon: f64,
    /// Collision-check resolution along each sample (s).
    pub check_dt: f64,
    pub w_jerk: f64,
    pub w_time: f64,
    pub w_speed: f64,
    pub w_lateral: f64,
    /// A lane change is only considered when the lead is closer than this
    /// and slower than `desired_speed` (m).
    pub trigger_gap: f64,
    pub sensing_ahead: f64,
    pub sensing_behind: f64,
}

impl Default for BaselineConfig {
    fn default() -> Self {
        Self {
            desired_speed: 33.3,
            a_max: 2.0,
            delta_max: 0.5,
            min_duration: 2.0,
            max_duration: 8.0,
            duration_step: 1.0,
            speed_step: 2.0,
            speed_samples: 5,
            horizon: 10.0,
            check_dt: 0.25,
            w_jerk: 0.1,
            w_time: 0.1,
            w_speed: 1.0,
            w_lateral: 1.0,
            trigger_gap: 60.0,
            sensing_ahead: 300.0,
            sensing_behind: 100.0,
        }
    }
}

/// Boundary values `(p, p', p'')` at the start of a polynomial segment.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Start {
    pub p: f64,
    pub v: f64,
    pub a: f64,
}

/// Quintic from `start` to `(p1, 0, 0)` over `t1`, held constant afterwards.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Quintic {
    c: [f64; 6],
    t1: f64,
}

impl Quintic {
    pub fn new(start: Start, p1: f64, t1: f64) -> Self {
        let (t2, t3) = (t1 * t1, t1 * t1 * t1);
        let (t4, t5) = (t3 * t1, t3 * t2);
        let c0 = start.p;
        let c1 = start.v;
        let c2 = 0.5 * start.a;
        // remaining coefficients solve p(t1) = p1, p'(t1) = 0, p''(t1) = 0
        let r0 = p1 - (c0 + c1 * t1 + c2 * t2);
        let r1 = -(c1 + 2.0 * c2 * t1);
        let r2 = -(2.0 * c2);
        let c3 = (10.0 * r0 - 4.0 * r1 * t1 + 0.5 * r2 * t2) / t3;
        let c4 = (-15.0 * r0 + 7.0 * r1 * t1 - r2 * t2) / t4;
        let c5 = (6.0 * r0 - 3.0 * r1 * t1 + 0.5 * r2 * t2) / t5;
        Self {
            c: [c0, c1, c2, c3, c4, c5],
            t1,
        }
    }

    /// `(p, p', p'', p''')` at `t`.
    pub fn eval(&self, t: f64) -> [f64; 4] {
        let t = t.min(self.t1);
        let c = &self.c;
        let p = c[0] + t * (c[1] + t * (c[2] + t * (c[3] + t * (c[4] + t * c[5]))));
        let v = c[1] + t * (2.0 * c[2] + t * (3.0 * c[3] + t * (4.0 * c[4] + t * 5.0 * c[5])));
        let a = 2.0 * c[2] + t * (6.0 * c[3] + t * (12.0 * c[4] + t * 20.0 * c[5]));
        let j = 6.0 * c[3] + t * (24.0 * c[4] + t * 60.0 * c[5]);
        [p, v, a, j]
    }

    /// `∫ p'''² dt` over the segment.
    pub fn squared_jerk(&self) -> f64 {
        let j0 = self.eval(0.0)[3];
        let j1 = self.eval(self.t1)[3];
        // jerk is quadratic, so its square is quartic and Simpson is exact
        let n = 8;
        let h = self.t1 / n as f64;
        let mut sum = j0 * j0 + j1 * j1;
        for k in 1..n {
            let j = self.eval(k as f64 * h)[3];
            sum += if k % 2 == 1 { 4.0 } else { 2.0 } * j * j;
        }
        sum * h / 3.0
    }
}

/// Quartic speed profile from `start` to `(v1, 0)` over `t1`, then constant
/// speed.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Quartic {
    c: [f64; 5],
    t1: f64,
    v1: f64,
}

impl Quartic {
    pub fn new(start: Start, v1: f64, t1: f64) -> Self {
        let (t2, t3) = (t1 * t1, t1 * t1 * t1);
        let c0 = start.p;
        let c1 = start.v;
        let c2 = 0.5 * start.a;
        // p'(t1) = v1 and p''(t1) = 0
        let r1 = v1 - (c1 + 2.0 * c2 * t1);
        let r2 = -(2.0 * c2);
        let c3 = (3.0 * r1 - r2 * t1) / (3.0 * t2);
        let c4 = (-2.0 * r1 + r2 * t1) / (4.0 * t3);
        Self {
            c: [c0, c1, c2, c3, c4],
            t1,
            v1,
        }
    }

    /// `(p, p', p'', p''')` at `t`.
    pub fn eval(&self, t: f64) -> [f64; 4] {
        let c = &self.c;
        let at = |t: f64| {
            [
                c[0] + t * (c[1] + t * (c[2] + t * (c[3] + t * c[4]))),
                c[1] + t * (2.0 * c[2] + t * (3.0 * c[3] + t * 4.0 * c[4])),
                2.0 * c[2] + t * (6.0 * c[3] + t * 12.0 * c[4]),
                6.0 * c[3] + t * 24.0 * c[4],
            ]
        };
        if t <= self.t1 {
            at(t)
        } else {
            let end = at(self.t1);
            [end[0] + self.v1 * (t - self.t1), self.v1, 0.0, 0.0]
        }
    }

    pub fn squared_jerk(&self) -> f64 {
        let n = 8;
        let h = self.t1 / n as f64;
        let mut sum = 0.0;
        for k in 0..=n {
            let j = self.eval(k as f64 * h)[3];
            let w = if k == 0 || k == n {
                1.0
            } else if k % 2 == 1 {
                4.0
            } else {
                2.0
            };
            sum += w * j * j;
        }
        sum * h / 3.0
    }
}

/// One sampled trajectory, evaluated on a uniform time grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BaselineSample {
    pub target_lane: usize,
    pub duration: f64,
    pub target_speed: f64,
    pub cost: f64,
    /// `(t, x, y, θ, v, κ, a_long)` rows.
    pub points: Vec<[f64; 7]>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BaselinePlan {
    pub sample: BaselineSample,
    pub current_lane: usize,
    pub fallback: bool,
    pub evaluated: usize,
    pub survivors: usize,
}

impl BaselinePlan {
    /// Vehicle state on the plan at time `t` (kinematic: `vy = 0`).
    pub fn state_at(&self, t: f64, params: &VehicleParams) -> VehicleState {
        let pts = &self.sample.points;
        let dt = pts[1][0] - pts[0][0];
        let k = ((t / dt).round() as usize).min(pts.len() - 1);
        let [_, x, y, theta, v, kappa, _] = pts[k];
        VehicleState::new(
            x,
            y,
            theta,
            (kappa * params.wheelbase()).atan(),
            v.max(params.vx_floor),
            0.0,
            kappa * v,
        )
    }

    /// `(lateral rate, lateral accel, longitudinal accel)` at `t`, used to seed
    /// the next cycle so consecutive plans join smoothly.
    pub fn derivatives_at(&self, t: f64) -> (f64, f64, f64) {
        let pts = &self.sample.points;
        let dt = pts[1][0] - pts[0][0];
        let k = ((t / dt).round() as usize).min(pts.len() - 2).max(1);
        let (a, b, c) = (pts[k - 1], pts[k], pts[k + 1]);
        let vy = (c[2] - a[2]) / (2.0 * dt);
        let ay = (c[2] - 2.0 * b[2] + a[2]) / (dt * dt);
        (vy, ay, b[6])
    }
}

fn collides(
    points: &[[f64; 7]],
    obstacles: &[ObstacleState],
    ego_x0: f64,
    params: &VehicleParams,
    cfg: &BaselineConfig,
) -> bool {
    let body = Body {
        l1: params.l1,
        l2: params.l2,
    };
    let limit = 2.0 * params.radius;
    for o in obstacles {
        let dx0 = o.x - ego_x0;
        if dx0 > cfg.sensing_ahead || dx0 < -cfg.sensing_behind {
            continue;
        }
        let (sin, cos) = o.heading.sin_cos();
        let ob = Body { l1: o.l1, l2: o.l2 };
        for p in points {
            let t = p[0];
            let op = Pose::new(o.x + o.v * t * cos, o.y + o.v * t * sin, o.heading);
            let d = pairwise_clearances(&Pose::new(p[1], p[2], p[3]), body, &op, ob);
            if d.iter().any(|&d| d < limit) {
                return true;
            }
        }
    }
    false
}

fn lead_in_lane(snapshot: &WorldSnapshot, lane: usize) -> Option<&ObstacleState> {
    snapshot
        .obstacles
        .iter()
        .filter(|o| snapshot.road.lane_of(o.y) == lane && o.x > snapshot.ego.x)
        .min_by(|a, b| a.x.total_cmp(&b.x))
}

/// Builds the sample for one (lane, duration, speed) triple.
fn sample(
    lat: Start,
    lon: Start,
    y_target: f64,
    target_lane: usize,
    duration: f64,
    v_target: f64,
    cfg: &BaselineConfig,
) -> BaselineSample {
    let qy = Quintic::new(lat, y_target, duration);
    let qx = Quartic::new(lon, v_target, duration);
    let steps = (cfg.horizon / cfg.check_dt).round() as usize;
    let mut points = Vec::with_capacity(steps + 1);
    for k in 0..=steps {
        let t = k as f64 * cfg.check_dt;
        let [x, xd, xdd, _] = qx.eval(t);
        let [y, yd, ydd, _] = qy.eval(t);
        let speed = xd.hypot(yd);
        let theta = yd.atan2(xd);
        let kappa = if speed > 1e-6 {
            (xd * ydd - yd * xdd) / speed.powi(3)
        } else {
            0.0
        };
        let a_long = if speed > 1e-6 {
            (xd * xdd + yd * ydd) / speed
        } else {
            xdd
        };
        points.push([t, x, y, theta, speed, kappa, a_long]);
    }
    let cost = cfg.w_jerk * (qx.squared_jerk() + qy.squared_jerk())
        + cfg.w_time * duration
        + cfg.w_speed * (cfg.desired_speed - v_target).powi(2)
        + cfg.w_lateral * (y_target - lat.p).powi(2);
    BaselineSample {
        target_lane,
        duration,
        target_speed: v_target,
        cost,
        points,
    }
}

fn within_limits(
    s: &BaselineSample,
    params: &VehicleParams,
    cfg: &BaselineConfig,
    y_range: (f64, f64),
) -> bool {
    let kappa_max = cfg.delta_max.tan() / params.wheelbase();
    let ay_max = params.rollover_limit();
    s.points.iter().all(|p| {
        let [_, _, y, _, v, kappa, a] = *p;
        a.abs() <= cfg.a_max + 1e-9
            && kappa.abs() <= kappa_max
            && kappa.abs() * v * v <= ay_max
            && v >= 0.0
            && y >= y_range.0
            && y <= y_range.1
    })
}

/// In-lane braking at `a_max` down to a crawl, straightening toward the lane
/// center.
fn braking_sample(
    lat: Start,
    lon: Start,
    y_lane: f64,
    lane: usize,
    params: &VehicleParams,
    cfg: &BaselineConfig,
) -> BaselineSample {
    let v_end = params.vx_floor;
    let t_stop = ((lon.v - v_end) / cfg.a_max).max(cfg.check_dt);
    let qy = Quintic::new(lat, y_lane, cfg.min_duration.max(cfg.check_dt));
    let steps = (cfg.horizon / cfg.check_dt).round() as usize;
    let mut points = Vec::with_capacity(steps + 1);
    for k in 0..=steps {
        let t = k as f64 * cfg.check_dt;
        let tb = t.min(t_stop);
        let v = (lon.v - cfg.a_max * tb).max(v_end);
        let x = lon.p + lon.v * tb - 0.5 * cfg.a_max * tb * tb + v * (t - tb);
        let [y, yd, _, _] = qy.eval(t);
        let a = if t < t_stop { -cfg.a_max } else { 0.0 };
        points.push([t, x, y, yd.atan2(v.max(1e-6)), v, 0.0, a]);
    }
    BaselineSample {
        target_lane: lane,
        duration: t_stop,
        target_speed: v_end,
        cost: f64::INFINITY,
        points,
    }
}

/// Plans one cycle. `prev` seeds the initial lateral and longitudinal
/// accelerations so successive plans join smoothly.
pub fn baseline_frenet_plan(
    snapshot: &WorldSnapshot,
    prev: Option<(&BaselinePlan, f64)>,
    params: &VehicleParams,
    cfg: &BaselineConfig,
) -> BaselinePlan {
    let ego = &snapshot.ego;
    let road = &snapshot.road;
    let (sin, cos) = ego.theta.sin_cos();
    let speed = ego.vx * cos - ego.vy * sin;
    let (vy, ay, ax) = match prev {
        Some((p, t)) => p.derivatives_at(t),
        None => (ego.vx * sin + ego.vy * cos, 0.0, 0.0),
    };
    let lat = Start {
        p: ego.y,
        v: vy,
        a: ay,
    };
    let lon = Start {
        p: ego.x,
        v: speed,
        a: ax,
    };
    let current = road.lane_of(ego.y);
    let mut lanes = vec![current];
    if let Some(lead) = lead_in_lane(snapshot, current) {
        let gap = lead.x - lead.l2 - (ego.x + params.l1);
        if gap < cfg.trigger_gap && lead.v < cfg.desired_speed {
            if current + 1 < road.lanes {
                lanes.push(current + 1);
            }
            if current > 0 {
                lanes.push(current - 1);
            }
        }
    }
    let y_range = (road.y_min() + params.radius, road.y_max() - params.radius);
    let n_dur = ((cfg.max_duration - cfg.min_duration) / cfg.duration_step).round() as usize;
    let half = cfg.speed_samples as i64;
    let mut best: Option<BaselineSample> = None;
    let mut evaluated = 0;
    let mut survivors = 0;
    for &lane in &lanes {
        let y_target = road.lane_center(lane);
        for d in 0..=n_dur {
            let duration = cfg.min_duration + d as f64 * cfg.duration_step;
            let mut speeds: Vec<f64> = (-half..=half)
                .map(|k| (speed + k as f64 * cfg.speed_step).clamp(0.0, cfg.desired_speed))
                .collect();
            speeds.push(cfg.desired_speed);
            speeds.sort_by(f64::total_cmp);
            speeds.dedup();
            for &v_target in &speeds {
                evaluated += 1;
                let s = sample(lat, lon, y_target, lane, duration, v_target, cfg);
                if !within_limits(&s, params, cfg, y_range)
                    || collides(&s.points, &snapshot.obstacles, ego.x, params, cfg)
                {
                    continue;
                }
                survivors += 1;
                if best.as_ref().is_none_or(|b| s.cost < b.cost) {
                    best = Some(s);
                }
            }
        }
    }
    match best {
        Some(sample) => BaselinePlan {
            sample,
            current_lane: current,
            fallback: false,
            evaluated,
            survivors,
        },
        None => BaselinePlan {
            sample: braking_sample(lat, lon, road.lane_center(current), current, params, cfg),
            current_lane: current,
            fallback: true,
            evaluated,
            survivors,
        },
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::planner::RoadGeometry;

    fn snapshot(obstacles: Vec<ObstacleState>, ego: VehicleState) -> WorldSnapshot {
        WorldSnapshot {
            time: 0.0,
            ego,
            obstacles,
            road: RoadGeometry {
                length: 3000.0,
                lanes: 2,
                lane_width: 4.0,
            },
        }
    }

    #[test]
    fn quintic_meets_boundary_conditions() {
        let q = Quintic::new(
            Start {
                p: 1.0,
                v: 0.3,
                a: -0.2,
            },
            5.0,
            4.0,
        );
        let s = q.eval(0.0);
        assert!(
            (s[0] - 1.0).abs() < 1e-12 && (s[1] - 0.3).abs() < 1e-12 && (s[2] + 0.2).abs() < 1e-12
        );
        let e = q.eval(4.0);
        assert!((e[0] - 5.0).abs() < 1e-9 && e[1].abs() < 1e-9 && e[2].abs() < 1e-9);
        assert_eq!(q.eval(6.0)[0], q.eval(4.0)[0]);
    }

    #[test]
    fn quartic_meets_boundary_conditions() {
        let q = Quartic::new(
            Start {
                p: 0.0,
                v: 20.0,
                a: 0.5,
            },
            25.0,
            5.0,
        );
        let e = q.eval(5.0);
        assert!((e[1] - 25.0).abs() < 1e-9 && e[2].abs() < 1e-9);
        let later = q.eval(7.0);
        assert!((later[0] - e[0] - 50.0).abs() < 1e-9);
    }

    #[test]
    fn empty_road_keeps_lane_at_desired_speed() {
        let cfg = BaselineConfig::default();
        let params = VehicleParams::default();
        let plan = baseline_frenet_plan(
            &snapshot(vec![], VehicleState::cruising(0.0, 2.0, 33.3)),
            None,
            &params,
            &cfg,
        );
        assert!(!plan.fallback);
        assert_eq!(plan.sample.target_lane, 0);
        assert!((plan.sample.target_speed - 33.3).abs() < 1e-9);
        assert!(plan.sample.points.iter().all(|p| (p[2] - 2.0).abs() < 1e-9));
    }

    #[test]
    fn blocked_lanes_force_braking() {
        let cfg = BaselineConfig::default();
        let params = VehicleParams::default();
        // a stopped wall across both lanes just ahead
        let obstacles = vec![
            ObstacleState::new(40.0, 2.0, 0.0, 0.0),
            ObstacleState::new(40.0, 6.0, 0.0, 0.0),
        ];
        let plan = baseline_frenet_plan(
            &snapshot(obstacles, VehicleState::cruising(0.0, 2.0, 25.0)),
            None,
            &params,
            &cfg,
        );
        assert!(plan.fallback);
        assert!(plan.sample.points[1][6] < 0.0);
    }

    #[test]
    fn slow_lead_with_free_adjacent_gap_triggers_change() {
        let cfg = BaselineConfig::default();
        let params = VehicleParams::default();
        let obstacles = vec![
            ObstacleState::new(40.0, 2.0, 15.0, 0.0),
            ObstacleState::new(-60.0, 6.0, 25.0, 0.0),
            ObstacleState::new(120.0, 6.0, 25.0, 0.0),
        ];
        let snap = snapshot(obstacles.clone(), VehicleState::cruising(0.0, 2.0, 25.0));
        let plan = baseline_frenet_plan(&snap, None, &params, &cfg);
        assert!(!plan.fallback);
        assert_eq!(plan.sample.target_lane, 1);
        // dense-sampling oracle: 0.01 s time-matched circle check
        let body = Body {
            l1: params.l1,
            l2: params.l2,
        };
        let mut t = 0.0;
        while t <= cfg.horizon {
            let k = (t / cfg.check_dt).floor() as usize;
            let (a, b) = (
                plan.sample.points[k],
                plan.sample.points[(k + 1).min(plan.sample.points.len() - 1)],
            );
            let w = if b[0] > a[0] {
                (t - a[0]) / (b[0] - a[0])
            } else {
                0.0
            };
            let lerp = |i: usize| a[i] + w * (b[i] - a[i]);
            let ego = Pose::new(lerp(1), lerp(2), lerp(3));
            for o in &obstacles {
                let op = Pose::new(o.x + o.v * t, o.y, 0.0);
                let d = pairwise_clearances(&ego, body, &op, Body { l1: o.l1, l2: o.l2 });
                assert!(
                    d.iter().all(|&d| d >= 2.0 * params.radius - 0.05),
                    "t = {t}"
                );
            }
            t += 0.01;
        }
    }

    #[test]
    fn no_trigger_without_slow_lead() {
        let cfg = BaselineConfig::default();
        let params = VehicleParams::default();
        let obstacles = vec![ObstacleState::new(200.0, 2.0, 30.0, 0.0)];
        let plan = baseline_frenet_plan(
            &snapshot(obstacles, VehicleState::cruising(0.0, 2.0, 25.0)),
            None,
            &params,
            &cfg,
        );
        assert_eq!(plan.sample.target_lane, 0);
    }
}
