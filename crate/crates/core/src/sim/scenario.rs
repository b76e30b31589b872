//! Scenario files and the seeded dense-traffic generator.

use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::collision::{pairwise_clearances, Body};
use crate::dynamics::{VehicleParams, VehicleState};
use crate::error::{Error, Result};
use crate::planner::RoadGeometry;
use crate::prediction::ObstacleState;

const KMH: f64 = 1.0 / 3.6;

/// Vehicles spawned in one lane.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LaneTraffic {
    pub lane: usize,
    pub count: usize,
    /// Bounds of the uniform gap between consecutive vehicles (m).
    pub spacing_m: [f64; 2],
    /// Bounds of the uniform initial speed (km/h).
    pub speed_kmh: [f64; 2],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrafficConfig {
    pub lanes: Vec<LaneTraffic>,
    /// Exchanges the speed ranges of the two lanes.
    #[serde(default)]
    pub swap_lane_table: bool,
}

impl TrafficConfig {
    /// Two lanes of 20 vehicles: the left lane at 70–100 km/h, the right
    /// at 90–120 km/h.
    pub fn dense_two_lane() -> Self {
        Self {
            lanes: vec![
                LaneTraffic {
                    lane: 1,
                    count: 20,
                    spacing_m: [50.0, 150.0],
                    speed_kmh: [70.0, 100.0],
                },
                LaneTraffic {
                    lane: 0,
                    count: 20,
                    spacing_m: [50.0, 150.0],
                    speed_kmh: [90.0, 120.0],
                },
            ],
            swap_lane_table: false,
        }
    }

    /// Lane table after applying `swap_lane_table`.
    pub fn effective_lanes(&self) -> Vec<LaneTraffic> {
        let mut lanes = self.lanes.clone();
        if self.swap_lane_table && lanes.len() == 2 {
            let (a, b) = (lanes[0].speed_kmh, lanes[1].speed_kmh);
            lanes[0].speed_kmh = b;
            lanes[1].speed_kmh = a;
        }
        lanes
    }
}

fn default_duration() -> f64 {
    300.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scenario {
    #[serde(default)]
    pub name: String,
    #[serde(default, skip_serializing_if = "String::is_empty")]
    pub notes: String,
    pub road: RoadGeometry,
    pub ego: VehicleState,
    #[serde(default)]
    pub obstacles: Vec<ObstacleState>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub traffic: Option<TrafficConfig>,
    #[serde(default)]
    pub seed: u64,
    #[serde(rename = "duration_s", default = "default_duration")]
    pub duration: f64,
}

impl Scenario {
    pub fn from_json(text: &str) -> Result<Self> {
        let s: Scenario = serde_json::from_str(text)
            .map_err(|e| Error::InvalidScenario(format!("malformed scenario: {e}")))?;
        Ok(s)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::InvalidScenario(format!("{}: {e}", path.display())))?;
        let s = Self::from_json(&text)?;
        s.validate(&VehicleParams::default())?;
        Ok(s)
    }

    /// The scenario to run for `seed`. A traffic table with no listed
    /// obstacles is a template: its vehicles are spawned from the seed.
    /// Otherwise the obstacle list is used as is.
    pub fn for_seed(&self, seed: u64) -> Result<Scenario> {
        match &self.traffic {
            Some(traffic) if self.obstacles.is_empty() => {
                let mut s = spawn_dense_traffic(
                    seed,
                    &DenseTrafficConfig {
                        road: self.road,
                        ego: self.ego,
                        traffic: traffic.clone(),
                        duration: self.duration,
                    },
                )?;
                s.name = format!("{}-{seed}", self.name);
                s.notes = self.notes.clone();
                Ok(s)
            }
            _ => Ok(Scenario {
                seed,
                ..self.clone()
            }),
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("scenario serializes")
    }

    /// Checks the road, the ego state, and that no two vehicles overlap.
    pub fn validate(&self, params: &VehicleParams) -> Result<()> {
        self.road.validate()?;
        if !(self.duration > 0.0) {
            return Err(Error::InvalidScenario(format!(
                "duration must be positive, got {}",
                self.duration
            )));
        }
        if !self.ego.is_finite() || self.ego.vx < params.vx_floor {
            return Err(Error::InvalidScenario(format!(
                "ego speed {} is below the floor {}",
                self.ego.vx, params.vx_floor
            )));
        }
        if self.ego.y < self.road.y_min() || self.ego.y > self.road.y_max() {
            return Err(Error::InvalidScenario(format!(
                "ego y = {} is off the road",
                self.ego.y
            )));
        }
        let ego = (self.ego.x, self.ego.y, self.ego.theta, params.l1, params.l2);
        let mut bodies = vec![ego];
        for (i, o) in self.obstacles.iter().enumerate() {
            if !(o.v >= 0.0) || !o.x.is_finite() || !o.y.is_finite() {
                return Err(Error::InvalidScenario(format!(
                    "obstacle {i} has invalid state {o:?}"
                )));
            }
            bodies.push((o.x, o.y, o.heading, o.l1, o.l2));
        }
        for i in 0..bodies.len() {
            for j in i + 1..bodies.len() {
                let (a, b) = (bodies[i], bodies[j]);
                let d = pairwise_clearances(
                    &crate::geometry::Pose::new(a.0, a.1, a.2),
                    Body { l1: a.3, l2: a.4 },
                    &crate::geometry::Pose::new(b.0, b.1, b.2),
                    Body { l1: b.3, l2: b.4 },
                );
                if d.iter().any(|&d| d < 2.0 * params.radius) {
                    let name = |k: usize| {
                        if k == 0 {
                            "ego".to_string()
                        } else {
                            format!("obstacle {}", k - 1)
                        }
                    };
                    return Err(Error::InvalidScenario(format!(
                        "{} and {} overlap at t = 0",
                        name(i),
                        name(j)
                    )));
                }
            }
        }
        Ok(())
    }
}

/// Settings for [`spawn_dense_traffic`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DenseTrafficConfig {
    pub road: RoadGeometry,
    pub ego: VehicleState,
    pub traffic: TrafficConfig,
    pub duration: f64,
}

impl Default for DenseTrafficConfig {
    fn default() -> Self {
        Self {
            road: RoadGeometry {
                length: 3000.0,
                lanes: 2,
                lane_width: 4.0,
            },
            ego: VehicleState::cruising(0.0, 6.0, 25.0),
            traffic: TrafficConfig::dense_two_lane(),
            duration: 300.0,
        }
    }
}

/// Places each lane's vehicles ahead of the ego with uniform gaps and speeds.
/// The same seed always yields the same scenario.
pub fn spawn_dense_traffic(seed: u64, config: &DenseTrafficConfig) -> Result<Scenario> {
    config.road.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut obstacles = Vec::new();
    let room = config.road.length - config.ego.x;
    for lane in config.traffic.effective_lanes() {
        if lane.lane >= config.road.lanes {
            return Err(Error::InvalidScenario(format!(
                "traffic lane {} does not exist on a {}-lane road",
                lane.lane, config.road.lanes
            )));
        }
        let [s_lo, s_hi] = lane.spacing_m;
        let [v_lo, v_hi] = lane.speed_kmh;
        if !(s_lo > 0.0 && s_lo <= s_hi) || !(v_lo >= 0.0 && v_lo <= v_hi) {
            return Err(Error::InvalidScenario(format!(
                "bad spacing or speed range in {lane:?}"
            )));
        }
        if lane.count as f64 * s_lo > room {
            return Err(Error::ImpossiblePacking {
                lane: lane.lane,
                requested: lane.count,
                length: config.road.length,
            });
        }
        let y = config.road.lane_center(lane.lane);
        let mut x = config.ego.x;
        for _ in 0..lane.count {
            x += rng.random_range(s_lo..=s_hi);
            let v = rng.random_range(v_lo..=v_hi) * KMH;
            obstacles.push(ObstacleState::new(x, y, v, 0.0));
        }
    }
    Ok(Scenario {
        name: format!("dense-{seed}"),
        notes: String::new(),
        road: config.road,
        ego: config.ego,
        obstacles,
        traffic: Some(config.traffic.clone()),
        seed,
        duration: config.duration,
    })
}
