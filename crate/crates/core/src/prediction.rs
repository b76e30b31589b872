//! Constant-velocity obstacle prediction with linearly growing position variance.

use nalgebra::Matrix3;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{knot_times, Pose};

/// Observed obstacle state. `l1`/`l2` place the two collision circles.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ObstacleState {
    pub x: f64,
    pub y: f64,
    pub v: f64,
    #[serde(default)]
    pub heading: f64,
    #[serde(default = "default_l1")]
    pub l1: f64,
    #[serde(default = "default_l2")]
    pub l2: f64,
}

fn default_l1() -> f64 {
    1.180
}

fn default_l2() -> f64 {
    1.770
}

impl ObstacleState {
    pub fn new(x: f64, y: f64, v: f64, heading: f64) -> Self {
        Self {
            x,
            y,
            v,
            heading,
            l1: default_l1(),
            l2: default_l2(),
        }
    }

    pub fn pose(&self) -> Pose {
        Pose::new(self.x, self.y, self.heading)
    }
}

/// Noise model for [`predict`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PredictionConfig {
    /// Position standard deviation at t = 0 (m).
    pub sigma0: f64,
    /// Position standard-deviation growth (m/√s).
    pub sigma_growth: f64,
}

impl Default for PredictionConfig {
    fn default() -> Self {
        Self {
            sigma0: 0.2,
            sigma_growth: 0.1,
        }
    }
}

impl PredictionConfig {
    /// Covariance over `(x, y, v)` at time `t` after the observation.
    pub fn covariance_at(&self, t: f64) -> Matrix3<f64> {
        let var = self.sigma0 * self.sigma0 + self.sigma_growth * self.sigma_growth * t;
        Matrix3::from_diagonal(&nalgebra::Vector3::new(var, var, 0.0))
    }
}

/// Predicted obstacle trajectory at the knot times `t_1..t_n`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictedObstacle {
    pub id: usize,
    pub l1: f64,
    pub l2: f64,
    pub poses: Vec<Pose>,
    pub velocities: Vec<f64>,
    pub covariances: Vec<Matrix3<f64>>,
}

impl PredictedObstacle {
    pub fn len(&self) -> usize {
        self.poses.len()
    }

    pub fn is_empty(&self) -> bool {
        self.poses.is_empty()
    }

    /// Standard deviation of the x coordinate at knot `i`.
    pub fn position_sigma(&self, i: usize) -> f64 {
        self.covariances[i][(0, 0)].max(0.0).sqrt()
    }
}

/// Advances `obs` along its heading at constant speed to each knot time.
pub fn predict(
    id: usize,
    obs: &ObstacleState,
    n: usize,
    dt_schedule: &[f64],
    config: &PredictionConfig,
) -> Result<PredictedObstacle> {
    if n == 0 {
        return Err(Error::InvalidArgument(
            "prediction horizon must be ≥ 1".into(),
        ));
    }
    if dt_schedule.len() != n {
        return Err(Error::HorizonMismatch {
            expected: n,
            found: dt_schedule.len(),
        });
    }
    if obs.v < 0.0 {
        return Err(Error::InvalidArgument(format!(
            "obstacle speed must be non-negative, got {}",
            obs.v
        )));
    }
    let (s, c) = obs.heading.sin_cos();
    let times = knot_times(dt_schedule);
    let poses = times
        .iter()
        .map(|t| Pose::new(obs.x + obs.v * t * c, obs.y + obs.v * t * s, obs.heading))
        .collect();
    Ok(PredictedObstacle {
        id,
        l1: obs.l1,
        l2: obs.l2,
        poses,
        velocities: vec![obs.v; n],
        covariances: times.iter().map(|&t| config.covariance_at(t)).collect(),
    })
}
