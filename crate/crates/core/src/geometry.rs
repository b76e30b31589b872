use serde::{Deserialize, Serialize};

/// Planar pose: reference point and heading.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Pose {
    pub x: f64,
    pub y: f64,
    pub theta: f64,
}

impl Pose {
    pub fn new(x: f64, y: f64, theta: f64) -> Self {
        Self { x, y, theta }
    }

    /// Applies a rigid motion: rotate by `angle` about the origin, then translate.
    pub fn transformed(&self, angle: f64, dx: f64, dy: f64) -> Self {
        let (s, c) = angle.sin_cos();
        Self {
            x: c * self.x - s * self.y + dx,
            y: s * self.x + c * self.y + dy,
            theta: self.theta + angle,
        }
    }
}

/// Cumulative times `t_i = dt_1 + … + dt_i` for `i = 1..=n`.
pub fn knot_times(dt_schedule: &[f64]) -> Vec<f64> {
    dt_schedule
        .iter()
        .scan(0.0, |t, dt| {
            *t += dt;
            Some(*t)
        })
        .collect()
}
