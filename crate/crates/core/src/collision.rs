//! Two-circle vehicle footprints and time-matched collision constraints.
//!
//! Each vehicle is covered by a front and a rear disc of radius `R` placed
//! `l1` ahead of and `l2` behind its reference point. Two vehicles are clear
//! when all four center-to-center distances are at least `2R`.
//!
//! Constraints pair the ego state at knot `i` only with obstacle poses
//! predicted for the same knot. A cross-time pairing mode exists for
//! diagnostics and counts `4·n²` rows per obstacle.

use nalgebra::{Matrix3, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::Pose;
use crate::prediction::PredictedObstacle;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CirclePair {
    pub front: (f64, f64),
    pub rear: (f64, f64),
    pub radius: f64,
}

impl CirclePair {
    pub fn centers(&self) -> [(f64, f64); 2] {
        [self.front, self.rear]
    }
}

pub fn circle_centers(pose: &Pose, l1: f64, l2: f64, radius: f64) -> CirclePair {
    let (s, c) = pose.theta.sin_cos();
    CirclePair {
        front: (pose.x + l1 * c, pose.y + l1 * s),
        rear: (pose.x - l2 * c, pose.y - l2 * s),
        radius,
    }
}

/// Which ego circle is paired with which obstacle circle.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum PairIndex {
    FrontFront,
    FrontRear,
    RearFront,
    RearRear,
}

impl PairIndex {
    pub const ALL: [PairIndex; 4] = [
        PairIndex::FrontFront,
        PairIndex::FrontRear,
        PairIndex::RearFront,
        PairIndex::RearRear,
    ];

    pub fn ego_is_front(self) -> bool {
        matches!(self, PairIndex::FrontFront | PairIndex::FrontRear)
    }

    pub fn obstacle_is_front(self) -> bool {
        matches!(self, PairIndex::FrontFront | PairIndex::RearFront)
    }
}

/// Geometry of one vehicle for the clearance computation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Body {
    pub l1: f64,
    pub l2: f64,
}

/// Center distances `[d_ff, d_fr, d_rf, d_rr]` between ego and obstacle circles.
pub fn pairwise_clearances(ego: &Pose, ego_body: Body, obs: &Pose, obs_body: Body) -> [f64; 4] {
    let e = circle_centers(ego, ego_body.l1, ego_body.l2, 0.0);
    let o = circle_centers(obs, obs_body.l1, obs_body.l2, 0.0);
    let d = |a: (f64, f64), b: (f64, f64)| (a.0 - b.0).hypot(a.1 - b.1);
    [
        d(e.front, o.front),
        d(e.front, o.rear),
        d(e.rear, o.front),
        d(e.rear, o.rear),
    ]
}

/// Feasibility predicate `d ≥ 2R` for every pair (closed set).
pub fn is_clear(distances: &[f64; 4], radius: f64) -> bool {
    distances.iter().all(|&d| d >= 2.0 * radius)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PairingMode {
    /// Ego knot `i` against obstacle knot `i` only.
    #[default]
    Instantaneous,
    /// Ego knot `i` against every obstacle knot `k` (diagnostic).
    FullCross,
}

/// One row `required² − |c_ego(X_i) − center|² ≤ 0`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CollisionConstraint {
    /// Ego knot index (0-based into `X_1..X_n`).
    pub step: usize,
    /// Obstacle knot the center was taken from; equals `step` unless cross-paired.
    pub obstacle_step: usize,
    pub obstacle: usize,
    pub pair: PairIndex,
    /// Signed offset of the ego circle along the heading (`l1` or `−l2`).
    pub ego_offset: f64,
    pub center: (f64, f64),
    /// Minimum center distance, `2R` plus any uncertainty inflation.
    pub required: f64,
}

impl CollisionConstraint {
    fn delta(&self, x: f64, y: f64, theta: f64) -> (f64, f64, f64, f64) {
        let (s, c) = theta.sin_cos();
        (
            x + self.ego_offset * c - self.center.0,
            y + self.ego_offset * s - self.center.1,
            s,
            c,
        )
    }

    /// Constraint value; feasible when ≤ 0.
    pub fn value(&self, x: f64, y: f64, theta: f64) -> f64 {
        let (ex, ey, _, _) = self.delta(x, y, theta);
        self.required * self.required - (ex * ex + ey * ey)
    }

    pub fn distance(&self, x: f64, y: f64, theta: f64) -> f64 {
        let (ex, ey, _, _) = self.delta(x, y, theta);
        ex.hypot(ey)
    }

    /// Gradient with respect to `(x, y, θ)`.
    pub fn gradient(&self, x: f64, y: f64, theta: f64) -> Vector3<f64> {
        let (ex, ey, s, c) = self.delta(x, y, theta);
        let l = self.ego_offset;
        Vector3::new(-2.0 * ex, -2.0 * ey, -2.0 * l * (ey * c - ex * s))
    }

    /// Hessian with respect to `(x, y, θ)`.
    pub fn hessian(&self, x: f64, y: f64, theta: f64) -> Matrix3<f64> {
        let (ex, ey, s, c) = self.delta(x, y, theta);
        let l = self.ego_offset;
        let xt = 2.0 * l * s;
        let yt = -2.0 * l * c;
        let tt = -2.0 * (l * l - l * (ex * c + ey * s));
        Matrix3::new(-2.0, 0.0, xt, 0.0, -2.0, yt, xt, yt, tt)
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct CollisionConstraintSet {
    pub horizon: usize,
    pub constraints: Vec<CollisionConstraint>,
}

impl CollisionConstraintSet {
    pub fn len(&self) -> usize {
        self.constraints.len()
    }

    pub fn is_empty(&self) -> bool {
        self.constraints.is_empty()
    }

    /// Rows attached to ego knot `step`.
    pub fn at_step(&self, step: usize) -> impl Iterator<Item = &CollisionConstraint> {
        self.constraints.iter().filter(move |c| c.step == step)
    }
}

/// Options for [`generate_constraints`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CollisionConfig {
    pub mode: PairingMode,
    /// Uncertainty inflation `k`: the required distance becomes `2R + k·σ`.
    pub inflation_k: f64,
}

impl Default for CollisionConfig {
    fn default() -> Self {
        Self {
            mode: PairingMode::Instantaneous,
            inflation_k: 0.0,
        }
    }
}

/// Builds the collision rows for an `n`-knot ego trajectory.
pub fn generate_constraints(
    horizon: usize,
    predictions: &[PredictedObstacle],
    ego: Body,
    radius: f64,
    config: &CollisionConfig,
) -> Result<CollisionConstraintSet> {
    let mut constraints = Vec::new();
    for pred in predictions {
        if pred.len() != horizon {
            return Err(Error::HorizonMismatch {
                expected: horizon,
                found: pred.len(),
            });
        }
        for step in 0..horizon {
            let obstacle_steps = match config.mode {
                PairingMode::Instantaneous => step..step + 1,
                PairingMode::FullCross => 0..horizon,
            };
            for k in obstacle_steps {
                let circles = circle_centers(&pred.poses[k], pred.l1, pred.l2, radius);
                let required = 2.0 * radius + config.inflation_k * pred.position_sigma(k);
                for pair in PairIndex::ALL {
                    constraints.push(CollisionConstraint {
                        step,
                        obstacle_step: k,
                        obstacle: pred.id,
                        pair,
                        ego_offset: if pair.ego_is_front() { ego.l1 } else { -ego.l2 },
                        center: if pair.obstacle_is_front() {
                            circles.front
                        } else {
                            circles.rear
                        },
                        required,
                    });
                }
            }
        }
    }
    Ok(CollisionConstraintSet {
        horizon,
        constraints,
    })
}

/// Longitudinal sensing window relative to the ego.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SensingRange {
    pub ahead: f64,
    pub behind: f64,
}

impl Default for SensingRange {
    fn default() -> Self {
        Self {
            ahead: 300.0,
            behind: 100.0,
        }
    }
}

impl SensingRange {
    pub fn contains(&self, ego_x: f64, obs_x: f64) -> bool {
        let dx = obs_x - ego_x;
        dx <= self.ahead && dx >= -self.behind
    }
}

/// Oriented rectangle used by the dense-sampling overlap diagnostic.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Footprint {
    pub length: f64,
    pub width: f64,
}

impl Default for Footprint {
    fn default() -> Self {
        Self {
            length: 4.6,
            width: 1.85,
        }
    }
}

fn rect_corners(pose: &Pose, body: Body, fp: Footprint) -> [(f64, f64); 4] {
    // Rectangle centered halfway between the circle centers.
    let (s, c) = pose.theta.sin_cos();
    let mid = 0.5 * (body.l1 - body.l2);
    let (cx, cy) = (pose.x + mid * c, pose.y + mid * s);
    let (hl, hw) = (fp.length / 2.0, fp.width / 2.0);
    let corner = |a: f64, b: f64| (cx + a * c - b * s, cy + a * s + b * c);
    [
        corner(hl, hw),
        corner(-hl, hw),
        corner(-hl, -hw),
        corner(hl, -hw),
    ]
}

/// Separating-axis overlap test for two oriented rectangles.
pub fn rectangles_overlap(a: &[(f64, f64); 4], b: &[(f64, f64); 4]) -> bool {
    for poly in [a, b] {
        for i in 0..2 {
            let (p, q) = (poly[i], poly[i + 1]);
            let axis = (q.1 - p.1, p.0 - q.0);
            let project = |pts: &[(f64, f64); 4]| {
                pts.iter().fold((f64::MAX, f64::MIN), |(lo, hi), v| {
                    let d = v.0 * axis.0 + v.1 * axis.1;
                    (lo.min(d), hi.max(d))
                })
            };
            let (amin, amax) = project(a);
            let (bmin, bmax) = project(b);
            if amax < bmin || bmax < amin {
                return false;
            }
        }
    }
    true
}

/// Result of comparing a plan against rectangular footprints on a dense time grid.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct DenseCheckReport {
    pub samples: usize,
    pub rectangle_overlaps: usize,
    pub circle_violations: usize,
}

/// Interpolates ego and obstacle poses at `dt/subdivisions` and counts
/// rectangle overlaps and circle-clearance violations. `ego_poses` and each
/// prediction start at the current time (index 0) followed by the knots.
pub fn dense_overlap_check(
    ego_poses: &[Pose],
    ego_body: Body,
    obstacles: &[(Vec<Pose>, Body)],
    radius: f64,
    footprint: Footprint,
    subdivisions: usize,
) -> DenseCheckReport {
    let lerp = |a: &Pose, b: &Pose, s: f64| {
        Pose::new(
            a.x + (b.x - a.x) * s,
            a.y + (b.y - a.y) * s,
            a.theta + (b.theta - a.theta) * s,
        )
    };
    let mut report = DenseCheckReport::default();
    let sub = subdivisions.max(1);
    for k in 0..ego_poses.len().saturating_sub(1) {
        for j in 0..sub {
            let s = j as f64 / sub as f64;
            let ego = lerp(&ego_poses[k], &ego_poses[k + 1], s);
            let ego_rect = rect_corners(&ego, ego_body, footprint);
            report.samples += 1;
            for (poses, body) in obstacles {
                if poses.len() <= k + 1 {
                    continue;
                }
                let obs = lerp(&poses[k], &poses[k + 1], s);
                if rectangles_overlap(&ego_rect, &rect_corners(&obs, *body, footprint)) {
                    report.rectangle_overlaps += 1;
                }
                let d = pairwise_clearances(&ego, ego_body, &obs, *body);
                if !is_clear(&d, radius) {
                    report.circle_violations += 1;
                }
            }
        }
    }
    report
}
