pub mod collision;
pub mod dynamics;
pub mod error;
pub mod geometry;
pub mod heuristic;
pub mod optimizer;
pub mod planner;
pub mod prediction;
pub mod sim;
pub mod solver;

pub use collision::{CollisionConfig, CollisionConstraintSet, PairingMode, SensingRange};
pub use dynamics::{ControlInput, Limits, Transition, VehicleParams, VehicleState};
pub use error::{Error, Result};
pub use geometry::Pose;
pub use heuristic::{Corridor, XtConfig, XtGrid, XtProfile};
pub use optimizer::{OptimizerConfig, PlanningProblem, RoadBounds, TrajectorySolution, Weights};
pub use planner::{CorridorMode, PlanCycleRecord, PlannerConfig, RoadGeometry, WorldSnapshot};
pub use prediction::{ObstacleState, PredictedObstacle, PredictionConfig};
pub use solver::{SolveStatus, SolverOptions};
