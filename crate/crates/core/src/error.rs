use thiserror::Error;

/// Errors raised by the planning library.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("longitudinal speed {vx} m/s is below the tire-model floor {floor} m/s")]
    SpeedBelowFloor { vx: f64, floor: f64 },

    #[error("RK4 stage {stage} has longitudinal speed {vx} m/s below the floor {floor} m/s")]
    StageBelowFloor { stage: usize, vx: f64, floor: f64 },

    #[error("horizon mismatch: expected {expected} entries, found {found}")]
    HorizonMismatch { expected: usize, found: usize },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("invalid scenario: {0}")]
    InvalidScenario(String),

    #[error("cannot place {requested} vehicles in lane {lane} on a {length} m road")]
    ImpossiblePacking {
        lane: usize,
        requested: usize,
        length: f64,
    },
}

pub type Result<T> = std::result::Result<T, Error>;
