//! Deterministic two-agent gridworlds: FindTreasure and MoveBox (tasks 0-3).

mod engine;
mod map;

pub use engine::{
    Action, EnvState, GridEnv, JointAction, JointObservation, StepOutcome, TaskVariant,
    TerminationCause, DEFAULT_FIND_TREASURE_STEPS, DEFAULT_MOVE_BOX_STEPS,
};
pub use map::{CellKind, GridMap, Pos, Rect, Region};

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MapError {
    #[error("map parse error at line {line}, column {column}: {message}")]
    Parse {
        line: usize,
        column: usize,
        message: String,
    },
    #[error("invalid map: {0}")]
    Validation(String),
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EnvError {
    #[error("task variant {variant} is not valid for this map: {reason}")]
    Variant { variant: TaskVariant, reason: String },
    #[error("step called on a terminated environment")]
    SteppedTerminatedEnv,
}

/// Parses the ASCII map format.
pub fn load_map(text: &str) -> Result<GridMap, MapError> {
    GridMap::parse(text)
}
