//! Core algorithms for the Doors, Keys and Gems assistance study: grid model,
//! ground-truth planning, scenarios, prompts, response parsing, scoring and
//! statistics.

pub mod grid;
pub mod metrics;
pub mod parser;
pub mod planner;
pub mod prompt;
pub mod scenario;
pub mod stats;

pub use grid::{parse_grid, serialize_grid, Color, Coord, GridError, GridState, ParseOptions};
pub use planner::{ground_truth_plans, ActionSequence, ActionStep, Actor, GroundTruth};
pub use scenario::{load_dataset, Dataset, InstructionType, Scenario};
