//! Scenario datasets: loading, validation and movement frames.

use std::collections::HashSet;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::grid::{CellKind, Coord, GridError, GridState, ParseOptions};
use crate::planner::{plan_problem, PlanError, PlanningProblem};

pub const DATASET_VERSION: u32 = 1;

const BUNDLED: &str = include_str!("../fixtures/scenarios.json");

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum InstructionType {
    Clear,
    Unclear,
}

impl InstructionType {
    pub fn label(self) -> &'static str {
        match self {
            InstructionType::Clear => "Clear",
            InstructionType::Unclear => "Unclear",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Scenario {
    pub id: String,
    pub grid_initial: GridState,
    /// Human positions in order, starting at the initial position and ending
    /// where the instruction is given.
    pub principal_moves: Vec<Coord>,
    pub movement_description: String,
    pub instruction: String,
    pub instruction_type: InstructionType,
    pub goal_gems: Vec<Coord>,
    pub handoff_coords: Vec<Coord>,
    pub group: u8,
}

impl Scenario {
    /// The grid when the instruction is given.
    pub fn observed_grid(&self) -> GridState {
        render_frames(self)
            .pop()
            .unwrap_or_else(|| self.grid_initial.clone())
    }
}

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct Dataset {
    pub version: u32,
    pub source: Option<String>,
    pub scenarios: Vec<Scenario>,
}

impl Dataset {
    pub fn get(&self, id: &str) -> Option<&Scenario> {
        self.scenarios.iter().find(|s| s.id == id)
    }

    pub fn len(&self) -> usize {
        self.scenarios.len()
    }

    pub fn is_empty(&self) -> bool {
        self.scenarios.is_empty()
    }
}

#[derive(Debug, Error)]
pub enum ScenarioError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("schema violation: {0}")]
    SchemaViolation(String),
    #[error("scenario {id}: {source}")]
    Grid {
        id: String,
        #[source]
        source: GridError,
    },
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub enum Violation {
    MovesStartMismatch { expected: Coord, found: Coord },
    NonAdjacentMove { index: usize, from: Coord, to: Coord },
    ImpassableMove { index: usize, at: Coord },
    GoalNotOnGrid(Coord),
    GoalNotGem(Coord),
    NoGoals,
    GoalUnreachable,
    HandoffNotOnGrid(Coord),
    HandoffImpassable(Coord),
    EmptyInstruction,
    BadGroup(u8),
}

/// On-disk form of one scenario.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioRecord {
    pub id: String,
    pub grid: Vec<String>,
    #[serde(default)]
    pub moves: Vec<Coord>,
    #[serde(default)]
    pub movement_description: String,
    pub instruction: String,
    #[serde(rename = "type")]
    pub instruction_type: InstructionType,
    pub goal_gems: Vec<Coord>,
    #[serde(default)]
    pub handoff: Vec<Coord>,
    pub group: u8,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct DatasetRecord {
    version: u32,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    source: Option<String>,
    scenarios: Vec<ScenarioRecord>,
}

impl ScenarioRecord {
    pub fn into_scenario(self) -> Result<Scenario, ScenarioError> {
        let grid_initial = GridState::from_rows(&self.grid, ParseOptions::lenient()).map_err(|source| {
            ScenarioError::Grid {
                id: self.id.clone(),
                source,
            }
        })?;
        Ok(Scenario {
            id: self.id,
            grid_initial,
            principal_moves: self.moves,
            movement_description: self.movement_description,
            instruction: self.instruction,
            instruction_type: self.instruction_type,
            goal_gems: self.goal_gems,
            handoff_coords: self.handoff,
            group: self.group,
        })
    }

    pub fn from_scenario(s: &Scenario) -> Self {
        ScenarioRecord {
            id: s.id.clone(),
            grid: s.grid_initial.to_rows(),
            moves: s.principal_moves.clone(),
            movement_description: s.movement_description.clone(),
            instruction: s.instruction.clone(),
            instruction_type: s.instruction_type,
            goal_gems: s.goal_gems.clone(),
            handoff: s.handoff_coords.clone(),
            group: s.group,
        }
    }
}

pub fn load_dataset(path: impl AsRef<Path>) -> Result<Dataset, ScenarioError> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|source| ScenarioError::Io {
        path: path.display().to_string(),
        source,
    })?;
    parse_dataset(&text)
}

/// Parses and validates a dataset document.
pub fn parse_dataset(text: &str) -> Result<Dataset, ScenarioError> {
    let record: DatasetRecord =
        serde_json::from_str(text).map_err(|e| ScenarioError::SchemaViolation(e.to_string()))?;
    if record.version != DATASET_VERSION {
        return Err(ScenarioError::SchemaViolation(format!(
            "unsupported version {}",
            record.version
        )));
    }
    let mut ids = HashSet::new();
    let mut scenarios = Vec::with_capacity(record.scenarios.len());
    for r in record.scenarios {
        if !ids.insert(r.id.clone()) {
            return Err(ScenarioError::SchemaViolation(format!("duplicate id {}", r.id)));
        }
        let s = r.into_scenario()?;
        let violations = validate_scenario(&s);
        if !violations.is_empty() {
            return Err(ScenarioError::SchemaViolation(format!("scenario {}: {:?}", s.id, violations)));
        }
        scenarios.push(s);
    }
    Ok(Dataset {
        version: record.version,
        source: record.source,
        scenarios,
    })
}

pub fn dataset_to_json(d: &Dataset) -> String {
    let record = DatasetRecord {
        version: d.version,
        source: d.source.clone(),
        scenarios: d.scenarios.iter().map(ScenarioRecord::from_scenario).collect(),
    };
    serde_json::to_string_pretty(&record).expect("dataset serializes")
}

/// The three scenarios shipped with the crate: the two worked problems and
/// the background grid. Parsed and validated once per process.
pub fn bundled_dataset() -> Dataset {
    static PARSED: std::sync::OnceLock<Dataset> = std::sync::OnceLock::new();
    PARSED
        .get_or_init(|| parse_dataset(BUNDLED).expect("bundled dataset is valid"))
        .clone()
}

fn walkable(grid: &GridState, at: Coord) -> bool {
    !matches!(grid.terrain(at), None | Some(CellKind::Wall) | Some(CellKind::Door(_)))
}

pub fn validate_scenario(s: &Scenario) -> Vec<Violation> {
    let g = &s.grid_initial;
    let mut out = Vec::new();
    if let Some(&first) = s.principal_moves.first() {
        if first != g.human_pos() {
            out.push(Violation::MovesStartMismatch {
                expected: g.human_pos(),
                found: first,
            });
        }
    }
    for (i, pair) in s.principal_moves.windows(2).enumerate() {
        let (from, to) = (pair[0], pair[1]);
        if !walkable(g, to) {
            out.push(Violation::ImpassableMove { index: i + 1, at: to });
        } else if !from.is_adjacent(to) {
            out.push(Violation::NonAdjacentMove { index: i + 1, from, to });
        }
    }
    if s.goal_gems.is_empty() {
        out.push(Violation::NoGoals);
    }
    for &goal in &s.goal_gems {
        if !g.in_bounds(goal) {
            out.push(Violation::GoalNotOnGrid(goal));
        } else if g.cell(goal) != Some(CellKind::Gem) {
            out.push(Violation::GoalNotGem(goal));
        }
    }
    for &h in &s.handoff_coords {
        if !g.in_bounds(h) {
            out.push(Violation::HandoffNotOnGrid(h));
        } else if !walkable(g, h) {
            out.push(Violation::HandoffImpassable(h));
        }
    }
    if s.instruction.trim().is_empty() {
        out.push(Violation::EmptyInstruction);
    }
    if !(1..=2).contains(&s.group) {
        out.push(Violation::BadGroup(s.group));
    }
    if out.is_empty() {
        if let Err(PlanError::GoalUnreachable) = plan_problem(&PlanningProblem::from_scenario(s)) {
            out.push(Violation::GoalUnreachable);
        }
    }
    out
}

/// One grid per human position along the movement script, each built from
/// the initial grid with only the human relocated.
pub fn render_frames(s: &Scenario) -> Vec<GridState> {
    if s.principal_moves.is_empty() {
        return vec![s.grid_initial.clone()];
    }
    s.principal_moves
        .iter()
        .map(|&at| {
            if at == s.grid_initial.human_pos() {
                s.grid_initial.clone()
            } else {
                s.grid_initial.with_human_at(at)
            }
        })
        .collect()
}

/// Differences between a dataset and the full study corpus: 20 scenarios,
/// 8 clear and 12 unclear, two groups of 10.
pub fn corpus_shape_issues(d: &Dataset) -> Vec<String> {
    let mut issues = Vec::new();
    let count = |f: &dyn Fn(&Scenario) -> bool| d.scenarios.iter().filter(|s| f(s)).count();
    if d.len() != 20 {
        issues.push(format!("expected 20 scenarios, found {}", d.len()));
    }
    let clear = count(&|s| s.instruction_type == InstructionType::Clear);
    if clear != 8 || d.len() - clear != 12 {
        issues.push(format!("expected 8 clear / 12 unclear, found {clear} / {}", d.len() - clear));
    }
    for group in [1u8, 2] {
        let n = count(&|s| s.group == group);
        if n != 10 {
            issues.push(format!("expected 10 scenarios in group {group}, found {n}"));
        }
    }
    issues
}
