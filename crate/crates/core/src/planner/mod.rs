//! Collaborative plans: the Collect/Pass/Unlock/Retrieve action algebra, a
//! simulator that checks steps against the world, and the ground-truth
//! planner.

mod oracle;
mod sample;
mod search;
mod world;

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::grid::{Color, Coord};

pub use oracle::optimal_agent_steps_oracle;
pub use sample::random_problem;
pub use search::{ground_truth_plans, plan_problem, AssistMode, GroundTruth, PlanError, PlanningProblem};
pub use world::{simulate_sequence, simulate_step, DoorState, SimError, WorldState};

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Actor {
    Agent,
    Human,
}

impl Actor {
    pub fn other(self) -> Actor {
        match self {
            Actor::Agent => Actor::Human,
            Actor::Human => Actor::Agent,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Verb {
    Collect,
    Pass,
    Unlock,
    Retrieve,
}

/// A door named in an Unlock step. More than one coordinate means the step
/// hedges between alternatives ("the Yellow_door at (5,2) or (4,5)").
#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct DoorRef {
    pub color: Color,
    pub at: Vec<Coord>,
}

impl DoorRef {
    pub fn new(color: Color, at: Coord) -> Self {
        DoorRef { color, at: vec![at] }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(tag = "verb", rename_all = "lowercase")]
pub enum Action {
    Collect { color: Color, at: Coord },
    /// `keys` keeps the order the keys are listed in; `to` lists alternative
    /// recipient positions.
    Pass { keys: Vec<Color>, to: Vec<Coord> },
    Unlock { doors: Vec<DoorRef> },
    /// `at` lists alternative gem positions.
    Retrieve { at: Vec<Coord> },
}

#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ActionStep {
    pub actor: Actor,
    #[serde(flatten)]
    pub action: Action,
}

impl ActionStep {
    pub fn collect(actor: Actor, color: Color, at: Coord) -> Self {
        ActionStep {
            actor,
            action: Action::Collect { color, at },
        }
    }

    pub fn pass(keys: Vec<Color>, to: Vec<Coord>) -> Self {
        ActionStep {
            actor: Actor::Agent,
            action: Action::Pass { keys, to },
        }
    }

    pub fn unlock(actor: Actor, doors: Vec<DoorRef>) -> Self {
        ActionStep {
            actor,
            action: Action::Unlock { doors },
        }
    }

    pub fn retrieve(at: Vec<Coord>) -> Self {
        ActionStep {
            actor: Actor::Human,
            action: Action::Retrieve { at },
        }
    }

    pub fn verb(&self) -> Verb {
        match self.action {
            Action::Collect { .. } => Verb::Collect,
            Action::Pass { .. } => Verb::Pass,
            Action::Unlock { .. } => Verb::Unlock,
            Action::Retrieve { .. } => Verb::Retrieve,
        }
    }

    /// Splits a multi-door Unlock into one step per door. Other steps are
    /// returned unchanged.
    pub fn atomic(&self) -> Vec<ActionStep> {
        match &self.action {
            Action::Unlock { doors } if doors.len() > 1 => doors
                .iter()
                .map(|d| ActionStep::unlock(self.actor, vec![d.clone()]))
                .collect(),
            _ => vec![self.clone()],
        }
    }

    /// One action line without the enumeration prefix, e.g.
    /// `Collect: red_key at (0,0).`
    pub fn describe(&self) -> String {
        let human = self.actor == Actor::Human;
        match &self.action {
            Action::Collect { color, at } => {
                let who = if human { "human collects " } else { "" };
                format!("Collect: {who}{color}_key at {}.", at.compact())
            }
            Action::Pass { keys, to } => {
                let (lead, recipient) = if human {
                    ("human passes ", "agent")
                } else {
                    ("", "human")
                };
                format!(
                    "Pass: {lead}{} to the {recipient} at {}.",
                    describe_keys(keys),
                    alternatives(to)
                )
            }
            Action::Unlock { doors } => {
                let parts: Vec<String> = doors
                    .iter()
                    .map(|d| {
                        let article = if human { "the " } else { "" };
                        format!("{article}{}_door at {}", d.color.title(), alternatives(&d.at))
                    })
                    .collect();
                let lead = if human { "human unlocks " } else { "" };
                format!("Unlock: {lead}{}.", parts.join(" and "))
            }
            Action::Retrieve { at } => {
                let either = if at.len() > 1 { "either " } else { "" };
                let lead = if human { "human retrieves gem" } else { "gem" };
                format!("Retrieve: {lead} at {either}{}.", alternatives(at))
            }
        }
    }
}

impl fmt::Display for ActionStep {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.describe())
    }
}

/// Joins coordinates as `(a)`, `(a) or (b)`, `(a), (b) or (c)`.
fn alternatives(coords: &[Coord]) -> String {
    let parts: Vec<String> = coords.iter().map(|c| c.compact()).collect();
    match parts.split_last() {
        None => String::new(),
        Some((last, [])) => last.clone(),
        Some((last, rest)) => format!("{} or {last}", rest.join(", ")),
    }
}

/// Groups keys by color in order of first appearance: `red_key and
/// yellow_key`, `red_keys`, `three blue_keys`.
fn describe_keys(keys: &[Color]) -> String {
    let mut groups: Vec<(Color, usize)> = Vec::new();
    for &k in keys {
        match groups.iter_mut().find(|(c, _)| *c == k) {
            Some((_, n)) => *n += 1,
            None => groups.push((k, 1)),
        }
    }
    groups
        .into_iter()
        .map(|(c, n)| match n {
            1 => format!("{c}_key"),
            2 => format!("{c}_keys"),
            n => format!("{} {c}_keys", number_word(n)),
        })
        .collect::<Vec<_>>()
        .join(" and ")
}

pub(crate) fn number_word(n: usize) -> String {
    const WORDS: [&str; 9] = [
        "zero", "one", "two", "three", "four", "five", "six", "seven", "eight",
    ];
    WORDS.get(n).map_or_else(|| n.to_string(), |w| w.to_string())
}

/// An ordered action list.
#[derive(Clone, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ActionSequence {
    pub steps: Vec<ActionStep>,
}

impl ActionSequence {
    pub fn new(steps: Vec<ActionStep>) -> Self {
        ActionSequence { steps }
    }

    pub fn len(&self) -> usize {
        self.steps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.steps.is_empty()
    }

    /// Steps with multi-door unlocks expanded.
    pub fn atomic(&self) -> Vec<ActionStep> {
        self.steps.iter().flat_map(ActionStep::atomic).collect()
    }

    pub fn agent_steps(&self) -> Vec<ActionStep> {
        self.steps
            .iter()
            .filter(|s| s.actor == Actor::Agent)
            .cloned()
            .collect()
    }

    /// Numbered list, one step per line: `1) Collect: red_key at (0,0).`
    pub fn to_numbered_text(&self) -> String {
        self.steps
            .iter()
            .enumerate()
            .map(|(i, s)| format!("{}) {}", i + 1, s.describe()))
            .collect::<Vec<_>>()
            .join("\n")
    }
}

impl FromIterator<ActionStep> for ActionSequence {
    fn from_iter<I: IntoIterator<Item = ActionStep>>(iter: I) -> Self {
        ActionSequence::new(iter.into_iter().collect())
    }
}
