use std::collections::BTreeMap;

use serde::Serialize;
use thiserror::Error;

use super::{Action, ActionStep, Actor, DoorRef};
use crate::grid::{shortest_path_steps, CellKind, Color, Coord, GridState, KeyRing, PassabilityPolicy};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub enum DoorState {
    Locked,
    Unlocked,
}

/// Why a step cannot be executed.
#[derive(Clone, Debug, PartialEq, Eq, Error)]
pub enum SimError {
    #[error("no matching object at {at}")]
    NoSuchObject { at: Coord },
    #[error("{actor:?} cannot reach {at}")]
    Unreachable { actor: Actor, at: Coord },
    #[error("{actor:?} holds no {color} key")]
    MissingKey { actor: Actor, color: Color },
    #[error("{actor:?} already used its {color} key")]
    KeyAlreadyConsumed { actor: Actor, color: Color },
    #[error("expected {expected} at {at}, found {found}")]
    WrongColor {
        at: Coord,
        expected: Color,
        found: Color,
    },
    #[error("{actor:?} cannot perform this action")]
    WrongActor { actor: Actor },
    #[error("step names no object")]
    Empty,
}

/// The world during plan execution: the grid plus door and key bookkeeping.
/// Unlocked doors and collected objects become empty cells.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct WorldState {
    grid: GridState,
    door_states: BTreeMap<Coord, DoorState>,
    agent_keys: KeyRing,
    human_keys: KeyRing,
    consumed: [KeyRing; 2],
}

impl WorldState {
    pub fn new(grid: GridState) -> Self {
        let door_states = grid
            .cells()
            .filter(|(_, k)| matches!(k, CellKind::Door(_)))
            .map(|(c, _)| (c, DoorState::Locked))
            .collect();
        WorldState {
            agent_keys: *grid.agent_keys(),
            human_keys: *grid.human_keys(),
            grid,
            door_states,
            consumed: [KeyRing::new(); 2],
        }
    }

    pub fn grid(&self) -> &GridState {
        &self.grid
    }

    pub fn door_state(&self, at: Coord) -> Option<DoorState> {
        self.door_states.get(&at).copied()
    }

    pub fn keys(&self, actor: Actor) -> &KeyRing {
        match actor {
            Actor::Agent => &self.agent_keys,
            Actor::Human => &self.human_keys,
        }
    }

    pub fn consumed(&self, actor: Actor) -> &KeyRing {
        &self.consumed[actor as usize]
    }

    pub fn position(&self, actor: Actor) -> Coord {
        match actor {
            Actor::Agent => self.grid.agent_pos(),
            Actor::Human => self.grid.human_pos(),
        }
    }

    fn keys_mut(&mut self, actor: Actor) -> &mut KeyRing {
        match actor {
            Actor::Agent => &mut self.agent_keys,
            Actor::Human => &mut self.human_keys,
        }
    }

    fn distance(&self, from: Coord, to: Coord) -> Option<usize> {
        // Opened doors are empty cells, so every remaining door is locked.
        shortest_path_steps(&self.grid, from, to, &PassabilityPolicy::doors_locked())
    }

    fn can_reach(&self, actor: Actor, to: Coord) -> bool {
        self.distance(self.position(actor), to).is_some()
    }

    /// Nearest cell next to `target` that `actor` can reach, excluding the
    /// target itself.
    fn reachable_neighbor(&self, actor: Actor, target: Coord) -> Option<Coord> {
        let from = self.position(actor);
        self.grid
            .neighbors(target)
            .filter_map(|n| self.distance(from, n).map(|d| (d, n)))
            .min()
            .map(|(_, n)| n)
    }

    /// Moves an actor. Actors only settle on empty terrain; when `to` holds
    /// an object the actor keeps its cell, which lies in the same connected
    /// region, so later reachability is unaffected.
    fn relocate(&mut self, actor: Actor, to: Coord) {
        if self.position(actor) == to || self.grid.terrain(to) != Some(CellKind::Empty) {
            return;
        }
        let other = self.position(actor.other());
        if other == to {
            return;
        }
        self.grid = match actor {
            Actor::Agent => self.grid.with_agent_at(to),
            Actor::Human => self.grid.with_human_at(to),
        };
    }

    fn missing_key(&self, actor: Actor, color: Color) -> SimError {
        if self.consumed(actor).count(color) > 0 {
            SimError::KeyAlreadyConsumed { actor, color }
        } else {
            SimError::MissingKey { actor, color }
        }
    }

    fn collect(&mut self, actor: Actor, color: Color, at: Coord) -> Result<(), SimError> {
        match self.grid.terrain(at) {
            Some(CellKind::Key(found)) if found == color => {}
            Some(CellKind::Key(found)) => {
                return Err(SimError::WrongColor {
                    at,
                    expected: color,
                    found,
                })
            }
            _ => return Err(SimError::NoSuchObject { at }),
        }
        if !self.can_reach(actor, at) {
            return Err(SimError::Unreachable { actor, at });
        }
        self.grid = self.grid.with_cell(at, CellKind::Empty);
        self.relocate(actor, at);
        self.keys_mut(actor).add(color);
        Ok(())
    }

    fn pass(&mut self, giver: Actor, keys: &[Color], to: Coord) -> Result<(), SimError> {
        let wanted: KeyRing = keys.iter().copied().collect();
        let held = *self.keys(giver);
        for color in Color::ALL {
            if held.count(color) < wanted.count(color) {
                return Err(self.missing_key(giver, color));
            }
        }
        let receiver = giver.other();
        if !self.grid.in_bounds(to) || !self.can_reach(receiver, to) {
            return Err(SimError::Unreachable { actor: receiver, at: to });
        }
        let spot = self
            .reachable_neighbor(giver, to)
            .ok_or(SimError::Unreachable { actor: giver, at: to })?;
        self.relocate(receiver, to);
        self.relocate(giver, spot);
        for &color in keys {
            self.keys_mut(giver).take(color);
            self.keys_mut(receiver).add(color);
        }
        Ok(())
    }

    fn unlock(&mut self, actor: Actor, color: Color, at: Coord) -> Result<(), SimError> {
        match self.grid.terrain(at) {
            Some(CellKind::Door(found)) if found == color => {}
            Some(CellKind::Door(found)) => {
                return Err(SimError::WrongColor {
                    at,
                    expected: color,
                    found,
                })
            }
            _ => return Err(SimError::NoSuchObject { at }),
        }
        if self.keys(actor).count(color) == 0 {
            return Err(self.missing_key(actor, color));
        }
        let spot = self
            .reachable_neighbor(actor, at)
            .ok_or(SimError::Unreachable { actor, at })?;
        self.relocate(actor, spot);
        self.keys_mut(actor).take(color);
        self.consumed[actor as usize].add(color);
        self.grid = self.grid.with_cell(at, CellKind::Empty);
        self.door_states.insert(at, DoorState::Unlocked);
        Ok(())
    }

    fn retrieve(&mut self, actor: Actor, at: Coord) -> Result<(), SimError> {
        if actor != Actor::Human {
            return Err(SimError::WrongActor { actor });
        }
        if self.grid.terrain(at) != Some(CellKind::Gem) {
            return Err(SimError::NoSuchObject { at });
        }
        if !self.can_reach(actor, at) {
            return Err(SimError::Unreachable { actor, at });
        }
        self.grid = self.grid.with_cell(at, CellKind::Empty);
        self.relocate(actor, at);
        Ok(())
    }

    fn unlock_door(&mut self, actor: Actor, door: &DoorRef) -> Result<(), SimError> {
        first_feasible(self, &door.at, |w, at| w.unlock(actor, door.color, at))
    }
}

/// Tries each alternative on a scratch copy and commits the first that
/// succeeds. On failure the error for the first alternative is returned.
fn first_feasible(
    world: &mut WorldState,
    options: &[Coord],
    mut apply: impl FnMut(&mut WorldState, Coord) -> Result<(), SimError>,
) -> Result<(), SimError> {
    let mut first_err = None;
    for &at in options {
        let mut scratch = world.clone();
        match apply(&mut scratch, at) {
            Ok(()) => {
                *world = scratch;
                return Ok(());
            }
            Err(e) => {
                first_err.get_or_insert(e);
            }
        }
    }
    Err(first_err.unwrap_or(SimError::Empty))
}

/// Applies one step. Multi-door unlocks are applied door by door and fail
/// as a whole if any door fails.
pub fn simulate_step(world: &WorldState, step: &ActionStep) -> Result<WorldState, SimError> {
    let mut next = world.clone();
    let actor = step.actor;
    match &step.action {
        Action::Collect { color, at } => next.collect(actor, *color, *at)?,
        Action::Pass { keys, to } => {
            if keys.is_empty() {
                return Err(SimError::Empty);
            }
            first_feasible(&mut next, to, |w, at| w.pass(actor, keys, at))?
        }
        Action::Unlock { doors } => {
            if doors.is_empty() {
                return Err(SimError::Empty);
            }
            for door in doors {
                next.unlock_door(actor, door)?;
            }
        }
        Action::Retrieve { at } => first_feasible(&mut next, at, |w, c| w.retrieve(actor, c))?,
    }
    Ok(next)
}

/// Runs steps in order, skipping infeasible ones. Returns the final world and
/// the per-step outcome.
pub fn simulate_sequence(world: &WorldState, steps: &[ActionStep]) -> (WorldState, Vec<Result<(), SimError>>) {
    let mut current = world.clone();
    let mut outcomes = Vec::with_capacity(steps.len());
    for step in steps {
        match simulate_step(&current, step) {
            Ok(next) => {
                current = next;
                outcomes.push(Ok(()));
            }
            Err(e) => outcomes.push(Err(e)),
        }
    }
    (current, outcomes)
}
