use std::cell::RefCell;
use std::collections::{BTreeMap, HashMap, HashSet, VecDeque};
use std::rc::Rc;

use serde::Serialize;
use thiserror::Error;

use super::{ActionSequence, ActionStep, Actor, DoorRef};
use crate::grid::{bfs_distances, CellKind, Color, Coord, GridState, KeyRing};
use crate::scenario::Scenario;

/// How the agent is asked to help: hand keys over, or open doors itself.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize)]
pub enum AssistMode {
    PassKeys,
    UnlockDoors,
}

impl AssistMode {
    /// Requests to unlock or open something keep the keys with the agent.
    pub fn from_instruction(text: &str) -> AssistMode {
        let lower = text.to_lowercase();
        let opens = lower
            .split(|c: char| !c.is_ascii_alphabetic())
            .any(|w| w == "open" || w == "unlock");
        if opens {
            AssistMode::UnlockDoors
        } else {
            AssistMode::PassKeys
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Error)]
pub enum PlanError {
    #[error("no key/door combination opens a path to a goal gem")]
    GoalUnreachable,
    #[error("no goal gems given")]
    NoGoals,
    #[error("goal {0} is not a gem on the grid")]
    InvalidGoal(Coord),
}

/// One planning instance: the observed grid, the annotated goal gems, the
/// cells where the human can take keys, and the kind of help asked for.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct PlanningProblem {
    pub grid: GridState,
    pub goals: Vec<Coord>,
    pub handoffs: Vec<Coord>,
    pub mode: AssistMode,
}

impl PlanningProblem {
    /// Handoff defaults to the human's current cell.
    pub fn new(grid: GridState, goals: Vec<Coord>, mode: AssistMode) -> Self {
        let handoffs = vec![grid.human_pos()];
        PlanningProblem {
            grid,
            goals,
            handoffs,
            mode,
        }
    }

    pub fn from_scenario(s: &Scenario) -> Self {
        let grid = s.observed_grid();
        let handoffs = if s.handoff_coords.is_empty() {
            vec![grid.human_pos()]
        } else {
            s.handoff_coords.clone()
        };
        PlanningProblem {
            grid,
            goals: s.goal_gems.clone(),
            handoffs,
            mode: AssistMode::from_instruction(&s.instruction),
        }
    }

    pub(crate) fn validate(&self) -> Result<(), PlanError> {
        if self.goals.is_empty() {
            return Err(PlanError::NoGoals);
        }
        for &g in &self.goals {
            if self.grid.cell(g) != Some(CellKind::Gem) {
                return Err(PlanError::InvalidGoal(g));
            }
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct GroundTruth {
    pub optimal_plans: Vec<ActionSequence>,
    pub optimal_agent_steps: usize,
    pub goal_gems: Vec<Coord>,
    pub handoff_coords: Vec<Coord>,
}

pub fn ground_truth_plans(scenario: &Scenario) -> Result<GroundTruth, PlanError> {
    plan_problem(&PlanningProblem::from_scenario(scenario))
}

/// Exhaustive search over agent itineraries. The requested mode is tried
/// first; if it cannot reach a goal, both kinds of help are allowed.
pub fn plan_problem(problem: &PlanningProblem) -> Result<GroundTruth, PlanError> {
    problem.validate()?;
    let restricted = Rules::for_mode(problem.mode);
    match Search::new(problem, restricted).run() {
        Err(PlanError::GoalUnreachable) => Search::new(problem, Rules::ANY).run(),
        other => other,
    }
}

#[derive(Clone, Copy, Debug)]
pub(crate) struct Rules {
    pub pass: bool,
    pub unlock: bool,
}

impl Rules {
    pub(crate) const ANY: Rules = Rules {
        pass: true,
        unlock: true,
    };

    pub(crate) fn for_mode(mode: AssistMode) -> Rules {
        match mode {
            AssistMode::PassKeys => Rules {
                pass: true,
                unlock: false,
            },
            AssistMode::UnlockDoors => Rules {
                pass: false,
                unlock: true,
            },
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
struct State {
    pos: Coord,
    remaining: u32,
    open: u32,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum Event {
    Collect(usize),
    Unlock { door: usize, from: Coord },
    Pass { to: Coord, from: Coord },
    Finish,
}

/// Doors the human opens on the way, and the goal gems reached that way.
type HumanRoute = (Vec<usize>, Vec<Coord>);

/// Position and door mask of the walking human.
type HumanNode = (Coord, u32);

struct Search<'a> {
    problem: &'a PlanningProblem,
    rules: Rules,
    keys: Vec<(Coord, Color)>,
    doors: Vec<(Coord, Color)>,
    door_at: HashMap<Coord, usize>,
    dist_cache: RefCell<HashMap<HumanNode, Rc<Vec<Option<u32>>>>>,
    best: RefCell<HashMap<State, Option<u32>>>,
}

impl<'a> Search<'a> {
    fn new(problem: &'a PlanningProblem, rules: Rules) -> Self {
        let mut keys = Vec::new();
        let mut doors = Vec::new();
        for (c, k) in problem.grid.cells() {
            match k {
                CellKind::Key(color) => keys.push((c, color)),
                CellKind::Door(color) => doors.push((c, color)),
                _ => {}
            }
        }
        let door_at = doors.iter().enumerate().map(|(i, &(c, _))| (c, i)).collect();
        Search {
            problem,
            rules,
            keys,
            doors,
            door_at,
            dist_cache: RefCell::new(HashMap::new()),
            best: RefCell::new(HashMap::new()),
        }
    }

    fn grid(&self) -> &GridState {
        &self.problem.grid
    }

    fn passable(&self, at: Coord, open: u32) -> bool {
        match self.grid().terrain(at) {
            None | Some(CellKind::Wall) => false,
            Some(CellKind::Door(_)) => open & (1 << self.door_at[&at]) != 0,
            Some(_) => true,
        }
    }

    fn distances(&self, from: Coord, open: u32) -> Rc<Vec<Option<u32>>> {
        if let Some(d) = self.dist_cache.borrow().get(&(from, open)) {
            return Rc::clone(d);
        }
        let g = self.grid();
        let d = Rc::new(bfs_distances(g.height(), g.width(), g.index(from), |i| {
            self.passable(g.coord_of(i), open)
        }));
        self.dist_cache.borrow_mut().insert((from, open), Rc::clone(&d));
        d
    }

    fn dist(&self, from: Coord, to: Coord, open: u32) -> Option<u32> {
        self.distances(from, open)[self.grid().index(to)]
    }

    /// Keys the agent carries: everything collected minus keys spent on doors.
    fn held(&self, s: State) -> KeyRing {
        let mut ring = *self.grid().agent_keys();
        for (i, &(_, color)) in self.keys.iter().enumerate() {
            if s.remaining & (1 << i) == 0 {
                ring.add(color);
            }
        }
        for (i, &(_, color)) in self.doors.iter().enumerate() {
            if s.open & (1 << i) != 0 {
                ring.take(color);
            }
        }
        ring
    }

    /// Minimal-step human route from `start` to each goal gem, opening doors
    /// with `keys`. Gems reached through the same doors are grouped.
    fn human_routes(&self, start: Coord, keys: KeyRing, open: u32) -> Vec<HumanRoute> {
        let g = self.grid();
        let mut parent: HashMap<HumanNode, Option<(HumanNode, Option<usize>)>> = HashMap::new();
        let mut queue = VecDeque::new();
        parent.insert((start, 0), None);
        queue.push_back((start, 0u32));
        let mut reached: BTreeMap<Coord, (Coord, u32)> = BTreeMap::new();
        while let Some((pos, hmask)) = queue.pop_front() {
            if self.problem.goals.contains(&pos) && !reached.contains_key(&pos) {
                reached.insert(pos, (pos, hmask));
            }
            for n in g.neighbors(pos) {
                let (next_mask, opened) = match g.terrain(n) {
                    None | Some(CellKind::Wall) => continue,
                    Some(CellKind::Door(color)) => {
                        let d = self.door_at[&n];
                        let bit = 1 << d;
                        if (open | hmask) & bit != 0 {
                            (hmask, None)
                        } else if self.spare(keys, hmask, color) {
                            (hmask | bit, Some(d))
                        } else {
                            continue;
                        }
                    }
                    Some(_) => (hmask, None),
                };
                let key = (n, next_mask);
                if let std::collections::hash_map::Entry::Vacant(e) = parent.entry(key) {
                    e.insert(Some(((pos, hmask), opened)));
                    queue.push_back(key);
                }
            }
        }
        let mut groups: BTreeMap<Vec<usize>, Vec<Coord>> = BTreeMap::new();
        for (gem, end) in reached {
            let mut seq = Vec::new();
            let mut cur = end;
            while let Some(Some((prev, opened))) = parent.get(&cur) {
                if let Some(d) = opened {
                    seq.push(*d);
                }
                cur = *prev;
            }
            seq.reverse();
            groups.entry(seq).or_default().push(gem);
        }
        groups.into_iter().collect()
    }

    fn spare(&self, keys: KeyRing, hmask: u32, color: Color) -> bool {
        let used = self
            .doors
            .iter()
            .enumerate()
            .filter(|&(i, &(_, c))| c == color && hmask & (1 << i) != 0)
            .count();
        keys.count(color) > used
    }

    fn human_can_reach(&self, to: Coord, open: u32) -> bool {
        self.dist(self.grid().human_pos(), to, open).is_some()
    }

    /// Candidate next events with their agent step cost.
    fn events(&self, s: State) -> Vec<(Event, u32)> {
        let g = self.grid();
        let mut out = vec![(Event::Finish, 0)];
        let dist = self.distances(s.pos, s.open);
        for (i, &(at, _)) in self.keys.iter().enumerate() {
            if s.remaining & (1 << i) != 0 {
                if let Some(d) = dist[g.index(at)] {
                    out.push((Event::Collect(i), d));
                }
            }
        }
        let held = self.held(s);
        if self.rules.unlock {
            for (i, &(at, color)) in self.doors.iter().enumerate() {
                if s.open & (1 << i) != 0 || held.count(color) == 0 {
                    continue;
                }
                for a in g.neighbors(at) {
                    if a == g.human_pos() || !self.passable(a, s.open) {
                        continue;
                    }
                    if let Some(d) = dist[g.index(a)] {
                        out.push((Event::Unlock { door: i, from: a }, d));
                    }
                }
            }
        }
        if self.rules.pass && !held.is_empty() {
            for &h in &self.problem.handoffs {
                if !g.in_bounds(h) || !self.human_can_reach(h, s.open) {
                    continue;
                }
                for a in g.neighbors(h) {
                    if !self.passable(a, s.open) {
                        continue;
                    }
                    if let Some(d) = dist[g.index(a)] {
                        out.push((Event::Pass { to: h, from: a }, d));
                    }
                }
            }
        }
        out
    }

    fn apply(&self, s: State, e: Event) -> State {
        match e {
            Event::Collect(i) => State {
                pos: self.keys[i].0,
                remaining: s.remaining & !(1 << i),
                open: s.open,
            },
            Event::Unlock { door, from } => State {
                pos: from,
                remaining: s.remaining,
                open: s.open | (1 << door),
            },
            Event::Pass { from, .. } => State { pos: from, ..s },
            Event::Finish => s,
        }
    }

    fn terminal_routes(&self, s: State, e: Event) -> Vec<HumanRoute> {
        let g = self.grid();
        match e {
            Event::Pass { to, .. } => {
                let keys = self.held(s).union(g.human_keys());
                self.human_routes(to, keys, s.open)
            }
            Event::Finish => self.human_routes(g.human_pos(), *g.human_keys(), s.open),
            _ => Vec::new(),
        }
    }

    fn is_terminal(e: Event) -> bool {
        matches!(e, Event::Pass { .. } | Event::Finish)
    }

    /// Minimal agent steps to finish from `s`.
    fn best(&self, s: State) -> Option<u32> {
        if let Some(&v) = self.best.borrow().get(&s) {
            return v;
        }
        let mut best: Option<u32> = None;
        for (e, leg) in self.events(s) {
            let rest = if Self::is_terminal(e) {
                (!self.terminal_routes(s, e).is_empty()).then_some(0)
            } else {
                self.best(self.apply(s, e))
            };
            if let Some(r) = rest {
                let total = leg + r;
                if best.is_none_or(|b| total < b) {
                    best = Some(total);
                }
            }
        }
        self.best.borrow_mut().insert(s, best);
        best
    }

    /// Every event sequence (ending in a terminal event) that achieves
    /// `best(s)`.
    fn optimal_paths(&self, s: State) -> Vec<Vec<(State, Event, u32)>> {
        let Some(target) = self.best(s) else {
            return Vec::new();
        };
        let mut out = Vec::new();
        for (e, leg) in self.events(s) {
            if Self::is_terminal(e) {
                if leg == target && !self.terminal_routes(s, e).is_empty() {
                    out.push(vec![(s, e, leg)]);
                }
                continue;
            }
            let next = self.apply(s, e);
            if self.best(next).is_some_and(|r| leg + r == target) {
                for mut tail in self.optimal_paths(next) {
                    tail.insert(0, (s, e, leg));
                    out.push(tail);
                }
            }
        }
        out
    }

    fn run(&self) -> Result<GroundTruth, PlanError> {
        let g = self.grid();
        let start = State {
            pos: g.agent_pos(),
            remaining: (1u32 << self.keys.len()) - 1,
            open: 0,
        };
        let cost = self.best(start).ok_or(PlanError::GoalUnreachable)?;
        let mut ranked: Vec<((usize, Vec<u32>), ActionSequence)> = Vec::new();
        let mut seen = HashSet::new();
        for path in self.optimal_paths(start) {
            let legs: Vec<u32> = path.iter().map(|p| p.2).collect();
            let &(last_state, last_event, _) = path.last().expect("paths are non-empty");
            for route in self.terminal_routes(last_state, last_event) {
                let plan = self.build(&path, &route);
                if seen.insert(plan.clone()) {
                    ranked.push(((plan.atomic().len(), legs.clone()), plan));
                }
            }
        }
        let best_rank = ranked
            .iter()
            .map(|(r, _)| r.clone())
            .min()
            .ok_or(PlanError::GoalUnreachable)?;
        let optimal_plans = ranked
            .into_iter()
            .filter(|(r, _)| *r == best_rank)
            .map(|(_, p)| p)
            .collect();
        Ok(GroundTruth {
            optimal_plans,
            optimal_agent_steps: cost as usize,
            goal_gems: self.problem.goals.clone(),
            handoff_coords: self.problem.handoffs.clone(),
        })
    }

    fn build(&self, path: &[(State, Event, u32)], route: &HumanRoute) -> ActionSequence {
        let mut steps = Vec::new();
        let mut collected: Vec<Color> = self.grid().agent_keys().colors();
        let mut agent_doors: Vec<DoorRef> = Vec::new();
        let flush = |steps: &mut Vec<ActionStep>, doors: &mut Vec<DoorRef>| {
            if !doors.is_empty() {
                steps.push(ActionStep::unlock(Actor::Agent, std::mem::take(doors)));
            }
        };
        for &(_, e, _) in path {
            match e {
                Event::Collect(i) => {
                    flush(&mut steps, &mut agent_doors);
                    let (at, color) = self.keys[i];
                    collected.push(color);
                    steps.push(ActionStep::collect(Actor::Agent, color, at));
                }
                Event::Unlock { door, .. } => {
                    let (at, color) = self.doors[door];
                    if let Some(p) = collected.iter().position(|&c| c == color) {
                        collected.remove(p);
                    }
                    agent_doors.push(DoorRef::new(color, at));
                }
                Event::Pass { to, .. } => {
                    flush(&mut steps, &mut agent_doors);
                    steps.push(ActionStep::pass(collected.clone(), vec![to]));
                }
                Event::Finish => flush(&mut steps, &mut agent_doors),
            }
        }
        let (doors, gems) = route;
        if !doors.is_empty() {
            let refs = doors
                .iter()
                .map(|&d| DoorRef::new(self.doors[d].1, self.doors[d].0))
                .collect();
            steps.push(ActionStep::unlock(Actor::Human, refs));
        }
        steps.push(ActionStep::retrieve(gems.clone()));
        ActionSequence::new(steps)
    }
}
