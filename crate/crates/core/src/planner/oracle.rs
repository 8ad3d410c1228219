//! Brute-force check on planner cost: Dijkstra over single-cell agent moves
//! in the joint state (agent cell, keys left on the grid, doors opened).
//! Shares no search code with the planner.

use std::cmp::Reverse;
use std::collections::{BinaryHeap, HashSet, VecDeque};

use super::search::{PlanError, PlanningProblem, Rules};
use crate::grid::{CellKind, Color, Coord, GridState, KeyRing};

/// Minimal agent step count for the problem, or `GoalUnreachable`.
pub fn optimal_agent_steps_oracle(problem: &PlanningProblem) -> Result<usize, PlanError> {
    problem.validate()?;
    let oracle = Oracle::new(problem);
    oracle
        .solve(Rules::for_mode(problem.mode))
        .or_else(|| oracle.solve(Rules::ANY))
        .ok_or(PlanError::GoalUnreachable)
}

struct Oracle<'a> {
    p: &'a PlanningProblem,
    keys: Vec<(Coord, Color)>,
    doors: Vec<(Coord, Color)>,
}

impl<'a> Oracle<'a> {
    fn new(p: &'a PlanningProblem) -> Self {
        let keys = p
            .grid
            .cells()
            .filter_map(|(c, k)| match k {
                CellKind::Key(col) => Some((c, col)),
                _ => None,
            })
            .collect();
        let doors = p
            .grid
            .cells()
            .filter_map(|(c, k)| match k {
                CellKind::Door(col) => Some((c, col)),
                _ => None,
            })
            .collect();
        Oracle { p, keys, doors }
    }

    fn grid(&self) -> &GridState {
        &self.p.grid
    }

    fn door_index(&self, at: Coord) -> Option<usize> {
        self.doors.iter().position(|&(c, _)| c == at)
    }

    fn open_cell(&self, at: Coord, open: &HashSet<usize>) -> bool {
        match self.grid().terrain(at) {
            None | Some(CellKind::Wall) => false,
            Some(CellKind::Door(_)) => self.door_index(at).is_some_and(|i| open.contains(&i)),
            Some(_) => true,
        }
    }

    fn mask_set(mask: u32) -> HashSet<usize> {
        (0..32).filter(|i| mask & (1 << i) != 0).collect()
    }

    /// Cells reachable from `from` through open terrain.
    fn region(&self, from: Coord, open: &HashSet<usize>) -> HashSet<Coord> {
        let mut seen = HashSet::from([from]);
        let mut queue = VecDeque::from([from]);
        while let Some(c) = queue.pop_front() {
            for n in self.grid().neighbors(c) {
                if self.open_cell(n, open) && seen.insert(n) {
                    queue.push_back(n);
                }
            }
        }
        seen
    }

    /// Whether the human, starting at `from` with `keys`, can reach a goal.
    /// Explores sets of doors the human opens; a door can be opened once it
    /// borders the current region and a matching key is unspent.
    fn human_succeeds(&self, from: Coord, keys: KeyRing, agent_open: u32) -> bool {
        let mut seen = HashSet::from([0u32]);
        let mut stack = vec![0u32];
        while let Some(hmask) = stack.pop() {
            let open = Self::mask_set(agent_open | hmask);
            let region = self.region(from, &open);
            if self.p.goals.iter().any(|g| region.contains(g)) {
                return true;
            }
            for (i, &(at, color)) in self.doors.iter().enumerate() {
                if open.contains(&i) {
                    continue;
                }
                let spent = self
                    .doors
                    .iter()
                    .enumerate()
                    .filter(|&(j, &(_, c))| c == color && hmask & (1 << j) != 0)
                    .count();
                if keys.count(color) <= spent {
                    continue;
                }
                if !self.grid().neighbors(at).any(|n| region.contains(&n)) {
                    continue;
                }
                let next = hmask | (1 << i);
                if seen.insert(next) {
                    stack.push(next);
                }
            }
        }
        false
    }

    fn held(&self, remaining: u32, open: u32) -> KeyRing {
        let mut ring = *self.grid().agent_keys();
        for (i, &(_, c)) in self.keys.iter().enumerate() {
            if remaining & (1 << i) == 0 {
                ring.add(c);
            }
        }
        for (i, &(_, c)) in self.doors.iter().enumerate() {
            if open & (1 << i) != 0 {
                ring.take(c);
            }
        }
        ring
    }

    fn solve(&self, rules: Rules) -> Option<usize> {
        let g = self.grid();
        let human = g.human_pos();
        let all_keys = (1u32 << self.keys.len()) - 1;
        let start = (g.agent_pos(), all_keys, 0u32);
        let mut heap = BinaryHeap::from([Reverse((0usize, start))]);
        let mut done = HashSet::new();
        while let Some(Reverse((cost, state))) = heap.pop() {
            if !done.insert(state) {
                continue;
            }
            let (pos, remaining, open) = state;
            let open_set = Self::mask_set(open);
            let held = self.held(remaining, open);

            if self.human_succeeds(human, *g.human_keys(), open) {
                return Some(cost);
            }
            if rules.pass && !held.is_empty() {
                for &h in &self.p.handoffs {
                    let adjacent = pos.is_adjacent(h);
                    if adjacent
                        && self.region(human, &open_set).contains(&h)
                        && self.human_succeeds(h, held.union(g.human_keys()), open)
                    {
                        return Some(cost);
                    }
                }
            }

            let mut push = |c: usize, s: (Coord, u32, u32)| {
                if !done.contains(&s) {
                    heap.push(Reverse((c, s)));
                }
            };
            // Picking up the key underfoot and opening a neighboring door are
            // free; only moves cost a step.
            if let Some(i) = self.keys.iter().position(|&(c, _)| c == pos) {
                if remaining & (1 << i) != 0 {
                    push(cost, (pos, remaining & !(1 << i), open));
                }
            }
            if rules.unlock && pos != human {
                for n in g.neighbors(pos) {
                    if let Some(i) = self.door_index(n) {
                        if open & (1 << i) == 0 && held.count(self.doors[i].1) > 0 {
                            push(cost, (pos, remaining, open | (1 << i)));
                        }
                    }
                }
            }
            for n in g.neighbors(pos) {
                if self.open_cell(n, &open_set) {
                    push(cost + 1, (n, remaining, open));
                }
            }
        }
        None
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::{parse_grid, ParseOptions};
    use crate::planner::AssistMode;

    fn c(r: usize, col: usize) -> Coord {
        Coord::new(r, col)
    }

    #[test]
    fn adjacent_agent_with_keys_costs_nothing() {
        let g = parse_grid(
            "[['h' 'm' '.']
 ['R' 'W' '.']
 ['g' 'W' '.']]",
            ParseOptions::strict(),
        )
        .unwrap();
        let ring: KeyRing = [Color::Red].into_iter().collect();
        let g = g.with_keys(ring, KeyRing::new());
        let p = PlanningProblem::new(g, vec![c(2, 0)], AssistMode::PassKeys);
        assert_eq!(optimal_agent_steps_oracle(&p), Ok(0));
    }
}
