//! Random planning instances for oracle comparisons and benchmarks.

use rand::seq::SliceRandom;
use rand::Rng;

use super::search::{AssistMode, PlanningProblem};
use crate::grid::{CellKind, Color, Coord, GridState, KeyRing};

/// A square grid with scattered walls, keys and one to three gems; the first
/// gem is the goal. When `split` is set a wall column with one or two doors
/// separates the human from the goal and each door color gets a key.
/// Panics if `size` is below 6.
pub fn random_problem<R: Rng>(rng: &mut R, size: usize, split: bool) -> PlanningProblem {
    assert!(size >= 6, "grid too small: {size}");
    let mut cells = vec![vec![CellKind::Empty; size]; size];
    let wall_col = rng.gen_range(2..size - 2);
    let mut door_colors = Vec::new();
    if split {
        for row in cells.iter_mut() {
            row[wall_col] = CellKind::Wall;
        }
        let mut rows: Vec<usize> = (0..size).collect();
        rows.shuffle(rng);
        for &r in rows.iter().take(rng.gen_range(1..=2)) {
            let color = *Color::ALL.choose(rng).unwrap();
            cells[r][wall_col] = CellKind::Door(color);
            door_colors.push(color);
        }
    }
    let side = |c: usize| c < wall_col;
    let mut free: Vec<(usize, usize)> = (0..size)
        .flat_map(|r| (0..size).map(move |c| (r, c)))
        .filter(|&(_, c)| !split || c != wall_col)
        .collect();
    free.shuffle(rng);
    let mut place = |kind: CellKind, free: &mut Vec<(usize, usize)>, want: Option<bool>| {
        let i = free
            .iter()
            .rposition(|&(_, c)| want.is_none_or(|w| side(c) == w))
            .unwrap();
        let (r, c) = free.remove(i);
        cells[r][c] = kind;
        Coord::new(r, c)
    };
    let human_left = rng.gen_bool(0.5);
    let human = split.then_some(human_left);
    let far = split.then_some(!human_left);
    place(CellKind::Human, &mut free, human);
    place(CellKind::Agent, &mut free, None);
    let goal = place(CellKind::Gem, &mut free, far);
    for _ in 0..rng.gen_range(0..=2) {
        place(CellKind::Gem, &mut free, None);
    }
    for color in door_colors {
        place(CellKind::Key(color), &mut free, None);
    }
    for _ in 0..rng.gen_range(0..=2) {
        place(CellKind::Key(*Color::ALL.choose(rng).unwrap()), &mut free, None);
    }
    if !split {
        for _ in 0..rng.gen_range(0..=3) {
            place(CellKind::Door(*Color::ALL.choose(rng).unwrap()), &mut free, None);
        }
    }
    for _ in 0..rng.gen_range(size / 2..=size * 2) {
        place(CellKind::Wall, &mut free, None);
    }
    let grid = GridState::from_cells(cells).unwrap().with_keys(KeyRing::new(), KeyRing::new());
    let mode = if rng.gen_bool(0.5) {
        AssistMode::PassKeys
    } else {
        AssistMode::UnlockDoors
    };
    PlanningProblem::new(grid, vec![goal], mode)
}
