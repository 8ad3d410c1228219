//! Grid data model for the Doors, Keys and Gems world.
//!
//! Grids are read from and written to the bracketed, single-quoted block
//! format used in the prompts:
//!
//! ```text
//! [['r' '.' 'm']
//!  ['W' 'h' 'g']]
//! ```
//!
//! and to a compact JSON form where each row is a string of symbols.

use std::collections::{BTreeMap, BTreeSet, VecDeque};
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// A cell position, `(row, column)` with `(0, 0)` at the top left.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(from = "(usize, usize)", into = "(usize, usize)")]
pub struct Coord {
    pub row: usize,
    pub col: usize,
}

impl Coord {
    pub const fn new(row: usize, col: usize) -> Self {
        Coord { row, col }
    }

    pub fn manhattan(self, other: Coord) -> usize {
        self.row.abs_diff(other.row) + self.col.abs_diff(other.col)
    }

    pub fn is_adjacent(self, other: Coord) -> bool {
        self.manhattan(other) == 1
    }

    /// Compact form used in action lines: `(3,2)`.
    pub fn compact(self) -> String {
        format!("({},{})", self.row, self.col)
    }
}

impl From<(usize, usize)> for Coord {
    fn from((row, col): (usize, usize)) -> Self {
        Coord { row, col }
    }
}

impl From<Coord> for (usize, usize) {
    fn from(c: Coord) -> Self {
        (c.row, c.col)
    }
}

/// Spaced form used in object listings: `(3, 2)`.
impl fmt::Display for Coord {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({}, {})", self.row, self.col)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Color {
    Red,
    Yellow,
    Blue,
}

impl Color {
    pub const ALL: [Color; 3] = [Color::Red, Color::Yellow, Color::Blue];

    pub fn name(self) -> &'static str {
        match self {
            Color::Red => "red",
            Color::Yellow => "yellow",
            Color::Blue => "blue",
        }
    }

    pub fn title(self) -> &'static str {
        match self {
            Color::Red => "Red",
            Color::Yellow => "Yellow",
            Color::Blue => "Blue",
        }
    }

    pub fn from_name(s: &str) -> Option<Color> {
        match s.to_ascii_lowercase().as_str() {
            "red" => Some(Color::Red),
            "yellow" => Some(Color::Yellow),
            "blue" => Some(Color::Blue),
            _ => None,
        }
    }

    fn index(self) -> usize {
        self as usize
    }
}

impl fmt::Display for Color {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum CellKind {
    Empty,
    Wall,
    Key(Color),
    Door(Color),
    Gem,
    Human,
    Agent,
}

impl CellKind {
    pub fn symbol(self) -> char {
        match self {
            CellKind::Empty => '.',
            CellKind::Wall => 'W',
            CellKind::Key(Color::Red) => 'r',
            CellKind::Key(Color::Yellow) => 'y',
            CellKind::Key(Color::Blue) => 'b',
            CellKind::Door(Color::Red) => 'R',
            CellKind::Door(Color::Yellow) => 'Y',
            CellKind::Door(Color::Blue) => 'B',
            CellKind::Gem => 'g',
            CellKind::Human => 'h',
            CellKind::Agent => 'm',
        }
    }

    pub fn from_symbol(c: char) -> Option<CellKind> {
        Some(match c {
            '.' => CellKind::Empty,
            'W' => CellKind::Wall,
            'r' => CellKind::Key(Color::Red),
            'y' => CellKind::Key(Color::Yellow),
            'b' => CellKind::Key(Color::Blue),
            'R' => CellKind::Door(Color::Red),
            'Y' => CellKind::Door(Color::Yellow),
            'B' => CellKind::Door(Color::Blue),
            'g' => CellKind::Gem,
            'h' => CellKind::Human,
            'm' => CellKind::Agent,
            _ => return None,
        })
    }

    pub fn is_actor(self) -> bool {
        matches!(self, CellKind::Human | CellKind::Agent)
    }
}

/// A multiset of key colors.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct KeyRing([u8; 3]);

impl KeyRing {
    pub fn new() -> Self {
        KeyRing::default()
    }

    pub fn count(&self, color: Color) -> usize {
        self.0[color.index()] as usize
    }

    pub fn add(&mut self, color: Color) {
        self.0[color.index()] += 1;
    }

    /// Removes one key of `color`; returns false if none was held.
    pub fn take(&mut self, color: Color) -> bool {
        let slot = &mut self.0[color.index()];
        if *slot == 0 {
            return false;
        }
        *slot -= 1;
        true
    }

    pub fn len(&self) -> usize {
        self.0.iter().map(|&n| n as usize).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn contains_all(&self, other: &KeyRing) -> bool {
        self.0.iter().zip(other.0.iter()).all(|(a, b)| a >= b)
    }

    pub fn union(mut self, other: &KeyRing) -> KeyRing {
        for i in 0..3 {
            self.0[i] += other.0[i];
        }
        self
    }

    /// Colors in canonical (red, yellow, blue) order, repeated by multiplicity.
    pub fn colors(&self) -> Vec<Color> {
        Color::ALL
            .iter()
            .flat_map(|&c| std::iter::repeat_n(c, self.count(c)))
            .collect()
    }
}

impl FromIterator<Color> for KeyRing {
    fn from_iter<I: IntoIterator<Item = Color>>(iter: I) -> Self {
        let mut ring = KeyRing::new();
        for c in iter {
            ring.add(c);
        }
        ring
    }
}

impl Serialize for KeyRing {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        self.colors().serialize(s)
    }
}

impl<'de> Deserialize<'de> for KeyRing {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        Ok(Vec::<Color>::deserialize(d)?.into_iter().collect())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum GridError {
    #[error("unknown symbol {symbol:?} at {at}")]
    UnknownSymbol { at: Coord, symbol: char },
    #[error("rows have different lengths (row {row} has {found} cells, expected {expected})")]
    RaggedRows {
        row: usize,
        expected: usize,
        found: usize,
    },
    #[error("grid has no {0} cell")]
    MissingActor(&'static str),
    #[error("grid has more than one {actor} cell ({first} and {second})")]
    DuplicateActor {
        actor: &'static str,
        first: Coord,
        second: Coord,
    },
    #[error("malformed grid text: {0}")]
    Malformed(String),
    #[error("grid is empty")]
    Empty,
}

/// Parsing options. Strict by default.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct ParseOptions {
    /// Accept `,` as an empty cell and tolerate a repeated actor glyph. Both
    /// occur in published completed-grid figures. The original glyphs are
    /// kept so that serialization reproduces the input.
    pub lenient: bool,
}

impl ParseOptions {
    pub fn strict() -> Self {
        ParseOptions { lenient: false }
    }

    pub fn lenient() -> Self {
        ParseOptions { lenient: true }
    }
}

/// Immutable snapshot of the gridworld.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct GridState {
    height: usize,
    width: usize,
    cells: Vec<CellKind>,
    agent_pos: Coord,
    human_pos: Coord,
    agent_keys: KeyRing,
    human_keys: KeyRing,
    /// Glyphs accepted in lenient mode that differ from the canonical symbol
    /// of their cell.
    aliases: BTreeMap<Coord, char>,
}

impl GridState {
    /// Builds a grid from rows of cells. Fails unless there is exactly one
    /// agent and one human.
    pub fn from_cells(rows: Vec<Vec<CellKind>>) -> Result<GridState, GridError> {
        Self::assemble(rows, BTreeMap::new(), false)
    }

    fn assemble(
        rows: Vec<Vec<CellKind>>,
        aliases: BTreeMap<Coord, char>,
        tolerate_duplicates: bool,
    ) -> Result<GridState, GridError> {
        let height = rows.len();
        if height == 0 {
            return Err(GridError::Empty);
        }
        let width = rows[0].len();
        if width == 0 {
            return Err(GridError::Empty);
        }
        for (r, row) in rows.iter().enumerate() {
            if row.len() != width {
                return Err(GridError::RaggedRows {
                    row: r,
                    expected: width,
                    found: row.len(),
                });
            }
        }
        let mut agent: Option<Coord> = None;
        let mut human: Option<Coord> = None;
        for (r, row) in rows.iter().enumerate() {
            for (c, &cell) in row.iter().enumerate() {
                let (slot, name) = match cell {
                    CellKind::Agent => (&mut agent, "agent"),
                    CellKind::Human => (&mut human, "human"),
                    _ => continue,
                };
                let here = Coord::new(r, c);
                if let Some(first) = *slot {
                    if !tolerate_duplicates {
                        return Err(GridError::DuplicateActor {
                            actor: name,
                            first,
                            second: here,
                        });
                    }
                }
                // Last occurrence wins when duplicates are tolerated.
                *slot = Some(here);
            }
        }
        let agent_pos = agent.ok_or(GridError::MissingActor("agent"))?;
        let human_pos = human.ok_or(GridError::MissingActor("human"))?;
        Ok(GridState {
            height,
            width,
            cells: rows.into_iter().flatten().collect(),
            agent_pos,
            human_pos,
            agent_keys: KeyRing::new(),
            human_keys: KeyRing::new(),
            aliases,
        })
    }

    /// Parses rows of symbol strings (the JSON encoding).
    pub fn from_rows<S: AsRef<str>>(rows: &[S], opts: ParseOptions) -> Result<GridState, GridError> {
        let mut parsed = Vec::with_capacity(rows.len());
        let mut aliases = BTreeMap::new();
        for (r, row) in rows.iter().enumerate() {
            let mut cells = Vec::new();
            for (c, ch) in row.as_ref().chars().enumerate() {
                cells.push(decode_symbol(ch, Coord::new(r, c), opts, &mut aliases)?);
            }
            parsed.push(cells);
        }
        Self::assemble(parsed, aliases, opts.lenient)
    }

    /// Rows of symbols, the JSON encoding.
    pub fn to_rows(&self) -> Vec<String> {
        (0..self.height)
            .map(|r| (0..self.width).map(|c| self.glyph(Coord::new(r, c))).collect())
            .collect()
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn agent_pos(&self) -> Coord {
        self.agent_pos
    }

    pub fn human_pos(&self) -> Coord {
        self.human_pos
    }

    pub fn agent_keys(&self) -> &KeyRing {
        &self.agent_keys
    }

    pub fn human_keys(&self) -> &KeyRing {
        &self.human_keys
    }

    pub fn with_keys(mut self, agent: KeyRing, human: KeyRing) -> Self {
        self.agent_keys = agent;
        self.human_keys = human;
        self
    }

    pub fn in_bounds(&self, c: Coord) -> bool {
        c.row < self.height && c.col < self.width
    }

    pub fn cell(&self, c: Coord) -> Option<CellKind> {
        self.in_bounds(c).then(|| self.cells[self.index(c)])
    }

    /// What lies under the actors: actor cells read as empty.
    pub fn terrain(&self, c: Coord) -> Option<CellKind> {
        self.cell(c).map(|k| if k.is_actor() { CellKind::Empty } else { k })
    }

    pub fn cells(&self) -> impl Iterator<Item = (Coord, CellKind)> + '_ {
        self.cells
            .iter()
            .enumerate()
            .map(move |(i, &k)| (self.coord_of(i), k))
    }

    pub fn coords_of(&self, kind: CellKind) -> Vec<Coord> {
        self.cells()
            .filter(|&(_, k)| k == kind)
            .map(|(c, _)| c)
            .collect()
    }

    pub fn gems(&self) -> Vec<Coord> {
        self.coords_of(CellKind::Gem)
    }

    pub fn neighbors(&self, c: Coord) -> impl Iterator<Item = Coord> + '_ {
        let (h, w) = (self.height, self.width);
        let deltas: [(isize, isize); 4] = [(-1, 0), (0, -1), (0, 1), (1, 0)];
        deltas.into_iter().filter_map(move |(dr, dc)| {
            let r = c.row.checked_add_signed(dr)?;
            let cc = c.col.checked_add_signed(dc)?;
            (r < h && cc < w).then_some(Coord::new(r, cc))
        })
    }

    /// Returns a copy with the human moved to `to`. The vacated cell becomes
    /// empty; `to` must hold empty terrain.
    pub fn with_human_at(&self, to: Coord) -> GridState {
        let mut next = self.clone();
        next.move_actor(CellKind::Human, to);
        next
    }

    /// Returns a copy with the agent moved to `to`.
    pub fn with_agent_at(&self, to: Coord) -> GridState {
        let mut next = self.clone();
        next.move_actor(CellKind::Agent, to);
        next
    }

    fn move_actor(&mut self, actor: CellKind, to: Coord) {
        let from = match actor {
            CellKind::Agent => self.agent_pos,
            CellKind::Human => self.human_pos,
            _ => unreachable!("not an actor"),
        };
        let fi = self.index(from);
        if self.cells[fi] == actor {
            self.cells[fi] = CellKind::Empty;
        }
        self.aliases.remove(&from);
        let ti = self.index(to);
        self.cells[ti] = actor;
        self.aliases.remove(&to);
        match actor {
            CellKind::Agent => self.agent_pos = to,
            _ => self.human_pos = to,
        }
    }

    /// Replaces a non-actor cell.
    pub fn with_cell(&self, at: Coord, kind: CellKind) -> GridState {
        let mut next = self.clone();
        let i = next.index(at);
        next.cells[i] = kind;
        next.aliases.remove(&at);
        next
    }

    fn glyph(&self, c: Coord) -> char {
        self.aliases
            .get(&c)
            .copied()
            .unwrap_or_else(|| self.cells[self.index(c)].symbol())
    }

    pub(crate) fn index(&self, c: Coord) -> usize {
        c.row * self.width + c.col
    }

    pub(crate) fn coord_of(&self, i: usize) -> Coord {
        Coord::new(i / self.width, i % self.width)
    }
}

impl Serialize for GridState {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        self.to_rows().serialize(s)
    }
}

impl<'de> Deserialize<'de> for GridState {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let rows = Vec::<String>::deserialize(d)?;
        GridState::from_rows(&rows, ParseOptions::strict()).map_err(serde::de::Error::custom)
    }
}

fn decode_symbol(
    ch: char,
    at: Coord,
    opts: ParseOptions,
    aliases: &mut BTreeMap<Coord, char>,
) -> Result<CellKind, GridError> {
    if let Some(kind) = CellKind::from_symbol(ch) {
        return Ok(kind);
    }
    if opts.lenient && ch == ',' {
        aliases.insert(at, ch);
        return Ok(CellKind::Empty);
    }
    Err(GridError::UnknownSymbol { at, symbol: ch })
}

/// Parses the bracketed block format. Commas between quoted symbols and
/// backtick opening quotes are accepted.
pub fn parse_grid(text: &str, opts: ParseOptions) -> Result<GridState, GridError> {
    let mut chars = text.chars().peekable();
    let mut depth = 0usize;
    let mut rows: Vec<Vec<CellKind>> = Vec::new();
    let mut current: Option<Vec<CellKind>> = None;
    let mut aliases = BTreeMap::new();
    let mut closed = false;

    while let Some(ch) = chars.next() {
        match ch {
            c if c.is_whitespace() => {}
            ',' if current.as_ref().is_some() || depth == 1 => {}
            '[' => {
                if closed {
                    return Err(GridError::Malformed("text after closing bracket".into()));
                }
                depth += 1;
                match depth {
                    1 => {}
                    2 => current = Some(Vec::new()),
                    _ => return Err(GridError::Malformed("nesting deeper than two".into())),
                }
            }
            ']' => match depth {
                2 => {
                    rows.push(current.take().unwrap_or_default());
                    depth = 1;
                }
                1 => {
                    depth = 0;
                    closed = true;
                }
                _ => return Err(GridError::Malformed("unbalanced ']'".into())),
            },
            '\'' | '`' | '\u{2018}' => {
                let row = current
                    .as_mut()
                    .ok_or_else(|| GridError::Malformed("symbol outside a row".into()))?;
                let sym = chars
                    .next()
                    .ok_or_else(|| GridError::Malformed("unterminated symbol".into()))?;
                match chars.next() {
                    Some('\'') | Some('\u{2019}') => {}
                    _ => return Err(GridError::Malformed("expected closing quote".into())),
                }
                let at = Coord::new(rows.len(), row.len());
                row.push(decode_symbol(sym, at, opts, &mut aliases)?);
            }
            other => {
                return Err(GridError::Malformed(format!("unexpected character {other:?}")));
            }
        }
    }
    if !closed {
        return Err(GridError::Malformed("missing closing bracket".into()));
    }
    GridState::assemble(rows, aliases, opts.lenient)
}

/// Writes the bracketed block format, one row per line.
pub fn serialize_grid(state: &GridState) -> String {
    let mut out = String::new();
    for r in 0..state.height {
        out.push_str(if r == 0 { "[[" } else { " [" });
        for c in 0..state.width {
            if c > 0 {
                out.push(' ');
            }
            out.push('\'');
            out.push(state.glyph(Coord::new(r, c)));
            out.push('\'');
        }
        out.push(']');
        if r + 1 == state.height {
            out.push(']');
        } else {
            out.push('\n');
        }
    }
    out
}

/// Row-major coordinate lists for every object category.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize)]
pub struct ObjectReport {
    pub agent: Vec<Coord>,
    pub human: Vec<Coord>,
    pub keys: BTreeMap<Color, Vec<Coord>>,
    pub doors: BTreeMap<Color, Vec<Coord>>,
    pub gems: Vec<Coord>,
    pub walls: Vec<Coord>,
    pub empties: Vec<Coord>,
}

impl ObjectReport {
    pub fn key_count(&self, color: Color) -> usize {
        self.keys.get(&color).map_or(0, Vec::len)
    }

    pub fn door_count(&self, color: Color) -> usize {
        self.doors.get(&color).map_or(0, Vec::len)
    }

    pub fn total(&self) -> usize {
        self.agent.len()
            + self.human.len()
            + self.keys.values().map(Vec::len).sum::<usize>()
            + self.doors.values().map(Vec::len).sum::<usize>()
            + self.gems.len()
            + self.walls.len()
            + self.empties.len()
    }

    /// Renders the listing, one category per line. Empty categories are
    /// omitted.
    pub fn render(&self) -> String {
        let mut lines = Vec::new();
        if !self.agent.is_empty() {
            lines.push(format!("My position (Labeled as 'm'): {}", join(&self.agent)));
        }
        if !self.human.is_empty() {
            lines.push(format!("Human (Labeled as 'h'): {}", join(&self.human)));
        }
        for (map, noun) in [(&self.keys, "key"), (&self.doors, "door")] {
            for color in Color::ALL {
                let Some(list) = map.get(&color).filter(|l| !l.is_empty()) else {
                    continue;
                };
                let symbol = if noun == "key" {
                    CellKind::Key(color).symbol()
                } else {
                    CellKind::Door(color).symbol()
                };
                let label = format!("{} {}", color.title(), plural(noun, list.len()));
                lines.push(format!(
                    "{label} (Labeled as '{symbol}'): {} --> Total {label}: {}",
                    join(list),
                    list.len()
                ));
            }
        }
        for (list, noun, symbol) in [
            (&self.gems, "Gem", 'g'),
            (&self.walls, "Wall", 'W'),
            (&self.empties, "Empty space", '.'),
        ] {
            if list.is_empty() {
                continue;
            }
            let label = plural(noun, list.len());
            lines.push(format!(
                "{label} (Labeled as '{symbol}'): {} --> Total {label}: {}",
                join(list),
                list.len()
            ));
        }
        lines.join("\n")
    }
}

fn plural(noun: &str, n: usize) -> String {
    if n == 1 {
        noun.to_string()
    } else {
        format!("{noun}s")
    }
}

fn join(coords: &[Coord]) -> String {
    coords
        .iter()
        .map(ToString::to_string)
        .collect::<Vec<_>>()
        .join(", ")
}

pub fn object_report(state: &GridState) -> ObjectReport {
    let mut report = ObjectReport::default();
    for (at, kind) in state.cells() {
        match kind {
            CellKind::Agent => report.agent.push(at),
            CellKind::Human => report.human.push(at),
            CellKind::Key(c) => report.keys.entry(c).or_default().push(at),
            CellKind::Door(c) => report.doors.entry(c).or_default().push(at),
            CellKind::Gem => report.gems.push(at),
            CellKind::Wall => report.walls.push(at),
            CellKind::Empty => report.empties.push(at),
        }
    }
    report
}

/// Which doors count as open when moving.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct PassabilityPolicy {
    pub all_doors_unlocked: bool,
    pub unlocked: BTreeSet<Coord>,
}

impl PassabilityPolicy {
    pub fn doors_locked() -> Self {
        PassabilityPolicy::default()
    }

    pub fn doors_unlocked() -> Self {
        PassabilityPolicy {
            all_doors_unlocked: true,
            unlocked: BTreeSet::new(),
        }
    }

    pub fn with_unlocked(unlocked: impl IntoIterator<Item = Coord>) -> Self {
        PassabilityPolicy {
            all_doors_unlocked: false,
            unlocked: unlocked.into_iter().collect(),
        }
    }

    pub fn passable(&self, state: &GridState, at: Coord) -> bool {
        match state.terrain(at) {
            None | Some(CellKind::Wall) => false,
            Some(CellKind::Door(_)) => self.all_doors_unlocked || self.unlocked.contains(&at),
            Some(_) => true,
        }
    }
}

/// Breadth-first distances from `from` over cells accepted by `passable`.
/// The start cell is always entered.
pub(crate) fn bfs_distances(
    height: usize,
    width: usize,
    from: usize,
    passable: impl Fn(usize) -> bool,
) -> Vec<Option<u32>> {
    let mut dist = vec![None; height * width];
    let mut queue = VecDeque::new();
    dist[from] = Some(0);
    queue.push_back(from);
    while let Some(i) = queue.pop_front() {
        let d = dist[i].unwrap_or(0);
        let (r, c) = (i / width, i % width);
        let mut visit = |j: usize| {
            if dist[j].is_none() && passable(j) {
                dist[j] = Some(d + 1);
                queue.push_back(j);
            }
        };
        if r > 0 {
            visit(i - width);
        }
        if c > 0 {
            visit(i - 1);
        }
        if c + 1 < width {
            visit(i + 1);
        }
        if r + 1 < height {
            visit(i + width);
        }
    }
    dist
}

/// Four-connected step count between two cells, or `None` when no path
/// exists. Actor cells are passable.
pub fn shortest_path_steps(
    state: &GridState,
    from: Coord,
    to: Coord,
    policy: &PassabilityPolicy,
) -> Option<usize> {
    if !state.in_bounds(from) || !state.in_bounds(to) {
        return None;
    }
    if from == to {
        return Some(0);
    }
    let dist = bfs_distances(state.height, state.width, state.index(from), |i| {
        policy.passable(state, state.coord_of(i))
    });
    dist[state.index(to)].map(|d| d as usize)
}
