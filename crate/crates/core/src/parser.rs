//! Completion parsing: Type / Response / Actions sections and the numbered
//! action list.
//!
//! Parsing never fails. Lines that cannot be read as actions are reported as
//! warnings and counted in `invalid_lines`, which scoring treats as incorrect
//! actions.

use std::sync::LazyLock;

use regex::Regex;
use serde::{Deserialize, Serialize};

use crate::grid::{Color, Coord};
use crate::planner::{ActionSequence, ActionStep, Actor, DoorRef};
use crate::scenario::InstructionType;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum TypeVerdict {
    Clear,
    Unclear,
    Absent,
}

impl TypeVerdict {
    pub fn as_type(self) -> Option<InstructionType> {
        match self {
            TypeVerdict::Clear => Some(InstructionType::Clear),
            TypeVerdict::Unclear => Some(InstructionType::Unclear),
            TypeVerdict::Absent => None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(tag = "kind", content = "line")]
pub enum ParseWarning {
    NoSections,
    NoActions,
    UnknownVerb(String),
    NoCoordinate(String),
    UnknownColor(String),
    DroppedLine(String),
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ParsedResponse {
    pub type_verdict: TypeVerdict,
    pub type_rationale: String,
    pub response_text: String,
    pub actions: ActionSequence,
    /// Action lines that could not be read.
    pub invalid_lines: usize,
    pub parse_warnings: Vec<ParseWarning>,
}

impl ParsedResponse {
    fn empty() -> Self {
        ParsedResponse {
            type_verdict: TypeVerdict::Absent,
            type_rationale: String::new(),
            response_text: String::new(),
            actions: ActionSequence::default(),
            invalid_lines: 0,
            parse_warnings: Vec::new(),
        }
    }
}

/// Why a single action line was rejected.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum LineError {
    UnknownVerb,
    NoCoordinate,
    UnknownColor,
}

impl LineError {
    fn warning(&self, line: &str) -> ParseWarning {
        let line = line.to_string();
        match self {
            LineError::UnknownVerb => ParseWarning::UnknownVerb(line),
            LineError::NoCoordinate => ParseWarning::NoCoordinate(line),
            LineError::UnknownColor => ParseWarning::UnknownColor(line),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum Section {
    Type,
    Response,
    Actions,
    Ignored,
}

static HEADER: LazyLock<Regex> = LazyLock::new(|| {
    Regex::new(
        r"(?i)^[\s>#*_`]*(instruction\s+type|type|response|optimal\s+actions|actions?|human\s+actions?|instruction)[\s*_]*:[\s*_]*",
    )
    .expect("header regex")
});
static COORD: LazyLock<Regex> =
    LazyLock::new(|| Regex::new(r"\(\s*(\d+)\s*,\s*(\d+)\s*\)").expect("coord regex"));
static ENUM: LazyLock<Regex> = LazyLock::new(|| Regex::new(r"(?:^|\s)(\d+)\s*[).]\s+").expect("enum regex"));
static BULLET: LazyLock<Regex> = LazyLock::new(|| Regex::new(r"^\s*(?:[-*•]|\d+\s*[).])\s*").expect("bullet regex"));
static KEY: LazyLock<Regex> = LazyLock::new(|| {
    Regex::new(r"(?i)(?:\b(one|two|three|four|five|six|seven|eight|\d+)\s+)?\b(red|yellow|blue)[\s_\\]*(key)(s)?\b")
        .expect("key regex")
});
static DOOR: LazyLock<Regex> =
    LazyLock::new(|| Regex::new(r"(?i)\b(red|yellow|blue)[\s_\\]*(door)(s)?\b").expect("door regex"));

fn section_of(name: &str) -> Section {
    let lower = name.to_lowercase();
    let lower = lower.split_whitespace().collect::<Vec<_>>().join(" ");
    match lower.as_str() {
        "type" | "instruction type" => Section::Type,
        "response" => Section::Response,
        "actions" | "action" | "optimal actions" => Section::Actions,
        _ => Section::Ignored,
    }
}

fn is_fence(line: &str) -> bool {
    let t = line.trim();
    !t.is_empty() && t.chars().all(|c| c == '`' || c == '\'' || c == '"')
}

/// Splits text into sections by header lines.
fn sections(text: &str) -> Vec<(Section, String)> {
    let mut out: Vec<(Section, String)> = Vec::new();
    for line in text.lines() {
        if is_fence(line) {
            continue;
        }
        if let Some(m) = HEADER.captures(line) {
            let whole = m.get(0).expect("match");
            out.push((section_of(&m[1]), line[whole.end()..].to_string()));
        } else if let Some((_, body)) = out.last_mut() {
            body.push('\n');
            body.push_str(line);
        }
    }
    out
}

pub fn parse_completion(text: &str) -> ParsedResponse {
    let mut parsed = ParsedResponse::empty();
    if text.trim().is_empty() {
        parsed.parse_warnings.push(ParseWarning::NoSections);
        return parsed;
    }
    let secs = sections(text);
    if secs.is_empty() {
        parsed.parse_warnings.push(ParseWarning::NoSections);
        parsed.response_text = text.trim().to_string();
        return parsed;
    }
    let mut saw_actions = false;
    for (section, body) in secs {
        match section {
            Section::Type => {
                let (verdict, rationale) = parse_type(&body);
                if parsed.type_verdict == TypeVerdict::Absent {
                    parsed.type_verdict = verdict;
                    parsed.type_rationale = rationale;
                }
            }
            Section::Response => {
                if parsed.response_text.is_empty() {
                    parsed.response_text = clean_markup(body.trim());
                }
            }
            Section::Actions => {
                saw_actions = true;
                let (steps, invalid, warnings) = parse_action_block(&body);
                parsed.actions.steps.extend(steps);
                parsed.invalid_lines += invalid;
                parsed.parse_warnings.extend(warnings);
            }
            Section::Ignored => {}
        }
    }
    if !saw_actions || (parsed.actions.is_empty() && parsed.invalid_lines == 0) {
        parsed.parse_warnings.push(ParseWarning::NoActions);
    }
    parsed
}

fn clean_markup(s: &str) -> String {
    s.replace("**", "").replace("\\_", "_")
}

fn parse_type(body: &str) -> (TypeVerdict, String) {
    let text = clean_markup(body.trim());
    let first: String = text
        .trim_start_matches(|c: char| !c.is_alphabetic())
        .chars()
        .take_while(|c| c.is_alphabetic())
        .collect();
    let verdict = match first.to_lowercase().as_str() {
        "clear" => TypeVerdict::Clear,
        "unclear" => TypeVerdict::Unclear,
        _ => return (TypeVerdict::Absent, text),
    };
    let start = text.find(&first).unwrap_or(0) + first.len();
    let rationale = text[start..]
        .trim_start_matches(|c: char| c == '.' || c == ':' || c == ',' || c == '*' || c.is_whitespace())
        .to_string();
    (verdict, rationale)
}

fn coord_spans(s: &str) -> Vec<(usize, usize)> {
    COORD.find_iter(s).map(|m| (m.start(), m.end())).collect()
}

/// Item boundaries from `N)` markers outside coordinates, so one line can
/// hold several enumerated actions.
fn split_enumerated(line: &str) -> Vec<String> {
    let spans = coord_spans(line);
    let starts: Vec<usize> = ENUM
        .captures_iter(line)
        .filter_map(|c| c.get(1))
        .map(|m| m.start())
        .filter(|&p| !spans.iter().any(|&(a, b)| p >= a && p < b))
        .collect();
    if starts.len() <= 1 {
        return vec![line.to_string()];
    }
    let mut out = Vec::new();
    if !line[..starts[0]].trim().is_empty() {
        out.push(line[..starts[0]].to_string());
    }
    for (i, &s) in starts.iter().enumerate() {
        let e = starts.get(i + 1).copied().unwrap_or(line.len());
        out.push(line[s..e].to_string());
    }
    out
}

fn starts_with_verb(s: &str) -> bool {
    let t = strip_prefix(s);
    verb_of(&t).is_some()
}

fn strip_prefix(line: &str) -> String {
    let no_md = clean_markup(line);
    BULLET.replace(no_md.trim(), "").trim().to_string()
}

fn verb_of(t: &str) -> Option<(&'static str, usize)> {
    let word: String = t.chars().take_while(|c| c.is_ascii_alphabetic()).collect();
    let lower = word.to_lowercase();
    let verb = ["collect", "pass", "unlock", "retrieve"]
        .into_iter()
        .find(|v| lower == *v || lower == format!("{v}s") || lower == format!("{v}es"))?;
    Some((verb, word.len()))
}

/// Parses the body of an Actions section. Returns the steps, the number of
/// rejected action lines, and warnings.
fn parse_action_block(body: &str) -> (Vec<ActionStep>, usize, Vec<ParseWarning>) {
    let mut items: Vec<String> = Vec::new();
    let mut warnings = Vec::new();
    for raw in body.lines() {
        if raw.trim().is_empty() || is_fence(raw) {
            continue;
        }
        for piece in split_enumerated(raw) {
            let enumerated = BULLET.is_match(&piece) && BULLET.find(&piece).is_some_and(|m| !m.as_str().trim().is_empty());
            let piece_trim = piece.trim().to_string();
            if enumerated || starts_with_verb(&piece_trim) {
                items.push(piece_trim);
                continue;
            }
            match items.last_mut() {
                Some(prev) if !prev.trim_end().ends_with('.') => {
                    prev.push(' ');
                    prev.push_str(&piece_trim);
                }
                _ => warnings.push(ParseWarning::DroppedLine(piece_trim)),
            }
        }
    }
    let mut steps = Vec::new();
    let mut invalid = 0;
    for item in items {
        match parse_action_line(&item) {
            Ok(mut s) => steps.append(&mut s),
            Err(e) => {
                invalid += 1;
                warnings.push(e.warning(&item));
            }
        }
    }
    (steps, invalid, warnings)
}

fn coords_in(s: &str) -> Vec<(usize, Coord)> {
    COORD
        .captures_iter(s)
        .map(|c| {
            let m = c.get(0).expect("match");
            let r = c[1].parse().unwrap_or(usize::MAX);
            let col = c[2].parse().unwrap_or(usize::MAX);
            (m.start(), Coord::new(r, col))
        })
        .collect()
}

fn count_word(w: &str) -> Option<usize> {
    const WORDS: [&str; 8] = ["one", "two", "three", "four", "five", "six", "seven", "eight"];
    let lower = w.to_lowercase();
    WORDS
        .iter()
        .position(|x| *x == lower)
        .map(|i| i + 1)
        .or_else(|| lower.parse().ok())
}

/// Reads one action line, with or without its `N)` prefix. A Collect line
/// naming several keys yields one step per key.
pub fn parse_action_line(line: &str) -> Result<Vec<ActionStep>, LineError> {
    let t = strip_prefix(line);
    let (verb, len) = verb_of(&t).ok_or(LineError::UnknownVerb)?;
    let rest = t[len..].trim_start_matches([':', ' ']).to_string();
    let lower = rest.to_lowercase();
    let human_led = lower.starts_with("human");
    let coords = coords_in(&rest);
    match verb {
        "collect" => {
            let actor = if human_led { Actor::Human } else { Actor::Agent };
            let colors: Vec<Color> = KEY
                .captures_iter(&rest)
                .filter_map(|c| Color::from_name(&c[2]))
                .collect();
            if colors.is_empty() {
                return Err(LineError::UnknownColor);
            }
            if coords.is_empty() {
                return Err(LineError::NoCoordinate);
            }
            let steps = if colors.len() == coords.len() {
                colors
                    .iter()
                    .zip(&coords)
                    .map(|(&c, &(_, at))| ActionStep::collect(actor, c, at))
                    .collect()
            } else {
                coords
                    .iter()
                    .map(|&(_, at)| ActionStep::collect(actor, colors[0], at))
                    .collect()
            };
            Ok(steps)
        }
        "pass" => {
            let actor = if human_led { Actor::Human } else { Actor::Agent };
            let mut keys = Vec::new();
            for c in KEY.captures_iter(&rest) {
                let color = Color::from_name(&c[2]).ok_or(LineError::UnknownColor)?;
                let n = match (c.get(1), c.get(4)) {
                    (Some(w), _) => count_word(w.as_str()).unwrap_or(1),
                    (None, Some(_)) => 2,
                    (None, None) => 1,
                };
                keys.extend(std::iter::repeat_n(color, n));
            }
            if keys.is_empty() {
                return Err(LineError::UnknownColor);
            }
            if coords.is_empty() {
                return Err(LineError::NoCoordinate);
            }
            Ok(vec![ActionStep {
                actor,
                action: crate::planner::Action::Pass {
                    keys,
                    to: coords.into_iter().map(|(_, c)| c).collect(),
                },
            }])
        }
        "unlock" => {
            let actor = if human_led { Actor::Human } else { Actor::Agent };
            let mentions: Vec<(usize, Color, bool)> = DOOR
                .captures_iter(&rest)
                .filter_map(|c| {
                    let start = c.get(0)?.start();
                    Some((start, Color::from_name(&c[1])?, c.get(3).is_some()))
                })
                .collect();
            if mentions.is_empty() {
                return Err(LineError::UnknownColor);
            }
            let mut doors = Vec::new();
            for (i, &(start, color, plural)) in mentions.iter().enumerate() {
                let end = mentions.get(i + 1).map_or(usize::MAX, |m| m.0);
                let at: Vec<Coord> = coords
                    .iter()
                    .filter(|(p, _)| *p > start && *p < end)
                    .map(|&(_, c)| c)
                    .collect();
                if at.is_empty() {
                    return Err(LineError::NoCoordinate);
                }
                if plural {
                    doors.extend(at.into_iter().map(|c| DoorRef::new(color, c)));
                } else {
                    doors.push(DoorRef { color, at });
                }
            }
            Ok(vec![ActionStep::unlock(actor, doors)])
        }
        _ => {
            if coords.is_empty() {
                return Err(LineError::NoCoordinate);
            }
            let actor = if lower.starts_with("agent") || lower.starts_with("i ") {
                Actor::Agent
            } else {
                Actor::Human
            };
            Ok(vec![ActionStep {
                actor,
                action: crate::planner::Action::Retrieve {
                    at: coords.into_iter().map(|(_, c)| c).collect(),
                },
            }])
        }
    }
}

/// Renders a parsed response in the published layout.
pub fn render_response(p: &ParsedResponse) -> String {
    let mut out = String::new();
    match p.type_verdict {
        TypeVerdict::Absent => {}
        v => {
            let label = if v == TypeVerdict::Clear { "Clear" } else { "Unclear" };
            if p.type_rationale.is_empty() {
                out.push_str(&format!("Type: {label}.\n"));
            } else {
                out.push_str(&format!("Type: {label}. {}\n", p.type_rationale));
            }
        }
    }
    out.push_str(&format!("Response: {}\n", p.response_text));
    out.push_str("Actions:\n");
    out.push_str(&p.actions.to_numbered_text());
    out
}
