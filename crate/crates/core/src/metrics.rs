//! Scoring of one response against the ground truth, and aggregation into
//! report tables.
//!
//! Steps are compared in atomic form (multi-door unlocks expanded). For a
//! scope (agent steps only, or the whole sequence):
//!
//! * `A_total` = steps of the best ground-truth plan P* + generated steps not
//!   matched to P* + unreadable action lines.
//! * feasibility = feasible generated steps / `A_total`.
//! * optimality = feasible generated steps matched to P* / `A_total`.
//!
//! P* is the ground-truth plan with the most feasible matches.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::sync::LazyLock;

use regex::Regex;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::grid::{CellKind, Coord, GridState};
use crate::parser::{ParsedResponse, TypeVerdict};
use crate::planner::{simulate_sequence, Action, ActionStep, Actor, GroundTruth, WorldState};
use crate::scenario::{InstructionType, Scenario};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Metric {
    IntentAccuracy,
    ActionFeasibility,
    ActionOptimality,
    PlanFeasibility,
    PlanOptimality,
    InstructionAccuracy,
}

impl Metric {
    pub const ALL: [Metric; 6] = [
        Metric::IntentAccuracy,
        Metric::ActionFeasibility,
        Metric::ActionOptimality,
        Metric::PlanFeasibility,
        Metric::PlanOptimality,
        Metric::InstructionAccuracy,
    ];

    /// Column header used in report tables.
    pub fn header(self) -> &'static str {
        match self {
            Metric::IntentAccuracy => "Intent Acc.",
            Metric::ActionFeasibility => "Act. Feas.",
            Metric::ActionOptimality => "Act. Opt.",
            Metric::PlanFeasibility => "Plan Feas.",
            Metric::PlanOptimality => "Plan Opt.",
            Metric::InstructionAccuracy => "Instr. Acc.",
        }
    }

    pub fn key(self) -> &'static str {
        match self {
            Metric::IntentAccuracy => "intent_accuracy",
            Metric::ActionFeasibility => "action_feasibility",
            Metric::ActionOptimality => "action_optimality",
            Metric::PlanFeasibility => "plan_feasibility",
            Metric::PlanOptimality => "plan_optimality",
            Metric::InstructionAccuracy => "instruction_accuracy",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScoreRecord {
    pub scenario_id: String,
    /// Model and prompt variant (`gpt-4o/fscot`) or a participant id.
    pub subject: String,
    pub human: bool,
    pub intent_accuracy: f64,
    pub action_feasibility: f64,
    pub action_optimality: f64,
    pub plan_feasibility: f64,
    pub plan_optimality: f64,
    /// Not scored for participants.
    pub instruction_accuracy: Option<f64>,
    pub predicted_type: TypeVerdict,
    pub expected_type: InstructionType,
}

impl ScoreRecord {
    pub fn get(&self, m: Metric) -> Option<f64> {
        match m {
            Metric::IntentAccuracy => Some(self.intent_accuracy),
            Metric::ActionFeasibility => Some(self.action_feasibility),
            Metric::ActionOptimality => Some(self.action_optimality),
            Metric::PlanFeasibility => Some(self.plan_feasibility),
            Metric::PlanOptimality => Some(self.plan_optimality),
            Metric::InstructionAccuracy => self.instruction_accuracy,
        }
    }

    fn set(&mut self, m: Metric, v: f64) {
        match m {
            Metric::IntentAccuracy => self.intent_accuracy = v,
            Metric::ActionFeasibility => self.action_feasibility = v,
            Metric::ActionOptimality => self.action_optimality = v,
            Metric::PlanFeasibility => self.plan_feasibility = v,
            Metric::PlanOptimality => self.plan_optimality = v,
            Metric::InstructionAccuracy => {
                if !self.human {
                    self.instruction_accuracy = Some(v)
                }
            }
        }
    }
}

#[derive(Debug, Error, PartialEq)]
pub enum MetricsError {
    #[error("no score records to aggregate")]
    EmptyInput,
    #[error("override for {scenario_id}: {metric} = {value} is outside [0, 1]")]
    OverrideOutOfRange {
        scenario_id: String,
        metric: &'static str,
        value: f64,
    },
}

/// Who produced a response.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Subject {
    pub id: String,
    pub human: bool,
}

impl Subject {
    pub fn model(id: impl Into<String>) -> Self {
        Subject {
            id: id.into(),
            human: false,
        }
    }

    pub fn participant(id: impl Into<String>) -> Self {
        Subject {
            id: id.into(),
            human: true,
        }
    }
}

/// Whether a generated atomic step counts as the ground-truth step `gt`.
///
/// Collect must be identical. Unlock must name the same color and door
/// cells. Pass needs the same keys, and its recipient cells must include a
/// ground-truth cell and stay inside the accepted handoff cells. Retrieve
/// works the same way against the goal gems.
pub fn steps_match(gen: &ActionStep, gt: &ActionStep, handoffs: &[Coord], goals: &[Coord]) -> bool {
    if gen.actor != gt.actor {
        return false;
    }
    match (&gen.action, &gt.action) {
        (Action::Collect { .. }, Action::Collect { .. }) => gen == gt,
        (Action::Unlock { doors: a }, Action::Unlock { doors: b }) => {
            a.len() == b.len()
                && a.iter().zip(b).all(|(x, y)| x.color == y.color && same_set(&x.at, &y.at))
        }
        (Action::Pass { keys: ka, to: ta }, Action::Pass { keys: kb, to: tb }) => {
            same_multiset(ka, kb) && overlaps_within(ta, tb, handoffs)
        }
        (Action::Retrieve { at: a }, Action::Retrieve { at: b }) => overlaps_within(a, b, goals),
        _ => false,
    }
}

fn same_set(a: &[Coord], b: &[Coord]) -> bool {
    a.iter().all(|c| b.contains(c)) && b.iter().all(|c| a.contains(c))
}

fn same_multiset<T: Ord + Clone>(a: &[T], b: &[T]) -> bool {
    let mut a = a.to_vec();
    let mut b = b.to_vec();
    a.sort();
    b.sort();
    a == b
}

/// `gen` shares a cell with `gt` and names nothing outside `gt ∪ extra`.
fn overlaps_within(gen: &[Coord], gt: &[Coord], extra: &[Coord]) -> bool {
    gen.iter().any(|c| gt.contains(c)) && gen.iter().all(|c| gt.contains(c) || extra.contains(c))
}

/// Maximum one-to-one matching between `gen` (only entries with
/// `eligible[i]`) and `gt`, by augmenting paths.
fn max_matching(
    gen: &[ActionStep],
    eligible: &[bool],
    gt: &[ActionStep],
    handoffs: &[Coord],
    goals: &[Coord],
) -> usize {
    let adj: Vec<Vec<usize>> = gen
        .iter()
        .zip(eligible)
        .map(|(g, &ok)| {
            if !ok {
                return Vec::new();
            }
            (0..gt.len())
                .filter(|&j| steps_match(g, &gt[j], handoffs, goals))
                .collect()
        })
        .collect();
    let mut owner: Vec<Option<usize>> = vec![None; gt.len()];

    fn augment(i: usize, adj: &[Vec<usize>], seen: &mut [bool], owner: &mut [Option<usize>]) -> bool {
        for &j in &adj[i] {
            if seen[j] {
                continue;
            }
            seen[j] = true;
            if owner[j].is_none_or(|k| augment(k, adj, seen, owner)) {
                owner[j] = Some(i);
                return true;
            }
        }
        false
    }

    (0..gen.len())
        .filter(|&i| {
            let mut seen = vec![false; gt.len()];
            augment(i, &adj, &mut seen, &mut owner)
        })
        .count()
}

/// Counts behind the feasibility and optimality ratios of one scope.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize)]
pub struct ScopeCounts {
    pub feasible: usize,
    pub matched: usize,
    pub total: usize,
    /// Generated steps equal P* one-to-one with nothing extra.
    pub exact: bool,
}

impl ScopeCounts {
    pub fn feasibility(&self) -> f64 {
        ratio(self.feasible, self.total)
    }

    pub fn optimality(&self) -> f64 {
        ratio(self.matched, self.total)
    }
}

fn ratio(n: usize, d: usize) -> f64 {
    if d == 0 {
        0.0
    } else {
        n as f64 / d as f64
    }
}

fn dedup(steps: Vec<(ActionStep, bool)>) -> Vec<(ActionStep, bool)> {
    let mut out: Vec<(ActionStep, bool)> = Vec::with_capacity(steps.len());
    for (s, ok) in steps {
        if !out.iter().any(|(t, _)| *t == s) {
            out.push((s, ok));
        }
    }
    out
}

/// Scores generated steps against every ground-truth plan for one scope.
pub fn scope_counts(
    world: &WorldState,
    generated: &[ActionStep],
    invalid_lines: usize,
    plans: &[Vec<ActionStep>],
    handoffs: &[Coord],
    goals: &[Coord],
) -> ScopeCounts {
    let (_, outcomes) = simulate_sequence(world, generated);
    let with_flags: Vec<(ActionStep, bool)> = generated
        .iter()
        .cloned()
        .zip(outcomes.iter().map(Result::is_ok))
        .collect();
    let unique = dedup(with_flags);
    let steps: Vec<ActionStep> = unique.iter().map(|(s, _)| s.clone()).collect();
    let feasible_flags: Vec<bool> = unique.iter().map(|&(_, ok)| ok).collect();
    let feasible = feasible_flags.iter().filter(|&&b| b).count();

    let mut best: Option<ScopeCounts> = None;
    for plan in plans {
        let matched = max_matching(&steps, &feasible_flags, plan, handoffs, goals);
        let total = plan.len() + (steps.len() - matched) + invalid_lines;
        let counts = ScopeCounts {
            feasible,
            matched,
            total,
            exact: matched == plan.len() && matched == steps.len() && invalid_lines == 0,
        };
        if best.is_none_or(|b| counts.matched > b.matched) {
            best = Some(counts);
        }
    }
    best.unwrap_or(ScopeCounts {
        feasible,
        matched: 0,
        total: steps.len() + invalid_lines,
        exact: false,
    })
}

static COORD: LazyLock<Regex> =
    LazyLock::new(|| Regex::new(r"\(\s*(\d+)\s*,\s*(\d+)\s*\)").expect("coord regex"));

/// Gem targeted by the response: Retrieve cells, else the first gem cell
/// mentioned in the prose.
pub fn intended_gems(grid: &GridState, r: &ParsedResponse) -> Vec<Coord> {
    let retrieved: Vec<Coord> = r
        .actions
        .steps
        .iter()
        .filter_map(|s| match &s.action {
            Action::Retrieve { at } => Some(at.clone()),
            _ => None,
        })
        .flatten()
        .collect();
    if !retrieved.is_empty() {
        return retrieved;
    }
    COORD
        .captures_iter(&r.response_text)
        .filter_map(|c| Some(Coord::new(c[1].parse().ok()?, c[2].parse().ok()?)))
        .find(|&c| grid.terrain(c) == Some(CellKind::Gem))
        .into_iter()
        .collect()
}

/// The full breakdown behind a [`ScoreRecord`].
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ScoreDetail {
    pub action: ScopeCounts,
    pub plan: ScopeCounts,
    pub intended: Vec<Coord>,
}

pub fn score_detail(s: &Scenario, r: &ParsedResponse, gt: &GroundTruth) -> ScoreDetail {
    let grid = s.observed_grid();
    let world = WorldState::new(grid.clone());
    let plans_full: Vec<Vec<ActionStep>> = gt.optimal_plans.iter().map(|p| p.atomic()).collect();
    let plans_agent: Vec<Vec<ActionStep>> = plans_full
        .iter()
        .map(|p| p.iter().filter(|s| s.actor == Actor::Agent).cloned().collect())
        .collect();
    let handoffs: Vec<Coord> = gt.handoff_coords.iter().chain(&s.handoff_coords).copied().collect();
    let goals = &gt.goal_gems;

    let full = r.actions.atomic();
    let agent: Vec<ActionStep> = full.iter().filter(|s| s.actor == Actor::Agent).cloned().collect();
    ScoreDetail {
        action: scope_counts(&world, &agent, r.invalid_lines, &plans_agent, &handoffs, goals),
        plan: scope_counts(&world, &full, r.invalid_lines, &plans_full, &handoffs, goals),
        intended: intended_gems(&grid, r),
    }
}

pub fn score_scenario(s: &Scenario, r: &ParsedResponse, gt: &GroundTruth, subject: &Subject) -> ScoreRecord {
    let d = score_detail(s, r, gt);
    let intent = d.intended.iter().any(|c| gt.goal_gems.contains(c));
    let instruction = (!subject.human).then(|| bool_score(r.type_verdict.as_type() == Some(s.instruction_type)));
    ScoreRecord {
        scenario_id: s.id.clone(),
        subject: subject.id.clone(),
        human: subject.human,
        intent_accuracy: bool_score(intent),
        action_feasibility: d.action.feasibility(),
        action_optimality: d.action.optimality(),
        plan_feasibility: d.plan.feasibility(),
        plan_optimality: bool_score(d.plan.exact),
        instruction_accuracy: instruction,
        predicted_type: r.type_verdict,
        expected_type: s.instruction_type,
    }
}

fn bool_score(b: bool) -> f64 {
    if b {
        1.0
    } else {
        0.0
    }
}

/// Adjudicated replacement values for one scenario, optionally limited to
/// one subject.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Override {
    pub scenario_id: String,
    #[serde(default)]
    pub subject: Option<String>,
    #[serde(default)]
    pub intent_accuracy: Option<f64>,
    #[serde(default)]
    pub action_feasibility: Option<f64>,
    #[serde(default)]
    pub action_optimality: Option<f64>,
    #[serde(default)]
    pub plan_feasibility: Option<f64>,
    #[serde(default)]
    pub plan_optimality: Option<f64>,
    #[serde(default)]
    pub instruction_accuracy: Option<f64>,
}

impl Override {
    fn values(&self) -> [(Metric, Option<f64>); 6] {
        [
            (Metric::IntentAccuracy, self.intent_accuracy),
            (Metric::ActionFeasibility, self.action_feasibility),
            (Metric::ActionOptimality, self.action_optimality),
            (Metric::PlanFeasibility, self.plan_feasibility),
            (Metric::PlanOptimality, self.plan_optimality),
            (Metric::InstructionAccuracy, self.instruction_accuracy),
        ]
    }
}

/// Applies overrides in order; later entries win. Returns how many records
/// changed.
pub fn apply_overrides(records: &mut [ScoreRecord], overrides: &[Override]) -> Result<usize, MetricsError> {
    let mut touched = vec![false; records.len()];
    for o in overrides {
        for (m, v) in o.values() {
            let Some(v) = v else { continue };
            if !(0.0..=1.0).contains(&v) {
                return Err(MetricsError::OverrideOutOfRange {
                    scenario_id: o.scenario_id.clone(),
                    metric: m.key(),
                    value: v,
                });
            }
        }
        for (i, rec) in records.iter_mut().enumerate() {
            if rec.scenario_id != o.scenario_id || o.subject.as_ref().is_some_and(|s| *s != rec.subject) {
                continue;
            }
            for (m, v) in o.values() {
                if let Some(v) = v {
                    rec.set(m, v);
                    touched[i] = true;
                }
            }
        }
    }
    Ok(touched.into_iter().filter(|&t| t).count())
}

/// Instruction-type confusion counts with Unclear as the positive class.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize)]
pub struct Confusion {
    pub tp: usize,
    pub fp: usize,
    #[serde(rename = "fn")]
    pub fn_: usize,
    pub tn: usize,
}

impl Confusion {
    /// An absent verdict counts as predicting Clear.
    pub fn add(&mut self, predicted: TypeVerdict, expected: InstructionType) {
        let p = predicted == TypeVerdict::Unclear;
        let e = expected == InstructionType::Unclear;
        match (p, e) {
            (true, true) => self.tp += 1,
            (true, false) => self.fp += 1,
            (false, true) => self.fn_ += 1,
            (false, false) => self.tn += 1,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct MeanSem {
    pub mean: f64,
    pub sem: f64,
    pub n: usize,
}

/// Arithmetic mean and standard error (sample standard deviation over
/// sqrt(n)); a single value has SEM 0.
pub fn mean_sem(values: &[f64]) -> Option<MeanSem> {
    let n = values.len();
    if n == 0 {
        return None;
    }
    let mean = values.iter().sum::<f64>() / n as f64;
    let sem = if n < 2 {
        0.0
    } else {
        let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
        (var / n as f64).sqrt()
    };
    Some(MeanSem { mean, sem, n })
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SubjectSummary {
    pub subject: String,
    pub human: bool,
    pub n: usize,
    pub metrics: BTreeMap<Metric, MeanSem>,
    pub confusion: Confusion,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct MetricsReport {
    pub subjects: Vec<SubjectSummary>,
}

/// Groups records by subject, in first-seen order.
pub fn aggregate(records: &[ScoreRecord]) -> Result<MetricsReport, MetricsError> {
    if records.is_empty() {
        return Err(MetricsError::EmptyInput);
    }
    let mut order: Vec<&str> = Vec::new();
    for r in records {
        if !order.contains(&r.subject.as_str()) {
            order.push(&r.subject);
        }
    }
    let subjects = order
        .into_iter()
        .map(|id| {
            let mine: Vec<&ScoreRecord> = records.iter().filter(|r| r.subject == id).collect();
            let mut metrics = BTreeMap::new();
            for m in Metric::ALL {
                let vals: Vec<f64> = mine.iter().filter_map(|r| r.get(m)).collect();
                if let Some(ms) = mean_sem(&vals) {
                    metrics.insert(m, ms);
                }
            }
            let mut confusion = Confusion::default();
            for r in &mine {
                confusion.add(r.predicted_type, r.expected_type);
            }
            SubjectSummary {
                subject: id.to_string(),
                human: mine[0].human,
                n: mine.len(),
                metrics,
                confusion,
            }
        })
        .collect();
    Ok(MetricsReport { subjects })
}

/// Percentage with two decimals, as printed in the results table.
pub fn percent(v: f64) -> String {
    format!("{:.2}", v * 100.0)
}

impl MetricsReport {
    pub fn columns() -> [Metric; 6] {
        Metric::ALL
    }

    /// Aligned text table: subject, n, then each metric as a percentage.
    /// Participants show "-" for instruction accuracy.
    pub fn to_text(&self) -> String {
        let mut rows: Vec<Vec<String>> = vec![std::iter::once("Subject".to_string())
            .chain(std::iter::once("N".to_string()))
            .chain(Metric::ALL.iter().map(|m| m.header().to_string()))
            .collect()];
        for s in &self.subjects {
            let mut row = vec![s.subject.clone(), s.n.to_string()];
            for m in Metric::ALL {
                row.push(s.metrics.get(&m).map_or_else(|| "-".to_string(), |v| percent(v.mean)));
            }
            rows.push(row);
        }
        let widths: Vec<usize> = (0..rows[0].len())
            .map(|c| rows.iter().map(|r| r[c].len()).max().unwrap_or(0))
            .collect();
        let mut out = String::new();
        for row in &rows {
            let cells: Vec<String> = row
                .iter()
                .enumerate()
                .map(|(i, cell)| {
                    if i == 0 {
                        format!("{cell:<w$}", w = widths[i])
                    } else {
                        format!("{cell:>w$}", w = widths[i])
                    }
                })
                .collect();
            let _ = writeln!(out, "{}", cells.join("  ").trim_end());
        }
        out
    }

    /// CSV with mean and SEM columns per metric, values in percent.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("subject,n");
        for m in Metric::ALL {
            let _ = write!(out, ",{k},{k}_sem", k = m.key());
        }
        out.push_str(",tp,fp,fn,tn\n");
        for s in &self.subjects {
            let _ = write!(out, "{},{}", s.subject, s.n);
            for m in Metric::ALL {
                match s.metrics.get(&m) {
                    Some(v) => {
                        let _ = write!(out, ",{},{}", percent(v.mean), percent(v.sem));
                    }
                    None => out.push_str(",,"),
                }
            }
            let c = s.confusion;
            let _ = writeln!(out, ",{},{},{},{}", c.tp, c.fp, c.fn_, c.tn);
        }
        out
    }
}
