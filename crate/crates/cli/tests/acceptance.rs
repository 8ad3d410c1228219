//! One line per headline criterion. Run with `cargo test --test acceptance`.

mod common;

use std::panic::{catch_unwind, AssertUnwindSafe};
use std::process::ExitCode;
use std::time::{Duration, Instant};

use common::{core_fixture, end_to_end, performance_cells, worked_problems_stub};
use dkg_core::metrics::{score_scenario, Metric, Subject};
use dkg_core::parser::{parse_completion, render_response, ParsedResponse, TypeVerdict};
use dkg_core::planner::{
    optimal_agent_steps_oracle, plan_problem, random_problem, Action, DoorRef, PlanError, PlanningProblem,
};
use dkg_core::prompt::{build_prompt, Audience, PromptVariant, Templates};
use dkg_core::scenario::bundled_dataset;
use dkg_core::stats::{chi2_yates, classification_metrics, cohens_g, mcnemar_exact, Contingency2x2};
use dkg_core::{ground_truth_plans, parse_grid, serialize_grid, ActionStep, Actor, Color, Coord, InstructionType, ParseOptions};
use rand::rngs::StdRng;
use rand::SeedableRng;

type Outcome = Result<String, String>;
type Check = (&'static str, fn() -> Outcome);

macro_rules! ensure {
    ($cond:expr, $($msg:tt)+) => {
        if !$cond {
            return Err(format!($($msg)+));
        }
    };
}

fn c(r: usize, col: usize) -> Coord {
    Coord::new(r, col)
}

fn within(start: Instant, limit: Duration) -> Result<(), String> {
    let t = start.elapsed();
    if t > limit {
        return Err(format!("took {t:.2?}, limit {limit:?}"));
    }
    Ok(())
}

fn golden_plans() -> Outcome {
    let d = bundled_dataset();
    let start = Instant::now();
    let p1 = ground_truth_plans(d.get("p1").unwrap()).map_err(|e| e.to_string())?;
    let p2 = ground_truth_plans(d.get("p2").unwrap()).map_err(|e| e.to_string())?;
    within(start, Duration::from_secs(1))?;

    let want = vec![
        ActionStep::collect(Actor::Agent, Color::Red, c(0, 0)),
        ActionStep::collect(Actor::Agent, Color::Yellow, c(1, 0)),
        ActionStep::pass(vec![Color::Red, Color::Yellow], vec![c(3, 2)]),
        ActionStep::unlock(
            Actor::Human,
            vec![DoorRef::new(Color::Red, c(3, 1)), DoorRef::new(Color::Yellow, c(6, 0))],
        ),
        ActionStep::retrieve(vec![c(7, 0)]),
    ];
    ensure!(p1.optimal_plans.len() == 1, "problem 1 has {} plans", p1.optimal_plans.len());
    ensure!(p1.optimal_plans[0].steps == want, "problem 1 plan:\n{}", p1.optimal_plans[0].to_numbered_text());

    ensure!(!p2.optimal_plans.is_empty(), "problem 2 has no plan");
    for plan in &p2.optimal_plans {
        let mut collected = Vec::new();
        let mut handoffs = Vec::new();
        for s in &plan.steps {
            match &s.action {
                Action::Collect { at, .. } => collected.push(*at),
                Action::Pass { to, .. } => handoffs.extend(to.iter().copied()),
                _ => {}
            }
        }
        collected.sort();
        ensure!(collected == vec![c(1, 1), c(1, 3)], "problem 2 collects {collected:?}");
        ensure!(
            !handoffs.is_empty() && handoffs.iter().all(|h| [c(5, 4), c(7, 4)].contains(h)),
            "problem 2 hands off at {handoffs:?}"
        );
    }
    Ok(format!("problem 2: {} plans", p2.optimal_plans.len()))
}

fn planner_optimality() -> Outcome {
    let start = Instant::now();
    let mut problems: Vec<(String, PlanningProblem)> = bundled_dataset()
        .scenarios
        .iter()
        .map(|s| (s.id.clone(), PlanningProblem::from_scenario(s)))
        .collect();
    let mut rng = StdRng::seed_from_u64(0x5eed);
    for i in 0..100 {
        problems.push((format!("random {i}"), random_problem(&mut rng, 8, i % 2 == 1)));
    }
    let mut solved = 0;
    for (name, p) in &problems {
        match (plan_problem(p), optimal_agent_steps_oracle(p)) {
            (Ok(gt), Ok(cost)) => {
                ensure!(gt.optimal_agent_steps == cost, "{name}: planner {} vs oracle {cost}", gt.optimal_agent_steps);
                solved += 1;
            }
            (Err(PlanError::GoalUnreachable), Err(PlanError::GoalUnreachable)) => {}
            (a, b) => return Err(format!("{name}: planner {a:?} vs oracle {b:?}")),
        }
    }
    within(start, Duration::from_secs(60))?;
    Ok(format!("{} problems, {solved} solvable, 0 discrepancies", problems.len()))
}

fn self_consistency() -> Outcome {
    let d = bundled_dataset();
    let mut checked = 0;
    for s in &d.scenarios {
        let gt = ground_truth_plans(s).map_err(|e| format!("{}: {e}", s.id))?;
        for plan in &gt.optimal_plans {
            let mut r: ParsedResponse = parse_completion("");
            r.type_verdict = match s.instruction_type {
                InstructionType::Clear => TypeVerdict::Clear,
                InstructionType::Unclear => TypeVerdict::Unclear,
            };
            r.response_text = "Here is the plan.".into();
            r.actions = plan.clone();
            let r = parse_completion(&render_response(&r));
            let rec = score_scenario(s, &r, &gt, &Subject::model("ground-truth"));
            for m in Metric::ALL {
                ensure!(rec.get(m) == Some(1.0), "{} {m:?} = {:?}", s.id, rec.get(m));
            }
            checked += 1;
        }
    }
    Ok(format!("{checked} plans over {} scenarios", d.len()))
}

fn close(got: f64, want: f64, tol: f64, what: &str) -> Result<(), String> {
    if (got - want).abs() > tol {
        return Err(format!("{what}: got {got}, want {want} ± {tol}"));
    }
    Ok(())
}

fn statistics() -> Outcome {
    ensure!(mcnemar_exact(8, 1) == 0.0390625, "mcnemar(8,1) = {}", mcnemar_exact(8, 1));
    ensure!(mcnemar_exact(10, 0) == 0.001953125, "mcnemar(10,0) = {}", mcnemar_exact(10, 0));
    close(cohens_g(8, 1).unwrap(), 0.777778, 5e-7, "g(8,1)")?;
    ensure!(cohens_g(10, 0).unwrap() == 1.0, "g(10,0)");
    let headline = chi2_yates(Contingency2x2::new(418, 102, 10, 10)).map_err(|e| e.to_string())?;
    close(headline.p_value, 0.002632, 5e-5, "chi2 p")?;
    close(headline.cramers_v, 0.1294, 5e-4, "chi2 V")?;

    // Paired variants: (b, c, p, g) per model and measure.
    let paired = [
        (8, 1, 0.039062, 0.777778),
        (10, 0, 0.001953, 1.0),
        (3, 0, 0.25, 1.0),
        (4, 0, 0.125, 1.0),
        (4, 1, 0.375, 0.6),
        (4, 0, 0.125, 1.0),
        (5, 0, 0.0625, 1.0),
        (5, 0, 0.0625, 1.0),
        (4, 1, 0.375, 0.6),
    ];
    for (b, c, p, g) in paired {
        close(mcnemar_exact(b, c), p, 1e-6, &format!("mcnemar({b},{c})"))?;
        close(cohens_g(b, c).unwrap(), g, 1e-6, &format!("g({b},{c})"))?;
    }

    // Participants (out of 520) against a variant (out of 20): (successes, successes, p, V).
    let chi = [
        (418, 10, 0.002632, 0.129435),
        (418, 17, 0.822833, 0.009635),
        (370, 5, 0.000033, 0.178576),
        (370, 15, 0.903483, 0.005218),
        (418, 12, 0.052586, 0.083411),
        (418, 16, 1.0, 0.0),
        (370, 11, 0.191762, 0.056175),
        (370, 14, 1.0, 0.0),
        (418, 1, 0.0, 0.32967),
        (418, 6, 0.000000328153, 0.219749),
        (370, 1, 0.000000001796, 0.258854),
        (370, 6, 0.000233537, 0.158348),
    ];
    for (h, m, p, v) in chi {
        let r = chi2_yates(Contingency2x2::new(h, 520 - h, m, 20 - m)).map_err(|e| e.to_string())?;
        close(r.p_value, p, 5e-7, &format!("chi2 p ({h},{m})"))?;
        close(r.cramers_v, v, 5e-6, &format!("chi2 V ({h},{m})"))?;
    }

    // (tp, fp, fn, tn), printed precision/recall/F1/accuracy, decimals in the F1 cell.
    let classification = [
        ((12, 8, 0, 0), [0.6, 1.0, 0.75, 0.6], 6),
        ((12, 5, 0, 3), [0.705882, 1.0, 0.83, 0.75], 2),
        ((11, 8, 1, 0), [0.578947, 0.916667, 0.709677, 0.55], 6),
        ((11, 4, 1, 4), [0.733333, 0.916667, 0.814815, 0.75], 6),
        ((10, 8, 2, 0), [0.555556, 0.833333, 0.666667, 0.5], 6),
        ((10, 5, 2, 3), [0.666667, 0.833333, 0.740741, 0.65], 6),
    ];
    for ((tp, fp, fn_, tn), want, f1_places) in classification {
        let m = classification_metrics(tp, fp, fn_, tn).map_err(|e| e.to_string())?;
        for (k, (got, w)) in [m.precision, m.recall, m.f1, m.accuracy].into_iter().zip(want).enumerate() {
            let scale = 10f64.powi(if k == 2 { f1_places } else { 6 });
            ensure!((got * scale).round() / scale == w, "cell {k} of ({tp},{fp},{fn_},{tn}): {got}");
        }
    }
    Ok(format!("{} paired, {} chi-square, {} classification rows", paired.len(), chi.len(), classification.len()))
}

fn prompt_fidelity() -> Outcome {
    let t = Templates::bundled();
    let d = bundled_dataset();
    let cp = build_prompt(&t, PromptVariant::Cp, d.get("fig1").unwrap(), Audience::Model).map_err(|e| e.to_string())?;
    ensure!(
        cp.assembled
            .starts_with("You assist a human in a cooperative planning domain called Doors, Keys, and Gems"),
        "CP opening sentence"
    );
    ensure!(cp.assembled.contains("--> Total Walls: 73"), "CP object listing");
    for f in ["actions/a3_p1.txt", "actions/a3_p2.txt", "completions/a3_p1.txt"] {
        ensure!(cp.assembled.contains(&core_fixture(f)), "CP worked example {f}");
    }

    let fs = build_prompt(&t, PromptVariant::FsCot, d.get("p1").unwrap(), Audience::Model).map_err(|e| e.to_string())?;
    let exemplars = fs.demonstrations.matches("Human Action:").count();
    ensure!(exemplars == 7, "Fs-CoT has {exemplars} exemplars");
    ensure!(!fs.demonstrations.contains("[["), "Fs-CoT exemplars contain a grid block");
    for rule in [
        "Always generate your response by cross-checking",
        "When traversing the grid, minimize and optimize your path",
        "Infer the human's desired gem based on their movement",
        "Apply theory of mind principles",
    ] {
        ensure!(fs.common_ground.contains(rule), "Fs-CoT rule missing: {rule}");
    }
    for n in 1..=7 {
        ensure!(fs.demonstrations.contains(&core_fixture(&format!("actions/a4_ex{n}.txt"))), "exemplar {n}");
    }
    Ok("CP anchors 5, Fs-CoT exemplars 7, rules 4".into())
}

fn parser_fidelity() -> Outcome {
    let blocks = [
        "a3_p1", "a3_p2", "a4_ex1", "a4_ex2", "a4_ex3", "a4_ex4", "a4_ex5", "a4_ex6", "a4_ex7", "sec4",
    ];
    for name in blocks {
        let p = parse_completion(&format!("Actions:\n{}", core_fixture(&format!("actions/{name}.txt"))));
        ensure!(p.parse_warnings.is_empty() && p.invalid_lines == 0, "{name}: {:?}", p.parse_warnings);
        ensure!(!p.actions.is_empty(), "{name}: no actions");
        let again = parse_completion(&format!("Actions:\n{}", p.actions.to_numbered_text()));
        ensure!(again.actions == p.actions, "{name}: parse(serialize(x)) != x");
    }
    Ok(format!("{} action blocks", blocks.len()))
}

fn grid_round_trip() -> Outcome {
    for n in 1..=7 {
        let text = core_fixture(&format!("grids/fig{n}.txt"));
        let opts = if n == 4 || n == 7 {
            ParseOptions::lenient()
        } else {
            ParseOptions::strict()
        };
        let grid = parse_grid(&text, opts).map_err(|e| format!("fig{n}: {e}"))?;
        ensure!(serialize_grid(&grid) == text, "fig{n} does not round-trip");
    }
    Ok("7 grids, lenient for figs 4 and 7".into())
}

fn end_to_end_stub() -> Outcome {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let stub = worked_problems_stub();
    let start = Instant::now();
    let (report, _) = end_to_end(dir.path(), &stub);
    within(start, Duration::from_secs(10))?;
    let rows = performance_cells(&report);
    ensure!(rows.len() == 2, "expected two subjects:\n{report}");
    for (subject, cells) in &rows {
        ensure!(cells.iter().all(|v| v == "100.00"), "{subject}: {cells:?}");
    }
    Ok(format!("{} subjects at 100.00", rows.len()))
}

fn main() -> ExitCode {
    let checks: [Check; 8] = [
        ("golden-plan reproduction", golden_plans),
        ("planner optimality", planner_optimality),
        ("self-consistency", self_consistency),
        ("statistics reproduction", statistics),
        ("prompt fidelity", prompt_fidelity),
        ("parser fidelity", parser_fidelity),
        ("grid round-trip", grid_round_trip),
        ("end-to-end stub run", end_to_end_stub),
    ];
    let mut failed = 0;
    for (name, check) in checks {
        let start = Instant::now();
        let outcome = catch_unwind(AssertUnwindSafe(check)).unwrap_or_else(|e| {
            let msg = e
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_default();
            Err(format!("panicked: {msg}"))
        });
        let elapsed = start.elapsed();
        match outcome {
            Ok(detail) => println!("PASS {name} ({detail}, {elapsed:.2?})"),
            Err(why) => {
                failed += 1;
                println!("FAIL {name} ({why}, {elapsed:.2?})");
            }
        }
    }
    println!("{} of {} criteria passed", checks.len() - failed, checks.len());
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
