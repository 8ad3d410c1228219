//! Result tables and significance tests over a score file.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use dkg_core::metrics::{aggregate, Confusion, Metric, MetricsError, MetricsReport, ScoreRecord};
use dkg_core::prompt::PromptVariant;
use dkg_core::stats::{
    chi2_yates, classification_metrics, dunn_holm, kruskal_wallis, mcnemar, ChiSquare, Classification,
    Contingency2x2, DunnPair, GroupSamples, KruskalWallis, McNemar, PairedBinary,
};
use serde::Serialize;

/// Subject label for pooled participant responses.
pub const PARTICIPANTS: &str = "participants";

/// Dunn comparisons run only when Kruskal-Wallis p is below this.
pub const KRUSKAL_GATE: f64 = 0.05;

const PAIRED_METRICS: [Metric; 3] = [Metric::IntentAccuracy, Metric::PlanOptimality, Metric::InstructionAccuracy];
const CHI_METRICS: [Metric; 2] = [Metric::IntentAccuracy, Metric::PlanOptimality];
const CONTINUOUS_METRICS: [Metric; 3] = [
    Metric::ActionFeasibility,
    Metric::ActionOptimality,
    Metric::PlanFeasibility,
];

#[derive(Clone, Debug, Serialize)]
pub struct PairedRow {
    pub model: String,
    pub metric: Metric,
    /// `b` counts scenarios where Fs-CoT succeeded and CP failed.
    pub test: McNemar,
}

#[derive(Clone, Debug, Serialize)]
pub struct ChiRow {
    pub model: String,
    pub variant: PromptVariant,
    pub metric: Metric,
    /// Participants first, then the variant; columns success, failure.
    pub table: Contingency2x2,
    pub test: ChiSquare,
}

#[derive(Clone, Debug, Serialize)]
pub struct ClassificationRow {
    pub subject: String,
    pub confusion: Confusion,
    pub metrics: Classification,
}

#[derive(Clone, Debug, Serialize)]
pub struct KruskalRow {
    pub model: String,
    pub metric: Metric,
    pub group_sizes: [usize; 3],
    pub test: KruskalWallis,
    /// Present when the omnibus test passes the gate.
    pub dunn: Option<Vec<DunnPair>>,
}

#[derive(Clone, Debug, Serialize)]
pub struct Report {
    pub performance: MetricsReport,
    pub paired: Vec<PairedRow>,
    pub chi_square: Vec<ChiRow>,
    pub classification: Vec<ClassificationRow>,
    pub kruskal: Vec<KruskalRow>,
    pub notes: Vec<String>,
}

/// Splits `model/variant` subject ids.
pub fn split_subject(subject: &str) -> Option<(&str, PromptVariant)> {
    let (model, variant) = subject.rsplit_once('/')?;
    Some((model, PromptVariant::from_name(variant)?))
}

fn success(v: f64) -> bool {
    v >= 0.5
}

struct Arms<'a> {
    model: String,
    cp: Vec<&'a ScoreRecord>,
    fscot: Vec<&'a ScoreRecord>,
}

impl<'a> Arms<'a> {
    fn arm(&self, v: PromptVariant) -> &[&'a ScoreRecord] {
        match v {
            PromptVariant::Cp => &self.cp,
            PromptVariant::FsCot => &self.fscot,
        }
    }
}

pub fn build_report(records: &[ScoreRecord]) -> Result<Report, MetricsError> {
    let mut notes = Vec::new();
    let pooled: Vec<ScoreRecord> = records
        .iter()
        .map(|r| {
            let mut r = r.clone();
            if r.human {
                r.subject = PARTICIPANTS.to_string();
            }
            r
        })
        .collect();
    let mut ordered: Vec<ScoreRecord> = pooled.iter().filter(|r| !r.human).cloned().collect();
    ordered.extend(pooled.iter().filter(|r| r.human).cloned());
    let performance = aggregate(&ordered)?;

    let humans: Vec<&ScoreRecord> = records.iter().filter(|r| r.human).collect();
    let mut arms: Vec<Arms> = Vec::new();
    for r in records.iter().filter(|r| !r.human) {
        let Some((model, variant)) = split_subject(&r.subject) else {
            notes.push(format!("subject {} is not model/variant; left out of the tests", r.subject));
            continue;
        };
        let i = match arms.iter().position(|a| a.model == model) {
            Some(i) => i,
            None => {
                arms.push(Arms {
                    model: model.to_string(),
                    cp: Vec::new(),
                    fscot: Vec::new(),
                });
                arms.len() - 1
            }
        };
        match variant {
            PromptVariant::Cp => arms[i].cp.push(r),
            PromptVariant::FsCot => arms[i].fscot.push(r),
        }
    }
    notes.dedup();

    let mut paired = Vec::new();
    for a in &arms {
        if a.cp.is_empty() || a.fscot.is_empty() {
            notes.push(format!("{}: only one variant scored; paired tests skipped", a.model));
            continue;
        }
        for m in PAIRED_METRICS {
            let mut fs = Vec::new();
            let mut cp = Vec::new();
            for f in &a.fscot {
                let Some(c) = a.cp.iter().find(|c| c.scenario_id == f.scenario_id) else {
                    continue;
                };
                if let (Some(x), Some(y)) = (f.get(m), c.get(m)) {
                    fs.push(success(x));
                    cp.push(success(y));
                }
            }
            if fs.is_empty() {
                continue;
            }
            paired.push(PairedRow {
                model: a.model.clone(),
                metric: m,
                test: mcnemar(PairedBinary::from_outcomes(&fs, &cp)),
            });
        }
    }

    let mut chi_square = Vec::new();
    if humans.is_empty() {
        notes.push("no participant records; participant comparisons skipped".to_string());
    } else {
        notes.push(format!(
            "chi-square and Kruskal-Wallis use the {} participant responses as the participant sample size",
            humans.len()
        ));
        for a in &arms {
            for v in [PromptVariant::Cp, PromptVariant::FsCot] {
                let arm = a.arm(v);
                if arm.is_empty() {
                    continue;
                }
                for m in CHI_METRICS {
                    let count = |rs: &[&ScoreRecord]| {
                        let wins = rs.iter().filter(|r| r.get(m).is_some_and(success)).count() as u64;
                        (wins, rs.len() as u64 - wins)
                    };
                    let (hs, hf) = count(&humans);
                    let (vs, vf) = count(arm);
                    let table = Contingency2x2::new(hs, hf, vs, vf);
                    if let Ok(test) = chi2_yates(table) {
                        chi_square.push(ChiRow {
                            model: a.model.clone(),
                            variant: v,
                            metric: m,
                            table,
                            test,
                        });
                    }
                }
            }
        }
    }

    let mut classification = Vec::new();
    for s in performance.subjects.iter().filter(|s| !s.human) {
        let c = s.confusion;
        if let Ok(metrics) = classification_metrics(c.tp as u64, c.fp as u64, c.fn_ as u64, c.tn as u64) {
            classification.push(ClassificationRow {
                subject: s.subject.clone(),
                confusion: c,
                metrics,
            });
        }
    }

    let mut kruskal = Vec::new();
    if !humans.is_empty() {
        for a in arms.iter().filter(|a| !a.cp.is_empty() && !a.fscot.is_empty()) {
            for m in CONTINUOUS_METRICS {
                let values = |rs: &[&ScoreRecord]| rs.iter().filter_map(|r| r.get(m)).collect::<Vec<f64>>();
                let groups = vec![
                    ("CP".to_string(), values(&a.cp)),
                    ("Fs-CoT".to_string(), values(&a.fscot)),
                    ("Participants".to_string(), values(&humans)),
                ];
                let sizes = [groups[0].1.len(), groups[1].1.len(), groups[2].1.len()];
                let Ok(g) = GroupSamples::new(groups) else { continue };
                let test = kruskal_wallis(&g);
                let dunn = (test.p_value < KRUSKAL_GATE).then(|| dunn_holm(&g));
                kruskal.push(KruskalRow {
                    model: a.model.clone(),
                    metric: m,
                    group_sizes: sizes,
                    test,
                    dunn,
                });
            }
        }
    }

    Ok(Report {
        performance,
        paired,
        chi_square,
        classification,
        kruskal,
        notes,
    })
}

fn f6(v: f64) -> String {
    format!("{v:.6}")
}

fn opt6(v: Option<f64>) -> String {
    v.map_or_else(|| "-".to_string(), f6)
}

fn align(rows: &[Vec<String>]) -> String {
    let Some(first) = rows.first() else {
        return String::new();
    };
    let widths: Vec<usize> = (0..first.len())
        .map(|c| rows.iter().map(|r| r[c].len()).max().unwrap_or(0))
        .collect();
    let mut out = String::new();
    for row in rows {
        let cells: Vec<String> = row
            .iter()
            .enumerate()
            .map(|(i, c)| {
                if i == 0 {
                    format!("{c:<w$}", w = widths[i])
                } else {
                    format!("{c:>w$}", w = widths[i])
                }
            })
            .collect();
        let _ = writeln!(out, "{}", cells.join("  ").trim_end());
    }
    out
}

fn csv(rows: &[Vec<String>]) -> String {
    rows.iter().map(|r| r.join(",") + "\n").collect()
}

impl Report {
    fn paired_rows(&self) -> Vec<Vec<String>> {
        let mut rows = vec![["model", "metric", "b", "c", "pairs", "p", "g"].map(String::from).to_vec()];
        for r in &self.paired {
            let t = &r.test;
            rows.push(vec![
                r.model.clone(),
                r.metric.key().to_string(),
                t.pairs.b.to_string(),
                t.pairs.c.to_string(),
                t.pairs.n_pairs.to_string(),
                f6(t.p_value),
                opt6(t.g),
            ]);
        }
        rows
    }

    fn chi_rows(&self) -> Vec<Vec<String>> {
        let mut rows = vec![[
            "model",
            "variant",
            "metric",
            "participant_success",
            "participant_failure",
            "variant_success",
            "variant_failure",
            "chi2",
            "p",
            "v",
        ]
        .map(String::from)
        .to_vec()];
        for r in &self.chi_square {
            let [[a, b], [c, d]] = r.table.cells;
            rows.push(vec![
                r.model.clone(),
                r.variant.name().to_string(),
                r.metric.key().to_string(),
                a.to_string(),
                b.to_string(),
                c.to_string(),
                d.to_string(),
                f6(r.test.chi2),
                f6(r.test.p_value),
                f6(r.test.cramers_v),
            ]);
        }
        rows
    }

    fn classification_rows(&self) -> Vec<Vec<String>> {
        let mut rows = vec![["subject", "tp", "fp", "fn", "tn", "precision", "recall", "f1", "accuracy"]
            .map(String::from)
            .to_vec()];
        for r in &self.classification {
            let c = r.confusion;
            let m = &r.metrics;
            rows.push(vec![
                r.subject.clone(),
                c.tp.to_string(),
                c.fp.to_string(),
                c.fn_.to_string(),
                c.tn.to_string(),
                f6(m.precision),
                f6(m.recall),
                f6(m.f1),
                f6(m.accuracy),
            ]);
        }
        rows
    }

    fn kruskal_rows(&self) -> Vec<Vec<String>> {
        let mut rows = vec![["model", "metric", "test", "statistic", "p", "p_adj", "r"]
            .map(String::from)
            .to_vec()];
        for r in &self.kruskal {
            rows.push(vec![
                r.model.clone(),
                r.metric.key().to_string(),
                "kruskal-wallis".to_string(),
                f6(r.test.h),
                f6(r.test.p_value),
                String::new(),
                String::new(),
            ]);
            for d in r.dunn.iter().flatten() {
                rows.push(vec![
                    r.model.clone(),
                    r.metric.key().to_string(),
                    d.comparison.clone(),
                    f6(d.z),
                    f6(d.p_raw),
                    f6(d.p_adj),
                    f6(d.r),
                ]);
            }
        }
        rows
    }

    pub fn to_text(&self) -> String {
        let mut out = String::new();
        out.push_str("Performance (percent)\n");
        out.push_str(&self.performance.to_text());
        let sections = [
            ("Fs-CoT vs CP, paired (McNemar exact, Cohen's g)", self.paired_rows()),
            ("Participants vs variant (chi-square with Yates correction, Cramer's V)", self.chi_rows()),
            ("Instruction type identification (Unclear positive)", self.classification_rows()),
            (
                "Continuous metrics (Kruskal-Wallis; Dunn with Holm adjustment, rank-biserial r)",
                self.kruskal_rows(),
            ),
        ];
        for (title, rows) in sections {
            if rows.len() > 1 {
                let _ = write!(out, "\n{title}\n{}", align(&rows));
            }
        }
        if !self.notes.is_empty() {
            out.push_str("\nNotes\n");
            for n in &self.notes {
                let _ = writeln!(out, "- {n}");
            }
        }
        out
    }

    /// Writes one CSV per table into `dir`.
    pub fn write_csvs(&self, dir: &Path) -> std::io::Result<Vec<String>> {
        fs::create_dir_all(dir)?;
        let files = [
            ("performance.csv", self.performance.to_csv()),
            ("mcnemar.csv", csv(&self.paired_rows())),
            ("chi_square.csv", csv(&self.chi_rows())),
            ("instruction_type.csv", csv(&self.classification_rows())),
            ("kruskal_dunn.csv", csv(&self.kruskal_rows())),
        ];
        let mut written = Vec::new();
        for (name, body) in files {
            fs::write(dir.join(name), body)?;
            written.push(name.to_string());
        }
        Ok(written)
    }
}
