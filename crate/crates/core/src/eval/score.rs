use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::judge::{JudgeVerdict, Label};
use crate::corpus::QaCategory;
use crate::error::{Error, Result};

/// Report columns, in table order.
pub const COLUMNS: [&str; 6] = ["multi_hop", "temporal", "open_domain", "single_hop", "visual", "overall"];

/// One answered question with every judge's verdict.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GradedAnswer {
    pub conversation_id: String,
    pub qa_index: usize,
    pub category: QaCategory,
    pub question: String,
    pub gold_answer: String,
    pub generated_answer: String,
    pub verdicts: Vec<JudgeVerdict>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Cell {
    pub correct: usize,
    pub asked: usize,
    pub accuracy: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CategoryScore {
    pub asked: usize,
    /// Keyed by judge id.
    pub judges: BTreeMap<String, Cell>,
    /// Mean of the judges' accuracies.
    pub avg: f64,
    /// Verdicts forced to WRONG because the judge output never parsed.
    pub judge_failures: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunMetadata {
    pub system: String,
    pub conversations: Vec<String>,
    pub seed: u64,
    pub judges: Vec<String>,
    /// Free-form knob summary (W, N, k, ...).
    pub settings: BTreeMap<String, serde_json::Value>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreReport {
    pub schema_version: u32,
    pub metadata: RunMetadata,
    /// Keyed by column name; columns without questions are absent.
    pub categories: BTreeMap<String, CategoryScore>,
}

pub const REPORT_SCHEMA_VERSION: u32 = 1;

fn column_of(c: &QaCategory) -> Option<&'static str> {
    match c {
        QaCategory::Base(b) => Some(b.as_str()),
        QaCategory::VisualCentric(_) => Some("visual"),
        QaCategory::Adversarial => None,
    }
}

fn accuracy(correct: usize, asked: usize) -> f64 {
    100.0 * correct as f64 / asked as f64
}

/// Aggregates verdicts into per-column, per-judge accuracies.
/// Adversarial questions are ignored; every other answer must carry exactly
/// one verdict from each configured judge.
pub fn score(answers: &[GradedAnswer], judges: &[String], metadata: RunMetadata) -> Result<ScoreReport> {
    if judges.is_empty() {
        return Err(Error::MissingVerdicts("no judges configured".into()));
    }
    // (correct per judge, asked, failures) per column.
    let mut tallies: BTreeMap<&'static str, (Vec<usize>, usize, usize)> = BTreeMap::new();
    for a in answers {
        let Some(col) = column_of(&a.category) else { continue };
        let mut row = Vec::with_capacity(judges.len());
        let mut failures = 0;
        for j in judges {
            let mut vs = a.verdicts.iter().filter(|v| &v.judge_id == j);
            let v = vs.next().ok_or_else(|| {
                Error::MissingVerdicts(format!("{}#{} has no verdict from judge {j}", a.conversation_id, a.qa_index))
            })?;
            if vs.next().is_some() {
                return Err(Error::MissingVerdicts(format!(
                    "{}#{} has several verdicts from judge {j}",
                    a.conversation_id, a.qa_index
                )));
            }
            row.push(v.label == Label::Correct);
            failures += v.judge_failed as usize;
        }
        for c in [col, "overall"] {
            let t = tallies.entry(c).or_insert_with(|| (vec![0; judges.len()], 0, 0));
            t.1 += 1;
            t.2 += failures;
            for (acc, ok) in t.0.iter_mut().zip(&row) {
                *acc += *ok as usize;
            }
        }
    }
    let categories = tallies
        .into_iter()
        .map(|(col, (correct, asked, judge_failures))| {
            let cells: BTreeMap<String, Cell> = judges
                .iter()
                .zip(&correct)
                .map(|(j, &c)| {
                    (
                        j.clone(),
                        Cell {
                            correct: c,
                            asked,
                            accuracy: accuracy(c, asked),
                        },
                    )
                })
                .collect();
            let avg = cells.values().map(|c| c.accuracy).sum::<f64>() / judges.len() as f64;
            (
                col.to_string(),
                CategoryScore {
                    asked,
                    judges: cells,
                    avg,
                    judge_failures,
                },
            )
        })
        .collect();
    Ok(ScoreReport {
        schema_version: REPORT_SCHEMA_VERSION,
        metadata,
        categories,
    })
}

const ABSENT: &str = "—";

fn fmt_cell(v: Option<f64>) -> String {
    v.map(|x| format!("{x:.2}")).unwrap_or_else(|| ABSENT.to_string())
}

/// Markdown grid: one row per judge plus `Avg`, one column per category.
pub fn render_table(report: &ScoreReport) -> String {
    let mut out = String::new();
    out.push_str(&format!("System: {}\n\n", report.metadata.system));
    out.push_str("| Judge |");
    for c in COLUMNS {
        out.push_str(&format!(" {c} |"));
    }
    out.push_str("\n|---|");
    out.push_str(&"---:|".repeat(COLUMNS.len()));
    out.push('\n');
    // `None` is the Avg row.
    let rows = report.metadata.judges.iter().map(Some).chain([None]);
    for judge in rows {
        out.push_str(&format!("| {} |", judge.map(String::as_str).unwrap_or("Avg")));
        for c in COLUMNS {
            let v = report.categories.get(c).and_then(|s| match judge {
                Some(j) => s.judges.get(j).map(|x| x.accuracy),
                None => Some(s.avg),
            });
            out.push_str(&format!(" {} |", fmt_cell(v)));
        }
        out.push('\n');
    }
    out.push_str("| n |");
    for c in COLUMNS {
        let n = report.categories.get(c).map(|s| s.asked.to_string());
        out.push_str(&format!(" {} |", n.unwrap_or_else(|| ABSENT.to_string())));
    }
    out.push('\n');
    let failures: usize = report.categories.get("overall").map(|c| c.judge_failures).unwrap_or(0);
    if failures > 0 {
        out.push_str(&format!("\n{failures} verdict(s) forced to WRONG after unparseable judge output.\n"));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::BaseCategory;

    fn meta(judges: &[&str]) -> RunMetadata {
        RunMetadata {
            system: "m2a".into(),
            conversations: vec!["c".into()],
            seed: 0,
            judges: judges.iter().map(|s| s.to_string()).collect(),
            settings: BTreeMap::new(),
        }
    }

    fn answer(i: usize, category: QaCategory, labels: &[(&str, Label)]) -> GradedAnswer {
        GradedAnswer {
            conversation_id: "c".into(),
            qa_index: i,
            category,
            question: "q".into(),
            gold_answer: "a".into(),
            generated_answer: "a".into(),
            verdicts: labels
                .iter()
                .map(|(j, l)| JudgeVerdict {
                    label: *l,
                    explanation: String::new(),
                    judge_id: j.to_string(),
                    judge_failed: false,
                })
                .collect(),
        }
    }

    const SH: QaCategory = QaCategory::Base(BaseCategory::SingleHop);

    #[test]
    fn three_of_four_is_75() {
        let answers: Vec<_> = (0..4)
            .map(|i| answer(i, SH, &[("Q", if i < 3 { Label::Correct } else { Label::Wrong })]))
            .collect();
        let r = score(&answers, &["Q".into()], meta(&["Q"])).unwrap();
        assert_eq!(r.categories["single_hop"].judges["Q"].accuracy, 75.0);
        assert_eq!(r.categories["overall"].avg, 75.0);
    }

    #[test]
    fn avg_is_mean_of_judges() {
        // 10 questions: Q gets 5 right, G gets 7 right.
        let answers: Vec<_> = (0..10)
            .map(|i| {
                let q = if i < 5 { Label::Correct } else { Label::Wrong };
                let g = if i < 7 { Label::Correct } else { Label::Wrong };
                answer(i, SH, &[("Q", q), ("G", g)])
            })
            .collect();
        let r = score(&answers, &["Q".into(), "G".into()], meta(&["Q", "G"])).unwrap();
        let c = &r.categories["single_hop"];
        assert_eq!(c.judges["Q"].accuracy, 50.0);
        assert_eq!(c.judges["G"].accuracy, 70.0);
        assert_eq!(c.avg, 60.0);
    }

    #[test]
    fn empty_category_is_absent_not_zero() {
        let answers = vec![answer(0, SH, &[("Q", Label::Wrong)])];
        let r = score(&answers, &["Q".into()], meta(&["Q"])).unwrap();
        assert!(!r.categories.contains_key("temporal"));
        assert_eq!(r.categories["single_hop"].judges["Q"].accuracy, 0.0);
        let table = render_table(&r);
        let q_row = table.lines().find(|l| l.starts_with("| Q |")).unwrap();
        assert_eq!(q_row, "| Q | — | — | — | 0.00 | — | 0.00 |");
    }

    #[test]
    fn missing_verdict_is_an_error() {
        let answers = vec![answer(0, SH, &[("Q", Label::Correct)])];
        let err = score(&answers, &["Q".into(), "G".into()], meta(&["Q", "G"])).unwrap_err();
        assert!(matches!(err, Error::MissingVerdicts(_)));
    }

    #[test]
    fn adversarial_is_skipped() {
        let answers = vec![
            answer(0, QaCategory::Adversarial, &[]),
            answer(1, SH, &[("Q", Label::Correct)]),
        ];
        let r = score(&answers, &["Q".into()], meta(&["Q"])).unwrap();
        assert_eq!(r.categories["overall"].asked, 1);
    }
}
