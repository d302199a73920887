//! Set metrics with DEBATABLE handling, retrieval recall, verifier
//! classification metrics, and leaderboard rendering.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::corpus::{effective_golden, normalize_name, Corpus, EffectiveGolden, Question};
use crate::error::{Error, Result};
use crate::qa::Prediction;
use crate::retrieval::RankedDocs;

pub const RETRIEVAL_KS: [usize; 4] = [3, 20, 40, 100];

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct ExampleMetrics {
    pub f1: f64,
    pub precision: f64,
    pub recall: f64,
    pub accuracy: f64,
    pub subspan_em: f64,
}

impl ExampleMetrics {
    pub fn values(&self) -> [f64; 5] {
        [self.f1, self.precision, self.recall, self.accuracy, self.subspan_em]
    }
}

fn indicator(b: bool) -> f64 {
    if b {
        1.0
    } else {
        0.0
    }
}

/// Scores one predicted list. Names are compared after normalization;
/// DEBATABLE entities are dropped from the prediction before comparison.
pub fn example_set_metrics<S: AsRef<str>>(golden: &EffectiveGolden, predicted: &[S]) -> ExampleMetrics {
    let p: BTreeSet<String> = predicted
        .iter()
        .map(|s| normalize_name(s.as_ref()))
        .filter(|s| !golden.debatable_set.contains(s))
        .collect();
    let g = &golden.match_set;
    let hits = p.intersection(g).count() as f64;
    let precision = match (p.is_empty(), g.is_empty()) {
        (true, true) => 1.0,
        (true, false) => 0.0,
        _ => hits / p.len() as f64,
    };
    let recall = if g.is_empty() { 1.0 } else { hits / g.len() as f64 };
    // Equal to 2PR/(P+R), but a single correctly rounded division.
    let f1 = if p.is_empty() && g.is_empty() {
        1.0
    } else {
        2.0 * hits / (p.len() + g.len()) as f64
    };
    ExampleMetrics {
        f1,
        precision,
        recall,
        accuracy: indicator(p == *g),
        subspan_em: indicator(g.is_subset(&p)),
    }
}

pub fn score_prediction(q: &Question, p: &Prediction) -> ExampleMetrics {
    example_set_metrics(&effective_golden(q), &p.answers)
}

/// Scores a prediction file against its questions. Every prediction must
/// name a known question.
pub fn score_predictions(questions: &[Question], predictions: &[Prediction]) -> Result<MetricsReport> {
    let by_id: HashMap<&str, &Question> = questions.iter().map(|q| (q.question_id.as_str(), q)).collect();
    let scored = predictions
        .iter()
        .map(|p| {
            let q = by_id
                .get(p.question_id.as_str())
                .ok_or_else(|| Error::Argument(format!("prediction for unknown question {:?}", p.question_id)))?;
            Ok((p.question_id.clone(), score_prediction(q, p)))
        })
        .collect::<Result<Vec<_>>>()?;
    aggregate(&scored)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub per_example: BTreeMap<String, ExampleMetrics>,
    pub aggregate: ExampleMetrics,
    pub n_examples: usize,
}

/// Per-metric arithmetic mean. Sums run in question-id order so the result
/// does not depend on input order.
pub fn aggregate(reports: &[(String, ExampleMetrics)]) -> Result<MetricsReport> {
    if reports.is_empty() {
        return Err(Error::Argument("cannot aggregate zero examples".into()));
    }
    let mut per_example = BTreeMap::new();
    for (id, m) in reports {
        if per_example.insert(id.clone(), *m).is_some() {
            return Err(Error::Argument(format!("duplicate question id {id:?}")));
        }
    }
    let mut sums = [0.0f64; 5];
    for m in per_example.values() {
        for (s, v) in sums.iter_mut().zip(m.values()) {
            *s += v;
        }
    }
    let n = per_example.len() as f64;
    let [f1, precision, recall, accuracy, subspan_em] = sums.map(|s| s / n);
    Ok(MetricsReport {
        n_examples: per_example.len(),
        per_example,
        aggregate: ExampleMetrics {
            f1,
            precision,
            recall,
            accuracy,
            subspan_em,
        },
    })
}

fn top_hits(golden: &BTreeSet<String>, ranked: &RankedDocs, k: usize) -> usize {
    let mut seen = BTreeSet::new();
    ranked
        .top(k)
        .iter()
        .filter(|e| golden.contains(&e.doc_id) && seen.insert(e.doc_id.as_str()))
        .count()
}

pub fn recall_at_k(golden_doc_ids: &BTreeSet<String>, ranked: &RankedDocs, k: usize) -> f64 {
    if golden_doc_ids.is_empty() {
        return 1.0;
    }
    top_hits(golden_doc_ids, ranked, k) as f64 / golden_doc_ids.len() as f64
}

/// 1.0 when all golden documents, or at least `k` of them, are in the top `k`.
pub fn mrecall_at_k(golden_doc_ids: &BTreeSet<String>, ranked: &RankedDocs, k: usize) -> f64 {
    indicator(top_hits(golden_doc_ids, ranked, k) >= golden_doc_ids.len().min(k))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RetrievalReport {
    pub recall_at: BTreeMap<usize, f64>,
    pub mrecall_at: BTreeMap<usize, f64>,
    pub n_examples: usize,
}

/// Golden document ids for retrieval scoring: the MATCH entities' documents.
pub fn golden_doc_ids(q: &Question, corpus: &Corpus) -> Result<BTreeSet<String>> {
    corpus.ids_for(&effective_golden(q).match_set).map_err(|e| match e {
        Error::UnknownEntity { entity, .. } => Error::UnknownEntity {
            question_id: q.question_id.clone(),
            entity,
        },
        other => other,
    })
}

/// Mean Recall@K and MRecall@K over questions, summed in question-id order.
pub fn retrieval_report(items: &[(String, BTreeSet<String>, RankedDocs)], ks: &[usize]) -> Result<RetrievalReport> {
    if items.is_empty() {
        return Err(Error::Argument("cannot aggregate zero examples".into()));
    }
    if ks.contains(&0) {
        return Err(Error::Argument("k must be at least 1".into()));
    }
    let mut ordered: Vec<&(String, BTreeSet<String>, RankedDocs)> = items.iter().collect();
    ordered.sort_by(|a, b| a.0.cmp(&b.0));
    if ordered.windows(2).any(|w| w[0].0 == w[1].0) {
        return Err(Error::Argument("duplicate question id".into()));
    }
    let n = ordered.len() as f64;
    let mut recall_at = BTreeMap::new();
    let mut mrecall_at = BTreeMap::new();
    for &k in ks {
        let r: f64 = ordered.iter().map(|(_, g, r)| recall_at_k(g, r, k)).sum();
        let m: f64 = ordered.iter().map(|(_, g, r)| mrecall_at_k(g, r, k)).sum();
        recall_at.insert(k, r / n);
        mrecall_at.insert(k, m / n);
    }
    Ok(RetrievalReport {
        recall_at,
        mrecall_at,
        n_examples: ordered.len(),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClassificationMetrics {
    pub precision: f64,
    pub recall: f64,
    pub accuracy: f64,
    pub f1: f64,
}

/// Binary metrics over `(verdict, label)` pairs with `true` as the positive
/// class. Undefined ratios are 0.
pub fn classification_metrics(judgments: &[(bool, bool)]) -> Result<ClassificationMetrics> {
    if judgments.is_empty() {
        return Err(Error::Argument("no judgments to score".into()));
    }
    let count = |v: bool, l: bool| judgments.iter().filter(|&&p| p == (v, l)).count() as f64;
    let (tp, fp, fn_, tn) = (count(true, true), count(true, false), count(false, true), count(false, false));
    let ratio = |a: f64, b: f64| if b == 0.0 { 0.0 } else { a / b };
    let precision = ratio(tp, tp + fp);
    let recall = ratio(tp, tp + fn_);
    Ok(ClassificationMetrics {
        precision,
        recall,
        accuracy: (tp + tn) / judgments.len() as f64,
        f1: ratio(2.0 * precision * recall, precision + recall),
    })
}

/// The persisted per-method report.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Report {
    pub method: String,
    pub aggregate: ExampleMetrics,
    pub per_example: BTreeMap<String, ExampleMetrics>,
    pub n_examples: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub retrieval: Option<RetrievalReport>,
}

impl Report {
    pub fn new(method: impl Into<String>, metrics: MetricsReport, retrieval: Option<RetrievalReport>) -> Self {
        Self {
            method: method.into(),
            aggregate: metrics.aggregate,
            per_example: metrics.per_example,
            n_examples: metrics.n_examples,
            retrieval,
        }
    }
}

pub const QA_HEADER: [&str; 6] = ["Method", "F1", "Precision", "Recall", "Accuracy", "Subspan EM"];
pub const RETRIEVAL_HEADER: [&str; 5] = ["Method", "MRecall@3", "Recall@20", "Recall@40", "Recall@100"];
pub const FAILED: &str = "FAILED";

/// Rounds half-up to two decimals; the epsilon absorbs binary representation
/// error so that e.g. 0.125 rounds up.
pub fn round2(x: f64) -> f64 {
    ((x * 100.0) + 0.5 + 1e-9).floor() / 100.0
}

pub fn format2(x: f64) -> String {
    format!("{:.2}", round2(x))
}

/// A rendered table in two forms.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Leaderboard {
    pub text: String,
    pub tsv: String,
}

/// Renders rows in input order; a `None` row is shown as FAILED.
pub fn render_table(header: &[&str], rows: &[(String, Option<Vec<f64>>)]) -> Leaderboard {
    let cells: Vec<Vec<String>> = std::iter::once(header.iter().map(|h| h.to_string()).collect())
        .chain(rows.iter().map(|(name, values)| {
            let mut row = vec![name.clone()];
            match values {
                Some(v) => row.extend(v.iter().map(|&x| format2(x))),
                None => row.extend((1..header.len()).map(|_| FAILED.to_string())),
            }
            row
        }))
        .collect();

    let mut widths = vec![0usize; header.len()];
    for row in &cells {
        for (w, c) in widths.iter_mut().zip(row) {
            *w = (*w).max(c.chars().count());
        }
    }
    let mut text = String::new();
    let mut tsv = String::new();
    for (i, row) in cells.iter().enumerate() {
        let mut line = String::new();
        for (j, (c, w)) in row.iter().zip(&widths).enumerate() {
            if j == 0 {
                let _ = write!(line, "{c:<w$}");
            } else {
                let _ = write!(line, "  {c:>w$}");
            }
        }
        text.push_str(line.trim_end());
        text.push('\n');
        if i == 0 {
            let total = widths.iter().sum::<usize>() + 2 * (widths.len() - 1);
            text.push_str(&"-".repeat(total));
            text.push('\n');
        }
        tsv.push_str(&row.join("\t"));
        tsv.push('\n');
    }
    Leaderboard { text, tsv }
}

pub fn render_leaderboard(rows: &[(String, Option<ExampleMetrics>)]) -> Leaderboard {
    let rows: Vec<(String, Option<Vec<f64>>)> = rows
        .iter()
        .map(|(n, m)| (n.clone(), m.map(|m| m.values().to_vec())))
        .collect();
    render_table(&QA_HEADER, &rows)
}

pub fn render_retrieval_leaderboard(rows: &[(String, Option<RetrievalReport>)]) -> Leaderboard {
    let rows: Vec<(String, Option<Vec<f64>>)> = rows
        .iter()
        .map(|(n, r)| {
            let values = r.as_ref().map(|r| {
                let get = |m: &BTreeMap<usize, f64>, k| m.get(&k).copied().unwrap_or(f64::NAN);
                vec![get(&r.mrecall_at, 3), get(&r.recall_at, 20), get(&r.recall_at, 40), get(&r.recall_at, 100)]
            });
            (n.clone(), values)
        })
        .collect();
    render_table(&RETRIEVAL_HEADER, &rows)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn golden(m: &[&str], d: &[&str]) -> EffectiveGolden {
        EffectiveGolden {
            match_set: m.iter().map(|s| s.to_string()).collect(),
            debatable_set: d.iter().map(|s| s.to_string()).collect(),
        }
    }

    fn ids(v: &[&str]) -> BTreeSet<String> {
        v.iter().map(|s| s.to_string()).collect()
    }

    fn ranked(v: &[&str]) -> RankedDocs {
        RankedDocs::from_order(v.iter().map(|s| s.to_string()))
    }

    #[test]
    fn set_metric_examples() {
        let m = example_set_metrics(&golden(&["A", "B", "C"], &["D"]), &["A", "B", "D", "E"]);
        assert_eq!(m.precision, 2.0 / 3.0);
        assert_eq!(m.recall, 2.0 / 3.0);
        assert!((m.f1 - 2.0 / 3.0).abs() < 1e-15);
        assert_eq!((m.accuracy, m.subspan_em), (0.0, 0.0));

        let m = example_set_metrics(&golden(&["A", "B"], &[]), &["B", "A"]);
        assert_eq!(m.values(), [1.0; 5]);

        let m = example_set_metrics(&golden(&[], &[]), &["X"]);
        assert_eq!(m.values(), [0.0, 0.0, 1.0, 0.0, 1.0]);

        let empty: [&str; 0] = [];
        assert_eq!(example_set_metrics(&golden(&[], &["D"]), &empty).values(), [1.0; 5]);
        assert_eq!(example_set_metrics(&golden(&["A"], &[]), &empty).values(), [0.0; 5]);
    }

    #[test]
    fn aggregation() {
        let one = ExampleMetrics {
            f1: 1.0,
            ..Default::default()
        };
        let r = aggregate(&[("a".into(), one), ("b".into(), ExampleMetrics::default())]).unwrap();
        assert_eq!(r.aggregate.f1, 0.5);
        assert_eq!(r.n_examples, 2);
        let single = aggregate(&[("a".into(), one)]).unwrap();
        assert_eq!(single.aggregate, one);
        let swapped = aggregate(&[("b".into(), ExampleMetrics::default()), ("a".into(), one)]).unwrap();
        assert_eq!(swapped, r);
        assert!(aggregate(&[]).is_err());
        assert!(aggregate(&[("a".into(), one), ("a".into(), one)]).is_err());
    }

    #[test]
    fn recall_examples() {
        assert_eq!(recall_at_k(&ids(&["d1", "d2"]), &ranked(&["d1", "d3"]), 2), 0.5);
        assert_eq!(recall_at_k(&ids(&[]), &ranked(&["d1"]), 2), 1.0);
        assert_eq!(recall_at_k(&ids(&["d1"]), &ranked(&["d2", "d3"]), 2), 0.0);

        let top3 = ranked(&["a", "x", "b", "c", "d"]);
        assert_eq!(mrecall_at_k(&ids(&["a", "b", "c", "d"]), &top3, 3), 0.0);
        assert_eq!(mrecall_at_k(&ids(&["a", "b"]), &top3, 3), 1.0);
        let all3 = ranked(&["a", "b", "c", "d", "e"]);
        assert_eq!(mrecall_at_k(&ids(&["a", "b", "c", "d", "e"]), &all3, 3), 1.0);
    }

    #[test]
    fn retrieval_report_averages() {
        let items = vec![
            ("q1".to_string(), ids(&["a"]), ranked(&["a"])),
            ("q2".to_string(), ids(&["b"]), ranked(&["a"])),
        ];
        let r = retrieval_report(&items, &RETRIEVAL_KS).unwrap();
        assert_eq!(r.recall_at[&20], 0.5);
        assert_eq!(r.mrecall_at[&3], 0.5);
        assert!(retrieval_report(&[], &RETRIEVAL_KS).is_err());
    }

    #[test]
    fn classification_examples() {
        let all = classification_metrics(&[(true, true), (false, false)]).unwrap();
        assert_eq!((all.precision, all.recall, all.accuracy, all.f1), (1.0, 1.0, 1.0, 1.0));
        let none = classification_metrics(&[(false, true), (false, false)]).unwrap();
        assert_eq!((none.precision, none.recall, none.accuracy, none.f1), (0.0, 0.0, 0.5, 0.0));
        let mut pairs = vec![(true, true); 8];
        pairs.extend([(true, false); 2]);
        pairs.extend([(false, true); 2]);
        pairs.extend([(false, false); 8]);
        let m = classification_metrics(&pairs).unwrap();
        assert_eq!((m.precision, m.recall, m.accuracy), (0.8, 0.8, 0.8));
        assert!((m.f1 - 0.8).abs() < 1e-15);
        assert!(classification_metrics(&[]).is_err());
    }

    #[test]
    fn rounding_and_tables() {
        assert_eq!(format2(0.834999), "0.83");
        assert_eq!(format2(0.835), "0.84");
        assert_eq!(format2(0.125), "0.13");
        assert_eq!(format2(1.0), "1.00");
        assert_eq!(format2(0.0), "0.00");

        let empty = render_leaderboard(&[]);
        assert_eq!(empty.tsv, "Method\tF1\tPrecision\tRecall\tAccuracy\tSubspan EM\n");
        assert_eq!(empty.text.lines().count(), 2);

        let m = ExampleMetrics {
            f1: 0.834999,
            precision: 1.0,
            recall: 0.5,
            accuracy: 0.0,
            subspan_em: 1.0 / 3.0,
        };
        let lb = render_leaderboard(&[("Second".into(), Some(m)), ("First".into(), None)]);
        let lines: Vec<&str> = lb.tsv.lines().collect();
        assert_eq!(lines[1], "Second\t0.83\t1.00\t0.50\t0.00\t0.33");
        assert_eq!(lines[2], "First\tFAILED\tFAILED\tFAILED\tFAILED\tFAILED");
        let text: Vec<&str> = lb.text.lines().collect();
        assert!(text[0].starts_with("Method") && text[0].ends_with("Subspan EM"));
        assert!(text[2].starts_with("Second") && text[3].starts_with("First"));
        assert_eq!(text[0].len(), text[2].len());
    }
}
