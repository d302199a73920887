//! Per-candidate answer verification, both after Justified QA and directly
//! over retrieved documents, plus derivation of labeled verification datasets.

use std::collections::{BTreeSet, HashMap, HashSet};
use std::io::{BufRead, Write};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::corpus::{effective_golden, normalize_name, Corpus, Document, Question};
use crate::error::{Error, Result};
use crate::llm::LlmBackend;
use crate::prompts::{self, VerifyVariant};
use crate::qa::{generate_parsed, parse_candidate_judgment, CandidateJudgment, Generated, ModelSettings, Prediction, PredictionStatus};
use crate::retrieval::RankedDocs;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct VerificationExample {
    pub question_id: String,
    pub question: String,
    pub candidate: String,
    pub evidence_doc_ids: Vec<String>,
    #[serde(default)]
    pub label: Option<bool>,
}

pub fn write_examples<W: Write>(examples: &[VerificationExample], mut w: W) -> Result<()> {
    for ex in examples {
        serde_json::to_writer(&mut w, ex)?;
        w.write_all(b"\n")?;
    }
    Ok(())
}

pub fn read_examples<R: BufRead>(source: R) -> Result<Vec<VerificationExample>> {
    let mut out = Vec::new();
    for (i, line) in source.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(&line).map_err(|e| Error::InputFormat {
            line: i + 1,
            message: e.to_string(),
        })?);
    }
    Ok(out)
}

/// Outcome of verifying one candidate. `parsed` is absent when the output
/// never parsed or the backend failed; the verdict is then false.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Judgment {
    pub candidate: String,
    pub verdict: bool,
    pub parsed: Option<CandidateJudgment>,
    pub raw_output: String,
    #[serde(default)]
    pub diagnostics: Vec<String>,
    #[serde(default)]
    pub status: PredictionStatus,
}

impl Judgment {
    fn rejected(candidate: &str, status: PredictionStatus, diagnostics: Vec<String>) -> Self {
        Self {
            candidate: candidate.to_string(),
            verdict: false,
            parsed: None,
            raw_output: String::new(),
            diagnostics,
            status,
        }
    }
}

pub fn verify_candidate(
    ex: &VerificationExample,
    v: VerifyVariant,
    corpus: &Corpus,
    llm: &dyn LlmBackend,
    settings: &ModelSettings,
) -> Result<Judgment> {
    let docs = corpus.resolve(&ex.evidence_doc_ids)?;
    let prompt = prompts::build_verification_prompt(&docs, &ex.question, &ex.candidate, v)?;
    let cot = v.cot;
    Ok(
        match generate_parsed(llm, settings, prompt, |t| parse_candidate_judgment(t, cot)) {
            Generated::Parsed {
                value: (parsed, extra),
                completion,
                mut diagnostics,
            } => {
                diagnostics.extend(extra);
                Judgment {
                    candidate: ex.candidate.clone(),
                    verdict: parsed.final_judgment.is_true(),
                    parsed: Some(parsed),
                    raw_output: completion.text,
                    diagnostics,
                    status: PredictionStatus::Ok,
                }
            }
            Generated::Unparsed { raw, diagnostics } => Judgment {
                raw_output: raw,
                ..Judgment::rejected(&ex.candidate, PredictionStatus::ParseFallback, diagnostics)
            },
            Generated::Failed { diagnostics, .. } => {
                Judgment::rejected(&ex.candidate, PredictionStatus::BackendError, diagnostics)
            }
        },
    )
}

/// Verifies a batch concurrently; errors become rejected judgments. Output
/// order follows input order.
fn verify_all(
    examples: &[VerificationExample],
    v: VerifyVariant,
    corpus: &Corpus,
    llm: &dyn LlmBackend,
    settings: &ModelSettings,
) -> Vec<Judgment> {
    examples
        .par_iter()
        .map(|ex| {
            verify_candidate(ex, v, corpus, llm, settings).unwrap_or_else(|e| {
                Judgment::rejected(&ex.candidate, PredictionStatus::Ok, vec![format!("example error: {e}")])
            })
        })
        .collect()
}

fn note_verdict(pred: &mut Prediction, j: &Judgment) {
    let verdict = if j.verdict { "TRUE" } else { "FALSE" };
    pred.diagnostics.push(format!("verified {:?}: {verdict}", j.candidate));
    for d in &j.diagnostics {
        pred.diagnostics.push(format!("verify {:?}: {d}", j.candidate));
    }
}

/// Re-judges every candidate of a Justified prediction, including those the QA
/// step marked FALSE, and keeps the ones the verifier accepts.
pub fn verify_prediction(
    q: &Question,
    p: &Prediction,
    v: VerifyVariant,
    corpus: &Corpus,
    llm: &dyn LlmBackend,
    settings: &ModelSettings,
) -> Prediction {
    let mut out = Prediction {
        answers: Vec::new(),
        answer_doc_ids: Vec::new(),
        ..p.clone()
    };
    let Some(justified) = &p.justified else {
        out.diagnostics.push("no justified response to verify".into());
        return out;
    };

    let mut seen = HashSet::new();
    // (candidate, evidence ids); empty evidence means skipped.
    let mut plan: Vec<(String, Vec<String>)> = Vec::new();
    for c in &justified.candidate_answers {
        if !seen.insert(normalize_name(&c.candidate_answer)) {
            continue;
        }
        let mut evidence = union_ids(c.evidence_for.iter().map(|e| e.doc_id.as_str()));
        if evidence.is_empty() {
            evidence = union_ids(c.evidence_against.iter().map(|e| e.doc_id.as_str()));
        }
        let known: Vec<String> = evidence.iter().filter(|id| corpus.get(id).is_some()).cloned().collect();
        for id in evidence.iter().filter(|id| corpus.get(id).is_none()) {
            out.diagnostics.push(format!("candidate {:?}: dropped unknown evidence id {id:?}", c.candidate_answer));
        }
        plan.push((c.candidate_answer.clone(), known));
    }

    let examples: Vec<VerificationExample> = plan
        .iter()
        .filter(|(_, ev)| !ev.is_empty())
        .map(|(cand, ev)| VerificationExample {
            question_id: q.question_id.clone(),
            question: q.text.clone(),
            candidate: cand.clone(),
            evidence_doc_ids: ev.clone(),
            label: None,
        })
        .collect();
    let mut judgments = verify_all(&examples, v, corpus, llm, settings).into_iter();

    for (cand, evidence) in &plan {
        if evidence.is_empty() {
            out.diagnostics.push(format!("candidate {cand:?}: no evidence, rejected without verification"));
            continue;
        }
        let j = judgments.next().expect("one judgment per planned candidate");
        note_verdict(&mut out, &j);
        if out.status == PredictionStatus::Ok {
            out.status = j.status;
        }
        if !j.verdict {
            continue;
        }
        match resolve_candidate(cand, evidence, corpus) {
            Some(doc) => {
                out.push_answer(doc);
            }
            None => out.diagnostics.push(format!("candidate {cand:?}: no matching document")),
        }
    }
    out
}

/// A candidate name maps to the document with that title, else to its first
/// evidence document.
fn resolve_candidate<'c>(name: &str, evidence: &[String], corpus: &'c Corpus) -> Option<&'c Document> {
    corpus.by_title(name).or_else(|| evidence.first().and_then(|id| corpus.get(id)))
}

fn union_ids<'a>(ids: impl Iterator<Item = &'a str>) -> Vec<String> {
    let mut seen = HashSet::new();
    ids.filter(|id| seen.insert(*id)).map(str::to_string).collect()
}

/// Verifies each of the top `k` retrieved documents as a candidate answer,
/// using the document itself as the only evidence.
pub fn verify_retrieved(
    q: &Question,
    ranked: &RankedDocs,
    k: Option<usize>,
    v: VerifyVariant,
    corpus: &Corpus,
    llm: &dyn LlmBackend,
    settings: &ModelSettings,
) -> Prediction {
    let mut out = Prediction::empty(&q.question_id);
    let top = ranked.top(k.unwrap_or(crate::retrieval::DEFAULT_TOP_K));
    let mut docs = Vec::new();
    for entry in top {
        match corpus.get(&entry.doc_id) {
            Some(doc) => docs.push(doc),
            None => out.diagnostics.push(format!("dropped unknown doc id {:?}", entry.doc_id)),
        }
    }
    let examples: Vec<VerificationExample> = docs
        .iter()
        .map(|d| VerificationExample {
            question_id: q.question_id.clone(),
            question: q.text.clone(),
            candidate: d.title.clone(),
            evidence_doc_ids: vec![d.doc_id.clone()],
            label: None,
        })
        .collect();
    for (doc, j) in docs.iter().zip(verify_all(&examples, v, corpus, llm, settings)) {
        note_verdict(&mut out, &j);
        if out.status == PredictionStatus::Ok {
            out.status = j.status;
        }
        if j.verdict {
            out.push_answer(doc);
        }
    }
    out
}

/// Labeled examples: every MATCH golden entity as a positive, and every
/// previously predicted entity that is neither MATCH nor DEBATABLE as a
/// negative. Ordered by question, positives first.
pub fn derive_verification_dataset(
    questions: &[Question],
    prior_predictions: &[Vec<Prediction>],
    corpus: &Corpus,
) -> Result<Vec<VerificationExample>> {
    let index: HashMap<&str, usize> = questions
        .iter()
        .enumerate()
        .map(|(i, q)| (q.question_id.as_str(), i))
        .collect();
    let mut predicted: Vec<Vec<&str>> = vec![Vec::new(); questions.len()];
    for file in prior_predictions {
        for p in file {
            let i = *index.get(p.question_id.as_str()).ok_or_else(|| {
                Error::Argument(format!("prediction for unknown question {:?}", p.question_id))
            })?;
            predicted[i].extend(p.answers.iter().map(String::as_str));
        }
    }

    let mut out = Vec::new();
    for (q, names) in questions.iter().zip(&predicted) {
        let golden = effective_golden(q);
        let mut emitted = BTreeSet::new();
        let mut push = |name: &str, label: bool, out: &mut Vec<VerificationExample>| -> Result<()> {
            let doc = corpus.by_title(name).ok_or_else(|| Error::UnknownEntity {
                question_id: q.question_id.clone(),
                entity: name.to_string(),
            })?;
            if emitted.insert(normalize_name(&doc.title)) {
                out.push(VerificationExample {
                    question_id: q.question_id.clone(),
                    question: q.text.clone(),
                    candidate: doc.title.clone(),
                    evidence_doc_ids: vec![doc.doc_id.clone()],
                    label: Some(label),
                });
            }
            Ok(())
        };
        for answer in &q.golden {
            if golden.match_set.contains(&normalize_name(&answer.entity_name)) {
                push(&answer.entity_name, true, &mut out)?;
            }
        }
        for name in names {
            let key = normalize_name(name);
            if !golden.match_set.contains(&key) && !golden.debatable_set.contains(&key) {
                push(name, false, &mut out)?;
            }
        }
    }
    Ok(out)
}

/// Runs the verifier over labeled examples, returning judgments in input order
/// paired with their labels.
pub fn evaluate_verifier(
    examples: &[VerificationExample],
    v: VerifyVariant,
    corpus: &Corpus,
    llm: &dyn LlmBackend,
    settings: &ModelSettings,
) -> Result<Vec<(Judgment, bool)>> {
    for ex in examples {
        if ex.label.is_none() {
            return Err(Error::Argument(format!(
                "example {:?}/{:?} has no label",
                ex.question_id, ex.candidate
            )));
        }
        corpus.resolve(&ex.evidence_doc_ids)?;
    }
    Ok(verify_all(examples, v, corpus, llm, settings)
        .into_iter()
        .zip(examples.iter().map(|ex| ex.label.unwrap_or(false)))
        .collect())
}
