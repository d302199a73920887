//! Running one QA strategy on one question: retrieve, prompt, parse, and map
//! document ids back to entity names.

pub mod parse;

use std::collections::HashSet;
use std::io::{BufRead, Write};

use serde::{Deserialize, Serialize};

use crate::corpus::{Corpus, Document, Question};
use crate::error::{Error, Result};
use crate::llm::{Completion, FinishReason, GenerationRequest, LlmBackend};
use crate::prompts::{self, Exemplar, QAFamily, QAVariant};
use crate::retrieval::{RankedDocs, Retriever};

pub use parse::{
    extract_json_section, parse_baseline_answer, parse_candidate_judgment, parse_justified_response,
    CandidateJudgment, EvidenceRef, FinalJudgment, JustifiedParse, JustifiedResponse,
};

pub const DEFAULT_RETRY_BUDGET: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PredictionStatus {
    #[default]
    Ok,
    /// Output never parsed; the prediction is empty.
    ParseFallback,
    /// The backend failed after its retries; the prediction is empty.
    BackendError,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Prediction {
    pub question_id: String,
    pub answers: Vec<String>,
    pub answer_doc_ids: Vec<String>,
    pub justified: Option<JustifiedResponse>,
    pub diagnostics: Vec<String>,
    pub raw_output: String,
    #[serde(default)]
    pub status: PredictionStatus,
}

impl Prediction {
    pub fn empty(question_id: impl Into<String>) -> Self {
        Self {
            question_id: question_id.into(),
            answers: Vec::new(),
            answer_doc_ids: Vec::new(),
            justified: None,
            diagnostics: Vec::new(),
            raw_output: String::new(),
            status: PredictionStatus::Ok,
        }
    }

    /// Appends an answer unless its title is already present.
    pub fn push_answer(&mut self, doc: &Document) -> bool {
        if self.answers.contains(&doc.title) {
            return false;
        }
        self.answers.push(doc.title.clone());
        self.answer_doc_ids.push(doc.doc_id.clone());
        true
    }
}

pub fn write_predictions<W: Write>(predictions: &[Prediction], mut w: W) -> Result<()> {
    for p in predictions {
        serde_json::to_writer(&mut w, p)?;
        w.write_all(b"\n")?;
    }
    Ok(())
}

pub fn read_predictions<R: BufRead>(source: R) -> Result<Vec<Prediction>> {
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

/// Model settings shared by every generation call in a run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelSettings {
    pub model_id: String,
    pub temperature: f64,
    pub max_output_tokens: u32,
    pub retry_budget: u32,
}

impl ModelSettings {
    pub fn new(model_id: impl Into<String>) -> Self {
        Self {
            model_id: model_id.into(),
            temperature: 0.0,
            max_output_tokens: 8192,
            retry_budget: DEFAULT_RETRY_BUDGET,
        }
    }

    pub fn request(&self, prompt: String) -> GenerationRequest {
        GenerationRequest {
            prompt,
            model_id: self.model_id.clone(),
            temperature: self.temperature,
            max_output_tokens: self.max_output_tokens,
            attempt: 0,
        }
    }
}

/// Outcome of [`generate_parsed`].
pub(crate) enum Generated<T> {
    Parsed { value: T, completion: Completion, diagnostics: Vec<String> },
    Unparsed { raw: String, diagnostics: Vec<String> },
    Failed { diagnostics: Vec<String> },
}

/// Generates and parses, retrying parse failures up to the retry budget with
/// the same prompt under a new attempt ordinal.
pub(crate) fn generate_parsed<T>(
    llm: &dyn LlmBackend,
    settings: &ModelSettings,
    prompt: String,
    mut parse: impl FnMut(&str) -> Result<T>,
) -> Generated<T> {
    let base = settings.request(prompt);
    let mut diagnostics = Vec::new();
    let mut last_raw = String::new();
    for attempt in 0..=settings.retry_budget {
        let completion = match crate::llm::generate(&base.with_attempt(attempt), llm) {
            Ok(c) => c,
            Err(error) => {
                diagnostics.push(format!("backend error: {error}"));
                return Generated::Failed { diagnostics };
            }
        };
        if completion.finish_reason == FinishReason::Length {
            diagnostics.push(format!("attempt {attempt}: output truncated at token limit"));
        }
        match parse(&completion.text) {
            Ok(value) => {
                return Generated::Parsed {
                    value,
                    completion,
                    diagnostics,
                }
            }
            Err(e) => {
                diagnostics.push(format!("attempt {attempt}: {e}"));
                last_raw = completion.text;
            }
        }
    }
    Generated::Unparsed {
        raw: last_raw,
        diagnostics,
    }
}

/// Everything a QA strategy needs besides the question.
pub struct QaContext<'a> {
    pub corpus: &'a Corpus,
    pub retriever: &'a Retriever<'a>,
    pub llm: &'a dyn LlmBackend,
    pub settings: &'a ModelSettings,
    /// Context size for the question; `None` takes the retriever's full output.
    pub max_results: Option<usize>,
    /// Few-shot exemplars for the baseline families.
    pub exemplars: &'a [Exemplar],
}

/// Runs one QA strategy on one question. Failures are recorded on the
/// returned prediction rather than propagated.
pub fn run_qa(strategy: QAVariant, q: &Question, ctx: &QaContext<'_>) -> Prediction {
    let mut pred = Prediction::empty(&q.question_id);
    let ranked = match ctx.retriever.retrieve(&q.text, ctx.max_results) {
        Ok(r) => r,
        Err(e) => {
            pred.status = PredictionStatus::BackendError;
            pred.diagnostics.push(format!("retrieval failed: {e}"));
            return pred;
        }
    };
    let docs: Vec<&Document> = ranked.doc_ids().filter_map(|id| ctx.corpus.get(id)).collect();
    let prompt = match strategy.family {
        QAFamily::Justified => prompts::build_justified_prompt(&docs, &q.text, strategy),
        family => prompts::build_baseline_prompt(family, &docs, ctx.exemplars, &q.text, ctx.corpus),
    };
    let prompt = match prompt {
        Ok(p) => p,
        Err(e) => {
            pred.status = PredictionStatus::BackendError;
            pred.diagnostics.push(format!("prompt construction failed: {e}"));
            return pred;
        }
    };

    if strategy.is_justified() {
        let cot = strategy.cot;
        match generate_parsed(ctx.llm, ctx.settings, prompt, |t| parse_justified_response(t, cot)) {
            Generated::Parsed {
                value,
                completion,
                diagnostics,
            } => {
                pred.diagnostics = diagnostics;
                pred.raw_output = completion.text;
                resolve_justified(&mut pred, value, ctx.corpus);
            }
            Generated::Unparsed { raw, diagnostics } => {
                pred.status = PredictionStatus::ParseFallback;
                pred.diagnostics = diagnostics;
                pred.raw_output = raw;
            }
            Generated::Failed { diagnostics, .. } => {
                pred.status = PredictionStatus::BackendError;
                pred.diagnostics = diagnostics;
            }
        }
    } else {
        // Baseline parsing degrades instead of failing, so it never retries.
        match generate_parsed(ctx.llm, ctx.settings, prompt, |t| Ok(parse_baseline_answer(t))) {
            Generated::Parsed {
                value,
                completion,
                diagnostics,
            } => {
                pred.diagnostics = diagnostics;
                pred.diagnostics.extend(value.diagnostics);
                pred.raw_output = completion.text;
                for id in &value.doc_ids {
                    match ctx.corpus.get(id) {
                        Some(doc) => {
                            pred.push_answer(doc);
                        }
                        None => pred.diagnostics.push(format!("dropped unknown doc id {id:?}")),
                    }
                }
            }
            Generated::Unparsed { raw, diagnostics } => {
                pred.status = PredictionStatus::ParseFallback;
                pred.diagnostics = diagnostics;
                pred.raw_output = raw;
            }
            Generated::Failed { diagnostics, .. } => {
                pred.status = PredictionStatus::BackendError;
                pred.diagnostics = diagnostics;
            }
        }
    }
    pred
}

/// Final answers come from `answer_doc_ids`; when those are absent, the
/// `answer` names are matched against corpus titles.
fn resolve_justified(pred: &mut Prediction, parsed: JustifiedParse, corpus: &Corpus) {
    pred.diagnostics.extend(parsed.diagnostics);
    let response = parsed.response;
    if parsed.ids_missing {
        for name in &response.answer {
            match corpus.by_title(name) {
                Some(doc) => {
                    pred.push_answer(doc);
                }
                None => pred.diagnostics.push(format!("dropped answer {name:?}: not a corpus title")),
            }
        }
    } else {
        for id in &response.answer_doc_ids {
            match corpus.get(id) {
                Some(doc) => {
                    pred.push_answer(doc);
                }
                None => pred.diagnostics.push(format!("dropped unknown doc id {id:?}")),
            }
        }
    }
    pred.justified = Some(response);
}

/// Views a prediction as a retrieval result. Justified predictions rank every
/// cited evidence document in first-appearance order, then any remaining
/// answer documents; baseline predictions rank their answer documents.
pub fn prediction_to_ranked_docs(p: &Prediction) -> RankedDocs {
    let mut seen = HashSet::new();
    let mut ids = Vec::new();
    if let Some(j) = &p.justified {
        for c in &j.candidate_answers {
            for e in &c.evidence_for {
                if seen.insert(e.doc_id.clone()) {
                    ids.push(e.doc_id.clone());
                }
            }
        }
    }
    for id in &p.answer_doc_ids {
        if seen.insert(id.clone()) {
            ids.push(id.clone());
        }
    }
    RankedDocs::from_order(ids)
}
