//! Configuration-driven runs of QA methods over a dataset, with per-method
//! artifacts and sweep-level leaderboards.

use std::collections::HashSet;
use std::fs;
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::sync::Arc;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::corpus::{effective_golden, Corpus, Question, Split};
use crate::error::{Error, Result};
use crate::llm::{InflightLimit, LlmBackend};
use crate::metrics::{self, ExampleMetrics, Leaderboard, MetricsReport, Report, RetrievalReport, RETRIEVAL_KS};
use crate::prompts::{Exemplar, QAFamily, QAVariant, VerifyVariant, DEFAULT_EXEMPLARS};
use crate::qa::{self, ModelSettings, Prediction, PredictionStatus, QaContext};
use crate::retrieval::{build_embedding_index, Embedder, EmbeddingIndex, RankedDocs, RetrievalStrategy, Retriever, DEFAULT_TOP_K};
use crate::verification;

pub const DEFAULT_MAX_INFLIGHT: usize = 8;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MethodConfig {
    pub name: String,
    pub indexing: RetrievalStrategy,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub k: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub qa: Option<QAVariant>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub verification: Option<VerifyVariant>,
}

impl MethodConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Argument(format!("method {:?}: {m}", self.name)));
        if self.name.trim().is_empty() {
            return bad("empty name");
        }
        if self.qa.is_none() && self.verification.is_none() {
            return bad("needs qa, verification, or both");
        }
        if self.k == Some(0) {
            return bad("k must be positive");
        }
        if self.indexing == RetrievalStrategy::NaiveFirstK && self.k.is_none() {
            return bad("naive_first_k needs k");
        }
        if let (Some(qa), Some(_)) = (self.qa, self.verification) {
            if !qa.is_justified() {
                return bad("verification after QA needs a justified QA variant");
            }
        }
        Ok(())
    }

    /// Context size passed to the retriever.
    fn max_results(&self) -> Option<usize> {
        match (self.indexing, self.k) {
            (_, Some(k)) => Some(k),
            (RetrievalStrategy::Embedding, None) => Some(DEFAULT_TOP_K),
            _ => None,
        }
    }
}

pub fn read_configs(path: &Path) -> Result<Vec<MethodConfig>> {
    let configs: Vec<MethodConfig> = serde_json::from_reader(BufReader::new(fs::File::open(path)?))?;
    for c in &configs {
        c.validate()?;
    }
    Ok(configs)
}

/// The eighteen-method comparison matrix: corpus-in-context and RAG variants of
/// Justified QA with and without verification, and RAG with verification only.
pub fn method_matrix() -> Vec<MethodConfig> {
    fn m(name: &str, indexing: RetrievalStrategy, qa: Option<QAVariant>, v: Option<VerifyVariant>) -> MethodConfig {
        MethodConfig {
            name: name.into(),
            indexing,
            k: (indexing == RetrievalStrategy::Embedding).then_some(DEFAULT_TOP_K),
            qa,
            verification: v,
        }
    }
    use RetrievalStrategy::{Embedding, StaticAll};
    let j = |cot, quest| Some(QAVariant::justified(cot, quest));
    let v = |cot, quest| Some(VerifyVariant::new(cot, quest));
    let mut out = Vec::new();
    for (prefix, indexing, baseline) in [
        ("CiC", StaticAll, QAVariant::CIC_BASELINE),
        ("RAG", Embedding, QAVariant::RAR_BASELINE),
    ] {
        out.extend([
            m(&format!("{prefix} Baseline"), indexing, Some(baseline), None),
            m(&format!("{prefix} Justified QA"), indexing, j(false, false), None),
            m(&format!("{prefix} Justified QA + CoT"), indexing, j(true, false), None),
            m(&format!("{prefix} Justified QA + Verification"), indexing, j(false, false), v(false, false)),
            m(&format!("{prefix} Justified QA + CoT + Verification"), indexing, j(true, false), v(true, false)),
            m(&format!("{prefix} Justified QA + Verification + QUEST"), indexing, j(false, true), v(false, true)),
            m(&format!("{prefix} Justified QA + CoT + Verification + QUEST"), indexing, j(true, true), v(true, true)),
        ]);
    }
    out.extend([
        m("RAG + Verification", Embedding, None, v(false, false)),
        m("RAG + Verification (w/ CoT)", Embedding, None, v(true, false)),
        m("RAG + Verification + QUEST", Embedding, None, v(false, true)),
        m("RAG + Verification (w/ CoT) + QUEST", Embedding, None, v(true, true)),
    ]);
    out
}

/// A loaded dataset: the questions to evaluate plus train questions for exemplars.
pub struct Dataset {
    pub corpus: Corpus,
    pub questions: Vec<Question>,
    pub train: Vec<Question>,
    pub corpus_path: String,
    pub questions_path: String,
}

impl Dataset {
    /// Splits `all` into evaluation questions (`split`) and train questions.
    pub fn new(corpus: Corpus, all: Vec<Question>, split: Split, corpus_path: String, questions_path: String) -> Self {
        let (train, rest): (Vec<Question>, Vec<Question>) = all.into_iter().partition(|q| q.split == Split::Train);
        let questions = if split == Split::Train {
            train.clone()
        } else {
            rest.into_iter().filter(|q| q.split == split).collect()
        };
        Self {
            corpus,
            questions,
            train,
            corpus_path,
            questions_path,
        }
    }
}

/// Model access for a run. The index is built on demand when absent.
#[derive(Clone)]
pub struct Backends {
    pub llm: Arc<dyn LlmBackend>,
    pub embedder: Option<Arc<dyn Embedder>>,
    pub index: Option<Arc<EmbeddingIndex>>,
}

#[derive(Debug, Clone)]
pub struct RunOptions {
    pub settings: ModelSettings,
    /// Worker threads and the cap on concurrent LLM calls.
    pub max_inflight: usize,
    pub timestamp: String,
    pub cache_path: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct QuestionStatus {
    pub question_id: String,
    pub status: PredictionStatus,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub method: MethodConfig,
    pub corpus_path: String,
    pub questions_path: String,
    pub model_id: String,
    pub timestamp: String,
    pub cache_path: Option<String>,
    pub statuses: Vec<QuestionStatus>,
    #[serde(default)]
    pub notes: Vec<String>,
}

#[derive(Debug, Clone)]
pub struct MethodResult {
    pub predictions: Vec<Prediction>,
    pub report: Report,
    pub manifest: RunManifest,
}

impl MethodResult {
    pub fn metrics(&self) -> MetricsReport {
        MetricsReport {
            per_example: self.report.per_example.clone(),
            aggregate: self.report.aggregate,
            n_examples: self.report.n_examples,
        }
    }
}

fn exemplars_for(
    cfg: &MethodConfig,
    qa: QAVariant,
    dataset: &Dataset,
    retriever: &Retriever<'_>,
    notes: &mut Vec<String>,
) -> Result<Vec<Exemplar>> {
    if qa.is_justified() {
        return Ok(Vec::new());
    }
    if dataset.train.is_empty() {
        notes.push("no train questions; baseline prompt has no exemplars".into());
    }
    dataset
        .train
        .iter()
        .take(DEFAULT_EXEMPLARS)
        .map(|q| {
            let golden = effective_golden(q);
            let answer_ids = q
                .golden
                .iter()
                .filter(|a| golden.match_set.contains(&crate::corpus::normalize_name(&a.entity_name)))
                .map(|a| {
                    dataset.corpus.by_title(&a.entity_name).map(|d| d.doc_id.clone()).ok_or_else(|| {
                        Error::UnknownEntity {
                            question_id: q.question_id.clone(),
                            entity: a.entity_name.clone(),
                        }
                    })
                })
                .collect::<Result<Vec<_>>>()?;
            let context_doc_ids = match qa.family {
                QAFamily::RarBaseline => Some(
                    retriever
                        .retrieve(&q.text, cfg.max_results())?
                        .doc_ids()
                        .map(str::to_string)
                        .collect(),
                ),
                _ => None,
            };
            Ok(Exemplar {
                question: q.text.clone(),
                context_doc_ids,
                answer_ids,
            })
        })
        .collect()
}

fn run_question(
    cfg: &MethodConfig,
    q: &Question,
    ctx: &QaContext<'_>,
) -> (Prediction, RankedDocs) {
    match cfg.qa {
        Some(strategy) => {
            let p = qa::run_qa(strategy, q, ctx);
            let view = qa::prediction_to_ranked_docs(&p);
            let p = match cfg.verification {
                Some(v) => verification::verify_prediction(q, &p, v, ctx.corpus, ctx.llm, ctx.settings),
                None => p,
            };
            (p, view)
        }
        None => {
            let v = cfg.verification.unwrap_or_default();
            match ctx.retriever.retrieve(&q.text, ctx.max_results) {
                Ok(ranked) => {
                    let p = verification::verify_retrieved(
                        q,
                        &ranked,
                        ctx.max_results,
                        v,
                        ctx.corpus,
                        ctx.llm,
                        ctx.settings,
                    );
                    (p, ranked)
                }
                Err(e) => {
                    let mut p = Prediction::empty(&q.question_id);
                    p.status = PredictionStatus::BackendError;
                    p.diagnostics.push(format!("retrieval failed: {e}"));
                    (p, RankedDocs::default())
                }
            }
        }
    }
}

/// Runs one method over every evaluation question. Per-question failures are
/// recorded in the manifest; only setup problems are errors.
pub fn run_method(cfg: &MethodConfig, dataset: &Dataset, backends: &Backends, opts: &RunOptions) -> Result<MethodResult> {
    cfg.validate()?;
    if dataset.questions.is_empty() {
        return Err(Error::Argument("no questions to evaluate".into()));
    }
    let workers = opts.max_inflight.max(1);
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers)
        .build()
        .map_err(|e| Error::Argument(format!("thread pool: {e}")))?;
    let llm = InflightLimit::new(backends.llm.clone(), workers);

    let embedding: Option<(Arc<EmbeddingIndex>, &dyn Embedder)> = match cfg.indexing {
        RetrievalStrategy::Embedding => {
            let embedder = backends
                .embedder
                .as_deref()
                .ok_or_else(|| Error::Argument("embedding retrieval needs an embedder".into()))?;
            let index = match &backends.index {
                Some(index) => index.clone(),
                None => Arc::new(build_embedding_index(&dataset.corpus, embedder)?),
            };
            Some((index, embedder))
        }
        _ => None,
    };
    let retriever = match (&embedding, cfg.indexing) {
        (Some((index, embedder)), _) => Retriever::embedding(&dataset.corpus, index, *embedder),
        (None, RetrievalStrategy::NaiveFirstK) => Retriever::naive_first_k(&dataset.corpus),
        (None, _) => Retriever::static_all(&dataset.corpus),
    };

    let mut notes = Vec::new();
    let exemplars = match cfg.qa {
        Some(qa) => pool.install(|| exemplars_for(cfg, qa, dataset, &retriever, &mut notes))?,
        None => Vec::new(),
    };
    let ctx = QaContext {
        corpus: &dataset.corpus,
        retriever: &retriever,
        llm: &llm,
        settings: &opts.settings,
        max_results: cfg.max_results(),
        exemplars: &exemplars,
    };
    let results: Vec<(Prediction, RankedDocs)> =
        pool.install(|| dataset.questions.par_iter().map(|q| run_question(cfg, q, &ctx)).collect());

    let mut scored = Vec::with_capacity(results.len());
    let mut views = Vec::with_capacity(results.len());
    for (q, (p, view)) in dataset.questions.iter().zip(&results) {
        scored.push((q.question_id.clone(), metrics::score_prediction(q, p)));
        views.push((q.question_id.clone(), metrics::golden_doc_ids(q, &dataset.corpus)?, view.clone()));
    }
    let retrieval = metrics::retrieval_report(&views, &RETRIEVAL_KS)?;
    let report = Report::new(cfg.name.clone(), metrics::aggregate(&scored)?, Some(retrieval));
    let predictions: Vec<Prediction> = results.into_iter().map(|(p, _)| p).collect();
    let manifest = RunManifest {
        method: cfg.clone(),
        corpus_path: dataset.corpus_path.clone(),
        questions_path: dataset.questions_path.clone(),
        model_id: opts.settings.model_id.clone(),
        timestamp: opts.timestamp.clone(),
        cache_path: opts.cache_path.clone(),
        statuses: predictions
            .iter()
            .map(|p| QuestionStatus {
                question_id: p.question_id.clone(),
                status: p.status,
            })
            .collect(),
        notes,
    };
    Ok(MethodResult {
        predictions,
        report,
        manifest,
    })
}

/// Directory name for a method: lowercase alphanumerics joined by `_`.
pub fn method_slug(name: &str) -> String {
    let mut out = String::new();
    for c in name.chars() {
        if c.is_alphanumeric() {
            out.extend(c.to_lowercase());
        } else if !out.is_empty() && !out.ends_with('_') {
            out.push('_');
        }
    }
    while out.ends_with('_') {
        out.pop();
    }
    out
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut w = BufWriter::new(fs::File::create(path)?);
    serde_json::to_writer_pretty(&mut w, value)?;
    w.write_all(b"\n")?;
    w.flush()?;
    Ok(())
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text)?;
    Ok(())
}

/// Writes manifest.json, predictions.jsonl, report.json and leaderboard.tsv.
pub fn write_method_artifacts(dir: &Path, result: &MethodResult) -> Result<()> {
    fs::create_dir_all(dir)?;
    write_json(&dir.join("manifest.json"), &result.manifest)?;
    let mut w = BufWriter::new(fs::File::create(dir.join("predictions.jsonl"))?);
    qa::write_predictions(&result.predictions, &mut w)?;
    w.flush()?;
    write_json(&dir.join("report.json"), &result.report)?;
    let board = metrics::render_leaderboard(&[(result.report.method.clone(), Some(result.report.aggregate))]);
    write_text(&dir.join("leaderboard.tsv"), &board.tsv)
}

#[derive(Debug, Clone)]
pub struct SweepRow {
    pub name: String,
    pub outcome: std::result::Result<MethodResult, String>,
}

#[derive(Debug, Clone)]
pub struct SweepResult {
    pub rows: Vec<SweepRow>,
    pub leaderboard: Leaderboard,
    pub retrieval_leaderboard: Leaderboard,
}

pub fn sweep_leaderboards(rows: &[SweepRow]) -> (Leaderboard, Leaderboard) {
    let qa: Vec<(String, Option<ExampleMetrics>)> = rows
        .iter()
        .map(|r| (r.name.clone(), r.outcome.as_ref().ok().map(|m| m.report.aggregate)))
        .collect();
    let retrieval: Vec<(String, Option<RetrievalReport>)> = rows
        .iter()
        .map(|r| (r.name.clone(), r.outcome.as_ref().ok().and_then(|m| m.report.retrieval.clone())))
        .collect();
    (metrics::render_leaderboard(&qa), metrics::render_retrieval_leaderboard(&retrieval))
}

/// Runs every method in order and persists artifacts under `out`, one
/// directory per method plus sweep-level leaderboards. A failing method is
/// recorded as a FAILED row and the sweep continues.
pub fn sweep(
    configs: &[MethodConfig],
    dataset: &Dataset,
    backends: &Backends,
    opts: &RunOptions,
    out: &Path,
) -> Result<SweepResult> {
    let mut names = HashSet::new();
    let mut slugs = HashSet::new();
    for c in configs {
        if !names.insert(c.name.as_str()) || !slugs.insert(method_slug(&c.name)) {
            return Err(Error::Argument(format!("duplicate method name {:?}", c.name)));
        }
    }
    fs::create_dir_all(out)?;

    let mut backends = backends.clone();
    if backends.index.is_none() && configs.iter().any(|c| c.indexing == RetrievalStrategy::Embedding) {
        if let Some(embedder) = &backends.embedder {
            backends.index = Some(Arc::new(build_embedding_index(&dataset.corpus, embedder.as_ref())?));
        }
    }

    let mut rows = Vec::with_capacity(configs.len());
    for cfg in configs {
        let dir: PathBuf = out.join(method_slug(&cfg.name));
        let outcome = run_method(cfg, dataset, &backends, opts)
            .and_then(|r| write_method_artifacts(&dir, &r).map(|_| r))
            .map_err(|e| e.to_string());
        if let Err(message) = &outcome {
            fs::create_dir_all(&dir)?;
            write_text(&dir.join("error.txt"), &format!("{message}\n"))?;
        }
        rows.push(SweepRow {
            name: cfg.name.clone(),
            outcome,
        });
    }
    let (leaderboard, retrieval_leaderboard) = sweep_leaderboards(&rows);
    write_text(&out.join("leaderboard.tsv"), &leaderboard.tsv)?;
    write_text(&out.join("leaderboard.txt"), &leaderboard.text)?;
    write_text(&out.join("retrieval_leaderboard.tsv"), &retrieval_leaderboard.tsv)?;
    write_text(&out.join("retrieval_leaderboard.txt"), &retrieval_leaderboard.text)?;
    Ok(SweepResult {
        rows,
        leaderboard,
        retrieval_leaderboard,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn matrix_has_eighteen_valid_rows() {
        let methods = method_matrix();
        assert_eq!(methods.len(), 18);
        for m in &methods {
            m.validate().unwrap();
        }
        let names: HashSet<_> = methods.iter().map(|m| method_slug(&m.name)).collect();
        assert_eq!(names.len(), 18);
        let rag_v = methods.iter().find(|m| m.name == "RAG Justified QA + Verification").unwrap();
        assert_eq!(rag_v.k, Some(40));
        assert_eq!(rag_v.qa, Some(QAVariant::justified(false, false)));
        assert_eq!(rag_v.verification, Some(VerifyVariant::BASIC));
        let cic = &methods[0];
        assert_eq!((cic.indexing, cic.k, cic.qa), (RetrievalStrategy::StaticAll, None, Some(QAVariant::CIC_BASELINE)));
        let last = methods.last().unwrap();
        assert_eq!(last.qa, None);
        assert_eq!(last.verification, Some(VerifyVariant::new(true, true)));
    }

    #[test]
    fn shipped_config_matches_matrix() {
        let shipped = read_configs(&Path::new(env!("CARGO_MANIFEST_DIR")).join("configs/methods.json")).unwrap();
        assert_eq!(shipped, method_matrix());
    }

    #[test]
    fn config_validation() {
        let base = MethodConfig {
            name: "x".into(),
            indexing: RetrievalStrategy::StaticAll,
            k: None,
            qa: None,
            verification: None,
        };
        assert!(base.validate().is_err());
        let naive = MethodConfig {
            indexing: RetrievalStrategy::NaiveFirstK,
            qa: Some(QAVariant::CIC_BASELINE),
            ..base.clone()
        };
        assert!(naive.validate().is_err());
        assert!(MethodConfig { k: Some(3), ..naive.clone() }.validate().is_ok());
        assert!(MethodConfig { k: Some(0), ..naive.clone() }.validate().is_err());
        let baseline_verified = MethodConfig {
            qa: Some(QAVariant::RAR_BASELINE),
            verification: Some(VerifyVariant::BASIC),
            ..base.clone()
        };
        assert!(baseline_verified.validate().is_err());
        let json = r#"{"name": "RAG + Verification", "indexing": "embedding_top_k", "k": 40, "verification": {"cot": false, "quest_instruction": false}}"#;
        let parsed: MethodConfig = serde_json::from_str(json).unwrap();
        assert_eq!(parsed.indexing, RetrievalStrategy::Embedding);
        parsed.validate().unwrap();
    }

    #[test]
    fn slugs() {
        assert_eq!(method_slug("RAG + Verification (w/ CoT) + QUEST"), "rag_verification_w_cot_quest");
        assert_eq!(method_slug("CiC Baseline"), "cic_baseline");
    }
}
