//! Indexing and retrieval strategies behind one retriever contract.
//!
//! Three strategies are supported: the whole corpus (corpus-in-context), the
//! first K documents in corpus order (a naive baseline), and brute-force dot
//! product top-K over document embeddings.

use std::cmp::Ordering;
use std::collections::HashMap;
use std::io::{BufRead, Write};
use std::sync::{Arc, Mutex};
use std::time::Duration;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::corpus::{compare_doc_ids, Corpus, Document};
use crate::error::{Error, Result};
use crate::http::{self, RetryPolicy};

/// Default K for retrieve-then-read strategies.
pub const DEFAULT_TOP_K: usize = 40;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoredDoc {
    pub doc_id: String,
    pub score: f64,
}

/// Documents in rank order: scores non-increasing, ties by ascending doc id.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct RankedDocs {
    pub entries: Vec<ScoredDoc>,
}

impl RankedDocs {
    /// Ranks a list of ids as given, with uniformly descending pseudo-scores.
    pub fn from_order(ids: impl IntoIterator<Item = String>) -> Self {
        let ids: Vec<String> = ids.into_iter().collect();
        let n = ids.len();
        Self {
            entries: ids
                .into_iter()
                .enumerate()
                .map(|(i, doc_id)| ScoredDoc {
                    doc_id,
                    score: (n - i) as f64,
                })
                .collect(),
        }
    }

    pub fn doc_ids(&self) -> impl Iterator<Item = &str> {
        self.entries.iter().map(|e| e.doc_id.as_str())
    }

    pub fn top(&self, k: usize) -> &[ScoredDoc] {
        &self.entries[..k.min(self.entries.len())]
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}

pub trait Embedder: Send + Sync {
    fn dimension(&self) -> usize;
    fn embed(&self, texts: &[String]) -> Result<Vec<Vec<f64>>>;
}

/// Embedding backend configuration, as read from JSON.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum EmbedderSpec {
    /// Feature-hashing bag of words; offline and fully deterministic.
    DeterministicTest { dimension: usize },
    Http {
        dimension: usize,
        endpoint: String,
        #[serde(default)]
        auth_env: Option<String>,
        #[serde(default = "default_batch")]
        batch_size: usize,
        #[serde(default = "default_retries")]
        max_retries: u32,
        #[serde(default = "default_inflight")]
        max_inflight: usize,
        #[serde(default = "default_timeout")]
        timeout_secs: u64,
    },
}

fn default_batch() -> usize {
    32
}
fn default_retries() -> u32 {
    3
}
fn default_inflight() -> usize {
    4
}
fn default_timeout() -> u64 {
    120
}

impl EmbedderSpec {
    pub fn dimension(&self) -> usize {
        match self {
            EmbedderSpec::DeterministicTest { dimension } | EmbedderSpec::Http { dimension, .. } => {
                *dimension
            }
        }
    }

    pub fn build(&self) -> Result<Arc<dyn Embedder>> {
        if self.dimension() == 0 {
            return Err(Error::Argument("embedding dimension must be positive".into()));
        }
        Ok(match self {
            EmbedderSpec::DeterministicTest { dimension } => Arc::new(HashingEmbedder::new(*dimension)),
            EmbedderSpec::Http {
                dimension,
                endpoint,
                auth_env,
                batch_size,
                max_retries,
                max_inflight,
                timeout_secs,
            } => Arc::new(HttpEmbedder {
                dimension: *dimension,
                endpoint: endpoint.clone(),
                token: http::token_from_env(auth_env.as_deref())?,
                batch_size: (*batch_size).max(1),
                max_inflight: (*max_inflight).max(1),
                retry: RetryPolicy {
                    max_retries: *max_retries,
                    ..RetryPolicy::default()
                },
                agent: http::agent(Duration::from_secs(*timeout_secs)),
                cache: Mutex::new(HashMap::new()),
            }),
        })
    }
}

/// Embeds `texts` with a backend built from `spec`.
pub fn embed(texts: &[String], spec: &EmbedderSpec) -> Result<Vec<Vec<f64>>> {
    spec.build()?.embed(texts)
}

fn check_texts(texts: &[String]) -> Result<()> {
    match texts.iter().position(|t| t.is_empty()) {
        Some(i) => Err(Error::Argument(format!("text {i} is empty"))),
        None => Ok(()),
    }
}

/// Maps each lowercase alphanumeric token to bucket
/// `u64::from_be_bytes(sha256(token)[..8]) % dimension`, counts tokens per
/// bucket, and L2-normalizes the counts.
#[derive(Debug, Clone)]
pub struct HashingEmbedder {
    dimension: usize,
}

impl HashingEmbedder {
    pub fn new(dimension: usize) -> Self {
        Self { dimension }
    }

    pub fn bucket(&self, token: &str) -> usize {
        let digest = Sha256::digest(token.as_bytes());
        let mut head = [0u8; 8];
        head.copy_from_slice(&digest[..8]);
        (u64::from_be_bytes(head) % self.dimension as u64) as usize
    }

    pub fn embed_one(&self, text: &str) -> Vec<f64> {
        let mut v = vec![0.0; self.dimension];
        for token in text
            .split(|c: char| !c.is_alphanumeric())
            .filter(|t| !t.is_empty())
        {
            v[self.bucket(&token.to_lowercase())] += 1.0;
        }
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm > 0.0 {
            v.iter_mut().for_each(|x| *x /= norm);
        }
        v
    }
}

impl Embedder for HashingEmbedder {
    fn dimension(&self) -> usize {
        self.dimension
    }

    fn embed(&self, texts: &[String]) -> Result<Vec<Vec<f64>>> {
        check_texts(texts)?;
        Ok(texts.iter().map(|t| self.embed_one(t)).collect())
    }
}

#[derive(Serialize)]
struct EmbedRequest<'a> {
    texts: &'a [String],
}

#[derive(Deserialize)]
struct EmbedResponse {
    vectors: Vec<Vec<f64>>,
}

/// Client for `POST {"texts": [..]} -> {"vectors": [[..]]}` embedding services.
/// Vectors are cached per text for the lifetime of the embedder.
pub struct HttpEmbedder {
    dimension: usize,
    endpoint: String,
    token: Option<String>,
    batch_size: usize,
    max_inflight: usize,
    retry: RetryPolicy,
    agent: ureq::Agent,
    cache: Mutex<HashMap<String, Vec<f64>>>,
}

impl HttpEmbedder {
    fn embed_batch(&self, batch: &[String]) -> Result<Vec<Vec<f64>>> {
        let resp: EmbedResponse = self.retry.run(|| {
            http::post_json(
                &self.agent,
                &self.endpoint,
                self.token.as_deref(),
                &EmbedRequest { texts: batch },
            )
        })?;
        if resp.vectors.len() != batch.len() {
            return Err(Error::backend(
                format!("expected {} vectors, got {}", batch.len(), resp.vectors.len()),
                false,
            ));
        }
        if let Some(v) = resp.vectors.iter().find(|v| v.len() != self.dimension) {
            return Err(Error::backend(
                format!("expected dimension {}, got {}", self.dimension, v.len()),
                false,
            ));
        }
        Ok(resp.vectors)
    }
}

impl Embedder for HttpEmbedder {
    fn dimension(&self) -> usize {
        self.dimension
    }

    fn embed(&self, texts: &[String]) -> Result<Vec<Vec<f64>>> {
        check_texts(texts)?;
        let missing: Vec<String> = {
            let cache = self.cache.lock().expect("embedding cache poisoned");
            let mut seen = std::collections::HashSet::new();
            texts
                .iter()
                .filter(|t| !cache.contains_key(*t) && seen.insert(t.as_str()))
                .cloned()
                .collect()
        };
        if !missing.is_empty() {
            let pool = rayon::ThreadPoolBuilder::new()
                .num_threads(self.max_inflight)
                .build()
                .map_err(|e| Error::Argument(e.to_string()))?;
            let batches: Vec<Vec<Vec<f64>>> = pool.install(|| {
                missing
                    .par_chunks(self.batch_size)
                    .map(|b| self.embed_batch(b))
                    .collect::<Result<_>>()
            })?;
            let mut cache = self.cache.lock().expect("embedding cache poisoned");
            for (text, vector) in missing.into_iter().zip(batches.into_iter().flatten()) {
                cache.insert(text, vector);
            }
        }
        let cache = self.cache.lock().expect("embedding cache poisoned");
        Ok(texts.iter().map(|t| cache[t].clone()).collect())
    }
}

/// Document vectors keyed by doc id, in corpus order.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingIndex {
    dimension: usize,
    entries: Vec<(String, Vec<f64>)>,
}

#[derive(Serialize, Deserialize)]
struct IndexLine {
    doc_id: String,
    vector: Vec<f64>,
}

impl EmbeddingIndex {
    pub fn new(dimension: usize, entries: Vec<(String, Vec<f64>)>) -> Result<Self> {
        if dimension == 0 {
            return Err(Error::Argument("embedding dimension must be positive".into()));
        }
        if let Some((id, v)) = entries.iter().find(|(_, v)| v.len() != dimension) {
            return Err(Error::Argument(format!(
                "vector for {id:?} has dimension {}, expected {dimension}",
                v.len()
            )));
        }
        Ok(Self { dimension, entries })
    }

    pub fn dimension(&self) -> usize {
        self.dimension
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn vector(&self, doc_id: &str) -> Option<&[f64]> {
        self.entries
            .iter()
            .find(|(id, _)| id == doc_id)
            .map(|(_, v)| v.as_slice())
    }

    pub fn write_jsonl<W: Write>(&self, mut w: W) -> Result<()> {
        for (doc_id, vector) in &self.entries {
            serde_json::to_writer(
                &mut w,
                &IndexLine {
                    doc_id: doc_id.clone(),
                    vector: vector.clone(),
                },
            )?;
            w.write_all(b"\n")?;
        }
        Ok(())
    }

    pub fn read_jsonl<R: BufRead>(source: R) -> Result<Self> {
        let mut entries = Vec::new();
        let mut dimension = None;
        for (i, line) in source.lines().enumerate() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let l: IndexLine = serde_json::from_str(&line).map_err(|e| Error::InputFormat {
                line: i + 1,
                message: e.to_string(),
            })?;
            let d = *dimension.get_or_insert(l.vector.len());
            if d != l.vector.len() {
                return Err(Error::InputFormat {
                    line: i + 1,
                    message: format!("vector dimension {} differs from {d}", l.vector.len()),
                });
            }
            entries.push((l.doc_id, l.vector));
        }
        Self::new(dimension.unwrap_or(1), entries)
    }

    /// Full ranking of the indexed documents by dot product with `query`.
    pub fn rank(&self, query: &[f64], max_results: Option<usize>) -> Result<RankedDocs> {
        if query.len() != self.dimension {
            return Err(Error::Argument(format!(
                "query dimension {} does not match index dimension {}",
                query.len(),
                self.dimension
            )));
        }
        let mut scored: Vec<ScoredDoc> = self
            .entries
            .iter()
            .map(|(doc_id, v)| ScoredDoc {
                doc_id: doc_id.clone(),
                score: dot(query, v),
            })
            .collect();
        scored.sort_by(rank_order);
        if let Some(k) = max_results {
            scored.truncate(k);
        }
        Ok(RankedDocs { entries: scored })
    }
}

fn rank_order(a: &ScoredDoc, b: &ScoredDoc) -> Ordering {
    b.score
        .total_cmp(&a.score)
        .then_with(|| compare_doc_ids(&a.doc_id, &b.doc_id))
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Text embedded for a document: title, newline, body.
pub fn document_embedding_text(doc: &Document) -> String {
    format!("{}\n{}", doc.title, doc.text)
}

pub fn build_embedding_index(corpus: &Corpus, embedder: &dyn Embedder) -> Result<EmbeddingIndex> {
    if corpus.is_empty() {
        return EmbeddingIndex::new(embedder.dimension(), Vec::new());
    }
    let texts: Vec<String> = corpus.documents().iter().map(document_embedding_text).collect();
    let vectors = embedder.embed(&texts)?;
    EmbeddingIndex::new(
        embedder.dimension(),
        corpus
            .documents()
            .iter()
            .map(|d| d.doc_id.clone())
            .zip(vectors)
            .collect(),
    )
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RetrievalStrategy {
    StaticAll,
    NaiveFirstK,
    #[serde(rename = "embedding_top_k", alias = "embedding")]
    Embedding,
}

/// A retriever built once per dataset and shared across questions.
#[derive(Clone)]
pub struct Retriever<'a> {
    strategy: RetrievalStrategy,
    corpus: &'a Corpus,
    embedding: Option<(&'a EmbeddingIndex, &'a dyn Embedder)>,
}

impl<'a> Retriever<'a> {
    pub fn static_all(corpus: &'a Corpus) -> Self {
        Self {
            strategy: RetrievalStrategy::StaticAll,
            corpus,
            embedding: None,
        }
    }

    pub fn naive_first_k(corpus: &'a Corpus) -> Self {
        Self {
            strategy: RetrievalStrategy::NaiveFirstK,
            corpus,
            embedding: None,
        }
    }

    pub fn embedding(corpus: &'a Corpus, index: &'a EmbeddingIndex, embedder: &'a dyn Embedder) -> Self {
        Self {
            strategy: RetrievalStrategy::Embedding,
            corpus,
            embedding: Some((index, embedder)),
        }
    }

    pub fn strategy(&self) -> RetrievalStrategy {
        self.strategy
    }

    pub fn corpus(&self) -> &'a Corpus {
        self.corpus
    }

    /// Retrieves documents for `query`. Omitting `max_results` returns the
    /// whole corpus (fully ranked, for the embedding strategy).
    pub fn retrieve(&self, query: &str, max_results: Option<usize>) -> Result<RankedDocs> {
        if max_results == Some(0) {
            return Err(Error::Argument("max_results must be positive".into()));
        }
        let in_order = |n: usize| RankedDocs {
            entries: self
                .corpus
                .documents()
                .iter()
                .take(n)
                .map(|d| ScoredDoc {
                    doc_id: d.doc_id.clone(),
                    score: 0.0,
                })
                .collect(),
        };
        match self.strategy {
            RetrievalStrategy::StaticAll => Ok(in_order(max_results.unwrap_or(usize::MAX))),
            RetrievalStrategy::NaiveFirstK => {
                let k = max_results
                    .ok_or_else(|| Error::Argument("naive_first_k requires max_results".into()))?;
                Ok(in_order(k))
            }
            RetrievalStrategy::Embedding => {
                let (index, embedder) = self
                    .embedding
                    .ok_or_else(|| Error::Argument("embedding retrieval requires an index".into()))?;
                let q = embedder.embed(&[query.to_string()])?;
                index.rank(&q[0], max_results)
            }
        }
    }
}
