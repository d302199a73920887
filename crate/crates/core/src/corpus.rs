//! Dataset model: documents, questions, and rating-annotated golden answers.
//!
//! Every candidate entity is represented by exactly one [`Document`]; its
//! `doc_id` doubles as the entity ID and its `title` is the canonical entity
//! name. Corpora delivered as per-page passages are merged with
//! [`merge_passages`] before use.

use std::cmp::Ordering;
use std::collections::{BTreeMap, BTreeSet, HashMap, HashSet};
use std::fmt;
use std::io::{BufRead, Write};

use serde::{Deserialize, Serialize};
use unicode_normalization::UnicodeNormalization;

use crate::error::{Error, Result};

/// Canonical form used for every entity-name comparison: NFC, surrounding
/// whitespace trimmed.
pub fn normalize_name(name: &str) -> String {
    name.trim().nfc().collect()
}

/// Orders doc ids numerically when both parse as unsigned integers, otherwise
/// lexicographically. Numeric ids sort before non-numeric ones.
pub fn compare_doc_ids(a: &str, b: &str) -> Ordering {
    match (a.parse::<u128>(), b.parse::<u128>()) {
        (Ok(x), Ok(y)) => x.cmp(&y).then_with(|| a.cmp(b)),
        (Ok(_), Err(_)) => Ordering::Less,
        (Err(_), Ok(_)) => Ordering::Greater,
        (Err(_), Err(_)) => a.cmp(b),
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Document {
    pub doc_id: String,
    pub title: String,
    pub text: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RawPassage {
    pub doc_id: String,
    pub page_title: String,
    pub passage_index: u64,
    pub text: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum Rating {
    Match,
    Debatable,
    NoMatch,
}

impl fmt::Display for Rating {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Rating::Match => "MATCH",
            Rating::Debatable => "DEBATABLE",
            Rating::NoMatch => "NO_MATCH",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RatedAnswer {
    #[serde(rename = "entity")]
    pub entity_name: String,
    pub rating: Rating,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Test,
    Dev,
    Train,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Question {
    pub question_id: String,
    pub text: String,
    pub split: Split,
    pub golden: Vec<RatedAnswer>,
}

/// Golden entities after rating resolution. NO_MATCH entries appear in neither set.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct EffectiveGolden {
    pub match_set: BTreeSet<String>,
    pub debatable_set: BTreeSet<String>,
}

pub fn effective_golden(q: &Question) -> EffectiveGolden {
    let mut out = EffectiveGolden::default();
    for answer in &q.golden {
        let name = normalize_name(&answer.entity_name);
        match answer.rating {
            Rating::Match => {
                out.match_set.insert(name);
            }
            Rating::Debatable => {
                out.debatable_set.insert(name);
            }
            Rating::NoMatch => {}
        }
    }
    out
}

/// An immutable, validated document collection with id and title lookups.
#[derive(Debug, Clone, Default)]
pub struct Corpus {
    documents: Vec<Document>,
    by_id: HashMap<String, usize>,
    by_title: HashMap<String, usize>,
}

impl PartialEq for Corpus {
    fn eq(&self, other: &Self) -> bool {
        self.documents == other.documents
    }
}

impl Corpus {
    /// Builds a corpus, normalizing titles and rejecting duplicate ids or titles.
    pub fn new(documents: Vec<Document>) -> Result<Self> {
        let mut by_id = HashMap::with_capacity(documents.len());
        let mut by_title = HashMap::with_capacity(documents.len());
        let mut docs = Vec::with_capacity(documents.len());
        for (i, mut doc) in documents.into_iter().enumerate() {
            if doc.doc_id.is_empty() {
                return Err(Error::Argument(format!("document {i} has an empty doc_id")));
            }
            doc.title = normalize_name(&doc.title);
            if by_id.insert(doc.doc_id.clone(), i).is_some() {
                return Err(Error::DuplicateDocId(doc.doc_id));
            }
            if by_title.insert(doc.title.clone(), i).is_some() {
                return Err(Error::DuplicateTitle(doc.title));
            }
            docs.push(doc);
        }
        Ok(Self {
            documents: docs,
            by_id,
            by_title,
        })
    }

    pub fn documents(&self) -> &[Document] {
        &self.documents
    }

    pub fn len(&self) -> usize {
        self.documents.len()
    }

    pub fn is_empty(&self) -> bool {
        self.documents.is_empty()
    }

    pub fn get(&self, doc_id: &str) -> Option<&Document> {
        self.by_id.get(doc_id).map(|&i| &self.documents[i])
    }

    /// Looks a document up by entity name (normalized before comparison).
    pub fn by_title(&self, name: &str) -> Option<&Document> {
        self.by_title
            .get(&normalize_name(name))
            .map(|&i| &self.documents[i])
    }

    pub fn title_of(&self, doc_id: &str) -> Option<&str> {
        self.get(doc_id).map(|d| d.title.as_str())
    }

    /// Resolves entity names to doc ids. Fails on the first unknown name.
    pub fn ids_for<'a, I>(&self, names: I) -> Result<BTreeSet<String>>
    where
        I: IntoIterator<Item = &'a String>,
    {
        names
            .into_iter()
            .map(|n| {
                self.by_title(n)
                    .map(|d| d.doc_id.clone())
                    .ok_or_else(|| Error::UnknownEntity {
                        question_id: String::new(),
                        entity: n.clone(),
                    })
            })
            .collect()
    }

    /// Fetches documents for the given ids, in the given order.
    pub fn resolve(&self, doc_ids: &[String]) -> Result<Vec<&Document>> {
        doc_ids
            .iter()
            .map(|id| self.get(id).ok_or_else(|| Error::UnknownDocId(id.clone())))
            .collect()
    }

    /// Writes the corpus in the merged JSONL format.
    pub fn write_jsonl<W: Write>(&self, mut w: W) -> Result<()> {
        for doc in &self.documents {
            serde_json::to_writer(&mut w, doc)?;
            w.write_all(b"\n")?;
        }
        Ok(())
    }
}

/// Merges per-page passages into one document per page.
///
/// Passages are ordered by `passage_index` and joined with a blank line. The
/// merged document takes the smallest doc id of its passages. Documents keep the
/// order in which their page first appears in the input.
pub fn merge_passages(passages: Vec<RawPassage>) -> Result<Corpus> {
    if passages.is_empty() {
        return Err(Error::Argument("no passages to merge".into()));
    }
    let mut order: Vec<String> = Vec::new();
    let mut groups: HashMap<String, BTreeMap<u64, RawPassage>> = HashMap::new();
    for p in passages {
        let title = normalize_name(&p.page_title);
        let group = groups.entry(title.clone()).or_insert_with(|| {
            order.push(title.clone());
            BTreeMap::new()
        });
        let idx = p.passage_index;
        if group.insert(idx, p).is_some() {
            return Err(Error::InputFormat {
                line: 0,
                message: format!("duplicate passage {idx} for page {title:?}"),
            });
        }
    }
    let documents = order
        .into_iter()
        .map(|title| {
            let group = groups.remove(&title).unwrap_or_default();
            let doc_id = group
                .values()
                .map(|p| p.doc_id.as_str())
                .min_by(|a, b| compare_doc_ids(a, b))
                .unwrap_or_default()
                .to_string();
            let text = group
                .into_values()
                .map(|p| p.text)
                .collect::<Vec<_>>()
                .join("\n\n");
            Document {
                doc_id,
                title,
                text,
            }
        })
        .collect();
    Corpus::new(documents)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CorpusFormat {
    Merged,
    Passages,
}

#[derive(Deserialize)]
struct MergedLine {
    doc_id: String,
    title: String,
    text: String,
}

fn read_jsonl<R: BufRead, T: for<'de> Deserialize<'de>>(source: R) -> Result<Vec<(usize, T)>> {
    let mut out = Vec::new();
    for (i, line) in source.lines().enumerate() {
        let line = line?;
        let lineno = i + 1;
        if line.trim().is_empty() {
            continue;
        }
        let value = serde_json::from_str(&line).map_err(|e| Error::InputFormat {
            line: lineno,
            message: e.to_string(),
        })?;
        out.push((lineno, value));
    }
    Ok(out)
}

pub fn load_corpus<R: BufRead>(source: R, format: CorpusFormat) -> Result<Corpus> {
    match format {
        CorpusFormat::Merged => {
            let lines: Vec<(usize, MergedLine)> = read_jsonl(source)?;
            let mut seen_ids = HashSet::new();
            let mut seen_titles = HashSet::new();
            let mut docs = Vec::with_capacity(lines.len());
            for (lineno, l) in lines {
                if l.doc_id.is_empty() {
                    return Err(Error::InputFormat {
                        line: lineno,
                        message: "empty doc_id".into(),
                    });
                }
                if !seen_ids.insert(l.doc_id.clone()) {
                    return Err(Error::InputFormat {
                        line: lineno,
                        message: format!("duplicate doc_id {:?}", l.doc_id),
                    });
                }
                if !seen_titles.insert(normalize_name(&l.title)) {
                    return Err(Error::InputFormat {
                        line: lineno,
                        message: format!("duplicate title {:?}", l.title),
                    });
                }
                docs.push(Document {
                    doc_id: l.doc_id,
                    title: l.title,
                    text: l.text,
                });
            }
            Corpus::new(docs)
        }
        CorpusFormat::Passages => {
            let lines: Vec<(usize, RawPassage)> = read_jsonl(source)?;
            let mut seen = HashSet::new();
            for (lineno, p) in &lines {
                if !seen.insert((normalize_name(&p.page_title), p.passage_index)) {
                    return Err(Error::InputFormat {
                        line: *lineno,
                        message: format!(
                            "duplicate passage {} for page {:?}",
                            p.passage_index, p.page_title
                        ),
                    });
                }
            }
            merge_passages(lines.into_iter().map(|(_, p)| p).collect())
        }
    }
}

/// Loads questions and checks every golden entity against the corpus.
pub fn load_questions<R: BufRead>(source: R, corpus: &Corpus) -> Result<Vec<Question>> {
    let lines: Vec<(usize, serde_json::Value)> = read_jsonl(source)?;
    let mut out = Vec::with_capacity(lines.len());
    let mut ids = HashSet::new();
    for (lineno, value) in lines {
        let mut q: Question = serde_json::from_value(value).map_err(|e| Error::InputFormat {
            line: lineno,
            message: e.to_string(),
        })?;
        if !ids.insert(q.question_id.clone()) {
            return Err(Error::InputFormat {
                line: lineno,
                message: format!("duplicate question_id {:?}", q.question_id),
            });
        }
        let mut names = HashSet::new();
        for answer in &mut q.golden {
            answer.entity_name = normalize_name(&answer.entity_name);
            if corpus.by_title(&answer.entity_name).is_none() {
                return Err(Error::UnknownEntity {
                    question_id: q.question_id.clone(),
                    entity: answer.entity_name.clone(),
                });
            }
            if !names.insert(answer.entity_name.clone()) {
                return Err(Error::InputFormat {
                    line: lineno,
                    message: format!("golden entity {:?} listed twice", answer.entity_name),
                });
            }
        }
        out.push(q);
    }
    Ok(out)
}

pub fn write_questions<W: Write>(questions: &[Question], mut w: W) -> Result<()> {
    for q in questions {
        serde_json::to_writer(&mut w, q)?;
        w.write_all(b"\n")?;
    }
    Ok(())
}
