//! Prompt rendering for every QA and verification variant.
//!
//! The Justified QA and verification prompts are fixed texts stored under
//! `templates/`; the set-semantics instruction bullet is appended to their
//! "Detailed instructions" list on request. The retrieve-and-read and
//! corpus-in-context baseline framing is this crate's own, golden-filed template.

use serde::{Deserialize, Serialize};

use crate::corpus::{Corpus, Document};
use crate::error::{Error, Result};

const DOCUMENT_TEMPLATE: &str = include_str!("../templates/document.txt");
const JUSTIFIED_DEFAULT: &str = include_str!("../templates/justified_default.txt");
const JUSTIFIED_COT: &str = include_str!("../templates/justified_cot.txt");
const VERIFY_GENERIC: &str = include_str!("../templates/verify_generic.txt");
const VERIFY_COT: &str = include_str!("../templates/verify_cot.txt");
const QUEST_BULLET: &str = include_str!("../templates/quest_bullet.txt");

const BASELINE_INSTRUCTIONS: &str = "You will be given a list of documents. Read each of them carefully. \
You will then be given a query, and your task is to find every document in the list that is needed to answer it. \
For each such document, print its TITLE and ID on its own line, then finish with a line starting with \"Final Answer:\" \
that lists the IDs of those documents.";

const BASELINE_ANSWER_HEADER: &str = "The following documents are needed to answer the query:";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum QAFamily {
    CicBaseline,
    RarBaseline,
    Justified,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct QAVariant {
    pub family: QAFamily,
    #[serde(default)]
    pub cot: bool,
    #[serde(default)]
    pub quest_instruction: bool,
}

impl QAVariant {
    pub const CIC_BASELINE: QAVariant = QAVariant {
        family: QAFamily::CicBaseline,
        cot: false,
        quest_instruction: false,
    };
    pub const RAR_BASELINE: QAVariant = QAVariant {
        family: QAFamily::RarBaseline,
        cot: false,
        quest_instruction: false,
    };

    pub const fn justified(cot: bool, quest_instruction: bool) -> Self {
        QAVariant {
            family: QAFamily::Justified,
            cot,
            quest_instruction,
        }
    }

    pub fn is_justified(&self) -> bool {
        self.family == QAFamily::Justified
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
pub struct VerifyVariant {
    #[serde(default)]
    pub cot: bool,
    #[serde(default)]
    pub quest_instruction: bool,
}

impl VerifyVariant {
    pub const BASIC: VerifyVariant = VerifyVariant {
        cot: false,
        quest_instruction: false,
    };

    pub const fn new(cot: bool, quest_instruction: bool) -> Self {
        VerifyVariant { cot, quest_instruction }
    }
}

/// A few-shot example for the baseline prompts.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Exemplar {
    pub question: String,
    /// Retrieved context; required by retrieve-and-read.
    pub context_doc_ids: Option<Vec<String>>,
    pub answer_ids: Vec<String>,
}

pub const DEFAULT_EXEMPLARS: usize = 5;

pub type ExemplarSet = Vec<Exemplar>;

/// Substitutes `{{name}}` placeholders in one pass; substituted values are
/// never rescanned. Unknown placeholders are left as-is.
pub fn render_template(template: &str, vars: &[(&str, &str)]) -> String {
    let mut out = String::with_capacity(template.len());
    let mut rest = template;
    while let Some(start) = rest.find("{{") {
        out.push_str(&rest[..start]);
        let after = &rest[start + 2..];
        match after.find("}}") {
            Some(end) => {
                let name = &after[..end];
                match vars.iter().find(|(k, _)| *k == name) {
                    Some((_, v)) => out.push_str(v),
                    None => {
                        out.push_str("{{");
                        out.push_str(name);
                        out.push_str("}}");
                    }
                }
                rest = &after[end + 2..];
            }
            None => {
                out.push_str(&rest[start..]);
                rest = "";
            }
        }
    }
    out.push_str(rest);
    out
}

pub fn render_document(doc: &Document) -> String {
    render_template(
        DOCUMENT_TEMPLATE,
        &[("doc_id", &doc.doc_id), ("title", &doc.title), ("text", &doc.text)],
    )
}

pub fn render_documents<'a>(docs: impl IntoIterator<Item = &'a Document>) -> String {
    docs.into_iter().map(render_document).collect::<Vec<_>>().join("\n")
}

fn extra_instructions(quest_instruction: bool) -> String {
    if quest_instruction {
        format!("\n{QUEST_BULLET}")
    } else {
        String::new()
    }
}

/// Justified QA prompt over an already-rendered documents block.
pub fn render_justified(documents: &str, question: &str, cot: bool, quest_instruction: bool) -> String {
    let template = if cot { JUSTIFIED_COT } else { JUSTIFIED_DEFAULT };
    render_template(
        template,
        &[
            ("extra_instructions", &extra_instructions(quest_instruction)),
            ("documents", documents),
            ("question", question),
        ],
    )
}

pub fn build_justified_prompt(docs: &[&Document], question: &str, v: QAVariant) -> Result<String> {
    if !v.is_justified() {
        return Err(Error::Argument(format!("{:?} is not a justified variant", v.family)));
    }
    Ok(render_justified(
        &render_documents(docs.iter().copied()),
        question,
        v.cot,
        v.quest_instruction,
    ))
}

/// Verification prompt over an already-rendered documents block.
pub fn render_verification(documents: &str, question: &str, candidate: &str, v: VerifyVariant) -> String {
    let template = if v.cot { VERIFY_COT } else { VERIFY_GENERIC };
    render_template(
        template,
        &[
            ("extra_instructions", &extra_instructions(v.quest_instruction)),
            ("documents", documents),
            ("question", question),
            ("candidate_answer", candidate),
        ],
    )
}

pub fn build_verification_prompt(
    docs: &[&Document],
    question: &str,
    candidate: &str,
    v: VerifyVariant,
) -> Result<String> {
    if docs.is_empty() {
        return Err(Error::Argument("verification needs at least one document".into()));
    }
    Ok(render_verification(
        &render_documents(docs.iter().copied()),
        question,
        candidate,
        v,
    ))
}

/// Python-style list of quoted ids: `['192', '74']`.
pub fn format_id_list<S: AsRef<str>>(ids: &[S]) -> String {
    let items: Vec<String> = ids
        .iter()
        .map(|id| format!("'{}'", id.as_ref().replace('\\', "\\\\").replace('\'', "\\'")))
        .collect();
    format!("[{}]", items.join(", "))
}

/// An answer in the baseline output format: one `TITLE | ID` line per
/// document followed by a `Final Answer:` id list.
pub fn render_baseline_answer(answer_docs: &[&Document]) -> String {
    let mut out = String::from(BASELINE_ANSWER_HEADER);
    for d in answer_docs {
        out.push_str(&format!("\nTITLE: {} | ID: {}", d.title, d.doc_id));
    }
    let ids: Vec<&str> = answer_docs.iter().map(|d| d.doc_id.as_str()).collect();
    out.push_str(&format!("\nFinal Answer: {}", format_id_list(&ids)));
    out
}

fn question_block(question: &str) -> String {
    format!("===== Question =====\n{question}\n===== Answer =====")
}

/// Corpus-in-context or retrieve-and-read prompt.
///
/// For corpus-in-context, `docs` is the whole corpus and is rendered once
/// before the exemplars. For retrieve-and-read, `docs` is the question's own
/// retrieved context and every exemplar carries its own context.
pub fn build_baseline_prompt(
    family: QAFamily,
    docs: &[&Document],
    exemplars: &[Exemplar],
    question: &str,
    corpus: &Corpus,
) -> Result<String> {
    let answer_of = |ex: &Exemplar| -> Result<String> {
        Ok(render_baseline_answer(&corpus.resolve(&ex.answer_ids)?))
    };
    let mut sections = vec![BASELINE_INSTRUCTIONS.to_string()];
    match family {
        QAFamily::CicBaseline => {
            sections.push(format!("===== Documents =====\n{}", render_documents(docs.iter().copied())));
            if !exemplars.is_empty() {
                let mut block = String::from("===== Examples =====");
                for ex in exemplars {
                    block.push('\n');
                    block.push_str(&question_block(&ex.question));
                    block.push('\n');
                    block.push_str(&answer_of(ex)?);
                    block.push('\n');
                }
                sections.push(block.trim_end().to_string());
            }
            sections.push(question_block(question));
        }
        QAFamily::RarBaseline => {
            if !exemplars.is_empty() {
                let mut block = String::from("===== Examples =====");
                for ex in exemplars {
                    let ctx = ex.context_doc_ids.as_ref().ok_or_else(|| {
                        Error::Argument(format!("exemplar {:?} has no retrieved context", ex.question))
                    })?;
                    block.push_str(&format!(
                        "\n===== Documents =====\n{}\n{}\n{}\n",
                        render_documents(corpus.resolve(ctx)?),
                        question_block(&ex.question),
                        answer_of(ex)?
                    ));
                }
                sections.push(block.trim_end().to_string());
            }
            sections.push(format!(
                "===== Documents =====\n{}\n\n{}",
                render_documents(docs.iter().copied()),
                question_block(question)
            ));
        }
        QAFamily::Justified => {
            return Err(Error::Argument("justified variants use build_justified_prompt".into()));
        }
    }
    Ok(sections.join("\n\n"))
}
