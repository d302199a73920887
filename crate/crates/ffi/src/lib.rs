//! C ABI over the `setqa` library.
//!
//! Every fallible function returns a [`SetqaStatus`]; on failure the message
//! is available from [`setqa_last_error`] on the same thread. Strings handed
//! out by this library are NUL-terminated UTF-8 and must be released with
//! [`setqa_string_free`]. Handles are released with their matching `_free`.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::fs::File;
use std::io::BufReader;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;

use serde_json::json;
use setqa::corpus::{self, Corpus, CorpusFormat, EffectiveGolden, Question};
use setqa::metrics::{self, Report};
use setqa::prompts::{self, VerifyVariant};
use setqa::qa;
use setqa::Error;

/// Result codes. Zero is success.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SetqaStatus {
    Ok = 0,
    NullArgument = 1,
    InvalidUtf8 = 2,
    Io = 3,
    InputFormat = 4,
    UnknownReference = 5,
    Parse = 6,
    InvalidArgument = 7,
    Panic = 99,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SetqaCorpusFormat {
    Merged = 0,
    Passages = 1,
}

/// Per-example set metrics, each in [0, 1].
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct SetqaExampleMetrics {
    pub f1: f64,
    pub precision: f64,
    pub recall: f64,
    pub accuracy: f64,
    pub subspan_em: f64,
}

impl From<metrics::ExampleMetrics> for SetqaExampleMetrics {
    fn from(m: metrics::ExampleMetrics) -> Self {
        Self {
            f1: m.f1,
            precision: m.precision,
            recall: m.recall,
            accuracy: m.accuracy,
            subspan_em: m.subspan_em,
        }
    }
}

/// Opaque corpus handle.
pub struct SetqaCorpus(Corpus);

/// Opaque question-set handle, validated against the corpus it was loaded with.
pub struct SetqaQuestions(Vec<Question>);

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_last_error(message: String) {
    let message = CString::new(message.replace('\0', "\\0")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(message));
}

struct Failure(SetqaStatus, String);

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let status = match &e {
            Error::Io(_) => SetqaStatus::Io,
            Error::InputFormat { .. } | Error::DuplicateTitle(_) | Error::DuplicateDocId(_) | Error::Json(_) => {
                SetqaStatus::InputFormat
            }
            Error::UnknownEntity { .. } | Error::UnknownDocId(_) => SetqaStatus::UnknownReference,
            Error::Parse { .. } => SetqaStatus::Parse,
            _ => SetqaStatus::InvalidArgument,
        };
        Failure(status, e.to_string())
    }
}

impl From<std::io::Error> for Failure {
    fn from(e: std::io::Error) -> Self {
        Failure(SetqaStatus::Io, e.to_string())
    }
}

impl From<serde_json::Error> for Failure {
    fn from(e: serde_json::Error) -> Self {
        Failure(SetqaStatus::InputFormat, e.to_string())
    }
}

fn guard(f: impl FnOnce() -> Result<(), Failure>) -> SetqaStatus {
    LAST_ERROR.with(|e| *e.borrow_mut() = None);
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => SetqaStatus::Ok,
        Ok(Err(Failure(status, message))) => {
            set_last_error(message);
            status
        }
        Err(payload) => {
            let message = payload
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| payload.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "panic".into());
            set_last_error(format!("internal error: {message}"));
            SetqaStatus::Panic
        }
    }
}

unsafe fn borrow<'a, T>(p: *const T, what: &str) -> Result<&'a T, Failure> {
    p.as_ref()
        .ok_or_else(|| Failure(SetqaStatus::NullArgument, format!("{what} is null")))
}

unsafe fn text<'a>(p: *const c_char, what: &str) -> Result<&'a str, Failure> {
    if p.is_null() {
        return Err(Failure(SetqaStatus::NullArgument, format!("{what} is null")));
    }
    CStr::from_ptr(p)
        .to_str()
        .map_err(|e| Failure(SetqaStatus::InvalidUtf8, format!("{what}: {e}")))
}

unsafe fn put<T>(out: *mut T, value: T, what: &str) -> Result<(), Failure> {
    if out.is_null() {
        return Err(Failure(SetqaStatus::NullArgument, format!("{what} is null")));
    }
    out.write(value);
    Ok(())
}

unsafe fn put_string(out: *mut *mut c_char, value: String) -> Result<(), Failure> {
    let s = CString::new(value).map_err(|e| Failure(SetqaStatus::InvalidArgument, e.to_string()))?;
    put(out, s.into_raw(), "out")
}

fn open(path: &str) -> Result<BufReader<File>, Failure> {
    File::open(path)
        .map(BufReader::new)
        .map_err(|e| Failure(SetqaStatus::Io, format!("{path}: {e}")))
}

/// Message for the last failed call on this thread, or NULL. The pointer is
/// valid until the next call into this library on the same thread.
#[no_mangle]
pub extern "C" fn setqa_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |s| s.as_ptr()))
}

/// Releases a string returned by this library. NULL is ignored.
///
/// # Safety
/// `s` must come from this library and not have been freed.
#[no_mangle]
pub unsafe extern "C" fn setqa_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(CString::from_raw(s));
    }
}

/// # Safety
/// `path` must be a valid C string; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn setqa_corpus_load(
    path: *const c_char,
    format: SetqaCorpusFormat,
    out: *mut *mut SetqaCorpus,
) -> SetqaStatus {
    guard(|| {
        let path = text(path, "path")?;
        let format = match format {
            SetqaCorpusFormat::Merged => CorpusFormat::Merged,
            SetqaCorpusFormat::Passages => CorpusFormat::Passages,
        };
        let corpus = corpus::load_corpus(open(path)?, format)?;
        put(out, Box::into_raw(Box::new(SetqaCorpus(corpus))), "out")
    })
}

/// # Safety
/// `corpus` must be NULL or a live handle.
#[no_mangle]
pub unsafe extern "C" fn setqa_corpus_free(corpus: *mut SetqaCorpus) {
    if !corpus.is_null() {
        drop(Box::from_raw(corpus));
    }
}

/// Number of documents, or 0 for NULL.
///
/// # Safety
/// `corpus` must be NULL or a live handle.
#[no_mangle]
pub unsafe extern "C" fn setqa_corpus_len(corpus: *const SetqaCorpus) -> usize {
    corpus.as_ref().map_or(0, |c| c.0.len())
}

/// Title of `doc_id` as a new string, or NULL if the id is unknown.
///
/// # Safety
/// `corpus` must be a live handle; `doc_id` a valid C string.
#[no_mangle]
pub unsafe extern "C" fn setqa_corpus_title(corpus: *const SetqaCorpus, doc_id: *const c_char) -> *mut c_char {
    let (Some(corpus), Ok(id)) = (corpus.as_ref(), text(doc_id, "doc_id")) else {
        return ptr::null_mut();
    };
    corpus
        .0
        .title_of(id)
        .and_then(|t| CString::new(t).ok())
        .map_or(ptr::null_mut(), CString::into_raw)
}

/// # Safety
/// `path` must be a valid C string; `corpus` a live handle; `out` writable.
#[no_mangle]
pub unsafe extern "C" fn setqa_questions_load(
    path: *const c_char,
    corpus: *const SetqaCorpus,
    out: *mut *mut SetqaQuestions,
) -> SetqaStatus {
    guard(|| {
        let path = text(path, "path")?;
        let corpus = borrow(corpus, "corpus")?;
        let questions = corpus::load_questions(open(path)?, &corpus.0)?;
        put(out, Box::into_raw(Box::new(SetqaQuestions(questions))), "out")
    })
}

/// # Safety
/// `questions` must be NULL or a live handle.
#[no_mangle]
pub unsafe extern "C" fn setqa_questions_free(questions: *mut SetqaQuestions) {
    if !questions.is_null() {
        drop(Box::from_raw(questions));
    }
}

/// # Safety
/// `questions` must be NULL or a live handle.
#[no_mangle]
pub unsafe extern "C" fn setqa_questions_len(questions: *const SetqaQuestions) -> usize {
    questions.as_ref().map_or(0, |q| q.0.len())
}

/// Set metrics for one example. The three arguments are JSON arrays of
/// entity names; names are normalized before comparison.
///
/// # Safety
/// All pointers must be valid C strings; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn setqa_set_metrics(
    match_json: *const c_char,
    debatable_json: *const c_char,
    predicted_json: *const c_char,
    out: *mut SetqaExampleMetrics,
) -> SetqaStatus {
    guard(|| {
        let names = |p, what| -> Result<Vec<String>, Failure> { Ok(serde_json::from_str(text(p, what)?)?) };
        let normalized = |v: Vec<String>| v.iter().map(|n| corpus::normalize_name(n)).collect();
        let golden = EffectiveGolden {
            match_set: normalized(names(match_json, "match_json")?),
            debatable_set: normalized(names(debatable_json, "debatable_json")?),
        };
        let predicted = names(predicted_json, "predicted_json")?;
        put(out, metrics::example_set_metrics(&golden, &predicted).into(), "out")
    })
}

/// Scores a predictions JSONL file and writes the report as JSON to `out`.
///
/// # Safety
/// Handles must be live; strings valid; `out` writable.
#[no_mangle]
pub unsafe extern "C" fn setqa_score_predictions(
    questions: *const SetqaQuestions,
    predictions_path: *const c_char,
    method: *const c_char,
    out: *mut *mut c_char,
) -> SetqaStatus {
    guard(|| {
        let questions = borrow(questions, "questions")?;
        let method = text(method, "method")?;
        let predictions = qa::read_predictions(open(text(predictions_path, "predictions_path")?)?)?;
        let report = Report::new(method, metrics::score_predictions(&questions.0, &predictions)?, None);
        put_string(out, serde_json::to_string(&report)?)
    })
}

/// Parses baseline output into `{"doc_ids": [...], "diagnostics": [...]}`.
/// Never fails on malformed output; problems land in `diagnostics`.
///
/// # Safety
/// `output` must be a valid C string; `out` writable.
#[no_mangle]
pub unsafe extern "C" fn setqa_parse_baseline(output: *const c_char, out: *mut *mut c_char) -> SetqaStatus {
    guard(|| {
        let parsed = qa::parse_baseline_answer(text(output, "output")?);
        put_string(
            out,
            json!({"doc_ids": parsed.doc_ids, "diagnostics": parsed.diagnostics}).to_string(),
        )
    })
}

/// Parses justified QA output into
/// `{"response": {...}, "ids_missing": bool, "diagnostics": [...]}`.
///
/// # Safety
/// `output` must be a valid C string; `out` writable.
#[no_mangle]
pub unsafe extern "C" fn setqa_parse_justified(output: *const c_char, cot: bool, out: *mut *mut c_char) -> SetqaStatus {
    guard(|| {
        let parsed = qa::parse_justified_response(text(output, "output")?, cot)?;
        put_string(
            out,
            json!({
                "response": parsed.response,
                "ids_missing": parsed.ids_missing,
                "diagnostics": parsed.diagnostics,
            })
            .to_string(),
        )
    })
}

/// Parses verifier output into `{"judgment": {...}, "diagnostics": [...]}`.
///
/// # Safety
/// `output` must be a valid C string; `out` writable.
#[no_mangle]
pub unsafe extern "C" fn setqa_parse_verification(
    output: *const c_char,
    cot: bool,
    out: *mut *mut c_char,
) -> SetqaStatus {
    guard(|| {
        let (judgment, diagnostics) = qa::parse_candidate_judgment(text(output, "output")?, cot)?;
        put_string(out, json!({"judgment": judgment, "diagnostics": diagnostics}).to_string())
    })
}

fn documents_block(corpus: &Corpus, ids_json: &str) -> Result<String, Failure> {
    let ids: Vec<String> = serde_json::from_str(ids_json)?;
    Ok(prompts::render_documents(corpus.resolve(&ids)?))
}

/// Renders a justified QA prompt over the documents named by `doc_ids_json`
/// (a JSON array of doc ids, in prompt order).
///
/// # Safety
/// `corpus` must be live; strings valid; `out` writable.
#[no_mangle]
pub unsafe extern "C" fn setqa_render_justified_prompt(
    corpus: *const SetqaCorpus,
    doc_ids_json: *const c_char,
    question: *const c_char,
    cot: bool,
    quest_instruction: bool,
    out: *mut *mut c_char,
) -> SetqaStatus {
    guard(|| {
        let docs = documents_block(&borrow(corpus, "corpus")?.0, text(doc_ids_json, "doc_ids_json")?)?;
        let prompt = prompts::render_justified(&docs, text(question, "question")?, cot, quest_instruction);
        put_string(out, prompt)
    })
}

/// Renders a candidate verification prompt over the documents named by
/// `doc_ids_json`.
///
/// # Safety
/// `corpus` must be live; strings valid; `out` writable.
#[no_mangle]
pub unsafe extern "C" fn setqa_render_verification_prompt(
    corpus: *const SetqaCorpus,
    doc_ids_json: *const c_char,
    question: *const c_char,
    candidate: *const c_char,
    cot: bool,
    quest_instruction: bool,
    out: *mut *mut c_char,
) -> SetqaStatus {
    guard(|| {
        let docs = documents_block(&borrow(corpus, "corpus")?.0, text(doc_ids_json, "doc_ids_json")?)?;
        let prompt = prompts::render_verification(
            &docs,
            text(question, "question")?,
            text(candidate, "candidate")?,
            VerifyVariant::new(cot, quest_instruction),
        );
        put_string(out, prompt)
    })
}
