//! Parsers for model output: baseline `Final Answer:` lines and the
//! evidence-bearing JSON responses of the Justified QA and verification prompts.

use serde::de::{self, Deserializer};
use serde::{Deserialize, Serialize, Serializer};
use serde_json::Value;

use crate::error::{Error, Result};

pub const STEP2_HEADER: &str = "===== Step 2: JSON response =====";
pub const END_MARKER: &str = "===== END =====";
const FINAL_ANSWER: &str = "Final Answer:";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EvidenceRef {
    #[serde(deserialize_with = "string_or_number")]
    pub doc_id: String,
    #[serde(default)]
    pub text: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum FinalJudgment {
    True,
    False,
}

impl FinalJudgment {
    pub fn is_true(self) -> bool {
        self == FinalJudgment::True
    }
}

impl Serialize for FinalJudgment {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.serialize_str(match self {
            FinalJudgment::True => "TRUE",
            FinalJudgment::False => "FALSE",
        })
    }
}

impl<'de> Deserialize<'de> for FinalJudgment {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        match s.trim().to_ascii_uppercase().as_str() {
            "TRUE" => Ok(FinalJudgment::True),
            "FALSE" => Ok(FinalJudgment::False),
            _ => Err(de::Error::custom(format!("final_judgment must be TRUE or FALSE, got {s:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CandidateJudgment {
    pub candidate_answer: String,
    #[serde(default)]
    pub evidence_for: Vec<EvidenceRef>,
    #[serde(default)]
    pub evidence_against: Vec<EvidenceRef>,
    #[serde(default)]
    pub reasoning: String,
    pub final_judgment: FinalJudgment,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct JustifiedResponse {
    pub question: String,
    pub candidate_answers: Vec<CandidateJudgment>,
    pub answer: Vec<String>,
    pub answer_doc_ids: Vec<String>,
}

/// Result of parsing a Justified QA response.
#[derive(Debug, Clone, PartialEq)]
pub struct JustifiedParse {
    pub response: JustifiedResponse,
    /// `answer_doc_ids` was absent and could not be rebuilt from evidence;
    /// answers must be resolved by name.
    pub ids_missing: bool,
    pub diagnostics: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct BaselineParse {
    pub doc_ids: Vec<String>,
    pub diagnostics: Vec<String>,
}

fn string_or_number<'de, D: Deserializer<'de>>(d: D) -> std::result::Result<String, D::Error> {
    match Value::deserialize(d)? {
        Value::String(s) => Ok(s),
        Value::Number(n) => Ok(n.to_string()),
        other => Err(de::Error::custom(format!("expected string id, got {other}"))),
    }
}

fn string_list<'de, D: Deserializer<'de>>(d: D) -> std::result::Result<Option<Vec<String>>, D::Error> {
    let v: Option<Vec<Value>> = Option::deserialize(d)?;
    v.map(|items| {
        items
            .into_iter()
            .map(|item| match item {
                Value::String(s) => Ok(s),
                Value::Number(n) => Ok(n.to_string()),
                other => Err(de::Error::custom(format!("expected string, got {other}"))),
            })
            .collect()
    })
    .transpose()
}

/// Parses the last `Final Answer: [...]` line. Never fails; problems are
/// reported as diagnostics with an empty id list.
pub fn parse_baseline_answer(text: &str) -> BaselineParse {
    let Some(line) = text.lines().rev().find(|l| l.trim_start().starts_with(FINAL_ANSWER)) else {
        return BaselineParse {
            doc_ids: Vec::new(),
            diagnostics: vec!["no Final Answer line in output".into()],
        };
    };
    let list = line.trim_start()[FINAL_ANSWER.len()..].trim();
    match parse_quoted_list(list) {
        Some(doc_ids) => BaselineParse {
            doc_ids,
            diagnostics: Vec::new(),
        },
        None => BaselineParse {
            doc_ids: Vec::new(),
            diagnostics: vec![format!("malformed Final Answer list: {list:?}")],
        },
    }
}

/// Parses `['a', "b", 3]`. Bare tokens are accepted; anything else is malformed.
fn parse_quoted_list(s: &str) -> Option<Vec<String>> {
    let inner = s.strip_prefix('[')?.strip_suffix(']')?;
    let mut out = Vec::new();
    let mut chars = inner.chars().peekable();
    loop {
        while chars.peek().is_some_and(|c| c.is_whitespace()) {
            chars.next();
        }
        let Some(&c) = chars.peek() else { break };
        let item = if c == '\'' || c == '"' {
            chars.next();
            let mut item = String::new();
            loop {
                match chars.next()? {
                    '\\' => item.push(chars.next()?),
                    ch if ch == c => break,
                    ch => item.push(ch),
                }
            }
            item
        } else {
            let mut item = String::new();
            while let Some(&ch) = chars.peek() {
                if ch == ',' {
                    break;
                }
                item.push(ch);
                chars.next();
            }
            let item = item.trim().to_string();
            if item.is_empty() || item.contains(['[', ']', '\'', '"']) {
                return None;
            }
            item
        };
        out.push(item);
        while chars.peek().is_some_and(|c| c.is_whitespace()) {
            chars.next();
        }
        match chars.next() {
            None => break,
            Some(',') => continue,
            Some(_) => return None,
        }
    }
    Some(out)
}

/// Byte span of the first balanced `{...}` starting at or after `from`.
fn balanced_object(text: &str, from: usize) -> Option<(usize, usize)> {
    let bytes = text.as_bytes();
    let mut start = from;
    while let Some(off) = text[start..].find('{') {
        let open = start + off;
        let mut depth = 0usize;
        let mut in_string = false;
        let mut escaped = false;
        for (i, &b) in bytes.iter().enumerate().skip(open) {
            if in_string {
                match b {
                    _ if escaped => escaped = false,
                    b'\\' => escaped = true,
                    b'"' => in_string = false,
                    _ => {}
                }
                continue;
            }
            match b {
                b'"' => in_string = true,
                b'{' | b'[' => depth += 1,
                b'}' | b']' => {
                    depth = depth.saturating_sub(1);
                    if depth == 0 {
                        if b == b'}' {
                            return Some((open, i + 1));
                        }
                        break;
                    }
                }
                _ => {}
            }
        }
        start = open + 1;
    }
    None
}

/// Locates the JSON object in a model response.
///
/// Without CoT the first balanced object is taken, preferring the body of a
/// ```` ```json ```` fence when one is present. With CoT the search is confined
/// to the text after the Step 2 header and before the END marker; a missing
/// END marker (truncated output) is tolerated.
pub fn extract_json_section(text: &str, cot: bool) -> Result<String> {
    let region = if cot {
        match text.rfind(STEP2_HEADER) {
            Some(pos) => {
                let after = &text[pos + STEP2_HEADER.len()..];
                match after.find(END_MARKER) {
                    Some(end) => &after[..end],
                    None => after,
                }
            }
            None => text,
        }
    } else {
        text
    };
    if let Some(fence) = region.find("```json") {
        let body = &region[fence + "```json".len()..];
        let body = body.find("```").map_or(body, |end| &body[..end]);
        if let Some((s, e)) = balanced_object(body, 0) {
            return Ok(body[s..e].to_string());
        }
    }
    balanced_object(region, 0)
        .map(|(s, e)| region[s..e].to_string())
        .ok_or_else(|| Error::parse("no JSON object found in output", text))
}

/// Drops bare `...` elision items and trailing commas outside string literals.
fn repair_json(src: &str) -> String {
    let mut without_elisions = String::with_capacity(src.len());
    let mut in_string = false;
    let mut escaped = false;
    let mut chars = src.char_indices().peekable();
    while let Some((i, c)) = chars.next() {
        if in_string {
            match c {
                _ if escaped => escaped = false,
                '\\' => escaped = true,
                '"' => in_string = false,
                _ => {}
            }
            without_elisions.push(c);
            continue;
        }
        if c == '"' {
            in_string = true;
        }
        if c == '.' && src[i..].starts_with("...") {
            chars.next();
            chars.next();
            // Also drop a comma that separated the elision from what follows.
            while chars.peek().is_some_and(|(_, c)| c.is_whitespace()) {
                chars.next();
            }
            if chars.peek().is_some_and(|(_, c)| *c == ',') {
                chars.next();
            }
            continue;
        }
        without_elisions.push(c);
    }

    let mut out = String::with_capacity(without_elisions.len());
    let mut in_string = false;
    let mut escaped = false;
    let chars: Vec<char> = without_elisions.chars().collect();
    for (i, &c) in chars.iter().enumerate() {
        if in_string {
            match c {
                _ if escaped => escaped = false,
                '\\' => escaped = true,
                '"' => in_string = false,
                _ => {}
            }
            out.push(c);
            continue;
        }
        if c == '"' {
            in_string = true;
        }
        if c == ',' {
            let next = chars[i + 1..].iter().find(|c| !c.is_whitespace());
            if matches!(next, Some('}') | Some(']') | None) {
                continue;
            }
        }
        out.push(c);
    }
    out
}

/// Strict JSON parse, falling back to a repair pass for elided items and
/// trailing commas. Repairs are reported through `diagnostics`.
fn parse_json_value(section: &str, raw: &str, diagnostics: &mut Vec<String>) -> Result<Value> {
    match serde_json::from_str::<Value>(section) {
        Ok(v) => Ok(v),
        Err(strict) => {
            let repaired = repair_json(section);
            match serde_json::from_str::<Value>(&repaired) {
                Ok(v) => {
                    diagnostics.push(format!("repaired non-strict JSON ({strict})"));
                    Ok(v)
                }
                Err(_) => Err(Error::parse(format!("invalid JSON: {strict}"), raw)),
            }
        }
    }
}

#[derive(Deserialize)]
struct RawJustified {
    #[serde(default)]
    question: String,
    #[serde(default)]
    candidate_answers: Vec<CandidateJudgment>,
    #[serde(default, deserialize_with = "string_list")]
    answer: Option<Vec<String>>,
    #[serde(default, deserialize_with = "string_list")]
    answer_doc_ids: Option<Vec<String>>,
}

pub fn parse_justified_response(text: &str, cot: bool) -> Result<JustifiedParse> {
    let section = extract_json_section(text, cot)?;
    let mut diagnostics = Vec::new();
    let value = parse_json_value(&section, text, &mut diagnostics)?;
    let raw: RawJustified =
        serde_json::from_value(value).map_err(|e| Error::parse(format!("unexpected response shape: {e}"), text))?;

    let accepted: Vec<&CandidateJudgment> = raw
        .candidate_answers
        .iter()
        .filter(|c| c.final_judgment.is_true())
        .collect();
    let mut ids_missing = false;
    let (answer, answer_doc_ids) = match (raw.answer, raw.answer_doc_ids) {
        (Some(a), Some(ids)) => (a, ids),
        (Some(a), None) => {
            diagnostics.push("answer_doc_ids missing; resolving answers by name".into());
            ids_missing = true;
            (a, Vec::new())
        }
        (None, ids) => {
            diagnostics.push("answer missing; rebuilt from TRUE candidates".into());
            let names = accepted.iter().map(|c| c.candidate_answer.clone()).collect();
            let ids = match ids {
                Some(ids) => ids,
                None => {
                    diagnostics.push("answer_doc_ids missing; rebuilt from evidence".into());
                    if accepted.iter().any(|c| c.evidence_for.is_empty()) {
                        ids_missing = true;
                        Vec::new()
                    } else {
                        accepted.iter().map(|c| c.evidence_for[0].doc_id.clone()).collect()
                    }
                }
            };
            (names, ids)
        }
    };
    let accepted_names: std::collections::HashSet<&str> =
        accepted.iter().map(|c| c.candidate_answer.as_str()).collect();
    if let Some(extra) = answer.iter().find(|a| !accepted_names.contains(a.as_str())) {
        diagnostics.push(format!("answer {extra:?} is not a TRUE candidate"));
    }
    Ok(JustifiedParse {
        response: JustifiedResponse {
            question: raw.question,
            candidate_answers: raw.candidate_answers,
            answer,
            answer_doc_ids,
        },
        ids_missing,
        diagnostics,
    })
}

/// Parses a single-candidate verification response.
pub fn parse_candidate_judgment(text: &str, cot: bool) -> Result<(CandidateJudgment, Vec<String>)> {
    let section = extract_json_section(text, cot)?;
    let mut diagnostics = Vec::new();
    let value = parse_json_value(&section, text, &mut diagnostics)?;
    let judgment = serde_json::from_value(value)
        .map_err(|e| Error::parse(format!("unexpected judgment shape: {e}"), text))?;
    Ok((judgment, diagnostics))
}
