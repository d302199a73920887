use std::fs;
use std::path::PathBuf;

use setqa::corpus::{Corpus, Document};
use setqa::prompts::{
    build_baseline_prompt, build_justified_prompt, build_verification_prompt, render_document, render_justified,
    render_verification, Exemplar, QAFamily, QAVariant, VerifyVariant,
};

fn fixture(name: &str) -> String {
    let path: PathBuf = [env!("CARGO_MANIFEST_DIR"), "tests", "fixtures", "prompts", name].iter().collect();
    fs::read_to_string(&path).unwrap_or_else(|e| panic!("{}: {e}", path.display()))
}

/// Compares against a checked-in golden file; set `SETQA_BLESS=1` to rewrite
/// files for the crate's own baseline template.
fn assert_golden(name: &str, actual: &str) {
    let path: PathBuf = [env!("CARGO_MANIFEST_DIR"), "tests", "fixtures", "prompts", name].iter().collect();
    if std::env::var_os("SETQA_BLESS").is_some() {
        fs::write(&path, actual).unwrap();
    }
    assert_eq!(actual, fixture(name), "golden mismatch for {name}");
}

#[test]
fn justified_templates_match_listings() {
    for (cot, quest, name) in [
        (false, false, "justified_default.txt"),
        (false, true, "justified_default_quest.txt"),
        (true, false, "justified_cot.txt"),
        (true, true, "justified_cot_quest.txt"),
    ] {
        assert_eq!(
            render_justified("{{documents}}", "{{question}}", cot, quest),
            fixture(name),
            "{name}"
        );
    }
}

#[test]
fn verification_templates_match_listings() {
    for (cot, quest, name) in [
        (false, false, "verify_generic.txt"),
        (false, true, "verify_generic_quest.txt"),
        (true, false, "verify_cot.txt"),
        (true, true, "verify_cot_quest.txt"),
    ] {
        assert_eq!(
            render_verification(
                "{{documents}}",
                "{{question}}",
                "{{candidate_answer}}",
                VerifyVariant::new(cot, quest)
            ),
            fixture(name),
            "{name}"
        );
    }
}

#[test]
fn quest_bullet_text() {
    let plain = render_justified("D", "Q", false, false);
    let quest = render_justified("D", "Q", false, true);
    assert!(!plain.contains("set intersection"));
    assert!(quest.contains("combined with 'and' to mean set intersection and 'or' to mean set union"));
    let v = render_verification("D", "Q", "C", VerifyVariant::new(true, true));
    assert!(v.contains("'and' to mean set intersection"));
}

fn doc(id: &str, title: &str, text: &str) -> Document {
    Document {
        doc_id: id.into(),
        title: title.into(),
        text: text.into(),
    }
}

#[test]
fn document_line_format() {
    assert_eq!(
        render_document(&doc("75", "Roja (film)", "A 1992 film.")),
        "ID: 75 | TITLE: Roja (film) | CONTENT: A 1992 film."
    );
}

#[test]
fn filled_prompts_embed_documents_and_question() {
    let a = doc("1", "Alpha", "first");
    let b = doc("2", "Beta", "second");
    let p = build_justified_prompt(&[&a, &b], "Which?", QAVariant::justified(false, false)).unwrap();
    assert!(p.contains(
        "===== Documents =====\nID: 1 | TITLE: Alpha | CONTENT: first\nID: 2 | TITLE: Beta | CONTENT: second\n\n===== Question =====\nWhich?"
    ));
    assert!(p.ends_with("Which?"));
    let v = build_verification_prompt(&[&b], "Which?", "Beta", VerifyVariant::BASIC).unwrap();
    assert!(v.ends_with("===== Candidate Answer =====\nBeta"));
    assert!(build_verification_prompt(&[], "Which?", "Beta", VerifyVariant::BASIC).is_err());
    // Values are substituted once and never rescanned.
    let tricky = render_justified("{{question}}", "Q", false, false);
    assert!(tricky.contains("===== Documents =====\n{{question}}\n"));
}

#[test]
fn baseline_prompts_golden() {
    let corpus = Corpus::new(vec![
        doc("1", "Alpha", "first"),
        doc("2", "Beta", "second"),
        doc("3", "Gamma", "third"),
    ])
    .unwrap();
    let all: Vec<&Document> = corpus.documents().iter().collect();
    let exemplars = vec![Exemplar {
        question: "Train question?".into(),
        context_doc_ids: Some(vec!["2".into(), "3".into()]),
        answer_ids: vec!["2".into()],
    }];
    let cic = build_baseline_prompt(QAFamily::CicBaseline, &all, &exemplars, "Test question?", &corpus).unwrap();
    assert_golden("baseline_cic.txt", &cic);
    let rar = build_baseline_prompt(QAFamily::RarBaseline, &all[..2], &exemplars, "Test question?", &corpus).unwrap();
    assert_golden("baseline_rar.txt", &rar);

    let no_ctx = vec![Exemplar {
        context_doc_ids: None,
        ..exemplars[0].clone()
    }];
    assert!(build_baseline_prompt(QAFamily::RarBaseline, &all, &no_ctx, "Q", &corpus).is_err());
}
