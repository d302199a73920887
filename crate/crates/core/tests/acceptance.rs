//! Acceptance suite. Runs every criterion, prints one PASS/FAIL line each, and
//! exits non-zero if any fails.

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::io::{BufReader, Write};
use std::panic::{self, AssertUnwindSafe};
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::{Duration, Instant};

use proptest::prelude::*;
use proptest::test_runner::{Config, RngAlgorithm, TestRng, TestRunner};

use setqa::corpus::{
    effective_golden, load_corpus, load_questions, Corpus, CorpusFormat, Document, EffectiveGolden, Question, RatedAnswer,
    Rating, Split,
};
use setqa::llm::{BackendSpec, ScriptDefault, ScriptRule, ScriptedBackend};
use setqa::metrics::{aggregate, example_set_metrics, mrecall_at_k, ExampleMetrics};
use setqa::prompts::{render_document, render_justified, render_verification, VerifyVariant};
use setqa::qa::{
    parse_baseline_answer, parse_justified_response, CandidateJudgment, EvidenceRef, FinalJudgment, JustifiedResponse,
    ModelSettings, Prediction,
};
use setqa::retrieval::{build_embedding_index, Embedder, EmbedderSpec, HashingEmbedder, RankedDocs, Retriever};
use setqa::runner::{read_configs, sweep, Backends, Dataset, RunOptions};
use setqa::verification::{derive_verification_dataset, verify_candidate, verify_prediction, VerificationExample};

type Outcome = Result<(), String>;

fn check(cond: bool, msg: impl FnOnce() -> String) -> Outcome {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn manifest_dir() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR"))
}

fn runner(cases: u32) -> TestRunner {
    TestRunner::new_with_rng(
        Config {
            cases,
            failure_persistence: None,
            ..Config::default()
        },
        TestRng::deterministic_rng(RngAlgorithm::ChaCha),
    )
}

fn proptest_outcome<T: std::fmt::Debug>(r: Result<(), proptest::test_runner::TestError<T>>) -> Outcome {
    r.map_err(|e| e.to_string())
}

// ---------------------------------------------------------------------------
// 1. Exhaustive oracle over a 4-entity universe.

fn frac(s: &str) -> f64 {
    let (n, d) = s.split_once('/').expect("fraction");
    n.parse::<u64>().unwrap() as f64 / d.parse::<u64>().unwrap() as f64
}

fn criterion_1() -> Outcome {
    let start = Instant::now();
    let table = fs::read_to_string(manifest_dir().join("tests/fixtures/oracle/set_metrics.tsv")).map_err(|e| e.to_string())?;
    let mut cases = 0;
    for line in table.lines().skip(1) {
        let cols: Vec<&str> = line.split('\t').collect();
        let mut listed = Vec::new();
        for (entity, r) in ["A", "B", "C", "D"].iter().zip(cols[0].chars()) {
            let rating = match r {
                'M' => Rating::Match,
                'D' => Rating::Debatable,
                'N' => Rating::NoMatch,
                _ => continue,
            };
            listed.push(RatedAnswer {
                entity_name: entity.to_string(),
                rating,
            });
        }
        let q = Question {
            question_id: "q".into(),
            text: "q".into(),
            split: Split::Test,
            golden: listed,
        };
        let golden = effective_golden(&q);
        let predicted: Vec<String> = if cols[1] == "-" {
            Vec::new()
        } else {
            cols[1].chars().map(|c| c.to_string()).collect()
        };
        let got = example_set_metrics(&golden, &predicted);
        let want = [
            frac(cols[2]),
            frac(cols[3]),
            frac(cols[4]),
            cols[5].parse::<f64>().unwrap(),
            cols[6].parse::<f64>().unwrap(),
        ];
        check(got.values() == want, || format!("{line}: got {:?}", got.values()))?;
        cases += 1;
    }
    check(cases == 4096, || format!("expected 4096 oracle rows, read {cases}"))?;
    let elapsed = start.elapsed();
    check(elapsed < Duration::from_secs(5), || format!("took {elapsed:?}"))
}

// ---------------------------------------------------------------------------
// 2. DEBATABLE neutrality.

/// Ratings per entity index (0 = none, 1 = MATCH, 2 = DEBATABLE, 3 = NO_MATCH)
/// plus a predicted mask.
fn universe_case() -> impl Strategy<Value = (Vec<u8>, Vec<bool>)> {
    (1usize..9).prop_flat_map(|n| (prop::collection::vec(0u8..4, n), prop::collection::vec(any::<bool>(), n)))
}

fn build(ratings: &[u8], predicted: &[bool]) -> (EffectiveGolden, Vec<String>) {
    let mut g = EffectiveGolden::default();
    let mut p = Vec::new();
    for (i, (&r, &pr)) in ratings.iter().zip(predicted).enumerate() {
        let name = format!("e{i}");
        match r {
            1 => {
                g.match_set.insert(name.clone());
            }
            2 => {
                g.debatable_set.insert(name.clone());
            }
            _ => {}
        }
        if pr {
            p.push(name);
        }
    }
    (g, p)
}

fn criterion_2() -> Outcome {
    proptest_outcome(runner(1000).run(&universe_case(), |(ratings, predicted)| {
        let (g, p) = build(&ratings, &predicted);
        let base = example_set_metrics(&g, &p);
        for (i, &r) in ratings.iter().enumerate() {
            if r != 2 {
                continue;
            }
            let mut toggled = predicted.clone();
            toggled[i] = !toggled[i];
            let (g2, p2) = build(&ratings, &toggled);
            prop_assert_eq!(example_set_metrics(&g2, &p2), base);
        }
        // A fresh DEBATABLE entity, unpredicted and predicted.
        let mut g3 = g.clone();
        g3.debatable_set.insert("fresh".into());
        prop_assert_eq!(example_set_metrics(&g3, &p), base);
        let mut p3 = p.clone();
        p3.push("fresh".into());
        prop_assert_eq!(example_set_metrics(&g3, &p3), base);
        Ok(())
    }))
}

// ---------------------------------------------------------------------------
// 3. Subspan EM dominates accuracy; aggregate means.

fn criterion_3() -> Outcome {
    proptest_outcome(runner(1000).run(&universe_case(), |(ratings, predicted)| {
        let (g, p) = build(&ratings, &predicted);
        let m = example_set_metrics(&g, &p);
        prop_assert!(m.subspan_em >= m.accuracy);
        Ok(())
    }))?;

    let metric = || (0u32..=12).prop_map(|n| n as f64 / 12.0);
    let example = (metric(), metric(), metric(), any::<bool>(), any::<bool>()).prop_map(|(f1, p, r, a, s)| ExampleMetrics {
        f1,
        precision: p,
        recall: r,
        accuracy: a as u8 as f64,
        subspan_em: s as u8 as f64,
    });
    proptest_outcome(runner(300).run(&prop::collection::vec(example, 1..40), |ms| {
        let items: Vec<(String, ExampleMetrics)> = ms.iter().enumerate().map(|(i, m)| (format!("q{i:03}"), *m)).collect();
        let report = aggregate(&items).unwrap();
        let n = ms.len() as f64;
        let mut want = [0.0f64; 5];
        for m in ms.iter().rev() {
            for (w, v) in want.iter_mut().zip(m.values()) {
                *w += v / n;
            }
        }
        for (got, want) in report.aggregate.values().iter().zip(want) {
            prop_assert!((got - want).abs() <= 1e-12, "{} vs {}", got, want);
        }
        Ok(())
    }))?;

    // Three examples with hand-computed means.
    let g = |m: &[&str], d: &[&str]| EffectiveGolden {
        match_set: m.iter().map(|s| s.to_string()).collect(),
        debatable_set: d.iter().map(|s| s.to_string()).collect(),
    };
    let items = vec![
        ("a".to_string(), example_set_metrics(&g(&["R", "S", "B"], &[]), &["R", "B"])),
        ("b".to_string(), example_set_metrics(&g(&["L"], &["C"]), &["L", "C"])),
        ("c".to_string(), example_set_metrics(&g(&["F"], &[]), &["F", "L"])),
    ];
    let agg = aggregate(&items).map_err(|e| e.to_string())?.aggregate;
    let want = [37.0 / 45.0, 5.0 / 6.0, 8.0 / 9.0, 1.0 / 3.0, 2.0 / 3.0];
    for (got, want) in agg.values().iter().zip(want) {
        check((got - want).abs() <= 1e-12, || format!("aggregate {got} vs {want}"))?;
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// 4. MRecall@K.

fn ids(v: &[&str]) -> BTreeSet<String> {
    v.iter().map(|s| s.to_string()).collect()
}

fn ranked(v: &[&str]) -> RankedDocs {
    RankedDocs::from_order(v.iter().map(|s| s.to_string()))
}

/// "All of them, or at least K of them, among the top K."
fn mrecall_direct(golden: &BTreeSet<String>, ranking: &[String], k: usize) -> f64 {
    let top: BTreeSet<&String> = ranking.iter().take(k).collect();
    let hits = golden.iter().filter(|g| top.contains(g)).count();
    let all = golden.iter().all(|g| top.contains(g));
    if all || hits >= k {
        1.0
    } else {
        0.0
    }
}

fn criterion_4() -> Outcome {
    let r = ranked(&["a", "x", "b", "c", "d"]);
    check(mrecall_at_k(&ids(&["a", "b", "c", "d"]), &r, 3) == 0.0, || "golden of 4, 2 in top-3".into())?;
    check(mrecall_at_k(&ids(&["a", "b"]), &r, 3) == 1.0, || "golden of 2, both in top-3".into())?;
    let r = ranked(&["a", "b", "c", "d", "e"]);
    check(mrecall_at_k(&ids(&["a", "b", "c", "d", "e"]), &r, 3) == 1.0, || "golden of 5, 3 in top-3".into())?;

    let case = (
        prop::sample::subsequence((0..12).collect::<Vec<u32>>(), 0..8),
        Just((0..12).collect::<Vec<u32>>()).prop_shuffle(),
        1usize..14,
    );
    proptest_outcome(runner(500).run(&case, |(golden, order, k)| {
        let golden: BTreeSet<String> = golden.iter().map(|i| format!("d{i}")).collect();
        let ranking: Vec<String> = order.iter().map(|i| format!("d{i}")).collect();
        let got = mrecall_at_k(&golden, &RankedDocs::from_order(ranking.clone()), k);
        prop_assert_eq!(got, mrecall_direct(&golden, &ranking, k));
        Ok(())
    }))
}

// ---------------------------------------------------------------------------
// 5. Prompt golden files.

fn criterion_5() -> Outcome {
    let fixture = |name: &str| fs::read_to_string(manifest_dir().join("tests/fixtures/prompts").join(name)).unwrap();
    for (cot, quest, name) in [
        (false, false, "justified_default.txt"),
        (false, true, "justified_default_quest.txt"),
        (true, false, "justified_cot.txt"),
        (true, true, "justified_cot_quest.txt"),
    ] {
        check(render_justified("{{documents}}", "{{question}}", cot, quest) == fixture(name), || name.into())?;
    }
    for (cot, quest, name) in [
        (false, false, "verify_generic.txt"),
        (false, true, "verify_generic_quest.txt"),
        (true, false, "verify_cot.txt"),
        (true, true, "verify_cot_quest.txt"),
    ] {
        let got = render_verification("{{documents}}", "{{question}}", "{{candidate_answer}}", VerifyVariant::new(cot, quest));
        check(got == fixture(name), || name.into())?;
    }
    let doc = Document {
        doc_id: "{{doc_id}}".into(),
        title: "{{title}}".into(),
        text: "{{text}}".into(),
    };
    check(render_document(&doc) == "ID: {{doc_id}} | TITLE: {{title}} | CONTENT: {{text}}", || "document line".into())?;
    check(
        fixture("justified_default_quest.txt").contains("'and' to mean set intersection"),
        || "QUEST bullet".into(),
    )
}

// ---------------------------------------------------------------------------
// 6. Parser fixtures.

fn criterion_6() -> Outcome {
    let output = |name: &str| fs::read_to_string(manifest_dir().join("tests/fixtures/outputs").join(name)).unwrap();
    let baseline = parse_baseline_answer(&output("baseline_answer.txt"));
    check(baseline.doc_ids == ["192", "74", "77"], || format!("baseline {:?}", baseline.doc_ids))?;

    let raw = output("justified_response.txt");
    let plain = parse_justified_response(&raw, false).map_err(|e| e.to_string())?.response;
    check(plain.answer == ["Roja (film)", "Sahasa Veerudu Sagara Kanya"], || format!("answer {:?}", plain.answer))?;
    check(plain.answer_doc_ids == ["75", "220"], || format!("ids {:?}", plain.answer_doc_ids))?;
    let cot = format!("===== Step 1: Notes =====\nnotes\n===== Step 2: JSON response =====\n{raw}\n===== END =====");
    let fenced = format!("```json\n{raw}\n```");
    for (text, is_cot) in [(cot, true), (fenced, false)] {
        let r = parse_justified_response(&text, is_cot).map_err(|e| e.to_string())?.response;
        check(r == plain, || "wrapped variant differs".into())?;
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// 7 and 11. End-to-end scripted runs.

fn e2e(name: &str) -> PathBuf {
    manifest_dir().join("tests/fixtures/e2e").join(name)
}

fn e2e_dataset() -> Dataset {
    let corpus = load_corpus(BufReader::new(fs::File::open(e2e("corpus.jsonl")).unwrap()), CorpusFormat::Merged).unwrap();
    let questions = load_questions(BufReader::new(fs::File::open(e2e("questions.jsonl")).unwrap()), &corpus).unwrap();
    Dataset::new(corpus, questions, Split::Test, "corpus.jsonl".into(), "questions.jsonl".into())
}

fn e2e_backends() -> (Backends, Arc<ScriptedBackend>) {
    let spec: BackendSpec = serde_json::from_str(&fs::read_to_string(e2e("backend.json")).unwrap()).unwrap();
    let BackendSpec::Scripted(scripted) = spec else {
        panic!("fixture backend must be scripted")
    };
    let scripted = Arc::new(scripted);
    let embedder: EmbedderSpec = serde_json::from_str(&fs::read_to_string(e2e("embedder.json")).unwrap()).unwrap();
    (
        Backends {
            llm: scripted.clone(),
            embedder: Some(embedder.build().unwrap()),
            index: None,
        },
        scripted,
    )
}

fn run_e2e(workers: usize, out: &Path) -> Result<(String, usize), String> {
    let configs = read_configs(&e2e("methods.json")).map_err(|e| e.to_string())?;
    let (backends, scripted) = e2e_backends();
    let opts = RunOptions {
        settings: ModelSettings::new("scripted-model"),
        max_inflight: workers,
        timestamp: "2024-01-01T00:00:00Z".into(),
        cache_path: None,
    };
    let result = sweep(&configs, &e2e_dataset(), &backends, &opts, out).map_err(|e| e.to_string())?;
    for row in &result.rows {
        if let Err(e) = &row.outcome {
            return Err(format!("{}: {e}", row.name));
        }
    }
    Ok((result.leaderboard.tsv, scripted.calls()))
}

fn snapshot(dir: &Path) -> BTreeMap<PathBuf, Vec<u8>> {
    let mut out = BTreeMap::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for entry in fs::read_dir(&d).unwrap() {
            let path = entry.unwrap().path();
            if path.is_dir() {
                stack.push(path);
            } else {
                out.insert(path.strip_prefix(dir).unwrap().to_path_buf(), fs::read(&path).unwrap());
            }
        }
    }
    out
}

const E2E_LEADERBOARD: &str = "\
Method\tF1\tPrecision\tRecall\tAccuracy\tSubspan EM
CiC Baseline\t0.82\t0.83\t0.89\t0.33\t0.67
RAG Justified QA\t0.93\t1.00\t0.89\t0.67\t0.67
RAG Justified QA + Verification\t0.67\t0.67\t0.67\t0.67\t0.67
RAG + Verification\t0.56\t0.50\t0.67\t0.33\t0.67
";

fn criterion_7() -> Outcome {
    let start = Instant::now();
    let tmp = tempfile::tempdir().map_err(|e| e.to_string())?;
    let (first_dir, second_dir) = (tmp.path().join("first"), tmp.path().join("second"));
    let (board, calls) = run_e2e(8, &first_dir)?;
    check(board == E2E_LEADERBOARD, || format!("leaderboard:\n{board}"))?;
    // 3 baseline + 3 + 3 justified + 8 candidate verifications + 18 retrieved-doc verifications.
    check(calls == 35, || format!("expected 35 backend calls, saw {calls}"))?;
    run_e2e(8, &second_dir)?;
    check(snapshot(&first_dir) == snapshot(&second_dir), || "rerun artifacts differ".into())?;
    let elapsed = start.elapsed();
    check(elapsed < Duration::from_secs(10), || format!("took {elapsed:?}"))
}

fn criterion_11() -> Outcome {
    let tmp = tempfile::tempdir().map_err(|e| e.to_string())?;
    let mut snapshots = Vec::new();
    for workers in [1, 4, 16] {
        let dir = tmp.path().join(format!("w{workers}"));
        run_e2e(workers, &dir)?;
        snapshots.push((workers, snapshot(&dir)));
    }
    check(snapshots[0].1.len() >= 4 * 4 + 4, || "missing artifacts".into())?;
    for (workers, snap) in &snapshots[1..] {
        check(*snap == snapshots[0].1, || format!("{workers} workers differ from 1 worker"))?;
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// 8. Embedding retrieval against an exhaustive argsort.

fn criterion_8() -> Outcome {
    let vocab = ["red", "blue", "green", "film", "novel", "boston", "india", "1990s"];
    let case = (
        prop::collection::vec(prop::collection::vec(0usize..vocab.len(), 1..5), 1..=50),
        prop::collection::vec(0usize..vocab.len(), 1..4),
        prop::sample::select(vec![2usize, 4, 8]),
    );
    proptest_outcome(runner(200).run(&case, |(texts, query, dimension)| {
        let docs: Vec<Document> = texts
            .iter()
            .enumerate()
            .map(|(i, words)| Document {
                doc_id: ((i * 37) % 101).to_string(),
                title: format!("Doc {i}"),
                text: words.iter().map(|&w| vocab[w]).collect::<Vec<_>>().join(" "),
            })
            .collect();
        let corpus = Corpus::new(docs.clone()).unwrap();
        let embedder = HashingEmbedder::new(dimension);
        let index = build_embedding_index(&corpus, &embedder).unwrap();
        let retriever = Retriever::embedding(&corpus, &index, &embedder);
        let query: String = query.iter().map(|&w| vocab[w]).collect::<Vec<_>>().join(" ");

        let q = embedder.embed(std::slice::from_ref(&query)).unwrap().remove(0);
        let mut scored: Vec<(f64, u64)> = docs
            .iter()
            .map(|d| {
                let v = embedder.embed(&[format!("{}\n{}", d.title, d.text)]).unwrap().remove(0);
                let mut s = 0.0;
                for j in 0..dimension {
                    s += q[j] * v[j];
                }
                (s, d.doc_id.parse::<u64>().unwrap())
            })
            .collect();
        scored.sort_by(|a, b| b.0.partial_cmp(&a.0).unwrap().then(a.1.cmp(&b.1)));
        for k in [1usize, 3, 40] {
            let got: Vec<String> = retriever.retrieve(&query, Some(k)).unwrap().doc_ids().map(String::from).collect();
            let want: Vec<String> = scored.iter().take(k).map(|(_, id)| id.to_string()).collect();
            prop_assert_eq!(got, want);
        }
        Ok(())
    }))
}

// ---------------------------------------------------------------------------
// 9. Verification orchestration.

fn verdict(judgment: &str) -> String {
    format!(
        r#"{{"candidate_answer": "x", "evidence_for": [], "evidence_against": [], "reasoning": "r", "final_judgment": "{judgment}"}}"#
    )
}

fn criterion_9() -> Outcome {
    let corpus = Corpus::new(vec![
        Document {
            doc_id: "75".into(),
            title: "Roja (film)".into(),
            text: "1992 romance.".into(),
        },
        Document {
            doc_id: "220".into(),
            title: "Sahasa Veerudu Sagara Kanya".into(),
            text: "1996 folklore romance.".into(),
        },
    ])
    .unwrap();
    let q = Question {
        question_id: "q".into(),
        text: "1990s Indian and folklore romance films.".into(),
        split: Split::Test,
        golden: vec![],
    };
    let cand = |name: &str, id: &str, j: FinalJudgment| CandidateJudgment {
        candidate_answer: name.into(),
        evidence_for: vec![EvidenceRef {
            doc_id: id.into(),
            text: String::new(),
        }],
        evidence_against: vec![],
        reasoning: String::new(),
        final_judgment: j,
    };
    let mut p = Prediction::empty("q");
    p.push_answer(corpus.get("75").unwrap());
    p.justified = Some(JustifiedResponse {
        question: q.text.clone(),
        candidate_answers: vec![
            cand("Roja (film)", "75", FinalJudgment::True),
            cand("Sahasa Veerudu Sagara Kanya", "220", FinalJudgment::False),
        ],
        answer: vec!["Roja (film)".into()],
        answer_doc_ids: vec!["75".into()],
    });
    let settings = ModelSettings::new("m");
    let flips = ScriptedBackend::new(vec![], ScriptDefault::Response(verdict("TRUE")));
    let out = verify_prediction(&q, &p, VerifyVariant::BASIC, &corpus, &flips, &settings);
    check(out.answers == ["Roja (film)", "Sahasa Veerudu Sagara Kanya"], || format!("answers {:?}", out.answers))?;

    let malformed = ScriptedBackend::new(
        vec![ScriptRule::contains("Candidate Answer", "I think so, probably.")],
        ScriptDefault::Error,
    );
    let ex = VerificationExample {
        question_id: "q".into(),
        question: q.text.clone(),
        candidate: "Roja (film)".into(),
        evidence_doc_ids: vec!["75".into()],
        label: None,
    };
    let j = verify_candidate(&ex, VerifyVariant::BASIC, &corpus, &malformed, &settings).map_err(|e| e.to_string())?;
    check(!j.verdict && !j.diagnostics.is_empty(), || "malformed output was not rejected".into())?;
    check(malformed.calls() == 2, || format!("expected one retry, saw {} calls", malformed.calls()))
}

// ---------------------------------------------------------------------------
// 10. Verification dataset derivation.

fn criterion_10() -> Outcome {
    let titles = ["A", "B", "C", "D", "E"];
    let corpus = Corpus::new(
        titles
            .iter()
            .enumerate()
            .map(|(i, t)| Document {
                doc_id: (i + 1).to_string(),
                title: t.to_string(),
                text: String::new(),
            })
            .collect(),
    )
    .unwrap();
    let rated = |pairs: &[(&str, Rating)]| {
        pairs
            .iter()
            .map(|(e, r)| RatedAnswer {
                entity_name: e.to_string(),
                rating: *r,
            })
            .collect()
    };
    let questions = vec![
        Question {
            question_id: "q1".into(),
            text: "first".into(),
            split: Split::Test,
            golden: rated(&[("A", Rating::Match), ("B", Rating::Debatable)]),
        },
        Question {
            question_id: "q2".into(),
            text: "second".into(),
            split: Split::Test,
            golden: rated(&[("D", Rating::Match), ("E", Rating::NoMatch), ("C", Rating::Match)]),
        },
    ];
    let pred = |qid: &str, ids: &[&str]| {
        let mut p = Prediction::empty(qid);
        for id in ids {
            p.push_answer(corpus.get(id).unwrap());
        }
        p
    };
    let run1 = vec![pred("q1", &["1", "2", "3"]), pred("q2", &["5", "4"])];
    let run2 = vec![pred("q1", &["3", "5"]), pred("q2", &["5"])];
    let got = derive_verification_dataset(&questions, &[run1, run2], &corpus).map_err(|e| e.to_string())?;
    let got: Vec<(&str, &str, bool, &str)> = got
        .iter()
        .map(|e| (e.question_id.as_str(), e.candidate.as_str(), e.label.unwrap(), e.evidence_doc_ids[0].as_str()))
        .collect();
    let want = vec![
        ("q1", "A", true, "1"),
        ("q1", "C", false, "3"),
        ("q1", "E", false, "5"),
        ("q2", "D", true, "4"),
        ("q2", "C", true, "3"),
        ("q2", "E", false, "5"),
    ];
    check(got == want, || format!("{got:?}"))
}

type Criterion = (&'static str, fn() -> Outcome);

fn main() {
    let criteria: [Criterion; 11] = [
        ("metric oracle equivalence", criterion_1),
        ("DEBATABLE neutrality", criterion_2),
        ("subspan EM >= accuracy; aggregate means", criterion_3),
        ("MRecall@K definition", criterion_4),
        ("prompt golden files", criterion_5),
        ("parser fixtures", criterion_6),
        ("end-to-end scripted run", criterion_7),
        ("embedding retrieval oracle", criterion_8),
        ("verification orchestration", criterion_9),
        ("verification dataset derivation", criterion_10),
        ("determinism under concurrency", criterion_11),
    ];
    panic::set_hook(Box::new(|_| {}));
    let mut failed = 0;
    let mut stdout = std::io::stdout().lock();
    for (i, (name, f)) in criteria.iter().enumerate() {
        let outcome = panic::catch_unwind(AssertUnwindSafe(f)).unwrap_or_else(|e| {
            let msg = e
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_else(|| "panic".into());
            Err(format!("panicked: {msg}"))
        });
        match outcome {
            Ok(()) => writeln!(stdout, "criterion {:>2} PASS  {name}", i + 1).unwrap(),
            Err(why) => {
                failed += 1;
                writeln!(stdout, "criterion {:>2} FAIL  {name}: {why}", i + 1).unwrap();
            }
        }
    }
    writeln!(stdout, "{} of {} criteria passed", criteria.len() - failed, criteria.len()).unwrap();
    if failed > 0 {
        std::process::exit(1);
    }
}
