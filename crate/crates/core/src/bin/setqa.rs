use std::fs::{self, File};
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;
use std::time::SystemTime;

use clap::{Args, Parser, Subcommand, ValueEnum};

use setqa::corpus::{self, Corpus, CorpusFormat, Question, Split};
use setqa::llm::{BackendSpec, CachedBackend, LlmBackend, ResponseCache};
use setqa::metrics::{self, Report};
use setqa::prompts::VerifyVariant;
use setqa::qa::{self, ModelSettings, DEFAULT_RETRY_BUDGET};
use setqa::retrieval::{build_embedding_index, EmbedderSpec, EmbeddingIndex, Retriever};
use setqa::runner::{self, Backends, Dataset, RunOptions, SweepRow, DEFAULT_MAX_INFLIGHT};
use setqa::verification;
use setqa::{Error, Result};

#[derive(Parser)]
#[command(name = "setqa", version, about = "Multi-answer QA evaluation harness")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Build and persist an embedding index for a corpus.
    Index(IndexArgs),
    /// Run a list of methods and write per-method artifacts and leaderboards.
    Run(RunArgs),
    /// Re-score an existing predictions file.
    Score(ScoreArgs),
    /// Evaluate a verifier on labeled verification examples.
    VerifyEval(VerifyEvalArgs),
    /// Derive labeled verification examples from golden ratings and prior predictions.
    DeriveVerification(DeriveArgs),
    /// Recall@K and MRecall@K for a pure retriever.
    RetrievalEval(RetrievalEvalArgs),
    /// Merge report files into one leaderboard.
    Leaderboard(LeaderboardArgs),
}

#[derive(Clone, Copy, ValueEnum)]
enum FormatArg {
    Merged,
    Passages,
}

#[derive(Clone, Copy, ValueEnum)]
enum SplitArg {
    Test,
    Dev,
    Train,
}

impl From<SplitArg> for Split {
    fn from(s: SplitArg) -> Self {
        match s {
            SplitArg::Test => Split::Test,
            SplitArg::Dev => Split::Dev,
            SplitArg::Train => Split::Train,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum IndexingArg {
    StaticAll,
    NaiveFirstK,
    EmbeddingTopK,
}

#[derive(Args)]
struct CorpusArgs {
    #[arg(long)]
    corpus: PathBuf,
    #[arg(long, value_enum, default_value = "merged")]
    corpus_format: FormatArg,
}

impl CorpusArgs {
    fn load(&self) -> Result<Corpus> {
        let format = match self.corpus_format {
            FormatArg::Merged => CorpusFormat::Merged,
            FormatArg::Passages => CorpusFormat::Passages,
        };
        corpus::load_corpus(open(&self.corpus)?, format)
    }
}

#[derive(Args)]
struct ModelArgs {
    /// Backend spec (JSON).
    #[arg(long)]
    backend: PathBuf,
    #[arg(long)]
    model: String,
    /// Response cache (JSONL); created if missing.
    #[arg(long)]
    cache: Option<PathBuf>,
    #[arg(long, default_value_t = DEFAULT_MAX_INFLIGHT)]
    max_inflight: usize,
    #[arg(long, default_value_t = 0.0)]
    temperature: f64,
    #[arg(long, default_value_t = 8192)]
    max_output_tokens: u32,
    #[arg(long, default_value_t = DEFAULT_RETRY_BUDGET)]
    retry_budget: u32,
}

impl ModelArgs {
    fn settings(&self) -> ModelSettings {
        ModelSettings {
            model_id: self.model.clone(),
            temperature: self.temperature,
            max_output_tokens: self.max_output_tokens,
            retry_budget: self.retry_budget,
        }
    }

    fn backend(&self) -> Result<Arc<dyn LlmBackend>> {
        let spec: BackendSpec = serde_json::from_reader(open(&self.backend)?)?;
        let llm = spec.build()?;
        Ok(match &self.cache {
            Some(path) => Arc::new(CachedBackend::new(llm, Arc::new(ResponseCache::open(path)?))),
            None => llm,
        })
    }
}

#[derive(Args)]
struct IndexArgs {
    #[command(flatten)]
    corpus: CorpusArgs,
    /// Embedder spec (JSON).
    #[arg(long)]
    embedder: PathBuf,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct RunArgs {
    /// JSON list of method configs.
    #[arg(long)]
    config: PathBuf,
    #[command(flatten)]
    corpus: CorpusArgs,
    #[arg(long)]
    questions: PathBuf,
    #[arg(long, value_enum, default_value = "test")]
    split: SplitArg,
    #[arg(long)]
    out: PathBuf,
    #[command(flatten)]
    model: ModelArgs,
    /// Embedder spec (JSON); required by embedding methods.
    #[arg(long)]
    embedder: Option<PathBuf>,
    /// Prebuilt embedding index.
    #[arg(long)]
    index: Option<PathBuf>,
    /// Timestamp recorded in manifests; defaults to now.
    #[arg(long)]
    timestamp: Option<String>,
}

#[derive(Args)]
struct ScoreArgs {
    #[command(flatten)]
    corpus: CorpusArgs,
    #[arg(long)]
    questions: PathBuf,
    #[arg(long)]
    predictions: PathBuf,
    #[arg(long, default_value = "predictions")]
    method: String,
    /// Write report JSON here instead of stdout.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct VerifyEvalArgs {
    #[command(flatten)]
    corpus: CorpusArgs,
    #[arg(long)]
    examples: PathBuf,
    #[command(flatten)]
    model: ModelArgs,
    #[arg(long)]
    cot: bool,
    #[arg(long)]
    quest: bool,
    /// Write per-example judgments (JSONL) here.
    #[arg(long)]
    judgments: Option<PathBuf>,
}

#[derive(Args)]
struct DeriveArgs {
    #[command(flatten)]
    corpus: CorpusArgs,
    #[arg(long)]
    questions: PathBuf,
    #[arg(long, value_enum, default_value = "test")]
    split: SplitArg,
    /// Prior predictions files.
    #[arg(long = "predictions")]
    predictions: Vec<PathBuf>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct RetrievalEvalArgs {
    #[command(flatten)]
    corpus: CorpusArgs,
    #[arg(long)]
    questions: PathBuf,
    #[arg(long, value_enum, default_value = "test")]
    split: SplitArg,
    #[arg(long, value_enum)]
    indexing: IndexingArg,
    /// Ranking depth; defaults to the largest reported K.
    #[arg(long)]
    k: Option<usize>,
    #[arg(long)]
    embedder: Option<PathBuf>,
    #[arg(long)]
    index: Option<PathBuf>,
    #[arg(long, default_value = "retriever")]
    method: String,
}

#[derive(Args)]
struct LeaderboardArgs {
    /// report.json files, in row order.
    #[arg(required = true)]
    reports: Vec<PathBuf>,
    /// Also write leaderboard.tsv / retrieval_leaderboard.tsv here.
    #[arg(long)]
    out: Option<PathBuf>,
}

fn open(path: &Path) -> Result<BufReader<File>> {
    File::open(path).map(BufReader::new).map_err(|e| {
        Error::Io(std::io::Error::new(e.kind(), format!("{}: {e}", path.display())))
    })
}

fn load_questions(path: &Path, corpus: &Corpus) -> Result<Vec<Question>> {
    corpus::load_questions(open(path)?, corpus)
}

fn load_embedder(path: &Path) -> Result<EmbedderSpec> {
    Ok(serde_json::from_reader(open(path)?)?)
}

fn load_index(path: &Path) -> Result<EmbeddingIndex> {
    EmbeddingIndex::read_jsonl(open(path)?)
}

fn index(args: IndexArgs) -> Result<()> {
    let corpus = args.corpus.load()?;
    let embedder = load_embedder(&args.embedder)?.build()?;
    let index = build_embedding_index(&corpus, embedder.as_ref())?;
    let mut w = BufWriter::new(File::create(&args.out)?);
    index.write_jsonl(&mut w)?;
    w.flush()?;
    eprintln!("indexed {} documents into {}", index.len(), args.out.display());
    Ok(())
}

fn run(args: RunArgs) -> Result<bool> {
    let configs = runner::read_configs(&args.config)?;
    let corpus = args.corpus.load()?;
    let all = load_questions(&args.questions, &corpus)?;
    let dataset = Dataset::new(
        corpus,
        all,
        args.split.into(),
        args.corpus.corpus.display().to_string(),
        args.questions.display().to_string(),
    );
    let embedder = args.embedder.as_deref().map(load_embedder).transpose()?;
    let backends = Backends {
        llm: args.model.backend()?,
        embedder: embedder.map(|s| s.build()).transpose()?,
        index: args.index.as_deref().map(load_index).transpose()?.map(Arc::new),
    };
    let opts = RunOptions {
        settings: args.model.settings(),
        max_inflight: args.model.max_inflight,
        timestamp: args
            .timestamp
            .unwrap_or_else(|| humantime::format_rfc3339_seconds(SystemTime::now()).to_string()),
        cache_path: args.model.cache.as_ref().map(|p| p.display().to_string()),
    };
    let result = runner::sweep(&configs, &dataset, &backends, &opts, &args.out)?;
    for SweepRow { name, outcome } in &result.rows {
        if let Err(e) = outcome {
            eprintln!("{name}: FAILED: {e}");
        }
    }
    print!("{}\n{}", result.leaderboard.text, result.retrieval_leaderboard.text);
    Ok(result.rows.iter().all(|r| r.outcome.is_ok()))
}

fn score(args: ScoreArgs) -> Result<()> {
    let corpus = args.corpus.load()?;
    let questions = load_questions(&args.questions, &corpus)?;
    let predictions = qa::read_predictions(open(&args.predictions)?)?;
    let report = Report::new(args.method, metrics::score_predictions(&questions, &predictions)?, None);
    let json = serde_json::to_string_pretty(&report)? + "\n";
    match args.out {
        Some(path) => fs::write(path, json)?,
        None => print!("{json}"),
    }
    eprint!(
        "{}",
        metrics::render_leaderboard(&[(report.method.clone(), Some(report.aggregate))]).text
    );
    Ok(())
}

fn verify_eval(args: VerifyEvalArgs) -> Result<()> {
    let corpus = args.corpus.load()?;
    let examples = verification::read_examples(open(&args.examples)?)?;
    let llm = args.model.backend()?;
    let settings = args.model.settings();
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(args.model.max_inflight.max(1))
        .build()
        .map_err(|e| Error::Argument(format!("thread pool: {e}")))?;
    let v = VerifyVariant::new(args.cot, args.quest);
    let judged = pool.install(|| verification::evaluate_verifier(&examples, v, &corpus, llm.as_ref(), &settings))?;
    let pairs: Vec<(bool, bool)> = judged.iter().map(|(j, label)| (j.verdict, *label)).collect();
    let m = metrics::classification_metrics(&pairs)?;
    if let Some(path) = args.judgments {
        let mut w = BufWriter::new(File::create(path)?);
        for (j, _) in &judged {
            serde_json::to_writer(&mut w, j)?;
            w.write_all(b"\n")?;
        }
        w.flush()?;
    }
    let rows = [(
        "verifier".to_string(),
        Some(vec![m.precision, m.recall, m.accuracy, m.f1]),
    )];
    print!(
        "{}",
        metrics::render_table(&["Method", "Precision", "Recall", "Accuracy", "F1"], &rows).text
    );
    Ok(())
}

fn derive_verification(args: DeriveArgs) -> Result<()> {
    let corpus = args.corpus.load()?;
    let split: Split = args.split.into();
    let questions: Vec<Question> = load_questions(&args.questions, &corpus)?
        .into_iter()
        .filter(|q| q.split == split)
        .collect();
    let prior = args
        .predictions
        .iter()
        .map(|p| qa::read_predictions(open(p)?))
        .collect::<Result<Vec<_>>>()?;
    let examples = verification::derive_verification_dataset(&questions, &prior, &corpus)?;
    let mut w = BufWriter::new(File::create(&args.out)?);
    verification::write_examples(&examples, &mut w)?;
    w.flush()?;
    let positives = examples.iter().filter(|e| e.label == Some(true)).count();
    eprintln!("{} examples ({positives} positive)", examples.len());
    Ok(())
}

fn retrieval_eval(args: RetrievalEvalArgs) -> Result<()> {
    let corpus = args.corpus.load()?;
    let split: Split = args.split.into();
    let questions: Vec<Question> = load_questions(&args.questions, &corpus)?
        .into_iter()
        .filter(|q| q.split == split)
        .collect();
    let depth = args.k.or(metrics::RETRIEVAL_KS.iter().max().copied());
    let embedder = args.embedder.as_deref().map(load_embedder).transpose()?.map(|s| s.build()).transpose()?;
    let index = match (&args.index, &embedder) {
        (Some(path), _) => Some(load_index(path)?),
        (None, Some(e)) if matches!(args.indexing, IndexingArg::EmbeddingTopK) => {
            Some(build_embedding_index(&corpus, e.as_ref())?)
        }
        _ => None,
    };
    let retriever = match args.indexing {
        IndexingArg::StaticAll => Retriever::static_all(&corpus),
        IndexingArg::NaiveFirstK => Retriever::naive_first_k(&corpus),
        IndexingArg::EmbeddingTopK => {
            let (Some(index), Some(embedder)) = (&index, &embedder) else {
                return Err(Error::Argument("embedding_top_k needs --embedder".into()));
            };
            Retriever::embedding(&corpus, index, embedder.as_ref())
        }
    };
    let mut items = Vec::with_capacity(questions.len());
    for q in &questions {
        let ranked = retriever.retrieve(&q.text, depth)?;
        items.push((q.question_id.clone(), metrics::golden_doc_ids(q, &corpus)?, ranked));
    }
    let report = metrics::retrieval_report(&items, &metrics::RETRIEVAL_KS)?;
    print!(
        "{}",
        metrics::render_retrieval_leaderboard(&[(args.method, Some(report))]).text
    );
    Ok(())
}

fn leaderboard(args: LeaderboardArgs) -> Result<()> {
    let reports = args
        .reports
        .iter()
        .map(|p| Ok(serde_json::from_reader::<_, Report>(open(p)?)?))
        .collect::<Result<Vec<_>>>()?;
    let qa_rows: Vec<_> = reports.iter().map(|r| (r.method.clone(), Some(r.aggregate))).collect();
    let qa_board = metrics::render_leaderboard(&qa_rows);
    print!("{}", qa_board.text);
    let retrieval_rows: Vec<_> = reports
        .iter()
        .filter(|r| r.retrieval.is_some())
        .map(|r| (r.method.clone(), r.retrieval.clone()))
        .collect();
    let retrieval_board = metrics::render_retrieval_leaderboard(&retrieval_rows);
    if !retrieval_rows.is_empty() {
        print!("\n{}", retrieval_board.text);
    }
    if let Some(dir) = args.out {
        fs::create_dir_all(&dir)?;
        fs::write(dir.join("leaderboard.tsv"), &qa_board.tsv)?;
        fs::write(dir.join("retrieval_leaderboard.tsv"), &retrieval_board.tsv)?;
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Index(a) => index(a).map(|_| true),
        Command::Run(a) => run(a),
        Command::Score(a) => score(a).map(|_| true),
        Command::VerifyEval(a) => verify_eval(a).map(|_| true),
        Command::DeriveVerification(a) => derive_verification(a).map(|_| true),
        Command::RetrievalEval(a) => retrieval_eval(a).map(|_| true),
        Command::Leaderboard(a) => leaderboard(a).map(|_| true),
    };
    match result {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}
