//! `medsimp`: decode, score and evaluate simplifications from the command line.

use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;
use std::time::Duration;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use medsimp::consistency::{consistency_subscore, lexical_score, ConsistencyScorer, EntityExtractor, ExternalEntityFile};
use medsimp::decoder::beam_search_with_entities;
use medsimp::harness::{
    build_judge_prompt, judge_corpus, load_jsonl, to_jsonl, Document, EntitySource, HttpJudge, RetryPolicy,
    RunConfig, ScorerChoice,
};
use medsimp::readability::{FkWeightTable, TextStats};
use medsimp::rerank::{composite_score, RerankContext};
use medsimp::ulloss::{hallucinated_set, loss_breakdown, StepDistribution};
use medsimp::{
    evaluate_corpus, readability_subscore, train_ngram_lm, HeuristicEntities,
    LexicalScorer, PrecomputedScorer, Vocabulary,
};
use serde::Deserialize;

#[derive(Parser, Debug)]
#[command(name = "medsimp", version, about = "Readability-controlled medical text simplification")]
struct Cli {
    /// `key = value` file applied after the flags; its entries win.
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    #[command(flatten)]
    settings: Settings,

    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug, Default)]
struct Settings {
    #[arg(long, global = true)]
    beam_width: Option<usize>,
    /// Rerank every k steps; a value above --max-length disables reranking.
    #[arg(long, global = true)]
    rerank_k: Option<usize>,
    #[arg(long, global = true)]
    max_length: Option<usize>,
    #[arg(long, global = true)]
    length_penalty: Option<f64>,
    #[arg(long, global = true)]
    expansion_factor: Option<usize>,
    #[arg(long, global = true)]
    no_hallucination_heuristic: bool,
    #[arg(long, global = true)]
    lambda_r: Option<f64>,
    #[arg(long, global = true)]
    lambda_c: Option<f64>,
    #[arg(long, global = true)]
    epsilon: Option<f64>,
    /// TAB-separated `candidate<TAB>score` file; replaces the lexical scorer.
    #[arg(long, global = true)]
    scores: Option<PathBuf>,
    /// TAB-separated `document_id<TAB>entity` file; replaces the rule-based extractor.
    #[arg(long, global = true)]
    entities: Option<PathBuf>,
    #[arg(long, global = true)]
    ngram_order: Option<usize>,
    #[arg(long, global = true)]
    workers: Option<usize>,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Decode every document of a corpus and write JSONL with `output` filled in.
    Decode {
        #[arg(long)]
        corpus: PathBuf,
        /// Corpus whose labels train the n-gram model (default: --corpus).
        #[arg(long)]
        train: Option<PathBuf>,
        /// Train one model per document on its N most similar training labels.
        #[arg(long)]
        neighbors: Option<usize>,
        #[arg(long)]
        output: Option<PathBuf>,
    },
    /// Score system outputs against a corpus.
    Eval {
        #[arg(long)]
        corpus: PathBuf,
        /// JSONL with `id` and `output`; defaults to the corpus's own outputs.
        #[arg(long)]
        outputs: Option<PathBuf>,
        #[arg(long, value_enum, default_value_t = Format::Tsv)]
        format: Format,
        #[arg(long)]
        report: Option<PathBuf>,
    },
    /// Composite score breakdown for raw scores or one candidate.
    Score {
        #[arg(long, requires = "fb", conflicts_with_all = ["candidate", "source"])]
        fk: Option<f64>,
        #[arg(long, requires = "fk")]
        fb: Option<f64>,
        #[arg(long, requires = "source")]
        candidate: Option<String>,
        #[arg(long, requires = "candidate")]
        source: Option<String>,
    },
    /// Unlikelihood loss of per-step distributions.
    Loss {
        /// JSON `{vocab, probs, target | nll}`; rows cover `<s>`, `</s>`, then `vocab`.
        #[arg(long)]
        dist: PathBuf,
        #[arg(long)]
        input: String,
        #[arg(long)]
        label: String,
    },
    /// Emit judge prompts as JSONL, or send them with --send.
    JudgePrompt {
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long)]
        limit: Option<usize>,
        /// POST to $JUDGE_ENDPOINT and print verdicts.
        #[arg(long)]
        send: bool,
        #[arg(long, default_value_t = 60)]
        timeout_secs: u64,
    },
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum Format {
    Tsv,
    Table,
}

fn run_config(cli: &Cli) -> Result<RunConfig> {
    let s = &cli.settings;
    let mut cfg = RunConfig::default();
    let d = &mut cfg.decoder;
    d.beam_width = s.beam_width.unwrap_or(d.beam_width);
    d.rerank_interval = s.rerank_k.unwrap_or(d.rerank_interval);
    d.max_length = s.max_length.unwrap_or(d.max_length);
    d.length_penalty = s.length_penalty.unwrap_or(d.length_penalty);
    d.expansion_factor = s.expansion_factor.unwrap_or(d.expansion_factor);
    d.heuristic_on &= !s.no_hallucination_heuristic;
    cfg.loss.lambda_r = s.lambda_r.unwrap_or(cfg.loss.lambda_r);
    cfg.loss.lambda_c = s.lambda_c.unwrap_or(cfg.loss.lambda_c);
    cfg.loss.epsilon = s.epsilon.unwrap_or(cfg.loss.epsilon);
    if let Some(p) = &s.scores {
        cfg.scorer = ScorerChoice::Precomputed(p.clone());
    }
    if let Some(p) = &s.entities {
        cfg.entities = EntitySource::External(p.clone());
    }
    cfg.ngram_order = s.ngram_order.unwrap_or(cfg.ngram_order);
    cfg.workers = s.workers.unwrap_or(cfg.workers);
    if let Some(path) = &cli.config {
        cfg.apply_file(path).with_context(|| format!("config {}", path.display()))?;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn scorer(cfg: &RunConfig) -> Result<Box<dyn ConsistencyScorer>> {
    Ok(match &cfg.scorer {
        ScorerChoice::Lexical => Box::new(LexicalScorer::new()),
        ScorerChoice::Precomputed(p) => Box::new(PrecomputedScorer::load(p)?),
    })
}

fn external_entities(cfg: &RunConfig) -> Result<Option<ExternalEntityFile>> {
    match &cfg.entities {
        EntitySource::Heuristic => Ok(None),
        EntitySource::External(p) => Ok(Some(ExternalEntityFile::load(p)?)),
    }
}

fn emit(path: Option<&Path>, text: &str) -> Result<()> {
    match path {
        Some(p) => std::fs::write(p, text).with_context(|| format!("writing {}", p.display())),
        None => {
            std::io::stdout().write_all(text.as_bytes())?;
            Ok(())
        }
    }
}

/// Runs `f` over `items` on at most `workers` threads, keeping input order.
fn parallel_map<T: Sync, R: Send>(items: &[T], workers: usize, f: impl Fn(&T) -> Result<R> + Sync) -> Result<Vec<R>> {
    let next = AtomicUsize::new(0);
    let slots: Mutex<Vec<Option<Result<R>>>> = Mutex::new((0..items.len()).map(|_| None).collect());
    std::thread::scope(|scope| {
        for _ in 0..workers.min(items.len()).max(1) {
            scope.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::Relaxed);
                let Some(item) = items.get(i) else { break };
                let r = f(item);
                slots.lock().expect("worker panicked")[i] = Some(r);
            });
        }
    });
    slots
        .into_inner()
        .expect("worker panicked")
        .into_iter()
        .map(|r| r.expect("every slot filled"))
        .collect()
}

fn decode(cfg: &RunConfig, corpus: &Path, train: Option<&Path>, neighbors: Option<usize>, output: Option<&Path>) -> Result<()> {
    let docs = load_jsonl(corpus).with_context(|| format!("corpus {}", corpus.display()))?;
    let training = match train {
        Some(p) => load_jsonl(p).with_context(|| format!("training corpus {}", p.display()))?,
        None => docs.clone(),
    };
    let labels: Vec<&str> = training.iter().map(|d| d.label.as_str()).collect();
    let shared = match neighbors {
        None => Some(train_ngram_lm(&labels, cfg.ngram_order)?),
        Some(0) => bail!("--neighbors must be at least 1"),
        Some(_) => None,
    };
    let scorer = scorer(cfg)?;
    let external = external_entities(cfg)?;
    let decoded = parallel_map(&docs, cfg.workers, |doc| {
        let local;
        let lm = match (&shared, neighbors) {
            (Some(lm), _) => lm,
            (None, n) => {
                let mut ranked: Vec<(f64, &str)> = labels
                    .iter()
                    .map(|l| Ok((lexical_score(l, &doc.input)?, *l)))
                    .collect::<medsimp::Result<_>>()?;
                ranked.sort_by(|a, b| b.0.total_cmp(&a.0));
                let near: Vec<&str> = ranked.iter().take(n.unwrap_or(1)).map(|(_, l)| *l).collect();
                local = train_ngram_lm(&near, cfg.ngram_order)?;
                &local
            }
        };
        let listed = external.as_ref().map(|e| e.for_document(&doc.id));
        let entities: &dyn EntityExtractor = match &listed {
            Some(l) => l,
            None => &HeuristicEntities,
        };
        let out = beam_search_with_entities(lm, &doc.input, &cfg.decoder, scorer.as_ref(), entities)
            .with_context(|| format!("document {}", doc.id))?;
        if out.hallucination_warning {
            log::warn!("{}: no candidate free of unsupported entities", doc.id);
        }
        if out.ids.is_empty() {
            log::warn!("{}: decoded to an empty output", doc.id);
        }
        Ok(Document {
            output: Some(out.text()),
            ..doc.clone()
        })
    })?;
    emit(output, &to_jsonl(&decoded))
}

#[derive(Deserialize)]
struct OutputLine {
    id: serde_json::Value,
    output: String,
}

fn read_outputs(path: &Path, docs: &[Document]) -> Result<Vec<String>> {
    let text = std::fs::read_to_string(path).with_context(|| format!("outputs {}", path.display()))?;
    let mut by_id = std::collections::HashMap::new();
    for (i, line) in text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty()) {
        let o: OutputLine = serde_json::from_str(line).with_context(|| format!("{} line {}", path.display(), i + 1))?;
        let id = match o.id {
            serde_json::Value::String(s) => s,
            other => other.to_string(),
        };
        by_id.insert(id, o.output);
    }
    docs.iter()
        .map(|d| by_id.remove(&d.id).with_context(|| format!("no output for document {}", d.id)))
        .collect()
}

fn eval(cfg: &RunConfig, corpus: &Path, outputs: Option<&Path>, format: Format, report: Option<&Path>) -> Result<()> {
    let docs = load_jsonl(corpus).with_context(|| format!("corpus {}", corpus.display()))?;
    let outs = match outputs {
        Some(p) => read_outputs(p, &docs)?,
        None => docs
            .iter()
            .map(|d| d.output.clone().with_context(|| format!("document {} has no output", d.id)))
            .collect::<Result<_>>()?,
    };
    let scorer = scorer(cfg)?;
    let result = evaluate_corpus(&docs, &outs, scorer.as_ref())?;
    emit(
        report,
        &match format {
            Format::Tsv => result.to_tsv(),
            Format::Table => result.to_table(),
        },
    )
}

/// Four decimals with trailing zeros dropped.
fn short(x: f64) -> String {
    let s = format!("{x:.4}");
    let s = s.trim_end_matches('0').trim_end_matches('.');
    if s == "-0" { "0".into() } else { s.into() }
}

fn score(cfg: &RunConfig, fk: Option<f64>, fb: Option<f64>, candidate: Option<&str>, source: Option<&str>) -> Result<()> {
    match (fk, fb, candidate, source) {
        (Some(fk), Some(fb), _, _) => {
            let r_f = readability_subscore(fk);
            let r_b = consistency_subscore(fb)?;
            println!("r_F={} r_B={} r={}", short(r_f), short(r_b), short(composite_score(r_f, r_b)?));
        }
        (_, _, Some(candidate), Some(source)) => {
            let scorer = scorer(cfg)?;
            let ctx = RerankContext::new(source, scorer.as_ref(), cfg.decoder.heuristic_on);
            let s = ctx.score_text(candidate)?;
            println!("{}", serde_json::to_string_pretty(&s)?);
            let stats = TextStats::of(candidate);
            log::info!("{} words, {} sentences", stats.words, stats.sentences);
        }
        _ => bail!("give --fk and --fb, or --candidate and --source"),
    }
    Ok(())
}

#[derive(Deserialize)]
struct LossInput {
    vocab: Vec<String>,
    probs: Vec<Vec<f64>>,
    #[serde(default)]
    target: Option<Vec<String>>,
    #[serde(default)]
    nll: Option<f64>,
}

fn loss(cfg: &RunConfig, dist: &Path, input: &str, label: &str) -> Result<()> {
    let text = std::fs::read_to_string(dist).with_context(|| format!("distributions {}", dist.display()))?;
    let parsed: LossInput = serde_json::from_str(&text).with_context(|| format!("parsing {}", dist.display()))?;
    let vocab = Vocabulary::new(&parsed.vocab);
    let steps = parsed
        .probs
        .into_iter()
        .enumerate()
        .map(|(t, row)| StepDistribution::new(row).with_context(|| format!("step {t}")))
        .collect::<Result<Vec<_>>>()?;
    let nll = match (parsed.nll, parsed.target) {
        (Some(n), None) => n,
        (None, Some(target)) => {
            if target.len() != steps.len() {
                bail!("{} target words for {} steps", target.len(), steps.len());
            }
            let ids = vocab.encode(&target)?;
            steps.iter().zip(ids).map(|(d, y)| -d.prob(y).ln()).sum()
        }
        _ => bail!("give exactly one of \"target\" and \"nll\""),
    };
    let greedy: Vec<usize> = steps.iter().map(|s| s.argmax()).collect();
    let e = hallucinated_set(&greedy, &vocab, input, label);
    let weights = FkWeightTable::<f64>::for_vocabulary(&vocab);
    let b = loss_breakdown(nll, &steps, &vocab, &weights, &e, &cfg.loss)?;
    let report = serde_json::json!({
        "nll": b.nll,
        "ul_r": b.ul_r,
        "ul_c": b.ul_c,
        "total": b.total,
        "hallucinated": e.words(&vocab),
    });
    println!("{}", serde_json::to_string_pretty(&report)?);
    Ok(())
}

fn judge(cfg: &RunConfig, corpus: &Path, limit: Option<usize>, send: bool, timeout: Duration) -> Result<()> {
    let docs = load_jsonl(corpus).with_context(|| format!("corpus {}", corpus.display()))?;
    let limit = limit.unwrap_or(cfg.judge_limit);
    let summaries: Vec<String> = docs
        .iter()
        .map(|d| d.output.clone().unwrap_or_else(|| d.label.clone()))
        .collect();
    if send {
        let client = HttpJudge::from_env(timeout)?;
        let result = judge_corpus(&docs, &summaries, &client, RetryPolicy::default(), limit, Duration::from_secs(1))?;
        println!("{}", serde_json::to_string_pretty(&result)?);
        return Ok(());
    }
    let mut out = String::new();
    for (doc, summary) in docs.iter().zip(&summaries).take(limit) {
        let p = build_judge_prompt(doc, summary).with_context(|| format!("document {}", doc.id))?;
        let line = serde_json::json!({ "id": doc.id, "system": p.system, "prompt": p.prompt });
        out.push_str(&line.to_string());
        out.push('\n');
    }
    emit(None, &out)
}

/// The error chain, skipping causes already spelled out by their parent.
fn describe(e: &anyhow::Error) -> String {
    let mut out = String::new();
    for cause in e.chain() {
        let text = cause.to_string();
        if !out.contains(&text) {
            if !out.is_empty() {
                out.push_str(": ");
            }
            out.push_str(&text);
        }
    }
    out
}

fn run(cli: Cli) -> Result<()> {
    let cfg = run_config(&cli)?;
    match cli.command {
        Command::Decode { corpus, train, neighbors, output } => {
            decode(&cfg, &corpus, train.as_deref(), neighbors, output.as_deref())
        }
        Command::Eval { corpus, outputs, format, report } => {
            eval(&cfg, &corpus, outputs.as_deref(), format, report.as_deref())
        }
        Command::Score { fk, fb, candidate, source } => score(&cfg, fk, fb, candidate.as_deref(), source.as_deref()),
        Command::Loss { dist, input, label } => loss(&cfg, &dist, &input, &label),
        Command::JudgePrompt { corpus, limit, send, timeout_secs } => {
            judge(&cfg, &corpus, limit, send, Duration::from_secs(timeout_secs))
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {}", describe(&e));
            ExitCode::from(2)
        }
    }
}
