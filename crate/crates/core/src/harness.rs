//! Corpus files, run configuration, and the factual-consistency judge
//! prompt with its optional HTTP client.

use std::collections::{BTreeSet, VecDeque};
use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::sync::Mutex;
use std::time::Duration;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::decoder::DecoderConfig;
use crate::error::{Error, Result};
use crate::ulloss::LossConfig;

/// One source text with its reference simplification and, optionally, a
/// system output.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Document {
    pub id: String,
    pub input: String,
    pub label: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output: Option<String>,
}

fn string_field(obj: &serde_json::Map<String, Value>, name: &str, line: usize) -> Result<String> {
    match obj.get(name) {
        None | Some(Value::Null) => Err(Error::parse(line, format!("missing field {name}"))),
        Some(Value::String(s)) => Ok(s.clone()),
        Some(_) => Err(Error::parse(line, format!("field {name} must be a string"))),
    }
}

/// Parses JSONL text. Blank lines are skipped but still counted.
pub fn parse_jsonl(text: &str) -> Result<Vec<Document>> {
    let mut docs = Vec::new();
    let mut seen = BTreeSet::new();
    for (idx, raw) in text.lines().enumerate() {
        let line = idx + 1;
        if raw.trim().is_empty() {
            continue;
        }
        let value: Value = serde_json::from_str(raw).map_err(|e| Error::parse(line, e.to_string()))?;
        let Value::Object(obj) = value else {
            return Err(Error::parse(line, "expected a JSON object"));
        };
        let id = match obj.get("id") {
            Some(Value::Number(n)) => n.to_string(),
            _ => string_field(&obj, "id", line)?,
        };
        let input = string_field(&obj, "input", line)?;
        let label = string_field(&obj, "label", line)?;
        let output = match obj.get("output") {
            None | Some(Value::Null) => None,
            Some(Value::String(s)) => Some(s.clone()),
            Some(_) => return Err(Error::parse(line, "field output must be a string")),
        };
        for (name, value) in [("id", &id), ("input", &input), ("label", &label)] {
            if value.trim().is_empty() {
                return Err(Error::parse(line, format!("empty field {name}")));
            }
        }
        if !seen.insert(id.clone()) {
            return Err(Error::parse(line, format!("duplicate id {id}")));
        }
        docs.push(Document { id, input, label, output });
    }
    Ok(docs)
}

pub fn load_jsonl(path: &Path) -> Result<Vec<Document>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_jsonl(&text)
}

pub fn to_jsonl(documents: &[Document]) -> String {
    let mut out = String::new();
    for doc in documents {
        out.push_str(&serde_json::to_string(doc).expect("documents serialize"));
        out.push('\n');
    }
    out
}

pub fn write_jsonl(path: &Path, documents: &[Document]) -> Result<()> {
    std::fs::write(path, to_jsonl(documents)).map_err(|e| Error::io(path, e))
}

/// Where consistency scores come from.
#[derive(Debug, Clone, PartialEq)]
pub enum ScorerChoice {
    Lexical,
    Precomputed(PathBuf),
}

/// Where entities for the hallucination check come from.
#[derive(Debug, Clone, PartialEq)]
pub enum EntitySource {
    Heuristic,
    External(PathBuf),
}

/// Settings shared by the CLI subcommands.
#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub decoder: DecoderConfig,
    pub loss: LossConfig<f64>,
    pub scorer: ScorerChoice,
    pub entities: EntitySource,
    /// Order of the n-gram LM trained by `decode`.
    pub ngram_order: usize,
    /// Number of documents sent to the judge; the first N are taken.
    pub judge_limit: usize,
    pub workers: usize,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            decoder: DecoderConfig::default(),
            loss: LossConfig::default(),
            scorer: ScorerChoice::Lexical,
            entities: EntitySource::Heuristic,
            ngram_order: 2,
            judge_limit: 50,
            workers: 1,
        }
    }
}

fn parse_value<T: std::str::FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .parse()
        .map_err(|_| Error::Config(format!("{key}: cannot parse {value:?}")))
}

fn parse_bool(key: &str, value: &str) -> Result<bool> {
    match value.to_ascii_lowercase().as_str() {
        "true" | "yes" | "1" | "on" => Ok(true),
        "false" | "no" | "0" | "off" => Ok(false),
        _ => Err(Error::Config(format!("{key}: expected a boolean, got {value:?}"))),
    }
}

/// `key = value` pairs with their line numbers. `#` starts a comment.
pub fn parse_config_lines(text: &str) -> Result<Vec<(usize, String, String)>> {
    let mut pairs = Vec::new();
    for (idx, raw) in text.lines().enumerate() {
        let content = raw.split('#').next().unwrap_or("").trim();
        if content.is_empty() {
            continue;
        }
        let Some((key, value)) = content.split_once('=') else {
            return Err(Error::parse(idx + 1, format!("expected key = value, got {content:?}")));
        };
        pairs.push((idx + 1, key.trim().to_string(), value.trim().to_string()));
    }
    Ok(pairs)
}

impl RunConfig {
    /// Sets one option by its command-line flag name (without dashes).
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        match key {
            "beam-width" => self.decoder.beam_width = parse_value(key, value)?,
            "rerank-k" => self.decoder.rerank_interval = parse_value(key, value)?,
            "max-length" => self.decoder.max_length = parse_value(key, value)?,
            "length-penalty" => self.decoder.length_penalty = parse_value(key, value)?,
            "expansion-factor" => self.decoder.expansion_factor = parse_value(key, value)?,
            "no-hallucination-heuristic" => self.decoder.heuristic_on = !parse_bool(key, value)?,
            "lambda-r" => self.loss.lambda_r = parse_value(key, value)?,
            "lambda-c" => self.loss.lambda_c = parse_value(key, value)?,
            "epsilon" => self.loss.epsilon = parse_value(key, value)?,
            "scorer" => {
                self.scorer = match value {
                    "lexical" => ScorerChoice::Lexical,
                    "precomputed" => match &self.scorer {
                        ScorerChoice::Precomputed(p) => ScorerChoice::Precomputed(p.clone()),
                        ScorerChoice::Lexical => {
                            return Err(Error::Config("scorer = precomputed needs scores = <path>".into()))
                        }
                    },
                    other => return Err(Error::Config(format!("unknown scorer {other:?}"))),
                }
            }
            "scores" => self.scorer = ScorerChoice::Precomputed(PathBuf::from(value)),
            "entities" => self.entities = EntitySource::External(PathBuf::from(value)),
            "ngram-order" => self.ngram_order = parse_value(key, value)?,
            "limit" => self.judge_limit = parse_value(key, value)?,
            "workers" => self.workers = parse_value(key, value)?,
            other => return Err(Error::Config(format!("unknown key {other:?}"))),
        }
        Ok(())
    }

    /// Applies a config file on top of the current values; file entries win.
    pub fn apply_file_text(&mut self, text: &str) -> Result<()> {
        for (line, key, value) in parse_config_lines(text)? {
            self.set(&key, &value).map_err(|e| Error::parse(line, e.to_string()))?;
        }
        Ok(())
    }

    pub fn apply_file(&mut self, path: &Path) -> Result<()> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        self.apply_file_text(&text)
    }

    /// Checks numeric settings and that every referenced file exists.
    pub fn validate(&self) -> Result<()> {
        self.decoder.validate()?;
        self.loss.validate()?;
        if self.ngram_order == 0 {
            return Err(Error::ZeroOrder);
        }
        if self.workers == 0 {
            return Err(Error::Config("workers must be at least 1".into()));
        }
        let paths = [
            match &self.scorer {
                ScorerChoice::Precomputed(p) => Some(p),
                ScorerChoice::Lexical => None,
            },
            match &self.entities {
                EntitySource::External(p) => Some(p),
                EntitySource::Heuristic => None,
            },
        ];
        for path in paths.into_iter().flatten() {
            if !path.exists() {
                return Err(Error::Config(format!("{} does not exist", path.display())));
            }
        }
        Ok(())
    }
}

pub const JUDGE_SYSTEM_ROLE: &str = "Your task is to rate the summary on one metric.";

/// System role and user message sent to the judge.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct JudgePrompt {
    pub system: String,
    pub prompt: String,
}

pub fn build_judge_prompt(document: &Document, summary: &str) -> Result<JudgePrompt> {
    if summary.trim().is_empty() {
        return Err(Error::Empty("summary"));
    }
    let mut prompt = String::new();
    let _ = write!(
        prompt,
        "Human Evaluation of Text Summarization Systems: Factual Consistency: Does the summary have \
         untruthful or misleading facts that are not supported by the source text?\n\
         Source Text: {}\n\
         Summary: {}\n\
         Does the summary contain factual inconsistencies?\n\
         Answer: \n\
         Why: ",
        document.input, summary
    );
    Ok(JudgePrompt {
        system: JUDGE_SYSTEM_ROLE.to_string(),
        prompt,
    })
}

/// Sends one prompt and returns the raw response text.
pub trait JudgeTransport {
    fn send(&self, prompt: &JudgePrompt) -> std::result::Result<String, String>;
}

pub const JUDGE_ENDPOINT_VAR: &str = "JUDGE_ENDPOINT";
pub const JUDGE_API_KEY_VAR: &str = "JUDGE_API_KEY";

/// POSTs `{"system": .., "prompt": ..}` as JSON. The response may be plain
/// text, a JSON string, or an object with a `text`, `content` or
/// `response` string field.
#[derive(Debug, Clone)]
pub struct HttpJudge {
    pub endpoint: String,
    pub api_key: Option<String>,
    pub timeout: Duration,
}

impl HttpJudge {
    pub fn new(endpoint: impl Into<String>, timeout: Duration) -> Self {
        HttpJudge {
            endpoint: endpoint.into(),
            api_key: None,
            timeout,
        }
    }

    pub fn from_env(timeout: Duration) -> Result<Self> {
        let endpoint = std::env::var(JUDGE_ENDPOINT_VAR)
            .map_err(|_| Error::Config(format!("{JUDGE_ENDPOINT_VAR} is not set")))?;
        Ok(HttpJudge {
            endpoint,
            api_key: std::env::var(JUDGE_API_KEY_VAR).ok().filter(|k| !k.is_empty()),
            timeout,
        })
    }
}

fn extract_response_text(body: &str) -> String {
    match serde_json::from_str::<Value>(body) {
        Ok(Value::String(s)) => s,
        Ok(Value::Object(obj)) => ["text", "content", "response"]
            .iter()
            .find_map(|k| obj.get(*k).and_then(Value::as_str).map(str::to_string))
            .unwrap_or_else(|| body.to_string()),
        _ => body.to_string(),
    }
}

impl JudgeTransport for HttpJudge {
    fn send(&self, prompt: &JudgePrompt) -> std::result::Result<String, String> {
        let agent: ureq::Agent = ureq::Agent::config_builder()
            .timeout_global(Some(self.timeout))
            .build()
            .into();
        let mut request = agent.post(&self.endpoint);
        if let Some(key) = &self.api_key {
            request = request.header("Authorization", &format!("Bearer {key}"));
        }
        let mut response = request.send_json(prompt).map_err(|e| e.to_string())?;
        let body = response.body_mut().read_to_string().map_err(|e| e.to_string())?;
        Ok(extract_response_text(&body))
    }
}

/// Offline transport replaying canned responses; the last one repeats.
#[derive(Debug, Default)]
pub struct StubJudge {
    responses: Mutex<VecDeque<std::result::Result<String, String>>>,
    calls: Mutex<usize>,
}

impl StubJudge {
    pub fn new<I, S>(responses: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        StubJudge::scripted(responses.into_iter().map(|s| Ok(s.into())))
    }

    pub fn scripted(responses: impl IntoIterator<Item = std::result::Result<String, String>>) -> Self {
        StubJudge {
            responses: Mutex::new(responses.into_iter().collect()),
            calls: Mutex::new(0),
        }
    }

    pub fn calls(&self) -> usize {
        *self.calls.lock().expect("stub lock")
    }
}

impl JudgeTransport for StubJudge {
    fn send(&self, _prompt: &JudgePrompt) -> std::result::Result<String, String> {
        *self.calls.lock().expect("stub lock") += 1;
        let mut queue = self.responses.lock().expect("stub lock");
        match queue.len() {
            0 => Err("no canned response".into()),
            1 => queue[0].clone(),
            _ => queue.pop_front().expect("nonempty"),
        }
    }
}

/// Retry count and exponential backoff for judge calls.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RetryPolicy {
    pub max_retries: usize,
    pub initial_backoff: Duration,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        RetryPolicy {
            max_retries: 3,
            initial_backoff: Duration::from_millis(500),
        }
    }
}

/// One attempt plus up to `max_retries` retries, doubling the pause each time.
pub fn judge_request(transport: &dyn JudgeTransport, prompt: &JudgePrompt, policy: RetryPolicy) -> Result<String> {
    let mut backoff = policy.initial_backoff;
    let mut last = String::new();
    for attempt in 0..=policy.max_retries {
        if attempt > 0 {
            log::warn!("judge attempt {attempt} failed: {last}; retrying in {backoff:?}");
            std::thread::sleep(backoff);
            backoff *= 2;
        }
        match transport.send(prompt) {
            Ok(text) => return Ok(text),
            Err(e) => last = e,
        }
    }
    Err(Error::Judge {
        attempts: policy.max_retries + 1,
        message: last,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Verdict {
    Inconsistent,
    Consistent,
    Indeterminate,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Judgment {
    pub verdict: Verdict,
    pub rationale: String,
}

impl Judgment {
    pub fn inconsistent(&self) -> bool {
        self.verdict == Verdict::Inconsistent
    }
}

/// Leading "yes"/"no" (after an optional "Answer:") decides the verdict;
/// text after "Why:" becomes the rationale, otherwise whatever follows the
/// answer word.
pub fn parse_judgment(text: &str) -> Judgment {
    let trimmed = text.trim_start();
    let body = trimmed
        .get(..7)
        .filter(|p| p.eq_ignore_ascii_case("answer:"))
        .map_or(trimmed, |_| trimmed[7..].trim_start());
    let word: String = body.chars().take_while(|c| c.is_ascii_alphabetic()).collect();
    let verdict = match word.to_ascii_lowercase().as_str() {
        "yes" => Verdict::Inconsistent,
        "no" => Verdict::Consistent,
        _ => Verdict::Indeterminate,
    };
    let rationale = match text.find("Why:") {
        Some(pos) => text[pos + 4..].trim(),
        None if verdict != Verdict::Indeterminate => body[word.len()..].trim_start_matches(['.', ',', ':']).trim(),
        None => text.trim(),
    };
    Judgment {
        verdict,
        rationale: rationale.to_string(),
    }
}

/// Judgments for a batch and the fraction flagged inconsistent among
/// those with a definite verdict.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct JudgeSummary {
    pub judgments: Vec<(String, Judgment)>,
    pub inconsistent_fraction: Option<f64>,
}

/// Judges the first `limit` documents sequentially, pausing
/// `min_interval` between calls.
pub fn judge_corpus(
    documents: &[Document],
    summaries: &[String],
    transport: &dyn JudgeTransport,
    policy: RetryPolicy,
    limit: usize,
    min_interval: Duration,
) -> Result<JudgeSummary> {
    if documents.len() != summaries.len() {
        return Err(Error::LengthMismatch {
            documents: documents.len(),
            outputs: summaries.len(),
        });
    }
    let mut judgments = Vec::new();
    for (i, (doc, summary)) in documents.iter().zip(summaries).take(limit).enumerate() {
        if i > 0 && !min_interval.is_zero() {
            std::thread::sleep(min_interval);
        }
        let prompt = build_judge_prompt(doc, summary).map_err(|e| Error::Document {
            id: doc.id.clone(),
            source: Box::new(e),
        })?;
        let text = judge_request(transport, &prompt, policy)?;
        judgments.push((doc.id.clone(), parse_judgment(&text)));
    }
    let definite: Vec<&Judgment> = judgments
        .iter()
        .map(|(_, j)| j)
        .filter(|j| j.verdict != Verdict::Indeterminate)
        .collect();
    let inconsistent_fraction = (!definite.is_empty())
        .then(|| definite.iter().filter(|j| j.inconsistent()).count() as f64 / definite.len() as f64);
    Ok(JudgeSummary {
        judgments,
        inconsistent_fraction,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn jsonl_round_trip() {
        let text = "{\"id\":\"a\",\"input\":\"x\",\"label\":\"y\",\"extra\":3}\n\n{\"id\":7,\"input\":\"p\",\"label\":\"q\",\"output\":\"o\"}\n";
        let docs = parse_jsonl(text).unwrap();
        assert_eq!(docs.len(), 2);
        assert_eq!(docs[1].id, "7");
        assert_eq!(docs[1].output.as_deref(), Some("o"));
        assert_eq!(parse_jsonl(&to_jsonl(&docs)).unwrap(), docs);
    }

    #[test]
    fn jsonl_errors_name_the_line() {
        let mut text = String::new();
        for i in 0..6 {
            text.push_str(&format!("{{\"id\":\"{i}\",\"input\":\"x\",\"label\":\"y\"}}\n"));
        }
        let missing = format!("{text}{{\"id\":\"z\",\"input\":\"x\"}}\n");
        assert_eq!(parse_jsonl(&missing).unwrap_err().to_string(), "line 7: missing field label");
        let dup = format!("{text}{{\"id\":\"0\",\"input\":\"x\",\"label\":\"y\"}}\n");
        assert_eq!(parse_jsonl(&dup).unwrap_err().to_string(), "line 7: duplicate id 0");
        assert!(parse_jsonl("{not json").unwrap_err().to_string().starts_with("line 1:"));
        assert!(parse_jsonl("[1]").is_err());
        assert!(parse_jsonl("{\"id\":\"a\",\"input\":\" \",\"label\":\"y\"}").is_err());
    }

    #[test]
    fn config_file_overrides() {
        let mut cfg = RunConfig::default();
        cfg.set("beam-width", "2").unwrap();
        cfg.apply_file_text("# decoder\nbeam-width = 6\nrerank-k=10\nno-hallucination-heuristic = true\nlambda-r = 0.01\n")
            .unwrap();
        assert_eq!(cfg.decoder.beam_width, 6);
        assert_eq!(cfg.decoder.rerank_interval, 10);
        assert!(!cfg.decoder.heuristic_on);
        assert_eq!(cfg.loss.lambda_r, 0.01);
        cfg.validate().unwrap();
        let err = cfg.apply_file_text("\nbogus = 1\n").unwrap_err();
        assert!(err.to_string().starts_with("line 2:"));
        assert!(cfg.apply_file_text("beam-width").is_err());
        cfg.set("scores", "/definitely/not/here.tsv").unwrap();
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn prompt_shape() {
        let doc = Document {
            id: "d".into(),
            input: "Source words here.".into(),
            label: "l".into(),
            output: None,
        };
        let p = build_judge_prompt(&doc, "Short summary.").unwrap();
        assert_eq!(p.system, JUDGE_SYSTEM_ROLE);
        assert!(p.prompt.contains("\nDoes the summary contain factual inconsistencies?\n"));
        assert!(p.prompt.contains("Source Text: Source words here.\n"));
        assert!(p.prompt.ends_with("Why: "));
        assert!(build_judge_prompt(&doc, "  ").is_err());
    }

    #[test]
    fn judgments() {
        let j = parse_judgment("Yes. The summary mentions a dose not in the source.");
        assert_eq!(j.verdict, Verdict::Inconsistent);
        assert_eq!(j.rationale, "The summary mentions a dose not in the source.");
        assert_eq!(parse_judgment("No.").verdict, Verdict::Consistent);
        assert_eq!(parse_judgment("maybe?").verdict, Verdict::Indeterminate);
        assert_eq!(parse_judgment("nope").verdict, Verdict::Indeterminate);
        let j = parse_judgment("Answer: no\nWhy: all facts appear in the source");
        assert_eq!(j.verdict, Verdict::Consistent);
        assert_eq!(j.rationale, "all facts appear in the source");
    }

    #[test]
    fn retries_then_gives_up() {
        let prompt = JudgePrompt {
            system: "s".into(),
            prompt: "p".into(),
        };
        let policy = RetryPolicy {
            max_retries: 3,
            initial_backoff: Duration::ZERO,
        };
        let flaky = StubJudge::scripted([Err("timeout".into()), Err("timeout".into()), Ok("No.".into())]);
        assert_eq!(judge_request(&flaky, &prompt, policy).unwrap(), "No.");
        assert_eq!(flaky.calls(), 3);
        let down = StubJudge::scripted([Err("refused".to_string())]);
        let err = judge_request(&down, &prompt, policy).unwrap_err();
        assert!(matches!(err, Error::Judge { attempts: 4, .. }));
        assert_eq!(down.calls(), 4);
    }

    #[test]
    fn response_body_forms() {
        assert_eq!(extract_response_text("Yes."), "Yes.");
        assert_eq!(extract_response_text("\"No.\""), "No.");
        assert_eq!(extract_response_text("{\"text\":\"Yes. x\"}"), "Yes. x");
        assert_eq!(extract_response_text("{\"other\":1}"), "{\"other\":1}");
    }

    #[test]
    fn corpus_fraction_skips_indeterminate() {
        let docs: Vec<Document> = (0..4)
            .map(|i| Document {
                id: i.to_string(),
                input: "src".into(),
                label: "l".into(),
                output: None,
            })
            .collect();
        let summaries = vec!["s".to_string(); 4];
        let stub = StubJudge::new(["Yes.", "No.", "hmm", "No."]);
        let policy = RetryPolicy {
            max_retries: 0,
            initial_backoff: Duration::ZERO,
        };
        let summary = judge_corpus(&docs, &summaries, &stub, policy, 3, Duration::ZERO).unwrap();
        assert_eq!(summary.judgments.len(), 3);
        assert_eq!(summary.inconsistent_fraction, Some(0.5));
    }
}
