//! Few-shot, reason-first prompting of a text-completion service.
//!
//! [`build_prompt`] renders reference `(name, reflectance)` pairs plus the
//! query call; the service answers with one small markdown table per object,
//! which [`parse_reply`] turns back into numbers. Transport is abstracted by
//! [`CompletionClient`] so every test can run against canned transcripts.

use std::collections::HashMap;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;
use std::sync::OnceLock;
use std::time::Duration;

use regex::Regex;
use serde::{Deserialize, Serialize};

use crate::dataset::PredictionRecord;
use crate::error::{Error, Result};

pub const DEFAULT_PREAMBLE: &str = "You are an expert in material properties. Your task is to determine the \
infrared reflectance of a given object. Please provide a single, reasonable value from the estimated range \
of infrared reflectance for each object. If your prediction is not conclusive, please output an approximate \
value as a guess. Note that the reflectivity of plastic bottles varies depending on their contents and labels.";

pub const EXAMPLES_INTRO: &str =
    "Here are some example objects and their reflectance for reference:";

pub const REASONING_DIRECTIVE: &str = "Work through each object in three steps. First, infer how the surface \
of the object reflects light from its name (material, colour, packaging, printing). Second, compare those \
surface features with the reference objects above and estimate a plausible range of infrared reflectance. \
Third, give the most plausible single value inside that range as the prediction.";

pub const FORMAT_DIRECTIVE: &str =
    "Reply with one markdown table per object, in the order requested, laid out exactly as:

|item|result|
|:--|:--|
|Name|<object name>|
|Reason|<your reasoning>|
|**Response**|range: <low> - <high>, prediction: **<value>**|";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PromptSpec {
    pub preamble: String,
    /// Reference `(descriptor, reflectance)` pairs, rendered in the given order.
    pub examples: Vec<(String, f64)>,
    pub query_names: Vec<String>,
    /// Decimal places for example values; `None` prints the shortest exact form.
    pub precision: Option<usize>,
}

impl PromptSpec {
    pub fn new(examples: Vec<(String, f64)>, query_names: Vec<String>) -> Self {
        Self {
            preamble: DEFAULT_PREAMBLE.to_string(),
            examples,
            query_names,
            precision: None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.examples.is_empty() {
            return Err(Error::InvalidParameter(
                "few-shot prompt needs at least one example".into(),
            ));
        }
        if self.query_names.is_empty() {
            return Err(Error::InvalidParameter(
                "prompt needs at least one query name".into(),
            ));
        }
        let mut seen = std::collections::HashSet::new();
        for q in &self.query_names {
            if q.trim().is_empty() || q.contains('\n') {
                return Err(Error::InvalidParameter(format!("bad query name {q:?}")));
            }
            if !seen.insert(normalize_name(q)) {
                return Err(Error::InvalidParameter(format!(
                    "duplicate query name {q:?}"
                )));
            }
        }
        for (name, alpha) in &self.examples {
            if name.trim().is_empty() || name.contains('\n') {
                return Err(Error::InvalidParameter(format!(
                    "bad example name {name:?}"
                )));
            }
            if !alpha.is_finite() {
                return Err(Error::InvalidParameter(format!(
                    "example `{name}` has a non-finite value"
                )));
            }
        }
        Ok(())
    }
}

/// Renders the full prompt text. Deterministic in `spec`.
pub fn build_prompt(spec: &PromptSpec) -> Result<String> {
    spec.validate()?;
    let mut out = String::new();
    out.push_str(&spec.preamble);
    out.push_str("\n\n");
    out.push_str(EXAMPLES_INTRO);
    out.push_str("\n\n");
    for (name, alpha) in &spec.examples {
        match spec.precision {
            Some(p) => {
                let _ = writeln!(out, "{name} : {alpha:.p$}");
            }
            None => {
                let _ = writeln!(out, "{name} : {alpha}");
            }
        }
    }
    out.push_str("\n---\n\n");
    out.push_str(REASONING_DIRECTIVE);
    out.push_str("\n\n");
    out.push_str(FORMAT_DIRECTIVE);
    out.push_str("\n\n");
    let names: Vec<String> = spec
        .query_names
        .iter()
        .map(|n| serde_json::to_string(n).expect("strings always serialise"))
        .collect();
    let _ = writeln!(out, "User: get_reflectance([{}])", names.join(", "));
    out.push_str("You:\n");
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EstimateReply {
    pub name: String,
    pub range_lo: f64,
    pub range_hi: f64,
    pub prediction: f64,
    pub reason: String,
    /// Prediction falls outside its own stated range.
    pub inconsistent: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ParseIssue {
    /// Byte offset of the offending table in the reply.
    pub offset: usize,
    pub message: String,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct ReplyParse {
    pub entries: Vec<EstimateReply>,
    pub issues: Vec<ParseIssue>,
}

struct Row {
    offset: usize,
    cells: Vec<String>,
}

fn number_patterns() -> &'static (Regex, Regex) {
    static RE: OnceLock<(Regex, Regex)> = OnceLock::new();
    RE.get_or_init(|| {
        let num = r"([-+]?(?:\d+(?:\.\d*)?|\.\d+))";
        (
            Regex::new(&format!(
                r"(?i)range\s*:\s*\**\s*{num}\s*\**\s*(?:-|–|—|~|to)\s*\**\s*{num}"
            ))
            .unwrap(),
            Regex::new(&format!(r"(?i)prediction\s*:\s*\**\s*{num}")).unwrap(),
        )
    })
}

fn normalize_key(cell: &str) -> String {
    cell.trim().trim_matches('*').trim().to_ascii_lowercase()
}

fn normalize_name(name: &str) -> String {
    name.trim()
        .trim_matches('*')
        .split_whitespace()
        .collect::<Vec<_>>()
        .join(" ")
        .to_lowercase()
}

fn split_cells(row: &str) -> Vec<String> {
    let inner = row.trim();
    let inner = inner.strip_prefix('|').unwrap_or(inner);
    let inner = inner.strip_suffix('|').unwrap_or(inner);
    inner.split('|').map(|c| c.trim().to_string()).collect()
}

fn is_separator(cells: &[String]) -> bool {
    cells.iter().all(|c| {
        let c = c.trim();
        !c.is_empty() && c.chars().all(|ch| matches!(ch, '-' | ':' | ' '))
    })
}

/// Groups markdown table rows (allowing cells that wrap over several lines)
/// into tables, each a list of rows.
fn tables(text: &str) -> Vec<Vec<Row>> {
    let mut tables = Vec::new();
    let mut current: Vec<Row> = Vec::new();
    let mut open: Option<(usize, String)> = None;
    let mut offset = 0;
    for raw in text.split_inclusive('\n') {
        let line_offset = offset;
        offset += raw.len();
        let line = raw.trim();
        if let Some((start, mut acc)) = open.take() {
            if line.starts_with('|') {
                // Previous row never closed; keep what we have and restart.
                current.push(Row {
                    offset: start,
                    cells: split_cells(&acc),
                });
            } else {
                acc.push(' ');
                acc.push_str(line);
                if acc.ends_with('|') {
                    current.push(Row {
                        offset: start,
                        cells: split_cells(&acc),
                    });
                } else {
                    open = Some((start, acc));
                }
                continue;
            }
        }
        if line.starts_with('|') {
            if line.len() > 1 && line.ends_with('|') {
                current.push(Row {
                    offset: line_offset,
                    cells: split_cells(line),
                });
            } else {
                open = Some((line_offset, line.to_string()));
            }
        } else if !current.is_empty() {
            tables.push(std::mem::take(&mut current));
        }
    }
    if let Some((start, acc)) = open {
        current.push(Row {
            offset: start,
            cells: split_cells(&acc),
        });
    }
    if !current.is_empty() {
        tables.push(current);
    }
    tables
}

fn parse_response(
    name: &str,
    reason: &str,
    response: &str,
) -> std::result::Result<EstimateReply, String> {
    let (range_re, pred_re) = number_patterns();
    let pred = pred_re
        .captures(response)
        .ok_or_else(|| format!("`{name}`: no prediction in response {response:?}"))?;
    let prediction: f64 = pred[1]
        .parse()
        .map_err(|_| format!("`{name}`: bad prediction number"))?;
    let range = range_re
        .captures(response)
        .ok_or_else(|| format!("`{name}`: no range in response {response:?}"))?;
    let lo: f64 = range[1]
        .parse()
        .map_err(|_| format!("`{name}`: bad range"))?;
    let hi: f64 = range[2]
        .parse()
        .map_err(|_| format!("`{name}`: bad range"))?;
    if !(prediction.is_finite() && lo.is_finite() && hi.is_finite()) {
        return Err(format!("`{name}`: non-finite number"));
    }
    Ok(EstimateReply {
        name: name.to_string(),
        range_lo: lo,
        range_hi: hi,
        prediction,
        reason: reason.to_string(),
        inconsistent: !(lo <= prediction && prediction <= hi),
    })
}

/// Extracts every Name/Reason/Response table from a reply, in document order.
///
/// Accepts the vertical `|item|result|` layout (one table per object) and a
/// horizontal layout with `Name`, `Reason` and `Response` header columns.
/// Entries that cannot be parsed are reported in [`ReplyParse::issues`] and
/// skipped.
pub fn parse_reply(text: &str) -> ReplyParse {
    let mut out = ReplyParse::default();
    for table in tables(text) {
        let rows: Vec<&Row> = table.iter().filter(|r| !is_separator(&r.cells)).collect();
        let Some(first) = rows.first() else { continue };
        let header: Vec<String> = first.cells.iter().map(|c| normalize_key(c)).collect();
        let col = |k: &str| header.iter().position(|h| h == k);

        if let (Some(ni), Some(ri)) = (col("name"), col("response")) {
            let reason_i = col("reason");
            for row in &rows[1..] {
                let get = |i: usize| row.cells.get(i).map(String::as_str).unwrap_or("");
                let name = get(ni).trim_matches('*').trim();
                if name.is_empty() {
                    out.issues.push(ParseIssue {
                        offset: row.offset,
                        message: "row without a name".into(),
                    });
                    continue;
                }
                match parse_response(name, reason_i.map(get).unwrap_or(""), get(ri)) {
                    Ok(e) => out.entries.push(e),
                    Err(message) => out.issues.push(ParseIssue {
                        offset: row.offset,
                        message,
                    }),
                }
            }
            continue;
        }

        let mut fields: HashMap<String, String> = HashMap::new();
        for row in &rows {
            if row.cells.len() >= 2 {
                fields
                    .entry(normalize_key(&row.cells[0]))
                    .or_insert_with(|| row.cells[1..].join("|"));
            }
        }
        let name = fields
            .get("name")
            .map(|s| s.trim_matches('*').trim().to_string());
        let response = fields.get("response");
        match (name, response) {
            (None, None) => {}
            (Some(name), Some(resp)) if !name.is_empty() => {
                let reason = fields.get("reason").map(String::as_str).unwrap_or("");
                match parse_response(&name, reason, resp) {
                    Ok(e) => out.entries.push(e),
                    Err(message) => out.issues.push(ParseIssue {
                        offset: first.offset,
                        message,
                    }),
                }
            }
            (name, _) => out.issues.push(ParseIssue {
                offset: first.offset,
                message: format!(
                    "incomplete entry table (name: {name:?}, response present: {})",
                    response.is_some()
                ),
            }),
        }
    }
    out
}

/// Renders replies in the format [`parse_reply`] reads.
pub fn render_reply(entries: &[EstimateReply]) -> String {
    let mut out = String::new();
    for (i, e) in entries.iter().enumerate() {
        if i > 0 {
            out.push('\n');
        }
        let _ = writeln!(
            out,
            "|item|result|\n|:--|:--|\n|Name|{}|\n|Reason|{}|",
            e.name, e.reason
        );
        let _ = writeln!(
            out,
            "|**Response**|range: {} - {}, prediction: **{}**|",
            e.range_lo, e.range_hi, e.prediction
        );
    }
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClientConfig {
    pub endpoint: String,
    pub model: String,
    pub timeout: Duration,
    pub max_retries: u32,
    /// Upper bound on concurrent requests.
    pub parallelism: usize,
}

impl Default for ClientConfig {
    fn default() -> Self {
        Self {
            endpoint: "mock".into(),
            model: "mock".into(),
            timeout: Duration::from_secs(60),
            max_retries: 2,
            parallelism: 1,
        }
    }
}

impl ClientConfig {
    pub fn validate(&self) -> Result<()> {
        if self.timeout.is_zero() {
            return Err(Error::InvalidParameter("client timeout must be > 0".into()));
        }
        if self.parallelism == 0 {
            return Err(Error::InvalidParameter("parallelism must be >= 1".into()));
        }
        Ok(())
    }
}

/// One text prompt in, one text completion out.
pub trait CompletionClient: Sync {
    /// `trial` identifies the repetition so replaying clients stay
    /// deterministic under concurrency; live clients ignore it.
    fn complete(&self, prompt: &str, trial: u32) -> Result<String>;

    /// Short identifier recorded in run metadata.
    fn describe(&self) -> String;
}

/// Replays canned replies: trial `t` receives `replies[t % len]`.
#[derive(Debug, Clone)]
pub struct MockClient {
    replies: Vec<String>,
}

impl MockClient {
    pub fn new(replies: Vec<String>) -> Result<Self> {
        if replies.is_empty() {
            return Err(Error::InvalidParameter(
                "mock client needs at least one reply".into(),
            ));
        }
        Ok(Self { replies })
    }
}

impl CompletionClient for MockClient {
    fn complete(&self, _prompt: &str, trial: u32) -> Result<String> {
        Ok(self.replies[trial as usize % self.replies.len()].clone())
    }

    fn describe(&self) -> String {
        format!("mock({} replies)", self.replies.len())
    }
}

/// Chat-completions client for OpenAI-compatible endpoints. Decoding
/// parameters are left at the service defaults.
#[cfg(feature = "remote")]
pub struct RemoteClient {
    cfg: ClientConfig,
    api_key: String,
    http: reqwest::blocking::Client,
}

#[cfg(feature = "remote")]
impl RemoteClient {
    pub fn new(cfg: ClientConfig, api_key: String) -> Result<Self> {
        cfg.validate()?;
        let http = reqwest::blocking::Client::builder()
            .timeout(cfg.timeout)
            .build()
            .map_err(|e| Error::Transport(e.to_string()))?;
        Ok(Self { cfg, api_key, http })
    }
}

#[cfg(feature = "remote")]
impl CompletionClient for RemoteClient {
    fn complete(&self, prompt: &str, _trial: u32) -> Result<String> {
        let body = serde_json::json!({
            "model": self.cfg.model,
            "messages": [{"role": "user", "content": prompt}],
        });
        let url = format!(
            "{}/chat/completions",
            self.cfg.endpoint.trim_end_matches('/')
        );
        let resp = self
            .http
            .post(url)
            .bearer_auth(&self.api_key)
            .json(&body)
            .send()
            .map_err(|e| Error::Transport(e.to_string()))?;
        let status = resp.status();
        let value: serde_json::Value = resp.json().map_err(|e| Error::Transport(e.to_string()))?;
        if !status.is_success() {
            return Err(Error::Transport(format!("HTTP {status}: {value}")));
        }
        value["choices"][0]["message"]["content"]
            .as_str()
            .map(str::to_string)
            .ok_or_else(|| Error::Protocol(format!("no completion text in response: {value}")))
    }

    fn describe(&self) -> String {
        format!("remote({}, {})", self.cfg.endpoint, self.cfg.model)
    }
}

/// One estimate together with the unclamped value the service returned.
#[derive(Debug, Clone, PartialEq)]
pub struct PromptPrediction {
    pub record: PredictionRecord,
    pub raw_prediction: f64,
    pub reply: EstimateReply,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Transcript {
    pub trial: u32,
    pub prompt: String,
    /// `None` when every attempt failed.
    pub reply: Option<String>,
    pub attempts: u32,
}

#[derive(Debug, Clone, PartialEq)]
pub struct QueryFailure {
    pub object_id: String,
    pub trial: u32,
    pub error: String,
    pub transport: bool,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct EstimateOutcome {
    pub predictions: Vec<PromptPrediction>,
    pub transcripts: Vec<Transcript>,
    pub failures: Vec<QueryFailure>,
}

impl EstimateOutcome {
    pub fn records(&self) -> Vec<PredictionRecord> {
        self.predictions.iter().map(|p| p.record.clone()).collect()
    }
}

/// A queried object: its id and the descriptor shown to the model.
#[derive(Debug, Clone, PartialEq)]
pub struct Query {
    pub object_id: String,
    pub name: String,
}

fn run_trial(
    client: &dyn CompletionClient,
    prompt: &str,
    trial: u32,
    max_retries: u32,
) -> (Transcript, Result<String>) {
    let mut last_err = None;
    for attempt in 1..=max_retries + 1 {
        match client.complete(prompt, trial) {
            Ok(reply) => {
                let t = Transcript {
                    trial,
                    prompt: prompt.to_string(),
                    reply: Some(reply.clone()),
                    attempts: attempt,
                };
                return (t, Ok(reply));
            }
            Err(e) => last_err = Some(e),
        }
    }
    let t = Transcript {
        trial,
        prompt: prompt.to_string(),
        reply: None,
        attempts: max_retries + 1,
    };
    (t, Err(last_err.expect("at least one attempt")))
}

/// Issues one request per trial (each an independent conversation asking for
/// every query) and collects one prediction per `(query, trial)`.
///
/// Predictions are clamped to `[0, 1]`; the raw value is kept alongside.
/// Failures are recorded per query and do not stop the run. Output order is
/// `(trial, query)` regardless of completion order.
pub fn estimate(
    queries: &[Query],
    spec: &PromptSpec,
    client: &dyn CompletionClient,
    cfg: &ClientConfig,
    method_id: &str,
    trials: u32,
) -> Result<EstimateOutcome> {
    cfg.validate()?;
    let mut spec = spec.clone();
    spec.query_names = queries.iter().map(|q| q.name.clone()).collect();
    let prompt = build_prompt(&spec)?;

    let trial_ids: Vec<u32> = (0..trials).collect();
    let mut responses = Vec::with_capacity(trials as usize);
    for chunk in trial_ids.chunks(cfg.parallelism) {
        if chunk.len() == 1 {
            responses.push(run_trial(client, &prompt, chunk[0], cfg.max_retries));
            continue;
        }
        let results: Vec<_> = std::thread::scope(|s| {
            let handles: Vec<_> = chunk
                .iter()
                .map(|&t| {
                    let prompt = &prompt;
                    s.spawn(move || run_trial(client, prompt, t, cfg.max_retries))
                })
                .collect();
            handles
                .into_iter()
                .map(|h| h.join().expect("client thread panicked"))
                .collect()
        });
        responses.extend(results);
    }

    let mut out = EstimateOutcome::default();
    for (transcript, reply) in responses {
        let trial = transcript.trial;
        out.transcripts.push(transcript);
        let reply = match reply {
            Ok(r) => r,
            Err(e) => {
                for q in queries {
                    out.failures.push(QueryFailure {
                        object_id: q.object_id.clone(),
                        trial,
                        error: format!("{e} (after {} attempts)", cfg.max_retries + 1),
                        transport: true,
                    });
                }
                continue;
            }
        };
        let parsed = parse_reply(&reply);
        let mut by_name: HashMap<String, &EstimateReply> = HashMap::new();
        for e in &parsed.entries {
            by_name.entry(normalize_name(&e.name)).or_insert(e);
        }
        for q in queries {
            match by_name.get(&normalize_name(&q.name)) {
                Some(e) => out.predictions.push(PromptPrediction {
                    record: PredictionRecord {
                        method_id: method_id.to_string(),
                        object_id: q.object_id.clone(),
                        trial_index: trial,
                        predicted_alpha: e.prediction.clamp(0.0, 1.0),
                    },
                    raw_prediction: e.prediction,
                    reply: (*e).clone(),
                }),
                None => out.failures.push(QueryFailure {
                    object_id: q.object_id.clone(),
                    trial,
                    error: format!("no parseable entry for {:?}", q.name),
                    transport: false,
                }),
            }
        }
    }
    Ok(out)
}

pub fn save_transcripts(transcripts: &[Transcript], path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let text = serde_json::to_string_pretty(transcripts).expect("transcripts serialise");
    fs::write(path, text + "\n").map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn spec() -> PromptSpec {
        PromptSpec::new(
            vec![
                ("salad dressing bottles [plastic, orange]".into(), 0.326),
                ("salad dressing bottles [plastic, yellow]".into(), 0.403),
            ],
            vec!["energy drink".into(), "yogurt".into()],
        )
    }

    #[test]
    fn prompt_contains_examples_and_query_call() {
        let p = build_prompt(&spec()).unwrap();
        assert!(p.starts_with("You are an expert in material properties."));
        assert!(p.contains("\nsalad dressing bottles [plastic, yellow] : 0.403\n"));
        assert!(p.contains("User: get_reflectance([\"energy drink\", \"yogurt\"])\nYou:\n"));
        assert!(p.contains(REASONING_DIRECTIVE));
        assert!(p.contains("approximate value as a guess"));
        let a = p.find("orange").unwrap();
        let b = p.find("yellow").unwrap();
        assert!(a < b);
    }

    #[test]
    fn prompt_is_deterministic() {
        assert_eq!(
            build_prompt(&spec()).unwrap(),
            build_prompt(&spec()).unwrap()
        );
    }

    #[test]
    fn fixed_precision() {
        let mut s = spec();
        s.precision = Some(2);
        assert!(build_prompt(&s)
            .unwrap()
            .contains("[plastic, yellow] : 0.40\n"));
    }

    #[test]
    fn invalid_specs() {
        let mut s = spec();
        s.examples.clear();
        assert!(build_prompt(&s).is_err());
        let mut s = spec();
        s.query_names = vec!["a".into(), "A ".into()];
        assert!(build_prompt(&s).is_err());
        let mut s = spec();
        s.query_names.clear();
        assert!(build_prompt(&s).is_err());
    }

    #[test]
    fn empty_reply() {
        assert_eq!(parse_reply(""), ReplyParse::default());
        assert!(parse_reply("no tables here\n").entries.is_empty());
    }

    #[test]
    fn out_of_range_prediction_is_flagged() {
        let r = parse_reply("|item|result|\n|:--|:--|\n|Name|mug|\n|Reason|x|\n|**Response**|range: 0.2 - 0.3, prediction: **0.5**|\n");
        assert_eq!(r.entries.len(), 1);
        assert!(r.entries[0].inconsistent);
        assert_eq!(r.entries[0].prediction, 0.5);
    }

    #[test]
    fn bad_entry_is_reported_and_skipped() {
        let text = "|item|result|\n|:--|:--|\n|Name|mug|\n|**Response**|no idea|\n\n\
                    |item|result|\n|:--|:--|\n|Name|cup|\n|**Response**|range: .1 - .2, prediction: **.15**|\n";
        let r = parse_reply(text);
        assert_eq!(r.entries.len(), 1);
        assert_eq!(r.entries[0].name, "cup");
        assert_eq!(r.issues.len(), 1);
        assert_eq!(r.issues[0].offset, 0);
        assert!(r.issues[0].message.contains("mug"));
    }

    #[test]
    fn horizontal_layout() {
        let text = "| Name | Reason | Response |\n|---|---|---|\n| cup | white | range: 0.6 - 0.8, prediction: **0.7** |\n| can | metal | range: 0.3 - 0.5, prediction: 0.4 |\n";
        let r = parse_reply(text);
        let names: Vec<_> = r.entries.iter().map(|e| e.name.as_str()).collect();
        assert_eq!(names, ["cup", "can"]);
        assert_eq!(r.entries[1].prediction, 0.4);
    }

    struct Failing;
    impl CompletionClient for Failing {
        fn complete(&self, _: &str, _: u32) -> Result<String> {
            Err(Error::Transport("connection refused".into()))
        }
        fn describe(&self) -> String {
            "failing".into()
        }
    }

    #[test]
    fn failing_client_names_each_query() {
        let qs = vec![
            Query {
                object_id: "a".into(),
                name: "energy drink".into(),
            },
            Query {
                object_id: "b".into(),
                name: "yogurt".into(),
            },
        ];
        let cfg = ClientConfig {
            max_retries: 3,
            ..Default::default()
        };
        let out = estimate(&qs, &spec(), &Failing, &cfg, "gpt", 2).unwrap();
        assert!(out.predictions.is_empty());
        assert_eq!(out.failures.len(), 4);
        assert!(out
            .failures
            .iter()
            .all(|f| f.transport && f.error.contains("4 attempts")));
        assert_eq!(out.transcripts[0].attempts, 4);
        assert_eq!(out.failures[1].object_id, "b");
    }

    #[test]
    fn concurrent_trials_keep_order() {
        let replies: Vec<String> = (0..6)
            .map(|t| {
                render_reply(&[EstimateReply {
                    name: "cup".into(),
                    range_lo: 0.0,
                    range_hi: 1.0,
                    prediction: 0.1 * t as f64,
                    reason: String::new(),
                    inconsistent: false,
                }])
            })
            .collect();
        let client = MockClient::new(replies).unwrap();
        let qs = vec![Query {
            object_id: "c".into(),
            name: "cup".into(),
        }];
        let cfg = ClientConfig {
            parallelism: 4,
            ..Default::default()
        };
        let out = estimate(&qs, &spec(), &client, &cfg, "m", 6).unwrap();
        let trials: Vec<u32> = out
            .predictions
            .iter()
            .map(|p| p.record.trial_index)
            .collect();
        assert_eq!(trials, vec![0, 1, 2, 3, 4, 5]);
        assert_eq!(out.predictions[3].raw_prediction, 0.1 * 3.0);
    }

    #[test]
    fn missing_entry_is_a_protocol_failure_and_clamping_keeps_raw() {
        let reply = "|item|result|\n|:--|:--|\n|Name|cup|\n|**Response**|range: 1.0 - 1.3, prediction: **1.2**|\n";
        let client = MockClient::new(vec![reply.into()]).unwrap();
        let qs = vec![
            Query {
                object_id: "c".into(),
                name: "Cup".into(),
            },
            Query {
                object_id: "d".into(),
                name: "dish".into(),
            },
        ];
        let out = estimate(&qs, &spec(), &client, &ClientConfig::default(), "m", 1).unwrap();
        assert_eq!(out.predictions.len(), 1);
        assert_eq!(out.predictions[0].record.predicted_alpha, 1.0);
        assert_eq!(out.predictions[0].raw_prediction, 1.2);
        assert_eq!(out.failures.len(), 1);
        assert!(!out.failures[0].transport);
    }

    fn name_strategy() -> impl Strategy<Value = String> {
        "[a-z][a-z ]{0,14}[a-z]"
    }

    proptest! {
        #[test]
        fn render_then_parse_is_identity(
            entries in proptest::collection::vec((name_strategy(), 0.0..1.0f64, 0.0..1.0f64, 0.0..1.0f64), 1..6)
        ) {
            let replies: Vec<EstimateReply> = entries.iter().map(|(n, a, b, c)| EstimateReply {
                name: n.split_whitespace().collect::<Vec<_>>().join(" "),
                range_lo: a.min(*b),
                range_hi: a.max(*b),
                prediction: *c,
                reason: "because".into(),
                inconsistent: !(a.min(*b) <= *c && *c <= a.max(*b)),
            }).collect();
            let parsed = parse_reply(&render_reply(&replies));
            prop_assert!(parsed.issues.is_empty());
            prop_assert_eq!(parsed.entries, replies);
        }

        #[test]
        fn distinct_example_sets_give_distinct_prompts(
            a in proptest::collection::vec((name_strategy(), 0.0..1.0f64), 1..4),
            b in proptest::collection::vec((name_strategy(), 0.0..1.0f64), 1..4),
        ) {
            let pa = PromptSpec::new(a.clone(), vec!["q".into()]);
            let pb = PromptSpec::new(b.clone(), vec!["q".into()]);
            if a != b {
                prop_assert_ne!(build_prompt(&pa).unwrap(), build_prompt(&pb).unwrap());
            }
        }
    }
}
