//! Prompt assembly, model backends and the `RATIONALE:` / `SCORE:` protocol.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fmt;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;
use std::time::Duration;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::{Corpus, CorpusError, Instance, LabelAssignment, Layer};
use crate::prompts::{PromptSpec, Variant};

pub const DEFAULT_MAX_RETRIES: u32 = 2;
pub const DEFAULT_OPENAI_ENDPOINT: &str = "https://api.openai.com/v1/chat/completions";

#[derive(Debug, Clone, PartialEq, Eq, Error, Serialize, Deserialize)]
#[serde(tag = "kind", content = "detail", rename_all = "snake_case")]
pub enum ParseError {
    #[error("response has no SCORE marker")]
    MissingScore,
    #[error("SCORE value `{0}` is not 0 or 1")]
    InvalidScore(String),
}

#[derive(Debug, Error)]
pub enum GatewayError {
    #[error("classification failed after {attempts} attempts: {error}")]
    Classification { attempts: u32, error: ParseError, last_raw: String },
    #[error("transport error: {0}")]
    Transport(String),
    #[error("invalid backend configuration: {0}")]
    Config(String),
    #[error("judgment file line {line}: {message}")]
    JudgmentFile { line: usize, message: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Corpus(#[from] CorpusError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Role {
    System,
    User,
    Assistant,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChatMessage {
    pub role: Role,
    pub content: String,
}

impl ChatMessage {
    pub fn new(role: Role, content: impl Into<String>) -> Self {
        ChatMessage { role, content: content.into() }
    }
}

/// A parsed model answer for one (instance, label) pair.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelJudgment {
    pub instance_id: String,
    pub label_id: String,
    #[serde(with = "binary")]
    pub score: bool,
    pub rationale: String,
    pub model_id: String,
    pub prompt_variant: Variant,
    pub prompt_version: String,
    pub raw_response: String,
}

mod binary {
    use serde::de::Error as _;
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(v: &bool, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_u8(u8::from(*v))
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<bool, D::Error> {
        match u8::deserialize(d)? {
            0 => Ok(false),
            1 => Ok(true),
            n => Err(D::Error::custom(format!("score {n} is not 0 or 1"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BackendConfig {
    pub model_id: String,
    #[serde(default)]
    pub endpoint: Option<String>,
    /// Name of the environment variable holding the API key. The key itself is never stored.
    #[serde(default)]
    pub api_key_env: Option<String>,
    #[serde(default)]
    pub temperature: f64,
    #[serde(default = "default_retries")]
    pub max_retries: u32,
    #[serde(default = "default_timeout", with = "secs")]
    pub timeout: Duration,
}

fn default_retries() -> u32 {
    DEFAULT_MAX_RETRIES
}

fn default_timeout() -> Duration {
    Duration::from_secs(60)
}

mod secs {
    use serde::{Deserialize, Deserializer, Serializer};
    use std::time::Duration;

    pub fn serialize<S: Serializer>(d: &Duration, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_f64(d.as_secs_f64())
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Duration, D::Error> {
        let secs = f64::deserialize(d)?;
        Duration::try_from_secs_f64(secs).map_err(serde::de::Error::custom)
    }
}

impl BackendConfig {
    pub fn new(model_id: impl Into<String>) -> Self {
        BackendConfig {
            model_id: model_id.into(),
            endpoint: None,
            api_key_env: None,
            temperature: 0.0,
            max_retries: DEFAULT_MAX_RETRIES,
            timeout: default_timeout(),
        }
    }

    pub fn validate(&self) -> Result<(), GatewayError> {
        if self.model_id.is_empty() {
            return Err(GatewayError::Config("model_id is empty".into()));
        }
        if self.temperature.is_nan() || self.temperature < 0.0 {
            return Err(GatewayError::Config(format!("temperature {} < 0", self.temperature)));
        }
        Ok(())
    }
}

/// What a backend receives for one call.
#[derive(Debug, Clone)]
pub struct CompletionRequest<'a> {
    /// Target instance, when the call classifies one. Backends must not send it upstream.
    pub instance_id: Option<&'a str>,
    pub messages: &'a [ChatMessage],
    pub temperature: f64,
    pub timeout: Duration,
}

/// A model endpoint: `(messages, temperature, timeout) -> raw text`.
pub trait Backend: Send + Sync {
    fn model_id(&self) -> &str;
    fn complete(&self, request: &CompletionRequest<'_>) -> Result<String, GatewayError>;
}

/// Deterministic backend answering from a fixed table keyed by instance id.
///
/// Each id maps to a script of responses; attempt `k` for an id gets entry
/// `k`, and the last entry repeats. Ids listed in `transport_failures` fail at
/// the transport level. Requests without an instance id get the default response.
#[derive(Debug, Default)]
pub struct StubBackend {
    model_id: String,
    responses: HashMap<String, Vec<String>>,
    default_response: Option<String>,
    transport_failures: HashSet<String>,
    attempts: Mutex<HashMap<String, usize>>,
    calls: AtomicUsize,
    requests: Mutex<Vec<Vec<ChatMessage>>>,
}

impl StubBackend {
    pub fn new(model_id: impl Into<String>) -> Self {
        StubBackend { model_id: model_id.into(), ..Default::default() }
    }

    pub fn respond(mut self, instance_id: impl Into<String>, raw: impl Into<String>) -> Self {
        self.responses.insert(instance_id.into(), vec![raw.into()]);
        self
    }

    pub fn script<I, S>(mut self, instance_id: impl Into<String>, responses: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        self.responses.insert(instance_id.into(), responses.into_iter().map(Into::into).collect());
        self
    }

    pub fn default_response(mut self, raw: impl Into<String>) -> Self {
        self.default_response = Some(raw.into());
        self
    }

    pub fn fail_transport(mut self, instance_id: impl Into<String>) -> Self {
        self.transport_failures.insert(instance_id.into());
        self
    }

    /// Replay the raw responses of previously recorded judgments.
    pub fn from_judgments<'a>(
        model_id: impl Into<String>,
        judgments: impl IntoIterator<Item = &'a ModelJudgment>,
    ) -> Self {
        judgments.into_iter().fold(StubBackend::new(model_id), |stub, j| stub.respond(&j.instance_id, &j.raw_response))
    }

    /// Load a response table from JSONL lines `{"instance_id": .., "raw_response": ..}`.
    /// Judgment files have this shape, so they can be replayed directly.
    /// The id `*` sets the default response.
    pub fn from_jsonl(model_id: impl Into<String>, path: impl AsRef<Path>) -> Result<Self, GatewayError> {
        #[derive(Deserialize)]
        struct Recorded {
            instance_id: String,
            raw_response: String,
        }
        let mut stub = StubBackend::new(model_id);
        let reader = BufReader::new(File::open(path)?);
        for (n, line) in reader.lines().enumerate() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let r: Recorded = serde_json::from_str(&line)
                .map_err(|e| GatewayError::JudgmentFile { line: n + 1, message: e.to_string() })?;
            stub = if r.instance_id == "*" {
                stub.default_response(r.raw_response)
            } else {
                stub.respond(r.instance_id, r.raw_response)
            };
        }
        Ok(stub)
    }

    pub fn calls(&self) -> usize {
        self.calls.load(Ordering::SeqCst)
    }

    /// Every message list received so far, in arrival order.
    pub fn requests(&self) -> Vec<Vec<ChatMessage>> {
        self.requests.lock().expect("stub request log").clone()
    }
}

impl Backend for StubBackend {
    fn model_id(&self) -> &str {
        &self.model_id
    }

    fn complete(&self, request: &CompletionRequest<'_>) -> Result<String, GatewayError> {
        self.calls.fetch_add(1, Ordering::SeqCst);
        self.requests.lock().expect("stub request log").push(request.messages.to_vec());
        let Some(id) = request.instance_id else {
            return self
                .default_response
                .clone()
                .ok_or_else(|| GatewayError::Transport("stub has no default response".into()));
        };
        if self.transport_failures.contains(id) {
            return Err(GatewayError::Transport(format!("injected failure for `{id}`")));
        }
        let attempt = {
            let mut attempts = self.attempts.lock().expect("stub attempt table");
            let n = attempts.entry(id.to_string()).or_insert(0);
            *n += 1;
            *n - 1
        };
        match self.responses.get(id) {
            Some(script) if !script.is_empty() => Ok(script[attempt.min(script.len() - 1)].clone()),
            _ => self
                .default_response
                .clone()
                .ok_or_else(|| GatewayError::Transport(format!("no recorded response for `{id}`"))),
        }
    }
}

/// OpenAI-compatible chat completions endpoint.
pub struct OpenAiBackend {
    model_id: String,
    endpoint: String,
    api_key: String,
    client: reqwest::blocking::Client,
}

impl OpenAiBackend {
    /// Build from config; the key is read from `api_key_env` (default `OPENAI_API_KEY`).
    pub fn from_config(config: &BackendConfig) -> Result<Self, GatewayError> {
        config.validate()?;
        let var = config.api_key_env.as_deref().unwrap_or("OPENAI_API_KEY");
        let api_key =
            std::env::var(var).map_err(|_| GatewayError::Config(format!("environment variable {var} is not set")))?;
        let client = reqwest::blocking::Client::builder()
            .timeout(config.timeout)
            .build()
            .map_err(|e| GatewayError::Config(e.to_string()))?;
        Ok(OpenAiBackend {
            model_id: config.model_id.clone(),
            endpoint: config.endpoint.clone().unwrap_or_else(|| DEFAULT_OPENAI_ENDPOINT.into()),
            api_key,
            client,
        })
    }
}

impl fmt::Debug for OpenAiBackend {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("OpenAiBackend")
            .field("model_id", &self.model_id)
            .field("endpoint", &self.endpoint)
            .finish_non_exhaustive()
    }
}

impl Backend for OpenAiBackend {
    fn model_id(&self) -> &str {
        &self.model_id
    }

    fn complete(&self, request: &CompletionRequest<'_>) -> Result<String, GatewayError> {
        let body = serde_json::json!({
            "model": self.model_id,
            "messages": request.messages,
            "temperature": request.temperature,
        });
        let resp = self
            .client
            .post(&self.endpoint)
            .bearer_auth(&self.api_key)
            .timeout(request.timeout)
            .json(&body)
            .send()
            .map_err(|e| GatewayError::Transport(e.to_string()))?;
        let status = resp.status();
        let value: serde_json::Value = resp.json().map_err(|e| GatewayError::Transport(e.to_string()))?;
        if !status.is_success() {
            return Err(GatewayError::Transport(format!("HTTP {status}: {value}")));
        }
        value["choices"][0]["message"]["content"]
            .as_str()
            .map(str::to_string)
            .ok_or_else(|| GatewayError::Transport(format!("unexpected response body: {value}")))
    }
}

/// `[system] + [demo user, demo assistant]? + [user: instance text]`.
pub fn assemble_prompt(spec: &PromptSpec, instance: &Instance) -> Vec<ChatMessage> {
    let mut messages = vec![ChatMessage::new(Role::System, &spec.system)];
    if let (Some(user), Some(assistant)) = (&spec.demo_user, &spec.demo_assistant) {
        messages.push(ChatMessage::new(Role::User, user));
        messages.push(ChatMessage::new(Role::Assistant, assistant));
    }
    messages.push(ChatMessage::new(Role::User, &instance.text));
    messages
}

/// Canonical response text for a rationale and score.
pub fn render_response(rationale: &str, score: bool) -> String {
    format!("RATIONALE: {rationale}\nSCORE: {}", u8::from(score))
}

/// Last occurrence of `marker` (already lowercase) in `lower` that does not
/// continue a preceding word.
fn rfind_marker(lower: &str, marker: &str) -> Option<usize> {
    let mut end = lower.len();
    while let Some(pos) = lower[..end].rfind(marker) {
        let boundary = lower[..pos].chars().next_back().is_none_or(|c| !c.is_alphanumeric());
        if boundary {
            return Some(pos);
        }
        end = pos;
    }
    None
}

/// Split a raw model response into `(rationale, score)`.
///
/// The score is the integer after the last case-insensitive `SCORE:` marker;
/// the rationale is the text after the last `RATIONALE:` marker preceding it
/// (or everything before the score marker if there is none), trimmed.
pub fn parse_response(raw: &str) -> Result<(String, bool), ParseError> {
    let lower = raw.to_ascii_lowercase();
    let score_at = rfind_marker(&lower, "score:").ok_or(ParseError::MissingScore)?;
    let tail = raw[score_at + "score:".len()..].trim_start();
    let digits: String = tail.chars().take_while(char::is_ascii_digit).collect();
    let rest = &tail[digits.len()..];
    let invalid = || {
        let token: String = tail.chars().take_while(|c| !c.is_whitespace()).collect();
        ParseError::InvalidScore(token)
    };
    let mut after = rest.chars();
    match after.next() {
        Some(c) if c.is_alphanumeric() => return Err(invalid()),
        Some('.') | Some(',') if after.next().is_some_and(|c| c.is_ascii_digit()) => return Err(invalid()),
        _ => {}
    }
    let score = match digits.as_str() {
        "0" => false,
        "1" => true,
        _ => return Err(invalid()),
    };
    let head = &raw[..score_at];
    let rationale = match rfind_marker(&lower[..score_at], "rationale:") {
        Some(r) => &head[r + "rationale:".len()..],
        None => head,
    };
    Ok((rationale.trim().to_string(), score))
}

/// Assemble, call and parse, re-issuing the call on parse failures up to
/// `config.max_retries` times. Transport errors are not retried.
pub fn classify(
    backend: &dyn Backend,
    config: &BackendConfig,
    spec: &PromptSpec,
    instance: &Instance,
) -> Result<ModelJudgment, GatewayError> {
    config.validate()?;
    let messages = assemble_prompt(spec, instance);
    let request = CompletionRequest {
        instance_id: Some(&instance.id),
        messages: &messages,
        temperature: config.temperature,
        timeout: config.timeout,
    };
    let mut attempts = 0;
    loop {
        attempts += 1;
        let raw = backend.complete(&request)?;
        match parse_response(&raw) {
            Ok((rationale, score)) => {
                return Ok(ModelJudgment {
                    instance_id: instance.id.clone(),
                    label_id: spec.label.clone(),
                    score,
                    rationale,
                    model_id: backend.model_id().to_string(),
                    prompt_variant: spec.variant,
                    prompt_version: spec.version.clone(),
                    raw_response: raw,
                })
            }
            Err(error) if attempts > config.max_retries => {
                return Err(GatewayError::Classification { attempts, error, last_raw: raw })
            }
            Err(_) => continue,
        }
    }
}

#[derive(Debug)]
pub struct InstanceFailure {
    pub index: usize,
    pub instance_id: String,
    pub error: GatewayError,
}

/// Per-instance results of [`classify_batch`], each list in input order.
#[derive(Debug, Default)]
pub struct BatchOutcome {
    pub judgments: Vec<ModelJudgment>,
    pub errors: Vec<InstanceFailure>,
}

/// Classify `instances` with up to `parallelism` concurrent calls.
/// Failures are collected; they never abort the batch.
pub fn classify_batch(
    backend: &dyn Backend,
    config: &BackendConfig,
    spec: &PromptSpec,
    instances: &[Instance],
    parallelism: usize,
) -> BatchOutcome {
    let workers = parallelism.max(1).min(instances.len().max(1));
    let next = AtomicUsize::new(0);
    let slots: Vec<Mutex<Option<Result<ModelJudgment, GatewayError>>>> =
        instances.iter().map(|_| Mutex::new(None)).collect();
    std::thread::scope(|scope| {
        for _ in 0..workers {
            scope.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::SeqCst);
                let Some(instance) = instances.get(i) else { break };
                let result = classify(backend, config, spec, instance);
                *slots[i].lock().expect("result slot") = Some(result);
            });
        }
    });
    let mut outcome = BatchOutcome::default();
    for (index, slot) in slots.into_iter().enumerate() {
        match slot.into_inner().expect("result slot").expect("every slot filled") {
            Ok(j) => outcome.judgments.push(j),
            Err(error) => {
                outcome.errors.push(InstanceFailure { index, instance_id: instances[index].id.clone(), error })
            }
        }
    }
    outcome
}

pub fn write_judgments(path: impl AsRef<Path>, judgments: &[ModelJudgment]) -> Result<(), GatewayError> {
    let mut out = BufWriter::new(File::create(path)?);
    write_judgments_to(&mut out, judgments)?;
    out.flush()?;
    Ok(())
}

pub fn write_judgments_to(out: &mut impl Write, judgments: &[ModelJudgment]) -> std::io::Result<()> {
    for j in judgments {
        serde_json::to_writer(&mut *out, j)?;
        out.write_all(b"\n")?;
    }
    Ok(())
}

pub fn read_judgments(path: impl AsRef<Path>) -> Result<Vec<ModelJudgment>, GatewayError> {
    let reader = BufReader::new(File::open(path)?);
    let mut out = Vec::new();
    for (n, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(
            serde_json::from_str(&line)
                .map_err(|e| GatewayError::JudgmentFile { line: n + 1, message: e.to_string() })?,
        );
    }
    Ok(out)
}

/// Copy judgment scores into the corpus `model` layer, with the model id as provenance.
pub fn record_judgments<'a>(
    corpus: &mut Corpus,
    judgments: impl IntoIterator<Item = &'a ModelJudgment>,
) -> Result<usize, CorpusError> {
    let mut n = 0;
    for j in judgments {
        corpus.set_assignment(LabelAssignment {
            instance_id: j.instance_id.clone(),
            label_id: j.label_id.clone(),
            value: j.score,
            layer: Layer::Model,
            provenance: j.model_id.clone(),
            timestamp: None,
        })?;
        n += 1;
    }
    Ok(n)
}

/// Stored judgments looked up by `(instance, label)`. Later entries win.
#[derive(Debug, Clone, Default)]
pub struct JudgmentIndex {
    by_key: BTreeMap<(String, String), ModelJudgment>,
}

impl JudgmentIndex {
    pub fn new(judgments: impl IntoIterator<Item = ModelJudgment>) -> Self {
        let mut index = JudgmentIndex::default();
        index.extend(judgments);
        index
    }

    pub fn extend(&mut self, judgments: impl IntoIterator<Item = ModelJudgment>) {
        for j in judgments {
            self.by_key.insert((j.instance_id.clone(), j.label_id.clone()), j);
        }
    }

    pub fn get(&self, instance_id: &str, label_id: &str) -> Option<&ModelJudgment> {
        self.by_key.get(&(instance_id.to_string(), label_id.to_string()))
    }

    pub fn len(&self) -> usize {
        self.by_key.len()
    }

    pub fn is_empty(&self) -> bool {
        self.by_key.is_empty()
    }

    /// Judgments ordered by `(instance, label)`.
    pub fn iter(&self) -> impl Iterator<Item = &ModelJudgment> {
        self.by_key.values()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::prompts::PromptRegistry;

    fn spec(variant: Variant) -> PromptSpec {
        PromptRegistry::builtin().load("meat-eater", variant, None).unwrap().clone()
    }

    fn instances(n: usize) -> Vec<Instance> {
        (0..n).map(|i| Instance::new(format!("i{i}"), format!("text {i}"), "en")).collect()
    }

    #[test]
    fn assemble_with_and_without_demo() {
        let inst = Instance::new("x", "The main dish is steak.", "en");
        let full = assemble_prompt(&spec(Variant::FullRationale), &inst);
        let roles: Vec<Role> = full.iter().map(|m| m.role).collect();
        assert_eq!(roles, [Role::System, Role::User, Role::Assistant, Role::User]);
        assert_eq!(full.last().unwrap().content, inst.text);
        let zero_shot = assemble_prompt(&spec(Variant::SamplingEra), &inst);
        assert_eq!(zero_shot.len(), 2);
        assert_eq!(zero_shot[0].role, Role::System);
    }

    #[test]
    fn parse_examples() {
        assert_eq!(parse_response("RATIONALE: mentions steak\nSCORE: 1").unwrap(), ("mentions steak".into(), true));
        assert_eq!(parse_response("RATIONALE: \nSCORE: 0").unwrap(), (String::new(), false));
        assert_eq!(parse_response("The text is about tea."), Err(ParseError::MissingScore));
        assert!(matches!(parse_response("SCORE: 2"), Err(ParseError::InvalidScore(s)) if s == "2"));
        assert!(matches!(parse_response("SCORE: yes"), Err(ParseError::InvalidScore(_))));
    }

    #[test]
    fn last_marker_wins() {
        let raw = "RATIONALE: The format says SCORE: 0 but\nRATIONALE: steak is meat\nSCORE: 1";
        assert_eq!(parse_response(raw).unwrap(), ("steak is meat".into(), true));
        assert_eq!(parse_response("rationale: x\nscore:   1  \n").unwrap(), ("x".into(), true));
        // a marker glued to a word is not a marker
        assert!(!parse_response("subscore: 9\nSCORE: 0").unwrap().1);
    }

    #[test]
    fn retry_semantics() {
        let cfg = BackendConfig::new("stub");
        let s = spec(Variant::FullRationale);
        let inst = Instance::new("a", "t", "en");
        let stub = StubBackend::new("stub").script("a", ["garbage", "RATIONALE: ok\nSCORE: 1"]);
        let j = classify(&stub, &cfg, &s, &inst).unwrap();
        assert!(j.score);
        assert_eq!(j.raw_response, "RATIONALE: ok\nSCORE: 1");
        assert_eq!(stub.calls(), 2);

        let stub = StubBackend::new("stub").respond("a", "garbage");
        match classify(&stub, &cfg, &s, &inst) {
            Err(GatewayError::Classification { attempts, last_raw, .. }) => {
                assert_eq!(attempts, 3);
                assert_eq!(last_raw, "garbage");
            }
            other => panic!("unexpected {other:?}"),
        }
        assert_eq!(stub.calls(), 3);

        let stub = StubBackend::new("stub").fail_transport("a");
        assert!(matches!(classify(&stub, &cfg, &s, &inst), Err(GatewayError::Transport(_))));
        assert_eq!(stub.calls(), 1);
    }

    #[test]
    fn negative_temperature_rejected() {
        let mut cfg = BackendConfig::new("m");
        cfg.temperature = -0.5;
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn batch_preserves_order_and_isolates_failures() {
        let cfg = BackendConfig::new("stub");
        let s = spec(Variant::FullRationale);
        let insts = instances(10);
        let make = || {
            insts.iter().enumerate().fold(StubBackend::new("stub"), |b, (i, inst)| {
                if i == 3 {
                    b.respond(&inst.id, "no marker")
                } else {
                    b.respond(&inst.id, render_response(&format!("r{i}"), i % 2 == 0))
                }
            })
        };
        let one = classify_batch(&make(), &cfg, &s, &insts, 1);
        let many = classify_batch(&make(), &cfg, &s, &insts, 8);
        assert_eq!(one.judgments.len(), 9);
        assert_eq!(one.errors.len(), 1);
        assert_eq!(one.errors[0].instance_id, "i3");
        assert_eq!(one.judgments, many.judgments);
        let ids: Vec<&str> = many.judgments.iter().map(|j| j.instance_id.as_str()).collect();
        assert_eq!(ids, ["i0", "i1", "i2", "i4", "i5", "i6", "i7", "i8", "i9"]);
    }

    #[test]
    fn judgments_jsonl_roundtrip_and_replay() {
        let cfg = BackendConfig::new("stub");
        let s = spec(Variant::FullRationale);
        let insts = instances(4);
        let stub = StubBackend::new("stub").default_response("RATIONALE: fine\nSCORE: 1");
        let first = classify_batch(&stub, &cfg, &s, &insts, 2).judgments;
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("j.jsonl");
        write_judgments(&path, &first).unwrap();
        assert_eq!(read_judgments(&path).unwrap(), first);
        let replay = StubBackend::from_jsonl("stub", &path).unwrap();
        assert_eq!(classify_batch(&replay, &cfg, &s, &insts, 3).judgments, first);
    }
}
