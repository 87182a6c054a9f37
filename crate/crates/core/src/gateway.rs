//! The one boundary through which learned-model capabilities flow.
//!
//! Every capability (embeddings, NLI, relevance, generation, training) is a
//! trait here. Two families of implementations exist: [`StubModels`], a set
//! of pure deterministic functions, and [`Gateway`], which speaks the line
//! protocol to a model sidecar (or to the in-process stub through the same
//! request/response path).
//!
//! Line protocol: UTF-8 newline-delimited JSON, one object per line. The
//! client opens with `{"protocol_version":1,"capabilities":[...]}` and the
//! server answers with the same shape listing the verbs it serves. After
//! that every line is a [`ScoreRequest`] answered by a [`ScoreResponse`].

use std::collections::BTreeSet;
use std::io::{BufRead, BufReader, Read, Write};
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::mpsc::{self, Receiver, RecvTimeoutError};
use std::sync::Mutex;
use std::time::Duration;

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::text::tokenize;

pub const PROTOCOL_VERSION: u32 = 1;
pub const STUB_EMBED_DIM: usize = 64;
const PROB_TOLERANCE: f64 = 1e-3;

#[derive(Debug, thiserror::Error)]
pub enum GatewayError {
    #[error("batch {batch_id} timed out after {after:?}")]
    Timeout { batch_id: String, after: Duration },
    #[error("protocol violation: {0}")]
    ProtocolViolation(String),
    #[error("remote error in batch {batch_id} ({code}): {message}")]
    RemoteError { batch_id: String, code: String, message: String },
    #[error("sidecar does not serve verb `{0}`")]
    Unsupported(String),
    #[error("transport i/o: {0}")]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Verb {
    Embed,
    Nli,
    Rerank,
    Generate,
    Train,
}

impl Verb {
    pub const ALL: [Verb; 5] = [Verb::Embed, Verb::Nli, Verb::Rerank, Verb::Generate, Verb::Train];

    pub fn name(self) -> &'static str {
        match self {
            Verb::Embed => "embed",
            Verb::Nli => "nli",
            Verb::Rerank => "rerank",
            Verb::Generate => "generate",
            Verb::Train => "train",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreRequest {
    pub verb: Verb,
    pub batch_id: String,
    pub payload: Vec<Value>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub params: Option<Value>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RemoteErrorBody {
    pub code: String,
    pub message: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreResponse {
    pub batch_id: String,
    #[serde(default)]
    pub results: Vec<Value>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<RemoteErrorBody>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Handshake {
    pub protocol_version: u32,
    pub capabilities: Vec<Verb>,
}

/// Entailment / contradiction / neutral probabilities for one ordered
/// (premise, hypothesis) pair.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NliScores {
    pub entailment: f64,
    pub contradiction: f64,
    pub neutral: f64,
}

impl NliScores {
    pub fn new(entailment: f64, contradiction: f64, neutral: f64) -> Self {
        Self { entailment, contradiction, neutral }
    }

    pub fn is_valid(&self) -> bool {
        let all = [self.entailment, self.contradiction, self.neutral];
        all.iter().all(|p| (0.0..=1.0).contains(p)) && (all.iter().sum::<f64>() - 1.0).abs() <= PROB_TOLERANCE
    }
}

// ---------------------------------------------------------------------------
// Capabilities

pub trait Nli: Send + Sync {
    /// Scores each `(premise, hypothesis)` pair, aligned with the input.
    fn nli(&self, pairs: &[(String, String)]) -> Result<Vec<NliScores>, GatewayError>;
}

pub trait RelevanceScorer: Send + Sync {
    /// Probability that each `(query, passage)` pair is relevant.
    fn relevance(&self, pairs: &[(String, String)]) -> Result<Vec<f64>, GatewayError>;
}

pub trait Generator: Send + Sync {
    fn generate(&self, prompts: &[String]) -> Result<Vec<String>, GatewayError>;
}

pub trait Embedder: Send + Sync {
    fn embed(&self, profile: &str, texts: &[String]) -> Result<Vec<Vec<f64>>, GatewayError>;
}

/// Parameters of one training invocation, sent as `train` params.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainCommand {
    pub profile: String,
    pub data_path: String,
    pub export_path: String,
    pub batches: usize,
    pub batch_size: usize,
    pub iteration: usize,
}

pub trait Trainer: Send + Sync {
    fn train(&self, command: &TrainCommand) -> Result<(), GatewayError>;
}

// ---------------------------------------------------------------------------
// Stub models

/// Exact identity → `(1, 0, 0)`; otherwise Jaccard overlap of token sets as
/// entailment (always below 1), zero contradiction, remainder neutral.
pub fn stub_nli(premise: &str, hypothesis: &str) -> NliScores {
    let p = tokenize(premise);
    let h = tokenize(hypothesis);
    if p == h {
        return NliScores::new(1.0, 0.0, 0.0);
    }
    let ps: BTreeSet<&str> = p.iter().map(String::as_str).collect();
    let hs: BTreeSet<&str> = h.iter().map(String::as_str).collect();
    let union = ps.union(&hs).count();
    let jaccard = if union == 0 { 0.0 } else { ps.intersection(&hs).count() as f64 / union as f64 };
    // equal token sets with different order or multiplicity are not identical
    let e = jaccard.min(1.0 - f64::EPSILON);
    NliScores::new(e, 0.0, 1.0 - e)
}

/// Fraction of distinct query tokens present in the passage.
pub fn stub_relevance(query: &str, passage: &str) -> f64 {
    let q: BTreeSet<String> = tokenize(query).into_iter().collect();
    if q.is_empty() {
        return 0.0;
    }
    let p: BTreeSet<String> = tokenize(passage).into_iter().collect();
    q.intersection(&p).count() as f64 / q.len() as f64
}

fn fnv1a(parts: &[&[u8]]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for part in parts {
        for &b in *part {
            h ^= b as u64;
            h = h.wrapping_mul(0x0000_0100_0000_01b3);
        }
        h ^= 0xff;
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}

/// Bucket a token falls into under `profile`.
pub fn stub_bucket(profile: &str, token: &str) -> usize {
    (fnv1a(&[profile.as_bytes(), token.as_bytes()]) % STUB_EMBED_DIM as u64) as usize
}

/// Hashed bag-of-tokens vector, L2-normalized. Text without tokens hashes
/// the empty token so the result is still a unit vector.
pub fn stub_embed_profile(profile: &str, text: &str) -> Vec<f64> {
    let mut v = vec![0.0; STUB_EMBED_DIM];
    let tokens = tokenize(text);
    if tokens.is_empty() {
        v[stub_bucket(profile, "")] = 1.0;
        return v;
    }
    for t in &tokens {
        v[stub_bucket(profile, t)] += 1.0;
    }
    let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    v.iter_mut().for_each(|x| *x /= n);
    v
}

pub fn stub_embed(text: &str) -> Vec<f64> {
    stub_embed_profile("", text)
}

pub const ANSWER_CONTEXT_MARKER: &str = "passages: ";
pub const ANSWER_END_MARKER: &str = "\nanswer:";
pub const JUDGE_QUESTION_MARKER: &str = "\nQuestion: ";
pub const JUDGE_ANSWER_MARKER: &str = "\nAnswer: ";

/// Judge prompts get a rating from question-token coverage of the answer.
/// Answer prompts echo their context block. Anything else is echoed.
pub fn stub_generate(prompt: &str) -> String {
    if let (Some(q), Some(a)) = (prompt.rfind(JUDGE_QUESTION_MARKER), prompt.rfind(JUDGE_ANSWER_MARKER)) {
        if q < a {
            let question = &prompt[q + JUDGE_QUESTION_MARKER.len()..a];
            let answer = prompt[a + JUDGE_ANSWER_MARKER.len()..].lines().next().unwrap_or("");
            let coverage = stub_relevance(question, answer);
            let rating = 1 + (coverage * 3.0).round() as u32;
            return format!("stub rating from question-token coverage {coverage:.3}\nTotal rating: {rating}");
        }
    }
    if let Some(start) = prompt.find(ANSWER_CONTEXT_MARKER) {
        if let Some(len) = prompt[start..].find(ANSWER_END_MARKER) {
            return prompt[start + ANSWER_CONTEXT_MARKER.len()..start + len].trim().to_string();
        }
    }
    prompt.to_string()
}

/// Pure in-process implementations of every capability.
#[derive(Debug, Clone, Copy, Default)]
pub struct StubModels;

impl Nli for StubModels {
    fn nli(&self, pairs: &[(String, String)]) -> Result<Vec<NliScores>, GatewayError> {
        Ok(pairs.iter().map(|(p, h)| stub_nli(p, h)).collect())
    }
}

impl RelevanceScorer for StubModels {
    fn relevance(&self, pairs: &[(String, String)]) -> Result<Vec<f64>, GatewayError> {
        Ok(pairs.iter().map(|(q, p)| stub_relevance(q, p)).collect())
    }
}

impl Generator for StubModels {
    fn generate(&self, prompts: &[String]) -> Result<Vec<String>, GatewayError> {
        Ok(prompts.iter().map(|p| stub_generate(p)).collect())
    }
}

impl Embedder for StubModels {
    fn embed(&self, profile: &str, texts: &[String]) -> Result<Vec<Vec<f64>>, GatewayError> {
        Ok(texts.iter().map(|t| stub_embed_profile(profile, t)).collect())
    }
}

impl Trainer for StubModels {
    fn train(&self, _command: &TrainCommand) -> Result<(), GatewayError> {
        Ok(())
    }
}

/// A contradiction rule for [`AdversarialNli`]: applies when the premise and
/// hypothesis contain the given substrings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Injection {
    pub premise_contains: String,
    pub hypothesis_contains: String,
    pub contradiction: f64,
}

/// The stub NLI with configurable contradiction injected on matching pairs.
/// Entailment and neutral are rescaled so the triple still sums to one.
#[derive(Debug, Clone, Default)]
pub struct AdversarialNli {
    pub injections: Vec<Injection>,
}

impl AdversarialNli {
    pub fn score(&self, premise: &str, hypothesis: &str) -> NliScores {
        let base = stub_nli(premise, hypothesis);
        let hit = self
            .injections
            .iter()
            .find(|i| premise.contains(&i.premise_contains) && hypothesis.contains(&i.hypothesis_contains));
        match hit {
            None => base,
            Some(i) => {
                let c = i.contradiction.clamp(0.0, 1.0);
                let e = base.entailment * (1.0 - c);
                NliScores::new(e, c, (1.0 - c - e).max(0.0))
            }
        }
    }
}

impl Nli for AdversarialNli {
    fn nli(&self, pairs: &[(String, String)]) -> Result<Vec<NliScores>, GatewayError> {
        Ok(pairs.iter().map(|(p, h)| self.score(p, h)).collect())
    }
}

// ---------------------------------------------------------------------------
// Request handling on the serving side

fn field<'a>(rec: &'a Value, name: &str) -> Result<&'a str, String> {
    rec.get(name).and_then(Value::as_str).ok_or_else(|| format!("payload record lacks string field `{name}`"))
}

fn stub_results(req: &ScoreRequest) -> Result<Vec<Value>, String> {
    if req.payload.is_empty() && req.verb != Verb::Train {
        return Err(format!("empty payload for `{}`", req.verb.name()));
    }
    match req.verb {
        Verb::Embed => {
            let profile = req.params.as_ref().and_then(|p| p.get("profile")).and_then(Value::as_str).unwrap_or("");
            req.payload.iter().map(|r| Ok(json!(stub_embed_profile(profile, field(r, "text")?)))).collect()
        }
        Verb::Nli => req
            .payload
            .iter()
            .map(|r| Ok(serde_json::to_value(stub_nli(field(r, "premise")?, field(r, "hypothesis")?)).unwrap()))
            .collect(),
        Verb::Rerank => {
            req.payload.iter().map(|r| Ok(json!(stub_relevance(field(r, "query")?, field(r, "passage")?)))).collect()
        }
        Verb::Generate => req.payload.iter().map(|r| Ok(json!(stub_generate(field(r, "prompt")?)))).collect(),
        Verb::Train => Ok(Vec::new()),
    }
}

/// Answers one request with the stub models.
pub fn stub_handle(req: &ScoreRequest) -> ScoreResponse {
    match stub_results(req) {
        Ok(results) => ScoreResponse { batch_id: req.batch_id.clone(), results, error: None },
        Err(message) => ScoreResponse {
            batch_id: req.batch_id.clone(),
            results: Vec::new(),
            error: Some(RemoteErrorBody { code: "bad_request".into(), message }),
        },
    }
}

/// Serves the stub over the line protocol until the reader closes. Bad
/// lines are answered with an error response; the loop keeps going.
pub fn serve_stub<R: BufRead, W: Write>(reader: R, mut writer: W) -> std::io::Result<()> {
    let mut lines = reader.lines();
    match lines.next() {
        None => return Ok(()),
        Some(line) => {
            let line = line?;
            let hello = Handshake { protocol_version: PROTOCOL_VERSION, capabilities: Verb::ALL.to_vec() };
            match serde_json::from_str::<Handshake>(&line) {
                Ok(h) if h.protocol_version == PROTOCOL_VERSION => {
                    writeln!(writer, "{}", serde_json::to_string(&hello)?)?;
                }
                _ => {
                    let err = ScoreResponse {
                        batch_id: String::new(),
                        results: Vec::new(),
                        error: Some(RemoteErrorBody {
                            code: "handshake".into(),
                            message: format!("expected protocol_version {PROTOCOL_VERSION}"),
                        }),
                    };
                    writeln!(writer, "{}", serde_json::to_string(&err)?)?;
                    return writer.flush();
                }
            }
            writer.flush()?;
        }
    }
    for line in lines {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let resp = match serde_json::from_str::<ScoreRequest>(&line) {
            Ok(req) => stub_handle(&req),
            Err(e) => {
                let batch_id = serde_json::from_str::<Value>(&line)
                    .ok()
                    .and_then(|v| v.get("batch_id").and_then(Value::as_str).map(str::to_string))
                    .unwrap_or_default();
                ScoreResponse {
                    batch_id,
                    results: Vec::new(),
                    error: Some(RemoteErrorBody { code: "bad_request".into(), message: e.to_string() }),
                }
            }
        };
        writeln!(writer, "{}", serde_json::to_string(&resp)?)?;
        writer.flush()?;
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// Transports

pub trait Transport: Send {
    fn exchange(&mut self, req: &ScoreRequest) -> Result<ScoreResponse, GatewayError>;
    fn capabilities(&self) -> &[Verb];
}

/// Runs requests through [`stub_handle`] after a JSON round trip, so the
/// in-process path exercises the same encoding as the sidecar path.
#[derive(Debug, Default)]
pub struct InProcessStub;

impl Transport for InProcessStub {
    fn exchange(&mut self, req: &ScoreRequest) -> Result<ScoreResponse, GatewayError> {
        let wire = serde_json::to_string(req).map_err(|e| GatewayError::ProtocolViolation(e.to_string()))?;
        let decoded: ScoreRequest =
            serde_json::from_str(&wire).map_err(|e| GatewayError::ProtocolViolation(e.to_string()))?;
        Ok(stub_handle(&decoded))
    }

    fn capabilities(&self) -> &[Verb] {
        &Verb::ALL
    }
}

/// Newline-delimited JSON over any byte stream pair (child stdio, a Unix
/// socket, an in-memory pipe in tests).
pub struct LineTransport {
    writer: Box<dyn Write + Send>,
    lines: Receiver<std::io::Result<String>>,
    timeout: Duration,
    capabilities: Vec<Verb>,
    _child: Option<std::process::Child>,
}

impl LineTransport {
    pub fn connect(
        reader: Box<dyn Read + Send>,
        writer: Box<dyn Write + Send>,
        timeout: Duration,
    ) -> Result<Self, GatewayError> {
        let (tx, rx) = mpsc::channel();
        std::thread::spawn(move || {
            for line in BufReader::new(reader).lines() {
                let stop = line.is_err();
                if tx.send(line).is_err() || stop {
                    break;
                }
            }
        });
        let mut t = Self { writer, lines: rx, timeout, capabilities: Vec::new(), _child: None };
        t.handshake()?;
        Ok(t)
    }

    /// Spawns `program args...` and speaks the protocol over its stdio.
    pub fn spawn(program: &str, args: &[String], timeout: Duration) -> Result<Self, GatewayError> {
        let mut child = std::process::Command::new(program)
            .args(args)
            .stdin(std::process::Stdio::piped())
            .stdout(std::process::Stdio::piped())
            .spawn()?;
        let stdin = child.stdin.take().expect("piped stdin");
        let stdout = child.stdout.take().expect("piped stdout");
        let mut t = Self::connect(Box::new(stdout), Box::new(stdin), timeout)?;
        t._child = Some(child);
        Ok(t)
    }

    #[cfg(unix)]
    pub fn unix_socket(path: impl AsRef<std::path::Path>, timeout: Duration) -> Result<Self, GatewayError> {
        let stream = std::os::unix::net::UnixStream::connect(path)?;
        let reader = stream.try_clone()?;
        Self::connect(Box::new(reader), Box::new(stream), timeout)
    }

    fn send_line(&mut self, value: &impl Serialize) -> Result<(), GatewayError> {
        let line = serde_json::to_string(value).map_err(|e| GatewayError::ProtocolViolation(e.to_string()))?;
        writeln!(self.writer, "{line}")?;
        self.writer.flush()?;
        Ok(())
    }

    fn recv_line(&mut self, batch_id: &str) -> Result<String, GatewayError> {
        match self.lines.recv_timeout(self.timeout) {
            Ok(line) => Ok(line?),
            Err(RecvTimeoutError::Timeout) => {
                Err(GatewayError::Timeout { batch_id: batch_id.to_string(), after: self.timeout })
            }
            Err(RecvTimeoutError::Disconnected) => {
                Err(GatewayError::ProtocolViolation("sidecar closed the connection".into()))
            }
        }
    }

    fn handshake(&mut self) -> Result<(), GatewayError> {
        self.send_line(&Handshake { protocol_version: PROTOCOL_VERSION, capabilities: Verb::ALL.to_vec() })?;
        let line = self.recv_line("handshake")?;
        let hello: Handshake = serde_json::from_str(&line)
            .map_err(|e| GatewayError::ProtocolViolation(format!("bad handshake `{line}`: {e}")))?;
        if hello.protocol_version != PROTOCOL_VERSION {
            return Err(GatewayError::ProtocolViolation(format!(
                "sidecar speaks protocol {}, expected {PROTOCOL_VERSION}",
                hello.protocol_version
            )));
        }
        self.capabilities = hello.capabilities;
        Ok(())
    }
}

impl Transport for LineTransport {
    fn exchange(&mut self, req: &ScoreRequest) -> Result<ScoreResponse, GatewayError> {
        self.send_line(req)?;
        let line = self.recv_line(&req.batch_id)?;
        serde_json::from_str(&line).map_err(|e| GatewayError::ProtocolViolation(format!("bad response: {e}")))
    }

    fn capabilities(&self) -> &[Verb] {
        &self.capabilities
    }
}

// ---------------------------------------------------------------------------
// Gateway

/// Validating client over a [`Transport`]. Splits capability calls into
/// batches of at most `max_batch` records and checks every response.
pub struct Gateway {
    transport: Mutex<Box<dyn Transport>>,
    next_batch: AtomicU64,
    max_batch: usize,
    embed_dim: Option<usize>,
}

impl Gateway {
    pub fn new(transport: Box<dyn Transport>) -> Self {
        Self { transport: Mutex::new(transport), next_batch: AtomicU64::new(0), max_batch: 64, embed_dim: None }
    }

    /// Gateway over the in-process stub; embeddings must be 64-dimensional.
    pub fn stub() -> Self {
        Self::new(Box::new(InProcessStub)).with_embed_dim(STUB_EMBED_DIM)
    }

    pub fn with_max_batch(mut self, n: usize) -> Self {
        self.max_batch = n.max(1);
        self
    }

    pub fn with_embed_dim(mut self, dim: usize) -> Self {
        self.embed_dim = Some(dim);
        self
    }

    fn fresh_batch_id(&self) -> String {
        format!("b{}", self.next_batch.fetch_add(1, Ordering::Relaxed))
    }

    /// Sends one request and validates the response against it.
    pub fn call(&self, req: ScoreRequest) -> Result<ScoreResponse, GatewayError> {
        let resp = {
            let mut t = self.transport.lock().expect("transport lock");
            if !t.capabilities().contains(&req.verb) {
                return Err(GatewayError::Unsupported(req.verb.name().into()));
            }
            t.exchange(&req)?
        };
        if let Some(err) = &resp.error {
            return Err(GatewayError::RemoteError {
                batch_id: req.batch_id.clone(),
                code: err.code.clone(),
                message: err.message.clone(),
            });
        }
        if resp.batch_id != req.batch_id {
            return Err(GatewayError::ProtocolViolation(format!(
                "response for batch `{}` answered request `{}`",
                resp.batch_id, req.batch_id
            )));
        }
        let expected = if req.verb == Verb::Train { 0 } else { req.payload.len() };
        if req.verb != Verb::Train && resp.results.len() != expected {
            return Err(GatewayError::ProtocolViolation(format!(
                "batch {}: {} results for {} records",
                req.batch_id,
                resp.results.len(),
                expected
            )));
        }
        for (i, r) in resp.results.iter().enumerate() {
            self.validate_result(req.verb, r)
                .map_err(|m| GatewayError::ProtocolViolation(format!("batch {} record {i}: {m}", req.batch_id)))?;
        }
        Ok(resp)
    }

    fn validate_result(&self, verb: Verb, r: &Value) -> Result<(), String> {
        match verb {
            Verb::Embed => {
                let v = r.as_array().ok_or("embedding is not an array")?;
                if v.iter().any(|x| !x.is_number()) {
                    return Err("embedding has non-numeric entries".into());
                }
                match self.embed_dim {
                    Some(d) if d != v.len() => Err(format!("embedding dim {} != declared {d}", v.len())),
                    _ => Ok(()),
                }
            }
            Verb::Nli => {
                let s: NliScores = serde_json::from_value(r.clone()).map_err(|e| e.to_string())?;
                if s.is_valid() {
                    Ok(())
                } else {
                    Err(format!("invalid NLI triple {s:?}"))
                }
            }
            Verb::Rerank => match r.as_f64() {
                Some(p) if (0.0..=1.0).contains(&p) => Ok(()),
                _ => Err(format!("relevance `{r}` is not a probability")),
            },
            Verb::Generate => r.as_str().map(|_| ()).ok_or_else(|| "generation is not a string".into()),
            Verb::Train => Ok(()),
        }
    }

    fn batched(&self, verb: Verb, records: Vec<Value>, params: Option<Value>) -> Result<Vec<Value>, GatewayError> {
        let mut out = Vec::with_capacity(records.len());
        for chunk in records.chunks(self.max_batch) {
            let req =
                ScoreRequest { verb, batch_id: self.fresh_batch_id(), payload: chunk.to_vec(), params: params.clone() };
            out.extend(self.call(req)?.results);
        }
        Ok(out)
    }
}

impl Nli for Gateway {
    fn nli(&self, pairs: &[(String, String)]) -> Result<Vec<NliScores>, GatewayError> {
        let records = pairs.iter().map(|(p, h)| json!({"premise": p, "hypothesis": h})).collect();
        self.batched(Verb::Nli, records, None)?
            .into_iter()
            .map(|v| serde_json::from_value(v).map_err(|e| GatewayError::ProtocolViolation(e.to_string())))
            .collect()
    }
}

impl RelevanceScorer for Gateway {
    fn relevance(&self, pairs: &[(String, String)]) -> Result<Vec<f64>, GatewayError> {
        let records = pairs.iter().map(|(q, p)| json!({"query": q, "passage": p})).collect();
        Ok(self.batched(Verb::Rerank, records, None)?.into_iter().map(|v| v.as_f64().unwrap_or(0.0)).collect())
    }
}

impl Generator for Gateway {
    fn generate(&self, prompts: &[String]) -> Result<Vec<String>, GatewayError> {
        let records = prompts.iter().map(|p| json!({"prompt": p})).collect();
        Ok(self
            .batched(Verb::Generate, records, None)?
            .into_iter()
            .map(|v| v.as_str().unwrap_or_default().to_string())
            .collect())
    }
}

impl Embedder for Gateway {
    fn embed(&self, profile: &str, texts: &[String]) -> Result<Vec<Vec<f64>>, GatewayError> {
        let records = texts.iter().map(|t| json!({"text": t})).collect();
        self.batched(Verb::Embed, records, Some(json!({"profile": profile})))?
            .into_iter()
            .map(|v| serde_json::from_value(v).map_err(|e| GatewayError::ProtocolViolation(e.to_string())))
            .collect()
    }
}

impl Trainer for Gateway {
    fn train(&self, command: &TrainCommand) -> Result<(), GatewayError> {
        let params = serde_json::to_value(command).map_err(|e| GatewayError::ProtocolViolation(e.to_string()))?;
        let req = ScoreRequest {
            verb: Verb::Train,
            batch_id: self.fresh_batch_id(),
            payload: Vec::new(),
            params: Some(params),
        };
        self.call(req).map(|_| ())
    }
}
