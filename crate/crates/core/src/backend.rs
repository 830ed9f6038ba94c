//! Pluggable completion backends.
//!
//! The engine talks to a [`CompletionBackend`] and never inspects anything
//! vendor-specific; a chat-completions HTTP adapter serves live runs while
//! scripted backends replay recorded or hand-written responses byte-for-byte
//! for deterministic tests.

use std::collections::HashMap;
use std::collections::VecDeque;
use std::sync::Mutex;
use std::time::Duration;

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use thiserror::Error;

use crate::tools::ToolSignature;

/// Environment variables the HTTP backend reads its endpoint from.
pub const ENV_API_BASE: &str = "REACTOD_API_BASE";
pub const ENV_API_KEY: &str = "REACTOD_API_KEY";
pub const ENV_MODEL: &str = "REACTOD_MODEL";
pub const ENV_NATIVE_TOOLS: &str = "REACTOD_NATIVE_TOOLS";

#[derive(Debug, Error)]
pub enum BackendError {
    #[error("transport failure: {0}")]
    Transport(String),
    #[error("malformed backend response: {0}")]
    Contract(String),
    #[error("scripted fixture exhausted: {0}")]
    ScriptExhausted(String),
    #[error("backend configuration error: {0}")]
    Config(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ChatRole {
    System,
    User,
    Assistant,
    Tool,
}

impl ChatRole {
    pub fn tag(&self) -> &'static str {
        match self {
            ChatRole::System => "system",
            ChatRole::User => "user",
            ChatRole::Assistant => "assistant",
            ChatRole::Tool => "tool",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChatMessage {
    pub role: ChatRole,
    pub content: String,
}

impl ChatMessage {
    pub fn system(content: impl Into<String>) -> Self {
        ChatMessage {
            role: ChatRole::System,
            content: content.into(),
        }
    }
    pub fn user(content: impl Into<String>) -> Self {
        ChatMessage {
            role: ChatRole::User,
            content: content.into(),
        }
    }
    pub fn assistant(content: impl Into<String>) -> Self {
        ChatMessage {
            role: ChatRole::Assistant,
            content: content.into(),
        }
    }
}

/// One completion request; the first message always carries the system role.
#[derive(Debug, Clone)]
pub struct CompletionRequest {
    pub messages: Vec<ChatMessage>,
    pub tool_signatures: Option<Vec<ToolSignature>>,
    pub temperature: f64,
    pub max_output_tokens: u32,
}

/// A structured tool call returned on the native path.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NativeToolCall {
    pub name: String,
    pub arguments: Value,
}

/// One model step: free text, native tool calls, or both.
#[derive(Debug, Clone, PartialEq)]
pub struct CompletionResult {
    pub text: Option<String>,
    pub native_calls: Option<Vec<NativeToolCall>>,
    pub output_tokens: u64,
    /// True when the backend reported no usage and the count is the
    /// whitespace-token fallback.
    pub tokens_estimated: bool,
}

impl CompletionResult {
    pub fn from_text(text: impl Into<String>) -> Self {
        let text = text.into();
        let output_tokens = estimate_tokens(&text);
        CompletionResult {
            text: Some(text),
            native_calls: None,
            output_tokens,
            tokens_estimated: true,
        }
    }
}

/// Whitespace-token fallback used when a backend reports no usage.
pub fn estimate_tokens(text: &str) -> u64 {
    text.split_whitespace().count() as u64
}

/// The policy interface: one request, one step of model output.
///
/// Implementations must tolerate concurrent calls from many dialogue workers.
pub trait CompletionBackend: Send + Sync {
    fn complete(&self, request: &CompletionRequest) -> Result<CompletionResult, BackendError>;
}

/// Stable fingerprint of a request, used to key recorded fixtures. FNV-1a
/// over the rendered messages and temperature; deliberately simple so
/// fixtures stay stable across releases.
pub fn request_fingerprint(request: &CompletionRequest) -> String {
    const FNV_OFFSET: u64 = 0xcbf29ce484222325;
    const FNV_PRIME: u64 = 0x100000001b3;
    let mut hash = FNV_OFFSET;
    let mut eat = |bytes: &[u8]| {
        for b in bytes {
            hash ^= u64::from(*b);
            hash = hash.wrapping_mul(FNV_PRIME);
        }
    };
    for message in &request.messages {
        eat(message.role.tag().as_bytes());
        eat(&[0x1f]);
        eat(message.content.as_bytes());
        eat(&[0x1e]);
    }
    eat(format!("{:.4}", request.temperature).as_bytes());
    format!("{hash:016x}")
}

// ---------------------------------------------------------------------------
// HTTP chat-completions backend
// ---------------------------------------------------------------------------

#[derive(Debug, Clone)]
pub struct HttpBackendConfig {
    pub api_base: String,
    pub api_key: Option<String>,
    pub model: String,
    /// Advertise tool signatures and consume structured tool calls; when
    /// false the model is prompted through the text grammar instead.
    pub native_tools: bool,
    pub max_retries: u32,
    pub timeout: Duration,
}

impl HttpBackendConfig {
    pub fn from_env() -> Result<Self, BackendError> {
        let api_base = std::env::var(ENV_API_BASE)
            .map_err(|_| BackendError::Config(format!("{ENV_API_BASE} is not set")))?;
        let model = std::env::var(ENV_MODEL)
            .map_err(|_| BackendError::Config(format!("{ENV_MODEL} is not set")))?;
        Ok(HttpBackendConfig {
            api_base,
            api_key: std::env::var(ENV_API_KEY).ok(),
            model,
            native_tools: std::env::var(ENV_NATIVE_TOOLS)
                .map(|v| v == "1" || v.eq_ignore_ascii_case("true"))
                .unwrap_or(false),
            max_retries: 2,
            timeout: Duration::from_secs(120),
        })
    }
}

/// Chat-completions-style HTTP adapter (messages[], tools[], usage).
pub struct HttpBackend {
    config: HttpBackendConfig,
    agent: ureq::Agent,
}

impl HttpBackend {
    pub fn new(config: HttpBackendConfig) -> Self {
        let agent = ureq::AgentBuilder::new().timeout(config.timeout).build();
        HttpBackend { config, agent }
    }

    pub fn from_env() -> Result<Self, BackendError> {
        Ok(HttpBackend::new(HttpBackendConfig::from_env()?))
    }

    fn endpoint(&self) -> String {
        format!(
            "{}/chat/completions",
            self.config.api_base.trim_end_matches('/')
        )
    }
}

/// Builds the outbound chat-completions payload.
pub fn build_payload(request: &CompletionRequest, model: &str, native_tools: bool) -> Value {
    let messages: Vec<Value> = request
        .messages
        .iter()
        .map(|m| json!({"role": m.role.tag(), "content": m.content}))
        .collect();
    let mut payload = json!({
        "model": model,
        "messages": messages,
        "temperature": request.temperature,
        "max_tokens": request.max_output_tokens,
    });
    if native_tools {
        if let Some(signatures) = &request.tool_signatures {
            let tools: Vec<Value> = signatures
                .iter()
                .map(|s| {
                    json!({
                        "type": "function",
                        "function": {
                            "name": s.name,
                            "description": s.description,
                            "parameters": s.parameters,
                        }
                    })
                })
                .collect();
            payload["tools"] = Value::Array(tools);
            payload["tool_choice"] = Value::String("auto".to_string());
        }
    }
    payload
}

/// Maps a chat-completions response body to a [`CompletionResult`].
pub fn parse_response(body: &Value) -> Result<CompletionResult, BackendError> {
    let message = body
        .pointer("/choices/0/message")
        .ok_or_else(|| BackendError::Contract("response carries no choices[0].message".into()))?;
    let text = message
        .get("content")
        .and_then(Value::as_str)
        .filter(|s| !s.is_empty())
        .map(str::to_string);
    let native_calls = message
        .get("tool_calls")
        .and_then(Value::as_array)
        .map(|calls| {
            calls
                .iter()
                .map(|call| {
                    let function = call.get("function").ok_or_else(|| {
                        BackendError::Contract("tool call has no function".into())
                    })?;
                    let name = function
                        .get("name")
                        .and_then(Value::as_str)
                        .ok_or_else(|| BackendError::Contract("tool call has no name".into()))?
                        .to_string();
                    let arguments = match function.get("arguments") {
                        Some(Value::String(s)) => serde_json::from_str(s).map_err(|e| {
                            BackendError::Contract(format!("tool arguments are not JSON: {e}"))
                        })?,
                        Some(other) => other.clone(),
                        None => json!({}),
                    };
                    Ok(NativeToolCall { name, arguments })
                })
                .collect::<Result<Vec<_>, BackendError>>()
        })
        .transpose()?
        .filter(|calls| !calls.is_empty());
    if text.is_none() && native_calls.is_none() {
        return Err(BackendError::Contract(
            "response carries neither content nor tool calls".into(),
        ));
    }
    let usage_tokens = body
        .pointer("/usage/completion_tokens")
        .and_then(Value::as_u64);
    let (output_tokens, tokens_estimated) = match usage_tokens {
        Some(tokens) => (tokens, false),
        None => (estimate_tokens(text.as_deref().unwrap_or_default()), true),
    };
    Ok(CompletionResult {
        text,
        native_calls,
        output_tokens,
        tokens_estimated,
    })
}

impl CompletionBackend for HttpBackend {
    fn complete(&self, request: &CompletionRequest) -> Result<CompletionResult, BackendError> {
        let payload = build_payload(request, &self.config.model, self.config.native_tools);
        let mut last_error = None;
        for attempt in 0..=self.config.max_retries {
            if attempt > 0 {
                std::thread::sleep(Duration::from_millis(200 * (1 << (attempt - 1))));
            }
            let mut http = self.agent.post(&self.endpoint());
            if let Some(key) = &self.config.api_key {
                http = http.set("Authorization", &format!("Bearer {key}"));
            }
            match http.send_json(payload.clone()) {
                Ok(response) => {
                    let body: Value = response
                        .into_json()
                        .map_err(|e| BackendError::Contract(e.to_string()))?;
                    return parse_response(&body);
                }
                // 5xx and 429 are retryable; other statuses are contract errors
                Err(ureq::Error::Status(code, response)) if code >= 500 || code == 429 => {
                    let body = response.into_string().unwrap_or_default();
                    last_error = Some(BackendError::Transport(format!("http {code}: {body}")));
                }
                Err(ureq::Error::Status(code, response)) => {
                    let body = response.into_string().unwrap_or_default();
                    return Err(BackendError::Contract(format!("http {code}: {body}")));
                }
                Err(ureq::Error::Transport(transport)) => {
                    last_error = Some(BackendError::Transport(transport.to_string()));
                }
            }
        }
        Err(last_error.unwrap_or_else(|| BackendError::Transport("request never sent".into())))
    }
}

// ---------------------------------------------------------------------------
// Scripted fixtures: record and replay
// ---------------------------------------------------------------------------

/// One recorded exchange. `fingerprint` may be empty for hand-written
/// sequential fixtures.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FixtureLine {
    #[serde(default)]
    pub fingerprint: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub response_text: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub native_calls: Option<Vec<NativeToolCall>>,
    #[serde(default)]
    pub output_tokens: u64,
}

impl FixtureLine {
    fn into_result(self) -> CompletionResult {
        CompletionResult {
            text: self.response_text,
            native_calls: self.native_calls,
            output_tokens: self.output_tokens,
            tokens_estimated: false,
        }
    }
}

/// A complete scripted session.
#[derive(Debug, Clone, Default)]
pub struct ScriptedFixture {
    pub lines: Vec<FixtureLine>,
}

impl ScriptedFixture {
    pub fn from_jsonl(content: &str) -> Result<Self, BackendError> {
        let mut lines = Vec::new();
        for (index, line) in content.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let parsed: FixtureLine = serde_json::from_str(line)
                .map_err(|e| BackendError::Contract(format!("fixture line {}: {e}", index + 1)))?;
            lines.push(parsed);
        }
        Ok(ScriptedFixture { lines })
    }

    pub fn to_jsonl(&self) -> String {
        let mut out = String::new();
        for line in &self.lines {
            out.push_str(&serde_json::to_string(line).expect("fixture serialization"));
            out.push('\n');
        }
        out
    }
}

enum ScriptStore {
    /// Responses served strictly in order; non-empty fingerprints are checked
    /// against the incoming request.
    Sequential(VecDeque<FixtureLine>),
    /// Responses keyed by request fingerprint, each key a FIFO queue; safe
    /// under concurrent dialogue workers.
    Keyed(HashMap<String, VecDeque<FixtureLine>>),
}

/// Deterministic replay backend. Identical fixtures and requests produce
/// identical results, including token counts; exhausting the script is a
/// loud failure so fixture bugs cannot pass silently.
pub struct ScriptedBackend {
    store: Mutex<ScriptStore>,
}

impl ScriptedBackend {
    /// Keyed replay when every line carries a fingerprint, sequential
    /// otherwise.
    pub fn new(fixture: ScriptedFixture) -> Self {
        let keyed =
            !fixture.lines.is_empty() && fixture.lines.iter().all(|l| !l.fingerprint.is_empty());
        if keyed {
            ScriptedBackend::keyed(fixture)
        } else {
            ScriptedBackend::sequential(fixture)
        }
    }

    pub fn sequential(fixture: ScriptedFixture) -> Self {
        ScriptedBackend {
            store: Mutex::new(ScriptStore::Sequential(fixture.lines.into())),
        }
    }

    pub fn keyed(fixture: ScriptedFixture) -> Self {
        let mut map: HashMap<String, VecDeque<FixtureLine>> = HashMap::new();
        for line in fixture.lines {
            map.entry(line.fingerprint.clone())
                .or_default()
                .push_back(line);
        }
        ScriptedBackend {
            store: Mutex::new(ScriptStore::Keyed(map)),
        }
    }

    /// Convenience constructor for hand-written sequential scripts.
    pub fn from_texts<S: Into<String>>(texts: impl IntoIterator<Item = S>) -> Self {
        let lines = texts
            .into_iter()
            .map(|t| {
                let text = t.into();
                FixtureLine {
                    fingerprint: String::new(),
                    output_tokens: estimate_tokens(&text),
                    response_text: Some(text),
                    native_calls: None,
                }
            })
            .collect();
        ScriptedBackend::sequential(ScriptedFixture { lines })
    }
}

impl CompletionBackend for ScriptedBackend {
    fn complete(&self, request: &CompletionRequest) -> Result<CompletionResult, BackendError> {
        let mut store = self.store.lock().expect("scripted backend poisoned");
        match &mut *store {
            ScriptStore::Sequential(queue) => {
                let line = queue.pop_front().ok_or_else(|| {
                    BackendError::ScriptExhausted("no scripted responses remain".into())
                })?;
                if !line.fingerprint.is_empty() {
                    let actual = request_fingerprint(request);
                    if line.fingerprint != actual {
                        return Err(BackendError::Contract(format!(
                            "fixture expected request {} but got {actual}",
                            line.fingerprint
                        )));
                    }
                }
                Ok(line.into_result())
            }
            ScriptStore::Keyed(map) => {
                let key = request_fingerprint(request);
                let line = map
                    .get_mut(&key)
                    .and_then(VecDeque::pop_front)
                    .ok_or_else(|| {
                        BackendError::ScriptExhausted(format!(
                            "no scripted response for request {key}"
                        ))
                    })?;
                Ok(line.into_result())
            }
        }
    }
}

/// Wraps a live backend and captures every exchange as a replayable fixture.
pub struct RecordingBackend<B> {
    inner: B,
    log: Mutex<Vec<FixtureLine>>,
}

impl<B: CompletionBackend> RecordingBackend<B> {
    pub fn new(inner: B) -> Self {
        RecordingBackend {
            inner,
            log: Mutex::new(Vec::new()),
        }
    }

    /// The captured session as a fixture the scripted backend replays
    /// byte-identically.
    pub fn fixture(&self) -> ScriptedFixture {
        ScriptedFixture {
            lines: self.log.lock().expect("recording log poisoned").clone(),
        }
    }
}

impl<B: CompletionBackend> CompletionBackend for RecordingBackend<B> {
    fn complete(&self, request: &CompletionRequest) -> Result<CompletionResult, BackendError> {
        let result = self.inner.complete(request)?;
        self.log
            .lock()
            .expect("recording log poisoned")
            .push(FixtureLine {
                fingerprint: request_fingerprint(request),
                response_text: result.text.clone(),
                native_calls: result.native_calls.clone(),
                output_tokens: result.output_tokens,
            });
        Ok(result)
    }
}

/// Per-turn scripted policy: serves each turn's responses in order and
/// detects turn boundaries by requests that carry no assistant message yet.
/// Useful for fixtures exercised under several engine modes, which consume
/// different numbers of steps per turn.
pub struct TurnScriptBackend {
    turns: Vec<Vec<CompletionResult>>,
    cursor: Mutex<(usize, usize)>,
    repeat_last: bool,
}

impl TurnScriptBackend {
    pub fn new(turns: Vec<Vec<CompletionResult>>) -> Self {
        TurnScriptBackend {
            turns,
            cursor: Mutex::new((0, 0)),
            repeat_last: false,
        }
    }

    /// Keep serving a turn's final response once its script runs out instead
    /// of failing; used by exhaustion fixtures.
    pub fn repeat_last(mut self) -> Self {
        self.repeat_last = true;
        self
    }

    pub fn from_texts(turns: Vec<Vec<&str>>) -> Self {
        TurnScriptBackend::new(
            turns
                .into_iter()
                .map(|steps| steps.into_iter().map(CompletionResult::from_text).collect())
                .collect(),
        )
    }
}

impl CompletionBackend for TurnScriptBackend {
    fn complete(&self, request: &CompletionRequest) -> Result<CompletionResult, BackendError> {
        let fresh_turn = !request
            .messages
            .iter()
            .any(|m| m.role == ChatRole::Assistant);
        let mut cursor = self.cursor.lock().expect("turn script poisoned");
        if fresh_turn && cursor.1 > 0 {
            cursor.0 += 1;
            cursor.1 = 0;
        }
        let turn = self.turns.get(cursor.0).ok_or_else(|| {
            BackendError::ScriptExhausted(format!("no script for turn {}", cursor.0))
        })?;
        let step = if cursor.1 < turn.len() {
            cursor.1
        } else if self.repeat_last && !turn.is_empty() {
            turn.len() - 1
        } else {
            return Err(BackendError::ScriptExhausted(format!(
                "turn {} script exhausted at step {}",
                cursor.0, cursor.1
            )));
        };
        cursor.1 += 1;
        Ok(turn[step].clone())
    }
}
