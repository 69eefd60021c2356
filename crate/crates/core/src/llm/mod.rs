//! Chat-completion gateway: request/response types, tool schemas, a retrying
//! front end over pluggable backends, and per-purpose model routing.

mod http;
mod mock;
mod prompt;
mod tokens;

use std::sync::Arc;
use std::time::Duration;

use serde::{Deserialize, Serialize};
use serde_json::Value;
use thiserror::Error;

pub use http::{HttpBackend, HttpConfig, RateLimiter};
pub use mock::{MatchScope, MockBackend, MockReply, MockRule, MockRules};
pub use prompt::{
    build_ie_prompt, extract_search_terms, fallback_search_terms, format_reminder, FewShot,
    PromptError, IE_SYSTEM_PREAMBLE,
};
pub use tokens::{estimate_tokens, CharRatioTokenizer, ModelInfo, TokenEstimator, Tokenizer};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    System,
    User,
    Assistant,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Message {
    pub role: Role,
    pub content: String,
}

impl Message {
    pub fn system(content: impl Into<String>) -> Self {
        Message { role: Role::System, content: content.into() }
    }

    pub fn user(content: impl Into<String>) -> Self {
        Message { role: Role::User, content: content.into() }
    }

    pub fn assistant(content: impl Into<String>) -> Self {
        Message { role: Role::Assistant, content: content.into() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "lowercase")]
pub enum ParamType {
    String,
    Number,
    Integer,
    Boolean,
    Enum { values: Vec<String> },
    Array { items: Box<ParamType> },
}

impl ParamType {
    fn json_schema(&self) -> Value {
        match self {
            ParamType::String => serde_json::json!({"type": "string"}),
            ParamType::Number => serde_json::json!({"type": "number"}),
            ParamType::Integer => serde_json::json!({"type": "integer"}),
            ParamType::Boolean => serde_json::json!({"type": "boolean"}),
            ParamType::Enum { values } => serde_json::json!({"type": "string", "enum": values}),
            ParamType::Array { items } => serde_json::json!({"type": "array", "items": items.json_schema()}),
        }
    }

    fn accepts(&self, v: &Value) -> bool {
        match self {
            ParamType::String => v.is_string(),
            ParamType::Number => v.is_number(),
            ParamType::Integer => v.is_i64() || v.is_u64(),
            ParamType::Boolean => v.is_boolean(),
            ParamType::Enum { values } => v.as_str().is_some_and(|s| values.iter().any(|x| x == s)),
            ParamType::Array { items } => v
                .as_array()
                .is_some_and(|arr| arr.iter().all(|x| items.accepts(x))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ToolParam {
    pub name: String,
    #[serde(flatten)]
    pub ty: ParamType,
    #[serde(default)]
    pub required: bool,
    #[serde(default)]
    pub description: String,
}

impl ToolParam {
    pub fn required(name: &str, ty: ParamType, description: &str) -> Self {
        ToolParam { name: name.into(), ty, required: true, description: description.into() }
    }

    pub fn optional(name: &str, ty: ParamType, description: &str) -> Self {
        ToolParam { name: name.into(), ty, required: false, description: description.into() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ToolSchema {
    pub name: String,
    pub description: String,
    pub parameters: Vec<ToolParam>,
}

impl ToolSchema {
    /// JSON Schema object for the `parameters` slot of a function tool.
    pub fn parameters_json_schema(&self) -> Value {
        let mut props = serde_json::Map::new();
        for p in &self.parameters {
            let mut schema = p.ty.json_schema();
            if !p.description.is_empty() {
                schema["description"] = Value::String(p.description.clone());
            }
            props.insert(p.name.clone(), schema);
        }
        let required: Vec<&str> = self
            .parameters
            .iter()
            .filter(|p| p.required)
            .map(|p| p.name.as_str())
            .collect();
        serde_json::json!({"type": "object", "properties": props, "required": required})
    }

    /// Checks an argument object against the declared parameters.
    pub fn validate_args(&self, args: &Value) -> Result<(), String> {
        let obj = args
            .as_object()
            .ok_or_else(|| format!("{}: arguments must be an object", self.name))?;
        for key in obj.keys() {
            if !self.parameters.iter().any(|p| &p.name == key) {
                return Err(format!("{}: unknown argument {key:?}", self.name));
            }
        }
        for p in &self.parameters {
            match obj.get(&p.name) {
                None | Some(Value::Null) if p.required => {
                    return Err(format!("{}: missing required argument {:?}", self.name, p.name))
                }
                None | Some(Value::Null) => {}
                Some(v) if !p.ty.accepts(v) => {
                    return Err(format!(
                        "{}: argument {:?} has the wrong type (expected {})",
                        self.name,
                        p.name,
                        p.ty.json_schema()
                    ))
                }
                Some(_) => {}
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChatRequest {
    pub model_id: String,
    pub messages: Vec<Message>,
    #[serde(default)]
    pub temperature: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tools: Option<Vec<ToolSchema>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub max_output_tokens: Option<usize>,
}

impl ChatRequest {
    /// Temperature 0 unless overridden.
    pub fn new(model_id: &str, messages: Vec<Message>) -> Self {
        ChatRequest {
            model_id: model_id.to_string(),
            messages,
            temperature: 0.0,
            tools: None,
            max_output_tokens: None,
        }
    }

    pub fn with_tools(mut self, tools: Vec<ToolSchema>) -> Self {
        self.tools = Some(tools);
        self
    }

    pub fn last_user(&self) -> Option<&str> {
        self.messages
            .iter()
            .rev()
            .find(|m| m.role == Role::User)
            .map(|m| m.content.as_str())
    }

    /// The conversation flattened to one text block, one message per line.
    pub fn render_text(&self) -> String {
        self.messages
            .iter()
            .map(|m| m.content.as_str())
            .collect::<Vec<_>>()
            .join("\n")
    }

    pub fn estimate_input_tokens(&self, est: &TokenEstimator) -> usize {
        let mut n: usize = self
            .messages
            .iter()
            .map(|m| est.estimate(&m.content, &self.model_id))
            .sum();
        if let Some(tools) = &self.tools {
            for t in tools {
                let schema = serde_json::to_string(&t.parameters_json_schema()).unwrap_or_default();
                n += est.estimate(&t.name, &self.model_id)
                    + est.estimate(&t.description, &self.model_id)
                    + est.estimate(&schema, &self.model_id);
            }
        }
        n
    }

    fn check(&self) -> Result<(), LlmError> {
        if self.messages.is_empty() {
            return Err(LlmError::InvalidRequest("no messages".into()));
        }
        if !(0.0..=2.0).contains(&self.temperature) {
            return Err(LlmError::InvalidRequest(format!("temperature {} out of range", self.temperature)));
        }
        if let Some(tools) = &self.tools {
            let mut names = std::collections::HashSet::new();
            for t in tools {
                if !names.insert(t.name.as_str()) {
                    return Err(LlmError::InvalidRequest(format!("duplicate tool {:?}", t.name)));
                }
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ToolCall {
    pub name: String,
    pub arguments: Value,
}

/// Exactly one of free text or a tool call.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Reply {
    Content(String),
    ToolCall(ToolCall),
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Usage {
    pub input_tokens: usize,
    pub output_tokens: usize,
}

impl std::ops::AddAssign for Usage {
    fn add_assign(&mut self, rhs: Usage) {
        self.input_tokens += rhs.input_tokens;
        self.output_tokens += rhs.output_tokens;
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChatResponse {
    pub reply: Reply,
    pub usage: Usage,
    pub latency_ms: u64,
}

impl ChatResponse {
    pub fn content(&self) -> Option<&str> {
        match &self.reply {
            Reply::Content(s) => Some(s),
            Reply::ToolCall(_) => None,
        }
    }

    pub fn tool_call(&self) -> Option<&ToolCall> {
        match &self.reply {
            Reply::ToolCall(c) => Some(c),
            Reply::Content(_) => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum LlmError {
    #[error("authentication failed: {0}")]
    Auth(String),
    #[error("context length exceeded: {needed} tokens needed, window is {window}")]
    ContextLength { needed: usize, window: usize },
    #[error("invalid request: {0}")]
    InvalidRequest(String),
    #[error("transient failure: {0}")]
    Transient(String),
    #[error("timed out after {attempts} attempts: {last}")]
    Timeout { attempts: u32, last: String },
    #[error("backend unavailable: {0}")]
    Unavailable(String),
}

impl LlmError {
    pub fn is_transient(&self) -> bool {
        matches!(self, LlmError::Transient(_))
    }
}

pub trait Backend: Send + Sync {
    fn send(&self, req: &ChatRequest) -> Result<ChatResponse, LlmError>;

    /// Deterministic offline backends skip LLM-side answer rendering.
    fn is_mock(&self) -> bool {
        false
    }
}

/// What a model is used for; each purpose routes to its own model id.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Purpose {
    Labeling,
    Chat,
    Normalization,
    SearchTerms,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelRoutes {
    pub labeling: String,
    pub chat: String,
    pub normalization: String,
    pub search_terms: String,
}

impl Default for ModelRoutes {
    fn default() -> Self {
        ModelRoutes {
            labeling: "gpt-3.5-turbo-16k-0613".into(),
            chat: "gpt-3.5-turbo-16k-0613".into(),
            normalization: "gpt-3.5-turbo-0613".into(),
            search_terms: "gpt-3.5-turbo-16k-0613".into(),
        }
    }
}

impl ModelRoutes {
    pub fn model(&self, purpose: Purpose) -> &str {
        match purpose {
            Purpose::Labeling => &self.labeling,
            Purpose::Chat => &self.chat,
            Purpose::Normalization => &self.normalization,
            Purpose::SearchTerms => &self.search_terms,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RetryPolicy {
    pub max_attempts: u32,
    pub base_delay: Duration,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        RetryPolicy { max_attempts: 3, base_delay: Duration::from_millis(250) }
    }
}

/// Front end over a backend: context-window precheck, bounded retries with
/// exponential backoff, and model routing.
#[derive(Clone)]
pub struct Gateway {
    backend: Arc<dyn Backend>,
    pub estimator: TokenEstimator,
    pub routes: ModelRoutes,
    pub retry: RetryPolicy,
    parallelism: usize,
}

impl Gateway {
    pub fn new(backend: Arc<dyn Backend>) -> Self {
        Gateway {
            backend,
            estimator: TokenEstimator::default(),
            routes: ModelRoutes::default(),
            retry: RetryPolicy::default(),
            parallelism: 4,
        }
    }

    pub fn mock(rules: MockRules) -> Self {
        let mut gw = Gateway::new(Arc::new(MockBackend::new(rules)));
        gw.retry.base_delay = Duration::ZERO;
        gw
    }

    pub fn with_parallelism(mut self, n: usize) -> Self {
        self.parallelism = n.max(1);
        self
    }

    pub fn with_routes(mut self, routes: ModelRoutes) -> Self {
        self.routes = routes;
        self
    }

    pub fn parallelism(&self) -> usize {
        self.parallelism
    }

    pub fn is_mock(&self) -> bool {
        self.backend.is_mock()
    }

    pub fn model(&self, purpose: Purpose) -> &str {
        self.routes.model(purpose)
    }

    pub fn estimate_tokens(&self, text: &str, model_id: &str) -> usize {
        self.estimator.estimate(text, model_id)
    }

    /// Errors with the overflow amount when the request cannot fit the
    /// model's context window.
    pub fn precheck(&self, req: &ChatRequest) -> Result<(), LlmError> {
        let window = self.estimator.context_window(&req.model_id);
        let needed = req.estimate_input_tokens(&self.estimator) + req.max_output_tokens.unwrap_or(0);
        if needed > window {
            return Err(LlmError::ContextLength { needed, window });
        }
        Ok(())
    }

    pub fn complete(&self, req: &ChatRequest) -> Result<ChatResponse, LlmError> {
        req.check()?;
        self.precheck(req)?;
        let mut attempt = 0;
        loop {
            attempt += 1;
            match self.backend.send(req) {
                Ok(resp) => return Ok(resp),
                Err(e) if e.is_transient() && attempt < self.retry.max_attempts => {
                    std::thread::sleep(self.retry.base_delay * 2u32.pow(attempt - 1));
                }
                Err(LlmError::Transient(last)) => {
                    return Err(LlmError::Timeout { attempts: attempt, last })
                }
                Err(e) => return Err(e),
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::sync::atomic::{AtomicU32, Ordering};

    struct Flaky {
        failures: u32,
        calls: AtomicU32,
        error: LlmError,
    }

    impl Backend for Flaky {
        fn send(&self, _req: &ChatRequest) -> Result<ChatResponse, LlmError> {
            let n = self.calls.fetch_add(1, Ordering::SeqCst);
            if n < self.failures {
                return Err(self.error.clone());
            }
            Ok(ChatResponse { reply: Reply::Content("ok".into()), usage: Usage::default(), latency_ms: 0 })
        }
    }

    fn gateway(backend: Arc<Flaky>) -> Gateway {
        let mut gw = Gateway::new(backend);
        gw.retry.base_delay = Duration::ZERO;
        gw
    }

    fn req() -> ChatRequest {
        ChatRequest::new("gpt-3.5-turbo-0613", vec![Message::user("hi")])
    }

    #[test]
    fn transient_failures_are_retried_up_to_three_attempts() {
        let b = Arc::new(Flaky { failures: 2, calls: AtomicU32::new(0), error: LlmError::Transient("503".into()) });
        assert!(gateway(b.clone()).complete(&req()).is_ok());
        assert_eq!(b.calls.load(Ordering::SeqCst), 3);

        let b = Arc::new(Flaky { failures: 3, calls: AtomicU32::new(0), error: LlmError::Transient("503".into()) });
        let err = gateway(b.clone()).complete(&req()).unwrap_err();
        assert!(matches!(err, LlmError::Timeout { attempts: 3, .. }));
        assert_eq!(b.calls.load(Ordering::SeqCst), 3);
    }

    #[test]
    fn non_transient_errors_are_not_retried() {
        for error in [LlmError::Auth("bad key".into()), LlmError::InvalidRequest("schema".into())] {
            let b = Arc::new(Flaky { failures: 5, calls: AtomicU32::new(0), error: error.clone() });
            assert_eq!(gateway(b.clone()).complete(&req()).unwrap_err(), error);
            assert_eq!(b.calls.load(Ordering::SeqCst), 1);
        }
    }

    #[test]
    fn context_overflow_is_caught_before_sending() {
        let b = Arc::new(Flaky { failures: 0, calls: AtomicU32::new(0), error: LlmError::Auth(String::new()) });
        let big = ChatRequest::new("gpt-3.5-turbo-0613", vec![Message::user("x".repeat(4 * 5000))]);
        let err = gateway(b.clone()).complete(&big).unwrap_err();
        assert_eq!(err, LlmError::ContextLength { needed: 5000, window: 4096 });
        assert_eq!(b.calls.load(Ordering::SeqCst), 0);
    }

    #[test]
    fn temperature_defaults_to_zero() {
        assert_eq!(req().temperature, 0.0);
    }

    #[test]
    fn duplicate_tool_names_rejected() {
        let t = ToolSchema { name: "a".into(), description: String::new(), parameters: vec![] };
        let b = Arc::new(Flaky { failures: 0, calls: AtomicU32::new(0), error: LlmError::Auth(String::new()) });
        let err = gateway(b).complete(&req().with_tools(vec![t.clone(), t])).unwrap_err();
        assert!(matches!(err, LlmError::InvalidRequest(_)));
    }

    #[test]
    fn tool_argument_validation() {
        let schema = ToolSchema {
            name: "aggregate".into(),
            description: String::new(),
            parameters: vec![
                ToolParam::required("target", ParamType::String, ""),
                ToolParam::required(
                    "stat",
                    ParamType::Enum { values: vec!["mean".into(), "count".into()] },
                    "",
                ),
                ToolParam::optional("bins", ParamType::Integer, ""),
            ],
        };
        assert!(schema.validate_args(&serde_json::json!({"target": "Fine", "stat": "mean"})).is_ok());
        assert!(schema.validate_args(&serde_json::json!({"target": "Fine"})).is_err());
        assert!(schema.validate_args(&serde_json::json!({"target": "Fine", "stat": "mode"})).is_err());
        assert!(schema.validate_args(&serde_json::json!({"target": "Fine", "stat": "mean", "x": 1})).is_err());
        assert!(schema.validate_args(&serde_json::json!({"target": "Fine", "stat": "mean", "bins": 2.5})).is_err());
        let js = schema.parameters_json_schema();
        assert_eq!(js["required"], serde_json::json!(["target", "stat"]));
        assert_eq!(js["properties"]["stat"]["enum"], serde_json::json!(["mean", "count"]));
    }
}
