//! Live backend speaking the chat-completions wire format.

use std::sync::{Condvar, Mutex};
use std::time::{Duration, Instant};

use serde_json::{json, Value};

use super::{Backend, ChatRequest, ChatResponse, LlmError, Reply, Role, ToolCall, Usage};

#[derive(Debug, Clone, PartialEq)]
pub struct HttpConfig {
    pub base_url: String,
    pub api_key: String,
    pub timeout: Duration,
    /// Maximum in-flight requests.
    pub parallelism: usize,
    /// Requests per second; 0 disables rate limiting.
    pub rate_limit: f64,
}

impl HttpConfig {
    /// Reads `STRUCTA_LLM_API_KEY` (falling back to `OPENAI_API_KEY`),
    /// `STRUCTA_LLM_BASE_URL`, `STRUCTA_LLM_PARALLELISM` and
    /// `STRUCTA_LLM_RATE_LIMIT`.
    pub fn from_env() -> Option<Self> {
        let key = std::env::var("STRUCTA_LLM_API_KEY")
            .or_else(|_| std::env::var("OPENAI_API_KEY"))
            .ok()?;
        let num = |name: &str, default: f64| {
            std::env::var(name)
                .ok()
                .and_then(|v| v.parse::<f64>().ok())
                .unwrap_or(default)
        };
        Some(HttpConfig {
            base_url: std::env::var("STRUCTA_LLM_BASE_URL")
                .unwrap_or_else(|_| "https://api.openai.com/v1".into()),
            api_key: key,
            timeout: Duration::from_secs(120),
            parallelism: num("STRUCTA_LLM_PARALLELISM", 4.0).max(1.0) as usize,
            rate_limit: num("STRUCTA_LLM_RATE_LIMIT", 0.0),
        })
    }
}

/// Token bucket with a capacity of one second's worth of requests.
pub struct RateLimiter {
    rate: f64,
    state: Mutex<(f64, Instant)>,
}

impl RateLimiter {
    pub fn new(per_second: f64) -> Self {
        RateLimiter {
            rate: per_second,
            state: Mutex::new((per_second.max(1.0), Instant::now())),
        }
    }

    /// Blocks until a token is available.
    pub fn acquire(&self) {
        if self.rate <= 0.0 {
            return;
        }
        loop {
            let wait = {
                let mut st = self.state.lock().unwrap();
                let now = Instant::now();
                let elapsed = now.duration_since(st.1).as_secs_f64();
                st.0 = (st.0 + elapsed * self.rate).min(self.rate.max(1.0));
                st.1 = now;
                if st.0 >= 1.0 {
                    st.0 -= 1.0;
                    return;
                }
                (1.0 - st.0) / self.rate
            };
            std::thread::sleep(Duration::from_secs_f64(wait));
        }
    }
}

struct Slots {
    free: Mutex<usize>,
    cv: Condvar,
}

impl Slots {
    fn acquire(&self) -> SlotGuard<'_> {
        let mut free = self.free.lock().unwrap();
        while *free == 0 {
            free = self.cv.wait(free).unwrap();
        }
        *free -= 1;
        SlotGuard(self)
    }
}

struct SlotGuard<'a>(&'a Slots);

impl Drop for SlotGuard<'_> {
    fn drop(&mut self) {
        *self.0.free.lock().unwrap() += 1;
        self.0.cv.notify_one();
    }
}

pub struct HttpBackend {
    config: HttpConfig,
    client: reqwest::blocking::Client,
    limiter: RateLimiter,
    slots: Slots,
}

impl HttpBackend {
    pub fn new(config: HttpConfig) -> Result<Self, LlmError> {
        let client = reqwest::blocking::Client::builder()
            .timeout(config.timeout)
            .build()
            .map_err(|e| LlmError::Unavailable(e.to_string()))?;
        Ok(HttpBackend {
            limiter: RateLimiter::new(config.rate_limit),
            slots: Slots {
                free: Mutex::new(config.parallelism.max(1)),
                cv: Condvar::new(),
            },
            config,
            client,
        })
    }
}

/// Request body in the chat-completions wire format.
pub(crate) fn wire_request(req: &ChatRequest) -> Value {
    let messages: Vec<Value> = req
        .messages
        .iter()
        .map(|m| {
            let role = match m.role {
                Role::System => "system",
                Role::User => "user",
                Role::Assistant => "assistant",
            };
            json!({"role": role, "content": m.content})
        })
        .collect();
    let mut body = json!({
        "model": req.model_id,
        "messages": messages,
        "temperature": req.temperature,
    });
    if let Some(tools) = req.tools.as_ref().filter(|t| !t.is_empty()) {
        body["tools"] = tools
            .iter()
            .map(|t| {
                json!({
                    "type": "function",
                    "function": {
                        "name": t.name,
                        "description": t.description,
                        "parameters": t.parameters_json_schema(),
                    }
                })
            })
            .collect();
    }
    if let Some(max) = req.max_output_tokens {
        body["max_tokens"] = json!(max);
    }
    body
}

/// Parses a chat-completions response body.
pub(crate) fn parse_wire_response(body: &Value, latency_ms: u64) -> Result<ChatResponse, LlmError> {
    let message = &body["choices"][0]["message"];
    if message.is_null() {
        return Err(LlmError::Transient("response without choices".into()));
    }
    let reply = match message["tool_calls"].as_array().and_then(|c| c.first()) {
        Some(call) => {
            let raw = call["function"]["arguments"].as_str().unwrap_or("{}");
            let arguments = serde_json::from_str(raw).unwrap_or(Value::String(raw.to_string()));
            Reply::ToolCall(ToolCall {
                name: call["function"]["name"].as_str().unwrap_or_default().to_string(),
                arguments,
            })
        }
        None => Reply::Content(message["content"].as_str().unwrap_or_default().to_string()),
    };
    let usage = Usage {
        input_tokens: body["usage"]["prompt_tokens"].as_u64().unwrap_or(0) as usize,
        output_tokens: body["usage"]["completion_tokens"].as_u64().unwrap_or(0) as usize,
    };
    Ok(ChatResponse { reply, usage, latency_ms })
}

fn classify_status(status: u16, body: &str) -> LlmError {
    match status {
        401 | 403 => LlmError::Auth(body.to_string()),
        400 if body.contains("context_length_exceeded") => LlmError::ContextLength { needed: 0, window: 0 },
        400..=428 | 430..=499 => LlmError::InvalidRequest(format!("HTTP {status}: {body}")),
        _ => LlmError::Transient(format!("HTTP {status}: {body}")),
    }
}

impl Backend for HttpBackend {
    fn send(&self, req: &ChatRequest) -> Result<ChatResponse, LlmError> {
        let _slot = self.slots.acquire();
        self.limiter.acquire();
        let started = Instant::now();
        let url = format!("{}/chat/completions", self.config.base_url.trim_end_matches('/'));
        let resp = self
            .client
            .post(url)
            .bearer_auth(&self.config.api_key)
            .json(&wire_request(req))
            .send()
            .map_err(|e| LlmError::Transient(e.to_string()))?;
        let status = resp.status().as_u16();
        let text = resp.text().map_err(|e| LlmError::Transient(e.to_string()))?;
        if !(200..300).contains(&status) {
            return Err(classify_status(status, &text));
        }
        let body: Value = serde_json::from_str(&text).map_err(|e| LlmError::Transient(e.to_string()))?;
        parse_wire_response(&body, started.elapsed().as_millis() as u64)
    }
}
