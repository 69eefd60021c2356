//! Rule-table backend for offline runs. The reply is a pure function of the
//! rule table and the request.

use std::path::Path;

use regex::{Captures, Regex};
use serde::{Deserialize, Serialize};
use serde_json::Value;

use super::{Backend, ChatRequest, ChatResponse, LlmError, Reply, TokenEstimator, ToolCall, Usage};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MatchScope {
    /// The last user message only.
    #[default]
    LastUser,
    /// Every message, joined by newlines.
    All,
}

/// What a matching rule answers with.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MockReply {
    /// Literal text; `$1`, `${name}` expand to captures of the rule pattern.
    Content(String),
    /// A JSON object built from per-field regexes run over the matched text;
    /// each match contributes capture group 1 (or the whole match).
    Fields(serde_json::Map<String, Value>),
    /// A tool call; string leaves of `arguments` expand captures.
    ToolCall { name: String, arguments: Value },
    /// Simulated failure: `auth`, `context_length`, `transient`, `unavailable`
    /// or `invalid`.
    Error(String),
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MockRule {
    pub pattern: String,
    #[serde(default)]
    pub scope: MatchScope,
    /// Only match requests that do (true) or do not (false) offer tools.
    #[serde(default)]
    pub with_tools: Option<bool>,
    /// Only match requests for this model id.
    #[serde(default)]
    pub model: Option<String>,
    #[serde(flatten)]
    pub reply: MockReply,
}

impl MockRule {
    pub fn new(pattern: &str, reply: MockReply) -> Self {
        MockRule {
            pattern: pattern.to_string(),
            scope: MatchScope::LastUser,
            with_tools: None,
            model: None,
            reply,
        }
    }

    pub fn content(pattern: &str, content: &str) -> Self {
        MockRule::new(pattern, MockReply::Content(content.to_string()))
    }

    pub fn tool_call(pattern: &str, name: &str, arguments: Value) -> Self {
        MockRule::new(pattern, MockReply::ToolCall { name: name.to_string(), arguments })
    }

    pub fn when_tools(mut self, present: bool) -> Self {
        self.with_tools = Some(present);
        self
    }

    pub fn scope(mut self, scope: MatchScope) -> Self {
        self.scope = scope;
        self
    }
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct MockRules {
    pub rules: Vec<MockRule>,
    /// Reply used when no rule matches; without one the backend reports
    /// itself unavailable.
    #[serde(default)]
    pub fallback: Option<MockReply>,
}

impl MockRules {
    pub fn new(rules: Vec<MockRule>) -> Self {
        MockRules { rules, fallback: None }
    }

    pub fn from_json(text: &str) -> Result<Self, String> {
        serde_json::from_str(text).map_err(|e| e.to_string())
    }

    pub fn load(path: &Path) -> Result<Self, String> {
        let text = std::fs::read_to_string(path).map_err(|e| format!("{}: {e}", path.display()))?;
        Self::from_json(&text)
    }
}

/// A rule with its compiled pattern and compiled argument constraints.
type CompiledRule = (MockRule, Regex, Vec<(String, Regex)>);

pub struct MockBackend {
    rules: Vec<CompiledRule>,
    fallback: Option<MockReply>,
    estimator: TokenEstimator,
}

impl MockBackend {
    /// Panics on an invalid regex; use [`MockBackend::try_new`] for untrusted tables.
    pub fn new(rules: MockRules) -> Self {
        Self::try_new(rules).expect("valid mock rules")
    }

    pub fn try_new(rules: MockRules) -> Result<Self, String> {
        let mut compiled = Vec::new();
        for rule in rules.rules {
            let re = Regex::new(&rule.pattern).map_err(|e| format!("{}: {e}", rule.pattern))?;
            let mut field_res = Vec::new();
            if let MockReply::Fields(map) = &rule.reply {
                for (field, pat) in map {
                    let pat = pat
                        .as_str()
                        .ok_or_else(|| format!("field {field}: pattern must be a string"))?;
                    field_res.push((field.clone(), Regex::new(pat).map_err(|e| format!("{pat}: {e}"))?));
                }
            }
            compiled.push((rule, re, field_res));
        }
        Ok(MockBackend { rules: compiled, fallback: rules.fallback, estimator: TokenEstimator::default() })
    }

    fn reply_for(&self, req: &ChatRequest) -> Result<Reply, LlmError> {
        let has_tools = req.tools.as_ref().is_some_and(|t| !t.is_empty());
        let all = req.render_text();
        for (rule, re, field_res) in &self.rules {
            if rule.with_tools.is_some_and(|want| want != has_tools) {
                continue;
            }
            if rule.model.as_ref().is_some_and(|m| m != &req.model_id) {
                continue;
            }
            let haystack = match rule.scope {
                MatchScope::LastUser => req.last_user().unwrap_or(""),
                MatchScope::All => all.as_str(),
            };
            if let Some(caps) = re.captures(haystack) {
                return build_reply(&rule.reply, &caps, haystack, field_res);
            }
        }
        match &self.fallback {
            Some(reply) => {
                let caps = Regex::new("").unwrap().captures("").unwrap();
                build_reply(reply, &caps, "", &[])
            }
            None => Err(LlmError::Unavailable("no mock rule matched".into())),
        }
    }
}

fn expand(template: &str, caps: &Captures) -> String {
    let mut out = String::new();
    caps.expand(template, &mut out);
    out
}

fn expand_value(v: &Value, caps: &Captures) -> Value {
    match v {
        Value::String(s) => Value::String(expand(s, caps)),
        Value::Array(a) => Value::Array(a.iter().map(|x| expand_value(x, caps)).collect()),
        Value::Object(o) => Value::Object(o.iter().map(|(k, x)| (k.clone(), expand_value(x, caps))).collect()),
        other => other.clone(),
    }
}

fn build_reply(
    reply: &MockReply,
    caps: &Captures,
    haystack: &str,
    field_res: &[(String, Regex)],
) -> Result<Reply, LlmError> {
    match reply {
        MockReply::Content(t) => Ok(Reply::Content(expand(t, caps))),
        MockReply::Fields(_) => {
            let mut obj = serde_json::Map::new();
            for (field, re) in field_res {
                let values: Vec<Value> = re
                    .captures_iter(haystack)
                    .map(|c| c.get(1).or_else(|| c.get(0)).unwrap().as_str().to_string())
                    .map(Value::String)
                    .collect();
                if !values.is_empty() {
                    obj.insert(field.clone(), Value::Array(values));
                }
            }
            Ok(Reply::Content(Value::Object(obj).to_string()))
        }
        MockReply::ToolCall { name, arguments } => Ok(Reply::ToolCall(ToolCall {
            name: name.clone(),
            arguments: expand_value(arguments, caps),
        })),
        MockReply::Error(kind) => Err(match kind.as_str() {
            "auth" => LlmError::Auth("mock".into()),
            "context_length" => LlmError::ContextLength { needed: 0, window: 0 },
            "transient" => LlmError::Transient("mock".into()),
            "invalid" => LlmError::InvalidRequest("mock".into()),
            _ => LlmError::Unavailable("mock".into()),
        }),
    }
}

impl Backend for MockBackend {
    fn send(&self, req: &ChatRequest) -> Result<ChatResponse, LlmError> {
        let reply = self.reply_for(req)?;
        let output = match &reply {
            Reply::Content(s) => s.clone(),
            Reply::ToolCall(c) => format!("{}{}", c.name, c.arguments),
        };
        Ok(ChatResponse {
            usage: Usage {
                input_tokens: req.estimate_input_tokens(&self.estimator),
                output_tokens: self.estimator.estimate(&output, &req.model_id),
            },
            reply,
            latency_ms: 0,
        })
    }

    fn is_mock(&self) -> bool {
        true
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::llm::{Gateway, Message};

    #[test]
    fn content_rule_with_usage() {
        let gw = Gateway::mock(MockRules::new(vec![MockRule::content("BAC 0.12", r#"{"BAC": ["0.12%"]}"#)]));
        let req = ChatRequest::new("m", vec![Message::user("measured BAC 0.12 at the scene")]);
        let resp = gw.complete(&req).unwrap();
        assert_eq!(resp.content(), Some(r#"{"BAC": ["0.12%"]}"#));
        assert_eq!(resp.usage.input_tokens, crate::llm::estimate_tokens("measured BAC 0.12 at the scene"));
        assert_eq!(resp.usage.output_tokens, crate::llm::estimate_tokens(r#"{"BAC": ["0.12%"]}"#));
    }

    #[test]
    fn captures_and_field_extraction() {
        let rules = MockRules::from_json(
            r#"{"rules": [
                {"pattern": "fine of (?P<amt>[0-9,]+)", "content": "{\"Fine\": [\"${amt} won\"]}"},
                {"pattern": "(?s).*", "fields": {"BAC": "level of ([0-9.]+%)", "Dist": "for ([0-9]+m)"}}
            ]}"#,
        )
        .unwrap();
        let gw = Gateway::mock(rules);
        let r = gw.complete(&ChatRequest::new("m", vec![Message::user("a fine of 5,000")])).unwrap();
        assert_eq!(r.content(), Some(r#"{"Fine": ["5,000 won"]}"#));
        let r = gw
            .complete(&ChatRequest::new("m", vec![Message::user("drove for 300m at a level of 0.12%")]))
            .unwrap();
        assert_eq!(r.content(), Some(r#"{"BAC":["0.12%"],"Dist":["300m"]}"#));
    }

    #[test]
    fn tool_call_branch_is_exclusive() {
        let rules = MockRules::new(vec![MockRule::tool_call(
            "average (\\w+)",
            "aggregate",
            serde_json::json!({"target": "$1", "stat": "mean"}),
        )
        .when_tools(true)]);
        let gw = Gateway::mock(rules);
        let tool = crate::llm::ToolSchema { name: "aggregate".into(), description: String::new(), parameters: vec![] };
        let req = ChatRequest::new("m", vec![Message::user("average Fine please")]).with_tools(vec![tool]);
        let resp = gw.complete(&req).unwrap();
        assert!(resp.content().is_none());
        let call = resp.tool_call().unwrap();
        assert_eq!(call.name, "aggregate");
        assert_eq!(call.arguments["target"], "Fine");
        // same text without tools falls through to no rule at all
        let plain = ChatRequest::new("m", vec![Message::user("average Fine please")]);
        assert!(matches!(gw.complete(&plain), Err(LlmError::Unavailable(_))));
    }

    #[test]
    fn deterministic() {
        let gw = Gateway::mock(MockRules::new(vec![MockRule::content("x", "y")]));
        let req = ChatRequest::new("m", vec![Message::system("s"), Message::user("x")]);
        assert_eq!(gw.complete(&req).unwrap(), gw.complete(&req).unwrap());
    }

    #[test]
    fn bad_regex_is_reported() {
        assert!(MockBackend::try_new(MockRules::new(vec![MockRule::content("(", "y")])).is_err());
    }
}
