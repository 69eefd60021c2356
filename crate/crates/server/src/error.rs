//! One error shape for every endpoint and CLI command: `{code, message, detail}`.

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use structa_core::analysis::AnalysisError;
use structa_core::cost::CostError;
use structa_core::engine::EngineError;
use structa_core::eval::EvalError;
use structa_core::labeler::LabelError;
use structa_core::llm::LlmError;
use structa_core::search::SearchError;
use structa_core::store::StoreError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ApiError {
    #[serde(skip)]
    pub status: u16,
    pub code: String,
    pub message: String,
    #[serde(default)]
    pub detail: Box<Value>,
}

impl ApiError {
    pub fn new(status: u16, code: &str, message: impl Into<String>) -> Self {
        ApiError { status, code: code.into(), message: message.into(), detail: Box::new(Value::Null) }
    }

    pub fn with_detail(mut self, detail: Value) -> Self {
        self.detail = Box::new(detail);
        self
    }

    pub fn bad_request(message: impl Into<String>) -> Self {
        Self::new(400, "bad_request", message)
    }

    pub fn not_found(kind: &str, id: &str) -> Self {
        Self::new(404, "not_found", format!("{kind} not found: {id}")).with_detail(json!({"kind": kind, "id": id}))
    }

    pub fn conflict(code: &str, message: impl Into<String>) -> Self {
        Self::new(409, code, message)
    }

    pub fn invalid(message: impl Into<String>) -> Self {
        Self::new(422, "validation", message)
    }

    pub fn internal(message: impl Into<String>) -> Self {
        Self::new(500, "internal", message)
    }
}

impl std::fmt::Display for ApiError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}: {}", self.code, self.message)
    }
}

impl std::error::Error for ApiError {}

impl From<StoreError> for ApiError {
    fn from(e: StoreError) -> Self {
        let msg = e.to_string();
        match e {
            StoreError::NotFound { kind, id } => ApiError::not_found(kind, &id),
            StoreError::Validation(_) => ApiError::invalid(msg),
            StoreError::NoOntology(_) => ApiError::conflict("no_ontology", msg),
            StoreError::LastField(_) => ApiError::conflict("last_field", msg),
            StoreError::EmptyIngest(report) => {
                ApiError::invalid(msg).with_detail(serde_json::to_value(report).unwrap_or_default())
            }
            StoreError::Locked(_) => ApiError::conflict("store_locked", msg),
            StoreError::Io(_) | StoreError::Corrupt(_) => ApiError::internal(msg),
        }
    }
}

impl From<SearchError> for ApiError {
    fn from(e: SearchError) -> Self {
        let msg = e.to_string();
        match e {
            SearchError::Store(s) => s.into(),
            SearchError::EmptyCorpus => ApiError::conflict("empty_corpus", msg),
            SearchError::InvalidQuery(_) => ApiError::invalid(msg),
            SearchError::Format(_) | SearchError::Io(_) => ApiError::internal(msg),
        }
    }
}

impl From<LlmError> for ApiError {
    fn from(e: LlmError) -> Self {
        ApiError::new(502, "llm_error", e.to_string())
    }
}

impl From<LabelError> for ApiError {
    fn from(e: LabelError) -> Self {
        let msg = e.to_string();
        match e {
            LabelError::NoSeeds => ApiError::conflict("no_seeds", msg),
            LabelError::TooFewSeeds { k, available } => {
                ApiError::conflict("too_few_seeds", msg).with_detail(json!({"k": k, "available": available}))
            }
            LabelError::Config(_) | LabelError::Prompt(_) => ApiError::invalid(msg),
            LabelError::DatasetNotFound(id) => ApiError::not_found("dataset", &id),
            LabelError::Store(s) => s.into(),
            LabelError::Io(_) => ApiError::internal(msg),
        }
    }
}

impl From<EngineError> for ApiError {
    fn from(e: EngineError) -> Self {
        let msg = e.to_string();
        match e {
            EngineError::NotFound { kind, id } => ApiError::not_found(kind, &id),
            EngineError::Precondition(_) => ApiError::conflict("precondition", msg),
            EngineError::InvalidSpec(_) => ApiError::invalid(msg),
            EngineError::Shim(_) => ApiError::new(502, "trainer_error", msg),
            EngineError::BatchFailed { failures, ref first_error } => ApiError::new(422, "batch_failed", msg.clone())
                .with_detail(json!({"failures": failures, "first_error": first_error})),
            EngineError::Label(l) => l.into(),
            EngineError::Store(s) => s.into(),
            EngineError::Io(_) => ApiError::internal(msg),
        }
    }
}

impl From<EvalError> for ApiError {
    fn from(e: EvalError) -> Self {
        let msg = e.to_string();
        match e {
            EvalError::UnknownField { .. } => ApiError::invalid(msg),
            EvalError::Csv(_) | EvalError::Io(_) => ApiError::internal(msg),
        }
    }
}

impl From<CostError> for ApiError {
    fn from(e: CostError) -> Self {
        let msg = e.to_string();
        match e {
            CostError::Io(_) => ApiError::internal(msg),
            _ => ApiError::invalid(msg),
        }
    }
}

impl From<AnalysisError> for ApiError {
    fn from(e: AnalysisError) -> Self {
        let msg = e.to_string();
        match e {
            AnalysisError::NoTable => ApiError::conflict("no_table", msg),
            AnalysisError::Routing(_) => ApiError::new(422, "routing", msg),
            AnalysisError::Llm(l) => l.into(),
            AnalysisError::Search(s) => s.into(),
            AnalysisError::Store(s) => s.into(),
            AnalysisError::Engine(en) => en.into(),
            _ => ApiError::invalid(msg),
        }
    }
}

impl From<serde_json::Error> for ApiError {
    fn from(e: serde_json::Error) -> Self {
        ApiError::bad_request(format!("malformed JSON: {e}"))
    }
}

impl From<std::io::Error> for ApiError {
    fn from(e: std::io::Error) -> Self {
        ApiError::internal(format!("io error: {e}"))
    }
}
