use std::collections::HashMap;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

/// Exact tokenizers plug in here.
pub trait Tokenizer: Send + Sync {
    fn count(&self, text: &str) -> usize;
}

/// `ceil(chars / chars_per_token)` over Unicode scalar values.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CharRatioTokenizer {
    pub chars_per_token: f64,
}

impl Default for CharRatioTokenizer {
    fn default() -> Self {
        CharRatioTokenizer { chars_per_token: 4.0 }
    }
}

impl Tokenizer for CharRatioTokenizer {
    fn count(&self, text: &str) -> usize {
        let chars = text.chars().count();
        if chars == 0 {
            return 0;
        }
        (chars as f64 / self.chars_per_token).ceil() as usize
    }
}

/// Per-model context window and tokenizer settings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelInfo {
    pub context_window: usize,
    #[serde(default)]
    pub chars_per_token: Option<f64>,
}

/// Deterministic token estimation with per-model overrides.
#[derive(Clone)]
pub struct TokenEstimator {
    models: HashMap<String, ModelInfo>,
    exact: HashMap<String, Arc<dyn Tokenizer>>,
    default_context: usize,
}

impl Default for TokenEstimator {
    fn default() -> Self {
        let mut models = HashMap::new();
        for (id, ctx) in [
            ("gpt-3.5-turbo-16k-0613", 16_385),
            ("gpt-3.5-turbo-0613", 4_096),
            ("gpt-4-0613", 8_192),
        ] {
            models.insert(
                id.to_string(),
                ModelInfo {
                    context_window: ctx,
                    chars_per_token: None,
                },
            );
        }
        TokenEstimator {
            models,
            exact: HashMap::new(),
            default_context: 16_385,
        }
    }
}

impl TokenEstimator {
    pub fn with_model(mut self, model_id: &str, info: ModelInfo) -> Self {
        self.models.insert(model_id.to_string(), info);
        self
    }

    pub fn with_tokenizer(mut self, model_id: &str, tokenizer: Arc<dyn Tokenizer>) -> Self {
        self.exact.insert(model_id.to_string(), tokenizer);
        self
    }

    pub fn estimate(&self, text: &str, model_id: &str) -> usize {
        if let Some(tok) = self.exact.get(model_id) {
            return tok.count(text);
        }
        let ratio = self
            .models
            .get(model_id)
            .and_then(|m| m.chars_per_token)
            .unwrap_or(4.0);
        CharRatioTokenizer {
            chars_per_token: ratio,
        }
        .count(text)
    }

    pub fn context_window(&self, model_id: &str) -> usize {
        self.models
            .get(model_id)
            .map_or(self.default_context, |m| m.context_window)
    }
}

/// Default estimator: `ceil(chars / 4)`.
pub fn estimate_tokens(text: &str) -> usize {
    CharRatioTokenizer::default().count(text)
}
