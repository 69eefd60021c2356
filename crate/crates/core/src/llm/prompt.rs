//! Few-shot IE prompt rendering and search-term extraction.

use std::collections::HashSet;

use thiserror::Error;
use unicode_segmentation::UnicodeSegmentation;

use super::{ChatRequest, Gateway, LlmError, Message, Purpose};
use crate::model::{Language, Ontology, Parse, SchemaError};

pub const IE_SYSTEM_PREAMBLE: &str = "You are a helpful assistant for IE tasks.";

/// Output budget reserved when checking a labeling prompt against the window.
const IE_OUTPUT_BUDGET: usize = 512;
const MAX_SEARCH_TERMS: usize = 8;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum PromptError {
    #[error("at least one few-shot example is required")]
    NoShots,
    #[error("few-shot example {index} does not fit the ontology: {source}")]
    InvalidShot { index: usize, source: SchemaError },
    #[error("prompt needs {needed} tokens but the context window is {window} (over by {overflow})")]
    ContextOverflow {
        needed: usize,
        window: usize,
        overflow: usize,
    },
    #[error("empty query")]
    EmptyQuery,
}

/// One demonstration pair: input text and its gold parse.
#[derive(Debug, Clone, PartialEq)]
pub struct FewShot {
    pub input: String,
    pub parse: Parse,
}

fn format_line(ontology: &Ontology) -> String {
    ontology
        .field_names()
        .map(|f| format!("{f}: [value1, value2, ...]"))
        .collect::<Vec<_>>()
        .join(", ")
}

fn instruction(ontology: &Ontology) -> String {
    let names = ontology.field_names().collect::<Vec<_>>().join(", ");
    let format = format_line(ontology);
    match ontology.language {
        Language::En => format!(
            "{IE_SYSTEM_PREAMBLE} After reading the following text, extract information about \
             {names} in the following JSON format. '{format}'."
        ),
        Language::Ko => format!(
            "당신은 정보 추출(IE) 작업을 돕는 유용한 어시스턴트입니다. 다음 글을 읽고 {names}에 대한 \
             정보를 다음 JSON 형식으로 추출하세요. '{format}'."
        ),
    }
}

fn task_description(ontology: &Ontology) -> String {
    let mut lines = Vec::new();
    if !ontology.task_description.trim().is_empty() {
        lines.push(ontology.task_description.trim().to_string());
    }
    for f in &ontology.fields {
        if !f.description.trim().is_empty() {
            lines.push(format!("- {}: {}", f.name, f.description.trim()));
        }
    }
    lines.join("\n")
}

/// Renders the labeling prompt: the instruction naming every field and the
/// answer format, then the task description, then one user/assistant turn
/// per demonstration (input text, parse), then the target input text.
pub fn build_ie_prompt(
    gateway: &Gateway,
    ontology: &Ontology,
    shots: &[FewShot],
    target: &str,
) -> Result<ChatRequest, PromptError> {
    if shots.is_empty() {
        return Err(PromptError::NoShots);
    }
    for (index, shot) in shots.iter().enumerate() {
        ontology
            .validate(&shot.parse)
            .map_err(|source| PromptError::InvalidShot { index, source })?;
    }
    let mut system = instruction(ontology);
    let task = task_description(ontology);
    if !task.is_empty() {
        system.push('\n');
        system.push_str(&task);
    }
    let mut messages = vec![Message::system(system)];
    for shot in shots {
        messages.push(Message::user(shot.input.clone()));
        messages.push(Message::assistant(shot.parse.to_canonical_json(ontology)));
    }
    messages.push(Message::user(target.to_string()));
    let mut req = ChatRequest::new(gateway.model(Purpose::Labeling), messages);
    req.max_output_tokens = Some(IE_OUTPUT_BUDGET);
    let window = gateway.estimator.context_window(&req.model_id);
    let needed = req.estimate_input_tokens(&gateway.estimator) + IE_OUTPUT_BUDGET;
    if needed > window {
        return Err(PromptError::ContextOverflow {
            needed,
            window,
            overflow: needed - window,
        });
    }
    Ok(req)
}

/// Appended to the target text when re-prompting after an unusable answer.
pub fn format_reminder(ontology: &Ontology) -> String {
    format!(
        "\n\nAnswer with a single JSON object only, in the format '{}'.",
        format_line(ontology)
    )
}

const STOPWORDS: &[&str] = &[
    "a", "about", "all", "an", "and", "any", "are", "as", "at", "be", "by", "can", "could", "did",
    "do", "does", "find", "for", "from", "get", "give", "had", "has", "have", "how", "i", "in",
    "is", "it", "its", "list", "me", "my", "of", "on", "or", "our", "please", "show", "tell",
    "that", "the", "their", "them", "there", "these", "this", "those", "to", "us", "was", "we",
    "were", "what", "when", "where", "which", "who", "why", "with", "would", "you",
];

fn push_unique(out: &mut Vec<String>, seen: &mut HashSet<String>, term: String) {
    if out.len() < MAX_SEARCH_TERMS && !term.is_empty() && seen.insert(term.to_lowercase()) {
        out.push(term);
    }
}

/// Stopword-filtered words of the query itself, deduplicated.
pub fn fallback_search_terms(query: &str) -> Vec<String> {
    let mut out = Vec::new();
    let mut seen = HashSet::new();
    for word in query.unicode_words() {
        if !STOPWORDS.contains(&word.to_lowercase().as_str()) {
            push_unique(&mut out, &mut seen, word.to_string());
        }
    }
    out
}

fn parse_term_list(content: &str) -> Option<Vec<String>> {
    let start = content.find('[')?;
    let end = content.rfind(']')?;
    let arr: Vec<serde_json::Value> = serde_json::from_str(content.get(start..=end)?).ok()?;
    Some(
        arr.iter()
            .filter_map(|v| v.as_str())
            .map(|s| s.split_whitespace().collect::<Vec<_>>().join(" "))
            .map(|s| s.trim_matches(|c: char| c == '"' || c == '\'').to_string())
            .collect(),
    )
}

/// Asks the LLM for search keywords; falls back to the query's own words
/// whenever the LLM fails or answers unusably.
pub fn extract_search_terms(gateway: &Gateway, user_query: &str) -> Result<Vec<String>, PromptError> {
    if user_query.trim().is_empty() {
        return Err(PromptError::EmptyQuery);
    }
    let req = ChatRequest::new(
        gateway.model(Purpose::SearchTerms),
        vec![
            Message::system(
                "Extract the keywords or short phrases from the user's request that should be \
                 sent to a full-text search engine. Answer with a JSON array of strings.",
            ),
            Message::user(user_query.to_string()),
        ],
    );
    let answer: Result<Vec<String>, LlmError> = gateway.complete(&req).and_then(|r| {
        r.content()
            .and_then(parse_term_list)
            .ok_or_else(|| LlmError::InvalidRequest("unusable answer".into()))
    });
    let mut out = Vec::new();
    let mut seen = HashSet::new();
    if let Ok(terms) = answer {
        for t in terms {
            push_unique(&mut out, &mut seen, t);
        }
    }
    if out.is_empty() {
        out = fallback_search_terms(user_query);
    }
    Ok(out)
}
