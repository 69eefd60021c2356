//! Corpus structuring engine: few-shot LLM labeling distilled into a small
//! trainable extractor, field-level evaluation, cost modeling and
//! tool-routed statistical analysis over the structured corpus.

pub mod model;
pub mod store;
pub mod search;
pub mod llm;
pub mod eval;
pub mod labeler;
pub mod synth;
pub mod engine;
pub mod cost;
pub mod analysis;
