//! Extractors and batch structuring of a corpus.
//!
//! Three interchangeable extractor kinds: few-shot prompting of the LLM, a
//! distilled model served by the external trainer, and a regex table.

pub mod jobs;
pub mod stub;

use std::collections::BTreeMap;
use std::fs;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::{Arc, Mutex};
use std::time::Instant;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use regex::Regex;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::eval::normalize;
use crate::labeler::{
    human_seeds, label_one, parse_llm_output, select_fewshot_examples, write_atomic, AugmentationConfig, DocOutcome,
    LabelError,
};
use crate::llm::{FewShot, Gateway, Usage};
use crate::model::{Document, Ontology, Parse};
use crate::store::{Store, StoreError};
pub use jobs::{
    CommandShim, Hyperparams, InferRow, JobManager, JobProgress, JobRecord, JobState, JobStatusView, PredRow,
    ShimAction, ShimError, ShimRunner, ShimStatus, TrainConfig,
};

#[derive(Debug, Error)]
pub enum EngineError {
    #[error("{kind} {id} not found")]
    NotFound { kind: &'static str, id: String },
    #[error("{0}")]
    Precondition(String),
    #[error("invalid extractor: {0}")]
    InvalidSpec(String),
    #[error("trainer error: {0}")]
    Shim(String),
    #[error("every one of {failures} documents failed; first error: {first_error}")]
    BatchFailed { failures: usize, first_error: String },
    #[error(transparent)]
    Label(#[from] LabelError),
    #[error(transparent)]
    Store(#[from] StoreError),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExtractorKind {
    LlmFewshot,
    Distilled,
    PatternTable,
}

/// Names an extractor. `model_ref` is the LLM model id (empty for the
/// routed default), the training job id, or a rule-table path; pattern
/// tables may also be given inline.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExtractorSpec {
    pub kind: ExtractorKind,
    #[serde(default)]
    pub model_ref: String,
    #[serde(default)]
    pub ontology_version: u32,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub patterns: BTreeMap<String, String>,
    /// Few-shot examples per prompt for `llm_fewshot`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub shots: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
}

impl ExtractorSpec {
    pub fn new(kind: ExtractorKind, model_ref: &str) -> Self {
        ExtractorSpec {
            kind,
            model_ref: model_ref.to_string(),
            ontology_version: 0,
            patterns: BTreeMap::new(),
            shots: None,
            seed: None,
        }
    }

    pub fn pattern_table(patterns: &[(&str, &str)]) -> Self {
        let mut spec = ExtractorSpec::new(ExtractorKind::PatternTable, "");
        spec.patterns = patterns.iter().map(|(f, p)| (f.to_string(), p.to_string())).collect();
        spec
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Extraction {
    pub result: Result<Parse, String>,
    pub usage: Usage,
}

impl Extraction {
    fn ok(parse: Parse) -> Self {
        Extraction { result: Ok(parse), usage: Usage::default() }
    }

    fn err(message: impl Into<String>) -> Self {
        Extraction { result: Err(message.into()), usage: Usage::default() }
    }
}

pub trait Extractor: Send + Sync {
    fn spec(&self) -> &ExtractorSpec;

    fn extract_one(&self, doc: &Document) -> Extraction;

    /// Results in input order; work is spread over `workers` threads and a
    /// panicking document only fails itself.
    fn extract_many(&self, docs: &[Document], workers: usize) -> Vec<Extraction> {
        let slots: Vec<Mutex<Option<Extraction>>> = docs.iter().map(|_| Mutex::new(None)).collect();
        let next = AtomicUsize::new(0);
        std::thread::scope(|s| {
            for _ in 0..workers.clamp(1, docs.len().max(1)) {
                s.spawn(|| loop {
                    let i = next.fetch_add(1, Ordering::Relaxed);
                    let Some(doc) = docs.get(i) else { break };
                    let out = catch_unwind(AssertUnwindSafe(|| self.extract_one(doc)))
                        .unwrap_or_else(|_| Extraction::err("extractor panicked"));
                    *slots[i].lock().unwrap() = Some(out);
                });
            }
        });
        slots.into_iter().map(|m| m.into_inner().unwrap().expect("every slot filled")).collect()
    }
}

pub struct PatternTableExtractor {
    spec: ExtractorSpec,
    ontology: Ontology,
    rules: Vec<(String, Regex)>,
}

impl PatternTableExtractor {
    pub fn new(spec: ExtractorSpec, ontology: Ontology) -> Result<Self, EngineError> {
        let mut patterns = spec.patterns.clone();
        if patterns.is_empty() && !spec.model_ref.is_empty() {
            let text = fs::read_to_string(&spec.model_ref)
                .map_err(|e| EngineError::InvalidSpec(format!("{}: {e}", spec.model_ref)))?;
            patterns = serde_json::from_str(&text).map_err(|e| EngineError::InvalidSpec(format!("{}: {e}", spec.model_ref)))?;
        }
        if patterns.is_empty() {
            return Err(EngineError::InvalidSpec("pattern table has no rules".into()));
        }
        let mut rules = Vec::new();
        for (field, pat) in patterns {
            if ontology.field(&field).is_none() {
                return Err(EngineError::InvalidSpec(format!("rule for unknown field {field}")));
            }
            let re = Regex::new(&pat).map_err(|e| EngineError::InvalidSpec(format!("{field}: {e}")))?;
            rules.push((field, re));
        }
        Ok(PatternTableExtractor { spec, ontology, rules })
    }
}

impl Extractor for PatternTableExtractor {
    fn spec(&self) -> &ExtractorSpec {
        &self.spec
    }

    fn extract_one(&self, doc: &Document) -> Extraction {
        let mut parse = Parse::new();
        for (field, re) in &self.rules {
            let multi = self.ontology.field(field).is_some_and(|f| f.multi_valued);
            for caps in re.captures_iter(&doc.body) {
                let v = caps.name("value").or_else(|| caps.get(0)).unwrap().as_str().trim().to_string();
                if v.is_empty() || parse.get(field).contains(&v) {
                    continue;
                }
                if !multi && !parse.get(field).is_empty() {
                    break;
                }
                parse.push(field, v);
            }
        }
        Extraction::ok(parse)
    }
}

pub struct LlmFewShotExtractor {
    spec: ExtractorSpec,
    gateway: Gateway,
    ontology: Ontology,
    shots: Vec<FewShot>,
    cfg: AugmentationConfig,
}

impl LlmFewShotExtractor {
    /// Uses the corpus's human labels as few-shot examples.
    pub fn new(spec: ExtractorSpec, store: &Store, corpus_id: &str, gateway: Gateway) -> Result<Self, EngineError> {
        let ontology = store.ontology(corpus_id)?;
        let seeds = human_seeds(store, corpus_id)?;
        if seeds.is_empty() {
            return Err(EngineError::Precondition("llm_fewshot extraction needs human seed labels".into()));
        }
        let k = spec.shots.unwrap_or(4).clamp(1, seeds.len());
        let mut rng = ChaCha8Rng::seed_from_u64(spec.seed.unwrap_or(0));
        let picked = select_fewshot_examples(&seeds, &ontology, k, &mut rng)?;
        let shots = picked
            .examples
            .iter()
            .map(|ex| Ok(FewShot { input: store.document(corpus_id, &ex.doc_id)?.body, parse: ex.parse.clone() }))
            .collect::<Result<Vec<_>, StoreError>>()?;
        Ok(Self::with_shots(spec, gateway, ontology, shots))
    }

    pub fn with_shots(spec: ExtractorSpec, gateway: Gateway, ontology: Ontology, shots: Vec<FewShot>) -> Self {
        let mut cfg = AugmentationConfig::new(0);
        if !spec.model_ref.is_empty() {
            cfg.labeling_model_id = Some(spec.model_ref.clone());
        }
        LlmFewShotExtractor { spec, gateway, ontology, shots, cfg }
    }
}

impl Extractor for LlmFewShotExtractor {
    fn spec(&self) -> &ExtractorSpec {
        &self.spec
    }

    fn extract_one(&self, doc: &Document) -> Extraction {
        if self.shots.is_empty() {
            return Extraction::err("no few-shot examples");
        }
        let r = label_one(&self.gateway, &self.ontology, &self.shots, doc, &self.cfg);
        let result = match r.outcome {
            DocOutcome::Labeled(p) => Ok(p),
            DocOutcome::Discarded => Err("LLM output could not be parsed against the ontology".to_string()),
            DocOutcome::Failed(e) => Err(e.to_string()),
        };
        Extraction { result, usage: r.usage }
    }
}

pub struct DistilledExtractor {
    spec: ExtractorSpec,
    jobs: Arc<JobManager>,
    ontology: Ontology,
}

impl DistilledExtractor {
    pub fn new(spec: ExtractorSpec, jobs: Arc<JobManager>, ontology: Ontology) -> Result<Self, EngineError> {
        let rec = jobs.job(&spec.model_ref)?;
        if rec.state != JobState::Done {
            return Err(EngineError::Precondition(format!(
                "job {} is {:?}; distilled extraction needs a finished checkpoint",
                rec.job_id, rec.state
            )));
        }
        Ok(DistilledExtractor { spec, jobs, ontology })
    }
}

impl Extractor for DistilledExtractor {
    fn spec(&self) -> &ExtractorSpec {
        &self.spec
    }

    fn extract_one(&self, doc: &Document) -> Extraction {
        self.extract_many(std::slice::from_ref(doc), 1).pop().unwrap()
    }

    /// One trainer invocation for the whole batch.
    fn extract_many(&self, docs: &[Document], _workers: usize) -> Vec<Extraction> {
        let rows: Vec<InferRow> = docs
            .iter()
            .map(|d| InferRow { doc_id: d.doc_id.clone(), input: d.body.clone() })
            .collect();
        let preds = match self.jobs.infer(&self.spec.model_ref, &rows) {
            Ok(p) => p,
            Err(e) => return docs.iter().map(|_| Extraction::err(e.to_string())).collect(),
        };
        let by_id: BTreeMap<&str, &str> = preds.iter().map(|p| (p.doc_id.as_str(), p.target.as_str())).collect();
        docs.iter()
            .map(|d| match by_id.get(d.doc_id.as_str()) {
                None => Extraction::err("trainer returned no prediction"),
                Some(t) => match parse_llm_output(t, &self.ontology) {
                    Ok(p) => Extraction::ok(p),
                    Err(e) => Extraction::err(e.to_string()),
                },
            })
            .collect()
    }
}

/// Builds the extractor a spec names.
pub fn build_extractor(
    spec: &ExtractorSpec,
    store: &Store,
    corpus_id: &str,
    gateway: &Gateway,
    jobs: &Arc<JobManager>,
) -> Result<Box<dyn Extractor>, EngineError> {
    let ontology = store.ontology(corpus_id)?;
    let mut spec = spec.clone();
    spec.ontology_version = ontology.version;
    Ok(match spec.kind {
        ExtractorKind::PatternTable => Box::new(PatternTableExtractor::new(spec, ontology)?),
        ExtractorKind::LlmFewshot => Box::new(LlmFewShotExtractor::new(spec, store, corpus_id, gateway.clone())?),
        ExtractorKind::Distilled => Box::new(DistilledExtractor::new(spec, jobs.clone(), ontology)?),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StructuredRecord {
    pub doc_id: String,
    pub parse: Parse,
    pub extractor: ExtractorKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub confidence: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

/// One table row: normalized values per field.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TableRow {
    pub doc_id: String,
    pub values: BTreeMap<String, Vec<String>>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct BatchReport {
    pub docs: usize,
    pub failures: usize,
    pub wall_ms: u64,
    pub tokens: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StructuredTable {
    pub table_id: String,
    pub corpus_id: String,
    pub ontology: Ontology,
    pub extractor: ExtractorSpec,
    pub records: Vec<StructuredRecord>,
    pub rows: Vec<TableRow>,
    pub report: BatchReport,
}

impl StructuredTable {
    /// Sorts records by doc_id and derives normalized rows from them.
    pub fn new(
        table_id: &str,
        corpus_id: &str,
        ontology: Ontology,
        extractor: ExtractorSpec,
        mut records: Vec<StructuredRecord>,
        report: BatchReport,
    ) -> Self {
        records.sort_by(|a, b| a.doc_id.cmp(&b.doc_id));
        let rows = records
            .iter()
            .map(|r| TableRow {
                doc_id: r.doc_id.clone(),
                values: r
                    .parse
                    .iter()
                    .filter_map(|(f, vs)| {
                        let kind = ontology.field(f)?.kind;
                        Some((f.to_string(), vs.iter().map(|v| normalize(v, kind)).collect()))
                    })
                    .collect(),
            })
            .collect();
        StructuredTable {
            table_id: table_id.to_string(),
            corpus_id: corpus_id.to_string(),
            ontology,
            extractor,
            records,
            rows,
            report,
        }
    }

    pub fn predictions(&self) -> BTreeMap<String, Parse> {
        self.records.iter().map(|r| (r.doc_id.clone(), r.parse.clone())).collect()
    }

    pub fn save(&self, store: &Store) -> Result<(), EngineError> {
        let dir = store.artifact_dir("tables");
        fs::create_dir_all(&dir)?;
        write_atomic(&dir.join(format!("{}.json", self.table_id)), &serde_json::to_vec(self).unwrap())?;
        Ok(())
    }

    pub fn load(store: &Store, table_id: &str) -> Result<Self, EngineError> {
        let path = store.artifact_dir("tables").join(format!("{table_id}.json"));
        let text = fs::read_to_string(path).map_err(|_| EngineError::NotFound { kind: "table", id: table_id.to_string() })?;
        serde_json::from_str(&text).map_err(|e| EngineError::Precondition(format!("corrupt table {table_id}: {e}")))
    }

    /// Latest table for a corpus, by creation order.
    pub fn latest(store: &Store, corpus_id: &str) -> Result<Self, EngineError> {
        let dir = store.artifact_dir("tables");
        let prefix = format!("{corpus_id}-t");
        let latest = fs::read_dir(&dir)
            .into_iter()
            .flatten()
            .filter_map(|e| e.ok()?.file_name().to_str()?.strip_suffix(".json").map(str::to_string))
            .filter_map(|name| Some((name.strip_prefix(&prefix)?.parse::<u64>().ok()?, name)))
            .max();
        match latest {
            Some((_, id)) => Self::load(store, &id),
            None => Err(EngineError::NotFound { kind: "table for corpus", id: corpus_id.to_string() }),
        }
    }
}

fn next_table_id(store: &Store, corpus_id: &str) -> String {
    let dir = store.artifact_dir("tables");
    (1..)
        .map(|n| format!("{corpus_id}-t{n}"))
        .find(|id| !dir.join(format!("{id}.json")).exists())
        .unwrap()
}

/// Which documents a batch covers; empty means all.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct DocFilter {
    #[serde(default)]
    pub doc_ids: Option<Vec<String>>,
    /// Exact matches on source metadata.
    #[serde(default)]
    pub meta: BTreeMap<String, String>,
}

impl DocFilter {
    pub fn matches(&self, doc: &Document) -> bool {
        self.doc_ids.as_ref().is_none_or(|ids| ids.contains(&doc.doc_id))
            && self.meta.iter().all(|(k, v)| doc.source_meta.get(k) == Some(v))
    }
}

/// Runs an extractor over the matching documents and persists the result as
/// a structured table. Individual failures become empty records with an
/// error; only a batch where every document fails is an error.
pub fn extract_batch(
    store: &Store,
    extractor: &dyn Extractor,
    corpus_id: &str,
    filter: &DocFilter,
    workers: usize,
) -> Result<StructuredTable, EngineError> {
    let started = Instant::now();
    let ontology = store.ontology(corpus_id)?;
    let docs: Vec<Document> = store.documents(corpus_id)?.into_iter().filter(|d| filter.matches(d)).collect();
    let results = extractor.extract_many(&docs, workers);
    let kind = extractor.spec().kind;
    let mut report = BatchReport { docs: docs.len(), ..Default::default() };
    let mut first_error = None;
    let records: Vec<StructuredRecord> = docs
        .iter()
        .zip(results)
        .map(|(doc, ex)| {
            report.tokens += ex.usage.input_tokens + ex.usage.output_tokens;
            let (parse, error) = match ex.result.and_then(|p| ontology.validate(&p).map(|_| p).map_err(|e| e.to_string())) {
                Ok(p) => (p, None),
                Err(e) => {
                    report.failures += 1;
                    first_error.get_or_insert_with(|| format!("{}: {e}", doc.doc_id));
                    (Parse::new(), Some(e))
                }
            };
            StructuredRecord { doc_id: doc.doc_id.clone(), parse, extractor: kind, confidence: None, error }
        })
        .collect();
    if report.docs > 0 && report.failures == report.docs {
        return Err(EngineError::BatchFailed { failures: report.failures, first_error: first_error.unwrap_or_default() });
    }
    report.wall_ms = started.elapsed().as_millis() as u64;
    let mut spec = extractor.spec().clone();
    spec.ontology_version = ontology.version;
    let table = StructuredTable::new(&next_table_id(store, corpus_id), corpus_id, ontology, spec, records, report);
    table.save(store)?;
    Ok(table)
}
