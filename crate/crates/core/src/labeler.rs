//! Expands a few human seed labels into an LLM-labeled training set.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fs;
use std::io::{BufRead, BufReader, Write};
use std::path::PathBuf;
use std::sync::LazyLock;
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use regex::Regex;
use serde::{Deserialize, Serialize};
use serde_json::Value;
use thiserror::Error;

use crate::llm::{build_ie_prompt, format_reminder, FewShot, Gateway, LlmError, PromptError, Purpose, Usage};
use crate::model::{canonical_field_name, Document, LabeledExample, Ontology, Parse, Provenance, SchemaError};
use crate::store::{Store, StoreError};

#[derive(Debug, Error)]
pub enum LabelError {
    #[error("no human seed labels: label at least one document first")]
    NoSeeds,
    #[error("cannot select {k} examples from {available} seeds")]
    TooFewSeeds { k: usize, available: usize },
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error(transparent)]
    Store(#[from] StoreError),
    #[error(transparent)]
    Prompt(#[from] PromptError),
    #[error("dataset {0} not found")]
    DatasetNotFound(String),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

/// An LLM answer that could not be turned into a valid parse.
#[derive(Debug, Clone, PartialEq, Error)]
#[error("unparseable extraction output: {reason}")]
pub struct ParseFailure {
    pub reason: String,
    pub raw: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AugmentationConfig {
    /// Total training examples wanted (human + LLM).
    pub n_target: usize,
    /// Few-shot examples per labeling request.
    #[serde(default = "default_shots")]
    pub n_seed_shots: usize,
    /// Overrides the gateway's labeling model.
    #[serde(default)]
    pub labeling_model_id: Option<String>,
    /// Re-prompts with a format reminder after an unusable answer.
    #[serde(default = "default_repairs")]
    pub max_repair_attempts: u32,
    #[serde(default)]
    pub seed: u64,
}

fn default_shots() -> usize {
    4
}

fn default_repairs() -> u32 {
    1
}

impl AugmentationConfig {
    pub fn new(n_target: usize) -> Self {
        AugmentationConfig {
            n_target,
            n_seed_shots: default_shots(),
            labeling_model_id: None,
            max_repair_attempts: default_repairs(),
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct LabelingReport {
    /// Documents sent for labeling.
    pub requested: usize,
    pub produced: usize,
    pub invalid_discarded: usize,
    /// Extra calls spent re-prompting after unusable answers.
    pub reprompts: usize,
    pub total_input_tokens: usize,
    pub total_output_tokens: usize,
    pub wall_ms: u64,
    pub shots_used: usize,
    /// None of the seeds covered every field.
    pub zero_coverage: bool,
    /// Set when a hard LLM failure stopped labeling early.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub aborted: Option<String>,
}

// ---------------------------------------------------------------------------
// Output parsing
// ---------------------------------------------------------------------------

static FENCE: LazyLock<Regex> = LazyLock::new(|| Regex::new(r"(?s)```(?:json)?\s*(.*?)```").unwrap());
static LIST_ENTRY: LazyLock<Regex> =
    LazyLock::new(|| Regex::new(r#"["']?([\p{L}\p{N}_\- ]+?)["']?\s*:\s*\[([^\]]*)\]"#).unwrap());

fn failure(reason: &str, raw: &str) -> ParseFailure {
    ParseFailure { reason: reason.to_string(), raw: raw.to_string() }
}

fn scalar_text(v: &Value) -> Option<Option<String>> {
    match v {
        Value::Null => Some(None),
        Value::String(s) => Some(Some(s.trim().to_string())),
        Value::Number(n) => Some(Some(n.to_string())),
        Value::Bool(b) => Some(Some(b.to_string())),
        _ => None,
    }
}

fn field_lookup(ontology: &Ontology) -> HashMap<String, String> {
    ontology
        .field_names()
        .map(|f| (f.to_lowercase(), f.to_string()))
        .collect()
}

fn from_object(obj: &serde_json::Map<String, Value>, ontology: &Ontology, raw: &str) -> Result<Parse, ParseFailure> {
    let names = field_lookup(ontology);
    let mut parse = Parse::new();
    for (key, value) in obj {
        // keys the ontology does not know are dropped
        let Some(field) = names.get(&canonical_field_name(key).to_lowercase()) else {
            continue;
        };
        let values: Vec<Value> = match value {
            Value::Array(items) => items.clone(),
            other => vec![other.clone()],
        };
        for v in values {
            match scalar_text(&v) {
                Some(Some(s)) if !s.is_empty() => parse.push(field, s),
                Some(_) => {}
                None => return Err(failure(&format!("nested value for {field}"), raw)),
            }
        }
    }
    Ok(parse)
}

fn from_list_lines(text: &str, ontology: &Ontology) -> Option<Parse> {
    let names = field_lookup(ontology);
    let mut parse = Parse::new();
    let mut matched = false;
    for caps in LIST_ENTRY.captures_iter(text) {
        let Some(field) = names.get(&canonical_field_name(&caps[1]).to_lowercase()) else {
            continue;
        };
        matched = true;
        for v in caps[2].split(',') {
            let v = v.trim().trim_matches(|c| c == '"' || c == '\'').trim();
            if !v.is_empty() {
                parse.push(field, v.to_string());
            }
        }
    }
    matched.then_some(parse)
}

/// Turns an LLM answer into a parse. Strict JSON is tried first, then the
/// outermost `{...}` span (dropping chatter around it), then `FIELD: [..]`
/// list syntax. Scalars are coerced to one-element lists and keys are
/// matched to ontology fields case-insensitively.
pub fn parse_llm_output(raw: &str, ontology: &Ontology) -> Result<Parse, ParseFailure> {
    let mut text = raw.trim().to_string();
    if let Some(caps) = FENCE.captures(&text) {
        text = caps[1].trim().to_string();
    }
    let object = serde_json::from_str::<Value>(&text).ok().or_else(|| {
        let start = text.find('{')?;
        let end = text.rfind('}')?;
        serde_json::from_str::<Value>(text.get(start..=end)?).ok()
    });
    let parse = match object {
        Some(Value::Object(obj)) => from_object(&obj, ontology, raw)?,
        Some(_) => return Err(failure("answer is not a JSON object", raw)),
        None => from_list_lines(&text, ontology).ok_or_else(|| failure("no JSON object found", raw))?,
    };
    ontology
        .validate(&parse)
        .map_err(|e: SchemaError| failure(&e.to_string(), raw))?;
    Ok(parse)
}

// ---------------------------------------------------------------------------
// Few-shot selection
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, PartialEq)]
pub struct Selection {
    /// Full-coverage examples first, then the randomly drawn remainder.
    pub examples: Vec<LabeledExample>,
    pub complete_count: usize,
    pub zero_coverage: bool,
}

/// Picks `k` seeds: `ceil(k/2)` whose parses cover every ontology field
/// (fewer if fewer exist), the rest drawn uniformly without replacement from
/// the other seeds. Complete seeds only fill the remainder when the partial
/// ones run out.
pub fn select_fewshot_examples(
    seeds: &[LabeledExample],
    ontology: &Ontology,
    k: usize,
    rng: &mut impl rand::Rng,
) -> Result<Selection, LabelError> {
    if k > seeds.len() {
        return Err(LabelError::TooFewSeeds { k, available: seeds.len() });
    }
    let (mut complete, mut partial): (Vec<&LabeledExample>, Vec<&LabeledExample>) =
        seeds.iter().partition(|s| s.parse.covers(ontology));
    complete.shuffle(rng);
    partial.shuffle(rng);
    let want = k.div_ceil(2).min(complete.len());
    let mut examples: Vec<LabeledExample> = complete.drain(..want).cloned().collect();
    let rest = k - want;
    let from_partial = rest.min(partial.len());
    examples.extend(partial.drain(..from_partial).cloned());
    examples.extend(complete.drain(..rest - from_partial).cloned());
    let complete_count = examples.iter().filter(|e| e.parse.covers(ontology)).count();
    Ok(Selection { examples, complete_count, zero_coverage: !seeds.iter().any(|s| s.parse.covers(ontology)) })
}

// ---------------------------------------------------------------------------
// Labeling
// ---------------------------------------------------------------------------

pub(crate) enum DocOutcome {
    Labeled(Parse),
    Discarded,
    Failed(LlmError),
}

pub(crate) struct DocResult {
    pub(crate) outcome: DocOutcome,
    pub(crate) usage: Usage,
    pub(crate) reprompts: usize,
}

pub(crate) fn label_one(gateway: &Gateway, ontology: &Ontology, shots: &[FewShot], doc: &Document, cfg: &AugmentationConfig) -> DocResult {
    let mut usage = Usage::default();
    let mut reprompts = 0;
    let mut n_shots = shots.len();
    let mut attempt = 0;
    loop {
        let target = if attempt == 0 {
            doc.body.clone()
        } else {
            format!("{}{}", doc.body, format_reminder(ontology))
        };
        let mut req = match build_ie_prompt(gateway, ontology, &shots[..n_shots], &target) {
            Ok(r) => r,
            Err(PromptError::ContextOverflow { .. }) if n_shots > 1 => {
                n_shots -= 1;
                continue;
            }
            Err(_) => return DocResult { outcome: DocOutcome::Discarded, usage, reprompts },
        };
        if let Some(model) = &cfg.labeling_model_id {
            req.model_id = model.clone();
        }
        let resp = match gateway.complete(&req) {
            Ok(r) => r,
            Err(LlmError::ContextLength { .. }) if n_shots > 1 => {
                n_shots -= 1;
                continue;
            }
            Err(LlmError::ContextLength { .. }) => {
                return DocResult { outcome: DocOutcome::Discarded, usage, reprompts }
            }
            Err(e) => return DocResult { outcome: DocOutcome::Failed(e), usage, reprompts },
        };
        usage += resp.usage;
        if let Some(parse) = resp.content().and_then(|c| parse_llm_output(c, ontology).ok()) {
            return DocResult { outcome: DocOutcome::Labeled(parse), usage, reprompts };
        }
        if attempt as u32 >= cfg.max_repair_attempts {
            return DocResult { outcome: DocOutcome::Discarded, usage, reprompts };
        }
        attempt += 1;
        reprompts += 1;
    }
}

/// Human seed labels usable for prompting: latest, not stale, sorted by doc_id.
pub fn human_seeds(store: &Store, corpus_id: &str) -> Result<Vec<LabeledExample>, StoreError> {
    Ok(store
        .labels(corpus_id, Some(Provenance::Human))?
        .into_iter()
        .filter(|l| !l.stale)
        .collect())
}

/// LLM-labels candidate documents (processed in doc_id order) until
/// `n_target - n_human` labels exist or candidates run out. Produced labels
/// are validated and persisted; a hard LLM failure stops early and is noted
/// in the report.
pub fn label_documents(
    store: &Store,
    gateway: &Gateway,
    corpus_id: &str,
    ontology: &Ontology,
    cfg: &AugmentationConfig,
    candidate_doc_ids: &[String],
) -> Result<(Vec<LabeledExample>, LabelingReport), LabelError> {
    let started = Instant::now();
    let seeds = human_seeds(store, corpus_id)?;
    if seeds.is_empty() {
        return Err(LabelError::NoSeeds);
    }
    if cfg.n_seed_shots == 0 {
        return Err(LabelError::Config("n_seed_shots must be at least 1".into()));
    }
    let needed = cfg.n_target.saturating_sub(seeds.len());
    let mut report = LabelingReport::default();
    let mut produced = Vec::new();
    if needed == 0 {
        return Ok((produced, report));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let k = cfg.n_seed_shots.min(seeds.len());
    let selection = select_fewshot_examples(&seeds, ontology, k, &mut rng)?;
    report.shots_used = k;
    report.zero_coverage = selection.zero_coverage;
    let shots: Vec<FewShot> = selection
        .examples
        .iter()
        .map(|ex| Ok(FewShot { input: store.document(corpus_id, &ex.doc_id)?.body, parse: ex.parse.clone() }))
        .collect::<Result<_, StoreError>>()?;

    let labeled: HashSet<&str> = seeds.iter().map(|s| s.doc_id.as_str()).collect();
    let mut candidates: Vec<&String> = candidate_doc_ids.iter().filter(|d| !labeled.contains(d.as_str())).collect();
    candidates.sort();
    candidates.dedup();
    let model = cfg
        .labeling_model_id
        .clone()
        .unwrap_or_else(|| gateway.model(Purpose::Labeling).to_string());

    let mut next = 0;
    'outer: while produced.len() < needed && next < candidates.len() {
        let batch = (needed - produced.len()).min(gateway.parallelism()).min(candidates.len() - next);
        let docs: Vec<Document> = candidates[next..next + batch]
            .iter()
            .map(|id| store.document(corpus_id, id))
            .collect::<Result<_, _>>()?;
        next += batch;
        let results: Vec<DocResult> = std::thread::scope(|s| {
            let handles: Vec<_> = docs
                .iter()
                .map(|doc| s.spawn(|| label_one(gateway, ontology, &shots, doc, cfg)))
                .collect();
            handles.into_iter().map(|h| h.join().expect("labeling worker panicked")).collect()
        });
        for (doc, result) in docs.iter().zip(results) {
            report.total_input_tokens += result.usage.input_tokens;
            report.total_output_tokens += result.usage.output_tokens;
            report.reprompts += result.reprompts;
            report.requested += 1;
            match result.outcome {
                DocOutcome::Labeled(parse) => {
                    let ex = store.upsert_label(corpus_id, &doc.doc_id, parse, Provenance::Llm, &model)?;
                    produced.push(ex);
                    report.produced += 1;
                }
                DocOutcome::Discarded => report.invalid_discarded += 1,
                DocOutcome::Failed(e) => {
                    report.aborted = Some(e.to_string());
                    break 'outer;
                }
            }
        }
    }
    report.wall_ms = started.elapsed().as_millis() as u64;
    Ok((produced, report))
}

// ---------------------------------------------------------------------------
// Training-set artifacts
// ---------------------------------------------------------------------------

/// One line of a training-set artifact.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingRow {
    pub doc_id: String,
    pub input: String,
    /// Canonical parse JSON.
    pub target: String,
    pub provenance: Provenance,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub dataset_id: String,
    pub corpus_id: String,
    pub ontology_version: u32,
    pub ontology: Ontology,
    pub config: AugmentationConfig,
    pub report: LabelingReport,
    pub human_examples: usize,
    pub llm_examples: usize,
    /// Examples missing from `n_target` because the corpus ran out.
    pub shortfall: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainingSet {
    pub manifest: DatasetManifest,
    pub dir: PathBuf,
}

impl TrainingSet {
    pub fn train_path(&self) -> PathBuf {
        self.dir.join("train.jsonl")
    }

    pub fn rows(&self) -> Result<Vec<TrainingRow>, LabelError> {
        read_training_rows(&self.train_path())
    }

    pub fn load(store: &Store, dataset_id: &str) -> Result<Self, LabelError> {
        let dir = datasets_dir(store).join(dataset_id);
        let text = fs::read_to_string(dir.join("manifest.json"))
            .map_err(|_| LabelError::DatasetNotFound(dataset_id.to_string()))?;
        let manifest = serde_json::from_str(&text).map_err(|e| LabelError::Config(e.to_string()))?;
        Ok(TrainingSet { manifest, dir })
    }
}

pub fn read_training_rows(path: &std::path::Path) -> Result<Vec<TrainingRow>, LabelError> {
    let file = fs::File::open(path)?;
    let mut rows = Vec::new();
    for line in BufReader::new(file).lines() {
        let line = line?;
        if !line.trim().is_empty() {
            rows.push(serde_json::from_str(&line).map_err(|e| LabelError::Config(e.to_string()))?);
        }
    }
    Ok(rows)
}

pub fn datasets_dir(store: &Store) -> PathBuf {
    store.artifact_dir("datasets")
}

fn next_dataset_id(store: &Store, corpus_id: &str) -> String {
    let root = datasets_dir(store);
    (1..)
        .map(|n| format!("{corpus_id}-ds{n}"))
        .find(|id| !root.join(id).exists())
        .unwrap()
}

/// Produces a versioned training set of `n_target` examples: human labels
/// first, topped up with LLM labels when there are too few. LLM labels made
/// earlier against the current ontology version are reused.
pub fn ensure_training_set(
    store: &Store,
    gateway: &Gateway,
    corpus_id: &str,
    cfg: &AugmentationConfig,
) -> Result<TrainingSet, LabelError> {
    let ontology = store.ontology(corpus_id)?;
    let seeds = human_seeds(store, corpus_id)?;
    if seeds.is_empty() {
        return Err(LabelError::NoSeeds);
    }
    let mut chosen: Vec<LabeledExample> = seeds.iter().take(cfg.n_target).cloned().collect();
    let mut report = LabelingReport::default();
    if chosen.len() < cfg.n_target {
        let human_ids: HashSet<&str> = seeds.iter().map(|s| s.doc_id.as_str()).collect();
        let mut reused: Vec<LabeledExample> = store
            .labels(corpus_id, Some(Provenance::Llm))?
            .into_iter()
            .filter(|l| !l.stale && l.ontology_version == ontology.version && !human_ids.contains(l.doc_id.as_str()))
            .collect();
        reused.truncate(cfg.n_target - chosen.len());
        let reused_ids: HashSet<String> = reused.iter().map(|l| l.doc_id.clone()).collect();
        chosen.extend(reused);
        if chosen.len() < cfg.n_target {
            let candidates: Vec<String> = store
                .documents(corpus_id)?
                .into_iter()
                .map(|d| d.doc_id)
                .filter(|id| !human_ids.contains(id.as_str()) && !reused_ids.contains(id))
                .collect();
            let mut sub_cfg = cfg.clone();
            sub_cfg.n_target = cfg.n_target - (chosen.len() - seeds.len());
            let (fresh, r) = label_documents(store, gateway, corpus_id, &ontology, &sub_cfg, &candidates)?;
            report = r;
            chosen.extend(fresh);
        }
    }
    chosen.sort_by(|a, b| a.doc_id.cmp(&b.doc_id).then(a.provenance.cmp(&b.provenance)));

    let dataset_id = next_dataset_id(store, corpus_id);
    let dir = datasets_dir(store).join(&dataset_id);
    fs::create_dir_all(&dir)?;
    let mut train = Vec::new();
    for ex in &chosen {
        let row = TrainingRow {
            doc_id: ex.doc_id.clone(),
            input: store.document(corpus_id, &ex.doc_id)?.body,
            target: ex.parse.to_canonical_json(&ontology),
            provenance: ex.provenance,
        };
        serde_json::to_writer(&mut train, &row).expect("row serializes");
        train.push(b'\n');
    }
    write_atomic(&dir.join("train.jsonl"), &train)?;
    let human_examples = chosen.iter().filter(|e| e.provenance == Provenance::Human).count();
    let manifest = DatasetManifest {
        dataset_id,
        corpus_id: corpus_id.to_string(),
        ontology_version: ontology.version,
        ontology,
        config: cfg.clone(),
        report,
        human_examples,
        llm_examples: chosen.len() - human_examples,
        shortfall: cfg.n_target - chosen.len(),
    };
    write_atomic(&dir.join("manifest.json"), serde_json::to_string_pretty(&manifest).unwrap().as_bytes())?;
    Ok(TrainingSet { manifest, dir })
}

pub(crate) fn write_atomic(path: &std::path::Path, bytes: &[u8]) -> std::io::Result<()> {
    let tmp = path.with_extension("tmp");
    let mut f = fs::File::create(&tmp)?;
    f.write_all(bytes)?;
    f.sync_all()?;
    fs::rename(tmp, path)
}

/// Doc id → parse for every example of a training set.
pub fn training_targets(set: &TrainingSet) -> Result<BTreeMap<String, Parse>, LabelError> {
    set.rows()?
        .into_iter()
        .map(|r| {
            let parse = parse_llm_output(&r.target, &set.manifest.ontology)
                .map_err(|e| LabelError::Config(e.to_string()))?;
            Ok((r.doc_id, parse))
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{FieldKind, FieldSpec};

    fn onto() -> Ontology {
        Ontology::new(
            "",
            vec![FieldSpec::new("BAC", FieldKind::Numeric), FieldSpec::new("Dist", FieldKind::Numeric)],
        )
        .unwrap()
    }

    #[test]
    fn strict_json() {
        let p = parse_llm_output(r#"{"BAC": ["0.12%"], "Dist": ["300m"]}"#, &onto()).unwrap();
        assert_eq!(p, Parse::new().with("BAC", &["0.12%"]).with("Dist", &["300m"]));
    }

    #[test]
    fn chatter_around_json_is_repaired() {
        let p = parse_llm_output(r#"Sure! Here is the result: {"BAC": ["0.12%"]}"#, &onto()).unwrap();
        assert_eq!(p, Parse::new().with("BAC", &["0.12%"]));
        let p = parse_llm_output("```json\n{\"bac\": [\"0.1%\"]}\n```", &onto()).unwrap();
        assert_eq!(p, Parse::new().with("BAC", &["0.1%"]));
    }

    #[test]
    fn scalars_are_coerced() {
        let p = parse_llm_output(r#"{"BAC": "0.12%", "Dist": 300, "Other": ["x"]}"#, &onto()).unwrap();
        assert_eq!(p, Parse::new().with("BAC", &["0.12%"]).with("Dist", &["300"]));
        let p = parse_llm_output(r#"{"BAC": null, "Dist": [""]}"#, &onto()).unwrap();
        assert!(p.is_empty());
    }

    #[test]
    fn list_syntax_is_accepted() {
        let p = parse_llm_output("'BAC: [0.12%], Dist: [300m]'", &onto()).unwrap();
        assert_eq!(p, Parse::new().with("BAC", &["0.12%"]).with("Dist", &["300m"]));
    }

    #[test]
    fn irreparable_output_carries_raw() {
        let err = parse_llm_output("I cannot help with that", &onto()).unwrap_err();
        assert_eq!(err.raw, "I cannot help with that");
        assert!(parse_llm_output(r#"{"BAC": [{"v": 1}]}"#, &onto()).is_err());
        assert!(parse_llm_output(r#"{"BAC": ["1", "2"]}"#, &onto()).is_err());
        assert!(parse_llm_output(r#"["BAC"]"#, &onto()).is_err());
    }

    fn seed(doc: &str, parse: Parse) -> LabeledExample {
        LabeledExample {
            doc_id: doc.into(),
            parse,
            provenance: Provenance::Human,
            labeler_meta: String::new(),
            created_at: chrono::Utc::now(),
            ontology_version: 1,
            version: 1,
            stale: false,
        }
    }

    fn full() -> Parse {
        Parse::new().with("BAC", &["1"]).with("Dist", &["2"])
    }

    fn partial() -> Parse {
        Parse::new().with("BAC", &["1"])
    }

    #[test]
    fn half_complete_then_random() {
        let seeds = vec![seed("a", full()), seed("b", partial()), seed("c", full()), seed("d", partial())];
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let sel = select_fewshot_examples(&seeds, &onto(), 4, &mut rng).unwrap();
        assert_eq!(sel.examples.len(), 4);
        assert_eq!(sel.complete_count, 2);
        assert!(sel.examples[0].parse.covers(&onto()) && sel.examples[1].parse.covers(&onto()));
    }

    #[test]
    fn k_equals_pool_returns_everything() {
        let seeds = vec![seed("a", full()), seed("b", partial()), seed("c", partial())];
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let sel = select_fewshot_examples(&seeds, &onto(), 3, &mut rng).unwrap();
        let mut ids: Vec<_> = sel.examples.iter().map(|e| e.doc_id.clone()).collect();
        ids.sort();
        assert_eq!(ids, ["a", "b", "c"]);
        assert!(matches!(
            select_fewshot_examples(&seeds, &onto(), 4, &mut rng),
            Err(LabelError::TooFewSeeds { k: 4, available: 3 })
        ));
    }

    #[test]
    fn zero_coverage_is_reported() {
        let seeds = vec![seed("a", partial()), seed("b", partial()), seed("c", partial())];
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let sel = select_fewshot_examples(&seeds, &onto(), 2, &mut rng).unwrap();
        assert_eq!(sel.examples.len(), 2);
        assert_eq!(sel.complete_count, 0);
        assert!(sel.zero_coverage);
    }

    #[test]
    fn selection_is_seeded() {
        let seeds: Vec<_> = (0..10).map(|i| seed(&format!("d{i}"), if i % 3 == 0 { full() } else { partial() })).collect();
        let pick = |s| {
            let mut rng = ChaCha8Rng::seed_from_u64(s);
            select_fewshot_examples(&seeds, &onto(), 5, &mut rng).unwrap().examples
        };
        assert_eq!(pick(3), pick(3));
    }
}
