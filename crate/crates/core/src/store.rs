//! Persistent corpus store.
//!
//! Every mutation is appended to a single JSON-lines event log and fsynced
//! before the call returns, so a restarted process replays to the same state.
//! [`Store::compact`] folds the log into a snapshot file. Readers share a
//! `RwLock`; writers are serialized through the log mutex.

use std::collections::BTreeMap;
use std::fs::{self, File, OpenOptions};
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::{Path, PathBuf};
use std::sync::{Mutex, RwLock};

use chrono::Utc;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::model::{
    canonical_field_name, Document, FieldSpec, LabelRecord, LabeledExample, Ontology, Parse,
    Provenance, SchemaError,
};

const LOG_FILE: &str = "store.log";
const SNAPSHOT_FILE: &str = "store.snapshot.json";

#[derive(Debug, Error)]
pub enum StoreError {
    #[error("{kind} not found: {id}")]
    NotFound { kind: &'static str, id: String },
    #[error("validation failed: {0}")]
    Validation(#[from] SchemaError),
    #[error("corpus {0} has no ontology yet")]
    NoOntology(String),
    #[error("cannot remove {0:?}: it is the last field")]
    LastField(String),
    #[error("ingest produced no valid documents ({} malformed lines)", .0.errors.len())]
    EmptyIngest(IngestReport),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("corrupt store record: {0}")]
    Corrupt(String),
    #[error("data directory {0} is in use by another process")]
    Locked(PathBuf),
}

pub type Result<T> = std::result::Result<T, StoreError>;

/// One line of the corpus JSONL upload format.
#[derive(Debug, Deserialize)]
struct CorpusLine {
    #[serde(default)]
    doc_id: Option<String>,
    body: String,
    #[serde(default)]
    meta: BTreeMap<String, String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LineError {
    pub line: usize,
    pub message: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IngestReport {
    pub corpus_id: String,
    pub stored: usize,
    pub replaced: usize,
    pub errors: Vec<LineError>,
    pub corpus_version: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "op", rename_all = "snake_case")]
pub enum OntologyEdit {
    AddField { field: FieldSpec },
    RemoveField { name: String },
    /// Edits the task description, or one field's description when `field`
    /// is given.
    EditDescription {
        #[serde(default)]
        field: Option<String>,
        description: String,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OntologyUpdate {
    pub ontology: Ontology,
    pub stale_labels: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "event", rename_all = "snake_case")]
enum Event {
    DocsUpserted {
        corpus_id: String,
        docs: Vec<Document>,
    },
    OntologySet {
        corpus_id: String,
        ontology: Ontology,
    },
    LabelWritten {
        corpus_id: String,
        example: LabeledExample,
    },
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
struct CorpusState {
    docs: BTreeMap<String, Document>,
    version: u64,
    ontologies: Vec<Ontology>,
    labels: BTreeMap<String, BTreeMap<Provenance, Vec<LabeledExample>>>,
}

impl CorpusState {
    fn ontology(&self) -> Option<&Ontology> {
        self.ontologies.last()
    }

    fn with_staleness(&self, ex: &LabeledExample) -> LabeledExample {
        let mut ex = ex.clone();
        ex.stale = match self.ontology() {
            Some(onto) => !ex.parse.fields_outside(onto).is_empty(),
            None => false,
        };
        ex
    }

    fn count_stale(&self) -> usize {
        self.labels
            .values()
            .flat_map(|by_prov| by_prov.values())
            .filter_map(|hist| hist.last())
            .filter(|ex| self.with_staleness(ex).stale)
            .count()
    }
}

#[derive(Debug, Default, Serialize, Deserialize)]
struct State {
    corpora: BTreeMap<String, CorpusState>,
}

impl State {
    fn apply(&mut self, event: Event) {
        match event {
            Event::DocsUpserted { corpus_id, docs } => {
                let corpus = self.corpora.entry(corpus_id).or_default();
                for doc in docs {
                    corpus.docs.insert(doc.doc_id.clone(), doc);
                }
                corpus.version += 1;
            }
            Event::OntologySet {
                corpus_id,
                ontology,
            } => {
                self.corpora
                    .entry(corpus_id)
                    .or_default()
                    .ontologies
                    .push(ontology);
            }
            Event::LabelWritten { corpus_id, example } => {
                self.corpora
                    .entry(corpus_id)
                    .or_default()
                    .labels
                    .entry(example.doc_id.clone())
                    .or_default()
                    .entry(example.provenance)
                    .or_default()
                    .push(example);
            }
        }
    }

    fn corpus(&self, id: &str) -> Result<&CorpusState> {
        self.corpora.get(id).ok_or_else(|| StoreError::NotFound {
            kind: "corpus",
            id: id.to_string(),
        })
    }
}

pub struct Store {
    root: PathBuf,
    state: RwLock<State>,
    log: Mutex<File>,
    // held for the store's lifetime; one writer process per directory
    _lock: File,
}

/// Content-hash document id for uploads that carry none.
pub fn content_doc_id(body: &str) -> String {
    let digest = Sha256::digest(body.as_bytes());
    format!("h{}", &hex::encode(digest)[..16])
}

impl Store {
    /// Opens (or creates) a store rooted at `root`, replaying snapshot and log.
    pub fn open(root: impl AsRef<Path>) -> Result<Self> {
        let root = root.as_ref().to_path_buf();
        fs::create_dir_all(&root)?;
        let lock = OpenOptions::new().create(true).truncate(false).write(true).open(root.join("store.lock"))?;
        match lock.try_lock() {
            Ok(()) => {}
            Err(fs::TryLockError::WouldBlock) => return Err(StoreError::Locked(root)),
            Err(fs::TryLockError::Error(e)) => return Err(e.into()),
        }
        let mut state = State::default();
        let snap = root.join(SNAPSHOT_FILE);
        if snap.exists() {
            let text = fs::read_to_string(&snap)?;
            state = serde_json::from_str(&text)
                .map_err(|e| StoreError::Corrupt(format!("snapshot: {e}")))?;
        }
        let log_path = root.join(LOG_FILE);
        if log_path.exists() {
            truncate_torn_tail(&log_path)?;
            let reader = BufReader::new(File::open(&log_path)?);
            for (i, line) in reader.lines().enumerate() {
                let line = line?;
                let n = i + 1;
                if line.trim().is_empty() {
                    continue;
                }
                let ev = serde_json::from_str::<Event>(&line)
                    .map_err(|e| StoreError::Corrupt(format!("log line {n}: {e}")))?;
                state.apply(ev);
            }
        }
        let log = OpenOptions::new().create(true).append(true).open(&log_path)?;
        Ok(Store {
            root,
            state: RwLock::new(state),
            log: Mutex::new(log),
            _lock: lock,
        })
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    /// Directory for artifacts (datasets, jobs, tables) belonging to a corpus.
    pub fn artifact_dir(&self, kind: &str) -> PathBuf {
        self.root.join(kind)
    }

    fn commit(&self, event: Event) -> Result<()> {
        self.commit_with(|_| Ok(event)).map(|_| ())
    }

    /// Builds an event against the current state while holding the writer
    /// lock, then appends and applies it.
    fn commit_with<F>(&self, build: F) -> Result<Event>
    where
        F: FnOnce(&State) -> Result<Event>,
    {
        let mut log = self.log.lock().unwrap();
        let event = build(&self.state.read().unwrap())?;
        let mut line = serde_json::to_string(&event).expect("event serializes");
        line.push('\n');
        log.write_all(line.as_bytes())?;
        log.sync_data()?;
        self.state.write().unwrap().apply(event.clone());
        Ok(event)
    }

    /// Writes a snapshot of the current state and truncates the log.
    pub fn compact(&self) -> Result<()> {
        let log = self.log.lock().unwrap();
        let state = self.state.read().unwrap();
        let tmp = self.root.join(format!("{SNAPSHOT_FILE}.tmp"));
        {
            let mut w = BufWriter::new(File::create(&tmp)?);
            serde_json::to_writer(&mut w, &*state).map_err(|e| StoreError::Corrupt(e.to_string()))?;
            w.flush()?;
            w.get_ref().sync_all()?;
        }
        fs::rename(&tmp, self.root.join(SNAPSHOT_FILE))?;
        log.set_len(0)?;
        log.sync_all()?;
        Ok(())
    }

    /// Ingests a JSONL corpus. Malformed lines are reported and skipped.
    /// Re-ingesting an existing `doc_id` into the same corpus replaces it.
    pub fn ingest(&self, source: impl Read, corpus_id: Option<&str>) -> Result<IngestReport> {
        let corpus_id = match corpus_id {
            Some(id) => id.to_string(),
            None => self.next_corpus_id(),
        };
        let existing: std::collections::HashSet<String> = self
            .state
            .read()
            .unwrap()
            .corpora
            .get(&corpus_id)
            .map(|c| c.docs.keys().cloned().collect())
            .unwrap_or_default();

        let mut docs: BTreeMap<String, Document> = BTreeMap::new();
        let mut errors = Vec::new();
        let mut replaced = 0;
        for (idx, line) in BufReader::new(source).lines().enumerate() {
            let lineno = idx + 1;
            let line = match line {
                Ok(l) => l,
                Err(e) => {
                    errors.push(LineError {
                        line: lineno,
                        message: e.to_string(),
                    });
                    continue;
                }
            };
            if line.trim().is_empty() {
                continue;
            }
            let parsed: CorpusLine = match serde_json::from_str(&line) {
                Ok(p) => p,
                Err(e) => {
                    errors.push(LineError {
                        line: lineno,
                        message: e.to_string(),
                    });
                    continue;
                }
            };
            if parsed.body.trim().is_empty() {
                errors.push(LineError {
                    line: lineno,
                    message: "empty body".into(),
                });
                continue;
            }
            let doc_id = match parsed.doc_id {
                Some(id) if !id.trim().is_empty() => id,
                _ => content_doc_id(&parsed.body),
            };
            if existing.contains(&doc_id) || docs.contains_key(&doc_id) {
                replaced += 1;
            }
            docs.insert(
                doc_id.clone(),
                Document {
                    doc_id,
                    body: parsed.body,
                    source_meta: parsed.meta,
                },
            );
        }
        let mut report = IngestReport {
            corpus_id: corpus_id.clone(),
            stored: docs.len(),
            replaced,
            errors,
            corpus_version: 0,
        };
        if docs.is_empty() {
            return Err(StoreError::EmptyIngest(report));
        }
        self.commit(Event::DocsUpserted {
            corpus_id: corpus_id.clone(),
            docs: docs.into_values().collect(),
        })?;
        report.corpus_version = self.corpus_version(&corpus_id)?;
        Ok(report)
    }

    fn next_corpus_id(&self) -> String {
        let state = self.state.read().unwrap();
        (1..)
            .map(|n| format!("corpus-{n}"))
            .find(|id| !state.corpora.contains_key(id))
            .unwrap()
    }

    pub fn corpus_ids(&self) -> Vec<String> {
        self.state.read().unwrap().corpora.keys().cloned().collect()
    }

    pub fn corpus_version(&self, corpus_id: &str) -> Result<u64> {
        Ok(self.state.read().unwrap().corpus(corpus_id)?.version)
    }

    /// All documents in doc_id order.
    pub fn documents(&self, corpus_id: &str) -> Result<Vec<Document>> {
        Ok(self
            .state
            .read()
            .unwrap()
            .corpus(corpus_id)?
            .docs
            .values()
            .cloned()
            .collect())
    }

    pub fn document(&self, corpus_id: &str, doc_id: &str) -> Result<Document> {
        self.state
            .read()
            .unwrap()
            .corpus(corpus_id)?
            .docs
            .get(doc_id)
            .cloned()
            .ok_or_else(|| StoreError::NotFound {
                kind: "document",
                id: doc_id.to_string(),
            })
    }

    pub fn document_count(&self, corpus_id: &str) -> Result<usize> {
        Ok(self.state.read().unwrap().corpus(corpus_id)?.docs.len())
    }

    /// Replaces the ontology wholesale, producing a new version.
    pub fn set_ontology(&self, corpus_id: &str, mut ontology: Ontology) -> Result<OntologyUpdate> {
        ontology.canonicalize()?;
        ontology.ontology_id = corpus_id.to_string();
        let event = self.commit_with(|state| {
            let corpus = state.corpus(corpus_id)?;
            ontology.version = corpus.ontology().map_or(1, |o| o.version + 1);
            Ok(Event::OntologySet {
                corpus_id: corpus_id.to_string(),
                ontology,
            })
        })?;
        let Event::OntologySet { ontology, .. } = event else { unreachable!() };
        let stale_labels = self.state.read().unwrap().corpus(corpus_id)?.count_stale();
        Ok(OntologyUpdate {
            ontology,
            stale_labels,
        })
    }

    pub fn modify_ontology(&self, corpus_id: &str, edit: OntologyEdit) -> Result<OntologyUpdate> {
        let mut onto = self.ontology(corpus_id)?;
        match edit {
            OntologyEdit::AddField { mut field } => {
                field.name = canonical_field_name(&field.name);
                if onto.field(&field.name).is_some() {
                    return Err(SchemaError::DuplicateField(field.name).into());
                }
                onto.fields.push(field);
            }
            OntologyEdit::RemoveField { name } => {
                let name = canonical_field_name(&name);
                let pos = onto
                    .fields
                    .iter()
                    .position(|f| f.name == name)
                    .ok_or_else(|| SchemaError::UnknownField(name.clone()))?;
                if onto.fields.len() == 1 {
                    return Err(StoreError::LastField(name));
                }
                onto.fields.remove(pos);
            }
            OntologyEdit::EditDescription { field, description } => match field {
                None => onto.task_description = description,
                Some(name) => {
                    let name = canonical_field_name(&name);
                    let spec = onto
                        .fields
                        .iter_mut()
                        .find(|f| f.name == name)
                        .ok_or(SchemaError::UnknownField(name))?;
                    spec.description = description;
                }
            },
        }
        self.set_ontology(corpus_id, onto)
    }

    /// Current ontology of a corpus.
    pub fn ontology(&self, corpus_id: &str) -> Result<Ontology> {
        let state = self.state.read().unwrap();
        state
            .corpus(corpus_id)?
            .ontology()
            .cloned()
            .ok_or_else(|| StoreError::NoOntology(corpus_id.to_string()))
    }

    pub fn ontology_version(&self, corpus_id: &str, version: u32) -> Result<Ontology> {
        let state = self.state.read().unwrap();
        state
            .corpus(corpus_id)?
            .ontologies
            .iter()
            .find(|o| o.version == version)
            .cloned()
            .ok_or_else(|| StoreError::NotFound {
                kind: "ontology version",
                id: version.to_string(),
            })
    }

    /// Validates and durably stores a label. The previous label of the same
    /// (document, provenance) pair stays in the history.
    pub fn upsert_label(
        &self,
        corpus_id: &str,
        doc_id: &str,
        parse: Parse,
        provenance: Provenance,
        labeler_meta: &str,
    ) -> Result<LabeledExample> {
        let event = self.commit_with(|state| {
            let corpus = state.corpus(corpus_id)?;
            if !corpus.docs.contains_key(doc_id) {
                return Err(StoreError::NotFound {
                    kind: "document",
                    id: doc_id.to_string(),
                });
            }
            let onto = corpus
                .ontology()
                .ok_or_else(|| StoreError::NoOntology(corpus_id.to_string()))?;
            let mut parse = parse;
            let names: Vec<String> = parse.iter().map(|(k, _)| k.to_string()).collect();
            for name in names {
                let canon = canonical_field_name(&name);
                if canon != name {
                    let vals = parse.remove(&name).unwrap_or_default();
                    parse.set(&canon, vals);
                }
            }
            onto.validate(&parse)?;
            let version = corpus
                .labels
                .get(doc_id)
                .and_then(|m| m.get(&provenance))
                .map_or(1, |h| h.len() as u32 + 1);
            let example = LabeledExample {
                doc_id: doc_id.to_string(),
                parse,
                provenance,
                labeler_meta: labeler_meta.to_string(),
                created_at: Utc::now(),
                ontology_version: onto.version,
                version,
                stale: false,
            };
            Ok(Event::LabelWritten {
                corpus_id: corpus_id.to_string(),
                example,
            })
        })?;
        match event {
            Event::LabelWritten { example, .. } => Ok(example),
            _ => unreachable!(),
        }
    }

    /// Latest label per (document, provenance), sorted by doc_id, optionally
    /// restricted to one provenance class.
    pub fn labels(&self, corpus_id: &str, provenance: Option<Provenance>) -> Result<Vec<LabeledExample>> {
        let state = self.state.read().unwrap();
        let corpus = state.corpus(corpus_id)?;
        Ok(corpus
            .labels
            .values()
            .flat_map(|by_prov| by_prov.iter())
            .filter(|(p, _)| provenance.is_none_or(|want| want == **p))
            .filter_map(|(_, hist)| hist.last())
            .map(|ex| corpus.with_staleness(ex))
            .collect())
    }

    pub fn label(&self, corpus_id: &str, doc_id: &str, provenance: Provenance) -> Result<LabeledExample> {
        self.label_history(corpus_id, doc_id, provenance)?
            .pop()
            .ok_or_else(|| StoreError::NotFound {
                kind: "label",
                id: doc_id.to_string(),
            })
    }

    pub fn label_history(
        &self,
        corpus_id: &str,
        doc_id: &str,
        provenance: Provenance,
    ) -> Result<Vec<LabeledExample>> {
        let state = self.state.read().unwrap();
        let corpus = state.corpus(corpus_id)?;
        Ok(corpus
            .labels
            .get(doc_id)
            .and_then(|m| m.get(&provenance))
            .map(|h| h.iter().map(|ex| corpus.with_staleness(ex)).collect())
            .unwrap_or_default())
    }

    /// Writes the latest labels in the labels-export JSONL format.
    pub fn export_labels(&self, corpus_id: &str, provenance: Option<Provenance>, out: impl Write) -> Result<usize> {
        let labels = self.labels(corpus_id, provenance)?;
        let mut out = BufWriter::new(out);
        for ex in &labels {
            serde_json::to_writer(&mut out, &LabelRecord::from(ex)).expect("label serializes");
            out.write_all(b"\n")?;
        }
        out.flush()?;
        Ok(labels.len())
    }

    /// Reads labels-export JSONL and upserts every record.
    pub fn import_labels(&self, corpus_id: &str, source: impl Read, labeler_meta: &str) -> Result<usize> {
        let records = read_label_records(source)?;
        for rec in &records {
            self.upsert_label(corpus_id, &rec.doc_id, rec.parse.clone(), rec.provenance, labeler_meta)?;
        }
        Ok(records.len())
    }
}

/// Drops an unterminated final line, which is what a crash mid-append
/// leaves behind.
fn truncate_torn_tail(path: &Path) -> Result<()> {
    let bytes = fs::read(path)?;
    if bytes.last().is_some_and(|b| *b != b'\n') {
        let keep = bytes.iter().rposition(|b| *b == b'\n').map_or(0, |i| i + 1);
        let f = OpenOptions::new().write(true).open(path)?;
        f.set_len(keep as u64)?;
        f.sync_all()?;
    }
    Ok(())
}

/// Parses labels-export JSONL.
pub fn read_label_records(source: impl Read) -> Result<Vec<LabelRecord>> {
    let mut out = Vec::new();
    for (idx, line) in BufReader::new(source).lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let rec: LabelRecord = serde_json::from_str(&line)
            .map_err(|e| StoreError::Corrupt(format!("labels line {}: {e}", idx + 1)))?;
        out.push(rec);
    }
    Ok(out)
}
