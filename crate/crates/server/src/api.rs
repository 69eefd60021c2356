//! Operations shared by the HTTP service and the CLI. Each returns the JSON
//! value both front ends emit, so their outputs agree.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::mpsc;
use std::sync::{Arc, Mutex};

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use structa_core::analysis::{route_tool_call, tool_schemas, AnalysisContext, ChatSession};
use structa_core::cost::{estimate_cost, estimate_time, tradeoff_curve, PipelinePlan, PricingConfig};
use structa_core::engine::{
    build_extractor, extract_batch, CommandShim, DocFilter, ExtractorSpec, Hyperparams, JobManager, StructuredTable,
};
use structa_core::eval::{classification_report, field_f1_report, parses_by_doc};
use structa_core::labeler::{ensure_training_set, human_seeds, AugmentationConfig, TrainingSet};
use structa_core::llm::{Gateway, HttpBackend, HttpConfig, MockRules};
use structa_core::model::{FieldKind, FieldSpec, LabelRecord, Ontology, Parse, Provenance};
use structa_core::search::{SearchIndex, SearchQuery};
use structa_core::store::{OntologyEdit, Store};

use crate::config::Config;
use crate::error::ApiError;

pub type ApiResult<T = Value> = Result<T, ApiError>;

fn to_value<T: Serialize>(v: T) -> Value {
    serde_json::to_value(v).expect("response types serialize")
}

fn write_atomic(path: &Path, bytes: &[u8]) -> std::io::Result<()> {
    let tmp = path.with_extension("tmp");
    let mut f = fs::File::create(&tmp)?;
    f.write_all(bytes)?;
    f.sync_all()?;
    fs::rename(tmp, path)
}

// ---------------------------------------------------------------------------
// Background tasks
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TaskKind {
    Augment,
    Train,
    Extract,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TaskState {
    Queued,
    Running,
    Done,
    Failed,
}

/// Status of an augment or extract request, polled at `GET /jobs/{id}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskRecord {
    pub job_id: String,
    pub kind: TaskKind,
    pub corpus_id: String,
    pub state: TaskState,
    pub created_at: DateTime<Utc>,
    pub started_at: Option<DateTime<Utc>>,
    pub finished_at: Option<DateTime<Utc>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub result: Option<Value>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<ApiError>,
}

type Work = Box<dyn FnOnce() + Send>;

/// Fixed pool of worker threads; bounds how many long operations run at once.
struct Pool {
    tx: Mutex<mpsc::Sender<Work>>,
}

impl Pool {
    fn new(workers: usize) -> Self {
        let (tx, rx) = mpsc::channel::<Work>();
        let rx = Arc::new(Mutex::new(rx));
        for i in 0..workers {
            let rx = rx.clone();
            std::thread::Builder::new()
                .name(format!("structa-worker-{i}"))
                .spawn(move || loop {
                    let next = rx.lock().unwrap().recv();
                    match next {
                        Ok(work) => work(),
                        Err(_) => break,
                    }
                })
                .expect("spawn worker");
        }
        Pool { tx: Mutex::new(tx) }
    }

    fn submit(&self, work: Work) {
        let _ = self.tx.lock().unwrap().send(work);
    }
}

// ---------------------------------------------------------------------------
// Request bodies
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LabelBody {
    pub parse: Parse,
    #[serde(default)]
    pub provenance: Option<Provenance>,
    #[serde(default)]
    pub labeler: Option<String>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainBody {
    pub dataset_id: String,
    #[serde(default)]
    pub hyperparams: Option<Hyperparams>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExtractBody {
    pub extractor: ExtractorSpec,
    #[serde(default)]
    pub filter: DocFilter,
    #[serde(default)]
    pub workers: Option<usize>,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvalBody {
    /// Supplies the ontology and, when `gold` is absent, the human labels.
    #[serde(default)]
    pub corpus_id: Option<String>,
    #[serde(default)]
    pub ontology: Option<Ontology>,
    #[serde(default)]
    pub pred: Option<Vec<LabelRecord>>,
    /// Structured table to score when `pred` is absent; latest by default.
    #[serde(default)]
    pub table_id: Option<String>,
    #[serde(default)]
    pub gold: Option<Vec<LabelRecord>>,
    #[serde(default)]
    pub exclude: Vec<String>,
    /// Document-level label sets for a classification report.
    #[serde(default)]
    pub pred_labels: Option<BTreeMap<String, BTreeSet<String>>>,
    #[serde(default)]
    pub gold_labels: Option<BTreeMap<String, BTreeSet<String>>>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ChatBody {
    pub corpus_id: String,
    pub message: String,
    #[serde(default)]
    pub session_id: Option<String>,
    #[serde(default)]
    pub table_id: Option<String>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CurveBody {
    /// Defaults to the built-in llm_only and hybrid plans.
    #[serde(default)]
    pub plans: Option<Vec<PipelinePlan>>,
    pub grid: Vec<u64>,
    #[serde(default)]
    pub pricing: Option<PricingConfig>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EstimateBody {
    pub plan: PipelinePlan,
    #[serde(rename = "N")]
    pub n: i64,
    #[serde(default)]
    pub pricing: Option<PricingConfig>,
}

#[derive(Debug, Clone, Default)]
pub struct DocumentQuery {
    pub query: Option<String>,
    pub top_k: Option<usize>,
    pub filters: BTreeMap<String, String>,
    pub offset: usize,
    pub limit: Option<usize>,
}

impl DocumentQuery {
    /// Reads `query`, `top_k`, `offset`, `limit` and `filter.<key>` params.
    pub fn from_params(params: &HashMap<String, String>) -> ApiResult<Self> {
        let num = |key: &str| -> ApiResult<Option<usize>> {
            params
                .get(key)
                .map(|v| v.parse::<usize>().map_err(|_| ApiError::bad_request(format!("{key} must be a non-negative integer"))))
                .transpose()
        };
        let mut q = DocumentQuery {
            query: params.get("query").filter(|s| !s.trim().is_empty()).cloned(),
            top_k: num("top_k")?,
            offset: num("offset")?.unwrap_or(0),
            limit: num("limit")?,
            filters: BTreeMap::new(),
        };
        for (k, v) in params {
            if let Some(key) = k.strip_prefix("filter.") {
                q.filters.insert(key.to_string(), v.clone());
            } else if !matches!(k.as_str(), "query" | "top_k" | "offset" | "limit") {
                return Err(ApiError::bad_request(format!("unknown query parameter {k}")));
            }
        }
        Ok(q)
    }
}

// ---------------------------------------------------------------------------
// App
// ---------------------------------------------------------------------------

pub struct App {
    pub config: Config,
    pub store: Store,
    pub gateway: Gateway,
    pub jobs: Arc<JobManager>,
    pub pricing: PricingConfig,
    indexes: Mutex<HashMap<String, Arc<SearchIndex>>>,
    sessions: Mutex<HashMap<String, ChatSession>>,
    task_alloc: Mutex<()>,
    pool: Pool,
}

pub fn build_gateway(config: &Config) -> Result<Gateway, String> {
    let llm = &config.llm;
    let gateway = match llm.backend.as_str() {
        "http" => {
            let api_key = std::env::var(&llm.api_key_env)
                .map_err(|_| format!("environment variable {} is not set", llm.api_key_env))?;
            let http = HttpConfig {
                base_url: llm.base_url.clone(),
                api_key,
                timeout: std::time::Duration::from_secs(120),
                parallelism: llm.parallelism.max(1),
                rate_limit: llm.rate_limit,
            };
            Gateway::new(Arc::new(HttpBackend::new(http).map_err(|e| e.to_string())?))
        }
        _ => {
            let rules = match &llm.mock_rules {
                Some(path) => MockRules::load(path)?,
                None => MockRules::default(),
            };
            Gateway::mock(rules)
        }
    };
    let gateway = gateway.with_parallelism(llm.parallelism);
    Ok(match &llm.models {
        Some(routes) => gateway.with_routes(routes.clone()),
        None => gateway,
    })
}

impl App {
    pub fn open(config: Config) -> Result<Arc<Self>, String> {
        config.check()?;
        let store = Store::open(&config.data_dir).map_err(|e| e.to_string())?;
        let gateway = build_gateway(&config)?;
        let pricing = match &config.pricing {
            Some(path) => PricingConfig::load(path).map_err(|e| e.to_string())?,
            None => PricingConfig::default(),
        };
        let runner = Arc::new(CommandShim::new(config.trainer.clone()));
        let jobs = Arc::new(JobManager::open(store.artifact_dir("jobs"), runner).map_err(|e| e.to_string())?);
        let app = App {
            pool: Pool::new(config.workers),
            config,
            store,
            gateway,
            jobs,
            pricing,
            indexes: Mutex::default(),
            sessions: Mutex::default(),
            task_alloc: Mutex::new(()),
        };
        app.fail_interrupted_tasks().map_err(|e| e.to_string())?;
        Ok(Arc::new(app))
    }

    fn tasks_dir(&self) -> PathBuf {
        self.store.artifact_dir("tasks")
    }

    fn save_task(&self, task: &TaskRecord) -> ApiResult<()> {
        let dir = self.tasks_dir();
        fs::create_dir_all(&dir)?;
        write_atomic(&dir.join(format!("{}.json", task.job_id)), &serde_json::to_vec_pretty(task).unwrap())?;
        Ok(())
    }

    fn load_task(&self, id: &str) -> ApiResult<TaskRecord> {
        let text = fs::read_to_string(self.tasks_dir().join(format!("{id}.json"))).map_err(|_| ApiError::not_found("job", id))?;
        serde_json::from_str(&text).map_err(|e| ApiError::internal(format!("corrupt task {id}: {e}")))
    }

    fn fail_interrupted_tasks(&self) -> ApiResult<()> {
        let Ok(entries) = fs::read_dir(self.tasks_dir()) else { return Ok(()) };
        for entry in entries.flatten() {
            let name = entry.file_name().to_string_lossy().to_string();
            let Some(id) = name.strip_suffix(".json") else { continue };
            let mut task = self.load_task(id)?;
            if matches!(task.state, TaskState::Queued | TaskState::Running) {
                task.state = TaskState::Failed;
                task.finished_at = Some(Utc::now());
                task.error = Some(ApiError::conflict("interrupted", "interrupted by a service restart"));
                self.save_task(&task)?;
            }
        }
        Ok(())
    }

    fn new_task(&self, kind: TaskKind, corpus_id: &str) -> ApiResult<TaskRecord> {
        let _guard = self.task_alloc.lock().unwrap();
        let dir = self.tasks_dir();
        let job_id = (1..).map(|n| format!("task-{n}")).find(|id| !dir.join(format!("{id}.json")).exists()).unwrap();
        let task = TaskRecord {
            job_id,
            kind,
            corpus_id: corpus_id.to_string(),
            state: TaskState::Queued,
            created_at: Utc::now(),
            started_at: None,
            finished_at: None,
            result: None,
            error: None,
        };
        self.save_task(&task)?;
        Ok(task)
    }

    /// Queues `work` and returns the queued task record at once.
    fn spawn_task<F>(self: &Arc<Self>, kind: TaskKind, corpus_id: &str, work: F) -> ApiResult
    where
        F: FnOnce(&App) -> ApiResult + Send + 'static,
    {
        let mut task = self.new_task(kind, corpus_id)?;
        let queued = to_value(&task);
        let app = self.clone();
        self.pool.submit(Box::new(move || {
            task.state = TaskState::Running;
            task.started_at = Some(Utc::now());
            let _ = app.save_task(&task);
            let outcome = std::panic::catch_unwind(std::panic::AssertUnwindSafe(|| work(&app)))
                .unwrap_or_else(|_| Err(ApiError::internal("task panicked")));
            match outcome {
                Ok(v) => {
                    task.state = TaskState::Done;
                    task.result = Some(v);
                }
                Err(e) => {
                    task.state = TaskState::Failed;
                    task.error = Some(e);
                }
            }
            task.finished_at = Some(Utc::now());
            if let Err(e) = app.save_task(&task) {
                tracing::error!("saving {}: {e}", task.job_id);
            }
        }));
        Ok(queued)
    }

    // -- corpora ------------------------------------------------------------

    pub fn list_corpora(&self) -> ApiResult {
        let mut out = Vec::new();
        for id in self.store.corpus_ids() {
            out.push(json!({
                "corpus_id": id,
                "documents": self.store.document_count(&id)?,
                "version": self.store.corpus_version(&id)?,
                "ontology_version": self.store.ontology(&id).ok().map(|o| o.version),
            }));
        }
        Ok(Value::Array(out))
    }

    pub fn ingest(&self, jsonl: &[u8], corpus_id: Option<&str>) -> ApiResult {
        Ok(to_value(self.store.ingest(jsonl, corpus_id)?))
    }

    pub fn ontology(&self, corpus_id: &str) -> ApiResult {
        Ok(to_value(self.store.ontology(corpus_id)?))
    }

    /// A body with `op` is an incremental edit; anything else replaces the
    /// ontology.
    pub fn put_ontology(&self, corpus_id: &str, body: Value) -> ApiResult {
        let update = if body.get("op").is_some() {
            let edit: OntologyEdit = serde_json::from_value(body)?;
            self.store.modify_ontology(corpus_id, edit)?
        } else {
            let onto: Ontology = serde_json::from_value(body)?;
            self.store.set_ontology(corpus_id, onto)?
        };
        Ok(to_value(update))
    }

    pub fn index(&self, corpus_id: &str) -> ApiResult<Arc<SearchIndex>> {
        let version = self.store.corpus_version(corpus_id)?;
        if let Some(idx) = self.indexes.lock().unwrap().get(corpus_id) {
            if idx.corpus_version() == version {
                return Ok(idx.clone());
            }
        }
        let dir = self.store.artifact_dir("indexes");
        let path = dir.join(format!("{corpus_id}.idx"));
        let index = match SearchIndex::load(&path) {
            Ok(idx) if idx.corpus_version() == version && idx.corpus_id() == corpus_id => Arc::new(idx),
            _ => {
                let idx = structa_core::search::build_index(&self.store, corpus_id)?;
                fs::create_dir_all(&dir)?;
                if let Err(e) = idx.save(&path) {
                    tracing::warn!("index not persisted: {e}");
                }
                idx
            }
        };
        self.indexes.lock().unwrap().insert(corpus_id.to_string(), index.clone());
        Ok(index)
    }

    /// Ranked search when there is a query or filter, otherwise a page of
    /// documents in id order.
    pub fn documents(&self, corpus_id: &str, q: &DocumentQuery) -> ApiResult {
        if q.query.is_none() && q.filters.is_empty() {
            let docs = self.store.documents(corpus_id)?;
            let total = docs.len();
            let page: Vec<_> = docs.into_iter().skip(q.offset).take(q.limit.unwrap_or(50)).collect();
            return Ok(json!({"total": total, "offset": q.offset, "documents": page}));
        }
        let terms: Vec<String> = q.query.as_deref().unwrap_or("").split_whitespace().map(str::to_string).collect();
        let mut query = SearchQuery::terms(&terms, q.top_k.unwrap_or(10));
        query.filters = q.filters.clone();
        let hits = self.index(corpus_id)?.search(&query)?;
        Ok(json!({"query": query, "hits": hits}))
    }

    pub fn document(&self, corpus_id: &str, doc_id: &str) -> ApiResult {
        Ok(to_value(self.store.document(corpus_id, doc_id)?))
    }

    // -- labels -------------------------------------------------------------

    pub fn put_label(&self, corpus_id: &str, doc_id: &str, body: LabelBody) -> ApiResult {
        let provenance = body.provenance.unwrap_or(Provenance::Human);
        let meta = body.labeler.unwrap_or_else(|| "api".into());
        Ok(to_value(self.store.upsert_label(corpus_id, doc_id, body.parse, provenance, &meta)?))
    }

    pub fn labels(&self, corpus_id: &str, provenance: Option<Provenance>) -> ApiResult {
        Ok(to_value(self.store.labels(corpus_id, provenance)?))
    }

    pub fn import_labels(&self, corpus_id: &str, jsonl: &[u8], labeler: &str) -> ApiResult {
        let n = self.store.import_labels(corpus_id, jsonl, labeler)?;
        Ok(json!({"imported": n}))
    }

    // -- augmentation ---------------------------------------------------------

    fn check_augment(&self, corpus_id: &str, cfg: &AugmentationConfig) -> ApiResult<()> {
        self.store.ontology(corpus_id)?;
        if cfg.n_target == 0 {
            return Err(ApiError::invalid("n_target must be at least 1"));
        }
        if human_seeds(&self.store, corpus_id)?.is_empty() {
            return Err(ApiError::conflict(
                "no_seeds",
                format!("corpus {corpus_id} has no human seed labels; label at least one document before augmenting"),
            ));
        }
        Ok(())
    }

    pub fn augment_now(&self, corpus_id: &str, cfg: &AugmentationConfig) -> ApiResult {
        self.check_augment(corpus_id, cfg)?;
        let set = ensure_training_set(&self.store, &self.gateway, corpus_id, cfg)?;
        Ok(to_value(set.manifest))
    }

    pub fn augment(self: &Arc<Self>, corpus_id: &str, cfg: AugmentationConfig) -> ApiResult {
        self.check_augment(corpus_id, &cfg)?;
        let corpus = corpus_id.to_string();
        self.spawn_task(TaskKind::Augment, corpus_id, move |app| app.augment_now(&corpus, &cfg))
    }

    pub fn dataset(&self, dataset_id: &str) -> ApiResult {
        Ok(to_value(TrainingSet::load(&self.store, dataset_id)?.manifest))
    }

    // -- training -------------------------------------------------------------

    fn submit_training(&self, body: &TrainBody) -> ApiResult<String> {
        let set = TrainingSet::load(&self.store, &body.dataset_id)?;
        let job = self.jobs.submit(&set, body.hyperparams.clone().unwrap_or_default())?;
        Ok(job.job_id)
    }

    pub fn train_now(&self, body: &TrainBody) -> ApiResult {
        let id = self.submit_training(body)?;
        self.jobs.run(&id)?;
        Ok(to_value(self.jobs.status(&id)?))
    }

    pub fn train(self: &Arc<Self>, body: &TrainBody) -> ApiResult {
        let id = self.submit_training(body)?;
        let app = self.clone();
        let job = id.clone();
        self.pool.submit(Box::new(move || {
            if let Err(e) = app.jobs.run(&job) {
                tracing::error!("training {job}: {e}");
            }
        }));
        Ok(to_value(self.jobs.status(&id)?))
    }

    /// Training jobs and background tasks share one polling endpoint.
    pub fn job(&self, id: &str) -> ApiResult {
        if id.starts_with("task-") {
            return Ok(to_value(self.load_task(id)?));
        }
        Ok(to_value(self.jobs.status(id)?))
    }

    // -- extraction -------------------------------------------------------------

    fn run_extract(&self, corpus_id: &str, body: &ExtractBody) -> ApiResult {
        let extractor = build_extractor(&body.extractor, &self.store, corpus_id, &self.gateway, &self.jobs)?;
        let workers = body.workers.unwrap_or(self.config.extract_workers);
        let table = extract_batch(&self.store, extractor.as_ref(), corpus_id, &body.filter, workers)?;
        Ok(table_summary(&table))
    }

    pub fn extract_now(&self, corpus_id: &str, body: &ExtractBody) -> ApiResult {
        self.run_extract(corpus_id, body)
    }

    pub fn extract(self: &Arc<Self>, corpus_id: &str, body: ExtractBody) -> ApiResult {
        // surface a bad spec or unfinished job before queueing
        build_extractor(&body.extractor, &self.store, corpus_id, &self.gateway, &self.jobs)?;
        let corpus = corpus_id.to_string();
        self.spawn_task(TaskKind::Extract, corpus_id, move |app| app.run_extract(&corpus, &body))
    }

    fn load_table(&self, corpus_id: &str, table_id: Option<&str>) -> ApiResult<StructuredTable> {
        Ok(match table_id {
            Some(id) => StructuredTable::load(&self.store, id)?,
            None => StructuredTable::latest(&self.store, corpus_id)?,
        })
    }

    pub fn table(&self, table_id: &str) -> ApiResult {
        Ok(to_value(StructuredTable::load(&self.store, table_id)?))
    }

    pub fn latest_table(&self, corpus_id: &str) -> ApiResult {
        self.store.ontology(corpus_id)?;
        Ok(to_value(StructuredTable::latest(&self.store, corpus_id)?))
    }

    // -- evaluation ---------------------------------------------------------------

    pub fn eval(&self, body: EvalBody) -> ApiResult {
        if body.pred_labels.is_some() || body.gold_labels.is_some() {
            let (Some(pred), Some(gold)) = (&body.pred_labels, &body.gold_labels) else {
                return Err(ApiError::invalid("classification needs both pred_labels and gold_labels"));
            };
            return Ok(to_value(classification_report(pred, gold)));
        }
        let corpus = body.corpus_id.as_deref();
        let gold: BTreeMap<String, Parse> = match (&body.gold, corpus) {
            (Some(records), _) => parses_by_doc(records),
            (None, Some(c)) => human_seeds(&self.store, c)?.into_iter().map(|l| (l.doc_id, l.parse)).collect(),
            (None, None) => return Err(ApiError::invalid("gold labels or a corpus_id are required")),
        };
        let pred: BTreeMap<String, Parse> = match (&body.pred, corpus) {
            (Some(records), _) => parses_by_doc(records),
            (None, Some(c)) => self.load_table(c, body.table_id.as_deref())?.predictions(),
            (None, None) => return Err(ApiError::invalid("predictions, a table_id or a corpus_id are required")),
        };
        let ontology = match (&body.ontology, corpus) {
            (Some(o), _) => o.clone(),
            (None, Some(c)) => self.store.ontology(c)?,
            (None, None) => infer_ontology(gold.values().chain(pred.values()))?,
        };
        let exclude: BTreeSet<String> = body.exclude.into_iter().collect();
        Ok(to_value(field_f1_report(&pred, &gold, &ontology, &exclude)?))
    }

    // -- analysis -------------------------------------------------------------------

    pub fn chat(&self, body: ChatBody) -> ApiResult {
        self.store.ontology(&body.corpus_id)?;
        let table = match self.load_table(&body.corpus_id, body.table_id.as_deref()) {
            Ok(t) => Some(Arc::new(t)),
            Err(e) if e.status == 404 && body.table_id.is_none() => None,
            Err(e) => return Err(e),
        };
        let ctx = AnalysisContext {
            store: &self.store,
            corpus_id: body.corpus_id.clone(),
            table,
            index: Some(self.index(&body.corpus_id)?),
        };
        let mut session = {
            let sessions = self.sessions.lock().unwrap();
            match &body.session_id {
                Some(id) => sessions.get(id).cloned().unwrap_or_else(|| ChatSession::new(id)),
                None => ChatSession::new(""),
            }
        };
        let turn = route_tool_call(&self.gateway, &ctx, &mut session, &body.message);
        if let Some(id) = &body.session_id {
            self.sessions.lock().unwrap().insert(id.clone(), session);
        }
        let turn = turn?;
        let chart = turn.result.as_ref().and_then(|r| r.get("chart")).cloned();
        let mut out = to_value(&turn);
        if let Some(chart) = chart {
            out["chart"] = chart;
        }
        Ok(out)
    }

    pub fn tools(&self) -> ApiResult {
        Ok(tools_json())
    }

    // -- cost ---------------------------------------------------------------------

    pub fn cost_curve(&self, mut body: CurveBody) -> ApiResult {
        body.pricing.get_or_insert_with(|| self.pricing.clone());
        cost_curve(body)
    }

    pub fn cost_estimate(&self, mut body: EstimateBody) -> ApiResult {
        body.pricing.get_or_insert_with(|| self.pricing.clone());
        cost_estimate(body)
    }
}

/// Without pricing in the body the shipped constants apply.
pub fn cost_curve(body: CurveBody) -> ApiResult {
    let pricing = body.pricing.unwrap_or_default();
    pricing.check()?;
    let plans = body.plans.unwrap_or_else(|| vec![PipelinePlan::llm_only(), PipelinePlan::hybrid()]);
    if plans.is_empty() || body.grid.is_empty() {
        return Err(ApiError::invalid("plans and grid must not be empty"));
    }
    let curve = tradeoff_curve(&plans, &pricing, &body.grid)?;
    let mut csv = Vec::new();
    curve.write_csv(&mut csv)?;
    Ok(json!({
        "rows": curve.rows,
        "crossover": curve.crossover,
        "csv": String::from_utf8(csv).expect("csv is utf-8"),
        "chart": curve.chart_spec(),
    }))
}

pub fn cost_estimate(body: EstimateBody) -> ApiResult {
    let pricing = body.pricing.unwrap_or_default();
    pricing.check()?;
    let cost = estimate_cost(&body.plan, &pricing, body.n)?;
    let time = estimate_time(&body.plan, body.n)?;
    Ok(json!({"plan": body.plan.name, "N": body.n, "cost": cost, "time": time}))
}

fn table_summary(table: &StructuredTable) -> Value {
    json!({
        "table_id": table.table_id,
        "corpus_id": table.corpus_id,
        "extractor": table.extractor,
        "ontology_version": table.ontology.version,
        "report": table.report,
        "rows": table.rows.len(),
        "errors": table.records.iter().filter_map(|r| r.error.as_ref().map(|e| json!({"doc_id": r.doc_id, "error": e}))).collect::<Vec<_>>(),
    })
}

/// Free-text fields named after every key seen, multi-valued where any
/// record holds more than one value.
fn infer_ontology<'a>(parses: impl Iterator<Item = &'a Parse>) -> ApiResult<Ontology> {
    let mut multi: BTreeMap<String, bool> = BTreeMap::new();
    for p in parses {
        for (f, vs) in p.iter() {
            *multi.entry(f.to_string()).or_default() |= vs.len() > 1;
        }
    }
    if multi.is_empty() {
        return Err(ApiError::invalid("no fields found in the labels; pass an ontology"));
    }
    let fields = multi
        .into_iter()
        .map(|(name, m)| {
            let f = FieldSpec::new(&name, FieldKind::FreeText);
            if m { f.multi() } else { f }
        })
        .collect();
    Ontology::new("", fields).map_err(|e| ApiError::invalid(e.to_string()))
}

pub fn tools_json() -> Value {
    Value::Array(
        tool_schemas()
            .iter()
            .map(|t| json!({"name": t.name, "description": t.description, "parameters": t.parameters_json_schema()}))
            .collect(),
    )
}

/// Reads a labels-export JSONL file.
pub fn read_label_records(path: &Path) -> ApiResult<Vec<LabelRecord>> {
    let file = fs::File::open(path).map_err(|e| ApiError::bad_request(format!("{}: {e}", path.display())))?;
    structa_core::store::read_label_records(file).map_err(ApiError::from)
}
