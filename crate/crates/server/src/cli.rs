//! Headless access to every API operation. `--json` prints exactly the
//! JSON the matching endpoint returns. Exit codes: 0 success, 1 domain
//! error, 2 usage error.

use std::collections::{BTreeMap, BTreeSet};
use std::ffi::OsString;
use std::io::{Read, Write};
use std::path::{Path, PathBuf};
use std::sync::Arc;

use clap::{Args, Parser, Subcommand};
use serde::de::DeserializeOwned;
use serde_json::{json, Value};
use structa_core::engine::{DocFilter, ExtractorKind, ExtractorSpec, Hyperparams};
use structa_core::labeler::AugmentationConfig;
use structa_core::model::{Ontology, Parse, Provenance};

use crate::api::{self, ApiResult, App, DocumentQuery};
use crate::config::Config;
use crate::error::ApiError;

#[derive(Debug, Parser)]
#[command(name = "structa", version, about = "Structure a document corpus with LLM labels distilled into a small extractor")]
pub struct Cli {
    /// Config file (TOML, or JSON when it ends in .json).
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Overrides the configured data directory.
    #[arg(long, global = true)]
    pub data_dir: Option<PathBuf>,
    /// Print the raw JSON result.
    #[arg(long, global = true)]
    pub json: bool,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Ingest a JSONL file of {body, doc_id?, meta?} objects ("-" for stdin).
    Ingest {
        file: PathBuf,
        #[arg(long)]
        corpus: Option<String>,
    },
    /// Show, replace or edit a corpus ontology.
    Ontology {
        corpus: String,
        /// Replace with the ontology in this JSON file.
        #[arg(long, conflicts_with = "edit")]
        set: Option<PathBuf>,
        /// Apply one edit, e.g. '{"op":"remove_field","name":"Dist"}'.
        #[arg(long)]
        edit: Option<String>,
    },
    /// Manage labels.
    #[command(subcommand)]
    Label(LabelCmd),
    /// BM25 search, or list documents when no terms or filters are given.
    Search {
        corpus: String,
        terms: Vec<String>,
        #[arg(long)]
        top_k: Option<usize>,
        /// Metadata filter key=value; repeatable.
        #[arg(long = "filter", value_parser = parse_kv)]
        filters: Vec<(String, String)>,
    },
    /// Label documents with the LLM until the training set has n-target examples.
    Augment {
        corpus: String,
        #[arg(long)]
        n_target: usize,
        #[arg(long)]
        shots: Option<usize>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        max_repair_attempts: Option<u32>,
        #[arg(long)]
        model: Option<String>,
    },
    /// Fine-tune on a training set and wait for the job to finish.
    Train(TrainArgs),
    /// Run an extractor over a corpus into a structured table.
    Extract(ExtractArgs),
    /// Score predictions against gold labels.
    Eval(EvalArgs),
    /// Ask an analysis question about a corpus.
    Analyze {
        corpus: String,
        message: Vec<String>,
        #[arg(long)]
        session: Option<String>,
        #[arg(long)]
        table: Option<String>,
    },
    /// Cost and time model.
    #[command(subcommand)]
    Cost(CostCmd),
    /// Run the HTTP service.
    Serve {
        #[arg(long)]
        port: Option<u16>,
        #[arg(long)]
        host: Option<String>,
    },
    /// Show a training job or background task.
    Job { id: String },
    /// Show a training set manifest.
    Dataset { id: String },
    /// Show a structured table; the corpus's latest with --corpus.
    Table {
        id: Option<String>,
        #[arg(long, conflicts_with = "id")]
        corpus: Option<String>,
    },
    /// List corpora.
    Corpora,
    /// Write a synthetic sample dataset: documents, ontology, gold and seed
    /// labels, mock LLM rules, patterns and a config.
    Synth {
        out: PathBuf,
        #[arg(long, default_value_t = 200)]
        docs: usize,
        #[arg(long, default_value_t = 4)]
        seeds: usize,
        #[arg(long, default_value_t = 7)]
        seed: u64,
    },
    /// Print the analysis tool schemas.
    Tools,
    /// Print the endpoint schema.
    Schema,
    /// Deterministic stand-in for the trainer, for tests and demos.
    #[command(hide = true, disable_help_flag = true)]
    StubTrainer {
        #[arg(trailing_var_arg = true, allow_hyphen_values = true)]
        args: Vec<String>,
    },
}

#[derive(Debug, Subcommand)]
pub enum LabelCmd {
    /// Create or replace one document's label.
    Set {
        corpus: String,
        doc_id: String,
        /// Parse JSON, e.g. '{"BAC":["0.08"]}'.
        parse: String,
        #[arg(long, value_parser = parse_provenance)]
        provenance: Option<Provenance>,
        #[arg(long)]
        labeler: Option<String>,
    },
    /// List current labels.
    List {
        corpus: String,
        #[arg(long, value_parser = parse_provenance)]
        provenance: Option<Provenance>,
    },
    /// Import a labels JSONL file.
    Import {
        corpus: String,
        file: PathBuf,
        #[arg(long, default_value = "import")]
        labeler: String,
    },
    /// Export labels as JSONL to stdout.
    Export {
        corpus: String,
        #[arg(long, value_parser = parse_provenance)]
        provenance: Option<Provenance>,
    },
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    pub dataset_id: String,
    /// Hyperparameters JSON file; flags override it.
    #[arg(long)]
    pub hyperparams: Option<PathBuf>,
    #[arg(long)]
    pub epochs: Option<u32>,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub batch_size: Option<u32>,
    #[arg(long)]
    pub adapter_rank: Option<u32>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub base_model: Option<String>,
}

#[derive(Debug, Args)]
pub struct ExtractArgs {
    pub corpus: String,
    /// Full extractor spec as JSON (file path or inline).
    #[arg(long, conflicts_with_all = ["kind", "model_ref", "patterns"])]
    pub spec: Option<String>,
    #[arg(long, value_parser = parse_kind)]
    pub kind: Option<ExtractorKind>,
    /// Training job id, LLM model id or rule-table path.
    #[arg(long)]
    pub model_ref: Option<String>,
    /// Pattern table JSON file mapping field to regex.
    #[arg(long)]
    pub patterns: Option<PathBuf>,
    #[arg(long)]
    pub shots: Option<usize>,
    #[arg(long)]
    pub doc_id: Vec<String>,
    #[arg(long = "filter", value_parser = parse_kv)]
    pub filters: Vec<(String, String)>,
    #[arg(long)]
    pub workers: Option<usize>,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    /// Predictions as labels JSONL.
    #[arg(long)]
    pub pred: Option<PathBuf>,
    /// Gold labels as labels JSONL.
    #[arg(long)]
    pub gold: Option<PathBuf>,
    /// Ontology JSON; inferred from the labels when absent.
    #[arg(long)]
    pub ontology: Option<PathBuf>,
    /// Take the ontology, gold labels and latest table from this corpus.
    #[arg(long)]
    pub corpus: Option<String>,
    #[arg(long)]
    pub table: Option<String>,
    /// Field to leave out of the average; repeatable.
    #[arg(long)]
    pub exclude: Vec<String>,
    /// Classification mode: JSON object doc_id -> [labels].
    #[arg(long, requires = "gold_labels")]
    pub pred_labels: Option<PathBuf>,
    #[arg(long, requires = "pred_labels")]
    pub gold_labels: Option<PathBuf>,
    /// Also write the per-field report as CSV.
    #[arg(long)]
    pub csv: Option<PathBuf>,
}

#[derive(Debug, Subcommand)]
pub enum CostCmd {
    /// Tradeoff curve over corpus sizes.
    Curve {
        /// JSON array of plans; defaults to llm_only and hybrid.
        #[arg(long)]
        plans: Option<PathBuf>,
        /// Comma-separated corpus sizes, e.g. 1e3,1e4,1e5.
        #[arg(long, value_parser = parse_grid)]
        grid: Grid,
        #[arg(long)]
        pricing: Option<PathBuf>,
        /// Write the curve CSV here.
        #[arg(long)]
        csv: Option<PathBuf>,
        /// Write the chart spec JSON here.
        #[arg(long)]
        chart: Option<PathBuf>,
    },
    /// One plan at one corpus size.
    Estimate {
        /// Plan JSON file, or the name llm_only / hybrid.
        #[arg(long)]
        plan: String,
        #[arg(long = "n")]
        n: i64,
        #[arg(long)]
        pricing: Option<PathBuf>,
    },
}

fn parse_kv(s: &str) -> Result<(String, String), String> {
    s.split_once('=').map(|(k, v)| (k.to_string(), v.to_string())).ok_or_else(|| format!("expected key=value, got {s:?}"))
}

fn parse_provenance(s: &str) -> Result<Provenance, String> {
    serde_json::from_value(Value::String(s.into())).map_err(|_| format!("provenance must be human or llm, not {s:?}"))
}

fn parse_kind(s: &str) -> Result<ExtractorKind, String> {
    serde_json::from_value(Value::String(s.into()))
        .map_err(|_| format!("kind must be pattern_table, llm_fewshot or distilled, not {s:?}"))
}

#[derive(Debug, Clone)]
pub struct Grid(pub Vec<u64>);

fn parse_grid(s: &str) -> Result<Grid, String> {
    s.split(',')
        .map(|p| {
            let v: f64 = p.trim().parse().map_err(|_| format!("not a number: {p:?}"))?;
            if v.is_finite() && v >= 0.0 && v.fract() == 0.0 && v <= u64::MAX as f64 {
                Ok(v as u64)
            } else {
                Err(format!("grid sizes must be non-negative integers, got {p:?}"))
            }
        })
        .collect::<Result<_, _>>()
        .map(Grid)
}

fn read_bytes(path: &Path) -> ApiResult<Vec<u8>> {
    if path == Path::new("-") {
        let mut buf = Vec::new();
        std::io::stdin().read_to_end(&mut buf)?;
        return Ok(buf);
    }
    std::fs::read(path).map_err(|e| ApiError::bad_request(format!("{}: {e}", path.display())))
}

fn read_json<T: DeserializeOwned>(path: &Path) -> ApiResult<T> {
    serde_json::from_slice(&read_bytes(path)?).map_err(|e| ApiError::bad_request(format!("{}: {e}", path.display())))
}

/// Inline JSON, or a path to a JSON file.
fn inline_or_file<T: DeserializeOwned>(arg: &str) -> ApiResult<T> {
    if arg.trim_start().starts_with(['{', '[']) {
        serde_json::from_str(arg).map_err(ApiError::from)
    } else {
        read_json(Path::new(arg))
    }
}

/// What a command produced: the JSON result and a human rendering.
struct Output {
    value: Value,
    text: Option<String>,
}

impl From<Value> for Output {
    fn from(value: Value) -> Self {
        Output { value, text: None }
    }
}

pub fn run<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 2 } else { 0 };
        }
    };
    if let Command::StubTrainer { args } = &cli.command {
        return structa_core::engine::stub::run_cli(args);
    }
    let _ = tracing_subscriber::fmt()
        .with_env_filter(tracing_subscriber::EnvFilter::try_from_default_env().unwrap_or_else(|_| "warn".into()))
        .with_writer(std::io::stderr)
        .try_init();

    let mut config = match &cli.config {
        Some(path) => match Config::load(path) {
            Ok(c) => c,
            Err(e) => {
                eprintln!("error: {e}");
                return 2;
            }
        },
        None => Config::default(),
    };
    if let Some(dir) = &cli.data_dir {
        config.data_dir = dir.clone();
    }
    match dispatch(cli.command, config) {
        Ok(out) => {
            let text = match (cli.json, out.text) {
                (true, _) => serde_json::to_string(&out.value).expect("json") + "\n",
                (false, Some(t)) => t,
                (false, None) => serde_json::to_string_pretty(&out.value).expect("json") + "\n",
            };
            // a closed pipe (`| head`) is not an error
            let mut stdout = std::io::stdout().lock();
            let _ = stdout.write_all(text.as_bytes()).and_then(|()| stdout.flush());
            0
        }
        Err(e) => {
            if cli.json {
                eprintln!("{}", serde_json::to_string(&e).expect("json"));
            } else {
                eprintln!("error: {}", e.message);
                if !e.detail.is_null() {
                    eprintln!("{}", serde_json::to_string_pretty(&e.detail).expect("json"));
                }
            }
            1
        }
    }
}

fn open(config: Config) -> ApiResult<Arc<App>> {
    App::open(config).map_err(|e| ApiError::new(500, "startup", e))
}

fn dispatch(command: Command, mut config: Config) -> ApiResult<Output> {
    // commands that need no data directory
    match &command {
        Command::Tools => return Ok(api::tools_json().into()),
        Command::Schema => return Ok(crate::schema::openapi().into()),
        Command::Cost(cmd) => return cost(cmd, &config),
        Command::Synth { out, docs, seeds, seed } => return synth(out, *docs, *seeds, *seed),
        _ => {}
    }
    if let Command::Serve { port, host } = &command {
        if let Some(p) = port {
            config.port = *p;
        }
        if let Some(h) = host {
            config.host = h.clone();
        }
        let app = open(config)?;
        let rt = tokio::runtime::Runtime::new()?;
        rt.block_on(crate::http::serve(app))?;
        return Ok(json!({"stopped": true}).into());
    }
    let app = open(config)?;
    let out: Output = match command {
        Command::Ingest { file, corpus } => app.ingest(&read_bytes(&file)?, corpus.as_deref())?.into(),
        Command::Ontology { corpus, set, edit } => match (set, edit) {
            (Some(path), _) => app.put_ontology(&corpus, read_json::<Value>(&path)?)?.into(),
            (None, Some(e)) => app.put_ontology(&corpus, inline_or_file::<Value>(&e)?)?.into(),
            (None, None) => app.ontology(&corpus)?.into(),
        },
        Command::Label(cmd) => label(&app, cmd)?,
        Command::Search { corpus, terms, top_k, filters } => {
            let q = DocumentQuery {
                query: (!terms.is_empty()).then(|| terms.join(" ")),
                top_k,
                filters: filters.into_iter().collect(),
                offset: 0,
                limit: None,
            };
            let v = app.documents(&corpus, &q)?;
            let text = v.get("hits").and_then(Value::as_array).map(|hits| {
                hits.iter()
                    .enumerate()
                    .map(|(i, h)| format!("{:>3}  {:<20}  {:.4}\n", i + 1, h["doc_id"].as_str().unwrap_or(""), h["score"].as_f64().unwrap_or(0.0)))
                    .collect()
            });
            Output { value: v, text }
        }
        Command::Augment { corpus, n_target, shots, seed, max_repair_attempts, model } => {
            let mut cfg = AugmentationConfig::new(n_target);
            if let Some(s) = shots {
                cfg.n_seed_shots = s;
            }
            if let Some(s) = seed {
                cfg.seed = s;
            }
            if let Some(m) = max_repair_attempts {
                cfg.max_repair_attempts = m;
            }
            cfg.labeling_model_id = model;
            app.augment_now(&corpus, &cfg)?.into()
        }
        Command::Train(args) => train(&app, args)?,
        Command::Extract(args) => extract(&app, args)?,
        Command::Eval(args) => eval(&app, args)?,
        Command::Analyze { corpus, message, session, table } => {
            let body = api::ChatBody { corpus_id: corpus, message: message.join(" "), session_id: session, table_id: table };
            let v = app.chat(body)?;
            let text = v["answer"].as_str().map(|a| format!("{a}\n"));
            Output { value: v, text }
        }
        Command::Job { id } => app.job(&id)?.into(),
        Command::Dataset { id } => app.dataset(&id)?.into(),
        Command::Table { id, corpus } => match (id, corpus) {
            (Some(id), _) => app.table(&id)?.into(),
            (None, Some(c)) => app.latest_table(&c)?.into(),
            (None, None) => return Err(ApiError::bad_request("give a table id or --corpus")),
        },
        Command::Corpora => app.list_corpora()?.into(),
        Command::Tools | Command::Schema | Command::Cost(_) | Command::Synth { .. } | Command::Serve { .. } | Command::StubTrainer { .. } => {
            unreachable!("handled above")
        }
    };
    Ok(out)
}

fn label(app: &App, cmd: LabelCmd) -> ApiResult<Output> {
    Ok(match cmd {
        LabelCmd::Set { corpus, doc_id, parse, provenance, labeler } => {
            let parse: Parse = inline_or_file(&parse)?;
            app.put_label(&corpus, &doc_id, api::LabelBody { parse, provenance, labeler })?.into()
        }
        LabelCmd::List { corpus, provenance } => app.labels(&corpus, provenance)?.into(),
        LabelCmd::Import { corpus, file, labeler } => app.import_labels(&corpus, &read_bytes(&file)?, &labeler)?.into(),
        LabelCmd::Export { corpus, provenance } => {
            let mut buf = Vec::new();
            let n = app.store.export_labels(&corpus, provenance, &mut buf)?;
            Output {
                value: json!({"exported": n, "jsonl": String::from_utf8_lossy(&buf)}),
                text: Some(String::from_utf8_lossy(&buf).into_owned()),
            }
        }
    })
}

fn train(app: &App, args: TrainArgs) -> ApiResult<Output> {
    let mut hp: Hyperparams = match &args.hyperparams {
        Some(p) => read_json(p)?,
        None => Hyperparams::default(),
    };
    if let Some(v) = args.epochs {
        hp.epochs = v;
    }
    if let Some(v) = args.lr {
        hp.lr = v;
    }
    if let Some(v) = args.batch_size {
        hp.batch_size = v;
    }
    if let Some(v) = args.adapter_rank {
        hp.adapter_rank = v;
    }
    if let Some(v) = args.seed {
        hp.seed = v;
    }
    if let Some(v) = args.base_model {
        hp.base_model = v;
    }
    let v = app.train_now(&api::TrainBody { dataset_id: args.dataset_id, hyperparams: Some(hp) })?;
    // a job that ended badly is a domain failure even though the call worked
    let state = v["state"].as_str().unwrap_or_default().to_string();
    if state != "done" {
        let msg = v["message"].as_str().unwrap_or("training did not finish").to_string();
        return Err(ApiError::new(422, "training_failed", format!("job {} ended {state}: {msg}", v["job_id"].as_str().unwrap_or("")))
            .with_detail(v));
    }
    Ok(v.into())
}

fn extract(app: &App, args: ExtractArgs) -> ApiResult<Output> {
    let spec: ExtractorSpec = match (&args.spec, args.kind) {
        (Some(s), _) => inline_or_file(s)?,
        (None, Some(kind)) => {
            let mut spec = ExtractorSpec::new(kind, args.model_ref.as_deref().unwrap_or(""));
            if let Some(p) = &args.patterns {
                spec.patterns = read_json::<BTreeMap<String, String>>(p)?;
            }
            spec.shots = args.shots;
            spec
        }
        (None, None) => return Err(ApiError::bad_request("give --kind or --spec")),
    };
    let filter = DocFilter {
        doc_ids: (!args.doc_id.is_empty()).then_some(args.doc_id),
        meta: args.filters.into_iter().collect(),
    };
    let v = app.extract_now(&args.corpus, &api::ExtractBody { extractor: spec, filter, workers: args.workers })?;
    Ok(v.into())
}

fn eval(app: &App, args: EvalArgs) -> ApiResult<Output> {
    let records = |p: &Option<PathBuf>| p.as_deref().map(api::read_label_records).transpose();
    let sets = |p: &Option<PathBuf>| p.as_deref().map(read_json::<BTreeMap<String, BTreeSet<String>>>).transpose();
    let body = api::EvalBody {
        corpus_id: args.corpus,
        ontology: args.ontology.as_deref().map(read_json::<Ontology>).transpose()?,
        pred: records(&args.pred)?,
        table_id: args.table,
        gold: records(&args.gold)?,
        exclude: args.exclude,
        pred_labels: sets(&args.pred_labels)?,
        gold_labels: sets(&args.gold_labels)?,
    };
    let v = app.eval(body)?;
    let text = v.get("per_field").and_then(Value::as_array).map(|fields| {
        let mut s = format!("{:<24} {:>9} {:>9} {:>9} {:>8}\n", "field", "precision", "recall", "f1", "support");
        for f in fields {
            s += &format!(
                "{:<24} {:>9.4} {:>9.4} {:>9.4} {:>8}\n",
                f["field"].as_str().unwrap_or(""),
                f["precision"].as_f64().unwrap_or(0.0),
                f["recall"].as_f64().unwrap_or(0.0),
                f["f1"].as_f64().unwrap_or(0.0),
                f["support"]
            );
        }
        s + &format!("average_f1 {:.4}\n", v["average_f1"].as_f64().unwrap_or(0.0))
    });
    if let Some(path) = &args.csv {
        let report: structa_core::eval::EvalReport = serde_json::from_value(v.clone())
            .map_err(|_| ApiError::bad_request("--csv applies to field reports only"))?;
        let f = std::fs::File::create(path)?;
        report.write_csv(f)?;
    }
    Ok(Output { value: v, text })
}

fn cost(cmd: &CostCmd, config: &Config) -> ApiResult<Output> {
    // a bare App would need a data directory; cost needs only pricing
    let pricing = |p: &Option<PathBuf>| -> ApiResult<structa_core::cost::PricingConfig> {
        match p.as_ref().or(config.pricing.as_ref()) {
            Some(path) => Ok(structa_core::cost::PricingConfig::load(path)?),
            None => Ok(Default::default()),
        }
    };
    match cmd {
        CostCmd::Curve { plans, grid, pricing: p, csv, chart } => {
            let body = api::CurveBody {
                plans: plans.as_deref().map(read_json).transpose()?,
                grid: grid.0.clone(),
                pricing: Some(pricing(p)?),
            };
            let v = api::cost_curve(body)?;
            if let Some(path) = csv {
                std::fs::write(path, v["csv"].as_str().unwrap_or(""))?;
            }
            if let Some(path) = chart {
                std::fs::write(path, serde_json::to_vec_pretty(&v["chart"]).expect("json"))?;
            }
            let mut text = v["csv"].as_str().unwrap_or("").to_string();
            text += &match v["crossover"].as_object() {
                Some(c) => format!("crossover: {}\n", Value::Object(c.clone())),
                None => "crossover: none\n".into(),
            };
            Ok(Output { value: v, text: Some(text) })
        }
        CostCmd::Estimate { plan, n, pricing: p } => {
            let plan = match plan.as_str() {
                "llm_only" => structa_core::cost::PipelinePlan::llm_only(),
                "hybrid" => structa_core::cost::PipelinePlan::hybrid(),
                path => read_json(Path::new(path))?,
            };
            Ok(api::cost_estimate(api::EstimateBody { plan, n: *n, pricing: Some(pricing(p)?) })?.into())
        }
    }
}

const SAMPLE_CONFIG: &str = r#"# Sample service config; paths are relative to this file.
port = 8080
data_dir = "data"
trainer = ["structa", "stub-trainer"]

[llm]
backend = "mock"
mock_rules = "mock_rules.json"
"#;

fn synth(out: &Path, n_docs: usize, n_seeds: usize, seed: u64) -> ApiResult<Output> {
    use structa_core::model::LabelRecord;
    use structa_core::synth;

    let docs = synth::generate_corpus(&synth::SynthConfig::new(n_docs, seed));
    let jsonl = |records: &[LabelRecord]| -> String {
        records.iter().map(|r| serde_json::to_string(r).expect("json") + "\n").collect()
    };
    let gold: Vec<LabelRecord> = docs
        .iter()
        .map(|d| LabelRecord { doc_id: d.document.doc_id.clone(), provenance: Provenance::Human, parse: d.truth.clone() })
        .collect();
    let patterns: BTreeMap<&str, &str> = synth::field_patterns().into_iter().collect();
    std::fs::create_dir_all(out)?;
    let files = [
        ("documents.jsonl", synth::to_jsonl(&docs)),
        ("ontology.json", pretty(&synth::drunk_driving_ontology())),
        ("gold.jsonl", jsonl(&gold)),
        ("seeds.jsonl", jsonl(&gold[..n_seeds.min(gold.len())])),
        ("mock_rules.json", pretty(&synth::demo_rules())),
        ("patterns.json", pretty(&patterns)),
        ("structa.toml", SAMPLE_CONFIG.to_string()),
    ];
    for (name, text) in &files {
        std::fs::write(out.join(name), text)?;
    }
    let written: Vec<&str> = files.iter().map(|(n, _)| *n).collect();
    Ok(json!({"dir": out, "documents": docs.len(), "seeds": n_seeds.min(docs.len()), "files": written}).into())
}

fn pretty<T: serde::Serialize>(v: &T) -> String {
    serde_json::to_string_pretty(v).expect("json") + "\n"
}
