//! Statistics over structured tables, exposed as LLM-callable tools.

use std::collections::BTreeMap;
use std::fs::OpenOptions;
use std::io::Write;
use std::sync::Arc;

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use thiserror::Error;

use crate::engine::{EngineError, StructuredTable};
use crate::eval::numeric_value;
use crate::llm::{
    fallback_search_terms, ChatRequest, Gateway, LlmError, Message, ParamType, Purpose, Reply, ToolCall, ToolParam,
    ToolSchema,
};
use crate::model::{FieldKind, FieldSpec};
use crate::search::{build_index, SearchError, SearchIndex, SearchQuery};
use crate::store::{Store, StoreError};

#[derive(Debug, Error)]
pub enum AnalysisError {
    #[error("unknown field {0}")]
    UnknownField(String),
    #[error("field {field} is {kind:?}, not numeric; only count applies")]
    NotQuantitative { field: String, kind: FieldKind },
    #[error("field {0} has no numeric values")]
    NoValues(String),
    #[error("invalid arguments: {0}")]
    InvalidArgs(String),
    #[error("no structured table is bound to this session; run extraction first")]
    NoTable,
    #[error("tool call failed validation twice: {0}")]
    Routing(String),
    #[error(transparent)]
    Llm(#[from] LlmError),
    #[error(transparent)]
    Search(#[from] SearchError),
    #[error(transparent)]
    Store(#[from] StoreError),
    #[error(transparent)]
    Engine(#[from] EngineError),
}

type Result<T> = std::result::Result<T, AnalysisError>;

fn field_spec<'a>(table: &'a StructuredTable, name: &str) -> Result<&'a FieldSpec> {
    table.ontology.field(name).ok_or_else(|| AnalysisError::UnknownField(name.to_string()))
}

fn cell<'a>(row: &'a crate::engine::TableRow, field: &str) -> &'a [String] {
    row.values.get(field).map(Vec::as_slice).unwrap_or(&[])
}

// ---------------------------------------------------------------------------
// filter
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FilterOp {
    Eq,
    Ne,
    Lt,
    Le,
    Gt,
    Ge,
    Contains,
    Exists,
}

impl FilterOp {
    const NAMES: [&'static str; 8] = ["eq", "ne", "lt", "le", "gt", "ge", "contains", "exists"];
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FilterResult {
    pub field: String,
    pub op: FilterOp,
    pub value: Option<String>,
    pub count: usize,
    pub rows: Vec<crate::engine::TableRow>,
}

/// Rows with at least one value of `field` satisfying `op value`. Order
/// comparisons are numeric and need a quantitative field; equality compares
/// normalized text.
pub fn filter(table: &StructuredTable, field: &str, op: FilterOp, value: Option<&str>, limit: Option<usize>) -> Result<FilterResult> {
    let spec = field_spec(table, field)?;
    let want = match (op, value) {
        (FilterOp::Exists, _) => None,
        (_, None) => return Err(AnalysisError::InvalidArgs(format!("{op:?} needs a value"))),
        (_, Some(v)) => Some(crate::eval::normalize(v, spec.kind)),
    };
    let ordered = matches!(op, FilterOp::Lt | FilterOp::Le | FilterOp::Gt | FilterOp::Ge);
    let bound = if ordered {
        if !spec.kind.is_quantitative() {
            return Err(AnalysisError::NotQuantitative { field: field.to_string(), kind: spec.kind });
        }
        let w = want.as_deref().unwrap_or_default();
        Some(numeric_value(w, spec.kind).ok_or_else(|| AnalysisError::InvalidArgs(format!("{w:?} is not a number")))?)
    } else {
        None
    };
    let test = |v: &String| -> bool {
        let w = want.as_deref().unwrap_or_default();
        match op {
            FilterOp::Exists => true,
            FilterOp::Eq => v == w,
            FilterOp::Ne => v != w,
            FilterOp::Contains => v.contains(w),
            _ => {
                let (Some(x), Some(b)) = (numeric_value(v, spec.kind), bound) else { return false };
                match op {
                    FilterOp::Lt => x < b,
                    FilterOp::Le => x <= b,
                    FilterOp::Gt => x > b,
                    _ => x >= b,
                }
            }
        }
    };
    let matching: Vec<_> = table.rows.iter().filter(|r| cell(r, field).iter().any(test)).cloned().collect();
    let count = matching.len();
    Ok(FilterResult {
        field: field.to_string(),
        op,
        value: value.map(str::to_string),
        count,
        rows: matching.into_iter().take(limit.unwrap_or(usize::MAX)).collect(),
    })
}

// ---------------------------------------------------------------------------
// aggregate
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stat {
    Count,
    Mean,
    Median,
    Sum,
    Min,
    Max,
}

impl Stat {
    const NAMES: [&'static str; 6] = ["count", "mean", "median", "sum", "min", "max"];

    /// `None` for an empty sample, except count and sum.
    pub fn apply(self, values: &[f64]) -> Option<f64> {
        let n = values.len();
        match self {
            Stat::Count => Some(n as f64),
            Stat::Sum => Some(values.iter().sum()),
            _ if n == 0 => None,
            Stat::Mean => Some(values.iter().sum::<f64>() / n as f64),
            Stat::Min => values.iter().copied().reduce(f64::min),
            Stat::Max => values.iter().copied().reduce(f64::max),
            Stat::Median => {
                let mut v = values.to_vec();
                v.sort_by(f64::total_cmp);
                Some(if n % 2 == 1 { v[n / 2] } else { (v[n / 2 - 1] + v[n / 2]) / 2.0 })
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AggRow {
    /// `None` collects rows without a group value.
    pub group: Option<String>,
    pub value: Option<f64>,
    pub n: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AggregateResult {
    pub target: String,
    pub stat: Stat,
    pub group_by: Option<String>,
    pub rows: Vec<AggRow>,
    /// Values skipped because they could not be read as numbers.
    pub excluded: usize,
}

/// Every value of a multi-valued cell counts. Rows with no `target` value
/// contribute nothing; a row lacking a group value lands in the `None` group.
pub fn aggregate(table: &StructuredTable, group_by: Option<&str>, target: &str, stat: Stat) -> Result<AggregateResult> {
    let spec = field_spec(table, target)?;
    if stat != Stat::Count && !spec.kind.is_quantitative() {
        return Err(AnalysisError::NotQuantitative { field: target.to_string(), kind: spec.kind });
    }
    if let Some(g) = group_by {
        field_spec(table, g)?;
    }
    let mut groups: BTreeMap<Option<String>, Vec<f64>> = BTreeMap::new();
    let mut excluded = 0;
    for row in &table.rows {
        let values = cell(row, target);
        if values.is_empty() {
            continue;
        }
        let nums: Vec<f64> = if stat == Stat::Count {
            vec![1.0; values.len()]
        } else {
            let nums: Vec<f64> = values.iter().filter_map(|v| numeric_value(v, spec.kind)).collect();
            excluded += values.len() - nums.len();
            nums
        };
        let keys: Vec<Option<String>> = match group_by {
            None => vec![None],
            Some(g) => {
                let mut ks: Vec<Option<String>> = cell(row, g).iter().cloned().map(Some).collect();
                ks.sort();
                ks.dedup();
                if ks.is_empty() {
                    vec![None]
                } else {
                    ks
                }
            }
        };
        for k in keys {
            groups.entry(k).or_default().extend(&nums);
        }
    }
    let rows = groups
        .into_iter()
        .map(|(group, vals)| AggRow { group, value: stat.apply(&vals), n: vals.len() })
        .collect();
    Ok(AggregateResult { target: target.to_string(), stat, group_by: group_by.map(str::to_string), rows, excluded })
}

// ---------------------------------------------------------------------------
// histogram
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Bins {
    Count(usize),
    Edges(Vec<f64>),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HistBin {
    pub lo: f64,
    pub hi: f64,
    pub count: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HistogramResult {
    pub field: String,
    pub bins: Vec<HistBin>,
    /// Values that counted toward a bin.
    pub n: usize,
    /// Non-numeric values plus values outside explicit edges.
    pub excluded: usize,
    pub chart: Value,
}

/// Index of the bin holding `x`: `[e_i, e_i+1)`, with the last bin closed.
pub fn bin_index(edges: &[f64], x: f64) -> Option<usize> {
    let last = *edges.last()?;
    if x < edges[0] || x > last {
        return None;
    }
    if x == last {
        return Some(edges.len() - 2);
    }
    Some(edges.partition_point(|e| *e <= x) - 1)
}

pub fn histogram(table: &StructuredTable, field: &str, bins: &Bins) -> Result<HistogramResult> {
    let spec = field_spec(table, field)?;
    if !spec.kind.is_quantitative() {
        return Err(AnalysisError::NotQuantitative { field: field.to_string(), kind: spec.kind });
    }
    let mut values = Vec::new();
    let mut excluded = 0;
    for v in table.rows.iter().flat_map(|r| cell(r, field)) {
        match numeric_value(v, spec.kind) {
            Some(x) => values.push(x),
            None => excluded += 1,
        }
    }
    if values.is_empty() {
        return Err(AnalysisError::NoValues(field.to_string()));
    }
    let edges = match bins {
        Bins::Count(0) => return Err(AnalysisError::InvalidArgs("bins must be at least 1".into())),
        Bins::Count(k) => {
            let lo = values.iter().copied().fold(f64::INFINITY, f64::min);
            let hi = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let width = (hi - lo) / *k as f64;
            let mut e: Vec<f64> = (0..*k).map(|i| lo + width * i as f64).collect();
            e.push(hi);
            e
        }
        Bins::Edges(e) => {
            if e.len() < 2 || e.windows(2).any(|w| w[0].partial_cmp(&w[1]) != Some(std::cmp::Ordering::Less)) || e.iter().any(|x| !x.is_finite()) {
                return Err(AnalysisError::InvalidArgs("edges must be at least two increasing numbers".into()));
            }
            e.clone()
        }
    };
    let mut counts = vec![0usize; edges.len() - 1];
    let mut n = 0;
    for x in values {
        // a zero-width range puts everything in the last bin
        match bin_index(&edges, x).or_else(|| (edges[0] == x).then(|| counts.len() - 1)) {
            Some(i) => {
                counts[i] += 1;
                n += 1;
            }
            None => excluded += 1,
        }
    }
    let bins: Vec<HistBin> = counts
        .into_iter()
        .enumerate()
        .map(|(i, count)| HistBin { lo: edges[i], hi: edges[i + 1], count })
        .collect();
    let chart = json!({
        "$schema": "https://vega.github.io/schema/vega-lite/v5.json",
        "title": format!("{field} distribution"),
        "data": {"values": bins},
        "mark": "bar",
        "encoding": {
            "x": {"field": "lo", "type": "quantitative", "bin": {"binned": true}, "title": field},
            "x2": {"field": "hi"},
            "y": {"field": "count", "type": "quantitative"}
        }
    });
    Ok(HistogramResult { field: field.to_string(), bins, n, excluded, chart })
}

// ---------------------------------------------------------------------------
// Tools
// ---------------------------------------------------------------------------

/// What a tool call can see.
pub struct AnalysisContext<'a> {
    pub store: &'a Store,
    pub corpus_id: String,
    pub table: Option<Arc<StructuredTable>>,
    pub index: Option<Arc<SearchIndex>>,
}

impl AnalysisContext<'_> {
    fn table(&self) -> Result<&StructuredTable> {
        self.table.as_deref().ok_or(AnalysisError::NoTable)
    }
}

pub fn tool_schemas() -> Vec<ToolSchema> {
    let strs = |names: &[&str]| ParamType::Enum { values: names.iter().map(|s| s.to_string()).collect() };
    vec![
        ToolSchema {
            name: "filter".into(),
            description: "List structured rows whose field satisfies a condition.".into(),
            parameters: vec![
                ToolParam::required("field", ParamType::String, "field name"),
                ToolParam::required("op", strs(&FilterOp::NAMES), "comparison"),
                ToolParam::optional("value", ParamType::String, "value to compare with, as text"),
                ToolParam::optional("limit", ParamType::Integer, "maximum rows returned"),
            ],
        },
        ToolSchema {
            name: "aggregate".into(),
            description: "Compute a statistic of a field, optionally per group of another field.".into(),
            parameters: vec![
                ToolParam::required("target", ParamType::String, "field to summarize"),
                ToolParam::required("stat", strs(&Stat::NAMES), "statistic"),
                ToolParam::optional("group_by", ParamType::String, "field to group by"),
            ],
        },
        ToolSchema {
            name: "histogram".into(),
            description: "Distribution of a numeric field as equal-width bins or explicit edges.".into(),
            parameters: vec![
                ToolParam::required("field", ParamType::String, "numeric field"),
                ToolParam::optional("bins", ParamType::Integer, "number of equal-width bins (default 10)"),
                ToolParam::optional("edges", ParamType::Array { items: Box::new(ParamType::Number) }, "explicit bin edges"),
            ],
        },
        ToolSchema {
            name: "get_document".into(),
            description: "Fetch one document by id.".into(),
            parameters: vec![ToolParam::required("doc_id", ParamType::String, "document id")],
        },
        ToolSchema {
            name: "search_corpus".into(),
            description: "Full-text search over the corpus.".into(),
            parameters: vec![
                ToolParam::required("query", ParamType::String, "keywords"),
                ToolParam::optional("top_k", ParamType::Integer, "number of hits (default 10)"),
            ],
        },
    ]
}

/// Schema check of a call: known tool and well-typed arguments.
pub fn validate_call(call: &ToolCall) -> std::result::Result<(), String> {
    let schemas = tool_schemas();
    let schema = schemas
        .iter()
        .find(|s| s.name == call.name)
        .ok_or_else(|| format!("unknown tool {:?}; available: filter, aggregate, histogram, get_document, search_corpus", call.name))?;
    schema.validate_args(&call.arguments)
}

fn arg<'v>(args: &'v Value, key: &str) -> Option<&'v Value> {
    args.get(key).filter(|v| !v.is_null())
}

fn arg_str<'v>(args: &'v Value, key: &str) -> Option<&'v str> {
    arg(args, key).and_then(Value::as_str)
}

fn parse_enum<T: serde::de::DeserializeOwned>(args: &Value, key: &str) -> Result<T> {
    serde_json::from_value(arg(args, key).cloned().unwrap_or(Value::Null))
        .map_err(|_| AnalysisError::InvalidArgs(format!("bad {key}")))
}

/// Runs a validated call and returns its JSON result.
pub fn execute_tool(ctx: &AnalysisContext, call: &ToolCall) -> Result<Value> {
    validate_call(call).map_err(AnalysisError::InvalidArgs)?;
    let a = &call.arguments;
    let out = match call.name.as_str() {
        "filter" => {
            let limit = arg(a, "limit").and_then(Value::as_u64).map(|n| n as usize);
            serde_json::to_value(filter(ctx.table()?, arg_str(a, "field").unwrap(), parse_enum(a, "op")?, arg_str(a, "value"), limit)?)
        }
        "aggregate" => serde_json::to_value(aggregate(
            ctx.table()?,
            arg_str(a, "group_by"),
            arg_str(a, "target").unwrap(),
            parse_enum(a, "stat")?,
        )?),
        "histogram" => {
            let bins = match (arg(a, "edges"), arg(a, "bins")) {
                (Some(e), _) => Bins::Edges(e.as_array().unwrap().iter().filter_map(Value::as_f64).collect()),
                (None, Some(b)) => Bins::Count(b.as_u64().unwrap_or(0) as usize),
                (None, None) => Bins::Count(10),
            };
            serde_json::to_value(histogram(ctx.table()?, arg_str(a, "field").unwrap(), &bins)?)
        }
        "get_document" => serde_json::to_value(ctx.store.document(&ctx.corpus_id, arg_str(a, "doc_id").unwrap())?),
        "search_corpus" => {
            let index = match &ctx.index {
                Some(i) => i.clone(),
                None => build_index(ctx.store, &ctx.corpus_id)?,
            };
            let mut terms = fallback_search_terms(arg_str(a, "query").unwrap());
            if terms.is_empty() {
                terms.push(arg_str(a, "query").unwrap().to_string());
            }
            let top_k = arg(a, "top_k").and_then(Value::as_u64).unwrap_or(10) as usize;
            serde_json::to_value(index.search(&SearchQuery::terms(&terms, top_k))?)
        }
        other => return Err(AnalysisError::InvalidArgs(format!("unknown tool {other}"))),
    };
    Ok(out.expect("tool results serialize"))
}

fn num(v: &Value) -> String {
    match v.as_f64() {
        Some(x) if x.fract() == 0.0 && x.abs() < 1e15 => format!("{}", x as i64),
        Some(x) => format!("{x:.4}").trim_end_matches('0').trim_end_matches('.').to_string(),
        None => "n/a".into(),
    }
}

/// Deterministic plain-text answer for a tool result.
pub fn render_result(call: &ToolCall, result: &Value) -> String {
    match call.name.as_str() {
        "aggregate" => {
            let stat = result["stat"].as_str().unwrap_or("");
            let target = result["target"].as_str().unwrap_or("");
            let rows = result["rows"].as_array().cloned().unwrap_or_default();
            let mut lines: Vec<String> = rows
                .iter()
                .map(|r| {
                    let group = r["group"].as_str().map(|g| format!("{g}: ")).unwrap_or_default();
                    format!("{group}{stat} of {target} = {} (n={})", num(&r["value"]), r["n"])
                })
                .collect();
            if lines.is_empty() {
                lines.push(format!("no values for {target}"));
            }
            lines.join("\n")
        }
        "histogram" => {
            let field = result["field"].as_str().unwrap_or("");
            let mut lines = vec![format!("{field} histogram ({} values, {} excluded)", result["n"], result["excluded"])];
            for b in result["bins"].as_array().into_iter().flatten() {
                lines.push(format!("[{}, {}]: {}", num(&b["lo"]), num(&b["hi"]), b["count"]));
            }
            lines.join("\n")
        }
        "filter" => {
            let ids: Vec<&str> = result["rows"].as_array().into_iter().flatten().filter_map(|r| r["doc_id"].as_str()).collect();
            format!("{} matching documents: {}", result["count"], ids.join(", "))
        }
        "get_document" => format!("{}:\n{}", result["doc_id"].as_str().unwrap_or(""), result["body"].as_str().unwrap_or("")),
        "search_corpus" => {
            let hits: Vec<String> = result
                .as_array()
                .into_iter()
                .flatten()
                .map(|h| format!("{} ({}): {}", h["doc_id"].as_str().unwrap_or(""), num(&h["score"]), h["snippet"].as_str().unwrap_or("")))
                .collect();
            if hits.is_empty() {
                "no matching documents".into()
            } else {
                hits.join("\n")
            }
        }
        _ => result.to_string(),
    }
}

// ---------------------------------------------------------------------------
// Chat routing
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TurnLog {
    pub query: String,
    pub call: Option<ToolCall>,
    pub result: Option<Value>,
    pub error: Option<String>,
    pub answer: String,
    pub at: DateTime<Utc>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChatTurn {
    pub call: Option<ToolCall>,
    pub result: Option<Value>,
    pub answer: String,
    /// A corrective re-prompt was needed to get a valid call.
    pub reprompted: bool,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ChatSession {
    pub session_id: String,
    pub log: Vec<TurnLog>,
}

impl ChatSession {
    pub fn new(session_id: &str) -> Self {
        ChatSession { session_id: session_id.to_string(), log: vec![] }
    }

    fn record(&mut self, ctx: &AnalysisContext, entry: TurnLog) {
        if !self.session_id.is_empty() {
            let dir = ctx.store.artifact_dir("sessions");
            if std::fs::create_dir_all(&dir).is_ok() {
                if let Ok(mut f) = OpenOptions::new().create(true).append(true).open(dir.join(format!("{}.jsonl", self.session_id))) {
                    let _ = writeln!(f, "{}", serde_json::to_string(&entry).unwrap());
                }
            }
        }
        self.log.push(entry);
    }
}

fn system_prompt(ctx: &AnalysisContext) -> String {
    let fields = ctx
        .table
        .as_ref()
        .map(|t| {
            t.ontology
                .fields
                .iter()
                .map(|f| format!("{} ({:?})", f.name, f.kind))
                .collect::<Vec<_>>()
                .join(", ")
        })
        .unwrap_or_else(|| "none yet".into());
    format!(
        "You answer questions about a document corpus by calling exactly one tool. \
         Structured fields: {fields}."
    )
}

/// One chat turn: ask the LLM for a tool call, validate it (one corrective
/// re-prompt), run it and phrase the answer. Text-only replies pass through.
pub fn route_tool_call(gateway: &Gateway, ctx: &AnalysisContext, session: &mut ChatSession, user_text: &str) -> Result<ChatTurn> {
    let model = gateway.model(Purpose::Chat).to_string();
    let mut messages = vec![Message::system(system_prompt(ctx)), Message::user(user_text)];
    let mut reprompted = false;
    let call = loop {
        let req = ChatRequest::new(&model, messages.clone()).with_tools(tool_schemas());
        let resp = match gateway.complete(&req) {
            Ok(r) => r,
            Err(e) => {
                session.record(ctx, log_entry(user_text, None, None, Some(e.to_string()), String::new()));
                return Err(e.into());
            }
        };
        let call = match resp.reply {
            Reply::Content(text) => {
                session.record(ctx, log_entry(user_text, None, None, None, text.clone()));
                return Ok(ChatTurn { call: None, result: None, answer: text, reprompted });
            }
            Reply::ToolCall(c) => c,
        };
        match validate_call(&call) {
            Ok(()) => break call,
            Err(problem) if !reprompted => {
                reprompted = true;
                messages.push(Message::assistant(format!("{}{}", call.name, call.arguments)));
                messages.push(Message::user(format!(
                    "That tool call is invalid: {problem}. Call one of the listed tools with valid arguments \
                     to answer: {user_text}"
                )));
            }
            Err(problem) => {
                session.record(ctx, log_entry(user_text, Some(call), None, Some(problem.clone()), String::new()));
                return Err(AnalysisError::Routing(problem));
            }
        }
    };
    let result = match execute_tool(ctx, &call) {
        Ok(r) => r,
        Err(e) => {
            session.record(ctx, log_entry(user_text, Some(call), None, Some(e.to_string()), String::new()));
            return Err(e);
        }
    };
    let answer = if gateway.is_mock() {
        render_result(&call, &result)
    } else {
        phrase_answer(gateway, &model, user_text, &call, &result).unwrap_or_else(|| render_result(&call, &result))
    };
    session.record(ctx, log_entry(user_text, Some(call.clone()), Some(result.clone()), None, answer.clone()));
    Ok(ChatTurn { call: Some(call), result: Some(result), answer, reprompted })
}

fn phrase_answer(gateway: &Gateway, model: &str, user_text: &str, call: &ToolCall, result: &Value) -> Option<String> {
    let req = ChatRequest::new(
        model,
        vec![
            Message::system("Answer the user's question from the tool result. Quote numbers exactly."),
            Message::user(format!("Question: {user_text}\nTool {} returned: {result}", call.name)),
        ],
    );
    gateway.complete(&req).ok()?.content().map(str::to_string)
}

fn log_entry(query: &str, call: Option<ToolCall>, result: Option<Value>, error: Option<String>, answer: String) -> TurnLog {
    TurnLog { query: query.to_string(), call, result, error, answer, at: Utc::now() }
}
