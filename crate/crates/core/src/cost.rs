//! Cost and wall-time estimates for structuring a corpus of N documents,
//! either entirely through the LLM or by distilling into a local model.
//!
//! Every estimate is affine in N: a fixed part (manual labels, LLM labeling
//! calls, training) plus a per-document part (API extraction calls or local
//! inference).

use std::collections::BTreeMap;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use thiserror::Error;

pub const DEFAULT_PRICING_JSON: &str = include_str!("../pricing.default.json");

/// Seconds per LLM call, fitted to 192 labels taking about 636 s.
pub const DEFAULT_SECONDS_PER_CALL: f64 = 3.3125;

#[derive(Debug, Error)]
pub enum CostError {
    #[error("corpus size must be non-negative, got {0}")]
    NegativeN(i64),
    #[error("no price for model {0}")]
    UnknownModel(String),
    #[error("no price for gpu class {0}")]
    UnknownGpu(String),
    #[error("invalid pricing: {0}")]
    Pricing(String),
    #[error("invalid plan {plan}: {reason}")]
    Plan { plan: String, reason: String },
    #[error("empty corpus-size grid")]
    EmptyGrid,
    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ModelPrice {
    pub per_1k_input_tokens_usd: f64,
    pub per_1k_output_tokens_usd: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TokensPerDoc {
    pub input: f64,
    pub output: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PricingConfig {
    #[serde(default)]
    pub version: String,
    pub per_labeled_example_usd: f64,
    pub models: BTreeMap<String, ModelPrice>,
    pub gpu_usd_per_hour: BTreeMap<String, f64>,
    /// Tokens of one extraction call (few-shot prompt + target in, parse out).
    pub tokens_per_doc: TokensPerDoc,
}

impl Default for PricingConfig {
    fn default() -> Self {
        serde_json::from_str(DEFAULT_PRICING_JSON).expect("shipped pricing parses")
    }
}

impl PricingConfig {
    pub fn load(path: &Path) -> Result<Self, CostError> {
        let text = std::fs::read_to_string(path)?;
        let p: PricingConfig = serde_json::from_str(&text).map_err(|e| CostError::Pricing(e.to_string()))?;
        p.check()?;
        Ok(p)
    }

    pub fn check(&self) -> Result<(), CostError> {
        let bad = |v: f64| !(v.is_finite() && v >= 0.0);
        let mut prices = vec![self.per_labeled_example_usd, self.tokens_per_doc.input, self.tokens_per_doc.output];
        prices.extend(self.models.values().flat_map(|m| [m.per_1k_input_tokens_usd, m.per_1k_output_tokens_usd]));
        prices.extend(self.gpu_usd_per_hour.values());
        if prices.into_iter().any(bad) {
            return Err(CostError::Pricing("all prices and token counts must be finite and non-negative".into()));
        }
        Ok(())
    }

    /// Every price set to zero, keeping the model and gpu names.
    pub fn zeroed(&self) -> Self {
        let mut p = self.clone();
        p.per_labeled_example_usd = 0.0;
        p.models.values_mut().for_each(|m| *m = ModelPrice { per_1k_input_tokens_usd: 0.0, per_1k_output_tokens_usd: 0.0 });
        p.gpu_usd_per_hour.values_mut().for_each(|v| *v = 0.0);
        p
    }

    /// Replaces the token estimate with one derived from a corpus: each
    /// prompt carries `n_shots` example documents plus the target.
    pub fn with_corpus_tokens(mut self, mean_body_tokens: f64, n_shots: usize) -> Self {
        self.tokens_per_doc.input = mean_body_tokens * (n_shots as f64 + 1.0);
        self
    }

    /// USD for one call of the model at the per-document token estimate.
    pub fn per_call_usd(&self, model: &str) -> Result<f64, CostError> {
        let p = self.models.get(model).ok_or_else(|| CostError::UnknownModel(model.to_string()))?;
        Ok(self.tokens_per_doc.input / 1000.0 * p.per_1k_input_tokens_usd
            + self.tokens_per_doc.output / 1000.0 * p.per_1k_output_tokens_usd)
    }

    fn gpu_rate(&self, gpu: &str) -> Result<f64, CostError> {
        self.gpu_usd_per_hour.get(gpu).copied().ok_or_else(|| CostError::UnknownGpu(gpu.to_string()))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PlanKind {
    LlmOnly,
    Hybrid,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PipelinePlan {
    pub name: String,
    pub kind: PlanKind,
    pub n_human_labels: u64,
    pub n_llm_labels: u64,
    pub labeling_model: String,
    /// LLM model id for `llm_only`, backbone name for `hybrid`.
    pub extraction_model_or_backbone: String,
    #[serde(default)]
    pub gpu_class: String,
    #[serde(default)]
    pub train_hours: f64,
    /// Local inference time per document (`hybrid`) or LLM latency per
    /// extraction call (`llm_only`).
    pub per_doc_infer_seconds: f64,
    pub labeling_seconds_per_example: f64,
    #[serde(default = "one")]
    pub parallelism: u32,
}

fn one() -> u32 {
    1
}

impl PipelinePlan {
    pub fn llm_only() -> Self {
        PipelinePlan {
            name: "llm_only".into(),
            kind: PlanKind::LlmOnly,
            n_human_labels: 4,
            n_llm_labels: 0,
            labeling_model: "gpt-3.5-turbo-16k-0613".into(),
            extraction_model_or_backbone: "gpt-3.5-turbo-16k-0613".into(),
            gpu_class: String::new(),
            train_hours: 0.0,
            per_doc_infer_seconds: DEFAULT_SECONDS_PER_CALL,
            labeling_seconds_per_example: DEFAULT_SECONDS_PER_CALL,
            parallelism: 1,
        }
    }

    /// 4 seeds + 192 LLM labels distilled into a 1.2B backbone on one A6000.
    pub fn hybrid() -> Self {
        PipelinePlan {
            name: "hybrid".into(),
            kind: PlanKind::Hybrid,
            n_human_labels: 4,
            n_llm_labels: 192,
            labeling_model: "gpt-3.5-turbo-16k-0613".into(),
            extraction_model_or_backbone: "mt5-large".into(),
            gpu_class: "A6000".into(),
            train_hours: 50.0 / 60.0,
            per_doc_infer_seconds: 0.5,
            labeling_seconds_per_example: DEFAULT_SECONDS_PER_CALL,
            parallelism: 1,
        }
    }

    pub fn check(&self) -> Result<(), CostError> {
        let fail = |reason: &str| Err(CostError::Plan { plan: self.name.clone(), reason: reason.into() });
        let nums = [self.train_hours, self.per_doc_infer_seconds, self.labeling_seconds_per_example];
        if nums.iter().any(|v| !(v.is_finite() && *v >= 0.0)) {
            return fail("times must be finite and non-negative");
        }
        if self.parallelism == 0 {
            return fail("parallelism must be at least 1");
        }
        if self.kind == PlanKind::LlmOnly && self.train_hours != 0.0 {
            return fail("llm_only plans do not train");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct TimeBreakdown {
    pub labeling_seconds: f64,
    pub training_seconds: f64,
    pub inference_seconds: f64,
}

impl TimeBreakdown {
    pub fn total(&self) -> f64 {
        self.labeling_seconds + self.training_seconds + self.inference_seconds
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CostEstimate {
    pub manual_usd: f64,
    pub api_usd: f64,
    pub compute_usd: f64,
    pub total_usd: f64,
    pub wall_seconds: f64,
}

fn corpus_size(n: i64) -> Result<f64, CostError> {
    if n < 0 {
        return Err(CostError::NegativeN(n));
    }
    Ok(n as f64)
}

pub fn estimate_time(plan: &PipelinePlan, n: i64) -> Result<TimeBreakdown, CostError> {
    plan.check()?;
    let n = corpus_size(n)?;
    Ok(TimeBreakdown {
        labeling_seconds: plan.n_llm_labels as f64 * plan.labeling_seconds_per_example,
        training_seconds: plan.train_hours * 3600.0,
        inference_seconds: n * plan.per_doc_infer_seconds / plan.parallelism as f64,
    })
}

pub fn estimate_cost(plan: &PipelinePlan, pricing: &PricingConfig, n: i64) -> Result<CostEstimate, CostError> {
    let time = estimate_time(plan, n)?;
    let n = n as f64;
    let manual_usd = plan.n_human_labels as f64 * pricing.per_labeled_example_usd;
    let labeling_api = if plan.n_llm_labels > 0 {
        plan.n_llm_labels as f64 * pricing.per_call_usd(&plan.labeling_model)?
    } else {
        0.0
    };
    let (api_usd, compute_usd) = match plan.kind {
        PlanKind::LlmOnly => (labeling_api + n * pricing.per_call_usd(&plan.extraction_model_or_backbone)?, 0.0),
        PlanKind::Hybrid => {
            let gpu_hours = plan.train_hours + n * plan.per_doc_infer_seconds / 3600.0;
            (labeling_api, gpu_hours * pricing.gpu_rate(&plan.gpu_class)?)
        }
    };
    Ok(CostEstimate {
        manual_usd,
        api_usd,
        compute_usd,
        total_usd: manual_usd + api_usd + compute_usd,
        wall_seconds: time.total(),
    })
}

/// `(fixed, per_document)` decomposition of total USD.
pub fn affine_cost(plan: &PipelinePlan, pricing: &PricingConfig) -> Result<(f64, f64), CostError> {
    let fixed = estimate_cost(plan, pricing, 0)?.total_usd;
    let marginal = match plan.kind {
        PlanKind::LlmOnly => pricing.per_call_usd(&plan.extraction_model_or_backbone)?,
        PlanKind::Hybrid => plan.per_doc_infer_seconds / 3600.0 * pricing.gpu_rate(&plan.gpu_class)?,
    };
    Ok((fixed, marginal))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CurveRow {
    pub plan: String,
    #[serde(rename = "N")]
    pub n: u64,
    pub total_usd: f64,
    pub manual_usd: f64,
    pub api_usd: f64,
    pub compute_usd: f64,
    pub wall_seconds: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Crossover {
    pub llm_only_plan: String,
    pub hybrid_plan: String,
    /// Smallest grid N where the hybrid plan is strictly cheaper.
    pub grid_n: u64,
    /// Where the two affine cost lines meet (0 when hybrid is never dearer).
    pub analytic_n: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TradeoffCurve {
    pub rows: Vec<CurveRow>,
    pub crossover: Option<Crossover>,
}

pub fn tradeoff_curve(plans: &[PipelinePlan], pricing: &PricingConfig, grid: &[u64]) -> Result<TradeoffCurve, CostError> {
    if grid.is_empty() {
        return Err(CostError::EmptyGrid);
    }
    let mut grid = grid.to_vec();
    grid.sort_unstable();
    grid.dedup();
    let mut rows = Vec::new();
    for plan in plans {
        for &n in &grid {
            let c = estimate_cost(plan, pricing, n as i64)?;
            rows.push(CurveRow {
                plan: plan.name.clone(),
                n,
                total_usd: c.total_usd,
                manual_usd: c.manual_usd,
                api_usd: c.api_usd,
                compute_usd: c.compute_usd,
                wall_seconds: c.wall_seconds,
            });
        }
    }
    let llm = plans.iter().find(|p| p.kind == PlanKind::LlmOnly);
    let hybrid = plans.iter().find(|p| p.kind == PlanKind::Hybrid);
    let crossover = match (llm, hybrid) {
        (Some(l), Some(h)) => crossover(l, h, pricing, &grid)?,
        _ => None,
    };
    Ok(TradeoffCurve { rows, crossover })
}

fn crossover(l: &PipelinePlan, h: &PipelinePlan, pricing: &PricingConfig, grid: &[u64]) -> Result<Option<Crossover>, CostError> {
    let mut grid_n = None;
    for &n in grid {
        if estimate_cost(h, pricing, n as i64)?.total_usd < estimate_cost(l, pricing, n as i64)?.total_usd {
            grid_n = Some(n);
            break;
        }
    }
    let Some(grid_n) = grid_n else { return Ok(None) };
    let (fl, ml) = affine_cost(l, pricing)?;
    let (fh, mh) = affine_cost(h, pricing)?;
    let analytic_n = if fh < fl {
        0.0
    } else {
        (fh - fl) / (ml - mh)
    };
    Ok(Some(Crossover { llm_only_plan: l.name.clone(), hybrid_plan: h.name.clone(), grid_n, analytic_n }))
}

impl TradeoffCurve {
    pub fn write_csv(&self, out: impl Write) -> Result<(), CostError> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["plan", "N", "total_usd", "manual_usd", "api_usd", "compute_usd", "wall_seconds"])?;
        for r in &self.rows {
            w.write_record([
                r.plan.clone(),
                r.n.to_string(),
                r.total_usd.to_string(),
                r.manual_usd.to_string(),
                r.api_usd.to_string(),
                r.compute_usd.to_string(),
                r.wall_seconds.to_string(),
            ])?;
        }
        w.flush()?;
        Ok(())
    }

    /// Vega-Lite spec: cost and time against N, one line per plan.
    pub fn chart_spec(&self) -> Value {
        let positive = self.rows.iter().all(|r| r.n > 0 && r.total_usd > 0.0 && r.wall_seconds > 0.0);
        let scale = if positive { json!({"type": "log"}) } else { json!({"type": "linear"}) };
        let panel = |field: &str, title: &str| {
            json!({
                "mark": {"type": "line", "point": true},
                "encoding": {
                    "x": {"field": "N", "type": "quantitative", "scale": scale, "title": "documents"},
                    "y": {"field": field, "type": "quantitative", "scale": scale, "title": title},
                    "color": {"field": "plan", "type": "nominal"}
                }
            })
        };
        json!({
            "$schema": "https://vega.github.io/schema/vega-lite/v5.json",
            "data": {"values": self.rows},
            "hconcat": [panel("total_usd", "total cost (USD)"), panel("wall_seconds", "wall time (s)")]
        })
    }
}
