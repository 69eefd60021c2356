//! A dependency-free stand-in for the external trainer.
//!
//! `train` memorizes every training pair and learns, for each field, the two
//! words that precede a value and the value's length in words. `infer`
//! replays memorized targets and otherwise applies the learned contexts.
//! This is enough to distill the synthetic planted-field corpora used in
//! tests without any ML stack.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;
use std::time::Duration;

use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

use super::jobs::{InferRow, PredRow, ShimStatus, TrainConfig};
use crate::labeler::{read_training_rows, write_atomic};

const CONTEXT_WORDS: usize = 2;

#[derive(Debug, Clone, Default)]
pub struct StubOptions {
    /// Report divergence when the configured lr is above this value.
    pub diverge_above_lr: Option<f64>,
    pub always_diverge: bool,
    /// Report `failed` without training.
    pub always_fail: bool,
    pub epoch_delay_ms: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
struct Cue {
    left: Vec<String>,
    words: usize,
}

#[derive(Debug, Default, Serialize, Deserialize)]
struct StubModel {
    memory: BTreeMap<String, String>,
    field_order: Vec<String>,
    cues: BTreeMap<String, Vec<Cue>>,
}

fn clean(word: &str) -> &str {
    word.trim_end_matches(['.', ',', ';', ':', '!', '?', ')', '"', '\''])
}

fn learn(model: &mut StubModel, input: &str, target: &Map<String, Value>) {
    let words: Vec<&str> = input.split_whitespace().collect();
    for (field, values) in target {
        if !model.field_order.contains(field) {
            model.field_order.push(field.clone());
        }
        for v in values.as_array().into_iter().flatten().filter_map(Value::as_str) {
            let want: Vec<&str> = v.split_whitespace().collect();
            if want.is_empty() || want.len() > words.len() {
                continue;
            }
            for j in 0..=words.len() - want.len() {
                let span = &words[j..j + want.len()];
                let hit = span[..want.len() - 1] == want[..want.len() - 1]
                    && clean(span[want.len() - 1]) == want[want.len() - 1];
                if hit && j >= CONTEXT_WORDS {
                    let cue = Cue {
                        left: words[j - CONTEXT_WORDS..j].iter().map(|w| w.to_lowercase()).collect(),
                        words: want.len(),
                    };
                    let cues = model.cues.entry(field.clone()).or_default();
                    if !cues.contains(&cue) {
                        cues.push(cue);
                    }
                }
            }
        }
    }
}

fn apply(model: &StubModel, input: &str) -> String {
    if let Some(t) = model.memory.get(input) {
        return t.clone();
    }
    let words: Vec<&str> = input.split_whitespace().collect();
    let lower: Vec<String> = words.iter().map(|w| w.to_lowercase()).collect();
    let mut out = Map::new();
    for field in &model.field_order {
        let mut values: Vec<Value> = Vec::new();
        for cue in model.cues.get(field).into_iter().flatten() {
            for j in CONTEXT_WORDS..words.len() {
                if lower[j - CONTEXT_WORDS..j] != cue.left[..] || j + cue.words > words.len() {
                    continue;
                }
                let mut span: Vec<&str> = words[j..j + cue.words].to_vec();
                let last = span.len() - 1;
                span[last] = clean(span[last]);
                let v = Value::String(span.join(" "));
                if !values.contains(&v) {
                    values.push(v);
                }
            }
        }
        if !values.is_empty() {
            out.insert(field.clone(), Value::Array(values));
        }
    }
    Value::Object(out).to_string()
}

fn write_status(dir: &Path, status: &ShimStatus) -> std::io::Result<()> {
    write_atomic(&dir.join("status.json"), serde_json::to_string(status).unwrap().as_bytes())
}

fn fail(dir: &Path, message: String) -> Result<(), String> {
    let status = ShimStatus { state: "failed".into(), epoch: 0, loss: vec![], message: Some(message.clone()) };
    write_status(dir, &status).map_err(|e| e.to_string())?;
    Err(message)
}

pub fn train(dir: &Path, opts: &StubOptions) -> Result<(), String> {
    let config: TrainConfig = match fs::read_to_string(dir.join("config.json"))
        .map_err(|e| e.to_string())
        .and_then(|t| serde_json::from_str(&t).map_err(|e| e.to_string()))
    {
        Ok(c) => c,
        Err(e) => return fail(dir, format!("config.json: {e}")),
    };
    let rows = match read_training_rows(&dir.join("train.jsonl")) {
        Ok(r) if r.is_empty() => return fail(dir, "train.jsonl is empty".into()),
        Ok(r) => r,
        Err(e) => return fail(dir, format!("train.jsonl: {e}")),
    };
    if opts.always_fail {
        return fail(dir, "forced failure".into());
    }
    let diverge = opts.always_diverge || opts.diverge_above_lr.is_some_and(|max| config.lr > max);
    let mut model = StubModel::default();
    for row in &rows {
        model.memory.insert(row.input.clone(), row.target.clone());
        if let Ok(Value::Object(t)) = serde_json::from_str::<Value>(&row.target) {
            learn(&mut model, &row.input, &t);
        }
    }
    let mut status = ShimStatus { state: "running".into(), epoch: 0, loss: vec![], message: None };
    for epoch in 1..=config.epochs.max(1) {
        std::thread::sleep(Duration::from_millis(opts.epoch_delay_ms));
        status.epoch = epoch;
        if diverge && epoch == 2 {
            status.loss.push(None);
            status.state = "diverged".into();
            status.message = Some(format!("non-finite loss at epoch {epoch} (lr {})", config.lr));
            return write_status(dir, &status).map_err(|e| e.to_string());
        }
        status.loss.push(Some(2.0 / (1.0 + epoch as f64)));
        write_status(dir, &status).map_err(|e| e.to_string())?;
    }
    let ckpt = dir.join("checkpoint");
    fs::create_dir_all(&ckpt).map_err(|e| e.to_string())?;
    write_atomic(&ckpt.join("model.json"), serde_json::to_string(&model).unwrap().as_bytes())
        .map_err(|e| e.to_string())?;
    status.state = "done".into();
    write_status(dir, &status).map_err(|e| e.to_string())
}

pub fn infer(dir: &Path) -> Result<(), String> {
    let model: StubModel = fs::read_to_string(dir.join("checkpoint").join("model.json"))
        .map_err(|e| format!("missing checkpoint: {e}"))
        .and_then(|t| serde_json::from_str(&t).map_err(|e| format!("bad checkpoint: {e}")))?;
    let text = fs::read_to_string(dir.join("infer.jsonl")).map_err(|e| format!("infer.jsonl: {e}"))?;
    let mut out = String::new();
    for line in text.lines().filter(|l| !l.trim().is_empty()) {
        let row: InferRow = serde_json::from_str(line).map_err(|e| format!("infer.jsonl: {e}"))?;
        let pred = PredRow { target: apply(&model, &row.input), doc_id: row.doc_id };
        out.push_str(&serde_json::to_string(&pred).unwrap());
        out.push('\n');
    }
    write_atomic(&dir.join("pred.jsonl"), out.as_bytes()).map_err(|e| e.to_string())
}

/// Entry point shared by the `stub-trainer` binaries. Returns the exit code.
///
/// Usage: `[--diverge-above-lr X] [--always-diverge] [--always-fail]
/// [--epoch-delay-ms N] train|infer <jobdir>`
pub fn run_cli(args: &[String]) -> i32 {
    let mut opts = StubOptions::default();
    let mut positional = Vec::new();
    let mut it = args.iter();
    while let Some(a) = it.next() {
        match a.as_str() {
            "--always-diverge" => opts.always_diverge = true,
            "--always-fail" => opts.always_fail = true,
            "--diverge-above-lr" => opts.diverge_above_lr = it.next().and_then(|v| v.parse().ok()),
            "--epoch-delay-ms" => opts.epoch_delay_ms = it.next().and_then(|v| v.parse().ok()).unwrap_or(0),
            other => positional.push(other.to_string()),
        }
    }
    let result = match positional.as_slice() {
        [cmd, dir] if cmd == "train" => train(Path::new(dir), &opts),
        [cmd, dir] if cmd == "infer" => infer(Path::new(dir)),
        _ => {
            eprintln!("usage: stub-trainer [options] train|infer <jobdir>");
            return 2;
        }
    };
    match result {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("stub-trainer: {e}");
            1
        }
    }
}
