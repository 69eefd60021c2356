//! Independent oracles and fixtures shared by the integration tests and the
//! acceptance suite. Nothing here calls the code under test for the thing it
//! checks.
#![allow(dead_code)]

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::path::Path;
use std::sync::Arc;

use rand::seq::SliceRandom;
use rand::Rng;
use structa_core::engine::{
    build_extractor, extract_batch, CommandShim, DocFilter, ExtractorKind, ExtractorSpec, Hyperparams, JobManager,
    JobState, StructuredTable,
};
use structa_core::eval::{field_f1_report, normalize, EvalReport};
use structa_core::labeler::{ensure_training_set, AugmentationConfig, TrainingSet};
use structa_core::llm::Gateway;
use structa_core::model::{Document, FieldKind, FieldSpec, Ontology, Parse, Provenance};
use structa_core::store::Store;
use structa_core::synth::{drunk_driving_ontology, generate_corpus, planted_rules, to_jsonl, SynthConfig, SynthDoc};
use unicode_segmentation::UnicodeSegmentation;

// ---------------------------------------------------------------------------
// BM25
// ---------------------------------------------------------------------------

fn words(text: &str) -> Vec<String> {
    text.unicode_words().map(|w| w.to_lowercase()).collect()
}

/// Scores every document from scratch: no index, no postings.
pub fn bm25_exhaustive(
    docs: &[Document],
    terms: &[String],
    filters: &BTreeMap<String, String>,
    top_k: usize,
) -> Vec<(String, f64)> {
    let (k1, b) = (1.2_f64, 0.75_f64);
    let tokenized: Vec<Vec<String>> = docs.iter().map(|d| words(&d.body)).collect();
    let n = docs.len() as f64;
    let avg = tokenized.iter().map(Vec::len).sum::<usize>() as f64 / n;
    let query: BTreeSet<String> = terms.iter().flat_map(|t| words(t)).collect();
    let mut scored = Vec::new();
    for (doc, toks) in docs.iter().zip(&tokenized) {
        if !filters.iter().all(|(k, v)| doc.source_meta.get(k) == Some(v)) {
            continue;
        }
        let mut score = 0.0;
        let mut matched = false;
        for q in &query {
            let tf = toks.iter().filter(|t| *t == q).count() as f64;
            if tf == 0.0 {
                continue;
            }
            matched = true;
            let df = tokenized.iter().filter(|d| d.contains(q)).count() as f64;
            let idf = (1.0 + (n - df + 0.5) / (df + 0.5)).ln();
            let norm = 1.0 - b + b * toks.len() as f64 / avg;
            score += idf * tf * (k1 + 1.0) / (tf + k1 * norm);
        }
        if matched || query.is_empty() {
            scored.push((doc.doc_id.clone(), score));
        }
    }
    scored.sort_by(|a, b| b.1.partial_cmp(&a.1).unwrap().then(a.0.cmp(&b.0)));
    scored.truncate(top_k);
    scored
}

/// Equal up to `tol` in score, and in doc order wherever scores are not tied
/// within `tol`.
pub fn same_ranking(got: &[(String, f64)], want: &[(String, f64)], all: &HashMap<String, f64>, tol: f64) -> Result<(), String> {
    if got.len() != want.len() {
        return Err(format!("{} hits, expected {}", got.len(), want.len()));
    }
    for (i, ((gid, gs), (wid, ws))) in got.iter().zip(want).enumerate() {
        if (gs - ws).abs() > tol {
            return Err(format!("rank {i}: score {gs} vs {ws}"));
        }
        let true_score = all.get(gid).ok_or_else(|| format!("{gid} should not match"))?;
        if (true_score - gs).abs() > tol {
            return Err(format!("{gid}: score {gs} vs exhaustive {true_score}"));
        }
        let tied = want.iter().filter(|(_, s)| (s - ws).abs() <= tol).count() > 1;
        if !tied && gid != wid {
            return Err(format!("rank {i}: {gid} vs {wid}"));
        }
    }
    Ok(())
}

const WORDS: &[&str] = &[
    "court", "fine", "drunk", "driving", "car", "truck", "appeal", "sentence", "victim", "seoul", "busan",
    "penalty", "alcohol", "license", "judge", "fraud", "loan", "contract", "injury", "witness",
];

pub fn random_corpus(rng: &mut impl Rng, max_docs: usize) -> Vec<Document> {
    let n = rng.gen_range(1..=max_docs);
    (0..n)
        .map(|i| {
            let len = rng.gen_range(1..40);
            let body: Vec<&str> = (0..len).map(|_| *WORDS.choose(rng).unwrap()).collect();
            let mut meta = BTreeMap::new();
            meta.insert("court".to_string(), ["a", "b", "c"].choose(rng).unwrap().to_string());
            Document { doc_id: format!("d{i:04}"), body: body.join(" "), source_meta: meta }
        })
        .collect()
}

pub fn random_query(rng: &mut impl Rng) -> Vec<String> {
    let n = rng.gen_range(1..=4);
    (0..n).map(|_| WORDS.choose(rng).unwrap().to_uppercase()).collect()
}

// ---------------------------------------------------------------------------
// Field F1
// ---------------------------------------------------------------------------

/// Counts by striking matched gold values out of a list, one at a time.
pub fn brute_counts(pred: &[String], gold: &[String]) -> (usize, usize, usize) {
    let mut left: Vec<&String> = gold.iter().collect();
    let mut tp = 0;
    let mut fp = 0;
    for p in pred {
        match left.iter().position(|g| *g == p) {
            Some(i) => {
                left.remove(i);
                tp += 1;
            }
            None => fp += 1,
        }
    }
    (tp, fp, left.len())
}

fn f1_of(tp: usize, fp: usize, fn_: usize) -> f64 {
    let p = if tp + fp == 0 { 0.0 } else { tp as f64 / (tp + fp) as f64 };
    let r = if tp + fn_ == 0 { 0.0 } else { tp as f64 / (tp + fn_) as f64 };
    if p + r == 0.0 {
        0.0
    } else {
        2.0 * p * r / (p + r)
    }
}

pub struct BruteField {
    pub field: String,
    pub tp: usize,
    pub fp: usize,
    pub fn_: usize,
    pub f1: f64,
}

pub fn brute_field_f1(
    pred: &BTreeMap<String, Parse>,
    gold: &BTreeMap<String, Parse>,
    ontology: &Ontology,
) -> Vec<BruteField> {
    ontology
        .fields
        .iter()
        .map(|f| {
            let (mut tp, mut fp, mut fn_) = (0, 0, 0);
            for (doc, g) in gold {
                let pv: Vec<String> = pred.get(doc).map(|p| p.get(&f.name).to_vec()).unwrap_or_default();
                let pv: Vec<String> = pv.iter().map(|v| normalize(v, f.kind)).collect();
                let gv: Vec<String> = g.get(&f.name).iter().map(|v| normalize(v, f.kind)).collect();
                let (a, b, c) = brute_counts(&pv, &gv);
                tp += a;
                fp += b;
                fn_ += c;
            }
            BruteField { field: f.name.clone(), tp, fp, fn_, f1: f1_of(tp, fp, fn_) }
        })
        .collect()
}

/// ≤10 docs, ≤3 fields, values drawn from an alphabet of 5.
pub fn random_ie_instance(rng: &mut impl Rng) -> (Ontology, BTreeMap<String, Parse>, BTreeMap<String, Parse>) {
    let kinds = [FieldKind::Categorical, FieldKind::Numeric, FieldKind::Money];
    let n_fields = rng.gen_range(1..=3);
    let fields: Vec<FieldSpec> = (0..n_fields)
        .map(|i| FieldSpec::new(&format!("F{i}"), *kinds.choose(rng).unwrap()).multi())
        .collect();
    let ontology = Ontology::new("", fields).unwrap();
    let alphabet = ["1", "2", "2.0", "A", "a "];
    let random_parse = |rng: &mut dyn rand::RngCore| {
        let mut p = Parse::new();
        for f in &ontology.fields {
            for _ in 0..rng.gen_range(0..4) {
                p.push(&f.name, alphabet.choose(rng).unwrap().to_string());
            }
        }
        p
    };
    let n_docs = rng.gen_range(1..=10);
    let mut gold = BTreeMap::new();
    let mut pred = BTreeMap::new();
    for d in 0..n_docs {
        gold.insert(format!("d{d}"), random_parse(rng));
        if rng.gen_bool(0.8) {
            pred.insert(format!("d{d}"), random_parse(rng));
        }
    }
    (ontology, pred, gold)
}

pub fn check_eval_against_brute(
    pred: &BTreeMap<String, Parse>,
    gold: &BTreeMap<String, Parse>,
    ontology: &Ontology,
) -> Result<(), String> {
    let report = field_f1_report(pred, gold, ontology, &BTreeSet::new()).map_err(|e| e.to_string())?;
    let brute = brute_field_f1(pred, gold, ontology);
    for b in &brute {
        let f = report.field(&b.field).ok_or("missing field")?;
        if (f.counts.tp, f.counts.fp, f.counts.fn_) != (b.tp, b.fp, b.fn_) {
            return Err(format!(
                "{}: counts {:?} vs brute ({}, {}, {})",
                b.field, f.counts, b.tp, b.fp, b.fn_
            ));
        }
        if f.f1 != b.f1 {
            return Err(format!("{}: f1 {} vs {}", b.field, f.f1, b.f1));
        }
    }
    let avg = brute.iter().map(|b| b.f1).sum::<f64>() / brute.len() as f64;
    if (report.average_f1 - avg).abs() > 1e-12 {
        return Err(format!("average {} vs {avg}", report.average_f1));
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// Few-shot selection
// ---------------------------------------------------------------------------

/// Full-coverage examples achievable when `k` of `n` seeds are taken and `c`
/// of them cover every field: half of k (rounded up) if there are enough,
/// and more only when the partial seeds run out.
pub fn expected_complete(k: usize, n: usize, c: usize) -> usize {
    k.div_ceil(2).min(c).max(k.saturating_sub(n - c))
}

// ---------------------------------------------------------------------------
// Planted-corpus pipeline
// ---------------------------------------------------------------------------

pub struct LoopOutcome {
    pub report: EvalReport,
    pub training: TrainingSet,
    pub table: StructuredTable,
    pub job_state: JobState,
    pub gold: BTreeMap<String, Parse>,
}

pub fn planted_store(dir: &Path, n_docs: usize, seed: u64) -> (Store, String, Vec<SynthDoc>) {
    let store = Store::open(dir).unwrap();
    let docs = generate_corpus(&SynthConfig::new(n_docs, seed));
    let report = store.ingest(to_jsonl(&docs).as_bytes(), Some("planted")).unwrap();
    store.set_ontology("planted", drunk_driving_ontology()).unwrap();
    (store, report.corpus_id, docs)
}

/// Seeds `n_seeds` human labels (at least one partial), then runs
/// augmentation → training → distilled extraction → evaluation.
pub fn distillation_loop(dir: &Path, shim: Vec<String>, n_docs: usize, n_seeds: usize, n_target: usize) -> LoopOutcome {
    let (store, corpus, docs) = planted_store(dir, n_docs, 11);
    for d in docs.iter().take(n_seeds) {
        store
            .upsert_label(&corpus, &d.document.doc_id, d.truth.clone(), Provenance::Human, "annotator")
            .unwrap();
    }
    let gateway = Gateway::mock(planted_rules());
    let training = ensure_training_set(&store, &gateway, &corpus, &AugmentationConfig::new(n_target)).unwrap();
    let jobs = Arc::new(JobManager::open(store.artifact_dir("jobs"), Arc::new(CommandShim::new(shim))).unwrap());
    let hp = Hyperparams { epochs: 3, ..Hyperparams::default() };
    let job = jobs.submit(&training, hp).unwrap();
    let job = jobs.run(&job.job_id).unwrap();
    let spec = ExtractorSpec::new(ExtractorKind::Distilled, &job.job_id);
    let extractor = build_extractor(&spec, &store, &corpus, &gateway, &jobs).unwrap();
    let table = extract_batch(&store, extractor.as_ref(), &corpus, &DocFilter::default(), 4).unwrap();
    let gold: BTreeMap<String, Parse> = docs.iter().map(|d| (d.document.doc_id.clone(), d.truth.clone())).collect();
    let report = field_f1_report(&table.predictions(), &gold, &drunk_driving_ontology(), &BTreeSet::new()).unwrap();
    LoopOutcome { report, training, table, job_state: job.state, gold }
}
