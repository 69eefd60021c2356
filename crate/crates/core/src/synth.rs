//! Synthetic court-ruling corpus with planted field values.
//!
//! Every field is stated with one fixed phrasing, so the ground truth is
//! known exactly and both the mock LLM rules and a trained extractor can
//! recover it.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde_json::json;

use crate::llm::{MockReply, MockRule, MockRules};
use crate::model::{Document, FieldKind, FieldSpec, Ontology, Parse};

pub const REGIONS: &[&str] = &["Seoul", "Busan", "Incheon", "Daegu", "Gwangju", "Daejeon"];
pub const VEHICLES: &[&str] = &["car", "motorcycle", "truck", "scooter", "van"];
const CASE_TYPES: &[&str] = &["drunk-driving", "drunk-driving-injury"];

const FILLER: &[&str] = &[
    "The defendant admitted the facts in court.",
    "The police stopped the defendant at a checkpoint.",
    "No prior convictions were found on record.",
    "The court considered the remorse shown by the defendant.",
    "A witness reported erratic driving on the highway.",
    "The defendant refused to cooperate at first.",
    "The accident caused minor damage to a parked vehicle.",
    "The victim suffered an injury requiring two weeks of treatment.",
    "The prosecution requested a heavier penalty.",
    "The defendant has a stable job and family support.",
];

#[derive(Debug, Clone)]
pub struct SynthConfig {
    pub n_docs: usize,
    pub seed: u64,
    /// Chance that each optional field is left out of a document.
    pub missing_rate: f64,
}

impl SynthConfig {
    pub fn new(n_docs: usize, seed: u64) -> Self {
        SynthConfig { n_docs, seed, missing_rate: 0.25 }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthDoc {
    pub document: Document,
    pub truth: Parse,
}

pub fn drunk_driving_ontology() -> Ontology {
    Ontology::new(
        "Extract facts from drunk-driving court rulings.",
        vec![
            FieldSpec::new("BAC", FieldKind::Numeric).describe("blood alcohol concentration"),
            FieldSpec::new("Distance", FieldKind::Numeric).describe("distance driven while drunk"),
            FieldSpec::new("Fine", FieldKind::Money).describe("fine imposed"),
            FieldSpec::new("Sentence", FieldKind::Duration).describe("prison term"),
            FieldSpec::new("Vehicle", FieldKind::Categorical).describe("vehicle type"),
        ],
    )
    .expect("static ontology is valid")
}

/// Field → regex with the value in group 1 (named `value`), mirroring the
/// fixed phrasings.
pub fn field_patterns() -> Vec<(&'static str, &'static str)> {
    vec![
        ("BAC", r"blood alcohol level of (?P<value>[0-9.]+%)"),
        ("Distance", r"drove approximately (?P<value>[0-9]+m)"),
        ("Fine", r"a fine of (?P<value>[0-9,]+ won)"),
        ("Sentence", r"imprisonment for (?P<value>[0-9]+ months)"),
        ("Vehicle", r"while driving a (?P<value>[a-z]+)"),
    ]
}

/// Mock rules that answer extraction prompts with exactly the planted values.
pub fn planted_rules() -> MockRules {
    let fields = field_patterns()
        .into_iter()
        .map(|(f, p)| (f.to_string(), json!(p)))
        .collect();
    MockRules::new(vec![MockRule::new(
        r"(?s)blood alcohol|drove approximately|a fine of|imprisonment for|while driving a",
        MockReply::Fields(fields),
    )])
}

/// Labeling rules plus chat routing for the analysis tools, so a mock
/// backend can drive the whole workflow. Routing rules only answer requests
/// that offer tools.
pub fn demo_rules() -> MockRules {
    let mut rules = planted_rules();
    rules.rules[0].with_tools = Some(false);
    let routing = [
        MockRule::tool_call(r"(?i)average fine by vehicle", "aggregate", json!({"target": "Fine", "stat": "mean", "group_by": "Vehicle"})),
        MockRule::tool_call(r"(?i)average fine", "aggregate", json!({"target": "Fine", "stat": "mean"})),
        MockRule::tool_call(r"(?i)average bac", "aggregate", json!({"target": "BAC", "stat": "mean"})),
        MockRule::tool_call(r"(?i)how many (\w+)", "filter", json!({"field": "Vehicle", "op": "eq", "value": "$1"})),
        MockRule::tool_call(r"(?i)bac histogram", "histogram", json!({"field": "BAC", "bins": 5})),
        MockRule::tool_call(r"(?i)fine histogram", "histogram", json!({"field": "Fine", "bins": 5})),
        MockRule::tool_call(r"(?i)show case ([\w-]+)", "get_document", json!({"doc_id": "$1"})),
        MockRule::tool_call(r"(?i)search for (.+)", "search_corpus", json!({"query": "$1", "top_k": 5})),
        MockRule::content(r".", "Ask about averages, counts, histograms, a case id or a search."),
    ];
    rules.rules.extend(routing.into_iter().map(|r| r.when_tools(true)));
    rules
}

fn doc_for(i: usize, rng: &mut ChaCha8Rng, missing_rate: f64) -> SynthDoc {
    let mut truth = Parse::new();
    let mut facts = Vec::new();
    // BAC and Vehicle are always present; the rest may be missing
    let bac = format!("{}.{:03}%", 0, rng.gen_range(30..=250));
    facts.push(format!("The defendant had a blood alcohol level of {bac} at the time."));
    truth.set("BAC", vec![bac]);
    let vehicle = *VEHICLES.choose(rng).unwrap();
    facts.push(format!("The defendant was caught while driving a {vehicle} downtown."));
    truth.set("Vehicle", vec![vehicle.to_string()]);
    if !rng.gen_bool(missing_rate) {
        let d = format!("{}m", rng.gen_range(5..=400) * 10);
        facts.push(format!("The defendant drove approximately {d} before being stopped."));
        truth.set("Distance", vec![d]);
    }
    if !rng.gen_bool(missing_rate) {
        let won = rng.gen_range(3..=30) * 500_000u64;
        let fine = format!("{} won", thousands(won));
        facts.push(format!("The court ordered a fine of {fine} to be paid."));
        truth.set("Fine", vec![fine]);
    }
    if !rng.gen_bool(missing_rate) {
        let s = format!("{} months", rng.gen_range(4..=36));
        facts.push(format!("The defendant was sentenced to imprisonment for {s} in total."));
        truth.set("Sentence", vec![s]);
    }
    let n_filler = rng.gen_range(2..=4);
    facts.extend(FILLER.choose_multiple(rng, n_filler).map(|s| s.to_string()));
    facts.shuffle(rng);
    let region = *REGIONS.choose(rng).unwrap();
    let case_type = *CASE_TYPES.choose(rng).unwrap();
    let body = format!("Ruling of the {region} District Court. {}", facts.join(" "));
    SynthDoc {
        document: Document {
            doc_id: format!("case-{i:05}"),
            body,
            source_meta: [
                ("region".to_string(), region.to_string()),
                ("case_type".to_string(), case_type.to_string()),
            ]
            .into_iter()
            .collect(),
        },
        truth,
    }
}

fn thousands(n: u64) -> String {
    let s = n.to_string();
    let mut out = String::new();
    for (i, c) in s.chars().enumerate() {
        if i > 0 && (s.len() - i).is_multiple_of(3) {
            out.push(',');
        }
        out.push(c);
    }
    out
}

pub fn generate_corpus(cfg: &SynthConfig) -> Vec<SynthDoc> {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    (0..cfg.n_docs).map(|i| doc_for(i, &mut rng, cfg.missing_rate)).collect()
}

/// One JSON document per line, ready for ingestion.
pub fn to_jsonl(docs: &[SynthDoc]) -> String {
    let mut out = String::new();
    for d in docs {
        out.push_str(&serde_json::to_string(&d.document).unwrap());
        out.push('\n');
    }
    out
}
