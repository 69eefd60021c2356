mod common;

use std::collections::{BTreeMap, BTreeSet};
use std::sync::Arc;
use std::time::Instant;

use structa_core::engine::{
    build_extractor, extract_batch, CommandShim, DocFilter, EngineError, Extraction, Extractor, ExtractorKind,
    ExtractorSpec, JobManager, PatternTableExtractor, StructuredTable,
};
use structa_core::eval::field_f1_report;
use structa_core::llm::Gateway;
use structa_core::model::{Document, Parse, Provenance};
use structa_core::synth::{drunk_driving_ontology, field_patterns, planted_rules};

use common::{distillation_loop, planted_store};

const STUB: &str = env!("CARGO_BIN_EXE_stub-trainer");

fn truth(docs: &[structa_core::synth::SynthDoc]) -> BTreeMap<String, Parse> {
    docs.iter().map(|d| (d.document.doc_id.clone(), d.truth.clone())).collect()
}

fn no_jobs(store: &structa_core::store::Store) -> Arc<JobManager> {
    Arc::new(JobManager::open(store.artifact_dir("jobs"), Arc::new(CommandShim::new(vec![STUB.into()]))).unwrap())
}

#[test]
fn pattern_table_batch_over_100_docs() {
    let dir = tempfile::tempdir().unwrap();
    let (store, corpus, docs) = planted_store(dir.path(), 100, 8);
    let spec = ExtractorSpec::pattern_table(&field_patterns());
    let ex = build_extractor(&spec, &store, &corpus, &Gateway::mock(planted_rules()), &no_jobs(&store)).unwrap();
    let table = extract_batch(&store, ex.as_ref(), &corpus, &DocFilter::default(), 8).unwrap();
    assert_eq!((table.report.docs, table.report.failures), (100, 0));
    assert_eq!(table.predictions(), truth(&docs));
    assert!(table.records.windows(2).all(|w| w[0].doc_id < w[1].doc_id));
    assert_eq!(StructuredTable::latest(&store, &corpus).unwrap(), table);
}

#[test]
fn extractor_kinds_are_interchangeable() {
    let dir = tempfile::tempdir().unwrap();
    let outcome = distillation_loop(dir.path(), vec![STUB.into()], 40, 3, 10);
    let store = structa_core::store::Store::open(dir.path()).unwrap();
    let corpus = outcome.table.corpus_id.clone();
    let gw = Gateway::mock(planted_rules());
    let jobs = no_jobs(&store);
    let job_id = jobs.list().unwrap().last().unwrap().job_id.clone();
    let specs = [
        ExtractorSpec::pattern_table(&field_patterns()),
        ExtractorSpec::new(ExtractorKind::LlmFewshot, ""),
        ExtractorSpec::new(ExtractorKind::Distilled, &job_id),
    ];
    let mut rows = Vec::new();
    for spec in &specs {
        let ex = build_extractor(spec, &store, &corpus, &gw, &jobs).unwrap();
        let table = extract_batch(&store, ex.as_ref(), &corpus, &DocFilter::default(), 4).unwrap();
        assert_eq!(table.report.failures, 0, "{:?}", spec.kind);
        assert!(table.records.iter().all(|r| r.extractor == spec.kind));
        rows.push(table.rows);
    }
    assert_eq!(rows[0], rows[1]);
    assert_eq!(rows[0], rows[2]);
    assert_eq!(outcome.report.average_f1, 1.0);
}

/// Delegates to a real extractor but blows up on one document.
struct Poisoned {
    inner: PatternTableExtractor,
    poison: String,
}

impl Extractor for Poisoned {
    fn spec(&self) -> &ExtractorSpec {
        self.inner.spec()
    }

    fn extract_one(&self, doc: &Document) -> Extraction {
        if doc.doc_id == self.poison {
            panic!("poisoned document");
        }
        self.inner.extract_one(doc)
    }
}

#[test]
fn one_bad_document_does_not_sink_the_batch() {
    let dir = tempfile::tempdir().unwrap();
    let (store, corpus, _) = planted_store(dir.path(), 30, 3);
    let inner = PatternTableExtractor::new(ExtractorSpec::pattern_table(&field_patterns()), drunk_driving_ontology()).unwrap();
    let ex = Poisoned { inner, poison: "case-00007".into() };
    let table = extract_batch(&store, &ex, &corpus, &DocFilter::default(), 4).unwrap();
    assert_eq!(table.report.failures, 1);
    let bad = table.records.iter().find(|r| r.doc_id == "case-00007").unwrap();
    assert!(bad.error.is_some() && bad.parse.is_empty());
    assert_eq!(table.records.iter().filter(|r| r.error.is_none()).count(), 29);

    let only_bad = DocFilter { doc_ids: Some(vec!["case-00007".into()]), ..Default::default() };
    assert!(matches!(
        extract_batch(&store, &ex, &corpus, &only_bad, 1),
        Err(EngineError::BatchFailed { failures: 1, .. })
    ));
}

#[test]
fn filters_select_documents() {
    let dir = tempfile::tempdir().unwrap();
    let (store, corpus, docs) = planted_store(dir.path(), 50, 5);
    let ex = PatternTableExtractor::new(ExtractorSpec::pattern_table(&field_patterns()), drunk_driving_ontology()).unwrap();
    let nothing = DocFilter { meta: [("region".into(), "Atlantis".into())].into(), ..Default::default() };
    let empty = extract_batch(&store, &ex, &corpus, &nothing, 2).unwrap();
    assert_eq!(empty.report.docs, 0);
    assert!(empty.rows.is_empty());
    let seoul = DocFilter { meta: [("region".into(), "Seoul".into())].into(), ..Default::default() };
    let table = extract_batch(&store, &ex, &corpus, &seoul, 2).unwrap();
    let expected = docs.iter().filter(|d| d.document.source_meta["region"] == "Seoul").count();
    assert_eq!(table.rows.len(), expected);
}

#[test]
fn distilled_extractor_requires_a_finished_job() {
    let dir = tempfile::tempdir().unwrap();
    let (store, corpus, docs) = planted_store(dir.path(), 10, 5);
    let gw = Gateway::mock(planted_rules());
    let jobs = no_jobs(&store);
    let spec = ExtractorSpec::new(ExtractorKind::Distilled, "job-404");
    assert!(build_extractor(&spec, &store, &corpus, &gw, &jobs).is_err());
    // the few-shot extractor needs seeds
    let spec = ExtractorSpec::new(ExtractorKind::LlmFewshot, "");
    assert!(build_extractor(&spec, &store, &corpus, &gw, &jobs).is_err());
    store
        .upsert_label(&corpus, &docs[0].document.doc_id, docs[0].truth.clone(), Provenance::Human, "a")
        .unwrap();
    assert!(build_extractor(&spec, &store, &corpus, &gw, &jobs).is_ok());
}

#[test]
fn distillation_reaches_perfect_f1_on_200_docs() {
    let dir = tempfile::tempdir().unwrap();
    let start = Instant::now();
    let out = distillation_loop(dir.path(), vec![STUB.into()], 200, 4, 16);
    assert_eq!(out.training.rows().unwrap().len(), 16);
    assert_eq!(out.table.report.failures, 0);
    assert_eq!(out.report.average_f1, 1.0, "{:?}", out.report.per_field);
    let none = BTreeSet::new();
    let again = field_f1_report(&out.table.predictions(), &out.gold, &drunk_driving_ontology(), &none).unwrap();
    assert_eq!(again, out.report);
    assert!(start.elapsed().as_secs() < 60);
}
