mod common;

use common::*;
use serde_json::{json, Value};

fn code(args: &[&str]) -> i32 {
    cli(args).status.code().unwrap()
}

#[test]
fn exit_codes() {
    assert_eq!(code(&["bogus"]), 2);
    assert_eq!(code(&[]), 2);
    assert_eq!(code(&["search"]), 2);
    assert_eq!(code(&["cost", "curve", "--grid", "1e3,x"]), 2);
    assert_eq!(code(&["cost", "curve", "--grid", "1.5"]), 2);
    assert_eq!(code(&["--help"]), 0);
    assert_eq!(code(&["--version"]), 0);
    let usage = cli(&["bogus"]);
    assert!(String::from_utf8_lossy(&usage.stderr).contains("Usage"));

    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data");
    let out = cli(&["--data-dir", data.to_str().unwrap(), "--json", "ontology", "missing"]);
    assert_eq!(out.status.code(), Some(1));
    let err: Value = serde_json::from_slice(&out.stderr).unwrap();
    assert_eq!(err["code"], "not_found");
    assert!(out.stdout.is_empty());
}

#[test]
fn eval_of_identical_files_is_perfect() {
    let dir = tempfile::tempdir().unwrap();
    let s = sample(dir.path(), 25, stub_trainer(&[]));
    let gold = s.gold_path();
    let g = gold.to_str().unwrap();
    let (code, v) = cli_json(&s.config_path, &["eval", "--pred", g, "--gold", g]);
    assert_eq!(code, 0, "{v}");
    assert_eq!(v["average_f1"], 1.0);
    assert_eq!(v["documents"], 25);
    // ontology inferred from the labels: every field seen, none multi-valued
    let fields: Vec<&str> = v["per_field"].as_array().unwrap().iter().map(|f| f["field"].as_str().unwrap()).collect();
    assert_eq!(fields, ["BAC", "Distance", "Fine", "Sentence", "Vehicle"]);

    let csv = dir.path().join("report.csv");
    let out = cli(&["--config", s.config_path.to_str().unwrap(), "eval", "--pred", g, "--gold", g, "--csv", csv.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(0));
    assert!(String::from_utf8_lossy(&out.stdout).contains("average_f1 1.0000"));
    assert!(std::fs::read_to_string(csv).unwrap().starts_with("field,"));
}

#[test]
fn eval_classification_mode() {
    let dir = tempfile::tempdir().unwrap();
    let pred = dir.path().join("p.json");
    let gold = dir.path().join("g.json");
    std::fs::write(&pred, r#"{"d1": ["a", "b"], "d2": ["c"]}"#).unwrap();
    std::fs::write(&gold, r#"{"d1": ["a"], "d2": ["b"]}"#).unwrap();
    let out = cli(&["--json", "eval", "--pred-labels", pred.to_str().unwrap(), "--gold-labels", gold.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(0));
    let v: Value = serde_json::from_slice(&out.stdout).unwrap();
    // tp 1, fp 2, fn 1 pooled; per label a=1, b=0, c=0
    assert!((v["micro_f1"].as_f64().unwrap() - 0.4).abs() < 1e-12, "{v}");
    assert!((v["macro_f1"].as_f64().unwrap() - 1.0 / 3.0).abs() < 1e-12, "{v}");
    assert_eq!(code(&["eval", "--pred-labels", pred.to_str().unwrap()]), 2);
}

#[test]
fn cost_curve_from_a_plans_file() {
    let dir = tempfile::tempdir().unwrap();
    let plans = dir.path().join("plans.json");
    let mut cheap = structa_core::cost::PipelinePlan::hybrid();
    cheap.name = "hybrid_fast".into();
    cheap.per_doc_infer_seconds = 0.1;
    let list = vec![structa_core::cost::PipelinePlan::llm_only(), structa_core::cost::PipelinePlan::hybrid(), cheap];
    std::fs::write(&plans, serde_json::to_string(&list).unwrap()).unwrap();
    let csv = dir.path().join("curve.csv");
    let chart = dir.path().join("chart.json");
    let out = cli(&[
        "--json", "cost", "curve", "--plans", plans.to_str().unwrap(), "--grid", "1e3,1e4,1e5,1e6",
        "--csv", csv.to_str().unwrap(), "--chart", chart.to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let v: Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(v["rows"].as_array().unwrap().len(), 12);
    assert_eq!(v["csv"].as_str().unwrap(), std::fs::read_to_string(&csv).unwrap());
    assert_eq!(v["csv"].as_str().unwrap().lines().count(), 13);
    assert!(v["crossover"]["analytic_n"].as_f64().unwrap() > 0.0);
    let spec: Value = serde_json::from_str(&std::fs::read_to_string(chart).unwrap()).unwrap();
    assert_eq!(spec, v["chart"]);

    let text = cli(&["cost", "curve", "--grid", "1000"]);
    assert!(String::from_utf8_lossy(&text.stdout).starts_with("plan,N,"));
    let est = cli(&["--json", "cost", "estimate", "--plan", "hybrid", "--n", "1000"]);
    let v: Value = serde_json::from_slice(&est.stdout).unwrap();
    // 192 LLM labels at the calibrated per-call latency
    assert_eq!(v["time"]["labeling_seconds"], 636.0, "{v}");
    assert_eq!(code(&["cost", "estimate", "--plan", "llm_only", "--n=-5"]), 1);
}

/// Runs the same workflow through the CLI on one data directory and over
/// HTTP on another; every result must match apart from timestamps.
#[test]
fn cli_and_http_results_agree() {
    let dir = tempfile::tempdir().unwrap();
    let a = sample(&dir.path().join("a"), 40, stub_trainer(&[]));
    let b = sample(&dir.path().join("b"), 40, stub_trainer(&[]));
    let docs_path = a.dir.join("documents.jsonl");
    std::fs::write(&docs_path, a.documents_jsonl()).unwrap();
    let gold = a.gold_path();
    let run = |args: &[&str]| {
        let (code, v) = cli_json(&a.config_path, args);
        assert_eq!(code, 0, "{args:?}: {v}");
        strip_volatile(&v)
    };
    let server = Server::start(b.config.clone());
    let same = |what: &str, cli_v: Value, (status, http_v): (u16, Value)| {
        assert!(status < 300, "{what}: {status} {http_v}");
        assert_eq!(cli_v, strip_volatile(&http_v), "{what} differs");
    };

    same("ingest", run(&["ingest", docs_path.to_str().unwrap(), "--corpus", "dd"]), server.post_raw("/corpora?corpus_id=dd", b.documents_jsonl()));
    let onto_path = a.dir.join("ontology.json");
    let onto: Value = serde_json::from_str(&std::fs::read_to_string(&onto_path).unwrap()).unwrap();
    same("ontology set", run(&["ontology", "dd", "--set", onto_path.to_str().unwrap()]), server.put("/corpora/dd/ontology", &onto));
    same("ontology", run(&["ontology", "dd"]), server.get("/corpora/dd/ontology"));
    for d in &a.docs[..4] {
        let parse = serde_json::to_string(&d.truth).unwrap();
        let id = &d.document.doc_id;
        same("label", run(&["label", "set", "dd", id, &parse]), server.put(&format!("/corpora/dd/labels/{id}"), &json!({"parse": d.truth})));
    }
    same("labels", run(&["label", "list", "dd"]), server.get("/corpora/dd/labels"));
    same("search", run(&["search", "dd", "scooter", "truck", "--top-k", "4", "--filter", "region=Seoul"]),
        server.get("/corpora/dd/documents?query=scooter%20truck&top_k=4&filter.region=Seoul"));
    same("document list", run(&["search", "dd"]), server.get("/corpora/dd/documents"));

    let task = server.post("/corpora/dd/augment", &json!({"n_target": 12})).1;
    let done = server.poll(task["job_id"].as_str().unwrap()).pop().unwrap();
    same("augment", run(&["augment", "dd", "--n-target", "12"]), (200, done["result"].clone()));
    let dataset = done["result"]["dataset_id"].as_str().unwrap().to_string();
    same("dataset", run(&["dataset", &dataset]), server.get(&format!("/datasets/{dataset}")));

    let job = server.post("/jobs/train", &json!({"dataset_id": dataset, "hyperparams": {"epochs": 3}})).1;
    let job_id = job["job_id"].as_str().unwrap().to_string();
    let trained = server.poll(&job_id).pop().unwrap();
    same("train", run(&["train", &dataset, "--epochs", "3"]), (200, trained));
    same("job", run(&["job", &job_id]), server.get(&format!("/jobs/{job_id}")));

    let task = server.post("/corpora/dd/extract", &json!({"extractor": {"kind": "distilled", "model_ref": job_id}})).1;
    let extracted = server.poll(task["job_id"].as_str().unwrap()).pop().unwrap();
    same("extract", run(&["extract", "dd", "--kind", "distilled", "--model-ref", &job_id]), (200, extracted["result"].clone()));
    let table = extracted["result"]["table_id"].as_str().unwrap().to_string();
    same("table", run(&["table", &table]), server.get(&format!("/tables/{table}")));

    let gold_records: Vec<Value> = std::fs::read_to_string(&gold).unwrap().lines().map(|l| serde_json::from_str(l).unwrap()).collect();
    same("eval", run(&["eval", "--corpus", "dd", "--gold", gold.to_str().unwrap()]), server.post("/eval", &json!({"corpus_id": "dd", "gold": gold_records})));
    same("chat", run(&["analyze", "dd", "average", "fine", "by", "vehicle"]),
        server.post("/analysis/chat", &json!({"corpus_id": "dd", "message": "average fine by vehicle"})));
    same("cost", run(&["cost", "curve", "--grid", "1e3,1e4,1e5,1e6"]), server.post("/cost/curve", &json!({"grid": [1000, 10000, 100000, 1000000]})));
    same("tools", run(&["tools"]), server.get("/tools"));
    same("schema", run(&["schema"]), server.get("/schema"));
    same("corpora", run(&["corpora"]), server.get("/corpora"));
}

#[test]
fn cli_refuses_a_directory_held_by_a_running_service() {
    let dir = tempfile::tempdir().unwrap();
    let s = sample(dir.path(), 5, stub_trainer(&[]));
    let _server = Server::start(s.config.clone());
    let (code, v) = cli_json(&s.config_path, &["corpora"]);
    assert_eq!(code, 1, "{v}");
}
