//! OpenAPI-style description of every endpoint, served at `GET /schema`.

use serde_json::{json, Value};

fn op(summary: &str, request: Option<Value>, status: &str, response: Value) -> Value {
    let mut o = json!({
        "summary": summary,
        "responses": {
            status: {"description": "success", "content": {"application/json": {"schema": response}}},
            "4XX": {"$ref": "#/components/responses/Error"},
            "5XX": {"$ref": "#/components/responses/Error"},
        },
    });
    if let Some(body) = request {
        o["requestBody"] = json!({"required": true, "content": {"application/json": {"schema": body}}});
    }
    o
}

fn r(name: &str) -> Value {
    json!({"$ref": format!("#/components/schemas/{name}")})
}

fn obj(props: Value, required: &[&str]) -> Value {
    json!({"type": "object", "properties": props, "required": required})
}

fn path_param(name: &str) -> Value {
    json!({"name": name, "in": "path", "required": true, "schema": {"type": "string"}})
}

pub fn openapi() -> Value {
    let str_ = json!({"type": "string"});
    let int = json!({"type": "integer", "minimum": 0});
    let num = json!({"type": "number"});
    let any = json!({});
    let parse = json!({"type": "object", "additionalProperties": {"type": "array", "items": {"type": "string"}}});
    let label_record = obj(json!({"doc_id": str_, "provenance": r("Provenance"), "parse": parse}), &["doc_id", "parse"]);
    let id = path_param("id");

    json!({
        "openapi": "3.0.3",
        "info": {"title": "structa", "version": env!("CARGO_PKG_VERSION")},
        "paths": {
            "/health": {"get": op("Liveness probe", None, "200", obj(json!({"status": str_}), &["status"]))},
            "/corpora": {
                "get": op("List corpora with document counts and versions", None, "200", json!({"type": "array", "items": any})),
                "post": {
                    "summary": "Ingest JSONL documents (one {body, doc_id?, meta?} object per line)",
                    "parameters": [{"name": "corpus_id", "in": "query", "required": false, "schema": str_}],
                    "requestBody": {"required": true, "content": {"application/x-ndjson": {"schema": r("DocumentInput")}}},
                    "responses": {"201": {"description": "ingested", "content": {"application/json": {"schema": r("IngestReport")}}},
                                  "4XX": {"$ref": "#/components/responses/Error"}},
                },
            },
            "/corpora/{id}/ontology": {
                "parameters": [id],
                "get": op("Current ontology", None, "200", r("Ontology")),
                "put": op("Replace the ontology, or apply one edit when the body has an op",
                    Some(json!({"oneOf": [r("Ontology"), r("OntologyEdit")]})), "200",
                    obj(json!({"ontology": r("Ontology"), "stale_labels": int}), &["ontology", "stale_labels"])),
            },
            "/corpora/{id}/documents": {
                "parameters": [id,
                    {"name": "query", "in": "query", "schema": str_, "description": "whitespace-separated BM25 terms"},
                    {"name": "top_k", "in": "query", "schema": int},
                    {"name": "filter.<key>", "in": "query", "schema": str_, "description": "exact match on document metadata"},
                    {"name": "offset", "in": "query", "schema": int},
                    {"name": "limit", "in": "query", "schema": int}],
                "get": op("Ranked search when query or filters are given, else a page of documents", None, "200",
                    json!({"oneOf": [
                        obj(json!({"query": any, "hits": {"type": "array", "items": obj(json!({"doc_id": str_, "score": num}), &["doc_id", "score"])}}), &["hits"]),
                        obj(json!({"total": int, "offset": int, "documents": {"type": "array", "items": r("Document")}}), &["documents"]),
                    ]})),
            },
            "/corpora/{id}/documents/{doc_id}": {
                "parameters": [id, path_param("doc_id")],
                "get": op("One document", None, "200", r("Document")),
            },
            "/corpora/{id}/labels": {
                "parameters": [id, {"name": "provenance", "in": "query", "schema": r("Provenance")}],
                "get": op("Current labels", None, "200", json!({"type": "array", "items": r("LabeledExample")})),
            },
            "/corpora/{id}/labels/{doc_id}": {
                "parameters": [id, path_param("doc_id")],
                "put": op("Create or replace a label; validated against the ontology",
                    Some(obj(json!({"parse": parse, "provenance": r("Provenance"), "labeler": str_}), &["parse"])), "200", r("LabeledExample")),
            },
            "/corpora/{id}/augment": {
                "parameters": [id],
                "post": op("Label documents with the LLM until n_target examples exist; 409 no_seeds without human labels",
                    Some(obj(json!({"n_target": int, "n_seed_shots": int, "labeling_model_id": str_, "max_repair_attempts": int, "seed": int}), &["n_target"])),
                    "202", r("Task")),
            },
            "/corpora/{id}/extract": {
                "parameters": [id],
                "post": op("Run an extractor over the corpus into a structured table",
                    Some(obj(json!({
                        "extractor": obj(json!({"kind": {"enum": ["pattern_table", "llm_fewshot", "distilled"]}, "model_ref": str_,
                                               "patterns": any, "shots": int, "seed": int}), &["kind"]),
                        "filter": obj(json!({"doc_ids": {"type": "array", "items": str_}, "meta": {"type": "object"}}), &[]),
                        "workers": int,
                    }), &["extractor"])),
                    "202", r("Task")),
            },
            "/corpora/{id}/table": {"parameters": [id], "get": op("Latest structured table", None, "200", r("StructuredTable"))},
            "/tables/{id}": {"parameters": [id], "get": op("A structured table", None, "200", r("StructuredTable"))},
            "/datasets/{id}": {"parameters": [id], "get": op("Training set manifest", None, "200", r("DatasetManifest"))},
            "/jobs/train": {
                "post": op("Queue a fine-tuning job on a training set",
                    Some(obj(json!({"dataset_id": str_, "hyperparams": obj(json!({"batch_size": int, "lr": num, "epochs": int,
                        "adapter_rank": int, "seed": int, "base_model": str_}), &[])}), &["dataset_id"])),
                    "202", r("JobStatusView")),
            },
            "/jobs/{id}": {
                "parameters": [id],
                "get": op("Poll a training job (job-*) or a background task (task-*)", None, "200",
                    json!({"oneOf": [r("JobStatusView"), r("Task")]})),
            },
            "/eval": {
                "post": op("Field-level F1 of predictions against gold labels, or a classification report",
                    Some(obj(json!({
                        "corpus_id": str_, "ontology": r("Ontology"), "table_id": str_,
                        "pred": {"type": "array", "items": label_record}, "gold": {"type": "array", "items": label_record},
                        "exclude": {"type": "array", "items": str_},
                        "pred_labels": {"type": "object"}, "gold_labels": {"type": "object"},
                    }), &[])),
                    "200", json!({"oneOf": [r("EvalReport"), r("ClassificationReport")]})),
            },
            "/analysis/chat": {
                "post": op("Route a question to one analysis tool and answer it",
                    Some(obj(json!({"corpus_id": str_, "message": str_, "session_id": str_, "table_id": str_}), &["corpus_id", "message"])),
                    "200", obj(json!({"call": any, "result": any, "answer": str_, "reprompted": {"type": "boolean"}, "chart": any}), &["answer"])),
            },
            "/cost/curve": {
                "post": op("Cost and time of each plan over a grid of corpus sizes",
                    Some(obj(json!({"plans": {"type": "array", "items": r("PipelinePlan")}, "grid": {"type": "array", "items": int}, "pricing": any}), &["grid"])),
                    "200", obj(json!({"rows": {"type": "array", "items": any}, "crossover": any, "csv": str_, "chart": any}), &["rows", "csv"])),
            },
            "/cost/estimate": {
                "post": op("Cost and time of one plan at one corpus size",
                    Some(obj(json!({"plan": r("PipelinePlan"), "N": int, "pricing": any}), &["plan", "N"])),
                    "200", obj(json!({"plan": str_, "N": int, "cost": any, "time": any}), &["cost", "time"])),
            },
            "/tools": {"get": op("Analysis tool schemas", None, "200",
                json!({"type": "array", "items": obj(json!({"name": str_, "description": str_, "parameters": any}), &["name", "parameters"])}))},
            "/schema": {"get": op("This document", None, "200", any.clone())},
        },
        "components": {
            "responses": {"Error": {"description": "error", "content": {"application/json": {"schema": r("Error")}}}},
            "schemas": {
                "Error": obj(json!({"code": str_, "message": str_, "detail": any}), &["code", "message"]),
                "Provenance": {"enum": ["human", "llm"]},
                "DocumentInput": obj(json!({"body": str_, "doc_id": str_, "meta": {"type": "object"}}), &["body"]),
                "Document": obj(json!({"doc_id": str_, "body": str_, "meta": {"type": "object"}}), &["doc_id", "body"]),
                "IngestReport": obj(json!({"corpus_id": str_, "stored": int, "replaced": int, "errors": {"type": "array"}, "corpus_version": int}), &["corpus_id"]),
                "FieldSpec": obj(json!({"name": str_, "kind": {"enum": ["numeric", "money", "duration", "categorical", "free-text", "label-set"]},
                    "multi_valued": {"type": "boolean"}, "description": str_}), &["name", "kind"]),
                "Ontology": obj(json!({"ontology_id": str_, "version": int, "task_description": str_,
                    "fields": {"type": "array", "items": r("FieldSpec")}, "language": str_}), &["fields"]),
                "OntologyEdit": obj(json!({"op": {"enum": ["add_field", "remove_field", "edit_description"]}, "field": any, "name": str_, "description": str_}), &["op"]),
                "LabeledExample": obj(json!({"doc_id": str_, "parse": parse, "provenance": r("Provenance"), "labeler_meta": str_,
                    "created_at": str_, "ontology_version": int, "version": int, "stale": {"type": "boolean"}}), &["doc_id", "parse"]),
                "DatasetManifest": {"type": "object", "description": "training set id, counts, shortfall, token usage and parse failures"},
                "StructuredTable": {"type": "object", "description": "records, normalized rows and batch report of one extraction"},
                "EvalReport": obj(json!({"per_field": {"type": "array"}, "average_f1": num, "excluded_fields": {"type": "array"}, "documents": int}), &["per_field", "average_f1"]),
                "ClassificationReport": obj(json!({"micro_f1": num, "macro_f1": num, "per_label": {"type": "array"}}), &["micro_f1", "macro_f1"]),
                "PipelinePlan": {"type": "object", "description": "name, kind (llm_only or hybrid), models and per-stage timings"},
                "JobStatusView": obj(json!({"job_id": str_, "state": str_, "progress": any, "started_at": str_, "message": str_}), &["job_id", "state"]),
                "Task": obj(json!({"job_id": str_, "kind": {"enum": ["augment", "train", "extract"]}, "corpus_id": str_,
                    "state": {"enum": ["queued", "running", "done", "failed"]}, "created_at": str_, "started_at": str_,
                    "finished_at": str_, "result": any, "error": r("Error")}), &["job_id", "kind", "state"]),
            },
        },
    })
}
