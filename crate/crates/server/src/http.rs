//! HTTP binding of the API. Handlers run on the blocking pool because the
//! core is synchronous; every error leaves as `{code, message, detail}`.

use std::collections::HashMap;
use std::sync::Arc;

use axum::body::Bytes;
use axum::extract::{Path, Query, State};
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post, put};
use axum::{Json, Router};
use serde::de::DeserializeOwned;
use serde_json::Value;
use structa_core::labeler::AugmentationConfig;
use structa_core::model::Provenance;

use crate::api::{self, ApiResult, App, DocumentQuery};
use crate::error::ApiError;

type Shared = State<Arc<App>>;
type Params = Query<HashMap<String, String>>;

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        let status = StatusCode::from_u16(self.status).unwrap_or(StatusCode::INTERNAL_SERVER_ERROR);
        (status, Json(self)).into_response()
    }
}

/// Runs a blocking API call and renders its JSON with `status` on success.
async fn call<F>(app: Arc<App>, status: StatusCode, f: F) -> Response
where
    F: FnOnce(&Arc<App>) -> ApiResult + Send + 'static,
{
    match tokio::task::spawn_blocking(move || f(&app)).await {
        Ok(Ok(v)) => (status, Json(v)).into_response(),
        Ok(Err(e)) => e.into_response(),
        Err(_) => ApiError::internal("handler panicked").into_response(),
    }
}

fn body<T: DeserializeOwned>(bytes: &Bytes) -> Result<T, ApiError> {
    if bytes.is_empty() {
        return serde_json::from_str("{}").map_err(|e| ApiError::bad_request(format!("a JSON body is required: {e}")));
    }
    serde_json::from_slice(bytes).map_err(|e| match e.classify() {
        serde_json::error::Category::Data => ApiError::invalid(e.to_string()),
        _ => ApiError::from(e),
    })
}

macro_rules! with_body {
    ($bytes:expr, $ty:ty) => {
        match body::<$ty>(&$bytes) {
            Ok(v) => v,
            Err(e) => return e.into_response(),
        }
    };
}

pub fn router(app: Arc<App>) -> Router {
    Router::new()
        .route("/health", get(|| async { Json(serde_json::json!({"status": "ok"})) }))
        .route("/corpora", get(list_corpora).post(ingest))
        .route("/corpora/{id}/ontology", get(get_ontology).put(put_ontology))
        .route("/corpora/{id}/documents", get(documents))
        .route("/corpora/{id}/documents/{doc_id}", get(document))
        .route("/corpora/{id}/labels", get(labels))
        .route("/corpora/{id}/labels/{doc_id}", put(put_label))
        .route("/corpora/{id}/augment", post(augment))
        .route("/corpora/{id}/extract", post(extract))
        .route("/corpora/{id}/table", get(latest_table))
        .route("/datasets/{id}", get(dataset))
        .route("/tables/{id}", get(table))
        .route("/jobs/train", post(train))
        .route("/jobs/{id}", get(job))
        .route("/eval", post(eval))
        .route("/analysis/chat", post(chat))
        .route("/cost/curve", post(cost_curve))
        .route("/cost/estimate", post(cost_estimate))
        .route("/tools", get(|| async { Json(api::tools_json()) }))
        .route("/schema", get(|| async { Json(crate::schema::openapi()) }))
        .fallback(|| async { ApiError::new(404, "not_found", "no such endpoint") })
        .with_state(app)
}

async fn list_corpora(State(app): Shared) -> Response {
    call(app, StatusCode::OK, |a| a.list_corpora()).await
}

async fn ingest(State(app): Shared, Query(q): Params, bytes: Bytes) -> Response {
    let corpus = q.get("corpus_id").cloned();
    call(app, StatusCode::CREATED, move |a| a.ingest(&bytes, corpus.as_deref())).await
}

async fn get_ontology(State(app): Shared, Path(id): Path<String>) -> Response {
    call(app, StatusCode::OK, move |a| a.ontology(&id)).await
}

async fn put_ontology(State(app): Shared, Path(id): Path<String>, bytes: Bytes) -> Response {
    let v: Value = with_body!(bytes, Value);
    call(app, StatusCode::OK, move |a| a.put_ontology(&id, v)).await
}

async fn documents(State(app): Shared, Path(id): Path<String>, Query(q): Params) -> Response {
    let q = match DocumentQuery::from_params(&q) {
        Ok(q) => q,
        Err(e) => return e.into_response(),
    };
    call(app, StatusCode::OK, move |a| a.documents(&id, &q)).await
}

async fn document(State(app): Shared, Path((id, doc)): Path<(String, String)>) -> Response {
    call(app, StatusCode::OK, move |a| a.document(&id, &doc)).await
}

async fn labels(State(app): Shared, Path(id): Path<String>, Query(q): Params) -> Response {
    let provenance = match q.get("provenance").map(|p| serde_json::from_value::<Provenance>(Value::String(p.clone()))) {
        None => None,
        Some(Ok(p)) => Some(p),
        Some(Err(_)) => return ApiError::bad_request("provenance must be human or llm").into_response(),
    };
    call(app, StatusCode::OK, move |a| a.labels(&id, provenance)).await
}

async fn put_label(State(app): Shared, Path((id, doc)): Path<(String, String)>, bytes: Bytes) -> Response {
    let b = with_body!(bytes, api::LabelBody);
    call(app, StatusCode::OK, move |a| a.put_label(&id, &doc, b)).await
}

async fn augment(State(app): Shared, Path(id): Path<String>, bytes: Bytes) -> Response {
    let cfg = with_body!(bytes, AugmentationConfig);
    call(app, StatusCode::ACCEPTED, move |a| a.augment(&id, cfg)).await
}

async fn extract(State(app): Shared, Path(id): Path<String>, bytes: Bytes) -> Response {
    let b = with_body!(bytes, api::ExtractBody);
    call(app, StatusCode::ACCEPTED, move |a| a.extract(&id, b)).await
}

async fn latest_table(State(app): Shared, Path(id): Path<String>) -> Response {
    call(app, StatusCode::OK, move |a| a.latest_table(&id)).await
}

async fn dataset(State(app): Shared, Path(id): Path<String>) -> Response {
    call(app, StatusCode::OK, move |a| a.dataset(&id)).await
}

async fn table(State(app): Shared, Path(id): Path<String>) -> Response {
    call(app, StatusCode::OK, move |a| a.table(&id)).await
}

async fn train(State(app): Shared, bytes: Bytes) -> Response {
    let b = with_body!(bytes, api::TrainBody);
    call(app, StatusCode::ACCEPTED, move |a| a.train(&b)).await
}

async fn job(State(app): Shared, Path(id): Path<String>) -> Response {
    call(app, StatusCode::OK, move |a| a.job(&id)).await
}

async fn eval(State(app): Shared, bytes: Bytes) -> Response {
    let b = with_body!(bytes, api::EvalBody);
    call(app, StatusCode::OK, move |a| a.eval(b)).await
}

async fn chat(State(app): Shared, bytes: Bytes) -> Response {
    let b = with_body!(bytes, api::ChatBody);
    call(app, StatusCode::OK, move |a| a.chat(b)).await
}

async fn cost_curve(State(app): Shared, bytes: Bytes) -> Response {
    let b = with_body!(bytes, api::CurveBody);
    call(app, StatusCode::OK, move |a| a.cost_curve(b)).await
}

async fn cost_estimate(State(app): Shared, bytes: Bytes) -> Response {
    let b = with_body!(bytes, api::EstimateBody);
    call(app, StatusCode::OK, move |a| a.cost_estimate(b)).await
}

/// Serves until ctrl-c or SIGTERM.
pub async fn serve(app: Arc<App>) -> std::io::Result<()> {
    let addr = format!("{}:{}", app.config.host, app.config.port);
    let listener = tokio::net::TcpListener::bind(&addr).await?;
    // printed, not logged, so scripts can read the bound port
    println!("listening on http://{}", listener.local_addr()?);
    axum::serve(listener, router(app)).with_graceful_shutdown(shutdown()).await
}

async fn shutdown() {
    let ctrl_c = async {
        let _ = tokio::signal::ctrl_c().await;
    };
    #[cfg(unix)]
    let term = async {
        if let Ok(mut s) = tokio::signal::unix::signal(tokio::signal::unix::SignalKind::terminate()) {
            s.recv().await;
        }
    };
    #[cfg(not(unix))]
    let term = std::future::pending::<()>();
    tokio::select! {
        _ = ctrl_c => {},
        _ = term => {},
    }
}
