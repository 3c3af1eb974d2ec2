//! Read-only HTTP JSON API over the artifacts of finished runs.
//!
//! Every endpoint takes an optional `run` query parameter; without it the
//! first run by id is served. Errors are JSON objects `{code, message}`.
//!
//! | endpoint | result | order |
//! |---|---|---|
//! | `GET /api/runs` | run summaries | run id |
//! | `GET /api/slices` | slice index, label, interval, size | slice index |
//! | `GET /api/sankey?terms=a,b` | flow graph, optionally filtered | as stored |
//! | `GET /api/clusters/{t}/{c}/terms` | member terms (`c` may be `noise`) | as stored |
//! | `GET /api/term/{w}/path` | the nodes holding `w` | slice index |
//! | `GET /api/topics` | global topics | topic id |
//! | `GET /api/heatmap` | keyword movement per transition | keyword order |
//! | `GET /api/scatter?term=w&t=3&k=10` | context scatter of slices `t`, `t+1` | slice, rank |
//! | `GET /api/docs/search?terms=a,b&slice=2&limit=10&offset=0` | ranked documents | score desc, id |
//! | `GET /api/metrics` | evaluation report | slice, topic count |
//!
//! `/api/runs` and `/api/slices` also accept `offset` and `limit`.

use std::net::SocketAddr;
use std::sync::Arc;

use axum::extract::rejection::{PathRejection, QueryRejection};
use axum::extract::{Path, Query, State};
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::get;
use axum::{Json, Router};
use serde::{Deserialize, Serialize};
use ttec_core::flow::{context_scatter, FlowError, FlowParams, LocalCluster};
use ttec_core::store::{ArtifactStore, DocQuery, RunArtifacts, StoreError};

pub const DEFAULT_SEARCH_LIMIT: usize = 10;
pub const DEFAULT_SCATTER_K: usize = 10;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ApiError {
    #[serde(skip)]
    pub status: u16,
    pub code: String,
    pub message: String,
}

impl ApiError {
    fn new(status: StatusCode, code: &str, message: impl Into<String>) -> Self {
        Self {
            status: status.as_u16(),
            code: code.into(),
            message: message.into(),
        }
    }

    fn bad_request(message: impl Into<String>) -> Self {
        Self::new(StatusCode::BAD_REQUEST, "bad_request", message)
    }

    fn not_found(message: impl Into<String>) -> Self {
        Self::new(StatusCode::NOT_FOUND, "not_found", message)
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        let status = StatusCode::from_u16(self.status).unwrap_or(StatusCode::INTERNAL_SERVER_ERROR);
        (status, Json(self)).into_response()
    }
}

impl From<StoreError> for ApiError {
    fn from(e: StoreError) -> Self {
        let msg = e.to_string();
        match e {
            StoreError::UnknownRun(_) => Self::new(StatusCode::NOT_FOUND, "unknown_run", msg),
            StoreError::MissingArtifact { .. } => {
                Self::new(StatusCode::NOT_FOUND, "artifact_missing", msg)
            }
            StoreError::NoSuchSlice(_) => Self::not_found(msg),
            StoreError::BadQuery(_) => Self::bad_request(msg),
            StoreError::UnknownKeywords(_) => {
                Self::new(StatusCode::BAD_REQUEST, "unknown_keywords", msg)
            }
            StoreError::Invalid { .. } | StoreError::Io(_) => {
                Self::new(StatusCode::INTERNAL_SERVER_ERROR, "internal", msg)
            }
        }
    }
}

impl From<QueryRejection> for ApiError {
    fn from(e: QueryRejection) -> Self {
        Self::bad_request(e.body_text())
    }
}

impl From<PathRejection> for ApiError {
    fn from(e: PathRejection) -> Self {
        Self::bad_request(e.body_text())
    }
}

type ApiResult<T> = Result<Json<T>, ApiError>;
type Shared = Arc<ArtifactStore>;

fn run<'a>(store: &'a ArtifactStore, id: &Option<String>) -> Result<&'a RunArtifacts, ApiError> {
    Ok(store.run(id.as_deref())?)
}

fn split_terms(raw: &str) -> Vec<String> {
    raw.split(',')
        .map(|t| t.trim().to_lowercase())
        .filter(|t| !t.is_empty())
        .collect()
}

fn page<T: Clone>(items: &[T], offset: Option<usize>, limit: Option<usize>) -> Vec<T> {
    items
        .iter()
        .skip(offset.unwrap_or(0))
        .take(limit.unwrap_or(usize::MAX))
        .cloned()
        .collect()
}

#[derive(Debug, Deserialize)]
struct RunParam {
    run: Option<String>,
}

#[derive(Debug, Deserialize)]
struct PageParams {
    run: Option<String>,
    offset: Option<usize>,
    limit: Option<usize>,
}

#[derive(Debug, Deserialize)]
struct SankeyParams {
    run: Option<String>,
    terms: Option<String>,
}

#[derive(Debug, Deserialize)]
struct ScatterParams {
    run: Option<String>,
    term: Option<String>,
    t: Option<usize>,
    k: Option<usize>,
}

#[derive(Debug, Deserialize)]
struct SearchParams {
    run: Option<String>,
    terms: Option<String>,
    slice: Option<usize>,
    limit: Option<usize>,
    offset: Option<usize>,
}

async fn runs(
    State(store): State<Shared>,
    q: Result<Query<PageParams>, QueryRejection>,
) -> ApiResult<Vec<ttec_core::store::RunSummaryView>> {
    let Query(q) = q?;
    let all: Vec<_> = store.runs().map(RunArtifacts::summary).collect();
    Ok(Json(page(&all, q.offset, q.limit)))
}

async fn slices(
    State(store): State<Shared>,
    q: Result<Query<PageParams>, QueryRejection>,
) -> ApiResult<Vec<ttec_core::store::SliceView>> {
    let Query(q) = q?;
    let views = run(&store, &q.run)?.slice_views()?;
    Ok(Json(page(&views, q.offset, q.limit)))
}

async fn sankey(
    State(store): State<Shared>,
    q: Result<Query<SankeyParams>, QueryRejection>,
) -> Result<Response, ApiError> {
    let Query(q) = q?;
    let graph = run(&store, &q.run)?.sankey()?;
    Ok(match q.terms.as_deref().map(split_terms) {
        Some(terms) if !terms.is_empty() => Json(graph.filter_terms(&terms)).into_response(),
        _ => Json(graph).into_response(),
    })
}

fn parse_cluster(raw: &str) -> Result<LocalCluster, ApiError> {
    if raw == "noise" {
        return Ok(LocalCluster::Noise);
    }
    raw.parse().map(LocalCluster::Cluster).map_err(|_| {
        ApiError::bad_request(format!("cluster must be a number or `noise`, got {raw:?}"))
    })
}

async fn cluster_terms(
    State(store): State<Shared>,
    p: Result<Path<(usize, String)>, PathRejection>,
    q: Result<Query<RunParam>, QueryRejection>,
) -> ApiResult<Vec<String>> {
    let Path((t, c)) = p?;
    let Query(q) = q?;
    let cluster = parse_cluster(&c)?;
    let graph = run(&store, &q.run)?.sankey()?;
    graph
        .find_node(t, cluster)
        .map(|n| Json(n.terms.clone()))
        .ok_or_else(|| ApiError::not_found(format!("no node {}", cluster.node_id(t))))
}

async fn term_path(
    State(store): State<Shared>,
    p: Result<Path<String>, PathRejection>,
    q: Result<Query<RunParam>, QueryRejection>,
) -> ApiResult<Vec<ttec_core::flow::PathStep>> {
    let Path(term) = p?;
    let Query(q) = q?;
    let path = run(&store, &q.run)?.sankey()?.term_path(&term);
    if path.is_empty() {
        return Err(ApiError::not_found(format!(
            "term {term:?} is not in the flow graph"
        )));
    }
    Ok(Json(path))
}

async fn topics(
    State(store): State<Shared>,
    q: Result<Query<RunParam>, QueryRejection>,
) -> Result<Response, ApiError> {
    let Query(q) = q?;
    Ok(Json(run(&store, &q.run)?.topics()?).into_response())
}

async fn heatmap(
    State(store): State<Shared>,
    q: Result<Query<RunParam>, QueryRejection>,
) -> Result<Response, ApiError> {
    let Query(q) = q?;
    Ok(Json(run(&store, &q.run)?.heatmap()?).into_response())
}

async fn metrics(
    State(store): State<Shared>,
    q: Result<Query<RunParam>, QueryRejection>,
) -> Result<Response, ApiError> {
    let Query(q) = q?;
    Ok(Json(run(&store, &q.run)?.metrics()?).into_response())
}

async fn scatter(
    State(store): State<Shared>,
    q: Result<Query<ScatterParams>, QueryRejection>,
) -> ApiResult<ttec_core::flow::ContextScatter> {
    let Query(q) = q?;
    let term = q
        .term
        .map(|t| t.trim().to_lowercase())
        .filter(|t| !t.is_empty())
        .ok_or_else(|| ApiError::bad_request("missing `term`"))?;
    let t = q.t.ok_or_else(|| ApiError::bad_request("missing `t`"))?;
    let k = q.k.unwrap_or(DEFAULT_SCATTER_K);
    if k == 0 {
        return Err(ApiError::bad_request("k must be at least 1"));
    }
    let id = run(&store, &q.run)?.id.clone();
    // The layout is computed per request; keep it off the async workers.
    let result = tokio::task::spawn_blocking(move || {
        let r = store.run(Some(&id))?;
        let params = r
            .config
            .as_ref()
            .map(|c| c.flow.params.scatter.clone())
            .unwrap_or_else(|| FlowParams::default().scatter);
        let slices = r.slices()?;
        context_scatter(slices, t, &term, k, &params).map_err(|e| match e {
            FlowError::MissingTerm { .. } | FlowError::NoSuchSlice(_) => {
                ApiError::not_found(e.to_string())
            }
            other => ApiError::new(
                StatusCode::UNPROCESSABLE_ENTITY,
                "layout_failed",
                other.to_string(),
            ),
        })
    })
    .await
    .map_err(|e| ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, "internal", e.to_string()))?;
    Ok(Json(result?))
}

async fn search(
    State(store): State<Shared>,
    q: Result<Query<SearchParams>, QueryRejection>,
) -> ApiResult<Vec<ttec_core::store::DocHit>> {
    let Query(q) = q?;
    let keywords = split_terms(q.terms.as_deref().unwrap_or(""));
    if keywords.is_empty() {
        return Err(ApiError::bad_request("missing `terms`"));
    }
    let query = DocQuery {
        keywords,
        slice: q.slice,
        limit: q.limit.unwrap_or(DEFAULT_SEARCH_LIMIT),
        offset: q.offset.unwrap_or(0),
    };
    Ok(Json(run(&store, &q.run)?.search_docs(&query)?))
}

async fn fallback() -> ApiError {
    ApiError::not_found("no such endpoint")
}

pub fn router(store: Arc<ArtifactStore>) -> Router {
    Router::new()
        .route("/api/runs", get(runs))
        .route("/api/slices", get(slices))
        .route("/api/sankey", get(sankey))
        .route("/api/clusters/{t}/{c}/terms", get(cluster_terms))
        .route("/api/term/{w}/path", get(term_path))
        .route("/api/topics", get(topics))
        .route("/api/heatmap", get(heatmap))
        .route("/api/scatter", get(scatter))
        .route("/api/docs/search", get(search))
        .route("/api/metrics", get(metrics))
        .fallback(fallback)
        .with_state(store)
}

/// Serves until the process is stopped.
pub async fn serve(store: Arc<ArtifactStore>, addr: SocketAddr) -> std::io::Result<()> {
    let listener = tokio::net::TcpListener::bind(addr).await?;
    log::info!(
        "stage=serve event=listening addr={}",
        listener.local_addr()?
    );
    axum::serve(listener, router(store)).await
}
