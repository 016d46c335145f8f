//! JSON API over a review corpus and its decision log.

use std::net::SocketAddr;
use std::path::PathBuf;
use std::sync::{Arc, RwLock};

use axum::extract::{Path, Query, Request, State};
use axum::http::{HeaderMap, StatusCode};
use axum::middleware::{self, Next};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use mcf_core::taxonomy::{CodeCatalog, Domain};
use serde::{Deserialize, Serialize};
use serde_json::json;
use tower_http::services::ServeDir;

use crate::expert::{export_ground_truth, write_ground_truth, ExportMode, EXPERT_GOLD_FILE};
use crate::store::{DecisionStore, ReviewDecision, ReviewState, Verdict};
use crate::{chart_progress, label_key, overall_progress, Progress, ReviewCorpus, ReviewError};

pub const TOKEN_HEADER: &str = "x-review-token";
pub const REVIEWER_HEADER: &str = "x-reviewer-id";
pub const DEFAULT_REVIEWER: &str = "default";
const DEFAULT_PAGE: usize = 50;
const MAX_PAGE: usize = 500;

pub type Clock = Arc<dyn Fn() -> String + Send + Sync>;

pub struct AppState {
    pub corpus: ReviewCorpus,
    pub state: RwLock<ReviewState>,
    pub store: DecisionStore,
    pub catalog: Option<CodeCatalog>,
    pub export_dir: PathBuf,
    pub token: Option<String>,
    pub clock: Clock,
}

impl AppState {
    /// Opens the store and replays it.
    pub fn open(
        corpus: ReviewCorpus,
        store_path: impl Into<PathBuf>,
        export_dir: impl Into<PathBuf>,
    ) -> Result<Self, ReviewError> {
        let (store, events) = DecisionStore::open(store_path)?;
        Ok(Self {
            corpus,
            state: RwLock::new(ReviewState::replay(&events)),
            store,
            catalog: None,
            export_dir: export_dir.into(),
            token: None,
            clock: Arc::new(|| {
                chrono::Utc::now().to_rfc3339_opts(chrono::SecondsFormat::Micros, true)
            }),
        })
    }

    fn snapshot(&self) -> std::sync::RwLockReadGuard<'_, ReviewState> {
        self.state.read().expect("state lock poisoned")
    }
}

#[derive(Debug)]
pub struct ApiError {
    status: StatusCode,
    kind: &'static str,
    message: String,
}

impl ApiError {
    fn new(status: StatusCode, kind: &'static str, message: impl Into<String>) -> Self {
        Self {
            status,
            kind,
            message: message.into(),
        }
    }
}

impl From<ReviewError> for ApiError {
    fn from(e: ReviewError) -> Self {
        let (status, kind) = match &e {
            ReviewError::UnknownChart(_) => (StatusCode::NOT_FOUND, "unknown_chart"),
            ReviewError::UnknownLabel { .. } => (StatusCode::NOT_FOUND, "unknown_label"),
            ReviewError::Invalid(_) => (StatusCode::UNPROCESSABLE_ENTITY, "invalid"),
            ReviewError::IncompleteReview { .. } => (StatusCode::CONFLICT, "incomplete_review"),
            ReviewError::Io { .. } | ReviewError::Jsonl(_) => {
                (StatusCode::INTERNAL_SERVER_ERROR, "storage")
            }
            ReviewError::Server(_) => (StatusCode::INTERNAL_SERVER_ERROR, "server"),
        };
        ApiError::new(status, kind, e.to_string())
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        (
            self.status,
            Json(json!({ "error": { "kind": self.kind, "message": self.message } })),
        )
            .into_response()
    }
}

type ApiResult<T> = Result<T, ApiError>;

#[derive(Debug, Deserialize)]
struct ListQuery {
    cursor: Option<String>,
    limit: Option<usize>,
    reviewer: Option<String>,
}

#[derive(Debug, Serialize)]
struct ChartSummary {
    chart_id: String,
    domain_tags: Vec<Domain>,
    decided: usize,
    total: usize,
}

async fn list_charts(
    State(app): State<Arc<AppState>>,
    Query(q): Query<ListQuery>,
) -> ApiResult<Json<serde_json::Value>> {
    let limit = q.limit.unwrap_or(DEFAULT_PAGE).clamp(1, MAX_PAGE);
    let state = app.snapshot();
    let mut ids = app
        .corpus
        .charts
        .keys()
        .filter(|id| q.cursor.as_ref().is_none_or(|c| *id > c));
    let page: Vec<&String> = ids.by_ref().take(limit).collect();
    let next_cursor = if ids.next().is_some() {
        page.last().map(|s| s.to_string())
    } else {
        None
    };
    let items: Vec<ChartSummary> = page
        .into_iter()
        .map(|id| {
            let p = chart_progress(&app.corpus, &state, id, q.reviewer.as_deref());
            ChartSummary {
                chart_id: id.clone(),
                domain_tags: app.corpus.charts[id].domain_tags.iter().copied().collect(),
                decided: p.decided,
                total: p.total,
            }
        })
        .collect();
    Ok(Json(
        json!({ "items": items, "next_cursor": next_cursor, "total": app.corpus.charts.len() }),
    ))
}

#[derive(Debug, Deserialize)]
struct ReviewerQuery {
    reviewer: Option<String>,
}

async fn chart_detail(
    State(app): State<Arc<AppState>>,
    Path(id): Path<String>,
    Query(q): Query<ReviewerQuery>,
) -> ApiResult<Json<serde_json::Value>> {
    let chart = app
        .corpus
        .charts
        .get(&id)
        .ok_or_else(|| ApiError::from(ReviewError::UnknownChart(id.clone())))?;
    let state = app.snapshot();
    let labels: Vec<serde_json::Value> = app.corpus.labels[&id]
        .iter()
        .map(|a| {
            let key = label_key(&a.code);
            let decisions: Vec<&ReviewDecision> = state
                .decisions_for(&id, &key)
                .filter(|d| q.reviewer.as_ref().is_none_or(|r| &d.reviewer_id == r))
                .collect();
            json!({
                "code": a.code,
                "description": app.catalog.as_ref().and_then(|c| c.describe(&a.code)),
                "rationale": a.rationale,
                "evidence_lines": a.evidence_lines,
                "decisions": decisions,
            })
        })
        .collect();
    let p = chart_progress(&app.corpus, &state, &id, q.reviewer.as_deref());
    Ok(Json(json!({
        "chart_id": chart.chart_id,
        "lines": chart.lines,
        "domain_tags": chart.domain_tags,
        "labels": labels,
        "progress": p,
    })))
}

#[derive(Debug, Deserialize)]
struct DecisionBody {
    code: String,
    verdict: Verdict,
    reason: Option<String>,
    reviewer_id: Option<String>,
    idempotency_key: Option<String>,
}

async fn post_decision(
    State(app): State<Arc<AppState>>,
    Path(id): Path<String>,
    headers: HeaderMap,
    Json(body): Json<DecisionBody>,
) -> ApiResult<(StatusCode, Json<serde_json::Value>)> {
    let label = app.corpus.find_label(&id, &body.code)?;
    let reviewer_id = body
        .reviewer_id
        .or_else(|| {
            headers
                .get(REVIEWER_HEADER)
                .and_then(|v| v.to_str().ok())
                .map(str::to_string)
        })
        .unwrap_or_else(|| DEFAULT_REVIEWER.to_string());
    let decision = ReviewDecision {
        chart_id: id.clone(),
        code: label_key(&label.code),
        reviewer_id,
        verdict: body.verdict,
        reason: body
            .reason
            .map(|r| r.trim().to_string())
            .filter(|r| !r.is_empty()),
        decided_at: (app.clock)(),
        idempotency_key: body.idempotency_key,
    };
    decision.validate()?;

    let mut state = app.state.write().expect("state lock poisoned");
    if decision
        .idempotency_key
        .as_deref()
        .is_some_and(|k| state.seen_key(k))
    {
        let p = chart_progress(&app.corpus, &state, &id, None);
        return Ok((
            StatusCode::OK,
            Json(json!({ "replayed": true, "progress": p })),
        ));
    }
    let superseded = state
        .decisions_for(&id, &decision.code)
        .any(|d| d.reviewer_id == decision.reviewer_id);
    app.store.append(&decision)?;
    state.apply(decision.clone());
    let p = chart_progress(&app.corpus, &state, &id, None);
    Ok((
        StatusCode::CREATED,
        Json(json!({ "decision": decision, "superseded": superseded, "progress": p })),
    ))
}

async fn progress(
    State(app): State<Arc<AppState>>,
    Query(q): Query<ReviewerQuery>,
) -> Json<serde_json::Value> {
    let state = app.snapshot();
    let p: Progress = overall_progress(&app.corpus, &state, q.reviewer.as_deref());
    let complete_charts = app
        .corpus
        .charts
        .keys()
        .filter(|c| {
            let cp = chart_progress(&app.corpus, &state, c, q.reviewer.as_deref());
            cp.decided == cp.total
        })
        .count();
    Json(json!({
        "decided": p.decided,
        "total": p.total,
        "completeness": p.completeness(),
        "charts": app.corpus.charts.len(),
        "complete_charts": complete_charts,
        "events": state.event_count(),
    }))
}

#[derive(Debug, Default, Deserialize)]
struct ExportBody {
    #[serde(default)]
    mode: Option<String>,
    #[serde(default)]
    reviewer: Option<String>,
    #[serde(default)]
    force: bool,
}

async fn export(
    State(app): State<Arc<AppState>>,
    body: Option<Json<ExportBody>>,
) -> ApiResult<Json<serde_json::Value>> {
    let body = body.map(|Json(b)| b).unwrap_or_default();
    let mode = match (body.mode.as_deref(), body.reviewer) {
        (None | Some("latest"), None) => ExportMode::Latest,
        (None | Some("reviewer"), Some(r)) => ExportMode::Reviewer(r),
        (Some("unanimous"), None) => ExportMode::Unanimous,
        (m, r) => {
            return Err(ApiError::new(
                StatusCode::UNPROCESSABLE_ENTITY,
                "invalid",
                format!("unsupported export mode {m:?} with reviewer {r:?}"),
            ))
        }
    };
    let gt = {
        let state = app.snapshot();
        export_ground_truth(&app.corpus, &state, &mode, body.force)?
    };
    write_ground_truth(&app.export_dir, &gt)?;
    Ok(Json(json!({
        "path": app.export_dir.join(EXPERT_GOLD_FILE),
        "review_session_id": gt.review_session_id,
        "completeness": gt.completeness,
        "accepted": gt.charts.iter().map(|c| c.assignments.len()).sum::<usize>(),
        "rejected": gt.rejected.len(),
        "undecided": gt.undecided.len(),
    })))
}

async fn catalog_lookup(
    State(app): State<Arc<AppState>>,
    Path(code): Path<String>,
) -> ApiResult<Json<serde_json::Value>> {
    let catalog = app.catalog.as_ref().ok_or_else(|| {
        ApiError::new(
            StatusCode::NOT_FOUND,
            "no_catalog",
            "service started without a catalog",
        )
    })?;
    let description = catalog.describe(&code).ok_or_else(|| {
        ApiError::new(
            StatusCode::NOT_FOUND,
            "unknown_code",
            format!("{code} is not in the catalog"),
        )
    })?;
    Ok(Json(
        json!({ "code": code, "description": description, "catalog_version": catalog.version }),
    ))
}

async fn require_token(State(app): State<Arc<AppState>>, req: Request, next: Next) -> Response {
    if let Some(expected) = &app.token {
        let ok = req
            .headers()
            .get(TOKEN_HEADER)
            .and_then(|v| v.to_str().ok())
            == Some(expected.as_str());
        if !ok {
            return ApiError::new(
                StatusCode::UNAUTHORIZED,
                "unauthorized",
                "missing or wrong review token",
            )
            .into_response();
        }
    }
    next.run(req).await
}

pub fn router(app: Arc<AppState>, ui_dir: Option<PathBuf>) -> Router {
    let api = Router::new()
        .route("/charts", get(list_charts))
        .route("/charts/{id}", get(chart_detail))
        .route("/charts/{id}/decisions", post(post_decision))
        .route("/progress", get(progress))
        .route("/export", post(export))
        .route("/catalog/{code}", get(catalog_lookup))
        .route_layer(middleware::from_fn_with_state(app.clone(), require_token))
        .with_state(app);
    let router = Router::new().nest("/api", api);
    match ui_dir {
        Some(dir) => router.fallback_service(ServeDir::new(dir)),
        None => router,
    }
}

pub struct ServeConfig {
    pub addr: SocketAddr,
    pub charts: PathBuf,
    pub gold: PathBuf,
    pub store: PathBuf,
    pub export_dir: PathBuf,
    pub catalog: Option<CodeCatalog>,
    /// Shared token required in the `x-review-token` header when set.
    pub token: Option<String>,
    pub ui_dir: Option<PathBuf>,
}

/// Loads the corpus, replays the decision log and serves until shutdown.
pub async fn serve(cfg: ServeConfig) -> Result<(), ReviewError> {
    let corpus = ReviewCorpus::load(&cfg.charts, &cfg.gold)?;
    let mut app = AppState::open(corpus, &cfg.store, &cfg.export_dir)?;
    app.catalog = cfg.catalog;
    app.token = cfg.token;
    let listener = tokio::net::TcpListener::bind(cfg.addr)
        .await
        .map_err(|e| ReviewError::Server(format!("bind {}: {e}", cfg.addr)))?;
    axum::serve(listener, router(Arc::new(app), cfg.ui_dir))
        .await
        .map_err(|e| ReviewError::Server(e.to_string()))
}
