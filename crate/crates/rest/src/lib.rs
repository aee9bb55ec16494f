//! HTTP API over a provflow store.
//!
//! Read endpoints browse nodes, links and repository files; nodes are
//! addressed by uuid and listings are paginated. The process and daemon
//! endpoints expose the engine's control surface (pause, play, kill) for
//! operator tooling; they are an addition on top of the read-only browse
//! API and can be disabled with [`Options::allow_control`].

use std::collections::HashMap;
use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::sync::{Arc, Mutex};
use std::time::Duration;

use axum::body::Body;
use axum::extract::{Path as UrlPath, Query, State};
use axum::http::{header, HeaderValue, Method, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use provflow::engine::{events, queue, rpc, state, workers, Action, DaemonStatus, ProcessState};
use provflow::query::{self, is_node_path, parse_filters, FilterExpr, QueryError};
use provflow::store::Tx;
use provflow::{Error, NodeKind, Store};
use serde::Deserialize;
use serde_json::{json, Value};
use tower_http::cors::{AllowOrigin, CorsLayer};
use uuid::Uuid;

pub const DEFAULT_PORT: u16 = 5000;
pub const DEFAULT_LIMIT: usize = 20;
pub const MAX_LIMIT: usize = 400;

#[derive(Debug, Clone)]
pub struct Options {
    /// Serve the POST control endpoints.
    pub allow_control: bool,
    /// Seconds a control action waits for the worker owning the process.
    pub rpc_timeout: f64,
    /// Allowed CORS origins; empty allows any origin.
    pub cors_origins: Vec<String>,
}

impl Default for Options {
    fn default() -> Self {
        Options { allow_control: true, rpc_timeout: 10.0, cors_origins: Vec::new() }
    }
}

struct Shared {
    root: PathBuf,
    options: Options,
    pool: Mutex<Vec<Store>>,
    /// One lock per process so control posts on it run one at a time.
    control: Mutex<HashMap<Uuid, Arc<Mutex<()>>>>,
}

#[derive(Clone)]
pub struct AppState(Arc<Shared>);

impl AppState {
    pub fn new(root: impl AsRef<Path>, options: Options) -> provflow::Result<AppState> {
        // Opening once creates the store and fails early on a bad path.
        let store = Store::open(root.as_ref())?;
        Ok(AppState(Arc::new(Shared {
            root: root.as_ref().to_path_buf(),
            options,
            pool: Mutex::new(vec![store]),
            control: Mutex::new(HashMap::new()),
        })))
    }

    fn checkout(&self) -> provflow::Result<Store> {
        let pooled = self.0.pool.lock().expect("pool poisoned").pop();
        match pooled {
            Some(s) => Ok(s),
            None => Store::open(&self.0.root),
        }
    }

    fn checkin(&self, store: Store) {
        let mut pool = self.0.pool.lock().expect("pool poisoned");
        if pool.len() < 16 {
            pool.push(store);
        }
    }

    /// Runs `f` on a pooled connection off the async executor.
    async fn blocking<T: Send + 'static>(
        &self,
        f: impl FnOnce(&Store) -> Result<T, ApiError> + Send + 'static,
    ) -> Result<T, ApiError> {
        let me = self.clone();
        tokio::task::spawn_blocking(move || {
            let store = me.checkout()?;
            let out = f(&store);
            me.checkin(store);
            out
        })
        .await
        .map_err(|e| ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, "internal", e.to_string()))?
    }
}

#[derive(Debug)]
pub struct ApiError {
    status: StatusCode,
    code: &'static str,
    message: String,
}

impl ApiError {
    fn new(status: StatusCode, code: &'static str, message: impl Into<String>) -> Self {
        ApiError { status, code, message: message.into() }
    }

    fn bad_request(message: impl Into<String>) -> Self {
        Self::new(StatusCode::BAD_REQUEST, "bad_request", message)
    }
}

impl From<Error> for ApiError {
    fn from(e: Error) -> Self {
        let (status, code) = match &e {
            Error::NotFound(_) => (StatusCode::NOT_FOUND, "not_found"),
            Error::InvalidPath(_) => (StatusCode::NOT_FOUND, "not_found"),
            Error::Query(QueryError::UnknownPath(_)) => (StatusCode::UNPROCESSABLE_ENTITY, "unknown_path"),
            Error::Query(_) => (StatusCode::BAD_REQUEST, "bad_query"),
            Error::Terminal(_) => (StatusCode::CONFLICT, "terminal"),
            Error::IllegalTransition { .. } => (StatusCode::CONFLICT, "illegal_transition"),
            Error::Unreachable(_) => (StatusCode::SERVICE_UNAVAILABLE, "engine_down"),
            Error::Config(_) => (StatusCode::BAD_REQUEST, "bad_request"),
            _ => (StatusCode::INTERNAL_SERVER_ERROR, "internal"),
        };
        ApiError::new(status, code, e.to_string())
    }
}

impl From<QueryError> for ApiError {
    fn from(e: QueryError) -> Self {
        Error::Query(e).into()
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        (self.status, Json(json!({"error": self.code, "message": self.message}))).into_response()
    }
}

type ApiResult<T> = Result<T, ApiError>;

fn parse_uuid(s: &str) -> ApiResult<Uuid> {
    Uuid::parse_str(s).map_err(|_| ApiError::new(StatusCode::NOT_FOUND, "not_found", format!("no node `{s}`")))
}

#[derive(Debug, Deserialize)]
pub struct PageParams {
    pub limit: Option<usize>,
    pub offset: Option<usize>,
}

impl PageParams {
    fn resolve(&self) -> ApiResult<(usize, usize)> {
        let limit = self.limit.unwrap_or(DEFAULT_LIMIT);
        if limit == 0 || limit > MAX_LIMIT {
            return Err(ApiError::bad_request(format!("limit must be between 1 and {MAX_LIMIT}")));
        }
        Ok((limit, self.offset.unwrap_or(0)))
    }
}

fn page(items: Vec<Value>, total: usize, limit: usize, offset: usize) -> Value {
    let next = (offset + limit < total).then_some(offset + limit);
    let prev = (offset > 0).then(|| offset.saturating_sub(limit));
    json!({"items": items, "total": total, "limit": limit, "offset": offset, "next": next, "prev": prev})
}

/// Filters from the query string, checked for unknown property paths.
pub fn request_filters(text: Option<&str>) -> ApiResult<Vec<FilterExpr>> {
    let filters = parse_filters(text.unwrap_or(""))?;
    if let Some(f) = filters.iter().find(|f| !is_node_path(&f.path)) {
        return Err(QueryError::UnknownPath(f.path.clone()).into());
    }
    Ok(filters)
}

#[derive(Debug, Deserialize)]
struct NodeListParams {
    filters: Option<String>,
    limit: Option<usize>,
    offset: Option<usize>,
}

async fn list_nodes(State(app): State<AppState>, Query(p): Query<NodeListParams>) -> ApiResult<Json<Value>> {
    let (limit, offset) = PageParams { limit: p.limit, offset: p.offset }.resolve()?;
    let filters = request_filters(p.filters.as_deref())?;
    let body = app
        .blocking(move |s| {
            let mut nodes = s.read(|tx| query::filter_nodes(tx, &filters))?;
            nodes.sort_by_key(|n| n.id());
            let total = nodes.len();
            let items = nodes.iter().skip(offset).take(limit).map(|n| n.summary()).collect();
            Ok(page(items, total, limit, offset))
        })
        .await?;
    Ok(Json(body))
}

async fn get_node(State(app): State<AppState>, UrlPath(uuid): UrlPath<String>) -> ApiResult<Json<Value>> {
    let uuid = parse_uuid(&uuid)?;
    let body = app
        .blocking(move |s| {
            let n = s.get_node(uuid)?;
            let mut doc = n.summary();
            doc["attributes"] = Value::Object(n.attributes().clone());
            doc["extras"] = Value::Object(n.extras().clone());
            Ok(doc)
        })
        .await?;
    Ok(Json(body))
}

async fn node_attributes(State(app): State<AppState>, UrlPath(uuid): UrlPath<String>) -> ApiResult<Json<Value>> {
    let uuid = parse_uuid(&uuid)?;
    Ok(Json(app.blocking(move |s| Ok(Value::Object(s.get_node(uuid)?.attributes().clone()))).await?))
}

async fn node_extras(State(app): State<AppState>, UrlPath(uuid): UrlPath<String>) -> ApiResult<Json<Value>> {
    let uuid = parse_uuid(&uuid)?;
    Ok(Json(app.blocking(move |s| Ok(Value::Object(s.get_node(uuid)?.extras().clone()))).await?))
}

fn link_listing(tx: &Tx<'_>, uuid: Uuid, incoming: bool) -> provflow::Result<Value> {
    let records = if incoming { tx.links_into(uuid)? } else { tx.links_from(uuid)? };
    let mut items = Vec::with_capacity(records.len());
    for r in records {
        let other = if incoming { r.link.source } else { r.link.target };
        let node = tx.get_node(other)?;
        items.push(json!({
            "id": r.id,
            "source": r.link.source.to_string(),
            "target": r.link.target.to_string(),
            "type": r.link.link_type.as_str(),
            "label": r.link.label.as_str(),
            "node": node.summary(),
        }));
    }
    Ok(Value::Array(items))
}

async fn links_incoming(State(app): State<AppState>, UrlPath(uuid): UrlPath<String>) -> ApiResult<Json<Value>> {
    let uuid = parse_uuid(&uuid)?;
    Ok(Json(app.blocking(move |s| Ok(s.read(|tx| link_listing(tx, uuid, true))?)).await?))
}

async fn links_outgoing(State(app): State<AppState>, UrlPath(uuid): UrlPath<String>) -> ApiResult<Json<Value>> {
    let uuid = parse_uuid(&uuid)?;
    Ok(Json(app.blocking(move |s| Ok(s.read(|tx| link_listing(tx, uuid, false))?)).await?))
}

async fn repo_list(State(app): State<AppState>, UrlPath(uuid): UrlPath<String>) -> ApiResult<Json<Value>> {
    let uuid = parse_uuid(&uuid)?;
    let body = app
        .blocking(move |s| {
            let n = s.get_node(uuid)?;
            let files: Vec<Value> =
                n.files().iter().map(|(p, f)| json!({"path": p, "size": f.size, "sha256": f.sha256})).collect();
            Ok(Value::Array(files))
        })
        .await?;
    Ok(Json(body))
}

#[derive(Debug, Deserialize)]
struct RepoParams {
    path: Option<String>,
}

async fn repo_contents(
    State(app): State<AppState>,
    UrlPath(uuid): UrlPath<String>,
    Query(p): Query<RepoParams>,
) -> ApiResult<Response> {
    let uuid = parse_uuid(&uuid)?;
    let path = p.path.ok_or_else(|| ApiError::bad_request("missing `path`"))?;
    let bytes = app.blocking(move |s| Ok(s.read_file(uuid, &path)?)).await?;
    Ok(([(header::CONTENT_TYPE, "application/octet-stream")], Body::from(bytes)).into_response())
}

#[derive(Debug, Deserialize)]
struct ProcessListParams {
    state: Option<String>,
    kind: Option<String>,
    process_type: Option<String>,
    limit: Option<usize>,
    offset: Option<usize>,
}

fn process_row(tx: &Tx<'_>, st: &state::ProcessStatus) -> provflow::Result<Value> {
    let node = tx.get_node(st.uuid)?;
    let history = events::history(tx, st.uuid)?;
    let retries = state::report_entries(tx, st.uuid)?.iter().filter(|e| e.category == "retry").count();
    Ok(json!({
        "uuid": st.uuid.to_string(),
        "id": st.node_id,
        "kind": node.kind().as_str(),
        "label": node.label(),
        "process_type": st.process_type,
        "state": st.state.as_str(),
        "exit_code": st.exit_code,
        "exception": st.exception,
        "pause_reason": st.pause_reason,
        "caller": st.caller.map(|c| c.to_string()),
        "ctime": node.summary()["ctime"],
        "last_transition": history.last().map(|e| e.at),
        "retry_count": retries,
    }))
}

async fn list_processes(State(app): State<AppState>, Query(p): Query<ProcessListParams>) -> ApiResult<Json<Value>> {
    let (limit, offset) = PageParams { limit: p.limit, offset: p.offset }.resolve()?;
    let wanted_state = p
        .state
        .as_deref()
        .map(ProcessState::from_str)
        .transpose()
        .map_err(|e| ApiError::bad_request(e.to_string()))?;
    let wanted_kind = p.kind.as_deref().map(NodeKind::new).transpose().map_err(|e| ApiError::bad_request(e.to_string()))?;
    let body = app
        .blocking(move |s| {
            Ok(s.read(|tx| {
                let mut rows = Vec::new();
                for st in state::list(tx, wanted_state)? {
                    if p.process_type.as_deref().is_some_and(|t| t != st.process_type) {
                        continue;
                    }
                    if let Some(k) = &wanted_kind {
                        if !tx.node_kind(st.uuid)?.is_some_and(|nk| nk.is_a(k)) {
                            continue;
                        }
                    }
                    rows.push(st);
                }
                let total = rows.len();
                let items = rows.iter().skip(offset).take(limit).map(|st| process_row(tx, st)).collect::<provflow::Result<_>>()?;
                Ok(page(items, total, limit, offset))
            })?)
        })
        .await?;
    Ok(Json(body))
}

async fn get_process(State(app): State<AppState>, UrlPath(uuid): UrlPath<String>) -> ApiResult<Json<Value>> {
    let uuid = parse_uuid(&uuid)?;
    Ok(Json(app.blocking(move |s| Ok(s.read(|tx| process_row(tx, &state::status(tx, uuid)?))?)).await?))
}

async fn process_report(State(app): State<AppState>, UrlPath(uuid): UrlPath<String>) -> ApiResult<Json<Value>> {
    let uuid = parse_uuid(&uuid)?;
    let body = app
        .blocking(move |s| {
            Ok(s.read(|tx| {
                let st = state::status(tx, uuid)?;
                let history = events::history(tx, uuid)?;
                let report = state::report_entries(tx, uuid)?;
                let retries: Vec<_> = report.iter().filter(|e| e.category == "retry").cloned().collect();
                Ok(json!({
                    "process": process_row(tx, &st)?,
                    "history": history,
                    "report": report,
                    "retries": retries,
                }))
            })?)
        })
        .await?;
    Ok(Json(body))
}

#[derive(Debug, Deserialize)]
struct ActionBody {
    action: String,
}

async fn process_action(
    State(app): State<AppState>,
    UrlPath(uuid): UrlPath<String>,
    body: Option<Json<ActionBody>>,
) -> ApiResult<Json<Value>> {
    if !app.0.options.allow_control {
        return Err(ApiError::new(StatusCode::FORBIDDEN, "read_only", "control endpoints are disabled"));
    }
    let uuid = parse_uuid(&uuid)?;
    let Some(Json(body)) = body else {
        return Err(ApiError::bad_request("body must be {\"action\": \"pause\" | \"play\" | \"kill\"}"));
    };
    let action = Action::from_str(&body.action).map_err(|e| ApiError::bad_request(e.to_string()))?;
    let lock = app.0.control.lock().expect("control map poisoned").entry(uuid).or_default().clone();
    let timeout = Duration::from_secs_f64(app.0.options.rpc_timeout);
    let body = app
        .blocking(move |s| {
            let _serial = lock.lock().expect("process lock poisoned");
            s.read(|tx| state::status(tx, uuid))?;
            let alive = s.read(workers::list)?.iter().any(|w| w.status == "alive");
            if !alive {
                return Err(ApiError::new(StatusCode::SERVICE_UNAVAILABLE, "engine_down", "no daemon worker is alive"));
            }
            let st = rpc::call(s, uuid, action, timeout)?;
            Ok(s.read(|tx| process_row(tx, &st))?)
        })
        .await?;
    Ok(Json(body))
}

async fn daemon_status(State(app): State<AppState>) -> ApiResult<Json<Value>> {
    let body = app
        .blocking(|s| {
            let status = s.read(|tx| {
                let workers = workers::list(tx)?;
                let alive = workers.iter().filter(|w| w.status == "alive").count();
                Ok(DaemonStatus { workers, alive, queue: queue::depth(tx)? })
            })?;
            Ok(serde_json::to_value(status).map_err(Error::from)?)
        })
        .await?;
    Ok(Json(body))
}

async fn not_found() -> ApiError {
    ApiError::new(StatusCode::NOT_FOUND, "not_found", "no such endpoint")
}

fn cors(options: &Options) -> CorsLayer {
    let layer = CorsLayer::new().allow_methods([Method::GET, Method::POST, Method::OPTIONS]).allow_headers([header::CONTENT_TYPE]);
    if options.cors_origins.is_empty() {
        layer.allow_origin(AllowOrigin::any())
    } else {
        let origins: Vec<HeaderValue> = options.cors_origins.iter().filter_map(|o| o.parse().ok()).collect();
        layer.allow_origin(origins)
    }
}

pub fn router(app: AppState) -> Router {
    let cors = cors(&app.0.options);
    let mut r = Router::new()
        .route("/api/v1/nodes", get(list_nodes))
        .route("/api/v1/nodes/{uuid}", get(get_node))
        .route("/api/v1/nodes/{uuid}/attributes", get(node_attributes))
        .route("/api/v1/nodes/{uuid}/extras", get(node_extras))
        .route("/api/v1/nodes/{uuid}/links/incoming", get(links_incoming))
        .route("/api/v1/nodes/{uuid}/links/outgoing", get(links_outgoing))
        .route("/api/v1/nodes/{uuid}/repo/list", get(repo_list))
        .route("/api/v1/nodes/{uuid}/repo/contents", get(repo_contents))
        .route("/api/v1/processes", get(list_processes))
        .route("/api/v1/processes/{uuid}", get(get_process))
        .route("/api/v1/processes/{uuid}/report", get(process_report))
        .route("/api/v1/daemon/status", get(daemon_status));
    if app.0.options.allow_control {
        r = r.route("/api/v1/processes/{uuid}/action", post(process_action));
    }
    r.fallback(not_found).layer(cors).with_state(app)
}

/// Serves until ctrl-c.
pub async fn serve(root: impl AsRef<Path>, addr: SocketAddr, options: Options) -> provflow::Result<()> {
    let app = AppState::new(root, options)?;
    let listener = tokio::net::TcpListener::bind(addr).await?;
    axum::serve(listener, router(app))
        .with_graceful_shutdown(async {
            let _ = tokio::signal::ctrl_c().await;
        })
        .await?;
    Ok(())
}
