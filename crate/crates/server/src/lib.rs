//! HTTP/JSON service for training runs, oracle tables and run reports.
//!
//! | method | path       | body             | response            |
//! |--------|------------|------------------|---------------------|
//! | GET    | `/health`  |                  | `"ok"`              |
//! | GET    | `/presets` |                  | `[PresetInfo]`      |
//! | POST   | `/config`  | `ConfigSource`   | resolved TOML text  |
//! | POST   | `/runs`    | `RunRequest`     | `RunResponse`       |
//! | POST   | `/oracle`  | `OracleRequest`  | `OracleResponse`    |
//! | POST   | `/report`  | `ReportRequest`  | `RunSummary`        |
//!
//! Failures answer with an `ErrorBody`. Training and oracle work runs on the
//! blocking thread pool.

use std::net::SocketAddr;
use std::path::PathBuf;

use axum::extract::{Json, State};
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::Router;
use bsde_core::api::{
    ConfigSource, ErrorBody, ErrorKind, OracleRequest, OracleResponse, PresetInfo, ReportRequest, RunRequest,
    RunResponse,
};
use bsde_core::config::PRESETS;
use bsde_core::experiment::{self, RunSummary};
use bsde_core::Error;
use tokio::net::TcpListener;

#[derive(Clone)]
struct AppState {
    /// Directory against which relative paths in requests are resolved.
    base: PathBuf,
}

pub struct ApiError(ErrorBody);

impl From<Error> for ApiError {
    fn from(e: Error) -> Self {
        ApiError(ErrorBody::from(&e))
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        let status = match self.0.kind {
            ErrorKind::Config | ErrorKind::Usage => StatusCode::UNPROCESSABLE_ENTITY,
            ErrorKind::MissingArtifacts => StatusCode::NOT_FOUND,
            ErrorKind::Diverged | ErrorKind::Internal => StatusCode::INTERNAL_SERVER_ERROR,
        };
        (status, Json(self.0)).into_response()
    }
}

type ApiResult<T> = Result<Json<T>, ApiError>;

async fn blocking<T: Send + 'static>(f: impl FnOnce() -> bsde_core::Result<T> + Send + 'static) -> Result<T, ApiError> {
    match tokio::task::spawn_blocking(f).await {
        Ok(r) => r.map_err(ApiError::from),
        Err(e) => Err(ApiError(ErrorBody { kind: ErrorKind::Internal, message: e.to_string(), details: vec![] })),
    }
}

async fn health() -> Json<&'static str> {
    Json("ok")
}

async fn presets() -> Json<Vec<PresetInfo>> {
    Json(PRESETS.iter().map(|(n, d)| PresetInfo { name: n.to_string(), description: d.to_string() }).collect())
}

async fn config(Json(src): Json<ConfigSource>) -> Result<String, ApiError> {
    Ok(src.resolve()?.to_toml_string())
}

async fn run(State(st): State<AppState>, Json(req): Json<RunRequest>) -> ApiResult<RunResponse> {
    let cfg = req.source.resolve()?;
    let dir = match req.out_dir {
        Some(d) => st.base.join(d),
        None => st.base.join(&cfg.output.dir).join(cfg.preset.as_deref().unwrap_or("custom")),
    };
    tracing::info!(dir = %dir.display(), "starting run");
    let base = st.base.clone();
    let out = blocking(move || experiment::run(&cfg, &dir, &base)).await?;
    Ok(Json(RunResponse { dir: out.dir, summary: out.summary, diverged: out.error.map(|e| e.to_string()) }))
}

async fn oracle(State(st): State<AppState>, Json(req): Json<OracleRequest>) -> ApiResult<OracleResponse> {
    let cfg = req.source.resolve()?;
    let rows = blocking(move || experiment::oracle_table(&cfg, &req.xs, &st.base)).await?;
    Ok(Json(OracleResponse { rows }))
}

async fn report(State(st): State<AppState>, Json(req): Json<ReportRequest>) -> ApiResult<RunSummary> {
    let dir = st.base.join(req.dir);
    Ok(Json(blocking(move || experiment::report(&dir)).await?))
}

/// Routes with relative paths resolved against `base`.
pub fn router(base: PathBuf) -> Router {
    Router::new()
        .route("/health", get(health))
        .route("/presets", get(presets))
        .route("/config", post(config))
        .route("/runs", post(run))
        .route("/oracle", post(oracle))
        .route("/report", post(report))
        .with_state(AppState { base })
}

/// Binds `addr` and returns the bound address with the serving future.
pub async fn bind(
    addr: SocketAddr,
    base: PathBuf,
) -> std::io::Result<(SocketAddr, impl std::future::Future<Output = std::io::Result<()>>)> {
    let listener = TcpListener::bind(addr).await?;
    let local = listener.local_addr()?;
    let app = router(base);
    Ok((local, async move { axum::serve(listener, app).await }))
}
