//! HTTP rendering service.
//!
//! | method | path | response |
//! |---|---|---|
//! | GET | `/api/v1/health` | `{status}` |
//! | GET | `/api/v1/scenes` | scene listing |
//! | GET | `/api/v1/envs` | environment listing |
//! | GET | `/api/v1/checkpoints` | checkpoint listing |
//! | POST | `/api/v1/render` | PNG, headers `X-Render-Ms`, `X-Wavelets-Used`, `ETag` |
//! | GET | `/api/v1/envmap/{id}/preview` | PNG of the cubemap cross |
//!
//! Errors are JSON `{error: {code, message, fields?}}`: 404 for unknown
//! ids, 422 for invalid requests, 503 while assets load.

pub mod error;
pub mod job;
pub mod registry;

use std::net::SocketAddr;
use std::path::PathBuf;
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::{Arc, OnceLock};
use std::time::Instant;

use axum::body::{Body, Bytes};
use axum::extract::{Path, State};
use axum::http::{header, HeaderMap, HeaderValue, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use prt_client::{FieldError, Health, RenderRequest, HEADER_RENDER_MS, HEADER_WAVELETS_USED};
use prt_core::imageio;
use tokio::sync::Semaphore;

pub use error::ApiError;
pub use registry::Registry;

use job::Job;

#[derive(Debug, Clone)]
pub struct ServiceConfig {
    pub assets_dir: PathBuf,
    pub host: String,
    pub port: u16,
    /// Concurrent renders; further requests wait in line.
    pub workers: usize,
}

impl Default for ServiceConfig {
    fn default() -> Self {
        ServiceConfig {
            assets_dir: PathBuf::from("assets"),
            host: "127.0.0.1".into(),
            port: 8080,
            workers: std::thread::available_parallelism().map_or(1, |n| n.get()),
        }
    }
}

struct Inner {
    registry: OnceLock<Result<Arc<Registry>, String>>,
    permits: Arc<Semaphore>,
}

/// Shared handler state. The registry is filled in once, after which it
/// is read-only.
#[derive(Clone)]
pub struct AppState {
    inner: Arc<Inner>,
}

impl AppState {
    /// State whose registry has not been loaded yet.
    pub fn loading(workers: usize) -> AppState {
        AppState {
            inner: Arc::new(Inner {
                registry: OnceLock::new(),
                permits: Arc::new(Semaphore::new(workers.max(1))),
            }),
        }
    }

    pub fn ready(registry: Registry, workers: usize) -> AppState {
        let s = AppState::loading(workers);
        s.finish_loading(Ok(registry));
        s
    }

    pub fn finish_loading(&self, registry: Result<Registry, String>) {
        let _ = self.inner.registry.set(registry.map(Arc::new));
    }

    pub fn is_ready(&self) -> bool {
        matches!(self.inner.registry.get(), Some(Ok(_)))
    }

    fn registry(&self) -> Result<Arc<Registry>, ApiError> {
        match self.inner.registry.get() {
            None => Err(ApiError::loading()),
            Some(Ok(r)) => Ok(r.clone()),
            Some(Err(e)) => Err(ApiError::internal(format!("asset loading failed: {e}"))),
        }
    }
}

pub fn router(state: AppState) -> Router {
    Router::new()
        .route("/api/v1/health", get(health))
        .route("/api/v1/scenes", get(scenes))
        .route("/api/v1/envs", get(envs))
        .route("/api/v1/checkpoints", get(checkpoints))
        .route("/api/v1/render", post(render))
        .route("/api/v1/envmap/{id}/preview", get(env_preview))
        .fallback(|| async { ApiError::new(StatusCode::NOT_FOUND, "not_found", "no such endpoint") })
        .with_state(state)
}

async fn health(State(st): State<AppState>) -> Json<Health> {
    let status = match st.inner.registry.get() {
        None => "loading",
        Some(Ok(_)) => "ok",
        Some(Err(_)) => "error",
    };
    Json(Health { status: status.into() })
}

async fn scenes(State(st): State<AppState>) -> Result<Response, ApiError> {
    Ok(Json(st.registry()?.scene_infos()).into_response())
}

async fn envs(State(st): State<AppState>) -> Result<Response, ApiError> {
    Ok(Json(st.registry()?.env_infos()).into_response())
}

async fn checkpoints(State(st): State<AppState>) -> Result<Response, ApiError> {
    Ok(Json(st.registry()?.checkpoint_infos()).into_response())
}

fn png_response(png: Vec<u8>) -> Response {
    let mut resp = Response::new(Body::from(png));
    resp.headers_mut().insert(header::CONTENT_TYPE, HeaderValue::from_static("image/png"));
    resp
}

async fn env_preview(State(st): State<AppState>, Path(id): Path<String>) -> Result<Response, ApiError> {
    let reg = st.registry()?;
    let env = reg
        .envs
        .get(&id)
        .cloned()
        .ok_or_else(|| ApiError::not_found("unknown_env", "environment", &id))?;
    let png = tokio::task::spawn_blocking(move || imageio::encode_png(&env.cubemap.cross_layout()))
        .await
        .map_err(|e| ApiError::internal(e.to_string()))?
        .map_err(|e| ApiError::internal(e.to_string()))?;
    Ok(png_response(png))
}

/// Parses a request, reporting the offending field path on failure.
pub fn parse_request(body: &[u8]) -> Result<RenderRequest, ApiError> {
    let de = &mut serde_json::Deserializer::from_slice(body);
    serde_path_to_error::deserialize(de).map_err(|e| {
        let path = e.path().to_string();
        let message = e.into_inner().to_string();
        // Missing and unknown keys are reported against the key itself.
        let key = ["missing field `", "unknown field `"]
            .iter()
            .find_map(|p| message.strip_prefix(p))
            .and_then(|rest| rest.split('`').next());
        let field = match (key, path.as_str()) {
            (Some(k), "." | "?") => k.to_string(),
            (Some(k), p) if !p.ends_with(k) => format!("{p}.{k}"),
            (_, "." | "?") => "body".into(),
            _ => path,
        };
        ApiError::invalid(vec![FieldError { field, message }])
    })
}

/// Sets the flag when dropped before `disarm`, i.e. when the client went
/// away and axum dropped the handler future.
struct CancelOnDrop(Option<Arc<AtomicBool>>);

impl CancelOnDrop {
    fn disarm(mut self) {
        self.0 = None;
    }
}

impl Drop for CancelOnDrop {
    fn drop(&mut self) {
        if let Some(flag) = &self.0 {
            flag.store(true, Ordering::Relaxed);
        }
    }
}

async fn render(State(st): State<AppState>, headers: HeaderMap, body: Bytes) -> Result<Response, ApiError> {
    let reg = st.registry()?;
    let job = Job::validate(&reg, parse_request(&body)?)?;
    let etag = HeaderValue::from_str(&job.etag).map_err(|e| ApiError::internal(e.to_string()))?;
    if headers
        .get(header::IF_NONE_MATCH)
        .is_some_and(|v| v.as_bytes() == etag.as_bytes())
    {
        let mut resp = StatusCode::NOT_MODIFIED.into_response();
        resp.headers_mut().insert(header::ETAG, etag);
        return Ok(resp);
    }
    let permit = st
        .inner
        .permits
        .clone()
        .acquire_owned()
        .await
        .map_err(|e| ApiError::internal(e.to_string()))?;
    let cancel = Arc::new(AtomicBool::new(false));
    let guard = CancelOnDrop(Some(cancel.clone()));
    let start = Instant::now();
    let task = tokio::task::spawn_blocking(move || {
        let _permit = permit;
        job.execute(&cancel)
    });
    let rendered = task.await.map_err(|e| ApiError::internal(e.to_string()))??;
    guard.disarm();
    let ms = start.elapsed().as_secs_f64() * 1e3;
    let mut resp = png_response(rendered.png);
    let h = resp.headers_mut();
    h.insert(header::ETAG, etag);
    h.insert(HEADER_RENDER_MS, HeaderValue::from_str(&format!("{ms:.2}")).expect("ascii"));
    h.insert(HEADER_WAVELETS_USED, HeaderValue::from(rendered.wavelets_used));
    Ok(resp)
}

/// Binds the listener and starts loading assets in the background.
/// Returns the bound address and the server future.
pub async fn bind(cfg: ServiceConfig) -> std::io::Result<(SocketAddr, AppState, impl std::future::Future<Output = std::io::Result<()>>)> {
    let listener = tokio::net::TcpListener::bind((cfg.host.as_str(), cfg.port)).await?;
    let addr = listener.local_addr()?;
    let state = AppState::loading(cfg.workers);
    let loader = state.clone();
    let assets = cfg.assets_dir.clone();
    tokio::task::spawn_blocking(move || {
        let result = Registry::scan(&assets).map_err(|e| e.to_string());
        if let Err(e) = &result {
            log::error!("asset loading failed: {e}");
        }
        loader.finish_loading(result);
    });
    let app = router(state.clone());
    let server = async move { axum::serve(listener, app).await };
    Ok((addr, state, server))
}

/// Runs the service until interrupted.
pub async fn serve(cfg: ServiceConfig) -> std::io::Result<()> {
    let (addr, _, server) = bind(cfg).await?;
    log::info!("listening on http://{addr}");
    tokio::select! {
        r = server => r,
        _ = tokio::signal::ctrl_c() => Ok(()),
    }
}
