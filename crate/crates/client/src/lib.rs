//! Wire types of the rendering service and an async client for it.

pub mod api;

use reqwest::StatusCode;

pub use api::*;

#[derive(Debug, thiserror::Error)]
pub enum ClientError {
    #[error("transport: {0}")]
    Transport(#[from] reqwest::Error),
    #[error("service returned {status}: {} ({})", body.error.code, body.error.message)]
    Service { status: u16, body: ErrorBody },
    #[error("service returned {status} with an unreadable body")]
    Unexpected { status: u16 },
}

/// A rendered frame with the response metadata.
#[derive(Debug, Clone)]
pub struct Frame {
    pub png: Vec<u8>,
    pub etag: Option<String>,
    pub render_ms: Option<f64>,
    pub wavelets_used: Option<usize>,
}

#[derive(Debug, Clone)]
pub struct Client {
    base: String,
    http: reqwest::Client,
}

impl Client {
    /// `base` is the service root, e.g. `http://127.0.0.1:8080`.
    pub fn new(base: &str) -> Client {
        Client {
            base: base.trim_end_matches('/').to_string(),
            http: reqwest::Client::new(),
        }
    }

    pub fn base_url(&self) -> &str {
        &self.base
    }

    fn url(&self, path: &str) -> String {
        format!("{}/api/v1{path}", self.base)
    }

    async fn check(resp: reqwest::Response) -> Result<reqwest::Response, ClientError> {
        let status = resp.status();
        if status.is_success() {
            return Ok(resp);
        }
        let bytes = resp.bytes().await?;
        match serde_json::from_slice::<ErrorBody>(&bytes) {
            Ok(body) => Err(ClientError::Service {
                status: status.as_u16(),
                body,
            }),
            Err(_) => Err(ClientError::Unexpected { status: status.as_u16() }),
        }
    }

    async fn get_json<T: serde::de::DeserializeOwned>(&self, path: &str) -> Result<T, ClientError> {
        let resp = Self::check(self.http.get(self.url(path)).send().await?).await?;
        Ok(resp.json().await?)
    }

    pub async fn health(&self) -> Result<Health, ClientError> {
        self.get_json("/health").await
    }

    pub async fn scenes(&self) -> Result<Vec<SceneInfo>, ClientError> {
        self.get_json("/scenes").await
    }

    pub async fn envs(&self) -> Result<Vec<EnvInfo>, ClientError> {
        self.get_json("/envs").await
    }

    pub async fn checkpoints(&self) -> Result<Vec<CheckpointInfo>, ClientError> {
        self.get_json("/checkpoints").await
    }

    pub async fn env_preview(&self, id: &str) -> Result<Vec<u8>, ClientError> {
        let resp = Self::check(self.http.get(self.url(&format!("/envmap/{id}/preview"))).send().await?).await?;
        Ok(resp.bytes().await?.to_vec())
    }

    pub async fn render(&self, req: &RenderRequest) -> Result<Frame, ClientError> {
        Ok(self.render_if_changed(req, None).await?.expect("no validator was sent"))
    }

    /// Renders unless the service's ETag for `req` equals `etag`, in which
    /// case `None` is returned.
    pub async fn render_if_changed(&self, req: &RenderRequest, etag: Option<&str>) -> Result<Option<Frame>, ClientError> {
        let mut builder = self.http.post(self.url("/render")).json(req);
        if let Some(tag) = etag {
            builder = builder.header(reqwest::header::IF_NONE_MATCH, tag);
        }
        let resp = builder.send().await?;
        if resp.status() == StatusCode::NOT_MODIFIED {
            return Ok(None);
        }
        let resp = Self::check(resp).await?;
        let header = |name: &str| resp.headers().get(name).and_then(|v| v.to_str().ok()).map(str::to_string);
        let etag = header("etag");
        let render_ms = header(HEADER_RENDER_MS).and_then(|v| v.parse().ok());
        let wavelets_used = header(HEADER_WAVELETS_USED).and_then(|v| v.parse().ok());
        Ok(Some(Frame {
            png: resp.bytes().await?.to_vec(),
            etag,
            render_ms,
            wavelets_used,
        }))
    }

    /// Sends a raw JSON body and returns the status and body bytes, for
    /// callers that want to inspect error responses themselves.
    pub async fn post_raw(&self, path: &str, body: &str) -> Result<(StatusCode, Vec<u8>), ClientError> {
        let resp = self
            .http
            .post(self.url(path))
            .header(reqwest::header::CONTENT_TYPE, "application/json")
            .body(body.to_string())
            .send()
            .await?;
        let status = resp.status();
        Ok((status, resp.bytes().await?.to_vec()))
    }

    pub async fn get_raw(&self, path: &str) -> Result<(StatusCode, Vec<u8>), ClientError> {
        let resp = self.http.get(self.url(path)).send().await?;
        let status = resp.status();
        Ok((status, resp.bytes().await?.to_vec()))
    }
}
