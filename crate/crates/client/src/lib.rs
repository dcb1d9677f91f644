//! Client for the pricing service.

use std::path::PathBuf;

use bsde_core::api::{
    ConfigSource, ErrorBody, ErrorKind, OracleRequest, OracleResponse, PresetInfo, ReportRequest, RunRequest,
    RunResponse,
};
use bsde_core::experiment::RunSummary;
use serde::de::DeserializeOwned;
use serde::Serialize;

#[derive(Debug, thiserror::Error)]
pub enum ClientError {
    #[error("{}", format_api(.0))]
    Api(ErrorBody),
    #[error("transport error: {0}")]
    Transport(#[from] reqwest::Error),
}

fn format_api(e: &ErrorBody) -> String {
    if e.details.is_empty() {
        e.message.clone()
    } else if e.message.contains(&e.details[0]) {
        e.message.clone()
    } else {
        format!("{}\n  {}", e.message, e.details.join("\n  "))
    }
}

impl ClientError {
    pub fn kind(&self) -> ErrorKind {
        match self {
            ClientError::Api(b) => b.kind,
            ClientError::Transport(_) => ErrorKind::Internal,
        }
    }
}

pub type Result<T> = std::result::Result<T, ClientError>;

#[derive(Debug, Clone)]
pub struct Client {
    base: String,
    http: reqwest::Client,
}

impl Client {
    /// `base` is the service root, e.g. `http://127.0.0.1:8080`.
    pub fn new(base: &str) -> Self {
        Self { base: base.trim_end_matches('/').to_string(), http: reqwest::Client::new() }
    }

    async fn decode<T: DeserializeOwned>(resp: reqwest::Response) -> Result<T> {
        if resp.status().is_success() {
            Ok(resp.json().await?)
        } else {
            let status = resp.status();
            let text = resp.text().await?;
            Err(ClientError::Api(serde_json::from_str(&text).unwrap_or(ErrorBody {
                kind: ErrorKind::Internal,
                message: format!("HTTP {status}: {text}"),
                details: vec![],
            })))
        }
    }

    async fn post<B: Serialize, T: DeserializeOwned>(&self, path: &str, body: &B) -> Result<T> {
        let resp = self.http.post(format!("{}{path}", self.base)).json(body).send().await?;
        Self::decode(resp).await
    }

    pub async fn health(&self) -> Result<String> {
        Self::decode(self.http.get(format!("{}/health", self.base)).send().await?).await
    }

    pub async fn presets(&self) -> Result<Vec<PresetInfo>> {
        Self::decode(self.http.get(format!("{}/presets", self.base)).send().await?).await
    }

    /// The resolved configuration document.
    pub async fn config(&self, source: &ConfigSource) -> Result<String> {
        let resp = self.http.post(format!("{}/config", self.base)).json(source).send().await?;
        if resp.status().is_success() {
            Ok(resp.text().await?)
        } else {
            Self::decode(resp).await
        }
    }

    pub async fn run(&self, source: ConfigSource, out_dir: Option<PathBuf>) -> Result<RunResponse> {
        self.post("/runs", &RunRequest { source, out_dir }).await
    }

    pub async fn oracle(&self, source: ConfigSource, xs: Vec<f64>) -> Result<OracleResponse> {
        self.post("/oracle", &OracleRequest { source, xs }).await
    }

    pub async fn report(&self, dir: PathBuf) -> Result<RunSummary> {
        self.post("/report", &ReportRequest { dir }).await
    }
}
