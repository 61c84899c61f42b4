use flowgraft::api::ApiError;
use reqwest::{Method, StatusCode};
use serde_json::Value;

use crate::error::CliError;

/// Thin JSON client for the engine API.
pub struct Client {
    base: String,
    http: reqwest::Client,
}

impl Client {
    pub fn new(base: &str) -> Self {
        Self {
            base: base.trim_end_matches('/').to_string(),
            http: reqwest::Client::new(),
        }
    }

    pub async fn get(&self, path: &str) -> Result<Value, CliError> {
        self.send(Method::GET, path, None).await
    }

    pub async fn delete(&self, path: &str) -> Result<Value, CliError> {
        self.send(Method::DELETE, path, None).await
    }

    pub async fn post_json(&self, path: &str, body: &Value) -> Result<Value, CliError> {
        let bytes = serde_json::to_vec(body).expect("values always serialize");
        self.send(Method::POST, path, Some(("application/json", bytes))).await
    }

    pub async fn post_raw(&self, path: &str, content_type: &'static str, body: Vec<u8>) -> Result<Value, CliError> {
        self.send(Method::POST, path, Some((content_type, body))).await
    }

    async fn send(
        &self,
        method: Method,
        path: &str,
        body: Option<(&'static str, Vec<u8>)>,
    ) -> Result<Value, CliError> {
        let url = format!("{}{path}", self.base);
        let mut req = self.http.request(method, &url);
        if let Some((content_type, bytes)) = body {
            req = req.header("content-type", content_type).body(bytes);
        }
        let resp = req
            .send()
            .await
            .map_err(|e| CliError::Unreachable(format!("{}: {e}", self.base)))?;
        let status = resp.status();
        let text = resp
            .text()
            .await
            .map_err(|e| CliError::Unreachable(format!("{url}: {e}")))?;
        if status.is_success() {
            return serde_json::from_str(&text)
                .map_err(|e| CliError::Server(format!("unreadable response from {url}: {e}")));
        }
        match serde_json::from_str::<ApiError>(&text) {
            Ok(err) if status.is_client_error() => Err(CliError::Rejected(err)),
            Ok(err) => Err(CliError::Server(format!("{}: {}", err.code, err.detail))),
            Err(_) => Err(CliError::Server(describe(status, &text))),
        }
    }
}

fn describe(status: StatusCode, text: &str) -> String {
    if text.is_empty() {
        status.to_string()
    } else {
        format!("{status}: {text}")
    }
}
