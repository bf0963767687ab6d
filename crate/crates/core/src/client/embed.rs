use std::time::Duration;

use serde::{Deserialize, Serialize};

#[derive(Debug, thiserror::Error)]
pub enum EmbedError {
    #[error("embedder unavailable: {0}")]
    Unavailable(String),
    #[error("embedder protocol: {0}")]
    Protocol(String),
}

#[derive(Serialize)]
struct EmbedRequest<'a> {
    texts: &'a [String],
}

#[derive(Deserialize)]
struct EmbedResponse {
    vectors: Vec<Vec<f64>>,
    #[serde(default)]
    model_id: String,
}

/// Client for a sentence-embedding service exposing `POST /embed`.
pub struct EmbedClient {
    base_url: String,
    token: Option<String>,
    http: reqwest::blocking::Client,
}

impl EmbedClient {
    pub fn new(base_url: impl Into<String>, token: Option<String>) -> Result<Self, EmbedError> {
        let http = reqwest::blocking::Client::builder()
            .timeout(Duration::from_secs(30))
            .build()
            .map_err(|e| EmbedError::Unavailable(e.to_string()))?;
        Ok(Self {
            base_url: base_url.into(),
            token,
            http,
        })
    }

    /// Embeds `texts`, returning the vectors and the service's model id.
    pub fn embed(&self, texts: &[String]) -> Result<(Vec<Vec<f64>>, String), EmbedError> {
        let url = format!("{}/embed", self.base_url.trim_end_matches('/'));
        let mut req = self.http.post(&url).json(&EmbedRequest { texts });
        if let Some(t) = &self.token {
            req = req.bearer_auth(t);
        }
        let resp = req.send().map_err(|e| EmbedError::Unavailable(e.to_string()))?;
        if !resp.status().is_success() {
            return Err(EmbedError::Unavailable(format!("{url} returned {}", resp.status())));
        }
        let body: EmbedResponse = resp.json().map_err(|e| EmbedError::Protocol(e.to_string()))?;
        if body.vectors.len() != texts.len() {
            return Err(EmbedError::Protocol(format!(
                "{} vectors for {} texts",
                body.vectors.len(),
                texts.len()
            )));
        }
        Ok((body.vectors, body.model_id))
    }
}
