//! Client for chat-completion endpoints that return token log-probabilities.

use std::fs::{File, OpenOptions};
use std::io::Write;
use std::path::PathBuf;
use std::sync::Mutex;
use std::time::Duration;

use base64::Engine;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::store::encode_png;

use super::{ClientError, Completion, FinishReason, GenerationRequest, ModelBackend, TokenLogprob};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ChatConfig {
    /// Base URL up to and including the API version, e.g. `http://host:8000/v1`.
    pub base_url: String,
    pub model: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub api_key: Option<String>,
    #[serde(default = "default_timeout")]
    pub timeout_secs: u64,
    /// JSONL file receiving every request/response pair.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub log_path: Option<PathBuf>,
}

fn default_timeout() -> u64 {
    120
}

pub struct ChatClient {
    config: ChatConfig,
    http: reqwest::blocking::Client,
    log: Option<Mutex<File>>,
}

impl ChatClient {
    pub fn new(config: ChatConfig) -> Result<Self, ClientError> {
        let http = reqwest::blocking::Client::builder()
            .timeout(Duration::from_secs(config.timeout_secs))
            .build()
            .map_err(|e| ClientError::Transport(e.to_string()))?;
        let log = match &config.log_path {
            Some(p) => Some(Mutex::new(
                OpenOptions::new()
                    .create(true)
                    .append(true)
                    .open(p)
                    .map_err(|e| ClientError::Transport(format!("opening {}: {e}", p.display())))?,
            )),
            None => None,
        };
        Ok(Self { config, http, log })
    }

    fn body(&self, request: &GenerationRequest, n: u32, seed: Option<u64>) -> Result<Value, ClientError> {
        let mut content = vec![json!({"type": "text", "text": request.prompt_text})];
        for f in &request.frames {
            let png = encode_png(f).map_err(|e| ClientError::InvalidRequest(e.to_string()))?;
            let b64 = base64::engine::general_purpose::STANDARD.encode(png);
            content.push(json!({
                "type": "image_url",
                "image_url": {"url": format!("data:image/png;base64,{b64}")}
            }));
        }
        let mut body = json!({
            "model": self.config.model,
            "messages": [{"role": "user", "content": content}],
            "max_tokens": request.max_tokens,
            "temperature": request.temperature,
            "n": n,
            "logprobs": true,
        });
        if let Some(s) = seed {
            body["seed"] = json!(s);
        }
        Ok(body)
    }

    fn post(&self, body: &Value) -> Result<Value, ClientError> {
        let url = format!("{}/chat/completions", self.config.base_url.trim_end_matches('/'));
        let mut req = self.http.post(&url).json(body);
        if let Some(key) = &self.config.api_key {
            req = req.bearer_auth(key);
        }
        let resp = req.send().map_err(|e| ClientError::Transport(e.to_string()))?;
        let status = resp.status();
        let text = resp.text().map_err(|e| ClientError::Transport(e.to_string()))?;
        if !status.is_success() {
            return Err(ClientError::Transport(format!("{url} returned {status}: {}", text.trim())));
        }
        let value: Value =
            serde_json::from_str(&text).map_err(|e| ClientError::Protocol(format!("response is not JSON: {e}")))?;
        if let Some(log) = &self.log {
            let line = json!({"request": body, "response": value});
            let mut f = log.lock().unwrap_or_else(|e| e.into_inner());
            writeln!(f, "{line}").map_err(|e| ClientError::Transport(format!("writing log: {e}")))?;
        }
        Ok(value)
    }
}

pub(crate) fn parse_choices(value: &Value) -> Result<Vec<Completion>, ClientError> {
    let choices = value
        .get("choices")
        .and_then(Value::as_array)
        .ok_or_else(|| ClientError::Protocol("response has no choices".into()))?;
    choices
        .iter()
        .map(|c| {
            let text = c
                .pointer("/message/content")
                .and_then(Value::as_str)
                .ok_or_else(|| ClientError::Protocol("choice has no message content".into()))?;
            let toks = c
                .pointer("/logprobs/content")
                .and_then(Value::as_array)
                .ok_or_else(|| ClientError::Protocol("choice has no logprobs".into()))?;
            let token_logprobs = toks
                .iter()
                .map(|t| {
                    let token = t.get("token").and_then(Value::as_str);
                    let logprob = t.get("logprob").and_then(Value::as_f64);
                    match (token, logprob) {
                        (Some(token), Some(lp)) if lp <= 0.0 => Ok(TokenLogprob {
                            token: token.to_string(),
                            logprob: lp,
                        }),
                        _ => Err(ClientError::Protocol(format!("malformed logprob entry {t}"))),
                    }
                })
                .collect::<Result<Vec<_>, _>>()?;
            let finish_reason = match c.get("finish_reason").and_then(Value::as_str) {
                Some("stop") => FinishReason::Stop,
                Some("length") => FinishReason::Length,
                _ => FinishReason::Other,
            };
            Ok(Completion {
                text: text.to_string(),
                token_logprobs,
                finish_reason,
            })
        })
        .collect()
}

impl ModelBackend for ChatClient {
    fn name(&self) -> &str {
        &self.config.model
    }

    fn generate(&self, request: &GenerationRequest) -> Result<Vec<Completion>, ClientError> {
        request.validate()?;
        let want = request.sample_count as usize;
        let mut out = Vec::with_capacity(want);
        // Some servers cap or ignore `n`; keep asking for the remainder.
        for round in 0..want as u64 {
            let remaining = (want - out.len()) as u32;
            let seed = request.seed.map(|s| s.wrapping_add(round));
            let value = self.post(&self.body(request, remaining, seed)?)?;
            let got = parse_choices(&value)?;
            if got.is_empty() {
                return Err(ClientError::Protocol("response has no choices".into()));
            }
            out.extend(got);
            if out.len() >= want {
                break;
            }
        }
        out.truncate(want);
        Ok(out)
    }
}
