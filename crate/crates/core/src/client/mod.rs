//! Policy backends: prompt and frames in, sampled completions with token
//! log-probabilities out.

mod embed;
mod oracle;
mod remote;

use serde::{Deserialize, Serialize};

use crate::model::{ActionChoice, BoundingBox, Frame, SkillKind, SkillOutput};

pub use embed::{EmbedClient, EmbedError};
pub use oracle::{tokenize, Corruption, FaultRule, FaultSchedule, ScriptedOracle, ABSENT_OBJECT};
pub use remote::{ChatClient, ChatConfig};

#[derive(Debug, thiserror::Error)]
pub enum ClientError {
    #[error("transport: {0}")]
    Transport(String),
    #[error("protocol: {0}")]
    Protocol(String),
    #[error("unsupported: {0}")]
    Unsupported(String),
    #[error("invalid request: {0}")]
    InvalidRequest(String),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TokenLogprob {
    pub token: String,
    pub logprob: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FinishReason {
    Stop,
    Length,
    Other,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Completion {
    pub text: String,
    pub token_logprobs: Vec<TokenLogprob>,
    pub finish_reason: FinishReason,
}

impl Completion {
    /// A completion whose tokens all carry the same log-probability.
    pub fn uniform(text: &str, logprob: f64) -> Self {
        Completion {
            text: text.to_string(),
            token_logprobs: tokenize(text)
                .into_iter()
                .map(|token| TokenLogprob { token, logprob })
                .collect(),
            finish_reason: FinishReason::Stop,
        }
    }
}

/// Ground truth the harness attaches for label-aware backends such as the scripted
/// oracle. Remote backends ignore it.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GroundTruthHint {
    pub kind: SkillKind,
    pub answer: SkillOutput,
    pub subgoal_index: u32,
    /// 1 for the first try at the current planned action, incremented after each failure.
    pub attempt: u32,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub failed: Option<ActionChoice>,
    /// Boxes a corrupted answer must also miss, such as other instances of the target class.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub avoid: Vec<BoundingBox>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GenerationRequest {
    pub prompt_text: String,
    pub frames: Vec<Frame>,
    pub max_tokens: u32,
    pub temperature: f64,
    pub sample_count: u32,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub hint: Option<GroundTruthHint>,
}

impl GenerationRequest {
    pub fn new(prompt_text: impl Into<String>, frames: Vec<Frame>) -> Self {
        Self {
            prompt_text: prompt_text.into(),
            frames,
            max_tokens: 256,
            temperature: 0.0,
            sample_count: 1,
            seed: None,
            hint: None,
        }
    }

    pub fn validate(&self) -> Result<(), ClientError> {
        if self.sample_count == 0 {
            return Err(ClientError::InvalidRequest("sample_count must be at least 1".into()));
        }
        if !self.temperature.is_finite() || self.temperature < 0.0 {
            return Err(ClientError::InvalidRequest(format!("temperature {}", self.temperature)));
        }
        Ok(())
    }
}

pub trait ModelBackend: Send + Sync {
    fn name(&self) -> &str;

    /// Returns exactly `sample_count` completions.
    fn generate(&self, request: &GenerationRequest) -> Result<Vec<Completion>, ClientError>;

    /// Total negative log-likelihood of `target` as the answer to `request`.
    fn score(&self, request: &GenerationRequest, target: &str) -> Result<f64, ClientError> {
        let _ = (request, target);
        Err(ClientError::Unsupported(format!("{} has no scoring endpoint", self.name())))
    }
}

/// `-Σ logprob`.
pub fn nll(tokens: &[TokenLogprob]) -> f64 {
    -tokens.iter().map(|t| t.logprob).sum::<f64>()
}

/// Negative log-likelihood of the tokens covering `answer` inside `completion`.
///
/// The answer span is located verbatim, then ASCII case-insensitively. If it cannot be
/// found, or the tokens do not concatenate to the text, the whole completion is scored.
/// With `length_normalized` the sum is divided by the number of scored tokens.
pub fn score_completion(completion: &Completion, answer: &str, length_normalized: bool) -> f64 {
    let toks = &completion.token_logprobs;
    let text = &completion.text;
    let joined: String = toks.iter().map(|t| t.token.as_str()).collect();
    let span = if joined == *text && !answer.is_empty() {
        text.find(answer)
            .or_else(|| text.to_ascii_lowercase().find(&answer.to_ascii_lowercase()))
            .map(|s| (s, s + answer.len()))
    } else {
        None
    };
    let picked: Vec<&TokenLogprob> = match span {
        Some((s, e)) => {
            let mut offset = 0;
            toks.iter()
                .filter(|t| {
                    let (a, b) = (offset, offset + t.token.len());
                    offset = b;
                    a < e && b > s
                })
                .collect()
        }
        None => toks.iter().collect(),
    };
    let total = -picked.iter().map(|t| t.logprob).sum::<f64>();
    if length_normalized && !picked.is_empty() {
        total / picked.len() as f64
    } else {
        total
    }
}

/// Scores `target` with the backend's own scorer, or from a sampled completion whose
/// text equals it.
pub fn score_target(
    backend: &dyn ModelBackend,
    request: &GenerationRequest,
    target: &str,
    samples: &[Completion],
) -> Result<f64, ClientError> {
    match backend.score(request, target) {
        Err(ClientError::Unsupported(why)) => samples
            .iter()
            .find(|c| c.text.trim() == target.trim())
            .map(|c| nll(&c.token_logprobs))
            .ok_or(ClientError::Unsupported(why)),
        other => other,
    }
}

/// Backend driven by a closure; handy for stubs and tests.
pub struct FnBackend<F> {
    name: String,
    f: F,
}

impl<F> FnBackend<F>
where
    F: Fn(&GenerationRequest) -> Result<Vec<Completion>, ClientError> + Send + Sync,
{
    pub fn new(name: impl Into<String>, f: F) -> Self {
        Self { name: name.into(), f }
    }
}

impl<F> ModelBackend for FnBackend<F>
where
    F: Fn(&GenerationRequest) -> Result<Vec<Completion>, ClientError> + Send + Sync,
{
    fn name(&self) -> &str {
        &self.name
    }

    fn generate(&self, request: &GenerationRequest) -> Result<Vec<Completion>, ClientError> {
        request.validate()?;
        (self.f)(request)
    }
}

/// Answers every request with the same text at log-probability 0.
pub fn constant_backend(text: &str) -> FnBackend<impl Fn(&GenerationRequest) -> Result<Vec<Completion>, ClientError>> {
    let text = text.to_string();
    FnBackend::new(format!("constant:{text}"), move |r: &GenerationRequest| {
        Ok(vec![Completion::uniform(&text, 0.0); r.sample_count as usize])
    })
}
