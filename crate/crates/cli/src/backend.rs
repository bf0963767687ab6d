//! Backend construction from the merged configuration.

use std::borrow::Cow;

use anyhow::{Context, Result};
use euea_core::client::{
    ChatClient, ChatConfig, ClientError, Completion, Corruption, FaultRule, FaultSchedule, GenerationRequest,
    ModelBackend, ScriptedOracle,
};
use euea_core::store::FrameStore;

use crate::config::{BackendKind, FaultPreset, HarnessConfig};

pub fn fault_schedule(preset: FaultPreset) -> FaultSchedule {
    match preset {
        FaultPreset::None => FaultSchedule::none(),
        FaultPreset::WrongBox => FaultSchedule::first_attempt(Corruption::WrongBox),
        FaultPreset::WrongObject => FaultSchedule::first_attempt(Corruption::WrongObject),
        FaultPreset::WrongBoxRepeat => FaultSchedule {
            rules: vec![
                FaultRule {
                    subgoal_index: None,
                    attempt: 1,
                    corruption: Corruption::WrongBox,
                },
                FaultRule {
                    subgoal_index: None,
                    attempt: 2,
                    corruption: Corruption::RepeatFailedAction,
                },
            ],
        },
    }
}

/// Loads frame pixels from a store before forwarding; records on disk carry only hashes.
pub struct Hydrating<B> {
    inner: B,
    store: Option<FrameStore>,
}

impl<B: ModelBackend> Hydrating<B> {
    fn hydrate<'r>(&self, request: &'r GenerationRequest) -> Result<Cow<'r, GenerationRequest>, ClientError> {
        let Some(store) = &self.store else {
            return Ok(Cow::Borrowed(request));
        };
        if request.frames.iter().all(|f| f.is_loaded()) {
            return Ok(Cow::Borrowed(request));
        }
        let mut owned = request.clone();
        for f in &mut owned.frames {
            if !f.is_loaded() {
                *f = store
                    .load(f)
                    .map_err(|e| ClientError::InvalidRequest(format!("frame {}: {e}", f.hash())))?;
            }
        }
        Ok(Cow::Owned(owned))
    }
}

impl<B: ModelBackend> ModelBackend for Hydrating<B> {
    fn name(&self) -> &str {
        self.inner.name()
    }

    fn generate(&self, request: &GenerationRequest) -> Result<Vec<Completion>, ClientError> {
        self.inner.generate(&*self.hydrate(request)?)
    }

    fn score(&self, request: &GenerationRequest, target: &str) -> Result<f64, ClientError> {
        self.inner.score(&*self.hydrate(request)?, target)
    }
}

/// The configured backend. `frames` is where stored records keep their PNGs; only the
/// remote backend needs pixels, the oracle answers from the hint.
pub fn build(cfg: &HarnessConfig, frames: Option<FrameStore>) -> Result<Box<dyn ModelBackend>> {
    let b = &cfg.backend;
    Ok(match b.kind {
        BackendKind::Oracle => {
            let faults = fault_schedule(b.faults);
            faults.validate()?;
            Box::new(ScriptedOracle::new(faults).with_noise(b.noise))
        }
        BackendKind::Remote => {
            let api_key = std::env::var(&b.api_key_env).ok().filter(|k| !k.is_empty());
            let client = ChatClient::new(ChatConfig {
                base_url: b.endpoint.clone().context("backend.endpoint is not set")?,
                model: b.model.clone().context("backend.model is not set")?,
                api_key,
                timeout_secs: b.timeout_secs,
                log_path: b.log_path.clone(),
            })?;
            Box::new(Hydrating { inner: client, store: frames })
        }
    })
}
