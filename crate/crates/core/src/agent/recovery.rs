use serde::{Deserialize, Serialize};

use super::{labels, Agent, AgentError, Decision, Episode, SapPrompt};
use crate::client::{score_completion, Completion, GenerationRequest, GroundTruthHint};
use crate::model::{ActionChoice, BoundingBox, SkillKind, SkillOutput, Subgoal};
use crate::prompts::{build_prompt, parse_response, render_answer, PromptOptions};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", content = "value")]
pub enum RecoveryChoice {
    Action(ActionChoice),
    Box(BoundingBox),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RecoveryCandidate {
    /// Position among the drawn samples, 0-based.
    pub index: usize,
    pub choice: RecoveryChoice,
    pub score: f64,
    /// Equal to the failed pair, so not eligible.
    #[serde(default)]
    pub excluded: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RecoveryRecord {
    /// Index of the step the recovery chose an action for.
    pub step: u32,
    pub failed: ActionChoice,
    /// True when every sampled pair repeated the failed one and boxes were resampled instead.
    pub fallback_od: bool,
    pub candidates: Vec<RecoveryCandidate>,
    pub chosen_index: usize,
    pub succeeded: bool,
}

/// Index of the smallest score; ties go to the earliest. NaN never wins.
pub fn select_lowest(scores: &[f64]) -> Option<usize> {
    let mut best: Option<(usize, f64)> = None;
    for (i, &s) in scores.iter().enumerate() {
        if s.is_nan() {
            continue;
        }
        if best.is_none_or(|(_, b)| s < b) {
            best = Some((i, s));
        }
    }
    best.map(|(i, _)| i)
}

impl Agent<'_> {
    /// Draws `recovery_samples` completions, retrying the whole draw while none parse.
    fn sample(
        &self,
        ep: &mut Episode,
        kind: SkillKind,
        options: &PromptOptions,
        hint: GroundTruthHint,
    ) -> Result<Vec<(Completion, SkillOutput)>, AgentError> {
        let t = ep.memory.next_index();
        let prompt = build_prompt(self.templates, kind, &ep.memory, t, options)?;
        if kind == SkillKind::SAP {
            ep.sap_prompts.push(SapPrompt {
                step: t,
                text: prompt.text.clone(),
            });
        }
        for _ in 0..=self.config.parse_retry_limit {
            let req = GenerationRequest {
                prompt_text: prompt.text.clone(),
                frames: prompt.frames.clone(),
                max_tokens: self.config.max_tokens,
                temperature: self.config.temperature,
                sample_count: self.config.recovery_samples,
                seed: Some(ep.next_seed()),
                hint: Some(hint.clone()),
            };
            let parsed: Vec<(Completion, SkillOutput)> = self
                .backend
                .generate(&req)?
                .into_iter()
                .filter_map(|c| parse_response(kind, &c.text).ok().map(|p| (c, p)))
                .collect();
            if !parsed.is_empty() {
                return Ok(parsed);
            }
        }
        Err(AgentError::RecoveryExhausted)
    }

    pub(super) fn recover(
        &self,
        ep: &mut Episode,
        subgoal: &Subgoal,
        attempt: u32,
        expected: &ActionChoice,
        failed: &(ActionChoice, Option<BoundingBox>),
    ) -> Result<(Decision, RecoveryRecord), AgentError> {
        let step = ep.memory.next_index();
        let options = PromptOptions {
            recovery_failed: Some(failed.0.clone()),
            ..self.options()
        };
        let hint = GroundTruthHint {
            failed: Some(failed.0.clone()),
            ..Self::hint(SkillKind::SAP, SkillOutput::ActionChoice(expected.clone()), subgoal, attempt)
        };
        let samples = self.sample(ep, SkillKind::SAP, &options, hint)?;
        let mut candidates = Vec::with_capacity(samples.len());
        for (i, (completion, out)) in samples.iter().enumerate() {
            let SkillOutput::ActionChoice(choice) = out else { continue };
            let score = score_completion(completion, &render_answer(out), self.config.length_normalized);
            candidates.push(RecoveryCandidate {
                index: i,
                choice: RecoveryChoice::Action(choice.clone()),
                score,
                excluded: choice.matches(&failed.0),
            });
        }
        let eligible: Vec<f64> = candidates
            .iter()
            .map(|c| if c.excluded { f64::NAN } else { c.score })
            .collect();
        if let Some(pos) = select_lowest(&eligible) {
            let RecoveryChoice::Action(choice) = candidates[pos].choice.clone() else {
                unreachable!("SAP candidates are actions")
            };
            let bbox = self.detect(ep, subgoal, attempt, &choice)?;
            let record = RecoveryRecord {
                step,
                failed: failed.0.clone(),
                fallback_od: false,
                chosen_index: candidates[pos].index,
                candidates,
                succeeded: false,
            };
            return Ok((
                Decision {
                    choice,
                    bbox,
                    recovered: true,
                },
                record,
            ));
        }
        if candidates.is_empty() {
            return Err(AgentError::RecoveryExhausted);
        }
        self.recover_box(ep, subgoal, attempt, failed, step)
    }

    /// Every sampled pair repeated the failure: keep the pair, resample its box.
    fn recover_box(
        &self,
        ep: &mut Episode,
        subgoal: &Subgoal,
        attempt: u32,
        failed: &(ActionChoice, Option<BoundingBox>),
        step: u32,
    ) -> Result<(Decision, RecoveryRecord), AgentError> {
        let choice = failed.0.clone();
        let Some(object) = &choice.object else {
            // A navigation action has no box to resample; retry it as is.
            let record = RecoveryRecord {
                step,
                failed: choice.clone(),
                fallback_od: true,
                candidates: Vec::new(),
                chosen_index: 0,
                succeeded: false,
            };
            return Ok((
                Decision {
                    choice,
                    bbox: None,
                    recovered: true,
                },
                record,
            ));
        };
        self.set_pending_action(ep, &choice)?;
        let gt = labels::target_box(self.sim, &ep.state, object, ep.focus.as_ref())
            .unwrap_or_else(|| labels::placeholder_box(self.sim));
        let hint = GroundTruthHint {
            avoid: labels::class_boxes(self.sim, &ep.state, object),
            ..Self::hint(SkillKind::OD, SkillOutput::Box(gt), subgoal, attempt)
        };
        let samples = self.sample(ep, SkillKind::OD, &self.options(), hint)?;
        let candidates: Vec<RecoveryCandidate> = samples
            .iter()
            .enumerate()
            .filter_map(|(i, (completion, out))| match out {
                SkillOutput::Box(b) => Some(RecoveryCandidate {
                    index: i,
                    choice: RecoveryChoice::Box(*b),
                    score: score_completion(completion, &render_answer(out), self.config.length_normalized),
                    excluded: false,
                }),
                _ => None,
            })
            .collect();
        let scores: Vec<f64> = candidates.iter().map(|c| c.score).collect();
        let pos = select_lowest(&scores).ok_or(AgentError::RecoveryExhausted)?;
        let RecoveryChoice::Box(bbox) = candidates[pos].choice else {
            unreachable!("OD candidates are boxes")
        };
        let record = RecoveryRecord {
            step,
            failed: choice.clone(),
            fallback_od: true,
            chosen_index: candidates[pos].index,
            candidates,
            succeeded: false,
        };
        Ok((
            Decision {
                choice,
                bbox: Some(bbox),
                recovered: true,
            },
            record,
        ))
    }
}
