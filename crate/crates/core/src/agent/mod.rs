//! Episode runtime: expert navigation with object recognition, model-driven
//! interaction (SAP, then OD, then execute), subgoal advancement by GRSub, and
//! sampling-based recovery after failed actions.

pub mod labels;
mod recovery;

use std::collections::BTreeSet;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::client::{ClientError, GenerationRequest, GroundTruthHint, ModelBackend};
use crate::model::{
    Action, ActionChoice, BoundingBox, Frame, Memory, MemoryStep, ObjectRef, PendingStep, Phase, SkillKind,
    SkillOutput, Subgoal, TaskType,
};
use crate::prompts::{build_prompt, parse_response, PromptError, PromptOptions, TemplateSet};
use crate::sim::{goal_satisfied, PlannedAction, Scenario, SimError, Simulator, WorldState};

pub use recovery::{select_lowest, RecoveryCandidate, RecoveryChoice, RecoveryRecord};

#[derive(Debug, thiserror::Error)]
pub enum AgentError {
    #[error("backend: {0}")]
    Backend(#[from] ClientError),
    #[error("simulator: {0}")]
    Sim(#[from] SimError),
    #[error("prompt: {0}")]
    Prompt(#[from] PromptError),
    #[error("frames differ in size: {0}x{1} vs {2}x{3}")]
    DimensionMismatch(u32, u32, u32, u32),
    #[error("recovery produced no parseable candidate")]
    RecoveryExhausted,
    #[error("invalid agent config: {0}")]
    Config(String),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AgentConfig {
    /// Past steps shown to SAP.
    pub k: u32,
    /// Samples drawn by the recovery step.
    pub recovery_samples: u32,
    pub recovery_enabled: bool,
    /// On failure, tell the next SAP prompt which pair failed (no resampling).
    pub env_feedback: bool,
    pub max_steps: u32,
    pub parse_retry_limit: u32,
    /// Sampling temperature for recovery draws.
    pub temperature: f64,
    /// Divide recovery scores by the number of scored tokens.
    pub length_normalized: bool,
    pub frame_budget: usize,
    pub max_tokens: u32,
    pub seed: u64,
}

impl Default for AgentConfig {
    fn default() -> Self {
        Self {
            k: 4,
            recovery_samples: 10,
            recovery_enabled: true,
            env_feedback: false,
            max_steps: 150,
            parse_retry_limit: 2,
            temperature: 0.7,
            length_normalized: false,
            frame_budget: 1,
            max_tokens: 256,
            seed: 0,
        }
    }
}

impl AgentConfig {
    pub fn validate(&self) -> Result<(), AgentError> {
        if self.recovery_samples == 0 {
            return Err(AgentError::Config("recovery_samples must be at least 1".into()));
        }
        if self.max_steps == 0 {
            return Err(AgentError::Config("max_steps must be at least 1".into()));
        }
        if !self.temperature.is_finite() || self.temperature < 0.0 {
            return Err(AgentError::Config(format!("temperature {}", self.temperature)));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpisodeResult {
    pub scene_id: String,
    pub task_type: TaskType,
    pub success: bool,
    pub goal_conditions_met: u32,
    pub goal_conditions_total: u32,
    pub steps_taken: u32,
    pub failures: u32,
    pub recoveries_attempted: u32,
    pub recoveries_succeeded: u32,
    pub budget_exhausted: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
    pub transcript: Memory,
    pub recoveries: Vec<RecoveryRecord>,
    /// Every SAP prompt issued, in order.
    pub sap_prompts: Vec<SapPrompt>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SapPrompt {
    /// Index of the step being decided.
    pub step: u32,
    pub text: String,
}

impl EpisodeResult {
    pub fn goal_condition_rate(&self) -> f64 {
        if self.goal_conditions_total == 0 {
            0.0
        } else {
            f64::from(self.goal_conditions_met) / f64::from(self.goal_conditions_total)
        }
    }

    /// A failed result for an episode that could not run at all.
    pub fn aborted(scenario: &Scenario, error: &AgentError) -> Self {
        Self {
            scene_id: scenario.scene.scene_id.clone(),
            task_type: scenario.task.task_type,
            success: false,
            goal_conditions_met: 0,
            goal_conditions_total: scenario.task.goal_conditions.len() as u32,
            steps_taken: 0,
            failures: 0,
            recoveries_attempted: 0,
            recoveries_succeeded: 0,
            budget_exhausted: false,
            error: Some(error.to_string()),
            transcript: Memory::new(scenario.task.clone()),
            recoveries: Vec::new(),
            sap_prompts: Vec::new(),
        }
    }
}

/// True when the action left the observation unchanged.
pub fn detect_failure(before: &Frame, after: &Frame) -> Result<bool, AgentError> {
    if (before.width(), before.height()) != (after.width(), after.height()) {
        return Err(AgentError::DimensionMismatch(
            before.width(),
            before.height(),
            after.width(),
            after.height(),
        ));
    }
    Ok(before.hash() == after.hash())
}

pub struct Agent<'a> {
    pub sim: &'a Simulator,
    pub templates: &'a TemplateSet,
    pub backend: &'a dyn ModelBackend,
    pub config: AgentConfig,
}

/// Mutable state of one running episode.
struct Episode {
    state: WorldState,
    frame: Frame,
    memory: Memory,
    failures: u32,
    recoveries_attempted: u32,
    recoveries_succeeded: u32,
    recoveries: Vec<RecoveryRecord>,
    sap_prompts: Vec<SapPrompt>,
    calls: u64,
    seed: u64,
    /// Instance the expert plan expects the current interaction to address.
    focus: Option<ObjectRef>,
}

impl Episode {
    fn steps(&self) -> u32 {
        self.memory.steps.len() as u32
    }

    fn next_seed(&mut self) -> u64 {
        self.calls += 1;
        self.seed.wrapping_add(self.calls.wrapping_mul(0x9e37_79b9_7f4a_7c15))
    }
}

/// What the model chose for one step.
struct Decision {
    choice: ActionChoice,
    bbox: Option<BoundingBox>,
    recovered: bool,
}

impl Agent<'_> {
    pub fn run_episodes(&self, scenarios: &[Scenario]) -> Vec<EpisodeResult> {
        scenarios
            .par_iter()
            .map(|s| self.run_episode(s).unwrap_or_else(|e| EpisodeResult::aborted(s, &e)))
            .collect()
    }

    pub fn run_episode(&self, scenario: &Scenario) -> Result<EpisodeResult, AgentError> {
        self.config.validate()?;
        let (state, frame) = self.sim.reset(&scenario.scene, &scenario.task)?;
        let plan = self.sim.expert_plan(&state, &scenario.task)?;
        let seed = scenario
            .scene
            .scene_id
            .bytes()
            .fold(self.config.seed ^ 0xcbf2_9ce4_8422_2325, |h, b| {
                (h ^ u64::from(b)).wrapping_mul(0x100_0000_01b3)
            });
        let mut ep = Episode {
            state,
            frame,
            memory: Memory::new(scenario.task.clone()),
            failures: 0,
            recoveries_attempted: 0,
            recoveries_succeeded: 0,
            recoveries: Vec::new(),
            sap_prompts: Vec::new(),
            calls: 0,
            seed,
            focus: None,
        };
        let mut error = None;
        let outcome = (|| -> Result<(), AgentError> {
            for sg in &plan.subgoals {
                if self.done(&ep, scenario) {
                    break;
                }
                match sg.subgoal.phase {
                    Phase::Navigation => self.navigate(&mut ep, &sg.subgoal, &sg.target)?,
                    Phase::Interaction => {
                        self.interact(&mut ep, scenario, &sg.subgoal, &sg.actions)?;
                    }
                }
            }
            Ok(())
        })();
        match outcome {
            Ok(()) => {}
            Err(e @ AgentError::Backend(_)) => return Err(e),
            Err(e) => error = Some(e.to_string()),
        }
        ep.memory.current = None;
        let status = goal_satisfied(&ep.state, &scenario.task);
        Ok(EpisodeResult {
            scene_id: scenario.scene.scene_id.clone(),
            task_type: scenario.task.task_type,
            success: status.all,
            goal_conditions_met: status.satisfied,
            goal_conditions_total: status.total,
            steps_taken: ep.steps(),
            failures: ep.failures,
            recoveries_attempted: ep.recoveries_attempted,
            recoveries_succeeded: ep.recoveries_succeeded,
            budget_exhausted: !status.all && ep.steps() >= self.config.max_steps,
            error,
            transcript: ep.memory,
            recoveries: ep.recoveries,
            sap_prompts: ep.sap_prompts,
        })
    }

    fn done(&self, ep: &Episode, scenario: &Scenario) -> bool {
        ep.steps() >= self.config.max_steps || goal_satisfied(&ep.state, &scenario.task).all
    }

    fn options(&self) -> PromptOptions {
        PromptOptions {
            k: self.config.k,
            frame_budget: self.config.frame_budget,
            ..PromptOptions::default()
        }
    }

    /// One model call at temperature 0 with parse retries.
    fn ask(
        &self,
        ep: &mut Episode,
        kind: SkillKind,
        options: &PromptOptions,
        hint: GroundTruthHint,
    ) -> Result<Option<SkillOutput>, AgentError> {
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
                temperature: 0.0,
                sample_count: 1,
                seed: Some(ep.next_seed()),
                hint: Some(hint.clone()),
            };
            let out = self.backend.generate(&req)?;
            if let Some(c) = out.first() {
                if let Ok(parsed) = parse_response(kind, &c.text) {
                    return Ok(Some(parsed));
                }
            }
        }
        Ok(None)
    }

    fn hint(kind: SkillKind, answer: SkillOutput, subgoal: &Subgoal, attempt: u32) -> GroundTruthHint {
        GroundTruthHint {
            kind,
            answer,
            subgoal_index: subgoal.index,
            attempt,
            failed: None,
            avoid: Vec::new(),
        }
    }

    /// Opens a pending step for the current observation and fills `v_t` with OR.
    fn observe(&self, ep: &mut Episode, subgoal: &Subgoal, attempt: u32) -> Result<BTreeSet<ObjectRef>, AgentError> {
        ep.memory.current = Some(PendingStep {
            frame: Some(ep.frame.clone()),
            pose: Some(ep.state.agent),
            subgoal: Some(subgoal.clone()),
            ..PendingStep::default()
        });
        let gt = SkillOutput::ObjectSet(labels::visible_classes(self.sim, &ep.state));
        let visible: BTreeSet<ObjectRef> = match self.ask(ep, SkillKind::OR, &self.options(), Self::hint(SkillKind::OR, gt, subgoal, attempt))? {
            Some(SkillOutput::ObjectSet(names)) => names.into_iter().map(ObjectRef::class).collect(),
            _ => BTreeSet::new(),
        };
        if let Some(p) = ep.memory.current.as_mut() {
            p.visible = Some(visible.clone());
        }
        Ok(visible)
    }

    /// Executes an action and records the step. Returns whether it failed.
    fn execute(
        &self,
        ep: &mut Episode,
        subgoal: &Subgoal,
        visible: BTreeSet<ObjectRef>,
        action: Action,
        bbox: Option<BoundingBox>,
    ) -> Result<bool, AgentError> {
        let out = self.sim.step(&ep.state, &action, bbox.as_ref());
        let failed = detect_failure(&ep.frame, &out.frame)?;
        debug_assert_eq!(failed, !out.result.succeeded());
        let step = MemoryStep {
            step_index: ep.memory.next_index(),
            frame: ep.frame.clone(),
            visible,
            pose: ep.state.agent,
            bbox: if action.is_interaction() { bbox } else { None },
            action,
            result: out.result,
            subgoal: subgoal.clone(),
        };
        ep.memory
            .push(step)
            .map_err(|e| AgentError::Config(format!("memory rejected step: {e}")))?;
        ep.state = out.state;
        ep.frame = out.frame;
        if failed {
            ep.failures += 1;
        }
        Ok(failed)
    }

    fn navigate(&self, ep: &mut Episode, subgoal: &Subgoal, target: &ObjectRef) -> Result<(), AgentError> {
        let Some(cell) = ep.state.cell_of(target) else {
            return Ok(());
        };
        let leg = self.sim.navigation_leg(&ep.state, cell)?;
        for kind in leg {
            if ep.steps() >= self.config.max_steps {
                break;
            }
            let visible = self.observe(ep, subgoal, 1)?;
            self.execute(ep, subgoal, visible, Action::navigate(kind), None)?;
        }
        Ok(())
    }

    fn interact(
        &self,
        ep: &mut Episode,
        scenario: &Scenario,
        subgoal: &Subgoal,
        planned_actions: &[PlannedAction],
    ) -> Result<(), AgentError> {
        let planned: Vec<ActionChoice> = planned_actions.iter().map(|a| ActionChoice::of(&a.action)).collect();
        let mut cursor = 0usize;
        let mut attempt = 1u32;
        let mut last_failed: Option<(ActionChoice, Option<BoundingBox>)> = None;
        while !self.done(ep, scenario) {
            let current = cursor.min(planned.len() - 1);
            let expected = planned[current].clone();
            ep.focus = planned_actions[current].action.target.clone();
            let visible = self.observe(ep, subgoal, attempt)?;
            let decision = match &last_failed {
                Some(failed) if self.config.recovery_enabled => {
                    ep.recoveries_attempted += 1;
                    let (decision, record) = self.recover(ep, subgoal, attempt, &expected, failed)?;
                    ep.recoveries.push(record);
                    decision
                }
                _ => {
                    let feedback = last_failed.as_ref().filter(|_| self.config.env_feedback).map(|f| f.0.clone());
                    match self.decide(ep, subgoal, attempt, &expected, feedback)? {
                        Some(d) => d,
                        None => return Err(AgentError::Prompt(PromptError::ParseFailure {
                            kind: SkillKind::SAP,
                            text: "no parseable action after retries".into(),
                        })),
                    }
                }
            };
            let action = decision
                .choice
                .to_action()
                .map_err(|e| AgentError::Config(format!("unusable choice {}: {e}", decision.choice)))?;
            let failed = self.execute(ep, subgoal, visible, action, decision.bbox)?;
            if let Some(rec) = ep.recoveries.last_mut().filter(|_| decision.recovered) {
                rec.succeeded = !failed;
            }
            if failed {
                if self.config.recovery_enabled || self.config.env_feedback {
                    attempt += 1;
                }
                last_failed = Some((decision.choice, decision.bbox));
                continue;
            }
            if decision.recovered {
                ep.recoveries_succeeded += 1;
            }
            last_failed = None;
            if cursor < planned.len() && decision.choice.matches(&planned[cursor]) {
                cursor += 1;
                attempt = 1;
            }
            if self.subgoal_complete(ep, subgoal, attempt, cursor >= planned.len())? {
                break;
            }
        }
        Ok(())
    }

    /// SAP followed by OD for interaction choices.
    fn decide(
        &self,
        ep: &mut Episode,
        subgoal: &Subgoal,
        attempt: u32,
        expected: &ActionChoice,
        feedback: Option<ActionChoice>,
    ) -> Result<Option<Decision>, AgentError> {
        let options = PromptOptions {
            feedback_failed: feedback,
            ..self.options()
        };
        let hint = Self::hint(SkillKind::SAP, SkillOutput::ActionChoice(expected.clone()), subgoal, attempt);
        let Some(SkillOutput::ActionChoice(choice)) = self.ask(ep, SkillKind::SAP, &options, hint)? else {
            return Ok(None);
        };
        let bbox = self.detect(ep, subgoal, attempt, &choice)?;
        Ok(Some(Decision {
            choice,
            bbox,
            recovered: false,
        }))
    }

    /// OD for the object of an interaction choice; `None` for navigation.
    fn detect(
        &self,
        ep: &mut Episode,
        subgoal: &Subgoal,
        attempt: u32,
        choice: &ActionChoice,
    ) -> Result<Option<BoundingBox>, AgentError> {
        let Some(object) = &choice.object else {
            return Ok(None);
        };
        self.set_pending_action(ep, choice)?;
        let gt = labels::target_box(self.sim, &ep.state, object, ep.focus.as_ref())
            .unwrap_or_else(|| labels::placeholder_box(self.sim));
        let hint = GroundTruthHint {
            avoid: labels::class_boxes(self.sim, &ep.state, object),
            ..Self::hint(SkillKind::OD, SkillOutput::Box(gt), subgoal, attempt)
        };
        Ok(match self.ask(ep, SkillKind::OD, &self.options(), hint)? {
            Some(SkillOutput::Box(b)) => Some(b),
            _ => Some(labels::placeholder_box(self.sim)),
        })
    }

    fn set_pending_action(&self, ep: &mut Episode, choice: &ActionChoice) -> Result<(), AgentError> {
        let action = choice
            .to_action()
            .map_err(|e| AgentError::Config(format!("unusable choice {choice}: {e}")))?;
        if let Some(p) = ep.memory.current.as_mut() {
            p.action = Some(action);
        }
        Ok(())
    }

    fn subgoal_complete(&self, ep: &mut Episode, subgoal: &Subgoal, attempt: u32, truth: bool) -> Result<bool, AgentError> {
        ep.memory.current = Some(PendingStep {
            frame: Some(ep.frame.clone()),
            pose: Some(ep.state.agent),
            subgoal: Some(subgoal.clone()),
            ..PendingStep::default()
        });
        let hint = Self::hint(SkillKind::GRSub, SkillOutput::YesNo(truth), subgoal, attempt);
        Ok(matches!(
            self.ask(ep, SkillKind::GRSub, &self.options(), hint)?,
            Some(SkillOutput::YesNo(true))
        ))
    }
}
