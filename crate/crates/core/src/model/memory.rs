use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use super::{Action, BoundingBox, Frame, ModelError, ObjectRef, Pose, Task};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Phase {
    Navigation,
    Interaction,
}

#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Subgoal {
    pub text: String,
    pub phase: Phase,
    /// 1-based position in the plan.
    pub index: u32,
}

impl Subgoal {
    pub fn new(index: u32, phase: Phase, text: impl Into<String>) -> Self {
        Self {
            text: text.into(),
            phase,
            index,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum ActionResult {
    Succeeded,
    Failed,
}

impl ActionResult {
    pub fn succeeded(self) -> bool {
        self == ActionResult::Succeeded
    }
}

/// One recorded step `m_t = (f_t, v_t, p_t, a_t, o_t, b_t, r_t, sg_t)`.
///
/// `o_t` is the action's target. `frame` is the observation the action was chosen from.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct MemoryStep {
    pub step_index: u32,
    pub frame: Frame,
    pub visible: BTreeSet<ObjectRef>,
    pub pose: Pose,
    pub action: Action,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub bbox: Option<BoundingBox>,
    pub result: ActionResult,
    pub subgoal: Subgoal,
}

impl MemoryStep {
    pub fn validate(&self) -> Result<(), ModelError> {
        if self.step_index == 0 {
            return Err(ModelError::StepIndex {
                expected: 1,
                actual: 0,
            });
        }
        if self.action.is_interaction() != self.bbox.is_some() {
            return Err(ModelError::BoxPresence(self.action.kind));
        }
        Ok(())
    }
}

/// Partially observed current step: the fields known before (or while) the action is chosen.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct PendingStep {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub frame: Option<Frame>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub visible: Option<BTreeSet<ObjectRef>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub pose: Option<Pose>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub action: Option<Action>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub bbox: Option<BoundingBox>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub subgoal: Option<Subgoal>,
}

impl From<&MemoryStep> for PendingStep {
    fn from(step: &MemoryStep) -> Self {
        Self {
            frame: Some(step.frame.clone()),
            visible: Some(step.visible.clone()),
            pose: Some(step.pose),
            action: Some(step.action.clone()),
            bbox: step.bbox,
            subgoal: Some(step.subgoal.clone()),
        }
    }
}

/// Ordered, append-only history of an episode plus the goal it pursues.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Memory {
    pub goal: Task,
    pub steps: Vec<MemoryStep>,
    /// The step currently being decided (index `steps.len() + 1`), if any.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub current: Option<PendingStep>,
}

impl Memory {
    pub fn new(goal: Task) -> Self {
        Self {
            goal,
            steps: Vec::new(),
            current: None,
        }
    }

    pub fn len(&self) -> usize {
        self.steps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.steps.is_empty()
    }

    pub fn next_index(&self) -> u32 {
        self.steps.len() as u32 + 1
    }

    /// Appends a step; its index must be exactly `len + 1`. Clears `current`.
    pub fn push(&mut self, step: MemoryStep) -> Result<(), ModelError> {
        let expected = self.next_index();
        if step.step_index != expected {
            return Err(ModelError::StepIndex {
                expected,
                actual: step.step_index,
            });
        }
        step.validate()?;
        self.steps.push(step);
        self.current = None;
        Ok(())
    }

    pub fn step(&self, t: u32) -> Option<&MemoryStep> {
        if t == 0 {
            return None;
        }
        self.steps.get(t as usize - 1)
    }

    /// A copy holding only steps `1..=len`, with `current` set to `pending`.
    pub fn truncated(&self, len: usize, pending: Option<PendingStep>) -> Memory {
        Memory {
            goal: self.goal.clone(),
            steps: self.steps[..len.min(self.steps.len())].to_vec(),
            current: pending,
        }
    }
}

/// Steps with indices in `[max(1, t - k), t - 1]`, oldest first.
pub fn memory_window(memory: &Memory, t: u32, k: u32) -> &[MemoryStep] {
    let end = (t.saturating_sub(1) as usize).min(memory.steps.len());
    let start = (t.saturating_sub(k).max(1) as usize - 1).min(end);
    &memory.steps[start..end]
}
