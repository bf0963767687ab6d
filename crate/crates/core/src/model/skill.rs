use std::collections::BTreeSet;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::{Action, ActionKind, BoundingBox, Frame, ModelError, ObjectRef};

/// Skill identifiers. FSC is kept as its own kind alongside the eight core sub-skills.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum SkillKind {
    OR,
    OD,
    STP,
    SAP,
    ASP,
    FSC,
    AG,
    GRMain,
    GRSub,
}

/// The four core skill groups a reward component belongs to.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum CoreSkill {
    ObjectPerception,
    TaskPlanning,
    ActionUnderstanding,
    GoalRecognition,
}

/// How many frames a prompt for a kind carries.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum FrameArity {
    Exactly(usize),
    /// Episode-level inputs, capped by a frame budget.
    Episode,
    /// All frames since the current subgoal began, plus the current one.
    SubgoalWindow,
}

impl SkillKind {
    pub const ALL: [SkillKind; 9] = [
        SkillKind::OR,
        SkillKind::OD,
        SkillKind::STP,
        SkillKind::SAP,
        SkillKind::ASP,
        SkillKind::FSC,
        SkillKind::AG,
        SkillKind::GRMain,
        SkillKind::GRSub,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            SkillKind::OR => "OR",
            SkillKind::OD => "OD",
            SkillKind::STP => "STP",
            SkillKind::SAP => "SAP",
            SkillKind::ASP => "ASP",
            SkillKind::FSC => "FSC",
            SkillKind::AG => "AG",
            SkillKind::GRMain => "GRMain",
            SkillKind::GRSub => "GRSub",
        }
    }

    pub fn core_skill(self) -> CoreSkill {
        match self {
            SkillKind::OR | SkillKind::OD => CoreSkill::ObjectPerception,
            SkillKind::STP | SkillKind::SAP => CoreSkill::TaskPlanning,
            SkillKind::ASP | SkillKind::FSC | SkillKind::AG => CoreSkill::ActionUnderstanding,
            SkillKind::GRMain | SkillKind::GRSub => CoreSkill::GoalRecognition,
        }
    }

    pub fn frame_arity(self) -> FrameArity {
        match self {
            SkillKind::OR | SkillKind::OD | SkillKind::SAP | SkillKind::ASP | SkillKind::FSC => {
                FrameArity::Exactly(1)
            }
            SkillKind::AG => FrameArity::Exactly(2),
            SkillKind::STP | SkillKind::GRMain => FrameArity::Episode,
            SkillKind::GRSub => FrameArity::SubgoalWindow,
        }
    }
}

impl fmt::Display for SkillKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for SkillKind {
    type Err = ModelError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let norm: String = s
            .chars()
            .filter(|c| c.is_ascii_alphanumeric())
            .collect::<String>()
            .to_ascii_lowercase();
        SkillKind::ALL
            .into_iter()
            .find(|k| k.as_str().to_ascii_lowercase() == norm)
            .ok_or_else(|| ModelError::UnknownSkill(s.to_string()))
    }
}

/// A model-facing action choice: an action kind and, for interactions, an object class.
#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct ActionChoice {
    pub action: ActionKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub object: Option<String>,
}

impl ActionChoice {
    pub fn new(action: ActionKind, object: Option<String>) -> Self {
        Self { action, object }
    }

    pub fn of(action: &Action) -> Self {
        Self {
            action: action.kind,
            object: action.target.as_ref().map(|t| t.name.clone()),
        }
    }

    /// Same action kind and same object class (case-insensitive).
    pub fn matches(&self, other: &ActionChoice) -> bool {
        self.action == other.action
            && match (&self.object, &other.object) {
                (Some(a), Some(b)) => a.eq_ignore_ascii_case(b),
                (None, None) => true,
                _ => false,
            }
    }

    pub fn to_action(&self) -> Result<Action, ModelError> {
        Action::new(self.action, self.object.clone().map(ObjectRef::class))
    }
}

impl fmt::Display for ActionChoice {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match &self.object {
            Some(o) => write!(f, "{} {}", self.action, o),
            None => write!(f, "{}", self.action),
        }
    }
}

/// Typed answer of a skill query.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "type", content = "value")]
pub enum SkillOutput {
    ObjectSet(BTreeSet<String>),
    Box(BoundingBox),
    SubgoalList(Vec<String>),
    ActionChoice(ActionChoice),
    YesNo(bool),
    Caption(String),
    ActionWithBox {
        choice: ActionChoice,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        bbox: Option<BoundingBox>,
    },
}

impl SkillOutput {
    pub fn variant_name(&self) -> &'static str {
        match self {
            SkillOutput::ObjectSet(_) => "ObjectSet",
            SkillOutput::Box(_) => "Box",
            SkillOutput::SubgoalList(_) => "SubgoalList",
            SkillOutput::ActionChoice(_) => "ActionChoice",
            SkillOutput::YesNo(_) => "YesNo",
            SkillOutput::Caption(_) => "Caption",
            SkillOutput::ActionWithBox { .. } => "ActionWithBox",
        }
    }

    pub fn matches_kind(&self, kind: SkillKind) -> bool {
        matches!(
            (kind, self),
            (SkillKind::OR, SkillOutput::ObjectSet(_))
                | (SkillKind::OD, SkillOutput::Box(_))
                | (SkillKind::STP, SkillOutput::SubgoalList(_))
                | (SkillKind::SAP, SkillOutput::ActionChoice(_))
                | (SkillKind::ASP, SkillOutput::YesNo(_))
                | (SkillKind::GRMain, SkillOutput::YesNo(_))
                | (SkillKind::GRSub, SkillOutput::YesNo(_))
                | (SkillKind::FSC, SkillOutput::Caption(_))
                | (SkillKind::AG, SkillOutput::ActionWithBox { .. })
        )
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Split {
    Train,
    Validation,
    Eval,
}

impl Split {
    pub fn as_str(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Validation => "validation",
            Split::Eval => "eval",
        }
    }
}

/// A serialized skill query with its ground-truth answer.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SkillInstance {
    pub id: String,
    pub kind: SkillKind,
    pub prompt_text: String,
    pub frames: Vec<Frame>,
    pub ground_truth: SkillOutput,
    pub scene_id: String,
    pub split: Split,
}

impl SkillInstance {
    pub fn validate(&self) -> Result<(), ModelError> {
        if !self.ground_truth.matches_kind(self.kind) {
            return Err(ModelError::VariantMismatch {
                kind: self.kind,
                variant: self.ground_truth.variant_name(),
            });
        }
        let ok = match self.kind.frame_arity() {
            FrameArity::Exactly(n) => self.frames.len() == n,
            FrameArity::Episode | FrameArity::SubgoalWindow => !self.frames.is_empty(),
        };
        if !ok {
            return Err(ModelError::FrameArity {
                kind: self.kind,
                frames: self.frames.len(),
            });
        }
        Ok(())
    }
}
