use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::ModelError;

/// A named object. `instance_id` separates duplicates of one class inside a scene;
/// model-facing references (what a policy names in an answer) carry only the class.
#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct ObjectRef {
    pub name: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub instance_id: Option<String>,
}

impl ObjectRef {
    pub fn class(name: impl Into<String>) -> Self {
        Self {
            name: name.into(),
            instance_id: None,
        }
    }

    pub fn instance(name: impl Into<String>, id: impl Into<String>) -> Self {
        Self {
            name: name.into(),
            instance_id: Some(id.into()),
        }
    }

    /// The same object with the instance id dropped.
    pub fn to_class(&self) -> ObjectRef {
        ObjectRef::class(self.name.clone())
    }

    pub fn same_class(&self, other: &ObjectRef) -> bool {
        self.name.eq_ignore_ascii_case(&other.name)
    }

    /// `name` or `name#id`.
    pub fn qualified(&self) -> String {
        match &self.instance_id {
            Some(id) => format!("{}#{}", self.name, id),
            None => self.name.clone(),
        }
    }
}

impl fmt::Display for ObjectRef {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.name)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum ActionKind {
    MoveAhead,
    RotateLeft,
    RotateRight,
    PickupObject,
    PutObject,
    OpenObject,
    CloseObject,
    ToggleObjectOn,
    ToggleObjectOff,
    SliceObject,
}

impl ActionKind {
    pub const ALL: [ActionKind; 10] = [
        ActionKind::MoveAhead,
        ActionKind::RotateLeft,
        ActionKind::RotateRight,
        ActionKind::PickupObject,
        ActionKind::PutObject,
        ActionKind::OpenObject,
        ActionKind::CloseObject,
        ActionKind::ToggleObjectOn,
        ActionKind::ToggleObjectOff,
        ActionKind::SliceObject,
    ];

    pub const NAVIGATION: [ActionKind; 3] = [
        ActionKind::MoveAhead,
        ActionKind::RotateLeft,
        ActionKind::RotateRight,
    ];

    pub fn is_navigation(self) -> bool {
        matches!(
            self,
            ActionKind::MoveAhead | ActionKind::RotateLeft | ActionKind::RotateRight
        )
    }

    pub fn is_interaction(self) -> bool {
        !self.is_navigation()
    }

    pub fn as_str(self) -> &'static str {
        match self {
            ActionKind::MoveAhead => "MoveAhead",
            ActionKind::RotateLeft => "RotateLeft",
            ActionKind::RotateRight => "RotateRight",
            ActionKind::PickupObject => "PickupObject",
            ActionKind::PutObject => "PutObject",
            ActionKind::OpenObject => "OpenObject",
            ActionKind::CloseObject => "CloseObject",
            ActionKind::ToggleObjectOn => "ToggleObjectOn",
            ActionKind::ToggleObjectOff => "ToggleObjectOff",
            ActionKind::SliceObject => "SliceObject",
        }
    }
}

impl fmt::Display for ActionKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ActionKind {
    type Err = ModelError;

    /// Case-insensitive match on the canonical names.
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let s = s.trim();
        ActionKind::ALL
            .into_iter()
            .find(|k| k.as_str().eq_ignore_ascii_case(s))
            .ok_or_else(|| ModelError::UnknownAction(s.to_string()))
    }
}

/// An action in the discrete action space. Interaction kinds carry a target,
/// navigation kinds never do.
#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "RawAction")]
pub struct Action {
    pub kind: ActionKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub target: Option<ObjectRef>,
}

#[derive(Deserialize)]
struct RawAction {
    kind: ActionKind,
    #[serde(default)]
    target: Option<ObjectRef>,
}

impl TryFrom<RawAction> for Action {
    type Error = ModelError;

    fn try_from(raw: RawAction) -> Result<Self, Self::Error> {
        Action::new(raw.kind, raw.target)
    }
}

impl Action {
    pub fn new(kind: ActionKind, target: Option<ObjectRef>) -> Result<Self, ModelError> {
        match (kind.is_navigation(), &target) {
            (true, Some(_)) => Err(ModelError::UnexpectedTarget(kind)),
            (false, None) => Err(ModelError::MissingTarget(kind)),
            _ => Ok(Self { kind, target }),
        }
    }

    pub fn navigate(kind: ActionKind) -> Self {
        assert!(kind.is_navigation(), "{kind} needs a target");
        Self { kind, target: None }
    }

    pub fn interact(kind: ActionKind, target: ObjectRef) -> Self {
        assert!(kind.is_interaction(), "{kind} takes no target");
        Self {
            kind,
            target: Some(target),
        }
    }

    pub fn is_interaction(&self) -> bool {
        self.kind.is_interaction()
    }
}

impl fmt::Display for Action {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match &self.target {
            Some(t) => write!(f, "{} {}", self.kind, t),
            None => write!(f, "{}", self.kind),
        }
    }
}
