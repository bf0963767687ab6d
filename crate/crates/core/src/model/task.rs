use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::{ModelError, ObjectRef};

/// The six household task families.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum TaskType {
    Look,
    Pick,
    PickTwo,
    Clean,
    Cool,
    Heat,
}

impl TaskType {
    pub const ALL: [TaskType; 6] = [
        TaskType::Look,
        TaskType::Pick,
        TaskType::PickTwo,
        TaskType::Clean,
        TaskType::Cool,
        TaskType::Heat,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            TaskType::Look => "Look",
            TaskType::Pick => "Pick",
            TaskType::PickTwo => "PickTwo",
            TaskType::Clean => "Clean",
            TaskType::Cool => "Cool",
            TaskType::Heat => "Heat",
        }
    }

    /// Column header used in task reports.
    pub fn label(self) -> &'static str {
        match self {
            TaskType::PickTwo => "Pick Two",
            other => other.as_str(),
        }
    }
}

impl fmt::Display for TaskType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for TaskType {
    type Err = ModelError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let norm: String = s.chars().filter(|c| c.is_ascii_alphanumeric()).collect();
        TaskType::ALL
            .into_iter()
            .find(|t| t.as_str().eq_ignore_ascii_case(&norm))
            .ok_or_else(|| ModelError::UnknownTaskType(s.to_string()))
    }
}

/// A goal predicate over object states.
#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(tag = "predicate", rename_all = "snake_case")]
pub enum GoalCondition {
    Holding { object: ObjectRef },
    IsOn { object: ObjectRef },
    Inside { object: ObjectRef, receptacle: ObjectRef },
    IsClean { object: ObjectRef },
    IsHot { object: ObjectRef },
    IsCold { object: ObjectRef },
}

impl GoalCondition {
    pub fn objects(&self) -> Vec<&ObjectRef> {
        match self {
            GoalCondition::Inside { object, receptacle } => vec![object, receptacle],
            GoalCondition::Holding { object }
            | GoalCondition::IsOn { object }
            | GoalCondition::IsClean { object }
            | GoalCondition::IsHot { object }
            | GoalCondition::IsCold { object } => vec![object],
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "RawTask")]
pub struct Task {
    pub task_type: TaskType,
    pub instruction: String,
    pub goal_conditions: Vec<GoalCondition>,
}

#[derive(Deserialize)]
struct RawTask {
    task_type: TaskType,
    instruction: String,
    goal_conditions: Vec<GoalCondition>,
}

impl TryFrom<RawTask> for Task {
    type Error = ModelError;

    fn try_from(raw: RawTask) -> Result<Self, Self::Error> {
        Task::new(raw.task_type, raw.instruction, raw.goal_conditions)
    }
}

impl Task {
    pub fn new(
        task_type: TaskType,
        instruction: impl Into<String>,
        goal_conditions: Vec<GoalCondition>,
    ) -> Result<Self, ModelError> {
        if goal_conditions.is_empty() {
            return Err(ModelError::NoGoalConditions);
        }
        check_schema(task_type, &goal_conditions)?;
        Ok(Self {
            task_type,
            instruction: instruction.into(),
            goal_conditions,
        })
    }
}

/// Each task family fixes which predicates its goal is built from.
fn check_schema(task_type: TaskType, conds: &[GoalCondition]) -> Result<(), ModelError> {
    let count = |f: fn(&GoalCondition) -> bool| conds.iter().filter(|c| f(c)).count();
    let inside = count(|c| matches!(c, GoalCondition::Inside { .. }));
    let ok = match task_type {
        TaskType::Look => {
            count(|c| matches!(c, GoalCondition::Holding { .. })) == 1
                && count(|c| matches!(c, GoalCondition::IsOn { .. })) == 1
                && conds.len() == 2
        }
        TaskType::Pick => inside == 1 && conds.len() == 1,
        TaskType::PickTwo => inside == 2 && conds.len() == 2,
        TaskType::Clean => {
            inside == 1 && count(|c| matches!(c, GoalCondition::IsClean { .. })) == 1 && conds.len() == 2
        }
        TaskType::Cool => {
            inside == 1 && count(|c| matches!(c, GoalCondition::IsCold { .. })) == 1 && conds.len() == 2
        }
        TaskType::Heat => {
            inside == 1 && count(|c| matches!(c, GoalCondition::IsHot { .. })) == 1 && conds.len() == 2
        }
    };
    if ok {
        Ok(())
    } else {
        Err(ModelError::GoalSchema(task_type))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_goal_rejected() {
        assert!(Task::new(TaskType::Pick, "x", vec![]).is_err());
    }

    #[test]
    fn schema_enforced() {
        let apple = ObjectRef::instance("Apple", "1");
        let hot = GoalCondition::IsHot { object: apple.clone() };
        assert!(Task::new(TaskType::Pick, "x", vec![hot.clone()]).is_err());
        let inside = GoalCondition::Inside {
            object: apple,
            receptacle: ObjectRef::instance("Table", "1"),
        };
        assert!(Task::new(TaskType::Heat, "x", vec![hot, inside]).is_ok());
    }

    #[test]
    fn task_type_parsing() {
        assert_eq!("pick two".parse::<TaskType>().unwrap(), TaskType::PickTwo);
        assert_eq!("Heat".parse::<TaskType>().unwrap(), TaskType::Heat);
    }
}
