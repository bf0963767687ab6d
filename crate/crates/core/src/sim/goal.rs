use serde::{Deserialize, Serialize};

use crate::model::{GoalCondition, Task};

use super::{Location, WorldState};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct GoalStatus {
    pub all: bool,
    pub satisfied: u32,
    pub total: u32,
}

impl GoalStatus {
    pub fn fraction(&self) -> f64 {
        if self.total == 0 {
            0.0
        } else {
            f64::from(self.satisfied) / f64::from(self.total)
        }
    }
}

pub fn condition_holds(state: &WorldState, cond: &GoalCondition) -> bool {
    let obj = |o| state.objects.get(o);
    match cond {
        GoalCondition::Holding { object } => state.hand.as_ref() == Some(object),
        GoalCondition::IsOn { object } => obj(object).is_some_and(|s| s.is_on),
        GoalCondition::Inside { object, receptacle } => obj(object)
            .is_some_and(|s| matches!(&s.location, Location::Inside { receptacle: r } if r == receptacle)),
        GoalCondition::IsClean { object } => obj(object).is_some_and(|s| s.is_clean),
        GoalCondition::IsHot { object } => obj(object).is_some_and(|s| s.is_hot),
        GoalCondition::IsCold { object } => obj(object).is_some_and(|s| s.is_cold),
    }
}

pub fn goal_satisfied(state: &WorldState, task: &Task) -> GoalStatus {
    let total = task.goal_conditions.len() as u32;
    let satisfied = task
        .goal_conditions
        .iter()
        .filter(|c| condition_holds(state, c))
        .count() as u32;
    GoalStatus {
        all: total > 0 && satisfied == total,
        satisfied,
        total,
    }
}
