//! Expert plans: scripted recipes per task family, with breadth-first navigation
//! legs between interactions. Each plan is validated by executing it on a copy of
//! the world while it is built.

use std::collections::{BTreeMap, VecDeque};

use serde::{Deserialize, Serialize};

use crate::model::{Action, ActionKind, BoundingBox, GoalCondition, ObjectRef, Phase, Pose, Subgoal, Task, TaskType};

use super::{goal_satisfied, Location, SimError, Simulator, WorldState, FAUCET, FRIDGE, MICROWAVE, SINK};

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct PlannedAction {
    pub action: Action,
    pub bbox: Option<BoundingBox>,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SubgoalPlan {
    pub subgoal: Subgoal,
    /// Object the subgoal navigates to or acts on first.
    pub target: ObjectRef,
    pub actions: Vec<PlannedAction>,
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExpertPlan {
    pub subgoals: Vec<SubgoalPlan>,
}

impl ExpertPlan {
    pub fn subgoal_list(&self) -> Vec<Subgoal> {
        self.subgoals.iter().map(|s| s.subgoal.clone()).collect()
    }

    pub fn actions(&self) -> impl Iterator<Item = &PlannedAction> {
        self.subgoals.iter().flat_map(|s| s.actions.iter())
    }

    pub fn action_count(&self) -> usize {
        self.subgoals.iter().map(|s| s.actions.len()).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.subgoals.is_empty()
    }
}

fn interaction_text(kind: ActionKind, target: &ObjectRef, held: Option<&ObjectRef>, into: bool) -> String {
    match kind {
        ActionKind::PickupObject => format!("pick up the {target}"),
        ActionKind::PutObject => {
            let held = held.map(|h| h.name.as_str()).unwrap_or("object");
            let prep = if into { "in" } else { "on" };
            format!("put the {held} {prep} the {target}")
        }
        ActionKind::OpenObject => format!("open the {target}"),
        ActionKind::CloseObject => format!("close the {target}"),
        ActionKind::ToggleObjectOn => format!("turn on the {target}"),
        ActionKind::ToggleObjectOff => format!("turn off the {target}"),
        ActionKind::SliceObject => format!("slice the {target}"),
        ActionKind::MoveAhead | ActionKind::RotateLeft | ActionKind::RotateRight => {
            format!("go to the {target}")
        }
    }
}

impl Simulator {
    /// Shortest action sequence that leaves `target` directly in front of the agent.
    pub fn navigation_leg(&self, state: &WorldState, target: (i32, i32)) -> Result<Vec<ActionKind>, SimError> {
        let start = state.agent;
        let mut prev: BTreeMap<Pose, (Pose, ActionKind)> = BTreeMap::new();
        let mut queue = VecDeque::from([start]);
        let mut found = None;
        while let Some(pose) = queue.pop_front() {
            if pose.front() == target {
                found = Some(pose);
                break;
            }
            let ahead = pose.front();
            let moves = [
                (ActionKind::MoveAhead, state.is_free(ahead).then(|| Pose::new(ahead.0, ahead.1, pose.heading))),
                (ActionKind::RotateLeft, Some(Pose::new(pose.x, pose.y, pose.heading.rotate_left()))),
                (ActionKind::RotateRight, Some(Pose::new(pose.x, pose.y, pose.heading.rotate_right()))),
            ];
            for (kind, next) in moves {
                let Some(next) = next else { continue };
                if next != start && !prev.contains_key(&next) {
                    prev.insert(next, (pose, kind));
                    queue.push_back(next);
                }
            }
        }
        let mut pose = found.ok_or_else(|| {
            SimError::Unreachable(format!("no path from {start} to cell ({}, {})", target.0, target.1))
        })?;
        let mut leg = Vec::new();
        while pose != start {
            let (p, kind) = prev[&pose];
            leg.push(kind);
            pose = p;
        }
        leg.reverse();
        Ok(leg)
    }

    pub fn expert_plan(&self, state: &WorldState, task: &Task) -> Result<ExpertPlan, SimError> {
        let mut b = PlanBuilder {
            sim: self,
            state: state.clone(),
            plan: ExpertPlan::default(),
            grouping: false,
        };
        if goal_satisfied(state, task).all {
            return Ok(b.plan);
        }
        let inside: Vec<(ObjectRef, ObjectRef)> = task
            .goal_conditions
            .iter()
            .filter_map(|c| match c {
                GoalCondition::Inside { object, receptacle } => Some((object.clone(), receptacle.clone())),
                _ => None,
            })
            .collect();
        match task.task_type {
            TaskType::Look => {
                let mut held = None;
                let mut lamp = None;
                for c in &task.goal_conditions {
                    match c {
                        GoalCondition::Holding { object } => held = Some(object.clone()),
                        GoalCondition::IsOn { object } => lamp = Some(object.clone()),
                        _ => {}
                    }
                }
                let (held, lamp) = held.zip(lamp).expect("look schema");
                b.fetch(&held)?;
                if !b.state.objects[&lamp].is_on {
                    b.act(ActionKind::ToggleObjectOn, &lamp)?;
                }
            }
            TaskType::Pick | TaskType::PickTwo => {
                for (o, r) in &inside {
                    b.place(o, r)?;
                }
            }
            TaskType::Clean | TaskType::Cool | TaskType::Heat => {
                let (o, r) = inside.first().cloned().expect("schema has one placement");
                match task.task_type {
                    TaskType::Clean if !b.state.objects[&o].is_clean => {
                        let sink = b.find(SINK)?;
                        let faucet = b.find(FAUCET)?;
                        b.fetch(&o)?;
                        b.deliver(&sink)?;
                        if !b.state.objects[&faucet].is_on {
                            b.act(ActionKind::ToggleObjectOn, &faucet)?;
                            b.act(ActionKind::ToggleObjectOff, &faucet)?;
                        }
                    }
                    TaskType::Cool if !b.state.objects[&o].is_cold => {
                        let fridge = b.find(FRIDGE)?;
                        b.fetch(&o)?;
                        b.deliver(&fridge)?;
                        b.fetch(&o)?;
                        b.act(ActionKind::CloseObject, &fridge)?;
                    }
                    TaskType::Heat if !b.state.objects[&o].is_hot => {
                        let mw = b.find(MICROWAVE)?;
                        b.fetch(&o)?;
                        b.deliver(&mw)?;
                        if !b.state.objects[&mw].is_on {
                            b.act(ActionKind::ToggleObjectOn, &mw)?;
                            b.act(ActionKind::ToggleObjectOff, &mw)?;
                        }
                    }
                    _ => {}
                }
                b.place(&o, &r)?;
            }
        }
        if !goal_satisfied(&b.state, task).all {
            return Err(SimError::Infeasible(format!("recipe for {} leaves goal unmet", task.task_type.as_str())));
        }
        Ok(b.plan)
    }
}

struct PlanBuilder<'a> {
    sim: &'a Simulator,
    state: WorldState,
    plan: ExpertPlan,
    /// Whether the last subgoal is an interaction group that can still grow.
    grouping: bool,
}

impl PlanBuilder<'_> {
    fn find(&self, class: &str) -> Result<ObjectRef, SimError> {
        self.state
            .instances_of(class)
            .next()
            .cloned()
            .ok_or_else(|| SimError::Unreachable(format!("scene has no {class}")))
    }

    fn push_subgoal(&mut self, phase: Phase, text: String, target: &ObjectRef) {
        let index = self.plan.subgoals.len() as u32 + 1;
        self.plan.subgoals.push(SubgoalPlan {
            subgoal: Subgoal::new(index, phase, text),
            target: target.clone(),
            actions: Vec::new(),
        });
    }

    fn execute(&mut self, action: Action, bbox: Option<BoundingBox>, expect: Option<&ObjectRef>) -> Result<(), SimError> {
        let out = self.sim.step(&self.state, &action, bbox.as_ref());
        if !out.result.succeeded() || out.resolved.as_ref() != expect {
            return Err(SimError::Infeasible(action.to_string()));
        }
        self.state = out.state;
        self.plan
            .subgoals
            .last_mut()
            .expect("subgoal opened before acting")
            .actions
            .push(PlannedAction { action, bbox });
        Ok(())
    }

    fn act(&mut self, kind: ActionKind, target: &ObjectRef) -> Result<(), SimError> {
        let cell = self
            .state
            .cell_of(target)
            .ok_or_else(|| SimError::Unreachable(format!("{} is not on the grid", target.qualified())))?;
        if self.state.agent.front() != cell {
            let leg = self.sim.navigation_leg(&self.state, cell)?;
            self.push_subgoal(Phase::Navigation, format!("go to the {target}"), target);
            for k in leg {
                self.execute(Action::navigate(k), None, None)?;
            }
            self.grouping = false;
        }
        let bbox = self
            .sim
            .visible_objects(&self.state)
            .into_iter()
            .find(|v| &v.object == target)
            .map(|v| v.bbox)
            .ok_or_else(|| SimError::Infeasible(format!("{} not visible", target.qualified())))?;
        let into = self.state.objects[target].class_flags.openable || target.name == SINK;
        let text = interaction_text(kind, target, self.state.hand.as_ref(), into);
        if self.grouping {
            let sg = &mut self.plan.subgoals.last_mut().expect("group exists").subgoal;
            sg.text = format!("{}, then {text}", sg.text);
        } else {
            self.push_subgoal(Phase::Interaction, text, target);
            self.grouping = true;
        }
        self.execute(Action::interact(kind, target.to_class()), Some(bbox), Some(target))
    }

    fn fetch(&mut self, object: &ObjectRef) -> Result<(), SimError> {
        if self.state.hand.as_ref() == Some(object) {
            return Ok(());
        }
        if self.state.hand.is_some() {
            return Err(SimError::Infeasible(format!("hand busy before fetching {}", object.qualified())));
        }
        if let Location::Inside { receptacle } = self.state.objects[object].location.clone() {
            self.open_if_closed(&receptacle)?;
        }
        self.act(ActionKind::PickupObject, object)
    }

    fn deliver(&mut self, receptacle: &ObjectRef) -> Result<(), SimError> {
        self.open_if_closed(receptacle)?;
        self.act(ActionKind::PutObject, receptacle)
    }

    fn place(&mut self, object: &ObjectRef, receptacle: &ObjectRef) -> Result<(), SimError> {
        let already = matches!(&self.state.objects[object].location, Location::Inside { receptacle: r } if r == receptacle);
        if already {
            return Ok(());
        }
        self.fetch(object)?;
        self.deliver(receptacle)
    }

    fn open_if_closed(&mut self, receptacle: &ObjectRef) -> Result<(), SimError> {
        let s = &self.state.objects[receptacle];
        if s.class_flags.openable && !s.is_open {
            self.act(ActionKind::OpenObject, receptacle)?;
        }
        Ok(())
    }
}
