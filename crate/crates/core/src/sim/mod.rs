//! Deterministic household grid simulator.
//!
//! The world is a grid of cells. Furniture and loose objects occupy cells and block
//! movement; small objects may also sit inside receptacles. The agent sees a cone of
//! cells ahead of it and can only interact with the object (or the contents of the
//! receptacle) in the cell directly in front. Every successful action changes the
//! rendered frame and every failed one leaves it byte-identical.

mod caption;
mod goal;
mod planner;
mod render;
mod scene;
pub mod scenegen;

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

pub use caption::{state_diff_caption, NO_CHANGE_CAPTION};
pub use goal::{goal_satisfied, GoalStatus};
pub use planner::{ExpertPlan, PlannedAction, SubgoalPlan};
pub use render::VisibleObject;
pub use scene::{ClassFlags, Location, ObjectPlacement, ObjectState, Scenario, SceneSpec};

use crate::model::{Action, ActionKind, ActionResult, BoundingBox, Frame, ObjectRef, Pose, Task};

pub const FRIDGE: &str = "Fridge";
pub const MICROWAVE: &str = "Microwave";
pub const SINK: &str = "SinkBasin";
pub const FAUCET: &str = "Faucet";
pub const KNIFE: &str = "Knife";

#[derive(Debug, thiserror::Error)]
pub enum SimError {
    #[error("invalid scene {0}")]
    InvalidScene(String),
    #[error("goal references unknown object {0}")]
    UnknownObject(String),
    #[error("unreachable: {0}")]
    Unreachable(String),
    #[error("expert action {0} failed during planning")]
    Infeasible(String),
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SimConfig {
    pub raster_width: u32,
    pub raster_height: u32,
    pub cone_depth: u32,
    /// Minimum IoU between a submitted box and the target's true box.
    pub click_threshold: f64,
}

impl Default for SimConfig {
    fn default() -> Self {
        Self {
            raster_width: 64,
            raster_height: 64,
            cone_depth: 3,
            click_threshold: 0.5,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct WorldState {
    pub scene_id: String,
    pub width: u32,
    pub height: u32,
    pub walls: BTreeSet<(i32, i32)>,
    pub objects: BTreeMap<ObjectRef, ObjectState>,
    pub agent: Pose,
    pub hand: Option<ObjectRef>,
    pub rng_seed: u64,
}

impl WorldState {
    pub fn in_bounds(&self, x: i32, y: i32) -> bool {
        x >= 0 && y >= 0 && (x as u32) < self.width && (y as u32) < self.height
    }

    /// Cell an object effectively occupies; `None` while held.
    pub fn cell_of(&self, object: &ObjectRef) -> Option<(i32, i32)> {
        let mut cur = object;
        for _ in 0..8 {
            match &self.objects.get(cur)?.location {
                Location::Cell { x, y } => return Some((*x, *y)),
                Location::Inside { receptacle } => cur = receptacle,
                Location::Hand => return None,
            }
        }
        None
    }

    /// The top-level object standing on a cell.
    pub fn occupant(&self, cell: (i32, i32)) -> Option<&ObjectRef> {
        self.objects.iter().find_map(|(r, s)| match s.location {
            Location::Cell { x, y } if (x, y) == cell => Some(r),
            _ => None,
        })
    }

    pub fn contents(&self, receptacle: &ObjectRef) -> Vec<&ObjectRef> {
        self.objects
            .iter()
            .filter(|(_, s)| matches!(&s.location, Location::Inside { receptacle: r } if r == receptacle))
            .map(|(r, _)| r)
            .collect()
    }

    pub fn is_free(&self, cell: (i32, i32)) -> bool {
        self.in_bounds(cell.0, cell.1) && !self.walls.contains(&cell) && self.occupant(cell).is_none()
    }

    /// Objects of a class, in canonical order.
    pub fn instances_of<'a>(&'a self, class: &'a str) -> impl Iterator<Item = &'a ObjectRef> + 'a {
        self.objects.keys().filter(move |r| r.name == class)
    }

    fn any_on(&self, class: &str) -> bool {
        self.objects.iter().any(|(r, s)| r.name == class && s.is_on)
    }

    /// Applies the passive household rules: fridges chill, running microwaves heat,
    /// sinks under a running faucet wash.
    fn settle(&mut self) {
        let faucet_on = self.any_on(FAUCET);
        let updates: Vec<(ObjectRef, &'static str)> = self
            .objects
            .iter()
            .filter_map(|(r, s)| match &s.location {
                Location::Inside { receptacle } => {
                    let rs = &self.objects[receptacle];
                    match receptacle.name.as_str() {
                        FRIDGE => Some((r.clone(), "cold")),
                        MICROWAVE if rs.is_on => Some((r.clone(), "hot")),
                        SINK if faucet_on => Some((r.clone(), "clean")),
                        _ => None,
                    }
                }
                _ => None,
            })
            .collect();
        for (r, effect) in updates {
            let s = self.objects.get_mut(&r).expect("object exists");
            match effect {
                "cold" => {
                    s.is_cold = true;
                    s.is_hot = false;
                }
                "hot" => {
                    s.is_hot = true;
                    s.is_cold = false;
                }
                _ => s.is_clean = true,
            }
        }
    }
}

#[derive(Clone, Debug)]
pub struct StepOutcome {
    pub state: WorldState,
    pub frame: Frame,
    pub result: ActionResult,
    /// Instance an interaction was applied to.
    pub resolved: Option<ObjectRef>,
}

#[derive(Clone, Debug, Default)]
pub struct Simulator {
    pub config: SimConfig,
}

impl Simulator {
    pub fn new(config: SimConfig) -> Self {
        Self { config }
    }

    pub fn reset(&self, scene: &SceneSpec, task: &Task) -> Result<(WorldState, Frame), SimError> {
        scene.validate()?;
        let objects: BTreeMap<ObjectRef, ObjectState> = scene
            .objects
            .iter()
            .map(|p| (p.object.clone(), p.state.clone()))
            .collect();
        for cond in &task.goal_conditions {
            for obj in cond.objects() {
                if !objects.contains_key(obj) {
                    return Err(SimError::UnknownObject(obj.qualified()));
                }
            }
        }
        let seed = scene
            .scene_id
            .bytes()
            .fold(0xcbf2_9ce4_8422_2325u64, |h, b| (h ^ u64::from(b)).wrapping_mul(0x100_0000_01b3));
        let mut state = WorldState {
            scene_id: scene.scene_id.clone(),
            width: scene.width,
            height: scene.height,
            walls: scene.walls.iter().copied().collect(),
            objects,
            agent: scene.agent_start,
            hand: None,
            rng_seed: seed,
        };
        state.settle();
        let frame = self.render(&state);
        Ok((state, frame))
    }

    /// Executes one action. Invalid attempts are `Failed` outcomes with the state and
    /// frame left unchanged.
    pub fn step(&self, state: &WorldState, action: &Action, bbox: Option<&BoundingBox>) -> StepOutcome {
        let mut next = state.clone();
        let applied = if action.kind.is_navigation() {
            apply_navigation(&mut next, action.kind).then_some(None)
        } else {
            self.apply_interaction(&mut next, action, bbox).map(Some)
        };
        match applied {
            Some(resolved) => {
                next.settle();
                let frame = self.render(&next);
                StepOutcome {
                    state: next,
                    frame,
                    result: ActionResult::Succeeded,
                    resolved,
                }
            }
            None => StepOutcome {
                state: state.clone(),
                frame: self.render(state),
                result: ActionResult::Failed,
                resolved: None,
            },
        }
    }

    /// Picks the visible, reachable instance named by the action whose true box best
    /// overlaps the submitted one.
    pub fn resolve_target(
        &self,
        state: &WorldState,
        target: &ObjectRef,
        bbox: &BoundingBox,
    ) -> Option<ObjectRef> {
        let front = state.agent.front();
        let mut best: Option<(f64, ObjectRef)> = None;
        for v in self.visible_objects(state) {
            if !v.object.same_class(target) {
                continue;
            }
            if target.instance_id.is_some() && target.instance_id != v.object.instance_id {
                continue;
            }
            if state.cell_of(&v.object) != Some(front) {
                continue;
            }
            let iou = crate::reward::iou(&v.bbox, bbox);
            if iou >= self.config.click_threshold && best.as_ref().is_none_or(|(b, _)| iou > *b) {
                best = Some((iou, v.object));
            }
        }
        best.map(|(_, r)| r)
    }

    fn apply_interaction(
        &self,
        state: &mut WorldState,
        action: &Action,
        bbox: Option<&BoundingBox>,
    ) -> Option<ObjectRef> {
        let target = self.resolve_target(state, action.target.as_ref()?, bbox?)?;
        let flags = state.objects[&target].class_flags;
        match action.kind {
            ActionKind::PickupObject => {
                if !flags.pickupable || state.hand.is_some() {
                    return None;
                }
                state.objects.get_mut(&target)?.location = Location::Hand;
                state.hand = Some(target.clone());
            }
            ActionKind::PutObject => {
                let held = state.hand.clone()?;
                let ts = &state.objects[&target];
                if !flags.receptacle || (flags.openable && !ts.is_open) || held == target {
                    return None;
                }
                state.objects.get_mut(&held)?.location = Location::Inside {
                    receptacle: target.clone(),
                };
                state.hand = None;
            }
            ActionKind::OpenObject | ActionKind::CloseObject => {
                let want_open = action.kind == ActionKind::OpenObject;
                let s = state.objects.get_mut(&target)?;
                if !flags.openable || s.is_open == want_open {
                    return None;
                }
                s.is_open = want_open;
            }
            ActionKind::ToggleObjectOn | ActionKind::ToggleObjectOff => {
                let want_on = action.kind == ActionKind::ToggleObjectOn;
                let s = state.objects.get_mut(&target)?;
                if !flags.toggleable || s.is_on == want_on {
                    return None;
                }
                s.is_on = want_on;
            }
            ActionKind::SliceObject => {
                let holding_knife = state.hand.as_ref().is_some_and(|h| h.name == KNIFE);
                let s = state.objects.get_mut(&target)?;
                if !flags.sliceable || s.is_sliced || !holding_knife {
                    return None;
                }
                s.is_sliced = true;
            }
            ActionKind::MoveAhead | ActionKind::RotateLeft | ActionKind::RotateRight => return None,
        }
        Some(target)
    }
}

fn apply_navigation(state: &mut WorldState, kind: ActionKind) -> bool {
    match kind {
        ActionKind::RotateLeft => {
            state.agent.heading = state.agent.heading.rotate_left();
            true
        }
        ActionKind::RotateRight => {
            state.agent.heading = state.agent.heading.rotate_right();
            true
        }
        ActionKind::MoveAhead => {
            let next = state.agent.front();
            if state.is_free(next) {
                state.agent.x = next.0;
                state.agent.y = next.1;
                true
            } else {
                false
            }
        }
        _ => false,
    }
}

#[cfg(test)]
pub(crate) mod tests;
