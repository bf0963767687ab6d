use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use super::SimError;
use crate::model::{ObjectRef, Pose, Task};

/// Static capabilities of an object class.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ClassFlags {
    #[serde(default)]
    pub pickupable: bool,
    #[serde(default)]
    pub receptacle: bool,
    #[serde(default)]
    pub openable: bool,
    #[serde(default)]
    pub toggleable: bool,
    #[serde(default)]
    pub sliceable: bool,
}

#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Location {
    Cell { x: i32, y: i32 },
    Inside { receptacle: ObjectRef },
    Hand,
}

fn yes() -> bool {
    true
}

/// Dynamic object state plus its class flags.
#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ObjectState {
    pub location: Location,
    #[serde(default)]
    pub is_open: bool,
    #[serde(default)]
    pub is_on: bool,
    #[serde(default = "yes")]
    pub is_clean: bool,
    #[serde(default)]
    pub is_hot: bool,
    #[serde(default)]
    pub is_cold: bool,
    #[serde(default)]
    pub is_sliced: bool,
    pub class_flags: ClassFlags,
}

impl ObjectState {
    pub fn new(location: Location, class_flags: ClassFlags) -> Self {
        Self {
            location,
            is_open: false,
            is_on: false,
            is_clean: true,
            is_hot: false,
            is_cold: false,
            is_sliced: false,
            class_flags,
        }
    }

    /// Bit set of the mutable flags; used for colours.
    pub fn flag_bits(&self) -> u8 {
        (self.is_open as u8)
            | (self.is_on as u8) << 1
            | (self.is_clean as u8) << 2
            | (self.is_hot as u8) << 3
            | (self.is_cold as u8) << 4
            | (self.is_sliced as u8) << 5
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ObjectPlacement {
    pub object: ObjectRef,
    #[serde(flatten)]
    pub state: ObjectState,
}

/// A static scene: grid, walls, object placements and the agent's start pose.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SceneSpec {
    pub scene_id: String,
    pub width: u32,
    pub height: u32,
    #[serde(default)]
    pub walls: Vec<(i32, i32)>,
    pub objects: Vec<ObjectPlacement>,
    pub agent_start: Pose,
}

/// A scene paired with the task to solve in it.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Scenario {
    pub scene: SceneSpec,
    pub task: Task,
}

impl SceneSpec {
    pub fn in_bounds(&self, x: i32, y: i32) -> bool {
        x >= 0 && y >= 0 && (x as u32) < self.width && (y as u32) < self.height
    }

    pub fn validate(&self) -> Result<(), SimError> {
        let bad = |msg: String| Err(SimError::InvalidScene(format!("{}: {msg}", self.scene_id)));
        if self.width == 0 || self.height == 0 || self.width > 255 || self.height > 255 {
            return bad(format!("grid {}x{} out of range", self.width, self.height));
        }
        let walls: BTreeSet<(i32, i32)> = self.walls.iter().copied().collect();
        for &(x, y) in &walls {
            if !self.in_bounds(x, y) {
                return bad(format!("wall ({x}, {y}) outside grid"));
            }
        }
        let mut by_ref: BTreeMap<&ObjectRef, &ObjectPlacement> = BTreeMap::new();
        for p in &self.objects {
            if p.object.name.is_empty() {
                return bad("object with empty name".into());
            }
            if by_ref.insert(&p.object, p).is_some() {
                return bad(format!("duplicate object {}", p.object.qualified()));
            }
            let s = &p.state;
            if s.is_open && !s.class_flags.openable {
                return bad(format!("{} is open but not openable", p.object.qualified()));
            }
            if s.is_on && !s.class_flags.toggleable {
                return bad(format!("{} is on but not toggleable", p.object.qualified()));
            }
        }
        let mut occupied = BTreeSet::new();
        for p in &self.objects {
            match &p.state.location {
                Location::Cell { x, y } => {
                    if !self.in_bounds(*x, *y) || walls.contains(&(*x, *y)) {
                        return bad(format!("{} placed on blocked cell", p.object.qualified()));
                    }
                    if !occupied.insert((*x, *y)) {
                        return bad(format!("cell ({x}, {y}) holds two objects"));
                    }
                }
                Location::Inside { receptacle } => match by_ref.get(receptacle) {
                    Some(r) if r.state.class_flags.receptacle => {
                        if !matches!(r.state.location, Location::Cell { .. }) {
                            return bad(format!("nested containment under {}", receptacle.qualified()));
                        }
                    }
                    _ => return bad(format!("{} is not a receptacle", receptacle.qualified())),
                },
                Location::Hand => return bad(format!("{} starts in hand", p.object.qualified())),
            }
        }
        let a = self.agent_start;
        if !self.in_bounds(a.x, a.y) || walls.contains(&(a.x, a.y)) || occupied.contains(&(a.x, a.y)) {
            return bad("agent start cell is blocked".into());
        }
        Ok(())
    }
}
