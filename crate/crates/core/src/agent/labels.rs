//! Ground-truth answers read off the simulator state.

use std::collections::BTreeSet;

use crate::model::{BoundingBox, ObjectRef};
use crate::sim::{Simulator, WorldState};

/// Objects in view, as instances.
pub fn visible_set(sim: &Simulator, state: &WorldState) -> BTreeSet<ObjectRef> {
    sim.visible_objects(state).into_iter().map(|v| v.object).collect()
}

/// Class names of the objects in view.
pub fn visible_classes(sim: &Simulator, state: &WorldState) -> BTreeSet<String> {
    sim.visible_objects(state).into_iter().map(|v| v.object.name).collect()
}

/// Box of the instance of `class` an interaction would address: the one in the cell
/// ahead if any, otherwise the nearest visible one.
pub fn class_box(sim: &Simulator, state: &WorldState, class: &str) -> Option<BoundingBox> {
    let front = state.agent.front();
    let vis = sim.visible_objects(state);
    let matching = || vis.iter().filter(|v| v.object.name.eq_ignore_ascii_case(class));
    matching()
        .find(|v| state.cell_of(&v.object) == Some(front))
        .or_else(|| matching().min_by_key(|v| (v.depth, v.lateral.abs())))
        .map(|v| v.bbox)
}

/// Boxes of every visible instance of `class`.
pub fn class_boxes(sim: &Simulator, state: &WorldState, class: &str) -> Vec<BoundingBox> {
    sim.visible_objects(state)
        .into_iter()
        .filter(|v| v.object.name.eq_ignore_ascii_case(class))
        .map(|v| v.bbox)
        .collect()
}

/// Box of `preferred` when it is in view and of `class`, otherwise [`class_box`].
pub fn target_box(sim: &Simulator, state: &WorldState, class: &str, preferred: Option<&ObjectRef>) -> Option<BoundingBox> {
    preferred
        .filter(|p| p.name.eq_ignore_ascii_case(class))
        .and_then(|p| sim.visible_objects(state).into_iter().find(|v| &v.object == p))
        .map(|v| v.bbox)
        .or_else(|| class_box(sim, state, class))
}

/// Box for an object that is not in view: the centre cell one step ahead.
pub fn placeholder_box(sim: &Simulator) -> BoundingBox {
    sim.cell_box(1, 0).expect("raster holds the nearest cell")
}
