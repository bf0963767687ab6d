//! Seeded random scenes with a solvable task of a requested family.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::model::{GoalCondition, Heading, ObjectRef, Pose, Task, TaskType};

use super::{
    ClassFlags, Location, ObjectPlacement, ObjectState, Scenario, SceneSpec, SimError, Simulator, FAUCET, FRIDGE,
    KNIFE, MICROWAVE, SINK,
};

pub const LAMP: &str = "DeskLamp";

const SURFACES: &[&str] = &["CounterTop", "DiningTable", "SideTable", "Shelf", "Desk"];
const CABINETS: &[&str] = &["Cabinet", "Drawer"];
const SMALL: &[&str] = &[
    "Apple", "Mug", "Potato", "Tomato", "Bread", "Cup", "Egg", "Lettuce", "Book", "CellPhone", "Pencil", "Watch",
    "Bowl", "Plate", "Vase", "Spatula",
];
const SLICEABLE: &[&str] = &["Apple", "Potato", "Tomato", "Bread", "Lettuce"];

fn targets_for(task_type: TaskType) -> &'static [&'static str] {
    match task_type {
        TaskType::Clean => &["Mug", "Plate", "Bowl", "Cup", "Apple", "Lettuce"],
        TaskType::Cool => &["Apple", "Tomato", "Potato", "Lettuce", "Egg", "Bread", "Cup"],
        TaskType::Heat => &["Apple", "Potato", "Egg", "Bread", "Mug", "Cup", "Tomato"],
        TaskType::Look => &["Book", "CellPhone", "Pencil", "Watch", "Vase", "Bowl"],
        TaskType::Pick | TaskType::PickTwo => SMALL,
    }
}

/// Capabilities of a known class. Unknown classes are inert.
pub fn class_flags(class: &str) -> ClassFlags {
    let mut f = ClassFlags::default();
    match class {
        FRIDGE => {
            f.receptacle = true;
            f.openable = true;
        }
        MICROWAVE => {
            f.receptacle = true;
            f.openable = true;
            f.toggleable = true;
        }
        SINK => f.receptacle = true,
        FAUCET | LAMP => f.toggleable = true,
        KNIFE => f.pickupable = true,
        c if SURFACES.contains(&c) => f.receptacle = true,
        c if CABINETS.contains(&c) => {
            f.receptacle = true;
            f.openable = true;
        }
        c if SMALL.contains(&c) => {
            f.pickupable = true;
            f.sliceable = SLICEABLE.contains(&c);
        }
        _ => {}
    }
    f
}

struct Layout {
    width: u32,
    height: u32,
    walls: Vec<(i32, i32)>,
    free: Vec<(i32, i32)>,
    objects: Vec<ObjectPlacement>,
}

impl Layout {
    fn new(rng: &mut ChaCha8Rng) -> Self {
        let width = rng.gen_range(6..=8u32);
        let height = rng.gen_range(6..=8u32);
        let mut cells: Vec<(i32, i32)> = (0..height as i32)
            .flat_map(|y| (0..width as i32).map(move |x| (x, y)))
            .collect();
        cells.shuffle(rng);
        let n_walls = rng.gen_range(0..=3);
        let walls = cells.drain(..n_walls).collect();
        Self {
            width,
            height,
            walls,
            free: cells,
            objects: Vec::new(),
        }
    }

    fn place(&mut self, class: &str, id: &str) -> Option<ObjectRef> {
        let (x, y) = self.free.pop()?;
        let object = ObjectRef::instance(class, id);
        self.objects.push(ObjectPlacement {
            object: object.clone(),
            state: ObjectState::new(Location::Cell { x, y }, class_flags(class)),
        });
        Some(object)
    }

    fn put_inside(&mut self, class: &str, id: &str, receptacle: &ObjectRef) -> ObjectRef {
        let object = ObjectRef::instance(class, id);
        self.objects.push(ObjectPlacement {
            object: object.clone(),
            state: ObjectState::new(
                Location::Inside {
                    receptacle: receptacle.clone(),
                },
                class_flags(class),
            ),
        });
        object
    }

    fn state_mut(&mut self, object: &ObjectRef) -> &mut ObjectState {
        &mut self
            .objects
            .iter_mut()
            .find(|p| &p.object == object)
            .expect("placed object")
            .state
    }
}

fn attempt(task_type: TaskType, seed: u64, rng: &mut ChaCha8Rng) -> Option<Scenario> {
    let mut l = Layout::new(rng);
    let mut holders: Vec<ObjectRef> = Vec::new();
    let n_surfaces = rng.gen_range(2..=3);
    for class in SURFACES.choose_multiple(rng, n_surfaces) {
        holders.push(l.place(class, "1")?);
    }
    if rng.gen_bool(0.5) {
        let class = CABINETS.choose(rng)?;
        holders.push(l.place(class, "1")?);
    }
    let appliance = match task_type {
        TaskType::Clean => {
            let sink = l.place(SINK, "1")?;
            l.place(FAUCET, "1")?;
            Some(sink)
        }
        TaskType::Cool => Some(l.place(FRIDGE, "1")?),
        TaskType::Heat => Some(l.place(MICROWAVE, "1")?),
        TaskType::Look => Some(l.place(LAMP, "1")?),
        TaskType::Pick | TaskType::PickTwo => None,
    };
    if let Some(a) = &appliance {
        if class_flags(&a.name).receptacle {
            holders.push(a.clone());
        }
    }

    let target_class = *targets_for(task_type).choose(rng)?;
    let count = if task_type == TaskType::PickTwo { 2 } else { 1 };
    // The destination is always a plain surface so the expert never has to juggle doors.
    let surfaces: Vec<ObjectRef> = holders.iter().filter(|h| SURFACES.contains(&h.name.as_str())).cloned().collect();
    let dest = surfaces.choose(rng)?.clone();
    let sources: Vec<ObjectRef> = holders
        .iter()
        .filter(|h| *h != &dest && Some(*h) != appliance.as_ref())
        .cloned()
        .collect();
    let mut targets = Vec::new();
    for i in 1..=count {
        let id = i.to_string();
        let obj = if !sources.is_empty() && rng.gen_bool(0.7) {
            let src = sources.choose(rng)?.clone();
            l.put_inside(target_class, &id, &src)
        } else {
            l.place(target_class, &id)?
        };
        if task_type == TaskType::Clean {
            l.state_mut(&obj).is_clean = false;
        }
        targets.push(obj);
    }
    let n_distractors = rng.gen_range(1..=3);
    let others: Vec<&str> = SMALL.iter().copied().filter(|c| *c != target_class).collect();
    for class in others.choose_multiple(rng, n_distractors) {
        if rng.gen_bool(0.6) {
            let h = holders.choose(rng)?.clone();
            l.put_inside(class, "1", &h);
        } else {
            l.place(class, "1")?;
        }
    }
    for p in &mut l.objects {
        if p.state.class_flags.openable && rng.gen_bool(0.3) {
            p.state.is_open = true;
        }
    }

    let (x, y) = l.free.pop()?;
    let heading = *Heading::ALL.choose(rng)?;
    let scene = SceneSpec {
        scene_id: format!("{}-{seed:06}", task_type.as_str().to_lowercase()),
        width: l.width,
        height: l.height,
        walls: l.walls,
        objects: l.objects,
        agent_start: Pose::new(x, y, heading),
    };

    let o = targets[0].clone();
    let (instruction, goal) = match task_type {
        TaskType::Pick => (
            format!("Put the {} on the {}.", o.name, dest.name),
            vec![GoalCondition::Inside { object: o, receptacle: dest.clone() }],
        ),
        TaskType::PickTwo => (
            format!("Put two {}s on the {}.", o.name, dest.name),
            targets
                .iter()
                .map(|t| GoalCondition::Inside { object: t.clone(), receptacle: dest.clone() })
                .collect(),
        ),
        TaskType::Look => {
            let lamp = appliance.clone()?;
            (
                format!("Examine the {} under the {}.", o.name, lamp.name),
                vec![GoalCondition::Holding { object: o }, GoalCondition::IsOn { object: lamp }],
            )
        }
        TaskType::Clean => (
            format!("Put a clean {} on the {}.", o.name, dest.name),
            vec![
                GoalCondition::Inside { object: o.clone(), receptacle: dest.clone() },
                GoalCondition::IsClean { object: o },
            ],
        ),
        TaskType::Cool => (
            format!("Put a chilled {} on the {}.", o.name, dest.name),
            vec![
                GoalCondition::Inside { object: o.clone(), receptacle: dest.clone() },
                GoalCondition::IsCold { object: o },
            ],
        ),
        TaskType::Heat => (
            format!("Put a heated {} on the {}.", o.name, dest.name),
            vec![
                GoalCondition::Inside { object: o.clone(), receptacle: dest.clone() },
                GoalCondition::IsHot { object: o },
            ],
        ),
    };
    let task = Task::new(task_type, instruction, goal).ok()?;
    Some(Scenario { scene, task })
}

/// Generates a scene and task of the given family whose expert plan executes to
/// completion. Equal arguments give equal scenarios.
pub fn generate_scenario(task_type: TaskType, seed: u64) -> Result<Scenario, SimError> {
    let family = TaskType::ALL.iter().position(|t| *t == task_type).unwrap_or(0) as u64;
    let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_mul(8).wrapping_add(family));
    let sim = Simulator::default();
    for _ in 0..500 {
        let Some(s) = attempt(task_type, seed, &mut rng) else { continue };
        let Ok((state, _)) = sim.reset(&s.scene, &s.task) else { continue };
        match sim.expert_plan(&state, &s.task) {
            Ok(plan) if !plan.is_empty() => return Ok(s),
            _ => continue,
        }
    }
    Err(SimError::Unreachable(format!("no solvable {} scene for seed {seed}", task_type.as_str())))
}

/// `per_type` scenarios for every task family, seeds `base_seed..base_seed + per_type`.
pub fn scenario_suite(per_type: u32, base_seed: u64) -> Result<Vec<Scenario>, SimError> {
    let mut out = Vec::new();
    for t in TaskType::ALL {
        for i in 0..u64::from(per_type) {
            out.push(generate_scenario(t, base_seed + i)?);
        }
    }
    Ok(out)
}
