use proptest::prelude::*;

use super::scenegen::{class_flags, generate_scenario};
use super::*;
use crate::model::{GoalCondition, Heading, Phase, TaskType};

pub(crate) fn placement(class: &str, location: Location) -> ObjectPlacement {
    ObjectPlacement {
        object: ObjectRef::class(class),
        state: ObjectState::new(location, class_flags(class)),
    }
}

pub(crate) fn cell(x: i32, y: i32) -> Location {
    Location::Cell { x, y }
}

/// 3x3 room: agent at (0,0) facing East, apple at (2,0), table at (2,2).
pub(crate) fn apple_table_scenario() -> Scenario {
    let mut apple = placement("Apple", cell(2, 0));
    apple.state.class_flags.pickupable = true;
    let mut table = placement("Table", cell(2, 2));
    table.state.class_flags.receptacle = true;
    let scene = SceneSpec {
        scene_id: "apple-table".into(),
        width: 3,
        height: 3,
        walls: vec![],
        objects: vec![apple, table],
        agent_start: Pose::new(0, 0, Heading::East),
    };
    let task = Task::new(
        TaskType::Pick,
        "Put the Apple on the Table.",
        vec![GoalCondition::Inside {
            object: ObjectRef::class("Apple"),
            receptacle: ObjectRef::class("Table"),
        }],
    )
    .unwrap();
    Scenario { scene, task }
}

fn replay(sim: &Simulator, state: &WorldState, plan: &ExpertPlan) -> WorldState {
    let mut s = state.clone();
    for pa in plan.actions() {
        let out = sim.step(&s, &pa.action, pa.bbox.as_ref());
        assert!(out.result.succeeded(), "expert action {} failed", pa.action);
        s = out.state;
    }
    s
}

fn box_of(sim: &Simulator, state: &WorldState, name: &str) -> Option<BoundingBox> {
    sim.visible_objects(state)
        .into_iter()
        .find(|v| v.object.name == name)
        .map(|v| v.bbox)
}

#[test]
fn reset_is_deterministic() {
    let s = apple_table_scenario();
    let sim = Simulator::default();
    let (a, fa) = sim.reset(&s.scene, &s.task).unwrap();
    let (b, fb) = sim.reset(&s.scene, &s.task).unwrap();
    assert_eq!(a, b);
    assert_eq!(fa.pixels(), fb.pixels());
    assert_eq!((fa.width(), fa.height()), (64, 64));
    assert_eq!(fa.pixels().unwrap().len(), 64 * 64 * 3);
}

#[test]
fn reset_rejects_unknown_goal_object() {
    let mut s = apple_table_scenario();
    s.scene.objects.retain(|p| p.object.name != "Apple");
    let err = Simulator::default().reset(&s.scene, &s.task).unwrap_err();
    assert!(matches!(err, SimError::UnknownObject(ref o) if o == "Apple"));
}

#[test]
fn pickup_with_correct_box_succeeds() {
    let s = apple_table_scenario();
    let sim = Simulator::default();
    let (state, frame) = sim.reset(&s.scene, &s.task).unwrap();
    let moved = sim.step(&state, &Action::navigate(ActionKind::MoveAhead), None);
    assert!(moved.result.succeeded());
    let bbox = box_of(&sim, &moved.state, "Apple").unwrap();
    let pick = Action::interact(ActionKind::PickupObject, ObjectRef::class("Apple"));
    let out = sim.step(&moved.state, &pick, Some(&bbox));
    assert_eq!(out.result, ActionResult::Succeeded);
    assert_eq!(out.state.hand, Some(ObjectRef::class("Apple")));
    assert_eq!(out.state.objects[&ObjectRef::class("Apple")].location, Location::Hand);
    assert_ne!(out.frame.hash(), moved.frame.hash());
    assert_ne!(frame.hash(), moved.frame.hash());
}

#[test]
fn pickup_with_wrong_box_fails_without_change() {
    let s = apple_table_scenario();
    let sim = Simulator::default();
    let (state, _) = sim.reset(&s.scene, &s.task).unwrap();
    let moved = sim.step(&state, &Action::navigate(ActionKind::MoveAhead), None).state;
    let before = sim.render(&moved);
    let wrong = BoundingBox::new(0, 0, 10, 10).unwrap();
    let pick = Action::interact(ActionKind::PickupObject, ObjectRef::class("Apple"));
    let out = sim.step(&moved, &pick, Some(&wrong));
    assert_eq!(out.result, ActionResult::Failed);
    assert_eq!(out.state, moved);
    assert_eq!(out.frame.pixels(), before.pixels());
}

#[test]
fn move_into_wall_or_edge_fails() {
    let s = apple_table_scenario();
    let sim = Simulator::default();
    let (mut state, frame) = sim.reset(&s.scene, &s.task).unwrap();
    state.agent.heading = Heading::North;
    let f0 = sim.render(&state);
    let out = sim.step(&state, &Action::navigate(ActionKind::MoveAhead), None);
    assert_eq!(out.result, ActionResult::Failed);
    assert_eq!(out.frame.hash(), f0.hash());
    assert_ne!(frame.hash(), f0.hash());

    let mut walled = s.scene.clone();
    walled.walls.push((1, 0));
    let (state, frame) = sim.reset(&walled, &s.task).unwrap();
    let out = sim.step(&state, &Action::navigate(ActionKind::MoveAhead), None);
    assert_eq!(out.result, ActionResult::Failed);
    assert_eq!(out.frame.hash(), frame.hash());
}

#[test]
fn visibility_examples() {
    let sim = Simulator::default();
    let s = apple_table_scenario();
    let (mut state, _) = sim.reset(&s.scene, &s.task).unwrap();
    state.agent = Pose::new(1, 0, Heading::East);
    let vis = sim.visible_objects(&state);
    assert_eq!(vis.len(), 1);
    assert_eq!(vis[0].object.name, "Apple");
    assert_eq!(vis[0].bbox, sim.cell_box(1, 0).unwrap());
    // Cone of depth 1..3 and |dx| <= 1: from (0,1) facing North nothing is ahead.
    state.agent = Pose::new(0, 1, Heading::North);
    assert!(sim.visible_objects(&state).is_empty());

    let fridge = ObjectPlacement {
        object: ObjectRef::class("Fridge"),
        state: ObjectState::new(cell(2, 1), class_flags("Fridge")),
    };
    let apple = placement(
        "Apple",
        Location::Inside {
            receptacle: ObjectRef::class("Fridge"),
        },
    );
    let scene = SceneSpec {
        scene_id: "fridge".into(),
        width: 3,
        height: 3,
        walls: vec![],
        objects: vec![fridge, apple],
        agent_start: Pose::new(0, 1, Heading::East),
    };
    let task = Task::new(
        TaskType::Cool,
        "x",
        vec![
            GoalCondition::Inside {
                object: ObjectRef::class("Apple"),
                receptacle: ObjectRef::class("Fridge"),
            },
            GoalCondition::IsCold {
                object: ObjectRef::class("Apple"),
            },
        ],
    )
    .unwrap();
    let (mut state, _) = sim.reset(&scene, &task).unwrap();
    let names: Vec<String> = sim.visible_objects(&state).into_iter().map(|v| v.object.name).collect();
    assert_eq!(names, vec!["Fridge"]);
    state.objects.get_mut(&ObjectRef::class("Fridge")).unwrap().is_open = true;
    let names: Vec<String> = sim.visible_objects(&state).into_iter().map(|v| v.object.name).collect();
    assert_eq!(names, vec!["Fridge", "Apple"]);
    // Settling at reset chills whatever starts in a fridge.
    assert!(state.objects[&ObjectRef::class("Apple")].is_cold);
}

#[test]
fn box_geometry_follows_projection() {
    let sim = Simulator::default();
    // size = round(64 / (d + 1)), centre x = round(32 + dx * 64 / 3), centre y = 28.
    let oracle = |d: u32, dx: i32| {
        let size = (64.0 / f64::from(d + 1)).round() as i64;
        let cx = (32.0 + f64::from(dx) * 64.0 / 3.0).round() as i64;
        let x0 = (cx - size / 2).max(0);
        let x1 = (cx - size / 2 + size).min(64);
        let y0 = 28 - size / 2;
        (x0 as u32, y0 as u32, x1 as u32, (y0 + size) as u32)
    };
    for d in 1..=3 {
        for dx in -1..=1 {
            let b = sim.cell_box(d, dx).unwrap();
            assert_eq!((b.x_min, b.y_min, b.x_max, b.y_max), oracle(d, dx), "d={d} dx={dx}");
        }
    }
    assert_eq!(sim.cell_box(1, 0).unwrap(), BoundingBox::new(16, 12, 48, 44).unwrap());
}

#[test]
fn expert_plan_on_small_room() {
    let s = apple_table_scenario();
    let sim = Simulator::default();
    let (state, _) = sim.reset(&s.scene, &s.task).unwrap();
    let plan = sim.expert_plan(&state, &s.task).unwrap();
    let texts: Vec<&str> = plan.subgoals.iter().map(|p| p.subgoal.text.as_str()).collect();
    assert_eq!(
        texts,
        ["go to the Apple", "pick up the Apple", "go to the Table", "put the Apple on the Table"]
    );
    let phases: Vec<Phase> = plan.subgoals.iter().map(|p| p.subgoal.phase).collect();
    assert_eq!(phases, [Phase::Navigation, Phase::Interaction, Phase::Navigation, Phase::Interaction]);
    let actions: Vec<String> = plan.actions().map(|a| a.action.to_string()).collect();
    assert_eq!(
        actions,
        [
            "MoveAhead",
            "PickupObject Apple",
            "MoveAhead",
            "RotateRight",
            "MoveAhead",
            "PutObject Table"
        ]
    );
    for a in plan.actions() {
        assert_eq!(a.bbox.is_some(), a.action.is_interaction());
    }
    let end = replay(&sim, &state, &plan);
    assert!(goal_satisfied(&end, &s.task).all);
}

#[test]
fn expert_plan_edge_cases() {
    let s = apple_table_scenario();
    let sim = Simulator::default();
    let (mut state, _) = sim.reset(&s.scene, &s.task).unwrap();
    let mut done = state.clone();
    done.objects.get_mut(&ObjectRef::class("Apple")).unwrap().location = Location::Inside {
        receptacle: ObjectRef::class("Table"),
    };
    assert!(sim.expert_plan(&done, &s.task).unwrap().is_empty());
    state.walls.extend([(1, 0), (2, 1)]);
    let err = sim.expert_plan(&state, &s.task).unwrap_err();
    assert!(matches!(err, SimError::Unreachable(_)));
}

#[test]
fn goal_fractions() {
    let apple = ObjectRef::class("Apple");
    let table = ObjectRef::class("Table");
    let task = Task::new(
        TaskType::Heat,
        "x",
        vec![
            GoalCondition::Inside {
                object: apple.clone(),
                receptacle: table.clone(),
            },
            GoalCondition::IsHot { object: apple.clone() },
        ],
    )
    .unwrap();
    let s = apple_table_scenario();
    let sim = Simulator::default();
    let (mut state, _) = sim.reset(&s.scene, &task).unwrap();
    let fresh = goal_satisfied(&state, &task);
    assert_eq!((fresh.all, fresh.fraction()), (false, 0.0));
    state.objects.get_mut(&apple).unwrap().is_hot = true;
    state.objects.get_mut(&apple).unwrap().location = Location::Hand;
    state.hand = Some(apple.clone());
    let held = goal_satisfied(&state, &task);
    assert_eq!((held.all, held.satisfied, held.total), (false, 1, 2));
    assert_eq!(held.fraction(), 0.5);
    state.objects.get_mut(&apple).unwrap().location = Location::Inside { receptacle: table };
    state.hand = None;
    let g = goal_satisfied(&state, &task);
    assert_eq!((g.all, g.fraction()), (true, 1.0));
}

#[test]
fn captions() {
    let s = apple_table_scenario();
    let sim = Simulator::default();
    let (state, _) = sim.reset(&s.scene, &s.task).unwrap();
    assert_eq!(state_diff_caption(&state, &state), "Nothing changes.");

    let apple = ObjectRef::class("Apple");
    let table = ObjectRef::class("Table");
    let mut before = state.clone();
    before.objects.get_mut(&apple).unwrap().location = Location::Inside { receptacle: table };
    let mut after = before.clone();
    after.objects.get_mut(&apple).unwrap().location = Location::Hand;
    after.hand = Some(apple.clone());
    assert_eq!(
        state_diff_caption(&before, &after),
        "The Apple is now held by the agent; the Table no longer contains the Apple."
    );
}

#[test]
fn microwave_heats_contents_when_switched_on() {
    let mw = ObjectRef::class("Microwave");
    let apple = ObjectRef::class("Apple");
    let mut oven = ObjectPlacement {
        object: mw.clone(),
        state: ObjectState::new(cell(1, 0), class_flags("Microwave")),
    };
    oven.state.is_open = true;
    let scene = SceneSpec {
        scene_id: "mw".into(),
        width: 2,
        height: 1,
        walls: vec![],
        objects: vec![
            oven,
            placement("Apple", Location::Inside { receptacle: mw.clone() }),
        ],
        agent_start: Pose::new(0, 0, Heading::East),
    };
    let task = Task::new(
        TaskType::Heat,
        "x",
        vec![
            GoalCondition::Inside {
                object: apple.clone(),
                receptacle: mw.clone(),
            },
            GoalCondition::IsHot { object: apple.clone() },
        ],
    )
    .unwrap();
    let sim = Simulator::default();
    let (state, frame) = sim.reset(&scene, &task).unwrap();
    let bbox = box_of(&sim, &state, "Microwave").unwrap();
    let out = sim.step(&state, &Action::interact(ActionKind::ToggleObjectOn, mw.to_class()), Some(&bbox));
    assert!(out.result.succeeded());
    assert_ne!(out.frame.hash(), frame.hash());
    assert!(out.state.objects[&apple].is_hot);
    let cap = state_diff_caption(&state, &out.state);
    assert_eq!(cap, "The Apple is now hot; the Microwave is now on.");
    assert!(goal_satisfied(&out.state, &task).all);
}

#[test]
fn render_matches_labels() {
    let sim = Simulator::default();
    for t in TaskType::ALL {
        for seed in 0..5 {
            let s = generate_scenario(t, seed).unwrap();
            let (state, frame) = sim.reset(&s.scene, &s.task).unwrap();
            let vis = sim.visible_objects(&state);
            for (i, v) in vis.iter().enumerate() {
                let color = render::object_color(&v.object, &state.objects[&v.object]);
                // Pixels not overdrawn by later boxes carry the object's colour.
                for y in v.bbox.y_min..v.bbox.y_max {
                    for x in v.bbox.x_min..v.bbox.x_max {
                        if vis[i + 1..].iter().any(|later| later.bbox.contains_pixel(x, y)) {
                            continue;
                        }
                        assert_eq!(frame.pixel(x, y), Some(color));
                    }
                }
            }
        }
    }
}

#[test]
fn expert_plans_are_sound() {
    let sim = Simulator::default();
    for t in TaskType::ALL {
        for seed in 0..100 {
            let s = generate_scenario(t, seed).unwrap();
            let (state, _) = sim.reset(&s.scene, &s.task).unwrap();
            assert!(!goal_satisfied(&state, &s.task).all);
            let plan = sim.expert_plan(&state, &s.task).unwrap();
            for (i, sg) in plan.subgoals.iter().enumerate() {
                assert_eq!(sg.subgoal.index as usize, i + 1);
                if i > 0 {
                    assert_ne!(sg.subgoal.phase, plan.subgoals[i - 1].subgoal.phase);
                }
            }
            let end = replay(&sim, &state, &plan);
            assert!(goal_satisfied(&end, &s.task).all, "{} seed {seed}", t.as_str());
        }
    }
}

#[test]
fn scenario_generation_is_deterministic() {
    for t in TaskType::ALL {
        assert_eq!(generate_scenario(t, 7).unwrap(), generate_scenario(t, 7).unwrap());
    }
    assert_ne!(
        generate_scenario(TaskType::Pick, 1).unwrap(),
        generate_scenario(TaskType::Pick, 2).unwrap()
    );
}

fn arb_action(state: &WorldState, sim: &Simulator, pick: usize, jitter: bool) -> (Action, Option<BoundingBox>) {
    let kind = ActionKind::ALL[pick % ActionKind::ALL.len()];
    if kind.is_navigation() {
        return (Action::navigate(kind), None);
    }
    let vis = sim.visible_objects(state);
    let names: Vec<&ObjectRef> = state.objects.keys().collect();
    match vis.get(pick / 10 % vis.len().max(1)) {
        Some(v) if !jitter => (Action::interact(kind, v.object.to_class()), Some(v.bbox)),
        _ => {
            let o = names[pick / 7 % names.len()];
            (Action::interact(kind, o.to_class()), BoundingBox::new(0, 0, 8, 8).ok())
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn failure_iff_frame_unchanged(
        t in 0usize..6,
        seed in 0u64..40,
        picks in proptest::collection::vec((0usize..400, any::<bool>()), 1..60),
    ) {
        let sim = Simulator::default();
        let s = generate_scenario(TaskType::ALL[t], seed).unwrap();
        let (mut state, mut frame) = sim.reset(&s.scene, &s.task).unwrap();
        let total = state.objects.len();
        for (pick, jitter) in picks {
            let (action, bbox) = arb_action(&state, &sim, pick, jitter);
            let out = sim.step(&state, &action, bbox.as_ref());
            let unchanged = out.frame.hash() == frame.hash();
            prop_assert_eq!(out.result == ActionResult::Failed, unchanged);
            if unchanged {
                prop_assert_eq!(&out.state, &state);
            }
            // Determinism of step.
            let again = sim.step(&state, &action, bbox.as_ref());
            prop_assert_eq!(again.frame.hash(), out.frame.hash());
            prop_assert_eq!(&again.state, &out.state);
            // Conservation and the single-hand rule.
            prop_assert_eq!(out.state.objects.len(), total);
            let in_hand = out.state.objects.values().filter(|o| o.location == Location::Hand).count();
            prop_assert!(in_hand <= 1);
            prop_assert_eq!(in_hand == 1, out.state.hand.is_some());
            state = out.state;
            frame = out.frame;
        }
    }
}
