use std::collections::BTreeSet;

use proptest::prelude::*;

use super::*;
use crate::model::{
    Action, ActionKind, ActionResult, BoundingBox, GoalCondition, Heading, MemoryStep, ObjectRef, Phase, Pose,
    SkillOutput, Subgoal, Task, TaskType,
};

/// Steps 1..=n; steps 1-3 navigate under subgoal 1, later steps pick up under subgoal 2.
fn memory(n: u32) -> Memory {
    let task = Task::new(
        TaskType::Pick,
        "Put the Apple on the Table.",
        vec![GoalCondition::Inside {
            object: ObjectRef::class("Apple"),
            receptacle: ObjectRef::class("Table"),
        }],
    )
    .unwrap();
    let mut m = Memory::new(task);
    for i in 1..=n {
        let interact = i > 3;
        let (action, bbox, subgoal) = if interact {
            (
                Action::interact(ActionKind::PickupObject, ObjectRef::class("Apple")),
                Some(BoundingBox::new(16, 12, 48, 44).unwrap()),
                Subgoal::new(2, Phase::Interaction, "pick up the Apple"),
            )
        } else {
            (
                Action::navigate(ActionKind::MoveAhead),
                None,
                Subgoal::new(1, Phase::Navigation, "go to the Apple"),
            )
        };
        m.push(MemoryStep {
            step_index: i,
            frame: Frame::from_pixels(1, 1, vec![i as u8, 0, 0]).unwrap(),
            visible: BTreeSet::from([ObjectRef::class("Apple"), ObjectRef::class("Table")]),
            pose: Pose::new(i as i32, 0, Heading::East),
            action,
            bbox,
            result: if i == 4 { ActionResult::Failed } else { ActionResult::Succeeded },
            subgoal,
        })
        .unwrap();
    }
    m
}

fn opts() -> PromptOptions {
    PromptOptions::default()
}

#[test]
fn sap_prompt_embeds_context_and_window() {
    let t = TemplateSet::default();
    let m = memory(10);
    let p = build_prompt(&t, SkillKind::SAP, &m, 5, &opts()).unwrap();
    assert_eq!(p.frames, vec![m.steps[4].frame.clone()]);
    assert!(p.text.contains("Agent pose: (5, 0, East)"));
    assert!(p.text.contains("Visible objects: Apple, Table"));
    assert!(p.text.contains("Current subgoal: pick up the Apple"));
    for i in 1..=4 {
        assert!(p.text.contains(&format!("Step {i}:")));
    }
    assert!(!p.text.contains("Step 5:"));
    let late = build_prompt(&t, SkillKind::SAP, &m, 10, &opts()).unwrap();
    let listed: Vec<u32> = (1..=10).filter(|i| late.text.contains(&format!("Step {i}:"))).collect();
    assert_eq!(listed, vec![6, 7, 8, 9]);
    assert!(!p.text.contains('{'));
}

#[test]
fn ag_uses_two_frames() {
    let t = TemplateSet::default();
    let m = memory(6);
    let p = build_prompt(&t, SkillKind::AG, &m, 5, &opts()).unwrap();
    assert_eq!(p.frames, vec![m.steps[3].frame.clone(), m.steps[4].frame.clone()]);
    let err = build_prompt(&t, SkillKind::AG, &m, 1, &opts()).unwrap_err();
    assert!(matches!(err, PromptError::MissingContext("previous_frame")));
}

#[test]
fn od_without_action_is_missing_context() {
    let t = TemplateSet::default();
    let mut m = memory(2);
    m.current = Some(PendingStep {
        frame: Some(Frame::from_pixels(1, 1, vec![9, 9, 9]).unwrap()),
        subgoal: Some(Subgoal::new(1, Phase::Navigation, "go to the Apple")),
        ..Default::default()
    });
    let err = build_prompt(&t, SkillKind::OD, &m, 3, &opts()).unwrap_err();
    assert!(matches!(err, PromptError::MissingContext("action")));
    let err = build_prompt(&t, SkillKind::OR, &m, 9, &opts()).unwrap_err();
    assert!(matches!(err, PromptError::StepOutOfRange { t: 9, len: 2 }));
}

#[test]
fn frame_arity_per_kind() {
    let t = TemplateSet::default();
    let mut m = memory(6);
    m.current = Some(PendingStep {
        frame: Some(Frame::from_pixels(1, 1, vec![7, 7, 7]).unwrap()),
        subgoal: Some(Subgoal::new(2, Phase::Interaction, "pick up the Apple")),
        ..Default::default()
    });
    let arity = |kind, t_: u32, budget: usize| {
        let o = PromptOptions {
            frame_budget: budget,
            ..opts()
        };
        build_prompt(&t, kind, &m, t_, &o).unwrap().frames.len()
    };
    for kind in [SkillKind::OR, SkillKind::OD, SkillKind::SAP, SkillKind::ASP, SkillKind::FSC] {
        assert_eq!(arity(kind, 5, 1), 1, "{kind}");
    }
    assert_eq!(arity(SkillKind::AG, 5, 1), 2);
    assert_eq!(arity(SkillKind::STP, 5, 1), 1);
    assert_eq!(arity(SkillKind::GRMain, 5, 3), 3);
    assert_eq!(arity(SkillKind::GRMain, 2, 30), 2);
    // Subgoal 2 began at step 4, so at t = 7 the window holds steps 4..=6 plus the pending frame.
    assert_eq!(arity(SkillKind::GRSub, 7, 1), 4);
    let p = build_prompt(&t, SkillKind::GRSub, &m, 7, &opts()).unwrap();
    assert!(p.text.contains("Step 4:") && p.text.contains("Step 6:") && !p.text.contains("Step 3:"));
}

#[test]
fn asp_and_fsc_accept_navigation_steps() {
    let t = TemplateSet::default();
    let m = memory(5);
    let nav = build_prompt(&t, SkillKind::FSC, &m, 2, &opts()).unwrap();
    assert!(nav.text.contains("Target box: none"));
    let inter = build_prompt(&t, SkillKind::ASP, &m, 5, &opts()).unwrap();
    assert!(inter.text.contains("Target box: [16, 12, 48, 44]"));
}

#[test]
fn recovery_and_feedback_sentences() {
    let t = TemplateSet::default();
    let m = memory(5);
    let failed = ActionChoice::new(ActionKind::PickupObject, Some("Apple".into()));
    let rec = PromptOptions {
        recovery_failed: Some(failed.clone()),
        ..opts()
    };
    let p = build_prompt(&t, SkillKind::SAP, &m, 5, &rec).unwrap();
    assert!(p.text.contains("The previous action PickupObject Apple failed. Choose a different action"));
    let fb = PromptOptions {
        feedback_failed: Some(failed),
        ..opts()
    };
    let p = build_prompt(&t, SkillKind::SAP, &m, 5, &fb).unwrap();
    assert!(p.text.ends_with("Environment feedback: PickupObject Apple failed."));
}

#[test]
fn prompts_are_deterministic() {
    let t = TemplateSet::default();
    let m = memory(8);
    for kind in SkillKind::ALL {
        let a = build_prompt(&t, kind, &m, 6, &opts()).unwrap();
        let b = build_prompt(&t, kind, &m, 6, &opts()).unwrap();
        assert_eq!(a, b);
        assert!(!a.text.contains('{'), "{kind} left a placeholder");
    }
}

#[test]
fn template_validation() {
    let bad = DEFAULT_TEMPLATES.replace("Target object: {object}\nGive", "Target object: {bogus}\nGive");
    assert!(matches!(TemplateSet::parse(&bad), Err(PromptError::Template(_))));
    let missing = DEFAULT_TEMPLATES.replace("[GRSub]", "[Other]");
    assert!(TemplateSet::parse(&missing).is_err());
}

#[test]
fn parse_examples() {
    assert_eq!(parse_response(SkillKind::ASP, "Yes").unwrap(), SkillOutput::YesNo(true));
    assert_eq!(parse_response(SkillKind::ASP, "  no.\n").unwrap(), SkillOutput::YesNo(false));
    assert_eq!(
        parse_response(SkillKind::OD, "[12, 4, 30, 22]").unwrap(),
        SkillOutput::Box(BoundingBox::new(12, 4, 30, 22).unwrap())
    );
    assert!(matches!(
        parse_response(SkillKind::SAP, "open the pod bay doors"),
        Err(PromptError::ParseFailure { kind: SkillKind::SAP, .. })
    ));
    assert!(parse_response(SkillKind::OD, "[3, 4, 3, 9]").is_err());
    assert!(parse_response(SkillKind::SAP, "MoveAhead Apple").is_err());
    assert_eq!(
        parse_response(SkillKind::OR, "None").unwrap(),
        SkillOutput::ObjectSet(BTreeSet::new())
    );
}

#[test]
fn render_examples() {
    let set = SkillOutput::ObjectSet(BTreeSet::from(["Mug".to_string(), "Apple".to_string()]));
    assert_eq!(render_answer(&set), "Apple, Mug");
    let c = SkillOutput::ActionChoice(ActionChoice::new(ActionKind::PickupObject, Some("Apple".into())));
    assert_eq!(render_answer(&c), "PickupObject Apple");
}

fn arb_name() -> impl Strategy<Value = String> {
    "[A-Z][a-zA-Z0-9]{0,10}"
}

fn arb_box() -> impl Strategy<Value = BoundingBox> {
    (0u32..60, 0u32..60, 1u32..40, 1u32..40).prop_map(|(x, y, w, h)| BoundingBox::new(x, y, x + w, y + h).unwrap())
}

fn arb_choice() -> impl Strategy<Value = ActionChoice> {
    (0usize..ActionKind::ALL.len(), arb_name()).prop_map(|(i, o)| {
        let a = ActionKind::ALL[i];
        ActionChoice::new(a, a.is_interaction().then_some(o))
    })
}

pub(crate) fn arb_output(kind: SkillKind) -> BoxedStrategy<SkillOutput> {
    match kind {
        SkillKind::OR => proptest::collection::btree_set(arb_name(), 0..5)
            .prop_map(SkillOutput::ObjectSet)
            .boxed(),
        SkillKind::OD => arb_box().prop_map(SkillOutput::Box).boxed(),
        SkillKind::STP => proptest::collection::vec("[a-z][a-z A-Z,]{0,20}[a-zA-Z]", 1..6)
            .prop_map(SkillOutput::SubgoalList)
            .boxed(),
        SkillKind::SAP => arb_choice().prop_map(SkillOutput::ActionChoice).boxed(),
        SkillKind::ASP | SkillKind::GRMain | SkillKind::GRSub => any::<bool>().prop_map(SkillOutput::YesNo).boxed(),
        SkillKind::FSC => "[A-Z][a-z ;,]{0,30}[a-z]\\.".prop_map(SkillOutput::Caption).boxed(),
        SkillKind::AG => (arb_choice(), arb_box())
            .prop_map(|(choice, b)| {
                let bbox = choice.action.is_interaction().then_some(b);
                SkillOutput::ActionWithBox { choice, bbox }
            })
            .boxed(),
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(1000))]

    #[test]
    fn parse_inverts_render(
        (kind, out) in (0usize..9).prop_flat_map(|i| {
            let kind = SkillKind::ALL[i];
            (Just(kind), arb_output(kind))
        })
    ) {
        let text = render_answer(&out);
        prop_assert_eq!(parse_response(kind, &text).unwrap(), out);
    }
}
