use std::collections::{BTreeMap, BTreeSet};

use proptest::prelude::*;

use super::io::{read_jsonl, write_jsonl};
use super::*;
use crate::agent::labels;
use crate::client::{ClientError, Completion, FnBackend, GenerationRequest, ScriptedOracle};
use crate::model::{ActionResult, BoundingBox, SkillInstance, SkillKind, SkillOutput, Split, TaskType};
use crate::prompts::{PromptOptions, TemplateSet};
use crate::reward::RewardScales;
use crate::sim::scenegen::generate_scenario;
use crate::sim::SimConfig;

fn sim() -> Simulator {
    Simulator::new(SimConfig::default())
}

fn all_kinds() -> BTreeSet<SkillKind> {
    SkillKind::ALL.into_iter().collect()
}

fn build(trajs: &[Trajectory], kinds: &BTreeSet<SkillKind>) -> Result<Vec<SkillInstance>, DatasetError> {
    build_skill_dataset(trajs, kinds, Split::Train, &TemplateSet::default(), &PromptOptions::default())
}

fn counts(instances: &[SkillInstance]) -> BTreeMap<SkillKind, usize> {
    let mut m = BTreeMap::new();
    for i in instances {
        *m.entry(i.kind).or_default() += 1;
    }
    m
}

/// Closed-form emission counts, written independently of the emitter.
fn expected_counts(t: &Trajectory, kinds: &BTreeSet<SkillKind>) -> BTreeMap<SkillKind, usize> {
    let steps = &t.memory.steps;
    let n = steps.len();
    let interactions = steps.iter().filter(|s| s.action.is_interaction()).count();
    let random = t.source == TrajectorySource::RandomExploration;
    let planned = !random && !t.subgoals.is_empty();
    let ag = (1..n).filter(|&i| steps[i - 1].result.succeeded()).count();
    let subgoals_with_steps = t
        .subgoals
        .iter()
        .filter(|sg| steps.iter().any(|s| s.subgoal.index == sg.index))
        .count();
    let all = [
        (SkillKind::OR, n),
        (SkillKind::OD, interactions),
        (SkillKind::SAP, if random { 0 } else { interactions }),
        (SkillKind::ASP, interactions),
        (SkillKind::STP, usize::from(planned && n > 0)),
        (SkillKind::FSC, n.saturating_sub(1).min(t.captions.len())),
        (SkillKind::AG, ag),
        (SkillKind::GRMain, if n == 0 { 0 } else { 1 + usize::from(t.goal_satisfied && n >= 2) }),
        (SkillKind::GRSub, if planned { 2 * subgoals_with_steps } else { 0 }),
    ];
    all.into_iter().filter(|(k, c)| kinds.contains(k) && *c > 0).collect()
}

fn frame(seed: u32) -> Frame {
    let px: Vec<u8> = (0..12u32).map(|i| (seed.wrapping_mul(31).wrapping_add(i * 7) % 251) as u8).collect();
    Frame::from_pixels(2, 2, px).unwrap()
}

fn bx() -> BoundingBox {
    BoundingBox::new(16, 12, 48, 44).unwrap()
}

/// A hand-made trajectory: `shape[i] = (interaction, succeeded, subgoal index)`.
fn synthetic(shape: &[(bool, bool, u32)], source: TrajectorySource, satisfied: bool) -> Trajectory {
    let task = generate_scenario(TaskType::Pick, 0).unwrap().task;
    let max_sg = shape.iter().map(|s| s.2).max().unwrap_or(0);
    let subgoals: Vec<Subgoal> = (1..=max_sg)
        .map(|i| Subgoal::new(i, Phase::Interaction, format!("subgoal {i}")))
        .collect();
    let mut memory = Memory::new(task);
    for (i, &(interaction, ok, sg)) in shape.iter().enumerate() {
        let action = if interaction {
            Action::interact(ActionKind::PickupObject, ObjectRef::class("Apple"))
        } else {
            Action::navigate(ActionKind::MoveAhead)
        };
        memory
            .push(MemoryStep {
                step_index: i as u32 + 1,
                frame: frame(i as u32),
                visible: [ObjectRef::class("Apple")].into(),
                pose: Pose::new(0, 0, crate::model::Heading::North),
                bbox: interaction.then(bx),
                action,
                result: if ok { ActionResult::Succeeded } else { ActionResult::Failed },
                subgoal: subgoals.get(sg as usize - 1).cloned().unwrap_or_else(|| Subgoal::new(1, Phase::Interaction, EXPLORE_SUBGOAL)),
            })
            .unwrap();
    }
    let n = shape.len();
    let mut progress = vec![false; n + 1];
    progress[n] = satisfied;
    Trajectory {
        id: format!("syn-{n}"),
        scene_id: "syn".into(),
        source,
        memory,
        subgoals: if source == TrajectorySource::RandomExploration { Vec::new() } else { subgoals },
        captions: (0..n).map(|i| format!("Caption {i}.")).collect(),
        final_frame: frame(10_000),
        final_pose: Pose::new(0, 0, crate::model::Heading::North),
        goal_satisfied: satisfied,
        goal_progress: progress,
    }
}

#[test]
fn twelve_step_example_counts() {
    let mut shape = vec![(false, true, 1); 9];
    shape.extend([(true, true, 2); 3]);
    let traj = synthetic(&shape, TrajectorySource::Expert, true);
    let kinds: BTreeSet<SkillKind> = SkillKind::ALL.into_iter().filter(|k| *k != SkillKind::AG).collect();
    let got = counts(&build(std::slice::from_ref(&traj), &kinds).unwrap());
    let want: BTreeMap<SkillKind, usize> = [
        (SkillKind::OR, 12),
        (SkillKind::OD, 3),
        (SkillKind::SAP, 3),
        (SkillKind::ASP, 3),
        (SkillKind::STP, 1),
        (SkillKind::FSC, 11),
        (SkillKind::GRMain, 2),
        (SkillKind::GRSub, 4),
    ]
    .into();
    assert_eq!(got, want);
    let ag = counts(&build(&[traj], &[SkillKind::AG].into()).unwrap());
    assert_eq!(ag[&SkillKind::AG], 11);
}

#[test]
fn expert_trajectories_obey_the_count_rules() {
    let sim = sim();
    let kinds = all_kinds();
    let mut trajs = Vec::new();
    for seed in 0..50u64 {
        let tt = TaskType::ALL[seed as usize % 6];
        let sc = generate_scenario(tt, 1000 + seed).unwrap();
        trajs.push(expert_trajectory(&sim, &sc).unwrap());
    }
    for t in &trajs {
        assert!(t.goal_satisfied);
        let got = counts(&build(std::slice::from_ref(t), &kinds).unwrap());
        assert_eq!(got, expected_counts(t, &kinds), "{}", t.id);
    }
    let total = counts(&build(&trajs, &kinds).unwrap());
    let mut want: BTreeMap<SkillKind, usize> = BTreeMap::new();
    for t in &trajs {
        for (k, c) in expected_counts(t, &kinds) {
            *want.entry(k).or_default() += c;
        }
    }
    assert_eq!(total, want);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn synthetic_trajectories_obey_the_count_rules(
        raw in prop::collection::vec((any::<bool>(), prop::bool::weighted(0.8), 0u32..3), 1..25),
        random in any::<bool>(),
        satisfied in any::<bool>(),
        kind_mask in 1u32..512,
    ) {
        // Contiguous subgoal blocks: bump the index whenever the draw says so.
        let mut sg = 1;
        let shape: Vec<(bool, bool, u32)> = raw
            .iter()
            .enumerate()
            .map(|(i, &(inter, ok, bump))| {
                if i > 0 && bump == 0 {
                    sg += 1;
                }
                (inter, ok, sg)
            })
            .collect();
        let source = if random { TrajectorySource::RandomExploration } else { TrajectorySource::Ingested };
        let traj = synthetic(&shape, source, satisfied);
        let kinds: BTreeSet<SkillKind> = SkillKind::ALL
            .into_iter()
            .enumerate()
            .filter(|(i, _)| kind_mask & (1 << i) != 0)
            .map(|(_, k)| k)
            .collect();
        let want = expected_counts(&traj, &kinds);
        match build(std::slice::from_ref(&traj), &kinds) {
            Ok(instances) => prop_assert_eq!(counts(&instances), want),
            Err(DatasetError::EmptyOutput) => prop_assert!(want.is_empty()),
            Err(e) => return Err(TestCaseError::fail(e.to_string())),
        }
    }
}

/// Replays the first `n` steps of a trajectory from the reset state.
fn replay(sim: &Simulator, sc: &Scenario, traj: &Trajectory, n: usize) -> WorldState {
    let (mut state, _) = sim.reset(&sc.scene, &sc.task).unwrap();
    for s in &traj.memory.steps[..n] {
        state = sim.step(&state, &s.action, s.bbox.as_ref()).state;
    }
    state
}

#[test]
fn labels_match_the_simulator_on_replay() {
    let sim = sim();
    let kinds = all_kinds();
    for (i, tt) in TaskType::ALL.into_iter().enumerate() {
        let sc = generate_scenario(tt, 40 + i as u64).unwrap();
        let mut trajs = vec![expert_trajectory(&sim, &sc).unwrap()];
        trajs.extend(random_exploration(&sim, &sc, 2, 15, i as u64).unwrap());
        for traj in &trajs {
            let instances = build(std::slice::from_ref(traj), &kinds).unwrap();
            for inst in &instances {
                let t: usize = inst.id.split(':').nth(2).unwrap()[..3].parse().unwrap();
                let before = replay(&sim, &sc, traj, t - 1);
                match (&inst.kind, &inst.ground_truth) {
                    (SkillKind::OR, SkillOutput::ObjectSet(s)) => {
                        assert_eq!(s, &labels::visible_classes(&sim, &before), "{}", inst.id)
                    }
                    (SkillKind::OD, SkillOutput::Box(b)) => {
                        let step = &traj.memory.steps[t - 1];
                        let name = &step.action.target.as_ref().unwrap().name;
                        let vis = sim.visible_objects(&before);
                        assert!(vis.iter().any(|v| &v.object.name == name && v.bbox == *b), "{}", inst.id);
                    }
                    (SkillKind::ASP, SkillOutput::YesNo(y)) => {
                        let step = &traj.memory.steps[t - 1];
                        let out = sim.step(&before, &step.action, step.bbox.as_ref());
                        assert_eq!(*y, out.result.succeeded(), "{}", inst.id);
                    }
                    (SkillKind::FSC, SkillOutput::Caption(c)) => {
                        let step = &traj.memory.steps[t - 1];
                        let after = sim.step(&before, &step.action, step.bbox.as_ref()).state;
                        assert_eq!(c, &state_diff_caption(&before, &after), "{}", inst.id);
                    }
                    (SkillKind::GRMain, SkillOutput::YesNo(y)) => {
                        assert_eq!(*y, goal_satisfied(&before, &sc.task).all, "{}", inst.id)
                    }
                    _ => {}
                }
            }
        }
    }
}

#[test]
fn random_exploration_shape_and_failure_mix() {
    let sim = sim();
    let sc = generate_scenario(TaskType::Clean, 9).unwrap();
    let trajs = random_exploration(&sim, &sc, 10, 20, 1).unwrap();
    assert_eq!(trajs.len(), 10);
    assert!(trajs.iter().all(|t| t.len() == 20 && t.source == TrajectorySource::RandomExploration));
    assert!(trajs.iter().map(Trajectory::failures).sum::<usize>() > 0);
    let asp = build(&trajs, &[SkillKind::ASP].into()).unwrap();
    // Labels are copies of the recorded results.
    let recorded: Vec<bool> = trajs
        .iter()
        .flat_map(|t| t.memory.steps.iter())
        .filter(|s| s.action.is_interaction())
        .map(|s| s.result.succeeded())
        .collect();
    let labels: Vec<bool> = asp
        .iter()
        .map(|i| matches!(i.ground_truth, SkillOutput::YesNo(true)))
        .collect();
    assert_eq!(labels, recorded);
    assert!(build(&trajs, &[SkillKind::SAP, SkillKind::STP, SkillKind::GRSub].into()).is_err());
    assert!(random_exploration(&sim, &sc, 0, 5, 1).is_err());
}

#[test]
fn exploration_batches_carry_both_asp_labels() {
    let sim = sim();
    let mut trajs = Vec::new();
    for (i, tt) in TaskType::ALL.into_iter().enumerate() {
        let sc = generate_scenario(tt, 2).unwrap();
        trajs.extend(random_exploration(&sim, &sc, 10, 30, i as u64).unwrap());
    }
    let asp = build(&trajs, &[SkillKind::ASP].into()).unwrap();
    let yes = asp.iter().filter(|i| i.ground_truth == SkillOutput::YesNo(true)).count();
    assert!(yes > 0 && yes < asp.len(), "{yes} of {}", asp.len());
}

#[test]
fn same_seed_gives_identical_jsonl() {
    let sim = sim();
    let sc = generate_scenario(TaskType::Cool, 2).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let mut files = Vec::new();
    for run in 0..2 {
        let mut trajs = random_exploration(&sim, &sc, 3, 12, 77).unwrap();
        trajs.push(expert_trajectory(&sim, &sc).unwrap());
        let instances = build(&trajs, &all_kinds()).unwrap();
        let (tp, ip) = (dir.path().join(format!("t{run}.jsonl")), dir.path().join(format!("i{run}.jsonl")));
        write_jsonl(&tp, &trajs).unwrap();
        write_jsonl(&ip, &instances).unwrap();
        files.push((std::fs::read(tp).unwrap(), std::fs::read(ip).unwrap()));
    }
    assert_eq!(files[0], files[1]);
    let other = random_exploration(&sim, &sc, 3, 12, 78).unwrap();
    let p = dir.path().join("other.jsonl");
    write_jsonl(&p, &other).unwrap();
    assert_ne!(std::fs::read(&p).unwrap()[..], files[0].0[..]);
    let back: Vec<Trajectory> = read_jsonl(&dir.path().join("t0.jsonl")).unwrap();
    assert_eq!(back.len(), 4);
    assert_eq!(back[3].memory.steps.len(), expert_trajectory(&sim, &sc).unwrap().len());
}

#[test]
fn empty_input_is_rejected() {
    assert!(matches!(build(&[], &all_kinds()), Err(DatasetError::EmptyOutput)));
}

#[test]
fn scene_split_examples() {
    let scenes: Vec<u32> = (0..108).collect();
    let (train, eval) = split_scenes(&scenes, 31.0 / 108.0, 7).unwrap();
    assert_eq!((train.len(), eval.len()), (77, 31));
    let mut union: Vec<u32> = train.iter().chain(&eval).copied().collect();
    union.sort_unstable();
    assert_eq!(union, scenes);
    assert_eq!(split_scenes(&scenes, 31.0 / 108.0, 7).unwrap(), (train.clone(), eval.clone()));
    assert_ne!(split_scenes(&scenes, 31.0 / 108.0, 8).unwrap().1, eval);
    assert!(matches!(split_scenes(&[1], 0.5, 0), Err(DatasetError::TooFewScenes(1))));
    assert!(matches!(split_scenes(&scenes, 1.0, 0), Err(DatasetError::BadFraction(_))));
}

#[test]
fn normalized_std_spot_values() {
    let four = [1.0, 1.0, 1.0, 1.0, 0.0, 0.0, 0.0, 0.0];
    assert!((normalized_std(&four, 1.0) - 0.5).abs() < 1e-12);
    let one = [1.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0];
    assert!((normalized_std(&one, 1.0) - (7.0f64 / 64.0).sqrt()).abs() < 1e-12);
    assert!((normalized_std(&one, 1.0) - 0.3307).abs() < 1e-4);
    assert_eq!(normalized_std(&[1.0; 8], 1.0), 0.0);
    // A scale of 2 halves the statistic.
    assert!((normalized_std(&[2.0, 2.0, 0.0, 0.0], 2.0) - 0.5).abs() < 1e-12);
}

fn stats(std: f64) -> SampleStats {
    SampleStats {
        instance_id: String::new(),
        rewards: Vec::new(),
        correct_count: 0,
        normalized_std: std,
    }
}

proptest! {
    #[test]
    fn selection_is_exactly_the_threshold_set(
        matrix in prop::collection::vec(prop::collection::vec(prop::sample::select(vec![0.0, 0.25, 0.5, 1.0]), 8), 1..40),
        tau in 0.0f64..0.5,
    ) {
        let all: Vec<SampleStats> = matrix.iter().map(|r| stats(normalized_std(r, 1.0))).collect();
        // Brute force: mean and variance by explicit two-pass sums.
        let brute: Vec<usize> = matrix
            .iter()
            .enumerate()
            .filter(|(_, r)| {
                let mean: f64 = r.iter().sum::<f64>() / 8.0;
                let var: f64 = r.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / 8.0;
                var.sqrt() > tau
            })
            .map(|(i, _)| i)
            .collect();
        prop_assert_eq!(select_by_variance(&all, tau, None), brute);
    }
}

#[test]
fn cap_keeps_the_highest_variance_in_input_order() {
    let all: Vec<SampleStats> = [0.3, 0.5, 0.1, 0.45, 0.5, 0.25].into_iter().map(stats).collect();
    assert_eq!(select_by_variance(&all, 0.2, None), vec![0, 1, 3, 4, 5]);
    assert_eq!(select_by_variance(&all, 0.2, Some(3)), vec![1, 3, 4]);
    assert_eq!(select_by_variance(&all, 0.2, Some(1)), vec![1]);
}

fn asp_instance(id: &str, yes_count: usize) -> SkillInstance {
    SkillInstance {
        id: id.into(),
        kind: SkillKind::ASP,
        prompt_text: format!("yes={yes_count}"),
        frames: vec![frame(1)],
        ground_truth: SkillOutput::YesNo(true),
        scene_id: "s".into(),
        split: Split::Train,
    }
}

#[test]
fn filter_grpo_on_scripted_reward_patterns() {
    let backend = FnBackend::new("pattern", |req: &GenerationRequest| {
        let yes: u32 = req.prompt_text.trim_start_matches("yes=").parse().unwrap();
        Ok((0..req.sample_count)
            .map(|i| Completion::uniform(if i < yes { "Yes" } else { "No" }, -0.1))
            .collect())
    });
    let instances: Vec<SkillInstance> = [4, 8, 1, 0, 7].iter().enumerate().map(|(i, &y)| asp_instance(&format!("a{i}"), y)).collect();
    let (selected, st) = filter_grpo(&instances, &backend, &RewardScales::default(), &GrpoFilterConfig::default()).unwrap();
    let ids: Vec<&str> = selected.iter().map(|i| i.id.as_str()).collect();
    assert_eq!(ids, ["a0", "a2", "a4"]);
    assert_eq!(st.iter().map(|s| s.correct_count).collect::<Vec<_>>(), [4, 8, 1, 0, 7]);
    assert!((st[0].normalized_std - 0.5).abs() < 1e-12);
    assert_eq!(st[1].normalized_std, 0.0);
    assert!(st.iter().all(|s| s.rewards.len() == 8));
}

#[test]
fn filter_grpo_drops_everything_the_oracle_gets_right() {
    let sim = sim();
    let sc = generate_scenario(TaskType::Heat, 3).unwrap();
    let instances = build(&[expert_trajectory(&sim, &sc).unwrap()], &all_kinds()).unwrap();
    let (selected, st) = filter_grpo(
        &instances,
        &ScriptedOracle::default(),
        &RewardScales::default(),
        &GrpoFilterConfig::default(),
    )
    .unwrap();
    assert!(selected.is_empty());
    assert!(st.iter().all(|s| s.correct_count == 8 && s.normalized_std == 0.0));
}

#[test]
fn filter_grpo_reports_the_failing_instance() {
    let backend = FnBackend::new("down", |_: &GenerationRequest| Err(ClientError::Transport("refused".into())));
    let err = filter_grpo(&[asp_instance("x7", 1)], &backend, &RewardScales::default(), &GrpoFilterConfig::default()).unwrap_err();
    assert!(matches!(err, DatasetError::Backend { ref instance_id, .. } if instance_id == "x7"));
    let bad = GrpoFilterConfig {
        samples_per_instance: 1,
        ..GrpoFilterConfig::default()
    };
    assert!(filter_grpo(&[], &backend, &RewardScales::default(), &bad).is_err());
}
