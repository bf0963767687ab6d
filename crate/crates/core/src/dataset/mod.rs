//! Trajectories (expert and random exploration), per-skill instance emission,
//! scene splits, and the variance filter that picks GRPO training instances.

mod emit;
mod grpo;
pub mod io;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::agent::labels;
use crate::client::ClientError;
use crate::model::{Action, ActionKind, Frame, Memory, MemoryStep, ObjectRef, Phase, Pose, Subgoal};
use crate::prompts::PromptError;
use crate::reward::RewardError;
use crate::sim::{goal_satisfied, state_diff_caption, Scenario, SimError, Simulator, WorldState};

pub use emit::build_skill_dataset;
pub use grpo::{filter_grpo, normalized_std, population_std, select_by_variance, GrpoFilterConfig, SampleStats};

#[derive(Debug, thiserror::Error)]
pub enum DatasetError {
    #[error("no trajectory supports any requested skill")]
    EmptyOutput,
    #[error("need at least 2 scenes to split, got {0}")]
    TooFewScenes(usize),
    #[error("holdout fraction {0} must lie strictly between 0 and 1")]
    BadFraction(f64),
    #[error("instance {instance_id}: {source}")]
    Backend { instance_id: String, source: ClientError },
    #[error("trajectory {id}: {message}")]
    InvalidTrajectory { id: String, message: String },
    #[error("invalid config: {0}")]
    Config(String),
    #[error(transparent)]
    Sim(#[from] SimError),
    #[error(transparent)]
    Prompt(#[from] PromptError),
    #[error(transparent)]
    Reward(#[from] RewardError),
    #[error("{path}: {message}")]
    Io { path: String, message: String },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum TrajectorySource {
    Expert,
    RandomExploration,
    Ingested,
}

/// An executed episode with the labels needed to emit skill instances.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub id: String,
    pub scene_id: String,
    pub source: TrajectorySource,
    /// Steps with ground-truth `v_t`, `b_t` and `r_t`; the goal is `memory.goal`.
    pub memory: Memory,
    /// The plan followed, empty for random exploration.
    #[serde(default)]
    pub subgoals: Vec<Subgoal>,
    /// `captions[i]` describes what step `i + 1` changed.
    #[serde(default)]
    pub captions: Vec<String>,
    /// Observation after the last step.
    pub final_frame: Frame,
    pub final_pose: Pose,
    pub goal_satisfied: bool,
    /// Entry `i` tells whether the goal held after `i` steps (length T + 1 when known).
    #[serde(default)]
    pub goal_progress: Vec<bool>,
}

impl Trajectory {
    pub fn len(&self) -> usize {
        self.memory.steps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.memory.steps.is_empty()
    }

    pub fn failures(&self) -> usize {
        self.memory.steps.iter().filter(|s| !s.result.succeeded()).count()
    }

    /// Whether the goal held after `steps` steps, if recorded.
    pub fn goal_after(&self, steps: usize) -> Option<bool> {
        if steps == self.len() {
            return Some(self.goal_satisfied);
        }
        self.goal_progress.get(steps).copied()
    }

    pub fn validate(&self) -> Result<(), DatasetError> {
        let bad = |message: String| {
            Err(DatasetError::InvalidTrajectory {
                id: self.id.clone(),
                message,
            })
        };
        if self.source == TrajectorySource::Expert && !self.goal_satisfied {
            return bad("expert trajectory does not reach its goal".into());
        }
        for (i, s) in self.memory.steps.iter().enumerate() {
            if s.step_index as usize != i + 1 {
                return bad(format!("step {} has index {}", i + 1, s.step_index));
            }
            if let Err(e) = s.validate() {
                return bad(format!("step {}: {e}", i + 1));
            }
        }
        if !self.goal_progress.is_empty() && self.goal_progress.len() != self.len() + 1 {
            return bad(format!(
                "goal_progress has {} entries for {} steps",
                self.goal_progress.len(),
                self.len()
            ));
        }
        Ok(())
    }
}

/// Records steps while a trajectory is executed.
struct Recorder<'a> {
    sim: &'a Simulator,
    scenario: &'a Scenario,
    state: WorldState,
    frame: Frame,
    memory: Memory,
    captions: Vec<String>,
    progress: Vec<bool>,
}

impl<'a> Recorder<'a> {
    fn start(sim: &'a Simulator, scenario: &'a Scenario) -> Result<Self, DatasetError> {
        let (state, frame) = sim.reset(&scenario.scene, &scenario.task)?;
        let progress = vec![goal_satisfied(&state, &scenario.task).all];
        Ok(Self {
            sim,
            scenario,
            state,
            frame,
            memory: Memory::new(scenario.task.clone()),
            captions: Vec::new(),
            progress,
        })
    }

    fn record(&mut self, action: Action, bbox: Option<crate::model::BoundingBox>, subgoal: &Subgoal) -> Result<(), DatasetError> {
        let visible = labels::visible_classes(self.sim, &self.state)
            .into_iter()
            .map(ObjectRef::class)
            .collect();
        let out = self.sim.step(&self.state, &action, bbox.as_ref());
        self.captions.push(state_diff_caption(&self.state, &out.state));
        let step = MemoryStep {
            step_index: self.memory.next_index(),
            frame: std::mem::replace(&mut self.frame, out.frame),
            visible,
            pose: self.state.agent,
            bbox: if action.is_interaction() { bbox } else { None },
            action,
            result: out.result,
            subgoal: subgoal.clone(),
        };
        self.memory.push(step).map_err(|e| DatasetError::InvalidTrajectory {
            id: self.scenario.scene.scene_id.clone(),
            message: e.to_string(),
        })?;
        self.state = out.state;
        self.progress.push(goal_satisfied(&self.state, &self.scenario.task).all);
        Ok(())
    }

    fn finish(self, id: String, source: TrajectorySource, subgoals: Vec<Subgoal>) -> Trajectory {
        Trajectory {
            id,
            scene_id: self.scenario.scene.scene_id.clone(),
            source,
            memory: self.memory,
            subgoals,
            captions: self.captions,
            final_frame: self.frame,
            final_pose: self.state.agent,
            goal_satisfied: *self.progress.last().expect("reset status recorded"),
            goal_progress: self.progress,
        }
    }
}

/// Replays the simulator's expert plan with ground-truth labels.
pub fn expert_trajectory(sim: &Simulator, scenario: &Scenario) -> Result<Trajectory, DatasetError> {
    let mut rec = Recorder::start(sim, scenario)?;
    let plan = sim.expert_plan(&rec.state, &scenario.task)?;
    for sg in &plan.subgoals {
        for pa in &sg.actions {
            rec.record(pa.action.clone(), pa.bbox, &sg.subgoal)?;
        }
    }
    let traj = rec.finish(
        format!("{}-expert", scenario.scene.scene_id),
        TrajectorySource::Expert,
        plan.subgoal_list(),
    );
    traj.validate()?;
    Ok(traj)
}

pub const EXPLORE_SUBGOAL: &str = "explore the room";

/// Uniformly random actions from the reset state. Interaction targets are drawn from
/// the visible objects and carry their ground-truth boxes; with nothing in view a
/// drawn interaction is replaced by a random navigation action.
pub fn random_exploration(
    sim: &Simulator,
    scenario: &Scenario,
    episodes: u32,
    steps_per_episode: u32,
    seed: u64,
) -> Result<Vec<Trajectory>, DatasetError> {
    if episodes == 0 || steps_per_episode == 0 {
        return Err(DatasetError::Config("episodes and steps must be at least 1".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let subgoal = Subgoal::new(1, Phase::Interaction, EXPLORE_SUBGOAL);
    let navigation: Vec<ActionKind> = ActionKind::ALL.into_iter().filter(|k| k.is_navigation()).collect();
    let mut out = Vec::with_capacity(episodes as usize);
    for ep in 0..episodes {
        let mut rec = Recorder::start(sim, scenario)?;
        for _ in 0..steps_per_episode {
            let mut kind = ActionKind::ALL[rng.gen_range(0..ActionKind::ALL.len())];
            let visible = sim.visible_objects(&rec.state);
            let (action, bbox) = if kind.is_interaction() {
                match visible.choose(&mut rng) {
                    Some(v) => (Action::interact(kind, ObjectRef::class(v.object.name.clone())), Some(v.bbox)),
                    None => {
                        kind = *navigation.choose(&mut rng).expect("navigation kinds exist");
                        (Action::navigate(kind), None)
                    }
                }
            } else {
                (Action::navigate(kind), None)
            };
            rec.record(action, bbox, &subgoal)?;
        }
        out.push(rec.finish(
            format!("{}-explore-{ep:03}", scenario.scene.scene_id),
            TrajectorySource::RandomExploration,
            Vec::new(),
        ));
    }
    Ok(out)
}

/// Deterministic holdout split; both halves keep the input order.
pub fn split_scenes<T: Clone>(scenes: &[T], holdout_fraction: f64, seed: u64) -> Result<(Vec<T>, Vec<T>), DatasetError> {
    if scenes.len() < 2 {
        return Err(DatasetError::TooFewScenes(scenes.len()));
    }
    if !(holdout_fraction > 0.0 && holdout_fraction < 1.0) {
        return Err(DatasetError::BadFraction(holdout_fraction));
    }
    let n_eval = (holdout_fraction * scenes.len() as f64).round() as usize;
    let mut order: Vec<usize> = (0..scenes.len()).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let mut held = vec![false; scenes.len()];
    for &i in &order[..n_eval] {
        held[i] = true;
    }
    let (mut train, mut eval) = (Vec::new(), Vec::new());
    for (s, h) in scenes.iter().zip(held) {
        if h {
            eval.push(s.clone());
        } else {
            train.push(s.clone());
        }
    }
    Ok((train, eval))
}

#[cfg(test)]
mod tests;
