use std::collections::BTreeSet;

use rayon::prelude::*;

use super::{DatasetError, Trajectory, TrajectorySource};
use crate::model::{ActionChoice, Memory, PendingStep, SkillInstance, SkillKind, SkillOutput, Split};
use crate::prompts::{build_prompt, PromptOptions, TemplateSet};

struct Emitter<'a> {
    traj: &'a Trajectory,
    kinds: &'a BTreeSet<SkillKind>,
    split: Split,
    templates: &'a TemplateSet,
    options: &'a PromptOptions,
    out: Vec<SkillInstance>,
}

impl Emitter<'_> {
    fn push(&mut self, kind: SkillKind, memory: &Memory, t: u32, tag: &str, gt: SkillOutput) -> Result<(), DatasetError> {
        if !self.kinds.contains(&kind) {
            return Ok(());
        }
        let prompt = build_prompt(self.templates, kind, memory, t, self.options)?;
        let instance = SkillInstance {
            id: format!("{}:{}:{t:03}{tag}", self.traj.id, kind.as_str()),
            kind,
            prompt_text: prompt.text,
            frames: prompt.frames,
            ground_truth: gt,
            scene_id: self.traj.scene_id.clone(),
            split: self.split,
        };
        instance.validate().map_err(|e| DatasetError::InvalidTrajectory {
            id: self.traj.id.clone(),
            message: format!("{}: {e}", instance.id),
        })?;
        self.out.push(instance);
        Ok(())
    }

    /// Memory holding steps `1..=len` and an observation-only current step.
    fn snapshot(&self, len: usize, subgoal_index: Option<usize>) -> Memory {
        let steps = &self.traj.memory.steps;
        let (frame, pose) = match steps.get(len) {
            Some(s) => (s.frame.clone(), s.pose),
            None => (self.traj.final_frame.clone(), self.traj.final_pose),
        };
        let pending = PendingStep {
            frame: Some(frame),
            pose: Some(pose),
            subgoal: subgoal_index.map(|i| self.traj.subgoals[i].clone()),
            ..PendingStep::default()
        };
        self.traj.memory.truncated(len, Some(pending))
    }

    fn run(&mut self) -> Result<(), DatasetError> {
        let traj = self.traj;
        let memory = &traj.memory;
        let steps = &memory.steps;
        let total = steps.len();
        let planned = traj.source != TrajectorySource::RandomExploration && !traj.subgoals.is_empty();

        if planned && total > 0 {
            let texts = traj.subgoals.iter().map(|s| s.text.clone()).collect();
            self.push(SkillKind::STP, memory, 1, "", SkillOutput::SubgoalList(texts))?;
        }
        for (i, step) in steps.iter().enumerate() {
            let t = i as u32 + 1;
            let names = step.visible.iter().map(|o| o.name.clone()).collect();
            self.push(SkillKind::OR, memory, t, "", SkillOutput::ObjectSet(names))?;
            if let Some(bbox) = step.bbox.filter(|_| step.action.is_interaction()) {
                self.push(SkillKind::OD, memory, t, "", SkillOutput::Box(bbox))?;
                if traj.source != TrajectorySource::RandomExploration {
                    self.push(SkillKind::SAP, memory, t, "", SkillOutput::ActionChoice(ActionChoice::of(&step.action)))?;
                }
                self.push(SkillKind::ASP, memory, t, "", SkillOutput::YesNo(step.result.succeeded()))?;
            }
            if i + 1 < total {
                if let Some(caption) = traj.captions.get(i) {
                    self.push(SkillKind::FSC, memory, t, "", SkillOutput::Caption(caption.clone()))?;
                }
            }
            if i >= 1 && steps[i - 1].result.succeeded() {
                let prev = &steps[i - 1];
                let gt = SkillOutput::ActionWithBox {
                    choice: ActionChoice::of(&prev.action),
                    bbox: prev.bbox,
                };
                self.push(SkillKind::AG, memory, t, "", gt)?;
            }
        }
        self.goal_recognition(planned)
    }

    fn goal_recognition(&mut self, planned: bool) -> Result<(), DatasetError> {
        let traj = self.traj;
        let total = traj.len();
        if total == 0 {
            return Ok(());
        }
        let end = self.snapshot(total, None);
        self.push(SkillKind::GRMain, &end, total as u32 + 1, "-end", SkillOutput::YesNo(traj.goal_satisfied))?;
        if traj.goal_satisfied && total >= 2 {
            let half = total / 2;
            let label = traj.goal_after(half).unwrap_or(false);
            let prefix = self.snapshot(half, None);
            self.push(SkillKind::GRMain, &prefix, half as u32 + 1, "-prefix", SkillOutput::YesNo(label))?;
        }
        if !planned {
            return Ok(());
        }
        for (j, sg) in traj.subgoals.iter().enumerate() {
            let idx: Vec<usize> = (0..total)
                .filter(|&i| traj.memory.steps[i].subgoal.index == sg.index)
                .collect();
            let (Some(&first), Some(&last)) = (idx.first(), idx.last()) else {
                continue;
            };
            let done = self.snapshot(last + 1, Some(j));
            self.push(SkillKind::GRSub, &done, last as u32 + 2, "-done", SkillOutput::YesNo(true))?;
            let mid = first + (last - first).div_ceil(2);
            let partial = self.snapshot(mid, Some(j));
            self.push(SkillKind::GRSub, &partial, mid as u32 + 1, "-mid", SkillOutput::YesNo(false))?;
        }
        Ok(())
    }
}

/// Emits the requested skill instances from every trajectory, in input order.
///
/// Per trajectory of T steps: OR for every step; OD, SAP and ASP for interaction
/// steps (no SAP from random exploration); FSC for steps `1..T-1`; AG at `t >= 2`
/// after a successful step; one STP at `t = 1`; GRMain at `T + 1`, plus a prefix
/// snapshot at `T/2 + 1` when the goal was reached and `T >= 2`; and for each planned
/// subgoal one GRSub right after it ends and one partway through it.
pub fn build_skill_dataset(
    trajectories: &[Trajectory],
    kinds: &BTreeSet<SkillKind>,
    split: Split,
    templates: &TemplateSet,
    options: &PromptOptions,
) -> Result<Vec<SkillInstance>, DatasetError> {
    if trajectories.is_empty() {
        return Err(DatasetError::EmptyOutput);
    }
    let per_traj: Vec<Vec<SkillInstance>> = trajectories
        .par_iter()
        .map(|traj| {
            traj.validate()?;
            let mut e = Emitter {
                traj,
                kinds,
                split,
                templates,
                options,
                out: Vec::new(),
            };
            e.run()?;
            Ok(e.out)
        })
        .collect::<Result<_, DatasetError>>()?;
    let out: Vec<SkillInstance> = per_traj.into_iter().flatten().collect();
    if out.is_empty() {
        return Err(DatasetError::EmptyOutput);
    }
    Ok(out)
}
