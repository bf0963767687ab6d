//! Skill instructions: prompt construction from memory and answer parsing.

mod grammar;

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use crate::model::{memory_window, ActionChoice, Frame, Memory, MemoryStep, PendingStep, SkillKind};

pub use grammar::{parse_response, render_answer};

pub const DEFAULT_TEMPLATES: &str = include_str!("templates.txt");

const RECOVERY: &str = "RECOVERY";
const FEEDBACK: &str = "FEEDBACK";

#[derive(Debug, thiserror::Error)]
pub enum PromptError {
    #[error("missing context field `{0}`")]
    MissingContext(&'static str),
    #[error("step {t} outside memory of length {len}")]
    StepOutOfRange { t: u32, len: usize },
    #[error("could not parse {kind} answer {text:?}")]
    ParseFailure { kind: SkillKind, text: String },
    #[error("template file: {0}")]
    Template(String),
    #[error("reading templates: {0}")]
    Io(#[from] std::io::Error),
}

/// Placeholders each section accepts.
fn allowed(section: &str) -> &'static [&'static str] {
    match section {
        "OR" | "AG" => &[],
        "OD" => &["subgoal", "action", "object"],
        "STP" | "GRMain" => &["main_goal", "memory"],
        "SAP" => &["main_goal", "subgoal", "pose", "visible", "memory"],
        "ASP" | "FSC" => &["action", "object", "bbox"],
        "GRSub" => &["subgoal", "memory"],
        RECOVERY | FEEDBACK => &["failed"],
        _ => &[],
    }
}

fn placeholders(text: &str) -> BTreeSet<&str> {
    let mut out = BTreeSet::new();
    let mut rest = text;
    while let Some(i) = rest.find('{') {
        let tail = &rest[i + 1..];
        match tail.find('}') {
            Some(j) => {
                out.insert(&tail[..j]);
                rest = &tail[j + 1..];
            }
            None => break,
        }
    }
    out
}

fn fill(template: &str, values: &[(&str, String)]) -> String {
    values
        .iter()
        .fold(template.to_string(), |acc, (k, v)| acc.replace(&format!("{{{k}}}"), v))
}

/// The full set of instruction templates, one per skill plus the recovery and
/// feedback sentences.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct TemplateSet {
    sections: BTreeMap<String, String>,
}

impl Default for TemplateSet {
    fn default() -> Self {
        Self::parse(DEFAULT_TEMPLATES).expect("bundled templates are valid")
    }
}

impl TemplateSet {
    pub fn parse(text: &str) -> Result<Self, PromptError> {
        let mut sections: BTreeMap<String, String> = BTreeMap::new();
        let mut current: Option<String> = None;
        for line in text.lines() {
            let trimmed = line.trim();
            if trimmed.starts_with('#') && current.is_none() {
                continue;
            }
            if let Some(name) = trimmed.strip_prefix('[').and_then(|s| s.strip_suffix(']')) {
                if !name.contains(' ') && !name.contains(',') {
                    if sections.contains_key(name) {
                        return Err(PromptError::Template(format!("duplicate section [{name}]")));
                    }
                    sections.insert(name.to_string(), String::new());
                    current = Some(name.to_string());
                    continue;
                }
            }
            match &current {
                Some(name) => {
                    let body = sections.get_mut(name).expect("section exists");
                    body.push_str(line);
                    body.push('\n');
                }
                None if trimmed.is_empty() => {}
                None => return Err(PromptError::Template(format!("text before first section: {trimmed}"))),
            }
        }
        for body in sections.values_mut() {
            *body = body.trim().to_string();
        }
        let required = SkillKind::ALL
            .iter()
            .map(|k| k.as_str())
            .chain([RECOVERY, FEEDBACK]);
        for name in required {
            let body = sections
                .get(name)
                .ok_or_else(|| PromptError::Template(format!("missing section [{name}]")))?;
            let found = placeholders(body);
            let want: BTreeSet<&str> = allowed(name).iter().copied().collect();
            if found != want {
                return Err(PromptError::Template(format!(
                    "section [{name}] uses placeholders {found:?}, expected {want:?}"
                )));
            }
        }
        if let Some(extra) = sections.keys().find(|k| {
            !SkillKind::ALL.iter().any(|s| s.as_str() == k.as_str()) && *k != RECOVERY && *k != FEEDBACK
        }) {
            return Err(PromptError::Template(format!("unknown section [{extra}]")));
        }
        Ok(Self { sections })
    }

    pub fn load(path: &Path) -> Result<Self, PromptError> {
        Self::parse(&std::fs::read_to_string(path)?)
    }

    pub fn section(&self, name: &str) -> &str {
        &self.sections[name]
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct PromptOptions {
    /// Window size for SAP history.
    pub k: u32,
    /// Frames carried by episode-level prompts (STP, GRMain), newest last.
    pub frame_budget: usize,
    /// Failed pair to name in a recovery re-prompt.
    pub recovery_failed: Option<ActionChoice>,
    /// Failed pair to report as plain environment feedback.
    pub feedback_failed: Option<ActionChoice>,
}

impl Default for PromptOptions {
    fn default() -> Self {
        Self {
            k: 4,
            frame_budget: 1,
            recovery_failed: None,
            feedback_failed: None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Prompt {
    pub text: String,
    pub frames: Vec<Frame>,
}

/// Fields of step `t`: a recorded step, or the pending one at `t = T + 1`.
fn step_context(memory: &Memory, t: u32) -> Result<PendingStep, PromptError> {
    let len = memory.steps.len();
    if t >= 1 && (t as usize) <= len {
        return Ok(PendingStep::from(&memory.steps[t as usize - 1]));
    }
    if t as usize == len + 1 {
        return Ok(memory.current.clone().unwrap_or_default());
    }
    Err(PromptError::StepOutOfRange { t, len })
}

fn names(visible: &BTreeSet<crate::model::ObjectRef>) -> String {
    let set: BTreeSet<&str> = visible.iter().map(|o| o.name.as_str()).collect();
    if set.is_empty() {
        "None".to_string()
    } else {
        set.into_iter().collect::<Vec<_>>().join(", ")
    }
}

pub fn describe_step(step: &MemoryStep) -> String {
    let action = match &step.bbox {
        Some(b) => format!("{} {b}", step.action),
        None => step.action.to_string(),
    };
    let result = if step.result.succeeded() { "succeeded" } else { "failed" };
    format!(
        "Step {}: at {}, saw {}, did {action}, {result}; subgoal: {}",
        step.step_index,
        step.pose,
        names(&step.visible),
        step.subgoal.text
    )
}

fn describe_steps(steps: &[MemoryStep]) -> String {
    if steps.is_empty() {
        "(none)".to_string()
    } else {
        steps.iter().map(describe_step).collect::<Vec<_>>().join("\n")
    }
}

/// Steps `1..t` that belong to the subgoal with `index`, counted back from `t - 1`.
pub fn subgoal_steps(memory: &Memory, t: u32, index: u32) -> &[MemoryStep] {
    let end = (t as usize).saturating_sub(1).min(memory.steps.len());
    let start = memory.steps[..end]
        .iter()
        .rposition(|s| s.subgoal.index != index)
        .map_or(0, |i| i + 1);
    &memory.steps[start..end]
}

fn frame_of(memory: &Memory, t: u32) -> Option<&Frame> {
    match memory.steps.get(t as usize - 1) {
        Some(s) => Some(&s.frame),
        None if t as usize == memory.steps.len() + 1 => memory.current.as_ref()?.frame.as_ref(),
        None => None,
    }
}

pub fn build_prompt(
    templates: &TemplateSet,
    kind: SkillKind,
    memory: &Memory,
    t: u32,
    options: &PromptOptions,
) -> Result<Prompt, PromptError> {
    let ctx = step_context(memory, t)?;
    let frame = ctx.frame.clone().ok_or(PromptError::MissingContext("frame"))?;
    let subgoal = || ctx.subgoal.as_ref().ok_or(PromptError::MissingContext("subgoal"));
    let action = || ctx.action.as_ref().ok_or(PromptError::MissingContext("action"));
    let main_goal = memory.goal.instruction.clone();
    let history = || &memory.steps[..(t as usize - 1).min(memory.steps.len())];
    let episode_frames = || {
        let mut frames: Vec<Frame> = history().iter().map(|s| s.frame.clone()).collect();
        frames.push(frame.clone());
        let keep = options.frame_budget.max(1);
        frames.split_off(frames.len().saturating_sub(keep))
    };

    let (values, frames): (Vec<(&str, String)>, Vec<Frame>) = match kind {
        SkillKind::OR => (vec![], vec![frame.clone()]),
        SkillKind::OD => {
            let sg = subgoal()?;
            let a = action()?;
            let object = a.target.as_ref().ok_or(PromptError::MissingContext("object"))?;
            (
                vec![
                    ("subgoal", sg.text.clone()),
                    ("action", a.kind.to_string()),
                    ("object", object.name.clone()),
                ],
                vec![frame.clone()],
            )
        }
        SkillKind::STP | SkillKind::GRMain => (
            vec![("main_goal", main_goal), ("memory", describe_steps(history()))],
            episode_frames(),
        ),
        SkillKind::SAP => {
            let sg = subgoal()?;
            let pose = ctx.pose.ok_or(PromptError::MissingContext("pose"))?;
            let visible = ctx.visible.as_ref().ok_or(PromptError::MissingContext("visible"))?;
            (
                vec![
                    ("main_goal", main_goal),
                    ("subgoal", sg.text.clone()),
                    ("pose", pose.to_string()),
                    ("visible", names(visible)),
                    ("memory", describe_steps(memory_window(memory, t, options.k))),
                ],
                vec![frame.clone()],
            )
        }
        SkillKind::ASP | SkillKind::FSC => {
            let a = action()?;
            let (object, bbox) = match &a.target {
                Some(o) => (
                    o.name.clone(),
                    ctx.bbox.ok_or(PromptError::MissingContext("bbox"))?.to_string(),
                ),
                None => ("none".to_string(), "none".to_string()),
            };
            (
                vec![("action", a.kind.to_string()), ("object", object), ("bbox", bbox)],
                vec![frame.clone()],
            )
        }
        SkillKind::AG => {
            let prev = if t >= 2 { frame_of(memory, t - 1) } else { None };
            let prev = prev.ok_or(PromptError::MissingContext("previous_frame"))?;
            (vec![], vec![prev.clone(), frame.clone()])
        }
        SkillKind::GRSub => {
            let sg = subgoal()?;
            let steps = subgoal_steps(memory, t, sg.index);
            let mut frames: Vec<Frame> = steps.iter().map(|s| s.frame.clone()).collect();
            frames.push(frame.clone());
            (
                vec![("subgoal", sg.text.clone()), ("memory", describe_steps(steps))],
                frames,
            )
        }
    };

    let mut text = fill(templates.section(kind.as_str()), &values);
    if kind == SkillKind::SAP {
        if let Some(failed) = &options.feedback_failed {
            text.push_str("\n\n");
            text.push_str(&fill(templates.section(FEEDBACK), &[("failed", failed.to_string())]));
        }
        if let Some(failed) = &options.recovery_failed {
            text.push_str("\n\n");
            text.push_str(&fill(templates.section(RECOVERY), &[("failed", failed.to_string())]));
        }
    }
    Ok(Prompt { text, frames })
}

#[cfg(test)]
mod tests;
