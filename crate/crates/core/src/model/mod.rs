//! Shared domain vocabulary: boxes, poses, frames, actions, memory, tasks and skill records.

mod action;
mod frame;
mod geometry;
mod memory;
mod skill;
mod task;

pub use action::{Action, ActionKind, ObjectRef};
pub use frame::{raster_digest, Frame};
pub use geometry::{BoundingBox, Heading, Pose};
pub use memory::{memory_window, ActionResult, Memory, MemoryStep, PendingStep, Phase, Subgoal};
pub use skill::{ActionChoice, CoreSkill, FrameArity, SkillInstance, SkillKind, SkillOutput, Split};
pub use task::{GoalCondition, Task, TaskType};

#[derive(Debug, thiserror::Error)]
pub enum ModelError {
    #[error("empty bounding box [{x_min}, {y_min}, {x_max}, {y_max}]")]
    EmptyBox {
        x_min: u32,
        y_min: u32,
        x_max: u32,
        y_max: u32,
    },
    #[error("raster has {actual} bytes, expected {expected}")]
    RasterSize { expected: usize, actual: usize },
    #[error("unknown action kind `{0}`")]
    UnknownAction(String),
    #[error("unknown task type `{0}`")]
    UnknownTaskType(String),
    #[error("unknown skill kind `{0}`")]
    UnknownSkill(String),
    #[error("{0} requires a target object")]
    MissingTarget(ActionKind),
    #[error("{0} takes no target object")]
    UnexpectedTarget(ActionKind),
    #[error("task has no goal conditions")]
    NoGoalConditions,
    #[error("goal conditions do not fit the {0} task schema")]
    GoalSchema(TaskType),
    #[error("step index {actual}, expected {expected}")]
    StepIndex { expected: u32, actual: u32 },
    #[error("bounding box presence does not match action kind {0}")]
    BoxPresence(ActionKind),
    #[error("{kind} instance carries a {variant} answer")]
    VariantMismatch { kind: SkillKind, variant: &'static str },
    #[error("{kind} instance carries {frames} frames")]
    FrameArity { kind: SkillKind, frames: usize },
}
