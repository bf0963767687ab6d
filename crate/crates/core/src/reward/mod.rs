//! Rule-based rewards for skill responses.
//!
//! Each instance belongs to one skill, so exactly one of the four components can be
//! nonzero. Components are on a `[0, scale]` range where the scale comes from a
//! per-skill table (1.0 by default).

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::model::{BoundingBox, CoreSkill, SkillInstance, SkillKind, SkillOutput};
use crate::sim::NO_CHANGE_CAPTION;

#[derive(Debug, thiserror::Error)]
pub enum RewardError {
    #[error("{kind} instance cannot be scored against a {variant} response")]
    VariantMismatch { kind: SkillKind, variant: &'static str },
    #[error("invalid reward scale for {0}: must be finite and positive")]
    BadScale(SkillKind),
}

/// Intersection over union of two boxes, exact in pixel counts.
pub fn iou(a: &BoundingBox, b: &BoundingBox) -> f64 {
    let union = a.union_area(b);
    if union == 0 {
        0.0
    } else {
        a.intersection_area(b) as f64 / union as f64
    }
}

fn lower_set<'a>(s: impl IntoIterator<Item = &'a String>) -> BTreeSet<String> {
    s.into_iter().map(|x| x.to_lowercase()).collect()
}

/// Jaccard index of two name sets, compared case-insensitively. Two empty sets score 1.
pub fn jaccard(pred: &BTreeSet<String>, gt: &BTreeSet<String>) -> f64 {
    let (p, g) = (lower_set(pred), lower_set(gt));
    let union = p.union(&g).count();
    if union == 0 {
        return 1.0;
    }
    p.intersection(&g).count() as f64 / union as f64
}

/// Lowercase, single-spaced, without a trailing period.
pub fn canonical_text(s: &str) -> String {
    let joined = s.split_whitespace().collect::<Vec<_>>().join(" ").to_lowercase();
    joined.strip_suffix('.').unwrap_or(&joined).trim_end().to_string()
}

pub fn lcs_len<T: PartialEq>(a: &[T], b: &[T]) -> usize {
    let mut row = vec![0usize; b.len() + 1];
    for x in a {
        let mut diag = 0;
        for (j, y) in b.iter().enumerate() {
            let up = row[j + 1];
            row[j + 1] = if x == y { diag + 1 } else { up.max(row[j]) };
            diag = up;
        }
    }
    row[b.len()]
}

/// 1 on an exact match of canonical subgoals, otherwise LCS length over `|gt|`.
pub fn sequence_order_score(pred: &[String], gt: &[String]) -> f64 {
    let p: Vec<String> = pred.iter().map(|s| canonical_text(s)).collect();
    let g: Vec<String> = gt.iter().map(|s| canonical_text(s)).collect();
    if p == g {
        return 1.0;
    }
    if g.is_empty() {
        return 0.0;
    }
    lcs_len(&p, &g) as f64 / g.len() as f64
}

/// Whether a caption asserts that something changed.
pub fn caption_implies_change(caption: &str) -> bool {
    canonical_text(caption) != canonical_text(NO_CHANGE_CAPTION)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RewardBreakdown {
    pub r_op: f64,
    pub r_tp: f64,
    pub r_au: f64,
    pub r_gr: f64,
    pub r_total: f64,
    pub active_skill: SkillKind,
}

impl RewardBreakdown {
    fn single(kind: SkillKind, value: f64) -> Self {
        let mut b = RewardBreakdown {
            r_op: 0.0,
            r_tp: 0.0,
            r_au: 0.0,
            r_gr: 0.0,
            r_total: 0.0,
            active_skill: kind,
        };
        match kind.core_skill() {
            CoreSkill::ObjectPerception => b.r_op = value,
            CoreSkill::TaskPlanning => b.r_tp = value,
            CoreSkill::ActionUnderstanding => b.r_au = value,
            CoreSkill::GoalRecognition => b.r_gr = value,
        }
        b.r_total = b.r_op + b.r_tp + b.r_au + b.r_gr;
        b
    }
}

/// Maximum reward per skill. Missing skills use 1.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct RewardScales {
    #[serde(default)]
    pub scales: BTreeMap<SkillKind, f64>,
}

impl RewardScales {
    pub fn scale(&self, kind: SkillKind) -> f64 {
        self.scales.get(&kind).copied().unwrap_or(1.0)
    }

    pub fn validate(&self) -> Result<(), RewardError> {
        for (k, v) in &self.scales {
            if !v.is_finite() || *v <= 0.0 {
                return Err(RewardError::BadScale(*k));
            }
        }
        Ok(())
    }
}

/// Unscaled score of a response in `[0, 1]`.
pub fn raw_score(kind: SkillKind, gt: &SkillOutput, response: &SkillOutput) -> Result<f64, RewardError> {
    let mismatch = || RewardError::VariantMismatch {
        kind,
        variant: response.variant_name(),
    };
    if !response.matches_kind(kind) || !gt.matches_kind(kind) {
        return Err(mismatch());
    }
    let v = match (gt, response) {
        (SkillOutput::ObjectSet(g), SkillOutput::ObjectSet(p)) => jaccard(p, g),
        (SkillOutput::Box(g), SkillOutput::Box(p)) => iou(p, g),
        (SkillOutput::SubgoalList(g), SkillOutput::SubgoalList(p)) => sequence_order_score(p, g),
        (SkillOutput::ActionChoice(g), SkillOutput::ActionChoice(p)) => f64::from(u8::from(p.matches(g))),
        (SkillOutput::YesNo(g), SkillOutput::YesNo(p)) => f64::from(u8::from(p == g)),
        (SkillOutput::Caption(g), SkillOutput::Caption(p)) => {
            f64::from(u8::from(caption_implies_change(p) == caption_implies_change(g)))
        }
        (
            SkillOutput::ActionWithBox { choice: gc, bbox: gb },
            SkillOutput::ActionWithBox { choice: pc, bbox: pb },
        ) => {
            let pair = f64::from(u8::from(pc.matches(gc)));
            let boxes = match (gb, pb) {
                (Some(g), Some(p)) => iou(p, g),
                (None, None) => 1.0,
                _ => 0.0,
            };
            0.5 * pair + 0.5 * boxes
        }
        _ => return Err(mismatch()),
    };
    Ok(v)
}

pub fn reward_with(
    instance: &SkillInstance,
    response: &SkillOutput,
    scales: &RewardScales,
) -> Result<RewardBreakdown, RewardError> {
    let v = raw_score(instance.kind, &instance.ground_truth, response)?;
    Ok(RewardBreakdown::single(instance.kind, v * scales.scale(instance.kind)))
}

pub fn reward(instance: &SkillInstance, response: &SkillOutput) -> Result<RewardBreakdown, RewardError> {
    reward_with(instance, response, &RewardScales::default())
}
