//! Skill benchmark over instance datasets and task-success aggregation over episodes.

mod similarity;
mod tasks;

use std::collections::BTreeMap;
use std::fmt::Write as _;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::client::{ClientError, GenerationRequest, GroundTruthHint, ModelBackend};
use crate::model::{SkillInstance, SkillKind, SkillOutput};
use crate::prompts::parse_response;
use crate::reward::{caption_implies_change, iou, raw_score};

pub use similarity::{cosine, token_jaccard, PlanningSimilarity, SimilaritySource};
pub use tasks::{evaluate_tasks, TaskReport, TypeStats};

#[derive(Debug, thiserror::Error)]
pub enum EvalError {
    #[error("instance {instance_id}: {source}")]
    Backend { instance_id: String, source: ClientError },
    #[error("no episodes to evaluate")]
    NoEpisodes,
}

/// Benchmark metrics in report order.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Metric {
    Grounding,
    Detection,
    Planning,
    StepByStep,
    ActionPrediction,
    ActionGrounding,
    GrMain,
    GrSub,
    FutureCaption,
}

impl Metric {
    pub const ALL: [Metric; 9] = [
        Metric::Grounding,
        Metric::Detection,
        Metric::Planning,
        Metric::StepByStep,
        Metric::ActionPrediction,
        Metric::ActionGrounding,
        Metric::GrMain,
        Metric::GrSub,
        Metric::FutureCaption,
    ];

    pub fn of(kind: SkillKind) -> Metric {
        match kind {
            SkillKind::OR => Metric::Grounding,
            SkillKind::OD => Metric::Detection,
            SkillKind::STP => Metric::Planning,
            SkillKind::SAP => Metric::StepByStep,
            SkillKind::ASP => Metric::ActionPrediction,
            SkillKind::AG => Metric::ActionGrounding,
            SkillKind::GRMain => Metric::GrMain,
            SkillKind::GRSub => Metric::GrSub,
            SkillKind::FSC => Metric::FutureCaption,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Metric::Grounding => "grounding",
            Metric::Detection => "detection",
            Metric::Planning => "planning",
            Metric::StepByStep => "step_by_step",
            Metric::ActionPrediction => "action_prediction",
            Metric::ActionGrounding => "action_grounding",
            Metric::GrMain => "gr_main",
            Metric::GrSub => "gr_sub",
            Metric::FutureCaption => "future_caption",
        }
    }

    /// Planning is reported as a raw similarity, everything else as a percentage.
    pub fn scale(self) -> f64 {
        if self == Metric::Planning {
            1.0
        } else {
            100.0
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EvalConfig {
    /// Minimum IoU for an action-grounding box to count.
    pub ag_iou_threshold: f64,
    pub max_tokens: u32,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            ag_iou_threshold: 0.5,
            max_tokens: 256,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct InstanceResult {
    pub instance_id: String,
    pub kind: SkillKind,
    pub response: String,
    pub parsed: bool,
    /// Per-instance value in `[0, 1]` (cosine for planning may be negative).
    pub value: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricSummary {
    pub mean: f64,
    pub count: usize,
    pub unparseable: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SkillReport {
    /// Only metrics with at least one instance appear.
    pub metrics: BTreeMap<Metric, MetricSummary>,
    pub planning_similarity: String,
}

impl SkillReport {
    pub fn mean(&self, metric: Metric) -> Option<f64> {
        self.metrics.get(&metric).map(|m| m.mean)
    }

    pub fn to_markdown(&self) -> String {
        let present: Vec<Metric> = Metric::ALL.into_iter().filter(|m| self.metrics.contains_key(m)).collect();
        let mut s = String::new();
        let _ = writeln!(s, "| {} |", present.iter().map(|m| m.as_str()).collect::<Vec<_>>().join(" | "));
        let _ = writeln!(s, "|{}", "---|".repeat(present.len()));
        let vals: Vec<String> = present.iter().map(|m| fmt_metric(*m, self.metrics[m].mean)).collect();
        let _ = writeln!(s, "| {} |", vals.join(" | "));
        let _ = writeln!(s, "\nPlanning similarity: {}", self.planning_similarity);
        s
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from("metric,mean,count,unparseable\n");
        for m in Metric::ALL {
            if let Some(v) = self.metrics.get(&m) {
                let _ = writeln!(s, "{},{},{},{}", m.as_str(), fmt_metric(m, v.mean), v.count, v.unparseable);
            }
        }
        s
    }
}

fn fmt_metric(m: Metric, v: f64) -> String {
    if m == Metric::Planning {
        format!("{v:.3}")
    } else {
        format!("{v:.2}")
    }
}

fn planning_text(steps: &[String]) -> String {
    steps.iter().map(|s| s.trim()).collect::<Vec<_>>().join("\n")
}

/// Value of one parsed answer against its ground truth.
pub fn instance_value(
    instance: &SkillInstance,
    response: &SkillOutput,
    config: &EvalConfig,
    planning: &PlanningSimilarity,
) -> (f64, Option<SimilaritySource>) {
    match (&instance.ground_truth, response) {
        (SkillOutput::SubgoalList(g), SkillOutput::SubgoalList(p)) => {
            let (v, src) = planning.score(&planning_text(p), &planning_text(g));
            (v, Some(src))
        }
        (
            SkillOutput::ActionWithBox { choice: gc, bbox: gb },
            SkillOutput::ActionWithBox { choice: pc, bbox: pb },
        ) => {
            let box_ok = match (gb, pb) {
                (Some(g), Some(p)) => iou(p, g) >= config.ag_iou_threshold,
                (None, None) => true,
                _ => false,
            };
            (f64::from(u8::from(pc.matches(gc) && box_ok)), None)
        }
        (SkillOutput::Caption(g), SkillOutput::Caption(p)) => (
            f64::from(u8::from(caption_implies_change(p) == caption_implies_change(g))),
            None,
        ),
        (gt, p) => (raw_score(instance.kind, gt, p).unwrap_or(0.0), None),
    }
}

fn ask(instance: &SkillInstance, backend: &dyn ModelBackend, config: &EvalConfig) -> Result<String, EvalError> {
    let req = GenerationRequest {
        max_tokens: config.max_tokens,
        hint: Some(GroundTruthHint {
            kind: instance.kind,
            answer: instance.ground_truth.clone(),
            subgoal_index: 0,
            attempt: 1,
            failed: None,
            avoid: Vec::new(),
        }),
        ..GenerationRequest::new(instance.prompt_text.clone(), instance.frames.clone())
    };
    let mut out = backend.generate(&req).map_err(|source| EvalError::Backend {
        instance_id: instance.id.clone(),
        source,
    })?;
    Ok(if out.is_empty() { String::new() } else { out.swap_remove(0).text })
}

/// One temperature-0 completion per instance, scored per metric.
pub fn evaluate_skills(
    dataset: &[SkillInstance],
    backend: &dyn ModelBackend,
    planning: &PlanningSimilarity,
    config: &EvalConfig,
) -> Result<(SkillReport, Vec<InstanceResult>), EvalError> {
    let responses: Vec<String> = dataset
        .par_iter()
        .map(|i| ask(i, backend, config))
        .collect::<Result<_, _>>()?;
    let mut source: Option<SimilaritySource> = None;
    let mut results = Vec::with_capacity(dataset.len());
    for (inst, text) in dataset.iter().zip(responses) {
        let (parsed, value) = match parse_response(inst.kind, &text) {
            Ok(out) => {
                let (v, src) = instance_value(inst, &out, config, planning);
                // A fallback anywhere taints the label for the whole report.
                if let Some(src) = src {
                    if source.as_ref().is_none_or(|s| matches!(s, SimilaritySource::Embedding { .. })) {
                        source = Some(src);
                    }
                }
                (true, v)
            }
            Err(_) => (false, 0.0),
        };
        results.push(InstanceResult {
            instance_id: inst.id.clone(),
            kind: inst.kind,
            response: text,
            parsed,
            value,
        });
    }
    Ok((summarize(&results, source), results))
}

fn summarize(results: &[InstanceResult], source: Option<SimilaritySource>) -> SkillReport {
    let mut sums: BTreeMap<Metric, (f64, usize, usize)> = BTreeMap::new();
    for r in results {
        let e = sums.entry(Metric::of(r.kind)).or_default();
        e.0 += r.value;
        e.1 += 1;
        e.2 += usize::from(!r.parsed);
    }
    let metrics = sums
        .into_iter()
        .map(|(m, (sum, count, unparseable))| {
            (
                m,
                MetricSummary {
                    mean: m.scale() * sum / count as f64,
                    count,
                    unparseable,
                },
            )
        })
        .collect();
    SkillReport {
        metrics,
        planning_similarity: source
            .unwrap_or(SimilaritySource::TokenJaccard { reason: None })
            .label(),
    }
}
