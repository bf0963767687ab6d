use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::DatasetError;
use crate::client::{GenerationRequest, GroundTruthHint, ModelBackend};
use crate::model::SkillInstance;
use crate::prompts::parse_response;
use crate::reward::{reward_with, RewardScales};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GrpoFilterConfig {
    pub samples_per_instance: u32,
    /// Keep instances whose normalized reward std exceeds this.
    pub tau: f64,
    pub temperature: f64,
    /// Keep at most this many selected instances, highest std first.
    pub cap: Option<usize>,
    pub max_tokens: u32,
    pub seed: u64,
}

impl Default for GrpoFilterConfig {
    fn default() -> Self {
        Self {
            samples_per_instance: 8,
            tau: 0.2,
            temperature: 1.0,
            cap: None,
            max_tokens: 256,
            seed: 0,
        }
    }
}

impl GrpoFilterConfig {
    pub fn validate(&self) -> Result<(), DatasetError> {
        if self.samples_per_instance < 2 {
            return Err(DatasetError::Config("samples_per_instance must be at least 2".into()));
        }
        if !(0.0..=1.0).contains(&self.tau) {
            return Err(DatasetError::Config(format!("tau {} outside [0, 1]", self.tau)));
        }
        if !self.temperature.is_finite() || self.temperature < 0.0 {
            return Err(DatasetError::Config(format!("temperature {}", self.temperature)));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SampleStats {
    pub instance_id: String,
    pub rewards: Vec<f64>,
    /// Samples that earned the full reward.
    pub correct_count: u32,
    pub normalized_std: f64,
}

pub fn population_std(xs: &[f64]) -> f64 {
    if xs.is_empty() {
        return 0.0;
    }
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    (xs.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / n).sqrt()
}

/// Population std divided by the width of the reward scale.
pub fn normalized_std(rewards: &[f64], range: f64) -> f64 {
    population_std(rewards) / range
}

/// Indices of the stats with `normalized_std > tau`, in input order. With a cap, only
/// the `cap` largest survive (earlier index wins ties).
pub fn select_by_variance(stats: &[SampleStats], tau: f64, cap: Option<usize>) -> Vec<usize> {
    let mut picked: Vec<usize> = (0..stats.len()).filter(|&i| stats[i].normalized_std > tau).collect();
    if let Some(cap) = cap.filter(|&c| c < picked.len()) {
        let mut ranked = picked.clone();
        ranked.sort_by(|&a, &b| stats[b].normalized_std.total_cmp(&stats[a].normalized_std).then(a.cmp(&b)));
        ranked.truncate(cap);
        ranked.sort_unstable();
        picked = ranked;
    }
    picked
}

fn instance_seed(base: u64, id: &str) -> u64 {
    id.bytes().fold(base ^ 0xcbf2_9ce4_8422_2325, |h, b| {
        (h ^ u64::from(b)).wrapping_mul(0x100_0000_01b3)
    })
}

fn sample_stats(
    instance: &SkillInstance,
    backend: &dyn ModelBackend,
    scales: &RewardScales,
    config: &GrpoFilterConfig,
) -> Result<SampleStats, DatasetError> {
    let backend_err = |source| DatasetError::Backend {
        instance_id: instance.id.clone(),
        source,
    };
    let req = GenerationRequest {
        prompt_text: instance.prompt_text.clone(),
        frames: instance.frames.clone(),
        max_tokens: config.max_tokens,
        temperature: config.temperature,
        sample_count: config.samples_per_instance,
        seed: Some(instance_seed(config.seed, &instance.id)),
        hint: Some(GroundTruthHint {
            kind: instance.kind,
            answer: instance.ground_truth.clone(),
            subgoal_index: 0,
            attempt: 1,
            failed: None,
            avoid: Vec::new(),
        }),
    };
    let completions = backend.generate(&req).map_err(backend_err)?;
    let scale = scales.scale(instance.kind);
    let mut rewards = Vec::with_capacity(completions.len());
    for c in &completions {
        // An unparseable sample earns nothing.
        let r = match parse_response(instance.kind, &c.text) {
            Ok(out) => reward_with(instance, &out, scales)?.r_total,
            Err(_) => 0.0,
        };
        rewards.push(r);
    }
    Ok(SampleStats {
        instance_id: instance.id.clone(),
        correct_count: rewards.iter().filter(|&&r| r >= scale - 1e-12).count() as u32,
        normalized_std: normalized_std(&rewards, scale),
        rewards,
    })
}

/// Samples every instance, scores the samples, and keeps the high-variance ones.
pub fn filter_grpo(
    instances: &[SkillInstance],
    backend: &dyn ModelBackend,
    scales: &RewardScales,
    config: &GrpoFilterConfig,
) -> Result<(Vec<SkillInstance>, Vec<SampleStats>), DatasetError> {
    config.validate()?;
    scales.validate()?;
    let stats: Vec<SampleStats> = instances
        .par_iter()
        .map(|inst| sample_stats(inst, backend, scales, config))
        .collect::<Result<_, _>>()?;
    let selected = select_by_variance(&stats, config.tau, config.cap)
        .into_iter()
        .map(|i| instances[i].clone())
        .collect();
    Ok((selected, stats))
}
