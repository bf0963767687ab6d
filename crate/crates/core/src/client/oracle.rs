//! Deterministic stand-in policy that answers from ground truth, optionally
//! corrupted by a fault schedule.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::model::{ActionChoice, BoundingBox, SkillKind, SkillOutput};
use crate::prompts::render_answer;
use crate::reward::iou;

use super::{ClientError, Completion, FinishReason, GenerationRequest, GroundTruthHint, ModelBackend, TokenLogprob};

/// A class name no generated scene contains.
pub const ABSENT_OBJECT: &str = "Teapot";

/// Splits text into tokens whose concatenation is the text: leading whitespace
/// attaches to the following word, and each punctuation mark is its own token.
pub fn tokenize(text: &str) -> Vec<String> {
    let mut out = Vec::new();
    let mut cur = String::new();
    let mut body = false;
    let mut last_alnum = false;
    for c in text.chars() {
        if c.is_whitespace() {
            if body {
                out.push(std::mem::take(&mut cur));
                body = false;
            }
            cur.push(c);
        } else if c.is_alphanumeric() {
            if body && !last_alnum {
                out.push(std::mem::take(&mut cur));
            }
            cur.push(c);
            body = true;
            last_alnum = true;
            continue;
        } else {
            if body {
                out.push(std::mem::take(&mut cur));
            }
            cur.push(c);
            body = true;
        }
        last_alnum = false;
    }
    if !cur.is_empty() {
        out.push(cur);
    }
    out
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Corruption {
    /// OD answers a box well away from the target.
    WrongBox,
    /// SAP repeats the pair that just failed.
    RepeatFailedAction,
    /// SAP names an object that is not in the scene.
    WrongObject,
}

impl Corruption {
    fn applies_to(self, kind: SkillKind) -> bool {
        match self {
            Corruption::WrongBox => kind == SkillKind::OD,
            Corruption::RepeatFailedAction | Corruption::WrongObject => kind == SkillKind::SAP,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct FaultRule {
    /// Subgoal the rule fires in; `None` fires in every subgoal.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub subgoal_index: Option<u32>,
    pub attempt: u32,
    pub corruption: Corruption,
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct FaultSchedule {
    pub rules: Vec<FaultRule>,
}

impl FaultSchedule {
    pub fn none() -> Self {
        Self::default()
    }

    /// One corruption on the first attempt of every subgoal.
    pub fn first_attempt(corruption: Corruption) -> Self {
        Self {
            rules: vec![FaultRule {
                subgoal_index: None,
                attempt: 1,
                corruption,
            }],
        }
    }

    pub fn validate(&self) -> Result<(), ClientError> {
        if self.rules.iter().any(|r| r.attempt == 0) {
            return Err(ClientError::InvalidRequest("fault attempts start at 1".into()));
        }
        Ok(())
    }

    pub fn active(&self, hint: &GroundTruthHint) -> Option<Corruption> {
        self.rules
            .iter()
            .find(|r| {
                r.attempt == hint.attempt
                    && r.subgoal_index.is_none_or(|i| i == hint.subgoal_index)
                    && r.corruption.applies_to(hint.kind)
            })
            .map(|r| r.corruption)
    }
}

/// A box inside a `w x h` raster with IoU < 0.5 against `gt` and every box in `avoid`.
/// Prefers `gt` shifted by its own size; falls back to single corner pixels.
pub(crate) fn off_target_box(gt: &BoundingBox, w: u32, h: u32, avoid: &[BoundingBox]) -> BoundingBox {
    let (bw, bh) = (gt.width(), gt.height());
    let shifts = [
        (gt.x_max + bw <= w).then_some((gt.x_max, gt.y_min)),
        (gt.x_min >= bw).then(|| (gt.x_min - bw, gt.y_min)),
        (gt.y_max + bh <= h).then_some((gt.x_min, gt.y_max)),
        (gt.y_min >= bh).then(|| (gt.x_min, gt.y_min - bh)),
    ];
    let (w, h) = (w.max(2), h.max(2));
    let mut candidates: Vec<BoundingBox> = shifts
        .into_iter()
        .flatten()
        .map(|(x, y)| BoundingBox::new(x, y, x + bw, y + bh).expect("nonempty"))
        .collect();
    // Too large to move aside: a quarter of it overlaps by at most 1/4.
    if bw >= 2 && bh >= 2 {
        candidates.push(BoundingBox::new(gt.x_min, gt.y_min, gt.x_min + bw / 2, gt.y_min + bh / 2).expect("nonempty"));
    }
    for (x, y) in [(0, 0), (w - 1, h - 1), (w - 1, 0), (0, h - 1)] {
        candidates.push(BoundingBox::new(x, y, x + 1, y + 1).expect("nonempty"));
    }
    let misses = |c: &BoundingBox| std::iter::once(gt).chain(avoid).all(|b| iou(c, b) < 0.5);
    let last = *candidates.last().expect("corners are always candidates");
    candidates.into_iter().find(|c| misses(c)).unwrap_or(last)
}

/// Answers every request with the hint's ground truth, in the parser's grammar.
///
/// With `noise > 0` and a positive temperature, token log-probabilities are drawn
/// from `[-noise, 0)`; the text itself never changes except through faults.
#[derive(Clone, Debug, Default)]
pub struct ScriptedOracle {
    pub faults: FaultSchedule,
    pub noise: f64,
}

impl ScriptedOracle {
    pub fn new(faults: FaultSchedule) -> Self {
        Self { faults, noise: 0.0 }
    }

    pub fn with_noise(mut self, noise: f64) -> Self {
        self.noise = noise;
        self
    }

    /// The answer this oracle gives for a hint, after faults.
    pub fn answer(&self, hint: &GroundTruthHint, raster: (u32, u32)) -> SkillOutput {
        let Some(c) = self.faults.active(hint) else {
            return hint.answer.clone();
        };
        match (c, &hint.answer) {
            (Corruption::WrongBox, SkillOutput::Box(b)) => {
                SkillOutput::Box(off_target_box(b, raster.0, raster.1, &hint.avoid))
            }
            (Corruption::WrongObject, SkillOutput::ActionChoice(ch)) if ch.object.is_some() => {
                SkillOutput::ActionChoice(ActionChoice::new(ch.action, Some(ABSENT_OBJECT.to_string())))
            }
            (Corruption::RepeatFailedAction, SkillOutput::ActionChoice(_)) => match &hint.failed {
                Some(f) => SkillOutput::ActionChoice(f.clone()),
                None => hint.answer.clone(),
            },
            _ => hint.answer.clone(),
        }
    }

    fn sample_seed(request: &GenerationRequest, index: u32) -> u64 {
        let mut h = 0xcbf2_9ce4_8422_2325u64;
        let mut eat = |bytes: &[u8]| {
            for b in bytes {
                h = (h ^ u64::from(*b)).wrapping_mul(0x100_0000_01b3);
            }
        };
        eat(request.prompt_text.as_bytes());
        for f in &request.frames {
            eat(f.hash().as_bytes());
        }
        eat(&request.seed.unwrap_or(0).to_le_bytes());
        eat(&index.to_le_bytes());
        h
    }
}

impl ModelBackend for ScriptedOracle {
    fn name(&self) -> &str {
        "oracle"
    }

    fn generate(&self, request: &GenerationRequest) -> Result<Vec<Completion>, ClientError> {
        request.validate()?;
        let hint = request
            .hint
            .as_ref()
            .ok_or_else(|| ClientError::Unsupported("the scripted oracle needs a ground-truth hint".into()))?;
        let raster = request
            .frames
            .first()
            .map_or((64, 64), |f| (f.width(), f.height()));
        let text = render_answer(&self.answer(hint, raster));
        let tokens = tokenize(&text);
        let noisy = self.noise > 0.0 && request.temperature > 0.0;
        let out = (0..request.sample_count)
            .map(|i| {
                let mut rng = ChaCha8Rng::seed_from_u64(Self::sample_seed(request, i));
                Completion {
                    text: text.clone(),
                    token_logprobs: tokens
                        .iter()
                        .map(|t| TokenLogprob {
                            token: t.clone(),
                            logprob: if noisy { -self.noise * rng.gen::<f64>() } else { 0.0 },
                        })
                        .collect(),
                    finish_reason: FinishReason::Stop,
                }
            })
            .collect();
        Ok(out)
    }

    fn score(&self, request: &GenerationRequest, target: &str) -> Result<f64, ClientError> {
        let single = GenerationRequest {
            sample_count: 1,
            ..request.clone()
        };
        let c = self.generate(&single)?.remove(0);
        if c.text.trim() == target.trim() {
            Ok(super::nll(&c.token_logprobs))
        } else {
            Err(ClientError::Unsupported(format!("oracle only scores its own answer, not {target:?}")))
        }
    }
}
