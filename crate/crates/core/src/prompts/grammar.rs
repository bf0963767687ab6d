//! Answer grammar shared by datasets, the scripted oracle and the response parser.

use std::collections::BTreeSet;

use crate::model::{ActionChoice, ActionKind, BoundingBox, SkillKind, SkillOutput};

use super::PromptError;

const NONE: &str = "None";

/// Canonical text of an answer. `parse_response` inverts it for well-formed values.
pub fn render_answer(output: &SkillOutput) -> String {
    match output {
        SkillOutput::ObjectSet(set) if set.is_empty() => NONE.to_string(),
        SkillOutput::ObjectSet(set) => set.iter().cloned().collect::<Vec<_>>().join(", "),
        SkillOutput::Box(b) => b.to_string(),
        SkillOutput::SubgoalList(items) => items
            .iter()
            .enumerate()
            .map(|(i, s)| format!("{}. {}", i + 1, s))
            .collect::<Vec<_>>()
            .join("\n"),
        SkillOutput::ActionChoice(c) => c.to_string(),
        SkillOutput::YesNo(true) => "Yes".to_string(),
        SkillOutput::YesNo(false) => "No".to_string(),
        SkillOutput::Caption(text) => text.clone(),
        SkillOutput::ActionWithBox { choice, bbox } => match bbox {
            Some(b) => format!("{choice} {b}"),
            None => choice.to_string(),
        },
    }
}

pub fn parse_response(kind: SkillKind, text: &str) -> Result<SkillOutput, PromptError> {
    let fail = || PromptError::ParseFailure {
        kind,
        text: text.to_string(),
    };
    let body = text.trim();
    let out = match kind {
        SkillKind::OR => SkillOutput::ObjectSet(parse_object_set(body).ok_or_else(fail)?),
        SkillKind::OD => SkillOutput::Box(parse_box(strip_period(body)).ok_or_else(fail)?),
        SkillKind::STP => SkillOutput::SubgoalList(parse_subgoals(body).ok_or_else(fail)?),
        SkillKind::SAP => SkillOutput::ActionChoice(parse_choice(strip_period(body)).ok_or_else(fail)?),
        SkillKind::ASP | SkillKind::GRMain | SkillKind::GRSub => {
            SkillOutput::YesNo(parse_yes_no(body).ok_or_else(fail)?)
        }
        SkillKind::FSC if body.is_empty() => return Err(fail()),
        SkillKind::FSC => SkillOutput::Caption(body.to_string()),
        SkillKind::AG => {
            let body = strip_period(body);
            let (choice, bbox) = match body.find('[') {
                Some(i) => (&body[..i], Some(parse_box(&body[i..]).ok_or_else(fail)?)),
                None => (body, None),
            };
            SkillOutput::ActionWithBox {
                choice: parse_choice(choice.trim()).ok_or_else(fail)?,
                bbox,
            }
        }
    };
    Ok(out)
}

fn strip_period(s: &str) -> &str {
    s.strip_suffix('.').unwrap_or(s).trim_end()
}

fn is_name(s: &str) -> bool {
    !s.is_empty() && s.chars().all(|c| c.is_ascii_alphanumeric() || c == '_')
}

fn parse_object_set(body: &str) -> Option<BTreeSet<String>> {
    let body = strip_period(body);
    if body.is_empty() || body.eq_ignore_ascii_case(NONE) {
        return Some(BTreeSet::new());
    }
    body.split(',')
        .map(|s| {
            let s = s.trim();
            is_name(s).then(|| s.to_string())
        })
        .collect()
}

pub(crate) fn parse_box(body: &str) -> Option<BoundingBox> {
    let inner = body.trim().strip_prefix('[')?.strip_suffix(']')?;
    let nums: Vec<u32> = inner
        .split(',')
        .map(|s| s.trim().parse().ok())
        .collect::<Option<_>>()?;
    match nums[..] {
        [a, b, c, d] => BoundingBox::new(a, b, c, d).ok(),
        _ => None,
    }
}

fn parse_subgoals(body: &str) -> Option<Vec<String>> {
    let mut items = Vec::new();
    for line in body.lines().map(str::trim).filter(|l| !l.is_empty()) {
        let digits = line.chars().take_while(|c| c.is_ascii_digit()).count();
        let rest = &line[digits..];
        let rest = if digits > 0 {
            rest.strip_prefix('.').or_else(|| rest.strip_prefix(')'))?
        } else {
            rest.strip_prefix("- ").unwrap_or(rest)
        };
        let item = rest.trim();
        if item.is_empty() {
            return None;
        }
        items.push(item.to_string());
    }
    (!items.is_empty()).then_some(items)
}

fn parse_choice(body: &str) -> Option<ActionChoice> {
    let mut words = body.split_whitespace();
    let action: ActionKind = words.next()?.parse().ok()?;
    let object = words.next();
    if words.next().is_some() {
        return None;
    }
    match (action.is_navigation(), object) {
        (true, None) => Some(ActionChoice::new(action, None)),
        (false, Some(o)) if is_name(o) => Some(ActionChoice::new(action, Some(o.to_string()))),
        _ => None,
    }
}

fn parse_yes_no(body: &str) -> Option<bool> {
    let word: String = body
        .split(|c: char| !c.is_ascii_alphabetic())
        .find(|w| !w.is_empty())?
        .to_ascii_lowercase();
    match word.as_str() {
        "yes" | "true" => Some(true),
        "no" | "false" => Some(false),
        _ => None,
    }
}
