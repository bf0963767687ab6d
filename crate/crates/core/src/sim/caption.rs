use crate::model::ObjectRef;

use super::{Location, ObjectState, WorldState};

pub const NO_CHANGE_CAPTION: &str = "Nothing changes.";

fn container(s: Option<&ObjectState>) -> Option<&ObjectRef> {
    match s.map(|s| &s.location) {
        Some(Location::Inside { receptacle }) => Some(receptacle),
        _ => None,
    }
}

/// Template description of what differs between two consecutive states.
pub fn state_diff_caption(before: &WorldState, after: &WorldState) -> String {
    let mut clauses: Vec<String> = Vec::new();
    if before.agent != after.agent {
        if (before.agent.x, before.agent.y) != (after.agent.x, after.agent.y) {
            clauses.push(format!("the agent moves to ({}, {})", after.agent.x, after.agent.y));
        }
        if before.agent.heading != after.agent.heading {
            clauses.push(format!("the agent now faces {}", after.agent.heading.as_str()));
        }
    }
    if before.hand != after.hand {
        if let Some(o) = &after.hand {
            clauses.push(format!("the {o} is now held by the agent"));
        }
        if let Some(o) = &before.hand {
            clauses.push(format!("the {o} is no longer held by the agent"));
        }
    }
    for (obj, a) in &after.objects {
        let b = before.objects.get(obj);
        let (was, now) = (container(b), container(Some(a)));
        if was != now {
            if let Some(r) = was {
                clauses.push(format!("the {r} no longer contains the {obj}"));
            }
            if let Some(r) = now {
                clauses.push(format!("the {r} now contains the {obj}"));
            }
        }
    }
    for (obj, a) in &after.objects {
        let Some(b) = before.objects.get(obj) else { continue };
        let flags: [(bool, bool, &str, &str); 6] = [
            (b.is_open, a.is_open, "now open", "now closed"),
            (b.is_on, a.is_on, "now on", "now off"),
            (b.is_clean, a.is_clean, "now clean", "now dirty"),
            (b.is_hot, a.is_hot, "now hot", "no longer hot"),
            (b.is_cold, a.is_cold, "now cold", "no longer cold"),
            (b.is_sliced, a.is_sliced, "now sliced", "no longer sliced"),
        ];
        for (was, now, yes, no) in flags {
            if was != now {
                clauses.push(format!("the {obj} is {}", if now { yes } else { no }));
            }
        }
    }
    if clauses.is_empty() {
        return NO_CHANGE_CAPTION.to_string();
    }
    let mut text = clauses.join("; ");
    if let Some(first) = text.get(..1) {
        let upper = first.to_uppercase();
        text.replace_range(..1, &upper);
    }
    text.push('.');
    text
}
