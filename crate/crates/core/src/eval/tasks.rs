use std::collections::BTreeMap;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use super::EvalError;
use crate::agent::{Agent, EpisodeResult};
use crate::model::TaskType;
use crate::sim::Scenario;

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct TypeStats {
    pub episodes: u32,
    pub successes: u32,
    /// Sum over episodes of the per-episode goal-condition fraction.
    pub goal_condition_sum: f64,
}

impl TypeStats {
    fn add(&mut self, r: &EpisodeResult) {
        self.episodes += 1;
        self.successes += u32::from(r.success);
        self.goal_condition_sum += r.goal_condition_rate();
    }

    pub fn success_rate(&self) -> f64 {
        100.0 * f64::from(self.successes) / f64::from(self.episodes)
    }

    pub fn goal_condition_rate(&self) -> f64 {
        self.goal_condition_sum / f64::from(self.episodes)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TaskReport {
    /// Types without episodes are absent rather than zero.
    pub per_type: BTreeMap<TaskType, TypeStats>,
    pub overall: TypeStats,
    pub failures: u32,
    pub recoveries_attempted: u32,
    pub recoveries_succeeded: u32,
    pub errored_episodes: u32,
}

impl TaskReport {
    pub fn from_results(results: &[EpisodeResult]) -> Result<Self, EvalError> {
        if results.is_empty() {
            return Err(EvalError::NoEpisodes);
        }
        let mut per_type: BTreeMap<TaskType, TypeStats> = BTreeMap::new();
        let mut overall = TypeStats::default();
        let (mut failures, mut attempted, mut recovered, mut errored) = (0, 0, 0, 0);
        for r in results {
            per_type.entry(r.task_type).or_default().add(r);
            overall.add(r);
            failures += r.failures;
            attempted += r.recoveries_attempted;
            recovered += r.recoveries_succeeded;
            errored += u32::from(r.error.is_some());
        }
        Ok(Self {
            per_type,
            overall,
            failures,
            recoveries_attempted: attempted,
            recoveries_succeeded: recovered,
            errored_episodes: errored,
        })
    }

    /// Episode-weighted success rate over all types, in percent.
    pub fn average_success(&self) -> f64 {
        self.overall.success_rate()
    }

    pub fn success(&self, task_type: TaskType) -> Option<f64> {
        self.per_type.get(&task_type).map(TypeStats::success_rate)
    }

    fn row(&self) -> Vec<String> {
        let mut row = vec![format!("{:.2}", self.average_success())];
        for tt in TaskType::ALL {
            row.push(self.success(tt).map_or_else(|| "n/a".to_string(), |v| format!("{v:.2}")));
        }
        row.push(format!("{:.3}", self.overall.goal_condition_rate()));
        row
    }

    const HEADER: [&'static str; 8] = ["Avg.", "Look", "Pick", "Pick Two", "Clean", "Cool", "Heat", "Goal Condition"];

    pub fn to_markdown(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "| {} |", Self::HEADER.join(" | "));
        let _ = writeln!(s, "|{}", "---|".repeat(Self::HEADER.len()));
        let _ = writeln!(s, "| {} |", self.row().join(" | "));
        let _ = writeln!(
            s,
            "\nEpisodes: {}. Failed actions: {}. Recoveries: {} attempted, {} succeeded. Errored episodes: {}.",
            self.overall.episodes, self.failures, self.recoveries_attempted, self.recoveries_succeeded, self.errored_episodes
        );
        s
    }

    pub fn to_csv(&self) -> String {
        format!(
            "avg,look,pick,pick_two,clean,cool,heat,goal_condition,episodes,recoveries_attempted,recoveries_succeeded\n{},{},{},{}\n",
            self.row().join(","),
            self.overall.episodes,
            self.recoveries_attempted,
            self.recoveries_succeeded
        )
    }
}

/// Runs every scenario and aggregates. Episodes that error count as failures.
pub fn evaluate_tasks(agent: &Agent<'_>, scenarios: &[Scenario]) -> Result<(TaskReport, Vec<EpisodeResult>), EvalError> {
    if scenarios.is_empty() {
        return Err(EvalError::NoEpisodes);
    }
    let results = agent.run_episodes(scenarios);
    Ok((TaskReport::from_results(&results)?, results))
}
