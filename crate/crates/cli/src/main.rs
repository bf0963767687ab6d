//! `euea`: scene generation, agent runs, dataset builds, GRPO scoring and evaluation.

mod backend;
mod config;
mod verbs;

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use euea_core::model::SkillKind;
use serde::{Deserialize, Serialize};

use config::{ConfigError, FaultPreset, HarnessConfig, Overrides};

#[derive(Debug, Parser)]
#[command(name = "euea", version, about = "Embodied-agent skill harness")]
struct Cli {
    /// TOML configuration file.
    #[arg(long, global = true, env = "EUEA_CONFIG")]
    config: Option<PathBuf>,
    /// Re-run a recorded `run.json`; its config stands in for the config file.
    #[arg(long, global = true)]
    replay: Option<PathBuf>,
    #[command(flatten)]
    overrides: Overrides,
    #[command(subcommand)]
    command: Option<Command>,
}

#[derive(Clone, Debug, Default, Args, Serialize, Deserialize)]
pub struct ScenarioArgs {
    /// Built-in suite; `desk60` is ten scenarios per task type, `fault60` adds the
    /// wrong-box fault preset when no fault is configured.
    #[arg(long, value_parser = ["desk60", "fault60", "small"])]
    pub suite: Option<String>,
    /// JSONL of scenarios, as written by `gen-scenes`.
    #[arg(long, conflicts_with = "suite")]
    pub scenes: Option<PathBuf>,
}

#[derive(Clone, Debug, Default, Args, Serialize, Deserialize)]
pub struct AgentFlags {
    #[arg(long)]
    pub no_recovery: bool,
    /// Tell the model which action failed, without recovery sampling.
    #[arg(long)]
    pub env_feedback: bool,
}

#[derive(Clone, Copy, Debug, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum ReportFormat {
    Markdown,
    Csv,
}

fn parse_kind(s: &str) -> Result<SkillKind, String> {
    s.parse().map_err(|e: euea_core::model::ModelError| e.to_string())
}

#[derive(Clone, Debug, Subcommand, Serialize, Deserialize)]
#[serde(tag = "verb", rename_all = "kebab-case")]
pub enum Command {
    /// Write a scenario suite to datasets/scenes.jsonl.
    GenScenes {
        #[arg(long, default_value_t = 10)]
        per_type: u32,
    },
    /// Random-exploration trajectories to datasets/explore.jsonl.
    Explore {
        #[command(flatten)]
        scenarios: ScenarioArgs,
        #[arg(long, default_value_t = 10)]
        episodes: u32,
        #[arg(long, default_value_t = 20)]
        steps: u32,
    },
    /// Run the agent over scenarios; transcripts/episodes.jsonl and summary.json.
    RunAgent {
        #[command(flatten)]
        scenarios: ScenarioArgs,
        #[command(flatten)]
        agent: AgentFlags,
    },
    /// Expert and exploration trajectories to per-skill JSONL under datasets/.
    BuildDataset {
        #[command(flatten)]
        scenarios: ScenarioArgs,
        /// Comma-separated skills; all when omitted.
        #[arg(long, value_delimiter = ',', value_parser = parse_kind)]
        kinds: Vec<SkillKind>,
        /// Fraction of scenes held out as the eval split.
        #[arg(long, default_value_t = 0.3)]
        holdout: f64,
        /// Extra trajectory JSONL files to ingest.
        #[arg(long)]
        trajectories: Vec<PathBuf>,
        #[arg(long, default_value_t = 2)]
        explore_episodes: u32,
        #[arg(long, default_value_t = 30)]
        explore_steps: u32,
    },
    /// Sample each instance and keep the high-variance ones under datasets/grpo/.
    GrpoFilter {
        #[arg(long, required = true)]
        dataset: Vec<PathBuf>,
        #[arg(long)]
        tau: Option<f64>,
        #[arg(long)]
        cap: Option<usize>,
        #[arg(long)]
        samples: Option<u32>,
    },
    /// Score `{instance_id, response_text}` lines against a dataset; reports/rewards.jsonl.
    GrpoReward {
        #[arg(long, required = true)]
        dataset: Vec<PathBuf>,
        #[arg(long)]
        responses: PathBuf,
        /// Reward-scale table, TOML or JSON.
        #[arg(long)]
        scales: Option<PathBuf>,
    },
    /// Skill metrics over datasets; reports/skills.{md,csv,json}.
    EvalSkills {
        #[arg(long, required = true)]
        dataset: Vec<PathBuf>,
    },
    /// Task success per type; reports/tasks.{md,csv,json}.
    EvalTasks {
        #[command(flatten)]
        scenarios: ScenarioArgs,
        #[command(flatten)]
        agent: AgentFlags,
    },
    /// Re-render a tasks.json or skills.json report to stdout.
    Report {
        #[arg(long)]
        input: PathBuf,
        #[arg(long, value_enum, default_value_t = ReportFormat::Markdown)]
        format: ReportFormat,
    },
}

impl Command {
    pub fn verb(&self) -> &'static str {
        match self {
            Command::GenScenes { .. } => "gen-scenes",
            Command::Explore { .. } => "explore",
            Command::RunAgent { .. } => "run-agent",
            Command::BuildDataset { .. } => "build-dataset",
            Command::GrpoFilter { .. } => "grpo-filter",
            Command::GrpoReward { .. } => "grpo-reward",
            Command::EvalSkills { .. } => "eval-skills",
            Command::EvalTasks { .. } => "eval-tasks",
            Command::Report { .. } => "report",
        }
    }

    /// Folds verb flags that shadow config fields into the config, so the recorded
    /// config is complete.
    fn fold_into(&self, cfg: &mut HarnessConfig) {
        let agent_flags = |cfg: &mut HarnessConfig, s: &ScenarioArgs, a: &AgentFlags| {
            if a.no_recovery {
                cfg.agent.recovery_enabled = false;
            }
            if a.env_feedback {
                cfg.agent.env_feedback = true;
            }
            if s.suite.as_deref() == Some("fault60") && cfg.backend.faults == FaultPreset::None {
                cfg.backend.faults = FaultPreset::WrongBox;
            }
        };
        match self {
            Command::RunAgent { scenarios, agent } | Command::EvalTasks { scenarios, agent } => {
                agent_flags(cfg, scenarios, agent)
            }
            Command::GrpoFilter { tau, cap, samples, .. } => {
                if let Some(t) = tau {
                    cfg.grpo.tau = *t;
                }
                if cap.is_some() {
                    cfg.grpo.cap = *cap;
                }
                if let Some(n) = samples {
                    cfg.grpo.samples_per_instance = *n;
                }
            }
            Command::GrpoReward { scales: Some(p), .. } => cfg.reward_scales = Some(p.clone()),
            _ => {}
        }
    }
}

/// What `run.json` records: enough to reproduce the outputs.
#[derive(Debug, Serialize, Deserialize)]
pub struct RunRecord {
    pub command: Command,
    pub config: HarnessConfig,
}

pub enum Failure {
    Usage(String),
    Config(String),
    Runtime(anyhow::Error),
}

impl From<ConfigError> for Failure {
    fn from(e: ConfigError) -> Self {
        Failure::Config(e.to_string())
    }
}

impl From<anyhow::Error> for Failure {
    fn from(e: anyhow::Error) -> Self {
        Failure::Runtime(e)
    }
}

impl Failure {
    fn exit(self) -> ExitCode {
        let (kind, code, message) = match self {
            Failure::Usage(m) => ("usage", 2, m),
            Failure::Config(m) => ("config", 3, m),
            Failure::Runtime(e) => ("runtime", 1, format!("{e:#}")),
        };
        let line = serde_json::json!({ "error": kind, "message": message.replace('\n', " ") });
        eprintln!("{line}");
        ExitCode::from(code)
    }
}

fn record_path(out: &Path, verb: &str) -> PathBuf {
    out.join("runs").join(format!("{verb}.run.json"))
}

fn load_record(path: &Path) -> Result<RunRecord, Failure> {
    let text = std::fs::read_to_string(path).map_err(|e| Failure::Config(format!("{}: {e}", path.display())))?;
    serde_json::from_str(&text).map_err(|e| Failure::Config(format!("{}: {e}", path.display())))
}

fn run(cli: Cli) -> Result<(), Failure> {
    let (command, mut cfg) = match (cli.replay, cli.command) {
        (Some(_), Some(_)) => return Err(Failure::Usage("--replay takes no verb".into())),
        (None, None) => return Err(Failure::Usage("missing verb; see --help".into())),
        (Some(path), None) => {
            let r = load_record(&path)?;
            (r.command, r.config)
        }
        (None, Some(c)) => {
            let cfg = match &cli.config {
                Some(p) => HarnessConfig::load(p)?,
                None => HarnessConfig::default(),
            };
            (c, cfg)
        }
    };
    cli.overrides.apply(&mut cfg);
    command.fold_into(&mut cfg);
    cfg.validate()?;
    if let Some(n) = cfg.threads {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| Failure::Runtime(e.into()))?;
    }
    if !matches!(command, Command::Report { .. }) {
        let record = RunRecord { command, config: cfg };
        euea_core::dataset::io::write_json(&record_path(&record.config.out, record.command.verb()), &record)
            .map_err(|e| Failure::Runtime(e.into()))?;
        return verbs::execute(&record.command, &record.config);
    }
    verbs::execute(&command, &cfg)
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) if !e.use_stderr() => {
            let _ = e.print();
            return ExitCode::SUCCESS;
        }
        Err(e) => {
            let text = e.to_string();
            let first = text.lines().next().unwrap_or("invalid arguments");
            return Failure::Usage(first.trim_start_matches("error: ").to_string()).exit();
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => f.exit(),
    }
}
