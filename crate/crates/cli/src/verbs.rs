//! One function per verb. Outputs land under `<out>/{datasets,transcripts,reports}`.

use std::collections::{BTreeMap, BTreeSet};
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use euea_core::agent::{Agent, AgentConfig, EpisodeResult};
use euea_core::client::EmbedClient;
use euea_core::dataset::io::{
    read_jsonl, save_instance_frames, save_trajectory_frames, write_json, write_jsonl, write_skill_files, DatasetStats,
};
use euea_core::dataset::{
    build_skill_dataset, expert_trajectory, filter_grpo, GrpoFilterConfig, random_exploration, split_scenes, Trajectory,
};
use euea_core::eval::{evaluate_skills, evaluate_tasks, PlanningSimilarity, SkillReport, TaskReport};
use euea_core::model::{SkillInstance, SkillKind, Split};
use euea_core::prompts::{parse_response, PromptOptions, TemplateSet};
use euea_core::reward::{reward_with, RewardBreakdown, RewardScales};
use euea_core::sim::scenegen::scenario_suite;
use euea_core::sim::{Scenario, Simulator};
use euea_core::store::FrameStore;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::config::{ConfigError, HarnessConfig};
use crate::{backend, Command, Failure, ReportFormat, ScenarioArgs};

/// Token for the embedder, if it wants one.
const EMBED_TOKEN_ENV: &str = "EUEA_EMBED_TOKEN";

pub fn execute(command: &Command, cfg: &HarnessConfig) -> Result<(), Failure> {
    let r = match command {
        Command::GenScenes { per_type } => gen_scenes(cfg, *per_type),
        Command::Explore {
            scenarios,
            episodes,
            steps,
        } => explore(cfg, scenarios, *episodes, *steps),
        Command::RunAgent { scenarios, .. } => run_agent(cfg, scenarios),
        Command::BuildDataset {
            scenarios,
            kinds,
            holdout,
            trajectories,
            explore_episodes,
            explore_steps,
        } => build_dataset(
            cfg,
            scenarios,
            kinds,
            *holdout,
            trajectories,
            (*explore_episodes, *explore_steps),
        ),
        Command::GrpoFilter { dataset, .. } => grpo_filter(cfg, dataset),
        Command::GrpoReward { dataset, responses, .. } => grpo_reward(cfg, dataset, responses),
        Command::EvalSkills { dataset } => eval_skills(cfg, dataset),
        Command::EvalTasks { scenarios, .. } => eval_tasks(cfg, scenarios),
        Command::Report { input, format } => report(input, *format),
    };
    r.map_err(|e| match e.downcast::<ConfigError>() {
        Ok(c) => Failure::Config(c.to_string()),
        Err(e) => Failure::Runtime(e),
    })
}

fn config_err(message: impl Into<String>) -> anyhow::Error {
    ConfigError::Invalid(message.into()).into()
}

fn templates(cfg: &HarnessConfig) -> Result<TemplateSet> {
    match &cfg.templates {
        Some(p) => TemplateSet::load(p).map_err(|e| config_err(format!("{}: {e}", p.display()))),
        None => Ok(TemplateSet::default()),
    }
}

/// Per-scenario seed, distinct for every index.
fn derived_seed(seed: u64, index: usize) -> u64 {
    seed ^ (index as u64 + 1).wrapping_mul(0x9e37_79b9_7f4a_7c15)
}

fn scenarios(cfg: &HarnessConfig, args: &ScenarioArgs) -> Result<Vec<Scenario>> {
    if let Some(path) = &args.scenes {
        let list: Vec<Scenario> = read_jsonl(path).map_err(|e| config_err(e.to_string()))?;
        for s in &list {
            s.scene.validate().map_err(|e| config_err(e.to_string()))?;
        }
        if list.is_empty() {
            return Err(config_err(format!("{} holds no scenarios", path.display())));
        }
        return Ok(list);
    }
    let per_type = if args.suite.as_deref() == Some("small") { 2 } else { 10 };
    Ok(scenario_suite(per_type, cfg.seed)?)
}

fn read_instances(paths: &[PathBuf]) -> Result<Vec<SkillInstance>> {
    let mut out = Vec::new();
    for p in paths {
        let items: Vec<SkillInstance> = read_jsonl(p)?;
        for i in &items {
            i.validate().with_context(|| format!("{}: instance {}", p.display(), i.id))?;
        }
        out.extend(items);
    }
    if out.is_empty() {
        bail!("no instances in {}", paths.iter().map(|p| p.display().to_string()).collect::<Vec<_>>().join(", "));
    }
    Ok(out)
}

fn save_transcript_frames(store: &FrameStore, episodes: &[EpisodeResult]) -> Result<()> {
    for e in episodes {
        for s in &e.transcript.steps {
            if s.frame.is_loaded() {
                store.save(&s.frame)?;
            }
        }
    }
    Ok(())
}

fn gen_scenes(cfg: &HarnessConfig, per_type: u32) -> Result<()> {
    if per_type == 0 {
        return Err(config_err("--per-type must be at least 1"));
    }
    let list = scenario_suite(per_type, cfg.seed)?;
    let path = cfg.out.join("datasets").join("scenes.jsonl");
    write_jsonl(&path, &list)?;
    println!("scenarios={} path={}", list.len(), path.display());
    Ok(())
}

fn explore_all(sim: &Simulator, cfg: &HarnessConfig, list: &[Scenario], episodes: u32, steps: u32) -> Result<Vec<Trajectory>> {
    let per: Vec<Vec<Trajectory>> = list
        .par_iter()
        .enumerate()
        .map(|(i, s)| random_exploration(sim, s, episodes, steps, derived_seed(cfg.seed, i)))
        .collect::<Result<_, _>>()?;
    let all: Vec<Trajectory> = per.into_iter().flatten().collect();
    if all.iter().map(Trajectory::failures).sum::<usize>() == 0 {
        bail!("exploration batch of {} trajectories has no failed steps", all.len());
    }
    Ok(all)
}

fn explore(cfg: &HarnessConfig, args: &ScenarioArgs, episodes: u32, steps: u32) -> Result<()> {
    let list = scenarios(cfg, args)?;
    let sim = Simulator::new(cfg.sim);
    let trajs = explore_all(&sim, cfg, &list, episodes, steps)?;
    let dir = cfg.out.join("datasets");
    save_trajectory_frames(&FrameStore::new(&dir), &trajs)?;
    write_jsonl(&dir.join("explore.jsonl"), &trajs)?;
    let stats = DatasetStats::collect(&trajs, &[], &[]);
    println!(
        "trajectories={} steps={} failed_steps={} failure_rate={:.4}",
        stats.trajectories, stats.steps, stats.failed_steps, stats.failure_rate
    );
    Ok(())
}

/// Agent flags were folded into `cfg.agent` before the run was recorded.
fn run_tasks(cfg: &HarnessConfig, args: &ScenarioArgs) -> Result<(TaskReport, Vec<EpisodeResult>)> {
    let list = scenarios(cfg, args)?;
    let sim = Simulator::new(cfg.sim);
    let templates = templates(cfg)?;
    let model = backend::build(cfg, None)?;
    let agent = Agent {
        sim: &sim,
        templates: &templates,
        backend: model.as_ref(),
        config: AgentConfig {
            seed: cfg.agent.seed ^ cfg.seed,
            ..cfg.agent.clone()
        },
    };
    Ok(evaluate_tasks(&agent, &list)?)
}

fn print_summary(r: &TaskReport) {
    println!("episodes={}", r.overall.episodes);
    println!("success_rate={:.2}", r.average_success());
    println!("goal_condition={:.4}", r.overall.goal_condition_rate());
    println!("failures={}", r.failures);
    println!("recoveries_attempted={}", r.recoveries_attempted);
    println!("recoveries_succeeded={}", r.recoveries_succeeded);
    println!("errored_episodes={}", r.errored_episodes);
}

fn run_agent(cfg: &HarnessConfig, args: &ScenarioArgs) -> Result<()> {
    let (report, episodes) = run_tasks(cfg, args)?;
    let dir = cfg.out.join("transcripts");
    save_transcript_frames(&FrameStore::new(&dir), &episodes)?;
    write_jsonl(&dir.join("episodes.jsonl"), &episodes)?;
    write_json(&dir.join("summary.json"), &report)?;
    print_summary(&report);
    Ok(())
}

fn eval_tasks(cfg: &HarnessConfig, args: &ScenarioArgs) -> Result<()> {
    let (report, episodes) = run_tasks(cfg, args)?;
    let transcripts = cfg.out.join("transcripts");
    save_transcript_frames(&FrameStore::new(&transcripts), &episodes)?;
    write_jsonl(&transcripts.join("tasks.jsonl"), &episodes)?;
    let dir = cfg.out.join("reports");
    write_json(&dir.join("tasks.json"), &report)?;
    write_text(&dir.join("tasks.md"), &report.to_markdown())?;
    write_text(&dir.join("tasks.csv"), &report.to_csv())?;
    print!("{}", report.to_markdown());
    Ok(())
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir).with_context(|| dir.display().to_string())?;
    }
    std::fs::write(path, text).with_context(|| path.display().to_string())
}

fn build_dataset(
    cfg: &HarnessConfig,
    args: &ScenarioArgs,
    kinds: &[SkillKind],
    holdout: f64,
    ingest: &[PathBuf],
    (episodes, steps): (u32, u32),
) -> Result<()> {
    let list = scenarios(cfg, args)?;
    let (train, eval) = if holdout == 0.0 {
        (list.clone(), Vec::new())
    } else {
        split_scenes(&list, holdout, cfg.seed).map_err(|e| config_err(e.to_string()))?
    };
    let kinds: BTreeSet<SkillKind> = if kinds.is_empty() {
        SkillKind::ALL.into_iter().collect()
    } else {
        kinds.iter().copied().collect()
    };
    let sim = Simulator::new(cfg.sim);
    let collect = |scenes: &[Scenario], offset: usize| -> Result<Vec<Trajectory>> {
        let mut out: Vec<Trajectory> = scenes
            .par_iter()
            .map(|s| expert_trajectory(&sim, s))
            .collect::<Result<_, _>>()?;
        if episodes > 0 && !scenes.is_empty() {
            let offset_cfg = HarnessConfig {
                seed: derived_seed(cfg.seed, offset),
                ..cfg.clone()
            };
            out.extend(explore_all(&sim, &offset_cfg, scenes, episodes, steps)?);
        }
        Ok(out)
    };
    let mut train_trajs = collect(&train, 0)?;
    let mut eval_trajs = collect(&eval, train.len())?;

    let held: BTreeSet<&str> = eval.iter().map(|s| s.scene.scene_id.as_str()).collect();
    for p in ingest {
        let items: Vec<Trajectory> = read_jsonl(p)?;
        for t in items {
            t.validate()?;
            if held.contains(t.scene_id.as_str()) {
                eval_trajs.push(t);
            } else {
                train_trajs.push(t);
            }
        }
    }

    let templates = templates(cfg)?;
    let options = PromptOptions {
        k: cfg.agent.k,
        frame_budget: cfg.agent.frame_budget,
        ..PromptOptions::default()
    };
    let mut instances = build_skill_dataset(&train_trajs, &kinds, Split::Train, &templates, &options)?;
    if !eval_trajs.is_empty() {
        instances.extend(build_skill_dataset(&eval_trajs, &kinds, Split::Eval, &templates, &options)?);
    }

    let dir = cfg.out.join("datasets");
    let store = FrameStore::new(&dir);
    save_instance_frames(&store, &instances)?;
    let all_trajs: Vec<Trajectory> = train_trajs.into_iter().chain(eval_trajs).collect();
    write_jsonl(&dir.join("trajectories.jsonl"), &all_trajs)?;
    let files = write_skill_files(&dir, &instances)?;
    let stats = DatasetStats::collect(&all_trajs, &instances, &[]);
    write_json(&dir.join("stats.json"), &stats)?;
    println!(
        "trajectories={} instances={} files={} failure_rate={:.4} asp_yes={} asp_no={}",
        stats.trajectories,
        instances.len(),
        files.len(),
        stats.failure_rate,
        stats.asp_yes,
        stats.asp_no
    );
    Ok(())
}

fn load_scales(cfg: &HarnessConfig) -> Result<RewardScales> {
    let Some(path) = &cfg.reward_scales else {
        return Ok(RewardScales::default());
    };
    let text = std::fs::read_to_string(path).map_err(|e| config_err(format!("{}: {e}", path.display())))?;
    let scales: RewardScales = if path.extension().is_some_and(|e| e == "json") {
        serde_json::from_str(&text).map_err(|e| config_err(format!("{}: {e}", path.display())))?
    } else {
        toml::from_str(&text).map_err(|e| config_err(format!("{}: {}", path.display(), e.to_string().replace('\n', " "))))?
    };
    scales.validate().map_err(|e| config_err(e.to_string()))?;
    Ok(scales)
}

fn grpo_filter(cfg: &HarnessConfig, datasets: &[PathBuf]) -> Result<()> {
    let instances = read_instances(datasets)?;
    let scales = load_scales(cfg)?;
    let model = backend::build(cfg, Some(FrameStore::new(cfg.frames_root())))?;
    let grpo = GrpoFilterConfig {
        seed: cfg.grpo.seed ^ cfg.seed,
        ..cfg.grpo.clone()
    };
    let (selected, samples) = filter_grpo(&instances, model.as_ref(), &scales, &grpo)?;
    let dir = cfg.out.join("datasets").join("grpo");
    write_jsonl(&dir.join("selected.jsonl"), &selected)?;
    write_jsonl(&dir.join("samples.jsonl"), &samples)?;
    write_json(&dir.join("stats.json"), &DatasetStats::collect(&[], &selected, &samples))?;
    println!("instances={} selected={} tau={}", instances.len(), selected.len(), cfg.grpo.tau);
    Ok(())
}

#[derive(Debug, Deserialize)]
struct ResponseLine {
    instance_id: String,
    response_text: String,
}

#[derive(Debug, Serialize)]
struct RewardLine<'a> {
    instance_id: &'a str,
    kind: SkillKind,
    parsed: bool,
    reward: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    breakdown: Option<RewardBreakdown>,
    #[serde(skip_serializing_if = "Option::is_none")]
    parse_error: Option<String>,
}

fn grpo_reward(cfg: &HarnessConfig, datasets: &[PathBuf], responses: &Path) -> Result<()> {
    let instances = read_instances(datasets)?;
    let mut by_id: BTreeMap<&str, &SkillInstance> = BTreeMap::new();
    for i in &instances {
        if by_id.insert(i.id.as_str(), i).is_some() {
            bail!("duplicate instance id {}", i.id);
        }
    }
    let scales = load_scales(cfg)?;
    let lines: Vec<ResponseLine> = read_jsonl(responses)?;
    let mut out = Vec::with_capacity(lines.len());
    for l in &lines {
        let inst = by_id
            .get(l.instance_id.as_str())
            .with_context(|| format!("{}: unknown instance {}", responses.display(), l.instance_id))?;
        out.push(match parse_response(inst.kind, &l.response_text) {
            Ok(parsed) => {
                let b = reward_with(inst, &parsed, &scales)?;
                RewardLine {
                    instance_id: &l.instance_id,
                    kind: inst.kind,
                    parsed: true,
                    reward: b.r_total,
                    breakdown: Some(b),
                    parse_error: None,
                }
            }
            Err(e) => RewardLine {
                instance_id: &l.instance_id,
                kind: inst.kind,
                parsed: false,
                reward: 0.0,
                breakdown: None,
                parse_error: Some(e.to_string()),
            },
        });
    }
    let path = cfg.out.join("reports").join("rewards.jsonl");
    write_jsonl(&path, &out)?;
    let mean = if out.is_empty() { 0.0 } else { out.iter().map(|r| r.reward).sum::<f64>() / out.len() as f64 };
    println!("responses={} mean_reward={mean:.4} path={}", out.len(), path.display());
    Ok(())
}

fn eval_skills(cfg: &HarnessConfig, datasets: &[PathBuf]) -> Result<()> {
    let instances = read_instances(datasets)?;
    let model = backend::build(cfg, Some(FrameStore::new(cfg.frames_root())))?;
    let planning = match &cfg.embedder_url {
        Some(url) => {
            let token = std::env::var(EMBED_TOKEN_ENV).ok().filter(|t| !t.is_empty());
            PlanningSimilarity::with_embedder(EmbedClient::new(url.clone(), token)?)
        }
        None => PlanningSimilarity::fallback(),
    };
    let (report, results) = evaluate_skills(&instances, model.as_ref(), &planning, &cfg.eval)?;
    let dir = cfg.out.join("reports");
    write_json(&dir.join("skills.json"), &report)?;
    write_text(&dir.join("skills.md"), &report.to_markdown())?;
    write_text(&dir.join("skills.csv"), &report.to_csv())?;
    write_jsonl(&dir.join("skill_instances.jsonl"), &results)?;
    print!("{}", report.to_markdown());
    Ok(())
}

fn report(input: &Path, format: ReportFormat) -> Result<()> {
    let text = std::fs::read_to_string(input).map_err(|e| config_err(format!("{}: {e}", input.display())))?;
    let rendered = if let Ok(r) = serde_json::from_str::<TaskReport>(&text) {
        match format {
            ReportFormat::Markdown => r.to_markdown(),
            ReportFormat::Csv => r.to_csv(),
        }
    } else if let Ok(r) = serde_json::from_str::<SkillReport>(&text) {
        match format {
            ReportFormat::Markdown => r.to_markdown(),
            ReportFormat::Csv => r.to_csv(),
        }
    } else {
        return Err(config_err(format!("{} is neither a task nor a skill report", input.display())));
    };
    print!("{rendered}");
    Ok(())
}
