//! JSONL files, frame persistence and dataset statistics.

use std::collections::BTreeMap;
use std::fs;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use super::{DatasetError, SampleStats, Trajectory};
use crate::model::{Frame, SkillInstance, SkillKind, SkillOutput};
use crate::store::FrameStore;

fn io_err(path: &Path, e: impl std::fmt::Display) -> DatasetError {
    DatasetError::Io {
        path: path.display().to_string(),
        message: e.to_string(),
    }
}

pub fn write_jsonl<'a, T: Serialize + 'a>(path: &Path, items: impl IntoIterator<Item = &'a T>) -> Result<(), DatasetError> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).map_err(|e| io_err(dir, e))?;
    }
    let file = fs::File::create(path).map_err(|e| io_err(path, e))?;
    let mut w = BufWriter::new(file);
    for item in items {
        serde_json::to_writer(&mut w, item).map_err(|e| io_err(path, e))?;
        w.write_all(b"\n").map_err(|e| io_err(path, e))?;
    }
    w.flush().map_err(|e| io_err(path, e))
}

/// Reads one record per non-blank line.
pub fn read_jsonl<T: DeserializeOwned>(path: &Path) -> Result<Vec<T>, DatasetError> {
    let file = fs::File::open(path).map_err(|e| io_err(path, e))?;
    let mut out = Vec::new();
    for (n, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| io_err(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let item = serde_json::from_str(&line).map_err(|e| io_err(path, format!("line {}: {e}", n + 1)))?;
        out.push(item);
    }
    Ok(out)
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), DatasetError> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).map_err(|e| io_err(dir, e))?;
    }
    let mut text = serde_json::to_string_pretty(value).map_err(|e| io_err(path, e))?;
    text.push('\n');
    fs::write(path, text).map_err(|e| io_err(path, e))
}

fn save_all<'a>(store: &FrameStore, frames: impl IntoIterator<Item = &'a Frame>) -> Result<(), DatasetError> {
    for f in frames {
        if f.is_loaded() {
            store.save(f).map_err(|e| io_err(&store.path_of(f), e))?;
        }
    }
    Ok(())
}

pub fn save_trajectory_frames(store: &FrameStore, trajectories: &[Trajectory]) -> Result<(), DatasetError> {
    for t in trajectories {
        save_all(store, t.memory.steps.iter().map(|s| &s.frame))?;
        save_all(store, [&t.final_frame])?;
    }
    Ok(())
}

pub fn save_instance_frames(store: &FrameStore, instances: &[SkillInstance]) -> Result<(), DatasetError> {
    for i in instances {
        save_all(store, &i.frames)?;
    }
    Ok(())
}

/// `<dir>/<split>/<kind>.jsonl`, one file per (split, kind) present. Returns the paths written.
pub fn write_skill_files(dir: &Path, instances: &[SkillInstance]) -> Result<Vec<PathBuf>, DatasetError> {
    let mut groups: BTreeMap<(&str, SkillKind), Vec<&SkillInstance>> = BTreeMap::new();
    for i in instances {
        groups.entry((i.split.as_str(), i.kind)).or_default().push(i);
    }
    let mut written = Vec::new();
    for ((split, kind), items) in groups {
        let path = dir.join(split).join(format!("{}.jsonl", kind.as_str()));
        write_jsonl(&path, items)?;
        written.push(path);
    }
    Ok(written)
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct DatasetStats {
    pub trajectories: usize,
    pub steps: usize,
    pub failed_steps: usize,
    pub failure_rate: f64,
    /// Instances per split, then per skill.
    pub counts: BTreeMap<String, BTreeMap<String, usize>>,
    pub asp_yes: usize,
    pub asp_no: usize,
    /// Number of instances per correct-sample count, when GRPO sampling ran.
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub correct_histogram: BTreeMap<u32, usize>,
}

impl DatasetStats {
    pub fn collect(trajectories: &[Trajectory], instances: &[SkillInstance], samples: &[SampleStats]) -> Self {
        let steps: usize = trajectories.iter().map(Trajectory::len).sum();
        let failed_steps: usize = trajectories.iter().map(Trajectory::failures).sum();
        let mut s = DatasetStats {
            trajectories: trajectories.len(),
            steps,
            failed_steps,
            failure_rate: if steps == 0 { 0.0 } else { failed_steps as f64 / steps as f64 },
            ..Self::default()
        };
        for i in instances {
            *s.counts
                .entry(i.split.as_str().to_string())
                .or_default()
                .entry(i.kind.as_str().to_string())
                .or_default() += 1;
            if i.kind == SkillKind::ASP {
                match i.ground_truth {
                    SkillOutput::YesNo(true) => s.asp_yes += 1,
                    _ => s.asp_no += 1,
                }
            }
        }
        for st in samples {
            *s.correct_histogram.entry(st.correct_count).or_default() += 1;
        }
        s
    }
}
