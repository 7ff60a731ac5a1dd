//! Trajectory and group records shared by every stage of the pipeline.
//!
//! A [`GroupRecord`] serializes to exactly one JSON line. The field names
//! (`prompt_id`, `task_type`, `G`, `T_max`, `rewards`, `label`,
//! `trajectories`, `divergence`, `gate`) are the on-disk contract; readers
//! validate every record on the way in.

use std::collections::BTreeMap;
use std::fmt;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::divergence::DivergenceVector;
use crate::error::{Error, Result};
use crate::gate::GateDecision;

/// One environment action. Equality is exact symbol equality.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ActionToken(pub u16);

/// Opaque observation identifier emitted by the environment after an action.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ObservationId(pub u32);

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TaskType {
    PickAndPlaceSimple,
    PickTwoObj,
    PickClean,
    PickHeat,
    PickCool,
    LookAtObj,
}

impl TaskType {
    pub const ALL: [TaskType; 6] = [
        TaskType::PickAndPlaceSimple,
        TaskType::PickTwoObj,
        TaskType::PickClean,
        TaskType::PickHeat,
        TaskType::PickCool,
        TaskType::LookAtObj,
    ];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn name(self) -> &'static str {
        match self {
            TaskType::PickAndPlaceSimple => "pick_and_place_simple",
            TaskType::PickTwoObj => "pick_two_obj",
            TaskType::PickClean => "pick_clean",
            TaskType::PickHeat => "pick_heat",
            TaskType::PickCool => "pick_cool",
            TaskType::LookAtObj => "look_at_obj",
        }
    }
}

impl fmt::Display for TaskType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GroupLabel {
    AllFail,
    Mixed,
    AllSucceed,
}

impl GroupLabel {
    pub fn is_zero_variance(self) -> bool {
        self != GroupLabel::Mixed
    }

    pub fn name(self) -> &'static str {
        match self {
            GroupLabel::AllFail => "all_fail",
            GroupLabel::Mixed => "mixed",
            GroupLabel::AllSucceed => "all_succeed",
        }
    }
}

impl fmt::Display for GroupLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

pub(crate) fn check_binary(r: f64) -> Result<()> {
    if r == 0.0 || r == 1.0 {
        Ok(())
    } else {
        Err(Error::NonBinaryReward(r))
    }
}

/// Three-way outcome label of a group's terminal rewards.
pub fn group_label(rewards: &[f64]) -> Result<GroupLabel> {
    if rewards.is_empty() {
        return Err(Error::EmptyInput("rewards"));
    }
    if rewards.len() < 2 {
        return Err(Error::GroupTooSmall(rewards.len()));
    }
    for &r in rewards {
        check_binary(r)?;
    }
    let successes = rewards.iter().filter(|&&r| r == 1.0).count();
    Ok(match successes {
        0 => GroupLabel::AllFail,
        s if s == rewards.len() => GroupLabel::AllSucceed,
        _ => GroupLabel::Mixed,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryRecord {
    pub actions: Vec<ActionToken>,
    pub observations: Vec<ObservationId>,
    /// Step at which the trajectory ended early (success, or a gate cut).
    /// `None` when it ran to the horizon.
    pub terminated_at: Option<usize>,
    pub reward: f64,
    pub steps_emitted: usize,
    /// Stopped by the gate; the stored reward is the truncated one and is
    /// kept for logging only.
    #[serde(default)]
    pub is_cut: bool,
}

impl TrajectoryRecord {
    pub fn validate(&self, t_max: usize) -> Result<()> {
        if self.actions.len() != self.observations.len() {
            return Err(Error::MalformedRecord(format!(
                "{} actions but {} observations",
                self.actions.len(),
                self.observations.len()
            )));
        }
        if self.steps_emitted != self.actions.len() {
            return Err(Error::MalformedRecord(format!(
                "steps_emitted {} != {} actions",
                self.steps_emitted,
                self.actions.len()
            )));
        }
        if self.steps_emitted > t_max {
            return Err(Error::MalformedRecord(format!("steps_emitted {} exceeds T_max {t_max}", self.steps_emitted)));
        }
        if let Some(t) = self.terminated_at {
            if t != self.steps_emitted {
                return Err(Error::MalformedRecord(format!("terminated_at {t} but steps_emitted {}", self.steps_emitted)));
            }
        }
        check_binary(self.reward)
    }

    /// Actions up to `min(k, steps_emitted)`.
    pub fn prefix(&self, k: usize) -> &[ActionToken] {
        &self.actions[..k.min(self.actions.len())]
    }

    /// Finished (by success or cut) at or before step `k`.
    pub fn finished_by(&self, k: usize) -> bool {
        matches!(self.terminated_at, Some(t) if t <= k)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawGroupRecord")]
pub struct GroupRecord {
    pub prompt_id: String,
    pub task_type: TaskType,
    #[serde(rename = "G")]
    pub group_size: usize,
    #[serde(rename = "T_max")]
    pub t_max: usize,
    pub rewards: Vec<f64>,
    pub label: GroupLabel,
    pub trajectories: Vec<TrajectoryRecord>,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub divergence: BTreeMap<usize, DivergenceVector>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gate: Option<GateDecision>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub config_hash: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
}

#[derive(Deserialize)]
struct RawGroupRecord {
    prompt_id: String,
    task_type: TaskType,
    #[serde(rename = "G")]
    group_size: usize,
    #[serde(rename = "T_max")]
    t_max: usize,
    rewards: Vec<f64>,
    label: GroupLabel,
    trajectories: Vec<TrajectoryRecord>,
    #[serde(default)]
    divergence: BTreeMap<usize, DivergenceVector>,
    #[serde(default)]
    gate: Option<GateDecision>,
    #[serde(default)]
    config_hash: Option<String>,
    #[serde(default)]
    seed: Option<u64>,
}

impl TryFrom<RawGroupRecord> for GroupRecord {
    type Error = Error;

    fn try_from(raw: RawGroupRecord) -> Result<Self> {
        let mut group = GroupRecord::new(raw.prompt_id, raw.task_type, raw.t_max, raw.trajectories)?;
        if raw.group_size != group.group_size {
            return Err(Error::MalformedRecord(format!("G = {} but {} trajectories", raw.group_size, group.group_size)));
        }
        if raw.rewards != group.rewards {
            return Err(Error::MalformedRecord(format!("{}: rewards array disagrees with trajectory rewards", group.prompt_id)));
        }
        if raw.label != group.label {
            return Err(Error::MalformedRecord(format!(
                "{}: label {} but rewards say {}",
                group.prompt_id, raw.label, group.label
            )));
        }
        group.divergence = raw.divergence;
        group.gate = raw.gate;
        group.config_hash = raw.config_hash;
        group.seed = raw.seed;
        Ok(group)
    }
}

impl GroupRecord {
    /// Builds a record, deriving rewards and label from the trajectories.
    pub fn new(
        prompt_id: impl Into<String>,
        task_type: TaskType,
        t_max: usize,
        trajectories: Vec<TrajectoryRecord>,
    ) -> Result<Self> {
        for t in &trajectories {
            t.validate(t_max)?;
        }
        let rewards: Vec<f64> = trajectories.iter().map(|t| t.reward).collect();
        let label = group_label(&rewards)?;
        Ok(GroupRecord {
            prompt_id: prompt_id.into(),
            task_type,
            group_size: trajectories.len(),
            t_max,
            rewards,
            label,
            trajectories,
            divergence: BTreeMap::new(),
            gate: None,
            config_hash: None,
            seed: None,
        })
    }

    pub fn is_zero_variance(&self) -> bool {
        self.label.is_zero_variance()
    }

    pub fn is_cut(&self) -> bool {
        self.gate.as_ref().is_some_and(|g| g.cut)
    }

    /// Population variance of the terminal rewards.
    pub fn reward_variance(&self) -> f64 {
        let n = self.rewards.len() as f64;
        let mean = self.rewards.iter().sum::<f64>() / n;
        self.rewards.iter().map(|r| (r - mean).powi(2)).sum::<f64>() / n
    }

    /// Ground-truth zero-variance flag: the counterfactual label when the
    /// group was cut and one is known, else the record's own label.
    pub fn true_label(&self) -> GroupLabel {
        match &self.gate {
            Some(g) if g.cut => g.counterfactual_label.unwrap_or(self.label),
            _ => self.label,
        }
    }
}

/// Total action steps emitted across the group's trajectories.
pub fn step_tokens(group: &GroupRecord) -> usize {
    group.trajectories.iter().map(|t| t.steps_emitted).sum()
}

pub fn read_corpus_from<R: BufRead>(reader: R) -> Result<Vec<GroupRecord>> {
    let mut out = Vec::new();
    for (lineno, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let group: GroupRecord =
            serde_json::from_str(&line).map_err(|e| Error::MalformedRecord(format!("line {}: {e}", lineno + 1)))?;
        out.push(group);
    }
    Ok(out)
}

pub fn write_corpus_to<W: Write>(mut writer: W, groups: &[GroupRecord]) -> Result<()> {
    for g in groups {
        serde_json::to_writer(&mut writer, g)?;
        writer.write_all(b"\n")?;
    }
    writer.flush()?;
    Ok(())
}

pub fn read_corpus(path: &Path) -> Result<Vec<GroupRecord>> {
    let file = std::fs::File::open(path)?;
    read_corpus_from(BufReader::new(file))
}

pub fn write_corpus(path: &Path, groups: &[GroupRecord]) -> Result<()> {
    let file = std::fs::File::create(path)?;
    write_corpus_to(BufWriter::new(file), groups)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn traj(steps: usize, reward: f64, terminated_at: Option<usize>) -> TrajectoryRecord {
        TrajectoryRecord {
            actions: vec![ActionToken(0); steps],
            observations: vec![ObservationId(0); steps],
            terminated_at,
            reward,
            steps_emitted: steps,
            is_cut: false,
        }
    }

    #[test]
    fn labels() {
        assert_eq!(group_label(&[0.0; 8]).unwrap(), GroupLabel::AllFail);
        assert_eq!(group_label(&[1.0; 8]).unwrap(), GroupLabel::AllSucceed);
        let mut r = [0.0; 8];
        r[0] = 1.0;
        assert_eq!(group_label(&r).unwrap(), GroupLabel::Mixed);
    }

    #[test]
    fn label_errors() {
        assert!(matches!(group_label(&[]), Err(Error::EmptyInput(_))));
        assert!(matches!(group_label(&[1.0]), Err(Error::GroupTooSmall(1))));
        assert!(matches!(group_label(&[0.0, 0.5]), Err(Error::NonBinaryReward(_))));
    }

    #[test]
    fn zero_variance_matches_label_exhaustively() {
        for g in 2..=10usize {
            for mask in 0u32..(1 << g) {
                let r: Vec<f64> = (0..g).map(|i| ((mask >> i) & 1) as f64).collect();
                let mean = r.iter().sum::<f64>() / g as f64;
                let var = r.iter().map(|x| (x - mean).powi(2)).sum::<f64>();
                let label = group_label(&r).unwrap();
                assert_eq!(var == 0.0, label.is_zero_variance(), "mask {mask:b}");
            }
        }
    }

    #[test]
    fn step_token_counts() {
        let full = GroupRecord::new("a", TaskType::PickCool, 30, (0..8).map(|_| traj(30, 0.0, None)).collect()).unwrap();
        assert_eq!(step_tokens(&full), 240);

        let cut = GroupRecord::new("b", TaskType::PickCool, 30, (0..8).map(|_| traj(10, 0.0, Some(10))).collect()).unwrap();
        assert_eq!(step_tokens(&cut), 80);

        let lens = [30, 30, 12, 30, 30, 30, 30, 30];
        let mixed = GroupRecord::new(
            "c",
            TaskType::PickCool,
            30,
            lens.iter().map(|&l| if l < 30 { traj(l, 1.0, Some(l)) } else { traj(l, 0.0, None) }).collect(),
        )
        .unwrap();
        assert_eq!(step_tokens(&mixed), 222);
        assert_eq!(mixed.label, GroupLabel::Mixed);
    }

    #[test]
    fn rejects_inconsistent_trajectory() {
        let mut t = traj(5, 0.0, Some(4));
        assert!(t.validate(30).is_err());
        t.terminated_at = Some(5);
        assert!(t.validate(30).is_ok());
        t.reward = 0.3;
        assert!(matches!(t.validate(30), Err(Error::NonBinaryReward(_))));
    }

    #[test]
    fn jsonl_rejects_wrong_label() {
        let g = GroupRecord::new("p", TaskType::LookAtObj, 30, vec![traj(3, 0.0, None), traj(3, 0.0, None)]).unwrap();
        let mut v = serde_json::to_value(&g).unwrap();
        v["label"] = serde_json::json!("mixed");
        let line = serde_json::to_string(&v).unwrap();
        assert!(read_corpus_from(line.as_bytes()).is_err());
    }

    #[test]
    fn jsonl_field_names() {
        let g = GroupRecord::new("p", TaskType::LookAtObj, 30, vec![traj(3, 1.0, Some(3)), traj(3, 0.0, None)]).unwrap();
        let v = serde_json::to_value(&g).unwrap();
        for key in ["prompt_id", "task_type", "G", "T_max", "rewards", "label", "trajectories"] {
            assert!(v.get(key).is_some(), "missing {key}");
        }
        assert_eq!(v["task_type"], "look_at_obj");
        assert_eq!(v["label"], "mixed");
        let t = &v["trajectories"][0];
        for key in ["actions", "observations", "steps_emitted", "terminated_at", "is_cut"] {
            assert!(t.get(key).is_some(), "missing trajectory field {key}");
        }
    }
}
