use std::io::{BufRead, Write};

use serde::{Deserialize, Serialize};

use super::metrics::EpisodeResult;
use super::motion::{apply_action, AgentPose};
use super::render::{frame_bbox, render_frame, Frame};
use super::task::{judge_done, target_distance, SampledTask, TaskSpec};
use crate::error::{Error, Result};
use crate::policy::{Action, GoalMode, GoalSpec, Observation};

/// Result of a single environment step.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct StepOutcome {
    pub action: Action,
    pub collided: bool,
    /// Episode over (Done issued or step budget exhausted).
    pub done: bool,
    pub success: bool,
    /// Straight-line distance to the nearest target after the step.
    pub distance: f64,
}

/// One object-goal episode in progress.
#[derive(Clone, Debug)]
pub struct NavEnv {
    task: TaskSpec,
    shortest_path: f64,
    expert_steps: Option<usize>,
    pose: AgentPose,
    steps: usize,
    path_length: f64,
    finished: Option<bool>,
}

impl NavEnv {
    pub fn new(sampled: SampledTask) -> Self {
        let pose = sampled.task.start;
        Self {
            task: sampled.task,
            shortest_path: sampled.shortest_path,
            expert_steps: sampled.expert_steps,
            pose,
            steps: 0,
            path_length: 0.0,
            finished: None,
        }
    }

    /// Rebuilds an unfinished episode at a saved point.
    pub fn resume(sampled: SampledTask, pose: AgentPose, steps: usize, path_length: f64) -> Self {
        let mut env = Self::new(sampled);
        env.pose = pose;
        env.steps = steps;
        env.path_length = path_length;
        env
    }

    pub fn sampled(&self) -> SampledTask {
        SampledTask { task: self.task.clone(), shortest_path: self.shortest_path, expert_steps: self.expert_steps }
    }

    pub fn path_length(&self) -> f64 {
        self.path_length
    }

    pub fn task(&self) -> &TaskSpec {
        &self.task
    }

    pub fn pose(&self) -> &AgentPose {
        &self.pose
    }

    pub fn steps(&self) -> usize {
        self.steps
    }

    pub fn is_done(&self) -> bool {
        self.finished.is_some()
    }

    pub fn distance(&self) -> f64 {
        target_distance(&self.pose, &self.task)
    }

    pub fn render(&self) -> Frame {
        render_frame(&self.pose, &self.task.house, &self.task.camera)
    }

    /// Current observation and goal for a goal mode.
    pub fn observe(&self, mode: GoalMode) -> (Observation, GoalSpec) {
        let frame = self.render();
        let target = self.task.target_class;
        let goal = match mode {
            GoalMode::Category => GoalSpec::Category(target),
            GoalMode::BBox => GoalSpec::BBox(frame_bbox(&frame, &self.pose, &self.task.house, target)),
            GoalMode::Both => {
                GoalSpec::CategoryAndBBox(target, frame_bbox(&frame, &self.pose, &self.task.house, target))
            }
        };
        (frame.observation, goal)
    }

    /// Applies the embodiment's `action_index`-th action.
    pub fn step(&mut self, action_index: usize) -> Result<StepOutcome> {
        if self.finished.is_some() {
            return Err(Error::Argument("episode already finished".into()));
        }
        let actions = self.task.embodiment.actions();
        let action = *actions.get(action_index).ok_or_else(|| {
            Error::Argument(format!("action index {action_index} out of range for {} actions", actions.len()))
        })?;
        let (next, collided) = apply_action(&self.pose, action, &self.task.house);
        self.path_length += (next.x - self.pose.x).hypot(next.y - self.pose.y);
        self.pose = next;
        self.steps += 1;
        let mut success = false;
        if action == Action::Done {
            success = judge_done(&self.pose, &self.task);
            self.finished = Some(success);
        } else if self.steps >= self.task.max_steps {
            self.finished = Some(false);
        }
        Ok(StepOutcome { action, collided, done: self.finished.is_some(), success, distance: self.distance() })
    }

    /// Final statistics once the episode is over.
    pub fn result(&self) -> Option<EpisodeResult> {
        self.finished.map(|success| EpisodeResult {
            success,
            path_length: self.path_length,
            steps: self.steps,
            shortest_path: self.shortest_path,
            expert_steps: self.expert_steps,
        })
    }
}

/// One line of an episode trace.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TraceRecord {
    pub step: usize,
    pub pose: AgentPose,
    pub action: String,
    pub reward: f64,
    pub collided: bool,
}

pub fn write_trace<W: Write>(out: &mut W, records: &[TraceRecord]) -> Result<()> {
    for r in records {
        let line = serde_json::to_string(r).map_err(|e| Error::Internal(e.to_string()))?;
        writeln!(out, "{line}").map_err(|e| Error::io("<trace>", e))?;
    }
    Ok(())
}

pub fn read_trace<R: BufRead>(input: R) -> Result<Vec<TraceRecord>> {
    let mut out = Vec::new();
    for (n, line) in input.lines().enumerate() {
        let line = line.map_err(|e| Error::io("<trace>", e))?;
        if line.trim().is_empty() {
            continue;
        }
        let rec = serde_json::from_str(&line).map_err(|e| Error::format("trace", format!("line {}: {e}", n + 1)))?;
        out.push(rec);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use std::sync::Arc;

    use super::*;
    use crate::policy::Embodiment;
    use crate::sim::house::{House, ObjectInstance};

    fn env() -> NavEnv {
        let obj = ObjectInstance { class_id: 0, x: 1.0, y: 3.0, radius: 0.15, height: 0.8 };
        let house = Arc::new(House::open_room(2.0, 4.0, vec![obj], 5));
        let task = TaskSpec::new(house, AgentPose::new(1.0, 1.0, 0.0, 0.18), 0, Embodiment::LoCoBot);
        NavEnv::new(SampledTask { task, shortest_path: 1.0, expert_steps: Some(6) })
    }

    #[test]
    fn walk_and_stop() {
        let mut e = env();
        for _ in 0..5 {
            assert!(!e.step(0).unwrap().done);
        }
        let out = e.step(5).unwrap();
        assert!(out.done && out.success);
        let r = e.result().unwrap();
        assert_eq!(r.steps, 6);
        assert!((r.path_length - 1.0).abs() < 1e-9);
        assert!(e.step(0).is_err());
    }

    #[test]
    fn timeout_fails() {
        let mut e = env();
        for _ in 0..e.task().max_steps {
            e.step(1).unwrap();
        }
        assert_eq!(e.result().map(|r| r.success), Some(false));
    }

    #[test]
    fn trace_roundtrip() {
        let rec = TraceRecord {
            step: 0,
            pose: AgentPose::new(1.0, 2.0, 30.0, 0.18),
            action: "MoveAhead".into(),
            reward: -0.01,
            collided: false,
        };
        let mut buf = Vec::new();
        write_trace(&mut buf, &[rec.clone(), rec.clone()]).unwrap();
        assert_eq!(read_trace(&buf[..]).unwrap(), vec![rec.clone(), rec]);
    }
}
