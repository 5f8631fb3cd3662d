use std::sync::Arc;

use rand::seq::SliceRandom;
use rand::Rng;

use super::house::House;
use super::motion::AgentPose;
use super::planner::{expert_steps, DistanceField};
use super::render::{instance_visible, CameraConfig};
use crate::error::{Error, Result};
use crate::policy::Embodiment;

/// Slack on the success distance so that accumulated step arithmetic
/// (five 0.2 m moves landing at 0.999...9 m) is not judged a miss.
const DISTANCE_SLACK: f64 = 1e-9;

/// One object-goal episode.
#[derive(Clone, Debug)]
pub struct TaskSpec {
    pub house: Arc<House>,
    pub start: AgentPose,
    pub target_class: usize,
    pub max_steps: usize,
    pub success_distance: f64,
    pub embodiment: Embodiment,
    pub camera: CameraConfig,
    /// Pixels of the target that must be on screen to count as seen.
    pub min_visible_pixels: usize,
}

impl TaskSpec {
    /// Task with the embodiment's step budget and success radius.
    pub fn new(house: Arc<House>, start: AgentPose, target_class: usize, embodiment: Embodiment) -> Self {
        Self {
            house,
            start,
            target_class,
            max_steps: embodiment.max_steps(),
            success_distance: embodiment.success_distance(),
            embodiment,
            camera: CameraConfig::default(),
            min_visible_pixels: 1,
        }
    }
}

/// Straight-line distance from the agent to the nearest target instance.
pub fn target_distance(pose: &AgentPose, task: &TaskSpec) -> f64 {
    task.house
        .objects
        .iter()
        .filter(|o| o.class_id == task.target_class)
        .map(|o| (o.x - pose.x).hypot(o.y - pose.y))
        .fold(f64::INFINITY, f64::min)
}

/// Success test for a `Done` issued at `pose`: some target instance lies
/// within the success distance and is visible in the current view.
pub fn judge_done(pose: &AgentPose, task: &TaskSpec) -> bool {
    let house = &task.house;
    house.objects.iter().enumerate().any(|(k, o)| {
        o.class_id == task.target_class
            && (o.x - pose.x).hypot(o.y - pose.y) <= task.success_distance + DISTANCE_SLACK
            && instance_visible(pose, house, k, &task.camera, task.min_visible_pixels)
    })
}

/// A sampled task with its reference path length and expert step count.
#[derive(Clone, Debug)]
pub struct SampledTask {
    pub task: TaskSpec,
    pub shortest_path: f64,
    pub expert_steps: Option<usize>,
}

/// Draws solvable tasks from a house.
#[derive(Clone, Debug)]
pub struct TaskSampler {
    pub embodiment: Embodiment,
    pub camera: CameraConfig,
    /// Run the expert planner and reject tasks it cannot finish within the
    /// step budget. Costly; used for evaluation pools.
    pub verify_expert: bool,
    pub max_attempts: usize,
    /// Step budget given to sampled tasks.
    pub max_steps: usize,
}

impl TaskSampler {
    pub fn new(embodiment: Embodiment) -> Self {
        Self { embodiment, camera: CameraConfig::default(), verify_expert: false, max_attempts: 200, max_steps: embodiment.max_steps() }
    }

    pub fn verified(mut self) -> Self {
        self.verify_expert = true;
        self
    }

    /// Samples a target class present in the house and a start pose from
    /// which it is reachable and not already satisfied.
    pub fn sample<R: Rng>(&self, house: Arc<House>, rng: &mut R) -> Result<SampledTask> {
        let classes = house.classes_present();
        let free: Vec<usize> = (0..house.traversable().cells.len()).filter(|&c| house.traversable().cells[c]).collect();
        if classes.is_empty() || free.is_empty() {
            return Err(Error::Argument("house has no objects or no free space".into()));
        }
        for _ in 0..self.max_attempts {
            let target = *classes.choose(rng).expect("nonempty");
            if let Some(t) = self.try_sample(&house, target, &free, rng)? {
                return Ok(t);
            }
        }
        Err(Error::Generation { seed: house.seed, attempts: self.max_attempts })
    }

    fn try_sample<R: Rng>(&self, house: &Arc<House>, target: usize, free: &[usize], rng: &mut R) -> Result<Option<SampledTask>> {
        let g = house.traversable();
        let cell = *free.choose(rng).expect("nonempty");
        let (x, y) = g.center(cell / g.cols, cell % g.cols);
        let yaw = 30.0 * rng.gen_range(0..12) as f64;
        let mut task = TaskSpec::new(house.clone(), AgentPose::new(x, y, yaw, house.agent_radius), target, self.embodiment);
        task.camera = self.camera.clone();
        task.max_steps = self.max_steps;
        if judge_done(&task.start, &task) {
            return Ok(None);
        }
        let l = DistanceField::for_task(&task).at(x, y);
        if !l.is_finite() {
            return Ok(None);
        }
        let w = if self.verify_expert {
            match expert_steps(&task) {
                Some(w) if w < task.max_steps => Some(w),
                _ => return Ok(None),
            }
        } else {
            None
        };
        Ok(Some(SampledTask { task, shortest_path: l, expert_steps: w }))
    }
}

#[cfg(test)]
mod tests {
    use rand::SeedableRng;

    use super::*;
    use crate::sim::geometry::Rect;
    use crate::sim::house::{House, ObjectInstance};

    fn task_with_object(agent: (f64, f64), embodiment: Embodiment, walls: Vec<Rect>) -> TaskSpec {
        let obj = ObjectInstance { class_id: 2, x: 2.0, y: 3.0, radius: 0.2, height: 0.8 };
        let mut all = crate::sim::house::outer_walls(4.0, 5.0, 0.1);
        all.extend(walls);
        let house = House::from_parts(0, 4.0, 5.0, all, vec![], vec![obj], 5, 0.18, 0.05);
        TaskSpec::new(Arc::new(house), AgentPose::new(agent.0, agent.1, 0.0, 0.18), 2, embodiment)
    }

    #[test]
    fn close_and_visible_succeeds() {
        let t = task_with_object((2.0, 2.5), Embodiment::LoCoBot, vec![]);
        assert!(judge_done(&t.start, &t));
    }

    #[test]
    fn occluded_fails() {
        let t = task_with_object((2.0, 2.5), Embodiment::LoCoBot, vec![Rect::new(1.0, 2.7, 3.0, 2.75)]);
        assert!(!judge_done(&t.start, &t));
    }

    #[test]
    fn stretch_reach_is_two_meters() {
        let t = task_with_object((2.0, 1.5), Embodiment::Stretch, vec![]);
        assert!(judge_done(&t.start, &t));
        let t = task_with_object((2.0, 1.5), Embodiment::LoCoBot, vec![]);
        assert!(!judge_done(&t.start, &t));
    }

    #[test]
    fn facing_away_fails() {
        let mut t = task_with_object((2.0, 2.5), Embodiment::LoCoBot, vec![]);
        t.start.yaw = 180.0;
        assert!(!judge_done(&t.start, &t));
    }

    #[test]
    fn sampled_tasks_are_solvable() {
        let house = Arc::new(crate::sim::house::generate_house(21, (2, 3)).unwrap());
        let sampler = TaskSampler::new(Embodiment::LoCoBot).verified();
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(4);
        for _ in 0..3 {
            let s = sampler.sample(house.clone(), &mut rng).unwrap();
            assert!(s.shortest_path.is_finite());
            assert!(s.expert_steps.unwrap() < s.task.max_steps);
            assert!(!judge_done(&s.task.start, &s.task));
        }
    }
}
